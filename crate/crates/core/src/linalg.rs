//! Small complex linear-algebra helpers.

use nalgebra::Cholesky;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::{CMat, Complex64};

/// Cholesky factor of a Hermitian positive-definite matrix, symmetrized first.
pub fn hermitian_cholesky(h: CMat, what: &str) -> Result<Cholesky<Complex64, nalgebra::Dyn>> {
    let sym = (&h + h.adjoint()) * Complex64::new(0.5, 0.0);
    Cholesky::new(sym).ok_or_else(|| Error::Numerical(format!("{what} is not positive definite")))
}

/// Sum of entry moduli.
pub fn l1_norm(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm()).sum()
}

/// Complex soft-thresholding: `z·max(0, 1 − α/|z|)`, zero at `z = 0`.
#[inline]
pub fn soft_threshold(z: Complex64, alpha: f64) -> Complex64 {
    let mag = z.norm();
    if mag <= alpha || mag == 0.0 {
        Complex64::new(0.0, 0.0)
    } else {
        z * (1.0 - alpha / mag)
    }
}

/// Matrix of i.i.d. circular complex Gaussians with `E|a|² = std²`.
pub fn complex_gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> CMat {
    let s = std / std::f64::consts::SQRT_2;
    let mut m = CMat::zeros(rows, cols);
    for v in m.iter_mut() {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        *v = Complex64::new(s * re, s * im);
    }
    m
}

pub fn is_finite(m: &CMat) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Block-diagonal dense matrix from square or rectangular blocks.
pub fn block_diag(blocks: &[CMat]) -> CMat {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = CMat::zeros(rows, cols);
    let (mut r0, mut c0) = (0, 0);
    for b in blocks {
        out.view_mut((r0, c0), b.shape()).copy_from(b);
        r0 += b.nrows();
        c0 += b.ncols();
    }
    out
}

/// Vertical stack of equally wide matrices.
pub fn vstack(blocks: &[CMat]) -> CMat {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = CMat::zeros(rows, cols);
    let mut r0 = 0;
    for b in blocks {
        out.view_mut((r0, 0), b.shape()).copy_from(b);
        r0 += b.nrows();
    }
    out
}
