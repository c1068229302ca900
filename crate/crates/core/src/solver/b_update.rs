//! Sparse affine-constrained coefficient update.
//!
//! For every frame `t` the coefficients `b = (B_1[:,t], …, B_M[:,t])` solve
//!
//! ```text
//! min ½‖x̂_t − G b‖² + λ1‖b‖_1 + (τ_B/2)‖b − b̂_t‖²   s.t.  Σ_i b_{m,i} = 1  ∀m
//! ```
//!
//! with `G = 𝒜_1⋯𝒜_Q𝒦`. The problem is split as `b = w`: the quadratic with the
//! affine constraint goes to `b` (a KKT solve sharing one factorization of
//! `GᴴG + (τ_B + ρ)I` across frames and iterations), the ℓ1 term goes to `w`
//! (soft thresholding), and a scaled dual `u` ties them together. The `b`
//! step is over-relaxed.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{hermitian_cholesky, soft_threshold};
use crate::manifold::KernelDictionary;
use crate::model::{dictionary_matrix, FactorState, Hyperparams};
use crate::{CMat, Complex64};

type CVec = DVector<Complex64>;

#[derive(Debug, Clone, PartialEq)]
pub struct BUpdate {
    pub blocks: Vec<CMat>,
    /// Largest inner-iteration count over frames.
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// False when some frame hit the iteration cap with a residual above 10× the tolerance.
    pub converged: bool,
}

impl BUpdate {
    pub fn warning(&self) -> Option<String> {
        (!self.converged).then(|| {
            format!(
                "B update stopped at the {}-iteration cap (primal {:.2e}, dual {:.2e})",
                self.iterations, self.primal_residual, self.dual_residual
            )
        })
    }
}

struct ColumnResult {
    b: CVec,
    iterations: usize,
    primal: f64,
    dual: f64,
}

/// Factorizations shared by every frame.
struct KktSystem {
    /// `(GᴴG + (τ_B + ρ)I)⁻¹`.
    h_inv: CMat,
    /// `H⁻¹Eᴴ(EH⁻¹Eᴴ)⁻¹`, maps the block-sum defect to the correction.
    correction: CMat,
    m: usize,
    n_l: usize,
}

impl KktSystem {
    fn new(gram: &CMat, diag: f64, m: usize, n_l: usize) -> Result<Self> {
        let n = gram.nrows();
        let h = gram + CMat::identity(n, n) * Complex64::new(diag, 0.0);
        let chol = hermitian_cholesky(h, "B normal matrix")?;
        let h_inv = chol.inverse();
        // Eᴴ: one indicator column per block
        let e_adj = CMat::from_fn(n, m, |i, j| {
            if i / n_l == j {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        let h_inv_e = &h_inv * &e_adj;
        let schur = e_adj.adjoint() * &h_inv_e;
        let schur_chol = hermitian_cholesky(schur, "B constraint Schur complement")?;
        let correction = schur_chol.solve(&h_inv_e.adjoint()).adjoint();
        Ok(KktSystem { h_inv, correction, m, n_l })
    }

    /// Minimizer of `½bᴴHb − Re(rᴴb)` subject to the block sums.
    fn solve(&self, r: &CVec) -> CVec {
        let v = &self.h_inv * r;
        let defect = block_sums(&v, self.m, self.n_l).add_scalar(Complex64::new(-1.0, 0.0));
        v - &self.correction * defect
    }
}

fn block_sums(v: &CVec, m: usize, n_l: usize) -> CVec {
    CVec::from_fn(m, |j, _| v.rows(j * n_l, n_l).sum())
}

/// Restores the block sums exactly, moving only the nonzero entries so exact zeros stay zero.
fn project_on_support(v: &mut CVec, m: usize, n_l: usize) {
    for j in 0..m {
        let mut block = v.rows_mut(j * n_l, n_l);
        let defect = Complex64::new(1.0, 0.0) - block.sum();
        let support: Vec<usize> = (0..n_l).filter(|&i| block[i].norm() > 0.0).collect();
        if support.is_empty() {
            let shift = defect / n_l as f64;
            block.iter_mut().for_each(|x| *x += shift);
        } else {
            let shift = defect / support.len() as f64;
            for i in support {
                block[i] += shift;
            }
        }
    }
}

const RELAXATION: f64 = 1.6;

#[allow(clippy::too_many_arguments)]
fn solve_column(
    sys: &KktSystem,
    linear: &CVec,
    start: CVec,
    rho: f64,
    scale: f64,
    threshold: f64,
    tol: f64,
    max_iter: usize,
) -> ColumnResult {
    // residuals are measured in the rescaled problem
    let rho_unit = rho / scale;
    let mut w = start;
    let mut u = CVec::zeros(w.len());
    let mut b = w.clone();
    let (mut primal, mut dual) = (f64::INFINITY, f64::INFINITY);
    let mut iterations = 0;
    let rho_c = Complex64::new(rho, 0.0);
    for k in 1..=max_iter {
        iterations = k;
        let r = linear + (&w - &u) * rho_c;
        b = sys.solve(&r);
        let relaxed = &b * Complex64::new(RELAXATION, 0.0) + &w * Complex64::new(1.0 - RELAXATION, 0.0);
        let w_prev = std::mem::replace(&mut w, (&relaxed + &u).map(|z| soft_threshold(z, threshold)));
        u += &relaxed - &w;
        primal = (&b - &w).norm();
        dual = rho_unit * (&w - &w_prev).norm();
        let scale_p = 1.0f64.max(b.norm()).max(w.norm());
        let scale_d = 1.0f64.max(rho_unit * u.norm());
        if primal <= tol * scale_p && dual <= tol * scale_d {
            break;
        }
    }
    let mut out = if threshold > 0.0 { w } else { b };
    project_on_support(&mut out, sys.m, sys.n_l);
    ColumnResult {
        b: out,
        iterations,
        primal,
        dual,
    }
}

/// Mean eigenvalue `s` of `GᴴG`. Residuals are measured on the problem divided
/// by `s`, so the tolerance does not depend on how large the factors have grown.
pub fn gram_scale(gram: &CMat) -> f64 {
    let n = gram.nrows().max(1) as f64;
    let s = gram.diagonal().iter().map(|v| v.re).sum::<f64>() / n;
    if s > 0.0 && s.is_finite() {
        s
    } else {
        1.0
    }
}

/// Splitting penalty `ρ = √(λ_min·λ_max)` of `GᴴG + τ_B I`, the usual balance
/// point for ADMM on a quadratic plus ℓ1. `λ_min` is floored at `1e-4·λ_max`
/// so a rank-deficient `G` with `τ_B = 0` still gets a definite KKT matrix.
pub fn admm_penalty(gram: &CMat, tau_b: f64) -> f64 {
    let eig = gram.clone().symmetric_eigenvalues();
    let hi = eig.iter().copied().fold(0.0, f64::max) + tau_b;
    let lo = (eig.iter().copied().fold(f64::INFINITY, f64::min).max(0.0) + tau_b).max(1e-4 * hi);
    let rho = (lo * hi).sqrt();
    if rho > 0.0 && rho.is_finite() {
        rho
    } else {
        1.0
    }
}

/// Solves the coefficient sub-problem for every frame.
pub fn update_b(state: &FactorState, kernels: &KernelDictionary, hp: &Hyperparams) -> Result<BUpdate> {
    let g = dictionary_matrix(state, kernels);
    update_b_with_dictionary(&g, state, hp)
}

/// Same as [`update_b`] with an explicit `G` (`n_k × M·n_l`).
pub fn update_b_with_dictionary(g: &CMat, state: &FactorState, hp: &Hyperparams) -> Result<BUpdate> {
    let m = state.m();
    let n_l = state.b[0].nrows();
    let n_fr = state.x.ncols();
    if g.ncols() != m * n_l || g.nrows() != state.x.nrows() {
        return Err(Error::shape("dictionary matrix does not match the state"));
    }
    if hp.tau_b < 0.0 || hp.lambda1 < 0.0 {
        return Err(Error::param("τ_B and λ1 must be nonnegative"));
    }
    let gram = g.adjoint() * g;
    let scale = gram_scale(&gram);
    let rho = admm_penalty(&gram, hp.tau_b);
    let sys = KktSystem::new(&gram, hp.tau_b + rho, m, n_l)?;
    let gx = g.adjoint() * &state.x;
    let threshold = hp.lambda1 / rho;

    let columns: Vec<ColumnResult> = (0..n_fr)
        .into_par_iter()
        .map(|t| {
            let prev = CVec::from_iterator(m * n_l, state.b.iter().flat_map(|bm| bm.column(t).iter().copied().collect::<Vec<_>>()));
            let linear = gx.column(t) + &prev * Complex64::new(hp.tau_b, 0.0);
            solve_column(&sys, &linear, prev, rho, scale, threshold, hp.b_tol, hp.b_max_iter)
        })
        .collect();

    let mut blocks = vec![CMat::zeros(n_l, n_fr); m];
    for (t, col) in columns.iter().enumerate() {
        for (j, block) in blocks.iter_mut().enumerate() {
            block.column_mut(t).copy_from(&col.b.rows(j * n_l, n_l));
        }
    }
    let iterations = columns.iter().map(|c| c.iterations).max().unwrap_or(0);
    let primal = columns.iter().map(|c| c.primal).fold(0.0, f64::max);
    let dual = columns.iter().map(|c| c.dual).fold(0.0, f64::max);
    let converged = columns.iter().all(|c| {
        c.iterations < hp.b_max_iter || (c.primal <= 10.0 * hp.b_tol * c.b.norm().max(1.0) && c.dual <= 10.0 * hp.b_tol * c.b.norm().max(1.0))
    });
    Ok(BUpdate {
        blocks,
        iterations,
        primal_residual: primal,
        dual_residual: dual,
        converged,
    })
}

/// Per-frame sub-problem value, used to compare against reference solvers.
pub fn column_objective(g: &CMat, x: &CVec, b: &CVec, b_prev: &CVec, lambda1: f64, tau_b: f64) -> f64 {
    0.5 * (x - g * b).norm_squared()
        + lambda1 * b.iter().map(|z| z.norm()).sum::<f64>()
        + 0.5 * tau_b * (b - b_prev).norm_squared()
}
