//! Landmark selection on navigator data and the kernel dictionary.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sampling::{apply_sampling, SamplingMask};
use crate::tensor::{extract_navigator, ComplexTensor3};
use crate::{CMat, Complex64};

/// Landmark navigator vectors, one per column, with their source frame indices.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    pub matrix: CMat,
    pub indices: Vec<usize>,
}

impl LandmarkSet {
    pub fn n_l(&self) -> usize {
        self.indices.len()
    }
}

fn sq_dist(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum()
}

/// Index of the first maximum; NaN-free inputs assumed.
fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Greedy min-max (farthest-point) selection of `n_l` columns.
///
/// Seeds with the column farthest from the column mean; every later pick
/// maximizes the distance to the nearest already-selected column. Ties go to
/// the lowest index.
pub fn select_landmarks(navigators: &CMat, n_l: usize) -> Result<LandmarkSet> {
    let n = navigators.ncols();
    if n_l == 0 || n_l > n {
        return Err(Error::param(format!(
            "landmark count {n_l} outside 1..={n}"
        )));
    }
    let cols: Vec<&[Complex64]> = (0..n)
        .map(|j| {
            let start = j * navigators.nrows();
            &navigators.as_slice()[start..start + navigators.nrows()]
        })
        .collect();

    let mean: Vec<Complex64> = navigators
        .column_mean()
        .iter()
        .copied()
        .collect();
    let from_mean: Vec<f64> = cols.par_iter().map(|c| sq_dist(c, &mean)).collect();
    let first = argmax_first(&from_mean);

    let mut indices = vec![first];
    let mut nearest: Vec<f64> = cols.par_iter().map(|c| sq_dist(c, cols[first])).collect();
    let mut taken = vec![false; n];
    taken[first] = true;
    while indices.len() < n_l {
        // already-selected columns are excluded so duplicates still yield distinct indices
        let masked: Vec<f64> = nearest
            .iter()
            .zip(&taken)
            .map(|(&d, &t)| if t { -1.0 } else { d })
            .collect();
        let next = argmax_first(&masked);
        taken[next] = true;
        indices.push(next);
        let update: Vec<f64> = cols.par_iter().map(|c| sq_dist(c, cols[next])).collect();
        for (d, u) in nearest.iter_mut().zip(update) {
            *d = d.min(u);
        }
    }

    let mut matrix = CMat::zeros(navigators.nrows(), n_l);
    for (k, &j) in indices.iter().enumerate() {
        matrix.set_column(k, &navigators.column(j));
    }
    Ok(LandmarkSet { matrix, indices })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSpec {
    /// `exp(−‖x − y‖² / sigma2)`.
    Gaussian { sigma2: f64 },
    /// `(scale·xᴴy + offset)^degree`.
    Polynomial { degree: u32, offset: f64, scale: f64 },
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            KernelSpec::Gaussian { sigma2 } => sigma2 > 0.0 && sigma2.is_finite(),
            KernelSpec::Polynomial { degree, offset, scale } => {
                degree >= 1 && offset > 0.0 && scale > 0.0 && offset.is_finite() && scale.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::param(format!("kernel parameters must be positive: {self:?}")))
        }
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self, KernelSpec::Gaussian { .. })
    }

    fn eval(&self, x: &[Complex64], y: &[Complex64]) -> Complex64 {
        match *self {
            KernelSpec::Gaussian { sigma2 } => Complex64::new((-sq_dist(x, y) / sigma2).exp(), 0.0),
            KernelSpec::Polynomial { degree, offset, scale } => {
                let inner: Complex64 = x.iter().zip(y).map(|(a, b)| a.conj() * b).sum();
                (inner * scale + offset).powu(degree)
            }
        }
    }
}

impl std::fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            KernelSpec::Gaussian { sigma2 } => write!(f, "gaussian(sigma2={sigma2:.6e})"),
            KernelSpec::Polynomial { degree, offset, scale } => {
                write!(f, "polynomial(degree={degree}, offset={offset}, scale={scale:.6e})")
            }
        }
    }
}

pub fn kernel_value(spec: &KernelSpec, x: &[Complex64], y: &[Complex64]) -> Result<Complex64> {
    if x.len() != y.len() {
        return Err(Error::shape(format!(
            "kernel arguments of length {} and {}",
            x.len(),
            y.len()
        )));
    }
    Ok(spec.eval(x, y))
}

/// Kernel specifications with their landmark Gram matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelDictionary {
    pub specs: Vec<KernelSpec>,
    pub grams: Vec<CMat>,
}

impl KernelDictionary {
    pub fn m(&self) -> usize {
        self.grams.len()
    }

    pub fn n_l(&self) -> usize {
        self.grams.first().map_or(0, |g| g.nrows())
    }
    /// Dictionary from explicit Gram matrices; `specs` is left empty.
    /// Dictionary from explicit Gram matrices (no spec bookkeeping), used by tests and tools.
    pub fn from_grams(grams: Vec<CMat>) -> Result<Self> {
        let n = grams.first().map_or(0, |g| g.nrows());
        if grams.is_empty() || grams.iter().any(|g| g.nrows() != n || g.ncols() != n) {
            return Err(Error::shape("Gram matrices must be nonempty, square and equally sized"));
        }
        Ok(KernelDictionary {
            specs: Vec::new(),
            grams,
        })
    }
}

/// Smallest eigenvalue of a Hermitian matrix via its real symmetric embedding.
pub fn min_hermitian_eigenvalue(h: &CMat) -> f64 {
    let n = h.nrows();
    // [[Re, −Im], [Im, Re]] has the spectrum of H, each eigenvalue doubled
    let emb = DMatrix::<f64>::from_fn(2 * n, 2 * n, |i, j| {
        let z = h[(i % n, j % n)];
        match (i < n, j < n) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    });
    SymmetricEigen::new(emb).eigenvalues.min()
}

pub fn build_dictionary(landmarks: &LandmarkSet, specs: &[KernelSpec]) -> Result<KernelDictionary> {
    if specs.is_empty() {
        return Err(Error::param("kernel dictionary needs at least one kernel"));
    }
    for s in specs {
        s.validate()?;
    }
    let n_l = landmarks.n_l();
    let nu = landmarks.matrix.nrows();
    let cols: Vec<&[Complex64]> = (0..n_l)
        .map(|k| &landmarks.matrix.as_slice()[k * nu..(k + 1) * nu])
        .collect();

    let grams: Vec<CMat> = specs
        .par_iter()
        .map(|spec| {
            let g = CMat::from_fn(n_l, n_l, |i, j| spec.eval(cols[i], cols[j]));
            (&g + g.adjoint()) * Complex64::new(0.5, 0.0)
        })
        .collect();

    for (spec, g) in specs.iter().zip(&grams) {
        if spec.is_gaussian() {
            let lmin = min_hermitian_eigenvalue(g);
            if lmin < -1e-8 {
                return Err(Error::Numerical(format!(
                    "Gaussian Gram for {spec} has eigenvalue {lmin:.3e}"
                )));
            }
        }
    }
    Ok(KernelDictionary {
        specs: specs.to_vec(),
        grams,
    })
}

/// Median pairwise landmark distance; 1 when undefined or zero.
pub fn median_distance(landmarks: &LandmarkSet) -> f64 {
    let n = landmarks.n_l();
    let nu = landmarks.matrix.nrows();
    let col = |k: usize| &landmarks.matrix.as_slice()[k * nu..(k + 1) * nu];
    let mut d: Vec<f64> = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            d.push(sq_dist(col(i), col(j)).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(|a, b| a.total_cmp(b));
    let mid = d.len() / 2;
    let med = if d.len() % 2 == 1 {
        d[mid]
    } else {
        0.5 * (d[mid - 1] + d[mid])
    };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

/// Stand-in kernel dictionaries for `m ∈ {1, 3, 7}` built around the median
/// landmark distance σ₀.
pub fn default_specs(landmarks: &LandmarkSet, m: usize) -> Result<Vec<KernelSpec>> {
    let s0 = median_distance(landmarks);
    let s2 = s0 * s0;
    let gauss = |f: f64| KernelSpec::Gaussian { sigma2: f * s2 };
    match m {
        1 => Ok(vec![gauss(1.0)]),
        3 => Ok(vec![gauss(0.5), gauss(1.0), gauss(2.0)]),
        7 => {
            let mut v: Vec<KernelSpec> = [0.25, 0.5, 1.0, 2.0, 4.0].into_iter().map(gauss).collect();
            for degree in [1, 2] {
                v.push(KernelSpec::Polynomial {
                    degree,
                    offset: 1.0,
                    scale: 1.0 / s2,
                });
            }
            Ok(v)
        }
        _ => Err(Error::param(format!(
            "no default kernel dictionary with {m} kernels (supported: 1, 3, 7)"
        ))),
    }
}

/// Landmarks from the navigator band of the measured data and the default dictionary on them.
pub fn dictionary_from_data(
    y: &ComplexTensor3,
    mask: &SamplingMask,
    upsilon: usize,
    n_l: usize,
    m: usize,
) -> Result<(LandmarkSet, KernelDictionary)> {
    mask.validate(upsilon)?;
    let nav = extract_navigator(&apply_sampling(mask, y)?, upsilon)?;
    let landmarks = select_landmarks(&nav, n_l)?;
    let specs = default_specs(&landmarks, m)?;
    let dict = build_dictionary(&landmarks, &specs)?;
    Ok((landmarks, dict))
}

/// Real column vector helper for scalar test data.
pub fn real_columns(values: &[f64]) -> CMat {
    CMat::from_iterator(1, values.len(), values.iter().map(|&v| Complex64::new(v, 0.0)))
}
