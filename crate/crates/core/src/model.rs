//! The multi-linear factorization: configuration, optimization state, forward
//! model, loss, and parameter accounting.
//!
//! The model approximates the image-domain data matrix `X` (`n_k × n_fr`) by
//!
//! ```text
//! Σ_m  A_{1,m} A_{2,m} ⋯ A_{Q,m} K_m B_m
//! ```
//!
//! `A_1` is kept dense as the horizontal stack `[A_{1,1} … A_{1,M}]`
//! (`n_k × d_1·M`). Deeper factors are block diagonal and stored as their `M`
//! blocks only. `B` is the vertical stack of the `M` affine-constrained
//! coefficient blocks (`n_l × n_fr` each, every column sums to one).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{block_diag, complex_gaussian, l1_norm, vstack};
use crate::manifold::KernelDictionary;
use crate::sampling::{apply_sampling, SamplingMask};
use crate::tensor::{ComplexTensor3, DataDims, Direction, FourierOps};
use crate::{CMat, Complex64};

/// Column sums of `B_m` must equal one to within this.
pub const AFFINE_TOL: f64 = 1e-8;
/// Sampled k-space entries of `X` must match the data to within this (scaled by `1 + max|y|`).
pub const CONSISTENCY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    /// Number of kernels `M`.
    pub m: usize,
    /// Depth `Q`.
    pub q: usize,
    /// `(d_1, …, d_{Q−1})`.
    pub inner_dims: Vec<usize>,
    pub n_l: usize,
    pub dims: DataDims,
}

impl ModelConfig {
    pub fn new(m: usize, q: usize, inner_dims: Vec<usize>, n_l: usize, dims: DataDims) -> Result<Self> {
        let cfg = ModelConfig { m, q, inner_dims, n_l, dims };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.q == 0 || self.n_l == 0 {
            return Err(Error::param("M, Q and n_l must be positive"));
        }
        if self.inner_dims.len() + 1 != self.q {
            return Err(Error::param(format!(
                "Q = {} needs {} inner dimensions, got {}",
                self.q,
                self.q - 1,
                self.inner_dims.len()
            )));
        }
        if self.inner_dims.contains(&0) {
            return Err(Error::param("inner dimensions must be positive"));
        }
        if self.n_l > self.dims.n_fr {
            return Err(Error::param(format!(
                "n_l = {} exceeds the frame count {}",
                self.n_l, self.dims.n_fr
            )));
        }
        Ok(())
    }

    /// `(d_0, d_1, …, d_Q)` with `d_0 = n_k`, `d_Q = n_l`.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut d = Vec::with_capacity(self.q + 1);
        d.push(self.dims.n_k());
        d.extend_from_slice(&self.inner_dims);
        d.push(self.n_l);
        d
    }

    pub fn d1(&self) -> usize {
        self.layer_dims()[1]
    }
}

/// Optimization variables `(X, Z, A_1, …, A_Q, B)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorState {
    /// Image-domain estimate, `n_k × n_fr`.
    pub x: CMat,
    /// Temporal-spectrum auxiliary, `n_k × n_fr`.
    pub z: CMat,
    /// Dense `n_k × d_1·M` horizontal stack.
    pub a1: CMat,
    /// `inner[q − 2][m]` is block `m` of `A_q` (`d_{q−1} × d_q`), `q = 2..=Q`.
    pub inner: Vec<Vec<CMat>>,
    /// `M` blocks of `n_l × n_fr`.
    pub b: Vec<CMat>,
}

impl FactorState {
    pub fn m(&self) -> usize {
        self.b.len()
    }

    pub fn q(&self) -> usize {
        self.inner.len() + 1
    }

    pub fn d1(&self) -> usize {
        self.a1.ncols() / self.m()
    }

    /// Columns of `A_1` belonging to kernel `m`.
    pub fn a1_block(&self, m: usize) -> CMat {
        let d1 = self.d1();
        self.a1.columns(m * d1, d1).into_owned()
    }

    /// Number of scalar unknowns stored in the factors `A_q` and `B`.
    pub fn stored_unknowns(&self) -> usize {
        self.a1.len()
            + self.inner.iter().flatten().map(|b| b.len()).sum::<usize>()
            + self.b.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Largest deviation of a `B_m` column sum from one.
    pub fn affine_violation(&self) -> f64 {
        let one = Complex64::new(1.0, 0.0);
        self.b
            .iter()
            .flat_map(|bm| bm.column_iter().map(move |c| (c.sum() - one).norm()))
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        crate::linalg::is_finite(&self.x)
            && crate::linalg::is_finite(&self.z)
            && crate::linalg::is_finite(&self.a1)
            && self.inner.iter().flatten().all(crate::linalg::is_finite)
            && self.b.iter().all(crate::linalg::is_finite)
    }

    /// Checks every shape against the configuration and dictionary.
    pub fn check_shapes(&self, config: &ModelConfig, kernels: &KernelDictionary) -> Result<()> {
        let d = config.layer_dims();
        let (n_k, n_fr, m) = (config.dims.n_k(), config.dims.n_fr, config.m);
        let bad = |what: &str| Err(Error::shape(format!("{what} does not match the model config")));
        if kernels.m() != m || kernels.n_l() != config.n_l {
            return bad("kernel dictionary");
        }
        if self.x.shape() != (n_k, n_fr) || self.z.shape() != (n_k, n_fr) {
            return bad("X or Z");
        }
        if self.a1.shape() != (n_k, d[1] * m) {
            return bad("A_1");
        }
        if self.inner.len() != config.q - 1 {
            return bad("depth of A");
        }
        for (i, blocks) in self.inner.iter().enumerate() {
            let q = i + 2;
            if blocks.len() != m || blocks.iter().any(|b| b.shape() != (d[q - 1], d[q])) {
                return bad(&format!("A_{q}"));
            }
        }
        if self.b.len() != m || self.b.iter().any(|b| b.shape() != (config.n_l, n_fr)) {
            return bad("B");
        }
        Ok(())
    }

    /// Same state with the `M` kernel branches reordered (`perm[new] = old`).
    pub fn permute_branches(&self, perm: &[usize]) -> FactorState {
        let d1 = self.d1();
        let mut a1 = CMat::zeros(self.a1.nrows(), self.a1.ncols());
        for (new, &old) in perm.iter().enumerate() {
            a1.columns_mut(new * d1, d1).copy_from(&self.a1.columns(old * d1, d1));
        }
        FactorState {
            x: self.x.clone(),
            z: self.z.clone(),
            a1,
            inner: self
                .inner
                .iter()
                .map(|blocks| perm.iter().map(|&o| blocks[o].clone()).collect())
                .collect(),
            b: perm.iter().map(|&o| self.b[o].clone()).collect(),
        }
    }
}

/// Regularization, proximal and step-size parameters of the solver.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    /// Weight on `‖B‖_1`.
    pub lambda1: f64,
    /// Coupling of `Z` to the temporal spectrum of `X`.
    pub lambda2: f64,
    /// Weight on `‖Z‖_1`.
    pub lambda3: f64,
    /// Ridge weight on the `A_q`.
    pub lambda4: f64,
    pub tau_x: f64,
    pub tau_z: f64,
    pub tau_a: f64,
    pub tau_b: f64,
    pub gamma0: f64,
    pub zeta: f64,
    pub max_outer: usize,
    pub tol_rel: f64,
    /// Primal/dual residual tolerance of the `B` inner splitting loop.
    pub b_tol: f64,
    pub b_max_iter: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            lambda1: 1e-3,
            lambda2: 1.0,
            lambda3: 1e-3,
            lambda4: 1e-3,
            tau_x: 1e-2,
            tau_z: 1e-2,
            tau_a: 1e-2,
            tau_b: 1e-2,
            gamma0: 1.0,
            zeta: 0.3,
            max_outer: 300,
            tol_rel: 1e-5,
            b_tol: 1e-6,
            b_max_iter: 300,
        }
    }
}

impl Hyperparams {
    /// Defaults with `λ3` scaled by the RMS magnitude of the measured data.
    pub fn defaults_for(mask: &SamplingMask, y: &ComplexTensor3) -> Result<Self> {
        let mut hp = Hyperparams::default();
        hp.lambda3 *= data_scale(mask, y)?;
        Ok(hp)
    }

    pub fn validate(&self) -> Result<()> {
        let lambdas = [self.lambda1, self.lambda2, self.lambda3, self.lambda4];
        if lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::param("λ1..λ4 must be finite and nonnegative"));
        }
        let taus = [self.tau_x, self.tau_z, self.tau_a, self.tau_b];
        if taus.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::param("τ_X, τ_Z, τ_A, τ_B must be positive"));
        }
        if !(self.gamma0 > 0.0 && self.gamma0 <= 1.0) {
            return Err(Error::param(format!("γ0 = {} outside (0, 1]", self.gamma0)));
        }
        if !(self.zeta > 0.0 && self.zeta < 1.0) {
            return Err(Error::param(format!("ζ = {} outside (0, 1)", self.zeta)));
        }
        if self.tol_rel.is_nan() || self.tol_rel < 0.0 || self.b_tol.is_nan() || self.b_tol <= 0.0 || self.b_max_iter == 0 {
            return Err(Error::param("tolerances must be positive"));
        }
        Ok(())
    }
}

/// `‖S(y)‖_F / √(n_k·n_fr)`.
pub fn data_scale(mask: &SamplingMask, y: &ComplexTensor3) -> Result<f64> {
    let ys = apply_sampling(mask, y)?;
    Ok(ys.norm() / (y.dims().len() as f64).sqrt())
}

/// `R_m^{(q)} = A_{q+1,m} ⋯ A_{Q,m} K_m B_m` (`d_q × n_fr`).
pub fn right_chain(state: &FactorState, kernels: &KernelDictionary, q: usize, m: usize) -> CMat {
    let mut r = &kernels.grams[m] * &state.b[m];
    for qq in (q + 1..=state.q()).rev() {
        r = &state.inner[qq - 2][m] * r;
    }
    r
}

/// `L_m^{(q)} = A_{1,m} ⋯ A_{q−1,m}` (`n_k × d_{q−1}`), for `q ≥ 2`.
pub fn left_chain(state: &FactorState, q: usize, m: usize) -> CMat {
    assert!(q >= 2, "left chain is defined for q ≥ 2");
    let mut l = state.a1_block(m);
    for qq in 2..q {
        l *= &state.inner[qq - 2][m];
    }
    l
}

/// Vertical stack of `R_m^{(1)}` over `m` (`d_1·M × n_fr`).
pub fn stacked_right_chain(state: &FactorState, kernels: &KernelDictionary) -> CMat {
    let parts: Vec<CMat> = (0..state.m()).map(|m| right_chain(state, kernels, 1, m)).collect();
    vstack(&parts)
}

/// `𝒜_1⋯𝒜_Q 𝒦` as the horizontal stack of `A_{1,m}⋯A_{Q,m}K_m` (`n_k × M·n_l`).
pub fn dictionary_matrix(state: &FactorState, kernels: &KernelDictionary) -> CMat {
    let n_l = kernels.n_l();
    let mut g = CMat::zeros(state.a1.nrows(), state.m() * n_l);
    for m in 0..state.m() {
        // chain of the small factors first, then one n_k-sized product
        let mut small = kernels.grams[m].clone();
        for qq in (2..=state.q()).rev() {
            small = &state.inner[qq - 2][m] * small;
        }
        g.columns_mut(m * n_l, n_l).copy_from(&(state.a1_block(m) * small));
    }
    g
}

/// `Σ_m A_{1,m}⋯A_{Q,m} K_m B_m`, evaluated right to left.
pub fn forward(state: &FactorState, kernels: &KernelDictionary) -> Result<CMat> {
    if kernels.m() != state.m() || kernels.n_l() != state.b[0].nrows() {
        return Err(Error::shape("kernel dictionary does not match the state"));
    }
    let r = stacked_right_chain(state, kernels);
    if r.nrows() != state.a1.ncols() {
        return Err(Error::shape("A_1 width does not match the factor chain"));
    }
    Ok(&state.a1 * r)
}

/// Dense big matrices `(𝒜_1, [𝒜_2 … 𝒜_Q], 𝒦, ℬ)`.
#[derive(Debug, Clone)]
pub struct AssembledBlocks {
    pub a1: CMat,
    pub inner: Vec<CMat>,
    pub k: CMat,
    pub b: CMat,
}

impl AssembledBlocks {
    /// `𝒜_1𝒜_2⋯𝒜_Q𝒦ℬ` by dense multiplication.
    pub fn product(&self) -> CMat {
        let mut p = self.a1.clone();
        for a in &self.inner {
            p *= a;
        }
        p * &self.k * &self.b
    }
}

/// Materializes the block matrices; refuses when `𝒜_1` would exceed `max_entries`.
pub fn assemble_blocks(
    state: &FactorState,
    kernels: &KernelDictionary,
    max_entries: usize,
) -> Result<AssembledBlocks> {
    if state.a1.len() > max_entries {
        return Err(Error::param(format!(
            "dense assembly of {} entries exceeds the cap {max_entries}",
            state.a1.len()
        )));
    }
    Ok(AssembledBlocks {
        a1: state.a1.clone(),
        inner: state.inner.iter().map(|blocks| block_diag(blocks)).collect(),
        k: block_diag(&kernels.grams),
        b: vstack(&state.b),
    })
}

/// Largest modulus of `S(F(X)) − S(y)` over sampled entries.
pub fn consistency_error(ops: &FourierOps, x: &CMat, mask: &SamplingMask, y: &ComplexTensor3) -> f64 {
    let mut k = x.clone();
    ops.dft2_columns(&mut k, Direction::Forward);
    k.as_slice()
        .iter()
        .zip(y.as_slice())
        .zip(mask.bits())
        .filter(|(_, &b)| b == 1)
        .map(|((a, b), _)| (a - b).norm())
        .fold(0.0, f64::max)
}

fn consistency_scale(mask: &SamplingMask, y: &ComplexTensor3) -> f64 {
    1.0 + y
        .as_slice()
        .iter()
        .zip(mask.bits())
        .filter(|(_, &b)| b == 1)
        .map(|(v, _)| v.norm())
        .fold(0.0, f64::max)
}

/// Individual loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveTerms {
    /// `½‖X − forward‖²_F`.
    pub fit: f64,
    /// `λ1‖ℬ‖_1`.
    pub sparsity: f64,
    /// `(λ2/2)‖Z − F_t(X)‖²_F + λ3‖Z‖_1`.
    pub temporal: f64,
    /// `(λ4/2)Σ_q‖𝒜_q‖²_F`.
    pub ridge: f64,
}

impl ObjectiveTerms {
    pub fn total(&self) -> f64 {
        self.fit + self.sparsity + self.temporal + self.ridge
    }
}

/// Loss terms without the constraint check.
pub fn objective_terms(
    ops: &FourierOps,
    state: &FactorState,
    kernels: &KernelDictionary,
    hp: &Hyperparams,
) -> Result<ObjectiveTerms> {
    let fit = 0.5 * (&state.x - forward(state, kernels)?).norm_squared();
    let sparsity = hp.lambda1 * state.b.iter().map(l1_norm).sum::<f64>();
    let zt = ops.temporal(&state.x, Direction::Forward);
    let temporal = 0.5 * hp.lambda2 * (&state.z - zt).norm_squared() + hp.lambda3 * l1_norm(&state.z);
    let ridge = 0.5
        * hp.lambda4
        * (state.a1.norm_squared()
            + state.inner.iter().flatten().map(|b| b.norm_squared()).sum::<f64>());
    Ok(ObjectiveTerms {
        fit,
        sparsity,
        temporal,
        ridge,
    })
}

/// Loss value, after verifying the affine and data-consistency constraints.
pub fn objective(
    state: &FactorState,
    kernels: &KernelDictionary,
    mask: &SamplingMask,
    y: &ComplexTensor3,
    hp: &Hyperparams,
) -> Result<f64> {
    let ops = FourierOps::new(y.dims());
    objective_with(&ops, state, kernels, mask, y, hp)
}

pub fn objective_with(
    ops: &FourierOps,
    state: &FactorState,
    kernels: &KernelDictionary,
    mask: &SamplingMask,
    y: &ComplexTensor3,
    hp: &Hyperparams,
) -> Result<f64> {
    if mask.dims() != y.dims() || state.x.shape() != (y.dims().n_k(), y.dims().n_fr) {
        return Err(Error::shape("state, mask and data dimensions disagree"));
    }
    let affine = state.affine_violation();
    if affine > AFFINE_TOL {
        return Err(Error::State(format!("B column sums off by {affine:.3e}")));
    }
    let dc = consistency_error(ops, &state.x, mask, y);
    if dc > CONSISTENCY_TOL * consistency_scale(mask, y) {
        return Err(Error::State(format!("data consistency off by {dc:.3e}")));
    }
    Ok(objective_terms(ops, state, kernels, hp)?.total())
}

/// `(N_{Q>1}, N_{Q=1})`: unknowns of the multi-linear model versus the single-factor model.
pub fn parameter_count(config: &ModelConfig) -> (usize, usize) {
    let d = config.layer_dims();
    let m = config.m;
    let n_fr = config.dims.n_fr;
    let chain: usize = d.windows(2).map(|w| w[0] * w[1]).sum();
    let general = m * (chain + n_fr * config.n_l);
    let single = m * (config.dims.n_k() * config.n_l + n_fr * config.n_l);
    (general, single)
}

/// Zero-filled `X`, its temporal spectrum as `Z`, seeded Gaussian factors and uniform `B`.
pub fn init_state(
    config: &ModelConfig,
    kernels: &KernelDictionary,
    mask: &SamplingMask,
    y: &ComplexTensor3,
    seed: u64,
) -> Result<FactorState> {
    let ops = FourierOps::new(config.dims);
    init_state_with(&ops, config, kernels, mask, y, seed)
}

pub fn init_state_with(
    ops: &FourierOps,
    config: &ModelConfig,
    kernels: &KernelDictionary,
    mask: &SamplingMask,
    y: &ComplexTensor3,
    seed: u64,
) -> Result<FactorState> {
    config.validate()?;
    if y.dims() != config.dims || mask.dims() != config.dims {
        return Err(Error::shape("data or mask dimensions differ from the model config"));
    }
    if kernels.m() != config.m || kernels.n_l() != config.n_l {
        return Err(Error::shape("kernel dictionary does not match M or n_l"));
    }
    let d = config.layer_dims();
    let n_fr = config.dims.n_fr;

    let mut x = apply_sampling(mask, y)?.into_matrix();
    ops.dft2_columns(&mut x, Direction::Inverse);
    let z = ops.temporal(&x, Direction::Forward);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a1 = complex_gaussian(d[0], d[1] * config.m, 1.0 / (d[0] as f64).sqrt(), &mut rng);
    let inner = (2..=config.q)
        .map(|q| {
            (0..config.m)
                .map(|_| complex_gaussian(d[q - 1], d[q], 1.0 / (d[q - 1] as f64).sqrt(), &mut rng))
                .collect()
        })
        .collect();
    let uniform = Complex64::new(1.0 / config.n_l as f64, 0.0);
    let b = vec![CMat::from_element(config.n_l, n_fr, uniform); config.m];
    Ok(FactorState { x, z, a1, inner, b })
}
