//! Closed-form block updates for `X`, `Z` and the factors `A_q`.

use crate::error::{Error, Result};
use crate::linalg::{hermitian_cholesky, soft_threshold};
use crate::manifold::KernelDictionary;
use crate::model::{forward, left_chain, right_chain, stacked_right_chain, FactorState, Hyperparams};
use crate::sampling::SamplingMask;
use crate::tensor::{ComplexTensor3, Direction, FourierOps};
use crate::{CMat, Complex64};

/// Result of a linear-system update with its relative normal-equation residual.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearUpdate<T> {
    pub value: T,
    pub residual: f64,
}

fn real(v: f64) -> Complex64 {
    Complex64::new(v, 0.0)
}

/// Minimizer of the `X` sub-problem under the data-consistency constraint.
///
/// The unconstrained loss is isotropic around
/// `X* = (C + λ2·F_t⁻¹(Ẑ) + τ_X·X̂) / (1 + λ2 + τ_X)` with `C` the model output, and
/// `F` is unitary, so the constrained minimizer is `X*` with its sampled k-space
/// entries overwritten by the data.
pub fn update_x(
    state: &FactorState,
    kernels: &KernelDictionary,
    mask: &SamplingMask,
    y: &ComplexTensor3,
    hp: &Hyperparams,
) -> Result<CMat> {
    let ops = FourierOps::new(y.dims());
    update_x_with(&ops, state, kernels, mask, y, hp)
}

pub fn update_x_with(
    ops: &FourierOps,
    state: &FactorState,
    kernels: &KernelDictionary,
    mask: &SamplingMask,
    y: &ComplexTensor3,
    hp: &Hyperparams,
) -> Result<CMat> {
    if mask.dims() != y.dims() || state.x.shape() != (y.dims().n_k(), y.dims().n_fr) {
        return Err(Error::shape("X, mask and data dimensions disagree"));
    }
    let c = forward(state, kernels)?;
    let z_time = ops.temporal(&state.z, Direction::Inverse);
    let denom = 1.0 + hp.lambda2 + hp.tau_x;
    let mut x = (c + z_time * real(hp.lambda2) + &state.x * real(hp.tau_x)) / real(denom);

    ops.dft2_columns(&mut x, Direction::Forward);
    for ((v, &b), &yv) in x.as_mut_slice().iter_mut().zip(mask.bits()).zip(y.as_slice()) {
        if b == 1 {
            *v = yv;
        }
    }
    ops.dft2_columns(&mut x, Direction::Inverse);
    Ok(x)
}

/// Soft-thresholded minimizer of the `Z` sub-problem.
pub fn update_z(state: &FactorState, hp: &Hyperparams) -> Result<CMat> {
    let dims = crate::tensor::DataDims::new(1, 1, state.x.ncols())?;
    update_z_with(&FourierOps::new(dims), state, hp)
}

pub fn update_z_with(ops: &FourierOps, state: &FactorState, hp: &Hyperparams) -> Result<CMat> {
    let denom = hp.lambda2 + hp.tau_z;
    if denom.is_nan() || denom <= 0.0 {
        return Err(Error::param("λ2 + τ_Z must be positive"));
    }
    let spectrum = ops.temporal(&state.x, Direction::Forward);
    let center = (spectrum * real(hp.lambda2) + &state.z * real(hp.tau_z)) / real(denom);
    let alpha = hp.lambda3 / denom;
    Ok(center.map(|v| soft_threshold(v, alpha)))
}

/// Ridge/proximal least-squares update of the dense first factor:
/// `A_1 = (X̂Rᴴ + τ_A·Â_1)(RRᴴ + (λ4 + τ_A)I)⁻¹` with `R` the chain to its right.
pub fn update_a1(state: &FactorState, kernels: &KernelDictionary, hp: &Hyperparams) -> Result<LinearUpdate<CMat>> {
    let r = stacked_right_chain(state, kernels);
    let reg = hp.lambda4 + hp.tau_a;
    let n = r.nrows();
    let h = &r * r.adjoint() + CMat::identity(n, n) * real(reg);
    // A_1 H = W  ⇔  H A_1ᴴ = Wᴴ
    let w = &state.x * r.adjoint() + &state.a1 * real(hp.tau_a);
    let chol = hermitian_cholesky(h.clone(), "A_1 normal matrix")?;
    let a1 = chol.solve(&w.adjoint()).adjoint();
    let residual = (&a1 * &h - &w).norm() / w.norm().max(f64::MIN_POSITIVE);
    Ok(LinearUpdate { value: a1, residual })
}

/// Update of the `M` blocks of the block-diagonal factor `A_q`, `q ≥ 2`.
///
/// With `L_m`/`R_m` the chains left/right of block `m`, the unknown
/// `θ = (vec A_{q,1}, …, vec A_{q,M})` solves
/// `(G + (λ4 + τ_A)I)θ = c`, where
/// `G_{m,m'} = (R_{m'}R_mᴴ)ᵀ ⊗ (L_mᴴL_{m'})` and
/// `c_m = vec(L_mᴴX̂R_mᴴ) + τ_A·vec Â_{q,m}`.
pub fn update_aq(
    state: &FactorState,
    kernels: &KernelDictionary,
    hp: &Hyperparams,
    q: usize,
) -> Result<LinearUpdate<Vec<CMat>>> {
    if q < 2 || q > state.q() {
        return Err(Error::param(format!("q = {q} outside 2..={}", state.q())));
    }
    let m_count = state.m();
    let blocks = &state.inner[q - 2];
    let (rows, cols) = blocks[0].shape();
    let sz = rows * cols;

    let lefts: Vec<CMat> = (0..m_count).map(|m| left_chain(state, q, m)).collect();
    let rights: Vec<CMat> = (0..m_count).map(|m| right_chain(state, kernels, q, m)).collect();

    let n = m_count * sz;
    let mut g = CMat::zeros(n, n);
    for m in 0..m_count {
        for mp in 0..m_count {
            let left_gram = lefts[m].adjoint() * &lefts[mp];
            let right_gram = (&rights[mp] * rights[m].adjoint()).transpose();
            g.view_mut((m * sz, mp * sz), (sz, sz))
                .copy_from(&right_gram.kronecker(&left_gram));
        }
    }
    let reg = hp.lambda4 + hp.tau_a;
    for i in 0..n {
        g[(i, i)] += real(reg);
    }

    let mut rhs = nalgebra::DVector::<Complex64>::zeros(n);
    for m in 0..m_count {
        let cm = lefts[m].adjoint() * &state.x * rights[m].adjoint() + &blocks[m] * real(hp.tau_a);
        rhs.rows_mut(m * sz, sz).copy_from_slice(cm.as_slice());
    }

    let chol = hermitian_cholesky(g.clone(), "A_q normal matrix")?;
    let theta = chol.solve(&rhs);
    let residual = (&g * &theta - &rhs).norm() / rhs.norm().max(f64::MIN_POSITIVE);
    let value = (0..m_count)
        .map(|m| CMat::from_column_slice(rows, cols, theta.rows(m * sz, sz).as_slice()))
        .collect();
    Ok(LinearUpdate { value, residual })
}
