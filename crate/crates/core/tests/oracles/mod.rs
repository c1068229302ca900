//! Reference solvers that share no code with the library's updates: dense DFT
//! matrices, SVD pseudo-inverses, explicit operator matrices and plain
//! first-order iterations.

#![allow(dead_code)]

use std::f64::consts::PI;

use mlkrim::manifold::KernelDictionary;
use mlkrim::model::{FactorState, Hyperparams, ModelConfig};
use mlkrim::sampling::SamplingMask;
use mlkrim::tensor::{ComplexTensor3, DataDims};
use mlkrim::{CMat, Complex64};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type CVec = DVector<Complex64>;

pub fn c(v: f64) -> Complex64 {
    Complex64::new(v, 0.0)
}

pub fn rand_mat(rng: &mut ChaCha8Rng, r: usize, k: usize) -> CMat {
    CMat::from_fn(r, k, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
}

/// Centered unitary 1-D DFT: output bin `j` holds frequency `j − ⌊n/2⌋`.
pub fn centered_dft(n: usize) -> CMat {
    let h = (n / 2) as f64;
    CMat::from_fn(n, n, |j, m| {
        Complex64::from_polar(1.0 / (n as f64).sqrt(), -2.0 * PI * (j as f64 - h) * m as f64 / n as f64)
    })
}

/// Plain unitary 1-D DFT.
pub fn plain_dft(n: usize) -> CMat {
    CMat::from_fn(n, n, |k, t| Complex64::from_polar(1.0 / (n as f64).sqrt(), -2.0 * PI * (k * t) as f64 / n as f64))
}

/// Frame transform acting on column-stacked frames (`n_k × n_k`).
pub fn frame_dft(dims: DataDims) -> CMat {
    centered_dft(dims.n_p).kronecker(&centered_dft(dims.n_f))
}

pub fn pinv(m: &CMat) -> CMat {
    m.clone().pseudo_inverse(1e-13).expect("SVD")
}

/// Random instance within the sub-task test bounds.
pub struct Instance {
    pub config: ModelConfig,
    pub kernels: KernelDictionary,
    pub mask: SamplingMask,
    pub y: ComplexTensor3,
    pub state: FactorState,
    pub hp: Hyperparams,
}

pub fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes = [(1, 2), (2, 1), (2, 2), (1, 4), (2, 3), (3, 2), (2, 4), (4, 2), (1, 8), (8, 1), (1, 5), (3, 1)];
    let (n_f, n_p) = shapes[rng.random_range(0..shapes.len())];
    let n_fr = rng.random_range(2..=5);
    let dims = DataDims::new(n_f, n_p, n_fr).unwrap();
    let n_l = rng.random_range(1..=4usize.min(n_fr));
    let m = rng.random_range(1..=2);
    let q = rng.random_range(1..=3);
    let inner: Vec<usize> = (1..q).map(|_| rng.random_range(1..=3)).collect();
    let config = ModelConfig::new(m, q, inner, n_l, dims).unwrap();
    let d = config.layer_dims();

    let grams = (0..m)
        .map(|_| {
            let h = rand_mat(&mut rng, n_l, n_l);
            &h * h.adjoint() + CMat::identity(n_l, n_l) * c(0.1)
        })
        .collect();
    let kernels = KernelDictionary::from_grams(grams).unwrap();
    let bits: Vec<u8> = (0..dims.len()).map(|_| u8::from(rng.random_bool(0.5))).collect();
    let mask = SamplingMask::from_bits(dims, bits).unwrap();
    let y = ComplexTensor3::from_matrix(dims, rand_mat(&mut rng, dims.n_k(), n_fr)).unwrap();

    let b = (0..m)
        .map(|_| {
            let mut r = rand_mat(&mut rng, n_l, n_fr);
            for mut col in r.column_iter_mut() {
                let shift = (c(1.0) - col.sum()) / n_l as f64;
                col.iter_mut().for_each(|v| *v += shift);
            }
            r
        })
        .collect();
    let state = FactorState {
        x: rand_mat(&mut rng, dims.n_k(), n_fr),
        z: rand_mat(&mut rng, dims.n_k(), n_fr),
        a1: rand_mat(&mut rng, d[0], d[1] * m),
        inner: (2..=q).map(|qq| (0..m).map(|_| rand_mat(&mut rng, d[qq - 1], d[qq])).collect()).collect(),
        b,
    };
    let hp = Hyperparams {
        lambda1: rng.random_range(0.01..0.5),
        lambda2: rng.random_range(0.1..2.0),
        lambda3: rng.random_range(0.01..1.0),
        lambda4: rng.random_range(0.01..1.0),
        tau_x: rng.random_range(0.01..1.0),
        tau_z: rng.random_range(0.01..1.0),
        tau_a: rng.random_range(0.01..1.0),
        tau_b: rng.random_range(0.1..1.0),
        ..Hyperparams::default()
    };
    Instance { config, kernels, mask, y, state, hp }
}

/// `A_{q,m}` as a dense matrix (`A_1` sliced by kernel).
pub fn factor(state: &FactorState, q: usize, m: usize) -> CMat {
    if q == 1 {
        let d1 = state.a1.ncols() / state.b.len();
        state.a1.columns(m * d1, d1).into_owned()
    } else {
        state.inner[q - 2][m].clone()
    }
}

/// `A_{1,m} ⋯ A_{Q,m} K_m B_m` by direct multiplication.
pub fn branch_output(state: &FactorState, kernels: &KernelDictionary, m: usize) -> CMat {
    let q = state.inner.len() + 1;
    let mut p = factor(state, 1, m);
    for qq in 2..=q {
        p *= factor(state, qq, m);
    }
    p * &kernels.grams[m] * &state.b[m]
}

pub fn model_output(state: &FactorState, kernels: &KernelDictionary) -> CMat {
    (0..state.b.len()).map(|m| branch_output(state, kernels, m)).fold(
        CMat::zeros(state.x.nrows(), state.x.ncols()),
        |acc, p| acc + p,
    )
}

/// Projected gradient on the `X` sub-problem with dense transforms.
pub fn x_oracle(inst: &Instance) -> CMat {
    let (s, hp) = (&inst.state, &inst.hp);
    let dims = inst.y.dims();
    let f = frame_dft(dims);
    let f_inv = f.adjoint();
    let t = plain_dft(dims.n_fr);
    let cm = model_output(s, &inst.kernels);

    let project = |x: &CMat| -> CMat {
        let mut k = &f * x;
        for col in 0..dims.n_fr {
            for row in 0..dims.n_k() {
                if inst.mask.bits()[col * dims.n_k() + row] == 1 {
                    k[(row, col)] = inst.y.as_matrix()[(row, col)];
                }
            }
        }
        &f_inv * k
    };
    let grad = |x: &CMat| -> CMat {
        (x - &cm) + (x * t.transpose() - &s.z) * t.conjugate() * c(hp.lambda2) + (x - &s.x) * c(hp.tau_x)
    };
    let step = 0.5 / (1.0 + hp.lambda2 + hp.tau_x);
    let mut x = project(&s.x);
    for _ in 0..200 {
        x = project(&(&x - grad(&x) * c(step)));
    }
    x
}

/// Proximal gradient on the `Z` sub-problem with a dense temporal DFT.
pub fn z_oracle(inst: &Instance) -> CMat {
    let (s, hp) = (&inst.state, &inst.hp);
    let t = plain_dft(s.x.ncols());
    let spectrum = &s.x * t.transpose();
    let step = 0.5 / (hp.lambda2 + hp.tau_z);
    let mut z = s.z.clone();
    for _ in 0..200 {
        let g = (&z - &spectrum) * c(hp.lambda2) + (&z - &s.z) * c(hp.tau_z);
        let v = &z - g * c(step);
        let th = step * hp.lambda3;
        z = v.map(|e| if e.norm() <= th { c(0.0) } else { e * (1.0 - th / e.norm()) });
    }
    z
}

/// Ridge-proximal least squares for `A_1` via a stacked pseudo-inverse.
pub fn a1_oracle(inst: &Instance) -> CMat {
    let (s, hp) = (&inst.state, &inst.hp);
    let m_count = s.b.len();
    let parts: Vec<CMat> = (0..m_count)
        .map(|m| {
            let q = s.inner.len() + 1;
            let mut r = &inst.kernels.grams[m] * &s.b[m];
            for qq in (2..=q).rev() {
                r = factor(s, qq, m) * r;
            }
            r
        })
        .collect();
    let rows: usize = parts.iter().map(|p| p.nrows()).sum();
    let mut r = CMat::zeros(rows, s.x.ncols());
    let mut at = 0;
    for p in &parts {
        r.view_mut((at, 0), p.shape()).copy_from(p);
        at += p.nrows();
    }
    // min ‖[X, √τ Â, 0] − A[R, √τ I, √λ4 I]‖
    let n = rows;
    let big_r = {
        let mut m = CMat::zeros(n, r.ncols() + 2 * n);
        m.view_mut((0, 0), r.shape()).copy_from(&r);
        m.view_mut((0, r.ncols()), (n, n)).copy_from(&(CMat::identity(n, n) * c(hp.tau_a.sqrt())));
        m.view_mut((0, r.ncols() + n), (n, n)).copy_from(&(CMat::identity(n, n) * c(hp.lambda4.sqrt())));
        m
    };
    let target = {
        let mut m = CMat::zeros(s.x.nrows(), r.ncols() + 2 * n);
        m.view_mut((0, 0), s.x.shape()).copy_from(&s.x);
        m.view_mut((0, r.ncols()), (s.x.nrows(), n)).copy_from(&(&s.a1 * c(hp.tau_a.sqrt())));
        m
    };
    target * pinv(&big_r)
}

/// Block-diagonal `A_q` update from the explicit operator matrix of
/// `θ ↦ Σ_m L_m A_{q,m} R_m`, solved as stacked least squares.
pub fn aq_oracle(inst: &Instance, q: usize) -> Vec<CMat> {
    let (s, hp) = (&inst.state, &inst.hp);
    let m_count = s.b.len();
    let big_q = s.inner.len() + 1;
    let (rows, cols) = s.inner[q - 2][0].shape();
    let sz = rows * cols;
    let n = m_count * sz;
    let out_len = s.x.len();

    let apply = |theta: &[Complex64]| -> CMat {
        let mut trial = s.clone();
        for m in 0..m_count {
            trial.inner[q - 2][m] = CMat::from_column_slice(rows, cols, &theta[m * sz..(m + 1) * sz]);
        }
        let _ = big_q;
        model_output(&trial, &inst.kernels)
    };
    let base = apply(&vec![c(0.0); n]);
    let mut phi = CMat::zeros(out_len, n);
    for j in 0..n {
        let mut e = vec![c(0.0); n];
        e[j] = c(1.0);
        let col = apply(&e) - &base;
        phi.column_mut(j).copy_from_slice(col.as_slice());
    }
    let theta_hat: Vec<Complex64> = s.inner[q - 2].iter().flat_map(|b| b.as_slice().to_vec()).collect();
    let residual_target = &s.x - &base;

    let mut a = CMat::zeros(out_len + 2 * n, n);
    a.view_mut((0, 0), (out_len, n)).copy_from(&phi);
    a.view_mut((out_len, 0), (n, n)).copy_from(&(CMat::identity(n, n) * c(hp.lambda4.sqrt())));
    a.view_mut((out_len + n, 0), (n, n)).copy_from(&(CMat::identity(n, n) * c(hp.tau_a.sqrt())));
    let mut rhs = CVec::zeros(out_len + 2 * n);
    rhs.rows_mut(0, out_len).copy_from_slice(residual_target.as_slice());
    for (j, v) in theta_hat.iter().enumerate() {
        rhs[out_len + n + j] = v * hp.tau_a.sqrt();
    }
    let theta = pinv(&a) * rhs;
    (0..m_count)
        .map(|m| CMat::from_column_slice(rows, cols, theta.rows(m * sz, sz).as_slice()))
        .collect()
}

/// `G = [A_{1,m}⋯A_{Q,m}K_m]_m` by direct multiplication.
pub fn dictionary(state: &FactorState, kernels: &KernelDictionary) -> CMat {
    let m_count = state.b.len();
    let q = state.inner.len() + 1;
    let n_l = kernels.grams[0].nrows();
    let mut g = CMat::zeros(state.x.nrows(), m_count * n_l);
    for m in 0..m_count {
        let mut p = factor(state, 1, m);
        for qq in 2..=q {
            p *= factor(state, qq, m);
        }
        g.columns_mut(m * n_l, n_l).copy_from(&(p * &kernels.grams[m]));
    }
    g
}

pub fn b_column_objective(g: &CMat, x: &CVec, b: &CVec, b_hat: &CVec, lambda1: f64, tau_b: f64) -> f64 {
    0.5 * (x - g * b).norm_squared() + lambda1 * b.iter().map(|v| v.norm()).sum::<f64>() + 0.5 * tau_b * (b - b_hat).norm_squared()
}

fn project_blocks(b: &mut CVec, m: usize, n_l: usize) {
    for j in 0..m {
        let mut blk = b.rows_mut(j * n_l, n_l);
        let shift = (c(1.0) - blk.sum()) / n_l as f64;
        blk.iter_mut().for_each(|v| *v += shift);
    }
}

/// Projected subgradient with steps `min(1/L, 2/(μ(k+2)))`; returns the best
/// objective seen over the iterates and their weighted average, with its point.
pub fn b_subgradient_oracle(
    g: &CMat,
    x: &CVec,
    b_hat: &CVec,
    m: usize,
    lambda1: f64,
    tau_b: f64,
    iterations: usize,
) -> (f64, CVec) {
    let n = g.ncols();
    let h = g.adjoint() * g + CMat::identity(n, n) * c(tau_b);
    let lin = g.adjoint() * x + b_hat * c(tau_b);
    let n_l = n / m;
    let lip = h.norm();
    let mut b = b_hat.clone();
    project_blocks(&mut b, m, n_l);
    let f = |b: &CVec| b_column_objective(g, x, b, b_hat, lambda1, tau_b);
    let mut best = (f(&b), b.clone());
    let mut avg = b.clone();
    let mut weight = 0.0;
    let mut grad = CVec::zeros(n);
    for k in 0..iterations {
        grad.gemv(c(1.0), &h, &b, c(0.0));
        grad -= &lin;
        for (gi, bi) in grad.iter_mut().zip(b.iter()) {
            let r = bi.norm();
            if r > 0.0 {
                *gi += bi * (lambda1 / r);
            }
        }
        // tangent-space component only
        project_tangent(&mut grad, m, n_l);
        let step = (1.0 / lip).min(2.0 / (tau_b * (k as f64 + 2.0)));
        b.axpy(c(-step), &grad, c(1.0));
        let wk = k as f64 + 1.0;
        weight += wk;
        avg.axpy(c(wk / weight), &(&b - &avg), c(1.0));
        if k % 64 == 0 || k + 1 == iterations {
            for cand in [&b, &avg] {
                let v = f(cand);
                if v < best.0 {
                    best = (v, cand.clone());
                }
            }
        }
    }
    best
}

/// Upper bound on `f(b) − min f` from a KKT residual: with `g = ∇(smooth part)`
/// and a per-block multiplier `ν`, the distance of `−g − ν` to `λ1∂‖b‖₁` is an
/// approximate subgradient norm `r`, and `τ_B`-strong convexity gives `r²/(2τ_B)`.
pub fn b_kkt_gap(g: &CMat, x: &CVec, b: &CVec, b_hat: &CVec, m: usize, lambda1: f64, tau_b: f64) -> f64 {
    let n = g.ncols();
    let n_l = n / m;
    let grad = g.adjoint() * (g * b - x) + (b - b_hat) * c(tau_b);
    let mut r2 = 0.0;
    for j in 0..m {
        let idx: Vec<usize> = (j * n_l..(j + 1) * n_l).collect();
        let support: Vec<usize> = idx.iter().copied().filter(|&i| b[i].norm() > 0.0).collect();
        let nu = support.iter().map(|&i| -(grad[i] + b[i] * (lambda1 / b[i].norm()))).sum::<Complex64>()
            / support.len().max(1) as f64;
        for &i in &idx {
            let v = grad[i] + nu;
            let r = if b[i].norm() > 0.0 {
                (v + b[i] * (lambda1 / b[i].norm())).norm()
            } else {
                (v.norm() - lambda1).max(0.0)
            };
            r2 += r * r;
        }
    }
    r2 / (2.0 * tau_b)
}

fn project_tangent(v: &mut CVec, m: usize, n_l: usize) {
    for j in 0..m {
        let mut blk = v.rows_mut(j * n_l, n_l);
        let mean = blk.sum() / n_l as f64;
        blk.iter_mut().for_each(|e| *e -= mean);
    }
}

/// Frame-by-frame SSIM by direct windowed sums on real images.
pub fn ssim_direct(a: &[Vec<f64>], b: &[Vec<f64>], d: f64) -> f64 {
    let (rows, cols) = (a.len(), a[0].len());
    let w = 11usize;
    let mut win = vec![vec![0.0; w]; w];
    let mut s = 0.0;
    for (i, row) in win.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (y, x) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(x * x + y * y) / (2.0 * 1.5 * 1.5)).exp();
            s += *v;
        }
    }
    let (c1, c2) = ((0.01 * d).powi(2), (0.03 * d).powi(2));
    let mut total = 0.0;
    let mut count = 0.0;
    for r0 in 0..=rows - w {
        for c0 in 0..=cols - w {
            let (mut mx, mut my) = (0.0, 0.0);
            for i in 0..w {
                for j in 0..w {
                    let g = win[i][j] / s;
                    mx += g * a[r0 + i][c0 + j];
                    my += g * b[r0 + i][c0 + j];
                }
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for i in 0..w {
                for j in 0..w {
                    let g = win[i][j] / s;
                    let (dx, dy) = (a[r0 + i][c0 + j] - mx, b[r0 + i][c0 + j] - my);
                    vx += g * dx * dx;
                    vy += g * dy * dy;
                    cxy += g * dx * dy;
                }
            }
            total += (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1.0;
        }
    }
    total / count
}

pub fn rel_err(got: &CMat, want: &CMat) -> f64 {
    (got - want).norm() / want.norm().max(1e-300)
}
