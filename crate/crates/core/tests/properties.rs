//! Randomized invariants of the transforms, sampling operator, block updates and metrics.

mod oracles;

use mlkrim::manifold::KernelDictionary;
use mlkrim::metrics::{nrmse, ssim_with_range};
use mlkrim::model::{objective_terms, FactorState, Hyperparams};
use mlkrim::sampling::{apply_sampling, SamplingMask};
use mlkrim::solver::{gamma_step, update_a1, update_aq, update_b, update_x, update_z};
use mlkrim::tensor::{devectorize_frame, vectorize_frame, ComplexTensor3, DataDims, Direction, FourierOps};
use mlkrim::{CMat, Complex64};
use oracles::{c, rand_mat, CVec, Instance};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn l1(m: &CMat) -> f64 {
    m.iter().map(|v| v.norm()).sum()
}

/// Smallest change of `f` (capped at zero) over 100 random directions of norm 1e-3 around `at`,
/// each direction passed through `feasible` first.
fn min_increase(
    at: &CMat,
    seed: u64,
    feasible: impl Fn(CMat) -> CMat,
    f: impl Fn(&CMat) -> f64,
) -> (f64, f64) {
    let mut r = rng(seed ^ 0x5eed);
    let base = f(at);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let d = feasible(rand_mat(&mut r, at.nrows(), at.ncols()));
        if d.norm() == 0.0 {
            continue;
        }
        let d = &d * c(1e-3 / d.norm());
        worst = worst.min(f(&(at + d)) - base);
    }
    (worst, base)
}

fn small_dims() -> impl Strategy<Value = DataDims> {
    (1usize..7, 1usize..7, 1usize..6).prop_map(|(f, p, t)| DataDims::new(f, p, t).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn fourier_round_trips_and_parseval(dims in small_dims(), seed in any::<u64>()) {
        let ops = FourierOps::new(dims);
        let x = rand_mat(&mut rng(seed), dims.n_k(), dims.n_fr);
        let mut k = x.clone();
        ops.dft2_columns(&mut k, Direction::Forward);
        prop_assert!((k.norm() - x.norm()).abs() <= 1e-12 * x.norm());
        ops.dft2_columns(&mut k, Direction::Inverse);
        prop_assert!((&k - &x).norm() <= 1e-12 * x.norm());

        let t = ops.temporal(&x, Direction::Forward);
        prop_assert!((t.norm() - x.norm()).abs() <= 1e-12 * x.norm());
        prop_assert!((ops.temporal(&t, Direction::Inverse) - &x).norm() <= 1e-12 * x.norm());
    }

    #[test]
    fn vectorize_is_a_bijection(n_f in 1usize..9, n_p in 1usize..9, seed in any::<u64>()) {
        let dims = DataDims::new(n_f, n_p, 1).unwrap();
        let frame = rand_mat(&mut rng(seed), n_f, n_p);
        let v = vectorize_frame(&frame, dims).unwrap();
        prop_assert_eq!(devectorize_frame(&v, n_f, n_p).unwrap(), frame);
    }

    #[test]
    fn sampling_is_an_orthogonal_projection(dims in small_dims(), seed in any::<u64>()) {
        let mut r = rng(seed);
        let bits: Vec<u8> = (0..dims.len()).map(|i| ((seed >> (i % 64)) & 1) as u8).collect();
        let mask = SamplingMask::from_bits(dims, bits).unwrap();
        let a = ComplexTensor3::from_matrix(dims, rand_mat(&mut r, dims.n_k(), dims.n_fr)).unwrap();
        let b = ComplexTensor3::from_matrix(dims, rand_mat(&mut r, dims.n_k(), dims.n_fr)).unwrap();
        let pa = apply_sampling(&mask, &a).unwrap();
        let pb = apply_sampling(&mask, &b).unwrap();
        prop_assert_eq!(&apply_sampling(&mask, &pa).unwrap(), &pa);
        let sum = ComplexTensor3::from_matrix(dims, a.as_matrix() * c(2.0) + b.as_matrix()).unwrap();
        let lin = pa.as_matrix() * c(2.0) + pb.as_matrix();
        prop_assert!((apply_sampling(&mask, &sum).unwrap().as_matrix() - lin).norm() <= 1e-12 * sum.norm());
        let lhs = pa.as_matrix().dotc(b.as_matrix());
        let rhs = a.as_matrix().dotc(pb.as_matrix());
        prop_assert!((lhs - rhs).norm() <= 1e-12 * a.norm() * b.norm());
    }

    #[test]
    fn gamma_sequence_follows_the_recursion(gamma0 in 1e-3f64..=1.0, zeta in 1e-3f64..0.999) {
        let mut g = gamma0;
        for _ in 0..200 {
            let next = gamma_step(g, zeta).unwrap();
            prop_assert_eq!(next, g * (1.0 - zeta * g));
            prop_assert!(next > 0.0 && next < g);
            g = next;
        }
    }

    #[test]
    fn nrmse_is_homogeneous_in_the_error(seed in any::<u64>(), s in 0.01f64..100.0) {
        let dims = DataDims::new(4, 5, 3).unwrap();
        let mut r = rng(seed);
        let x = rand_mat(&mut r, dims.n_k(), dims.n_fr);
        let e = rand_mat(&mut r, dims.n_k(), dims.n_fr);
        let truth = ComplexTensor3::from_matrix(dims, x.clone()).unwrap();
        let at = |k: f64| nrmse(&truth, &ComplexTensor3::from_matrix(dims, &x + &e * c(k)).unwrap()).unwrap();
        prop_assert!((at(s) - s * at(1.0)).abs() <= 1e-12 * s * at(1.0));
    }

    #[test]
    fn ssim_with_fixed_range_is_symmetric(seed in any::<u64>()) {
        let dims = DataDims::new(12, 13, 2).unwrap();
        let mut r = rng(seed);
        let a = ComplexTensor3::from_matrix(dims, rand_mat(&mut r, dims.n_k(), dims.n_fr)).unwrap();
        let b = ComplexTensor3::from_matrix(dims, rand_mat(&mut r, dims.n_k(), dims.n_fr)).unwrap();
        let ab = ssim_with_range(&a, &b, 1.5).unwrap();
        let ba = ssim_with_range(&b, &a, 1.5).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-14);
        prop_assert_eq!(ssim_with_range(&a, &a, 1.5).unwrap(), 1.0);
    }
}

fn with_a1(s: &FactorState, a1: &CMat) -> FactorState {
    FactorState { a1: a1.clone(), ..s.clone() }
}

fn ridge_prox(hp: &Hyperparams, v: &CMat, prev: &CMat) -> f64 {
    0.5 * hp.lambda4 * v.norm_squared() + 0.5 * hp.tau_a * (v - prev).norm_squared()
}

fn fit(inst: &Instance, s: &FactorState) -> f64 {
    0.5 * (&inst.state.x - oracles::model_output(s, &inst.kernels)).norm_squared()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn block_updates_are_first_order_optimal(seed in 0u64..1_000_000) {
        let inst = oracles::random_instance(seed);
        let (s, hp) = (&inst.state, &inst.hp);
        let dims = inst.y.dims();
        let f2 = oracles::frame_dft(dims);
        let t = oracles::plain_dft(dims.n_fr);

        // X: directions that leave the sampled k-space entries alone
        let x = update_x(s, &inst.kernels, &inst.mask, &inst.y, hp).unwrap();
        let cm = oracles::model_output(s, &inst.kernels);
        let (inc, base) = min_increase(
            &x,
            seed,
            |d| {
                let mut k = &f2 * d;
                for (v, &b) in k.as_mut_slice().iter_mut().zip(inst.mask.bits()) {
                    if b == 1 {
                        *v = c(0.0);
                    }
                }
                f2.adjoint() * k
            },
            |v| {
                0.5 * (v - &cm).norm_squared()
                    + 0.5 * hp.lambda2 * (&s.z - v * t.transpose()).norm_squared()
                    + 0.5 * hp.tau_x * (v - &s.x).norm_squared()
            },
        );
        prop_assert!(inc >= -1e-12 * base.max(1.0), "X: {inc}");

        let z = update_z(s, hp).unwrap();
        let spectrum = &s.x * t.transpose();
        let (inc, base) = min_increase(&z, seed, |d| d, |v| {
            0.5 * hp.lambda2 * (v - &spectrum).norm_squared() + hp.lambda3 * l1(v) + 0.5 * hp.tau_z * (v - &s.z).norm_squared()
        });
        prop_assert!(inc >= -1e-12 * base.max(1.0), "Z: {inc}");

        let a1 = update_a1(s, &inst.kernels, hp).unwrap().value;
        let (inc, base) = min_increase(&a1, seed, |d| d, |v| fit(&inst, &with_a1(s, v)) + ridge_prox(hp, v, &s.a1));
        prop_assert!(inc >= -1e-12 * base.max(1.0), "A_1: {inc}");

        for q in 2..=s.q() {
            let blocks = update_aq(s, &inst.kernels, hp, q).unwrap().value;
            for m in 0..s.m() {
                let objective = |v: &CMat| {
                    let mut trial = s.clone();
                    trial.inner[q - 2] = blocks.clone();
                    trial.inner[q - 2][m] = v.clone();
                    let ridge: f64 = (0..s.m())
                        .map(|j| ridge_prox(hp, &trial.inner[q - 2][j], &s.inner[q - 2][j]))
                        .sum();
                    fit(&inst, &trial) + ridge
                };
                let (inc, base) = min_increase(&blocks[m], seed + m as u64, |d| d, objective);
                prop_assert!(inc >= -1e-12 * base.max(1.0), "A_{q}[{m}]: {inc}");
            }
        }
    }

    #[test]
    fn b_update_satisfies_kkt(seed in 0u64..1_000_000) {
        let inst = oracles::random_instance(seed);
        let (s, hp) = (&inst.state, &inst.hp);
        let g = oracles::dictionary(s, &inst.kernels);
        let b = update_b(s, &inst.kernels, hp).unwrap();
        let n_l = s.b[0].nrows();
        for t in 0..s.x.ncols() {
            let stack = |blocks: &[CMat]| CVec::from_iterator(s.m() * n_l, blocks.iter().flat_map(|m| m.column(t).iter().copied().collect::<Vec<_>>()));
            let (got, prev) = (stack(&b.blocks), stack(&s.b));
            let xt = CVec::from_column_slice(s.x.column(t).as_slice());
            let gap = oracles::b_kkt_gap(&g, &xt, &got, &prev, s.m(), hp.lambda1, hp.tau_b);
            // gap = r²/(2τ_B) with r the projected residual norm
            let r = (2.0 * hp.tau_b * gap).sqrt();
            // relative to the size of the terms that cancel in the stationarity condition
            let scale = (g.adjoint() * (&g * &got)).norm()
                + (g.adjoint() * &xt).norm()
                + hp.lambda1 * (got.len() as f64).sqrt()
                + hp.tau_b * (&got - &prev).norm();
            prop_assert!(r <= 1e-5 * scale, "column {t}: residual {r:e} vs scale {scale:e}");
            for blk in got.as_slice().chunks(n_l) {
                prop_assert!((blk.iter().sum::<Complex64>() - c(1.0)).norm() <= 1e-10);
            }
        }
    }

    #[test]
    fn huge_proximal_weight_pins_each_block(seed in 0u64..1_000_000) {
        let mut inst = oracles::random_instance(seed);
        // start from a data-consistent X so the constraint alone does not move it
        inst.state.x = update_x(&inst.state, &inst.kernels, &inst.mask, &inst.y, &inst.hp).unwrap();
        let big = 1e12;
        let s = &inst.state;
        let dev = |a: &CMat, b: &CMat| (a - b).norm() / b.norm().max(1e-300);

        let hp = Hyperparams { tau_x: big, ..inst.hp.clone() };
        prop_assert!(dev(&update_x(s, &inst.kernels, &inst.mask, &inst.y, &hp).unwrap(), &s.x) <= 1e-4);
        let hp = Hyperparams { tau_z: big, ..inst.hp.clone() };
        prop_assert!(dev(&update_z(s, &hp).unwrap(), &s.z) <= 1e-4);
        let hp = Hyperparams { tau_a: big, ..inst.hp.clone() };
        prop_assert!(dev(&update_a1(s, &inst.kernels, &hp).unwrap().value, &s.a1) <= 1e-4);
        for q in 2..=s.q() {
            let blocks = update_aq(s, &inst.kernels, &hp, q).unwrap().value;
            for (got, prev) in blocks.iter().zip(&s.inner[q - 2]) {
                prop_assert!(dev(got, prev) <= 1e-4);
            }
        }
        let hp = Hyperparams { tau_b: big, ..inst.hp.clone() };
        let b = update_b(s, &inst.kernels, &hp).unwrap();
        for (got, prev) in b.blocks.iter().zip(&s.b) {
            prop_assert!(dev(got, prev) <= 1e-4);
        }
    }

    #[test]
    fn objective_ignores_kernel_order(seed in 0u64..1_000_000) {
        let inst = oracles::random_instance(seed);
        let m = inst.state.m();
        let perm: Vec<usize> = (0..m).rev().collect();
        let permuted = inst.state.permute_branches(&perm);
        let kernels = KernelDictionary::from_grams(perm.iter().map(|&j| inst.kernels.grams[j].clone()).collect()).unwrap();
        let ops = FourierOps::new(inst.y.dims());
        let a = objective_terms(&ops, &inst.state, &inst.kernels, &inst.hp).unwrap().total();
        let b = objective_terms(&ops, &permuted, &kernels, &inst.hp).unwrap().total();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }
}
