//! Successive convex approximation over the block variables `(X, Z, A_1, …, A_Q, B)`.
//!
//! Every outer iteration computes all half-updates from the current state
//! (Jacobi ordering), then moves each block to `γ·half + (1 − γ)·current`.
//! Both endpoints satisfy the affine, block-diagonal and data-consistency
//! constraints, so every iterate does too.

mod b_update;
mod updates;

use std::time::Instant;

use crate::error::{Error, Result};
use crate::linalg::is_finite;
use crate::manifold::KernelDictionary;
use crate::metrics::{evaluate, MetricReport};
use crate::model::{init_state_with, objective_with, FactorState, Hyperparams, ModelConfig};
use crate::sampling::SamplingMask;
use crate::tensor::{ComplexTensor3, Direction, FourierOps};
use crate::{CMat, Complex64};

pub use b_update::{admm_penalty, column_objective, gram_scale, update_b, update_b_with_dictionary, BUpdate};
pub use updates::{update_a1, update_aq, update_x, update_x_with, update_z, update_z_with, LinearUpdate};

/// Consecutive small relative changes needed to stop early.
pub const STALL_WINDOW: usize = 5;

/// `γ_{n+1} = γ_n(1 − ζγ_n)`.
pub fn gamma_step(gamma: f64, zeta: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::param(format!("γ = {gamma} outside (0, 1]")));
    }
    if !(zeta > 0.0 && zeta < 1.0) {
        return Err(Error::param(format!("ζ = {zeta} outside (0, 1)")));
    }
    Ok(gamma * (1.0 - zeta * gamma))
}

/// One row of the solver trace. Row `n = 0` describes the initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationReport {
    pub n: usize,
    /// Step used to reach this iterate (`γ0` for the initial row).
    pub gamma: f64,
    pub objective: f64,
    pub rel_change: f64,
    pub b_iterations: usize,
    pub b_primal: f64,
    pub b_dual: f64,
    pub b_converged: bool,
    /// Largest relative normal-equation residual of the `A_q` solves.
    pub a_residual: f64,
    /// Largest deviation of sampled k-space entries from the data.
    pub consistency: f64,
    /// Wall time of the iteration; kept out of the CSV trace.
    pub seconds: f64,
}

pub const TRACE_HEADER: &str = "n,gamma,objective,rel_change,b_iterations,b_primal,b_dual,b_converged,a_residual,consistency";

/// Trace CSV. Wall times are excluded so that repeated runs give identical files.
pub fn trace_csv(trace: &[IterationReport]) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in trace {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.n,
            r.gamma,
            r.objective,
            r.rel_change,
            r.b_iterations,
            r.b_primal,
            r.b_dual,
            u8::from(r.b_converged),
            r.a_residual,
            r.consistency
        ));
    }
    out
}

/// Per-iteration wall times as `n,seconds`.
pub fn timing_csv(trace: &[IterationReport]) -> String {
    let mut out = String::from("n,seconds\n");
    for r in trace {
        out.push_str(&format!("{},{:.6}\n", r.n, r.seconds));
    }
    out
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub state: FactorState,
    pub trace: Vec<IterationReport>,
    /// Non-fatal inner-solver warnings, prefixed with the iteration index.
    pub warnings: Vec<String>,
}

impl Solution {
    pub fn final_objective(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |r| r.objective)
    }
}

struct HalfStep {
    x: CMat,
    z: CMat,
    a1: LinearUpdate<CMat>,
    inner: Vec<LinearUpdate<Vec<CMat>>>,
    b: BUpdate,
}

fn finite_or(ok: bool, iteration: usize, subtask: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Divergence {
            iteration,
            subtask: subtask.to_string(),
        })
    }
}

fn half_step(
    ops: &FourierOps,
    state: &FactorState,
    kernels: &KernelDictionary,
    mask: &SamplingMask,
    y: &ComplexTensor3,
    hp: &Hyperparams,
    iteration: usize,
) -> Result<HalfStep> {
    let ((x, z), (a, b)) = rayon::join(
        || {
            rayon::join(
                || update_x_with(ops, state, kernels, mask, y, hp),
                || update_z_with(ops, state, hp),
            )
        },
        || {
            rayon::join(
                || -> Result<_> {
                    let a1 = update_a1(state, kernels, hp)?;
                    let inner = (2..=state.q())
                        .map(|q| update_aq(state, kernels, hp, q))
                        .collect::<Result<Vec<_>>>()?;
                    Ok((a1, inner))
                },
                || update_b(state, kernels, hp),
            )
        },
    );
    let (x, z, (a1, inner), b) = (x?, z?, a?, b?);
    finite_or(is_finite(&x), iteration, "X")?;
    finite_or(is_finite(&z), iteration, "Z")?;
    finite_or(is_finite(&a1.value), iteration, "A_1")?;
    for (i, u) in inner.iter().enumerate() {
        finite_or(u.value.iter().all(is_finite), iteration, &format!("A_{}", i + 2))?;
    }
    finite_or(b.blocks.iter().all(is_finite), iteration, "B")?;
    Ok(HalfStep { x, z, a1, inner, b })
}

fn blend(half: &CMat, current: &CMat, gamma: f64) -> CMat {
    half * Complex64::new(gamma, 0.0) + current * Complex64::new(1.0 - gamma, 0.0)
}

fn combine(half: &HalfStep, state: &FactorState, gamma: f64) -> FactorState {
    FactorState {
        x: blend(&half.x, &state.x, gamma),
        z: blend(&half.z, &state.z, gamma),
        a1: blend(&half.a1.value, &state.a1, gamma),
        inner: half
            .inner
            .iter()
            .zip(&state.inner)
            .map(|(h, s)| h.value.iter().zip(s).map(|(hb, sb)| blend(hb, sb, gamma)).collect())
            .collect(),
        b: half.b.blocks.iter().zip(&state.b).map(|(h, s)| blend(h, s, gamma)).collect(),
    }
}

fn max_consistency(ops: &FourierOps, x: &CMat, mask: &SamplingMask, y: &ComplexTensor3) -> f64 {
    crate::model::consistency_error(ops, x, mask, y)
}

fn rel_change(prev: f64, next: f64) -> f64 {
    (next - prev).abs() / prev.abs().max(f64::MIN_POSITIVE)
}

/// Runs the solver from `init_state(seed)`.
pub fn sca_solve(
    config: &ModelConfig,
    kernels: &KernelDictionary,
    mask: &SamplingMask,
    y: &ComplexTensor3,
    hp: &Hyperparams,
    seed: u64,
) -> Result<Solution> {
    sca_solve_observed(config, kernels, mask, y, hp, seed, |_, _| Ok(()))
}

/// [`sca_solve`] calling `observer(n, state)` on the initial state and on every iterate.
pub fn sca_solve_observed(
    config: &ModelConfig,
    kernels: &KernelDictionary,
    mask: &SamplingMask,
    y: &ComplexTensor3,
    hp: &Hyperparams,
    seed: u64,
    mut observer: impl FnMut(usize, &FactorState) -> Result<()>,
) -> Result<Solution> {
    hp.validate()?;
    let ops = FourierOps::new(config.dims);
    let mut state = init_state_with(&ops, config, kernels, mask, y, seed)?;
    let mut objective = objective_with(&ops, &state, kernels, mask, y, hp)?;
    finite_or(objective.is_finite(), 0, "objective")?;
    observer(0, &state)?;

    let mut trace = vec![IterationReport {
        n: 0,
        gamma: hp.gamma0,
        objective,
        rel_change: 0.0,
        b_iterations: 0,
        b_primal: 0.0,
        b_dual: 0.0,
        b_converged: true,
        a_residual: 0.0,
        consistency: max_consistency(&ops, &state.x, mask, y),
        seconds: 0.0,
    }];
    let mut warnings = Vec::new();
    let mut gamma = hp.gamma0;
    let mut stalled = 0;

    for n in 1..=hp.max_outer {
        let start = Instant::now();
        let half = half_step(&ops, &state, kernels, mask, y, hp, n)?;
        gamma = gamma_step(gamma, hp.zeta)?;
        state = combine(&half, &state, gamma);

        let next = objective_with(&ops, &state, kernels, mask, y, hp)?;
        finite_or(next.is_finite(), n, "objective")?;
        let change = rel_change(objective, next);
        objective = next;
        if let Some(w) = half.b.warning() {
            warnings.push(format!("iteration {n}: {w}"));
        }
        let a_residual = std::iter::once(half.a1.residual)
            .chain(half.inner.iter().map(|u| u.residual))
            .fold(0.0, f64::max);
        trace.push(IterationReport {
            n,
            gamma,
            objective,
            rel_change: change,
            b_iterations: half.b.iterations,
            b_primal: half.b.primal_residual,
            b_dual: half.b.dual_residual,
            b_converged: half.b.converged,
            a_residual,
            consistency: max_consistency(&ops, &state.x, mask, y),
            seconds: start.elapsed().as_secs_f64(),
        });
        observer(n, &state)?;

        stalled = if change < hp.tol_rel { stalled + 1 } else { 0 };
        if stalled >= STALL_WINDOW {
            break;
        }
    }
    Ok(Solution { state, trace, warnings })
}

/// Solution of one restart, with metrics when a reference was given.
#[derive(Debug, Clone)]
pub struct RestartRun {
    pub seed: u64,
    pub solution: Solution,
    pub image: ComplexTensor3,
    pub metrics: Option<MetricReport>,
}

#[derive(Debug, Clone)]
pub struct RestartSummary {
    pub runs: Vec<RestartRun>,
    /// Index into `runs` of the lowest final objective (first on ties).
    pub best: usize,
    pub mean: Option<MetricReport>,
}

/// Runs the solver once per seed and aggregates the metrics against `truth`.
pub fn multi_restart(
    config: &ModelConfig,
    kernels: &KernelDictionary,
    mask: &SamplingMask,
    y: &ComplexTensor3,
    hp: &Hyperparams,
    seeds: &[u64],
    truth: Option<&ComplexTensor3>,
) -> Result<RestartSummary> {
    if seeds.is_empty() {
        return Err(Error::param("at least one seed is required"));
    }
    let attribute = |seed: u64| move |e: Error| Error::Seeded { seed, source: Box::new(e) };
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let solution = sca_solve(config, kernels, mask, y, hp, seed).map_err(attribute(seed))?;
        let image = ComplexTensor3::from_matrix(config.dims, solution.state.x.clone())?;
        let metrics = truth.map(|t| evaluate(t, &image)).transpose().map_err(attribute(seed))?;
        runs.push(RestartRun {
            seed,
            solution,
            image,
            metrics,
        });
    }
    let best = (0..runs.len())
        .min_by(|&a, &b| {
            runs[a]
                .solution
                .final_objective()
                .total_cmp(&runs[b].solution.final_objective())
        })
        .unwrap_or(0);
    let reports: Vec<MetricReport> = runs.iter().filter_map(|r| r.metrics).collect();
    Ok(RestartSummary {
        mean: MetricReport::mean(&reports),
        runs,
        best,
    })
}

/// Zero-filled baseline: inverse DFT of the sampled data.
pub fn zero_filled(mask: &SamplingMask, y: &ComplexTensor3) -> Result<ComplexTensor3> {
    let ys = crate::sampling::apply_sampling(mask, y)?;
    Ok(crate::tensor::dft2_frames(&ys, Direction::Inverse))
}
