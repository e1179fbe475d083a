//! Ensemble evaluation: per-iteration MSE(dB) and objective curves averaged
//! over many (matrix, signal) draws, for baseline and learned schedules.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rayon::prelude::*;

use crate::algorithms::{run_solver, RecordFlags, Regularizer, StepSchedule};
use crate::error::{Error, Result};
use crate::problem::{generate_matrix, generate_signal, LipschitzEstimate, ProblemConfig};
use crate::rng::StreamRng;
use crate::scalar::Scalar;
use crate::unfold::Execution;

/// Reported instead of `−∞` when the estimate is exact.
pub const MSE_FLOOR_DB: f64 = -150.0;

/// Fixed multiple of `1/L` used by the aggressive constant-step baseline.
pub const AGGRESSIVE_STEP_FACTOR: f64 = 2.1;

/// `10·log10(‖x̂ − x*‖² / N)`.
pub fn mse_db<F: Scalar>(x_hat: &[F], x_true: &[F]) -> F {
    debug_assert_eq!(x_hat.len(), x_true.len());
    let err = x_hat
        .iter()
        .zip(x_true)
        .fold(F::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b));
    if err == F::zero() {
        return F::of(MSE_FLOOR_DB);
    }
    F::of(10.0) * (err / F::of(x_hat.len() as f64)).log10()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variant<F> {
    pub label: String,
    pub schedule: StepSchedule<F>,
    pub reg: Regularizer<F>,
}

impl<F: Scalar> Variant<F> {
    pub fn new(label: impl Into<String>, schedule: StepSchedule<F>, reg: Regularizer<F>) -> Self {
        Self {
            label: label.into(),
            schedule,
            reg,
        }
    }
}

/// The two constant-step baselines, `1/L` and `2.1/L`.
pub fn baseline_variants<F: Scalar>(reg: &Regularizer<F>, lipschitz: &LipschitzEstimate<F>, len: usize) -> Vec<Variant<F>> {
    let name = reg.kind.algorithm_name();
    let inv = lipschitz.inverse();
    vec![
        Variant::new(format!("{name}-1/L"), StepSchedule::constant(len, inv), *reg),
        Variant::new(
            format!("{name}-{AGGRESSIVE_STEP_FACTOR}/L"),
            StepSchedule::constant(len, F::of(AGGRESSIVE_STEP_FACTOR) * inv),
            *reg,
        ),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig<F> {
    pub n_matrices: usize,
    pub n_signals_per_matrix: usize,
    pub t_steps: usize,
    pub variants: Vec<Variant<F>>,
    pub seed: u64,
}

impl<F: Scalar> EvalConfig<F> {
    pub fn validate(&self) -> Result<()> {
        if self.n_matrices == 0 || self.n_signals_per_matrix == 0 {
            return Err(Error::InvalidConfig("evaluation needs at least one matrix and one signal".into()));
        }
        if self.variants.is_empty() {
            return Err(Error::InvalidConfig("no variants to evaluate".into()));
        }
        for v in &self.variants {
            v.reg.validate()?;
            if v.schedule.len() < self.t_steps {
                return Err(Error::InvalidConfig(format!(
                    "schedule '{}' has {} entries, {} needed",
                    v.label,
                    v.schedule.len(),
                    self.t_steps
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantReport<F> {
    pub label: String,
    /// Mean over non-divergent runs, index `t = 0..=t_steps`.
    pub mse_db: Vec<F>,
    pub objective: Vec<F>,
    pub averaged: usize,
    pub divergent: usize,
    pub schedule: StepSchedule<F>,
}

impl<F: Scalar> VariantReport<F> {
    pub fn final_mse_db(&self) -> F {
        *self.mse_db.last().unwrap()
    }

    pub fn final_objective(&self) -> F {
        *self.objective.last().unwrap()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport<F> {
    pub t_steps: usize,
    pub variants: Vec<VariantReport<F>>,
}

impl<F: Scalar> EvalReport<F> {
    pub fn variant(&self, label: &str) -> Option<&VariantReport<F>> {
        self.variants.iter().find(|v| v.label == label)
    }
}

#[derive(Clone)]
struct Partial<F> {
    mse: Vec<F>,
    objective: Vec<F>,
    averaged: usize,
    divergent: usize,
}

impl<F: Scalar> Partial<F> {
    fn new(len: usize) -> Self {
        Self {
            mse: vec![F::zero(); len],
            objective: vec![F::zero(); len],
            averaged: 0,
            divergent: 0,
        }
    }

    fn absorb(&mut self, other: &Partial<F>) {
        for (a, &b) in self.mse.iter_mut().zip(&other.mse) {
            *a += b;
        }
        for (a, &b) in self.objective.iter_mut().zip(&other.objective) {
            *a += b;
        }
        self.averaged += other.averaged;
        self.divergent += other.divergent;
    }
}

fn evaluate_matrix<F: Scalar>(
    config: &EvalConfig<F>,
    problem_config: &ProblemConfig,
    seed: u64,
) -> Result<Vec<Partial<F>>> {
    let mut rng = StreamRng::seed_from_u64(seed);
    let a = Arc::new(generate_matrix::<F>(problem_config, &mut rng)?);
    let len = config.t_steps + 1;
    let mut partials = vec![Partial::new(len); config.variants.len()];
    for _ in 0..config.n_signals_per_matrix {
        // One noise realization per instance, shared by every variant.
        let problem = generate_signal(problem_config, &a, &mut rng)?;
        for (variant, part) in config.variants.iter().zip(partials.iter_mut()) {
            match run_solver(&problem, &variant.schedule, &variant.reg, config.t_steps, RecordFlags::METRICS) {
                Ok(traj)
                    if traj.objective.iter().all(|v| v.is_finite())
                        && traj.mse_db.iter().all(|v| v.is_finite()) =>
                {
                    for (acc, &v) in part.mse.iter_mut().zip(&traj.mse_db) {
                        *acc += v;
                    }
                    for (acc, &v) in part.objective.iter_mut().zip(&traj.objective) {
                        *acc += v;
                    }
                    part.averaged += 1;
                }
                Ok(_) | Err(Error::Divergence { .. }) => part.divergent += 1,
                Err(e) => return Err(e),
            }
        }
    }
    Ok(partials)
}

/// Runs every variant on `n_matrices × n_signals_per_matrix` fresh instances.
///
/// One seed per matrix is drawn from `rng` up front, so the instances (and
/// the reduction order, matrix by matrix) do not depend on `exec`.
pub fn evaluate<F: Scalar>(
    config: &EvalConfig<F>,
    problem_config: &ProblemConfig,
    rng: &mut StreamRng,
    exec: Execution,
) -> Result<EvalReport<F>> {
    config.validate()?;
    problem_config.validate()?;
    let seeds: Vec<u64> = (0..config.n_matrices).map(|_| rng.random()).collect();
    let per_matrix: Vec<Vec<Partial<F>>> = match exec {
        Execution::Sequential => seeds
            .iter()
            .map(|&s| evaluate_matrix(config, problem_config, s))
            .collect::<Result<_>>()?,
        Execution::Parallel => seeds
            .par_iter()
            .map(|&s| evaluate_matrix(config, problem_config, s))
            .collect::<Result<_>>()?,
    };
    let len = config.t_steps + 1;
    let mut totals = vec![Partial::new(len); config.variants.len()];
    for partials in &per_matrix {
        for (total, part) in totals.iter_mut().zip(partials) {
            total.absorb(part);
        }
    }
    let variants = config
        .variants
        .iter()
        .zip(totals)
        .map(|(variant, total)| {
            let count = F::of(total.averaged as f64);
            let mean = |v: Vec<F>| -> Vec<F> {
                if total.averaged == 0 {
                    vec![F::nan(); v.len()]
                } else {
                    v.into_iter().map(|s| s / count).collect()
                }
            };
            VariantReport {
                label: variant.label.clone(),
                mse_db: mean(total.mse),
                objective: mean(total.objective),
                averaged: total.averaged,
                divergent: total.divergent,
                schedule: variant.schedule.clone(),
            }
        })
        .collect();
    Ok(EvalReport {
        t_steps: config.t_steps,
        variants,
    })
}

/// First index at which `curve` is at or below `target`.
pub fn first_reach<F: Scalar>(curve: &[F], target: F) -> Option<usize> {
    curve.iter().position(|&v| v <= target)
}
