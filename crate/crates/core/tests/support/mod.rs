//! Plain-loop reference implementation of the unrolled solver, kept
//! independent of the library's Gram-matrix route.

#![allow(dead_code)]

use unfold_core::{LossKind, RegularizerKind, SparseProblem};

pub struct Dense {
    pub a: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub x_true: Vec<f64>,
}

impl Dense {
    pub fn of(p: &SparseProblem<f64>) -> Self {
        let a = p.a.a.rows().into_iter().map(|r| r.to_vec()).collect();
        Self {
            a,
            y: p.y.to_vec(),
            x_true: p.x_true.to_vec(),
        }
    }

    fn residual(&self, x: &[f64]) -> Vec<f64> {
        self.a
            .iter()
            .zip(&self.y)
            .map(|(row, yi)| row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() - yi)
            .collect()
    }

    /// Aᵀ(Ax − y) by direct summation.
    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        let r = self.residual(x);
        (0..x.len())
            .map(|j| self.a.iter().zip(&r).map(|(row, ri)| row[j] * ri).sum())
            .collect()
    }

    pub fn objective(&self, x: &[f64], kind: RegularizerKind, lambda: f64) -> f64 {
        let fit = 0.5 * self.residual(x).iter().map(|v| v * v).sum::<f64>();
        let pen = match kind {
            RegularizerKind::L1 => x.iter().map(|v| v.abs()).sum::<f64>(),
            RegularizerKind::L0 => x.iter().filter(|v| **v != 0.0).count() as f64,
        };
        fit + lambda * pen
    }
}

pub fn threshold_level(kind: RegularizerKind, lambda: f64, eps: f64, alpha: f64) -> f64 {
    match kind {
        RegularizerKind::L1 => lambda * alpha,
        RegularizerKind::L0 => (2.0 * lambda * alpha + eps).sqrt(),
    }
}

fn shrink(kind: RegularizerKind, v: f64, level: f64) -> f64 {
    match kind {
        RegularizerKind::L1 => v.signum() * (v.abs() - level).max(0.0),
        RegularizerKind::L0 => {
            if v.abs() >= level {
                v
            } else {
                0.0
            }
        }
    }
}

/// Runs `alphas.len()` iterations from zero. Returns the output and the
/// smallest gap between any pre-threshold entry and its threshold.
pub fn unroll(p: &Dense, kind: RegularizerKind, lambda: f64, eps: f64, alphas: &[f64]) -> (Vec<f64>, f64) {
    let mut x = vec![0.0; p.x_true.len()];
    let mut gap = f64::INFINITY;
    for &alpha in alphas {
        let g = p.grad(&x);
        let level = threshold_level(kind, lambda, eps, alpha);
        x = x
            .iter()
            .zip(&g)
            .map(|(xi, gi)| {
                let r = xi - alpha * gi;
                gap = gap.min((r.abs() - level).abs());
                shrink(kind, r, level)
            })
            .collect();
    }
    (x, gap)
}

/// Batch loss with the `1/(N_b·N)` prefactor.
pub fn batch_loss(batch: &[Dense], kind: RegularizerKind, lambda: f64, eps: f64, loss: LossKind, alphas: &[f64]) -> f64 {
    let n = batch[0].x_true.len();
    let total: f64 = batch
        .iter()
        .map(|p| {
            let (x, _) = unroll(p, kind, lambda, eps, alphas);
            match loss {
                LossKind::Supervised => x.iter().zip(&p.x_true).map(|(a, b)| (a - b) * (a - b)).sum(),
                LossKind::Unsupervised => p.objective(&x, kind, lambda),
            }
        })
        .sum();
    total / (batch.len() * n) as f64
}

pub fn min_gap(batch: &[Dense], kind: RegularizerKind, lambda: f64, eps: f64, alphas: &[f64]) -> f64 {
    batch
        .iter()
        .map(|p| unroll(p, kind, lambda, eps, alphas).1)
        .fold(f64::INFINITY, f64::min)
}

/// Central differences of the batch loss in every step size.
pub fn finite_difference(
    batch: &[Dense],
    kind: RegularizerKind,
    lambda: f64,
    eps: f64,
    loss: LossKind,
    alphas: &[f64],
    h: f64,
) -> Vec<f64> {
    (0..alphas.len())
        .map(|t| {
            let mut plus = alphas.to_vec();
            let mut minus = alphas.to_vec();
            plus[t] += h;
            minus[t] -= h;
            (batch_loss(batch, kind, lambda, eps, loss, &plus) - batch_loss(batch, kind, lambda, eps, loss, &minus))
                / (2.0 * h)
        })
        .collect()
}

pub fn relative_error(analytic: &[f64], reference: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let scale = reference.iter().map(|v| v * v).sum::<f64>().sqrt();
    diff / scale.max(1e-12)
}

pub struct SweepOutcome {
    pub accepted: usize,
    pub skipped: usize,
    pub worst: f64,
    pub worst_case: String,
}

/// Compares library gradients against finite differences on random small
/// batches for every algorithm, loss and `T ∈ {1, 3, 5}`, redrawing
/// points that sit within `kink` of a threshold.
pub fn gradient_sweep(per_cell: usize, seed: u64, h: f64, kink: f64) -> SweepOutcome {
    use rand::Rng;
    use unfold_core::unfold::loss_and_gradient;
    use unfold_core::{generate_problem, linalg, ProblemConfig, Regularizer, StepSchedule, Execution};

    let config = ProblemConfig {
        n: 12,
        m: 8,
        p: 0.3,
        snr_db: 20.0,
        seed,
    };
    let mut rng = unfold_core::stream(seed, 1000);
    let mut out = SweepOutcome {
        accepted: 0,
        skipped: 0,
        worst: 0.0,
        worst_case: String::new(),
    };
    let regs = [Regularizer::l1(0.05), Regularizer::l0(0.01, 1e-10)];
    for reg in regs {
        for loss in [LossKind::Supervised, LossKind::Unsupervised] {
            for t in [1usize, 3, 5] {
                let mut done = 0;
                while done < per_cell {
                    let first = generate_problem::<f64>(&config, &mut rng).unwrap();
                    let mut batch = vec![first];
                    for _ in 0..2 {
                        let sig = unfold_core::problem::generate_signal(&config, &batch[0].a, &mut rng).unwrap();
                        batch.push(sig);
                    }
                    let l = linalg::lambda_max(&batch[0].a.a).unwrap();
                    let alphas: Vec<f64> = (0..t).map(|_| rng.random_range(0.2..1.5) / l).collect();
                    let dense: Vec<Dense> = batch.iter().map(Dense::of).collect();
                    if min_gap(&dense, reg.kind, reg.lambda, reg.epsilon_guard, &alphas) < kink {
                        out.skipped += 1;
                        continue;
                    }
                    let schedule = StepSchedule::from_vec(alphas.clone());
                    let (_, grad) =
                        loss_and_gradient(&batch, &schedule, &reg, t, loss, Execution::Sequential).unwrap();
                    let fd = finite_difference(&dense, reg.kind, reg.lambda, reg.epsilon_guard, loss, &alphas, h);
                    let err = relative_error(&grad, &fd);
                    if err > out.worst || err.is_nan() {
                        out.worst = if err.is_nan() { f64::INFINITY } else { err };
                        out.worst_case = format!("{:?} {:?} T={t} analytic={grad:?} fd={fd:?}", reg.kind, loss);
                    }
                    done += 1;
                    out.accepted += 1;
                }
            }
        }
    }
    out
}
