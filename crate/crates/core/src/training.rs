//! Incremental training of the step schedule with Adam and a nonnegativity
//! projection.

use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::algorithms::{Regularizer, RegularizerKind, StepSchedule};
use crate::error::{Error, Result};
use crate::problem::{generate_batch, generate_matrix, generate_signal, LipschitzEstimate, ProblemConfig, SensingMatrix, SparseProblem};
use crate::rng::StreamRng;
use crate::scalar::Scalar;
use crate::unfold::{forward_unrolled_with, loss_and_gradient, loss_value, Execution, LossKind};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig<F> {
    pub t_max: usize,
    pub updates_per_stage: usize,
    pub batch_size: usize,
    pub lr: F,
    pub loss: LossKind,
    pub reg: Regularizer<F>,
    /// Draw a new matrix for every minibatch; otherwise one matrix per run.
    pub resample_matrix: bool,
    pub seed: u64,
    pub exec: Execution,
    /// Also evaluate the initial constant schedule on every minibatch.
    pub track_reference: bool,
}

impl<F: Scalar> TrainConfig<F> {
    /// Published settings: `T_max = 120`, 100 updates per stage, `N_b = 50`,
    /// lr 5e-3 for ISTA and 1e-3 for IHT.
    pub fn standard(kind: RegularizerKind, loss: LossKind) -> Self {
        let (reg, lr) = match kind {
            RegularizerKind::L1 => (Regularizer::ista_default(), F::of(5e-3)),
            RegularizerKind::L0 => (Regularizer::iht_default(), F::of(1e-3)),
        };
        Self {
            t_max: 120,
            updates_per_stage: 100,
            batch_size: 50,
            lr,
            loss,
            reg,
            resample_matrix: true,
            seed: 0,
            exec: Execution::Sequential,
            track_reference: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_max == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("t_max and batch_size must be at least 1".into()));
        }
        if !(self.lr > F::zero()) || !self.lr.is_finite() {
            return Err(Error::InvalidConfig(format!("learning rate must be positive, got {}", self.lr)));
        }
        self.reg.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    pub m: Vec<F>,
    pub v: Vec<F>,
    pub step: u64,
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![F::zero(); len],
            v: vec![F::zero(); len],
            step: 0,
            beta1: F::of(0.9),
            beta2: F::of(0.999),
            eps: F::of(1e-8),
        }
    }
}

/// One bias-corrected Adam step on `params[..grads.len()]`. Entries past the
/// gradient length keep their values and moments.
pub fn adam_update<F: Scalar>(params: &mut [F], grads: &[F], state: &mut AdamState<F>, lr: F) -> Result<()> {
    if grads.len() > params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::InvalidArgument(format!(
            "shape mismatch: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite gradient at index {i}")));
    }
    state.step += 1;
    let t = state.step as i32;
    let one = F::one();
    let c1 = one - state.beta1.powi(t);
    let c2 = one - state.beta2.powi(t);
    for (i, &g) in grads.iter().enumerate() {
        state.m[i] = state.beta1 * state.m[i] + (one - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (one - state.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

pub fn project_nonnegative<F: Scalar>(schedule: &mut StepSchedule<F>) {
    for a in schedule.alphas.iter_mut() {
        if *a < F::zero() {
            *a = F::zero();
        }
    }
}

/// Short content hash of a schedule's exact bit pattern.
pub fn schedule_hash<F: Scalar>(schedule: &StepSchedule<F>) -> String {
    let mut h = Sha256::new();
    for a in &schedule.alphas {
        h.update(a.le_bytes());
    }
    h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateRecord<F> {
    /// Number of unrolled layers during this update, `1..=t_max`.
    pub stage: usize,
    pub update: usize,
    pub loss: F,
    /// Loss of the initial schedule on the same minibatch, when tracked.
    pub reference_loss: Option<F>,
    /// Hash of the schedule after this update.
    pub schedule_hash: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog<F> {
    pub records: Vec<UpdateRecord<F>>,
    /// Minibatches redrawn after a divergent forward pass.
    pub retries: usize,
    pub final_schedule: StepSchedule<F>,
}

impl<F: Scalar> TrainLog<F> {
    /// Hash over every record, for replay checks.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for r in &self.records {
            h.update((r.stage as u64).to_le_bytes());
            h.update((r.update as u64).to_le_bytes());
            h.update(r.loss.le_bytes());
            h.update(r.schedule_hash.as_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

struct BatchSource<F> {
    fixed: Option<Arc<SensingMatrix<F>>>,
}

impl<F: Scalar> BatchSource<F> {
    fn draw(&self, pc: &ProblemConfig, size: usize, rng: &mut StreamRng) -> Result<Vec<SparseProblem<F>>> {
        match &self.fixed {
            Some(a) => (0..size).map(|_| generate_signal(pc, a, rng)).collect(),
            None => generate_batch(pc, size, rng),
        }
    }
}

/// Trains the step schedule one unrolled layer at a time.
///
/// The schedule starts at `1/L` everywhere. At stage `T` every update draws a
/// minibatch, runs `T` layers, and moves `α_0..α_{T-1}` by one Adam step
/// followed by clipping at zero; later entries are left alone. One Adam state
/// spans the whole run.
pub fn incremental_train<F: Scalar>(
    config: &TrainConfig<F>,
    problem_config: &ProblemConfig,
    lipschitz: &LipschitzEstimate<F>,
    rng: &mut StreamRng,
) -> Result<(StepSchedule<F>, TrainLog<F>)> {
    let mut log = TrainLog::default();
    train_into(config, problem_config, lipschitz, rng, &mut log, |_, _| {})?;
    Ok((log.final_schedule.clone(), log))
}

/// Same as [`incremental_train`], writing into a caller-owned log so the
/// records survive an aborted run. `log.final_schedule` always holds the
/// latest schedule; `observe` sees every record with the schedule it hashes.
pub fn train_into<F: Scalar>(
    config: &TrainConfig<F>,
    problem_config: &ProblemConfig,
    lipschitz: &LipschitzEstimate<F>,
    rng: &mut StreamRng,
    log: &mut TrainLog<F>,
    mut observe: impl FnMut(&UpdateRecord<F>, &StepSchedule<F>),
) -> Result<()> {
    config.validate()?;
    problem_config.validate()?;
    let initial = StepSchedule::constant(config.t_max, lipschitz.inverse());
    let mut schedule = initial.clone();
    log.final_schedule = schedule.clone();
    let mut adam = AdamState::new(config.t_max);
    let source = BatchSource {
        fixed: if config.resample_matrix {
            None
        } else {
            Some(Arc::new(generate_matrix(problem_config, rng)?))
        },
    };

    for stage in 1..=config.t_max {
        for update in 0..config.updates_per_stage {
            let mut attempt = 0;
            let (batch, loss, grad) = loop {
                let batch = source.draw(problem_config, config.batch_size, rng)?;
                match loss_and_gradient(&batch, &schedule, &config.reg, stage, config.loss, config.exec) {
                    Ok((loss, grad)) => break (batch, loss, grad),
                    Err(Error::Divergence { iteration }) => {
                        attempt += 1;
                        log.retries += 1;
                        if attempt >= 2 {
                            return Err(Error::Training {
                                stage,
                                update,
                                reason: format!("forward pass diverged at layer {iteration} on two consecutive minibatches"),
                            });
                        }
                    }
                    Err(e) => return Err(e),
                }
            };
            let reference_loss = if config.track_reference {
                let (out, _) = forward_unrolled_with(&batch, &initial, &config.reg, stage, config.exec)?;
                Some(loss_value(&out, &batch, &config.reg, config.loss)?)
            } else {
                None
            };
            adam_update(&mut schedule.alphas, &grad, &mut adam, config.lr).map_err(|e| Error::Training {
                stage,
                update,
                reason: e.to_string(),
            })?;
            project_nonnegative(&mut schedule);
            let record = UpdateRecord {
                stage,
                update,
                loss,
                reference_loss,
                schedule_hash: schedule_hash(&schedule),
            };
            observe(&record, &schedule);
            log.records.push(record);
            log.final_schedule = schedule.clone();
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::average_lipschitz;
    use crate::rng::{purpose, stream};

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut p = vec![0.3, 0.4];
        let mut s = AdamState::new(2);
        adam_update(&mut p, &[0.0, 0.0], &mut s, 0.01).unwrap();
        assert_eq!(p, vec![0.3, 0.4]);
    }

    #[test]
    fn adam_first_step_is_learning_rate() {
        // Bias correction makes the first step lr·g/(|g| + ε).
        let mut p = vec![1.0f64];
        let mut s = AdamState::new(1);
        adam_update(&mut p, &[1.0], &mut s, 5e-3).unwrap();
        let expect = 1.0 - 5e-3 * 1.0 / (1.0 + 1e-8);
        assert!((p[0] - expect).abs() < 1e-15);
        let first = 1.0 - p[0];
        let before = p[0];
        adam_update(&mut p, &[1.0], &mut s, 5e-3).unwrap();
        let second = before - p[0];
        assert!((second - first).abs() <= 0.01 * first);
    }

    #[test]
    fn adam_touches_only_the_gradient_prefix() {
        let mut p = vec![1.0, 2.0, 3.0];
        let mut s = AdamState::new(3);
        adam_update(&mut p, &[0.5], &mut s, 0.1).unwrap();
        assert_eq!(&p[1..], &[2.0, 3.0]);
        assert_eq!(&s.m[1..], &[0.0, 0.0]);
        assert!(adam_update(&mut p, &[f64::NAN], &mut s, 0.1).is_err());
        assert!(adam_update(&mut p, &[0.0; 4], &mut s, 0.1).is_err());
    }

    #[test]
    fn projection_examples() {
        let mut s = StepSchedule::from_vec(vec![0.1, -0.2, 0.3]);
        project_nonnegative(&mut s);
        assert_eq!(s.alphas, vec![0.1, 0.0, 0.3]);
        let mut s = StepSchedule::from_vec(vec![0.1, 0.2]);
        project_nonnegative(&mut s);
        assert_eq!(s.alphas, vec![0.1, 0.2]);
        let mut s = StepSchedule::from_vec(vec![-0.1, -2.0]);
        project_nonnegative(&mut s);
        assert_eq!(s.alphas, vec![0.0, 0.0]);
    }

    fn desk() -> ProblemConfig {
        ProblemConfig { n: 100, m: 70, ..Default::default() }
    }

    fn lipschitz(pc: &ProblemConfig) -> LipschitzEstimate<f64> {
        average_lipschitz(pc, 20, &mut stream(1, purpose::LIPSCHITZ)).unwrap()
    }

    #[test]
    fn zero_updates_keep_initial_schedule() {
        let pc = desk();
        let lip = lipschitz(&pc);
        let cfg = TrainConfig {
            t_max: 7,
            updates_per_stage: 0,
            ..TrainConfig::standard(RegularizerKind::L1, LossKind::Supervised)
        };
        let (sched, log) = incremental_train(&cfg, &pc, &lip, &mut stream(1, purpose::TRAINING)).unwrap();
        assert_eq!(sched, StepSchedule::constant(7, lip.inverse()));
        assert!(log.records.is_empty());
    }

    #[test]
    fn later_entries_wait_for_their_stage() {
        let pc = desk();
        let lip = lipschitz(&pc);
        let cfg = TrainConfig {
            t_max: 6,
            updates_per_stage: 3,
            batch_size: 5,
            ..TrainConfig::standard(RegularizerKind::L1, LossKind::Unsupervised)
        };
        let mut log = TrainLog::default();
        let mut seen = 0;
        train_into(&cfg, &pc, &lip, &mut stream(2, purpose::TRAINING), &mut log, |rec, sched| {
            seen += 1;
            assert!(sched.alphas[rec.stage..].iter().all(|&a| a == lip.inverse()));
            assert!(sched.min().unwrap() >= 0.0);
        })
        .unwrap();
        assert_eq!(seen, 18);
        assert_eq!(log.records.len(), 6 * 3);
        assert!(log.final_schedule.alphas.iter().all(|&a| a != lip.inverse()));
    }

    #[test]
    fn training_is_deterministic() {
        let pc = desk();
        let lip = lipschitz(&pc);
        let cfg = TrainConfig {
            t_max: 5,
            updates_per_stage: 4,
            batch_size: 6,
            ..TrainConfig::standard(RegularizerKind::L0, LossKind::Supervised)
        };
        let (_, a) = incremental_train(&cfg, &pc, &lip, &mut stream(3, purpose::TRAINING)).unwrap();
        let (_, b) = incremental_train(&cfg, &pc, &lip, &mut stream(3, purpose::TRAINING)).unwrap();
        assert_eq!(a.digest(), b.digest());
        let (_, c) = incremental_train(&cfg, &pc, &lip, &mut stream(4, purpose::TRAINING)).unwrap();
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn fixed_matrix_mode_trains() {
        let pc = desk();
        let lip = lipschitz(&pc);
        let cfg = TrainConfig {
            t_max: 4,
            updates_per_stage: 3,
            batch_size: 4,
            resample_matrix: false,
            ..TrainConfig::standard(RegularizerKind::L1, LossKind::Supervised)
        };
        let (sched, log) = incremental_train(&cfg, &pc, &lip, &mut stream(5, purpose::TRAINING)).unwrap();
        assert_eq!(sched.len(), 4);
        assert_eq!(log.records.len(), 12);
    }

    #[test]
    fn persistent_divergence_aborts_with_stage() {
        let pc = desk();
        let lip = LipschitzEstimate { l_avg: 1e-308, k_matrices: 1, per_matrix: vec![1e-308] };
        let cfg = TrainConfig {
            t_max: 3,
            updates_per_stage: 2,
            batch_size: 2,
            ..TrainConfig::standard(RegularizerKind::L1, LossKind::Supervised)
        };
        let mut log = TrainLog::default();
        let err = train_into(&cfg, &pc, &lip, &mut stream(6, purpose::TRAINING), &mut log, |_, _| {}).unwrap_err();
        match err {
            Error::Training { stage, reason, .. } => {
                assert_eq!(stage, 1);
                assert!(reason.contains("two consecutive"), "{reason}");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(log.retries >= 2);
    }

    /// Over the last 10 updates of the final stage the trained schedule beats
    /// the untrained one on the same minibatches.
    #[test]
    fn training_beats_untrained_schedule_at_desk_scale() {
        let pc = desk();
        let lip = lipschitz(&pc);
        for kind in [RegularizerKind::L1, RegularizerKind::L0] {
            for loss in [LossKind::Supervised, LossKind::Unsupervised] {
                let cfg = TrainConfig {
                    t_max: 30,
                    track_reference: true,
                    ..TrainConfig::standard(kind, loss)
                };
                let (_, log) = incremental_train(&cfg, &pc, &lip, &mut stream(7, purpose::TRAINING)).unwrap();
                let tail = &log.records[log.records.len() - 10..];
                assert!(tail.iter().all(|r| r.stage == 30));
                let trained: f64 = tail.iter().map(|r| r.loss).sum::<f64>() / 10.0;
                let reference: f64 = tail.iter().map(|r| r.reference_loss.unwrap()).sum::<f64>() / 10.0;
                assert!(trained < reference, "{kind:?} {loss:?}: {trained} vs {reference}");
            }
        }
    }

    #[test]
    fn held_out_unsupervised_loss_improves() {
        let pc = desk();
        let lip = lipschitz(&pc);
        let cfg = TrainConfig {
            t_max: 30,
            ..TrainConfig::standard(RegularizerKind::L1, LossKind::Unsupervised)
        };
        let (sched, _) = incremental_train(&cfg, &pc, &lip, &mut stream(8, purpose::TRAINING)).unwrap();
        let held_out: Vec<SparseProblem<f64>> = generate_batch(&pc, 50, &mut stream(8, purpose::EVALUATION)).unwrap();
        let eval = |s: &StepSchedule<f64>| {
            let (out, _) = forward_unrolled_with(&held_out, s, &cfg.reg, 30, Execution::Sequential).unwrap();
            loss_value(&out, &held_out, &cfg.reg, LossKind::Unsupervised).unwrap()
        };
        assert!(eval(&sched) <= eval(&StepSchedule::constant(30, lip.inverse())));
    }
}
