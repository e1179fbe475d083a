//! Experiment spec files: TOML with a `[problem]`, `[train]` and optional
//! `[eval]` section. Unknown keys are errors.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use unfold_core::{Execution, LossKind, ProblemConfig, Regularizer, RegularizerKind, TrainConfig};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Ista,
    Iht,
}

impl Algorithm {
    pub fn kind(self) -> RegularizerKind {
        match self {
            Algorithm::Ista => RegularizerKind::L1,
            Algorithm::Iht => RegularizerKind::L0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    Supervised,
    Unsupervised,
}

impl From<Loss> for LossKind {
    fn from(l: Loss) -> Self {
        match l {
            Loss::Supervised => LossKind::Supervised,
            Loss::Unsupervised => LossKind::Unsupervised,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub n: usize,
    pub m: usize,
    pub p: f64,
    pub snr_db: f64,
}

fn default_true() -> bool {
    true
}

fn default_epsilon() -> f64 {
    unfold_core::algorithms::DEFAULT_EPSILON_GUARD
}

fn default_lipschitz_matrices() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub algorithm: Algorithm,
    pub loss: Loss,
    pub lambda: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon_guard: f64,
    pub lr: f64,
    pub t_max: usize,
    pub updates_per_stage: usize,
    pub batch_size: usize,
    #[serde(default = "default_true")]
    pub resample_matrix: bool,
    #[serde(default = "default_lipschitz_matrices")]
    pub lipschitz_matrices: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub n_matrices: usize,
    pub n_signals_per_matrix: usize,
    pub t_steps: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            n_matrices: 100,
            n_signals_per_matrix: 100,
            t_steps: 120,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub label: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub problem: ProblemSection,
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
}

impl ExperimentSpec {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let spec: Self = toml::from_str(text).map_err(|e| CliError::Spec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Spec(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Spec(msg) => CliError::Spec(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.label.trim().is_empty() {
            return Err(CliError::Spec("label must be nonempty".into()));
        }
        self.problem_config()
            .validate()
            .map_err(|e| CliError::Spec(e.to_string()))?;
        let t = &self.train;
        if t.t_max == 0 || t.batch_size == 0 || t.lipschitz_matrices == 0 {
            return Err(CliError::Spec("t_max, batch_size and lipschitz_matrices must be at least 1".into()));
        }
        self.regularizer()
            .validate()
            .map_err(|e| CliError::Spec(e.to_string()))?;
        if !(t.lr > 0.0) {
            return Err(CliError::Spec(format!("lr must be positive, got {}", t.lr)));
        }
        let e = &self.eval;
        if e.n_matrices == 0 || e.n_signals_per_matrix == 0 {
            return Err(CliError::Spec("eval counts must be at least 1".into()));
        }
        Ok(())
    }

    pub fn problem_config(&self) -> ProblemConfig {
        ProblemConfig {
            n: self.problem.n,
            m: self.problem.m,
            p: self.problem.p,
            snr_db: self.problem.snr_db,
            seed: self.seed,
        }
    }

    pub fn regularizer(&self) -> Regularizer<f64> {
        match self.train.algorithm {
            Algorithm::Ista => Regularizer::l1(self.train.lambda),
            Algorithm::Iht => Regularizer::l0(self.train.lambda, self.train.epsilon_guard),
        }
    }

    pub fn train_config(&self) -> TrainConfig<f64> {
        TrainConfig {
            t_max: self.train.t_max,
            updates_per_stage: self.train.updates_per_stage,
            batch_size: self.train.batch_size,
            lr: self.train.lr,
            loss: self.train.loss.into(),
            reg: self.regularizer(),
            resample_matrix: self.train.resample_matrix,
            seed: self.seed,
            exec: Execution::Sequential,
            track_reference: false,
        }
    }

    /// CI-sized variant: n=100, m=70, T_max=30, 20 matrices × 20 signals.
    pub fn desk_scale(mut self) -> Self {
        self.problem.n = 100;
        self.problem.m = 70;
        self.train.t_max = 30;
        self.eval = EvalSection {
            n_matrices: 20,
            n_signals_per_matrix: 20,
            t_steps: 30,
        };
        self
    }
}

/// The four built-in configurations.
pub fn presets() -> Vec<ExperimentSpec> {
    let mut out = Vec::new();
    for algorithm in [Algorithm::Ista, Algorithm::Iht] {
        for loss in [Loss::Supervised, Loss::Unsupervised] {
            let (lambda, lr) = match algorithm {
                Algorithm::Ista => (0.05, 5e-3),
                Algorithm::Iht => (0.01, 1e-3),
            };
            let alg = match algorithm {
                Algorithm::Ista => "ista",
                Algorithm::Iht => "iht",
            };
            let loss_name = match loss {
                Loss::Supervised => "supervised",
                Loss::Unsupervised => "unsupervised",
            };
            out.push(ExperimentSpec {
                label: format!("{alg}-{loss_name}"),
                seed: 0,
                out: None,
                problem: ProblemSection {
                    n: 300,
                    m: 210,
                    p: 0.1,
                    snr_db: 20.0,
                },
                train: TrainSection {
                    algorithm,
                    loss,
                    lambda,
                    epsilon_guard: default_epsilon(),
                    lr,
                    t_max: 120,
                    updates_per_stage: 100,
                    batch_size: 50,
                    resample_matrix: true,
                    lipschitz_matrices: 100,
                },
                eval: EvalSection::default(),
            });
        }
    }
    out
}

pub fn preset(name: &str) -> Option<ExperimentSpec> {
    presets().into_iter().find(|p| p.label == name)
}

#[cfg(test)]
mod tests {
    use super::*;

    const VALID: &str = r#"
label = "demo"
seed = 3

[problem]
n = 40
m = 20
p = 0.1
snr_db = 20.0

[train]
algorithm = "ista"
loss = "unsupervised"
lambda = 0.05
lr = 0.005
t_max = 5
updates_per_stage = 2
batch_size = 4
"#;

    #[test]
    fn parses_with_defaults() {
        let s = ExperimentSpec::parse(VALID).unwrap();
        assert_eq!(s.train.lipschitz_matrices, 100);
        assert!(s.train.resample_matrix);
        assert_eq!(s.eval, EvalSection::default());
        assert_eq!(s.regularizer().kind, RegularizerKind::L1);
    }

    #[test]
    fn missing_key_is_named() {
        let text = VALID.replace("n = 40\n", "");
        match ExperimentSpec::parse(&text) {
            Err(CliError::Spec(msg)) => assert!(msg.contains("missing field `n`"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_key_is_rejected_with_line() {
        let text = VALID.replace("lr = 0.005", "learning_rate = 0.005");
        match ExperimentSpec::parse(&text) {
            Err(CliError::Spec(msg)) => {
                assert!(msg.contains("learning_rate"), "{msg}");
                assert!(msg.contains("line"), "{msg}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(ExperimentSpec::parse(&VALID.replace("m = 20", "m = 40")).is_err());
        assert!(ExperimentSpec::parse(&VALID.replace("lambda = 0.05", "lambda = -1.0")).is_err());
        assert!(ExperimentSpec::parse(&VALID.replace("\"demo\"", "\"  \"")).is_err());
    }

    #[test]
    fn effective_spec_round_trips() {
        for p in presets() {
            let again = ExperimentSpec::parse(&p.to_toml()).unwrap();
            assert_eq!(again, p);
        }
        let noiseless = ExperimentSpec::parse(&VALID.replace("snr_db = 20.0", "snr_db = inf")).unwrap();
        assert_eq!(ExperimentSpec::parse(&noiseless.to_toml()).unwrap(), noiseless);
    }

    #[test]
    fn preset_values() {
        let all = presets();
        assert_eq!(all.len(), 4);
        let ista = preset("ista-supervised").unwrap();
        assert_eq!(ista.train.lambda, 0.05);
        assert_eq!(ista.train.t_max, 120);
        let iht = preset("iht-unsupervised").unwrap();
        assert_eq!(iht.train.lr, 1e-3);
        assert_eq!(iht.train.epsilon_guard, 1e-10);
        assert_eq!(iht.train.lambda, 0.01);
        let desk = ista.desk_scale();
        assert_eq!((desk.problem.n, desk.problem.m, desk.train.t_max), (100, 70, 30));
        assert_eq!(desk.eval.n_matrices, 20);
    }
}
