use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use unfold_core::evaluation::{baseline_variants, Variant};
use unfold_core::io::{
    read_schedule_file, write_panels, write_problem_binary, write_problem_csv, write_schedule_csv,
    write_train_log_csv,
};
use unfold_core::rng::{purpose, stream};
use unfold_core::training::train_into;
use unfold_core::{
    average_lipschitz, evaluate, generate_problem, EvalConfig, EvalReport, Execution, LipschitzEstimate,
    StepSchedule, TrainLog,
};

use crate::spec::ExperimentSpec;
use crate::CliError;

/// `blob <len>\0<bytes>` hashed with SHA-256, hex encoded.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    status: &'a str,
    label: &'a str,
    seed: u64,
    tool_version: &'a str,
    spec: &'a ExperimentSpec,
    lipschitz: f64,
    lipschitz_matrices: usize,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    extra: BTreeMap<String, serde_json::Value>,
    /// File name → content hash, for every artifact in the directory.
    files: BTreeMap<String, String>,
}

fn write_manifest(dir: &Path, manifest: &mut Manifest<'_>, files: &[&str]) -> Result<(), CliError> {
    for name in files {
        let path = dir.join(name);
        if path.exists() {
            manifest.files.insert(name.to_string(), content_hash(&std::fs::read(&path)?));
        }
    }
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    std::fs::write(dir.join("manifest.json"), text + "\n")?;
    Ok(())
}

fn lipschitz_for(spec: &ExperimentSpec) -> Result<LipschitzEstimate<f64>, CliError> {
    let mut rng = stream(spec.seed, purpose::LIPSCHITZ);
    Ok(average_lipschitz(&spec.problem_config(), spec.train.lipschitz_matrices, &mut rng)?)
}

fn create_out(out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out)
        .map_err(|e| CliError::Spec(format!("cannot create output directory {}: {e}", out.display())))
}

pub struct TrainArtifacts {
    pub lipschitz: LipschitzEstimate<f64>,
    pub schedule: StepSchedule<f64>,
    pub log: TrainLog<f64>,
}

/// Estimates `L`, trains the schedule, and writes `schedule.csv`,
/// `trainlog.csv`, `spec.toml` and `manifest.json` into `out`. An aborted
/// run still writes its partial log and a manifest with status `aborted`.
pub fn run_train(
    spec: &ExperimentSpec,
    out: &Path,
    mut progress: impl FnMut(usize, f64),
) -> Result<TrainArtifacts, CliError> {
    spec.validate()?;
    create_out(out)?;
    std::fs::write(out.join("spec.toml"), spec.to_toml())?;
    let lipschitz = lipschitz_for(spec)?;
    let config = spec.train_config();
    let mut log = TrainLog::default();
    let mut rng = stream(spec.seed, purpose::TRAINING);
    let updates = config.updates_per_stage;
    let result = train_into(&config, &spec.problem_config(), &lipschitz, &mut rng, &mut log, |rec, _| {
        if rec.update + 1 == updates {
            progress(rec.stage, rec.loss);
        }
    });

    write_train_log_csv(&log, BufWriter::new(File::create(out.join("trainlog.csv"))?))?;
    let status = if result.is_ok() { "complete" } else { "aborted" };
    if result.is_ok() {
        write_schedule_csv(&log.final_schedule, BufWriter::new(File::create(out.join("schedule.csv"))?))?;
    }
    let mut extra = BTreeMap::new();
    extra.insert("updates".into(), log.records.len().into());
    extra.insert("retries".into(), log.retries.into());
    extra.insert("trainlog_digest".into(), log.digest().into());
    let mut manifest = Manifest {
        command: "train",
        status,
        label: &spec.label,
        seed: spec.seed,
        tool_version: env!("CARGO_PKG_VERSION"),
        spec,
        lipschitz: lipschitz.l_avg,
        lipschitz_matrices: lipschitz.k_matrices,
        extra,
        files: BTreeMap::new(),
    };
    write_manifest(out, &mut manifest, &["schedule.csv", "trainlog.csv", "spec.toml"])?;
    result?;
    Ok(TrainArtifacts {
        lipschitz,
        schedule: log.final_schedule.clone(),
        log,
    })
}

/// A learned schedule to evaluate next to the baselines.
#[derive(Debug, Clone)]
pub struct LearnedSchedule {
    pub label: String,
    pub path: PathBuf,
}

impl LearnedSchedule {
    /// `label=path`, or a bare path labelled by its directory (for
    /// `.../<label>/schedule.csv`) or file stem.
    pub fn parse(arg: &str) -> Self {
        if let Some((label, path)) = arg.split_once('=') {
            return Self {
                label: label.to_string(),
                path: PathBuf::from(path),
            };
        }
        let path = PathBuf::from(arg);
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("learned");
        let label = if stem == "schedule" {
            path.parent()
                .and_then(|p| p.file_name())
                .and_then(|s| s.to_str())
                .unwrap_or(stem)
        } else {
            stem
        };
        Self {
            label: label.to_string(),
            path,
        }
    }
}

/// Evaluates the two constant baselines plus `learned` and writes
/// `mse.csv`, `objective.csv`, `stepsize.csv`, `divergence.csv` and
/// `manifest.json` into `out`.
pub fn run_eval(
    spec: &ExperimentSpec,
    learned: &[LearnedSchedule],
    out: &Path,
    threads: usize,
) -> Result<EvalReport<f64>, CliError> {
    spec.validate()?;
    let t_steps = spec.eval.t_steps;
    let reg = spec.regularizer();
    let mut extra_variants = Vec::new();
    for l in learned {
        let schedule = read_schedule_file::<f64>(&l.path)
            .map_err(|e| CliError::Spec(format!("cannot read schedule {}: {e}", l.path.display())))?;
        if schedule.len() < t_steps {
            return Err(CliError::Spec(format!(
                "schedule {} has {} entries but evaluation needs {t_steps}",
                l.path.display(),
                schedule.len()
            )));
        }
        extra_variants.push(Variant::new(l.label.clone(), schedule, reg));
    }
    create_out(out)?;
    let lipschitz = lipschitz_for(spec)?;
    let mut variants = baseline_variants(&reg, &lipschitz, t_steps);
    variants.extend(extra_variants);
    let config = EvalConfig {
        n_matrices: spec.eval.n_matrices,
        n_signals_per_matrix: spec.eval.n_signals_per_matrix,
        t_steps,
        variants,
        seed: spec.seed,
    };
    let mut rng = stream(spec.seed, purpose::EVALUATION);
    let problem_config = spec.problem_config();
    let report = if threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| CliError::Spec(format!("cannot start {threads} threads: {e}")))?;
        pool.install(|| evaluate(&config, &problem_config, &mut rng, Execution::Parallel))?
    } else {
        evaluate(&config, &problem_config, &mut rng, Execution::Sequential)?
    };
    write_panels(&report, out)?;
    let mut div = BufWriter::new(File::create(out.join("divergence.csv"))?);
    writeln!(div, "variant,averaged,divergent")?;
    for v in &report.variants {
        writeln!(div, "{},{},{}", v.label, v.averaged, v.divergent)?;
    }
    div.flush()?;
    drop(div);

    let mut extra = BTreeMap::new();
    let inputs: BTreeMap<String, String> = learned
        .iter()
        .map(|l| Ok((l.label.clone(), content_hash(&std::fs::read(&l.path)?))))
        .collect::<Result<_, std::io::Error>>()?;
    extra.insert("learned_schedules".into(), serde_json::to_value(inputs).unwrap());
    let mut manifest = Manifest {
        command: "eval",
        status: "complete",
        label: &spec.label,
        seed: spec.seed,
        tool_version: env!("CARGO_PKG_VERSION"),
        spec,
        lipschitz: lipschitz.l_avg,
        lipschitz_matrices: lipschitz.k_matrices,
        extra,
        files: BTreeMap::new(),
    };
    write_manifest(out, &mut manifest, &["mse.csv", "objective.csv", "stepsize.csv", "divergence.csv"])?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixtureFormat {
    Csv,
    Binary,
}

/// Dumps `count` independent problems as `problem_XXXX.{csv,bin}`.
pub fn run_generate(
    spec: &ExperimentSpec,
    out: &Path,
    count: usize,
    format: FixtureFormat,
) -> Result<Vec<PathBuf>, CliError> {
    spec.validate()?;
    create_out(out)?;
    let mut rng = stream(spec.seed, purpose::PROBLEM);
    let mut written = Vec::with_capacity(count);
    for i in 0..count {
        let problem = generate_problem::<f64>(&spec.problem_config(), &mut rng)?;
        let (name, ext) = (format!("problem_{i:04}"), match format {
            FixtureFormat::Csv => "csv",
            FixtureFormat::Binary => "bin",
        });
        let path = out.join(format!("{name}.{ext}"));
        let w = BufWriter::new(File::create(&path)?);
        match format {
            FixtureFormat::Csv => write_problem_csv(&problem, w)?,
            FixtureFormat::Binary => write_problem_binary(&problem, w)?,
        }
        written.push(path);
    }
    Ok(written)
}

/// Human-readable listing of the presets, one TOML block each.
pub fn presets_text(desk_scale: bool) -> String {
    let mut text = String::new();
    for p in crate::spec::presets() {
        let p = if desk_scale { p.desk_scale() } else { p };
        text.push_str(&format!("# preset: {}\n", p.label));
        text.push_str(&p.to_toml());
        text.push('\n');
    }
    text
}
