//! CSV exports and the flat problem fixture format.
//!
//! Fixture layout, both encodings: `m`, `n`, then `A` row-major, `y`,
//! `x_true`, `sigma_v2`. The binary form stores `m` and `n` as little-endian
//! `u64` and every value as little-endian `f64`. The CSV form puts `m,n` on
//! the first line, one row of `A` per line, then one line each for `y`,
//! `x_true` and `sigma_v2`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::algorithms::{StepSchedule, Trajectory};
use crate::error::{Error, Result};
use crate::evaluation::EvalReport;
use crate::problem::SparseProblem;
use crate::scalar::Scalar;
use crate::training::TrainLog;

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().flexible(true).from_writer(w)
}

fn write_rows<W: Write>(w: W, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut out = writer(w);
    out.write_record(header).map_err(csv_err)?;
    for row in rows {
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

fn strings(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|s| s.to_string()).collect()
}

/// Columns `t, objective, mse_db`.
pub fn write_trajectory_csv<F: Scalar, W: Write>(traj: &Trajectory<F>, w: W) -> Result<()> {
    let rows = traj
        .objective
        .iter()
        .zip(&traj.mse_db)
        .enumerate()
        .map(|(t, (o, m))| vec![t.to_string(), o.to_string(), m.to_string()]);
    write_rows(w, &strings(&["t", "objective", "mse_db"]), rows)
}

/// Columns `t, grad`.
pub fn write_gradient_csv<F: Scalar, W: Write>(grad: &[F], w: W) -> Result<()> {
    let rows = grad.iter().enumerate().map(|(t, g)| vec![t.to_string(), g.to_string()]);
    write_rows(w, &strings(&["t", "grad"]), rows)
}

/// Columns `t, alpha`.
pub fn write_schedule_csv<F: Scalar, W: Write>(schedule: &StepSchedule<F>, w: W) -> Result<()> {
    let rows = schedule
        .alphas
        .iter()
        .enumerate()
        .map(|(t, a)| vec![t.to_string(), a.to_string()]);
    write_rows(w, &strings(&["t", "alpha"]), rows)
}

pub fn read_schedule_csv<F: Scalar, R: Read>(r: R) -> Result<StepSchedule<F>> {
    let mut reader = csv::Reader::from_reader(r);
    let headers = reader.headers().map_err(csv_err)?.clone();
    if headers.iter().collect::<Vec<_>>() != ["t", "alpha"] {
        return Err(Error::Format(format!("expected header t,alpha, found {headers:?}")));
    }
    let mut alphas = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = i + 2;
        let t: usize = rec
            .get(0)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::Format(format!("line {line}: bad t")))?;
        if t != i {
            return Err(Error::Format(format!("line {line}: expected t={i}, found {t}")));
        }
        let a: f64 = rec
            .get(1)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::Format(format!("line {line}: bad alpha")))?;
        alphas.push(F::of(a));
    }
    Ok(StepSchedule::from_vec(alphas))
}

pub fn read_schedule_file<F: Scalar>(path: &Path) -> Result<StepSchedule<F>> {
    read_schedule_csv(BufReader::new(File::open(path)?))
}

/// Columns `stage, update, loss`.
pub fn write_train_log_csv<F: Scalar, W: Write>(log: &TrainLog<F>, w: W) -> Result<()> {
    let rows = log
        .records
        .iter()
        .map(|r| vec![r.stage.to_string(), r.update.to_string(), r.loss.to_string()]);
    write_rows(w, &strings(&["stage", "update", "loss"]), rows)
}

/// Writes `mse.csv`, `objective.csv` and `stepsize.csv` into `dir`, one
/// column per variant.
pub fn write_panels<F: Scalar>(report: &EvalReport<F>, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut header = vec!["t".to_string()];
    header.extend(report.variants.iter().map(|v| v.label.clone()));

    let panel = |name: &str, len: usize, value: &dyn Fn(usize, usize) -> F| -> Result<()> {
        let file = BufWriter::new(File::create(dir.join(name))?);
        let rows = (0..len).map(|t| {
            let mut row = vec![t.to_string()];
            row.extend((0..report.variants.len()).map(|v| value(v, t).to_string()));
            row
        });
        write_rows(file, &header, rows)
    };
    let len = report.t_steps + 1;
    panel("mse.csv", len, &|v, t| report.variants[v].mse_db[t])?;
    panel("objective.csv", len, &|v, t| report.variants[v].objective[t])?;
    panel("stepsize.csv", report.t_steps, &|v, t| report.variants[v].schedule.alphas[t])?;
    Ok(())
}

fn problem_values<F: Scalar>(p: &SparseProblem<F>) -> impl Iterator<Item = F> + '_ {
    p.a.a
        .iter()
        .chain(p.y.iter())
        .chain(p.x_true.iter())
        .copied()
        .chain(std::iter::once(p.sigma_v2))
}

pub fn write_problem_binary<F: Scalar, W: Write>(p: &SparseProblem<F>, mut w: W) -> Result<()> {
    w.write_all(&(p.m() as u64).to_le_bytes())?;
    w.write_all(&(p.n() as u64).to_le_bytes())?;
    for v in problem_values(p) {
        w.write_all(&v.as_f64().to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn assemble<F: Scalar>(m: usize, n: usize, values: Vec<f64>) -> Result<SparseProblem<F>> {
    let expect = m * n + m + n + 1;
    if values.len() != expect {
        return Err(Error::Format(format!(
            "expected {expect} values for a {m}x{n} problem, found {}",
            values.len()
        )));
    }
    let conv: Vec<F> = values.into_iter().map(F::of).collect();
    let (a, rest) = conv.split_at(m * n);
    let (y, rest) = rest.split_at(m);
    let (x, rest) = rest.split_at(n);
    let a = Array2::from_shape_vec((m, n), a.to_vec()).map_err(|e| Error::Format(e.to_string()))?;
    SparseProblem::from_parts(a, Array1::from(y.to_vec()), Array1::from(x.to_vec()), rest[0])
}

pub fn read_problem_binary<F: Scalar, R: Read>(mut r: R) -> Result<SparseProblem<F>> {
    let mut word = [0u8; 8];
    r.read_exact(&mut word)?;
    let m = u64::from_le_bytes(word) as usize;
    r.read_exact(&mut word)?;
    let n = u64::from_le_bytes(word) as usize;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if rest.len() % 8 != 0 {
        return Err(Error::Format("trailing bytes after the last value".into()));
    }
    let values = rest
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    assemble(m, n, values)
}

pub fn write_problem_csv<F: Scalar, W: Write>(p: &SparseProblem<F>, w: W) -> Result<()> {
    let mut out = writer(w);
    let fmt = |v: F| v.as_f64().to_string();
    out.write_record([p.m().to_string(), p.n().to_string()]).map_err(csv_err)?;
    for row in p.a.a.rows() {
        out.write_record(row.iter().map(|&v| fmt(v))).map_err(csv_err)?;
    }
    out.write_record(p.y.iter().map(|&v| fmt(v))).map_err(csv_err)?;
    out.write_record(p.x_true.iter().map(|&v| fmt(v))).map_err(csv_err)?;
    out.write_record([fmt(p.sigma_v2)]).map_err(csv_err)?;
    out.flush()?;
    Ok(())
}

pub fn read_problem_csv<F: Scalar, R: Read>(r: R) -> Result<SparseProblem<F>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(r);
    let mut records = reader.records();
    let dims = records
        .next()
        .ok_or_else(|| Error::Format("empty fixture".into()))?
        .map_err(csv_err)?;
    let parse_dim = |i: usize| -> Result<usize> {
        dims.get(i)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::Format("first line must be m,n".into()))
    };
    let (m, n) = (parse_dim(0)?, parse_dim(1)?);
    let mut values = Vec::with_capacity(m * n + m + n + 1);
    for rec in records {
        let rec = rec.map_err(csv_err)?;
        for field in rec.iter() {
            values.push(
                field
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Format(format!("bad value {field:?}: {e}")))?,
            );
        }
    }
    assemble(m, n, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithms::{run_solver, RecordFlags, Regularizer};
    use crate::problem::{generate_problem, ProblemConfig};
    use crate::rng::stream;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn fixtures_round_trip(seed in 0u64..1000, m in 1usize..6, extra in 1usize..6) {
            let cfg = ProblemConfig { n: m + extra, m, ..Default::default() };
            let p: SparseProblem<f64> = generate_problem(&cfg, &mut stream(seed, 0)).unwrap();
            let mut bin = Vec::new();
            write_problem_binary(&p, &mut bin).unwrap();
            prop_assert_eq!(&read_problem_binary::<f64, _>(&bin[..]).unwrap(), &p);
            let mut text = Vec::new();
            write_problem_csv(&p, &mut text).unwrap();
            prop_assert_eq!(&read_problem_csv::<f64, _>(&text[..]).unwrap(), &p);
        }

        #[test]
        fn schedules_round_trip(alphas in prop::collection::vec(0.0f64..10.0, 0..40)) {
            let s = StepSchedule::from_vec(alphas);
            let mut buf = Vec::new();
            write_schedule_csv(&s, &mut buf).unwrap();
            prop_assert_eq!(read_schedule_csv::<f64, _>(&buf[..]).unwrap(), s);
        }
    }

    #[test]
    fn truncated_fixture_is_rejected() {
        let cfg = ProblemConfig { n: 4, m: 2, ..Default::default() };
        let p: SparseProblem<f64> = generate_problem(&cfg, &mut stream(1, 0)).unwrap();
        let mut bin = Vec::new();
        write_problem_binary(&p, &mut bin).unwrap();
        bin.truncate(bin.len() - 8);
        assert!(matches!(read_problem_binary::<f64, _>(&bin[..]), Err(Error::Format(_))));
    }

    #[test]
    fn trajectory_csv_layout() {
        let cfg = ProblemConfig { n: 10, m: 5, ..Default::default() };
        let p: SparseProblem<f64> = generate_problem(&cfg, &mut stream(1, 0)).unwrap();
        let traj = run_solver(&p, &StepSchedule::constant(3, 0.2), &Regularizer::ista_default(), 3, RecordFlags::METRICS).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&traj, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,objective,mse_db");
        assert_eq!(lines.len(), 5);
        assert!(lines[4].starts_with("3,"));
    }

    #[test]
    fn schedule_csv_rejects_gaps() {
        let text = "t,alpha\n0,0.1\n2,0.2\n";
        assert!(matches!(read_schedule_csv::<f64, _>(text.as_bytes()), Err(Error::Format(_))));
    }
}
