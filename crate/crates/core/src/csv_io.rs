//! CSV formats for instances, datasets and result tables.
//!
//! Floats are written in `Debug` form: the shortest decimal that round-trips,
//! in scientific notation for very small or large magnitudes. Identical runs
//! therefore produce identical bytes. Every table row carries the seed
//! that produced it in a trailing `seed` column; the bare matrix and vector
//! files carry it in a leading `# seed=<u64>` comment line instead.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};

use crate::convex_oracle::ConvexSolution;
use crate::error::{check_len, Error, Result};
use crate::instances::{support_of, LinearInstance, NoisyDataset};
use crate::landscape::CriticalPointReport;
use crate::numerics::{svd_compact, DenseMatrix, DEFAULT_RANK_TOLERANCE};
use crate::recovery_theory::{recovery_errors, RecoveryCertificate};
use crate::sop_classifier::MetricsHistory;
use crate::sop_linear::TrajectoryRecord;

/// Header plus string rows; the common shape of every emitted table.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) -> Result<()> {
        check_len("csv row", row.len(), self.header.len())?;
        self.rows.push(row);
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Values of one column parsed as `f64`.
    pub fn f64_column(&self, name: &str) -> Result<Vec<f64>> {
        let c = self
            .column(name)
            .ok_or_else(|| Error::Parse(format!("missing column {name}")))?;
        self.rows.iter().map(|r| parse_f64(&r[c])).collect()
    }

    pub fn write_to(&self, out: impl Write) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        self.write_to(File::create(path)?)
    }

    /// Parses a headed CSV; lines starting with `#` are skipped.
    pub fn read_from(input: impl Read) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
        let header = r.headers()?.iter().map(str::to_string).collect();
        let mut table = Self { header, rows: Vec::new() };
        for rec in r.records() {
            table.push(rec?.iter().map(str::to_string).collect())?;
        }
        Ok(table)
    }
}

pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

fn fmt_opt_f64(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|e| Error::Parse(format!("{s:?}: {e}")))
}

fn parse_usize(s: &str) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|e| Error::Parse(format!("{s:?}: {e}")))
}

fn seed_comment(out: &mut impl Write, seed: u64) -> Result<()> {
    writeln!(out, "# seed={seed}")?;
    Ok(())
}

/// Seed from a leading `# seed=` line, if any, plus the remaining text.
fn split_seed_comment(text: &str) -> Result<(Option<u64>, String)> {
    let mut seed = None;
    let mut body = String::new();
    for line in text.lines() {
        if let Some(rest) = line.trim().strip_prefix('#') {
            if let Some(v) = rest.trim().strip_prefix("seed=") {
                seed = Some(v.trim().parse().map_err(|e| Error::Parse(format!("seed: {e}")))?);
            }
            continue;
        }
        if !line.trim().is_empty() {
            body.push_str(line);
            body.push('\n');
        }
    }
    Ok((seed, body))
}

/// `rows,cols` header, the two dimensions, then one matrix row per line.
pub fn write_matrix(m: &DenseMatrix, seed: u64, mut out: impl Write) -> Result<()> {
    seed_comment(&mut out, seed)?;
    writeln!(out, "rows,cols")?;
    writeln!(out, "{},{}", m.rows(), m.cols())?;
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|&x| fmt_f64(x)).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn read_matrix(mut input: impl Read) -> Result<DenseMatrix> {
    let mut text = String::new();
    input.read_to_string(&mut text)?;
    let (_, body) = split_seed_comment(&text)?;
    let mut lines = body.lines();
    if lines.next().map(str::trim) != Some("rows,cols") {
        return Err(Error::Parse("matrix file must start with a rows,cols header".into()));
    }
    let dims = lines
        .next()
        .ok_or_else(|| Error::Parse("missing matrix dimensions".into()))?;
    let dims: Vec<usize> = dims.split(',').map(parse_usize).collect::<Result<_>>()?;
    let [rows, cols] = dims[..] else {
        return Err(Error::Parse("expected two matrix dimensions".into()));
    };
    let mut data = Vec::with_capacity(rows * cols);
    for line in lines {
        data.extend(line.split(',').map(parse_f64).collect::<Result<Vec<_>>>()?);
    }
    DenseMatrix::new(rows, cols, data)
}

/// One value per line.
pub fn write_vector(v: &[f64], seed: u64, mut out: impl Write) -> Result<()> {
    seed_comment(&mut out, seed)?;
    for &x in v {
        writeln!(out, "{}", fmt_f64(x))?;
    }
    Ok(())
}

pub fn read_vector(mut input: impl Read) -> Result<Vec<f64>> {
    let mut text = String::new();
    input.read_to_string(&mut text)?;
    let (_, body) = split_seed_comment(&text)?;
    body.lines().map(parse_f64).collect()
}

/// The four files of an instance stored under `base`.
pub fn instance_paths(base: &Path) -> [PathBuf; 4] {
    let with = |suffix: &str| {
        let mut name = base.as_os_str().to_owned();
        name.push(suffix);
        PathBuf::from(name)
    };
    [with(".J.csv"), with(".y.csv"), with(".theta_star.csv"), with(".s_star.csv")]
}

pub fn write_instance(inst: &LinearInstance, base: &Path) -> Result<()> {
    let [j, y, t, s] = instance_paths(base);
    write_matrix(&inst.j, inst.seed, File::create(j)?)?;
    write_vector(&inst.y, inst.seed, File::create(y)?)?;
    write_vector(&inst.theta_star, inst.seed, File::create(t)?)?;
    write_vector(&inst.s_star, inst.seed, File::create(s)?)?;
    Ok(())
}

/// Reads the files written by [`write_instance`]; rank and sparsity are
/// recomputed from the data.
pub fn read_instance(base: &Path) -> Result<LinearInstance> {
    let [jp, yp, tp, sp] = instance_paths(base);
    let mut text = String::new();
    BufReader::new(File::open(&jp)?).read_to_string(&mut text)?;
    let (seed, _) = split_seed_comment(&text)?;
    let j = read_matrix(text.as_bytes())?;
    let y = read_vector(File::open(yp)?)?;
    let theta_star = read_vector(File::open(tp)?)?;
    let s_star = read_vector(File::open(sp)?)?;
    check_len("y", y.len(), j.rows())?;
    check_len("theta_star", theta_star.len(), j.cols())?;
    check_len("s_star", s_star.len(), j.rows())?;
    let rank = svd_compact(&j, DEFAULT_RANK_TOLERANCE)?.rank();
    Ok(LinearInstance {
        sparsity: support_of(&s_star).len(),
        j,
        theta_star,
        s_star,
        y,
        rank,
        seed: seed.unwrap_or(0),
    })
}

/// `sample_id, feature_0..feature_{d−1}, clean_class, noisy_class, flipped, seed`.
pub fn dataset_table(ds: &NoisyDataset) -> Result<CsvTable> {
    let mut header = vec!["sample_id".to_string()];
    header.extend((0..ds.dim()).map(|j| format!("feature_{j}")));
    header.extend(["clean_class", "noisy_class", "flipped", "seed"].map(String::from));
    let mut table = CsvTable { header, rows: Vec::new() };
    for i in 0..ds.len() {
        let mut row = vec![i.to_string()];
        row.extend(ds.inputs[i].iter().map(|&x| fmt_f64(x)));
        row.push(ds.clean_labels[i].to_string());
        row.push(ds.noisy_labels[i].to_string());
        row.push((ds.flipped[i] as u8).to_string());
        row.push(ds.seed.to_string());
        table.push(row)?;
    }
    Ok(table)
}

/// Inverse of [`dataset_table`]; the class count is one more than the largest label.
pub fn dataset_from_table(table: &CsvTable) -> Result<NoisyDataset> {
    let col = |name: &str| {
        table
            .column(name)
            .ok_or_else(|| Error::Parse(format!("missing column {name}")))
    };
    let (clean_c, noisy_c, flip_c, seed_c) = (col("clean_class")?, col("noisy_class")?, col("flipped")?, col("seed")?);
    let feature_cols: Vec<usize> = (0..)
        .map_while(|j| table.column(&format!("feature_{j}")))
        .collect();
    let mut ds = NoisyDataset {
        inputs: Vec::with_capacity(table.rows.len()),
        clean_labels: Vec::new(),
        noisy_labels: Vec::new(),
        flipped: Vec::new(),
        num_classes: 0,
        seed: 0,
    };
    for row in &table.rows {
        ds.inputs.push(feature_cols.iter().map(|&c| parse_f64(&row[c])).collect::<Result<_>>()?);
        ds.clean_labels.push(parse_usize(&row[clean_c])?);
        ds.noisy_labels.push(parse_usize(&row[noisy_c])?);
        ds.flipped.push(parse_usize(&row[flip_c])? != 0);
        ds.seed = row[seed_c].parse().map_err(|e| Error::Parse(format!("seed: {e}")))?;
    }
    ds.num_classes = ds.clean_labels.iter().chain(&ds.noisy_labels).max().map_or(0, |m| m + 1);
    Ok(ds)
}

pub fn trajectory_table(records: &[TrajectoryRecord], seed: u64) -> Result<CsvTable> {
    let mut t = CsvTable::new(&["iter", "objective", "residual_inf", "theta_norm", "s_l1", "seed"]);
    for r in records {
        t.push(vec![
            r.iter.to_string(),
            fmt_f64(r.objective),
            fmt_f64(r.residual_inf),
            fmt_f64(r.theta_norm),
            fmt_f64(r.s_l1),
            seed.to_string(),
        ])?;
    }
    Ok(t)
}

pub const SOLUTION_HEADER: [&str; 7] = ["lambda", "eps_theta", "eps_s", "kkt_residual", "iterations", "status", "seed"];

/// Adds one solution row, with errors measured against the planted truth.
pub fn push_solution_row(table: &mut CsvTable, sol: &ConvexSolution, inst: &LinearInstance) -> Result<()> {
    let err = recovery_errors(&sol.theta, &sol.s, &inst.theta_star, &inst.s_star)?;
    table.push(vec![
        fmt_f64(sol.lambda),
        fmt_f64(err.eps_theta),
        fmt_f64(err.eps_s),
        fmt_f64(sol.kkt_residual),
        sol.iterations.to_string(),
        sol.status.as_str().to_string(),
        inst.seed.to_string(),
    ])
}

pub const REPORT_HEADER: [&str; 5] = ["grad_norm", "classification", "witness_index", "curvature_value", "seed"];

pub fn report_row(report: &CriticalPointReport, seed: u64) -> Vec<String> {
    vec![
        fmt_f64(report.grad_norm),
        report.classification.as_str().to_string(),
        report.witness_index.map(|i| i.to_string()).unwrap_or_default(),
        fmt_opt_f64(report.curvature_value),
        seed.to_string(),
    ]
}

pub const CERTIFICATE_HEADER: [&str; 9] = [
    "n",
    "rank",
    "k",
    "mu",
    "incoherence_ok",
    "rho_bound",
    "nsp_sampled",
    "lambda_zero",
    "seed",
];

pub fn certificate_row(c: &RecoveryCertificate, seed: u64) -> Vec<String> {
    vec![
        c.n.to_string(),
        c.rank.to_string(),
        c.k.to_string(),
        fmt_f64(c.mu),
        c.incoherence_ok.to_string(),
        fmt_opt_f64(c.rho_bound),
        fmt_opt_f64(c.nsp_sampled),
        fmt_opt_f64(c.lambda_zero),
        seed.to_string(),
    ]
}

pub fn metrics_table(history: &MetricsHistory, seed: u64) -> Result<CsvTable> {
    let mut t = CsvTable::new(&[
        "epoch",
        "train_acc_noisy",
        "train_acc_clean",
        "test_acc",
        "mean_s_l1",
        "ce_loss",
        "mse_loss",
        "seed",
    ]);
    for m in &history.epochs {
        t.push(vec![
            m.epoch.to_string(),
            fmt_f64(m.train_acc_noisy),
            fmt_f64(m.train_acc_clean),
            fmt_f64(m.test_acc),
            fmt_f64(m.mean_s_l1),
            fmt_f64(m.ce_loss),
            fmt_f64(m.mse_loss),
            seed.to_string(),
        ])?;
    }
    Ok(t)
}
