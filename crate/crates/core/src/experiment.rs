//! Declarative parameter sweeps: datasets, exact and trained process MPOs,
//! metrics as CSV rows, and log-scale SVG plots.
//!
//! A config is a flat `key = value` file (`#` starts a comment, lists are
//! comma separated). Keys are case-insensitive:
//!
//! | key | meaning | default |
//! |-----|---------|---------|
//! | `experiment_id` | label copied into every CSV row | `experiment` |
//! | `L`, `J`, `J_E`, `h`, `Delta`, `gamma`, `r`, `dt` | model parameters | 3, 4, 1, 0.5, 1.5, 1, 0, 0.1 |
//! | `N` | steps | 6 |
//! | `M_train`, `M_test` | dataset sizes | 1000, 500 |
//! | `sweep_var` | one of `D`, `gamma`, `r`, `J`, `dt`, `M_train` | `D` |
//! | `sweep_values` | values of the sweep variable | empty |
//! | `D` | bond dimensions trained at every point | `1,2,4,8` |
//! | `seed` | base seed | 0 |
//! | `mu` | regularisation weight | `1e-6 · M_train` |
//! | `sweeps` | training sweeps | 10 |
//! | `bootstrap` | bootstrap resamples | 1000 |
//!
//! Every key can be overridden by an environment variable `PROCTENSOR_` +
//! the upper-cased key, e.g. `PROCTENSOR_M_TRAIN=200`.
//!
//! Seeds: training data uses `seed`, test data `seed + 1000003`, and the
//! initial MPO of every training run `seed`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::datagen::{generate_dataset, Dataset};
use crate::eval::{evaluate, Bootstrap, EvalReport, MAX_DISTANCE_STEPS};
use crate::learn::{train, TrainConfig};
use crate::model::ModelParams;
use crate::process::{build_exact_process_mpo, ProcessMpo};
use crate::serialize::{load_dataset, load_process_mpo, save_dataset, save_process_mpo, write_atomic};
use crate::{Error, Result};

pub const ENV_PREFIX: &str = "PROCTENSOR_";
pub const TEST_SEED_OFFSET: u64 = 1_000_003;
pub const EXACT_CUTOFF: f64 = 1e-12;
pub const CSV_FILE: &str = "results.csv";
pub const CSV_HEADER: [&str; 10] = [
    "experiment_id",
    "sweep_var",
    "sweep_value",
    "D",
    "n",
    "metric",
    "value",
    "ci_low",
    "ci_high",
    "seed",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepVar {
    D,
    Gamma,
    R,
    J,
    Dt,
    MTrain,
}

impl SweepVar {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "d" => Self::D,
            "gamma" => Self::Gamma,
            "r" => Self::R,
            "j" => Self::J,
            "dt" => Self::Dt,
            "m_train" => Self::MTrain,
            other => return Err(Error::Validation(format!("unknown sweep variable {other:?}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::D => "D",
            Self::Gamma => "gamma",
            Self::R => "r",
            Self::J => "J",
            Self::Dt => "dt",
            Self::MTrain => "M_train",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub experiment_id: String,
    pub params: ModelParams,
    pub steps: usize,
    pub m_train: usize,
    pub m_test: usize,
    pub sweep_var: SweepVar,
    pub sweep_values: Vec<f64>,
    pub bonds: Vec<usize>,
    pub seed: u64,
    pub mu: Option<f64>,
    pub sweeps: usize,
    pub bootstrap: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment_id: "experiment".into(),
            params: ModelParams::default(),
            steps: 6,
            m_train: 1000,
            m_test: 500,
            sweep_var: SweepVar::D,
            sweep_values: Vec::new(),
            bonds: vec![1, 2, 4, 8],
            seed: 0,
            mu: None,
            sweeps: 10,
            bootstrap: 1000,
        }
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.trim()
        .parse::<f64>()
        .map_err(|_| Error::Validation(format!("{key}: cannot parse {v:?} as a number")))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.trim()
        .parse::<usize>()
        .map_err(|_| Error::Validation(format!("{key}: cannot parse {v:?} as a count")))
}

fn parse_list<T>(key: &str, v: &str, f: impl Fn(&str, &str) -> Result<T>) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| f(key, s))
        .collect()
}

/// Parses `key = value` lines into a lower-cased map.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Validation(format!("line {}: expected key = value, got {raw:?}", i + 1)))?;
        map.insert(k.trim().to_ascii_lowercase(), v.trim().to_string());
    }
    Ok(map)
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Self::from_map(&parse_key_values(text)?)
    }

    /// Parses `text`, then applies `PROCTENSOR_*` overrides from `vars`.
    pub fn parse_with_env<I>(text: &str, vars: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut map = parse_key_values(text)?;
        for (k, v) in vars {
            if let Some(key) = k.strip_prefix(ENV_PREFIX) {
                let key = key.to_ascii_lowercase();
                if KNOWN_KEYS.contains(&key.as_str()) {
                    map.insert(key, v);
                }
            }
        }
        Self::from_map(&map)
    }

    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let mut c = Self::default();
        for (k, v) in map {
            let p = &mut c.params;
            match k.as_str() {
                "experiment_id" => c.experiment_id = v.clone(),
                "l" => p.l = parse_usize(k, v)?,
                "j" => p.j = parse_f64(k, v)?,
                "j_e" => p.j_e = parse_f64(k, v)?,
                "h" => p.h = parse_f64(k, v)?,
                "delta" => p.delta = parse_f64(k, v)?,
                "gamma" => p.gamma = parse_f64(k, v)?,
                "r" => p.r = parse_f64(k, v)?,
                "dt" => p.dt = parse_f64(k, v)?,
                "n" => c.steps = parse_usize(k, v)?,
                "m_train" => c.m_train = parse_usize(k, v)?,
                "m_test" => c.m_test = parse_usize(k, v)?,
                "sweep_var" => c.sweep_var = SweepVar::parse(v)?,
                "sweep_values" => c.sweep_values = parse_list(k, v, parse_f64)?,
                "d" => c.bonds = parse_list(k, v, parse_usize)?,
                "seed" => {
                    c.seed = v
                        .trim()
                        .parse()
                        .map_err(|_| Error::Validation(format!("seed: cannot parse {v:?}")))?
                }
                "mu" => c.mu = Some(parse_f64(k, v)?),
                "sweeps" => c.sweeps = parse_usize(k, v)?,
                "bootstrap" => c.bootstrap = parse_usize(k, v)?,
                other => return Err(Error::Validation(format!("unknown config key {other:?}"))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.steps == 0 || self.m_train == 0 || self.m_test == 0 || self.sweeps == 0 {
            return Err(Error::Validation(
                "N, M_train, M_test and sweeps must be positive".into(),
            ));
        }
        if self.sweep_var != SweepVar::D && (self.bonds.is_empty() || self.bonds.contains(&0)) {
            return Err(Error::Validation(format!("invalid bond list {:?}", self.bonds)));
        }
        if let Some(mu) = self.mu {
            if !(mu >= 0.0 && mu.is_finite()) {
                return Err(Error::Validation(format!("invalid mu {mu}")));
            }
        }
        for point in self.points()? {
            point.params.validate()?;
        }
        Ok(())
    }

    /// One point per distinct physics setting; a `D` sweep is a single
    /// point training every listed bond.
    pub fn points(&self) -> Result<Vec<SweepPoint>> {
        let count = |v: f64| -> Result<usize> {
            if v >= 1.0 && v.fract() == 0.0 && v < 1e9 {
                Ok(v as usize)
            } else {
                Err(Error::Validation(format!(
                    "{}: {v} is not a positive integer",
                    self.sweep_var.name()
                )))
            }
        };
        if self.sweep_values.is_empty() {
            return Ok(Vec::new());
        }
        if self.sweep_var == SweepVar::D {
            let bonds = self
                .sweep_values
                .iter()
                .map(|&v| count(v))
                .collect::<Result<Vec<_>>>()?;
            return Ok(vec![SweepPoint {
                index: 0,
                value: None,
                params: self.params,
                m_train: self.m_train,
                bonds,
            }]);
        }
        self.sweep_values
            .iter()
            .enumerate()
            .map(|(index, &v)| {
                let mut params = self.params;
                let mut m_train = self.m_train;
                match self.sweep_var {
                    SweepVar::Gamma => params.gamma = v,
                    SweepVar::R => params.r = v,
                    SweepVar::J => params.j = v,
                    SweepVar::Dt => params.dt = v,
                    SweepVar::MTrain => m_train = count(v)?,
                    SweepVar::D => unreachable!(),
                }
                Ok(SweepPoint {
                    index,
                    value: Some(v),
                    params,
                    m_train,
                    bonds: self.bonds.clone(),
                })
            })
            .collect()
    }

    pub fn train_config(&self, bond: usize, m_train: usize) -> TrainConfig {
        let mut t = TrainConfig::new(bond, m_train);
        if let Some(mu) = self.mu {
            t.mu = mu;
        }
        t.sweeps = self.sweeps;
        t.seed = self.seed;
        t
    }
}

const KNOWN_KEYS: [&str; 19] = [
    "experiment_id",
    "l",
    "j",
    "j_e",
    "h",
    "delta",
    "gamma",
    "r",
    "dt",
    "n",
    "m_train",
    "m_test",
    "sweep_var",
    "sweep_values",
    "d",
    "seed",
    "mu",
    "sweeps",
    "bootstrap",
];

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub index: usize,
    /// Value of the sweep variable; `None` for a bond sweep.
    pub value: Option<f64>,
    pub params: ModelParams,
    pub m_train: usize,
    pub bonds: Vec<usize>,
}

impl SweepPoint {
    pub fn dir(&self, out: &Path) -> PathBuf {
        out.join(format!("point_{:03}", self.index))
    }
}

/// One CSV record.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvRow {
    pub experiment_id: String,
    pub sweep_var: String,
    pub sweep_value: f64,
    pub bond: usize,
    /// Step index, `None` for the aggregate `all`.
    pub n: Option<usize>,
    pub metric: String,
    pub value: f64,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub seed: u64,
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// CSV text of `rows` with the fixed header.
pub fn csv_string(rows: &[CsvRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).map_err(|e| Error::Format(e.to_string()))?;
    for r in rows {
        w.write_record([
            r.experiment_id.clone(),
            r.sweep_var.clone(),
            r.sweep_value.to_string(),
            r.bond.to_string(),
            r.n.map_or_else(|| "all".to_string(), |n| n.to_string()),
            r.metric.clone(),
            r.value.to_string(),
            fmt_opt(r.ci_low),
            fmt_opt(r.ci_high),
            r.seed.to_string(),
        ])
        .map_err(|e| Error::Format(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

pub fn emit_csv(rows: &[CsvRow], path: &Path) -> Result<()> {
    write_atomic(path, csv_string(rows)?.as_bytes())
}

pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r
        .headers()
        .map_err(|e| Error::Format(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header != CSV_HEADER {
        return Err(Error::Format(format!("unexpected CSV header {header:?}")));
    }
    let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| Error::Format(format!("bad number {s:?}"))) };
    let opt = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            num(s).map(Some)
        }
    };
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| Error::Format(e.to_string()))?;
            Ok(CsvRow {
                experiment_id: rec[0].to_string(),
                sweep_var: rec[1].to_string(),
                sweep_value: num(&rec[2])?,
                bond: rec[3]
                    .parse()
                    .map_err(|_| Error::Format(format!("bad D {:?}", &rec[3])))?,
                n: if &rec[4] == "all" {
                    None
                } else {
                    Some(
                        rec[4]
                            .parse()
                            .map_err(|_| Error::Format(format!("bad n {:?}", &rec[4])))?,
                    )
                },
                metric: rec[5].to_string(),
                value: num(&rec[6])?,
                ci_low: opt(&rec[7])?,
                ci_high: opt(&rec[8])?,
                seed: rec[9]
                    .parse()
                    .map_err(|_| Error::Format(format!("bad seed {:?}", &rec[9])))?,
            })
        })
        .collect()
}

pub fn read_csv(path: &Path) -> Result<Vec<CsvRow>> {
    parse_csv(&fs::read_to_string(path)?)
}

/// Rows of one evaluated (point, bond) pair.
pub fn report_rows(cfg: &ExperimentConfig, point: &SweepPoint, bond: usize, rep: &EvalReport) -> Vec<CsvRow> {
    let row = |n: Option<usize>, metric: &str, value: f64, ci: Option<(f64, f64)>| CsvRow {
        experiment_id: cfg.experiment_id.clone(),
        sweep_var: cfg.sweep_var.name().to_string(),
        sweep_value: point.value.unwrap_or(bond as f64),
        bond,
        n,
        metric: metric.to_string(),
        value,
        ci_low: ci.map(|c| c.0),
        ci_high: ci.map(|c| c.1),
        seed: cfg.seed,
    };
    let mut rows = vec![row(None, "I", rep.i, Some(rep.ci))];
    for (k, (&v, &ci)) in rep.i_n.iter().zip(&rep.ci_n).enumerate() {
        rows.push(row(Some(k + 1), "I_n", v, Some(ci)));
    }
    if let Some(d) = rep.delta_upsilon {
        rows.push(row(None, "Delta_Upsilon", d, None));
    }
    rows.push(row(None, "Delta_Y", rep.delta_y, None));
    rows
}

fn error_row(cfg: &ExperimentConfig, point: &SweepPoint) -> CsvRow {
    CsvRow {
        experiment_id: cfg.experiment_id.clone(),
        sweep_var: cfg.sweep_var.name().to_string(),
        sweep_value: point.value.unwrap_or(f64::NAN),
        bond: 0,
        n: None,
        metric: "error".into(),
        value: f64::NAN,
        ci_low: None,
        ci_high: None,
        seed: cfg.seed,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    GenData,
    BuildExact,
    Train,
    Evaluate,
    Run,
    Plot,
}

impl Stage {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "gen-data" => Self::GenData,
            "build-exact" => Self::BuildExact,
            "train" => Self::Train,
            "evaluate" => Self::Evaluate,
            "run" => Self::Run,
            "plot" => Self::Plot,
            other => return Err(Error::Validation(format!("unknown stage {other:?}"))),
        })
    }
}

fn train_path(dir: &Path) -> PathBuf {
    dir.join("train.ptd")
}

fn test_path(dir: &Path) -> PathBuf {
    dir.join("test.ptd")
}

fn exact_path(dir: &Path) -> PathBuf {
    dir.join("exact.ptm")
}

fn model_path(dir: &Path, bond: usize) -> PathBuf {
    dir.join(format!("trained_D{bond}.ptm"))
}

fn report_path(dir: &Path, bond: usize) -> PathBuf {
    dir.join(format!("train_D{bond}.txt"))
}

fn gen_data(cfg: &ExperimentConfig, point: &SweepPoint, dir: &Path) -> Result<(Dataset, Dataset)> {
    let train = generate_dataset(&point.params, cfg.steps, point.m_train, cfg.seed)?;
    let test = generate_dataset(&point.params, cfg.steps, cfg.m_test, cfg.seed + TEST_SEED_OFFSET)?;
    save_dataset(&train, &train_path(dir))?;
    save_dataset(&test, &test_path(dir))?;
    Ok((train, test))
}

fn build_exact(cfg: &ExperimentConfig, point: &SweepPoint, dir: &Path) -> Result<ProcessMpo> {
    let (u, _) = build_exact_process_mpo(&point.params, cfg.steps, usize::MAX, EXACT_CUTOFF)?;
    save_process_mpo(&u, &exact_path(dir))?;
    Ok(u)
}

fn train_point(cfg: &ExperimentConfig, point: &SweepPoint, dir: &Path, train_set: &Dataset) -> Result<()> {
    for &bond in &point.bonds {
        let (u, report) = train(train_set, &cfg.train_config(bond, point.m_train))?;
        save_process_mpo(&u, &model_path(dir, bond))?;
        write_atomic(&report_path(dir, bond), report.to_text().as_bytes())?;
    }
    Ok(())
}

fn evaluate_point(cfg: &ExperimentConfig, point: &SweepPoint, dir: &Path) -> Result<Vec<CsvRow>> {
    let test = load_dataset(&test_path(dir))?;
    let exact = if cfg.steps <= MAX_DISTANCE_STEPS && exact_path(dir).exists() {
        Some(load_process_mpo(&exact_path(dir))?)
    } else {
        None
    };
    let boot = Bootstrap {
        resamples: cfg.bootstrap,
        seed: cfg.seed,
    };
    let mut rows = Vec::new();
    for &bond in &point.bonds {
        let u = load_process_mpo(&model_path(dir, bond))?;
        let rep = evaluate(&u, exact.as_ref(), &test, boot)?;
        rows.extend(report_rows(cfg, point, bond, &rep));
    }
    Ok(rows)
}

fn run_stage_on_point(cfg: &ExperimentConfig, point: &SweepPoint, out: &Path, stage: Stage) -> Result<Vec<CsvRow>> {
    let dir = point.dir(out);
    fs::create_dir_all(&dir)?;
    match stage {
        Stage::GenData => {
            gen_data(cfg, point, &dir)?;
            Ok(Vec::new())
        }
        Stage::BuildExact => {
            build_exact(cfg, point, &dir)?;
            Ok(Vec::new())
        }
        Stage::Train => {
            let train_set = load_dataset(&train_path(&dir))?;
            train_point(cfg, point, &dir, &train_set)?;
            Ok(Vec::new())
        }
        Stage::Evaluate => evaluate_point(cfg, point, &dir),
        Stage::Run => {
            let (train_set, _) = gen_data(cfg, point, &dir)?;
            if cfg.steps <= MAX_DISTANCE_STEPS {
                build_exact(cfg, point, &dir)?;
            }
            train_point(cfg, point, &dir, &train_set)?;
            evaluate_point(cfg, point, &dir)
        }
        Stage::Plot => Ok(Vec::new()),
    }
}

#[derive(Clone, Debug, Default)]
pub struct Outcome {
    pub rows: Vec<CsvRow>,
    /// `(point index, message)` of every failed point.
    pub failures: Vec<(usize, String)>,
    pub files: Vec<PathBuf>,
}

impl Outcome {
    pub fn success(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Runs `stage` over every sweep point on a pool of `workers` threads.
/// A failing point gets an `error` row and does not stop the others.
pub fn run_stage(cfg: &ExperimentConfig, out: &Path, stage: Stage, workers: usize) -> Result<Outcome> {
    fs::create_dir_all(out)?;
    if stage == Stage::Plot {
        let rows = read_csv(&out.join(CSV_FILE))?;
        let files = emit_plots(&rows, out)?;
        return Ok(Outcome {
            rows,
            failures: Vec::new(),
            files,
        });
    }
    let points = cfg.points()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Validation(format!("cannot build worker pool: {e}")))?;
    let results: Vec<Result<Vec<CsvRow>>> = pool.install(|| {
        use rayon::prelude::*;
        points
            .par_iter()
            .map(|p| run_stage_on_point(cfg, p, out, stage))
            .collect()
    });
    let mut outcome = Outcome::default();
    for (point, res) in points.iter().zip(results) {
        match res {
            Ok(rows) => outcome.rows.extend(rows),
            Err(e) => {
                outcome.failures.push((point.index, e.to_string()));
                outcome.rows.push(error_row(cfg, point));
            }
        }
    }
    if matches!(stage, Stage::Evaluate | Stage::Run) {
        let csv_path = out.join(CSV_FILE);
        emit_csv(&outcome.rows, &csv_path)?;
        outcome.files.push(csv_path);
        if !outcome.failures.is_empty() {
            let mut text = String::new();
            for (i, msg) in &outcome.failures {
                let _ = writeln!(text, "point {i}: {msg}");
            }
            let p = out.join("errors.txt");
            write_atomic(&p, text.as_bytes())?;
            outcome.files.push(p);
        }
        if outcome.rows.iter().any(|r| r.metric != "error") && stage == Stage::Run {
            outcome.files.extend(emit_plots(&outcome.rows, out)?);
        }
    }
    Ok(outcome)
}

/// Full pipeline.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path, workers: usize) -> Result<Outcome> {
    run_stage(cfg, out, Stage::Run, workers)
}

// ---- SVG ----

const W: f64 = 640.0;
const H: f64 = 420.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 150.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 50.0;
const LOG_FLOOR: f64 = 1e-16;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2",
];

/// `(x, y, band)`.
pub type CurvePoint = (f64, f64, Option<(f64, f64)>);

#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub label: String,
    pub points: Vec<CurvePoint>,
}

/// Curves of metric `metric` (aggregate rows only): x = D, one curve per
/// sweep value (a single curve for bond sweeps).
pub fn curves(rows: &[CsvRow], metric: &str) -> Vec<Curve> {
    let mut by_value: Vec<(f64, Curve)> = Vec::new();
    for r in rows.iter().filter(|r| r.metric == metric && r.n.is_none()) {
        let key = if r.sweep_var == "D" { f64::NAN } else { r.sweep_value };
        let idx = by_value
            .iter()
            .position(|(k, _)| k.to_bits() == key.to_bits())
            .unwrap_or_else(|| {
                let label = if r.sweep_var == "D" {
                    metric.to_string()
                } else {
                    format!("{} = {}", r.sweep_var, r.sweep_value)
                };
                by_value.push((
                    key,
                    Curve {
                        label,
                        points: Vec::new(),
                    },
                ));
                by_value.len() - 1
            });
        let ci = r.ci_low.zip(r.ci_high);
        by_value[idx].1.points.push((r.bond as f64, r.value, ci));
    }
    by_value
        .into_iter()
        .map(|(_, mut c)| {
            c.points.sort_by(|a, b| a.0.total_cmp(&b.0));
            c
        })
        .collect()
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Log-y line plot with shaded confidence bands.
pub fn svg_plot(title: &str, x_label: &str, y_label: &str, curves: &[Curve]) -> Result<String> {
    let pts = curves.iter().flat_map(|c| c.points.iter());
    let xs: Vec<f64> = pts.clone().map(|p| p.0).filter(|x| x.is_finite()).collect();
    if xs.is_empty() {
        return Err(Error::Validation("nothing to plot".into()));
    }
    let ys: Vec<f64> = pts
        .flat_map(|p| {
            let mut v = vec![p.1];
            if let Some((lo, hi)) = p.2 {
                v.push(lo);
                v.push(hi);
            }
            v
        })
        .filter(|y| y.is_finite())
        .map(|y| y.max(LOG_FLOOR))
        .collect();
    let (x0, mut x1) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    let lmin = ys.iter().cloned().fold(f64::INFINITY, f64::min).log10().floor();
    let mut lmax = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max).log10().ceil();
    if lmax <= lmin {
        lmax = lmin + 1.0;
    }
    let pw = W - MARGIN_L - MARGIN_R;
    let ph = H - MARGIN_T - MARGIN_B;
    let sx = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| MARGIN_T + (lmax - y.max(LOG_FLOOR).log10()) / (lmax - lmin) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="18" text-anchor="middle">{}</text>"#,
        W / 2.0,
        esc(title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    let mut e = lmin as i32;
    while e as f64 <= lmax {
        let y = sy(10f64.powi(e));
        let _ = writeln!(
            s,
            r##"<line x1="{MARGIN_L}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">1e{e}</text>"##,
            MARGIN_L + pw,
            MARGIN_L - 6.0,
            y + 4.0
        );
        e += 1;
    }
    let mut ticks: Vec<f64> = xs.clone();
    ticks.sort_by(f64::total_cmp);
    ticks.dedup();
    for &t in &ticks {
        let x = sx(t);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{t}</text>"#,
            MARGIN_T + ph,
            MARGIN_T + ph + 5.0,
            MARGIN_T + ph + 18.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        MARGIN_L + pw / 2.0,
        H - 12.0,
        esc(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        MARGIN_T + ph / 2.0,
        MARGIN_T + ph / 2.0,
        esc(y_label)
    );
    for (ci, c) in curves.iter().enumerate() {
        let color = PALETTE[ci % PALETTE.len()];
        let finite: Vec<_> = c.points.iter().filter(|p| p.0.is_finite() && p.1.is_finite()).collect();
        let band: Vec<_> = finite.iter().filter_map(|p| p.2.map(|b| (p.0, b))).collect();
        if band.len() >= 2 {
            let mut poly = String::new();
            for (x, (_, hi)) in &band {
                let _ = write!(poly, "{:.2},{:.2} ", sx(*x), sy(*hi));
            }
            for (x, (lo, _)) in band.iter().rev() {
                let _ = write!(poly, "{:.2},{:.2} ", sx(*x), sy(*lo));
            }
            let _ = writeln!(
                s,
                r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
                poly.trim_end()
            );
        }
        let line: Vec<String> = finite
            .iter()
            .map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            line.join(" ")
        );
        for p in &finite {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#,
                sx(p.0),
                sy(p.1)
            );
        }
        let ly = MARGIN_T + 14.0 + 18.0 * ci as f64;
        let lx = MARGIN_L + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{ly:.2}">{}</text>"#,
            ly - 4.0,
            lx + 20.0,
            ly - 4.0,
            lx + 26.0,
            esc(&c.label)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// One SVG per aggregate metric present in `rows`.
pub fn emit_plots(rows: &[CsvRow], out: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for metric in ["I", "Delta_Upsilon", "Delta_Y"] {
        let cs = curves(rows, metric);
        if cs.is_empty() {
            continue;
        }
        let id = rows.first().map(|r| r.experiment_id.as_str()).unwrap_or("");
        let svg = svg_plot(&format!("{id}: {metric}"), "D", metric, &cs)?;
        let path = out.join(format!("{metric}.svg"));
        write_atomic(&path, svg.as_bytes())?;
        files.push(path);
    }
    Ok(files)
}
