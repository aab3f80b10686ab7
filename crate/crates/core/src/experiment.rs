//! Batch experiment driver behind the `ferret-lab` binary.
//!
//! Layout of an output directory after `train`, `mia` and `report`:
//!
//! ```text
//! <out>/
//!   experiment.json            normalized copy of the grid config
//!   data/members.csv           training split
//!   data/nonmembers.csv        held-out split
//!   <cell>/run.txt             key=value metadata
//!   <cell>/steps.csv           step,loss,fired_count
//!   <cell>/model.csv           tensor,index,value
//!   <cell>/transcript.csv      step,group,fired,sign (FERRET cells)
//!   <cell>/mia_roc.csv         threshold,fpr,tpr
//!   <cell>/mia_summary.txt     auc=..., advantage=...
//!   report.csv                 one row per grid cell
//!   report_summary.csv         means per (method, epsilon, epochs)
//! ```
//!
//! Nothing here reads the clock unless timing is requested, so reruns
//! produce byte-identical files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accountant::{epsilon_max, nats_to_bits, optimal_p, AccountantConfig};
use crate::error::{Error, Result};
use crate::evaluation::evaluate_mia;
use crate::mechanism::{partition_groups, MechanismConfig, PartitionScheme};
use crate::models::{eval_metrics, synth_dataset, Dataset, ModelKind, Tensor, ToyModel};
use crate::trainers::{train, Method, OptimizerRule, RunRecord, TrainConfig};

pub const DATA_DIR: &str = "data";
pub const RUN_META: &str = "run.txt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: ModelKind,
    /// Records per split.
    pub n: usize,
    pub dim: usize,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

impl DatasetSpec {
    pub fn generate(&self) -> Result<(Dataset, Dataset)> {
        synth_dataset(self.kind, self.n, self.dim, self.noise_sigma, self.seed)
    }
}

/// A method in the grid. FERRET's firing probability is derived per cell
/// from the cell's budget.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MethodSpec {
    Ferret {
        scheme: PartitionScheme,
        #[serde(default = "one")]
        c: f64,
        #[serde(default)]
        dither_sigma: f64,
    },
    DpsgdLite {
        clip: f64,
        noise_sigma: f64,
    },
    NonPrivate,
}

fn one() -> f64 {
    1.0
}

/// A finite budget in nats, or `"inf"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Budget {
    Finite(f64),
    Label(String),
}

impl Budget {
    fn value(&self) -> Option<Option<f64>> {
        match self {
            Budget::Finite(x) => Some(Some(*x)),
            Budget::Label(s) if s == "inf" => Some(None),
            Budget::Label(_) => None,
        }
    }
}

fn budget_label(eps: Option<f64>) -> String {
    eps.map_or_else(|| "inf".to_string(), |e| e.to_string())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    /// Expected batch size `B`.
    pub batch: f64,
    pub lr: f64,
    #[serde(default = "sgd")]
    pub optimizer: OptimizerRule,
    pub methods: Vec<MethodSpec>,
    #[serde(default = "inf_only")]
    pub epsilons: Vec<Budget>,
    pub epochs: Vec<f64>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn sgd() -> OptimizerRule {
    OptimizerRule::Sgd
}

fn inf_only() -> Vec<Budget> {
    vec![Budget::Label("inf".into())]
}

/// One cell of the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub method: MethodSpec,
    /// `None` is an unlimited budget.
    pub epsilon: Option<f64>,
    pub epochs: f64,
    pub seed: u64,
}

impl MethodSpec {
    pub fn label(&self) -> String {
        match self {
            MethodSpec::Ferret { scheme, .. } => format!("ferret-{}", scheme.label()),
            MethodSpec::DpsgdLite { .. } => "dpsgd-lite".into(),
            MethodSpec::NonPrivate => "nonprivate".into(),
        }
    }
}

impl Cell {
    pub fn dir_name(&self) -> String {
        format!(
            "{}_eps-{}_ep-{}_seed-{}",
            self.method.label(),
            budget_label(self.epsilon),
            self.epochs,
            self.seed
        )
    }
}

/// Per-cell derived quantities.
#[derive(Clone, Debug)]
pub struct ResolvedCell {
    pub cell: Cell,
    pub train: TrainConfig,
    pub groups: Option<usize>,
}

pub fn steps_for(epochs: f64, n: usize, batch: f64) -> u64 {
    (epochs * n as f64 / batch).ceil().max(1.0) as u64
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|_| Error::MissingArtifact(path.to_path_buf()))?;
        Self::from_json(&text)
    }

    fn template(&self) -> Result<ToyModel> {
        ToyModel::zeros(self.dataset.kind, self.dataset.dim, true)
    }

    /// Field-level checks. Every problem is reported, not just the first.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        let d = &self.dataset;
        if d.n == 0 {
            bad.push("dataset.n: must be at least 1".to_string());
        }
        if d.dim == 0 {
            bad.push("dataset.dim: must be at least 1".to_string());
        }
        if let ModelKind::Mlp { hidden: 0 } = d.kind {
            bad.push("dataset.kind.mlp.hidden: must be at least 1".to_string());
        }
        if !(d.noise_sigma >= 0.0) || !d.noise_sigma.is_finite() {
            bad.push(format!("dataset.noise_sigma: {} must be finite and >= 0", d.noise_sigma));
        }
        if !(self.batch > 0.0) || (d.n > 0 && self.batch > d.n as f64) {
            bad.push(format!("batch: {} must lie in (0, dataset.n]", self.batch));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            bad.push(format!("lr: {} must be finite and > 0", self.lr));
        }
        if let OptimizerRule::AdamLike { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                bad.push("optimizer: AdamLike needs beta1, beta2 in [0, 1) and eps > 0".to_string());
            }
        }
        if self.methods.is_empty() {
            bad.push("methods: must not be empty".to_string());
        }
        for (i, m) in self.methods.iter().enumerate() {
            match *m {
                MethodSpec::Ferret { scheme, c, dither_sigma } => {
                    if scheme == PartitionScheme::BucketOfK(0) {
                        bad.push(format!("methods[{i}].scheme: bucket size must be at least 1"));
                    }
                    if !(c > 0.0) || !c.is_finite() {
                        bad.push(format!("methods[{i}].c: {c} must be finite and > 0"));
                    }
                    if !(dither_sigma >= 0.0) || !dither_sigma.is_finite() {
                        bad.push(format!("methods[{i}].dither_sigma: {dither_sigma} must be finite and >= 0"));
                    }
                }
                MethodSpec::DpsgdLite { clip, noise_sigma } => {
                    if !(clip > 0.0) {
                        bad.push(format!("methods[{i}].clip: {clip} must be > 0"));
                    }
                    if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
                        bad.push(format!("methods[{i}].noise_sigma: {noise_sigma} must be finite and >= 0"));
                    }
                }
                MethodSpec::NonPrivate => {}
            }
        }
        if self.epsilons.is_empty() {
            bad.push("epsilons: must not be empty".to_string());
        }
        for (i, e) in self.epsilons.iter().enumerate() {
            match e.value() {
                None => bad.push(format!("epsilons[{i}]: expected a number or \"inf\"")),
                Some(Some(x)) if !(x > 0.0) || !x.is_finite() => {
                    bad.push(format!("epsilons[{i}]: {x} must be finite and > 0"))
                }
                _ => {}
            }
        }
        if self.epochs.is_empty() {
            bad.push("epochs: must not be empty".to_string());
        }
        for (i, e) in self.epochs.iter().enumerate() {
            if !(*e > 0.0) || !e.is_finite() {
                bad.push(format!("epochs[{i}]: {e} must be finite and > 0"));
            }
        }
        if self.seeds.is_empty() {
            bad.push("seeds: must not be empty".to_string());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }

    /// FERRET cells take every budget; the other methods are not accounted
    /// and get a single unlimited-budget cell.
    pub fn cells(&self) -> Vec<Cell> {
        let budgets: Vec<Option<f64>> = self.epsilons.iter().filter_map(Budget::value).collect();
        let mut out = Vec::new();
        for method in &self.methods {
            let eps_list: Vec<Option<f64>> = match method {
                MethodSpec::Ferret { .. } => budgets.clone(),
                _ => vec![None],
            };
            for &epsilon in &eps_list {
                for &epochs in &self.epochs {
                    for &seed in &self.seeds {
                        out.push(Cell {
                            method: *method,
                            epsilon,
                            epochs,
                            seed,
                        });
                    }
                }
            }
        }
        out
    }

    /// Resolve every cell to a concrete training config. Budget feasibility
    /// is checked for all cells before any is returned.
    pub fn resolve(&self) -> Result<Vec<ResolvedCell>> {
        let template = self.template()?;
        let n = self.dataset.n;
        let rate = self.batch / n as f64;
        let mut infeasible = None;
        let mut resolved = Vec::new();
        for cell in self.cells() {
            let steps = steps_for(cell.epochs, n, self.batch);
            let (method, groups) = match cell.method {
                MethodSpec::Ferret { scheme, c, dither_sigma } => {
                    let g = partition_groups(&template.shapes(), scheme)?.num_groups();
                    let p = match cell.epsilon {
                        None => 1.0,
                        Some(eps) => match optimal_p(eps, g as u64, steps, rate) {
                            Ok(p) => p,
                            Err(e @ Error::BudgetInfeasible { .. }) => {
                                infeasible.get_or_insert(e);
                                continue;
                            }
                            Err(e) => return Err(e),
                        },
                    };
                    (
                        Method::Ferret {
                            mechanism: MechanismConfig::new(p, c, dither_sigma)?,
                            scheme,
                        },
                        Some(g),
                    )
                }
                MethodSpec::DpsgdLite { clip, noise_sigma } => (Method::DpsgdLite { clip, noise_sigma }, None),
                MethodSpec::NonPrivate => (Method::NonPrivate, None),
            };
            resolved.push(ResolvedCell {
                train: TrainConfig {
                    steps,
                    batch: self.batch,
                    lr: self.lr,
                    method,
                    optimizer: self.optimizer,
                    seed: cell.seed,
                },
                cell,
                groups,
            });
        }
        match infeasible {
            Some(e) => Err(e),
            None => Ok(resolved),
        }
    }
}

/// Options shared by the commands that run training.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Worker threads for grid cells; `None` uses the rayon default.
    pub workers: Option<usize>,
    /// Write `duration_ms` into `run.txt`. Breaks byte-identical reruns.
    pub record_timing: bool,
}

fn with_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w.max(1))
                .build()
                .map_err(|e| Error::Domain(format!("cannot build worker pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    data.write_csv(BufWriter::new(fs::File::create(path)?))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let f = fs::File::open(path).map_err(|_| Error::MissingArtifact(path.to_path_buf()))?;
    Dataset::read_csv(f).map_err(|e| match e {
        Error::Parse { msg, .. } => Error::Parse {
            path: path.to_path_buf(),
            msg,
        },
        other => other,
    })
}

/// Flattened tensors as `tensor,index,value`.
pub fn model_csv(model: &ToyModel) -> String {
    let mut s = String::from("tensor,index,value\n");
    for t in &model.tensors {
        for (i, v) in t.data.iter().enumerate() {
            let _ = writeln!(s, "{},{},{}", t.name, i, v);
        }
    }
    s
}

fn parse_kv(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

fn read_kv(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|_| Error::MissingArtifact(path.to_path_buf()))?;
    Ok(parse_kv(&text))
}

/// Load the final model of a run directory.
pub fn load_run_model(run_dir: &Path) -> Result<ToyModel> {
    let meta = read_kv(&run_dir.join(RUN_META))?;
    let parse_err = |msg: String| Error::Parse {
        path: run_dir.join(RUN_META),
        msg,
    };
    let kind: ModelKind = serde_json::from_str(
        meta.get("model_kind")
            .ok_or_else(|| parse_err("missing model_kind".into()))?,
    )?;
    let dim: usize = meta
        .get("input_dim")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| parse_err("missing input_dim".into()))?;
    let bias = meta.get("bias").is_none_or(|v| v == "true");
    let mut model = ToyModel::zeros(kind, dim, bias)?;

    let path = run_dir.join("model.csv");
    let f = fs::File::open(&path).map_err(|_| Error::MissingArtifact(path.clone()))?;
    let mut rdr = csv::Reader::from_reader(f);
    let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for row in rdr.records() {
        let row = row?;
        let v: f64 = row[2].parse().map_err(|e| Error::Parse {
            path: path.clone(),
            msg: format!("{e}"),
        })?;
        values.entry(row[0].to_string()).or_default().push(v);
    }
    let ordered: Vec<Vec<f64>> = model
        .tensors
        .iter()
        .map(|t: &Tensor| values.remove(&t.name).unwrap_or_default())
        .collect();
    model.set_values(ordered)?;
    Ok(model)
}

fn run_metadata(rc: &ResolvedCell, cfg: &ExperimentConfig, run: &RunRecord, timing: bool) -> String {
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k}={v}");
    };
    kv("method", rc.cell.method.label());
    kv("epsilon", budget_label(rc.cell.epsilon));
    kv("epochs", rc.cell.epochs.to_string());
    kv("seed", rc.cell.seed.to_string());
    kv("steps", rc.train.steps.to_string());
    kv("batch", cfg.batch.to_string());
    kv("rate", run.rate.to_string());
    kv("lr", cfg.lr.to_string());
    kv("optimizer", serde_json::to_string(&cfg.optimizer).unwrap_or_default());
    kv("model_kind", serde_json::to_string(&cfg.dataset.kind).unwrap_or_default());
    kv("input_dim", cfg.dataset.dim.to_string());
    kv("bias", run.model.bias.to_string());
    if let Method::Ferret { mechanism, .. } = rc.train.method {
        kv("p", mechanism.p.to_string());
        kv("c", mechanism.c.to_string());
        kv("dither_sigma", mechanism.dither_sigma.to_string());
    }
    if let Some(g) = rc.groups {
        kv("groups", g.to_string());
    }
    if let Some(e) = run.epsilon {
        kv("epsilon_accounted", e.to_string());
        kv("epsilon_realized", run.realized_epsilon().unwrap_or(f64::NAN).to_string());
    }
    kv("fired_count", run.fired_count().to_string());
    kv("initial_loss", run.initial_loss.to_string());
    kv("final_loss", run.final_loss().to_string());
    if timing {
        kv("duration_ms", run.duration.as_millis().to_string());
    }
    s
}

/// Persist one run into `dir`.
pub fn write_run(dir: &Path, rc: &ResolvedCell, cfg: &ExperimentConfig, run: &RunRecord, timing: bool) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_file(&dir.join(RUN_META), run_metadata(rc, cfg, run, timing))?;
    let mut steps = String::from("step,loss,fired_count\n");
    for (i, (l, k)) in run.loss_trace.iter().zip(&run.fired_trace).enumerate() {
        let _ = writeln!(steps, "{i},{l},{k}");
    }
    write_file(&dir.join("steps.csv"), steps)?;
    write_file(&dir.join("model.csv"), model_csv(&run.model))?;
    if let Some(log) = &run.log {
        log.write_csv(BufWriter::new(fs::File::create(dir.join("transcript.csv"))?))?;
    }
    Ok(())
}

/// Run one resolved cell in memory.
pub fn run_cell(rc: &ResolvedCell, cfg: &ExperimentConfig, members: &Dataset) -> Result<RunRecord> {
    let model = ToyModel::init(cfg.dataset.kind, cfg.dataset.dim, rc.cell.seed)?;
    train(model, members, &rc.train)
}

/// `train`: run every grid cell and write one directory per cell.
/// Returns the cell directories in grid order.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path, opts: &RunOptions) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let cells = cfg.resolve()?;
    let (members, nonmembers) = cfg.dataset.generate()?;
    fs::create_dir_all(out)?;
    write_file(&out.join("experiment.json"), serde_json::to_string_pretty(cfg)? + "\n")?;
    write_dataset(&out.join(DATA_DIR).join("members.csv"), &members)?;
    write_dataset(&out.join(DATA_DIR).join("nonmembers.csv"), &nonmembers)?;
    let results: Vec<Result<PathBuf>> = with_pool(opts.workers, || {
        cells
            .par_iter()
            .map(|rc| {
                let run = run_cell(rc, cfg, &members)?;
                let dir = out.join(rc.cell.dir_name());
                write_run(&dir, rc, cfg, &run, opts.record_timing)?;
                Ok(dir)
            })
            .collect()
    })?;
    results.into_iter().collect()
}

/// `mia` on one run directory: scores against the given splits and writes
/// `mia_roc.csv` and `mia_summary.txt` next to the model.
pub fn cmd_mia_run(run_dir: &Path, data_dir: &Path) -> Result<crate::evaluation::MiaReport> {
    let model = load_run_model(run_dir)?;
    let members = read_dataset(&data_dir.join("members.csv"))?;
    let nonmembers = read_dataset(&data_dir.join("nonmembers.csv"))?;
    let report = evaluate_mia(&model, &members, &nonmembers)?;
    let mut roc = Vec::new();
    report.write_roc_csv(&mut roc)?;
    write_file(&run_dir.join("mia_roc.csv"), roc)?;
    write_file(&run_dir.join("mia_summary.txt"), report.summary())?;
    Ok(report)
}

fn run_dirs(out: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(out)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(RUN_META).is_file())
        .collect();
    dirs.sort();
    Ok(dirs)
}

/// `mia` over every run directory under `out`, using `out/data`.
pub fn cmd_mia_all(out: &Path, workers: Option<usize>) -> Result<usize> {
    if !out.is_dir() {
        return Err(Error::MissingArtifact(out.to_path_buf()));
    }
    let dirs = run_dirs(out)?;
    let data = out.join(DATA_DIR);
    let results: Vec<Result<()>> = with_pool(workers, || {
        dirs.par_iter().map(|d| cmd_mia_run(d, &data).map(|_| ())).collect()
    })?;
    results.into_iter().collect::<Result<Vec<()>>>()?;
    Ok(dirs.len())
}

pub const REPORT_HEADER: [&str; 10] = [
    "method",
    "epsilon",
    "epochs",
    "seed",
    "final_loss",
    "auc",
    "advantage",
    "fired_count",
    "duration",
    "status",
];

const NA: &str = "NA";

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub method: String,
    pub epsilon: String,
    pub epochs: String,
    pub seed: String,
    pub final_loss: Option<f64>,
    pub auc: Option<f64>,
    pub advantage: Option<f64>,
    pub fired_count: Option<f64>,
    pub duration: Option<f64>,
    pub status: &'static str,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| NA.to_string(), |x| x.to_string())
}

fn row_from_dir(dir: &Path) -> Result<ReportRow> {
    let meta = read_kv(&dir.join(RUN_META))?;
    let mia = read_kv(&dir.join("mia_summary.txt")).ok();
    let num = |m: &BTreeMap<String, String>, k: &str| m.get(k).and_then(|v| v.parse::<f64>().ok());
    let get = |k: &str| meta.get(k).cloned().unwrap_or_else(|| NA.to_string());
    Ok(ReportRow {
        method: get("method"),
        epsilon: get("epsilon"),
        epochs: get("epochs"),
        seed: get("seed"),
        final_loss: num(&meta, "final_loss"),
        auc: mia.as_ref().and_then(|m| num(m, "auc")),
        advantage: mia.as_ref().and_then(|m| num(m, "advantage")),
        fired_count: num(&meta, "fired_count"),
        duration: num(&meta, "duration_ms"),
        status: if mia.is_some() { "ok" } else { "no_mia" },
    })
}

/// `report`: one row per cell (grid cells with no directory are marked
/// `missing`), plus per-(method, epsilon, epochs) means.
pub fn cmd_report(out: &Path) -> Result<Vec<ReportRow>> {
    if !out.is_dir() {
        return Err(Error::MissingArtifact(out.to_path_buf()));
    }
    let mut rows: BTreeMap<String, ReportRow> = BTreeMap::new();
    for dir in run_dirs(out)? {
        let name = dir.file_name().unwrap_or_default().to_string_lossy().to_string();
        rows.insert(name, row_from_dir(&dir)?);
    }
    let manifest = out.join("experiment.json");
    if manifest.is_file() {
        let cfg: ExperimentConfig = serde_json::from_str(&fs::read_to_string(&manifest)?)?;
        for cell in cfg.cells() {
            rows.entry(cell.dir_name()).or_insert_with(|| ReportRow {
                method: cell.method.label(),
                epsilon: budget_label(cell.epsilon),
                epochs: cell.epochs.to_string(),
                seed: cell.seed.to_string(),
                final_loss: None,
                auc: None,
                advantage: None,
                fired_count: None,
                duration: None,
                status: "missing",
            });
        }
    }
    let rows: Vec<ReportRow> = rows.into_values().collect();

    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(REPORT_HEADER)?;
    for r in &rows {
        wtr.write_record([
            r.method.clone(),
            r.epsilon.clone(),
            r.epochs.clone(),
            r.seed.clone(),
            opt(r.final_loss),
            opt(r.auc),
            opt(r.advantage),
            opt(r.fired_count),
            opt(r.duration),
            r.status.to_string(),
        ])?;
    }
    write_file(&out.join("report.csv"), wtr.into_inner().map_err(|e| e.into_error())?)?;

    let mut groups: BTreeMap<(String, String, String), Vec<&ReportRow>> = BTreeMap::new();
    for r in &rows {
        groups
            .entry((r.method.clone(), r.epsilon.clone(), r.epochs.clone()))
            .or_default()
            .push(r);
    }
    let mean = |rs: &[&ReportRow], f: fn(&ReportRow) -> Option<f64>| -> Option<f64> {
        let xs: Vec<f64> = rs.iter().filter_map(|r| f(r)).collect();
        (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
    };
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record([
        "method",
        "epsilon",
        "epochs",
        "runs",
        "missing",
        "mean_final_loss",
        "mean_auc",
        "mean_advantage",
        "mean_fired_count",
    ])?;
    for ((m, e, ep), rs) in &groups {
        let missing = rs.iter().filter(|r| r.status == "missing").count();
        wtr.write_record([
            m.clone(),
            e.clone(),
            ep.clone(),
            (rs.len() - missing).to_string(),
            missing.to_string(),
            opt(mean(rs, |r| r.final_loss)),
            opt(mean(rs, |r| r.auc)),
            opt(mean(rs, |r| r.advantage)),
            opt(mean(rs, |r| r.fired_count)),
        ])?;
    }
    write_file(
        &out.join("report_summary.csv"),
        wtr.into_inner().map_err(|e| e.into_error())?,
    )?;
    Ok(rows)
}

/// Text for `plan`: a human-readable block followed by `key=value` lines.
pub fn plan_text(groups: u64, steps: u64, rate: f64, epsilon: f64) -> Result<String> {
    let plan = AccountantConfig::new(groups, steps, rate, epsilon)?.plan()?;
    let mut s = String::new();
    let _ = writeln!(s, "privacy plan");
    let _ = writeln!(s, "  groups G            {groups}");
    let _ = writeln!(s, "  steps T             {steps}");
    let _ = writeln!(s, "  sampling rate s     {rate}");
    let _ = writeln!(
        s,
        "  target epsilon      {:.6} nats ({:.6} bits)",
        epsilon,
        nats_to_bits(epsilon)
    );
    let _ = writeln!(
        s,
        "  head-room           {:.6} nats ({:.6} bits)",
        plan.epsilon_max,
        nats_to_bits(plan.epsilon_max)
    );
    let _ = writeln!(s, "  firing probability  {:.6e}", plan.p_star);
    let _ = writeln!(
        s,
        "  expected firings    {:.3} per group",
        plan.p_star * steps as f64
    );
    let _ = writeln!(s);
    let _ = writeln!(s, "groups={groups}");
    let _ = writeln!(s, "steps={steps}");
    let _ = writeln!(s, "rate={rate}");
    let _ = writeln!(s, "epsilon_target={epsilon}");
    let _ = writeln!(s, "epsilon_target_bits={}", nats_to_bits(epsilon));
    let _ = writeln!(s, "p_star={}", plan.p_star);
    let _ = writeln!(s, "epsilon_max={}", plan.epsilon_max);
    let _ = writeln!(s, "epsilon_max_bits={}", nats_to_bits(plan.epsilon_max));
    let _ = writeln!(s, "epsilon_achieved={}", plan.epsilon_achieved);
    Ok(s)
}

/// Head-room for the message of an infeasible `plan`.
pub fn headroom(groups: u64, steps: u64, rate: f64) -> Result<f64> {
    epsilon_max(groups, steps, rate)
}

/// Configuration of the dither sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DitherSweepConfig {
    pub dataset: DatasetSpec,
    pub batch: f64,
    pub lr: f64,
    pub steps: u64,
    #[serde(default = "sgd")]
    pub optimizer: OptimizerRule,
    pub scheme: PartitionScheme,
    /// Firing probability.
    pub p: f64,
    #[serde(default = "one")]
    pub c: f64,
    pub sigmas: Vec<f64>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub sigma: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    /// Final MSE per seed, in seed order.
    pub finals: Vec<f64>,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

impl DitherSweepConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.dataset.kind != ModelKind::LinearRegression {
            bad.push("dataset.kind: the dither sweep runs on linear_regression".to_string());
        }
        if self.dataset.n == 0 || self.dataset.dim == 0 {
            bad.push("dataset: n and dim must be at least 1".to_string());
        }
        if self.sigmas.is_empty() {
            bad.push("sigmas: must not be empty".to_string());
        }
        if !self.sigmas.contains(&0.0) {
            bad.push("sigmas: must include the 0 baseline".to_string());
        }
        if let Some(s) = self.sigmas.iter().find(|s| !(**s >= 0.0) || !s.is_finite()) {
            bad.push(format!("sigmas: {s} must be finite and >= 0"));
        }
        if self.seeds.is_empty() {
            bad.push("seeds: must not be empty".to_string());
        }
        if self.steps == 0 {
            bad.push("steps: must be at least 1".to_string());
        }
        if !(self.batch > 0.0) || self.batch > self.dataset.n as f64 {
            bad.push(format!("batch: {} must lie in (0, dataset.n]", self.batch));
        }
        if !(self.lr > 0.0) {
            bad.push(format!("lr: {} must be > 0", self.lr));
        }
        if !(0.0..=1.0).contains(&self.p) {
            bad.push(format!("p: {} outside [0, 1]", self.p));
        }
        if !(self.c > 0.0) {
            bad.push(format!("c: {} must be > 0", self.c));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }
}

/// Final training MSE of FERRET on linear regression for every
/// `(sigma, seed)`, summarized per sigma.
pub fn run_dither_sweep(cfg: &DitherSweepConfig, workers: Option<usize>) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let (members, _) = cfg.dataset.generate()?;
    let jobs: Vec<(f64, u64)> = cfg
        .sigmas
        .iter()
        .flat_map(|&s| cfg.seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let finals: Vec<Result<f64>> = with_pool(workers, || {
        jobs.par_iter()
            .map(|&(sigma, seed)| {
                let model = ToyModel::init(ModelKind::LinearRegression, cfg.dataset.dim, seed)?;
                let train_cfg = TrainConfig {
                    steps: cfg.steps,
                    batch: cfg.batch,
                    lr: cfg.lr,
                    method: Method::Ferret {
                        mechanism: MechanismConfig::new(cfg.p, cfg.c, sigma)?,
                        scheme: cfg.scheme,
                    },
                    optimizer: cfg.optimizer,
                    seed,
                };
                let run = train(model, &members, &train_cfg)?;
                Ok(eval_metrics(&run.model, &members)?.primary())
            })
            .collect()
    })?;
    let finals: Vec<f64> = finals.into_iter().collect::<Result<_>>()?;
    Ok(cfg
        .sigmas
        .iter()
        .enumerate()
        .map(|(i, &sigma)| {
            let per_seed = finals[i * cfg.seeds.len()..(i + 1) * cfg.seeds.len()].to_vec();
            let mut sorted = per_seed.clone();
            sorted.sort_by(f64::total_cmp);
            SweepRow {
                sigma,
                q25: quantile(&sorted, 0.25),
                median: quantile(&sorted, 0.5),
                q75: quantile(&sorted, 0.75),
                finals: per_seed,
            }
        })
        .collect())
}

/// `sweep-dither`: writes `dither_sweep.csv` (sigma,q25,median,q75) and
/// `dither_sweep_runs.csv` (sigma,seed,final_mse).
pub fn cmd_sweep_dither(cfg: &DitherSweepConfig, out: &Path, workers: Option<usize>) -> Result<Vec<SweepRow>> {
    let rows = run_dither_sweep(cfg, workers)?;
    let mut summary = String::from("sigma,q25,median,q75\n");
    let mut runs = String::from("sigma,seed,final_mse\n");
    for r in &rows {
        let _ = writeln!(summary, "{},{},{},{}", r.sigma, r.q25, r.median, r.q75);
        for (seed, v) in cfg.seeds.iter().zip(&r.finals) {
            let _ = writeln!(runs, "{},{},{}", r.sigma, seed, v);
        }
    }
    write_file(&out.join("dither_sweep.csv"), summary)?;
    write_file(&out.join("dither_sweep_runs.csv"), runs)?;
    Ok(rows)
}
