//! Experiment configuration, single runs, run matrices and residual analysis.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::decomposition::{self, residual_grid, Mode, ProfileAxis, ResidualProfile, SplitDecision};
use crate::error::{Error, Result};
use crate::eval::{aggregate, aggregate_csv, evaluate, Aggregate, EvalReport, RunRecord};
use crate::field::{denormalize, extract_observations, place_sensors, ObservationSet, SpeedField};
use crate::losses::ResidualKind;
use crate::network::{Checkpoint, PinnNetwork};
use crate::partition::{Direction, Partition};
use crate::physics::{godunov_solve, nondim_coeffs, Scenario};
use crate::trainer::{train_with_log, EvalSummary, Geometry, Hyperparams, MethodId, MethodSpec, RunLog};

/// Thread count for matrix runs.
pub const THREADS_ENV: &str = "ADDPINN_THREADS";

pub const DEFAULT_SEEDS: [u64; 10] = [42, 123, 456, 789, 1024, 2048, 3000, 4096, 5555, 7777];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    Full,
    Desk,
}

impl Preset {
    pub fn hyperparams(self) -> Hyperparams {
        match self {
            Preset::Full => Hyperparams::default(),
            Preset::Desk => Hyperparams::desk(),
        }
    }
}

/// Either a scenario to simulate or a speed-field CSV on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dataset {
    Scenario(Scenario),
    Field(PathBuf),
}

impl Dataset {
    pub fn load(&self) -> Result<SpeedField> {
        match self {
            Dataset::Scenario(s) => Ok(godunov_solve(s)?.field),
            Dataset::Field(p) => SpeedField::load(p),
        }
    }
}

fn default_seeds() -> Vec<u64> {
    DEFAULT_SEEDS.to_vec()
}

fn default_name() -> String {
    "dataset".into()
}

fn default_out() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub dataset: Dataset,
    pub methods: Vec<MethodId>,
    pub sensor_counts: Vec<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub direction: Direction,
    #[serde(default)]
    pub preset: Preset,
    /// Per-key overrides applied on top of the preset.
    #[serde(default)]
    pub hyper: Value,
    #[serde(default)]
    pub scale: Option<f64>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() || self.seeds.is_empty() || self.sensor_counts.is_empty() {
            return Err(Error::InvalidInput("methods, seeds and sensor_counts must be non-empty".into()));
        }
        self.hyperparams()?.validate()
    }

    /// Preset, then `hyper` overrides key by key, then `scale`.
    pub fn hyperparams(&self) -> Result<Hyperparams> {
        let mut base = serde_json::to_value(self.preset.hyperparams())?;
        merge(&mut base, &self.hyper);
        let mut h: Hyperparams = serde_json::from_value(base)?;
        if let Some(s) = self.scale {
            h.scale = s;
        }
        h.validate()?;
        Ok(h)
    }

    pub fn method_spec(&self, id: MethodId) -> MethodSpec {
        MethodSpec { id, mode: self.mode, direction: self.direction }
    }
}

/// Recursive object merge; non-object values replace.
pub fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (_, Value::Null) => {}
        (b, p) => *b = p.clone(),
    }
}

pub fn geometry(field: &SpeedField) -> Geometry {
    Geometry { x_range_ft: field.x_range(), t_range_s: field.t_range }
}

pub fn observe(field: &SpeedField, n_s: usize) -> Result<ObservationSet> {
    extract_observations(field, &place_sensors(field.n_cells(), n_s)?)
}

/// Result of one (method, n_s, seed) cell.
#[derive(Debug)]
pub struct CellResult {
    pub log: RunLog,
    pub report: Option<EvalReport>,
    pub partition: Option<Partition<f64>>,
    pub coarse: Option<PinnNetwork<f64>>,
    pub error: Option<String>,
}

impl CellResult {
    pub fn decision(&self) -> Option<&SplitDecision> {
        self.log.decomposition.as_ref().map(|d| &d.decision)
    }
}

/// Trains one method on the sensor subset of `field` and evaluates it on the full grid in mph.
pub fn run_cell(field: &SpeedField, n_s: usize, method: &MethodSpec, hyper: &Hyperparams, seed: u64) -> Result<CellResult> {
    let obs = observe(field, n_s)?;
    let run = train_with_log(method, &obs, geometry(field), hyper, seed);
    let mut log = run.log;
    match run.result {
        Ok(p) => {
            let pred = denormalize(&p.predict_grid(field.n_cells(), field.n_steps()), &obs.stats);
            let report = evaluate(&pred, &field.values, log.time_s)?;
            log.eval = Some(EvalSummary { rel_l2: report.rel_l2_pct, rmse: report.rmse_mph, mae: report.mae_mph });
            Ok(CellResult { log, report: Some(report), partition: Some(p), coarse: run.coarse, error: None })
        }
        Err(e) => Ok(CellResult { log, report: None, partition: None, coarse: run.coarse, error: Some(e.to_string()) }),
    }
}

/// JSON document written per run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunFile {
    pub dataset: String,
    pub n_s: usize,
    pub log: RunLog,
    pub report: Option<EvalReport>,
    pub error: Option<String>,
}

pub fn run_file_name(method: MethodId, n_s: usize, seed: u64) -> String {
    format!("{method}_ns{n_s}_seed{seed}.json")
}

/// Writes the run JSON and per-stage checkpoints under `dir`.
pub fn save_cell(dir: &Path, dataset: &str, n_s: usize, cell: &CellResult) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let stem = run_file_name(cell.log.method, n_s, cell.log.seed);
    let path = dir.join(&stem);
    let file = RunFile { dataset: dataset.into(), n_s, log: cell.log.clone(), report: cell.report.clone(), error: cell.error.clone() };
    fs::write(&path, serde_json::to_string_pretty(&file)?)?;
    let base = stem.trim_end_matches(".json");
    if let Some(c) = &cell.coarse {
        c.to_checkpoint().save(dir.join(format!("{base}_stage1.ckpt.json")))?;
    }
    if let Some(p) = &cell.partition {
        for (k, net) in p.nets.iter().enumerate() {
            net.to_checkpoint().save(dir.join(format!("{base}_final{k}.ckpt.json")))?;
        }
    }
    Ok(path)
}

pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

#[derive(Debug)]
pub struct MatrixOutcome {
    pub records: Vec<RunRecord>,
    pub failures: Vec<String>,
    pub aggregate: Option<Aggregate>,
}

impl MatrixOutcome {
    pub fn all_completed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Runs methods x sensor counts x seeds on `threads` workers, writes one JSON per
/// run under `out/runs` and `out/aggregate.csv` / `out/aggregate.json`.
pub fn run_matrix(cfg: &ExperimentConfig, threads: usize) -> Result<MatrixOutcome> {
    cfg.validate()?;
    let hyper = cfg.hyperparams()?;
    let field = cfg.dataset.load()?;
    let runs_dir = cfg.out.join("runs");
    fs::create_dir_all(&runs_dir)?;
    let mut jobs = Vec::new();
    for &m in &cfg.methods {
        for &n_s in &cfg.sensor_counts {
            for &seed in &cfg.seeds {
                jobs.push((m, n_s, seed));
            }
        }
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(usize, std::result::Result<RunRecord, String>)>> = Mutex::new(Vec::new());
    std::thread::scope(|s| {
        for _ in 0..threads.clamp(1, jobs.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(m, n_s, seed)) = jobs.get(i) else { break };
                let spec = cfg.method_spec(m);
                let label = format!("{m} n_s={n_s} seed={seed}");
                let out = run_cell(&field, n_s, &spec, &hyper, seed).and_then(|cell| {
                    save_cell(&runs_dir, &cfg.name, n_s, &cell)?;
                    match (cell.report, cell.error) {
                        (Some(report), _) => Ok(RunRecord { method: m.to_string(), dataset: cfg.name.clone(), n_s, seed, report }),
                        (None, e) => Err(Error::InvalidInput(e.unwrap_or_default())),
                    }
                });
                results.lock().expect("result lock").push((i, out.map_err(|e| format!("{label}: {e}"))));
            });
        }
    });
    let mut results = results.into_inner().expect("result lock");
    results.sort_by_key(|(i, _)| *i);
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (_, r) in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => failures.push(e),
        }
    }
    let aggregate = if records.is_empty() {
        None
    } else {
        match aggregate(&records) {
            Ok(a) => Some(a),
            Err(e) => {
                failures.push(format!("aggregate: {e}"));
                None
            }
        }
    };
    if let Some(a) = &aggregate {
        fs::write(cfg.out.join("aggregate.csv"), aggregate_csv(&a.rows))?;
        fs::write(cfg.out.join("aggregate.json"), serde_json::to_string_pretty(a)?)?;
    }
    if !failures.is_empty() {
        fs::write(cfg.out.join("failures.txt"), failures.join("\n") + "\n")?;
    }
    Ok(MatrixOutcome { records, failures, aggregate })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub indicator: f64,
    pub decision: SplitDecision,
}

/// Residual profiles of a coarse checkpoint and the split it would trigger.
pub fn analyze(
    coarse: &PinnNetwork<f64>,
    obs: &ObservationSet,
    geometry: Geometry,
    mode: Mode,
    direction: Direction,
    cfg: &decomposition::DecompositionConfig,
) -> Result<(ResidualProfile, ResidualProfile, AnalysisReport)> {
    let coeffs = nondim_coeffs(&obs.stats, geometry.x_range_ft, geometry.t_range_s)?;
    let p = Partition::single(coarse.clone());
    let indicator = decomposition::shock_indicator(obs)?;
    let r2 = residual_grid(&p, &coeffs, ResidualKind::Lwr, cfg.n_x, cfg.n_t)?.mapv(|v| v * v);
    let px = ResidualProfile::from_grid(&r2, ProfileAxis::X);
    let pt = ResidualProfile::from_grid(&r2, ProfileAxis::T);
    let (decision, _, _) = decomposition::decide(indicator, &p, &coeffs, mode, direction, cfg)?;
    Ok((px, pt, AnalysisReport { indicator, decision }))
}

pub fn load_coarse(path: impl AsRef<Path>) -> Result<PinnNetwork<f64>> {
    PinnNetwork::from_checkpoint(&Checkpoint::load(path)?)
}
