//! Experiment runner: builds benchmark scenarios, drives the training loop,
//! grid-searches hyperparameters, and persists trajectories, summary tables,
//! and plots.
//!
//! Determinism is a hard requirement here: identical configs (including
//! seeds) must produce byte-identical summary CSVs. Everything random flows
//! through the keyed streams in [`crate::rng`], aggregation is sequential,
//! and floats are printed with their shortest round-trip representation.

use crate::data::{generate, sample_minibatch, BatchSchedule, DatasetKind, DatasetSpec, SplitDataset};
use crate::diagnostics::{
    contraction_factor_gd, contraction_factor_ogd, StepRecord, Trajectory,
    TRAJECTORY_SCHEMA_VERSION,
};
use crate::error::{Error, Result};
use crate::linalg::{frobenius_norm, Matrix};
use crate::models::{backward, forward, ModelSpec, ParamKind, ParamSet};
use crate::optim::{Engine, OptimizerConfig, OptimizerKind, StepReport, TaskKind};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

mod plot;
pub use plot::emit_plots;

/// A training loss above this value (or any non-finite loss) marks the seed
/// as diverged; the run stops and the summary reports it.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

/// Benchmark scenario families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// Noiseless linear regression against a planted teacher; the setting
    /// where GD/OGD contraction factors have closed forms.
    Linear,
    /// MLP regression on draws from a Gaussian random field.
    GrfRegression,
    /// MLP softmax classification on Gaussian blobs.
    BlobClassification,
}

impl Scenario {
    pub const ALL: [Scenario; 3] =
        [Scenario::Linear, Scenario::GrfRegression, Scenario::BlobClassification];

    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Linear => "linear",
            Scenario::GrfRegression => "grf-regression",
            Scenario::BlobClassification => "blob-classification",
        }
    }

    pub fn parse(s: &str) -> Result<Scenario> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scenario '{s}'")))
    }

    pub fn task(&self) -> TaskKind {
        match self {
            Scenario::BlobClassification => TaskKind::Classification,
            _ => TaskKind::Regression,
        }
    }

    fn expected_dataset_kind(&self) -> DatasetKind {
        match self {
            Scenario::Linear => DatasetKind::Linear,
            Scenario::GrfRegression => DatasetKind::Grf,
            Scenario::BlobClassification => DatasetKind::Blobs,
        }
    }

    /// Desk-scale dataset defaults for each scenario.
    pub fn default_dataset(&self, data_seed: u64) -> DatasetSpec {
        match self {
            Scenario::Linear => DatasetSpec::linear(250, 20, 20, data_seed),
            Scenario::GrfRegression => DatasetSpec::grf(2000, 20, 20, data_seed),
            Scenario::BlobClassification => DatasetSpec::blobs(2000, 20, 10, data_seed),
        }
    }

    /// The model this scenario trains, shaped by the dataset spec.
    pub fn model(&self, data: &DatasetSpec, hidden: usize) -> ModelSpec {
        match self {
            Scenario::Linear => ModelSpec::linear(data.d_in, data.d_out),
            Scenario::GrfRegression => ModelSpec::mlp_regression(data.d_in, hidden, data.d_out),
            Scenario::BlobClassification => {
                ModelSpec::mlp_classifier(data.d_in, hidden, data.d_out)
            }
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Complete, serializable description of one experiment. Equal configs
/// produce identical results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub optimizer: OptimizerKind,
    pub opt: OptimizerConfig,
    pub data: DatasetSpec,
    /// Number of optimizer steps per seed.
    pub steps: u64,
    /// Run seeds; initialization and minibatch sampling are keyed by these.
    pub seeds: Vec<u64>,
    pub batch: BatchSchedule,
    /// Telemetry cadence; steps 1 and `steps` are always logged.
    pub log_every: u64,
    /// Hidden width for MLP scenarios; ignored by the linear scenario.
    pub hidden: usize,
    /// Where to persist trajectories, summary, and config; `None` keeps the
    /// run in memory.
    pub out_dir: Option<PathBuf>,
    /// Optional stem for output file names; defaults to scenario-optimizer.
    pub label: Option<String>,
}

impl ExperimentConfig {
    /// A ready-to-run config with scenario defaults and tuned optimizer
    /// hyperparameters.
    pub fn new(scenario: Scenario, optimizer: OptimizerKind, data_seed: u64) -> Self {
        let batch = match scenario {
            Scenario::Linear => BatchSchedule::Full,
            _ => BatchSchedule::Constant(128),
        };
        ExperimentConfig {
            scenario,
            optimizer,
            opt: OptimizerConfig::tuned(optimizer, scenario.task()),
            data: scenario.default_dataset(data_seed),
            steps: 1000,
            seeds: vec![1, 2, 3],
            batch,
            log_every: 10,
            hidden: 100,
            out_dir: None,
            label: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("need at least one seed".into()));
        }
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be at least 1".into()));
        }
        if self.data.kind != self.scenario.expected_dataset_kind() {
            return Err(Error::Config(format!(
                "scenario {} expects a {:?} dataset, got {:?}",
                self.scenario,
                self.scenario.expected_dataset_kind(),
                self.data.kind
            )));
        }
        if self.scenario != Scenario::Linear && self.hidden == 0 {
            return Err(Error::Config("MLP scenarios need hidden width >= 1".into()));
        }
        self.opt.validate()?;
        self.data.validate()
    }

    fn stem(&self) -> String {
        self.label
            .clone()
            .unwrap_or_else(|| format!("{}-{}", self.scenario.name(), self.optimizer.name()))
    }
}

/// Converts epoch counts to step counts: one epoch is `ceil(n / b)` steps.
pub fn epochs_to_steps(epochs: u64, n_train: usize, batch_size: usize) -> Result<u64> {
    if n_train == 0 || batch_size == 0 {
        return Err(Error::InvalidInput("epoch accounting needs n, b >= 1".into()));
    }
    Ok(epochs * ((n_train + batch_size - 1) / batch_size) as u64)
}

/// Everything produced by one seed of a run.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub trajectory: Trajectory,
    /// Per-step, per-parameter optimizer reports (step major), kept in
    /// memory so invariants can be re-asserted exactly.
    pub step_reports: Vec<Vec<StepReport>>,
    pub final_train_loss: f64,
    pub final_test_loss: Option<f64>,
    pub diverged: bool,
}

/// One line of the summary table: hyperparameter echo plus seed aggregates.
/// Means and standard deviations cover non-diverged seeds only.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub scenario: String,
    pub optimizer: String,
    pub eta: f64,
    pub epsilon: f64,
    pub mu: f64,
    pub gamma: f64,
    pub v0: f64,
    pub steps: u64,
    pub batch: String,
    pub seeds_total: usize,
    pub seeds_diverged: usize,
    pub mean_final_train_loss: Option<f64>,
    pub std_final_train_loss: Option<f64>,
    pub mean_final_test_loss: Option<f64>,
    pub std_final_test_loss: Option<f64>,
    pub best: bool,
}

impl SummaryRow {
    fn from_runs(cfg: &ExperimentConfig, runs: &[SeedRun]) -> SummaryRow {
        let finished: Vec<&SeedRun> = runs.iter().filter(|r| !r.diverged).collect();
        let train: Vec<f64> = finished.iter().map(|r| r.final_train_loss).collect();
        let test: Vec<f64> = finished.iter().filter_map(|r| r.final_test_loss).collect();
        let (mean_train, std_train) = mean_std(&train);
        let (mean_test, std_test) =
            if test.len() == finished.len() { mean_std(&test) } else { (None, None) };
        SummaryRow {
            scenario: cfg.scenario.name().to_string(),
            optimizer: cfg.optimizer.name().to_string(),
            eta: cfg.opt.eta,
            epsilon: cfg.opt.epsilon,
            mu: cfg.opt.mu,
            gamma: cfg.opt.gamma,
            v0: cfg.opt.v0,
            steps: cfg.steps,
            batch: cfg.batch.to_string(),
            seeds_total: runs.len(),
            seeds_diverged: runs.len() - finished.len(),
            mean_final_train_loss: mean_train,
            std_final_train_loss: std_train,
            mean_final_test_loss: mean_test,
            std_final_test_loss: std_test,
            best: false,
        }
    }
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (Some(mean), Some(var.sqrt()))
}

/// Fixed column order of the summary CSV.
pub const SUMMARY_COLUMNS: &str = "schema_version,scenario,optimizer,eta,epsilon,mu,gamma,v0,\
                                   steps,batch,seeds,diverged,mean_final_train_loss,\
                                   std_final_train_loss,mean_final_test_loss,\
                                   std_final_test_loss,best";

/// Writes summary rows with the fixed schema. Deliberately contains no
/// timing or host information so reruns are byte-identical.
pub fn write_summary_csv(rows: &[SummaryRow], path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{SUMMARY_COLUMNS}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            TRAJECTORY_SCHEMA_VERSION,
            r.scenario,
            r.optimizer,
            r.eta,
            r.epsilon,
            r.mu,
            r.gamma,
            r.v0,
            r.steps,
            r.batch,
            r.seeds_total,
            r.seeds_diverged,
            opt_field(r.mean_final_train_loss),
            opt_field(r.std_final_train_loss),
            opt_field(r.mean_final_test_loss),
            opt_field(r.std_final_test_loss),
            r.best,
        )?;
    }
    Ok(())
}

fn opt_field(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// All artifacts of one experiment (every seed plus the summary row).
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub runs: Vec<SeedRun>,
    pub summary: SummaryRow,
}

/// Runs every seed of `cfg`, re-asserts optimizer invariants on the
/// telemetry, and (when an output directory is set) persists trajectory
/// CSVs, the summary CSV, and a JSON echo of the config.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let dataset = generate(&cfg.data)?;
    let model = cfg.scenario.model(&cfg.data, cfg.hidden);
    let mut runs = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        runs.push(run_seed(cfg, &model, &dataset, seed)?);
    }
    let summary = SummaryRow::from_runs(cfg, &runs);
    let result = ExperimentResult { config: cfg.clone(), runs, summary };
    if let Some(dir) = &cfg.out_dir {
        persist_result(&result, dir)?;
    }
    Ok(result)
}

fn persist_result(result: &ExperimentResult, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let stem = result.config.stem();
    for run in &result.runs {
        run.trajectory
            .write_csv(&dir.join(format!("{stem}-seed{}.trajectory.csv", run.seed)))?;
    }
    write_summary_csv(
        std::slice::from_ref(&result.summary),
        &dir.join(format!("{stem}-summary.csv")),
    )?;
    let json = serde_json::to_string_pretty(&result.config)?;
    std::fs::write(dir.join(format!("{stem}-config.json")), json)?;
    Ok(())
}

/// Whether an error signals numeric blow-up (divergence) rather than a bug.
fn is_divergence(err: &Error) -> bool {
    matches!(err, Error::NumericFailure(_))
}

struct Telemetry {
    train_loss: f64,
    test_loss: Option<f64>,
    grad_norm_nuclear: f64,
    dist_w: Option<f64>,
    contraction: Option<f64>,
}

fn run_seed(
    cfg: &ExperimentConfig,
    model: &ModelSpec,
    dataset: &SplitDataset,
    seed: u64,
) -> Result<SeedRun> {
    let mut params = model.init_params(seed);
    let mut engine = Engine::new(cfg.optimizer, &params, cfg.opt)?;
    let n_train = dataset.train.len();
    let design = match cfg.scenario {
        Scenario::Linear => Some(dataset.train.inputs.transpose()),
        _ => None,
    };
    // Stepsize/flag aggregation covers the parameters the matrix rule
    // manages; for non-hybrid optimizers that is every parameter.
    let aggregated: Vec<bool> = params
        .params()
        .iter()
        .map(|p| !cfg.optimizer.is_hybrid() || p.kind == ParamKind::MatrixParam)
        .collect();
    let aggregated = if aggregated.iter().any(|&m| m) {
        aggregated
    } else {
        vec![true; params.len()]
    };

    let start = Instant::now();
    let mut trajectory = Trajectory::new();
    let mut step_reports: Vec<Vec<StepReport>> = Vec::new();
    let mut diverged = false;

    'steps: for t in 1..=cfg.steps {
        let log_now = t == 1 || t == cfg.steps || t % cfg.log_every == 0;
        let full_pass_serves_both = cfg.batch.is_full();

        // Telemetry describes the iterate entering this step.
        let mut telemetry: Option<Telemetry> = None;
        if log_now && !full_pass_serves_both {
            match compute_telemetry(cfg, model, dataset, &mut params, &design) {
                Ok(tel) => telemetry = Some(tel),
                Err(e) if is_divergence(&e) => {
                    diverged = true;
                    break 'steps;
                }
                Err(e) => return Err(e),
            }
        }

        let idx = sample_minibatch(cfg.batch, n_train, seed, t)?;
        let minibatch = dataset.train.subset(&idx);
        let batch_loss = match forward(model, &params, &minibatch) {
            Ok((loss, cache)) => {
                backward(model, &mut params, &cache)?;
                loss
            }
            Err(e) if is_divergence(&e) => {
                diverged = true;
                break 'steps;
            }
            Err(e) => return Err(e),
        };
        if batch_loss > DIVERGENCE_THRESHOLD {
            diverged = true;
            break 'steps;
        }
        if log_now && full_pass_serves_both {
            // Full-batch training pass doubles as the telemetry pass.
            match full_batch_telemetry(cfg, model, dataset, &params, &design, batch_loss) {
                Ok(tel) => telemetry = Some(tel),
                Err(e) if is_divergence(&e) => {
                    diverged = true;
                    break 'steps;
                }
                Err(e) => return Err(e),
            }
        }
        if model.loss_is_summed() && idx.len() < n_train {
            // Summed losses need the n/b inflation to keep the minibatch
            // gradient an unbiased estimate of the full one.
            params.scale_grads(n_train as f64 / idx.len() as f64);
        }

        let reports = engine.step(&mut params)?;
        if let Some(tel) = telemetry {
            trajectory.push(build_record(t, &tel, &reports, &aggregated, start))?;
        }
        step_reports.push(reports);
    }

    let (final_train_loss, final_test_loss) = match final_losses(model, &params, dataset) {
        Ok(pair) => pair,
        Err(e) if is_divergence(&e) => {
            diverged = true;
            (f64::NAN, None)
        }
        Err(e) => return Err(e),
    };
    let final_train_loss = if diverged { f64::NAN } else { final_train_loss };

    let run = SeedRun {
        seed,
        trajectory,
        step_reports,
        final_train_loss,
        final_test_loss: if diverged { None } else { final_test_loss },
        diverged,
    };
    assert_step_invariants(cfg, &run)?;
    Ok(run)
}

fn compute_telemetry(
    cfg: &ExperimentConfig,
    model: &ModelSpec,
    dataset: &SplitDataset,
    params: &mut ParamSet,
    design: &Option<Matrix>,
) -> Result<Telemetry> {
    let (train_loss, cache) = forward(model, params, &dataset.train)?;
    backward(model, params, &cache)?;
    if train_loss > DIVERGENCE_THRESHOLD {
        return Err(Error::NumericFailure(format!("train loss {train_loss} over threshold")));
    }
    full_batch_telemetry(cfg, model, dataset, params, design, train_loss)
}

/// Assembles telemetry from gradients already sitting in the param slots
/// (callers guarantee they are full-batch gradients at the current iterate).
fn full_batch_telemetry(
    cfg: &ExperimentConfig,
    model: &ModelSpec,
    dataset: &SplitDataset,
    params: &ParamSet,
    design: &Option<Matrix>,
    train_loss: f64,
) -> Result<Telemetry> {
    if train_loss > DIVERGENCE_THRESHOLD {
        return Err(Error::NumericFailure(format!("train loss {train_loss} over threshold")));
    }
    let grad_norm_nuclear = params.grad_nuclear()?;
    let test_loss = if dataset.test.len() > 0 {
        Some(forward(model, params, &dataset.test)?.0)
    } else {
        None
    };
    let mut dist_w = None;
    let mut contraction = None;
    if let (Some(x), Some(teacher)) = (design, &dataset.teacher) {
        let w = &params.params()[0].value;
        dist_w = Some(frobenius_norm(&w.sub(teacher))?);
        contraction = match cfg.optimizer {
            OptimizerKind::Gd => Some(contraction_factor_gd(x, cfg.opt.eta)?),
            OptimizerKind::Ogd => {
                let grad = &params.params()[0].grad;
                if frobenius_norm(grad)? > 0.0 {
                    Some(contraction_factor_ogd(x, grad, cfg.opt.eta)?)
                } else {
                    None
                }
            }
            _ => None,
        };
    }
    Ok(Telemetry { train_loss, test_loss, grad_norm_nuclear, dist_w, contraction })
}

fn build_record(
    t: u64,
    tel: &Telemetry,
    reports: &[StepReport],
    aggregated: &[bool],
    start: Instant,
) -> StepRecord {
    let mut stepsize = f64::INFINITY;
    let mut v: Option<f64> = None;
    let mut clamped = false;
    let mut floored = false;
    let mut grad_sq = 0.0;
    for (report, &mask) in reports.iter().zip(aggregated) {
        grad_sq += report.grad_norm_f * report.grad_norm_f;
        if !mask {
            continue;
        }
        stepsize = stepsize.min(report.stepsize);
        clamped |= report.clamped;
        floored |= report.floored;
        if let Some(va) = report.v_after {
            v = Some(v.map_or(va, |cur: f64| cur.max(va)));
        }
    }
    StepRecord {
        t,
        train_loss: tel.train_loss,
        test_loss: tel.test_loss,
        grad_norm_f: grad_sq.sqrt(),
        grad_norm_nuclear: tel.grad_norm_nuclear,
        stepsize: if stepsize.is_finite() { stepsize } else { 0.0 },
        v,
        clamped,
        floored,
        dist_w: tel.dist_w,
        contraction: tel.contraction,
        wall_time_s: start.elapsed().as_secs_f64(),
    }
}

fn final_losses(
    model: &ModelSpec,
    params: &ParamSet,
    dataset: &SplitDataset,
) -> Result<(f64, Option<f64>)> {
    let (train, _) = forward(model, params, &dataset.train)?;
    if train > DIVERGENCE_THRESHOLD {
        return Err(Error::NumericFailure(format!("final train loss {train} over threshold")));
    }
    let test = if dataset.test.len() > 0 {
        Some(forward(model, params, &dataset.test)?.0)
    } else {
        None
    };
    Ok((train, test))
}

/// Post-run re-assertion of the optimizer's step-level guarantees from the
/// recorded reports: the stepsize floor and the clamped accumulator growth.
/// Violations are bugs, surfaced as contract errors.
fn assert_step_invariants(cfg: &ExperimentConfig, run: &SeedRun) -> Result<()> {
    if !cfg.optimizer.is_adago_family() {
        return Ok(());
    }
    let n_params = run.step_reports.first().map_or(0, Vec::len);
    for i in 0..n_params {
        let mut prev_v: Option<f64> = None;
        for (step, reports) in run.step_reports.iter().enumerate() {
            let report = &reports[i];
            let Some(v) = report.v_after else { continue }; // Adam-managed slot
            if report.stepsize < cfg.opt.epsilon {
                return Err(Error::Contract(format!(
                    "stepsize {} fell below the floor {} at step {} (param {i})",
                    report.stepsize,
                    cfg.opt.epsilon,
                    step + 1
                )));
            }
            if let Some(prev) = prev_v {
                if v < prev {
                    return Err(Error::Contract(format!(
                        "accumulator shrank from {prev} to {v} at step {} (param {i})",
                        step + 1
                    )));
                }
                // Reports carry v_t, not v_t^2; squaring it back loses a few
                // ULPs, so allow relative slack on the squared scale.
                let increment = v * v - prev * prev;
                let slack = 8.0 * f64::EPSILON * (v * v).max(1.0);
                if increment > cfg.opt.gamma * cfg.opt.gamma + slack {
                    return Err(Error::Contract(format!(
                        "accumulator increment {increment} exceeds gamma^2 at step {} (param {i})",
                        step + 1
                    )));
                }
            }
            prev_v = Some(v);
        }
    }
    Ok(())
}

/// Grid search outcome: one summary row per executed cell (in deterministic
/// cell order) and the index of the best cell, if any seed finished.
#[derive(Debug, Clone)]
pub struct GridSearchResult {
    pub rows: Vec<SummaryRow>,
    pub results: Vec<ExperimentResult>,
    pub best: Option<usize>,
}

/// Runs the Cartesian product of `grid` over `base`. Keys name optimizer
/// hyperparameters (`eta`, `epsilon`, `mu`, `gamma`, `v0`). With
/// `require_eps_below_eta_sq`, cells violating the `epsilon < eta^2`
/// effectiveness heuristic are skipped before running. The best cell has the
/// lowest mean final train loss; ties break toward smaller `eta`, then
/// smaller `epsilon`.
pub fn grid_search(
    base: &ExperimentConfig,
    grid: &BTreeMap<String, Vec<f64>>,
    require_eps_below_eta_sq: bool,
) -> Result<GridSearchResult> {
    if grid.is_empty() || grid.values().any(|v| v.is_empty()) {
        return Err(Error::Config("grid must map each hyperparameter to values".into()));
    }
    for key in grid.keys() {
        if !matches!(key.as_str(), "eta" | "epsilon" | "mu" | "gamma" | "v0") {
            return Err(Error::Config(format!("unknown grid hyperparameter '{key}'")));
        }
    }

    let keys: Vec<&String> = grid.keys().collect();
    let mut cells: Vec<Vec<f64>> = vec![Vec::new()];
    for key in &keys {
        let mut expanded = Vec::new();
        for cell in &cells {
            for &value in &grid[*key] {
                let mut next = cell.clone();
                next.push(value);
                expanded.push(next);
            }
        }
        cells = expanded;
    }

    let mut rows = Vec::new();
    let mut results = Vec::new();
    for (cell_idx, cell) in cells.iter().enumerate() {
        let mut cfg = base.clone();
        for (key, &value) in keys.iter().zip(cell) {
            apply_hyperparameter(&mut cfg.opt, key, value);
        }
        if require_eps_below_eta_sq && cfg.opt.epsilon >= cfg.opt.eta * cfg.opt.eta {
            continue;
        }
        if cfg.out_dir.is_some() {
            cfg.label = Some(format!("{}-cell{cell_idx}", base.stem()));
        }
        let result = run_experiment(&cfg)?;
        rows.push(result.summary.clone());
        results.push(result);
    }

    let best = select_best(&rows);
    if let Some(i) = best {
        rows[i].best = true;
        results[i].summary.best = true;
    }
    if let Some(dir) = &base.out_dir {
        std::fs::create_dir_all(dir)?;
        write_summary_csv(&rows, &dir.join(format!("{}-grid-summary.csv", base.stem())))?;
    }
    Ok(GridSearchResult { rows, results, best })
}

fn apply_hyperparameter(opt: &mut OptimizerConfig, key: &str, value: f64) {
    match key {
        "eta" => opt.eta = value,
        "epsilon" => opt.epsilon = value,
        "mu" => opt.mu = value,
        "gamma" => opt.gamma = value,
        "v0" => opt.v0 = value,
        _ => unreachable!("grid keys validated above"),
    }
}

/// Picks the row with the lowest mean final train loss among rows where at
/// least one seed finished; ties break toward smaller `eta`, then smaller
/// `epsilon`. Returns `None` when every cell diverged on every seed.
pub fn select_best(rows: &[SummaryRow]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, row) in rows.iter().enumerate() {
        let Some(mean) = row.mean_final_train_loss else { continue };
        if !mean.is_finite() {
            continue;
        }
        let better = match best {
            None => true,
            Some((j, current)) => {
                let prev = &rows[j];
                mean < current
                    || (mean == current
                        && (row.eta, row.epsilon) < (prev.eta, prev.epsilon))
            }
        };
        if better {
            best = Some((i, mean));
        }
    }
    best.map(|(i, _)| i)
}

/// Horizon-tuned experiment presets matching the convergence analyses: the
/// schedules fix `eta`, `epsilon`, `mu`, and the batch plan as functions of
/// the horizon `T` and exponent `q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchedulePreset {
    /// Single-sample stochastic: `b = 1`, `eps = T^(-3/4)`,
    /// `mu = 1 - T^(-1/2)`, `eta = T^(-(3/8+q))`.
    StochasticB1,
    /// Deterministic: full batch, `mu = 0`, `eps = T^(-1/2)`, `eta = T^(-q)`.
    DeterministicFullBatch,
    /// Stochastic with growing batch `b_t = ceil(sqrt(t))`, deterministic
    /// hyperparameters.
    GrowingBatchSqrt,
    /// Stochastic with growing batch `b_t = t`, deterministic
    /// hyperparameters.
    GrowingBatchLinear,
}

impl SchedulePreset {
    pub const ALL: [SchedulePreset; 4] = [
        SchedulePreset::StochasticB1,
        SchedulePreset::DeterministicFullBatch,
        SchedulePreset::GrowingBatchSqrt,
        SchedulePreset::GrowingBatchLinear,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SchedulePreset::StochasticB1 => "stochastic-b1",
            SchedulePreset::DeterministicFullBatch => "deterministic-full-batch",
            SchedulePreset::GrowingBatchSqrt => "growing-batch-sqrt",
            SchedulePreset::GrowingBatchLinear => "growing-batch-linear",
        }
    }

    pub fn parse(s: &str) -> Result<SchedulePreset> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown schedule preset '{s}'")))
    }

    /// The optimizer configuration and batch plan for horizon `t_max`.
    pub fn build(&self, t_max: u64, q: f64) -> Result<(OptimizerConfig, BatchSchedule)> {
        if t_max < 10 {
            return Err(Error::Config("schedule presets need a horizon of at least 10".into()));
        }
        Ok(match self {
            SchedulePreset::StochasticB1 => {
                (OptimizerConfig::schedule_stochastic_b1(t_max, q)?, BatchSchedule::Constant(1))
            }
            SchedulePreset::DeterministicFullBatch => {
                (OptimizerConfig::schedule_deterministic(t_max, q)?, BatchSchedule::Full)
            }
            SchedulePreset::GrowingBatchSqrt => {
                (OptimizerConfig::schedule_deterministic(t_max, q)?, BatchSchedule::SqrtT)
            }
            SchedulePreset::GrowingBatchLinear => {
                (OptimizerConfig::schedule_deterministic(t_max, q)?, BatchSchedule::LinearT)
            }
        })
    }

    /// A full experiment config for this preset on the given scenario, with
    /// per-step telemetry (slope fits need it).
    pub fn experiment(
        &self,
        scenario: Scenario,
        t_max: u64,
        q: f64,
        seeds: Vec<u64>,
        data_seed: u64,
    ) -> Result<ExperimentConfig> {
        let (opt, batch) = self.build(t_max, q)?;
        let optimizer = match scenario {
            Scenario::Linear => OptimizerKind::Adago,
            _ => OptimizerKind::HybridAdago,
        };
        let mut cfg = ExperimentConfig::new(scenario, optimizer, data_seed);
        cfg.opt = opt;
        cfg.batch = batch;
        cfg.steps = t_max;
        cfg.seeds = seeds;
        cfg.log_every = 1;
        cfg.label = Some(format!("{}-{}", self.name(), scenario.name()));
        Ok(cfg)
    }
}

impl std::fmt::Display for SchedulePreset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}
