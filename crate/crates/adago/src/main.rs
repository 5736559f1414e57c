//! Command-line driver for the benchmark harness.
//!
//! Subcommands:
//!
//! * `run` — execute one experiment and print its summary.
//! * `grid` — grid-search hyperparameters around a base experiment.
//! * `preset` — run a horizon-tuned schedule preset and report decay slopes.
//! * `diagnose` — sanity-check gradients, smoothness, noise, and
//!   orthogonalization on a scenario.
//! * `plot` — re-render figures from trajectory CSV files.
//!
//! When `--out` is omitted, the `ADAGO_OUT_DIR` environment variable (if set)
//! supplies the output directory; otherwise results stay in memory and only
//! the summary is printed.

use adago::data::generate;
use adago::diagnostics::{
    descent_lemma_check, estimate_lipschitz, noise_variance_estimate,
    orthogonalization_identity_gap, rate_slope_fit, RateMetric, Trajectory,
};
use adago::harness::{
    emit_plots, grid_search, run_experiment, ExperimentConfig, Scenario, SchedulePreset,
    SummaryRow,
};
use adago::linalg::frobenius_norm;
use adago::models::{backward, finite_difference_gradient, forward, ParamKind};
use adago::optim::{OptimizerKind, DEFAULT_SCHEDULE_Q};
use adago::rng::{stream_rng, Stream};
use adago::{Error, Result};
use clap::{Args, Parser, Subcommand};
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

const OUT_DIR_ENV: &str = "ADAGO_OUT_DIR";

#[derive(Parser)]
#[command(name = "adago", version, about = "Matrix-aware optimizer benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and print its summary.
    Run(RunCmd),
    /// Run the Cartesian product of hyperparameter values and mark the best.
    Grid(GridCmd),
    /// Run a horizon-tuned schedule preset and fit gradient decay slopes.
    Preset(PresetCmd),
    /// Check gradients, smoothness, noise scaling, and orthogonalization.
    Diagnose(DiagnoseCmd),
    /// Render loss and gradient-norm figures from trajectory CSVs.
    Plot(PlotCmd),
}

/// Flags shared by every experiment-shaped subcommand; unset optimizer flags
/// fall back to the tuned defaults for the chosen optimizer and task.
#[derive(Args)]
struct ExperimentArgs {
    /// Benchmark scenario.
    #[arg(long, default_value = "grf-regression", value_parser = Scenario::parse)]
    scenario: Scenario,
    /// Optimizer to train with.
    #[arg(long, default_value = "adago", value_parser = OptimizerKind::parse)]
    optimizer: OptimizerKind,
    /// Base stepsize.
    #[arg(long)]
    eta: Option<f64>,
    /// Momentum coefficient.
    #[arg(long)]
    mu: Option<f64>,
    /// Gradient-norm clamp.
    #[arg(long)]
    gamma: Option<f64>,
    /// Stepsize floor.
    #[arg(long)]
    eps: Option<f64>,
    /// Stepsize for Adam-managed slots inside hybrid optimizers.
    #[arg(long)]
    adam_eta: Option<f64>,
    /// Initial accumulator value.
    #[arg(long)]
    v0: Option<f64>,
    /// Newton-Schulz iterations; 0 selects exact SVD orthogonalization.
    #[arg(long)]
    ns_iters: Option<u32>,
    /// Optimizer steps per seed.
    #[arg(long, default_value_t = 1000)]
    steps: u64,
    /// Comma-separated run seeds.
    #[arg(long, default_value = "1,2,3")]
    seeds: String,
    /// Batch plan: a size, "full", "sqrt-t", or "linear-t".
    #[arg(long)]
    batch: Option<String>,
    /// Telemetry cadence (steps 1 and T are always logged).
    #[arg(long, default_value_t = 10)]
    log_every: u64,
    /// Dataset size override.
    #[arg(long)]
    samples: Option<usize>,
    /// Input dimension override.
    #[arg(long)]
    d_in: Option<usize>,
    /// Output dimension (or class count) override.
    #[arg(long)]
    d_out: Option<usize>,
    /// Held-out fraction override.
    #[arg(long)]
    test_fraction: Option<f64>,
    /// Seed for dataset generation.
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
    /// Hidden width for MLP scenarios.
    #[arg(long, default_value_t = 100)]
    hidden: usize,
    /// Output directory for CSVs and the config echo.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Stem for output file names.
    #[arg(long)]
    label: Option<String>,
}

impl ExperimentArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::new(self.scenario, self.optimizer, self.data_seed);
        if let Some(eta) = self.eta {
            cfg.opt.eta = eta;
        }
        if let Some(mu) = self.mu {
            cfg.opt.mu = mu;
        }
        if let Some(gamma) = self.gamma {
            cfg.opt.gamma = gamma;
        }
        if let Some(eps) = self.eps {
            cfg.opt.epsilon = eps;
        }
        if let Some(adam_eta) = self.adam_eta {
            cfg.opt.adam_eta = Some(adam_eta);
        }
        if let Some(v0) = self.v0 {
            cfg.opt.v0 = v0;
        }
        if let Some(n) = self.ns_iters {
            cfg.opt.ns_iters = n;
        }
        cfg.steps = self.steps;
        cfg.seeds = parse_seeds(&self.seeds)?;
        if let Some(batch) = &self.batch {
            cfg.batch = batch.parse()?;
        }
        cfg.log_every = self.log_every;
        if let Some(n) = self.samples {
            cfg.data.n_samples = n;
        }
        if let Some(d) = self.d_in {
            cfg.data.d_in = d;
        }
        if let Some(d) = self.d_out {
            cfg.data.d_out = d;
        }
        if let Some(f) = self.test_fraction {
            cfg.data.test_fraction = f;
        }
        cfg.hidden = self.hidden;
        cfg.out_dir = self.out.clone().or_else(default_out_dir);
        cfg.label = self.label.clone();
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct RunCmd {
    #[command(flatten)]
    experiment: ExperimentArgs,
}

#[derive(Args)]
struct GridCmd {
    #[command(flatten)]
    experiment: ExperimentArgs,
    /// Hyperparameter values as `name=v1,v2,...`; repeatable. Names: eta,
    /// epsilon, mu, gamma, v0.
    #[arg(long = "grid", required = true)]
    grid: Vec<String>,
    /// Skip cells violating the `eps < eta^2` effectiveness heuristic.
    #[arg(long)]
    filter_eps: bool,
}

#[derive(Args)]
struct PresetCmd {
    /// Schedule preset to run.
    #[arg(long, default_value = "deterministic-full-batch", value_parser = SchedulePreset::parse)]
    preset: SchedulePreset,
    /// Benchmark scenario.
    #[arg(long, default_value = "linear", value_parser = Scenario::parse)]
    scenario: Scenario,
    /// Horizon `T` the schedule is tuned for (also the step count).
    #[arg(long, default_value_t = 10_000)]
    t_max: u64,
    /// Stepsize exponent offset `q`.
    #[arg(long, default_value_t = DEFAULT_SCHEDULE_Q)]
    q: f64,
    /// Comma-separated run seeds.
    #[arg(long, default_value = "1,2,3")]
    seeds: String,
    /// Seed for dataset generation.
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
    /// Output directory for CSVs and the config echo.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DiagnoseCmd {
    /// Benchmark scenario to probe.
    #[arg(long, default_value = "grf-regression", value_parser = Scenario::parse)]
    scenario: Scenario,
    /// Dataset size override.
    #[arg(long)]
    samples: Option<usize>,
    /// Input dimension override.
    #[arg(long)]
    d_in: Option<usize>,
    /// Output dimension (or class count) override.
    #[arg(long)]
    d_out: Option<usize>,
    /// Seed for dataset generation.
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
    /// Hidden width for MLP scenarios.
    #[arg(long, default_value_t = 100)]
    hidden: usize,
    /// Seed for parameter initialization and probes.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Random descent-lemma directions to probe.
    #[arg(long, default_value_t = 5)]
    probes: usize,
    /// Perturbation pairs for the smoothness estimate.
    #[arg(long, default_value_t = 50)]
    pairs: usize,
    /// Probe ball radius for the smoothness estimate.
    #[arg(long, default_value_t = 0.5)]
    radius: f64,
    /// Minibatch size for the gradient-noise estimate.
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Minibatch draws for the gradient-noise estimate.
    #[arg(long, default_value_t = 100)]
    draws: usize,
}

#[derive(Args)]
struct PlotCmd {
    /// Trajectory CSV files to plot; series are labeled by file name.
    #[arg(long = "inputs", required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    /// Output directory for the figures.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Stem for the figure file names.
    #[arg(long, default_value = "plot")]
    stem: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(cmd) => cmd_run(cmd),
        Command::Grid(cmd) => cmd_grid(cmd),
        Command::Preset(cmd) => cmd_preset(cmd),
        Command::Diagnose(cmd) => cmd_diagnose(cmd),
        Command::Plot(cmd) => cmd_plot(cmd),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn cmd_run(cmd: RunCmd) -> Result<()> {
    let cfg = cmd.experiment.config()?;
    let result = run_experiment(&cfg)?;
    println!("{}", summary_line(&result.summary));
    report_output_dir(&cfg);
    Ok(())
}

fn cmd_grid(cmd: GridCmd) -> Result<()> {
    let cfg = cmd.experiment.config()?;
    let grid = parse_grid(&cmd.grid)?;
    let search = grid_search(&cfg, &grid, cmd.filter_eps)?;
    if search.rows.is_empty() {
        println!("no grid cells survived the filters");
        return Ok(());
    }
    for row in &search.rows {
        println!("{}", summary_line(row));
    }
    if search.best.is_none() {
        println!("every cell diverged on every seed; no best marked");
    }
    report_output_dir(&cfg);
    Ok(())
}

fn cmd_preset(cmd: PresetCmd) -> Result<()> {
    let mut cfg =
        cmd.preset.experiment(cmd.scenario, cmd.t_max, cmd.q, parse_seeds(&cmd.seeds)?, cmd.data_seed)?;
    cfg.out_dir = cmd.out.clone().or_else(default_out_dir);
    let result = run_experiment(&cfg)?;
    println!("{}", summary_line(&result.summary));

    // Decay rate of the averaged nuclear gradient norm, per seed.
    let window = ((cmd.t_max / 100).max(2), cmd.t_max);
    let mut slopes = Vec::new();
    for run in &result.runs {
        if run.diverged {
            println!("seed {}: diverged, no slope fit", run.seed);
            continue;
        }
        match rate_slope_fit(&run.trajectory, RateMetric::AvgNuclearGrad, window, 10) {
            Ok(fit) => {
                println!(
                    "seed {}: avg-grad slope {:.4} (r^2 {:.4}) over steps {}..{}",
                    run.seed, fit.slope, fit.r_squared, window.0, window.1
                );
                slopes.push(fit.slope);
            }
            Err(e) => println!("seed {}: slope fit unavailable ({e})", run.seed),
        }
    }
    if !slopes.is_empty() {
        let mean = slopes.iter().sum::<f64>() / slopes.len() as f64;
        println!("mean slope over {} seeds: {:.4}", slopes.len(), mean);
    }
    report_output_dir(&cfg);
    Ok(())
}

fn cmd_diagnose(cmd: DiagnoseCmd) -> Result<()> {
    let mut spec = cmd.scenario.default_dataset(cmd.data_seed);
    if let Some(n) = cmd.samples {
        spec.n_samples = n;
    }
    if let Some(d) = cmd.d_in {
        spec.d_in = d;
    }
    if let Some(d) = cmd.d_out {
        spec.d_out = d;
    }
    let dataset = generate(&spec)?;
    let model = cmd.scenario.model(&spec, cmd.hidden);
    let mut params = model.init_params(cmd.seed);
    let mut failures = 0usize;
    let mut check = |name: &str, ok: bool, detail: String| {
        println!("{}  {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            failures += 1;
        }
    };

    // 1. Backprop against central differences on a small probe batch.
    let probe_n = dataset.train.len().min(64);
    let probe_idx: Vec<usize> = (0..probe_n).collect();
    let probe = dataset.train.subset(&probe_idx);
    let (_, cache) = forward(&model, &params, &probe)?;
    backward(&model, &mut params, &cache)?;
    let fd = finite_difference_gradient(&model, &params, &probe, 1e-5)?;
    let mut worst = 0.0f64;
    let mut grad_scale = 0.0f64;
    for (param, fd_grad) in params.params().iter().zip(&fd) {
        worst = worst.max(param.grad.sub(fd_grad).max_abs());
        grad_scale = grad_scale.max(param.grad.max_abs());
    }
    let tol = 1e-5 * (1.0 + grad_scale);
    check("gradient-oracle", worst <= tol, format!("max |backprop - fd| = {worst:.3e} (tol {tol:.3e})"));

    // 2. Smoothness: estimated Lipschitz constant supports the descent lemma
    //    along random directions (with headroom for the estimate itself).
    let lipschitz = estimate_lipschitz(&model, &params, &probe, cmd.pairs, cmd.radius, cmd.seed)?;
    let mut holds_count = 0usize;
    for k in 0..cmd.probes {
        let mut rng = stream_rng(cmd.seed, Stream::Probe, 1_000 + k as u64);
        let direction = params.random_direction(&mut rng);
        let total: f64 = direction
            .iter()
            .map(|d| frobenius_norm(d).map(|n| n * n))
            .sum::<Result<f64>>()?
            .sqrt();
        let unit: Vec<_> = direction.iter().map(|d| d.scale(1.0 / total)).collect();
        let (_, _, holds) = descent_lemma_check(
            &model,
            &params,
            &probe,
            &unit,
            0.1 * cmd.radius,
            1.5 * lipschitz,
            1e-9,
        )?;
        holds_count += holds as usize;
    }
    check(
        "descent-lemma",
        holds_count == cmd.probes,
        format!("held on {holds_count}/{} directions (L-hat = {lipschitz:.3e})", cmd.probes),
    );

    // 3. Gradient-noise scaling: halving the batch roughly doubles the
    //    variance (finite-population correction shifts it slightly).
    let n = dataset.train.len();
    if 2 * cmd.batch_size < n {
        let small =
            noise_variance_estimate(&model, &params, &dataset.train, cmd.batch_size, cmd.draws, cmd.seed)?;
        let large = noise_variance_estimate(
            &model,
            &params,
            &dataset.train,
            2 * cmd.batch_size,
            cmd.draws,
            cmd.seed,
        )?;
        let ratio = small / large;
        let predicted = 2.0 * (n - cmd.batch_size) as f64 / (n - 2 * cmd.batch_size) as f64;
        check(
            "noise-scaling",
            (ratio - predicted).abs() <= 0.5 * predicted,
            format!("var(b)/var(2b) = {ratio:.3} (prediction {predicted:.3})"),
        );
    } else {
        println!("SKIP  noise-scaling: training set too small for batch {}", cmd.batch_size);
    }

    // 4. Orthogonalized gradient equals the preconditioned gradient.
    let matrix_grad = params
        .params()
        .iter()
        .find(|p| p.kind == ParamKind::MatrixParam)
        .map(|p| p.grad.clone())
        .ok_or_else(|| Error::Contract("model has no matrix parameter".into()))?;
    let gap = orthogonalization_identity_gap(&matrix_grad)?;
    check("orthogonalization-identity", gap <= 1e-9, format!("max |Orth(g) - g P^-1| = {gap:.3e}"));

    if failures > 0 {
        return Err(Error::Contract(format!("{failures} diagnostic check(s) failed")));
    }
    Ok(())
}

fn cmd_plot(cmd: PlotCmd) -> Result<()> {
    let out = cmd
        .out
        .clone()
        .or_else(default_out_dir)
        .unwrap_or_else(|| PathBuf::from("."));
    let mut named = Vec::new();
    for path in &cmd.inputs {
        let label = path
            .file_stem()
            .and_then(|s| s.to_str())
            .map(|s| s.trim_end_matches(".trajectory").to_string())
            .unwrap_or_else(|| path.display().to_string());
        named.push((label, Trajectory::read_csv(path)?));
    }
    let borrowed: Vec<(String, &Trajectory)> =
        named.iter().map(|(label, traj)| (label.clone(), traj)).collect();
    let written = emit_plots(&borrowed, &out, &cmd.stem)?;
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn default_out_dir() -> Option<PathBuf> {
    std::env::var_os(OUT_DIR_ENV).map(PathBuf::from)
}

fn report_output_dir(cfg: &ExperimentConfig) {
    if let Some(dir) = &cfg.out_dir {
        println!("artifacts in {}", dir.display());
    }
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let seeds: Vec<u64> = s
        .split(',')
        .map(|part| {
            part.trim()
                .parse::<u64>()
                .map_err(|_| Error::Config(format!("bad seed '{part}' in '{s}'")))
        })
        .collect::<Result<_>>()?;
    if seeds.is_empty() {
        return Err(Error::Config("need at least one seed".into()));
    }
    Ok(seeds)
}

fn parse_grid(entries: &[String]) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut grid = BTreeMap::new();
    for entry in entries {
        let (name, values) = entry
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("grid entry '{entry}' is not name=v1,v2,...")))?;
        let parsed: Vec<f64> = values
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad grid value '{v}' in '{entry}'")))
            })
            .collect::<Result<_>>()?;
        if grid.insert(name.trim().to_string(), parsed).is_some() {
            return Err(Error::Config(format!("duplicate grid entry for '{name}'")));
        }
    }
    Ok(grid)
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6e}")).unwrap_or_else(|| "n/a".to_string())
}

fn summary_line(row: &SummaryRow) -> String {
    format!(
        "{}{}/{} eta={} eps={} mu={} batch={}: train {} +- {}, test {} +- {} [{}/{} seeds diverged]",
        if row.best { "* " } else { "  " },
        row.scenario,
        row.optimizer,
        row.eta,
        row.epsilon,
        row.mu,
        row.batch,
        fmt_opt(row.mean_final_train_loss),
        fmt_opt(row.std_final_train_loss),
        fmt_opt(row.mean_final_test_loss),
        fmt_opt(row.std_final_test_loss),
        row.seeds_diverged,
        row.seeds_total,
    )
}
