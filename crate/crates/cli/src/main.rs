//! `gvfacc`: train GVF predictors, run scenarios with the controllers built
//! on them, sweep discount horizons, and check gradients.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gvf_core::config::RunConfig;
use gvf_core::env::train_gvf;
use gvf_core::evaluation::{horizon_sweep, prediction_grid, run_scenario, write_grid_csv, ModelSet};
use gvf_core::gradcheck::{self, Corruption};
use gvf_core::{ControllerKind, CumulantKind, Error, GvfModel};

/// Default output directory when neither a flag nor the config names one.
const OUT_DIR_ENV: &str = "GVFACC_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "gvfacc-runs";

mod exit {
    pub const FAILURE: u8 = 1;
    pub const CONFIG: u8 = 2;
    pub const DIVERGENCE: u8 = 3;
    pub const ARTIFACT: u8 = 4;
    pub const CHECK: u8 = 5;
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    fn config(message: impl Into<String>) -> Self {
        Self::new(exit::CONFIG, message)
    }

    fn artifact(message: impl Into<String>) -> Self {
        Self::new(exit::ARTIFACT, message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) | Error::InvalidParameter(_) | Error::UnknownScenario { .. } => exit::CONFIG,
            Error::Divergence { .. } => exit::DIVERGENCE,
            Error::ModelFormat(_)
            | Error::ModelVersion { .. }
            | Error::ModelMismatch(_)
            | Error::DimensionMismatch { .. }
            | Error::Json(_) => exit::ARTIFACT,
            _ => exit::FAILURE,
        };
        Self::new(code, e.to_string())
    }
}

type CliResult<T = ()> = Result<T, Failure>;

#[derive(Parser)]
#[command(name = "gvfacc", version, about = "GVF safety predictions for adaptive cruise control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one predictor and write its model file and training log.
    Train(TrainArgs),
    /// Run a scenario under a controller and export the trajectory.
    Eval(EvalArgs),
    /// Compare front-safety horizons across discount factors on a scenario.
    Sweep(SweepArgs),
    /// Compare backprop against finite differences on random networks.
    GradCheck(GradCheckArgs),
    /// Write a model's prediction surface as plot-ready CSV.
    Export(ExportArgs),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; every key is optional.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory; defaults to the config's `output_dir`, then $GVFACC_OUT_DIR.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                if !path.is_file() {
                    return Err(Failure::config(format!("config file not found: {}", path.display())));
                }
                RunConfig::load(path)?
            }
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }

    fn out_dir(&self, cfg: &RunConfig) -> CliResult<PathBuf> {
        let dir = self
            .out_dir
            .clone()
            .or_else(|| cfg.output_dir.clone())
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
        std::fs::create_dir_all(&dir)
            .map_err(|e| Failure::new(exit::FAILURE, format!("cannot create {}: {e}", dir.display())))?;
        Ok(dir)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// front, rear or speed.
    #[arg(long)]
    question: CumulantKind,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    /// Model path; the log and config snapshot go next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the configured learning rate.
    #[arg(long)]
    learning_rate: Option<f64>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    scenario: String,
    /// fuzzy, rule_with_speed, rule_without_speed or baseline.
    #[arg(long)]
    controller: ControllerKind,
    /// Model files; each is slotted by the question recorded in it.
    #[arg(long, num_args = 1..)]
    models: Vec<PathBuf>,
    /// Perturb the scenario's initial conditions with this seed.
    #[arg(long)]
    jitter: Option<u64>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_delimiter = ',', default_values_t = [0.95, 0.975, 0.983])]
    gammas: Vec<f64>,
    #[arg(long, default_value = "emergency_stop")]
    scenario: String,
    /// Front-safety models to draw from; also looks in the run directory.
    #[arg(long, num_args = 1..)]
    models: Vec<PathBuf>,
    /// Train front-safety models for any γ without one.
    #[arg(long)]
    train_missing: bool,
    #[arg(long, default_value = "baseline")]
    controller: ControllerKind,
}

#[derive(Args)]
struct GradCheckArgs {
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Test hook: perturb the analytic gradient of this layer.
    #[arg(long, hide = true)]
    corrupt_layer: Option<usize>,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    model: PathBuf,
    /// Output CSV; defaults to `<model stem>.grid.csv` in the run directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = [-1.0, -0.5, 0.0, 0.5, 1.0])]
    actions: Vec<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::GradCheck(a) => cmd_grad_check(a),
        Command::Export(a) => cmd_export(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn write_file(path: &Path, contents: &str) -> CliResult {
    std::fs::write(path, contents)
        .map_err(|e| Failure::new(exit::FAILURE, format!("cannot write {}: {e}", path.display())))
}

fn snapshot_config(cfg: &RunConfig, dir: &Path) -> CliResult {
    write_file(&dir.join("config.toml"), &cfg.to_toml()?)
}

fn model_name(kind: CumulantKind, gamma: f64) -> String {
    format!("{}_g{gamma}.json", kind.name())
}

fn train_model(cfg: &RunConfig, kind: CumulantKind, gamma: f64, model_path: &Path) -> CliResult<GvfModel> {
    let settings = cfg.learner_for(kind, gamma);
    let (model, log) = train_gvf(kind, &cfg.sim, &cfg.zone, &settings, &cfg.pool_for(kind))?;
    model.save(model_path)?;
    log.save(&model_path.with_extension("log.csv"))?;
    println!(
        "trained {kind} gamma={gamma} steps={} final_td_loss={:e} -> {}",
        settings.steps,
        log.final_loss().unwrap_or(f64::NAN),
        model_path.display()
    );
    Ok(model)
}

fn cmd_train(args: TrainArgs) -> CliResult {
    let mut cfg = args.common.load()?;
    if let Some(steps) = args.steps {
        cfg.learner.steps = steps;
    }
    if let Some(lr) = args.learning_rate {
        cfg.learner.learning_rate = lr;
    }
    let gamma = args.gamma.unwrap_or(cfg.learner.gamma);
    cfg.learner.gamma = gamma;
    cfg.validate()?;
    let path = match args.out {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)
                    .map_err(|e| Failure::new(exit::FAILURE, format!("cannot create {}: {e}", parent.display())))?;
            }
            p
        }
        None => args.common.out_dir(&cfg)?.join(model_name(args.question, gamma)),
    };
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    snapshot_config(&cfg, dir)?;
    train_model(&cfg, args.question, gamma, &path)?;
    Ok(())
}

fn load_model(path: &Path) -> CliResult<GvfModel> {
    GvfModel::load(path).map_err(|e| match e {
        Error::Io(io) => Failure::artifact(format!("cannot read model {}: {io}", path.display())),
        other => {
            let f = Failure::from(other);
            Failure::new(f.code, format!("{}: {}", path.display(), f.message))
        }
    })
}

fn slot_models(models: &[GvfModel]) -> CliResult<ModelSet<'_>> {
    let mut set = ModelSet::default();
    for m in models {
        let slot = match m.kind() {
            CumulantKind::FrontSafety => &mut set.front,
            CumulantKind::RearSafety => &mut set.rear,
            CumulantKind::Speed => &mut set.speed,
        };
        if slot.is_some() {
            return Err(Failure::artifact(format!("more than one {} model supplied", m.kind())));
        }
        *slot = Some(m);
    }
    Ok(set)
}

fn summary_line(label: &str, m: &gvf_core::evaluation::Metrics) -> String {
    let gap = m.min_front_gap.map_or("none".into(), |g| format!("{g:.2}"));
    format!(
        "{label}: collided={} min_gap={gap} max_decel={:.2} at_rest={} rear_warning={}",
        m.collided,
        m.max_decel,
        m.at_rest,
        m.rear_warning_lead_time.map_or("none".into(), |t| format!("{t:.2}s"))
    )
}

fn cmd_eval(args: EvalArgs) -> CliResult {
    let cfg = args.common.load()?;
    let mut spec = cfg.scenario(&args.scenario)?;
    if let Some(seed) = args.jitter {
        spec = spec.jittered(seed);
    }
    let models = args.models.iter().map(|p| load_model(p)).collect::<CliResult<Vec<_>>>()?;
    let set = slot_models(&models)?;
    for &kind in args.controller.required_models() {
        if set.get(kind).is_none() {
            let wrong = models.iter().map(|m| m.kind().to_string()).collect::<Vec<_>>().join(", ");
            return Err(Failure::artifact(format!(
                "controller `{}` needs a {kind} model (got: {})",
                args.controller.name(),
                if wrong.is_empty() { "none".into() } else { wrong }
            )));
        }
    }
    let result = run_scenario(&spec, args.controller, set, &cfg.controllers, &cfg.sim)?;
    let dir = args.common.out_dir(&cfg)?;
    snapshot_config(&cfg, &dir)?;
    let stem = format!("{}_{}", spec.name, args.controller.name());
    result.save(&dir, &stem)?;
    println!("{}", summary_line(&stem, &result.metrics));
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> CliResult {
    let cfg = args.common.load()?;
    let spec = cfg.scenario(&args.scenario)?;
    let dir = args.common.out_dir(&cfg)?;
    snapshot_config(&cfg, &dir)?;

    let mut pool = args.models.iter().map(|p| load_model(p)).collect::<CliResult<Vec<_>>>()?;
    if let Some(m) = pool.iter().find(|m| m.kind() != CumulantKind::FrontSafety) {
        return Err(Failure::artifact(format!("sweep takes front-safety models, got a {} model", m.kind())));
    }
    let mut front = Vec::with_capacity(args.gammas.len());
    for &gamma in &args.gammas {
        if let Some(i) = pool.iter().position(|m| (m.question.gamma - gamma).abs() < 1e-9) {
            front.push(pool.swap_remove(i));
            continue;
        }
        let path = dir.join(model_name(CumulantKind::FrontSafety, gamma));
        if path.is_file() {
            front.push(load_model(&path)?);
        } else if args.train_missing {
            front.push(train_model(&cfg, CumulantKind::FrontSafety, gamma, &path)?);
        } else {
            return Err(Failure::artifact(format!(
                "no front-safety model for gamma {gamma} (pass --models or --train-missing)"
            )));
        }
    }
    let speed_path = dir.join(model_name(CumulantKind::Speed, cfg.learner.gamma));
    let speed = if args.controller.required_models().contains(&CumulantKind::Speed) {
        Some(if speed_path.is_file() {
            load_model(&speed_path)?
        } else if args.train_missing {
            train_model(&cfg, CumulantKind::Speed, cfg.learner.gamma, &speed_path)?
        } else {
            return Err(Failure::artifact(format!("controller needs {}", speed_path.display())));
        })
    } else {
        None
    };

    let refs: Vec<&GvfModel> = front.iter().collect();
    let sweep = horizon_sweep(
        &spec,
        &args.gammas,
        &refs,
        speed.as_ref(),
        args.controller,
        &cfg.controllers,
        &cfg.sim,
    )?;
    for (gamma, result) in &sweep.results {
        result.save(&dir, &format!("sweep_{}_g{gamma}", spec.name))?;
    }
    let table_path = dir.join(format!("sweep_{}.csv", spec.name));
    let file = std::fs::File::create(&table_path)
        .map_err(|e| Failure::new(exit::FAILURE, format!("cannot write {}: {e}", table_path.display())))?;
    sweep.write_table(file)?;

    let fmt = |t: Option<f64>| t.map_or("none".to_string(), |t| format!("{t:.2}"));
    println!("gamma  crossing_s  intrusion_s  lead_s");
    for row in &sweep.table {
        println!(
            "{:<6} {:>10} {:>12} {:>7}",
            row.gamma,
            fmt(row.crossing_time),
            fmt(row.intrusion_time),
            fmt(row.lead_time)
        );
    }
    println!(
        "crossing times non-increasing in gamma: {}",
        if sweep.ordering_holds() { "yes" } else { "no" }
    );
    Ok(())
}

fn cmd_grad_check(args: GradCheckArgs) -> CliResult {
    let corruption = args.corrupt_layer.map(|layer| Corruption { layer, factor: 1.1 });
    let report = gradcheck::run(args.trials, args.seed, corruption)?;
    if report.vacuous() {
        println!("grad-check: 0 trials, nothing checked (vacuous pass)");
        return Ok(());
    }
    println!(
        "grad-check: trials={} max_rel_error={:e} tolerance={:e}",
        report.trials,
        report.max_rel_error,
        gradcheck::TOLERANCE
    );
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::new(
            exit::CHECK,
            format!(
                "gradient check failed: max relative error {:e} in layer {}",
                report.max_rel_error,
                report.worst_layer.map_or("?".into(), |l| l.to_string())
            ),
        ))
    }
}

fn cmd_export(args: ExportArgs) -> CliResult {
    let cfg = args.common.load()?;
    let model = load_model(&args.model)?;
    model.check_scaling(&cfg.sim.features)?;
    let gaps: Vec<f64> = (0..=50).map(|i| i as f64 * 4.0).collect();
    let speeds: Vec<f64> = (0..=18).map(|i| i as f64 * 2.0).collect();
    let points = prediction_grid(&model, &cfg.sim, &gaps, &speeds, &args.actions)?;
    let path = match args.out {
        Some(p) => p,
        None => {
            let stem = args.model.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned());
            args.common.out_dir(&cfg)?.join(format!("{stem}.grid.csv"))
        }
    };
    let file = std::fs::File::create(&path)
        .map_err(|e| Failure::new(exit::FAILURE, format!("cannot write {}: {e}", path.display())))?;
    write_grid_csv(&points, file)?;
    println!("exported {} points -> {}", points.len(), path.display());
    Ok(())
}
