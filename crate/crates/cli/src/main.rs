use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use cvrrw::acceptance::{self, CRITERIA};
use cvrrw::chain::{self, QMethod};
use cvrrw::diagnostics::{decompose_trajectory, fit_line, log_deviation_series, DecomposeOptions, Functional};
use cvrrw::experiments::{
    fmt17, initial_counts, load_graph_spec, replica_graph, run_experiment, step_grid, ExperimentConfig,
    ExperimentError, ExperimentKind,
};
use cvrrw::sampling::{self, AlarmMethod, RngStream, StreamId};
use cvrrw::walkers::{linear_grid, run_cvrrw, run_vrrw, Engine, RunOptions, WalkError};

/// Simulate vertex-reinforced random walks and check their limit theorems.
#[derive(Parser)]
#[command(name = "cvrrw", version)]
struct Cli {
    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the config replica count.
    #[arg(long, global = true)]
    replicas: Option<u64>,
    /// Directory for report JSON and CSV artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for replica parallelism (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and evaluate its claims.
    Simulate(ConfigArg),
    /// Run the discrete walk of a config and print the final counts.
    Vrrw {
        config: PathBuf,
        /// Override the step count.
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Fundamental matrix of the frozen chain at given local times.
    Qmatrix {
        config: PathBuf,
        /// Comma-separated local times, one per vertex (default: zeros).
        #[arg(long, value_delimiter = ',')]
        times: Vec<f64>,
        #[arg(long, value_enum, default_value_t = QChoice::All)]
        method: QChoice,
    },
    /// Stochastic-approximation decomposition of a functional along walks.
    Decompose {
        config: PathBuf,
        /// `T{i}`, `V`, `h_pi`, `contrast:i,j` or `constant`.
        #[arg(long, default_value = "T0")]
        functional: String,
    },
    /// Fitted exponential rate of the occupation deviation per replica.
    Rates {
        config: PathBuf,
        #[arg(long)]
        from: f64,
        #[arg(long)]
        to: f64,
    },
    /// Chi-square path-law comparison of a path_law config.
    MixtureTest(ConfigArg),
    /// Run the bundled acceptance suite.
    Acceptance {
        /// Only these criterion numbers.
        #[arg(long, value_delimiter = ',')]
        only: Vec<u32>,
    },
    /// Graph utilities.
    Graph {
        #[command(subcommand)]
        command: GraphCommand,
    },
    /// Draw samples from the building-block laws as CSV.
    Sample {
        #[command(subcommand)]
        law: SampleLaw,
    },
}

#[derive(Args)]
struct ConfigArg {
    config: PathBuf,
}

#[derive(Subcommand)]
enum GraphCommand {
    /// Build the `[graph]` section of a config and print its invariant report.
    Validate { config: PathBuf },
}

#[derive(Subcommand)]
enum SampleLaw {
    /// Alarm times of a reinforced clock with weight `w`.
    Alarms {
        #[arg(long)]
        weight: f64,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long)]
        start: bool,
        #[arg(long, value_enum, default_value_t = MethodChoice::Sequential)]
        method: MethodChoice,
    },
    /// Alarm times of the discrete-walk clock with initial count `a`.
    VrrwAlarms {
        #[arg(long)]
        a: f64,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long)]
        start: bool,
    },
    /// Independent Gamma(a_i, 1) weight vectors.
    Gamma {
        #[arg(long, value_delimiter = ',', required = true)]
        shapes: Vec<f64>,
        #[arg(long, default_value_t = 10)]
        count: usize,
    },
    /// Sojourns at a vertex with total exit rate `e^{log_z}` at entry.
    Sojourn {
        #[arg(long)]
        log_z: f64,
        #[arg(long, default_value_t = 10)]
        count: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum QChoice {
    All,
    LinearSolve,
    HittingFormula,
    KdClosed,
    Quadrature,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodChoice {
    Sequential,
    PoissonEmbed,
}

/// Failure with a chosen exit status.
#[derive(Debug)]
struct Exit(u8, String);

impl std::fmt::Display for Exit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.1)
    }
}

impl std::error::Error for Exit {}

fn exit_for(e: ExperimentError) -> anyhow::Error {
    Exit(e.exit_code() as u8, e.to_string()).into()
}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    Exit(2, msg.into()).into()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<Exit>().map_or(1, |x| x.0);
            ExitCode::from(code)
        }
    }
}

fn load(cli: &Cli, path: &Path) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path).map_err(exit_for)?;
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(r) = cli.replicas {
        cfg.experiment.replicas = r;
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = Some(out.display().to_string());
    }
    cfg.validate().map_err(exit_for)?;
    Ok(cfg)
}

fn run(cli: &Cli) -> anyhow::Result<u8> {
    match &cli.command {
        Command::Simulate(a) => report(&load(cli, &a.config)?),
        Command::MixtureTest(a) => {
            let cfg = load(cli, &a.config)?;
            if cfg.experiment.kind != ExperimentKind::PathLaw {
                return Err(config_error("mixture-test needs an experiment of kind `path_law`"));
            }
            report(&cfg)
        }
        Command::Vrrw { config, steps } => vrrw(&load(cli, config)?, *steps),
        Command::Qmatrix { config, times, method } => qmatrix(config, times, *method),
        Command::Decompose { config, functional } => decompose(&load(cli, config)?, functional),
        Command::Rates { config, from, to } => rates(&load(cli, config)?, *from, *to),
        Command::Acceptance { only } => run_acceptance(only),
        Command::Graph {
            command: GraphCommand::Validate { config },
        } => {
            let spec = load_graph_spec(config).map_err(exit_for)?;
            let g = spec.build().map_err(|e| config_error(e.to_string()))?;
            let rep = g.validate();
            print!("{rep}");
            Ok(if rep.all_ok() { 0 } else { 1 })
        }
        Command::Sample { law } => sample(cli, law),
    }
}

fn report(cfg: &ExperimentConfig) -> anyhow::Result<u8> {
    let rep = run_experiment(cfg).map_err(exit_for)?;
    for c in &rep.body.claims {
        eprintln!("{} {:?} estimate={}", c.id, c.verdict, c.estimate);
    }
    emit(None, "", &(rep.to_json() + "\n"))?;
    Ok(rep.exit_code() as u8)
}

fn vrrw(cfg: &ExperimentConfig, steps: Option<u64>) -> anyhow::Result<u8> {
    let steps = steps
        .or(cfg.run.steps)
        .ok_or_else(|| config_error("vrrw needs `run.steps` or --steps"))?;
    let rows: Vec<(u64, Vec<f64>)> = (0..cfg.experiment.replicas)
        .into_par_iter()
        .map(|r| -> anyhow::Result<(u64, Vec<f64>)> {
            let g = replica_graph(cfg, r).map_err(exit_for)?;
            let a = initial_counts(cfg, &g);
            let mut rng = RngStream::new(cfg.experiment.seed, r, StreamId::Global);
            let run = run_vrrw(&g, cfg.run.start, &a, steps, &step_grid(&cfg.run, steps), false, &mut rng)
                .map_err(|e| config_error(e.to_string()))?;
            Ok((r, run.state.z))
        })
        .collect::<anyhow::Result<_>>()?;
    let n = rows.first().map_or(0, |r| r.1.len());
    let mut csv = String::from("replica,steps");
    for i in 0..n {
        csv.push_str(&format!(",z{i}"));
    }
    csv.push('\n');
    for (r, z) in &rows {
        csv.push_str(&format!("{r},{steps}"));
        for v in z {
            csv.push(',');
            csv.push_str(&fmt17(*v));
        }
        csv.push('\n');
    }
    emit(cli_out(cfg), &format!("{}_vrrw.csv", cfg.experiment.id), &csv)?;
    Ok(0)
}

fn cli_out(cfg: &ExperimentConfig) -> Option<PathBuf> {
    cfg.output.dir.as_ref().map(PathBuf::from)
}

/// Write to `dir/name` when a directory is given, else to stdout.
fn emit(dir: Option<PathBuf>, name: &str, text: &str) -> anyhow::Result<()> {
    match dir {
        Some(d) => {
            std::fs::create_dir_all(&d)?;
            let path = d.join(name);
            std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
            eprintln!("wrote {}", path.display());
        }
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn qmatrix(config: &Path, times: &[f64], method: QChoice) -> anyhow::Result<u8> {
    let spec = load_graph_spec(config).map_err(exit_for)?;
    let g = spec.build().map_err(|e| config_error(e.to_string()))?;
    let t = if times.is_empty() { vec![0.0; g.len()] } else { times.to_vec() };
    if t.len() != g.len() {
        return Err(config_error(format!("--times needs {} values, got {}", g.len(), t.len())));
    }
    let methods: Vec<QMethod> = match method {
        QChoice::All => {
            let mut m = vec![QMethod::LinearSolve, QMethod::HittingFormula, QMethod::Quadrature];
            if g.is_leafless_complete() {
                m.push(QMethod::KdClosed);
            }
            m
        }
        QChoice::LinearSolve => vec![QMethod::LinearSolve],
        QChoice::HittingFormula => vec![QMethod::HittingFormula],
        QChoice::KdClosed => vec![QMethod::KdClosed],
        QChoice::Quadrature => vec![QMethod::Quadrature],
    };
    let cm = chain::chain_matrices(&g, &t)?;
    let mut out = serde_json::Map::new();
    out.insert("pi".into(), serde_json::to_value(&cm.pi)?);
    for m in methods {
        let q = chain::q_matrix(&g, &t, m)?;
        let rows: Vec<Vec<f64>> = (0..q.rows()).map(|i| (0..q.cols()).map(|j| q[(i, j)]).collect()).collect();
        let res = chain::poisson_residuals(&cm.l, &cm.pi, &q).max();
        out.insert(
            serde_json::to_value(m)?.as_str().unwrap_or("q").to_string(),
            serde_json::json!({ "q": rows, "poisson_residual": res }),
        );
    }
    emit(None, "", &(serde_json::to_string_pretty(&out)? + "\n"))?;
    Ok(0)
}

fn cvrrw_config(cfg: &ExperimentConfig) -> anyhow::Result<f64> {
    if cfg.experiment.kind != ExperimentKind::Cvrrw {
        return Err(config_error("this command needs an experiment of kind `cvrrw`"));
    }
    cfg.run
        .horizon
        .ok_or_else(|| config_error("this command needs `run.horizon`"))
}

fn decompose(cfg: &ExperimentConfig, functional: &str) -> anyhow::Result<u8> {
    let horizon = cvrrw_config(cfg)?;
    if cfg.run.engine == Engine::Hybrid {
        return Err(config_error("decompose needs an exact engine"));
    }
    let f: Functional = functional.parse().map_err(|e: cvrrw::diagnostics::DiagnosticsError| config_error(e.to_string()))?;
    let opts = RunOptions {
        engine: cfg.run.engine,
        event_cap: cfg.run.event_cap,
        stored_events: usize::MAX,
        hybrid: cfg.run.hybrid.unwrap_or_default(),
    };
    let reports: Vec<serde_json::Value> = (0..cfg.experiment.replicas)
        .into_par_iter()
        .map(|r| -> anyhow::Result<serde_json::Value> {
            let g = replica_graph(cfg, r).map_err(exit_for)?;
            let rng = RngStream::new(cfg.experiment.seed, r, StreamId::Global);
            let traj = run_cvrrw(&g, cfg.run.start, horizon, &linear_grid(horizon, cfg.run.grid.points), rng, &opts)
                .map_err(walk_exit)?;
            let d = decompose_trajectory(&traj, &g, &f, &DecomposeOptions::default())?;
            Ok(serde_json::json!({ "replica": r, "decomposition": d }))
        })
        .collect::<anyhow::Result<_>>()?;
    let text = serde_json::to_string_pretty(&reports)? + "\n";
    emit(cli_out(cfg), &format!("{}_decompose.json", cfg.experiment.id), &text)?;
    Ok(0)
}

fn walk_exit(e: WalkError) -> anyhow::Error {
    exit_for(ExperimentError::from(e))
}

fn rates(cfg: &ExperimentConfig, from: f64, to: f64) -> anyhow::Result<u8> {
    let horizon = cvrrw_config(cfg)?;
    if !(from < to && to <= horizon) {
        return Err(config_error("need from < to <= horizon"));
    }
    let opts = RunOptions {
        engine: cfg.run.engine,
        event_cap: cfg.run.event_cap,
        stored_events: 0,
        hybrid: cfg.run.hybrid.unwrap_or_default(),
    };
    let rows: Vec<String> = (0..cfg.experiment.replicas)
        .into_par_iter()
        .map(|r| -> anyhow::Result<String> {
            let g = replica_graph(cfg, r).map_err(exit_for)?;
            let rng = RngStream::new(cfg.experiment.seed, r, StreamId::Global);
            let traj = run_cvrrw(&g, cfg.run.start, horizon, &linear_grid(horizon, cfg.run.grid.points), rng, &opts)
                .map_err(walk_exit)?;
            let pts: Vec<(f64, f64)> = log_deviation_series(&traj.records)
                .into_iter()
                .filter(|&(t, y)| t >= from && t <= to && y.is_finite())
                .collect();
            let fit = fit_line(&pts)?;
            Ok(format!("{r},{},{},{}\n", fmt17(fit.slope), fmt17(fit.stderr), fit.n))
        })
        .collect::<anyhow::Result<_>>()?;
    let text = String::from("replica,slope,stderr,points\n") + &rows.concat();
    emit(cli_out(cfg), &format!("{}_rates.csv", cfg.experiment.id), &text)?;
    Ok(0)
}

fn run_acceptance(only: &[u32]) -> anyhow::Result<u8> {
    for n in only {
        if !CRITERIA.iter().any(|c| c.number == *n) {
            return Err(config_error(format!("no criterion {n}")));
        }
    }
    let mut all = true;
    for c in CRITERIA.iter().filter(|c| only.is_empty() || only.contains(&c.number)) {
        let o = acceptance::run_criterion(c);
        println!("{}", o.line());
        all &= o.passed;
    }
    Ok(if all { 0 } else { 1 })
}

fn sample(cli: &Cli, law: &SampleLaw) -> anyhow::Result<u8> {
    let rng = RngStream::new(cli.seed.unwrap_or(0), 0, StreamId::Aux(0));
    let mut text = String::new();
    match law {
        SampleLaw::Alarms {
            weight,
            count,
            start,
            method,
        } => {
            let m = match method {
                MethodChoice::Sequential => AlarmMethod::Sequential,
                MethodChoice::PoissonEmbed => AlarmMethod::PoissonEmbed,
            };
            let s = sampling::alarm_sequence(0, *weight, *count, *start, rng, m).map_err(|e| config_error(e.to_string()))?;
            column(&mut text, "alarm", &s.alarms);
        }
        SampleLaw::VrrwAlarms { a, count, start } => {
            let s = sampling::vrrw_alarm_sequence(0, *a, *count, *start, rng).map_err(|e| config_error(e.to_string()))?;
            column(&mut text, "alarm", &s.alarms);
        }
        SampleLaw::Gamma { shapes, count } => {
            let mut rng = rng;
            let header: Vec<String> = (0..shapes.len()).map(|i| format!("w{i}")).collect();
            text.push_str(&header.join(","));
            text.push('\n');
            for _ in 0..*count {
                let w = sampling::sample_gamma_weights(shapes, &mut rng).map_err(|e| config_error(e.to_string()))?;
                let row: Vec<String> = w.iter().map(|x| fmt17(*x)).collect();
                text.push_str(&row.join(","));
                text.push('\n');
            }
        }
        SampleLaw::Sojourn { log_z, count } => {
            let mut rng = rng;
            let v: Vec<f64> = (0..*count).map(|_| sampling::sample_sojourn(*log_z, &mut rng)).collect();
            column(&mut text, "sojourn", &v);
        }
    }
    emit(cli.out.clone(), "samples.csv", &text)?;
    Ok(0)
}

fn column(text: &mut String, name: &str, values: &[f64]) {
    text.push_str(name);
    text.push('\n');
    for v in values {
        text.push_str(&fmt17(*v));
        text.push('\n');
    }
}
