//! `flowcut` command-line front end.
//!
//! Exit codes: 0 success, 1 runtime or partial failure, 2 configuration error
//! (bad flags or config file, or a dataset that does not load).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use flowcut::flowviz::{flow2rgb_dir, MaxMagnitude};
use flowcut::metrics::evaluate_dirs;
use flowcut::par;
use flowcut::pipeline::{continue_selftrain, ensemble_dirs, run_external_step, run_selftrain, segment_dataset, RunConfig};
use flowcut::tensor_io::AveragingMode;
use flowcut::Error;

#[derive(Parser)]
#[command(name = "flowcut", version, about = "Flow-guided normalized-cut video object segmentation")]
struct Cli {
    /// TOML run configuration; command-line flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for every randomized step.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Graph-cut every frame of a dataset into binary masks.
    Segment(SegmentArgs),
    /// Score predicted masks against ground truth.
    Evaluate(EvaluateArgs),
    /// Bootstrapped self-training rounds on top of the graph-cut masks.
    Selftrain(SelftrainArgs),
    /// Render `(H, W, 2)` flow arrays as colour-wheel PNGs.
    Flow2rgb(Flow2rgbArgs),
    /// Pixel-wise majority vote over several mask directories.
    Ensemble(EnsembleArgs),
}

#[derive(Args)]
struct SegmentArgs {
    /// Dataset directory holding `dataset.toml`.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    self_loops: Option<bool>,
    #[arg(long)]
    eig_tol: Option<f64>,
    /// Side of the square corner blocks used by the foreground rule, in patches.
    #[arg(long)]
    corner_block: Option<usize>,
    #[arg(long, overrides_with = "no_crf")]
    crf: bool,
    #[arg(long, overrides_with = "crf")]
    no_crf: bool,
    #[arg(long)]
    crf_iterations: Option<usize>,
    #[arg(long)]
    w_appearance: Option<f64>,
    #[arg(long)]
    w_smoothness: Option<f64>,
    #[arg(long)]
    theta_alpha: Option<f64>,
    #[arg(long)]
    theta_beta: Option<f64>,
    #[arg(long)]
    theta_gamma: Option<f64>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// `seq` or `frame` averaging.
    #[arg(long, default_value = "seq")]
    mode: AveragingMode,
    /// Also write the report to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SelftrainArgs {
    #[command(flatten)]
    segment: SegmentArgs,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    init_scale: Option<f64>,
    /// Fraction of changed pixels below which rounds stop early (0 disables).
    #[arg(long)]
    early_stop: Option<f64>,
    /// Warm-start each probe from the previous round's probe.
    #[arg(long)]
    resume: bool,
    /// Add rounds after the latest existing one instead of starting over.
    #[arg(long = "continue", conflicts_with = "external")]
    continue_run: bool,
    /// Adopt the predictions an external trainer left in `round_<t>/external`.
    #[arg(long)]
    external: bool,
}

#[derive(Args)]
struct Flow2rgbArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Normalizing magnitude, or `auto` for the per-frame maximum.
    #[arg(long, default_value = "auto", value_parser = parse_max_magnitude)]
    max_magnitude: MaxMagnitude,
}

#[derive(Args)]
struct EnsembleArgs {
    /// Comma-separated mask directories (an odd number, at least 3).
    #[arg(long, value_delimiter = ',', required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_max_magnitude(s: &str) -> Result<MaxMagnitude, String> {
    if s == "auto" {
        return Ok(MaxMagnitude::Auto);
    }
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(MaxMagnitude::Fixed(v)),
        _ => Err(format!("expected `auto` or a positive number, got `{s}`")),
    }
}

/// Failure classes that map onto exit codes.
enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Manifest(_) => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn base_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
            RunConfig::from_toml(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    if let Some(s) = cli.seed {
        cfg.selftrain.seed = s;
    }
    Ok(cfg)
}

fn apply_segment_args(cfg: &mut RunConfig, a: &SegmentArgs) {
    fn set<T: Copy>(slot: &mut T, value: Option<T>) {
        if let Some(v) = value {
            *slot = v;
        }
    }
    if let Some(d) = &a.dataset {
        cfg.dataset = d.clone();
    }
    if let Some(o) = &a.out {
        cfg.output = o.clone();
    }
    set(&mut cfg.affinity.alpha, a.alpha);
    set(&mut cfg.affinity.tau, a.tau);
    set(&mut cfg.affinity.epsilon, a.epsilon);
    set(&mut cfg.affinity.self_loops, a.self_loops);
    set(&mut cfg.spectral.eig_tol, a.eig_tol);
    set(&mut cfg.spectral.corner_block, a.corner_block);
    if a.crf {
        cfg.crf_enabled = true;
    }
    if a.no_crf {
        cfg.crf_enabled = false;
    }
    set(&mut cfg.crf.iterations, a.crf_iterations);
    set(&mut cfg.crf.w_appearance, a.w_appearance);
    set(&mut cfg.crf.w_smoothness, a.w_smoothness);
    set(&mut cfg.crf.theta_alpha, a.theta_alpha);
    set(&mut cfg.crf.theta_beta, a.theta_beta);
    set(&mut cfg.crf.theta_gamma, a.theta_gamma);
}

fn segment(cfg: RunConfig) -> Result<(), Failure> {
    cfg.validate()?;
    let summary = par::with_threads(cfg.threads, || segment_dataset(&cfg))?;
    eprintln!(
        "segmented {}/{} frames into {}",
        summary.succeeded(),
        summary.frames,
        cfg.output.join("masks").display()
    );
    if summary.failures.is_empty() {
        Ok(())
    } else {
        let list: Vec<String> = summary.failures.iter().map(|(k, e)| format!("{k}: {e}")).collect();
        Err(Failure::Runtime(format!("{} frame(s) failed: {}", list.len(), list.join("; "))))
    }
}

fn evaluate(threads: usize, a: &EvaluateArgs) -> Result<(), Failure> {
    let report = par::with_threads(threads, || evaluate_dirs(&a.pred, &a.gt, a.mode))?;
    let json = report.to_json();
    println!("{json}");
    if let Some(path) = &a.out {
        std::fs::write(path, json + "\n").map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
    }
    eprintln!(
        "J {:.4}  F {:.4}  max F-beta {:.4} over {} frame(s)",
        report.dataset_j,
        report.dataset_f,
        report.max_f_beta,
        report.per_frame.len()
    );
    Ok(())
}

fn selftrain(mut cfg: RunConfig, a: &SelftrainArgs) -> Result<(), Failure> {
    apply_segment_args(&mut cfg, &a.segment);
    let st = &mut cfg.selftrain;
    if let Some(r) = a.rounds {
        st.rounds = r;
    }
    if let Some(lr) = a.lr {
        st.lr = lr;
    }
    if let Some(it) = a.iters {
        st.iterations = it;
    }
    if let Some(s) = a.init_scale {
        st.init_scale = s;
    }
    if let Some(e) = a.early_stop {
        st.early_stop = e;
    }
    if a.resume {
        st.resume = true;
    }
    cfg.validate()?;
    let threads = cfg.threads;
    let states = par::with_threads(threads, || {
        if a.external {
            run_external_step(&cfg).map(|s| vec![s])
        } else if a.continue_run {
            continue_selftrain(&cfg)
        } else {
            run_selftrain(&cfg)
        }
    })?;
    for s in &states {
        match &s.metrics {
            Some(m) => eprintln!("round {}: J {:.4}  F {:.4}", s.round, m.dataset_j, m.dataset_f),
            None => eprintln!("round {}: no ground truth to score", s.round),
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = base_config(&cli)?;
    match &cli.command {
        Command::Segment(a) => {
            apply_segment_args(&mut cfg, a);
            segment(cfg)
        }
        Command::Evaluate(a) => evaluate(cfg.threads, a),
        Command::Selftrain(a) => selftrain(cfg, a),
        Command::Flow2rgb(a) => {
            let n = par::with_threads(cfg.threads, || flow2rgb_dir(&a.input, &a.out, a.max_magnitude))?;
            eprintln!("wrote {n} flow image(s) to {}", a.out.display());
            Ok(())
        }
        Command::Ensemble(a) => {
            let n = par::with_threads(cfg.threads, || ensemble_dirs(&a.inputs, &a.out))?;
            eprintln!("merged {n} frame(s) from {} runs into {}", a.inputs.len(), a.out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Runtime(msg)) => {
            log::error!("{msg}");
            ExitCode::from(1)
        }
        Err(Failure::Config(msg)) => {
            log::error!("{msg}");
            ExitCode::from(2)
        }
    }
}
