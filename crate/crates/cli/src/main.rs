//! `agpucb`: run AGP-UCB experiments and inspect the quantities behind the
//! regret bound.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use agp_core::agp::FeedbackSchedule;
use agp_core::experiment::{
    self, bound_for, fmt_f64, run_single, write_snapshot_csvs, Algorithm, ExperimentConfig, Scenario,
};
use agp_core::kernels::KernelSpec;
use agp_core::regret::info_gain_greedy;
use agp_core::solver::BoxDomain;
use agp_core::ucb::estimate_ab;
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "agpucb", version, about = "Approximate GP-UCB for time-varying optimization with user feedback")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run seeded replicates and write per-run, aggregate and distance CSVs.
    Run(RunArgs),
    /// Run every combination of ω and feedback schedule, one directory each.
    Sweep(SweepArgs),
    /// Print the computable regret bound at one or more horizons.
    Bounds(BoundsArgs),
    /// Estimate the derivative tail constants (a, b) by Monte Carlo.
    EstimateAb(AbArgs),
    /// Print the greedy information gain γ_T for T = 1..horizon.
    InfoGain(InfoGainArgs),
    /// Write posterior mean and ±1σ grids of one run at checkpoint steps.
    GpDump(GpDumpArgs),
}

#[derive(Args)]
struct Overrides {
    /// TOML experiment configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed; replicate r uses seed + r.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of replicates.
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    horizon: Option<u64>,
    #[arg(long)]
    omega: Option<f64>,
    /// agp_ucb, synthetic, zero2 or zero4.
    #[arg(long)]
    algorithm: Option<Algorithm>,
    /// every_step, every_q:Q or bernoulli:P.
    #[arg(long)]
    schedule: Option<FeedbackSchedule>,
    /// Worker threads for replicates.
    #[arg(long)]
    workers: Option<usize>,
}

impl Overrides {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.out {
            cfg.output.dir = v.clone();
        }
        if let Some(v) = self.runs {
            cfg.runs = v;
        }
        if let Some(v) = self.horizon {
            cfg.horizon = v;
        }
        if let Some(v) = self.omega {
            cfg.objective.omega = v;
        }
        if let Some(v) = self.algorithm {
            cfg.algorithm = v;
        }
        if let Some(v) = self.schedule {
            cfg.feedback.schedule = v;
        }
        if let Some(v) = self.workers {
            cfg.workers = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    overrides: Overrides,
    /// Also write GP snapshots of run 0 at the configured checkpoint steps.
    #[arg(long)]
    snapshots: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.2, 0.4])]
    omegas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values = ["every_step", "every_q:4"])]
    schedules: Vec<FeedbackSchedule>,
}

#[derive(Args)]
struct BoundsArgs {
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long, value_delimiter = ',', default_values_t = [100, 500, 2000])]
    horizons: Vec<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct AbArgs {
    #[arg(long, default_value_t = 1.0)]
    length_scale: f64,
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    #[arg(long, default_value_t = 2000)]
    paths: usize,
    /// Lattice points per axis.
    #[arg(long, default_value_t = 201)]
    grid: usize,
    #[arg(long, default_value_t = 1)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Write to this file instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InfoGainArgs {
    #[arg(long, default_value_t = 500)]
    horizon: usize,
    #[arg(long, default_value_t = 0.1)]
    noise_std: f64,
    #[arg(long, default_value_t = 1.0)]
    length_scale: f64,
    /// Lattice points per axis; raised to horizon + 1 in one dimension.
    #[arg(long, default_value_t = 501)]
    grid: usize,
    #[arg(long, default_value_t = 1)]
    dim: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GpDumpArgs {
    #[command(flatten)]
    overrides: Overrides,
    /// Replicate whose beliefs are dumped.
    #[arg(long, default_value_t = 0)]
    run_id: usize,
    #[arg(long, value_delimiter = ',')]
    steps: Option<Vec<u64>>,
    /// Grid points per user.
    #[arg(long)]
    grid: Option<usize>,
}

fn output(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
            }
            Box::new(io::BufWriter::new(
                fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
            ))
        }
        None => Box::new(io::BufWriter::new(io::stdout().lock())),
    })
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let mut cfg = args.overrides.load()?;
    cfg.output.gp_snapshots |= args.snapshots;
    let out = experiment::run_experiment(&cfg)?;
    let last = out.aggregate.regret_avg.last().copied().unwrap_or(f64::NAN);
    println!(
        "{} runs of {} over {} steps; mean R_T/T = {}",
        out.runs.len(),
        cfg.algorithm.label(),
        cfg.horizon,
        fmt_f64(last)
    );
    println!("aggregate: {}", out.artifacts.aggregate.display());
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let cfg = args.overrides.load()?;
    let (manifest, path) = experiment::sweep(&cfg, &args.omegas, &args.schedules)?;
    for e in &manifest.entries {
        println!("omega {} {}: {}", e.omega, e.schedule.label(), e.aggregate.display());
    }
    println!("manifest: {}", path.display());
    Ok(())
}

fn cmd_bounds(args: BoundsArgs) -> Result<()> {
    let cfg = args.overrides.load()?;
    let mut w = output(None)?;
    writeln!(w, "T,gamma_T,beta_T,learning,c2,g_t,bound")?;
    for &t in &args.horizons {
        if t == 0 {
            bail!("horizons must be positive");
        }
        let (inputs, terms) = bound_for(&cfg, t)?;
        writeln!(
            w,
            "{t},{},{},{},{},{},{}",
            fmt_f64(inputs.gamma_t),
            fmt_f64(terms.beta_t),
            fmt_f64(terms.learning),
            fmt_f64(terms.c2),
            fmt_f64(terms.g_t),
            fmt_f64(terms.total)
        )?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_estimate_ab(args: AbArgs) -> Result<()> {
    let kernel = KernelSpec::squared_exponential(args.length_scale)?;
    let est = estimate_ab(&kernel, &BoxDomain::unit(args.dim), args.epsilon, args.paths, args.grid, args.seed)?;
    let mut w = output(args.out.as_deref())?;
    match args.format {
        Format::Json => {
            serde_json::to_writer_pretty(&mut w, &est)?;
            writeln!(w)?;
        }
        Format::Csv => {
            writeln!(w, "coordinate,level,frequency,tail,ratio,a,b")?;
            for r in &est.table {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{}",
                    r.coordinate,
                    fmt_f64(r.level),
                    fmt_f64(r.frequency),
                    fmt_f64(r.tail),
                    fmt_f64(r.ratio),
                    fmt_f64(est.a),
                    fmt_f64(est.b)
                )?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn cmd_info_gain(args: InfoGainArgs) -> Result<()> {
    let kernel = KernelSpec::squared_exponential(args.length_scale)?;
    let grid = if args.dim == 1 { args.grid.max(args.horizon + 1) } else { args.grid };
    let gains = info_gain_greedy(&kernel, &BoxDomain::unit(args.dim), grid, args.horizon, args.noise_std)?;
    let mut w = output(args.out.as_deref())?;
    writeln!(w, "T,gamma_T")?;
    for (t, g) in gains.iter().enumerate() {
        writeln!(w, "{},{}", t + 1, fmt_f64(*g))?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_gp_dump(args: GpDumpArgs) -> Result<()> {
    let mut cfg = args.overrides.load()?;
    if cfg.algorithm != Algorithm::AgpUcb {
        bail!("gp-dump needs algorithm agp_ucb, got {}", cfg.algorithm.label());
    }
    if let Some(steps) = args.steps {
        cfg.output.snapshot_steps = steps;
    }
    if let Some(g) = args.grid {
        cfg.output.snapshot_grid = g;
    }
    let last = cfg.output.snapshot_steps.iter().copied().max().unwrap_or(0);
    if last == 0 {
        bail!("at least one positive checkpoint step is required");
    }
    // Trajectory-scale runs stop at the last checkpoint unless a horizon was given.
    if args.overrides.horizon.is_none() {
        cfg.horizon = last;
    } else if cfg.horizon < last {
        bail!("horizon {} ends before checkpoint {last}", cfg.horizon);
    }
    cfg.output.gp_snapshots = true;
    let dir = cfg.output.dir.clone();
    let mut scenario = Scenario::new(cfg)?;
    // Snapshots are taken for replicate 0; running it under replicate
    // `run_id`'s seed reproduces that replicate exactly.
    scenario.config.seed = scenario.run_seed(args.run_id);
    let mut run = run_single(&scenario, 0, Algorithm::AgpUcb)?;
    run.run_id = args.run_id;
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    for snap in &run.snapshots {
        let (grid, feedback) = write_snapshot_csvs(&dir, args.run_id, snap)?;
        println!("{}\n{}", grid.display(), feedback.display());
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Bounds(a) => cmd_bounds(a),
        Command::EstimateAb(a) => cmd_estimate_ab(a),
        Command::InfoGain(a) => cmd_info_gain(a),
        Command::GpDump(a) => cmd_gp_dump(a),
    }
}
