use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use vbchan::dataset::Dataset;
use vbchan::harness::{
    emit_results, format_timing_table, run_cell, run_monte_carlo, timing_summary, Algorithm,
    Execution, ExperimentConfig, ResultRow,
};
use vbchan::ArrayGeometry;

/// Multi-user 3D massive MIMO channel estimation experiments.
///
/// The worker-thread count for sweeps can be set with VBCHAN_THREADS.
#[derive(Parser)]
#[command(name = "vbchan", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw channels, pilots and noisy observations and write them as JSON.
    Simulate(SimulateArgs),
    /// Run one estimator on a dataset and write a one-row result CSV.
    Estimate(EstimateArgs),
    /// Run a Monte-Carlo sweep described by a TOML config.
    Sweep(SweepArgs),
    /// Time the rank-bounded solvers and print median seconds per solve.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [8, 8, 8])]
    dims: Vec<usize>,
    /// Antenna spacing per axis in meters.
    #[arg(long, value_delimiter = ',', default_values_t = [0.5, 0.5, 0.5])]
    spacing: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    wavelength: f64,
    #[arg(long, default_value_t = 5)]
    users: usize,
    /// Paths per user.
    #[arg(long, default_value_t = 3)]
    paths: usize,
    #[arg(long, default_value_t = 10)]
    pilot_len: usize,
    /// SNR in dB; `inf` for noiseless observations.
    #[arg(long, default_value_t = 20.0, allow_negative_numbers = true)]
    snr: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimateAlgo {
    Ls,
    Bcd,
    Vi,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    algo: EstimateAlgo,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Rank bound per user. Without it `bcd` is told the true path counts
    /// and `vi` uses 8.
    #[arg(long)]
    rank_bound: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Seed for the solver's random initialization.
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

/// Sweep axes and settings that replace the config file's values.
#[derive(Args)]
struct Overrides {
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Run trials one after another on the calling thread.
    #[arg(long)]
    sequential: bool,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    snr: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pilot_lens: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    rank_bounds: Option<Vec<usize>>,
    /// Comma-separated subset of ls, bcd-genie, bcd-bound, vi.
    #[arg(long, value_delimiter = ',')]
    algos: Option<Vec<String>>,
}

impl Overrides {
    fn apply(self, cfg: &mut ExperimentConfig) -> Result<()> {
        if let Some(t) = self.trials {
            cfg.trials = t;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if self.threads.is_some() {
            cfg.threads = self.threads;
        }
        if self.sequential {
            cfg.execution = Execution::Sequential;
        }
        if let Some(v) = self.snr {
            cfg.snr_db = v;
        }
        if let Some(v) = self.pilot_lens {
            cfg.pilot_lens = v;
        }
        if let Some(v) = self.rank_bounds {
            cfg.rank_bounds = v;
        }
        if let Some(names) = self.algos {
            cfg.algorithms = names
                .iter()
                .map(|n| n.parse::<Algorithm>())
                .collect::<vbchan::Result<_>>()?;
        }
        cfg.validate()?;
        Ok(())
    }
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Result CSV; defaults to the config's `output`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct BenchArgs {
    /// Base config; the built-in reference setup when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Also write the per-solve rows as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

fn simulate(args: SimulateArgs) -> Result<()> {
    if args.dims.len() != 3 || args.spacing.len() != 3 {
        bail!("--dims and --spacing take three comma-separated values");
    }
    let geom = ArrayGeometry::new(
        [args.dims[0], args.dims[1], args.dims[2]],
        [args.spacing[0], args.spacing[1], args.spacing[2]],
        args.wavelength,
    )?;
    let data = Dataset::simulate(
        geom,
        args.users,
        args.paths,
        args.pilot_len,
        args.snr,
        args.seed,
    )?;
    data.save(&args.out)?;
    println!(
        "wrote {} ({} users, {} pilots, snr {} dB)",
        args.out.display(),
        args.users,
        args.pilot_len,
        args.snr
    );
    Ok(())
}

fn estimate(args: EstimateArgs) -> Result<()> {
    let data = Dataset::load(&args.input)?;
    let mut cfg = ExperimentConfig {
        seed: args.seed,
        ..Default::default()
    };
    if let Some(m) = args.max_iters {
        if m == 0 {
            bail!("--max-iters must be >= 1");
        }
        cfg.bcd.max_iters = m;
        cfg.vi.max_iters = m;
    }
    if args.rank_bound == Some(0) {
        bail!("--rank-bound must be >= 1");
    }
    let (algo, rank_bound) = match (args.algo, args.rank_bound) {
        (EstimateAlgo::Ls, rb) => (Algorithm::Ls, rb.unwrap_or(0)),
        (EstimateAlgo::Bcd, None) => (Algorithm::BcdGenie, 0),
        (EstimateAlgo::Bcd, Some(rb)) => (Algorithm::BcdBound, rb),
        (EstimateAlgo::Vi, rb) => (Algorithm::Vi, rb.unwrap_or(8)),
    };
    let row = run_cell(
        &cfg,
        0,
        &data.trial_data(),
        &data.observations,
        algo,
        rank_bound,
    );
    if let Some(err) = &row.error {
        bail!("{algo} failed: {err}");
    }
    emit_results(std::slice::from_ref(&row), &args.out)?;
    println!(
        "{algo}: mse {:.6e}, {} iterations, {:.3} s",
        row.mse, row.iters, row.seconds
    );
    Ok(())
}

fn run_sweep(cfg: &ExperimentConfig, out: Option<&PathBuf>) -> Result<Vec<ResultRow>> {
    let rows = run_monte_carlo(cfg)?;
    if let Some(path) = out {
        emit_results(&rows, path)?;
    }
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        eprintln!(
            "warning: {failed} of {} solves failed (mse NaN)",
            rows.len()
        );
    }
    Ok(rows)
}

fn sweep(args: SweepArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    args.overrides.apply(&mut cfg)?;
    let out = args
        .out
        .or_else(|| cfg.output.clone())
        .context("no output path: pass --out or set `output` in the config")?;
    let rows = run_sweep(&cfg, Some(&out))?;
    println!("wrote {} rows to {}", rows.len(), out.display());
    Ok(())
}

fn bench(args: BenchArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig {
            algorithms: vec![Algorithm::BcdBound, Algorithm::Vi],
            trials: 20,
            ..Default::default()
        },
    };
    args.overrides.apply(&mut cfg)?;
    let rows = run_sweep(&cfg, args.out.as_ref())?;
    print!("{}", format_timing_table(&timing_summary(&rows)));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Estimate(a) => estimate(a),
        Command::Sweep(a) => sweep(a),
        Command::Bench(a) => bench(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("{}", first.trim_start_matches("error: ").trim());
            return ExitCode::from(2);
        }
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
