use std::time::Instant;

use super::config::{Algorithm, Execution, ExperimentConfig};
use super::metrics::mse;
use crate::channel::{
    generate_pilots, sample_paths, synthesize_channels, synthesize_observations, NoiseLevel,
    ObservationBatch, PathParameters, PilotMatrix,
};
use crate::error::Result;
use crate::estimators::{bcd_solve, ls_channels, BcdInit, BcdOptions};
use crate::rng::{derive_seed, Purpose};
use crate::tensor::ComplexTensor3;
use crate::vi::{vi_solve, ViInit, ViOptions};

/// One algorithm run on one sweep cell of one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub trial: u64,
    pub algo: Algorithm,
    pub snr_db: f64,
    pub pilot_len: usize,
    /// The rank-bound axis value of the cell. `ls` and `bcd-genie` do not use
    /// it; their rows repeat the same result for every bound.
    pub rank_bound: usize,
    /// NaN when the solver failed.
    pub mse: f64,
    pub iters: usize,
    /// Wall-clock seconds of the solve alone.
    pub seconds: f64,
    pub path_counts: Vec<usize>,
    pub converged: bool,
    /// Seed of the noise realization.
    pub seed: u64,
    /// Solver error message, if any. Not written to CSV.
    pub error: Option<String>,
}

/// Ground truth and pilots of one trial, shared by every sweep cell.
#[derive(Debug, Clone)]
pub struct TrialData {
    pub paths: PathParameters,
    pub channels: Vec<ComplexTensor3>,
    /// Pilots for the longest pilot length; shorter lengths use a prefix.
    pub pilots: PilotMatrix,
    pub noise_seed: u64,
}

impl TrialData {
    pub fn generate(config: &ExperimentConfig, trial: u64) -> Result<Self> {
        let geom = config.geometry()?;
        let paths = sample_paths(
            config.users,
            config.paths,
            derive_seed(config.seed, trial, Purpose::Paths, 0),
        )?;
        let channels = synthesize_channels(&geom, &paths);
        let max_len = config.pilot_lens.iter().copied().max().unwrap_or(1);
        let pilots = generate_pilots(
            max_len,
            config.users,
            derive_seed(config.seed, trial, Purpose::Pilots, 0),
        )?;
        Ok(Self {
            paths,
            channels,
            pilots,
            noise_seed: derive_seed(config.seed, trial, Purpose::Noise, 0),
        })
    }

    pub fn observations(&self, snr_db: f64, pilot_len: usize) -> Result<ObservationBatch> {
        let pilots = self.pilots.truncated(pilot_len)?;
        synthesize_observations(
            &self.channels,
            &pilots,
            NoiseLevel::SnrDb(snr_db),
            self.noise_seed,
        )
    }
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> (Result<T>, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}

type Solved = (Vec<ComplexTensor3>, usize, Vec<usize>, bool);

/// Runs one algorithm on one observation batch and scores it against the
/// trial's channels. Solver initializations are seeded from the config's
/// master seed, `trial` and `rank_bound`.
pub fn run_cell(
    config: &ExperimentConfig,
    trial: u64,
    data: &TrialData,
    obs: &ObservationBatch,
    algo: Algorithm,
    rank_bound: usize,
) -> ResultRow {
    let bcd_opts = BcdOptions {
        max_iters: config.bcd.max_iters,
        rel_tol: config.bcd.rel_tol,
        record_update_objectives: false,
    };
    let bcd = |ranks: Vec<usize>, salt: u64| {
        let init = BcdInit::Random {
            seed: derive_seed(config.seed, trial, Purpose::BcdInit, salt),
        };
        let (out, secs) = timed(|| bcd_solve(obs, &ranks, init, &bcd_opts));
        let res = out.map(|o| {
            let counts = ranks
                .iter()
                .zip(&o.state.collapsed_columns)
                .map(|(r, c)| r - c)
                .collect();
            (o.estimates, o.state.iterations, counts, o.state.converged)
        });
        (res, secs)
    };
    let (solved, seconds): (Result<Solved>, f64) = match algo {
        Algorithm::Ls => {
            let (out, secs) = timed(|| ls_channels(obs));
            (out.map(|e| (e, 1, Vec::new(), true)), secs)
        }
        Algorithm::BcdGenie => bcd(data.paths.path_counts(), 0),
        Algorithm::BcdBound => bcd(vec![rank_bound; obs.num_users()], rank_bound as u64),
        Algorithm::Vi => {
            let opts = ViOptions {
                epsilon: config.vi.epsilon,
                max_iters: config.vi.max_iters,
                rel_tol: config.vi.rel_tol,
                ..ViOptions::new(vec![rank_bound; obs.num_users()])
            };
            let init = ViInit::Random {
                seed: derive_seed(config.seed, trial, Purpose::ViInit, rank_bound as u64),
            };
            let (out, secs) = timed(|| vi_solve(obs, &opts, init, None));
            (
                out.map(|o| (o.estimates, o.iterations, o.path_counts, o.converged)),
                secs,
            )
        }
    };
    let mut row = ResultRow {
        trial,
        algo,
        snr_db: obs.snr_db,
        pilot_len: obs.pilot_len(),
        rank_bound,
        mse: f64::NAN,
        iters: 0,
        seconds,
        path_counts: Vec::new(),
        converged: false,
        seed: obs.seed,
        error: None,
    };
    match solved.and_then(|(est, iters, counts, conv)| {
        Ok((mse(&est, &data.channels)?, iters, counts, conv))
    }) {
        Ok((m, iters, counts, conv)) => {
            row.mse = m;
            row.iters = iters;
            row.path_counts = counts;
            row.converged = conv;
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

/// All rows of one trial, ordered by algorithm, then SNR, pilot length and
/// rank bound in config order.
pub fn run_trial(config: &ExperimentConfig, trial: u64) -> Result<Vec<ResultRow>> {
    let data = TrialData::generate(config, trial)?;
    let mut algos = config.algorithms.clone();
    algos.sort();
    let mut rows = Vec::with_capacity(config.row_count() / config.trials);
    for &algo in &algos {
        for &snr in &config.snr_db {
            for &len in &config.pilot_lens {
                let obs = data.observations(snr, len)?;
                let uses_bound = matches!(algo, Algorithm::BcdBound | Algorithm::Vi);
                let mut shared: Option<ResultRow> = None;
                for &rb in &config.rank_bounds {
                    let mut row = if uses_bound {
                        run_cell(config, trial, &data, &obs, algo, rb)
                    } else {
                        shared
                            .get_or_insert_with(|| run_cell(config, trial, &data, &obs, algo, rb))
                            .clone()
                    };
                    row.rank_bound = rb;
                    rows.push(row);
                }
            }
        }
    }
    Ok(rows)
}

/// Runs every trial of the sweep. Solver failures become rows with NaN MSE;
/// only invalid configurations abort.
pub fn run_monte_carlo(config: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    config.validate()?;
    let trials: Vec<u64> = (0..config.trials as u64).collect();
    let per_trial = match config.execution {
        Execution::Sequential => trials
            .iter()
            .map(|&t| run_trial(config, t))
            .collect::<Result<Vec<_>>>()?,
        Execution::Parallel => run_parallel(config, &trials)?,
    };
    Ok(per_trial.into_iter().flatten().collect())
}

#[cfg(feature = "parallel")]
fn run_parallel(config: &ExperimentConfig, trials: &[u64]) -> Result<Vec<Vec<ResultRow>>> {
    use rayon::prelude::*;
    let work = || {
        trials
            .par_iter()
            .map(|&t| run_trial(config, t))
            .collect::<Result<Vec<_>>>()
    };
    match config.thread_count()? {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| crate::error::Error::Argument(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    }
}

#[cfg(not(feature = "parallel"))]
fn run_parallel(config: &ExperimentConfig, trials: &[u64]) -> Result<Vec<Vec<ResultRow>>> {
    config.thread_count()?;
    trials.iter().map(|&t| run_trial(config, t)).collect()
}
