use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::channel::ArrayGeometry;
use crate::error::{Error, Result};

/// Environment variable holding the worker-thread count for parallel sweeps.
pub const THREADS_ENV: &str = "VBCHAN_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    /// Per-antenna least squares.
    Ls,
    /// BCD told the true path count of every user.
    BcdGenie,
    /// BCD run at the rank bound.
    BcdBound,
    /// Variational Bayes started from the rank bound.
    Vi,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::Ls,
        Algorithm::BcdGenie,
        Algorithm::BcdBound,
        Algorithm::Vi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Ls => "ls",
            Algorithm::BcdGenie => "bcd-genie",
            Algorithm::BcdBound => "bcd-bound",
            Algorithm::Vi => "vi",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                Error::Argument(format!(
                    "unknown algorithm '{s}' (expected ls, bcd-genie, bcd-bound or vi)"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Execution {
    /// Trials spread over a rayon pool (sequential when built without the
    /// `parallel` feature).
    #[default]
    Parallel,
    Sequential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BcdStop {
    pub max_iters: usize,
    pub rel_tol: f64,
}

impl Default for BcdStop {
    fn default() -> Self {
        Self {
            max_iters: 1000,
            rel_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ViStop {
    pub max_iters: usize,
    pub rel_tol: f64,
    pub epsilon: f64,
}

impl Default for ViStop {
    fn default() -> Self {
        Self {
            max_iters: 500,
            rel_tol: 1e-6,
            epsilon: crate::vi::DEFAULT_EPSILON,
        }
    }
}

/// One Monte-Carlo sweep. Every list field is a sweep axis; the sweep runs
/// the full cartesian product for every trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dims: [usize; 3],
    /// Antenna spacing per axis, meters.
    pub spacing: [f64; 3],
    /// Carrier wavelength, meters.
    pub wavelength: f64,
    pub users: usize,
    /// True path count of every user.
    pub paths: usize,
    /// Rank bounds for `bcd-bound` and `vi`.
    pub rank_bounds: Vec<usize>,
    pub pilot_lens: Vec<usize>,
    /// SNRs in dB; `inf` gives noiseless observations.
    pub snr_db: Vec<f64>,
    pub algorithms: Vec<Algorithm>,
    pub trials: usize,
    pub seed: u64,
    pub bcd: BcdStop,
    pub vi: ViStop,
    pub execution: Execution,
    /// Worker threads; falls back to `VBCHAN_THREADS`, then to rayon's default.
    pub threads: Option<usize>,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dims: [8, 8, 8],
            spacing: [0.5; 3],
            wavelength: 1.0,
            users: 5,
            paths: 3,
            rank_bounds: vec![8],
            pilot_lens: vec![10],
            snr_db: vec![20.0],
            algorithms: vec![Algorithm::Ls, Algorithm::BcdGenie, Algorithm::Vi],
            trials: 100,
            seed: 1,
            bcd: BcdStop::default(),
            vi: ViStop::default(),
            execution: Execution::default(),
            threads: None,
            output: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn geometry(&self) -> Result<ArrayGeometry> {
        ArrayGeometry::new(self.dims, self.spacing, self.wavelength)
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry()?;
        let fail = |msg: String| Err(Error::Argument(msg));
        if self.trials == 0 {
            return fail("trials must be >= 1".into());
        }
        if self.users == 0 || self.paths == 0 {
            return fail(format!(
                "users and paths must be >= 1, got {} and {}",
                self.users, self.paths
            ));
        }
        if self.algorithms.is_empty() {
            return fail("no algorithms selected".into());
        }
        let mut algos = self.algorithms.clone();
        algos.sort();
        algos.dedup();
        if algos.len() != self.algorithms.len() {
            return fail(format!("duplicate algorithms in {:?}", self.algorithms));
        }
        if self.pilot_lens.is_empty() || self.pilot_lens.contains(&0) {
            return fail(format!(
                "pilot lengths must be >= 1, got {:?}",
                self.pilot_lens
            ));
        }
        if self.snr_db.is_empty()
            || self
                .snr_db
                .iter()
                .any(|s| s.is_nan() || *s == f64::NEG_INFINITY)
        {
            return fail(format!("invalid SNR list {:?}", self.snr_db));
        }
        if self.rank_bounds.is_empty() || self.rank_bounds.contains(&0) {
            return fail(format!(
                "rank bounds must be >= 1, got {:?}",
                self.rank_bounds
            ));
        }
        if self.bcd.max_iters == 0 || !(self.bcd.rel_tol >= 0.0) {
            return fail("bcd stop parameters must be max_iters >= 1, rel_tol >= 0".into());
        }
        if self.vi.max_iters == 0 || !(self.vi.rel_tol >= 0.0) || !(self.vi.epsilon > 0.0) {
            return fail(
                "vi stop parameters must be max_iters >= 1, rel_tol >= 0, epsilon > 0".into(),
            );
        }
        if self.threads == Some(0) {
            return fail("threads must be >= 1".into());
        }
        Ok(())
    }

    /// Rows the sweep will produce.
    pub fn row_count(&self) -> usize {
        self.trials
            * self.algorithms.len()
            * self.snr_db.len()
            * self.pilot_lens.len()
            * self.rank_bounds.len()
    }

    /// Thread count from the config, then from [`THREADS_ENV`].
    pub fn thread_count(&self) -> Result<Option<usize>> {
        if let Some(t) = self.threads {
            return Ok(Some(t));
        }
        match std::env::var(THREADS_ENV) {
            Ok(v) => match v.trim().parse::<usize>() {
                Ok(t) if t >= 1 => Ok(Some(t)),
                _ => Err(Error::Argument(format!(
                    "{THREADS_ENV} must be a positive integer, got '{v}'"
                ))),
            },
            Err(_) => Ok(None),
        }
    }
}
