//! JSON interchange format for simulated datasets.
//!
//! A dataset holds everything needed to rerun an estimator and score it:
//! the array geometry, the true path parameters, the pilot matrix and the
//! observation tensors. Complex scalars are `[re, im]` pairs. Tensors are
//! flattened first index fastest, i.e. entry `(i1, i2, i3)` of an
//! `(I1, I2, I3)` tensor sits at `i1 + I1 * (i2 + I2 * i3)` (the mode-1
//! unfolding read column by column). Pilots are stored one row per pilot
//! index. An infinite SNR (noiseless data) is written as `null` for both
//! `snr_db` and `noise_precision`.

use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

use crate::channel::{
    generate_pilots, sample_paths, synthesize_channels, synthesize_observations, ArrayGeometry,
    NoiseLevel, ObservationBatch, Path, PathParameters, PilotMatrix,
};
use crate::error::{Error, Result};
use crate::harness::TrialData;
use crate::rng::{derive_seed, Purpose};
use crate::tensor::{ComplexMatrix, ComplexTensor3, C64};

pub const FORMAT_NAME: &str = "vbchan-dataset";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub geometry: ArrayGeometry,
    pub paths: PathParameters,
    pub observations: ObservationBatch,
}

impl Dataset {
    /// Draws paths, pilots and noise from `seed`. The draws match trial 0 of
    /// a sweep run with the same master seed.
    pub fn simulate(
        geometry: ArrayGeometry,
        users: usize,
        paths_per_user: usize,
        pilot_len: usize,
        snr_db: f64,
        seed: u64,
    ) -> Result<Self> {
        let paths = sample_paths(
            users,
            paths_per_user,
            derive_seed(seed, 0, Purpose::Paths, 0),
        )?;
        let channels = synthesize_channels(&geometry, &paths);
        let pilots = generate_pilots(pilot_len, users, derive_seed(seed, 0, Purpose::Pilots, 0))?;
        let observations = synthesize_observations(
            &channels,
            &pilots,
            NoiseLevel::SnrDb(snr_db),
            derive_seed(seed, 0, Purpose::Noise, 0),
        )?;
        Ok(Self {
            geometry,
            paths,
            observations,
        })
    }

    /// True channel tensors.
    pub fn channels(&self) -> Vec<ComplexTensor3> {
        synthesize_channels(&self.geometry, &self.paths)
    }

    /// The dataset viewed as a single sweep trial, for [`crate::harness::run_cell`].
    pub fn trial_data(&self) -> TrialData {
        TrialData {
            paths: self.paths.clone(),
            channels: self.channels(),
            pilots: self.observations.pilots.clone(),
            noise_seed: self.observations.seed,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&Document::from(self)).expect("dataset serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Document =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("dataset: {e}")))?;
        doc.into_dataset()
    }

    pub fn save(&self, path: &FsPath) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &FsPath) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

type Pair = [f64; 2];

fn pair(z: C64) -> Pair {
    [z.re, z.im]
}

fn complex(p: Pair) -> C64 {
    C64::new(p[0], p[1])
}

fn finite_or_null(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GeometryDoc {
    dims: [usize; 3],
    spacing: [f64; 3],
    wavelength: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PathDoc {
    gain: Pair,
    elevation: f64,
    azimuth: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    format: String,
    version: u32,
    geometry: GeometryDoc,
    paths: Vec<Vec<PathDoc>>,
    pilots: Vec<Vec<Pair>>,
    observations: Vec<Vec<Pair>>,
    snr_db: Option<f64>,
    noise_precision: Option<f64>,
    seed: u64,
}

impl From<&Dataset> for Document {
    fn from(d: &Dataset) -> Self {
        let obs = &d.observations;
        let s = obs.pilots.matrix();
        Document {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            geometry: GeometryDoc {
                dims: d.geometry.dims(),
                spacing: d.geometry.spacing(),
                wavelength: d.geometry.wavelength(),
            },
            paths: d
                .paths
                .users()
                .iter()
                .map(|u| {
                    u.iter()
                        .map(|p| PathDoc {
                            gain: pair(p.gain),
                            elevation: p.elevation,
                            azimuth: p.azimuth,
                        })
                        .collect()
                })
                .collect(),
            pilots: (0..s.nrows())
                .map(|l| s.row(l).iter().copied().map(pair).collect())
                .collect(),
            observations: obs
                .tensors
                .iter()
                .map(|t| t.as_slice().iter().copied().map(pair).collect())
                .collect(),
            snr_db: finite_or_null(obs.snr_db),
            noise_precision: finite_or_null(obs.noise_precision),
            seed: obs.seed,
        }
    }
}

impl Document {
    fn into_dataset(self) -> Result<Dataset> {
        if self.format != FORMAT_NAME || self.version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "expected {FORMAT_NAME} version {FORMAT_VERSION}, found {} version {}",
                self.format, self.version
            )));
        }
        let g = self.geometry;
        let geometry = ArrayGeometry::new(g.dims, g.spacing, g.wavelength)?;
        let paths = PathParameters::new(
            self.paths
                .into_iter()
                .map(|u| {
                    u.into_iter()
                        .map(|p| Path {
                            gain: complex(p.gain),
                            elevation: p.elevation,
                            azimuth: p.azimuth,
                        })
                        .collect()
                })
                .collect(),
        )?;
        let len = self.pilots.len();
        let users = self.pilots.first().map_or(0, Vec::len);
        if len == 0 || users == 0 || self.pilots.iter().any(|row| row.len() != users) {
            return Err(Error::Format(
                "pilot rows must be non-empty and of equal length".into(),
            ));
        }
        let pilots = PilotMatrix::new(ComplexMatrix::from_fn(len, users, |l, n| {
            complex(self.pilots[l][n])
        }))?;
        if users != paths.num_users() {
            return Err(Error::Format(format!(
                "{users} pilot columns for {} users",
                paths.num_users()
            )));
        }
        let tensors = self
            .observations
            .into_iter()
            .map(|t| ComplexTensor3::from_vec(g.dims, t.into_iter().map(complex).collect()))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::Format(format!("observation tensor: {e}")))?;
        let noise_precision = self.noise_precision.unwrap_or(f64::INFINITY);
        let snr_db = self.snr_db.unwrap_or(f64::INFINITY);
        let observations =
            ObservationBatch::new(tensors, pilots, noise_precision, snr_db, self.seed)?;
        Ok(Dataset {
            geometry,
            paths,
            observations,
        })
    }
}
