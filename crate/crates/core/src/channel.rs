//! Angular-model channel simulation over a uniform cuboid array.
//!
//! Antenna `(i1, i2, i3)` sits at `(S_x[i1], S_y[i2], S_z[i3])` with
//! `S_x[i] = i * d_x` (and likewise for y, z), so the first antenna is the
//! origin. Flattened channel vectors use the tensor's linear order,
//! `m = i1 + I1 * (i2 + I2 * i3)`.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng::{complex_normal, complex_normal_matrix};
use crate::tensor::{cpd_reconstruct, ComplexMatrix, ComplexTensor3, C64};

#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    dims: [usize; 3],
    spacing: [f64; 3],
    wavelength: f64,
    coords: [Vec<f64>; 3],
}

impl ArrayGeometry {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], wavelength: f64) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::Argument(format!(
                "array dims must be >= 1, got {dims:?}"
            )));
        }
        if spacing.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
            return Err(Error::Argument(format!(
                "antenna spacing must be positive, got {spacing:?}"
            )));
        }
        if !(wavelength > 0.0 && wavelength.is_finite()) {
            return Err(Error::Argument(format!(
                "wavelength must be positive, got {wavelength}"
            )));
        }
        let coords = [0, 1, 2].map(|a| (0..dims[a]).map(|i| i as f64 * spacing[a]).collect());
        Ok(Self {
            dims,
            spacing,
            wavelength,
            coords,
        })
    }

    /// Half-wavelength cube with unit wavelength.
    pub fn half_wavelength(dims: [usize; 3]) -> Result<Self> {
        Self::new(dims, [0.5; 3], 1.0)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    /// Sorted axis coordinates `S_x`, `S_y`, `S_z`.
    pub fn coords(&self, axis: usize) -> &[f64] {
        &self.coords[axis]
    }

    pub fn num_antennas(&self) -> usize {
        self.dims.iter().product()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Path {
    pub gain: C64,
    /// Elevation in [-pi/2, pi/2].
    pub elevation: f64,
    /// Azimuth in [-pi, pi].
    pub azimuth: f64,
}

impl Path {
    /// Phase rates `(u, v, p)` along x, y, z (purely imaginary).
    pub fn phase_rates(&self, wavelength: f64) -> [C64; 3] {
        let k = 2.0 * PI / wavelength;
        let (st, ct) = self.elevation.sin_cos();
        let (sp, cp) = self.azimuth.sin_cos();
        [
            C64::new(0.0, k * st * cp),
            C64::new(0.0, k * st * sp),
            C64::new(0.0, k * ct),
        ]
    }
}

/// Ground-truth propagation paths, one list per user.
#[derive(Debug, Clone, PartialEq)]
pub struct PathParameters {
    users: Vec<Vec<Path>>,
}

impl PathParameters {
    pub fn new(users: Vec<Vec<Path>>) -> Result<Self> {
        if users.is_empty() {
            return Err(Error::Argument("at least one user is required".into()));
        }
        for (n, paths) in users.iter().enumerate() {
            if paths.is_empty() {
                return Err(Error::Argument(format!("user {n} has no paths")));
            }
            for p in paths {
                let ok_el = (-FRAC_PI_2..=FRAC_PI_2).contains(&p.elevation);
                let ok_az = (-PI..=PI).contains(&p.azimuth);
                if !ok_el || !ok_az || !p.gain.re.is_finite() || !p.gain.im.is_finite() {
                    return Err(Error::Argument(format!(
                        "user {n}: path out of range: {p:?}"
                    )));
                }
            }
        }
        Ok(Self { users })
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn user(&self, n: usize) -> &[Path] {
        &self.users[n]
    }

    pub fn users(&self) -> &[Vec<Path>] {
        &self.users
    }

    pub fn path_counts(&self) -> Vec<usize> {
        self.users.iter().map(Vec::len).collect()
    }

    pub fn total_paths(&self) -> usize {
        self.users.iter().map(Vec::len).sum()
    }
}

/// The three CPD factors of one user's channel (or of an estimate of it).
#[derive(Debug, Clone, PartialEq)]
pub struct FactorSet {
    factors: [ComplexMatrix; 3],
}

impl FactorSet {
    pub fn new(a: ComplexMatrix, b: ComplexMatrix, c: ComplexMatrix) -> Result<Self> {
        if a.ncols() != b.ncols() || a.ncols() != c.ncols() {
            return Err(Error::Dimension(format!(
                "factor column counts differ ({}, {}, {})",
                a.ncols(),
                b.ncols(),
                c.ncols()
            )));
        }
        Ok(Self { factors: [a, b, c] })
    }

    pub fn zeros(dims: [usize; 3], rank: usize) -> Self {
        Self {
            factors: dims.map(|d| ComplexMatrix::zeros(d, rank)),
        }
    }

    /// i.i.d. CN(0, 1) entries.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, dims: [usize; 3], rank: usize) -> Self {
        Self {
            factors: dims.map(|d| complex_normal_matrix(rng, d, rank)),
        }
    }

    pub fn rank(&self) -> usize {
        self.factors[0].ncols()
    }

    pub fn dims(&self) -> [usize; 3] {
        [0, 1, 2].map(|k| self.factors[k].nrows())
    }

    /// Factor of mode `k` (0-based).
    pub fn factor(&self, k: usize) -> &ComplexMatrix {
        &self.factors[k]
    }

    pub fn factors(&self) -> [&ComplexMatrix; 3] {
        [&self.factors[0], &self.factors[1], &self.factors[2]]
    }

    /// Replaces the factor of mode `k` (0-based); the shape must not change.
    pub fn set_factor(&mut self, k: usize, value: ComplexMatrix) {
        assert_eq!(
            value.shape(),
            self.factors[k].shape(),
            "factor shape changed"
        );
        self.factors[k] = value;
    }

    pub fn reconstruct(&self) -> ComplexTensor3 {
        cpd_reconstruct(&self.factors[0], &self.factors[1], &self.factors[2])
            .expect("FactorSet keeps consistent column counts")
    }
}

/// Draws `users` users with `paths_per_user` paths each: elevation uniform on
/// [-pi/2, pi/2], azimuth uniform on [-pi, pi], gains i.i.d. CN(0, 1).
pub fn sample_paths(users: usize, paths_per_user: usize, seed: u64) -> Result<PathParameters> {
    sample_paths_with_counts(&vec![paths_per_user; users], seed)
}

pub fn sample_paths_with_counts(counts: &[usize], seed: u64) -> Result<PathParameters> {
    if counts.is_empty() || counts.contains(&0) {
        return Err(Error::Argument(format!(
            "need >= 1 user and >= 1 path each, got {counts:?}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let users = counts
        .iter()
        .map(|&r| {
            (0..r)
                .map(|_| {
                    let elevation = rng.random_range(-FRAC_PI_2..=FRAC_PI_2);
                    let azimuth = rng.random_range(-PI..=PI);
                    let gain = complex_normal(&mut rng);
                    Path {
                        gain,
                        elevation,
                        azimuth,
                    }
                })
                .collect()
        })
        .collect();
    PathParameters::new(users)
}

/// Factors `U`, `V` and `xi^T ⋄ P` of one user's channel.
pub fn steering_factors(geom: &ArrayGeometry, paths: &[Path]) -> FactorSet {
    let r = paths.len();
    let rates: Vec<[C64; 3]> = paths
        .iter()
        .map(|p| p.phase_rates(geom.wavelength()))
        .collect();
    let mk = |axis: usize| {
        let s = geom.coords(axis);
        ComplexMatrix::from_fn(s.len(), r, |i, col| (rates[col][axis] * s[i]).exp())
    };
    let u = mk(0);
    let v = mk(1);
    let mut p = mk(2);
    for (col, path) in paths.iter().enumerate() {
        for x in p.column_mut(col).iter_mut() {
            *x *= path.gain;
        }
    }
    FactorSet { factors: [u, v, p] }
}

/// One channel tensor per user.
pub fn synthesize_channels(geom: &ArrayGeometry, paths: &PathParameters) -> Vec<ComplexTensor3> {
    paths
        .users()
        .iter()
        .map(|user| steering_factors(geom, user).reconstruct())
        .collect()
}

/// Stacks per-user channel tensors into the `N x M` channel matrix.
pub fn channel_matrix(channels: &[ComplexTensor3]) -> Result<ComplexMatrix> {
    let m = channels.first().map(ComplexTensor3::len).unwrap_or(0);
    if channels.iter().any(|h| h.len() != m) {
        return Err(Error::Dimension(
            "channel tensors have different sizes".into(),
        ));
    }
    Ok(ComplexMatrix::from_fn(channels.len(), m, |n, i| {
        channels[n].as_slice()[i]
    }))
}

/// Pilot sequences, one column per user.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotMatrix(ComplexMatrix);

impl PilotMatrix {
    pub fn new(s: ComplexMatrix) -> Result<Self> {
        if s.nrows() == 0 || s.ncols() == 0 {
            return Err(Error::Argument(format!(
                "pilot matrix must be non-empty, got {}x{}",
                s.nrows(),
                s.ncols()
            )));
        }
        for (n, col) in s.column_iter().enumerate() {
            if col.iter().all(|z| z.norm_sqr() == 0.0) {
                return Err(Error::Argument(format!("pilot column {n} is all zero")));
            }
        }
        Ok(Self(s))
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    pub fn num_users(&self) -> usize {
        self.0.ncols()
    }

    /// `s_n(l)`.
    #[inline]
    pub fn get(&self, l: usize, n: usize) -> C64 {
        self.0[(l, n)]
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.0
    }

    /// `S^H S`, entry `(n, p) = sum_l conj(s_n(l)) s_p(l)`.
    pub fn gram(&self) -> ComplexMatrix {
        self.0.adjoint() * &self.0
    }

    /// `sum_l |s_n(l)|^2`.
    pub fn energy(&self, n: usize) -> f64 {
        self.0.column(n).iter().map(|z| z.norm_sqr()).sum()
    }

    /// First `len` pilot symbols of every user.
    pub fn truncated(&self, len: usize) -> Result<Self> {
        if len == 0 || len > self.len() {
            return Err(Error::Argument(format!(
                "cannot truncate {} pilots to {len}",
                self.len()
            )));
        }
        Self::new(self.0.rows(0, len).into_owned())
    }
}

/// i.i.d. CN(0, 1) pilots, drawn symbol-major (all users' `s(l)` before
/// `s(l + 1)`), so a shorter draw is a prefix of a longer one.
pub fn generate_pilots(len: usize, users: usize, seed: u64) -> Result<PilotMatrix> {
    if len == 0 || users == 0 {
        return Err(Error::Argument(format!(
            "pilot length and user count must be >= 1, got {len}, {users}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PilotMatrix::new(complex_normal_matrix(&mut rng, len, users))
}

/// How much noise to add.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseLevel {
    /// Target SNR in dB, relative to the realized noiseless received power;
    /// `f64::INFINITY` means no noise.
    SnrDb(f64),
    /// Fixed noise precision (inverse noise power per entry).
    Precision(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationBatch {
    pub tensors: Vec<ComplexTensor3>,
    pub pilots: PilotMatrix,
    /// `f64::INFINITY` when noiseless.
    pub noise_precision: f64,
    pub snr_db: f64,
    pub seed: u64,
}

impl ObservationBatch {
    pub fn new(
        tensors: Vec<ComplexTensor3>,
        pilots: PilotMatrix,
        noise_precision: f64,
        snr_db: f64,
        seed: u64,
    ) -> Result<Self> {
        if tensors.len() != pilots.len() {
            return Err(Error::Dimension(format!(
                "{} observation tensors for {} pilot symbols",
                tensors.len(),
                pilots.len()
            )));
        }
        let dims = tensors[0].dims();
        if tensors.iter().any(|t| t.dims() != dims) {
            return Err(Error::Dimension(
                "observation tensors have different shapes".into(),
            ));
        }
        if !(noise_precision > 0.0) {
            return Err(Error::Argument(format!(
                "noise precision must be positive, got {noise_precision}"
            )));
        }
        Ok(Self {
            tensors,
            pilots,
            noise_precision,
            snr_db,
            seed,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.tensors[0].dims()
    }

    pub fn num_users(&self) -> usize {
        self.pilots.num_users()
    }

    pub fn pilot_len(&self) -> usize {
        self.pilots.len()
    }

    /// `L x M` matrix with row `l` holding the flattened `Y_l`.
    pub fn observation_matrix(&self) -> ComplexMatrix {
        let m = self.tensors[0].len();
        ComplexMatrix::from_fn(self.tensors.len(), m, |l, i| self.tensors[l].as_slice()[i])
    }
}

/// Noiseless received tensors `G_l = sum_n s_n(l) H^n`.
pub fn noiseless_observations(
    channels: &[ComplexTensor3],
    pilots: &PilotMatrix,
) -> Result<Vec<ComplexTensor3>> {
    if channels.len() != pilots.num_users() {
        return Err(Error::Dimension(format!(
            "{} channels for {} pilot columns",
            channels.len(),
            pilots.num_users()
        )));
    }
    let dims = channels[0].dims();
    if channels.iter().any(|h| h.dims() != dims) {
        return Err(Error::Dimension(
            "channel tensors have different shapes".into(),
        ));
    }
    Ok((0..pilots.len())
        .map(|l| {
            let mut g = ComplexTensor3::zeros(dims);
            for (n, h) in channels.iter().enumerate() {
                g.axpy(pilots.get(l, n), h);
            }
            g
        })
        .collect())
}

/// `Y_l = G_l + W_l` with `W` i.i.d. CN(0, 1/beta). Under
/// [`NoiseLevel::SnrDb`], `1/beta = sum_l ||G_l||^2 / (M L 10^(snr/10))`, so
/// the realized SNR equals the target in expectation. Noise entries are drawn
/// symbol by symbol in linear order, so a shorter pilot length sees a prefix
/// of the same noise sequence.
pub fn synthesize_observations(
    channels: &[ComplexTensor3],
    pilots: &PilotMatrix,
    noise: NoiseLevel,
    seed: u64,
) -> Result<ObservationBatch> {
    let mut tensors = noiseless_observations(channels, pilots)?;
    let entries = (tensors[0].len() * tensors.len()) as f64;
    let signal: f64 = tensors.iter().map(ComplexTensor3::norm_sqr).sum();
    let (variance, snr_db) = match noise {
        NoiseLevel::SnrDb(snr) if snr == f64::INFINITY => (0.0, snr),
        NoiseLevel::SnrDb(snr) if snr.is_finite() => {
            (signal / (entries * 10f64.powf(snr / 10.0)), snr)
        }
        NoiseLevel::SnrDb(snr) => return Err(Error::Argument(format!("invalid SNR {snr} dB"))),
        NoiseLevel::Precision(beta) if beta > 0.0 => {
            let var = 1.0 / beta;
            (var, 10.0 * (signal / (entries * var)).log10())
        }
        NoiseLevel::Precision(beta) => {
            return Err(Error::Argument(format!(
                "noise precision must be positive, got {beta}"
            )))
        }
    };
    if variance > 0.0 {
        let sigma = variance.sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for y in &mut tensors {
            for z in y.as_mut_slice() {
                *z += complex_normal(&mut rng) * sigma;
            }
        }
    }
    let beta = if variance > 0.0 {
        1.0 / variance
    } else {
        f64::INFINITY
    };
    ObservationBatch::new(tensors, pilots.clone(), beta, snr_db, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{numerical_rank, unfold};

    fn path(gain: C64, elevation: f64, azimuth: f64) -> Path {
        Path {
            gain,
            elevation,
            azimuth,
        }
    }

    #[test]
    fn geometry_coordinates() {
        let g = ArrayGeometry::new([8, 8, 8], [0.5; 3], 1.0).unwrap();
        assert_eq!(g.num_antennas(), 512);
        let expected: Vec<f64> = (0..8).map(|i| 0.5 * i as f64).collect();
        assert_eq!(g.coords(0), expected.as_slice());
        assert_eq!(*g.coords(0).last().unwrap(), 3.5);

        let single = ArrayGeometry::half_wavelength([1, 1, 1]).unwrap();
        assert_eq!(single.coords(0), &[0.0]);
        assert_eq!(single.num_antennas(), 1);

        let ura = ArrayGeometry::half_wavelength([4, 2, 1]).unwrap();
        assert_eq!(ura.num_antennas(), 8);
        assert_eq!(ura.coords(2), &[0.0]);
    }

    #[test]
    fn geometry_rejects_bad_input() {
        assert!(ArrayGeometry::new([0, 1, 1], [0.5; 3], 1.0).is_err());
        assert!(ArrayGeometry::new([1, 1, 1], [0.5, 0.0, 0.5], 1.0).is_err());
        assert!(ArrayGeometry::new([1, 1, 1], [0.5; 3], -1.0).is_err());
    }

    #[test]
    fn sample_paths_counts_ranges_determinism() {
        let p = sample_paths(5, 3, 42).unwrap();
        assert_eq!(p.total_paths(), 15);
        assert_eq!(p, sample_paths(5, 3, 42).unwrap());
        assert_ne!(p, sample_paths(5, 3, 43).unwrap());
        for user in p.users() {
            for q in user {
                assert!(q.elevation.abs() <= FRAC_PI_2 && q.azimuth.abs() <= PI);
            }
        }
    }

    #[test]
    fn gain_power_law_of_large_numbers() {
        let p = sample_paths(1, 100_000, 1).unwrap();
        let mean: f64 = p.user(0).iter().map(|q| q.gain.norm_sqr()).sum::<f64>() / 1e5;
        assert!((0.99..=1.01).contains(&mean), "{mean}");
    }

    #[test]
    fn steering_broadside_and_endfire() {
        let g = ArrayGeometry::half_wavelength([4, 3, 5]).unwrap();
        let f = steering_factors(&g, &[path(C64::new(1.0, 0.0), 0.0, 0.7)]);
        for z in f.factor(0).iter().chain(f.factor(1).iter()) {
            assert!((z - C64::new(1.0, 0.0)).norm() < 1e-12);
        }
        for i in 0..5 {
            let expected = if i % 2 == 0 { 1.0 } else { -1.0 };
            assert!((f.factor(2)[(i, 0)] - C64::new(expected, 0.0)).norm() < 1e-12);
        }

        let f = steering_factors(&g, &[path(C64::new(1.0, 0.0), FRAC_PI_2, 0.0)]);
        for z in f.factor(2).iter() {
            assert!((z - C64::new(1.0, 0.0)).norm() < 1e-12);
        }
        for i in 0..4 {
            let expected = if i % 2 == 0 { 1.0 } else { -1.0 };
            assert!((f.factor(0)[(i, 0)] - C64::new(expected, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn steering_entries_unit_modulus() {
        let g = ArrayGeometry::half_wavelength([6, 5, 4]).unwrap();
        let p = sample_paths(1, 4, 9).unwrap();
        let f = steering_factors(&g, p.user(0));
        for z in f.factor(0).iter().chain(f.factor(1).iter()) {
            assert!((z.norm() - 1.0).abs() < 1e-12);
        }
        for (r, q) in p.user(0).iter().enumerate() {
            for i in 0..4 {
                assert!((f.factor(2)[(i, r)].norm() - q.gain.norm()).abs() < 1e-12);
            }
        }
    }

    // Direct evaluation of the angular model, one antenna at a time.
    fn angular_model_oracle(g: &ArrayGeometry, paths: &[Path]) -> ComplexTensor3 {
        ComplexTensor3::from_fn(g.dims(), |i1, i2, i3| {
            let (x, y, z) = (g.coords(0)[i1], g.coords(1)[i2], g.coords(2)[i3]);
            paths
                .iter()
                .map(|p| {
                    let (st, ct) = p.elevation.sin_cos();
                    let (sp, cp) = p.azimuth.sin_cos();
                    let phase = 2.0 * PI / g.wavelength() * (x * st * cp + y * st * sp + z * ct);
                    p.gain * C64::new(0.0, phase).exp()
                })
                .sum()
        })
    }

    #[test]
    fn channels_match_direct_evaluation() {
        let g = ArrayGeometry::new([5, 4, 3], [0.5, 0.4, 0.7], 1.3).unwrap();
        let p = sample_paths(3, 3, 17).unwrap();
        let hs = synthesize_channels(&g, &p);
        for (n, h) in hs.iter().enumerate() {
            let oracle = angular_model_oracle(&g, p.user(n));
            let max = h
                .as_slice()
                .iter()
                .zip(oracle.as_slice())
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            assert!(max < 1e-12, "user {n}: {max}");
        }
        let hm = channel_matrix(&hs).unwrap();
        assert_eq!(hm.shape(), (3, 60));
        assert_eq!(hm[(1, 7)], hs[1].as_slice()[7]);
    }

    #[test]
    fn channel_special_cases() {
        let g = ArrayGeometry::half_wavelength([3, 3, 3]).unwrap();
        let p = PathParameters::new(vec![vec![path(C64::new(1.0, 0.0), 0.0, 0.3)]]).unwrap();
        let h = &synthesize_channels(&g, &p)[0];
        assert!(h.as_slice().iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));

        let xi = C64::new(0.3, -1.2);
        let p = PathParameters::new(vec![vec![path(xi, 0.4, 1.0), path(-xi, 0.4, 1.0)]]).unwrap();
        let h = &synthesize_channels(&g, &p)[0];
        assert!(h.norm() < 1e-12);
    }

    #[test]
    fn channel_multilinear_rank_bounded_by_paths() {
        let g = ArrayGeometry::half_wavelength([6, 6, 6]).unwrap();
        let p = sample_paths(2, 3, 5).unwrap();
        for h in synthesize_channels(&g, &p) {
            for k in 1..=3 {
                assert!(numerical_rank(&unfold(&h, k).unwrap()) <= 3);
            }
        }
    }

    #[test]
    fn pilots_shape_determinism_power() {
        let s = generate_pilots(10, 5, 3).unwrap();
        assert_eq!((s.len(), s.num_users()), (10, 5));
        assert_eq!(s, generate_pilots(10, 5, 3).unwrap());
        let long = generate_pilots(1000, 3, 4).unwrap();
        for n in 0..3 {
            let p = long.energy(n) / 1000.0;
            assert!((0.8..=1.2).contains(&p), "{p}");
        }
        // Prefix property.
        let short = generate_pilots(4, 3, 4).unwrap();
        assert_eq!(short, long.truncated(4).unwrap());
    }

    #[test]
    fn noiseless_observations_are_exact() {
        let g = ArrayGeometry::half_wavelength([3, 2, 2]).unwrap();
        let p = sample_paths(2, 2, 1).unwrap();
        let hs = synthesize_channels(&g, &p);
        let s = generate_pilots(4, 2, 2).unwrap();
        let obs = synthesize_observations(&hs, &s, NoiseLevel::SnrDb(f64::INFINITY), 0).unwrap();
        assert_eq!(obs.noise_precision, f64::INFINITY);
        let g_l = noiseless_observations(&hs, &s).unwrap();
        assert_eq!(obs.tensors, g_l);
    }

    #[test]
    fn realized_snr_close_to_target() {
        let g = ArrayGeometry::half_wavelength([8, 8, 8]).unwrap();
        let p = sample_paths(5, 3, 8).unwrap();
        let hs = synthesize_channels(&g, &p);
        let s = generate_pilots(10, 5, 9).unwrap();
        let clean = noiseless_observations(&hs, &s).unwrap();
        let signal: f64 = clean.iter().map(ComplexTensor3::norm_sqr).sum();
        let mut total = 0.0;
        for trial in 0..100 {
            let obs = synthesize_observations(&hs, &s, NoiseLevel::SnrDb(20.0), trial).unwrap();
            let noise: f64 = obs
                .tensors
                .iter()
                .zip(&clean)
                .map(|(y, g)| y.dist_sqr(g))
                .sum();
            let realized = 10.0 * (signal / noise).log10();
            assert!((realized - 20.0).abs() < 0.5, "{realized}");
            total += realized;
        }
        assert!((total / 100.0 - 20.0).abs() < 0.1);
    }

    #[test]
    fn zero_signal_gives_pure_noise() {
        let dims = [4, 4, 4];
        let hs = vec![ComplexTensor3::zeros(dims)];
        let s = PilotMatrix::new(ComplexMatrix::from_element(50, 1, C64::new(1.0, 0.0))).unwrap();
        let beta = 4.0;
        let obs = synthesize_observations(&hs, &s, NoiseLevel::Precision(beta), 1).unwrap();
        let mean_power: f64 = obs
            .tensors
            .iter()
            .map(ComplexTensor3::norm_sqr)
            .sum::<f64>()
            / 50.0;
        let expected = 64.0 / beta;
        assert!(
            (mean_power / expected - 1.0).abs() < 0.05,
            "{mean_power} vs {expected}"
        );
        assert_eq!(obs.noise_precision, beta);
    }

    #[test]
    fn observations_are_deterministic() {
        let g = ArrayGeometry::half_wavelength([3, 3, 2]).unwrap();
        let p = sample_paths(2, 2, 1).unwrap();
        let hs = synthesize_channels(&g, &p);
        let s = generate_pilots(5, 2, 2).unwrap();
        let a = synthesize_observations(&hs, &s, NoiseLevel::SnrDb(10.0), 77).unwrap();
        let b = synthesize_observations(&hs, &s, NoiseLevel::SnrDb(10.0), 77).unwrap();
        assert_eq!(a, b);
    }
}
