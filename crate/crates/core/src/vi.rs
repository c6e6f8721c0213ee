//! Tuning-free variational-Bayes channel estimation.
//!
//! # Model
//!
//! * likelihood: `p(Y | Xi) ∝ exp(-beta sum_l ||Y_l - sum_n s_n(l) [[Xi^(1),n, Xi^(2),n, Xi^(3),n]]||^2)`
//! * column prior: `Xi^(k),n_{:,r} ~ CN(0, gamma_r^n^{-1} I)` for every mode `k`,
//!   with one precision per user and component shared by the three modes,
//! * hyperpriors: `gamma_r^n ~ Gamma(eps, eps)`, `beta ~ Gamma(eps, eps)`.
//!
//! # Variational family
//!
//! Fully factorized over factor matrices, component precisions, and the
//! noise precision. Each factor posterior is a complex matrix normal whose
//! rows are independent with the shared covariance `Sigma^(k),n`, i.e.
//! `E[Xi^H Xi] = M^H M + I_k Sigma`. Precisions get Gamma(shape, rate)
//! posteriors.
//!
//! # Iteration
//!
//! For every user `n` and mode `k` in order (so later blocks see the newest
//! values of earlier ones):
//!
//! ```text
//! Sigma = [ (sum_l |s_n(l)|^2) E[beta] ⊙_{j != k} (M_j^T conj(M_j) + I_j conj(Sigma_j)) + diag(E[gamma^n]) ]^{-1}
//! M     = E[beta] * unfold(sum_l conj(s_n(l)) B_l, k) * conj(⋄_{j != k} M_j) * Sigma
//! ```
//!
//! where `B_l = Y_l - sum_{p != n} s_p(l) [[M^(1),p, M^(2),p, M^(3),p]]`. Then
//! `a_r = eps + sum_k I_k`, `b_r = eps + sum_k E[||Xi^(k)_{:,r}||^2]` for
//! every user, and finally `c = eps + M L`, `d = eps + sum_l E[||Y_l - G_l||^2]`.
//!
//! Components whose precision grows large are shrunk towards zero, which is
//! how the solver settles on a path count below the rank bound.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::channel::{FactorSet, ObservationBatch};
use crate::error::{Error, Result};
use crate::estimators::{check_factors, conj_mttkrp, CoupledModel};
use crate::linalg::{hpd_inverse, min_eigenvalue, SolveInfo};
use crate::rng::complex_normal_matrix;
use crate::tensor::{
    cpd_reconstruct, khatri_rao_except, other_modes, ComplexMatrix, ComplexTensor3, C64,
};

/// Default shape/rate of the non-informative Gamma hyperpriors.
pub const DEFAULT_EPSILON: f64 = 1e-6;

/// Expected fit errors below `-NEGATIVE_FIT_TOL * ||Y_l||^2` are reported as
/// errors; smaller negative round-off is clamped to zero.
pub const NEGATIVE_FIT_TOL: f64 = 1e-8;

/// Posterior parameters for one user.
#[derive(Debug, Clone, PartialEq)]
pub struct UserPosterior {
    /// `M^(k),n`, `I_k x R̄`.
    pub means: [ComplexMatrix; 3],
    /// `Sigma^(k),n`, `R̄ x R̄` Hermitian positive definite.
    pub covariances: [ComplexMatrix; 3],
    /// Gamma shapes `a_r`.
    pub gamma_shape: Vec<f64>,
    /// Gamma rates `b_r`.
    pub gamma_rate: Vec<f64>,
}

impl UserPosterior {
    pub fn rank_bound(&self) -> usize {
        self.means[0].ncols()
    }

    /// `E[gamma_r] = a_r / b_r`.
    pub fn expected_gamma(&self) -> Vec<f64> {
        self.gamma_shape
            .iter()
            .zip(&self.gamma_rate)
            .map(|(a, b)| a / b)
            .collect()
    }

    pub fn mean_factors(&self) -> FactorSet {
        FactorSet::new(
            self.means[0].clone(),
            self.means[1].clone(),
            self.means[2].clone(),
        )
        .expect("posterior means share the rank bound")
    }

    pub fn mean_tensor(&self) -> ComplexTensor3 {
        cpd_reconstruct(&self.means[0], &self.means[1], &self.means[2])
            .expect("posterior means share the rank bound")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorState {
    pub users: Vec<UserPosterior>,
    /// Noise Gamma shape `c`.
    pub noise_shape: f64,
    /// Noise Gamma rate `d`.
    pub noise_rate: f64,
    pub epsilon: f64,
}

impl PosteriorState {
    /// Means i.i.d. CN(0, 1), covariances identity, all Gamma parameters `eps`.
    pub fn initialize(
        dims: [usize; 3],
        rank_bounds: &[usize],
        epsilon: f64,
        seed: u64,
    ) -> Result<Self> {
        if rank_bounds.is_empty() || rank_bounds.iter().any(|&r| r == 0) {
            return Err(Error::Argument(format!(
                "rank bounds must be >= 1, got {rank_bounds:?}"
            )));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::Argument(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let users = rank_bounds
            .iter()
            .map(|&r| UserPosterior {
                means: dims.map(|d| complex_normal_matrix(&mut rng, d, r)),
                covariances: [(); 3].map(|_| ComplexMatrix::identity(r, r)),
                gamma_shape: vec![epsilon; r],
                gamma_rate: vec![epsilon; r],
            })
            .collect();
        Ok(Self {
            users,
            noise_shape: epsilon,
            noise_rate: epsilon,
            epsilon,
        })
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn dims(&self) -> [usize; 3] {
        [0, 1, 2].map(|k| self.users[0].means[k].nrows())
    }

    /// `E[beta] = c / d`.
    pub fn expected_noise_precision(&self) -> f64 {
        self.noise_shape / self.noise_rate
    }

    pub fn expected_gamma(&self, n: usize) -> Vec<f64> {
        self.users[n].expected_gamma()
    }

    /// Channel estimates `[[M^(1),n, M^(2),n, M^(3),n]]`.
    pub fn channel_estimates(&self) -> Vec<ComplexTensor3> {
        self.users.iter().map(UserPosterior::mean_tensor).collect()
    }

    /// Checks the state invariants: Hermitian positive-definite covariances,
    /// positive finite Gamma parameters.
    pub fn validate(&self) -> Result<()> {
        for (n, u) in self.users.iter().enumerate() {
            for (k, s) in u.covariances.iter().enumerate() {
                let trace: f64 = (0..s.nrows()).map(|i| s[(i, i)].re).sum();
                let asym = (s - s.adjoint()).norm();
                if asym > 1e-9 * trace.abs().max(1.0) {
                    return Err(Error::Numerical(format!(
                        "user {n}, mode {}: covariance not Hermitian ({asym:.3e})",
                        k + 1
                    )));
                }
                let min_eig = min_eigenvalue(s);
                if min_eig <= -1e-12 * trace.abs() {
                    return Err(Error::Numerical(format!(
                        "user {n}, mode {}: covariance not positive definite (min eigenvalue {min_eig:.3e})",
                        k + 1
                    )));
                }
            }
            let positive = |x: &f64| *x > 0.0 && x.is_finite();
            if !u.gamma_shape.iter().all(positive) || !u.gamma_rate.iter().all(positive) {
                return Err(Error::Numerical(format!(
                    "user {n}: non-positive gamma parameters"
                )));
            }
        }
        if !(self.noise_shape > 0.0
            && self.noise_rate > 0.0
            && self.noise_shape.is_finite()
            && self.noise_rate.is_finite())
        {
            return Err(Error::Numerical(format!(
                "noise parameters must be positive, got c={}, d={}",
                self.noise_shape, self.noise_rate
            )));
        }
        Ok(())
    }

    fn check_against(&self, obs: &ObservationBatch) -> Result<()> {
        if self.num_users() != obs.num_users() {
            return Err(Error::Dimension(format!(
                "state has {} users, observations {}",
                self.num_users(),
                obs.num_users()
            )));
        }
        if self.dims() != obs.dims() {
            return Err(Error::Dimension(format!(
                "state spans {:?}, observations {:?}",
                self.dims(),
                obs.dims()
            )));
        }
        Ok(())
    }
}

fn mode_index(k: usize) -> Result<usize> {
    if (1..=3).contains(&k) {
        Ok(k - 1)
    } else {
        Err(Error::Argument(format!("mode must be 1, 2 or 3, got {k}")))
    }
}

fn user_index(state: &PosteriorState, n: usize) -> Result<&UserPosterior> {
    state.users.get(n).ok_or_else(|| {
        Error::Argument(format!(
            "user {n} out of range ({} users)",
            state.num_users()
        ))
    })
}

/// `E[Xi^H Xi] = M^H M + I_k Sigma` for one factor.
fn second_moment(mean: &ComplexMatrix, cov: &ComplexMatrix) -> ComplexMatrix {
    mean.adjoint() * mean + cov * C64::new(mean.nrows() as f64, 0.0)
}

/// `E[(⋄_{j != k} Xi_j)^T conj(⋄_{j != k} Xi_j)] = ⊙_{j != k} (M_j^T conj(M_j) + I_j conj(Sigma_j))`
/// for user `n` (0-based) and mode `k` (1-based).
pub fn expected_gram(state: &PosteriorState, n: usize, k: usize) -> Result<ComplexMatrix> {
    let k0 = mode_index(k)?;
    Ok(expected_gram_user(user_index(state, n)?, k0))
}

fn expected_gram_user(u: &UserPosterior, k0: usize) -> ComplexMatrix {
    let (a, b) = other_modes(k0);
    let ga = second_moment(&u.means[a], &u.covariances[a]).map(|z| z.conj());
    let gb = second_moment(&u.means[b], &u.covariances[b]).map(|z| z.conj());
    ga.component_mul(&gb)
}

/// `E[||Xi^(k),n_{:,r}||^2] = ||M_{:,r}||^2 + I_k Sigma_{r,r}`.
pub fn expected_column_power(state: &PosteriorState, n: usize, k: usize, r: usize) -> Result<f64> {
    let k0 = mode_index(k)?;
    let u = user_index(state, n)?;
    if r >= u.rank_bound() {
        return Err(Error::Argument(format!(
            "component {r} out of range ({})",
            u.rank_bound()
        )));
    }
    Ok(column_power(u, k0, r))
}

fn column_power(u: &UserPosterior, k0: usize, r: usize) -> f64 {
    let m = &u.means[k0];
    let mean_part: f64 = m.column(r).iter().map(|z| z.norm_sqr()).sum();
    mean_part + m.nrows() as f64 * u.covariances[k0][(r, r)].re
}

/// Updates `Sigma^(k),n` and `M^(k),n` in place, using the current state of
/// every other block. Returns whether the precision matrix needed jitter.
pub fn update_factor_posterior(
    state: &mut PosteriorState,
    obs: &ObservationBatch,
    n: usize,
    k: usize,
) -> Result<SolveInfo> {
    let k0 = mode_index(k)?;
    user_index(state, n)?;
    state.check_against(obs)?;
    let model = CoupledModel::new(obs, state.channel_estimates());
    let expected_beta = state.expected_noise_precision();
    update_factor_cached(&mut state.users[n], &model, n, k0, expected_beta)
}

fn update_factor_cached(
    u: &mut UserPosterior,
    model: &CoupledModel,
    n: usize,
    k0: usize,
    expected_beta: f64,
) -> Result<SolveInfo> {
    let gamma = u.expected_gamma();
    let mut precision = expected_gram_user(u, k0) * C64::new(model.energy(n) * expected_beta, 0.0);
    for (r, g) in gamma.iter().enumerate() {
        precision[(r, r)] += C64::new(*g, 0.0);
    }
    let (cov, info) = hpd_inverse(&precision).map_err(|e| match e {
        Error::Convergence(msg) => Error::Convergence(format!("user {n}, mode {}: {msg}", k0 + 1)),
        other => other,
    })?;
    let z = model.projected_residual(n);
    let rhs = conj_mttkrp(&z, [&u.means[0], &u.means[1], &u.means[2]], k0);
    u.means[k0] = rhs * &cov * C64::new(expected_beta, 0.0);
    u.covariances[k0] = cov;
    Ok(info)
}

/// `a_r = eps + sum_k I_k`, `b_r = eps + sum_k E[||Xi^(k)_{:,r}||^2]` for user `n`.
pub fn update_gamma_posterior(state: &mut PosteriorState, n: usize) -> Result<()> {
    user_index(state, n)?;
    let eps = state.epsilon;
    let u = &mut state.users[n];
    let shape = eps + u.means.iter().map(|m| m.nrows() as f64).sum::<f64>();
    for r in 0..u.rank_bound() {
        let power: f64 = (0..3).map(|k0| column_power(u, k0, r)).sum();
        u.gamma_shape[r] = shape;
        u.gamma_rate[r] = eps + power;
    }
    Ok(())
}

/// Closed-form `E[||Y_l - sum_n s_n(l) [[Xi^n]]||_F^2]` for pilot index `l`
/// (0-based), written through mode-1 unfoldings:
///
/// ```text
/// ||Y_l||^2
///   - 2 Re sum_n conj(s_n) Tr(Y_l(1) conj(K_n) M1_n^H)
///   + sum_{n != p} s_n conj(s_p) Tr(M1_n K_n^T conj(K_p) M1_p^H)
///   + sum_n |s_n|^2 Tr(E1_n (E2_n ⊙ E3_n)^*)
/// ```
///
/// with `K_n = M3_n ⋄ M2_n` and `Ek_n = Mk_n^H Mk_n + I_k Sigma_k_n`.
pub fn expected_fit_error(state: &PosteriorState, obs: &ObservationBatch, l: usize) -> Result<f64> {
    state.check_against(obs)?;
    if l >= obs.pilot_len() {
        return Err(Error::Argument(format!(
            "pilot index {l} out of range ({})",
            obs.pilot_len()
        )));
    }
    let y = &obs.tensors[l];
    let y1 = crate::tensor::unfold(y, 1)?;
    let s: Vec<C64> = (0..state.num_users())
        .map(|n| obs.pilots.get(l, n))
        .collect();
    let data_cross: Vec<C64> = state
        .users
        .iter()
        .map(|u| {
            let kr =
                khatri_rao_except([&u.means[0], &u.means[1], &u.means[2]], 1).expect("valid mode");
            let proj = &y1 * kr.map(|z| z.conj());
            trace_adjoint_product(&u.means[0], &proj)
        })
        .collect();
    let data_term: f64 = s
        .iter()
        .zip(&data_cross)
        .map(|(sn, t)| (sn.conj() * t).re)
        .sum();
    let pair = |n: usize, p: usize| s[n] * s[p].conj();
    let (cross, same) = quadratic_terms(state, &pair);
    let value = y.norm_sqr() - 2.0 * data_term + cross + same;
    clamp_fit(value, y.norm_sqr())
}

/// `Tr(A^H B)`.
fn trace_adjoint_product(a: &ComplexMatrix, b: &ComplexMatrix) -> C64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

/// Model-model terms of the expected fit error, weighted by `weight(n, p)`
/// (`s_n conj(s_p)` for one pilot index, `(S^H S)_{pn}` summed over all).
fn quadratic_terms(state: &PosteriorState, weight: &dyn Fn(usize, usize) -> C64) -> (f64, f64) {
    let users = &state.users;
    let mut cross = C64::new(0.0, 0.0);
    for (n, un) in users.iter().enumerate() {
        for (p, up) in users.iter().enumerate() {
            if n == p {
                continue;
            }
            // Tr(M1_n K_n^T conj(K_p) M1_p^H) = sum of entries of
            // (M1_p^H M1_n) ⊙ (M2_p^H M2_n) ⊙ (M3_p^H M3_n).
            let mut prod = up.means[0].adjoint() * &un.means[0];
            for k0 in 1..3 {
                prod.component_mul_assign(&(up.means[k0].adjoint() * &un.means[k0]));
            }
            cross += weight(n, p) * prod.sum();
        }
    }
    let same = users
        .iter()
        .enumerate()
        .map(|(n, u)| weight(n, n).re * same_user_term(u))
        .sum();
    (cross.re, same)
}

/// `Tr(E1 (E2 ⊙ E3)^*)`; with Hermitian `Ek` this is the sum of the entries
/// of `E1 ⊙ E2 ⊙ E3`.
fn same_user_term(u: &UserPosterior) -> f64 {
    let e1 = second_moment(&u.means[0], &u.covariances[0]);
    let e23 = second_moment(&u.means[1], &u.covariances[1])
        .component_mul(&second_moment(&u.means[2], &u.covariances[2]));
    e1.component_mul(&e23).sum().re
}

fn clamp_fit(value: f64, scale: f64) -> Result<f64> {
    if value < -NEGATIVE_FIT_TOL * scale {
        return Err(Error::Numerical(format!(
            "expected fit error is negative: {value:.6e} (data power {scale:.6e})"
        )));
    }
    Ok(value.max(0.0))
}

/// `sum_l E[||Y_l - G_l||^2]` from the solver's cached quantities. Summed
/// over pilots, the data term pairs each model with the pilot-projected data
/// `sum_l conj(s_n(l)) Y_l`, and the cross-user terms are weighted by
/// `(S^H S)_{pn}`; both reduce to tensor inner products of the mean models.
fn total_expected_fit_error(
    state: &PosteriorState,
    obs: &ObservationBatch,
    model: &CoupledModel,
    data_power: f64,
) -> Result<f64> {
    let models = model.models();
    let gram = obs.pilots.gram();
    let mut data_term = 0.0;
    let mut cross = C64::new(0.0, 0.0);
    for (n, x) in models.iter().enumerate() {
        data_term += x.inner(&model.projected_data()[n]).re;
        for (p, xp) in models.iter().enumerate() {
            if p != n {
                cross += gram[(p, n)] * xp.inner(x);
            }
        }
    }
    let mut same = 0.0;
    for (n, u) in state.users.iter().enumerate() {
        same += gram[(n, n)].re * same_user_term(u);
    }
    clamp_fit(data_power - 2.0 * data_term + cross.re + same, data_power)
}

/// `c = eps + M L`, `d = eps + sum_l E[||Y_l - G_l||^2]`.
pub fn update_noise_posterior(state: &mut PosteriorState, obs: &ObservationBatch) -> Result<()> {
    state.check_against(obs)?;
    let mut fit = 0.0;
    for l in 0..obs.pilot_len() {
        fit += expected_fit_error(state, obs, l)?;
    }
    set_noise(state, obs, fit);
    Ok(())
}

fn set_noise(state: &mut PosteriorState, obs: &ObservationBatch, fit: f64) {
    let entries = (obs.tensors[0].len() * obs.pilot_len()) as f64;
    state.noise_shape = state.epsilon + entries;
    state.noise_rate = state.epsilon + fit;
}

/// A point in the model's parameter space, for evaluating the log joint.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPoint {
    pub factors: Vec<FactorSet>,
    /// `gamma_r^n`, one vector per user, length equal to that user's rank.
    pub gammas: Vec<Vec<f64>>,
    pub noise_precision: f64,
}

/// Log joint density up to an additive constant:
///
/// ```text
/// (M L + eps - 1) ln beta - beta (eps + sum_l ||Y_l - G_l||^2)
///   + sum_n sum_r [ (sum_k I_k + eps - 1) ln gamma_r - gamma_r (eps + sum_k ||Xi^(k),n_{:,r}||^2) ]
/// ```
pub fn log_joint(obs: &ObservationBatch, point: &JointPoint, epsilon: f64) -> Result<f64> {
    check_factors(obs, &point.factors)?;
    let beta = point.noise_precision;
    if !(beta > 0.0) {
        return Err(Error::Domain(format!(
            "noise precision must be positive, got {beta}"
        )));
    }
    if point.gammas.len() != point.factors.len() {
        return Err(Error::Dimension(format!(
            "{} gamma vectors for {} users",
            point.gammas.len(),
            point.factors.len()
        )));
    }
    let fit = crate::estimators::objective(obs, &point.factors)?;
    let entries = (obs.tensors[0].len() * obs.pilot_len()) as f64;
    let mut value = (entries + epsilon - 1.0) * beta.ln() - beta * (epsilon + fit);
    let dim_sum: f64 = obs.dims().iter().map(|&d| d as f64).sum();
    for (n, (f, gammas)) in point.factors.iter().zip(&point.gammas).enumerate() {
        if gammas.len() != f.rank() {
            return Err(Error::Dimension(format!(
                "user {n}: {} gammas for rank {}",
                gammas.len(),
                f.rank()
            )));
        }
        for (r, &g) in gammas.iter().enumerate() {
            if !(g > 0.0) {
                return Err(Error::Domain(format!(
                    "user {n}: gamma_{r} must be positive, got {g}"
                )));
            }
            let power: f64 = (0..3).map(|k| f.factor(k).column(r).norm_squared()).sum();
            value += (dim_sum + epsilon - 1.0) * g.ln() - g * (epsilon + power);
        }
    }
    Ok(value)
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViInit {
    /// [`PosteriorState::initialize`] with this seed.
    Random {
        seed: u64,
    },
    Given(PosteriorState),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViOptions {
    pub rank_bounds: Vec<usize>,
    pub epsilon: f64,
    pub max_iters: usize,
    /// Stop once `max_{n,k} ||ΔM^(k),n||_F / ||M^(k),n||_F` drops below this.
    pub rel_tol: f64,
    /// Drop components above the precision gap from the returned estimates.
    /// Off by default; the plain posterior means already carry the shrinkage.
    pub prune: bool,
}

impl ViOptions {
    pub fn new(rank_bounds: Vec<usize>) -> Self {
        Self {
            rank_bounds,
            epsilon: DEFAULT_EPSILON,
            max_iters: 500,
            rel_tol: 1e-6,
            prune: false,
        }
    }
}

/// Per-iteration diagnostics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ViTrace {
    /// Channel MSE after each iteration (only when the truth was supplied).
    pub mse: Vec<f64>,
    /// `E[beta]` after each iteration.
    pub noise_precision: Vec<f64>,
    /// `E[gamma_r^n]` after each iteration, indexed `[iter][user][r]`.
    pub gamma: Vec<Vec<Vec<f64>>>,
    /// Largest relative change of any factor mean in each iteration.
    pub max_rel_change: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViOutput {
    pub state: PosteriorState,
    pub estimates: Vec<ComplexTensor3>,
    pub trace: ViTrace,
    pub iterations: usize,
    pub converged: bool,
    pub jitter_events: usize,
    /// Per-user path count read off the final precision spectrum.
    pub path_counts: Vec<usize>,
}

/// Runs the mean-field updates until the factor means stop moving.
///
/// `truth`, when given, is only used to record the MSE trace.
pub fn vi_solve(
    obs: &ObservationBatch,
    opts: &ViOptions,
    init: ViInit,
    truth: Option<&[ComplexTensor3]>,
) -> Result<ViOutput> {
    if opts.rank_bounds.len() != obs.num_users() {
        return Err(Error::Dimension(format!(
            "{} rank bounds for {} users",
            opts.rank_bounds.len(),
            obs.num_users()
        )));
    }
    let mut state = match init {
        ViInit::Random { seed } => {
            PosteriorState::initialize(obs.dims(), &opts.rank_bounds, opts.epsilon, seed)?
        }
        ViInit::Given(s) => s,
    };
    state.check_against(obs)?;
    if let Some(t) = truth {
        if t.len() != obs.num_users() || t.iter().any(|h| h.dims() != obs.dims()) {
            return Err(Error::Dimension(
                "truth tensors do not match the observations".into(),
            ));
        }
    }

    let mut model = CoupledModel::new(obs, state.channel_estimates());
    let data_power: f64 = obs.tensors.iter().map(ComplexTensor3::norm_sqr).sum();
    let mut trace = ViTrace::default();
    let mut converged = false;
    let mut iterations = 0;
    let mut jitter_events = 0;

    for _ in 0..opts.max_iters {
        let expected_beta = state.expected_noise_precision();
        let mut max_change: f64 = 0.0;
        for n in 0..state.num_users() {
            for k0 in 0..3 {
                let before = state.users[n].means[k0].clone();
                let info = update_factor_cached(&mut state.users[n], &model, n, k0, expected_beta)?;
                if info.jittered {
                    jitter_events += 1;
                }
                let after = &state.users[n].means[k0];
                let change = (after - &before).norm() / after.norm().max(f64::MIN_POSITIVE);
                max_change = max_change.max(change);
                model.set_model(n, state.users[n].mean_tensor());
            }
        }
        for n in 0..state.num_users() {
            update_gamma_posterior(&mut state, n)?;
        }
        let fit = total_expected_fit_error(&state, obs, &model, data_power)?;
        set_noise(&mut state, obs, fit);
        iterations += 1;

        if !state.expected_noise_precision().is_finite() || !max_change.is_finite() {
            return Err(Error::Convergence(format!(
                "non-finite posterior at iteration {iterations}"
            )));
        }
        if let Some(t) = truth {
            trace.mse.push(crate::harness::mse(model.models(), t)?);
        }
        trace.noise_precision.push(state.expected_noise_precision());
        trace.gamma.push(
            (0..state.num_users())
                .map(|n| state.expected_gamma(n))
                .collect(),
        );
        trace.max_rel_change.push(max_change);
        if max_change < opts.rel_tol {
            converged = true;
            break;
        }
    }

    let path_counts: Vec<usize> = (0..state.num_users())
        .map(|n| estimate_path_count(&state.expected_gamma(n)))
        .collect();
    let estimates = if opts.prune {
        (0..state.num_users())
            .map(|n| pruned_factors(&state, n).reconstruct())
            .collect()
    } else {
        model.models().to_vec()
    };
    Ok(ViOutput {
        state,
        estimates,
        trace,
        iterations,
        converged,
        jitter_events,
        path_counts,
    })
}

/// Path count from a precision spectrum: sort `log10 E[gamma]` ascending and
/// split at the widest gap; components below the gap are retained paths. If
/// the spectrum spans less than a decade, every component counts.
pub fn estimate_path_count(gammas: &[f64]) -> usize {
    retained_components(gammas).len()
}

fn retained_components(gammas: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..gammas.len()).collect();
    if gammas.len() < 2 {
        return order;
    }
    order.sort_by(|&a, &b| gammas[a].total_cmp(&gammas[b]));
    let lo = gammas[order[0]];
    let hi = gammas[order[order.len() - 1]];
    if !(hi / lo >= 10.0) {
        return order;
    }
    let logs: Vec<f64> = order.iter().map(|&i| gammas[i].log10()).collect();
    let split = logs
        .windows(2)
        .enumerate()
        .max_by(|(_, a), (_, b)| (a[1] - a[0]).total_cmp(&(b[1] - b[0])))
        .map(|(i, _)| i + 1)
        .expect("at least two components");
    order.truncate(split);
    order.sort_unstable();
    order
}

/// Posterior means of user `n` restricted to the components below the
/// precision gap.
pub fn pruned_factors(state: &PosteriorState, n: usize) -> FactorSet {
    let u = &state.users[n];
    let keep = retained_components(&u.expected_gamma());
    let pick =
        |m: &ComplexMatrix| ComplexMatrix::from_fn(m.nrows(), keep.len(), |i, j| m[(i, keep[j])]);
    FactorSet::new(pick(&u.means[0]), pick(&u.means[1]), pick(&u.means[2]))
        .expect("same column selection")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{
        generate_pilots, sample_paths, steering_factors, synthesize_channels,
        synthesize_observations, ArrayGeometry, NoiseLevel,
    };
    use crate::estimators::{bcd_update_factor, objective};

    fn small_problem(
        dims: [usize; 3],
        users: usize,
        paths: usize,
        pilots: usize,
        snr: f64,
        seed: u64,
    ) -> (ObservationBatch, Vec<ComplexTensor3>, Vec<FactorSet>) {
        let g = ArrayGeometry::half_wavelength(dims).unwrap();
        let p = sample_paths(users, paths, seed).unwrap();
        let channels = synthesize_channels(&g, &p);
        let truth = p.users().iter().map(|u| steering_factors(&g, u)).collect();
        let s = generate_pilots(pilots, users, seed + 1).unwrap();
        let obs = synthesize_observations(&channels, &s, NoiseLevel::SnrDb(snr), seed + 2).unwrap();
        (obs, channels, truth)
    }

    fn zero_covariances(state: &mut PosteriorState) {
        for u in &mut state.users {
            for s in &mut u.covariances {
                s.fill(C64::new(0.0, 0.0));
            }
        }
    }

    #[test]
    fn initialization_matches_defaults() {
        let s = PosteriorState::initialize([3, 4, 5], &[2, 3], 1e-6, 0).unwrap();
        assert_eq!(s.users[1].rank_bound(), 3);
        assert_eq!(s.users[0].covariances[2], ComplexMatrix::identity(2, 2));
        assert_eq!(s.expected_noise_precision(), 1.0);
        assert_eq!(s.expected_gamma(1), vec![1.0; 3]);
        s.validate().unwrap();
        assert!(PosteriorState::initialize([3, 4, 5], &[0], 1e-6, 0).is_err());
        assert!(PosteriorState::initialize([3, 4, 5], &[1], 0.0, 0).is_err());
    }

    #[test]
    fn expected_gram_zero_covariance_is_khatri_rao_gram() {
        let mut s = PosteriorState::initialize([3, 2, 4], &[2], 1e-6, 1).unwrap();
        zero_covariances(&mut s);
        for k in 1..=3 {
            let g = expected_gram(&s, 0, k).unwrap();
            let u = &s.users[0];
            let kr = khatri_rao_except([&u.means[0], &u.means[1], &u.means[2]], k).unwrap();
            let direct = kr.transpose() * kr.map(|z| z.conj());
            assert!((g - direct).norm() < 1e-12);
        }
    }

    #[test]
    fn expected_gram_is_hermitian_psd() {
        let s = PosteriorState::initialize([3, 3, 3], &[3], 1e-6, 2).unwrap();
        for k in 1..=3 {
            let g = expected_gram(&s, 0, k).unwrap();
            let scale = g.norm();
            assert!((&g - g.adjoint()).norm() < 1e-12 * scale);
            assert!(min_eigenvalue(&g) >= -1e-10 * scale);
        }
    }

    #[test]
    fn expected_column_power_cases() {
        let mut s = PosteriorState::initialize([8, 8, 8], &[2], 1e-6, 3).unwrap();
        for m in &mut s.users[0].means {
            m.fill(C64::new(0.0, 0.0));
        }
        assert_eq!(expected_column_power(&s, 0, 1, 0).unwrap(), 8.0);
        let mut s = PosteriorState::initialize([8, 8, 8], &[2], 1e-6, 3).unwrap();
        zero_covariances(&mut s);
        let col_norm = s.users[0].means[1].column(1).norm_squared();
        assert!((expected_column_power(&s, 0, 2, 1).unwrap() - col_norm).abs() < 1e-12);
        assert!(expected_column_power(&s, 0, 2, 2).is_err());
    }

    #[test]
    fn degenerate_update_equals_bcd() {
        let (obs, _, _) = small_problem([4, 3, 3], 3, 2, 6, 10.0, 4);
        let mut state = PosteriorState::initialize(obs.dims(), &[2, 3, 2], 1e-6, 9).unwrap();
        zero_covariances(&mut state);
        for u in &mut state.users {
            u.gamma_shape.fill(0.0);
            u.gamma_rate.fill(1.0);
        }
        state.noise_shape = 1.0;
        state.noise_rate = 1.0;
        let factors: Vec<FactorSet> = state
            .users
            .iter()
            .map(UserPosterior::mean_factors)
            .collect();
        for (n, k) in [(0, 1), (1, 2), (2, 3)] {
            let bcd = bcd_update_factor(&obs, &factors, k, n).unwrap();
            let mut s = state.clone();
            update_factor_posterior(&mut s, &obs, n, k).unwrap();
            let diff = (&s.users[n].means[k - 1] - &bcd)
                .iter()
                .map(|z| z.norm())
                .fold(0.0, f64::max);
            assert!(diff < 1e-10, "user {n} mode {k}: {diff}");
        }
    }

    #[test]
    fn strong_prior_shrinks_mean() {
        let (obs, _, _) = small_problem([4, 4, 4], 2, 2, 4, 20.0, 5);
        let mut state = PosteriorState::initialize(obs.dims(), &[2, 2], 1e-6, 1).unwrap();
        for u in &mut state.users {
            u.gamma_shape.fill(1e12);
            u.gamma_rate.fill(1.0);
        }
        update_factor_posterior(&mut state, &obs, 0, 1).unwrap();
        let data_scale = obs
            .tensors
            .iter()
            .map(ComplexTensor3::norm)
            .fold(0.0, f64::max);
        assert!(state.users[0].means[0].norm() < 1e-4 * data_scale);
        let sigma = &state.users[0].covariances[0];
        assert!(min_eigenvalue(sigma) > 0.0);
        assert!((sigma - sigma.adjoint()).norm() < 1e-15);
    }

    #[test]
    fn gamma_update_values() {
        let mut s = PosteriorState::initialize([8, 8, 8], &[3], 1e-6, 0).unwrap();
        for m in &mut s.users[0].means {
            m.fill(C64::new(0.0, 0.0));
        }
        update_gamma_posterior(&mut s, 0).unwrap();
        for r in 0..3 {
            assert_eq!(s.users[0].gamma_shape[r], 24.0 + 1e-6);
            assert!((s.users[0].gamma_rate[r] - (24.0 + 1e-6)).abs() < 1e-12);
        }
        // A collapsed column drives E[gamma] to (24 + eps) / eps.
        zero_covariances(&mut s);
        update_gamma_posterior(&mut s, 0).unwrap();
        let g = s.expected_gamma(0)[0];
        assert!((g - (24.0 + 1e-6) / 1e-6).abs() / g < 1e-9, "{g}");
    }

    #[test]
    fn fit_error_zero_covariance_equals_objective() {
        let (obs, _, _) = small_problem([3, 4, 2], 3, 2, 5, 5.0, 6);
        let mut state = PosteriorState::initialize(obs.dims(), &[2, 2, 3], 1e-6, 2).unwrap();
        zero_covariances(&mut state);
        let factors: Vec<FactorSet> = state
            .users
            .iter()
            .map(UserPosterior::mean_factors)
            .collect();
        let mut total = 0.0;
        for l in 0..obs.pilot_len() {
            let e = expected_fit_error(&state, &obs, l).unwrap();
            let mut r = obs.tensors[l].clone();
            for (n, f) in factors.iter().enumerate() {
                r.axpy(-obs.pilots.get(l, n), &f.reconstruct());
            }
            assert!(
                (e - r.norm_sqr()).abs() < 1e-9 * r.norm_sqr().max(1.0),
                "{e} vs {}",
                r.norm_sqr()
            );
            total += e;
        }
        let obj = objective(&obs, &factors).unwrap();
        assert!((total - obj).abs() < 1e-9 * obj);
    }

    #[test]
    fn fit_error_covariance_only_isolates_second_moment_term() {
        let (mut obs, _, _) = small_problem([2, 2, 2], 2, 1, 3, 10.0, 7);
        for y in &mut obs.tensors {
            y.as_mut_slice().fill(C64::new(0.0, 0.0));
        }
        let mut state = PosteriorState::initialize([2, 2, 2], &[2, 2], 1e-6, 3).unwrap();
        for u in &mut state.users {
            for m in &mut u.means {
                m.fill(C64::new(0.0, 0.0));
            }
        }
        // With zero means, E||sum s_n X_n||^2 = sum_n |s_n|^2 * sum_{r,r'} prod_k I_k Sigma_k[r,r'].
        for l in 0..3 {
            let e = expected_fit_error(&state, &obs, l).unwrap();
            let mut expected = 0.0;
            for (n, u) in state.users.iter().enumerate() {
                let mut t = C64::new(0.0, 0.0);
                for r in 0..2 {
                    for q in 0..2 {
                        t += (0..3)
                            .map(|k| u.covariances[k][(r, q)] * 2.0)
                            .product::<C64>();
                    }
                }
                expected += obs.pilots.get(l, n).norm_sqr() * t.re;
            }
            assert!((e - expected).abs() < 1e-12 * expected.max(1.0));
        }
    }

    #[test]
    fn total_fit_error_matches_per_pilot_sum() {
        let (obs, _, _) = small_problem([3, 3, 2], 3, 2, 6, 10.0, 8);
        let state = PosteriorState::initialize(obs.dims(), &[3, 2, 4], 1e-6, 5).unwrap();
        let per: f64 = (0..6)
            .map(|l| expected_fit_error(&state, &obs, l).unwrap())
            .sum();
        let model = CoupledModel::new(&obs, state.channel_estimates());
        let power: f64 = obs.tensors.iter().map(ComplexTensor3::norm_sqr).sum();
        let total = total_expected_fit_error(&state, &obs, &model, power).unwrap();
        assert!((per - total).abs() < 1e-9 * per);
    }

    #[test]
    fn noise_update_values() {
        let (obs, _, truth) = small_problem([8, 8, 8], 5, 3, 10, f64::INFINITY, 9);
        let mut state = PosteriorState::initialize(obs.dims(), &[3; 5], 1e-6, 0).unwrap();
        for (u, f) in state.users.iter_mut().zip(&truth) {
            for k in 0..3 {
                u.means[k] = f.factor(k).clone();
            }
        }
        zero_covariances(&mut state);
        update_noise_posterior(&mut state, &obs).unwrap();
        assert_eq!(state.noise_shape, 5120.0 + 1e-6);
        assert!(
            (state.noise_rate - 1e-6).abs() < 1e-7,
            "{}",
            state.noise_rate
        );
        assert!(state.expected_noise_precision() > 1e9);
    }

    #[test]
    fn noise_precision_consistent_with_truth() {
        let mut ratios = Vec::new();
        for trial in 0..50 {
            let (obs, _, truth) = small_problem([4, 4, 4], 2, 2, 6, 10.0, 100 + trial);
            let mut state = PosteriorState::initialize(obs.dims(), &[2, 2], 1e-6, 0).unwrap();
            for (u, f) in state.users.iter_mut().zip(&truth) {
                for k in 0..3 {
                    u.means[k] = f.factor(k).clone();
                }
            }
            zero_covariances(&mut state);
            update_noise_posterior(&mut state, &obs).unwrap();
            ratios.push(state.expected_noise_precision() / obs.noise_precision);
        }
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        assert!((mean - 1.0).abs() < 0.2, "{mean}");
        assert!(ratios.iter().all(|r| (r - 1.0).abs() < 0.2), "{ratios:?}");
    }

    #[test]
    fn log_joint_properties() {
        let (obs, _, truth) = small_problem([3, 3, 3], 2, 2, 4, 10.0, 10);
        let gammas = vec![vec![0.5, 2.0]; 2];
        let point = JointPoint {
            factors: truth.clone(),
            gammas: gammas.clone(),
            noise_precision: 3.0,
        };
        let base = log_joint(&obs, &point, 1e-6).unwrap();
        let resid = objective(&obs, &truth).unwrap();
        // Scale the data so that the residual doubles: Y' = G + sqrt(2) W.
        let clean = crate::channel::noiseless_observations(
            &truth.iter().map(FactorSet::reconstruct).collect::<Vec<_>>(),
            &obs.pilots,
        )
        .unwrap();
        let mut obs2 = obs.clone();
        for (y, g) in obs2.tensors.iter_mut().zip(&clean) {
            for (a, b) in y.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *a = b + (*a - b) * 2f64.sqrt();
            }
        }
        let doubled = log_joint(&obs2, &point, 1e-6).unwrap();
        assert!(((base - doubled) - 3.0 * resid).abs() < 1e-9 * base.abs().max(1.0));

        assert!(matches!(
            log_joint(
                &obs,
                &JointPoint {
                    noise_precision: 0.0,
                    ..point.clone()
                },
                1e-6
            ),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            log_joint(
                &obs,
                &JointPoint {
                    gammas: vec![vec![0.0, 1.0]; 2],
                    ..point
                },
                1e-6
            ),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn path_count_rule() {
        assert_eq!(
            estimate_path_count(&[1.0, 1.2, 0.9, 1e6, 2e6, 1e6, 3e6, 2e6]),
            3
        );
        assert_eq!(estimate_path_count(&[5.0; 6]), 6);
        assert_eq!(estimate_path_count(&[1.0, 2.0, 5.0]), 3);
        assert_eq!(estimate_path_count(&[1e7, 1.0]), 1);
    }

    #[test]
    fn noiseless_single_rank_one_recovery() {
        let (obs, channels, _) = small_problem([6, 6, 6], 1, 1, 3, f64::INFINITY, 12);
        let out = vi_solve(
            &obs,
            &ViOptions::new(vec![1]),
            ViInit::Random { seed: 1 },
            Some(&channels),
        )
        .unwrap();
        let err = (out.estimates[0].dist_sqr(&channels[0]) / channels[0].norm_sqr()).sqrt();
        assert!(err < 1e-6, "{err}");
        out.state.validate().unwrap();
    }

    #[test]
    fn solver_keeps_invariants_and_is_deterministic() {
        let (obs, channels, _) = small_problem([5, 5, 5], 2, 2, 6, 15.0, 13);
        let mut opts = ViOptions::new(vec![4, 4]);
        opts.max_iters = 40;
        let a = vi_solve(&obs, &opts, ViInit::Random { seed: 3 }, Some(&channels)).unwrap();
        let b = vi_solve(&obs, &opts, ViInit::Random { seed: 3 }, Some(&channels)).unwrap();
        assert_eq!(a, b);
        a.state.validate().unwrap();
        assert_eq!(a.trace.mse.len(), a.iterations);
        assert!(a.trace.mse.last().unwrap() < &a.trace.mse[0]);
    }
}
