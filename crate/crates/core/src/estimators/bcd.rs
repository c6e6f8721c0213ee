//! Block coordinate descent over the per-user CPD factors.
//!
//! One sweep visits users in order and, within a user, modes 1, 2, 3. Each
//! visit replaces a single factor by the exact minimizer of the coupled
//! least-squares objective with everything else held at its latest value,
//! so the objective never increases.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::{
    check_factors, conj_mttkrp, khatri_rao_gram, objective_from_models, CoupledModel,
};
use crate::channel::{FactorSet, ObservationBatch};
use crate::error::{Error, Result};
use crate::linalg::{solve_right_hpd, SolveInfo};
use crate::tensor::{ComplexMatrix, ComplexTensor3};

#[derive(Debug, Clone, PartialEq)]
pub struct BcdOptions {
    pub max_iters: usize,
    /// Stop once the relative objective change over a sweep drops below this.
    pub rel_tol: f64,
    /// Record the objective after every single factor update (costly; for tests).
    pub record_update_objectives: bool,
}

impl Default for BcdOptions {
    fn default() -> Self {
        Self {
            max_iters: 1000,
            rel_tol: 1e-8,
            record_update_objectives: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BcdInit {
    /// i.i.d. CN(0, 1) factor entries, users in order, modes 1..3.
    Random {
        seed: u64,
    },
    Given(Vec<FactorSet>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BcdState {
    pub factors: Vec<FactorSet>,
    /// Completed sweeps.
    pub iterations: usize,
    /// Objective before the first sweep and after each sweep.
    pub objective_trace: Vec<f64>,
    /// Objective after each factor update, when requested.
    pub update_objectives: Vec<f64>,
    pub converged: bool,
    /// Number of Gram solves that needed diagonal jitter.
    pub jitter_events: usize,
    /// Per user, factor columns whose rank-one term vanished.
    pub collapsed_columns: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BcdOutput {
    pub state: BcdState,
    pub estimates: Vec<ComplexTensor3>,
}

fn check_mode(k: usize) -> Result<usize> {
    if (1..=3).contains(&k) {
        Ok(k - 1)
    } else {
        Err(Error::Argument(format!("mode must be 1, 2 or 3, got {k}")))
    }
}

/// Exact minimizer of the objective over factor `k` (1-based mode) of user
/// `n` (0-based), all other factors fixed.
pub fn bcd_update_factor(
    obs: &ObservationBatch,
    factors: &[FactorSet],
    k: usize,
    n: usize,
) -> Result<ComplexMatrix> {
    check_factors(obs, factors)?;
    let k0 = check_mode(k)?;
    if n >= factors.len() {
        return Err(Error::Argument(format!("user {n} out of range")));
    }
    let model = CoupledModel::new(obs, factors.iter().map(FactorSet::reconstruct).collect());
    update_factor(&model, &factors[n], n, k0).map(|(m, _)| m)
}

pub(crate) fn update_factor(
    model: &CoupledModel,
    f: &FactorSet,
    n: usize,
    k0: usize,
) -> Result<(ComplexMatrix, SolveInfo)> {
    let z = model.projected_residual(n);
    let rhs = conj_mttkrp(&z, f.factors(), k0);
    let gram = khatri_rao_gram(f.factors(), k0) * nalgebra::Complex::from(model.energy(n));
    solve_right_hpd(&rhs, &gram).map_err(|e| match e {
        Error::Convergence(msg) => Error::Convergence(format!("user {n}, mode {}: {msg}", k0 + 1)),
        other => other,
    })
}

fn initial_factors(
    obs: &ObservationBatch,
    ranks: &[usize],
    init: BcdInit,
) -> Result<Vec<FactorSet>> {
    if ranks.len() != obs.num_users() {
        return Err(Error::Dimension(format!(
            "{} ranks for {} users",
            ranks.len(),
            obs.num_users()
        )));
    }
    if ranks.contains(&0) {
        return Err(Error::Argument(format!(
            "ranks must be >= 1, got {ranks:?}"
        )));
    }
    let factors = match init {
        BcdInit::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            ranks
                .iter()
                .map(|&r| FactorSet::random(&mut rng, obs.dims(), r))
                .collect()
        }
        BcdInit::Given(f) => f,
    };
    check_factors(obs, &factors)?;
    for (n, (f, &r)) in factors.iter().zip(ranks).enumerate() {
        if f.rank() != r {
            return Err(Error::Dimension(format!(
                "user {n}: initial rank {} but rank {r} requested",
                f.rank()
            )));
        }
    }
    Ok(factors)
}

fn collapsed_columns(f: &FactorSet) -> usize {
    let scale: f64 = (0..f.rank())
        .map(|r| {
            (0..3)
                .map(|k| f.factor(k).column(r).norm())
                .product::<f64>()
        })
        .fold(0.0, f64::max);
    (0..f.rank())
        .filter(|&r| {
            (0..3)
                .map(|k| f.factor(k).column(r).norm())
                .product::<f64>()
                <= 1e-12 * scale
        })
        .count()
}

/// Runs block coordinate descent from `init` with the given per-user ranks.
pub fn bcd_solve(
    obs: &ObservationBatch,
    ranks: &[usize],
    init: BcdInit,
    opts: &BcdOptions,
) -> Result<BcdOutput> {
    let mut factors = initial_factors(obs, ranks, init)?;
    let mut model = CoupledModel::new(obs, factors.iter().map(FactorSet::reconstruct).collect());
    let data_norm: f64 = obs.tensors.iter().map(ComplexTensor3::norm_sqr).sum();
    let floor = data_norm * 1e-30;

    let mut prev = objective_from_models(obs, model.models());
    let mut state = BcdState {
        factors: Vec::new(),
        iterations: 0,
        objective_trace: vec![prev],
        update_objectives: Vec::new(),
        converged: false,
        jitter_events: 0,
        collapsed_columns: Vec::new(),
    };

    for _ in 0..opts.max_iters {
        for n in 0..factors.len() {
            for k0 in 0..3 {
                let (updated, info) = update_factor(&model, &factors[n], n, k0)?;
                if info.jittered {
                    state.jitter_events += 1;
                }
                factors[n].set_factor(k0, updated);
                model.set_model(n, factors[n].reconstruct());
                if opts.record_update_objectives {
                    state
                        .update_objectives
                        .push(objective_from_models(obs, model.models()));
                }
            }
        }
        state.iterations += 1;
        let cur = objective_from_models(obs, model.models());
        if !cur.is_finite() {
            return Err(Error::Convergence(format!(
                "objective became non-finite at sweep {}",
                state.iterations
            )));
        }
        state.objective_trace.push(cur);
        if cur <= floor || (prev - cur).abs() <= opts.rel_tol * prev.max(f64::MIN_POSITIVE) {
            state.converged = true;
            break;
        }
        prev = cur;
    }

    state.collapsed_columns = factors.iter().map(collapsed_columns).collect();
    let estimates = model.models().to_vec();
    state.factors = factors;
    Ok(BcdOutput { state, estimates })
}
