//! The coupled multi-user CPD fitting objective and its residuals.

use crate::channel::{FactorSet, ObservationBatch};
use crate::error::{Error, Result};
use crate::tensor::{ComplexMatrix, ComplexTensor3, C64};

pub(crate) fn check_factors(obs: &ObservationBatch, factors: &[FactorSet]) -> Result<()> {
    if factors.len() != obs.num_users() {
        return Err(Error::Dimension(format!(
            "{} factor sets for {} users",
            factors.len(),
            obs.num_users()
        )));
    }
    let dims = obs.dims();
    for (n, f) in factors.iter().enumerate() {
        if f.dims() != dims {
            return Err(Error::Dimension(format!(
                "user {n}: factors span {:?}, observations are {dims:?}",
                f.dims()
            )));
        }
    }
    Ok(())
}

/// `sum_l || Y_l - sum_n s_n(l) [[factors_n]] ||_F^2`.
pub fn objective(obs: &ObservationBatch, factors: &[FactorSet]) -> Result<f64> {
    check_factors(obs, factors)?;
    let models: Vec<ComplexTensor3> = factors.iter().map(FactorSet::reconstruct).collect();
    Ok(objective_from_models(obs, &models))
}

pub(crate) fn objective_from_models(obs: &ObservationBatch, models: &[ComplexTensor3]) -> f64 {
    let mut total = 0.0;
    for (l, y) in obs.tensors.iter().enumerate() {
        let mut r = y.clone();
        for (n, x) in models.iter().enumerate() {
            r.axpy(-obs.pilots.get(l, n), x);
        }
        total += r.norm_sqr();
    }
    total
}

/// `Y_l - sum_{p != n} s_p(l) [[factors_p]]` for pilot index `l` (0-based),
/// excluding user `n` (0-based).
pub fn residual_tensor(
    obs: &ObservationBatch,
    factors: &[FactorSet],
    l: usize,
    n: usize,
) -> Result<ComplexTensor3> {
    check_factors(obs, factors)?;
    if l >= obs.pilot_len() || n >= obs.num_users() {
        return Err(Error::Argument(format!(
            "pilot index {l} / user {n} out of range ({} pilots, {} users)",
            obs.pilot_len(),
            obs.num_users()
        )));
    }
    let mut r = obs.tensors[l].clone();
    for (p, f) in factors.iter().enumerate() {
        if p != n {
            r.axpy(-obs.pilots.get(l, p), &f.reconstruct());
        }
    }
    Ok(r)
}

/// Cached quantities for repeated per-user updates.
///
/// The per-user update only needs the residual through
/// `sum_l conj(s_n(l)) B_l = sum_l conj(s_n(l)) Y_l - sum_{p != n} (S^H S)_{np} X_p`,
/// where `X_p` is user `p`'s current model tensor. The first term is fixed
/// for the whole solve, so one update costs `O(N M)` instead of `O(L N M)`.
#[derive(Debug, Clone)]
pub(crate) struct CoupledModel {
    projected_data: Vec<ComplexTensor3>,
    gram: ComplexMatrix,
    energies: Vec<f64>,
    models: Vec<ComplexTensor3>,
}

impl CoupledModel {
    pub(crate) fn new(obs: &ObservationBatch, models: Vec<ComplexTensor3>) -> Self {
        let users = obs.num_users();
        let dims = obs.dims();
        let projected_data = (0..users)
            .map(|n| {
                let mut t = ComplexTensor3::zeros(dims);
                for (l, y) in obs.tensors.iter().enumerate() {
                    t.axpy(obs.pilots.get(l, n).conj(), y);
                }
                t
            })
            .collect();
        Self {
            projected_data,
            gram: obs.pilots.gram(),
            energies: (0..users).map(|n| obs.pilots.energy(n)).collect(),
            models,
        }
    }

    /// `sum_l |s_n(l)|^2`.
    pub(crate) fn energy(&self, n: usize) -> f64 {
        self.energies[n]
    }

    /// `sum_l conj(s_n(l)) Y_l` for every user.
    pub(crate) fn projected_data(&self) -> &[ComplexTensor3] {
        &self.projected_data
    }

    pub(crate) fn models(&self) -> &[ComplexTensor3] {
        &self.models
    }

    pub(crate) fn set_model(&mut self, n: usize, x: ComplexTensor3) {
        self.models[n] = x;
    }

    /// `sum_l conj(s_n(l)) B_{l, p != n}`.
    pub(crate) fn projected_residual(&self, n: usize) -> ComplexTensor3 {
        let mut z = self.projected_data[n].clone();
        for (p, x) in self.models.iter().enumerate() {
            if p != n {
                let g: C64 = self.gram[(n, p)];
                z.axpy(-g, x);
            }
        }
        z
    }
}

/// `unfold(z, k) * conj(⋄_{j != k} F_j)` for 0-based mode `k0`.
pub(crate) fn conj_mttkrp(
    z: &ComplexTensor3,
    factors: [&ComplexMatrix; 3],
    k0: usize,
) -> ComplexMatrix {
    let kr = crate::tensor::khatri_rao_except(factors, k0 + 1).expect("valid mode");
    let unfolded = crate::tensor::unfold(z, k0 + 1).expect("valid mode");
    unfolded * kr.map(|c| c.conj())
}

/// `⊙_{j != k} F_j^T conj(F_j)` for 0-based mode `k0`; equals
/// `(⋄_{j != k} F_j)^T conj(⋄_{j != k} F_j)`.
pub(crate) fn khatri_rao_gram(factors: [&ComplexMatrix; 3], k0: usize) -> ComplexMatrix {
    let (a, b) = crate::tensor::other_modes(k0);
    let ga = factors[a].transpose() * factors[a].map(|c| c.conj());
    let gb = factors[b].transpose() * factors[b].map(|c| c.conj());
    ga.component_mul(&gb)
}
