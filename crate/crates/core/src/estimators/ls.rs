use crate::channel::{ObservationBatch, PilotMatrix};
use crate::error::{Error, Result};
use crate::linalg::HpdCholesky;
use crate::tensor::{singular_values, ComplexMatrix, ComplexTensor3};

/// Largest condition number of `S^H S` accepted by [`ls_estimate`].
pub const MAX_PILOT_CONDITION: f64 = 1e12;

/// `(S^H S)^{-1} S^H Y` through a Cholesky solve; `Y` is `L x M`, the
/// result `N x M`.
pub fn ls_estimate(y: &ComplexMatrix, pilots: &PilotMatrix) -> Result<ComplexMatrix> {
    let s = pilots.matrix();
    if y.nrows() != s.nrows() {
        return Err(Error::Dimension(format!(
            "observation matrix has {} rows, pilot matrix {}",
            y.nrows(),
            s.nrows()
        )));
    }
    if s.nrows() < s.ncols() {
        return Err(Error::Singular(format!(
            "pilot length {} is shorter than the user count {}; S^H S has condition number inf",
            s.nrows(),
            s.ncols()
        )));
    }
    let sv = singular_values(s);
    let (smax, smin) = (sv[0], *sv.last().expect("non-empty pilot matrix"));
    let cond = if smin > 0.0 {
        (smax / smin).powi(2)
    } else {
        f64::INFINITY
    };
    if !(cond < MAX_PILOT_CONDITION) {
        return Err(Error::Singular(format!(
            "S^H S has condition number {cond:.3e}"
        )));
    }
    let chol = HpdCholesky::new(&pilots.gram()).ok_or_else(|| {
        Error::Singular(format!(
            "S^H S not positive definite (condition number {cond:.3e})"
        ))
    })?;
    Ok(chol.solve(&(s.adjoint() * y)))
}

/// Least-squares channel tensors for every user.
pub fn ls_channels(obs: &ObservationBatch) -> Result<Vec<ComplexTensor3>> {
    let h = ls_estimate(&obs.observation_matrix(), &obs.pilots)?;
    let dims = obs.dims();
    (0..h.nrows())
        .map(|n| ComplexTensor3::from_vec(dims, h.row(n).iter().copied().collect()))
        .collect()
}
