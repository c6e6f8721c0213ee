use crate::error::{Error, Result};
use crate::tensor::ComplexTensor3;

/// `(1 / (M N)) sum_n ||est_n - truth_n||_F^2`.
pub fn mse(estimates: &[ComplexTensor3], truth: &[ComplexTensor3]) -> Result<f64> {
    if estimates.len() != truth.len() || truth.is_empty() {
        return Err(Error::Dimension(format!(
            "{} estimates for {} channels",
            estimates.len(),
            truth.len()
        )));
    }
    let mut total = 0.0;
    for (n, (e, t)) in estimates.iter().zip(truth).enumerate() {
        if e.dims() != t.dims() {
            return Err(Error::Dimension(format!(
                "user {n}: estimate {:?}, truth {:?}",
                e.dims(),
                t.dims()
            )));
        }
        total += e.dist_sqr(t);
    }
    Ok(total / (truth[0].len() * truth.len()) as f64)
}
