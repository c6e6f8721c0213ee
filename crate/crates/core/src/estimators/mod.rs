//! Least-squares and block-coordinate-descent channel estimators.

mod bcd;
mod ls;
mod model;

pub use bcd::{bcd_solve, bcd_update_factor, BcdInit, BcdOptions, BcdOutput, BcdState};
pub use ls::{ls_channels, ls_estimate, MAX_PILOT_CONDITION};
pub use model::{objective, residual_tensor};

pub(crate) use model::{check_factors, conj_mttkrp, CoupledModel};
