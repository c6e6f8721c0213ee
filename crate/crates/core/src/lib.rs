//! Multi-user uplink channel estimation for 3D massive MIMO.
//!
//! Channels follow the angular model over a uniform cuboid array, so each
//! user's channel is a low-rank CPD tensor. Three estimators are provided:
//!
//! * [`estimators::ls_estimate`]: per-antenna least squares,
//! * [`estimators::bcd_solve`]: block-coordinate-descent fitting of the coupled
//!   multi-user CPD model with user-supplied ranks,
//! * [`vi::vi_solve`]: variational Bayes with per-component ARD precisions,
//!   which starts from an over-sized rank bound and shrinks unused components.
//!
//! [`harness`] runs paired Monte-Carlo sweeps over these estimators.

pub mod channel;
pub mod dataset;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod linalg;
pub mod rng;
pub mod tensor;
pub mod vi;

pub use channel::{
    ArrayGeometry, FactorSet, NoiseLevel, ObservationBatch, Path, PathParameters, PilotMatrix,
};
pub use error::{Error, Result};
pub use tensor::{ComplexMatrix, ComplexTensor3, C64};
