//! Reproducible random streams.
//!
//! Every random draw in a Monte-Carlo sweep comes from a ChaCha8 generator
//! seeded with the master seed and positioned on its own stream:
//!
//! ```text
//! stream = (trial << 24) | (purpose << 16) | (salt & 0xffff)
//! ```
//!
//! `purpose` separates paths, pilots, noise and solver initializations, and
//! `salt` separates variants within a purpose (for example one VI
//! initialization per rank bound). Streams never overlap, so results do not
//! depend on the order or the thread in which trials run.

use rand::SeedableRng;
use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::{ComplexMatrix, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Paths = 1,
    Pilots = 2,
    Noise = 3,
    BcdInit = 4,
    ViInit = 5,
}

pub fn stream_id(trial: u64, purpose: Purpose, salt: u64) -> u64 {
    (trial << 24) | ((purpose as u64) << 16) | (salt & 0xffff)
}

pub fn substream(master: u64, trial: u64, purpose: Purpose, salt: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream_id(trial, purpose, salt));
    rng
}

/// A `u64` seed for APIs that take one, drawn from the given substream.
pub fn derive_seed(master: u64, trial: u64, purpose: Purpose, salt: u64) -> u64 {
    substream(master, trial, purpose, salt).next_u64()
}

/// One draw from CN(0, 1): independent real and imaginary parts with variance 1/2.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Matrix with i.i.d. CN(0, 1) entries, drawn row by row.
pub fn complex_normal_matrix<R: Rng + ?Sized>(
    rng: &mut R,
    rows: usize,
    cols: usize,
) -> ComplexMatrix {
    let mut m = ComplexMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = complex_normal(rng);
        }
    }
    m
}
