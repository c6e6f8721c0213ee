//! Dense complex three-way tensors and the CPD kernels built on them.
//!
//! # Index conventions
//!
//! A tensor of shape `(I1, I2, I3)` stores entry `(i1, i2, i3)` at linear
//! position `i1 + I1 * (i2 + I2 * i3)` (first index fastest). The mode-k
//! unfolding is the `I_k x (prod_{j != k} I_j)` matrix whose column index is
//!
//! | mode | column index of `(i1, i2, i3)` |
//! |------|--------------------------------|
//! | 1    | `i2 + I2 * i3`                 |
//! | 2    | `i1 + I1 * i3`                 |
//! | 3    | `i1 + I1 * i2`                 |
//!
//! With the Khatri-Rao product defined so that the left operand's row index
//! varies slowest (`row = i_a * J + i_b`), these choices give, for any factor
//! triple `(F1, F2, F3)`,
//!
//! ```text
//! unfold([[F1, F2, F3]], k) = F_k * (F_c ⋄ F_b)^T,   {b < c} = {1, 2, 3} \ {k}
//! ```
//!
//! i.e. the Khatri-Rao product over the remaining modes is taken in
//! descending mode order. The mode-1 unfolding, read column-major, is the
//! tensor's own storage.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type ComplexMatrix = DMatrix<C64>;

/// Relative singular-value threshold used by [`kruskal_rank`] and
/// [`numerical_rank`].
pub const RANK_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexTensor3 {
    dims: [usize; 3],
    data: Vec<C64>,
}

impl ComplexTensor3 {
    pub fn zeros(dims: [usize; 3]) -> Self {
        Self {
            dims,
            data: vec![C64::new(0.0, 0.0); dims.iter().product()],
        }
    }

    /// Builds a tensor from entries in linear (first-index-fastest) order.
    pub fn from_vec(dims: [usize; 3], data: Vec<C64>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Argument(format!(
                "tensor dims must be positive, got {dims:?}"
            )));
        }
        let expected: usize = dims.iter().product();
        if data.len() != expected {
            return Err(Error::Dimension(format!(
                "tensor {dims:?} needs {expected} entries, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(dims.iter().product());
        for i3 in 0..dims[2] {
            for i2 in 0..dims[1] {
                for i1 in 0..dims[0] {
                    data.push(f(i1, i2, i3));
                }
            }
        }
        Self { dims, data }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, i1: usize, i2: usize, i3: usize) -> usize {
        i1 + self.dims[0] * (i2 + self.dims[1] * i3)
    }

    #[inline]
    pub fn get(&self, i1: usize, i2: usize, i3: usize) -> C64 {
        self.data[self.index(i1, i2, i3)]
    }

    #[inline]
    pub fn set(&mut self, i1: usize, i2: usize, i3: usize, value: C64) {
        let idx = self.index(i1, i2, i3);
        self.data[idx] = value;
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<C64> {
        self.data
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: C64, other: &ComplexTensor3) {
        assert_eq!(self.dims, other.dims, "axpy on tensors of different shape");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: C64) {
        for a in &mut self.data {
            *a *= alpha;
        }
    }

    /// `<self, other> = sum conj(self) * other`.
    pub fn inner(&self, other: &ComplexTensor3) -> C64 {
        assert_eq!(
            self.dims, other.dims,
            "inner product of tensors of different shape"
        );
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// Squared Frobenius distance to `other`.
    pub fn dist_sqr(&self, other: &ComplexTensor3) -> f64 {
        assert_eq!(
            self.dims, other.dims,
            "distance between tensors of different shape"
        );
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum()
    }
}

fn check_mode(k: usize) -> Result<usize> {
    if (1..=3).contains(&k) {
        Ok(k - 1)
    } else {
        Err(Error::Argument(format!(
            "tensor mode must be 1, 2 or 3, got {k}"
        )))
    }
}

/// The two modes other than `k` (0-based), in ascending order.
#[inline]
pub(crate) fn other_modes(k0: usize) -> (usize, usize) {
    match k0 {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    }
}

/// Column-wise Kronecker product; row `i * J + j` of column `r` is `a[i, r] * b[j, r]`.
pub fn khatri_rao(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    if a.ncols() != b.ncols() {
        return Err(Error::Dimension(format!(
            "khatri_rao: column counts differ ({} vs {})",
            a.ncols(),
            b.ncols()
        )));
    }
    let (i_rows, j_rows) = (a.nrows(), b.nrows());
    let mut out = ComplexMatrix::zeros(i_rows * j_rows, a.ncols());
    for r in 0..a.ncols() {
        let mut col = out.column_mut(r);
        for i in 0..i_rows {
            let ai = a[(i, r)];
            for j in 0..j_rows {
                col[i * j_rows + j] = ai * b[(j, r)];
            }
        }
    }
    Ok(out)
}

/// Khatri-Rao product of the factors of every mode except `k` (1-based),
/// in descending mode order.
pub fn khatri_rao_except(factors: [&ComplexMatrix; 3], k: usize) -> Result<ComplexMatrix> {
    let (lo, hi) = other_modes(check_mode(k)?);
    khatri_rao(factors[hi], factors[lo])
}

/// Mode-`k` unfolding (`k` in 1..=3); see the module docs for the column order.
pub fn unfold(x: &ComplexTensor3, k: usize) -> Result<ComplexMatrix> {
    let k0 = check_mode(k)?;
    let [d1, d2, d3] = x.dims;
    let data = &x.data;
    let m = match k0 {
        0 => ComplexMatrix::from_column_slice(d1, d2 * d3, data),
        1 => {
            let mut m = ComplexMatrix::zeros(d2, d1 * d3);
            for i3 in 0..d3 {
                for i2 in 0..d2 {
                    for i1 in 0..d1 {
                        m[(i2, i1 + d1 * i3)] = data[i1 + d1 * (i2 + d2 * i3)];
                    }
                }
            }
            m
        }
        _ => {
            // Storage read as (I1*I2) x I3 column-major is the transpose.
            ComplexMatrix::from_column_slice(d1 * d2, d3, data).transpose()
        }
    };
    Ok(m)
}

/// Inverse of [`unfold`].
pub fn fold(m: &ComplexMatrix, k: usize, dims: [usize; 3]) -> Result<ComplexTensor3> {
    let k0 = check_mode(k)?;
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::Argument(format!(
            "tensor dims must be positive, got {dims:?}"
        )));
    }
    let [d1, d2, d3] = dims;
    let rows = dims[k0];
    let cols: usize = dims.iter().product::<usize>() / rows;
    if m.nrows() != rows || m.ncols() != cols {
        return Err(Error::Dimension(format!(
            "fold: mode-{k} unfolding of {dims:?} must be {rows}x{cols}, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let data = match k0 {
        0 => m.as_slice().to_vec(),
        1 => {
            let mut data = vec![C64::new(0.0, 0.0); d1 * d2 * d3];
            for i3 in 0..d3 {
                for i2 in 0..d2 {
                    for i1 in 0..d1 {
                        data[i1 + d1 * (i2 + d2 * i3)] = m[(i2, i1 + d1 * i3)];
                    }
                }
            }
            data
        }
        _ => m.transpose().as_slice().to_vec(),
    };
    Ok(ComplexTensor3 { dims, data })
}

/// `[[A, B, C]]`: entry `(i1, i2, i3) = sum_r A[i1, r] B[i2, r] C[i3, r]`.
pub fn cpd_reconstruct(
    a: &ComplexMatrix,
    b: &ComplexMatrix,
    c: &ComplexMatrix,
) -> Result<ComplexTensor3> {
    if a.ncols() != b.ncols() || a.ncols() != c.ncols() {
        return Err(Error::Dimension(format!(
            "cpd_reconstruct: column counts differ ({}, {}, {})",
            a.ncols(),
            b.ncols(),
            c.ncols()
        )));
    }
    let dims = [a.nrows(), b.nrows(), c.nrows()];
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::Argument(format!(
            "factor row counts must be positive, got {dims:?}"
        )));
    }
    let kr = khatri_rao(c, b)?;
    let unfolded = a * kr.transpose();
    Ok(ComplexTensor3 {
        dims,
        data: unfolded.as_slice().to_vec(),
    })
}

/// Singular values of `a` (descending).
pub fn singular_values(a: &ComplexMatrix) -> Vec<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = a.clone().singular_values().iter().copied().collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    sv
}

/// Number of singular values above `RANK_TOL * sigma_max`.
pub fn numerical_rank(a: &ComplexMatrix) -> usize {
    let sv = singular_values(a);
    match sv.first() {
        Some(&smax) if smax > 0.0 => sv.iter().filter(|&&s| s > RANK_TOL * smax).count(),
        _ => 0,
    }
}

/// Kruskal rank: the largest `k` such that every set of `k` columns is
/// linearly independent. Exhaustive over column subsets, so only meant for
/// small diagnostic matrices (a dozen columns or so).
pub fn kruskal_rank(a: &ComplexMatrix) -> usize {
    let cols = a.ncols();
    if cols == 0 || a.nrows() == 0 {
        return 0;
    }
    let smax = singular_values(a)[0];
    if smax == 0.0 {
        return 0;
    }
    let threshold = RANK_TOL * smax;
    let independent = |subset: &[usize]| -> bool {
        let sub = ComplexMatrix::from_fn(a.nrows(), subset.len(), |i, j| a[(i, subset[j])]);
        let sv = singular_values(&sub);
        sv.len() == subset.len() && sv.iter().all(|&s| s > threshold)
    };
    let max_k = cols.min(a.nrows());
    for k in 1..=max_k {
        let mut subset: Vec<usize> = (0..k).collect();
        loop {
            if !independent(&subset) {
                return k - 1;
            }
            if !next_combination(&mut subset, cols) {
                break;
            }
        }
    }
    max_k
}

/// Advances `subset` to the next k-combination of `0..n` in lexicographic order.
fn next_combination(subset: &mut [usize], n: usize) -> bool {
    let k = subset.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if subset[i] < n - k + i {
            subset[i] += 1;
            for j in i + 1..k {
                subset[j] = subset[j - 1] + 1;
            }
            return true;
        }
    }
    false
}
