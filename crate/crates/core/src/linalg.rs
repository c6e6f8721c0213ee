//! Hermitian positive-definite solves shared by the BCD and VI updates.

use crate::error::{Error, Result};
use crate::tensor::{ComplexMatrix, C64};

/// Diagonal jitter, relative to `trace / n`, applied once when a Cholesky
/// factorization fails.
pub const JITTER_REL: f64 = 1e-10;

/// Outcome of a factorization: whether jitter had to be added.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SolveInfo {
    pub jittered: bool,
}

/// Lower-triangular Cholesky factor `L` of a Hermitian positive-definite
/// matrix, `G = L L^H`.
///
/// A pivot is rejected when it is not above `eps * max_i G_ii`, so numerically
/// singular matrices fail instead of producing huge solutions.
#[derive(Debug, Clone)]
pub struct HpdCholesky {
    n: usize,
    /// Rows of `L`, row `i` at `i * n`; entries right of the diagonal are zero.
    rows: Vec<C64>,
}

fn dot_conj(a: &[C64], b: &[C64]) -> C64 {
    // sum_k a_k conj(b_k)
    a.iter()
        .zip(b)
        .fold(C64::new(0.0, 0.0), |acc, (x, y)| acc + x * y.conj())
}

impl HpdCholesky {
    pub fn new(g: &ComplexMatrix) -> Option<Self> {
        let n = g.nrows();
        let max_diag = (0..n).map(|i| g[(i, i)].re).fold(0.0, f64::max);
        let tol = f64::EPSILON * max_diag;
        let mut rows = vec![C64::new(0.0, 0.0); n * n];
        for j in 0..n {
            let (done, rest) = rows.split_at_mut(j * n);
            let row_j = &mut rest[..n];
            for k in 0..j {
                let row_k = &done[k * n..k * n + k];
                let s = g[(j, k)] - dot_conj(&row_j[..k], row_k);
                row_j[k] = s / done[k * n + k].re;
            }
            let d = g[(j, j)].re - row_j[..j].iter().map(|z| z.norm_sqr()).sum::<f64>();
            if !(d > tol) || !d.is_finite() {
                return None;
            }
            row_j[j] = C64::new(d.sqrt(), 0.0);
        }
        Some(Self { n, rows })
    }

    pub fn l(&self) -> ComplexMatrix {
        ComplexMatrix::from_row_slice(self.n, self.n, &self.rows)
    }

    fn row(&self, i: usize) -> &[C64] {
        &self.rows[i * self.n..(i + 1) * self.n]
    }

    /// Solves `G X = B`.
    pub fn solve(&self, b: &ComplexMatrix) -> ComplexMatrix {
        let n = self.n;
        let mut x = b.clone();
        for mut col in x.column_iter_mut() {
            let v = col.as_mut_slice();
            // L y = b
            for i in 0..n {
                let row = self.row(i);
                let s: C64 = row[..i].iter().zip(&v[..i]).map(|(l, y)| l * y).sum();
                v[i] = (v[i] - s) / row[i].re;
            }
            // L^H x = y, eliminating one row of L at a time.
            for i in (0..n).rev() {
                let row = self.row(i);
                v[i] /= row[i].re;
                let xi = v[i];
                for (vk, lik) in v[..i].iter_mut().zip(&row[..i]) {
                    *vk -= lik.conj() * xi;
                }
            }
        }
        x
    }

    /// `G^{-1} = L^{-H} L^{-1}`, exactly Hermitian.
    pub fn inverse(&self) -> ComplexMatrix {
        let n = self.n;
        // Columns of W = L^{-1}; column j is zero above row j.
        let mut w = vec![C64::new(0.0, 0.0); n * n];
        for j in 0..n {
            let col = &mut w[j * n..(j + 1) * n];
            col[j] = C64::new(1.0 / self.rows[j * n + j].re, 0.0);
            for i in j + 1..n {
                let row = self.row(i);
                let s: C64 = row[j..i].iter().zip(&col[j..i]).map(|(l, y)| l * y).sum();
                col[i] = -s / row[i].re;
            }
        }
        let mut inv = ComplexMatrix::zeros(n, n);
        for a in 0..n {
            for b in a..n {
                // (W^H W)_{ab} = sum_{k >= b} conj(W_ka) W_kb
                let wa = &w[a * n + b..(a + 1) * n];
                let wb = &w[b * n + b..(b + 1) * n];
                let v = dot_conj(wb, wa);
                inv[(a, b)] = v;
                inv[(b, a)] = v.conj();
            }
            inv[(a, a)].im = 0.0;
        }
        inv
    }
}

/// Cholesky of a Hermitian matrix, retrying once with diagonal jitter.
pub fn hpd_cholesky(g: &ComplexMatrix) -> Result<(HpdCholesky, SolveInfo)> {
    let n = g.nrows();
    if n != g.ncols() {
        return Err(Error::Dimension(format!(
            "expected a square matrix, got {}x{}",
            n,
            g.ncols()
        )));
    }
    if g.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Convergence(
            "non-finite entries in Hermitian system".into(),
        ));
    }
    // Only the lower triangle is read; make it exactly Hermitian first.
    let sym = hermitian_part(g);
    if let Some(chol) = HpdCholesky::new(&sym) {
        return Ok((chol, SolveInfo { jittered: false }));
    }
    let trace: f64 = (0..n).map(|i| sym[(i, i)].re).sum();
    let jitter = JITTER_REL * trace.abs().max(f64::MIN_POSITIVE) / n.max(1) as f64;
    let mut jittered = sym;
    for i in 0..n {
        jittered[(i, i)] += C64::new(jitter, 0.0);
    }
    HpdCholesky::new(&jittered)
        .map(|chol| (chol, SolveInfo { jittered: true }))
        .ok_or_else(|| {
            Error::Convergence(format!(
                "{n}x{n} Hermitian system singular after jitter {jitter:.3e}"
            ))
        })
}

/// `(G + G^H) / 2`.
pub fn hermitian_part(g: &ComplexMatrix) -> ComplexMatrix {
    (g + g.adjoint()).scale(0.5)
}

/// Inverse of a Hermitian positive-definite matrix.
pub fn hpd_inverse(g: &ComplexMatrix) -> Result<(ComplexMatrix, SolveInfo)> {
    let (chol, info) = hpd_cholesky(g)?;
    Ok((chol.inverse(), info))
}

/// Solves `X G = rhs` for `X` with `G` Hermitian positive definite.
pub fn solve_right_hpd(
    rhs: &ComplexMatrix,
    g: &ComplexMatrix,
) -> Result<(ComplexMatrix, SolveInfo)> {
    if rhs.ncols() != g.nrows() {
        return Err(Error::Dimension(format!(
            "right solve: rhs has {} columns, system is {}x{}",
            rhs.ncols(),
            g.nrows(),
            g.ncols()
        )));
    }
    // X G = B  <=>  G X^H = B^H  since G = G^H.
    let (chol, info) = hpd_cholesky(g)?;
    let xh = chol.solve(&rhs.adjoint());
    Ok((xh.adjoint(), info))
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn min_eigenvalue(g: &ComplexMatrix) -> f64 {
    if g.nrows() == 0 {
        return 0.0;
    }
    hermitian_part(g)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}
