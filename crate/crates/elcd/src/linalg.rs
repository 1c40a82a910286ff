//! Dense numeric kernels: LU factorization with partial pivoting, triangular
//! solves, and a cyclic Jacobi eigensolver for symmetric matrices.
//!
//! Everything here works on plain `f64` values. The systems in this crate are
//! small (state dimensions up to a few tens; one d^2 x d^2 solve for the
//! Lyapunov oracle), so simple cubic algorithms are both adequate and easy to
//! audit. All routines are deterministic: no pivoting tie-break or sweep order
//! depends on anything but the input values.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Pivot magnitudes at or below this are treated as singular.
pub const PIVOT_THRESHOLD: f64 = 1e-12;

/// LU factorization of a square matrix with partial (row) pivoting:
/// `P A = L U` with unit-diagonal `L` stored below the diagonal of `lu`.
#[derive(Clone, Debug)]
pub struct LuFactors {
    n: usize,
    lu: Vec<f64>,
    /// Row permutation: `perm[i]` is the original row now in position `i`.
    perm: Vec<usize>,
    /// Sign of the permutation, for determinants.
    sign: f64,
}

impl LuFactors {
    /// Factor a square matrix. Fails with the elimination column index when a
    /// pivot's magnitude is at or below [`PIVOT_THRESHOLD`].
    pub fn factor(a: &Tensor) -> Result<LuFactors> {
        let n = a.rows();
        assert_eq!(
            n,
            a.cols(),
            "LU factorization requires a square matrix, got {:?}",
            a.shape()
        );
        let mut lu = a.data().to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = 1.0;

        for col in 0..n {
            // Find the largest pivot in this column at or below the diagonal.
            let mut best = col;
            let mut best_mag = lu[col * n + col].abs();
            for row in (col + 1)..n {
                let mag = lu[row * n + col].abs();
                if mag > best_mag {
                    best = row;
                    best_mag = mag;
                }
            }
            if best_mag <= PIVOT_THRESHOLD {
                return Err(Error::SingularMatrix {
                    index: col,
                    pivot: lu[best * n + col],
                });
            }
            if best != col {
                for j in 0..n {
                    lu.swap(col * n + j, best * n + j);
                }
                perm.swap(col, best);
                sign = -sign;
            }
            let pivot = lu[col * n + col];
            for row in (col + 1)..n {
                let factor = lu[row * n + col] / pivot;
                lu[row * n + col] = factor;
                for j in (col + 1)..n {
                    lu[row * n + j] -= factor * lu[col * n + j];
                }
            }
        }
        Ok(LuFactors { n, lu, perm, sign })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solve `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        assert_eq!(b.len(), n, "solve rhs length {} for {}x{} system", b.len(), n, n);
        // Forward substitution with the permuted rhs: L y = P b.
        let mut x: Vec<f64> = (0..n).map(|i| b[self.perm[i]]).collect();
        for i in 1..n {
            let mut acc = x[i];
            for j in 0..i {
                acc -= self.lu[i * n + j] * x[j];
            }
            x[i] = acc;
        }
        // Back substitution: U x = y.
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in (i + 1)..n {
                acc -= self.lu[i * n + j] * x[j];
            }
            x[i] = acc / self.lu[i * n + i];
        }
        x
    }

    /// Solve `A^T x = b` using the same factors: `A^T = U^T L^T P`.
    pub fn solve_transposed(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        assert_eq!(b.len(), n, "solve_transposed rhs length {}", b.len());
        // U^T y = b (forward substitution on the transposed upper factor).
        let mut y = b.to_vec();
        for i in 0..n {
            let mut acc = y[i];
            for j in 0..i {
                acc -= self.lu[j * n + i] * y[j];
            }
            y[i] = acc / self.lu[i * n + i];
        }
        // L^T z = y (back substitution, unit diagonal).
        for i in (0..n).rev() {
            let mut acc = y[i];
            for j in (i + 1)..n {
                acc -= self.lu[j * n + i] * y[j];
            }
            y[i] = acc;
        }
        // x = P^T z: undo the row permutation.
        let mut x = vec![0.0; n];
        for i in 0..n {
            x[self.perm[i]] = y[i];
        }
        x
    }

    /// Determinant from the factorization.
    pub fn determinant(&self) -> f64 {
        let n = self.n;
        let mut det = self.sign;
        for i in 0..n {
            det *= self.lu[i * n + i];
        }
        det
    }
}

/// Determinant of a square matrix; 0.0 when the factorization finds a pivot
/// at the singularity threshold (the matrix is numerically rank-deficient).
pub fn determinant(a: &Tensor) -> f64 {
    match LuFactors::factor(a) {
        Ok(f) => f.determinant(),
        Err(_) => 0.0,
    }
}

/// Solve `L x = b` with `L` lower-triangular and unit diagonal.
pub fn solve_unit_lower(l: &Tensor, b: &[f64]) -> Vec<f64> {
    let n = l.rows();
    let mut x = b.to_vec();
    for i in 0..n {
        let mut acc = x[i];
        for j in 0..i {
            acc -= l.get(i, j) * x[j];
        }
        x[i] = acc;
    }
    x
}

/// Solve `U x = b` with `U` upper-triangular (nonzero diagonal).
pub fn solve_upper(u: &Tensor, b: &[f64]) -> Vec<f64> {
    let n = u.rows();
    let mut x = b.to_vec();
    for i in (0..n).rev() {
        let mut acc = x[i];
        for j in (i + 1)..n {
            acc -= u.get(i, j) * x[j];
        }
        x[i] = acc / u.get(i, i);
    }
    x
}

// ── Symmetric eigenvalues (cyclic Jacobi) ────────────────────────────────────

/// Eigenvalues of a symmetric matrix, ascending, via cyclic Jacobi rotations.
///
/// The input is symmetrized as `(A + A^T)/2` first so callers may pass a
/// nearly-symmetric matrix. Converges quadratically; 30 sweeps is far more
/// than small matrices ever need.
pub fn symmetric_eigenvalues(a: &Tensor) -> Vec<f64> {
    let n = a.rows();
    assert_eq!(n, a.cols(), "eigenvalues of non-square {:?}", a.shape());
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            m[i * n + j] = 0.5 * (a.get(i, j) + a.get(j, i));
        }
    }
    jacobi_in_place(&mut m, n);
    let mut eig: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    eig.sort_by(|x, y| x.partial_cmp(y).expect("non-finite eigenvalue"));
    eig
}

/// Largest eigenvalue of the symmetric part of `a`.
pub fn symmetric_eigenvalue_max(a: &Tensor) -> f64 {
    *symmetric_eigenvalues(a)
        .last()
        .expect("eigenvalues of empty matrix")
}

/// True when the symmetric part of `a` is positive definite (all eigenvalues
/// strictly above `margin`).
pub fn is_positive_definite(a: &Tensor, margin: f64) -> bool {
    symmetric_eigenvalues(a).iter().all(|&l| l > margin)
}

fn jacobi_in_place(m: &mut [f64], n: usize) {
    if n <= 1 {
        return;
    }
    for _sweep in 0..30 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[i * n + j] * m[i * n + j];
            }
        }
        if off.sqrt() < 1e-300 {
            break;
        }
        let scale: f64 = (0..n).map(|i| m[i * n + i].abs()).fold(off.sqrt(), f64::max);
        if off.sqrt() <= 1e-15 * scale.max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let tau = (aqq - app) / (2.0 * apq);
                // Smaller-magnitude root for stability.
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // Apply the rotation to rows/columns p and q.
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
            }
        }
    }
    // Clean up rounding asymmetry on the diagonal (off-diagonals are ~0 now).
    for i in 0..n {
        for j in (i + 1)..n {
            m[i * n + j] = 0.5 * (m[i * n + j] + m[j * n + i]);
            m[j * n + i] = m[i * n + j];
        }
    }
}
