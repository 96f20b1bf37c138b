//! Dense linear algebra for the small systems that appear here (velocity
//! Hessians and transport solves, dimension `n*m`, rarely above 8).
//!
//! LU factorization with partial pivoting; row-major storage.

/// LU factorization of a square matrix, with the pivot sign tracked so the
/// determinant comes out of the diagonal product.
pub(crate) struct Lu {
    n: usize,
    /// Packed L (unit diagonal, below) and U (on and above), row-major.
    lu: Vec<f64>,
    /// Row permutation applied to the input.
    perm: Vec<usize>,
    sign: f64,
}

impl Lu {
    /// Factorizes row-major `a` of shape `n × n`. Always succeeds; a singular
    /// matrix shows up as a (near-)zero diagonal entry, surfaced through
    /// [`Lu::det`] so callers can apply their own thresholds.
    pub(crate) fn factor(a: &[f64], n: usize) -> Lu {
        debug_assert_eq!(a.len(), n * n);
        let mut lu = a.to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = 1.0;
        for col in 0..n {
            // Partial pivot: largest magnitude on or below the diagonal.
            let mut piv = col;
            let mut best = lu[col * n + col].abs();
            for row in col + 1..n {
                let v = lu[row * n + col].abs();
                if v > best {
                    best = v;
                    piv = row;
                }
            }
            if piv != col {
                for k in 0..n {
                    lu.swap(col * n + k, piv * n + k);
                }
                perm.swap(col, piv);
                sign = -sign;
            }
            let d = lu[col * n + col];
            if d == 0.0 {
                continue;
            }
            for row in col + 1..n {
                let m = lu[row * n + col] / d;
                lu[row * n + col] = m;
                for k in col + 1..n {
                    lu[row * n + k] -= m * lu[col * n + k];
                }
            }
        }
        Lu { n, lu, perm, sign }
    }

    pub(crate) fn det(&self) -> f64 {
        let mut d = self.sign;
        for i in 0..self.n {
            d *= self.lu[i * self.n + i];
        }
        d
    }

    /// Solves `A x = b`. Caller checks `det` against its threshold first.
    pub(crate) fn solve(&self, b: &[f64]) -> Vec<f64> {
        debug_assert_eq!(b.len(), self.n);
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        // Forward substitution with unit lower triangle.
        for i in 1..n {
            for j in 0..i {
                x[i] -= self.lu[i * n + j] * x[j];
            }
        }
        // Back substitution.
        for i in (0..n).rev() {
            for j in i + 1..n {
                x[i] -= self.lu[i * n + j] * x[j];
            }
            x[i] /= self.lu[i * n + i];
        }
        x
    }

    /// Dense inverse, column by column.
    pub(crate) fn invert(&self) -> Vec<f64> {
        let n = self.n;
        let mut inv = vec![0.0; n * n];
        let mut e = vec![0.0; n];
        for col in 0..n {
            e[col] = 1.0;
            let x = self.solve(&e);
            e[col] = 0.0;
            for row in 0..n {
                inv[row * n + col] = x[row];
            }
        }
        inv
    }
}
