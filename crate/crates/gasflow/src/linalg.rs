//! Sparse direct LU factorization with partial pivoting.
//!
//! Left-looking factorization of a square matrix given in triplet form.
//! Columns of L and U are stored compressed; the working column is a dense
//! scatter buffer with an occupancy list so the cost per column is
//! proportional to the entries actually touched. Network Jacobians are
//! narrow-banded and small, so no fill-reducing ordering is applied.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    /// No acceptable pivot in some column; `rank` columns were eliminated
    /// before the breakdown.
    #[error("matrix is singular: rank {rank} of {n}")]
    Singular { rank: usize, n: usize },
    #[error("triplet entry ({row}, {col}) outside {n} x {n} matrix")]
    IndexOutOfBounds { row: usize, col: usize, n: usize },
}

/// Column pointers, row indices, values.
type Csc = (Vec<usize>, Vec<usize>, Vec<f64>);

/// Square sparse matrix in triplet (COO) form. Duplicate entries add.
#[derive(Debug, Clone)]
pub struct Triplets {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl Triplets {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        self.entries.push((row, col, value));
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    /// Dense row-major copy, for tests and finite-difference checks.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; self.n]; self.n];
        for &(r, c, v) in &self.entries {
            dense[r][c] += v;
        }
        dense
    }

    fn to_csc(&self) -> Result<Csc, LinalgError> {
        let n = self.n;
        let mut count = vec![0usize; n + 1];
        for &(r, c, _) in &self.entries {
            if r >= n || c >= n {
                return Err(LinalgError::IndexOutOfBounds { row: r, col: c, n });
            }
            count[c + 1] += 1;
        }
        for c in 0..n {
            count[c + 1] += count[c];
        }
        let mut rows = vec![0usize; self.entries.len()];
        let mut vals = vec![0.0f64; self.entries.len()];
        let mut next = count.clone();
        for &(r, c, v) in &self.entries {
            let slot = next[c];
            rows[slot] = r;
            vals[slot] = v;
            next[c] += 1;
        }
        Ok((count, rows, vals))
    }
}

/// LU factors of a row-permuted matrix: `P A = L U` with unit-diagonal `L`.
#[derive(Debug)]
pub struct SparseLu {
    n: usize,
    /// `perm[k]` = original row chosen as the k-th pivot.
    perm: Vec<usize>,
    l_colptr: Vec<usize>,
    l_rows: Vec<usize>, // pivot-order indices, strictly below the diagonal
    l_vals: Vec<f64>,
    u_colptr: Vec<usize>,
    u_rows: Vec<usize>, // pivot-order indices, at or above the diagonal
    u_vals: Vec<f64>,
}

impl SparseLu {
    /// Factorize, declaring singularity when the best available pivot in a
    /// column is negligible relative to that column's own input scale. The
    /// per-column reference keeps badly scaled but regular systems
    /// factorizable while structural cancellations are still caught.
    pub fn factorize(matrix: &Triplets) -> Result<Self, LinalgError> {
        let n = matrix.dim();
        let (a_colptr, a_rows, a_vals) = matrix.to_csc()?;
        let mut col_scale = vec![0.0f64; n];
        for col in 0..n {
            for idx in a_colptr[col]..a_colptr[col + 1] {
                col_scale[col] = col_scale[col].max(a_vals[idx].abs());
            }
        }

        // pivot_of[orig_row] = elimination index once the row has been chosen
        let mut pivot_of = vec![usize::MAX; n];
        let mut perm = Vec::with_capacity(n);

        let mut work = vec![0.0f64; n]; // dense accumulator indexed by original row
        let mut touched = vec![false; n];
        let mut occupied: Vec<usize> = Vec::with_capacity(n);

        let mut l_colptr = vec![0usize];
        let mut l_rows: Vec<usize> = Vec::new(); // original rows during build
        let mut l_vals: Vec<f64> = Vec::new();
        let mut u_colptr = vec![0usize];
        let mut u_rows: Vec<usize> = Vec::new();
        let mut u_vals: Vec<f64> = Vec::new();

        for col in 0..n {
            // Scatter A(:, col).
            for idx in a_colptr[col]..a_colptr[col + 1] {
                let r = a_rows[idx];
                if !touched[r] {
                    touched[r] = true;
                    occupied.push(r);
                }
                work[r] += a_vals[idx];
            }

            // Apply previous columns in elimination order.
            for k in 0..col {
                let piv_row = perm[k];
                let ukc = work[piv_row];
                if ukc == 0.0 {
                    continue;
                }
                for idx in l_colptr[k]..l_colptr[k + 1] {
                    let r = l_rows[idx];
                    if !touched[r] {
                        touched[r] = true;
                        occupied.push(r);
                    }
                    work[r] -= l_vals[idx] * ukc;
                }
            }

            // Partial pivoting over the rows not yet pivotal.
            let mut pivot_row = usize::MAX;
            let mut pivot_val = 0.0f64;
            for &r in &occupied {
                if pivot_of[r] == usize::MAX && work[r].abs() > pivot_val.abs() {
                    pivot_row = r;
                    pivot_val = work[r];
                }
            }
            let pivot_floor = (col_scale[col] * 1e-12).max(f64::MIN_POSITIVE);
            if pivot_row == usize::MAX || pivot_val.abs() <= pivot_floor {
                return Err(LinalgError::Singular { rank: col, n });
            }

            // Store U entries (pivotal rows) and L entries (the rest).
            for &r in &occupied {
                let v = work[r];
                work[r] = 0.0;
                touched[r] = false;
                if v == 0.0 {
                    continue;
                }
                if pivot_of[r] != usize::MAX {
                    u_rows.push(pivot_of[r]);
                    u_vals.push(v);
                } else if r != pivot_row {
                    l_rows.push(r);
                    l_vals.push(v / pivot_val);
                }
            }
            occupied.clear();
            u_rows.push(col);
            u_vals.push(pivot_val);
            u_colptr.push(u_rows.len());
            l_colptr.push(l_rows.len());
            pivot_of[pivot_row] = col;
            perm.push(pivot_row);
        }

        // Remap L's row indices into elimination order now that every row
        // has a pivot position.
        for r in l_rows.iter_mut() {
            *r = pivot_of[*r];
        }

        Ok(Self {
            n,
            perm,
            l_colptr,
            l_rows,
            l_vals,
            u_colptr,
            u_rows,
            u_vals,
        })
    }

    /// Solve `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        // Forward: L y = P b.
        let mut y: Vec<f64> = self.perm.iter().map(|&r| b[r]).collect();
        for k in 0..self.n {
            let yk = y[k];
            if yk == 0.0 {
                continue;
            }
            for idx in self.l_colptr[k]..self.l_colptr[k + 1] {
                y[self.l_rows[idx]] -= self.l_vals[idx] * yk;
            }
        }
        // Backward: U x = y. The diagonal is the last entry of each column.
        let mut x = y;
        for k in (0..self.n).rev() {
            let diag_idx = self.u_colptr[k + 1] - 1;
            let xk = x[k] / self.u_vals[diag_idx];
            x[k] = xk;
            if xk == 0.0 {
                continue;
            }
            for idx in self.u_colptr[k]..diag_idx {
                x[self.u_rows[idx]] -= self.u_vals[idx] * xk;
            }
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Dense Gaussian elimination with partial pivoting, as an oracle.
    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
        let n = b.len();
        for col in 0..n {
            let piv = (col..n).max_by(|&i, &j| {
                a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap()
            })?;
            if a[piv][col].abs() < 1e-300 {
                return None;
            }
            a.swap(col, piv);
            b.swap(col, piv);
            for row in col + 1..n {
                let m = a[row][col] / a[col][col];
                if m == 0.0 {
                    continue;
                }
                for k in col..n {
                    a[row][k] -= m * a[col][k];
                }
                b[row] -= m * b[col];
            }
        }
        let mut x = vec![0.0; n];
        for row in (0..n).rev() {
            let mut s = b[row];
            for k in row + 1..n {
                s -= a[row][k] * x[k];
            }
            x[row] = s / a[row][row];
        }
        Some(x)
    }

    #[test]
    fn solves_identity() {
        let mut t = Triplets::new(3);
        for i in 0..3 {
            t.push(i, i, 1.0);
        }
        let lu = SparseLu::factorize(&t).unwrap();
        assert_eq!(lu.solve(&[3.0, -1.0, 0.5]), vec![3.0, -1.0, 0.5]);
    }

    #[test]
    fn solves_small_system_requiring_pivoting() {
        // Zero leading diagonal entry forces a row swap.
        let mut t = Triplets::new(2);
        t.push(0, 1, 2.0);
        t.push(1, 0, 3.0);
        t.push(1, 1, 1.0);
        let lu = SparseLu::factorize(&t).unwrap();
        let x = lu.solve(&[4.0, 5.0]);
        assert!((x[0] - 1.0).abs() < 1e-14);
        assert!((x[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn detects_zero_column() {
        let mut t = Triplets::new(3);
        t.push(0, 0, 1.0);
        t.push(1, 1, 1.0);
        t.push(2, 1, 2.0);
        assert!(matches!(
            SparseLu::factorize(&t),
            Err(LinalgError::Singular { .. })
        ));
    }

    #[test]
    fn detects_dependent_rows() {
        let mut t = Triplets::new(3);
        // row2 = row0 + row1
        let rows = [
            vec![(0usize, 1.0), (1, 2.0)],
            vec![(1, -1.0), (2, 4.0)],
            vec![(0, 1.0), (1, 1.0), (2, 4.0)],
        ];
        for (r, cols) in rows.iter().enumerate() {
            for &(c, v) in cols {
                t.push(r, c, v);
            }
        }
        let err = SparseLu::factorize(&t).unwrap_err();
        assert!(matches!(err, LinalgError::Singular { rank: 2, n: 3 }));
    }

    #[test]
    fn duplicate_triplets_accumulate() {
        let mut t = Triplets::new(1);
        t.push(0, 0, 1.5);
        t.push(0, 0, 0.5);
        let lu = SparseLu::factorize(&t).unwrap();
        assert_eq!(lu.solve(&[4.0]), vec![2.0]);
    }

    #[test]
    fn rejects_out_of_bounds() {
        let mut t = Triplets::new(2);
        t.push(0, 0, 1.0);
        t.push(2, 0, 1.0);
        assert!(matches!(
            SparseLu::factorize(&t),
            Err(LinalgError::IndexOutOfBounds { .. })
        ));
    }

    proptest! {
        #[test]
        fn matches_dense_oracle(seed in 0u64..500) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
            let n = rng.random_range(2usize..25);
            let mut t = Triplets::new(n);
            // Diagonally-weighted random sparse matrix: nonsingular w.h.p.
            for i in 0..n {
                t.push(i, i, rng.random_range(1.0..5.0) * if rng.random_bool(0.5) { -1.0 } else { 1.0 });
                for _ in 0..rng.random_range(0usize..4) {
                    let j = rng.random_range(0..n);
                    t.push(i, j, rng.random_range(-1.0..1.0));
                }
            }
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let dense = t.to_dense();
            let lu = SparseLu::factorize(&t).unwrap();
            let x = lu.solve(&b);
            let x_ref = dense_solve(dense.clone(), b.clone()).unwrap();
            for i in 0..n {
                prop_assert!((x[i] - x_ref[i]).abs() <= 1e-8 * (1.0 + x_ref[i].abs()));
            }
            // residual check
            for i in 0..n {
                let mut r = -b[i];
                for j in 0..n {
                    r += dense[i][j] * x[j];
                }
                prop_assert!(r.abs() <= 1e-8 * (1.0 + b[i].abs()));
            }
        }
    }
}
