//! Minimal sparse/banded linear algebra for the QP solver.

use thiserror::Error;

#[derive(Debug, Error)]
#[error("matrix is not positive definite (pivot {pivot:.3e} at row {row})")]
pub struct NotPositiveDefinite {
    pub row: usize,
    pub pivot: f64,
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone)]
pub struct SparseMat {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMat {
    /// Build from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        order.sort_unstable_by_key(|&k| (triplets[k].0, triplets[k].1));
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        let mut last = None;
        for &k in &order {
            let (r, c, v) = triplets[k];
            assert!(r < nrows && c < ncols, "triplet ({r},{c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                values.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..nrows {
            indptr[r + 1] += indptr[r];
        }
        SparseMat { nrows, ncols, indptr, indices, values }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }

    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(out.len(), self.nrows);
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            let mut acc = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                acc += v * x[*c];
            }
            out[i] = acc;
        }
    }

    /// out += A^T y
    pub fn matvec_t_add(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.nrows);
        debug_assert_eq!(out.len(), self.ncols);
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                out[*c] += v * y[i];
            }
        }
    }

    /// Column-compressed view: per column, the rows touching it and values.
    pub fn to_columns(&self) -> Columns {
        let mut counts = vec![0usize; self.ncols];
        for &c in &self.indices {
            counts[c] += 1;
        }
        let mut indptr = vec![0usize; self.ncols + 1];
        for c in 0..self.ncols {
            indptr[c + 1] = indptr[c] + counts[c];
        }
        let mut rows = vec![0usize; self.nnz()];
        let mut vals = vec![0.0; self.nnz()];
        let mut cursor = indptr.clone();
        for i in 0..self.nrows {
            let (cols, values) = self.row(i);
            for (c, v) in cols.iter().zip(values) {
                rows[cursor[*c]] = i;
                vals[cursor[*c]] = *v;
                cursor[*c] += 1;
            }
        }
        Columns { indptr, rows, vals }
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                m[(i, *c)] += *v;
            }
        }
        m
    }
}

/// CSC companion structure produced by [`SparseMat::to_columns`].
pub struct Columns {
    pub indptr: Vec<usize>,
    pub rows: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Columns {
    pub fn col(&self, c: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.indptr[c], self.indptr[c + 1]);
        (&self.rows[a..b], &self.vals[a..b])
    }
}

/// Symmetric banded matrix, lower triangle stored by diagonals.
#[derive(Debug, Clone)]
pub struct Banded {
    n: usize,
    bw: usize,
    /// data[i * (bw+1) + d] = M[i, i-d], d = 0..=bw
    data: Vec<f64>,
}

impl Banded {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Banded { n, bw, data: vec![0.0; n * (bw + 1)] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        debug_assert!(hi - lo <= self.bw);
        self.data[hi * (self.bw + 1) + (hi - lo)] += v;
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        if hi - lo > self.bw {
            0.0
        } else {
            self.data[hi * (self.bw + 1) + (hi - lo)]
        }
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Symmetric diagonal scaling: M[i,j] *= r[i] * r[j].
    pub fn scale_sym(&mut self, r: &[f64]) {
        for i in 0..self.n {
            for d in 0..=self.bw.min(i) {
                self.data[i * (self.bw + 1) + d] *= r[i] * r[i - d];
            }
        }
    }

    /// In-place Cholesky factorization (lower band overwritten by L).
    pub fn cholesky_in_place(&mut self) -> Result<(), NotPositiveDefinite> {
        let bw = self.bw;
        for i in 0..self.n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let mut sum = self.data[i * (bw + 1) + (i - j)];
                let kstart = lo.max(j.saturating_sub(bw));
                for k in kstart..j {
                    sum -= self.data[i * (bw + 1) + (i - k)] * self.data[j * (bw + 1) + (j - k)];
                }
                if i == j {
                    if sum <= 0.0 || !sum.is_finite() {
                        return Err(NotPositiveDefinite { row: i, pivot: sum });
                    }
                    self.data[i * (bw + 1)] = sum.sqrt();
                } else {
                    self.data[i * (bw + 1) + (i - j)] = sum / self.data[j * (bw + 1)];
                }
            }
        }
        Ok(())
    }

    /// Solve L L^T x = b given the factorization from `cholesky_in_place`.
    pub fn solve_cholesky(&self, b: &[f64], out: &mut [f64]) {
        let bw = self.bw;
        out.copy_from_slice(b);
        for i in 0..self.n {
            let lo = i.saturating_sub(bw);
            let mut sum = out[i];
            for k in lo..i {
                sum -= self.data[i * (bw + 1) + (i - k)] * out[k];
            }
            out[i] = sum / self.data[i * (bw + 1)];
        }
        for i in (0..self.n).rev() {
            let hi = (i + bw).min(self.n - 1);
            let mut sum = out[i];
            for k in (i + 1)..=hi {
                sum -= self.data[k * (bw + 1) + (k - i)] * out[k];
            }
            out[i] = sum / self.data[i * (bw + 1)];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn triplets_sum_duplicates_and_order() {
        let m = SparseMat::from_triplets(
            3,
            4,
            &[(2, 1, 1.0), (0, 3, 2.0), (2, 1, 0.5), (0, 0, -1.0), (1, 2, 3.0)],
        );
        assert_eq!(m.nnz(), 4);
        let d = m.to_dense();
        assert_eq!(d[(2, 1)], 1.5);
        assert_eq!(d[(0, 3)], 2.0);
        assert_eq!(d[(0, 0)], -1.0);
        assert_eq!(d[(1, 2)], 3.0);
    }

    #[test]
    fn matvec_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let (nr, nc) = (rng.gen_range(1..12), rng.gen_range(1..12));
            let mut trips = vec![];
            for _ in 0..rng.gen_range(0..30) {
                trips.push((rng.gen_range(0..nr), rng.gen_range(0..nc), rng.gen_range(-2.0..2.0)));
            }
            let m = SparseMat::from_triplets(nr, nc, &trips);
            let d = m.to_dense();
            let x: Vec<f64> = (0..nc).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..nr).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut out = vec![0.0; nr];
            m.matvec(&x, &mut out);
            let expect = &d * DVector::from_column_slice(&x);
            for i in 0..nr {
                assert_relative_eq!(out[i], expect[i], epsilon = 1e-12);
            }
            let mut out_t = vec![0.0; nc];
            m.matvec_t_add(&y, &mut out_t);
            let expect_t = d.transpose() * DVector::from_column_slice(&y);
            for i in 0..nc {
                assert_relative_eq!(out_t[i], expect_t[i], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn columns_view_round_trips() {
        let m = SparseMat::from_triplets(3, 3, &[(0, 0, 1.0), (1, 0, 2.0), (2, 2, 3.0)]);
        let cols = m.to_columns();
        let (rows, vals) = cols.col(0);
        assert_eq!(rows, &[0, 1]);
        assert_eq!(vals, &[1.0, 2.0]);
        assert_eq!(cols.col(1).0.len(), 0);
        assert_eq!(cols.col(2).0, &[2]);
    }

    #[test]
    fn banded_cholesky_matches_dense() {
        for seed in 0u64..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(2..25usize);
            let bw = rng.gen_range(0..n.min(6));
            // SPD banded: B = C C^T + I with C banded (bandwidth doubles)
            let mut dense = DMatrix::<f64>::zeros(n, n);
            for i in 0..n {
                for j in i.saturating_sub(bw)..=i {
                    let v: f64 = rng.gen_range(-1.0..1.0);
                    dense[(i, j)] = v;
                    dense[(j, i)] = v;
                }
            }
            let spd = &dense * dense.transpose() + DMatrix::identity(n, n);
            let mut banded = Banded::zeros(n, (2 * bw).min(n - 1));
            for i in 0..n {
                for j in i.saturating_sub(banded.bandwidth())..=i {
                    banded.add(i, j, spd[(i, j)]);
                }
            }
            let rhs: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut x = vec![0.0; n];
            banded.cholesky_in_place().unwrap();
            banded.solve_cholesky(&rhs, &mut x);
            let expect = spd.clone().lu().solve(&DVector::from_column_slice(&rhs)).unwrap();
            for i in 0..n {
                assert!(
                    (x[i] - expect[i]).abs() < 1e-8 * (1.0 + expect[i].abs()),
                    "seed {seed} component {i}"
                );
            }
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut b = Banded::zeros(2, 1);
        b.add(0, 0, 1.0);
        b.add(1, 1, -1.0);
        assert!(b.cholesky_in_place().is_err());
    }
}
