//! Column-major sparse storage shared by transition and attractor matrices.

use nalgebra::DMatrix;

/// Square matrix stored as one sorted `(row, value)` list per column.
///
/// Products scatter column by column in ascending index order. Two columns
/// whose neighbourhoods are translated copies of each other therefore see
/// their contributions accumulated in the same order, which keeps
/// translation-invariant columns bit-identical.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseColumns {
    n: usize,
    cols: Vec<Vec<(usize, f64)>>,
}

impl SparseColumns {
    pub fn from_columns(n: usize, mut cols: Vec<Vec<(usize, f64)>>) -> Self {
        assert_eq!(cols.len(), n, "column count must equal dimension");
        for col in &mut cols {
            col.sort_by_key(|&(i, _)| i);
            debug_assert!(col.iter().all(|&(i, _)| i < n));
        }
        Self { n, cols }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_columns(n, (0..n).map(|j| vec![(j, 1.0)]).collect())
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        assert_eq!(m.nrows(), m.ncols());
        let n = m.nrows();
        let cols = (0..n)
            .map(|j| {
                (0..n)
                    .filter(|&i| m[(i, j)] != 0.0)
                    .map(|i| (i, m[(i, j)]))
                    .collect()
            })
            .collect();
        Self { n, cols }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn column(&self, j: usize) -> &[(usize, f64)] {
        &self.cols[j]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[(usize, f64)]> {
        self.cols.iter().map(|c| c.as_slice())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.cols[j]
            .binary_search_by_key(&i, |&(r, _)| r)
            .map(|k| self.cols[j][k].1)
            .unwrap_or(0.0)
    }

    pub fn nnz(&self) -> usize {
        self.cols.iter().map(Vec::len).sum()
    }

    /// `y = A x`, accumulated column by column.
    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        y.iter_mut().for_each(|v| *v = 0.0);
        for (j, col) in self.cols.iter().enumerate() {
            let xj = x[j];
            if xj == 0.0 {
                continue;
            }
            for &(i, a) in col {
                y[i] += a * xj;
            }
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `xᵀ A` as a vector.
    pub fn vec_mul(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        self.cols
            .iter()
            .map(|col| col.iter().map(|&(i, a)| x[i] * a).sum())
            .collect()
    }

    pub fn column_sums(&self) -> Vec<f64> {
        self.cols
            .iter()
            .map(|c| c.iter().map(|&(_, v)| v).sum())
            .collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for (j, col) in self.cols.iter().enumerate() {
            for &(i, v) in col {
                m[(i, j)] = v;
            }
        }
        m
    }
}
