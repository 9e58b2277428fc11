use sprs::{CsMat, TriMat};

/// Sparse symmetric matrix in compressed row storage.
///
/// Both triangles are stored; symmetry is a property of the assembly, not of
/// the storage.
#[derive(Debug, Clone)]
pub struct SparseSymMatrix {
    inner: CsMat<f64>,
}

impl SparseSymMatrix {
    /// Sums duplicate entries.
    pub fn from_triplets(dim: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut tri = TriMat::with_capacity((dim, dim), triplets.len());
        for &(i, j, v) in triplets {
            tri.add_triplet(i, j, v);
        }
        SparseSymMatrix { inner: tri.to_csr() }
    }

    pub fn identity(dim: usize) -> Self {
        SparseSymMatrix { inner: CsMat::eye(dim) }
    }

    pub fn dim(&self) -> usize {
        self.inner.rows()
    }

    pub fn nnz(&self) -> usize {
        self.inner.nnz()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.inner.get(i, j).copied().unwrap_or(0.0)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim());
        self.inner
            .outer_iterator()
            .map(|row| row.iter().map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    /// `x^T A y`.
    pub fn inner(&self, x: &[f64], y: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim());
        assert_eq!(y.len(), self.dim());
        self.inner
            .outer_iterator()
            .enumerate()
            .map(|(i, row)| x[i] * row.iter().map(|(j, v)| v * y[j]).sum::<f64>())
            .sum()
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &SparseSymMatrix, b: f64) -> SparseSymMatrix {
        let lhs = self.inner.map(|v| a * v);
        let rhs = other.inner.map(|v| b * v);
        SparseSymMatrix { inner: &lhs + &rhs }
    }

    /// Sum of all entries.
    pub fn total(&self) -> f64 {
        self.inner.data().iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.inner.data().iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (v, (i, j)) in self.inner.iter() {
            worst = worst.max((v - self.get(j, i)).abs());
        }
        worst
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        let mut d = vec![vec![0.0; n]; n];
        for (v, (i, j)) in self.inner.iter() {
            d[i][j] += v;
        }
        d
    }

    pub(crate) fn as_csmat(&self) -> &CsMat<f64> {
        &self.inner
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_summed() {
        let m = SparseSymMatrix::from_triplets(2, &[(0, 0, 1.0), (0, 0, 2.0), (0, 1, 1.0), (1, 0, 1.0)]);
        assert_eq!(m.get(0, 0), 3.0);
        assert_eq!(m.get(1, 1), 0.0);
        assert_eq!(m.mul_vec(&[1.0, 2.0]), vec![5.0, 1.0]);
        assert_eq!(m.inner(&[1.0, 2.0], &[1.0, 1.0]), 6.0);
        assert_eq!(m.max_asymmetry(), 0.0);
    }

    #[test]
    fn combination_merges_patterns() {
        let a = SparseSymMatrix::from_triplets(2, &[(0, 1, 1.0), (1, 0, 1.0)]);
        let b = SparseSymMatrix::identity(2);
        let c = a.combine(2.0, &b, 0.5);
        assert_eq!(c.to_dense(), vec![vec![0.5, 2.0], vec![2.0, 0.5]]);
    }
}
