//! Sparse storage and the dense decompositions the factor engine relies on.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds a CSR matrix; duplicate coordinates are summed, explicit zeros dropped.
    pub fn from_triplets<I>(rows: usize, cols: usize, triplets: I) -> Self
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let mut entries: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0usize; rows + 1];
        let mut indices = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in entries {
            assert!(r < rows && c < cols, "triplet ({r}, {c}) outside {rows}x{cols}");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                indptr[r + 1] += 1;
                indices.push(c);
                values.push(v);
                last = Some((r, c));
            }
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        let mut m = SparseMatrix {
            rows,
            cols,
            indptr,
            indices,
            values,
        };
        m.prune_zeros();
        m
    }

    fn prune_zeros(&mut self) {
        if self.values.iter().all(|v| *v != 0.0) {
            return;
        }
        let mut indptr = vec![0usize; self.rows + 1];
        let mut indices = Vec::with_capacity(self.indices.len());
        let mut values = Vec::with_capacity(self.values.len());
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                if v != 0.0 {
                    indices.push(c);
                    values.push(v);
                }
            }
            indptr[r + 1] = indices.len();
        }
        self.indptr = indptr;
        self.indices = indices;
        self.values = values;
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let triplets = (0..m.nrows())
            .flat_map(|r| (0..m.ncols()).map(move |c| (r, c)))
            .filter_map(|(r, c)| (m[(r, c)] != 0.0).then(|| (r, c, m[(r, c)])));
        SparseMatrix::from_triplets(m.nrows(), m.ncols(), triplets.collect::<Vec<_>>())
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = self.indptr[r]..self.indptr[r + 1];
        match self.indices[span.clone()].binary_search(&c) {
            Ok(pos) => self.values[span.start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                out[(r, c)] = v;
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `self * x`
    pub fn mul_dense(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.nrows(), self.cols);
        let mut out = DMatrix::zeros(self.rows, x.ncols());
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                for j in 0..x.ncols() {
                    out[(r, j)] += v * x[(c, j)];
                }
            }
        }
        out
    }

    /// `self^T * x`
    pub fn tr_mul_dense(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.nrows(), self.rows);
        let mut out = DMatrix::zeros(self.cols, x.ncols());
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                for j in 0..x.ncols() {
                    out[(c, j)] += v * x[(r, j)];
                }
            }
        }
        out
    }

    /// `self^T * self`, accumulated row by row.
    pub fn gram_cols(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.cols, self.cols);
        for r in 0..self.rows {
            let entries: Vec<(usize, f64)> = self.row(r).collect();
            for &(a, va) in &entries {
                for &(b, vb) in &entries {
                    out[(a, b)] += va * vb;
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> SparseMatrix {
        let triplets: Vec<_> = (0..self.rows)
            .flat_map(|r| self.row(r).map(move |(c, v)| (c, r, v)))
            .collect();
        SparseMatrix::from_triplets(self.cols, self.rows, triplets)
    }
}

fn to_faer(m: &DMatrix<f64>) -> faer::Mat<f64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Thin SVD with singular values sorted in nonincreasing order.
/// Returns `(U, s, V)` with `m = U diag(s) V^T`.
pub fn thin_svd_sorted(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
    let r = m.nrows().min(m.ncols());
    if r == 0 {
        return Ok((
            DMatrix::zeros(m.nrows(), 0),
            DVector::zeros(0),
            DMatrix::zeros(m.ncols(), 0),
        ));
    }
    let svd = to_faer(m)
        .thin_svd()
        .map_err(|_| Error::Solver("SVD did not converge"))?;
    let (u, v) = (svd.U(), svd.V());
    let s: Vec<f64> = svd.S().column_vector().iter().copied().collect();
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    let u_sorted = DMatrix::from_fn(m.nrows(), r, |i, j| u[(i, order[j])]);
    let v_sorted = DMatrix::from_fn(m.ncols(), r, |i, j| v[(i, order[j])]);
    let s_sorted = DVector::from_fn(r, |j, _| s[order[j]].max(0.0));
    Ok((u_sorted, s_sorted, v_sorted))
}

/// Symmetric eigendecomposition with eigenvalues in ascending order.
pub fn symmetric_eigen_ascending(m: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::Shape {
            expected: n,
            got: m.ncols(),
        });
    }
    if n == 0 {
        return Ok((DVector::zeros(0), DMatrix::zeros(0, 0)));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = to_faer(&sym)
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|_| Error::Solver("eigendecomposition did not converge"))?;
    let values: Vec<f64> = eig.S().column_vector().iter().copied().collect();
    let vectors = eig.U();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    Ok((
        DVector::from_fn(n, |j, _| values[order[j]]),
        DMatrix::from_fn(n, n, |i, j| vectors[(i, order[j])]),
    ))
}

/// Flips column signs so each column of `v` has a positive largest-magnitude
/// entry, mirroring the flips onto `u`.
pub fn orient_columns(u: &mut DMatrix<f64>, v: &mut DMatrix<f64>) {
    for j in 0..v.ncols() {
        let mut best = 0.0f64;
        let mut sign = 1.0;
        for i in 0..v.nrows() {
            let x = v[(i, j)];
            if x.abs() > best {
                best = x.abs();
                sign = x.signum();
            }
        }
        if sign < 0.0 {
            v.column_mut(j).neg_mut();
            u.column_mut(j).neg_mut();
        }
    }
}

/// `||M^T M - I||_F`
pub fn orthonormality_error(m: &DMatrix<f64>) -> f64 {
    let mut gram = m.tr_mul(m);
    for j in 0..gram.ncols() {
        gram[(j, j)] -= 1.0;
    }
    gram.norm()
}

/// Replaces columns `from..` of `m` with unit vectors orthogonal to every
/// earlier column, using modified Gram-Schmidt against the standard basis.
pub fn complete_orthonormal(m: &mut DMatrix<f64>, from: usize) {
    let n = m.nrows();
    let mut candidate = 0usize;
    for j in from..m.ncols() {
        loop {
            assert!(candidate < n, "cannot extend {} columns in dimension {n}", m.ncols());
            let mut x = DVector::zeros(n);
            x[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for c in 0..j {
                    let proj = m.column(c).dot(&x);
                    x.axpy(-proj, &m.column(c), 1.0);
                }
            }
            let norm = x.norm();
            if norm > 1e-6 {
                m.set_column(j, &(x / norm));
                break;
            }
        }
    }
}

/// Thin QR factors `(Q, R)` of `m`.
pub fn orthonormal_basis(m: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let qr = m.clone().qr();
    (qr.q(), qr.r())
}
