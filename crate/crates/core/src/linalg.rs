//! Small dense and sparse linear-algebra kernels.
//!
//! Only what the forward and inverse solvers need: compressed sparse rows for
//! the FEM stiffness and difference operators, a row-major dense matrix for the
//! sensitivity matrix and its normal equations, and two Cholesky factorizations
//! (dense, and envelope/skyline under a reverse Cuthill-McKee ordering).

use std::collections::VecDeque;

use rayon::prelude::*;

use crate::error::{check_len, EitError, Result};
use crate::scalar::{dot, Real};

/// Compressed sparse row matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix<T> {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<T>,
}

impl<T: Real> CsrMatrix<T> {
    /// Builds from `(row, col, value)` triplets; duplicates are summed and
    /// column indices within each row end up sorted.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, T)]) -> Self {
        let mut counts = vec![0usize; rows + 1];
        for &(r, c, _) in triplets {
            assert!(r < rows && c < cols, "triplet ({r}, {c}) out of bounds");
            counts[r + 1] += 1;
        }
        for i in 0..rows {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut raw = vec![(0usize, T::zero()); triplets.len()];
        for &(r, c, v) in triplets {
            raw[fill[r]] = (c, v);
            fill[r] += 1;
        }

        let mut indptr = Vec::with_capacity(rows + 1);
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        indptr.push(0);
        for r in 0..rows {
            let row = &mut raw[counts[r]..counts[r + 1]];
            row.sort_by_key(|&(c, _)| c);
            for &(c, v) in row.iter() {
                if indices.len() > indptr[r] && *indices.last().unwrap() == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    indices.push(c);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `(column, value)` pairs of row `r`.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.row(r)
            .find(|&(j, _)| j == c)
            .map_or(T::zero(), |(_, v)| v)
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|r| self.row(r).fold(T::zero(), |acc, (c, v)| acc + v * x[c]))
            .collect()
    }

    /// `Aᵀx`
    pub fn t_matvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.rows);
        let mut out = vec![T::zero(); self.cols];
        for (r, &xr) in x.iter().enumerate() {
            if xr == T::zero() {
                continue;
            }
            for (c, v) in self.row(r) {
                out[c] += v * xr;
            }
        }
        out
    }

    /// Stacks `self` on top of `other`.
    pub fn vstack(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.cols);
        let mut indptr = self.indptr.clone();
        let base = self.nnz();
        indptr.extend(other.indptr[1..].iter().map(|&p| p + base));
        let mut indices = self.indices.clone();
        indices.extend_from_slice(&other.indices);
        let mut values = self.values.clone();
        values.extend_from_slice(&other.values);
        Self {
            rows: self.rows + other.rows,
            cols: self.cols,
            indptr,
            indices,
            values,
        }
    }

    /// Adds `scale · AᵀA` into a dense square matrix.
    pub fn add_gram_to(&self, dense: &mut DenseMatrix<T>, scale: T) {
        assert_eq!(dense.rows(), self.cols);
        assert_eq!(dense.cols(), self.cols);
        for r in 0..self.rows {
            for (i, vi) in self.row(r) {
                for (j, vj) in self.row(r) {
                    *dense.get_mut(i, j) += scale * vi * vj;
                }
            }
        }
    }

    pub fn to_dense(&self) -> DenseMatrix<T> {
        let mut d = DenseMatrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                *d.get_mut(r, c) += v;
            }
        }
        d
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|r| self.row(r).all(|(c, v)| (v - self.get(c, r)).abs() <= tol))
    }
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> DenseMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            *m.get_mut(i, i) = T::one();
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        check_len("dense matrix data", rows * cols, data.len())?;
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn get_mut(&mut self, i: usize, j: usize) -> &mut T {
        &mut self.data[i * self.cols + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `Aᵀx`
    pub fn t_matvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.rows);
        let mut out = vec![T::zero(); self.cols];
        for (i, &xi) in x.iter().enumerate() {
            if xi == T::zero() {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * xi;
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// `AᵀA`, computed entry-wise from rows of `Aᵀ`, so the result is
    /// independent of thread scheduling.
    pub fn gram(&self) -> Self {
        let at = self.transpose();
        let n = self.cols;
        let mut data = vec![T::zero(); n * n];
        data.par_chunks_mut(n).enumerate().for_each(|(i, out)| {
            let ri = at.row(i);
            for (j, o) in out.iter_mut().enumerate() {
                *o = dot(ri, at.row(j));
            }
        });
        Self {
            rows: n,
            cols: n,
            data,
        }
    }

    pub fn select_columns(&self, cols: &[usize]) -> Self {
        Self::from_fn(self.rows, cols.len(), |i, k| self.get(i, cols[k]))
    }

    pub fn scale(&mut self, s: T) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn add_diagonal(&mut self, s: T) {
        for i in 0..self.rows.min(self.cols) {
            *self.get_mut(i, i) += s;
        }
    }

    pub fn trace(&self) -> T {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        self.rows == self.cols
            && (0..self.rows)
                .all(|i| (0..i).all(|j| (self.get(i, j) - self.get(j, i)).abs() <= tol))
    }
}

/// Dense `LLᵀ` factorization, lower factor stored row-major.
#[derive(Clone, Debug)]
pub struct DenseCholesky<T> {
    n: usize,
    l: Vec<T>,
}

impl<T: Real> DenseCholesky<T> {
    pub fn factor(a: &DenseMatrix<T>) -> Result<Self> {
        check_len("cholesky: square matrix", a.rows(), a.cols())?;
        let n = a.rows();
        let mut l = vec![T::zero(); n * n];
        for i in 0..n {
            let (done, rest) = l.split_at_mut(i * n);
            let li = &mut rest[..n];
            for j in 0..i {
                let lj = &done[j * n..j * n + n];
                let s = a.get(i, j) - dot(&li[..j], &lj[..j]);
                li[j] = s / lj[j];
            }
            let d = a.get(i, i) - dot(&li[..i], &li[..i]);
            if !(d > T::zero()) {
                return Err(EitError::NotPositiveDefinite {
                    row: i,
                    pivot: d.to_f64_lossy(),
                });
            }
            li[i] = d.sqrt();
        }
        Ok(Self { n, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_in_place(&self, x: &mut [T]) {
        let n = self.n;
        assert_eq!(x.len(), n);
        for i in 0..n {
            let row = &self.l[i * n..i * n + n];
            let s = x[i] - dot(&row[..i], &x[..i]);
            x[i] = s / row[i];
        }
        for i in (0..n).rev() {
            let row = &self.l[i * n..i * n + n];
            x[i] /= row[i];
            let xi = x[i];
            for (xk, &lik) in x[..i].iter_mut().zip(&row[..i]) {
                *xk -= lik * xi;
            }
        }
    }

    /// Smallest and largest diagonal entry of the factor.
    pub fn diagonal_range(&self) -> (T, T) {
        (0..self.n).fold((T::infinity(), T::zero()), |(lo, hi), i| {
            let d = self.l[i * self.n + i];
            (lo.min(d), hi.max(d))
        })
    }
}

/// Reverse Cuthill-McKee ordering of a symmetric sparsity pattern.
///
/// Returns `perm` with `perm[new] = old`.
pub fn reverse_cuthill_mckee(adjacency: &[Vec<usize>]) -> Vec<usize> {
    let n = adjacency.len();
    let degree: Vec<usize> = adjacency.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);

    while order.len() < n {
        let seed = (0..n)
            .filter(|&v| !visited[v])
            .min_by_key(|&v| (degree[v], v))
            .unwrap();
        let start = pseudo_peripheral(adjacency, seed);
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adjacency[v]
                .iter()
                .copied()
                .filter(|&w| !visited[w])
                .collect();
            next.sort_by_key(|&w| (degree[w], w));
            for w in next {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

fn bfs_levels(adjacency: &[Vec<usize>], start: usize) -> (Vec<usize>, usize) {
    let mut level = vec![usize::MAX; adjacency.len()];
    level[start] = 0;
    let mut queue = VecDeque::from([start]);
    let mut last = start;
    while let Some(v) = queue.pop_front() {
        last = v;
        for &w in &adjacency[v] {
            if level[w] == usize::MAX {
                level[w] = level[v] + 1;
                queue.push_back(w);
            }
        }
    }
    (level, last)
}

fn pseudo_peripheral(adjacency: &[Vec<usize>], seed: usize) -> usize {
    let mut current = seed;
    let mut ecc = 0;
    for _ in 0..8 {
        let (level, _) = bfs_levels(adjacency, current);
        let depth = level
            .iter()
            .filter(|&&l| l != usize::MAX)
            .max()
            .copied()
            .unwrap_or(0);
        if depth <= ecc && current != seed {
            break;
        }
        ecc = depth;
        let candidate = (0..adjacency.len())
            .filter(|&v| level[v] == depth)
            .min_by_key(|&v| (adjacency[v].len(), v))
            .unwrap();
        if candidate == current {
            break;
        }
        current = candidate;
    }
    current
}

/// Envelope (skyline) Cholesky factorization of a sparse SPD matrix.
///
/// The matrix is reordered with reverse Cuthill-McKee before factoring; row
/// `i` of the factor stores columns `first[i]..=i` contiguously.
#[derive(Clone, Debug)]
pub struct SkylineCholesky<T> {
    perm: Vec<usize>,
    first: Vec<usize>,
    offset: Vec<usize>,
    values: Vec<T>,
}

impl<T: Real> SkylineCholesky<T> {
    pub fn factor(a: &CsrMatrix<T>) -> Result<Self> {
        check_len("skyline cholesky: square matrix", a.rows(), a.cols())?;
        let n = a.rows();
        let adjacency: Vec<Vec<usize>> = (0..n)
            .map(|r| a.row(r).map(|(c, _)| c).filter(|&c| c != r).collect())
            .collect();
        let perm = reverse_cuthill_mckee(&adjacency);
        let mut inverse = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }

        let mut first: Vec<usize> = (0..n).collect();
        for (new, &old) in perm.iter().enumerate() {
            for (c, _) in a.row(old) {
                let nc = inverse[c];
                if nc < first[new] {
                    first[new] = nc;
                }
            }
        }
        let mut offset = Vec::with_capacity(n + 1);
        offset.push(0);
        for i in 0..n {
            offset.push(offset[i] + (i - first[i] + 1));
        }
        let mut values = vec![T::zero(); offset[n]];
        for (new, &old) in perm.iter().enumerate() {
            for (c, v) in a.row(old) {
                let nc = inverse[c];
                if nc <= new {
                    values[offset[new] + nc - first[new]] = v;
                }
            }
        }

        for i in 0..n {
            let fi = first[i];
            for j in fi..i {
                let fj = first[j];
                let k0 = fi.max(fj);
                let (head, tail) = values.split_at_mut(offset[i]);
                let row_j = &head[offset[j]..offset[j + 1]];
                let row_i = &mut tail[..offset[i + 1] - offset[i]];
                let s = row_i[j - fi] - dot(&row_i[k0 - fi..j - fi], &row_j[k0 - fj..j - fj]);
                row_i[j - fi] = s / row_j[j - fj];
            }
            let row_i = &mut values[offset[i]..offset[i + 1]];
            let len = i - fi;
            let d = row_i[len] - dot(&row_i[..len], &row_i[..len]);
            if !(d > T::zero()) {
                return Err(EitError::NotPositiveDefinite {
                    row: perm[i],
                    pivot: d.to_f64_lossy(),
                });
            }
            row_i[len] = d.sqrt();
        }
        Ok(Self {
            perm,
            first,
            offset,
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    /// Stored entries of the factor (envelope size).
    pub fn envelope_size(&self) -> usize {
        self.values.len()
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.dim();
        assert_eq!(b.len(), n);
        let mut y: Vec<T> = self.perm.iter().map(|&old| b[old]).collect();
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.values[self.offset[i]..self.offset[i + 1]];
            let len = i - fi;
            let s = y[i] - dot(&row[..len], &y[fi..i]);
            y[i] = s / row[len];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let row = &self.values[self.offset[i]..self.offset[i + 1]];
            let len = i - fi;
            y[i] /= row[len];
            let yi = y[i];
            for (yk, &lik) in y[fi..i].iter_mut().zip(&row[..len]) {
                *yk -= lik * yi;
            }
        }
        let mut x = vec![T::zero(); n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }
}
