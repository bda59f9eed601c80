//! Sparse symmetric matrices and compressed-column storage.
//!
//! `SparseSym` is the exchange type used by assembly and model code: an
//! n x n symmetric matrix stored as upper-triangle triplets. `Csc` is the
//! working representation for products and factorization.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SparseError {
    #[error("index ({0}, {1}) out of range for dimension {2}")]
    IndexOutOfRange(usize, usize, usize),
    #[error("asymmetric entries at ({0}, {1}): {2} vs {3}")]
    Asymmetric(usize, usize, f64, f64),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
}

/// Symmetric sparse matrix; entries stored once with `row <= col`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSym {
    n: usize,
    /// Sorted by (col, row), deduplicated, upper triangle.
    entries: Vec<(usize, usize, f64)>,
}

impl SparseSym {
    /// Builds from triplets. Entries may be given in either triangle or both;
    /// duplicates are summed. If both `(i,j)` and `(j,i)` are present their
    /// values must agree to 1e-12 relative tolerance and the mean is kept.
    pub fn from_triplets(
        n: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self, SparseError> {
        let mut upper: Vec<(usize, usize, f64)> = Vec::new();
        let mut lower: Vec<(usize, usize, f64)> = Vec::new();
        for (i, j, v) in triplets {
            if i >= n || j >= n {
                return Err(SparseError::IndexOutOfRange(i, j, n));
            }
            if i <= j {
                upper.push((i, j, v));
            } else {
                lower.push((j, i, v));
            }
        }
        let collapse = |mut v: Vec<(usize, usize, f64)>| {
            v.sort_by_key(|&(i, j, _)| (j, i));
            let mut out: Vec<(usize, usize, f64)> = Vec::with_capacity(v.len());
            for (i, j, x) in v {
                match out.last_mut() {
                    Some(last) if last.0 == i && last.1 == j => last.2 += x,
                    _ => out.push((i, j, x)),
                }
            }
            out
        };
        let upper = collapse(upper);
        let lower = collapse(lower);

        // Merge the two triangles, checking the symmetry contract where both sides exist.
        let mut entries = Vec::with_capacity(upper.len().max(lower.len()));
        let (mut a, mut b) = (0, 0);
        while a < upper.len() || b < lower.len() {
            let pick_upper = match (upper.get(a), lower.get(b)) {
                (Some(u), Some(l)) => {
                    if (u.1, u.0) == (l.1, l.0) {
                        let (i, j, vu) = *u;
                        let vl = l.2;
                        let scale = vu.abs().max(vl.abs()).max(1e-300);
                        if (vu - vl).abs() > 1e-12 * scale {
                            return Err(SparseError::Asymmetric(i, j, vu, vl));
                        }
                        entries.push((i, j, 0.5 * (vu + vl)));
                        a += 1;
                        b += 1;
                        continue;
                    }
                    (u.1, u.0) < (l.1, l.0)
                }
                (Some(_), None) => true,
                (None, Some(_)) => false,
                (None, None) => break,
            };
            if pick_upper {
                entries.push(upper[a]);
                a += 1;
            } else {
                entries.push(lower[b]);
                b += 1;
            }
        }
        entries.retain(|&(_, _, v)| v != 0.0);
        Ok(SparseSym { n, entries })
    }

    /// Constructs from entries already sorted by (col, row), deduplicated,
    /// upper triangle. Explicit zeros are preserved, which keeps a fixed
    /// pattern across repeated evaluations with different values.
    pub fn from_sorted_upper(n: usize, entries: Vec<(usize, usize, f64)>) -> Self {
        debug_assert!(entries.windows(2).all(|w| (w[0].1, w[0].0) < (w[1].1, w[1].0)));
        debug_assert!(entries.iter().all(|&(i, j, _)| i <= j && j < n));
        SparseSym { n, entries }
    }

    pub fn diag(values: &[f64]) -> Self {
        SparseSym {
            n: values.len(),
            entries: values
                .iter()
                .enumerate()
                .filter(|(_, &v)| v != 0.0)
                .map(|(i, &v)| (i, i, v))
                .collect(),
        }
    }

    pub fn identity(n: usize) -> Self {
        SparseSym::diag(&vec![1.0; n])
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Upper-triangle entries, sorted by (col, row).
    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn nnz_upper(&self) -> usize {
        self.entries.len()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for &(i, j, v) in &self.entries {
            if i == j {
                d[i] = v;
            }
        }
        d
    }

    /// a*self + b*other, requiring equal dimensions.
    pub fn add_scaled(&self, a: f64, other: &SparseSym, b: f64) -> Result<SparseSym, SparseError> {
        if self.n != other.n {
            return Err(SparseError::DimensionMismatch(self.n, other.n));
        }
        let it = self
            .entries
            .iter()
            .map(|&(i, j, v)| (i, j, a * v))
            .chain(other.entries.iter().map(|&(i, j, v)| (i, j, b * v)));
        SparseSym::from_triplets(self.n, it)
    }

    pub fn scaled(&self, a: f64) -> SparseSym {
        SparseSym {
            n: self.n,
            entries: self.entries.iter().map(|&(i, j, v)| (i, j, a * v)).collect(),
        }
    }

    /// Full (both triangles) CSC expansion.
    pub fn to_csc(&self) -> Csc {
        let mut triplets = Vec::with_capacity(2 * self.entries.len());
        for &(i, j, v) in &self.entries {
            triplets.push((i, j, v));
            if i != j {
                triplets.push((j, i, v));
            }
        }
        Csc::from_triplets(self.n, self.n, &triplets)
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.n, self.n);
        for &(i, j, v) in &self.entries {
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
        m
    }

    /// y = A x with symmetric expansion.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![0.0; self.n];
        for &(i, j, v) in &self.entries {
            y[i] += v * x[j];
            if i != j {
                y[j] += v * x[i];
            }
        }
        y
    }

    /// Quadratic form x' A x.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for &(i, j, v) in &self.entries {
            acc += if i == j { v * x[i] * x[i] } else { 2.0 * v * x[i] * x[j] };
        }
        acc
    }

    /// Sorted upper-triangle pattern (row <= col), values ignored.
    pub fn pattern(&self) -> Vec<(usize, usize)> {
        self.entries.iter().map(|&(i, j, _)| (i, j)).collect()
    }

    /// Symmetric congruence with a diagonal: A -> A scaled as G D G needs
    /// products; this helper only scales rows and columns: D A D.
    pub fn scale_sym_diag(&self, d: &[f64]) -> SparseSym {
        assert_eq!(d.len(), self.n);
        SparseSym {
            n: self.n,
            entries: self
                .entries
                .iter()
                .map(|&(i, j, v)| (i, j, d[i] * v * d[j]))
                .collect(),
        }
    }
}

/// Compressed sparse column matrix (general, not necessarily symmetric).
#[derive(Debug, Clone)]
pub struct Csc {
    pub nrows: usize,
    pub ncols: usize,
    pub colptr: Vec<usize>,
    pub rowidx: Vec<usize>,
    pub values: Vec<f64>,
}

impl Csc {
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Csc {
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        order.sort_by_key(|&k| (triplets[k].1, triplets[k].0));
        let mut colptr = vec![0usize; ncols + 1];
        let mut rowidx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        for &k in &order {
            let (i, j, v) = triplets[k];
            assert!(i < nrows && j < ncols, "triplet out of range");
            colptr[j + 1] += 1;
            rowidx.push(i);
            values.push(v);
        }
        for j in 0..ncols {
            colptr[j + 1] += colptr[j];
        }
        // Sum duplicates in place (entries are sorted within each column).
        let mut out_rowidx = Vec::with_capacity(rowidx.len());
        let mut out_values = Vec::with_capacity(values.len());
        let mut out_colptr = vec![0usize; ncols + 1];
        for j in 0..ncols {
            let (s, e) = (colptr[j], colptr[j + 1]);
            let mut k = s;
            while k < e {
                let i = rowidx[k];
                let mut v = values[k];
                let mut k2 = k + 1;
                while k2 < e && rowidx[k2] == i {
                    v += values[k2];
                    k2 += 1;
                }
                out_rowidx.push(i);
                out_values.push(v);
                k = k2;
            }
            out_colptr[j + 1] = out_rowidx.len();
        }
        Csc {
            nrows,
            ncols,
            colptr: out_colptr,
            rowidx: out_rowidx,
            values: out_values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.rowidx.len()
    }

    pub fn col(&self, j: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.colptr[j], self.colptr[j + 1]);
        (&self.rowidx[s..e], &self.values[s..e])
    }

    /// C = A * B.
    pub fn matmul(&self, other: &Csc) -> Csc {
        assert_eq!(self.ncols, other.nrows);
        let nrows = self.nrows;
        let ncols = other.ncols;
        let mut colptr = vec![0usize; ncols + 1];
        let mut rowidx: Vec<usize> = Vec::new();
        let mut values: Vec<f64> = Vec::new();
        let mut mark = vec![usize::MAX; nrows];
        let mut dense = vec![0.0f64; nrows];
        let mut cols_here: Vec<usize> = Vec::new();
        for j in 0..ncols {
            cols_here.clear();
            let (bi, bv) = other.col(j);
            for (&k, &bkj) in bi.iter().zip(bv) {
                let (ai, av) = self.col(k);
                for (&i, &aik) in ai.iter().zip(av) {
                    if mark[i] != j {
                        mark[i] = j;
                        dense[i] = 0.0;
                        cols_here.push(i);
                    }
                    dense[i] += aik * bkj;
                }
            }
            cols_here.sort_unstable();
            for &i in &cols_here {
                rowidx.push(i);
                values.push(dense[i]);
            }
            colptr[j + 1] = rowidx.len();
        }
        Csc {
            nrows,
            ncols,
            colptr,
            rowidx,
            values,
        }
    }

    /// Scales column j by d[j] (i.e. A * diag(d)).
    pub fn scale_cols(&self, d: &[f64]) -> Csc {
        assert_eq!(d.len(), self.ncols);
        let mut out = self.clone();
        for j in 0..self.ncols {
            for k in self.colptr[j]..self.colptr[j + 1] {
                out.values[k] *= d[j];
            }
        }
        out
    }

    /// Extracts the symmetric view (must be structurally and numerically
    /// symmetric; callers use this after symmetric products).
    pub fn to_sparse_sym(&self) -> Result<SparseSym, SparseError> {
        assert_eq!(self.nrows, self.ncols);
        let mut triplets = Vec::with_capacity(self.nnz());
        for j in 0..self.ncols {
            let (ri, rv) = self.col(j);
            for (&i, &v) in ri.iter().zip(rv) {
                triplets.push((i, j, v));
            }
        }
        SparseSym::from_triplets(self.nrows, triplets)
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.nrows, self.ncols);
        for j in 0..self.ncols {
            let (ri, rv) = self.col(j);
            for (&i, &v) in ri.iter().zip(rv) {
                m[(i, j)] += v;
            }
        }
        m
    }
}
