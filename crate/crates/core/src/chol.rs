//! Sparse Cholesky factorization for symmetric positive definite matrices.
//!
//! The symbolic analysis (fill-reducing ordering, elimination tree, factor
//! pattern) is computed once per sparsity pattern and reused across numeric
//! refactorizations, which is the dominant use here: the latent precision is
//! refactorized at many hyperparameter values on a fixed pattern.
//!
//! Factorization is the simplicial up-looking algorithm; the ordering is
//! reverse Cuthill-McKee, which keeps profiles small on mesh-structured
//! patterns. `selected_inverse` implements the Takahashi recursions on the
//! factor pattern, yielding exact posterior marginal variances (and
//! covariances between pattern neighbors) without forming a dense inverse.

use crate::sparse::SparseSym;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CholError {
    #[error("matrix is not positive definite (pivot {0} is {1})")]
    NotPositiveDefinite(usize, f64),
    #[error("dimension mismatch: expected {0}, got {1}")]
    DimensionMismatch(usize, usize),
    #[error("pattern mismatch: matrix entry ({0}, {1}) outside analyzed pattern")]
    PatternMismatch(usize, usize),
}

/// Reverse Cuthill-McKee ordering of a symmetric pattern.
///
/// Returns `perm` with `perm[new] = old`. Deterministic: BFS levels sort
/// neighbors by (degree, index) and components start from a pseudo-peripheral
/// vertex found by repeated BFS from the minimum-degree vertex.
pub fn reverse_cuthill_mckee(n: usize, upper_pattern: &[(usize, usize)]) -> Vec<usize> {
    let mut adj = vec![Vec::new(); n];
    for &(i, j) in upper_pattern {
        if i != j {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    for a in &mut adj {
        a.sort_unstable();
        a.dedup();
    }
    let degree: Vec<usize> = adj.iter().map(|a| a.len()).collect();

    let bfs = |start: usize, visited: &mut [bool], order: &mut Vec<usize>| -> usize {
        let base = order.len();
        visited[start] = true;
        order.push(start);
        let mut head = base;
        let mut last = start;
        while head < order.len() {
            let u = order[head];
            head += 1;
            let mut nbrs: Vec<usize> = adj[u].iter().copied().filter(|&v| !visited[v]).collect();
            nbrs.sort_by_key(|&v| (degree[v], v));
            for v in nbrs {
                if !visited[v] {
                    visited[v] = true;
                    order.push(v);
                    last = v;
                }
            }
        }
        last
    };

    let mut order = Vec::with_capacity(n);
    let mut visited = vec![false; n];
    loop {
        // Lowest-degree unvisited vertex starts the next component.
        let mut start = usize::MAX;
        for v in 0..n {
            if !visited[v] && (start == usize::MAX || degree[v] < degree[start]) {
                start = v;
            }
        }
        if start == usize::MAX {
            break;
        }
        // One BFS pass to find a pseudo-peripheral start, then the real pass.
        let mut scratch_visited = visited.clone();
        let mut scratch_order = Vec::new();
        let far = bfs(start, &mut scratch_visited, &mut scratch_order);
        bfs(far, &mut visited, &mut order);
    }
    order.reverse();
    order
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ordering {
    Natural,
    ReverseCuthillMckee,
}

/// Symbolic Cholesky analysis of a fixed symmetric pattern.
#[derive(Debug, Clone)]
pub struct SymbolicChol {
    n: usize,
    /// perm[new] = old
    perm: Vec<usize>,
    /// iperm[old] = new
    iperm: Vec<usize>,
    parent: Vec<usize>,
    /// Column pointers of L.
    lp: Vec<usize>,
    /// Upper-triangular CSC pattern of the permuted matrix: for each permuted
    /// column k, the permuted rows i <= k, sorted.
    a_colptr: Vec<usize>,
    a_rowidx: Vec<usize>,
    /// Scatter map: position in (a_colptr, a_rowidx) for each original upper
    /// entry, in the order SparseSym stores them.
    scatter: Vec<usize>,
    /// The analyzed upper pattern in SparseSym order, used to verify that a
    /// refactorization input has the same pattern.
    pattern: Vec<(usize, usize)>,
}

const NONE: usize = usize::MAX;

impl SymbolicChol {
    pub fn analyze(matrix: &SparseSym, ordering: Ordering) -> SymbolicChol {
        let n = matrix.dim();
        let pattern = matrix.pattern();
        let perm = match ordering {
            Ordering::Natural => (0..n).collect::<Vec<_>>(),
            Ordering::ReverseCuthillMckee => reverse_cuthill_mckee(n, &pattern),
        };
        let mut iperm = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }

        // Permuted upper-triangular pattern, and the scatter map from the
        // original entry order into it.
        let entries = matrix.entries();
        let mut cols: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n]; // (row, orig entry idx)
        for (idx, &(i, j, _)) in entries.iter().enumerate() {
            let (pi, pj) = (iperm[i], iperm[j]);
            let (r, c) = if pi <= pj { (pi, pj) } else { (pj, pi) };
            cols[c].push((r, idx));
        }
        let mut a_colptr = vec![0usize; n + 1];
        let mut a_rowidx = Vec::with_capacity(entries.len());
        let mut scatter = vec![0usize; entries.len()];
        for (c, col) in cols.iter_mut().enumerate() {
            col.sort_unstable();
            for &(r, idx) in col.iter() {
                scatter[idx] = a_rowidx.len();
                a_rowidx.push(r);
            }
            a_colptr[c + 1] = a_rowidx.len();
        }

        // Elimination tree of the permuted matrix (upper-triangular access).
        let mut parent = vec![NONE; n];
        let mut ancestor = vec![NONE; n];
        for k in 0..n {
            for p in a_colptr[k]..a_colptr[k + 1] {
                let mut i = a_rowidx[p];
                while i != NONE && i < k {
                    let next = ancestor[i];
                    ancestor[i] = k;
                    if next == NONE {
                        parent[i] = k;
                        i = NONE;
                    } else {
                        i = next;
                    }
                }
            }
        }

        // Column counts of L by running the row-subtree traversal once.
        let mut counts = vec![1usize; n]; // diagonal
        let mut mark = vec![NONE; n];
        for k in 0..n {
            mark[k] = k;
            for p in a_colptr[k]..a_colptr[k + 1] {
                let mut i = a_rowidx[p];
                while i != NONE && i < k && mark[i] != k {
                    counts[i] += 1;
                    mark[i] = k;
                    i = parent[i];
                }
            }
        }
        let mut lp = vec![0usize; n + 1];
        for k in 0..n {
            lp[k + 1] = lp[k] + counts[k];
        }

        SymbolicChol {
            n,
            perm,
            iperm,
            parent,
            lp,
            a_colptr,
            a_rowidx,
            scatter,
            pattern,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz_factor(&self) -> usize {
        self.lp[self.n]
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }
}

/// Numeric Cholesky factor L with P A P' = L L'.
#[derive(Debug, Clone)]
pub struct CholFactor {
    n: usize,
    perm: Vec<usize>,
    iperm: Vec<usize>,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
}

impl CholFactor {
    /// Numeric factorization reusing a symbolic analysis. The matrix pattern
    /// must be contained in the analyzed pattern (values may differ).
    pub fn factorize(sym: &SymbolicChol, matrix: &SparseSym) -> Result<CholFactor, CholError> {
        let n = sym.n;
        if matrix.dim() != n {
            return Err(CholError::DimensionMismatch(n, matrix.dim()));
        }
        let entries = matrix.entries();
        if entries.len() != sym.scatter.len() {
            return Err(CholError::PatternMismatch(entries.len(), sym.scatter.len()));
        }
        for (e, &(pi, pj)) in entries.iter().zip(&sym.pattern) {
            if (e.0, e.1) != (pi, pj) {
                return Err(CholError::PatternMismatch(e.0, e.1));
            }
        }
        // Permuted upper-triangular values aligned with sym.a_rowidx.
        let mut ax = vec![0.0f64; sym.a_rowidx.len()];
        for (idx, &(_, _, v)) in entries.iter().enumerate() {
            ax[sym.scatter[idx]] = v;
        }

        let lp = sym.lp.clone();
        let mut li = vec![0usize; lp[n]];
        let mut lx = vec![0.0f64; lp[n]];
        // next free slot per column (slot lp[k] is the diagonal, written when
        // row k is processed).
        let mut cfree: Vec<usize> = lp[..n].iter().map(|&p| p + 1).collect();

        let mut x = vec![0.0f64; n];
        let mut mark = vec![NONE; n];
        let mut stack = vec![0usize; n];
        let mut reach = vec![0usize; n];

        for k in 0..n {
            // ereach: pattern of row k of L, topological order in reach[top..n].
            let mut top = n;
            mark[k] = k;
            let (cs, ce) = (sym.a_colptr[k], sym.a_colptr[k + 1]);
            for p in cs..ce {
                let mut i = sym.a_rowidx[p];
                x[i] = ax[p];
                if i == k {
                    continue;
                }
                let mut len = 0;
                while mark[i] != k {
                    stack[len] = i;
                    len += 1;
                    mark[i] = k;
                    i = sym.parent[i];
                }
                while len > 0 {
                    len -= 1;
                    top -= 1;
                    reach[top] = stack[len];
                }
            }
            let mut d = x[k];
            x[k] = 0.0;
            for t in top..n {
                let i = reach[t];
                let lii = lx[lp[i]];
                let lki = x[i] / lii;
                x[i] = 0.0;
                for p in (lp[i] + 1)..cfree[i] {
                    x[li[p]] -= lx[p] * lki;
                }
                d -= lki * lki;
                let p = cfree[i];
                cfree[i] += 1;
                li[p] = k;
                lx[p] = lki;
            }
            if !(d > 0.0) {
                return Err(CholError::NotPositiveDefinite(k, d));
            }
            li[lp[k]] = k;
            lx[lp[k]] = d.sqrt();
        }

        Ok(CholFactor {
            n,
            perm: sym.perm.clone(),
            iperm: sym.iperm.clone(),
            lp,
            li,
            lx,
        })
    }

    /// One-shot analyze + factorize with RCM ordering.
    pub fn new(matrix: &SparseSym) -> Result<CholFactor, CholError> {
        let sym = SymbolicChol::analyze(matrix, Ordering::ReverseCuthillMckee);
        CholFactor::factorize(&sym, matrix)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// log det A = 2 sum log L_ii.
    pub fn log_det(&self) -> f64 {
        (0..self.n).map(|k| self.lx[self.lp[k]].ln()).sum::<f64>() * 2.0
    }

    fn forward(&self, y: &mut [f64]) {
        for j in 0..self.n {
            let yj = y[j] / self.lx[self.lp[j]];
            y[j] = yj;
            for p in (self.lp[j] + 1)..self.lp[j + 1] {
                y[self.li[p]] -= self.lx[p] * yj;
            }
        }
    }

    fn backward(&self, y: &mut [f64]) {
        for j in (0..self.n).rev() {
            let mut acc = y[j];
            for p in (self.lp[j] + 1)..self.lp[j + 1] {
                acc -= self.lx[p] * y[self.li[p]];
            }
            y[j] = acc / self.lx[self.lp[j]];
        }
    }

    /// Solves A x = b.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let mut y: Vec<f64> = (0..self.n).map(|i| b[self.perm[i]]).collect();
        self.forward(&mut y);
        self.backward(&mut y);
        let mut x = vec![0.0; self.n];
        for i in 0..self.n {
            x[self.perm[i]] = y[i];
        }
        x
    }

    /// Maps iid standard normals z (original indexing) to a draw
    /// x ~ N(0, A^{-1}) via L' u = Pz, x = P'u. With A = I this returns z
    /// unchanged regardless of the internal ordering.
    pub fn sample_zero_mean(&self, z: &[f64]) -> Vec<f64> {
        assert_eq!(z.len(), self.n);
        let mut u: Vec<f64> = (0..self.n).map(|i| z[self.perm[i]]).collect();
        self.backward(&mut u);
        let mut x = vec![0.0; self.n];
        for i in 0..self.n {
            x[self.perm[i]] = u[i];
        }
        x
    }

    /// Takahashi selected inverse: all entries of A^{-1} on the (symmetric)
    /// pattern of the factor. Returns the diagonal in original ordering plus
    /// an accessor structure for pattern entries.
    pub fn selected_inverse(&self) -> SelectedInverse {
        let n = self.n;
        // Full symmetric pattern of L + L' in CSC, with lower/upper halves.
        let mut count = vec![0usize; n];
        for j in 0..n {
            for p in self.lp[j]..self.lp[j + 1] {
                let i = self.li[p];
                count[j] += 1;
                if i != j {
                    count[i] += 1;
                }
            }
        }
        let mut zp = vec![0usize; n + 1];
        for j in 0..n {
            zp[j + 1] = zp[j] + count[j];
        }
        let nnz = zp[n];
        let mut zi = vec![0usize; nnz];
        let mut head: Vec<usize> = zp[..n].to_vec();
        for j in 0..n {
            for p in self.lp[j]..self.lp[j + 1] {
                let i = self.li[p];
                zi[head[j]] = i;
                head[j] += 1;
                if i != j {
                    zi[head[i]] = j;
                    head[i] += 1;
                }
            }
        }
        // Sort each column's row indices (lower part was appended in order,
        // upper part arrives ordered by j loop; merge by sorting).
        let mut zorder: Vec<usize> = (0..nnz).collect();
        {
            let mut col_of = vec![0usize; nnz];
            for j in 0..n {
                for p in zp[j]..zp[j + 1] {
                    col_of[p] = j;
                }
            }
            zorder.sort_by_key(|&p| (col_of[p], zi[p]));
        }
        let zi: Vec<usize> = zorder.iter().map(|&p| zi[p]).collect();
        let mut zx = vec![0.0f64; nnz];

        // Unit factor and D from L: Lunit[i][j] = L[i][j]/L[j][j], d[j] = L[j][j]^2.
        let d: Vec<f64> = (0..n).map(|j| self.lx[self.lp[j]] * self.lx[self.lp[j]]).collect();

        // Position lookup within a column via binary search.
        let find = |zp: &[usize], zi: &[usize], col: usize, row: usize| -> usize {
            let (s, e) = (zp[col], zp[col + 1]);
            s + zi[s..e].binary_search(&row).expect("entry on closed pattern")
        };

        // Recursion, permuted indexing, columns high to low:
        //   Z_ij = -sum_{k in L col j, k > j} Lunit_kj Z_ki   (i > j)
        //   Z_jj = 1/d_j - sum_{k in L col j, k > j} Lunit_kj Z_kj
        // where the diagonal uses the freshly computed off-diagonals of
        // column j itself.
        let mut stamp = vec![NONE; n];
        let mut accum = vec![0.0f64; n];
        for j in (0..n).rev() {
            for p in zp[j]..zp[j + 1] {
                let i = zi[p];
                if i > j {
                    stamp[i] = j;
                    accum[i] = 0.0;
                }
            }
            let diag_l = self.lx[self.lp[j]];
            for p in (self.lp[j] + 1)..self.lp[j + 1] {
                let k = self.li[p];
                let lkj = self.lx[p] / diag_l;
                // walk full Z column k (columns > j are complete).
                for q in zp[k]..zp[k + 1] {
                    let r = zi[q];
                    if stamp[r] == j {
                        accum[r] -= lkj * zx[q];
                    }
                }
            }
            for p in zp[j]..zp[j + 1] {
                let i = zi[p];
                if i > j {
                    zx[p] = accum[i];
                    let q = find(&zp, &zi, i, j);
                    zx[q] = accum[i];
                }
            }
            // Diagonal: the lower part of Z column j coincides with L column j,
            // both sorted by row, so walk them together.
            let mut s = 0.0;
            for p in (self.lp[j] + 1)..self.lp[j + 1] {
                let k = self.li[p];
                let lkj = self.lx[p] / diag_l;
                let q = find(&zp, &zi, j, k);
                s += lkj * zx[q];
            }
            let q = find(&zp, &zi, j, j);
            zx[q] = 1.0 / d[j] - s;
        }

        let mut diag = vec![0.0f64; n];
        for jp in 0..n {
            let p = find(&zp, &zi, jp, jp);
            diag[self.perm[jp]] = zx[p];
        }
        SelectedInverse {
            perm_diag: diag,
            iperm: self.iperm.clone(),
            zp,
            zi,
            zx,
        }
    }
}

/// Entries of A^{-1} on the factor pattern (permuted internally).
#[derive(Debug, Clone)]
pub struct SelectedInverse {
    perm_diag: Vec<f64>,
    iperm: Vec<usize>,
    zp: Vec<usize>,
    zi: Vec<usize>,
    zx: Vec<f64>,
}

impl SelectedInverse {
    /// Diagonal of A^{-1}, original ordering.
    pub fn diagonal(&self) -> &[f64] {
        &self.perm_diag
    }

    /// Entry (i, j) of A^{-1} if it lies on the factor pattern.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let (pi, pj) = (self.iperm[i], self.iperm[j]);
        let (s, e) = (self.zp[pj], self.zp[pj + 1]);
        self.zi[s..e]
            .binary_search(&pi)
            .ok()
            .map(|k| self.zx[s + k])
    }
}
