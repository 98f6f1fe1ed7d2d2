//! Sparse kernels and direct factorizations shared by the solvers.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CscMatrix, CsrMatrix};

use crate::error::{Error, Result};

pub type Csr = CsrMatrix<f64>;

/// `y = A·x`.
pub fn spmv(a: &Csr, x: &DVector<f64>) -> DVector<f64> {
    let mut y = DVector::zeros(a.nrows());
    spmv_into(a, x, &mut y);
    y
}

pub fn spmv_into(a: &Csr, x: &DVector<f64>, y: &mut DVector<f64>) {
    let offs = a.row_offsets();
    let cols = a.col_indices();
    let vals = a.values();
    for (r, yr) in y.iter_mut().enumerate() {
        let mut s = 0.0;
        for k in offs[r]..offs[r + 1] {
            s += vals[k] * x[cols[k]];
        }
        *yr = s;
    }
}

/// `y = Aᵀ·x`.
pub fn spmv_t(a: &Csr, x: &DVector<f64>) -> DVector<f64> {
    let mut y = DVector::zeros(a.ncols());
    let offs = a.row_offsets();
    let cols = a.col_indices();
    let vals = a.values();
    for r in 0..a.nrows() {
        let xr = x[r];
        if xr == 0.0 {
            continue;
        }
        for k in offs[r]..offs[r + 1] {
            y[cols[k]] += vals[k] * xr;
        }
    }
    y
}

pub fn diagonal(a: &Csr) -> DVector<f64> {
    let mut d = DVector::zeros(a.nrows());
    for (r, row) in a.row_iter().enumerate() {
        if let Some(v) = row.get_entry(r) {
            d[r] = v.into_value();
        }
    }
    d
}

pub fn to_dense(a: &Csr) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(a.nrows(), a.ncols());
    for (r, c, v) in a.triplet_iter() {
        m[(r, c)] += *v;
    }
    m
}

/// Max absolute row sum.
pub fn norm_inf(a: &Csr) -> f64 {
    a.row_iter()
        .map(|r| r.values().iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `(A + Aᵀ)/2`.
pub fn symmetrize(a: &Csr) -> Csr {
    let at = a.transpose();
    let s = a + &at;
    scale(&s, 0.5)
}

pub fn scale(a: &Csr, s: f64) -> Csr {
    let mut out = a.clone();
    out.values_mut().iter_mut().for_each(|v| *v *= s);
    out
}

/// `Pᵀ·A·P`, symmetrized to remove roundoff asymmetry.
pub fn galerkin(a: &Csr, p: &Csr) -> Csr {
    let ap = a * p;
    let pt = p.transpose();
    symmetrize(&(&pt * &ap))
}

/// Drop explicit entries with `|v| <= tol`.
pub fn drop_small(a: &Csr, tol: f64) -> Csr {
    let mut offs = Vec::with_capacity(a.nrows() + 1);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    offs.push(0);
    for row in a.row_iter() {
        for (c, v) in row.col_indices().iter().zip(row.values()) {
            if v.abs() > tol {
                cols.push(*c);
                vals.push(*v);
            }
        }
        offs.push(cols.len());
    }
    Csr::try_from_csr_data(a.nrows(), a.ncols(), offs, cols, vals).expect("valid CSR")
}

/// Two-phase CSR assembly: the sparsity pattern is fixed first, values are
/// then accumulated in place.
pub struct CsrAccumulator {
    nrows: usize,
    ncols: usize,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

/// Row-wise pattern collector for [`CsrAccumulator`].
pub struct PatternBuilder {
    ncols: usize,
    rows: Vec<Vec<usize>>,
}

impl PatternBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            ncols,
            rows: vec![Vec::new(); nrows],
        }
    }

    pub fn add_block(&mut self, rows: &[usize], cols: &[usize]) {
        for &r in rows {
            self.rows[r].extend_from_slice(cols);
        }
    }

    pub fn add(&mut self, r: usize, c: usize) {
        self.rows[r].push(c);
    }

    pub fn finish(self) -> CsrAccumulator {
        let nrows = self.rows.len();
        let mut offsets = Vec::with_capacity(nrows + 1);
        let mut cols = Vec::new();
        offsets.push(0);
        for mut r in self.rows {
            r.sort_unstable();
            r.dedup();
            cols.extend_from_slice(&r);
            offsets.push(cols.len());
        }
        let vals = vec![0.0; cols.len()];
        CsrAccumulator {
            nrows,
            ncols: self.ncols,
            offsets,
            cols,
            vals,
        }
    }
}

impl CsrAccumulator {
    /// Add `v` at `(r, c)`; the entry must be in the pattern.
    pub fn add(&mut self, r: usize, c: usize, v: f64) {
        let lo = self.offsets[r];
        let hi = self.offsets[r + 1];
        let k = lo
            + self.cols[lo..hi]
                .binary_search(&c)
                .unwrap_or_else(|_| panic!("entry ({r}, {c}) not in pattern"));
        self.vals[k] += v;
    }

    pub fn finish(self) -> Csr {
        Csr::try_from_csr_data(self.nrows, self.ncols, self.offsets, self.cols, self.vals)
            .expect("valid CSR")
    }
}

/// Reverse Cuthill-McKee ordering of the (symmetrized) pattern of `a`.
/// Returns `perm` with `perm[new] = old`.
pub fn reverse_cuthill_mckee(a: &Csr) -> Vec<usize> {
    let n = a.nrows();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (r, c, _) in a.triplet_iter() {
        if r != c {
            adj[r].push(c);
            adj[c].push(r);
        }
    }
    for l in adj.iter_mut() {
        l.sort_unstable();
        l.dedup();
    }
    let deg: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&v| (deg[v], v));
    for &start in &by_degree {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        let mut head = order.len();
        order.push(start);
        while head < order.len() {
            let v = order[head];
            head += 1;
            let mut nb: Vec<usize> = adj[v].iter().copied().filter(|&u| !visited[u]).collect();
            nb.sort_by_key(|&u| (deg[u], u));
            for u in nb {
                visited[u] = true;
                order.push(u);
            }
        }
    }
    order.reverse();
    order
}

/// Symmetric permutation `B[i][j] = A[perm[i]][perm[j]]`.
pub fn permute_symmetric(a: &Csr, perm: &[usize]) -> Csr {
    let n = a.nrows();
    let mut inv = vec![0; n];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }
    let mut offs = Vec::with_capacity(n + 1);
    let mut cols = Vec::with_capacity(a.nnz());
    let mut vals = Vec::with_capacity(a.nnz());
    offs.push(0);
    for &old in perm {
        let row = a.row(old);
        let mut entries: Vec<(usize, f64)> = row
            .col_indices()
            .iter()
            .zip(row.values())
            .map(|(c, v)| (inv[*c], *v))
            .collect();
        entries.sort_unstable_by_key(|e| e.0);
        for (c, v) in entries {
            cols.push(c);
            vals.push(v);
        }
        offs.push(cols.len());
    }
    Csr::try_from_csr_data(n, n, offs, cols, vals).expect("valid CSR")
}

/// Sparse Cholesky factorization with a bandwidth-reducing ordering.
pub struct SparseCholesky {
    perm: Vec<usize>,
    factor: CscCholesky<f64>,
}

impl SparseCholesky {
    pub fn new(a: &Csr) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::FactorizationFailure("matrix is not square".into()));
        }
        let perm = reverse_cuthill_mckee(a);
        let pa = permute_symmetric(a, &perm);
        let csc = CscMatrix::from(&pa);
        let factor = CscCholesky::factor(&csc)
            .map_err(|e| Error::FactorizationFailure(format!("sparse Cholesky: {e}")))?;
        Ok(Self { perm, factor })
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let pb = DVector::from_iterator(self.perm.len(), self.perm.iter().map(|&i| b[i]));
        let px = self.factor.solve(&pb);
        let mut x = DVector::zeros(b.len());
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = px[(new, 0)];
        }
        x
    }
}

pub fn write_matrix_market(a: &Csr, path: &Path) -> Result<()> {
    nalgebra_sparse::io::save_to_matrix_market_file(a, path)
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

/// One decimal per line.
pub fn write_vector(v: &DVector<f64>, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for x in v.iter() {
        writeln!(f, "{x:.17e}")?;
    }
    f.flush()?;
    Ok(())
}
