//! Geometric multigrid over the hierarchy of enriched spaces.
//!
//! Consecutive enriched spaces are not nested (active meshes change with
//! the level), so prolongation is a pseudo-L² projection assembled with the
//! fine level's cut quadrature.

use std::cell::RefCell;
use std::io::Write;

use nalgebra::{DVector, Matrix4};
use serde::{Deserialize, Serialize};

use crate::assembly::Level;
use crate::error::{Error, Result};
use crate::linalg::{self, Csr, SparseCholesky};
use crate::mesh::MATRIX;
use crate::saddle::PrimalSolver;
use crate::space::{local_coords, shape};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TransferKind {
    /// Test functions biorthogonal to the fine basis on each fine element.
    #[default]
    DualBasis,
    /// Standard fine basis as test functions, lumped fine mass.
    LumpedMass,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CoarseOperator {
    #[default]
    Galerkin,
    Reassembled,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MgOptions {
    pub nu1: usize,
    pub nu2: usize,
    pub transfer: TransferKind,
    pub coarse_operator: CoarseOperator,
    /// Entries below `drop_tol · max|P|` are removed from the transfer.
    pub drop_tol: f64,
    pub max_it: usize,
}

impl Default for MgOptions {
    fn default() -> Self {
        Self {
            nu1: 3,
            nu2: 3,
            transfer: TransferKind::DualBasis,
            coarse_operator: CoarseOperator::Galerkin,
            drop_tol: 1e-12,
            max_it: 500,
        }
    }
}

// Local mass matrices with a condition number above this use the closed form
// of the local projection.
const DUAL_BASIS_COND_LIMIT: f64 = 1e8;

/// Prolongation from `coarse` to `fine` (the uniform refinement, same
/// inclusions). Rows are fine dofs, columns coarse dofs; each subdomain only
/// feeds itself.
pub fn build_transfer(coarse: &Level, fine: &Level, kind: TransferKind, drop_tol: f64) -> Result<Csr> {
    let fm = &fine.mesh;
    let cm = &coarse.mesh;
    if fm.n() != 2 * cm.n() {
        return Err(Error::InvalidInput("fine mesh is not the refinement of the coarse mesh".into()));
    }
    let nsub = fine.space.num_subdomains();
    // per subdomain: fine node index → accumulated (coarse node, value)
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut row_owner: Vec<(usize, usize)> = Vec::new(); // (sub, fine node)
    let mut denom: Vec<f64> = Vec::new();
    for s in 0..nsub {
        let nodes = fine.space.nodes(s);
        let base = rows.len();
        rows.extend(std::iter::repeat_with(Vec::new).take(nodes.len()));
        denom.extend(std::iter::repeat_n(0.0, nodes.len()));
        row_owner.extend(nodes.iter().map(|&n| (s, n)));
        let slot = |node: usize| nodes.binary_search(&node).ok().map(|k| base + k);
        for &e in fine.cls.active(s) {
            let parent = fm.parent(e);
            if !coarse.cls.is_active(s, parent) {
                return Err(Error::EmptySupport {
                    dof: fine.space.element_dofs(e, s).iter().flatten().next().copied().unwrap_or(0),
                });
            }
            let fnodes = fm.element_nodes(e);
            let cnodes = cm.element_nodes(parent);
            let pts = fine.element_points(e, s, 2);
            let mut mass = Matrix4::<f64>::zeros();
            let mut mixed = Matrix4::<f64>::zeros();
            for q in &pts {
                let (xi, eta) = local_coords(fm, e, &q.x);
                let (cx, cy) = local_coords(cm, parent, &q.x);
                let phi = shape(xi, eta);
                let big = shape(cx, cy);
                for a in 0..4 {
                    for b in 0..4 {
                        mass[(a, b)] += q.w * phi[a] * phi[b];
                        mixed[(a, b)] += q.w * phi[a] * big[b];
                    }
                }
            }
            let lumped: [f64; 4] = std::array::from_fn(|a| mass.row(a).sum());
            let numer = match kind {
                TransferKind::LumpedMass => mixed,
                TransferKind::DualBasis => {
                    let ev = mass.symmetric_eigenvalues();
                    let cond = ev.max() / ev.min().max(0.0);
                    let weights = Matrix4::from_diagonal(&lumped.into());
                    match mass.try_inverse() {
                        Some(inv) if cond < DUAL_BASIS_COND_LIMIT => weights * inv * mixed,
                        // Coarse shapes restricted to a fine element are fine
                        // bilinears, so M⁻¹X is the nodal interpolation matrix.
                        _ => {
                            let corners = fm.element_corners(e);
                            weights
                                * Matrix4::from_fn(|a, b| {
                                    let (cx, cy) = local_coords(cm, parent, &corners[a]);
                                    shape(cx, cy)[b]
                                })
                        }
                    }
                }
            };
            for a in 0..4 {
                let Some(r) = slot(fnodes[a]) else { continue };
                denom[r] += lumped[a];
                for b in 0..4 {
                    let v = numer[(a, b)];
                    if v == 0.0 {
                        continue;
                    }
                    match rows[r].iter_mut().find(|p| p.0 == cnodes[b]) {
                        Some(p) => p.1 += v,
                        None => rows[r].push((cnodes[b], v)),
                    }
                }
            }
        }
    }

    let maxval = rows
        .iter()
        .zip(&denom)
        .flat_map(|(r, d)| r.iter().map(move |p| (p.1 / d).abs()))
        .fold(0.0, f64::max);
    let cut = drop_tol * maxval;
    let mut offs = vec![0];
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    for (r, entries) in rows.iter().enumerate() {
        let (s, _) = row_owner[r];
        let mut row: Vec<(usize, usize, f64)> = Vec::new(); // (coarse node, comp placeholder, value)
        for &(cn, v) in entries {
            let v = v / denom[r];
            if v.abs() > cut && coarse.space.dof(s, cn, 0).is_some() {
                row.push((cn, 0, v));
            }
        }
        // two rows (components) per fine node
        for c in 0..2 {
            let mut entries: Vec<(usize, f64)> = row
                .iter()
                .map(|&(cn, _, v)| (coarse.space.dof(s, cn, c).unwrap(), v))
                .collect();
            entries.sort_unstable_by_key(|e| e.0);
            if entries.is_empty() && !(s == MATRIX && fm.node_ij(row_owner[r].1).0 == 0) {
                let dof = fine.space.dof(s, row_owner[r].1, c).unwrap_or(0);
                return Err(Error::EmptySupport { dof });
            }
            for (col, v) in entries {
                cols.push(col);
                vals.push(v);
            }
            offs.push(cols.len());
        }
    }
    Ok(Csr::try_from_csr_data(fine.space.dim(), coarse.space.dim(), offs, cols, vals)
        .expect("valid transfer"))
}

struct MgLevel {
    a: Csr,
    diag: Vec<f64>,
}

/// Matrices, transfers and the coarse factorization; level 0 is coarsest.
pub struct MgHierarchy {
    levels: Vec<MgLevel>,
    transfers: Vec<Csr>,
    coarse: SparseCholesky,
    opts: MgOptions,
}

impl MgHierarchy {
    /// Coarse operators by Galerkin products from the finest matrix.
    pub fn galerkin(finest: Csr, transfers: Vec<Csr>, opts: MgOptions) -> Result<Self> {
        let mut mats = vec![finest];
        for p in transfers.iter().rev() {
            let next = linalg::galerkin(mats.last().unwrap(), p);
            mats.push(next);
        }
        mats.reverse();
        Self::from_matrices(mats, transfers, opts)
    }

    /// Explicit operator per level (coarsest first).
    pub fn from_matrices(mats: Vec<Csr>, transfers: Vec<Csr>, opts: MgOptions) -> Result<Self> {
        if mats.len() != transfers.len() + 1 {
            return Err(Error::InvalidInput("need one transfer between consecutive levels".into()));
        }
        let coarse = SparseCholesky::new(&mats[0])?;
        let levels = mats
            .into_iter()
            .map(|a| {
                let diag = linalg::diagonal(&a).iter().copied().collect();
                MgLevel { a, diag }
            })
            .collect();
        Ok(Self {
            levels,
            transfers,
            coarse,
            opts,
        })
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn matrix(&self, l: usize) -> &Csr {
        &self.levels[l].a
    }

    pub fn finest(&self) -> &Csr {
        &self.levels.last().unwrap().a
    }

    pub fn options(&self) -> &MgOptions {
        &self.opts
    }

    fn gauss_seidel(&self, l: usize, b: &DVector<f64>, x: &mut DVector<f64>, forward: bool) {
        let lv = &self.levels[l];
        let offs = lv.a.row_offsets();
        let cols = lv.a.col_indices();
        let vals = lv.a.values();
        let n = b.len();
        let mut sweep = |i: usize| {
            let mut s = b[i];
            for k in offs[i]..offs[i + 1] {
                let j = cols[k];
                if j != i {
                    s -= vals[k] * x[j];
                }
            }
            x[i] = s / lv.diag[i];
        };
        if forward {
            (0..n).for_each(&mut sweep);
        } else {
            (0..n).rev().for_each(&mut sweep);
        }
    }

    fn cycle(&self, l: usize, b: &DVector<f64>, x: &mut DVector<f64>, nu1: usize, nu2: usize) {
        if l == 0 {
            *x = self.coarse.solve(b);
            return;
        }
        for _ in 0..nu1 {
            self.gauss_seidel(l, b, x, true);
        }
        let r = b - linalg::spmv(&self.levels[l].a, x);
        let p = &self.transfers[l - 1];
        let rc = linalg::spmv_t(p, &r);
        let mut ec = DVector::zeros(rc.len());
        self.cycle(l - 1, &rc, &mut ec, nu1, nu2);
        *x += linalg::spmv(p, &ec);
        for _ in 0..nu2 {
            self.gauss_seidel(l, b, x, false);
        }
    }

    /// One V(ν1, ν2) cycle on the finest level starting from `x`.
    pub fn v_cycle(&self, rhs: &DVector<f64>, x: &mut DVector<f64>, nu1: usize, nu2: usize) {
        self.cycle(self.levels.len() - 1, rhs, x, nu1, nu2);
    }

    /// The preconditioner: one default V-cycle from zero.
    pub fn precondition(&self, r: &DVector<f64>) -> DVector<f64> {
        let mut z = DVector::zeros(r.len());
        self.v_cycle(r, &mut z, self.opts.nu1, self.opts.nu2);
        z
    }
}

/// Per-iteration record of an MG-PCG solve.
#[derive(Clone, Copy, Debug)]
pub struct MgStep {
    pub iteration: usize,
    pub residual: f64,
    pub increment: f64,
}

/// CG on the finest matrix preconditioned with one V-cycle per step,
/// stopped when `‖x^{k+1} − x^k‖_A < tol`.
pub fn mg_pcg(
    h: &MgHierarchy,
    rhs: &DVector<f64>,
    tol: f64,
    max_it: usize,
) -> Result<(DVector<f64>, usize)> {
    mg_pcg_traced(h, rhs, tol, max_it, None)
}

pub fn mg_pcg_traced(
    h: &MgHierarchy,
    rhs: &DVector<f64>,
    tol: f64,
    max_it: usize,
    mut trace: Option<&mut Vec<MgStep>>,
) -> Result<(DVector<f64>, usize)> {
    let a = h.finest();
    let mut x = DVector::zeros(rhs.len());
    if rhs.norm() == 0.0 {
        return Ok((x, 0));
    }
    let mut r = rhs.clone();
    let mut z = h.precondition(&r);
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    let mut last = f64::INFINITY;
    for it in 1..=max_it {
        let q = linalg::spmv(a, &p);
        let pq = p.dot(&q);
        if pq <= 0.0 {
            return Ok((x, it));
        }
        let alpha = rz / pq;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &q, 1.0);
        last = alpha.abs() * pq.sqrt();
        if let Some(t) = trace.as_deref_mut() {
            t.push(MgStep {
                iteration: it,
                residual: r.norm(),
                increment: last,
            });
        }
        if last < tol {
            return Ok((x, it));
        }
        z = h.precondition(&r);
        let rz_new = r.dot(&z);
        p = &z + &p * (rz_new / rz);
        rz = rz_new;
    }
    Err(Error::MaxIterations {
        solver: "mg-pcg",
        iterations: max_it,
        last,
    })
}

pub fn write_history<W: Write>(steps: &[MgStep], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["iteration", "residual", "increment_a_norm"])?;
    for s in steps {
        wr.write_record([
            s.iteration.to_string(),
            format!("{:.6e}", s.residual),
            format!("{:.6e}", s.increment),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// [`PrimalSolver`] backed by MG-PCG.
pub struct MgPcgSolver {
    pub hierarchy: MgHierarchy,
    traces: Option<RefCell<Vec<Vec<MgStep>>>>,
}

impl MgPcgSolver {
    pub fn new(hierarchy: MgHierarchy) -> Self {
        Self {
            hierarchy,
            traces: None,
        }
    }

    /// Keeps the per-iteration history of every solve.
    pub fn traced(hierarchy: MgHierarchy) -> Self {
        Self {
            hierarchy,
            traces: Some(RefCell::new(Vec::new())),
        }
    }

    pub fn take_traces(&self) -> Vec<Vec<MgStep>> {
        self.traces.as_ref().map(|t| t.take()).unwrap_or_default()
    }
}

impl PrimalSolver for MgPcgSolver {
    fn solve(&self, rhs: &DVector<f64>, tol: f64) -> Result<(DVector<f64>, usize)> {
        let max_it = self.hierarchy.opts.max_it;
        match &self.traces {
            None => mg_pcg(&self.hierarchy, rhs, tol, max_it),
            Some(t) => {
                let mut steps = Vec::new();
                let out = mg_pcg_traced(&self.hierarchy, rhs, tol, max_it, Some(&mut steps));
                t.borrow_mut().push(steps);
                out
            }
        }
    }
}
