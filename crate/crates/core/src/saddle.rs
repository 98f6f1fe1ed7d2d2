//! Augmented Lagrangian, dual preconditioners and Uzawa iterations for
//!
//! ```text
//! A_γ x + Bᵀ y = b,    B x = 0,    A_γ = A + γ_s BᵀB.
//! ```

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assembly::AssembledSystem;
use crate::error::{Error, Result};
use crate::linalg::{self, Csr, SparseCholesky};

const POWER_SEED: u64 = 0x9e37_79b9;

/// Power iteration from a fixed pseudo-random positive vector. Stops when the
/// Rayleigh quotient change, and its geometric extrapolation, fall below
/// `tol` (relative).
pub fn estimate_lambda_max<F>(n: usize, op: F, tol: f64, max_it: usize) -> Result<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    if n == 0 {
        return Ok(0.0);
    }
    // a symmetric start can miss the dominant mode of a symmetric operator
    let mut rng = ChaCha8Rng::seed_from_u64(POWER_SEED);
    let mut v = DVector::from_fn(n, |_, _| rng.random_range(0.5..1.5));
    v.normalize_mut();
    let mut lambda = 0.0;
    let mut prev_delta = 0.0;
    for it in 0..max_it {
        let w = op(&v);
        let next = v.dot(&w) / v.dot(&v);
        let norm = w.norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        v = w / norm;
        if it > 0 {
            let delta = (next - lambda).abs();
            // changes decay geometrically; bound what is still to come
            let rho = if prev_delta > 0.0 { (delta / prev_delta).min(0.9999) } else { 0.0 };
            let remaining = delta * rho / (1.0 - rho);
            if it > 1 && delta.max(remaining) <= tol * next.abs() {
                return Ok(next);
            }
            prev_delta = delta;
        }
        lambda = next;
    }
    Err(Error::NonConvergence {
        iterations: max_it,
        estimate: lambda,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct PowerOptions {
    pub tol: f64,
    pub max_it: usize,
}

impl Default for PowerOptions {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            max_it: 5000,
        }
    }
}

/// `γ_s = λmax(A) / λmax(BᵀB)`, the latter through `B·Bᵀ`.
pub fn compute_gamma_s(a: &Csr, b: &Csr, opts: &PowerOptions) -> Result<f64> {
    let la = estimate_lambda_max(a.nrows(), |v| linalg::spmv(a, v), opts.tol, opts.max_it)?;
    let lb = estimate_lambda_max(
        b.nrows(),
        |v| linalg::spmv(b, &linalg::spmv_t(b, v)),
        opts.tol,
        opts.max_it,
    )?;
    if lb <= 0.0 {
        return Err(Error::InvalidInput("coupling matrix is zero".into()));
    }
    Ok(la / lb)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AugmentMode {
    #[default]
    Explicit,
    Composite,
}

/// `A_γ` together with the pieces it was built from.
#[derive(Clone, Debug)]
pub struct AugmentedSystem {
    pub sys: AssembledSystem,
    pub gamma: f64,
    pub mode: AugmentMode,
    explicit: Option<Csr>,
}

pub fn augment(sys: AssembledSystem, gamma: f64, mode: AugmentMode) -> AugmentedSystem {
    let explicit = match mode {
        AugmentMode::Explicit => Some(explicit_augmented(&sys.a, &sys.b, gamma)),
        AugmentMode::Composite => None,
    };
    AugmentedSystem {
        sys,
        gamma,
        mode,
        explicit,
    }
}

/// Sparse `A + γ·BᵀB`.
pub fn explicit_augmented(a: &Csr, b: &Csr, gamma: f64) -> Csr {
    if gamma == 0.0 {
        return a.clone();
    }
    let bt = b.transpose();
    let btb = &bt * b;
    linalg::symmetrize(&(a + &linalg::scale(&btb, gamma)))
}

impl AugmentedSystem {
    pub fn n(&self) -> usize {
        self.sys.n()
    }

    pub fn m(&self) -> usize {
        self.sys.m()
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.explicit {
            Some(ag) => linalg::spmv(ag, v),
            None => {
                let mut out = linalg::spmv(&self.sys.a, v);
                if self.gamma != 0.0 {
                    let bv = linalg::spmv(&self.sys.b, v);
                    out += linalg::spmv_t(&self.sys.b, &bv) * self.gamma;
                }
                out
            }
        }
    }

    /// The explicit matrix, forming it on demand in composite mode.
    pub fn matrix(&self) -> std::borrow::Cow<'_, Csr> {
        match &self.explicit {
            Some(m) => std::borrow::Cow::Borrowed(m),
            None => std::borrow::Cow::Owned(explicit_augmented(&self.sys.a, &self.sys.b, self.gamma)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum PreconditionerKind {
    Identity,
    Simple,
    Dirichlet,
    Lacour,
    Feti,
}

impl PreconditionerKind {
    pub const ALL: [PreconditionerKind; 5] = [
        PreconditionerKind::Identity,
        PreconditionerKind::Simple,
        PreconditionerKind::Dirichlet,
        PreconditionerKind::Lacour,
        PreconditionerKind::Feti,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PreconditionerKind::Identity => "none",
            PreconditionerKind::Simple => "simple",
            PreconditionerKind::Dirichlet => "dirichlet",
            PreconditionerKind::Lacour => "lacour",
            PreconditionerKind::Feti => "feti",
        }
    }
}

/// Which stiffness enters the dual preconditioners.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PreconditionerStiffness {
    /// `A_γ`, the operator the dual iteration actually inverts.
    #[default]
    Augmented,
    /// The stabilized `A` without the `γ_s·BᵀB` term.
    Stabilized,
}

/// Application of `P⁻¹` on the multiplier space, with `D` the diagonal of
/// the stiffness used inside.
pub struct DualPreconditioner {
    kind: PreconditionerKind,
    b: Csr,
    a: Csr,
    dinv: DVector<f64>,
    inner: Option<SparseCholesky>,
}

fn factor_inner(m: &Csr) -> Result<SparseCholesky> {
    SparseCholesky::new(m).map_err(|e| match e {
        Error::FactorizationFailure(s) => Error::FactorizationFailure(format!(
            "dual preconditioner matrix is not SPD (rank-deficient coupling?): {s}"
        )),
        other => other,
    })
}

/// `B·diag(w)·Bᵀ`.
fn weighted_bbt(b: &Csr, w: &DVector<f64>) -> Csr {
    let mut bw = b.clone();
    let cols: Vec<usize> = bw.col_indices().to_vec();
    for (v, c) in bw.values_mut().iter_mut().zip(cols) {
        *v *= w[c];
    }
    let bt = b.transpose();
    linalg::symmetrize(&(&bw * &bt))
}

impl DualPreconditioner {
    /// Built from the stabilized, unaugmented stiffness of `sys`.
    pub fn new(kind: PreconditionerKind, sys: &AssembledSystem) -> Result<Self> {
        Self::with_matrix(kind, &sys.a, &sys.b)
    }

    pub fn for_system(
        kind: PreconditionerKind,
        sys: &AugmentedSystem,
        stiffness: PreconditionerStiffness,
    ) -> Result<Self> {
        match stiffness {
            PreconditionerStiffness::Augmented => Self::with_matrix(kind, &sys.matrix(), &sys.sys.b),
            PreconditionerStiffness::Stabilized => Self::new(kind, &sys.sys),
        }
    }

    pub fn with_matrix(kind: PreconditionerKind, a: &Csr, b: &Csr) -> Result<Self> {
        let dinv = linalg::diagonal(a).map(|v| if v != 0.0 { 1.0 / v } else { 0.0 });
        let ones = DVector::from_element(a.nrows(), 1.0);
        let inner = match kind {
            PreconditionerKind::Simple | PreconditionerKind::Feti => {
                Some(factor_inner(&weighted_bbt(b, &dinv))?)
            }
            PreconditionerKind::Lacour => Some(factor_inner(&weighted_bbt(b, &ones))?),
            _ => None,
        };
        Ok(Self {
            kind,
            b: b.clone(),
            a: a.clone(),
            dinv,
            inner,
        })
    }

    pub fn kind(&self) -> PreconditionerKind {
        self.kind
    }

    fn sandwich(&self, r: &DVector<f64>, weight: Option<&DVector<f64>>) -> DVector<f64> {
        let mut v = linalg::spmv_t(&self.b, r);
        if let Some(w) = weight {
            v.component_mul_assign(w);
        }
        let mut av = linalg::spmv(&self.a, &v);
        if let Some(w) = weight {
            av.component_mul_assign(w);
        }
        linalg::spmv(&self.b, &av)
    }

    pub fn apply(&self, r: &DVector<f64>) -> DVector<f64> {
        match self.kind {
            PreconditionerKind::Identity => r.clone(),
            PreconditionerKind::Simple => self.inner.as_ref().unwrap().solve(r),
            PreconditionerKind::Dirichlet => self.sandwich(r, None),
            PreconditionerKind::Lacour => {
                let f = self.inner.as_ref().unwrap();
                f.solve(&self.sandwich(&f.solve(r), None))
            }
            PreconditionerKind::Feti => {
                let f = self.inner.as_ref().unwrap();
                f.solve(&self.sandwich(&f.solve(r), Some(&self.dinv)))
            }
        }
    }

    /// Dense `P⁻¹`, column by column.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let m = self.b.nrows();
        let mut out = DMatrix::zeros(m, m);
        for j in 0..m {
            let mut e = DVector::zeros(m);
            e[j] = 1.0;
            out.set_column(j, &self.apply(&e));
        }
        out
    }
}

/// Solver for `A_γ x = rhs`.
pub trait PrimalSolver {
    /// Returns the solution and the number of iterations spent (1 for a
    /// direct solve).
    fn solve(&self, rhs: &DVector<f64>, tol: f64) -> Result<(DVector<f64>, usize)>;
}

/// Sparse Cholesky of `A_γ`.
pub struct DirectSolver {
    factor: SparseCholesky,
}

impl DirectSolver {
    pub fn new(a: &Csr) -> Result<Self> {
        Ok(Self {
            factor: SparseCholesky::new(a)?,
        })
    }
}

impl PrimalSolver for DirectSolver {
    fn solve(&self, rhs: &DVector<f64>, _tol: f64) -> Result<(DVector<f64>, usize)> {
        Ok((self.factor.solve(rhs), 1))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UzawaVariant {
    Cg,
    Richardson { omega: f64 },
}

#[derive(Clone, Copy, Debug)]
pub struct UzawaOptions {
    pub variant: UzawaVariant,
    /// Stop when `‖y^{k+1} − y^k‖_S` drops below this.
    pub tol_dual: f64,
    /// Passed to every primal solve.
    pub tol_primal: f64,
    pub max_it: usize,
    /// Restart the CG direction after this many non-decreasing steps.
    pub stagnation_restart: usize,
}

impl Default for UzawaOptions {
    fn default() -> Self {
        Self {
            variant: UzawaVariant::Cg,
            tol_dual: 1e-12,
            tol_primal: 1e-14,
            max_it: 1000,
            stagnation_restart: 5,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct SolveReport {
    pub level: usize,
    pub preconditioner: String,
    pub dual_iterations: usize,
    /// Iterations of every primal solve, the initial one first.
    pub primal_iterations: Vec<usize>,
    pub final_dual_increment: f64,
    /// `‖y^{k+1} − y^k‖_S` per dual iteration.
    pub dual_history: Vec<f64>,
    pub final_primal_increment: f64,
    pub wall_time: f64,
}

impl SolveReport {
    pub fn total_primal(&self) -> usize {
        self.primal_iterations.iter().sum()
    }

    /// Average primal iterations per dual iteration.
    pub fn avg_primal_per_dual(&self) -> f64 {
        if self.dual_iterations == 0 {
            0.0
        } else {
            self.total_primal() as f64 / self.dual_iterations as f64
        }
    }

    pub const CSV_HEADER: [&'static str; 5] = [
        "level",
        "preconditioner",
        "dual_iters",
        "total_primal_iters",
        "avg_primal_per_dual",
    ];

    pub fn csv_row(&self) -> [String; 5] {
        [
            self.level.to_string(),
            self.preconditioner.clone(),
            self.dual_iterations.to_string(),
            self.total_primal().to_string(),
            format!("{:.2}", self.avg_primal_per_dual()),
        ]
    }
}

pub struct UzawaResult {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub report: SolveReport,
}

fn primal(
    solver: &dyn PrimalSolver,
    rhs: &DVector<f64>,
    tol: f64,
    report: &mut SolveReport,
) -> Result<DVector<f64>> {
    let (x, its) = solver
        .solve(rhs, tol)
        .map_err(|e| Error::InnerSolveFailure(Box::new(e)))?;
    report.primal_iterations.push(its);
    Ok(x)
}

/// Uzawa iteration on the augmented system starting from `y0` (zero if
/// `None`).
pub fn uzawa(
    sys: &AugmentedSystem,
    p: &DualPreconditioner,
    solver: &dyn PrimalSolver,
    opts: &UzawaOptions,
    y0: Option<&DVector<f64>>,
) -> Result<UzawaResult> {
    let start = Instant::now();
    let b = &sys.sys.b;
    let mut report = SolveReport {
        preconditioner: p.kind().name().to_string(),
        ..Default::default()
    };
    let mut y = y0.cloned().unwrap_or_else(|| DVector::zeros(sys.m()));
    let rhs0 = &sys.sys.rhs - linalg::spmv_t(b, &y);
    let mut x = primal(solver, &rhs0, opts.tol_primal, &mut report)?;

    let (x, y) = match opts.variant {
        UzawaVariant::Cg => {
            let mut r = linalg::spmv(b, &x);
            let z = p.apply(&r);
            let mut pdir = z.clone();
            let mut rz = r.dot(&z);
            let mut best = f64::INFINITY;
            let mut stagnant = 0;
            loop {
                if report.dual_iterations >= opts.max_it {
                    return Err(Error::MaxIterations {
                        solver: "uzawa-cg",
                        iterations: report.dual_iterations,
                        last: report.final_dual_increment,
                    });
                }
                report.dual_iterations += 1;
                let w = primal(solver, &linalg::spmv_t(b, &pdir), opts.tol_primal, &mut report)?;
                let q = linalg::spmv(b, &w);
                let pq = pdir.dot(&q);
                if pq <= 0.0 || rz == 0.0 {
                    report.final_dual_increment = 0.0;
                    break;
                }
                let alpha = rz / pq;
                y.axpy(alpha, &pdir, 1.0);
                x.axpy(-alpha, &w, 1.0);
                r.axpy(-alpha, &q, 1.0);
                let inc = alpha.abs() * pq.sqrt();
                report.final_dual_increment = inc;
                report.dual_history.push(inc);
                if inc < opts.tol_dual {
                    break;
                }
                if inc < best {
                    best = inc;
                    stagnant = 0;
                } else {
                    stagnant += 1;
                }
                let z_new = p.apply(&r);
                let rz_new = r.dot(&z_new);
                // flexible (Polak-Ribière) update tolerates inexact solves
                let beta = if stagnant >= opts.stagnation_restart {
                    stagnant = 0;
                    0.0
                } else {
                    ((rz_new - z_new.dot(&(&r + &q * alpha))) / rz).max(0.0)
                };
                pdir = &z_new + &pdir * beta;
                rz = rz_new;
            }
            (x, y)
        }
        UzawaVariant::Richardson { omega } => {
            loop {
                if report.dual_iterations >= opts.max_it {
                    return Err(Error::MaxIterations {
                        solver: "uzawa-richardson",
                        iterations: report.dual_iterations,
                        last: report.final_dual_increment,
                    });
                }
                report.dual_iterations += 1;
                let dy = p.apply(&linalg::spmv(b, &x)) * omega;
                y += &dy;
                let rhs = &sys.sys.rhs - linalg::spmv_t(b, &y);
                let x_new = primal(solver, &rhs, opts.tol_primal, &mut report)?;
                // ‖Δy‖_S = ‖x^{k+1} − x^k‖_{A_γ}
                let dx = &x_new - &x;
                let inc = dx.dot(&sys.apply(&dx)).max(0.0).sqrt();
                x = x_new;
                report.final_dual_increment = inc;
                report.dual_history.push(inc);
                if inc < opts.tol_dual {
                    break;
                }
            }
            (x, y)
        }
    };
    report.final_primal_increment = opts.tol_primal;
    report.wall_time = start.elapsed().as_secs_f64();
    Ok(UzawaResult { x, y, report })
}

/// Dense solve of the full block system, for verification.
pub fn dense_saddle_solve(sys: &AugmentedSystem) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = sys.n();
    let m = sys.m();
    let ag = linalg::to_dense(&sys.matrix());
    let bd = linalg::to_dense(&sys.sys.b);
    let mut k = DMatrix::zeros(n + m, n + m);
    k.view_mut((0, 0), (n, n)).copy_from(&ag);
    k.view_mut((0, n), (n, m)).copy_from(&bd.transpose());
    k.view_mut((n, 0), (m, n)).copy_from(&bd);
    let mut rhs = DVector::zeros(n + m);
    rhs.rows_mut(0, n).copy_from(&sys.sys.rhs);
    let sol = k
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::FactorizationFailure("singular saddle-point matrix".into()))?;
    Ok((sol.rows(0, n).into_owned(), sol.rows(n, m).into_owned()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra_sparse::CooMatrix;

    fn diag(vals: &[f64]) -> Csr {
        let mut c = CooMatrix::new(vals.len(), vals.len());
        for (i, v) in vals.iter().enumerate() {
            c.push(i, i, *v);
        }
        Csr::from(&c)
    }

    fn dense_to_csr(m: &DMatrix<f64>) -> Csr {
        let mut c = CooMatrix::new(m.nrows(), m.ncols());
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                if m[(i, j)] != 0.0 {
                    c.push(i, j, m[(i, j)]);
                }
            }
        }
        Csr::from(&c)
    }

    #[test]
    fn power_iteration_trivial_cases() {
        let d = diag(&[1.0, 2.0, 5.0]);
        let l = estimate_lambda_max(3, |v| linalg::spmv(&d, v), 1e-4, 200).unwrap();
        assert!((l - 5.0).abs() < 1e-4 * 5.0);
        let i = diag(&[1.0; 7]);
        let l = estimate_lambda_max(7, |v| linalg::spmv(&i, v), 1e-4, 200).unwrap();
        assert_eq!(l, 1.0);
    }

    #[test]
    fn gamma_for_scaled_identities() {
        let a = diag(&[1.0; 4]);
        let b = dense_to_csr(&DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]));
        assert!((compute_gamma_s(&a, &b, &PowerOptions::default()).unwrap() - 1.0).abs() < 1e-12);
        let a = diag(&[4.0, 4.0]);
        let b = diag(&[2.0, 2.0]);
        assert!((compute_gamma_s(&a, &b, &PowerOptions::default()).unwrap() - 1.0).abs() < 1e-12);
    }

    fn toy_system() -> AssembledSystem {
        // SPD 4x4 plus two constraints
        let a = DMatrix::from_row_slice(
            4,
            4,
            &[4.0, 1.0, 0.0, 0.0, 1.0, 3.0, 1.0, 0.0, 0.0, 1.0, 5.0, 2.0, 0.0, 0.0, 2.0, 6.0],
        );
        let b = DMatrix::from_row_slice(2, 4, &[1.0, -1.0, 0.0, 0.0, 0.0, 0.5, 0.0, -1.0]);
        let a = dense_to_csr(&a);
        let d = linalg::diagonal(&a);
        AssembledSystem {
            a,
            b: dense_to_csr(&b),
            rhs: DVector::from_vec(vec![1.0, 2.0, -1.0, 0.5]),
            d,
        }
    }

    #[test]
    fn preconditioner_identities() {
        // B = I, D = I: SIMPLE is the identity, FETI applies A
        let a = dense_to_csr(&DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]));
        let mut sys = AssembledSystem {
            a: a.clone(),
            b: diag(&[1.0, 1.0]),
            rhs: DVector::zeros(2),
            d: DVector::from_element(2, 1.0),
        };
        let r = DVector::from_vec(vec![0.7, -1.1]);
        let s = DualPreconditioner::new(PreconditionerKind::Simple, &sys).unwrap();
        assert!((s.apply(&r) - &r).norm() < 1e-15);
        let f = DualPreconditioner::new(PreconditionerKind::Feti, &sys).unwrap();
        assert!((f.apply(&r) - linalg::spmv(&a, &r)).norm() < 1e-15);
        // A = I: Dirichlet applies B Bᵀ
        sys.a = diag(&[1.0, 1.0, 1.0]);
        sys.b = dense_to_csr(&DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.0, 0.0, 1.0, 1.0]));
        sys.d = DVector::from_element(3, 1.0);
        let dp = DualPreconditioner::new(PreconditionerKind::Dirichlet, &sys).unwrap();
        let bd = linalg::to_dense(&sys.b);
        assert!((dp.apply(&r) - &bd * bd.transpose() * &r).norm() < 1e-14);
    }

    #[test]
    fn explicit_and_composite_agree() {
        let sys = toy_system();
        let e = augment(sys.clone(), 2.5, AugmentMode::Explicit);
        let c = augment(sys, 2.5, AugmentMode::Composite);
        for k in 0..10 {
            let v = DVector::from_fn(4, |i, _| ((i + 3 * k) as f64).sin());
            let (ve, vc) = (e.apply(&v), c.apply(&v));
            assert!((&ve - &vc).norm() <= 1e-14 * ve.norm());
        }
        let z = augment(toy_system(), 0.0, AugmentMode::Explicit);
        assert_eq!(linalg::to_dense(&z.matrix()), linalg::to_dense(&z.sys.a));
    }

    #[test]
    fn uzawa_matches_dense_solve_on_toy_problem() {
        let sys = augment(toy_system(), 1.0, AugmentMode::Explicit);
        let (xd, yd) = dense_saddle_solve(&sys).unwrap();
        let direct = DirectSolver::new(&sys.matrix()).unwrap();
        for kind in PreconditionerKind::ALL {
            let p = DualPreconditioner::new(kind, &sys.sys).unwrap();
            let res = uzawa(&sys, &p, &direct, &UzawaOptions::default(), None).unwrap();
            assert!((&res.x - &xd).norm() <= 1e-10 * xd.norm(), "{kind:?}");
            assert!((&res.y - &yd).norm() <= 1e-10 * yd.norm(), "{kind:?}");
        }
        // started at the solution the first increment is already negligible
        let p = DualPreconditioner::new(PreconditionerKind::Feti, &sys.sys).unwrap();
        let res = uzawa(&sys, &p, &direct, &UzawaOptions::default(), Some(&yd)).unwrap();
        assert_eq!(res.report.dual_iterations, 1);
        let opts = UzawaOptions {
            variant: UzawaVariant::Richardson { omega: 0.5 },
            ..Default::default()
        };
        let p = DualPreconditioner::new(PreconditionerKind::Identity, &sys.sys).unwrap();
        let res = uzawa(&sys, &p, &direct, &opts, None).unwrap();
        assert!((&res.y - &yd).norm() <= 1e-9 * yd.norm());
    }

    #[test]
    fn report_average() {
        let r = SolveReport {
            dual_iterations: 4,
            primal_iterations: vec![10, 9, 9, 8, 8],
            ..Default::default()
        };
        assert_eq!(r.total_primal(), 44);
        assert_eq!(r.avg_primal_per_dual(), 11.0);
    }
}
