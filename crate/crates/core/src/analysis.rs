//! Error norms, Schur-complement spectra and stress post-processing.

use nalgebra::{DMatrix, DVector, SMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assembly::{evaluate_field, Level, Material, PlaneModel};
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::linalg::{self, Csr};
use crate::saddle::{AugmentedSystem, DualPreconditioner, PrimalSolver};

/// Apply the transfers in order, lifting a coarse vector to the last level.
pub fn prolongate(u: &DVector<f64>, transfers: &[Csr]) -> DVector<f64> {
    transfers.iter().fold(u.clone(), |v, p| linalg::spmv(p, &v))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ErrorNorms {
    pub l2: f64,
    pub h1_semi: f64,
    pub energy: f64,
}

/// Norms of `u_f − u_h` on `fine`, where `u_h` has already been lifted to
/// the fine space.
pub fn error_norms(fine: &Level, mat: &Material, u_f: &DVector<f64>, u_h: &DVector<f64>) -> ErrorNorms {
    let e = u_f - u_h;
    let (mut l2, mut h1, mut en) = (0.0, 0.0, 0.0);
    for s in 0..fine.space.num_subdomains() {
        let (lambda, mu) = mat.lame(s);
        for &el in fine.cls.active(s) {
            for q in fine.element_points(el, s, 2) {
                let (v, g) = evaluate_field(&fine.space, &e, el, s, &q.x);
                l2 += q.w * v.norm_squared();
                h1 += q.w * g.norm_squared();
                let eps = (g + g.transpose()) * 0.5;
                let tr = eps.trace();
                en += q.w * (lambda * tr * tr + 2.0 * mu * eps.norm_squared());
            }
        }
    }
    ErrorNorms {
        l2: l2.sqrt(),
        h1_semi: h1.sqrt(),
        energy: en.sqrt(),
    }
}

/// Least-squares slope of `log e` against `log h`.
pub fn convergence_rate(h: &[f64], err: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = h
        .iter()
        .zip(err)
        .filter(|(_, e)| **e > 0.0)
        .map(|(h, e)| (h.ln(), e.ln()))
        .collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Errors of a sequence of levels against a reference, with fitted rates.
#[derive(Clone, Debug, Default, Serialize)]
pub struct ErrorReport {
    pub h: Vec<f64>,
    pub norms: Vec<ErrorNorms>,
}

impl ErrorReport {
    pub fn push(&mut self, h: f64, n: ErrorNorms) {
        self.h.push(h);
        self.norms.push(n);
    }

    pub fn rates(&self) -> ErrorNorms {
        let pick = |f: fn(&ErrorNorms) -> f64| {
            let v: Vec<f64> = self.norms.iter().map(f).collect();
            convergence_rate(&self.h, &v)
        };
        ErrorNorms {
            l2: pick(|n| n.l2),
            h1_semi: pick(|n| n.h1_semi),
            energy: pick(|n| n.energy),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConditionMode {
    #[default]
    Dense,
    Lanczos,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Spectrum {
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl Spectrum {
    pub fn kappa(&self) -> f64 {
        self.lambda_max / self.lambda_min
    }
}

/// `S_γ = B·A_γ⁻¹·Bᵀ` built column by column with `solver`.
pub fn schur_dense(sys: &AugmentedSystem, solver: &dyn PrimalSolver, tol: f64) -> Result<DMatrix<f64>> {
    let m = sys.m();
    let b = &sys.sys.b;
    let mut s = DMatrix::zeros(m, m);
    for j in 0..m {
        let mut e = DVector::zeros(m);
        e[j] = 1.0;
        let (w, _) = solver.solve(&linalg::spmv_t(b, &e), tol)?;
        s.set_column(j, &linalg::spmv(b, &w));
    }
    Ok((&s + s.transpose()) * 0.5)
}

/// Spectrum of `P⁻¹S` for SPD `S` and symmetric `P⁻¹`, through the
/// congruent matrix `Lᵀ·P⁻¹·L` with `S = L·Lᵀ`.
pub fn spectrum_dense(s: &DMatrix<f64>, pinv: &DMatrix<f64>) -> Result<Spectrum> {
    if s.nrows() == 0 {
        return Ok(Spectrum {
            lambda_min: 1.0,
            lambda_max: 1.0,
        });
    }
    let l = s
        .clone()
        .cholesky()
        .ok_or_else(|| Error::FactorizationFailure("Schur complement is not SPD".into()))?
        .l();
    let m = l.transpose() * pinv * &l;
    let ev = ((&m + m.transpose()) * 0.5).symmetric_eigenvalues();
    Ok(Spectrum {
        lambda_min: ev.min(),
        lambda_max: ev.max(),
    })
}

#[derive(Clone, Copy, Debug)]
pub struct LanczosOptions {
    pub tol: f64,
    pub max_it: usize,
    pub seed: u64,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_it: 1000,
            seed: 0,
        }
    }
}

/// Extreme eigenvalues of `P⁻¹S` from the Lanczos matrix hidden in
/// preconditioned CG on `S·x = r` with a random `r`.
pub fn spectrum_lanczos<S, P>(s_op: S, p_op: P, m: usize, opts: &LanczosOptions) -> Result<Spectrum>
where
    S: Fn(&DVector<f64>) -> DVector<f64>,
    P: Fn(&DVector<f64>) -> DVector<f64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut r = DVector::from_fn(m, |_, _| rng.random::<f64>() - 0.5);
    let mut z = p_op(&r);
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    let rz0 = rz;
    let mut diag: Vec<f64> = Vec::new();
    let mut off: Vec<f64> = Vec::new();
    let (mut alpha_prev, mut beta_prev) = (0.0, 0.0);
    let mut last: Option<Spectrum> = None;
    for it in 0..opts.max_it {
        let q = s_op(&p);
        let alpha = rz / p.dot(&q);
        diag.push(1.0 / alpha + if it > 0 { beta_prev / alpha_prev } else { 0.0 });
        r.axpy(-alpha, &q, 1.0);
        z = p_op(&r);
        let rz_new = r.dot(&z);
        let beta = rz_new / rz;
        let k = diag.len();
        let exhausted = k == m || rz_new.abs() <= 1e-28 * rz0.abs();
        let next_off = beta.sqrt() / alpha;
        if exhausted || k <= 20 || k % 5 == 0 {
            let mut t = DMatrix::zeros(k, k);
            for i in 0..k {
                t[(i, i)] = diag[i];
                if i + 1 < k {
                    t[(i, i + 1)] = off[i];
                    t[(i + 1, i)] = off[i];
                }
            }
            let eig = t.symmetric_eigen();
            let (imin, imax) = (eig.eigenvalues.imin(), eig.eigenvalues.imax());
            let cur = Spectrum {
                lambda_min: eig.eigenvalues[imin],
                lambda_max: eig.eigenvalues[imax],
            };
            // Ritz residuals: next off-diagonal times the last eigenvector entry
            let settled =
                |i: usize| next_off * eig.eigenvectors[(k - 1, i)].abs() <= opts.tol * eig.eigenvalues[i].abs();
            if exhausted || (settled(imin) && settled(imax)) {
                return Ok(cur);
            }
            last = Some(cur);
        }
        off.push(next_off);
        p = &z + &p * beta;
        rz = rz_new;
        alpha_prev = alpha;
        beta_prev = beta;
    }
    Err(Error::NonConvergence {
        iterations: opts.max_it,
        estimate: last.map_or(f64::NAN, |s| s.kappa()),
    })
}

/// Spectrum of `P⁻¹S_γ` for an implicit dual preconditioner.
pub fn estimate_condition(
    sys: &AugmentedSystem,
    solver: &dyn PrimalSolver,
    p: &DualPreconditioner,
    mode: ConditionMode,
    tol_primal: f64,
    lanczos: &LanczosOptions,
) -> Result<Spectrum> {
    match mode {
        ConditionMode::Dense => spectrum_dense(&schur_dense(sys, solver, tol_primal)?, &p.to_dense()),
        ConditionMode::Lanczos => {
            let b = &sys.sys.b;
            let err = std::cell::RefCell::new(None);
            let s_op = |v: &DVector<f64>| match solver.solve(&linalg::spmv_t(b, v), tol_primal) {
                Ok((w, _)) => linalg::spmv(b, &w),
                Err(e) => {
                    err.borrow_mut().get_or_insert(e);
                    DVector::zeros(v.len())
                }
            };
            let res = spectrum_lanczos(s_op, |r| p.apply(r), sys.m(), lanczos);
            match err.into_inner() {
                Some(e) => Err(Error::InnerSolveFailure(Box::new(e))),
                None => res,
            }
        }
    }
}

/// Condition numbers per preconditioner for one level, plus the smallest
/// eigenvalue of the SIMPLE-preconditioned Schur complement as an inf-sup
/// proxy.
#[derive(Clone, Debug, Default, Serialize)]
pub struct ConditionReport {
    pub level: usize,
    pub h: f64,
    pub kappa: Vec<(String, f64)>,
    pub inf_sup_estimate: f64,
}

impl ConditionReport {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.kappa.iter().find(|(n, _)| n == name).map(|(_, k)| *k)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VonMisesFormula {
    /// Includes the out-of-plane stress of the plane model.
    #[default]
    Full,
    /// `σ_xx² − σ_xx σ_yy + σ_yy² + 3σ_xy²` only.
    InPlane,
}

pub fn von_mises_from_stress(sxx: f64, syy: f64, sxy: f64, szz: f64) -> f64 {
    let j2 = ((sxx - syy).powi(2) + (syy - szz).powi(2) + (szz - sxx).powi(2)) / 2.0 + 3.0 * sxy * sxy;
    j2.max(0.0).sqrt()
}

/// Stress of a displacement gradient `g[(c, k)] = ∂u_c/∂x_k`; returns
/// `(σ_xx, σ_yy, σ_xy, σ_zz)`.
pub fn stress(mat: &Material, sub: usize, g: &SMatrix<f64, 2, 2>) -> (f64, f64, f64, f64) {
    let (lambda, mu) = mat.lame(sub);
    let (exx, eyy, exy) = (g[(0, 0)], g[(1, 1)], 0.5 * (g[(0, 1)] + g[(1, 0)]));
    let tr = exx + eyy;
    let sxx = lambda * tr + 2.0 * mu * exx;
    let syy = lambda * tr + 2.0 * mu * eyy;
    let szz = match mat.model {
        PlaneModel::PlaneStrain => mat.nu * (sxx + syy),
        PlaneModel::PlaneStress => 0.0,
    };
    (sxx, syy, 2.0 * mu * exy, szz)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StressSample {
    pub element: usize,
    pub subdomain: usize,
    pub x: f64,
    pub y: f64,
    pub von_mises: f64,
}

/// One sample per active (element, subdomain) pair, at the centroid of the
/// element's quadrature on that side.
#[derive(Clone, Debug, Default)]
pub struct StressField {
    pub samples: Vec<StressSample>,
}

impl StressField {
    pub fn mean(&self, pred: impl Fn(&StressSample) -> bool) -> f64 {
        let (s, n) = self
            .samples
            .iter()
            .filter(|s| pred(s))
            .fold((0.0, 0usize), |(s, n), v| (s + v.von_mises, n + 1));
        if n == 0 {
            0.0
        } else {
            s / n as f64
        }
    }
}

pub fn von_mises(level: &Level, mat: &Material, u: &DVector<f64>, formula: VonMisesFormula) -> StressField {
    let mut samples = Vec::new();
    for s in 0..level.space.num_subdomains() {
        for &e in level.cls.active(s) {
            let pts = level.element_points(e, s, 2);
            let w: f64 = pts.iter().map(|q| q.w).sum();
            if w <= 0.0 {
                continue;
            }
            let c = pts.iter().fold(Point::origin(), |acc, q| acc + q.x.coords * (q.w / w));
            let (_, g) = evaluate_field(&level.space, u, e, s, &c);
            let (sxx, syy, sxy, szz) = stress(mat, s, &g);
            let vm = match formula {
                VonMisesFormula::Full => von_mises_from_stress(sxx, syy, sxy, szz),
                VonMisesFormula::InPlane => von_mises_from_stress(sxx, syy, sxy, 0.0),
            };
            samples.push(StressSample {
                element: e,
                subdomain: s,
                x: c.x,
                y: c.y,
                von_mises: vm,
            });
        }
    }
    StressField { samples }
}
