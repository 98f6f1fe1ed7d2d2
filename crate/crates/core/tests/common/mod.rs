#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unfitted::analysis::{von_mises, VonMisesFormula};
use unfitted::assembly::{assemble_stabilized, assemble_system, build_level, AssemblyOptions, Level, Material, MaterialCase};
use unfitted::experiment::random_resolved_inclusions;
use unfitted::geometry::{EllipseLevelSet, InclusionSet, Point, RandomInclusionBounds};
use unfitted::linalg::{self, Csr};
use unfitted::mesh::{ElementTag, MeshLevel, MATRIX};
use unfitted::multigrid::{build_transfer, MgHierarchy, MgOptions, TransferKind};
use unfitted::saddle::{augment, compute_gamma_s, AugmentMode, DirectSolver, DualPreconditioner, PowerOptions, PreconditionerKind, PrimalSolver};

pub type Check = Result<(), String>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// One to three well separated random ellipses resolved on an `n`-mesh.
pub fn random_instance(seed: u64, n: usize) -> (MeshLevel, InclusionSet) {
    let mut r = rng(seed);
    let count = r.random_range(1..=3);
    let bounds = RandomInclusionBounds {
        semi_major: [0.08, 0.2],
        semi_minor: [0.06, 0.2],
        center: [0.2, 0.8],
        clearance: 0.05,
        ..RandomInclusionBounds::default()
    };
    let mesh = MeshLevel::new(n).unwrap();
    let inc = random_resolved_inclusions(count, seed, &bounds, n, &AssemblyOptions::default())
        .or_else(|_| random_resolved_inclusions(1, seed, &bounds, n, &AssemblyOptions::default()))
        .expect("random inclusions");
    (mesh, inc)
}

pub fn random_level(seed: u64, n: usize) -> Level {
    let (mesh, inc) = random_instance(seed, n);
    build_level(&mesh, &inc, &AssemblyOptions::default()).expect("level")
}

pub fn random_case(seed: u64) -> Material {
    MaterialCase::ALL[(seed % 3) as usize].material()
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Check {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

pub fn symmetric_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = a.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Rotating by π and, for circles, by any angle leaves the level set
/// unchanged; with θ = 0 its sign agrees with the axis-aligned quadratic form.
pub fn check_level_set(seed: u64) -> Check {
    let mut r = rng(seed);
    let (cx, cy) = (r.random_range(0.2..0.8), r.random_range(0.2..0.8));
    let (a, b) = (r.random_range(0.05..0.3), r.random_range(0.05..0.3));
    let theta = r.random_range(0.0..PI);
    let e = EllipseLevelSet::new(cx, cy, a, b, theta).map_err(|e| e.to_string())?;
    let flipped = EllipseLevelSet::new(cx, cy, a, b, theta + PI).map_err(|e| e.to_string())?;
    let circle = EllipseLevelSet::circle(cx, cy, a).map_err(|e| e.to_string())?;
    let spun = EllipseLevelSet::new(cx, cy, a, a, theta).map_err(|e| e.to_string())?;
    let aligned = EllipseLevelSet::new(cx, cy, a, b, 0.0).map_err(|e| e.to_string())?;
    for _ in 0..200 {
        let p = Point::new(r.random_range(0.0..1.0), r.random_range(0.0..1.0));
        let (v, w) = (e.value(&p), flipped.value(&p));
        ensure((v - w).abs() <= 1e-12 * (1.0 + v.abs()), || format!("θ+π changes Λ at {p:?}: {v} vs {w}"))?;
        let (v, w) = (circle.value(&p), spun.value(&p));
        ensure((v - w).abs() <= 1e-12 * (1.0 + v.abs()), || format!("circle depends on θ at {p:?}"))?;
        let q = ((p.x - cx) / a).powi(2) + ((p.y - cy) / b).powi(2);
        if (q - 1.0).abs() > 1e-9 {
            ensure((aligned.value(&p) > 0.0) == (q < 1.0), || format!("sign mismatch at {p:?}"))?;
        }
    }
    Ok(())
}

/// Every element carries one tag and the active meshes overlap exactly on
/// the cut elements.
pub fn check_partition(level: &Level) -> Check {
    let cls = &level.cls;
    let ne = level.mesh.num_elements();
    ensure(cls.tags().len() == ne, || "tag count differs from element count".into())?;
    let mut total = cls.active(MATRIX).len();
    for i in 0..cls.num_inclusions() {
        total += cls.active(i + 1).len();
        total -= cls.interface(i).len();
        for &e in cls.interface(i) {
            ensure(cls.tag(e) == ElementTag::Cut(i), || format!("interface element {e} not tagged cut"))?;
        }
    }
    ensure(total == ne, || format!("active meshes cover {total} elements, mesh has {ne}"))
}

/// Both side areas of each cut element add up to the element area and the
/// inclusion-side area matches the analytic ellipse area.
pub fn check_quadrature_area(level: &Level) -> Check {
    let h2 = level.mesh.h() * level.mesh.h();
    let mut area = vec![0.0; level.inclusions.len()];
    for e in 0..level.mesh.num_elements() {
        match level.cls.tag(e) {
            ElementTag::Matrix => {}
            ElementTag::Inclusion(i) => area[i] += h2,
            ElementTag::Cut(i) => {
                let q = level.cut_rules[e].as_ref().ok_or("cut element without rule")?;
                let (m, s) = (q.side_area(0), q.side_area(1));
                ensure((m + s - h2).abs() <= 1e-9 * h2, || format!("element {e}: sides sum to {} not {h2}", m + s))?;
                ensure(m >= 0.0 && s >= 0.0, || format!("element {e}: negative side area"))?;
                area[i] += s;
            }
        }
    }
    for (i, e) in level.inclusions.iter().enumerate() {
        let exact = e.area();
        ensure((area[i] - exact).abs() <= 1e-6 * exact, || {
            format!("inclusion {i}: area {} vs πab = {exact}", area[i])
        })?;
    }
    Ok(())
}

fn floating(level: &Level) -> usize {
    level.inclusions.len()
}

/// `A` is exactly symmetric, positive semidefinite, and its kernel consists
/// of three rigid modes per floating inclusion.
pub fn check_stiffness(level: &Level, mat: &Material) -> Check {
    let a = assemble_stabilized(level, mat, &AssemblyOptions::default());
    let d = linalg::to_dense(&a);
    ensure(d == d.transpose(), || "stabilized stiffness is not exactly symmetric".into())?;
    let ev = symmetric_eigenvalues(&d);
    let top = *ev.last().unwrap();
    ensure(ev[0] >= -1e-10 * top, || format!("λ_min = {} < −1e-10·‖A‖", ev[0]))?;
    let kernel = ev.iter().filter(|&&l| l <= 1e-10 * top).count();
    let want = 3 * floating(level);
    ensure(kernel == want, || format!("kernel dimension {kernel}, expected {want}"))
}

/// `B` has full row rank.
pub fn check_rank(level: &Level, mat: &Material) -> Check {
    let sys = assemble_system(level, mat, &AssemblyOptions::default()).map_err(|e| e.to_string())?;
    let b = linalg::to_dense(&sys.b);
    let bbt = &b * b.transpose();
    let ev = symmetric_eigenvalues(&bbt);
    let top = *ev.last().unwrap();
    ensure(ev[0] > 1e-12 * top, || format!("rank deficient B: σ²_min/σ²_max = {}", ev[0] / top))
}

/// Prolongated constants stay constant on every subdomain away from the
/// clamped edge, and each fine dof reads at most four coarse nodes.
pub fn check_transfer(coarse: &Level, fine: &Level) -> Check {
    let p = build_transfer(coarse, fine, TransferKind::DualBasis, MgOptions::default().drop_tol).map_err(|e| e.to_string())?;
    let hc = coarse.mesh.h();
    for comp in 0..2 {
        for s in 0..coarse.space.num_subdomains() {
            let mut u = DVector::zeros(coarse.space.dim());
            for &node in coarse.space.nodes(s) {
                if let Some(d) = coarse.space.dof(s, node, comp) {
                    u[d] = 1.0;
                }
            }
            let v = linalg::spmv(&p, &u);
            for &node in fine.space.nodes(s) {
                let Some(d) = fine.space.dof(s, node, comp) else { continue };
                if s == MATRIX && fine.mesh.node_coords(node).x < hc + 1e-12 {
                    continue;
                }
                ensure((v[d] - 1.0).abs() <= 1e-10, || {
                    format!("subdomain {s}, node {node}: prolongated constant is {}", v[d])
                })?;
            }
        }
    }
    for (i, row) in p.row_iter().enumerate() {
        ensure(row.nnz() <= 4, || format!("prolongation row {i} reads {} coarse dofs", row.nnz()))?;
    }
    Ok(())
}

/// Galerkin coarse operators are symmetric and positive semidefinite.
pub fn check_galerkin(coarse: &Level, fine: &Level, mat: &Material) -> Check {
    let p = build_transfer(coarse, fine, TransferKind::DualBasis, MgOptions::default().drop_tol).map_err(|e| e.to_string())?;
    let sys = assemble_system(fine, mat, &AssemblyOptions::default()).map_err(|e| e.to_string())?;
    let gamma = compute_gamma_s(&sys.a, &sys.b, &PowerOptions::default()).map_err(|e| e.to_string())?;
    let aug = augment(sys, gamma, AugmentMode::Explicit);
    let h = MgHierarchy::galerkin(aug.matrix().into_owned(), vec![p], MgOptions::default()).map_err(|e| e.to_string())?;
    let c = linalg::to_dense(h.matrix(0));
    let asym = (&c - c.transpose()).amax();
    ensure(asym <= 1e-12 * c.amax(), || format!("coarse operator asymmetry {asym}"))?;
    let ev = symmetric_eigenvalues(&c);
    ensure(ev[0] >= -1e-10 * ev.last().unwrap(), || format!("coarse operator λ_min = {}", ev[0]))?;
    let mut r = rng(7);
    for _ in 0..5 {
        let x = DVector::from_fn(aug.n(), |_, _| r.random::<f64>() - 0.5);
        let y = DVector::from_fn(aug.n(), |_, _| r.random::<f64>() - 0.5);
        let (mx, my) = (h.precondition(&x), h.precondition(&y));
        let (l, rr) = (mx.dot(&y), x.dot(&my));
        ensure((l - rr).abs() <= 1e-10 * l.abs().max(rr.abs()), || format!("V-cycle not symmetric: {l} vs {rr}"))?;
    }
    Ok(())
}

/// `S_γ` is symmetric and every preconditioner is positive on `range(B)`.
pub fn check_dual_operators(level: &Level, mat: &Material, seed: u64) -> Check {
    let sys = assemble_system(level, mat, &AssemblyOptions::default()).map_err(|e| e.to_string())?;
    let gamma = compute_gamma_s(&sys.a, &sys.b, &PowerOptions::default()).map_err(|e| e.to_string())?;
    let aug = augment(sys, gamma, AugmentMode::Explicit);
    let solver = DirectSolver::new(&aug.matrix()).map_err(|e| e.to_string())?;
    let b: &Csr = &aug.sys.b;
    let s = |v: &DVector<f64>| linalg::spmv(b, &solver.solve(&linalg::spmv_t(b, v), 1e-14).unwrap().0);
    let mut r = rng(seed);
    let m = aug.m();
    for _ in 0..5 {
        let u = DVector::from_fn(m, |_, _| r.random::<f64>() - 0.5);
        let v = DVector::from_fn(m, |_, _| r.random::<f64>() - 0.5);
        let (l, rr) = (s(&u).dot(&v), u.dot(&s(&v)));
        ensure((l - rr).abs() <= 1e-10 * (l.abs() + rr.abs()), || format!("S not symmetric: {l} vs {rr}"))?;
    }
    for kind in PreconditionerKind::ALL {
        let p = DualPreconditioner::for_system(kind, &aug, Default::default()).map_err(|e| e.to_string())?;
        for _ in 0..5 {
            let w = DVector::from_fn(aug.n(), |_, _| r.random::<f64>() - 0.5);
            let rv = linalg::spmv(b, &w);
            if rv.norm() == 0.0 {
                continue;
            }
            let q = p.apply(&rv).dot(&rv);
            ensure(q > 0.0, || format!("{} preconditioner not positive: {q}", kind.name()))?;
        }
    }
    Ok(())
}

/// von Mises stress of arbitrary displacements is nonnegative.
pub fn check_von_mises(level: &Level, mat: &Material, seed: u64) -> Check {
    let mut r = rng(seed);
    let u = DVector::from_fn(level.space.dim(), |_, _| r.random::<f64>() - 0.5);
    for formula in [VonMisesFormula::Full, VonMisesFormula::InPlane] {
        let f = von_mises(level, mat, &u, formula);
        for s in &f.samples {
            ensure(s.von_mises >= 0.0 && s.von_mises.is_finite(), || {
                format!("von Mises {} at element {}", s.von_mises, s.element)
            })?;
        }
    }
    Ok(())
}

/// Two runs of a small experiment write byte-identical CSV files.
pub fn check_determinism(seed: u64) -> Check {
    use unfitted::experiment::{run_experiment, ExperimentConfig, ExperimentKind, Preset, RunOptions};
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut cfg = ExperimentConfig::preset(ExperimentKind::MultiInclusion, Preset::Desk);
    cfg.seed = seed;
    cfg.mesh.n0 = 16;
    cfg.mesh.levels = 2;
    cfg.inclusions.counts = vec![2];
    cfg.output.vtk = false;
    let mut outputs = Vec::new();
    for d in &dirs {
        cfg.output.dir = d.path().to_path_buf();
        let out = run_experiment(&cfg, &RunOptions::default()).map_err(|e| e.to_string())?;
        ensure(out.failures.is_empty(), || format!("run failed: {:?}", out.failures))?;
        let mut files: Vec<(String, Vec<u8>)> = out
            .files
            .iter()
            .filter(|f| f.extension().is_some_and(|e| e == "csv"))
            .map(|f| (f.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(f).unwrap()))
            .collect();
        files.sort();
        outputs.push(files);
    }
    ensure(!outputs[0].is_empty(), || "no CSV written".into())?;
    ensure(outputs[0] == outputs[1], || "CSV bytes differ between identical runs".into())
}
