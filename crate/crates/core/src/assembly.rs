//! Assembly of the stabilized stiffness matrix, the interface coupling
//! matrix and the load vector.

use std::path::Path;

use nalgebra::{DVector, SMatrix, SVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{InclusionSet, Point};
use crate::linalg::{self, Csr, PatternBuilder};
use crate::mesh::{
    classify_with, ghost_faces, Classification, ClassifyOptions, GhostFaceSet, MeshLevel, MATRIX,
};
use crate::quadrature::{cut_quadrature, gauss_legendre, CutQuadrature, CutRule, QuadPoint};
use crate::space::{
    build_enriched_space, build_multiplier_space, local_coords, shape, shape_grad, EnrichedSpace,
    MultiplierSpace,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PlaneModel {
    #[default]
    PlaneStrain,
    PlaneStress,
}

/// Isotropic two-phase material. `e_inclusion` holds one modulus per
/// inclusion, or a single value shared by all of them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub e_matrix: f64,
    pub e_inclusion: Vec<f64>,
    pub nu: f64,
    #[serde(default)]
    pub model: PlaneModel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaterialCase {
    Soft,
    Hard,
    Equal,
}

impl MaterialCase {
    pub const ALL: [MaterialCase; 3] = [MaterialCase::Soft, MaterialCase::Hard, MaterialCase::Equal];

    pub fn name(&self) -> &'static str {
        match self {
            MaterialCase::Soft => "soft",
            MaterialCase::Hard => "hard",
            MaterialCase::Equal => "equal",
        }
    }

    pub fn material(&self) -> Material {
        let (em, ei) = match self {
            MaterialCase::Soft => (4e5, 1e5),
            MaterialCase::Hard => (1e5, 4e5),
            MaterialCase::Equal => (2e5, 2e5),
        };
        Material::new(em, ei, 0.3).expect("valid preset")
    }
}

impl Material {
    pub fn new(e_matrix: f64, e_inclusion: f64, nu: f64) -> Result<Self> {
        let m = Self {
            e_matrix,
            e_inclusion: vec![e_inclusion],
            nu,
            model: PlaneModel::PlaneStrain,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0 && self.nu < 0.5) {
            return Err(Error::InvalidInput(format!("Poisson ratio {} not in (0, 0.5)", self.nu)));
        }
        if self.e_inclusion.is_empty() {
            return Err(Error::InvalidInput("no inclusion modulus given".into()));
        }
        if !(self.e_matrix > 0.0) || self.e_inclusion.iter().any(|e| !(*e > 0.0)) {
            return Err(Error::InvalidInput("Young's moduli must be positive".into()));
        }
        Ok(())
    }

    /// Young's modulus of subdomain `sub` (0 = matrix).
    pub fn young(&self, sub: usize) -> f64 {
        if sub == MATRIX {
            self.e_matrix
        } else {
            let k = (sub - 1).min(self.e_inclusion.len() - 1);
            self.e_inclusion[k]
        }
    }

    /// In-plane Lamé parameters `(λ, μ)` of subdomain `sub`.
    pub fn lame(&self, sub: usize) -> (f64, f64) {
        let e = self.young(sub);
        let nu = self.nu;
        let mu = e / (2.0 * (1.0 + nu));
        let lambda = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
        match self.model {
            PlaneModel::PlaneStrain => (lambda, mu),
            PlaneModel::PlaneStress => (2.0 * lambda * mu / (lambda + 2.0 * mu), mu),
        }
    }
}

/// Scaling of the ghost-penalty coefficient.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GhostScaling {
    /// `ε_G · h_G · (2μ + λ)`: same units as the stiffness.
    #[default]
    Stiffness,
    /// `ε_G · h_G / (2μ + λ)`.
    Inverse,
}

#[derive(Clone, Copy, Debug)]
pub struct AssemblyOptions {
    pub eps_g: f64,
    pub ghost_scaling: GhostScaling,
    pub traction: f64,
    pub rule: CutRule,
    pub classify: ClassifyOptions,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        Self {
            eps_g: 0.1,
            ghost_scaling: GhostScaling::Stiffness,
            traction: 1e4,
            rule: CutRule::default(),
            classify: ClassifyOptions::default(),
        }
    }
}

/// Everything geometric about one mesh level.
#[derive(Clone, Debug)]
pub struct Level {
    pub mesh: MeshLevel,
    pub inclusions: InclusionSet,
    pub cls: Classification,
    pub faces: GhostFaceSet,
    pub cut_rules: Vec<Option<CutQuadrature>>,
    pub space: EnrichedSpace,
    pub mult: MultiplierSpace,
}

pub fn build_level(mesh: &MeshLevel, inc: &InclusionSet, opts: &AssemblyOptions) -> Result<Level> {
    let cls = classify_with(mesh, inc, &opts.classify)?;
    let faces = ghost_faces(&cls, mesh);
    let mut cut_rules = vec![None; mesh.num_elements()];
    for e in cls.all_cut() {
        let c = cls.cut(e).unwrap();
        cut_rules[e] = Some(cut_quadrature(
            &mesh.element_corners(e),
            c,
            inc.get(c.inclusion),
            &opts.rule,
        ));
    }
    let space = build_enriched_space(&cls, mesh);
    let mult = build_multiplier_space(&cls, mesh)?;
    Ok(Level {
        mesh: *mesh,
        inclusions: inc.clone(),
        cls,
        faces,
        cut_rules,
        space,
        mult,
    })
}

impl Level {
    /// Quadrature for element `e` restricted to subdomain `sub`, or `None`
    /// if the element is uncut (use the tensor rule).
    pub fn cut_rule(&self, e: usize, sub: usize) -> Option<&[QuadPoint]> {
        self.cut_rules[e]
            .as_ref()
            .map(|q| q.sides[usize::from(sub != MATRIX)].as_slice())
    }

    /// Quadrature points of element `e` on subdomain `sub` (tensor Gauss of
    /// order `n` on uncut elements).
    pub fn element_points(&self, e: usize, sub: usize, n: usize) -> Vec<QuadPoint> {
        match self.cut_rule(e, sub) {
            Some(q) => q.to_vec(),
            None => crate::quadrature::square_rule(&self.mesh.element_origin(e), self.mesh.h(), n),
        }
    }
}

type Mat8 = SMatrix<f64, 8, 8>;
type Strain = SMatrix<f64, 3, 8>;

/// Strain-displacement matrix at local coordinates.
fn strain_matrix(xi: f64, eta: f64, h: f64) -> Strain {
    let g = shape_grad(xi, eta, h);
    let mut b = Strain::zeros();
    for a in 0..4 {
        b[(0, 2 * a)] = g[a][0];
        b[(1, 2 * a + 1)] = g[a][1];
        b[(2, 2 * a)] = g[a][1];
        b[(2, 2 * a + 1)] = g[a][0];
    }
    b
}

fn elasticity(lambda: f64, mu: f64) -> SMatrix<f64, 3, 3> {
    SMatrix::<f64, 3, 3>::new(
        lambda + 2.0 * mu,
        lambda,
        0.0,
        lambda,
        lambda + 2.0 * mu,
        0.0,
        0.0,
        0.0,
        mu,
    )
}

/// Uncut element stiffness split as `λ·Kλ + μ·Kμ`; independent of `h` in 2D.
pub fn reference_stiffness() -> (Mat8, Mat8) {
    let (x, w) = gauss_legendre(2);
    let mut kl = Mat8::zeros();
    let mut km = Mat8::zeros();
    for j in 0..2 {
        for i in 0..2 {
            let b = strain_matrix(x[i], x[j], 1.0);
            let wt = w[i] * w[j];
            kl += b.transpose() * elasticity(1.0, 0.0) * b * wt;
            km += b.transpose() * elasticity(0.0, 1.0) * b * wt;
        }
    }
    (kl, km)
}

/// Element stiffness on an arbitrary point set of element `e`.
pub fn element_stiffness(
    mesh: &MeshLevel,
    e: usize,
    points: &[QuadPoint],
    lambda: f64,
    mu: f64,
) -> Mat8 {
    let c = elasticity(lambda, mu);
    let mut k = Mat8::zeros();
    for q in points {
        let (xi, eta) = local_coords(mesh, e, &q.x);
        let b = strain_matrix(xi, eta, mesh.h());
        k += b.transpose() * c * b * q.w;
    }
    k
}

fn scatter(acc: &mut linalg::CsrAccumulator, dofs: &[Option<usize>], k: &Mat8) {
    for (i, di) in dofs.iter().enumerate() {
        let Some(di) = di else { continue };
        for (j, dj) in dofs.iter().enumerate() {
            let Some(dj) = dj else { continue };
            let v = k[(i, j)];
            if v != 0.0 {
                acc.add(*di, *dj, v);
            }
        }
    }
}

fn present(dofs: &[Option<usize>]) -> Vec<usize> {
    dofs.iter().flatten().copied().collect()
}

/// Dofs of the two elements of a face in subdomain `sub`.
fn face_dofs(space: &EnrichedSpace, elements: [usize; 2], sub: usize) -> [Option<usize>; 16] {
    let mut out = [None; 16];
    out[..8].copy_from_slice(&space.element_dofs(elements[0], sub));
    out[8..].copy_from_slice(&space.element_dofs(elements[1], sub));
    out
}

/// Normal derivatives of the 8 shape functions (4 per element) of both
/// elements of a face at face point `p`; the first element's enter with a
/// minus sign so that the sum is the jump.
fn face_jump(mesh: &MeshLevel, elements: [usize; 2], normal: &Vector2<f64>, p: &Point) -> [f64; 8] {
    let mut j = [0.0; 8];
    for (side, &e) in elements.iter().enumerate() {
        let (xi, eta) = local_coords(mesh, e, p);
        let g = shape_grad(xi, eta, mesh.h());
        let sign = if side == 0 { -1.0 } else { 1.0 };
        for a in 0..4 {
            j[4 * side + a] = sign * (g[a][0] * normal.x + g[a][1] * normal.y);
        }
    }
    j
}

fn ghost_coefficient(mat: &Material, sub: usize, h: f64, opts: &AssemblyOptions) -> f64 {
    let (lambda, mu) = mat.lame(sub);
    match opts.ghost_scaling {
        GhostScaling::Stiffness => opts.eps_g * h * (2.0 * mu + lambda),
        GhostScaling::Inverse => opts.eps_g * h / (2.0 * mu + lambda),
    }
}

fn stiffness_pattern(level: &Level, with_ghost: bool) -> PatternBuilder {
    let space = &level.space;
    let mut pb = PatternBuilder::new(space.dim(), space.dim());
    for s in 0..space.num_subdomains() {
        for &e in level.cls.active(s) {
            let d = present(&space.element_dofs(e, s));
            pb.add_block(&d, &d);
        }
        if with_ghost {
            for f in level.faces.subdomain(s) {
                let d = present(&face_dofs(space, f.elements, s));
                pb.add_block(&d, &d);
            }
        }
    }
    pb
}

fn add_stiffness(level: &Level, mat: &Material, acc: &mut linalg::CsrAccumulator) {
    let (kl, km) = reference_stiffness();
    let space = &level.space;
    for s in 0..space.num_subdomains() {
        let (lambda, mu) = mat.lame(s);
        let k_full = kl * lambda + km * mu;
        for &e in level.cls.active(s) {
            let dofs = space.element_dofs(e, s);
            match level.cut_rule(e, s) {
                Some(pts) => {
                    let k = element_stiffness(&level.mesh, e, pts, lambda, mu);
                    scatter(acc, &dofs, &k);
                }
                None => scatter(acc, &dofs, &k_full),
            }
        }
    }
}

fn add_ghost(level: &Level, mat: &Material, opts: &AssemblyOptions, acc: &mut linalg::CsrAccumulator) {
    if opts.eps_g == 0.0 {
        return;
    }
    let mesh = &level.mesh;
    let (gx, gw) = gauss_legendre(3);
    for s in 0..level.space.num_subdomains() {
        for f in level.faces.subdomain(s) {
            let coef = ghost_coefficient(mat, s, f.diameter, opts);
            let dofs = face_dofs(&level.space, f.elements, s);
            let tangent = Vector2::new(f.normal.y, f.normal.x);
            for (t, w) in gx.iter().zip(&gw) {
                let p = f.start + tangent * (t * f.diameter);
                let jmp = face_jump(mesh, f.elements, &f.normal, &p);
                let wt = coef * w * f.diameter;
                // component c of local node a sits at 2a + c in each 8-block
                for (ia, ja) in jmp.iter().enumerate() {
                    for (ib, jb) in jmp.iter().enumerate() {
                        let v = wt * ja * jb;
                        for c in 0..2 {
                            let di = dofs[2 * (ia % 4) + c + 8 * (ia / 4)];
                            let dj = dofs[2 * (ib % 4) + c + 8 * (ib / 4)];
                            if let (Some(di), Some(dj)) = (di, dj) {
                                acc.add(di, dj, v);
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Stiffness matrix without stabilization.
pub fn assemble_stiffness(level: &Level, mat: &Material) -> Csr {
    let mut acc = stiffness_pattern(level, false).finish();
    add_stiffness(level, mat, &mut acc);
    linalg::symmetrize(&acc.finish())
}

/// Ghost-penalty matrix alone.
pub fn assemble_ghost_penalty(level: &Level, mat: &Material, opts: &AssemblyOptions) -> Csr {
    let mut acc = stiffness_pattern(level, true).finish();
    add_ghost(level, mat, opts, &mut acc);
    linalg::symmetrize(&acc.finish())
}

/// Stiffness plus ghost penalty in one pattern.
pub fn assemble_stabilized(level: &Level, mat: &Material, opts: &AssemblyOptions) -> Csr {
    let mut acc = stiffness_pattern(level, true).finish();
    add_stiffness(level, mat, &mut acc);
    add_ghost(level, mat, opts, &mut acc);
    linalg::symmetrize(&acc.finish())
}

/// Interface coupling matrix: `(B u)_k = ∫_Γ (u_M − u_I) ψ_k`.
pub fn assemble_coupling(level: &Level) -> Result<Csr> {
    let space = &level.space;
    let mult = &level.mult;
    let mesh = &level.mesh;
    let mut pb = PatternBuilder::new(mult.dim(), space.dim());
    for i in 0..mult.num_interfaces() {
        for &e in level.cls.interface(i) {
            let nodes = mesh.element_nodes(e);
            let dm = present(&space.element_dofs(e, MATRIX));
            let di = present(&space.element_dofs(e, i + 1));
            for nd in nodes {
                let g = mult.group(i, nd).expect("cut-element node has a group");
                for c in 0..2 {
                    let r = mult.row(i, g, c);
                    for &d in dm.iter().chain(&di) {
                        pb.add(r, d);
                    }
                }
            }
        }
    }
    let mut acc = pb.finish();
    for i in 0..mult.num_interfaces() {
        for &e in level.cls.interface(i) {
            let nodes = mesh.element_nodes(e);
            let groups: Vec<usize> = nodes.iter().map(|&n| mult.group(i, n).unwrap()).collect();
            let dm = space.element_dofs(e, MATRIX);
            let di = space.element_dofs(e, i + 1);
            let rule = level.cut_rules[e].as_ref().expect("cut element has a rule");
            for q in &rule.interface {
                let (xi, eta) = local_coords(mesh, e, &q.x);
                let n = shape(xi, eta);
                // ψ_g restricted to this element
                let mut psi: Vec<(usize, f64)> = Vec::with_capacity(4);
                for a in 0..4 {
                    match psi.iter_mut().find(|p| p.0 == groups[a]) {
                        Some(p) => p.1 += n[a],
                        None => psi.push((groups[a], n[a])),
                    }
                }
                for &(g, pv) in &psi {
                    for b in 0..4 {
                        let v = q.w * pv * n[b];
                        for c in 0..2 {
                            let r = mult.row(i, g, c);
                            if let Some(d) = dm[2 * b + c] {
                                acc.add(r, d, v);
                            }
                            if let Some(d) = di[2 * b + c] {
                                acc.add(r, d, -v);
                            }
                        }
                    }
                }
            }
        }
    }
    let b = acc.finish();
    let tol = 1e-14 * mesh.h();
    for (r, row) in b.row_iter().enumerate() {
        let norm = row.values().iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < tol {
            return Err(Error::RankDeficient { row: r, norm });
        }
    }
    Ok(b)
}

/// Load vector for a uniform traction `t` in `+x` on the right edge.
pub fn assemble_load(level: &Level, traction: f64) -> DVector<f64> {
    let space = &level.space;
    let mesh = &level.mesh;
    let mut b = DVector::zeros(space.dim());
    if traction == 0.0 {
        return b;
    }
    let n = mesh.n();
    let (gx, gw) = gauss_legendre(2);
    for j in 0..n {
        let e = mesh.element_id(n - 1, j);
        let dofs = space.element_dofs(e, MATRIX);
        for (t, w) in gx.iter().zip(&gw) {
            let nv = shape(1.0, *t);
            for a in 0..4 {
                if let Some(d) = dofs[2 * a] {
                    b[d] += traction * w * mesh.h() * nv[a];
                }
            }
        }
    }
    b
}

/// `A` (stiffness + ghost penalty), `B`, load and `diag(A)`.
#[derive(Clone, Debug)]
pub struct AssembledSystem {
    pub a: Csr,
    pub b: Csr,
    pub rhs: DVector<f64>,
    pub d: DVector<f64>,
}

impl AssembledSystem {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.nrows()
    }

    /// Matrix Market files `A.mtx`, `B.mtx` and the load as `b.txt`.
    pub fn export(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        linalg::write_matrix_market(&self.a, &dir.join("A.mtx"))?;
        linalg::write_matrix_market(&self.b, &dir.join("B.mtx"))?;
        linalg::write_vector(&self.rhs, &dir.join("b.txt"))
    }
}

pub fn assemble_system(level: &Level, mat: &Material, opts: &AssemblyOptions) -> Result<AssembledSystem> {
    mat.validate()?;
    let a = assemble_stabilized(level, mat, opts);
    let b = assemble_coupling(level)?;
    let rhs = assemble_load(level, opts.traction);
    let d = linalg::diagonal(&a);
    Ok(AssembledSystem { a, b, rhs, d })
}

/// Values and gradients of a discrete field at a point of element `e` in
/// subdomain `sub`: returns `(u, ∇u)` with `∇u[(c, k)] = ∂u_c/∂x_k`.
pub fn evaluate_field(
    space: &EnrichedSpace,
    u: &DVector<f64>,
    e: usize,
    sub: usize,
    p: &Point,
) -> (SVector<f64, 2>, SMatrix<f64, 2, 2>) {
    let mesh = space.mesh();
    let (xi, eta) = local_coords(mesh, e, p);
    let n = shape(xi, eta);
    let g = shape_grad(xi, eta, mesh.h());
    let dofs = space.element_dofs(e, sub);
    let mut val = SVector::<f64, 2>::zeros();
    let mut grad = SMatrix::<f64, 2, 2>::zeros();
    for a in 0..4 {
        for c in 0..2 {
            if let Some(d) = dofs[2 * a + c] {
                val[c] += n[a] * u[d];
                grad[(c, 0)] += g[a][0] * u[d];
                grad[(c, 1)] += g[a][1] * u[d];
            }
        }
    }
    (val, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::EllipseLevelSet;
    use crate::mesh::MeshLevel;

    fn level(n: usize, inc: InclusionSet) -> Level {
        build_level(&MeshLevel::new(n).unwrap(), &inc, &AssemblyOptions::default()).unwrap()
    }

    fn circle_level(n: usize) -> Level {
        level(
            n,
            InclusionSet::single(EllipseLevelSet::circle(0.5, 0.5, 0.3).unwrap()).unwrap(),
        )
    }

    #[test]
    fn lame_parameters() {
        let m = Material::new(1.0, 1.0, 0.3).unwrap();
        let (l, mu) = m.lame(0);
        assert!((l - 0.3 / (1.3 * 0.4)).abs() < 1e-15);
        assert!((mu - 1.0 / 2.6).abs() < 1e-15);
        assert!(Material::new(1.0, 1.0, 0.5).is_err());
        assert!(Material::new(-1.0, 1.0, 0.3).is_err());
    }

    /// 10×10 Gauss oracle for the uncut element matrix.
    #[test]
    fn uncut_element_matches_high_order_oracle() {
        let (kl, km) = reference_stiffness();
        let mat = Material::new(1.0, 1.0, 0.3).unwrap();
        let (l, mu) = mat.lame(0);
        let k = kl * l + km * mu;
        let mesh = MeshLevel::new(1).unwrap();
        let pts = crate::quadrature::square_rule(&Point::origin(), 1.0, 10);
        let oracle = element_stiffness(&mesh, 0, &pts, l, mu);
        assert!((k - oracle).abs().max() < 1e-12);
        // symmetric with the three rigid modes in the kernel
        assert!((k - k.transpose()).abs().max() < 1e-15);
        let corners = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
        let mut rot = SVector::<f64, 8>::zeros();
        for (a, (x, y)) in corners.iter().enumerate() {
            rot[2 * a] = -y;
            rot[2 * a + 1] = *x;
        }
        assert!((k * rot).norm() < 1e-13);
    }

    #[test]
    fn floating_inclusion_rigid_modes_in_kernel() {
        let lv = circle_level(8);
        let mat = MaterialCase::Soft.material();
        let a = assemble_stabilized(&lv, &mat, &AssemblyOptions::default());
        let r = lv.space.range(1);
        let anorm = linalg::norm_inf(&a);
        for mode in 0..3 {
            let mut z = DVector::zeros(lv.space.dim());
            for d in r.clone() {
                let (_, nd, c) = lv.space.dof_info(d);
                let p = lv.mesh.node_coords(nd);
                z[d] = match (mode, c) {
                    (0, 0) | (1, 1) => 1.0,
                    (2, 0) => -(p.y - 0.5),
                    (2, 1) => p.x - 0.5,
                    _ => 0.0,
                };
            }
            let az = linalg::spmv(&a, &z);
            assert!(az.amax() < 1e-10 * anorm, "mode {mode}: {}", az.amax());
        }
    }

    #[test]
    fn stabilized_matrix_is_symmetric() {
        let lv = circle_level(8);
        let a = assemble_stabilized(&lv, &MaterialCase::Hard.material(), &AssemblyOptions::default());
        let d = linalg::to_dense(&a);
        assert_eq!(d, d.transpose());
    }

    #[test]
    fn ghost_penalty_annihilates_bilinear_fields_and_vanishes_for_zero_eps() {
        let lv = circle_level(8);
        let mat = MaterialCase::Soft.material();
        let opts = AssemblyOptions::default();
        let g = assemble_ghost_penalty(&lv, &mat, &opts);
        assert!(linalg::norm_inf(&g) > 0.0);
        let u = DVector::from_fn(lv.space.dim(), |d, _| {
            let p = lv.space.dof_coords(d);
            let (_, _, c) = lv.space.dof_info(d);
            // bilinear and zero on the clamped edge
            if c == 0 {
                p.x + 2.0 * p.x * p.y
            } else {
                3.0 * p.x * p.y
            }
        });
        assert!(linalg::spmv(&g, &u).amax() < 1e-9 * linalg::norm_inf(&g));
        let zero = AssemblyOptions {
            eps_g: 0.0,
            ..opts
        };
        assert_eq!(linalg::norm_inf(&assemble_ghost_penalty(&lv, &mat, &zero)), 0.0);
    }

    /// Two unit elements sharing the face x = 1; the face integral of the
    /// squared jump for hand-set dofs against a 5-point Gauss oracle.
    #[test]
    fn single_face_against_line_oracle() {
        let mesh = MeshLevel::new(2).unwrap();
        let h = mesh.h();
        let normal = Vector2::new(1.0, 0.0);
        let elements = [mesh.element_id(0, 0), mesh.element_id(1, 0)];
        // u_x nodal values on the 6 nodes of the two elements
        let vals = |nd: usize| -> f64 {
            let p = mesh.node_coords(nd);
            (3.0 * p.x * p.x + p.y).sin()
        };
        let jump_at = |y: f64| -> f64 {
            let p = Point::new(h, y);
            let j = face_jump(&mesh, elements, &normal, &p);
            let mut s = 0.0;
            for (side, &e) in elements.iter().enumerate() {
                for (a, nd) in mesh.element_nodes(e).iter().enumerate() {
                    s += j[4 * side + a] * vals(*nd);
                }
            }
            s
        };
        let (gx, gw) = gauss_legendre(3);
        let ours: f64 = gx.iter().zip(&gw).map(|(t, w)| w * h * jump_at(t * h).powi(2)).sum();
        let (ox, ow) = gauss_legendre(5);
        let oracle: f64 = ox.iter().zip(&ow).map(|(t, w)| w * h * jump_at(t * h).powi(2)).sum();
        assert!((ours - oracle).abs() < 1e-12 * oracle.abs().max(1.0));
        assert!(oracle > 0.0);
    }

    #[test]
    fn coupling_vanishes_on_continuous_fields_and_has_full_rank() {
        let lv = circle_level(8);
        let b = assemble_coupling(&lv).unwrap();
        let u = DVector::from_fn(lv.space.dim(), |d, _| {
            let p = lv.space.dof_coords(d);
            (p.x * 3.0).sin() + p.y * p.y
        });
        assert!(linalg::spmv(&b, &u).amax() < 1e-14);
        let dense = linalg::to_dense(&b);
        let sv = dense.clone().svd(false, false).singular_values;
        let tol = sv.max() * 1e-10;
        assert_eq!(sv.iter().filter(|s| **s > tol).count(), b.nrows());
    }

    #[test]
    fn load_totals_and_lumping() {
        let lv = level(2, InclusionSet::empty());
        let b = assemble_load(&lv, 1e4);
        let total: f64 = (0..lv.space.dim())
            .filter(|d| lv.space.dof_info(*d).2 == 0)
            .map(|d| b[d])
            .sum();
        assert!((total - 1e4).abs() < 1e-9 * 1e4);
        let h = 0.5;
        let node = |i, j| lv.space.dof(0, lv.mesh.node_id(i, j), 0).unwrap();
        assert!((b[node(2, 1)] - 1e4 * h).abs() < 1e-9);
        assert!((b[node(2, 0)] - 1e4 * h / 2.0).abs() < 1e-9);
        assert!((b[node(2, 2)] - 1e4 * h / 2.0).abs() < 1e-9);
        assert_eq!(assemble_load(&lv, 0.0).amax(), 0.0);
    }
}
