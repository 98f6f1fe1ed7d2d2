//! Structured background meshes of the unit square and their classification
//! against a set of inclusions.

use std::collections::BTreeSet;
use std::io::Write;

use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::geometry::{EllipseLevelSet, InclusionSet, Point};

/// Uniform `n × n` quadrilateral mesh of `[0,1]²`.
///
/// Nodes are numbered `j·(n+1) + i`, elements `j·n + i`. Element nodes are
/// listed counter-clockwise starting at the lower-left corner; local edge `k`
/// joins local nodes `k` and `k+1 (mod 4)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeshLevel {
    n: usize,
    h: f64,
}

impl MeshLevel {
    pub fn new(n: usize) -> Result<Self> {
        if n < 1 {
            return Err(Error::InvalidInput("mesh needs at least one element per axis".into()));
        }
        Ok(Self { n, h: 1.0 / n as f64 })
    }

    /// Elements per axis.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn num_nodes(&self) -> usize {
        (self.n + 1) * (self.n + 1)
    }

    pub fn num_elements(&self) -> usize {
        self.n * self.n
    }

    pub fn node_ij(&self, node: usize) -> (usize, usize) {
        (node % (self.n + 1), node / (self.n + 1))
    }

    pub fn node_id(&self, i: usize, j: usize) -> usize {
        j * (self.n + 1) + i
    }

    pub fn node_coords(&self, node: usize) -> Point {
        let (i, j) = self.node_ij(node);
        Point::new(i as f64 * self.h, j as f64 * self.h)
    }

    pub fn element_ij(&self, e: usize) -> (usize, usize) {
        (e % self.n, e / self.n)
    }

    pub fn element_id(&self, i: usize, j: usize) -> usize {
        j * self.n + i
    }

    pub fn element_origin(&self, e: usize) -> Point {
        let (i, j) = self.element_ij(e);
        Point::new(i as f64 * self.h, j as f64 * self.h)
    }

    pub fn element_nodes(&self, e: usize) -> [usize; 4] {
        let (i, j) = self.element_ij(e);
        let n0 = self.node_id(i, j);
        let n3 = self.node_id(i, j + 1);
        [n0, n0 + 1, n3 + 1, n3]
    }

    pub fn element_corners(&self, e: usize) -> [Point; 4] {
        let o = self.element_origin(e);
        let h = self.h;
        [
            o,
            Point::new(o.x + h, o.y),
            Point::new(o.x + h, o.y + h),
            Point::new(o.x, o.y + h),
        ]
    }

    /// Neighbour across local edge `side` (0 bottom, 1 right, 2 top, 3 left).
    pub fn neighbor(&self, e: usize, side: usize) -> Option<usize> {
        let (i, j) = self.element_ij(e);
        match side {
            0 if j > 0 => Some(self.element_id(i, j - 1)),
            1 if i + 1 < self.n => Some(self.element_id(i + 1, j)),
            2 if j + 1 < self.n => Some(self.element_id(i, j + 1)),
            3 if i > 0 => Some(self.element_id(i - 1, j)),
            _ => None,
        }
    }

    /// The uniformly refined mesh.
    pub fn refined(&self) -> Self {
        Self {
            n: 2 * self.n,
            h: 0.5 * self.h,
        }
    }

    /// Parent element on the next coarser mesh (which must have `n/2`).
    pub fn parent(&self, e: usize) -> usize {
        let (i, j) = self.element_ij(e);
        (j / 2) * (self.n / 2) + i / 2
    }
}

/// Mesh hierarchy with `n0·2^k` elements per axis on level `k`.
pub fn build_hierarchy(n0: usize, levels: usize) -> Result<Vec<MeshLevel>> {
    if n0 < 2 || levels < 1 {
        return Err(Error::InvalidInput(format!(
            "hierarchy needs n0 >= 2 and levels >= 1 (got {n0}, {levels})"
        )));
    }
    let mut out = vec![MeshLevel::new(n0)?];
    for _ in 1..levels {
        let next = out.last().unwrap().refined();
        out.push(next);
    }
    Ok(out)
}

/// Subdomain index convention used across the crate: 0 is the matrix,
/// `i + 1` is inclusion `i`.
pub const MATRIX: usize = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementTag {
    Matrix,
    Inclusion(usize),
    Cut(usize),
}

/// Intersection of one interface with one element.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CutInfo {
    pub inclusion: usize,
    /// Local edges crossed by the interface, ascending.
    pub edges: [usize; 2],
    pub points: [Point; 2],
    /// Which local nodes lie inside the inclusion.
    pub inside: [bool; 4],
}

#[derive(Clone, Copy, Debug)]
pub struct ClassifyOptions {
    /// Nodal values with `|Λ| < snap·max(a, b)` are moved to `+snap·max(a, b)`.
    pub snap: f64,
    /// When false, near-zero nodal values are an error instead.
    pub perturb: bool,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        Self {
            snap: 1e-12,
            perturb: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Classification {
    mesh: MeshLevel,
    tags: Vec<ElementTag>,
    cuts: Vec<Option<CutInfo>>,
    active: Vec<Vec<usize>>,
    interface: Vec<Vec<usize>>,
}

impl Classification {
    pub fn mesh(&self) -> &MeshLevel {
        &self.mesh
    }

    pub fn num_inclusions(&self) -> usize {
        self.interface.len()
    }

    pub fn num_subdomains(&self) -> usize {
        self.interface.len() + 1
    }

    pub fn tag(&self, e: usize) -> ElementTag {
        self.tags[e]
    }

    pub fn tags(&self) -> &[ElementTag] {
        &self.tags
    }

    pub fn cut(&self, e: usize) -> Option<&CutInfo> {
        self.cuts[e].as_ref()
    }

    /// Active elements of subdomain `sub` (sorted).
    pub fn active(&self, sub: usize) -> &[usize] {
        &self.active[sub]
    }

    /// Cut elements of inclusion `i` (sorted).
    pub fn interface(&self, i: usize) -> &[usize] {
        &self.interface[i]
    }

    pub fn all_cut(&self) -> impl Iterator<Item = usize> + '_ {
        self.tags
            .iter()
            .enumerate()
            .filter(|(_, t)| matches!(t, ElementTag::Cut(_)))
            .map(|(e, _)| e)
    }

    pub fn is_active(&self, sub: usize, e: usize) -> bool {
        match (sub, self.tags[e]) {
            (MATRIX, ElementTag::Matrix) | (MATRIX, ElementTag::Cut(_)) => true,
            (MATRIX, _) => false,
            (s, ElementTag::Inclusion(i)) | (s, ElementTag::Cut(i)) => s == i + 1,
            _ => false,
        }
    }

    /// CSV dump: element, tag, inclusion, intersection coordinates.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["element", "tag", "inclusion", "x1", "y1", "x2", "y2"])?;
        for (e, tag) in self.tags.iter().enumerate() {
            let (name, inc) = match tag {
                ElementTag::Matrix => ("matrix", String::new()),
                ElementTag::Inclusion(i) => ("inclusion", i.to_string()),
                ElementTag::Cut(i) => ("cut", i.to_string()),
            };
            let mut rec = vec![e.to_string(), name.to_string(), inc];
            match &self.cuts[e] {
                Some(c) => {
                    for p in &c.points {
                        rec.push(format!("{:.12e}", p.x));
                        rec.push(format!("{:.12e}", p.y));
                    }
                }
                None => rec.extend(std::iter::repeat_n(String::new(), 4)),
            }
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn snapped_value(e: &EllipseLevelSet, p: &Point, opts: &ClassifyOptions) -> Option<f64> {
    let v = e.value(p);
    let tol = opts.snap * e.max_semi_axis();
    if v.abs() < tol {
        if opts.perturb {
            Some(tol)
        } else {
            None
        }
    } else {
        Some(v)
    }
}

/// Root of `Λ` on the segment `a → b`, bracketed by the (snapped) end values.
/// Linear interpolation start, then safeguarded Newton/bisection on the
/// exact level set.
pub(crate) fn edge_intersection(
    e: &EllipseLevelSet,
    a: &Point,
    b: &Point,
    va: f64,
    vb: f64,
) -> Point {
    let d = b - a;
    let q = e.line_quadratic(a, &d);
    let (mut lo, mut hi) = (0.0, 1.0);
    let (f_lo_sign, _f_hi_sign) = (va.signum(), vb.signum());
    let mut t = va / (va - vb);
    for _ in 0..30 {
        let f = q.eval(t);
        if f == 0.0 {
            break;
        }
        if f.signum() == f_lo_sign {
            lo = t;
        } else {
            hi = t;
        }
        if hi - lo < 1e-15 {
            break;
        }
        let df = q.derivative(t);
        let mut next = if df != 0.0 { t - f / df } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - t).abs() < 1e-16 {
            t = next;
            break;
        }
        t = next;
    }
    a + d * t
}

pub fn classify(mesh: &MeshLevel, inc: &InclusionSet) -> Result<Classification> {
    classify_with(mesh, inc, &ClassifyOptions::default())
}

pub fn classify_with(
    mesh: &MeshLevel,
    inc: &InclusionSet,
    opts: &ClassifyOptions,
) -> Result<Classification> {
    let n = mesh.n();
    let h = mesh.h();
    let mut tags = vec![ElementTag::Matrix; mesh.num_elements()];
    let mut cuts: Vec<Option<CutInfo>> = vec![None; mesh.num_elements()];
    let mut interface = vec![Vec::new(); inc.len()];

    for (ii, ell) in inc.iter().enumerate() {
        let (lo, hi) = ell.bounding_box();
        let clampi = |x: f64| -> usize { ((x / h).floor().max(0.0) as usize).min(n - 1) };
        let (i0, i1) = (clampi(lo.x).saturating_sub(1), (clampi(hi.x) + 1).min(n - 1));
        let (j0, j1) = (clampi(lo.y).saturating_sub(1), (clampi(hi.y) + 1).min(n - 1));

        let w = i1 - i0 + 2;
        let mut vals = vec![0.0; w * (j1 - j0 + 2)];
        for j in j0..=j1 + 1 {
            for i in i0..=i1 + 1 {
                let node = mesh.node_id(i, j);
                let p = mesh.node_coords(node);
                vals[(j - j0) * w + (i - i0)] =
                    snapped_value(ell, &p, opts).ok_or(Error::NodeOnInterface {
                        node,
                        inclusion: ii,
                        value: ell.value(&p),
                    })?;
            }
        }
        let val = |i: usize, j: usize| vals[(j - j0) * w + (i - i0)];

        for j in j0..=j1 {
            for i in i0..=i1 {
                let e = mesh.element_id(i, j);
                let s = [val(i, j), val(i + 1, j), val(i + 1, j + 1), val(i, j + 1)];
                let corners = mesh.element_corners(e);
                let inside = [s[0] > 0.0, s[1] > 0.0, s[2] > 0.0, s[3] > 0.0];
                let npos = inside.iter().filter(|&&b| b).count();
                let unresolved = |reason: &str| Error::UnresolvedInterface {
                    element: e,
                    reason: format!("inclusion {ii}: {reason}"),
                };
                // Edges with two outside endpoints may still be crossed twice.
                let hidden = |k: usize| -> bool {
                    let a = corners[k];
                    let b = corners[(k + 1) % 4];
                    !inside[k]
                        && !inside[(k + 1) % 4]
                        && ell.line_quadratic(&a, &(b - a)).max_on_unit() > 0.0
                };
                if npos == 0 {
                    let c = ell.center();
                    let holds_center = c.x >= corners[0].x
                        && c.x <= corners[2].x
                        && c.y >= corners[0].y
                        && c.y <= corners[2].y;
                    if (0..4).any(hidden) || holds_center {
                        return Err(unresolved("interface enters without crossing a node sign change"));
                    }
                    continue;
                }
                if tags[e] != ElementTag::Matrix {
                    return Err(unresolved("element touched by two inclusions"));
                }
                if npos == 4 {
                    tags[e] = ElementTag::Inclusion(ii);
                    continue;
                }
                let crossed: Vec<usize> =
                    (0..4).filter(|&k| inside[k] != inside[(k + 1) % 4]).collect();
                if crossed.len() != 2 {
                    return Err(unresolved("four sign changes"));
                }
                if (0..4).any(hidden) {
                    return Err(unresolved("edge crossed twice"));
                }
                let pts = [crossed[0], crossed[1]].map(|k| {
                    let k1 = (k + 1) % 4;
                    edge_intersection(ell, &corners[k], &corners[k1], s[k], s[k1])
                });
                tags[e] = ElementTag::Cut(ii);
                cuts[e] = Some(CutInfo {
                    inclusion: ii,
                    edges: [crossed[0], crossed[1]],
                    points: pts,
                    inside,
                });
                interface[ii].push(e);
            }
        }
        interface[ii].sort_unstable();
        if interface[ii].is_empty() {
            return Err(Error::UnresolvedInterface {
                element: usize::MAX,
                reason: format!("inclusion {ii} cuts no element"),
            });
        }
    }

    let mut active = vec![Vec::new(); inc.len() + 1];
    for (e, t) in tags.iter().enumerate() {
        match *t {
            ElementTag::Matrix => active[MATRIX].push(e),
            ElementTag::Inclusion(i) => active[i + 1].push(e),
            ElementTag::Cut(i) => {
                active[MATRIX].push(e);
                active[i + 1].push(e);
            }
        }
    }

    Ok(Classification {
        mesh: *mesh,
        tags,
        cuts,
        active,
        interface,
    })
}

/// Interior face between two elements.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Face {
    /// `[left, right]` for vertical faces, `[below, above]` for horizontal.
    pub elements: [usize; 2],
    pub vertical: bool,
    /// Unit normal pointing from `elements[0]` into `elements[1]`.
    pub normal: Vector2<f64>,
    pub start: Point,
    pub diameter: f64,
}

/// Ghost-penalty faces per subdomain (index as in [`MATRIX`]).
#[derive(Clone, Debug)]
pub struct GhostFaceSet {
    pub faces: Vec<Vec<Face>>,
}

impl GhostFaceSet {
    pub fn subdomain(&self, sub: usize) -> &[Face] {
        &self.faces[sub]
    }

    pub fn total(&self) -> usize {
        self.faces.iter().map(Vec::len).sum()
    }
}

fn make_face(mesh: &MeshLevel, e: usize, side: usize, nb: usize) -> Face {
    let (first, second) = if side == 1 || side == 2 { (e, nb) } else { (nb, e) };
    let vertical = side == 1 || side == 3;
    let o = mesh.element_origin(second);
    Face {
        elements: [first, second],
        vertical,
        normal: if vertical {
            Vector2::new(1.0, 0.0)
        } else {
            Vector2::new(0.0, 1.0)
        },
        start: o,
        diameter: mesh.h(),
    }
}

/// Faces of cut elements whose other side is also in the subdomain's active
/// mesh. Boundary faces of the background mesh and of the active mesh are
/// never included.
pub fn ghost_faces(cls: &Classification, mesh: &MeshLevel) -> GhostFaceSet {
    let nsub = cls.num_subdomains();
    let mut faces = vec![Vec::new(); nsub];
    for (sub, out) in faces.iter_mut().enumerate() {
        let mut seen = BTreeSet::new();
        let candidates: Vec<usize> = if sub == MATRIX {
            cls.all_cut().collect()
        } else {
            cls.interface(sub - 1).to_vec()
        };
        for e in candidates {
            for side in 0..4 {
                let Some(nb) = mesh.neighbor(e, side) else { continue };
                if !cls.is_active(sub, nb) {
                    continue;
                }
                let key = (e.min(nb), e.max(nb));
                if seen.insert(key) {
                    out.push(make_face(mesh, e, side, nb));
                }
            }
        }
        out.sort_by_key(|f| (f.elements[0], f.elements[1]));
    }
    GhostFaceSet { faces }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn centred_circle() -> InclusionSet {
        InclusionSet::single(EllipseLevelSet::circle(0.5, 0.5, 0.3).unwrap()).unwrap()
    }

    #[test]
    fn hierarchy_sizes() {
        let h = build_hierarchy(50, 5).unwrap();
        let counts: Vec<usize> = h.iter().map(|m| m.num_elements()).collect();
        assert_eq!(counts, vec![2500, 10_000, 40_000, 160_000, 640_000]);
        let h = build_hierarchy(2, 1).unwrap();
        assert_eq!(h.len(), 1);
        assert_eq!(h[0].h(), 0.5);
        let h = build_hierarchy(3, 3).unwrap();
        let hs: Vec<f64> = h.iter().map(|m| m.h()).collect();
        assert_eq!(hs, vec![1.0 / 3.0, 1.0 / 6.0, 1.0 / 12.0]);
        assert!(build_hierarchy(1, 2).is_err());
        assert!(build_hierarchy(4, 0).is_err());
    }

    #[test]
    fn element_topology() {
        let m = MeshLevel::new(4).unwrap();
        assert_eq!(m.element_nodes(0), [0, 1, 6, 5]);
        assert_eq!(m.element_nodes(15), [18, 19, 24, 23]);
        assert_eq!(m.neighbor(0, 0), None);
        assert_eq!(m.neighbor(0, 1), Some(1));
        assert_eq!(m.neighbor(0, 2), Some(4));
        assert_eq!(m.neighbor(5, 3), Some(4));
        let f = m.refined();
        assert_eq!(f.parent(f.element_id(3, 5)), m.element_id(1, 2));
    }

    #[test]
    fn no_inclusions_all_matrix() {
        let m = MeshLevel::new(6).unwrap();
        let c = classify(&m, &InclusionSet::empty()).unwrap();
        assert!(c.tags().iter().all(|t| *t == ElementTag::Matrix));
        assert_eq!(c.active(MATRIX).len(), 36);
        assert_eq!(ghost_faces(&c, &m).total(), 0);
    }

    /// Brute-force oracle: an element is cut iff its four nodal signs differ
    /// (valid here because the circle crosses no edge twice).
    #[test]
    fn circle_on_4x4_matches_sign_oracle() {
        let m = MeshLevel::new(4).unwrap();
        let inc = centred_circle();
        let c = classify(&m, &inc).unwrap();
        let e0 = inc.get(0);
        let mut cut = 0;
        let mut inside = 0;
        for e in 0..16 {
            let s: Vec<bool> = m
                .element_nodes(e)
                .iter()
                .map(|&nd| e0.value(&m.node_coords(nd)) > 0.0)
                .collect();
            if s.iter().all(|&b| b) {
                inside += 1;
            } else if s.iter().any(|&b| b) {
                cut += 1;
            }
        }
        assert_eq!(cut, 12);
        assert_eq!(inside, 0);
        assert_eq!(c.interface(0).len(), cut);
        assert_eq!(c.active(1).len(), cut + inside);
        // the central 2x2 block is cut, not inside
        for (i, j) in [(1, 1), (2, 1), (1, 2), (2, 2)] {
            assert_eq!(c.tag(m.element_id(i, j)), ElementTag::Cut(0));
        }
    }

    #[test]
    fn intersections_lie_on_interface_and_edges() {
        let m = MeshLevel::new(25).unwrap();
        let inc = InclusionSet::single(EllipseLevelSet::reference()).unwrap();
        let c = classify(&m, &inc).unwrap();
        let e0 = inc.get(0);
        for &e in c.interface(0) {
            let info = c.cut(e).unwrap();
            let corners = m.element_corners(e);
            for (k, p) in info.edges.iter().zip(info.points.iter()) {
                assert!(e0.value(p).abs() <= 1e-12, "residual {}", e0.value(p));
                let a = corners[*k];
                let b = corners[(*k + 1) % 4];
                let cross = (b - a).perp(&(p - a));
                assert!(cross.abs() < 1e-14);
            }
        }
    }

    #[test]
    fn partition_identity_reference_ellipse() {
        let m = MeshLevel::new(50).unwrap();
        let inc = InclusionSet::single(EllipseLevelSet::reference()).unwrap();
        let c = classify(&m, &inc).unwrap();
        assert_eq!(c.active(0).len() + c.active(1).len() - c.interface(0).len(), 2500);
    }

    #[test]
    fn two_interfaces_in_one_element_is_an_error() {
        let m = MeshLevel::new(4).unwrap();
        let inc = InclusionSet::new(vec![
            EllipseLevelSet::circle(0.25, 0.25, 0.08).unwrap(),
            EllipseLevelSet::circle(0.5, 0.5, 0.08).unwrap(),
        ])
        .unwrap();
        assert!(matches!(
            classify(&m, &inc),
            Err(Error::UnresolvedInterface { .. })
        ));
    }

    #[test]
    fn small_inclusion_inside_one_element_is_an_error() {
        let m = MeshLevel::new(4).unwrap();
        let inc = InclusionSet::single(EllipseLevelSet::circle(0.6, 0.6, 0.05).unwrap()).unwrap();
        assert!(classify(&m, &inc).is_err());
    }

    #[test]
    fn node_on_interface_is_snapped_or_rejected() {
        let m = MeshLevel::new(4).unwrap();
        // passes exactly through node (0.75, 0.5)
        let inc = InclusionSet::single(EllipseLevelSet::circle(0.5, 0.5, 0.25).unwrap()).unwrap();
        let strict = ClassifyOptions {
            perturb: false,
            ..Default::default()
        };
        assert!(matches!(
            classify_with(&m, &inc, &strict),
            Err(Error::NodeOnInterface { .. })
        ));
        let c = classify(&m, &inc).unwrap();
        assert!(!c.interface(0).is_empty());
    }

    #[test]
    fn ghost_faces_on_circle_match_exhaustive_scan() {
        let m = MeshLevel::new(4).unwrap();
        let c = classify(&m, &centred_circle()).unwrap();
        let g = ghost_faces(&c, &m);
        // exhaustive scan over every interior face of the background mesh
        let mut expect_inc = 0;
        let mut expect_mat = 0;
        for e in 0..16 {
            for side in [1, 2] {
                if let Some(nb) = m.neighbor(e, side) {
                    let cut_e = matches!(c.tag(e), ElementTag::Cut(_));
                    let cut_nb = matches!(c.tag(nb), ElementTag::Cut(_));
                    if (cut_e || cut_nb) && c.is_active(1, e) && c.is_active(1, nb) {
                        expect_inc += 1;
                    }
                    if (cut_e || cut_nb) && c.is_active(0, e) && c.is_active(0, nb) {
                        expect_mat += 1;
                    }
                }
            }
        }
        assert_eq!(g.subdomain(1).len(), expect_inc);
        assert_eq!(g.subdomain(0).len(), expect_mat);
        for f in g.faces.iter().flatten() {
            let [a, b] = f.elements;
            assert!(m.neighbor(a, if f.vertical { 1 } else { 2 }) == Some(b));
        }
    }

    #[test]
    fn csv_dump_has_one_row_per_element() {
        let m = MeshLevel::new(4).unwrap();
        let c = classify(&m, &centred_circle()).unwrap();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 17);
        assert!(text.starts_with("element,tag,inclusion"));
    }
}
