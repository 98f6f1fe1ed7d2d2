//! Quadrature on uncut elements, on the two sides of a cut element and on
//! the interface segment inside it.
//!
//! The curved part of a side is integrated with a ray map from a polygon
//! vertex onto the exact level set, so areas and Q1 products converge
//! spectrally instead of being limited by the chord approximation.

use nalgebra::Vector2;

use crate::geometry::{EllipseLevelSet, LineQuadratic, Point};
use crate::mesh::CutInfo;

/// Anything the cut rules can integrate against: a smooth level set whose
/// restriction to a line is available as a quadratic.
pub trait Implicit {
    fn value(&self, p: &Point) -> f64;
    fn gradient(&self, p: &Point) -> Vector2<f64>;
    fn line_quadratic(&self, origin: &Point, dir: &Vector2<f64>) -> LineQuadratic;
}

impl Implicit for EllipseLevelSet {
    fn value(&self, p: &Point) -> f64 {
        EllipseLevelSet::value(self, p)
    }
    fn gradient(&self, p: &Point) -> Vector2<f64> {
        EllipseLevelSet::gradient(self, p)
    }
    fn line_quadratic(&self, origin: &Point, dir: &Vector2<f64>) -> LineQuadratic {
        EllipseLevelSet::line_quadratic(self, origin, dir)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadPoint {
    pub x: Point,
    pub w: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InterfacePoint {
    pub x: Point,
    pub w: f64,
    /// Unit normal pointing out of the inclusion.
    pub normal: Vector2<f64>,
}

/// Rules for one cut element. `sides[0]` is the matrix side, `sides[1]` the
/// inclusion side.
#[derive(Clone, Debug, Default)]
pub struct CutQuadrature {
    pub sides: [Vec<QuadPoint>; 2],
    pub interface: Vec<InterfacePoint>,
}

impl CutQuadrature {
    pub fn side_area(&self, side: usize) -> f64 {
        self.sides[side].iter().map(|q| q.w).sum()
    }

    pub fn interface_length(&self) -> f64 {
        self.interface.iter().map(|q| q.w).sum()
    }
}

/// Orders of the one-dimensional Gauss rules used by the curved maps.
#[derive(Clone, Copy, Debug)]
pub struct CutRule {
    pub tangential: usize,
    pub radial: usize,
    pub interface: usize,
}

impl Default for CutRule {
    fn default() -> Self {
        Self {
            tangential: 8,
            radial: 3,
            interface: 5,
        }
    }
}

/// Gauss-Legendre points and weights on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            if n == 1 {
                p1 = z;
                p0 = 1.0;
            } else {
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
            }
            // p1 = P_n(z), p0 = P_{n-1}(z)
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        if n == 1 {
            z = 0.0;
            dp = 1.0;
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = 0.5 * (1.0 - z);
        x[n - 1 - i] = 0.5 * (1.0 + z);
        w[i] = 0.5 * wi;
        w[n - 1 - i] = 0.5 * wi;
    }
    (x, w)
}

/// Tensor Gauss rule on the square `[o, o + h]²`.
pub fn square_rule(o: &Point, h: f64, n: usize) -> Vec<QuadPoint> {
    let (x, w) = gauss_legendre(n);
    let mut out = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            out.push(QuadPoint {
                x: Point::new(o.x + h * x[i], o.y + h * x[j]),
                w: h * h * w[i] * w[j],
            });
        }
    }
    out
}

// Symmetric 6-point rule, exact for degree 4.
const TRI6: [(f64, f64, f64); 6] = [
    (0.108103018168070, 0.445948490915965, 0.223381589678011),
    (0.445948490915965, 0.108103018168070, 0.223381589678011),
    (0.445948490915965, 0.445948490915965, 0.223381589678011),
    (0.816847572980459, 0.091576213509771, 0.109951743655322),
    (0.091576213509771, 0.816847572980459, 0.109951743655322),
    (0.091576213509771, 0.091576213509771, 0.109951743655322),
];

fn triangle_area(a: &Point, b: &Point, c: &Point) -> f64 {
    0.5 * (b - a).perp(&(c - a)).abs()
}

fn push_triangle(a: &Point, b: &Point, c: &Point, out: &mut Vec<QuadPoint>) {
    let area = triangle_area(a, b, c);
    if area == 0.0 {
        return;
    }
    for &(l1, l2, w) in &TRI6 {
        let l0 = 1.0 - l1 - l2;
        let x = Point::from(a.coords * l0 + b.coords * l1 + c.coords * l2);
        out.push(QuadPoint { x, w: w * area });
    }
}

/// Root of `q` closest to `target`.
fn nearest_root(q: &LineQuadratic, target: f64) -> Option<f64> {
    q.roots()
        .into_iter()
        .min_by(|a, b| (a - target).abs().partial_cmp(&(b - target).abs()).unwrap())
}

/// Region bounded by the segments `v→xa`, `v→xb` and the level-set arc
/// between `xa` and `xb`, mapped by rays from `v`.
const MAX_TANGENTIAL_PANELS: usize = 32;

fn push_curved_triangle<L: Implicit>(
    ls: &L,
    v: &Point,
    xa: &Point,
    xb: &Point,
    rule: &CutRule,
    out: &mut Vec<QuadPoint>,
) {
    let two_area = 2.0 * triangle_area(v, xa, xb);
    if two_area == 0.0 {
        return;
    }
    let (tx, tw) = gauss_legendre(rule.tangential);
    let (sx, sw) = gauss_legendre(rule.radial);
    let d_at = |t: f64| xa + (xb - xa) * t - v;
    let rho_at = |d: &Vector2<f64>| nearest_root(&ls.line_quadratic(v, d), 1.0).unwrap_or(1.0);
    // composite tangential rule, panels doubled until the area settles
    let area = |panels: usize| -> f64 {
        let mut sum = 0.0;
        for k in 0..panels {
            for (t, wt) in tx.iter().zip(&tw) {
                let rho = rho_at(&d_at((k as f64 + t) / panels as f64));
                sum += wt * rho * rho / panels as f64;
            }
        }
        sum
    };
    let mut panels = 1;
    let mut prev = area(1);
    while panels < MAX_TANGENTIAL_PANELS {
        let next = area(2 * panels);
        panels *= 2;
        let settled = (next - prev).abs() <= 1e-14 * next.abs();
        prev = next;
        if settled {
            break;
        }
    }
    let pw = 1.0 / panels as f64;
    for k in 0..panels {
        for (t, wt) in tx.iter().zip(&tw) {
            let d = d_at((k as f64 + t) * pw);
            let rho = rho_at(&d);
            for (s, ws) in sx.iter().zip(&sw) {
                out.push(QuadPoint {
                    x: v + d * (s * rho),
                    w: wt * pw * ws * s * rho * rho * two_area,
                });
            }
        }
    }
}

/// Convex polygon of one side of the chord, counter-clockwise, together
/// with the index `k` such that `poly[k] → poly[k+1]` is the chord.
pub fn side_polygon(corners: &[Point; 4], cut: &CutInfo, inside: bool) -> (Vec<Point>, usize) {
    let mut poly = Vec::with_capacity(5);
    let mut chord_start = 0;
    for k in 0..4 {
        if cut.inside[k] == inside {
            poly.push(corners[k]);
        }
        if let Some(pos) = cut.edges.iter().position(|&ed| ed == k) {
            // leaving the side through this edge starts the chord
            if cut.inside[k] == inside {
                chord_start = poly.len();
            }
            poly.push(cut.points[pos]);
        }
    }
    (poly, chord_start)
}

fn polygon_side_rule<L: Implicit>(
    ls: &L,
    poly: &[Point],
    chord: usize,
    rule: &CutRule,
    out: &mut Vec<QuadPoint>,
) {
    let len = poly.len();
    let a = poly[chord];
    let b = poly[(chord + 1) % len];
    let dir = b - a;
    // apex: the vertex farthest from the chord line
    let apex = (0..len)
        .filter(|&k| k != chord && k != (chord + 1) % len)
        .max_by(|&i, &j| {
            let di = dir.perp(&(poly[i] - a)).abs();
            let dj = dir.perp(&(poly[j] - a)).abs();
            di.partial_cmp(&dj).unwrap()
        })
        .expect("side polygon has at least three vertices");
    for off in 1..len - 1 {
        let p = (apex + off) % len;
        let q = (apex + off + 1) % len;
        if p == chord {
            push_curved_triangle(ls, &poly[apex], &poly[p], &poly[q], rule, out);
        } else {
            push_triangle(&poly[apex], &poly[p], &poly[q], out);
        }
    }
}

fn interface_rule<L: Implicit>(
    ls: &L,
    xa: &Point,
    xb: &Point,
    n: usize,
    out: &mut Vec<InterfacePoint>,
) {
    let chord = xb - xa;
    let len = chord.norm();
    if len == 0.0 {
        return;
    }
    let nh = Vector2::new(-chord.y, chord.x) / len;
    let (tx, tw) = gauss_legendre(n);
    for (t, w) in tx.iter().zip(&tw) {
        let m = xa + chord * *t;
        let sigma = nearest_root(&ls.line_quadratic(&m, &nh), 0.0).unwrap_or(0.0);
        let x = m + nh * sigma;
        let g = ls.gradient(&x);
        let gn = g.dot(&nh);
        let dsigma = if gn != 0.0 { -g.dot(&chord) / gn } else { 0.0 };
        let tangent = chord + nh * dsigma;
        out.push(InterfacePoint {
            x,
            w: w * tangent.norm(),
            normal: -g / g.norm(),
        });
    }
}

const CUT_SUBDIVISION_DEPTH: usize = 6;

/// Both side rules of a cleanly cut square cell, or `None` when they fail to
/// tile the cell (a side not star-shaped from its apex).
fn clean_cut_sides<L: Implicit>(
    ls: &L,
    corners: &[Point; 4],
    cut: &CutInfo,
    rule: &CutRule,
) -> Option<[Vec<QuadPoint>; 2]> {
    let sides = [false, true].map(|inside| {
        let (poly, chord) = side_polygon(corners, cut, inside);
        let mut out = Vec::new();
        polygon_side_rule(ls, &poly, chord, rule, &mut out);
        out
    });
    let h = corners[1].x - corners[0].x;
    let total: f64 = sides.iter().flatten().map(|q| q.w).sum();
    ((total - h * h).abs() <= 1e-11 * h * h).then_some(sides)
}

fn split_cell<L: Implicit>(
    ls: &L,
    o: &Point,
    h: f64,
    inside: bool,
    depth: usize,
    rule: &CutRule,
    out: &mut Vec<QuadPoint>,
) {
    let hh = 0.5 * h;
    for (dx, dy) in [(0.0, 0.0), (hh, 0.0), (hh, hh), (0.0, hh)] {
        subdivide(ls, &Point::new(o.x + dx, o.y + dy), hh, inside, depth - 1, rule, out);
    }
}

/// Quadrature for a cut element with corners `corners` (counter-clockwise).
pub fn cut_quadrature<L: Implicit>(
    corners: &[Point; 4],
    cut: &CutInfo,
    ls: &L,
    rule: &CutRule,
) -> CutQuadrature {
    let mut q = CutQuadrature::default();
    q.sides = clean_cut_sides(ls, corners, cut, rule).unwrap_or_else(|| {
        let h = corners[1].x - corners[0].x;
        [false, true].map(|inside| {
            let mut out = Vec::new();
            split_cell(ls, &corners[0], h, inside, CUT_SUBDIVISION_DEPTH, rule, &mut out);
            out
        })
    });
    interface_rule(ls, &cut.points[0], &cut.points[1], rule.interface, &mut q.interface);
    q
}

/// Side rule on an arbitrary square cell by recursive quadrisection. Cells
/// with one clean crossing use the curved rule; cells still ambiguous at
/// `max_depth` fall back to a sign-filtered tensor rule.
pub fn subdivided_side_rule<L: Implicit>(
    ls: &L,
    origin: &Point,
    size: f64,
    inside: bool,
    max_depth: usize,
    rule: &CutRule,
) -> Vec<QuadPoint> {
    let mut out = Vec::new();
    subdivide(ls, origin, size, inside, max_depth, rule, &mut out);
    out
}

fn subdivide<L: Implicit>(
    ls: &L,
    o: &Point,
    h: f64,
    inside: bool,
    depth: usize,
    rule: &CutRule,
    out: &mut Vec<QuadPoint>,
) {
    let corners = [
        *o,
        Point::new(o.x + h, o.y),
        Point::new(o.x + h, o.y + h),
        Point::new(o.x, o.y + h),
    ];
    let vals = corners.map(|c| ls.value(&c));
    let ins = vals.map(|v| v > 0.0);
    let crossed: Vec<usize> = (0..4).filter(|&k| ins[k] != ins[(k + 1) % 4]).collect();
    let double = (0..4).any(|k| {
        let a = corners[k];
        let b = corners[(k + 1) % 4];
        let q = ls.line_quadratic(&a, &(b - a));
        if ins[k] == ins[(k + 1) % 4] {
            // same sign at both ends but a crossing pair in between
            if ins[k] {
                q.roots().iter().any(|&r| r > 0.0 && r < 1.0)
            } else {
                q.max_on_unit() > 0.0
            }
        } else {
            false
        }
    });
    // an arc closing inside the cell is caught on the diagonals
    let hidden_loop = crossed.is_empty()
        && !ins[0]
        && [(0, 2), (1, 3)].iter().any(|&(i, j)| {
            ls.line_quadratic(&corners[i], &(corners[j] - corners[i]))
                .max_on_unit()
                > 0.0
        });
    if crossed.is_empty() && !double && !hidden_loop {
        if ins[0] == inside {
            out.extend(square_rule(o, h, 3));
        }
        return;
    }
    if crossed.len() == 2 && !double {
        let pts = [crossed[0], crossed[1]].map(|k| {
            let a = corners[k];
            let b = corners[(k + 1) % 4];
            let q = ls.line_quadratic(&a, &(b - a));
            let t = q
                .roots()
                .into_iter()
                .find(|r| (0.0..=1.0).contains(r))
                .unwrap_or(vals[k] / (vals[k] - vals[(k + 1) % 4]));
            a + (b - a) * t
        });
        let cut = CutInfo {
            inclusion: 0,
            edges: [crossed[0], crossed[1]],
            points: pts,
            inside: ins,
        };
        if let Some([m, i]) = clean_cut_sides(ls, &corners, &cut, rule) {
            out.extend(if inside { i } else { m });
            return;
        }
    }
    if depth == 0 {
        out.extend(
            square_rule(o, h, 6)
                .into_iter()
                .filter(|q| (ls.value(&q.x) > 0.0) == inside),
        );
        return;
    }
    split_cell(ls, o, h, inside, depth, rule, out);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{classify, MeshLevel};
    use crate::geometry::InclusionSet;

    /// `x < x0` is "inside".
    struct HalfPlane {
        x0: f64,
    }

    impl Implicit for HalfPlane {
        fn value(&self, p: &Point) -> f64 {
            self.x0 - p.x
        }
        fn gradient(&self, _p: &Point) -> Vector2<f64> {
            Vector2::new(-1.0, 0.0)
        }
        fn line_quadratic(&self, o: &Point, d: &Vector2<f64>) -> LineQuadratic {
            LineQuadratic {
                c0: self.x0 - o.x,
                c1: -d.x,
                c2: 0.0,
            }
        }
    }

    fn unit_corners() -> [Point; 4] {
        [
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(0.0, 1.0),
        ]
    }

    #[test]
    fn gauss_rules_integrate_monomials() {
        for n in 1..=8 {
            let (x, w) = gauss_legendre(n);
            for p in 0..2 * n {
                let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(p as i32)).sum();
                assert!((s - 1.0 / (p as f64 + 1.0)).abs() < 1e-14, "n={n} p={p}");
            }
        }
    }

    #[test]
    fn triangle_rule_degree_four() {
        let (a, b, c) = (Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(0.0, 1.0));
        let mut q = Vec::new();
        push_triangle(&a, &b, &c, &mut q);
        // ∫ x^i y^j over the unit triangle = i! j! / (i + j + 2)!
        let fact = |n: u32| (1..=n).product::<u32>() as f64;
        for i in 0..=4u32 {
            for j in 0..=(4 - i) {
                let s: f64 = q.iter().map(|p| p.w * p.x.x.powi(i as i32) * p.x.y.powi(j as i32)).sum();
                let exact = fact(i) * fact(j) / fact(i + j + 2);
                assert!((s - exact).abs() < 1e-13, "{i} {j}: {s} vs {exact}");
            }
        }
    }

    #[test]
    fn straight_interface_halves_the_element() {
        let ls = HalfPlane { x0: 0.5 };
        let cut = CutInfo {
            inclusion: 0,
            edges: [0, 2],
            points: [Point::new(0.5, 0.0), Point::new(0.5, 1.0)],
            inside: [true, false, false, true],
        };
        let q = cut_quadrature(&unit_corners(), &cut, &ls, &CutRule::default());
        assert!((q.side_area(0) - 0.5).abs() < 1e-15);
        assert!((q.side_area(1) - 0.5).abs() < 1e-15);
        assert!((q.interface_length() - 1.0).abs() < 1e-15);
        for p in &q.interface {
            assert!((p.normal - Vector2::new(1.0, 0.0)).norm() < 1e-15);
        }
        assert!(q.sides.iter().flatten().all(|p| p.w > 0.0));
    }

    #[test]
    fn circle_inside_single_element_by_subdivision() {
        let c = EllipseLevelSet::circle(0.5, 0.5, 0.3).unwrap();
        let rule = CutRule::default();
        let o = Point::new(0.0, 0.0);
        let inner: f64 = subdivided_side_rule(&c, &o, 1.0, true, 3, &rule).iter().map(|q| q.w).sum();
        let outer: f64 = subdivided_side_rule(&c, &o, 1.0, false, 3, &rule).iter().map(|q| q.w).sum();
        let exact = std::f64::consts::PI * 0.09;
        assert!((inner - exact).abs() < 1e-4);
        assert!((outer - (1.0 - exact)).abs() < 1e-4);
    }

    /// Area and perimeter of the reference ellipse summed over the cut
    /// rules and the interior elements.
    #[test]
    fn reference_ellipse_area_and_perimeter() {
        let e = EllipseLevelSet::reference();
        let inc = InclusionSet::single(e).unwrap();
        let m = MeshLevel::new(100).unwrap();
        let cls = classify(&m, &inc).unwrap();
        let rule = CutRule::default();
        let mut area = 0.0;
        let mut outside = 0.0;
        let mut perim = 0.0;
        for el in 0..m.num_elements() {
            match cls.cut(el) {
                Some(c) => {
                    let q = cut_quadrature(&m.element_corners(el), c, &e, &rule);
                    let h2 = m.h() * m.h();
                    assert!((q.side_area(0) + q.side_area(1) - h2).abs() < 1e-10 * h2);
                    area += q.side_area(1);
                    outside += q.side_area(0);
                    perim += q.interface_length();
                    for p in &q.interface {
                        assert!(e.value(&p.x).abs() < 1e-12);
                        // outward: moving along the normal leaves the inclusion
                        assert!(e.value(&(p.x + p.normal * 1e-6)) < 0.0);
                    }
                }
                None => {
                    if cls.is_active(1, el) {
                        area += m.h() * m.h();
                    } else {
                        outside += m.h() * m.h();
                    }
                }
            }
        }
        assert!((area - e.area()).abs() < 1e-6, "area {area} vs {}", e.area());
        assert!((area + outside - 1.0).abs() < 1e-12);
        // perimeter oracle: dense trapezoid rule on the parametrization
        let n = 200_000;
        let exact_perim: f64 = (0..n)
            .map(|k| {
                let phi = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                (e.a * e.a * phi.sin().powi(2) + e.b * e.b * phi.cos().powi(2)).sqrt()
            })
            .sum::<f64>()
            * 2.0
            * std::f64::consts::PI
            / n as f64;
        assert!((perim - exact_perim).abs() < 1e-8, "{perim} vs {exact_perim}");
    }
}
