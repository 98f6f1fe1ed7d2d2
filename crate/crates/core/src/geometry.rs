//! Elliptical inclusions described by a quadratic level set.
//!
//! An inclusion is the set where `Λ > 0` with
//! `Λ(x̂, ŷ) = 1 − x̂²/a² − ŷ²/b²` in coordinates rotated by `theta` about the
//! centre. The domain is always the unit square.

use std::f64::consts::PI;

use nalgebra::{Point2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = Point2<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EllipseLevelSet {
    pub cx: f64,
    pub cy: f64,
    pub a: f64,
    pub b: f64,
    pub theta: f64,
}

/// Coefficients of `Λ(origin + t·dir) = c0 + c1·t + c2·t²`.
#[derive(Clone, Copy, Debug)]
pub struct LineQuadratic {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

impl LineQuadratic {
    pub fn eval(&self, t: f64) -> f64 {
        self.c0 + t * (self.c1 + t * self.c2)
    }

    pub fn derivative(&self, t: f64) -> f64 {
        self.c1 + 2.0 * t * self.c2
    }

    /// Real roots in ascending order.
    pub fn roots(&self) -> Vec<f64> {
        let LineQuadratic { c0, c1, c2 } = *self;
        if c2.abs() <= f64::EPSILON * (c1.abs() + c0.abs()) {
            if c1 == 0.0 {
                return Vec::new();
            }
            return vec![-c0 / c1];
        }
        let disc = c1 * c1 - 4.0 * c2 * c0;
        if disc < 0.0 {
            return Vec::new();
        }
        let sq = disc.sqrt();
        // numerically stable pair
        let q = -0.5 * (c1 + c1.signum() * sq);
        let (r1, r2) = if q != 0.0 {
            (q / c2, c0 / q)
        } else {
            (0.0, 0.0)
        };
        let mut r = vec![r1, r2];
        r.sort_by(|x, y| x.partial_cmp(y).unwrap());
        r
    }

    /// Maximum of the quadratic over `[0, 1]`.
    pub fn max_on_unit(&self) -> f64 {
        let mut m = self.eval(0.0).max(self.eval(1.0));
        if self.c2 < 0.0 {
            let t = -self.c1 / (2.0 * self.c2);
            if t > 0.0 && t < 1.0 {
                m = m.max(self.eval(t));
            }
        }
        m
    }
}

impl EllipseLevelSet {
    pub fn new(cx: f64, cy: f64, a: f64, b: f64, theta: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0) || !a.is_finite() || !b.is_finite() {
            return Err(Error::InvalidInput(format!(
                "semi-axes must be positive, got a = {a}, b = {b}"
            )));
        }
        if !(cx.is_finite() && cy.is_finite() && theta.is_finite()) {
            return Err(Error::InvalidInput("non-finite ellipse parameter".into()));
        }
        Ok(Self {
            cx,
            cy,
            a,
            b,
            theta: theta.rem_euclid(PI),
        })
    }

    pub fn circle(cx: f64, cy: f64, r: f64) -> Result<Self> {
        Self::new(cx, cy, r, r, 0.0)
    }

    /// The single inclusion used throughout the convergence and
    /// preconditioner studies: centre (0.5, 0.5), θ = π/4, a = r, b = 0.6 r
    /// with r = √(3 − 2√2).
    pub fn reference() -> Self {
        let r = (3.0 - 2.0 * 2f64.sqrt()).sqrt();
        Self::new(0.5, 0.5, r, 0.6 * r, PI / 4.0).expect("valid reference ellipse")
    }

    pub fn center(&self) -> Point {
        Point::new(self.cx, self.cy)
    }

    /// Rotated local coordinates (x̂, ŷ).
    pub fn local(&self, p: &Point) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        let dx = p.x - self.cx;
        let dy = p.y - self.cy;
        (dx * c + dy * s, -dx * s + dy * c)
    }

    fn rotate(&self, v: &Vector2<f64>) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        (v.x * c + v.y * s, -v.x * s + v.y * c)
    }

    pub fn value(&self, p: &Point) -> f64 {
        let (xh, yh) = self.local(p);
        1.0 - xh * xh / (self.a * self.a) - yh * yh / (self.b * self.b)
    }

    pub fn gradient(&self, p: &Point) -> Vector2<f64> {
        let (xh, yh) = self.local(p);
        let gx = -2.0 * xh / (self.a * self.a);
        let gy = -2.0 * yh / (self.b * self.b);
        // rotate back to global axes
        let (s, c) = self.theta.sin_cos();
        Vector2::new(gx * c - gy * s, gx * s + gy * c)
    }

    pub fn contains(&self, p: &Point) -> bool {
        self.value(p) > 0.0
    }

    pub fn line_quadratic(&self, origin: &Point, dir: &Vector2<f64>) -> LineQuadratic {
        let (xo, yo) = self.local(origin);
        let (dx, dy) = self.rotate(dir);
        let ia = 1.0 / (self.a * self.a);
        let ib = 1.0 / (self.b * self.b);
        LineQuadratic {
            c0: 1.0 - xo * xo * ia - yo * yo * ib,
            c1: -2.0 * (xo * dx * ia + yo * dy * ib),
            c2: -(dx * dx * ia + dy * dy * ib),
        }
    }

    /// Boundary point at parameter `phi` of the standard parametrization.
    pub fn boundary_point(&self, phi: f64) -> Point {
        let (s, c) = self.theta.sin_cos();
        let xh = self.a * phi.cos();
        let yh = self.b * phi.sin();
        Point::new(self.cx + xh * c - yh * s, self.cy + xh * s + yh * c)
    }

    pub fn boundary_samples(&self, count: usize) -> Vec<Point> {
        (0..count)
            .map(|k| self.boundary_point(2.0 * PI * k as f64 / count as f64))
            .collect()
    }

    /// Half extents of the axis-aligned bounding box.
    pub fn half_extents(&self) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        let (a2, b2) = (self.a * self.a, self.b * self.b);
        ((a2 * c * c + b2 * s * s).sqrt(), (a2 * s * s + b2 * c * c).sqrt())
    }

    pub fn bounding_box(&self) -> (Point, Point) {
        let (hx, hy) = self.half_extents();
        (
            Point::new(self.cx - hx, self.cy - hy),
            Point::new(self.cx + hx, self.cy + hy),
        )
    }

    pub fn area(&self) -> f64 {
        PI * self.a * self.b
    }

    pub fn max_semi_axis(&self) -> f64 {
        self.a.max(self.b)
    }

    /// Distance of the closure to the boundary of the unit square (negative
    /// if it sticks out).
    pub fn clearance_to_unit_square(&self) -> f64 {
        let (lo, hi) = self.bounding_box();
        lo.x.min(lo.y).min(1.0 - hi.x).min(1.0 - hi.y)
    }
}

/// Point evaluation of the level set; see [`EllipseLevelSet::value`].
pub fn level_set_value(p: &Point, e: &EllipseLevelSet) -> f64 {
    e.value(p)
}

/// Sampled separation test between two ellipses. Returns `true` if the
/// closures are disjoint with at least `clearance` between them.
pub fn ellipses_separated(
    e1: &EllipseLevelSet,
    e2: &EllipseLevelSet,
    clearance: f64,
    samples: usize,
) -> bool {
    let d = (e1.center() - e2.center()).norm();
    if d > e1.max_semi_axis() + e2.max_semi_axis() + clearance {
        return true;
    }
    if d < e1.a.min(e1.b) + e2.a.min(e2.b) {
        return false;
    }
    let s1 = e1.boundary_samples(samples);
    let s2 = e2.boundary_samples(samples);
    if s1.iter().any(|p| e2.value(p) >= 0.0) || s2.iter().any(|p| e1.value(p) >= 0.0) {
        return false;
    }
    let c2 = clearance * clearance;
    !s1
        .iter()
        .any(|p| s2.iter().any(|q| (p - q).norm_squared() < c2))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InclusionSet {
    #[serde(default, rename = "inclusion")]
    inclusions: Vec<EllipseLevelSet>,
}

impl InclusionSet {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Builds a set and checks embedding in the unit square and pairwise
    /// disjointness (sampled with 256 boundary points).
    pub fn new(inclusions: Vec<EllipseLevelSet>) -> Result<Self> {
        let set = Self { inclusions };
        set.validate(0.0, 256)?;
        Ok(set)
    }

    pub fn single(e: EllipseLevelSet) -> Result<Self> {
        Self::new(vec![e])
    }

    pub fn validate(&self, clearance: f64, samples: usize) -> Result<()> {
        for (i, e) in self.inclusions.iter().enumerate() {
            if e.clearance_to_unit_square() <= clearance {
                return Err(Error::InvalidInput(format!(
                    "inclusion {i} is not embedded in the unit square"
                )));
            }
            for (j, f) in self.inclusions.iter().enumerate().skip(i + 1) {
                if !ellipses_separated(e, f, clearance, samples) {
                    return Err(Error::InvalidInput(format!(
                        "inclusions {i} and {j} overlap"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inclusions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inclusions.is_empty()
    }

    pub fn get(&self, i: usize) -> &EllipseLevelSet {
        &self.inclusions[i]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, EllipseLevelSet> {
        self.inclusions.iter()
    }

    pub fn as_slice(&self) -> &[EllipseLevelSet] {
        &self.inclusions
    }

    pub fn total_area(&self) -> f64 {
        self.inclusions.iter().map(|e| e.area()).sum()
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("inclusion set serializes")
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let set: InclusionSet = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        let inclusions = set
            .inclusions
            .into_iter()
            .map(|e| EllipseLevelSet::new(e.cx, e.cy, e.a, e.b, e.theta))
            .collect::<Result<Vec<_>>>()?;
        Self::new(inclusions)
    }
}

/// Sampling ranges for random inclusions. The defaults are a choice, not
/// taken from any reference data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomInclusionBounds {
    pub semi_major: [f64; 2],
    pub semi_minor: [f64; 2],
    pub theta: [f64; 2],
    pub center: [f64; 2],
    /// Minimum gap between inclusions and to the domain boundary.
    pub clearance: f64,
    pub boundary_samples: usize,
    pub max_attempts: usize,
}

impl Default for RandomInclusionBounds {
    fn default() -> Self {
        Self {
            semi_major: [0.025, 0.055],
            semi_minor: [0.025, 0.055],
            theta: [0.0, PI],
            center: [0.12, 0.88],
            clearance: 0.04,
            boundary_samples: 256,
            max_attempts: 200_000,
        }
    }
}

fn draw(rng: &mut ChaCha8Rng, range: [f64; 2]) -> f64 {
    if range[1] > range[0] {
        rng.random_range(range[0]..range[1])
    } else {
        range[0]
    }
}

/// Draws `count` non-overlapping ellipses. Candidate `k` is drawn from its
/// own ChaCha8 stream, so each inclusion only depends on the seed and the
/// candidates rejected before it.
pub fn generate_random_inclusions(
    count: usize,
    seed: u64,
    bounds: &RandomInclusionBounds,
) -> Result<InclusionSet> {
    generate_random_inclusions_with(count, seed, bounds, |_| true)
}

/// Like [`generate_random_inclusions`] with an extra acceptance predicate,
/// e.g. a mesh-resolution check.
pub fn generate_random_inclusions_with<F>(
    count: usize,
    seed: u64,
    bounds: &RandomInclusionBounds,
    accept: F,
) -> Result<InclusionSet>
where
    F: Fn(&EllipseLevelSet) -> bool,
{
    let mut placed: Vec<EllipseLevelSet> = Vec::with_capacity(count);
    let mut attempts = 0usize;
    for k in 0..count {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        loop {
            if attempts >= bounds.max_attempts {
                return Err(Error::GenerationExhausted {
                    attempts,
                    placed: placed.len(),
                    requested: count,
                });
            }
            attempts += 1;
            let cx = draw(&mut rng, bounds.center);
            let cy = draw(&mut rng, bounds.center);
            let mut a = draw(&mut rng, bounds.semi_major);
            let mut b = draw(&mut rng, bounds.semi_minor);
            let theta = draw(&mut rng, bounds.theta);
            if b > a {
                std::mem::swap(&mut a, &mut b);
            }
            let cand = EllipseLevelSet::new(cx, cy, a, b, theta)?;
            if cand.clearance_to_unit_square() <= bounds.clearance {
                continue;
            }
            let ok = placed.iter().all(|e| {
                ellipses_separated(e, &cand, bounds.clearance, bounds.boundary_samples)
            });
            if ok && accept(&cand) {
                placed.push(cand);
                break;
            }
        }
    }
    Ok(InclusionSet { inclusions: placed })
}
