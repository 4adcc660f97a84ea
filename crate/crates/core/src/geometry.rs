//! Analytic convex domains: ball, axis-aligned ellipsoid and 2D disk.
//!
//! All positions are carried as 3-vectors. In 2D mode the third component is
//! ignored on input and zero on output.

use std::f64::consts::PI;
use std::fmt;

use evalexpr::{ContextWithMutableVariables, DefaultNumericTypes, HashMapContext, Node, Value};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::Vec3;

/// Relative tolerance (times the domain diameter) defining "on the boundary".
pub const BOUNDARY_REL_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("point {point:?} is not on the boundary (signed distance {distance:e})")]
    NotOnBoundary { point: [f64; 3], distance: f64 },
    #[error("wall temperature: {0}")]
    WallTemperature(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Ball { radius: f64, center: Vec3 },
    Ellipsoid { semi_axes: Vec3, center: Vec3 },
    Disk { radius: f64, center: Vec3 },
}

/// A bounded strictly convex domain with analytic boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainGeometry {
    shape: Shape,
}

impl DomainGeometry {
    pub fn ball(radius: f64, center: Vec3) -> Result<Self, GeometryError> {
        check_positive("radius", radius)?;
        Ok(Self { shape: Shape::Ball { radius, center } })
    }

    pub fn unit_ball() -> Self {
        Self { shape: Shape::Ball { radius: 1.0, center: Vec3::zeros() } }
    }

    pub fn ellipsoid(semi_axes: Vec3, center: Vec3) -> Result<Self, GeometryError> {
        for a in semi_axes.iter() {
            check_positive("semi-axis", *a)?;
        }
        Ok(Self { shape: Shape::Ellipsoid { semi_axes, center } })
    }

    pub fn disk(radius: f64, center: Vec3) -> Result<Self, GeometryError> {
        check_positive("radius", radius)?;
        let center = Vec3::new(center.x, center.y, 0.0);
        Ok(Self { shape: Shape::Disk { radius, center } })
    }

    pub fn unit_disk() -> Self {
        Self { shape: Shape::Disk { radius: 1.0, center: Vec3::zeros() } }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dimension(&self) -> usize {
        match self.shape {
            Shape::Disk { .. } => 2,
            _ => 3,
        }
    }

    pub fn center(&self) -> Vec3 {
        match self.shape {
            Shape::Ball { center, .. } | Shape::Ellipsoid { center, .. } | Shape::Disk { center, .. } => center,
        }
    }

    /// Semi-axes of the shape, with a zero third axis for the disk.
    pub fn semi_axes(&self) -> Vec3 {
        match self.shape {
            Shape::Ball { radius, .. } => Vec3::repeat(radius),
            Shape::Ellipsoid { semi_axes, .. } => semi_axes,
            Shape::Disk { radius, .. } => Vec3::new(radius, radius, 0.0),
        }
    }

    pub fn diameter(&self) -> f64 {
        2.0 * self.semi_axes().max()
    }

    pub fn boundary_tolerance(&self) -> f64 {
        BOUNDARY_REL_TOL * self.diameter()
    }

    /// Lebesgue measure of the domain (area in 2D).
    pub fn volume(&self) -> f64 {
        match self.shape {
            Shape::Ball { radius, .. } => 4.0 / 3.0 * PI * radius.powi(3),
            Shape::Ellipsoid { semi_axes: a, .. } => 4.0 / 3.0 * PI * a.x * a.y * a.z,
            Shape::Disk { radius, .. } => PI * radius * radius,
        }
    }

    /// Axis-aligned bounding box `(lo, hi)`.
    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        let c = self.center();
        let a = self.semi_axes();
        (c - a, c + a)
    }

    /// Drops the out-of-plane component in 2D mode.
    pub fn restrict(&self, x: &Vec3) -> Vec3 {
        if self.dimension() == 2 {
            Vec3::new(x.x, x.y, 0.0)
        } else {
            *x
        }
    }

    pub fn signed_distance(&self, x: &Vec3) -> f64 {
        match self.shape {
            Shape::Ball { radius, center } => (x - center).norm() - radius,
            Shape::Disk { radius, center } => {
                let d = x - center;
                d.x.hypot(d.y) - radius
            }
            Shape::Ellipsoid { semi_axes, center } => {
                let y = x - center;
                let p = ellipsoid_closest_point(&semi_axes, &y);
                let dist = (p - y).norm();
                let level = (y.x / semi_axes.x).powi(2) + (y.y / semi_axes.y).powi(2) + (y.z / semi_axes.z).powi(2);
                if level < 1.0 {
                    -dist
                } else {
                    dist
                }
            }
        }
    }

    pub fn contains(&self, x: &Vec3) -> bool {
        self.signed_distance(x) < 0.0
    }

    /// Closest boundary point.
    pub fn project(&self, x: &Vec3) -> Vec3 {
        match self.shape {
            Shape::Ball { radius, center } => {
                let d = x - center;
                let n = d.norm();
                if n == 0.0 {
                    center + Vec3::new(radius, 0.0, 0.0)
                } else {
                    center + d * (radius / n)
                }
            }
            Shape::Disk { radius, center } => {
                let d = Vec3::new(x.x - center.x, x.y - center.y, 0.0);
                let n = d.norm();
                if n == 0.0 {
                    center + Vec3::new(radius, 0.0, 0.0)
                } else {
                    center + d * (radius / n)
                }
            }
            Shape::Ellipsoid { semi_axes, center } => center + ellipsoid_closest_point(&semi_axes, &(x - center)),
        }
    }

    /// Unit normal of the level set through `x`; no boundary check.
    pub fn normal_at(&self, x: &Vec3) -> Vec3 {
        let g = match self.shape {
            Shape::Ball { center, .. } => x - center,
            Shape::Disk { center, .. } => Vec3::new(x.x - center.x, x.y - center.y, 0.0),
            Shape::Ellipsoid { semi_axes: a, center } => {
                let d = x - center;
                Vec3::new(d.x / (a.x * a.x), d.y / (a.y * a.y), d.z / (a.z * a.z))
            }
        };
        let n = g.norm();
        if n == 0.0 {
            Vec3::new(1.0, 0.0, 0.0)
        } else {
            g / n
        }
    }

    pub fn outward_normal(&self, x_b: &Vec3) -> Result<Vec3, GeometryError> {
        let d = self.signed_distance(x_b);
        if d.abs() > self.boundary_tolerance() {
            return Err(GeometryError::NotOnBoundary { point: [x_b.x, x_b.y, x_b.z], distance: d });
        }
        Ok(self.normal_at(x_b))
    }

    /// Roots `s0 <= s1` of the line `x + s d` meeting the boundary, if any.
    pub fn line_intersections(&self, x: &Vec3, d: &Vec3) -> Option<(f64, f64)> {
        let (p, q) = match self.shape {
            Shape::Ball { radius, center } => ((x - center) / radius, d / radius),
            Shape::Disk { radius, center } => (
                Vec3::new(x.x - center.x, x.y - center.y, 0.0) / radius,
                Vec3::new(d.x, d.y, 0.0) / radius,
            ),
            Shape::Ellipsoid { semi_axes: a, center } => {
                let y = x - center;
                (y.component_div(&a), d.component_div(&a))
            }
        };
        let qa = q.norm_squared();
        if qa == 0.0 {
            return None;
        }
        let qb = p.dot(&q);
        let qc = p.norm_squared() - 1.0;
        let disc = qb * qb - qa * qc;
        if disc < 0.0 {
            return None;
        }
        let sq = disc.sqrt();
        // Stable quadratic roots.
        let (s0, s1) = if qb > 0.0 {
            let t = -(qb + sq);
            (t / qa, qc / t)
        } else if qb < 0.0 {
            let t = -qb + sq;
            (qc / t, t / qa)
        } else {
            (-sq / qa, sq / qa)
        };
        Some((s0.min(s1), s0.max(s1)))
    }

    /// Forward exit parameter of the ray `x + s d` for `x` in the closed domain:
    /// the largest nonnegative boundary crossing.
    pub fn ray_exit(&self, x: &Vec3, d: &Vec3) -> Option<f64> {
        let (_, s1) = self.line_intersections(x, d)?;
        if s1 >= 0.0 {
            Some(s1)
        } else {
            None
        }
    }

    /// Normal curvature of the boundary at `x_b` along the tangent `t`.
    pub fn normal_curvature(&self, x_b: &Vec3, t: &Vec3) -> f64 {
        match self.shape {
            Shape::Ball { radius, .. } | Shape::Disk { radius, .. } => 1.0 / radius,
            Shape::Ellipsoid { semi_axes: a, center } => {
                let d = x_b - center;
                let t = t.normalize();
                let hess = (t.x / a.x).powi(2) + (t.y / a.y).powi(2) + (t.z / a.z).powi(2);
                let grad = Vec3::new(d.x / (a.x * a.x), d.y / (a.y * a.y), d.z / (a.z * a.z)).norm();
                hess / grad
            }
        }
    }

    /// A boundary point from a random direction (not area-uniform).
    pub fn sample_boundary<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec3 {
        let u = random_unit(rng, self.dimension());
        self.center() + u.component_mul(&self.semi_axes())
    }

    /// Uniform point in the domain.
    pub fn sample_interior<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec3 {
        let dim = self.dimension();
        let u = random_unit(rng, dim);
        let r: f64 = rng.random::<f64>().powf(1.0 / dim as f64);
        self.center() + (u * r).component_mul(&self.semi_axes())
    }

    /// Empirical `(min, max)` of the normal curvature over random boundary
    /// points and tangent directions; estimates of `(C_Omega, C_eta)`.
    pub fn convexity_probe<R: Rng + ?Sized>(&self, n_samples: usize, rng: &mut R) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for _ in 0..n_samples.max(1) {
            let x = self.sample_boundary(rng);
            let n = self.normal_at(&x);
            let t = if self.dimension() == 2 {
                Vec3::new(-n.y, n.x, 0.0)
            } else {
                let g = random_unit(rng, 3);
                let t = g - n * n.dot(&g);
                if t.norm() < 1e-8 {
                    continue;
                }
                t
            };
            let k = self.normal_curvature(&x, &t);
            lo = lo.min(k);
            hi = hi.max(k);
        }
        (lo, hi)
    }

    /// Deterministic, roughly uniform boundary points (Fibonacci lattice in 3D,
    /// equispaced angles in 2D).
    pub fn boundary_lattice(&self, n: usize) -> Vec<Vec3> {
        let c = self.center();
        let a = self.semi_axes();
        if self.dimension() == 2 {
            (0..n)
                .map(|k| {
                    let th = 2.0 * PI * k as f64 / n as f64;
                    c + Vec3::new(a.x * th.cos(), a.y * th.sin(), 0.0)
                })
                .collect()
        } else {
            let golden = PI * (3.0 - 5f64.sqrt());
            (0..n)
                .map(|k| {
                    let z = 1.0 - 2.0 * (k as f64 + 0.5) / n as f64;
                    let r = (1.0 - z * z).sqrt();
                    let th = golden * k as f64;
                    c + Vec3::new(r * th.cos(), r * th.sin(), z).component_mul(&a)
                })
                .collect()
        }
    }
}

fn check_positive(name: &str, v: f64) -> Result<(), GeometryError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(GeometryError::InvalidDomain(format!("{name} must be positive and finite, got {v}")))
    }
}

/// Uniform direction on the unit sphere (unit circle in 2D).
pub fn random_unit<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec3 {
    loop {
        let g = Vec3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            if dim == 3 { rng.sample(StandardNormal) } else { 0.0 },
        );
        let n = g.norm();
        if n > 1e-12 {
            return g / n;
        }
    }
}

/// Closest point on the ellipsoid `sum (p_i/a_i)^2 = 1` to `y`, by bisection on
/// the Lagrange multiplier, with the interior degenerate branch handled
/// explicitly.
fn ellipsoid_closest_point(a: &Vec3, y: &Vec3) -> Vec3 {
    let sgn = Vec3::new(y.x.signum(), y.y.signum(), y.z.signum());
    let ya = y.abs();
    let a2 = a.component_mul(a);
    let f = |t: f64| -> f64 { (0..3).map(|i| (a[i] * ya[i] / (a2[i] + t)).powi(2)).sum::<f64>() - 1.0 };
    let kmin = (0..3).min_by(|&i, &j| a[i].partial_cmp(&a[j]).unwrap()).unwrap();
    // Smallest axis among components that are nonzero bounds the valid root.
    let lower = (0..3)
        .filter(|&i| ya[i] > 0.0)
        .map(|i| -a2[i])
        .fold(f64::NEG_INFINITY, f64::max);
    if lower == f64::NEG_INFINITY {
        // y at the center: closest point is the end of the shortest axis.
        let mut p = Vec3::zeros();
        p[kmin] = a[kmin];
        return p;
    }
    let root = {
        let mut lo = lower;
        let mut hi = ya.norm() * a.max() + 1.0;
        while f(hi) > 0.0 {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid == lo || mid == hi {
                break;
            }
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    if root >= -a2[kmin] || ya[kmin] > 0.0 {
        let p = Vec3::new(a2.x * ya.x / (a2.x + root), a2.y * ya.y / (a2.y + root), a2.z * ya.z / (a2.z + root));
        return p.component_mul(&sgn_or_one(&sgn));
    }
    // Degenerate: y lies in the plane of the shortest axis, deep inside.
    let t = -a2[kmin];
    let mut p = Vec3::zeros();
    let mut s = 0.0;
    for i in 0..3 {
        if i != kmin {
            p[i] = a2[i] * ya[i] / (a2[i] + t);
            s += (p[i] / a[i]).powi(2);
        }
    }
    p[kmin] = a[kmin] * (1.0 - s).max(0.0).sqrt();
    p.component_mul(&sgn_or_one(&sgn))
}

fn sgn_or_one(s: &Vec3) -> Vec3 {
    s.map(|v| if v == 0.0 { 1.0 } else { v })
}

/// Wall temperature field on the boundary.
#[derive(Clone)]
pub enum WallTemperature {
    Constant(f64),
    Expression { source: String, node: Node<DefaultNumericTypes>, t_min: f64, t_max: f64 },
}

impl fmt::Debug for WallTemperature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(t) => write!(f, "Constant({t})"),
            Self::Expression { source, t_min, t_max, .. } => {
                write!(f, "Expression({source:?}, T in [{t_min}, {t_max}])")
            }
        }
    }
}

/// Number of lattice points used to bound an expression temperature.
const WALL_SCAN_POINTS: usize = 20_000;

impl WallTemperature {
    pub fn constant(t: f64) -> Result<Self, GeometryError> {
        if !(t.is_finite() && t > 0.0) {
            return Err(GeometryError::WallTemperature(format!("T must be positive, got {t}")));
        }
        Ok(Self::Constant(t))
    }

    /// Parses an arithmetic expression in the boundary coordinates `x`, `y`,
    /// `z` and scans the boundary for its extrema.
    pub fn expression(source: &str, domain: &DomainGeometry) -> Result<Self, GeometryError> {
        let node = evalexpr::build_operator_tree::<DefaultNumericTypes>(source)
            .map_err(|e| GeometryError::WallTemperature(format!("cannot parse {source:?}: {e}")))?;
        let mut t_min = f64::INFINITY;
        let mut t_max = f64::NEG_INFINITY;
        let c = domain.center();
        let a = domain.semi_axes();
        let mut points = domain.boundary_lattice(WALL_SCAN_POINTS);
        for i in 0..domain.dimension() {
            for sign in [-1.0, 1.0] {
                let mut e = Vec3::zeros();
                e[i] = sign * a[i];
                points.push(c + e);
            }
        }
        for x in points {
            let t = eval_expression(&node, &x)?;
            if !(t.is_finite() && t > 0.0) {
                return Err(GeometryError::WallTemperature(format!(
                    "{source:?} evaluates to {t} at boundary point ({}, {}, {})",
                    x.x, x.y, x.z
                )));
            }
            t_min = t_min.min(t);
            t_max = t_max.max(t);
        }
        Ok(Self::Expression { source: source.to_string(), node, t_min, t_max })
    }

    pub fn at(&self, x_b: &Vec3) -> f64 {
        match self {
            Self::Constant(t) => *t,
            Self::Expression { node, t_min, .. } => eval_expression(node, x_b).unwrap_or(*t_min),
        }
    }

    pub fn t_min(&self) -> f64 {
        match self {
            Self::Constant(t) => *t,
            Self::Expression { t_min, .. } => *t_min,
        }
    }

    /// Maximum wall temperature, the reference temperature of the global
    /// Maxwellian weight.
    pub fn t_max(&self) -> f64 {
        match self {
            Self::Constant(t) => *t,
            Self::Expression { t_max, .. } => *t_max,
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Self::Constant(_))
    }
}

fn eval_expression(node: &Node<DefaultNumericTypes>, x: &Vec3) -> Result<f64, GeometryError> {
    let mut ctx = HashMapContext::<DefaultNumericTypes>::new();
    for (name, v) in [("x", x.x), ("y", x.y), ("z", x.z)] {
        ctx.set_value(name.into(), Value::Float(v))
            .map_err(|e| GeometryError::WallTemperature(e.to_string()))?;
    }
    node.eval_number_with_context(&ctx)
        .map_err(|e| GeometryError::WallTemperature(e.to_string()))
}

/// Threshold the ratio `T_min / T_max` must exceed for the given
/// accommodation coefficients.
pub fn temperature_ratio_bound(r_perp: f64, r_par: f64) -> f64 {
    let tangential = (1.0 - r_par) / (2.0 - r_par);
    let s = (1.0 - r_perp).max(0.0);
    let normal = (s.sqrt() - s) / r_perp;
    tangential.max(normal)
}

/// True iff `T_min / T_max` strictly exceeds [`temperature_ratio_bound`].
pub fn validate_temperature_constraint(wall: &WallTemperature, r_perp: f64, r_par: f64) -> bool {
    wall.t_min() / wall.t_max() > temperature_ratio_bound(r_perp, r_par)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unit_ball_signed_distance() {
        let g = DomainGeometry::unit_ball();
        assert_eq!(g.signed_distance(&Vec3::zeros()), -1.0);
        assert_eq!(g.signed_distance(&Vec3::new(1.0, 0.0, 0.0)), 0.0);
        assert_eq!(g.signed_distance(&Vec3::new(2.0, 0.0, 0.0)), 1.0);
    }

    #[test]
    fn normals() {
        let g = DomainGeometry::unit_ball();
        assert_eq!(g.outward_normal(&Vec3::new(0.0, 0.0, 1.0)).unwrap(), Vec3::new(0.0, 0.0, 1.0));
        assert_eq!(g.outward_normal(&Vec3::new(-1.0, 0.0, 0.0)).unwrap(), Vec3::new(-1.0, 0.0, 0.0));
        assert!(matches!(g.outward_normal(&Vec3::new(0.5, 0.0, 0.0)), Err(GeometryError::NotOnBoundary { .. })));

        let e = DomainGeometry::ellipsoid(Vec3::new(2.0, 1.0, 1.0), Vec3::zeros()).unwrap();
        let n = e.outward_normal(&Vec3::new(2.0, 0.0, 0.0)).unwrap();
        assert!((n - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn ellipsoid_distance_matches_axis_values() {
        let e = DomainGeometry::ellipsoid(Vec3::new(2.0, 1.0, 1.0), Vec3::zeros()).unwrap();
        assert!((e.signed_distance(&Vec3::new(3.0, 0.0, 0.0)) - 1.0).abs() < 1e-12);
        assert!((e.signed_distance(&Vec3::new(0.0, 0.0, 0.5)) + 0.5).abs() < 1e-12);
        // Center: nearest boundary is the end of a short axis.
        assert!((e.signed_distance(&Vec3::zeros()) + 1.0).abs() < 1e-12);
        assert!(e.signed_distance(&Vec3::new(2.0, 0.0, 0.0)).abs() < 1e-12);
    }

    #[test]
    fn convexity_probe_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (lo, hi) = DomainGeometry::unit_ball().convexity_probe(1000, &mut rng);
        assert!((lo - 1.0).abs() < 1e-9 && (hi - 1.0).abs() < 1e-9);
        let (lo, hi) = DomainGeometry::unit_disk().convexity_probe(100, &mut rng);
        assert!((lo - 1.0).abs() < 1e-12 && (hi - 1.0).abs() < 1e-12);
        let e = DomainGeometry::ellipsoid(Vec3::new(2.0, 1.0, 1.0), Vec3::zeros()).unwrap();
        let (lo, hi) = e.convexity_probe(200_000, &mut rng);
        assert!(lo >= 0.25 - 1e-6 && lo < 0.3, "min curvature {lo}");
        assert!(hi <= 2.0 + 1e-6 && hi > 1.8, "max curvature {hi}");
    }

    #[test]
    fn disk_ray_exit() {
        let g = DomainGeometry::unit_disk();
        let s = g.ray_exit(&Vec3::new(0.5, 0.0, 0.0), &Vec3::new(0.0, -1.0, 0.0)).unwrap();
        assert!((s - 0.75f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn temperature_constraint() {
        let wall = WallTemperature::constant(1.0).unwrap();
        for &(rp, rt) in &[(0.1, 0.1), (0.5, 1.9), (1.0, 1.0), (0.999, 0.001)] {
            assert!(validate_temperature_constraint(&wall, rp, rt));
        }
        assert_eq!(temperature_ratio_bound(1.0, 1.0), 0.0);

        let g = DomainGeometry::unit_ball();
        // T ranges over [0.3, 1.0] on the unit sphere.
        let wall = WallTemperature::expression("0.65 + 0.35 * z", &g).unwrap();
        assert!((wall.t_min() / wall.t_max() - 0.3).abs() < 1e-6);
        assert!(!validate_temperature_constraint(&wall, 1.0, 0.2));
        assert!((temperature_ratio_bound(1.0, 0.2) - 0.8 / 1.8).abs() < 1e-15);
    }

    #[test]
    fn wall_expression_rejects_nonpositive() {
        let g = DomainGeometry::unit_disk();
        assert!(WallTemperature::expression("x", &g).is_err());
        assert!(WallTemperature::expression("1 +", &g).is_err());
        let w = WallTemperature::expression("2 + x*y", &g).unwrap();
        assert!((w.at(&Vec3::new(1.0, 0.0, 0.0)) - 2.0).abs() < 1e-15);
    }
}
