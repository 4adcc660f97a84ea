//! Cercignani-Lampis gas-surface scattering kernel.
//!
//! `u` is the velocity of a molecule striking the wall (`n . u > 0`, leaving
//! the domain) and `v` the re-emitted velocity (`n . v < 0`, entering the
//! domain). The kernel factorizes into a Rice law for the normal speed and a
//! Gaussian for the tangential components.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::geometry::{DomainGeometry, GeometryError, WallTemperature};
use crate::quadrature::{self, bessel_i0_scaled, gauss_hermite, QuadratureError, QuadratureSpec};
use crate::Vec3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScatterError {
    #[error("accommodation coefficients out of range: need 0 < r_perp <= 1 and 0 < r_par < 2, got r_perp={r_perp}, r_par={r_par}")]
    InvalidCoefficients { r_perp: f64, r_par: f64 },
    #[error("{which} velocity has n.v = {normal_component:e}, expected {expected}")]
    WrongHalfSpace { which: &'static str, normal_component: f64, expected: &'static str },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

/// Classification threshold for the near-specular and near-bounce-back
/// regimes.
pub const NEAR_LIMIT_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatterParams {
    pub r_perp: f64,
    pub r_par: f64,
}

impl ScatterParams {
    pub fn new(r_perp: f64, r_par: f64) -> Result<Self, ScatterError> {
        if !(r_perp > 0.0 && r_perp <= 1.0 && r_par > 0.0 && r_par < 2.0) {
            return Err(ScatterError::InvalidCoefficients { r_perp, r_par });
        }
        Ok(Self { r_perp, r_par })
    }

    pub fn diffuse() -> Self {
        Self { r_perp: 1.0, r_par: 1.0 }
    }

    /// Per-coordinate variance of the tangential Gaussian, over `T_w`.
    pub fn tangential_variance(&self) -> f64 {
        self.r_par * (2.0 - self.r_par)
    }

    pub fn limiting_case(&self) -> LimitingCase {
        limiting_case(self, NEAR_LIMIT_THRESHOLD)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LimitingCase {
    Diffuse,
    NearSpecular,
    NearBounceBack,
    General,
}

pub fn limiting_case(p: &ScatterParams, threshold: f64) -> LimitingCase {
    if p.r_perp == 1.0 && p.r_par == 1.0 {
        LimitingCase::Diffuse
    } else if p.r_perp < threshold && p.r_par < threshold {
        LimitingCase::NearSpecular
    } else if p.r_perp < threshold && 2.0 - p.r_par < threshold {
        LimitingCase::NearBounceBack
    } else {
        LimitingCase::General
    }
}

/// Orthonormal frame `(n, t1, t2)` at a wall point. In 2D, `t2` is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentFrame {
    pub n: Vec3,
    pub t1: Vec3,
    pub t2: Vec3,
}

impl TangentFrame {
    /// Deterministic frame from a unit normal (branchless construction of
    /// Duff et al. in 3D; a quarter turn in 2D).
    pub fn new(n: &Vec3, dim: usize) -> Self {
        if dim == 2 {
            return Self { n: *n, t1: Vec3::new(-n.y, n.x, 0.0), t2: Vec3::zeros() };
        }
        let sign = 1f64.copysign(n.z);
        let a = -1.0 / (sign + n.z);
        let b = n.x * n.y * a;
        let t1 = Vec3::new(1.0 + sign * n.x * n.x * a, sign * b, -sign * n.x);
        let t2 = Vec3::new(b, sign + n.y * n.y * a, -n.y);
        Self { n: *n, t1, t2 }
    }

    pub fn decompose(&self, v: &Vec3) -> VelocityDecomposition {
        VelocityDecomposition { v_perp: v.dot(&self.n), v_par: [v.dot(&self.t1), v.dot(&self.t2)] }
    }

    pub fn compose(&self, d: &VelocityDecomposition) -> Vec3 {
        self.n * d.v_perp + self.t1 * d.v_par[0] + self.t2 * d.v_par[1]
    }
}

/// Normal component and tangential coordinates of a velocity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityDecomposition {
    pub v_perp: f64,
    pub v_par: [f64; 2],
}

impl VelocityDecomposition {
    pub fn v_par_norm(&self) -> f64 {
        self.v_par[0].hypot(self.v_par[1])
    }
}

/// Local wall data at a boundary point: frame, temperature, dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub frame: TangentFrame,
    pub t_w: f64,
    pub dim: usize,
}

impl SurfacePoint {
    pub fn new(normal: Vec3, t_w: f64, dim: usize) -> Self {
        Self { frame: TangentFrame::new(&normal, dim), t_w, dim }
    }

    pub fn on_domain(domain: &DomainGeometry, wall: &WallTemperature, x_b: &Vec3) -> Result<Self, ScatterError> {
        let n = domain.outward_normal(x_b)?;
        Ok(Self::new(n, wall.at(x_b), domain.dimension()))
    }

    pub fn normal(&self) -> Vec3 {
        self.frame.n
    }

    /// Specular image `v - 2 n (n . v)`.
    pub fn reflect(&self, v: &Vec3) -> Vec3 {
        v - self.frame.n * (2.0 * self.frame.n.dot(v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatterSample {
    pub v_out: Vec3,
    pub decomposition: VelocityDecomposition,
}

fn check_outgoing(u: &Vec3, sp: &SurfacePoint) -> Result<f64, ScatterError> {
    let un = u.dot(&sp.frame.n);
    if un > 0.0 {
        Ok(un)
    } else {
        Err(ScatterError::WrongHalfSpace { which: "incident", normal_component: un, expected: "n.u > 0" })
    }
}

fn check_incoming(v: &Vec3, sp: &SurfacePoint) -> Result<f64, ScatterError> {
    let vn = v.dot(&sp.frame.n);
    if vn < 0.0 {
        Ok(vn)
    } else {
        Err(ScatterError::WrongHalfSpace { which: "re-emitted", normal_component: vn, expected: "n.v < 0" })
    }
}

/// `ln R(u -> v)`.
pub fn ln_eval_r(u: &Vec3, v: &Vec3, sp: &SurfacePoint, p: &ScatterParams) -> Result<f64, ScatterError> {
    check_outgoing(u, sp)?;
    check_incoming(v, sp)?;
    Ok(ln_kernel(&sp.frame.decompose(u), &sp.frame.decompose(v), sp, p))
}

fn ln_kernel(du: &VelocityDecomposition, dv: &VelocityDecomposition, sp: &SurfacePoint, p: &ScatterParams) -> f64 {
    let t = sp.t_w;
    let tang_var = t * p.tangential_variance();
    let n_tang = (sp.dim - 1) as f64;
    let ln_pref = -(t * p.r_perp).ln() - 0.5 * n_tang * (2.0 * PI * tang_var).ln();

    let a = dv.v_perp.abs();
    let b = (1.0 - p.r_perp).sqrt() * du.v_perp.abs();
    // Gaussian exponent and Bessel growth combined: the I0 argument is a*b/(T r_perp).
    let normal = -(a - b) * (a - b) / (2.0 * t * p.r_perp) + bessel_i0_scaled(a * b / (t * p.r_perp)).ln();

    let keep = 1.0 - p.r_par;
    let mut tang = 0.0;
    for k in 0..sp.dim - 1 {
        let d = dv.v_par[k] - keep * du.v_par[k];
        tang += d * d;
    }
    ln_pref + a.ln() + normal - tang / (2.0 * tang_var)
}

/// Scattering density `R(u -> v)` per unit velocity volume.
pub fn eval_r(u: &Vec3, v: &Vec3, sp: &SurfacePoint, p: &ScatterParams) -> Result<f64, ScatterError> {
    Ok(ln_eval_r(u, v, sp, p)?.exp())
}

/// Relative defect of the reciprocity identity
/// `R(u->v) = R(-v->-u) e^{-|v|^2/2T}/e^{-|u|^2/2T} |n.v|/|n.u|`,
/// evaluated in log space.
pub fn reciprocity_defect(u: &Vec3, v: &Vec3, sp: &SurfacePoint, p: &ScatterParams) -> Result<f64, ScatterError> {
    let un = check_outgoing(u, sp)?;
    let vn = check_incoming(v, sp)?;
    let lhs = ln_eval_r(u, v, sp, p)?;
    let rhs = ln_eval_r(&-v, &-u, sp, p)? - v.norm_squared() / (2.0 * sp.t_w) + u.norm_squared() / (2.0 * sp.t_w)
        + (vn.abs() / un).ln();
    Ok((rhs - lhs).exp_m1().abs())
}

/// Gauss-Hermite nodes per tangential coordinate in [`normalization_defect`].
pub const TANGENTIAL_GH_NODES: usize = 24;

/// `|int_{n.v<0} R(u -> v) dv - 1|`: tensor Gauss-Hermite over the
/// tangential coordinates times adaptive quadrature over the normal speed.
pub fn normalization_defect(u: &Vec3, sp: &SurfacePoint, p: &ScatterParams, quad: &QuadratureSpec) -> Result<f64, ScatterError> {
    Ok((kernel_mass(u, sp, p, quad)? - 1.0).abs())
}

/// `int_{n.v<0} R(u -> v) dv`.
pub fn kernel_mass(u: &Vec3, sp: &SurfacePoint, p: &ScatterParams, quad: &QuadratureSpec) -> Result<f64, ScatterError> {
    let un = check_outgoing(u, sp)?;
    let du = sp.frame.decompose(u);
    let (x, w) = gauss_hermite(TANGENTIAL_GH_NODES);
    let scale = (2.0 * sp.t_w * p.tangential_variance()).sqrt();
    let keep = 1.0 - p.r_par;
    let center = [keep * du.v_par[0], keep * du.v_par[1]];

    // (tangential offset, weight) pairs with exp(x^2) undone.
    let mut nodes: Vec<([f64; 2], f64)> = Vec::new();
    if sp.dim == 2 {
        for (xi, wi) in x.iter().zip(&w) {
            nodes.push(([center[0] + scale * xi, 0.0], wi * (xi * xi).exp() * scale));
        }
    } else {
        for (xi, wi) in x.iter().zip(&w) {
            for (xj, wj) in x.iter().zip(&w) {
                let weight = wi * wj * (xi * xi + xj * xj).exp() * scale * scale;
                nodes.push(([center[0] + scale * xi, center[1] + scale * xj], weight));
            }
        }
    }

    let integrand = |s: f64| -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        nodes
            .iter()
            .map(|(par, wt)| {
                let dv = VelocityDecomposition { v_perp: -s, v_par: *par };
                wt * ln_kernel(&du, &dv, sp, p).exp()
            })
            .sum()
    };

    let sigma = (sp.t_w * p.r_perp).sqrt();
    let peak = (1.0 - p.r_perp).sqrt() * un;
    let upper = peak + 40.0 * sigma;
    let mut total = 0.0;
    if peak > 0.0 {
        total += quadrature::integrate(integrand, 0.0, peak, quad)?.value;
        total += quadrature::integrate(integrand, peak, upper, quad)?.value;
    } else {
        total += quadrature::integrate(integrand, 0.0, upper, quad)?.value;
    }
    Ok(total)
}

/// Draws a re-emitted velocity from `R(u -> .)`.
///
/// Tangential coordinates are Gaussian with mean `(1 - r_par) u_par` and
/// variance `T r_par (2 - r_par)`; the normal speed is the length of a 2D
/// Gaussian vector with mean length `sqrt(1 - r_perp) |u_perp|` and
/// per-coordinate variance `T r_perp`.
pub fn sample_outgoing<R: Rng + ?Sized>(u: &Vec3, sp: &SurfacePoint, p: &ScatterParams, rng: &mut R) -> ScatterSample {
    let du = sp.frame.decompose(u);
    let sigma_n = (sp.t_w * p.r_perp).sqrt();
    let mean_n = (1.0 - p.r_perp).sqrt() * du.v_perp.abs();
    let g1: f64 = rng.sample(StandardNormal);
    let g2: f64 = rng.sample(StandardNormal);
    let speed = (mean_n + sigma_n * g1).hypot(sigma_n * g2);

    let sigma_t = (sp.t_w * p.tangential_variance()).sqrt();
    let keep = 1.0 - p.r_par;
    let mut v_par = [0.0; 2];
    for k in 0..sp.dim - 1 {
        let g: f64 = rng.sample(StandardNormal);
        v_par[k] = keep * du.v_par[k] + sigma_t * g;
    }
    let decomposition = VelocityDecomposition { v_perp: -speed, v_par };
    ScatterSample { v_out: sp.frame.compose(&decomposition), decomposition }
}

/// Draws `u` in the outgoing half-space from the probability measure
/// `R(-v -> -u) du`, where `v` is an arrival velocity with `n . v < 0`.
pub fn sample_reversed<R: Rng + ?Sized>(v: &Vec3, sp: &SurfacePoint, p: &ScatterParams, rng: &mut R) -> Vec3 {
    -sample_outgoing(&-v, sp, p, rng).v_out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::integrate;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn z_wall(t_w: f64) -> SurfacePoint {
        SurfacePoint::new(Vec3::new(0.0, 0.0, 1.0), t_w, 3)
    }

    #[test]
    fn coefficient_ranges() {
        assert!(ScatterParams::new(0.0, 1.0).is_err());
        assert!(ScatterParams::new(1.0, 2.0).is_err());
        assert!(ScatterParams::new(1.0001, 1.0).is_err());
        assert!(ScatterParams::new(1.0, 1.999).is_ok());
    }

    #[test]
    fn frame_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let n = crate::geometry::random_unit(&mut rng, 3);
            let f = TangentFrame::new(&n, 3);
            assert!((f.t1.norm() - 1.0).abs() < 1e-14 && (f.t2.norm() - 1.0).abs() < 1e-14);
            assert!(f.t1.dot(&n).abs() < 1e-14 && f.t2.dot(&n).abs() < 1e-14 && f.t1.dot(&f.t2).abs() < 1e-14);
            let v = Vec3::new(rng.random(), rng.random(), rng.random());
            assert!((f.compose(&f.decompose(&v)) - v).norm() < 1e-14);
        }
    }

    #[test]
    fn diffuse_example() {
        let sp = z_wall(0.5);
        let v = Vec3::new(0.0, 0.0, -1.0);
        let r = eval_r(&Vec3::new(0.3, 1.0, 2.0), &v, &sp, &ScatterParams::diffuse()).unwrap();
        assert!((r - 2.0 / PI * (-1.0f64).exp()).abs() < 1e-15);
        assert!((r - 0.234_199_326_097_276_6).abs() < 1e-15);
    }

    #[test]
    fn independent_of_normal_speed_when_r_perp_is_one() {
        let sp = z_wall(1.3);
        let p = ScatterParams::new(1.0, 0.6).unwrap();
        let v = Vec3::new(0.2, -0.4, -0.9);
        let a = eval_r(&Vec3::new(0.5, 0.1, 0.2), &v, &sp, &p).unwrap();
        let b = eval_r(&Vec3::new(0.5, 0.1, 7.0), &v, &sp, &p).unwrap();
        assert!(((a - b) / a).abs() < 1e-15);
    }

    #[test]
    fn generic_value_matches_extended_precision() {
        let sp = z_wall(1.0);
        let p = ScatterParams::new(0.5, 0.8).unwrap();
        let r = eval_r(&Vec3::new(1.0, 0.0, 2.0), &Vec3::new(0.3, -0.2, -1.1), &sp, &p).unwrap();
        // 50-digit evaluation of the kernel formula.
        let reference = 0.076_630_559_071_888_498_132;
        assert!(((r - reference) / reference).abs() < 1e-12, "{r}");
    }

    #[test]
    fn wrong_half_space_rejected() {
        let sp = z_wall(1.0);
        let p = ScatterParams::diffuse();
        let up = Vec3::new(0.0, 0.0, 1.0);
        assert!(eval_r(&-up, &-up, &sp, &p).is_err());
        assert!(eval_r(&up, &up, &sp, &p).is_err());
        assert!(eval_r(&Vec3::new(1.0, 0.0, 0.0), &-up, &sp, &p).is_err());
    }

    #[test]
    fn reciprocity_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = ScatterParams::new(0.37, 1.62).unwrap();
        let sp = z_wall(0.8);
        for _ in 0..1000 {
            let u = Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(0.01..3.0));
            let v = Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), -rng.random_range(0.01..3.0));
            assert!(reciprocity_defect(&u, &v, &sp, &p).unwrap() <= 1e-12);
            assert!(reciprocity_defect(&u, &v, &sp, &ScatterParams::diffuse()).unwrap() <= 1e-13);
        }
    }

    #[test]
    fn normalization_examples() {
        let q = QuadratureSpec::default();
        let sp = z_wall(1.0);
        let d = normalization_defect(&Vec3::new(0.4, -2.0, 1.5), &sp, &ScatterParams::diffuse(), &q).unwrap();
        assert!(d <= 1e-10, "{d}");
        let sp = z_wall(0.7);
        let u = Vec3::new(2.0, -1.0, 3.0);
        let d = normalization_defect(&u, &sp, &ScatterParams::new(0.3, 1.4).unwrap(), &q).unwrap();
        assert!(d <= 1e-8, "{d}");
        let sp2 = SurfacePoint::new(Vec3::new(0.6, 0.8, 0.0), 1.4, 2);
        let d = normalization_defect(&Vec3::new(1.0, 2.0, 0.0), &sp2, &ScatterParams::new(0.2, 0.5).unwrap(), &q).unwrap();
        assert!(d <= 1e-8, "{d}");
    }

    /// Normal-speed factor alone, written in the appendix's scaled variables.
    #[test]
    fn normal_factor_integrates_to_one() {
        let q = QuadratureSpec::default();
        for &(r, u) in &[(0.3, 2.0), (0.9, 0.1), (0.05, 4.0)] {
            let f = |v: f64| {
                let y = 2.0 * (1.0f64 - r).sqrt() * v * u / r;
                2.0 / r * v * (-(v * v) / r - (1.0 - r) * u * u / r + y).exp() * bessel_i0_scaled(y)
            };
            let c = (1.0f64 - r).sqrt() * u;
            let total = integrate(f, 0.0, c, &q).unwrap().value + integrate(f, c, c + 40.0 * r.sqrt(), &q).unwrap().value;
            assert!((total - 1.0).abs() < 1e-10, "r={r} u={u}: {total}");
        }
    }

    #[test]
    fn sampler_tangential_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sp = z_wall(1.0);
        let p = ScatterParams::new(0.7, 0.5).unwrap();
        let u = Vec3::new(2.0, 0.0, 1.0);
        let n = 200_000;
        let mut m = [0.0; 2];
        for _ in 0..n {
            let s = sample_outgoing(&u, &sp, &p, &mut rng);
            assert!(s.v_out.z < 0.0);
            m[0] += s.decomposition.v_par[0];
            m[1] += s.decomposition.v_par[1];
        }
        let se = (p.tangential_variance() / n as f64).sqrt();
        let f = TangentFrame::new(&sp.normal(), 3);
        let expect = f.decompose(&(Vec3::new(1.0, 0.0, 0.0)));
        assert!((m[0] / n as f64 - expect.v_par[0]).abs() < 5.0 * se);
        assert!((m[1] / n as f64 - expect.v_par[1]).abs() < 5.0 * se);
    }

    #[test]
    fn diffuse_normal_energy_is_exponential() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let sp = z_wall(1.7);
        let p = ScatterParams::new(1.0, 0.3).unwrap();
        let n = 100_000;
        let mut e: Vec<f64> = (0..n)
            .map(|_| {
                let s = sample_outgoing(&Vec3::new(0.3, 0.1, 2.0), &sp, &p, &mut rng);
                s.decomposition.v_perp.powi(2) / (2.0 * sp.t_w)
            })
            .collect();
        e.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let ks = e
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let cdf = 1.0 - (-x).exp();
                (cdf - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - cdf).abs())
            })
            .fold(0.0, f64::max);
        // 0.1% critical value of the Kolmogorov distribution.
        assert!(ks < 1.95 / (n as f64).sqrt(), "KS {ks}");
    }

    #[test]
    fn rice_second_moment() {
        // Oracle: 1D quadrature of v^2 against the normal marginal of the kernel.
        let (r, u_perp, t) = (0.4, 2.0, 1.0);
        let q = QuadratureSpec::default();
        let marginal = |v: f64| {
            let y = (1.0f64 - r).sqrt() * v * u_perp / (t * r);
            v / (t * r) * (-(v * v + (1.0 - r) * u_perp * u_perp) / (2.0 * t * r) + y).exp() * bessel_i0_scaled(y)
        };
        let m2 = integrate(|v| v * v * marginal(v), 0.0, 20.0, &q).unwrap().value;
        assert!((m2 - 3.2).abs() < 1e-10, "{m2}");

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sp = z_wall(t);
        let p = ScatterParams::new(r, 1.0).unwrap();
        let n = 400_000;
        let samples: Vec<f64> =
            (0..n).map(|_| sample_outgoing(&Vec3::new(0.0, 0.0, u_perp), &sp, &p, &mut rng).decomposition.v_perp.powi(2)).collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - m2).abs() < 5.0 * (var / n as f64).sqrt(), "{mean}");
    }

    #[test]
    fn limiting_cases() {
        assert_eq!(ScatterParams::diffuse().limiting_case(), LimitingCase::Diffuse);
        assert_eq!(ScatterParams::new(1e-6, 1e-6).unwrap().limiting_case(), LimitingCase::NearSpecular);
        assert_eq!(ScatterParams::new(1e-6, 2.0 - 1e-6).unwrap().limiting_case(), LimitingCase::NearBounceBack);
        assert_eq!(ScatterParams::new(0.5, 1.0).unwrap().limiting_case(), LimitingCase::General);
    }

    #[test]
    fn reversed_sampler_lands_in_outgoing_half_space() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sp = z_wall(1.0);
        let p = ScatterParams::new(0.3, 0.4).unwrap();
        for _ in 0..1000 {
            let u = sample_reversed(&Vec3::new(0.2, 0.5, -1.0), &sp, &p, &mut rng);
            assert!(u.z > 0.0);
        }
    }
}
