//! Characteristics of the transport operator: trajectories of
//! `x' = v, v' = -grad phi`, backward exit times, the kinetic weight `alpha`
//! and backward stochastic cycles through the wall.

use rand::Rng;
use thiserror::Error;

use crate::geometry::{DomainGeometry, GeometryError, WallTemperature};
use crate::scattering::{sample_reversed, ScatterParams, SurfacePoint};
use crate::Vec3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TraceError {
    #[error("trajectory left the domain at t={t} (signed distance {distance:e})")]
    LeftDomain { t: f64, distance: f64 },
    #[error("backward trace exits immediately: boundary point with n.v = {normal_component:e} <= 0")]
    ImmediateExit { normal_component: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Acceleration field `-grad phi` seen by the characteristics.
pub trait ForceField: Sync {
    fn acceleration(&self, t: f64, x: &Vec3) -> Vec3;

    /// True when the field vanishes identically (straight-line motion).
    fn is_zero(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroField;

impl ForceField for ZeroField {
    fn acceleration(&self, _t: f64, _x: &Vec3) -> Vec3 {
        Vec3::zeros()
    }

    fn is_zero(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantField(pub Vec3);

impl ForceField for ConstantField {
    fn acceleration(&self, _t: f64, _x: &Vec3) -> Vec3 {
        self.0
    }
}

/// Confining field of the potential `k |x - c|^2 / 2`.
#[derive(Debug, Clone, Copy)]
pub struct HarmonicField {
    pub k: f64,
    pub center: Vec3,
}

impl ForceField for HarmonicField {
    fn acceleration(&self, _t: f64, x: &Vec3) -> Vec3 {
        (x - self.center) * -self.k
    }
}

impl<F: ForceField + ?Sized> ForceField for &F {
    fn acceleration(&self, t: f64, x: &Vec3) -> Vec3 {
        (**self).acceleration(t, x)
    }

    fn is_zero(&self) -> bool {
        (**self).is_zero()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhasePoint {
    pub t: f64,
    pub x: Vec3,
    pub v: Vec3,
}

impl PhasePoint {
    pub fn new(t: f64, x: Vec3, v: Vec3) -> Self {
        Self { t, x, v }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceOptions {
    /// RK4 step for non-zero fields.
    pub h: f64,
    /// Bisection tolerance on the crossing time.
    pub crossing_tol: f64,
    /// `|n . v_b|` below which an exit is flagged grazing.
    pub grazing_tol: f64,
}

impl Default for TraceOptions {
    fn default() -> Self {
        Self { h: 1e-3, crossing_tol: 1e-12, grazing_tol: 1e-10 }
    }
}

impl TraceOptions {
    pub fn with_step(mut self, h: f64) -> Self {
        self.h = h;
        self
    }

    fn substep(&self, domain: &DomainGeometry, v: &Vec3) -> f64 {
        self.h.min(0.1 * domain.diameter() / (v.norm() + 1.0))
    }
}

/// One RK4 step of `x' = v, v' = a(t, x)` from time `t` by `sigma * s`.
fn rk4<F: ForceField + ?Sized>(t: f64, x: &Vec3, v: &Vec3, s: f64, sigma: f64, field: &F) -> (Vec3, Vec3) {
    let h = sigma * s;
    let k1x = *v;
    let k1v = field.acceleration(t, x);
    let k2x = v + k1v * (0.5 * h);
    let k2v = field.acceleration(t + 0.5 * h, &(x + k1x * (0.5 * h)));
    let k3x = v + k2v * (0.5 * h);
    let k3v = field.acceleration(t + 0.5 * h, &(x + k2x * (0.5 * h)));
    let k4x = v + k3v * h;
    let k4v = field.acceleration(t + h, &(x + k3x * h));
    (
        x + (k1x + k2x * 2.0 + k3x * 2.0 + k4x) * (h / 6.0),
        v + (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (h / 6.0),
    )
}

/// Solves the Hamiltonian ODE from `p` to time `t_target` (either direction)
/// with classical RK4. Fails if an intermediate step ends outside the domain.
pub fn integrate_trajectory<F: ForceField + ?Sized>(
    p: &PhasePoint,
    t_target: f64,
    field: &F,
    domain: &DomainGeometry,
    opts: &TraceOptions,
) -> Result<PhasePoint, TraceError> {
    let span = t_target - p.t;
    if field.is_zero() {
        let x = p.x + p.v * span;
        check_inside(domain, &x, t_target)?;
        return Ok(PhasePoint::new(t_target, x, p.v));
    }
    let sigma = span.signum();
    let n = (span.abs() / opts.substep(domain, &p.v)).ceil().max(1.0) as usize;
    let s = span.abs() / n as f64;
    let (mut x, mut v) = (p.x, p.v);
    for k in 0..n {
        (x, v) = rk4(p.t + sigma * s * k as f64, &x, &v, s, sigma, field);
        check_inside(domain, &x, p.t + sigma * s * (k + 1) as f64)?;
    }
    Ok(PhasePoint::new(t_target, x, v))
}

/// Free flow of the ODE for `duration` (either sign), ignoring the domain.
pub fn flow<F: ForceField + ?Sized>(t0: f64, x: &Vec3, v: &Vec3, duration: f64, field: &F, h: f64) -> (Vec3, Vec3) {
    if field.is_zero() {
        return (x + v * duration, *v);
    }
    let sigma = duration.signum();
    let n = (duration.abs() / h).ceil().max(1.0) as usize;
    let s = duration.abs() / n as f64;
    let (mut x, mut v) = (*x, *v);
    for k in 0..n {
        (x, v) = rk4(t0 + sigma * s * k as f64, &x, &v, s, sigma, field);
    }
    (x, v)
}

fn check_inside(domain: &DomainGeometry, x: &Vec3, t: f64) -> Result<(), TraceError> {
    let d = domain.signed_distance(x);
    if d > domain.boundary_tolerance() {
        Err(TraceError::LeftDomain { t, distance: d })
    } else {
        Ok(())
    }
}

/// Where a one-directional trace stopped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExitSearch {
    /// Elapsed trace time (capped at the horizon).
    pub s: f64,
    pub x: Vec3,
    pub v: Vec3,
    pub hit_boundary: bool,
}

/// Follows the characteristic through `(x, v)` at time `t0` forward
/// (`sigma = 1`) or backward (`sigma = -1`) in time until it meets the
/// boundary or `horizon` elapses. A boundary start moving outward exits at
/// `s = 0`.
#[allow(clippy::too_many_arguments)]
pub fn trace_to_boundary<F: ForceField + ?Sized>(
    t0: f64,
    x: &Vec3,
    v: &Vec3,
    sigma: f64,
    horizon: f64,
    field: &F,
    domain: &DomainGeometry,
    opts: &TraceOptions,
) -> ExitSearch {
    if field.is_zero() {
        let d = v * sigma;
        let s = domain.ray_exit(x, &d).unwrap_or(0.0).max(0.0);
        return if s < horizon {
            ExitSearch { s, x: domain.project(&(x + d * s)), v: *v, hit_boundary: true }
        } else {
            ExitSearch { s: horizon, x: x + d * horizon, v: *v, hit_boundary: false }
        };
    }

    let (mut x0, mut v0, mut s0) = (*x, *v, 0.0);
    while s0 < horizon {
        let h = opts.substep(domain, &v0).min(horizon - s0);
        let t = t0 + sigma * s0;
        let (x1, v1) = rk4(t, &x0, &v0, h, sigma, field);
        if domain.signed_distance(&x1) > 0.0 {
            let sc = bracket_crossing(h, domain.signed_distance(&x0).min(0.0), domain.signed_distance(&x1), opts.crossing_tol, |s| {
                domain.signed_distance(&rk4(t, &x0, &v0, s, sigma, field).0)
            });
            let (xc, vc) = rk4(t, &x0, &v0, sc, sigma, field);
            return ExitSearch { s: s0 + sc, x: domain.project(&xc), v: vc, hit_boundary: true };
        }
        x0 = x1;
        v0 = v1;
        s0 += h;
    }
    ExitSearch { s: horizon, x: x0, v: v0, hit_boundary: false }
}

/// Root of `g` on `[0, h]` with `g(0) = g_lo <= 0 < g(h) = g_hi`, by the
/// Illinois variant of regula falsi; the bracket shrinks to `tol`.
fn bracket_crossing<G: Fn(f64) -> f64>(h: f64, g_lo: f64, g_hi: f64, tol: f64, g: G) -> f64 {
    let (mut lo, mut hi, mut f_lo, mut f_hi) = (0.0, h, g_lo, g_hi);
    let mut side = 0i8;
    for _ in 0..200 {
        if hi - lo <= tol {
            break;
        }
        let mut s = (lo * f_hi - hi * f_lo) / (f_hi - f_lo);
        if !(s > lo && s < hi) {
            s = 0.5 * (lo + hi);
        }
        let f = g(s);
        if f > 0.0 {
            hi = s;
            f_hi = f;
            if side == 1 {
                f_lo *= 0.5;
            }
            side = 1;
        } else {
            lo = s;
            f_lo = f;
            if f == 0.0 {
                return s;
            }
            if side == -1 {
                f_hi *= 0.5;
            }
            side = -1;
        }
        if f.abs() <= 1e-15 {
            return s;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BacktraceResult {
    /// Elapsed backward time to the exit, or the horizon if none was met.
    pub t_b: f64,
    pub x_b: Vec3,
    pub v_b: Vec3,
    pub hit_boundary: bool,
    /// `|n(x_b) . v_b|` fell below the grazing tolerance.
    pub grazing: bool,
}

/// Backward exit searched up to `horizon` elapsed time.
pub fn backward_exit_within<F: ForceField + ?Sized>(
    p: &PhasePoint,
    horizon: f64,
    field: &F,
    domain: &DomainGeometry,
    opts: &TraceOptions,
) -> Result<BacktraceResult, TraceError> {
    if domain.signed_distance(&p.x) >= -domain.boundary_tolerance() {
        let nv = domain.normal_at(&p.x).dot(&p.v);
        if nv <= 0.0 {
            return Err(TraceError::ImmediateExit { normal_component: nv });
        }
    }
    let e = trace_to_boundary(p.t, &p.x, &p.v, -1.0, horizon, field, domain, opts);
    let grazing = e.hit_boundary && domain.normal_at(&e.x).dot(&e.v).abs() < opts.grazing_tol;
    Ok(BacktraceResult { t_b: e.s, x_b: e.x, v_b: e.v, hit_boundary: e.hit_boundary, grazing })
}

/// Backward exit time with the trace capped at `t = 0`.
pub fn backward_exit<F: ForceField + ?Sized>(
    p: &PhasePoint,
    field: &F,
    domain: &DomainGeometry,
    opts: &TraceOptions,
) -> Result<BacktraceResult, TraceError> {
    backward_exit_within(p, p.t, field, domain, opts)
}

/// Quintic smoothstep: 0 below 0, 1 above 1, slope at most 15/8.
pub fn chi(tau: f64) -> f64 {
    let t = tau.clamp(0.0, 1.0);
    t * t * t * (t * (6.0 * t - 15.0) + 10.0)
}

pub fn chi_prime(tau: f64) -> f64 {
    if !(0.0..=1.0).contains(&tau) {
        return 0.0;
    }
    30.0 * tau * tau * (tau - 1.0) * (tau - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KineticWeightParams {
    pub eps: f64,
}

impl KineticWeightParams {
    pub fn new(eps: f64) -> Self {
        assert!(eps > 0.0, "eps must be positive");
        Self { eps }
    }

    pub fn chi(&self, tau: f64) -> f64 {
        chi(tau)
    }
}

/// `alpha = chi((t - t_b + eps)/eps) |n(x_b).v_b| + 1 - chi(...)`. On the
/// incoming boundary (`n . v <= 0` at a wall point) this is the limit
/// `|n . v|`.
pub fn kinetic_weight_alpha<F: ForceField + ?Sized>(
    p: &PhasePoint,
    params: &KineticWeightParams,
    field: &F,
    domain: &DomainGeometry,
    opts: &TraceOptions,
) -> Result<f64, TraceError> {
    match backward_exit_within(p, p.t + params.eps, field, domain, opts) {
        Err(TraceError::ImmediateExit { normal_component }) => Ok(normal_component.abs()),
        Err(e) => Err(e),
        Ok(b) if !b.hit_boundary => Ok(1.0),
        Ok(b) => {
            let c = chi((p.t - b.t_b + params.eps) / params.eps);
            let nv = domain.normal_at(&b.x_b).dot(&b.v_b).abs();
            Ok(c * nv + 1.0 - c)
        }
    }
}

/// `|alpha(t, x, v) - alpha(s, X(s), V(s))|` along the characteristic.
pub fn alpha_invariance_defect<F: ForceField + ?Sized>(
    p: &PhasePoint,
    s: f64,
    params: &KineticWeightParams,
    field: &F,
    domain: &DomainGeometry,
    opts: &TraceOptions,
) -> Result<f64, TraceError> {
    let a0 = kinetic_weight_alpha(p, params, field, domain, opts)?;
    let q = integrate_trajectory(p, s, field, domain, opts)?;
    let a1 = kinetic_weight_alpha(&q, params, field, domain, opts)?;
    Ok((a0 - a1).abs())
}

/// Wall data needed to follow characteristics through the boundary.
#[derive(Debug, Clone)]
pub struct WallModel {
    pub domain: DomainGeometry,
    pub wall: WallTemperature,
    pub scatter: ScatterParams,
    /// Temperature of the global Maxwellian used to define `f = F / sqrt(mu)`.
    pub t_m: f64,
}

impl WallModel {
    /// `1/(4 T_M) - 1/(2 T_w(x))`.
    pub fn theta_hat(&self, x_b: &Vec3) -> f64 {
        1.0 / (4.0 * self.t_m) - 1.0 / (2.0 * self.wall.at(x_b))
    }

    pub fn surface(&self, x_b: &Vec3) -> SurfacePoint {
        SurfacePoint::new(self.domain.normal_at(x_b), self.wall.at(x_b), self.domain.dimension())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleHit {
    pub t: f64,
    pub x: Vec3,
    /// Velocity drawn from the reversed kernel (`n . v > 0`).
    pub v_sampled: Vec3,
    /// Velocity with which the characteristic reached the wall (`n . v < 0`).
    pub v_arrival: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CycleTermination {
    ReachedT0,
    MaxCycles,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleRecord {
    pub hits: Vec<CycleHit>,
    /// Sum of `theta_hat(x_k) (|V(t_k)|^2 - |v_k|^2)` over the hits.
    pub log_weight: f64,
    /// Sum of `(|v_start|^2 - |v_end|^2) / (4 T_M)` over free-flight segments:
    /// the change of `sqrt(mu)` along each characteristic.
    pub log_field_weight: f64,
    pub terminated: CycleTermination,
    /// Phase point at `t = 0` when the trace reached it.
    pub origin: Option<(Vec3, Vec3)>,
    pub grazing_resamples: usize,
}

impl CycleRecord {
    /// Multiplier turning `f_0(origin)` into an estimate of `f(t, x, v)`.
    pub fn total_weight(&self) -> f64 {
        (self.log_weight + self.log_field_weight).exp()
    }
}

pub const DEFAULT_K_MAX: usize = 64;
const MAX_GRAZING_RESAMPLES: usize = 32;

/// Backward stochastic cycles from `p`: at each wall hit the next velocity is
/// drawn from `R(-V -> -u) du`.
pub fn backward_cycles<F: ForceField + ?Sized, R: Rng + ?Sized>(
    p: &PhasePoint,
    field: &F,
    model: &WallModel,
    rng: &mut R,
    k_max: usize,
    opts: &TraceOptions,
) -> Result<CycleRecord, TraceError> {
    let domain = &model.domain;
    let mut rec = CycleRecord {
        hits: Vec::new(),
        log_weight: 0.0,
        log_field_weight: 0.0,
        terminated: CycleTermination::ReachedT0,
        origin: None,
        grazing_resamples: 0,
    };
    let mut cur = *p;
    let mut exit = backward_exit(&cur, field, domain, opts)?;
    loop {
        rec.log_field_weight += (cur.v.norm_squared() - exit.v_b.norm_squared()) / (4.0 * model.t_m);
        if !exit.hit_boundary {
            rec.origin = Some((exit.x_b, exit.v_b));
            return Ok(rec);
        }
        if rec.hits.len() == k_max {
            rec.terminated = CycleTermination::MaxCycles;
            return Ok(rec);
        }
        let t_k = cur.t - exit.t_b;
        let x_k = exit.x_b;
        let sp = model.surface(&x_k);
        let mut tries = 0;
        let (v_k, next) = loop {
            let v_k = sample_reversed(&exit.v_b, &sp, &model.scatter, rng);
            let e = backward_exit(&PhasePoint::new(t_k, x_k, v_k), field, domain, opts)?;
            if !e.grazing || tries == MAX_GRAZING_RESAMPLES {
                break (v_k, e);
            }
            tries += 1;
            rec.grazing_resamples += 1;
        };
        rec.log_weight += model.theta_hat(&x_k) * (exit.v_b.norm_squared() - v_k.norm_squared());
        rec.hits.push(CycleHit { t: t_k, x: x_k, v_sampled: v_k, v_arrival: exit.v_b });
        cur = PhasePoint::new(t_k, x_k, v_k);
        exit = next;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Zero field that forces the general RK4 path.
    struct NumericZero;
    impl ForceField for NumericZero {
        fn acceleration(&self, _t: f64, _x: &Vec3) -> Vec3 {
            Vec3::zeros()
        }
    }

    fn opts() -> TraceOptions {
        TraceOptions::default()
    }

    #[test]
    fn straight_backward_ray() {
        let d = DomainGeometry::unit_ball();
        let p = PhasePoint::new(5.0, Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0));
        let b = backward_exit(&p, &ZeroField, &d, &opts()).unwrap();
        assert!(b.hit_boundary);
        assert!((b.t_b - 1.0).abs() < 1e-15);
        assert!((b.x_b - Vec3::new(-1.0, 0.0, 0.0)).norm() < 1e-15);
        assert_eq!(b.v_b, Vec3::new(1.0, 0.0, 0.0));

        let p = PhasePoint::new(0.5, Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0));
        let b = backward_exit(&p, &ZeroField, &d, &opts()).unwrap();
        assert!(!b.hit_boundary);
        assert_eq!(b.t_b, 0.5);
        assert!((b.x_b - Vec3::new(-0.5, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn disk_chord() {
        let d = DomainGeometry::unit_disk();
        let p = PhasePoint::new(10.0, Vec3::new(0.5, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0));
        let b = backward_exit(&p, &ZeroField, &d, &opts()).unwrap();
        assert!((b.t_b - 0.75f64.sqrt()).abs() < 1e-14);
        let b = backward_exit(&p, &NumericZero, &d, &opts()).unwrap();
        assert!((b.t_b - 0.75f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn immediate_exit_is_an_error() {
        let d = DomainGeometry::unit_ball();
        let p = PhasePoint::new(1.0, Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.0, 0.0, -1.0));
        assert!(matches!(backward_exit(&p, &ZeroField, &d, &opts()), Err(TraceError::ImmediateExit { .. })));
    }

    #[test]
    fn constant_field_parabola() {
        let d = DomainGeometry::ball(10.0, Vec3::zeros()).unwrap();
        let a = Vec3::new(0.3, -0.7, 1.1);
        let p = PhasePoint::new(0.0, Vec3::new(0.1, 0.2, 0.3), Vec3::new(1.0, 0.5, -0.4));
        let q = integrate_trajectory(&p, 1.0, &ConstantField(a), &d, &opts()).unwrap();
        assert!((q.x - (p.x + p.v + a * 0.5)).norm() < 1e-12);
        assert!((q.v - (p.v + a)).norm() < 1e-12);
    }

    #[test]
    fn reversibility() {
        let d = DomainGeometry::ball(10.0, Vec3::zeros()).unwrap();
        let f = HarmonicField { k: 2.0, center: Vec3::new(0.1, 0.0, 0.0) };
        let p = PhasePoint::new(0.0, Vec3::new(1.0, 0.5, -0.3), Vec3::new(0.4, 1.0, 0.2));
        let q = integrate_trajectory(&p, 1.0, &f, &d, &opts()).unwrap();
        let r = integrate_trajectory(&q, 0.0, &f, &d, &opts()).unwrap();
        assert!((r.x - p.x).norm() < 1e-10 && (r.v - p.v).norm() < 1e-10);
    }

    #[test]
    fn leaving_the_domain_is_reported() {
        let d = DomainGeometry::unit_ball();
        let p = PhasePoint::new(0.0, Vec3::zeros(), Vec3::new(2.0, 0.0, 0.0));
        assert!(matches!(integrate_trajectory(&p, 1.0, &ZeroField, &d, &opts()), Err(TraceError::LeftDomain { .. })));
    }

    #[test]
    fn chi_ramp() {
        assert_eq!(chi(-0.3), 0.0);
        assert_eq!(chi(1.2), 1.0);
        assert_eq!(chi(0.5), 0.5);
        let max_slope = (0..=1000).map(|i| chi_prime(i as f64 / 1000.0)).fold(0.0, f64::max);
        assert!((max_slope - 15.0 / 8.0).abs() < 1e-12);
    }

    #[test]
    fn alpha_cases() {
        let d = DomainGeometry::unit_ball();
        let kw = KineticWeightParams::new(0.1);
        // Exit only after t + eps.
        let p = PhasePoint::new(0.5, Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(kinetic_weight_alpha(&p, &kw, &ZeroField, &d, &opts()).unwrap(), 1.0);
        // Incoming boundary.
        let v = Vec3::new(0.3, 0.0, -0.8);
        let p = PhasePoint::new(0.7, Vec3::new(0.0, 0.0, 1.0), v);
        assert_eq!(kinetic_weight_alpha(&p, &kw, &ZeroField, &d, &opts()).unwrap(), 0.8);
        // t - t_b = -eps/2: exit at elapsed 1.05 from t = 1.0.
        let v = Vec3::new(1.0 / 1.05, 0.0, 0.0);
        let p = PhasePoint::new(1.0, Vec3::zeros(), v);
        let a = kinetic_weight_alpha(&p, &kw, &ZeroField, &d, &opts()).unwrap();
        let expect = 0.5 * v.x + 0.5;
        assert!((a - expect).abs() < 1e-12, "{a} vs {expect}");
    }

    #[test]
    fn cycles_without_hits() {
        let model = WallModel {
            domain: DomainGeometry::unit_ball(),
            wall: WallTemperature::constant(1.0).unwrap(),
            scatter: ScatterParams::diffuse(),
            t_m: 1.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = PhasePoint::new(0.2, Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0));
        let rec = backward_cycles(&p, &ZeroField, &model, &mut rng, DEFAULT_K_MAX, &opts()).unwrap();
        assert!(rec.hits.is_empty());
        assert_eq!(rec.log_weight, 0.0);
        assert_eq!(rec.terminated, CycleTermination::ReachedT0);
    }

    #[test]
    fn cycle_weights_with_matched_temperature() {
        let model = WallModel {
            domain: DomainGeometry::unit_ball(),
            wall: WallTemperature::constant(1.5).unwrap(),
            scatter: ScatterParams::new(0.6, 0.7).unwrap(),
            t_m: 1.5,
        };
        assert!((model.theta_hat(&Vec3::new(1.0, 0.0, 0.0)) + 1.0 / 6.0).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = PhasePoint::new(6.0, Vec3::new(0.2, 0.1, 0.0), Vec3::new(1.0, 0.3, 0.2));
        let rec = backward_cycles(&p, &ZeroField, &model, &mut rng, DEFAULT_K_MAX, &opts()).unwrap();
        assert!(!rec.hits.is_empty());
        let expected: f64 =
            rec.hits.iter().map(|h| (h.v_sampled.norm_squared() - h.v_arrival.norm_squared()) / (4.0 * 1.5)).sum();
        assert!((rec.log_weight - expected).abs() < 1e-12);
        assert!(rec.log_field_weight.abs() < 1e-12);
        let mut last = p.t;
        for h in &rec.hits {
            assert!(h.t < last);
            last = h.t;
            let n = model.domain.normal_at(&h.x);
            assert!(n.dot(&h.v_sampled) > 0.0 && n.dot(&h.v_arrival) < 0.0);
        }
    }
}
