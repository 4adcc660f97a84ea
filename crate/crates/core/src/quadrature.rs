//! Special functions, quadrature rules, and the closed-form Gaussian and
//! Gaussian-Bessel integrals used as exact oracles.

use std::f64::consts::{FRAC_PI_2, PI};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadratureError {
    #[error("quadrature did not converge: last two refinements {prev:e} and {last:e} (rel_tol {rel_tol:e})")]
    NotConverged { prev: f64, last: f64, rel_tol: f64 },
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
}

/// Below this argument `I0` is summed from its power series.
pub const I0_SERIES_CUTOFF: f64 = 8.0;

/// Modified Bessel function of the first kind, order zero.
pub fn bessel_i0(y: f64) -> f64 {
    let y = y.abs();
    if y < I0_SERIES_CUTOFF {
        i0_series(y)
    } else {
        i0_scaled_large(y) * y.exp()
    }
}

/// `exp(-|y|) I0(y)`, finite for all finite `y`.
pub fn bessel_i0_scaled(y: f64) -> f64 {
    let y = y.abs();
    if y < I0_SERIES_CUTOFF {
        i0_series(y) * (-y).exp()
    } else {
        i0_scaled_large(y)
    }
}

/// `ln I0(y)`, accurate where `I0` itself would overflow.
pub fn ln_bessel_i0(y: f64) -> f64 {
    let y = y.abs();
    bessel_i0_scaled(y).ln() + y
}

/// Power series `sum (y^2/4)^k / (k!)^2`.
pub fn i0_series(y: f64) -> f64 {
    let q = 0.25 * y * y;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    loop {
        term *= q / (k * k);
        sum += term;
        if term <= sum * 1e-17 {
            return sum;
        }
        k += 1.0;
    }
}

// Chebyshev coefficients of exp(-x) sqrt(x) I0(x) in 32/x - 2 on (8, inf).
const I0E_LARGE: [f64; 25] = [
    -7.233_180_487_874_754E-18,
    -4.830_504_485_944_182E-18,
    4.465_621_420_296_76E-17,
    3.461_222_867_697_461E-17,
    -2.827_623_980_516_583_6E-16,
    -3.425_485_619_677_219E-16,
    1.772_560_133_056_526_3E-15,
    3.811_680_669_352_622_4E-15,
    -9.554_846_698_828_307E-15,
    -4.150_569_347_287_222E-14,
    1.540_086_217_521_41E-14,
    3.852_778_382_742_142_6E-13,
    7.180_124_451_383_666E-13,
    -1.794_178_531_506_806_2E-12,
    -1.321_581_184_044_771_3E-11,
    -3.149_916_527_963_241_6E-11,
    1.188_914_710_784_643_9E-11,
    4.940_602_388_224_97E-10,
    3.396_232_025_708_386_5E-9,
    2.266_668_990_498_178E-8,
    2.048_918_589_469_063_8E-7,
    2.891_370_520_834_756_7E-6,
    6.889_758_346_916_825E-5,
    3.369_116_478_255_694_3E-3,
    8.044_904_110_141_088E-1,
];

/// Scaled large-argument form, `exp(-y) I0(y)` for `y >= 8`.
pub fn i0_scaled_large(y: f64) -> f64 {
    chbevl(32.0 / y - 2.0, &I0E_LARGE) / y.sqrt()
}

fn chbevl(x: f64, coeffs: &[f64]) -> f64 {
    let mut b0 = coeffs[0];
    let mut b1 = 0.0;
    let mut b2 = 0.0;
    for c in &coeffs[1..] {
        b2 = b1;
        b1 = b0;
        b0 = x.mul_add(b1, *c) - b2;
    }
    0.5 * (b0 - b2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    GaussHermite,
    GaussLegendreMapped,
    TanhSinh,
}

/// Quadrature configuration. A result is accepted once two successive
/// refinements agree within `rel_tol`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    pub scheme: Scheme,
    pub nodes: usize,
    /// Maximum number of node doublings.
    pub refinement: usize,
    pub rel_tol: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self { scheme: Scheme::TanhSinh, nodes: 1 << 8, refinement: 4, rel_tol: 1e-10 }
    }
}

impl QuadratureSpec {
    pub fn with_rel_tol(mut self, rel_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    /// Absolute difference between the last two refinements.
    pub error: f64,
    pub evaluations: usize,
    /// False when the refinements agree only within 10x `rel_tol`.
    pub converged: bool,
}

fn accept(prev: f64, last: f64, evaluations: usize, rel_tol: f64, final_level: bool) -> Option<Result<QuadResult, QuadratureError>> {
    let err = (last - prev).abs();
    let scale = last.abs().max(f64::MIN_POSITIVE);
    if err <= rel_tol * scale || (last == 0.0 && prev == 0.0) {
        return Some(Ok(QuadResult { value: last, error: err, evaluations, converged: true }));
    }
    if final_level {
        if err <= 10.0 * rel_tol * scale {
            return Some(Ok(QuadResult { value: last, error: err, evaluations, converged: false }));
        }
        return Some(Err(QuadratureError::NotConverged { prev, last, rel_tol }));
    }
    None
}

/// Integrates `f` over the finite interval `[a, b]`.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, spec: &QuadratureSpec) -> Result<QuadResult, QuadratureError> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(QuadratureError::InvalidParameters(format!("interval [{a}, {b}] must be finite")));
    }
    if a == b {
        return Ok(QuadResult { value: 0.0, error: 0.0, evaluations: 0, converged: true });
    }
    match spec.scheme {
        Scheme::TanhSinh => tanh_sinh(&mut f, a, b, spec),
        Scheme::GaussLegendreMapped | Scheme::GaussHermite => {
            let mut prev = None;
            let mut evals = 0;
            for level in 0..=spec.refinement {
                let n = spec.nodes << level;
                let (x, w) = gauss_legendre(n);
                let half = 0.5 * (b - a);
                let mid = 0.5 * (a + b);
                let s: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * f(mid + half * xi)).sum::<f64>() * half;
                evals += n;
                if let Some(p) = prev {
                    if let Some(r) = accept(p, s, evals, spec.rel_tol, level == spec.refinement) {
                        return r;
                    }
                }
                prev = Some(s);
            }
            unreachable!("refinement loop always returns at the final level")
        }
    }
}

/// Double-exponential rule on `[a, b]`; level 0 uses `spec.nodes` nodes and
/// each refinement halves the step, reusing earlier evaluations.
fn tanh_sinh<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64, spec: &QuadratureSpec) -> Result<QuadResult, QuadratureError> {
    const T_MAX: f64 = 4.0;
    let half = 0.5 * (b - a);
    let n0 = spec.nodes.max(4) / 2;
    let mut h = T_MAX / n0 as f64;
    let mut evals = 0;

    // Contribution of abscissa t (and -t), with endpoint distances computed
    // without cancellation.
    let point = |t: f64, f: &mut F| -> f64 {
        let s = FRAC_PI_2 * t.sinh();
        let c = FRAC_PI_2 * t.cosh();
        let e = (-2.0 * s.abs()).exp();
        // 1 - |x| = 2 e / (1 + e), weight = c / cosh^2(s) = 4 c e / (1+e)^2
        let one_minus = 2.0 * e / (1.0 + e);
        let w = 4.0 * c * e / ((1.0 + e) * (1.0 + e));
        if w == 0.0 || one_minus == 0.0 {
            return 0.0;
        }
        let (xl, xr) = if s >= 0.0 {
            (a + half * one_minus, b - half * one_minus)
        } else {
            (b - half * one_minus, a + half * one_minus)
        };
        let mut v = 0.0;
        if t == 0.0 {
            v += w * f(a + half);
        } else {
            // symmetric pair
            if xr < b {
                v += w * f(xr);
            }
            if xl > a {
                v += w * f(xl);
            }
        }
        v
    };

    let mut sum = point(0.0, f);
    evals += 1;
    for k in 1..=n0 {
        sum += point(k as f64 * h, f);
        evals += 2;
    }
    let mut prev = sum * h * half;
    for level in 1..=spec.refinement {
        h *= 0.5;
        let n = n0 << level;
        let mut add = 0.0;
        let mut k = 1;
        while k <= n {
            add += point(k as f64 * h, f);
            evals += 2;
            k += 2;
        }
        sum += add;
        let cur = sum * h * half;
        if let Some(r) = accept(prev, cur, evals, spec.rel_tol, level == spec.refinement) {
            return r;
        }
        prev = cur;
    }
    Ok(QuadResult { value: prev, error: f64::NAN, evaluations: evals, converged: false })
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j + 1) as f64 * z * p2 - j as f64 * p3) / (j + 1) as f64;
            }
            pp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Gauss-Hermite nodes and weights for the weight `exp(-x^2)` on the real line.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let pim4 = PI.powf(-0.25);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let mut z = 0.0;
    for i in 0..m {
        z = match i {
            0 => (2.0 * n as f64 + 1.0).sqrt() - 1.85575 * (2.0 * n as f64 + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..200 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * n as f64).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() < 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    x.reverse();
    w.reverse();
    (x, w)
}

/// Parameters `(a, b, eps, w)` of the Gaussian and Gaussian-Bessel integral
/// identities; valid when `a + eps < b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Abew {
    pub a: f64,
    pub b: f64,
    pub eps: f64,
    /// Shift vector for the plane identity; the half-line identities use `w[0]`.
    pub w: [f64; 2],
}

impl Abew {
    pub fn plane(a: f64, b: f64, eps: f64, w: [f64; 2]) -> Result<Self, QuadratureError> {
        let p = Self { a, b, eps, w };
        p.validate()?;
        Ok(p)
    }

    pub fn halfline(a: f64, b: f64, eps: f64, w: f64) -> Result<Self, QuadratureError> {
        if !(w >= 0.0) {
            return Err(QuadratureError::InvalidParameters(format!("w must be >= 0, got {w}")));
        }
        Self::plane(a, b, eps, [w, 0.0])
    }

    pub fn validate(&self) -> Result<(), QuadratureError> {
        let finite = [self.a, self.b, self.eps, self.w[0], self.w[1]].iter().all(|v| v.is_finite());
        if !finite || self.a < 0.0 || self.eps < 0.0 || self.b <= 0.0 {
            return Err(QuadratureError::InvalidParameters(format!("need a >= 0, eps >= 0, b > 0: {self:?}")));
        }
        if self.a + self.eps >= self.b {
            return Err(QuadratureError::InvalidParameters(format!(
                "need a + eps < b, got a + eps = {} and b = {}",
                self.a + self.eps,
                self.b
            )));
        }
        Ok(())
    }

    /// `b - a - eps`, the net Gaussian rate.
    pub fn gap(&self) -> f64 {
        self.b - self.a - self.eps
    }

    fn w2(&self) -> f64 {
        self.w[0] * self.w[0] + self.w[1] * self.w[1]
    }

    /// Center `b w / (b - a - eps)` of the completed square.
    pub fn shifted_center(&self) -> [f64; 2] {
        let s = self.b / self.gap();
        [s * self.w[0], s * self.w[1]]
    }
}

/// `b/(b-a-eps) exp((a+eps) b |w|^2 / (b-a-eps))`.
pub fn plane_gaussian_closed(p: &Abew) -> Result<f64, QuadratureError> {
    p.validate()?;
    Ok(closed_value(p, p.w2()))
}

fn closed_value(p: &Abew, w2: f64) -> f64 {
    let k = p.gap();
    p.b / k * ((p.a + p.eps) * p.b / k * w2).exp()
}

/// Integrand `(b/pi) e^{(a+eps)|v|^2} e^{-b|v-w|^2}` of the plane identity.
fn plane_integrand(p: &Abew, v1: f64, v2: f64) -> f64 {
    let v2n = v1 * v1 + v2 * v2;
    let d = (v1 - p.w[0]).powi(2) + (v2 - p.w[1]).powi(2);
    p.b / PI * ((p.a + p.eps) * v2n - p.b * d).exp()
}

/// Gaussian half-widths kept by the windowed quadratures; the discarded mass
/// is below `exp(-WINDOW^2)`.
const WINDOW: f64 = 13.0;

/// Tensor quadrature of the plane identity over a window around the
/// Gaussian center.
pub fn plane_gaussian_quad(p: &Abew, q: &QuadratureSpec) -> Result<f64, QuadratureError> {
    p.validate()?;
    let c = p.shifted_center();
    let l = WINDOW / p.gap().sqrt();
    let inner_spec = *q;
    let mut inner_err = None;
    let outer = integrate(
        |v1| match integrate(|v2| plane_integrand(p, v1, v2), c[1] - l, c[1] + l, &inner_spec) {
            Ok(r) => r.value,
            Err(e) => {
                inner_err.get_or_insert(e);
                f64::NAN
            }
        },
        c[0] - l,
        c[0] + l,
        q,
    );
    if let Some(e) = inner_err {
        return Err(e);
    }
    Ok(outer?.value)
}

/// Measured windowed mass against the bound an identity asserts for it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailCheck {
    pub mass: f64,
    pub bound: f64,
}

impl TailCheck {
    /// True when the mass does not exceed the bound beyond `rel_tol`.
    pub fn holds(&self, rel_tol: f64) -> bool {
        self.mass <= self.bound * (1.0 + rel_tol)
    }

    /// Empirical constant `mass / bound`.
    pub fn constant(&self) -> f64 {
        self.mass / self.bound
    }
}

/// Mass of the plane integrand outside the disc of `radius` around the
/// shifted center, against `exp(-(b-a-eps) radius^2)` times the closed form.
pub fn plane_gaussian_tail(p: &Abew, radius: f64, q: &QuadratureSpec) -> Result<TailCheck, QuadratureError> {
    p.validate()?;
    if !(radius > 0.0) {
        return Err(QuadratureError::InvalidParameters(format!("radius must be positive, got {radius}")));
    }
    let c = p.shifted_center();
    let k = p.gap();
    let l = WINDOW / k.sqrt();
    let mut inner_err = None;
    let outer = integrate(
        |th| {
            let (s, co) = th.sin_cos();
            match integrate(|r| r * plane_integrand(p, c[0] + r * co, c[1] + r * s), radius, radius + l, q) {
                Ok(r) => r.value,
                Err(e) => {
                    inner_err.get_or_insert(e);
                    f64::NAN
                }
            }
        },
        0.0,
        2.0 * PI,
        q,
    );
    if let Some(e) = inner_err {
        return Err(e);
    }
    let bound = (-k * radius * radius).exp() * closed_value(p, p.w2());
    Ok(TailCheck { mass: outer?.value, bound })
}

/// `b/(b-a-eps) exp((a+eps) b w^2/(b-a-eps))` for the half-line Bessel
/// identity.
pub fn halfline_bessel_closed(p: &Abew) -> Result<f64, QuadratureError> {
    p.validate()?;
    Ok(closed_value(p, p.w[0] * p.w[0]))
}

/// `2b v e^{(a+eps-b) v^2} e^{-b w^2} I0(2 b v w)`, with the Bessel growth
/// folded into the exponent.
pub fn halfline_integrand(p: &Abew, v: f64) -> f64 {
    let w = p.w[0];
    let y = 2.0 * p.b * v * w;
    2.0 * p.b * v * ((p.a + p.eps - p.b) * v * v - p.b * w * w + y).exp() * bessel_i0_scaled(y)
}

fn halfline_window_quad(p: &Abew, lo: f64, hi: f64, q: &QuadratureSpec) -> Result<f64, QuadratureError> {
    if hi <= lo {
        return Ok(0.0);
    }
    let c = p.shifted_center()[0];
    let mut total = 0.0;
    // Split at the peak so both pieces are smooth and unimodal.
    if c > lo && c < hi {
        total += integrate(|v| halfline_integrand(p, v), lo, c, q)?.value;
        total += integrate(|v| halfline_integrand(p, v), c, hi, q)?.value;
    } else {
        total += integrate(|v| halfline_integrand(p, v), lo, hi, q)?.value;
    }
    Ok(total)
}

fn halfline_upper(p: &Abew) -> f64 {
    p.shifted_center()[0] + WINDOW / p.gap().sqrt() + 1.0
}

pub fn halfline_bessel_quad(p: &Abew, q: &QuadratureSpec) -> Result<f64, QuadratureError> {
    p.validate()?;
    halfline_window_quad(p, 0.0, halfline_upper(p), q)
}

/// Integration window for the half-line tail checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HalflineWindow {
    /// `(0, delta)`: bounded by `delta` times the closed form.
    Near { delta: f64 },
    /// `(b w/(b-a-eps) + 1/delta, inf)`: bounded by
    /// `exp(-(b-a-eps)/(4 delta^2))` times the closed form.
    Far { delta: f64 },
    /// `(0, inf)`: equals the closed form.
    Full,
}

pub fn halfline_bessel_tails(p: &Abew, window: HalflineWindow, q: &QuadratureSpec) -> Result<TailCheck, QuadratureError> {
    p.validate()?;
    let closed = closed_value(p, p.w[0] * p.w[0]);
    let c = p.shifted_center()[0];
    match window {
        HalflineWindow::Near { delta } => {
            check_delta(delta)?;
            Ok(TailCheck { mass: halfline_window_quad(p, 0.0, delta, q)?, bound: delta * closed })
        }
        HalflineWindow::Far { delta } => {
            check_delta(delta)?;
            let lo = c + 1.0 / delta;
            let hi = lo.max(halfline_upper(p)) + WINDOW / p.gap().sqrt();
            let mass = halfline_window_quad(p, lo, hi, q)?;
            Ok(TailCheck { mass, bound: (-p.gap() / (4.0 * delta * delta)).exp() * closed })
        }
        HalflineWindow::Full => Ok(TailCheck { mass: halfline_bessel_quad(p, q)?, bound: closed }),
    }
}

fn check_delta(delta: f64) -> Result<(), QuadratureError> {
    if delta > 0.0 && delta.is_finite() {
        Ok(())
    } else {
        Err(QuadratureError::InvalidParameters(format!("delta must be positive, got {delta}")))
    }
}

/// Far tail `2m^2 int_{(n/m)u + 1/delta}^inf v e^{-m^2 v^2} I0(2 m n v u)
/// e^{-n^2 u^2} dv` of the normalized Rice density, checked against
/// `exp(-m^2/(4 delta^2))`; the returned constant is the measured prefactor.
pub fn rice_far_tail(m: f64, n: f64, u: f64, delta: f64, q: &QuadratureSpec) -> Result<TailCheck, QuadratureError> {
    if !(m > 0.0 && n > 0.0 && u >= 0.0) {
        return Err(QuadratureError::InvalidParameters(format!("need m, n > 0 and u >= 0: m={m}, n={n}, u={u}")));
    }
    check_delta(delta)?;
    let center = n / m * u;
    let lo = center + 1.0 / delta;
    let hi = lo + WINDOW / m + 1.0;
    let f = |v: f64| {
        let y = 2.0 * m * n * v * u;
        2.0 * m * m * v * (-m * m * v * v - n * n * u * u + y).exp() * bessel_i0_scaled(y)
    };
    let mass = integrate(f, lo, hi, q)?.value;
    Ok(TailCheck { mass, bound: (-m * m / (4.0 * delta * delta)).exp() })
}
