//! Forward particle simulation, the Picard iteration with Cercignani-Lampis
//! boundary coupling, the backward Duhamel estimator, and diagnostics.

pub mod diagnostics;
pub mod duhamel;
pub mod forward;
pub mod picard;

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::characteristics::TraceError;
use crate::field::FieldError;
use crate::geometry::DomainGeometry;
use crate::quadrature::QuadratureError;
use crate::Vec3;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("particle {index} escaped the domain (signed distance {distance:e}) at t={t}")]
    Escaped { index: usize, distance: f64, t: f64 },
    #[error("particle {index} exceeded {limit} wall impacts in one step")]
    TooManyImpacts { index: usize, limit: usize },
    #[error("invalid setup: {0}")]
    Setup(String),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle {
    pub x: Vec3,
    pub v: Vec3,
    pub w: f64,
}

/// Independent random stream for `(seed, a, b, c)`, so results do not
/// depend on iteration order or thread count.
pub fn stream(seed: u64, a: u64, b: u64, c: u64) -> ChaCha8Rng {
    let mut h = splitmix(seed);
    for x in [a, b, c] {
        h = splitmix(h ^ x);
    }
    ChaCha8Rng::seed_from_u64(h)
}

fn splitmix(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Initial datum `F_0(x, v) = M/|Omega| (1 + a s(x)) N(v; u0, T0)` where
/// `s(x) = (x_1 - c_1)/a_1` runs from -1 to 1 across the domain and `N` is
/// the normalized Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialDatum {
    pub domain: DomainGeometry,
    pub mass: f64,
    pub gradient: f64,
    pub temperature: f64,
    pub drift: Vec3,
}

impl InitialDatum {
    pub fn new(domain: DomainGeometry, mass: f64, gradient: f64, temperature: f64, drift: Vec3) -> Result<Self, SimError> {
        if !(mass >= 0.0 && gradient.abs() < 1.0 && temperature > 0.0) {
            return Err(SimError::Setup(format!(
                "initial datum needs mass >= 0, |gradient| < 1, temperature > 0 (got {mass}, {gradient}, {temperature})"
            )));
        }
        let drift = domain.restrict(&drift);
        Ok(Self { domain, mass, gradient, temperature, drift })
    }

    /// Uniform Maxwellian of total mass `mass` at temperature `t`.
    pub fn equilibrium(domain: DomainGeometry, mass: f64, t: f64) -> Self {
        Self { domain, mass, gradient: 0.0, temperature: t, drift: Vec3::zeros() }
    }

    pub fn dim(&self) -> usize {
        self.domain.dimension()
    }

    fn profile(&self, x: &Vec3) -> f64 {
        let c = self.domain.center();
        let a = self.domain.semi_axes();
        1.0 + self.gradient * (x.x - c.x) / a.x
    }

    /// `F_0(x, v)`.
    pub fn value(&self, x: &Vec3, v: &Vec3) -> f64 {
        let d = self.dim() as f64;
        let t = self.temperature;
        let g = (-(v - self.drift).norm_squared() / (2.0 * t)).exp() * (2.0 * PI * t).powf(-d / 2.0);
        self.mass / self.domain.volume() * self.profile(x) * g
    }

    /// Draws `n` equal-weight particles from `F_0`.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Particle> {
        let w = if n > 0 { self.mass / n as f64 } else { 0.0 };
        let s = self.temperature.sqrt();
        (0..n)
            .map(|_| {
                let x = loop {
                    let x = self.domain.sample_interior(rng);
                    if rng.random::<f64>() * (1.0 + self.gradient.abs()) <= self.profile(&x) {
                        break x;
                    }
                };
                let mut v = self.drift;
                for k in 0..self.dim() {
                    let g: f64 = rng.sample(StandardNormal);
                    v[k] += s * g;
                }
                Particle { x, v, w }
            })
            .collect()
    }
}

/// `exp(-|v|^2 / (2 T_M))`, the (unnormalized) global Maxwellian.
pub fn mu(v: &Vec3, t_m: f64) -> f64 {
    (-v.norm_squared() / (2.0 * t_m)).exp()
}

/// Speed CDF of the Maxwellian at temperature `t` in `dim` velocity dimensions.
pub fn maxwell_speed_cdf(s: f64, t: f64, dim: usize) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    let z = s * s / (2.0 * t);
    if dim == 2 {
        -(-z).exp_m1()
    } else {
        statrs::function::erf::erf(s / (2.0 * t).sqrt()) - (2.0 / PI).sqrt() * s / t.sqrt() * (-z).exp()
    }
}

/// Two-sided Kolmogorov-Smirnov statistic of `samples` against `cdf`.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter().enumerate().fold(0.0, |acc, (i, x)| {
        let c = cdf(*x);
        acc.max((c - i as f64 / n).abs()).max(((i + 1) as f64 / n - c).abs())
    })
}

/// Asymptotic KS critical value `c(alpha)/sqrt(n)` with
/// `c(alpha) = sqrt(-ln(alpha/2)/2)`.
pub fn ks_critical(n: usize, alpha: f64) -> f64 {
    (-(alpha / 2.0).ln() / 2.0).sqrt() / (n as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn speed_cdf_limits() {
        assert_eq!(maxwell_speed_cdf(0.0, 1.0, 3), 0.0);
        assert!((maxwell_speed_cdf(30.0, 1.0, 3) - 1.0).abs() < 1e-15);
        assert!((maxwell_speed_cdf(30.0, 1.0, 2) - 1.0).abs() < 1e-15);
        // Median of the 2D speed law: sqrt(2 ln 2 T).
        assert!((maxwell_speed_cdf((2.0 * 2f64.ln()).sqrt(), 1.0, 2) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ks_critical_value() {
        assert!((ks_critical(1, 0.01) - 1.6276).abs() < 1e-3);
    }

    #[test]
    fn datum_mass_and_positivity() {
        let d = InitialDatum::new(DomainGeometry::unit_disk(), 2.0, 0.5, 1.0, Vec3::zeros()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = d.sample(1000, &mut rng);
        assert!((p.iter().map(|p| p.w).sum::<f64>() - 2.0).abs() < 1e-12);
        assert!(p.iter().all(|p| p.v.z == 0.0 && d.domain.contains(&p.x)));
        assert!(InitialDatum::new(DomainGeometry::unit_disk(), 1.0, 1.0, 1.0, Vec3::zeros()).is_err());
    }
}
