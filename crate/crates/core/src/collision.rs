//! Hard-potential Boltzmann collisions: the post-collision map, the kernel
//! `B = |v - u|^kappa q0(cos)`, loss frequency, a majorant DSMC step and a
//! Monte Carlo estimate of the gain term.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::geometry::random_unit;
use crate::quadrature::{bessel_i0_scaled, integrate, QuadratureError, QuadratureSpec};
use crate::Vec3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CollisionError {
    #[error("collision direction must be a unit vector, |omega| = {0}")]
    NonUnitOmega(f64),
    #[error("invalid collision parameters: need 0 < kappa <= 1 and q0_c > 0, got kappa={kappa}, q0_c={q0_c}")]
    InvalidParams { kappa: f64, q0_c: f64 },
    #[error("loss frequency of an empty ensemble")]
    EmptyEnsemble,
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

/// Angular law `q0(c) = C |c|` with hard-potential exponent `kappa`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionParams {
    pub kappa: f64,
    pub q0_c: f64,
    /// Velocity dimension (2 or 3); sets the sphere that `omega` lives on.
    pub dim: usize,
}

impl CollisionParams {
    pub fn new(kappa: f64, q0_c: f64, dim: usize) -> Result<Self, CollisionError> {
        if !(kappa > 0.0 && kappa <= 1.0 && q0_c > 0.0) || !(dim == 2 || dim == 3) {
            return Err(CollisionError::InvalidParams { kappa, q0_c });
        }
        Ok(Self { kappa, q0_c, dim })
    }

    pub fn q0(&self, cos: f64) -> f64 {
        self.q0_c * cos.abs()
    }

    /// Measure of the unit sphere of directions.
    pub fn sphere_measure(&self) -> f64 {
        if self.dim == 3 {
            4.0 * PI
        } else {
            2.0 * PI
        }
    }

    /// `int |c . omega| d omega` over the unit sphere.
    pub fn angular_integral(&self) -> f64 {
        if self.dim == 3 {
            2.0 * PI
        } else {
            4.0
        }
    }

    /// `int B(g, omega) d omega` for relative speed `g`.
    pub fn total_rate(&self, g: f64) -> f64 {
        g.powf(self.kappa) * self.q0_c * self.angular_integral()
    }

    pub fn label(&self) -> String {
        format!("q0(c)={}|c|, kappa={}", self.q0_c, self.kappa)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionPair {
    pub u: Vec3,
    pub v: Vec3,
    pub omega: Vec3,
    pub u_prime: Vec3,
    pub v_prime: Vec3,
}

/// `u' = u - [(u - v).omega] omega`, `v' = v + [(u - v).omega] omega`.
pub fn post_collision(u: &Vec3, v: &Vec3, omega: &Vec3) -> Result<(Vec3, Vec3), CollisionError> {
    let norm = omega.norm();
    if (norm - 1.0).abs() > 1e-12 {
        return Err(CollisionError::NonUnitOmega(norm));
    }
    Ok(reflect_pair(u, v, omega))
}

fn reflect_pair(u: &Vec3, v: &Vec3, omega: &Vec3) -> (Vec3, Vec3) {
    let s = (u - v).dot(omega);
    (u - omega * s, v + omega * s)
}

pub fn collide(u: &Vec3, v: &Vec3, omega: &Vec3) -> Result<CollisionPair, CollisionError> {
    let (u_prime, v_prime) = post_collision(u, v, omega)?;
    Ok(CollisionPair { u: *u, v: *v, omega: *omega, u_prime, v_prime })
}

/// `|v - u|^kappa q0((v - u)/|v - u| . omega)`.
pub fn kernel_b(u: &Vec3, v: &Vec3, omega: &Vec3, p: &CollisionParams) -> f64 {
    let c = v - u;
    let g = c.norm();
    if g == 0.0 {
        return 0.0;
    }
    g.powf(p.kappa) * p.q0(c.dot(omega) / g)
}

/// A velocity distribution that can be evaluated and sampled.
pub trait VelocityDensity {
    fn value(&self, u: &Vec3) -> f64;
    fn mass(&self) -> f64;
    /// Draws from `value / mass`.
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec3;
}

/// `n (2 pi T)^{-d/2} exp(-|u - mean|^2 / (2T))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Maxwellian {
    pub density: f64,
    pub temperature: f64,
    pub mean: Vec3,
    pub dim: usize,
}

impl Maxwellian {
    pub fn new(density: f64, temperature: f64, dim: usize) -> Self {
        Self { density, temperature, mean: Vec3::zeros(), dim }
    }

    /// Maxwellian whose value is `amplitude exp(-|u|^2/(2T))`.
    pub fn with_amplitude(amplitude: f64, temperature: f64, dim: usize) -> Self {
        Self::new(amplitude * (2.0 * PI * temperature).powf(dim as f64 / 2.0), temperature, dim)
    }

    pub fn amplitude(&self) -> f64 {
        self.density * (2.0 * PI * self.temperature).powf(-(self.dim as f64) / 2.0)
    }
}

impl VelocityDensity for Maxwellian {
    fn value(&self, u: &Vec3) -> f64 {
        self.amplitude() * (-(u - self.mean).norm_squared() / (2.0 * self.temperature)).exp()
    }

    fn mass(&self) -> f64 {
        self.density
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec3 {
        let s = self.temperature.sqrt();
        let mut u = Vec3::zeros();
        for k in 0..self.dim {
            let g: f64 = rng.sample(StandardNormal);
            u[k] = self.mean[k] + s * g;
        }
        u
    }
}

/// Monte Carlo or quadrature value with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

impl Estimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len() as f64;
        if samples.is_empty() {
            return Self { value: 0.0, std_error: 0.0 };
        }
        let mean = samples.iter().sum::<f64>() / n;
        let var = if samples.len() > 1 { samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        Self { value: mean, std_error: (var / n).sqrt() }
    }
}

/// `nu(F)(v) = int int B(v - u, omega) F(u) d omega du` for a Maxwellian,
/// by radial quadrature of the closed-form angular average about `v`.
pub fn loss_frequency_maxwellian(
    v: &Vec3,
    f: &Maxwellian,
    p: &CollisionParams,
    quad: &QuadratureSpec,
) -> Result<Estimate, CollisionError> {
    let t = f.temperature;
    let d = (v - f.mean).norm();
    let amp = f.amplitude();
    // Spherical average of exp(-|d + r w|^2 / 2T) over directions w, times the sphere measure.
    let shell = |r: f64| -> f64 {
        let x = r * d / t;
        if p.dim == 3 {
            if x < 1e-3 {
                let sinhc = 1.0 + x * x / 6.0 + x.powi(4) / 120.0;
                4.0 * PI * (-(d * d + r * r) / (2.0 * t)).exp() * sinhc
            } else {
                2.0 * PI * t / (r * d) * ((-(r - d).powi(2) / (2.0 * t)).exp() - (-(r + d).powi(2) / (2.0 * t)).exp())
            }
        } else {
            2.0 * PI * (-(r - d).powi(2) / (2.0 * t)).exp() * bessel_i0_scaled(x)
        }
    };
    let radial_power = p.kappa + (p.dim - 1) as f64;
    let integrand = |r: f64| if r <= 0.0 { 0.0 } else { r.powf(radial_power) * shell(r) };
    let upper = d + 40.0 * t.sqrt();
    let mut total = 0.0;
    let mut err = 0.0;
    for (a, b) in [(0.0, d), (d, upper)] {
        if b > a {
            let r = integrate(integrand, a, b, quad)?;
            total += r.value;
            err += r.error;
        }
    }
    let scale = amp * p.q0_c * p.angular_integral();
    Ok(Estimate { value: scale * total, std_error: scale * err })
}

/// Loss frequency of an empirical measure `sum_i w_i delta(u - u_i)`: the
/// sum is exact for the measure, the reported error is the sampling error
/// of the ensemble as a Monte Carlo draw.
pub fn loss_frequency_ensemble(v: &Vec3, velocities: &[Vec3], weights: &[f64], p: &CollisionParams) -> Result<Estimate, CollisionError> {
    if velocities.is_empty() {
        return Err(CollisionError::EmptyEnsemble);
    }
    let n = velocities.len() as f64;
    let terms: Vec<f64> =
        velocities.iter().zip(weights).map(|(u, w)| n * w * p.total_rate((v - u).norm())).collect();
    Ok(Estimate::from_samples(&terms))
}

/// Rigorous bound on pair relative speeds: sum of the two largest distances
/// from the cell mean, padded by 20%.
pub fn majorant_estimate(velocities: &[Vec3], p: &CollisionParams) -> f64 {
    if velocities.len() < 2 {
        return 0.0;
    }
    let mean = velocities.iter().sum::<Vec3>() / velocities.len() as f64;
    let (mut m1, mut m2) = (0.0f64, 0.0f64);
    for u in velocities {
        let r = (u - mean).norm();
        if r > m1 {
            m2 = m1;
            m1 = r;
        } else if r > m2 {
            m2 = r;
        }
    }
    (1.2 * (m1 + m2)).powf(p.kappa) * p.q0_c
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DsmcOutcome {
    pub collisions: usize,
    pub candidates: usize,
    /// Number of times the step was restarted after a majorant breach.
    pub retries: usize,
}

/// One no-time-counter DSMC step on the velocities of a single cell.
///
/// Every simulation particle carries `weight` physical particles; `volume`
/// is the cell volume inside the domain. Candidate pairs:
/// `ceil(N(N-1)/2 * weight * dt * |S| B_max / volume)`, each accepted with
/// probability `(B / B_max) * expected/candidates` where `omega` is uniform
/// on the sphere `S`. If an observed `B` exceeds `b_max`, the cell is
/// restored, the majorant raised and the step retried.
pub fn dsmc_step<R: Rng + ?Sized>(
    velocities: &mut [Vec3],
    weight: f64,
    volume: f64,
    dt: f64,
    p: &CollisionParams,
    b_max: &mut f64,
    rng: &mut R,
) -> DsmcOutcome {
    let n = velocities.len();
    let mut outcome = DsmcOutcome::default();
    if n < 2 || dt <= 0.0 || volume <= 0.0 {
        return outcome;
    }
    if *b_max <= 0.0 {
        *b_max = majorant_estimate(velocities, p);
        if *b_max <= 0.0 {
            return outcome;
        }
    }
    let snapshot = velocities.to_vec();
    'attempt: loop {
        let expected = 0.5 * (n * (n - 1)) as f64 * weight * dt * p.sphere_measure() * *b_max / volume;
        let candidates = expected.ceil() as usize;
        let thin = expected / candidates as f64;
        outcome.candidates = candidates;
        outcome.collisions = 0;
        for _ in 0..candidates {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            let omega = random_unit(rng, p.dim);
            let b = kernel_b(&velocities[i], &velocities[j], &omega, p);
            if b > *b_max {
                velocities.copy_from_slice(&snapshot);
                *b_max = (2.0 * *b_max).max(1.2 * b);
                outcome.retries += 1;
                continue 'attempt;
            }
            if rng.random::<f64>() < b / *b_max * thin {
                let (a, c) = reflect_pair(&velocities[i], &velocities[j], &omega);
                velocities[i] = a;
                velocities[j] = c;
                outcome.collisions += 1;
            }
        }
        return outcome;
    }
}

/// Monte Carlo estimate of `mu(v)^{-1/2} Q_gain(F, F)(v)` where `F` is a
/// pointwise-evaluable density and `mu = exp(-|v|^2 / (2 T_M))`.
///
/// `u` is drawn from `F / mass` and `omega` uniformly on the sphere, so each
/// sample is `mass |S| B(v - u, omega) F(v') F(u') / F(u)`.
pub fn gamma_gain_pointwise<D: VelocityDensity, R: Rng + ?Sized>(
    v: &Vec3,
    density: &D,
    t_m: f64,
    p: &CollisionParams,
    n_mc: usize,
    rng: &mut R,
) -> Estimate {
    let mass = density.mass();
    if mass == 0.0 || n_mc == 0 {
        return Estimate { value: 0.0, std_error: 0.0 };
    }
    let inv_sqrt_mu = (v.norm_squared() / (4.0 * t_m)).exp();
    let samples: Vec<f64> = (0..n_mc)
        .map(|_| {
            let u = density.sample(rng);
            let omega = random_unit(rng, p.dim);
            let (v_prime, u_prime) = reflect_pair(v, &u, &omega);
            let fu = density.value(&u);
            if fu == 0.0 {
                return 0.0;
            }
            mass * p.sphere_measure() * kernel_b(&u, v, &omega, p) * density.value(&v_prime) * density.value(&u_prime) / fu
                * inv_sqrt_mu
        })
        .collect();
    Estimate::from_samples(&samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params() -> CollisionParams {
        CollisionParams::new(1.0, 1.0, 3).unwrap()
    }

    #[test]
    fn head_on_swap() {
        let (a, b) = post_collision(&Vec3::new(1.0, 0.0, 0.0), &Vec3::zeros(), &Vec3::new(1.0, 0.0, 0.0)).unwrap();
        assert_eq!(a, Vec3::zeros());
        assert_eq!(b, Vec3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn perpendicular_direction_is_identity() {
        let u = Vec3::new(1.0, 2.0, 0.0);
        let v = Vec3::new(-1.0, 2.0, 0.0);
        let (a, b) = post_collision(&u, &v, &Vec3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!((a, b), (u, v));
        assert!(post_collision(&u, &v, &Vec3::new(0.0, 0.0, 1.1)).is_err());
    }

    #[test]
    fn conservation_and_involution() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let u = Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
            let v = Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
            let w = random_unit(&mut rng, 3);
            let c = collide(&u, &v, &w).unwrap();
            assert!((c.u_prime + c.v_prime - u - v).norm() <= 1e-14 * (u.norm() + v.norm()));
            let e0 = u.norm_squared() + v.norm_squared();
            assert!((c.u_prime.norm_squared() + c.v_prime.norm_squared() - e0).abs() <= 1e-12 * e0);
            let (a, b) = post_collision(&c.u_prime, &c.v_prime, &w).unwrap();
            assert!((a - u).norm() < 1e-12 && (b - v).norm() < 1e-12);
        }
    }

    #[test]
    fn kernel_values() {
        let p = params();
        let u = Vec3::zeros();
        let v = Vec3::new(0.0, 1.0, 0.0);
        assert_eq!(kernel_b(&u, &v, &Vec3::new(0.0, 1.0, 0.0), &p), 1.0);
        assert_eq!(kernel_b(&v, &v, &Vec3::new(0.0, 1.0, 0.0), &p), 0.0);
        let v = Vec3::new(0.0, 2.0, 0.0);
        let w = Vec3::new(0.75f64.sqrt(), 0.5, 0.0);
        assert!((kernel_b(&u, &v, &w, &p) - 1.0).abs() < 1e-15);
        assert_eq!(kernel_b(&u, &v, &w, &p), kernel_b(&v, &u, &w, &p));
    }

    #[test]
    fn loss_frequency_at_rest() {
        let f = Maxwellian::with_amplitude(1.0, 1.0, 3);
        let nu = loss_frequency_maxwellian(&Vec3::zeros(), &f, &params(), &QuadratureSpec::default()).unwrap();
        assert!((nu.value - 16.0 * PI * PI).abs() < 1e-9, "{}", nu.value);
        let nu = loss_frequency_ensemble(&Vec3::new(1.0, 2.0, 3.0), &[Vec3::new(1.0, 2.0, 3.0)], &[1.0], &params()).unwrap();
        assert_eq!(nu.value, 0.0);
    }

    #[test]
    fn loss_frequency_matches_cartesian_quadrature_off_center() {
        // Oracle: Gauss-Hermite tensor product over u in Cartesian coordinates.
        let (x, w) = crate::quadrature::gauss_hermite(60);
        let v = Vec3::new(0.7, -0.2, 0.4);
        let mut s = 0.0;
        for (a, wa) in x.iter().zip(&w) {
            for (b, wb) in x.iter().zip(&w) {
                for (c, wc) in x.iter().zip(&w) {
                    let u = Vec3::new(*a, *b, *c) * 2f64.sqrt();
                    s += wa * wb * wc * (v - u).norm();
                }
            }
        }
        let oracle = s * 2f64.sqrt().powi(3) * 2.0 * PI;
        let f = Maxwellian::with_amplitude(1.0, 1.0, 3);
        let nu = loss_frequency_maxwellian(&v, &f, &params(), &QuadratureSpec::default()).unwrap();
        assert!(((nu.value - oracle) / oracle).abs() < 1e-4, "{} vs {}", nu.value, oracle);
    }

    #[test]
    fn dsmc_zero_dt_and_forced_swap() {
        let p = params();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut vel = vec![Vec3::new(1.0, 0.0, 0.0), Vec3::zeros()];
        let mut b_max = 0.0;
        let out = dsmc_step(&mut vel, 1.0, 1.0, 0.0, &p, &mut b_max, &mut rng);
        assert_eq!(out.collisions, 0);
        assert_eq!(vel[0], Vec3::new(1.0, 0.0, 0.0));
        let (a, b) = reflect_pair(&vel[0], &vel[1], &Vec3::new(1.0, 0.0, 0.0));
        assert_eq!((a, b), (Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0)));
    }

    #[test]
    fn dsmc_recovers_from_majorant_breach() {
        let p = params();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut vel: Vec<Vec3> = (0..50).map(|_| Maxwellian::new(1.0, 1.0, 3).sample(&mut rng)).collect();
        let e0: f64 = vel.iter().map(|v| v.norm_squared()).sum();
        let m0: Vec3 = vel.iter().sum();
        let mut b_max = 1e-3;
        let out = dsmc_step(&mut vel, 1.0, 1.0, 0.05, &p, &mut b_max, &mut rng);
        assert!(out.retries > 0 && out.collisions > 0);
        let e1: f64 = vel.iter().map(|v| v.norm_squared()).sum();
        let m1: Vec3 = vel.iter().sum();
        assert!((e1 - e0).abs() <= 1e-12 * e0);
        assert!((m1 - m0).norm() <= 1e-12 * e0.sqrt());
    }

    #[test]
    fn gain_of_zero_density_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = Maxwellian::new(0.0, 1.0, 3);
        let g = gamma_gain_pointwise(&Vec3::new(1.0, 0.0, 0.0), &f, 1.0, &params(), 100, &mut rng);
        assert_eq!(g.value, 0.0);
    }
}
