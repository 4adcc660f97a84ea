//! Backward Monte Carlo for the collisionless problem: `f(t, x, v)` is the
//! expectation over stochastic backward cycles of the cycle weight times
//! `f_0` at the origin of the trace.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{mu, stream, InitialDatum, SimError};
use crate::characteristics::{backward_cycles, CycleTermination, ForceField, PhasePoint, TraceOptions, WallModel};
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DuhamelEstimate {
    pub mean: f64,
    pub std_error: f64,
    /// Fraction of traces stopped by the cycle cap before reaching `t = 0`.
    pub truncated_fraction: f64,
}

/// Backward-trace setup shared by the estimators.
pub struct Backtracer<'a> {
    pub model: &'a WallModel,
    pub field: &'a dyn ForceField,
    pub datum: &'a InitialDatum,
    pub trace: TraceOptions,
    pub k_max: usize,
}

impl Backtracer<'_> {
    /// `f_0 = F_0 / sqrt(mu)`.
    pub fn f0(&self, x: &Vec3, v: &Vec3) -> f64 {
        self.datum.value(x, v) / mu(v, self.model.t_m).sqrt()
    }

    /// One unbiased sample of `f(p)`; `None` if the cycle cap was hit.
    pub fn sample_f<R: Rng + ?Sized>(&self, p: &PhasePoint, rng: &mut R) -> Result<Option<f64>, SimError> {
        let rec = backward_cycles(p, self.field, self.model, rng, self.k_max, &self.trace)?;
        if rec.terminated == CycleTermination::MaxCycles {
            return Ok(None);
        }
        let (x0, v0) = rec.origin.expect("trace reached t = 0");
        Ok(Some(rec.total_weight() * self.f0(&x0, &v0)))
    }

    /// Estimate of `f(t, x, v)` from `n_traces` independent traces.
    pub fn estimate(&self, p: &PhasePoint, n_traces: usize, seed: u64) -> Result<DuhamelEstimate, SimError> {
        let mut samples = Vec::with_capacity(n_traces);
        let mut truncated = 0usize;
        for i in 0..n_traces {
            let mut rng = stream(seed, 3, i as u64, 0);
            match self.sample_f(p, &mut rng)? {
                Some(v) => samples.push(v),
                None => {
                    samples.push(0.0);
                    truncated += 1;
                }
            }
        }
        let est = crate::collision::Estimate::from_samples(&samples);
        Ok(DuhamelEstimate {
            mean: est.value,
            std_error: est.std_error,
            truncated_fraction: truncated as f64 / n_traces.max(1) as f64,
        })
    }

    /// Estimates `int int phi_k(x, v) F(t, x, v) dx dv` for several test
    /// functions at once, sampling `x` uniformly in the domain and `v` from a
    /// centered Gaussian at `proposal_t`. Returns `(mean, std_error)` pairs.
    pub fn observables(
        &self,
        t: f64,
        phis: &[&dyn Fn(&Vec3, &Vec3) -> f64],
        n: usize,
        proposal_t: f64,
        seed: u64,
    ) -> Result<Vec<(f64, f64)>, SimError> {
        let domain = &self.model.domain;
        let dim = domain.dimension();
        let norm = (2.0 * PI * proposal_t).powf(-(dim as f64) / 2.0) / domain.volume();
        let mut sums = vec![(0.0, 0.0); phis.len()];
        for i in 0..n {
            let mut rng = stream(seed, 4, i as u64, 0);
            let x = domain.sample_interior(&mut rng);
            let mut v = Vec3::zeros();
            for k in 0..dim {
                let g: f64 = rng.sample(StandardNormal);
                v[k] = proposal_t.sqrt() * g;
            }
            let q = norm * (-v.norm_squared() / (2.0 * proposal_t)).exp();
            let f = self.sample_f(&PhasePoint::new(t, x, v), &mut rng)?.unwrap_or(0.0);
            let big_f = mu(&v, self.model.t_m).sqrt() * f;
            for (s, phi) in sums.iter_mut().zip(phis) {
                let y = phi(&x, &v) * big_f / q;
                s.0 += y;
                s.1 += y * y;
            }
        }
        let nf = n as f64;
        Ok(sums
            .into_iter()
            .map(|(s, s2)| {
                let mean = s / nf;
                let var = (s2 / nf - mean * mean).max(0.0) * nf / (nf - 1.0).max(1.0);
                (mean, (var / nf).sqrt())
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::characteristics::{ZeroField, DEFAULT_K_MAX};
    use crate::geometry::{DomainGeometry, WallTemperature};
    use crate::scattering::ScatterParams;

    fn model(t_w: f64) -> WallModel {
        WallModel {
            domain: DomainGeometry::unit_ball(),
            wall: WallTemperature::constant(t_w).unwrap(),
            scatter: ScatterParams::diffuse(),
            t_m: t_w,
        }
    }

    #[test]
    fn before_first_exit_is_exact() {
        let m = model(1.0);
        let datum = InitialDatum::new(m.domain.clone(), 1.0, 0.4, 0.8, Vec3::new(0.1, 0.0, 0.0)).unwrap();
        let bt = Backtracer { model: &m, field: &ZeroField, datum: &datum, trace: TraceOptions::default(), k_max: DEFAULT_K_MAX };
        let p = PhasePoint::new(0.1, Vec3::new(0.2, 0.1, 0.0), Vec3::new(1.0, -0.5, 0.3));
        let e = bt.estimate(&p, 50, 1).unwrap();
        let exact = bt.f0(&(p.x - p.v * 0.1), &p.v);
        assert!((e.mean - exact).abs() < 1e-13 * exact && e.std_error < 1e-15 * exact, "{e:?} vs {exact}");
    }

    #[test]
    fn equilibrium_is_stationary() {
        let m = model(1.3);
        let datum = InitialDatum::equilibrium(m.domain.clone(), 2.0, 1.3);
        let bt = Backtracer { model: &m, field: &ZeroField, datum: &datum, trace: TraceOptions::default(), k_max: DEFAULT_K_MAX };
        let p = PhasePoint::new(3.0, Vec3::new(0.2, 0.1, -0.4), Vec3::new(1.0, -0.5, 0.3));
        let e = bt.estimate(&p, 200, 2).unwrap();
        let exact = bt.f0(&p.x, &p.v);
        assert!(((e.mean - exact) / exact).abs() < 1e-12, "{} vs {}", e.mean, exact);
    }
}

/// A smooth test function with a display name.
pub type Observable = (&'static str, fn(&Vec3, &Vec3) -> f64);

/// Test functions used for the forward/backward comparison.
pub fn reference_observables() -> Vec<Observable> {
    vec![
        ("one", |_, _| 1.0),
        ("energy", |_, v| v.norm_squared()),
        ("x1", |x, _| x.x),
        ("x1_v1", |x, v| x.x * v.x),
        ("gauss_cos", |x, v| (-x.norm_squared()).exp() * v.y.cos()),
    ]
}

/// Forward and backward estimates of one observable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualityRow {
    pub name: &'static str,
    pub forward: (f64, f64),
    pub backward: (f64, f64),
}

impl DualityRow {
    /// `|forward - backward|` in units of the combined standard error.
    pub fn z_score(&self) -> f64 {
        let se = (self.forward.1.powi(2) + self.backward.1.powi(2)).sqrt();
        let diff = (self.forward.0 - self.backward.0).abs();
        if se > 0.0 { diff / se } else if diff == 0.0 { 0.0 } else { f64::INFINITY }
    }
}

pub struct DualitySetup {
    pub model: WallModel,
    pub datum: InitialDatum,
    /// Constant external acceleration, zero for a free gas.
    pub acceleration: Vec3,
    pub t: f64,
    pub dt: f64,
    pub n_forward: usize,
    pub n_backward: usize,
    pub seed: u64,
}

/// Estimates every observable at time `t` by a forward particle run and by
/// backward traces from a Gaussian proposal.
pub fn duality_check(s: &DualitySetup, observables: &[Observable]) -> Result<Vec<DualityRow>, SimError> {
    use super::forward::{FieldMode, ForwardConfig, ForwardState};

    let field = if s.acceleration == Vec3::zeros() { FieldMode::Off } else { FieldMode::External(s.acceleration) };
    let cfg = ForwardConfig {
        model: s.model.clone(),
        dt: s.dt,
        field,
        collisions: None,
        trace: TraceOptions::default(),
        seed: s.seed,
        flux_layer: 0.05,
        disable_wall: false,
    };
    let particles = s.datum.sample(s.n_forward, &mut stream(s.seed, 5, 0, 0));
    let mut state = ForwardState::new(&cfg, particles)?;
    let steps = (s.t / s.dt).round() as usize;
    for _ in 0..steps {
        state.step(&cfg)?;
    }
    let forward: Vec<(f64, f64)> = observables.iter().map(|(_, phi)| super::diagnostics::observable(&state.particles, phi)).collect();

    let constant = crate::characteristics::ConstantField(s.acceleration);
    let field: &dyn ForceField = if s.acceleration == Vec3::zeros() { &crate::characteristics::ZeroField } else { &constant };
    let bt = Backtracer {
        model: &s.model,
        field,
        datum: &s.datum,
        trace: TraceOptions::default(),
        k_max: crate::characteristics::DEFAULT_K_MAX,
    };
    let t_q = 1.2 * s.datum.temperature.max(s.model.wall.t_max());
    let phis: Vec<&dyn Fn(&Vec3, &Vec3) -> f64> = observables.iter().map(|(_, phi)| phi as &dyn Fn(&Vec3, &Vec3) -> f64).collect();
    let backward = bt.observables(steps as f64 * s.dt, &phis, s.n_backward, t_q, s.seed)?;

    Ok(observables
        .iter()
        .zip(forward.into_iter().zip(backward))
        .map(|((name, _), (forward, backward))| DualityRow { name, forward, backward })
        .collect())
}
