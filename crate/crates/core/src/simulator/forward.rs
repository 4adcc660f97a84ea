//! Forward particle simulation: exact or RK4 free flight, stochastic wall
//! reflection, optional DSMC collisions and optional self-consistent field.

use rayon::prelude::*;

use super::{stream, Particle, SimError};
use crate::characteristics::{flow, trace_to_boundary, ConstantField, ForceField, TraceOptions, WallModel, ZeroField};
use crate::collision::{dsmc_step, CollisionParams};
use crate::field::{compute_rho0, FieldState, PoissonGrid};
use crate::scattering::sample_outgoing;
use crate::Vec3;

#[derive(Debug, Clone, PartialEq)]
pub enum FieldMode {
    Off,
    /// Static external acceleration.
    External(Vec3),
    /// Poisson field of the particle density, re-solved every step.
    SelfConsistent { cells: usize, tol: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionSetup {
    pub params: CollisionParams,
    pub cells_per_axis: usize,
}

#[derive(Debug, Clone)]
pub struct ForwardConfig {
    pub model: WallModel,
    pub dt: f64,
    pub field: FieldMode,
    pub collisions: Option<CollisionSetup>,
    pub trace: TraceOptions,
    pub seed: u64,
    /// Thickness of the wall layer used by the flux estimator, as a
    /// fraction of the domain diameter.
    pub flux_layer: f64,
    /// Fault injection: skip wall handling so particles escape.
    pub disable_wall: bool,
}

pub const MAX_IMPACTS_PER_STEP: usize = 10_000;

/// Boundary-layer estimate of `int F (n . v) dv` at the wall.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FluxSample {
    pub net: f64,
    pub gross: f64,
    /// Particles contributing to the estimate.
    pub count: u64,
}

impl FluxSample {
    pub fn add(&mut self, other: &FluxSample) {
        self.net += other.net;
        self.gross += other.gross;
        self.count += other.count;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepReport {
    pub impacts: u64,
    pub collisions: u64,
}

pub struct ForwardState {
    pub particles: Vec<Particle>,
    pub t: f64,
    pub step: u64,
    pub impacts: u64,
    pub collisions: u64,
    rho0: f64,
    poisson: Option<PoissonGrid>,
    field: Option<FieldState>,
    cells: Option<PoissonGrid>,
    layer_volume: f64,
}

impl ForwardState {
    pub fn new(cfg: &ForwardConfig, particles: Vec<Particle>) -> Result<Self, SimError> {
        let domain = &cfg.model.domain;
        if !(cfg.dt >= 0.0) {
            return Err(SimError::Setup(format!("time step must be nonnegative, got {}", cfg.dt)));
        }
        let mass: f64 = particles.iter().map(|p| p.w).sum();
        let poisson = match cfg.field {
            FieldMode::SelfConsistent { cells, .. } => Some(PoissonGrid::new(domain, cells)?),
            _ => None,
        };
        let cells = match cfg.collisions {
            Some(c) => Some(PoissonGrid::new(domain, c.cells_per_axis)?),
            None => None,
        };
        let mut s = Self {
            particles,
            t: 0.0,
            step: 0,
            impacts: 0,
            collisions: 0,
            rho0: compute_rho0(mass, domain),
            poisson,
            field: None,
            cells,
            layer_volume: layer_volume(cfg),
        };
        s.update_field(cfg)?;
        Ok(s)
    }

    pub fn mass(&self) -> f64 {
        self.particles.iter().map(|p| p.w).fold(0.0, |a, w| a + w)
    }

    pub fn field(&self) -> Option<&FieldState> {
        self.field.as_ref()
    }

    fn update_field(&mut self, cfg: &ForwardConfig) -> Result<(), SimError> {
        if let (Some(grid), FieldMode::SelfConsistent { tol, .. }) = (&self.poisson, &cfg.field) {
            let x: Vec<Vec3> = self.particles.iter().map(|p| p.x).collect();
            let w: Vec<f64> = self.particles.iter().map(|p| p.w).collect();
            let mass = grid.deposit(&x, &w)?;
            self.field = Some(grid.solve(&mass, self.rho0, *tol)?);
        }
        Ok(())
    }

    /// Advances every particle by `dt`, then collides and re-solves the field.
    pub fn step(&mut self, cfg: &ForwardConfig) -> Result<StepReport, SimError> {
        let external = match cfg.field {
            FieldMode::External(a) => Some(ConstantField(a)),
            _ => None,
        };
        let force: &dyn ForceField = match (&external, &self.field) {
            (Some(e), _) => e,
            (None, Some(f)) => f,
            _ => &ZeroField,
        };
        let (t, step) = (self.t, self.step);
        let impacts: Result<Vec<u64>, SimError> = self
            .particles
            .par_iter_mut()
            .enumerate()
            .map(|(i, p)| push(p, i, t, step, cfg, force))
            .collect();
        let mut report = StepReport { impacts: impacts?.iter().sum(), collisions: 0 };
        if let (Some(setup), Some(cells)) = (&cfg.collisions, &self.cells) {
            report.collisions = collide_cells(&mut self.particles, cells, &setup.params, cfg.dt, cfg.seed, step);
        }
        self.t += cfg.dt;
        self.step += 1;
        self.impacts += report.impacts;
        self.collisions += report.collisions;
        self.update_field(cfg)?;
        Ok(report)
    }

    /// Snapshot of the wall flux from particles within the wall layer,
    /// normalized by the layer volume.
    pub fn sample_flux(&self, cfg: &ForwardConfig) -> FluxSample {
        let domain = &cfg.model.domain;
        let delta = cfg.flux_layer * domain.diameter();
        let mut s = FluxSample::default();
        for p in &self.particles {
            if domain.signed_distance(&p.x) > -delta {
                let n = domain.normal_at(&domain.project(&p.x));
                let f = p.w * n.dot(&p.v) / self.layer_volume;
                s.net += f;
                s.gross += f.abs();
                s.count += 1;
            }
        }
        s
    }
}

fn layer_volume(cfg: &ForwardConfig) -> f64 {
    let d = &cfg.model.domain;
    let delta = cfg.flux_layer * d.diameter();
    let a = d.semi_axes();
    let inner: f64 = (0..d.dimension()).map(|k| ((a[k] - delta) / a[k]).max(0.0)).product();
    d.volume() * (1.0 - inner)
}

/// Free flight for `dt` with wall reflections; returns the impact count.
fn push(p: &mut Particle, index: usize, t0: f64, step: u64, cfg: &ForwardConfig, force: &dyn ForceField) -> Result<u64, SimError> {
    let domain = &cfg.model.domain;
    let mut remaining = cfg.dt;
    let mut t = t0;
    let mut impacts = 0u64;
    let mut rng = None;
    loop {
        if cfg.disable_wall {
            (p.x, p.v) = flow(t, &p.x, &p.v, remaining, force, cfg.trace.h);
            break;
        }
        if force.is_zero() {
            let x = p.x + p.v * remaining;
            if domain.signed_distance(&x) <= 0.0 {
                p.x = x;
                break;
            }
        }
        let e = trace_to_boundary(t, &p.x, &p.v, 1.0, remaining, force, domain, &cfg.trace);
        p.x = e.x;
        p.v = e.v;
        if !e.hit_boundary {
            break;
        }
        remaining -= e.s;
        t += e.s;
        impacts += 1;
        if impacts as usize > MAX_IMPACTS_PER_STEP {
            return Err(SimError::TooManyImpacts { index, limit: MAX_IMPACTS_PER_STEP });
        }
        let rng = rng.get_or_insert_with(|| stream(cfg.seed, step, index as u64, 1));
        let sp = cfg.model.surface(&p.x);
        p.v = sample_outgoing(&p.v, &sp, &cfg.model.scatter, rng).v_out;
    }
    let d = domain.signed_distance(&p.x);
    if d > domain.boundary_tolerance() {
        return Err(SimError::Escaped { index, distance: d, t: t0 + cfg.dt });
    }
    Ok(impacts)
}

/// DSMC in every collision cell; returns the number of accepted collisions.
fn collide_cells(particles: &mut [Particle], cells: &PoissonGrid, params: &CollisionParams, dt: f64, seed: u64, step: u64) -> u64 {
    if particles.len() < 2 {
        return 0;
    }
    let mut order: Vec<(usize, usize)> =
        particles.iter().enumerate().filter_map(|(i, p)| cells.cell_index(&p.x).map(|c| (c, i))).collect();
    order.sort_unstable();
    let weight = particles[0].w;
    let mut total = 0;
    let mut start = 0;
    while start < order.len() {
        let cell = order[start].0;
        let end = start + order[start..].iter().take_while(|(c, _)| *c == cell).count();
        let members: Vec<usize> = order[start..end].iter().map(|(_, i)| *i).collect();
        let mut vel: Vec<Vec3> = members.iter().map(|&i| particles[i].v).collect();
        let mut b_max = 0.0;
        let mut rng = stream(seed, step, cell as u64, 2);
        let volume = cells.cut_volume(cell).max(f64::MIN_POSITIVE);
        total += dsmc_step(&mut vel, weight, volume, dt, params, &mut b_max, &mut rng).collisions as u64;
        for (&i, v) in members.iter().zip(vel) {
            particles[i].v = v;
        }
        start = end;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{DomainGeometry, WallTemperature};
    use crate::scattering::ScatterParams;
    use crate::simulator::InitialDatum;

    fn config(scatter: ScatterParams) -> ForwardConfig {
        ForwardConfig {
            model: WallModel {
                domain: DomainGeometry::unit_ball(),
                wall: WallTemperature::constant(1.0).unwrap(),
                scatter,
                t_m: 1.0,
            },
            dt: 0.01,
            field: FieldMode::Off,
            collisions: None,
            trace: TraceOptions::default(),
            seed: 7,
            flux_layer: 0.05,
            disable_wall: false,
        }
    }

    #[test]
    fn empty_state_steps() {
        let cfg = config(ScatterParams::diffuse());
        let mut s = ForwardState::new(&cfg, Vec::new()).unwrap();
        s.step(&cfg).unwrap();
        assert_eq!(s.mass(), 0.0);
    }

    #[test]
    fn specular_limit_preserves_speed() {
        let cfg = config(ScatterParams::new(1e-22, 1e-22).unwrap());
        let datum = InitialDatum::equilibrium(cfg.model.domain.clone(), 1.0, 1.0);
        let mut rng = stream(1, 0, 0, 0);
        let p0 = datum.sample(500, &mut rng);
        let mut s = ForwardState::new(&cfg, p0.clone()).unwrap();
        for _ in 0..300 {
            s.step(&cfg).unwrap();
        }
        assert!(s.impacts > 100);
        for (a, b) in p0.iter().zip(&s.particles) {
            assert!((a.v.norm() - b.v.norm()).abs() < 1e-10);
        }
    }

    #[test]
    fn escape_is_reported() {
        let mut cfg = config(ScatterParams::diffuse());
        cfg.disable_wall = true;
        cfg.dt = 1.0;
        let p = Particle { x: Vec3::zeros(), v: Vec3::new(3.0, 0.0, 0.0), w: 1.0 };
        let mut s = ForwardState::new(&cfg, vec![p]).unwrap();
        assert!(matches!(s.step(&cfg), Err(SimError::Escaped { .. })));
    }
}
