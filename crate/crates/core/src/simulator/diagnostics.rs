//! Physical diagnostics of a particle state: mass, wall flux, and weighted
//! sup / L2 proxies of `f = F / sqrt(mu)` from phase-space binning.

use std::f64::consts::PI;
use std::io::Write;

use super::forward::FluxSample;
use super::{Particle, SimError};
use crate::field::PoissonGrid;
use crate::Vec3;

/// Weights of the Gaussian-weighted diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticWeights {
    /// `w_theta(v) = exp(theta |v|^2)`.
    pub theta: f64,
    pub theta_tilde: f64,
    /// Rate in `exp(-C t <v>^2)`.
    pub c_frak: f64,
    /// Rate in `exp(-lambda t <v>)`.
    pub lambda: f64,
    /// `L^{1+delta}` exponent offset.
    pub delta: f64,
}

impl DiagnosticWeights {
    /// Checks `0 < theta_tilde < theta < 1/(4 T_max)` and the other ranges.
    pub fn validate(&self, t_max: f64) -> Result<(), SimError> {
        let bound = 1.0 / (4.0 * t_max);
        if !(0.0 < self.theta_tilde && self.theta_tilde < self.theta && self.theta < bound) {
            return Err(SimError::Setup(format!(
                "need 0 < theta_tilde < theta < 1/(4 T_max) = {bound}, got theta_tilde={}, theta={}",
                self.theta_tilde, self.theta
            )));
        }
        if !(self.c_frak >= 0.0 && self.lambda >= 0.0 && self.delta > 0.0 && self.delta < 1.0) {
            return Err(SimError::Setup("need C >= 0, lambda >= 0, 0 < delta < 1".into()));
        }
        Ok(())
    }

    /// Defaults scaled to the maximal wall temperature.
    pub fn for_temperature(t_max: f64) -> Self {
        let theta = 0.5 / (4.0 * t_max);
        Self { theta, theta_tilde: 0.5 * theta, c_frak: 0.0, lambda: 1.0, delta: 0.1 }
    }

    /// `<v> = sqrt(1 + |v|^2)`.
    pub fn bracket(v: f64) -> f64 {
        (1.0 + v * v).sqrt()
    }

    /// `w_theta(v) exp(-C t <v>^2)`.
    pub fn h_weight(&self, speed: f64, t: f64) -> f64 {
        let b = Self::bracket(speed);
        (self.theta * speed * speed - self.c_frak * t * b * b).exp()
    }
}

/// One row of `diagnostics.csv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticRecord {
    pub t: f64,
    pub mass: f64,
    pub net_flux: f64,
    pub gross_flux: f64,
    pub h_sup: f64,
    pub l2_wnorm: f64,
}

pub const DIAGNOSTICS_HEADER: &str = "t,mass,net_flux,gross_flux,h_sup,l2_wnorm";

impl DiagnosticRecord {
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "{},{},{},{},{},{}", self.t, self.mass, self.net_flux, self.gross_flux, self.h_sup, self.l2_wnorm)
    }
}

/// Particles per velocity shell in the phase-space binning.
pub const SHELL_COUNT: usize = 64;

/// `(sup h, ||w_theta f||_2)` estimated by binning particles into spatial
/// cells and, within each cell, speed shells of [`SHELL_COUNT`] particles.
/// The bin density is `sum w / (cell volume * shell volume)`.
pub fn weighted_norms(particles: &[Particle], cells: &PoissonGrid, weights: &DiagnosticWeights, t: f64, t_m: f64) -> (f64, f64) {
    let dim = cells.domain().dimension();
    let mut by_cell: Vec<Vec<(f64, f64)>> = vec![Vec::new(); cells.len()];
    for p in particles {
        if let Some(c) = cells.cell_index(&p.x) {
            by_cell[c].push((p.v.norm(), p.w));
        }
    }
    let ball = |s: f64| if dim == 3 { 4.0 / 3.0 * PI * s.powi(3) } else { PI * s * s };
    let mut sup = 0.0f64;
    let mut l2 = 0.0;
    for (c, mut members) in by_cell.into_iter().enumerate() {
        if members.is_empty() || cells.cut_volume(c) <= 0.0 {
            continue;
        }
        members.sort_by(|a, b| a.0.total_cmp(&b.0));
        let vol_x = cells.cut_volume(c);
        let mut lo = 0.0;
        for chunk in members.chunks(SHELL_COUNT) {
            let hi = chunk.last().unwrap().0;
            let shell = ball(hi) - ball(lo);
            if shell <= 0.0 {
                continue;
            }
            let mass: f64 = chunk.iter().map(|m| m.1).sum();
            let speed = chunk.iter().map(|m| m.0).sum::<f64>() / chunk.len() as f64;
            let big_f = mass / (vol_x * shell);
            let f = big_f * (speed * speed / (4.0 * t_m)).exp();
            sup = sup.max(weights.h_weight(speed, t) * f);
            let wf = (weights.theta * speed * speed).exp() * f;
            l2 += wf * wf * vol_x * shell;
            lo = hi;
        }
    }
    (sup, l2.sqrt())
}

/// Assembles a diagnostics row from a state snapshot and an accumulated
/// flux window.
pub fn record(
    particles: &[Particle],
    t: f64,
    flux: &FluxSample,
    flux_snapshots: u64,
    cells: &PoissonGrid,
    weights: &DiagnosticWeights,
    t_m: f64,
) -> DiagnosticRecord {
    let mass = particles.iter().map(|p| p.w).fold(0.0, |a, w| a + w);
    let n = flux_snapshots.max(1) as f64;
    let (h_sup, l2_wnorm) = weighted_norms(particles, cells, weights, t, t_m);
    DiagnosticRecord { t, mass, net_flux: flux.net / n, gross_flux: flux.gross / n, h_sup, l2_wnorm }
}

/// Mean of `phi(x, v)` against the particle measure, with its standard error.
pub fn observable<F: Fn(&Vec3, &Vec3) -> f64>(particles: &[Particle], phi: F) -> (f64, f64) {
    let n = particles.len() as f64;
    if particles.is_empty() {
        return (0.0, 0.0);
    }
    let terms: Vec<f64> = particles.iter().map(|p| n * p.w * phi(&p.x, &p.v)).collect();
    let mean = terms.iter().sum::<f64>() / n;
    let var = terms.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}
