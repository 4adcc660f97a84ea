//! Grid Picard iteration on the 2D disk: `f^{m+1}` is transported along the
//! characteristics of the field of `f^m`, with wall data obtained by applying
//! the scattering kernel to the outgoing trace of `f^m`.
//!
//! Every iterate is represented by the field slices it was transported with
//! and its wall table, so it can be evaluated exactly (up to table
//! interpolation) at any phase point by a backward trace. The stored grid
//! values on spatial nodes x velocity nodes feed the density, the field and
//! the `L^{1+delta}` increments.

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;

use super::{mu, InitialDatum, SimError};
use crate::characteristics::{backward_exit, ForceField, PhasePoint, TraceOptions, WallModel, ZeroField};
use crate::field::{compute_rho0, FieldState, PoissonGrid};
use crate::geometry::Shape;
use crate::scattering::{ln_eval_r, LimitingCase, SurfacePoint};
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PicardMode {
    /// Collisionless: transport, field and wall coupling.
    Linear,
    /// With the collision operator. Not supported by the grid solver.
    Full,
}

#[derive(Debug, Clone)]
pub struct PicardConfig {
    pub model: WallModel,
    pub datum: InitialDatum,
    pub mode: PicardMode,
    /// Time horizon `t_bar`.
    pub t_bar: f64,
    /// Number of time slices after `t = 0`.
    pub slices: usize,
    /// Spatial control volumes across the diameter.
    pub spatial_cells: usize,
    /// Velocity nodes per axis on `[-v_max, v_max]`.
    pub velocity_cells: usize,
    pub v_max: f64,
    /// Wall points, equally spaced in angle.
    pub angles: usize,
    pub iterations: usize,
    /// Self-consistent field on or off.
    pub field: bool,
    pub poisson_tol: f64,
    /// Rate in the time weight `exp(-lambda t <v>)`.
    pub lambda: f64,
    pub delta: f64,
    pub trace: TraceOptions,
}

impl PicardConfig {
    /// Reference fixture: perturbed Maxwellian on the unit disk.
    pub fn reference(model: WallModel, datum: InitialDatum, t_bar: f64) -> Self {
        let t_max = model.wall.t_max().max(datum.temperature).max(model.t_m);
        Self {
            model,
            datum,
            mode: PicardMode::Linear,
            t_bar,
            slices: 4,
            spatial_cells: 32,
            velocity_cells: 32,
            v_max: 8.0 * t_max.sqrt(),
            angles: 64,
            iterations: 8,
            field: true,
            poisson_tol: 1e-10,
            lambda: 1.0,
            delta: 0.1,
            trace: TraceOptions::default().with_step(0.05),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let setup = |m: String| Err(SimError::Setup(m));
        if self.mode == PicardMode::Full {
            return setup("picard: full mode (collisions) is not supported by the grid solver; use mode=linear".into());
        }
        if !matches!(self.model.domain.shape(), Shape::Disk { .. }) {
            return setup("picard: the domain must be a 2D disk".into());
        }
        if self.datum.domain != self.model.domain {
            return setup("picard: initial datum and wall model use different domains".into());
        }
        if !(self.t_bar > 0.0 && self.t_bar.is_finite()) {
            return setup(format!("picard: t_bar must be positive, got {}", self.t_bar));
        }
        if self.slices == 0 || self.iterations == 0 || self.velocity_cells < 2 || self.angles < 3 {
            return setup("picard: need slices >= 1, iterations >= 1, velocity_cells >= 2, angles >= 3".into());
        }
        if !(self.delta > 0.0 && self.delta < 1.0 && self.lambda >= 0.0) {
            return setup("picard: need 0 < delta < 1 and lambda >= 0".into());
        }
        let reach = self.datum.drift.x.abs().max(self.datum.drift.y.abs()) + 6.0 * self.datum.temperature.sqrt();
        if self.v_max < reach {
            return setup(format!(
                "picard: v_max = {} leaves initial-datum tail mass above 1e-8 (need v_max >= {reach})",
                self.v_max
            ));
        }
        Ok(())
    }
}

/// Cell-centered tensor velocity grid.
#[derive(Debug, Clone, Copy)]
struct VelocityGrid {
    n: usize,
    v_max: f64,
    dv: f64,
}

impl VelocityGrid {
    fn new(n: usize, v_max: f64) -> Self {
        Self { n, v_max, dv: 2.0 * v_max / n as f64 }
    }

    fn len(&self) -> usize {
        self.n * self.n
    }

    fn coord(&self, i: usize) -> f64 {
        -self.v_max + (i as f64 + 0.5) * self.dv
    }

    fn node(&self, k: usize) -> Vec3 {
        Vec3::new(self.coord(k % self.n), self.coord(k / self.n), 0.0)
    }

    fn cell_area(&self) -> f64 {
        self.dv * self.dv
    }

    /// Bilinear corners `(index, weight)` of `v`, clamped to the grid.
    fn corners(&self, v: &Vec3) -> [(usize, f64); 4] {
        let axis = |x: f64| {
            let s = ((x + self.v_max) / self.dv - 0.5).clamp(0.0, (self.n - 1) as f64);
            let i = (s.floor() as usize).min(self.n - 2);
            (i, s - i as f64)
        };
        let (i, fx) = axis(v.x);
        let (j, fy) = axis(v.y);
        let k = j * self.n + i;
        [(k, (1.0 - fx) * (1.0 - fy)), (k + 1, fx * (1.0 - fy)), (k + self.n, (1.0 - fx) * fy), (k + self.n + 1, fx * fy)]
    }
}

/// Time-interpolated field between consecutive slices.
struct SlicedField<'a> {
    slices: &'a [FieldState],
    dt: f64,
}

impl ForceField for SlicedField<'_> {
    fn acceleration(&self, t: f64, x: &Vec3) -> Vec3 {
        let last = self.slices.len() - 1;
        let s = (t / self.dt).clamp(0.0, last as f64);
        let n = (s.floor() as usize).min(last - 1);
        let w = s - n as f64;
        let (a, b) = (&self.slices[n], &self.slices[n + 1]);
        let grid = a.grid();
        match grid.stencil(&grid.domain().restrict(x)) {
            Ok(st) => st.iter().map(|(id, c)| (a.e[*id] * (1.0 - w) + b.e[*id] * w) * *c).sum(),
            Err(_) => Vec3::zeros(),
        }
    }
}

/// Wall point with its scattering rows.
struct WallPoint {
    x: Vec3,
    normal: Vec3,
    theta_hat: f64,
    /// Velocity nodes with `n . u > 0`.
    outgoing: Vec<usize>,
}

enum WallOperator {
    /// Row `v` of angle `a` holds unnormalized weights over `outgoing`,
    /// row-major, one row per velocity node.
    Kernel(Vec<Vec<f32>>),
    /// Delta kernels: the wall value at `v` is the outgoing value at the
    /// mapped velocity.
    Specular,
    BounceBack,
}

/// Grid values of one iterate plus what is needed to evaluate it anywhere.
#[derive(Debug, Clone)]
pub struct PicardState {
    /// `f[n][node * |V| + k]` at slice `n`.
    pub f: Vec<Vec<f64>>,
    pub m: usize,
    /// Field snapshots computed from this iterate, one per slice.
    pub fields: Option<Vec<FieldState>>,
    /// Outgoing trace `g[n][a][j]` at wall point `a`, velocity `outgoing[j]`.
    g: Vec<Vec<Vec<f64>>>,
}

/// Result of a Picard run.
#[derive(Debug, Clone, PartialEq)]
pub struct PicardRun {
    /// `d_m = sup_n ||exp(-lambda t <v>) (f^{m+1} - f^m)(t_n)||_{1+delta}`.
    pub d: Vec<f64>,
}

impl PicardRun {
    /// `d_{m+1}/d_m`, `NaN` where `d_m = 0`.
    pub fn ratios(&self) -> Vec<f64> {
        self.d.windows(2).map(|w| if w[0] > 0.0 { w[1] / w[0] } else { f64::NAN }).collect()
    }

    /// Geometric mean of the ratios `d_{m+1}/d_m` for `m` in `range`.
    pub fn geometric_mean_ratio(&self, range: std::ops::RangeInclusive<usize>) -> f64 {
        let r = self.ratios();
        let sel: Vec<f64> = range.filter_map(|m| r.get(m).copied()).collect();
        (sel.iter().map(|x| x.ln()).sum::<f64>() / sel.len() as f64).exp()
    }

    /// `m,d_m,ratio` rows; the ratio column is empty for `m = 0`.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "m,d_m,ratio")?;
        for (m, d) in self.d.iter().enumerate() {
            if m == 0 {
                writeln!(w, "{m},{d:e},")?;
            } else {
                let prev = self.d[m - 1];
                let r = if prev > 0.0 { format!("{:e}", d / prev) } else { String::new() };
                writeln!(w, "{m},{d:e},{r}")?;
            }
        }
        Ok(())
    }
}

pub struct PicardSolver {
    cfg: PicardConfig,
    grid: PoissonGrid,
    /// Active spatial nodes: `(grid id, evaluation point, cut volume)`.
    nodes: Vec<(usize, Vec3, f64)>,
    vgrid: VelocityGrid,
    wall: Vec<WallPoint>,
    operator: WallOperator,
    times: Vec<f64>,
    rho0: f64,
    pub state: PicardState,
}

impl PicardSolver {
    pub fn new(cfg: PicardConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let domain = &cfg.model.domain;
        let grid = PoissonGrid::new(domain, cfg.spatial_cells)?;
        let nodes: Vec<(usize, Vec3, f64)> = (0..grid.len())
            .filter(|&i| grid.is_active(i))
            .map(|i| {
                let c = grid.node_position(i);
                let x = if domain.contains(&c) { c } else { domain.project(&c) };
                (i, x, grid.cut_volume(i))
            })
            .collect();
        let vgrid = VelocityGrid::new(cfg.velocity_cells, cfg.v_max);
        let (center, radius) = match domain.shape() {
            Shape::Disk { radius, center } => (*center, *radius),
            _ => unreachable!("validated"),
        };
        let wall: Vec<WallPoint> = (0..cfg.angles)
            .map(|a| {
                let phi = 2.0 * PI * a as f64 / cfg.angles as f64;
                let normal = Vec3::new(phi.cos(), phi.sin(), 0.0);
                let x = center + normal * radius;
                let outgoing = (0..vgrid.len()).filter(|&k| normal.dot(&vgrid.node(k)) > 0.0).collect();
                WallPoint { x, normal, theta_hat: cfg.model.theta_hat(&x), outgoing }
            })
            .collect();
        let operator = match cfg.model.scatter.limiting_case() {
            LimitingCase::NearSpecular => WallOperator::Specular,
            LimitingCase::NearBounceBack => WallOperator::BounceBack,
            _ => WallOperator::Kernel(wall.par_iter().map(|w| kernel_rows(w, &vgrid, &cfg.model)).collect()),
        };
        let times: Vec<f64> = (0..=cfg.slices).map(|n| cfg.t_bar * n as f64 / cfg.slices as f64).collect();
        let rho0 = compute_rho0(cfg.datum.mass, domain);

        let mut solver = Self {
            grid,
            nodes,
            vgrid,
            wall,
            operator,
            times,
            rho0,
            state: PicardState { f: Vec::new(), m: 0, fields: None, g: Vec::new() },
            cfg,
        };
        let f0: Vec<f64> = solver.grid_values(|x, v| Ok(solver.f0(x, v)))?;
        let g0 = solver.wall_values(|x, v| Ok(solver.f0(x, v)))?;
        let slices = solver.times.len();
        solver.state.f = vec![f0; slices];
        solver.state.g = vec![g0; slices];
        solver.state.fields = solver.solve_fields(&solver.state.f)?;
        Ok(solver)
    }

    pub fn config(&self) -> &PicardConfig {
        &self.cfg
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// `(evaluation point, velocity)` of flat grid index `node * |V| + k`.
    pub fn grid_point(&self, index: usize) -> (Vec3, Vec3) {
        let nv = self.vgrid.len();
        (self.nodes[index / nv].1, self.vgrid.node(index % nv))
    }

    fn f0(&self, x: &Vec3, v: &Vec3) -> f64 {
        self.cfg.datum.value(x, v) / mu(v, self.cfg.model.t_m).sqrt()
    }

    fn grid_values<F: Fn(&Vec3, &Vec3) -> Result<f64, SimError> + Sync>(&self, f: F) -> Result<Vec<f64>, SimError> {
        let nv = self.vgrid.len();
        (0..self.nodes.len() * nv).into_par_iter().map(|i| f(&self.nodes[i / nv].1, &self.vgrid.node(i % nv))).collect()
    }

    fn wall_values<F: Fn(&Vec3, &Vec3) -> Result<f64, SimError> + Sync>(&self, f: F) -> Result<Vec<Vec<f64>>, SimError> {
        self.wall.par_iter().map(|w| w.outgoing.iter().map(|&k| f(&w.x, &self.vgrid.node(k))).collect()).collect()
    }

    /// `rho = int sqrt(mu) f dv` per node, then the Poisson field per slice.
    fn solve_fields(&self, f: &[Vec<f64>]) -> Result<Option<Vec<FieldState>>, SimError> {
        if !self.cfg.field {
            return Ok(None);
        }
        let nv = self.vgrid.len();
        let sqrt_mu: Vec<f64> = (0..nv).map(|k| mu(&self.vgrid.node(k), self.cfg.model.t_m).sqrt()).collect();
        let mut out = Vec::with_capacity(f.len());
        for slice in f {
            let mut mass = vec![0.0; self.grid.len()];
            for (n, (id, _, vol)) in self.nodes.iter().enumerate() {
                let rho: f64 = slice[n * nv..(n + 1) * nv].iter().zip(&sqrt_mu).map(|(a, b)| a * b).sum::<f64>() * self.vgrid.cell_area();
                mass[*id] = rho * vol;
            }
            out.push(self.grid.solve(&mass, self.rho0, self.cfg.poisson_tol)?);
        }
        Ok(Some(out))
    }

    /// Wall tables `e^{-theta_hat |v|^2} f^{m+1}` on the incoming side from
    /// the outgoing trace of `f^m`, extended to every velocity node by
    /// mirroring the normal component.
    fn wall_tables(&self) -> Vec<Vec<Vec<f64>>> {
        let nv = self.vgrid.len();
        self.state
            .g
            .iter()
            .map(|g_slice| {
                self.wall
                    .par_iter()
                    .enumerate()
                    .map(|(a, w)| {
                        let g = &g_slice[a];
                        match &self.operator {
                            WallOperator::Kernel(rows) => {
                                let m = w.outgoing.len();
                                let src: Vec<f64> = w
                                    .outgoing
                                    .iter()
                                    .zip(g)
                                    .map(|(&k, gv)| (-w.theta_hat * self.vgrid.node(k).norm_squared()).exp() * gv)
                                    .collect();
                                (0..nv)
                                    .map(|v| {
                                        let row = &rows[a][v * m..(v + 1) * m];
                                        let (mut num, mut den) = (0.0, 0.0);
                                        for (kw, s) in row.iter().zip(&src) {
                                            num += *kw as f64 * s;
                                            den += *kw as f64;
                                        }
                                        if den > 0.0 { num / den } else { 0.0 }
                                    })
                                    .collect()
                            }
                            op => (0..nv)
                                .map(|k| {
                                    let v = incoming_mirror(&self.vgrid.node(k), &w.normal);
                                    let u = match op {
                                        WallOperator::Specular => v - w.normal * (2.0 * w.normal.dot(&v)),
                                        _ => -v,
                                    };
                                    (-w.theta_hat * v.norm_squared()).exp() * self.interp_outgoing(a, g, &u)
                                })
                                .collect(),
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Bilinear interpolation of an outgoing table over corners with `n . u > 0`.
    fn interp_outgoing(&self, a: usize, g: &[f64], u: &Vec3) -> f64 {
        let w = &self.wall[a];
        let (mut num, mut den) = (0.0, 0.0);
        for (k, c) in self.vgrid.corners(u) {
            if c > 0.0 {
                if let Ok(j) = w.outgoing.binary_search(&k) {
                    num += c * g[j];
                    den += c;
                }
            }
        }
        if den > 0.0 { num / den } else { 0.0 }
    }

    /// Wall value at `(t, x_b, v)`, `x_b` on the wall, from tables
    /// interpolated in time, angle and velocity.
    fn wall_value(&self, tables: &[Vec<Vec<f64>>], t: f64, x_b: &Vec3, v: &Vec3) -> f64 {
        let c = self.cfg.model.domain.center();
        let na = self.wall.len();
        let s_a = (x_b.y - c.y).atan2(x_b.x - c.x).rem_euclid(2.0 * PI) / (2.0 * PI) * na as f64;
        let a0 = (s_a.floor() as usize) % na;
        let wa = s_a - s_a.floor();
        let last = self.times.len() - 1;
        let s_t = (t / self.times[1]).clamp(0.0, last as f64);
        let n0 = (s_t.floor() as usize).min(last - 1);
        let wt = s_t - n0 as f64;
        let corners = self.vgrid.corners(v);
        let mut acc = 0.0;
        for (n, w_n) in [(n0, 1.0 - wt), (n0 + 1, wt)] {
            for (a, w_a) in [(a0, 1.0 - wa), ((a0 + 1) % na, wa)] {
                let w = w_n * w_a;
                if w == 0.0 {
                    continue;
                }
                acc += w * corners.iter().map(|(k, cw)| cw * tables[n][a][*k]).sum::<f64>();
            }
        }
        let theta_hat = self.cfg.model.theta_hat(x_b);
        (theta_hat * v.norm_squared()).exp() * acc
    }

    /// Value of the next iterate at a phase point, transported under
    /// `field` with wall data `tables`.
    fn evaluate(&self, field: &dyn ForceField, tables: &[Vec<Vec<f64>>], t: f64, x: &Vec3, v: &Vec3) -> Result<f64, SimError> {
        if t <= 0.0 {
            return Ok(self.f0(x, v));
        }
        let domain = &self.cfg.model.domain;
        if domain.signed_distance(x) >= -domain.boundary_tolerance() && domain.normal_at(x).dot(v) <= 0.0 {
            return Ok(self.wall_value(tables, t, x, v));
        }
        let e = backward_exit(&PhasePoint::new(t, *x, *v), field, domain, &self.cfg.trace)?;
        let factor = ((v.norm_squared() - e.v_b.norm_squared()) / (4.0 * self.cfg.model.t_m)).exp();
        Ok(factor
            * if e.hit_boundary {
                self.wall_value(tables, t - e.t_b, &e.x_b, &e.v_b)
            } else {
                self.f0(&e.x_b, &e.v_b)
            })
    }

    /// Values of the next iterate at arbitrary phase points with
    /// `0 <= t <= t_bar`.
    pub fn evaluate_next(&self, points: &[PhasePoint]) -> Result<Vec<f64>, SimError> {
        let tables = self.wall_tables();
        let sliced = self.state.fields.as_ref().map(|s| SlicedField { slices: s, dt: self.times[1] });
        let field: &dyn ForceField = match &sliced {
            Some(s) => s,
            None => &ZeroField,
        };
        points.par_iter().map(|p| self.evaluate(field, &tables, p.t, &p.x, &p.v)).collect()
    }

    /// Computes `f^{m+1}` and returns `d_m`.
    pub fn step(&mut self) -> Result<f64, SimError> {
        let tables = self.wall_tables();
        let sliced = self.state.fields.as_ref().map(|s| SlicedField { slices: s, dt: self.times[1] });
        let field: &dyn ForceField = match &sliced {
            Some(s) => s,
            None => &ZeroField,
        };
        let mut f = Vec::with_capacity(self.times.len());
        let mut g = Vec::with_capacity(self.times.len());
        for &t in &self.times {
            f.push(self.grid_values(|x, v| self.evaluate(field, &tables, t, x, v))?);
            g.push(self.wall_values(|x, v| self.evaluate(field, &tables, t, x, v))?);
        }
        let d = self.increment(&f);
        self.state.fields = self.solve_fields(&f)?;
        self.state.f = f;
        self.state.g = g;
        self.state.m += 1;
        Ok(d)
    }

    /// `sup_n ||exp(-lambda t_n <v>) (f_new - f^m)(t_n)||_{L^{1+delta}}` by
    /// cut-cell x velocity-cell quadrature.
    fn increment(&self, f_new: &[Vec<f64>]) -> f64 {
        let nv = self.vgrid.len();
        let p = 1.0 + self.cfg.delta;
        let bracket: Vec<f64> = (0..nv).map(|k| (1.0 + self.vgrid.node(k).norm_squared()).sqrt()).collect();
        self.times
            .iter()
            .enumerate()
            .map(|(n, &t)| {
                let mut sum = 0.0;
                for (i, (_, _, vol)) in self.nodes.iter().enumerate() {
                    let mut s = 0.0;
                    for k in 0..nv {
                        let d = f_new[n][i * nv + k] - self.state.f[n][i * nv + k];
                        s += ((-self.cfg.lambda * t * bracket[k]).exp() * d).abs().powf(p);
                    }
                    sum += s * vol;
                }
                (sum * self.vgrid.cell_area()).powf(1.0 / p)
            })
            .fold(0.0, f64::max)
    }
}

/// `v` with its normal component replaced by `-max(|n.v|, tiny)`.
fn incoming_mirror(v: &Vec3, n: &Vec3) -> Vec3 {
    let vn = n.dot(v);
    let target = -vn.abs().max(1e-9 * (1.0 + v.norm()));
    v + n * (target - vn)
}

/// Weights of `dsigma(u, v)` on the velocity grid, one row per velocity
/// node (mirrored to the incoming side), one column per outgoing node.
fn kernel_rows(w: &WallPoint, vgrid: &VelocityGrid, model: &WallModel) -> Vec<f32> {
    let sp = SurfacePoint::new(w.normal, model.wall.at(&w.x), 2);
    let t_w = sp.t_w;
    let us: Vec<Vec3> = w.outgoing.iter().map(|&k| vgrid.node(k)).collect();
    let mut rows = Vec::with_capacity(vgrid.len() * us.len());
    for k in 0..vgrid.len() {
        let v = incoming_mirror(&vgrid.node(k), &w.normal);
        let base = -(w.normal.dot(&v)).abs().ln() + v.norm_squared() / (2.0 * t_w);
        let logs: Vec<f64> = us
            .iter()
            .map(|u| {
                let r = ln_eval_r(u, &v, &sp, &model.scatter).expect("half-spaces fixed by construction");
                r + w.normal.dot(u).ln() - u.norm_squared() / (2.0 * t_w) + base
            })
            .collect();
        // Rows are normalized when applied; scale by the row maximum so the
        // f32 entries stay in range.
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        rows.extend(logs.iter().map(|l| (l - top).exp() as f32));
    }
    rows
}

/// Runs `cfg.iterations` Picard steps.
pub fn picard_iterate(cfg: PicardConfig) -> Result<PicardRun, SimError> {
    let iterations = cfg.iterations;
    let mut solver = PicardSolver::new(cfg)?;
    let d = (0..iterations).map(|_| solver.step()).collect::<Result<_, _>>()?;
    Ok(PicardRun { d })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{DomainGeometry, WallTemperature};
    use crate::scattering::ScatterParams;

    fn small(scatter: ScatterParams, datum: InitialDatum, t_w: f64) -> PicardConfig {
        let model = WallModel {
            domain: DomainGeometry::unit_disk(),
            wall: WallTemperature::constant(t_w).unwrap(),
            scatter,
            t_m: t_w,
        };
        let mut c = PicardConfig::reference(model, datum, 0.2);
        c.spatial_cells = 8;
        c.velocity_cells = 12;
        c.angles = 16;
        c.slices = 2;
        c.iterations = 2;
        c
    }

    #[test]
    fn zero_data_stays_zero() {
        let datum = InitialDatum::equilibrium(DomainGeometry::unit_disk(), 0.0, 1.0);
        let run = picard_iterate(small(ScatterParams::new(0.5, 0.7).unwrap(), datum, 1.0)).unwrap();
        assert_eq!(run.d, vec![0.0, 0.0]);
    }

    #[test]
    fn equilibrium_is_a_fixed_point() {
        let datum = InitialDatum::equilibrium(DomainGeometry::unit_disk(), 1.5, 1.2);
        let run = picard_iterate(small(ScatterParams::new(0.5, 0.7).unwrap(), datum, 1.2)).unwrap();
        assert!(run.d.iter().all(|d| *d < 1e-12), "{:?}", run.d);
    }

    #[test]
    fn full_mode_is_rejected() {
        let datum = InitialDatum::equilibrium(DomainGeometry::unit_disk(), 1.0, 1.0);
        let mut c = small(ScatterParams::diffuse(), datum, 1.0);
        c.mode = PicardMode::Full;
        assert!(matches!(PicardSolver::new(c), Err(SimError::Setup(_))));
    }

    #[test]
    fn csv_layout() {
        let run = PicardRun { d: vec![1.0, 0.5, 0.0] };
        let mut out = Vec::new();
        run.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "m,d_m,ratio\n0,1e0,\n1,5e-1,5e-1\n2,0e0,0e0\n");
    }
}
