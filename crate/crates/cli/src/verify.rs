//! Verification suites. Each suite checks one family of exact identities or
//! convergence properties against an independent oracle and reports a
//! pass/fail line with the measured defect.

use std::error::Error;
use std::f64::consts::PI;
use std::fmt;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use clvpb_core::characteristics::{
    alpha_invariance_defect, backward_exit_within, kinetic_weight_alpha, HarmonicField, KineticWeightParams, PhasePoint, TraceOptions, WallModel,
    ZeroField,
};
use clvpb_core::collision::{collide, dsmc_step, CollisionParams};
use clvpb_core::field::PoissonGrid;
use clvpb_core::geometry::{random_unit, DomainGeometry, WallTemperature};
use clvpb_core::quadrature::{
    gauss_legendre, halfline_bessel_closed, halfline_bessel_quad, halfline_bessel_tails, plane_gaussian_closed,
    plane_gaussian_quad, plane_gaussian_tail, rice_far_tail, Abew, HalflineWindow, QuadratureSpec,
};
use clvpb_core::scattering::{eval_r, normalization_defect, reciprocity_defect, sample_outgoing, ScatterParams, SurfacePoint};
use clvpb_core::simulator::duhamel::{duality_check, reference_observables, DualitySetup};
use clvpb_core::simulator::forward::{FieldMode, FluxSample, ForwardConfig, ForwardState};
use clvpb_core::simulator::picard::{picard_iterate, PicardConfig};
use clvpb_core::simulator::{ks_critical, ks_statistic, maxwell_speed_cdf, stream, InitialDatum};
use clvpb_core::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    /// Reduced sample sizes for smoke runs.
    Quick,
    /// Full sizes of the acceptance criteria.
    Acceptance,
}

impl Scale {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "quick" => Some(Scale::Quick),
            "acceptance" => Some(Scale::Acceptance),
            _ => None,
        }
    }
}

/// `(name, runtime budget in seconds)` in criterion order.
pub const SUITES: [(&str, u64); 11] = [
    ("normalization", 30),
    ("reciprocity", 1),
    ("integrals", 60),
    ("sampler", 120),
    ("limits", 30),
    ("conservation", 600),
    ("stationarity", 600),
    ("alpha", 60),
    ("poisson", 300),
    ("picard", 900),
    ("duality", 600),
];

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub index: usize,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
    pub budget: Duration,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(
            f,
            "[{tag}] {:>2} {:<14} {}  ({:.1} s, budget {} s)",
            self.index,
            self.name,
            self.detail,
            self.elapsed.as_secs_f64(),
            self.budget.as_secs()
        )
    }
}

type Outcome = Result<(bool, String), Box<dyn Error>>;

/// State of the long equilibrium run shared by the conservation and
/// stationarity suites.
#[derive(Debug, Clone)]
struct EquilibriumReport {
    n: usize,
    steps: usize,
    mass_start: f64,
    mass_end: f64,
    flux: FluxSample,
    /// `(step, KS statistic)`.
    ks: Vec<(usize, f64)>,
    ks_crit: f64,
    impacts: u64,
    elapsed: Duration,
}

pub struct Verifier {
    pub scale: Scale,
    pub seed: u64,
    equilibrium: Option<EquilibriumReport>,
}

impl Verifier {
    pub fn new(scale: Scale, seed: u64) -> Self {
        Self { scale, seed, equilibrium: None }
    }

    fn pick<T>(&self, quick: T, acceptance: T) -> T {
        match self.scale {
            Scale::Quick => quick,
            Scale::Acceptance => acceptance,
        }
    }

    fn rng(&self, suite: u64) -> ChaCha8Rng {
        stream(self.seed, 1000 + suite, 0, 0)
    }

    /// Runs one suite by name; `None` for an unknown name.
    pub fn run(&mut self, name: &str) -> Option<CheckResult> {
        let index = SUITES.iter().position(|(n, _)| *n == name)?;
        let (name, budget) = SUITES[index];
        let start = Instant::now();
        let outcome = match name {
            "normalization" => self.normalization(),
            "reciprocity" => self.reciprocity(),
            "integrals" => self.integrals(),
            "sampler" => self.sampler(),
            "limits" => self.limits(),
            "conservation" => self.conservation(),
            "stationarity" => self.stationarity(),
            "alpha" => self.alpha(),
            "poisson" => self.poisson(),
            "picard" => self.picard(),
            "duality" => self.duality(),
            _ => unreachable!(),
        };
        let mut elapsed = start.elapsed();
        if matches!(name, "conservation" | "stationarity") {
            // Both suites are judged on the shared run's full cost.
            if let Some(eq) = &self.equilibrium {
                elapsed = elapsed.max(eq.elapsed);
            }
        }
        let budget = Duration::from_secs(budget);
        let (passed, detail) = match outcome {
            Ok((ok, detail)) if elapsed > budget => (false, format!("{detail}; over runtime budget (ok={ok})")),
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        Some(CheckResult { index: index + 1, name, passed, detail, elapsed, budget })
    }

    /// Runs `suite` (or every suite for `all`), calling `report` after each.
    pub fn run_named<F: FnMut(&CheckResult)>(&mut self, suite: &str, mut report: F) -> Option<Vec<CheckResult>> {
        let names: Vec<&str> = if suite == "all" { SUITES.iter().map(|s| s.0).collect() } else { vec![suite] };
        let mut out = Vec::new();
        for n in names {
            let r = self.run(n)?;
            report(&r);
            out.push(r);
        }
        Some(out)
    }

    fn normalization(&self) -> Outcome {
        let n = self.pick(20, 100);
        let q = QuadratureSpec::default();
        let mut rng = self.rng(1);
        let mut worst = 0.0f64;
        for i in 0..n {
            let c = random_wall_case(&mut rng, if i % 4 == 3 { 2 } else { 3 });
            worst = worst.max(normalization_defect(&c.u, &c.sp, &c.p, &q)?);
        }
        Ok((worst <= 1e-8, format!("max |int R dv - 1| = {worst:.2e} over {n} cases (tol 1e-8)")))
    }

    fn reciprocity(&self) -> Outcome {
        let n = self.pick(1_000, 10_000);
        let mut rng = self.rng(2);
        let mut worst = 0.0f64;
        for i in 0..n {
            let c = random_wall_case(&mut rng, if i % 4 == 3 { 2 } else { 3 });
            let v = random_velocity(&mut rng, &c.sp, -1.0);
            worst = worst.max(reciprocity_defect(&c.u, &v, &c.sp, &c.p)?);
        }
        Ok((worst <= 1e-12, format!("max relative defect {worst:.2e} over {n} pairs (tol 1e-12)")))
    }

    fn integrals(&self) -> Outcome {
        let n = self.pick(40, 200);
        let q = QuadratureSpec::default();
        let mut rng = self.rng(3);
        let mut identity = 0.0f64;
        let mut plane_tail = 0.0f64;
        let mut near = 0.0f64;
        let mut far = 0.0f64;
        let mut rice = 0.0f64;
        for _ in 0..n {
            let b = rng.random_range(0.3..3.0);
            let s = rng.random_range(0.0..0.8);
            let split = rng.random::<f64>();
            let (a, eps) = (split * s * b, (1.0 - split) * s * b);
            let w = [rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)];
            let plane = Abew::plane(a, b, eps, w)?;
            let closed = plane_gaussian_closed(&plane)?;
            identity = identity.max(((plane_gaussian_quad(&plane, &q)? - closed) / closed).abs());
            let radius = rng.random_range(0.5..3.0) / plane.gap().sqrt();
            let t = plane_gaussian_tail(&plane, radius, &q)?;
            plane_tail = plane_tail.max(t.constant());

            let half = Abew::halfline(a, b, eps, rng.random_range(0.0..2.0))?;
            let closed = halfline_bessel_closed(&half)?;
            identity = identity.max(((halfline_bessel_quad(&half, &q)? - closed) / closed).abs());
            let full = halfline_bessel_tails(&half, HalflineWindow::Full, &q)?;
            identity = identity.max((full.constant() - 1.0).abs());
            let delta = rng.random_range(0.01..0.1);
            near = near.max(halfline_bessel_tails(&half, HalflineWindow::Near { delta }, &q)?.constant());
            let delta = rng.random_range(0.2..1.0);
            far = far.max(halfline_bessel_tails(&half, HalflineWindow::Far { delta }, &q)?.constant());

            let (m, nn, u) = (rng.random_range(0.5..2.0), rng.random_range(0.1..1.0), rng.random_range(0.0..3.0));
            rice = rice.max(rice_far_tail(m, nn, u, rng.random_range(0.1..0.5), &q)?.constant());
        }
        // The tail bounds hold up to unstated constants; the measured
        // constants are reported and must stay below 10.
        let ok = identity <= 1e-9 && plane_tail <= 1.0 + 1e-9 && near.max(far).max(rice) <= 10.0;
        Ok((
            ok,
            format!(
                "{n} points: closed vs quad max rel {identity:.2e} (tol 1e-9); tail constants plane {plane_tail:.6} near {near:.3} far {far:.3} rice {rice:.3}"
            ),
        ))
    }

    fn sampler(&self) -> Outcome {
        let (sets, samples, bins) = self.pick((2, 100_000, 10), (10, 1_000_000, 20));
        let mut rng = self.rng(4);
        let mut worst_p = 1.0f64;
        let mut worst_z = 0.0f64;
        for k in 0..sets {
            let c = random_wall_case(&mut rng, 3);
            let mut srng = stream(self.seed, 1004, k as u64, 1);
            let (p, z) = chi_square_case(&c, samples, bins, &mut srng)?;
            worst_p = worst_p.min(p);
            worst_z = worst_z.max(z);
        }
        Ok((
            worst_p > 1e-3 && worst_z <= 5.0,
            format!(
                "{sets} parameter sets x {samples} samples on {bins}^3 cells: min p = {worst_p:.3e} (> 1e-3); tangential mean max |z| = {worst_z:.2} (<= 5)"
            ),
        ))
    }

    fn limits(&self) -> Outcome {
        let n = self.pick(10_000, 100_000);
        let mut rng = self.rng(5);
        let mut diffuse = 0.0f64;
        for i in 0..1000 {
            let mut c = random_wall_case(&mut rng, if i % 2 == 0 { 3 } else { 2 });
            c.p = ScatterParams::diffuse();
            let v = random_velocity(&mut rng, &c.sp, -1.0);
            let t = c.sp.t_w;
            let nv = c.sp.normal().dot(&v).abs();
            let d = c.sp.dim as f64;
            let exact = nv / t * (2.0 * PI * t).powf(-(d - 1.0) / 2.0) * (-v.norm_squared() / (2.0 * t)).exp();
            diffuse = diffuse.max(((eval_r(&c.u, &v, &c.sp, &c.p)? - exact) / exact).abs());
        }
        let eps = 1e-6;
        let mut specular = 0.0f64;
        let mut bounce = 0.0f64;
        for i in 0..4 {
            let c = random_wall_case(&mut rng, if i % 2 == 0 { 3 } else { 2 });
            let params = ScatterParams::new(eps, eps)?;
            let back = ScatterParams::new(eps, 2.0 - eps)?;
            let mirror = c.sp.reflect(&c.u);
            let mut srng = stream(self.seed, 1005, i, 1);
            let (mut ds, mut db) = (0.0, 0.0);
            for _ in 0..n {
                ds += (sample_outgoing(&c.u, &c.sp, &params, &mut srng).v_out - mirror).norm();
                db += (sample_outgoing(&c.u, &c.sp, &back, &mut srng).v_out + c.u).norm();
            }
            specular = specular.max(ds / n as f64);
            bounce = bounce.max(db / n as f64);
        }
        let ok = diffuse <= 1e-14 && specular <= 1e-2 && bounce <= 1e-2;
        Ok((
            ok,
            format!(
                "diffuse max rel {diffuse:.2e} (tol 1e-14); mean |v - Ru| specular {specular:.2e}, bounce-back {bounce:.2e} at eps=1e-6, N={n} (tol 1e-2)"
            ),
        ))
    }

    fn equilibrium(&mut self) -> Result<&EquilibriumReport, Box<dyn Error>> {
        if self.equilibrium.is_none() {
            let r = equilibrium_run(self.pick(10_000, 100_000), self.pick(1_000, 10_000), self.pick(100, 500), self.seed)?;
            self.equilibrium = Some(r);
        }
        Ok(self.equilibrium.as_ref().unwrap())
    }

    fn conservation(&mut self) -> Outcome {
        let mut rng = self.rng(6);
        let mut momentum = 0.0f64;
        let mut energy = 0.0f64;
        for _ in 0..self.pick(10_000, 100_000) {
            let u = gaussian3(&mut rng) * 2.0;
            let v = gaussian3(&mut rng) * 2.0;
            let c = collide(&u, &v, &random_unit(&mut rng, 3))?;
            let scale = u.norm() + v.norm();
            momentum = momentum.max((c.u_prime + c.v_prime - u - v).amax() / (f64::EPSILON * scale));
            let e0 = u.norm_squared() + v.norm_squared();
            energy = energy.max((c.u_prime.norm_squared() + c.v_prime.norm_squared() - e0).abs() / e0);
        }
        // A full DSMC cell over many steps.
        let params = CollisionParams::new(1.0, 1.0, 3)?;
        let mut vel: Vec<Vec3> = (0..2000).map(|_| gaussian3(&mut rng)).collect();
        let p0: Vec3 = vel.iter().sum();
        let e0: f64 = vel.iter().map(|v| v.norm_squared()).sum();
        let mut b_max = 0.0;
        let mut accepted = 0;
        for _ in 0..50 {
            accepted += dsmc_step(&mut vel, 1e-3, 1.0, 0.05, &params, &mut b_max, &mut rng).collisions;
        }
        let p1: Vec3 = vel.iter().sum();
        let e1: f64 = vel.iter().map(|v| v.norm_squared()).sum();
        let cell_p = (p1 - p0).amax() / (f64::EPSILON * e0.sqrt() * 2000f64.sqrt());
        let cell_e = (e1 - e0).abs() / e0;
        momentum = momentum.max(cell_p / 100.0);
        energy = energy.max(cell_e);

        let eq = self.equilibrium()?;
        let mass_exact = eq.mass_start == eq.mass_end;
        let ratio = eq.flux.net.abs() / eq.flux.gross;
        let bound = 3.0 / (eq.flux.count as f64).sqrt();
        // Momentum: |delta p| within 4 ulp of |u| + |v| per collision, and within
        // 100 ulp-scaled units of the summed cell momentum.
        let ok = momentum <= 4.0 && energy <= 1e-12 && mass_exact && ratio <= bound && accepted > 0;
        Ok((
            ok,
            format!(
                "collision momentum {momentum:.2} ulp-units (<= 4), energy {energy:.1e} (<= 1e-12), {accepted} DSMC collisions; mass {} -> {} ({}); |net|/gross flux {ratio:.2e} <= 3/sqrt({}) = {bound:.2e}; N={}, {} steps",
                eq.mass_start,
                eq.mass_end,
                if mass_exact { "exact" } else { "drift" },
                eq.flux.count,
                eq.n,
                eq.steps
            ),
        ))
    }

    fn stationarity(&mut self) -> Outcome {
        let eq = self.equilibrium()?;
        let (step, worst) = eq.ks.iter().copied().fold((0, 0.0f64), |a, b| if b.1 > a.1 { b } else { a });
        Ok((
            worst < eq.ks_crit,
            format!(
                "{} KS checks over {} steps (N={}, {} wall impacts): max D = {worst:.5} at step {step}, 1% critical {:.5}",
                eq.ks.len(),
                eq.steps,
                eq.n,
                eq.impacts,
                eq.ks_crit
            ),
        ))
    }

    fn alpha(&self) -> Outcome {
        let d = DomainGeometry::unit_ball();
        let kw = KineticWeightParams::new(0.1);
        let opts = TraceOptions::default();
        let field = HarmonicField { k: 0.8, center: Vec3::new(0.1, -0.2, 0.0) };
        let mut rng = self.rng(8);
        let n = self.pick(50, 200);
        let mut exact_ok = true;
        for _ in 0..n {
            // Backward path of length t + eps = 0.3 at speed <= 1 from |x| <= 0.5.
            let x = random_unit(&mut rng, 3) * (0.5 * rng.random::<f64>());
            let v = random_unit(&mut rng, 3) * rng.random::<f64>();
            let p = PhasePoint::new(0.2, x, v);
            exact_ok &= kinetic_weight_alpha(&p, &kw, &ZeroField, &d, &opts)? == 1.0;
            let xb = d.sample_boundary(&mut rng);
            let nrm = d.normal_at(&xb);
            let mut v = gaussian3(&mut rng);
            if nrm.dot(&v) > 0.0 {
                v -= nrm * (2.0 * nrm.dot(&v));
            }
            let p = PhasePoint::new(1.0, xb, v);
            exact_ok &= kinetic_weight_alpha(&p, &kw, &field, &d, &opts)? == nrm.dot(&v).abs();
        }

        // Points whose backward exit falls inside the ramp (t, t + eps), so
        // alpha is strictly between |n.v_b| and 1 and the path back to
        // s = 0.25 stays inside the domain.
        let mut points = Vec::new();
        while points.len() < 20 {
            let x = random_unit(&mut rng, 3) * rng.random_range(0.0..0.7);
            let v = gaussian3(&mut rng) * 0.8;
            let p = PhasePoint::new(0.6, x, v);
            let b = backward_exit_within(&p, p.t + kw.eps, &field, &d, &opts.with_step(1e-4))?;
            if b.hit_boundary && b.t_b > p.t + 0.1 * kw.eps && b.t_b < p.t + 0.9 * kw.eps {
                points.push(p);
            }
        }
        let defect = |h: f64| -> Result<f64, Box<dyn Error>> {
            let o = opts.with_step(h);
            let mut worst = 0.0f64;
            for p in &points {
                worst = worst.max(alpha_invariance_defect(p, 0.25, &kw, &field, &d, &o)?);
            }
            Ok(worst)
        };
        let at_1e3 = defect(1e-3)?;
        let hs = [0.08, 0.04, 0.02];
        let ds: Vec<f64> = hs.iter().map(|h| defect(*h)).collect::<Result<_, _>>()?;
        let order = fit_order(&hs, &ds);
        let ok = exact_ok && at_1e3 <= 1e-6 && order >= 3.5;
        Ok((
            ok,
            format!(
                "exact cases {}; invariance defect {at_1e3:.2e} at h=1e-3 (<= 1e-6); defects {:.2e}/{:.2e}/{:.2e} at h=0.08/0.04/0.02, order {order:.2} (>= 3.5)",
                if exact_ok { "hold" } else { "FAIL" },
                ds[0],
                ds[1],
                ds[2]
            ),
        ))
    }

    fn poisson(&self) -> Outcome {
        let tol = 1e-10;
        let g = PoissonGrid::new(&DomainGeometry::unit_ball(), self.pick(16, 32))?;
        let volumes: Vec<f64> = (0..g.len()).map(|i| g.cut_volume(i)).collect();
        let uniform = g.solve(&volumes, 1.0, tol)?.max_field();

        let sizes: Vec<usize> = self.pick(vec![16, 32, 64], vec![16, 32, 64, 128]);
        let errors: Vec<f64> = sizes.iter().map(|n| manufactured_l2(*n, tol)).collect::<Result<_, _>>()?;
        let hs: Vec<f64> = sizes.iter().map(|n| 1.0 / *n as f64).collect();
        let order = fit_order(&hs, &errors);
        let ok = uniform <= tol && (order - 2.0).abs() <= 0.2;
        let errs: Vec<String> = errors.iter().map(|e| format!("{e:.2e}")).collect();
        Ok((
            ok,
            format!(
                "uniform source max |E| = {uniform:.1e} (<= {tol:.0e}); radial L2 errors {} at n={:?}, order {order:.3} (2.0 +- 0.2)",
                errs.join("/"),
                sizes
            ),
        ))
    }

    fn picard(&self) -> Outcome {
        let (cfg, last) = match self.scale {
            Scale::Quick => {
                let mut c = picard_reference(0.2)?;
                c.spatial_cells = 12;
                c.velocity_cells = 16;
                c.angles = 32;
                c.slices = 2;
                c.iterations = 5;
                (c, 3)
            }
            Scale::Acceptance => (picard_reference(0.2)?, 6),
        };
        let mut half = cfg.clone();
        half.t_bar /= 2.0;
        let run = picard_iterate(cfg)?;
        let run_half = picard_iterate(half)?;
        let r = run.ratios();
        let worst = r[1..=last].iter().copied().fold(0.0f64, f64::max);
        let g = run.geometric_mean_ratio(1..=last);
        let g_half = run_half.geometric_mean_ratio(1..=last);
        let ok = r[1..=last].iter().all(|x| *x <= 0.9) && g_half < g;
        Ok((
            ok,
            format!("max d_(m+1)/d_m for m=1..{last}: {worst:.3} (<= 0.9); geometric mean {g:.4} at t_bar=0.2 -> {g_half:.4} at t_bar=0.1"),
        ))
    }

    fn duality(&self) -> Outcome {
        let n = self.pick(20_000, 100_000);
        let configs = duality_configs(n, self.seed)?;
        let configs: Vec<_> = match self.scale {
            Scale::Quick => configs.into_iter().filter(|(name, _)| *name == "ball-diffuse" || *name == "disk-field").collect(),
            Scale::Acceptance => configs,
        };
        let obs = reference_observables();
        let mut worst = (0.0f64, "", "");
        let mut rows = 0;
        for (name, setup) in &configs {
            for row in duality_check(setup, &obs)? {
                rows += 1;
                let z = row.z_score();
                if z > worst.0 {
                    worst = (z, name, row.name);
                }
            }
        }
        Ok((
            worst.0 <= 3.0,
            format!("{} configs x {} observables ({rows} rows): max z = {:.2} ({} / {}) (<= 3)", configs.len(), obs.len(), worst.0, worst.1, worst.2),
        ))
    }
}

struct WallCase {
    sp: SurfacePoint,
    p: ScatterParams,
    /// Incident velocity, `n . u > 0`.
    u: Vec3,
}

fn gaussian3<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    Vec3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal))
}

/// Velocity with thermal spread at the wall temperature on the side `side`
/// (`+1` outgoing, `-1` incoming), kept away from grazing.
fn random_velocity<R: Rng + ?Sized>(rng: &mut R, sp: &SurfacePoint, side: f64) -> Vec3 {
    let n = sp.normal();
    let mut v = gaussian3(rng) * (1.5 * sp.t_w.sqrt());
    if sp.dim == 2 {
        v.z = 0.0;
    }
    let vn = n.dot(&v);
    let want = side * vn.abs().max(1e-2);
    v + n * (want - vn)
}

fn random_wall_case<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> WallCase {
    let t_w = rng.random_range(0.5..2.0);
    let sp = SurfacePoint::new(random_unit(rng, dim), t_w, dim);
    let p = ScatterParams::new(rng.random_range(0.02..1.0), rng.random_range(0.02..1.98)).expect("valid range");
    let u = random_velocity(rng, &sp, 1.0);
    WallCase { sp, p, u }
}

/// Chi-square p-value of `samples` outgoing velocities on a tensor grid in
/// the frame coordinates `(|v_perp|, v_par1, v_par2)`, with cell
/// probabilities from 4-point Gauss-Legendre per axis on `eval_r`, and the
/// largest |z| of the tangential sample means against `(1 - r_par) u_par`.
fn chi_square_case<R: Rng + ?Sized>(c: &WallCase, samples: usize, bins: usize, rng: &mut R) -> Result<(f64, f64), Box<dyn Error>> {
    let frame = &c.sp.frame;
    let du = frame.decompose(&c.u);
    let t = c.sp.t_w;
    let sigma_n = (t * c.p.r_perp).sqrt();
    let peak = (1.0 - c.p.r_perp).sqrt() * du.v_perp.abs();
    let sigma_t = (t * c.p.tangential_variance()).sqrt();
    let keep = 1.0 - c.p.r_par;
    let ranges = [
        ((peak - 5.0 * sigma_n).max(0.0), peak + 5.0 * sigma_n),
        (keep * du.v_par[0] - 5.0 * sigma_t, keep * du.v_par[0] + 5.0 * sigma_t),
        (keep * du.v_par[1] - 5.0 * sigma_t, keep * du.v_par[1] + 5.0 * sigma_t),
    ];
    let width: Vec<f64> = ranges.iter().map(|(a, b)| (b - a) / bins as f64).collect();

    let (gx, gw) = gauss_legendre(4);
    let mut prob = vec![0.0; bins * bins * bins];
    for (idx, p) in prob.iter_mut().enumerate() {
        let cell = [idx % bins, (idx / bins) % bins, idx / (bins * bins)];
        let mut acc = 0.0;
        for (a, wa) in gx.iter().zip(&gw) {
            for (b, wb) in gx.iter().zip(&gw) {
                for (e, we) in gx.iter().zip(&gw) {
                    let q = [*a, *b, *e];
                    let mut y = [0.0; 3];
                    for k in 0..3 {
                        y[k] = ranges[k].0 + width[k] * (cell[k] as f64 + 0.5 * (q[k] + 1.0));
                    }
                    if y[0] <= 0.0 {
                        continue;
                    }
                    let v = frame.n * -y[0] + frame.t1 * y[1] + frame.t2 * y[2];
                    acc += wa * wb * we * eval_r(&c.u, &v, &c.sp, &c.p)?;
                }
            }
        }
        *p = acc * width.iter().product::<f64>() / 8.0;
    }

    let mut counts = vec![0u64; prob.len()];
    let mut outside = 0u64;
    let mut mean = [0.0; 2];
    for _ in 0..samples {
        let s = sample_outgoing(&c.u, &c.sp, &c.p, rng).decomposition;
        mean[0] += s.v_par[0];
        mean[1] += s.v_par[1];
        let y = [-s.v_perp, s.v_par[0], s.v_par[1]];
        let mut idx = 0;
        let mut inside = true;
        for k in (0..3).rev() {
            let f = ((y[k] - ranges[k].0) / width[k]).floor();
            if !(f >= 0.0 && f < bins as f64) {
                inside = false;
                break;
            }
            idx = idx * bins + f as usize;
        }
        if inside {
            counts[idx] += 1;
        } else {
            outside += 1;
        }
    }

    // Pool cells with expected count below 5 (and the outside region).
    let nf = samples as f64;
    let mut chi2 = 0.0;
    let mut dof = 0usize;
    let mut pooled = (outside as f64, (1.0 - prob.iter().sum::<f64>()).max(0.0) * nf);
    for (p, k) in prob.iter().zip(&counts) {
        let e = p * nf;
        if e < 5.0 {
            pooled.0 += *k as f64;
            pooled.1 += e;
        } else {
            chi2 += (*k as f64 - e).powi(2) / e;
            dof += 1;
        }
    }
    if pooled.1 > 0.0 {
        chi2 += (pooled.0 - pooled.1).powi(2) / pooled.1;
        dof += 1;
    }
    let p_value = 1.0 - ChiSquared::new((dof - 1) as f64)?.cdf(chi2);
    let se = sigma_t / nf.sqrt();
    let z = (0..2).map(|k| ((mean[k] / nf - keep * du.v_par[k]) / se).abs()).fold(0.0, f64::max);
    Ok((p_value, z))
}

fn equilibrium_run(n: usize, steps: usize, ks_every: usize, seed: u64) -> Result<EquilibriumReport, Box<dyn Error>> {
    let start = Instant::now();
    let domain = DomainGeometry::unit_ball();
    let cfg = ForwardConfig {
        model: WallModel {
            domain: domain.clone(),
            wall: WallTemperature::constant(1.0)?,
            scatter: ScatterParams::new(0.5, 0.8)?,
            t_m: 1.0,
        },
        dt: 1e-3,
        field: FieldMode::Off,
        collisions: None,
        trace: TraceOptions::default(),
        seed,
        flux_layer: 0.05,
        disable_wall: false,
    };
    let datum = InitialDatum::equilibrium(domain, 1.0, 1.0);
    let particles = datum.sample(n, &mut stream(seed, 0, 0, 0));
    let mut state = ForwardState::new(&cfg, particles)?;
    let mass_start = state.mass();
    let mut flux = FluxSample::default();
    let mut ks = Vec::new();
    for k in 1..=steps {
        state.step(&cfg)?;
        // Snapshots 0.1 time units apart are close to independent.
        if k % 100 == 0 {
            flux.add(&state.sample_flux(&cfg));
        }
        if k % ks_every == 0 {
            let speeds: Vec<f64> = state.particles.iter().map(|p| p.v.norm()).collect();
            ks.push((k, ks_statistic(&speeds, |s| maxwell_speed_cdf(s, 1.0, 3))));
        }
    }
    Ok(EquilibriumReport {
        n,
        steps,
        mass_start,
        mass_end: state.mass(),
        flux,
        ks,
        ks_crit: ks_critical(n, 0.01),
        impacts: state.impacts,
        elapsed: start.elapsed(),
    })
}

/// Least-squares slope of `ln e` against `ln h`.
fn fit_order(h: &[f64], e: &[f64]) -> f64 {
    let x: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = e.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Gauge-matched L2 error of the Neumann problem with source
/// `1 - (d+2)/d r^2` on the unit ball, whose solution is
/// `-r^2/(2d) + r^4/(4d)` up to a constant.
fn manufactured_l2(n: usize, tol: f64) -> Result<f64, Box<dyn Error>> {
    let g = PoissonGrid::new(&DomainGeometry::unit_ball(), n)?;
    let d = 3.0;
    let f = g.solve_source(|x| 1.0 - (d + 2.0) / d * x.norm_squared(), tol)?;
    let exact = |r: f64| -r * r / (2.0 * d) + r.powi(4) / (4.0 * d);
    let active: Vec<usize> = (0..g.len()).filter(|i| g.is_active(*i)).collect();
    let vol: f64 = active.iter().map(|i| g.cut_volume(*i)).sum();
    let shift = active.iter().map(|i| (f.phi[*i] - exact(g.node_position(*i).norm())) * g.cut_volume(*i)).sum::<f64>() / vol;
    let l2 = active.iter().map(|i| (f.phi[*i] - shift - exact(g.node_position(*i).norm())).powi(2) * g.cut_volume(*i)).sum::<f64>();
    Ok((l2 / vol).sqrt())
}

/// Reference Picard fixture on the unit disk.
pub fn picard_reference(t_bar: f64) -> Result<PicardConfig, Box<dyn Error>> {
    let domain = DomainGeometry::unit_disk();
    let model = WallModel {
        domain: domain.clone(),
        wall: WallTemperature::constant(1.0)?,
        scatter: ScatterParams::new(0.6, 0.8)?,
        t_m: 1.0,
    };
    let datum = InitialDatum::new(domain, 1.0, 0.5, 0.8, Vec3::new(0.3, -0.2, 0.0))?;
    Ok(PicardConfig::reference(model, datum, t_bar))
}

/// The five forward/backward comparison setups.
pub fn duality_configs(n: usize, seed: u64) -> Result<Vec<(&'static str, DualitySetup)>, Box<dyn Error>> {
    let setup = |domain: DomainGeometry,
                 wall: WallTemperature,
                 scatter: ScatterParams,
                 datum: (f64, f64, Vec3),
                 accel: Vec3,
                 t: f64|
     -> Result<DualitySetup, Box<dyn Error>> {
        let t_m = wall.t_max();
        let datum = InitialDatum::new(domain.clone(), 1.0, datum.0, datum.1, datum.2)?;
        Ok(DualitySetup {
            model: WallModel { domain, wall, scatter, t_m },
            datum,
            acceleration: accel,
            t,
            dt: 0.01,
            n_forward: n,
            n_backward: n,
            seed,
        })
    };
    let ellipsoid = DomainGeometry::ellipsoid(Vec3::new(1.0, 0.8, 0.6), Vec3::zeros())?;
    let ball = DomainGeometry::unit_ball();
    let offset = DomainGeometry::ball(0.8, Vec3::new(0.5, -0.3, 0.2))?;
    Ok(vec![
        (
            "ball-diffuse",
            setup(ball.clone(), WallTemperature::constant(1.0)?, ScatterParams::diffuse(), (0.5, 0.6, Vec3::new(0.4, 0.0, 0.0)), Vec3::zeros(), 1.0)?,
        ),
        (
            "ellipsoid-field",
            setup(
                ellipsoid.clone(),
                WallTemperature::constant(1.5)?,
                ScatterParams::new(0.5, 0.7)?,
                (0.3, 1.0, Vec3::new(0.0, 0.2, 0.0)),
                Vec3::new(0.3, 0.0, -0.5),
                0.8,
            )?,
        ),
        (
            "ball-wall-gradient",
            setup(
                ball.clone(),
                WallTemperature::expression("1 + 0.3 * z", &ball)?,
                ScatterParams::new(0.4, 1.2)?,
                (-0.4, 0.9, Vec3::zeros()),
                Vec3::zeros(),
                1.0,
            )?,
        ),
        (
            "disk-field",
            setup(
                DomainGeometry::unit_disk(),
                WallTemperature::constant(1.2)?,
                ScatterParams::new(0.7, 0.5)?,
                (0.5, 0.8, Vec3::new(0.3, -0.2, 0.0)),
                Vec3::new(0.0, -0.8, 0.0),
                1.0,
            )?,
        ),
        (
            "offset-near-bounce-back",
            setup(offset, WallTemperature::constant(1.0)?, ScatterParams::new(0.05, 1.9)?, (0.6, 1.0, Vec3::new(0.5, 0.0, 0.0)), Vec3::zeros(), 1.0)?,
        ),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_fit_recovers_power_law() {
        let h = [0.1, 0.05, 0.025];
        let e: Vec<f64> = h.iter().map(|x: &f64| 3.0 * x.powi(4)).collect();
        assert!((fit_order(&h, &e) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn unknown_suite() {
        assert!(Verifier::new(Scale::Quick, 1).run("nope").is_none());
    }

    #[test]
    fn quick_reciprocity_passes() {
        let r = Verifier::new(Scale::Quick, 3).run("reciprocity").unwrap();
        assert!(r.passed, "{r}");
        assert!(r.to_string().starts_with("[PASS]  2 reciprocity"));
    }
}
