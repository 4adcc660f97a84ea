//! Config loading with precedence, model construction and mode dispatch.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use clvpb_core::characteristics::{
    backward_cycles, ConstantField, CycleTermination, ForceField, PhasePoint, TraceOptions, WallModel, ZeroField,
};
use clvpb_core::collision::CollisionParams;
use clvpb_core::field::PoissonGrid;
use clvpb_core::geometry::{temperature_ratio_bound, validate_temperature_constraint, DomainGeometry, WallTemperature};
use clvpb_core::scattering::{sample_outgoing, ScatterParams};
use clvpb_core::simulator::diagnostics::{record, DiagnosticWeights, DIAGNOSTICS_HEADER};
use clvpb_core::simulator::duhamel::{duality_check, reference_observables, Backtracer, DualitySetup};
use clvpb_core::simulator::forward::{CollisionSetup, FieldMode, FluxSample, ForwardConfig, ForwardState};
use clvpb_core::simulator::picard::{picard_iterate, PicardConfig, PicardMode};
use clvpb_core::simulator::{stream, InitialDatum, SimError};
use clvpb_core::Vec3;

use crate::config::{parse_pairs, ConfigError, RunConfig};
use crate::verify::{Scale, Verifier, SUITES};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid setup: {0}")]
    Setup(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("verification failed: {0}")]
    VerifyFailed(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 2 for configuration problems, 3 for numerical or verification
    /// failures, 1 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Setup(_) => 2,
            CliError::Numerical(_) | CliError::VerifyFailed(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Setup(m) => CliError::Setup(m),
            SimError::Io(e) => CliError::Io(e),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

fn invalid(key: &str, reason: impl Into<String>) -> CliError {
    CliError::Config(ConfigError::Invalid { key: key.into(), reason: reason.into() })
}

/// Builds the effective config: defaults, then `file`, then `env_seed`
/// (the `CLVPB_SEED` variable), then `mode`, then `overrides` in order.
/// Checks the wall temperature constraint unless the mode is `verify`.
pub fn load(
    mode: Option<&str>,
    file: Option<&Path>,
    env_seed: Option<&str>,
    overrides: &[(String, String)],
) -> Result<RunConfig, CliError> {
    let mut cfg = match file {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = env_seed {
        cfg = cfg.with_overrides([("seed".to_string(), s.to_string())])?;
    }
    if let Some(m) = mode {
        cfg.set_mode(m)?;
    }
    cfg = cfg.with_overrides(overrides.iter().cloned())?;
    check(&cfg)?;
    Ok(cfg)
}

/// Parses `key=value` override strings.
pub fn parse_overrides(items: &[String]) -> Result<Vec<(String, String)>, CliError> {
    Ok(parse_pairs(&items.join("\n"))?)
}

/// Cross-key validation: domain, wall temperature and the accommodation
/// constraint.
pub fn check(cfg: &RunConfig) -> Result<(), CliError> {
    let model = build_model(cfg)?;
    if cfg.mode() != "verify" {
        let (r_perp, r_par) = (model.scatter.r_perp, model.scatter.r_par);
        if !validate_temperature_constraint(&model.wall, r_perp, r_par) {
            let ratio = model.wall.t_min() / model.wall.t_max();
            let bound = temperature_ratio_bound(r_perp, r_par);
            return Err(invalid(
                "wall.t_w",
                format!(
                    "T_min/T_max = {ratio} violates T_min/T_max > max((1 - r_par)/(2 - r_par), (sqrt(1 - r_perp) - (1 - r_perp))/r_perp) = {bound}"
                ),
            ));
        }
    }
    Ok(())
}

pub fn build_domain(cfg: &RunConfig) -> Result<DomainGeometry, CliError> {
    let c = Vec3::from(cfg.vec3("domain.center"));
    let r = cfg.f64("domain.radius");
    let d = match cfg.raw("domain.shape") {
        "ball" => DomainGeometry::ball(r, c),
        "disk" => DomainGeometry::disk(r, c),
        _ => DomainGeometry::ellipsoid(Vec3::from(cfg.vec3("domain.semi_axes")), c),
    };
    d.map_err(|e| invalid("domain", e.to_string()))
}

pub fn build_model(cfg: &RunConfig) -> Result<WallModel, CliError> {
    let domain = build_domain(cfg)?;
    let src = cfg.raw("wall.t_w");
    let wall = match src.parse::<f64>() {
        Ok(t) => WallTemperature::constant(t),
        Err(_) => WallTemperature::expression(src, &domain),
    }
    .map_err(|e| invalid("wall.t_w", e.to_string()))?;
    let scatter = ScatterParams::new(cfg.f64("scatter.r_perp"), cfg.f64("scatter.r_par"))
        .map_err(|e| invalid("scatter", e.to_string()))?;
    let t_m = cfg.f64_or_auto("gas.t_m").unwrap_or(wall.t_max());
    Ok(WallModel { domain, wall, scatter, t_m })
}

pub fn build_datum(cfg: &RunConfig, model: &WallModel) -> Result<InitialDatum, CliError> {
    let t0 = cfg.f64_or_auto("initial.temperature").unwrap_or(model.wall.t_max());
    InitialDatum::new(
        model.domain.clone(),
        cfg.f64("initial.mass"),
        cfg.f64("initial.gradient"),
        t0,
        Vec3::from(cfg.vec3("initial.drift")),
    )
    .map_err(|e| invalid("initial", e.to_string()))
}

fn trace_options(cfg: &RunConfig) -> TraceOptions {
    TraceOptions::default().with_step(cfg.f64("trace.h"))
}

/// Where a run writes its files. `primary` replaces the default name of
/// the mode's main CSV when given.
#[derive(Debug, Clone)]
pub struct Outputs {
    pub dir: PathBuf,
    pub primary: Option<PathBuf>,
}

impl Outputs {
    /// `--out` is a directory, or a `.csv` path for the main output.
    pub fn from_arg(cfg: &RunConfig, out: Option<&Path>) -> Self {
        match out {
            Some(p) if p.extension().is_some_and(|e| e == "csv") => {
                let dir = p.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new(".")).to_path_buf();
                Self { dir, primary: Some(p.to_path_buf()) }
            }
            Some(p) => Self { dir: p.to_path_buf(), primary: None },
            None => Self { dir: PathBuf::from(cfg.raw("output.dir")), primary: None },
        }
    }

    fn main_csv(&self, default: &str) -> PathBuf {
        self.primary.clone().unwrap_or_else(|| self.dir.join(default))
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Key/value lines written to `summary.txt`.
#[derive(Debug, Default)]
pub struct Summary(pub Vec<(String, String)>);

impl Summary {
    fn add(&mut self, k: &str, v: impl ToString) {
        self.0.push((k.to_string(), v.to_string()));
    }
}

/// Writes `run_manifest`: config hash, seed, mode and versions.
pub fn write_manifest(cfg: &RunConfig, dir: &Path) -> Result<(), CliError> {
    let mut w = create(&dir.join("run_manifest"))?;
    writeln!(w, "config_sha256={}", cfg.hash())?;
    writeln!(w, "seed={}", cfg.raw("seed"))?;
    writeln!(w, "mode={}", cfg.mode())?;
    writeln!(w, "clvpb_version={VERSION}")?;
    writeln!(w, "clvpb_core_version={VERSION}")?;
    writeln!(w, "config_file=run_config.txt")?;
    fs::write(dir.join("run_config.txt"), cfg.emit())?;
    Ok(())
}

/// Runs the configured mode in a pool of `workers` threads and writes the
/// manifest and summary.
pub fn dispatch(cfg: &RunConfig, out: &Outputs) -> Result<Summary, CliError> {
    fs::create_dir_all(&out.dir)?;
    write_manifest(cfg, &out.dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.usize("workers"))
        .build()
        .map_err(|e| CliError::Setup(format!("cannot start worker pool: {e}")))?;
    let result = pool.install(|| match cfg.mode() {
        "verify" => verify(cfg, out),
        "forward" => forward(cfg, out),
        "picard" => picard(cfg, out),
        "backtrace" => backtrace(cfg, out),
        "sample-kernel" => sample_kernel(cfg, out),
        "duhamel" => duhamel(cfg, out),
        m => Err(invalid("mode", format!("unknown mode {m}"))),
    });
    let (summary, status) = match result {
        Ok(s) => (s, Ok(())),
        Err(CliError::VerifyFailed(m)) => {
            let mut s = Summary::default();
            s.add("status", "verification failed");
            (s, Err(CliError::VerifyFailed(m)))
        }
        Err(e) => {
            let mut s = Summary::default();
            s.add("status", format!("error (exit {}): {e}", e.exit_code()));
            (s, Err(e))
        }
    };
    let mut w = create(&out.dir.join("summary.txt"))?;
    writeln!(w, "mode = {}", cfg.mode())?;
    for (k, v) in &summary.0 {
        writeln!(w, "{k} = {v}")?;
    }
    w.flush()?;
    status.map(|_| summary)
}

fn verify(cfg: &RunConfig, out: &Outputs) -> Result<Summary, CliError> {
    let suite = cfg.raw("verify.suite");
    if suite != "all" && !SUITES.iter().any(|s| s.0 == suite) {
        let names: Vec<&str> = SUITES.iter().map(|s| s.0).collect();
        return Err(invalid("verify.suite", format!("unknown suite {suite:?}; expected all or one of {}", names.join("|"))));
    }
    let scale = Scale::parse(cfg.raw("verify.scale")).expect("validated enum");
    let mut v = Verifier::new(scale, cfg.u64("seed"));
    let mut w = create(&out.main_csv("verify.txt"))?;
    let results = v
        .run_named(suite, |r| {
            println!("{r}");
            let _ = writeln!(w, "{r}");
        })
        .expect("suite name checked");
    w.flush()?;
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    let mut s = Summary::default();
    s.add("suites", results.len());
    s.add("failed", failed.len());
    if failed.is_empty() {
        Ok(s)
    } else {
        Err(CliError::VerifyFailed(failed.join(", ")))
    }
}

fn forward_config(cfg: &RunConfig, model: WallModel) -> Result<ForwardConfig, CliError> {
    let dim = model.domain.dimension();
    let field = match cfg.raw("field.mode") {
        "off" => FieldMode::Off,
        "external" => FieldMode::External(model.domain.restrict(&Vec3::from(cfg.vec3("field.accel")))),
        _ => FieldMode::SelfConsistent { cells: cfg.usize("field.cells"), tol: cfg.f64("field.tol") },
    };
    let collisions = if cfg.bool("collision.enabled") {
        let params = CollisionParams::new(cfg.f64("collision.kappa"), cfg.f64("collision.q0"), dim)
            .map_err(|e| invalid("collision", e.to_string()))?;
        Some(CollisionSetup { params, cells_per_axis: cfg.usize("collision.cells") })
    } else {
        None
    };
    Ok(ForwardConfig {
        model,
        dt: cfg.f64("time.dt"),
        field,
        collisions,
        trace: trace_options(cfg),
        seed: cfg.u64("seed"),
        flux_layer: cfg.f64("diagnostics.flux_layer"),
        disable_wall: cfg.bool("fault.disable_wall"),
    })
}

fn diagnostic_weights(cfg: &RunConfig, t_max: f64) -> Result<DiagnosticWeights, CliError> {
    let mut w = DiagnosticWeights::for_temperature(t_max);
    if let Some(t) = cfg.f64_or_auto("diagnostics.theta") {
        w.theta = t;
        w.theta_tilde = 0.5 * t;
    }
    if let Some(t) = cfg.f64_or_auto("diagnostics.theta_tilde") {
        w.theta_tilde = t;
    }
    w.c_frak = cfg.f64("diagnostics.c_frak");
    w.lambda = cfg.f64("diagnostics.lambda");
    w.delta = cfg.f64("diagnostics.delta");
    w.validate(t_max).map_err(|e| invalid("diagnostics", e.to_string()))?;
    Ok(w)
}

fn forward(cfg: &RunConfig, out: &Outputs) -> Result<Summary, CliError> {
    let model = build_model(cfg)?;
    let datum = build_datum(cfg, &model)?;
    let t_max = model.wall.t_max();
    let t_m = model.t_m;
    let weights = diagnostic_weights(cfg, t_max)?;
    let fc = forward_config(cfg, model)?;
    let cells = PoissonGrid::new(&fc.model.domain, cfg.usize("diagnostics.cells")).map_err(SimError::from)?;
    let particles = datum.sample(cfg.usize("particles.n"), &mut stream(fc.seed, 0, 0, 0));
    let mut state = ForwardState::new(&fc, particles)?;
    let mass_start = state.mass();

    let mut w = create(&out.main_csv("diagnostics.csv"))?;
    writeln!(w, "{DIAGNOSTICS_HEADER}")?;
    record(&state.particles, 0.0, &FluxSample::default(), 0, &cells, &weights, t_m).write_csv(&mut w)?;
    let steps = cfg.usize("time.steps");
    let every = cfg.usize("diagnostics.every");
    let mut flux = FluxSample::default();
    let mut snapshots = 0;
    for k in 1..=steps {
        state.step(&fc)?;
        flux.add(&state.sample_flux(&fc));
        snapshots += 1;
        if k % every == 0 || k == steps {
            record(&state.particles, state.t, &flux, snapshots, &cells, &weights, t_m).write_csv(&mut w)?;
            flux = FluxSample::default();
            snapshots = 0;
        }
    }
    w.flush()?;
    let mut s = Summary::default();
    s.add("particles", state.particles.len());
    s.add("steps", steps);
    s.add("t_final", state.t);
    s.add("mass_start", mass_start);
    s.add("mass_end", state.mass());
    s.add("wall_impacts", state.impacts);
    s.add("collisions", state.collisions);
    Ok(s)
}

fn picard_config(cfg: &RunConfig) -> Result<PicardConfig, CliError> {
    let model = build_model(cfg)?;
    let datum = build_datum(cfg, &model)?;
    let mut p = PicardConfig::reference(model, datum, cfg.f64("picard.t_bar"));
    p.mode = if cfg.raw("picard.mode") == "full" { PicardMode::Full } else { PicardMode::Linear };
    p.slices = cfg.usize("picard.slices");
    p.spatial_cells = cfg.usize("picard.spatial_cells");
    p.velocity_cells = cfg.usize("picard.velocity_cells");
    if let Some(v) = cfg.f64_or_auto("picard.v_max") {
        p.v_max = v;
    }
    p.angles = cfg.usize("picard.angles");
    p.iterations = cfg.usize("picard.iterations");
    p.field = cfg.bool("picard.field");
    p.lambda = cfg.f64("diagnostics.lambda");
    p.delta = cfg.f64("diagnostics.delta");
    p.trace = TraceOptions::default().with_step(cfg.f64("picard.h"));
    p.validate()?;
    Ok(p)
}

fn picard(cfg: &RunConfig, out: &Outputs) -> Result<Summary, CliError> {
    let run = picard_iterate(picard_config(cfg)?)?;
    let mut w = create(&out.main_csv("picard_ratios.csv"))?;
    run.write_csv(&mut w)?;
    w.flush()?;
    let mut s = Summary::default();
    s.add("iterations", run.d.len());
    let r = run.ratios();
    if !r.is_empty() {
        s.add("max_ratio", r.iter().copied().fold(f64::NAN, f64::max));
        s.add("geometric_mean_ratio", run.geometric_mean_ratio(0..=r.len() - 1));
    }
    Ok(s)
}

/// Force field for the single-trajectory modes. The self-consistent field
/// needs a particle state and is not available there.
fn static_field(cfg: &RunConfig, domain: &DomainGeometry) -> Result<Box<dyn ForceField>, CliError> {
    match cfg.raw("field.mode") {
        "off" => Ok(Box::new(ZeroField)),
        "external" => Ok(Box::new(ConstantField(domain.restrict(&Vec3::from(cfg.vec3("field.accel")))))),
        _ => Err(invalid("field.mode", "this mode supports field.mode=off|external")),
    }
}

fn backtrace(cfg: &RunConfig, out: &Outputs) -> Result<Summary, CliError> {
    let model = build_model(cfg)?;
    let datum = build_datum(cfg, &model)?;
    let d = &model.domain;
    let field = static_field(cfg, d)?;
    let x = d.restrict(&Vec3::from(cfg.vec3("backtrace.x")));
    let v = d.restrict(&Vec3::from(cfg.vec3("backtrace.v")));
    if d.signed_distance(&x) > d.boundary_tolerance() {
        return Err(invalid("backtrace.x", "start position is outside the domain"));
    }
    let p = PhasePoint::new(cfg.f64("backtrace.t"), x, v);
    let mut rng = stream(cfg.u64("seed"), 3, 0, 0);
    let rec = backward_cycles(&p, &*field, &model, &mut rng, cfg.usize("trace.k_max"), &trace_options(cfg))
        .map_err(SimError::from)?;

    let dim = d.dimension();
    let mut text = String::from("k,t_k");
    for prefix in ["x", "v"] {
        for i in 1..=dim {
            text += &format!(",{prefix}_{i}");
        }
    }
    text += ",log_weight\n";
    let mut row = |k: usize, t: f64, x: &Vec3, v: &Vec3, lw: f64| {
        let xs: Vec<String> = (0..dim).map(|i| x[i].to_string()).collect();
        let vs: Vec<String> = (0..dim).map(|i| v[i].to_string()).collect();
        text += &format!("{k},{t},{},{},{lw}\n", xs.join(","), vs.join(","));
    };
    row(0, p.t, &p.x, &p.v, 0.0);
    let mut lw = 0.0;
    for (k, h) in rec.hits.iter().enumerate() {
        lw += model.theta_hat(&h.x) * (h.v_arrival.norm_squared() - h.v_sampled.norm_squared());
        row(k + 1, h.t, &h.x, &h.v_sampled, lw);
    }
    // The final row at t = 0 carries the full multiplier of f_0, field
    // factor included.
    if let Some((x0, v0)) = rec.origin {
        row(rec.hits.len() + 1, 0.0, &x0, &v0, rec.log_weight + rec.log_field_weight);
    }
    print!("{text}");
    fs::write(out.main_csv("backtrace.csv"), &text)?;

    let mut s = Summary::default();
    s.add("wall_hits", rec.hits.len());
    s.add("terminated", if rec.terminated == CycleTermination::ReachedT0 { "reached t=0" } else { "k_max" });
    s.add("log_weight", rec.log_weight);
    s.add("log_field_weight", rec.log_field_weight);
    s.add("grazing_resamples", rec.grazing_resamples);
    if let Some((x0, v0)) = rec.origin {
        let bt = Backtracer { model: &model, field: &*field, datum: &datum, trace: trace_options(cfg), k_max: 0 };
        s.add("f_sample", rec.total_weight() * bt.f0(&x0, &v0));
    }
    Ok(s)
}

fn sample_kernel(cfg: &RunConfig, out: &Outputs) -> Result<Summary, CliError> {
    let model = build_model(cfg)?;
    let d = &model.domain;
    let xb = d.project(&d.restrict(&Vec3::from(cfg.vec3("sample_kernel.x_b"))));
    let sp = model.surface(&xb);
    let u = d.restrict(&Vec3::from(cfg.vec3("sample_kernel.u")));
    if sp.normal().dot(&u) <= 0.0 {
        return Err(invalid("sample_kernel.u", format!("need n.u > 0 at the wall point, got n.u = {}", sp.normal().dot(&u))));
    }
    let n = cfg.usize("sample_kernel.n");
    let mut rng = stream(cfg.u64("seed"), 6, 0, 0);
    let mut w = create(&out.main_csv("samples.csv"))?;
    writeln!(w, "v1,v2,v3,v_perp,v_par_norm")?;
    let mut mean_par = [0.0; 2];
    for _ in 0..n {
        let s = sample_outgoing(&u, &sp, &model.scatter, &mut rng);
        let v = s.v_out;
        writeln!(w, "{},{},{},{},{}", v.x, v.y, v.z, s.decomposition.v_perp, s.decomposition.v_par_norm())?;
        mean_par[0] += s.decomposition.v_par[0];
        mean_par[1] += s.decomposition.v_par[1];
    }
    w.flush()?;
    let du = sp.frame.decompose(&u);
    let keep = 1.0 - model.scatter.r_par;
    let mut s = Summary::default();
    s.add("samples", n);
    s.add("wall_point", format!("{},{},{}", xb.x, xb.y, xb.z));
    s.add("wall_temperature", sp.t_w);
    if n > 0 {
        s.add("mean_v_par", format!("{},{}", mean_par[0] / n as f64, mean_par[1] / n as f64));
    }
    s.add("expected_mean_v_par", format!("{},{}", keep * du.v_par[0], keep * du.v_par[1]));
    Ok(s)
}

fn duhamel(cfg: &RunConfig, out: &Outputs) -> Result<Summary, CliError> {
    let model = build_model(cfg)?;
    let datum = build_datum(cfg, &model)?;
    let field = static_field(cfg, &model.domain)?;
    let acceleration = match cfg.raw("field.mode") {
        "external" => model.domain.restrict(&Vec3::from(cfg.vec3("field.accel"))),
        _ => Vec3::zeros(),
    };
    let seed = cfg.u64("seed");
    let n_backward = cfg.usize("duhamel.n_backward");
    let t = cfg.f64("duhamel.t");

    let d = &model.domain;
    let x = d.restrict(&Vec3::from(cfg.vec3("backtrace.x")));
    let v = d.restrict(&Vec3::from(cfg.vec3("backtrace.v")));
    let bt = Backtracer { model: &model, field: &*field, datum: &datum, trace: trace_options(cfg), k_max: cfg.usize("trace.k_max") };
    let point = bt.estimate(&PhasePoint::new(t, x, v), n_backward, seed)?;

    let setup = DualitySetup {
        model: model.clone(),
        datum: datum.clone(),
        acceleration,
        t,
        dt: cfg.f64("time.dt"),
        n_forward: cfg.usize("duhamel.n_forward"),
        n_backward,
        seed,
    };
    let rows = duality_check(&setup, &reference_observables())?;
    let mut w = create(&out.main_csv("duality.csv"))?;
    writeln!(w, "observable,forward_mean,forward_se,backward_mean,backward_se,z")?;
    for r in &rows {
        writeln!(w, "{},{},{},{},{},{}", r.name, r.forward.0, r.forward.1, r.backward.0, r.backward.1, r.z_score())?;
    }
    w.flush()?;
    let mut s = Summary::default();
    s.add("point", format!("t={t} x=({},{},{}) v=({},{},{})", x.x, x.y, x.z, v.x, v.y, v.z));
    s.add("f_estimate", point.mean);
    s.add("f_std_error", point.std_error);
    s.add("truncated_fraction", point.truncated_fraction);
    s.add("max_z", rows.iter().map(|r| r.z_score()).fold(0.0, f64::max));
    Ok(s)
}
