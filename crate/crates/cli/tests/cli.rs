use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use clvpb::config::RunConfig;
use clvpb::run::load;
use proptest::prelude::*;

fn clvpb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clvpb")).args(args).env_remove("CLVPB_SEED").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap()
}

fn overrides(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

#[test]
fn empty_config_file_gives_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.cfg");
    fs::write(&path, "# nothing here\n").unwrap();
    let cfg = load(None, Some(&path), None, &[]).unwrap();
    assert_eq!(cfg, RunConfig::default());
    assert_eq!(cfg.mode(), "verify");
}

#[test]
fn precedence_file_env_mode_set() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.cfg");
    fs::write(&path, "mode=forward\nseed=5\ntime.dt=0.01\nparticles.n=10\n").unwrap();
    let cfg = load(None, Some(&path), Some("9"), &overrides(&[("time.dt", "0.02")])).unwrap();
    assert_eq!(cfg.u64("seed"), 9);
    assert_eq!(cfg.f64("time.dt"), 0.02);
    assert_eq!(cfg.usize("particles.n"), 10);
    assert_eq!(cfg.mode(), "forward");
    let cfg = load(Some("picard"), Some(&path), None, &overrides(&[("seed", "3")])).unwrap();
    assert_eq!(cfg.mode(), "picard");
    assert_eq!(cfg.u64("seed"), 3);
}

#[test]
fn temperature_constraint_names_the_bound() {
    let err = load(Some("forward"), None, None, &overrides(&[("wall.t_w", "1 + 0.9 * x"), ("scatter.r_par", "0.2")]))
        .unwrap_err()
        .to_string();
    assert!(err.contains("wall.t_w") && err.contains("violates T_min/T_max > max("), "{err}");
    // verify mode runs its own fixtures and does not check the wall
    assert!(load(Some("verify"), None, None, &overrides(&[("wall.t_w", "1 + 0.9 * x"), ("scatter.r_par", "0.2")])).is_ok());
}

#[test]
fn manifest_hash_tracks_config_changes() {
    let a = RunConfig::default();
    let b = a.clone().with_overrides(overrides(&[("seed", "42")])).unwrap();
    let c = a.clone().with_overrides(overrides(&[("seed", "43")])).unwrap();
    let d = a.clone().with_overrides(overrides(&[("time.dt", "1e-3")])).unwrap();
    assert_eq!(a.hash(), b.hash());
    assert_eq!(a.hash(), d.hash());
    assert_ne!(a.hash(), c.hash());
    assert_eq!(a.hash().len(), 64);
}

proptest! {
    #[test]
    fn emit_parse_round_trip(
        seed in any::<u64>(),
        dt in 1e-9f64..10.0,
        r_perp in 1e-6f64..=1.0,
        r_par in 1e-6f64..1.999,
        center in prop::array::uniform3(-1e3f64..1e3),
        n in 0usize..1_000_000,
        collide in any::<bool>(),
        shape in prop::sample::select(vec!["ball", "ellipsoid", "disk"]),
    ) {
        let cfg = RunConfig::default().with_overrides([
            ("seed".to_string(), seed.to_string()),
            ("time.dt".to_string(), dt.to_string()),
            ("scatter.r_perp".to_string(), r_perp.to_string()),
            ("scatter.r_par".to_string(), r_par.to_string()),
            ("domain.center".to_string(), format!("{},{},{}", center[0], center[1], center[2])),
            ("particles.n".to_string(), n.to_string()),
            ("collision.enabled".to_string(), collide.to_string()),
            ("domain.shape".to_string(), shape.to_string()),
        ]).unwrap();
        let back = RunConfig::parse_str(&cfg.emit()).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.hash(), cfg.hash());
        prop_assert_eq!(back.f64("time.dt"), dt);
    }
}

#[test]
fn invalid_value_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = clvpb(&["forward", "--set", "scatter.r_perp=0", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("scatter.r_perp") && err.contains("0 < value <= 1"), "{err}");
    assert_eq!(code(&clvpb(&["forward", "--set", "no.such.key=1"])), 2);
}

#[test]
fn full_picard_is_rejected_at_setup() {
    let dir = tempfile::tempdir().unwrap();
    let o = clvpb(&["picard", "--set", "picard.mode=full", "--set", "domain.shape=disk", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn escaping_particles_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = clvpb(&[
        "forward",
        "--set", "fault.disable_wall=true",
        "--set", "particles.n=50",
        "--set", "time.steps=20",
        "--set", "time.dt=0.2",
        "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(read(dir.path(), "summary.txt").contains("error (exit 3)"));
}

#[test]
fn verify_single_suite_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = clvpb(&["verify", "--suite", "reciprocity", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let report = read(dir.path(), "verify.txt");
    assert!(report.contains("[PASS]") && report.contains("reciprocity"), "{report}");
    let manifest = read(dir.path(), "run_manifest");
    assert!(manifest.contains("mode=verify") && manifest.contains("config_sha256="));
}

#[test]
fn forward_with_no_particles_writes_valid_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = clvpb(&["forward", "--set", "particles.n=0", "--set", "time.steps=10", "--set", "diagnostics.every=5", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = read(dir.path(), "diagnostics.csv");
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    let width = lines[0].split(',').count();
    assert!(lines.iter().all(|l| l.split(',').count() == width));
    assert!(read(dir.path(), "summary.txt").contains("mass_end = 0"));
}

#[test]
fn picard_output_is_reproducible() {
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let o = clvpb(&[
            "picard",
            "--set", "domain.shape=disk",
            "--set", "picard.spatial_cells=8",
            "--set", "picard.velocity_cells=8",
            "--set", "picard.angles=16",
            "--set", "picard.slices=2",
            "--set", "picard.iterations=3",
            "--out", dir.path().to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        fs::read(dir.path().join("picard_ratios.csv")).unwrap()
    };
    let a = run();
    assert!(!a.is_empty());
    assert_eq!(a, run());
}

#[test]
fn sample_kernel_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("k.csv");
    let o = clvpb(&["sample-kernel", "--n", "200", "--out", path.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(&path).unwrap();
    assert!(csv.starts_with("v1,v2,v3,v_perp,v_par_norm\n"));
    assert_eq!(csv.lines().count(), 201);
    assert!(dir.path().join("run_manifest").exists());
    // incoming velocity pointing away from the wall
    assert_eq!(code(&clvpb(&["sample-kernel", "--set", "sample_kernel.u=-1,0,0", "--out", dir.path().to_str().unwrap()])), 2);
}

#[test]
fn backtrace_prints_cycles() {
    let dir = tempfile::tempdir().unwrap();
    let o = clvpb(&["backtrace", "--t", "3", "--x", "0.2,-0.1,0", "--v", "-1,0.5,0.2", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text, read(dir.path(), "backtrace.csv"));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "k,t_k,x_1,x_2,x_3,v_1,v_2,v_3,log_weight");
    assert!(lines.len() >= 3, "{text}");
    assert!(lines.last().unwrap().split(',').nth(1) == Some("0"));
}

#[test]
fn shipped_configs_load() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut count = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "cfg") {
            load(None, Some(&path), None, &[]).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            count += 1;
        }
    }
    assert!(count >= 4);
}
