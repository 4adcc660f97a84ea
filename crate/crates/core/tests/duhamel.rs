use clvpb_core::characteristics::{PhasePoint, TraceOptions, WallModel, ZeroField, DEFAULT_K_MAX};
use clvpb_core::geometry::{DomainGeometry, WallTemperature};
use clvpb_core::scattering::ScatterParams;
use clvpb_core::simulator::duhamel::Backtracer;
use clvpb_core::simulator::picard::{PicardConfig, PicardSolver};
use clvpb_core::simulator::{stream, InitialDatum};
use clvpb_core::Vec3;
use rand::Rng;

fn grid_solution(model: &WallModel, datum: &InitialDatum, t_bar: f64, velocity_cells: usize, points: &[PhasePoint]) -> Vec<f64> {
    let mut cfg = PicardConfig::reference(model.clone(), datum.clone(), t_bar);
    cfg.field = false;
    cfg.spatial_cells = 16;
    cfg.velocity_cells = velocity_cells;
    cfg.angles = 2 * velocity_cells;
    cfg.slices = 8;
    let mut solver = PicardSolver::new(cfg).unwrap();
    let mut d = 1.0;
    while d > 1e-9 {
        d = solver.step().unwrap();
    }
    solver.evaluate_next(points).unwrap()
}

/// The backward estimator against the converged grid iteration of the same
/// linear problem. The grid error is bounded by the coarse/fine difference.
#[test]
fn backward_estimate_matches_grid_solver() {
    let domain = DomainGeometry::unit_disk();
    let model = WallModel {
        domain: domain.clone(),
        wall: WallTemperature::constant(1.0).unwrap(),
        scatter: ScatterParams::new(0.6, 0.8).unwrap(),
        t_m: 1.0,
    };
    let datum = InitialDatum::new(domain.clone(), 1.0, 0.5, 0.7, Vec3::new(0.3, -0.2, 0.0)).unwrap();
    let t_bar = 0.8;
    let mut rng = stream(9, 0, 0, 0);
    let points: Vec<PhasePoint> = (0..20)
        .map(|_| {
            let x = domain.sample_interior(&mut rng);
            let v = Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), 0.0);
            PhasePoint::new(t_bar, x, v)
        })
        .collect();
    let coarse = grid_solution(&model, &datum, t_bar, 16, &points);
    let fine = grid_solution(&model, &datum, t_bar, 32, &points);
    let bt = Backtracer { model: &model, field: &ZeroField, datum: &datum, trace: TraceOptions::default(), k_max: DEFAULT_K_MAX };
    for (i, p) in points.iter().enumerate() {
        let e = bt.estimate(p, 20_000, 100 + i as u64).unwrap();
        assert_eq!(e.truncated_fraction, 0.0);
        let grid_err = (fine[i] - coarse[i]).abs();
        let diff = (e.mean - fine[i]).abs();
        assert!(diff <= 3.0 * e.std_error + grid_err + 1e-12, "point {i}: {} +- {} vs grid {} (grid error {grid_err})", e.mean, e.std_error, fine[i]);
    }
}
