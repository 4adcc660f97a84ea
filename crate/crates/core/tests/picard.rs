use clvpb_core::characteristics::WallModel;
use clvpb_core::geometry::{DomainGeometry, WallTemperature};
use clvpb_core::scattering::ScatterParams;
use clvpb_core::simulator::picard::{PicardConfig, PicardSolver};
use clvpb_core::simulator::{mu, InitialDatum};
use clvpb_core::Vec3;

fn specular_config(velocity_cells: usize, angles: usize) -> PicardConfig {
    let domain = DomainGeometry::unit_disk();
    let model = WallModel {
        domain: domain.clone(),
        wall: WallTemperature::constant(1.0).unwrap(),
        scatter: ScatterParams::new(1e-6, 1e-6).unwrap(),
        t_m: 1.0,
    };
    let datum = InitialDatum::new(domain, 1.0, 0.4, 0.7, Vec3::new(0.3, -0.2, 0.0)).unwrap();
    let mut c = PicardConfig::reference(model, datum, 0.3);
    c.field = false;
    c.slices = 1;
    c.spatial_cells = 8;
    c.velocity_cells = velocity_cells;
    c.angles = angles;
    c.iterations = 1;
    c
}

/// Method of characteristics for one iterate from a time-independent
/// `f^0 = f_0`: straight backward ray, one specular reflection of the data.
fn exact_first_iterate(c: &PicardConfig, t: f64, x: &Vec3, v: &Vec3) -> f64 {
    let d = &c.model.domain;
    let f0 = |x: &Vec3, v: &Vec3| c.datum.value(x, v) / mu(v, 1.0).sqrt();
    let on_wall = d.signed_distance(x) >= -d.boundary_tolerance();
    let s = if on_wall && d.normal_at(x).dot(v) <= 0.0 { 0.0 } else { d.ray_exit(x, &-v).unwrap() };
    if s >= t {
        return f0(&(x - v * t), v);
    }
    let xb = d.project(&(x - v * s));
    let n = d.normal_at(&xb);
    f0(&xb, &(v - n * (2.0 * n.dot(v))))
}

fn first_iterate_error(velocity_cells: usize, angles: usize) -> f64 {
    let c = specular_config(velocity_cells, angles);
    let mut solver = PicardSolver::new(c.clone()).unwrap();
    solver.step().unwrap();
    let t = solver.times()[1];
    let f = &solver.state.f[1];
    let (mut err, mut norm) = (0.0, 0.0);
    for (i, value) in f.iter().enumerate() {
        let (x, v) = solver.grid_point(i);
        let exact = exact_first_iterate(&c, t, &x, &v);
        err += (value - exact).abs();
        norm += exact.abs();
    }
    err / norm
}

#[test]
fn specular_iterate_matches_characteristics_to_second_order() {
    let coarse = first_iterate_error(16, 24);
    let fine = first_iterate_error(32, 48);
    println!("relative L1 error {coarse:e} -> {fine:e}, ratio {}", coarse / fine);
    assert!(coarse < 0.05);
    assert!(coarse / fine > 3.0, "{coarse} -> {fine}");
}
