use clvpb_core::field::PoissonGrid;
use clvpb_core::geometry::DomainGeometry;
use clvpb_core::Vec3;

/// Radial manufactured solution: -Δφ = 1 - (d+2)/d |x|² with zero normal
/// derivative on the unit sphere. Returns the L2 error after gauge matching
/// and the max field error inside r < 0.8.
fn radial_errors(dom: &DomainGeometry, n: usize) -> (f64, f64) {
    let d = dom.dimension() as f64;
    let g = PoissonGrid::new(dom, n).unwrap();
    let f = g.solve_source(|x: &Vec3| 1.0 - (d + 2.0) / d * x.norm_squared(), 1e-10).unwrap();
    let exact = |r: f64| -r * r / (2.0 * d) + r.powi(4) / (4.0 * d);
    let active: Vec<usize> = (0..g.len()).filter(|&i| g.is_active(i)).collect();
    let vol: f64 = active.iter().map(|&i| g.cut_volume(i)).sum();
    let shift = active.iter().map(|&i| (f.phi[i] - exact(g.node_position(i).norm())) * g.cut_volume(i)).sum::<f64>() / vol;
    let mut l2 = 0.0;
    let mut e_max: f64 = 0.0;
    for &i in &active {
        let x = g.node_position(i);
        let r = x.norm();
        let e = f.phi[i] - shift - exact(r);
        l2 += e * e * g.cut_volume(i);
        if r < 0.8 {
            e_max = e_max.max((f.e[i] - x * ((1.0 - r * r) / d)).norm());
        }
    }
    ((l2 / vol).sqrt(), e_max)
}

#[test]
fn disk_converges_at_second_order() {
    let (a, ea) = radial_errors(&DomainGeometry::unit_disk(), 32);
    let (b, eb) = radial_errors(&DomainGeometry::unit_disk(), 64);
    let order = (a / b).log2();
    assert!((1.7..2.4).contains(&order), "order {order}");
    assert!(eb < ea && eb < 1e-3, "field error {ea} -> {eb}");
}

#[test]
fn ball_converges_at_second_order() {
    let (a, _) = radial_errors(&DomainGeometry::unit_ball(), 16);
    let (b, eb) = radial_errors(&DomainGeometry::unit_ball(), 32);
    let order = (a / b).log2();
    assert!((1.7..2.4).contains(&order), "order {order}");
    assert!(eb < 1e-3, "field error {eb}");
}
