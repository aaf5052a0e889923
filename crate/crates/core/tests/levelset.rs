use monoset::grid_fem::{ConductivityField, CrossedMesh};
use monoset::kv_levelset::{
    init_signed_distance, kv_objective, levelset_reconstruct, DescentConfig, MeasurementSet, Shape,
    StopReason,
};
use monoset::Exec;

fn disk_data(fine: &CrossedMesh, mesh: &CrossedMesh, eta: f64) -> MeasurementSet {
    let sigma =
        ConductivityField::rasterize(fine, 1.0, 2.0, |p| (p[0] - 0.5).hypot(p[1] - 0.5) < 0.2);
    MeasurementSet::synthesize(fine, &sigma, mesh, 5, eta, 3, Exec::Rayon).unwrap()
}

#[test]
fn descent_shrinks_the_symmetric_difference() {
    let fine = CrossedMesh::new(64).unwrap();
    let mesh = CrossedMesh::new(32).unwrap();
    let data = disk_data(&fine, &mesh, 0.0);
    let phi0 = init_signed_distance(&[Shape::circle([0.45, 0.55], 0.13)], &mesh).unwrap();
    let truth = |p: [f64; 2]| (p[0] - 0.5).hypot(p[1] - 0.5) < 0.2;
    let before = phi0.symmetric_difference(&mesh, truth, 512).unwrap();
    let config = DescentConfig {
        max_iter: 60,
        ..DescentConfig::default()
    };
    let result = levelset_reconstruct(&mesh, &data, phi0, 1.0, 2.0, config, Exec::Rayon).unwrap();
    let after = result.phi.symmetric_difference(&mesh, truth, 512).unwrap();
    assert!(after < 0.5 * before, "{before} -> {after}");

    let mut last = result.initial_objective;
    for r in &result.history {
        assert!(
            r.objective < r.previous && r.previous <= last,
            "iteration {}",
            r.iter
        );
        last = r.objective;
    }
    assert!(result.history.len() <= 60);
    assert!(result.stop != StopReason::MaxIter || result.history.len() == 60);
}

#[test]
fn backends_agree_bit_for_bit() {
    let fine = CrossedMesh::new(32).unwrap();
    let mesh = CrossedMesh::new(16).unwrap();
    let data = disk_data(&fine, &mesh, 0.01);
    let sigma =
        ConductivityField::rasterize(&mesh, 1.0, 2.0, |p| (p[0] - 0.4).hypot(p[1] - 0.5) < 0.25);
    let a = kv_objective(&mesh, &sigma, &data, Exec::Sequential).unwrap();
    let b = kv_objective(&mesh, &sigma, &data, Exec::Rayon).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
}

#[test]
fn noisy_data_are_reproducible_from_the_seed() {
    let fine = CrossedMesh::new(32).unwrap();
    let mesh = CrossedMesh::new(16).unwrap();
    let a = disk_data(&fine, &mesh, 0.05);
    let b = disk_data(&fine, &mesh, 0.05);
    let clean = disk_data(&fine, &mesh, 0.0);
    for k in 0..a.len() {
        assert_eq!(a.voltages[k], b.voltages[k]);
        assert_ne!(a.voltages[k], clean.voltages[k]);
    }
}
