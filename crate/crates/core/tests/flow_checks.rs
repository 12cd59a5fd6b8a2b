use himcf::exact::KoranyiSolution;
use himcf::flow::{exact_field, inclusion_check, rescaled_flow};
use himcf::grid::GridSpec;

fn unit_box(n: usize) -> GridSpec {
    GridSpec::uniform([-1.6, -1.6, -0.64], [1.6, 1.6, 0.64], n).unwrap()
}

#[test]
fn flows_from_nested_balls_stay_nested() {
    let spec = unit_box(49);
    let small = exact_field(spec);
    let big = small.map(|u| u - 3.0 * 1.2f64.ln()).unwrap();
    let inside = |u: &himcf::grid::GridField| u.data().iter().map(|&v| v < 0.0).collect::<Vec<_>>();
    let t_grid = [0.05, 0.15, 0.25, 0.35];
    let rep = inclusion_check(&small, &inside(&small), &big, &inside(&big), &t_grid).unwrap();
    assert_eq!(rep.max_fraction, 0.0, "{rep:?}");
    assert!(rep.levels.iter().all(|l| l.band_nodes > 0));
    assert!(inclusion_check(&big, &inside(&big), &small, &inside(&small), &t_grid).is_err());
}

#[test]
fn rescaled_volumes_scale_with_the_homogeneous_dimension() {
    let rep = rescaled_flow(&exact_field(unit_box(49)), &[0.1, 0.3, 0.5]).unwrap();
    for row in &rep.rows {
        assert!(row.volume_scaling_error.abs() < 0.02, "{row:?}");
    }
    assert!(rep.max_drift < 0.02, "drift {}", rep.max_drift);
}

#[test]
fn exact_level_radius_matches_dilation() {
    let k = KoranyiSolution;
    for t in [0.0, 0.3, 1.2] {
        assert!((k.level_radius(t) - (t / 3.0).exp()).abs() < 1e-14);
    }
}
