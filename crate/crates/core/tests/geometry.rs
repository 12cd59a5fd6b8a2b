use himcf::flow::exact_field;
use himcf::geom::{functional_ju, hull_probe_with, ProbeBall};
use himcf::grid::{GridField, GridSpec};
use himcf::heis::koranyi_dist;
use himcf::HPoint;

#[test]
fn exact_solution_minimizes_ju_against_compact_perturbations() {
    let spec = GridSpec::uniform([-1.6, -1.6, -0.64], [1.6, 1.6, 0.64], 97).unwrap();
    let u = exact_field(spec);
    let c = HPoint::new(0.9, 0.3, 0.1);
    let bump = GridField::from_fn(spec, |x| {
        let d = koranyi_dist(x, c) / 0.35;
        if d < 1.0 { (1.0 - d * d).powi(3) } else { 0.0 }
    })
    .unwrap();
    let mask = bump.map(|b| if b > 0.0 { 1.0 } else { 0.0 }).unwrap();
    let j0 = functional_ju(&u, &u, &mask).unwrap();
    for amp in [-1.0, -0.3, 0.3, 1.0] {
        let v = u.zip_map(&bump, |a, b| a + amp * b).unwrap();
        let j = functional_ju(&u, &v, &mask).unwrap();
        assert!(j > j0, "amplitude {amp}: {j} < {j0}");
    }
}

fn two_balls(gap_center: f64, r: f64, spec: GridSpec) -> GridField {
    let a = HPoint::new(-gap_center, 0.0, 0.0);
    let b = HPoint::new(gap_center, 0.0, 0.0);
    GridField::from_fn(spec, |x| (koranyi_dist(x, a) - r).min(koranyi_dist(x, b) - r)).unwrap()
}

#[test]
fn filling_the_crease_of_overlapping_balls_lowers_perimeter() {
    let spec = GridSpec::uniform([-1.4, -1.0, -0.45], [1.4, 1.0, 0.45], 97).unwrap();
    let (c, r) = (0.5f64, 0.6f64);
    let e = two_balls(c, r, spec);
    // top of the circle where the two spheres meet
    let crease = HPoint::new(0.0, 0.0, ((r.powi(4) - c.powi(4)) / 16.0).sqrt());
    let rep = hull_probe_with(&e, 0.0, &[ProbeBall { center: crease, radius: 0.25 }]).unwrap();
    assert!(rep.certified_non_hull, "{rep:?}");
}

#[test]
fn separated_balls_resist_small_probes() {
    let spec = GridSpec::uniform([-2.0, -1.6, -0.9], [2.0, 1.6, 0.9], 97).unwrap();
    let e = two_balls(0.9, 0.5, spec);
    let probes = [
        ProbeBall { center: HPoint::IDENTITY, radius: 0.3 },
        ProbeBall { center: HPoint::new(-0.9, 0.45, 0.0), radius: 0.2 },
        ProbeBall { center: HPoint::new(0.5, 0.0, 0.0), radius: 0.2 },
    ];
    let rep = hull_probe_with(&e, 0.0, &probes).unwrap();
    assert!(rep.min_margin > 0.0, "{rep:?}");
}
