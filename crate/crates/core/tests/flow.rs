use magzoll::flow::{self, FlowOptions};
use magzoll::orbits::first_integral;
use magzoll::{MagneticSurface, Profile, ScalarField, UnitTangentState};
use std::f64::consts::{FRAC_PI_2, PI, TAU};

fn neck(f: &str) -> MagneticSurface {
    let prof = Profile::from_exprs(
        "sin(theta) - 0.2*sin(theta)^9",
        "cos(theta) - 1.8*sin(theta)^8*cos(theta)",
        "-sin(theta) - 1.8*(8*sin(theta)^7*cos(theta)^2 - sin(theta)^9)",
        PI,
    )
    .unwrap();
    MagneticSurface::sphere_of_revolution(prof, ScalarField::parse(f).unwrap()).unwrap()
}

fn cases() -> Vec<(&'static str, MagneticSurface, [f64; 2], f64)> {
    vec![
        (
            "torus f(x)",
            MagneticSurface::unit_torus(ScalarField::parse("1 + 0.5*cos(2*pi*x)").unwrap()),
            [0.1, 0.2],
            0.7,
        ),
        ("neck f(theta)", neck("1 + 0.3*cos(theta)"), [1.4, 0.0], 0.4),
        (
            "round sphere f(theta)",
            MagneticSurface::round_sphere(1.0, ScalarField::parse("0.5 + 0.2*cos(theta)").unwrap()).unwrap(),
            [1.2, 2.0],
            1.9,
        ),
    ]
}

#[test]
fn speed_and_first_integral_over_length_100() {
    let tol = 1e-11;
    for (name, s, q, angle) in cases() {
        for lambda in [0.5, 2.0] {
            let start = UnitTangentState::from_angle(&s, q, angle).unwrap();
            let tr = flow::integrate_with(&s, lambda, &start, (0.0, 100.0), FlowOptions::with_tol(tol)).unwrap();
            assert!(tr.step_stats.max_speed_deviation <= 100.0 * tol, "{name}: {:e}", tr.step_stats.max_speed_deviation);
            let i0 = first_integral(&s, lambda, &start).unwrap();
            let worst = tr
                .samples
                .iter()
                .map(|p| {
                    let speed = s.norm(p.state.q, p.state.v).unwrap();
                    assert!((speed - 1.0).abs() < 1e-12, "{name}: speed {speed}");
                    (first_integral(&s, lambda, &p.state).unwrap() - i0).abs()
                })
                .fold(0.0, f64::max);
            assert!(worst <= 1e-8, "{name} lambda {lambda}: first integral drift {worst:e}");
        }
    }
}

#[test]
fn constant_torus_orbit_is_the_circle_of_radius_one_over_lambda() {
    let s = MagneticSurface::unit_torus(ScalarField::constant(1.0));
    let lambda = 4.0;
    let start = UnitTangentState::new(&s, [0.0, 0.0], [1.0, 0.0]).unwrap();
    let tr = flow::integrate(&s, lambda, &start, (0.0, 2.0 * PI / lambda), 1e-12).unwrap();
    let centre = [0.0, 1.0 / lambda];
    for p in &tr.samples {
        let r = ((p.state.q[0] - centre[0]).powi(2) + (p.state.q[1] - centre[1]).powi(2)).sqrt();
        assert!((r - 1.0 / lambda).abs() < 1e-10, "radius {r}");
    }
    let end = tr.samples.last().unwrap().state.q;
    assert!(end[0].hypot(end[1]) < 1e-8, "{end:?}");
}

#[test]
fn backward_integration_retraces_forward() {
    let s = neck("1 + 0.3*cos(theta)");
    let start = UnitTangentState::from_angle(&s, [1.3, 0.5], 0.9).unwrap();
    let fwd = flow::integrate(&s, 1.5, &start, (0.0, 5.0), 1e-12).unwrap();
    let end = fwd.samples.last().unwrap().state;
    let back = flow::integrate(&s, 1.5, &end, (-5.0, 0.0), 1e-12).unwrap();
    let first = back.samples.first().unwrap().state;
    assert!(s.sasaki_distance(&first, &start).unwrap() < 1e-8);
}

#[test]
fn localization_examples() {
    use magzoll::flow::{localization_check, LocalizationOptions, Region};
    let s = MagneticSurface::unit_torus(ScalarField::constant(1.0));
    let k = Region::Disk { center: [0.5, 0.5], radius: 0.05 };
    let u = Region::Disk { center: [0.5, 0.5], radius: 0.2 };
    let opts = LocalizationOptions::default();
    // orbits are circles of diameter 2/λ = 0.2, so from K they reach out to
    // 0.05 + 0.2: a disk of radius 0.3 contains them, one of radius 0.2 does not
    let wide = Region::Disk { center: [0.5, 0.5], radius: 0.3 };
    let held = localization_check(&s, 10.0, &k, &wide, 10.0, opts).unwrap();
    assert!(held.holds && held.witness.is_none());
    assert!(!localization_check(&s, 10.0, &k, &u, 10.0, opts).unwrap().holds);
    let failed = localization_check(&s, 1.0, &k, &u, 10.0, opts).unwrap();
    assert!(!failed.holds);
    let w = failed.witness.unwrap();
    assert!(s.base_distance([0.5, 0.5], w.escape_point).unwrap() >= 0.2 - 1e-9);

    // linear field: loops drift by O(1/λ²) per turn, so K stays inside U
    let plane = MagneticSurface::plane(ScalarField::parse("1 + y").unwrap());
    let k = Region::Disk { center: [0.0, 0.0], radius: 0.02 };
    let u = Region::Disk { center: [0.0, 0.0], radius: 0.2 };
    assert!(localization_check(&plane, 50.0, &k, &u, 2.0, opts).unwrap().holds);
}

#[test]
fn reversal_with_opposite_field_retraces_the_curve() {
    let s = neck("1 + 0.3*cos(theta)");
    let t_end = 4.0;
    let start = UnitTangentState::from_angle(&s, [1.2, 0.3], 2.1).unwrap();
    let fwd = flow::integrate(&s, 1.3, &start, (0.0, t_end), 1e-12).unwrap();
    let end = fwd.samples.last().unwrap().state;
    let neg = s.with_field(ScalarField::parse("-1 - 0.3*cos(theta)").unwrap());
    let back = flow::integrate(&neg, 1.3, &end.reversed(), (0.0, t_end), 1e-12).unwrap();
    let mut walker = flow::Flow::new(&neg, 1.3, &end.reversed(), FlowOptions::with_tol(1e-12)).unwrap();
    for p in fwd.samples.iter().rev() {
        while walker.t() < t_end - p.t {
            walker.step_until(t_end - p.t).unwrap();
        }
        let q = walker.state().q;
        assert!((q[0] - p.state.q[0]).abs() < 1e-8 && (q[1] - p.state.q[1]).abs() < 1e-8, "{q:?} vs {:?}", p.state.q);
    }
    let last = back.samples.last().unwrap().state;
    assert!(s.sasaki_distance(&last.reversed(), &start).unwrap() < 1e-8);
}

/// Circumradius curvature of three chart points, converted to the flat metric.
fn three_point_curvature(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    let ab = (b[0] - a[0]).hypot(b[1] - a[1]);
    let bc = (c[0] - b[0]).hypot(c[1] - b[1]);
    let ca = (a[0] - c[0]).hypot(a[1] - c[1]);
    let cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    2.0 * cross / (ab * bc * ca)
}

#[test]
fn curvature_of_torus_trajectories_is_lambda_f() {
    let s = MagneticSurface::unit_torus(ScalarField::parse("1 + 0.5*cos(2*pi*x)").unwrap());
    let lambda = 2.0;
    let start = UnitTangentState::from_angle(&s, [0.1, 0.2], 0.4).unwrap();
    let mut fl = flow::Flow::new(&s, lambda, &start, FlowOptions::with_tol(1e-10)).unwrap();
    let h = 1e-3;
    let mut worst: f64 = 0.0;
    for k in 1..200 {
        let t = 0.05 * k as f64;
        let mut at = |t: f64| {
            while fl.t() < t {
                fl.step_until(t).unwrap();
            }
            fl.state().q
        };
        let (a, b, c) = (at(t - h), at(t), at(t + h));
        worst = worst.max((three_point_curvature(a, b, c) - lambda * s.f(b)).abs());
    }
    assert!(worst < 1e-4, "{worst:e}");
}

#[test]
fn loop_diameter_scales_as_one_over_lambda() {
    let s = MagneticSurface::unit_torus(ScalarField::parse("1 + 0.5*cos(2*pi*x)").unwrap());
    for lambda in [10.0, 100.0, 1000.0] {
        let start = UnitTangentState::from_angle(&s, [0.0, 0.0], FRAC_PI_2).unwrap();
        // one turn at the maximum f = 1.5 is a circle of diameter 2/(1.5λ)
        let tr = flow::integrate(&s, lambda, &start, (0.0, TAU / (1.5 * lambda)), 1e-11).unwrap();
        let xs: Vec<f64> = tr.samples.iter().map(|p| p.state.q[0]).collect();
        let width = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let expected = 2.0 / (1.5 * lambda);
        assert!((width * lambda / (expected * lambda) - 1.0).abs() < 0.05, "lambda {lambda}: {width} vs {expected}");
    }
}

#[test]
fn round_sphere_orbit_is_the_quarter_circle() {
    let s = MagneticSurface::round_sphere(1.0, ScalarField::constant(1.0)).unwrap();
    let start = UnitTangentState::from_angle(&s, [FRAC_PI_2, 0.0], 0.0).unwrap();
    // cot r = λ gives r = π/4 and period 2π sin r
    let period = TAU * (PI / 4.0).sin();
    let tr = flow::integrate(&s, 1.0, &start, (0.0, period), 1e-12).unwrap();
    let end = tr.samples.last().unwrap().state;
    assert!(s.sasaki_distance(&end, &start).unwrap() < 1e-8);
    assert!((period - 4.442883).abs() < 1e-6);
}
