use magzoll::curves::{self, DiscreteLoop, Sweep};
use magzoll::{MagneticSurface, Point, ScalarField};
use std::f64::consts::{PI, TAU};

fn ellipse(c: Point, rx: f64, ry: f64, n: usize) -> Vec<Point> {
    (0..n)
        .map(|i| {
            let t = TAU * i as f64 / n as f64;
            [c[0] + rx * t.cos(), c[1] + ry * t.sin()]
        })
        .collect()
}

#[test]
fn torus_flux_is_antisymmetric_under_reversal() {
    let s = MagneticSurface::unit_torus(ScalarField::parse("1 + 0.5*cos(2*pi*x) + 0.2*sin(2*pi*y)").unwrap());
    let lp = DiscreteLoop::new(&s, ellipse([0.3, 0.6], 0.2, 0.15, 256), 1.0).unwrap();
    let rev = lp.reversed(&s);
    for lambda in [0.5, 3.0] {
        let a = curves::flux(&lp, &s, lambda).unwrap();
        let b = curves::flux(&rev, &s, lambda).unwrap();
        assert!(a > 0.0, "counter-clockwise loop with f > 0 has positive flux: {a}");
        assert!((a + b).abs() < 1e-12 * a.abs().max(1.0), "{a} {b}");
        let y = curves::flux_report(&lp, &s, lambda, Sweep::Y).unwrap().value;
        assert!((a - y).abs() < 1e-10, "sweeps disagree: {a} {y}");
    }
}

#[test]
fn sphere_flux_reversal_swaps_capping_disks() {
    let s = MagneticSurface::round_sphere(1.0, ScalarField::parse("1 + 0.3*cos(theta)").unwrap()).unwrap();
    let lp = DiscreteLoop::new(&s, ellipse([1.0, 1.0], 0.3, 0.4, 256), 1.0).unwrap();
    let fwd = curves::flux_report(&lp, &s, 2.0, Sweep::X).unwrap();
    let back = curves::flux_report(&lp.reversed(&s), &s, 2.0, Sweep::X).unwrap();
    let alt = fwd.alternative.unwrap();
    assert!((back.value + alt).abs() < 1e-10, "{} {}", back.value, alt);
    assert!((back.alternative.unwrap() + fwd.value).abs() < 1e-10);
    // the two disks together carry the total flux 2·λ·4π (mean of 1 + 0.3cosθ is 1)
    assert!((fwd.value - alt - 2.0 * 4.0 * PI).abs() < 1e-8);
}

#[test]
fn self_intersections_of_a_triple_loop() {
    // the limaçon-like curve r = 1 + 2cos(t) winds once with one inner loop
    let s = MagneticSurface::plane(ScalarField::constant(0.0));
    let n = 600;
    let lima: Vec<Point> = (0..n)
        .map(|i| {
            let t = TAU * i as f64 / n as f64;
            let r = 0.5 + t.cos();
            [r * t.cos(), r * t.sin()]
        })
        .collect();
    let lp = DiscreteLoop::new(&s, lima, 1.0).unwrap();
    assert_eq!(curves::self_intersections(&lp, &s).unwrap(), 1);
    let tro: Vec<Point> = (0..900)
        .map(|i| {
            let t = TAU * i as f64 / 900.0;
            [t.cos() + 0.5 * (4.0 * t).cos(), t.sin() - 0.5 * (4.0 * t).sin()]
        })
        .collect();
    let expected = brute_force_crossings(&tro);
    assert!(expected > 0);
    let lp = DiscreteLoop::new(&s, tro, 1.0).unwrap();
    assert_eq!(curves::self_intersections(&lp, &s).unwrap(), expected);
    assert_eq!(curves::self_intersections(&lp.rotated(123), &s).unwrap(), expected);
}

/// Proper crossings between non-adjacent edges of a closed planar polygon.
fn brute_force_crossings(p: &[Point]) -> usize {
    let n = p.len();
    let orient = |a: Point, b: Point, c: Point| (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    let mut count = 0;
    for i in 0..n {
        for j in i + 2..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            let (a, b) = (p[i], p[(i + 1) % n]);
            let (c, d) = (p[j], p[(j + 1) % n]);
            if orient(a, b, c) * orient(a, b, d) < 0.0 && orient(c, d, a) * orient(c, d, b) < 0.0 {
                count += 1;
            }
        }
    }
    count
}

#[test]
fn self_intersections_survive_resampling() {
    let s = MagneticSurface::unit_torus(ScalarField::constant(0.0));
    // a figure-eight-like torus curve with transversal crossings
    let curve = |t: f64| [0.5 + 0.3 * (2.0 * t).sin(), 0.5 + 0.2 * (3.0 * t).sin() + 0.05 * t.cos()];
    let sample = |n: usize| (0..n).map(|i| curve(TAU * i as f64 / n as f64)).collect::<Vec<_>>();
    let coarse = DiscreteLoop::new(&s, sample(400), 1.0).unwrap();
    let k = curves::self_intersections(&coarse, &s).unwrap();
    assert_eq!(k, brute_force_crossings(&sample(400)));
    assert!(k > 0);
    // midpoint refinement keeps the polygon and doubles N
    let mut refined = Vec::new();
    for i in 0..coarse.len() {
        let (a, b) = coarse.segment(i);
        refined.push(a);
        refined.push([0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]);
    }
    let refined = DiscreteLoop::new(&s, refined, 1.0).unwrap();
    assert_eq!(curves::self_intersections(&refined, &s).unwrap(), k);
    let fine = DiscreteLoop::new(&s, sample(800), 1.0).unwrap();
    assert_eq!(curves::self_intersections(&fine, &s).unwrap(), k);
    for shift in [1, 57, 399] {
        assert_eq!(curves::self_intersections(&coarse.rotated(shift), &s).unwrap(), k);
    }
}
