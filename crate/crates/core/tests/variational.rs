use magzoll::curves::{self, DiscreteLoop};
use magzoll::variational::{self, ContinuationOptions, DescentOptions};
use magzoll::{MagneticSurface, Point, Profile, ScalarField};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use std::f64::consts::{FRAC_PI_2, PI, TAU};

// a(θ) = sin θ − 0.2 sin⁹θ has its neck a = 0.8 on the equator
fn neck() -> MagneticSurface {
    let prof = Profile::from_exprs(
        "sin(theta) - 0.2*sin(theta)^9",
        "cos(theta) - 1.8*sin(theta)^8*cos(theta)",
        "-sin(theta) - 1.8*(8*sin(theta)^7*cos(theta)^2 - sin(theta)^9)",
        PI,
    )
    .unwrap();
    MagneticSurface::sphere_of_revolution(prof, ScalarField::constant(1.0)).unwrap()
}

fn seed(s: &MagneticSurface, n: usize) -> DiscreteLoop {
    let pts: Vec<Point> = (0..n)
        .map(|i| {
            let p = TAU * i as f64 / n as f64;
            [FRAC_PI_2 + 0.03 + 0.05 * p.sin(), p]
        })
        .collect();
    DiscreteLoop::new(s, pts, 5.0).unwrap()
}

/// `∫₀^θ a` by composite Simpson, an oracle for the primitive of `f μ` with f ≡ 1.
fn cap_integral(theta: f64) -> f64 {
    let a = |t: f64| t.sin() - 0.2 * t.sin().powi(9);
    let n = 2000;
    let h = theta / n as f64;
    let mut s = a(0.0) + a(theta);
    for k in 1..n {
        s += if k % 2 == 1 { 4.0 } else { 2.0 } * a(k as f64 * h);
    }
    s * h / 3.0
}

#[test]
fn neck_waist_persists_under_a_weak_field() {
    let s = neck();
    let w = variational::find_waist(&s, 0.0, &seed(&s, 128), &DescentOptions::default()).unwrap().waist().unwrap();
    assert!((w.length - TAU * 0.8).abs() < 1e-4, "{}", w.length);
    assert!(w.stability_margin > 0.0);
    for p in w.loop_.points() {
        assert!((p[0] - FRAC_PI_2).abs() < 1e-6, "{p:?}");
    }

    let c = variational::continue_waist(&s, &w, 0.01, &ContinuationOptions::default()).unwrap();
    assert_eq!(c.waist.lambda, 0.01);
    assert!(c.trace.len() >= 2);
    let err = variational::reintegration_error(&s, 0.01, &c.waist.loop_, 1e-12).unwrap();
    assert!(err < 1e-5, "reintegrated orbit misses by {err:e}");
    for p in c.waist.loop_.points() {
        assert!((p[0] - FRAC_PI_2).abs() < 0.05, "{p:?}");
    }
    // rotational symmetry: the magnetic waist is still a parallel, shifted
    // off the equator
    let t0 = c.waist.loop_.points()[0][0];
    assert!(c.waist.loop_.points().iter().all(|p| (p[0] - t0).abs() < 1e-6));
}

#[test]
fn action_gap_survives_below_the_threshold() {
    let s = neck();
    let w = variational::find_waist(&s, 0.0, &seed(&s, 64), &DescentOptions::default()).unwrap().waist().unwrap();
    let probe = variational::stability_probe(&s, 0.0, &w.loop_, 0.05, 32, 7).unwrap();
    let eps = probe.margin;
    assert!(eps > 0.0);
    let theta_sup = probe
        .probes
        .iter()
        .chain(std::iter::once(&w.loop_))
        .flat_map(|lp| lp.points().iter().map(|q| cap_integral(q[0]) / (q[0].sin() - 0.2 * q[0].sin().powi(9))))
        .fold(0.0, f64::max);
    let big_lambda = variational::perturbation_threshold(eps, probe.max_speed_l2, theta_sup).unwrap();
    let lambda = big_lambda / 2.0;

    let c = variational::continue_waist(&s, &w, lambda, &ContinuationOptions::default()).unwrap();
    let centre = variational::action(&c.waist.loop_, &s, lambda).unwrap().value;
    let min_probe = probe
        .probes
        .iter()
        .map(|lp| variational::action(lp, &s, lambda).unwrap().value)
        .fold(f64::INFINITY, f64::min);
    assert!(min_probe - centre >= eps / 4.0, "gap {} vs eps/4 {}", min_probe - centre, eps / 4.0);
}

fn random_loop(s: &MagneticSurface, rng: &mut StdRng, n: usize) -> DiscreteLoop {
    let c = [rng.gen_range(0.3..0.7), rng.gen_range(0.3..0.7)];
    let r = rng.gen_range(0.05..0.2);
    let coeffs: Vec<f64> = (0..4).map(|_| rng.gen_range(-0.02..0.02)).collect();
    let pts: Vec<Point> = (0..n)
        .map(|i| {
            let t = TAU * i as f64 / n as f64;
            let rho = r + coeffs[0] * (2.0 * t).cos() + coeffs[1] * (3.0 * t).sin();
            [c[0] + rho * t.cos() + coeffs[2] * (5.0 * t).sin(), c[1] + rho * t.sin() + coeffs[3] * t.cos()]
        })
        .collect();
    DiscreteLoop::new(s, pts, rng.gen_range(0.5..2.0)).unwrap()
}

#[test]
fn action_dominates_length() {
    let s = MagneticSurface::unit_torus(ScalarField::constant(0.0));
    let mut rng = StdRng::seed_from_u64(11);
    for _ in 0..50 {
        let lp = random_loop(&s, &mut rng, 64);
        let a = variational::action(&lp, &s, 0.0).unwrap().value;
        let len = curves::loop_length(&lp, &s).unwrap();
        assert!(a >= len - 1e-6, "{a} < {len}");
        // equality at τ = ‖Γ̇‖: for a closed polygon ‖Γ̇‖_{L²} = √(N Σ|Δ|²)
        let n = lp.len() as f64;
        let e: f64 = (0..lp.len())
            .map(|i| {
                let (p, q) = lp.segment(i);
                (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)
            })
            .sum();
        let best = variational::action(&lp.with_period((n * e).sqrt()), &s, 0.0).unwrap().value;
        assert!((best - (n * e).sqrt()).abs() < 1e-12);
    }
}

#[test]
fn gradient_matches_central_differences_on_random_loops() {
    let s = MagneticSurface::unit_torus(ScalarField::parse("1 + 0.5*cos(2*pi*x) + 0.3*sin(2*pi*y)").unwrap());
    let mut rng = StdRng::seed_from_u64(3);
    let h = 1e-6;
    for _ in 0..100 {
        let lp = random_loop(&s, &mut rng, 16);
        let lambda = rng.gen_range(0.0..3.0);
        let (grad, dtau) = variational::action_gradient(&lp, &s, lambda).unwrap();
        let value = |lp: &DiscreteLoop| variational::action(lp, &s, lambda).unwrap().value;
        let scale = grad.iter().flat_map(|g| g.iter()).fold(dtau.abs(), |m, v| m.max(v.abs()));
        for i in 0..lp.len() {
            for k in 0..2 {
                let mut plus = lp.points().to_vec();
                let mut minus = plus.clone();
                plus[i][k] += h;
                minus[i][k] -= h;
                let fd = (value(&lp.with_points(plus)) - value(&lp.with_points(minus))) / (2.0 * h);
                assert!((fd - grad[i][k]).abs() <= 1e-5 * scale, "point {i}: {fd} vs {}", grad[i][k]);
            }
        }
        let tau = lp.period();
        let fd = (value(&lp.with_period(tau + h)) - value(&lp.with_period(tau - h))) / (2.0 * h);
        assert!((fd - dtau).abs() <= 1e-5 * scale);
    }
}

#[test]
fn continuation_to_zero_returns_the_input() {
    let s = neck();
    let w = variational::find_waist(&s, 0.0, &seed(&s, 64), &DescentOptions::default()).unwrap().waist().unwrap();
    let c = variational::continue_waist(&s, &w, 0.0, &ContinuationOptions::default()).unwrap();
    assert!(c.trace.is_empty());
    assert_eq!(c.waist.loop_.points(), w.loop_.points());
    let c = variational::continue_waist(&s, &w, 0.01, &ContinuationOptions::default()).unwrap();
    assert!((c.waist.length / (TAU * 0.8) - 1.0).abs() < 0.02);
    assert!(c.trace.iter().all(|step| step.distance < 0.05));
}

// cylinder of radius 1 between two hemispherical caps: every latitude of the
// band is a waist of length 2π
fn flat_band(width: f64) -> MagneticSurface {
    let a = move |t: f64| {
        if t < FRAC_PI_2 {
            t.sin()
        } else if t <= FRAC_PI_2 + width {
            1.0
        } else {
            (t - FRAC_PI_2 - width).cos()
        }
    };
    let da = move |t: f64| {
        if t < FRAC_PI_2 {
            t.cos()
        } else if t <= FRAC_PI_2 + width {
            0.0
        } else {
            -(t - FRAC_PI_2 - width).sin()
        }
    };
    let dda = move |t: f64| if t < FRAC_PI_2 || t > FRAC_PI_2 + width { -a(t) } else { 0.0 };
    let prof = Profile::from_fns("flat band", PI + width, a, da, dda).unwrap();
    MagneticSurface::sphere_of_revolution(prof, ScalarField::constant(0.0)).unwrap()
}

#[test]
fn band_waists_are_disjoint_or_equal() {
    let width = 1.0;
    let s = flat_band(width);
    let n = 64;
    let waist_at = |height: f64, amp: f64| {
        let pts: Vec<Point> = (0..n)
            .map(|i| {
                let p = TAU * i as f64 / n as f64;
                [FRAC_PI_2 + height + amp * (2.0 * p).sin(), p]
            })
            .collect();
        let lp = DiscreteLoop::new(&s, pts, 6.0).unwrap();
        variational::find_waist(&s, 0.0, &lp, &DescentOptions::default()).unwrap().waist().unwrap()
    };
    let low = waist_at(0.3, 0.05);
    let high = waist_at(0.7, 0.05);
    let twin = waist_at(0.3, 0.03);
    for w in [&low, &high, &twin] {
        assert!((w.length - TAU).abs() < 1e-6, "{}", w.length);
    }
    let band = |w: &variational::Waist| {
        let th = w.loop_.points().iter().map(|p| p[0]);
        (th.clone().fold(f64::INFINITY, f64::min), th.fold(f64::NEG_INFINITY, f64::max))
    };
    let (l, h) = (band(&low), band(&high));
    assert!(l.1 < h.0, "images overlap: {l:?} {h:?}");
    let t = band(&twin);
    let same = (t.0 - l.0).abs() < 1e-6 && (t.1 - l.1).abs() < 1e-6;
    assert!(same || t.1 < l.0 || l.1 < t.0, "{t:?} {l:?}");
}
