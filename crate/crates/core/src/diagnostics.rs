//! Closed-form diagnostics of a magnetic system and the guiding-centre drift
//! of small loops in a linear field.
//!
//! Two normalizations of the mean field appear: the average `f_avg` enters
//! the magnetic curvature `K_λf = λ² f_avg² + 2πχ/A` and the systolic value,
//! the total `f_total = ∫ f μ` enters `λ_{g,f} = √(−2πχA)/|f_total|`. With
//! this split `helicity(λ_{g,f}) = 0` holds identically.

use crate::error::{Error, Result};
use crate::flow::{Flow, FlowOptions};
use crate::geometry::{MagneticSurface, ScalarField, UnitTangentState};
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::{PI, TAU};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SystemConstants {
    pub area: f64,
    pub euler: i32,
    pub f_total: f64,
    pub f_avg: f64,
}

impl SystemConstants {
    pub fn new(area: f64, euler: i32, f_total: f64) -> Result<Self> {
        if !(area > 0.0) || !area.is_finite() {
            return Err(Error::NonPositiveInput { what: "area", value: area });
        }
        if !f_total.is_finite() {
            return Err(Error::InvalidInput(format!("f_total = {f_total}")));
        }
        Ok(Self { area, euler, f_total, f_avg: f_total / area })
    }

    /// Constants of a closed surface of constant curvature `k` with `f ≡ f0`;
    /// the area comes from Gauss–Bonnet, `A = 2πχ/k`.
    pub fn constant_curvature(euler: i32, k: f64, f0: f64) -> Result<Self> {
        let area = TAU * euler as f64 / k;
        if !(area > 0.0) || !area.is_finite() {
            return Err(Error::InvalidInput(format!("curvature {k} is incompatible with Euler characteristic {euler}")));
        }
        Self::new(area, euler, f0 * area)
    }

    pub fn from_surface(surface: &MagneticSurface) -> Result<Self> {
        let euler = surface.euler_characteristic().ok_or(Error::UnboundedDomain)?;
        Self::new(surface.total_area()?, euler, surface.total_flux()?)
    }
}

/// `K_λf = λ² f_avg² + 2πχ/A`.
pub fn avg_magnetic_curvature(c: &SystemConstants, lambda: f64) -> f64 {
    lambda * lambda * c.f_avg * c.f_avg + TAU * c.euler as f64 / c.area
}

/// `ℋ = A²/(2χ)·K_λf`.
pub fn helicity(c: &SystemConstants, lambda: f64) -> Result<f64> {
    if c.euler == 0 {
        return Err(Error::TorusEulerZero);
    }
    // `+ 0.0` folds a signed zero into 0
    Ok(c.area * c.area / (2.0 * c.euler as f64) * avg_magnetic_curvature(c, lambda) + 0.0)
}

/// `λ_{g,f} = √(−2πχA)/|f_total|`, the zero of the helicity.
pub fn lambda_zero(c: &SystemConstants) -> Result<f64> {
    if c.euler >= 0 {
        return Err(Error::NonNegativeEuler { chi: c.euler });
    }
    if c.f_total == 0.0 {
        return Err(Error::ZeroMeanField);
    }
    Ok((-TAU * c.euler as f64 * c.area).sqrt() / c.f_total.abs())
}

/// `2π/(λ f_avg + √K_λf)`: the common value of `ℓ + λ·(signed flux)` over
/// the orbits of a constant Zoll system.
pub fn systolic_value(c: &SystemConstants, lambda: f64) -> Result<f64> {
    let k = avg_magnetic_curvature(c, lambda);
    if !(k > 0.0) {
        return Err(Error::NonpositiveMagneticCurvature { value: k });
    }
    Ok(TAU / (lambda * c.f_avg + k.sqrt()))
}

/// The variant with `2π/A` in place of `2πχ/A` under the root. Reported next
/// to [`systolic_value`]; on the round sphere only the latter matches the
/// orbits.
pub fn systolic_value_literal(c: &SystemConstants, lambda: f64) -> Result<f64> {
    let k = lambda * lambda * c.f_avg * c.f_avg + TAU / c.area;
    if !(k > 0.0) {
        return Err(Error::NonpositiveMagneticCurvature { value: k });
    }
    Ok(TAU / (lambda * c.f_avg + k.sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ManeH {
    pub value: f64,
    /// False when `value` is the exact `h` of a constant system.
    pub upper_bound: bool,
}

/// `h(g, f) = 1/√(2c(g, f))`: exact `√(−K)/f` for constant systems with
/// `K < 0 < f`, otherwise the bound `λ_{g,f}`.
pub fn mane_h(c: &SystemConstants, curvature: Option<f64>, constant_f: Option<f64>) -> Result<ManeH> {
    if let (Some(k), Some(f)) = (curvature, constant_f) {
        if k < 0.0 && f > 0.0 {
            return Ok(ManeH { value: (-k).sqrt() / f, upper_bound: false });
        }
    }
    Ok(ManeH { value: lambda_zero(c)?, upper_bound: true })
}

/// A system constants report as emitted by the CLI.
#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticsReport {
    pub constants: SystemConstants,
    pub lambda: f64,
    pub magnetic_curvature: f64,
    pub helicity: Option<f64>,
    pub lambda_zero: Option<f64>,
    pub mane_h: Option<ManeH>,
    pub systolic_value: Option<f64>,
    pub systolic_value_literal: Option<f64>,
}

pub fn report(c: &SystemConstants, lambda: f64, curvature: Option<f64>, constant_f: Option<f64>) -> DiagnosticsReport {
    DiagnosticsReport {
        constants: *c,
        lambda,
        magnetic_curvature: avg_magnetic_curvature(c, lambda),
        helicity: helicity(c, lambda).ok(),
        lambda_zero: lambda_zero(c).ok(),
        mane_h: mane_h(c, curvature, constant_f).ok(),
        systolic_value: systolic_value(c, lambda).ok(),
        systolic_value_literal: systolic_value_literal(c, lambda).ok(),
    }
}

/// Linear field `f = e + L·y` near the origin, scaled by `λ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DriftSetup {
    pub e: f64,
    #[serde(rename = "L")]
    pub l: f64,
    pub lambda: f64,
    pub epsilon: f64,
    /// Constant in `r_λ = c/(eλ)`.
    pub c: f64,
}

pub const DEFAULT_DRIFT_C: f64 = 2.0;
pub const DRIFT_C_SENSITIVITY: [f64; 2] = [1.5, 4.0];

impl DriftSetup {
    pub fn new(e: f64, l: f64, lambda: f64, epsilon: f64) -> Result<Self> {
        if !(e > 0.0) {
            return Err(Error::NonPositiveInput { what: "e", value: e });
        }
        if !(lambda > 0.0) {
            return Err(Error::NonPositiveInput { what: "lambda", value: lambda });
        }
        if !(l >= 0.0) || !(epsilon >= 0.0) {
            return Err(Error::InvalidInput(format!("L = {l} and epsilon = {epsilon} must be non-negative")));
        }
        Ok(Self { e, l, lambda, epsilon, c: DEFAULT_DRIFT_C })
    }

    pub fn with_c(self, c: f64) -> Self {
        Self { c, ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DriftRadii {
    pub c: f64,
    pub r_lambda: f64,
    pub r0: f64,
    pub r1: f64,
    pub r2: f64,
    /// `Δ = cos30°·r₀ + (1 − cos30°)·r₁ − r₂`; the bound reads `Δx ≥ 2Δ`.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftBound {
    pub setup: DriftSetup,
    pub radii: DriftRadii,
    pub bound_2delta: f64,
    /// The same bound at the other values of `c`.
    pub sensitivity: Vec<DriftRadii>,
}

fn radii(s: &DriftSetup, c: f64) -> Result<DriftRadii> {
    let le = s.lambda * s.e;
    let r_lambda = c / le;
    let er = s.epsilon * r_lambda;
    let d1 = le + er;
    let d0 = le - s.l * s.lambda / (2.0 * d1) + er;
    let d2 = le - er;
    for (radius, d) in [("r1", d1), ("r0", d0), ("r2", d2)] {
        if !(d > 0.0) {
            return Err(Error::DenominatorNonpositive { radius });
        }
    }
    let (r0, r1, r2) = (1.0 / d0, 1.0 / d1, 1.0 / d2);
    let cos30 = 0.75f64.sqrt();
    Ok(DriftRadii { c, r_lambda, r0, r1, r2, delta: cos30 * r0 + (1.0 - cos30) * r1 - r2 })
}

pub fn drift_bound(setup: &DriftSetup) -> Result<DriftBound> {
    let main = radii(setup, setup.c)?;
    let sensitivity = DRIFT_C_SENSITIVITY
        .iter()
        .filter(|&&c| c != setup.c)
        .map(|&c| radii(setup, c))
        .collect::<Result<_>>()?;
    Ok(DriftBound { setup: *setup, radii: main, bound_2delta: 2.0 * main.delta, sensitivity })
}

/// Leading-order guiding-centre drift per loop, `πL/(λ²e³)`.
pub fn guiding_center_drift(e: f64, l: f64, lambda: f64) -> f64 {
    PI * l / (lambda * lambda * e.powi(3))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftMeasurement {
    /// Mean x-advance per loop.
    pub dx: f64,
    /// Times and x-positions of the downward crossings of the x-axis,
    /// starting with the initial point.
    pub crossings: Vec<(f64, f64)>,
}

/// Integrates the plane flow of `f = e + L·y` from the origin heading in the
/// negative y-direction and measures the mean x-advance between successive
/// downward crossings of the x-axis.
pub fn measure_drift(lambda: f64, e: f64, l: f64, n_loops: usize, tol: f64) -> Result<DriftMeasurement> {
    let setup = DriftSetup::new(e, l, lambda, 0.0)?;
    if n_loops == 0 {
        return Err(Error::InvalidInput("n_loops must be at least 1".into()));
    }
    let surface = MagneticSurface::plane(ScalarField::from_fn(format!("{e} + {l}*y"), move |_, y| e + l * y));
    let start = UnitTangentState { q: [0.0, 0.0], v: [0.0, -1.0] };
    // one gyration radius of headroom on the field for the step bound
    let f_max = e + l * 2.0 / (setup.lambda * e);
    let opts = FlowOptions { tol, max_step: Some(0.1 / (lambda * f_max).max(1.0)) };
    let mut flow = Flow::new(&surface, lambda, &start, opts)?;
    let budget = 3.0 * TAU / (lambda * e) * n_loops as f64;
    let mut crossings = vec![(0.0, 0.0)];
    while crossings.len() <= n_loops {
        if flow.t() > budget {
            return Err(Error::CrossingNotFound { found: crossings.len() - 1 });
        }
        let (t0, y0) = (flow.t(), flow.raw());
        flow.step()?;
        let (t1, y1) = (flow.t(), flow.raw());
        if y0[1] > 0.0 && y1[1] <= 0.0 {
            let h = t1 - t0;
            // cubic Hermite guess for the root, then Newton with exact sub-steps
            let hermite = |s: f64| {
                let u = s / h;
                let (h00, h10, h01, h11) =
                    (2.0 * u.powi(3) - 3.0 * u * u + 1.0, u.powi(3) - 2.0 * u * u + u, -2.0 * u.powi(3) + 3.0 * u * u, u.powi(3) - u * u);
                h00 * y0[1] + h10 * h * y0[3] + h01 * y1[1] + h11 * h * y1[3]
            };
            let (mut lo, mut hi) = (0.0, h);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if hermite(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let mut s = 0.5 * (lo + hi);
            let mut state = flow.advance_from(&y0, s)?;
            for _ in 0..20 {
                let ds = state[1] / state[3];
                s -= ds;
                state = flow.advance_from(&y0, s)?;
                if ds.abs() <= 1e-12 {
                    break;
                }
            }
            crossings.push((t0 + s, state[0]));
        }
    }
    let last = crossings[n_loops].1;
    Ok(DriftMeasurement { dx: (last - crossings[0].1) / n_loops as f64, crossings })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DriftRow {
    pub lambda: f64,
    pub measured_dx: f64,
    pub bound_2delta: f64,
    /// `measured_dx / bound_2delta`.
    pub ratio: f64,
}

/// Measures the drift at each `λ` in parallel (the `λ` of `setup` is
/// ignored); rows keep the input order.
pub fn drift_sweep(lambdas: &[f64], setup: &DriftSetup, n_loops: usize, tol: f64) -> Result<Vec<DriftRow>> {
    lambdas
        .par_iter()
        .map(|&lambda| {
            let s = DriftSetup::new(setup.e, setup.l, lambda, setup.epsilon)?.with_c(setup.c);
            let bound = drift_bound(&s)?.bound_2delta;
            let measured_dx = measure_drift(lambda, setup.e, setup.l, n_loops, tol)?.dx;
            Ok(DriftRow { lambda, measured_dx, bound_2delta: bound, ratio: measured_dx / bound })
        })
        .collect()
}

pub fn drift_csv(rows: &[DriftRow]) -> String {
    let mut out = String::from("lambda,measured_dx,bound_2delta,ratio\n");
    for r in rows {
        out.push_str(&crate::io::csv_row(&[r.lambda, r.measured_dx, r.bound_2delta, r.ratio]));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn genus2(f: f64) -> SystemConstants {
        SystemConstants::constant_curvature(-2, -1.0, f).unwrap()
    }

    #[test]
    fn curvature_examples() {
        let torus = SystemConstants::new(1.0, 0, 1.0).unwrap();
        assert_eq!(avg_magnetic_curvature(&torus, 3.0), 9.0);
        let sphere = SystemConstants::new(4.0 * PI, 2, 4.0 * PI).unwrap();
        assert!((avg_magnetic_curvature(&sphere, 1.0) - 2.0).abs() < 1e-15);
        assert!(avg_magnetic_curvature(&genus2(1.0), 1.0).abs() < 1e-15);
    }

    #[test]
    fn helicity_and_lambda_zero() {
        let g = genus2(1.0);
        assert!(helicity(&g, 1.0).unwrap().abs() < 1e-12);
        assert!((helicity(&g, 2.0).unwrap() + 12.0 * PI * PI).abs() < 1e-9);
        assert!((lambda_zero(&g).unwrap() - 1.0).abs() < 1e-12);
        assert!((lambda_zero(&genus2(2.0)).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(helicity(&SystemConstants::new(1.0, 0, 1.0).unwrap(), 1.0), Err(Error::TorusEulerZero));
        let sphere = SystemConstants::new(4.0 * PI, 2, 4.0 * PI).unwrap();
        assert_eq!(lambda_zero(&sphere), Err(Error::NonNegativeEuler { chi: 2 }));
        assert_eq!(lambda_zero(&genus2(0.0)), Err(Error::ZeroMeanField));
    }

    #[test]
    fn systolic_examples() {
        let torus = SystemConstants::new(1.0, 0, 1.0).unwrap();
        assert!((systolic_value(&torus, 2.0).unwrap() - PI / 2.0).abs() < 1e-15);
        let sphere = SystemConstants::new(4.0 * PI, 2, 4.0 * PI).unwrap();
        assert!((systolic_value(&sphere, 1.0).unwrap() - TAU / (1.0 + 2f64.sqrt())).abs() < 1e-15);
        let big = 1e6;
        assert!((systolic_value(&sphere, big).unwrap() * big - PI).abs() < 1e-5);
        assert!(matches!(systolic_value(&genus2(1.0), 0.5), Err(Error::NonpositiveMagneticCurvature { .. })));
    }

    #[test]
    fn mane_examples() {
        assert_eq!(mane_h(&genus2(1.0), Some(-1.0), Some(1.0)).unwrap(), ManeH { value: 1.0, upper_bound: false });
        let c = SystemConstants::constant_curvature(-2, -4.0, 2.0).unwrap();
        assert_eq!(mane_h(&c, Some(-4.0), Some(2.0)).unwrap().value, 1.0);
        let b = mane_h(&genus2(1.0), None, None).unwrap();
        assert!(b.upper_bound && (b.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn drift_bound_examples() {
        let b = drift_bound(&DriftSetup::new(1.0, 1.0, 10.0, 0.0).unwrap()).unwrap();
        assert!((b.bound_2delta - 2.0 * 0.75f64.sqrt() * 10.0 / 19.0 / 100.0).abs() < 1e-15);
        assert!((b.bound_2delta - 0.0091161).abs() < 1e-7);
        assert_eq!(b.sensitivity.len(), 2);
        let flat = drift_bound(&DriftSetup::new(1.0, 0.0, 10.0, 0.0).unwrap()).unwrap();
        assert!(flat.radii.delta.abs() < 1e-18);
        let bad = DriftSetup::new(1.0, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(drift_bound(&bad), Err(Error::DenominatorNonpositive { radius: "r2" }));
    }

    #[test]
    fn drift_vanishes_without_gradient() {
        let m = measure_drift(10.0, 1.0, 0.0, 5, 1e-11).unwrap();
        assert!(m.dx.abs() < 1e-9, "{}", m.dx);
    }

    #[test]
    fn drift_near_guiding_center() {
        let m = measure_drift(10.0, 1.0, 1.0, 50, 1e-11).unwrap();
        let gc = guiding_center_drift(1.0, 1.0, 10.0);
        assert!(((m.dx - gc) / gc).abs() < 0.1, "{} vs {gc}", m.dx);
    }
}
