//! Closed-orbit detection, Zoll certification, the short/long dichotomy and
//! the first integral of symmetric systems.

use crate::curves::{self, DiscreteLoop};
use crate::error::{Error, Result};
use crate::flow::{to_state, Flow, FlowOptions};
use crate::geometry::{MagneticSurface, Point, SurfaceKind, UnitTangentState};
use crate::io;
use crate::ode::State;
use crate::quad;
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::TAU;

pub const DEFAULT_RETURN_TOL: f64 = 1e-7;
pub const DEFAULT_PERIOD_TOL: f64 = 1e-6;
const MAX_DIVISOR: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbitOptions {
    /// Sasaki distance below which the state counts as returned.
    pub return_tol: f64,
    /// Integration tolerance.
    pub tol: f64,
    /// Points of the resampled orbit loop (even).
    pub resample: usize,
}

impl Default for OrbitOptions {
    fn default() -> Self {
        Self { return_tol: DEFAULT_RETURN_TOL, tol: 1e-10, resample: 1024 }
    }
}

/// A detected periodic orbit (prime period).
#[derive(Debug, Clone, Serialize)]
pub struct ClosedOrbit {
    #[serde(serialize_with = "ser_loop")]
    pub orbit_loop: DiscreteLoop,
    pub period: f64,
    pub length: f64,
    pub self_int: usize,
    /// Magnetic term of the action, `−λ∫ f μ_g` over the capping disk, so
    /// that `length + flux_value` is the action at its optimal period.
    /// `None` for non-contractible torus orbits.
    pub flux_value: Option<f64>,
    /// On spheres: the value for the complementary capping disk.
    pub flux_alternative: Option<f64>,
    pub start: UnitTangentState,
    /// Number of prime periods in the first detected return.
    pub multiplicity: usize,
    /// Sasaki distance between the start and the state after one period.
    pub closing_error: f64,
}

fn ser_loop<S: serde::Serializer>(lp: &DiscreteLoop, s: S) -> std::result::Result<S::Ok, S::Error> {
    lp.to_json().serialize(s)
}

/// Outcome of following one start up to the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum ReturnOutcome {
    Returned { period: f64, distance: f64 },
    Open { min_distance: f64 },
}

/// Stored samples of a forward integration, evaluable at any time in range.
struct Sampled<'a> {
    flow: Flow<'a>,
    ts: Vec<f64>,
    ys: Vec<State>,
}

impl<'a> Sampled<'a> {
    fn new(surface: &'a MagneticSurface, lambda: f64, start: &UnitTangentState, tol: f64) -> Result<Self> {
        let flow = Flow::new(surface, lambda, start, FlowOptions::with_tol(tol))?;
        let y = flow.raw();
        Ok(Self { flow, ts: vec![0.0], ys: vec![y] })
    }

    fn step(&mut self, t_stop: f64) -> Result<()> {
        self.flow.step_until(t_stop)?;
        self.ts.push(self.flow.t());
        self.ys.push(self.flow.raw());
        Ok(())
    }

    fn extend_to(&mut self, t: f64) -> Result<()> {
        while *self.ts.last().unwrap() < t {
            self.step(t)?;
        }
        Ok(())
    }

    fn state_at(&self, t: f64) -> Result<State> {
        let k = match self.ts.partition_point(|&s| s <= t) {
            0 => 0,
            k => k - 1,
        };
        self.flow.advance_from(&self.ys[k], t - self.ts[k])
    }

    fn distance_at(&self, start: &UnitTangentState, t: f64) -> Result<f64> {
        let y = self.state_at(t)?;
        self.flow.surface().sasaki_distance(start, &to_state(&y))
    }
}

/// Golden-section minimization of `f` on `[a, b]`.
fn golden_min<F: FnMut(f64) -> Result<f64>>(mut f: F, mut a: f64, mut b: f64) -> Result<(f64, f64)> {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    let floor = 1e-14 * b.abs().max(1.0);
    for _ in 0..200 {
        if b - a <= floor {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d)?;
        }
    }
    Ok(if fc < fd { (c, fc) } else { (d, fd) })
}

/// Upper bound on `|d/dt|` of the Sasaki distance to a fixed state.
fn distance_rate(surface: &MagneticSurface, lambda: f64, center: Point) -> f64 {
    2.0 + lambda.abs() * surface.probe_max_abs_f(center)
}

struct Scan<'a> {
    sampled: Sampled<'a>,
    outcome: ReturnOutcome,
}

/// Follows `start` until its state returns within `return_tol` or the
/// horizon is reached. Local minima of the sampled return distance that could
/// hide a closer approach are refined by golden-section search.
fn scan<'a>(
    surface: &'a MagneticSurface,
    lambda: f64,
    start: &UnitTangentState,
    horizon: f64,
    opts: &OrbitOptions,
) -> Result<Scan<'a>> {
    if !(horizon > 0.0) {
        return Err(Error::NonPositiveInput { what: "horizon", value: horizon });
    }
    let start = UnitTangentState::new(surface, start.q, start.v)?;
    let mut sampled = Sampled::new(surface, lambda, &start, opts.tol)?;
    let leave = (100.0 * opts.return_tol).max(1e-4);
    let rate = distance_rate(surface, lambda, start.q);
    let collar = 10.0 * opts.return_tol;
    let mut armed = false;
    let mut min_distance = f64::INFINITY;
    let mut d = vec![0.0];
    while *sampled.ts.last().unwrap() < horizon {
        sampled.step(horizon)?;
        let k = sampled.ts.len() - 1;
        let dk = surface.sasaki_distance(&start, &to_state(&sampled.ys[k]))?;
        d.push(dk);
        if !armed {
            armed = dk > leave;
            continue;
        }
        min_distance = min_distance.min(dk);
        // local minimum at k−1 with both neighbours available
        let m = k - 1;
        if m == 0 || !(d[m] <= d[m - 1] && d[m] <= d[k]) {
            continue;
        }
        let reach = (sampled.ts[k] - sampled.ts[m]).max(sampled.ts[m] - sampled.ts[m - 1]);
        if d[m] - rate * reach >= collar {
            continue;
        }
        let (tm, dm) = golden_min(|t| sampled.distance_at(&start, t), sampled.ts[m - 1], sampled.ts[k])?;
        min_distance = min_distance.min(dm);
        if dm < opts.return_tol {
            return Ok(Scan { sampled, outcome: ReturnOutcome::Returned { period: tm, distance: dm } });
        }
    }
    Ok(Scan { sampled, outcome: ReturnOutcome::Open { min_distance } })
}

/// Default horizon `200·2π/(λ·min f)` when `f > 0`; otherwise 200 times the
/// length of a great circle of the area-equivalent round sphere.
pub fn default_horizon(surface: &MagneticSurface, lambda: f64) -> f64 {
    let fmin = probe_min_f(surface);
    if fmin > 0.0 && lambda > 0.0 {
        200.0 * TAU / (lambda * fmin)
    } else {
        let scale = surface.total_area().map(|a| (a / (4.0 * std::f64::consts::PI)).sqrt()).unwrap_or(1.0);
        200.0 * TAU * scale.max(1.0)
    }
}

/// Smallest value of `f` over the probe grid used for step bounds.
pub fn probe_min_f(surface: &MagneticSurface) -> f64 {
    probe_extremes(surface).0
}

/// `(min f, max f)` over a grid of the fundamental domain (spheres: between the pole margins).
pub fn probe_extremes(surface: &MagneticSurface) -> (f64, f64) {
    if let Some(c) = surface.field().as_constant() {
        return (c, c);
    }
    const N: usize = 65;
    let (x0, x1, y0, y1) = match surface.theta_range() {
        Some(l) => (surface.pole_margin(), l - surface.pole_margin(), 0.0, TAU),
        None => (0.0, 1.0, 0.0, 1.0),
    };
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..N {
        for j in 0..N {
            let q = [x0 + (x1 - x0) * i as f64 / (N - 1) as f64, y0 + (y1 - y0) * j as f64 / (N - 1) as f64];
            let v = surface.f(q);
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    (lo, hi)
}

/// Follows `start` up to `horizon` and reports whether (and when) it returns.
pub fn return_scan(
    surface: &MagneticSurface,
    lambda: f64,
    start: &UnitTangentState,
    horizon: f64,
    opts: &OrbitOptions,
) -> Result<ReturnOutcome> {
    Ok(scan(surface, lambda, start, horizon, opts)?.outcome)
}

/// Integrates up to `horizon` and returns the first closed orbit through
/// `start` (reduced to its prime period), or `None` if it does not return.
pub fn find_closed_orbit(
    surface: &MagneticSurface,
    lambda: f64,
    start: &UnitTangentState,
    horizon: f64,
    opts: &OrbitOptions,
) -> Result<Option<ClosedOrbit>> {
    let mut sc = scan(surface, lambda, start, horizon, opts)?;
    match sc.outcome {
        ReturnOutcome::Open { .. } => Ok(None),
        ReturnOutcome::Returned { period, .. } => Ok(Some(build_orbit(surface, lambda, &mut sc.sampled, period, opts)?)),
    }
}

/// Prime period, multiplicity of the first return and the closing distance.
fn prime_period(sampled: &mut Sampled<'_>, first_return: f64, opts: &OrbitOptions) -> Result<(f64, usize, f64)> {
    let start = to_state(&sampled.ys[0]);
    let rate = distance_rate(sampled.flow.surface(), sampled.flow.lambda(), start.q);
    for k in (2..=MAX_DIVISOR).rev() {
        let tk = first_return / k as f64;
        let w = 1e-3 * tk;
        if sampled.distance_at(&start, tk)? - rate * w >= opts.return_tol {
            continue;
        }
        let (t, d) = golden_min(|t| sampled.distance_at(&start, t), tk - w, tk + w)?;
        if d < opts.return_tol {
            return Ok((t, k, d));
        }
    }
    Ok((first_return, 1, sampled.distance_at(&start, first_return)?))
}

fn build_orbit(
    surface: &MagneticSurface,
    lambda: f64,
    sampled: &mut Sampled<'_>,
    first_return: f64,
    opts: &OrbitOptions,
) -> Result<ClosedOrbit> {
    let start = to_state(&sampled.ys[0]);
    let (period, multiplicity, closing_error) = prime_period(sampled, first_return, opts)?;
    sampled.extend_to(period)?;

    let n = opts.resample.max(2 * curves::MIN_POINTS) & !1;
    let mut pts = Vec::with_capacity(n);
    let mut speed_sum = 0.0;
    for j in 0..n {
        let y = sampled.state_at(period * j as f64 / n as f64)?;
        pts.push([y[0], y[1]]);
        speed_sum += surface.norm([y[0], y[1]], [y[2], y[3]])?;
    }
    // arc length ∫|v|_g dt by the periodic trapezoid rule; chart chords lose
    // accuracy where the chart degenerates (near the poles)
    let length = period * speed_sum / n as f64;
    let end = sampled.state_at(period)?;
    let winding = surface.nearest_deck([end[0] - pts[0][0], end[1] - pts[0][1]]);
    let lp = DiscreteLoop::with_winding(surface, pts.clone(), period, winding)?;
    let half = DiscreteLoop::with_winding(surface, pts.iter().step_by(2).copied().collect(), period, winding)?;

    let richardson = |fine: f64, coarse: f64| (4.0 * fine - coarse) / 3.0;
    let contractible = !surface.is_torus() || winding == [0, 0];
    let (flux_value, flux_alternative) = if contractible {
        let fine = curves::flux_report(&lp, surface, lambda, curves::Sweep::X)?;
        let coarse = curves::flux_report(&half, surface, lambda, curves::Sweep::X)?;
        let alt = match (fine.alternative, coarse.alternative) {
            (Some(a), Some(b)) => Some(-richardson(a, b)),
            _ => None,
        };
        (Some(-richardson(fine.value, coarse.value)), alt)
    } else {
        (None, None)
    };
    let self_int = curves::self_intersections(&lp, surface)?;
    Ok(ClosedOrbit {
        orbit_loop: lp,
        period,
        length,
        self_int,
        flux_value,
        flux_alternative,
        start,
        multiplicity,
        closing_error,
    })
}

// ---------------------------------------------------------------------------
// Zoll check

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZollOptions {
    /// Base points per axis.
    pub n_base: usize,
    pub n_dir: usize,
    /// `None` selects [`default_horizon`].
    pub horizon: Option<f64>,
    pub orbit: OrbitOptions,
    /// Tolerance on the spread of prime periods.
    pub period_tol: f64,
    /// Stop scanning once a clean non-closing witness is found.
    pub stop_on_witness: bool,
    /// Also build the full [`ClosedOrbit`] of every closing sample.
    pub build_orbits: bool,
}

impl Default for ZollOptions {
    fn default() -> Self {
        Self {
            n_base: 12,
            n_dir: 8,
            horizon: None,
            orbit: OrbitOptions::default(),
            period_tol: DEFAULT_PERIOD_TOL,
            stop_on_witness: false,
            build_orbits: false,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SampleResult {
    pub index: usize,
    pub start: UnitTangentState,
    pub dir_angle: f64,
    /// Prime period when the sample closed.
    pub period: Option<f64>,
    pub multiplicity: usize,
    /// Smallest return distance after leaving the start (open samples), or the
    /// closing distance.
    pub distance: f64,
    pub class: SampleClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleClass {
    Closed,
    Open,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize)]
pub struct ZollReport {
    pub is_zoll: bool,
    pub sample_count: usize,
    pub common_period: Option<f64>,
    pub period_spread: f64,
    pub witness: Option<UnitTangentState>,
    pub witness_index: Option<usize>,
    /// Smallest return distance of the witness over the horizon.
    pub witness_distance: Option<f64>,
    pub horizon: f64,
    pub samples: Vec<SampleResult>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub orbits: Vec<ClosedOrbit>,
}

impl ZollReport {
    /// Orbit table with header `start_x,start_y,dir_angle,period,length,self_int,class`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("start_x,start_y,dir_angle,period,length,self_int,class\n");
        for s in &self.samples {
            let orbit = self.orbits.iter().find(|o| o.start.q == s.start.q && o.start.v == s.start.v);
            let num = |v: Option<f64>| v.map(io::fmt_f64).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                io::fmt_f64(s.start.q[0]),
                io::fmt_f64(s.start.q[1]),
                io::fmt_f64(s.dir_angle),
                num(s.period),
                num(orbit.map(|o| o.length)),
                orbit.map(|o| o.self_int.to_string()).unwrap_or_default(),
                match s.class {
                    SampleClass::Closed => "closed",
                    SampleClass::Open => "open",
                    SampleClass::Inconclusive => "inconclusive",
                }
            ));
        }
        out
    }
}

/// The sample grid of the unit tangent bundle: base points times directions.
///
/// Torus: cell centres of an `n_base × n_base` grid. Spheres: colatitudes in
/// the middle band `[L/4, 3L/4]` times longitudes. Plane: a grid of the unit
/// square. Directions are `2π(j + ½)/n_dir` from `∂_x` in the oriented frame.
pub fn sample_grid(surface: &MagneticSurface, n_base: usize, n_dir: usize) -> Result<Vec<(UnitTangentState, f64)>> {
    if n_base == 0 || n_dir == 0 {
        return Err(Error::InvalidInput("the sample grid is empty".into()));
    }
    let nb = n_base as f64;
    let mut bases = Vec::with_capacity(n_base * n_base);
    for i in 0..n_base {
        for j in 0..n_base {
            let (u, w) = ((i as f64 + 0.5) / nb, (j as f64 + 0.5) / nb);
            bases.push(match surface.theta_range() {
                Some(l) => [l * (0.25 + 0.5 * u), TAU * w],
                None => [u, w],
            });
        }
    }
    let mut out = Vec::with_capacity(bases.len() * n_dir);
    for q in bases {
        for j in 0..n_dir {
            let angle = TAU * (j as f64 + 0.5) / n_dir as f64;
            out.push((UnitTangentState::from_angle(surface, q, angle)?, angle));
        }
    }
    Ok(out)
}

struct Evaluated {
    result: SampleResult,
    orbit: Option<ClosedOrbit>,
}

fn evaluate_sample(
    surface: &MagneticSurface,
    lambda: f64,
    index: usize,
    start: UnitTangentState,
    angle: f64,
    horizon: f64,
    opts: &ZollOptions,
) -> Result<Evaluated> {
    let mut sc = scan(surface, lambda, &start, horizon, &opts.orbit)?;
    let collar = 10.0 * opts.orbit.return_tol;
    match sc.outcome {
        ReturnOutcome::Returned { period, distance } => {
            let (orbit, prime, multiplicity) = if opts.build_orbits {
                let o = build_orbit(surface, lambda, &mut sc.sampled, period, &opts.orbit)?;
                let (p, m) = (o.period, o.multiplicity);
                (Some(o), p, m)
            } else {
                let (p, m, _) = prime_period(&mut sc.sampled, period, &opts.orbit)?;
                (None, p, m)
            };
            let result = SampleResult {
                index,
                start,
                dir_angle: angle,
                period: Some(prime),
                multiplicity,
                distance,
                class: SampleClass::Closed,
            };
            Ok(Evaluated { result, orbit })
        }
        ReturnOutcome::Open { min_distance } => {
            let class = if min_distance >= collar { SampleClass::Open } else { SampleClass::Inconclusive };
            let result =
                SampleResult { index, start, dir_angle: angle, period: None, multiplicity: 0, distance: min_distance, class };
            Ok(Evaluated { result, orbit: None })
        }
    }
}

/// Certifies or refutes the Zoll property on a sample grid.
///
/// Not Zoll if some sample stays at return distance `≥ 10·return_tol` over
/// the whole horizon, or if the prime periods of the closing samples
/// disagree. Samples that neither close nor stay clearly away make the run
/// inconclusive.
pub fn zoll_check(surface: &MagneticSurface, lambda: f64, opts: &ZollOptions) -> Result<ZollReport> {
    let grid = sample_grid(surface, opts.n_base, opts.n_dir)?;
    let horizon = opts.horizon.unwrap_or_else(|| default_horizon(surface, lambda));
    if !(horizon > 0.0) {
        return Err(Error::NonPositiveInput { what: "horizon", value: horizon });
    }
    // Fixed chunking keeps the early stop independent of the worker count.
    const CHUNK: usize = 32;
    let mut evaluated: Vec<Evaluated> = Vec::with_capacity(grid.len());
    for (c, chunk) in grid.chunks(CHUNK).enumerate() {
        let part: Vec<Result<Evaluated>> = chunk
            .par_iter()
            .enumerate()
            .map(|(k, (s, a))| evaluate_sample(surface, lambda, c * CHUNK + k, *s, *a, horizon, opts))
            .collect();
        for r in part {
            evaluated.push(r?);
        }
        if opts.stop_on_witness && evaluated.iter().any(|e| e.result.class == SampleClass::Open) {
            break;
        }
    }
    let samples: Vec<SampleResult> = evaluated.iter().map(|e| e.result.clone()).collect();
    let orbits: Vec<ClosedOrbit> = evaluated.into_iter().filter_map(|e| e.orbit).collect();

    let base = ZollReport {
        is_zoll: false,
        sample_count: samples.len(),
        common_period: None,
        period_spread: f64::NAN,
        witness: None,
        witness_index: None,
        witness_distance: None,
        horizon,
        samples: Vec::new(),
        orbits,
    };
    if let Some(w) = samples.iter().find(|s| s.class == SampleClass::Open) {
        let (idx, st, dist) = (w.index, w.start, w.distance);
        return Ok(ZollReport {
            witness: Some(st),
            witness_index: Some(idx),
            witness_distance: Some(dist),
            samples,
            ..base
        });
    }
    if let Some(s) = samples.iter().find(|s| s.class == SampleClass::Inconclusive) {
        return Err(Error::Inconclusive { index: s.index, min_distance: s.distance });
    }
    let periods: Vec<f64> = samples.iter().map(|s| s.period.unwrap()).collect();
    let lo = periods.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = periods.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let spread = hi - lo;
    if spread <= opts.period_tol {
        let mean = periods.iter().sum::<f64>() / periods.len() as f64;
        Ok(ZollReport { is_zoll: true, common_period: Some(mean), period_spread: spread, samples, ..base })
    } else {
        let first = periods[0];
        let w = samples
            .iter()
            .max_by(|a, b| (a.period.unwrap() - first).abs().total_cmp(&(b.period.unwrap() - first).abs()))
            .unwrap();
        let (idx, st) = (w.index, w.start);
        Ok(ZollReport { witness: Some(st), witness_index: Some(idx), period_spread: spread, samples, ..base })
    }
}

// ---------------------------------------------------------------------------
// dichotomy

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OrbitClass {
    Short,
    Long,
    Violation,
}

/// The short window `((2π−ε)/(λ f_max), (2π+ε)/(λ f_min))` and the long
/// threshold `1/(λε)`; errors if they overlap.
pub fn dichotomy_window(lambda: f64, f_min: f64, f_max: f64, epsilon: f64) -> Result<((f64, f64), f64)> {
    for (what, v) in [("lambda", lambda), ("f_min", f_min), ("f_max", f_max), ("epsilon", epsilon)] {
        if !(v > 0.0) {
            return Err(Error::NonPositiveInput { what, value: v });
        }
    }
    let window = ((TAU - epsilon) / (lambda * f_max), (TAU + epsilon) / (lambda * f_min));
    let threshold = 1.0 / (lambda * epsilon);
    if window.1 >= threshold {
        return Err(Error::WindowOverlap { epsilon });
    }
    Ok((window, threshold))
}

/// Classifies a prime closed orbit of length `length` with `self_int`
/// self-intersections as short, long or neither.
pub fn classify(length: f64, self_int: usize, lambda: f64, f_min: f64, f_max: f64, epsilon: f64, n: usize) -> Result<OrbitClass> {
    let ((lo, hi), threshold) = dichotomy_window(lambda, f_min, f_max, epsilon)?;
    Ok(if self_int == 0 && length > lo && length < hi {
        OrbitClass::Short
    } else if self_int >= n && length > threshold {
        OrbitClass::Long
    } else {
        OrbitClass::Violation
    })
}

pub fn classify_dichotomy(
    orbit: &ClosedOrbit,
    lambda: f64,
    f_min: f64,
    f_max: f64,
    epsilon: f64,
    n: usize,
) -> Result<OrbitClass> {
    classify(orbit.length, orbit.self_int, lambda, f_min, f_max, epsilon, n)
}

// ---------------------------------------------------------------------------
// first integral

/// Which symmetry a magnetic function has.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Symmetry {
    /// `f` independent of the second coordinate (`φ`, or `y` on the torus).
    AlongY,
    /// Torus: `f` independent of `x`.
    AlongX,
}

fn detect_symmetry(surface: &MagneticSurface) -> Result<Symmetry> {
    const N: usize = 24;
    let (x0, x1, period_y) = match surface.kind() {
        SurfaceKind::FlatTorus { .. } => (0.0, 1.0, 1.0),
        SurfaceKind::RoundSphere { .. } | SurfaceKind::SphereOfRevolution { .. } => {
            let l = surface.theta_range().unwrap();
            (surface.pole_margin(), l - surface.pole_margin(), TAU)
        }
        SurfaceKind::Plane => return Err(Error::InvalidInput("first_integral needs a torus or a sphere of revolution".into())),
    };
    let mut dev_y: f64 = 0.0;
    let mut dev_x: f64 = 0.0;
    for i in 0..N {
        for j in 0..N {
            let u = x0 + (x1 - x0) * (i as f64 + 0.37) / N as f64;
            let w = period_y * (j as f64 + 0.61) / N as f64;
            dev_y = dev_y.max((surface.f([u, w]) - surface.f([u, 0.0])).abs());
            if surface.is_torus() {
                let (a, b) = (w / period_y, u);
                dev_x = dev_x.max((surface.f([b, a]) - surface.f([0.0, a])).abs());
            }
        }
    }
    if dev_y <= 1e-10 {
        Ok(Symmetry::AlongY)
    } else if surface.is_torus() && dev_x <= 1e-10 {
        Ok(Symmetry::AlongX)
    } else {
        Err(Error::NotRotationallySymmetric { deviation: if surface.is_torus() { dev_y.min(dev_x) } else { dev_y } })
    }
}

/// Conserved momentum of a symmetric system.
///
/// Spheres of revolution with `f = f(θ)`: `I = a(θ)² φ̇ − o·λ·∫₀^θ f a ds`,
/// where `o` is the orientation sign. Torus with `f = f(x)`:
/// `I = (G v)_y − o·λ·√det G·∫₀^x f`; with `f = f(y)`:
/// `I = (G v)_x + o·λ·√det G·∫₀^y f`.
pub fn first_integral(surface: &MagneticSurface, lambda: f64, state: &UnitTangentState) -> Result<f64> {
    let sym = detect_symmetry(surface)?;
    let o = surface.orientation();
    let [x, y] = state.q;
    let tol = 1e-14;
    match surface.kind() {
        SurfaceKind::RoundSphere { .. } | SurfaceKind::SphereOfRevolution { .. } => {
            let (a, _, _) = surface.warp(x)?;
            let c = surface.field().as_constant();
            let potential = match (c, surface.kind()) {
                (Some(c), SurfaceKind::RoundSphere { radius }) => c * radius * radius * (1.0 - (x / radius).cos()),
                _ => quad::integrate(|s| surface.f([s, 0.0]) * surface.warp(s).map(|w| w.0).unwrap_or(0.0), 0.0, x, tol),
            };
            Ok(a * a * state.v[1] - o * lambda * potential)
        }
        _ => {
            let g = surface.metric(state.q)?;
            let sq = crate::geometry::det(g).sqrt();
            let gv = [g[0][0] * state.v[0] + g[0][1] * state.v[1], g[1][0] * state.v[0] + g[1][1] * state.v[1]];
            let prim = |upper: f64, along_x: bool| match surface.field().as_constant() {
                Some(c) => c * upper,
                None => quad::integrate(|s| if along_x { surface.f([s, 0.0]) } else { surface.f([0.0, s]) }, 0.0, upper, tol),
            };
            Ok(match sym {
                Symmetry::AlongY => gv[1] - o * lambda * sq * prim(x, true),
                Symmetry::AlongX => gv[0] + o * lambda * sq * prim(y, false),
            })
        }
    }
}

// ---------------------------------------------------------------------------
// reversal separation

/// Smallest Sasaki distance between the reversed start `(q, −v)` and the
/// orbit state over one period.
pub fn reversal_separation(surface: &MagneticSurface, lambda: f64, orbit: &ClosedOrbit, tol: f64) -> Result<f64> {
    let start = orbit.start;
    let target = start.reversed();
    let mut sampled = Sampled::new(surface, lambda, &start, tol)?;
    sampled.extend_to(orbit.period)?;
    let d: Vec<f64> = sampled
        .ys
        .iter()
        .map(|y| surface.sasaki_distance(&target, &to_state(y)))
        .collect::<Result<_>>()?;
    let mut best = d.iter().copied().fold(f64::INFINITY, f64::min);
    for m in 1..d.len().saturating_sub(1) {
        if d[m] <= d[m - 1] && d[m] <= d[m + 1] {
            let (_, v) = golden_min(|t| sampled.distance_at(&target, t), sampled.ts[m - 1], sampled.ts[m + 1])?;
            best = best.min(v);
        }
    }
    Ok(best)
}
