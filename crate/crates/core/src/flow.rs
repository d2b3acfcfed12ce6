//! Integration of the magnetic geodesic equation `∇_γ̇ γ̇ = λ f(γ) J γ̇`.
//!
//! The state `(q, v)` is propagated in chart coordinates with the chart ODE
//! `q̈^k + Γ^k_ij q̇^i q̇^j = λ f(q) (J q̇)^k`. After every accepted step the
//! velocity is projected back to unit length.

use crate::error::{Error, Result};
use crate::geometry::{rotate_with, MagneticSurface, Point, SurfaceKind, UnitTangentState};
use crate::io;
use crate::ode::{self, State};
use rayon::prelude::*;
use serde::Serialize;

pub const DEFAULT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sample {
    pub t: f64,
    pub state: UnitTangentState,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepStats {
    pub max_step: f64,
    pub min_step: f64,
    /// Largest `| |v|_g − 1 |` seen before renormalization.
    pub max_speed_deviation: f64,
    pub accepted: usize,
    pub rejected: usize,
}

impl Default for StepStats {
    fn default() -> Self {
        Self { max_step: 0.0, min_step: f64::INFINITY, max_speed_deviation: 0.0, accepted: 0, rejected: 0 }
    }
}

impl StepStats {
    fn merge(&mut self, other: &StepStats) {
        self.max_step = self.max_step.max(other.max_step);
        self.min_step = self.min_step.min(other.min_step);
        self.max_speed_deviation = self.max_speed_deviation.max(other.max_speed_deviation);
        self.accepted += other.accepted;
        self.rejected += other.rejected;
    }
}

/// A time-sampled solution, one sample per accepted step.
#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub lambda: f64,
    pub step_stats: StepStats,
}

impl Trajectory {
    pub fn points(&self) -> Vec<Point> {
        self.samples.iter().map(|s| s.state.q).collect()
    }

    pub fn first(&self) -> &Sample {
        &self.samples[0]
    }

    pub fn last(&self) -> &Sample {
        self.samples.last().expect("trajectory has samples")
    }

    /// CSV with header `t,x,y,vx,vy` in covering-space chart coordinates.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,x,y,vx,vy\n");
        for s in &self.samples {
            let [x, y] = s.state.q;
            let [vx, vy] = s.state.v;
            out.push_str(&io::csv_row(&[s.t, x, y, vx, vy]));
        }
        out
    }

    /// SVG rendering of the base curve (reduced to the fundamental domain on the torus).
    pub fn to_svg(&self, surface: &MagneticSurface) -> String {
        io::svg_curves(&[io::reduced_path(surface, &self.points())], surface)
    }
}

/// Integration settings; `max_step = None` picks `0.1·min(1, 1/(λ max|f|))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowOptions {
    pub tol: f64,
    pub max_step: Option<f64>,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, max_step: None }
    }
}

impl FlowOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, max_step: None }
    }
}

/// Default step bound `0.1·min(1, 1/(λ·max|f|))` with `max|f|` over the probe grid.
pub fn max_step_bound(surface: &MagneticSurface, lambda: f64, center: Point) -> f64 {
    let m = lambda.abs() * surface.probe_max_abs_f(center);
    if m > 1.0 {
        0.1 / m
    } else {
        0.1
    }
}

/// Acceleration `−Γ(v, v) + λ f J v` at `(q, v)`.
#[inline]
pub(crate) fn acceleration(surface: &MagneticSurface, lambda: f64, q: Point, v: Point) -> Result<Point> {
    let lf = lambda * surface.f(q);
    let o = surface.orientation();
    match surface.kind() {
        SurfaceKind::FlatTorus { .. } | SurfaceKind::Plane => {
            let g = surface.metric(q)?;
            let jv = rotate_with(&g, o, v);
            Ok([lf * jv[0], lf * jv[1]])
        }
        SurfaceKind::RoundSphere { .. } | SurfaceKind::SphereOfRevolution { .. } => {
            let (a, da, _) = surface.warp(q[0])?;
            let jv = [-o * a * v[1], o * v[0] / a];
            Ok([
                a * da * v[1] * v[1] + lf * jv[0],
                -2.0 * (da / a) * v[0] * v[1] + lf * jv[1],
            ])
        }
    }
}

fn rhs<'a>(surface: &'a MagneticSurface, lambda: f64) -> impl Fn(&State) -> Result<State> + 'a {
    move |y: &State| {
        let acc = acceleration(surface, lambda, [y[0], y[1]], [y[2], y[3]])?;
        Ok([y[2], y[3], acc[0], acc[1]])
    }
}

/// Projects the velocity of `y` to unit length; returns the deviation removed.
fn normalize(surface: &MagneticSurface, y: &mut State) -> Result<f64> {
    let n = surface.norm([y[0], y[1]], [y[2], y[3]])?;
    y[2] /= n;
    y[3] /= n;
    Ok((n - 1.0).abs())
}

fn pole_escape(t: f64, y: &State) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::PoleEvaluation { .. } => Error::PoleEscape { t, q: [y[0], y[1]] },
        other => other,
    }
}

/// Forward adaptive integrator that can be stepped one accepted step at a time.
pub struct Flow<'a> {
    surface: &'a MagneticSurface,
    lambda: f64,
    tol: f64,
    h: f64,
    h_max: f64,
    t: f64,
    y: State,
    stats: StepStats,
}

impl<'a> Flow<'a> {
    /// Starts at `start` at time 0. `lambda` may be negative (time-reversed use).
    pub fn new(surface: &'a MagneticSurface, lambda: f64, start: &UnitTangentState, opts: FlowOptions) -> Result<Self> {
        if !(opts.tol > 0.0) {
            return Err(Error::NonPositiveInput { what: "tol", value: opts.tol });
        }
        if !surface.in_dynamics_domain(start.q) {
            return Err(Error::PoleEscape { t: 0.0, q: start.q });
        }
        let h_max = opts.max_step.unwrap_or_else(|| max_step_bound(surface, lambda, start.q));
        if !(h_max > 0.0) {
            return Err(Error::NonPositiveInput { what: "max_step", value: h_max });
        }
        let mut y = [start.q[0], start.q[1], start.v[0], start.v[1]];
        normalize(surface, &mut y)?;
        Ok(Self { surface, lambda, tol: opts.tol, h: 0.1 * h_max, h_max, t: 0.0, y, stats: StepStats::default() })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn raw(&self) -> State {
        self.y
    }

    pub fn state(&self) -> UnitTangentState {
        to_state(&self.y)
    }

    pub fn stats(&self) -> StepStats {
        self.stats
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn max_step(&self) -> f64 {
        self.h_max
    }

    pub fn surface(&self) -> &MagneticSurface {
        self.surface
    }

    /// Takes one accepted step, never passing `t_stop`.
    pub fn step_until(&mut self, t_stop: f64) -> Result<()> {
        let f = rhs(self.surface, self.lambda);
        loop {
            let remaining = t_stop - self.t;
            let capped = self.h >= remaining;
            let h = if capped { remaining } else { self.h };
            if !(h > 0.0) {
                return Ok(());
            }
            let (mut y5, err) = ode::dopri_step(&f, &self.y, h).map_err(pole_escape(self.t, &self.y))?;
            let scaled = err / self.tol;
            if scaled <= 1.0 {
                let dev = normalize(self.surface, &mut y5).map_err(pole_escape(self.t + h, &y5))?;
                self.t = if capped { t_stop } else { self.t + h };
                self.y = y5;
                let s = &mut self.stats;
                s.accepted += 1;
                s.max_step = s.max_step.max(h);
                if !capped {
                    s.min_step = s.min_step.min(h);
                }
                s.max_speed_deviation = s.max_speed_deviation.max(dev);
                let grown = (h * ode::step_factor(scaled)).min(self.h_max);
                self.h = if capped { self.h.max(grown) } else { grown };
                if !self.surface.in_dynamics_domain([y5[0], y5[1]]) || y5.iter().any(|v| !v.is_finite()) {
                    return Err(Error::PoleEscape { t: self.t, q: [y5[0], y5[1]] });
                }
                return Ok(());
            }
            self.stats.rejected += 1;
            self.h = h * if scaled.is_finite() { ode::step_factor(scaled) } else { 0.2 };
            if self.h < 1e-14 * self.t.abs().max(1.0) {
                return Err(Error::StepUnderflow { t: self.t, q: [self.y[0], self.y[1]], h: self.h });
            }
        }
    }

    pub fn step(&mut self) -> Result<()> {
        self.step_until(f64::INFINITY)
    }

    /// A single unadapted step of size `h` from `y` (normalized). Used to
    /// evaluate the solution between accepted samples; `h` should not exceed
    /// the accepted step that followed `y`.
    pub fn advance_from(&self, y: &State, h: f64) -> Result<State> {
        if h == 0.0 {
            return Ok(*y);
        }
        let f = rhs(self.surface, self.lambda);
        let (mut out, _) = ode::dopri_step(&f, y, h).map_err(pole_escape(h, y))?;
        normalize(self.surface, &mut out)?;
        Ok(out)
    }
}

pub(crate) fn to_state(y: &State) -> UnitTangentState {
    UnitTangentState { q: [y[0], y[1]], v: [y[2], y[3]] }
}

fn run_forward(
    surface: &MagneticSurface,
    lambda: f64,
    start: &UnitTangentState,
    t_from: f64,
    t_to: f64,
    opts: FlowOptions,
) -> Result<(Vec<Sample>, StepStats)> {
    let mut flow = Flow::new(surface, lambda, start, opts)?;
    while flow.t() < t_from {
        flow.step_until(t_from)?;
    }
    let mut samples = vec![Sample { t: flow.t(), state: flow.state() }];
    while flow.t() < t_to {
        flow.step_until(t_to)?;
        samples.push(Sample { t: flow.t(), state: flow.state() });
    }
    Ok((samples, flow.stats()))
}

/// Integrates the flow of `(g, λf)` through `start` (the state at `t = 0`)
/// over `t_span`. Negative times are handled by integrating the reversed
/// state with `−λ`.
pub fn integrate(
    surface: &MagneticSurface,
    lambda: f64,
    start: &UnitTangentState,
    t_span: (f64, f64),
    tol: f64,
) -> Result<Trajectory> {
    integrate_with(surface, lambda, start, t_span, FlowOptions::with_tol(tol))
}

pub fn integrate_with(
    surface: &MagneticSurface,
    lambda: f64,
    start: &UnitTangentState,
    t_span: (f64, f64),
    opts: FlowOptions,
) -> Result<Trajectory> {
    let (t0, t1) = t_span;
    if !(t0 < t1) || !t0.is_finite() || !t1.is_finite() {
        return Err(Error::InvalidInput(format!("t_span must satisfy t0 < t1 (got {t0}, {t1})")));
    }
    let mut samples = Vec::new();
    let mut stats = StepStats::default();
    if t0 < 0.0 {
        let rev = start.reversed();
        let (back, st) = run_forward(surface, -lambda, &rev, (-t1).max(0.0), -t0, opts)?;
        stats.merge(&st);
        samples.extend(back.into_iter().rev().map(|s| Sample { t: -s.t, state: s.state.reversed() }));
    }
    if t1 > 0.0 {
        let (fwd, st) = run_forward(surface, lambda, start, t0.max(0.0), t1, opts)?;
        stats.merge(&st);
        let skip = usize::from(!samples.is_empty());
        samples.extend(fwd.into_iter().skip(skip));
    }
    Ok(Trajectory { samples, lambda, step_stats: stats })
}

/// Chart region used by [`localization_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Region {
    /// Geodesic ball on the quotient surface.
    Disk { center: Point, radius: f64 },
    /// Coordinate rectangle of the covering chart.
    Rect { min: Point, max: Point },
}

impl Region {
    pub fn contains(&self, surface: &MagneticSurface, q: Point) -> Result<bool> {
        match *self {
            Region::Disk { center, radius } => Ok(surface.base_distance(center, q)? < radius),
            Region::Rect { min, max } => Ok(q[0] > min[0] && q[0] < max[0] && q[1] > min[1] && q[1] < max[1]),
        }
    }

    fn sample_points(&self, surface: &MagneticSurface, n: usize) -> Result<Vec<Point>> {
        let n = n.max(1);
        let mut pts = Vec::new();
        match *self {
            Region::Disk { center, radius } => {
                let (e1, e2) = surface.frame(center)?;
                pts.push(center);
                for i in 1..n {
                    let rho = radius * i as f64 / n as f64;
                    let m = 6 * i;
                    for j in 0..m {
                        let a = std::f64::consts::TAU * j as f64 / m as f64;
                        let (c, s) = (rho * a.cos(), rho * a.sin());
                        pts.push([center[0] + c * e1[0] + s * e2[0], center[1] + c * e1[1] + s * e2[1]]);
                    }
                }
            }
            Region::Rect { min, max } => {
                for i in 0..n {
                    for j in 0..n {
                        let x = min[0] + (max[0] - min[0]) * (i as f64 + 0.5) / n as f64;
                        let y = min[1] + (max[1] - min[1]) * (j as f64 + 0.5) / n as f64;
                        pts.push([x, y]);
                    }
                }
            }
        }
        let mut kept = Vec::with_capacity(pts.len());
        for p in pts {
            if surface.in_dynamics_domain(p) && self.contains(surface, p)? {
                kept.push(p);
            }
        }
        Ok(kept)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizationOptions {
    /// Radial (disk) or per-axis (rectangle) sample count in `K`.
    pub n_base: usize,
    pub n_dir: usize,
    pub tol: f64,
}

impl Default for LocalizationOptions {
    fn default() -> Self {
        Self { n_base: 4, n_dir: 8, tol: 1e-9 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LocalizationWitness {
    pub index: usize,
    pub start: UnitTangentState,
    pub escape_time: f64,
    pub escape_point: Point,
}

#[derive(Debug, Clone, Serialize)]
pub struct LocalizationReport {
    pub holds: bool,
    pub sample_count: usize,
    pub witness: Option<LocalizationWitness>,
}

fn escape_time(
    surface: &MagneticSurface,
    lambda: f64,
    start: &UnitTangentState,
    u: &Region,
    horizon: f64,
    tol: f64,
) -> Result<Option<(f64, Point)>> {
    for (sign, st) in [(1.0, *start), (-1.0, start.reversed())] {
        let mut flow = Flow::new(surface, sign * lambda, &st, FlowOptions::with_tol(tol))?;
        while flow.t() < horizon {
            flow.step_until(horizon)?;
            let q = flow.state().q;
            if !u.contains(surface, q)? {
                return Ok(Some((sign * flow.t(), q)));
            }
        }
    }
    Ok(None)
}

/// Checks empirically whether every trajectory starting in `K` stays in `U`
/// over `[−T, T]`. Starts are a grid in `K` times `n_dir` directions.
pub fn localization_check(
    surface: &MagneticSurface,
    lambda: f64,
    k: &Region,
    u: &Region,
    horizon: f64,
    opts: LocalizationOptions,
) -> Result<LocalizationReport> {
    if !(horizon > 0.0) {
        return Err(Error::NonPositiveInput { what: "T", value: horizon });
    }
    let mut starts = Vec::new();
    for p in k.sample_points(surface, opts.n_base)? {
        if !u.contains(surface, p)? {
            return Err(Error::InvalidInput(format!("K is not contained in U (point {p:?})")));
        }
        for j in 0..opts.n_dir.max(1) {
            let angle = std::f64::consts::TAU * (j as f64 + 0.5) / opts.n_dir.max(1) as f64;
            starts.push(UnitTangentState::from_angle(surface, p, angle)?);
        }
    }
    let results: Vec<Result<Option<(f64, Point)>>> = starts
        .par_iter()
        .map(|s| escape_time(surface, lambda, s, u, horizon, opts.tol))
        .collect();
    let mut witness = None;
    for (index, r) in results.into_iter().enumerate() {
        if let Some((t, q)) = r? {
            witness = Some(LocalizationWitness { index, start: starts[index], escape_time: t, escape_point: q });
            break;
        }
    }
    Ok(LocalizationReport { holds: witness.is_none(), sample_count: starts.len(), witness })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ScalarField;
    use std::f64::consts::PI;

    #[test]
    fn unit_circle_on_torus_closes() {
        let s = MagneticSurface::unit_torus(ScalarField::constant(1.0));
        let start = UnitTangentState::new(&s, [0.0, 0.0], [1.0, 0.0]).unwrap();
        let tr = integrate(&s, 1.0, &start, (0.0, 2.0 * PI), 1e-10).unwrap();
        let end = tr.last().state;
        assert!((end.q[0]).abs() < 1e-8 && end.q[1].abs() < 1e-8, "{:?}", end.q);
        // the circle of radius 1 is centred at (0, 1): turning left
        for smp in &tr.samples {
            let [x, y] = smp.state.q;
            assert!((x.hypot(y - 1.0) - 1.0).abs() < 1e-8);
        }
        assert!(tr.step_stats.max_speed_deviation < 1e-8);
    }

    #[test]
    fn geodesics_are_straight_lines() {
        let s = MagneticSurface::unit_torus(ScalarField::constant(0.0));
        let start = UnitTangentState::new(&s, [0.1, 0.2], [0.6, 0.8]).unwrap();
        let tr = integrate(&s, 1.0, &start, (0.0, 3.0), 1e-10).unwrap();
        for smp in &tr.samples {
            assert!((smp.state.q[0] - 0.1 - 0.6 * smp.t).abs() < 1e-12);
            assert!((smp.state.q[1] - 0.2 - 0.8 * smp.t).abs() < 1e-12);
        }
    }

    #[test]
    fn negative_times_run_backward() {
        let s = MagneticSurface::unit_torus(ScalarField::constant(1.0));
        let start = UnitTangentState::new(&s, [0.0, 0.0], [1.0, 0.0]).unwrap();
        let tr = integrate(&s, 1.0, &start, (-PI / 2.0, PI / 2.0), 1e-11).unwrap();
        assert!((tr.first().t + PI / 2.0).abs() < 1e-15);
        // t = −π/2 on the circle centred at (0,1): point (−1, 1), velocity (0, −1)
        let q = tr.first().state.q;
        assert!((q[0] + 1.0).abs() < 1e-8 && (q[1] - 1.0).abs() < 1e-8, "{q:?}");
        assert!((tr.first().state.v[1] + 1.0).abs() < 1e-8);
        assert!(tr.samples.windows(2).all(|w| w[1].t > w[0].t));
    }

    #[test]
    fn pole_escape_is_reported() {
        let s = MagneticSurface::round_sphere(1.0, ScalarField::constant(0.0)).unwrap();
        let start = UnitTangentState::new(&s, [1.0, 0.0], [-1.0, 0.0]).unwrap();
        let err = integrate(&s, 0.0, &start, (0.0, 2.0), 1e-10).unwrap_err();
        assert!(matches!(err, Error::PoleEscape { .. }), "{err:?}");
    }

    #[test]
    fn csv_has_header_and_full_precision() {
        let s = MagneticSurface::unit_torus(ScalarField::constant(1.0));
        let start = UnitTangentState::new(&s, [0.0, 0.0], [1.0, 0.0]).unwrap();
        let tr = integrate(&s, 1.0, &start, (0.0, 0.5), 1e-10).unwrap();
        let csv = tr.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("t,x,y,vx,vy"));
        let row: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(row, vec![0.0, 0.0, 0.0, 1.0, 0.0]);
    }
}
