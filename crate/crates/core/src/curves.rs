//! Closed polylines on a surface: length, self-intersections counted with
//! multiplicity, flux through a capping disk, and the torus homotopy class.
//!
//! Loops are stored as lifts to the covering chart. The closing segment runs
//! from the last point to `points[0] + shift`, where `shift` is a deck
//! translation (the winding vector on the torus, a multiple of `2π` in `φ`
//! on spheres).

use crate::error::{Error, Result};
use crate::geometry::{quad_form, MagneticSurface, Point, SurfaceKind};
use crate::io;
use crate::quad::{self, GAUSS3};
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};

pub const MIN_POINTS: usize = 8;
const PRIMITIVE_TOL: f64 = 1e-14;

/// A closed polyline with a free period `τ`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteLoop {
    points: Vec<Point>,
    period: f64,
    winding: [i64; 2],
    shift: Point,
}

impl DiscreteLoop {
    /// Builds a loop from a lifted polyline; the closing deck translation is
    /// the one bringing `points[0]` nearest to the last point.
    pub fn new(surface: &MagneticSurface, points: Vec<Point>, period: f64) -> Result<Self> {
        let (first, last) = match (points.first(), points.last()) {
            (Some(f), Some(l)) => (*f, *l),
            _ => return Err(Error::InvalidInput("empty loop".into())),
        };
        let winding = surface.nearest_deck([last[0] - first[0], last[1] - first[1]]);
        Self::with_winding(surface, points, period, winding)
    }

    pub fn with_winding(surface: &MagneticSurface, points: Vec<Point>, period: f64, winding: [i64; 2]) -> Result<Self> {
        if points.len() < MIN_POINTS {
            return Err(Error::InvalidInput(format!("a loop needs at least {MIN_POINTS} points (got {})", points.len())));
        }
        if !(period > 0.0) {
            return Err(Error::NonPositiveInput { what: "period", value: period });
        }
        let shift = surface.deck_shift(winding);
        let lp = Self { points, period, winding, shift };
        for i in 0..lp.len() {
            let (a, b) = lp.segment(i);
            if a == b || a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("loop points {i} and {} coincide or are not finite", (i + 1) % lp.len())));
            }
        }
        Ok(lp)
    }

    /// Builds a loop from points given modulo the deck group (e.g. reduced to
    /// the fundamental domain) by unwrapping each step to its nearest translate.
    pub fn unwrapped(surface: &MagneticSurface, raw: &[Point], period: f64) -> Result<Self> {
        let mut pts: Vec<Point> = Vec::with_capacity(raw.len());
        for &p in raw {
            let q = match pts.last() {
                Some(prev) => {
                    let k = surface.nearest_deck([prev[0] - p[0], prev[1] - p[1]]);
                    let s = surface.deck_shift(k);
                    [p[0] + s[0], p[1] + s[1]]
                }
                None => p,
            };
            pts.push(q);
        }
        Self::new(surface, pts, period)
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn winding(&self) -> [i64; 2] {
        self.winding
    }

    pub fn closure_shift(&self) -> Point {
        self.shift
    }

    /// Lifted point `i ∈ 0..=N` (`N` is the closing copy of point 0).
    #[inline]
    pub fn lifted(&self, i: usize) -> Point {
        let n = self.points.len();
        if i < n {
            self.points[i]
        } else {
            let p = self.points[i - n];
            [p[0] + self.shift[0], p[1] + self.shift[1]]
        }
    }

    /// Segment `i` as lifted endpoints.
    #[inline]
    pub fn segment(&self, i: usize) -> (Point, Point) {
        (self.lifted(i), self.lifted(i + 1))
    }

    pub fn with_period(&self, period: f64) -> Self {
        Self { period, ..self.clone() }
    }

    /// Same loop with new point positions (same winding).
    pub fn with_points(&self, points: Vec<Point>) -> Self {
        Self { points, ..self.clone() }
    }

    /// The loop traversed backwards.
    pub fn reversed(&self, surface: &MagneticSurface) -> Self {
        let mut pts = vec![self.points[0]];
        pts.extend(self.points[1..].iter().rev().map(|p| [p[0] - self.shift[0], p[1] - self.shift[1]]));
        // starting point unchanged; the new closure is the negated translation
        let w = [-self.winding[0], -self.winding[1]];
        Self { points: pts, period: self.period, winding: w, shift: surface.deck_shift(w) }
    }

    /// Cyclic relabelling so that point `k` becomes the first point.
    pub fn rotated(&self, k: usize) -> Self {
        let n = self.len();
        let k = k % n;
        let pts = (0..n).map(|i| self.lifted(i + k)).collect();
        Self { points: pts, ..self.clone() }
    }

    /// Chart-coordinate diameter of the lift.
    pub fn chart_diameter(&self) -> f64 {
        let mut b = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
        for p in &self.points {
            b[0] = b[0].min(p[0]);
            b[1] = b[1].max(p[0]);
            b[2] = b[2].min(p[1]);
            b[3] = b[3].max(p[1]);
        }
        (b[1] - b[0]).hypot(b[3] - b[2])
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(LoopJson { points: self.points.clone(), period: self.period }).expect("serializable")
    }

    pub fn from_json(surface: &MagneticSurface, text: &str) -> Result<Self> {
        let j: LoopJson = serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("loop JSON: {e}")))?;
        Self::unwrapped(surface, &j.points, j.period)
    }

    pub fn to_svg(&self, surface: &MagneticSurface) -> String {
        let mut pts = self.points.clone();
        pts.push(self.lifted(self.len()));
        io::svg_curves(&[io::reduced_path(surface, &pts)], surface)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LoopJson {
    points: Vec<Point>,
    period: f64,
}

/// Sum of segment lengths with the metric evaluated at segment midpoints.
pub fn loop_length(lp: &DiscreteLoop, surface: &MagneticSurface) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..lp.len() {
        let (a, b) = lp.segment(i);
        let d = [b[0] - a[0], b[1] - a[1]];
        let g = surface.metric([0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])])?;
        total += quad_form(&g, d, d).sqrt();
    }
    Ok(total)
}

/// Winding vector of a torus loop; `(0, 0)` iff contractible.
pub fn homotopy_class(lp: &DiscreteLoop, surface: &MagneticSurface) -> Result<[i64; 2]> {
    if !surface.is_torus() {
        return Err(Error::InvalidInput("homotopy_class is defined for torus loops".into()));
    }
    Ok(lp.winding())
}

// ---------------------------------------------------------------------------
// flux

/// Choice of local primitive for the flux form on the torus and the plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Sweep {
    /// `F(x, y) = ∫ h(s, y) ds` in the first coordinate, integrated as `∮ F dy`.
    #[default]
    X,
    /// `G(x, y) = ∫ h(x, s) ds` in the second coordinate, integrated as `−∮ G dx`.
    Y,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FluxReport {
    pub value: f64,
    /// On spheres: the value for the complementary capping disk, `value − λ∫f`.
    pub alternative: Option<f64>,
}

/// Density `λ·o·f·√det g` of the flux form in chart coordinates.
struct Density<'a> {
    surface: &'a MagneticSurface,
    lambda: f64,
}

impl Density<'_> {
    #[inline]
    fn eval(&self, q: Point) -> f64 {
        self.lambda * self.surface.orientation() * self.surface.f(q) * self.sqrt_g(q)
    }

    #[inline]
    fn sqrt_g(&self, q: Point) -> f64 {
        match self.surface.kind() {
            SurfaceKind::RoundSphere { .. } | SurfaceKind::SphereOfRevolution { .. } => {
                self.surface.warp(q[0]).map(|w| w.0).unwrap_or(0.0)
            }
            _ => self.surface.area_density(q).unwrap_or(0.0),
        }
    }
}

/// `∫ F(P + tΔ) dt` over `[0,1]` by three-point Gauss.
#[inline]
fn gauss_along<F: Fn(Point) -> f64>(f: F, a: Point, d: Point) -> f64 {
    GAUSS3.iter().map(|&(t, w)| w * f([a[0] + t * d[0], a[1] + t * d[1]])).sum()
}

fn sphere_cap_area(surface: &MagneticSurface, theta: f64) -> Result<f64> {
    match surface.kind() {
        SurfaceKind::RoundSphere { radius } => Ok(radius * radius * (1.0 - (theta / radius).cos())),
        _ => {
            surface.warp(theta)?;
            Ok(quad::integrate(|s| surface.warp(s).map(|w| w.0).unwrap_or(0.0), 0.0, theta, PRIMITIVE_TOL))
        }
    }
}

/// Flux of `λ f μ_g` through the capping disk of `lp`.
///
/// Torus and plane: the signed integral over the region enclosed by the lift.
/// Spheres: the disk on the left of the loop; the complementary disk is
/// reported as `alternative`.
pub fn flux(lp: &DiscreteLoop, surface: &MagneticSurface, lambda: f64) -> Result<f64> {
    Ok(flux_report(lp, surface, lambda, Sweep::X)?.value)
}

pub fn flux_report(lp: &DiscreteLoop, surface: &MagneticSurface, lambda: f64, sweep: Sweep) -> Result<FluxReport> {
    let dens = Density { surface, lambda };
    let n = lp.len();
    match surface.kind() {
        SurfaceKind::FlatTorus { .. } | SurfaceKind::Plane => {
            if surface.is_torus() && lp.winding() != [0, 0] {
                return Err(Error::NonContractible { winding: lp.winding() });
            }
            let p0 = lp.lifted(0);
            let constant = surface.field().as_constant();
            let mut total = 0.0;
            for i in 0..n {
                let (a, b) = lp.segment(i);
                let d = [b[0] - a[0], b[1] - a[1]];
                total += match (sweep, constant) {
                    (Sweep::X, Some(_)) => dens.eval(a) * (0.5 * (a[0] + b[0]) - p0[0]) * d[1],
                    (Sweep::Y, Some(_)) => -dens.eval(a) * (0.5 * (a[1] + b[1]) - p0[1]) * d[0],
                    (Sweep::X, None) => {
                        let prim = |q: Point| quad::integrate(|s| dens.eval([s, q[1]]), p0[0], q[0], PRIMITIVE_TOL);
                        gauss_along(prim, a, d) * d[1]
                    }
                    (Sweep::Y, None) => {
                        let prim = |q: Point| quad::integrate(|s| dens.eval([q[0], s]), p0[1], q[1], PRIMITIVE_TOL);
                        -gauss_along(prim, a, d) * d[0]
                    }
                };
            }
            Ok(FluxReport { value: total, alternative: None })
        }
        SurfaceKind::RoundSphere { .. } | SurfaceKind::SphereOfRevolution { .. } => {
            let o = surface.orientation();
            let constant = surface.field().as_constant();
            let cap = |q: Point| sphere_cap_area(surface, q[0]).unwrap_or(f64::NAN);
            let mut raw = 0.0;
            let mut raw_area = 0.0;
            for i in 0..n {
                let (a, b) = lp.segment(i);
                let d = [b[0] - a[0], b[1] - a[1]];
                let seg_area = gauss_along(cap, a, d) * d[1];
                if !seg_area.is_finite() {
                    return Err(Error::PoleEvaluation { theta: a[0].min(b[0]) });
                }
                raw_area += o * seg_area;
                raw += match constant {
                    Some(c) => lambda * c * o * seg_area,
                    None => {
                        let prim = |q: Point| quad::integrate(|s| dens.eval([s, q[1]]), 0.0, q[0], PRIMITIVE_TOL);
                        gauss_along(prim, a, d) * d[1]
                    }
                };
            }
            let total = lambda * surface.total_flux()?;
            let value = if raw_area < 0.0 { raw + total } else { raw };
            Ok(FluxReport { value, alternative: Some(value - total) })
        }
    }
}

/// Gradient of [`flux`] with respect to the loop points (exact for the
/// polygon up to the Gauss rule on each segment).
pub fn flux_gradient(lp: &DiscreteLoop, surface: &MagneticSurface, lambda: f64) -> Result<Vec<Point>> {
    let dens = Density { surface, lambda };
    let n = lp.len();
    let mut grad = vec![[0.0; 2]; n];
    for i in 0..n {
        let (a, b) = lp.segment(i);
        let d = [b[0] - a[0], b[1] - a[1]];
        let (mut w0, mut w1) = (0.0, 0.0);
        for &(t, w) in GAUSS3.iter() {
            let h = dens.eval([a[0] + t * d[0], a[1] + t * d[1]]);
            if !h.is_finite() {
                return Err(Error::PoleEvaluation { theta: a[0] });
            }
            w0 += w * (1.0 - t) * h;
            w1 += w * t * h;
        }
        let j = (i + 1) % n;
        grad[i][0] += w0 * d[1];
        grad[i][1] -= w0 * d[0];
        grad[j][0] += w1 * d[1];
        grad[j][1] -= w1 * d[0];
    }
    Ok(grad)
}

// ---------------------------------------------------------------------------
// self-intersections

fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn point_segment_distance(p: Point, a: Point, b: Point) -> (f64, Point) {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = if len2 > 0.0 { (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let c = [a[0] + t * d[0], a[1] + t * d[1]];
    ((p[0] - c[0]).hypot(p[1] - c[1]), c)
}

enum Contact {
    None,
    Crossing,
    Touch(Point),
    Overlap,
}

fn classify(p1: Point, p2: Point, q1: Point, q2: Point, collar: f64) -> Contact {
    if p1[0].max(p2[0]) + collar < q1[0].min(q2[0])
        || q1[0].max(q2[0]) + collar < p1[0].min(p2[0])
        || p1[1].max(p2[1]) + collar < q1[1].min(q2[1])
        || q1[1].max(q2[1]) + collar < p1[1].min(p2[1])
    {
        return Contact::None;
    }
    let candidates = [
        point_segment_distance(p1, q1, q2),
        point_segment_distance(p2, q1, q2),
        point_segment_distance(q1, p1, p2),
        point_segment_distance(q2, p1, p2),
    ];
    let (o1, o2) = (orient(p1, p2, q1), orient(p1, p2, q2));
    let (o3, o4) = (orient(q1, q2, p1), orient(q1, q2, p2));
    let proper = o1 * o2 < 0.0 && o3 * o4 < 0.0;
    let near: Vec<usize> = (0..4).filter(|&k| candidates[k].0 <= collar).collect();
    if proper && near.is_empty() {
        return Contact::Crossing;
    }
    if near.is_empty() {
        return Contact::None;
    }
    // parallel and sharing more than a point
    let lp = (p2[0] - p1[0]).hypot(p2[1] - p1[1]);
    let lq = (q2[0] - q1[0]).hypot(q2[1] - q1[1]);
    let sin = orient([0.0, 0.0], [p2[0] - p1[0], p2[1] - p1[1]], [q2[0] - q1[0], q2[1] - q1[1]]).abs() / (lp * lq);
    if near.len() >= 2 && sin < 1e-6 {
        let pts: Vec<Point> = near
            .iter()
            .map(|&k| if k < 2 { [p1, p2][k] } else { [q1, q2][k - 2] })
            .collect();
        let spread = pts.iter().flat_map(|a| pts.iter().map(move |b| (a[0] - b[0]).hypot(a[1] - b[1]))).fold(0.0, f64::max);
        if spread > collar {
            return Contact::Overlap;
        }
    }
    let k = near.into_iter().min_by(|&a, &b| candidates[a].0.total_cmp(&candidates[b].0)).unwrap();
    let location = match k {
        0 => p1,
        1 => p2,
        _ => candidates[k].1,
    };
    Contact::Touch(location)
}

fn deck_offsets(surface: &MagneticSurface) -> Vec<[i64; 2]> {
    match surface.kind() {
        SurfaceKind::FlatTorus { .. } => (-1..=1).flat_map(|i| (-1..=1).map(move |j| [i, j])).collect(),
        SurfaceKind::RoundSphere { .. } | SurfaceKind::SphereOfRevolution { .. } => vec![[0, -1], [0, 0], [0, 1]],
        SurfaceKind::Plane => vec![[0, 0]],
    }
}

struct Reduced {
    a: Point,
    b: Point,
    cell: [i64; 2],
}

fn count_once(lp: &DiscreteLoop, surface: &MagneticSurface) -> Result<std::result::Result<usize, ()>> {
    let n = lp.len();
    let diam = lp.chart_diameter().max(1.0);
    let collar = 1e-12 * diam;
    let cluster_radius = 1e-9 * diam;
    let segs: Vec<Reduced> = (0..n)
        .map(|i| {
            let (a, b) = lp.segment(i);
            let cell = surface.cell_of(a);
            let s = surface.deck_shift(cell);
            Reduced { a: [a[0] - s[0], a[1] - s[1]], b: [b[0] - s[0], b[1] - s[1]], cell }
        })
        .collect();
    let closure = surface.nearest_deck(lp.closure_shift());
    let sub = |x: [i64; 2], y: [i64; 2]| [x[0] - y[0], x[1] - y[1]];

    // spatial hash of reduced segments
    let cell_size = segs
        .iter()
        .map(|s| (s.b[0] - s.a[0]).abs().max((s.b[1] - s.a[1]).abs()))
        .fold(0.0, f64::max)
        .max(1e-12);
    let key = |x: f64| (x / cell_size).floor() as i64;
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (j, s) in segs.iter().enumerate() {
        for cx in key(s.a[0].min(s.b[0]) - collar)..=key(s.a[0].max(s.b[0]) + collar) {
            for cy in key(s.a[1].min(s.b[1]) - collar)..=key(s.a[1].max(s.b[1]) + collar) {
                grid.entry((cx, cy)).or_default().push(j);
            }
        }
    }

    let mut seen: HashSet<(usize, usize, [i64; 2])> = HashSet::new();
    let mut crossings = 0usize;
    let mut touches: Vec<(Point, usize, usize)> = Vec::new();
    for (i, si) in segs.iter().enumerate() {
        for t in deck_offsets(surface) {
            let sh = surface.deck_shift(t);
            let (a, b) = ([si.a[0] - sh[0], si.a[1] - sh[1]], [si.b[0] - sh[0], si.b[1] - sh[1]]);
            for cx in key(a[0].min(b[0]) - collar)..=key(a[0].max(b[0]) + collar) {
                for cy in key(a[1].min(b[1]) - collar)..=key(a[1].max(b[1]) + collar) {
                    let Some(list) = grid.get(&(cx, cy)) else { continue };
                    for &j in list {
                        if j <= i || !seen.insert((i, j, t)) {
                            continue;
                        }
                        // the relation between segment i translated by −t and segment j
                        // corresponds to lifted offset k_j − t relative to k_i
                        let sj = &segs[j];
                        let rel = sub(sub(sj.cell, t), si.cell);
                        if j == i + 1 && rel == [0, 0] {
                            continue;
                        }
                        if i == 0 && j == n - 1 && sub(rel, closure) == [0, 0] {
                            continue;
                        }
                        match classify(a, b, sj.a, sj.b, collar) {
                            Contact::None => {}
                            Contact::Crossing => crossings += 1,
                            Contact::Touch(p) => touches.push((p, i, j)),
                            Contact::Overlap => return Ok(Err(())),
                        }
                    }
                }
            }
        }
    }
    Ok(Ok(crossings + touch_multiplicity(surface, &touches, cluster_radius, n)))
}

/// Groups touch events at (numerically) the same point and counts each group
/// as `C(b, 2)` where `b` is the number of distinct branches through it.
fn touch_multiplicity(surface: &MagneticSurface, touches: &[(Point, usize, usize)], radius: f64, n: usize) -> usize {
    let mut clusters: Vec<(Point, Vec<usize>)> = Vec::new();
    for &(p, i, j) in touches {
        let p = {
            let s = surface.deck_shift(surface.cell_of(p));
            [p[0] - s[0], p[1] - s[1]]
        };
        let found = clusters.iter_mut().find(|(c, _)| {
            let d = [p[0] - c[0], p[1] - c[1]];
            let s = surface.deck_shift(surface.nearest_deck(d));
            (d[0] - s[0]).hypot(d[1] - s[1]) <= radius
        });
        match found {
            Some((_, segs)) => segs.extend([i, j]),
            None => clusters.push((p, vec![i, j])),
        }
    }
    let mut total = 0;
    for (_, mut segs) in clusters {
        segs.sort_unstable();
        segs.dedup();
        // maximal runs of cyclically consecutive segments form one branch
        let mut branches = segs.len();
        for w in segs.windows(2) {
            if w[1] == w[0] + 1 {
                branches -= 1;
            }
        }
        if segs.len() > 1 && segs[0] == 0 && *segs.last().unwrap() == n - 1 {
            branches -= 1;
        }
        let branches = branches.max(1);
        total += branches * (branches - 1) / 2;
    }
    total
}

/// Number of self-intersections counted with multiplicity: transversal
/// crossings count one each, tangencies one per pair of branches, and points
/// where `k` branches meet count `k(k−1)/2`. Overlapping segments are
/// resolved by small deterministic radial perturbations.
pub fn self_intersections(lp: &DiscreteLoop, surface: &MagneticSurface) -> Result<usize> {
    if let Ok(count) = count_once(lp, surface)? {
        return Ok(count);
    }
    let n = lp.len();
    let diam = lp.chart_diameter().max(1e-300);
    let delta = 1e-7 * diam;
    let mut c = [0.0, 0.0];
    for p in lp.points() {
        c[0] += p[0] / n as f64;
        c[1] += p[1] / n as f64;
    }
    let mut best: Option<usize> = None;
    for phase in 0..8 {
        let pts: Vec<Point> = lp
            .points()
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let r = [p[0] - c[0], p[1] - c[1]];
                let rn = r[0].hypot(r[1]).max(1e-300);
                let amp = delta * (0.618_033_988_749_895 * i as f64 * 7.0 + phase as f64 * std::f64::consts::FRAC_PI_4).sin();
                [p[0] + amp * r[0] / rn, p[1] + amp * r[1] / rn]
            })
            .collect();
        if let Ok(count) = count_once(&lp.with_points(pts), surface)? {
            best = Some(best.map_or(count, |b| b.min(count)));
        }
    }
    best.ok_or(Error::DegenerateSegments)
}
