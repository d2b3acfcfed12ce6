//! Surface models, magnetic functions and the unit tangent bundle.
//!
//! Every surface is described in a single chart:
//!
//! * `FlatTorus`: lattice coordinates `(x, y) ∈ ℝ²/ℤ²` with the constant
//!   metric `G = B Bᵀ`, where the rows of `B` are the lattice vectors.
//! * `RoundSphere` and `SphereOfRevolution`: arc-length colatitude
//!   `θ ∈ (0, L)` and longitude `φ`, metric `dθ² + a(θ)² dφ²`. The round
//!   sphere of radius `R` uses `a(θ) = R sin(θ/R)` and `L = πR`.
//! * `Plane`: Euclidean coordinates.
//!
//! Points are always kept on the covering space of the chart (torus
//! coordinates and longitudes are never wrapped); distances reduce by the
//! deck group when needed.

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::quad;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

pub type Point = [f64; 2];
pub type Mat2 = [[f64; 2]; 2];
/// `gamma[k][i][j] = Γ^k_{ij}`.
pub type Christoffel = [[[f64; 2]; 2]; 2];

pub const DEFAULT_POLE_MARGIN: f64 = 1e-3;
const AREA_TOL: f64 = 1e-12;

type Fn2 = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
type Fn1 = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum FieldRepr {
    Constant(f64),
    Expr(Arc<Expr>),
    Closure(Fn2),
}

/// A smooth scalar function on chart coordinates.
#[derive(Clone)]
pub struct ScalarField {
    repr: FieldRepr,
    description: String,
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ScalarField({})", self.description)
    }
}

impl ScalarField {
    pub fn constant(c: f64) -> Self {
        Self { repr: FieldRepr::Constant(c), description: format!("{c}") }
    }

    pub fn parse(source: &str) -> Result<Self> {
        let expr = Expr::parse(source)?;
        let repr = match expr.constant() {
            Some(c) => FieldRepr::Constant(c),
            None => FieldRepr::Expr(Arc::new(expr)),
        };
        Ok(Self { repr, description: source.to_string() })
    }

    pub fn from_fn<F>(description: impl Into<String>, f: F) -> Self
    where
        F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        Self { repr: FieldRepr::Closure(Arc::new(f)), description: description.into() }
    }

    #[inline]
    pub fn eval(&self, q: Point) -> f64 {
        match &self.repr {
            FieldRepr::Constant(c) => *c,
            FieldRepr::Expr(e) => e.eval(q[0], q[1]),
            FieldRepr::Closure(f) => f(q[0], q[1]),
        }
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self.repr {
            FieldRepr::Constant(c) => Some(c),
            _ => None,
        }
    }

    pub fn description(&self) -> &str {
        &self.description
    }
}

/// Warping function `a(θ)` of a sphere of revolution with its first two
/// derivatives, all supplied in closed form.
#[derive(Clone)]
pub struct Profile {
    a: Fn1,
    da: Fn1,
    dda: Fn1,
    length: f64,
    description: String,
}

impl fmt::Debug for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Profile({}, length = {})", self.description, self.length)
    }
}

impl Profile {
    pub fn from_fns<A, D, DD>(description: impl Into<String>, length: f64, a: A, da: D, dda: DD) -> Result<Self>
    where
        A: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
        DD: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        if !(length > 0.0) {
            return Err(Error::NonPositiveInput { what: "profile length", value: length });
        }
        let profile = Self {
            a: Arc::new(a),
            da: Arc::new(da),
            dda: Arc::new(dda),
            length,
            description: description.into(),
        };
        // positivity on the interior, sampled
        for i in 1..256 {
            let t = length * i as f64 / 256.0;
            let v = (profile.a)(t);
            if !(v > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "profile must be positive on the interior; a({t}) = {v}"
                )));
            }
        }
        Ok(profile)
    }

    pub fn from_exprs(a: &str, da: &str, dda: &str, length: f64) -> Result<Self> {
        let (ea, eda, edda) = (Expr::parse(a)?, Expr::parse(da)?, Expr::parse(dda)?);
        Self::from_fns(
            format!("a = {a}"),
            length,
            move |t| ea.eval(t, 0.0),
            move |t| eda.eval(t, 0.0),
            move |t| edda.eval(t, 0.0),
        )
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn eval(&self, theta: f64) -> (f64, f64, f64) {
        ((self.a)(theta), (self.da)(theta), (self.dda)(theta))
    }
}

#[derive(Debug, Clone)]
pub enum SurfaceKind {
    /// Rows of `lattice` are the two lattice vectors.
    FlatTorus { lattice: Mat2 },
    RoundSphere { radius: f64 },
    SphereOfRevolution { profile: Profile },
    Plane,
}

/// A surface in its chart together with an orientation and a magnetic function.
///
/// Immutable after construction; cheap to clone and share between threads.
#[derive(Debug, Clone)]
pub struct MagneticSurface {
    kind: SurfaceKind,
    field: ScalarField,
    orientation: f64,
    pole_margin: f64,
    metric_const: Option<Mat2>,
}

impl MagneticSurface {
    pub fn new(kind: SurfaceKind, field: ScalarField) -> Result<Self> {
        let metric_const = match &kind {
            SurfaceKind::FlatTorus { lattice } => {
                let [b1, b2] = *lattice;
                let g = [
                    [dot(b1, b1), dot(b1, b2)],
                    [dot(b1, b2), dot(b2, b2)],
                ];
                if !(det(g).abs() > 1e-14) || lattice.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidInput("lattice matrix must be invertible".into()));
                }
                Some(g)
            }
            SurfaceKind::RoundSphere { radius } => {
                if !(*radius > 0.0) {
                    return Err(Error::NonPositiveInput { what: "radius", value: *radius });
                }
                None
            }
            SurfaceKind::SphereOfRevolution { .. } => None,
            SurfaceKind::Plane => Some([[1.0, 0.0], [0.0, 1.0]]),
        };
        Ok(Self { kind, field, orientation: 1.0, pole_margin: DEFAULT_POLE_MARGIN, metric_const })
    }

    pub fn flat_torus(lattice: Mat2, field: ScalarField) -> Result<Self> {
        Self::new(SurfaceKind::FlatTorus { lattice }, field)
    }

    pub fn unit_torus(field: ScalarField) -> Self {
        Self::flat_torus([[1.0, 0.0], [0.0, 1.0]], field).expect("identity lattice")
    }

    pub fn round_sphere(radius: f64, field: ScalarField) -> Result<Self> {
        Self::new(SurfaceKind::RoundSphere { radius }, field)
    }

    pub fn sphere_of_revolution(profile: Profile, field: ScalarField) -> Result<Self> {
        Self::new(SurfaceKind::SphereOfRevolution { profile }, field)
    }

    pub fn plane(field: ScalarField) -> Self {
        Self::new(SurfaceKind::Plane, field).expect("plane")
    }

    /// Reverses (`sign < 0`) or keeps the chart orientation.
    pub fn with_orientation(mut self, sign: i8) -> Self {
        self.orientation = if sign < 0 { -1.0 } else { 1.0 };
        self
    }

    pub fn with_pole_margin(mut self, margin: f64) -> Self {
        self.pole_margin = margin;
        self
    }

    pub fn with_field(&self, field: ScalarField) -> Self {
        Self { field, ..self.clone() }
    }

    pub fn kind(&self) -> &SurfaceKind {
        &self.kind
    }

    pub fn field(&self) -> &ScalarField {
        &self.field
    }

    pub fn orientation(&self) -> f64 {
        self.orientation
    }

    pub fn pole_margin(&self) -> f64 {
        self.pole_margin
    }

    #[inline]
    pub fn f(&self, q: Point) -> f64 {
        self.field.eval(q)
    }

    pub fn is_closed(&self) -> bool {
        !matches!(self.kind, SurfaceKind::Plane)
    }

    pub fn is_torus(&self) -> bool {
        matches!(self.kind, SurfaceKind::FlatTorus { .. })
    }

    pub fn is_sphere(&self) -> bool {
        matches!(self.kind, SurfaceKind::RoundSphere { .. } | SurfaceKind::SphereOfRevolution { .. })
    }

    pub fn euler_characteristic(&self) -> Option<i32> {
        match self.kind {
            SurfaceKind::FlatTorus { .. } => Some(0),
            SurfaceKind::RoundSphere { .. } | SurfaceKind::SphereOfRevolution { .. } => Some(2),
            SurfaceKind::Plane => None,
        }
    }

    /// Colatitude range `(0, L)` for the sphere kinds.
    pub fn theta_range(&self) -> Option<f64> {
        match &self.kind {
            SurfaceKind::RoundSphere { radius } => Some(PI * radius),
            SurfaceKind::SphereOfRevolution { profile } => Some(profile.length),
            _ => None,
        }
    }

    /// `(a, a', a'')` at colatitude `theta`; errors at or beyond a pole.
    pub fn warp(&self, theta: f64) -> Result<(f64, f64, f64)> {
        let (l, vals) = match &self.kind {
            SurfaceKind::RoundSphere { radius } => {
                let r = *radius;
                let s = (theta / r).sin();
                (PI * r, (r * s, (theta / r).cos(), -s / r))
            }
            SurfaceKind::SphereOfRevolution { profile } => (profile.length, profile.eval(theta)),
            _ => return Err(Error::InvalidInput("warp is defined for spheres only".into())),
        };
        if !(theta > 0.0 && theta < l) {
            return Err(Error::PoleEvaluation { theta });
        }
        Ok(vals)
    }

    pub fn metric(&self, q: Point) -> Result<Mat2> {
        if let Some(g) = self.metric_const {
            return Ok(g);
        }
        let (a, _, _) = self.warp(q[0])?;
        Ok([[1.0, 0.0], [0.0, a * a]])
    }

    /// `dg[k][i][j] = ∂_k g_ij`.
    pub fn metric_derivatives(&self, q: Point) -> Result<[Mat2; 2]> {
        if self.metric_const.is_some() {
            return Ok([[[0.0; 2]; 2]; 2]);
        }
        let (a, da, _) = self.warp(q[0])?;
        Ok([[[0.0, 0.0], [0.0, 2.0 * a * da]], [[0.0; 2]; 2]])
    }

    pub fn christoffels(&self, q: Point) -> Result<Christoffel> {
        let mut gamma = [[[0.0; 2]; 2]; 2];
        if self.metric_const.is_some() {
            return Ok(gamma);
        }
        let (a, da, _) = self.warp(q[0])?;
        gamma[0][1][1] = -a * da;
        gamma[1][0][1] = da / a;
        gamma[1][1][0] = da / a;
        Ok(gamma)
    }

    pub fn gauss_curvature(&self, q: Point) -> Result<f64> {
        match &self.kind {
            SurfaceKind::FlatTorus { .. } | SurfaceKind::Plane => Ok(0.0),
            SurfaceKind::RoundSphere { radius } => {
                self.warp(q[0])?;
                Ok(1.0 / (radius * radius))
            }
            SurfaceKind::SphereOfRevolution { .. } => {
                let (a, _, dda) = self.warp(q[0])?;
                Ok(-dda / a)
            }
        }
    }

    /// Riemannian area density `√det g` in the chart.
    pub fn area_density(&self, q: Point) -> Result<f64> {
        Ok(det(self.metric(q)?).sqrt())
    }

    pub fn total_area(&self) -> Result<f64> {
        match &self.kind {
            SurfaceKind::FlatTorus { .. } => Ok(det(self.metric_const.unwrap()).sqrt()),
            SurfaceKind::RoundSphere { radius } => Ok(4.0 * PI * radius * radius),
            SurfaceKind::SphereOfRevolution { profile } => {
                let l = profile.length;
                Ok(2.0 * PI * quad::integrate(|t| (profile.a)(t), 0.0, l, AREA_TOL))
            }
            SurfaceKind::Plane => Err(Error::UnboundedDomain),
        }
    }

    /// `∫_Σ f μ_g`, the total magnetic flux of the surface (orientation-independent).
    pub fn total_flux(&self) -> Result<f64> {
        let area = self.total_area()?;
        if let Some(c) = self.field.as_constant() {
            return Ok(c * area);
        }
        match &self.kind {
            SurfaceKind::FlatTorus { .. } => {
                Ok(area * quad::integrate_2d(|x, y| self.f([x, y]), (0.0, 1.0), (0.0, 1.0), AREA_TOL))
            }
            _ => {
                let l = self.theta_range().unwrap();
                Ok(quad::integrate_2d(
                    |t, p| self.f([t, p]) * self.warp(t).map(|w| w.0).unwrap_or(0.0),
                    (0.0, l),
                    (0.0, 2.0 * PI),
                    AREA_TOL,
                ))
            }
        }
    }

    #[inline]
    pub fn inner(&self, q: Point, u: Point, v: Point) -> Result<f64> {
        Ok(quad_form(&self.metric(q)?, u, v))
    }

    pub fn norm(&self, q: Point, v: Point) -> Result<f64> {
        Ok(self.inner(q, v, v)?.sqrt())
    }

    /// Rotation by +π/2 in the oriented orthonormal frame.
    pub fn rotate(&self, q: Point, v: Point) -> Result<Point> {
        Ok(rotate_with(&self.metric(q)?, self.orientation, v))
    }

    /// Generators of the deck group acting on the chart cover.
    pub fn periods(&self) -> Vec<Point> {
        match self.kind {
            SurfaceKind::FlatTorus { .. } => vec![[1.0, 0.0], [0.0, 1.0]],
            SurfaceKind::RoundSphere { .. } | SurfaceKind::SphereOfRevolution { .. } => vec![[0.0, 2.0 * PI]],
            SurfaceKind::Plane => vec![],
        }
    }

    /// Translation of the deck element with integer coordinates `k`.
    pub fn deck_shift(&self, k: [i64; 2]) -> Point {
        match self.kind {
            SurfaceKind::FlatTorus { .. } => [k[0] as f64, k[1] as f64],
            SurfaceKind::RoundSphere { .. } | SurfaceKind::SphereOfRevolution { .. } => {
                [0.0, 2.0 * PI * k[1] as f64]
            }
            SurfaceKind::Plane => [0.0, 0.0],
        }
    }

    /// Integer deck coordinates closest to a chart displacement.
    pub fn nearest_deck(&self, d: Point) -> [i64; 2] {
        match self.kind {
            SurfaceKind::FlatTorus { .. } => [d[0].round() as i64, d[1].round() as i64],
            SurfaceKind::RoundSphere { .. } | SurfaceKind::SphereOfRevolution { .. } => {
                [0, (d[1] / (2.0 * PI)).round() as i64]
            }
            SurfaceKind::Plane => [0, 0],
        }
    }

    /// Deck coordinates `k` such that `q - shift(k)` lies in the fundamental domain.
    pub fn cell_of(&self, q: Point) -> [i64; 2] {
        match self.kind {
            SurfaceKind::FlatTorus { .. } => [q[0].floor() as i64, q[1].floor() as i64],
            SurfaceKind::RoundSphere { .. } | SurfaceKind::SphereOfRevolution { .. } => {
                [0, (q[1] / (2.0 * PI)).floor() as i64]
            }
            SurfaceKind::Plane => [0, 0],
        }
    }

    /// Whether `q` is admissible for the flow (outside the pole margins).
    pub fn in_dynamics_domain(&self, q: Point) -> bool {
        match self.theta_range() {
            Some(l) => q[0] > self.pole_margin && q[0] < l - self.pole_margin,
            None => q.iter().all(|v| v.is_finite()),
        }
    }

    /// Geodesic distance between base points on the quotient surface.
    ///
    /// Exact for the torus (nine nearest translates), the plane and the round
    /// sphere; second-order accurate midpoint estimate for general spheres of
    /// revolution.
    pub fn base_distance(&self, q1: Point, q2: Point) -> Result<f64> {
        match &self.kind {
            SurfaceKind::FlatTorus { .. } | SurfaceKind::Plane => {
                let g = self.metric_const.unwrap();
                Ok(norm_g(&g, self.torus_offset(q1, q2)))
            }
            SurfaceKind::RoundSphere { radius } => {
                self.warp(q1[0])?;
                self.warp(q2[0])?;
                let (n1, n2) = (sphere_normal(q1, *radius), sphere_normal(q2, *radius));
                Ok(radius * angle3(n1, n2))
            }
            SurfaceKind::SphereOfRevolution { .. } => {
                let d = self.sphere_offset(q1, q2);
                let m = [q1[0] + 0.5 * d[0], q1[1] + 0.5 * d[1]];
                Ok(norm_g(&self.metric(m)?, d))
            }
        }
    }

    /// Sasaki-type distance `√(d_base² + d_fiber²)` on the unit tangent bundle.
    pub fn sasaki_distance(&self, s1: &UnitTangentState, s2: &UnitTangentState) -> Result<f64> {
        let (base, fiber) = match &self.kind {
            SurfaceKind::FlatTorus { .. } | SurfaceKind::Plane => {
                let g = self.metric_const.unwrap();
                let base = norm_g(&g, self.torus_offset(s1.q, s2.q));
                (base, angle_g(&g, s1.v, s2.v))
            }
            SurfaceKind::RoundSphere { radius } => {
                self.warp(s1.q[0])?;
                self.warp(s2.q[0])?;
                let r = *radius;
                let (n1, n2) = (sphere_normal(s1.q, r), sphere_normal(s2.q, r));
                let (v1, v2) = (sphere_tangent(s1.q, s1.v, r), sphere_tangent(s2.q, s2.v, r));
                let moved = transport_on_sphere(n1, n2, v1);
                (r * angle3(n1, n2), angle3(moved, v2))
            }
            SurfaceKind::SphereOfRevolution { .. } => {
                let d = self.sphere_offset(s1.q, s2.q);
                let half = [0.5 * d[0], 0.5 * d[1]];
                let m = [s1.q[0] + half[0], s1.q[1] + half[1]];
                let g = self.metric(m)?;
                let gamma = self.christoffels(m)?;
                let v1 = transport_linear(&gamma, half, s1.v, 1.0);
                let v2 = transport_linear(&gamma, half, s2.v, -1.0);
                (norm_g(&g, d), angle_g(&g, v1, v2))
            }
        };
        Ok((base * base + fiber * fiber).sqrt())
    }

    fn torus_offset(&self, q1: Point, q2: Point) -> Point {
        let mut d = [q2[0] - q1[0], q2[1] - q1[1]];
        if let SurfaceKind::Plane = self.kind {
            return d;
        }
        d = [d[0] - d[0].round(), d[1] - d[1].round()];
        let g = self.metric_const.unwrap();
        let mut best = d;
        let mut best_len = quad_form(&g, d, d);
        for i in -1..=1 {
            for j in -1..=1 {
                let c = [d[0] + i as f64, d[1] + j as f64];
                let len = quad_form(&g, c, c);
                if len < best_len {
                    best_len = len;
                    best = c;
                }
            }
        }
        best
    }

    fn sphere_offset(&self, q1: Point, q2: Point) -> Point {
        let mut dphi = q2[1] - q1[1];
        dphi -= 2.0 * PI * (dphi / (2.0 * PI)).round();
        [q2[0] - q1[0], dphi]
    }

    /// Largest `|f|` over a probe grid (the fundamental domain, the band
    /// between the pole margins, or the box of half-width 1 around `center`).
    pub fn probe_max_abs_f(&self, center: Point) -> f64 {
        if let Some(c) = self.field.as_constant() {
            return c.abs();
        }
        const N: usize = 33;
        let (x0, x1, y0, y1) = match self.theta_range() {
            Some(l) => (self.pole_margin, l - self.pole_margin, 0.0, 2.0 * PI),
            None if self.is_torus() => (0.0, 1.0, 0.0, 1.0),
            None => (center[0] - 1.0, center[0] + 1.0, center[1] - 1.0, center[1] + 1.0),
        };
        let mut m: f64 = 0.0;
        for i in 0..N {
            for j in 0..N {
                let x = x0 + (x1 - x0) * i as f64 / (N - 1) as f64;
                let y = y0 + (y1 - y0) * j as f64 / (N - 1) as f64;
                m = m.max(self.f([x, y]).abs());
            }
        }
        m.max(self.f(center).abs())
    }

    /// Orthonormal oriented frame `(e1, e2)` at `q` with `e1 ∥ ∂_x`.
    pub fn frame(&self, q: Point) -> Result<(Point, Point)> {
        let g = self.metric(q)?;
        let e1 = [1.0 / g[0][0].sqrt(), 0.0];
        Ok((e1, rotate_with(&g, self.orientation, e1)))
    }
}

/// A point of the unit tangent bundle in chart components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitTangentState {
    pub q: Point,
    pub v: Point,
}

impl UnitTangentState {
    /// Normalizes `v` to unit length in the metric at `q`.
    pub fn new(surface: &MagneticSurface, q: Point, v: Point) -> Result<Self> {
        let n = surface.norm(q, v)?;
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::InvalidInput(format!("zero or invalid tangent vector {v:?}")));
        }
        Ok(Self { q, v: [v[0] / n, v[1] / n] })
    }

    /// The unit vector at angle `angle` from `∂_x` in the oriented frame.
    pub fn from_angle(surface: &MagneticSurface, q: Point, angle: f64) -> Result<Self> {
        let (e1, e2) = surface.frame(q)?;
        let (c, s) = (angle.cos(), angle.sin());
        Self::new(surface, q, [c * e1[0] + s * e2[0], c * e1[1] + s * e2[1]])
    }

    /// Angle of `v` measured from `∂_x` in the oriented frame.
    pub fn angle(&self, surface: &MagneticSurface) -> Result<f64> {
        let (e1, e2) = surface.frame(self.q)?;
        let g = surface.metric(self.q)?;
        Ok(quad_form(&g, self.v, e2).atan2(quad_form(&g, self.v, e1)))
    }

    pub fn reversed(&self) -> Self {
        Self { q: self.q, v: [-self.v[0], -self.v[1]] }
    }
}

/// The magnetic scaling parameter `λ ≥ 0`; the system studied is `(g, λf)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceParams {
    pub lambda: f64,
}

impl SurfaceParams {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidInput(format!("lambda must be finite and >= 0 (got {lambda})")));
        }
        Ok(Self { lambda })
    }
}

/// Free-standing form of [`MagneticSurface::christoffels`].
pub fn christoffels(surface: &MagneticSurface, q: Point) -> Result<Christoffel> {
    surface.christoffels(q)
}

pub fn gauss_curvature(surface: &MagneticSurface, q: Point) -> Result<f64> {
    surface.gauss_curvature(q)
}

pub fn total_area(surface: &MagneticSurface) -> Result<f64> {
    surface.total_area()
}

pub fn sasaki_distance(s1: &UnitTangentState, s2: &UnitTangentState, surface: &MagneticSurface) -> Result<f64> {
    surface.sasaki_distance(s1, s2)
}

// ---------------------------------------------------------------------------
// Configuration format

/// A number or an arithmetic expression such as `"pi"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Num(f64),
    Expr(String),
}

impl Scalar {
    pub fn value(&self) -> Result<f64> {
        match self {
            Scalar::Num(v) => Ok(*v),
            Scalar::Expr(s) => Expr::parse(s)?
                .constant()
                .ok_or_else(|| Error::Expression(format!("{s:?} is not a constant"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSpec {
    pub a: String,
    pub da: String,
    pub dda: String,
    pub length: Scalar,
}

fn default_field() -> String {
    "0".to_string()
}

/// JSON description of a surface, e.g.
/// `{"kind": "flat_torus", "lattice": [[1,0],[0,1]], "f": "1 + 0.5*cos(2*pi*x)"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SurfaceSpec {
    FlatTorus {
        lattice: Mat2,
        #[serde(default = "default_field")]
        f: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        orientation: Option<i8>,
    },
    RoundSphere {
        radius: Scalar,
        #[serde(default = "default_field")]
        f: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        orientation: Option<i8>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pole_margin: Option<f64>,
    },
    SphereOfRevolution {
        profile: ProfileSpec,
        #[serde(default = "default_field")]
        f: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        orientation: Option<i8>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pole_margin: Option<f64>,
    },
    Plane {
        #[serde(default = "default_field")]
        f: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        orientation: Option<i8>,
    },
}

impl SurfaceSpec {
    pub fn build(&self) -> Result<MagneticSurface> {
        let (surface, orientation, margin) = match self {
            SurfaceSpec::FlatTorus { lattice, f, orientation } => {
                (MagneticSurface::flat_torus(*lattice, ScalarField::parse(f)?)?, orientation, None)
            }
            SurfaceSpec::RoundSphere { radius, f, orientation, pole_margin } => (
                MagneticSurface::round_sphere(radius.value()?, ScalarField::parse(f)?)?,
                orientation,
                *pole_margin,
            ),
            SurfaceSpec::SphereOfRevolution { profile, f, orientation, pole_margin } => {
                let p = Profile::from_exprs(&profile.a, &profile.da, &profile.dda, profile.length.value()?)?;
                (MagneticSurface::sphere_of_revolution(p, ScalarField::parse(f)?)?, orientation, *pole_margin)
            }
            SurfaceSpec::Plane { f, orientation } => (MagneticSurface::plane(ScalarField::parse(f)?), orientation, None),
        };
        let mut surface = surface.with_orientation(orientation.unwrap_or(1));
        if let Some(m) = margin {
            if !(m > 0.0) {
                return Err(Error::NonPositiveInput { what: "pole_margin", value: m });
            }
            surface = surface.with_pole_margin(m);
        }
        Ok(surface)
    }
}

// ---------------------------------------------------------------------------
// small linear algebra

#[inline]
pub(crate) fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub fn det(g: Mat2) -> f64 {
    g[0][0] * g[1][1] - g[0][1] * g[1][0]
}

#[inline]
pub(crate) fn quad_form(g: &Mat2, u: Point, v: Point) -> f64 {
    u[0] * (g[0][0] * v[0] + g[0][1] * v[1]) + u[1] * (g[1][0] * v[0] + g[1][1] * v[1])
}

#[inline]
pub(crate) fn norm_g(g: &Mat2, v: Point) -> f64 {
    quad_form(g, v, v).sqrt()
}

#[inline]
pub(crate) fn rotate_with(g: &Mat2, orientation: f64, v: Point) -> Point {
    let s = orientation / det(*g).sqrt();
    [
        s * (-g[0][1] * v[0] - g[1][1] * v[1]),
        s * (g[0][0] * v[0] + g[0][1] * v[1]),
    ]
}

/// Unsigned angle in `[0, π]` between two tangent vectors.
fn angle_g(g: &Mat2, u: Point, v: Point) -> f64 {
    let cross = det(*g).sqrt() * (u[0] * v[1] - u[1] * v[0]);
    cross.abs().atan2(quad_form(g, u, v))
}

/// First-order parallel transport of `v` by the displacement `sign · d`.
fn transport_linear(gamma: &Christoffel, d: Point, v: Point, sign: f64) -> Point {
    let mut out = v;
    for (k, o) in out.iter_mut().enumerate() {
        let mut s = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                s += gamma[k][i][j] * d[i] * v[j];
            }
        }
        *o -= sign * s;
    }
    out
}

type V3 = [f64; 3];

fn sphere_normal(q: Point, r: f64) -> V3 {
    let (s, c) = (q[0] / r).sin_cos();
    let (sp, cp) = q[1].sin_cos();
    [s * cp, s * sp, c]
}

fn sphere_tangent(q: Point, v: Point, r: f64) -> V3 {
    let (s, c) = (q[0] / r).sin_cos();
    let (sp, cp) = q[1].sin_cos();
    let a = r * s;
    [
        v[0] * c * cp - v[1] * a * sp,
        v[0] * c * sp + v[1] * a * cp,
        -v[0] * s,
    ]
}

fn cross3(a: V3, b: V3) -> V3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn dot3(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm3(a: V3) -> f64 {
    dot3(a, a).sqrt()
}

fn angle3(a: V3, b: V3) -> f64 {
    norm3(cross3(a, b)).atan2(dot3(a, b))
}

/// Parallel transport on the unit sphere along the minimizing great circle
/// from `n1` to `n2` (for antipodal points, along the great circle tangent to `v`).
fn transport_on_sphere(n1: V3, n2: V3, v: V3) -> V3 {
    let axis = cross3(n1, n2);
    let s = norm3(axis);
    let c = dot3(n1, n2);
    let k = if s > 1e-15 {
        [axis[0] / s, axis[1] / s, axis[2] / s]
    } else if c > 0.0 {
        return v;
    } else {
        let w = cross3(n1, v);
        let wn = norm3(w);
        [w[0] / wn, w[1] / wn, w[2] / wn]
    };
    let kv = cross3(k, v);
    let kdv = dot3(k, v);
    let mut out = [0.0; 3];
    for i in 0..3 {
        out[i] = v[i] * c + kv[i] * s + k[i] * kdv * (1.0 - c);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sin_profile() -> Profile {
        Profile::from_fns("sin", PI, f64::sin, f64::cos, |t| -t.sin()).unwrap()
    }

    #[test]
    fn torus_christoffels_vanish() {
        let s = MagneticSurface::unit_torus(ScalarField::constant(1.0));
        assert_eq!(s.christoffels([0.3, 0.9]).unwrap(), [[[0.0; 2]; 2]; 2]);
        assert_eq!(s.gauss_curvature([0.1, 0.2]).unwrap(), 0.0);
        assert!((s.total_area().unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn revolution_christoffels_closed_form() {
        let s = MagneticSurface::sphere_of_revolution(sin_profile(), ScalarField::constant(0.0)).unwrap();
        let t = 0.8_f64;
        let g = s.christoffels([t, 1.0]).unwrap();
        assert!((g[0][1][1] + t.sin() * t.cos()).abs() < 1e-15);
        assert!((g[1][0][1] - t.cos() / t.sin()).abs() < 1e-15);
        assert_eq!(g[1][0][1], g[1][1][0]);
        assert_eq!(g[0][0][0], 0.0);
        assert_eq!(g[0][0][1], 0.0);
        assert_eq!(g[1][1][1], 0.0);
        assert!((s.gauss_curvature([t, 0.0]).unwrap() - 1.0).abs() < 1e-14);
        assert!((s.total_area().unwrap() - 4.0 * PI).abs() < 1e-10);
    }

    #[test]
    fn equator_christoffel_vanishes_on_unit_sphere() {
        let s = MagneticSurface::round_sphere(1.0, ScalarField::constant(0.0)).unwrap();
        let g = s.christoffels([PI / 2.0, 0.0]).unwrap();
        assert!(g[0][1][1].abs() < 1e-15);
        let s2 = MagneticSurface::round_sphere(2.0, ScalarField::constant(0.0)).unwrap();
        assert!((s2.gauss_curvature([1.0, 0.0]).unwrap() - 0.25).abs() < 1e-15);
        assert!((s.total_area().unwrap() - 12.566_370_614_359_172).abs() < 1e-12);
    }

    #[test]
    fn pole_evaluation_is_an_error() {
        let s = MagneticSurface::round_sphere(1.0, ScalarField::constant(0.0)).unwrap();
        assert!(matches!(s.christoffels([0.0, 0.0]), Err(Error::PoleEvaluation { .. })));
        assert!(matches!(s.gauss_curvature([PI + 0.1, 0.0]), Err(Error::PoleEvaluation { .. })));
        assert!(matches!(MagneticSurface::plane(ScalarField::constant(1.0)).total_area(), Err(Error::UnboundedDomain)));
    }

    #[test]
    fn invalid_constructions() {
        assert!(MagneticSurface::flat_torus([[1.0, 2.0], [2.0, 4.0]], ScalarField::constant(0.0)).is_err());
        assert!(MagneticSurface::round_sphere(0.0, ScalarField::constant(0.0)).is_err());
        assert!(Profile::from_fns("bad", PI, |t: f64| t.sin() - 0.5, f64::cos, |t| -t.sin()).is_err());
        assert!(SurfaceParams::new(-1.0).is_err());
    }

    #[test]
    fn unit_state_is_normalized() {
        let s = MagneticSurface::round_sphere(1.0, ScalarField::constant(0.0)).unwrap();
        let st = UnitTangentState::new(&s, [0.7, 0.1], [3.0, 4.0]).unwrap();
        assert!((s.norm(st.q, st.v).unwrap() - 1.0).abs() < 1e-12);
        let st = UnitTangentState::from_angle(&s, [0.7, 0.1], 1.1).unwrap();
        assert!((st.angle(&s).unwrap() - 1.1).abs() < 1e-12);
    }

    #[test]
    fn sasaki_examples() {
        let t = MagneticSurface::unit_torus(ScalarField::constant(0.0));
        let a = UnitTangentState::from_angle(&t, [0.0, 0.0], 0.3).unwrap();
        assert_eq!(t.sasaki_distance(&a, &a).unwrap(), 0.0);
        assert!((t.sasaki_distance(&a, &a.reversed()).unwrap() - PI).abs() < 1e-15);
        let b = UnitTangentState { q: [0.3, 0.4], v: a.v };
        assert!((t.sasaki_distance(&a, &b).unwrap() - 0.5).abs() < 1e-15);
        // translates are identified
        let c = UnitTangentState { q: [2.0, -3.0], v: a.v };
        assert!(t.sasaki_distance(&a, &c).unwrap() < 1e-15);

        let s = MagneticSurface::round_sphere(1.0, ScalarField::constant(0.0)).unwrap();
        let p = UnitTangentState::from_angle(&s, [1.0, 0.5], 0.2).unwrap();
        assert!((s.sasaki_distance(&p, &p.reversed()).unwrap() - PI).abs() < 1e-12);
        let q = UnitTangentState { q: [1.0, 0.5 + 2.0 * PI], v: p.v };
        assert!(s.sasaki_distance(&p, &q).unwrap() < 1e-12);
    }

    #[test]
    fn surface_description_round_trip() {
        let json = r#"{"kind": "flat_torus", "lattice": [[1,0],[0,1]], "f": "1 + 0.5*cos(2*pi*x)"}"#;
        let spec: SurfaceSpec = serde_json::from_str(json).unwrap();
        let s = spec.build().unwrap();
        assert!((s.f([0.0, 0.3]) - 1.5).abs() < 1e-15);
        let bad = r#"{"kind": "flat_torus", "lattice": [[1,0],[0,1]], "g": "1"}"#;
        assert!(serde_json::from_str::<SurfaceSpec>(bad).is_err());
        let sph = r#"{"kind": "sphere_of_revolution", "profile": {"a": "sin(x)", "da": "cos(x)", "dda": "-sin(x)", "length": "pi"}, "f": "1"}"#;
        let s: SurfaceSpec = serde_json::from_str(sph).unwrap();
        assert!((s.build().unwrap().total_area().unwrap() - 4.0 * PI).abs() < 1e-9);
    }
}
