//! The free-period action functionals on discrete loops and waist search.
//!
//! For a loop `(Γ, τ)` with `N` points, `Δ_i = P_{i+1} − P_i` and the metric
//! evaluated at segment midpoints,
//!
//! ```text
//! 𝔸^λ(Γ, τ) = (N/2τ) Σ Δ_iᵀ g Δ_i − λ∫_D f μ_g + τ/2,
//! ```
//!
//! where the magnetic term is the flux through a capping disk (`λ = 0`
//! gives 𝔸). Minimizing in `τ` gives `τ = √E` with `E = N Σ Δᵀ g Δ`, so the
//! descent works on the reduced functional `√E − magnetic`.

use crate::curves::{self, DiscreteLoop};
use crate::error::{Error, Result};
use crate::flow::{self, FlowOptions};
use crate::geometry::{quad_form, MagneticSurface, Point, UnitTangentState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::f64::consts::TAU;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ActionValue {
    pub value: f64,
    pub kinetic: f64,
    pub magnetic: f64,
    pub period_term: f64,
}

fn needs_magnetic(surface: &MagneticSurface, lambda: f64) -> bool {
    lambda != 0.0 && surface.field().as_constant() != Some(0.0)
}

/// `E = N Σ Δᵀ g Δ` and its gradient with respect to the points.
fn energy(lp: &DiscreteLoop, surface: &MagneticSurface, with_grad: bool) -> Result<(f64, Vec<Point>)> {
    let n = lp.len();
    let nf = n as f64;
    let mut e = 0.0;
    let mut grad = if with_grad { vec![[0.0; 2]; n] } else { Vec::new() };
    for i in 0..n {
        let (a, b) = lp.segment(i);
        let d = [b[0] - a[0], b[1] - a[1]];
        let m = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
        let g = surface.metric(m)?;
        e += nf * quad_form(&g, d, d);
        if with_grad {
            let dg = surface.metric_derivatives(m)?;
            let gd = [g[0][0] * d[0] + g[0][1] * d[1], g[1][0] * d[0] + g[1][1] * d[1]];
            let half = [0.5 * quad_form(&dg[0], d, d), 0.5 * quad_form(&dg[1], d, d)];
            let j = (i + 1) % n;
            for k in 0..2 {
                grad[i][k] += nf * (-2.0 * gd[k] + half[k]);
                grad[j][k] += nf * (2.0 * gd[k] + half[k]);
            }
        }
    }
    Ok((e, grad))
}

fn magnetic(lp: &DiscreteLoop, surface: &MagneticSurface, lambda: f64) -> Result<f64> {
    if needs_magnetic(surface, lambda) {
        curves::flux(lp, surface, lambda)
    } else {
        Ok(0.0)
    }
}

/// The discretized action `𝔸^λ` of `lp` at its stored period.
pub fn action(lp: &DiscreteLoop, surface: &MagneticSurface, lambda: f64) -> Result<ActionValue> {
    let tau = lp.period();
    let (e, _) = energy(lp, surface, false)?;
    let kinetic = e / (2.0 * tau);
    let magnetic = magnetic(lp, surface, lambda)?;
    let period_term = tau / 2.0;
    Ok(ActionValue { value: kinetic - magnetic + period_term, kinetic, magnetic, period_term })
}

/// Exact gradient of the discretized action: per-point gradients and `∂/∂τ`.
pub fn action_gradient(lp: &DiscreteLoop, surface: &MagneticSurface, lambda: f64) -> Result<(Vec<Point>, f64)> {
    let tau = lp.period();
    let (e, mut grad) = energy(lp, surface, true)?;
    for g in grad.iter_mut() {
        g[0] /= 2.0 * tau;
        g[1] /= 2.0 * tau;
    }
    if needs_magnetic(surface, lambda) {
        let gm = curves::flux_gradient(lp, surface, lambda)?;
        for (g, m) in grad.iter_mut().zip(gm) {
            g[0] -= m[0];
            g[1] -= m[1];
        }
    }
    Ok((grad, -e / (2.0 * tau * tau) + 0.5))
}

/// `√E − magnetic` and its point gradient (the action minimized over `τ`).
fn reduced(lp: &DiscreteLoop, surface: &MagneticSurface, lambda: f64, with_grad: bool) -> Result<(f64, f64, Vec<Point>)> {
    let (e, mut grad) = energy(lp, surface, with_grad)?;
    let tau = e.sqrt();
    let mag = magnetic(lp, surface, lambda)?;
    if with_grad {
        for g in grad.iter_mut() {
            g[0] /= 2.0 * tau;
            g[1] /= 2.0 * tau;
        }
        if needs_magnetic(surface, lambda) {
            for (g, m) in grad.iter_mut().zip(curves::flux_gradient(lp, surface, lambda)?) {
                g[0] -= m[0];
                g[1] -= m[1];
            }
        }
    }
    Ok((tau - mag, tau, grad))
}

/// Solves the cyclic system `b x_i − x_{i−1} − x_{i+1} = r_i` for `b > 2` by
/// factoring it as `(1/ρ)(1 − ρS)(1 − ρS⁻¹)` with `ρ + 1/ρ = b`.
fn solve_cyclic(b: f64, r: &[f64]) -> Vec<f64> {
    let n = r.len();
    let rho = 2.0 / (b + (b * b - 4.0).sqrt());
    let wrap = 1.0 / (1.0 - rho.powi(n as i32));
    // (1 − ρS) u = ρ r
    let mut u = vec![0.0; n];
    let mut acc = 0.0;
    for k in (0..n).rev() {
        acc = rho * acc + rho * r[(n - k) % n];
    }
    u[0] = acc * wrap;
    for i in 1..n {
        u[i] = rho * r[i] + rho * u[i - 1];
    }
    // (1 − ρS⁻¹) x = u
    let mut x = vec![0.0; n];
    let mut acc = 0.0;
    for k in (0..n).rev() {
        acc = rho * acc + u[(n - 1 + k) % n];
    }
    x[n - 1] = acc * wrap;
    for i in (0..n - 1).rev() {
        x[i] = u[i] + rho * x[i + 1];
    }
    x
}

/// Averaging preconditioner: pointwise `g⁻¹`, then `(N/ℓ)(L + δ)` inverted
/// along the loop, `L` the cyclic second difference.
fn precondition(lp: &DiscreteLoop, surface: &MagneticSurface, grad: &[Point], length: f64) -> Result<Vec<Point>> {
    let n = lp.len();
    let mut z = Vec::with_capacity(n);
    for (i, g) in grad.iter().enumerate() {
        let m = surface.metric(lp.points()[i])?;
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        z.push([(m[1][1] * g[0] - m[0][1] * g[1]) / det, (-m[1][0] * g[0] + m[0][0] * g[1]) / det]);
    }
    let delta = 0.5 * (TAU / n as f64).powi(2);
    let scale = length / n as f64;
    let xs = solve_cyclic(2.0 + delta, &z.iter().map(|p| p[0]).collect::<Vec<_>>());
    let ys = solve_cyclic(2.0 + delta, &z.iter().map(|p| p[1]).collect::<Vec<_>>());
    Ok(xs.into_iter().zip(ys).map(|(x, y)| [scale * x, scale * y]).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescentOptions {
    /// Max-norm of the point gradient at convergence.
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Collapse threshold on the optimal period.
    pub tau_min: f64,
    /// Loop-space radius of the stability probe (0 disables it).
    pub probe_radius: f64,
    pub probe_count: usize,
    pub seed: u64,
}

impl Default for DescentOptions {
    fn default() -> Self {
        Self { grad_tol: 1e-10, max_iter: 20_000, tau_min: 1e-4, probe_radius: 0.05, probe_count: 32, seed: 0 }
    }
}

/// A loop that locally minimizes the action.
#[derive(Debug, Clone, Serialize)]
pub struct Waist {
    #[serde(rename = "loop", serialize_with = "ser_loop")]
    pub loop_: DiscreteLoop,
    pub action: ActionValue,
    pub length: f64,
    pub lambda: f64,
    /// `min over probes of 𝔸^λ − 𝔸^λ(waist)` on the probe sphere.
    pub stability_margin: f64,
    pub probe_radius: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
}

fn ser_loop<S: serde::Serializer>(lp: &DiscreteLoop, s: S) -> std::result::Result<S::Ok, S::Error> {
    lp.to_json().serialize(s)
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum WaistOutcome {
    Converged(Box<Waist>),
    /// The optimal period fell below `tau_min`.
    Collapsed { iterations: usize, tau: f64 },
    NotConverged { iterations: usize, gradient_norm: f64 },
}

impl WaistOutcome {
    pub fn waist(self) -> Option<Waist> {
        match self {
            WaistOutcome::Converged(w) => Some(*w),
            _ => None,
        }
    }
}

fn max_norm(g: &[Point]) -> f64 {
    g.iter().map(|p| p[0].abs().max(p[1].abs())).fold(0.0, f64::max)
}

/// Preconditioned gradient descent with Armijo backtracking from `seed`.
pub fn find_waist(surface: &MagneticSurface, lambda: f64, seed: &DiscreteLoop, opts: &DescentOptions) -> Result<WaistOutcome> {
    let mut lp = seed.clone();
    let mut alpha: f64 = 1.0;
    let (mut value, mut tau, mut grad) = reduced(&lp, surface, lambda, true)?;
    let mut stalled = 0;
    for iter in 0..opts.max_iter {
        if !(tau >= opts.tau_min) {
            return Ok(WaistOutcome::Collapsed { iterations: iter, tau });
        }
        let gnorm = max_norm(&grad);
        if gnorm <= opts.grad_tol {
            let lp = lp.with_period(tau);
            return Ok(WaistOutcome::Converged(Box::new(finish(surface, lambda, lp, gnorm, iter, opts)?)));
        }
        let mut dir = precondition(&lp, surface, &grad, tau)?;
        let mut slope: f64 = grad.iter().zip(&dir).map(|(g, d)| g[0] * d[0] + g[1] * d[1]).sum();
        if !(slope > 0.0) {
            dir = grad.clone();
            slope = grad.iter().map(|g| g[0] * g[0] + g[1] * g[1]).sum();
        }
        // move along −dir
        alpha = (2.0 * alpha).min(1.0);
        let step = |a: f64| -> Vec<Point> {
            lp.points().iter().zip(&dir).map(|(p, d)| [p[0] - a * d[0], p[1] - a * d[1]]).collect()
        };
        // Armijo decrease, or at the rounding floor of the value a step that
        // keeps the value and reduces the gradient
        let floor = 8.0 * f64::EPSILON * value.abs().max(1.0);
        let mut accepted = None;
        while alpha > 1e-10 {
            let trial = lp.with_points(step(alpha));
            if let Ok((v, t, g)) = reduced(&trial, surface, lambda, true) {
                if v <= value - 1e-4 * alpha * slope || (v <= value + floor && max_norm(&g) < gnorm) {
                    accepted = Some((trial, v, t, g));
                    break;
                }
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((trial, v, t, g)) => {
                // progress below rounding that barely moves the gradient
                stalled = if v > value - floor && max_norm(&g) > 0.99 * gnorm { stalled + 1 } else { 0 };
                if stalled >= 50 {
                    return Ok(WaistOutcome::NotConverged { iterations: iter, gradient_norm: gnorm });
                }
                lp = trial;
                value = v;
                tau = t;
                grad = g;
            }
            None => return Ok(WaistOutcome::NotConverged { iterations: iter, gradient_norm: gnorm }),
        }
    }
    Ok(WaistOutcome::NotConverged { iterations: opts.max_iter, gradient_norm: max_norm(&grad) })
}

fn finish(
    surface: &MagneticSurface,
    lambda: f64,
    lp: DiscreteLoop,
    gnorm: f64,
    iterations: usize,
    opts: &DescentOptions,
) -> Result<Waist> {
    let action = action(&lp, surface, lambda)?;
    let length = curves::loop_length(&lp, surface)?;
    let stability_margin = if opts.probe_radius > 0.0 && opts.probe_count > 0 {
        stability_probe(surface, lambda, &lp, opts.probe_radius, opts.probe_count, opts.seed)?.margin
    } else {
        f64::NAN
    };
    Ok(Waist {
        loop_: lp,
        action,
        length,
        lambda,
        stability_margin,
        probe_radius: opts.probe_radius,
        gradient_norm: gnorm,
        iterations,
    })
}

/// Discrete H¹ distance between loops with the same number of points,
/// `√(τ/N Σ|δP|² + N/τ Σ|δP_{i+1} − δP_i|² + δτ²)` with `|·|` the metric
/// norm at the points of `a`, minimized over cyclic relabellings of `b` and
/// deck translations.
pub fn loop_distance(a: &DiscreteLoop, b: &DiscreteLoop, surface: &MagneticSurface) -> Result<f64> {
    let n = a.len();
    if b.len() != n {
        return Err(Error::InvalidInput(format!("loops have {} and {} points", n, b.len())));
    }
    let tau = a.period();
    let metrics: Vec<_> = a.points().iter().map(|p| surface.metric(*p)).collect::<Result<_>>()?;
    let mut best = f64::INFINITY;
    for k in 0..n {
        let q = b.rotated(k);
        let d0 = [q.points()[0][0] - a.points()[0][0], q.points()[0][1] - a.points()[0][1]];
        let s = surface.deck_shift(surface.nearest_deck(d0));
        let delta: Vec<Point> = (0..n)
            .map(|i| [q.points()[i][0] - s[0] - a.points()[i][0], q.points()[i][1] - s[1] - a.points()[i][1]])
            .collect();
        let mut l2 = 0.0;
        let mut h1 = 0.0;
        for i in 0..n {
            let j = (i + 1) % n;
            l2 += quad_form(&metrics[i], delta[i], delta[i]);
            let dd = [delta[j][0] - delta[i][0], delta[j][1] - delta[i][1]];
            h1 += quad_form(&metrics[i], dd, dd);
        }
        let dt = b.period() - tau;
        best = best.min((tau / n as f64 * l2 + n as f64 / tau * h1 + dt * dt).sqrt());
    }
    Ok(best)
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeReport {
    pub radius: f64,
    pub center_action: f64,
    pub min_action: f64,
    /// `min_action − center_action`.
    pub margin: f64,
    /// Largest `‖Γ̇‖_{L²} = √E` over the probes and the centre.
    pub max_speed_l2: f64,
    #[serde(skip)]
    pub probes: Vec<DiscreteLoop>,
}

/// Evaluates `𝔸^λ` on `count` seeded random points of the loop-space sphere
/// of `radius` around `lp`. Perturbations use the lowest Fourier modes with
/// the component along the loop removed, plus a period perturbation.
pub fn stability_probe(
    surface: &MagneticSurface,
    lambda: f64,
    lp: &DiscreteLoop,
    radius: f64,
    count: usize,
    seed: u64,
) -> Result<ProbeReport> {
    let n = lp.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let center_action = action(lp, surface, lambda)?.value;
    let mut max_speed = energy(lp, surface, false)?.0.sqrt();
    let mut min_action = f64::INFINITY;
    let mut probes = Vec::with_capacity(count);
    let pts = lp.points();
    const MODES: usize = 4;
    for _ in 0..count {
        let mut coef = [[0.0; 4]; MODES + 1];
        for c in coef.iter_mut() {
            for v in c.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        let mut delta = vec![[0.0; 2]; n];
        for (i, d) in delta.iter_mut().enumerate() {
            let s = TAU * i as f64 / n as f64;
            for (m, c) in coef.iter().enumerate() {
                let (cm, sm) = ((m as f64 * s).cos(), (m as f64 * s).sin());
                d[0] += c[0] * cm + c[1] * sm;
                d[1] += c[2] * cm + c[3] * sm;
            }
            let prev = lp.lifted((i + n - 1) % n);
            let next = lp.lifted(i + 1);
            let (prev, next) = if i == 0 {
                let sh = lp.closure_shift();
                ([pts[n - 1][0] - sh[0], pts[n - 1][1] - sh[1]], next)
            } else {
                (prev, next)
            };
            let t = [next[0] - prev[0], next[1] - prev[1]];
            let g = surface.metric(pts[i])?;
            let tt = quad_form(&g, t, t);
            let proj = quad_form(&g, *d, t) / tt;
            d[0] -= proj * t[0];
            d[1] -= proj * t[1];
        }
        let mut dtau = rng.gen_range(-1.0..1.0) * 0.2;
        let tau = lp.period();
        let mut l2 = 0.0;
        let mut h1 = 0.0;
        for i in 0..n {
            let j = (i + 1) % n;
            let g = surface.metric(pts[i])?;
            l2 += quad_form(&g, delta[i], delta[i]);
            let dd = [delta[j][0] - delta[i][0], delta[j][1] - delta[i][1]];
            h1 += quad_form(&g, dd, dd);
        }
        let norm = (tau / n as f64 * l2 + n as f64 / tau * h1 + dtau * dtau).sqrt();
        let scale = radius / norm;
        dtau *= scale;
        let moved: Vec<Point> = pts.iter().zip(&delta).map(|(p, d)| [p[0] + scale * d[0], p[1] + scale * d[1]]).collect();
        let probe = lp.with_points(moved).with_period(tau + dtau);
        let a = action(&probe, surface, lambda)?.value;
        min_action = min_action.min(a);
        max_speed = max_speed.max(energy(&probe, surface, false)?.0.sqrt());
        probes.push(probe);
    }
    Ok(ProbeReport { radius, center_action, min_action, margin: min_action - center_action, max_speed_l2: max_speed, probes })
}

/// The perturbation threshold `Λ = ε / (4 r ‖θ‖∞)`.
pub fn perturbation_threshold(epsilon: f64, r: f64, theta_sup: f64) -> Result<f64> {
    for (what, v) in [("epsilon", epsilon), ("r", r), ("theta_sup", theta_sup)] {
        if !(v > 0.0) {
            return Err(Error::NonPositiveInput { what, value: v });
        }
    }
    Ok(epsilon / (4.0 * r * theta_sup))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuationOptions {
    pub steps: usize,
    /// Largest loop-space distance from the initial waist.
    pub neighborhood: f64,
    pub descent: DescentOptions,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        Self { steps: 10, neighborhood: 0.1, descent: DescentOptions::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContinuationStep {
    pub lambda: f64,
    pub action: f64,
    pub length: f64,
    pub distance: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ContinuedWaist {
    pub waist: Waist,
    pub trace: Vec<ContinuationStep>,
}

/// Follows a waist of `𝔸` to a waist of `𝔸^λ` for `λ = λ_target·k/steps`,
/// seeding each descent with the previous minimizer.
pub fn continue_waist(
    surface: &MagneticSurface,
    waist: &Waist,
    lambda_target: f64,
    opts: &ContinuationOptions,
) -> Result<ContinuedWaist> {
    if lambda_target == 0.0 {
        return Ok(ContinuedWaist { waist: waist.clone(), trace: Vec::new() });
    }
    if opts.steps == 0 {
        return Err(Error::InvalidInput("continuation needs at least one step".into()));
    }
    let mut current = waist.clone();
    let mut reached = waist.lambda;
    let mut trace = Vec::with_capacity(opts.steps);
    for k in 1..=opts.steps {
        let lambda = lambda_target * k as f64 / opts.steps as f64;
        let lost = |reason: String| Error::ContinuationLost { lambda_reached: reached, failed_at: lambda, reason };
        let outcome = find_waist(surface, lambda, &current.loop_, &opts.descent)
            .map_err(|e| lost(format!("descent failed: {e}")))?;
        let next = match outcome {
            WaistOutcome::Converged(w) => *w,
            WaistOutcome::Collapsed { tau, .. } => return Err(lost(format!("collapsed (tau = {tau:e})"))),
            WaistOutcome::NotConverged { gradient_norm, .. } => {
                return Err(lost(format!("not converged (gradient {gradient_norm:e})")))
            }
        };
        let distance = loop_distance(&waist.loop_, &next.loop_, surface)?;
        if distance > opts.neighborhood {
            return Err(lost(format!("left the neighborhood (distance {distance})")));
        }
        trace.push(ContinuationStep {
            lambda,
            action: next.action.value,
            length: next.length,
            distance,
            iterations: next.iterations,
        });
        reached = lambda;
        current = next;
    }
    Ok(ContinuedWaist { waist: current, trace })
}

/// Integrates the flow from the first loop point along its discrete tangent
/// for one period and returns the Sasaki distance to the start.
pub fn reintegration_error(surface: &MagneticSurface, lambda: f64, lp: &DiscreteLoop, tol: f64) -> Result<f64> {
    let n = lp.len();
    let p0 = lp.points()[0];
    let sh = lp.closure_shift();
    let prev = [lp.points()[n - 1][0] - sh[0], lp.points()[n - 1][1] - sh[1]];
    let next = lp.points()[1];
    let start = UnitTangentState::new(surface, p0, [next[0] - prev[0], next[1] - prev[1]])?;
    let length = curves::loop_length(lp, surface)?;
    let tr = flow::integrate_with(surface, lambda, &start, (0.0, length), FlowOptions::with_tol(tol))?;
    let end = tr.last().state;
    surface.sasaki_distance(&start, &end)
}
