//! `magzoll`: batch driver for the magnetic geodesic flow laboratory.
//!
//! Every command reads a JSON config (`--config`, plus `--set key=value`
//! overrides), prints a JSON report embedding the resolved config and the
//! tool version, and with `--out DIR` writes the report and its tables.

mod config;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};
use config::{ExperimentConfig, LoopSeed};
use magzoll::curves::{self, DiscreteLoop};
use magzoll::diagnostics::{self, DriftSetup, SystemConstants};
use magzoll::flow::{self, FlowOptions};
use magzoll::orbits::{self, OrbitOptions, ZollOptions};
use magzoll::variational::{self, ContinuationOptions, DescentOptions, WaistOutcome};
use magzoll::{MagneticSurface, Point, UnitTangentState};
use rayon::prelude::*;
use serde_json::{json, Value};
use std::f64::consts::TAU;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "magzoll", version, about = "Magnetic geodesic flow laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set zoll.n_base=6`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Directory for reports, tables and plots.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Also write SVG plots (needs --out).
    #[arg(long, global = true)]
    svg: bool,
    /// Seed for all random sampling (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for grid sweeps.
    #[arg(long, global = true, env = "MAGZOLL_JOBS")]
    jobs: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Integrate one trajectory.
    Simulate,
    /// Find the closed orbit through one start.
    ClosedOrbit,
    /// Certify or refute the Zoll property on a sample grid.
    ZollCheck,
    /// Classify closed orbits as short or long.
    Dichotomy,
    /// Search a waist of the action from a seed loop.
    Waist,
    /// Follow a waist to a magnetic waist.
    Continue,
    /// Measure the guiding-centre drift and its lower bound.
    Drift,
    /// Closed-form system diagnostics.
    Diagnostics,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::ClosedOrbit => "closed-orbit",
            Command::ZollCheck => "zoll-check",
            Command::Dichotomy => "dichotomy",
            Command::Waist => "waist",
            Command::Continue => "continue",
            Command::Drift => "drift",
            Command::Diagnostics => "diagnostics",
        }
    }
}

/// Files produced by a command, written only with `--out`.
struct Output {
    dir: Option<PathBuf>,
    svg: bool,
    files: Vec<(String, String)>,
}

impl Output {
    fn table(&mut self, name: &str, content: String) {
        self.files.push((name.to_string(), content));
    }

    fn plot(&mut self, name: &str, content: impl FnOnce() -> String) {
        if self.svg {
            self.files.push((name.to_string(), content()));
        }
    }

    fn finish(self, command: &str, report: &Value) -> Result<()> {
        let text = serde_json::to_string_pretty(report)? + "\n";
        print!("{text}");
        if let Some(dir) = &self.dir {
            std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
            let mut files = self.files;
            files.push((format!("{command}.json"), text));
            for (name, content) in files {
                let path = dir.join(&name);
                std::fs::write(&path, content).with_context(|| format!("cannot write {}", path.display()))?;
            }
        }
        Ok(())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("magzoll {}: error: {e:#}", cli.command.name());
            ExitCode::from(1)
        }
    }
}

fn run(cli: &Cli) -> Result<ExitCode> {
    let mut cfg = config::load(cli.config.as_deref(), &cli.set)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .map_err(|e| anyhow!("cannot start {jobs} workers: {e}"))?;
    }
    if cli.svg && cli.out.is_none() {
        eprintln!("magzoll: --svg has no effect without --out");
    }
    let surface = cfg.surface.build()?;
    let mut out = Output { dir: cli.out.clone(), svg: cli.svg, files: Vec::new() };
    let command = cli.command;
    let (result, code) = match command {
        Command::Simulate => (simulate(&cfg, &surface, &mut out)?, 0),
        Command::ClosedOrbit => (closed_orbit(&cfg, &surface, &mut out)?, 0),
        Command::ZollCheck => zoll_check(&cfg, &surface, &mut out)?,
        Command::Dichotomy => (dichotomy(&cfg, &surface, &mut out)?, 0),
        Command::Waist => (waist(&cfg, &surface, &mut out)?, 0),
        Command::Continue => (continuation(&cfg, &surface, &mut out)?, 0),
        Command::Drift => (drift(&cfg, &mut out)?, 0),
        Command::Diagnostics => (diagnostics(&cfg, &surface)?, 0),
    };
    let report = json!({
        "tool": "magzoll",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command.name(),
        "config": serde_json::to_value(&cfg)?,
        "result": result,
    });
    out.finish(command.name(), &report)?;
    Ok(ExitCode::from(code))
}

fn orbit_options(cfg: &ExperimentConfig, return_tol: f64, resample: usize) -> OrbitOptions {
    OrbitOptions { return_tol, tol: cfg.tol, resample }
}

fn simulate(cfg: &ExperimentConfig, surface: &MagneticSurface, out: &mut Output) -> Result<Value> {
    let s = &cfg.simulate;
    let start = UnitTangentState::from_angle(surface, s.start, s.angle)?;
    let tr = flow::integrate_with(surface, cfg.lambda, &start, (0.0, s.t_end), FlowOptions::with_tol(cfg.tol))?;
    let first_integral = orbits::first_integral(surface, cfg.lambda, &start).ok().map(|i0| {
        tr.samples
            .iter()
            .filter_map(|p| orbits::first_integral(surface, cfg.lambda, &p.state).ok())
            .map(|i| (i - i0).abs())
            .fold(0.0, f64::max)
    });
    out.table("trajectory.csv", tr.to_csv());
    out.plot("trajectory.svg", || tr.to_svg(surface));
    let st = tr.step_stats;
    Ok(json!({
        "samples": tr.samples.len(),
        "end": tr.last().state,
        "end_time": tr.last().t,
        "accepted_steps": st.accepted,
        "rejected_steps": st.rejected,
        "max_step": st.max_step,
        "min_step": st.min_step,
        "max_speed_deviation": st.max_speed_deviation,
        "first_integral_drift": first_integral,
    }))
}

fn closed_orbit(cfg: &ExperimentConfig, surface: &MagneticSurface, out: &mut Output) -> Result<Value> {
    let c = &cfg.closed_orbit;
    let start = UnitTangentState::from_angle(surface, c.start, c.angle)?;
    let horizon = c.horizon.unwrap_or_else(|| orbits::default_horizon(surface, cfg.lambda));
    let opts = orbit_options(cfg, c.return_tol, c.resample);
    match orbits::find_closed_orbit(surface, cfg.lambda, &start, horizon, &opts)? {
        Some(orbit) => {
            out.table("orbit_loop.json", serde_json::to_string_pretty(&orbit.orbit_loop.to_json())? + "\n");
            out.plot("orbit.svg", || orbit.orbit_loop.to_svg(surface));
            let separation = orbits::reversal_separation(surface, cfg.lambda, &orbit, cfg.tol)?;
            Ok(json!({ "closed": true, "horizon": horizon, "reversal_separation": separation, "orbit": orbit }))
        }
        None => {
            let outcome = orbits::return_scan(surface, cfg.lambda, &start, horizon, &opts)?;
            Ok(json!({ "closed": false, "horizon": horizon, "outcome": outcome }))
        }
    }
}

fn zoll_check(cfg: &ExperimentConfig, surface: &MagneticSurface, out: &mut Output) -> Result<(Value, u8)> {
    let z = &cfg.zoll;
    let opts = ZollOptions {
        n_base: z.n_base,
        n_dir: z.n_dir,
        horizon: z.horizon,
        orbit: orbit_options(cfg, z.return_tol, OrbitOptions::default().resample),
        period_tol: z.period_tol,
        stop_on_witness: z.stop_on_witness,
        build_orbits: true,
    };
    let report = orbits::zoll_check(surface, cfg.lambda, &opts)?;
    out.table("zoll_samples.csv", report.to_csv());
    out.plot("zoll_orbits.svg", || {
        let curves: Vec<_> = report
            .orbits
            .iter()
            .take(6)
            .map(|o| {
                let mut pts = o.orbit_loop.points().to_vec();
                pts.push(o.orbit_loop.lifted(o.orbit_loop.len()));
                magzoll::io::reduced_path(surface, &pts)
            })
            .collect();
        magzoll::io::svg_curves(&curves, surface)
    });
    let separations = report
        .orbits
        .par_iter()
        .map(|o| orbits::reversal_separation(surface, cfg.lambda, o, cfg.tol))
        .collect::<magzoll::Result<Vec<_>>>()?;
    let min_separation = separations.into_iter().reduce(f64::min);
    let code = if report.is_zoll { 0 } else { 2 };
    let summary = json!({
        "is_zoll": report.is_zoll,
        "common_period": report.common_period,
        "period_spread": report.period_spread,
        "sample_count": report.sample_count,
        "horizon": report.horizon,
        "witness": report.witness,
        "witness_index": report.witness_index,
        "witness_distance": report.witness_distance,
        "min_reversal_separation": min_separation,
        "samples": report.samples,
    });
    Ok((summary, code))
}

fn dichotomy(cfg: &ExperimentConfig, surface: &MagneticSurface, out: &mut Output) -> Result<Value> {
    let d = &cfg.dichotomy;
    let (f_min, f_max) = orbits::probe_extremes(surface);
    let (window, threshold) = orbits::dichotomy_window(cfg.lambda, f_min, f_max, d.epsilon)?;
    let grid = orbits::sample_grid(surface, d.n_base, d.n_dir)?;
    let horizon = d.horizon.unwrap_or_else(|| orbits::default_horizon(surface, cfg.lambda));
    let opts = orbit_options(cfg, d.return_tol, OrbitOptions::default().resample);
    let found: Vec<_> = grid
        .par_iter()
        .map(|(start, _)| orbits::find_closed_orbit(surface, cfg.lambda, start, horizon, &opts))
        .collect::<magzoll::Result<_>>()?;
    let mut csv = String::from("start_x,start_y,dir_angle,period,length,self_int,class\n");
    let mut rows = Vec::with_capacity(found.len());
    let (mut short, mut long, mut violation, mut open) = (0, 0, 0, 0);
    let fmt = magzoll::io::fmt_f64;
    for ((start, angle), orbit) in grid.iter().zip(&found) {
        let class = match orbit {
            Some(o) => {
                let class = orbits::classify_dichotomy(o, cfg.lambda, f_min, f_max, d.epsilon, d.n)?;
                match class {
                    orbits::OrbitClass::Short => short += 1,
                    orbits::OrbitClass::Long => long += 1,
                    orbits::OrbitClass::Violation => violation += 1,
                }
                serde_json::to_value(class)?
            }
            None => {
                open += 1;
                json!("open")
            }
        };
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            fmt(start.q[0]),
            fmt(start.q[1]),
            fmt(*angle),
            orbit.as_ref().map(|o| fmt(o.period)).unwrap_or_default(),
            orbit.as_ref().map(|o| fmt(o.length)).unwrap_or_default(),
            orbit.as_ref().map(|o| o.self_int.to_string()).unwrap_or_default(),
            class.as_str().unwrap_or_default()
        ));
        rows.push(json!({
            "start": start,
            "dir_angle": angle,
            "period": orbit.as_ref().map(|o| o.period),
            "length": orbit.as_ref().map(|o| o.length),
            "self_int": orbit.as_ref().map(|o| o.self_int),
            "class": class,
        }));
    }
    out.table("dichotomy.csv", csv);
    Ok(json!({
        "f_min": f_min,
        "f_max": f_max,
        "short_window": window,
        "long_threshold": threshold,
        "horizon": horizon,
        "counts": { "short": short, "long": long, "violation": violation, "open": open },
        "orbits": rows,
    }))
}

fn seed_loop(cfg: &ExperimentConfig, surface: &MagneticSurface) -> Result<DiscreteLoop> {
    let w = &cfg.waist;
    let n = w.points;
    let pts: Vec<Point> = match &w.seed_loop {
        LoopSeed::File { path } => {
            let text = std::fs::read_to_string(path).with_context(|| format!("cannot read loop file {path}"))?;
            let lp = DiscreteLoop::from_json(surface, &text)?;
            return Ok(match w.period {
                Some(p) => lp.with_period(p),
                None => lp,
            });
        }
        LoopSeed::Line { y, amplitude } => {
            let v = match surface.kind() {
                magzoll::geometry::SurfaceKind::FlatTorus { lattice } => lattice[0],
                _ => return Err(anyhow!("a line seed needs a torus")),
            };
            let pts = (0..n)
                .map(|i| {
                    let s = i as f64 / n as f64;
                    [s * v[0], s * v[1] + y + amplitude * (TAU * s).sin()]
                })
                .collect();
            let lp = DiscreteLoop::with_winding(surface, pts, 1.0, [1, 0])?;
            let period = w.period.map_or_else(|| curves::loop_length(&lp, surface), Ok)?;
            return Ok(lp.with_period(period));
        }
        LoopSeed::Latitude { theta, amplitude } => {
            if !surface.is_sphere() {
                return Err(anyhow!("a latitude seed needs a sphere"));
            }
            (0..n)
                .map(|i| {
                    let p = TAU * i as f64 / n as f64;
                    [theta + amplitude * p.sin(), p]
                })
                .collect()
        }
        LoopSeed::Circle { center, radius } => (0..n)
            .map(|i| {
                let a = TAU * i as f64 / n as f64;
                [center[0] + radius * a.cos(), center[1] + radius * a.sin()]
            })
            .collect(),
    };
    let lp = DiscreteLoop::new(surface, pts, 1.0)?;
    let period = match w.period {
        Some(p) => p,
        None => curves::loop_length(&lp, surface)?,
    };
    Ok(lp.with_period(period))
}

fn descent_options(cfg: &ExperimentConfig) -> DescentOptions {
    let w = &cfg.waist;
    DescentOptions {
        grad_tol: w.grad_tol,
        max_iter: w.max_iter,
        tau_min: w.tau_min,
        probe_radius: w.probe_radius,
        probe_count: w.probe_count,
        seed: cfg.seed,
    }
}

fn outcome_json(outcome: &WaistOutcome) -> Result<Value> {
    Ok(serde_json::to_value(outcome)?)
}

fn waist(cfg: &ExperimentConfig, surface: &MagneticSurface, out: &mut Output) -> Result<Value> {
    let seed = seed_loop(cfg, surface)?;
    let outcome = variational::find_waist(surface, cfg.lambda, &seed, &descent_options(cfg))?;
    if let WaistOutcome::Converged(w) = &outcome {
        out.table("waist_loop.json", serde_json::to_string_pretty(&w.loop_.to_json())? + "\n");
        out.plot("waist.svg", || w.loop_.to_svg(surface));
    }
    outcome_json(&outcome)
}

fn continuation(cfg: &ExperimentConfig, surface: &MagneticSurface, out: &mut Output) -> Result<Value> {
    let seed = seed_loop(cfg, surface)?;
    let descent = descent_options(cfg);
    let outcome = variational::find_waist(surface, 0.0, &seed, &descent)?;
    let start = match outcome {
        WaistOutcome::Converged(w) => *w,
        other => return Err(anyhow!("variational: no waist at lambda = 0: {}", outcome_json(&other)?)),
    };
    let c = &cfg.continuation;
    let opts = ContinuationOptions { steps: c.steps, neighborhood: c.neighborhood, descent };
    let cont = variational::continue_waist(surface, &start, c.target, &opts)?;
    let reintegration = variational::reintegration_error(surface, c.target, &cont.waist.loop_, cfg.tol.min(1e-10))?;
    let image_distance = surface_distance(surface, &start.loop_, &cont.waist.loop_)?;
    let threshold = threshold_estimate(surface, &start, cfg.seed)?;
    out.table("continued_loop.json", serde_json::to_string_pretty(&cont.waist.loop_.to_json())? + "\n");
    out.plot("continuation.svg", || {
        let path = |lp: &DiscreteLoop| {
            let mut pts = lp.points().to_vec();
            pts.push(lp.lifted(lp.len()));
            magzoll::io::reduced_path(surface, &pts)
        };
        magzoll::io::svg_curves(&[path(&start.loop_), path(&cont.waist.loop_)], surface)
    });
    Ok(json!({
        "initial": start,
        "continued": cont.waist,
        "trace": cont.trace,
        "reintegration_error": reintegration,
        "max_chart_distance": image_distance,
        "threshold": threshold,
    }))
}

/// Largest chart distance from a point of `b` to the polygon of `a`'s points.
fn surface_distance(surface: &MagneticSurface, a: &DiscreteLoop, b: &DiscreteLoop) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for q in b.points() {
        let mut best = f64::INFINITY;
        for p in a.points() {
            best = best.min(surface.base_distance(*p, *q)?);
        }
        worst = worst.max(best);
    }
    Ok(worst)
}

/// Empirical `Λ = ε/(4 r ‖θ‖∞)` around the initial waist: `ε` the probe
/// margin, `r` the largest probe speed, `‖θ‖∞` the sup of the primitive of
/// `f μ` over the probe points (spheres of revolution only).
fn threshold_estimate(surface: &MagneticSurface, waist: &variational::Waist, seed: u64) -> Result<Value> {
    if !surface.is_sphere() || !(waist.probe_radius > 0.0) {
        return Ok(Value::Null);
    }
    let probe = variational::stability_probe(surface, 0.0, &waist.loop_, waist.probe_radius, 32, seed)?;
    let mut theta_sup: f64 = 0.0;
    for lp in probe.probes.iter().chain(std::iter::once(&waist.loop_)) {
        for q in lp.points() {
            let (a, _, _) = surface.warp(q[0])?;
            let n = 64;
            let h = q[0] / n as f64;
            let mut prim = 0.0;
            for k in 0..n {
                let s = (k as f64 + 0.5) * h;
                prim += surface.f([s, q[1]]) * surface.warp(s)?.0 * h;
            }
            theta_sup = theta_sup.max(prim.abs() / a);
        }
    }
    let lambda_max = variational::perturbation_threshold(probe.margin, probe.max_speed_l2, theta_sup).ok();
    Ok(json!({
        "epsilon": probe.margin,
        "r": probe.max_speed_l2,
        "theta_sup": theta_sup,
        "lambda_max": lambda_max,
    }))
}

fn drift(cfg: &ExperimentConfig, out: &mut Output) -> Result<Value> {
    let d = &cfg.drift;
    let lambdas = if d.lambdas.is_empty() { vec![cfg.lambda] } else { d.lambdas.clone() };
    let template = DriftSetup::new(d.e, d.l, lambdas[0], d.epsilon)?.with_c(d.c);
    let rows = diagnostics::drift_sweep(&lambdas, &template, d.loops, d.tol)?;
    let bounds = lambdas
        .iter()
        .map(|&l| diagnostics::drift_bound(&DriftSetup::new(d.e, d.l, l, d.epsilon)?.with_c(d.c)))
        .collect::<magzoll::Result<Vec<_>>>()?;
    out.table("drift.csv", diagnostics::drift_csv(&rows));
    Ok(json!({
        "rows": rows,
        "bounds": bounds,
        "guiding_center": lambdas.iter().map(|&l| diagnostics::guiding_center_drift(d.e, d.l, l)).collect::<Vec<_>>(),
    }))
}

fn diagnostics(cfg: &ExperimentConfig, surface: &MagneticSurface) -> Result<Value> {
    let d = &cfg.diagnostics;
    let consts = match (&d.area, d.euler, &d.f_total, d.curvature, d.constant_f) {
        (Some(a), Some(chi), Some(ft), _, _) => SystemConstants::new(a.value()?, chi, ft.value()?)?,
        (None, Some(chi), None, Some(k), Some(f)) => SystemConstants::constant_curvature(chi, k, f)?,
        (None, None, None, _, _) => SystemConstants::from_surface(surface)?,
        _ => {
            return Err(anyhow!(
                "config: diagnostics needs area, euler and f_total, or euler, curvature and constant_f"
            ))
        }
    };
    let report = diagnostics::report(&consts, cfg.lambda, d.curvature, d.constant_f);
    Ok(json!({
        "report": report,
        "notes": {
            "systolic_value": "2*pi/(lambda*f_avg + sqrt(lambda^2*f_avg^2 + 2*pi*chi/A))",
            "systolic_value_literal": "2*pi/(lambda*f_avg + sqrt(lambda^2*f_avg^2 + 2*pi/A))",
            "lambda_zero": "sqrt(-2*pi*chi*A)/|f_total|",
        },
    }))
}
