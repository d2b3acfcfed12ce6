//! Experiment configuration: JSON file, `--set key=value` overrides, and
//! validation before any computation.

use anyhow::{anyhow, bail, Context, Result};
use magzoll::geometry::{Scalar, SurfaceSpec};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub surface: SurfaceSpec,
    pub lambda: f64,
    /// Seed for every random choice (stability probes).
    pub seed: u64,
    pub tol: f64,
    pub simulate: SimulateConfig,
    pub closed_orbit: ClosedOrbitConfig,
    pub zoll: ZollConfig,
    pub dichotomy: DichotomyConfig,
    pub waist: WaistConfig,
    pub continuation: ContinuationConfig,
    pub drift: DriftConfig,
    pub diagnostics: DiagnosticsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            surface: SurfaceSpec::FlatTorus { lattice: [[1.0, 0.0], [0.0, 1.0]], f: "1".into(), orientation: None },
            lambda: 1.0,
            seed: 0,
            tol: 1e-10,
            simulate: SimulateConfig::default(),
            closed_orbit: ClosedOrbitConfig::default(),
            zoll: ZollConfig::default(),
            dichotomy: DichotomyConfig::default(),
            waist: WaistConfig::default(),
            continuation: ContinuationConfig::default(),
            drift: DriftConfig::default(),
            diagnostics: DiagnosticsConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub start: [f64; 2],
    /// Angle of the initial velocity from `∂_x` in the oriented frame.
    pub angle: f64,
    pub t_end: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self { start: [0.5, 0.5], angle: 0.0, t_end: 10.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClosedOrbitConfig {
    pub start: [f64; 2],
    pub angle: f64,
    /// Defaults to the Zoll-check horizon.
    pub horizon: Option<f64>,
    pub return_tol: f64,
    pub resample: usize,
}

impl Default for ClosedOrbitConfig {
    fn default() -> Self {
        Self { start: [0.5, 0.5], angle: 0.0, horizon: None, return_tol: 1e-7, resample: 1024 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ZollConfig {
    pub n_base: usize,
    pub n_dir: usize,
    pub horizon: Option<f64>,
    pub return_tol: f64,
    pub period_tol: f64,
    pub stop_on_witness: bool,
}

impl Default for ZollConfig {
    fn default() -> Self {
        Self { n_base: 12, n_dir: 8, horizon: None, return_tol: 1e-7, period_tol: 1e-6, stop_on_witness: false }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DichotomyConfig {
    pub epsilon: f64,
    /// Self-intersections required of a long orbit.
    pub n: usize,
    pub n_base: usize,
    pub n_dir: usize,
    pub horizon: Option<f64>,
    pub return_tol: f64,
}

impl Default for DichotomyConfig {
    fn default() -> Self {
        Self { epsilon: 0.05, n: 1, n_base: 4, n_dir: 4, horizon: None, return_tol: 1e-7 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LoopSeed {
    /// Torus or plane: `y = y0 + amplitude·sin(2πs)` winding once in `x`.
    Line { y: f64, amplitude: f64 },
    /// Spheres: `θ = theta + amplitude·sin φ`, once around.
    Latitude { theta: f64, amplitude: f64 },
    Circle { center: [f64; 2], radius: f64 },
    /// A loop file as written by the `waist` command.
    File { path: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WaistConfig {
    pub seed_loop: LoopSeed,
    pub points: usize,
    /// Initial period; defaults to the seed length.
    pub period: Option<f64>,
    pub grad_tol: f64,
    pub max_iter: usize,
    pub tau_min: f64,
    pub probe_radius: f64,
    pub probe_count: usize,
}

impl Default for WaistConfig {
    fn default() -> Self {
        Self {
            seed_loop: LoopSeed::Line { y: 0.3, amplitude: 0.05 },
            points: 128,
            period: None,
            grad_tol: 1e-10,
            max_iter: 20_000,
            tau_min: 1e-4,
            probe_radius: 0.05,
            probe_count: 32,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContinuationConfig {
    pub target: f64,
    pub steps: usize,
    pub neighborhood: f64,
}

impl Default for ContinuationConfig {
    fn default() -> Self {
        Self { target: 0.01, steps: 10, neighborhood: 0.1 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriftConfig {
    pub e: f64,
    #[serde(rename = "L")]
    pub l: f64,
    pub epsilon: f64,
    pub c: f64,
    pub loops: usize,
    pub tol: f64,
    /// Sweep values; empty means the top-level `lambda`.
    pub lambdas: Vec<f64>,
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self { e: 1.0, l: 1.0, epsilon: 0.0, c: 2.0, loops: 50, tol: 1e-12, lambdas: Vec::new() }
    }
}

/// Either explicit constants, a constant-curvature surface (`euler`,
/// `curvature`, `constant_f`), or nothing (constants of `surface`).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsConfig {
    pub area: Option<Scalar>,
    pub euler: Option<i32>,
    pub f_total: Option<Scalar>,
    pub curvature: Option<f64>,
    pub constant_f: Option<f64>,
}

/// Loads `path` (or the defaults) and applies the overrides.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut value = serde_json::to_value(ExperimentConfig::default())?;
    if let Some(p) = path {
        let text = std::fs::read_to_string(p).with_context(|| format!("config: cannot read {}", p.display()))?;
        let file_cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| anyhow!("config: {}: {e}", p.display()))?;
        // re-serialize so every key has a slot for the overrides
        value = serde_json::to_value(file_cfg)?;
    }
    for item in overrides {
        let (key, raw) = item.split_once('=').ok_or_else(|| anyhow!("config: --set expects key=value, got {item:?}"))?;
        let parsed = serde_json::from_str::<Value>(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        set_path(&mut value, key, parsed).with_context(|| format!("config: --set {key}"))?;
    }
    let cfg: ExperimentConfig = serde_json::from_value(value).map_err(|e| anyhow!("config: {e}"))?;
    validate(&cfg)?;
    Ok(cfg)
}

fn set_path(root: &mut Value, key: &str, v: Value) -> Result<()> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node.as_object_mut().ok_or_else(|| anyhow!("{} is not a section", parts[..i].join(".")))?;
        if i + 1 == parts.len() {
            // optional surface keys are omitted when unset; serde checks them
            if !obj.contains_key(*part) && parts[0] != "surface" {
                bail!("unknown key {key:?}");
            }
            // string slots (field expressions) keep the raw text, so `f=0` stays "0"
            let v = match (obj.get(*part), v) {
                (Some(Value::String(_)), Value::Number(n)) => Value::String(n.to_string()),
                (_, v) => v,
            };
            obj.insert(part.to_string(), v);
            return Ok(());
        }
        node = obj.get_mut(*part).ok_or_else(|| anyhow!("unknown key {key:?}"))?;
    }
    unreachable!("split yields at least one part")
}

fn validate(cfg: &ExperimentConfig) -> Result<()> {
    let positive = [
        ("tol", cfg.tol),
        ("closed_orbit.return_tol", cfg.closed_orbit.return_tol),
        ("zoll.return_tol", cfg.zoll.return_tol),
        ("zoll.period_tol", cfg.zoll.period_tol),
        ("dichotomy.epsilon", cfg.dichotomy.epsilon),
        ("waist.grad_tol", cfg.waist.grad_tol),
        ("drift.e", cfg.drift.e),
        ("drift.c", cfg.drift.c),
        ("drift.tol", cfg.drift.tol),
        ("continuation.neighborhood", cfg.continuation.neighborhood),
    ];
    for (key, v) in positive {
        if !(v > 0.0) {
            bail!("config: {key} must be positive (got {v})");
        }
    }
    if !cfg.lambda.is_finite() {
        bail!("config: lambda must be finite");
    }
    if cfg.zoll.n_base == 0 || cfg.zoll.n_dir == 0 {
        bail!("config: zoll grid must be non-empty");
    }
    if cfg.waist.points < magzoll::curves::MIN_POINTS {
        bail!("config: waist.points must be at least {}", magzoll::curves::MIN_POINTS);
    }
    if cfg.continuation.steps == 0 {
        bail!("config: continuation.steps must be positive");
    }
    if cfg.drift.loops == 0 {
        bail!("config: drift.loops must be positive");
    }
    cfg.surface.build().map_err(|e| anyhow!("config: surface: {e}"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_reach_nested_keys() {
        let cfg = load(None, &["lambda=10".into(), "zoll.n_base=3".into(), "surface.f=1 + x".into()]).unwrap();
        let zero = load(None, &["surface.f=0".into()]).unwrap();
        assert!(matches!(zero.surface, SurfaceSpec::FlatTorus { ref f, .. } if f == "0"));
        assert_eq!(cfg.lambda, 10.0);
        assert_eq!(cfg.zoll.n_base, 3);
        match cfg.surface {
            SurfaceSpec::FlatTorus { f, .. } => assert_eq!(f, "1 + x"),
            _ => panic!("surface kind changed"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(load(None, &["lamda=1".into()]).is_err());
        assert!(load(None, &["zoll.nbase=1".into()]).is_err());
        assert!(load(None, &["tol=-1".into()]).is_err());
    }
}
