//! Number formatting, CSV rows and SVG rendering of chart curves.

use crate::geometry::{MagneticSurface, Point};
use std::f64::consts::TAU;
use std::fmt::Write;

/// Round-trippable formatting with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    format!("{x:.16e}")
}

pub fn csv_row(values: &[f64]) -> String {
    let mut out = values.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(",");
    out.push('\n');
    out
}

/// Splits a covering-space path into pieces drawn inside the fundamental
/// domain (torus: `[0,1)²`; spheres: `φ ∈ [0, 2π)`).
pub fn reduced_path(surface: &MagneticSurface, pts: &[Point]) -> Vec<Vec<Point>> {
    let mut pieces: Vec<Vec<Point>> = Vec::new();
    let mut current: Vec<Point> = Vec::new();
    let mut last_cell = None;
    for &q in pts {
        let k = surface.cell_of(q);
        let shift = surface.deck_shift(k);
        let r = [q[0] - shift[0], q[1] - shift[1]];
        if last_cell.is_some_and(|c| c != k) && !current.is_empty() {
            pieces.push(std::mem::take(&mut current));
        }
        last_cell = Some(k);
        current.push(r);
    }
    if !current.is_empty() {
        pieces.push(current);
    }
    pieces
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Renders curves given as lists of pieces. Axes: torus `(x, y) ∈ [0,1]²`,
/// spheres `(φ, θ) ∈ [0,2π] × [0,L]`, plane the bounding box.
pub fn svg_curves(curves: &[Vec<Vec<Point>>], surface: &MagneticSurface) -> String {
    let size = 600.0;
    let margin = 20.0;
    // screen coordinates (u, w) before scaling
    let to_uw = |q: Point| -> Point {
        if surface.is_sphere() {
            [q[1], q[0]]
        } else {
            q
        }
    };
    let (u0, u1, w0, w1) = if surface.is_torus() {
        (0.0, 1.0, 0.0, 1.0)
    } else if let Some(l) = surface.theta_range() {
        (0.0, TAU, 0.0, l)
    } else {
        let mut b = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
        for q in curves.iter().flatten().flatten() {
            b[0] = b[0].min(q[0]);
            b[1] = b[1].max(q[0]);
            b[2] = b[2].min(q[1]);
            b[3] = b[3].max(q[1]);
        }
        if !b[0].is_finite() {
            b = [0.0, 1.0, 0.0, 1.0];
        }
        let pad = 0.05 * (b[1] - b[0]).max(b[3] - b[2]).max(1e-9);
        (b[0] - pad, b[1] + pad, b[2] - pad, b[3] + pad)
    };
    let scale = (size - 2.0 * margin) / (u1 - u0).max(w1 - w0);
    let width = 2.0 * margin + scale * (u1 - u0);
    let height = 2.0 * margin + scale * (w1 - w0);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.1}" height="{height:.1}" viewBox="0 0 {width:.1} {height:.1}">"#
    );
    let _ = writeln!(
        out,
        r##"<rect x="{margin}" y="{margin}" width="{:.3}" height="{:.3}" fill="none" stroke="#999" stroke-width="1"/>"##,
        scale * (u1 - u0),
        scale * (w1 - w0)
    );
    for (i, curve) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        for piece in curve {
            if piece.len() < 2 {
                continue;
            }
            let mut pts = String::new();
            for &q in piece {
                let [u, w] = to_uw(q);
                let x = margin + scale * (u - u0);
                let y = height - margin - scale * (w - w0);
                let _ = write!(pts, "{x:.3},{y:.3} ");
            }
            let _ = writeln!(
                out,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1"/>"#,
                pts.trim_end()
            );
        }
    }
    out.push_str("</svg>\n");
    out
}
