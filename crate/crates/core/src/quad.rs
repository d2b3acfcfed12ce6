//! Quadrature helpers shared by the geometry, curves and orbits modules.

/// Adaptive (double-exponential) quadrature of `f` over `[a, b]`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    quadrature::integrate(f, a, b, tol).integral
}

/// Nested quadrature over the rectangle `[x0, x1] × [y0, y1]`.
pub fn integrate_2d<F: Fn(f64, f64) -> f64>(
    f: F,
    (x0, x1): (f64, f64),
    (y0, y1): (f64, f64),
    tol: f64,
) -> f64 {
    integrate(|y| integrate(|x| f(x, y), x0, x1, tol), y0, y1, tol)
}

/// Three-point Gauss–Legendre nodes on `[0, 1]` with their weights.
pub const GAUSS3: [(f64, f64); 3] = [
    (0.112_701_665_379_258_31, 5.0 / 18.0),
    (0.5, 8.0 / 18.0),
    (0.887_298_334_620_741_7, 5.0 / 18.0),
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss3_is_exact_for_quintics() {
        let approx: f64 = GAUSS3.iter().map(|&(t, w)| w * t.powi(5)).sum();
        assert!((approx - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn nested_area() {
        let v = integrate_2d(|x, y| x * y, (0.0, 2.0), (0.0, 3.0), 1e-12);
        assert!((v - 9.0).abs() < 1e-10);
    }
}
