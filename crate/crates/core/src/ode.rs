//! Dormand–Prince 5(4) stepping for autonomous four-dimensional systems
//! (the stage times are not needed).

pub type State = [f64; 4];

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;

const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;

// fifth-order minus embedded fourth-order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

#[inline]
fn axpy(y: &State, terms: &[(f64, &State)], h: f64) -> State {
    let mut out = *y;
    for (c, k) in terms {
        for i in 0..4 {
            out[i] += h * c * k[i];
        }
    }
    out
}

/// One Dormand–Prince step of size `h` from `y`.
///
/// Returns the fifth-order solution and the max-norm of the embedded error
/// estimate.
pub fn dopri_step<E, F>(rhs: &F, y: &State, h: f64) -> Result<(State, f64), E>
where
    F: Fn(&State) -> Result<State, E>,
{
    let k1 = rhs(y)?;
    let k2 = rhs(&axpy(y, &[(A21, &k1)], h))?;
    let k3 = rhs(&axpy(y, &[(A31, &k1), (A32, &k2)], h))?;
    let k4 = rhs(&axpy(y, &[(A41, &k1), (A42, &k2), (A43, &k3)], h))?;
    let k5 = rhs(&axpy(y, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)], h))?;
    let k6 = rhs(&axpy(y, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)], h))?;
    let y5 = axpy(y, &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)], h);
    let k7 = rhs(&y5)?;
    let mut err: f64 = 0.0;
    for i in 0..4 {
        let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        err = err.max(e.abs());
    }
    Ok((y5, err))
}

/// Step-size factor from the scaled error `err/tol`.
#[inline]
pub fn step_factor(scaled_err: f64) -> f64 {
    if scaled_err <= 0.0 {
        5.0
    } else {
        (0.9 * scaled_err.powf(-0.2)).clamp(0.2, 5.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn harmonic(y: &State) -> Result<State, ()> {
        Ok([y[1], -y[0], y[3], -y[2]])
    }

    #[test]
    fn fifth_order_convergence() {
        let run = |n: usize| {
            let h = 1.0 / n as f64;
            let mut y = [1.0, 0.0, 0.0, 1.0];
            for _ in 0..n {
                y = dopri_step(&harmonic, &y, h).unwrap().0;
            }
            (y[0] - 1f64.cos()).abs()
        };
        let (e1, e2) = (run(10), run(20));
        let order = (e1 / e2).log2();
        assert!(order > 4.7 && order < 5.5, "order {order}");
    }

    #[test]
    fn error_estimate_tracks_true_error() {
        let (y, err) = dopri_step(&harmonic, &[1.0, 0.0, 0.0, 1.0], 0.2).unwrap();
        let true_err = (y[0] - 0.2f64.cos()).abs();
        assert!(err > true_err && err < 1e-4);
    }
}
