//! Adaptive Dormand–Prince 5(4) integrator for small ODE systems.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    pub atol: f64,
    pub rtol: f64,
    pub max_steps: usize,
    pub min_step: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            atol: 1e-10,
            rtol: 1e-10,
            max_steps: 5_000_000,
            min_step: 1e-300,
        }
    }
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrates `y' = rhs(t, y)` from `t0` to `t_end`, calling `observe` after
/// every accepted step (and once for the initial state).
pub fn integrate<const N: usize, F, O>(
    mut rhs: F,
    t0: f64,
    y0: [f64; N],
    t_end: f64,
    tol: Tolerances,
    mut observe: O,
) -> Result<[f64; N]>
where
    F: FnMut(f64, &[f64; N]) -> [f64; N],
    O: FnMut(f64, &[f64; N]),
{
    let mut t = t0;
    let mut y = y0;
    observe(t, &y);
    if t_end <= t0 {
        return Ok(y);
    }

    let mut k = [[0.0; N]; 7];
    k[0] = rhs(t, &y);
    let scale0 = y.iter().fold(0.0f64, |m, v| m.max(v.abs())) * tol.rtol + tol.atol;
    let slope0 = k[0].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut h = if slope0 > 0.0 { 0.01 * scale0 / slope0 } else { 1e-3 * (t_end - t0) };
    h = h.clamp(tol.min_step.max(1e-14 * (t_end - t0)), t_end - t0);

    let mut steps = 0usize;
    while t < t_end {
        if steps >= tol.max_steps {
            return Err(Error::Integration {
                t,
                message: format!("exceeded {} steps", tol.max_steps),
            });
        }
        let h_step = h.min(t_end - t);
        for s in 1..7 {
            let mut ys = y;
            for (i, yi) in ys.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (j, kj) in k.iter().enumerate().take(s) {
                    acc += A[s][j] * kj[i];
                }
                *yi += h_step * acc;
            }
            k[s] = rhs(t + C[s] * h_step, &ys);
        }
        let mut y_new = y;
        let mut err = 0.0f64;
        for i in 0..N {
            let mut hi = 0.0;
            let mut lo = 0.0;
            for s in 0..7 {
                hi += B5[s] * k[s][i];
                lo += B4[s] * k[s][i];
            }
            y_new[i] = y[i] + h_step * hi;
            let sc = tol.atol + tol.rtol * y[i].abs().max(y_new[i].abs());
            err = err.max((h_step * (hi - lo) / sc).abs());
        }
        if !err.is_finite() {
            h = 0.1 * h_step;
            if h < tol.min_step {
                return Err(Error::Integration {
                    t,
                    message: "non-finite error estimate".into(),
                });
            }
            continue;
        }
        if err <= 1.0 {
            t += h_step;
            y = y_new;
            k[0] = k[6];
            steps += 1;
            observe(t, &y);
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h = h_step * factor;
        if h < tol.min_step {
            return Err(Error::Integration {
                t,
                message: format!("step size {h:e} fell below the minimum"),
            });
        }
    }
    Ok(y)
}
