//! Explicit Runge-Kutta integration with fixed and adaptive step control.
//!
//! All higher-level integrations (state, cost quadrature, fundamental
//! matrix, adjoint) are packed into one vector ODE and pushed through this
//! module, so every quantity shares a single error control. Control
//! breakpoints are inserted into the segment list by the callers so each
//! step sees a constant control.

use nalgebra::DVector;

use crate::error::CoreError;

/// Step-size policy.
#[derive(Debug, Clone, Copy)]
pub enum StepMode {
    /// Classic RK4 with a target step `h` (each segment is subdivided
    /// uniformly so the breakpoints are hit exactly).
    Fixed { h: f64 },
    /// Embedded Runge-Kutta-Fehlberg 4(5) with per-step error control.
    Adaptive { rtol: f64, atol: f64, h0: f64 },
}

#[derive(Debug, Clone, Copy)]
pub struct IntegratorSettings {
    pub mode: StepMode,
    /// Steps below this size abort with a blow-up report.
    pub min_step: f64,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        IntegratorSettings {
            mode: StepMode::Fixed { h: 1e-3 },
            min_step: 1e-12,
        }
    }
}

impl IntegratorSettings {
    pub fn fixed(h: f64) -> Self {
        IntegratorSettings {
            mode: StepMode::Fixed { h },
            min_step: 1e-12,
        }
    }

    pub fn adaptive(rtol: f64, atol: f64) -> Self {
        IntegratorSettings {
            mode: StepMode::Adaptive {
                rtol,
                atol,
                h0: 1e-2,
            },
            min_step: 1e-12,
        }
    }

    /// Same mode with the target step halved (error control tightened
    /// accordingly in adaptive mode).
    pub fn refined(&self) -> Self {
        let mode = match self.mode {
            StepMode::Fixed { h } => StepMode::Fixed { h: h / 2.0 },
            StepMode::Adaptive { rtol, atol, h0 } => StepMode::Adaptive {
                rtol: rtol / 16.0,
                atol: atol / 16.0,
                h0,
            },
        };
        IntegratorSettings {
            mode,
            min_step: self.min_step,
        }
    }
}

/// Dense output of an integration: the step grid and the solution at each
/// grid point.
#[derive(Debug, Clone)]
pub struct OdePath {
    pub grid: Vec<f64>,
    pub states: Vec<DVector<f64>>,
}

impl OdePath {
    pub fn last(&self) -> &DVector<f64> {
        self.states.last().expect("path is never empty")
    }

    /// Index of the grid point closest to `t`.
    pub fn nearest_index(&self, t: f64) -> usize {
        let mut best = 0;
        let mut dist = f64::INFINITY;
        for (i, g) in self.grid.iter().enumerate() {
            let d = (g - t).abs();
            if d < dist {
                dist = d;
                best = i;
            }
        }
        best
    }

    /// Linear interpolation of the solution at `t` (clamped to the span).
    pub fn sample(&self, t: f64) -> DVector<f64> {
        let n = self.grid.len();
        if n == 1 || t <= self.grid[0] {
            return self.states[0].clone();
        }
        if t >= self.grid[n - 1] {
            return self.states[n - 1].clone();
        }
        let i = match self
            .grid
            .binary_search_by(|g| g.partial_cmp(&t).unwrap())
        {
            Ok(i) => return self.states[i].clone(),
            Err(i) => i,
        };
        let (t0, t1) = (self.grid[i - 1], self.grid[i]);
        let w = (t - t0) / (t1 - t0);
        &self.states[i - 1] * (1.0 - w) + &self.states[i] * w
    }
}

fn check_finite(y: &DVector<f64>, t: f64) -> Result<(), CoreError> {
    if y.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(CoreError::integration(t, "non-finite state value"))
    }
}

/// One classic RK4 step of size `h` (signed).
pub fn rk4_step<F>(rhs: &F, t: f64, y: &DVector<f64>, h: f64) -> DVector<f64>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    let k1 = rhs(t, y);
    let k2 = rhs(t + 0.5 * h, &(y + &k1 * (0.5 * h)));
    let k3 = rhs(t + 0.5 * h, &(y + &k2 * (0.5 * h)));
    let k4 = rhs(t + h, &(y + &k3 * h));
    y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

// Runge-Kutta-Fehlberg 4(5) tableau.
const RKF_C: [f64; 6] = [0.0, 0.25, 3.0 / 8.0, 12.0 / 13.0, 1.0, 0.5];
const RKF_A: [[f64; 5]; 6] = [
    [0.0, 0.0, 0.0, 0.0, 0.0],
    [0.25, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 32.0, 9.0 / 32.0, 0.0, 0.0, 0.0],
    [1932.0 / 2197.0, -7200.0 / 2197.0, 7296.0 / 2197.0, 0.0, 0.0],
    [439.0 / 216.0, -8.0, 3680.0 / 513.0, -845.0 / 4104.0, 0.0],
    [
        -8.0 / 27.0,
        2.0,
        -3544.0 / 2565.0,
        1859.0 / 4104.0,
        -11.0 / 40.0,
    ],
];
const RKF_B5: [f64; 6] = [
    16.0 / 135.0,
    0.0,
    6656.0 / 12825.0,
    28561.0 / 56430.0,
    -9.0 / 50.0,
    2.0 / 55.0,
];
const RKF_B4: [f64; 6] = [
    25.0 / 216.0,
    0.0,
    1408.0 / 2565.0,
    2197.0 / 4104.0,
    -1.0 / 5.0,
    0.0,
];

fn rkf45_step<F>(
    rhs: &F,
    t: f64,
    y: &DVector<f64>,
    h: f64,
) -> (DVector<f64>, f64)
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    let mut k: Vec<DVector<f64>> = Vec::with_capacity(6);
    for i in 0..6 {
        let mut yi = y.clone();
        for (j, kj) in k.iter().enumerate() {
            yi += kj * (h * RKF_A[i][j]);
        }
        k.push(rhs(t + RKF_C[i] * h, &yi));
    }
    let mut y5 = y.clone();
    let mut err = DVector::zeros(y.len());
    for i in 0..6 {
        y5 += &k[i] * (h * RKF_B5[i]);
        err += &k[i] * (h * (RKF_B5[i] - RKF_B4[i]));
    }
    (y5, err.norm())
}

/// Integrates `dy/dt = rhs(t, y)` from `t0` to `t1` (forward or backward),
/// hitting every breakpoint in `(t0, t1)` exactly. Returns the dense path.
pub fn integrate<F>(
    rhs: F,
    t0: f64,
    y0: DVector<f64>,
    t1: f64,
    breakpoints: &[f64],
    settings: &IntegratorSettings,
) -> Result<OdePath, CoreError>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    check_finite(&y0, t0)?;
    let mut grid = vec![t0];
    let mut states = vec![y0];

    if t0 == t1 {
        return Ok(OdePath { grid, states });
    }

    // Segment boundaries: t0, relevant breakpoints in order of travel, t1.
    let forward = t1 > t0;
    let (lo, hi) = if forward { (t0, t1) } else { (t1, t0) };
    let mut cuts: Vec<f64> = breakpoints
        .iter()
        .copied()
        .filter(|b| *b > lo && *b < hi)
        .collect();
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup();
    if !forward {
        cuts.reverse();
    }
    let mut bounds = vec![t0];
    bounds.extend(cuts);
    bounds.push(t1);

    for seg in bounds.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        match settings.mode {
            StepMode::Fixed { h } => {
                let n = ((b - a).abs() / h).ceil().max(1.0) as usize;
                let step = (b - a) / n as f64;
                for i in 0..n {
                    let t = a + step * i as f64;
                    let y = rk4_step(&rhs, t, states.last().unwrap(), step);
                    let t_next = if i + 1 == n { b } else { t + step };
                    check_finite(&y, t_next)?;
                    grid.push(t_next);
                    states.push(y);
                }
            }
            StepMode::Adaptive { rtol, atol, h0 } => {
                let dir = (b - a).signum();
                let mut t = a;
                let mut h = h0.min((b - a).abs()) * dir;
                while (b - t) * dir > 0.0 {
                    if (t + h - b) * dir > 0.0 {
                        h = b - t;
                    }
                    let y = states.last().unwrap();
                    let (y_next, err) = rkf45_step(&rhs, t, y, h);
                    let scale = atol + rtol * y.norm().max(y_next.norm());
                    if err <= scale || h.abs() <= settings.min_step {
                        if h.abs() <= settings.min_step && err > scale {
                            return Err(CoreError::integration(
                                t,
                                "step size underflow (likely blow-up)",
                            ));
                        }
                        t += h;
                        check_finite(&y_next, t)?;
                        grid.push(t);
                        states.push(y_next);
                        let factor = if err > 0.0 {
                            0.9 * (scale / err).powf(0.2)
                        } else {
                            2.0
                        };
                        h *= factor.clamp(0.2, 5.0);
                    } else {
                        h *= (0.9 * (scale / err).powf(0.25)).clamp(0.1, 1.0);
                        if h.abs() < settings.min_step {
                            return Err(CoreError::integration(
                                t,
                                "step size underflow (likely blow-up)",
                            ));
                        }
                    }
                }
            }
        }
    }
    Ok(OdePath { grid, states })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn exponential_decay_fixed() {
        let rhs = |_t: f64, y: &DVector<f64>| -y.clone();
        let path = integrate(
            rhs,
            0.0,
            DVector::from_element(1, 1.0),
            2.0,
            &[],
            &IntegratorSettings::fixed(1e-3),
        )
        .unwrap();
        assert_abs_diff_eq!(path.last()[0], (-2.0f64).exp(), epsilon = 1e-10);
    }

    #[test]
    fn exponential_growth_adaptive() {
        let rhs = |_t: f64, y: &DVector<f64>| y.clone();
        let path = integrate(
            rhs,
            0.0,
            DVector::from_element(1, 1.0),
            3.0,
            &[],
            &IntegratorSettings::adaptive(1e-10, 1e-12),
        )
        .unwrap();
        assert_abs_diff_eq!(path.last()[0], 3.0f64.exp(), epsilon = 1e-7);
    }

    #[test]
    fn backward_integration_inverts_forward() {
        let rhs = |t: f64, y: &DVector<f64>| DVector::from_element(1, t * y[0]);
        let settings = IntegratorSettings::fixed(1e-3);
        let fwd = integrate(rhs, 0.0, DVector::from_element(1, 0.7), 1.5, &[], &settings).unwrap();
        let back = integrate(rhs, 1.5, fwd.last().clone(), 0.0, &[], &settings).unwrap();
        assert_abs_diff_eq!(back.last()[0], 0.7, epsilon = 1e-10);
    }

    #[test]
    fn breakpoints_are_hit_exactly() {
        let rhs = |_t: f64, y: &DVector<f64>| y.clone() * 0.0;
        let path = integrate(
            rhs,
            0.0,
            DVector::zeros(1),
            1.0,
            &[0.3333333, 0.77],
            &IntegratorSettings::fixed(0.1),
        )
        .unwrap();
        assert!(path.grid.iter().any(|t| *t == 0.3333333));
        assert!(path.grid.iter().any(|t| *t == 0.77));
    }

    #[test]
    fn blow_up_is_reported() {
        // dy/dt = y^2 from 1 blows up at t = 1.
        let rhs = |_t: f64, y: &DVector<f64>| DVector::from_element(1, y[0] * y[0]);
        let err = integrate(
            rhs,
            0.0,
            DVector::from_element(1, 1.0),
            2.0,
            &[],
            &IntegratorSettings::adaptive(1e-8, 1e-10),
        )
        .unwrap_err();
        assert!(matches!(err, CoreError::Integration { .. }));
    }

    #[test]
    fn step_halving_converges() {
        let rhs = |t: f64, y: &DVector<f64>| DVector::from_element(1, (y[0] * t).sin());
        let coarse = integrate(
            rhs,
            0.0,
            DVector::from_element(1, 1.0),
            4.0,
            &[],
            &IntegratorSettings::fixed(1e-2),
        )
        .unwrap();
        let fine = integrate(
            rhs,
            0.0,
            DVector::from_element(1, 1.0),
            4.0,
            &[],
            &IntegratorSettings::fixed(5e-3),
        )
        .unwrap();
        assert_abs_diff_eq!(coarse.last()[0], fine.last()[0], epsilon = 1e-8);
    }
}
