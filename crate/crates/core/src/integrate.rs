//! Deterministic integration of state, cost, fundamental-matrix, and
//! adjoint dynamics on finite horizons.
//!
//! The cost quadrature and the sensitivity integral ride along as extra
//! ODE states, so every quantity shares one step/error control. The
//! inverse fundamental matrix solves its own matrix ODE and is never
//! obtained by inverting the forward matrix.

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::CoreError;
use crate::ode::{integrate, IntegratorSettings, OdePath};
use crate::problem::{ControlProblem, ControlSignal, Covector, State};

/// State trajectory with the accumulated running cost `J` along it.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub grid: Vec<f64>,
    pub states: Vec<State>,
    pub running_cost: Vec<f64>,
}

impl Trajectory {
    pub fn final_state(&self) -> &State {
        self.states.last().unwrap()
    }

    pub fn final_cost(&self) -> f64 {
        *self.running_cost.last().unwrap()
    }

    /// Linear interpolation of the state at `t`.
    pub fn state_at(&self, t: f64) -> State {
        sample_linear(&self.grid, &self.states, t)
    }

    /// CSV export with columns `t,x1..xm,J`.
    pub fn to_csv(&self) -> String {
        let m = self.states[0].len();
        let mut out = String::from("t");
        for i in 1..=m {
            out.push_str(&format!(",x{i}"));
        }
        out.push_str(",J\n");
        for (k, t) in self.grid.iter().enumerate() {
            out.push_str(&format!("{t}"));
            for v in self.states[k].iter() {
                out.push_str(&format!(",{v}"));
            }
            out.push_str(&format!(",{}\n", self.running_cost[k]));
        }
        out
    }
}

/// Fundamental matrix path `A`, its ODE-integrated inverse, and the
/// sensitivity integral `I` accumulated along the reference trajectory.
#[derive(Debug, Clone)]
pub struct SensitivityPath {
    pub grid: Vec<f64>,
    pub states: Vec<State>,
    pub running_cost: Vec<f64>,
    pub a: Vec<DMatrix<f64>>,
    pub a_inv: Vec<DMatrix<f64>>,
    pub i_path: Vec<Covector>,
}

impl SensitivityPath {
    pub fn final_i(&self) -> &Covector {
        self.i_path.last().unwrap()
    }

    pub fn final_a_inv(&self) -> &DMatrix<f64> {
        self.a_inv.last().unwrap()
    }

    /// `I(xi; t)` at an arbitrary time by linear interpolation.
    pub fn i_at(&self, t: f64) -> Covector {
        sample_linear(&self.grid, &self.i_path, t)
    }

    pub fn a_inv_at(&self, t: f64) -> DMatrix<f64> {
        sample_linear(&self.grid, &self.a_inv, t)
    }

    pub fn j_at(&self, t: f64) -> f64 {
        let idx = nearest(&self.grid, t);
        self.running_cost[idx]
    }

    /// Worst `||A A^-1 - Id||` over the grid.
    pub fn max_inverse_defect(&self) -> f64 {
        let m = self.a[0].nrows();
        let id = DMatrix::identity(m, m);
        self.a
            .iter()
            .zip(&self.a_inv)
            .map(|(a, ai)| (a * ai - &id).norm())
            .fold(0.0, f64::max)
    }

    /// CSV export with columns `t,x1..xm,J,A11..Amm,I1..Im`.
    pub fn to_csv(&self) -> String {
        let m = self.states[0].len();
        let mut out = String::from("t");
        for i in 1..=m {
            out.push_str(&format!(",x{i}"));
        }
        out.push_str(",J");
        for i in 1..=m {
            for j in 1..=m {
                out.push_str(&format!(",A{i}{j}"));
            }
        }
        for i in 1..=m {
            out.push_str(&format!(",I{i}"));
        }
        out.push('\n');
        for (k, t) in self.grid.iter().enumerate() {
            out.push_str(&format!("{t}"));
            for v in self.states[k].iter() {
                out.push_str(&format!(",{v}"));
            }
            out.push_str(&format!(",{}", self.running_cost[k]));
            let a = &self.a[k];
            for i in 0..m {
                for j in 0..m {
                    out.push_str(&format!(",{}", a[(i, j)]));
                }
            }
            for v in self.i_path[k].iter() {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Adjoint arc together with the state it was integrated along.
#[derive(Debug, Clone)]
pub struct CovectorPath {
    pub grid: Vec<f64>,
    pub states: Vec<State>,
    pub psi: Vec<Covector>,
}

impl CovectorPath {
    pub fn psi_at(&self, t: f64) -> Covector {
        sample_linear(&self.grid, &self.psi, t)
    }

    pub fn final_psi(&self) -> &Covector {
        self.psi.last().unwrap()
    }
}

fn nearest(grid: &[f64], t: f64) -> usize {
    let mut best = 0;
    let mut dist = f64::INFINITY;
    for (i, g) in grid.iter().enumerate() {
        let d = (g - t).abs();
        if d < dist {
            dist = d;
            best = i;
        }
    }
    best
}

fn sample_linear<T>(grid: &[f64], values: &[T], t: f64) -> T
where
    T: Clone + std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T>,
{
    let n = grid.len();
    if n == 1 || t <= grid[0] {
        return values[0].clone();
    }
    if t >= grid[n - 1] {
        return values[n - 1].clone();
    }
    let i = match grid.binary_search_by(|g| g.partial_cmp(&t).unwrap()) {
        Ok(i) => return values[i].clone(),
        Err(i) => i,
    };
    let w = (t - grid[i - 1]) / (grid[i] - grid[i - 1]);
    values[i - 1].clone() * (1.0 - w) + values[i].clone() * w
}

/// Solves the state ODE under `u` from `b`, accumulating the running cost.
pub fn integrate_state(
    problem: &ControlProblem,
    b: &State,
    u: &ControlSignal,
    horizon: f64,
    settings: &IntegratorSettings,
) -> Result<Trajectory, CoreError> {
    if horizon <= 0.0 {
        return Err(CoreError::Invalid("horizon must be positive".into()));
    }
    let m = problem.state_dim;
    let mut y0 = DVector::zeros(m + 1);
    y0.rows_mut(0, m).copy_from(b);

    let rhs = |t: f64, y: &DVector<f64>| {
        let x = y.rows(0, m).into_owned();
        let uv = u.value_at(t);
        let dx = problem.dynamics(&x, uv, t);
        let mut dy = DVector::zeros(m + 1);
        dy.rows_mut(0, m).copy_from(&dx);
        dy[m] = problem.running_cost(&x, uv, t);
        dy
    };

    let path = integrate(rhs, 0.0, y0, horizon, u.breakpoints(), settings)?;
    Ok(unpack_trajectory(&path, m))
}

fn unpack_trajectory(path: &OdePath, m: usize) -> Trajectory {
    Trajectory {
        grid: path.grid.clone(),
        states: path.states.iter().map(|y| y.rows(0, m).into_owned()).collect(),
        running_cost: path.states.iter().map(|y| y[m]).collect(),
    }
}

/// Integrates the matrix variational equation, its inverse, and the
/// sensitivity integral along the trajectory from `xi` under `u_star`.
pub fn integrate_sensitivity(
    problem: &ControlProblem,
    xi: &State,
    u_star: &ControlSignal,
    horizon: f64,
    settings: &IntegratorSettings,
) -> Result<SensitivityPath, CoreError> {
    if horizon <= 0.0 {
        return Err(CoreError::Invalid("horizon must be positive".into()));
    }
    let m = problem.state_dim;
    let msq = m * m;
    let dim = m + 1 + 2 * msq + m;

    // Layout: [x, J, A (row-major), A_inv (row-major), I].
    let mut y0 = DVector::zeros(dim);
    y0.rows_mut(0, m).copy_from(xi);
    for i in 0..m {
        y0[m + 1 + i * m + i] = 1.0;
        y0[m + 1 + msq + i * m + i] = 1.0;
    }

    let rhs = |t: f64, y: &DVector<f64>| {
        let x = y.rows(0, m).into_owned();
        let uv = u_star.value_at(t);
        let fx = problem.dynamics_jac(&x, uv, t);
        let f0x = problem.cost_grad(&x, uv, t);
        let a = unpack_matrix(y, m + 1, m);
        let a_inv = unpack_matrix(y, m + 1 + msq, m);
        let da = &fx * &a;
        let da_inv = -&a_inv * &fx;
        let di = &f0x * &a;

        let mut dy = DVector::zeros(dim);
        dy.rows_mut(0, m).copy_from(&problem.dynamics(&x, uv, t));
        dy[m] = problem.running_cost(&x, uv, t);
        pack_matrix(&mut dy, m + 1, &da);
        pack_matrix(&mut dy, m + 1 + msq, &da_inv);
        for j in 0..m {
            dy[m + 1 + 2 * msq + j] = di[j];
        }
        dy
    };

    let path = integrate(rhs, 0.0, y0, horizon, u_star.breakpoints(), settings)?;
    Ok(SensitivityPath {
        grid: path.grid.clone(),
        states: path.states.iter().map(|y| y.rows(0, m).into_owned()).collect(),
        running_cost: path.states.iter().map(|y| y[m]).collect(),
        a: path.states.iter().map(|y| unpack_matrix(y, m + 1, m)).collect(),
        a_inv: path
            .states
            .iter()
            .map(|y| unpack_matrix(y, m + 1 + msq, m))
            .collect(),
        i_path: path
            .states
            .iter()
            .map(|y| {
                RowDVector::from_iterator(m, (0..m).map(|j| y[m + 1 + 2 * msq + j]))
            })
            .collect(),
    })
}

fn unpack_matrix(y: &DVector<f64>, offset: usize, m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, m, |i, j| y[offset + i * m + j])
}

fn pack_matrix(y: &mut DVector<f64>, offset: usize, mat: &DMatrix<f64>) {
    let m = mat.nrows();
    for i in 0..m {
        for j in 0..m {
            y[offset + i * m + j] = mat[(i, j)];
        }
    }
}

/// Integrates the adjoint equation along the state flow, anchored at
/// `(anchor_time, anchor_psi)`, across `[0, horizon]` in both directions.
pub fn integrate_adjoint(
    problem: &ControlProblem,
    x: &Trajectory,
    u: &ControlSignal,
    lambda: f64,
    anchor_time: f64,
    anchor_psi: &Covector,
    horizon: f64,
    settings: &IntegratorSettings,
) -> Result<CovectorPath, CoreError> {
    if !(0.0..=horizon).contains(&anchor_time) {
        return Err(CoreError::Invalid(format!(
            "anchor time {anchor_time} outside [0, {horizon}]"
        )));
    }
    let m = problem.state_dim;
    let x_anchor = x.state_at(anchor_time);
    let mut y_anchor = DVector::zeros(2 * m);
    y_anchor.rows_mut(0, m).copy_from(&x_anchor);
    for i in 0..m {
        y_anchor[m + i] = anchor_psi[i];
    }

    // -psi_dot = psi * dfdx - lambda * df0dx, x re-integrated jointly so
    // the pair stays consistent in both directions.
    let rhs = |t: f64, y: &DVector<f64>| {
        let xv = y.rows(0, m).into_owned();
        let psi = RowDVector::from_iterator(m, (m..2 * m).map(|i| y[i]));
        let uv = u.value_at(t);
        let fx = problem.dynamics_jac(&xv, uv, t);
        let f0x = problem.cost_grad(&xv, uv, t);
        let dpsi = -(&psi * &fx) + &f0x * lambda;
        let mut dy = DVector::zeros(2 * m);
        dy.rows_mut(0, m).copy_from(&problem.dynamics(&xv, uv, t));
        for i in 0..m {
            dy[m + i] = dpsi[i];
        }
        dy
    };

    let mut grid = Vec::new();
    let mut states = Vec::new();
    let mut psi = Vec::new();

    if anchor_time > 0.0 {
        let back = integrate(
            &rhs,
            anchor_time,
            y_anchor.clone(),
            0.0,
            u.breakpoints(),
            settings,
        )?;
        for (t, y) in back.grid.iter().rev().zip(back.states.iter().rev()) {
            grid.push(*t);
            states.push(y.rows(0, m).into_owned());
            psi.push(RowDVector::from_iterator(m, (m..2 * m).map(|i| y[i])));
        }
    } else {
        grid.push(0.0);
        states.push(x_anchor.clone());
        psi.push(anchor_psi.clone());
    }

    if anchor_time < horizon {
        let fwd = integrate(
            &rhs,
            anchor_time,
            y_anchor,
            horizon,
            u.breakpoints(),
            settings,
        )?;
        for (t, y) in fwd.grid.iter().zip(&fwd.states).skip(1) {
            grid.push(*t);
            states.push(y.rows(0, m).into_owned());
            psi.push(RowDVector::from_iterator(m, (m..2 * m).map(|i| y[i])));
        }
    }

    Ok(CovectorPath { grid, states, psi })
}

/// Central finite-difference gradient of `b -> J(b, u_star; T)`.
///
/// This is the independent oracle for the sensitivity integral `I`.
pub fn fd_cost_gradient(
    problem: &ControlProblem,
    b: &State,
    u_star: &ControlSignal,
    horizon: f64,
    settings: &IntegratorSettings,
) -> Result<Covector, CoreError> {
    let m = problem.state_dim;
    let h = 1e-5;
    let mut grad = RowDVector::zeros(m);
    for i in 0..m {
        let mut bp = b.clone();
        let mut bm = b.clone();
        bp[i] += h;
        bm[i] -= h;
        let jp = integrate_state(problem, &bp, u_star, horizon, settings)?.final_cost();
        let jm = integrate_state(problem, &bm, u_star, horizon, settings)?.final_cost();
        grad[i] = (jp - jm) / (2.0 * h);
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{bolza_example, lq_scalar, zero_problem};
    use approx::assert_abs_diff_eq;

    fn scalar(v: f64) -> State {
        DVector::from_element(1, v)
    }

    fn settings() -> IntegratorSettings {
        IntegratorSettings::fixed(1e-3)
    }

    #[test]
    fn bolza_rest_point_is_invariant() {
        let p = bolza_example().unwrap();
        let u = ControlSignal::constant_scalar(0.0);
        let traj = integrate_state(&p, &scalar(0.0), &u, 10.0, &settings()).unwrap();
        assert_eq!(traj.states[0][0], 0.0);
        assert_eq!(traj.running_cost[0], 0.0);
        for (x, j) in traj.states.iter().zip(&traj.running_cost) {
            assert_eq!(x[0], 0.0);
            assert_eq!(*j, 0.0);
        }
    }

    #[test]
    fn bolza_closed_form_before_crossing() {
        // From b = 2/(theta+2) the free trajectory is 2/(theta+2-s) until
        // it reaches 1 at s = theta.
        let theta = 3.0;
        let p = bolza_example().unwrap();
        let u = ControlSignal::constant_scalar(0.0);
        let b = 2.0 / (theta + 2.0);
        let traj = integrate_state(&p, &scalar(b), &u, theta, &settings()).unwrap();
        for (t, x) in traj.grid.iter().zip(&traj.states) {
            assert_abs_diff_eq!(x[0], 2.0 / (theta + 2.0 - t), epsilon = 1e-6);
        }
    }

    #[test]
    fn bolza_closed_form_after_crossing() {
        let theta = 3.0;
        let p = bolza_example().unwrap();
        let u = ControlSignal::constant_scalar(0.0);
        let b = 2.0 / (theta + 2.0);
        let traj = integrate_state(&p, &scalar(b), &u, theta + 3.0, &settings()).unwrap();
        for (t, x) in traj.grid.iter().zip(&traj.states) {
            if *t >= theta {
                assert_abs_diff_eq!(2.0 * x[0], (t - theta).exp() + 1.0, epsilon = 2e-6);
            }
        }
    }

    #[test]
    fn sensitivity_identity_at_rest_point() {
        let p = bolza_example().unwrap();
        let u = ControlSignal::constant_scalar(0.0);
        let sp = integrate_sensitivity(&p, &scalar(0.0), &u, 5.0, &settings()).unwrap();
        assert_eq!(sp.a[0][(0, 0)], 1.0);
        assert_eq!(sp.a_inv[0][(0, 0)], 1.0);
        for a in &sp.a {
            assert_abs_diff_eq!(a[(0, 0)], 1.0, epsilon = 1e-12);
        }
        assert!(sp.max_inverse_defect() <= 1e-10);
    }

    #[test]
    fn sensitivity_integral_closed_form() {
        let p = bolza_example().unwrap();
        let u = ControlSignal::constant_scalar(0.0);
        let sp = integrate_sensitivity(&p, &scalar(0.0), &u, 1.0, &settings()).unwrap();
        let expected = -2.5 * (1.0 - (-2.0f64).exp());
        assert_abs_diff_eq!(sp.final_i()[0], expected, epsilon = 1e-8);
    }

    #[test]
    fn zero_field_keeps_identity_fundamental_matrix() {
        let p = zero_problem().unwrap();
        let u = ControlSignal::constant_scalar(0.0);
        let sp = integrate_sensitivity(&p, &scalar(0.3), &u, 7.0, &settings()).unwrap();
        for a in &sp.a {
            assert_eq!(a[(0, 0)], 1.0);
        }
    }

    #[test]
    fn adjoint_closed_form_on_bolza() {
        let p = bolza_example().unwrap();
        let u = ControlSignal::constant_scalar(0.0);
        let traj = integrate_state(&p, &scalar(0.0), &u, 2.0, &settings()).unwrap();
        let psi0 = RowDVector::from_element(1, 0.0);
        let path =
            integrate_adjoint(&p, &traj, &u, 1.0, 0.0, &psi0, 2.0, &settings()).unwrap();
        let psi1 = path.psi_at(1.0);
        assert_abs_diff_eq!(
            psi1[0],
            2.5 * ((-2.0f64).exp() - 1.0),
            epsilon = 1e-8
        );
    }

    #[test]
    fn adjoint_linear_autonomous_abnormal() {
        // lambda = 0, xdot = a x: psi(t) = psi(0) e^{-a t}.
        let a = 0.8;
        let p = lq_scalar(a).unwrap();
        let u = ControlSignal::constant_scalar(0.0);
        let traj = integrate_state(&p, &scalar(0.5), &u, 3.0, &settings()).unwrap();
        let psi0 = RowDVector::from_element(1, 1.7);
        let path =
            integrate_adjoint(&p, &traj, &u, 0.0, 0.0, &psi0, 3.0, &settings()).unwrap();
        assert_abs_diff_eq!(path.final_psi()[0], 1.7 * (-a * 3.0f64).exp(), epsilon = 1e-8);
    }

    #[test]
    fn adjoint_constant_when_field_state_independent() {
        let p = zero_problem().unwrap();
        let u = ControlSignal::constant_scalar(0.0);
        let traj = integrate_state(&p, &scalar(0.1), &u, 4.0, &settings()).unwrap();
        let psi0 = RowDVector::from_element(1, -0.4);
        let path =
            integrate_adjoint(&p, &traj, &u, 0.0, 0.0, &psi0, 4.0, &settings()).unwrap();
        for psi in &path.psi {
            assert_eq!(psi[0], -0.4);
        }
    }

    #[test]
    fn adjoint_backward_from_interior_anchor() {
        let p = bolza_example().unwrap();
        let u = ControlSignal::constant_scalar(0.0);
        let traj = integrate_state(&p, &scalar(0.0), &u, 2.0, &settings()).unwrap();
        // Anchor at t=1 with the closed-form value; expect psi(0) = 0.
        let psi1 = RowDVector::from_element(1, 2.5 * ((-2.0f64).exp() - 1.0));
        let path =
            integrate_adjoint(&p, &traj, &u, 1.0, 1.0, &psi1, 2.0, &settings()).unwrap();
        assert_abs_diff_eq!(path.psi_at(0.0)[0], 0.0, epsilon = 1e-8);
        assert_abs_diff_eq!(path.psi_at(1.0)[0], psi1[0], epsilon = 1e-12);
    }

    #[test]
    fn fd_gradient_matches_sensitivity() {
        let p = bolza_example().unwrap();
        let u = ControlSignal::constant_scalar(0.0);
        let grad = fd_cost_gradient(&p, &scalar(0.0), &u, 1.0, &settings()).unwrap();
        let sp = integrate_sensitivity(&p, &scalar(0.0), &u, 1.0, &settings()).unwrap();
        assert_abs_diff_eq!(grad[0], sp.final_i()[0], epsilon = 1e-4);
    }

    #[test]
    fn fd_gradient_hand_value_lq() {
        // a = 0, u = 0, b = 1: J = b^2 T, gradient 2 b T = 2 at T = 1.
        let p = lq_scalar(0.0).unwrap();
        let u = ControlSignal::constant_scalar(0.0);
        let grad = fd_cost_gradient(&p, &scalar(1.0), &u, 1.0, &settings()).unwrap();
        assert_abs_diff_eq!(grad[0], 2.0, epsilon = 1e-6);
        let sp = integrate_sensitivity(&p, &scalar(1.0), &u, 1.0, &settings()).unwrap();
        assert_abs_diff_eq!(sp.final_i()[0], 2.0, epsilon = 1e-8);
    }

    #[test]
    fn fd_gradient_zero_problem() {
        let p = zero_problem().unwrap();
        let u = ControlSignal::constant_scalar(0.0);
        let grad = fd_cost_gradient(&p, &scalar(0.2), &u, 2.0, &settings()).unwrap();
        assert_eq!(grad[0], 0.0);
    }

    #[test]
    fn step_halving_changes_little() {
        let p = bolza_example().unwrap();
        let u = ControlSignal::constant_scalar(0.0);
        let b = scalar(0.4);
        let coarse = integrate_state(&p, &b, &u, 6.0, &IntegratorSettings::fixed(2e-3)).unwrap();
        let fine = integrate_state(&p, &b, &u, 6.0, &IntegratorSettings::fixed(1e-3)).unwrap();
        assert_abs_diff_eq!(
            coarse.final_state()[0],
            fine.final_state()[0],
            epsilon = 1e-8
        );
    }

    #[test]
    fn csv_headers() {
        let p = bolza_example().unwrap();
        let u = ControlSignal::constant_scalar(0.0);
        let traj = integrate_state(&p, &scalar(0.0), &u, 1.0, &IntegratorSettings::fixed(0.5))
            .unwrap();
        assert!(traj.to_csv().starts_with("t,x1,J\n"));
        let sp = integrate_sensitivity(&p, &scalar(0.0), &u, 1.0, &IntegratorSettings::fixed(0.5))
            .unwrap();
        assert!(sp.to_csv().starts_with("t,x1,J,A11,I1\n"));
    }
}
