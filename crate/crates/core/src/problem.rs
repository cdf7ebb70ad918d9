//! Problem definitions: typed dynamics/cost descriptions, the built-in
//! registry, piecewise-constant control signals, and loading from the
//! JSON spec format backed by the expression DSL.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, RowDVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::expr::{differentiate, parse_expression, Expr, Var};

pub type State = DVector<f64>;
pub type Control = DVector<f64>;
pub type Covector = RowDVector<f64>;

type DynamicsFn = Arc<dyn Fn(&State, &Control, f64) -> State + Send + Sync>;
type ScalarFn = Arc<dyn Fn(&State, &Control, f64) -> f64 + Send + Sync>;
type JacFn = Arc<dyn Fn(&State, &Control, f64) -> DMatrix<f64> + Send + Sync>;
type GradFn = Arc<dyn Fn(&State, &Control, f64) -> Covector + Send + Sync>;
type InitialCostFn = Arc<dyn Fn(&State) -> f64 + Send + Sync>;
type SubdiffFn = Arc<dyn Fn(&State) -> Vec<Covector> + Send + Sync>;

/// Closed interval bounds for one coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }
}

/// Axis-aligned box (product of per-coordinate intervals).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSet {
    pub bounds: Vec<Interval>,
}

impl BoxSet {
    pub fn new(bounds: Vec<Interval>) -> Self {
        BoxSet { bounds }
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn contains(&self, v: &DVector<f64>) -> bool {
        v.len() == self.dim() && v.iter().zip(&self.bounds).all(|(x, b)| b.contains(*x))
    }

    /// Distance from an interior point to the box boundary (0 outside).
    pub fn dist_to_boundary(&self, v: &DVector<f64>) -> f64 {
        if !self.contains(v) {
            return 0.0;
        }
        v.iter()
            .zip(&self.bounds)
            .map(|(x, b)| (x - b.lo).min(b.hi - x))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Control set: per-coordinate intervals, possibly time-dependent.
#[derive(Clone)]
pub enum ControlSet {
    Constant(Vec<Interval>),
    TimeVarying(Arc<dyn Fn(f64) -> Vec<Interval> + Send + Sync>),
}

impl ControlSet {
    pub fn bounds_at(&self, t: f64) -> Vec<Interval> {
        match self {
            ControlSet::Constant(b) => b.clone(),
            ControlSet::TimeVarying(f) => f(t),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ControlSet::Constant(b) => b.len(),
            ControlSet::TimeVarying(f) => f(0.0).len(),
        }
    }

    pub fn contains(&self, u: &Control, t: f64) -> bool {
        let b = self.bounds_at(t);
        u.len() == b.len() && u.iter().zip(&b).all(|(v, iv)| iv.contains(*v))
    }
}

impl std::fmt::Debug for ControlSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ControlSet::Constant(b) => write!(f, "ControlSet::Constant({b:?})"),
            ControlSet::TimeVarying(_) => write!(f, "ControlSet::TimeVarying(..)"),
        }
    }
}

/// Full problem description with exact state-partials.
///
/// Immutable after construction; all closures are `Send + Sync` so a
/// problem can be shared freely between threads.
#[derive(Clone)]
pub struct ControlProblem {
    pub name: String,
    pub state_dim: usize,
    pub control_dim: usize,
    dynamics: DynamicsFn,
    running_cost: ScalarFn,
    initial_cost: InitialCostFn,
    dynamics_jac: JacFn,
    cost_grad: GradFn,
    pub control_set: ControlSet,
    pub initial_set: BoxSet,
    l_subdifferential: Option<SubdiffFn>,
}

impl std::fmt::Debug for ControlProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ControlProblem")
            .field("name", &self.name)
            .field("state_dim", &self.state_dim)
            .field("control_dim", &self.control_dim)
            .finish()
    }
}

impl ControlProblem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        state_dim: usize,
        control_dim: usize,
        dynamics: DynamicsFn,
        running_cost: ScalarFn,
        initial_cost: InitialCostFn,
        dynamics_jac: JacFn,
        cost_grad: GradFn,
        control_set: ControlSet,
        initial_set: BoxSet,
    ) -> Result<Self, CoreError> {
        if state_dim == 0 {
            return Err(CoreError::InvalidSpec("state_dim must be >= 1".into()));
        }
        if initial_set.dim() != state_dim {
            return Err(CoreError::DimensionMismatch(format!(
                "initial set has dim {}, state_dim is {state_dim}",
                initial_set.dim()
            )));
        }
        if control_set.dim() != control_dim {
            return Err(CoreError::DimensionMismatch(format!(
                "control set has dim {}, control_dim is {control_dim}",
                control_set.dim()
            )));
        }
        for iv in control_set.bounds_at(0.0) {
            if iv.lo > iv.hi {
                return Err(CoreError::InvalidSpec(format!(
                    "control bound lo {} > hi {}",
                    iv.lo, iv.hi
                )));
            }
        }
        Ok(ControlProblem {
            name: name.into(),
            state_dim,
            control_dim,
            dynamics,
            running_cost,
            initial_cost,
            dynamics_jac,
            cost_grad,
            control_set,
            initial_set,
            l_subdifferential: None,
        })
    }

    pub fn with_l_subdifferential(mut self, oracle: SubdiffFn) -> Self {
        self.l_subdifferential = Some(oracle);
        self
    }

    pub fn dynamics(&self, x: &State, u: &Control, t: f64) -> State {
        (self.dynamics)(x, u, t)
    }

    pub fn running_cost(&self, x: &State, u: &Control, t: f64) -> f64 {
        (self.running_cost)(x, u, t)
    }

    pub fn initial_cost(&self, b: &State) -> f64 {
        (self.initial_cost)(b)
    }

    pub fn dynamics_jac(&self, x: &State, u: &Control, t: f64) -> DMatrix<f64> {
        (self.dynamics_jac)(x, u, t)
    }

    pub fn cost_grad(&self, x: &State, u: &Control, t: f64) -> Covector {
        (self.cost_grad)(x, u, t)
    }

    /// Subdifferential of `l` at `b`: the user oracle when supplied,
    /// otherwise the central finite-difference gradient.
    pub fn l_subdifferential(&self, b: &State) -> Vec<Covector> {
        if let Some(oracle) = &self.l_subdifferential {
            return oracle(b);
        }
        let h = 1e-6;
        let mut g = RowDVector::zeros(self.state_dim);
        for i in 0..self.state_dim {
            let mut bp = b.clone();
            let mut bm = b.clone();
            bp[i] += h;
            bm[i] -= h;
            g[i] = (self.initial_cost(&bp) - self.initial_cost(&bm)) / (2.0 * h);
        }
        vec![g]
    }

    /// Checks the exact partials against finite differences at seeded
    /// random probe points in a unit box around the origin.
    pub fn validate_partials(&self, tol: f64, probes: usize, seed: u64) -> Result<(), CoreError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = 1e-5;
        for _ in 0..probes {
            let x = DVector::from_fn(self.state_dim, |_, _| rng.gen_range(-0.5..0.5));
            let bounds = self.control_set.bounds_at(0.0);
            let u = DVector::from_fn(self.control_dim, |i, _| {
                let iv = bounds[i];
                if iv.hi > iv.lo {
                    rng.gen_range(iv.lo..iv.hi)
                } else {
                    iv.lo
                }
            });
            let t = rng.gen_range(0.0..2.0);

            let jac = self.dynamics_jac(&x, &u, t);
            for j in 0..self.state_dim {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += h;
                xm[j] -= h;
                let col = (self.dynamics(&xp, &u, t) - self.dynamics(&xm, &u, t)) / (2.0 * h);
                for i in 0..self.state_dim {
                    if (jac[(i, j)] - col[i]).abs() > tol {
                        return Err(CoreError::Invalid(format!(
                            "dfdx[{i},{j}] = {} disagrees with finite difference {} at probe",
                            jac[(i, j)],
                            col[i]
                        )));
                    }
                }
            }

            let grad = self.cost_grad(&x, &u, t);
            for j in 0..self.state_dim {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += h;
                xm[j] -= h;
                let fd =
                    (self.running_cost(&xp, &u, t) - self.running_cost(&xm, &u, t)) / (2.0 * h);
                if (grad[j] - fd).abs() > tol {
                    return Err(CoreError::Invalid(format!(
                        "df0dx[{j}] = {} disagrees with finite difference {fd} at probe",
                        grad[j]
                    )));
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Control signals
// ---------------------------------------------------------------------------

/// Piecewise-constant control on a finite grid, with a tail value used for
/// all times beyond the last breakpoint. Cells are right-open.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSignal {
    grid: Vec<f64>,
    values: Vec<Control>,
    tail_control: Control,
}

impl ControlSignal {
    /// `grid` must start at 0 and be strictly increasing; `values` holds
    /// one control per cell between consecutive breakpoints.
    pub fn new(grid: Vec<f64>, values: Vec<Control>, tail_control: Control) -> Result<Self, CoreError> {
        if grid.is_empty() || grid[0] != 0.0 {
            return Err(CoreError::Invalid("control grid must start at 0".into()));
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CoreError::Invalid(
                "control grid must be strictly increasing".into(),
            ));
        }
        if values.len() + 1 != grid.len() {
            return Err(CoreError::DimensionMismatch(format!(
                "{} grid points define {} cells, got {} values",
                grid.len(),
                grid.len() - 1,
                values.len()
            )));
        }
        Ok(ControlSignal {
            grid,
            values,
            tail_control,
        })
    }

    /// Constant signal `u(t) = value` for all t.
    pub fn constant(value: Control) -> Self {
        ControlSignal {
            grid: vec![0.0],
            values: vec![],
            tail_control: value,
        }
    }

    pub fn constant_scalar(v: f64) -> Self {
        Self::constant(DVector::from_element(1, v))
    }

    pub fn dim(&self) -> usize {
        self.tail_control.len()
    }

    pub fn value_at(&self, t: f64) -> &Control {
        match self
            .grid
            .binary_search_by(|g| g.partial_cmp(&t).unwrap())
        {
            Ok(i) | Err(i) if i >= self.grid.len() => &self.tail_control,
            Ok(i) => {
                if i + 1 == self.grid.len() {
                    &self.tail_control
                } else {
                    &self.values[i]
                }
            }
            // t below the grid start (can happen transiently inside a
            // backward integration step): use the first cell.
            Err(0) => self.values.first().unwrap_or(&self.tail_control),
            Err(i) => {
                if i == self.grid.len() {
                    &self.tail_control
                } else {
                    &self.values[i - 1]
                }
            }
        }
    }

    /// Breakpoints where the control may jump.
    pub fn breakpoints(&self) -> &[f64] {
        &self.grid
    }

    /// Checks admissibility against a control set over `[0, horizon]`.
    pub fn is_admissible(&self, set: &ControlSet, horizon: f64) -> bool {
        for (i, v) in self.values.iter().enumerate() {
            if self.grid[i] > horizon {
                break;
            }
            if !set.contains(v, self.grid[i]) {
                return false;
            }
        }
        let tail_start = *self.grid.last().unwrap();
        tail_start > horizon || set.contains(&self.tail_control, tail_start)
    }
}

// ---------------------------------------------------------------------------
// Worked-example piecewise dynamics
// ---------------------------------------------------------------------------

/// The continuous nondecreasing convex piecewise dynamics of the worked
/// example: 0 for x < 0, x^2/2 on [0, 1], x - 1/2 for x > 1.
pub fn piecewise_f_example(x: f64) -> f64 {
    if x < 0.0 {
        0.0
    } else if x <= 1.0 {
        0.5 * x * x
    } else {
        x - 0.5
    }
}

/// Branch derivative of [`piecewise_f_example`]; continuous at 0 and 1.
pub fn piecewise_f_example_deriv(x: f64) -> f64 {
    if x < 0.0 {
        0.0
    } else if x <= 1.0 {
        x
    } else {
        1.0
    }
}

// ---------------------------------------------------------------------------
// Registry
// ---------------------------------------------------------------------------

/// Names of all built-in problems.
pub fn registry_names() -> Vec<&'static str> {
    vec!["bolza-example", "lq-scalar", "zero"]
}

/// Builds a registry problem. `params` supplies e.g. `a` for `lq-scalar`.
pub fn registry_problem(name: &str, params: &serde_json::Map<String, serde_json::Value>) -> Result<ControlProblem, CoreError> {
    match name {
        "bolza-example" => bolza_example(),
        "lq-scalar" => {
            let a = params
                .get("a")
                .and_then(|v| v.as_f64())
                .unwrap_or(0.0);
            lq_scalar(a)
        }
        "zero" => zero_problem(),
        other => Err(CoreError::UnknownProblem(other.into())),
    }
}

/// The worked example: scalar state, `xdot = f(x) + u`, running cost
/// `e^{-2t} x (x^4 - 5)`, `l = 0`, `u` in `[0,1]`, initial set `[-1,2]`.
pub fn bolza_example() -> Result<ControlProblem, CoreError> {
    ControlProblem::new(
        "bolza-example",
        1,
        1,
        Arc::new(|x: &State, u: &Control, _t| {
            DVector::from_element(1, piecewise_f_example(x[0]) + u[0])
        }),
        Arc::new(|x: &State, _u: &Control, t: f64| {
            (-2.0 * t).exp() * x[0] * (x[0].powi(4) - 5.0)
        }),
        Arc::new(|_b: &State| 0.0),
        Arc::new(|x: &State, _u: &Control, _t| {
            DMatrix::from_element(1, 1, piecewise_f_example_deriv(x[0]))
        }),
        Arc::new(|x: &State, _u: &Control, t: f64| {
            RowDVector::from_element(1, (-2.0 * t).exp() * (5.0 * x[0].powi(4) - 5.0))
        }),
        ControlSet::Constant(vec![Interval::new(0.0, 1.0)]),
        BoxSet::new(vec![Interval::new(-1.0, 2.0)]),
    )
}

/// Scalar linear-quadratic fixture: `xdot = a x + u`, cost `x^2`, `l = 0`,
/// `u` in `[-1,1]`, initial set `[-1,1]`.
pub fn lq_scalar(a: f64) -> Result<ControlProblem, CoreError> {
    ControlProblem::new(
        format!("lq-scalar(a={a})"),
        1,
        1,
        Arc::new(move |x: &State, u: &Control, _t| DVector::from_element(1, a * x[0] + u[0])),
        Arc::new(|x: &State, _u: &Control, _t| x[0] * x[0]),
        Arc::new(|_b: &State| 0.0),
        Arc::new(move |_x: &State, _u: &Control, _t| DMatrix::from_element(1, 1, a)),
        Arc::new(|x: &State, _u: &Control, _t| RowDVector::from_element(1, 2.0 * x[0])),
        ControlSet::Constant(vec![Interval::new(-1.0, 1.0)]),
        BoxSet::new(vec![Interval::new(-1.0, 1.0)]),
    )
}

/// Degenerate fixture with zero dynamics and zero cost.
pub fn zero_problem() -> Result<ControlProblem, CoreError> {
    ControlProblem::new(
        "zero",
        1,
        1,
        Arc::new(|_x: &State, _u: &Control, _t| DVector::zeros(1)),
        Arc::new(|_x: &State, _u: &Control, _t| 0.0),
        Arc::new(|_b: &State| 0.0),
        Arc::new(|_x: &State, _u: &Control, _t| DMatrix::zeros(1, 1)),
        Arc::new(|_x: &State, _u: &Control, _t| RowDVector::zeros(1)),
        ControlSet::Constant(vec![Interval::new(-1.0, 1.0)]),
        BoxSet::new(vec![Interval::new(-1.0, 1.0)]),
    )
}

// ---------------------------------------------------------------------------
// External spec form
// ---------------------------------------------------------------------------

/// External problem spec: either a registry reference or an inline DSL
/// definition. Mirrors the JSON file format.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f0: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_lo: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_hi: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_lo: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_hi: Option<Vec<f64>>,
    #[serde(default)]
    pub params: serde_json::Map<String, serde_json::Value>,
}

impl ProblemSpec {
    pub fn registry(name: &str) -> Self {
        ProblemSpec {
            name: Some(name.into()),
            state_dim: None,
            control_dim: None,
            f: None,
            f0: None,
            l: None,
            u_lo: None,
            u_hi: None,
            c_lo: None,
            c_hi: None,
            params: serde_json::Map::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, CoreError> {
        serde_json::from_str(text).map_err(|e| CoreError::InvalidSpec(e.to_string()))
    }
}

struct CompiledExprs {
    f: Vec<Expr>,
    f_jac: Vec<Vec<Expr>>,
    f0: Expr,
    f0_grad: Vec<Expr>,
    m: usize,
}

fn eval_vec(exprs: &[Expr], x: &State, u: &Control, t: f64) -> DVector<f64> {
    DVector::from_iterator(
        exprs.len(),
        exprs.iter().map(|e| e.eval(x.as_slice(), u.as_slice(), t)),
    )
}

/// Builds a [`ControlProblem`] from a spec: registry entries get exact
/// closed-form partials; inline DSL definitions get symbolic-derivative
/// Jacobians.
pub fn load_problem(spec: &ProblemSpec) -> Result<ControlProblem, CoreError> {
    if let Some(name) = &spec.name {
        return registry_problem(name, &spec.params);
    }

    let m = spec
        .state_dim
        .ok_or_else(|| CoreError::InvalidSpec("state_dim required for inline spec".into()))?;
    let k = spec
        .control_dim
        .ok_or_else(|| CoreError::InvalidSpec("control_dim required for inline spec".into()))?;
    if m == 0 {
        return Err(CoreError::InvalidSpec("state_dim must be >= 1".into()));
    }
    let f_srcs = spec
        .f
        .as_ref()
        .ok_or_else(|| CoreError::InvalidSpec("f expressions required".into()))?;
    if f_srcs.len() != m {
        return Err(CoreError::DimensionMismatch(format!(
            "state_dim = {m} but {} f-expressions supplied",
            f_srcs.len()
        )));
    }
    let f0_src = spec
        .f0
        .as_ref()
        .ok_or_else(|| CoreError::InvalidSpec("f0 expression required".into()))?;

    let f: Vec<Expr> = f_srcs
        .iter()
        .map(|s| parse_expression(s))
        .collect::<Result<_, _>>()?;
    let f0 = parse_expression(f0_src)?;
    let l = spec
        .l
        .as_ref()
        .map(|s| parse_expression(s))
        .transpose()?
        .unwrap_or(Expr::Num(0.0));

    for (i, e) in f.iter().chain(std::iter::once(&f0)).enumerate() {
        if e.max_state_dim() > m {
            return Err(CoreError::DimensionMismatch(format!(
                "expression {i} references state beyond x{m}"
            )));
        }
        if e.max_control_dim() > k {
            return Err(CoreError::DimensionMismatch(format!(
                "expression {i} references control beyond u{k}"
            )));
        }
    }
    if l.max_state_dim() > m || l.max_control_dim() > 0 {
        return Err(CoreError::DimensionMismatch(
            "l must be a function of x1..xm only".into(),
        ));
    }

    let f_jac: Vec<Vec<Expr>> = f
        .iter()
        .map(|fi| (0..m).map(|j| differentiate(fi, Var::State(j))).collect())
        .collect();
    let f0_grad: Vec<Expr> = (0..m).map(|j| differentiate(&f0, Var::State(j))).collect();

    let u_lo = spec.u_lo.clone().unwrap_or_default();
    let u_hi = spec.u_hi.clone().unwrap_or_default();
    if u_lo.len() != k || u_hi.len() != k {
        return Err(CoreError::DimensionMismatch(format!(
            "control_dim = {k} but bounds have {} / {} entries",
            u_lo.len(),
            u_hi.len()
        )));
    }
    let c_lo = spec.c_lo.clone().unwrap_or(vec![0.0; m]);
    let c_hi = spec.c_hi.clone().unwrap_or(vec![0.0; m]);
    if c_lo.len() != m || c_hi.len() != m {
        return Err(CoreError::DimensionMismatch(format!(
            "state_dim = {m} but initial-set bounds have {} / {} entries",
            c_lo.len(),
            c_hi.len()
        )));
    }

    let compiled = Arc::new(CompiledExprs {
        f,
        f_jac,
        f0,
        f0_grad,
        m,
    });
    let l = Arc::new(l);

    let c1 = compiled.clone();
    let c2 = compiled.clone();
    let c3 = compiled.clone();
    let c4 = compiled.clone();
    let l1 = l.clone();

    ControlProblem::new(
        "inline",
        m,
        k,
        Arc::new(move |x: &State, u: &Control, t| eval_vec(&c1.f, x, u, t)),
        Arc::new(move |x: &State, u: &Control, t| c2.f0.eval(x.as_slice(), u.as_slice(), t)),
        Arc::new(move |b: &State| l1.eval(b.as_slice(), &[], 0.0)),
        Arc::new(move |x: &State, u: &Control, t| {
            DMatrix::from_fn(c3.m, c3.m, |i, j| {
                c3.f_jac[i][j].eval(x.as_slice(), u.as_slice(), t)
            })
        }),
        Arc::new(move |x: &State, u: &Control, t| {
            RowDVector::from_iterator(
                c4.m,
                c4.f0_grad
                    .iter()
                    .map(|e| e.eval(x.as_slice(), u.as_slice(), t)),
            )
        }),
        ControlSet::Constant(
            u_lo.iter()
                .zip(&u_hi)
                .map(|(lo, hi)| Interval::new(*lo, *hi))
                .collect(),
        ),
        BoxSet::new(
            c_lo.iter()
                .zip(&c_hi)
                .map(|(lo, hi)| Interval::new(*lo, *hi))
                .collect(),
        ),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn registry_bolza_example() {
        let p = load_problem(&ProblemSpec::registry("bolza-example")).unwrap();
        assert_eq!(p.state_dim, 1);
        let x = DVector::from_element(1, 0.5);
        let u = DVector::from_element(1, 0.25);
        // f(0.5) + u = 0.125 + 0.25
        assert_abs_diff_eq!(p.dynamics(&x, &u, 0.0)[0], 0.375, epsilon = 1e-12);
        // f0 at t=0: 0.5*(0.0625 - 5)
        assert_abs_diff_eq!(
            p.running_cost(&x, &u, 0.0),
            0.5 * (0.5f64.powi(4) - 5.0),
            epsilon = 1e-12
        );
        assert_eq!(p.initial_cost(&x), 0.0);
        p.validate_partials(1e-5, 100, 7).unwrap();
    }

    #[test]
    fn registry_lq_scalar_with_param() {
        let mut params = serde_json::Map::new();
        params.insert("a".into(), serde_json::json!(2.0));
        let p = registry_problem("lq-scalar", &params).unwrap();
        let x = DVector::from_element(1, 3.0);
        let u = DVector::from_element(1, 0.5);
        assert_abs_diff_eq!(p.dynamics(&x, &u, 1.0)[0], 6.5, epsilon = 1e-12);
        p.validate_partials(1e-5, 100, 11).unwrap();
    }

    #[test]
    fn unknown_registry_name() {
        let err = load_problem(&ProblemSpec::registry("no-such-problem")).unwrap_err();
        assert!(matches!(err, CoreError::UnknownProblem(_)));
    }

    #[test]
    fn inline_spec_dimension_mismatch() {
        let spec = ProblemSpec {
            name: None,
            state_dim: Some(1),
            control_dim: Some(1),
            f: Some(vec!["x1".into(), "x1 + u1".into()]),
            f0: Some("x1^2".into()),
            l: None,
            u_lo: Some(vec![-1.0]),
            u_hi: Some(vec![1.0]),
            c_lo: Some(vec![-1.0]),
            c_hi: Some(vec![1.0]),
            params: serde_json::Map::new(),
        };
        let err = load_problem(&spec).unwrap_err();
        assert!(matches!(err, CoreError::DimensionMismatch(_)));
    }

    #[test]
    fn inline_spec_with_symbolic_jacobian() {
        let spec = ProblemSpec {
            name: None,
            state_dim: Some(2),
            control_dim: Some(1),
            f: Some(vec!["x2".into(), "-sin(x1) + u1".into()]),
            f0: Some("x1^2 + x2^2".into()),
            l: Some("x1".into()),
            u_lo: Some(vec![-1.0]),
            u_hi: Some(vec![1.0]),
            c_lo: Some(vec![-1.0, -1.0]),
            c_hi: Some(vec![1.0, 1.0]),
            params: serde_json::Map::new(),
        };
        let p = load_problem(&spec).unwrap();
        p.validate_partials(1e-5, 100, 3).unwrap();
        let b = DVector::from_vec(vec![0.3, 0.4]);
        let subs = p.l_subdifferential(&b);
        assert_eq!(subs.len(), 1);
        assert_abs_diff_eq!(subs[0][0], 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(subs[0][1], 0.0, epsilon = 1e-6);
    }

    #[test]
    fn piecewise_example_branches() {
        assert_eq!(piecewise_f_example(-3.0), 0.0);
        assert_eq!(piecewise_f_example(0.5), 0.125);
        assert_eq!(piecewise_f_example(2.0), 1.5);
        // continuity at the junctions
        assert_abs_diff_eq!(piecewise_f_example(0.0), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(piecewise_f_example(1.0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(piecewise_f_example_deriv(0.0), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(piecewise_f_example_deriv(1.0), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn piecewise_example_nondecreasing_convex() {
        let n = 501;
        let vals: Vec<f64> = (0..n)
            .map(|i| piecewise_f_example(-2.0 + 5.0 * i as f64 / (n - 1) as f64))
            .collect();
        for w in vals.windows(2) {
            assert!(w[1] >= w[0]);
        }
        for w in vals.windows(3) {
            assert!(w[2] - 2.0 * w[1] + w[0] >= -1e-12);
        }
    }

    #[test]
    fn control_signal_lookup() {
        let sig = ControlSignal::new(
            vec![0.0, 1.0, 2.0],
            vec![
                DVector::from_element(1, 0.0),
                DVector::from_element(1, 1.0),
            ],
            DVector::from_element(1, 0.5),
        )
        .unwrap();
        assert_eq!(sig.value_at(0.0)[0], 0.0);
        assert_eq!(sig.value_at(0.99)[0], 0.0);
        assert_eq!(sig.value_at(1.0)[0], 1.0);
        assert_eq!(sig.value_at(1.5)[0], 1.0);
        assert_eq!(sig.value_at(2.0)[0], 0.5);
        assert_eq!(sig.value_at(100.0)[0], 0.5);
    }

    #[test]
    fn control_signal_rejects_bad_grid() {
        assert!(ControlSignal::new(vec![1.0], vec![], DVector::zeros(1)).is_err());
        assert!(
            ControlSignal::new(vec![0.0, 0.0], vec![DVector::zeros(1)], DVector::zeros(1))
                .is_err()
        );
    }
}
