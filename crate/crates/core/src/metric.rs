//! Control-space metric machinery: reachable-set funnels, Lipschitz
//! weights, the pointwise ultrametric `w`, the integral metric `rho`,
//! the backward pullback map, and the trajectory-divergence bound.
//!
//! All suprema over continua are over-approximated by deterministic
//! seeded sampling with an inflation safety factor; bounds here are
//! empirical, not certified.

use std::sync::Arc;

use nalgebra::{DVector, RowDVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::ode::{integrate, IntegratorSettings};
use crate::problem::{BoxSet, Control, ControlProblem, ControlSignal, Interval};

pub type FieldFn = Arc<dyn Fn(&DVector<f64>, &Control, f64) -> DVector<f64> + Send + Sync>;

/// Stacks a problem's state, adjoint, and multiplier dynamics into one
/// field on `(x, psi, lambda)`; the multiplier is constant.
pub fn extended_field(problem: &ControlProblem) -> (FieldFn, usize) {
    let p = problem.clone();
    let m = problem.state_dim;
    let dim = 2 * m + 1;
    let f: FieldFn = Arc::new(move |y: &DVector<f64>, u: &Control, t: f64| {
        let x = y.rows(0, m).into_owned();
        let psi = RowDVector::from_iterator(m, (m..2 * m).map(|i| y[i]));
        let lambda = y[2 * m];
        let fx = p.dynamics_jac(&x, u, t);
        let f0x = p.cost_grad(&x, u, t);
        let dpsi = -(&psi * &fx) + &f0x * lambda;
        let mut dy = DVector::zeros(2 * m + 1);
        dy.rows_mut(0, m).copy_from(&p.dynamics(&x, u, t));
        for i in 0..m {
            dy[m + i] = dpsi[i];
        }
        dy
    });
    (f, dim)
}

/// Magnitude class of a control: the least natural number `>= ||u||`
/// (Euclidean norm), always `>= 1`.
pub fn control_class(u: &Control) -> usize {
    (u.norm().ceil() as usize).max(1)
}

/// Tuning knobs for context construction.
#[derive(Debug, Clone)]
pub struct BuildConfig {
    pub funnel_samples: usize,
    pub t_samples_per_interval: usize,
    pub y_samples: usize,
    pub control_points: usize,
    pub inflation: f64,
    pub seed: u64,
    pub settings: IntegratorSettings,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            funnel_samples: 8,
            t_samples_per_interval: 9,
            y_samples: 16,
            control_points: 9,
            inflation: 1.25,
            seed: 0,
            settings: IntegratorSettings::fixed(1e-2),
        }
    }
}

/// Immutable context holding the funnel boxes, Lipschitz table, weight
/// `M`, and per-class field-variation bounds; all `rho` queries read
/// from it without further integration.
pub struct MetricContext {
    pub field: FieldFn,
    pub dim: usize,
    pub u_star: ControlSignal,
    pub s: BoxSet,
    pub t_max: f64,
    pub n_max: usize,
    /// `boxes[n-1]` bounds every sampled funnel state on `[0, n]`.
    pub boxes: Vec<BoxSet>,
    /// Per-unit-interval Lipschitz bounds of `y -> a(y, u*(t), t)`.
    pub l_bars: Vec<f64>,
    /// `M` at integer times; piecewise linear in between.
    pub m_breaks: Vec<f64>,
    pub k_max: usize,
    /// `c[j-1][k-1]` = sampled sup of `||a(y,u,t) - a(y,v,t)||` over the
    /// j-th unit interval, y in G_j, and controls of class <= k.
    pub c: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContextSummary {
    pub dim: usize,
    pub t_max: f64,
    pub k_max: usize,
    pub boxes: Vec<Vec<(f64, f64)>>,
    pub l_bars: Vec<f64>,
    pub m_breaks: Vec<f64>,
    pub c: Vec<Vec<f64>>,
}

/// Value of the control metric together with the plain disagreement
/// measure over the same window.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RhoValue {
    pub value: f64,
    pub horizon: f64,
    /// Lebesgue measure of `{t <= horizon : u(t) != v(t)}`.
    pub disagreement: f64,
}

fn box_corners(s: &BoxSet) -> Vec<DVector<f64>> {
    let d = s.dim();
    assert!(d <= 16, "corner enumeration limited to dim <= 16");
    (0..(1usize << d))
        .map(|mask| {
            DVector::from_fn(d, |i, _| {
                if mask >> i & 1 == 1 {
                    s.bounds[i].hi
                } else {
                    s.bounds[i].lo
                }
            })
        })
        .collect()
}

fn latin_hypercube(rng: &mut ChaCha8Rng, s: &BoxSet, count: usize) -> Vec<DVector<f64>> {
    let d = s.dim();
    if count == 0 {
        return vec![];
    }
    let mut strata: Vec<Vec<usize>> = (0..d)
        .map(|_| {
            let mut idx: Vec<usize> = (0..count).collect();
            idx.shuffle(rng);
            idx
        })
        .collect();
    (0..count)
        .map(|k| {
            DVector::from_fn(d, |i, _| {
                let cell = strata[i].pop().unwrap_or(k);
                let f = (cell as f64 + rng.gen_range(0.0..1.0)) / count as f64;
                s.bounds[i].lo + f * (s.bounds[i].hi - s.bounds[i].lo)
            })
        })
        .collect()
}

fn inflate(bounds: &[(f64, f64)], factor: f64) -> BoxSet {
    BoxSet::new(
        bounds
            .iter()
            .map(|(lo, hi)| {
                let c = 0.5 * (lo + hi);
                let h = 0.5 * (hi - lo) * factor + 1e-9;
                Interval::new(c - h, c + h)
            })
            .collect(),
    )
}

/// Numeric Jacobian norm of `y -> field(y, u, t)` (Frobenius, an upper
/// bound on the operator norm).
fn jac_norm(field: &FieldFn, y: &DVector<f64>, u: &Control, t: f64) -> f64 {
    let d = y.len();
    let h = 1e-5;
    let mut sum = 0.0;
    for j in 0..d {
        let mut yp = y.clone();
        let mut ym = y.clone();
        yp[j] += h;
        ym[j] -= h;
        let col = (field(&yp, u, t) - field(&ym, u, t)) / (2.0 * h);
        sum += col.norm_squared();
    }
    sum.sqrt()
}

/// Sample grid on the control box clamped to magnitude class `k`.
fn control_samples(bounds: &[Interval], k: usize, points: usize) -> Vec<Control> {
    let d = bounds.len();
    let clamped: Vec<Interval> = bounds
        .iter()
        .map(|iv| Interval::new(iv.lo.max(-(k as f64)), iv.hi.min(k as f64)))
        .filter(|iv| iv.lo <= iv.hi)
        .collect();
    if clamped.len() != d {
        return vec![];
    }
    let mut out = Vec::new();
    let mut idx = vec![0usize; d];
    loop {
        let v = DVector::from_fn(d, |i, _| {
            let iv = clamped[i];
            if points <= 1 || iv.hi == iv.lo {
                iv.lo
            } else {
                iv.lo + (idx[i] as f64 / (points - 1) as f64) * (iv.hi - iv.lo)
            }
        });
        if v.norm() <= k as f64 + 1e-12 {
            out.push(v);
        }
        let mut i = 0;
        loop {
            idx[i] += 1;
            if idx[i] < points {
                break;
            }
            idx[i] = 0;
            i += 1;
            if i == d {
                return out;
            }
        }
    }
}

/// Builds the metric context for a field around the reference control,
/// starting from the initial box `s`.
pub fn build_context(
    field: FieldFn,
    dim: usize,
    u_star: ControlSignal,
    control_bounds: crate::problem::ControlSet,
    s: BoxSet,
    t_max: f64,
    config: &BuildConfig,
) -> Result<MetricContext, CoreError> {
    if t_max <= 0.0 {
        return Err(CoreError::Invalid("t_max must be positive".into()));
    }
    if s.dim() != dim {
        return Err(CoreError::DimensionMismatch(format!(
            "initial box has dim {}, field dim {dim}",
            s.dim()
        )));
    }
    let n_max = t_max.ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    // Funnel pass: integrate sample starting points under u* and track
    // cumulative per-coordinate bounds per unit interval.
    let mut starts = box_corners(&s);
    starts.extend(latin_hypercube(&mut rng, &s, config.funnel_samples));
    let mut cum: Vec<Vec<(f64, f64)>> =
        vec![vec![(f64::INFINITY, f64::NEG_INFINITY); dim]; n_max];
    let u_ref = u_star.clone();
    let rhs = {
        let field = field.clone();
        move |t: f64, y: &DVector<f64>| field(y, u_ref.value_at(t), t)
    };
    for y0 in &starts {
        let path = integrate(
            &rhs,
            0.0,
            y0.clone(),
            t_max,
            u_star.breakpoints(),
            &config.settings,
        )
        .map_err(|e| CoreError::Invalid(format!("funnel blow-up: {e}")))?;
        for (t, y) in path.grid.iter().zip(&path.states) {
            let n = (t.ceil() as usize).clamp(1, n_max);
            for i in 0..dim {
                let b = &mut cum[n - 1][i];
                b.0 = b.0.min(y[i]);
                b.1 = b.1.max(y[i]);
            }
        }
    }
    // Make bounds cumulative over [0, n] and inflate.
    for n in 1..n_max {
        for i in 0..dim {
            cum[n][i].0 = cum[n][i].0.min(cum[n - 1][i].0);
            cum[n][i].1 = cum[n][i].1.max(cum[n - 1][i].1);
        }
    }
    let boxes: Vec<BoxSet> = cum.iter().map(|b| inflate(b, config.inflation)).collect();

    // Lipschitz table per unit interval and the cumulative weight M.
    let mut l_bars = Vec::with_capacity(n_max);
    for (j, g) in boxes.iter().enumerate() {
        let mut y_samples = box_corners(g);
        y_samples.extend(latin_hypercube(&mut rng, g, config.y_samples));
        let mut worst = 0.0f64;
        for it in 0..config.t_samples_per_interval {
            let t = j as f64
                + (it as f64 + 0.5) / config.t_samples_per_interval as f64;
            let u = u_star.value_at(t);
            for y in &y_samples {
                worst = worst.max(jac_norm(&field, y, u, t));
            }
        }
        l_bars.push(worst * config.inflation);
    }
    let mut m_breaks = vec![0.0];
    for l in &l_bars {
        m_breaks.push(m_breaks.last().unwrap() + l);
    }

    // Per-class field-variation bounds.
    let corner_norm = control_bounds
        .bounds_at(0.0)
        .iter()
        .map(|iv| iv.lo.abs().max(iv.hi.abs()).powi(2))
        .sum::<f64>()
        .sqrt();
    let k_max = (corner_norm.ceil() as usize).clamp(1, 8);
    let mut c = Vec::with_capacity(n_max);
    for (j, g) in boxes.iter().enumerate() {
        let mut y_samples = box_corners(g);
        y_samples.extend(latin_hypercube(&mut rng, g, config.y_samples / 2));
        let mut per_k = Vec::with_capacity(k_max);
        for k in 1..=k_max {
            let mut worst = 0.0f64;
            for it in 0..config.t_samples_per_interval {
                let t = j as f64
                    + (it as f64 + 0.5) / config.t_samples_per_interval as f64;
                let us = control_samples(&control_bounds.bounds_at(t), k, config.control_points);
                for y in &y_samples {
                    let values: Vec<DVector<f64>> =
                        us.iter().map(|u| field(y, u, t)).collect();
                    for a in &values {
                        for b in &values {
                            worst = worst.max((a - b).norm());
                        }
                    }
                }
            }
            // Nondecreasing in k by construction of nested classes.
            if let Some(prev) = per_k.last() {
                worst = worst.max(*prev);
            }
            per_k.push(worst);
        }
        c.push(per_k);
    }

    Ok(MetricContext {
        field,
        dim,
        u_star,
        s,
        t_max,
        n_max,
        boxes,
        l_bars,
        m_breaks,
        k_max,
        c,
    })
}

/// Builds the context for a problem's extended `(x, psi, lambda)` field.
pub fn build_problem_context(
    problem: &ControlProblem,
    u_star: &ControlSignal,
    s: BoxSet,
    t_max: f64,
    config: &BuildConfig,
) -> Result<MetricContext, CoreError> {
    let (field, dim) = extended_field(problem);
    build_context(
        field,
        dim,
        u_star.clone(),
        problem.control_set.clone(),
        s,
        t_max,
        config,
    )
}

/// `integral of ceil(y) dy from 0 to x`, in closed form.
fn int_ceil(x: f64) -> f64 {
    let n = x.floor();
    n * (n + 1.0) / 2.0 + (n + 1.0) * (x - n)
}

impl MetricContext {
    /// Piecewise-linear cumulative weight.
    pub fn m_at(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, self.n_max as f64);
        let j = (t.ceil() as usize).clamp(1, self.n_max);
        self.m_breaks[j - 1] + self.l_bars[j - 1] * (t - (j - 1) as f64)
    }

    /// Weighted field-variation bound for magnitude class `k` at time `t`.
    pub fn r_a(&self, k: usize, t: f64) -> Result<f64, CoreError> {
        if k < 1 || k > self.k_max {
            return Err(CoreError::Invalid(format!(
                "control class {k} outside computed range 1..={}",
                self.k_max
            )));
        }
        if t < 0.0 || t > self.t_max {
            return Err(CoreError::Invalid(format!(
                "time {t} outside [0, {}]",
                self.t_max
            )));
        }
        let j = (t.ceil() as usize).clamp(1, self.n_max);
        Ok(self.m_at(t) * self.c[j - 1][k - 1])
    }

    /// Pointwise weight between two control values: 0 on agreement, else
    /// the ceiling of the class-resolved variation bound. The class is
    /// the larger of the two magnitude classes, which makes `w` an exact
    /// ultrametric (max of per-class values).
    pub fn w(&self, u: &Control, v: &Control, t: f64) -> Result<f64, CoreError> {
        if u == v {
            return Ok(0.0);
        }
        let k = control_class(u).max(control_class(v)).min(self.k_max);
        Ok(self.r_a(k, t)?.ceil())
    }

    /// Integral metric between two piecewise-constant controls over
    /// `[0, T]`, computed exactly segment by segment.
    pub fn rho(
        &self,
        u: &ControlSignal,
        v: &ControlSignal,
        horizon: f64,
    ) -> Result<RhoValue, CoreError> {
        if horizon < 0.0 || horizon > self.t_max {
            return Err(CoreError::Invalid(format!(
                "horizon {horizon} outside [0, {}]",
                self.t_max
            )));
        }
        let mut cuts: Vec<f64> = vec![0.0, horizon];
        cuts.extend((1..=self.n_max).map(|n| n as f64).filter(|t| *t < horizon));
        cuts.extend(u.breakpoints().iter().copied().filter(|t| *t < horizon));
        cuts.extend(v.breakpoints().iter().copied().filter(|t| *t < horizon));
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-14);

        let mut value = 0.0;
        let mut disagreement = 0.0;
        for seg in cuts.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            if b <= a {
                continue;
            }
            let mid = 0.5 * (a + b);
            let uu = u.value_at(mid);
            let vv = v.value_at(mid);
            if uu == vv {
                continue;
            }
            disagreement += b - a;
            let k = control_class(uu).max(control_class(vv)).min(self.k_max);
            let j = (mid.ceil() as usize).clamp(1, self.n_max);
            let cval = self.c[j - 1][k - 1];
            // Integrand ceil(cval * M(t)) with M affine on the segment.
            let f_a = cval * self.m_at(a);
            let f_b = cval * self.m_at(b);
            let slope = (f_b - f_a) / (b - a);
            value += if slope.abs() < 1e-15 {
                (b - a) * f_a.ceil()
            } else {
                (int_ceil(f_b) - int_ceil(f_a)) / slope
            };
        }
        Ok(RhoValue {
            value,
            horizon,
            disagreement,
        })
    }

    /// Initial position of the reference flow through `(z, theta)`:
    /// integrates the field backward under `u*`.
    pub fn pullback_kappa(
        &self,
        z: &DVector<f64>,
        theta: f64,
        settings: &IntegratorSettings,
    ) -> Result<DVector<f64>, CoreError> {
        if theta < 0.0 || theta > self.t_max {
            return Err(CoreError::Invalid(format!(
                "theta {theta} outside [0, {}]",
                self.t_max
            )));
        }
        if theta == 0.0 {
            return Ok(z.clone());
        }
        let u_ref = self.u_star.clone();
        let field = self.field.clone();
        let rhs = move |t: f64, y: &DVector<f64>| field(y, u_ref.value_at(t), t);
        let path = integrate(
            &rhs,
            theta,
            z.clone(),
            0.0,
            self.u_star.breakpoints(),
            settings,
        )?;
        Ok(path.last().clone())
    }

    pub fn summary(&self) -> ContextSummary {
        ContextSummary {
            dim: self.dim,
            t_max: self.t_max,
            k_max: self.k_max,
            boxes: self
                .boxes
                .iter()
                .map(|b| b.bounds.iter().map(|iv| (iv.lo, iv.hi)).collect())
                .collect(),
            l_bars: self.l_bars.clone(),
            m_breaks: self.m_breaks.clone(),
            c: self.c.clone(),
        }
    }
}

/// Outcome of a single divergence-bound trial.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DivergenceCheck {
    /// False when the guard `rho(u*, u, T) < dist(y0, bd S)` fails; the
    /// bound is then not applicable and the trial is reported as skipped.
    pub guard_ok: bool,
    pub rho_total: f64,
    pub boundary_distance: f64,
    /// Per-time rows `(t, ||pullback - y0||, rho(u*, u, t), margin)`.
    pub rows: Vec<(f64, f64, f64, f64)>,
    pub min_margin: f64,
    pub holds: bool,
}

/// Checks that the pullback of the perturbed trajectory stays within
/// `rho(u*, u, t)` of its starting point, at sampled grid times.
pub fn verify_divergence_bound(
    ctx: &MetricContext,
    u: &ControlSignal,
    y0: &DVector<f64>,
    horizon: f64,
    settings: &IntegratorSettings,
) -> Result<DivergenceCheck, CoreError> {
    let rho_total = ctx.rho(&ctx.u_star, u, horizon)?.value;
    let boundary_distance = ctx.s.dist_to_boundary(y0);
    if rho_total >= boundary_distance {
        return Ok(DivergenceCheck {
            guard_ok: false,
            rho_total,
            boundary_distance,
            rows: vec![],
            min_margin: f64::NAN,
            holds: false,
        });
    }

    let field = ctx.field.clone();
    let u_run = u.clone();
    let rhs = move |t: f64, y: &DVector<f64>| field(y, u_run.value_at(t), t);
    let path = integrate(&rhs, 0.0, y0.clone(), horizon, u.breakpoints(), settings)?;

    let n = path.grid.len();
    let stride = (n / 20).max(1);
    let mut rows = Vec::new();
    let mut min_margin = f64::INFINITY;
    let mut idx: Vec<usize> = (0..n).step_by(stride).collect();
    if *idx.last().unwrap() != n - 1 {
        idx.push(n - 1);
    }
    for k in idx {
        let t = path.grid[k];
        let pulled = ctx.pullback_kappa(&path.states[k], t, settings)?;
        let mut lhs = (pulled - y0).norm();
        // Integrating forward and pulling back cannot be bitwise exact;
        // displacements at roundoff scale are genuinely zero.
        if lhs <= 1e-12 * (1.0 + y0.norm()) {
            lhs = 0.0;
        }
        let rho_t = ctx.rho(&ctx.u_star, u, t)?.value;
        let margin = rho_t - lhs;
        min_margin = min_margin.min(margin);
        rows.push((t, lhs, rho_t, margin));
    }
    Ok(DivergenceCheck {
        guard_ok: true,
        rho_total,
        boundary_distance,
        rows,
        min_margin,
        holds: min_margin >= 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{bolza_example, zero_problem, ControlSet};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn settings() -> IntegratorSettings {
        IntegratorSettings::fixed(1e-3)
    }

    fn scalar_box(lo: f64, hi: f64) -> BoxSet {
        BoxSet::new(vec![Interval::new(lo, hi)])
    }

    fn scalar(v: f64) -> DVector<f64> {
        DVector::from_element(1, v)
    }

    fn growth_context() -> MetricContext {
        // Scalar field a(y, u, t) = y + u: Lipschitz constant 1 and full
        // control sensitivity, so both M and c are nontrivial.
        let field: FieldFn = Arc::new(|y, u, _t| {
            DVector::from_element(1, y[0] + u[0])
        });
        build_context(
            field,
            1,
            ControlSignal::constant_scalar(0.0),
            ControlSet::Constant(vec![Interval::new(-3.0, 3.0)]),
            scalar_box(-1.0, 1.0),
            2.0,
            &BuildConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn int_ceil_matches_quadrature() {
        for x in [-2.7, -1.0, -0.3, 0.0, 0.4, 1.0, 2.5, 7.3] {
            let n = 200_000;
            let mut acc = 0.0;
            for i in 0..n {
                let y = x * (i as f64 + 0.5) / n as f64;
                acc += (y as f64).ceil() * x / n as f64;
            }
            assert_abs_diff_eq!(int_ceil(x), acc, epsilon = 1e-3);
        }
    }

    #[test]
    fn control_class_values() {
        assert_eq!(control_class(&scalar(0.0)), 1);
        assert_eq!(control_class(&scalar(0.5)), 1);
        assert_eq!(control_class(&scalar(-1.0)), 1);
        assert_eq!(control_class(&scalar(1.5)), 2);
        assert_eq!(control_class(&DVector::from_vec(vec![3.0, 4.0])), 5);
    }

    #[test]
    fn zero_field_context_is_trivial() {
        let p = zero_problem().unwrap();
        let u = ControlSignal::constant_scalar(0.0);
        let s = BoxSet::new(vec![
            Interval::new(-1.0, 1.0),
            Interval::new(-1.0, 1.0),
            Interval::new(-1.0, 1.0),
        ]);
        let ctx = build_problem_context(&p, &u, s.clone(), 3.0, &BuildConfig::default()).unwrap();
        // Funnels stay at (the inflation of) S; weights vanish.
        for b in &ctx.boxes {
            for (iv, siv) in b.bounds.iter().zip(&s.bounds) {
                assert!(iv.lo <= siv.lo && iv.hi >= siv.hi);
                assert!(iv.hi <= siv.hi * 1.3 + 1e-6);
            }
        }
        assert!(ctx.l_bars.iter().all(|l| *l <= 1e-8));
        assert!(ctx.m_at(3.0) <= 1e-7);
        assert_eq!(ctx.r_a(1, 1.0).unwrap(), 0.0);
        // Literal-definition rho is 0 here even under disagreement; the
        // disagreement measure is surfaced separately.
        let v = ControlSignal::constant_scalar(1.0);
        let r = ctx.rho(&u, &v, 2.0).unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(r.disagreement, 2.0);
    }

    #[test]
    fn growth_funnel_and_weight() {
        let ctx = growth_context();
        // With u* = 0 the funnel from [-1,1] is +/- e^t.
        let e = std::f64::consts::E;
        assert!(ctx.boxes[0].bounds[0].hi >= e - 1e-3);
        assert!(ctx.boxes[1].bounds[0].hi >= e * e - 1e-2);
        assert!(ctx.l_bars[0] >= 1.0);
        assert!(ctx.m_at(2.0) >= 2.0 && ctx.m_at(2.0) <= 3.0);
        assert_eq!(ctx.m_at(0.0), 0.0);
    }

    #[test]
    fn r_a_exact_for_pure_control_variation() {
        let ctx = growth_context();
        // sup over |u|,|v| <= k of ||(y+u) - (y+v)|| = 2k.
        for t in [0.5, 1.0, 1.7] {
            for k in 1..=3usize {
                let expected = 2.0 * k as f64 * ctx.m_at(t);
                assert_abs_diff_eq!(ctx.r_a(k, t).unwrap(), expected, epsilon = 1e-9);
            }
        }
        assert!(ctx.r_a(0, 1.0).is_err());
        assert!(ctx.r_a(4, 1.0).is_err());
    }

    #[test]
    fn rho_zero_on_equal_controls() {
        let ctx = growth_context();
        let u = ControlSignal::constant_scalar(0.7);
        let r = ctx.rho(&u, &u, 2.0).unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(r.disagreement, 0.0);
    }

    #[test]
    fn rho_dominates_disagreement_when_weights_active() {
        let ctx = growth_context();
        let u = ControlSignal::constant_scalar(0.0);
        let v = ControlSignal::new(
            vec![0.0, 0.5],
            vec![scalar(1.0)],
            scalar(0.0),
        )
        .unwrap();
        let r = ctx.rho(&u, &v, 2.0).unwrap();
        assert_eq!(r.disagreement, 0.5);
        // w >= 1 wherever the weighted variation bound is positive.
        assert!(r.value >= r.disagreement);
    }

    #[test]
    fn rho_exact_integral_spot_check() {
        let ctx = growth_context();
        let u = ControlSignal::constant_scalar(0.0);
        let v = ControlSignal::constant_scalar(1.0);
        let r = ctx.rho(&u, &v, 1.0).unwrap();
        // Numeric quadrature of ceil(c * M(t)) on [0,1].
        let c = ctx.c[0][0];
        let n = 100_000;
        let mut acc = 0.0;
        for i in 0..n {
            let t = (i as f64 + 0.5) / n as f64;
            acc += (c * ctx.m_at(t)).ceil() / n as f64;
        }
        assert_abs_diff_eq!(r.value, acc, epsilon = 1e-3);
    }

    #[test]
    fn pullback_inverts_flow() {
        let ctx = growth_context();
        // Flow of ydot = y from y0 = 1 reaches e at t = 1.
        let kappa = ctx
            .pullback_kappa(&scalar(std::f64::consts::E), 1.0, &settings())
            .unwrap();
        assert_abs_diff_eq!(kappa[0], 1.0, epsilon = 1e-6);
        // theta = 0 is the identity.
        let z = scalar(0.3);
        assert_eq!(ctx.pullback_kappa(&z, 0.0, &settings()).unwrap(), z);
    }

    #[test]
    fn pullback_identity_for_zero_field() {
        let p = zero_problem().unwrap();
        let u = ControlSignal::constant_scalar(0.0);
        let s = BoxSet::new(vec![
            Interval::new(-1.0, 1.0),
            Interval::new(-1.0, 1.0),
            Interval::new(-1.0, 1.0),
        ]);
        let ctx = build_problem_context(&p, &u, s, 2.0, &BuildConfig::default()).unwrap();
        let z = DVector::from_vec(vec![0.2, -0.4, 0.9]);
        let kappa = ctx.pullback_kappa(&z, 1.5, &settings()).unwrap();
        assert_abs_diff_eq!((kappa - z).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn bolza_context_builds() {
        let p = bolza_example().unwrap();
        let u = ControlSignal::constant_scalar(0.0);
        let s = BoxSet::new(vec![
            Interval::new(-2.0, 2.0),
            Interval::new(-2.0, 2.0),
            Interval::new(-2.0, 2.0),
        ]);
        let ctx = build_problem_context(&p, &u, s, 8.0, &BuildConfig::default()).unwrap();
        assert_eq!(ctx.n_max, 8);
        assert_eq!(ctx.m_at(0.0), 0.0);
        // M nondecreasing; boxes nested.
        for w in ctx.m_breaks.windows(2) {
            assert!(w[1] >= w[0]);
        }
        for w in ctx.boxes.windows(2) {
            for (a, b) in w[0].bounds.iter().zip(&w[1].bounds) {
                assert!(b.lo <= a.lo && b.hi >= a.hi);
            }
        }
        // r_a monotone in the class.
        let r1 = ctx.r_a(1, 1.0).unwrap();
        assert!(r1.is_finite() && r1 >= 0.0);
        for k in 2..=ctx.k_max {
            assert!(ctx.r_a(k, 1.0).unwrap() >= r1);
        }
        let json = serde_json::to_string(&ctx.summary()).unwrap();
        assert!(json.contains("m_breaks"));
    }

    #[test]
    fn divergence_bound_trivial_and_guarded() {
        let ctx = growth_context();
        // u = u*: both sides vanish.
        let check = verify_divergence_bound(
            &ctx,
            &ControlSignal::constant_scalar(0.0),
            &scalar(0.0),
            1.0,
            &settings(),
        )
        .unwrap();
        assert!(check.guard_ok);
        assert!(check.holds);
        assert_eq!(check.rho_total, 0.0);

        // Large perturbation fails the guard and is reported as skipped.
        let check2 = verify_divergence_bound(
            &ctx,
            &ControlSignal::constant_scalar(3.0),
            &scalar(0.0),
            2.0,
            &settings(),
        )
        .unwrap();
        assert!(!check2.guard_ok);
    }

    #[test]
    fn divergence_bound_short_disagreement() {
        let ctx = growth_context();
        // Disagree only on [0, 0.02]: rho stays below dist(0, bd S) = 1.
        let u = ControlSignal::new(
            vec![0.0, 0.02],
            vec![scalar(1.0)],
            scalar(0.0),
        )
        .unwrap();
        let check = verify_divergence_bound(&ctx, &u, &scalar(0.0), 1.0, &settings()).unwrap();
        assert!(check.guard_ok, "rho = {}", check.rho_total);
        assert!(check.holds, "min margin {}", check.min_margin);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        // w is an exact ultrametric on sampled triples.
        #[test]
        fn w_ultrametric(
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
            z in -3.0f64..3.0,
            t in 0.01f64..2.0,
        ) {
            let ctx = growth_context();
            let (ua, ub, uz) = (scalar(a), scalar(b), scalar(z));
            let wab = ctx.w(&ua, &ub, t).unwrap();
            let waz = ctx.w(&ua, &uz, t).unwrap();
            let wzb = ctx.w(&uz, &ub, t).unwrap();
            prop_assert!(wab <= waz.max(wzb) || ua == ub);
            // Symmetry is exact.
            prop_assert_eq!(wab, ctx.w(&ub, &ua, t).unwrap());
        }

        // rho symmetry and triangle inequality on piecewise-constant
        // signals.
        #[test]
        fn rho_metric_axioms(
            a in -2.0f64..2.0,
            b in -2.0f64..2.0,
            z in -2.0f64..2.0,
            cut in 0.1f64..1.9,
        ) {
            let ctx = growth_context();
            let u = ControlSignal::new(vec![0.0, cut], vec![scalar(a)], scalar(b)).unwrap();
            let v = ControlSignal::constant_scalar(z);
            let w_sig = ControlSignal::constant_scalar(a);
            let horizon = 2.0;
            let duv = ctx.rho(&u, &v, horizon).unwrap().value;
            let dvu = ctx.rho(&v, &u, horizon).unwrap().value;
            prop_assert_eq!(duv, dvu);
            let duw = ctx.rho(&u, &w_sig, horizon).unwrap().value;
            let dwv = ctx.rho(&w_sig, &v, horizon).unwrap().value;
            prop_assert!(duv <= duw + dwv + 1e-12);
        }
    }
}
