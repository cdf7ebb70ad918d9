//! Horizon sweeps and limiting co-state construction.
//!
//! A finite sweep can only report evidence about a limit, so every
//! classification here is threshold-based and `Inconclusive` is a real
//! outcome, not an error. Raw (un-normalized) multipliers are kept in
//! reports; normalization to `||psi(0)|| + lambda = 1` happens last.

use nalgebra::{DVector, RowDVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::integrate::{integrate_adjoint, integrate_sensitivity, integrate_state, CovectorPath};
use crate::ode::IntegratorSettings;
use crate::pmp::NormalCone;
use crate::problem::{ControlProblem, ControlSignal, Covector, State};

/// `||I||` beyond which a sweep is treated as unbounded.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

/// Relative convergence tolerance used by every Cauchy-style check.
pub fn eps_lim(norm: f64) -> f64 {
    1e-6 * (1.0 + norm)
}

// ---------------------------------------------------------------------------
// Horizon sequences and initial-point schedules
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum HorizonGenerator {
    Geometric { tau0: f64, ratio: f64 },
    Explicit,
}

/// Finite, strictly increasing prefix of an unbounded horizon sequence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HorizonSequence {
    pub values: Vec<f64>,
    pub generator: HorizonGenerator,
}

impl HorizonSequence {
    /// `tau_n = tau0 * ratio^n` for `n = 0..=n_max`.
    pub fn geometric(tau0: f64, ratio: f64, n_max: usize) -> Result<Self, CoreError> {
        if tau0 <= 0.0 || ratio <= 1.0 {
            return Err(CoreError::Invalid(
                "geometric horizons need tau0 > 0 and ratio > 1".into(),
            ));
        }
        let values = (0..=n_max).map(|n| tau0 * ratio.powi(n as i32)).collect();
        Ok(HorizonSequence {
            values,
            generator: HorizonGenerator::Geometric { tau0, ratio },
        })
    }

    pub fn explicit(values: Vec<f64>) -> Result<Self, CoreError> {
        if values.is_empty() || values[0] <= 0.0 {
            return Err(CoreError::Invalid("horizons must be positive".into()));
        }
        if values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CoreError::Invalid(
                "horizons must be strictly increasing".into(),
            ));
        }
        Ok(HorizonSequence {
            values,
            generator: HorizonGenerator::Explicit,
        })
    }

    /// Parses `geometric:TAU0:RATIO:N` or `list:T1,T2,...`.
    pub fn parse(s: &str) -> Result<Self, CoreError> {
        let bad = |what: &str| CoreError::Invalid(format!("bad horizon spec `{s}`: {what}"));
        if let Some(rest) = s.strip_prefix("geometric:") {
            let parts: Vec<&str> = rest.split(':').collect();
            if parts.len() != 3 {
                return Err(bad("expected geometric:TAU0:RATIO:N"));
            }
            let tau0: f64 = parts[0].parse().map_err(|_| bad("bad TAU0"))?;
            let ratio: f64 = parts[1].parse().map_err(|_| bad("bad RATIO"))?;
            let n: usize = parts[2].parse().map_err(|_| bad("bad N"))?;
            Self::geometric(tau0, ratio, n)
        } else if let Some(rest) = s.strip_prefix("list:") {
            let values: Result<Vec<f64>, _> = rest.split(',').map(|p| p.trim().parse()).collect();
            Self::explicit(values.map_err(|_| bad("bad list entry"))?)
        } else {
            Err(bad("expected geometric:... or list:..."))
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn last(&self) -> f64 {
        *self.values.last().unwrap()
    }
}

impl Default for HorizonSequence {
    fn default() -> Self {
        HorizonSequence::geometric(1.0, 2.0, 7).unwrap()
    }
}

/// `xi_n = b*` for every horizon.
pub fn constant_schedule(b_star: &State, n: usize) -> Vec<State> {
    vec![b_star.clone(); n]
}

/// `xi_n = b* + r0 * 2^{-n} * direction`.
pub fn perturbed_schedule(b_star: &State, direction: &State, r0: f64, n: usize) -> Vec<State> {
    (0..n)
        .map(|k| b_star + direction * (r0 * 0.5f64.powi(k as i32)))
        .collect()
}

// ---------------------------------------------------------------------------
// Candidates
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    BackwardShot(usize),
    AkFormula,
    JointLimit,
    User,
}

/// Multiplier pair `(lambda, psi(0))` for the adjoint relations.
#[derive(Debug, Clone)]
pub struct CostateCandidate {
    pub lambda: f64,
    pub psi0: Covector,
    pub provenance: Provenance,
    pub normalized: bool,
}

impl CostateCandidate {
    pub fn new(lambda: f64, psi0: Covector, provenance: Provenance) -> Result<Self, CoreError> {
        if lambda < 0.0 {
            return Err(CoreError::Invalid("lambda must be nonnegative".into()));
        }
        if lambda == 0.0 && psi0.norm() == 0.0 {
            return Err(CoreError::Invalid(
                "degenerate multiplier pair (0, 0)".into(),
            ));
        }
        Ok(CostateCandidate {
            lambda,
            psi0,
            provenance,
            normalized: false,
        })
    }

    /// Rescales so that `||psi0|| + lambda = 1`.
    pub fn normalize(&self) -> Self {
        let scale = self.psi0.norm() + self.lambda;
        CostateCandidate {
            lambda: self.lambda / scale,
            psi0: &self.psi0 / scale,
            provenance: self.provenance.clone(),
            normalized: true,
        }
    }

    pub fn normalization_defect(&self) -> f64 {
        (self.psi0.norm() + self.lambda - 1.0).abs()
    }
}

/// JSON-friendly mirror of a candidate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateSummary {
    pub lambda: f64,
    pub psi0: Vec<f64>,
    pub provenance: String,
    pub normalized: bool,
}

impl From<&CostateCandidate> for CandidateSummary {
    fn from(c: &CostateCandidate) -> Self {
        CandidateSummary {
            lambda: c.lambda,
            psi0: c.psi0.iter().copied().collect(),
            provenance: format!("{:?}", c.provenance),
            normalized: c.normalized,
        }
    }
}

// ---------------------------------------------------------------------------
// Backward shot
// ---------------------------------------------------------------------------

/// Result of a single finite-horizon shot with `psi(tau) = 0`.
#[derive(Debug)]
pub struct BackwardShot {
    pub candidate: CostateCandidate,
    pub path: CovectorPath,
    /// `||psi(tau)||` after re-integrating forward from the computed `psi(0)`.
    pub forward_residual: f64,
    /// True when `lambda = 0`, which forces `psi` identically zero.
    pub degenerate: bool,
}

/// Shoots the adjoint equation backwards from `psi(tau) = 0`.
///
/// The value `psi(0) = -lambda * I(xi; tau)` comes from the variation-of-
/// constants representation, then a forward re-integration quantifies the
/// discretization error.
pub fn backward_shot(
    problem: &ControlProblem,
    xi: &State,
    u_star: &ControlSignal,
    lambda: f64,
    tau: f64,
    settings: &IntegratorSettings,
) -> Result<BackwardShot, CoreError> {
    if lambda < 0.0 {
        return Err(CoreError::Invalid("lambda must be nonnegative".into()));
    }
    if tau <= 0.0 {
        return Err(CoreError::Invalid("tau must be positive".into()));
    }
    let sp = integrate_sensitivity(problem, xi, u_star, tau, settings)?;
    let psi0 = sp.final_i() * (-lambda);

    let traj = integrate_state(problem, xi, u_star, tau, settings)?;
    let zero = RowDVector::zeros(problem.state_dim);
    let path = integrate_adjoint(problem, &traj, u_star, lambda, tau, &zero, tau, settings)?;

    let forward = integrate_adjoint(problem, &traj, u_star, lambda, 0.0, &psi0, tau, settings)?;
    let forward_residual = forward.final_psi().norm();

    let degenerate = lambda == 0.0;
    let candidate = CostateCandidate {
        lambda,
        psi0,
        provenance: Provenance::BackwardShot(0),
        normalized: false,
    };
    Ok(BackwardShot {
        candidate,
        path,
        forward_residual,
        degenerate,
    })
}

// ---------------------------------------------------------------------------
// Horizon sweep and classification
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Classification {
    NormalFinite,
    AbnormalUnbounded,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub tau: f64,
    pub xi: Vec<f64>,
    pub i: Vec<f64>,
    pub norm_i: f64,
    /// `J(xi_n; tau_n) - J(b*; tau_n)`; should vanish along admissible schedules.
    pub j_gap: f64,
    /// `||I(xi_n;tau_n) - I(b*;tau_n)|| / ||I(b*;tau_n)||` (0 when `xi_n = b*`).
    pub remark_ratio: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LimitReport {
    pub classification: Classification,
    /// `I_*` for NormalFinite; unit direction of divergence for AbnormalUnbounded.
    pub limit_vector: Vec<f64>,
    pub table: Vec<SweepRow>,
    pub cauchy_residuals: Vec<f64>,
    /// Verdict after each prefix of the horizon sequence.
    pub history: Vec<Classification>,
    /// Set when the full sweep is inconclusive but an even/odd subsequence
    /// classifies cleanly.
    pub subsequence_hint: Option<String>,
    pub error_mark: Option<String>,
}

impl LimitReport {
    pub fn table_csv(&self) -> String {
        let mut out = String::from("tau,xi,i,norm_i,j_gap,remark_ratio\n");
        for row in &self.table {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                row.tau,
                join(&row.xi),
                join(&row.i),
                row.norm_i,
                row.j_gap,
                row.remark_ratio
            ));
        }
        out
    }

    pub fn limit_covector(&self) -> Covector {
        RowDVector::from_iterator(self.limit_vector.len(), self.limit_vector.iter().copied())
    }
}

fn join(v: &[f64]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

/// Threshold classification of a finite sequence of `I` values.
pub fn classify_values(values: &[Covector]) -> (Classification, Option<Covector>) {
    let n = values.len();
    if n < 3 {
        return (Classification::Inconclusive, None);
    }
    let last = &values[n - 1];
    let prev = &values[n - 2];
    if last.norm() >= DIVERGENCE_THRESHOLD && prev.norm() >= DIVERGENCE_THRESHOLD {
        let d_last = last / last.norm();
        let d_prev = prev / prev.norm();
        let d_prev2 = &values[n - 3] / values[n - 3].norm();
        if (&d_last - &d_prev).norm() <= eps_lim(1.0)
            && (&d_prev - &d_prev2).norm() <= eps_lim(1.0)
        {
            return (Classification::AbnormalUnbounded, Some(d_last));
        }
        return (Classification::Inconclusive, None);
    }
    let tol = eps_lim(last.norm());
    if last.norm() < DIVERGENCE_THRESHOLD
        && (last - prev).norm() <= tol
        && (prev - &values[n - 3]).norm() <= tol
    {
        return (Classification::NormalFinite, Some(last.clone()));
    }
    (Classification::Inconclusive, None)
}

/// Evaluates `I(xi_n; tau_n)` along the horizon sequence and classifies
/// the limit behaviour.
pub fn horizon_sweep(
    problem: &ControlProblem,
    b_star: &State,
    u_star: &ControlSignal,
    horizons: &HorizonSequence,
    xi_schedule: &[State],
    settings: &IntegratorSettings,
) -> Result<LimitReport, CoreError> {
    if horizons.len() < 4 {
        return Err(CoreError::Invalid(
            "horizon sweep needs at least 4 horizons".into(),
        ));
    }
    if xi_schedule.len() != horizons.len() {
        return Err(CoreError::DimensionMismatch(format!(
            "xi schedule has {} entries for {} horizons",
            xi_schedule.len(),
            horizons.len()
        )));
    }

    let mut table = Vec::new();
    let mut values: Vec<Covector> = Vec::new();
    let mut error_mark = None;

    for (tau, xi) in horizons.values.iter().zip(xi_schedule) {
        let sp = match integrate_sensitivity(problem, xi, u_star, *tau, settings) {
            Ok(sp) => sp,
            Err(e) => {
                error_mark = Some(format!("horizon {tau}: {e}"));
                break;
            }
        };
        let i = sp.final_i().clone();
        let j_xi = *sp.running_cost.last().unwrap();
        let (j_gap, remark_ratio) = if xi == b_star {
            (0.0, 0.0)
        } else {
            let base = integrate_sensitivity(problem, b_star, u_star, *tau, settings)?;
            let i_base = base.final_i();
            let ratio = if i_base.norm() > 0.0 {
                (&i - i_base).norm() / i_base.norm()
            } else {
                f64::INFINITY
            };
            (j_xi - base.running_cost.last().unwrap(), ratio)
        };
        table.push(SweepRow {
            tau: *tau,
            xi: xi.iter().copied().collect(),
            i: i.iter().copied().collect(),
            norm_i: i.norm(),
            j_gap,
            remark_ratio,
        });
        values.push(i);
    }

    let mut history = Vec::new();
    for k in 1..=values.len() {
        history.push(classify_values(&values[..k]).0);
    }
    let (classification, limit) = classify_values(&values);
    let cauchy_residuals = values
        .windows(2)
        .map(|w| (&w[1] - &w[0]).norm())
        .collect();

    let subsequence_hint = if classification == Classification::Inconclusive && values.len() >= 6 {
        let even: Vec<Covector> = values.iter().step_by(2).cloned().collect();
        let odd: Vec<Covector> = values.iter().skip(1).step_by(2).cloned().collect();
        match (classify_values(&even).0, classify_values(&odd).0) {
            (c, _) if c != Classification::Inconclusive => {
                Some(format!("even-index subsequence classifies as {c:?}"))
            }
            (_, c) if c != Classification::Inconclusive => {
                Some(format!("odd-index subsequence classifies as {c:?}"))
            }
            _ => None,
        }
    } else {
        None
    };

    Ok(LimitReport {
        classification,
        limit_vector: limit.map(|v| v.iter().copied().collect()).unwrap_or_default(),
        table,
        cauchy_residuals,
        history,
        subsequence_hint,
        error_mark,
    })
}

/// Candidate extracted from a sweep plus the boundary-membership verdict.
#[derive(Debug, Clone)]
pub struct ClassifiedCandidate {
    /// Normalized to `||psi0|| + lambda = 1`.
    pub candidate: CostateCandidate,
    pub raw_lambda: f64,
    pub raw_psi0: Covector,
    /// Whether `psi(0)` lies in `lambda * subdiff(l) + normal cone` at `b*`.
    pub transversality_ok: bool,
    pub transversality_distance: f64,
}

/// Turns a conclusive sweep report into a multiplier candidate and checks
/// the initial-point transversality inclusion.
pub fn classify_candidate(
    report: &LimitReport,
    l_subdiff_at_bstar: &[Covector],
    normal_cone: &NormalCone,
) -> Result<ClassifiedCandidate, CoreError> {
    let limit = report.limit_covector();
    let (raw_lambda, raw_psi0) = match report.classification {
        Classification::NormalFinite => (1.0, -&limit),
        Classification::AbnormalUnbounded => (0.0, -&limit),
        Classification::Inconclusive => {
            return Err(CoreError::Invalid(
                "cannot classify an inconclusive sweep".into(),
            ))
        }
    };

    let mut distance = f64::INFINITY;
    if l_subdiff_at_bstar.is_empty() {
        distance = normal_cone.distance(&raw_psi0);
    }
    for g in l_subdiff_at_bstar {
        let residual = &raw_psi0 - g * raw_lambda;
        distance = distance.min(normal_cone.distance(&residual));
    }
    let transversality_ok = distance <= eps_lim(raw_psi0.norm());

    let candidate = CostateCandidate::new(
        raw_lambda,
        raw_psi0.clone(),
        Provenance::BackwardShot(report.table.len()),
    )?
    .normalize();

    Ok(ClassifiedCandidate {
        candidate,
        raw_lambda,
        raw_psi0,
        transversality_ok,
        transversality_distance: distance,
    })
}

// ---------------------------------------------------------------------------
// Tail-integral co-state formulae
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct AkResult {
    pub psi: Covector,
    pub converged: bool,
    /// Partial tail integrals `I(b*;tau) - I(b*;T)` per tail horizon.
    pub partials: Vec<Covector>,
    pub residuals: Vec<f64>,
}

/// Evaluates the improper tail-integral co-state at time `T` along the
/// reference trajectory from `b*`, with a Cauchy convergence verdict over
/// the given tail horizons.
pub fn ak_costate(
    problem: &ControlProblem,
    b_star: &State,
    u_star: &ControlSignal,
    t_eval: f64,
    tail_horizons: &HorizonSequence,
    settings: &IntegratorSettings,
) -> Result<AkResult, CoreError> {
    if t_eval < 0.0 {
        return Err(CoreError::Invalid("evaluation time must be >= 0".into()));
    }
    let taus: Vec<f64> = tail_horizons
        .values
        .iter()
        .copied()
        .filter(|t| *t > t_eval)
        .collect();
    if taus.len() < 3 {
        return Err(CoreError::Invalid(
            "need at least 3 tail horizons beyond the evaluation time".into(),
        ));
    }
    let horizon = *taus.last().unwrap();
    let sp = integrate_sensitivity(problem, b_star, u_star, horizon, settings)?;
    let i_at_t = sp.i_at(t_eval);
    let a_inv_t = sp.a_inv_at(t_eval);

    let partials: Vec<Covector> = taus.iter().map(|tau| sp.i_at(*tau) - &i_at_t).collect();
    let residuals: Vec<f64> = partials
        .windows(2)
        .map(|w| (&w[1] - &w[0]).norm())
        .collect();
    let n = partials.len();
    let tol = eps_lim(partials[n - 1].norm());
    let converged = residuals[n - 2] <= tol && residuals[n - 3] <= tol;

    let psi = -(&partials[n - 1]) * &a_inv_t;
    Ok(AkResult {
        psi,
        converged,
        partials,
        residuals,
    })
}

/// Co-state at `T` propagated from `psi(0) = -I_*` with `lambda = 1`:
/// `(-I_* + I(b*;T)) * A^{-1}(b*;T)`.
pub fn eval_1ss(
    problem: &ControlProblem,
    b_star: &State,
    u_star: &ControlSignal,
    i_star: &Covector,
    t_eval: f64,
    settings: &IntegratorSettings,
) -> Result<Covector, CoreError> {
    if t_eval == 0.0 {
        return Ok(-i_star);
    }
    let sp = integrate_sensitivity(problem, b_star, u_star, t_eval, settings)?;
    Ok((-i_star + sp.final_i()) * sp.final_a_inv())
}

// ---------------------------------------------------------------------------
// Joint-limit probe and subdifferential sampling
// ---------------------------------------------------------------------------

fn sample_ball(rng: &mut ChaCha8Rng, center: &State, radius: f64, count: usize) -> Vec<State> {
    let m = center.len();
    let mut out = vec![center.clone()];
    // Deterministic axis probes first, then random directions.
    for i in 0..m {
        for sign in [1.0, -1.0] {
            if out.len() > count {
                break;
            }
            let mut p = center.clone();
            p[i] += sign * radius;
            out.push(p);
        }
    }
    while out.len() <= count {
        let mut d = DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
        let n = d.norm();
        if n < 1e-9 {
            continue;
        }
        d /= n;
        let scale = radius * rng.gen_range(0.0f64..1.0).powf(1.0 / m as f64);
        out.push(center + d * scale);
    }
    out.truncate(count + 1);
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageSummary {
    pub tau: f64,
    pub radius: f64,
    pub centroid: Vec<f64>,
    pub diameter: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JointLimitVerdict {
    pub holds: bool,
    /// Present when the joint limit exists at this budget.
    pub i_star: Option<Vec<f64>>,
    /// Diameter of the sampled cloud at the final stage.
    pub witness_spread: f64,
    pub stages: Vec<StageSummary>,
    pub errors: Vec<String>,
}

/// Empirically tests whether `I(xi; tau_n)` has a joint limit as
/// `xi -> b*` and `tau_n -> infinity`, by sampling shrinking balls.
pub fn joint_limit_probe(
    problem: &ControlProblem,
    b_star: &State,
    u_star: &ControlSignal,
    horizons: &HorizonSequence,
    radii: &[f64],
    samples_per_radius: usize,
    seed: u64,
    settings: &IntegratorSettings,
) -> Result<JointLimitVerdict, CoreError> {
    if radii.is_empty() || radii.windows(2).any(|w| w[1] >= w[0]) {
        return Err(CoreError::Invalid(
            "radii must be a decreasing positive sequence".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stages = Vec::new();
    let mut errors = Vec::new();
    let mut clouds: Vec<Vec<Covector>> = Vec::new();

    for (n, tau) in horizons.values.iter().enumerate() {
        let radius = radii[n.min(radii.len() - 1)];
        let points = sample_ball(&mut rng, b_star, radius, samples_per_radius);
        let mut cloud = Vec::new();
        for p in &points {
            match integrate_sensitivity(problem, p, u_star, *tau, settings) {
                Ok(sp) => cloud.push(sp.final_i().clone()),
                Err(e) => errors.push(format!("tau={tau} xi={p:?}: {e}")),
            }
        }
        if cloud.is_empty() {
            errors.push(format!("tau={tau}: every sample failed"));
            continue;
        }
        let centroid = cloud.iter().fold(RowDVector::zeros(cloud[0].len()), |a, b| a + b)
            / cloud.len() as f64;
        let diameter = cloud
            .iter()
            .flat_map(|a| cloud.iter().map(move |b| (a - b).norm()))
            .fold(0.0, f64::max);
        stages.push(StageSummary {
            tau: *tau,
            radius,
            centroid: centroid.iter().copied().collect(),
            diameter,
            samples: cloud.len(),
        });
        clouds.push(cloud);
    }

    if stages.len() < 2 {
        return Ok(JointLimitVerdict {
            holds: false,
            i_star: None,
            witness_spread: f64::INFINITY,
            stages,
            errors,
        });
    }

    let last = stages.last().unwrap();
    let prev = &stages[stages.len() - 2];
    let c_last = RowDVector::from_iterator(last.centroid.len(), last.centroid.iter().copied());
    let c_prev = RowDVector::from_iterator(prev.centroid.len(), prev.centroid.iter().copied());
    let tol = eps_lim(c_last.norm());
    let holds = last.diameter <= tol && (&c_last - &c_prev).norm() <= tol;

    Ok(JointLimitVerdict {
        holds,
        i_star: if holds { Some(last.centroid.clone()) } else { None },
        witness_spread: last.diameter,
        stages,
        errors,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Cluster {
    pub centroid: Vec<f64>,
    pub count: usize,
    pub spread: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradientClouds {
    /// Accumulation points of `-I` with bounded norms (finite-gradient cloud).
    pub finite_clusters: Vec<Cluster>,
    /// True when no bounded sample was seen at this budget (NOT a proof of
    /// mathematical emptiness).
    pub finite_empty_at_budget: bool,
    /// Accumulation directions of diverging `-I` samples, plus the origin.
    pub direction_clusters: Vec<Cluster>,
    pub bounded_samples: usize,
    pub diverging_samples: usize,
    pub errors: Vec<String>,
}

fn single_linkage(points: &[Covector], radius: f64) -> Vec<Cluster> {
    let n = points.len();
    let mut assigned = vec![usize::MAX; n];
    let mut next = 0usize;
    for i in 0..n {
        if assigned[i] != usize::MAX {
            continue;
        }
        // Grow a cluster from point i.
        assigned[i] = next;
        let mut frontier = vec![i];
        while let Some(j) = frontier.pop() {
            for k in 0..n {
                if assigned[k] == usize::MAX && (&points[j] - &points[k]).norm() <= radius {
                    assigned[k] = next;
                    frontier.push(k);
                }
            }
        }
        next += 1;
    }
    (0..next)
        .map(|c| {
            let members: Vec<&Covector> = points
                .iter()
                .zip(&assigned)
                .filter(|(_, a)| **a == c)
                .map(|(p, _)| p)
                .collect();
            let centroid = members
                .iter()
                .fold(RowDVector::zeros(members[0].len()), |acc, p| acc + *p)
                / members.len() as f64;
            let spread = members
                .iter()
                .map(|p| (*p - &centroid).norm())
                .fold(0.0, f64::max);
            Cluster {
                centroid: centroid.iter().copied().collect(),
                count: members.len(),
                spread,
            }
        })
        .collect()
}

/// Samples `-I(b_n; t_n)` over shrinking balls and growing horizons and
/// clusters the outcomes into a finite-point cloud and a direction cloud.
///
/// Optionally cross-checks a candidate: normal candidates should match a
/// finite cluster scaled by `lambda`; abnormal ones a nonzero direction.
pub fn gradients_at_infinity(
    problem: &ControlProblem,
    b_star: &State,
    u_star: &ControlSignal,
    horizons: &HorizonSequence,
    radii: &[f64],
    samples_per_radius: usize,
    seed: u64,
    settings: &IntegratorSettings,
) -> Result<GradientClouds, CoreError> {
    if radii.is_empty() {
        return Err(CoreError::Invalid("need at least one radius".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bounded = Vec::new();
    let mut directions = Vec::new();
    let mut errors = Vec::new();

    // Accumulation behaviour is approximated by keeping only the later
    // half of the horizon sequence.
    let start = horizons.len() / 2;
    for (n, tau) in horizons.values.iter().enumerate() {
        let radius = radii[n.min(radii.len() - 1)];
        let points = sample_ball(&mut rng, b_star, radius, samples_per_radius);
        if n < start {
            continue;
        }
        for p in &points {
            match integrate_sensitivity(problem, p, u_star, *tau, settings) {
                Ok(sp) => {
                    let minus_i = -sp.final_i();
                    if minus_i.norm() < DIVERGENCE_THRESHOLD {
                        bounded.push(minus_i);
                    } else {
                        directions.push(&minus_i / minus_i.norm());
                    }
                }
                Err(e) => errors.push(format!("tau={tau} xi={p:?}: {e}")),
            }
        }
    }

    let bounded_samples = bounded.len();
    let diverging_samples = directions.len();
    // The direction cloud always contains the origin (zero scalings are
    // admissible).
    directions.push(RowDVector::zeros(problem.state_dim));

    let cluster_tol = |pts: &[Covector]| {
        let max_norm = pts.iter().map(|p| p.norm()).fold(0.0, f64::max);
        eps_lim(max_norm)
    };
    let finite_clusters = if bounded.is_empty() {
        Vec::new()
    } else {
        single_linkage(&bounded, cluster_tol(&bounded))
    };
    let direction_clusters = single_linkage(&directions, eps_lim(1.0));

    Ok(GradientClouds {
        finite_empty_at_budget: bounded.is_empty(),
        finite_clusters,
        direction_clusters,
        bounded_samples,
        diverging_samples,
        errors,
    })
}

/// Checks a candidate against the sampled clouds: normal candidates must
/// match `lambda` times a finite cluster; abnormal ones a nonzero
/// direction cluster.
pub fn cross_check_candidate(clouds: &GradientClouds, candidate: &CostateCandidate) -> bool {
    let psi = &candidate.psi0;
    if candidate.lambda > 0.0 {
        clouds.finite_clusters.iter().any(|c| {
            let centroid =
                RowDVector::from_iterator(c.centroid.len(), c.centroid.iter().copied());
            (psi - centroid * candidate.lambda).norm() <= eps_lim(psi.norm()) + c.spread
        })
    } else {
        clouds.direction_clusters.iter().any(|c| {
            let centroid =
                RowDVector::from_iterator(c.centroid.len(), c.centroid.iter().copied());
            centroid.norm() > 0.5
                && (psi / psi.norm() - centroid).norm() <= eps_lim(1.0) + c.spread
        })
    }
}
