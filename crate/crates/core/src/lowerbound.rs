//! Adversaries that force exponential state growth on any controller.
//!
//! The randomized harness draws a Gaussian `A` and watches the component of
//! each new state outside everything the controller has queried so far. The
//! deterministic harness builds `x_{t+1} = Q^T V x_t + u_t` row by row against
//! the controller's own moves so that one coordinate at least doubles per step.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{orthogonal_residual, spectral_norm};

/// Residuals below this (relative to the input norm) count as inside the span.
const SPAN_TOL: f64 = 1e-10;

/// Entries i.i.d. `N(0, gamma / d)` from a seeded generator.
pub fn sample_gaussian_system(d: usize, gamma: f64, seed: u64) -> Result<DMatrix<f64>> {
    if d == 0 || !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Precondition(format!("need d >= 1 and gamma > 0 (got d={d}, gamma={gamma})")));
    }
    let normal = Normal::new(0.0, (gamma / d as f64).sqrt()).expect("positive finite variance");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(DMatrix::from_fn(d, d, |_, _| normal.sample(&mut rng)))
}

/// Orthonormal basis of everything queried so far.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SubspaceTracker {
    basis: Vec<DVector<f64>>,
}

impl SubspaceTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rank(&self) -> usize {
        self.basis.len()
    }

    pub fn basis(&self) -> &[DVector<f64>] {
        &self.basis
    }

    /// Component of `x` orthogonal to the tracked span.
    pub fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        orthogonal_residual(&self.basis, x)
    }

    /// Adds `x` to the span; returns whether the rank grew.
    pub fn extend(&mut self, x: &DVector<f64>) -> bool {
        let r = self.residual(x);
        let n = r.norm();
        if n > SPAN_TOL * x.norm().max(1.0) && self.basis.len() < x.len() {
            self.basis.push(r / n);
            true
        } else {
            false
        }
    }
}

/// Component of `x` outside the tracker's span.
pub fn orthogonal_residual_of(tracker: &SubspaceTracker, x: &DVector<f64>) -> DVector<f64> {
    tracker.residual(x)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackStep {
    pub t: usize,
    pub state_norm: f64,
    pub control_norm: f64,
    /// `||h_t||^2`, the squared residual of `x_t` against earlier queries.
    pub residual_sq: f64,
    /// `||h_{t+1}||^2 >= 2 ||h_t||^2`; `None` on the last step.
    pub doubled: Option<bool>,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomizedTranscript {
    pub seed: u64,
    pub dim: usize,
    pub gamma: f64,
    pub horizon: usize,
    pub a_norm: f64,
    pub steps: Vec<AttackStep>,
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
}

impl RandomizedTranscript {
    pub fn all_doubled(&self) -> bool {
        self.steps.iter().all(|s| s.doubled != Some(false))
    }

    pub fn final_state_norm_sq(&self) -> f64 {
        self.states.last().map_or(0.0, |x| x.norm_squared())
    }

    pub fn total_cost(&self) -> f64 {
        self.steps.iter().map(|s| s.cost).sum()
    }
}

/// `floor(d / 8)`, the horizon the doubling argument covers.
pub fn randomized_horizon(d: usize) -> usize {
    d / 8
}

/// One trial against `x_{t+1} = A x_t + u_t`, `A` Gaussian, from `x_1 = e_1`.
///
/// The controller sees `(t, x_t)`. The horizon defaults to `floor(d/8)`.
pub fn randomized_lb_trial<F>(mut controller: F, d: usize, gamma: f64, seed: u64, horizon: Option<usize>) -> Result<RandomizedTranscript>
where
    F: FnMut(usize, &DVector<f64>) -> DVector<f64>,
{
    let horizon = horizon.unwrap_or_else(|| randomized_horizon(d));
    if horizon == 0 || horizon > d {
        return Err(Error::Precondition(format!("randomized horizon must lie in [1, d]; got T = {horizon} for d = {d}")));
    }
    let a = sample_gaussian_system(d, gamma, seed)?;
    let mut tracker = SubspaceTracker::new();
    let mut x = DVector::zeros(d);
    x[0] = 1.0;
    let mut states = vec![x.clone()];
    let mut controls = Vec::with_capacity(horizon);
    let mut steps: Vec<AttackStep> = Vec::with_capacity(horizon);
    for t in 1..=horizon {
        let h_sq = tracker.residual(&x).norm_squared();
        if let Some(prev) = steps.last_mut() {
            prev.doubled = Some(h_sq >= 2.0 * prev.residual_sq);
        }
        let u = controller(t, &x);
        if u.len() != d {
            return Err(Error::dims("u", d, u.len()));
        }
        if !u.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteControl { step: t });
        }
        steps.push(AttackStep {
            t,
            state_norm: x.norm(),
            control_norm: u.norm(),
            residual_sq: h_sq,
            doubled: None,
            cost: x.norm_squared() + u.norm_squared(),
        });
        if t == horizon {
            controls.push(u);
            break;
        }
        tracker.extend(&x);
        tracker.extend(&u);
        x = &a * &x + &u;
        states.push(x.clone());
        controls.push(u);
    }
    Ok(RandomizedTranscript {
        seed,
        dim: d,
        gamma,
        horizon,
        a_norm: spectral_norm(&a),
        steps,
        states,
        controls,
    })
}

/// Per-step record of the deterministic construction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstructionStep {
    pub t: usize,
    /// Coefficient of `x_t` on the newest row `V_t`.
    pub c: f64,
    /// Coefficient of `u_t` on the fresh direction `y_t`.
    pub a_next: f64,
    pub d: f64,
    /// Whether `u_t` already lay in the span and the fallback direction was used.
    pub fallback: bool,
    pub state_norm: f64,
    pub control_norm: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdversaryTranscript {
    pub dim: usize,
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    pub steps: Vec<ConstructionStep>,
    /// Coefficient of the final state on the last row.
    pub final_c: f64,
    /// Rows `V_1 .. V_d`.
    pub v: DMatrix<f64>,
    /// Rows `Q_1 .. Q_d`.
    pub q: DMatrix<f64>,
    pub d_diag: DVector<f64>,
}

impl AdversaryTranscript {
    pub fn final_state_norm(&self) -> f64 {
        self.states.last().map_or(0.0, |x| x.norm())
    }

    /// The system matrix `Q^T V`.
    pub fn system(&self) -> DMatrix<f64> {
        self.q.transpose() * &self.v
    }

    /// `D P V` with `(P V)_i = V_{i+1 mod d}`.
    pub fn factored_q(&self) -> DMatrix<f64> {
        let n = self.dim;
        let pv = DMatrix::from_fn(n, n, |i, j| self.v[((i + 1) % n, j)]);
        DMatrix::from_diagonal(&self.d_diag) * pv
    }

    pub fn orthogonality_error(&self) -> f64 {
        (&self.v * self.v.transpose() - DMatrix::identity(self.dim, self.dim)).amax()
    }

    /// `|c_{t+1}| - (2 |c_t| + |a_{t+1}|)` over the run.
    pub fn recursion_residuals(&self) -> Vec<f64> {
        let mut cs: Vec<f64> = self.steps.iter().map(|s| s.c).collect();
        cs.push(self.final_c);
        self.steps
            .iter()
            .enumerate()
            .map(|(i, s)| cs[i + 1].abs() - (2.0 * cs[i].abs() + s.a_next.abs()))
            .collect()
    }

    pub fn total_cost(&self) -> f64 {
        self.steps.iter().map(|s| s.cost).sum()
    }
}

fn sign(v: f64) -> f64 {
    if v < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Unit vector orthogonal to `basis`: the standard basis vector with the
/// largest residual, normalized.
fn fallback_direction(basis: &[DVector<f64>], d: usize) -> DVector<f64> {
    let mut best: Option<(f64, DVector<f64>)> = None;
    for i in 0..d {
        let r = orthogonal_residual(basis, &DVector::from_fn(d, |j, _| if i == j { 1.0 } else { 0.0 }));
        let n = r.norm();
        if best.as_ref().is_none_or(|(bn, _)| n > *bn) {
            best = Some((n, r));
        }
    }
    let (n, r) = best.expect("d >= 1");
    r / n
}

/// Builds `(Q, V)` online against a deterministic controller.
///
/// The controller is called as `controller(states, controls)` with
/// `x_1 .. x_t` and `u_1 .. u_{t-1}`, and is invoked twice per step to
/// confirm it is deterministic.
pub fn deterministic_adversary<F>(mut controller: F, d: usize) -> Result<AdversaryTranscript>
where
    F: FnMut(&[DVector<f64>], &[DVector<f64>]) -> DVector<f64>,
{
    if d < 2 {
        return Err(Error::Precondition(format!("the construction needs d >= 2, got {d}")));
    }
    let mut x = DVector::zeros(d);
    x[0] = 1.0;
    let mut v_rows: Vec<DVector<f64>> = vec![x.clone()];
    let mut q_rows: Vec<DVector<f64>> = Vec::with_capacity(d);
    let mut d_diag = Vec::with_capacity(d);
    let mut states = vec![x];
    let mut controls: Vec<DVector<f64>> = Vec::with_capacity(d - 1);
    let mut steps = Vec::with_capacity(d - 1);
    for t in 1..d {
        let u = controller(&states, &controls);
        let again = controller(&states, &controls);
        if u != again {
            return Err(Error::NonDeterministicController { step: t });
        }
        if u.len() != d {
            return Err(Error::dims("u", d, u.len()));
        }
        if !u.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteControl { step: t });
        }
        let xt = &states[t - 1];
        let c = v_rows[t - 1].dot(xt);
        let res = orthogonal_residual(&v_rows, &u);
        let fallback = res.norm() <= SPAN_TOL * u.norm().max(1.0);
        let y = if fallback { fallback_direction(&v_rows, d) } else { &res / res.norm() };
        let a_next = y.dot(&u);
        let dt = 2.0 * sign(c) * sign(a_next);
        q_rows.push(&y * dt);
        d_diag.push(dt);
        v_rows.push(y);
        // x_t lies in span(V_1 .. V_t), so only fixed rows act on it
        let mut next = u.clone();
        for (qi, vi) in q_rows.iter().zip(&v_rows[..t]) {
            next.axpy(vi.dot(xt), qi, 1.0);
        }
        steps.push(ConstructionStep {
            t,
            c,
            a_next,
            d: dt,
            fallback,
            state_norm: xt.norm(),
            control_norm: u.norm(),
            cost: xt.norm_squared() + u.norm_squared(),
        });
        controls.push(u);
        states.push(next);
    }
    q_rows.push(&v_rows[0] * 2.0);
    d_diag.push(2.0);
    let final_c = v_rows[d - 1].dot(&states[d - 1]);
    let stack = |rows: &[DVector<f64>]| DMatrix::from_fn(d, d, |i, j| rows[i][j]);
    Ok(AdversaryTranscript {
        dim: d,
        v: stack(&v_rows),
        q: stack(&q_rows),
        d_diag: DVector::from_vec(d_diag),
        final_c,
        states,
        controls,
        steps,
    })
}

/// Deterministic controllers the harnesses are exercised against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BuiltinController {
    Zero,
    NegativeIdentity,
    /// Fits the minimum-norm `A` to the history and plays `-A x`.
    CertaintyEquivalent,
    /// A fixed gain with `N(0, 1/d)` entries drawn once from `seed`.
    RandomFrozen { seed: u64 },
}

impl BuiltinController {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Zero => "zero",
            Self::NegativeIdentity => "negative-identity",
            Self::CertaintyEquivalent => "certainty-equivalent",
            Self::RandomFrozen { .. } => "random-frozen",
        }
    }

    /// History-based form: `(x_1 .. x_t, u_1 .. u_{t-1}) -> u_t` for `x_{t+1} = A x_t + u_t`.
    pub fn policy(&self, d: usize) -> Box<dyn FnMut(&[DVector<f64>], &[DVector<f64>]) -> DVector<f64>> {
        match *self {
            Self::Zero => Box::new(move |_, _| DVector::zeros(d)),
            Self::NegativeIdentity => Box::new(|xs, _| -xs.last().expect("history starts at x_1")),
            Self::CertaintyEquivalent => Box::new(move |xs, us| {
                let t = xs.len();
                let x = xs.last().expect("history starts at x_1");
                if t < 2 {
                    return DVector::zeros(d);
                }
                let inputs = DMatrix::from_fn(d, t - 1, |i, j| xs[j][i]);
                let outputs = DMatrix::from_fn(d, t - 1, |i, j| xs[j + 1][i] - us[j][i]);
                let pinv = inputs.pseudo_inverse(1e-12).expect("non-negative tolerance");
                -(outputs * pinv * x)
            }),
            Self::RandomFrozen { seed } => {
                let k = sample_gaussian_system(d, 1.0, seed).expect("d >= 1");
                Box::new(move |xs, _| &k * xs.last().expect("history starts at x_1"))
            }
        }
    }

    /// Memoryless form `(t, x_t) -> u_t`; the least-squares fit keeps its own history.
    pub fn feedback(&self, d: usize) -> Box<dyn FnMut(usize, &DVector<f64>) -> DVector<f64>> {
        let mut policy = self.policy(d);
        let mut xs: Vec<DVector<f64>> = Vec::new();
        let mut us: Vec<DVector<f64>> = Vec::new();
        Box::new(move |_, x| {
            xs.push(x.clone());
            let u = policy(&xs, &us);
            us.push(u.clone());
            u
        })
    }
}

pub const BUILTIN_CONTROLLERS: [BuiltinController; 4] = [
    BuiltinController::Zero,
    BuiltinController::NegativeIdentity,
    BuiltinController::CertaintyEquivalent,
    BuiltinController::RandomFrozen { seed: 17 },
];
