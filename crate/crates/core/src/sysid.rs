//! Phase 1: identify `(A, B)` from one trajectory with exponentially scaled probes.
//!
//! Input coordinate `i` is kicked once, at `t = (i-1)(k+1) + 1`, with a
//! magnitude `xi_i` that dwarfs everything accumulated before it. The `k+1`
//! states that follow are then `xi_i` times the `i`-th columns of
//! `B, AB, ..., A^k B`, up to an `O(eps0)` relative error that no bounded
//! disturbance can hide.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Phase, Result};
use crate::lds::{LinearSystem, Plant};
use crate::linalg::{has_full_row_rank, hstack, vec_finite};

/// Probe scale `eps / (100 d_u^2 k^2 lambda^{3k} d_x sqrt(kappa))`.
pub fn epsilon_zero(eps: f64, d_u: usize, k: usize, lambda: f64, d_x: usize, kappa: f64) -> Result<f64> {
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::Precondition(format!("identification accuracy must lie in (0, 1/2), got {eps}")));
    }
    if d_u == 0 || k == 0 || d_x == 0 || !(lambda >= 1.0) || !(kappa > 0.0) {
        return Err(Error::Precondition(format!(
            "epsilon_zero needs positive dimensions, lambda >= 1 and kappa > 0 (got d_u={d_u}, k={k}, d_x={d_x}, lambda={lambda}, kappa={kappa})"
        )));
    }
    let (du, kk) = (d_u as f64, k as f64);
    let denom = 1e2 * du * du * kk * kk * lambda.powi(3 * k as i32) * d_x as f64 * kappa.sqrt();
    let eps0 = eps / denom;
    if !eps0.is_normal() {
        return Err(Error::ProbeScalingNotRepresentable { value: eps0 });
    }
    Ok(eps0)
}

/// The open-loop probe schedule for `t = 1 ..= (k+1) d_u`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbePlan {
    pub k: usize,
    pub d_u: usize,
    pub lambda: f64,
    pub eps0: f64,
    /// `xi[i-1] = lambda^{(i-1)(k+1)} eps0^{-i}`.
    pub xi: Vec<f64>,
}

impl ProbePlan {
    pub fn new(k: usize, d_u: usize, lambda: f64, eps0: f64) -> Result<Self> {
        if k == 0 || d_u == 0 {
            return Err(Error::Precondition(format!("probe plan needs k, d_u >= 1 (got {k}, {d_u})")));
        }
        if !(lambda >= 1.0) || !lambda.is_finite() {
            return Err(Error::Precondition(format!("probe growth lambda must be finite and >= 1, got {lambda}")));
        }
        if !(eps0 > 0.0 && eps0 < 1.0) {
            return Err(Error::Precondition(format!("probe scale eps0 must lie in (0, 1), got {eps0}")));
        }
        let mut xi = Vec::with_capacity(d_u);
        for i in 1..=d_u {
            // dividing last keeps eps0^i from underflowing on its own
            let mut v = lambda.powi(((i - 1) * (k + 1)) as i32);
            for _ in 0..i {
                v /= eps0;
            }
            if !v.is_finite() {
                return Err(Error::ProbeScalingOverflow { index: i });
            }
            xi.push(v);
        }
        Ok(Self { k, d_u, lambda, eps0, xi })
    }

    /// Number of executed steps, `(k+1) d_u`.
    pub fn len(&self) -> usize {
        (self.k + 1) * self.d_u
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// 1-based index of the state left after the last probe step.
    pub fn terminal_index(&self) -> usize {
        self.len() + 1
    }

    /// Input coordinate kicked at step `t`, if any.
    pub fn probe_at(&self, t: usize) -> Option<usize> {
        (t >= 1 && t <= self.len() && (t - 1) % (self.k + 1) == 0).then(|| (t - 1) / (self.k + 1) + 1)
    }

    /// Control `u_t`.
    pub fn control(&self, t: usize) -> DVector<f64> {
        let mut u = DVector::zeros(self.d_u);
        if let Some(i) = self.probe_at(t) {
            u[i - 1] = self.xi[i - 1];
        }
        u
    }

    /// Index of the state carrying column `i` of `A^j B`: `(i-1)(k+1) + j + 2`.
    pub fn state_index(&self, i: usize, j: usize) -> usize {
        (i - 1) * (self.k + 1) + j + 2
    }

    /// Worst-case norm of `x_t` along a probe run (`t >= 2`), `lambda^{t-1} eps0^{-i}`.
    pub fn state_bound(&self, t: usize) -> f64 {
        assert!(t >= 2, "state bound starts at t = 2");
        let j = (t - 2) % (self.k + 1);
        let i = (t - 2 - j) / (self.k + 1) + 1;
        let mut v = self.lambda.powi(t as i32 - 1);
        for _ in 0..i {
            v /= self.eps0;
        }
        v
    }

    /// Steps `t in 2 ..= terminal_index` whose recorded state exceeds [`Self::state_bound`].
    pub fn state_bound_violations(&self, states: &[DVector<f64>]) -> Vec<usize> {
        (2..=self.terminal_index().min(states.len()))
            .filter(|&t| !(states[t - 1].norm() <= self.state_bound(t)))
            .collect()
    }

    /// Frobenius error allowed on each block estimate, `3 d_u^2 k lambda^{2k} eps0`.
    pub fn block_error_bound(&self) -> f64 {
        let du = self.d_u as f64;
        3.0 * du * du * self.k as f64 * self.lambda.powi(2 * self.k as i32) * self.eps0
    }
}

pub fn probe_plan(k: usize, d_u: usize, lambda: f64, eps0: f64) -> Result<ProbePlan> {
    ProbePlan::new(k, d_u, lambda, eps0)
}

/// Block estimates `M_0 .. M_k` of `B, AB, ..., A^k B` and their concatenations.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockEstimates {
    pub m_hat: Vec<DMatrix<f64>>,
    /// `[M_0 .. M_{k-1}]`.
    pub c0: DMatrix<f64>,
    /// `[M_1 .. M_k]`.
    pub c1: DMatrix<f64>,
    pub terminal_state: DVector<f64>,
}

/// Phase-1 output.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateBundle {
    pub blocks: BlockEstimates,
    pub a_hat: DMatrix<f64>,
    pub b_hat: DMatrix<f64>,
    pub plan: ProbePlan,
    /// `x_1 ..= x_{T1}` as observed.
    pub states: Vec<DVector<f64>>,
}

impl EstimateBundle {
    pub fn terminal_state(&self) -> &DVector<f64> {
        &self.blocks.terminal_state
    }
}

/// Builds the block estimates from recorded states `x_1, x_2, ...` (index 0 holds `x_1`).
pub fn assemble_estimates(states: &[DVector<f64>], plan: &ProbePlan) -> Result<BlockEstimates> {
    let need = plan.terminal_index();
    if states.len() < need {
        return Err(Error::MissingState {
            index: need,
            available: states.len(),
        });
    }
    let d_x = states[0].len();
    if let Some(bad) = states.iter().find(|x| x.len() != d_x) {
        return Err(Error::dims("states", d_x, bad.len()));
    }
    let m_hat: Vec<DMatrix<f64>> = (0..=plan.k)
        .map(|j| {
            DMatrix::from_fn(d_x, plan.d_u, |r, c| {
                let i = c + 1;
                states[plan.state_index(i, j) - 1][r] / plan.xi[c]
            })
        })
        .collect();
    let c0 = hstack(&m_hat[..plan.k]);
    let c1 = hstack(&m_hat[1..]);
    Ok(BlockEstimates {
        m_hat,
        c0,
        c1,
        terminal_state: states[need - 1].clone(),
    })
}

/// Row-wise least squares `X C0 = C1`, i.e. `C1 C0^T (C0 C0^T)^{-1}`.
pub fn solve_a(c0: &DMatrix<f64>, c1: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if c0.shape() != c1.shape() {
        return Err(Error::dims("C1", format!("{:?}", c0.shape()), format!("{:?}", c1.shape())));
    }
    if !has_full_row_rank(c0) {
        return Err(Error::EstimatesNotControllable);
    }
    let gram = c0 * c0.transpose();
    let chol = gram.cholesky().ok_or(Error::EstimatesNotControllable)?;
    // gram is symmetric, so A^T = gram^{-1} C0 C1^T
    Ok(chol.solve(&(c0 * c1.transpose())).transpose())
}

/// Settings for one identification run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SysIdConfig {
    pub eps: f64,
    pub lambda: f64,
    pub k: usize,
    pub kappa: f64,
    /// Replaces the derived probe scale.
    pub eps0_override: Option<f64>,
}

impl SysIdConfig {
    pub fn eps0(&self, d_u: usize, d_x: usize) -> Result<f64> {
        match self.eps0_override {
            Some(v) => Ok(v),
            None => epsilon_zero(self.eps, d_u, self.k, self.lambda, d_x, self.kappa),
        }
    }
}

/// Runs the probe schedule on the live plant and estimates `(A, B)`.
///
/// The plant is driven from whatever state it is in; a start outside the unit
/// ball only loosens the state bound, so it is logged and tolerated.
pub fn adv_sys_id<P: Plant + ?Sized>(plant: &mut P, cfg: &SysIdConfig) -> Result<EstimateBundle> {
    let (d_x, d_u) = (plant.state_dim(), plant.input_dim());
    if !(cfg.eps > 0.0 && cfg.eps < 0.5) {
        return Err(Error::Precondition(format!("identification accuracy must lie in (0, 1/2), got {}", cfg.eps)));
    }
    let plan = ProbePlan::new(cfg.k, d_u, cfg.lambda, cfg.eps0(d_u, d_x)?)?;
    let x1 = plant.state().clone();
    if x1.norm() > 1.0 {
        log::warn!("identification starts at ||x1|| = {:e} > 1; the state-magnitude bound is loosened", x1.norm());
    }
    let mut states = Vec::with_capacity(plan.terminal_index());
    states.push(x1);
    for t in 1..=plan.len() {
        let obs = plant.apply(&plan.control(t), Phase::Phase1)?;
        if !vec_finite(&obs.next_state) {
            return Err(Error::NonFiniteState {
                step: t + 1,
                last_norm: states[t - 1].norm(),
            });
        }
        states.push(obs.next_state);
    }
    let blocks = assemble_estimates(&states, &plan)?;
    let a_hat = solve_a(&blocks.c0, &blocks.c1)?;
    let b_hat = blocks.m_hat[0].clone();
    Ok(EstimateBundle {
        blocks,
        a_hat,
        b_hat,
        plan,
        states,
    })
}

/// Ground-truth counterparts `B, AB, ..., A^k B` of the block estimates.
pub fn markov_blocks(sys: &LinearSystem, k: usize) -> Vec<DMatrix<f64>> {
    let mut out = Vec::with_capacity(k + 1);
    let mut cur = sys.b().clone();
    for _ in 0..=k {
        let next = sys.a() * &cur;
        out.push(cur);
        cur = next;
    }
    out
}

/// Upper bound on the quadratic-scale cost of a probe run:
/// `8 G k d_u (1e4 eps^-2 d_u^4 k^4 lambda^{10k} d_x^2 kappa)^{d_u}`.
pub fn phase_one_cost_bound(g: f64, eps: f64, d_u: usize, k: usize, lambda: f64, d_x: usize, kappa: f64) -> f64 {
    let (du, kk, dx) = (d_u as f64, k as f64, d_x as f64);
    let base = 1e4 / (eps * eps) * du.powi(4) * kk.powi(4) * lambda.powi(10 * k as i32) * dx * dx * kappa;
    8.0 * g * kk * du * base.powi(d_u as i32)
}
