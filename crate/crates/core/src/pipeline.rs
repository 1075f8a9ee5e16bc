//! End-to-end run: identify, recover a stabilizing gain, decay, then learn a DAC.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Phase, Result};
use crate::lds::{CostSequence, LinearSystem, Plant, PriorBounds, RunLog, SimulatedPlant};
use crate::nsc::{
    best_dac_in_hindsight, default_history, default_learning_rate, default_reid_budget, gpc_run, Comparator, ComparatorOptions,
    GpcConfig, GpcOutcome, ReidConfig,
};
use crate::stabilize::{controller_recovery, decay, DecayOptions, DecayOutcome, Recovery, RecoveryConstants, SdpOptions};
use crate::sysid::{adv_sys_id, epsilon_zero, EstimateBundle, ProbePlan, SysIdConfig};

/// Replacement values for derived constants. Downstream constants are
/// recomputed from any override.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantOverrides {
    pub lambda: Option<f64>,
    pub kappa_prime: Option<f64>,
    pub gamma_prime: Option<f64>,
    pub eps: Option<f64>,
    pub eps0: Option<f64>,
    pub kappa_tilde: Option<f64>,
    pub gamma_tilde: Option<f64>,
    pub kappa_star: Option<f64>,
    pub w: Option<f64>,
    pub history: Option<usize>,
    pub eta: Option<f64>,
    pub reid_budget: Option<usize>,
}

/// Every constant the run uses, plus the names of those that were overridden.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseConstants {
    pub k: usize,
    pub kappa: f64,
    pub beta: f64,
    pub horizon: usize,
    pub lambda: f64,
    /// `3 kappa^2 k^2 beta^{6k}`.
    pub c: f64,
    pub kappa_prime: f64,
    pub gamma_prime: f64,
    pub eps: f64,
    pub eps0: f64,
    pub nu: f64,
    pub kappa_tilde: f64,
    pub gamma_tilde: f64,
    pub kappa_star: f64,
    pub w: f64,
    /// Index of the terminal identification state, `d_u (k+1) + 1`.
    pub t1: usize,
    pub history: usize,
    pub eta: f64,
    pub reid_budget: usize,
    /// Cost Lipschitz scale used for the default learning rate.
    pub g: f64,
    pub overridden: Vec<String>,
}

fn out_of_range(detail: impl Into<String>) -> Error {
    Error::ConstantsOutOfRange { detail: detail.into() }
}

fn pick_override<T>(overridden: &mut Vec<String>, name: &str, over: Option<T>, default: T) -> T {
    match over {
        Some(v) => {
            overridden.push(name.to_string());
            v
        }
        None => default,
    }
}

/// Evaluates the default constants for `(k, kappa, beta, d_x, d_u, T)` and applies overrides.
pub fn derive_constants(
    prior: &PriorBounds,
    d_x: usize,
    d_u: usize,
    horizon: usize,
    g: f64,
    ov: &ConstantOverrides,
) -> Result<PhaseConstants> {
    derive(prior, d_x, d_u, horizon, g, ov, true)
}

/// Same as [`derive_constants`] for runs that stop before learning: the history
/// length is reported but not required to fit in the horizon.
pub fn derive_identification_constants(
    prior: &PriorBounds,
    d_x: usize,
    d_u: usize,
    horizon: usize,
    g: f64,
    ov: &ConstantOverrides,
) -> Result<PhaseConstants> {
    derive(prior, d_x, d_u, horizon, g, ov, false)
}

fn derive(
    prior: &PriorBounds,
    d_x: usize,
    d_u: usize,
    horizon: usize,
    g: f64,
    ov: &ConstantOverrides,
    learning: bool,
) -> Result<PhaseConstants> {
    prior.validate_for(d_x)?;
    if d_u == 0 {
        return Err(Error::Precondition("input dimension must be >= 1".into()));
    }
    let PriorBounds { k, kappa, beta } = *prior;
    let t1 = d_u * (k + 1) + 1;
    if horizon <= t1 {
        return Err(Error::Precondition(format!("horizon T = {horizon} must exceed T1 = {t1}")));
    }
    if !(g > 0.0 && g.is_finite()) {
        return Err(Error::Precondition(format!("cost scale must be positive and finite, got {g}")));
    }
    let mut overridden = Vec::new();
    let mut pick = |name: &str, over: Option<f64>, default: f64| pick_override(&mut overridden, name, over, default);
    let dx = d_x as f64;
    let kk = k as f64;
    let lambda = pick("lambda", ov.lambda, 8.0 * beta);
    let c = 3.0 * kappa * kappa * kk * kk * beta.powi(6 * k as i32);
    let kappa_prime = pick("kappa_prime", ov.kappa_prime, (c * dx).sqrt());
    let gamma_prime = pick("gamma_prime", ov.gamma_prime, 1.0 / (2.0 * kappa_prime * kappa_prime));
    let eps = pick(
        "eps",
        ov.eps,
        gamma_prime * gamma_prime / (1e5 * dx * dx * kappa_prime.powi(8)),
    );
    if !(eps > 0.0 && eps < 0.5) {
        return Err(out_of_range(format!("eps = {eps:e} outside (0, 1/2)")));
    }
    let eps0 = match ov.eps0 {
        Some(v) => pick("eps0", Some(v), v),
        None => epsilon_zero(eps, d_u, k, lambda, d_x, kappa).map_err(|e| out_of_range(e.to_string()))?,
    };
    ProbePlan::new(k, d_u, lambda, eps0).map_err(|e| out_of_range(e.to_string()))?;
    let rc = RecoveryConstants::new(kappa_prime, gamma_prime, eps, d_x).map_err(|e| out_of_range(e.to_string()))?;
    let kappa_tilde = pick("kappa_tilde", ov.kappa_tilde, rc.kappa_tilde);
    let gamma_tilde = pick("gamma_tilde", ov.gamma_tilde, rc.gamma_tilde);
    let kappa_star = pick(
        "kappa_star",
        ov.kappa_star,
        4.0 * kappa_tilde * kappa_tilde * kk * kk * beta.powi(2 * k as i32) * kappa,
    );
    let w = pick("w", ov.w, 2.0 * kappa_star / gamma_tilde);
    let eta = pick("eta", ov.eta, default_learning_rate(g, w, horizon));
    let history = pick_override(&mut overridden, "history", ov.history, default_history(kappa_star, gamma_tilde, horizon));
    let reid_budget = pick_override(&mut overridden, "reid_budget", ov.reid_budget, default_reid_budget(horizon));

    let positives = [
        ("lambda", lambda),
        ("kappa_prime", kappa_prime),
        ("gamma_prime", gamma_prime),
        ("eps0", eps0),
        ("kappa_tilde", kappa_tilde),
        ("kappa_star", kappa_star),
        ("w", w),
    ];
    if let Some((name, v)) = positives.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
        return Err(out_of_range(format!("{name} = {v:e} is not positive and finite")));
    }
    if !(gamma_tilde > 0.0 && gamma_tilde <= 1.0) {
        return Err(out_of_range(format!("gamma_tilde = {gamma_tilde:e} outside (0, 1]")));
    }
    if !(eta.is_finite() && eta >= 0.0) {
        return Err(out_of_range(format!("eta = {eta:e} is not finite and non-negative")));
    }
    if learning && (history == 0 || history > horizon) {
        return Err(out_of_range(format!(
            "history H = {history} must lie in [1, T = {horizon}]; supply a history override"
        )));
    }
    Ok(PhaseConstants {
        k,
        kappa,
        beta,
        horizon,
        lambda,
        c,
        kappa_prime,
        gamma_prime,
        eps,
        eps0,
        nu: rc.nu,
        kappa_tilde,
        gamma_tilde,
        kappa_star,
        w,
        t1,
        history,
        eta,
        reid_budget,
        g,
        overridden,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PipelineOptions {
    pub sdp: SdpOptions,
    pub decay: DecayOptions,
    /// Sign-probe re-identification before learning: `(seed, probe magnitude)`.
    pub reid: Option<(u64, f64)>,
    /// Enter the post-decay state into the learner's estimate buffer.
    pub seed_buffer_with_state: bool,
    pub comparator_iters: usize,
    pub comparator_tol: f64,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            sdp: SdpOptions::default(),
            decay: DecayOptions::default(),
            reid: None,
            seed_buffer_with_state: false,
            comparator_iters: 2000,
            comparator_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhaseCosts {
    pub phase1: f64,
    pub decay: f64,
    pub phase3: f64,
    pub total: f64,
}

impl PhaseCosts {
    pub fn from_log(log: &RunLog) -> Self {
        Self {
            phase1: log.phase_cost(Phase::Phase1),
            decay: log.phase_cost(Phase::Decay),
            phase3: log.phase_cost(Phase::Phase3),
            total: log.cumulative_cost(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineReport {
    pub constants: PhaseConstants,
    pub log: RunLog,
    pub final_state: DVector<f64>,
    pub costs: PhaseCosts,
    pub estimates: EstimateBundle,
    pub recovery: Recovery,
    pub decay: DecayOutcome,
    pub gpc: GpcOutcome,
    /// Best fixed DAC over the whole horizon; simulation mode only.
    pub comparator: Option<Comparator>,
    /// Best fixed DAC over the learning segment alone; simulation mode only.
    pub phase3_comparator: Option<Comparator>,
    pub simulation: bool,
}

impl PipelineReport {
    /// Total cost minus the comparator value.
    pub fn regret(&self) -> Result<f64> {
        regret(self)
    }

    /// Learning-segment cost minus the best fixed DAC on that segment.
    pub fn phase3_regret(&self) -> Result<f64> {
        let c = self.phase3_comparator.as_ref().ok_or(Error::RegretUnavailable)?;
        Ok(self.costs.phase3 - c.value)
    }

    /// First log index of the learning segment.
    pub fn phase3_start(&self) -> usize {
        self.log.len() - self.gpc.steps
    }
}

pub fn regret(report: &PipelineReport) -> Result<f64> {
    let c = report.comparator.as_ref().ok_or(Error::RegretUnavailable)?;
    Ok(report.costs.total - c.value)
}

/// Runs the three phases on any plant; no comparator is computed.
pub fn run_pipeline<P: Plant + ?Sized>(plant: &mut P, constants: &PhaseConstants, opts: &PipelineOptions) -> Result<PipelineReport> {
    let c = constants;
    let (d_x, d_u) = (plant.state_dim(), plant.input_dim());
    if c.t1 != d_u * (c.k + 1) + 1 {
        return Err(Error::Precondition(format!("constants were derived for a different input dimension (T1 = {})", c.t1)));
    }
    let horizon = c.horizon;
    let sysid_cfg = SysIdConfig {
        eps: c.eps,
        lambda: c.lambda,
        k: c.k,
        kappa: c.kappa,
        eps0_override: Some(c.eps0),
    };
    let estimates = adv_sys_id(plant, &sysid_cfg).map_err(|e| e.in_phase(Phase::Phase1))?;
    if estimates.a_hat.shape() != (d_x, d_x) {
        return Err(Error::dims("A_hat", d_x, estimates.a_hat.nrows()).in_phase(Phase::Phase1));
    }

    let recovery = controller_recovery(&estimates.a_hat, &estimates.b_hat, c.eps, c.kappa_prime, c.gamma_prime, opts.sdp)
        .map_err(|e| e.in_phase(Phase::Phase2))?;

    let used = plant.log().len();
    let mut decay_opts = opts.decay;
    let remaining = horizon.saturating_sub(used);
    decay_opts.max_steps = Some(decay_opts.max_steps.map_or(remaining, |m| m.min(remaining)));
    let decay_out = decay(plant, &recovery.k_hat, c.kappa_tilde, c.gamma_tilde, decay_opts).map_err(|e| e.in_phase(Phase::Decay))?;
    let used = plant.log().len();
    if used >= horizon {
        return Err(Error::Precondition(format!(
            "identification and decay used {used} of T = {horizon} steps; nothing is left for learning"
        ))
        .in_phase(Phase::Phase3));
    }

    let gpc_cfg = GpcConfig {
        k_hat: recovery.k_hat.clone(),
        kappa: c.kappa_star,
        gamma: c.gamma_tilde,
        history: c.history,
        eta: c.eta,
        horizon: horizon - used,
        a_tilde: estimates.a_hat.clone(),
        b_tilde: estimates.b_hat.clone(),
        reid: opts.reid.map(|(seed, scale)| ReidConfig {
            budget: c.reid_budget,
            seed,
            scale,
        }),
        m_init: None,
        seed_with_state: opts.seed_buffer_with_state,
    };
    let gpc = gpc_run(plant, &gpc_cfg).map_err(|e| e.in_phase(Phase::Phase3))?;

    let log = plant.log().clone();
    Ok(PipelineReport {
        constants: c.clone(),
        costs: PhaseCosts::from_log(&log),
        final_state: plant.state().clone(),
        log,
        estimates,
        recovery,
        decay: decay_out,
        gpc,
        comparator: None,
        phase3_comparator: None,
        simulation: false,
    })
}

/// Costs of the original sequence shifted to start at `offset + 1`.
struct Shifted<'a> {
    inner: &'a dyn CostSequence,
    offset: usize,
}

impl std::fmt::Debug for Shifted<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Shifted").field("offset", &self.offset).finish()
    }
}

impl CostSequence for Shifted<'_> {
    fn at(&self, t: usize) -> std::sync::Arc<dyn crate::lds::CostFunction> {
        self.inner.at(t + self.offset)
    }

    fn lipschitz_scale(&self) -> f64 {
        self.inner.lipschitz_scale()
    }
}

/// Runs the pipeline on a simulated plant, then opens it up to compute the comparators.
pub fn run_simulated(plant: &mut SimulatedPlant, constants: &PhaseConstants, opts: &PipelineOptions) -> Result<PipelineReport> {
    let mut report = run_pipeline(plant, constants, opts)?;
    attach_comparators(&mut report, plant.system(), &plant.disturbances(), plant.costs(), plant.initial_state(), opts)?;
    Ok(report)
}

/// Fills in both comparators from the true system and the disturbances that hit it.
pub fn attach_comparators(
    report: &mut PipelineReport,
    sys: &LinearSystem,
    w: &[DVector<f64>],
    costs: &dyn CostSequence,
    x1: &DVector<f64>,
    opts: &PipelineOptions,
) -> Result<()> {
    if w.len() != report.log.len() {
        return Err(Error::dims("w", report.log.len(), w.len()));
    }
    let c = &report.constants;
    let copts = ComparatorOptions {
        max_iters: opts.comparator_iters,
        tol: opts.comparator_tol,
        kappa: c.kappa_star,
        gamma: c.gamma_tilde,
    };
    let k_hat = &report.recovery.k_hat;
    let warm = Some(&report.gpc.m_final);
    let full = best_dac_in_hindsight(sys, w, costs, k_hat, c.history, x1, warm, copts)?;
    let start = report.phase3_start();
    let shifted = Shifted { inner: costs, offset: start };
    let x_start = &report.log.records()[start].x;
    let seg = best_dac_in_hindsight(sys, &w[start..], &shifted, k_hat, c.history, x_start, warm, copts)?;
    for (name, cmp) in [("full-horizon", &full), ("learning-segment", &seg)] {
        if !cmp.converged {
            log::warn!(
                "{name} comparator stopped after {} iterations (gradient mapping {:e})",
                cmp.iterations,
                cmp.gradient_mapping_norm
            );
        }
    }
    report.comparator = Some(full);
    report.phase3_comparator = Some(seg);
    report.simulation = true;
    Ok(())
}
