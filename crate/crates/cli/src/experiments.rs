use std::collections::BTreeSet;

use blackbox_lds::lds::{
    CostSequence, DisturbanceSource, DriftingQuadratic, FixedCost, LinearSystem, Plant, PriorBounds, PseudoHuberCost, QuadraticCost,
    RunLog, SimulatedPlant,
};
use blackbox_lds::linalg::{spectral_norm, spectral_radius};
use blackbox_lds::lowerbound::{deterministic_adversary, randomized_lb_trial};
use blackbox_lds::nsc::Comparator;
use blackbox_lds::pipeline::{derive_constants, derive_identification_constants, run_simulated, PhaseConstants, PipelineOptions};
use blackbox_lds::stabilize::{controller_recovery, decay, decay_cost_bound, DecayOptions, DecayOutcome, Recovery, SdpOptions};
use blackbox_lds::sysid::{adv_sys_id, markov_blocks, EstimateBundle, SysIdConfig};
use blackbox_lds::Phase;
use nalgebra::{DMatrix, DVector};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};

use crate::config::{CostSpec, DisturbanceSpec, ExperimentConfig, LowerBoundSpec, PlantSpec, Subcommand};
use crate::output::{cumulative, matrix_json, vector_json, StepRow};
use crate::CliError;

/// Rows for `steps.csv` and the document for `summary.json`.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub rows: Vec<StepRow>,
    pub summary: Value,
}

// independent random streams carved out of the run seed
const PLANT_STREAM: u64 = 0x706c_616e_74;
const NOISE_STREAM: u64 = 0x6e6f_6973_65;
const COST_STREAM: u64 = 0x636f_7374;
const REID_STREAM: u64 = 0x7265_6964;

fn stream(seed: Option<u64>, tag: u64) -> u64 {
    seed.unwrap_or(0) ^ tag
}

fn schema(path: &str, message: impl ToString) -> CliError {
    CliError::Schema {
        path: path.to_string(),
        message: message.to_string(),
    }
}

fn runtime(phase: Phase) -> impl Fn(blackbox_lds::Error) -> CliError {
    move |e| CliError::runtime(e, phase)
}

fn rows_matrix(path: &str, rows: &[Vec<f64>], cols: Option<usize>) -> Result<DMatrix<f64>, CliError> {
    let n = rows.len();
    let m = cols.unwrap_or_else(|| rows.first().map_or(0, Vec::len));
    if n == 0 || m == 0 {
        return Err(schema(path, "matrix must be non-empty"));
    }
    if let Some(i) = rows.iter().position(|r| r.len() != m) {
        return Err(schema(&format!("{path}[{i}]"), format!("expected {m} entries, got {}", rows[i].len())));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

struct BuiltPlant {
    plant: SimulatedPlant,
    prior: PriorBounds,
    prior_source: &'static str,
}

/// Smallest `k` at which the system is strongly controllable, with its tight bounds.
fn tightest_prior(sys: &LinearSystem) -> Result<PriorBounds, CliError> {
    (1..=sys.state_dim())
        .find_map(|k| PriorBounds::for_system(sys, k).ok())
        .ok_or_else(|| schema("prior", "plant is not controllable; prior bounds cannot be inferred"))
}

fn build_plant(cfg: &ExperimentConfig, seed: Option<u64>) -> Result<BuiltPlant, CliError> {
    let spec = cfg.plant.as_ref().ok_or_else(|| schema("plant", "required"))?;
    let horizon = cfg.horizon.ok_or_else(|| schema("horizon", "required"))?;
    let (sys, x1, generated_prior) = match spec {
        PlantSpec::Explicit { a, b, x1 } => {
            let a = rows_matrix("plant.a", a, None)?;
            let b = rows_matrix("plant.b", b, None)?;
            let sys = LinearSystem::new(a, b).map_err(|e| schema("plant", e))?;
            let x1 = match x1 {
                Some(v) => DVector::from_column_slice(v),
                None => DVector::zeros(sys.state_dim()),
            };
            (sys, x1, None)
        }
        PlantSpec::Random {
            state_dim,
            input_dim,
            max_k,
            kappa_cap,
            seed: own,
        } => {
            let mut rng = ChaCha8Rng::seed_from_u64(own.unwrap_or_else(|| stream(seed, PLANT_STREAM)));
            let (sys, prior) = blackbox_lds::lds::random_controllable(*state_dim, *input_dim, max_k.unwrap_or(*state_dim), *kappa_cap, &mut rng)
                .map_err(|e| schema("plant", e))?;
            let x1 = DVector::zeros(sys.state_dim());
            (sys, x1, Some(prior))
        }
    };
    let d_x = sys.state_dim();
    let dist = match &cfg.disturbance {
        DisturbanceSpec::Zero => Ok(DisturbanceSource::Zero),
        DisturbanceSpec::Gaussian { sigma } => DisturbanceSource::gaussian(*sigma, stream(seed, NOISE_STREAM)),
        DisturbanceSpec::Sinusoidal { amplitude, period } => DisturbanceSource::sinusoidal(*amplitude, *period),
        DisturbanceSpec::SignAdversarial { scale } => DisturbanceSource::sign_adversarial(*scale),
        DisturbanceSpec::Replay { values } => {
            if let Some(i) = values.iter().position(|v| v.len() != d_x) {
                return Err(schema(&format!("disturbance.values[{i}]"), format!("expected {d_x} entries")));
            }
            DisturbanceSource::replay(values.iter().map(|v| DVector::from_column_slice(v)).collect())
        }
    }
    .map_err(|e| schema("disturbance", e))?;
    let costs: Box<dyn CostSequence> = match &cfg.cost {
        CostSpec::Quadratic { q, r } => Box::new(FixedCost::new(QuadraticCost::new(*q, *r).map_err(|e| schema("cost", e))?)),
        CostSpec::PseudoHuber { delta } => Box::new(FixedCost::new(PseudoHuberCost::new(*delta).map_err(|e| schema("cost", e))?)),
        CostSpec::DriftingQuadratic { lo, hi } => {
            Box::new(DriftingQuadratic::new(horizon, *lo, *hi, stream(seed, COST_STREAM)).map_err(|e| schema("cost", e))?)
        }
    };
    let (prior, prior_source) = match cfg.prior {
        Some(p) => (PriorBounds::new(p.k, p.kappa, p.beta).map_err(|e| schema("prior", e))?, "config"),
        None => (generated_prior.map_or_else(|| tightest_prior(&sys), Ok)?, "plant"),
    };
    prior.validate_for(d_x).map_err(|e| schema("prior.k", e))?;
    let plant = SimulatedPlant::new(sys, dist, costs, x1, seed).map_err(|e| schema("plant.x1", e))?;
    Ok(BuiltPlant { plant, prior, prior_source })
}

fn log_rows(log: &RunLog) -> Vec<StepRow> {
    log.records()
        .iter()
        .map(|r| StepRow {
            t: r.t,
            phase: r.phase.label(),
            state_norm: r.x.norm(),
            control_norm: r.u.norm(),
            cost: r.cost,
        })
        .collect()
}

/// Every constant with its value and where it came from.
fn constants_json(c: &PhaseConstants, flag_keys: &BTreeSet<String>) -> Value {
    let Value::Object(fields) = serde_json::to_value(c).expect("constants serialize") else {
        unreachable!("constants serialize to an object")
    };
    let prior = ["k", "kappa", "beta"];
    let inputs = ["horizon", "g"];
    let mut out = Map::new();
    for (name, value) in fields {
        if name == "overridden" {
            continue;
        }
        let source = if c.overridden.contains(&name) {
            if flag_keys.contains(&format!("overrides.{name}")) {
                "flag"
            } else {
                "config"
            }
        } else if prior.contains(&name.as_str()) {
            "prior"
        } else if inputs.contains(&name.as_str()) {
            "input"
        } else {
            "default"
        };
        out.insert(name, json!({ "value": value, "source": source }));
    }
    Value::Object(out)
}

fn prior_json(p: &PriorBounds, source: &str) -> Value {
    json!({ "k": p.k, "kappa": p.kappa, "beta": p.beta, "source": source })
}

fn sysid_config(c: &PhaseConstants) -> SysIdConfig {
    SysIdConfig {
        eps: c.eps,
        lambda: c.lambda,
        k: c.k,
        kappa: c.kappa,
        eps0_override: Some(c.eps0),
    }
}

fn identification_json(est: &EstimateBundle, sys: &LinearSystem) -> Value {
    let truth = markov_blocks(sys, est.plan.k);
    let block_errors: Vec<f64> = est.blocks.m_hat.iter().zip(&truth).map(|(m, t)| (m - t).norm()).collect();
    json!({
        "a_hat": matrix_json(&est.a_hat),
        "b_hat": matrix_json(&est.b_hat),
        "a_error": spectral_norm(&(&est.a_hat - sys.a())),
        "b_error": spectral_norm(&(&est.b_hat - sys.b())),
        "block_errors": block_errors,
        "block_error_bound": est.plan.block_error_bound(),
        "probe_scale": est.plan.eps0,
        "state_bound_violations": est.plan.state_bound_violations(&est.states).len(),
    })
}

fn estimate_error(est: &EstimateBundle, sys: &LinearSystem) -> f64 {
    spectral_norm(&(&est.a_hat - sys.a())).max(spectral_norm(&(&est.b_hat - sys.b())))
}

fn certificates_json(rec: &Recovery, est: &EstimateBundle, sys: &LinearSystem) -> Result<Value, CliError> {
    let cert = &rec.certificate;
    let da = sys.a() - &est.a_hat;
    let db = sys.b() - &est.b_hat;
    let transferred = cert.perturbed_witness(&da, &db).map_err(runtime(Phase::Phase2))?;
    let eps = estimate_error(est, sys);
    let closed = sys.closed_loop(&rec.k_hat).map_err(runtime(Phase::Phase2))?;
    Ok(json!({
        "estimated": {
            "k_hat": matrix_json(&rec.k_hat),
            "kappa": cert.kappa,
            "gamma": cert.gamma,
            "witness_norm": spectral_norm(&cert.l),
            "witness_bound": rec.witness_bound,
            "trace_cap": rec.constants.nu,
            "sdp_residual": rec.sdp.residual,
            "sdp_iterations": rec.sdp.iterations,
        },
        "true_system": {
            "estimate_error": eps,
            "transferred_witness_norm": spectral_norm(&transferred),
            "transfer_bound": 1.0 - cert.gamma + 2.0 * eps * cert.kappa * cert.kappa,
            "closed_loop_spectral_radius": spectral_radius(&closed),
        },
    }))
}

fn decay_json(d: &DecayOutcome, c: &PhaseConstants) -> Value {
    json!({
        "start_norm": d.start_norm,
        "final_norm": d.final_state.norm(),
        "steps": d.steps,
        "horizon_bound": d.t2,
        "target": d.target,
        "within_target": d.within_target,
        "truncated": d.truncated,
        "cost": d.cost,
        "cost_bound": decay_cost_bound(c.g, c.kappa_tilde, c.gamma_tilde, d.start_norm),
    })
}

fn comparator_json(c: &Comparator) -> Value {
    json!({
        "value": c.value,
        "iterations": c.iterations,
        "converged": c.converged,
        "gradient_mapping_norm": c.gradient_mapping_norm,
    })
}

/// Identification alone, then optionally recovery and decay.
fn identify_and_stabilize(
    cmd: Subcommand,
    cfg: &ExperimentConfig,
    seed: Option<u64>,
    flag_keys: &BTreeSet<String>,
) -> Result<RunOutput, CliError> {
    let BuiltPlant {
        mut plant,
        prior,
        prior_source,
    } = build_plant(cfg, seed)?;
    let (d_x, d_u) = (plant.state_dim(), plant.input_dim());
    let horizon = cfg.horizon.unwrap_or_default();
    let c = derive_identification_constants(&prior, d_x, d_u, horizon, plant.cost_scale(), &cfg.overrides).map_err(runtime(Phase::Phase1))?;
    let est = adv_sys_id(&mut plant, &sysid_config(&c)).map_err(runtime(Phase::Phase1))?;
    let mut summary = json!({
        "constants": constants_json(&c, flag_keys),
        "prior": prior_json(&prior, prior_source),
        "identification": identification_json(&est, plant.system()),
    });
    if cmd == Subcommand::Recover {
        let sdp = SdpOptions {
            tol: cfg.options.sdp_tol,
            max_iters: cfg.options.sdp_max_iters,
        };
        let rec = controller_recovery(&est.a_hat, &est.b_hat, c.eps, c.kappa_prime, c.gamma_prime, sdp).map_err(runtime(Phase::Phase2))?;
        let remaining = horizon.saturating_sub(plant.log().len());
        let opts = DecayOptions {
            stop_early: cfg.options.decay_stop_early,
            max_steps: Some(remaining),
        };
        let d = decay(&mut plant, &rec.k_hat, c.kappa_tilde, c.gamma_tilde, opts).map_err(runtime(Phase::Decay))?;
        summary["certificates"] = certificates_json(&rec, &est, plant.system())?;
        summary["decay"] = decay_json(&d, &c);
    }
    let log = plant.log();
    summary["phase_costs"] = json!({
        "phase1": log.phase_cost(Phase::Phase1),
        "decay": log.phase_cost(Phase::Decay),
        "total": log.cumulative_cost(),
    });
    Ok(RunOutput {
        rows: log_rows(log),
        summary,
    })
}

fn pipeline(cfg: &ExperimentConfig, seed: Option<u64>, flag_keys: &BTreeSet<String>) -> Result<RunOutput, CliError> {
    let BuiltPlant {
        mut plant,
        prior,
        prior_source,
    } = build_plant(cfg, seed)?;
    let (d_x, d_u) = (plant.state_dim(), plant.input_dim());
    let horizon = cfg.horizon.unwrap_or_default();
    let c = derive_constants(&prior, d_x, d_u, horizon, plant.cost_scale(), &cfg.overrides).map_err(runtime(Phase::Phase1))?;
    let o = &cfg.options;
    let opts = PipelineOptions {
        sdp: SdpOptions {
            tol: o.sdp_tol,
            max_iters: o.sdp_max_iters,
        },
        decay: DecayOptions {
            stop_early: o.decay_stop_early,
            max_steps: None,
        },
        reid: o.reid_scale.map(|s| (stream(seed, REID_STREAM), s)),
        seed_buffer_with_state: o.seed_buffer_with_state,
        comparator_iters: o.comparator_iters,
        comparator_tol: o.comparator_tol,
    };
    let report = run_simulated(&mut plant, &c, &opts).map_err(runtime(Phase::Sim))?;
    let sys = plant.system();
    let regret = report.regret().map_err(runtime(Phase::Sim))?;
    let phase3_regret = report.phase3_regret().map_err(runtime(Phase::Sim))?;
    let summary = json!({
        "constants": constants_json(&c, flag_keys),
        "prior": prior_json(&prior, prior_source),
        "identification": identification_json(&report.estimates, sys),
        "certificates": certificates_json(&report.recovery, &report.estimates, sys)?,
        "decay": decay_json(&report.decay, &c),
        "learning": {
            "steps": report.gpc.steps,
            "start": report.phase3_start() + 1,
            "feasibility_violations": report.gpc.feasibility_violations,
            "reid_steps": report.gpc.reid_steps,
            "final_block_norms": report.gpc.m_final.blocks().iter().map(spectral_norm).collect::<Vec<_>>(),
        },
        "phase_costs": report.costs,
        "comparator": report.comparator.as_ref().map(comparator_json),
        "learning_comparator": report.phase3_comparator.as_ref().map(comparator_json),
        "regret": regret,
        "learning_regret": phase3_regret,
        "final_state": vector_json(&report.final_state),
    });
    Ok(RunOutput {
        rows: log_rows(&report.log),
        summary,
    })
}

fn lower_bound_spec(cfg: &ExperimentConfig) -> Result<LowerBoundSpec, CliError> {
    cfg.lower_bound.ok_or_else(|| schema("lower_bound", "required"))
}

fn randomized_attack(cfg: &ExperimentConfig, seed: u64) -> Result<RunOutput, CliError> {
    let spec = lower_bound_spec(cfg)?;
    let tr = randomized_lb_trial(spec.controller.feedback(spec.dim), spec.dim, spec.gamma, seed, spec.horizon).map_err(runtime(Phase::Attack))?;
    let rows: Vec<StepRow> = tr
        .steps
        .iter()
        .map(|s| StepRow {
            t: s.t,
            phase: Phase::Attack.label(),
            state_norm: s.state_norm,
            control_norm: s.control_norm,
            cost: s.cost,
        })
        .collect();
    let growth_target = 2f64.powi(tr.horizon as i32 - 1);
    let a_norm_bound = 3.0 * tr.gamma.sqrt();
    let summary = json!({
        "attack": {
            "dim": tr.dim,
            "gamma": tr.gamma,
            "horizon": tr.horizon,
            "controller": spec.controller.name(),
            "system_norm": tr.a_norm,
            "system_norm_bound": a_norm_bound,
            "system_norm_ok": tr.a_norm <= a_norm_bound,
            "all_doubled": tr.all_doubled(),
            "doubling_failures": tr.steps.iter().filter(|s| s.doubled == Some(false)).count(),
            "final_state_norm_sq": tr.final_state_norm_sq(),
            "growth_target": growth_target,
            "growth_ok": tr.final_state_norm_sq() >= growth_target,
        },
    });
    Ok(RunOutput { rows, summary })
}

/// Slack on `||Q^T V|| <= 2`; the product of two exactly orthogonal-scaled factors rounds to 2 + O(ulp).
const SYSTEM_NORM_SLACK: f64 = 1e-10;

fn deterministic_attack(cfg: &ExperimentConfig) -> Result<RunOutput, CliError> {
    let spec = lower_bound_spec(cfg)?;
    let tr = deterministic_adversary(spec.controller.policy(spec.dim), spec.dim).map_err(runtime(Phase::Attack))?;
    let rows: Vec<StepRow> = tr
        .steps
        .iter()
        .map(|s| StepRow {
            t: s.t,
            phase: Phase::Attack.label(),
            state_norm: s.state_norm,
            control_norm: s.control_norm,
            cost: s.cost,
        })
        .collect();
    let bound = 2f64.powi(tr.dim as i32 - 1);
    let system_norm = spectral_norm(&tr.system());
    let min_recursion = tr.recursion_residuals().into_iter().fold(f64::INFINITY, f64::min);
    let summary = json!({
        "attack": {
            "dim": tr.dim,
            "controller": spec.controller.name(),
            "final_state_norm": tr.final_state_norm(),
            "growth_bound": bound,
            "growth_ok": tr.final_state_norm() >= bound,
            "system_norm": system_norm,
            "system_norm_ok": system_norm <= 2.0 + SYSTEM_NORM_SLACK,
            "orthogonality_error": tr.orthogonality_error(),
            "factorization_error": (&tr.q - tr.factored_q()).amax(),
            "min_recursion_slack": min_recursion,
            "fallback_steps": tr.steps.iter().filter(|s| s.fallback).count(),
            "system": matrix_json(&tr.system()),
        },
    });
    Ok(RunOutput { rows, summary })
}

/// Runs one experiment; nothing is written here.
pub fn run_experiment(cmd: Subcommand, cfg: &ExperimentConfig, seed: Option<u64>, flag_keys: &BTreeSet<String>) -> Result<RunOutput, CliError> {
    let mut out = match cmd {
        Subcommand::Sysid | Subcommand::Recover => identify_and_stabilize(cmd, cfg, seed, flag_keys)?,
        Subcommand::Pipeline => pipeline(cfg, seed, flag_keys)?,
        Subcommand::LowerboundRand => randomized_attack(cfg, seed.ok_or_else(|| schema("seed", "required"))?)?,
        Subcommand::LowerboundDet => deterministic_attack(cfg)?,
    };
    let mut echo = cfg.clone();
    echo.seed = seed;
    echo.subcommand = Some(cmd);
    let summary = out.summary.as_object_mut().expect("summaries are objects");
    summary.insert("subcommand".into(), json!(cmd.name()));
    summary.insert("seed".into(), json!(seed));
    summary.insert("config".into(), serde_json::to_value(&echo).expect("config serializes"));
    summary.insert("steps".into(), json!(out.rows.len()));
    summary.insert("cumulative_cost".into(), json!(cumulative(&out.rows)));
    Ok(out)
}
