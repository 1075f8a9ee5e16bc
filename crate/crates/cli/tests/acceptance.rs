//! Acceptance gate. Runs every criterion at its stated tolerance and prints
//! one PASS/FAIL line each; exits non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use blackbox_lds::lds::{
    certify_strong_stability, random_controllable, CostFunction, DisturbanceSource, FixedCost, LinearSystem, Plant, PriorBounds,
    PseudoHuberCost, QuadraticCost, SimulatedPlant,
};
use blackbox_lds::linalg::{spectral_norm, spectral_radius};
use blackbox_lds::lowerbound::{deterministic_adversary, randomized_lb_trial, BuiltinController, BUILTIN_CONTROLLERS};
use blackbox_lds::nsc::{block_bound, gpc_run, surrogate_cost, surrogate_gradient, DacParams, GpcConfig, SurrogateModel};
use blackbox_lds::pipeline::{derive_constants, run_simulated, ConstantOverrides, PipelineOptions};
use blackbox_lds::stabilize::{decay, decay_cost_bound, extract_controller, sdp_feasibility, DecayOptions, SdpOptions};
use blackbox_lds::sysid::{adv_sys_id, markov_blocks, EstimateBundle, SysIdConfig};
use blackbox_lds::Error;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn gauss_mat(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

fn gauss_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

/// Random `(k, kappa)`-controllable system with `d_u <= 2`, `d_x <= max_dx`, `k <= 3`.
fn random_instance(rng: &mut ChaCha8Rng, max_dx: usize) -> (LinearSystem, PriorBounds) {
    let d_u = rng.random_range(1..=2);
    let d_x = rng.random_range(1..=max_dx.min(3 * d_u));
    random_controllable(d_x, d_u, 3, 1e4, rng).expect("controllable draw")
}

/// Infinite-horizon LQR gain with unit weights, by Riccati iteration.
fn lqr_gain(sys: &LinearSystem) -> DMatrix<f64> {
    let (a, b) = (sys.a(), sys.b());
    let (n, m) = (sys.state_dim(), sys.input_dim());
    let mut p = DMatrix::<f64>::identity(n, n);
    for _ in 0..100_000 {
        let s = DMatrix::identity(m, m) + b.transpose() * &p * b;
        let gain = s.lu().solve(&(b.transpose() * &p * a)).expect("R + B'PB is positive definite");
        let next = DMatrix::identity(n, n) + a.transpose() * &p * a - a.transpose() * &p * b * &gain;
        let done = (&next - &p).amax() <= 1e-13 * next.amax();
        p = next;
        if done {
            break;
        }
    }
    let s = DMatrix::identity(m, m) + b.transpose() * &p * b;
    -s.lu().solve(&(b.transpose() * &p * a)).expect("R + B'PB is positive definite")
}

/// Solves `X = L X L^T + I` through the Kronecker form.
fn lyapunov(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let op = DMatrix::identity(n * n, n * n) - l.kronecker(l);
    let rhs = DMatrix::<f64>::identity(n, n);
    let v = op.lu().solve(&DVector::from_column_slice(rhs.as_slice())).expect("stable loop");
    DMatrix::from_column_slice(n, n, v.as_slice())
}

fn plant(sys: LinearSystem, x1: DVector<f64>, dist: DisturbanceSource) -> SimulatedPlant {
    SimulatedPlant::new(sys, dist, Box::new(FixedCost::new(QuadraticCost::unit())), x1, None).expect("valid plant")
}

fn identify(sys: &LinearSystem, prior: &PriorBounds, eps: f64, x1: DVector<f64>, dist: DisturbanceSource) -> Result<EstimateBundle, Error> {
    let mut p = plant(sys.clone(), x1, dist);
    let cfg = SysIdConfig {
        eps,
        lambda: 8.0 * prior.beta,
        k: prior.k,
        kappa: prior.kappa,
        eps0_override: None,
    };
    adv_sys_id(&mut p, &cfg)
}

fn estimate_errors(est: &EstimateBundle, sys: &LinearSystem) -> (f64, f64) {
    (spectral_norm(&(&est.a_hat - sys.a())), spectral_norm(&(&est.b_hat - sys.b())))
}

fn noiseless_identification() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let (sys, prior) = random_instance(&mut rng, 4);
        let est = identify(&sys, &prior, 1e-2, DVector::zeros(sys.state_dim()), DisturbanceSource::Zero)
            .map_err(|e| format!("instance {i}: {e}"))?;
        let (ea, eb) = estimate_errors(&est, &sys);
        worst = worst.max(ea).max(eb);
    }
    let t = start.elapsed();
    check(worst <= 1e-8 && within(t, 5.0), format!("50 systems, max error {worst:.2e} (<= 1e-8), {:.2}s (< 5s)", t.as_secs_f64()))
}

struct AdversarialRun {
    a_err: f64,
    b_err: f64,
    eps: f64,
    block_excess: f64,
    state_violations: usize,
    steps: usize,
}

fn adversarial_runs() -> Result<(Vec<AdversarialRun>, Duration), String> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut runs = Vec::new();
    for i in 0..50 {
        let (sys, prior) = random_instance(&mut rng, 3);
        let dir = gauss_vec(&mut rng, sys.state_dim(), 1.0);
        let x1 = &dir / dir.norm().max(1e-300) * rng.random_range(0.0..=1.0);
        for eps in [1e-2, 1e-3] {
            let est = identify(&sys, &prior, eps, x1.clone(), DisturbanceSource::sign_adversarial(1.0).expect("unit scale"))
                .map_err(|e| format!("instance {i}, eps {eps}: {e}"))?;
            let (a_err, b_err) = estimate_errors(&est, &sys);
            let bound = est.plan.block_error_bound();
            let block_excess = est
                .blocks
                .m_hat
                .iter()
                .zip(markov_blocks(&sys, prior.k))
                .map(|(m, truth)| (m - truth).norm() - bound)
                .fold(f64::NEG_INFINITY, f64::max);
            runs.push(AdversarialRun {
                a_err,
                b_err,
                eps,
                block_excess,
                state_violations: est.plan.state_bound_violations(&est.states).len(),
                steps: est.states.len() - 1,
            });
        }
    }
    Ok((runs, start.elapsed()))
}

fn adversarial_identification() -> Outcome {
    let (runs, t) = adversarial_runs()?;
    let misses = runs.iter().filter(|r| r.a_err > r.eps || r.b_err > r.eps).count();
    let block_misses = runs.iter().filter(|r| r.block_excess > 0.0).count();
    let worst_ratio = runs.iter().map(|r| r.a_err.max(r.b_err) / r.eps).fold(0.0, f64::max);
    check(
        misses == 0 && block_misses == 0 && within(t, 30.0),
        format!(
            "{} runs (50 systems x eps in {{1e-2, 1e-3}}), accuracy misses {misses}, block-bound misses {block_misses}, worst error/eps {worst_ratio:.2e}, {:.2}s (< 30s)",
            runs.len(),
            t.as_secs_f64()
        ),
    )
}

fn state_magnitude_invariant() -> Outcome {
    let (runs, _) = adversarial_runs()?;
    let violations: usize = runs.iter().map(|r| r.state_violations).sum();
    let steps: usize = runs.iter().map(|r| r.steps).sum();
    check(violations == 0, format!("{violations} violations over {steps} identification steps"))
}

fn sdp_recovery() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let opts = SdpOptions {
        tol: 1e-9,
        max_iters: 100_000,
    };
    let (mut worst_res, mut worst_iters, mut worst_gap) = (0.0f64, 0usize, f64::NEG_INFINITY);
    for i in 0..50 {
        let (sys, _) = random_instance(&mut rng, 3);
        // a feasible trace cap: twice the trace of the LQR loop's covariance point
        let k = lqr_gain(&sys);
        let x = lyapunov(&sys.closed_loop(&k).expect("shapes"));
        // Sigma = [I; K] X [I; K]^T, so its trace is tr(X) + tr(K X K^T)
        let nu = 2.0 * (x.trace() + (&k * &x * k.transpose()).trace());
        let sol = sdp_feasibility(sys.a(), sys.b(), nu, opts).map_err(|e| format!("instance {i}: {e}"))?;
        let k_hat = extract_controller(&sol.sigma).map_err(|e| format!("instance {i}: {e}"))?;
        let rho = spectral_radius(&sys.closed_loop(&k_hat).expect("shapes"));
        worst_res = worst_res.max(sol.residual);
        worst_iters = worst_iters.max(sol.iterations);
        worst_gap = worst_gap.max(rho - (1.0 - 1.0 / (2.0 * nu) + 1e-6));
    }
    let infeasible = sdp_feasibility(&DMatrix::from_element(1, 1, 2.0), &DMatrix::zeros(1, 1), 10.0, opts);
    let rejected = infeasible.is_err();
    let t = start.elapsed();
    check(
        worst_res <= 1e-9 && worst_iters <= 100_000 && worst_gap <= 0.0 && rejected && within(t, 60.0),
        format!(
            "50 pairs, max residual {worst_res:.2e} (<= 1e-9), max iterations {worst_iters}, max rho - bound {worst_gap:.2e} (<= 0), A=2,B=0 rejected: {rejected}, {:.2}s (< 60s)",
            t.as_secs_f64()
        ),
    )
}

/// Perturbation with spectral norm exactly `eps`.
fn perturbation(rng: &mut ChaCha8Rng, r: usize, c: usize, eps: f64) -> DMatrix<f64> {
    let m = gauss_mat(rng, r, c, 1.0);
    &m * (eps / spectral_norm(&m))
}

fn stability_transfer() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut count = 0;
    let mut worst = f64::NEG_INFINITY;
    while count < 100 {
        let (est, _) = random_instance(&mut rng, 4);
        let k = lqr_gain(&est) * rng.random_range(0.5..=1.0);
        let Ok(cert) = certify_strong_stability(&est, &k) else { continue };
        let eps = 10f64.powf(rng.random_range(-6.0..-1.0));
        let da = perturbation(&mut rng, est.state_dim(), est.state_dim(), eps);
        let db = perturbation(&mut rng, est.state_dim(), est.input_dim(), eps);
        let l_true = cert.perturbed_witness(&da, &db).map_err(|e| e.to_string())?;
        let bound = 1.0 - cert.gamma + 2.0 * eps * cert.kappa * cert.kappa;
        worst = worst.max(spectral_norm(&l_true) - bound);
        count += 1;
    }
    check(worst <= 1e-10, format!("100 certificates, max ||L'|| - bound {worst:.2e} (<= 1e-10)"))
}

fn decay_phase() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut count = 0;
    let (mut worst_norm, mut worst_cost) = (0.0f64, 0.0f64);
    while count < 20 {
        let (sys, _) = random_instance(&mut rng, 3);
        let k = lqr_gain(&sys);
        let Ok(cert) = certify_strong_stability(&sys, &k) else { continue };
        let dir = gauss_vec(&mut rng, sys.state_dim(), 1.0);
        let x0 = &dir / dir.norm() * 10f64.powf(rng.random_range(0.0..=6.0));
        let mut p = plant(sys, x0.clone(), DisturbanceSource::sign_adversarial(1.0).expect("unit scale"));
        let opts = DecayOptions {
            stop_early: false,
            max_steps: None,
        };
        let out = decay(&mut p, &k, cert.kappa, cert.gamma, opts).map_err(|e| format!("controller {count}: {e}"))?;
        let logged: f64 = p.log().cumulative_cost();
        let cost_bound = decay_cost_bound(p.cost_scale(), cert.kappa, cert.gamma, x0.norm());
        worst_norm = worst_norm.max(out.final_state.norm() / (2.0 * cert.kappa / cert.gamma));
        worst_cost = worst_cost.max(logged / cost_bound);
        count += 1;
    }
    check(
        worst_norm <= 1.0 && worst_cost <= 1.0,
        format!("20 controllers, max terminal/target {worst_norm:.2e} (<= 1), max cost/bound {worst_cost:.2e} (<= 1)"),
    )
}

fn surrogate_instance(seed: u64) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DacParams, Vec<DVector<f64>>, Box<dyn CostFunction>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d_x = rng.random_range(1..=3);
    let d_u = rng.random_range(1..=2);
    let h = rng.random_range(1..=4);
    let mut a = gauss_mat(&mut rng, d_x, d_x, 1.0);
    a *= 0.8 / spectral_norm(&a).max(1e-12);
    let b = gauss_mat(&mut rng, d_x, d_u, 1.0);
    let k = gauss_mat(&mut rng, d_u, d_x, 0.3);
    let m = DacParams::from_blocks((0..h).map(|_| gauss_mat(&mut rng, d_u, d_x, 0.5)).collect()).expect("uniform blocks");
    let window = (0..2 * h).map(|_| gauss_vec(&mut rng, d_x, 1.0)).collect();
    let cost: Box<dyn CostFunction> = if seed % 2 == 0 {
        Box::new(QuadraticCost::new(rng.random_range(0.1..2.0), rng.random_range(0.1..2.0)).expect("positive weights"))
    } else {
        Box::new(PseudoHuberCost::new(rng.random_range(0.5..2.0)).expect("positive delta"))
    };
    (a, b, k, m, window, cost)
}

fn gpc_correctness() -> Outcome {
    let mut worst_grad: f64 = 0.0;
    for seed in 0..100 {
        let (a, b, k, m, window, cost) = surrogate_instance(seed);
        let model = SurrogateModel { a: &a, b: &b, k: &k };
        let f = |p: &DacParams| surrogate_cost(p, model, &window, cost.as_ref()).expect("window of length 2H");
        let g = surrogate_gradient(&m, model, &window, cost.as_ref()).map_err(|e| e.to_string())?.to_flat();
        let flat = m.to_flat();
        let step = 1e-6;
        let mut err = 0.0;
        for i in 0..flat.len() {
            let (mut p, mut q) = (flat.clone(), flat.clone());
            p[i] += step;
            q[i] -= step;
            let fd = (f(&DacParams::from_flat(&m, &p)) - f(&DacParams::from_flat(&m, &q))) / (2.0 * step);
            err += (g[i] - fd).powi(2);
        }
        let scale = g.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-8);
        worst_grad = worst_grad.max(err.sqrt() / scale);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let (mut violations, mut final_excess) = (0usize, f64::NEG_INFINITY);
    let mut fixed_point_exact = true;
    for i in 0..20 {
        let (sys, _) = random_instance(&mut rng, 3);
        let (d_x, d_u) = (sys.state_dim(), sys.input_dim());
        let k_hat = lqr_gain(&sys);
        let (kappa, gamma, h) = (1.0, 0.3, 3);
        let base = GpcConfig {
            k_hat: k_hat.clone(),
            kappa,
            gamma,
            history: h,
            eta: 0.5,
            horizon: 200,
            a_tilde: sys.a().clone(),
            b_tilde: sys.b().clone(),
            reid: None,
            m_init: None,
            seed_with_state: false,
        };
        let mut p = plant(sys.clone(), DVector::zeros(d_x), DisturbanceSource::gaussian(1.0, 900 + i).expect("sigma >= 0"));
        let out = gpc_run(&mut p, &base).map_err(|e| format!("run {i}: {e}"))?;
        violations += out.feasibility_violations;
        for (j, blk) in out.m_final.blocks().iter().enumerate() {
            final_excess = final_excess.max(spectral_norm(blk) - block_bound(kappa, gamma, j + 1) * (1.0 + 1e-12));
        }

        let m0 = DacParams::from_blocks((1..=h).map(|j| gauss_mat(&mut rng, d_u, d_x, 0.1 * block_bound(kappa, gamma, j))).collect())
            .expect("uniform blocks");
        let still = GpcConfig {
            m_init: Some(m0.clone()),
            ..base
        };
        let mut p = plant(sys, DVector::zeros(d_x), DisturbanceSource::Zero);
        let out = gpc_run(&mut p, &still).map_err(|e| format!("fixed point {i}: {e}"))?;
        fixed_point_exact &= out.m_final == m0 && p.log().records().iter().all(|r| r.x.iter().all(|v| *v == 0.0) && r.cost == 0.0);
    }
    check(
        worst_grad <= 1e-5 && violations == 0 && final_excess <= 0.0 && fixed_point_exact,
        format!(
            "gradient rel. error {worst_grad:.2e} (<= 1e-5, 100 instances), feasibility violations {violations} (20 runs), zero-noise fixed point exact: {fixed_point_exact}"
        ),
    )
}

fn loglog_slope(ts: &[f64], ys: &[f64]) -> f64 {
    let xs: Vec<f64> = ts.iter().map(|t| t.ln()).collect();
    let ls: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ls.iter().sum::<f64>() / n);
    let cov: f64 = xs.iter().zip(&ls).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    cov / var
}

fn sublinear_regret() -> Outcome {
    let start = Instant::now();
    let horizons = [2000usize, 8000, 32000];
    let mut regrets = Vec::new();
    let mut learning = Vec::new();
    for &t in &horizons {
        let sys = LinearSystem::scalar(0.5, 1.0).expect("scalar");
        let mut p = SimulatedPlant::new(
            sys,
            DisturbanceSource::sinusoidal(1.0, 50.0).expect("valid sinusoid"),
            Box::new(FixedCost::new(QuadraticCost::unit())),
            DVector::zeros(1),
            Some(7),
        )
        .expect("valid plant");
        let ov = ConstantOverrides {
            eps: Some(1e-3),
            history: Some(8),
            ..Default::default()
        };
        let prior = PriorBounds::new(1, 1.0, 1.0).expect("valid prior");
        let c = derive_constants(&prior, 1, 1, t, p.cost_scale(), &ov).map_err(|e| e.to_string())?;
        let r = run_simulated(&mut p, &c, &PipelineOptions::default()).map_err(|e| format!("T = {t}: {e}"))?;
        regrets.push(r.regret().map_err(|e| e.to_string())?);
        learning.push(r.phase3_regret().map_err(|e| e.to_string())?);
    }
    let ts: Vec<f64> = horizons.iter().map(|&t| t as f64).collect();
    let slope = loglog_slope(&ts, &regrets);
    let scaled: Vec<f64> = regrets.iter().zip(&ts).map(|(r, t)| r / t.powf(2.0 / 3.0)).collect();
    let scaled_ok = scaled.windows(2).all(|w| w[1] <= 1.15 * w[0]);
    let learning_slope = if learning.iter().all(|r| *r > 0.0) { loglog_slope(&ts, &learning) } else { f64::NAN };
    let t = start.elapsed();
    check(
        slope <= 0.85 && scaled_ok && within(t, 300.0),
        format!(
            "regret {:.3e} / {:.3e} / {:.3e}, log-log slope {slope:.3} (<= 0.85), regret/T^(2/3) non-increasing within 15%: {scaled_ok}; learning-segment slope {learning_slope:.3} (info); {:.1}s (< 300s)",
            regrets[0],
            regrets[1],
            regrets[2],
            t.as_secs_f64()
        ),
    )
}

fn deterministic_lower_bound() -> Outcome {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut worst_norm: f64 = 0.0;
    for ctrl in BUILTIN_CONTROLLERS {
        for d in [5usize, 10, 20] {
            let tr = deterministic_adversary(ctrl.policy(d), d).map_err(|e| format!("{} d={d}: {e}", ctrl.name()))?;
            let grows = tr.final_state_norm() >= 2f64.powi(d as i32 - 1);
            let q_norm = spectral_norm(&tr.system());
            worst_norm = worst_norm.max(q_norm);
            // ||Q^T V|| is 2 up to rounding; one-ulp overshoot is accepted
            if !grows || q_norm > 2.0 + 1e-10 {
                failures.push(format!("{} d={d}", ctrl.name()));
            }
        }
    }
    let t = start.elapsed();
    check(
        failures.is_empty() && within(t, 10.0),
        format!(
            "4 controllers x d in {{5, 10, 20}}, failures {failures:?}, max ||Q^T V|| {worst_norm:.17} (<= 2), {:.2}s (< 10s)",
            t.as_secs_f64()
        ),
    )
}

fn randomized_lower_bound() -> Outcome {
    let start = Instant::now();
    let (d, gamma, horizon) = (200, 40.0, 25);
    let trials: Vec<Result<(bool, bool, bool), String>> = (0..100u64)
        .into_par_iter()
        .map(|seed| {
            let tr = randomized_lb_trial(BuiltinController::Zero.feedback(d), d, gamma, seed, Some(horizon)).map_err(|e| e.to_string())?;
            let grew = tr.final_state_norm_sq() >= 2f64.powi(horizon as i32 - 1);
            Ok((tr.all_doubled(), grew, tr.a_norm <= 3.0 * gamma.sqrt()))
        })
        .collect();
    let trials: Vec<(bool, bool, bool)> = trials.into_iter().collect::<Result<_, _>>()?;
    let doubled = trials.iter().filter(|t| t.0).count();
    let doubled_and_grew = trials.iter().filter(|t| t.0 && t.1).count();
    let norm_ok = trials.iter().filter(|t| t.2).count();
    let t = start.elapsed();
    check(
        doubled >= 95 && doubled_and_grew == doubled && norm_ok >= 95 && within(t, 120.0),
        format!(
            "100 seeds, doubling at every step {doubled} (>= 95), growth in those {doubled_and_grew}/{doubled}, ||A|| <= 3 sqrt(gamma) {norm_ok} (>= 95), {:.2}s (< 120s)",
            t.as_secs_f64()
        ),
    )
}

fn min_energy_controls() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1111);
    let (mut worst_landing, mut worst_ratio) = (0.0f64, 0.0f64);
    for i in 0..100 {
        let d_u = rng.random_range(1..=2);
        let d_x = rng.random_range(1..=4);
        let (sys, prior) = random_controllable(d_x, d_u, 4, 1e6, &mut rng).map_err(|e| format!("instance {i}: {e}"))?;
        let target = gauss_vec(&mut rng, d_x, 1.0);
        let controls = sys.min_energy_controls(prior.k, &target).map_err(|e| format!("instance {i}: {e}"))?;
        let landed = sys.rollout(&DVector::zeros(d_x), &controls).map_err(|e| e.to_string())?;
        let energy: f64 = controls.iter().map(|u| u.norm_squared()).sum();
        let kappa = sys.strong_controllability(prior.k).map_err(|e| e.to_string())?.kappa.ok_or("not controllable")?;
        worst_landing = worst_landing.max((landed - &target).norm());
        worst_ratio = worst_ratio.max(energy / (kappa * target.norm_squared()));
    }
    // the bound is an identity for d_x = 1, where energy and kappa round independently
    check(
        worst_landing <= 1e-8 && worst_ratio <= 1.0 + 1e-12,
        format!(
            "100 instances, max landing error {worst_landing:.2e} (<= 1e-8), max energy/(kappa ||x||^2) {worst_ratio:.17} (<= 1, rounding slack 1e-12)"
        ),
    )
}

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run_cli(args: &[&str], out: &Path) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_blackbox-lds"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("BLACKBOX_LDS_LOG", "off")
        .status()
        .map_err(|e| e.to_string())?;
    if status.success() {
        Ok(())
    } else {
        Err(format!("{args:?} exited with {status}"))
    }
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).expect("readable dir").flatten() {
            let p = entry.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).expect("under dir").to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn reproducibility() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cases: [(&str, &str, &[&str]); 6] = [
        ("sysid", "random_recover.json", &[]),
        ("recover", "random_recover.json", &[]),
        ("pipeline", "scalar_benchmark.json", &["--set", "horizon=600"]),
        ("lowerbound-det", "lowerbound_det.json", &[]),
        ("lowerbound-rand", "lowerbound_rand.json", &["--seed", "5"]),
        ("lowerbound-rand", "lowerbound_rand.json", &["--trials", "4"]),
    ];
    let mut compared = 0;
    let mut mismatches = Vec::new();
    for (i, (cmd, cfg, extra)) in cases.iter().enumerate() {
        let cfg = config_path(cfg);
        let mut args = vec![*cmd, "--config", cfg.to_str().expect("utf-8 path")];
        args.extend_from_slice(extra);
        let (a, b) = (tmp.path().join(format!("{i}a")), tmp.path().join(format!("{i}b")));
        run_cli(&args, &a)?;
        run_cli(&args, &b)?;
        let files = files_under(&a);
        if files != files_under(&b) || files.is_empty() {
            mismatches.push(format!("{cmd}: file sets differ"));
            continue;
        }
        for f in files {
            compared += 1;
            if std::fs::read(a.join(&f)).ok() != std::fs::read(b.join(&f)).ok() {
                mismatches.push(format!("{cmd}: {}", f.display()));
            }
        }
    }
    check(
        mismatches.is_empty() && compared > 0,
        format!("5 subcommands (+ a 4-trial fan-out), {compared} files compared, mismatches {mismatches:?}"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("noiseless exact identification", noiseless_identification),
        ("adversarial identification bound", adversarial_identification),
        ("identification state-magnitude invariant", state_magnitude_invariant),
        ("SDP controller recovery", sdp_recovery),
        ("stability transfer to the true system", stability_transfer),
        ("decay phase target and cost", decay_phase),
        ("GPC gradient, feasibility and fixed point", gpc_correctness),
        ("sublinear regret trend on the scalar benchmark", sublinear_regret),
        ("deterministic lower-bound adversary", deterministic_lower_bound),
        ("randomized lower-bound adversary", randomized_lower_bound),
        ("minimum-energy controls", min_energy_controls),
        ("CLI byte-for-byte reproducibility", reproducibility),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} of 12 criteria passed", 12 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
