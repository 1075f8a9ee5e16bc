//! Phase 3: disturbance-action control learned by projected online gradient descent.
//!
//! A DAC plays `u_t = K x_t + sum_{i=1}^H M^{i-1} w_{t-i}`. With `K` fixed the
//! state is affine in `M`, so any convex per-step cost is convex in `M` and
//! online gradient descent over a bounded set of `M` applies. The unknown
//! `w` is replaced by model residuals `x_{t+1} - A~ x_t - B~ u_t`.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Phase, Result};
use crate::lds::{CostFunction, CostSequence, LinearSystem, Plant};
use crate::linalg::{has_full_row_rank, spectral_norm, symmetrize};

/// Weights `M^0 .. M^{H-1}`, each `d_u x d_x`.
#[derive(Debug, Clone, PartialEq)]
pub struct DacParams {
    blocks: Vec<DMatrix<f64>>,
}

impl DacParams {
    pub fn zeros(h: usize, d_u: usize, d_x: usize) -> Self {
        Self {
            blocks: vec![DMatrix::zeros(d_u, d_x); h],
        }
    }

    pub fn from_blocks(blocks: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = blocks.first().ok_or_else(|| Error::Precondition("DAC history length must be >= 1".into()))?;
        let shape = first.shape();
        if let Some(b) = blocks.iter().find(|b| b.shape() != shape) {
            return Err(Error::dims("M", format!("{shape:?}"), format!("{:?}", b.shape())));
        }
        Ok(Self { blocks })
    }

    pub fn history(&self) -> usize {
        self.blocks.len()
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }

    pub fn block(&self, i: usize) -> &DMatrix<f64> {
        &self.blocks[i]
    }

    pub fn input_dim(&self) -> usize {
        self.blocks[0].nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.blocks[0].ncols()
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: f64, other: &DacParams) {
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            *a += b * s;
        }
    }

    pub fn dot(&self, other: &DacParams) -> f64 {
        self.blocks.iter().zip(&other.blocks).map(|(a, b)| a.dot(b)).sum()
    }

    /// Frobenius norm over all blocks.
    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.blocks.iter().flat_map(|b| b.iter().copied()).collect()
    }

    pub fn from_flat(like: &DacParams, flat: &[f64]) -> Self {
        let (r, c) = like.blocks[0].shape();
        Self {
            blocks: flat.chunks(r * c).map(|ch| DMatrix::from_column_slice(r, c, ch)).collect(),
        }
    }

    /// Whether every block meets its spectral bound, with relative slack `1e-12`.
    pub fn is_feasible(&self, kappa: f64, gamma: f64) -> bool {
        self.blocks
            .iter()
            .enumerate()
            .all(|(i, b)| spectral_norm(b) <= block_bound(kappa, gamma, i + 1) * (1.0 + 1e-12))
    }
}

/// `kappa^4 (1 - gamma)^i`, the bound on `M^{i-1}`.
pub fn block_bound(kappa: f64, gamma: f64, i: usize) -> f64 {
    kappa.powi(4) * (1.0 - gamma).powi(i as i32)
}

/// `sum_{i=1}^H M^{i-1} w[end - i]` where `w`'s last entry is the most recent.
fn dac_term(m: &DacParams, w: &[DVector<f64>], end: usize) -> DVector<f64> {
    let mut out = DVector::zeros(m.input_dim());
    for (i, block) in m.blocks.iter().enumerate() {
        out.gemv(1.0, block, &w[end - i - 1], 1.0);
    }
    out
}

/// `K x + sum_{i=1}^H M^{i-1} w_{t-i}`; `w_buffer`'s last entry is `w_{t-1}`.
pub fn dac_control(k_hat: &DMatrix<f64>, m: &DacParams, x: &DVector<f64>, w_buffer: &[DVector<f64>]) -> Result<DVector<f64>> {
    if w_buffer.len() < m.history() {
        return Err(Error::Precondition(format!(
            "disturbance buffer holds {} entries, history needs {}",
            w_buffer.len(),
            m.history()
        )));
    }
    if k_hat.shape() != (m.input_dim(), m.state_dim()) || x.len() != m.state_dim() {
        return Err(Error::dims("K_hat", format!("{}x{}", m.input_dim(), m.state_dim()), format!("{}x{}", k_hat.nrows(), k_hat.ncols())));
    }
    if let Some(w) = w_buffer.iter().find(|w| w.len() != m.state_dim()) {
        return Err(Error::dims("w_buffer", m.state_dim(), w.len()));
    }
    Ok(k_hat * x + dac_term(m, w_buffer, w_buffer.len()))
}

/// `x_{t+1} - A~ x_t - B~ u_t`.
pub fn estimate_disturbance(a_tilde: &DMatrix<f64>, b_tilde: &DMatrix<f64>, x: &DVector<f64>, u: &DVector<f64>, x_next: &DVector<f64>) -> DVector<f64> {
    x_next - a_tilde * x - b_tilde * u
}

/// Model pieces shared by surrogate evaluations.
#[derive(Debug, Clone, Copy)]
pub struct SurrogateModel<'a> {
    pub a: &'a DMatrix<f64>,
    pub b: &'a DMatrix<f64>,
    pub k: &'a DMatrix<f64>,
}

/// Counterfactual `(y_t, u_t)` after `H` steps from a zero state under `M`.
///
/// `window` holds `w_{t-2H} .. w_{t-1}`, oldest first. Returns all states
/// `y_{t-H} ..= y_t` so the adjoint pass can reuse them.
fn surrogate_rollout(m: &DacParams, model: SurrogateModel<'_>, window: &[DVector<f64>]) -> (Vec<DVector<f64>>, DVector<f64>) {
    let h = m.history();
    let mut ys = Vec::with_capacity(h + 1);
    let mut y = DVector::zeros(model.a.nrows());
    for s in h..2 * h {
        let u = model.k * &y + dac_term(m, window, s);
        let next = model.a * &y + model.b * &u + &window[s];
        ys.push(y);
        y = next;
    }
    let u = model.k * &y + dac_term(m, window, 2 * h);
    ys.push(y);
    (ys, u)
}

fn check_window(m: &DacParams, window: &[DVector<f64>]) -> Result<()> {
    if window.len() != 2 * m.history() {
        return Err(Error::Precondition(format!(
            "surrogate window must hold 2H = {} estimates, got {}",
            2 * m.history(),
            window.len()
        )));
    }
    Ok(())
}

/// Surrogate loss `c_t(y_t(M), u_t(M))` of the zero-reset `H`-step counterfactual.
pub fn surrogate_cost(m: &DacParams, model: SurrogateModel<'_>, window: &[DVector<f64>], cost: &dyn CostFunction) -> Result<f64> {
    check_window(m, window)?;
    let (ys, u) = surrogate_rollout(m, model, window);
    Ok(cost.value(ys.last().expect("rollout is non-empty"), &u))
}

/// Exact gradient of [`surrogate_cost`] in `M`, by a reverse sweep through the rollout.
pub fn surrogate_gradient(m: &DacParams, model: SurrogateModel<'_>, window: &[DVector<f64>], cost: &dyn CostFunction) -> Result<DacParams> {
    check_window(m, window)?;
    let h = m.history();
    let (ys, u) = surrogate_rollout(m, model, window);
    let (gy, gu) = cost.gradient(&ys[h], &u);
    let mut grad = DacParams::zeros(h, m.input_dim(), m.state_dim());
    for (i, g) in grad.blocks.iter_mut().enumerate() {
        g.ger(1.0, &gu, &window[2 * h - i - 1], 1.0);
    }
    let mut lam = gy + model.k.transpose() * &gu;
    for s in (h..2 * h).rev() {
        let mu = model.b.transpose() * &lam;
        for (i, g) in grad.blocks.iter_mut().enumerate() {
            g.ger(1.0, &mu, &window[s - i - 1], 1.0);
        }
        lam = model.a.transpose() * &lam + model.k.transpose() * &mu;
    }
    Ok(grad)
}

/// Per-block projection onto `||M^{i-1}|| <= kappa^4 (1-gamma)^i` by singular-value clipping.
pub fn project_m(m: &DacParams, kappa: f64, gamma: f64) -> DacParams {
    let blocks = m
        .blocks
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let bound = block_bound(kappa, gamma, i + 1);
            if b.nrows() == 1 || b.ncols() == 1 {
                // spectral norm of a vector is its Euclidean norm
                let norm = b.norm();
                return if norm <= bound { b.clone() } else { b * (bound / norm) };
            }
            if spectral_norm(b) <= bound {
                return b.clone();
            }
            let mut svd = b.clone().svd(true, true);
            svd.singular_values.iter_mut().for_each(|s| *s = s.min(bound));
            svd.recompose().expect("both factors requested")
        })
        .collect();
    DacParams { blocks }
}

/// `ceil(ln(kappa*^2 T) / gamma)`.
pub fn default_history(kappa_star: f64, gamma_tilde: f64, horizon: usize) -> usize {
    ((kappa_star * kappa_star * horizon as f64).ln() / gamma_tilde).ceil().max(1.0) as usize
}

/// `1 / (G W sqrt(T))`.
pub fn default_learning_rate(g: f64, w: f64, horizon: usize) -> f64 {
    1.0 / (g * w * (horizon as f64).sqrt())
}

/// `ceil(T^{2/3})`.
pub fn default_reid_budget(horizon: usize) -> usize {
    (horizon as f64).powf(2.0 / 3.0).ceil() as usize
}

/// Optional re-identification before learning: `u = K x + probe` with random signs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReidConfig {
    pub budget: usize,
    pub seed: u64,
    /// Magnitude of each probe coordinate.
    pub scale: f64,
}

#[derive(Debug, Clone)]
pub struct GpcConfig {
    pub k_hat: DMatrix<f64>,
    /// Set-size constant `kappa` of the feasible `M` set.
    pub kappa: f64,
    /// Set-decay constant `gamma` of the feasible `M` set.
    pub gamma: f64,
    pub history: usize,
    pub eta: f64,
    pub horizon: usize,
    pub a_tilde: DMatrix<f64>,
    pub b_tilde: DMatrix<f64>,
    pub reid: Option<ReidConfig>,
    pub m_init: Option<DacParams>,
    /// Enter the starting state as the latest estimate instead of zero.
    pub seed_with_state: bool,
}

#[derive(Debug, Clone)]
pub struct GpcOutcome {
    pub m_final: DacParams,
    pub steps: usize,
    /// Steps after which some block left its bound; zero by construction.
    pub feasibility_violations: usize,
    pub a_tilde: DMatrix<f64>,
    pub b_tilde: DMatrix<f64>,
    pub reid_steps: usize,
}

/// Online loop: play the DAC, observe, record the residual, take a projected step.
pub fn gpc_run<P: Plant + ?Sized>(plant: &mut P, cfg: &GpcConfig) -> Result<GpcOutcome> {
    let (d_x, d_u) = (plant.state_dim(), plant.input_dim());
    if cfg.history == 0 || !(cfg.eta >= 0.0) || !cfg.eta.is_finite() {
        return Err(Error::Precondition(format!("GPC needs H >= 1 and a finite eta >= 0 (got H={}, eta={})", cfg.history, cfg.eta)));
    }
    if cfg.k_hat.shape() != (d_u, d_x) {
        return Err(Error::dims("K_hat", format!("{d_u}x{d_x}"), format!("{}x{}", cfg.k_hat.nrows(), cfg.k_hat.ncols())));
    }
    if cfg.a_tilde.shape() != (d_x, d_x) || cfg.b_tilde.shape() != (d_x, d_u) {
        return Err(Error::dims("A~/B~", format!("{d_x}x{d_x} / {d_x}x{d_u}"), format!("{:?} / {:?}", cfg.a_tilde.shape(), cfg.b_tilde.shape())));
    }
    let h = cfg.history;
    let mut a_tilde = cfg.a_tilde.clone();
    let mut b_tilde = cfg.b_tilde.clone();
    let mut steps = 0;
    let mut reid_steps = 0;

    if let Some(reid) = cfg.reid {
        let budget = reid.budget.min(cfg.horizon);
        let (a, b) = reidentify(plant, &cfg.k_hat, budget, reid)?;
        reid_steps = budget;
        steps += budget;
        if let (Some(a), Some(b)) = (a, b) {
            a_tilde = a;
            b_tilde = b;
        } else {
            log::warn!("re-identification regressors are rank-deficient; keeping the prior estimates");
        }
    }

    let mut m = match &cfg.m_init {
        Some(m0) if m0.history() == h && m0.input_dim() == d_u && m0.state_dim() == d_x => project_m(m0, cfg.kappa, cfg.gamma),
        Some(_) => return Err(Error::dims("m_init", format!("H={h}, {d_u}x{d_x} blocks"), "mismatched")),
        None => DacParams::zeros(h, d_u, d_x),
    };
    let mut buf: VecDeque<DVector<f64>> = std::iter::repeat_n(DVector::zeros(d_x), 2 * h).collect();
    if cfg.seed_with_state {
        buf.pop_front();
        buf.push_back(plant.state().clone());
    }

    let mut violations = 0;
    let model = SurrogateModel {
        a: &a_tilde,
        b: &b_tilde,
        k: &cfg.k_hat,
    };
    while steps < cfg.horizon {
        let window = buf.make_contiguous();
        let x = plant.state().clone();
        let u = dac_control(&cfg.k_hat, &m, &x, window)?;
        let obs = plant.apply(&u, Phase::Phase3)?;
        steps += 1;
        if cfg.eta > 0.0 {
            let grad = surrogate_gradient(&m, model, window, obs.cost_fn.as_ref())?;
            m.axpy(-cfg.eta, &grad);
            m = project_m(&m, cfg.kappa, cfg.gamma);
        }
        if !m.is_feasible(cfg.kappa, cfg.gamma) {
            violations += 1;
        }
        buf.pop_front();
        buf.push_back(estimate_disturbance(&a_tilde, &b_tilde, &x, &u, &obs.next_state));
    }
    Ok(GpcOutcome {
        m_final: m,
        steps,
        feasibility_violations: violations,
        a_tilde,
        b_tilde,
        reid_steps,
    })
}

type Estimate = (Option<DMatrix<f64>>, Option<DMatrix<f64>>);

/// Least squares on `x_{t+1} ~ A x_t + B u_t` under sign probes.
fn reidentify<P: Plant + ?Sized>(plant: &mut P, k_hat: &DMatrix<f64>, budget: usize, reid: ReidConfig) -> Result<Estimate> {
    let (d_x, d_u) = (plant.state_dim(), plant.input_dim());
    let mut rng = ChaCha8Rng::seed_from_u64(reid.seed);
    let mut z = DMatrix::zeros(d_x + d_u, budget);
    let mut next = DMatrix::zeros(d_x, budget);
    for col in 0..budget {
        let x = plant.state().clone();
        let probe = DVector::from_fn(d_u, |_, _| if rng.random::<bool>() { reid.scale } else { -reid.scale });
        let u = k_hat * &x + probe;
        let obs = plant.apply(&u, Phase::Phase3)?;
        z.view_mut((0, col), (d_x, 1)).copy_from(&x);
        z.view_mut((d_x, col), (d_u, 1)).copy_from(&u);
        next.set_column(col, &obs.next_state);
    }
    if budget < d_x + d_u || !has_full_row_rank(&z) {
        return Ok((None, None));
    }
    let Some(chol) = (&z * z.transpose()).cholesky() else {
        return Ok((None, None));
    };
    let theta = chol.solve(&(&z * next.transpose())).transpose();
    Ok((
        Some(theta.columns(0, d_x).into_owned()),
        Some(theta.columns(d_x, d_u).into_owned()),
    ))
}

/// Total cost of the DAC `(K, M)` on the true system from `x1` under the recorded `w`.
pub fn dac_rollout_cost(
    sys: &LinearSystem,
    w: &[DVector<f64>],
    costs: &dyn CostSequence,
    k_hat: &DMatrix<f64>,
    m: &DacParams,
    x1: &DVector<f64>,
) -> f64 {
    rollout(sys, w, costs, k_hat, m, x1).2
}

/// States, controls, and total cost; `w_s = 0` for `s < 1`.
fn rollout(
    sys: &LinearSystem,
    w: &[DVector<f64>],
    costs: &dyn CostSequence,
    k_hat: &DMatrix<f64>,
    m: &DacParams,
    x1: &DVector<f64>,
) -> (Vec<DVector<f64>>, Vec<DVector<f64>>, f64) {
    let h = m.history();
    let d_x = sys.state_dim();
    // padded[h + s - 1] = w_s
    let mut padded = vec![DVector::zeros(d_x); h];
    padded.extend(w.iter().cloned());
    let mut xs = Vec::with_capacity(w.len());
    let mut us = Vec::with_capacity(w.len());
    let mut x = x1.clone();
    let mut total = 0.0;
    for t in 1..=w.len() {
        let u = k_hat * &x + dac_term(m, &padded, h + t - 1);
        total += costs.at(t).value(&x, &u);
        let next = sys.a() * &x + sys.b() * &u + &w[t - 1];
        xs.push(std::mem::replace(&mut x, next));
        us.push(u);
    }
    (xs, us, total)
}

/// Value and exact gradient in `M` of [`dac_rollout_cost`].
pub fn dac_rollout_gradient(
    sys: &LinearSystem,
    w: &[DVector<f64>],
    costs: &dyn CostSequence,
    k_hat: &DMatrix<f64>,
    m: &DacParams,
    x1: &DVector<f64>,
) -> (f64, DacParams) {
    let h = m.history();
    let (xs, us, total) = rollout(sys, w, costs, k_hat, m, x1);
    let mut grad = DacParams::zeros(h, m.input_dim(), m.state_dim());
    let mut lam = DVector::zeros(sys.state_dim());
    let (at, bt, kt) = (sys.a().transpose(), sys.b().transpose(), k_hat.transpose());
    for t in (1..=w.len()).rev() {
        let (gx, gu) = costs.at(t).gradient(&xs[t - 1], &us[t - 1]);
        let mu = gu + &bt * &lam;
        for (i, g) in grad.blocks.iter_mut().enumerate() {
            if t > i + 1 {
                g.ger(1.0, &mu, &w[t - i - 2], 1.0);
            }
        }
        lam = gx + &at * &lam + &kt * &mu;
    }
    (total, grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComparatorOptions {
    pub max_iters: usize,
    /// Stop once the projected-gradient step is below `tol (1 + ||grad J(0)||)`.
    pub tol: f64,
    /// `(kappa, gamma)` of the feasible `M` set.
    pub kappa: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone)]
pub struct Comparator {
    pub m: DacParams,
    pub value: f64,
    /// Norm of the last gradient-mapping step.
    pub gradient_mapping_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

const MODEL_MAX_PARAMS: usize = 400;
const MODEL_ROUNDS: usize = 4;

/// Local model `f(x) + g^T d + d^T Q d / 2`, with `Q` from unit-step gradient
/// differences (exact when the costs are quadratic).
struct QuadModel {
    x: DVector<f64>,
    g: DVector<f64>,
    q: DMatrix<f64>,
    /// Largest eigenvalue of `Q`.
    lip: f64,
    /// `x - Q^+ g`, ignoring eigenvalues below `1e-12` of the largest.
    newton: DVector<f64>,
}

impl QuadModel {
    fn build(eval: &impl Fn(&DacParams) -> (f64, DacParams), x: &DacParams) -> Option<Self> {
        let flat = DVector::from_vec(x.to_flat());
        let n = flat.len();
        let g = DVector::from_vec(eval(x).1.to_flat());
        let mut q = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut p = flat.clone();
            p[j] += 1.0;
            let gj = DVector::from_vec(eval(&DacParams::from_flat(x, p.as_slice())).1.to_flat());
            q.set_column(j, &(gj - &g));
        }
        let q = symmetrize(&q);
        let eig = q.clone().symmetric_eigen();
        let lip = eig.eigenvalues.max();
        if !(lip > 0.0 && lip.is_finite()) {
            return None;
        }
        let coeffs = eig.eigenvectors.transpose() * &g;
        let mut newton = flat.clone();
        for (i, &l) in eig.eigenvalues.iter().enumerate() {
            if l > 1e-12 * lip {
                newton.axpy(-coeffs[i] / l, &eig.eigenvectors.column(i), 1.0);
            }
        }
        Some(Self {
            x: flat,
            g,
            q,
            lip,
            newton,
        })
    }

    fn value(&self, z: &DVector<f64>) -> f64 {
        let d = z - &self.x;
        self.g.dot(&d) + 0.5 * d.dot(&(&self.q * &d))
    }

    /// Minimizer over the feasible set: the Newton point if feasible, otherwise
    /// FISTA on the model started from its projection.
    fn minimize(&self, like: &DacParams, proj: &impl Fn(&DacParams) -> DacParams) -> DVector<f64> {
        let to_flat = |z: &DVector<f64>| DVector::from_vec(proj(&DacParams::from_flat(like, z.as_slice())).to_flat());
        let start = to_flat(&self.newton);
        if start == self.newton {
            return start;
        }
        let n = self.x.len();
        let budget = (400_000_000 / (n * n + 16 * n)).clamp(1_000, 100_000);
        let stop = 1e-13 * (1.0 + self.g.norm());
        let (mut x, mut fx) = (start.clone(), self.value(&start));
        let mut y = start;
        let mut theta: f64 = 1.0;
        for _ in 0..budget {
            let grad = &self.g + &self.q * (&y - &self.x);
            let xn = to_flat(&(&y - grad / self.lip));
            let fxn = self.value(&xn);
            if self.lip * (&xn - &y).norm() <= stop {
                return if fxn < fx { xn } else { x };
            }
            if fxn > fx {
                theta = 1.0;
                y = x.clone();
                continue;
            }
            let theta_new = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
            y = &xn + (&xn - &x) * ((theta - 1.0) / theta_new);
            theta = theta_new;
            x = xn;
            fx = fxn;
        }
        x
    }
}

/// Best fixed DAC `(K, M)` in hindsight.
///
/// Small problems are solved by projected Newton rounds on exact-for-quadratics
/// local models; anything left over goes to FISTA with backtracking and
/// function-value restart. `iterations` counts both.
pub fn best_dac_in_hindsight(
    sys: &LinearSystem,
    w: &[DVector<f64>],
    costs: &dyn CostSequence,
    k_hat: &DMatrix<f64>,
    history: usize,
    x1: &DVector<f64>,
    init: Option<&DacParams>,
    opts: ComparatorOptions,
) -> Result<Comparator> {
    if history == 0 {
        return Err(Error::Precondition("comparator history must be >= 1".into()));
    }
    let (d_x, d_u) = (sys.state_dim(), sys.input_dim());
    if k_hat.shape() != (d_u, d_x) {
        return Err(Error::dims("K_hat", format!("{d_u}x{d_x}"), format!("{}x{}", k_hat.nrows(), k_hat.ncols())));
    }
    let eval = |m: &DacParams| dac_rollout_gradient(sys, w, costs, k_hat, m, x1);
    let proj = |m: &DacParams| project_m(m, opts.kappa, opts.gamma);

    let zero = DacParams::zeros(history, d_u, d_x);
    let (f0, g0) = eval(&zero);
    let threshold = opts.tol * (1.0 + g0.norm());
    let mut best = (zero.clone(), f0);
    let mut x = match init {
        Some(m) if m.history() == history => proj(m),
        _ => zero,
    };
    let mut fx = eval(&x).0;
    if fx < best.1 {
        best = (x.clone(), fx);
    }
    // projected Newton on local quadratic models; exact in one round for quadratic costs
    let mut rounds = 0;
    if history * d_u * d_x <= MODEL_MAX_PARAMS {
        while rounds < MODEL_ROUNDS {
            let Some(model) = QuadModel::build(&eval, &x) else {
                break;
            };
            rounds += 1;
            let cand = DacParams::from_flat(&x, model.minimize(&x, &proj).as_slice());
            let fc = eval(&cand).0;
            let gain = fx - fc;
            if gain > 0.0 {
                x = cand;
                fx = fc;
                if fc < best.1 {
                    best = (x.clone(), fc);
                }
            }
            let (_, g) = eval(&x);
            let mut probe = x.clone();
            probe.axpy(-1.0 / model.lip, &g);
            let mut diff = proj(&probe);
            diff.axpy(-1.0, &x);
            let mapping = model.lip * diff.norm();
            if mapping <= threshold {
                return Ok(Comparator {
                    m: best.0,
                    value: best.1,
                    gradient_mapping_norm: mapping,
                    iterations: rounds,
                    converged: true,
                });
            }
            if !(gain > 1e-14 * fx.abs()) {
                break;
            }
        }
    }
    let mut y = x.clone();
    let mut theta: f64 = 1.0;
    let mut lip = 1.0;
    let mut step_norm = f64::INFINITY;
    let mut iters = rounds;
    while iters < opts.max_iters {
        iters += 1;
        let (fy, gy) = eval(&y);
        let (x_new, fx_new) = loop {
            let mut cand = y.clone();
            cand.axpy(-1.0 / lip, &gy);
            let cand = proj(&cand);
            let mut diff = cand.clone();
            diff.axpy(-1.0, &y);
            let fc = eval(&cand).0;
            let model = fy + gy.dot(&diff) + 0.5 * lip * diff.dot(&diff);
            if fc <= model + 1e-12 * fy.abs().max(1.0) || lip > 1e300 {
                step_norm = lip * diff.norm();
                break (cand, fc);
            }
            lip *= 2.0;
        };
        if fx_new < best.1 {
            best = (x_new.clone(), fx_new);
        }
        if step_norm <= threshold {
            return Ok(Comparator {
                m: best.0,
                value: best.1,
                gradient_mapping_norm: step_norm,
                iterations: iters,
                converged: true,
            });
        }
        if fx_new > fx {
            // function-value restart
            theta = 1.0;
            y = x.clone();
            continue;
        }
        let theta_new = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
        let mut mom = x_new.clone();
        mom.axpy(-1.0, &x);
        y = x_new.clone();
        y.axpy((theta - 1.0) / theta_new, &mom);
        theta = theta_new;
        x = x_new;
        fx = fx_new;
        lip *= 0.9;
    }
    Ok(Comparator {
        m: best.0,
        value: best.1,
        gradient_mapping_norm: step_norm,
        iterations: iters,
        converged: false,
    })
}
