//! Phase 2: recover a stabilizing gain from the estimates and decay the state.
//!
//! The gain comes from any point of
//! `{ Sigma >= 0, Tr Sigma <= nu, Sigma_xx = F Sigma F^T + I }` with
//! `F = [A_hat B_hat]`, found by Dykstra's alternating projections. Both
//! projections are exact: an eigenvalue clip-and-shift for the cone with a
//! trace cap, and a pre-factored normal-equation solve for the affine set.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::Serialize;

use crate::error::{Error, Phase, Result};
use crate::lds::{LinearSystem, Plant, StabilityCertificate};
use crate::linalg::{spectral_norm, sym_sqrt, symmetrize, vec_finite};

/// Symmetric `(d_x + d_u)`-square matrix with `xx`, `xu`, `uu` blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct SdpBlockMatrix {
    sigma: DMatrix<f64>,
    d_x: usize,
}

impl SdpBlockMatrix {
    pub fn new(sigma: DMatrix<f64>, d_x: usize) -> Result<Self> {
        if !sigma.is_square() || d_x == 0 || d_x >= sigma.nrows() {
            return Err(Error::dims("Sigma", format!("square, larger than d_x = {d_x}"), format!("{}x{}", sigma.nrows(), sigma.ncols())));
        }
        let scale = sigma.norm().max(1.0);
        if (&sigma - sigma.transpose()).norm() > 1e-9 * scale {
            return Err(Error::Precondition("Sigma must be symmetric".into()));
        }
        Ok(Self { sigma, d_x })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn state_dim(&self) -> usize {
        self.d_x
    }

    pub fn input_dim(&self) -> usize {
        self.sigma.nrows() - self.d_x
    }

    pub fn xx(&self) -> DMatrix<f64> {
        self.sigma.view((0, 0), (self.d_x, self.d_x)).into_owned()
    }

    pub fn xu(&self) -> DMatrix<f64> {
        self.sigma.view((0, self.d_x), (self.d_x, self.input_dim())).into_owned()
    }

    pub fn uu(&self) -> DMatrix<f64> {
        let du = self.input_dim();
        self.sigma.view((self.d_x, self.d_x), (du, du)).into_owned()
    }

    pub fn trace(&self) -> f64 {
        self.sigma.trace()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        symmetrize(&self.sigma).symmetric_eigenvalues().min()
    }
}

/// Frobenius projection onto `{ S >= 0, Tr S <= nu }`.
pub fn project_psd_trace(s: &DMatrix<f64>, nu: f64) -> DMatrix<f64> {
    let eig = symmetrize(s).symmetric_eigen();
    let lam = project_spectrum(eig.eigenvalues.as_slice(), nu);
    let v = &eig.eigenvectors;
    symmetrize(&(v * DMatrix::from_diagonal(&DVector::from_vec(lam)) * v.transpose()))
}

/// Projection of a spectrum onto `{ l >= 0, sum l <= nu }`.
fn project_spectrum(lam: &[f64], nu: f64) -> Vec<f64> {
    let clipped: Vec<f64> = lam.iter().map(|v| v.max(0.0)).collect();
    if clipped.iter().sum::<f64>() <= nu {
        return clipped;
    }
    // shift tau solves sum max(l - tau, 0) = nu
    let mut sorted: Vec<f64> = lam.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (idx, v) in sorted.iter().enumerate() {
        cum += v;
        let cand = (cum - nu) / (idx + 1) as f64;
        if idx + 1 == sorted.len() || sorted[idx + 1] <= cand {
            tau = cand;
            break;
        }
    }
    lam.iter().map(|v| (v - tau).max(0.0)).collect()
}

/// Affine constraint `Sigma_xx - F Sigma F^T = I` with its Gram operator factored once.
#[derive(Debug, Clone)]
pub struct AffineConstraint {
    f: DMatrix<f64>,
    d_x: usize,
    gram: Cholesky<f64, Dyn>,
}

impl AffineConstraint {
    pub fn new(a_hat: &DMatrix<f64>, b_hat: &DMatrix<f64>) -> Result<Self> {
        let d_x = a_hat.nrows();
        if !a_hat.is_square() || b_hat.nrows() != d_x || b_hat.ncols() == 0 {
            return Err(Error::dims(
                "B_hat",
                format!("{d_x} rows with square A_hat"),
                format!("A_hat {}x{}, B_hat {}x{}", a_hat.nrows(), a_hat.ncols(), b_hat.nrows(), b_hat.ncols()),
            ));
        }
        let f = crate::linalg::hstack(&[a_hat.clone(), b_hat.clone()]);
        let g = &f * f.transpose();
        let at = a_hat.transpose();
        // vec(P Y Q) = (Q^T kron P) vec(Y); A A* (Y) = Y - A^T Y A - A Y A^T + G Y G
        let n2 = d_x * d_x;
        let op = DMatrix::identity(n2, n2) - at.kronecker(&at) - a_hat.kronecker(a_hat) + g.kronecker(&g);
        let scale = op.norm().max(1.0);
        let gram = symmetrize(&op).cholesky().ok_or(Error::ConstraintRankDeficient)?;
        let dmin = gram.l_dirty().diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        if !(dmin * dmin > 1e-12 * scale) {
            return Err(Error::ConstraintRankDeficient);
        }
        Ok(Self { f, d_x, gram })
    }

    /// `Sigma_xx - F Sigma F^T`.
    pub fn apply(&self, s: &DMatrix<f64>) -> DMatrix<f64> {
        s.view((0, 0), (self.d_x, self.d_x)) - &self.f * s * self.f.transpose()
    }

    /// `||Sigma_xx - F Sigma F^T - I||_F`.
    pub fn residual(&self, s: &DMatrix<f64>) -> f64 {
        (self.apply(s) - DMatrix::identity(self.d_x, self.d_x)).norm()
    }

    /// Frobenius projection onto the affine set.
    pub fn project(&self, s: &DMatrix<f64>) -> DMatrix<f64> {
        let n = s.nrows();
        let rhs = self.apply(s) - DMatrix::identity(self.d_x, self.d_x);
        let y = DMatrix::from_column_slice(self.d_x, self.d_x, self.gram.solve(&DVector::from_column_slice(rhs.as_slice())).as_slice());
        let y = symmetrize(&y);
        let mut adj = -(self.f.transpose() * &y * &self.f);
        let mut top = adj.view_mut((0, 0), (self.d_x, self.d_x));
        top += &y;
        debug_assert_eq!(adj.nrows(), n);
        symmetrize(&(s - adj))
    }
}

pub fn project_affine(s: &DMatrix<f64>, a_hat: &DMatrix<f64>, b_hat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(AffineConstraint::new(a_hat, b_hat)?.project(s))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SdpOptions {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SdpOptions {
    fn default() -> Self {
        Self { tol: 1e-9, max_iters: 100_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpSolution {
    pub sigma: SdpBlockMatrix,
    pub residual: f64,
    pub iterations: usize,
}

/// Dykstra's alternating projections from `(nu / n) I`; the returned point lies
/// exactly in the capped cone and within `tol` of the affine set.
pub fn sdp_feasibility(a_hat: &DMatrix<f64>, b_hat: &DMatrix<f64>, nu: f64, opts: SdpOptions) -> Result<SdpSolution> {
    if !(nu > 0.0) || !nu.is_finite() {
        return Err(Error::Precondition(format!("trace cap nu must be positive and finite, got {nu}")));
    }
    let aff = AffineConstraint::new(a_hat, b_hat)?;
    let d_x = a_hat.nrows();
    let n = d_x + b_hat.ncols();
    let mut x = DMatrix::identity(n, n) * (nu / n as f64);
    let mut p = DMatrix::zeros(n, n);
    let mut q = DMatrix::zeros(n, n);
    let mut residual = aff.residual(&x);
    for it in 1..=opts.max_iters {
        let y = aff.project(&(&x + &p));
        p = &x + &p - &y;
        let xn = project_psd_trace(&(&y + &q), nu);
        q = &y + &q - &xn;
        x = xn;
        residual = aff.residual(&x);
        if residual <= opts.tol {
            return Ok(SdpSolution {
                sigma: SdpBlockMatrix::new(x, d_x)?,
                residual,
                iterations: it,
            });
        }
        if !residual.is_finite() {
            break;
        }
    }
    Err(Error::SdpInfeasible {
        residual,
        iterations: opts.max_iters,
    })
}

/// `Sigma_xu^T Sigma_xx^{-1}`.
pub fn extract_controller(sigma: &SdpBlockMatrix) -> Result<DMatrix<f64>> {
    let chol = symmetrize(&sigma.xx()).cholesky().ok_or(Error::SingularSigmaXx)?;
    Ok(chol.solve(&sigma.xu()).transpose())
}

/// Constants consumed and produced by controller recovery.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RecoveryConstants {
    pub kappa_prime: f64,
    pub gamma_prime: f64,
    pub eps: f64,
    /// Trace cap `2 kappa'^4 d_x / (gamma' - 2 eps kappa'^2)`.
    pub nu: f64,
    /// `2 kappa'^2 sqrt(d_x) / sqrt(gamma')`.
    pub kappa_tilde: f64,
    /// `gamma' / (16 d_x kappa'^4)`.
    pub gamma_tilde: f64,
}

impl RecoveryConstants {
    pub fn new(kappa_prime: f64, gamma_prime: f64, eps: f64, d_x: usize) -> Result<Self> {
        let margin = gamma_prime - 2.0 * eps * kappa_prime * kappa_prime;
        if !(margin > 0.0) || !(kappa_prime > 0.0) || eps < 0.0 {
            return Err(Error::Precondition(format!(
                "recovery needs gamma' > 2 eps kappa'^2 (gamma'={gamma_prime}, eps={eps}, kappa'={kappa_prime})"
            )));
        }
        let dx = d_x as f64;
        let k2 = kappa_prime * kappa_prime;
        Ok(Self {
            kappa_prime,
            gamma_prime,
            eps,
            nu: 2.0 * k2 * k2 * dx / margin,
            kappa_tilde: 2.0 * k2 * dx.sqrt() / gamma_prime.sqrt(),
            gamma_tilde: gamma_prime / (16.0 * dx * k2 * k2),
        })
    }
}

#[derive(Debug, Clone)]
pub struct Recovery {
    pub k_hat: DMatrix<f64>,
    pub constants: RecoveryConstants,
    pub sdp: SdpSolution,
    /// Witness on the estimated system, `H = Sigma_xx^{1/2}`.
    pub certificate: StabilityCertificate,
    /// Slack used in the witness check on `||L||`.
    pub witness_bound: f64,
}

/// Solves the feasibility SDP on the estimates and checks the resulting witness.
pub fn controller_recovery(
    a_hat: &DMatrix<f64>,
    b_hat: &DMatrix<f64>,
    eps: f64,
    kappa_prime: f64,
    gamma_prime: f64,
    opts: SdpOptions,
) -> Result<Recovery> {
    let constants = RecoveryConstants::new(kappa_prime, gamma_prime, eps, a_hat.nrows())?;
    let sdp = sdp_feasibility(a_hat, b_hat, constants.nu, opts)?;
    let k_hat = extract_controller(&sdp.sigma)?;
    let est = LinearSystem::new(a_hat.clone(), b_hat.clone())?;
    let certificate = StabilityCertificate::from_witness(&est, k_hat.clone(), sym_sqrt(&sdp.sigma.xx()))?;
    let witness_bound = 1.0 - 1.0 / (2.0 * constants.nu) + 1e-6;
    let witness_norm = spectral_norm(&certificate.l);
    if !(witness_norm <= witness_bound) {
        return Err(Error::WitnessCheckFailed {
            witness_norm,
            bound: witness_bound,
        });
    }
    Ok(Recovery {
        k_hat,
        constants,
        sdp,
        certificate,
        witness_bound,
    })
}

/// `max(ln(gamma ||x||) / gamma, 0)`.
pub fn decay_horizon(gamma_tilde: f64, x_norm: f64) -> f64 {
    ((gamma_tilde * x_norm).ln() / gamma_tilde).max(0.0)
}

/// Cost allowance for the decay, `16 G kappa^4 ||x||^3 / gamma^3`.
pub fn decay_cost_bound(g: f64, kappa_tilde: f64, gamma_tilde: f64, x_norm: f64) -> f64 {
    16.0 * g * kappa_tilde.powi(4) * x_norm.powi(3) / gamma_tilde.powi(3)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayOptions {
    /// Stop as soon as `||x|| <= 2 kappa / gamma`.
    pub stop_early: bool,
    /// Hard cap on executed steps (e.g. the remaining horizon).
    pub max_steps: Option<usize>,
}

impl Default for DecayOptions {
    fn default() -> Self {
        Self {
            stop_early: true,
            max_steps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayOutcome {
    pub final_state: DVector<f64>,
    pub start_norm: f64,
    pub cost: f64,
    /// Formula horizon before rounding up.
    pub t2: f64,
    pub steps: usize,
    /// `2 kappa / gamma`.
    pub target: f64,
    pub within_target: bool,
    pub truncated: bool,
}

/// Runs `u = K x` until the state is inside `2 kappa / gamma`, at most `ceil(T2)` steps.
///
/// Aborts with `NotStabilizing` once the state leaves the envelope
/// `kappa (1-gamma)^s ||x_anchor|| + kappa / gamma` that a `(kappa, gamma)`
/// strongly stable gain guarantees. The envelope is anchored at the start and
/// re-anchored every `ceil(1/gamma)` steps, so slow divergence is caught too.
pub fn decay<P: Plant + ?Sized>(
    plant: &mut P,
    k_hat: &DMatrix<f64>,
    kappa_tilde: f64,
    gamma_tilde: f64,
    opts: DecayOptions,
) -> Result<DecayOutcome> {
    if k_hat.shape() != (plant.input_dim(), plant.state_dim()) {
        return Err(Error::dims(
            "K_hat",
            format!("{}x{}", plant.input_dim(), plant.state_dim()),
            format!("{}x{}", k_hat.nrows(), k_hat.ncols()),
        ));
    }
    if !(gamma_tilde > 0.0 && gamma_tilde <= 1.0) || !(kappa_tilde > 0.0) {
        return Err(Error::Precondition(format!("decay needs kappa > 0, gamma in (0, 1] (got {kappa_tilde}, {gamma_tilde})")));
    }
    let start_norm = plant.state().norm();
    let t2 = decay_horizon(gamma_tilde, start_norm);
    let target = 2.0 * kappa_tilde / gamma_tilde;
    let mut budget = t2.ceil() as usize;
    let mut truncated = false;
    if let Some(cap) = opts.max_steps {
        if cap < budget {
            budget = cap;
            truncated = true;
        }
    }
    let window = (1.0 / gamma_tilde).ceil().max(1.0) as usize;
    let envelope = |from: f64, s: usize| kappa_tilde * (1.0 - gamma_tilde).powi(s as i32) * from + kappa_tilde / gamma_tilde;
    let (mut anchor_norm, mut anchor_step) = (start_norm, 0);
    let mut cost = 0.0;
    let mut steps = 0;
    while steps < budget {
        if opts.stop_early && plant.state().norm() <= target {
            break;
        }
        let u = k_hat * plant.state();
        let obs = plant.apply(&u, Phase::Decay)?;
        cost += obs.cost;
        steps += 1;
        let norm = obs.next_state.norm();
        if !vec_finite(&obs.next_state) {
            return Err(Error::NotStabilizing { step: steps, norm });
        }
        let bound = envelope(start_norm, steps).min(envelope(anchor_norm, steps - anchor_step));
        if norm > bound * (1.0 + 1e-9) {
            return Err(Error::NotStabilizing { step: steps, norm });
        }
        if steps % window == 0 {
            (anchor_norm, anchor_step) = (norm, steps);
        }
    }
    let final_state = plant.state().clone();
    let within_target = final_state.norm() <= target;
    Ok(DecayOutcome {
        final_state,
        start_norm,
        cost,
        t2,
        steps,
        target,
        within_target,
        truncated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lds::{DisturbanceSource, FixedCost, QuadraticCost, SimulatedPlant};
    use crate::linalg::spectral_radius;
    use approx::assert_relative_eq;

    fn m(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, v)
    }

    #[test]
    fn psd_trace_projection_examples() {
        let p = project_psd_trace(&m(2, 2, &[2.0, 0.0, 0.0, -1.0]), 1.0);
        assert_relative_eq!(p, m(2, 2, &[1.0, 0.0, 0.0, 0.0]), epsilon = 1e-14);
        let s = m(2, 2, &[0.5, 0.1, 0.1, 0.3]);
        assert_relative_eq!(project_psd_trace(&s, 1.0), s, epsilon = 1e-14);
        assert_relative_eq!(project_psd_trace(&m(2, 2, &[-1.0, 0.0, 0.0, -2.0]), 5.0), DMatrix::zeros(2, 2), epsilon = 1e-14);
    }

    #[test]
    fn spectrum_projection_matches_bisection() {
        let lam = [3.0, 1.5, 0.2, -0.7];
        let nu = 2.0;
        let out = project_spectrum(&lam, nu);
        let (mut lo, mut hi) = (0.0, 3.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let s: f64 = lam.iter().map(|v| (v - mid).max(0.0)).sum();
            if s > nu {
                lo = mid
            } else {
                hi = mid
            }
        }
        for (o, l) in out.iter().zip(lam) {
            assert_relative_eq!(*o, (l - lo).max(0.0), epsilon = 1e-12);
        }
    }

    #[test]
    fn affine_projection_examples() {
        let p = project_affine(&DMatrix::zeros(2, 2), &m(1, 1, &[0.0]), &m(1, 1, &[1.0])).unwrap();
        assert_relative_eq!(p, m(2, 2, &[0.5, 0.0, 0.0, -0.5]), epsilon = 1e-14);
        let on = m(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        assert_relative_eq!(project_affine(&on, &m(1, 1, &[0.0]), &m(1, 1, &[1.0])).unwrap(), on, epsilon = 1e-14);
        let p = project_affine(&m(2, 2, &[3.0, 0.0, 0.0, 7.0]), &m(1, 1, &[0.0]), &m(1, 1, &[0.0])).unwrap();
        assert_relative_eq!(p, m(2, 2, &[1.0, 0.0, 0.0, 7.0]), epsilon = 1e-14);
    }

    #[test]
    fn affine_projection_is_orthogonal() {
        let a = m(2, 2, &[0.3, -0.2, 0.5, 0.1]);
        let b = m(2, 1, &[1.0, 0.4]);
        let aff = AffineConstraint::new(&a, &b).unwrap();
        let s = symmetrize(&DMatrix::from_fn(3, 3, |i, j| ((i * 3 + j) as f64).sin()));
        let p = aff.project(&s);
        assert!(aff.residual(&p) < 1e-12);
        // the step is orthogonal to every direction inside the affine set
        let other = aff.project(&symmetrize(&DMatrix::from_fn(3, 3, |i, j| ((i + 2 * j) as f64).cos())));
        assert!(((&s - &p).dot(&(&other - &p))).abs() < 1e-10);
    }

    #[test]
    fn rank_deficient_constraint_is_reported() {
        let err = AffineConstraint::new(&DMatrix::identity(1, 1), &DMatrix::zeros(1, 1)).unwrap_err();
        assert!(matches!(err, Error::ConstraintRankDeficient));
    }

    #[test]
    fn sdp_scalar_examples() {
        let sol = sdp_feasibility(&m(1, 1, &[0.0]), &m(1, 1, &[1.0]), 3.0, SdpOptions::default()).unwrap();
        assert!(sol.residual <= 1e-9);
        let sol = sdp_feasibility(&m(1, 1, &[0.5]), &m(1, 1, &[1.0]), 10.0, SdpOptions::default()).unwrap();
        let s = sol.sigma.matrix();
        let direct = s[(0, 0)] - (0.5 * 0.5 * s[(0, 0)] + 2.0 * 0.5 * s[(0, 1)] + s[(1, 1)]) - 1.0;
        assert!(direct.abs() <= 1e-9);
        assert!(sol.sigma.min_eigenvalue() >= -1e-9 && sol.sigma.trace() <= 10.0 + 1e-9);
    }

    #[test]
    fn sdp_rejects_expanding_unactuated_plant() {
        let err = sdp_feasibility(&m(1, 1, &[2.0]), &m(1, 1, &[0.0]), 5.0, SdpOptions { tol: 1e-9, max_iters: 2000 }).unwrap_err();
        assert!(matches!(err, Error::SdpInfeasible { .. }));
    }

    #[test]
    fn extract_controller_examples() {
        let s = SdpBlockMatrix::new(m(2, 2, &[1.0, 0.0, 0.0, 1.0]), 1).unwrap();
        assert_eq!(extract_controller(&s).unwrap()[(0, 0)], 0.0);
        let s = SdpBlockMatrix::new(m(3, 3, &[1.0, 0.0, 0.3, 0.0, 1.0, -0.2, 0.3, -0.2, 1.0]), 2).unwrap();
        assert_relative_eq!(extract_controller(&s).unwrap(), m(1, 2, &[0.3, -0.2]), epsilon = 1e-15);
        let s = SdpBlockMatrix::new(m(2, 2, &[2.0, 1.0, 1.0, 1.0]), 1).unwrap();
        assert_relative_eq!(extract_controller(&s).unwrap()[(0, 0)], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn recovery_deadbeat_plant() {
        let r = controller_recovery(&m(1, 1, &[0.0]), &m(1, 1, &[1.0]), 0.0, 1.0, 1.0, SdpOptions::default()).unwrap();
        assert_relative_eq!(r.constants.nu, 2.0);
        assert!((0.0 + r.k_hat[(0, 0)]).abs() <= 0.75 + 1e-9);
    }

    #[test]
    fn recovery_scalar_half() {
        let r = controller_recovery(&m(1, 1, &[0.5]), &m(1, 1, &[1.0]), 1e-6, 6f64.sqrt(), 1.0 / 12.0, SdpOptions::default()).unwrap();
        assert!(spectral_radius(&m(1, 1, &[0.5 + r.k_hat[(0, 0)]])) < 1.0);
    }

    #[test]
    fn recovery_rejects_small_margin() {
        assert!(matches!(
            controller_recovery(&m(1, 1, &[0.5]), &m(1, 1, &[1.0]), 0.5, 1.0, 1.0, SdpOptions::default()),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn decay_horizon_examples() {
        assert_eq!(decay_horizon(0.5, 1.0), 0.0);
        let e2 = std::f64::consts::E.powi(2);
        assert_relative_eq!(decay_horizon(0.5, 2.0 * e2), 4.0, epsilon = 1e-12);
    }

    fn plant(a: f64, x: f64, dist: DisturbanceSource) -> SimulatedPlant {
        SimulatedPlant::new(
            LinearSystem::scalar(a, 1.0).unwrap(),
            dist,
            Box::new(FixedCost::new(QuadraticCost::unit())),
            DVector::from_vec(vec![x]),
            None,
        )
        .unwrap()
    }

    #[test]
    fn decay_skips_small_states() {
        let mut p = plant(0.5, 1.0, DisturbanceSource::Zero);
        let out = decay(&mut p, &m(1, 1, &[-0.5]), 1.0, 0.5, DecayOptions::default()).unwrap();
        assert_eq!(out.steps, 0);
        assert!(p.log().is_empty());
    }

    #[test]
    fn decay_deadbeat_zeroes_state() {
        let mut p = plant(0.5, 8.0, DisturbanceSource::Zero);
        let opts = DecayOptions { stop_early: false, max_steps: None };
        let out = decay(&mut p, &m(1, 1, &[-0.5]), 1.0, 0.9, opts).unwrap();
        assert_eq!(p.log().records()[0].x[0], 8.0);
        assert!(out.steps >= 1);
        assert_eq!(out.final_state[0], 0.0);
    }

    #[test]
    fn decay_flags_destabilizing_gain() {
        let mut p = plant(0.5, 1e6, DisturbanceSource::Zero);
        let err = decay(&mut p, &m(1, 1, &[1.0]), 2.0, 0.25, DecayOptions::default()).unwrap_err();
        assert!(matches!(err, Error::NotStabilizing { .. }));
    }

    #[test]
    fn decay_tolerates_certified_transient_growth() {
        // non-normal loop: ||x|| grows about 8x before it contracts
        let sys = LinearSystem::new(m(2, 2, &[0.6, 20.0, 0.0, 0.5]), m(2, 1, &[0.0, 1.0])).unwrap();
        let k = m(1, 2, &[0.0, 0.0]);
        let cert = crate::lds::certify_strong_stability(&sys, &k).unwrap();
        assert!(cert.kappa > std::f64::consts::E);
        let x0 = DVector::from_vec(vec![0.0, 1e6]);
        let mut p = SimulatedPlant::new(sys, DisturbanceSource::sign_adversarial(1.0).unwrap(), Box::new(FixedCost::new(QuadraticCost::unit())), x0, None).unwrap();
        let out = decay(&mut p, &k, cert.kappa, cert.gamma, DecayOptions::default()).unwrap();
        assert!(out.within_target);
    }

    #[test]
    fn decay_reaches_target_under_adversary() {
        let mut p = plant(0.9, 1e6, DisturbanceSource::sign_adversarial(1.0).unwrap());
        let out = decay(&mut p, &m(1, 1, &[-0.5]), 1.0, 0.6, DecayOptions { stop_early: false, max_steps: None }).unwrap();
        assert!(out.within_target);
        assert!(out.cost <= decay_cost_bound(2.0 * std::f64::consts::SQRT_2, 1.0, 0.6, 1e6));
    }
}
