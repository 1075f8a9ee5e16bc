use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, spectral_norm};

/// The plant `x_{t+1} = A x_t + B u_t + w_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() || a.nrows() == 0 {
            return Err(Error::dims("A", "non-empty square matrix", format!("{}x{}", a.nrows(), a.ncols())));
        }
        if b.nrows() != a.nrows() || b.ncols() == 0 {
            return Err(Error::dims("B", format!("{} rows, >= 1 column", a.nrows()), format!("{}x{}", b.nrows(), b.ncols())));
        }
        if !linalg::all_finite(&a) || !linalg::all_finite(&b) {
            return Err(Error::Precondition("system matrices must be finite".into()));
        }
        Ok(Self { a, b })
    }

    /// Scalar system `x' = a x + b u + w`.
    pub fn scalar(a: f64, b: f64) -> Result<Self> {
        Self::new(DMatrix::from_element(1, 1, a), DMatrix::from_element(1, 1, b))
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn closed_loop(&self, k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if k.nrows() != self.input_dim() || k.ncols() != self.state_dim() {
            return Err(Error::dims(
                "K",
                format!("{}x{}", self.input_dim(), self.state_dim()),
                format!("{}x{}", k.nrows(), k.ncols()),
            ));
        }
        Ok(&self.a + &self.b * k)
    }

    /// One transition `A x + B u + w`.
    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        let (dx, du) = (self.state_dim(), self.input_dim());
        if x.len() != dx {
            return Err(Error::dims("x", dx, x.len()));
        }
        if u.len() != du {
            return Err(Error::dims("u", du, u.len()));
        }
        if w.len() != dx {
            return Err(Error::dims("w", dx, w.len()));
        }
        Ok(&self.a * x + &self.b * u + w)
    }

    /// `C_k = [B, AB, ..., A^{k-1} B]`.
    pub fn controllability_matrix(&self, k: usize) -> Result<DMatrix<f64>> {
        if k == 0 {
            return Err(Error::Precondition("controllability index k must be >= 1".into()));
        }
        let mut blocks = Vec::with_capacity(k);
        let mut cur = self.b.clone();
        for _ in 0..k {
            let next = &self.a * &cur;
            blocks.push(cur);
            cur = next;
        }
        Ok(linalg::hstack(&blocks))
    }

    /// Full-row-rank test of `C_k` and, when it passes, `||(C_k C_k^T)^{-1}||`.
    pub fn strong_controllability(&self, k: usize) -> Result<Controllability> {
        let c = self.controllability_matrix(k)?;
        if !linalg::has_full_row_rank(&c) {
            return Ok(Controllability { full_row_rank: false, kappa: None });
        }
        let (smin, _) = linalg::singular_range(&c);
        Ok(Controllability {
            full_row_rank: true,
            kappa: Some(1.0 / (smin * smin)),
        })
    }

    /// Minimum-energy controls `u_1..u_k` steering the noiseless system from 0 to `target`.
    pub fn min_energy_controls(&self, k: usize, target: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
        if target.len() != self.state_dim() {
            return Err(Error::dims("x_f", self.state_dim(), target.len()));
        }
        let c = self.controllability_matrix(k)?;
        if !linalg::has_full_row_rank(&c) {
            return Err(Error::NotControllable { k });
        }
        let gram = &c * c.transpose();
        let chol = gram.cholesky().ok_or(Error::NotControllable { k })?;
        let stacked = c.transpose() * chol.solve(target);
        // block j multiplies A^j B, i.e. drives u_{k-j}
        let du = self.input_dim();
        Ok((1..=k)
            .map(|t| stacked.rows((k - t) * du, du).into_owned())
            .collect())
    }

    /// Noiseless rollout from `x1` under the given controls; returns the final state.
    pub fn rollout(&self, x1: &DVector<f64>, controls: &[DVector<f64>]) -> Result<DVector<f64>> {
        let zero = DVector::zeros(self.state_dim());
        controls.iter().try_fold(x1.clone(), |x, u| self.step(&x, u, &zero))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Controllability {
    pub full_row_rank: bool,
    /// `||(C_k C_k^T)^{-1}||`, present only when `full_row_rank`.
    pub kappa: Option<f64>,
}

/// What the black-box learner is told about the plant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorBounds {
    pub k: usize,
    pub kappa: f64,
    pub beta: f64,
}

impl PriorBounds {
    pub fn new(k: usize, kappa: f64, beta: f64) -> Result<Self> {
        let p = Self { k, kappa, beta };
        if k == 0 || !(kappa >= 1.0) || !(beta >= 1.0) || !kappa.is_finite() || !beta.is_finite() {
            return Err(Error::Precondition(format!(
                "prior bounds need k >= 1, kappa >= 1, beta >= 1 (got k={k}, kappa={kappa}, beta={beta})"
            )));
        }
        Ok(p)
    }

    pub fn validate_for(&self, d_x: usize) -> Result<()> {
        if self.k > d_x {
            return Err(Error::Precondition(format!("k = {} exceeds d_x = {d_x}", self.k)));
        }
        Ok(())
    }

    /// Tightest bounds that hold for a known system at index `k`.
    pub fn for_system(sys: &LinearSystem, k: usize) -> Result<Self> {
        let ctrl = sys.strong_controllability(k)?;
        let kappa = ctrl.kappa.ok_or(Error::NotControllable { k })?;
        let beta = spectral_norm(sys.a()).max(spectral_norm(sys.b())).max(1.0);
        Self::new(k, kappa.max(1.0), beta)
    }
}

/// Draws a random `(k, kappa)`-strongly-controllable system.
///
/// `A` is Gaussian rescaled to a spectral norm in `[0.3, 1.2]`, `B` Gaussian with
/// unit-variance entries. The smallest `k <= max_k` whose `kappa` stays under
/// `kappa_cap` is reported; draws failing every `k` are rejected.
pub fn random_controllable<R: Rng + ?Sized>(
    d_x: usize,
    d_u: usize,
    max_k: usize,
    kappa_cap: f64,
    rng: &mut R,
) -> Result<(LinearSystem, PriorBounds)> {
    if d_x == 0 || d_u == 0 || max_k == 0 || max_k * d_u < d_x {
        return Err(Error::Precondition(format!(
            "cannot build a controllable system with d_x={d_x}, d_u={d_u}, max_k={max_k}"
        )));
    }
    for _ in 0..1000 {
        let mut a = DMatrix::from_fn(d_x, d_x, |_, _| rng.sample::<f64, _>(StandardNormal));
        let target = rng.random_range(0.3..1.2);
        let n = spectral_norm(&a);
        if n > 0.0 {
            a *= target / n;
        }
        let b = DMatrix::from_fn(d_x, d_u, |_, _| rng.sample::<f64, _>(StandardNormal));
        let sys = LinearSystem::new(a, b)?;
        for k in 1..=max_k.min(d_x) {
            if k * d_u < d_x {
                continue;
            }
            if let Some(kappa) = sys.strong_controllability(k)?.kappa {
                if kappa <= kappa_cap {
                    let prior = PriorBounds::for_system(&sys, k)?;
                    return Ok((sys, prior));
                }
            }
        }
    }
    Err(Error::Precondition("rejection sampling for a controllable system did not terminate".into()))
}
