use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A convex per-step cost `c(x, u)` with `c(0, 0) = 0` and an analytic gradient.
///
/// `lipschitz_scale` is the `G` with `||grad c(x, u)|| <= G * D` whenever
/// `||x||, ||u|| <= D`.
pub trait CostFunction: Debug + Send + Sync {
    fn value(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>, u: &DVector<f64>) -> (DVector<f64>, DVector<f64>);
    fn lipschitz_scale(&self) -> f64;
    fn is_convex(&self) -> bool {
        true
    }
}

/// `q ||x||^2 + r ||u||^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticCost {
    pub q: f64,
    pub r: f64,
}

impl QuadraticCost {
    pub fn new(q: f64, r: f64) -> Result<Self> {
        if !(q >= 0.0 && r >= 0.0) || !q.is_finite() || !r.is_finite() || q + r == 0.0 {
            return Err(Error::Precondition(format!("quadratic cost weights must be >= 0, not both zero (got {q}, {r})")));
        }
        Ok(Self { q, r })
    }

    pub fn unit() -> Self {
        Self { q: 1.0, r: 1.0 }
    }
}

impl CostFunction for QuadraticCost {
    fn value(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        self.q * x.norm_squared() + self.r * u.norm_squared()
    }

    fn gradient(&self, x: &DVector<f64>, u: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (x * (2.0 * self.q), u * (2.0 * self.r))
    }

    fn lipschitz_scale(&self) -> f64 {
        2.0 * std::f64::consts::SQRT_2 * self.q.max(self.r)
    }
}

/// `delta^2 (sqrt(1 + ||(x, u)||^2 / delta^2) - 1)`: quadratic near zero, linear far out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoHuberCost {
    pub delta: f64,
}

impl PseudoHuberCost {
    pub fn new(delta: f64) -> Result<Self> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::Precondition(format!("pseudo-huber delta must be positive, got {delta}")));
        }
        Ok(Self { delta })
    }
}

impl CostFunction for PseudoHuberCost {
    fn value(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let s = (x.norm_squared() + u.norm_squared()) / (self.delta * self.delta);
        // s / (sqrt(1+s) + 1) avoids cancellation for small s
        self.delta * self.delta * s / ((1.0 + s).sqrt() + 1.0)
    }

    fn gradient(&self, x: &DVector<f64>, u: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let s = (x.norm_squared() + u.norm_squared()) / (self.delta * self.delta);
        let f = 1.0 / (1.0 + s).sqrt();
        (x * f, u * f)
    }

    fn lipschitz_scale(&self) -> f64 {
        std::f64::consts::SQRT_2
    }
}

/// Adversary's cost schedule `c_1, c_2, ...`, revealed one step at a time.
pub trait CostSequence: Debug + Send + Sync {
    /// Cost charged at step `t` (1-based).
    fn at(&self, t: usize) -> Arc<dyn CostFunction>;
    /// Upper bound on every `lipschitz_scale` in the schedule.
    fn lipschitz_scale(&self) -> f64;
}

/// The same cost at every step.
#[derive(Debug, Clone)]
pub struct FixedCost(pub Arc<dyn CostFunction>);

impl FixedCost {
    pub fn new<C: CostFunction + 'static>(c: C) -> Self {
        Self(Arc::new(c))
    }
}

impl CostSequence for FixedCost {
    fn at(&self, _t: usize) -> Arc<dyn CostFunction> {
        Arc::clone(&self.0)
    }

    fn lipschitz_scale(&self) -> f64 {
        self.0.lipschitz_scale()
    }
}

/// Quadratic costs whose weights are redrawn each step from `[lo, hi]`.
#[derive(Debug, Clone)]
pub struct DriftingQuadratic {
    weights: Vec<(f64, f64)>,
    hi: f64,
}

impl DriftingQuadratic {
    pub fn new(horizon: usize, lo: f64, hi: f64, seed: u64) -> Result<Self> {
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::Precondition(format!("drifting weights need 0 < lo <= hi (got {lo}, {hi})")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = (0..horizon)
            .map(|_| (rng.random_range(lo..=hi), rng.random_range(lo..=hi)))
            .collect();
        Ok(Self { weights, hi })
    }
}

impl CostSequence for DriftingQuadratic {
    fn at(&self, t: usize) -> Arc<dyn CostFunction> {
        let (q, r) = self.weights[(t.max(1) - 1) % self.weights.len().max(1)];
        Arc::new(QuadraticCost { q, r })
    }

    fn lipschitz_scale(&self) -> f64 {
        2.0 * std::f64::consts::SQRT_2 * self.hi
    }
}
