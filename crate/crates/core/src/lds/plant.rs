use std::sync::Arc;

use nalgebra::DVector;

use super::cost::{CostFunction, CostSequence};
use super::disturbance::DisturbanceSource;
use super::runlog::{RunLog, StepRecord};
use super::system::LinearSystem;
use crate::error::{Error, Phase, Result};
use crate::linalg::vec_finite;

/// What the learner sees after acting: the next state and the cost just charged.
#[derive(Debug, Clone)]
pub struct Observation {
    pub next_state: DVector<f64>,
    pub cost: f64,
    pub cost_fn: Arc<dyn CostFunction>,
}

/// Single-trajectory, black-box access to a plant.
///
/// Only the current state and revealed costs are observable; the dynamics
/// stay behind this trait for the whole run.
pub trait Plant {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    /// Current state `x_t`.
    fn state(&self) -> &DVector<f64>;
    /// 1-based index of the current state.
    fn time(&self) -> usize;
    /// Plays `u_t`, pays `c_t(x_t, u_t)` and advances to `x_{t+1}`.
    fn apply(&mut self, u: &DVector<f64>, phase: Phase) -> Result<Observation>;
    /// Execution log so far.
    fn log(&self) -> &RunLog;
    /// Largest Lipschitz scale the cost adversary may use.
    fn cost_scale(&self) -> f64;
}

/// A plant simulated from a known `(A, B)`; introspectable once the run is over.
#[derive(Debug)]
pub struct SimulatedPlant {
    sys: LinearSystem,
    dist: DisturbanceSource,
    costs: Box<dyn CostSequence>,
    x: DVector<f64>,
    x1: DVector<f64>,
    t: usize,
    log: RunLog,
}

impl SimulatedPlant {
    pub fn new(
        sys: LinearSystem,
        dist: DisturbanceSource,
        costs: Box<dyn CostSequence>,
        x1: DVector<f64>,
        seed: Option<u64>,
    ) -> Result<Self> {
        if x1.len() != sys.state_dim() {
            return Err(Error::dims("x1", sys.state_dim(), x1.len()));
        }
        Ok(Self {
            sys,
            dist,
            costs,
            x: x1.clone(),
            x1,
            t: 1,
            log: RunLog::new(seed),
        })
    }

    pub fn system(&self) -> &LinearSystem {
        &self.sys
    }

    pub fn initial_state(&self) -> &DVector<f64> {
        &self.x1
    }

    pub fn costs(&self) -> &dyn CostSequence {
        self.costs.as_ref()
    }

    pub fn into_log(self) -> RunLog {
        self.log
    }

    /// The disturbances that actually hit the plant, `w_1 .. w_{t-1}`.
    pub fn disturbances(&self) -> Vec<DVector<f64>> {
        self.log
            .records()
            .iter()
            .map(|r| r.w.clone().expect("simulated plant always records w"))
            .collect()
    }
}

impl Plant for SimulatedPlant {
    fn state_dim(&self) -> usize {
        self.sys.state_dim()
    }

    fn input_dim(&self) -> usize {
        self.sys.input_dim()
    }

    fn state(&self) -> &DVector<f64> {
        &self.x
    }

    fn time(&self) -> usize {
        self.t
    }

    fn apply(&mut self, u: &DVector<f64>, phase: Phase) -> Result<Observation> {
        if !vec_finite(u) {
            return Err(Error::NonFiniteControl { step: self.t });
        }
        let cost_fn = self.costs.at(self.t);
        let cost = cost_fn.value(&self.x, u);
        let w = self.dist.next(self.t, &self.x);
        let next = self.sys.step(&self.x, u, &w)?;
        if !vec_finite(&next) {
            return Err(Error::NonFiniteState {
                step: self.t + 1,
                last_norm: self.x.norm(),
            });
        }
        let x = std::mem::replace(&mut self.x, next.clone());
        self.log.push(StepRecord {
            t: self.t,
            x,
            u: u.clone(),
            w: Some(w),
            cost,
            phase,
        })?;
        self.t += 1;
        Ok(Observation {
            next_state: next,
            cost,
            cost_fn,
        })
    }

    fn log(&self) -> &RunLog {
        &self.log
    }

    fn cost_scale(&self) -> f64 {
        self.costs.lipschitz_scale()
    }
}

type Transition = dyn FnMut(usize, &DVector<f64>, &DVector<f64>) -> Result<(DVector<f64>, Arc<dyn CostFunction>)>;

/// A plant behind an arbitrary callback `(t, x_t, u_t) -> (x_{t+1}, c_t)`.
///
/// Nothing about the dynamics can be recovered afterwards, so runs against it
/// report cumulative cost only.
pub struct OpaquePlant {
    transition: Box<Transition>,
    dims: (usize, usize),
    cost_scale: f64,
    x: DVector<f64>,
    t: usize,
    log: RunLog,
}

impl std::fmt::Debug for OpaquePlant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OpaquePlant").field("dims", &self.dims).field("t", &self.t).finish()
    }
}

impl OpaquePlant {
    pub fn new<F>(d_u: usize, x1: DVector<f64>, cost_scale: f64, transition: F) -> Self
    where
        F: FnMut(usize, &DVector<f64>, &DVector<f64>) -> Result<(DVector<f64>, Arc<dyn CostFunction>)> + 'static,
    {
        Self {
            transition: Box::new(transition),
            dims: (x1.len(), d_u),
            cost_scale,
            x: x1,
            t: 1,
            log: RunLog::new(None),
        }
    }
}

impl Plant for OpaquePlant {
    fn state_dim(&self) -> usize {
        self.dims.0
    }

    fn input_dim(&self) -> usize {
        self.dims.1
    }

    fn state(&self) -> &DVector<f64> {
        &self.x
    }

    fn time(&self) -> usize {
        self.t
    }

    fn apply(&mut self, u: &DVector<f64>, phase: Phase) -> Result<Observation> {
        if u.len() != self.dims.1 {
            return Err(Error::dims("u", self.dims.1, u.len()));
        }
        if !vec_finite(u) {
            return Err(Error::NonFiniteControl { step: self.t });
        }
        let (next, cost_fn) = (self.transition)(self.t, &self.x, u)?;
        if next.len() != self.dims.0 {
            return Err(Error::dims("x_next", self.dims.0, next.len()));
        }
        if !vec_finite(&next) {
            return Err(Error::NonFiniteState {
                step: self.t + 1,
                last_norm: self.x.norm(),
            });
        }
        let cost = cost_fn.value(&self.x, u);
        let x = std::mem::replace(&mut self.x, next.clone());
        self.log.push(StepRecord {
            t: self.t,
            x,
            u: u.clone(),
            w: None,
            cost,
            phase,
        })?;
        self.t += 1;
        Ok(Observation {
            next_state: next,
            cost,
            cost_fn,
        })
    }

    fn log(&self) -> &RunLog {
        &self.log
    }

    fn cost_scale(&self) -> f64 {
        self.cost_scale
    }
}

/// Runs `controller` on a simulated plant for `horizon` steps.
///
/// The controller is called as `controller(t, x_t)` and never sees `A` or `B`.
pub fn simulate<F>(
    sys: &LinearSystem,
    mut controller: F,
    dist: DisturbanceSource,
    costs: Box<dyn CostSequence>,
    horizon: usize,
    x1: &DVector<f64>,
) -> Result<(RunLog, DVector<f64>)>
where
    F: FnMut(usize, &DVector<f64>) -> DVector<f64>,
{
    if horizon == 0 {
        return Err(Error::Precondition("horizon must be >= 1".into()));
    }
    let mut plant = SimulatedPlant::new(sys.clone(), dist, costs, x1.clone(), None)?;
    for _ in 0..horizon {
        let u = controller(plant.time(), plant.state());
        if u.len() != sys.input_dim() {
            return Err(Error::dims("u", sys.input_dim(), u.len()));
        }
        plant.apply(&u, Phase::Sim)?;
    }
    let last = plant.state().clone();
    Ok((plant.into_log(), last))
}
