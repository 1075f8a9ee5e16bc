use nalgebra::DVector;

use crate::error::{Error, Phase, Result};

/// One executed transition.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    /// True disturbance when the plant is simulated, `None` on an opaque plant.
    pub w: Option<DVector<f64>>,
    pub cost: f64,
    pub phase: Phase,
}

/// Contiguous step records with a running total of the cost.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    records: Vec<StepRecord>,
    total: f64,
    pub seed: Option<u64>,
}

impl RunLog {
    pub fn new(seed: Option<u64>) -> Self {
        Self {
            records: Vec::new(),
            total: 0.0,
            seed,
        }
    }

    pub fn push(&mut self, rec: StepRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if rec.t != last.t + 1 {
                return Err(Error::Precondition(format!(
                    "run log records must be contiguous: got t={} after t={}",
                    rec.t, last.t
                )));
            }
        }
        self.total += rec.cost;
        self.records.push(rec);
        Ok(())
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn cumulative_cost(&self) -> f64 {
        self.total
    }

    /// Cumulative cost of the records tagged with `phase`.
    pub fn phase_cost(&self, phase: Phase) -> f64 {
        self.records.iter().filter(|r| r.phase == phase).map(|r| r.cost).sum()
    }

    /// Records of one phase, in order.
    pub fn phase_records(&self, phase: Phase) -> impl Iterator<Item = &StepRecord> {
        self.records.iter().filter(move |r| r.phase == phase)
    }

    /// Logged states `x_1, ..., x_T` followed by `final_state`.
    pub fn states_with(&self, final_state: &DVector<f64>) -> Vec<DVector<f64>> {
        self.records
            .iter()
            .map(|r| r.x.clone())
            .chain(std::iter::once(final_state.clone()))
            .collect()
    }
}
