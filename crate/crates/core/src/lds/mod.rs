//! Plant model, disturbances, costs, simulation and stability primitives.

pub mod cost;
pub mod disturbance;
pub mod plant;
pub mod runlog;
pub mod stability;
pub mod system;

pub use cost::{CostFunction, CostSequence, DriftingQuadratic, FixedCost, PseudoHuberCost, QuadraticCost};
pub use disturbance::DisturbanceSource;
pub use plant::{simulate, Observation, OpaquePlant, Plant, SimulatedPlant};
pub use runlog::{RunLog, StepRecord};
pub use stability::{certify_strong_stability, CertificateCheck, StabilityCertificate};
pub use system::{random_controllable, Controllability, LinearSystem, PriorBounds};
