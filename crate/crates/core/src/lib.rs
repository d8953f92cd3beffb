//! Partial-synchronization local SGD: layer-wise sync scheduling, a
//! discrete-event timeline simulator and a convergence lab on synthetic
//! quadratics.

pub mod cost_model;
pub mod error;
pub mod par;
pub mod profile;
pub mod schedule;
pub mod scheduler;
pub mod simulator;
pub mod trainer;

pub use cost_model::{CostModel, PeriodCost};
pub use error::{Error, Result};
pub use par::Exec;
pub use profile::{LayerProfile, LinkModel, ModelProfile, Regime};
pub use schedule::Schedule;
pub use simulator::{Mode, Timeline};
pub use trainer::{DivergenceTrace, Problem, SyncMode, TrainerConfig};
