//! Experiment orchestration: configs, the phase diagram, the strong-disorder
//! diagnostic, and CSV persistence.

pub mod config;
pub mod diagnostic;
pub mod experiment;
pub mod output;
pub mod regime;

pub use config::{ExperimentKind, LabConfig};
pub use diagnostic::{strong_disorder_diagnostic, StrongDisorderReport};
pub use experiment::{run_and_write, run_experiment, ExperimentOutcome, ExperimentRecord};
pub use regime::{classify_regime, schedule, Regime, RegimePoint, ScheduleBase, Side};
