//! Prüfer-phase simulation of the circular beta ensemble: coupled sampling of
//! Verblunsky coefficients, grid evaluation of `log Φ*_k`, the auxiliary
//! Gaussian field, extreme-value statistics and barrier random walks.

pub mod auxfield;
pub mod error;
pub mod extremes;
pub mod harness;
pub mod numerics;
pub mod opuc;
pub mod sampling;
pub mod stats;
pub mod walks;

pub use error::{Error, Result};
pub use opuc::{CircleGrid, FieldRun, FieldSnapshot, FieldState, GridBoundReport, PolyPair};
pub use sampling::{CoupledDraw, DrawSequence, ReplicaTag, RngStream};
pub use auxfield::{AuxAccumulator, AuxSnapshot, ResidualReport, ResidualSummary, StDiagnostics};
pub use extremes::{CellSummary, ExtremeRecord, LadderSummary, Statistic};
pub use harness::{ExperimentConfig, OutputFormat, Record, ReplicaParams, RunOptions};
pub use walks::{BarrierSpec, Clock, Estimate};
