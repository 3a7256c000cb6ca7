//! Simulation smoothing for mixed-frequency VARs whose panels end in a ragged edge.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptive;
pub mod baseline;
pub mod bench;
pub mod blocked;
pub mod error;
pub mod io;
pub mod kalman;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod plan;
pub mod simsmooth;
pub mod synth;
pub mod system;

pub use error::{Error, Result};
pub use kalman::InitMode;
pub use model::{
    build_aggregation, detect_pattern, Aggregation, AggregationScheme, Calendar, CovFactors,
    MixedFreqData, ObservationPattern, VarParams,
};
pub use plan::{BackendOutput, Plan, RunStats};
