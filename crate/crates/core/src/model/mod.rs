pub mod aggregation;
pub mod compact;
pub mod companion;
pub mod params;
pub mod pattern;

pub use aggregation::{build_aggregation, Aggregation, AggregationKind, AggregationScheme};
pub use compact::build_compact_system;
pub use companion::{build_companion_system, spectral_radius, CompanionSystem};
pub use params::{CovFactors, VarParams};
pub use pattern::{detect_pattern, Calendar, MixedFreqData, ObservationPattern};
