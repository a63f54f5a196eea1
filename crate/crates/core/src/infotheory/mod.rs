//! Exact entropies and conditional mutual information over enumerable worlds, and
//! checks of the gain decomposition, pipeline bounds and transfer-ratio bound.

mod bound;
mod measure;
mod pipeline;
mod table;
mod verify;
pub mod worlds;

pub use bound::{eval_tr_lower_bound, verify_tr_bound_population, TRBoundParams, TrPopulationReport};
pub use measure::{cond_entropy, cond_mutual_info, Cached, InfoMeasure, MI_FLOOR};
pub use pipeline::{AeMap, Field, FieldMap, QuantMap, TheoryPipeline};
pub use table::{JointTable, MAX_CELLS};
pub use verify::{
    sandwich_with, verify_gain_decomposition, verify_gain_sandwich, verify_inequalities, verify_monotone_l,
    verify_pipeline, GainReport, InequalityReport, MonotoneReport, PipelineReport, PipelineTables, SandwichCheck,
    INEQ_SLACK,
};
