//! Seeded discrete recommendation worlds with a known generative law.

mod enumerate;
mod eventlog;
mod generate;
mod spec;

pub use enumerate::{
    enumerate, outcome_count, true_conditional, Column, CondTable, Enumeration, EventVals, Outcome, DEFAULT_BUDGET,
};
pub use eventlog::{ingest_event_log, read_event_log, save_event_log, write_event_log, EventReader};
pub use generate::{generate, EventLog, EventSample, LogSchema, DAY_TICKS, N_CHUNKS};
pub use spec::{FeatureSpec, Owner, RandomWorld, Side, WorldSpec};

use crate::error::Result;
use crate::infotheory::JointTable;

/// Dense joint table of the given columns at a fixed history depth.
pub fn joint_table(spec: &WorldSpec, depth: usize, columns: &[Column]) -> Result<JointTable> {
    Enumeration::at_depth(spec, depth, columns)?.full_table()
}
