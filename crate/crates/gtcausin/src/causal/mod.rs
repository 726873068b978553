//! Causal-variable pipeline: builds the 30 speed-variation variables per
//! (node, time) sample, draws random and event-conditioned batches,
//! estimates their correlation structure, and exchanges matrices with an
//! external causal-discovery program.

pub mod events;
pub mod exchange;
pub mod sampling;
pub mod stats;
pub mod variables;

pub use events::{detect_events, Event, EventParams};
pub use exchange::{export_batches, export_relation, import_relation};
pub use sampling::{sample_batches, SampleMode};
pub use stats::{
    distribution_summary, neighbor_link_report, pearson_matrix, DistributionSummary,
    NeighborLinkReport, RelationKind, RelationMatrix,
};
pub use variables::{
    can_extract, extract_variables, speed_variation, variable_names, BatchSource,
    CausalVariableBatch, NUM_VARIABLES, SPAN_STEPS,
};
