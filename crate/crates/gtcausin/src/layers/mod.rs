//! Model building blocks: causal insight attention, graph diffusion,
//! dilated temporal convolution, skip merge, and periodic inherent
//! features.

pub mod causal_insight;
pub mod diffusion;
pub mod inherent;
pub mod merge;
pub mod tcn;

pub use causal_insight::{AttentionRow, AttentionView, CausalInsightLayer};
pub use diffusion::{diffusion_forward, diffusion_tail_norm};
pub use inherent::{one_hot, InherentLayer};
pub use merge::merge_forward;
pub use tcn::tcn_forward;
