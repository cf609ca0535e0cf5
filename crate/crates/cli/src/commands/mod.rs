mod align;
mod analyze;
mod concreteness;
mod synth;

pub use align::{align, eval};
pub use analyze::analyze;
pub use concreteness::{index, report, score, topics_score};
pub use synth::synth;
