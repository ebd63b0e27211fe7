//! Post-hoc analysis of trained models: magnitude pruning, Fisher
//! importance overlap, and error forensics.

pub mod errors;
pub mod fisher;
pub mod overlap;
pub mod prune;

pub use errors::{common_entity_rate, entity_mentions, error_counts, span_errors, CommonEntityReport, ErrorReport, Mention};
pub use fisher::{fisher_diagonal, fisher_from_sentences, pool_mean, FisherDiagonal};
pub use overlap::{language_vs_rest, topk_overlap, OverlapReport, DEFAULT_KS};
pub use prune::{overprune_threshold, prune, prune_mask, prune_sweep, ParameterBudget, PruneCurve, PruneMask, PruneScope};
