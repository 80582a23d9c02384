//! Synthetic graphs, attack injection and recall scoring.

mod generate;
mod inject;
mod recall;

pub use generate::generate_bipartite;
pub use inject::{inject_lockstep, AttackGroundTruth, AttackSpec, InjectedAttack};
pub use recall::{evaluate_recall, AttackMatch, RecallSummary, DEFAULT_COVERAGE};

#[derive(Debug, thiserror::Error)]
pub enum AttackError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("ground truth has no attacks")]
    EmptyTruth,
}
