//! Executable verification: cache/output equivalence between the cached and
//! full-prompt delivery paths, template-split linting, token-cost
//! accounting, and the answer metrics.

mod equivalence;
mod lint;
mod metrics;
mod tokens;

pub use equivalence::{check_equivalence, CaseOutcome, EquivCase, EquivalenceReport};
pub use lint::{lint_template_split, LintFinding};
pub use metrics::{degeneracy_score, exact_match, normalize_answer, token_f1};
pub use tokens::{token_cost_report, CostRow, TokenCostReport};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("case list is empty")]
    NoCases,
    #[error("fact token list has {got} entries for {steps} steps")]
    StepMismatch { got: usize, steps: usize },
    #[error(transparent)]
    Pipeline(#[from] crate::pipeline::PipelineError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}
