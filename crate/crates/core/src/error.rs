//! Error types shared across the engine.

/// Raised when propagation or a domain operation detects inconsistency.
/// The search reacts by backtracking; it is not a programming error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("inconsistency")]
pub struct Inconsistency;

/// Result of any operation that can fail through inconsistency.
pub type PropResult<T> = Result<T, Inconsistency>;

/// Errors in how the engine API is used, as opposed to logical failure.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("initial domain must be non-empty")]
    EmptyDomain,
    #[error("tuple arities do not match: {0} vs {1}")]
    ArityMismatch(usize, usize),
    #[error("forwarding link would create a cycle")]
    ForwardCycle,
    #[error("pop_frame called on a frame that is not the topmost")]
    NotTopFrame,
}
