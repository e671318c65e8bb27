//! Finite-domain constraint propagation with controlled decomposition.
//!
//! Complex logical constraints (disjunctions, conjunctions, negations, and
//! implied-annotated disjunctions over reified primitives) are decomposed
//! lazily: a part reasons only while some consumer cares about its truth or
//! falsity, expressed through explicit control flags that flow along the
//! decomposition. The same constraints can run against an eager baseline
//! that materializes everything up front, for comparison.

pub mod constraints;
pub mod domain;
pub mod error;
pub mod expr;
pub mod kernel;
pub mod library;
pub mod search;
pub mod trace;

pub use constraints::is_relevant;
pub use domain::{EventMask, FiniteDomain, VarId};
pub use error::{Inconsistency, ModelError, PropResult};
pub use expr::{Expr, ExprDag, ExprId, PrimitiveKind};
pub use kernel::{ControlFlag, Counters, CtrlId, Engine, FrameId, Mode, NodeId, Snapshot, TruthId};
