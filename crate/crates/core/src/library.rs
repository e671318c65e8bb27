//! Ready-made complex constraints assembled from the primitive vocabulary.
//!
//! All builders produce templates only; nothing is registered with an engine
//! until the result is posted.

use crate::domain::VarId;
use crate::error::ModelError;
use crate::expr::{ExprDag, ExprId, PrimitiveKind};

/// Boolean clause `x1=1 ∨ x2=1 ∨ … ∨ xn=1` as a right-nested disjunction.
/// The empty clause is unsatisfiable and renders as the negated constant.
pub fn build_clause(dag: &mut ExprDag, xs: &[VarId]) -> ExprId {
    match xs {
        [] => {
            let t = dag.constant_true();
            dag.not(t)
        }
        [x] => dag.prim(PrimitiveKind::EqConst(*x, 1)),
        [x, rest @ ..] => {
            let head = dag.prim(PrimitiveKind::EqConst(*x, 1));
            let tail = build_clause(dag, rest);
            dag.or(head, tail)
        }
    }
}

/// Tuple disequality: the tuples differ in at least one position,
/// `x1≠y1 ∨ … ∨ xm≠ym`. Empty tuples are equal, so the constraint
/// degenerates to the negated constant.
pub fn build_different_tp(
    dag: &mut ExprDag,
    xs: &[VarId],
    ys: &[VarId],
) -> Result<ExprId, ModelError> {
    if xs.len() != ys.len() {
        return Err(ModelError::ArityMismatch(xs.len(), ys.len()));
    }
    Ok(different_rec(dag, xs, ys))
}

fn different_rec(dag: &mut ExprDag, xs: &[VarId], ys: &[VarId]) -> ExprId {
    match (xs, ys) {
        ([], []) => {
            let t = dag.constant_true();
            dag.not(t)
        }
        ([x], [y]) => dag.prim(PrimitiveKind::Neq(*x, *y)),
        _ => {
            let head = dag.prim(PrimitiveKind::Neq(xs[0], ys[0]));
            let tail = different_rec(dag, &xs[1..], &ys[1..]);
            dag.or(head, tail)
        }
    }
}

/// Pairwise tuple disequality over a list of same-arity tuples, as a
/// right-nested conjunction of [`build_different_tp`] parts.
pub fn build_alldifferent_tp(
    dag: &mut ExprDag,
    tuples: &[Vec<VarId>],
) -> Result<ExprId, ModelError> {
    let mut parts = Vec::new();
    for i in 0..tuples.len() {
        for j in (i + 1)..tuples.len() {
            parts.push(build_different_tp(dag, &tuples[i], &tuples[j])?);
        }
    }
    Ok(conjoin(dag, &parts))
}

fn conjoin(dag: &mut ExprDag, parts: &[ExprId]) -> ExprId {
    match parts {
        [] => dag.constant_true(),
        [p] => *p,
        [p, rest @ ..] => {
            let tail = conjoin(dag, rest);
            dag.and(*p, tail)
        }
    }
}

/// Lexicographic tuple order `xs ≤lex ys`:
/// `x1<y1 ∨ (x1=y1 ∧ rest)`, recursively, with constant truth at the end.
/// With `annotated` set, each disjunction carries `x_i≤y_i` as its implied
/// part, which the engine may assert early.
pub fn build_lex(
    dag: &mut ExprDag,
    xs: &[VarId],
    ys: &[VarId],
    annotated: bool,
) -> Result<ExprId, ModelError> {
    if xs.len() != ys.len() {
        return Err(ModelError::ArityMismatch(xs.len(), ys.len()));
    }
    Ok(lex_rec(dag, xs, ys, annotated))
}

fn lex_rec(dag: &mut ExprDag, xs: &[VarId], ys: &[VarId], annotated: bool) -> ExprId {
    match (xs, ys) {
        ([], []) => dag.constant_true(),
        _ => {
            let (x, y) = (xs[0], ys[0]);
            let lt = dag.prim(PrimitiveKind::Lt(x, y));
            let eq = dag.prim(PrimitiveKind::Eq(x, y));
            let rest = lex_rec(dag, &xs[1..], &ys[1..], annotated);
            let conj = dag.and(eq, rest);
            if annotated {
                let leq = dag.prim(PrimitiveKind::Leq(x, y));
                dag.or_implied(lt, conj, leq)
            } else {
                dag.or(lt, conj)
            }
        }
    }
}
