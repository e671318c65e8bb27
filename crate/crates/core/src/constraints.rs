//! Rule application for registered constraints.
//!
//! Controlled mode: a constraint reasons only while it is *relevant* — its
//! truth value is fixed, or some consumer queries its truth or falsity.
//! Complex constraints decompose lazily, route control flags to their parts,
//! release parts that became irrelevant, and deregister once their remaining
//! work is delegated. Uncontrolled mode is the eager baseline: the whole
//! decomposition is materialized up front and every reified primitive
//! evaluates both of its queries on every wakeup.

use crate::domain::EventMask;
use crate::error::{Inconsistency, PropResult};
use crate::expr::{Expr, PrimitiveKind};
use crate::kernel::{
    ControlFlag, Engine, NodeBody, NodeId, F_ASSERT_EMIT, F_IMPL_IR, F_IR_C1, F_IR_C2,
    F_IR_CASCADE, F_LABELLED, F_LINK_C1, F_LINK_C2, F_NOT_CF, F_NOT_CT, F_ROUTE_FIRST,
    F_SPREAD_BOTH,
};

/// The relevance criterion: a constraint with truth variable state `b` and
/// the given pending queries may contribute to propagation.
pub fn is_relevant(b: Option<bool>, chk_true: bool, chk_false: bool) -> bool {
    b.is_some() || chk_true || chk_false
}

pub(crate) fn step_controlled(eng: &mut Engine, n: NodeId) -> PropResult<()> {
    // Once every registered reference has released the node, irrelevance
    // cascades to its parts and the node deregisters.
    let ctrl = eng.node_ctrl(n);
    let refc = eng.node(n).ref_count;
    if eng.flag_count(ctrl, ControlFlag::Irrelevant) >= refc {
        cascade_irrelevance(eng, n);
        return Ok(());
    }
    match eng.node(n).body.clone() {
        NodeBody::Prim(kind) => step_prim(eng, n, &kind),
        NodeBody::True => step_true(eng, n),
        NodeBody::Unexpanded => step_unexpanded(eng, n),
        NodeBody::Or { c1, c2 } => step_or(eng, n, c1, c2, None),
        NodeBody::OrImplied { c1, c2, ci } => step_or(eng, n, c1, c2, Some(ci)),
        NodeBody::And { c1, c2 } => step_and(eng, n, c1, c2),
        NodeBody::Not { c } => step_not(eng, n, c),
    }
}

fn cascade_irrelevance(eng: &mut Engine, n: NodeId) {
    eng.set_fired(n, F_IR_CASCADE);
    match eng.node(n).body.clone() {
        NodeBody::Or { c1, c2 } | NodeBody::And { c1, c2 } => {
            let (s1, s2) = (eng.node_ctrl(c1), eng.node_ctrl(c2));
            eng.mark_irrelevant(s1);
            eng.mark_irrelevant(s2);
        }
        NodeBody::OrImplied { c1, c2, ci } => {
            let (s1, s2, si) = (eng.node_ctrl(c1), eng.node_ctrl(c2), eng.node_ctrl(ci));
            eng.mark_irrelevant(s1);
            eng.mark_irrelevant(s2);
            eng.mark_irrelevant(si);
        }
        NodeBody::Not { c } => {
            let s = eng.node_ctrl(c);
            eng.mark_irrelevant(s);
        }
        _ => {}
    }
    eng.delete_constraint(n);
}

fn step_true(eng: &mut Engine, n: NodeId) -> PropResult<()> {
    let node = eng.node(n);
    let (b, ctrl) = (node.b, node.ctrl);
    let relevant = is_relevant(
        eng.truth_value(b),
        eng.flag_present(ctrl, ControlFlag::ChkTrue),
        eng.flag_present(ctrl, ControlFlag::ChkFalse),
    );
    if relevant {
        eng.set_truth(b, true)?;
        eng.delete_constraint(n);
    }
    Ok(())
}

fn step_unexpanded(eng: &mut Engine, n: NodeId) -> PropResult<()> {
    let node = eng.node(n);
    let (b, ctrl) = (node.b, node.ctrl);
    let relevant = is_relevant(
        eng.truth_value(b),
        eng.flag_present(ctrl, ControlFlag::ChkTrue),
        eng.flag_present(ctrl, ControlFlag::ChkFalse),
    );
    if !relevant {
        return Ok(());
    }
    expand(eng, n);
    step_controlled(eng, n)
}

/// Decomposes a relevant composite one level: materializes (or re-shares)
/// nodes for the direct parts and suspends on their truth variables.
fn expand(eng: &mut Engine, n: NodeId) {
    let e = eng.node(n).expr;
    match eng.dag.get(e).clone() {
        Expr::Or(a, b) => {
            let c1 = eng.node_for_expr(a);
            let c2 = eng.node_for_expr(b);
            eng.set_body(n, NodeBody::Or { c1, c2 });
            watch_children(eng, n, &[c1, c2]);
        }
        Expr::And(a, b) => {
            let c1 = eng.node_for_expr(a);
            let c2 = eng.node_for_expr(b);
            eng.set_body(n, NodeBody::And { c1, c2 });
            watch_children(eng, n, &[c1, c2]);
        }
        Expr::Not(a) => {
            let c = eng.node_for_expr(a);
            eng.set_body(n, NodeBody::Not { c });
            watch_children(eng, n, &[c]);
        }
        Expr::OrImplied(a, b, i) => {
            let c1 = eng.node_for_expr(a);
            let c2 = eng.node_for_expr(b);
            let ci = eng.node_for_expr(i);
            eng.set_body(n, NodeBody::OrImplied { c1, c2, ci });
            watch_children(eng, n, &[c1, c2, ci]);
        }
        Expr::Prim(_) | Expr::True => unreachable!("leaf templates are never unexpanded"),
    }
}

fn watch_children(eng: &mut Engine, n: NodeId, children: &[NodeId]) {
    for &c in children {
        let bc = eng.node(c).b;
        eng.watch_truth(n, bc);
    }
}

fn step_or(
    eng: &mut Engine,
    n: NodeId,
    c1: NodeId,
    c2: NodeId,
    implied: Option<NodeId>,
) -> PropResult<()> {
    let node = eng.node(n);
    let (b, ctrl) = (node.b, node.ctrl);
    let (b1, b2) = (eng.node(c1).b, eng.node(c2).b);

    // The implied part is entailed by the disjunction, so it can be asserted
    // as soon as the disjunction is known to hold — that is its entire point.
    if let Some(ci) = implied {
        let bi = eng.node(ci).b;
        if eng.truth_value(bi) == Some(false) {
            eng.set_truth(b, false)?;
        }
        if eng.truth_value(b) == Some(true) {
            eng.set_truth(bi, true)?;
        }
    }

    let v = eng.truth_value(b);
    let v1 = eng.truth_value(b1);
    let v2 = eng.truth_value(b2);
    let cf = eng.flag_present(ctrl, ControlFlag::ChkFalse);
    let ct = eng.flag_present(ctrl, ControlFlag::ChkTrue);

    // Control rules.
    if v == Some(true) && v1.is_none() && v2.is_none() && !eng.fired(n, F_ASSERT_EMIT) {
        // Asserted disjunction: watch both parts for refutation.
        eng.set_fired(n, F_ASSERT_EMIT);
        let (s1, s2) = (eng.node_ctrl(c1), eng.node_ctrl(c2));
        eng.emit_flag(n, s1, ControlFlag::ChkFalse);
        eng.emit_flag(n, s2, ControlFlag::ChkFalse);
    }
    if v1 == Some(false) && !eng.fired(n, F_LINK_C2) {
        // First part gone: the remaining part stands in for the disjunction,
        // so our queries, present and future, flow to it.
        eng.set_fired(n, F_LINK_C2);
        let s2 = eng.node_ctrl(c2);
        eng.link_forward(ctrl, s2)
            .expect("forwarding cycle in decomposition");
    }
    if v2 == Some(false) && !eng.fired(n, F_LINK_C1) {
        eng.set_fired(n, F_LINK_C1);
        let s1 = eng.node_ctrl(c1);
        eng.link_forward(ctrl, s1)
            .expect("forwarding cycle in decomposition");
    }
    if v1 == Some(true) && !eng.fired(n, F_IR_C2) {
        // Disjunction settled by the first part: release the second.
        eng.set_fired(n, F_IR_C2);
        let s2 = eng.node_ctrl(c2);
        eng.mark_irrelevant(s2);
    }
    if v2 == Some(true) && !eng.fired(n, F_IR_C1) {
        eng.set_fired(n, F_IR_C1);
        let s1 = eng.node_ctrl(c1);
        eng.mark_irrelevant(s1);
    }
    if cf && v.is_none() && v1.is_none() && v2.is_none() && !eng.fired(n, F_ROUTE_FIRST) {
        // Falsity query: it suffices to watch the first part; if that part is
        // refuted, the forwarding link repairs the watch.
        eng.set_fired(n, F_ROUTE_FIRST);
        let s1 = eng.node_ctrl(c1);
        eng.emit_flag(n, s1, ControlFlag::ChkFalse);
    }
    if ct && v.is_none() && v1.is_none() && v2.is_none() && !eng.fired(n, F_SPREAD_BOTH) {
        // Truth query: either part may settle it.
        eng.set_fired(n, F_SPREAD_BOTH);
        let (s1, s2) = (eng.node_ctrl(c1), eng.node_ctrl(c2));
        eng.emit_flag(n, s1, ControlFlag::ChkTrue);
        eng.emit_flag(n, s2, ControlFlag::ChkTrue);
    }
    if let Some(ci) = implied {
        // Once either part is refuted, the survivor subsumes the implied
        // part, which is thereby released.
        if (v1 == Some(false) || v2 == Some(false)) && !eng.fired(n, F_IMPL_IR) {
            eng.set_fired(n, F_IMPL_IR);
            let si = eng.node_ctrl(ci);
            eng.mark_irrelevant(si);
        }
    }

    // Truth rules, on fresh values.
    if eng.truth_value(b1) == Some(false) {
        eng.unify_truth(b, b2)?;
    }
    if eng.truth_value(b2) == Some(false) {
        eng.unify_truth(b, b1)?;
    }
    if eng.truth_value(b1) == Some(true) || eng.truth_value(b2) == Some(true) {
        eng.set_truth(b, true)?;
    }
    if eng.truth_value(b) == Some(false) {
        eng.set_truth(b1, false)?;
        eng.set_truth(b2, false)?;
    }

    // Any part with known truth resolves the disjunction's remaining work
    // into simpler constraints; the node itself retires.
    if eng.truth_value(b1).is_some() || eng.truth_value(b2).is_some() {
        eng.delete_constraint(n);
    }
    Ok(())
}

fn step_and(eng: &mut Engine, n: NodeId, c1: NodeId, c2: NodeId) -> PropResult<()> {
    let node = eng.node(n);
    let (b, ctrl) = (node.b, node.ctrl);
    let (b1, b2) = (eng.node(c1).b, eng.node(c2).b);

    let v = eng.truth_value(b);
    let v1 = eng.truth_value(b1);
    let v2 = eng.truth_value(b2);
    let cf = eng.flag_present(ctrl, ControlFlag::ChkFalse);
    let ct = eng.flag_present(ctrl, ControlFlag::ChkTrue);

    // Control rules — the dual of the disjunction.
    if v == Some(false) && v1.is_none() && v2.is_none() && !eng.fired(n, F_ASSERT_EMIT) {
        // Denied conjunction: if either part turns out to hold, the other
        // must fail, so watch both for truth.
        eng.set_fired(n, F_ASSERT_EMIT);
        let (s1, s2) = (eng.node_ctrl(c1), eng.node_ctrl(c2));
        eng.emit_flag(n, s1, ControlFlag::ChkTrue);
        eng.emit_flag(n, s2, ControlFlag::ChkTrue);
    }
    if v1 == Some(true) && !eng.fired(n, F_LINK_C2) {
        eng.set_fired(n, F_LINK_C2);
        let s2 = eng.node_ctrl(c2);
        eng.link_forward(ctrl, s2)
            .expect("forwarding cycle in decomposition");
    }
    if v2 == Some(true) && !eng.fired(n, F_LINK_C1) {
        eng.set_fired(n, F_LINK_C1);
        let s1 = eng.node_ctrl(c1);
        eng.link_forward(ctrl, s1)
            .expect("forwarding cycle in decomposition");
    }
    if v1 == Some(false) && !eng.fired(n, F_IR_C2) {
        eng.set_fired(n, F_IR_C2);
        let s2 = eng.node_ctrl(c2);
        eng.mark_irrelevant(s2);
    }
    if v2 == Some(false) && !eng.fired(n, F_IR_C1) {
        eng.set_fired(n, F_IR_C1);
        let s1 = eng.node_ctrl(c1);
        eng.mark_irrelevant(s1);
    }
    if ct && v.is_none() && v1.is_none() && v2.is_none() && !eng.fired(n, F_ROUTE_FIRST) {
        // Truth query: the first part must hold anyway; watch it alone and
        // let the forwarding link move on to the second when it settles.
        eng.set_fired(n, F_ROUTE_FIRST);
        let s1 = eng.node_ctrl(c1);
        eng.emit_flag(n, s1, ControlFlag::ChkTrue);
    }
    if cf && v.is_none() && v1.is_none() && v2.is_none() && !eng.fired(n, F_SPREAD_BOTH) {
        // Falsity query: either part failing refutes the conjunction.
        eng.set_fired(n, F_SPREAD_BOTH);
        let (s1, s2) = (eng.node_ctrl(c1), eng.node_ctrl(c2));
        eng.emit_flag(n, s1, ControlFlag::ChkFalse);
        eng.emit_flag(n, s2, ControlFlag::ChkFalse);
    }

    // Truth rules.
    if eng.truth_value(b1) == Some(true) {
        eng.unify_truth(b, b2)?;
    }
    if eng.truth_value(b2) == Some(true) {
        eng.unify_truth(b, b1)?;
    }
    if eng.truth_value(b1) == Some(false) || eng.truth_value(b2) == Some(false) {
        eng.set_truth(b, false)?;
    }
    if eng.truth_value(b) == Some(true) {
        eng.set_truth(b1, true)?;
        eng.set_truth(b2, true)?;
    }

    if eng.truth_value(b1).is_some() || eng.truth_value(b2).is_some() {
        eng.delete_constraint(n);
    }
    Ok(())
}

fn step_not(eng: &mut Engine, n: NodeId, c: NodeId) -> PropResult<()> {
    let node = eng.node(n);
    let (b, ctrl) = (node.b, node.ctrl);
    let bc = eng.node(c).b;
    let cf = eng.flag_present(ctrl, ControlFlag::ChkFalse);
    let ct = eng.flag_present(ctrl, ControlFlag::ChkTrue);

    if cf && !eng.fired(n, F_NOT_CT) {
        eng.set_fired(n, F_NOT_CT);
        let s = eng.node_ctrl(c);
        eng.emit_flag(n, s, ControlFlag::ChkTrue);
    }
    if ct && !eng.fired(n, F_NOT_CF) {
        eng.set_fired(n, F_NOT_CF);
        let s = eng.node_ctrl(c);
        eng.emit_flag(n, s, ControlFlag::ChkFalse);
    }

    if let Some(x) = eng.truth_value(b) {
        eng.set_truth(bc, !x)?;
    }
    if let Some(xc) = eng.truth_value(bc) {
        eng.set_truth(b, !xc)?;
    }
    if eng.truth_value(b).is_some() || eng.truth_value(bc).is_some() {
        eng.delete_constraint(n);
    }
    Ok(())
}

fn step_prim(eng: &mut Engine, n: NodeId, kind: &PrimitiveKind) -> PropResult<()> {
    let node = eng.node(n);
    let (b, ctrl) = (node.b, node.ctrl);
    match eng.truth_value(b) {
        Some(pos) => {
            if pos && eng.tracing && !eng.fired(n, F_LABELLED) {
                eng.set_fired(n, F_LABELLED);
                let label = kind.render(&|v| eng.var_name(v).to_string());
                eng.last_asserted = label;
            }
            enforce_fixpoint(eng, kind, pos)?;
            let (decided, refuted) = enforced_status(eng, kind, pos);
            if refuted {
                return Err(Inconsistency);
            }
            if decided {
                eng.delete_constraint(n);
            } else {
                ensure_watch(eng, n, kind, enforce_mask(kind, pos));
            }
        }
        None => {
            let cf = eng.flag_present(ctrl, ControlFlag::ChkFalse);
            let ct = eng.flag_present(ctrl, ControlFlag::ChkTrue);
            if !cf && !ct {
                return Ok(());
            }
            if cf {
                eng.counters.queries_evaluated += 1;
                if kind.falsity_decided(|v| eng.domain(v)) {
                    if eng.tracing {
                        eng.emit_trace_block();
                    }
                    eng.set_truth(b, false)?;
                    eng.delete_constraint(n);
                    return Ok(());
                }
                ensure_watch(eng, n, kind, query_falsity_mask(kind));
            }
            if ct {
                eng.counters.queries_evaluated += 1;
                if kind.truth_decided(|v| eng.domain(v)) {
                    eng.set_truth(b, true)?;
                    eng.delete_constraint(n);
                    return Ok(());
                }
                ensure_watch(eng, n, kind, query_truth_mask(kind));
            }
        }
    }
    Ok(())
}

/// Both queries of an enforced primitive, read after enforcement: whether the
/// imposed value is now entailed (the node may deregister) and whether the
/// opposite value is. The latter is a contradiction the enforcement rules can
/// miss when the primitive relates a variable to itself, e.g. `x<x`.
/// Runs the enforcement rules until they stop narrowing domains. One pass
/// settles a primitive over distinct variables, but a self-referential one
/// (e.g. `x<x`) narrows its own inputs and must be re-applied.
fn enforce_fixpoint(eng: &mut Engine, kind: &PrimitiveKind, pos: bool) -> PropResult<()> {
    loop {
        let before = eng.counters.domain_mutations;
        enforce(eng, kind, pos)?;
        if eng.counters.domain_mutations == before {
            return Ok(());
        }
    }
}

fn enforced_status(eng: &Engine, kind: &PrimitiveKind, pos: bool) -> (bool, bool) {
    let truth = kind.truth_decided(|v| eng.domain(v));
    let falsity = kind.falsity_decided(|v| eng.domain(v));
    if pos {
        (truth, falsity)
    } else {
        (falsity, truth)
    }
}

/// Widens the node's variable suspensions to cover `mask`, adding watcher
/// entries only for the newly needed event kinds.
fn ensure_watch(eng: &mut Engine, n: NodeId, kind: &PrimitiveKind, mask: EventMask) {
    let delta = eng.widen_watch_mask(n, mask);
    if delta.is_empty() {
        return;
    }
    for v in kind.vars() {
        eng.watch_var(n, v, delta);
    }
}

/// Events that can advance enforcement of an asserted (`pos`) or denied
/// primitive.
fn enforce_mask(kind: &PrimitiveKind, pos: bool) -> EventMask {
    match kind {
        PrimitiveKind::Leq(..) | PrimitiveKind::Lt(..) => EventMask::BOUNDS,
        PrimitiveKind::Eq(..) => {
            if pos {
                EventMask::ANY
            } else {
                EventMask::INSTANTIATED
            }
        }
        PrimitiveKind::Neq(..) => {
            if pos {
                EventMask::INSTANTIATED
            } else {
                EventMask::ANY
            }
        }
        PrimitiveKind::EqConst(..) | PrimitiveKind::Member(..) => EventMask::ANY,
    }
}

/// Events that can change the answer of the falsity query.
fn query_falsity_mask(kind: &PrimitiveKind) -> EventMask {
    match kind {
        PrimitiveKind::Leq(..) | PrimitiveKind::Lt(..) => EventMask::BOUNDS,
        PrimitiveKind::Eq(..) => EventMask::ANY,
        PrimitiveKind::Neq(..) => EventMask::INSTANTIATED,
        PrimitiveKind::EqConst(..) | PrimitiveKind::Member(..) => EventMask::ANY,
    }
}

/// Events that can change the answer of the truth query.
fn query_truth_mask(kind: &PrimitiveKind) -> EventMask {
    match kind {
        PrimitiveKind::Leq(..) | PrimitiveKind::Lt(..) => EventMask::BOUNDS,
        PrimitiveKind::Eq(..) => EventMask::INSTANTIATED,
        PrimitiveKind::Neq(..) => EventMask::ANY,
        PrimitiveKind::EqConst(..) | PrimitiveKind::Member(..) => EventMask::ANY,
    }
}

/// Domain-complete enforcement of a primitive with known truth value.
fn enforce(eng: &mut Engine, kind: &PrimitiveKind, pos: bool) -> PropResult<()> {
    match (kind, pos) {
        (PrimitiveKind::Leq(x, y), true) => {
            let hi = eng.domain(*y).max();
            eng.tighten_max(*x, hi)?;
            let lo = eng.domain(*x).min();
            eng.tighten_min(*y, lo)
        }
        (PrimitiveKind::Leq(x, y), false) => {
            // x > y
            let lo = eng.domain(*y).min();
            eng.tighten_min(*x, lo + 1)?;
            let hi = eng.domain(*x).max();
            eng.tighten_max(*y, hi - 1)
        }
        (PrimitiveKind::Lt(x, y), true) => {
            let hi = eng.domain(*y).max();
            eng.tighten_max(*x, hi - 1)?;
            let lo = eng.domain(*x).min();
            eng.tighten_min(*y, lo + 1)
        }
        (PrimitiveKind::Lt(x, y), false) => {
            // x >= y
            let lo = eng.domain(*y).min();
            eng.tighten_min(*x, lo)?;
            let hi = eng.domain(*x).max();
            eng.tighten_max(*y, hi)
        }
        (PrimitiveKind::Eq(x, y), true) => {
            let dy = eng.domain(*y).clone();
            eng.retain(*x, |v| dy.contains(v))?;
            let dx = eng.domain(*x).clone();
            eng.retain(*y, |v| dx.contains(v))
        }
        (PrimitiveKind::Eq(x, y), false) | (PrimitiveKind::Neq(x, y), true) => {
            if eng.domain(*x).is_singleton() {
                let v = eng.domain(*x).value();
                eng.remove_value(*y, v)?;
            }
            if eng.domain(*y).is_singleton() {
                let v = eng.domain(*y).value();
                eng.remove_value(*x, v)?;
            }
            Ok(())
        }
        (PrimitiveKind::Neq(x, y), false) => {
            let dy = eng.domain(*y).clone();
            eng.retain(*x, |v| dy.contains(v))?;
            let dx = eng.domain(*x).clone();
            eng.retain(*y, |v| dx.contains(v))
        }
        (PrimitiveKind::EqConst(x, a), true) => eng.assign(*x, *a),
        (PrimitiveKind::EqConst(x, a), false) => eng.remove_value(*x, *a),
        (PrimitiveKind::Member(x, s), true) => eng.retain(*x, |v| s.contains(&v)),
        (PrimitiveKind::Member(x, s), false) => eng.retain(*x, |v| !s.contains(&v)),
    }
}

/// Suspension mask for the eager baseline, where every primitive keeps both
/// of its queries live from the start.
pub(crate) fn eager_watch_mask(kind: &PrimitiveKind) -> EventMask {
    match kind {
        PrimitiveKind::Leq(..) | PrimitiveKind::Lt(..) => EventMask::BOUNDS,
        _ => EventMask::ANY,
    }
}

pub(crate) fn step_uncontrolled(eng: &mut Engine, n: NodeId) -> PropResult<()> {
    match eng.node(n).body.clone() {
        NodeBody::Prim(kind) => {
            let b = eng.node(n).b;
            match eng.truth_value(b) {
                Some(pos) => {
                    enforce_fixpoint(eng, &kind, pos)?;
                    let (decided, refuted) = enforced_status(eng, &kind, pos);
                    if refuted {
                        return Err(Inconsistency);
                    }
                    if decided {
                        eng.delete_constraint(n);
                    }
                }
                None => {
                    eng.counters.queries_evaluated += 1;
                    if kind.truth_decided(|v| eng.domain(v)) {
                        eng.set_truth(b, true)?;
                    } else {
                        eng.counters.queries_evaluated += 1;
                        if kind.falsity_decided(|v| eng.domain(v)) {
                            eng.set_truth(b, false)?;
                        }
                    }
                }
            }
            Ok(())
        }
        NodeBody::True => {
            let b = eng.node(n).b;
            eng.set_truth(b, true)?;
            eng.delete_constraint(n);
            Ok(())
        }
        NodeBody::Or { c1, c2 } => {
            let b = eng.node(n).b;
            let (b1, b2) = (eng.node(c1).b, eng.node(c2).b);
            if eng.truth_value(b1) == Some(false) {
                eng.unify_truth(b, b2)?;
            }
            if eng.truth_value(b2) == Some(false) {
                eng.unify_truth(b, b1)?;
            }
            if eng.truth_value(b1) == Some(true) || eng.truth_value(b2) == Some(true) {
                eng.set_truth(b, true)?;
            }
            if eng.truth_value(b) == Some(false) {
                eng.set_truth(b1, false)?;
                eng.set_truth(b2, false)?;
            }
            Ok(())
        }
        NodeBody::And { c1, c2 } => {
            let b = eng.node(n).b;
            let (b1, b2) = (eng.node(c1).b, eng.node(c2).b);
            if eng.truth_value(b1) == Some(true) {
                eng.unify_truth(b, b2)?;
            }
            if eng.truth_value(b2) == Some(true) {
                eng.unify_truth(b, b1)?;
            }
            if eng.truth_value(b1) == Some(false) || eng.truth_value(b2) == Some(false) {
                eng.set_truth(b, false)?;
            }
            if eng.truth_value(b) == Some(true) {
                eng.set_truth(b1, true)?;
                eng.set_truth(b2, true)?;
            }
            Ok(())
        }
        NodeBody::Not { c } => {
            let b = eng.node(n).b;
            let bc = eng.node(c).b;
            if let Some(x) = eng.truth_value(b) {
                eng.set_truth(bc, !x)?;
            }
            if let Some(xc) = eng.truth_value(bc) {
                eng.set_truth(b, !xc)?;
            }
            Ok(())
        }
        NodeBody::Unexpanded | NodeBody::OrImplied { .. } => {
            unreachable!("eager materialization leaves no unexpanded or annotated nodes")
        }
    }
}
