//! The propagation engine: variable store, trailed control and truth state,
//! suspension lists, the agenda, and the fixpoint loop.
//!
//! Everything mutable inside a search frame is recorded on a single trail so
//! that `pop_frame` restores the engine exactly to its state at `push_frame`.
//! Constraint rule application lives in [`crate::constraints`]; this module
//! provides the stores those rules operate on.

use std::collections::VecDeque;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::domain::{EventMask, FiniteDomain, VarId};
use crate::error::{Inconsistency, ModelError, PropResult};
use crate::expr::{Expr, ExprDag, ExprId, PrimitiveKind};
use crate::trace::TraceBlock;

/// A control flag communicated between constraints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ControlFlag {
    /// The falsity of the constraint is queried.
    ChkFalse,
    /// The truth of the constraint is queried.
    ChkTrue,
    /// The constraint is permanently irrelevant until the next backtrack.
    Irrelevant,
}

impl ControlFlag {
    pub const ALL: [ControlFlag; 3] = [
        ControlFlag::ChkFalse,
        ControlFlag::ChkTrue,
        ControlFlag::Irrelevant,
    ];

    fn idx(self) -> usize {
        match self {
            ControlFlag::ChkFalse => 0,
            ControlFlag::ChkTrue => 1,
            ControlFlag::Irrelevant => 2,
        }
    }
}

/// Handle to a trailed multiset of control flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CtrlId(u32);

impl CtrlId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Handle to a truth variable (the `b` of a reified constraint).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TruthId(u32);

impl TruthId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Handle to a registered constraint node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Token returned by `push_frame`, consumed by `pop_frame`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameId {
    serial: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum TruthCell {
    Unknown,
    Known(bool),
    /// This variable has been merged with another (from a `b = b2` rule);
    /// reads and writes follow the alias chain.
    Alias(TruthId),
}

#[derive(Debug, Default)]
struct CtrlSet {
    counts: [u32; 3],
    forwards: Vec<CtrlId>,
    watchers: Vec<NodeId>,
}

#[derive(Debug)]
struct TruthSlot {
    cell: TruthCell,
    watchers: Vec<NodeId>,
}

#[derive(Debug)]
struct VarSlot {
    dom: FiniteDomain,
    name: String,
    watchers: Vec<(NodeId, EventMask)>,
    saved_serial: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum NodeBody {
    Prim(PrimitiveKind),
    True,
    /// A composite template whose decomposition has not been triggered yet.
    Unexpanded,
    Or {
        c1: NodeId,
        c2: NodeId,
    },
    And {
        c1: NodeId,
        c2: NodeId,
    },
    Not {
        c: NodeId,
    },
    OrImplied {
        c1: NodeId,
        c2: NodeId,
        ci: NodeId,
    },
}

impl NodeBody {
    fn discriminant(&self) -> u8 {
        match self {
            NodeBody::Prim(_) => 0,
            NodeBody::True => 1,
            NodeBody::Unexpanded => 2,
            NodeBody::Or { .. } => 3,
            NodeBody::And { .. } => 4,
            NodeBody::Not { .. } => 5,
            NodeBody::OrImplied { .. } => 6,
        }
    }

    pub(crate) fn is_expanded_bool(&self) -> bool {
        matches!(
            self,
            NodeBody::Or { .. }
                | NodeBody::And { .. }
                | NodeBody::Not { .. }
                | NodeBody::OrImplied { .. }
        )
    }
}

// Fired-rule bits; each one-shot rule of a node burns one bit.
pub(crate) const F_ASSERT_EMIT: u32 = 1 << 0; // or: b=1 -> cf both; and: b=0 -> ct both
pub(crate) const F_LINK_C2: u32 = 1 << 1;
pub(crate) const F_LINK_C1: u32 = 1 << 2;
pub(crate) const F_IR_C2: u32 = 1 << 3;
pub(crate) const F_IR_C1: u32 = 1 << 4;
pub(crate) const F_ROUTE_FIRST: u32 = 1 << 5; // or: cf -> c1; and: ct -> c1
pub(crate) const F_SPREAD_BOTH: u32 = 1 << 6; // or: ct -> both; and: cf -> both
pub(crate) const F_IMPL_IR: u32 = 1 << 7;
pub(crate) const F_IR_CASCADE: u32 = 1 << 8;
pub(crate) const F_NOT_CT: u32 = 1 << 9;
pub(crate) const F_NOT_CF: u32 = 1 << 10;
pub(crate) const F_LABELLED: u32 = 1 << 11;
// Withdrawable emissions; cleared when a deregistered shared node is revived.
const F_EMISSION_MASK: u32 = F_ASSERT_EMIT | F_ROUTE_FIRST | F_SPREAD_BOTH;

#[derive(Debug)]
pub(crate) struct Node {
    pub(crate) expr: ExprId,
    pub(crate) body: NodeBody,
    pub(crate) b: TruthId,
    pub(crate) ctrl: CtrlId,
    pub(crate) ref_count: u32,
    pub(crate) active: bool,
    pub(crate) fired: u32,
    pub(crate) watch_mask: u8,
    pub(crate) emissions: Vec<(CtrlId, ControlFlag)>,
    agenda_class: Option<u8>,
}

/// Instrumentation counters; monotone within a run, not trailed.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct Counters {
    pub propagator_activations: u64,
    pub queries_evaluated: u64,
    pub constraints_created: u64,
    pub constraints_deleted: u64,
    pub domain_mutations: u64,
    pub search_nodes: u64,
    pub backtracks: u64,
    pub chk_true_created: u64,
}

/// Which propagation discipline the engine uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Relevance-gated lazy decomposition with control flags.
    Controlled,
    /// Eager full decomposition; every reified part queried both ways.
    Uncontrolled,
}

#[derive(Debug)]
enum Undo {
    Domain {
        var: VarId,
        saved: FiniteDomain,
    },
    VarCreated,
    VarWatchPush {
        var: VarId,
    },
    TruthCreated,
    TruthValue {
        id: TruthId,
        prev: TruthCell,
    },
    TruthWatchPush {
        id: TruthId,
    },
    TruthWatchTrunc {
        id: TruthId,
        len: usize,
    },
    CtrlCreated,
    CtrlCount {
        id: CtrlId,
        flag: ControlFlag,
        delta: i8,
    },
    CtrlForwardPush {
        id: CtrlId,
    },
    CtrlWatchPush {
        id: CtrlId,
    },
    NodeCreated,
    NodeActive {
        id: NodeId,
        prev: bool,
    },
    NodeFired {
        id: NodeId,
        prev: u32,
    },
    NodeRefCount {
        id: NodeId,
        prev: u32,
    },
    NodeBody {
        id: NodeId,
        prev: NodeBody,
    },
    NodeWatchMask {
        id: NodeId,
        prev: u8,
    },
    NodeEmissionPush {
        id: NodeId,
    },
}

/// Full structural snapshot of the reversible engine state, for undo-law
/// checking in tests. Counters are excluded (instrumentation only).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snapshot {
    domains: Vec<Vec<i64>>,
    var_watch: Vec<Vec<(u32, u8)>>,
    truth: Vec<(TruthCellRepr, Vec<u32>)>,
    ctrl: Vec<([u32; 3], Vec<u32>, Vec<u32>)>,
    nodes: Vec<(bool, u32, u32, u8, usize, u8)>,
    bindings: Vec<Option<u32>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TruthCellRepr {
    Unknown,
    Known(bool),
    Alias(u32),
}

pub struct Engine {
    pub(crate) mode: Mode,
    pub(crate) dag: ExprDag,
    vars: Vec<VarSlot>,
    truth: Vec<TruthSlot>,
    ctrl: Vec<CtrlSet>,
    pub(crate) nodes: Vec<Node>,
    binding: Vec<Option<NodeId>>,
    trail: Vec<Undo>,
    frames: Vec<(usize, u64)>,
    frame_serial: u64,
    agenda: [VecDeque<NodeId>; 3],
    shuffle: Option<ChaCha8Rng>,
    pub counters: Counters,
    pub(crate) tracing: bool,
    pub(crate) trace_blocks: Vec<TraceBlock>,
    pub(crate) last_asserted: String,
}

impl Engine {
    pub fn new(mode: Mode) -> Engine {
        Engine {
            mode,
            dag: ExprDag::new(),
            vars: Vec::new(),
            truth: Vec::new(),
            ctrl: Vec::new(),
            nodes: Vec::new(),
            binding: Vec::new(),
            trail: Vec::new(),
            frames: Vec::new(),
            frame_serial: 0,
            agenda: [VecDeque::new(), VecDeque::new(), VecDeque::new()],
            shuffle: None,
            counters: Counters::default(),
            tracing: false,
            trace_blocks: Vec::new(),
            last_asserted: String::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn dag(&self) -> &ExprDag {
        &self.dag
    }

    pub fn dag_mut(&mut self) -> &mut ExprDag {
        &mut self.dag
    }

    /// Test hook: process agenda entries in a seeded random order instead of
    /// the priority order, to exercise fixpoint confluence.
    pub fn set_agenda_shuffle(&mut self, seed: u64) {
        self.shuffle = Some(ChaCha8Rng::seed_from_u64(seed));
    }

    // ------------------------------------------------------------------
    // Variables and domains
    // ------------------------------------------------------------------

    pub fn new_int_var(
        &mut self,
        dom: Option<FiniteDomain>,
        name: impl Into<String>,
    ) -> Result<VarId, ModelError> {
        let dom = dom.ok_or(ModelError::EmptyDomain)?;
        self.vars.push(VarSlot {
            dom,
            name: name.into(),
            watchers: Vec::new(),
            saved_serial: 0,
        });
        self.record(Undo::VarCreated);
        Ok(VarId(self.vars.len() as u32 - 1))
    }

    pub fn var_count(&self) -> usize {
        self.vars.len()
    }

    pub fn all_vars(&self) -> impl Iterator<Item = VarId> {
        (0..self.vars.len() as u32).map(VarId)
    }

    pub fn domain(&self, var: VarId) -> &FiniteDomain {
        &self.vars[var.index()].dom
    }

    pub fn var_name(&self, var: VarId) -> &str {
        &self.vars[var.index()].name
    }

    fn in_frame(&self) -> bool {
        !self.frames.is_empty()
    }

    fn record(&mut self, undo: Undo) {
        if self.in_frame() {
            self.trail.push(undo);
        }
    }

    fn save_domain(&mut self, var: VarId) {
        if !self.in_frame() {
            return;
        }
        let serial = self.frames.last().unwrap().1;
        let slot = &mut self.vars[var.index()];
        if slot.saved_serial != serial {
            slot.saved_serial = serial;
            let saved = slot.dom.clone();
            self.trail.push(Undo::Domain { var, saved });
        }
    }

    fn mutate_domain(
        &mut self,
        var: VarId,
        f: impl FnOnce(&mut FiniteDomain) -> PropResult<EventMask>,
    ) -> PropResult<()> {
        self.save_domain(var);
        let ev = f(&mut self.vars[var.index()].dom)?;
        if !ev.is_empty() {
            self.counters.domain_mutations += 1;
            self.wake_var_watchers(var, ev);
        }
        Ok(())
    }

    pub fn remove_value(&mut self, var: VarId, v: i64) -> PropResult<()> {
        self.mutate_domain(var, |d| d.remove(v))
    }

    pub fn tighten_min(&mut self, var: VarId, lb: i64) -> PropResult<()> {
        self.mutate_domain(var, |d| d.tighten_min(lb))
    }

    pub fn tighten_max(&mut self, var: VarId, ub: i64) -> PropResult<()> {
        self.mutate_domain(var, |d| d.tighten_max(ub))
    }

    pub fn assign(&mut self, var: VarId, v: i64) -> PropResult<()> {
        self.mutate_domain(var, |d| d.assign(v))
    }

    pub fn retain(&mut self, var: VarId, keep: impl Fn(i64) -> bool) -> PropResult<()> {
        self.mutate_domain(var, |d| d.retain(keep))
    }

    fn wake_var_watchers(&mut self, var: VarId, ev: EventMask) {
        let len = self.vars[var.index()].watchers.len();
        for i in 0..len {
            let (n, mask) = self.vars[var.index()].watchers[i];
            if ev.contains(mask) {
                self.enqueue(n);
            }
        }
    }

    pub(crate) fn watch_var(&mut self, n: NodeId, var: VarId, mask: EventMask) {
        self.vars[var.index()].watchers.push((n, mask));
        self.record(Undo::VarWatchPush { var });
    }

    // ------------------------------------------------------------------
    // Truth variables
    // ------------------------------------------------------------------

    pub(crate) fn new_truth_var(&mut self) -> TruthId {
        self.truth.push(TruthSlot {
            cell: TruthCell::Unknown,
            watchers: Vec::new(),
        });
        self.record(Undo::TruthCreated);
        TruthId(self.truth.len() as u32 - 1)
    }

    pub(crate) fn resolve_truth(&self, t: TruthId) -> (TruthId, Option<bool>) {
        let mut cur = t;
        loop {
            match self.truth[cur.index()].cell {
                TruthCell::Alias(next) => cur = next,
                TruthCell::Known(v) => return (cur, Some(v)),
                TruthCell::Unknown => return (cur, None),
            }
        }
    }

    /// Current value of a truth variable, `None` while unknown.
    pub fn truth_value(&self, t: TruthId) -> Option<bool> {
        self.resolve_truth(t).1
    }

    pub(crate) fn set_truth(&mut self, t: TruthId, v: bool) -> PropResult<()> {
        let (root, val) = self.resolve_truth(t);
        match val {
            Some(w) if w == v => Ok(()),
            Some(_) => Err(Inconsistency),
            None => {
                self.record(Undo::TruthValue {
                    id: root,
                    prev: TruthCell::Unknown,
                });
                self.truth[root.index()].cell = TruthCell::Known(v);
                self.wake_truth_watchers(root);
                Ok(())
            }
        }
    }

    /// Asserts `a = b` over truth variables; merges them when both are still
    /// unknown so that a later fix of either propagates to the other.
    pub(crate) fn unify_truth(&mut self, a: TruthId, b: TruthId) -> PropResult<()> {
        let (ra, va) = self.resolve_truth(a);
        let (rb, vb) = self.resolve_truth(b);
        if ra == rb {
            return Ok(());
        }
        match (va, vb) {
            (Some(x), Some(y)) => {
                if x == y {
                    Ok(())
                } else {
                    Err(Inconsistency)
                }
            }
            (Some(x), None) => self.set_truth(rb, x),
            (None, Some(y)) => self.set_truth(ra, y),
            (None, None) => {
                self.record(Undo::TruthValue {
                    id: ra,
                    prev: TruthCell::Unknown,
                });
                self.truth[ra.index()].cell = TruthCell::Alias(rb);
                let len = self.truth[rb.index()].watchers.len();
                self.record(Undo::TruthWatchTrunc { id: rb, len });
                let moved = self.truth[ra.index()].watchers.clone();
                self.truth[rb.index()].watchers.extend(moved);
                Ok(())
            }
        }
    }

    fn wake_truth_watchers(&mut self, root: TruthId) {
        let len = self.truth[root.index()].watchers.len();
        for i in 0..len {
            let n = self.truth[root.index()].watchers[i];
            self.enqueue(n);
        }
    }

    pub(crate) fn watch_truth(&mut self, n: NodeId, t: TruthId) {
        let (root, _) = self.resolve_truth(t);
        self.truth[root.index()].watchers.push(n);
        self.record(Undo::TruthWatchPush { id: root });
    }

    // ------------------------------------------------------------------
    // Control store
    // ------------------------------------------------------------------

    pub fn new_ctrl_set(&mut self) -> CtrlId {
        self.ctrl.push(CtrlSet::default());
        self.record(Undo::CtrlCreated);
        CtrlId(self.ctrl.len() as u32 - 1)
    }

    pub fn flag_count(&self, s: CtrlId, f: ControlFlag) -> u32 {
        self.ctrl[s.index()].counts[f.idx()]
    }

    pub fn flag_present(&self, s: CtrlId, f: ControlFlag) -> bool {
        self.flag_count(s, f) > 0
    }

    /// Adds one occurrence of `f`, replicating through forwarding links and
    /// waking constraints suspended on any touched set.
    pub fn add_flag(&mut self, s: CtrlId, f: ControlFlag) {
        self.record(Undo::CtrlCount {
            id: s,
            flag: f,
            delta: 1,
        });
        self.ctrl[s.index()].counts[f.idx()] += 1;
        if f == ControlFlag::ChkTrue {
            self.counters.chk_true_created += 1;
        }
        self.wake_ctrl_watchers(s);
        let fwd = self.ctrl[s.index()].forwards.clone();
        for t in fwd {
            self.add_flag(t, f);
        }
    }

    /// Removes one occurrence of `f`, replicating through forwards.
    /// Subtracting a flag that is not present is an engine bug.
    pub fn subtract_flag(&mut self, s: CtrlId, f: ControlFlag) {
        assert!(
            self.ctrl[s.index()].counts[f.idx()] > 0,
            "control flag count underflow"
        );
        self.record(Undo::CtrlCount {
            id: s,
            flag: f,
            delta: -1,
        });
        self.ctrl[s.index()].counts[f.idx()] -= 1;
        let fwd = self.ctrl[s.index()].forwards.clone();
        for t in fwd {
            self.subtract_flag(t, f);
        }
    }

    /// Establishes `src ⇝ dst`: future flag changes on `src` replicate to
    /// `dst`, and flags already present transfer now with their counts.
    pub fn link_forward(&mut self, src: CtrlId, dst: CtrlId) -> Result<(), ModelError> {
        if src == dst || self.forward_reaches(dst, src) {
            return Err(ModelError::ForwardCycle);
        }
        self.record(Undo::CtrlForwardPush { id: src });
        self.ctrl[src.index()].forwards.push(dst);
        for f in ControlFlag::ALL {
            let c = self.ctrl[src.index()].counts[f.idx()];
            for _ in 0..c {
                self.add_flag(dst, f);
            }
        }
        Ok(())
    }

    fn forward_reaches(&self, from: CtrlId, target: CtrlId) -> bool {
        if from == target {
            return true;
        }
        self.ctrl[from.index()]
            .forwards
            .iter()
            .any(|&next| self.forward_reaches(next, target))
    }

    pub fn mark_irrelevant(&mut self, s: CtrlId) {
        self.add_flag(s, ControlFlag::Irrelevant);
    }

    fn wake_ctrl_watchers(&mut self, s: CtrlId) {
        let len = self.ctrl[s.index()].watchers.len();
        for i in 0..len {
            let n = self.ctrl[s.index()].watchers[i];
            self.enqueue(n);
        }
    }

    fn watch_ctrl(&mut self, n: NodeId, s: CtrlId) {
        self.ctrl[s.index()].watchers.push(n);
        self.record(Undo::CtrlWatchPush { id: s });
    }

    // ------------------------------------------------------------------
    // Nodes
    // ------------------------------------------------------------------

    pub(crate) fn node(&self, n: NodeId) -> &Node {
        &self.nodes[n.index()]
    }

    pub fn node_truth(&self, n: NodeId) -> Option<bool> {
        self.truth_value(self.nodes[n.index()].b)
    }

    pub fn node_ctrl(&self, n: NodeId) -> CtrlId {
        self.nodes[n.index()].ctrl
    }

    pub fn node_active(&self, n: NodeId) -> bool {
        self.nodes[n.index()].active
    }

    pub(crate) fn set_fired(&mut self, n: NodeId, bit: u32) {
        let prev = self.nodes[n.index()].fired;
        if prev & bit == 0 {
            self.record(Undo::NodeFired { id: n, prev });
            self.nodes[n.index()].fired |= bit;
        }
    }

    pub(crate) fn fired(&self, n: NodeId, bit: u32) -> bool {
        self.nodes[n.index()].fired & bit != 0
    }

    pub(crate) fn set_body(&mut self, n: NodeId, body: NodeBody) {
        let prev = std::mem::replace(&mut self.nodes[n.index()].body, body);
        self.record(Undo::NodeBody { id: n, prev });
    }

    pub(crate) fn widen_watch_mask(&mut self, n: NodeId, mask: EventMask) -> EventMask {
        let prev = self.nodes[n.index()].watch_mask;
        let delta = mask.0 & !prev;
        if delta != 0 {
            self.record(Undo::NodeWatchMask { id: n, prev });
            self.nodes[n.index()].watch_mask |= delta;
        }
        EventMask(delta)
    }

    /// Adds one occurrence of `f` to `target` on behalf of node `n`. Queries
    /// (`chk-true`/`chk-false`) are recorded so they can be withdrawn when
    /// `n` is deleted; `irrelevant` is permanent for the frame.
    pub(crate) fn emit_flag(&mut self, n: NodeId, target: CtrlId, f: ControlFlag) {
        self.add_flag(target, f);
        if f != ControlFlag::Irrelevant {
            self.record(Undo::NodeEmissionPush { id: n });
            self.nodes[n.index()].emissions.push((target, f));
        }
    }

    /// Deregisters a node: it stops reacting to events and withdraws the
    /// queries it has issued. Reverted on backtracking.
    pub fn delete_constraint(&mut self, n: NodeId) {
        if !self.nodes[n.index()].active {
            return;
        }
        self.record(Undo::NodeActive { id: n, prev: true });
        self.nodes[n.index()].active = false;
        self.counters.constraints_deleted += 1;
        let emissions = self.nodes[n.index()].emissions.clone();
        for (s, f) in emissions {
            self.subtract_flag(s, f);
        }
    }

    /// Returns the runtime node for a template, creating it on first use and
    /// bumping the reference count on sharing. A node previously deleted
    /// through irrelevance is revived for the new parent.
    pub(crate) fn node_for_expr(&mut self, e: ExprId) -> NodeId {
        self.sync_binding_len();
        if let Some(n) = self.binding[e.index()] {
            self.bump_ref(n);
            self.revive_node(n);
            self.enqueue(n);
            return n;
        }
        let b = self.new_truth_var();
        let ctrl = self.new_ctrl_set();
        let body = match self.dag.get(e) {
            Expr::Prim(k) => NodeBody::Prim(k.clone()),
            Expr::True => NodeBody::True,
            _ => NodeBody::Unexpanded,
        };
        self.nodes.push(Node {
            expr: e,
            body,
            b,
            ctrl,
            ref_count: 1,
            active: true,
            fired: 0,
            watch_mask: 0,
            emissions: Vec::new(),
            agenda_class: None,
        });
        let n = NodeId(self.nodes.len() as u32 - 1);
        self.binding[e.index()] = Some(n);
        self.record(Undo::NodeCreated);
        self.counters.constraints_created += 1;
        self.watch_truth(n, b);
        self.watch_ctrl(n, ctrl);
        self.enqueue(n);
        n
    }

    fn sync_binding_len(&mut self) {
        if self.binding.len() < self.dag.len() {
            self.binding.resize(self.dag.len(), None);
        }
    }

    fn bump_ref(&mut self, n: NodeId) {
        let prev = self.nodes[n.index()].ref_count;
        self.record(Undo::NodeRefCount { id: n, prev });
        self.nodes[n.index()].ref_count = prev + 1;
    }

    /// Brings a deregistered node back for a new parent. Withdrawn queries
    /// may be re-issued, so their fired bits are cleared; if the node went
    /// away through an irrelevance cascade, the claims it released on its
    /// parts are compensated by re-referencing (and reviving) them.
    fn revive_node(&mut self, n: NodeId) {
        if self.nodes[n.index()].active {
            return;
        }
        self.record(Undo::NodeActive { id: n, prev: false });
        self.nodes[n.index()].active = true;
        let prev = self.nodes[n.index()].fired;
        self.record(Undo::NodeFired { id: n, prev });
        self.nodes[n.index()].fired = prev & !(F_EMISSION_MASK | F_IR_CASCADE);
        if prev & F_IR_CASCADE != 0 {
            for c in self.children_of(n) {
                self.bump_ref(c);
                self.revive_node(c);
                self.enqueue(c);
            }
        }
        self.enqueue(n);
    }

    fn children_of(&self, n: NodeId) -> Vec<NodeId> {
        match self.nodes[n.index()].body {
            NodeBody::Or { c1, c2 } | NodeBody::And { c1, c2 } => vec![c1, c2],
            NodeBody::OrImplied { c1, c2, ci } => vec![c1, c2, ci],
            NodeBody::Not { c } => vec![c],
            _ => Vec::new(),
        }
    }

    // ------------------------------------------------------------------
    // Posting
    // ------------------------------------------------------------------

    /// Registers a constraint expression with the given asserted truth value.
    /// Call `run_to_fixpoint` afterwards to propagate.
    pub fn post(&mut self, root: ExprId, value: bool) -> PropResult<NodeId> {
        let n = match self.mode {
            Mode::Controlled => self.node_for_expr(root),
            Mode::Uncontrolled => {
                let rewritten = self.dag.uncontrolled_form(root);
                self.materialize_eager(rewritten)
            }
        };
        let b = self.nodes[n.index()].b;
        self.set_truth(b, value)?;
        Ok(n)
    }

    fn materialize_eager(&mut self, e: ExprId) -> NodeId {
        self.sync_binding_len();
        if let Some(n) = self.binding[e.index()] {
            return n;
        }
        let expr = self.dag.get(e).clone();
        let body = match expr {
            Expr::Prim(k) => NodeBody::Prim(k),
            Expr::True => NodeBody::True,
            Expr::Or(a, b) => NodeBody::Or {
                c1: self.materialize_eager(a),
                c2: self.materialize_eager(b),
            },
            Expr::And(a, b) => NodeBody::And {
                c1: self.materialize_eager(a),
                c2: self.materialize_eager(b),
            },
            Expr::Not(a) => NodeBody::Not {
                c: self.materialize_eager(a),
            },
            Expr::OrImplied(..) => {
                unreachable!("implied annotations are rewritten before eager materialization")
            }
        };
        let b = self.new_truth_var();
        let ctrl = self.new_ctrl_set();
        self.nodes.push(Node {
            expr: e,
            body,
            b,
            ctrl,
            ref_count: 1,
            active: true,
            fired: 0,
            watch_mask: 0,
            emissions: Vec::new(),
            agenda_class: None,
        });
        let n = NodeId(self.nodes.len() as u32 - 1);
        self.sync_binding_len();
        self.binding[e.index()] = Some(n);
        self.record(Undo::NodeCreated);
        self.counters.constraints_created += 1;
        self.watch_truth(n, b);
        // Eager suspensions: booleans on their children's truth variables,
        // primitives on every change of their variables.
        match self.nodes[n.index()].body.clone() {
            NodeBody::Or { c1, c2 } | NodeBody::And { c1, c2 } => {
                let (b1, b2) = (self.nodes[c1.index()].b, self.nodes[c2.index()].b);
                self.watch_truth(n, b1);
                self.watch_truth(n, b2);
            }
            NodeBody::Not { c } => {
                let bc = self.nodes[c.index()].b;
                self.watch_truth(n, bc);
            }
            NodeBody::Prim(k) => {
                let mask = crate::constraints::eager_watch_mask(&k);
                for v in k.vars() {
                    self.watch_var(n, v, mask);
                }
            }
            _ => {}
        }
        self.enqueue(n);
        n
    }

    // ------------------------------------------------------------------
    // Agenda and fixpoint
    // ------------------------------------------------------------------

    fn class_of(&self, n: NodeId) -> u8 {
        let node = &self.nodes[n.index()];
        match node.body {
            NodeBody::Prim(_) | NodeBody::True => {
                if self.resolve_truth(node.b).1.is_some() {
                    1
                } else {
                    2
                }
            }
            _ => 0,
        }
    }

    pub(crate) fn enqueue(&mut self, n: NodeId) {
        if !self.nodes[n.index()].active {
            return;
        }
        let class = self.class_of(n);
        if self.nodes[n.index()].agenda_class == Some(class) {
            return;
        }
        self.nodes[n.index()].agenda_class = Some(class);
        self.agenda[class as usize].push_back(n);
    }

    fn pop_agenda(&mut self) -> Option<NodeId> {
        if self.shuffle.is_some() {
            return self.pop_agenda_shuffled();
        }
        for class in 0..3usize {
            while let Some(n) = self.agenda[class].pop_front() {
                if self.nodes[n.index()].agenda_class != Some(class as u8) {
                    continue; // stale entry
                }
                let current = self.class_of(n);
                if current != class as u8 {
                    self.nodes[n.index()].agenda_class = Some(current);
                    self.agenda[current as usize].push_back(n);
                    continue;
                }
                self.nodes[n.index()].agenda_class = None;
                if !self.nodes[n.index()].active {
                    continue;
                }
                return Some(n);
            }
        }
        None
    }

    fn pop_agenda_shuffled(&mut self) -> Option<NodeId> {
        loop {
            let total: usize = self.agenda.iter().map(|q| q.len()).sum();
            if total == 0 {
                return None;
            }
            let mut pick = self.shuffle.as_mut().unwrap().gen_range(0..total);
            let mut chosen = None;
            for class in 0..3usize {
                if pick < self.agenda[class].len() {
                    chosen = Some((class, self.agenda[class].remove(pick).unwrap()));
                    break;
                }
                pick -= self.agenda[class].len();
            }
            let (class, n) = chosen.unwrap();
            if self.nodes[n.index()].agenda_class != Some(class as u8) {
                continue;
            }
            self.nodes[n.index()].agenda_class = None;
            if !self.nodes[n.index()].active {
                continue;
            }
            return Some(n);
        }
    }

    fn clear_agenda(&mut self) {
        for class in 0..3usize {
            while let Some(n) = self.agenda[class].pop_front() {
                self.nodes[n.index()].agenda_class = None;
            }
        }
    }

    /// Runs the agenda until no registered constraint can infer anything
    /// further, or until inconsistency is detected.
    pub fn run_to_fixpoint(&mut self) -> PropResult<()> {
        if self.tracing && self.trace_blocks.is_empty() {
            self.emit_trace_block();
        }
        while let Some(n) = self.pop_agenda() {
            self.counters.propagator_activations += 1;
            if let Err(e) = self.activate(n) {
                self.clear_agenda();
                return Err(e);
            }
        }
        if self.tracing {
            self.emit_trace_block();
        }
        Ok(())
    }

    fn activate(&mut self, n: NodeId) -> PropResult<()> {
        if !self.nodes[n.index()].active {
            return Ok(());
        }
        match self.mode {
            Mode::Controlled => crate::constraints::step_controlled(self, n),
            Mode::Uncontrolled => crate::constraints::step_uncontrolled(self, n),
        }
    }

    // ------------------------------------------------------------------
    // Frames and the trail
    // ------------------------------------------------------------------

    pub fn push_frame(&mut self) -> FrameId {
        self.frame_serial += 1;
        self.frames.push((self.trail.len(), self.frame_serial));
        FrameId {
            serial: self.frame_serial,
        }
    }

    pub fn frame_depth(&self) -> usize {
        self.frames.len()
    }

    /// Restores all state mutated since the matching `push_frame`.
    pub fn pop_frame(&mut self, frame: FrameId) -> Result<(), ModelError> {
        let &(mark, serial) = self.frames.last().ok_or(ModelError::NotTopFrame)?;
        if serial != frame.serial {
            return Err(ModelError::NotTopFrame);
        }
        self.clear_agenda();
        while self.trail.len() > mark {
            let undo = self.trail.pop().unwrap();
            self.apply_undo(undo);
        }
        self.frames.pop();
        Ok(())
    }

    fn apply_undo(&mut self, undo: Undo) {
        match undo {
            Undo::Domain { var, saved } => self.vars[var.index()].dom = saved,
            Undo::VarCreated => {
                self.vars.pop();
            }
            Undo::VarWatchPush { var } => {
                self.vars[var.index()].watchers.pop();
            }
            Undo::TruthCreated => {
                self.truth.pop();
            }
            Undo::TruthValue { id, prev } => self.truth[id.index()].cell = prev,
            Undo::TruthWatchPush { id } => {
                self.truth[id.index()].watchers.pop();
            }
            Undo::TruthWatchTrunc { id, len } => self.truth[id.index()].watchers.truncate(len),
            Undo::CtrlCreated => {
                self.ctrl.pop();
            }
            Undo::CtrlCount { id, flag, delta } => {
                let c = &mut self.ctrl[id.index()].counts[flag.idx()];
                if delta > 0 {
                    *c -= 1;
                } else {
                    *c += 1;
                }
            }
            Undo::CtrlForwardPush { id } => {
                self.ctrl[id.index()].forwards.pop();
            }
            Undo::CtrlWatchPush { id } => {
                self.ctrl[id.index()].watchers.pop();
            }
            Undo::NodeCreated => {
                let node = self.nodes.pop().unwrap();
                self.binding[node.expr.index()] = None;
            }
            Undo::NodeActive { id, prev } => self.nodes[id.index()].active = prev,
            Undo::NodeFired { id, prev } => self.nodes[id.index()].fired = prev,
            Undo::NodeRefCount { id, prev } => self.nodes[id.index()].ref_count = prev,
            Undo::NodeBody { id, prev } => self.nodes[id.index()].body = prev,
            Undo::NodeWatchMask { id, prev } => self.nodes[id.index()].watch_mask = prev,
            Undo::NodeEmissionPush { id } => {
                self.nodes[id.index()].emissions.pop();
            }
        }
    }

    // ------------------------------------------------------------------
    // Introspection
    // ------------------------------------------------------------------

    /// Number of active primitive nodes matching `pred` whose truth is still
    /// open and whose control set holds a pending falsity query.
    pub fn pending_falsity_count(&self, pred: impl Fn(&PrimitiveKind) -> bool) -> usize {
        self.nodes
            .iter()
            .filter(|node| {
                node.active
                    && matches!(&node.body, NodeBody::Prim(k) if pred(k))
                    && self.resolve_truth(node.b).1.is_none()
                    && self.flag_present(node.ctrl, ControlFlag::ChkFalse)
            })
            .count()
    }

    /// Counts of materialized boolean connective nodes and primitive nodes.
    /// Unexpanded templates do not count as materialized.
    pub fn materialized_counts(&self) -> (usize, usize) {
        let mut bools = 0;
        let mut prims = 0;
        for node in &self.nodes {
            if node.body.is_expanded_bool() {
                bools += 1;
            } else if matches!(node.body, NodeBody::Prim(_)) {
                prims += 1;
            }
        }
        (bools, prims)
    }

    /// Counts primitive nodes matching `pred`, materialized at any point.
    pub fn primitive_count(&self, pred: impl Fn(&PrimitiveKind) -> bool) -> usize {
        self.nodes
            .iter()
            .filter(|node| matches!(&node.body, NodeBody::Prim(k) if pred(k)))
            .count()
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            domains: self.vars.iter().map(|v| v.dom.values()).collect(),
            var_watch: self
                .vars
                .iter()
                .map(|v| v.watchers.iter().map(|(n, m)| (n.0, m.0)).collect())
                .collect(),
            truth: self
                .truth
                .iter()
                .map(|t| {
                    let cell = match t.cell {
                        TruthCell::Unknown => TruthCellRepr::Unknown,
                        TruthCell::Known(v) => TruthCellRepr::Known(v),
                        TruthCell::Alias(a) => TruthCellRepr::Alias(a.0),
                    };
                    (cell, t.watchers.iter().map(|n| n.0).collect())
                })
                .collect(),
            ctrl: self
                .ctrl
                .iter()
                .map(|c| {
                    (
                        c.counts,
                        c.forwards.iter().map(|f| f.0).collect(),
                        c.watchers.iter().map(|n| n.0).collect(),
                    )
                })
                .collect(),
            nodes: self
                .nodes
                .iter()
                .map(|n| {
                    (
                        n.active,
                        n.fired,
                        n.ref_count,
                        n.watch_mask,
                        n.emissions.len(),
                        n.body.discriminant(),
                    )
                })
                .collect(),
            bindings: self.binding.iter().map(|b| b.map(|n| n.0)).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::FiniteDomain;

    fn eng() -> Engine {
        Engine::new(Mode::Controlled)
    }

    #[test]
    fn flag_counts_are_multisets() {
        let mut e = eng();
        let s = e.new_ctrl_set();
        e.add_flag(s, ControlFlag::ChkFalse);
        e.add_flag(s, ControlFlag::ChkFalse);
        assert_eq!(e.flag_count(s, ControlFlag::ChkFalse), 2);
        assert!(!e.flag_present(s, ControlFlag::ChkTrue));
        e.subtract_flag(s, ControlFlag::ChkFalse);
        assert_eq!(e.flag_count(s, ControlFlag::ChkFalse), 1);
    }

    #[test]
    #[should_panic(expected = "underflow")]
    fn subtracting_missing_flag_is_a_bug() {
        let mut e = eng();
        let s = e.new_ctrl_set();
        e.subtract_flag(s, ControlFlag::Irrelevant);
    }

    #[test]
    fn forwarding_replicates_present_and_future_flags() {
        let mut e = eng();
        let (s1, s2, s3) = (e.new_ctrl_set(), e.new_ctrl_set(), e.new_ctrl_set());
        e.add_flag(s1, ControlFlag::ChkFalse);
        e.link_forward(s1, s2).unwrap();
        // Flag already present transfers at link time.
        assert_eq!(e.flag_count(s2, ControlFlag::ChkFalse), 1);
        e.link_forward(s2, s3).unwrap();
        // Future additions flow transitively.
        e.add_flag(s1, ControlFlag::Irrelevant);
        assert_eq!(e.flag_count(s3, ControlFlag::Irrelevant), 1);
        // So do subtractions.
        e.subtract_flag(s1, ControlFlag::ChkFalse);
        assert_eq!(e.flag_count(s2, ControlFlag::ChkFalse), 0);
        assert_eq!(e.flag_count(s3, ControlFlag::ChkFalse), 0);
    }

    #[test]
    fn forwarding_cycles_are_rejected() {
        let mut e = eng();
        let (s1, s2, s3) = (e.new_ctrl_set(), e.new_ctrl_set(), e.new_ctrl_set());
        assert_eq!(
            e.link_forward(s1, s1),
            Err(crate::error::ModelError::ForwardCycle)
        );
        e.link_forward(s1, s2).unwrap();
        e.link_forward(s2, s3).unwrap();
        assert_eq!(
            e.link_forward(s3, s1),
            Err(crate::error::ModelError::ForwardCycle)
        );
    }

    #[test]
    fn truth_unification_aliases_unknowns() {
        let mut e = eng();
        let a = e.new_truth_var();
        let b = e.new_truth_var();
        e.unify_truth(a, b).unwrap();
        assert_eq!(e.truth_value(a), None);
        e.set_truth(b, true).unwrap();
        assert_eq!(e.truth_value(a), Some(true));
        assert!(e.set_truth(a, false).is_err());
    }

    #[test]
    fn unification_with_known_values() {
        let mut e = eng();
        let a = e.new_truth_var();
        let b = e.new_truth_var();
        e.set_truth(a, false).unwrap();
        e.unify_truth(a, b).unwrap();
        assert_eq!(e.truth_value(b), Some(false));
        let c = e.new_truth_var();
        e.set_truth(c, true).unwrap();
        assert!(e.unify_truth(a, c).is_err());
    }

    #[test]
    fn frame_restores_stores_exactly() {
        let mut e = eng();
        let x = e.new_int_var(FiniteDomain::from_range(0, 5), "x").unwrap();
        let s1 = e.new_ctrl_set();
        e.add_flag(s1, ControlFlag::ChkTrue);
        let before = e.snapshot();

        let f = e.push_frame();
        e.tighten_min(x, 3).unwrap();
        e.remove_value(x, 4).unwrap();
        e.add_flag(s1, ControlFlag::ChkFalse);
        let s2 = e.new_ctrl_set();
        e.link_forward(s1, s2).unwrap();
        e.add_flag(s1, ControlFlag::Irrelevant);
        let _y = e.new_int_var(FiniteDomain::from_range(0, 1), "y").unwrap();
        let t = e.new_truth_var();
        e.set_truth(t, true).unwrap();
        assert_ne!(e.snapshot(), before);

        e.pop_frame(f).unwrap();
        assert_eq!(e.snapshot(), before);
        assert_eq!(e.domain(x).values(), vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(e.flag_count(s1, ControlFlag::ChkTrue), 1);
        assert_eq!(e.flag_count(s1, ControlFlag::ChkFalse), 0);
    }

    #[test]
    fn nested_frames_pop_in_order_only() {
        let mut e = eng();
        let f1 = e.push_frame();
        let f2 = e.push_frame();
        assert_eq!(e.pop_frame(f1), Err(crate::error::ModelError::NotTopFrame));
        e.pop_frame(f2).unwrap();
        e.pop_frame(f1).unwrap();
        assert_eq!(e.pop_frame(f1), Err(crate::error::ModelError::NotTopFrame));
    }

    #[test]
    fn root_level_changes_are_permanent() {
        let mut e = eng();
        let x = e.new_int_var(FiniteDomain::from_range(0, 5), "x").unwrap();
        e.tighten_max(x, 3).unwrap();
        let f = e.push_frame();
        e.tighten_max(x, 1).unwrap();
        e.pop_frame(f).unwrap();
        assert_eq!(e.domain(x).max(), 3);
    }

    #[test]
    fn failed_domain_op_leaves_domain_intact() {
        let mut e = eng();
        let x = e.new_int_var(FiniteDomain::from_range(2, 4), "x").unwrap();
        assert!(e.tighten_min(x, 7).is_err());
        assert_eq!(e.domain(x).values(), vec![2, 3, 4]);
    }
}
