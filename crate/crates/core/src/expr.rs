//! Constraint expression templates.
//!
//! A [`ExprDag`] holds the unexpanded shape of a complex constraint: primitive
//! leaves combined by `or`, `and`, `not`, and the implied-annotated
//! disjunction. Nodes may be shared, turning the tree into a DAG; the engine
//! accounts for sharing with reference counts at decomposition time.
//!
//! The DAG is static once built. The engine materialises runtime constraint
//! nodes from it lazily (controlled mode) or all at once (uncontrolled mode).

use crate::domain::{FiniteDomain, VarId};

/// A pre-defined primitive constraint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PrimitiveKind {
    /// `x ∈ S` for a constant set `S`.
    Member(VarId, Vec<i64>),
    /// `x = a` for a constant `a`.
    EqConst(VarId, i64),
    /// `x = y`.
    Eq(VarId, VarId),
    /// `x ≤ y`.
    Leq(VarId, VarId),
    /// `x < y`.
    Lt(VarId, VarId),
    /// `x ≠ y`.
    Neq(VarId, VarId),
}

impl PrimitiveKind {
    pub fn vars(&self) -> Vec<VarId> {
        match *self {
            PrimitiveKind::Member(x, _) | PrimitiveKind::EqConst(x, _) => vec![x],
            PrimitiveKind::Eq(x, y)
            | PrimitiveKind::Leq(x, y)
            | PrimitiveKind::Lt(x, y)
            | PrimitiveKind::Neq(x, y) => vec![x, y],
        }
    }

    /// Truth query: `true` when the constraint is guaranteed to hold for
    /// every remaining tuple of the domain box.
    pub fn truth_decided<'a, F: Fn(VarId) -> &'a FiniteDomain>(&self, d: F) -> bool {
        match self {
            PrimitiveKind::Member(x, s) => d(*x).is_subset_of(s),
            PrimitiveKind::EqConst(x, a) => d(*x).is_singleton() && d(*x).value() == *a,
            PrimitiveKind::Eq(x, y) => {
                d(*x).is_singleton() && d(*y).is_singleton() && d(*x).value() == d(*y).value()
            }
            PrimitiveKind::Leq(x, y) => d(*x).max() <= d(*y).min(),
            PrimitiveKind::Lt(x, y) => d(*x).max() < d(*y).min(),
            PrimitiveKind::Neq(x, y) => !d(*x).intersects(d(*y)),
        }
    }

    /// Falsity query: `true` when no remaining tuple can satisfy the
    /// constraint.
    pub fn falsity_decided<'a, F: Fn(VarId) -> &'a FiniteDomain>(&self, d: F) -> bool {
        match self {
            PrimitiveKind::Member(x, s) => !d(*x).iter().any(|v| s.contains(&v)),
            PrimitiveKind::EqConst(x, a) => !d(*x).contains(*a),
            PrimitiveKind::Eq(x, y) => !d(*x).intersects(d(*y)),
            PrimitiveKind::Leq(x, y) => d(*x).min() > d(*y).max(),
            PrimitiveKind::Lt(x, y) => d(*x).min() >= d(*y).max(),
            PrimitiveKind::Neq(x, y) => {
                d(*x).is_singleton() && d(*y).is_singleton() && d(*x).value() == d(*y).value()
            }
        }
    }

    /// Satisfaction under a full assignment; the semantic reference used by
    /// [`ExprDag::eval`].
    pub fn holds(&self, value_of: &impl Fn(VarId) -> i64) -> bool {
        match self {
            PrimitiveKind::Member(x, s) => s.contains(&value_of(*x)),
            PrimitiveKind::EqConst(x, a) => value_of(*x) == *a,
            PrimitiveKind::Eq(x, y) => value_of(*x) == value_of(*y),
            PrimitiveKind::Leq(x, y) => value_of(*x) <= value_of(*y),
            PrimitiveKind::Lt(x, y) => value_of(*x) < value_of(*y),
            PrimitiveKind::Neq(x, y) => value_of(*x) != value_of(*y),
        }
    }

    pub fn render(&self, name_of: &impl Fn(VarId) -> String) -> String {
        match self {
            PrimitiveKind::Member(x, s) => {
                let vals: Vec<String> = s.iter().map(|v| v.to_string()).collect();
                format!("{} in {{{}}}", name_of(*x), vals.join(","))
            }
            PrimitiveKind::EqConst(x, a) => format!("{}={}", name_of(*x), a),
            PrimitiveKind::Eq(x, y) => format!("{}={}", name_of(*x), name_of(*y)),
            PrimitiveKind::Leq(x, y) => format!("{}<={}", name_of(*x), name_of(*y)),
            PrimitiveKind::Lt(x, y) => format!("{}<{}", name_of(*x), name_of(*y)),
            PrimitiveKind::Neq(x, y) => format!("{}!={}", name_of(*x), name_of(*y)),
        }
    }
}

/// Handle to a node of the expression DAG.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ExprId(pub(crate) u32);

impl ExprId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// One template node of a complex constraint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Prim(PrimitiveKind),
    /// Constant truth; the base case of recursive definitions.
    True,
    Or(ExprId, ExprId),
    And(ExprId, ExprId),
    Not(ExprId),
    /// `C1 ∨ C2 ⊳ C_impl` with a manually annotated implied constraint.
    OrImplied(ExprId, ExprId, ExprId),
}

/// Arena of expression templates with explicit sharing.
#[derive(Debug, Default, Clone)]
pub struct ExprDag {
    nodes: Vec<Expr>,
}

impl ExprDag {
    pub fn new() -> ExprDag {
        ExprDag::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn get(&self, id: ExprId) -> &Expr {
        &self.nodes[id.index()]
    }

    fn push(&mut self, e: Expr) -> ExprId {
        self.nodes.push(e);
        ExprId(self.nodes.len() as u32 - 1)
    }

    pub fn prim(&mut self, kind: PrimitiveKind) -> ExprId {
        self.push(Expr::Prim(kind))
    }

    pub fn constant_true(&mut self) -> ExprId {
        self.push(Expr::True)
    }

    pub fn or(&mut self, a: ExprId, b: ExprId) -> ExprId {
        self.push(Expr::Or(a, b))
    }

    pub fn and(&mut self, a: ExprId, b: ExprId) -> ExprId {
        self.push(Expr::And(a, b))
    }

    pub fn not(&mut self, a: ExprId) -> ExprId {
        self.push(Expr::Not(a))
    }

    pub fn or_implied(&mut self, a: ExprId, b: ExprId, implied: ExprId) -> ExprId {
        self.push(Expr::OrImplied(a, b, implied))
    }

    /// Evaluates the expression under a full assignment. This is the logical
    /// semantics, independent of any propagation machinery; the implied
    /// annotation is redundant and therefore ignored.
    pub fn eval(&self, root: ExprId, value_of: &impl Fn(VarId) -> i64) -> bool {
        match self.get(root) {
            Expr::Prim(k) => k.holds(value_of),
            Expr::True => true,
            Expr::Or(a, b) => self.eval(*a, value_of) || self.eval(*b, value_of),
            Expr::And(a, b) => self.eval(*a, value_of) && self.eval(*b, value_of),
            Expr::Not(a) => !self.eval(*a, value_of),
            Expr::OrImplied(a, b, _) => self.eval(*a, value_of) || self.eval(*b, value_of),
        }
    }

    /// All distinct variables under `root`, in first-occurrence order.
    pub fn vars(&self, root: ExprId) -> Vec<VarId> {
        let mut seen_exprs = vec![false; self.nodes.len()];
        let mut out = Vec::new();
        self.collect_vars(root, &mut seen_exprs, &mut out);
        out
    }

    fn collect_vars(&self, id: ExprId, seen: &mut [bool], out: &mut Vec<VarId>) {
        if seen[id.index()] {
            return;
        }
        seen[id.index()] = true;
        match self.get(id).clone() {
            Expr::Prim(k) => {
                for v in k.vars() {
                    if !out.contains(&v) {
                        out.push(v);
                    }
                }
            }
            Expr::True => {}
            Expr::Or(a, b) | Expr::And(a, b) => {
                self.collect_vars(a, seen, out);
                self.collect_vars(b, seen, out);
            }
            Expr::Not(a) => self.collect_vars(a, seen, out),
            Expr::OrImplied(a, b, i) => {
                self.collect_vars(a, seen, out);
                self.collect_vars(b, seen, out);
                self.collect_vars(i, seen, out);
            }
        }
    }

    /// Rewrites `root` into the eager-baseline form: implied annotations
    /// become conjunctions, `(C1 ∨ C2) ∧ C_impl`. Sharing is preserved.
    pub fn uncontrolled_form(&mut self, root: ExprId) -> ExprId {
        let mut memo = vec![None; self.nodes.len()];
        self.rewrite(root, &mut memo)
    }

    fn rewrite(&mut self, id: ExprId, memo: &mut Vec<Option<ExprId>>) -> ExprId {
        if let Some(r) = memo[id.index()] {
            return r;
        }
        let out = match self.get(id).clone() {
            Expr::Prim(_) | Expr::True => id,
            Expr::Or(a, b) => {
                let (a2, b2) = (self.rewrite(a, memo), self.rewrite(b, memo));
                if (a2, b2) == (a, b) {
                    id
                } else {
                    self.or(a2, b2)
                }
            }
            Expr::And(a, b) => {
                let (a2, b2) = (self.rewrite(a, memo), self.rewrite(b, memo));
                if (a2, b2) == (a, b) {
                    id
                } else {
                    self.and(a2, b2)
                }
            }
            Expr::Not(a) => {
                let a2 = self.rewrite(a, memo);
                if a2 == a {
                    id
                } else {
                    self.not(a2)
                }
            }
            Expr::OrImplied(a, b, i) => {
                let (a2, b2, i2) = (
                    self.rewrite(a, memo),
                    self.rewrite(b, memo),
                    self.rewrite(i, memo),
                );
                let disj = self.or(a2, b2);
                self.and(disj, i2)
            }
        };
        memo[id.index()] = Some(out);
        out
    }
}
