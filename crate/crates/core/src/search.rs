//! Seeded random search and the benchmark driver.
//!
//! The search draws from three independent random streams (variable choice,
//! value choice, branch order), so two engines exposed to the same seed make
//! identical choices whenever their domains agree — which makes search trees
//! directly comparable across propagation modes.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::domain::{FiniteDomain, VarId};
use crate::error::PropResult;
use crate::kernel::{Counters, Engine, Mode};
use crate::library::{build_alldifferent_tp, build_clause, build_different_tp, build_lex};

pub const DEFAULT_NODE_LIMIT: u64 = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Assign(VarId, i64),
    Exclude(VarId, i64),
}

#[derive(Debug)]
pub struct SearchOutcome {
    pub solution: Option<Vec<i64>>,
    /// Preorder log of every branch taken, including failed ones.
    pub decision_log: Vec<Decision>,
    /// False when the node budget ran out before the tree was explored.
    pub complete: bool,
}

struct Ctx {
    var_rng: ChaCha8Rng,
    val_rng: ChaCha8Rng,
    op_rng: ChaCha8Rng,
    log: Vec<Decision>,
    budget: u64,
    out_of_budget: bool,
}

/// Depth-first binary search for one solution over `vars`, branching on a
/// random value of a random unbound variable, trying assignment and removal
/// in random order. The engine must already be at fixpoint.
pub fn random_search(
    eng: &mut Engine,
    vars: &[VarId],
    seed: u64,
    node_limit: u64,
) -> SearchOutcome {
    let stream = |s: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        r.set_stream(s);
        r
    };
    let mut ctx = Ctx {
        var_rng: stream(0),
        val_rng: stream(1),
        op_rng: stream(2),
        log: Vec::new(),
        budget: node_limit,
        out_of_budget: false,
    };
    let solution = dfs(eng, vars, &mut ctx);
    SearchOutcome {
        solution,
        decision_log: ctx.log,
        complete: !ctx.out_of_budget,
    }
}

fn dfs(eng: &mut Engine, vars: &[VarId], ctx: &mut Ctx) -> Option<Vec<i64>> {
    if ctx.budget == 0 {
        ctx.out_of_budget = true;
        return None;
    }
    ctx.budget -= 1;
    eng.counters.search_nodes += 1;

    let unbound: Vec<VarId> = vars
        .iter()
        .copied()
        .filter(|&v| !eng.domain(v).is_singleton())
        .collect();
    if unbound.is_empty() {
        return Some(vars.iter().map(|&v| eng.domain(v).value()).collect());
    }
    let var = unbound[ctx.var_rng.gen_range(0..unbound.len())];
    let vals = eng.domain(var).values();
    let val = vals[ctx.val_rng.gen_range(0..vals.len())];
    let branches = if ctx.op_rng.gen_bool(0.5) {
        [Decision::Assign(var, val), Decision::Exclude(var, val)]
    } else {
        [Decision::Exclude(var, val), Decision::Assign(var, val)]
    };

    for d in branches {
        let frame = eng.push_frame();
        ctx.log.push(d);
        let ok = apply(eng, d).and_then(|()| eng.run_to_fixpoint());
        if ok.is_ok() {
            if let Some(sol) = dfs(eng, vars, ctx) {
                eng.pop_frame(frame).unwrap();
                return Some(sol);
            }
        }
        eng.pop_frame(frame).unwrap();
        eng.counters.backtracks += 1;
    }
    None
}

fn apply(eng: &mut Engine, d: Decision) -> PropResult<()> {
    match d {
        Decision::Assign(v, x) => eng.assign(v, x),
        Decision::Exclude(v, x) => eng.remove_value(v, x),
    }
}

// ----------------------------------------------------------------------
// Benchmark driver
// ----------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Clause,
    Diff,
    Alldiff,
    Lex,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Clause => "clause",
            Family::Diff => "diff",
            Family::Alldiff => "alldiff",
            Family::Lex => "lex",
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub constraint: &'static str,
    pub n: usize,
    pub mode: &'static str,
    pub seed: u64,
    pub counters: Counters,
}

fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Controlled => "controlled",
        Mode::Uncontrolled => "uncontrolled",
    }
}

/// Builds the benchmark instance for a family: the engine with its decision
/// variables and the posted (but not yet propagated) constraint.
pub fn build_instance(
    family: Family,
    n: usize,
    tuples: usize,
    domain: (i64, i64),
    mode: Mode,
) -> (Engine, Vec<VarId>) {
    let mut eng = Engine::new(mode);
    let dom = || FiniteDomain::from_range(domain.0, domain.1);
    let mut vars = Vec::new();
    let root = match family {
        Family::Clause => {
            for i in 0..n {
                vars.push(eng.new_int_var(dom(), format!("x{}", i + 1)).unwrap());
            }
            build_clause(eng.dag_mut(), &vars)
        }
        Family::Diff => {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for i in 0..n {
                xs.push(eng.new_int_var(dom(), format!("x{}", i + 1)).unwrap());
            }
            for i in 0..n {
                ys.push(eng.new_int_var(dom(), format!("y{}", i + 1)).unwrap());
            }
            vars.extend(&xs);
            vars.extend(&ys);
            build_different_tp(eng.dag_mut(), &xs, &ys).unwrap()
        }
        Family::Alldiff => {
            // `tuples` tuples of arity n, pairwise different.
            let mut rows = Vec::new();
            for i in 0..tuples {
                let mut t = Vec::new();
                for j in 0..n {
                    t.push(
                        eng.new_int_var(dom(), format!("t{}_{}", i + 1, j + 1))
                            .unwrap(),
                    );
                }
                vars.extend(&t);
                rows.push(t);
            }
            build_alldifferent_tp(eng.dag_mut(), &rows).unwrap()
        }
        Family::Lex => {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for i in 0..n {
                xs.push(eng.new_int_var(dom(), format!("x{}", i + 1)).unwrap());
            }
            for i in 0..n {
                ys.push(eng.new_int_var(dom(), format!("y{}", i + 1)).unwrap());
            }
            vars.extend(&xs);
            vars.extend(&ys);
            build_lex(eng.dag_mut(), &xs, &ys, true).unwrap()
        }
    };
    let _ = eng.post(root, true);
    (eng, vars)
}

/// One benchmark run: propagate to the root fixpoint, then random search.
pub fn run_bench(
    family: Family,
    n: usize,
    tuples: usize,
    domain: (i64, i64),
    seed: u64,
    mode: Mode,
) -> BenchRow {
    let (mut eng, vars) = build_instance(family, n, tuples, domain, mode);
    if eng.run_to_fixpoint().is_ok() {
        random_search(&mut eng, &vars, seed, DEFAULT_NODE_LIMIT);
    }
    BenchRow {
        constraint: family.name(),
        n,
        mode: mode_name(mode),
        seed,
        counters: eng.counters,
    }
}

pub const CSV_HEADER: &str =
    "constraint,n,mode,seed,activations,queries,created,deleted,nodes,backtracks";

pub fn csv_line(row: &BenchRow) -> String {
    let c = &row.counters;
    format!(
        "{},{},{},{},{},{},{},{},{},{}",
        row.constraint,
        row.n,
        row.mode,
        row.seed,
        c.propagator_activations,
        c.queries_evaluated,
        c.constraints_created,
        c.constraints_deleted,
        c.search_nodes,
        c.backtracks
    )
}

pub fn write_csv(path: &Path, rows: &[BenchRow]) -> std::io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "{}", CSV_HEADER)?;
    for row in rows {
        writeln!(f, "{}", csv_line(row))?;
    }
    Ok(())
}

/// Total queries evaluated in controlled runs divided by the uncontrolled
/// total, over a set of rows for the same instances and seeds.
pub fn query_ratio(rows: &[BenchRow]) -> f64 {
    let total = |mode: &str| -> u64 {
        rows.iter()
            .filter(|r| r.mode == mode)
            .map(|r| r.counters.queries_evaluated)
            .sum()
    };
    total("controlled") as f64 / total("uncontrolled") as f64
}
