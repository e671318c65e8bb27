//! Differential tests: random constraint expressions checked against brute
//! force evaluation of the template, in both propagation modes.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ctrlprop::{Engine, ExprDag, ExprId, FiniteDomain, Mode, PrimitiveKind, VarId};

const VALUE_RANGE: std::ops::RangeInclusive<i64> = 0..=3;

struct Case {
    eng: Engine,
    vars: Vec<VarId>,
    initial: Vec<Vec<i64>>,
    root: ExprId,
    value: bool,
}

/// Builds the same random instance for any mode: variables with random
/// domains, a random expression, and the value to post. `with_implied`
/// switches to a generator of positive formulas with entailed annotations.
fn build_case(seed: u64, mode: Mode, with_implied: bool) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut eng = Engine::new(mode);
    let nvars = rng.gen_range(2..=3);
    let mut vars = Vec::new();
    let mut initial = Vec::new();
    for i in 0..nvars {
        let values = random_subset(&mut rng);
        initial.push(values.clone());
        let d = FiniteDomain::from_values(values);
        vars.push(eng.new_int_var(d, format!("v{}", i + 1)).unwrap());
    }
    let root = gen_expr(&mut rng, eng.dag_mut(), &vars, 3, with_implied);
    let value = if with_implied {
        true
    } else {
        rng.gen_bool(0.5)
    };
    Case {
        eng,
        vars,
        initial,
        root,
        value,
    }
}

fn random_subset(rng: &mut ChaCha8Rng) -> Vec<i64> {
    loop {
        let values: Vec<i64> = VALUE_RANGE.filter(|_| rng.gen_bool(0.6)).collect();
        if !values.is_empty() {
            return values;
        }
    }
}

fn gen_prim(rng: &mut ChaCha8Rng, vars: &[VarId]) -> PrimitiveKind {
    let pick = |rng: &mut ChaCha8Rng| vars[rng.gen_range(0..vars.len())];
    let x = pick(rng);
    let y = pick(rng);
    match rng.gen_range(0..6) {
        0 => PrimitiveKind::EqConst(x, rng.gen_range(VALUE_RANGE)),
        1 => PrimitiveKind::Eq(x, y),
        2 => PrimitiveKind::Leq(x, y),
        3 => PrimitiveKind::Lt(x, y),
        4 => PrimitiveKind::Neq(x, y),
        _ => PrimitiveKind::Member(x, random_subset(rng)),
    }
}

/// Random expression of bounded depth. With `with_implied` the expression is
/// negation-free and may contain annotated disjunctions whose implied part is
/// entailed (`x<y ∨ (x=y ∧ …) ⊳ x<=y`), so it is only posted positively.
fn gen_expr(
    rng: &mut ChaCha8Rng,
    dag: &mut ExprDag,
    vars: &[VarId],
    depth: u32,
    with_implied: bool,
) -> ExprId {
    if depth == 0 || rng.gen_bool(0.35) {
        let kind = gen_prim(rng, vars);
        return dag.prim(kind);
    }
    let choice = rng.gen_range(0..3);
    match (choice, with_implied) {
        (0, _) => {
            let a = gen_expr(rng, dag, vars, depth - 1, with_implied);
            let b = gen_expr(rng, dag, vars, depth - 1, with_implied);
            dag.or(a, b)
        }
        (1, _) => {
            let a = gen_expr(rng, dag, vars, depth - 1, with_implied);
            let b = gen_expr(rng, dag, vars, depth - 1, with_implied);
            dag.and(a, b)
        }
        (_, false) => {
            let a = gen_expr(rng, dag, vars, depth - 1, false);
            dag.not(a)
        }
        (_, true) => {
            let x = vars[rng.gen_range(0..vars.len())];
            let y = vars[rng.gen_range(0..vars.len())];
            let lt = dag.prim(PrimitiveKind::Lt(x, y));
            let eq = dag.prim(PrimitiveKind::Eq(x, y));
            let rest = gen_expr(rng, dag, vars, depth - 1, true);
            let second = dag.and(eq, rest);
            let leq = dag.prim(PrimitiveKind::Leq(x, y));
            dag.or_implied(lt, second, leq)
        }
    }
}

/// All assignments over the given per-variable value lists.
fn assignments(domains: &[Vec<i64>]) -> Vec<Vec<i64>> {
    let mut out = vec![Vec::new()];
    for d in domains {
        out = out
            .iter()
            .flat_map(|base| {
                d.iter().map(move |&v| {
                    let mut a = base.clone();
                    a.push(v);
                    a
                })
            })
            .collect();
    }
    out
}

fn satisfying(case: &Case) -> Vec<Vec<i64>> {
    let vars = &case.vars;
    assignments(&case.initial)
        .into_iter()
        .filter(|a| {
            let value_of = |v: VarId| a[vars.iter().position(|&w| w == v).unwrap()];
            case.eng.dag().eval(case.root, &value_of) == case.value
        })
        .collect()
}

fn post_and_run(case: &mut Case) -> bool {
    let root = case.root;
    let value = case.value;
    match case.eng.post(root, value) {
        Ok(_) => case.eng.run_to_fixpoint().is_ok(),
        Err(_) => false,
    }
}

#[test]
fn pruning_is_sound() {
    for with_implied in [false, true] {
        for mode in [Mode::Controlled, Mode::Uncontrolled] {
            for seed in 0..200 {
                let mut case = build_case(seed, mode, with_implied);
                let sat = satisfying(&case);
                let ok = post_and_run(&mut case);
                if !ok {
                    assert!(
                        sat.is_empty(),
                        "seed {seed} {mode:?} implied={with_implied}: \
                         refuted a satisfiable instance"
                    );
                    continue;
                }
                // Every removed value must be unsupported.
                for (i, &v) in case.vars.iter().enumerate() {
                    for &val in &case.initial[i] {
                        if !case.eng.domain(v).contains(val) {
                            assert!(
                                sat.iter().all(|a| a[i] != val),
                                "seed {seed} {mode:?} implied={with_implied}: \
                                 pruned supported value {val} of v{}",
                                i + 1
                            );
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn ground_checks_match_evaluation() {
    for with_implied in [false, true] {
        for mode in [Mode::Controlled, Mode::Uncontrolled] {
            for seed in 0..120 {
                let mut case = build_case(seed, mode, with_implied);
                let sat = satisfying(&case);
                if !post_and_run(&mut case) {
                    assert!(sat.is_empty());
                    continue;
                }
                for a in assignments(&case.initial) {
                    let frame = case.eng.push_frame();
                    let mut ok = true;
                    for (i, &v) in case.vars.iter().enumerate() {
                        if case.eng.assign(v, a[i]).is_err() {
                            ok = false;
                            break;
                        }
                    }
                    if ok {
                        ok = case.eng.run_to_fixpoint().is_ok();
                    }
                    case.eng.pop_frame(frame).unwrap();
                    assert_eq!(
                        ok,
                        sat.contains(&a),
                        "seed {seed} {mode:?} implied={with_implied}: \
                         ground check disagrees on {a:?}"
                    );
                }
            }
        }
    }
}

#[test]
fn modes_reach_the_same_fixpoint() {
    for seed in 0..300 {
        let mut c = build_case(seed, Mode::Controlled, false);
        let mut u = build_case(seed, Mode::Uncontrolled, false);
        let ok_c = post_and_run(&mut c);
        let ok_u = post_and_run(&mut u);
        assert_eq!(ok_c, ok_u, "seed {seed}: modes disagree on consistency");
        if ok_c {
            for (vc, vu) in c.vars.iter().zip(&u.vars) {
                assert_eq!(
                    c.eng.domain(*vc).values(),
                    u.eng.domain(*vu).values(),
                    "seed {seed}: fixpoint domains differ"
                );
            }
        }
    }
}

#[test]
fn fixpoint_is_confluent_under_agenda_shuffling() {
    for with_implied in [false, true] {
        for seed in 0..80 {
            let mut reference: Option<(bool, Vec<Vec<i64>>)> = None;
            for shuffle in 0..5 {
                let mut case = build_case(seed, Mode::Controlled, with_implied);
                case.eng.set_agenda_shuffle(shuffle);
                let ok = post_and_run(&mut case);
                let doms: Vec<Vec<i64>> = case
                    .vars
                    .iter()
                    .map(|&v| case.eng.domain(v).values())
                    .collect();
                match &reference {
                    None => reference = Some((ok, doms)),
                    Some((rok, rdoms)) => {
                        assert_eq!(*rok, ok, "seed {seed} shuffle {shuffle}");
                        if ok {
                            assert_eq!(rdoms, &doms, "seed {seed} shuffle {shuffle}");
                        }
                    }
                }
            }
        }
    }
}
