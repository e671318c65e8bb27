//! Acceptance suite: one test per headline property, each printing a single
//! PASS/FAIL line (run with `cargo test --test acceptance -- --nocapture`).

use std::panic::{catch_unwind, AssertUnwindSafe};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ctrlprop::kernel::{Engine, Mode};
use ctrlprop::library::{build_alldifferent_tp, build_clause, build_lex};
use ctrlprop::search::{build_instance, random_search, run_bench, Family, DEFAULT_NODE_LIMIT};
use ctrlprop::trace::{parse_instance, render_trace, run_lex_trace};
use ctrlprop::{FiniteDomain, PrimitiveKind, VarId};

fn check(name: &str, f: impl FnOnce()) {
    let outcome = catch_unwind(AssertUnwindSafe(f));
    match &outcome {
        Ok(()) => println!("[PASS] {name}"),
        Err(_) => println!("[FAIL] {name}"),
    }
    if let Err(e) = outcome {
        std::panic::resume_unwind(e);
    }
}

fn subset(rng: &mut ChaCha8Rng, range: std::ops::RangeInclusive<i64>) -> Vec<i64> {
    loop {
        let v: Vec<i64> = range.clone().filter(|_| rng.gen_bool(0.6)).collect();
        if !v.is_empty() {
            return v;
        }
    }
}

#[test]
fn c1_modes_are_search_equivalent() {
    check(
        "1. controlled and eager modes: same fixpoints, same search trees",
        || {
            let configs = [
                (Family::Clause, 6, 0, (0i64, 1i64)),
                (Family::Diff, 4, 0, (0, 2)),
                (Family::Alldiff, 3, 3, (0, 2)),
                (Family::Lex, 3, 0, (0, 2)),
            ];
            for (family, n, tuples, dom) in configs {
                for seed in 0..25 {
                    let run = |mode| {
                        let (mut eng, vars) = build_instance(family, n, tuples, dom, mode);
                        let ok = eng.run_to_fixpoint().is_ok();
                        let doms: Vec<Vec<i64>> =
                            vars.iter().map(|&v| eng.domain(v).values()).collect();
                        let out = if ok {
                            Some(random_search(&mut eng, &vars, seed, DEFAULT_NODE_LIMIT))
                        } else {
                            None
                        };
                        (ok, doms, out, eng.counters)
                    };
                    let (ok_c, dom_c, out_c, cnt_c) = run(Mode::Controlled);
                    let (ok_u, dom_u, out_u, cnt_u) = run(Mode::Uncontrolled);
                    let tag = format!("{} seed {seed}", family.name());
                    assert_eq!(ok_c, ok_u, "{tag}: consistency");
                    assert_eq!(dom_c, dom_u, "{tag}: fixpoint domains");
                    if let (Some(c), Some(u)) = (&out_c, &out_u) {
                        assert!(c.complete && u.complete, "{tag}: budget");
                        assert_eq!(c.decision_log, u.decision_log, "{tag}: decisions");
                        assert_eq!(c.solution, u.solution, "{tag}: solution");
                        assert_eq!(cnt_c.search_nodes, cnt_u.search_nodes, "{tag}: nodes");
                        assert_eq!(cnt_c.backtracks, cnt_u.backtracks, "{tag}: backtracks");
                    }
                }
            }
        },
    );
}

#[test]
fn c2_implied_part_strengthens_propagation() {
    check(
        "2. implied part of an undecided disjunction is enforced early",
        || {
            let mut e = Engine::new(Mode::Controlled);
            let x = e
                .new_int_var(FiniteDomain::from_values([4, 5]), "x")
                .unwrap();
            let y = e
                .new_int_var(FiniteDomain::from_values([3, 4, 5]), "y")
                .unwrap();
            let root = build_lex(e.dag_mut(), &[x], &[y], true).unwrap();
            e.post(root, true).unwrap();
            e.run_to_fixpoint().unwrap();
            assert_eq!(e.domain(y).values(), vec![4, 5]);

            // Without the annotation the disjunction alone cannot prune yet.
            let mut e = Engine::new(Mode::Controlled);
            let x = e
                .new_int_var(FiniteDomain::from_values([4, 5]), "x")
                .unwrap();
            let y = e
                .new_int_var(FiniteDomain::from_values([3, 4, 5]), "y")
                .unwrap();
            let root = build_lex(e.dag_mut(), &[x], &[y], false).unwrap();
            e.post(root, true).unwrap();
            e.run_to_fixpoint().unwrap();
            assert_eq!(e.domain(y).values(), vec![3, 4, 5]);
        },
    );
}

#[test]
fn c3_lex_propagation_is_domain_complete() {
    check(
        "3. annotated lex <= removes exactly the unsupported values",
        || {
            for seed in 0..400u64 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let n = rng.gen_range(1..=3);
                let mut eng = Engine::new(Mode::Controlled);
                let mut doms = Vec::new();
                let mut vars = Vec::new();
                for i in 0..2 * n {
                    let values = subset(&mut rng, 0..=3);
                    doms.push(values.clone());
                    let name = if i < n {
                        format!("x{}", i + 1)
                    } else {
                        format!("y{}", i - n + 1)
                    };
                    vars.push(
                        eng.new_int_var(FiniteDomain::from_values(values), name)
                            .unwrap(),
                    );
                }
                let (xs, ys) = vars.split_at(n);
                let root = build_lex(eng.dag_mut(), xs, ys, true).unwrap();

                // Brute-force projection of the solution set.
                let mut supported = vec![std::collections::BTreeSet::new(); 2 * n];
                let mut assignment = vec![0i64; 2 * n];
                let mut any = false;
                enumerate(&doms, 0, &mut assignment, &mut |a| {
                    if a[..n] <= a[n..] {
                        any = true;
                        for (i, &v) in a.iter().enumerate() {
                            supported[i].insert(v);
                        }
                    }
                });

                let ok = eng.post(root, true).is_ok() && eng.run_to_fixpoint().is_ok();
                assert_eq!(ok, any, "seed {seed}: consistency vs solution set");
                if ok {
                    for (i, &v) in vars.iter().enumerate() {
                        let got = eng.domain(v).values();
                        let want: Vec<i64> = supported[i].iter().copied().collect();
                        assert_eq!(got, want, "seed {seed}: projection of var {i}");
                    }
                }
            }
        },
    );
}

fn enumerate(doms: &[Vec<i64>], i: usize, a: &mut Vec<i64>, f: &mut impl FnMut(&[i64])) {
    if i == doms.len() {
        f(a);
        return;
    }
    for &v in &doms[i] {
        a[i] = v;
        enumerate(doms, i + 1, a, f);
    }
}

#[test]
fn c4_lex_trace_matches_reference() {
    check(
        "4. annotated lex run reproduces the reference trace",
        || {
            let text = include_str!("data/lex_sample.txt");
            let inst = parse_instance(text).unwrap();
            let run = run_lex_trace(&inst, true).unwrap();
            assert!(run.consistent);
            let expected = "\
step 1
  asserted: -
  domains: x1={2} x2={1,3,4} x3={1..5} x4={1..2} x5={3..5} y1={0..2} y2={1} y3={0..4} y4={0..1} y5={0..2}
step 2
  asserted: x1<=y1
  queried (falsity): x1<y1, x1=y1, x2<y2
  domains: x1={2} x2={1,3,4} x3={1..5} x4={1..2} x5={3..5} y1={2} y2={1} y3={0..4} y4={0..1} y5={0..2}
step 3
  asserted: x2<=y2
  queried (falsity): x2<y2, x2=y2, x3<y3
  domains: x1={2} x2={1} x3={1..5} x4={1..2} x5={3..5} y1={2} y2={1} y3={0..4} y4={0..1} y5={0..2}
step 4
  asserted: x3<=y3
  queried (falsity): x3<y3, x3=y3, x4<y4
  domains: x1={2} x2={1} x3={1..4} x4={1..2} x5={3..5} y1={2} y2={1} y3={1..4} y4={0..1} y5={0..2}
step 5
  asserted: x3<=y3
  queried (falsity): x3<y3, x3=y3, x4=y4, x5<y5
  domains: x1={2} x2={1} x3={1..4} x4={1..2} x5={3..5} y1={2} y2={1} y3={1..4} y4={0..1} y5={0..2}
step 6
  asserted: x3<=y3
  queried (falsity): x3<y3, x3=y3, x4=y4, x5=y5
  domains: x1={2} x2={1} x3={1..4} x4={1..2} x5={3..5} y1={2} y2={1} y3={1..4} y4={0..1} y5={0..2}
step 7
  asserted: x3<y3
  domains: x1={2} x2={1} x3={1..3} x4={1..2} x5={3..5} y1={2} y2={1} y3={2..4} y4={0..1} y5={0..2}
";
            assert_eq!(render_trace(&run), expected);
        },
    );
}

#[test]
fn c5_clause_decomposition_is_lazy() {
    check(
        "5. asserted 50-literal clause materializes two literals at a time",
        || {
            let mut e = Engine::new(Mode::Controlled);
            let mut vars = Vec::new();
            for i in 0..50 {
                vars.push(
                    e.new_int_var(FiniteDomain::from_range(0, 1), format!("x{}", i + 1))
                        .unwrap(),
                );
            }
            let root = build_clause(e.dag_mut(), &vars);
            e.post(root, true).unwrap();
            e.run_to_fixpoint().unwrap();
            let (bools, prims) = e.materialized_counts();
            assert_eq!((bools, prims), (2, 2));
            let watched =
                |e: &Engine| e.pending_falsity_count(|k| matches!(k, PrimitiveKind::EqConst(..)));
            assert_eq!(watched(&e), 2);

            // Refute literals one by one; the watched set never exceeds two.
            for (i, &v) in vars.iter().take(49).enumerate() {
                e.remove_value(v, 1).unwrap();
                e.run_to_fixpoint().unwrap();
                assert!(watched(&e) <= 2, "after {} refutations", i + 1);
            }
            // One literal left: the clause commits to it.
            assert_eq!(e.domain(vars[49]).values(), vec![1]);
        },
    );
}

#[test]
fn c6_alldifferent_activity_is_bounded() {
    check(
        "6. alldifferent over n tuples queries n(n-1) primitives, not n(n-1)m/2",
        || {
            let (n, m) = (5usize, 4usize);
            let build = |mode| {
                let mut e = Engine::new(mode);
                let mut rows = Vec::new();
                for i in 0..n {
                    let mut t = Vec::new();
                    for j in 0..m {
                        t.push(
                            e.new_int_var(
                                FiniteDomain::from_range(0, 9),
                                format!("t{}_{}", i + 1, j + 1),
                            )
                            .unwrap(),
                        );
                    }
                    rows.push(t);
                }
                let root = build_alldifferent_tp(e.dag_mut(), &rows).unwrap();
                e.post(root, true).unwrap();
                e.run_to_fixpoint().unwrap();
                e
            };
            let neq = |k: &PrimitiveKind| matches!(k, PrimitiveKind::Neq(..));

            let c = build(Mode::Controlled);
            assert_eq!(c.pending_falsity_count(neq), n * (n - 1));
            assert_eq!(c.primitive_count(neq), n * (n - 1));

            let u = build(Mode::Uncontrolled);
            assert_eq!(u.primitive_count(neq), n * (n - 1) * m / 2);
        },
    );
}

#[test]
fn c7_query_savings_grow_with_size() {
    check(
        "7. controlled/eager query ratio shrinks as instances grow",
        || {
            let ratio = |family, n, tuples, dom| {
                let mut rows = Vec::new();
                for seed in 0..20 {
                    for mode in [Mode::Controlled, Mode::Uncontrolled] {
                        rows.push(run_bench(family, n, tuples, dom, seed, mode));
                    }
                }
                ctrlprop::search::query_ratio(&rows)
            };

            let clause5 = ratio(Family::Clause, 5, 0, (0, 1));
            let clause50 = ratio(Family::Clause, 50, 0, (0, 1));
            assert!(
                clause50 < 0.5 * clause5,
                "clause ratio did not shrink: {clause5:.3} -> {clause50:.3}"
            );

            let alldiff: Vec<f64> = [5, 10, 20, 50]
                .iter()
                .map(|&n| ratio(Family::Alldiff, n, 6, (0, 9)))
                .collect();
            assert!(
                alldiff.windows(2).all(|w| w[1] < w[0]),
                "alldiff ratios not decreasing: {alldiff:?}"
            );
        },
    );
}

#[test]
fn c8_positive_formulas_never_query_truth() {
    check(
        "8. negation-free constraints issue no truth queries at all",
        || {
            let configs = [
                (Family::Clause, 8, 0, (0i64, 1i64)),
                (Family::Diff, 4, 0, (0, 2)),
                (Family::Alldiff, 3, 4, (0, 3)),
                (Family::Lex, 4, 0, (0, 2)),
            ];
            for (family, n, tuples, dom) in configs {
                for seed in 0..10 {
                    let (mut eng, vars) = build_instance(family, n, tuples, dom, Mode::Controlled);
                    if eng.run_to_fixpoint().is_ok() {
                        random_search(&mut eng, &vars, seed, DEFAULT_NODE_LIMIT);
                    }
                    assert_eq!(
                        eng.counters.chk_true_created,
                        0,
                        "{} seed {seed}",
                        family.name()
                    );
                }
            }
        },
    );
}

#[test]
fn c9_backtracking_restores_state_exactly() {
    check(
        "9. 1000 random op interleavings: popping a frame restores everything",
        || {
            for seed in 0..1000u64 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut eng = Engine::new(Mode::Controlled);
                let mut vars = Vec::new();
                for i in 0..4 {
                    let values = subset(&mut rng, 0..=5);
                    vars.push(
                        eng.new_int_var(FiniteDomain::from_values(values), format!("v{i}"))
                            .unwrap(),
                    );
                }
                let root = match rng.gen_range(0..3) {
                    0 => build_clause(eng.dag_mut(), &vars),
                    1 => build_lex(eng.dag_mut(), &vars[..2], &vars[2..], true).unwrap(),
                    _ => {
                        let rows = [vec![vars[0], vars[1]], vec![vars[2], vars[3]]];
                        build_alldifferent_tp(eng.dag_mut(), &rows).unwrap()
                    }
                };
                let _ = eng.post(root, true);
                let _ = eng.run_to_fixpoint();
                frames(&mut eng, &vars, &mut rng, 3);
            }
        },
    );
}

fn frames(eng: &mut Engine, vars: &[VarId], rng: &mut ChaCha8Rng, depth: u32) {
    let before = eng.snapshot();
    let frame = eng.push_frame();
    for _ in 0..rng.gen_range(1..=4) {
        let v = vars[rng.gen_range(0..vars.len())];
        let vals = eng.domain(v).values();
        let val = vals[rng.gen_range(0..vals.len())];
        let _ = match rng.gen_range(0..4) {
            0 => eng.assign(v, val),
            1 => eng.remove_value(v, val),
            2 => eng.tighten_min(v, val),
            _ => eng.tighten_max(v, val),
        };
        if rng.gen_bool(0.7) {
            let _ = eng.run_to_fixpoint();
        }
        if depth > 0 && rng.gen_bool(0.3) {
            frames(eng, vars, rng, depth - 1);
        }
    }
    eng.pop_frame(frame).unwrap();
    assert_eq!(eng.snapshot(), before, "state not restored");
}
