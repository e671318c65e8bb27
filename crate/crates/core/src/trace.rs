//! Annotated propagation traces and the lex instance file format.
//!
//! A trace is a sequence of blocks. A block is captured just before each
//! query-driven refutation of a primitive, plus one after posting and one at
//! the final fixpoint; identical consecutive blocks are merged. Each block
//! records the most recently asserted primitive, the primitives whose truth
//! or falsity is currently queried (in creation order), and all domains.

use std::collections::HashMap;

use crate::domain::FiniteDomain;
use crate::kernel::{ControlFlag, Engine, Mode, NodeBody};
use crate::library::build_lex;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceBlock {
    pub asserted: String,
    pub falsity_queried: Vec<String>,
    pub truth_queried: Vec<String>,
    /// `(variable name, rendered domain)` for every variable.
    pub domains: Vec<(String, String)>,
}

impl Engine {
    pub fn enable_tracing(&mut self) {
        self.tracing = true;
    }

    pub fn take_trace(&mut self) -> Vec<TraceBlock> {
        std::mem::take(&mut self.trace_blocks)
    }

    pub(crate) fn emit_trace_block(&mut self) {
        let mut falsity = Vec::new();
        let mut truth = Vec::new();
        for node in &self.nodes {
            if !node.active {
                continue;
            }
            let NodeBody::Prim(kind) = &node.body else {
                continue;
            };
            if self.truth_value(node.b).is_some() {
                continue;
            }
            let label = kind.render(&|v| self.var_name(v).to_string());
            if self.flag_present(node.ctrl, ControlFlag::ChkFalse) {
                falsity.push(label.clone());
            }
            if self.flag_present(node.ctrl, ControlFlag::ChkTrue) {
                truth.push(label);
            }
        }
        let domains = self
            .all_vars()
            .map(|v| (self.var_name(v).to_string(), render_domain(self.domain(v))))
            .collect();
        let block = TraceBlock {
            asserted: self.last_asserted.clone(),
            falsity_queried: falsity,
            truth_queried: truth,
            domains,
        };
        if self.trace_blocks.last() != Some(&block) {
            self.trace_blocks.push(block);
        }
    }
}

/// `{lo..hi}` for contiguous domains of two or more values, an explicit
/// value list otherwise.
pub fn render_domain(d: &FiniteDomain) -> String {
    if d.is_contiguous() && d.size() >= 2 {
        format!("{{{}..{}}}", d.min(), d.max())
    } else {
        let vals: Vec<String> = d.iter().map(|v| v.to_string()).collect();
        format!("{{{}}}", vals.join(","))
    }
}

// ----------------------------------------------------------------------
// Instance files
// ----------------------------------------------------------------------

/// A parsed lex instance: named variable domains in file order, and the two
/// tuples of the `lex` line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub vars: Vec<(String, Vec<i64>)>,
    pub xs: Vec<String>,
    pub ys: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TraceError {
    #[error("line {0}: {1}")]
    Line(usize, String),
    #[error("instance has no `lex` line")]
    MissingLex,
    #[error("unknown variable `{0}` in lex tuple")]
    UnknownVar(String),
    #[error("{0}")]
    Model(String),
}

/// Parses the instance grammar: any number of domain lines `name: values`,
/// one line `lex XS <= YS`. Values and tuple names support comma lists and
/// `..` ranges (`1..5`, `x1..x5`). `#` starts a comment line.
pub fn parse_instance(text: &str) -> Result<Instance, TraceError> {
    let mut vars = Vec::new();
    let mut lex = None;
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix("lex ") {
            let (lhs, rhs) = rest
                .split_once("<=")
                .ok_or_else(|| TraceError::Line(lineno, "expected `lex XS <= YS`".into()))?;
            lex = Some((
                parse_name_list(lhs.trim(), lineno)?,
                parse_name_list(rhs.trim(), lineno)?,
            ));
        } else if let Some((name, vals)) = line.split_once(':') {
            vars.push((name.trim().to_string(), parse_values(vals.trim(), lineno)?));
        } else {
            return Err(TraceError::Line(
                lineno,
                "expected `name: values` or `lex XS <= YS`".into(),
            ));
        }
    }
    let (xs, ys) = lex.ok_or(TraceError::MissingLex)?;
    Ok(Instance { vars, xs, ys })
}

fn parse_values(s: &str, lineno: usize) -> Result<Vec<i64>, TraceError> {
    let bad = |msg: String| TraceError::Line(lineno, msg);
    let mut out = Vec::new();
    for item in s.split(',') {
        let item = item.trim();
        if let Some((a, b)) = item.split_once("..") {
            let lo: i64 = a
                .trim()
                .parse()
                .map_err(|_| bad(format!("bad value `{a}`")))?;
            let hi: i64 = b
                .trim()
                .parse()
                .map_err(|_| bad(format!("bad value `{b}`")))?;
            if lo > hi {
                return Err(bad(format!("empty range `{item}`")));
            }
            out.extend(lo..=hi);
        } else {
            out.push(
                item.parse()
                    .map_err(|_| bad(format!("bad value `{item}`")))?,
            );
        }
    }
    Ok(out)
}

fn parse_name_list(s: &str, lineno: usize) -> Result<Vec<String>, TraceError> {
    let bad = |msg: String| TraceError::Line(lineno, msg);
    let mut out = Vec::new();
    for item in s.split(',') {
        let item = item.trim();
        if let Some((a, b)) = item.split_once("..") {
            let (pa, na) =
                split_name_num(a).ok_or_else(|| bad(format!("bad name range `{item}`")))?;
            let (pb, nb) =
                split_name_num(b).ok_or_else(|| bad(format!("bad name range `{item}`")))?;
            if pa != pb || na > nb {
                return Err(bad(format!("bad name range `{item}`")));
            }
            for k in na..=nb {
                out.push(format!("{pa}{k}"));
            }
        } else if item.is_empty() {
            return Err(bad("empty name".into()));
        } else {
            out.push(item.to_string());
        }
    }
    Ok(out)
}

/// Splits a trailing digit run off a name: `x12` → (`x`, 12).
fn split_name_num(s: &str) -> Option<(&str, u64)> {
    let s = s.trim();
    let idx = s
        .rfind(|c: char| !c.is_ascii_digit())
        .map(|i| i + c_len(s, i))
        .unwrap_or(0);
    let digits = &s[idx..];
    if digits.is_empty() {
        return None;
    }
    Some((&s[..idx], digits.parse().ok()?))
}

fn c_len(s: &str, i: usize) -> usize {
    s[i..].chars().next().map(char::len_utf8).unwrap_or(0)
}

#[derive(Debug)]
pub struct TraceRun {
    pub blocks: Vec<TraceBlock>,
    pub consistent: bool,
}

/// Builds the lex constraint of `instance` in a controlled engine, asserts
/// it, and records the propagation trace to the root fixpoint.
pub fn run_lex_trace(instance: &Instance, annotated: bool) -> Result<TraceRun, TraceError> {
    let mut eng = Engine::new(Mode::Controlled);
    let mut ids = HashMap::new();
    for (name, vals) in &instance.vars {
        let dom = FiniteDomain::from_values(vals.iter().copied());
        let id = eng
            .new_int_var(dom, name.clone())
            .map_err(|e| TraceError::Model(e.to_string()))?;
        ids.insert(name.clone(), id);
    }
    let resolve = |names: &[String]| {
        names
            .iter()
            .map(|n| {
                ids.get(n)
                    .copied()
                    .ok_or_else(|| TraceError::UnknownVar(n.clone()))
            })
            .collect::<Result<Vec<_>, _>>()
    };
    let xs = resolve(&instance.xs)?;
    let ys = resolve(&instance.ys)?;
    let root = build_lex(eng.dag_mut(), &xs, &ys, annotated)
        .map_err(|e| TraceError::Model(e.to_string()))?;
    eng.enable_tracing();
    let consistent = eng
        .post(root, true)
        .and_then(|_| eng.run_to_fixpoint())
        .is_ok();
    Ok(TraceRun {
        blocks: eng.take_trace(),
        consistent,
    })
}

pub fn render_trace(run: &TraceRun) -> String {
    let mut out = String::new();
    for (i, b) in run.blocks.iter().enumerate() {
        out.push_str(&format!("step {}\n", i + 1));
        let asserted = if b.asserted.is_empty() {
            "-"
        } else {
            &b.asserted
        };
        out.push_str(&format!("  asserted: {}\n", asserted));
        if !b.falsity_queried.is_empty() {
            out.push_str(&format!(
                "  queried (falsity): {}\n",
                b.falsity_queried.join(", ")
            ));
        }
        if !b.truth_queried.is_empty() {
            out.push_str(&format!(
                "  queried (truth): {}\n",
                b.truth_queried.join(", ")
            ));
        }
        let doms: Vec<String> = b
            .domains
            .iter()
            .map(|(name, d)| format!("{name}={d}"))
            .collect();
        out.push_str(&format!("  domains: {}\n", doms.join(" ")));
    }
    if !run.consistent {
        out.push_str("inconsistent\n");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_ranges_and_lists() {
        let text = "\
# comment
x1: 2
x2: 1,3,4
x3: 1..5
y1: 0..2
lex x1..x3 <= y1,y1,y1
";
        let inst = parse_instance(text).unwrap();
        assert_eq!(inst.vars.len(), 4);
        assert_eq!(inst.vars[1], ("x2".to_string(), vec![1, 3, 4]));
        assert_eq!(inst.vars[2].1, vec![1, 2, 3, 4, 5]);
        assert_eq!(inst.xs, vec!["x1", "x2", "x3"]);
        assert_eq!(inst.ys, vec!["y1", "y1", "y1"]);
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(matches!(
            parse_instance("lex a b"),
            Err(TraceError::Line(..))
        ));
        assert!(matches!(parse_instance("x1 2"), Err(TraceError::Line(..))));
        assert!(matches!(
            parse_instance("x1: 5..3\nlex x1 <= x1"),
            Err(TraceError::Line(..))
        ));
        assert!(matches!(
            parse_instance("x1: 1"),
            Err(TraceError::MissingLex)
        ));
    }

    #[test]
    fn domain_rendering() {
        let d = FiniteDomain::from_range(1, 5).unwrap();
        assert_eq!(render_domain(&d), "{1..5}");
        let d = FiniteDomain::from_values([1, 3, 4]).unwrap();
        assert_eq!(render_domain(&d), "{1,3,4}");
        let d = FiniteDomain::singleton(2);
        assert_eq!(render_domain(&d), "{2}");
    }
}
