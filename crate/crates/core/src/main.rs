use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ctrlprop::kernel::Mode;
use ctrlprop::search::{run_bench, write_csv, Family};
use ctrlprop::trace::{parse_instance, render_trace, run_lex_trace};

#[derive(Parser)]
#[command(
    name = "ctrlprop",
    version,
    about = "Finite-domain propagation with controlled decomposition"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Clause,
    Diff,
    Alldiff,
    Lex,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Family {
        match f {
            FamilyArg::Clause => Family::Clause,
            FamilyArg::Diff => Family::Diff,
            FamilyArg::Alldiff => Family::Alldiff,
            FamilyArg::Lex => Family::Lex,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Controlled,
    Uncontrolled,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum TraceFamilyArg {
    Lex,
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run seeded random searches and write one CSV row per seed and mode.
    Bench {
        /// Constraint family to benchmark.
        #[arg(long, value_enum)]
        constraint: FamilyArg,
        /// Main size: clause length, or tuple arity (diff/alldiff/lex).
        #[arg(long)]
        n: usize,
        /// Number of tuples for the alldiff family.
        #[arg(long, default_value_t = 6)]
        tuples: usize,
        /// Initial variable domain, as LO..HI.
        #[arg(long, value_parser = parse_domain, default_value = "0..1")]
        domain: (i64, i64),
        /// First seed; runs use seed, seed+1, …
        #[arg(long)]
        seed: u64,
        /// Number of seeds.
        #[arg(long, default_value_t = 1)]
        runs: u64,
        #[arg(long, value_enum, default_value = "both")]
        mode: ModeArg,
        /// Output CSV file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the propagation trace for a lex instance file.
    Trace {
        #[arg(long, value_enum)]
        constraint: TraceFamilyArg,
        /// Instance file: `name: values` lines and one `lex XS <= YS` line.
        #[arg(long)]
        instance: PathBuf,
        /// Whether each step of the decomposition carries its implied x<=y part.
        #[arg(long, value_enum, default_value = "on")]
        annotated: OnOff,
    },
}

fn parse_domain(s: &str) -> Result<(i64, i64), String> {
    let (lo, hi) = s.split_once("..").ok_or("expected LO..HI")?;
    let lo: i64 = lo.trim().parse().map_err(|_| format!("bad bound `{lo}`"))?;
    let hi: i64 = hi.trim().parse().map_err(|_| format!("bad bound `{hi}`"))?;
    if lo > hi {
        return Err(format!("empty domain {lo}..{hi}"));
    }
    Ok((lo, hi))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.cmd {
        Cmd::Bench {
            constraint,
            n,
            tuples,
            domain,
            seed,
            runs,
            mode,
            out,
        } => {
            let family = Family::from(constraint);
            let modes: &[Mode] = match mode {
                ModeArg::Controlled => &[Mode::Controlled],
                ModeArg::Uncontrolled => &[Mode::Uncontrolled],
                ModeArg::Both => &[Mode::Controlled, Mode::Uncontrolled],
            };
            let mut rows = Vec::new();
            for s in seed..seed + runs {
                for &m in modes {
                    rows.push(run_bench(family, n, tuples, domain, s, m));
                }
            }
            write_csv(&out, &rows).map_err(|e| e.to_string())?;
            eprintln!("wrote {} rows to {}", rows.len(), out.display());
            Ok(())
        }
        Cmd::Trace {
            constraint: TraceFamilyArg::Lex,
            instance,
            annotated,
        } => {
            let text = std::fs::read_to_string(&instance)
                .map_err(|e| format!("{}: {e}", instance.display()))?;
            let inst = parse_instance(&text).map_err(|e| e.to_string())?;
            let run =
                run_lex_trace(&inst, matches!(annotated, OnOff::On)).map_err(|e| e.to_string())?;
            print!("{}", render_trace(&run));
            Ok(())
        }
    }
}
