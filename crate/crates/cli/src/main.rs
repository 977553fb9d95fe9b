//! `amalgam-lab`: runs experiment suites and single operations on field files.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use amalgam_core::amalgam::{amalgam_norm, ExponentConfig};
use amalgam_core::atoms::Atom;
use amalgam_core::czdecomp::atomic_decompose;
use amalgam_core::dual::{campanato_local_norm, DualParams};
use amalgam_core::grid::{GridSpec, LatticeCube};
use amalgam_core::harness::{run_suite, CorpusSizes, ExperimentConfig, Suite, Verdict};
use amalgam_core::io::{read_decomposition, read_field, write_decomposition, write_field, write_field_csv};
use amalgam_core::maximal::{equivalence_report, hl_maximal, hloc_norm, TestFamily};
use amalgam_core::psido::{apply_kernel_path, apply_psido, kernel_tail_fit, psido_atom_bound, symbol_seminorms, SymbolSpec};
use amalgam_core::Error;
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "amalgam-lab", version, about = "Numerical experiments on local Hardy-amalgam spaces")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct SuiteArgs {
    /// JSON experiment config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Record fixture bands instead of asserting them.
    #[arg(long)]
    record_fixtures: bool,
    /// Fixture file to record into or assert against.
    #[arg(long)]
    fixtures: Option<PathBuf>,
    /// Output root; each run writes a fresh subdirectory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    exps: ExpArgs,
    /// Scale every corpus size by this factor.
    #[arg(long)]
    corpus_scale: Option<f64>,
}

#[derive(Args, Clone, Default)]
struct ExpArgs {
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    p: Option<f64>,
    /// Atom exponent; `inf` for ∞.
    #[arg(long)]
    r: Option<f64>,
    #[arg(long)]
    delta: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    dim: Option<usize>,
    /// Window half-width.
    #[arg(long = "L")]
    half_width: Option<usize>,
    /// Cells per unit length (power of two).
    #[arg(long = "M")]
    per_unit: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Amalgam exactness, embeddings, reverse Minkowski.
    Norms(SuiteArgs),
    /// Maximal functions: closed form and equivalences.
    Maximal(SuiteArgs),
    /// Atom generation, uniform bound and domination.
    Atoms(SuiteArgs),
    /// Run the decomposition suite, or decompose `--input` into `--output`.
    Decompose {
        #[command(flatten)]
        suite: SuiteArgs,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Dual norms and pairings.
    Dual(SuiteArgs),
    /// Pseudo-differential suite, or a single operation.
    Psido {
        #[command(flatten)]
        suite: SuiteArgs,
        #[command(subcommand)]
        op: Option<PsidoOp>,
    },
    /// Every suite.
    All(SuiteArgs),
    /// `‖f‖_{q,p}` and `‖f‖_{H_loc^{q,p}}` of a field file.
    Norm {
        input: PathBuf,
        #[command(flatten)]
        exps: ExpArgs,
    },
    /// Maximal-function norms and ratios of a field file; optionally writes 𝔐f.
    MaximalOf {
        input: PathBuf,
        #[command(flatten)]
        exps: ExpArgs,
        /// Write the Hardy–Littlewood maximal function here (`.bin` or `.csv`).
        #[arg(long)]
        hl_output: Option<PathBuf>,
    },
    /// Campanato-type local dual norm of a field file.
    DualNorm {
        input: PathBuf,
        #[command(flatten)]
        exps: ExpArgs,
        /// Averaging exponent r′; `inf` for ∞.
        #[arg(long, default_value_t = 1.0)]
        r_prime: f64,
    },
    /// Reassemble a decomposition directory into a field file.
    Reconstruct {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Subcommand)]
enum PsidoOp {
    /// Apply a symbol (JSON template) to a field.
    Apply {
        #[arg(long)]
        symbol: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Use the kernel path instead of the frequency path.
        #[arg(long)]
        kernel_path: bool,
    },
    /// Fit the kernel tail of a symbol on the current grid.
    Kernel {
        #[arg(long)]
        symbol: PathBuf,
        #[arg(long, default_value_t = 0)]
        beta: usize,
    },
    /// Symbol seminorms and S⁰ verdict.
    Seminorms {
        #[arg(long)]
        symbol: PathBuf,
    },
    /// Image norms of the unit atom on `[0,1)^d` and a few dyadic siblings.
    Bound {
        #[arg(long)]
        symbol: PathBuf,
    },
}

fn exponents(base: ExponentConfig, a: &ExpArgs, dim: usize) -> ExponentConfig {
    let mut e = if a.q.is_some() || a.p.is_some() || a.dim.is_some() {
        ExponentConfig::new(a.q.unwrap_or(base.q), a.p.unwrap_or(base.p), dim)
    } else {
        base
    };
    if let Some(r) = a.r {
        e = e.with_r(r);
    }
    if let Some(d) = a.delta {
        e = e.with_delta(d);
    }
    if let Some(eta) = a.eta {
        e = e.with_eta(eta);
    }
    e
}

fn grid(base: GridSpec, a: &ExpArgs) -> Result<GridSpec> {
    let dim = a.dim.unwrap_or(base.dim);
    let m = a.per_unit.unwrap_or(base.per_unit);
    Ok(GridSpec::new(dim, a.half_width.unwrap_or(base.half_width), m, if base.margin == 0 { 0 } else { m })?)
}

fn suite_config(suite: Suite, a: &SuiteArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &a.config {
        Some(p) => ExperimentConfig::from_json_file(p)?,
        None => ExperimentConfig::default_for(suite),
    };
    cfg.suite = suite;
    cfg.grid = grid(cfg.grid, &a.exps)?;
    cfg.exponents = exponents(cfg.exponents, &a.exps, cfg.grid.dim);
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(o) = &a.out {
        cfg.out_dir = o.clone();
    }
    if a.fixtures.is_some() {
        cfg.fixtures = a.fixtures.clone();
    }
    if let Some(f) = a.corpus_scale {
        cfg.corpus = CorpusSizes::scaled(cfg.corpus, f);
    }
    cfg.record_fixtures |= a.record_fixtures;
    Ok(cfg)
}

/// Exit code 1 when a check fails; errors exit with 2 via `main`.
fn run(suite: Suite, a: &SuiteArgs) -> Result<ExitCode> {
    let cfg = suite_config(suite, a)?;
    let out = run_suite(&cfg)?;
    for c in &out.report.checks {
        let v = if c.verdict == Verdict::Pass { "PASS" } else { "FAIL" };
        println!("[C{:>2}] {v} {} (lhs {:.4e}, rhs {:.4e})", c.criterion, c.name, c.lhs, c.rhs);
    }
    for (k, b) in &out.report.bands {
        println!("[C{:>2}] band {k}: [{:.4e}, {:.4e}]", b.criterion, b.band.min, b.band.max);
    }
    println!("report: {}", out.run_dir.join("report.json").display());
    Ok(if out.report.passed { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn write_any(path: &Path, f: &amalgam_core::grid::SampledField) -> Result<()> {
    if path.extension().is_some_and(|e| e == "csv") {
        write_field_csv(path, f)?;
    } else {
        write_field(path, f)?;
    }
    Ok(())
}

fn symbol(path: &Path) -> Result<SymbolSpec> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| Error::Config { path: format!("{}:{}:{}", path.display(), e.line(), e.column()), reason: e.to_string() }.into())
}

fn field_exponents(a: &ExpArgs, dim: usize) -> ExponentConfig {
    exponents(ExponentConfig::new(a.q.unwrap_or(0.5), a.p.unwrap_or(0.5), dim), &ExpArgs { q: None, p: None, dim: None, ..a.clone() }, dim)
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::Norms(a) => run(Suite::Norms, &a),
        Cmd::Maximal(a) => run(Suite::Maximal, &a),
        Cmd::Atoms(a) => run(Suite::Atoms, &a),
        Cmd::Dual(a) => run(Suite::Dual, &a),
        Cmd::All(a) => run(Suite::All, &a),
        Cmd::Decompose { suite, input: None, .. } => run(Suite::Decompose, &suite),
        Cmd::Decompose { suite, input: Some(input), output } => {
            let Some(output) = output else { bail!("decompose --input needs --output <dir>") };
            let f = read_field(&input)?;
            let e = field_exponents(&suite.exps, f.spec.dim);
            let dec = atomic_decompose(&f, &e)?;
            write_decomposition(&output, &dec)?;
            println!("{}", serde_json::to_string_pretty(&dec.stats)?);
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Reconstruct { input, output } => {
            let dec = read_decomposition(&input)?;
            write_any(&output, &dec.reconstruct())?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Psido { suite, op: None } => run(Suite::Psido, &suite),
        Cmd::Psido { suite, op: Some(op) } => {
            let spec = grid(ExperimentConfig::default_for(Suite::Psido).grid, &suite.exps)?;
            match op {
                PsidoOp::Apply { symbol: s, input, output, kernel_path } => {
                    let sym = symbol(&s)?;
                    let f = read_field(&input)?;
                    let out = if kernel_path { apply_kernel_path(&sym, &f)? } else { apply_psido(&sym, &f)? };
                    write_any(&output, &out)?;
                }
                PsidoOp::Kernel { symbol: s, beta } => {
                    let fit = kernel_tail_fit(&symbol(&s)?, &spec, beta)?;
                    println!("{}", serde_json::to_string_pretty(&fit)?);
                }
                PsidoOp::Seminorms { symbol: s } => {
                    let rep = symbol_seminorms(&symbol(&s)?, &spec, 2, 2)?;
                    println!("{}", serde_json::to_string_pretty(&rep)?);
                }
                PsidoOp::Bound { symbol: s } => {
                    let e = field_exponents(&suite.exps, spec.dim);
                    let atoms = [1.0, 0.5, 0.25]
                        .iter()
                        .map(|&side| amalgam_core::atoms::make_atom(&spec, &LatticeCube::new(vec![0.0; spec.dim], side), e.q, e.r, e.delta, true, 1))
                        .collect::<amalgam_core::Result<Vec<Atom>>>()?;
                    let rep = psido_atom_bound(&symbol(&s)?, &atoms, &e)?;
                    println!("{}", serde_json::to_string_pretty(&rep)?);
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Norm { input, exps } => {
            let f = read_field(&input)?;
            let e = field_exponents(&exps, f.spec.dim);
            let amalgam = amalgam_norm(&f, e.q, e.p);
            let hloc = hloc_norm(&f, e.q, e.p)?;
            println!("{}", serde_json::json!({ "q": e.q, "p": e.p, "amalgam": amalgam, "hloc": hloc }));
            Ok(ExitCode::SUCCESS)
        }
        Cmd::MaximalOf { input, exps, hl_output } => {
            let f = read_field(&input)?;
            let e = field_exponents(&exps, f.spec.dim);
            let rep = equivalence_report(&f, &e, &TestFamily::standard(f.spec.dim, e.n_order))?;
            println!("{}", serde_json::to_string_pretty(&rep)?);
            if let Some(p) = hl_output {
                write_any(&p, &hl_maximal(&f))?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::DualNorm { input, exps, r_prime } => {
            let g = read_field(&input)?;
            let e = field_exponents(&exps, g.spec.dim);
            let rep = campanato_local_norm(&g, &DualParams::new(&g.spec, r_prime, e.delta), e.q, e.p)?;
            println!("{}", serde_json::to_string_pretty(&rep)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
