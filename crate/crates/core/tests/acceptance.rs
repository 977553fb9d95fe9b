//! Acceptance run: every suite at the default desk-scale config (d = 1, L = 8,
//! M = 64) against the recorded fixture bands, plus a two-dimensional smoke run
//! at L = 4, M = 16. Prints one pass/fail line per criterion.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use amalgam_core::grid::GridSpec;
use amalgam_core::harness::{run_suite, Check, ExperimentConfig, Suite, Verdict};
use amalgam_core::amalgam::ExponentConfig;

/// Runtime budgets of the norms, decomposition and pseudo-differential criteria.
const NORMS_BUDGET: Duration = Duration::from_secs(10);
const DECOMPOSE_BUDGET: Duration = Duration::from_secs(300);
const PSIDO_BUDGET: Duration = Duration::from_secs(300);
/// Corpus scale of the two-dimensional smoke run.
const SMOKE_SCALE: f64 = 0.1;

const TITLES: [&str; 10] = [
    "amalgam exactness and embeddings",
    "reverse Minkowski",
    "Hardy-Littlewood closed form",
    "maximal equivalence bands",
    "band-limited split",
    "atom generation, uniform bound, domination",
    "atomic decomposition round trip",
    "unit-cube decomposition",
    "dual norms and pairings",
    "pseudo-differential operators",
];

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn run(cfg: ExperimentConfig) -> (Vec<Check>, Duration) {
    let t = Instant::now();
    match run_suite(&cfg) {
        Ok(out) => (out.report.checks, t.elapsed()),
        Err(e) => {
            let criteria: &[u8] = match cfg.suite {
                Suite::Norms => &[1, 2],
                Suite::Maximal => &[3, 4],
                Suite::Atoms => &[6],
                Suite::Decompose => &[5, 7, 8],
                Suite::Dual => &[9],
                Suite::Psido => &[10],
                Suite::All => &[1, 2, 3, 4, 5, 6, 7, 8, 9, 10],
            };
            let failed = criteria.iter().map(|&c| Check::holds(c, format!("suite {} ran: {e}", cfg.suite.name()), false)).collect();
            (failed, t.elapsed())
        }
    }
}

fn main() -> ExitCode {
    let out = tempfile::tempdir().expect("temp dir");
    let mut checks: BTreeMap<u8, Vec<Check>> = BTreeMap::new();
    let budget = |c: u8, name: &str, took: Duration, limit: Duration| {
        Check::le(c, format!("{name} runtime (s)"), took.as_secs_f64(), limit.as_secs_f64())
    };
    let mut extra = Vec::new();
    for suite in Suite::INDIVIDUAL {
        let mut cfg = ExperimentConfig::default_for(suite);
        cfg.fixtures = Some(fixture("acceptance.json"));
        cfg.out_dir = out.path().join("d1");
        let (cs, took) = run(cfg);
        match suite {
            Suite::Norms => extra.push(budget(1, "norms suite", took, NORMS_BUDGET)),
            Suite::Decompose => extra.push(budget(7, "decompose suite", took, DECOMPOSE_BUDGET)),
            Suite::Psido => extra.push(budget(10, "psido suite", took, PSIDO_BUDGET)),
            _ => {}
        }
        println!("  {:<10} d=1 {:>7.2}s", suite.name(), took.as_secs_f64());
        for c in cs {
            checks.entry(c.criterion).or_default().push(c);
        }
    }
    for suite in Suite::INDIVIDUAL {
        let mut cfg = ExperimentConfig::default_for(suite);
        cfg.grid = GridSpec::new(2, 4, 16, 16).expect("smoke grid");
        cfg.exponents = ExponentConfig::new(0.5, 0.5, 2);
        cfg.corpus = cfg.corpus.scaled(SMOKE_SCALE);
        cfg.fixtures = Some(fixture("smoke_2d.json"));
        cfg.out_dir = out.path().join("d2");
        let (cs, took) = run(cfg);
        println!("  {:<10} d=2 {:>7.2}s", suite.name(), took.as_secs_f64());
        for mut c in cs {
            c.name = format!("[d=2] {}", c.name);
            checks.entry(c.criterion).or_default().push(c);
        }
    }
    for c in extra {
        checks.entry(c.criterion).or_default().push(c);
    }
    let mut all_pass = true;
    for (i, title) in TITLES.iter().enumerate() {
        let n = i as u8 + 1;
        let cs = checks.get(&n).map(Vec::as_slice).unwrap_or(&[]);
        let failed: Vec<&Check> = cs.iter().filter(|c| c.verdict == Verdict::Fail).collect();
        let pass = !cs.is_empty() && failed.is_empty();
        all_pass &= pass;
        println!("criterion {n:>2} {}: {title} ({} checks)", if pass { "PASS" } else { "FAIL" }, cs.len());
        for c in failed {
            println!("    failed: {} (lhs {:e}, rhs {:e})", c.name, c.lhs, c.rhs);
        }
    }
    if all_pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
