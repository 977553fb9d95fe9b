//! Experiment orchestration: configs, random corpora, the suites, fixture bands,
//! and report/table/plot-series emission.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::amalgam::{amalgam_norm, embedding_check, reverse_minkowski_check, ExponentConfig, ROUNDING_REL};
use crate::atoms::{atom_uniform_bound, make_atom, pointwise_domination, validate_atom, Atom};
use crate::czdecomp::{
    atomic_decompose, bandlimit_split, coefficient_functional, frequency_mollifier, ppn_quantity, split_ratio, unitcube_decompose,
};
use crate::dual::{bmo_norm, campanato_local_norm, pairing, pairing_experiment, DualParams};
use crate::error::{Error, Result};
use crate::grid::{lq_norm, sample, Convolver, GridSpec, LatticeCube, SampledField};
use crate::maximal::{equivalence_report, hl_maximal, hloc_norm, TestFamily};
use crate::psido::{
    apply_general, apply_kernel_path, apply_multiplier, apply_psido, conv_kernel_experiment, kernel_tail_fit, psido_atom_bound,
    schwartz_multiply_ratio, smoothed_kernel_bounds, symbol_seminorms, ConvKernelSpec, SymbolSpec, SymbolTemplate,
};

/// Slack applied to recorded fixture bands in assert mode.
pub const FIXTURE_SLACK: f64 = 1.25;
/// Exactness tolerance for closed-form and reduction identities.
pub const EXACT_TOL: f64 = 1e-12;
/// Relative reconstruction tolerance of the atomic decomposition.
pub const RECONSTRUCTION_TOL: f64 = 1e-10;
/// Frequency-path vs kernel-path agreement.
pub const PATH_TOL: f64 = 1e-8;
/// Allowed deviation of fitted kernel-tail slopes.
pub const SLOPE_TOL: f64 = 0.15;
/// `bmo(c) = |c|` tolerance.
pub const BMO_TOL: f64 = 1e-10;
/// HL closed-form tolerance at `M = 64` and at `M = 256`.
pub const HL_TOL_COARSE: f64 = 0.02;
pub const HL_TOL_FINE: f64 = 0.005;
/// Bound `K_d` on the overlap of dilated Whitney cubes.
pub fn whitney_overlap_bound(dim: usize) -> usize {
    4usize.pow(dim as u32)
}

/// Named experiment suites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Norms,
    Maximal,
    Atoms,
    Decompose,
    Dual,
    Psido,
    All,
}

impl Suite {
    pub const INDIVIDUAL: [Suite; 6] = [Suite::Norms, Suite::Maximal, Suite::Atoms, Suite::Decompose, Suite::Dual, Suite::Psido];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Norms => "norms",
            Suite::Maximal => "maximal",
            Suite::Atoms => "atoms",
            Suite::Decompose => "decompose",
            Suite::Dual => "dual",
            Suite::Psido => "psido",
            Suite::All => "all",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::INDIVIDUAL.into_iter().chain([Suite::All]).find(|x| x.name() == s)
    }
}

/// Corpus sizes per suite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusSizes {
    pub norm_fields: usize,
    pub minkowski_tuples: usize,
    pub maximal_fields: usize,
    pub split_fields: usize,
    pub atoms: usize,
    pub decompose_fields: usize,
    pub pairs: usize,
    pub psido_atoms: usize,
    pub psido_fields: usize,
}

impl Default for CorpusSizes {
    fn default() -> Self {
        Self {
            norm_fields: 100,
            minkowski_tuples: 200,
            maximal_fields: 50,
            split_fields: 30,
            atoms: 500,
            decompose_fields: 50,
            pairs: 100,
            psido_atoms: 100,
            psido_fields: 4,
        }
    }
}

impl CorpusSizes {
    /// Every corpus scaled by `factor` (at least one element each).
    pub fn scaled(self, factor: f64) -> Self {
        let s = |n: usize| ((n as f64 * factor).ceil() as usize).max(1);
        Self {
            norm_fields: s(self.norm_fields),
            minkowski_tuples: s(self.minkowski_tuples),
            maximal_fields: s(self.maximal_fields),
            split_fields: s(self.split_fields),
            atoms: s(self.atoms),
            decompose_fields: s(self.decompose_fields),
            pairs: s(self.pairs),
            psido_atoms: s(self.psido_atoms),
            psido_fields: s(self.psido_fields),
        }
    }
}

/// Everything that determines a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub suite: Suite,
    pub grid: GridSpec,
    pub exponents: ExponentConfig,
    pub seed: u64,
    #[serde(default)]
    pub corpus: CorpusSizes,
    /// Fixture file; bands are recorded into it or asserted against it.
    pub fixtures: Option<PathBuf>,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub record_fixtures: bool,
}

impl ExperimentConfig {
    /// Desk-scale defaults: `d = 1`, `L = 8`, `M = 64`, `q = p = 1/2`.
    pub fn default_for(suite: Suite) -> Self {
        let grid = GridSpec { dim: 1, half_width: 8, per_unit: 64, margin: 64 };
        Self {
            suite,
            grid,
            exponents: ExponentConfig::new(0.5, 0.5, 1),
            seed: 7,
            corpus: CorpusSizes::default(),
            fixtures: None,
            out_dir: PathBuf::from("out"),
            record_fixtures: false,
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config { path: format!("{}:{}:{}", path.display(), e.line(), e.column()), reason: e.to_string() })
    }

    /// Validates every referenced parameter before any computation, naming the field.
    pub fn validate(&self) -> Result<()> {
        let cfg_err = |path: &str, reason: String| Err(Error::Config { path: path.into(), reason });
        let g = &self.grid;
        if let Err(e) = GridSpec::new(g.dim, g.half_width, g.per_unit, g.margin) {
            return cfg_err("grid", e.to_string());
        }
        if !g.per_unit.is_power_of_two() {
            return cfg_err("grid.per_unit", format!("M must be a power of two, got {}", g.per_unit));
        }
        if let Err(e) = self.exponents.validate(g.dim) {
            return cfg_err("exponents", e.to_string());
        }
        if self.exponents.q > 1.0 || self.exponents.q > self.exponents.p {
            return cfg_err("exponents", "suites need q ≤ 1 and q ≤ p".into());
        }
        Ok(())
    }

    /// SHA-256 over everything that affects results (not paths or the record flag).
    pub fn hash_for(&self, suite: Suite) -> String {
        #[derive(Serialize)]
        struct Keyed<'a> {
            suite: &'a str,
            grid: &'a GridSpec,
            exponents: &'a ExponentConfig,
            seed: u64,
            corpus: &'a CorpusSizes,
        }
        let k = Keyed { suite: suite.name(), grid: &self.grid, exponents: &self.exponents, seed: self.seed, corpus: &self.corpus };
        let bytes = serde_json::to_vec(&k).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Verdict of one assertion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

/// One asserted inequality `lhs ≤ rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    /// Acceptance criterion exercised by this check.
    pub criterion: u8,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: Option<f64>,
    pub verdict: Verdict,
}

impl Check {
    pub fn le(criterion: u8, name: impl Into<String>, lhs: f64, rhs: f64) -> Self {
        let ok = lhs <= rhs;
        Self::with(criterion, name, lhs, rhs, ok)
    }

    pub fn with(criterion: u8, name: impl Into<String>, lhs: f64, rhs: f64, ok: bool) -> Self {
        let ratio = if rhs != 0.0 && rhs.is_finite() { Some(lhs / rhs) } else { None };
        Self { name: name.into(), criterion, lhs, rhs, ratio, verdict: if ok && lhs.is_finite() { Verdict::Pass } else { Verdict::Fail } }
    }

    pub fn holds(criterion: u8, name: impl Into<String>, ok: bool) -> Self {
        Self::with(criterion, name, if ok { 0.0 } else { 1.0 }, 0.0, ok)
    }
}

/// Observed range of a corpus-derived constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub min: f64,
    pub max: f64,
}

impl Band {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let mut it = values.into_iter().filter(|v| v.is_finite());
        let first = it.next()?;
        Some(it.fold(Self { min: first, max: first }, |b, v| Self { min: b.min.min(v), max: b.max.max(v) }))
    }
}

/// A band observation tagged with its criterion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandObservation {
    pub criterion: u8,
    pub band: Band,
}

/// Plot-data series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

/// Result of one suite.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SuiteOutput {
    pub checks: Vec<Check>,
    pub bands: BTreeMap<String, BandObservation>,
    /// Informational scalars (measured constants, sizes).
    pub values: BTreeMap<String, f64>,
    #[serde(skip)]
    pub series: Vec<Series>,
}

impl SuiteOutput {
    fn band(&mut self, criterion: u8, name: &str, values: impl IntoIterator<Item = f64>) {
        if let Some(band) = Band::of(values) {
            self.bands.insert(name.to_string(), BandObservation { criterion, band });
        }
    }

    fn value(&mut self, name: &str, v: f64) {
        self.values.insert(name.to_string(), v);
    }
}

/// Full report of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub suite: String,
    pub config: ExperimentConfigSummary,
    /// Per-suite config hashes.
    pub hashes: BTreeMap<String, String>,
    pub checks: Vec<Check>,
    pub bands: BTreeMap<String, BandObservation>,
    pub values: BTreeMap<String, f64>,
    pub passed: bool,
}

/// Result-relevant part of the config, echoed into the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfigSummary {
    pub grid: GridSpec,
    pub exponents: ExponentConfig,
    pub seed: u64,
    pub corpus: CorpusSizes,
}

/// Recorded fixture bands for one suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteFixture {
    pub config_hash: String,
    pub bands: BTreeMap<String, Band>,
}

/// Fixture file: suite name → recorded bands.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FixtureFile {
    pub suites: BTreeMap<String, SuiteFixture>,
}

impl FixtureFile {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::FixtureMissing(path.display().to_string()));
        }
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// Compares observed bands with the recorded ones under [`FIXTURE_SLACK`].
pub fn assert_bands(out: &SuiteOutput, fixture: &SuiteFixture) -> Vec<Check> {
    let mut checks = Vec::new();
    for (name, obs) in &out.bands {
        match fixture.bands.get(name) {
            Some(rec) => {
                checks.push(Check::le(obs.criterion, format!("band {name} max"), obs.band.max, rec.max.max(0.0) * FIXTURE_SLACK + f64::MIN_POSITIVE));
                let floor = if rec.min >= 0.0 { rec.min / FIXTURE_SLACK } else { rec.min * FIXTURE_SLACK };
                checks.push(Check::le(obs.criterion, format!("band {name} min"), floor, obs.band.min));
            }
            None => checks.push(Check::holds(obs.criterion, format!("band {name} recorded"), false)),
        }
    }
    checks
}

/// Random smooth compactly supported field: a sum of `count` scaled bumps inside the margin.
pub fn random_bump_field(spec: &GridSpec, rng: &mut ChaCha8Rng, count: usize, nonneg: bool) -> SampledField {
    let d = spec.dim;
    let inner = spec.l() - (spec.margin as f64 + 2.0) * spec.h();
    let bumps: Vec<(Vec<f64>, f64, f64, f64)> = (0..count)
        .map(|_| {
            let r = rng.gen_range(0.25..(inner / 3.0).min(2.0));
            let c: Vec<f64> = (0..d).map(|_| rng.gen_range(-(inner - r)..(inner - r))).collect();
            let a = if nonneg { rng.gen_range(0.1..2.0) } else { rng.gen_range(-2.0..2.0) };
            let w = rng.gen_range(0.0..6.0);
            (c, r, a, w)
        })
        .collect();
    sample(*spec, |x| {
        bumps
            .iter()
            .map(|(c, r, a, w)| {
                let y2: f64 = x.iter().zip(c).map(|(xi, ci)| ((xi - ci) / r).powi(2)).sum();
                if y2 >= 1.0 {
                    0.0
                } else {
                    let osc = if nonneg { 1.0 } else { (w * (x[0] - c[0])).cos() };
                    a * (-1.0 / (1.0 - y2)).exp() * osc
                }
            })
            .sum()
    })
    .expect("bump fields are finite")
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn corpus(spec: &GridSpec, seed: u64, stream: u64, n: usize, nonneg: bool) -> Vec<SampledField> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(seed.wrapping_add(i as u64), stream);
            let count = rng.gen_range(1..4);
            random_bump_field(spec, &mut rng, count, nonneg)
        })
        .collect()
}

fn mk_spec(g: &GridSpec, half_width: usize, per_unit: usize) -> GridSpec {
    let margin = if g.margin == 0 { 0 } else { per_unit };
    GridSpec::new(g.dim, half_width, per_unit, margin).expect("valid derived grid")
}

/// Amalgam exactness, embeddings and reverse Minkowski.
pub fn run_norms(cfg: &ExperimentConfig) -> Result<SuiteOutput> {
    let spec = cfg.grid;
    let mut out = SuiteOutput::default();
    let q0 = LatticeCube::new(vec![0.0; spec.dim], 1.0).indicator(&spec);
    let pairs = [(0.5, 0.5), (1.0 / 3.0, 1.0), (2.0, 0.7), (1.0, 2.0)];
    let unit_err = pairs.iter().map(|&(q, p)| (amalgam_norm(&q0, q, p) - 1.0).abs()).fold(0.0, f64::max);
    out.checks.push(Check::le(1, "unit lattice cube has norm one", unit_err, EXACT_TOL));
    let fields = corpus(&spec, cfg.seed, 1, cfg.corpus.norm_fields, false);
    let rows: Vec<(f64, bool)> = fields
        .par_iter()
        .map(|f| -> Result<(f64, bool)> {
            let mut worst = 0.0f64;
            for q in [0.5, 1.0, 2.5] {
                let a = amalgam_norm(f, q, q);
                let b = lq_norm(f, q, None);
                if b > 0.0 {
                    worst = worst.max((a - b).abs() / b);
                }
            }
            let e1 = embedding_check(f, 0.5, 0.5, 1.0, 1.0)?;
            let e2 = embedding_check(f, 1.0, 1.0, 2.0, 3.0)?;
            Ok((worst, e1.holds() && e2.holds()))
        })
        .collect::<Result<_>>()?;
    let worst = rows.iter().map(|r| r.0).fold(0.0, f64::max);
    out.checks.push(Check::le(1, "diagonal amalgam equals Lebesgue norm", worst, EXACT_TOL));
    let emb_fail = rows.iter().filter(|r| !r.1).count();
    out.checks.push(Check::le(1, "embedding inequality violations", emb_fail as f64, 0.0));
    // Reverse Minkowski on nonnegative tuples.
    let mut rm_fail = 0usize;
    for (qi, &(q, p)) in [(0.5, 0.5), (1.0 / 3.0, 1.0)].iter().enumerate() {
        let tuples: Vec<bool> = (0..cfg.corpus.minkowski_tuples)
            .into_par_iter()
            .map(|i| -> Result<bool> {
                let mut rng = rng_for(cfg.seed.wrapping_add(i as u64), 20 + qi as u64);
                let k = rng.gen_range(2..5);
                let fs: Vec<SampledField> = (0..k).map(|_| random_bump_field(&spec, &mut rng, 1, true)).collect();
                Ok(reverse_minkowski_check(&fs, q, p)?.holds)
            })
            .collect::<Result<_>>()?;
        rm_fail += tuples.iter().filter(|ok| !**ok).count();
    }
    out.checks.push(Check::le(2, "reverse Minkowski violations", rm_fail as f64, 0.0));
    let a = LatticeCube::new(vec![0.0; spec.dim], 1.0).indicator(&spec);
    let mut corner = vec![0.0; spec.dim];
    corner[0] = -2.0;
    let b = LatticeCube::new(corner, 1.0).indicator(&spec);
    let two = reverse_minkowski_check(&[a, b], 0.5, 0.5)?;
    out.checks.push(Check::with(2, "two-indicator closed form 2 ≤ 4", two.lhs, two.rhs, two.lhs == 2.0 && two.rhs == 4.0));
    out.value("minkowski_rounding_rel", ROUNDING_REL);
    Ok(out)
}

/// HL closed form, maximal equivalences, and the local/global ordering.
pub fn run_maximal(cfg: &ExperimentConfig) -> Result<SuiteOutput> {
    let mut out = SuiteOutput::default();
    // Closed form for 𝔐χ_[0,1] in one dimension.
    let mut profile = Vec::new();
    for (m, tol) in [(64usize, HL_TOL_COARSE), (256, HL_TOL_FINE)] {
        let s = GridSpec::new(1, 8, m, 0)?;
        let mx = hl_maximal(&LatticeCube::new(vec![0.0], 1.0).indicator(&s));
        let mut worst = 0.0f64;
        for i in 0..s.side_cells() {
            let x = s.coord(i);
            if (1.5..=4.0).contains(&x) {
                let exact = 0.5 / x;
                worst = worst.max((mx.values[i].re - exact).abs() / exact);
                if m == 64 {
                    profile.push(vec![x, mx.values[i].re, exact]);
                }
            }
        }
        out.checks.push(Check::le(3, format!("HL closed form at M={m}"), worst, tol));
    }
    out.series.push(Series { name: "hl_indicator_profile".into(), columns: vec!["x".into(), "maximal".into(), "closed_form".into()], rows: profile });
    // Equivalence ratios.
    let spec = cfg.grid;
    let family = TestFamily::standard(spec.dim, cfg.exponents.n_order);
    let fields = corpus(&spec, cfg.seed, 2, cfg.corpus.maximal_fields, false);
    let reps = fields.par_iter().map(|f| equivalence_report(f, &cfg.exponents, &family)).collect::<Result<Vec<_>>>()?;
    let ordered = reps.iter().filter(|r| r.local_le_global).count();
    out.checks.push(Check::with(4, "local ≤ global pointwise on every field", ordered as f64, reps.len() as f64, ordered == reps.len()));
    if let Some(first) = reps.first() {
        for key in first.ratios.keys() {
            out.band(4, &format!("maximal.{key}"), reps.iter().filter_map(|r| r.ratios[key]));
        }
    }
    Ok(out)
}

/// Atom validation, the uniform bound over a size sweep, and pointwise domination.
pub fn run_atoms(cfg: &ExperimentConfig) -> Result<SuiteOutput> {
    let g = cfg.grid;
    let spec = mk_spec(&g, if g.dim == 1 { 16 } else { g.half_width.max(4) }, g.per_unit);
    let e = cfg.exponents;
    let mut out = SuiteOutput::default();
    let sides: Vec<f64> = if spec.dim == 1 { (-4..=4).map(|k| 2f64.powi(k)).collect() } else { (-2..=2).map(|k| 2f64.powi(k)).collect() };
    let n = cfg.corpus.atoms;
    let atoms = (0..n)
        .into_par_iter()
        .map(|i| -> Result<Atom> {
            let mut rng = rng_for(cfg.seed.wrapping_add(i as u64), 3);
            let side = sides[i % sides.len()];
            let corner = random_corner(&spec, &mut rng, side);
            make_atom(&spec, &LatticeCube::new(corner, side), e.q, e.r, e.delta, true, rng.gen())
        })
        .collect::<Result<Vec<_>>>()?;
    let reports: Vec<_> = atoms.par_iter().map(validate_atom).collect();
    let valid = reports.iter().filter(|r| r.valid).count();
    out.checks.push(Check::with(6, "generated atoms validate", valid as f64, n as f64, valid == n));
    let worst = reports.iter().filter(|r| r.moments_required).map(|r| r.worst_moment / r.moment_tolerance.max(f64::MIN_POSITIVE)).fold(0.0, f64::max);
    out.checks.push(Check::le(6, "moment residual over tolerance", worst, 1.0));
    let ub = atom_uniform_bound(&atoms, e.q, e.p)?;
    out.band(6, "atoms.uniform_bound_sup", [ub.sup]);
    out.value("atoms.uniform_bound_median", ub.median);
    out.series.push(Series {
        name: "atom_norm_vs_side".into(),
        columns: vec!["side".into(), "sup_norm".into()],
        rows: sides.iter().filter_map(|s| ub.sup_by_side.get(&format!("{s:.6}")).map(|v| vec![*s, *v])).collect(),
    });
    let dom = atoms.par_iter().map(pointwise_domination).collect::<Result<Vec<f64>>>()?;
    let c = dom.iter().copied().fold(0.0, f64::max);
    out.checks.push(Check::with(6, "one constant dominates every atom off 4√d Q", c, c, c.is_finite()));
    out.band(6, "atoms.domination_constant", [c]);
    Ok(out)
}

/// Band-limited split, atomic decompositions and unit-cube decompositions.
pub fn run_decompose(cfg: &ExperimentConfig) -> Result<SuiteOutput> {
    let spec = cfg.grid;
    let d = spec.dim;
    let mut out = SuiteOutput::default();
    // Band-limited split.
    let split_fields = corpus(&spec, cfg.seed, 4, cfg.corpus.split_fields, false);
    let split = split_fields
        .par_iter()
        .map(|f| -> Result<(f64, Option<f64>, SampledField)> {
            let (u, v) = bandlimit_split(f)?;
            let conv = Convolver::new(&u)?;
            let mut worst = 0.0f64;
            for t in [2.0, 4.0] {
                worst = worst.max(conv.convolve(&frequency_mollifier(), t)?.sup_norm());
            }
            let ratio = split_ratio(f, &u, &v, cfg.exponents.q, cfg.exponents.p)?;
            Ok((worst, ratio, v))
        })
        .collect::<Result<Vec<_>>>()?;
    let worst = split.iter().map(|s| s.0).fold(0.0, f64::max);
    out.checks.push(Check::le(5, "sup |u ∗ φ_t| for t ∈ {2,4}", worst, EXACT_TOL));
    out.band(5, "decompose.split_ratio", split.iter().filter_map(|s| s.1));
    // Unit-cube decompositions of the low-frequency parts.
    let mut exact_fail = 0usize;
    let mut atom_fail = 0usize;
    let mut neighbor = 0usize;
    let mut ppn = Vec::new();
    for (_, _, v) in &split {
        let dec = unitcube_decompose(v);
        neighbor = neighbor.max(dec.max_neighbors);
        let back = dec.resum(&v.spec);
        exact_fail += back.values.iter().zip(&v.values).filter(|(a, b)| (*a - *b).norm() > f64::EPSILON * b.norm()).count();
        for p in &dec.pieces {
            let a = Atom { field: p.atom.to_field(&v.spec), cube: p.cube.clone(), q: cfg.exponents.q, r: f64::INFINITY, delta: cfg.exponents.delta, local: true };
            let rep = validate_atom(&a);
            if !rep.valid || p.cube.volume() != 1.0 {
                atom_fail += 1;
            }
        }
        let nv = hloc_norm(v, cfg.exponents.q, cfg.exponents.p)?;
        if nv > 0.0 {
            ppn.push(ppn_quantity(v, cfg.exponents.q / 2.0, cfg.exponents.q, cfg.exponents.p) / nv);
        }
    }
    out.checks.push(Check::le(8, "unit-cube resummation mismatches", exact_fail as f64, 0.0));
    out.checks.push(Check::le(8, "unit-cube pieces failing local-atom validation", atom_fail as f64, 0.0));
    let bound = 3usize.pow(d as u32);
    out.checks.push(Check::with(8, "unit-cube neighbor count ≤ 3^d", neighbor as f64, bound as f64, neighbor <= bound && (split.is_empty() || neighbor == bound)));
    out.band(8, "decompose.ppn_ratio", ppn);
    // Atomic decompositions.
    let fields = corpus(&spec, cfg.seed, 5, cfg.corpus.decompose_fields, false);
    let mut lambda_rows: BTreeMap<(usize, i32), (f64, f64)> = BTreeMap::new();
    for (ci, (q, p, eta)) in [(0.5, 0.5, 0.25), (1.0, 1.0, 0.5)].into_iter().enumerate() {
        let ec = ExponentConfig::new(q, p, d).with_eta(eta);
        let results = fields
            .par_iter()
            .map(|f| -> Result<(f64, Option<f64>, crate::czdecomp::DecompositionStats, Vec<(i32, f64)>)> {
                let dec = atomic_decompose(f, &ec)?;
                let cf = coefficient_functional(&spec, &dec.coefficient_list(), q, p, eta);
                let norm = hloc_norm(f, q, p)?;
                let ratio = if norm > 0.0 { Some(cf / norm) } else { None };
                let lam = dec.entries.iter().map(|e| (e.j, e.lambda)).collect();
                Ok((dec.stats.reconstruction_error, ratio, dec.stats, lam))
            })
            .collect::<Result<Vec<_>>>()?;
        let tag = format!("q{q}_p{p}_eta{eta}");
        let rec = results.iter().map(|r| r.0).fold(0.0, f64::max);
        out.checks.push(Check::le(7, format!("reconstruction error ({tag})"), rec, RECONSTRUCTION_TOL));
        out.band(7, &format!("decompose.functional_over_norm.{tag}"), results.iter().filter_map(|r| r.1));
        let st = |f: &dyn Fn(&crate::czdecomp::DecompositionStats) -> usize| results.iter().map(|r| f(&r.2)).sum::<usize>();
        out.checks.push(Check::le(7, format!("Whitney union violations ({tag})"), st(&|s| s.whitney_union_violations) as f64, 0.0));
        out.checks.push(Check::le(7, format!("Whitney 9d-dilation misses ({tag})"), st(&|s| s.whitney_complement_violations) as f64, 0.0));
        out.checks.push(Check::le(7, format!("nonzero c_k^l on disjoint cubes ({tag})"), st(&|s| s.c_disjoint_violations) as f64, 0.0));
        let kd = results.iter().map(|r| r.2.k_d).max().unwrap_or(0);
        out.checks.push(Check::le(7, format!("Whitney overlap ≤ K_d ({tag})"), kd as f64, whitney_overlap_bound(d) as f64));
        out.value(&format!("decompose.c0.{tag}"), results.iter().map(|r| r.2.c0).fold(0.0, f64::max));
        out.value(&format!("decompose.c1.{tag}"), results.iter().map(|r| r.2.c1).fold(0.0, f64::max));
        out.value(&format!("decompose.atoms.{tag}"), results.iter().map(|r| r.2.n_atoms).sum::<usize>() as f64);
        for r in &results {
            for &(j, l) in &r.3 {
                let e = lambda_rows.entry((ci, j)).or_default();
                e.0 += 1.0;
                e.1 += l;
            }
        }
    }
    out.series.push(Series {
        name: "lambda_by_level".into(),
        columns: vec!["config".into(), "j".into(), "count".into(), "lambda_sum".into()],
        rows: lambda_rows.into_iter().map(|((c, j), (n, s))| vec![c as f64, j as f64, n, s]).collect(),
    });
    Ok(out)
}

/// Grid-aligned corner keeping a cube of `side` one cell clear of the margin.
fn random_corner(spec: &GridSpec, rng: &mut ChaCha8Rng, side: f64) -> Vec<f64> {
    let lo = -spec.l() + (spec.margin as f64 + 1.0) * spec.h();
    let hi = spec.l() - (spec.margin as f64 + 1.0) * spec.h() - side;
    assert!(hi > lo, "cube of side {side} does not fit the window");
    (0..spec.dim).map(|_| (rng.gen_range(lo..hi) / spec.h()).round() * spec.h()).collect()
}

fn random_atom_combo(spec: &GridSpec, rng: &mut ChaCha8Rng, e: &ExponentConfig, count: usize, small_only: bool) -> Result<Vec<(f64, Atom)>> {
    let mut atoms = Vec::new();
    for _ in 0..count {
        // Smallest side spans four cells so every moment system is well posed.
        let k_min = (-3).max(2 - (spec.per_unit as f64).log2() as i32);
        let k: i32 = if small_only { rng.gen_range(k_min..0) } else { rng.gen_range(k_min..2) };
        let side = 2f64.powi(k);
        let corner = random_corner(spec, rng, side);
        let a = make_atom(spec, &LatticeCube::new(corner, side), e.q, e.r, e.delta, true, rng.gen())?;
        atoms.push((rng.gen_range(-1.0..1.0), a));
    }
    Ok(atoms)
}

fn random_dual_field(spec: &GridSpec, rng: &mut ChaCha8Rng) -> SampledField {
    let c: f64 = rng.gen_range(-2.0..2.0);
    let w: f64 = rng.gen_range(0.5..4.0);
    let a: f64 = rng.gen_range(-1.0..1.0);
    let h = spec.h();
    sample(*spec, |x| a + ((x[0] - c).abs() + h).ln().max(-4.0) * 0.3 + (w * x[0]).sin()).expect("finite")
}

/// Dual norms and pairing experiments.
pub fn run_dual(cfg: &ExperimentConfig) -> Result<SuiteOutput> {
    let spec = cfg.grid;
    let d = spec.dim;
    let mut out = SuiteOutput::default();
    let worst_const = [1.0, -2.5, 0.125]
        .iter()
        .map(|&c| -> Result<f64> { Ok((bmo_norm(&sample(spec, |_| c)?)?.value - f64::abs(c)).abs()) })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    out.checks.push(Check::le(9, "bmo of a constant equals its modulus", worst_const, BMO_TOL));
    let delta = cfg.exponents.delta.max(1);
    let poly = sample(spec, |x| 0.7 - 0.4 * x[0] + if delta >= 2 { 0.05 * x[0] * x[0] } else { 0.0 })?;
    let rep = campanato_local_norm(&poly, &DualParams::new(&spec, 2.0, delta), cfg.exponents.q, cfg.exponents.p)?;
    out.checks.push(Check::le(9, "small-cube sup vanishes on polynomials", rep.small, 1e-10 * poly.sup_norm()));
    let mut worst_zero = 0.0f64;
    for (ci, (q, p)) in [(1.0, 1.0), (0.5, 0.5)].into_iter().enumerate() {
        let ec = ExponentConfig::new(q, p, d);
        let params = DualParams::new(&spec, 2.0, ec.delta);
        let ratios = (0..cfg.corpus.pairs)
            .into_par_iter()
            .map(|i| -> Result<(Option<f64>, f64)> {
                let mut rng = rng_for(cfg.seed.wrapping_add(i as u64), 30 + ci as u64);
                let g = random_dual_field(&spec, &mut rng);
                let n = rng.gen_range(1..4);
                let combo = random_atom_combo(&spec, &mut rng, &ec, n, false)?;
                let rep = pairing_experiment(&g, &combo, &params, &ec)?;
                // Constant against a small-cube atom.
                let small = random_atom_combo(&spec, &mut rng, &ec, 1, true)?;
                let a = &small[0].1;
                let c: f64 = rng.gen_range(-3.0..3.0);
                let tol = crate::atoms::moment_tolerance(&a.field, &a.cube, a.delta) * c.abs();
                let z = pairing(&sample(spec, |_| c)?, &a.field).norm();
                Ok((rep.ratio, if tol > 0.0 { z / tol } else { z }))
            })
            .collect::<Result<Vec<_>>>()?;
        out.band(9, &format!("dual.pairing_ratio.q{q}_p{p}"), ratios.iter().filter_map(|r| r.0));
        worst_zero = ratios.iter().map(|r| r.1).fold(worst_zero, f64::max);
    }
    out.checks.push(Check::le(9, "constant pairs to zero against small-cube atoms", worst_zero, 1.0));
    Ok(out)
}

/// Pseudo-differential suite.
pub fn run_psido(cfg: &ExperimentConfig) -> Result<SuiteOutput> {
    let spec = cfg.grid;
    let d = spec.dim;
    let e = cfg.exponents;
    let mut out = SuiteOutput::default();
    let fields = corpus(&spec, cfg.seed, 6, cfg.corpus.psido_fields, false);
    // Reductions.
    let mut red = 0.0f64;
    let mut path = 0.0f64;
    for f in &fields {
        let s = f.sup_norm().max(f64::MIN_POSITIVE);
        red = red.max(apply_general(&SymbolSpec::new(SymbolTemplate::Identity), f)?.sub(f).sup_norm() / s);
        let m = SymbolSpec::new(SymbolTemplate::Multiplier);
        let fm = apply_multiplier(&m, f);
        red = red.max(apply_general(&m, f)?.sub(&fm).sup_norm() / fm.sup_norm().max(f64::MIN_POSITIVE));
        let xg = SymbolSpec::new(SymbolTemplate::XGaussian { width: 2.0 });
        red = red.max(apply_general(&xg, f)?.sub(&apply_psido(&xg, f)?).sup_norm() / s);
        let mixed = SymbolSpec::new(SymbolTemplate::Mixed { a: 0.5 });
        let a = apply_general(&mixed, f)?;
        let b = apply_kernel_path(&mixed, f)?;
        path = path.max(a.sub(&b).sup_norm() / a.sup_norm().max(f64::MIN_POSITIVE));
    }
    out.checks.push(Check::le(10, "identity / multiplier / x-only reductions", red, EXACT_TOL));
    out.checks.push(Check::le(10, "frequency path vs kernel path", path, PATH_TOL));
    // Classification.
    let positives = [SymbolTemplate::Identity, SymbolTemplate::BesselLike, SymbolTemplate::Mixed { a: 0.5 }];
    let negatives = [SymbolTemplate::Polynomial, SymbolTemplate::Translation { c: 0.5 }];
    let mut correct = 0usize;
    for t in positives {
        correct += usize::from(symbol_seminorms(&SymbolSpec::new(t), &spec, 2, 2)?.in_class);
    }
    for t in negatives {
        correct += usize::from(!symbol_seminorms(&SymbolSpec::new(t), &spec, 2, 2)?.in_class);
    }
    out.checks.push(Check::with(10, "S⁰ classification of control symbols", correct as f64, 5.0, correct == 5));
    // Kernel tails.
    let riesz = SymbolSpec::new(SymbolTemplate::RieszType { a: 0.5 });
    let tail_spec = if spec.dim == 1 { spec } else { GridSpec::new(1, spec.half_width.max(8), spec.per_unit.max(64), 0)? };
    for beta in [0usize, 1] {
        let fit = kernel_tail_fit(&riesz, &tail_spec, beta)?;
        out.checks.push(Check::le(10, format!("kernel tail slope error (β={beta})"), fit.slope_error(), SLOPE_TOL));
        out.series.push(Series {
            name: format!("kernel_tail_beta{beta}"),
            columns: vec!["z".into(), "abs_kernel".into()],
            rows: fit.points.iter().map(|p| vec![p.0, p.1]).collect(),
        });
    }
    let ts = [1.0, 0.5, 0.25];
    let s0 = smoothed_kernel_bounds(&riesz, &tail_spec, &ts, 0)?;
    let s1 = smoothed_kernel_bounds(&riesz, &tail_spec, &ts, 1)?;
    out.band(10, "psido.smoothed_kernel_spread.beta0", [s0.spread]);
    out.band(10, "psido.smoothed_kernel_spread.beta1", [s1.spread]);
    let slope_gap = s0.fits.iter().zip(&s1.fits).map(|(a, b)| ((a.1.slope - b.1.slope) - 1.0).abs()).fold(0.0, f64::max);
    out.value("psido.smoothed_kernel_slope_gap", slope_gap);
    // Atomwise bounds.
    let atoms = (0..cfg.corpus.psido_atoms)
        .into_par_iter()
        .map(|i| -> Result<Atom> {
            let mut rng = rng_for(cfg.seed.wrapping_add(i as u64), 7);
            Ok(random_atom_combo(&spec, &mut rng, &e, 1, false)?.remove(0).1)
        })
        .collect::<Result<Vec<_>>>()?;
    let id = psido_atom_bound(&SymbolSpec::new(SymbolTemplate::Identity), &atoms, &e)?;
    let ub = atom_uniform_bound(&atoms, e.q, e.p)?;
    let same = id.per_atom.iter().zip(&ub.per_atom).all(|(a, b)| a.norm == b.norm);
    out.checks.push(Check::holds(10, "identity symbol reproduces the atom norms exactly", same));
    let mixed = psido_atom_bound(&SymbolSpec::new(SymbolTemplate::Mixed { a: 0.5 }), &atoms, &e)?;
    out.band(10, "psido.atom_bound_sup", [mixed.sup]);
    out.band(10, "psido.atom_domination", [mixed.fitted_c]);
    // Convolution kernels.
    let ks = ConvKernelSpec::power_tail(1.0, e.q, d);
    let conv = conv_kernel_experiment(&ks, &atoms, &e, &spec)?;
    out.checks.push(Check::holds(10, "γ=1 convolution kernel passes its declared conditions", conv.branch == "main"));
    out.band(10, "psido.conv_kernel_sup", [conv.bound.sup]);
    let thr = crate::psido::weakened_gamma_threshold(e.q, d);
    let below = ConvKernelSpec { gamma: thr * 0.5, ..ks };
    let refused = matches!(conv_kernel_experiment(&below, &atoms[..1.min(atoms.len())], &e, &spec), Err(Error::Precondition(_)));
    out.checks.push(Check::holds(10, "γ below the weakened threshold is refused", refused));
    // Schwartz multiplication.
    let phi = sample(spec, |x| (-x.iter().map(|v| v * v).sum::<f64>() / 4.0).exp())?;
    let ratios = atoms.par_iter().map(|a| schwartz_multiply_ratio(&phi, &a.field, e.q, e.p)).collect::<Result<Vec<_>>>()?;
    out.band(10, "psido.schwartz_ratio", ratios.into_iter().flatten());
    Ok(out)
}

/// Runs one suite without fixture handling.
pub fn run_single(cfg: &ExperimentConfig, suite: Suite) -> Result<SuiteOutput> {
    match suite {
        Suite::Norms => run_norms(cfg),
        Suite::Maximal => run_maximal(cfg),
        Suite::Atoms => run_atoms(cfg),
        Suite::Decompose => run_decompose(cfg),
        Suite::Dual => run_dual(cfg),
        Suite::Psido => run_psido(cfg),
        Suite::All => unreachable!("`all` is expanded by run_suite"),
    }
}

/// Outcome of [`run_suite`].
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: Report,
    pub run_dir: PathBuf,
}

/// Validates the config, runs the suite(s), records or asserts fixture bands, and
/// writes `report.json`, `tables.csv` and plot series into a fresh run directory.
pub fn run_suite(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let suites: Vec<Suite> = if cfg.suite == Suite::All { Suite::INDIVIDUAL.to_vec() } else { vec![cfg.suite] };
    let mut fixtures = match (&cfg.fixtures, cfg.record_fixtures) {
        (Some(p), true) => FixtureFile::load(p).unwrap_or_default(),
        (Some(p), false) => FixtureFile::load(p)?,
        (None, true) => return Err(Error::Config { path: "fixtures".into(), reason: "record mode needs a fixture path".into() }),
        (None, false) => FixtureFile::default(),
    };
    let mut checks = Vec::new();
    let mut bands = BTreeMap::new();
    let mut values = BTreeMap::new();
    let mut series = Vec::new();
    let mut hashes = BTreeMap::new();
    // Missing and stale fixtures are detected before any computation.
    if let (false, Some(path)) = (cfg.record_fixtures, &cfg.fixtures) {
        for &suite in &suites {
            let hash = cfg.hash_for(suite);
            match fixtures.suites.get(suite.name()) {
                None => return Err(Error::FixtureMissing(format!("{} (suite {})", path.display(), suite.name()))),
                Some(f) if f.config_hash != hash => return Err(Error::StaleFixture { recorded: f.config_hash.clone(), current: hash }),
                Some(_) => {}
            }
        }
    }
    for suite in suites {
        let hash = cfg.hash_for(suite);
        let out = run_single(cfg, suite)?;
        if cfg.record_fixtures {
            fixtures.suites.insert(
                suite.name().to_string(),
                SuiteFixture { config_hash: hash.clone(), bands: out.bands.iter().map(|(k, v)| (k.clone(), v.band)).collect() },
            );
        } else if cfg.fixtures.is_some() {
            checks.extend(assert_bands(&out, &fixtures.suites[suite.name()]));
        }
        hashes.insert(suite.name().to_string(), hash);
        checks.extend(out.checks);
        bands.extend(out.bands);
        values.extend(out.values);
        series.extend(out.series);
    }
    if cfg.record_fixtures {
        fixtures.save(cfg.fixtures.as_ref().unwrap())?;
    }
    let passed = checks.iter().all(|c| c.verdict == Verdict::Pass);
    let report = Report {
        suite: cfg.suite.name().to_string(),
        config: ExperimentConfigSummary { grid: cfg.grid, exponents: cfg.exponents, seed: cfg.seed, corpus: cfg.corpus },
        hashes,
        checks,
        bands,
        values,
        passed,
    };
    let run_dir = next_run_dir(&cfg.out_dir, cfg.suite.name(), &cfg.hash_for(cfg.suite))?;
    write_report(&run_dir, &report, &series)?;
    Ok(RunOutcome { report, run_dir })
}

/// `out/<suite>-<hash12>-<n>` with the first unused `n`.
pub fn next_run_dir(out: &Path, suite: &str, hash: &str) -> Result<PathBuf> {
    fs::create_dir_all(out)?;
    for n in 0.. {
        let p = out.join(format!("{suite}-{}-{n}", &hash[..12]));
        if !p.exists() {
            fs::create_dir_all(&p)?;
            return Ok(p);
        }
    }
    unreachable!()
}

/// Writes `report.json`, `tables.csv` and one `series_<name>.csv` per plot series.
pub fn write_report(dir: &Path, report: &Report, series: &[Series]) -> Result<()> {
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(report)? + "\n")?;
    let mut w = csv::Writer::from_path(dir.join("tables.csv")).map_err(|e| Error::Format(e.to_string()))?;
    let rec = |w: &mut csv::Writer<fs::File>, r: &[String]| w.write_record(r).map_err(|e| Error::Format(e.to_string()));
    rec(&mut w, &["criterion", "name", "lhs", "rhs", "ratio", "verdict"].map(String::from))?;
    for c in &report.checks {
        let verdict = if c.verdict == Verdict::Pass { "pass" } else { "fail" };
        rec(&mut w, &[c.criterion.to_string(), c.name.clone(), c.lhs.to_string(), c.rhs.to_string(), c.ratio.map(|r| r.to_string()).unwrap_or_default(), verdict.into()])?;
    }
    w.flush()?;
    emit_plots(dir, series)
}

/// One CSV file per series; nothing is written for an empty list.
pub fn emit_plots(dir: &Path, series: &[Series]) -> Result<()> {
    for s in series {
        let mut w = csv::Writer::from_path(dir.join(format!("series_{}.csv", s.name))).map_err(|e| Error::Format(e.to_string()))?;
        w.write_record(&s.columns).map_err(|e| Error::Format(e.to_string()))?;
        for r in &s.rows {
            w.write_record(r.iter().map(|v| v.to_string())).map_err(|e| Error::Format(e.to_string()))?;
        }
        w.flush()?;
    }
    Ok(())
}

/// Complex zero, re-exported for callers building fields by hand.
pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_ignores_paths_and_mode() {
        let a = ExperimentConfig::default_for(Suite::Norms);
        let mut b = a.clone();
        b.out_dir = "elsewhere".into();
        b.record_fixtures = true;
        assert_eq!(a.hash_for(Suite::Norms), b.hash_for(Suite::Norms));
        b.grid.per_unit = 32;
        assert_ne!(a.hash_for(Suite::Norms), b.hash_for(Suite::Norms));
    }

    #[test]
    fn invalid_config_names_the_field() {
        let mut c = ExperimentConfig::default_for(Suite::Norms);
        c.grid.per_unit = 48;
        assert!(matches!(c.validate(), Err(Error::Config { path, .. }) if path == "grid.per_unit"));
    }

    #[test]
    fn bands_and_slack() {
        let mut out = SuiteOutput::default();
        out.band(1, "x", [1.0, 2.0]);
        let fx = SuiteFixture { config_hash: String::new(), bands: [("x".to_string(), Band { min: 1.0, max: 1.7 })].into() };
        assert!(assert_bands(&out, &fx).iter().all(|c| c.verdict == Verdict::Pass));
        let tight = SuiteFixture { config_hash: String::new(), bands: [("x".to_string(), Band { min: 1.0, max: 1.5 })].into() };
        assert!(assert_bands(&out, &tight).iter().any(|c| c.verdict == Verdict::Fail));
    }

    #[test]
    fn empty_norm_corpus_passes() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = ExperimentConfig::default_for(Suite::Norms);
        c.corpus.norm_fields = 0;
        c.corpus.minkowski_tuples = 0;
        c.out_dir = dir.path().to_path_buf();
        let run = run_suite(&c).unwrap();
        assert!(run.report.passed);
        assert!(run.run_dir.join("report.json").exists());
    }
}
