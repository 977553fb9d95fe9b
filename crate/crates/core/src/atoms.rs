//! Local atoms and molecules: validators, a generator with prescribed vanishing
//! moments, and the uniform `H_loc^(q,p)` bound and pointwise domination experiments.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{lq_norm, GridSpec, LatticeCube, SampledField};
use crate::maximal::{hl_maximal, smooth_maximal, MaximalParams};
use crate::poly::{exponents, monomial, project_cells};
use crate::amalgam::amalgam_norm_of_magnitudes;
use crate::grid::Kernel;

/// Relative slack on the atom size bound.
pub const SIZE_SLACK: f64 = 1e-9;
/// Relative moment tolerance, scaled by `‖a‖_1 (1+ℓ_Q)^δ`.
pub const MOMENT_REL: f64 = 1e-10;
/// Resampling budget of [`make_atom`].
pub const MAX_RETRIES: usize = 32;

/// A candidate `(q, r, δ)`-atom.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub field: SampledField,
    pub cube: LatticeCube,
    pub q: f64,
    pub r: f64,
    pub delta: usize,
    /// Local atoms waive the moment condition when `|Q| ≥ 1`.
    pub local: bool,
}

impl Atom {
    pub fn moments_required(&self) -> bool {
        !self.local || self.cube.volume() < 1.0
    }
}

/// Outcome of [`validate_atom`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomReport {
    pub support_ok: bool,
    pub size_ok: bool,
    pub size_lhs: f64,
    pub size_rhs: f64,
    pub moments_required: bool,
    pub moments_ok: bool,
    /// Largest `|∫ (x - x_Q)^β a|` over `|β| ≤ δ`.
    pub worst_moment: f64,
    /// Multi-index attaining `worst_moment`.
    pub worst_beta: [usize; 2],
    pub moment_tolerance: f64,
    pub valid: bool,
}

/// Largest centered moment of a field against `P_δ` and the index attaining it.
pub fn worst_moment(field: &SampledField, center: &[f64], delta: usize) -> (f64, [usize; 2]) {
    let spec = &field.spec;
    let d = spec.dim;
    let support = field.support();
    let mut worst = (0.0, [0, 0]);
    for b in exponents(d, delta) {
        let m: Complex64 = support
            .iter()
            .map(|&i| field.values[i] * monomial(b, &spec.center(i)[..d], center, 1.0))
            .sum::<Complex64>()
            * spec.cell_volume();
        if m.norm() > worst.0 || (worst.0 == 0.0 && b == [0, 0]) {
            worst = (m.norm(), b);
        }
    }
    worst
}

/// `ε_mom = 1e-10 ‖a‖_1 (1+ℓ_Q)^δ`.
pub fn moment_tolerance(field: &SampledField, cube: &LatticeCube, delta: usize) -> f64 {
    MOMENT_REL * lq_norm(field, 1.0, None) * (1.0 + cube.side).powi(delta as i32)
}

/// Checks support, size and (when required) vanishing moments.
pub fn validate_atom(a: &Atom) -> AtomReport {
    let spec = &a.field.spec;
    let inside: std::collections::HashSet<usize> = a.cube.cells(spec).into_iter().collect();
    let support_ok = a.field.support().iter().all(|i| inside.contains(i));
    let size_lhs = lq_norm(&a.field, a.r, Some(&a.cube));
    let size_rhs = a.cube.volume().powf(1.0 / a.r - 1.0 / a.q);
    let size_ok = size_lhs <= size_rhs * (1.0 + SIZE_SLACK);
    let moments_required = a.moments_required();
    let (worst_moment, worst_beta) = worst_moment(&a.field, &a.cube.center(), a.delta);
    let moment_tolerance = moment_tolerance(&a.field, &a.cube, a.delta);
    let moments_ok = worst_moment <= moment_tolerance;
    let valid = support_ok && size_ok && (!moments_required || moments_ok);
    AtomReport { support_ok, size_ok, size_lhs, size_rhs, moments_required, moments_ok, worst_moment, worst_beta, moment_tolerance, valid }
}

fn bump1(t: f64) -> f64 {
    if t.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - t * t)).exp()
    }
}

/// Product bump supported strictly inside the cube (radius 0.95 of the half-side per axis).
pub fn interior_weight(x: &[f64], cube: &LatticeCube) -> f64 {
    let c = cube.center();
    let rad = 0.95 * cube.side / 2.0;
    x.iter().zip(&c).map(|(xi, ci)| bump1((xi - ci) / rad)).product()
}

/// Draws a smooth random atom on `cube`: a random trigonometric profile times an interior
/// bump, with its weighted `P_δ` projection removed when moments are required, rescaled so
/// that `‖a‖_r = |Q|^{1/r-1/q}`.
pub fn make_atom(spec: &GridSpec, cube: &LatticeCube, q: f64, r: f64, delta: usize, local: bool, seed: u64) -> Result<Atom> {
    let cells = cube.cells(spec);
    let d = spec.dim;
    let center = cube.center();
    let weights: Vec<f64> = cells.iter().map(|&i| interior_weight(&spec.center(i)[..d], cube)).collect();
    let support: Vec<usize> = (0..cells.len()).filter(|&k| weights[k] > 0.0).collect();
    let cells: Vec<usize> = support.iter().map(|&k| cells[k]).collect();
    let weights: Vec<f64> = support.iter().map(|&k| weights[k]).collect();
    let needs_moments = !local || cube.volume() < 1.0;
    for attempt in 0..MAX_RETRIES {
        if cells.is_empty() {
            break;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt as u64));
        let modes: Vec<(f64, f64, f64, f64)> = (0..3)
            .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(0.0..3.0), rng.gen_range(0.0..3.0), rng.gen_range(0.0..std::f64::consts::TAU)))
            .collect();
        let profile = |x: &[f64]| -> f64 {
            let y: Vec<f64> = x.iter().zip(&center).map(|(a, c)| (a - c) / cube.side).collect();
            modes
                .iter()
                .map(|&(amp, k0, k1, ph)| {
                    let arg = std::f64::consts::TAU * (k0 * y[0] + if d == 2 { k1 * y[1] } else { 0.0 }) + ph;
                    amp * arg.cos()
                })
                .sum()
        };
        let h: Vec<Complex64> = cells.iter().map(|&i| Complex64::new(profile(&spec.center(i)[..d]), 0.0)).collect();
        let raw: Vec<Complex64> = h.iter().zip(&weights).map(|(v, w)| v * w).collect();
        let vals: Vec<Complex64> = if needs_moments {
            let p = project_cells(spec, &cells, &h, &weights, delta, &center, cube.side)?;
            cells
                .iter()
                .zip(&h)
                .zip(&weights)
                .map(|((&i, hv), w)| (hv - p.eval(&spec.center(i)[..d])) * w)
                .collect()
        } else {
            raw.clone()
        };
        let raw_max = raw.iter().fold(0.0f64, |m, v| m.max(v.norm()));
        let new_max = vals.iter().fold(0.0f64, |m, v| m.max(v.norm()));
        if raw_max == 0.0 || new_max < 1e-6 * raw_max {
            continue;
        }
        let mut field = SampledField::zeros(*spec);
        for (&i, v) in cells.iter().zip(&vals) {
            field.values[i] = *v;
        }
        let target = cube.volume().powf(1.0 / r - 1.0 / q);
        let current = lq_norm(&field, r, Some(cube));
        let field = field.scale(target / current);
        return Ok(Atom { field, cube: cube.clone(), q, r, delta, local });
    }
    Err(Error::DegenerateAtom(MAX_RETRIES))
}

/// A candidate molecule with a parameterized decay condition.
#[derive(Debug, Clone, PartialEq)]
pub struct Molecule {
    pub field: SampledField,
    pub cube: LatticeCube,
    pub q: f64,
    pub r: f64,
    pub delta: usize,
    pub theta: f64,
    pub decay_const: f64,
}

impl Molecule {
    /// Default decay exponent `d + δ + 1`.
    pub fn default_theta(dim: usize, delta: usize) -> f64 {
        (dim + delta + 1) as f64
    }

    /// Views an atom as a molecule; the decay constant covers the atom's own sup on its cube.
    pub fn from_atom(a: &Atom, theta: f64) -> Self {
        let d = a.field.spec.dim as f64;
        let norm_chi = a.cube.volume().powf(1.0 / a.q);
        let decay_const = (1.0 + d.sqrt() / 2.0).powf(theta) * (a.field.sup_norm() * norm_chi).max(1.0);
        Self { field: a.field.clone(), cube: a.cube.clone(), q: a.q, r: a.r, delta: a.delta, theta, decay_const }
    }
}

/// Outcome of [`validate_molecule`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoleculeReport {
    pub size_ok: bool,
    pub decay_ok: bool,
    /// `max_x |m(x)| ‖χ_Q‖_q (1+|x-x_Q|/ℓ)^θ`, to compare with the decay constant.
    pub worst_decay: f64,
    pub moments_required: bool,
    pub moments_ok: bool,
    pub worst_moment: f64,
    pub valid: bool,
}

pub fn validate_molecule(m: &Molecule) -> MoleculeReport {
    let spec = &m.field.spec;
    let d = spec.dim;
    let size_ok = lq_norm(&m.field, m.r, Some(&m.cube)) <= m.cube.volume().powf(1.0 / m.r - 1.0 / m.q) * (1.0 + SIZE_SLACK);
    let c = m.cube.center();
    let norm_chi = m.cube.volume().powf(1.0 / m.q);
    let worst_decay = (0..spec.len())
        .map(|i| {
            let x = spec.center(i);
            let dist: f64 = x[..d].iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            m.field.values[i].norm() * norm_chi * (1.0 + dist / m.cube.side).powf(m.theta)
        })
        .fold(0.0, f64::max);
    let decay_ok = worst_decay <= m.decay_const * (1.0 + SIZE_SLACK);
    let moments_required = m.cube.volume() < 1.0;
    let (worst_moment, _) = worst_moment(&m.field, &c, m.delta);
    let moments_ok = worst_moment <= moment_tolerance(&m.field, &m.cube, m.delta);
    let valid = size_ok && decay_ok && (!moments_required || moments_ok);
    MoleculeReport { size_ok, decay_ok, worst_decay, moments_required, moments_ok, worst_moment, valid }
}

/// Per-atom `H_loc^(q,p)` norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomNorm {
    pub side: f64,
    pub norm: f64,
}

/// Uniform bound experiment over a batch of atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformBoundReport {
    pub per_atom: Vec<AtomNorm>,
    pub sup: f64,
    pub median: f64,
    /// `sup / median`; `None` when the median vanishes.
    pub dispersion: Option<f64>,
    /// Largest norm per cube side.
    pub sup_by_side: BTreeMap<String, f64>,
}

/// Local radial maximal function with the standard bump.
pub fn local_maximal(f: &SampledField) -> Result<SampledField> {
    smooth_maximal(f, &[Kernel::standard_bump()], &MaximalParams::local_radial())
}

/// Summary of norms per side.
pub fn summarize_norms(per_atom: Vec<AtomNorm>) -> UniformBoundReport {
    let mut sorted: Vec<f64> = per_atom.iter().map(|a| a.norm).collect();
    sorted.sort_by(f64::total_cmp);
    let sup = sorted.last().copied().unwrap_or(0.0);
    let median = if sorted.is_empty() { 0.0 } else { sorted[sorted.len() / 2] };
    let dispersion = if median > 0.0 { Some(sup / median) } else { None };
    let mut sup_by_side = BTreeMap::new();
    for a in &per_atom {
        let e = sup_by_side.entry(format!("{:.6}", a.side)).or_insert(0.0f64);
        *e = e.max(a.norm);
    }
    UniformBoundReport { per_atom, sup, median, dispersion, sup_by_side }
}

/// `‖a‖_{H_loc^(q,p)}` for every atom of the batch.
pub fn atom_uniform_bound(batch: &[Atom], q: f64, p: f64) -> Result<UniformBoundReport> {
    let per_atom = batch
        .par_iter()
        .map(|a| {
            let m = local_maximal(&a.field)?;
            Ok(AtomNorm { side: a.cube.side, norm: amalgam_norm_of_magnitudes(&a.field.spec, &m.abs(), q, p) })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize_norms(per_atom))
}

/// `sup_{x ∉ 4√d Q} m(x) / ([𝔐χ_Q(x)]^θ / ‖χ_Q‖_q)` for a precomputed maximal function `m`.
pub fn domination_constant(m: &[f64], spec: &GridSpec, cube: &LatticeCube, q: f64, theta: f64) -> f64 {
    let d = spec.dim;
    let chi = hl_maximal(&cube.indicator(spec));
    let far = cube.dilate(4.0 * (d as f64).sqrt());
    let norm_chi = cube.volume().powf(1.0 / q);
    (0..spec.len())
        .filter(|&i| !far.contains(&spec.center(i)[..d]) && m[i] > 0.0)
        .map(|i| m[i] * norm_chi / chi.values[i].re.powf(theta))
        .fold(0.0, f64::max)
}

/// Pointwise domination constant of `M_loc,φ(a)` by `[𝔐χ_Q]^{(d+δ+1)/d} / ‖χ_Q‖_q`.
pub fn pointwise_domination(a: &Atom) -> Result<f64> {
    let d = a.field.spec.dim;
    let m = local_maximal(&a.field)?;
    let theta = (d + a.delta + 1) as f64 / d as f64;
    Ok(domination_constant(&m.re(), &a.field.spec, &a.cube, a.q, theta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::sample;

    fn spec() -> GridSpec {
        GridSpec::new(1, 4, 64, 16).unwrap()
    }

    #[test]
    fn unit_indicator_is_local_atom() {
        let s = spec();
        let cube = LatticeCube::new(vec![0.0], 1.0);
        let a = Atom { field: cube.indicator(&s), cube, q: 0.5, r: f64::INFINITY, delta: 2, local: true };
        let rep = validate_atom(&a);
        assert!(rep.valid && !rep.moments_required && !rep.moments_ok);
    }

    #[test]
    fn haar_atom_zeroth_moment_only() {
        let s = spec();
        let q = 0.5;
        let amp = 2f64.powf(1.0 / q);
        let f = sample(s, |x| if (0.0..0.25).contains(&x[0]) { amp } else if (0.25..0.5).contains(&x[0]) { -amp } else { 0.0 }).unwrap();
        let cube = LatticeCube::new(vec![0.0], 0.5);
        let a = Atom { field: f, cube, q, r: f64::INFINITY, delta: 0, local: true };
        assert!(validate_atom(&a).valid);
        let bad = Atom { delta: 1, ..a };
        let rep = validate_atom(&bad);
        assert!(!rep.valid && rep.worst_beta == [1, 0]);
    }

    #[test]
    fn generated_atoms_validate() {
        let s = spec();
        for (k, side) in [0.0625, 0.25, 1.0, 2.0].into_iter().enumerate() {
            let cube = LatticeCube::new(vec![-1.0], side);
            let a = make_atom(&s, &cube, 0.5, f64::INFINITY, 2, true, 11 + k as u64).unwrap();
            let rep = validate_atom(&a);
            assert!(rep.valid, "{rep:?}");
            assert!((rep.size_lhs / rep.size_rhs - 1.0).abs() < 1e-9);
            assert!(validate_molecule(&Molecule::from_atom(&a, Molecule::default_theta(1, 2))).valid);
        }
    }

    #[test]
    fn two_dimensional_atom_validates() {
        let s = GridSpec::new(2, 2, 16, 4).unwrap();
        let cube = LatticeCube::new(vec![0.0, -0.5], 0.5);
        let a = make_atom(&s, &cube, 0.5, f64::INFINITY, 2, true, 3).unwrap();
        assert!(validate_atom(&a).valid);
    }

    #[test]
    fn slow_tail_breaks_molecule_decay() {
        let s = spec();
        let theta = 2.0;
        let f = sample(s, |x| if x[0].abs() < 3.5 { (1.0 + x[0].abs()).powf(-theta / 2.0) * 1e-3 } else { 0.0 }).unwrap();
        let cube = LatticeCube::new(vec![0.0], 1.0);
        let m = Molecule { field: f, cube, q: 1.0, r: f64::INFINITY, delta: 0, theta, decay_const: (1.5f64).powf(theta) * 1e-3 };
        let rep = validate_molecule(&m);
        assert!(rep.size_ok && !rep.decay_ok);
    }

    #[test]
    fn doubling_atom_doubles_norm() {
        let s = spec();
        let cube = LatticeCube::new(vec![0.0], 0.5);
        let a = make_atom(&s, &cube, 0.5, f64::INFINITY, 1, true, 5).unwrap();
        let b = Atom { field: a.field.scale(2.0), ..a.clone() };
        let rep = atom_uniform_bound(&[a, b], 0.5, 0.5).unwrap();
        assert!((rep.per_atom[1].norm / rep.per_atom[0].norm - 2.0).abs() < 1e-12);
        assert!(pointwise_domination(&rep_atom(&s)).unwrap().is_finite());
    }

    fn rep_atom(s: &GridSpec) -> Atom {
        make_atom(s, &LatticeCube::new(vec![0.5], 0.25), 0.5, f64::INFINITY, 1, true, 9).unwrap()
    }
}
