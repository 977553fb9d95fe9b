//! Calderón–Zygmund machinery: level sets of the local maximal function, Whitney
//! covers, smooth partitions of unity, weighted polynomial projections, the
//! split `f = g_j + Σ b_{j,k}`, the atomic decomposition built from consecutive
//! levels, the band-limited split and the unit-cube decomposition.

use std::collections::{BTreeMap, HashMap};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::amalgam::{amalgam_norm_of_magnitudes, ExponentConfig};
use crate::atoms::{validate_atom, Atom};
use crate::error::{precondition, Error, Result};
use crate::grid::{Convolver, GridSpec, Kernel, LatticeCube, SampledField};
use crate::maximal::{hl_maximal, hloc_norm, smooth_maximal, MaximalParams, Scope, Variant};
use crate::poly::{project_cells, PolyCoeffs};

/// Whitney dilation factor `c ∈ (1, 5/4)`.
pub const WHITNEY_DILATION: f64 = 9.0 / 8.0;
/// Level truncation: the residual level keeps `‖χ_{(O^j)^c} M‖_{q,p} ≤ 1e-6 ‖M‖_{q,p}`.
pub const LEVEL_TAIL: f64 = 1e-6;
/// A term whose `L¹` mass is below this fraction of the mass of its summands is rounding
/// noise and is moved to the residual instead of becoming an atom.
pub const CANCELLATION_FLOOR: f64 = 1e-6;
/// Maximum number of levels below the first empty one.
pub const MAX_LEVELS: usize = 60;

/// `O^j = {M > 2^j}` as a cell mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSet {
    pub j: i32,
    pub mask: Vec<bool>,
}

impl LevelSet {
    pub fn is_empty(&self) -> bool {
        !self.mask.iter().any(|&b| b)
    }
}

/// Level sets `O^{j_min} ⊇ … ⊇ O^{j_max} = ∅` of the local radial maximal function.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSets {
    pub maximal: Vec<f64>,
    pub levels: Vec<LevelSet>,
}

impl LevelSets {
    pub fn j_min(&self) -> Option<i32> {
        self.levels.first().map(|l| l.j)
    }

    pub fn j_max(&self) -> Option<i32> {
        self.levels.last().map(|l| l.j)
    }
}

/// Builds the level sets from `M = M_loc,φ(f)`; empty when `f = 0`.
pub fn level_sets(f: &SampledField, q: f64, p: f64) -> Result<LevelSets> {
    let m = smooth_maximal(f, &[Kernel::standard_bump()], &MaximalParams::local_radial())?.re();
    level_sets_from(&f.spec, m, q, p)
}

/// Level sets from a precomputed maximal function.
pub fn level_sets_from(spec: &GridSpec, m: Vec<f64>, q: f64, p: f64) -> Result<LevelSets> {
    let top = m.iter().cloned().fold(0.0, f64::max);
    if top == 0.0 {
        return Ok(LevelSets { maximal: m, levels: Vec::new() });
    }
    let j_max = top.log2().ceil() as i32;
    let total = amalgam_norm_of_magnitudes(spec, &m, q, p);
    let mut j_min = j_max - 1;
    for j in (j_max - MAX_LEVELS as i32..j_max).rev() {
        j_min = j;
        let thr = 2f64.powi(j);
        let tail: Vec<f64> = m.iter().map(|&v| if v > thr { 0.0 } else { v }).collect();
        if amalgam_norm_of_magnitudes(spec, &tail, q, p) <= LEVEL_TAIL * total {
            break;
        }
    }
    let levels = (j_min..=j_max)
        .map(|j| {
            let thr = 2f64.powi(j);
            LevelSet { j, mask: m.iter().map(|&v| v > thr).collect() }
        })
        .collect();
    Ok(LevelSets { maximal: m, levels })
}

/// 1-D squared Euclidean distance transform (lower envelope of parabolas).
fn edt_1d(f: &[f64]) -> Vec<f64> {
    let n = f.len();
    let mut d = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] && k > 0 {
                k -= 1;
                continue;
            }
            if s <= z[k] {
                // k == 0 and the new parabola dominates from -∞.
                v[0] = q;
                z[0] = f64::NEG_INFINITY;
                z[1] = f64::INFINITY;
                break;
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
            break;
        }
    }
    k = 0;
    for (q, out) in d.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        *out = (q as f64 - p as f64).powi(2) + f[p];
    }
    d
}

/// Distance (in cell units, center to center) from each cell to the nearest cell outside
/// the mask, counting the ring of cells just outside the window as outside.
pub fn distance_to_complement(spec: &GridSpec, mask: &[bool]) -> Vec<f64> {
    let n = spec.side_cells();
    let np = n + 2;
    const FAR: f64 = 1e30;
    if spec.dim == 1 {
        let f: Vec<f64> = (0..np).map(|i| if i == 0 || i == np - 1 || !mask[i - 1] { 0.0 } else { FAR }).collect();
        let d = edt_1d(&f);
        return (0..n).map(|i| d[i + 1].sqrt()).collect();
    }
    let mut g = vec![FAR; np * np];
    for i in 0..np {
        for j in 0..np {
            let border = i == 0 || j == 0 || i == np - 1 || j == np - 1;
            if border || !mask[(i - 1) * n + (j - 1)] {
                g[i * np + j] = 0.0;
            }
        }
    }
    for row in g.chunks_mut(np) {
        let r = edt_1d(row);
        row.copy_from_slice(&r);
    }
    for j in 0..np {
        let col: Vec<f64> = (0..np).map(|i| g[i * np + j]).collect();
        let r = edt_1d(&col);
        for i in 0..np {
            g[i * np + j] = r[i];
        }
    }
    (0..n * n).map(|idx| g[(idx / n + 1) * np + idx % n + 1].sqrt()).collect()
}

/// One Whitney cube and its dilation `Q* = (9/8) Q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhitneyCube {
    pub cube: LatticeCube,
    pub dilated: LatticeCube,
    /// Side of `Q` in cells.
    pub side_cells: usize,
    /// Whether the cube came from the single-cell fallback rather than the dyadic criterion.
    pub fallback: bool,
}

/// Whitney cover of an open cell mask with its verified invariants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhitneyCover {
    pub cubes: Vec<WhitneyCube>,
    /// `max_x Σ_k χ_{Q*_k}(x)`.
    pub max_overlap: usize,
    /// Every mask cell lies in some `Q*`.
    pub covers_mask: bool,
    /// Cubes whose `9d·Q*` contains no complement cell.
    pub complement_misses: usize,
    /// Cubes with `dist(Q, O^c) > 4 diam(Q)`.
    pub upper_violations: usize,
}

impl WhitneyCover {
    pub fn violations(&self) -> usize {
        usize::from(!self.covers_mask) + self.complement_misses
    }
}

/// Maximal dyadic cubes `Q ⊂ O` with `diam Q ≤ dist(Q, O^c)`, dilated by 9/8.
pub fn whitney(spec: &GridSpec, mask: &[bool]) -> Result<WhitneyCover> {
    if !mask.iter().any(|&b| b) {
        return Ok(WhitneyCover { cubes: Vec::new(), max_overlap: 0, covers_mask: true, complement_misses: 0, upper_violations: 0 });
    }
    let n = spec.side_cells();
    let d = spec.dim;
    let dist = distance_to_complement(spec, mask);
    let mut covered = vec![false; spec.len()];
    let mut cubes = Vec::new();
    let h = spec.h();
    let sqrt_d = (d as f64).sqrt();
    let mut side = 1usize;
    while side * 2 <= n {
        side *= 2;
    }
    let block_cells = |start: [usize; 2], side: usize| -> Vec<usize> {
        let mut out = Vec::with_capacity(side.pow(d as u32));
        if d == 1 {
            out.extend(start[0]..start[0] + side);
        } else {
            for i in start[0]..start[0] + side {
                for j in start[1]..start[1] + side {
                    out.push(i * n + j);
                }
            }
        }
        out
    };
    let mut upper_violations = 0;
    loop {
        let starts: Vec<[usize; 2]> = if d == 1 {
            (0..n / side).map(|a| [a * side, 0]).collect()
        } else {
            (0..n / side).flat_map(|a| (0..n / side).map(move |b| [a * side, b * side])).collect()
        };
        for st in starts {
            let first = spec.ravel(st);
            if covered[first] || !mask[first] {
                continue;
            }
            let cells = block_cells(st, side);
            if cells.iter().any(|&c| !mask[c] || covered[c]) {
                continue;
            }
            let dmin = cells.iter().map(|&c| dist[c]).fold(f64::INFINITY, f64::min);
            let diam = side as f64 * sqrt_d;
            if dmin >= diam {
                if dmin > 4.0 * diam {
                    upper_violations += 1;
                }
                for &c in &cells {
                    covered[c] = true;
                }
                let corner: Vec<f64> = (0..d).map(|a| -spec.l() + st[a] as f64 * h).collect();
                let cube = LatticeCube::new(corner, side as f64 * h);
                cubes.push(WhitneyCube { dilated: cube.dilate(WHITNEY_DILATION), cube, side_cells: side, fallback: false });
            }
        }
        if side == 1 {
            break;
        }
        side /= 2;
    }
    for idx in 0..spec.len() {
        if mask[idx] && !covered[idx] {
            covered[idx] = true;
            let ij = spec.unravel(idx);
            let corner: Vec<f64> = (0..d).map(|a| -spec.l() + ij[a] as f64 * h).collect();
            let cube = LatticeCube::new(corner, h);
            cubes.push(WhitneyCube { dilated: cube.dilate(WHITNEY_DILATION), cube, side_cells: 1, fallback: true });
        }
    }
    let mut overlap = vec![0usize; spec.len()];
    for c in &cubes {
        for i in c.dilated.cells(spec) {
            overlap[i] += 1;
        }
    }
    let covers_mask = (0..spec.len()).all(|i| !mask[i] || overlap[i] > 0);
    let max_overlap = overlap.iter().copied().max().unwrap_or(0);
    let complement_misses = cubes.iter().filter(|c| !meets_complement(spec, mask, &c.dilated.dilate(9.0 * d as f64))).count();
    Ok(WhitneyCover { cubes, max_overlap, covers_mask, complement_misses, upper_violations })
}

fn meets_complement(spec: &GridSpec, mask: &[bool], big: &LatticeCube) -> bool {
    let l = spec.l();
    if big.corner.iter().any(|&c| c < -l || c + big.side > l) {
        return true;
    }
    big.cells(spec).into_iter().any(|i| !mask[i])
}

/// A function stored on an explicit list of cells.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Piece<T> {
    pub cells: Vec<usize>,
    pub vals: Vec<T>,
}

impl<T: Copy + Default> Piece<T> {
    pub fn get(&self, lookup: &HashMap<usize, usize>, cell: usize) -> T {
        lookup.get(&cell).map(|&k| self.vals[k]).unwrap_or_default()
    }
}

impl Piece<Complex64> {
    pub fn to_field(&self, spec: &GridSpec) -> SampledField {
        let mut f = SampledField::zeros(*spec);
        for (&c, &v) in self.cells.iter().zip(&self.vals) {
            f.values[c] = v;
        }
        SampledField::with_values(*spec, f.values)
    }
}

fn smooth_step(t: f64) -> f64 {
    // 1 for t ≤ 0, 0 for t ≥ 1, C^∞ in between.
    if t <= 0.0 {
        1.0
    } else if t >= 1.0 {
        0.0
    } else {
        let a = (-1.0 / (1.0 - t)).exp();
        let b = (-1.0 / t).exp();
        a / (a + b)
    }
}

/// `ζ(x)`: 1 on `Q`, smooth decay to 0 at the boundary of `Q*`.
pub fn zeta(x: &[f64], w: &WhitneyCube) -> f64 {
    let margin = (w.dilated.side - w.cube.side) / 2.0;
    x.iter()
        .enumerate()
        .map(|(a, &xa)| {
            let lo = w.cube.corner[a];
            let hi = lo + w.cube.side;
            let out = (lo - xa).max(xa - hi).max(0.0);
            smooth_step(out / margin)
        })
        .product()
}

/// `η_k = ζ_k / Σ ζ` on the mask, each stored on its nonzero cells.
pub fn partition_of_unity(spec: &GridSpec, cover: &WhitneyCover, mask: &[bool]) -> Result<Vec<Piece<f64>>> {
    let d = spec.dim;
    let zetas: Vec<Piece<f64>> = cover
        .cubes
        .iter()
        .map(|w| {
            let mut p = Piece::default();
            for c in w.dilated.cells(spec) {
                if !mask[c] {
                    continue;
                }
                let z = zeta(&spec.center(c)[..d], w);
                if z > 0.0 {
                    p.cells.push(c);
                    p.vals.push(z);
                }
            }
            p
        })
        .collect();
    let mut total = vec![0.0; spec.len()];
    for z in &zetas {
        for (&c, &v) in z.cells.iter().zip(&z.vals) {
            total[c] += v;
        }
    }
    if let Some(i) = (0..spec.len()).find(|&i| mask[i] && total[i] == 0.0) {
        return Err(Error::CoverGap(i));
    }
    Ok(zetas
        .into_iter()
        .map(|mut z| {
            for (c, v) in z.cells.iter().zip(z.vals.iter_mut()) {
                *v /= total[*c];
            }
            z
        })
        .collect())
}

/// Weighted projection of `f` onto `P_δ` with weight `η̃ = η / ∫η`, anchored at `cube`.
pub fn project_poly(f: &SampledField, weight: &Piece<f64>, delta: usize, cube: &LatticeCube) -> Result<PolyCoeffs> {
    let vals: Vec<Complex64> = weight.cells.iter().map(|&c| f.values[c]).collect();
    project_cells(&f.spec, &weight.cells, &vals, &weight.vals, delta, &cube.center(), cube.side)
}

/// One level of the split: cover, partition, projections and bad parts.
#[derive(Debug, Clone)]
pub struct Split {
    pub j: i32,
    pub cover: WhitneyCover,
    pub eta: Vec<Piece<f64>>,
    /// `c_{j,k}`, present when `|Q*| < 1`.
    pub c: Vec<Option<PolyCoeffs>>,
    pub b: Vec<Piece<Complex64>>,
    /// `g_j = f - Σ_k b_{j,k}`.
    pub g: SampledField,
    /// `max_k ‖c_{j,k} η_{j,k}‖_∞ / 2^j` over cubes with side < 1.
    pub c_eta_ratio: f64,
}

impl Split {
    /// Sum of the bad parts as a dense field.
    pub fn b_total(&self, spec: &GridSpec) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); spec.len()];
        for b in &self.b {
            for (&c, &v) in b.cells.iter().zip(&b.vals) {
                out[c] += v;
            }
        }
        out
    }
}

/// `f = g_j + Σ_k b_{j,k}` with `b_{j,k} = (f - c_{j,k}) η_{j,k}` when `|Q*| < 1`, else `f η_{j,k}`.
pub fn cz_split(f: &SampledField, level: &LevelSet, delta: usize) -> Result<Split> {
    let spec = &f.spec;
    let d = spec.dim;
    let cover = whitney(spec, &level.mask)?;
    let eta = partition_of_unity(spec, &cover, &level.mask)?;
    let mut c = Vec::with_capacity(eta.len());
    let mut b = Vec::with_capacity(eta.len());
    let mut c_eta_ratio = 0.0f64;
    let scale = 2f64.powi(level.j);
    for (w, e) in cover.cubes.iter().zip(&eta) {
        if w.dilated.volume() < 1.0 {
            let p = project_poly(f, e, delta, &w.dilated)?;
            let mut piece = Piece::default();
            for (&cell, &ev) in e.cells.iter().zip(&e.vals) {
                let pv = p.eval(&spec.center(cell)[..d]);
                c_eta_ratio = c_eta_ratio.max((pv * ev).norm() / scale);
                piece.cells.push(cell);
                piece.vals.push((f.values[cell] - pv) * ev);
            }
            c.push(Some(p));
            b.push(piece);
        } else {
            c.push(None);
            b.push(Piece { cells: e.cells.clone(), vals: e.cells.iter().zip(&e.vals).map(|(&cell, &ev)| f.values[cell] * ev).collect() });
        }
    }
    let mut g = f.clone();
    for piece in &b {
        for (&cell, &v) in piece.cells.iter().zip(&piece.vals) {
            g.values[cell] -= v;
        }
    }
    let g = SampledField::with_values(*spec, g.values);
    Ok(Split { j: level.j, cover, eta, c, b, g, c_eta_ratio })
}

/// One term `λ a` of an atomic decomposition, stored sparsely.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionEntry {
    pub lambda: f64,
    /// Support cube `Q̃ = C₀ Q*`.
    pub cube: LatticeCube,
    pub j: i32,
    pub k: usize,
    /// Whether `|Q̃| < 1`, so vanishing moments are required and asserted.
    pub moments_required: bool,
    pub atom: Piece<Complex64>,
}

impl DecompositionEntry {
    pub fn to_atom(&self, spec: &GridSpec, q: f64, delta: usize) -> Atom {
        Atom { field: self.atom.to_field(spec), cube: self.cube.clone(), q, r: f64::INFINITY, delta, local: true }
    }
}

/// Constants and invariant counts measured during a decomposition.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DecompositionStats {
    pub j_min: i32,
    pub j_max: i32,
    /// Containment constant: `Q*^{j+1,ℓ} ⊂ C₀ Q*^{j,k}` for intersecting pairs.
    pub c0: f64,
    /// Diameter ratio `diam Q*^{j+1,ℓ} / diam Q*^{j,k}` over intersecting pairs.
    pub c_diam: f64,
    /// `sup |A_{j,k}| / 2^j`.
    pub c1: f64,
    /// Largest overlap of dilated Whitney cubes over all levels.
    pub k_d: usize,
    /// Largest overlap of atom supports within one level.
    pub atom_overlap: usize,
    /// `max ‖c_{j,k} η_{j,k}‖_∞ / 2^j` over small cubes.
    pub c_eta: f64,
    pub whitney_union_violations: usize,
    pub whitney_complement_violations: usize,
    pub whitney_upper_violations: usize,
    /// Pairs with disjoint partition supports whose correction `c_k^ℓ` was nonzero.
    pub c_disjoint_violations: usize,
    pub n_atoms: usize,
    /// Terms `A_{j,k}` below the cancellation floor, moved into the residual.
    pub absorbed_terms: usize,
    pub n_cubes: usize,
    /// `max |f - Σ λ a - residual| / ‖f‖_∞`.
    pub reconstruction_error: f64,
    /// Largest moment residual relative to tolerance among atoms without required moments.
    pub unrequired_moment_ratio: f64,
}

/// Finite atomic decomposition with explicit residual.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomicDecomposition {
    pub spec: GridSpec,
    pub cfg: ExponentConfig,
    pub entries: Vec<DecompositionEntry>,
    pub residual: SampledField,
    pub stats: DecompositionStats,
}

impl AtomicDecomposition {
    /// `Σ λ a` as a dense field (without the residual).
    pub fn reconstruct(&self) -> SampledField {
        let mut out = vec![Complex64::new(0.0, 0.0); self.spec.len()];
        for e in &self.entries {
            for (&c, &v) in e.atom.cells.iter().zip(&e.atom.vals) {
                out[c] += v * e.lambda;
            }
        }
        SampledField::with_values(self.spec, out)
    }

    /// `Σ λ a + residual`.
    pub fn resum(&self) -> SampledField {
        self.reconstruct().add(&self.residual)
    }

    /// Coefficients and cubes including the unit-cube decomposition of the residual.
    pub fn coefficient_list(&self) -> Vec<(f64, LatticeCube)> {
        let mut out: Vec<(f64, LatticeCube)> = self.entries.iter().map(|e| (e.lambda, e.cube.clone())).collect();
        out.extend(unitcube_decompose(&self.residual).pieces.into_iter().map(|p| (p.sigma, p.cube)));
        out
    }
}

fn pieces_intersect(a: &[usize], b: &HashMap<usize, usize>) -> bool {
    a.iter().any(|c| b.contains_key(c))
}

fn index_of(cells: &[usize]) -> HashMap<usize, usize> {
    cells.iter().enumerate().map(|(k, &c)| (c, k)).collect()
}

/// Containment factor `λ` with `inner ⊂ λ·outer`.
fn containment_factor(inner: &LatticeCube, outer: &LatticeCube) -> f64 {
    let ci = inner.center();
    let co = outer.center();
    ci.iter().zip(&co).map(|(a, b)| 2.0 * ((a - b).abs() + inner.side / 2.0) / outer.side).fold(0.0, f64::max)
}

/// Calderón–Zygmund atomic decomposition `f = residual + Σ_{j,k} λ_{j,k} a_{j,k}`.
pub fn atomic_decompose(f: &SampledField, cfg: &ExponentConfig) -> Result<AtomicDecomposition> {
    let spec = f.spec;
    let d = spec.dim;
    let delta = cfg.delta;
    let sets = level_sets(f, cfg.q, cfg.p)?;
    let mut stats = DecompositionStats::default();
    if sets.levels.is_empty() {
        return Ok(AtomicDecomposition { spec, cfg: *cfg, entries: Vec::new(), residual: f.clone(), stats });
    }
    stats.j_min = sets.j_min().unwrap();
    stats.j_max = sets.j_max().unwrap();
    // Splits for every nonempty level; the last level is empty so it contributes nothing.
    let splits: Vec<Split> = sets.levels[..sets.levels.len() - 1]
        .par_iter()
        .map(|lvl| cz_split(f, lvl, delta))
        .collect::<Result<_>>()?;
    for s in &splits {
        stats.k_d = stats.k_d.max(s.cover.max_overlap);
        stats.n_cubes += s.cover.cubes.len();
        stats.whitney_union_violations += usize::from(!s.cover.covers_mask);
        stats.whitney_complement_violations += s.cover.complement_misses;
        stats.whitney_upper_violations += s.cover.upper_violations;
        stats.c_eta = stats.c_eta.max(s.c_eta_ratio);
    }
    struct Raw {
        j: i32,
        k: usize,
        piece: Piece<Complex64>,
        /// `Σ_cells Σ_terms (|term| + |f|)`: the scale against which cancellation is judged.
        gross: f64,
        support_cube: LatticeCube,
    }
    // Pass 1: consecutive-level geometry, intersecting pairs and corrections.
    let per_level: Vec<(Vec<Vec<usize>>, f64, f64, usize)> = (0..splits.len())
        .into_par_iter()
        .map(|li| {
            let cur = &splits[li];
            let Some(next) = splits.get(li + 1) else {
                return (vec![Vec::new(); cur.cover.cubes.len()], 0.0, 0.0, 0);
            };
            let next_index: Vec<HashMap<usize, usize>> = next.eta.iter().map(|e| index_of(&e.cells)).collect();
            let mut c0 = 0.0f64;
            let mut cd = 0.0f64;
            let mut pairs = Vec::with_capacity(cur.cover.cubes.len());
            let mut disjoint_violations = 0;
            for (k, wk) in cur.cover.cubes.iter().enumerate() {
                let mut ls = Vec::new();
                for (l, wl) in next.cover.cubes.iter().enumerate() {
                    if !wk.dilated.intersects(&wl.dilated) {
                        continue;
                    }
                    c0 = c0.max(containment_factor(&wl.dilated, &wk.dilated));
                    cd = cd.max(wl.dilated.side / wk.dilated.side);
                    if pieces_intersect(&cur.eta[k].cells, &next_index[l]) {
                        ls.push(l);
                    } else if next.c[l].is_some() {
                        // Correction computed from disjoint partition supports must vanish exactly.
                        let p = correction(f, cur, next, k, l, &next_index[l], delta);
                        if let Ok(p) = p {
                            if p.coeffs.iter().any(|c| c.norm() != 0.0) {
                                disjoint_violations += 1;
                            }
                        }
                    }
                }
                pairs.push(ls);
            }
            (pairs, c0, cd, disjoint_violations)
        })
        .collect();
    stats.c0 = per_level.iter().map(|p| p.1).fold(1.0, f64::max);
    stats.c_diam = per_level.iter().map(|p| p.2).fold(0.0, f64::max);
    stats.c_disjoint_violations = per_level.iter().map(|p| p.3).sum();
    let c0 = stats.c0;
    // Pass 2: assemble A_{j,k}.
    let raws: Vec<Raw> = (0..splits.len())
        .into_par_iter()
        .map(|li| -> Result<Vec<Raw>> {
            let cur = &splits[li];
            let next = splits.get(li + 1);
            let b_next = next.map(|n| n.b_total(&spec));
            let next_index: Vec<HashMap<usize, usize>> = next.map(|n| n.eta.iter().map(|e| index_of(&e.cells)).collect()).unwrap_or_default();
            let mut out = Vec::new();
            for (k, wk) in cur.cover.cubes.iter().enumerate() {
                let mut acc: BTreeMap<usize, Complex64> = BTreeMap::new();
                let mut gross = 0.0;
                for (&c, &v) in cur.b[k].cells.iter().zip(&cur.b[k].vals) {
                    *acc.entry(c).or_default() += v;
                    gross += v.norm() + f.values[c].norm();
                }
                if let (Some(next), Some(bn)) = (next, &b_next) {
                    for (&c, &e) in cur.eta[k].cells.iter().zip(&cur.eta[k].vals) {
                        if bn[c] != Complex64::new(0.0, 0.0) {
                            *acc.entry(c).or_default() -= bn[c] * e;
                            gross += (bn[c] * e).norm() + f.values[c].norm() * e;
                        }
                    }
                    for &l in &per_level[li].0[k] {
                        if next.c[l].is_none() {
                            continue;
                        }
                        let p = correction(f, cur, next, k, l, &next_index[l], delta)?;
                        for (&c, &e) in next.eta[l].cells.iter().zip(&next.eta[l].vals) {
                            let v = p.eval(&spec.center(c)[..d]) * e;
                            *acc.entry(c).or_default() += v;
                            gross += v.norm() + f.values[c].norm() * e;
                        }
                    }
                }
                let (cells, vals): (Vec<usize>, Vec<Complex64>) = acc.into_iter().filter(|(_, v)| *v != Complex64::new(0.0, 0.0)).unzip();
                out.push(Raw { j: cur.j, k, piece: Piece { cells, vals }, gross, support_cube: wk.dilated.dilate(c0 * (1.0 + 1e-12)) });
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    stats.c1 = raws
        .iter()
        .map(|r| r.piece.vals.iter().fold(0.0f64, |m, v| m.max(v.norm())) / 2f64.powi(r.j))
        .fold(0.0, f64::max);
    let c1 = stats.c1;
    // Terms that are pure cancellation noise carry no reliable moments; they are folded
    // into the residual so the decomposition stays exact.
    let mut residual = splits[0].g.clone();
    let (raws, noise): (Vec<Raw>, Vec<Raw>) = raws.into_iter().partition(|r| {
        let net: f64 = r.piece.vals.iter().map(|v| v.norm()).sum();
        net > CANCELLATION_FLOOR * r.gross
    });
    stats.absorbed_terms = noise.iter().filter(|r| !r.piece.cells.is_empty()).count();
    for r in &noise {
        for (&c, &v) in r.piece.cells.iter().zip(&r.piece.vals) {
            residual.values[c] += v;
        }
    }
    let entries: Vec<DecompositionEntry> = raws
        .into_iter()
        .map(|r| {
            let lambda = c1 * 2f64.powi(r.j) * r.support_cube.volume().powf(1.0 / cfg.q);
            let vals = r.piece.vals.iter().map(|v| v / lambda).collect();
            DecompositionEntry {
                lambda,
                moments_required: r.support_cube.volume() < 1.0,
                cube: r.support_cube,
                j: r.j,
                k: r.k,
                atom: Piece { cells: r.piece.cells, vals },
            }
        })
        .collect();
    stats.n_atoms = entries.len();
    // Validate every atom; moments are asserted only where they are guaranteed.
    let checks: Vec<(Option<Error>, f64)> = entries
        .par_iter()
        .map(|e| {
            let rep = validate_atom(&e.to_atom(&spec, cfg.q, delta));
            let ratio = if e.moments_required || rep.moment_tolerance == 0.0 { 0.0 } else { rep.worst_moment / rep.moment_tolerance };
            if !rep.valid {
                let reason = if !rep.support_ok {
                    "support outside C0·Q*".to_string()
                } else if !rep.size_ok {
                    format!("size {} > {}", rep.size_lhs, rep.size_rhs)
                } else {
                    format!("moment β={:?} residual {} > {}", rep.worst_beta, rep.worst_moment, rep.moment_tolerance)
                };
                (Some(Error::ConstructionViolation { j: e.j, k: e.k, reason }), ratio)
            } else {
                (None, ratio)
            }
        })
        .collect();
    stats.unrequired_moment_ratio = checks.iter().map(|c| c.1).fold(0.0, f64::max);
    if let Some(err) = checks.into_iter().find_map(|c| c.0) {
        return Err(err);
    }
    for li in 0..splits.len() {
        let mut count: HashMap<usize, usize> = HashMap::new();
        for e in entries.iter().filter(|e| e.j == splits[li].j) {
            for &c in &e.atom.cells {
                *count.entry(c).or_default() += 1;
            }
        }
        stats.atom_overlap = stats.atom_overlap.max(count.values().copied().max().unwrap_or(0));
    }
    let mut dec = AtomicDecomposition { spec, cfg: *cfg, entries, residual, stats };
    let sup = f.sup_norm();
    let err = dec.resum().sub(f).sup_norm();
    dec.stats.reconstruction_error = if sup > 0.0 { err / sup } else { err };
    Ok(dec)
}

/// `c_k^ℓ = P_ℓ^{j+1}((f - c_{j+1,ℓ}) η_{j,k})` with weight `η_{j+1,ℓ}`.
fn correction(f: &SampledField, cur: &Split, next: &Split, k: usize, l: usize, _next_index: &HashMap<usize, usize>, delta: usize) -> Result<PolyCoeffs> {
    let spec = &f.spec;
    let d = spec.dim;
    let cl = next.c[l].as_ref().expect("correction needs a small cube");
    let cur_index = index_of(&cur.eta[k].cells);
    let weight = &next.eta[l];
    let vals: Vec<Complex64> = weight
        .cells
        .iter()
        .map(|&c| {
            let e = cur.eta[k].get(&cur_index, c);
            if e == 0.0 {
                Complex64::new(0.0, 0.0)
            } else {
                (f.values[c] - cl.eval(&spec.center(c)[..d])) * e
            }
        })
        .collect();
    let w = &next.cover.cubes[l].dilated;
    project_cells(spec, &weight.cells, &vals, &weight.vals, delta, &w.center(), w.side)
}

/// `‖Σ_n (|λ_n| / ‖χ_{Q_n}‖_q)^η χ_{Q_n}‖_{q/η, p/η}^{1/η}`.
pub fn coefficient_functional(spec: &GridSpec, entries: &[(f64, LatticeCube)], q: f64, p: f64, eta: f64) -> f64 {
    if entries.is_empty() {
        return 0.0;
    }
    let mut acc = vec![0.0f64; spec.len()];
    for (lambda, cube) in entries {
        let w = (lambda.abs() / cube.volume().powf(1.0 / q)).powf(eta);
        for c in cube.cells(spec) {
            acc[c] += w;
        }
    }
    amalgam_norm_of_magnitudes(spec, &acc, q / eta, p / eta).powf(1.0 / eta)
}

/// Smooth radial cutoff: 1 on `r ≤ 1`, 0 on `r ≥ 2`.
pub fn cutoff(r: f64) -> f64 {
    smooth_step(r - 1.0)
}

/// Mollifier specified in frequency: `φ̂(ξ) = cutoff(2|ξ|)`, so `supp φ̂ ⊂ B(0,1)`, `φ̂(0) = 1`.
pub fn frequency_mollifier() -> Kernel {
    Kernel::Frequency { symbol: std::sync::Arc::new(|xi: &[f64]| cutoff(2.0 * xi.iter().map(|v| v * v).sum::<f64>().sqrt())) }
}

/// `v = f ∗ θ` with `θ̂ = cutoff(|ξ|)` and `u = f - v`; `û` vanishes exactly on `|ξ| ≤ 1`.
pub fn bandlimit_split(f: &SampledField) -> Result<(SampledField, SampledField)> {
    let conv = Convolver::new(f)?;
    let spec = f.spec;
    let high: Vec<Complex64> = (0..spec.len())
        .map(|k| {
            let xi = spec.freq_vec(k);
            let r = xi[..spec.dim].iter().map(|v| v * v).sum::<f64>().sqrt();
            Complex64::new(1.0 - cutoff(r), 0.0)
        })
        .collect();
    let u = conv.apply_spectrum(&high).periodic();
    let v = f.sub(&u).periodic();
    Ok((u, v))
}

/// Split-quality ratio `(‖M_φ u‖_{q,p} + ‖M_loc v‖_{q,p}) / ‖M_loc f‖_{q,p}`.
pub fn split_ratio(f: &SampledField, u: &SampledField, v: &SampledField, q: f64, p: f64) -> Result<Option<f64>> {
    let phi = [Kernel::standard_bump()];
    let mu = smooth_maximal(u, &phi, &MaximalParams::new(Scope::Global, Variant::Radial))?;
    let nu = amalgam_norm_of_magnitudes(&u.spec, &mu.re(), q, p);
    let nv = hloc_norm(v, q, p)?;
    let nf = hloc_norm(f, q, p)?;
    Ok(if nf == 0.0 { None } else { Some((nu + nv) / nf) })
}

/// One piece `(σ^m, b^m, R^m)` of the unit-cube decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitPiece {
    pub sigma: f64,
    pub cube: LatticeCube,
    pub atom: Piece<Complex64>,
}

/// Unit-cube decomposition with its checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitCubeDecomposition {
    pub pieces: Vec<UnitPiece>,
    /// `max_m #{k : R^m ∩ R^k ≠ ∅}` over the window lattice.
    pub max_neighbors: usize,
}

impl UnitCubeDecomposition {
    pub fn resum(&self, spec: &GridSpec) -> SampledField {
        let mut out = SampledField::zeros(*spec);
        for p in &self.pieces {
            for (&c, &v) in p.atom.cells.iter().zip(&p.atom.vals) {
                out.values[c] += v * p.sigma;
            }
        }
        SampledField::with_values(*spec, out.values)
    }
}

/// `v = Σ_m σ^m b^m` over closed unit cubes `R^m`, `σ^m = sup_{R^m} |v|`.
///
/// Cell centers never lie on integer coordinates, so every cell belongs to exactly one
/// closed unit cube; that cube is its owner (the lexicographically smallest containing cube).
pub fn unitcube_decompose(v: &SampledField) -> UnitCubeDecomposition {
    let spec = v.spec;
    let cubes = spec.lattice_cubes();
    let cells = spec.lattice_cells();
    let mut pieces = Vec::new();
    for (cube, cs) in cubes.iter().zip(&cells) {
        let sigma = cs.iter().fold(0.0f64, |m, &c| m.max(v.values[c].norm()));
        if sigma == 0.0 {
            continue;
        }
        let (kc, kv): (Vec<usize>, Vec<Complex64>) = cs
            .iter()
            .filter(|&&c| v.values[c] != Complex64::new(0.0, 0.0))
            .map(|&c| (c, v.values[c] / sigma))
            .unzip();
        pieces.push(UnitPiece { sigma, cube: cube.clone(), atom: Piece { cells: kc, vals: kv } });
    }
    let max_neighbors = cubes.iter().map(|a| cubes.iter().filter(|b| a.intersects(b)).count()).max().unwrap_or(0);
    UnitCubeDecomposition { pieces, max_neighbors }
}

/// `‖(𝔐 |v|^s)^{1/s}‖_{q,p}`, the Plancherel–Pólya–Nikol'skij-side quantity.
pub fn ppn_quantity(v: &SampledField, s: f64, q: f64, p: f64) -> f64 {
    let vs = v.map(|z| Complex64::new(z.norm().powf(s), 0.0));
    let m = hl_maximal(&vs);
    let mags: Vec<f64> = m.values.iter().map(|z| z.re.powf(1.0 / s)).collect();
    amalgam_norm_of_magnitudes(&v.spec, &mags, q, p)
}

/// Upper (decomposition functional) against lower (`‖f‖_{H_loc}`) bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteNormReport {
    pub given: f64,
    pub recomputed: f64,
    pub upper: f64,
    pub lower: f64,
    /// `None` for the degenerate 0/0 case.
    pub ratio: Option<f64>,
}

/// Compares the finite-decomposition functional of `f = Σ λ_n a_n` with `‖f‖_{H_loc^(q,p)}`.
pub fn finite_norm_equivalence(spec: &GridSpec, given: &[(f64, Atom)], cfg: &ExponentConfig) -> Result<FiniteNormReport> {
    if !(cfg.eta > 0.0 && cfg.eta <= 1.0) {
        return precondition("η must lie in (0,1]");
    }
    let mut f = SampledField::zeros(*spec);
    for (l, a) in given {
        f = f.add(&a.field.scale(*l));
    }
    let list: Vec<(f64, LatticeCube)> = given.iter().map(|(l, a)| (*l, a.cube.clone())).collect();
    let given_val = coefficient_functional(spec, &list, cfg.q, cfg.p, cfg.eta);
    let dec = atomic_decompose(&f, cfg)?;
    let recomputed = coefficient_functional(spec, &dec.coefficient_list(), cfg.q, cfg.p, cfg.eta);
    let upper = given_val.min(recomputed);
    let lower = hloc_norm(&f, cfg.q, cfg.p)?;
    let ratio = if upper == 0.0 && lower == 0.0 { None } else { Some(upper / lower) };
    Ok(FiniteNormReport { given: given_val, recomputed, upper, lower, ratio })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::sample;

    fn spec() -> GridSpec {
        GridSpec::new(1, 8, 64, 64).unwrap()
    }

    fn bumpy(s: GridSpec) -> SampledField {
        sample(s, |x| {
            let y = x[0] / 3.0;
            if y.abs() < 1.0 {
                (-1.0 / (1.0 - y * y)).exp() * (1.0 + (4.0 * x[0]).sin())
            } else {
                0.0
            }
        })
        .unwrap()
    }

    #[test]
    fn edt_matches_brute_force() {
        let s = GridSpec::new(2, 1, 8, 0).unwrap();
        let mask: Vec<bool> = (0..s.len()).map(|i| (i * 7 + 3) % 5 != 0).collect();
        let d = distance_to_complement(&s, &mask);
        let n = s.side_cells() as i64;
        for idx in 0..s.len() {
            let ij = s.unravel(idx);
            let mut best = f64::INFINITY;
            for i in -1..=n {
                for j in -1..=n {
                    let outside = i < 0 || j < 0 || i >= n || j >= n || !mask[s.ravel([i as usize, j as usize])];
                    if outside {
                        best = best.min((((ij[0] as i64 - i).pow(2) + (ij[1] as i64 - j).pow(2)) as f64).sqrt());
                    }
                }
            }
            assert!((d[idx] - best).abs() < 1e-9);
        }
    }

    #[test]
    fn whitney_cover_of_interval() {
        let s = spec();
        let mask: Vec<bool> = (0..s.len()).map(|i| s.coord(i).abs() < 1.3).collect();
        let cover = whitney(&s, &mask).unwrap();
        assert!(cover.covers_mask && cover.complement_misses == 0 && cover.upper_violations == 0);
        assert!(cover.cubes.iter().all(|c| !c.fallback));
        let eta = partition_of_unity(&s, &cover, &mask).unwrap();
        let mut total = vec![0.0; s.len()];
        for e in &eta {
            for (&c, &v) in e.cells.iter().zip(&e.vals) {
                assert!((0.0..=1.0).contains(&v));
                total[c] += v;
            }
        }
        for i in 0..s.len() {
            assert!((total[i] - if mask[i] { 1.0 } else { 0.0 }).abs() < 1e-12);
        }
        let full = whitney(&s, &vec![true; s.len()]).unwrap();
        assert!(full.covers_mask && full.complement_misses == 0);
    }

    #[test]
    fn two_dimensional_whitney_cover() {
        let s = GridSpec::new(2, 2, 16, 0).unwrap();
        let mask: Vec<bool> = (0..s.len()).map(|i| { let x = s.center(i); x[0] * x[0] + 0.5 * x[1] * x[1] < 1.0 }).collect();
        let cover = whitney(&s, &mask).unwrap();
        assert!(cover.covers_mask && cover.complement_misses == 0);
        partition_of_unity(&s, &cover, &mask).unwrap();
    }

    #[test]
    fn decomposition_reconstructs_exactly() {
        let s = spec();
        let f = bumpy(s);
        let cfg = ExponentConfig::new(0.5, 0.5, 1);
        let dec = atomic_decompose(&f, &cfg).unwrap();
        let st = &dec.stats;
        assert!(st.reconstruction_error <= 1e-10, "{st:?}");
        assert_eq!(st.whitney_union_violations + st.whitney_complement_violations + st.c_disjoint_violations, 0);
        assert!(st.n_atoms > 0 && st.c0 >= 1.0);
        let cf = coefficient_functional(&s, &dec.coefficient_list(), 0.5, 0.5, 0.25);
        assert!(cf.is_finite() && cf > 0.0);
    }

    #[test]
    fn zero_field_has_empty_decomposition() {
        let s = spec();
        let dec = atomic_decompose(&SampledField::zeros(s), &ExponentConfig::new(1.0, 1.0, 1)).unwrap();
        assert!(dec.entries.is_empty());
        assert_eq!(coefficient_functional(&s, &[], 1.0, 1.0, 0.5), 0.0);
    }

    #[test]
    fn coefficient_functional_closed_form() {
        let s = spec();
        let cube = LatticeCube::new(vec![0.0], 2.0);
        for eta in [0.25, 0.5, 1.0] {
            let v = coefficient_functional(&s, &[(1.0, cube.clone())], 0.5, 1.0, eta);
            let expected = crate::amalgam::amalgam_norm(&cube.indicator(&s), 0.5, 1.0) / cube.volume().powf(2.0);
            assert!((v - expected).abs() < 1e-12 * expected);
        }
    }

    #[test]
    fn bandlimit_split_kills_large_scales() {
        let s = spec();
        let f = bumpy(s);
        let (u, v) = bandlimit_split(&f).unwrap();
        let mut spec_u = u.values.clone();
        crate::grid::fft_nd(&mut spec_u, &s, false);
        let fmax = spec_u.iter().fold(0.0f64, |m, z| m.max(z.norm()));
        for (k, z) in spec_u.iter().enumerate() {
            if s.freq_vec(k)[0].abs() <= 1.0 {
                assert!(z.norm() <= 1e-13 * fmax);
            }
        }
        assert!(u.add(&v).sub(&f).sup_norm() < 1e-14);
        let dec = unitcube_decompose(&v);
        assert_eq!(dec.max_neighbors, 3);
        let back = dec.resum(&s);
        for (a, b) in back.values.iter().zip(&v.values) {
            assert!((a - b).norm() <= 2f64.powi(-52) * b.norm());
        }
    }

    #[test]
    fn smooth_step_cutoff_profile() {
        assert_eq!(cutoff(0.5), 1.0);
        assert_eq!(cutoff(2.0), 0.0);
        assert!((cutoff(1.5) - 0.5).abs() < 1e-15);
    }
}
