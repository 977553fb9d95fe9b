//! Maximal operators: Hardy–Littlewood, vector-valued, and mollifier maximal
//! functions (radial, non-tangential, auxiliary, grand) in global and local
//! scope, with the derived `H^(q,p)` / `H_loc^(q,p)` quasi-norms.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::amalgam::{amalgam_norm_of_magnitudes, ExponentConfig};
use crate::error::{precondition, Error, Result};
use crate::grid::{bump_constant, fft_nd, ifft_nd, Convolver, GridSpec, Kernel, SampledField};

/// Centered Hardy–Littlewood maximal function of `|f|` (zero extension outside the window).
///
/// In one dimension the supremum is exact: for a cell-wise constant function the ball
/// integral is linear in `r` between cell boundaries, so the sup over all radii is
/// attained at radii `(m + 1/2) h`. In two dimensions radii run over `h·2^{k/8}`.
pub fn hl_maximal(f: &SampledField) -> SampledField {
    let a = f.abs();
    let out = if f.spec.dim == 1 { hl_1d(&a) } else { hl_2d(&a, &f.spec) };
    SampledField::with_values(f.spec, out.into_iter().map(|v| Complex64::new(v, 0.0)).collect())
}

fn hl_1d(a: &[f64]) -> Vec<f64> {
    let n = a.len();
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + a[i];
    }
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut best = 0.0f64;
            for m in 0..n {
                let lo = i.saturating_sub(m);
                let hi = (i + m + 1).min(n);
                let avg = (prefix[hi] - prefix[lo]) / (2 * m + 1) as f64;
                best = best.max(avg);
                if lo == 0 && hi == n {
                    break;
                }
            }
            best
        })
        .collect()
}

fn hl_2d(a: &[f64], spec: &GridSpec) -> Vec<f64> {
    let n = spec.side_cells();
    // Zero-pad to three times the window so no ball up to the window diameter wraps.
    let pad = GridSpec { dim: 2, half_width: 3 * spec.half_width, per_unit: spec.per_unit, margin: 0 };
    let np = pad.side_cells();
    let off = n;
    let mut buf = vec![Complex64::new(0.0, 0.0); pad.len()];
    for i in 0..n {
        for j in 0..n {
            buf[(i + off) * np + j + off] = Complex64::new(a[i * n + j], 0.0);
        }
    }
    fft_nd(&mut buf, &pad, false);
    let h = spec.h();
    let rmax = 2.0 * spec.l() * 2f64.sqrt();
    let radii: Vec<f64> = (0..).map(|k| 0.5 * h * 2f64.powf(k as f64 / 8.0)).take_while(|&r| r <= rmax * 1.2).collect();
    let fields: Vec<Vec<f64>> = radii
        .par_iter()
        .map(|&r| {
            let mut disk = vec![Complex64::new(0.0, 0.0); pad.len()];
            let mut count = 0.0;
            for idx in 0..pad.len() {
                let z = pad.offset_vec(idx);
                if z[0] * z[0] + z[1] * z[1] <= r * r {
                    disk[idx] = Complex64::new(1.0, 0.0);
                    count += 1.0;
                }
            }
            fft_nd(&mut disk, &pad, false);
            let mut prod: Vec<Complex64> = buf.iter().zip(&disk).map(|(x, y)| x * y / count).collect();
            ifft_nd(&mut prod, &pad);
            let mut out = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    out[i * n + j] = prod[(i + off) * np + j + off].re.max(0.0);
                }
            }
            out
        })
        .collect();
    let mut best: Vec<f64> = a.to_vec();
    for fl in &fields {
        for (b, v) in best.iter_mut().zip(fl) {
            *b = b.max(*v);
        }
    }
    best
}

/// Fefferman–Stein vector-valued comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorMaximalReport {
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs / rhs`; `None` when both sides vanish.
    pub ratio: Option<f64>,
}

/// `‖(Σ 𝔐(f_n)^u)^{1/u}‖_{q,p}` against `‖(Σ |f_n|^u)^{1/u}‖_{q,p}`.
pub fn fs_vector_maximal_check(fs: &[SampledField], u: f64, q: f64, p: f64) -> Result<VectorMaximalReport> {
    if !(u > 1.0 && q > 1.0 && p > 1.0) || q.is_infinite() {
        return precondition(format!("vector maximal inequality needs 1 < u ≤ ∞, 1 < q < ∞, 1 < p ≤ ∞, got u={u} q={q} p={p}"));
    }
    let Some(first) = fs.first() else {
        return Ok(VectorMaximalReport { lhs: 0.0, rhs: 0.0, ratio: None });
    };
    let spec = first.spec;
    let combine = |acc: &mut [f64], v: &[f64]| {
        for (a, x) in acc.iter_mut().zip(v) {
            if u.is_infinite() {
                *a = a.max(*x);
            } else {
                *a += x.powf(u);
            }
        }
    };
    let mut lhs = vec![0.0; spec.len()];
    let mut rhs = vec![0.0; spec.len()];
    for f in fs {
        combine(&mut lhs, &hl_maximal(f).abs());
        combine(&mut rhs, &f.abs());
    }
    if u.is_finite() {
        for v in lhs.iter_mut().chain(rhs.iter_mut()) {
            *v = v.powf(1.0 / u);
        }
    }
    let (l, r) = (amalgam_norm_of_magnitudes(&spec, &lhs, q, p), amalgam_norm_of_magnitudes(&spec, &rhs, q, p));
    let ratio = if r == 0.0 && l == 0.0 { None } else { Some(l / r) };
    Ok(VectorMaximalReport { lhs: l, rhs: r, ratio })
}

/// Whether dilations run over all of `T` or only `t ≤ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Global,
    Local,
}

/// Shape of the supremum in `y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Variant {
    /// `sup_t |f∗φ_t(x)|`.
    Radial,
    /// `sup_t sup_{|y-x| ≤ a t} |f∗φ_t(y)|`.
    Nontangential { a: f64 },
    /// `sup_t sup_y |f∗φ_t(x-y)| (1 + |y|/t)^{-b}`.
    Auxiliary { b: f64 },
}

/// Dilation grid and sup shape of a mollifier maximal function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaximalParams {
    pub scope: Scope,
    pub variant: Variant,
    /// Number of upward dyadic dilations `2^j, j = 1..J_up` in global scope; default `⌊log₂ L⌋`.
    pub j_up: Option<usize>,
    /// Extra dilations appended to the dyadic grid (still filtered by scope and floor).
    #[serde(default)]
    pub extra_t: Vec<f64>,
}

impl MaximalParams {
    pub fn new(scope: Scope, variant: Variant) -> Self {
        Self { scope, variant, j_up: None, extra_t: Vec::new() }
    }

    pub fn local_radial() -> Self {
        Self::new(Scope::Local, Variant::Radial)
    }

    pub fn global_radial() -> Self {
        Self::new(Scope::Global, Variant::Radial)
    }

    /// The dilation set `T`, ascending, with the floor `4h` applied.
    pub fn dilations(&self, spec: &GridSpec) -> Result<Vec<f64>> {
        let floor = 4.0 * spec.h();
        let j_fine = (1.0 / floor).log2().ceil().max(0.0) as i32;
        let mut ts: Vec<f64> = (0..=j_fine).map(|j| 2f64.powi(-j)).collect();
        if self.scope == Scope::Global {
            let j_up = self.j_up.unwrap_or((spec.l()).log2().floor() as usize);
            ts.extend((1..=j_up as i32).map(|j| 2f64.powi(j)));
        }
        ts.extend(self.extra_t.iter().copied());
        ts.retain(|&t| t >= floor * (1.0 - 1e-12) && (self.scope == Scope::Global || t <= 1.0));
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        if ts.is_empty() {
            return Err(Error::UnderResolved { t: 1.0, floor });
        }
        Ok(ts)
    }
}

/// `sup` over the given mollifiers (one kernel, or every member of a test family).
pub fn smooth_maximal(f: &SampledField, kernels: &[Kernel], params: &MaximalParams) -> Result<SampledField> {
    let ts = params.dilations(&f.spec)?;
    let conv = Convolver::new(f)?;
    let jobs: Vec<(usize, f64)> = (0..kernels.len()).flat_map(|k| ts.iter().map(move |&t| (k, t))).collect();
    let parts: Vec<Vec<f64>> = jobs
        .par_iter()
        .map(|&(k, t)| {
            let g = conv.convolve(&kernels[k], t)?.abs();
            Ok(match params.variant {
                Variant::Radial => g,
                Variant::Nontangential { a } => disk_max(&g, &f.spec, a * t),
                Variant::Auxiliary { b } => auxiliary_sup(&g, &f.spec, t, b),
            })
        })
        .collect::<Result<_>>()?;
    let mut out = vec![0.0f64; f.spec.len()];
    for p in &parts {
        for (o, v) in out.iter_mut().zip(p) {
            *o = o.max(*v);
        }
    }
    Ok(SampledField::with_values(f.spec, out.into_iter().map(|v| Complex64::new(v, 0.0)).collect()))
}

/// Sliding maximum over a periodic row with half-width `w`.
fn sliding_max_wrap(row: &[f64], w: usize) -> Vec<f64> {
    let n = row.len();
    if 2 * w + 1 >= n {
        let m = row.iter().cloned().fold(0.0, f64::max);
        return vec![m; n];
    }
    let mut out = vec![0.0; n];
    let mut dq: std::collections::VecDeque<usize> = std::collections::VecDeque::new();
    let ext = |k: usize| row[(k + n - w) % n];
    for k in 0..n + 2 * w {
        let v = ext(k);
        while let Some(&b) = dq.back() {
            if ext(b) <= v {
                dq.pop_back();
            } else {
                break;
            }
        }
        dq.push_back(k);
        if k >= 2 * w {
            let start = k - 2 * w;
            while *dq.front().unwrap() < start {
                dq.pop_front();
            }
            out[start] = ext(*dq.front().unwrap());
        }
    }
    out
}

/// `sup_{|y-x| ≤ radius} g(y)` on the torus.
fn disk_max(g: &[f64], spec: &GridSpec, radius: f64) -> Vec<f64> {
    let n = spec.side_cells();
    let rc = (radius / spec.h() + 1e-9).floor() as usize;
    if spec.dim == 1 {
        return sliding_max_wrap(g, rc);
    }
    let rc_i = rc as i64;
    let mut widths: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let half: Vec<usize> = (-rc_i..=rc_i)
        .map(|dy| (((rc_i * rc_i - dy * dy) as f64).sqrt() + 1e-9).floor() as usize)
        .collect();
    for &w in &half {
        widths.entry(w).or_insert_with(|| {
            let mut out = Vec::with_capacity(n * n);
            for row in g.chunks(n) {
                out.extend(sliding_max_wrap(row, w));
            }
            out
        });
    }
    let mut out = vec![0.0f64; n * n];
    for (k, dy) in (-rc_i..=rc_i).enumerate() {
        let hw = &widths[&half[k]];
        for i in 0..n {
            let src = ((i as i64 + dy).rem_euclid(n as i64)) as usize;
            for j in 0..n {
                let v = hw[src * n + j];
                if v > out[i * n + j] {
                    out[i * n + j] = v;
                }
            }
        }
    }
    out
}

/// `sup_{|y| ≤ R_b} g(x-y) (1 + |y|/t)^{-b}` on the torus, with `R_b` where the weight drops below `1e-6`.
fn auxiliary_sup(g: &[f64], spec: &GridSpec, t: f64, b: f64) -> Vec<f64> {
    let h = spec.h();
    let rb = (t * (1e6f64.powf(1.0 / b) - 1.0)).min(spec.l());
    let rc = (rb / h).floor() as i64;
    let n = spec.side_cells() as i64;
    let mut offsets: Vec<(i64, i64, f64)> = Vec::new();
    let range1 = if spec.dim == 1 { 0..=0 } else { -rc..=rc };
    for dx in -rc..=rc {
        for dy in range1.clone() {
            let r = ((dx * dx + dy * dy) as f64).sqrt() * h;
            if r <= rb + 1e-12 {
                offsets.push((dx, dy, (1.0 + r / t).powf(-b)));
            }
        }
    }
    (0..spec.len())
        .into_par_iter()
        .map(|idx| {
            let ij = spec.unravel(idx);
            let mut best = 0.0f64;
            for &(dx, dy, w) in &offsets {
                let i = (ij[0] as i64 - dx).rem_euclid(n) as usize;
                let src = if spec.dim == 1 { i } else { i * n as usize + (ij[1] as i64 - dy).rem_euclid(n) as usize };
                best = best.max(g[src] * w);
            }
            best
        })
        .collect()
}

/// `‖f‖_{H^(q,p)}` (global scope) or `‖f‖_{H_loc^(q,p)}` (local scope).
pub fn hqp_norm(f: &SampledField, cfg: &ExponentConfig, params: &MaximalParams, kernels: &[Kernel]) -> Result<f64> {
    if let Variant::Auxiliary { b } = params.variant {
        let d = f.spec.dim as f64;
        if b <= (d / cfg.q).max(d / cfg.p) {
            return precondition(format!("auxiliary maximal needs b > max(d/q, d/p), got b={b}"));
        }
    }
    let m = smooth_maximal(f, kernels, params)?;
    Ok(amalgam_norm_of_magnitudes(&f.spec, &m.abs(), cfg.q, cfg.p))
}

/// `‖f‖_{H_loc^(q,p)}` with the radial maximal function of the standard bump.
pub fn hloc_norm(f: &SampledField, q: f64, p: f64) -> Result<f64> {
    let m = smooth_maximal(f, &[Kernel::standard_bump()], &MaximalParams::local_radial())?;
    Ok(amalgam_norm_of_magnitudes(&f.spec, &m.abs(), q, p))
}

/// Taylor coefficients `w[a][b]` (total degree ≤ k) of `exp(-1/(1-|x+ε|²))` in `ε`,
/// so that `∂₁^a ∂₂^b` of the unnormalized bump equals `a! b! w[a][b]`.
fn bump_jet(x: &[f64], k: usize) -> Vec<Vec<f64>> {
    let (x1, x2) = (x[0], if x.len() > 1 { x[1] } else { 0.0 });
    let two_d = x.len() > 1;
    let mut w = vec![vec![0.0; k + 1]; k + 1];
    let u0 = 1.0 - x1 * x1 - x2 * x2;
    if u0 <= 0.0 {
        return w;
    }
    let w0 = (-1.0 / u0).exp();
    if w0 == 0.0 {
        return w;
    }
    // u = u0 - 2 x1 ε1 - 2 x2 ε2 - ε1² - ε2²
    let uc = |a: usize, b: usize| -> f64 {
        match (a, b) {
            (0, 0) => u0,
            (1, 0) => -2.0 * x1,
            (0, 1) => -2.0 * x2,
            (2, 0) | (0, 2) => -1.0,
            _ => 0.0,
        }
    };
    let bmax = |a: usize| if two_d { k - a } else { 0 };
    // r = 1/u
    let mut r = vec![vec![0.0; k + 1]; k + 1];
    for tot in 0..=k {
        for a in 0..=tot {
            let b = tot - a;
            if b > bmax(a) {
                continue;
            }
            if tot == 0 {
                r[0][0] = 1.0 / u0;
                continue;
            }
            let mut s = 0.0;
            for (da, db) in [(1, 0), (0, 1), (2, 0), (0, 2)] {
                if da <= a && db <= b {
                    s += uc(da, db) * r[a - da][b - db];
                }
            }
            r[a][b] = -s / u0;
        }
    }
    // v = -r, w = exp(v)
    let v = |a: usize, b: usize| -r[a][b];
    w[0][0] = w0;
    for tot in 1..=k {
        for a in 0..=tot {
            let b = tot - a;
            if b > bmax(a) {
                continue;
            }
            let mut s = 0.0;
            if a >= 1 {
                for ia in 1..=a {
                    for ib in 0..=b {
                        s += ia as f64 * v(ia, ib) * w[a - ia][b - ib];
                    }
                }
                w[a][b] = s / a as f64;
            } else {
                for ib in 1..=b {
                    s += ib as f64 * v(0, ib) * w[0][b - ib];
                }
                w[0][b] = s / b as f64;
            }
        }
    }
    w
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|v| v as f64).product()
}

/// All partial derivatives `∂^α φ(x)` of the standard (normalized) bump with `|α| ≤ k`.
pub fn bump_derivatives(x: &[f64], k: usize) -> Vec<Vec<f64>> {
    let c = bump_constant(x.len());
    let mut w = bump_jet(x, k);
    for (a, row) in w.iter_mut().enumerate() {
        for (b, v) in row.iter_mut().enumerate() {
            *v *= c * factorial(a) * factorial(b);
        }
    }
    w
}

/// A test function `(∂^α φ)((x-τ)/s) / 𝔑_N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyMember {
    pub alpha: [usize; 2],
    pub shift: Vec<f64>,
    pub dilation: f64,
    /// `𝔑_N` of the unnormalized function.
    pub raw_norm: f64,
}

impl FamilyMember {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let s = self.dilation;
        let y: Vec<f64> = x.iter().zip(&self.shift).map(|(a, b)| (a - b) / s).collect();
        if y.iter().map(|v| v * v).sum::<f64>() >= 1.0 {
            return 0.0;
        }
        let k = self.alpha[0] + self.alpha[1];
        bump_derivatives(&y, k)[self.alpha[0]][self.alpha[1]] / self.raw_norm
    }

    pub fn kernel(&self) -> Kernel {
        let me = self.clone();
        let d = self.shift.len();
        let mass = if self.alpha == [0, 0] { self.dilation.powi(d as i32) / self.raw_norm } else { 0.0 };
        Kernel::Spatial { profile: Arc::new(move |x: &[f64]| me.eval(x)), mass }
    }
}

/// `𝔑_N(ψ) = ∫ (1+|x|)^N Σ_{|β| ≤ N+1} |∂^β ψ(x)| dx` for `ψ = (∂^α φ)((·-τ)/s)`,
/// by midpoint quadrature on the support ball.
pub fn n_norm(alpha: [usize; 2], shift: &[f64], dilation: f64, n: usize) -> f64 {
    let d = shift.len();
    let k = alpha[0] + alpha[1] + n + 1;
    let pts = if d == 1 { 4000 } else { 160 };
    let dy = 2.0 / pts as f64;
    let coord = |i: usize| -1.0 + (i as f64 + 0.5) * dy;
    let integrand = |y: &[f64]| -> f64 {
        let ders = bump_derivatives(y, k);
        let x: Vec<f64> = y.iter().zip(shift).map(|(v, t)| dilation * v + t).collect();
        let weight = (1.0 + x.iter().map(|v| v * v).sum::<f64>().sqrt()).powi(n as i32);
        let mut s = 0.0;
        for b1 in 0..=n + 1 {
            let b2max = if d == 1 { 0 } else { n + 1 - b1 };
            for b2 in 0..=b2max {
                s += dilation.powi(-((b1 + b2) as i32)) * ders[alpha[0] + b1][alpha[1] + b2].abs();
            }
        }
        weight * s * dilation.powi(d as i32)
    };
    let total: f64 = if d == 1 {
        (0..pts).map(|i| integrand(&[coord(i)])).sum()
    } else {
        (0..pts)
            .into_par_iter()
            .map(|i| (0..pts).map(|j| integrand(&[coord(i), coord(j)])).sum::<f64>())
            .collect::<Vec<_>>()
            .iter()
            .sum()
    };
    total * dy.powi(d as i32)
}

/// Finite subfamily of `F_N`: normalized derivatives of the bump, translated and dilated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFamily {
    pub order: usize,
    pub members: Vec<FamilyMember>,
}

impl TestFamily {
    /// Derivatives of orders `0..=N` (all of them in 1-D, pure axis derivatives in 2-D),
    /// undilated at the origin and dilated by 1/2 at shifts `{0, ±1/4}` along each axis.
    pub fn standard(dim: usize, n: usize) -> Self {
        let mut alphas = vec![[0usize, 0usize]];
        for k in 1..=n {
            alphas.push([k, 0]);
            if dim == 2 {
                alphas.push([0, k]);
            }
        }
        let mut placements: Vec<(Vec<f64>, f64)> = vec![(vec![0.0; dim], 1.0), (vec![0.0; dim], 0.5)];
        for axis in 0..dim {
            for s in [-0.25, 0.25] {
                let mut tau = vec![0.0; dim];
                tau[axis] = s;
                placements.push((tau, 0.5));
            }
        }
        let members = alphas
            .iter()
            .flat_map(|&alpha| placements.iter().map(move |(shift, dil)| (alpha, shift.clone(), *dil)))
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|(alpha, shift, dilation)| {
                let raw_norm = n_norm(alpha, &shift, dilation, n);
                FamilyMember { alpha, shift, dilation, raw_norm }
            })
            .collect();
        Self { order: n, members }
    }

    pub fn kernels(&self) -> Vec<Kernel> {
        self.members.iter().map(FamilyMember::kernel).collect()
    }
}

/// Norms of the retained maximal functions and their pairwise ratios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub norms: BTreeMap<String, f64>,
    /// `None` entries mark 0/0.
    pub ratios: BTreeMap<String, Option<f64>>,
    /// Whether every local maximal function is pointwise ≤ its global counterpart.
    pub local_le_global: bool,
}

/// `‖M^0_{F_N} f‖`, `‖M_{F_N} f‖`, `‖M_φ f‖` in both scopes, with pairwise ratios.
pub fn equivalence_report(f: &SampledField, cfg: &ExponentConfig, family: &TestFamily) -> Result<EquivalenceReport> {
    let fam = family.kernels();
    let phi = [Kernel::standard_bump()];
    let mut norms = BTreeMap::new();
    let mut local_le_global = true;
    let variants: [(&str, &[Kernel], Variant); 3] = [
        ("grand_radial", &fam, Variant::Radial),
        ("grand_nontangential", &fam, Variant::Nontangential { a: 1.0 }),
        ("radial_phi", &phi, Variant::Radial),
    ];
    for (name, ks, v) in variants {
        let g = smooth_maximal(f, ks, &MaximalParams::new(Scope::Global, v))?;
        let l = smooth_maximal(f, ks, &MaximalParams::new(Scope::Local, v))?;
        local_le_global &= l.values.iter().zip(&g.values).all(|(a, b)| a.re <= b.re);
        norms.insert(format!("global_{name}"), amalgam_norm_of_magnitudes(&f.spec, &g.re(), cfg.q, cfg.p));
        norms.insert(format!("local_{name}"), amalgam_norm_of_magnitudes(&f.spec, &l.re(), cfg.q, cfg.p));
    }
    let ratio = |a: f64, b: f64| if a == 0.0 && b == 0.0 { None } else { Some(a / b) };
    let mut ratios = BTreeMap::new();
    for scope in ["global", "local"] {
        let g0 = norms[&format!("{scope}_grand_radial")];
        let gn = norms[&format!("{scope}_grand_nontangential")];
        let ph = norms[&format!("{scope}_radial_phi")];
        ratios.insert(format!("{scope}_nontangential_over_radial"), ratio(gn, g0));
        ratios.insert(format!("{scope}_nontangential_over_phi"), ratio(gn, ph));
        ratios.insert(format!("{scope}_radial_over_phi"), ratio(g0, ph));
    }
    Ok(EquivalenceReport { norms, ratios, local_le_global })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{sample, LatticeCube};

    fn spec1() -> GridSpec {
        GridSpec::new(1, 8, 64, 0).unwrap()
    }

    #[test]
    fn hl_of_unit_indicator_matches_closed_form() {
        let s = spec1();
        let f = LatticeCube::new(vec![0.0], 1.0).indicator(&s);
        let m = hl_maximal(&f);
        for i in 0..s.side_cells() {
            let x = s.coord(i);
            if (1.5..=4.0).contains(&x) {
                assert!((m.values[i].re - 0.5 / x).abs() < 1e-12 * (0.5 / x));
            }
        }
    }

    #[test]
    fn hl_two_dimensional_dominates_function() {
        let s = GridSpec::new(2, 2, 8, 0).unwrap();
        let f = LatticeCube::new(vec![0.0, 0.0], 1.0).indicator(&s);
        let m = hl_maximal(&f);
        assert!(m.values.iter().zip(&f.values).all(|(a, b)| a.re >= b.re - 1e-12));
        assert!(m.values.iter().all(|v| v.re <= 1.0 + 1e-12));
    }

    #[test]
    fn jet_matches_finite_differences() {
        let x = [0.3, -0.2];
        let d = bump_derivatives(&x, 3);
        let e = 1e-4;
        let phi = |a: f64, b: f64| crate::grid::bump(&[a, b]);
        let fd_x = (phi(x[0] + e, x[1]) - phi(x[0] - e, x[1])) / (2.0 * e);
        let fd_xy = (phi(x[0] + e, x[1] + e) - phi(x[0] + e, x[1] - e) - phi(x[0] - e, x[1] + e) + phi(x[0] - e, x[1] - e)) / (4.0 * e * e);
        assert!((d[1][0] - fd_x).abs() < 1e-6);
        assert!((d[1][1] - fd_xy).abs() < 1e-5);
        let d1 = bump_derivatives(&[0.4], 2);
        let fd2 = (crate::grid::bump(&[0.4 + e]) - 2.0 * crate::grid::bump(&[0.4]) + crate::grid::bump(&[0.4 - e])) / (e * e);
        assert!((d1[2][0] - fd2).abs() < 1e-5);
    }

    #[test]
    fn family_members_have_unit_n_norm() {
        let fam = TestFamily::standard(1, 2);
        assert_eq!(fam.members.len(), 3 * 4);
        for m in &fam.members {
            let again = n_norm(m.alpha, &m.shift, m.dilation, 2) / m.raw_norm;
            assert!(again <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn constant_gives_constant_radial_maximal() {
        let s = GridSpec::new(1, 4, 16, 0).unwrap();
        let f = sample(s, |_| 1.0).unwrap();
        let m = smooth_maximal(&f, &[Kernel::standard_bump()], &MaximalParams::global_radial()).unwrap();
        assert!(m.values.iter().all(|v| (v.re - 1.0).abs() < 1e-12));
    }

    #[test]
    fn variant_orderings_hold_pointwise() {
        let s = GridSpec::new(1, 4, 16, 8).unwrap();
        let f = sample(s, |x| if x[0].abs() < 2.0 { (3.0 * x[0]).sin() * (1.0 - x[0] * x[0] / 4.0) } else { 0.0 }).unwrap();
        let k = [Kernel::standard_bump()];
        let rad = smooth_maximal(&f, &k, &MaximalParams::local_radial()).unwrap();
        let nt = smooth_maximal(&f, &k, &MaximalParams::new(Scope::Local, Variant::Nontangential { a: 1.0 })).unwrap();
        let b = 3.0;
        let aux = smooth_maximal(&f, &k, &MaximalParams::new(Scope::Local, Variant::Auxiliary { b })).unwrap();
        let glob = smooth_maximal(&f, &k, &MaximalParams::global_radial()).unwrap();
        for i in 0..s.len() {
            assert!(nt.values[i].re >= rad.values[i].re);
            assert!(aux.values[i].re >= 2f64.powf(-b) * nt.values[i].re * (1.0 - 1e-12));
            assert!(glob.values[i].re >= rad.values[i].re);
        }
    }

    #[test]
    fn two_dimensional_nontangential_dominates_radial() {
        let s = GridSpec::new(2, 2, 16, 4).unwrap();
        let f = sample(s, |x| (-(x[0] * x[0] + 2.0 * x[1] * x[1]) * 3.0).exp() * if x[0].abs() < 1.5 && x[1].abs() < 1.5 { 1.0 } else { 0.0 }).unwrap();
        let k = [Kernel::standard_bump()];
        let rad = smooth_maximal(&f, &k, &MaximalParams::local_radial()).unwrap();
        let nt = smooth_maximal(&f, &k, &MaximalParams::new(Scope::Local, Variant::Nontangential { a: 1.0 })).unwrap();
        assert!(rad.values.iter().zip(&nt.values).all(|(r, n)| n.re >= r.re));
    }

    #[test]
    fn dilation_grid_respects_floor_and_scope() {
        let s = spec1();
        let local = MaximalParams::local_radial().dilations(&s).unwrap();
        assert_eq!(local, vec![1.0 / 16.0, 0.125, 0.25, 0.5, 1.0]);
        let global = MaximalParams::global_radial().dilations(&s).unwrap();
        assert_eq!(*global.last().unwrap(), 8.0);
    }

    #[test]
    fn vector_maximal_single_indicator() {
        let s = GridSpec::new(1, 4, 16, 0).unwrap();
        let f = LatticeCube::new(vec![0.0], 1.0).indicator(&s);
        let rep = fs_vector_maximal_check(&[f], 2.0, 2.0, 2.0).unwrap();
        assert!(rep.ratio.unwrap() >= 1.0);
        let z = SampledField::zeros(s);
        assert_eq!(fs_vector_maximal_check(&[z], 2.0, 2.0, 2.0).unwrap().ratio, None);
    }
}
