//! Cell-centered sampling on the window `[-L, L)^d`, midpoint quadrature,
//! lattice cubes and FFT convolution on the periodized window.
//!
//! Sample points sit at `x_i = -L + (i + 1/2) h` with `h = 1/M`, so every
//! unit lattice cube `k + [0,1)^d` holds exactly `M^d` cells and indicators of
//! lattice-aligned cubes are represented without quadrature error.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};

/// Discretization of the window `[-L, L)^d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim: usize,
    pub half_width: usize,
    pub per_unit: usize,
    /// Cells next to the window boundary that must stay zero so convolutions never wrap.
    pub margin: usize,
}

impl GridSpec {
    pub fn new(dim: usize, half_width: usize, per_unit: usize, margin: usize) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return precondition(format!("dimension must be 1 or 2, got {dim}"));
        }
        if half_width == 0 {
            return precondition("half-width L must be positive");
        }
        if per_unit < 8 {
            return precondition(format!("M must be at least 8, got {per_unit}"));
        }
        let spec = Self { dim, half_width, per_unit, margin };
        if 2 * margin >= spec.side_cells() {
            return precondition("margin leaves no interior cells");
        }
        Ok(spec)
    }

    /// Cells per axis, `2LM`.
    pub fn side_cells(&self) -> usize {
        2 * self.half_width * self.per_unit
    }

    /// Total number of cells, `(2LM)^d`.
    pub fn len(&self) -> usize {
        self.side_cells().pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn h(&self) -> f64 {
        1.0 / self.per_unit as f64
    }

    /// Volume of one cell, `h^d`.
    pub fn cell_volume(&self) -> f64 {
        self.h().powi(self.dim as i32)
    }

    pub fn l(&self) -> f64 {
        self.half_width as f64
    }

    /// Coordinate of the center of cell `i` along one axis.
    pub fn coord(&self, i: usize) -> f64 {
        -self.l() + (i as f64 + 0.5) * self.h()
    }

    /// Axis indices of a flat (row-major) cell index.
    pub fn unravel(&self, idx: usize) -> [usize; 2] {
        let n = self.side_cells();
        if self.dim == 1 {
            [idx, 0]
        } else {
            [idx / n, idx % n]
        }
    }

    pub fn ravel(&self, ij: [usize; 2]) -> usize {
        if self.dim == 1 {
            ij[0]
        } else {
            ij[0] * self.side_cells() + ij[1]
        }
    }

    /// Center of a flat cell index; unused trailing coordinates are 0.
    pub fn center(&self, idx: usize) -> [f64; 2] {
        let ij = self.unravel(idx);
        if self.dim == 1 {
            [self.coord(ij[0]), 0.0]
        } else {
            [self.coord(ij[0]), self.coord(ij[1])]
        }
    }

    /// Signed integer offset of axis index `i` on the torus, in `[-n/2, n/2)`.
    pub fn signed(&self, i: usize) -> i64 {
        let n = self.side_cells() as i64;
        let i = i as i64;
        if i < n / 2 {
            i
        } else {
            i - n
        }
    }

    /// Frequency `ξ_k = k / (2L)` of DFT index `k` along one axis.
    pub fn freq(&self, k: usize) -> f64 {
        self.signed(k) as f64 / (2.0 * self.l())
    }

    /// Frequency vector of a flat DFT index.
    pub fn freq_vec(&self, idx: usize) -> [f64; 2] {
        let ij = self.unravel(idx);
        if self.dim == 1 {
            [self.freq(ij[0]), 0.0]
        } else {
            [self.freq(ij[0]), self.freq(ij[1])]
        }
    }

    /// Displacement vector `m h` of a flat index read as a torus offset.
    pub fn offset_vec(&self, idx: usize) -> [f64; 2] {
        let ij = self.unravel(idx);
        let h = self.h();
        if self.dim == 1 {
            [self.signed(ij[0]) as f64 * h, 0.0]
        } else {
            [self.signed(ij[0]) as f64 * h, self.signed(ij[1]) as f64 * h]
        }
    }

    /// Lattice cubes `k + [0,1)^d` covering the window, in row-major order.
    pub fn lattice_cubes(&self) -> Vec<LatticeCube> {
        let l = self.half_width as i64;
        let mut out = Vec::new();
        if self.dim == 1 {
            for k in -l..l {
                out.push(LatticeCube::new(vec![k as f64], 1.0));
            }
        } else {
            for k0 in -l..l {
                for k1 in -l..l {
                    out.push(LatticeCube::new(vec![k0 as f64, k1 as f64], 1.0));
                }
            }
        }
        out
    }

    /// Flat cell indices of each lattice cube, without floating-point membership tests.
    pub fn lattice_cells(&self) -> Vec<Vec<usize>> {
        let m = self.per_unit;
        let nc = 2 * self.half_width;
        let mut out = Vec::with_capacity(nc.pow(self.dim as u32));
        if self.dim == 1 {
            for k in 0..nc {
                out.push((k * m..(k + 1) * m).collect());
            }
        } else {
            for k0 in 0..nc {
                for k1 in 0..nc {
                    let mut cells = Vec::with_capacity(m * m);
                    for i in k0 * m..(k0 + 1) * m {
                        for j in k1 * m..(k1 + 1) * m {
                            cells.push(self.ravel([i, j]));
                        }
                    }
                    out.push(cells);
                }
            }
        }
        out
    }

    /// Whether the flat index lies within the boundary margin.
    pub fn in_margin(&self, idx: usize) -> bool {
        let n = self.side_cells();
        let ij = self.unravel(idx);
        (0..self.dim).any(|a| ij[a] < self.margin || ij[a] >= n - self.margin)
    }
}

/// Whether a field carries an imaginary part.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ValueKind {
    Real,
    Complex,
}

/// A function sampled at the cell centers of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledField {
    pub spec: GridSpec,
    pub values: Vec<Complex64>,
    pub kind: ValueKind,
}

impl SampledField {
    pub fn zeros(spec: GridSpec) -> Self {
        Self { spec, values: vec![Complex64::new(0.0, 0.0); spec.len()], kind: ValueKind::Real }
    }

    pub fn from_real(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        Self::from_complex(spec, values.into_iter().map(|v| Complex64::new(v, 0.0)).collect())
            .map(|mut f| {
                f.kind = ValueKind::Real;
                f
            })
    }

    pub fn from_complex(spec: GridSpec, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != spec.len() {
            return precondition(format!("expected {} values, got {}", spec.len(), values.len()));
        }
        if let Some(index) = values.iter().position(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NonFinite { index, point: spec.center(index)[..spec.dim].to_vec() });
        }
        let kind = if values.iter().all(|v| v.im == 0.0) { ValueKind::Real } else { ValueKind::Complex };
        Ok(Self { spec, values, kind })
    }

    pub fn abs(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm()).collect()
    }

    pub fn re(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.re).collect()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.norm()))
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| v * c)
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        let values: Vec<Complex64> = self.values.iter().map(|&v| f(v)).collect();
        Self::with_values(self.spec, values)
    }

    /// Builds a field from values already known to be finite.
    pub(crate) fn with_values(spec: GridSpec, values: Vec<Complex64>) -> Self {
        let kind = if values.iter().all(|v| v.im == 0.0) { ValueKind::Real } else { ValueKind::Complex };
        Self { spec, values, kind }
    }

    /// The same samples read as a torus function: the margin is dropped, since outputs of
    /// nonlocal torus operators are periodic by construction and cannot "wrap".
    pub fn periodic(mut self) -> Self {
        self.spec.margin = 0;
        self
    }

    pub fn add(&self, other: &Self) -> Self {
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        Self::with_values(self.spec, values)
    }

    pub fn sub(&self, other: &Self) -> Self {
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Self::with_values(self.spec, values)
    }

    pub fn mul(&self, other: &Self) -> Self {
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a * b).collect();
        Self::with_values(self.spec, values)
    }

    /// Midpoint-rule integral `∫ f`.
    pub fn integral(&self) -> Complex64 {
        self.values.iter().sum::<Complex64>() * self.spec.cell_volume()
    }

    /// Indices of cells with a nonzero value.
    pub fn support(&self) -> Vec<usize> {
        (0..self.values.len()).filter(|&i| self.values[i] != Complex64::new(0.0, 0.0)).collect()
    }

    /// Fails with `WrapRisk` if the field is nonzero inside the boundary margin.
    pub fn check_margin(&self) -> Result<()> {
        if self.spec.margin == 0 {
            return Ok(());
        }
        match (0..self.values.len())
            .find(|&i| self.spec.in_margin(i) && self.values[i] != Complex64::new(0.0, 0.0))
        {
            Some(index) => Err(Error::WrapRisk { margin: self.spec.margin, index }),
            None => Ok(()),
        }
    }
}

/// Samples a real expression at cell centers.
pub fn sample(spec: GridSpec, expr: impl Fn(&[f64]) -> f64) -> Result<SampledField> {
    let values = (0..spec.len())
        .map(|i| {
            let x = spec.center(i);
            expr(&x[..spec.dim])
        })
        .collect();
    SampledField::from_real(spec, values)
}

/// Samples a complex expression at cell centers.
pub fn sample_complex(spec: GridSpec, expr: impl Fn(&[f64]) -> Complex64) -> Result<SampledField> {
    let values = (0..spec.len())
        .map(|i| {
            let x = spec.center(i);
            expr(&x[..spec.dim])
        })
        .collect();
    SampledField::from_complex(spec, values)
}

/// Axis-parallel cube `corner + [0, side]^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeCube {
    pub corner: Vec<f64>,
    pub side: f64,
}

impl LatticeCube {
    pub fn new(corner: Vec<f64>, side: f64) -> Self {
        assert!(side > 0.0, "cube side must be positive");
        Self { corner, side }
    }

    pub fn dim(&self) -> usize {
        self.corner.len()
    }

    /// Lebesgue measure `side^d`.
    pub fn volume(&self) -> f64 {
        self.side.powi(self.dim() as i32)
    }

    pub fn diam(&self) -> f64 {
        self.side * (self.dim() as f64).sqrt()
    }

    pub fn center(&self) -> Vec<f64> {
        self.corner.iter().map(|c| c + self.side / 2.0).collect()
    }

    /// The cube `λQ` with the same center.
    pub fn dilate(&self, lambda: f64) -> Self {
        let side = self.side * lambda;
        let corner = self.center().iter().map(|c| c - side / 2.0).collect();
        Self { corner, side }
    }

    /// Closed-cube membership of a point.
    pub fn contains(&self, x: &[f64]) -> bool {
        self.corner.iter().zip(x).all(|(&c, &xi)| xi >= c && xi <= c + self.side)
    }

    pub fn intersects(&self, other: &Self) -> bool {
        self.corner
            .iter()
            .zip(&other.corner)
            .all(|(&a, &b)| a <= b + other.side && b <= a + self.side)
    }

    /// Distance from the closed cube to a point (0 inside).
    pub fn dist_to(&self, x: &[f64]) -> f64 {
        self.corner
            .iter()
            .zip(x)
            .map(|(&c, &xi)| {
                let d = (c - xi).max(xi - c - self.side).max(0.0);
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Inclusive per-axis index ranges of cells whose centers lie in the closed cube,
    /// clipped to the window; `None` if no center lies inside.
    pub fn index_ranges(&self, spec: &GridSpec) -> Option<[(usize, usize); 2]> {
        let h = spec.h();
        let n = spec.side_cells() as i64;
        let mut out = [(0usize, 0usize); 2];
        for a in 0..spec.dim {
            let lo = ((self.corner[a] + spec.l()) / h - 0.5).ceil() as i64;
            let hi = ((self.corner[a] + self.side + spec.l()) / h - 0.5).floor() as i64;
            let (lo, hi) = (lo.max(0), hi.min(n - 1));
            if lo > hi {
                return None;
            }
            out[a] = (lo as usize, hi as usize);
        }
        Some(out)
    }

    /// Flat indices of cells whose centers lie in the closed cube.
    pub fn cells(&self, spec: &GridSpec) -> Vec<usize> {
        let Some(r) = self.index_ranges(spec) else { return Vec::new() };
        let mut out = Vec::new();
        if spec.dim == 1 {
            out.extend(r[0].0..=r[0].1);
        } else {
            for i in r[0].0..=r[0].1 {
                for j in r[1].0..=r[1].1 {
                    out.push(spec.ravel([i, j]));
                }
            }
        }
        out
    }

    /// Indicator field of the cube.
    pub fn indicator(&self, spec: &GridSpec) -> SampledField {
        let mut f = SampledField::zeros(*spec);
        for i in self.cells(spec) {
            f.values[i] = Complex64::new(1.0, 0.0);
        }
        f
    }
}

/// `(Σ h^d |v_i|^q)^{1/q}` over the listed magnitudes, computed relative to their maximum
/// so small `q` and tiny values never underflow.
pub fn lq_of_magnitudes(mags: impl Iterator<Item = f64> + Clone, q: f64, cell_volume: f64) -> f64 {
    let m = mags.clone().fold(0.0f64, f64::max);
    if m == 0.0 {
        return 0.0;
    }
    if q.is_infinite() {
        return m;
    }
    let s: f64 = mags.map(|v| (v / m).powf(q)).sum::<f64>() * cell_volume;
    m * s.powf(1.0 / q)
}

/// Midpoint-rule `L^q` quasi-norm over a region (whole window if `None`).
pub fn lq_norm(f: &SampledField, q: f64, region: Option<&LatticeCube>) -> f64 {
    assert!(q > 0.0, "q must be positive");
    let vol = f.spec.cell_volume();
    match region {
        None => lq_of_magnitudes(f.values.iter().map(|v| v.norm()), q, vol),
        Some(cube) => {
            let cells = cube.cells(&f.spec);
            lq_of_magnitudes(cells.iter().map(|&i| f.values[i].norm()), q, vol)
        }
    }
}

/// Normalizing constant `c_d` of the standard bump, fixed by adaptive quadrature.
pub fn bump_constant(dim: usize) -> f64 {
    static CONSTS: OnceLock<[f64; 2]> = OnceLock::new();
    CONSTS.get_or_init(|| {
        let g = |r: f64| if r < 1.0 { (-1.0 / (1.0 - r * r)).exp() } else { 0.0 };
        let i1 = 2.0 * adaptive_simpson(&g, 0.0, 1.0, 1e-16);
        let i2 = 2.0 * std::f64::consts::PI * adaptive_simpson(&|r| r * g(r), 0.0, 1.0, 1e-16);
        [1.0 / i1, 1.0 / i2]
    })[dim - 1]
}

/// Standard bump `c_d exp(-1/(1-|x|^2))` on the unit ball, unit mass.
pub fn bump(x: &[f64]) -> f64 {
    let r2: f64 = x.iter().map(|v| v * v).sum();
    if r2 >= 1.0 {
        0.0
    } else {
        bump_constant(x.len()) * (-1.0 / (1.0 - r2)).exp()
    }
}

/// Adaptive Simpson quadrature on `[a, b]`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// Shared-ownership real function of a point.
pub type PointFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Convolution kernel, given either in space (dilated as `t^{-d} φ(x/t)`) or by its
/// Fourier transform (dilated as `φ̂(tξ)`).
#[derive(Clone)]
pub enum Kernel {
    Spatial { profile: PointFn, mass: f64 },
    Frequency { symbol: PointFn },
}

impl std::fmt::Debug for Kernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Kernel::Spatial { mass, .. } => write!(f, "Kernel::Spatial {{ mass: {mass} }}"),
            Kernel::Frequency { .. } => write!(f, "Kernel::Frequency"),
        }
    }
}

impl Kernel {
    /// The standard unit-mass bump supported in the unit ball.
    pub fn standard_bump() -> Self {
        Kernel::Spatial { profile: Arc::new(bump), mass: 1.0 }
    }

    /// Discrete spectrum of `φ_t` on the torus, including the `h^d` quadrature weight.
    pub fn spectrum(&self, spec: &GridSpec, t: f64) -> Vec<Complex64> {
        let d = spec.dim;
        match self {
            Kernel::Spatial { profile, mass } => {
                let scale = t.powi(-(d as i32)) * spec.cell_volume();
                let mut buf: Vec<Complex64> = (0..spec.len())
                    .map(|i| {
                        let z = spec.offset_vec(i);
                        let y: Vec<f64> = z[..d].iter().map(|v| v / t).collect();
                        Complex64::new(profile(&y) * scale, 0.0)
                    })
                    .collect();
                fft_nd(&mut buf, spec, false);
                buf[0] = Complex64::new(*mass, 0.0);
                buf
            }
            Kernel::Frequency { symbol } => (0..spec.len())
                .map(|k| {
                    let xi = spec.freq_vec(k);
                    let y: Vec<f64> = xi[..d].iter().map(|v| v * t).collect();
                    Complex64::new(symbol(&y), 0.0)
                })
                .collect(),
        }
    }
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    static PLANS: OnceLock<Mutex<HashMap<(usize, bool), Arc<dyn Fft<f64>>>>> = OnceLock::new();
    let mut plans = PLANS.get_or_init(|| Mutex::new(HashMap::new())).lock().unwrap();
    plans
        .entry((n, inverse))
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            if inverse {
                planner.plan_fft_inverse(n)
            } else {
                planner.plan_fft_forward(n)
            }
        })
        .clone()
}

/// Unnormalized in-place DFT over all axes (`e^{-2πi jk/n}` forward).
pub fn fft_nd(buf: &mut [Complex64], spec: &GridSpec, inverse: bool) {
    let n = spec.side_cells();
    let p = plan(n, inverse);
    if spec.dim == 1 {
        p.process(buf);
        return;
    }
    for row in buf.chunks_mut(n) {
        p.process(row);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); n];
    for j in 0..n {
        for i in 0..n {
            col[i] = buf[i * n + j];
        }
        p.process(&mut col);
        for i in 0..n {
            buf[i * n + j] = col[i];
        }
    }
}

/// Normalized inverse DFT (so that `ifft(fft(v)) = v`).
pub fn ifft_nd(buf: &mut [Complex64], spec: &GridSpec) {
    fft_nd(buf, spec, true);
    let inv = 1.0 / spec.len() as f64;
    for v in buf.iter_mut() {
        *v *= inv;
    }
}

/// A field with its DFT cached, ready for repeated convolutions.
#[derive(Debug, Clone)]
pub struct Convolver {
    pub spec: GridSpec,
    spectrum: Vec<Complex64>,
}

impl Convolver {
    pub fn new(f: &SampledField) -> Result<Self> {
        f.check_margin()?;
        let mut spectrum = f.values.clone();
        fft_nd(&mut spectrum, &f.spec, false);
        Ok(Self { spec: f.spec, spectrum })
    }

    /// Smallest resolvable dilation `4h`.
    pub fn t_floor(&self) -> f64 {
        4.0 * self.spec.h()
    }

    /// Periodized `f ∗ φ_t`.
    pub fn convolve(&self, kernel: &Kernel, t: f64) -> Result<SampledField> {
        if t < self.t_floor() * (1.0 - 1e-12) {
            return Err(Error::UnderResolved { t, floor: self.t_floor() });
        }
        let k = kernel.spectrum(&self.spec, t);
        Ok(self.apply_spectrum(&k))
    }

    /// Multiplies the cached spectrum by `k` and transforms back.
    pub fn apply_spectrum(&self, k: &[Complex64]) -> SampledField {
        let mut buf: Vec<Complex64> = self.spectrum.iter().zip(k).map(|(a, b)| a * b).collect();
        ifft_nd(&mut buf, &self.spec);
        SampledField::with_values(self.spec, buf)
    }

    pub fn spectrum(&self) -> &[Complex64] {
        &self.spectrum
    }
}

/// One-shot `f ∗ φ_t`.
pub fn convolve_dilated(f: &SampledField, kernel: &Kernel, t: f64) -> Result<SampledField> {
    Convolver::new(f)?.convolve(kernel, t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec1(l: usize, m: usize) -> GridSpec {
        GridSpec::new(1, l, m, 0).unwrap()
    }

    #[test]
    fn bump_constants_match_high_precision_quadrature() {
        assert!((bump_constant(1) - 2.252_283_621_043_581).abs() < 1e-12);
        assert!((bump_constant(2) - 2.143_565_775_792_236_6).abs() < 1e-12);
    }

    #[test]
    fn indicator_of_unit_cube_is_exact() {
        let s = spec1(2, 8);
        let f = sample(s, |x| if (0.0..1.0).contains(&x[0]) { 1.0 } else { 0.0 }).unwrap();
        assert_eq!(f.support().len(), 8);
        assert_eq!(lq_norm(&f, 2.0, Some(&LatticeCube::new(vec![0.0], 1.0))), 1.0);
        assert!((lq_norm(&f, 0.5, None) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn midpoint_norm_of_linear_function() {
        let s = spec1(2, 64);
        let f = sample(s, |x| if (0.0..1.0).contains(&x[0]) { x[0] } else { 0.0 }).unwrap();
        let v = lq_norm(&f, 2.0, Some(&LatticeCube::new(vec![0.0], 1.0)));
        let exact = (1.0f64 / 3.0).sqrt();
        assert!((v - exact).abs() < s.h() * s.h());
    }

    #[test]
    fn nonfinite_sample_is_rejected_with_location() {
        let s = spec1(2, 8);
        let err = sample(s, |x| if x[0] > 1.0 { f64::NAN } else { 0.0 }).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }

    #[test]
    fn constant_convolution_is_constant() {
        let s = spec1(4, 16);
        let f = sample(s, |_| 1.0).unwrap();
        for t in [0.25, 0.5, 1.0, 3.0] {
            let g = convolve_dilated(&f, &Kernel::standard_bump(), t).unwrap();
            assert!(g.values.iter().all(|v| (v.re - 1.0).abs() < 1e-13 && v.im.abs() < 1e-13));
        }
    }

    #[test]
    fn under_resolved_dilation_is_refused() {
        let s = spec1(4, 16);
        let f = SampledField::zeros(s);
        let err = convolve_dilated(&f, &Kernel::standard_bump(), 0.1).unwrap_err();
        assert!(matches!(err, Error::UnderResolved { .. }));
    }

    #[test]
    fn margin_violation_is_wrap_risk() {
        let s = GridSpec::new(1, 4, 16, 4).unwrap();
        let f = sample(s, |x| if x[0] < -3.9 { 1.0 } else { 0.0 }).unwrap();
        assert!(matches!(Convolver::new(&f), Err(Error::WrapRisk { .. })));
    }

    #[test]
    fn convolution_error_scales_like_t_squared() {
        let s = spec1(8, 64);
        let f = sample(s, |x| (-x[0] * x[0] / 2.0).exp()).unwrap();
        let err = |t: f64| {
            let g = convolve_dilated(&f, &Kernel::standard_bump(), t).unwrap();
            g.sub(&f).sup_norm()
        };
        let (e1, e2) = (err(0.5), err(0.25));
        assert!((e1 / e2 - 4.0).abs() < 0.3, "ratio {}", e1 / e2);
    }

    #[test]
    fn translation_equivariance() {
        let s = spec1(4, 16);
        let f = sample(s, |x| (-(x[0] - 0.3).powi(2)).exp() * x[0].sin()).unwrap();
        let mut shifted = f.clone();
        shifted.values.rotate_right(1);
        let k = Kernel::standard_bump();
        let a = convolve_dilated(&f, &k, 0.5).unwrap();
        let mut b = convolve_dilated(&shifted, &k, 0.5).unwrap();
        b.values.rotate_left(1);
        assert!(a.sub(&b).sup_norm() < 1e-14);
    }

    #[test]
    fn two_dimensional_constant_and_indicator() {
        let s = GridSpec::new(2, 2, 8, 0).unwrap();
        let cube = LatticeCube::new(vec![0.0, -1.0], 1.0);
        assert_eq!(cube.cells(&s).len(), 64);
        let f = sample(s, |_| 1.0).unwrap();
        let g = convolve_dilated(&f, &Kernel::standard_bump(), 0.5).unwrap();
        assert!(g.values.iter().all(|v| (v.re - 1.0).abs() < 1e-13));
    }

    #[test]
    fn window_norm_regroups_over_lattice_cubes() {
        let s = spec1(4, 16);
        let f = sample(s, |x| (3.0 * x[0]).sin() + 0.1).unwrap();
        for q in [0.3, 1.0, 2.5] {
            let whole = lq_norm(&f, q, None);
            let parts: f64 = s.lattice_cubes().iter().map(|c| lq_norm(&f, q, Some(c)).powf(q)).sum();
            assert!((whole - parts.powf(1.0 / q)).abs() <= 1e-12 * whole);
        }
    }
}
