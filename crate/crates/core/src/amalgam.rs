//! Wiener amalgam quasi-norm `‖f‖_{q,p}`: `L^q` on each unit lattice cube,
//! `ℓ^p` across cubes, plus the embedding and reverse-Minkowski inequalities.

use serde::{Deserialize, Serialize};

use crate::error::{precondition, Result};
use crate::grid::{lq_of_magnitudes, GridSpec, SampledField};

/// Space parameters `(q, p, r, δ, η, N)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentConfig {
    pub q: f64,
    pub p: f64,
    /// Atom integrability exponent; `null` in JSON means `+∞`.
    #[serde(with = "infinite_as_null")]
    pub r: f64,
    pub delta: usize,
    pub eta: f64,
    /// Order of the grand maximal test family.
    pub n_order: usize,
}

impl ExponentConfig {
    /// Config with the smallest admissible `δ` and `N` for dimension `d`, `r = ∞`.
    pub fn new(q: f64, p: f64, dim: usize) -> Self {
        let d = dim as f64;
        let delta = min_delta(q, dim);
        let n_order = ((d / q).floor().max((d / p).floor()) as usize) + 1;
        Self { q, p, r: f64::INFINITY, delta, eta: (q / 2.0).min(1.0), n_order }
    }

    pub fn with_delta(mut self, delta: usize) -> Self {
        self.delta = delta;
        self
    }

    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }

    pub fn with_r(mut self, r: f64) -> Self {
        self.r = r;
        self
    }

    /// Checks the constraints that hold for every experiment.
    pub fn validate(&self, dim: usize) -> Result<()> {
        let d = dim as f64;
        if !(self.q > 0.0 && self.q.is_finite()) {
            return precondition(format!("q must lie in (0,∞), got {}", self.q));
        }
        if !(self.p > 0.0 && self.p.is_finite()) {
            return precondition(format!("p must lie in (0,∞), got {}", self.p));
        }
        if self.r <= 1.0 {
            return precondition(format!("r must lie in (1,∞], got {}", self.r));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return precondition(format!("η must lie in (0,1], got {}", self.eta));
        }
        if self.delta < min_delta(self.q, dim) {
            return precondition(format!("δ = {} is below ⌊d(1/q-1)⌋ = {}", self.delta, min_delta(self.q, dim)));
        }
        let n_min = ((d / self.q).floor().max((d / self.p).floor()) as usize) + 1;
        if self.n_order < n_min {
            return precondition(format!("N = {} is below max(⌊d/q⌋,⌊d/p⌋)+1 = {n_min}", self.n_order));
        }
        Ok(())
    }

    /// Additional constraints for atomic decompositions: `0 < q ≤ 1`, `q ≤ p`,
    /// and `r > max(p,1)`, `η < q` when `r < ∞`.
    pub fn validate_atomic(&self, dim: usize) -> Result<()> {
        self.validate(dim)?;
        if self.q > 1.0 {
            return precondition(format!("atomic work needs q ≤ 1, got {}", self.q));
        }
        if self.q > self.p {
            return precondition(format!("atomic work needs q ≤ p, got q={} p={}", self.q, self.p));
        }
        if self.r.is_finite() && (self.r <= self.p.max(1.0) || self.eta >= self.q) {
            return precondition("finite r needs r > max(p,1) and η < q");
        }
        Ok(())
    }
}

/// `⌊d(1/q − 1)⌋` clamped at zero.
pub fn min_delta(q: f64, dim: usize) -> usize {
    (dim as f64 * (1.0 / q - 1.0) + 1e-12).floor().max(0.0) as usize
}

pub(crate) mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_none()
        } else {
            s.serialize_some(v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// `‖·‖_{q,p}` of nonnegative cell magnitudes on a grid.
pub fn amalgam_norm_of_magnitudes(spec: &GridSpec, mags: &[f64], q: f64, p: f64) -> f64 {
    let vol = spec.cell_volume();
    let cube_norms: Vec<f64> = spec
        .lattice_cells()
        .iter()
        .map(|cells| lq_of_magnitudes(cells.iter().map(|&i| mags[i]), q, vol))
        .collect();
    lq_of_magnitudes(cube_norms.iter().copied(), p, 1.0)
}

/// Amalgam quasi-norm `‖f‖_{q,p}` over the window's lattice cubes.
pub fn amalgam_norm(f: &SampledField, q: f64, p: f64) -> f64 {
    assert!(q > 0.0 && p > 0.0, "exponents must be positive");
    amalgam_norm_of_magnitudes(&f.spec, &f.abs(), q, p)
}

/// One side-by-side comparison `lhs ≤ rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

impl Comparison {
    /// Records `lhs ≤ rhs` with a relative rounding allowance `rel`.
    pub fn le(name: impl Into<String>, lhs: f64, rhs: f64, rel: f64) -> Self {
        let holds = lhs <= rhs * (1.0 + rel) + f64::MIN_POSITIVE;
        Self { name: name.into(), lhs, rhs, holds }
    }

    pub fn ratio(&self) -> f64 {
        if self.rhs == 0.0 {
            if self.lhs == 0.0 {
                1.0
            } else {
                f64::INFINITY
            }
        } else {
            self.lhs / self.rhs
        }
    }
}

/// Relative allowance for rounding in inequalities that hold exactly in real arithmetic.
pub const ROUNDING_REL: f64 = 1e-12;

/// Both embedding inequalities: `‖f‖_{q,p1} ≤ ‖f‖_{q,p}` for `p ≤ p1`, and
/// `‖f‖_{q,p} ≤ ‖f‖_{q1,p}` for `q ≤ q1` (unit lattice cubes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingReport {
    pub sequence: Comparison,
    pub local: Comparison,
}

impl EmbeddingReport {
    pub fn holds(&self) -> bool {
        self.sequence.holds && self.local.holds
    }
}

pub fn embedding_check(f: &SampledField, q: f64, p: f64, q1: f64, p1: f64) -> Result<EmbeddingReport> {
    if p > p1 || q > q1 {
        return precondition(format!("embedding needs p ≤ p1 and q ≤ q1, got p={p} p1={p1} q={q} q1={q1}"));
    }
    let base = amalgam_norm(f, q, p);
    Ok(EmbeddingReport {
        sequence: Comparison::le("‖f‖_{q,p1} ≤ ‖f‖_{q,p}", amalgam_norm(f, q, p1), base, ROUNDING_REL),
        local: Comparison::le("‖f‖_{q,p} ≤ ‖f‖_{q1,p}", base, amalgam_norm(f, q1, p), ROUNDING_REL),
    })
}

/// `Σ ‖f_n‖_{q,p} ≤ ‖Σ |f_n|‖_{q,p}` for `q < 1`, `p ≤ 1`.
pub fn reverse_minkowski_check(fs: &[SampledField], q: f64, p: f64) -> Result<Comparison> {
    if q >= 1.0 || p > 1.0 {
        return precondition(format!("reverse Minkowski needs q < 1 and p ≤ 1, got q={q} p={p}"));
    }
    let Some(first) = fs.first() else {
        return Ok(Comparison::le("Σ‖f_n‖ ≤ ‖Σ|f_n|‖", 0.0, 0.0, 0.0));
    };
    let lhs: f64 = fs.iter().map(|f| amalgam_norm(f, q, p)).sum();
    let mut total = vec![0.0; first.spec.len()];
    for f in fs {
        for (t, v) in total.iter_mut().zip(&f.values) {
            *t += v.norm();
        }
    }
    let rhs = amalgam_norm_of_magnitudes(&first.spec, &total, q, p);
    Ok(Comparison::le("Σ‖f_n‖ ≤ ‖Σ|f_n|‖", lhs, rhs, ROUNDING_REL))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{lq_norm, LatticeCube};

    fn spec() -> GridSpec {
        GridSpec::new(1, 4, 16, 0).unwrap()
    }

    #[test]
    fn unit_cube_indicator_has_norm_one() {
        let f = LatticeCube::new(vec![0.0], 1.0).indicator(&spec());
        for (q, p) in [(0.3, 0.5), (1.0, 1.0), (2.0, 0.7), (0.5, f64::INFINITY)] {
            assert!((amalgam_norm(&f, q, p) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn two_cubes_give_two_to_the_one_over_p() {
        let s = spec();
        let f = LatticeCube::new(vec![0.0], 1.0).indicator(&s).add(&LatticeCube::new(vec![2.0], 1.0).indicator(&s));
        for p in [0.5, 1.0, 2.0] {
            assert!((amalgam_norm(&f, 0.7, p) - 2f64.powf(1.0 / p)).abs() < 1e-14);
        }
        let rep = embedding_check(&f, 1.0, 1.0, 1.0, 2.0).unwrap();
        assert!((rep.sequence.lhs - 2f64.sqrt()).abs() < 1e-14 && rep.sequence.rhs == 2.0);
    }

    #[test]
    fn diagonal_amalgam_equals_lebesgue() {
        let s = spec();
        let f = crate::grid::sample(s, |x| (x[0] * 1.7).sin() * (-x[0].abs()).exp()).unwrap();
        for q in [0.3, 1.0, 3.0] {
            let a = amalgam_norm(&f, q, q);
            assert!((a - lq_norm(&f, q, None)).abs() <= 1e-12 * a);
        }
    }

    #[test]
    fn reverse_minkowski_closed_form() {
        let s = spec();
        let a = LatticeCube::new(vec![0.0], 1.0).indicator(&s);
        let b = LatticeCube::new(vec![-2.0], 1.0).indicator(&s);
        let rep = reverse_minkowski_check(&[a, b], 0.5, 0.5).unwrap();
        assert_eq!((rep.lhs, rep.rhs), (2.0, 4.0));
        assert!(reverse_minkowski_check(&[], 1.0, 0.5).is_err());
    }

    #[test]
    fn config_validation() {
        let c = ExponentConfig::new(0.5, 0.5, 1);
        assert_eq!((c.delta, c.n_order), (1, 3));
        c.validate_atomic(1).unwrap();
        assert!(c.with_delta(0).validate(1).is_err());
        let json = serde_json::to_string(&c).unwrap();
        let back: ExponentConfig = serde_json::from_str(&json).unwrap();
        assert!(back.r.is_infinite());
    }
}
