//! Polynomials of degree ≤ δ in the shifted-scaled monomial basis `((x - c)/s)^β`
//! and weighted least-squares projections onto them.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;

/// Gram conditioning above which a projection is flagged as ill-conditioned.
pub const ILL_CONDITIONED: f64 = 1e12;

/// Multi-indices `β` with `|β| ≤ degree`, graded order.
pub fn exponents(dim: usize, degree: usize) -> Vec<[usize; 2]> {
    let mut out = Vec::new();
    for tot in 0..=degree {
        if dim == 1 {
            out.push([tot, 0]);
        } else {
            for a in (0..=tot).rev() {
                out.push([a, tot - a]);
            }
        }
    }
    out
}

/// `Π (x_i - c_i)/s)^{β_i}`.
pub fn monomial(beta: [usize; 2], x: &[f64], center: &[f64], scale: f64) -> f64 {
    x.iter()
        .zip(center)
        .enumerate()
        .map(|(a, (xi, ci))| ((xi - ci) / scale).powi(beta[a] as i32))
        .product()
}

/// A polynomial with its basis anchor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyCoeffs {
    pub degree: usize,
    pub center: Vec<f64>,
    pub scale: f64,
    pub exps: Vec<[usize; 2]>,
    pub coeffs: Vec<Complex64>,
    /// Estimated condition number of the weighted Gram matrix.
    pub condition: f64,
}

impl PolyCoeffs {
    pub fn zero(dim: usize, degree: usize, center: Vec<f64>, scale: f64) -> Self {
        let exps = exponents(dim, degree);
        let coeffs = vec![Complex64::new(0.0, 0.0); exps.len()];
        Self { degree, center, scale, exps, coeffs, condition: 1.0 }
    }

    pub fn eval(&self, x: &[f64]) -> Complex64 {
        self.exps
            .iter()
            .zip(&self.coeffs)
            .map(|(&b, &c)| c * monomial(b, x, &self.center, self.scale))
            .sum()
    }

    pub fn is_ill_conditioned(&self) -> bool {
        self.condition > ILL_CONDITIONED
    }
}

/// Weighted projection of `values` (one per listed cell) onto `P_δ`: the `c` minimizing
/// `Σ w_i |v_i - c(x_i)|²`, computed by two-pass modified Gram–Schmidt of the monomials
/// in the `w`-weighted inner product.
pub fn project_cells(
    spec: &GridSpec,
    cells: &[usize],
    values: &[Complex64],
    weights: &[f64],
    degree: usize,
    center: &[f64],
    scale: f64,
) -> Result<PolyCoeffs> {
    let mass: f64 = weights.iter().sum();
    if !(mass > 0.0) {
        return Err(Error::DegenerateWeight);
    }
    let d = spec.dim;
    let exps = exponents(d, degree);
    let m = exps.len();
    let pts: Vec<[f64; 2]> = cells.iter().map(|&i| spec.center(i)).collect();
    let w: Vec<f64> = weights.iter().map(|v| v / mass).collect();
    let cols: Vec<Vec<f64>> = exps
        .iter()
        .map(|&b| pts.iter().map(|x| monomial(b, &x[..d], center, scale)).collect())
        .collect();
    let dot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).zip(&w).map(|((x, y), wi)| x * y * wi).sum() };
    // q = cols · R^{-1}, with q orthonormal in the weighted inner product.
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut r = vec![vec![0.0; m]; m];
    let mut col_norms = Vec::with_capacity(m);
    for (k, col) in cols.iter().enumerate() {
        let mut v = col.clone();
        col_norms.push(dot(col, col).sqrt());
        for _pass in 0..2 {
            for (i, qi) in q.iter().enumerate() {
                let c = dot(qi, &v);
                r[i][k] += c;
                for (vj, qj) in v.iter_mut().zip(qi) {
                    *vj -= c * qj;
                }
            }
        }
        let mut nrm = dot(&v, &v).sqrt();
        // Columns dependent on the previous ones (too few support points) are dropped.
        if nrm <= 1e-10 * col_norms[k] {
            nrm = 0.0;
            v.iter_mut().for_each(|x| *x = 0.0);
        }
        r[k][k] = nrm;
        if nrm > 0.0 {
            for vj in v.iter_mut() {
                *vj /= nrm;
            }
        }
        q.push(v);
    }
    let diag: Vec<f64> = (0..m).map(|k| r[k][k] / col_norms[k].max(f64::MIN_POSITIVE)).collect();
    let dmin = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    let condition = if dmin > 0.0 { (1.0 / dmin).powi(2) } else { f64::INFINITY };
    // Coefficients against the orthonormal basis, then back-substitute R c = y.
    let y: Vec<Complex64> = q
        .iter()
        .map(|qi| values.iter().zip(qi).zip(&w).map(|((v, qv), wi)| v * (qv * wi)).sum())
        .collect();
    let mut coeffs = vec![Complex64::new(0.0, 0.0); m];
    for k in (0..m).rev() {
        if r[k][k] == 0.0 {
            continue;
        }
        let mut s = y[k];
        for j in k + 1..m {
            s -= coeffs[j] * r[k][j];
        }
        coeffs[k] = s / r[k][k];
    }
    Ok(PolyCoeffs { degree, center: center.to_vec(), scale, exps, coeffs, condition })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::LatticeCube;

    #[test]
    fn polynomials_are_reproduced() {
        let spec = GridSpec::new(2, 2, 8, 0).unwrap();
        let cube = LatticeCube::new(vec![-0.5, 0.25], 1.0);
        let cells = cube.cells(&spec);
        let f = |x: &[f64]| 1.0 + 2.0 * x[0] - x[1] + 0.5 * x[0] * x[1] - x[1] * x[1];
        let vals: Vec<Complex64> = cells.iter().map(|&i| Complex64::new(f(&spec.center(i)), 0.0)).collect();
        let w: Vec<f64> = cells.iter().map(|&i| 1.0 + spec.center(i)[0].powi(2)).collect();
        let p = project_cells(&spec, &cells, &vals, &w, 2, &cube.center(), 1.0).unwrap();
        for (&i, v) in cells.iter().zip(&vals) {
            assert!((p.eval(&spec.center(i)) - v).norm() < 1e-12);
        }
    }

    #[test]
    fn degree_zero_is_weighted_mean() {
        let spec = GridSpec::new(1, 2, 8, 0).unwrap();
        let cells: Vec<usize> = (4..12).collect();
        let vals: Vec<Complex64> = cells.iter().map(|&i| Complex64::new(i as f64, 0.0)).collect();
        let w: Vec<f64> = cells.iter().map(|&i| (i % 3 + 1) as f64).collect();
        let p = project_cells(&spec, &cells, &vals, &w, 0, &[0.0], 1.0).unwrap();
        let mean = vals.iter().zip(&w).map(|(v, wi)| v.re * wi).sum::<f64>() / w.iter().sum::<f64>();
        assert!((p.coeffs[0].re - mean).abs() < 1e-12);
    }

    #[test]
    fn zero_weight_is_degenerate() {
        let spec = GridSpec::new(1, 2, 8, 0).unwrap();
        let r = project_cells(&spec, &[1, 2], &[Complex64::new(1.0, 0.0); 2], &[0.0, 0.0], 0, &[0.0], 1.0);
        assert!(matches!(r, Err(Error::DegenerateWeight)));
    }
}
