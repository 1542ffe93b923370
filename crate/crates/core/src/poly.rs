//! Bivariate polynomials without constant term, for local charts.

use serde::{Deserialize, Serialize};

/// Exponents `(i, j)` of `x^i y^j` with `1 <= i + j <= degree`, by total degree.
pub fn monomials(degree: usize) -> Vec<(u32, u32)> {
    let mut out = Vec::new();
    for d in 1..=degree as u32 {
        for j in 0..=d {
            out.push((d - j, j));
        }
    }
    out
}

pub fn eval_monomials(degree: usize, v: [f64; 2]) -> Vec<f64> {
    monomials(degree).iter().map(|&(i, j)| v[0].powi(i as i32) * v[1].powi(j as i32)).collect()
}

/// `sum c_k x^{i_k} y^{j_k}` in the variable `(p - center) / scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Poly2 {
    pub degree: usize,
    pub coeffs: Vec<f64>,
}

impl Poly2 {
    pub fn zero(degree: usize) -> Self {
        Poly2 { degree, coeffs: vec![0.0; monomials(degree).len()] }
    }

    /// `x` or `y` alone.
    pub fn coordinate(degree: usize, axis: usize) -> Self {
        let mut p = Self::zero(degree);
        p.coeffs[axis] = 1.0;
        p
    }

    pub fn eval(&self, v: [f64; 2]) -> f64 {
        monomials(self.degree)
            .iter()
            .zip(&self.coeffs)
            .map(|(&(i, j), c)| c * v[0].powi(i as i32) * v[1].powi(j as i32))
            .sum()
    }

    /// Coefficient of `x^i y^j`.
    pub fn coeff(&self, i: u32, j: u32) -> f64 {
        monomials(self.degree)
            .iter()
            .position(|&m| m == (i, j))
            .map(|k| self.coeffs[k])
            .unwrap_or(0.0)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Poly2 { degree: self.degree, coeffs: self.coeffs.iter().map(|c| c * s).collect() }
    }
}
