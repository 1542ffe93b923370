use super::geometry::{Mat2, Point};
use super::map::{escape_at, HenonLikeMap};
use crate::error::{LabError, Result};

/// Log singular values of a partial product.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogSvals {
    pub s1: f64,
    pub s2: f64,
}

/// Orbit with per-step Jacobians and cached partial-product data.
///
/// `forward[k]` describes `J_{k-1} ... J_0` (from the first point), `backward[k]`
/// describes `J_{n-1} ... J_{n-k}` (ending at the last point).
#[derive(Clone, Debug)]
pub struct OrbitCocycle {
    points: Vec<Point>,
    jacs: Vec<Mat2>,
    log_dets: Vec<f64>,
    forward: Vec<LogSvals>,
    backward: Vec<LogSvals>,
}

fn accumulate<'a>(mats: impl Iterator<Item = (&'a Mat2, f64)>, left: bool) -> Vec<LogSvals> {
    let mut out = vec![LogSvals { s1: 0.0, s2: 0.0 }];
    let mut m = Mat2::<f64>::identity();
    let mut scale = 0.0;
    let mut log_det = 0.0;
    for (j, ld) in mats {
        m = if left { j.mul(&m) } else { m.mul(j) };
        let f = m.frobenius();
        if f > 0.0 && f.is_finite() {
            m = m.scale(1.0 / f);
            scale += f.ln();
        }
        log_det += ld;
        let s1 = scale + m.spectral_norm().ln();
        out.push(LogSvals { s1, s2: log_det - s1 });
    }
    out
}

impl OrbitCocycle {
    /// Builds a cocycle from explicit data; `log_dets[k]` is `log |det jacs[k]|`.
    pub fn from_parts(points: Vec<Point>, jacs: Vec<Mat2>, log_dets: Vec<f64>) -> Self {
        assert_eq!(points.len(), jacs.len() + 1);
        assert_eq!(jacs.len(), log_dets.len());
        let forward = accumulate(jacs.iter().zip(log_dets.iter().copied()), true);
        let backward = accumulate(jacs.iter().rev().zip(log_dets.iter().rev().copied()), false);
        OrbitCocycle { points, jacs, log_dets, forward, backward }
    }

    /// Constant cocycle `m` repeated `n` times over a dummy orbit at the origin.
    pub fn constant(m: Mat2, n: usize) -> Self {
        let ld = m.det().abs().ln();
        Self::from_parts(vec![[0.0, 0.0]; n + 1], vec![m; n], vec![ld; n])
    }

    pub fn len(&self) -> usize {
        self.jacs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jacs.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn jacs(&self) -> &[Mat2] {
        &self.jacs
    }

    pub fn log_dets(&self) -> &[f64] {
        &self.log_dets
    }

    pub fn forward_svals(&self) -> &[LogSvals] {
        &self.forward
    }

    pub fn backward_svals(&self) -> &[LogSvals] {
        &self.backward
    }

    /// `J_{j-1} ... J_i`.
    pub fn product(&self, i: usize, j: usize) -> Mat2 {
        self.jacs[i..j].iter().fold(Mat2::identity(), |acc, m| m.mul(&acc))
    }

    /// `log |J_{k-1} ... J_0 v|` for `k = 0..=n`, with `|v| = 1` assumed.
    pub fn forward_log_norms(&self, v: Point) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.jacs.len() + 1);
        let mut w = v;
        let mut acc = 0.0;
        out.push(0.0);
        for j in &self.jacs {
            w = j.apply(w);
            let n = w[0].hypot(w[1]);
            acc += n.ln();
            if n > 0.0 {
                w = [w[0] / n, w[1] / n];
            }
            out.push(acc);
        }
        out
    }

    /// `log |(J_{n-1} ... J_{n-k})^{-1} v|` for `k = 0..=n`: backward growth of `v`
    /// based at the last orbit point.
    pub fn backward_log_norms(&self, v: Point) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.jacs.len() + 1);
        let mut w = v;
        let mut acc = 0.0;
        out.push(0.0);
        for j in self.jacs.iter().rev() {
            let inv = j.inverse().ok_or(LabError::Degenerate)?;
            w = inv.apply(w);
            let n = w[0].hypot(w[1]);
            acc += n.ln();
            w = [w[0] / n, w[1] / n];
            out.push(acc);
        }
        Ok(out)
    }
}

/// Iterates `map` `n` times from `p0`, caching Jacobians and log-determinants.
pub fn iterate_orbit(map: &HenonLikeMap, p0: Point, n: usize) -> Result<OrbitCocycle> {
    let mut points = Vec::with_capacity(n + 1);
    let mut jacs = Vec::with_capacity(n);
    let mut log_dets = Vec::with_capacity(n);
    let mut p = p0;
    points.push(p);
    for k in 0..n {
        let (q, j) = map.eval_jac(p).map_err(|e| escape_at(e, k))?;
        log_dets.push(map.log_abs_det(p).map_err(|e| escape_at(e, k))?);
        jacs.push(j);
        p = q;
        points.push(p);
    }
    Ok(OrbitCocycle::from_parts(points, jacs, log_dets))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_orbit_at_fixed_critical_point() {
        let f = HenonLikeMap::henon(0.0, 0.0);
        let o = iterate_orbit(&f, [0.0, 0.0], 5).unwrap();
        assert!(o.points().iter().all(|p| *p == [0.0, 0.0]));
    }

    #[test]
    fn superstable_two_cycle() {
        let f = HenonLikeMap::henon(-1.0, 0.0);
        let o = iterate_orbit(&f, [0.0, 0.0], 4).unwrap();
        assert_eq!(o.points(), &[[0.0, 0.0], [-1.0, 0.0], [0.0, -1.0], [-1.0, 0.0], [0.0, -1.0]]);
    }

    #[test]
    fn escape_reports_index() {
        let f = HenonLikeMap::henon(1.0, 0.3);
        match iterate_orbit(&f, [1.0, 0.0], 50) {
            Err(LabError::Escape { index }) => assert!(index > 0 && index < 5),
            other => panic!("expected escape, got {other:?}"),
        }
    }

    #[test]
    fn svals_multiply_to_determinant() {
        let f = HenonLikeMap::henon(-1.4, 0.3);
        let o = iterate_orbit(&f, [0.1, 0.1], 1000).unwrap();
        for (k, s) in o.forward_svals().iter().enumerate() {
            assert!((s.s1 + s.s2 - k as f64 * 0.3f64.ln()).abs() < 1e-10 * (k as f64).max(1.0));
        }
        let last = o.forward_svals()[1000];
        let back = o.backward_svals()[1000];
        assert!((last.s1 - back.s1).abs() < 1e-8 * last.s1.abs());
    }

    #[test]
    fn product_matches_composed_map() {
        let f = HenonLikeMap::henon(-1.4, 0.3);
        let mut fn_ = f.clone();
        for _ in 1..200 {
            fn_ = fn_.then(&f);
        }
        let o = iterate_orbit(&f, [0.1, 0.1], 200).unwrap();
        let p = o.product(0, 200);
        let q = fn_.jacobian([0.1, 0.1]).unwrap();
        let scale = q.frobenius();
        for r in 0..2 {
            for c in 0..2 {
                assert!((p.m[r][c] - q.m[r][c]).abs() < 1e-8 * scale);
            }
        }
    }
}
