//! Finite-horizon Pesin theory: exponents, regularity factors, homogeneity,
//! Pliss moments and projective derivatives.

use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::dynamics::{norm, normalize, HenonLikeMap, Mat2, OrbitCocycle, Point};
use crate::dynamics::map::escape_at;
use crate::error::{LabError, Result};
use crate::numerics::{compensated_sum, golden_max};

/// Steps between re-orthonormalizations of the accumulated product.
pub const QR_PERIOD: usize = 16;

/// `(chi1, chi2)` from the orbit's Jacobians, `chi1 + chi2` equal to the mean
/// `log |det|`. A zero determinant anywhere gives `chi2 = -inf`.
pub fn lyapunov_exponents(orbit: &OrbitCocycle) -> Result<(f64, f64)> {
    let n = orbit.len();
    if n < 1000 {
        return Err(LabError::Sample { found: n, needed: 1000 });
    }
    let mut m = Mat2::<f64>::identity();
    let mut top = 0.0;
    let flush = |m: &mut Mat2, top: &mut f64| -> Result<()> {
        // Gram-Schmidt on the columns
        let c0 = [m.m[0][0], m.m[1][0]];
        let r11 = norm(c0);
        if r11 == 0.0 || !r11.is_finite() {
            return Err(LabError::Degenerate);
        }
        *top += r11.ln();
        let q0 = [c0[0] / r11, c0[1] / r11];
        *m = Mat2::new(q0[0], -q0[1], q0[1], q0[0]);
        Ok(())
    };
    for (k, j) in orbit.jacs().iter().enumerate() {
        m = j.mul(&m);
        if (k + 1) % QR_PERIOD == 0 {
            flush(&mut m, &mut top)?;
        }
    }
    if n % QR_PERIOD != 0 {
        flush(&mut m, &mut top)?;
    }
    let chi1 = top / n as f64;
    let mean_det = compensated_sum(orbit.log_dets().iter().copied()) / n as f64;
    let chi2 = if mean_det == f64::NEG_INFINITY { mean_det } else { mean_det - chi1 };
    Ok((chi1, chi2))
}

/// Constants of the finite-horizon regularity conditions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularityParams {
    #[serde(rename = "L")]
    pub l: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub lambda: f64,
    pub eta: f64,
    pub t: f64,
}

impl RegularityParams {
    pub fn new(l: f64, epsilon: f64, delta: f64, lambda: f64, eta: f64, t: f64) -> Result<Self> {
        let p = RegularityParams { l, epsilon, delta, lambda, eta, t };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.l >= 1.0) {
            return Err(LabError::Config("L must be at least 1".into()));
        }
        if !(0.0 < self.lambda && self.lambda < 1.0) {
            return Err(LabError::Config("lambda must lie in (0, 1)".into()));
        }
        if !(self.eta < self.epsilon && self.epsilon < self.delta && self.delta < 1.0 && self.epsilon > 0.0) {
            return Err(LabError::Config("need eta < epsilon < delta < 1".into()));
        }
        Ok(())
    }
}

/// Smallest `L >= 1` with `|DF^n E| <= L lambda^{(1-eps) n}` for `1 <= n <= horizon`.
pub fn forward_regularity_factor(orbit: &OrbitCocycle, e: Point, params: &RegularityParams, horizon: usize) -> f64 {
    let logs = orbit.forward_log_norms(normalize(e));
    let rate = (1.0 - params.epsilon) * params.lambda.ln();
    let worst = (1..=horizon.min(orbit.len()))
        .map(|n| logs[n] - rate * n as f64)
        .fold(0.0f64, f64::max);
    worst.exp()
}

/// Smallest `L >= 1` with `|DF^{-n} E| <= L lambda^{-eps n}` for `1 <= n <= horizon`,
/// with `E` based at the orbit's last point.
pub fn backward_regularity_factor(
    orbit: &OrbitCocycle,
    e: Point,
    params: &RegularityParams,
    horizon: usize,
) -> Result<f64> {
    let logs = orbit.backward_log_norms(normalize(e))?;
    let rate = -params.epsilon * params.lambda.ln();
    let worst = (1..=horizon.min(orbit.len()))
        .map(|n| logs[n] - rate * n as f64)
        .fold(0.0f64, f64::max);
    Ok(worst.exp())
}

/// Log-space margins of the two homogeneity conditions; positive means satisfied.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HomogeneityReport {
    /// `min log|DF E| - (1+eta) log lambda` and `-eta log lambda - max log|DF E|`, the smaller.
    pub norm_margin: f64,
    pub jac_margin: f64,
    pub worst_point: Point,
    pub pass: bool,
}

pub const HOMOGENEITY_DIRECTIONS: usize = 64;

pub fn homogeneity_check(map: &HenonLikeMap, sample: &[Point], eta: f64, lambda: f64) -> Result<HomogeneityReport> {
    if sample.is_empty() {
        return Err(LabError::Sample { found: 0, needed: 1 });
    }
    let ll = lambda.ln();
    let mut norm_margin = f64::INFINITY;
    let mut jac_margin = f64::INFINITY;
    let mut worst_point = sample[0];
    for &p in sample {
        let j = map.jacobian(p)?;
        let mut local = f64::INFINITY;
        for k in 0..HOMOGENEITY_DIRECTIONS {
            let th = std::f64::consts::PI * k as f64 / HOMOGENEITY_DIRECTIONS as f64;
            let v = norm(j.apply([th.cos(), th.sin()])).ln();
            local = local.min(v - (1.0 + eta) * ll).min(-eta * ll - v);
        }
        let d = map.log_abs_det(p)?;
        let jm = (d - (1.0 + eta) * ll).min((1.0 - eta) * ll - d);
        if local.min(jm) < norm_margin.min(jac_margin) {
            worst_point = p;
        }
        norm_margin = norm_margin.min(local);
        jac_margin = jac_margin.min(jm);
    }
    Ok(HomogeneityReport { norm_margin, jac_margin, worst_point, pass: norm_margin > 0.0 && jac_margin > 0.0 })
}

/// Scalars for Pliss scans. Integer types give exact comparisons.
pub trait PlissValue: Copy + PartialOrd + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> {
    fn from_count(n: usize) -> Self;
    fn to_f64(self) -> f64;
}

impl PlissValue for i64 {
    fn from_count(n: usize) -> Self {
        n as i64
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl PlissValue for i128 {
    fn from_count(n: usize) -> Self {
        n as i128
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl PlissValue for f64 {
    fn from_count(n: usize) -> Self {
        n as f64
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// A sequence `a_1..a_N` with thresholds `alpha1 < alpha2 < alpha3`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlissQuery<T = f64> {
    pub seq: Vec<T>,
    pub alpha1: T,
    pub alpha2: T,
    pub alpha3: T,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlissKind {
    Preserving,
    Reversing,
    Absolute,
}

impl<T: PlissValue> PlissQuery<T> {
    pub fn new(seq: Vec<T>, alpha1: T, alpha2: T, alpha3: T) -> Result<Self> {
        if !(alpha1 < alpha2 && alpha2 < alpha3) {
            return Err(LabError::Config("need alpha1 < alpha2 < alpha3".into()));
        }
        if seq.iter().any(|a| !(*a > alpha1)) {
            return Err(LabError::Config("every term must exceed alpha1".into()));
        }
        Ok(PlissQuery { seq, alpha1, alpha2, alpha3 })
    }

    /// First prefix length `i` whose average exceeds `alpha2`, if any.
    pub fn hypothesis_failure(&self) -> Option<usize> {
        let mut sum = T::from_count(0);
        for (i, &a) in self.seq.iter().enumerate() {
            sum = sum + a;
            if sum > T::from_count(i + 1) * self.alpha2 {
                return Some(i + 1);
            }
        }
        None
    }

    fn preserving_flags(&self) -> Vec<bool> {
        let n = self.seq.len();
        (0..n)
            .map(|k| {
                let mut sum = T::from_count(0);
                (k..n).all(|j| {
                    sum = sum + self.seq[j];
                    sum <= T::from_count(j - k + 1) * self.alpha3
                })
            })
            .collect()
    }

    fn reversing_flags(&self) -> Vec<bool> {
        let n = self.seq.len();
        (0..n)
            .map(|m| {
                let mut sum = T::from_count(0);
                (1..=m).all(|i| {
                    sum = sum + self.seq[m - i];
                    sum <= T::from_count(i) * self.alpha3
                })
            })
            .collect()
    }

    /// Per-index flags `(preserving, reversing, absolute)`.
    pub fn flags(&self) -> Vec<(bool, bool, bool)> {
        let p = self.preserving_flags();
        let r = self.reversing_flags();
        p.iter().zip(&r).map(|(&a, &b)| (a, b, a && b)).collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["index", "value", "preserving", "reversing", "absolute"])?;
        for (i, (a, f)) in self.seq.iter().zip(self.flags()).enumerate() {
            wr.write_record([
                (i + 1).to_string(),
                a.to_f64().to_string(),
                u8::from(f.0).to_string(),
                u8::from(f.1).to_string(),
                u8::from(f.2).to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// 1-based indices of the Pliss moments of the given kind.
pub fn pliss_moments<T: PlissValue>(q: &PlissQuery<T>, kind: PlissKind) -> Vec<usize> {
    let flags = match kind {
        PlissKind::Preserving => q.preserving_flags(),
        PlissKind::Reversing => q.reversing_flags(),
        PlissKind::Absolute => q.flags().into_iter().map(|f| f.2).collect(),
    };
    flags.iter().enumerate().filter(|(_, &f)| f).map(|(i, _)| i + 1).collect()
}

/// Result of comparing moment densities with their lower bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityCheck {
    /// Exact verdict from cross-multiplied comparisons.
    pub holds: bool,
    /// `min_i (i + shift) / j_i - bound`, `+inf` if there are no moments.
    pub margin: f64,
    pub moments: usize,
}

fn density<T: PlissValue>(moments: &[usize], shift: usize, num: T, den: T) -> DensityCheck {
    // (i + shift) / j_i >= num / den with den > 0
    let mut holds = true;
    let mut margin = f64::INFINITY;
    let bound = num.to_f64() / den.to_f64();
    for (i, &j) in moments.iter().enumerate() {
        let lhs = T::from_count(i + 1 + shift) * den;
        let rhs = T::from_count(j) * num;
        holds &= lhs >= rhs;
        margin = margin.min((i + 1 + shift) as f64 / j as f64 - bound);
    }
    DensityCheck { holds, margin, moments: moments.len() }
}

/// Density of direction-preserving or -reversing moments against
/// `(alpha2 - alpha3) / (alpha1 - alpha3)`.
pub fn pliss_density_check<T: PlissValue>(q: &PlissQuery<T>, kind: PlissKind) -> Result<DensityCheck> {
    if let Some(prefix) = q.hypothesis_failure() {
        return Err(LabError::Hypothesis { prefix });
    }
    let moments = pliss_moments(q, kind);
    let num = q.alpha3 - q.alpha2;
    let den = q.alpha3 - q.alpha1;
    Ok(match kind {
        PlissKind::Absolute => {
            density(&moments, 2, q.alpha1 + q.alpha3 - q.alpha2 - q.alpha2, den)
        }
        _ => density(&moments, 0, num, den),
    })
}

/// `min_i (i + 2) / n_i` minus `(2 alpha2 - alpha1 - alpha3) / (alpha1 - alpha3)` over the
/// absolute moments.
pub fn absolute_pliss_density_check<T: PlissValue>(q: &PlissQuery<T>) -> Result<DensityCheck> {
    pliss_density_check(q, PlissKind::Absolute)
}

/// Cumulative products `DF^k`, `k = 1..=n`, kept as (unit-Frobenius matrix, log scale,
/// log |det|).
#[derive(Clone, Debug)]
struct Cumulative {
    mats: Vec<(Mat2, f64, f64)>,
}

impl Cumulative {
    fn build<'a>(steps: impl Iterator<Item = (Mat2, f64)>) -> Self {
        let mut m = Mat2::<f64>::identity();
        let mut scale = 0.0;
        let mut det = 0.0;
        let mut mats = Vec::new();
        for (j, ld) in steps {
            m = j.mul(&m);
            let f = m.frobenius();
            if f > 0.0 && f.is_finite() {
                m = m.scale(1.0 / f);
                scale += f.ln();
            }
            det += ld;
            mats.push((m, scale, det));
        }
        Cumulative { mats }
    }

    /// `log` of the projective derivative of the `k`th product at direction `e`.
    fn log_pd(&self, k: usize, e: Point) -> Option<f64> {
        let (m, scale, det) = self.mats[k];
        let v = norm(m.apply(e));
        if v == 0.0 {
            return None;
        }
        Some(det - 2.0 * (scale + v.ln()))
    }
}

fn forward_steps(map: &HenonLikeMap, p: Point, n: usize) -> Result<Vec<(Mat2, f64)>> {
    let mut q = p;
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let (q2, j) = map.eval_jac(q).map_err(|e| escape_at(e, k))?;
        out.push((j, map.log_abs_det(q).map_err(|e| escape_at(e, k))?));
        q = q2;
    }
    Ok(out)
}

/// `Jac_p F^n / |D_p F^n E|^2`; negative `n` iterates the inverse map.
pub fn projective_derivative(map: &HenonLikeMap, p: Point, e: Point, n: i64) -> Result<f64> {
    if n == 0 {
        return Ok(1.0);
    }
    let steps = if n > 0 {
        forward_steps(map, p, n as usize)?
    } else {
        let inv = map.inverse_map(*map.domain());
        forward_steps(&inv, p, n.unsigned_abs() as usize)?
    };
    let cum = Cumulative::build(steps.into_iter());
    let k = cum.mats.len() - 1;
    Ok(cum.log_pd(k, normalize(e)).map(f64::exp).unwrap_or(f64::INFINITY))
}

/// Number of directions in the projective grid of the critical-direction search.
pub const DIRECTION_GRID: usize = 1024;

fn direction_search(fwd: &Cumulative, bwd: Option<&Cumulative>) -> (Point, f64) {
    let objective = |th: f64| {
        let e = [th.cos(), th.sin()];
        let mut worst = f64::INFINITY;
        for k in 0..fwd.mats.len() {
            if let Some(v) = fwd.log_pd(k, e) {
                worst = worst.min(v);
            }
        }
        if let Some(b) = bwd {
            for k in 0..b.mats.len() {
                if let Some(v) = b.log_pd(k, e) {
                    worst = worst.min(v);
                }
            }
        }
        worst
    };
    let pi = std::f64::consts::PI;
    let h = pi / DIRECTION_GRID as f64;
    let (mut best_th, mut best) = (0.0, f64::NEG_INFINITY);
    for i in 0..DIRECTION_GRID {
        let th = i as f64 * h;
        let v = objective(th);
        if v > best {
            best = v;
            best_th = th;
        }
    }
    let (th, v) = golden_max(objective, best_th - h, best_th + h, 60);
    if v > best {
        best = v;
        best_th = th;
    }
    ([best_th.cos(), best_th.sin()], best.exp())
}

/// Direction maximizing `min_{1<=n<=N} min(dP F^n(E), dP F^{-n}(E))` at `p`; a margin
/// near or above 1 marks a critical-point candidate. Maps without an inverse use the
/// forward terms only.
pub fn critical_direction_search(map: &HenonLikeMap, p: Point, horizon: usize) -> Result<(Point, f64)> {
    let fwd = Cumulative::build(forward_steps(map, p, horizon)?.into_iter());
    let inv = map.inverse_map(*map.domain());
    let bwd = match forward_steps(&inv, p, horizon) {
        Ok(s) => Some(Cumulative::build(s.into_iter())),
        Err(LabError::Singular(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(direction_search(&fwd, bwd.as_ref()))
}

/// The same search at `orbit.points()[index]`, reading backward steps from the stored
/// orbit instead of iterating the inverse map.
pub fn critical_direction_search_on_orbit(orbit: &OrbitCocycle, index: usize, horizon: usize) -> Result<(Point, f64)> {
    if index < horizon || index + horizon > orbit.len() {
        return Err(LabError::Sample { found: orbit.len(), needed: index + horizon });
    }
    let jacs = orbit.jacs();
    let dets = orbit.log_dets();
    let fwd = Cumulative::build((index..index + horizon).map(|k| (jacs[k], dets[k])));
    let mut back = Vec::with_capacity(horizon);
    for k in (index - horizon..index).rev() {
        back.push((jacs[k].inverse().ok_or(LabError::Degenerate)?, -dets[k]));
    }
    let bwd = Cumulative::build(back.into_iter());
    Ok(direction_search(&fwd, Some(&bwd)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::iterate_orbit;

    #[test]
    fn constant_diagonal_exponents() {
        let lam: f64 = 0.3;
        let o = OrbitCocycle::constant(Mat2::new(1.0, 0.0, 0.0, lam), 2000);
        let (c1, c2) = lyapunov_exponents(&o).unwrap();
        assert_eq!(c1, 0.0);
        assert!((c2 - lam.ln()).abs() < 1e-14);
    }

    #[test]
    fn henon_exponents_sum_to_log_b() {
        let f = HenonLikeMap::henon(-1.4, 0.3);
        let o = iterate_orbit(&f, [0.1, 0.1], 5000).unwrap();
        let (c1, c2) = lyapunov_exponents(&o).unwrap();
        assert!(c1 >= c2);
        assert!((c1 + c2 - 0.3f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn regularity_factors_on_diagonal_cocycle() {
        let lam = 0.5;
        let p = RegularityParams::new(1.0, 0.1, 0.5, lam, 0.05, 0.1).unwrap();
        let o = OrbitCocycle::constant(Mat2::new(1.0, 0.0, 0.0, lam), 50);
        assert_eq!(forward_regularity_factor(&o, [0.0, 1.0], &p, 50), 1.0);
        let l = forward_regularity_factor(&o, [1.0, 0.0], &p, 50);
        assert!((l.ln() + 0.9 * 50.0 * lam.ln()).abs() < 1e-10);
        assert_eq!(backward_regularity_factor(&o, [1.0, 0.0], &p, 50).unwrap(), 1.0);
        let l = backward_regularity_factor(&o, [0.0, 1.0], &p, 50).unwrap();
        assert!((l.ln() + 0.9 * 50.0 * lam.ln()).abs() < 1e-10);
    }

    #[test]
    fn projective_derivative_examples() {
        let f = HenonLikeMap::henon(-1.2, 0.3);
        assert!((projective_derivative(&f, [0.0, 0.4], [1.0, 0.0], 1).unwrap() - 0.3).abs() < 1e-15);
        assert!((projective_derivative(&f, [1.0, 0.4], [1.0, 0.0], 1).unwrap() - 0.06).abs() < 1e-15);
    }

    #[test]
    fn pliss_constant_and_first_index() {
        let q = PlissQuery::new(vec![2i64; 10], 0, 2, 3).unwrap();
        assert_eq!(pliss_moments(&q, PlissKind::Preserving), (1..=10).collect::<Vec<_>>());
        let q = PlissQuery::new(vec![1i64, 5, 1, 1, 1], 0, 2, 3).unwrap();
        assert_eq!(pliss_moments(&q, PlissKind::Reversing)[0], 1);
        assert_eq!(pliss_moments(&q, PlissKind::Reversing), vec![1, 2, 4, 5]);
        assert_eq!(pliss_moments(&q, PlissKind::Preserving), vec![1, 3, 4, 5]);
    }

    #[test]
    fn hypothesis_failure_is_reported() {
        let q = PlissQuery::new(vec![1i64, 4, 1], 0, 2, 3).unwrap();
        assert!(matches!(absolute_pliss_density_check(&q), Err(LabError::Hypothesis { prefix: 2 })));
    }

    #[test]
    fn dominated_cocycle_has_no_critical_direction() {
        let o = OrbitCocycle::constant(Mat2::new(2.0, 0.0, 0.0, 0.5), 40);
        let (_, margin) = critical_direction_search_on_orbit(&o, 20, 10).unwrap();
        assert!(margin < 1.0);
    }
}
