//! Period doubling in one dimension: superstable ladder, Feigenbaum ratios,
//! normalized renormalization, and the a priori checks on the limit set.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::QuadraticMap;
use crate::error::{LabError, Result};
use crate::numerics::{aitken, brent, scan_roots};
use crate::real::{DoubleDouble, Precision, Real};

pub const LADDER_TOLERANCE: f64 = 1e-12;

/// A unimodal interval map with a smooth critical point.
pub trait Unimodal: Send + Sync {
    fn eval(&self, x: f64) -> f64;
    fn deriv(&self, x: f64) -> f64;
    fn critical_point(&self) -> f64;
}

impl Unimodal for QuadraticMap {
    fn eval(&self, x: f64) -> f64 {
        QuadraticMap::eval(self, x)
    }
    fn deriv(&self, x: f64) -> f64 {
        QuadraticMap::deriv(self, x)
    }
    fn critical_point(&self) -> f64 {
        0.0
    }
}

/// `f_a^n(0)` and its derivative in `a`.
fn critical_orbit_t<T: Real>(a: T, n: usize) -> (T, T) {
    let two = T::from_f64(2.0);
    let (mut x, mut dx) = (T::zero(), T::zero());
    for _ in 0..n {
        dx = two * x * dx + T::one();
        x = x * x + a;
    }
    (x, dx)
}

fn residual(a: f64, a_lo: f64, n: usize, precision: Precision) -> f64 {
    match precision {
        Precision::Standard => critical_orbit_t(a, n).0.abs(),
        Precision::Compensated => critical_orbit_t(DoubleDouble::new(a, a_lo), n).0.to_f64().abs(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LadderEntry {
    pub level: usize,
    pub a: f64,
    /// Low word of the parameter in compensated mode, zero otherwise.
    pub a_lo: f64,
    pub residual: f64,
    pub bracket: (f64, f64),
}

/// Superstable parameters `a_n` with `f_{a_n}^{2^n}(0) = 0` along the doubling cascade.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuperstableLadder {
    pub precision: Precision,
    pub entries: Vec<LadderEntry>,
}

/// Root of `a -> f_a^R(0)` in `[lo, hi]`, taking the sign change nearest `start`.
fn solve_level(level: usize, lo: f64, hi: f64, start: f64, precision: Precision) -> Result<LadderEntry> {
    let period = 1usize << level;
    let g = |a: f64| critical_orbit_t(a, period).0;
    let cells = 256;
    let (from, to) = if (start - lo).abs() < (start - hi).abs() { (lo, hi) } else { (hi, lo) };
    let mut prev = (from, g(from));
    let mut cell = None;
    for i in 1..=cells {
        let a = from + (to - from) * i as f64 / cells as f64;
        let v = g(a);
        if prev.1 == 0.0 {
            cell = Some((prev.0, prev.0));
            break;
        }
        if (v > 0.0) != (prev.1 > 0.0) || v == 0.0 {
            cell = Some((prev.0, a));
            break;
        }
        prev = (a, v);
    }
    let (c0, c1) = cell.ok_or(LabError::Bracket { lo, hi })?;
    let bracket = (c0.min(c1), c0.max(c1));
    let mut a = if c0 == c1 { c0 } else { brent(g, bracket.0, bracket.1, 0.0)? };
    let mut a_lo = 0.0;
    match precision {
        Precision::Standard => {
            for _ in 0..3 {
                let (x, dx) = critical_orbit_t(a, period);
                if x == 0.0 || dx == 0.0 {
                    break;
                }
                let next = a - x / dx;
                if next < bracket.0 || next > bracket.1 {
                    break;
                }
                if critical_orbit_t(next, period).0.abs() < x.abs() {
                    a = next;
                } else {
                    break;
                }
            }
        }
        Precision::Compensated => {
            let mut ad = DoubleDouble::from_f64(a);
            for _ in 0..4 {
                let (x, dx) = critical_orbit_t(ad, period);
                if x.to_f64() == 0.0 || dx.to_f64() == 0.0 {
                    break;
                }
                ad -= x / dx;
            }
            a = ad.hi;
            a_lo = ad.lo;
        }
    }
    let r = residual(a, a_lo, period, precision);
    if !(r < LADDER_TOLERANCE) {
        return Err(LabError::Tolerance { residual: r });
    }
    Ok(LadderEntry { level, a, a_lo, residual: r, bracket })
}

impl SuperstableLadder {
    /// Levels `0..=max_level`, each bracketed from the two previous parameters.
    pub fn build(max_level: usize, precision: Precision) -> Result<Self> {
        let mut entries: Vec<LadderEntry> = Vec::with_capacity(max_level + 1);
        for n in 0..=max_level {
            let (lo, hi, start) = match n {
                0 => (-0.5, 0.5, 0.5),
                1 => (-1.5, -0.5, -0.5),
                _ => {
                    let (p2, p1) = (entries[n - 2].a, entries[n - 1].a);
                    let gap = p2 - p1;
                    // consecutive gap ratios stay within (3.2, 5) along the cascade
                    (p1 - gap / 2.5, p1 - gap / 6.0, p1 - gap / 6.0)
                }
            };
            entries.push(solve_level(n, lo, hi, start, precision)?);
        }
        Ok(SuperstableLadder { precision, entries })
    }

    pub fn max_level(&self) -> usize {
        self.entries.len() - 1
    }

    pub fn a(&self, n: usize) -> f64 {
        self.entries[n].a
    }

    /// `(a_{n-1} - a_{n-2}) / (a_n - a_{n-1})`.
    pub fn feigenbaum_ratio(&self, n: usize) -> Result<f64> {
        if n < 2 || n > self.max_level() {
            return Err(LabError::Division(format!("ratio needs levels n-2..n, got n={n}")));
        }
        let (a0, a1, a2) = (self.a(n - 2), self.a(n - 1), self.a(n));
        if a2 == a1 {
            return Err(LabError::Division(format!("a_{n} equals a_{}", n - 1)));
        }
        Ok((a1 - a0) / (a2 - a1))
    }

    /// Aitken extrapolation of the last three parameters.
    pub fn accumulation(&self) -> f64 {
        let n = self.max_level();
        aitken(self.a(n - 2), self.a(n - 1), self.a(n))
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["level", "a_n", "residual", "bracket_lo", "bracket_hi"])?;
        for e in &self.entries {
            wr.write_record([
                e.level.to_string(),
                format!("{:.17e}", e.a),
                format!("{:e}", e.residual),
                format!("{:.17e}", e.bracket.0),
                format!("{:.17e}", e.bracket.1),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, precision: Precision) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let mut entries = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> {
                rec[i].parse::<f64>().map_err(|e| LabError::Io(format!("bad ladder csv: {e}")))
            };
            entries.push(LadderEntry {
                level: num(0)? as usize,
                a: num(1)?,
                a_lo: 0.0,
                residual: num(2)?,
                bracket: (num(3)?, num(4)?),
            });
        }
        Ok(SuperstableLadder { precision, entries })
    }
}

/// Superstable parameter of level `n` in standard precision.
pub fn superstable_param(n: usize) -> Result<f64> {
    Ok(SuperstableLadder::build(n, Precision::Standard)?.a(n))
}

/// `x -> (f^R(s x + c) - c) / s` with `R = 2^level`, `c` the critical point and
/// `s = f^R(c) - c`, so the critical value is `+1`.
#[derive(Clone, Debug)]
pub struct RenormalizedUnimodal<U> {
    base: U,
    period: usize,
    center: f64,
    scale: f64,
}

impl<U: Unimodal> RenormalizedUnimodal<U> {
    pub fn period(&self) -> usize {
        self.period
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn center(&self) -> f64 {
        self.center
    }

    pub fn base(&self) -> &U {
        &self.base
    }

    fn iterate(&self, x: f64) -> (f64, f64) {
        let mut x = x;
        let mut d = 1.0;
        for _ in 0..self.period {
            d *= self.base.deriv(x);
            x = self.base.eval(x);
        }
        (x, d)
    }
}

impl<U: Unimodal> Unimodal for RenormalizedUnimodal<U> {
    fn eval(&self, x: f64) -> f64 {
        (self.iterate(self.scale * x + self.center).0 - self.center) / self.scale
    }
    fn deriv(&self, x: f64) -> f64 {
        self.iterate(self.scale * x + self.center).1
    }
    fn critical_point(&self) -> f64 {
        0.0
    }
}

/// Normalized renormalization at the given level.
pub fn renorm_1d<U: Unimodal + Clone>(f: &U, level: usize) -> Result<RenormalizedUnimodal<U>> {
    let period = 1usize << level;
    let c = f.critical_point();
    let mut r = RenormalizedUnimodal { base: f.clone(), period, center: c, scale: 1.0 };
    let s = r.iterate(c).0 - c;
    if s == 0.0 || !s.is_finite() {
        return Err(LabError::NotRenormalizable(format!("critical value returns to c at level {level}")));
    }
    r.scale = s;
    if level > 0 {
        for i in 0..=256 {
            let x = -1.0 + 2.0 * i as f64 / 256.0;
            let y = r.eval(x);
            if !(y.abs() <= 1.0 + 1e-10) {
                return Err(LabError::NotRenormalizable(format!(
                    "return interval not invariant at level {level}: g({x}) = {y}"
                )));
            }
        }
    }
    Ok(r)
}

/// Superstable parameter of level `level` for a one-parameter family, by sign scan on
/// `[lo, hi]` and Brent refinement of the first sign change from `lo`.
pub fn family_superstable<U: Unimodal>(
    family: impl Fn(f64) -> Result<U>,
    level: usize,
    lo: f64,
    hi: f64,
) -> Result<f64> {
    let period = 1usize << level;
    let g = |a: f64| -> f64 {
        match family(a) {
            Ok(f) => {
                let mut x = f.critical_point();
                for _ in 0..period {
                    x = f.eval(x);
                }
                x - f.critical_point()
            }
            Err(_) => f64::NAN,
        }
    };
    let roots = scan_roots(g, lo, hi, 200, 1e-15);
    roots.first().copied().ok_or(LabError::Bracket { lo, hi })
}

/// Sup distance on a grid of `[-1, 1]`.
pub fn sup_distance(f: &impl Unimodal, g: &impl Unimodal, points: usize) -> f64 {
    (0..points)
        .map(|i| -1.0 + 2.0 * i as f64 / (points - 1) as f64)
        .map(|x| (f.eval(x) - g.eval(x)).abs())
        .fold(0.0, f64::max)
}

/// Output of the regular-unicriticality scan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnicritReport1D {
    pub t: f64,
    pub epsilon: f64,
    pub n: usize,
    /// Smallest `L` with `|(f^n)'(x)| >= e^{-eps n} / L` over admissible `(x, n)`.
    pub l_min: f64,
    /// `(orbit index of x, n)` attaining `l_min`.
    pub witness: (usize, usize),
    pub admissible: usize,
    pub sample: usize,
}

/// Options for the unicriticality scan.
#[derive(Clone, Copy, Debug)]
pub struct UnicritOptions {
    /// Number of critical-orbit points used as the sample of the limit set.
    pub sample: usize,
    /// Exponent of the shrinking neighbourhoods; `None` uses `epsilon`.
    pub shrink: Option<f64>,
}

impl Default for UnicritOptions {
    fn default() -> Self {
        UnicritOptions { sample: 20_000, shrink: None }
    }
}

fn critical_orbit(f: &QuadraticMap, len: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(len);
    let mut x = 0.0;
    for _ in 0..len {
        out.push(x);
        x = f.eval(x);
    }
    out
}

/// Scans sample points of the limit set against the shrinking neighbourhoods
/// `D^t_{-i}` of the backward critical orbit and returns the worst ratio
/// `e^{-eps n} / |(f^n)'(x)|`.
///
/// A point outside `D^t_{-i}` for all `i < m` is tested for `1 <= n <= min(m, horizon)`,
/// where `m` is the index of the first neighbourhood containing it.
pub fn verify_1d_unicriticality(
    a: f64,
    t: f64,
    epsilon: f64,
    horizon: usize,
    opts: UnicritOptions,
) -> Result<UnicritReport1D> {
    let f = QuadraticMap::new(a);
    let shrink = opts.shrink.unwrap_or(epsilon);
    // backward critical orbit read off the first return time past the horizon
    let r = (horizon + 1).next_power_of_two();
    let len = opts.sample.max(r) + horizon + 1;
    let orbit = critical_orbit(&f, len);
    let backward: Vec<(f64, f64)> =
        (0..horizon).map(|i| (orbit[r - i], t * (-shrink * i as f64).exp())).collect();
    let horizons: Vec<(usize, usize)> = (1..=opts.sample)
        .map(|k| {
            let m = backward.iter().position(|(c, w)| (orbit[k] - c).abs() <= *w).unwrap_or(horizon);
            (k, m)
        })
        .filter(|&(_, m)| m > 0)
        .collect();
    if horizons.len() < 100 {
        return Err(LabError::Sample { found: horizons.len(), needed: 100 });
    }
    let (l_min, witness) = horizons
        .par_iter()
        .map(|&(k, m)| {
            let mut log_d = 0.0;
            let mut worst = (f64::NEG_INFINITY, (k, 1));
            for n in 1..=m {
                log_d += (2.0 * orbit[k + n - 1]).abs().ln();
                let v = -epsilon * n as f64 - log_d;
                if v > worst.0 {
                    worst = (v, (k, n));
                }
            }
            worst
        })
        .reduce(
            || (f64::NEG_INFINITY, (0, 0)),
            |p, q| if q.0 > p.0 || (q.0 == p.0 && q.1 < p.1) { q } else { p },
        );
    Ok(UnicritReport1D {
        t,
        epsilon,
        n: horizon,
        l_min: l_min.exp(),
        witness,
        admissible: horizons.len(),
        sample: opts.sample,
    })
}

/// Minimum of `|(f^{i R_n})'(x)|`, `i in {0, 1}`, over sampled `x` in `I^n_0 \ I^{n+1}_0`.
///
/// Points of the critical orbit with index `j = R_n mod 2 R_n` are exactly the sampled
/// points of the depth-`n` central piece that leave the depth-`n+1` one.
pub fn apriori_expansion_1d(a: f64, n: usize, samples: usize) -> Result<f64> {
    let f = QuadraticMap::new(a);
    let r = 1usize << n;
    let orbit = critical_orbit(&f, 2 * r * samples + r + 1);
    let idx: Vec<usize> = (0..samples).map(|m| r + 2 * r * m).collect();
    if idx.is_empty() {
        return Err(LabError::Sample { found: 0, needed: 1 });
    }
    let nu = idx
        .iter()
        .map(|&j| orbit[j..j + r].iter().map(|x| (2.0 * x).abs()).product::<f64>())
        .fold(1.0, f64::min);
    Ok(nu)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_levels_are_exact() {
        let l = SuperstableLadder::build(2, Precision::Standard).unwrap();
        assert_eq!(l.a(0), 0.0);
        assert_eq!(l.a(1), -1.0);
        assert!((l.a(2) + 1.3107026).abs() < 1e-7);
    }

    #[test]
    fn ratio_at_level_two() {
        let l = SuperstableLadder::build(2, Precision::Standard).unwrap();
        assert!((l.feigenbaum_ratio(2).unwrap() - 3.2185).abs() < 1e-4);
        assert!(matches!(l.feigenbaum_ratio(1), Err(LabError::Division(_))));
    }

    #[test]
    fn compensated_ladder_agrees() {
        let s = SuperstableLadder::build(6, Precision::Standard).unwrap();
        let c = SuperstableLadder::build(6, Precision::Compensated).unwrap();
        for n in 0..=6 {
            assert!((s.a(n) - c.a(n)).abs() < 1e-14);
            assert!(c.entries[n].residual < 1e-20);
        }
    }

    #[test]
    fn csv_round_trip() {
        let l = SuperstableLadder::build(4, Precision::Standard).unwrap();
        let mut buf = Vec::new();
        l.write_csv(&mut buf).unwrap();
        let back = SuperstableLadder::read_csv(buf.as_slice(), Precision::Standard).unwrap();
        assert_eq!(back.entries.len(), 5);
        for (p, q) in l.entries.iter().zip(&back.entries) {
            assert_eq!(p.a, q.a);
        }
    }

    #[test]
    fn level_zero_normalization() {
        let f = QuadraticMap::new(-1.0);
        let g = renorm_1d(&f, 0).unwrap();
        for x in [-0.7, 0.0, 0.3, 1.0] {
            assert!((g.eval(x) - (1.0 - x * x)).abs() < 1e-15);
        }
    }

    #[test]
    fn renormalized_map_is_normalized() {
        let l = SuperstableLadder::build(10, Precision::Standard).unwrap();
        let f = QuadraticMap::new(l.accumulation());
        for n in 1..5 {
            let g = renorm_1d(&f, n).unwrap();
            assert!((g.eval(0.0) - 1.0).abs() < 1e-10);
            assert!(g.deriv(0.0).abs() < 1e-10);
        }
    }

    #[test]
    fn non_renormalizable_is_rejected() {
        let f = QuadraticMap::new(-1.9);
        assert!(matches!(renorm_1d(&f, 2), Err(LabError::NotRenormalizable(_))));
    }

    #[test]
    fn expansion_at_fixed_point_is_trivial() {
        // a = 0 with the sample sitting at x = 1: |(f^n)'(1)| = 2^n
        let f = QuadraticMap::new(0.0);
        let mut x = 1.0;
        let mut d: f64 = 1.0;
        for n in 1..=50 {
            d *= f.deriv(x);
            x = f.eval(x);
            assert!((-0.1 * n as f64).exp() / d <= 1.0);
        }
    }
}
