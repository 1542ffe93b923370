//! Two-dimensional period-doubling renormalization of Henon-like maps.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{HenonLikeMap, Mat2, PlaneBox, Point, Straightener, Transform};
use crate::error::{LabError, Result};
use crate::numerics::{aitken, brent, scan_roots};
use crate::real::{DoubleDouble, Precision, Real};
use crate::renorm1d::SuperstableLadder;

/// Continuation step in `b` for the boundary-of-chaos curve.
pub const BOUNDARY_STEP: f64 = 0.01;

/// A point `(a_*(b), b)` on the boundary of chaos.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryOfChaosPoint {
    pub b: f64,
    pub a_star: f64,
    pub levels_used: usize,
    pub residual: f64,
    /// `(level, a_n, periodic point)` for every level used.
    pub ladder: Vec<CycleParam>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleParam {
    pub level: usize,
    pub a: f64,
    pub point: Point,
}

/// Residual `(F^R(p) - p, tr DF^R(p))` and its derivative in `(a, x, y)`.
fn cycle_system<T: Real>(a: T, b: T, p: [T; 2], period: usize) -> ([T; 3], [[T; 3]; 3]) {
    let two = T::from_f64(2.0);
    let (z, o) = (T::zero(), T::one());
    let (mut x, mut y) = (p[0], p[1]);
    // d(x, y)/d(a, x0, y0)
    let mut dx = [z, o, z];
    let mut dy = [z, z, o];
    let mut j = Mat2::<T>::identity();
    let mut dj = [Mat2::new(z, z, z, z); 3];
    for _ in 0..period {
        let step = Mat2::new(two * x, -b, o, z);
        for k in 0..3 {
            let dstep = Mat2::new(two * dx[k], z, z, z);
            let a1 = dstep.mul(&j);
            let a2 = step.mul(&dj[k]);
            dj[k] = Mat2::new(
                a1.m[0][0] + a2.m[0][0],
                a1.m[0][1] + a2.m[0][1],
                a1.m[1][0] + a2.m[1][0],
                a1.m[1][1] + a2.m[1][1],
            );
        }
        j = step.mul(&j);
        let mut ndx = [z; 3];
        for k in 0..3 {
            ndx[k] = two * x * dx[k] - b * dy[k] + if k == 0 { o } else { z };
        }
        dy = dx;
        dx = ndx;
        let nx = x * x + a - b * y;
        y = x;
        x = nx;
    }
    let r = [x - p[0], y - p[1], j.m[0][0] + j.m[1][1]];
    let mut jac = [[z; 3]; 3];
    for k in 0..3 {
        jac[0][k] = dx[k] - if k == 1 { o } else { z };
        jac[1][k] = dy[k] - if k == 2 { o } else { z };
        jac[2][k] = dj[k].m[0][0] + dj[k].m[1][1];
    }
    (r, jac)
}

fn max_abs<T: Real>(r: &[T; 3]) -> f64 {
    r.iter().map(|v| v.to_f64().abs()).fold(0.0, f64::max)
}

/// Newton solve of the trace-zero `2^level` cycle from `guess = (a, x, y)`.
fn solve_cycle(b: f64, guess: [f64; 3], level: usize, precision: Precision) -> Result<([f64; 3], f64)> {
    let period = 1usize << level;
    let mut v = guess;
    for _ in 0..60 {
        let (r, jac) = cycle_system(v[0], b, [v[1], v[2]], period);
        let m = Matrix3::from_fn(|i, k| jac[i][k]);
        let rhs = Vector3::new(r[0], r[1], r[2]);
        let step = m
            .lu()
            .solve(&rhs)
            .ok_or_else(|| LabError::Continuation(format!("singular cycle system at level {level}")))?;
        for k in 0..3 {
            v[k] -= step[k];
        }
        if !v.iter().all(|x| x.is_finite()) {
            return Err(LabError::Continuation(format!("Newton diverged at level {level}")));
        }
        if step.amax() < 1e-14 * v.iter().fold(1.0f64, |m, x| m.max(x.abs())) {
            break;
        }
    }
    let res = match precision {
        Precision::Standard => max_abs(&cycle_system(v[0], b, [v[1], v[2]], period).0),
        Precision::Compensated => {
            let d = DoubleDouble::from_f64;
            let mut w = [d(v[0]), d(v[1]), d(v[2])];
            for _ in 0..3 {
                let (r, jac) = cycle_system(w[0], d(b), [w[1], w[2]], period);
                let m = Matrix3::from_fn(|i, k| jac[i][k].to_f64());
                let rhs = Vector3::new(r[0].to_f64(), r[1].to_f64(), r[2].to_f64());
                let Some(step) = m.lu().solve(&rhs) else { break };
                // f64 Jacobian, double-double residual
                for k in 0..3 {
                    w[k] -= d(step[k]);
                }
            }
            v = [w[0].to_f64(), w[1].to_f64(), w[2].to_f64()];
            max_abs(&cycle_system(w[0], d(b), [w[1], w[2]], period).0)
        }
    };
    Ok((v, res))
}

fn aitken_tail(a: &[f64]) -> f64 {
    let n = a.len();
    aitken(a[n - 3], a[n - 2], a[n - 1])
}

/// `a_*(b)` as the Aitken limit of trace-zero `2^n` cycles, continued in `b` from the
/// one-dimensional ladder at `b = 0`.
pub fn boundary_of_chaos_param(b: f64, max_level: usize, precision: Precision) -> Result<BoundaryOfChaosPoint> {
    if !(0.0..0.25).contains(&b) {
        return Err(LabError::Continuation(format!("b = {b} outside [0, 1/4)")));
    }
    if max_level < 3 {
        return Err(LabError::Continuation("need at least three levels to extrapolate".into()));
    }
    let ladder = SuperstableLadder::build(max_level, precision)?;
    // seeds at b = 0: the superstable cycle through x = 0, y its predecessor
    let mut sol: Vec<[f64; 3]> = (0..=max_level)
        .map(|n| {
            let period = 1usize << n;
            let a = ladder.a(n);
            let mut x = 0.0;
            let mut prev = 0.0;
            for _ in 0..period {
                prev = x;
                x = x * x + a;
            }
            [a, 0.0, if n == 0 { 0.0 } else { prev }]
        })
        .collect();
    let mut residual: f64 = 0.0;
    let steps = (b / BOUNDARY_STEP).ceil() as usize;
    for k in 1..=steps {
        let bk = b * k as f64 / steps as f64;
        let mut next = vec![sol[0]];
        residual = 0.0;
        for n in 1..=max_level {
            let guess = if n > 1 {
                let mut g = sol[n];
                for i in 0..3 {
                    g[i] += next[n - 1][i] - sol[n - 1][i];
                }
                g
            } else {
                sol[n]
            };
            let (v, r) = solve_cycle(bk, guess, n, precision)?;
            residual = residual.max(r);
            next.push(v);
        }
        // the parameters must keep decreasing with doubling ratios near the cascade's
        for n in 3..=max_level {
            let ratio = (next[n - 2][0] - next[n - 1][0]) / (next[n - 1][0] - next[n][0]);
            if !(2.5..7.0).contains(&ratio) {
                return Err(LabError::Continuation(format!(
                    "level {n} at b = {bk}: doubling ratio {ratio} left the cascade"
                )));
            }
        }
        sol = next;
    }
    let params: Vec<f64> = sol.iter().map(|v| v[0]).collect();
    let residual = if steps == 0 {
        ladder.entries.iter().map(|e| e.residual).fold(0.0, f64::max)
    } else {
        residual
    };
    Ok(BoundaryOfChaosPoint {
        b,
        a_star: aitken_tail(&params),
        levels_used: max_level,
        residual,
        ladder: sol
            .iter()
            .enumerate()
            .map(|(n, v)| CycleParam { level: n, a: v[0], point: [v[1], v[2]] })
            .collect(),
    })
}

/// Critical point of the diagonal slice `x -> g(x, x)` nearest the domain centre,
/// searched within `reach` of it.
pub fn diagonal_critical_point(map: &HenonLikeMap, reach: f64) -> Result<f64> {
    let dom = map.domain();
    let c0 = dom.center[0];
    let lo = (c0 - reach).max(dom.x_range().0).max(dom.y_range().0 - dom.center[1] + c0);
    let hi = (c0 + reach).min(dom.x_range().1).min(dom.y_range().1 - dom.center[1] + c0);
    let h = |x: f64| map.jacobian([x, x]).map(|j| j.m[0][0]).unwrap_or(f64::NAN);
    let roots = scan_roots(h, lo, hi, 64, 0.0);
    roots
        .into_iter()
        .min_by(|a, b| (a - c0).abs().total_cmp(&(b - c0).abs()))
        .ok_or_else(|| LabError::NoCriticalPoint(format!("no root of d/dx g on [{lo}, {hi}]")))
}

/// `H o F^2 o H^{-1}` with `H(x, y) = (f(x, y), y)`, on the square of half-width
/// `1.2 |s|` around its diagonal critical point `c`, `s = g(c, c) - c`.
pub fn prerenorm_step(f: &Arc<HenonLikeMap>) -> Result<HenonLikeMap> {
    let c_in = diagonal_critical_point(f, f.domain().half[0])?;
    let value = f.eval([c_in, c_in])?[0];
    let side = if value - c_in >= 0.0 { 1.0 } else { -1.0 };
    let h = Arc::new(Straightener::new(f.clone(), c_in, side)?);
    let mut chain = Vec::with_capacity(2 * f.chain().len() + 2);
    chain.push(Transform::HorizontalStraighten(h.clone()).inverse());
    chain.extend(f.chain().iter().cloned());
    chain.extend(f.chain().iter().cloned());
    chain.push(Transform::HorizontalStraighten(h));
    let reach = 0.5 * (value - c_in).abs();
    let provisional = HenonLikeMap::new(chain, PlaneBox::square([c_in, c_in], reach));
    let c = diagonal_critical_point(&provisional, reach)?;
    let s = provisional.eval([c, c])?[0] - c;
    Ok(provisional.with_domain(PlaneBox::square([c, c], 1.2 * s.abs())))
}

/// Conjugates by `S(p) = (p - (c, c)) / s`, `s = g(c, c) - c`, so the diagonal critical
/// point moves to 0 with critical value +1; the new domain is `[-1.2, 1.2]^2`.
pub fn rescale(g: &HenonLikeMap) -> Result<HenonLikeMap> {
    Ok(rescale_with_scale(g)?.0)
}

fn rescale_with_scale(g: &HenonLikeMap) -> Result<(HenonLikeMap, f64, f64)> {
    let c = diagonal_critical_point(g, g.domain().half[0])?;
    let s = g.eval([c, c])?[0] - c;
    if s == 0.0 {
        return Err(LabError::NoCriticalPoint("critical point is fixed".into()));
    }
    let out = g.conjugate(
        Transform::AffineRescale { center: [c, c], scale: s },
        PlaneBox::square([0.0, 0.0], 1.2),
    );
    Ok((out, c, s))
}

/// Over a grid: `max |d/dy g|`, `max |g|`, and the largest Jacobian entry.
fn grid_stats<T: Real>(g: &HenonLikeMap, grid: usize) -> Result<(f64, f64, f64)> {
    let pts = g.domain().grid(grid);
    let vals: Vec<Result<[f64; 3]>> = pts
        .par_iter()
        .map(|p| {
            let (q, j) = g.eval_jac_t([T::from_f64(p[0]), T::from_f64(p[1])])?;
            let j = j.to_f64();
            let big = j.m.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
            Ok([j.m[0][1].abs(), q[0].abs().to_f64(), big])
        })
        .collect();
    let mut out = [0.0f64; 3];
    for v in vals {
        let v = v?;
        for k in 0..3 {
            out[k] = out[k].max(v[k]);
        }
    }
    Ok((out[0], out[1], out[2]))
}

/// `log max |d/dy g|` over a `grid x grid` sample of the domain.
pub fn thinness(g: &HenonLikeMap, grid: usize) -> Result<f64> {
    thinness_with(g, grid, Precision::Standard)
}

pub fn thinness_with(g: &HenonLikeMap, grid: usize, precision: Precision) -> Result<f64> {
    let (dy, _, _) = match precision {
        Precision::Standard => grid_stats::<f64>(g, grid)?,
        Precision::Compensated => grid_stats::<DoubleDouble>(g, grid)?,
    };
    Ok(dy.ln())
}

/// Largest `|second output - x|` over a grid of the domain.
pub fn shape_residual(g: &HenonLikeMap, grid: usize) -> Result<f64> {
    let pts = g.domain().grid(grid);
    let mut worst: f64 = 0.0;
    for p in pts {
        let q = g.eval(p)?;
        worst = worst.max((q[1] - p[0]).abs());
    }
    Ok(worst)
}

/// Fixed point of `g` from the first sign change of `g(x, x) - x` on the diagonal,
/// polished by Newton in the plane.
pub fn fixed_point(g: &HenonLikeMap) -> Result<Point> {
    let (lo, hi) = g.domain().x_range();
    let roots = scan_roots(|x| g.eval([x, x]).map(|q| q[0] - x).unwrap_or(f64::NAN), lo, hi, 64, 0.0);
    let x0 = *roots.first().ok_or_else(|| LabError::NoCriticalPoint("no fixed point on the diagonal".into()))?;
    let mut p = [x0, x0];
    for _ in 0..20 {
        let (q, j) = g.eval_jac(p)?;
        let m = Mat2::new(j.m[0][0] - 1.0, j.m[0][1], j.m[1][0], j.m[1][1] - 1.0);
        let inv = m.inverse().ok_or_else(|| LabError::Singular("fixed point is not isolated".into()))?;
        let d = inv.apply([q[0] - p[0], q[1] - p[1]]);
        p = [p[0] - d[0], p[1] - d[1]];
        if d[0].abs().max(d[1].abs()) < 1e-15 {
            break;
        }
    }
    Ok(p)
}

/// Diagnostics of one renormalization level.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TowerLevel {
    pub n: usize,
    #[serde(rename = "R_n")]
    pub period: usize,
    #[serde(with = "crate::lab::logval")]
    pub log_delta_n: f64,
    /// `|s_n|`: size of this level's domain relative to the previous level's.
    pub domain_scale: f64,
    /// Signed scale `s_n = g(c) - c` of the conjugacy.
    pub scale: f64,
    /// Diagonal critical point `c_n` of the unrescaled return map.
    pub center: f64,
    pub dist_to_1d: f64,
    pub residuals: LevelResiduals,
    #[serde(skip)]
    pub map: Option<Arc<HenonLikeMap>>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct LevelResiduals {
    /// `max |second output - x|` on the 32x32 grid.
    pub shape: f64,
    /// Relative error of `log|det|` at the fixed point against `2^n log b`.
    pub det_law: f64,
    /// `|g(0, 0)| - 1` and `d/dx g(0, 0)` after rescaling.
    pub normalization: f64,
}

/// `R^1 F, ..., R^N F` with per-level diagnostics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RenormTower {
    pub b: f64,
    pub precision: Precision,
    pub levels: Vec<TowerLevel>,
    #[serde(skip)]
    pub base: Option<Arc<HenonLikeMap>>,
}

/// The coupling entry is a cancellation among products of entries of size up to the
/// largest Jacobian entry, so values within this factor of `eps` times that size are noise.
const DEPTH_MARGIN: f64 = 100.0;

pub const TOWER_GRID: usize = 32;

/// Iterates `rescale o prerenorm_step` `depth` times from a Henon map `F_{a,b}`.
pub fn renorm_sequence(base: HenonLikeMap, depth: usize, precision: Precision) -> Result<RenormTower> {
    let b = match base.chain() {
        [Transform::HenonStep { b, .. }] => *b,
        [Transform::Embed1D(_)] => 0.0,
        _ => f64::NAN,
    };
    let base = Arc::new(base);
    let mut prev = base.clone();
    let mut levels = Vec::with_capacity(depth);
    for n in 1..=depth {
        let pre = Arc::new(prerenorm_step(&prev)?);
        let (map, center, scale) = rescale_with_scale(&pre)?;
        let map = Arc::new(map);
        let (dy, size, big) = match precision {
            Precision::Standard => grid_stats::<f64>(&map, TOWER_GRID)?,
            Precision::Compensated => grid_stats::<DoubleDouble>(&map, TOWER_GRID)?,
        };
        let log_delta = dy.ln();
        if dy > 0.0 && dy < DEPTH_MARGIN * precision.epsilon() * big {
            return Err(LabError::Depth {
                level: n,
                precision: format!("{precision:?}").to_lowercase(),
            });
        }
        let (q0, j0) = map.eval_jac([0.0, 0.0])?;
        let normalization = (q0[0] - 1.0).abs().max(j0.m[0][0].abs());
        let det_law = if b > 0.0 {
            let p = fixed_point(&map)?;
            let expect = (1u64 << n) as f64 * b.ln();
            ((map.log_abs_det(p)? - expect) / expect).abs()
        } else {
            0.0
        };
        levels.push(TowerLevel {
            n,
            period: 1 << n,
            log_delta_n: log_delta,
            domain_scale: scale.abs(),
            scale,
            center,
            dist_to_1d: if size > 0.0 { dy / size } else { dy },
            residuals: LevelResiduals { shape: shape_residual(&map, TOWER_GRID)?, det_law, normalization },
            map: Some(map.clone()),
        });
        prev = map;
    }
    Ok(RenormTower { b, precision, levels, base: Some(base) })
}

impl RenormTower {
    pub fn map(&self, n: usize) -> Option<&Arc<HenonLikeMap>> {
        if n == 0 {
            return self.base.as_ref();
        }
        self.levels.get(n - 1).and_then(|l| l.map.as_ref())
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["n", "log_delta_n"])?;
        for l in &self.levels {
            wr.write_record([l.n.to_string(), crate::lab::fmt_log(l.log_delta_n)])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Split-form fit of a tower level: the level map read through the output swap
/// `(u, v) -> (v, u)` is `(x, g_n(x, y))`; the first coordinate is fitted by
/// `p(x) + y q(x)` and the reported residual is `max |e(x, y) - e(x, 0)|` with
/// `e = g_n - p`, i.e. the size of the `y`-dependence.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ValuableChartFit {
    pub residual: f64,
    pub h_coeffs: Vec<f64>,
    pub fit_rms: f64,
    pub cond: f64,
}

pub fn valuable_chart_residual(tower: &RenormTower, level: usize, degree: usize) -> Result<ValuableChartFit> {
    let g = tower
        .map(level)
        .ok_or_else(|| LabError::Config(format!("tower has no level {level}")))?;
    let k = TOWER_GRID;
    let pts = g.domain().grid(k);
    let vals: Vec<f64> = pts.iter().map(|p| g.eval(*p).map(|q| q[0])).collect::<Result<_>>()?;
    let ncol = 2 * (degree + 1);
    let (xr, yr) = (g.domain().half[0], g.domain().half[1]);
    let a = DMatrix::from_fn(pts.len(), ncol, |i, j| {
        let (x, y) = (pts[i][0] / xr, pts[i][1] / yr);
        let d = (j % (degree + 1)) as i32;
        x.powi(d) * if j > degree { y } else { 1.0 }
    });
    let rhs = DVector::from_vec(vals.clone());
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let cond = smax / smin;
    if !(cond < 1e12) {
        return Err(LabError::Fit { cond });
    }
    let coef = svd.solve(&rhs, 0.0).map_err(|e| LabError::Io(e.to_string()))?;
    let fit = &a * &coef;
    let fit_rms = ((&fit - &rhs).norm_squared() / pts.len() as f64).sqrt();
    // y-dependence of e = g - p(x) is that of g itself
    let mut residual: f64 = 0.0;
    for (i, p) in pts.iter().enumerate() {
        let base = g.eval([p[0], 0.0])?[0];
        residual = residual.max((vals[i] - base).abs());
    }
    Ok(ValuableChartFit { residual, h_coeffs: coef.iter().take(degree + 1).copied().collect(), fit_rms, cond })
}

/// `x -> first coordinate of level n at (x, 0)`, for comparisons with the 1D operator.
pub fn slice(tower: &RenormTower, level: usize, x: f64) -> Result<f64> {
    let g = tower.map(level).ok_or_else(|| LabError::Config(format!("tower has no level {level}")))?;
    Ok(g.eval([x, 0.0])?[0])
}

/// Locates a tower level's critical point by Brent on the diagonal, for tests.
pub fn critical_point_on_diagonal(g: &HenonLikeMap, lo: f64, hi: f64) -> Result<f64> {
    brent(|x| g.jacobian([x, x]).map(|j| j.m[0][0]).unwrap_or(f64::NAN), lo, hi, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{embed_1d, QuadraticMap};

    #[test]
    fn level_one_cycle_closed_form() {
        // 2-cycle with x1 x2 = b/2: a = b/2 - (1+b)^2
        let b = 0.1;
        let (v, r) = solve_cycle(b, [-1.2, 0.0, -1.1], 1, Precision::Standard).unwrap();
        assert!(r < 1e-14);
        assert!((v[0] - (b / 2.0 - (1.0 + b) * (1.0 + b))).abs() < 1e-13);
    }

    #[test]
    fn rescale_of_embedded_quadratic() {
        let g = embed_1d(QuadraticMap::new(-1.3));
        let r = rescale(&g).unwrap();
        let q = r.eval([0.0, 0.0]).unwrap();
        assert!((q[0] - 1.0).abs() < 1e-15);
        // conjugated by p -> -p / 1.3
        let x: f64 = 0.4;
        let expect = -((1.3 * x) * (1.3 * x) - 1.3) / 1.3;
        assert!((r.eval([-x, 0.2]).unwrap()[0] - expect).abs() < 1e-14);
        assert_eq!(thinness(&r, 16).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn rescale_keeps_determinant() {
        let g = HenonLikeMap::henon(-1.3, 0.2);
        let r = rescale(&g).unwrap();
        for p in [[0.1, 0.3], [-0.9, 0.5]] {
            assert!((r.jacobian(p).unwrap().det() - 0.2).abs() < 1e-14);
        }
    }

    #[test]
    fn thinness_of_henon_step() {
        let g = HenonLikeMap::henon(-1.3, 0.2);
        assert!((thinness(&g, 16).unwrap() - 0.2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn prerenorm_of_embedded_map_stays_embedded() {
        let f = Arc::new(embed_1d(QuadraticMap::new(-1.4011551890920506)));
        let p = prerenorm_step(&f).unwrap();
        assert!(shape_residual(&p, 32).unwrap() < 1e-12);
        assert_eq!(thinness(&p, 32).unwrap(), f64::NEG_INFINITY);
    }
}
