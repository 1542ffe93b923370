//! Invariant directions, the critical orbit, normal-form charts, tunnels and
//! recurrence diagnostics.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::map::escape_at;
use crate::dynamics::{dist, line_angle, norm, normalize, HenonLikeMap, Mat2, OrbitCocycle, Point, Polyline};
use crate::error::{LabError, Result};
use crate::numerics::linear_fit;
use crate::pesin::lyapunov_exponents;
use crate::poly::{eval_monomials, monomials, Poly2};

/// Default forward/backward horizon for direction fields.
pub const FIELD_HORIZON: usize = 30;

/// Unit-Frobenius product of `jacs` applied in order.
fn product<'a>(jacs: impl Iterator<Item = &'a Mat2>) -> Mat2 {
    let mut m = Mat2::identity();
    for j in jacs {
        m = j.mul(&m);
        let f = m.frobenius();
        if f > 0.0 && f.is_finite() {
            m = m.scale(1.0 / f);
        }
    }
    m
}

fn forward_jacs(map: &HenonLikeMap, p: Point, n: usize) -> Result<Vec<Mat2>> {
    let mut q = p;
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let (q2, j) = map.eval_jac(q).map_err(|e| escape_at(e, k))?;
        out.push(j);
        q = q2;
    }
    Ok(out)
}

/// Backward orbit `p_{-1}, ..., p_{-m}` through the explicit inverse.
fn backward_points(map: &HenonLikeMap, p: Point, m: usize) -> Result<Vec<Point>> {
    let inv = map.inverse_map(*map.domain());
    let pts = inv.orbit_points(p, m)?;
    Ok(pts[1..].to_vec())
}

/// Most contracted direction of `DF^n` at `p`.
pub fn strong_stable_direction(map: &HenonLikeMap, p: Point, n: usize) -> Result<Point> {
    Ok(product(forward_jacs(map, p, n)?.iter()).most_contracted())
}

/// Direction at `p` least contracted by `DF^{-m}`: the top image direction of
/// `DF^m` at `p_{-m}`.
pub fn center_direction(map: &HenonLikeMap, p: Point, m: usize) -> Result<Point> {
    let back = backward_points(map, p, m)?;
    let mut jacs = Vec::with_capacity(m);
    for q in back.iter().rev() {
        jacs.push(map.jacobian(*q)?);
    }
    Ok(product(jacs.iter()).most_expanded_image())
}

pub fn strong_stable_direction_on_orbit(orbit: &OrbitCocycle, index: usize, n: usize) -> Point {
    product(orbit.jacs()[index..index + n].iter()).most_contracted()
}

pub fn center_direction_on_orbit(orbit: &OrbitCocycle, index: usize, m: usize) -> Point {
    product(orbit.jacs()[index - m..index].iter()).most_expanded_image()
}

/// Angle between the strong-stable estimates at horizons `n` and `2n`.
pub fn strong_stable_cauchy_gap(map: &HenonLikeMap, p: Point, n: usize) -> Result<f64> {
    Ok(line_angle(strong_stable_direction(map, p, n)?, strong_stable_direction(map, p, 2 * n)?))
}

/// Fit of the separation between the strong-stable and center curves at `c1`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TangencyFit {
    /// Slope of `log offset` against `log s`.
    pub exponent: f64,
    /// Least-squares `kappa` in `offset = kappa s^2`.
    pub kappa: f64,
    /// `R^2` of the quadratic fit.
    pub r2: f64,
    pub samples: Vec<(f64, f64)>,
}

/// The critical value `c1 = F(c0)` with a two-sided stretch of its orbit.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CriticalOrbit {
    pub c0: Point,
    pub c1: Point,
    /// `orbit[zero_index + m] = c_m`.
    pub orbit: Vec<Point>,
    pub zero_index: usize,
    pub lambda_est: f64,
    pub min_angle: f64,
    pub tangency: Option<TangencyFit>,
}

impl CriticalOrbit {
    /// `c_m` if stored.
    pub fn point(&self, m: i64) -> Option<Point> {
        let k = self.zero_index as i64 + m;
        (k >= 0 && (k as usize) < self.orbit.len()).then(|| self.orbit[k as usize])
    }
}

/// Long orbit of `F` with its cocycle, after discarding a transient.
pub fn sample_limit_set(map: &HenonLikeMap, start: Point, transient: usize, len: usize) -> Result<OrbitCocycle> {
    let mut p = start;
    for k in 0..transient {
        p = map.eval(p).map_err(|e| escape_at(e, k))?;
    }
    crate::dynamics::iterate_orbit(map, p, len)
}

/// Threshold above which the direction fields are considered transverse.
pub const NO_TANGENCY_ANGLE: f64 = 0.1;

/// The sample point where `E^ss` and `E^c` are closest is taken as `c1`; its
/// predecessor is `c0`. For embedded 1D maps `c0` is moved onto `x = 0`.
pub fn find_critical_orbit(map: &HenonLikeMap, sample: &OrbitCocycle, horizon: usize) -> Result<CriticalOrbit> {
    let n = sample.len();
    if n < 2 * horizon + 2 {
        return Err(LabError::Sample { found: n, needed: 2 * horizon + 2 });
    }
    let idx: Vec<usize> = (horizon.max(1)..n - horizon).collect();
    let angles: Vec<f64> = idx
        .par_iter()
        .map(|&k| {
            let ess = strong_stable_direction_on_orbit(sample, k, horizon);
            let ec = center_direction_on_orbit(sample, k, horizon);
            line_angle(ess, ec)
        })
        .collect();
    let (best, &min_angle) = angles
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .ok_or(LabError::Sample { found: 0, needed: 1 })?;
    if min_angle > NO_TANGENCY_ANGLE {
        return Err(LabError::NoTangency { angle: min_angle });
    }
    let k1 = idx[best];
    let pts = sample.points();
    let mut c0 = pts[k1 - 1];
    if map.is_embedded_1d() {
        c0[0] = 0.0;
    } else if let Ok(c) = refine_tangency(map, pts[k1 - horizon], horizon) {
        c0 = c;
    }
    let forward = map.orbit_points(c0, n - k1)?;
    let mut orbit: Vec<Point> = pts[..k1 - 1].to_vec();
    let zero_index = orbit.len();
    orbit.extend(forward);
    let c1 = orbit[zero_index + 1];
    let lambda_est = if n >= 1000 {
        let (_, chi2) = lyapunov_exponents(sample)?;
        chi2.exp()
    } else {
        sample.log_dets().iter().sum::<f64>().exp().powf(1.0 / n as f64)
    };
    let mut co = CriticalOrbit { c0, c1, orbit, zero_index, lambda_est, min_angle, tangency: None };
    co.tangency = tangency_fit(map, &co, horizon).ok();
    Ok(co)
}

/// Moves the tangency along the center curve `F^m(past + s v)`: the fold of that
/// curve is where its tangent lines up with `E^ss`. Returns the new `c0`.
fn refine_tangency(map: &HenonLikeMap, past: Point, m: usize) -> Result<Point> {
    let jacs = forward_jacs(map, past, m)?;
    let v = product(jacs.iter()).most_expanded();
    let push = |s: f64| -> Result<(Point, Point, Point)> {
        let mut q = [past[0] + s * v[0], past[1] + s * v[1]];
        let mut t = v;
        let mut prev = q;
        for _ in 0..m {
            let (q2, j) = map.eval_jac(q)?;
            t = normalize(j.apply(t));
            prev = q;
            q = q2;
        }
        Ok((prev, q, t))
    };
    let (_, q0, _) = push(0.0)?;
    let e_ref = strong_stable_direction(map, q0, FIELD_HORIZON)?;
    let signed = |s: f64| -> f64 {
        let Ok((_, q, t)) = push(s) else { return f64::NAN };
        let Ok(mut e) = strong_stable_direction(map, q, FIELD_HORIZON) else { return f64::NAN };
        if e[0] * e_ref[0] + e[1] * e_ref[1] < 0.0 {
            e = [-e[0], -e[1]];
        }
        t[0] * e[1] - t[1] * e[0]
    };
    let full = jacs.iter().fold(Mat2::identity(), |acc, j| j.mul(&acc));
    let h = 1e-4 / norm(full.apply(v)).max(1e-300);
    let k = 40;
    let grid: Vec<f64> = (0..=k).map(|i| -h + 2.0 * h * i as f64 / k as f64).collect();
    let vals: Vec<f64> = grid.iter().map(|&s| signed(s)).collect();
    let mut best: Option<f64> = None;
    for i in 0..k {
        if vals[i].is_finite() && vals[i + 1].is_finite() && vals[i] * vals[i + 1] <= 0.0 {
            let r = crate::numerics::brent(signed, grid[i], grid[i + 1], 1e-18 * h.max(1e-300))?;
            if best.is_none_or(|b| r.abs() < b.abs()) {
                best = Some(r);
            }
        }
    }
    let s = best.ok_or_else(|| LabError::Field("no fold on the center curve".into()))?;
    Ok(push(s)?.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManifoldKind {
    StrongStable,
    Center,
}

/// Largest angle between the horizon-`n` and horizon-`2n` fields tolerated along a curve.
pub const FIELD_TOLERANCE: f64 = 1e-6;

fn ss_field(map: &HenonLikeMap, q: Point, prev: Point, check: bool) -> Result<Point> {
    let d = strong_stable_direction(map, q, FIELD_HORIZON)?;
    if check {
        let d2 = strong_stable_direction(map, q, 2 * FIELD_HORIZON)?;
        if line_angle(d, d2) > FIELD_TOLERANCE {
            return Err(LabError::Field(format!("strong-stable field unsettled at ({}, {})", q[0], q[1])));
        }
    }
    Ok(if d[0] * prev[0] + d[1] * prev[1] < 0.0 { [-d[0], -d[1]] } else { d })
}

fn integrate_ss(map: &HenonLikeMap, p: Point, dir: Point, arclen: f64, steps: usize) -> Result<Vec<Point>> {
    let h = arclen / steps as f64;
    let mut out = Vec::with_capacity(steps);
    let mut q = p;
    let mut prev = dir;
    for _ in 0..steps {
        let k1 = ss_field(map, q, prev, true)?;
        let k2 = ss_field(map, [q[0] + 0.5 * h * k1[0], q[1] + 0.5 * h * k1[1]], k1, false)?;
        let k3 = ss_field(map, [q[0] + 0.5 * h * k2[0], q[1] + 0.5 * h * k2[1]], k1, false)?;
        let k4 = ss_field(map, [q[0] + h * k3[0], q[1] + h * k3[1]], k1, false)?;
        q = [
            q[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            q[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        ];
        prev = k1;
        out.push(q);
    }
    Ok(out)
}

/// Strong-stable curve of half-length `arclen` on each side of `p`.
pub fn strong_stable_manifold(map: &HenonLikeMap, p: Point, arclen: f64) -> Result<Polyline> {
    let d = strong_stable_direction(map, p, FIELD_HORIZON)?;
    let steps = 100;
    let mut minus = integrate_ss(map, p, [-d[0], -d[1]], arclen, steps)?;
    minus.reverse();
    minus.push(p);
    minus.extend(integrate_ss(map, p, d, arclen, steps)?);
    Ok(Polyline::new(minus))
}

/// Center curve through `F^m(past)` of half-length about `arclen`: the image under
/// `F^m` of a short segment through `past` along its most expanded direction.
pub fn center_manifold_from_past(map: &HenonLikeMap, past: Point, m: usize, arclen: f64) -> Result<Polyline> {
    let jacs = forward_jacs(map, past, m)?;
    let mut full = Mat2::identity();
    for j in &jacs {
        full = j.mul(&full);
    }
    let v = full.most_expanded();
    let gain = norm(full.apply(v));
    if !(gain > 0.0) || !gain.is_finite() {
        return Err(LabError::Field("center direction collapses".into()));
    }
    let pieces = 4000;
    let half = 1.5 * arclen / gain;
    let pts: Vec<Point> = (0..=pieces)
        .map(|i| {
            let s = -half + 2.0 * half * i as f64 / pieces as f64;
            let mut q = [past[0] + s * v[0], past[1] + s * v[1]];
            for _ in 0..m {
                q = map.eval(q)?;
            }
            Ok(q)
        })
        .collect::<Result<_>>()?;
    let mid = pieces / 2;
    let chord = |i: usize, j: usize| [pts[j][0] - pts[i][0], pts[j][1] - pts[i][1]];
    let tangent = chord(mid - 1, mid + 1);
    // stop at the first fold so the curve stays a graph over its tangent
    let reach = |dir: i64| {
        let mut k = mid as i64;
        let mut acc = 0.0;
        while acc < arclen && k + dir >= 0 && k + dir <= pieces as i64 {
            let c = chord(k as usize, (k + dir) as usize);
            if dir as f64 * (c[0] * tangent[0] + c[1] * tangent[1]) <= 0.0 {
                break;
            }
            acc += norm(c);
            k += dir;
        }
        k as usize
    };
    let (lo, hi) = (reach(-1), reach(1));
    Ok(Polyline::new(pts[lo..=hi].iter().copied()))
}

/// Integral curve of the strong-stable or center field through `p`. The center
/// curve uses the explicit inverse for its past, so it suits points whose backward
/// orbit is numerically stable (saddles, linear maps); for points of an attractor
/// use [`center_manifold_from_past`].
pub fn local_manifold(map: &HenonLikeMap, p: Point, kind: ManifoldKind, arclen: f64) -> Result<Polyline> {
    match kind {
        ManifoldKind::StrongStable => strong_stable_manifold(map, p, arclen),
        ManifoldKind::Center => {
            let back = backward_points(map, p, FIELD_HORIZON)?;
            center_manifold_from_past(map, *back.last().unwrap_or(&p), FIELD_HORIZON, arclen)
        }
    }
}

fn tangency_fit(map: &HenonLikeMap, co: &CriticalOrbit, horizon: usize) -> Result<TangencyFit> {
    let past = co.point(1 - horizon as i64).ok_or(LabError::Sample { found: co.zero_index, needed: horizon })?;
    let s0 = 0.02;
    let wc = center_manifold_from_past(map, past, horizon, 2.0 * s0)?;
    let wss = strong_stable_manifold(map, co.c1, 2.0 * s0)?;
    let (_, base) = wc.project(co.c1);
    let mut samples = Vec::new();
    for k in 0..7 {
        let s = s0 / 2f64.powi(k);
        let off = |t: f64| wss.project(wc.point_at(t)).0;
        let d = 0.5 * (off(base + s) + off(base - s));
        samples.push((s, d));
    }
    let xs: Vec<f64> = samples.iter().map(|v| v.0.ln()).collect();
    let ys: Vec<f64> = samples.iter().map(|v| v.1.ln()).collect();
    let (exponent, _, _) = linear_fit(&xs, &ys);
    let sxx: f64 = samples.iter().map(|v| v.0.powi(4)).sum();
    let sxy: f64 = samples.iter().map(|v| v.0 * v.0 * v.1).sum();
    let kappa = sxy / sxx;
    let mean = samples.iter().map(|v| v.1).sum::<f64>() / samples.len() as f64;
    let ss_res: f64 = samples.iter().map(|v| (v.1 - kappa * v.0 * v.0).powi(2)).sum();
    let ss_tot: f64 = samples.iter().map(|v| (v.1 - mean).powi(2)).sum();
    Ok(TangencyFit { exponent, kappa, r2: 1.0 - ss_res / ss_tot, samples })
}

/// Polynomial chart around `center`: `Phi(p) = poly((p - center) / scale)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Chart {
    pub center: Point,
    pub scale: f64,
    pub poly: [Poly2; 2],
    /// Approximate inverse: `p - center = inverse_poly(z / scale)`.
    pub inverse_poly: [Poly2; 2],
    pub valid_radius: f64,
}

impl Chart {
    pub fn identity(center: Point, radius: f64) -> Self {
        let x = Poly2::coordinate(1, 0).scaled(radius);
        let y = Poly2::coordinate(1, 1).scaled(radius);
        Chart { center, scale: radius, poly: [x.clone(), y.clone()], inverse_poly: [x, y], valid_radius: radius }
    }

    fn local(&self, p: Point) -> Point {
        [(p[0] - self.center[0]) / self.scale, (p[1] - self.center[1]) / self.scale]
    }

    fn eval_unchecked(&self, p: Point) -> Point {
        let u = self.local(p);
        [self.poly[0].eval(u), self.poly[1].eval(u)]
    }

    pub fn in_range(&self, p: Point) -> bool {
        (p[0] - self.center[0]).abs().max((p[1] - self.center[1]).abs()) <= self.valid_radius
    }

    pub fn apply(&self, p: Point) -> Result<Point> {
        if !self.in_range(p) {
            return Err(LabError::ChartRange);
        }
        Ok(self.eval_unchecked(p))
    }

    /// `Phi^{-1}(z)`: the fitted inverse polished by Newton.
    pub fn inverse(&self, z: Point) -> Result<Point> {
        let w = [z[0] / self.scale, z[1] / self.scale];
        let mut p = [self.center[0] + self.inverse_poly[0].eval(w), self.center[1] + self.inverse_poly[1].eval(w)];
        for _ in 0..30 {
            let f = self.eval_unchecked(p);
            let r = [f[0] - z[0], f[1] - z[1]];
            let h = 1e-7 * self.scale;
            let fx = self.eval_unchecked([p[0] + h, p[1]]);
            let fy = self.eval_unchecked([p[0], p[1] + h]);
            let j = Mat2::new((fx[0] - f[0]) / h, (fy[0] - f[0]) / h, (fx[1] - f[1]) / h, (fy[1] - f[1]) / h);
            let inv = j.inverse().ok_or_else(|| LabError::Singular("chart is not invertible".into()))?;
            let d = inv.apply(r);
            p = [p[0] - d[0], p[1] - d[1]];
            if norm(d) < 1e-15 * self.scale.max(1.0) {
                break;
            }
        }
        if !self.in_range(p) {
            return Err(LabError::ChartRange);
        }
        Ok(p)
    }
}

/// Result of fitting `Phi_{c1} o F o Phi_{c0}^{-1} = (x^2 - lambda y, x)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NormalFormFit {
    pub chart0: Chart,
    pub chart1: Chart,
    pub lambda: f64,
    /// Max normal-form error on the fitting grid, in chart units.
    pub residual: f64,
    pub radius: f64,
    pub cond: f64,
    /// Largest `|U|` on the strong-stable curve at `c1` within half the radius.
    pub ss_alignment: f64,
    /// Largest `|Y|` on the center curve at `c0` within half the radius.
    pub c_alignment: f64,
}

/// Relative weight of the manifold-alignment rows.
const ALIGN_WEIGHT: f64 = 10.0;
const FIT_GRID: usize = 21;

fn solve_ls(a: DMatrix<f64>, rhs: DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let cond = smax / smin;
    let x = svd.solve(&rhs, 1e-12 * smax).map_err(|_| LabError::Fit { cond })?;
    Ok((x, cond))
}

/// Fits charts at `c0` and `c1` on the box of half-width `radius` around `c0`.
///
/// The second coordinates are fixed by the shape of the map: `V(q) = q_y - c1_y` and
/// `X(p) = p_x - c0_x`. What remains is linear in `U` and `Z = lambda Y`:
/// `U(F(p)) + Z(p) = X(p)^2`, with rows pinning `U = 0` on `W^ss(c1)` and `Z = 0` on
/// `W^c(c0)`; `Y` is normalized by `dY/dy(c0) = 1`, which fixes `lambda`.
pub fn uniformize_critical(map: &HenonLikeMap, co: &CriticalOrbit, degree: usize, radius: f64) -> Result<NormalFormFit> {
    let rho = radius;
    let (c0, c1) = (co.c0, co.c1);
    let mons = monomials(degree);
    let nm = mons.len();
    let horizon = FIELD_HORIZON.min(co.zero_index);
    let past = co.point(-(horizon as i64)).ok_or(LabError::Sample { found: co.zero_index, needed: horizon })?;
    let wc = center_manifold_from_past(map, past, horizon, 1.5 * rho)?;
    let wss = strong_stable_manifold(map, c1, 1.5 * rho)?;

    let grid: Vec<Point> = (0..FIT_GRID)
        .flat_map(|i| (0..FIT_GRID).map(move |j| (i, j)))
        .map(|(i, j)| {
            let t = |k: usize| -1.0 + 2.0 * k as f64 / (FIT_GRID - 1) as f64;
            [t(i), t(j)]
        })
        .collect();
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    for u in &grid {
        let p = [c0[0] + rho * u[0], c0[1] + rho * u[1]];
        let q = map.eval(p)?;
        let v = [(q[0] - c1[0]) / rho, (q[1] - c1[1]) / rho];
        let mut row = eval_monomials(degree, v);
        row.extend(eval_monomials(degree, *u));
        rows.push((row, u[0] * u[0]));
    }
    let inside = |p: Point, c: Point| (p[0] - c[0]).abs().max((p[1] - c[1]).abs()) <= rho;
    for w in wc.vertices().iter().filter(|w| inside(**w, c0)) {
        let u = [(w[0] - c0[0]) / rho, (w[1] - c0[1]) / rho];
        let mut row = vec![0.0; nm];
        row.extend(eval_monomials(degree, u).iter().map(|m| m * ALIGN_WEIGHT));
        rows.push((row, 0.0));
    }
    for s in wss.vertices().iter().filter(|s| inside(**s, c1)) {
        let v = [(s[0] - c1[0]) / rho, (s[1] - c1[1]) / rho];
        let mut row: Vec<f64> = eval_monomials(degree, v).iter().map(|m| m * ALIGN_WEIGHT).collect();
        row.extend(vec![0.0; nm]);
        rows.push((row, 0.0));
    }
    let a = DMatrix::from_fn(rows.len(), 2 * nm, |i, j| rows[i].0[j]);
    let rhs = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
    let (sol, cond) = solve_ls(a, rhs)?;
    if !sol.iter().all(|v| v.is_finite()) {
        return Err(LabError::Fit { cond });
    }
    // unknowns are U / rho^2 and Z / rho^2
    let u_poly = Poly2 { degree, coeffs: sol.rows(0, nm).iter().map(|c| c * rho * rho).collect() };
    let z_poly = Poly2 { degree, coeffs: sol.rows(nm, nm).iter().map(|c| c * rho * rho).collect() };
    let lambda = z_poly.coeff(0, 1) / rho;
    let y_poly = if lambda.abs() > 1e-10 {
        z_poly.scaled(1.0 / lambda)
    } else {
        transverse_coordinate(&wc, c0, rho, degree)?
    };
    let x_poly = Poly2::coordinate(degree, 0).scaled(rho);
    let v_poly = Poly2::coordinate(degree, 1).scaled(rho);

    let mut residual: f64 = 0.0;
    let k = 31;
    for i in 0..k {
        for j in 0..k {
            let u = [-1.0 + 2.0 * i as f64 / (k - 1) as f64, -1.0 + 2.0 * j as f64 / (k - 1) as f64];
            let p = [c0[0] + rho * u[0], c0[1] + rho * u[1]];
            let q = map.eval(p)?;
            let v = [(q[0] - c1[0]) / rho, (q[1] - c1[1]) / rho];
            let x = x_poly.eval(u);
            let r = u_poly.eval(v) - (x * x - z_poly.eval(u));
            residual = residual.max(r.abs());
        }
    }
    let mut chart0 = Chart {
        center: c0,
        scale: rho,
        poly: [x_poly, y_poly],
        inverse_poly: [Poly2::zero(degree), Poly2::zero(degree)],
        valid_radius: rho,
    };
    let mut chart1 = Chart {
        center: c1,
        scale: rho,
        poly: [u_poly, v_poly],
        inverse_poly: [Poly2::zero(degree), Poly2::zero(degree)],
        valid_radius: rho,
    };
    fit_inverse(&mut chart0)?;
    fit_inverse(&mut chart1)?;
    let half = |c: Point, p: Point| (p[0] - c[0]).abs().max((p[1] - c[1]).abs()) <= 0.5 * rho;
    let ss_alignment = wss
        .vertices()
        .iter()
        .filter(|s| half(c1, **s))
        .map(|s| chart1.eval_unchecked(*s)[0].abs())
        .fold(0.0, f64::max);
    let c_alignment = wc
        .vertices()
        .iter()
        .filter(|w| half(c0, **w))
        .map(|w| chart0.eval_unchecked(*w)[1].abs())
        .fold(0.0, f64::max);
    Ok(NormalFormFit { chart0, chart1, lambda, residual, radius: rho, cond, ss_alignment, c_alignment })
}

/// `Y` with `dY/dy = 1` vanishing on the center curve, for maps whose fitted
/// `lambda` is zero.
fn transverse_coordinate(wc: &Polyline, c0: Point, rho: f64, degree: usize) -> Result<Poly2> {
    let mons = monomials(degree);
    let pts: Vec<Point> = wc
        .vertices()
        .iter()
        .filter(|w| (w[0] - c0[0]).abs().max((w[1] - c0[1]).abs()) <= rho)
        .map(|w| [(w[0] - c0[0]) / rho, (w[1] - c0[1]) / rho])
        .collect();
    let free: Vec<usize> = (0..mons.len()).filter(|&k| mons[k] != (0, 1)).collect();
    let a = DMatrix::from_fn(pts.len(), free.len(), |i, j| {
        let (e0, e1) = mons[free[j]];
        pts[i][0].powi(e0 as i32) * pts[i][1].powi(e1 as i32)
    });
    let rhs = DVector::from_iterator(pts.len(), pts.iter().map(|u| -u[1]));
    let (sol, _) = solve_ls(a, rhs)?;
    let mut y = Poly2::coordinate(degree, 1);
    for (j, &k) in free.iter().enumerate() {
        y.coeffs[k] = sol[j];
    }
    Ok(y.scaled(rho))
}

fn fit_inverse(chart: &mut Chart) -> Result<()> {
    let degree = chart.poly[0].degree;
    let k = 15;
    let mut zs = Vec::new();
    let mut ps = Vec::new();
    for i in 0..k {
        for j in 0..k {
            let u = [-1.0 + 2.0 * i as f64 / (k - 1) as f64, -1.0 + 2.0 * j as f64 / (k - 1) as f64];
            let p = [chart.center[0] + chart.scale * u[0], chart.center[1] + chart.scale * u[1]];
            let z = chart.eval_unchecked(p);
            zs.push([z[0] / chart.scale, z[1] / chart.scale]);
            ps.push([p[0] - chart.center[0], p[1] - chart.center[1]]);
        }
    }
    let a = DMatrix::from_fn(zs.len(), monomials(degree).len(), |i, j| eval_monomials(degree, zs[i])[j]);
    for axis in 0..2 {
        let rhs = DVector::from_iterator(ps.len(), ps.iter().map(|p| p[axis]));
        let (sol, _) = solve_ls(a.clone(), rhs)?;
        chart.inverse_poly[axis] = Poly2 { degree, coeffs: sol.iter().copied().collect() };
    }
    Ok(())
}

/// Which end of the critical orbit a tunnel belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TunnelSide {
    Critical,
    Valuable,
}

/// `{|x| < t, |y| < |x|^omega}` in chart coordinates.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TunnelSpec {
    pub omega: f64,
    pub t: f64,
    pub truncation: f64,
    pub chart: Chart,
    pub side: TunnelSide,
}

pub fn tunnel_membership(spec: &TunnelSpec, p: Point) -> Result<bool> {
    let z = spec.chart.apply(p)?;
    Ok(z[0].abs() < spec.t && z[1].abs() < z[0].abs().powf(spec.omega))
}

/// Points of the stored orbit in the depth-`depth` piece of `c_0`: indices
/// `zero_index + j 2^depth`.
pub fn deep_piece_sample(orbit: &[Point], zero_index: usize, depth: u32, count: usize) -> Vec<Point> {
    let step = 1usize << depth;
    let mut out = Vec::with_capacity(count);
    let mut k = zero_index % step;
    while k < orbit.len() && out.len() < count {
        if k != zero_index {
            out.push(orbit[k]);
        }
        k += step;
    }
    out
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PinchReport {
    pub omega: f64,
    pub t: f64,
    pub in_disk: usize,
    pub inside: usize,
    pub fraction: f64,
    /// Exponent of the tightest tunnel `|y| <= |x|^omega` holding the sample; `+inf`
    /// if every point has `y = 0`.
    pub omega_hat: f64,
    pub points: Vec<(f64, f64, bool)>,
}

pub const PINCH_MIN_SAMPLE: usize = 200;

/// Maps sample points within `t` of `c0` through the chart at `c0` and tests the
/// tunnel `|y| < |x|^omega`. `t` defaults to half the chart radius.
pub fn pinching_check(fit: &NormalFormFit, sample: &[Point], omega: f64, t: Option<f64>) -> Result<PinchReport> {
    let chart = &fit.chart0;
    let t = t.unwrap_or(0.5 * chart.valid_radius);
    let c0 = chart.center;
    let mut points = Vec::new();
    for &p in sample {
        if dist(p, c0) < t && p != c0 {
            let z = chart.apply(p)?;
            let inside = z[0].abs() < t && z[1].abs() < z[0].abs().powf(omega);
            points.push((z[0], z[1], inside));
        }
    }
    if points.len() < PINCH_MIN_SAMPLE {
        return Err(LabError::Sample { found: points.len(), needed: PINCH_MIN_SAMPLE });
    }
    let inside = points.iter().filter(|p| p.2).count();
    Ok(PinchReport {
        omega,
        t,
        in_disk: points.len(),
        inside,
        fraction: inside as f64 / points.len() as f64,
        omega_hat: envelope_exponent(&points),
        points,
    })
}

/// Largest `omega` with `|y| <= |x|^omega` at every point with `0 < |x| < 1`.
fn envelope_exponent(points: &[(f64, f64, bool)]) -> f64 {
    points
        .iter()
        .filter(|p| p.0 != 0.0 && p.0.abs() < 1.0 && p.1 != 0.0)
        .map(|p| p.1.abs().ln() / p.0.abs().ln())
        .fold(f64::INFINITY, f64::min)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RecurrenceReport {
    /// `(m, dist(c_m, c_0))` for the record-breaking returns into the test disk.
    pub returns: Vec<(i64, f64)>,
    /// `max ln(1/d_m) / |m|` over returns; `+inf` when the orbit hits `c_0`.
    pub slow_recurrence: f64,
    /// Best `kappa` with `|m| >= kappa log_lambda dist` (needs `0 < lambda < 1`).
    pub kappa: Option<f64>,
    /// Closest returns stopped improving over the second half of the horizon.
    pub periodic: bool,
    /// `dist(c_{2^n}, c_0)` along the stored powers of two.
    pub doubling: Vec<(i64, f64)>,
    pub doubling_monotone: bool,
}

/// Closest returns of the critical orbit to `c_0` for `1 <= |m| <= horizon`.
pub fn closest_return_check(co: &CriticalOrbit, horizon: usize, disk: f64) -> RecurrenceReport {
    let mut returns = Vec::new();
    let mut all = Vec::new();
    for sign in [1i64, -1] {
        let mut best = f64::INFINITY;
        for m in 1..=horizon as i64 {
            let Some(p) = co.point(sign * m) else { break };
            let d = dist(p, co.c0);
            all.push((sign * m, d));
            if d < disk && d < best {
                best = d;
                returns.push((sign * m, d));
            }
        }
    }
    let slow_recurrence = returns
        .iter()
        .map(|&(m, d)| if d == 0.0 { f64::INFINITY } else { (1.0 / d).ln().max(0.0) / m.unsigned_abs() as f64 })
        .fold(0.0, f64::max);
    let lam = co.lambda_est;
    let kappa = (lam > 0.0 && lam < 1.0).then(|| {
        returns
            .iter()
            .filter(|r| r.1 < 1.0)
            .map(|&(m, d)| m.unsigned_abs() as f64 / (d.ln() / lam.ln()))
            .fold(f64::INFINITY, f64::min)
    });
    let half = horizon as i64 / 2;
    let first_half = all.iter().filter(|r| r.0 > 0 && r.0 <= half).map(|r| r.1).fold(f64::INFINITY, f64::min);
    let second_half = all.iter().filter(|r| r.0 > half).map(|r| r.1).fold(f64::INFINITY, f64::min);
    let periodic = second_half >= first_half || slow_recurrence.is_infinite();
    let mut doubling = Vec::new();
    let mut m = 1i64;
    while m <= horizon as i64 {
        if let Some(p) = co.point(m) {
            doubling.push((m, dist(p, co.c0)));
        }
        m *= 2;
    }
    let doubling_monotone = doubling.windows(2).all(|w| w[1].1 < w[0].1);
    RecurrenceReport { returns, slow_recurrence, kappa, periodic, doubling, doubling_monotone }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DistortionReport {
    /// `max / min` of `|DF^n t|` over the segment midpoints of `gamma`.
    pub distortion: f64,
    pub log_distortion: f64,
    /// `sum_{i=1}^n |F^i(gamma)|`.
    pub length_sum: f64,
    pub lengths: Vec<f64>,
    /// Largest discrete curvature of `F^i(gamma)`, `i = 1..=n`.
    pub curvatures: Vec<f64>,
}

impl DistortionReport {
    /// Number of leading iterates whose curvature stays at most `bound`.
    pub fn bounded_horizon(&self, bound: f64) -> usize {
        self.curvatures.iter().take_while(|&&k| k <= bound).count()
    }
}

/// Distortion of `F^n` along `gamma` from per-segment stretching.
pub fn distortion(map: &HenonLikeMap, gamma: &Polyline, n: usize) -> Result<DistortionReport> {
    let v = gamma.vertices();
    let mut stretch = Vec::with_capacity(v.len() - 1);
    for w in v.windows(2) {
        let mid = [0.5 * (w[0][0] + w[1][0]), 0.5 * (w[0][1] + w[1][1])];
        let t = normalize([w[1][0] - w[0][0], w[1][1] - w[0][1]]);
        let mut q = mid;
        let mut e = t;
        let mut log_s = 0.0;
        for k in 0..n {
            let (q2, j) = map.eval_jac(q).map_err(|e| escape_at(e, k))?;
            let img = j.apply(e);
            let s = norm(img);
            log_s += s.ln();
            e = [img[0] / s, img[1] / s];
            q = q2;
        }
        stretch.push(log_s);
    }
    let mut lengths = Vec::with_capacity(n);
    let mut curvatures = Vec::with_capacity(n);
    let mut pts: Vec<Point> = v.to_vec();
    for k in 0..n {
        pts = pts.iter().map(|p| map.eval(*p)).collect::<Result<_>>().map_err(|e| escape_at(e, k))?;
        let line = Polyline::new(pts.iter().copied());
        lengths.push(line.length());
        curvatures.push(line.max_curvature());
    }
    let hi = stretch.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = stretch.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(DistortionReport {
        distortion: (hi - lo).exp(),
        log_distortion: hi - lo,
        length_sum: lengths.iter().sum(),
        lengths,
        curvatures,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClusterFit {
    pub size: usize,
    pub diameter: f64,
    /// Max normal deviation from a cubic fitted in principal coordinates.
    pub deviation: f64,
}

/// Single-linkage clusters at `scale`; clusters wider than `scale` get a curve fit.
pub fn component_triviality_check(sample: &[Point], scale: f64) -> Vec<ClusterFit> {
    let n = sample.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let key = |p: Point| ((p[0] / scale).floor() as i64, (p[1] / scale).floor() as i64);
    let mut cells: std::collections::HashMap<(i64, i64), Vec<usize>> = std::collections::HashMap::new();
    for (i, p) in sample.iter().enumerate() {
        cells.entry(key(*p)).or_default().push(i);
    }
    for (i, p) in sample.iter().enumerate() {
        let (cx, cy) = key(*p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(list) = cells.get(&(cx + dx, cy + dy)) {
                    for &j in list {
                        if j > i && dist(*p, sample[j]) <= scale {
                            let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                            if a != b {
                                parent[a] = b;
                            }
                        }
                    }
                }
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<Point>> = std::collections::BTreeMap::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(sample[i]);
    }
    let mut out = Vec::new();
    for pts in groups.values() {
        let diameter = bbox_diameter(pts);
        if diameter <= scale || pts.len() < 5 {
            continue;
        }
        out.push(ClusterFit { size: pts.len(), diameter, deviation: curve_deviation(pts) });
    }
    out
}

fn bbox_diameter(pts: &[Point]) -> f64 {
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in pts {
        x0 = x0.min(p[0]);
        x1 = x1.max(p[0]);
        y0 = y0.min(p[1]);
        y1 = y1.max(p[1]);
    }
    (x1 - x0).hypot(y1 - y0)
}

fn curve_deviation(pts: &[Point]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p[0]).sum::<f64>() / n;
    let my = pts.iter().map(|p| p[1]).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in pts {
        let (dx, dy) = (p[0] - mx, p[1] - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let th = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let (c, s) = (th.cos(), th.sin());
    let local: Vec<Point> =
        pts.iter().map(|p| [(p[0] - mx) * c + (p[1] - my) * s, -(p[0] - mx) * s + (p[1] - my) * c]).collect();
    let a = DMatrix::from_fn(local.len(), 4, |i, j| local[i][0].powi(j as i32));
    let rhs = DVector::from_iterator(local.len(), local.iter().map(|p| p[1]));
    let Ok((coef, _)) = solve_ls(a.clone(), rhs.clone()) else { return f64::INFINITY };
    let fit = &a * &coef;
    (fit - rhs).amax()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{PlaneBox, Transform};

    fn diag(l1: f64, l2: f64) -> OrbitCocycle {
        OrbitCocycle::constant(Mat2::new(l1, 0.0, 0.0, l2), 60)
    }

    #[test]
    fn directions_of_diagonal_cocycles() {
        let near = |u: Point, v: Point| line_angle(u, v) < 1e-12;
        let o = diag(1.0, 0.3);
        assert!(near(strong_stable_direction_on_orbit(&o, 10, 20), [0.0, 1.0]));
        assert!(near(center_direction_on_orbit(&o, 30, 20), [1.0, 0.0]));
        let o = diag(2.0, 0.5);
        assert!(near(strong_stable_direction_on_orbit(&o, 0, 5), [0.0, 1.0]));
    }

    #[test]
    fn saddle_stable_direction_matches_eigenvector() {
        let (a, b) = (-1.4, 0.3);
        let f = HenonLikeMap::henon(a, b);
        let x = ((1.0 + b) - ((1.0 + b) * (1.0 + b) - 4.0 * a).sqrt()) / 2.0;
        let p = [x, x];
        // eigenvalues of [[2x, -b], [1, 0]]
        let tr = 2.0 * x;
        let mu = (tr + (tr * tr - 4.0 * b).sqrt()) / 2.0;
        let mu = if mu.abs() < 1.0 { mu } else { (tr - (tr * tr - 4.0 * b).sqrt()) / 2.0 };
        let eig = normalize([mu, 1.0]);
        let e = strong_stable_direction(&f, p, 40).unwrap();
        assert!(line_angle(e, eig) < 1e-6);
    }

    #[test]
    fn tunnel_examples() {
        let spec = TunnelSpec {
            omega: 2.0,
            t: 1.0,
            truncation: 0.0,
            chart: Chart::identity([0.0, 0.0], 2.0),
            side: TunnelSide::Critical,
        };
        assert!(tunnel_membership(&spec, [0.5, 0.1]).unwrap());
        assert!(!tunnel_membership(&spec, [0.5, 0.3]).unwrap());
        assert!(!tunnel_membership(&spec, [1.5, 0.0]).unwrap());
        assert!(matches!(tunnel_membership(&spec, [2.5, 0.0]), Err(LabError::ChartRange)));
    }

    #[test]
    fn linear_distortion_is_one() {
        let f = HenonLikeMap::new(
            vec![Transform::AffineRescale { center: [0.0, 0.0], scale: 2.0 }],
            PlaneBox::square([0.0, 0.0], 3.0),
        );
        let g = Polyline::segment([0.1, 0.2], [0.3, 0.25], 20);
        let r = distortion(&f, &g, 3).unwrap();
        assert!((r.distortion - 1.0).abs() < 1e-12);
    }

    #[test]
    fn product_set_is_not_a_curve() {
        let pts: Vec<Point> = (0..20).flat_map(|i| (0..20).map(move |j| [i as f64 * 0.01, j as f64 * 0.01])).collect();
        let fits = component_triviality_check(&pts, 0.015);
        assert_eq!(fits.len(), 1);
        assert!(fits[0].deviation > 0.05);
    }
}
