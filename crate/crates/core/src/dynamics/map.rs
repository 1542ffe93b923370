use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::geometry::{Mat2, PlaneBox, Point};
use crate::error::{LabError, Result};
use crate::real::Real;

/// The quadratic family `f_a(x) = x^2 + a`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticMap {
    pub a: f64,
}

impl QuadraticMap {
    pub fn new(a: f64) -> Self {
        QuadraticMap { a }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        x * x + self.a
    }

    #[inline]
    pub fn deriv(&self, x: f64) -> f64 {
        2.0 * x
    }

    #[inline]
    pub fn eval_t<T: Real>(&self, x: T) -> T {
        x * x + T::from_f64(self.a)
    }

    pub fn critical_point(&self) -> f64 {
        0.0
    }
}

/// Horizontal straightening `H(x, y) = (g(x, y), y)` built from the first coordinate `g`
/// of an inner map. The inverse picks the branch on the `side` of `pivot`.
#[derive(Debug)]
pub struct Straightener {
    inner: Arc<HenonLikeMap>,
    pivot: f64,
    side: f64,
    curvature: f64,
}

impl Straightener {
    /// `pivot` is the critical abscissa of the inner slice; `side` is `+1` or `-1`.
    pub fn new(inner: Arc<HenonLikeMap>, pivot: f64, side: f64) -> Result<Self> {
        let d = 0.1 * inner.domain.half[0];
        let g0 = inner.eval([pivot, pivot])?[0];
        let g1 = inner.eval([pivot + side * d, pivot])?[0];
        let curvature = (g0 - g1) / (d * d);
        if curvature == 0.0 || !curvature.is_finite() {
            return Err(LabError::SingularStraighten("flat slice at the pivot".into()));
        }
        Ok(Straightener { inner, pivot, side: side.signum(), curvature })
    }

    pub fn inner(&self) -> &Arc<HenonLikeMap> {
        &self.inner
    }

    pub fn pivot(&self) -> f64 {
        self.pivot
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    #[inline]
    fn forward<T: Real>(&self, p: [T; 2]) -> Result<([T; 2], Mat2<T>)> {
        let (q, j) = self.inner.eval_jac_inner(p)?;
        Ok(([q[0], p[1]], Mat2::new(j.m[0][0], j.m[0][1], T::zero(), T::one())))
    }

    /// Solves `g(x, y) = u` on the chosen branch by safeguarded Newton.
    fn backward<T: Real>(&self, p: [T; 2]) -> Result<([T; 2], Mat2<T>)> {
        let (u, y) = (p[0], p[1]);
        let (xlo, xhi) = self.inner.domain.x_range();
        let end = if self.side > 0.0 { xhi } else { xlo };
        let pivot = T::from_f64(self.pivot);
        let g_at = |x: T| -> Result<(T, Mat2<T>)> {
            let (q, j) = self.inner.eval_jac_inner([x, y])?;
            Ok((q[0] - u, j))
        };
        let (r_pivot, _) = g_at(pivot)?;
        let (r_end, _) = g_at(T::from_f64(end))?;
        let pos_at_pivot = r_pivot.to_f64() > 0.0;
        if pos_at_pivot == (r_end.to_f64() > 0.0) {
            return Err(LabError::SingularStraighten(format!(
                "no preimage of u={} on the branch",
                u.to_f64()
            )));
        }
        // bracket [a, b] with r(a) of the pivot's sign
        let (mut a, mut b) = (pivot, T::from_f64(end));
        let seed = self.pivot + self.side * (r_pivot.to_f64() / self.curvature).max(0.0).sqrt();
        let inside = |x: f64| (x - self.pivot) * (x - end) <= 0.0;
        let mut x = if inside(seed) { T::from_f64(seed) } else { (a + b) * T::from_f64(0.5) };
        let tol = 4.0 * T::EPSILON;
        let mut prev_dx = f64::INFINITY;
        for _ in 0..80 {
            let (r, j) = g_at(x)?;
            let gx = j.m[0][0];
            if r == T::zero() {
                return self.finish(x, y, j);
            }
            if (r > T::zero()) == pos_at_pivot {
                a = x;
            } else {
                b = x;
            }
            let newton = if gx != T::zero() { x - r / gx } else { a };
            if (newton - x).abs().to_f64() <= tol * x.abs().to_f64().max(1.0) {
                return self.finish(x, y, j);
            }
            let step_ok = {
                let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                newton > lo && newton < hi
            };
            let next = if step_ok { newton } else { (a + b) * T::from_f64(0.5) };
            let dx = (next - x).abs().to_f64();
            x = next;
            let scale = x.abs().to_f64().max(1.0);
            // stop at the tolerance, or once Newton steps stall at the evaluation noise
            if dx <= tol * scale || (step_ok && dx <= 64.0 * T::EPSILON * scale && dx >= 0.5 * prev_dx) {
                let (_, j) = g_at(x)?;
                return self.finish(x, y, j);
            }
            prev_dx = dx;
            if (a - b).abs().to_f64() <= tol * scale {
                let (_, j) = g_at(x)?;
                return self.finish(x, y, j);
            }
        }
        Err(LabError::SingularStraighten("Newton did not converge".into()))
    }

    fn finish<T: Real>(&self, x: T, y: T, j: Mat2<T>) -> Result<([T; 2], Mat2<T>)> {
        let gx = j.m[0][0];
        if gx == T::zero() {
            return Err(LabError::SingularStraighten("d/dx g vanishes at the preimage".into()));
        }
        let inv = Mat2::new(T::one() / gx, -j.m[0][1] / gx, T::zero(), T::one());
        Ok(([x, y], inv))
    }
}

/// One link of a composition chain.
#[derive(Clone, Debug)]
pub enum Transform {
    /// `(x, y) -> (x^2 + a - b y, x)`
    HenonStep { a: f64, b: f64 },
    /// `(x, y) -> (f(x), x)`
    Embed1D(QuadraticMap),
    /// `p -> (p - center) / scale`
    AffineRescale { center: Point, scale: f64 },
    HorizontalStraighten(Arc<Straightener>),
    Inverse(Box<Transform>),
}

impl Transform {
    pub fn inverse(self) -> Transform {
        match self {
            Transform::Inverse(t) => *t,
            t => Transform::Inverse(Box::new(t)),
        }
    }

    #[inline]
    fn apply<T: Real>(&self, p: [T; 2]) -> Result<([T; 2], Mat2<T>)> {
        match self {
            Transform::HenonStep { a, b } => {
                let (x, y) = (p[0], p[1]);
                let b = T::from_f64(*b);
                let two = T::from_f64(2.0);
                Ok(([x * x + T::from_f64(*a) - b * y, x], Mat2::new(two * x, -b, T::one(), T::zero())))
            }
            Transform::Embed1D(f) => {
                let x = p[0];
                Ok(([f.eval_t(x), x], Mat2::new(T::from_f64(2.0) * x, T::zero(), T::one(), T::zero())))
            }
            Transform::AffineRescale { center, scale } => {
                let s = T::from_f64(*scale);
                let q = [(p[0] - T::from_f64(center[0])) / s, (p[1] - T::from_f64(center[1])) / s];
                let d = T::one() / s;
                Ok((q, Mat2::new(d, T::zero(), T::zero(), d)))
            }
            Transform::HorizontalStraighten(h) => h.forward(p),
            Transform::Inverse(t) => t.apply_inverse(p),
        }
    }

    fn apply_inverse<T: Real>(&self, p: [T; 2]) -> Result<([T; 2], Mat2<T>)> {
        match self {
            Transform::HenonStep { a, b } => {
                if *b == 0.0 {
                    return Err(LabError::Singular("Henon step with b = 0".into()));
                }
                let (u, v) = (p[0], p[1]);
                let bb = T::from_f64(*b);
                let y = (v * v + T::from_f64(*a) - u) / bb;
                let inv_b = T::one() / bb;
                Ok(([v, y], Mat2::new(T::zero(), T::one(), -inv_b, T::from_f64(2.0) * v * inv_b)))
            }
            Transform::Embed1D(_) => Err(LabError::Singular("embedded 1D map has no inverse".into())),
            Transform::AffineRescale { center, scale } => {
                let s = T::from_f64(*scale);
                let q = [p[0] * s + T::from_f64(center[0]), p[1] * s + T::from_f64(center[1])];
                Ok((q, Mat2::new(s, T::zero(), T::zero(), s)))
            }
            Transform::HorizontalStraighten(h) => h.backward(p),
            Transform::Inverse(t) => t.apply(p),
        }
    }

    /// `log |det|` of this element's Jacobian at `p`, together with the image.
    fn log_det_step(&self, p: Point) -> Result<(Point, f64)> {
        let (q, j) = self.apply(p)?;
        let ld = match self {
            Transform::HenonStep { b, .. } => b.abs().ln(),
            Transform::Inverse(t) if matches!(**t, Transform::HenonStep { .. }) => {
                let Transform::HenonStep { b, .. } = **t else { unreachable!() };
                -b.abs().ln()
            }
            _ => j.det().abs().ln(),
        };
        Ok((q, ld))
    }
}

/// A planar map given as a chain of elementary transforms applied left to right.
#[derive(Clone, Debug)]
pub struct HenonLikeMap {
    chain: Vec<Transform>,
    domain: PlaneBox,
}

pub const DEFAULT_HALF_WIDTH: f64 = 3.0;

impl HenonLikeMap {
    pub fn new(chain: Vec<Transform>, domain: PlaneBox) -> Self {
        HenonLikeMap { chain, domain }
    }

    /// `F_{a,b}` on the default square `[-3, 3]^2`.
    pub fn henon(a: f64, b: f64) -> Self {
        Self::new(vec![Transform::HenonStep { a, b }], PlaneBox::square([0.0, 0.0], DEFAULT_HALF_WIDTH))
    }

    pub fn with_domain(mut self, domain: PlaneBox) -> Self {
        self.domain = domain;
        self
    }

    pub fn chain(&self) -> &[Transform] {
        &self.chain
    }

    pub fn domain(&self) -> &PlaneBox {
        &self.domain
    }

    /// `S o self o S^-1` for an invertible element `s`.
    pub fn conjugate(&self, s: Transform, domain: PlaneBox) -> Self {
        let mut chain = Vec::with_capacity(self.chain.len() + 2);
        chain.push(s.clone().inverse());
        chain.extend(self.chain.iter().cloned());
        chain.push(s);
        Self::new(chain, domain)
    }

    /// Composition: first `self`, then `next`.
    pub fn then(&self, next: &HenonLikeMap) -> Self {
        let mut chain = self.chain.clone();
        chain.extend(next.chain.iter().cloned());
        Self::new(chain, self.domain)
    }

    /// `self^{-1}` on `domain`: the chain reversed with every element inverted.
    pub fn inverse_map(&self, domain: PlaneBox) -> Self {
        Self::new(self.chain.iter().rev().map(|t| t.clone().inverse()).collect(), domain)
    }

    /// True when no element couples `y` into the first coordinate.
    pub fn is_embedded_1d(&self) -> bool {
        match self.chain.as_slice() {
            [Transform::Embed1D(_)] => true,
            [Transform::HenonStep { b, .. }] => *b == 0.0,
            _ => false,
        }
    }

    fn check_domain<T: Real>(&self, p: [T; 2]) -> Result<()> {
        if self.domain.contains_t(p) {
            Ok(())
        } else {
            Err(LabError::Domain { x: p[0].to_f64(), y: p[1].to_f64() })
        }
    }

    /// Image and Jacobian in arithmetic `T`.
    pub fn eval_jac_t<T: Real>(&self, p: [T; 2]) -> Result<([T; 2], Mat2<T>)> {
        self.check_domain(p)?;
        self.run_chain(p)
    }

    fn run_chain<T: Real>(&self, p: [T; 2]) -> Result<([T; 2], Mat2<T>)> {
        let mut q = p;
        let mut jac = Mat2::identity();
        for (i, t) in self.chain.iter().enumerate() {
            let (q2, j) = t.apply(q).map_err(|e| match e {
                LabError::Domain { .. } => LabError::Escape { index: i },
                e => e,
            })?;
            q = q2;
            jac = j.mul(&jac);
            if !(q[0].is_finite() && q[1].is_finite()) {
                return Err(LabError::Escape { index: i });
            }
        }
        Ok((q, jac))
    }

    /// Evaluation used from inside another chain: domain exits become escapes.
    fn eval_jac_inner<T: Real>(&self, p: [T; 2]) -> Result<([T; 2], Mat2<T>)> {
        if !self.domain.contains_t(p) {
            return Err(LabError::Escape { index: 0 });
        }
        self.run_chain(p)
    }

    pub fn eval(&self, p: Point) -> Result<Point> {
        Ok(self.eval_jac_t(p)?.0)
    }

    pub fn jacobian(&self, p: Point) -> Result<Mat2> {
        Ok(self.eval_jac_t(p)?.1)
    }

    pub fn eval_jac(&self, p: Point) -> Result<(Point, Mat2)> {
        self.eval_jac_t(p)
    }

    /// `log |det DF(p)|` accumulated element by element, so it stays accurate when the
    /// determinant itself is far below rounding of the product matrix.
    pub fn log_abs_det(&self, p: Point) -> Result<f64> {
        self.check_domain(p)?;
        let mut q = p;
        let mut sum = 0.0;
        for t in &self.chain {
            let (q2, ld) = match t {
                Transform::HorizontalStraighten(h) => {
                    let (q2, j) = h.forward(q)?;
                    (q2, j.m[0][0].abs().ln())
                }
                Transform::Inverse(inner) if matches!(**inner, Transform::HorizontalStraighten(_)) => {
                    let (q2, j) = inner.apply_inverse(q)?;
                    (q2, j.m[0][0].abs().ln())
                }
                t => t.log_det_step(q)?,
            };
            q = q2;
            sum += ld;
        }
        Ok(sum)
    }

    /// Forward orbit `p, F(p), ..., F^n(p)`; errors with the escape index.
    pub fn orbit_points(&self, p: Point, n: usize) -> Result<Vec<Point>> {
        let mut out = Vec::with_capacity(n + 1);
        out.push(p);
        let mut q = p;
        for k in 0..n {
            q = self.eval(q).map_err(|e| escape_at(e, k))?;
            out.push(q);
        }
        Ok(out)
    }
}

pub(crate) fn escape_at(e: LabError, k: usize) -> LabError {
    match e {
        LabError::Domain { .. } | LabError::Escape { .. } => LabError::Escape { index: k },
        e => e,
    }
}

/// `iota(f)(x, y) = (f(x), x)` on the default square.
pub fn embed_1d(f: QuadraticMap) -> HenonLikeMap {
    HenonLikeMap::new(vec![Transform::Embed1D(f)], PlaneBox::square([0.0, 0.0], DEFAULT_HALF_WIDTH))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::real::DoubleDouble;

    fn fd_jacobian(f: &HenonLikeMap, p: Point, h: f64) -> Mat2 {
        let col = |k: usize| {
            let mut a = p;
            let mut b = p;
            a[k] += h;
            b[k] -= h;
            let (fa, fb) = (f.eval(a).unwrap(), f.eval(b).unwrap());
            [(fa[0] - fb[0]) / (2.0 * h), (fa[1] - fb[1]) / (2.0 * h)]
        };
        let (c0, c1) = (col(0), col(1));
        Mat2::new(c0[0], c1[0], c0[1], c1[1])
    }

    #[test]
    fn henon_step_examples() {
        let f = HenonLikeMap::henon(0.0, 0.0);
        assert_eq!(f.eval([0.0, 0.0]).unwrap(), [0.0, 0.0]);
        let f = HenonLikeMap::henon(-1.0, 0.0);
        assert_eq!(f.eval([1.0, 0.7]).unwrap(), [0.0, 1.0]);
        let f = HenonLikeMap::henon(-1.4, 0.3);
        let q = f.eval([0.5, 0.2]).unwrap();
        assert!((q[0] + 1.21).abs() < 1e-15 && q[1] == 0.5);
        assert_eq!(f.jacobian([0.5, 0.2]).unwrap(), Mat2::new(1.0, -0.3, 1.0, 0.0));
    }

    #[test]
    fn embed_examples() {
        let g = embed_1d(QuadraticMap::new(-1.0));
        assert_eq!(g.eval([1.0, 2.9]).unwrap(), [0.0, 1.0]);
        let j = g.jacobian([0.3, 1.0]).unwrap();
        assert_eq!(j, Mat2::new(0.6, 0.0, 1.0, 0.0));
        assert_eq!(j.det(), 0.0);
    }

    #[test]
    fn domain_and_singular_errors() {
        let f = HenonLikeMap::henon(-1.0, 0.3);
        assert!(matches!(f.eval([5.0, 0.0]), Err(LabError::Domain { .. })));
        let g = HenonLikeMap::new(
            vec![Transform::Embed1D(QuadraticMap::new(-1.0)).inverse()],
            PlaneBox::square([0.0, 0.0], 3.0),
        );
        assert!(matches!(g.eval([0.0, 0.0]), Err(LabError::Singular(_))));
    }

    #[test]
    fn henon_inverse_round_trip() {
        let f = HenonLikeMap::henon(-1.4, 0.3);
        let finv = HenonLikeMap::new(
            vec![Transform::HenonStep { a: -1.4, b: 0.3 }.inverse()],
            PlaneBox::square([0.0, 0.0], 10.0),
        );
        let p = [0.3, -0.2];
        let back = finv.eval(f.eval(p).unwrap()).unwrap();
        assert!((back[0] - p[0]).abs() < 1e-14 && (back[1] - p[1]).abs() < 1e-14);
        assert!((finv.log_abs_det([0.1, 0.2]).unwrap() + 0.3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn conjugated_step_keeps_determinant() {
        let f = HenonLikeMap::henon(-1.2, 0.3);
        let g = f.conjugate(
            Transform::AffineRescale { center: [0.1, 0.1], scale: -0.4 },
            PlaneBox::square([0.0, 0.0], 2.0),
        );
        for p in [[0.1, 0.2], [-0.5, 0.4], [1.0, -1.0]] {
            let d = g.jacobian(p).unwrap().det();
            assert!((d - 0.3).abs() < 1e-14);
            assert!((g.log_abs_det(p).unwrap() - 0.3f64.ln()).abs() < 1e-14);
        }
    }

    #[test]
    fn straightener_inverts_slice() {
        let inner = Arc::new(HenonLikeMap::henon(-1.4, 0.1));
        let h = Arc::new(Straightener::new(inner, 0.0, -1.0).unwrap());
        let map = HenonLikeMap::new(
            vec![
                Transform::HorizontalStraighten(h.clone()).inverse(),
                Transform::HorizontalStraighten(h),
            ],
            PlaneBox::square([0.0, 0.0], 0.6),
        );
        for p in [[0.3, 0.2], [-0.5, -0.55], [0.0, 0.1]] {
            let (q, j) = map.eval_jac(p).unwrap();
            assert!((q[0] - p[0]).abs() < 1e-14 && (q[1] - p[1]).abs() < 1e-14);
            assert!((j.m[0][0] - 1.0).abs() < 1e-13 && j.m[0][1].abs() < 1e-13);
        }
        let fd = fd_jacobian(&map, [0.2, 0.1], 1e-6);
        assert!((fd.m[0][0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn double_double_agrees_with_f64() {
        let f = HenonLikeMap::henon(-1.4, 0.3);
        let p = [0.25, -0.125];
        let (q, j) = f.eval_jac_t([DoubleDouble::from_f64(p[0]), DoubleDouble::from_f64(p[1])]).unwrap();
        let (q64, j64) = f.eval_jac(p).unwrap();
        assert!((q[0].to_f64() - q64[0]).abs() < 1e-15);
        assert!((j.to_f64().m[0][0] - j64.m[0][0]).abs() < 1e-15);
    }

    #[test]
    fn analytic_jacobian_matches_finite_differences() {
        let f = HenonLikeMap::henon(-1.3, 0.2);
        let g = f.then(&f).then(&f);
        let p = [0.2, -0.3];
        let j = g.jacobian(p).unwrap();
        let fd = fd_jacobian(&g, p, 1e-6);
        for r in 0..2 {
            for c in 0..2 {
                let rel = (j.m[r][c] - fd.m[r][c]).abs() / j.m[r][c].abs().max(1e-3);
                assert!(rel < 1e-6, "entry ({r},{c}): {} vs {}", j.m[r][c], fd.m[r][c]);
            }
        }
    }
}
