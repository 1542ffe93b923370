use serde::{Deserialize, Serialize};

use crate::real::Real;

pub type Point = [f64; 2];

/// Row-major 2x2 matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat2<T = f64> {
    pub m: [[T; 2]; 2],
}

impl<T: Real> Mat2<T> {
    pub fn new(a: T, b: T, c: T, d: T) -> Self {
        Mat2 { m: [[a, b], [c, d]] }
    }

    pub fn identity() -> Self {
        Self::new(T::one(), T::zero(), T::zero(), T::one())
    }

    #[inline]
    pub fn mul(&self, o: &Self) -> Self {
        let a = &self.m;
        let b = &o.m;
        Mat2 {
            m: [
                [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
                [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
            ],
        }
    }

    #[inline]
    pub fn apply(&self, v: [T; 2]) -> [T; 2] {
        [
            self.m[0][0] * v[0] + self.m[0][1] * v[1],
            self.m[1][0] * v[0] + self.m[1][1] * v[1],
        ]
    }

    #[inline]
    pub fn det(&self) -> T {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn inverse(&self) -> Option<Self> {
        let d = self.det();
        if d == T::zero() || !d.is_finite() {
            return None;
        }
        Some(Self::new(
            self.m[1][1] / d,
            -self.m[0][1] / d,
            -self.m[1][0] / d,
            self.m[0][0] / d,
        ))
    }

    pub fn to_f64(&self) -> Mat2<f64> {
        Mat2 {
            m: [
                [self.m[0][0].to_f64(), self.m[0][1].to_f64()],
                [self.m[1][0].to_f64(), self.m[1][1].to_f64()],
            ],
        }
    }
}

impl Mat2<f64> {
    pub fn transpose(&self) -> Self {
        Self::new(self.m[0][0], self.m[1][0], self.m[0][1], self.m[1][1])
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::new(self.m[0][0] * s, self.m[0][1] * s, self.m[1][0] * s, self.m[1][1] * s)
    }

    pub fn frobenius(&self) -> f64 {
        self.m.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Singular values `(s1, s2)` with `s1 >= s2`; `s2` comes from the determinant so
    /// the product identity holds to rounding.
    pub fn singular_values(&self) -> (f64, f64) {
        let s1 = self.spectral_norm();
        if s1 == 0.0 {
            return (0.0, 0.0);
        }
        (s1, self.det().abs() / s1)
    }

    pub fn spectral_norm(&self) -> f64 {
        let [[a, b], [c, d]] = self.m;
        let p = a * a + c * c;
        let r = b * b + d * d;
        let q = a * b + c * d;
        let h = 0.5 * (p - r);
        (0.5 * (p + r) + h.hypot(q)).max(0.0).sqrt()
    }

    /// Unit right singular vector of the smallest singular value.
    pub fn most_contracted(&self) -> Point {
        let [[a, b], [c, d]] = self.m;
        let p = a * a + c * c;
        let r = b * b + d * d;
        let q = a * b + c * d;
        let theta = 0.5 * (2.0 * q).atan2(p - r) + std::f64::consts::FRAC_PI_2;
        [theta.cos(), theta.sin()]
    }

    /// Unit left singular vector of the largest singular value.
    pub fn most_expanded_image(&self) -> Point {
        self.transpose().most_expanded()
    }

    /// Unit right singular vector of the largest singular value.
    pub fn most_expanded(&self) -> Point {
        let [[a, b], [c, d]] = self.m;
        let p = a * a + c * c;
        let r = b * b + d * d;
        let q = a * b + c * d;
        let theta = 0.5 * (2.0 * q).atan2(p - r);
        [theta.cos(), theta.sin()]
    }
}

pub fn norm(v: Point) -> f64 {
    v[0].hypot(v[1])
}

pub fn normalize(v: Point) -> Point {
    let n = norm(v);
    [v[0] / n, v[1] / n]
}

pub fn dist(p: Point, q: Point) -> f64 {
    (p[0] - q[0]).hypot(p[1] - q[1])
}

/// Angle in `[0, pi/2]` between two lines through the origin.
pub fn line_angle(u: Point, v: Point) -> f64 {
    let c = (u[0] * v[0] + u[1] * v[1]).abs() / (norm(u) * norm(v));
    let s = (u[0] * v[1] - u[1] * v[0]).abs() / (norm(u) * norm(v));
    s.atan2(c)
}

/// Axis-aligned rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneBox {
    pub center: Point,
    pub half: [f64; 2],
}

impl PlaneBox {
    pub fn new(center: Point, half: [f64; 2]) -> Self {
        assert!(half[0] > 0.0 && half[1] > 0.0, "half-widths must be positive");
        PlaneBox { center, half }
    }

    pub fn square(center: Point, half: f64) -> Self {
        Self::new(center, [half, half])
    }

    pub fn contains(&self, p: Point) -> bool {
        (p[0] - self.center[0]).abs() <= self.half[0] && (p[1] - self.center[1]).abs() <= self.half[1]
    }

    pub fn contains_t<T: Real>(&self, p: [T; 2]) -> bool {
        self.contains([p[0].to_f64(), p[1].to_f64()])
    }

    pub fn x_range(&self) -> (f64, f64) {
        (self.center[0] - self.half[0], self.center[0] + self.half[0])
    }

    pub fn y_range(&self) -> (f64, f64) {
        (self.center[1] - self.half[1], self.center[1] + self.half[1])
    }

    /// `k x k` grid of points including the corners.
    pub fn grid(&self, k: usize) -> Vec<Point> {
        let (x0, x1) = self.x_range();
        let (y0, y1) = self.y_range();
        let step = |lo: f64, hi: f64, i: usize| lo + (hi - lo) * i as f64 / (k - 1) as f64;
        let mut out = Vec::with_capacity(k * k);
        for j in 0..k {
            for i in 0..k {
                out.push([step(x0, x1, i), step(y0, y1, j)]);
            }
        }
        out
    }
}

/// Piecewise-linear curve with cached cumulative arclength.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polyline {
    vertices: Vec<Point>,
    arclength: Vec<f64>,
}

impl Polyline {
    /// Builds a polyline, dropping repeated consecutive vertices.
    pub fn new(points: impl IntoIterator<Item = Point>) -> Self {
        let mut vertices: Vec<Point> = Vec::new();
        for p in points {
            if vertices.last().is_none_or(|q| *q != p) {
                vertices.push(p);
            }
        }
        let mut arclength = Vec::with_capacity(vertices.len());
        let mut s = 0.0;
        for (i, p) in vertices.iter().enumerate() {
            if i > 0 {
                s += dist(vertices[i - 1], *p);
            }
            arclength.push(s);
        }
        Polyline { vertices, arclength }
    }

    pub fn segment(p: Point, q: Point, pieces: usize) -> Self {
        Self::new((0..=pieces).map(|i| {
            let t = i as f64 / pieces as f64;
            [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
        }))
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn arclength(&self) -> &[f64] {
        &self.arclength
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn length(&self) -> f64 {
        self.arclength.last().copied().unwrap_or(0.0)
    }

    /// Point at arclength `s`, clamped to the ends.
    pub fn point_at(&self, s: f64) -> Point {
        let n = self.vertices.len();
        if n == 1 || s <= 0.0 {
            return self.vertices[0];
        }
        if s >= self.length() {
            return self.vertices[n - 1];
        }
        let i = self.arclength.partition_point(|&a| a <= s) - 1;
        let t = (s - self.arclength[i]) / (self.arclength[i + 1] - self.arclength[i]);
        let (p, q) = (self.vertices[i], self.vertices[i + 1]);
        [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
    }

    /// Closest point on the curve: `(distance, arclength parameter)`.
    pub fn project(&self, p: Point) -> (f64, f64) {
        if self.vertices.len() == 1 {
            return (dist(p, self.vertices[0]), 0.0);
        }
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..self.vertices.len() - 1 {
            let (a, b) = (self.vertices[i], self.vertices[i + 1]);
            let d = [b[0] - a[0], b[1] - a[1]];
            let l2 = d[0] * d[0] + d[1] * d[1];
            let t = (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / l2).clamp(0.0, 1.0);
            let q = [a[0] + t * d[0], a[1] + t * d[1]];
            let dq = dist(p, q);
            if dq < best.0 {
                best = (dq, self.arclength[i] + t * l2.sqrt());
            }
        }
        best
    }

    /// Doubles the vertex count by inserting midpoints.
    pub fn refined(&self) -> Self {
        let mut out = Vec::with_capacity(2 * self.vertices.len());
        for w in self.vertices.windows(2) {
            out.push(w[0]);
            out.push([0.5 * (w[0][0] + w[1][0]), 0.5 * (w[0][1] + w[1][1])]);
        }
        out.extend(self.vertices.last().copied());
        Self::new(out)
    }

    /// Largest turning angle per unit length, a discrete curvature bound.
    pub fn max_curvature(&self) -> f64 {
        let v = &self.vertices;
        let mut k: f64 = 0.0;
        for i in 1..v.len().saturating_sub(1) {
            let a = [v[i][0] - v[i - 1][0], v[i][1] - v[i - 1][1]];
            let b = [v[i + 1][0] - v[i][0], v[i + 1][1] - v[i][1]];
            let turn = (a[0] * b[1] - a[1] * b[0]).atan2(a[0] * b[0] + a[1] * b[1]).abs();
            k = k.max(2.0 * turn / (norm(a) + norm(b)));
        }
        k
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singular_values_of_diagonal() {
        let m = Mat2::new(3.0, 0.0, 0.0, -0.5);
        let (s1, s2) = m.singular_values();
        assert!((s1 - 3.0).abs() < 1e-15 && (s2 - 0.5).abs() < 1e-15);
        let v = m.most_contracted();
        assert!(v[0].abs() < 1e-15 && (v[1].abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn most_contracted_rotated() {
        // rotation times diag(2, 1/2) times rotation^T: contracted direction is the rotated y axis
        let t: f64 = 0.3;
        let (c, s) = (t.cos(), t.sin());
        let r = Mat2::new(c, -s, s, c);
        let m = r.mul(&Mat2::new(2.0, 0.0, 0.0, 0.5)).mul(&r.transpose());
        let v = m.most_contracted();
        assert!(line_angle(v, [-s, c]) < 1e-12);
        let u = m.most_expanded_image();
        assert!(line_angle(u, [c, s]) < 1e-12);
    }

    #[test]
    fn polyline_drops_duplicates_and_measures() {
        let p = Polyline::new([[0.0, 0.0], [0.0, 0.0], [3.0, 4.0], [3.0, 5.0]]);
        assert_eq!(p.len(), 3);
        assert_eq!(p.length(), 6.0);
        assert_eq!(p.point_at(5.5), [3.0, 4.5]);
        let (d, s) = p.project([0.0, 6.0]);
        assert!((d - 10f64.sqrt()).abs() < 1e-12 && (s - 6.0).abs() < 1e-12);
    }

    #[test]
    fn grid_hits_corners() {
        let b = PlaneBox::square([0.0, 1.0], 2.0);
        let g = b.grid(3);
        assert_eq!(g[0], [-2.0, -1.0]);
        assert_eq!(g[8], [2.0, 3.0]);
    }
}
