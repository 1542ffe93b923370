//! Evaluation, differentiation and iteration of unimodal and Henon-like maps.

pub mod geometry;
pub mod map;
pub mod orbit;

pub use geometry::{dist, line_angle, norm, normalize, Mat2, PlaneBox, Point, Polyline};
pub use map::{embed_1d, HenonLikeMap, QuadraticMap, Straightener, Transform};
pub use orbit::{iterate_orbit, LogSvals, OrbitCocycle};
