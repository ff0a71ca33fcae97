//! Perspective shape from shading with light attenuation.
//!
//! The camera sits at the origin with a point light source at the optical
//! centre. A surface `S(x) = u(x) (x, -f) / sqrt(|x|^2 + f^2)` is recovered from
//! its image by solving a Hamilton-Jacobi equation for `v = ln u`:
//!
//! ```text
//! H(x, v, grad v) = -exp(-2 v) + I(x) f^2 F(W(x, grad v)) = 0
//! W(x, p) = (f^2 |p|^2 + (p . x)^2) (f^2 + |x|^2) / f^2
//! ```
//!
//! where the profile `F` depends on the reflectance model (Lambertian,
//! Oren-Nayar, Phong, Blinn-Phong).

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiment;
pub mod grid;
pub mod io;
pub mod model;
pub mod probe;
pub mod scene;
pub mod solver;

pub use error::{Error, Result};
pub use grid::{CameraRig, Domain, ScalarField};
pub use model::{ModelKind, ReflectanceModel};
pub use scene::{render, HeightField, RenderedImage};
pub use solver::{solve, BoundaryCondition, SolveReport, SolverConfig};
