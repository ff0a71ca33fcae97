//! Camera rig and node-centred scalar fields.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Axis-aligned image domain `[x_min, x_max] x [y_min, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Domain {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Self {
        Domain {
            x_min,
            x_max,
            y_min,
            y_max,
        }
    }

    /// The square `[-half, half]^2`.
    pub fn centered_square(half: f64) -> Self {
        Domain::new(-half, half, -half, half)
    }

    pub fn contains(&self, x: [f64; 2]) -> bool {
        x[0] >= self.x_min && x[0] <= self.x_max && x[1] >= self.y_min && x[1] <= self.y_max
    }

    /// Largest `|x|^2` over the closed rectangle (attained at a corner).
    pub fn max_norm_sq(&self) -> f64 {
        let ax = self.x_min.abs().max(self.x_max.abs());
        let ay = self.y_min.abs().max(self.y_max.abs());
        ax * ax + ay * ay
    }
}

/// Pinhole camera with the light source at the optical centre, plus the sampling grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    f: f64,
    domain: Domain,
    nx: usize,
    ny: usize,
}

impl CameraRig {
    pub fn new(f: f64, domain: Domain, nx: usize, ny: usize) -> Result<Self> {
        if !(f > 0.0 && f.is_finite()) {
            return Err(Error::InvalidRig(format!("focal length must be positive, got {f}")));
        }
        let finite = [domain.x_min, domain.x_max, domain.y_min, domain.y_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite || domain.x_min >= domain.x_max || domain.y_min >= domain.y_max {
            return Err(Error::InvalidRig(format!("degenerate domain {domain:?}")));
        }
        if nx < 3 || ny < 3 {
            return Err(Error::InvalidRig(format!(
                "need at least 3 nodes per axis, got {nx}x{ny}"
            )));
        }
        Ok(CameraRig { f, domain, nx, ny })
    }

    /// Square grid of `n x n` nodes on `[-half, half]^2`.
    pub fn square(f: f64, half: f64, n: usize) -> Result<Self> {
        CameraRig::new(f, Domain::centered_square(half), n, n)
    }

    pub fn f(&self) -> f64 {
        self.f
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn hx(&self) -> f64 {
        (self.domain.x_max - self.domain.x_min) / (self.nx - 1) as f64
    }

    pub fn hy(&self) -> f64 {
        (self.domain.y_max - self.domain.y_min) / (self.ny - 1) as f64
    }

    /// Coordinates of node `(i, j)`; `i` runs along x.
    #[inline]
    pub fn node(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.domain.x_min + i as f64 * self.hx(),
            self.domain.y_min + j as f64 * self.hy(),
        ]
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn is_boundary(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i == self.nx - 1 || j == self.ny - 1
    }

    /// Graph distance of node `(i, j)` to the nearest boundary side, in cells.
    pub fn boundary_distance(&self, i: usize, j: usize) -> usize {
        i.min(j).min(self.nx - 1 - i).min(self.ny - 1 - j)
    }

    /// Outward unit normal of the boundary side closest to `x`.
    pub fn outward_normal(&self, x: [f64; 2]) -> [f64; 2] {
        let d = self.domain;
        let candidates = [
            (x[0] - d.x_min, [-1.0, 0.0]),
            (d.x_max - x[0], [1.0, 0.0]),
            (x[1] - d.y_min, [0.0, -1.0]),
            (d.y_max - x[1], [0.0, 1.0]),
        ];
        candidates
            .iter()
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|c| c.1)
            .unwrap()
    }

    /// `max_{x in domain} (f^2 + |x|^2)(1 + |x|^2 / f^2)`: the constant with
    /// `f^2 |p|^2 <= W(x, p) <= C |p|^2`.
    pub fn w_upper_constant(&self) -> f64 {
        let r2 = self.domain.max_norm_sq();
        let f2 = self.f * self.f;
        (f2 + r2) * (1.0 + r2 / f2)
    }

    /// `C_W` with `|D_p W(x, p)| <= C_W |p|`.
    pub fn w_grad_p_constant(&self) -> f64 {
        2.0 * self.w_upper_constant()
    }

    /// `C_x` with `|D_x W(x, p)| <= C_x |p|^2`.
    pub fn w_grad_x_constant(&self) -> f64 {
        let r2 = self.domain.max_norm_sq();
        let f2 = self.f * self.f;
        4.0 * r2.sqrt() * (r2 + f2) / f2
    }
}

/// A real function sampled on the nodes of a [`CameraRig`], stored row-major
/// (`index = j * nx + i`).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    nx: usize,
    ny: usize,
    data: Vec<f64>,
}

impl ScalarField {
    pub fn constant(rig: &CameraRig, value: f64) -> Self {
        ScalarField {
            nx: rig.nx(),
            ny: rig.ny(),
            data: vec![value; rig.len()],
        }
    }

    pub fn from_fn(rig: &CameraRig, mut f: impl FnMut([f64; 2]) -> f64) -> Self {
        let mut data = Vec::with_capacity(rig.len());
        for j in 0..rig.ny() {
            for i in 0..rig.nx() {
                data.push(f(rig.node(i, j)));
            }
        }
        ScalarField {
            nx: rig.nx(),
            ny: rig.ny(),
            data,
        }
    }

    pub fn from_vec(nx: usize, ny: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != nx * ny {
            return Err(Error::GridMismatch(format!(
                "{} values for a {nx}x{ny} grid",
                data.len()
            )));
        }
        Ok(ScalarField { nx, ny, data })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.nx + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[j * self.nx + i] = value;
    }

    pub fn matches(&self, rig: &CameraRig) -> bool {
        self.nx == rig.nx() && self.ny == rig.ny()
    }

    pub fn ensure_matches(&self, rig: &CameraRig, what: &str) -> Result<()> {
        if self.matches(rig) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "{what} is {}x{}, rig is {}x{}",
                self.nx,
                self.ny,
                rig.nx(),
                rig.ny()
            )))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField {
            nx: self.nx,
            ny: self.ny,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest absolute difference to another field on the same grid.
    pub fn max_abs_diff(&self, other: &ScalarField) -> f64 {
        assert_eq!((self.nx, self.ny), (other.nx, other.ny));
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Mean absolute difference to another field on the same grid.
    pub fn mean_abs_diff(&self, other: &ScalarField) -> f64 {
        assert_eq!((self.nx, self.ny), (other.nx, other.ny));
        let sum: f64 = self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).sum();
        sum / self.data.len() as f64
    }

    /// Bilinear interpolation at an arbitrary point of the closed domain.
    pub fn sample_bilinear(&self, rig: &CameraRig, x: [f64; 2]) -> f64 {
        let d = rig.domain();
        let s = ((x[0] - d.x_min) / rig.hx()).clamp(0.0, (self.nx - 1) as f64);
        let t = ((x[1] - d.y_min) / rig.hy()).clamp(0.0, (self.ny - 1) as f64);
        let i = (s.floor() as usize).min(self.nx - 2);
        let j = (t.floor() as usize).min(self.ny - 2);
        let a = s - i as f64;
        let b = t - j as f64;
        let v00 = self.at(i, j);
        let v10 = self.at(i + 1, j);
        let v01 = self.at(i, j + 1);
        let v11 = self.at(i + 1, j + 1);
        (1.0 - b) * ((1.0 - a) * v00 + a * v10) + b * ((1.0 - a) * v01 + a * v11)
    }

    /// Euclidean Lipschitz constant of the bilinear interpolant.
    pub fn lipschitz_bilinear(&self, rig: &CameraRig) -> f64 {
        let mut lx: f64 = 0.0;
        let mut ly: f64 = 0.0;
        for j in 0..self.ny {
            for i in 0..self.nx {
                if i + 1 < self.nx {
                    lx = lx.max((self.at(i + 1, j) - self.at(i, j)).abs());
                }
                if j + 1 < self.ny {
                    ly = ly.max((self.at(i, j + 1) - self.at(i, j)).abs());
                }
            }
        }
        ((lx / rig.hx()).powi(2) + (ly / rig.hy()).powi(2)).sqrt()
    }
}
