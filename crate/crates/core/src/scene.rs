//! Perspective geometry, forward rendering of the attenuated brightness
//! equations, and analytic test surfaces.
//!
//! The light sits at the optical centre, so the incidence and viewing angles
//! coincide and `cos(theta) = u Q / |n|`. All models apply the inverse-square
//! attenuation `1 / (f u)^2`.

use crate::error::{Error, Result};
use crate::grid::{CameraRig, ScalarField};
use crate::model::{dot, norm_sq, q_factor, ReflectanceModel};
use rayon::prelude::*;

/// Point of the scene surface seen through image point `x` at height `u`.
/// Its distance to the optical centre is `f u`.
pub fn surface_point(x: [f64; 2], u: f64, f: f64) -> [f64; 3] {
    let s = f * u / (norm_sq(x) + f * f).sqrt();
    [s * x[0], s * x[1], -s * f]
}

/// Unnormalized normal `n` and its length. `S_x1 x S_x2 = (f^2 u / (|x|^2 + f^2)) n`,
/// so both share the unit normal.
pub fn surface_normal(x: [f64; 2], u: f64, grad_u: [f64; 2], f: f64) -> ([f64; 3], f64) {
    let r2 = norm_sq(x);
    let k = f * u / (r2 + f * f);
    let gx = dot(grad_u, x);
    let n = [
        f * grad_u[0] - k * x[0],
        f * grad_u[1] - k * x[1],
        gx + k * f,
    ];
    let mag = (f * f * norm_sq(grad_u) + gx * gx + u * u * f * f / (f * f + r2)).sqrt();
    (n, mag)
}

/// Unit vector from the surface point towards the light at the optical centre.
pub fn light_direction(x: [f64; 2], f: f64) -> [f64; 3] {
    let d = (norm_sq(x) + f * f).sqrt();
    [-x[0] / d, -x[1] / d, f / d]
}

/// `cos(theta_i) = N . omega = u Q / |n|`.
#[inline]
pub fn incidence_cosine(x: [f64; 2], u: f64, grad_u: [f64; 2], f: f64) -> f64 {
    let (_, mag) = surface_normal(x, u, grad_u, f);
    // Exactly one for flat patches, but rounding can overshoot.
    (u * q_factor(x, f) / mag).min(1.0)
}

/// A strictly positive height field `u` on the rig, optionally with its exact gradient.
#[derive(Debug, Clone)]
pub struct HeightField {
    rig: CameraRig,
    u: ScalarField,
    grad: Option<[ScalarField; 2]>,
}

impl HeightField {
    pub fn new(rig: CameraRig, u: ScalarField) -> Result<Self> {
        u.ensure_matches(&rig, "height field")?;
        for j in 0..rig.ny() {
            for i in 0..rig.nx() {
                let v = u.at(i, j);
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::InvalidSurface(format!(
                        "height must be positive and finite, got {v} at node ({i}, {j})"
                    )));
                }
            }
        }
        Ok(HeightField { rig, u, grad: None })
    }

    pub fn with_gradient(rig: CameraRig, u: ScalarField, gx: ScalarField, gy: ScalarField) -> Result<Self> {
        gx.ensure_matches(&rig, "x-gradient")?;
        gy.ensure_matches(&rig, "y-gradient")?;
        let mut hf = HeightField::new(rig, u)?;
        hf.grad = Some([gx, gy]);
        Ok(hf)
    }

    pub fn rig(&self) -> &CameraRig {
        &self.rig
    }

    pub fn heights(&self) -> &ScalarField {
        &self.u
    }

    pub fn has_analytic_gradient(&self) -> bool {
        self.grad.is_some()
    }

    /// Gradient at node `(i, j)`: exact if available, finite differences otherwise.
    pub fn gradient_at(&self, i: usize, j: usize) -> [f64; 2] {
        match &self.grad {
            Some([gx, gy]) => [gx.at(i, j), gy.at(i, j)],
            None => discrete_gradient(&self.rig, &self.u, i, j),
        }
    }

    /// `v = ln u`.
    pub fn log_heights(&self) -> ScalarField {
        self.u.map(f64::ln)
    }
}

/// Second-order finite-difference gradient: central inside, one-sided at the boundary.
pub fn discrete_gradient(rig: &CameraRig, u: &ScalarField, i: usize, j: usize) -> [f64; 2] {
    let dx = diff_axis(rig.nx(), i, rig.hx(), |k| u.at(k, j));
    let dy = diff_axis(rig.ny(), j, rig.hy(), |k| u.at(i, k));
    [dx, dy]
}

fn diff_axis(n: usize, k: usize, h: f64, at: impl Fn(usize) -> f64) -> f64 {
    if k == 0 {
        (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h)
    } else if k == n - 1 {
        (3.0 * at(n - 1) - 4.0 * at(n - 2) + at(n - 3)) / (2.0 * h)
    } else {
        (at(k + 1) - at(k - 1)) / (2.0 * h)
    }
}

/// A rendered intensity image.
///
/// `intensity` holds the stored values; physical intensity is
/// `intensity * normalization` (`normalization == 1` for unnormalized renders).
#[derive(Debug, Clone)]
pub struct RenderedImage {
    pub rig: CameraRig,
    pub intensity: ScalarField,
    pub model: ReflectanceModel,
    pub ambient: Option<ScalarField>,
    pub normalization: f64,
}

impl RenderedImage {
    pub fn physical(&self) -> ScalarField {
        if self.normalization == 1.0 {
            self.intensity.clone()
        } else {
            self.intensity.map(|v| v * self.normalization)
        }
    }

    /// Rescale stored values to a maximum of one, recording the factor.
    pub fn normalized(&self) -> RenderedImage {
        let physical = self.physical();
        let scale = physical.max();
        RenderedImage {
            rig: self.rig,
            intensity: physical.map(|v| v / scale),
            model: self.model,
            ambient: self.ambient.clone(),
            normalization: scale,
        }
    }

    pub fn ambient_at(&self, i: usize, j: usize) -> f64 {
        self.ambient.as_ref().map_or(0.0, |a| a.at(i, j))
    }

    /// Physical `I - k_A I_A` for the given model (which need not be the render model).
    pub fn effective_intensity(&self, model: &ReflectanceModel) -> ScalarField {
        let phys = self.physical();
        let mut out = phys.clone();
        for j in 0..self.rig.ny() {
            for i in 0..self.rig.nx() {
                out.set(i, j, model.effective_intensity(phys.at(i, j), self.ambient_at(i, j)));
            }
        }
        out
    }
}

/// Brightness of one surface point under `model`, before the ambient term.
#[inline]
fn reflected(model: &ReflectanceModel, cos: f64) -> f64 {
    match *model {
        ReflectanceModel::Lambertian => cos,
        ReflectanceModel::OrenNayar(on) => on.a() * cos + on.b() * (1.0 - cos * cos),
        ReflectanceModel::Phong { weights, alpha } => {
            let spec = (2.0 * cos * cos - 1.0).max(0.0);
            weights.k_d() * cos + weights.k_s() * spec.powi(alpha as i32)
        }
        ReflectanceModel::BlinnPhong { weights, c } => {
            weights.k_d() * cos + weights.k_s() * cos.powf(c)
        }
    }
}

/// Forward-render `heights` under `model`. `ambient` (`I_A`) defaults to zero.
pub fn render(
    model: &ReflectanceModel,
    heights: &HeightField,
    ambient: Option<&ScalarField>,
) -> Result<RenderedImage> {
    let rig = *heights.rig();
    if let Some(a) = ambient {
        a.ensure_matches(&rig, "ambient field")?;
    }
    let f = rig.f();
    let k_a = model.ambient_weight();
    let mut data = vec![0.0; rig.len()];
    data.par_chunks_mut(rig.nx())
        .enumerate()
        .for_each(|(j, row)| {
            for (i, out) in row.iter_mut().enumerate() {
                let x = rig.node(i, j);
                let u = heights.heights().at(i, j);
                let cos = incidence_cosine(x, u, heights.gradient_at(i, j), f);
                let amb = ambient.map_or(0.0, |a| a.at(i, j));
                *out = k_a * amb + reflected(model, cos) / (f * f * u * u);
            }
        });
    let intensity = ScalarField::from_vec(rig.nx(), rig.ny(), data)?;
    for j in 0..rig.ny() {
        for i in 0..rig.nx() {
            let amb = ambient.map_or(0.0, |a| a.at(i, j));
            let eff = model.effective_intensity(intensity.at(i, j), amb);
            if !(eff > 0.0) {
                return Err(Error::NonpositiveIntensity {
                    value: eff,
                    x: rig.node(i, j),
                });
            }
        }
    }
    Ok(RenderedImage {
        rig,
        intensity,
        model: *model,
        ambient: ambient.cloned(),
        normalization: 1.0,
    })
}

/// Parameters of the analytic test surfaces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceParams {
    pub u0: f64,
    pub amplitude: f64,
    pub width: f64,
}

impl Default for SurfaceParams {
    fn default() -> Self {
        SurfaceParams {
            u0: 1.0,
            amplitude: 0.2,
            width: 0.3,
        }
    }
}

/// Closed-form height fields with exact gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnalyticSurface {
    /// `u = u0`
    Plane { u0: f64 },
    /// `u = u0 + a exp(-|x|^2 / w^2)`
    Dome { u0: f64, a: f64, w: f64 },
    /// `u = u0 - a exp(-|x|^2 / w^2)`
    Basin { u0: f64, a: f64, w: f64 },
    /// `u = u0 + a cos(pi x1 / w)`
    Ridge { u0: f64, a: f64, w: f64 },
}

impl AnalyticSurface {
    pub fn from_name(name: &str, params: SurfaceParams) -> Result<Self> {
        let SurfaceParams {
            u0,
            amplitude: a,
            width: w,
        } = params;
        let surface = match name.trim().to_ascii_lowercase().as_str() {
            "plane" => AnalyticSurface::Plane { u0 },
            "dome" => AnalyticSurface::Dome { u0, a, w },
            "basin" => AnalyticSurface::Basin { u0, a, w },
            "ridge" => AnalyticSurface::Ridge { u0, a, w },
            other => {
                return Err(Error::InvalidSurface(format!(
                    "unknown analytic surface `{other}` (expected plane, basin, dome or ridge)"
                )))
            }
        };
        surface.validate()?;
        Ok(surface)
    }

    fn validate(&self) -> Result<()> {
        let (lowest, w) = match *self {
            AnalyticSurface::Plane { u0 } => (u0, 1.0),
            AnalyticSurface::Dome { u0, a, w } => (u0 + a.min(0.0), w),
            AnalyticSurface::Basin { u0, a, w } => (u0 - a.max(0.0), w),
            AnalyticSurface::Ridge { u0, a, w } => (u0 - a.abs(), w),
        };
        if !(lowest > 0.0 && lowest.is_finite()) {
            return Err(Error::InvalidSurface(format!(
                "{self:?} is not strictly positive (minimum {lowest})"
            )));
        }
        if !(w > 0.0 && w.is_finite()) {
            return Err(Error::InvalidSurface(format!("width must be positive, got {w}")));
        }
        Ok(())
    }

    pub fn height(&self, x: [f64; 2]) -> f64 {
        match *self {
            AnalyticSurface::Plane { u0 } => u0,
            AnalyticSurface::Dome { u0, a, w } => u0 + a * (-norm_sq(x) / (w * w)).exp(),
            AnalyticSurface::Basin { u0, a, w } => u0 - a * (-norm_sq(x) / (w * w)).exp(),
            AnalyticSurface::Ridge { u0, a, w } => {
                u0 + a * (std::f64::consts::PI * x[0] / w).cos()
            }
        }
    }

    pub fn gradient(&self, x: [f64; 2]) -> [f64; 2] {
        match *self {
            AnalyticSurface::Plane { .. } => [0.0, 0.0],
            AnalyticSurface::Dome { a, w, .. } | AnalyticSurface::Basin { a, w, .. } => {
                let sign = if matches!(self, AnalyticSurface::Dome { .. }) { 1.0 } else { -1.0 };
                let k = -2.0 * sign * a / (w * w) * (-norm_sq(x) / (w * w)).exp();
                [k * x[0], k * x[1]]
            }
            AnalyticSurface::Ridge { a, w, .. } => {
                let k = std::f64::consts::PI / w;
                [-a * k * (k * x[0]).sin(), 0.0]
            }
        }
    }

    pub fn height_field(&self, rig: &CameraRig) -> Result<HeightField> {
        let u = ScalarField::from_fn(rig, |x| self.height(x));
        let gx = ScalarField::from_fn(rig, |x| self.gradient(x)[0]);
        let gy = ScalarField::from_fn(rig, |x| self.gradient(x)[1]);
        HeightField::with_gradient(*rig, u, gx, gy)
    }
}

/// Sample one of the named analytic surfaces (`plane`, `basin`, `dome`, `ridge`) on `rig`.
pub fn analytic_surface(name: &str, rig: &CameraRig, params: SurfaceParams) -> Result<HeightField> {
    AnalyticSurface::from_name(name, params)?.height_field(rig)
}
