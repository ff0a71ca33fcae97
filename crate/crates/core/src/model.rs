//! Reflectance models written as stationary Hamilton-Jacobi equations in the
//! log-height `v = ln u`:
//!
//! ```text
//! H(x, v, p) = -exp(-2 v) + I_eff(x) f^2 F(W(x, p))
//! W(x, p)    = (f^2 |p|^2 + (p . x)^2) / Q(x)^2,   Q(x) = f / sqrt(f^2 + |x|^2)
//! ```
//!
//! Every model differs only in the scalar profile `F` and in the effective
//! intensity (`I` for Lambertian/Oren-Nayar, `I - k_A I_A` for Phong/Blinn-Phong).

use crate::error::{Error, Result};
use crate::grid::CameraRig;
use serde::{Deserialize, Serialize};

#[inline]
pub(crate) fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub(crate) fn norm_sq(a: [f64; 2]) -> f64 {
    dot(a, a)
}

/// `Q(x) = f / sqrt(f^2 + |x|^2)`, always in `(0, 1]`.
#[inline]
pub fn q_factor(x: [f64; 2], f: f64) -> f64 {
    f / (f * f + norm_sq(x)).sqrt()
}

/// `W(x, p) = (f^2 |p|^2 + (p . x)^2) / Q(x)^2`.
#[inline]
pub fn w_term(x: [f64; 2], p: [f64; 2], f: f64) -> f64 {
    let f2 = f * f;
    let px = dot(p, x);
    (f2 * norm_sq(p) + px * px) * (f2 + norm_sq(x)) / f2
}

/// Gradient of `W` with respect to the image point `x`.
pub fn w_grad_x(x: [f64; 2], p: [f64; 2], f: f64) -> [f64; 2] {
    let f2 = f * f;
    let px = dot(p, x);
    let a = 2.0 * px * (norm_sq(x) + f2) / f2;
    let b = (px * px + f2 * norm_sq(p)) * 2.0 / f2;
    [a * p[0] + b * x[0], a * p[1] + b * x[1]]
}

/// Gradient of `W` with respect to `p`.
#[inline]
pub fn w_grad_p(x: [f64; 2], p: [f64; 2], f: f64) -> [f64; 2] {
    let f2 = f * f;
    let s = f2 + norm_sq(x);
    let b = 2.0 * s / f2 * dot(x, p);
    [2.0 * s * p[0] + b * x[0], 2.0 * s * p[1] + b * x[1]]
}

/// Largest accepted roughness: a quarter turn given to four decimals.
#[allow(clippy::approx_constant)]
pub const MAX_ROUGHNESS: f64 = 1.5708;

/// Oren-Nayar coefficients `(A, B)` for roughness `sigma` in `[0, pi/2]`.
/// The upper end is accepted up to four-decimal rounding.
pub fn on_coefficients(sigma: f64) -> Result<(f64, f64)> {
    if !(0.0..=MAX_ROUGHNESS).contains(&sigma) {
        return Err(Error::InvalidModel(format!(
            "Oren-Nayar roughness must lie in [0, pi/2], got {sigma}"
        )));
    }
    let s2 = sigma * sigma;
    let a = 1.0 - 0.5 * s2 / (s2 + 0.33);
    let b = 0.45 * s2 / (s2 + 0.09);
    Ok((a, b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "L")]
    Lambertian,
    #[serde(rename = "ON")]
    OrenNayar,
    #[serde(rename = "PH")]
    Phong,
    #[serde(rename = "BP")]
    BlinnPhong,
}

impl ModelKind {
    pub fn tag(self) -> &'static str {
        match self {
            ModelKind::Lambertian => "L",
            ModelKind::OrenNayar => "ON",
            ModelKind::Phong => "PH",
            ModelKind::BlinnPhong => "BP",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag.trim().to_ascii_uppercase().as_str() {
            "L" | "LAMBERTIAN" => Ok(ModelKind::Lambertian),
            "ON" | "OREN-NAYAR" | "OREN_NAYAR" => Ok(ModelKind::OrenNayar),
            "PH" | "PHONG" => Ok(ModelKind::Phong),
            "BP" | "BLINN-PHONG" | "BLINN_PHONG" => Ok(ModelKind::BlinnPhong),
            other => Err(Error::InvalidModel(format!("unknown model kind `{other}`"))),
        }
    }
}

/// Validated Oren-Nayar parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrenNayar {
    sigma: f64,
    a: f64,
    b: f64,
}

impl OrenNayar {
    pub fn new(sigma: f64) -> Result<Self> {
        let (a, b) = on_coefficients(sigma)?;
        Ok(OrenNayar { sigma, a, b })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    /// `F_ON` is strictly increasing only when `A/2 > B`.
    pub fn is_monotone(&self) -> bool {
        self.a / 2.0 > self.b
    }
}

/// Ambient / diffuse / specular weights, nonnegative and summing to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentWeights {
    k_a: f64,
    k_d: f64,
    k_s: f64,
}

impl ComponentWeights {
    pub fn new(k_a: f64, k_d: f64, k_s: f64) -> Result<Self> {
        if !(k_a >= 0.0 && k_d >= 0.0 && k_s >= 0.0) {
            return Err(Error::InvalidModel(format!(
                "component weights must be nonnegative, got ({k_a}, {k_d}, {k_s})"
            )));
        }
        if (k_a + k_d + k_s - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidModel(format!(
                "component weights must sum to 1, got {}",
                k_a + k_d + k_s
            )));
        }
        if k_d <= 0.0 {
            return Err(Error::InvalidModel("diffuse weight k_D must be positive".into()));
        }
        Ok(ComponentWeights { k_a, k_d, k_s })
    }

    pub fn k_a(&self) -> f64 {
        self.k_a
    }

    pub fn k_d(&self) -> f64 {
        self.k_d
    }

    pub fn k_s(&self) -> f64 {
        self.k_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ReflectanceModel {
    Lambertian,
    OrenNayar(OrenNayar),
    Phong {
        weights: ComponentWeights,
        alpha: u32,
    },
    BlinnPhong {
        weights: ComponentWeights,
        c: f64,
    },
}

impl ReflectanceModel {
    pub fn lambertian() -> Self {
        ReflectanceModel::Lambertian
    }

    pub fn oren_nayar(sigma: f64) -> Result<Self> {
        Ok(ReflectanceModel::OrenNayar(OrenNayar::new(sigma)?))
    }

    /// Phong model; the specular exponent must be an integer `>= 1`.
    pub fn phong(k_a: f64, k_d: f64, k_s: f64, alpha: u32) -> Result<Self> {
        if alpha < 1 {
            return Err(Error::InvalidModel("Phong exponent must be >= 1".into()));
        }
        Ok(ReflectanceModel::Phong {
            weights: ComponentWeights::new(k_a, k_d, k_s)?,
            alpha,
        })
    }

    pub fn blinn_phong(k_a: f64, k_d: f64, k_s: f64, c: f64) -> Result<Self> {
        if !(c >= 1.0 && c.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "Blinn-Phong exponent must be >= 1, got {c}"
            )));
        }
        Ok(ReflectanceModel::BlinnPhong {
            weights: ComponentWeights::new(k_a, k_d, k_s)?,
            c,
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ReflectanceModel::Lambertian => ModelKind::Lambertian,
            ReflectanceModel::OrenNayar(_) => ModelKind::OrenNayar,
            ReflectanceModel::Phong { .. } => ModelKind::Phong,
            ReflectanceModel::BlinnPhong { .. } => ModelKind::BlinnPhong,
        }
    }

    pub fn weights(&self) -> Option<ComponentWeights> {
        match self {
            ReflectanceModel::Phong { weights, .. } | ReflectanceModel::BlinnPhong { weights, .. } => {
                Some(*weights)
            }
            _ => None,
        }
    }

    /// `k_A` for Phong/Blinn-Phong, zero otherwise.
    pub fn ambient_weight(&self) -> f64 {
        self.weights().map_or(0.0, |w| w.k_a())
    }

    /// `k_D + k_S` for Phong/Blinn-Phong, one otherwise.
    pub fn reflective_weight(&self) -> f64 {
        self.weights().map_or(1.0, |w| w.k_d() + w.k_s())
    }

    /// False only for Oren-Nayar with `A/2 <= B`.
    pub fn is_monotone(&self) -> bool {
        match self {
            ReflectanceModel::OrenNayar(on) => on.is_monotone(),
            _ => true,
        }
    }

    /// True when `F` grows without bound (every model except Oren-Nayar with `B > 0`).
    pub fn is_coercive(&self) -> bool {
        match self {
            ReflectanceModel::OrenNayar(on) => on.b() == 0.0,
            _ => true,
        }
    }

    /// The effective intensity entering the Hamiltonian.
    #[inline]
    pub fn effective_intensity(&self, intensity: f64, ambient: f64) -> f64 {
        match self {
            ReflectanceModel::Phong { weights, .. } | ReflectanceModel::BlinnPhong { weights, .. } => {
                intensity - weights.k_a() * ambient
            }
            _ => intensity,
        }
    }

    /// The profile `F_M(r)` for `r >= 0`.
    #[inline]
    pub fn f_value(&self, r: f64) -> f64 {
        let s = (r + 1.0).sqrt();
        match *self {
            ReflectanceModel::Lambertian => s,
            ReflectanceModel::OrenNayar(on) => (r + 1.0) / (on.a * s + on.b * r),
            ReflectanceModel::Phong { weights, alpha } => {
                if r >= 1.0 {
                    s / weights.k_d
                } else {
                    // Specular cosine (1 - r)/(1 + r) is nonnegative on this branch.
                    let g = ((1.0 - r) / (1.0 + r)).powi(alpha as i32);
                    s / (weights.k_d + weights.k_s * s * g)
                }
            }
            ReflectanceModel::BlinnPhong { weights, c } => {
                let q = weights.k_s * (r + 1.0).powf(-(c - 1.0) / 2.0);
                s / (weights.k_d + q)
            }
        }
    }

    /// Analytic derivative `F'_M(r)`. For a non-monotone Oren-Nayar model this
    /// may be nonpositive; callers consult [`ReflectanceModel::is_monotone`].
    #[inline]
    pub fn f_derivative(&self, r: f64) -> f64 {
        let s = (r + 1.0).sqrt();
        match *self {
            ReflectanceModel::Lambertian => 0.5 / s,
            ReflectanceModel::OrenNayar(on) => {
                let d = on.a * s + on.b * r;
                (on.a * s - 2.0 * on.b) / (2.0 * d * d)
            }
            ReflectanceModel::Phong { weights, alpha } => {
                if r >= 1.0 {
                    0.5 / (weights.k_d * s)
                } else {
                    let a = alpha as i32;
                    let (kd, ks) = (weights.k_d, weights.k_s);
                    let rp = r + 1.0;
                    let rm = 1.0 - r;
                    let num = 0.5 * kd * rp.powi(2 * a) / s
                        + 2.0 * alpha as f64 * ks * rp.powi(a) * rm.powi(a - 1);
                    let den = kd * rp.powi(a) + ks * s * rm.powi(a);
                    num / (den * den)
                }
            }
            ReflectanceModel::BlinnPhong { weights, c } => {
                let q = weights.k_s * (r + 1.0).powf(-(c - 1.0) / 2.0);
                let d = weights.k_d + q;
                (weights.k_d + c * q) / (2.0 * s * d * d)
            }
        }
    }

    /// A constant `C_F` with `|F'(r)| sqrt(r + 1) <= C_F` for all `r >= 0`.
    pub fn derivative_bound(&self) -> f64 {
        match *self {
            ReflectanceModel::Lambertian => 0.5,
            ReflectanceModel::OrenNayar(on) => (0.5 / on.a).max(on.b / (on.a * on.a)),
            ReflectanceModel::Phong { weights, alpha } => {
                0.5 / weights.k_d + 2.0 * alpha as f64 * weights.k_s / (weights.k_d * weights.k_d)
            }
            ReflectanceModel::BlinnPhong { weights, c } => c / (2.0 * weights.k_d),
        }
    }

    /// Largest `r >= 0` with `F(r) <= target`, found by bracketing and bisection.
    ///
    /// Returns `None` when the sublevel set is unbounded (bounded Oren-Nayar
    /// profile, or a non-monotone one) and `Some(0.0)` when `target < F(0)`.
    pub fn f_inverse(&self, target: f64) -> Option<f64> {
        if !self.is_monotone() {
            return None;
        }
        if let ReflectanceModel::OrenNayar(on) = self {
            if on.b > 0.0 && target >= 1.0 / on.b {
                return None;
            }
        }
        if target < self.f_value(0.0) {
            return Some(0.0);
        }
        let mut hi = 1.0;
        while self.f_value(hi) <= target {
            hi *= 2.0;
            if hi > 1e300 {
                return None;
            }
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.f_value(mid) <= target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(lo)
    }
}

/// A point of the Hamiltonian's argument space: image point, value of `v`, gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HamiltonianSample {
    pub x: [f64; 2],
    pub r: f64,
    pub p: [f64; 2],
}

impl HamiltonianSample {
    pub fn new(rig: &CameraRig, x: [f64; 2], r: f64, p: [f64; 2]) -> Result<Self> {
        if !rig.domain().contains(x) {
            return Err(Error::OutsideDomain(x));
        }
        Ok(HamiltonianSample { x, r, p })
    }
}

/// Hamiltonian with a precomputed effective intensity; no validation.
#[inline]
pub fn hamiltonian_eff(
    model: &ReflectanceModel,
    f: f64,
    x: [f64; 2],
    r: f64,
    p: [f64; 2],
    eff_intensity: f64,
) -> f64 {
    -(-2.0 * r).exp() + eff_intensity * f * f * model.f_value(w_term(x, p, f))
}

/// `D_p H` with a precomputed effective intensity; no validation.
#[inline]
pub fn hamiltonian_grad_p_eff(
    model: &ReflectanceModel,
    f: f64,
    x: [f64; 2],
    p: [f64; 2],
    eff_intensity: f64,
) -> [f64; 2] {
    let scale = eff_intensity * f * f * model.f_derivative(w_term(x, p, f));
    let g = w_grad_p(x, p, f);
    [scale * g[0], scale * g[1]]
}

fn checked_intensity(
    model: &ReflectanceModel,
    x: [f64; 2],
    intensity: f64,
    ambient: f64,
) -> Result<f64> {
    let eff = model.effective_intensity(intensity, ambient);
    if eff > 0.0 {
        Ok(eff)
    } else {
        Err(Error::NonpositiveIntensity { value: eff, x })
    }
}

/// `H(x, r, p) = -exp(-2 r) + I_eff f^2 F(W(x, p))`.
pub fn hamiltonian(
    model: &ReflectanceModel,
    rig: &CameraRig,
    sample: &HamiltonianSample,
    intensity: f64,
    ambient: f64,
) -> Result<f64> {
    let eff = checked_intensity(model, sample.x, intensity, ambient)?;
    Ok(hamiltonian_eff(model, rig.f(), sample.x, sample.r, sample.p, eff))
}

/// `D_p H = I_eff f^2 F'(W) D_p W`.
pub fn hamiltonian_grad_p(
    model: &ReflectanceModel,
    rig: &CameraRig,
    sample: &HamiltonianSample,
    intensity: f64,
    ambient: f64,
) -> Result<[f64; 2]> {
    let eff = checked_intensity(model, sample.x, intensity, ambient)?;
    Ok(hamiltonian_grad_p_eff(model, rig.f(), sample.x, sample.p, eff))
}

/// Uniform bound `L_p = |I_eff|_inf f C_F C_W` on `|D_p H|` over the rig's domain.
pub fn grad_p_bound(model: &ReflectanceModel, rig: &CameraRig, max_eff_intensity: f64) -> f64 {
    max_eff_intensity * rig.f() * model.derivative_bound() * rig.w_grad_p_constant()
}
