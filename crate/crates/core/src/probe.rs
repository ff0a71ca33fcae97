//! Randomized checks of the structural properties the solver relies on.
//!
//! Every check draws from its own ChaCha8 stream derived from the report seed,
//! so a report can be reproduced check by check.

use crate::error::{Error, Result};
use crate::grid::{CameraRig, ScalarField};
use crate::model::{
    hamiltonian_eff, hamiltonian_grad_p_eff, norm_sq, w_grad_p, w_grad_x, w_term, ModelKind,
    ReflectanceModel,
};
use crate::scene::RenderedImage;
use crate::solver::state_constraint_constant;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Finite-difference derivatives, used as an independent oracle for the
/// analytic gradients.
pub mod fd_oracle {
    fn central(f: &impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    /// Central difference with one Richardson step (fourth order).
    pub fn derivative(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (4.0 * central(&f, x, 0.5 * h) - central(&f, x, h)) / 3.0
    }

    pub fn gradient(f: impl Fn([f64; 2]) -> f64, x: [f64; 2], h: f64) -> [f64; 2] {
        [
            derivative(|t| f([t, x[1]]), x[0], h),
            derivative(|t| f([x[0], t]), x[1], h),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Pass,
    Fail,
    /// The property is known not to hold for this model and a witness was found.
    ExpectedFail,
    Skipped,
}

/// A concrete sample at which a check's inequality fails.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub x: [f64; 2],
    pub r: f64,
    pub p: [f64; 2],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normal: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Observed value of the checked quantity.
    pub value: f64,
    /// The bound it was compared with.
    pub bound: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub outcome: Outcome,
    pub samples: usize,
    pub violations: usize,
    /// Largest `value / bound` ratio, or most negative margin for one-sided checks.
    pub worst: f64,
    pub detail: String,
    pub witness: Option<Witness>,
}

impl CheckReport {
    fn finish(name: &str, samples: usize, violations: usize, worst: f64, witness: Option<Witness>, detail: String) -> Self {
        CheckReport {
            name: name.to_string(),
            outcome: if violations == 0 { Outcome::Pass } else { Outcome::Fail },
            samples,
            violations,
            worst,
            detail,
            witness,
        }
    }

    fn skipped(name: &str, detail: &str) -> Self {
        CheckReport {
            name: name.to_string(),
            outcome: Outcome::Skipped,
            samples: 0,
            violations: 0,
            worst: 0.0,
            detail: detail.to_string(),
            witness: None,
        }
    }

    /// Turn a found violation into an expected failure, and a clean run into a failure.
    fn expect_failure(mut self, why: &str) -> Self {
        self.outcome = match self.outcome {
            Outcome::Fail => Outcome::ExpectedFail,
            Outcome::Pass => Outcome::Fail,
            o => o,
        };
        self.detail = format!("{}; {why}", self.detail);
        self
    }

    pub fn ok(&self) -> bool {
        self.outcome != Outcome::Fail
    }
}

/// Constants of the uniform bounds, evaluated for a model, rig and image.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BoundConstants {
    /// `W <= C |p|^2`.
    pub c_w_upper: f64,
    /// `|D_p W| <= C_W |p|`.
    pub c_w_grad_p: f64,
    /// `|D_x W| <= C_x |p|^2`.
    pub c_w_grad_x: f64,
    /// `|F'(r)| sqrt(r + 1) <= C_F`.
    pub c_f: f64,
    /// `|D_p H| <= L_p`.
    pub l_p: f64,
    /// `|H(x) - H(y)| <= C_2 |x - y| (1 + |p|)`.
    pub c_2: f64,
    pub intensity_max: f64,
    pub intensity_min: f64,
    pub intensity_lipschitz: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeReport {
    pub seed: u64,
    pub model: ModelKind,
    pub r_bound: f64,
    pub samples: usize,
    pub constants: BoundConstants,
    pub checks: Vec<CheckReport>,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct ProbeConfig {
    pub seed: u64,
    /// Samples per check; the bound check uses ten times as many.
    pub samples: usize,
    /// Range `[-R, R]` of the sampled `v` values.
    pub r_bound: f64,
    pub band_width: usize,
    /// Required floor of the effective intensity on the boundary band.
    pub intensity_floor: f64,
    /// Intensity lower bound for the supersolution check; the image minimum when `None`.
    pub delta: Option<f64>,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            seed: 0,
            samples: 10_000,
            r_bound: 2.0,
            band_width: 3,
            intensity_floor: 1e-6,
            delta: None,
        }
    }
}

/// Model, rig and effective intensity field shared by the checks.
#[derive(Debug, Clone)]
pub struct ProbeContext {
    pub model: ReflectanceModel,
    pub rig: CameraRig,
    pub intensity: ScalarField,
    pub constants: BoundConstants,
    pub band_width: usize,
}

impl ProbeContext {
    pub fn new(model: &ReflectanceModel, image: &RenderedImage, band_width: usize) -> Result<Self> {
        let rig = image.rig;
        let intensity = image.effective_intensity(model);
        if intensity.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("effective intensity is not finite".into()));
        }
        let f = rig.f();
        let c_w_upper = rig.w_upper_constant();
        let c_w_grad_p = rig.w_grad_p_constant();
        let c_w_grad_x = rig.w_grad_x_constant();
        let c_f = model.derivative_bound();
        let intensity_max = intensity.max_abs();
        let intensity_lipschitz = intensity.lipschitz_bilinear(&rig);
        let growth = model.f_value(0.0).max(2.0 * c_f * c_w_upper.sqrt());
        let constants = BoundConstants {
            c_w_upper,
            c_w_grad_p,
            c_w_grad_x,
            c_f,
            l_p: intensity_max * f * c_f * c_w_grad_p,
            c_2: f * f * intensity_lipschitz * growth + f * intensity_max * c_f * c_w_grad_x,
            intensity_max,
            intensity_min: intensity.min(),
            intensity_lipschitz,
        };
        Ok(ProbeContext {
            model: *model,
            rig,
            intensity,
            constants,
            band_width,
        })
    }

    fn h(&self, x: [f64; 2], r: f64, p: [f64; 2]) -> f64 {
        let eff = self.intensity.sample_bilinear(&self.rig, x);
        hamiltonian_eff(&self.model, self.rig.f(), x, r, p, eff)
    }

    fn sample_x(&self, rng: &mut ChaCha8Rng) -> [f64; 2] {
        let d = self.rig.domain();
        [rng.gen_range(d.x_min..=d.x_max), rng.gen_range(d.y_min..=d.y_max)]
    }

    /// A point within `band_width` cells of the boundary.
    fn sample_band(&self, rng: &mut ChaCha8Rng) -> [f64; 2] {
        let d = self.rig.domain();
        let wx = self.band_width as f64 * self.rig.hx();
        let wy = self.band_width as f64 * self.rig.hy();
        let mut x = self.sample_x(rng);
        match rng.gen_range(0..4) {
            0 => x[0] = d.x_min + rng.gen_range(0.0..=wx),
            1 => x[0] = d.x_max - rng.gen_range(0.0..=wx),
            2 => x[1] = d.y_min + rng.gen_range(0.0..=wy),
            _ => x[1] = d.y_max - rng.gen_range(0.0..=wy),
        }
        x
    }
}

fn unit(rng: &mut ChaCha8Rng) -> [f64; 2] {
    let t = rng.gen_range(0.0..2.0 * PI);
    [t.cos(), t.sin()]
}

/// Uniform on the ball of radius `radius`.
fn sample_ball(rng: &mut ChaCha8Rng, radius: f64) -> [f64; 2] {
    let r = radius * rng.gen::<f64>().sqrt();
    let e = unit(rng);
    [r * e[0], r * e[1]]
}

/// Half uniform on the ball of radius 10, half with log-uniform radius in `[1, 1e4]`.
fn sample_gradient(rng: &mut ChaCha8Rng) -> [f64; 2] {
    if rng.gen_bool(0.5) {
        sample_ball(rng, 10.0)
    } else {
        let r = 10f64.powf(rng.gen_range(0.0..=4.0));
        let e = unit(rng);
        [r * e[0], r * e[1]]
    }
}

fn norm(a: [f64; 2]) -> f64 {
    norm_sq(a).sqrt()
}

fn stream(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

struct Tally {
    violations: usize,
    worst: f64,
    witness: Option<Witness>,
    /// `true` when larger `worst` is worse (ratios), `false` for margins.
    ratio: bool,
}

impl Tally {
    fn new(ratio: bool) -> Self {
        Tally {
            violations: 0,
            worst: if ratio { 0.0 } else { f64::INFINITY },
            witness: None,
            ratio,
        }
    }

    fn observe(&mut self, score: f64, violated: bool, witness: impl FnOnce() -> Witness) {
        let worse = if self.ratio { score > self.worst } else { score < self.worst };
        if worse || score.is_nan() {
            self.worst = score;
        }
        if violated || score.is_nan() {
            self.violations += 1;
            if self.witness.is_none() {
                self.witness = Some(witness());
            }
        }
    }
}

/// Strict monotonicity in `r`: `H(u) - H(v) >= 2 exp(-2R) (u - v)` for `-R <= v <= u <= R`.
pub fn check_h1(ctx: &ProbeContext, seed: u64, samples: usize, r_bound: f64) -> CheckReport {
    let mut rng = stream(seed, 1);
    let mut t = Tally::new(false);
    let gamma = 2.0 * (-2.0 * r_bound).exp();
    for _ in 0..samples {
        let x = ctx.sample_x(&mut rng);
        let a = rng.gen_range(-r_bound..=r_bound);
        let b = rng.gen_range(-r_bound..=r_bound);
        let (u, v) = if a >= b { (a, b) } else { (b, a) };
        let p = sample_ball(&mut rng, 10.0);
        let margin = ctx.h(x, u, p) - ctx.h(x, v, p) - gamma * (u - v);
        t.observe(margin, margin < -1e-12, || Witness {
            x,
            r: u,
            p,
            normal: None,
            lambda: None,
            value: margin,
            bound: 0.0,
        });
    }
    CheckReport::finish(
        "h1_monotone_in_r",
        samples,
        t.violations,
        t.worst,
        t.witness,
        format!("gamma = 2 exp(-2R) = {gamma:.6e}; minimum margin reported"),
    )
}

/// Lipschitz in `x` with linear growth in `p`, and uniformly Lipschitz in `p`.
pub fn check_h2_h3(ctx: &ProbeContext, seed: u64, samples: usize, r_bound: f64) -> Vec<CheckReport> {
    let mut rng = stream(seed, 2);
    let c = ctx.constants;
    let mut tx = Tally::new(true);
    let mut tp = Tally::new(true);
    for _ in 0..samples {
        let r = rng.gen_range(-r_bound..=r_bound);
        let x = ctx.sample_x(&mut rng);
        let y = if rng.gen_bool(0.5) {
            ctx.sample_x(&mut rng)
        } else {
            // Nearby pairs probe the local slope.
            let d = ctx.rig.domain();
            let e = sample_ball(&mut rng, 2.0 * ctx.rig.hx());
            [(x[0] + e[0]).clamp(d.x_min, d.x_max), (x[1] + e[1]).clamp(d.y_min, d.y_max)]
        };
        let p = sample_gradient(&mut rng);
        let dx = norm([x[0] - y[0], x[1] - y[1]]);
        if dx > 0.0 {
            let hx = ctx.h(x, r, p);
            let hy = ctx.h(y, r, p);
            let lhs = (hx - hy).abs();
            let rhs = c.c_2 * dx * (1.0 + norm(p));
            let slack = 1e-12 * (1.0 + hx.abs().max(hy.abs()));
            tx.observe(lhs / rhs, lhs > rhs + slack, || Witness {
                x,
                r,
                p,
                normal: None,
                lambda: None,
                value: lhs,
                bound: rhs,
            });
        }
        let q = sample_gradient(&mut rng);
        let dp = norm([p[0] - q[0], p[1] - q[1]]);
        if dp > 0.0 {
            let hp = ctx.h(x, r, p);
            let hq = ctx.h(x, r, q);
            let lhs = (hp - hq).abs();
            let rhs = c.l_p * dp;
            let slack = 1e-12 * (1.0 + hp.abs().max(hq.abs()));
            tp.observe(lhs / rhs, lhs > rhs + slack, || Witness {
                x,
                r,
                p,
                normal: None,
                lambda: None,
                value: lhs,
                bound: rhs,
            });
        }
    }
    vec![
        CheckReport::finish(
            "h2_lipschitz_in_x",
            samples,
            tx.violations,
            tx.worst,
            tx.witness,
            format!("C_2 = {:.6e}; largest ratio to bound reported", c.c_2),
        ),
        CheckReport::finish(
            "h3_lipschitz_in_p",
            samples,
            tp.violations,
            tp.worst,
            tp.witness,
            format!("L_p = {:.6e}; largest ratio to bound reported", c.l_p),
        ),
    ]
}

/// Analytic `D_p H`, `D_x W`, `D_p W` and `F'` against the finite-difference oracle.
pub fn check_gradients(ctx: &ProbeContext, seed: u64, samples: usize, r_bound: f64) -> CheckReport {
    let mut rng = stream(seed, 3);
    let f = ctx.rig.f();
    let m = ctx.model;
    let mut t = Tally::new(true);
    let mut used = 0;
    let close = |a: f64, b: f64| (a - b).abs() <= (1e-6 * a.abs().max(b.abs())).max(1e-9);
    while used < samples {
        let x = ctx.sample_x(&mut rng);
        let p = sample_ball(&mut rng, 10.0);
        let r = rng.gen_range(-r_bound..=r_bound);
        let eff = rng.gen_range(0.05..=1.0);
        let w = w_term(x, p, f);
        // The Phong profile is only Lipschitz at W = 1 for alpha = 1.
        if matches!(m, ReflectanceModel::Phong { .. }) && (w - 1.0).abs() < 1e-3 {
            continue;
        }
        used += 1;
        let h = 1e-4 * (1.0 + norm(p));
        let pairs = [
            (hamiltonian_grad_p_eff(&m, f, x, p, eff), fd_oracle::gradient(|q| hamiltonian_eff(&m, f, x, r, q, eff), p, h)),
            (w_grad_p(x, p, f), fd_oracle::gradient(|q| w_term(x, q, f), p, h)),
            (w_grad_x(x, p, f), fd_oracle::gradient(|y| w_term(y, p, f), x, 1e-4)),
        ];
        let hr = 1e-4 * (1.0 + w);
        let fd_f = fd_oracle::derivative(|t| m.f_value(t), w, hr.min(0.5 * (w + 1.0)));
        let df = m.f_derivative(w);
        t.observe(
            (df - fd_f).abs() / (1e-6 * df.abs().max(fd_f.abs())).max(1e-9),
            !close(df, fd_f),
            || Witness { x, r, p, normal: None, lambda: None, value: df, bound: fd_f },
        );
        for (a, b) in pairs {
            for k in 0..2 {
                let err = (a[k] - b[k]).abs() / (1e-6 * a[k].abs().max(b[k].abs())).max(1e-9);
                t.observe(err, !close(a[k], b[k]), || Witness {
                    x,
                    r,
                    p,
                    normal: None,
                    lambda: None,
                    value: a[k],
                    bound: b[k],
                });
            }
        }
    }
    CheckReport::finish(
        "gradient_oracle",
        samples,
        t.violations,
        t.worst,
        t.witness,
        "relative tolerance 1e-6, absolute floor 1e-9; largest error in tolerance units".into(),
    )
}

/// The uniform bounds on `W`, its gradients, `F'` and `D_p H`.
pub fn check_bounds(ctx: &ProbeContext, seed: u64, samples: usize) -> CheckReport {
    let mut rng = stream(seed, 4);
    let f = ctx.rig.f();
    let m = ctx.model;
    let c = ctx.constants;
    let mut t = Tally::new(true);
    let rel = 1.0 + 1e-12;
    for _ in 0..samples {
        let x = ctx.sample_x(&mut rng);
        let p = sample_gradient(&mut rng);
        let p2 = norm_sq(p);
        let w = w_term(x, p, f);
        let eff = ctx.intensity.sample_bilinear(&ctx.rig, x).abs();
        let checks = [
            (w, c.c_w_upper * p2),
            (f * f * p2, w),
            (norm(w_grad_p(x, p, f)), c.c_w_grad_p * p2.sqrt()),
            (norm(w_grad_x(x, p, f)), c.c_w_grad_x * p2),
            (m.f_derivative(w).abs() * (w + 1.0).sqrt(), c.c_f),
            (norm(hamiltonian_grad_p_eff(&m, f, x, p, eff)), c.l_p),
        ];
        let df = m.f_derivative(w);
        if m.is_monotone() && !(df > 0.0) {
            t.observe(f64::INFINITY, true, || Witness { x, r: 0.0, p, normal: None, lambda: None, value: df, bound: 0.0 });
        }
        for (value, bound) in checks {
            let ratio = if bound > 0.0 { value / bound } else if value > 0.0 { f64::INFINITY } else { 0.0 };
            t.observe(ratio, value > bound * rel + 1e-300, || Witness {
                x,
                r: 0.0,
                p,
                normal: None,
                lambda: None,
                value,
                bound,
            });
        }
    }
    CheckReport::finish(
        "uniform_bounds",
        samples,
        t.violations,
        t.worst,
        t.witness,
        "W, D_p W, D_x W, F' (and its sign) and D_p H against their constants; largest ratio reported".into(),
    )
}

fn is_bounded_oren_nayar(m: &ReflectanceModel) -> bool {
    matches!(m, ReflectanceModel::OrenNayar(on) if on.b() > 0.0)
}

/// Extent of `{lambda : H(x, r, p + lambda n) <= 0}` on one side of `start`,
/// or `None` if it reaches the search cap.
fn sublevel_end(g: &impl Fn(f64) -> f64, start: f64, dir: f64) -> Option<f64> {
    let cap = 1e15;
    let mut step = 1.0;
    let mut inside = start;
    loop {
        let trial = start + dir * step;
        if g(trial) > 0.0 {
            let mut lo = inside;
            let mut hi = trial;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid == lo || mid == hi {
                    break;
                }
                if g(mid) <= 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return Some(lo);
        }
        inside = trial;
        step *= 2.0;
        if step > cap {
            return None;
        }
    }
}

/// `lambda = 10^k` for `k = 0..=6`.
pub fn default_lambdas() -> Vec<f64> {
    (0..=6).map(|k| 10f64.powi(k)).collect()
}

/// `C_R = sqrt(F^-1(exp(2R) / (delta f^2))) / f`: any `p` with `H(x, r, p) <= 0`,
/// `|r| <= R` and intensity at least `delta` has `|p| <= C_R`.
/// `None` when the sublevel set of `F` is unbounded.
pub fn coercivity_constant(model: &ReflectanceModel, r_bound: f64, delta: f64, f: f64) -> Option<f64> {
    if !(delta > 0.0) {
        return None;
    }
    model.f_inverse((2.0 * r_bound).exp() / (delta * f * f)).map(|w| w.sqrt() / f)
}

/// Coercivity near the boundary: the sublevel set of `lambda -> H(x, r, p + lambda n)`
/// lies in `|lambda| <= C_R' (1 + |p|)` with `C_R' = max(C_R, 1)`.
pub fn check_h4_coercivity(ctx: &ProbeContext, seed: u64, samples: usize, r_bound: f64) -> CheckReport {
    let mut rng = stream(seed, 5);
    let f = ctx.rig.f();
    let m = ctx.model;
    let delta = ctx.constants.intensity_min;
    let mut t = Tally::new(true);
    let c_r = coercivity_constant(&m, r_bound, delta, f).map(|c| c.max(1.0));
    for _ in 0..samples {
        let x = ctx.sample_band(&mut rng);
        let n = ctx.rig.outward_normal(x);
        let r = rng.gen_range(-r_bound..=r_bound);
        let p = sample_gradient(&mut rng);
        let g = |lambda: f64| ctx.h(x, r, [p[0] + lambda * n[0], p[1] + lambda * n[1]]);
        // W(p + lambda n) is a convex quadratic in lambda; start from its minimiser.
        let q = ctx_q_matrix(x, f);
        let mn = mat_vec(q, n);
        let star = -(p[0] * mn[0] + p[1] * mn[1]) / (n[0] * mn[0] + n[1] * mn[1]);
        if g(star) > 0.0 {
            t.observe(0.0, false, || unreachable!());
            continue;
        }
        let bound = c_r.map_or(f64::INFINITY, |c| c * (1.0 + norm(p)));
        let ends = (sublevel_end(&g, star, 1.0), sublevel_end(&g, star, -1.0));
        let extent = match ends {
            (Some(a), Some(b)) => a.abs().max(b.abs()),
            _ => f64::INFINITY,
        };
        let violated = extent > bound * (1.0 + 1e-9);
        let ratio = if bound.is_finite() { extent / bound } else if extent.is_finite() { 0.0 } else { f64::INFINITY };
        t.observe(ratio, violated || !extent.is_finite(), || Witness {
            x,
            r,
            p,
            normal: Some(n),
            lambda: Some(if extent.is_finite() { extent } else { 1e15 }),
            value: extent,
            bound,
        });
    }
    let report = CheckReport::finish(
        "h4_coercivity",
        samples,
        t.violations,
        t.worst,
        t.witness,
        format!("C_R' = {}; largest extent-to-bound ratio reported", c_r.map_or("unbounded".to_string(), |c| format!("{c:.6e}"))),
    );
    if is_bounded_oren_nayar(&m) {
        report.expect_failure("the Oren-Nayar profile is bounded, so sublevel sets are unbounded")
    } else {
        report
    }
}

/// `(f^2 I + x x^T)` scaled so that `W(x, p) = p^T M p (f^2 + |x|^2) / f^2`.
fn ctx_q_matrix(x: [f64; 2], f: f64) -> [[f64; 2]; 2] {
    let f2 = f * f;
    [[f2 + x[0] * x[0], x[0] * x[1]], [x[0] * x[1], f2 + x[1] * x[1]]]
}

fn mat_vec(m: [[f64; 2]; 2], v: [f64; 2]) -> [f64; 2] {
    [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
}

/// Linear growth along the normal:
/// `H(x, r, p - lambda n) >= -exp(2R) + delta f^3 |p - lambda n| / (k_D + k_S)`.
///
/// For a bounded Oren-Nayar profile the check instead confirms
/// `H <= -exp(-2r) + |I|_inf f^2 / B` and records the growth bound's failure.
pub fn check_h5_growth(ctx: &ProbeContext, seed: u64, samples: usize, r_bound: f64, lambdas: &[f64]) -> CheckReport {
    let mut rng = stream(seed, 6);
    let f = ctx.rig.f();
    let m = ctx.model;
    let delta = ctx.constants.intensity_min;
    let kr = m.reflective_weight();
    let mut growth = Tally::new(false);
    let mut ceiling = Tally::new(false);
    for _ in 0..samples {
        let x = ctx.sample_band(&mut rng);
        let n = ctx.rig.outward_normal(x);
        let r = rng.gen_range(-r_bound..=r_bound);
        let p = sample_gradient(&mut rng);
        for &lambda in lambdas {
            let q = [p[0] - lambda * n[0], p[1] - lambda * n[1]];
            let h = ctx.h(x, r, q);
            let lower = -(2.0 * r_bound).exp() + delta * f * f * f * norm(q) / kr;
            let margin = h - lower;
            let slack = 1e-9 * (1.0 + h.abs());
            growth.observe(margin, margin < -slack, || Witness {
                x,
                r,
                p,
                normal: Some(n),
                lambda: Some(lambda),
                value: h,
                bound: lower,
            });
            if let ReflectanceModel::OrenNayar(on) = m {
                if on.b() > 0.0 {
                    let upper = -(-2.0 * r).exp() + ctx.constants.intensity_max * f * f / on.b();
                    let margin = upper - h;
                    ceiling.observe(margin, margin < -1e-9, || Witness {
                        x,
                        r,
                        p,
                        normal: Some(n),
                        lambda: Some(lambda),
                        value: h,
                        bound: upper,
                    });
                }
            }
        }
    }
    let n = samples * lambdas.len();
    if is_bounded_oren_nayar(&m) {
        if ceiling.violations > 0 {
            return CheckReport::finish(
                "h5_growth",
                n,
                ceiling.violations,
                ceiling.worst,
                ceiling.witness,
                "Oren-Nayar Hamiltonian exceeded its bounded ceiling".into(),
            );
        }
        return CheckReport::finish(
            "h5_growth",
            n,
            growth.violations,
            growth.worst,
            growth.witness,
            format!("bounded ceiling held on all samples (minimum margin {:.3e})", ceiling.worst),
        )
        .expect_failure("the Oren-Nayar Hamiltonian is bounded in the gradient");
    }
    CheckReport::finish(
        "h5_growth",
        n,
        growth.violations,
        growth.worst,
        growth.witness,
        format!("{} values of lambda up to {:e}; minimum margin reported", lambdas.len(), lambdas.last().copied().unwrap_or(0.0)),
    )
}

/// The constant `M` is a supersolution: `H(x, M, xi) >= 0` for every `xi`.
pub fn check_lemma3_supersolution(ctx: &ProbeContext, seed: u64, samples: usize, delta: Option<f64>) -> CheckReport {
    let name = "constant_supersolution";
    if ctx.model.kind() == ModelKind::OrenNayar {
        return CheckReport::skipped(name, "not available for Oren-Nayar");
    }
    let rig = ctx.rig;
    let i_min = ctx.constants.intensity_min;
    let delta = delta.unwrap_or(i_min);
    let mut t = Tally::new(false);
    if !(delta > 0.0) || i_min < delta {
        let k = ctx
            .intensity
            .values()
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map_or(0, |e| e.0);
        let x = rig.node(k % rig.nx(), k / rig.nx());
        t.observe(i_min - delta, true, || Witness {
            x,
            r: 0.0,
            p: [0.0, 0.0],
            normal: None,
            lambda: None,
            value: i_min,
            bound: delta,
        });
        return CheckReport::finish(name, 0, 1, t.worst, t.witness, format!("intensity minimum {i_min:.6e} is below delta = {delta:.6e}"));
    }
    let level = state_constraint_constant(&ctx.model, delta, rig.f()).expect("positive delta");
    let f = rig.f();
    let eval = |k: usize, xi: [f64; 2]| {
        let x = rig.node(k % rig.nx(), k / rig.nx());
        (x, hamiltonian_eff(&ctx.model, f, x, level, xi, ctx.intensity.values()[k]))
    };
    let mut rng = stream(seed, 7);
    let argmin = ctx
        .intensity
        .values()
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map_or(0, |e| e.0);
    let mut count = 0;
    let mut visit = |k: usize, xi: [f64; 2]| {
        let (x, h) = eval(k, xi);
        count += 1;
        t.observe(h, h < -1e-12, || Witness {
            x,
            r: level,
            p: xi,
            normal: None,
            lambda: None,
            value: h,
            bound: 0.0,
        });
    };
    for k in 0..rig.len() {
        visit(k, [0.0, 0.0]);
    }
    for _ in 0..samples {
        let xi = sample_gradient(&mut rng);
        if rng.gen_bool(0.1) {
            visit(argmin, xi);
        } else {
            visit(rng.gen_range(0..rig.len()), xi);
        }
    }
    CheckReport::finish(
        name,
        count,
        t.violations,
        t.worst,
        t.witness,
        format!("M = {level:.12}, delta = {delta:.6e}; minimum H reported"),
    )
}

/// The effective intensity clears `floor` on the boundary band.
pub fn check_boundary_band(ctx: &ProbeContext, floor: f64) -> CheckReport {
    let rig = ctx.rig;
    let mut t = Tally::new(false);
    let mut n = 0;
    for j in 0..rig.ny() {
        for i in 0..rig.nx() {
            if rig.boundary_distance(i, j) <= ctx.band_width {
                n += 1;
                let v = ctx.intensity.at(i, j);
                t.observe(v, v < floor, || Witness {
                    x: rig.node(i, j),
                    r: 0.0,
                    p: [0.0, 0.0],
                    normal: None,
                    lambda: None,
                    value: v,
                    bound: floor,
                });
            }
        }
    }
    CheckReport::finish(
        "boundary_band_floor",
        n,
        t.violations,
        t.worst,
        t.witness,
        format!("band of {} cells, floor {floor:.1e}; minimum intensity reported", ctx.band_width),
    )
}

/// Run every check on `image` under `model`.
pub fn run_suite(model: &ReflectanceModel, image: &RenderedImage, config: &ProbeConfig) -> Result<ProbeReport> {
    if !(config.r_bound > 0.0) || config.samples == 0 {
        return Err(Error::InvalidConfig("probe needs R > 0 and at least one sample".into()));
    }
    let ctx = ProbeContext::new(model, image, config.band_width)?;
    let (seed, n, r) = (config.seed, config.samples, config.r_bound);
    let mut checks = vec![check_h1(&ctx, seed, n, r)];
    checks.extend(check_h2_h3(&ctx, seed, n, r));
    checks.push(check_gradients(&ctx, seed, n.div_ceil(10), r));
    checks.push(check_bounds(&ctx, seed, 10 * n));
    checks.push(check_h4_coercivity(&ctx, seed, n, r));
    checks.push(check_h5_growth(&ctx, seed, n, r, &default_lambdas()));
    checks.push(check_lemma3_supersolution(&ctx, seed, n, config.delta));
    checks.push(check_boundary_band(&ctx, config.intensity_floor));
    let passed = checks.iter().all(CheckReport::ok);
    Ok(ProbeReport {
        seed,
        model: model.kind(),
        r_bound: r,
        samples: n,
        constants: ctx.constants,
        checks,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{analytic_surface, render, SurfaceParams};

    fn dome_image(model: &ReflectanceModel) -> RenderedImage {
        let rig = CameraRig::square(1.0, 0.5, 33).unwrap();
        let hf = analytic_surface("dome", &rig, SurfaceParams::default()).unwrap();
        render(model, &hf, None).unwrap()
    }

    #[test]
    fn fd_oracle_is_fourth_order() {
        let d = fd_oracle::derivative(f64::sin, 0.7, 1e-2);
        assert!((d - 0.7f64.cos()).abs() < 1e-9);
        let g = fd_oracle::gradient(|x| x[0] * x[0] * x[1], [1.5, -2.0], 1e-3);
        assert!((g[0] - -6.0).abs() < 1e-9 && (g[1] - 2.25).abs() < 1e-9);
    }

    #[test]
    fn fd_oracle_examples() {
        assert!((fd_oracle::derivative(|r| (r + 1.0).sqrt(), 3.0, 1e-3) - 0.25).abs() < 1e-9);
        assert_eq!(fd_oracle::derivative(|_| 4.0, 1.0, 1e-3), 0.0);
        assert_eq!(fd_oracle::gradient(|_| -2.0, [0.3, 0.1], 1e-3), [0.0, 0.0]);
    }

    #[test]
    fn coercivity_constant_matches_lambertian_closed_form() {
        let l = ReflectanceModel::lambertian();
        let s: f64 = 1f64.exp().powi(2) / 0.1;
        let exact = (s * s - 1.0).sqrt();
        let c = coercivity_constant(&l, 1.0, 0.1, 1.0).unwrap();
        assert!((c - exact).abs() <= 0.01 * exact);
        assert!((c - exact).abs() <= 1e-9 * exact);
        let on = ReflectanceModel::oren_nayar(0.3).unwrap();
        assert_eq!(coercivity_constant(&on, 1.0, 0.1, 1.0), None);
    }

    #[test]
    fn lambertian_growth_example() {
        // p = 0, lambda = 1e6, delta f^3 = 0.1: H >= -exp(2R) + 1e5.
        let rig = CameraRig::square(1.0, 0.5, 9).unwrap();
        let l = ReflectanceModel::lambertian();
        let img = RenderedImage {
            rig,
            intensity: ScalarField::constant(&rig, 0.1),
            model: l,
            ambient: None,
            normalization: 1.0,
        };
        let ctx = ProbeContext::new(&l, &img, 3).unwrap();
        let x = [0.5, 0.0];
        let n = rig.outward_normal(x);
        let h = ctx.h(x, -1.0, [-1e6 * n[0], -1e6 * n[1]]);
        assert!(h >= -(2.0f64).exp() + 1e5);
        let c = check_h5_growth(&ctx, 1, 100, 1.0, &default_lambdas());
        assert_eq!(c.outcome, Outcome::Pass);
    }

    #[test]
    fn h1_equal_arguments_have_zero_margin() {
        let l = ReflectanceModel::lambertian();
        let ctx = ProbeContext::new(&l, &dome_image(&l), 3).unwrap();
        assert_eq!(ctx.h([0.1, 0.2], 0.3, [1.0, 2.0]) - ctx.h([0.1, 0.2], 0.3, [1.0, 2.0]), 0.0);
        let c = check_h1(&ctx, 5, 2000, 2.0);
        assert_eq!(c.outcome, Outcome::Pass);
        assert!(c.worst >= -1e-12);
    }

    #[test]
    fn suite_passes_for_coercive_models() {
        for m in [
            ReflectanceModel::lambertian(),
            ReflectanceModel::phong(0.0, 0.7, 0.3, 2).unwrap(),
            ReflectanceModel::blinn_phong(0.0, 0.6, 0.4, 5.0).unwrap(),
        ] {
            let report = run_suite(&m, &dome_image(&m), &ProbeConfig { samples: 500, ..Default::default() }).unwrap();
            for c in &report.checks {
                assert_eq!(c.outcome, Outcome::Pass, "{m:?} {c:?}");
            }
            assert!(report.passed);
        }
    }

    #[test]
    fn oren_nayar_fails_coercivity_and_growth_with_witnesses() {
        let m = ReflectanceModel::oren_nayar(0.3).unwrap();
        let report = run_suite(&m, &dome_image(&m), &ProbeConfig { samples: 500, ..Default::default() }).unwrap();
        for c in &report.checks {
            match c.name.as_str() {
                "h4_coercivity" | "h5_growth" => {
                    assert_eq!(c.outcome, Outcome::ExpectedFail, "{c:?}");
                    assert!(c.witness.is_some());
                }
                "constant_supersolution" => assert_eq!(c.outcome, Outcome::Skipped),
                _ => assert_eq!(c.outcome, Outcome::Pass, "{c:?}"),
            }
        }
        assert!(report.passed);
    }

    #[test]
    fn reports_are_reproducible() {
        let m = ReflectanceModel::lambertian();
        let img = dome_image(&m);
        let cfg = ProbeConfig { seed: 11, samples: 200, ..Default::default() };
        let a = serde_json::to_string(&run_suite(&m, &img, &cfg).unwrap()).unwrap();
        let b = serde_json::to_string(&run_suite(&m, &img, &cfg).unwrap()).unwrap();
        assert_eq!(a, b);
        assert!(a.contains("\"seed\":11"));
    }

    #[test]
    fn dark_band_pixel_fails_the_suite() {
        let m = ReflectanceModel::lambertian();
        let mut img = dome_image(&m);
        img.intensity.set(0, 5, 0.0);
        let report = run_suite(&m, &img, &ProbeConfig { samples: 100, ..Default::default() }).unwrap();
        assert!(!report.passed);
        let band = report.checks.iter().find(|c| c.name == "boundary_band_floor").unwrap();
        assert_eq!(band.outcome, Outcome::Fail);
        assert_eq!(band.witness.as_ref().unwrap().value, 0.0);
    }

    #[test]
    fn supersolution_rejects_delta_above_the_image_minimum() {
        let m = ReflectanceModel::lambertian();
        let img = dome_image(&m);
        let ctx = ProbeContext::new(&m, &img, 3).unwrap();
        let c = check_lemma3_supersolution(&ctx, 0, 10, Some(ctx.constants.intensity_min * 2.0));
        assert_eq!(c.outcome, Outcome::Fail);
    }

    #[test]
    fn growth_bound_detects_a_wrong_constant() {
        // An image twice as bright as its minimum suggests keeps the bound valid;
        // lying about delta must produce a witness.
        let m = ReflectanceModel::lambertian();
        let img = dome_image(&m);
        let mut ctx = ProbeContext::new(&m, &img, 3).unwrap();
        ctx.constants.intensity_min *= 100.0;
        let c = check_h5_growth(&ctx, 0, 200, 2.0, &default_lambdas());
        assert_eq!(c.outcome, Outcome::Fail);
        assert!(c.witness.is_some());
    }
}
