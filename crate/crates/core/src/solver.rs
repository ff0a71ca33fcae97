//! Monotone Lax-Friedrichs solver for `-exp(-2 v) + I_eff f^2 F(W(x, grad v)) = 0`.
//!
//! The nodal update is the explicit pseudo-time step
//!
//! ```text
//! v <- v - tau * Hhat(v_c; v_w, v_e, v_s, v_n)
//! Hhat = H(x, v_c, (p- + p+)/2) - sigma_x (p+_x - p-_x)/2 - sigma_y (p+_y - p-_y)/2
//! ```
//!
//! With `sigma >= sup |D_p H|` and
//! `tau <= 1 / (sigma_x/h_x + sigma_y/h_y + 2 exp(-2 v_lo))` the update is
//! nondecreasing in every nodal value, and because `H` is strictly increasing in
//! `v` it contracts the max norm by `1 - 2 tau exp(-2 v_hi)` per step.

use crate::error::{Error, Result};
use crate::grid::{CameraRig, ScalarField};
use crate::model::{hamiltonian_eff, grad_p_bound, ModelKind, ReflectanceModel};
use crate::scene::RenderedImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKind {
    DirichletStrong,
    DirichletWeak,
    Neumann,
    StateConstraints,
}

impl BoundaryKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "dirichlet_strong" | "dirichlet" => Ok(BoundaryKind::DirichletStrong),
            "dirichlet_weak" => Ok(BoundaryKind::DirichletWeak),
            "neumann" => Ok(BoundaryKind::Neumann),
            "state_constraints" | "state_constraint" => Ok(BoundaryKind::StateConstraints),
            other => Err(Error::Parse(format!("unknown boundary condition `{other}`"))),
        }
    }
}

/// Boundary condition for the log-height `v`. Dirichlet data are log-heights;
/// only boundary nodes of the field are read.
#[derive(Debug, Clone)]
pub enum BoundaryCondition {
    /// `v = g` pointwise on the boundary.
    DirichletStrong(ScalarField),
    /// `v = g` in the viscosity sense: boundary nodes solve `max(Hhat, v - g) = 0`.
    DirichletWeak(ScalarField),
    /// Homogeneous Neumann `N . grad v = 0`, by reflected ghost nodes.
    Neumann,
    /// Weak Dirichlet with the constant supersolution level as datum.
    StateConstraints,
}

impl BoundaryCondition {
    pub fn kind(&self) -> BoundaryKind {
        match self {
            BoundaryCondition::DirichletStrong(_) => BoundaryKind::DirichletStrong,
            BoundaryCondition::DirichletWeak(_) => BoundaryKind::DirichletWeak,
            BoundaryCondition::Neumann => BoundaryKind::Neumann,
            BoundaryCondition::StateConstraints => BoundaryKind::StateConstraints,
        }
    }

    /// Dirichlet condition from a height field `u` (stored as `ln u`).
    pub fn from_heights(kind: BoundaryKind, heights: &ScalarField) -> Result<Self> {
        if heights.values().iter().any(|&u| !(u > 0.0)) {
            return Err(Error::InvalidSurface("Dirichlet heights must be positive".into()));
        }
        let g = heights.map(f64::ln);
        match kind {
            BoundaryKind::DirichletStrong => Ok(BoundaryCondition::DirichletStrong(g)),
            BoundaryKind::DirichletWeak => Ok(BoundaryCondition::DirichletWeak(g)),
            other => Err(Error::InvalidConfig(format!("{other:?} takes no boundary datum"))),
        }
    }

    fn datum(&self) -> Option<&ScalarField> {
        match self {
            BoundaryCondition::DirichletStrong(g) | BoundaryCondition::DirichletWeak(g) => Some(g),
            _ => None,
        }
    }
}

/// Initial guess for the pseudo-time iteration (log-height values).
#[derive(Debug, Clone)]
pub enum Initialization {
    /// Boundary datum average inside, datum on the boundary.
    BoundaryExtension,
    Constant(f64),
    Field(ScalarField),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    /// Double-buffered, data-parallel over rows.
    Jacobi,
    /// In-place, sequential.
    GaussSeidel,
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub cfl: f64,
    /// Artificial viscosity per axis; estimated from the uniform `D_p H` bound when `None`.
    pub sigma: Option<[f64; 2]>,
    pub tol: f64,
    /// Stop only once the scheme residual is below `residual_factor * tol`.
    pub residual_factor: f64,
    /// Also require the contraction estimate of the distance to the fixed point to be below `tol`.
    pub certify_distance: bool,
    pub max_iters: usize,
    /// `None` picks the default for the boundary condition.
    pub init: Option<Initialization>,
    /// `delta_min`: interior effective intensities are clamped up to this floor;
    /// the boundary band must satisfy it.
    pub intensity_floor: f64,
    /// Width of the boundary band, in cells.
    pub band_width: usize,
    pub mode: SweepMode,
    /// How often the lower bound on `v` used in the time step is refreshed.
    pub range_refresh: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            cfl: 0.9,
            sigma: None,
            tol: 1e-8,
            residual_factor: 100.0,
            certify_distance: true,
            max_iters: 1_000_000,
            init: None,
            intensity_floor: 1e-6,
            band_width: 3,
            mode: SweepMode::Jacobi,
            range_refresh: 1000,
        }
    }
}

impl SolverConfig {
    fn validate(&self) -> Result<()> {
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(Error::InvalidConfig(format!("cfl must lie in (0, 1], got {}", self.cfl)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidConfig(format!("tol must be positive, got {}", self.tol)));
        }
        if !(self.residual_factor >= 1.0) {
            return Err(Error::InvalidConfig("residual_factor must be >= 1".into()));
        }
        if !(self.intensity_floor > 0.0) {
            return Err(Error::InvalidConfig("intensity floor must be positive".into()));
        }
        if self.range_refresh == 0 {
            return Err(Error::InvalidConfig("range_refresh must be positive".into()));
        }
        Ok(())
    }
}

/// Immutable summary of a solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub model: ModelKind,
    pub boundary: BoundaryKind,
    pub converged: bool,
    pub iterations: usize,
    /// Max `|Hhat|` of the discrete equations at exit.
    pub scheme_residual: f64,
    /// Max `|H|` with central differences at interior nodes.
    pub pde_residual: f64,
    pub max_update: f64,
    /// Contraction estimate of the max-norm distance to the discrete fixed point.
    pub distance_bound: f64,
    pub wall_time_s: f64,
    pub sigma: [f64; 2],
    pub tau: f64,
    /// Minimum effective intensity over the boundary band.
    pub boundary_band_min: f64,
    pub clamped_pixels: usize,
    pub model_monotone: bool,
    /// The constant datum used for state constraints.
    pub state_constraint_level: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub v: ScalarField,
    pub u: ScalarField,
    pub report: SolveReport,
}

/// Level `M` of the constant supersolution used for state constraints:
/// `-ln(delta f^2)/2` (Lambertian) or `-ln(delta f^2 / (k_D + k_S))/2` (Phong, Blinn-Phong).
pub fn state_constraint_constant(model: &ReflectanceModel, delta: f64, f: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::InvalidConfig(format!("intensity floor must be positive, got {delta}")));
    }
    if !(f > 0.0) {
        return Err(Error::InvalidRig(format!("focal length must be positive, got {f}")));
    }
    match model.kind() {
        ModelKind::OrenNayar => Err(oren_nayar_weak_bc_error()),
        ModelKind::Lambertian => Ok(-0.5 * (delta * f * f).ln()),
        ModelKind::Phong | ModelKind::BlinnPhong => {
            Ok(-0.5 * (delta * f * f / model.reflective_weight()).ln())
        }
    }
}

fn oren_nayar_weak_bc_error() -> Error {
    Error::IllPosed(
        "the Oren-Nayar Hamiltonian is bounded in the gradient, so uniqueness with boundary \
         conditions in the viscosity sense holds only for Neumann data (Neumann-only guarantee); \
         use bc.kind = neumann or dirichlet_strong"
            .into(),
    )
}

/// Nodal values of a five-point stencil.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stencil {
    pub center: f64,
    pub west: f64,
    pub east: f64,
    pub south: f64,
    pub north: f64,
}

impl Stencil {
    /// Backward and forward differences `(p-, p+)`.
    pub fn one_sided(&self, h: [f64; 2]) -> ([f64; 2], [f64; 2]) {
        (
            [(self.center - self.west) / h[0], (self.center - self.south) / h[1]],
            [(self.east - self.center) / h[0], (self.north - self.center) / h[1]],
        )
    }
}

/// Lax-Friedrichs numerical Hamiltonian.
#[inline]
#[allow(clippy::too_many_arguments)]
pub fn numerical_hamiltonian(
    model: &ReflectanceModel,
    f: f64,
    x: [f64; 2],
    eff_intensity: f64,
    v: f64,
    p_minus: [f64; 2],
    p_plus: [f64; 2],
    sigma: [f64; 2],
) -> f64 {
    let p = [0.5 * (p_minus[0] + p_plus[0]), 0.5 * (p_minus[1] + p_plus[1])];
    hamiltonian_eff(model, f, x, v, p, eff_intensity)
        - 0.5 * sigma[0] * (p_plus[0] - p_minus[0])
        - 0.5 * sigma[1] * (p_plus[1] - p_minus[1])
}

/// Automatic artificial viscosity: `1.1 |I_eff|_inf f C_F C_W` on both axes.
pub fn auto_sigma(model: &ReflectanceModel, rig: &CameraRig, max_eff_intensity: f64) -> [f64; 2] {
    let s = 1.1 * grad_p_bound(model, rig, max_eff_intensity);
    [s, s]
}

/// Largest pseudo-time step keeping the update monotone while `v >= v_lo`.
pub fn stable_time_step(cfl: f64, sigma: [f64; 2], h: [f64; 2], v_lo: f64) -> f64 {
    cfl / (sigma[0] / h[0] + sigma[1] / h[1] + 2.0 * (-2.0 * v_lo).exp())
}

/// Pointwise `|H(x, v, grad v)|` with central differences at interior nodes; zero on the boundary.
pub fn residual_field(model: &ReflectanceModel, image: &RenderedImage, v: &ScalarField) -> ScalarField {
    let rig = image.rig;
    let eff = image.effective_intensity(model);
    let (hx, hy) = (rig.hx(), rig.hy());
    let mut out = ScalarField::constant(&rig, 0.0);
    for j in 1..rig.ny() - 1 {
        for i in 1..rig.nx() - 1 {
            let p = [
                (v.at(i + 1, j) - v.at(i - 1, j)) / (2.0 * hx),
                (v.at(i, j + 1) - v.at(i, j - 1)) / (2.0 * hy),
            ];
            let h = hamiltonian_eff(model, rig.f(), rig.node(i, j), v.at(i, j), p, eff.at(i, j));
            out.set(i, j, h.abs());
        }
    }
    out
}

#[derive(Clone, Copy)]
enum NodeRole {
    Pinned,
    Free,
    /// Boundary node capped by the datum.
    Capped(f64),
}

struct Scheme<'a> {
    model: &'a ReflectanceModel,
    rig: CameraRig,
    f: f64,
    h: [f64; 2],
    sigma: [f64; 2],
    eff: Vec<f64>,
    roles: Vec<NodeRole>,
}

#[derive(Clone, Copy)]
struct SweepStats {
    max_update: f64,
    max_residual: f64,
    min_v: f64,
    max_v: f64,
    finite: bool,
}

impl SweepStats {
    fn empty() -> Self {
        SweepStats {
            max_update: 0.0,
            max_residual: 0.0,
            min_v: f64::INFINITY,
            max_v: f64::NEG_INFINITY,
            finite: true,
        }
    }

    fn merge(self, o: SweepStats) -> SweepStats {
        SweepStats {
            max_update: self.max_update.max(o.max_update),
            max_residual: self.max_residual.max(o.max_residual),
            min_v: self.min_v.min(o.min_v),
            max_v: self.max_v.max(o.max_v),
            finite: self.finite && o.finite,
        }
    }

    fn record(&mut self, old: f64, new: f64, residual: f64) {
        self.max_update = self.max_update.max((new - old).abs());
        self.max_residual = self.max_residual.max(residual);
        self.min_v = self.min_v.min(new);
        self.max_v = self.max_v.max(new);
        self.finite &= new.is_finite();
    }
}

impl Scheme<'_> {
    #[inline]
    fn stencil(&self, v: &[f64], i: usize, j: usize) -> Stencil {
        let nx = self.rig.nx();
        let ny = self.rig.ny();
        let at = |i: usize, j: usize| v[j * nx + i];
        // Missing neighbours are reflected across the boundary node.
        let west = if i > 0 { at(i - 1, j) } else { at(i + 1, j) };
        let east = if i + 1 < nx { at(i + 1, j) } else { at(i - 1, j) };
        let south = if j > 0 { at(i, j - 1) } else { at(i, j + 1) };
        let north = if j + 1 < ny { at(i, j + 1) } else { at(i, j - 1) };
        Stencil {
            center: at(i, j),
            west,
            east,
            south,
            north,
        }
    }

    #[inline]
    fn hhat(&self, v: &[f64], i: usize, j: usize) -> f64 {
        let k = self.rig.index(i, j);
        let s = self.stencil(v, i, j);
        let (pm, pp) = s.one_sided(self.h);
        numerical_hamiltonian(self.model, self.f, self.rig.node(i, j), self.eff[k], s.center, pm, pp, self.sigma)
    }

    /// New value and residual of the discrete equation at node `(i, j)`.
    #[inline]
    fn update(&self, v: &[f64], i: usize, j: usize, tau: f64) -> (f64, f64) {
        let k = self.rig.index(i, j);
        match self.roles[k] {
            NodeRole::Pinned => (v[k], 0.0),
            NodeRole::Free => {
                let r = self.hhat(v, i, j);
                (v[k] - tau * r, r.abs())
            }
            NodeRole::Capped(g) => {
                let r = self.hhat(v, i, j);
                let new = (v[k] - tau * r).min(g);
                (new, r.max(v[k] - g).abs())
            }
        }
    }

    fn sweep_jacobi(&self, v: &[f64], next: &mut [f64], tau: f64) -> SweepStats {
        let nx = self.rig.nx();
        next.par_chunks_mut(nx)
            .enumerate()
            .map(|(j, row)| {
                let mut st = SweepStats::empty();
                for (i, out) in row.iter_mut().enumerate() {
                    let (new, res) = self.update(v, i, j, tau);
                    st.record(v[j * nx + i], new, res);
                    *out = new;
                }
                st
            })
            .reduce(SweepStats::empty, SweepStats::merge)
    }

    fn sweep_gauss_seidel(&self, v: &mut [f64], tau: f64) -> SweepStats {
        let mut st = SweepStats::empty();
        for j in 0..self.rig.ny() {
            for i in 0..self.rig.nx() {
                let k = self.rig.index(i, j);
                let old = v[k];
                let (new, res) = self.update(v, i, j, tau);
                v[k] = new;
                st.record(old, new, res);
            }
        }
        st
    }
}

/// Solve the attenuated shape-from-shading equation for `model` on `image`.
///
/// Returns `Ok` with `report.converged == false` when `max_iters` is exhausted.
pub fn solve(
    model: &ReflectanceModel,
    image: &RenderedImage,
    bc: &BoundaryCondition,
    config: &SolverConfig,
) -> Result<Solution> {
    let start = Instant::now();
    config.validate()?;
    let rig = image.rig;
    image.intensity.ensure_matches(&rig, "image")?;

    if model.kind() == ModelKind::OrenNayar {
        if !model.is_monotone() {
            return Err(Error::IllPosed(
                "Oren-Nayar profile is not increasing (A/2 <= B); refusing to reconstruct".into(),
            ));
        }
        if matches!(bc.kind(), BoundaryKind::DirichletWeak | BoundaryKind::StateConstraints) {
            return Err(oren_nayar_weak_bc_error());
        }
    }

    // Effective intensity: boundary band must clear the floor, interior is clamped to it.
    let mut eff = image.effective_intensity(model);
    let floor = config.intensity_floor;
    let mut band_min = f64::INFINITY;
    let mut band_argmin = (0, 0);
    let mut clamped = 0;
    for j in 0..rig.ny() {
        for i in 0..rig.nx() {
            let e = eff.at(i, j);
            if !e.is_finite() {
                return Err(Error::NonpositiveIntensity { value: e, x: rig.node(i, j) });
            }
            if rig.boundary_distance(i, j) <= config.band_width {
                if e < band_min {
                    band_min = e;
                    band_argmin = (i, j);
                }
            } else if e < floor {
                eff.set(i, j, floor);
                clamped += 1;
            }
        }
    }
    if band_min < floor {
        return Err(Error::BoundaryBand {
            min: band_min,
            floor,
            node: band_argmin,
        });
    }

    let f = rig.f();
    let mut state_level = None;
    let datum: Option<ScalarField> = match bc {
        BoundaryCondition::StateConstraints => {
            let m = state_constraint_constant(model, eff.min(), f)?;
            state_level = Some(m);
            Some(ScalarField::constant(&rig, m))
        }
        other => other.datum().cloned(),
    };
    if let Some(g) = &datum {
        g.ensure_matches(&rig, "boundary datum")?;
        for j in 0..rig.ny() {
            for i in 0..rig.nx() {
                if rig.is_boundary(i, j) && !g.at(i, j).is_finite() {
                    return Err(Error::InvalidConfig(format!(
                        "boundary datum is not finite at node ({i}, {j})"
                    )));
                }
            }
        }
    }

    let auto = auto_sigma(model, &rig, eff.max());
    let sigma = match config.sigma {
        None => auto,
        Some(s) => {
            if s[0] < auto[0] || s[1] < auto[1] {
                return Err(Error::InvalidConfig(format!(
                    "artificial viscosity {s:?} is below the monotonicity bound {auto:?}"
                )));
            }
            s
        }
    };

    let roles: Vec<NodeRole> = (0..rig.len())
        .map(|k| {
            let (i, j) = (k % rig.nx(), k / rig.nx());
            if !rig.is_boundary(i, j) {
                return NodeRole::Free;
            }
            match (bc.kind(), &datum) {
                (BoundaryKind::DirichletStrong, _) => NodeRole::Pinned,
                (BoundaryKind::Neumann, _) => NodeRole::Free,
                (_, Some(g)) => NodeRole::Capped(g.at(i, j)),
                (_, None) => NodeRole::Free,
            }
        })
        .collect();

    let mut v = initial_field(model, &rig, bc, datum.as_ref(), &eff, config)?;
    for (k, role) in roles.iter().enumerate() {
        match *role {
            NodeRole::Pinned => v[k] = datum.as_ref().unwrap().values()[k],
            NodeRole::Capped(g) => v[k] = v[k].min(g),
            NodeRole::Free => {}
        }
    }

    let scheme = Scheme {
        model,
        rig,
        f,
        h: [rig.hx(), rig.hy()],
        sigma,
        eff: eff.into_vec(),
        roles,
    };

    let margin = 0.5;
    let mut v_lo = v.iter().copied().fold(f64::INFINITY, f64::min) - margin;
    let mut tau = stable_time_step(config.cfl, sigma, scheme.h, v_lo);
    let mut next = v.clone();
    let mut iterations = 0;
    let mut converged = false;
    let mut last = SweepStats::empty();
    let mut distance = f64::INFINITY;

    while iterations < config.max_iters {
        let st = match config.mode {
            SweepMode::Jacobi => {
                let st = scheme.sweep_jacobi(&v, &mut next, tau);
                std::mem::swap(&mut v, &mut next);
                st
            }
            SweepMode::GaussSeidel => scheme.sweep_gauss_seidel(&mut v, tau),
        };
        iterations += 1;
        if !st.finite {
            return Err(Error::Diverged { iteration: iterations });
        }
        last = st;

        let gamma = 2.0 * (-2.0 * st.max_v).exp();
        let rho = 1.0 - tau * gamma;
        distance = st.max_update * rho / (1.0 - rho);
        let done = st.max_update <= config.tol
            && st.max_residual <= config.residual_factor * config.tol
            && (!config.certify_distance || distance <= config.tol);
        if done {
            converged = true;
            break;
        }

        // Keep the step monotone: the r-Lipschitz constant of H grows as v decreases.
        if st.min_v < v_lo || iterations % config.range_refresh == 0 {
            v_lo = st.min_v - margin;
            tau = stable_time_step(config.cfl, sigma, scheme.h, v_lo);
        }
    }

    let v = ScalarField::from_vec(rig.nx(), rig.ny(), v)?;
    let u = v.map(f64::exp);
    let pde_residual = residual_field(model, image, &v).max();
    let report = SolveReport {
        model: model.kind(),
        boundary: bc.kind(),
        converged,
        iterations,
        scheme_residual: last.max_residual,
        pde_residual,
        max_update: last.max_update,
        distance_bound: distance,
        wall_time_s: start.elapsed().as_secs_f64(),
        sigma,
        tau,
        boundary_band_min: band_min,
        clamped_pixels: clamped,
        model_monotone: model.is_monotone(),
        state_constraint_level: state_level,
    };
    Ok(Solution { v, u, report })
}

fn initial_field(
    model: &ReflectanceModel,
    rig: &CameraRig,
    bc: &BoundaryCondition,
    datum: Option<&ScalarField>,
    eff: &ScalarField,
    config: &SolverConfig,
) -> Result<Vec<f64>> {
    let boundary_mean = |g: &ScalarField| {
        let (mut sum, mut n) = (0.0, 0usize);
        for j in 0..rig.ny() {
            for i in 0..rig.nx() {
                if rig.is_boundary(i, j) {
                    sum += g.at(i, j);
                    n += 1;
                }
            }
        }
        sum / n as f64
    };
    let init = match (&config.init, bc) {
        (Some(init), _) => init.clone(),
        (None, BoundaryCondition::StateConstraints) => {
            Initialization::Constant(datum.expect("state constraint level").at(0, 0))
        }
        (None, BoundaryCondition::Neumann) => {
            // Pointwise solution of the equation for a fronto-parallel patch.
            let f2 = rig.f() * rig.f();
            let f0 = model.f_value(0.0);
            let field = eff.map(|e| -0.5 * (e * f2 * f0).ln());
            Initialization::Field(field)
        }
        (None, _) => Initialization::BoundaryExtension,
    };
    let mut v = match init {
        Initialization::Constant(c) => vec![c; rig.len()],
        Initialization::Field(field) => {
            field.ensure_matches(rig, "initial field")?;
            field.into_vec()
        }
        Initialization::BoundaryExtension => {
            let g = datum.ok_or_else(|| {
                Error::InvalidConfig("boundary extension needs Dirichlet data".into())
            })?;
            let mean = boundary_mean(g);
            let mut v = vec![mean; rig.len()];
            for j in 0..rig.ny() {
                for i in 0..rig.nx() {
                    if rig.is_boundary(i, j) {
                        v[rig.index(i, j)] = g.at(i, j);
                    }
                }
            }
            v
        }
    };
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidConfig("initial field is not finite".into()));
    }
    v.shrink_to_fit();
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{analytic_surface, render, SurfaceParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn constant_image(rig: &CameraRig, model: ReflectanceModel, value: f64) -> RenderedImage {
        RenderedImage {
            rig: *rig,
            intensity: ScalarField::constant(rig, value),
            model,
            ambient: None,
            normalization: 1.0,
        }
    }

    #[test]
    fn state_constraint_constants() {
        let l = ReflectanceModel::lambertian();
        assert!((state_constraint_constant(&l, 0.1, 1.0).unwrap() - 1.1512925465).abs() < 1e-9);
        assert_eq!(state_constraint_constant(&l, 1.0, 1.0).unwrap(), 0.0);
        let ph = ReflectanceModel::phong(0.1, 0.6, 0.3, 2).unwrap();
        let m = state_constraint_constant(&ph, 0.1, 1.0).unwrap();
        assert!((m - 1.0986122887).abs() < 1e-9);
        let bp = ReflectanceModel::blinn_phong(0.1, 0.6, 0.3, 4.0).unwrap();
        assert_eq!(state_constraint_constant(&bp, 0.1, 1.0).unwrap(), m);
        let on = ReflectanceModel::oren_nayar(0.3).unwrap();
        assert!(matches!(state_constraint_constant(&on, 0.1, 1.0), Err(Error::IllPosed(_))));
        assert!(state_constraint_constant(&l, 0.0, 1.0).is_err());
    }

    #[test]
    fn numerical_hamiltonian_is_consistent() {
        let m = ReflectanceModel::phong(0.1, 0.6, 0.3, 2).unwrap();
        let x = [0.2, -0.3];
        let p = [0.4, 1.1];
        let exact = hamiltonian_eff(&m, 1.0, x, 0.3, p, 0.8);
        assert_eq!(numerical_hamiltonian(&m, 1.0, x, 0.8, 0.3, p, p, [3.0, 3.0]), exact);
        let flat = numerical_hamiltonian(&m, 1.0, x, 0.8, 0.3, [0.0; 2], [0.0; 2], [3.0, 3.0]);
        assert_eq!(flat, hamiltonian_eff(&m, 1.0, x, 0.3, [0.0, 0.0], 0.8));
    }

    #[test]
    fn numerical_hamiltonian_is_monotone_in_neighbours() {
        let rig = CameraRig::square(1.0, 0.5, 33).unwrap();
        let h = [rig.hx(), rig.hy()];
        let models = [
            ReflectanceModel::lambertian(),
            ReflectanceModel::oren_nayar(0.3).unwrap(),
            ReflectanceModel::phong(0.1, 0.5, 0.4, 3).unwrap(),
            ReflectanceModel::blinn_phong(0.0, 0.7, 0.3, 8.0).unwrap(),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for m in &models {
            let eff_max = 2.0;
            let sigma = auto_sigma(m, &rig, eff_max);
            for _ in 0..2500 {
                let x = [rng.gen_range(-0.5..=0.5), rng.gen_range(-0.5..=0.5)];
                let eff = rng.gen_range(0.01..eff_max);
                let base = rng.gen_range(-1.0..1.0);
                let mut vals = [0.0; 5];
                for v in vals.iter_mut() {
                    *v = base + rng.gen_range(-0.2..0.2);
                }
                let st = |v: [f64; 5]| Stencil { center: v[0], west: v[1], east: v[2], south: v[3], north: v[4] };
                let eval = |v: [f64; 5]| {
                    let (pm, pp) = st(v).one_sided(h);
                    numerical_hamiltonian(m, rig.f(), x, eff, v[0], pm, pp, sigma)
                };
                let h0 = eval(vals);
                let which = rng.gen_range(1..5);
                let mut bumped = vals;
                bumped[which] += rng.gen_range(1e-6..0.1);
                assert!(eval(bumped) <= h0 + 1e-12, "{m:?}");
            }
        }
    }

    #[test]
    fn constant_image_recovers_constant_height() {
        let rig = CameraRig::square(1.0, 0.5, 33).unwrap();
        let v0: f64 = 0.3;
        let img = constant_image(&rig, ReflectanceModel::lambertian(), (-2.0 * v0).exp());
        let bc = BoundaryCondition::DirichletStrong(ScalarField::constant(&rig, v0));
        let sol = solve(&ReflectanceModel::lambertian(), &img, &bc, &SolverConfig::default()).unwrap();
        assert!(sol.report.converged);
        for &v in sol.v.values() {
            assert!((v - v0).abs() <= 1e-8);
        }
        for &u in sol.u.values() {
            assert!(u > 0.0);
        }
    }

    #[test]
    fn neumann_recovers_constant_height_from_offset_start() {
        let rig = CameraRig::square(1.0, 0.5, 17).unwrap();
        let v0: f64 = -0.2;
        let img = constant_image(&rig, ReflectanceModel::lambertian(), (-2.0 * v0).exp());
        for mode in [SweepMode::Jacobi, SweepMode::GaussSeidel] {
            let cfg = SolverConfig {
                init: Some(Initialization::Constant(0.4)),
                mode,
                ..Default::default()
            };
            let sol = solve(&ReflectanceModel::lambertian(), &img, &BoundaryCondition::Neumann, &cfg).unwrap();
            assert!(sol.report.converged);
            for &v in sol.v.values() {
                assert!((v - v0).abs() <= 1e-8, "{mode:?}: {v}");
            }
        }
    }

    #[test]
    fn oren_nayar_guards() {
        let rig = CameraRig::square(1.0, 0.5, 9).unwrap();
        let on = ReflectanceModel::oren_nayar(0.3).unwrap();
        let img = constant_image(&rig, on, 1.0);
        let g = ScalarField::constant(&rig, 0.0);
        for bc in [BoundaryCondition::StateConstraints, BoundaryCondition::DirichletWeak(g.clone())] {
            let err = solve(&on, &img, &bc, &SolverConfig::default()).unwrap_err();
            assert!(matches!(err, Error::IllPosed(ref m) if m.contains("Neumann")));
            assert_eq!(err.exit_code(), 2);
        }
        let rough = ReflectanceModel::oren_nayar(1.5).unwrap();
        let err = solve(&rough, &img, &BoundaryCondition::Neumann, &SolverConfig::default()).unwrap_err();
        assert!(matches!(err, Error::IllPosed(_)));
        assert!(solve(&on, &img, &BoundaryCondition::DirichletStrong(g), &SolverConfig::default()).is_ok());
    }

    #[test]
    fn dark_boundary_band_is_rejected_and_interior_is_clamped() {
        let rig = CameraRig::square(1.0, 0.5, 17).unwrap();
        let l = ReflectanceModel::lambertian();
        let mut img = constant_image(&rig, l, 1.0);
        img.intensity.set(8, 8, 0.0);
        let bc = BoundaryCondition::DirichletStrong(ScalarField::constant(&rig, 0.0));
        let sol = solve(&l, &img, &bc, &SolverConfig { max_iters: 10, ..Default::default() }).unwrap();
        assert_eq!(sol.report.clamped_pixels, 1);

        img.intensity.set(2, 8, 0.0);
        assert!(matches!(
            solve(&l, &img, &bc, &SolverConfig::default()),
            Err(Error::BoundaryBand { node: (2, 8), .. })
        ));
    }

    #[test]
    fn rejects_bad_configuration() {
        let rig = CameraRig::square(1.0, 0.5, 9).unwrap();
        let l = ReflectanceModel::lambertian();
        let img = constant_image(&rig, l, 1.0);
        let bc = BoundaryCondition::DirichletStrong(ScalarField::constant(&rig, 0.0));
        for cfg in [
            SolverConfig { cfl: 1.5, ..Default::default() },
            SolverConfig { tol: 0.0, ..Default::default() },
            SolverConfig { sigma: Some([1e-3, 1e-3]), ..Default::default() },
        ] {
            assert!(matches!(solve(&l, &img, &bc, &cfg), Err(Error::InvalidConfig(_))));
        }
        let mut g = ScalarField::constant(&rig, 0.0);
        g.set(0, 3, f64::NAN);
        assert!(solve(&l, &img, &BoundaryCondition::DirichletStrong(g), &SolverConfig::default()).is_err());
    }

    #[test]
    fn reports_non_convergence() {
        let rig = CameraRig::square(1.0, 0.5, 33).unwrap();
        let l = ReflectanceModel::lambertian();
        let hf = analytic_surface("dome", &rig, SurfaceParams::default()).unwrap();
        let img = render(&l, &hf, None).unwrap();
        let bc = BoundaryCondition::DirichletStrong(hf.log_heights());
        let sol = solve(&l, &img, &bc, &SolverConfig { max_iters: 5, ..Default::default() }).unwrap();
        assert!(!sol.report.converged);
        assert_eq!(sol.report.iterations, 5);
    }

    #[test]
    fn different_starts_reach_the_same_solution() {
        let rig = CameraRig::square(1.0, 0.5, 33).unwrap();
        let l = ReflectanceModel::lambertian();
        let hf = analytic_surface("dome", &rig, SurfaceParams::default()).unwrap();
        let img = render(&l, &hf, None).unwrap();
        let m = state_constraint_constant(&l, img.effective_intensity(&l).min(), 1.0).unwrap();
        for bc in [
            BoundaryCondition::DirichletStrong(hf.log_heights()),
            BoundaryCondition::DirichletWeak(hf.log_heights()),
        ] {
            let cfg = SolverConfig::default();
            let a = solve(&l, &img, &bc, &cfg).unwrap();
            let b = solve(&l, &img, &bc, &SolverConfig { init: Some(Initialization::Constant(m)), ..cfg.clone() }).unwrap();
            assert!(a.report.converged && b.report.converged);
            assert!(a.v.max_abs_diff(&b.v) <= 10.0 * cfg.tol, "{:?}", bc.kind());
            assert!(a.u.values().iter().all(|&u| u > 0.0));
        }
    }

    #[test]
    fn state_constraint_solution_stays_below_the_level() {
        let rig = CameraRig::square(1.0, 0.5, 17).unwrap();
        let ph = ReflectanceModel::blinn_phong(0.0, 0.6, 0.4, 3.0).unwrap();
        let hf = analytic_surface("basin", &rig, SurfaceParams::default()).unwrap();
        let img = render(&ph, &hf, None).unwrap();
        let sol = solve(&ph, &img, &BoundaryCondition::StateConstraints, &SolverConfig::default()).unwrap();
        let level = sol.report.state_constraint_level.unwrap();
        assert!(sol.report.converged);
        assert!(sol.v.max() <= level + 1e-8);
    }

    #[test]
    fn residual_field_properties() {
        let rig = CameraRig::square(1.0, 0.5, 17).unwrap();
        let l = ReflectanceModel::lambertian();
        let v0: f64 = 0.1;
        let img = constant_image(&rig, l, (-2.0 * v0).exp());
        let res = residual_field(&l, &img, &ScalarField::constant(&rig, v0));
        assert!(res.max() <= 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = ScalarField::from_fn(&rig, |_| rng.gen_range(-1.0..1.0));
        let res = residual_field(&l, &img, &noise);
        assert!(res.values().iter().all(|r| r.is_finite() && *r >= 0.0));
    }

    #[test]
    fn residual_of_sampled_dome_is_second_order() {
        let l = ReflectanceModel::lambertian();
        let err = |n: usize| {
            let rig = CameraRig::square(1.0, 0.5, n).unwrap();
            let hf = analytic_surface("dome", &rig, SurfaceParams::default()).unwrap();
            let img = render(&l, &hf, None).unwrap();
            residual_field(&l, &img, &hf.log_heights()).max()
        };
        let (e1, e2) = (err(33), err(65));
        assert!(e2 <= 0.3 * e1, "{e1} -> {e2}");
    }
}
