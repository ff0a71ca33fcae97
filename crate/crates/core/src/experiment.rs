//! Configuration-driven experiments behind the command-line tool.

use crate::error::{Error, Result};
use crate::grid::{CameraRig, Domain, ScalarField};
use crate::io::{self, Config, OutputSet};
use crate::model::{ModelKind, ReflectanceModel};
use crate::probe::{run_suite, ProbeConfig, ProbeReport};
use crate::scene::{analytic_surface, render, HeightField, RenderedImage, SurfaceParams};
use crate::solver::{
    solve, BoundaryCondition, BoundaryKind, Initialization, SolveReport, SolverConfig, SweepMode,
};
use serde::Serialize;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

/// Exit code for a solve that did not reach its tolerance.
pub const EXIT_NOT_CONVERGED: i32 = 3;

#[derive(Debug, Clone)]
pub struct CommandOutcome {
    pub exit_code: i32,
    pub summary: String,
    pub files: Vec<PathBuf>,
}

pub fn model_from_config(cfg: &Config) -> Result<ReflectanceModel> {
    let kind = ModelKind::from_tag(cfg.str_or("model.kind", "L"))?;
    let k_a = cfg.parsed_or("model.k_a", 0.0)?;
    let k_d = cfg.parsed_or("model.k_d", 0.7)?;
    let k_s = cfg.parsed_or("model.k_s", 0.3)?;
    match kind {
        ModelKind::Lambertian => Ok(ReflectanceModel::lambertian()),
        ModelKind::OrenNayar => ReflectanceModel::oren_nayar(cfg.parsed_or("model.sigma", 0.3)?),
        ModelKind::Phong => ReflectanceModel::phong(k_a, k_d, k_s, cfg.parsed_or("model.alpha", 2)?),
        ModelKind::BlinnPhong => ReflectanceModel::blinn_phong(k_a, k_d, k_s, cfg.parsed_or("model.c", 4.0)?),
    }
}

pub fn rig_from_config(cfg: &Config) -> Result<CameraRig> {
    let n = cfg.parsed_or("camera.n", 65usize)?;
    let domain = Domain::new(
        cfg.parsed_or("camera.x_min", -0.5)?,
        cfg.parsed_or("camera.x_max", 0.5)?,
        cfg.parsed_or("camera.y_min", -0.5)?,
        cfg.parsed_or("camera.y_max", 0.5)?,
    );
    CameraRig::new(
        cfg.parsed_or("camera.f", 1.0)?,
        domain,
        cfg.parsed_or("camera.nx", n)?,
        cfg.parsed_or("camera.ny", n)?,
    )
}

pub fn surface_params(cfg: &Config) -> Result<SurfaceParams> {
    let d = SurfaceParams::default();
    Ok(SurfaceParams {
        u0: cfg.parsed_or("surface.u0", d.u0)?,
        amplitude: cfg.parsed_or("surface.amplitude", d.amplitude)?,
        width: cfg.parsed_or("surface.width", d.width)?,
    })
}

/// The ground-truth surface: a `.grid` of heights or a named analytic surface on `rig`.
pub fn surface_from_config(cfg: &Config, rig: &CameraRig) -> Result<HeightField> {
    if let Some(path) = cfg.path("surface.file") {
        let (file_rig, u) = io::read_grid(&path, rig.f())?;
        return HeightField::new(file_rig, u);
    }
    analytic_surface(cfg.str_or("surface.kind", "dome"), rig, surface_params(cfg)?)
}

fn ambient_from_config(cfg: &Config, rig: &CameraRig) -> Result<Option<ScalarField>> {
    Ok(cfg.parsed::<f64>("model.ambient")?.map(|a| ScalarField::constant(rig, a)))
}

/// Render the configured surface under the configured model.
pub fn render_scene(cfg: &Config) -> Result<(HeightField, RenderedImage)> {
    let rig = rig_from_config(cfg)?;
    let model = model_from_config(cfg)?;
    let surface = surface_from_config(cfg, &rig)?;
    let ambient = ambient_from_config(cfg, surface.rig())?;
    let image = render(&model, &surface, ambient.as_ref())?;
    Ok((surface, image))
}

fn model_meta(model: &ReflectanceModel, meta: &mut BTreeMap<String, String>) {
    meta.insert("model".into(), model.kind().tag().into());
    match *model {
        ReflectanceModel::Lambertian => {}
        ReflectanceModel::OrenNayar(on) => {
            meta.insert("sigma".into(), on.sigma().to_string());
        }
        ReflectanceModel::Phong { weights, alpha } => {
            meta.insert("alpha".into(), alpha.to_string());
            weights_meta(weights, meta);
        }
        ReflectanceModel::BlinnPhong { weights, c } => {
            meta.insert("c".into(), c.to_string());
            weights_meta(weights, meta);
        }
    }
}

fn weights_meta(w: crate::model::ComponentWeights, meta: &mut BTreeMap<String, String>) {
    meta.insert("k_a".into(), w.k_a().to_string());
    meta.insert("k_d".into(), w.k_d().to_string());
    meta.insert("k_s".into(), w.k_s().to_string());
}

/// Stage `image.pgm` (normalized to a maximum of one), `image.meta` and
/// `image.grid` (exact physical values).
pub fn stage_image(image: &RenderedImage, set: &mut OutputSet) -> Result<()> {
    let rig = image.rig;
    let physical = image.physical();
    let display = image.normalized();
    let d = rig.domain();
    let mut meta = BTreeMap::new();
    meta.insert("format".into(), "psfs-image-1".into());
    meta.insert("nx".into(), rig.nx().to_string());
    meta.insert("ny".into(), rig.ny().to_string());
    meta.insert("f".into(), rig.f().to_string());
    meta.insert("domain".into(), format!("{} {} {} {}", d.x_min, d.x_max, d.y_min, d.y_max));
    meta.insert("normalization".into(), display.normalization.to_string());
    meta.insert("pgm".into(), "image.pgm".into());
    meta.insert("grid".into(), "image.grid".into());
    if let Some(a) = &image.ambient {
        meta.insert("ambient_grid".into(), "ambient.grid".into());
        set.add("ambient.grid", io::format_grid(&rig, a)?);
    }
    model_meta(&image.model, &mut meta);
    set.add("image.pgm", io::encode_pgm(&display.intensity));
    set.add("image.grid", io::format_grid(&rig, &physical)?);
    set.add("image.meta", io::format_meta(&meta));
    Ok(())
}

/// Read an image written by [`stage_image`], preferring the exact grid over the PGM.
/// A PGM-only image keeps the recorded normalization.
pub fn load_image(meta_path: &Path) -> Result<RenderedImage> {
    let text = fs::read_to_string(meta_path).map_err(|e| Error::io(format!("reading {}", meta_path.display()), e))?;
    let meta = io::parse_meta(&text)?;
    let dir = meta_path.parent().unwrap_or(Path::new("."));
    let get = |k: &str| meta.get(k).map(String::as_str).ok_or_else(|| Error::Parse(format!("meta: missing `{k}`")));
    let num = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| Error::Parse(format!("meta: bad `{k}`"))) };
    let f = num("f")?;
    let nx = num("nx")? as usize;
    let ny = num("ny")? as usize;
    let dom: Vec<f64> = get("domain")?
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::Parse("meta: bad domain".into())))
        .collect::<Result<_>>()?;
    if dom.len() != 4 {
        return Err(Error::Parse("meta: domain needs four numbers".into()));
    }
    let rig = CameraRig::new(f, Domain::new(dom[0], dom[1], dom[2], dom[3]), nx, ny)?;

    let mut model_cfg = Config::default();
    model_cfg.set("model.kind", get("model")?);
    for k in ["sigma", "alpha", "c", "k_a", "k_d", "k_s"] {
        if let Some(v) = meta.get(k) {
            model_cfg.set(&format!("model.{k}"), v.clone());
        }
    }
    let model = model_from_config(&model_cfg)?;

    let (intensity, normalization) = match meta.get("grid").map(|g| dir.join(g)).filter(|p| p.exists()) {
        Some(p) => (io::read_grid(&p, f)?.1, 1.0),
        None => {
            let p = dir.join(get("pgm")?);
            let bytes = fs::read(&p).map_err(|e| Error::io(format!("reading {}", p.display()), e))?;
            (io::decode_pgm(&bytes)?, num("normalization")?)
        }
    };
    intensity.ensure_matches(&rig, "image")?;
    let ambient = match meta.get("ambient_grid") {
        Some(g) => Some(io::read_grid(&dir.join(g), f)?.1),
        None => None,
    };
    Ok(RenderedImage {
        rig,
        intensity,
        model,
        ambient,
        normalization,
    })
}

/// The configured image: loaded from `image.file`, or rendered from the configured surface.
fn image_from_config(cfg: &Config) -> Result<(Option<HeightField>, RenderedImage)> {
    match cfg.path("image.file") {
        Some(p) => Ok((None, load_image(&p)?)),
        None => {
            let (s, i) = render_scene(cfg)?;
            Ok((Some(s), i))
        }
    }
}

pub fn solver_config(cfg: &Config) -> Result<SolverConfig> {
    let d = SolverConfig::default();
    let mode = match cfg.str_or("solver.mode", "jacobi").to_ascii_lowercase().as_str() {
        "jacobi" => SweepMode::Jacobi,
        "gauss_seidel" | "gauss-seidel" | "gs" => SweepMode::GaussSeidel,
        other => return Err(Error::InvalidConfig(format!("unknown solver.mode `{other}`"))),
    };
    let init = match cfg.get("solver.init").map(str::to_ascii_lowercase).as_deref() {
        None | Some("auto") => None,
        Some("boundary") | Some("boundary_extension") => Some(Initialization::BoundaryExtension),
        Some("constant") => {
            let value: f64 = cfg
                .parsed("solver.init_value")?
                .ok_or_else(|| Error::InvalidConfig("solver.init = constant needs solver.init_value".into()))?;
            Some(Initialization::Constant(value))
        }
        Some(other) => return Err(Error::InvalidConfig(format!("unknown solver.init `{other}`"))),
    };
    let sigma = cfg.parsed::<f64>("solver.sigma")?.map(|s| [s, s]);
    Ok(SolverConfig {
        cfl: cfg.parsed_or("solver.cfl", d.cfl)?,
        sigma,
        tol: cfg.parsed_or("solver.tol", d.tol)?,
        residual_factor: cfg.parsed_or("solver.residual_factor", d.residual_factor)?,
        certify_distance: cfg.parsed_or("solver.certify", d.certify_distance)?,
        max_iters: cfg.parsed_or("solver.max_iters", d.max_iters)?,
        init,
        intensity_floor: cfg.parsed_or("solver.delta_min", d.intensity_floor)?,
        band_width: cfg.parsed_or("solver.band_width", d.band_width)?,
        mode,
        range_refresh: d.range_refresh,
    })
}

/// Boundary condition from `bc.kind` and `bc.source` (`surface`, `value` or `file`).
pub fn boundary_from_config(cfg: &Config, rig: &CameraRig, truth: Option<&HeightField>) -> Result<BoundaryCondition> {
    let kind = BoundaryKind::parse(cfg.str_or("bc.kind", "dirichlet_strong"))?;
    match kind {
        BoundaryKind::Neumann => return Ok(BoundaryCondition::Neumann),
        BoundaryKind::StateConstraints => return Ok(BoundaryCondition::StateConstraints),
        _ => {}
    }
    let heights = match cfg.str_or("bc.source", "surface") {
        "surface" => match truth {
            Some(t) => t.heights().clone(),
            None => surface_from_config(cfg, rig)?.heights().clone(),
        },
        "value" => {
            let v: f64 = cfg
                .parsed("bc.value")?
                .ok_or_else(|| Error::InvalidConfig("bc.source = value needs bc.value".into()))?;
            ScalarField::constant(rig, v)
        }
        "file" => {
            let p = cfg
                .path("bc.file")
                .ok_or_else(|| Error::InvalidConfig("bc.source = file needs bc.file".into()))?;
            io::read_grid(&p, rig.f())?.1
        }
        other => return Err(Error::InvalidConfig(format!("unknown bc.source `{other}`"))),
    };
    heights.ensure_matches(rig, "boundary heights")?;
    BoundaryCondition::from_heights(kind, &heights)
}

pub fn cmd_render(cfg: &Config, out: &Path) -> Result<CommandOutcome> {
    let (surface, image) = render_scene(cfg)?;
    let normalization = image.normalized().normalization;
    let mut set = OutputSet::new();
    stage_image(&image, &mut set)?;
    set.add("surface.grid", io::format_grid(surface.rig(), surface.heights())?);
    let files = set.commit(out)?;
    Ok(CommandOutcome {
        exit_code: 0,
        summary: format!(
            "rendered {}x{} image under {} (normalization {})",
            image.rig.nx(),
            image.rig.ny(),
            image.model.kind().tag(),
            normalization
        ),
        files,
    })
}

fn solve_exit(report: &SolveReport) -> i32 {
    if report.converged {
        0
    } else {
        EXIT_NOT_CONVERGED
    }
}

pub fn cmd_solve(cfg: &Config, out: &Path) -> Result<CommandOutcome> {
    let (truth, image) = image_from_config(cfg)?;
    let model = if cfg.get("model.kind").is_some() { model_from_config(cfg)? } else { image.model };
    let bc = boundary_from_config(cfg, &image.rig, truth.as_ref())?;
    let sol = solve(&model, &image, &bc, &solver_config(cfg)?)?;
    let rig = image.rig;
    let mut set = OutputSet::new();
    set.add("v.grid", io::format_grid(&rig, &sol.v)?);
    set.add("u.grid", io::format_grid(&rig, &sol.u)?);
    set.add("surface.ply", io::format_ply(&rig, &sol.u)?);
    set.add("solve_report.json", to_json(&sol.report)?);
    let files = set.commit(out)?;
    let r = &sol.report;
    Ok(CommandOutcome {
        exit_code: solve_exit(r),
        summary: format!(
            "{} after {} iterations (scheme residual {:.3e}, max update {:.3e})",
            if r.converged { "converged" } else { "did not converge" },
            r.iterations,
            r.scheme_residual,
            r.max_update
        ),
        files,
    })
}

pub fn probe_image(cfg: &Config, seed: u64) -> Result<ProbeReport> {
    let (_, image) = image_from_config(cfg)?;
    let model = if cfg.get("model.kind").is_some() { model_from_config(cfg)? } else { image.model };
    let d = ProbeConfig::default();
    let config = ProbeConfig {
        seed,
        samples: cfg.parsed_or("probe.samples", d.samples)?,
        r_bound: cfg.parsed_or("probe.R", d.r_bound)?,
        band_width: cfg.parsed_or("solver.band_width", d.band_width)?,
        intensity_floor: cfg.parsed_or("solver.delta_min", d.intensity_floor)?,
        delta: cfg.parsed("probe.delta")?,
    };
    run_suite(&model, &image, &config)
}

pub fn cmd_probe(cfg: &Config, seed: Option<u64>, out: &Path) -> Result<CommandOutcome> {
    let seed = match seed {
        Some(s) => s,
        None => cfg.parsed_or("probe.seed", 0)?,
    };
    let report = probe_image(cfg, seed)?;
    let mut set = OutputSet::new();
    set.add("probe_report.json", to_json(&report)?);
    let files = set.commit(out)?;
    let lines: Vec<String> = report
        .checks
        .iter()
        .map(|c| format!("{:<24} {:?} ({} samples, {} violations)", c.name, c.outcome, c.samples, c.violations))
        .collect();
    Ok(CommandOutcome {
        exit_code: if report.passed { 0 } else { 1 },
        summary: lines.join("\n"),
        files,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelResult {
    pub n: usize,
    pub h: f64,
    pub converged: bool,
    pub iterations: usize,
    pub linf_error: f64,
    pub l1_error: f64,
    pub scheme_residual: f64,
    pub pde_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineReport {
    pub model: ModelKind,
    pub boundary: BoundaryKind,
    pub surface: String,
    pub levels: Vec<LevelResult>,
    /// `linf_error[k + 1] / linf_error[k]`.
    pub linf_ratios: Vec<f64>,
}

/// Render, solve and compare with the ground truth on a sequence of grids.
pub fn run_pipeline(cfg: &Config) -> Result<PipelineReport> {
    let levels: Vec<usize> = match cfg.get("pipeline.levels") {
        Some(s) => s
            .split([',', ' '])
            .filter(|t| !t.is_empty())
            .map(|t| t.parse().map_err(|_| Error::InvalidConfig(format!("pipeline.levels: bad level `{t}`"))))
            .collect::<Result<_>>()?,
        None => vec![33, 65, 129],
    };
    if levels.is_empty() {
        return Err(Error::InvalidConfig("pipeline.levels is empty".into()));
    }
    let model = model_from_config(cfg)?;
    let solver = solver_config(cfg)?;
    let mut results = Vec::new();
    let mut kind = BoundaryKind::DirichletStrong;
    for &n in &levels {
        let mut level_cfg = cfg.clone();
        level_cfg.set("camera.n", n.to_string());
        level_cfg.set("camera.nx", n.to_string());
        level_cfg.set("camera.ny", n.to_string());
        let rig = rig_from_config(&level_cfg)?;
        let truth = analytic_surface(cfg.str_or("surface.kind", "dome"), &rig, surface_params(cfg)?)?;
        let ambient = ambient_from_config(cfg, &rig)?;
        let image = render(&model, &truth, ambient.as_ref())?;
        let bc = boundary_from_config(&level_cfg, &rig, Some(&truth))?;
        kind = bc.kind();
        let sol = solve(&model, &image, &bc, &solver)?;
        results.push(LevelResult {
            n,
            h: rig.hx(),
            converged: sol.report.converged,
            iterations: sol.report.iterations,
            linf_error: sol.u.max_abs_diff(truth.heights()),
            l1_error: sol.u.mean_abs_diff(truth.heights()),
            scheme_residual: sol.report.scheme_residual,
            pde_residual: sol.report.pde_residual,
        });
    }
    let linf_ratios = results.windows(2).map(|w| w[1].linf_error / w[0].linf_error).collect();
    Ok(PipelineReport {
        model: model.kind(),
        boundary: kind,
        surface: cfg.str_or("surface.kind", "dome").to_string(),
        levels: results,
        linf_ratios,
    })
}

pub fn cmd_pipeline(cfg: &Config, out: &Path) -> Result<CommandOutcome> {
    let report = run_pipeline(cfg)?;
    let mut set = OutputSet::new();
    set.add("pipeline_report.json", to_json(&report)?);
    let files = set.commit(out)?;
    let all = report.levels.iter().all(|l| l.converged);
    let lines: Vec<String> = report
        .levels
        .iter()
        .map(|l| format!("n = {:>4}: Linf {:.3e}, L1 {:.3e}, {} iterations", l.n, l.linf_error, l.l1_error, l.iterations))
        .collect();
    Ok(CommandOutcome {
        exit_code: if all { 0 } else { EXIT_NOT_CONVERGED },
        summary: lines.join("\n"),
        files,
    })
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Parse(format!("serializing report: {e}")))
}
