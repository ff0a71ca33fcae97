//! Configuration files and on-disk formats.
//!
//! * `.grid`: exact text dump of a field. Header lines `nx N`, `ny N`,
//!   `domain x_min x_max y_min y_max`, then `ny` rows of `nx` values with
//!   `j = 0` (smallest `y`) first. Values use shortest round-trip formatting.
//! * `.pgm`: 16-bit binary greymap for display, top row is the largest `y`.
//! * `.meta`: `key = value` sidecar describing a rendered image.
//! * `.ply`: ASCII triangle mesh of the reconstructed surface.

use crate::error::{Error, Result};
use crate::grid::{CameraRig, Domain, ScalarField};
use crate::scene::surface_point;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

const KNOWN_KEYS: &[&str] = &[
    "model.kind",
    "model.sigma",
    "model.k_a",
    "model.k_d",
    "model.k_s",
    "model.alpha",
    "model.c",
    "model.ambient",
    "camera.f",
    "camera.x_min",
    "camera.x_max",
    "camera.y_min",
    "camera.y_max",
    "camera.n",
    "camera.nx",
    "camera.ny",
    "surface.kind",
    "surface.u0",
    "surface.amplitude",
    "surface.width",
    "surface.file",
    "image.file",
    "bc.kind",
    "bc.source",
    "bc.file",
    "bc.value",
    "solver.cfl",
    "solver.tol",
    "solver.max_iters",
    "solver.init",
    "solver.init_value",
    "solver.mode",
    "solver.delta_min",
    "solver.band_width",
    "solver.residual_factor",
    "solver.certify",
    "solver.sigma",
    "probe.R",
    "probe.samples",
    "probe.seed",
    "probe.delta",
    "pipeline.levels",
    "output.dir",
];

/// Flat `key = value` configuration. `[section]` headers prefix the keys that follow.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    entries: BTreeMap<String, String>,
    base: Option<PathBuf>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected `key = value`", n + 1)))?;
            let key = key.trim();
            let key = if section.is_empty() || key.contains('.') { key.to_string() } else { format!("{section}.{key}") };
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(Error::InvalidConfig(format!("line {}: unknown key `{key}`", n + 1)));
            }
            let value = value.trim().trim_matches('"').to_string();
            if entries.insert(key.clone(), value).is_some() {
                return Err(Error::InvalidConfig(format!("line {}: duplicate key `{key}`", n + 1)));
            }
        }
        Ok(Config { entries, base: None })
    }

    /// Read a config file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let mut cfg = Config::parse(&text)?;
        cfg.base = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn str_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.get(key).unwrap_or(default)
    }

    pub fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|v| v.parse::<T>().map_err(|_| Error::InvalidConfig(format!("`{key}`: cannot parse `{v}`"))))
            .transpose()
    }

    pub fn parsed_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.parsed(key)?.unwrap_or(default))
    }

    /// A path from the config, resolved against the config file's directory.
    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(|p| match &self.base {
            Some(base) if Path::new(p).is_relative() => base.join(p),
            _ => PathBuf::from(p),
        })
    }
}

pub fn format_grid(rig: &CameraRig, field: &ScalarField) -> Result<String> {
    field.ensure_matches(rig, "grid output")?;
    let d = rig.domain();
    let mut s = String::new();
    let _ = writeln!(s, "nx {}\nny {}\ndomain {} {} {} {}", rig.nx(), rig.ny(), d.x_min, d.x_max, d.y_min, d.y_max);
    for j in 0..rig.ny() {
        let row: Vec<String> = (0..rig.nx()).map(|i| format!("{}", field.at(i, j))).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    Ok(s)
}

/// Parse a `.grid` file; the focal length is not stored and must be supplied.
pub fn parse_grid(text: &str, f: f64) -> Result<(CameraRig, ScalarField)> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let mut header = |name: &str| -> Result<Vec<f64>> {
        let line = lines.next().ok_or_else(|| Error::Parse(format!("grid: missing `{name}` line")))?;
        let mut it = line.split_whitespace();
        if it.next() != Some(name) {
            return Err(Error::Parse(format!("grid: expected `{name}`, found `{line}`")));
        }
        it.map(|t| t.parse::<f64>().map_err(|_| Error::Parse(format!("grid: bad number `{t}`"))))
            .collect()
    };
    let nx = header("nx")?;
    let ny = header("ny")?;
    let dom = header("domain")?;
    if nx.len() != 1 || ny.len() != 1 || dom.len() != 4 {
        return Err(Error::Parse("grid: malformed header".into()));
    }
    let (nx, ny) = (nx[0] as usize, ny[0] as usize);
    let rig = CameraRig::new(f, Domain::new(dom[0], dom[1], dom[2], dom[3]), nx, ny)?;
    let mut data = Vec::with_capacity(nx * ny);
    for line in lines {
        for t in line.split_whitespace() {
            data.push(t.parse::<f64>().map_err(|_| Error::Parse(format!("grid: bad number `{t}`")))?);
        }
    }
    if data.len() != nx * ny {
        return Err(Error::Parse(format!("grid: expected {} values, found {}", nx * ny, data.len())));
    }
    Ok((rig, ScalarField::from_vec(nx, ny, data)?))
}

pub fn read_grid(path: &Path, f: f64) -> Result<(CameraRig, ScalarField)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_grid(&text, f)
}

/// 16-bit PGM of `field` with values in `[0, 1]` mapped to `0..=65535`.
pub fn encode_pgm(field: &ScalarField) -> Vec<u8> {
    let (nx, ny) = (field.nx(), field.ny());
    let mut out = format!("P5\n{nx} {ny}\n65535\n").into_bytes();
    out.reserve(2 * nx * ny);
    for j in (0..ny).rev() {
        for i in 0..nx {
            let q = (field.at(i, j).clamp(0.0, 1.0) * 65535.0).round() as u16;
            out.extend_from_slice(&q.to_be_bytes());
        }
    }
    out
}

/// Decode a binary PGM (8 or 16 bit) into values in `[0, 1]`.
pub fn decode_pgm(bytes: &[u8]) -> Result<ScalarField> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Parse("pgm: truncated header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err(Error::Parse("pgm: only binary P5 is supported".into()));
    }
    let num = |s: String| s.parse::<usize>().map_err(|_| Error::Parse(format!("pgm: bad header value `{s}`")));
    let nx = num(token()?)?;
    let ny = num(token()?)?;
    let maxval = num(token()?)?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Parse(format!("pgm: invalid maxval {maxval}")));
    }
    let body = &bytes[(pos + 1).min(bytes.len())..];
    let width = if maxval > 255 { 2 } else { 1 };
    if body.len() < nx * ny * width {
        return Err(Error::Parse("pgm: truncated pixel data".into()));
    }
    let mut data = vec![0.0; nx * ny];
    for row in 0..ny {
        let j = ny - 1 - row;
        for i in 0..nx {
            let k = (row * nx + i) * width;
            let raw = if width == 2 { u16::from_be_bytes([body[k], body[k + 1]]) as usize } else { body[k] as usize };
            data[j * nx + i] = raw as f64 / maxval as f64;
        }
    }
    ScalarField::from_vec(nx, ny, data)
}

/// `key = value` lines, sorted by key.
pub fn format_meta(entries: &BTreeMap<String, String>) -> String {
    entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

pub fn parse_meta(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("meta line {}: expected `key = value`", n + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

/// ASCII PLY mesh of the surface points `S(x) = u(x) (x, -f) / sqrt(|x|^2 + f^2)`.
pub fn format_ply(rig: &CameraRig, u: &ScalarField) -> Result<String> {
    u.ensure_matches(rig, "mesh heights")?;
    let (nx, ny) = (rig.nx(), rig.ny());
    let faces = 2 * (nx - 1) * (ny - 1);
    let mut s = String::new();
    let _ = write!(
        s,
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\n\
         element face {faces}\nproperty list uchar int vertex_indices\nend_header\n",
        nx * ny
    );
    for j in 0..ny {
        for i in 0..nx {
            let p = surface_point(rig.node(i, j), u.at(i, j), rig.f());
            let _ = writeln!(s, "{} {} {}", p[0], p[1], p[2]);
        }
    }
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let a = rig.index(i, j);
            let b = rig.index(i + 1, j);
            let c = rig.index(i + 1, j + 1);
            let d = rig.index(i, j + 1);
            let _ = writeln!(s, "3 {a} {b} {c}\n3 {a} {c} {d}");
        }
    }
    Ok(s)
}

/// Files written together: either all of them appear in the directory or none.
#[derive(Debug, Default)]
pub struct OutputSet {
    files: Vec<(String, Vec<u8>)>,
}

impl OutputSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, contents: impl Into<Vec<u8>>) {
        self.files.push((name.to_string(), contents.into()));
    }

    /// Write to temporaries, then rename into place. Returns the final paths.
    pub fn commit(self, dir: &Path) -> Result<Vec<PathBuf>> {
        if !dir.is_dir() {
            return Err(Error::io(
                format!("output directory {}", dir.display()),
                std::io::Error::new(std::io::ErrorKind::NotFound, "does not exist"),
            ));
        }
        let mut staged = Vec::new();
        let cleanup = |staged: &[(PathBuf, PathBuf)]| {
            for (tmp, _) in staged {
                let _ = fs::remove_file(tmp);
            }
        };
        for (name, data) in &self.files {
            let tmp = dir.join(format!(".{name}.partial"));
            if let Err(e) = fs::write(&tmp, data) {
                cleanup(&staged);
                let _ = fs::remove_file(&tmp);
                return Err(Error::io(format!("writing {}", tmp.display()), e));
            }
            staged.push((tmp, dir.join(name)));
        }
        let mut done = Vec::new();
        for (tmp, dest) in &staged {
            if let Err(e) = fs::rename(tmp, dest) {
                cleanup(&staged);
                for d in &done {
                    let _ = fs::remove_file(d);
                }
                return Err(Error::io(format!("renaming to {}", dest.display()), e));
            }
            done.push(dest.clone());
        }
        Ok(done)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_sections_comments_and_errors() {
        let cfg = Config::parse("# demo\n[model]\nkind = PH  # phong\nalpha=3\n[camera]\nn = 17\nsolver.tol = 1e-6\n").unwrap();
        assert_eq!(cfg.get("model.kind"), Some("PH"));
        assert_eq!(cfg.parsed::<u32>("model.alpha").unwrap(), Some(3));
        assert_eq!(cfg.parsed_or("camera.n", 5usize).unwrap(), 17);
        assert_eq!(cfg.get("solver.tol"), Some("1e-6"));
        assert!(Config::parse("model.kind L").is_err());
        assert!(Config::parse("model.colour = red").is_err());
        assert!(Config::parse("model.kind = L\nmodel.kind = PH").is_err());
        assert!(Config::parse("camera.f = x").unwrap().parsed::<f64>("camera.f").is_err());
    }

    #[test]
    fn grid_round_trip_is_exact() {
        let rig = CameraRig::new(1.0, Domain::new(-0.5, 0.7, -0.3, 0.4), 5, 4).unwrap();
        let field = ScalarField::from_fn(&rig, |x| (x[0] * 3.1).sin() / 7.0 + x[1].exp());
        let text = format_grid(&rig, &field).unwrap();
        let (rig2, back) = parse_grid(&text, 1.0).unwrap();
        assert_eq!(rig2, rig);
        assert_eq!(back, field);
        assert!(parse_grid("nx 2\nny 2\ndomain 0 1 0 1\n1 2 3\n", 1.0).is_err());
    }

    #[test]
    fn pgm_round_trip_within_quantization() {
        let rig = CameraRig::square(1.0, 0.5, 7).unwrap();
        let field = ScalarField::from_fn(&rig, |x| 0.5 + x[0] * x[1]);
        let back = decode_pgm(&encode_pgm(&field)).unwrap();
        assert!(back.max_abs_diff(&field) <= 0.5 / 65535.0 + 1e-15);
        // Top row of the file is the largest y.
        let bytes = encode_pgm(&field);
        let header = b"P5\n7 7\n65535\n".len();
        let first = u16::from_be_bytes([bytes[header], bytes[header + 1]]) as f64 / 65535.0;
        assert!((first - field.at(0, 6)).abs() < 1e-4);
        assert!(decode_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(decode_pgm(b"P5\n4 4\n255\n\x00").is_err());
    }

    #[test]
    fn meta_round_trip() {
        let mut m = BTreeMap::new();
        m.insert("f".to_string(), "1.5".to_string());
        m.insert("model".to_string(), "L".to_string());
        assert_eq!(parse_meta(&format_meta(&m)).unwrap(), m);
    }

    #[test]
    fn ply_counts() {
        let rig = CameraRig::square(1.0, 0.5, 4).unwrap();
        let u = ScalarField::constant(&rig, 2.0);
        let ply = format_ply(&rig, &u).unwrap();
        assert!(ply.contains("element vertex 16") && ply.contains("element face 18"));
        let body: Vec<&str> = ply.split("end_header\n").nth(1).unwrap().lines().collect();
        assert_eq!(body.len(), 16 + 18);
    }

    #[test]
    fn output_set_is_all_or_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope");
        let mut set = OutputSet::new();
        set.add("a.txt", "a");
        assert!(set.commit(&missing).is_err());
        assert!(!missing.exists());

        let mut set = OutputSet::new();
        set.add("a.txt", "a");
        set.add("b.txt", "b");
        let paths = set.commit(dir.path()).unwrap();
        assert_eq!(paths.len(), 2);
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 2);
    }
}
