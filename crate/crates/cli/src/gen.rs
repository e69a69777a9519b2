//! Builtin test-corpus generator: writes fields and masks in the shared
//! on-disk format.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use arealab::{io, synth, BoxRegion, Grid, RegionMask, ScalarField, VectorField};

use crate::{CliResult, Failure};

/// Builtin name, accepted keys, and the default dimension.
const BUILTINS: &[(&str, &[&str], usize)] = &[
    ("identity-map", &["n", "shape", "lo", "hi", "file"], 2),
    ("linear-map", &["n", "shape", "lo", "hi", "matrix", "file"], 2),
    ("fold1d", &["shape", "lo", "hi", "file"], 1),
    ("fold2d", &["shape", "lo", "hi", "file"], 2),
    ("bump", &["n", "shape", "lo", "hi", "center", "radius", "file"], 2),
    ("ball", &["n", "shape", "lo", "hi", "center", "radius", "file"], 2),
    ("ball-mask", &["n", "shape", "lo", "hi", "center", "radius", "file"], 2),
    ("box-mask", &["n", "shape", "lo", "hi", "min", "max", "file"], 2),
    ("singular", &["n", "shape", "lo", "hi", "gamma", "mollify", "file"], 1),
    ("singular-map", &["shape", "lo", "hi", "gamma", "mollify", "file"], 1),
    ("oscillatory", &["n", "shape", "lo", "hi", "file"], 1),
    ("constant", &["n", "shape", "lo", "hi", "value", "file"], 1),
];

struct Args {
    map: BTreeMap<String, String>,
}

impl Args {
    fn parse(params: &[String], allowed: &[&str]) -> CliResult<Args> {
        let mut map = BTreeMap::new();
        for raw in params {
            let (k, v) = raw.split_once('=').ok_or_else(|| {
                Failure::Input(format!("parameter '{raw}' is not of the form key=value"))
            })?;
            if !allowed.contains(&k) {
                return Err(Failure::Input(format!(
                    "unknown key '{k}'; accepted: {}",
                    allowed.join(", ")
                )));
            }
            if map.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Failure::Input(format!("key '{k}' given twice")));
            }
        }
        Ok(Args { map })
    }

    fn str(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    fn f64(&self, key: &str, default: f64) -> CliResult<f64> {
        match self.str(key) {
            None => Ok(default),
            Some(s) => s
                .parse()
                .map_err(|_| Failure::Input(format!("{key}='{s}' is not a number"))),
        }
    }

    fn usize(&self, key: &str, default: usize) -> CliResult<usize> {
        match self.str(key) {
            None => Ok(default),
            Some(s) => s
                .parse()
                .map_err(|_| Failure::Input(format!("{key}='{s}' is not a whole number"))),
        }
    }

    /// A length; a trailing `h` means multiples of the grid spacing.
    fn length(&self, key: &str, h: f64, default: f64) -> CliResult<f64> {
        match self.str(key) {
            None => Ok(default),
            Some(s) => parse_length(s, h)
                .ok_or_else(|| Failure::Input(format!("{key}='{s}' is not a length"))),
        }
    }

    fn coords(&self, key: &str, dim: usize, default: f64) -> CliResult<Vec<f64>> {
        match self.str(key) {
            None => Ok(vec![default; dim]),
            Some(s) => {
                let vals: Option<Vec<f64>> =
                    s.split(',').map(|t| t.trim().parse().ok()).collect();
                let vals = vals.ok_or_else(|| {
                    Failure::Input(format!("{key}='{s}' is not a comma-separated point"))
                })?;
                if vals.len() != dim {
                    return Err(Failure::Input(format!(
                        "{key} needs {dim} coordinates, got {}",
                        vals.len()
                    )));
                }
                Ok(vals)
            }
        }
    }

    fn matrix(&self, key: &str, n: usize) -> CliResult<Vec<f64>> {
        let Some(s) = self.str(key) else {
            // Identity by default.
            let mut m = vec![0.0; n * n];
            for i in 0..n {
                m[i * n + i] = 1.0;
            }
            return Ok(m);
        };
        let mut flat = Vec::new();
        let rows: Vec<&str> = s.split(';').collect();
        if rows.len() != n {
            return Err(Failure::Input(format!(
                "{key} needs {n} rows separated by ';', got {}",
                rows.len()
            )));
        }
        for row in rows {
            let entries: Option<Vec<f64>> =
                row.split(',').map(|t| t.trim().parse().ok()).collect();
            let entries = entries
                .ok_or_else(|| Failure::Input(format!("{key} row '{row}' is not numeric")))?;
            if entries.len() != n {
                return Err(Failure::Input(format!(
                    "{key} rows need {n} entries, got {}",
                    entries.len()
                )));
            }
            flat.extend(entries);
        }
        Ok(flat)
    }
}

fn parse_length(s: &str, h: f64) -> Option<f64> {
    if let Some(prefix) = s.strip_suffix('h') {
        if prefix.is_empty() {
            Some(h)
        } else {
            prefix.parse::<f64>().ok().map(|v| v * h)
        }
    } else {
        s.parse().ok()
    }
}

fn grid(args: &Args, n_default: usize, shape_default: usize) -> CliResult<Grid> {
    let n = args.usize("n", n_default)?;
    let shape = args.usize("shape", shape_default)?;
    let lo = args.f64("lo", -1.0)?;
    let hi = args.f64("hi", 1.0)?;
    Ok(Grid::cube(n, lo, hi, shape)?)
}

fn out_path(out: &Path, args: &Args, default_stem: &str) -> PathBuf {
    let stem = args.str("file").unwrap_or(default_stem);
    out.join(format!("{stem}.toml"))
}

fn save_scalar(path: &Path, f: &ScalarField) -> CliResult<()> {
    io::write_scalar(path, f).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn save_vector(path: &Path, f: &VectorField) -> CliResult<()> {
    io::write_vector(path, f).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn save_mask(path: &Path, m: &RegionMask) -> CliResult<()> {
    io::write_mask(path, m).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn run(name: &str, params: &[String], out: &Path) -> CliResult<()> {
    let (_, allowed, n_default) = BUILTINS
        .iter()
        .find(|(n, _, _)| *n == name)
        .ok_or_else(|| {
            Failure::Input(format!(
                "unknown builtin '{name}'; available: {}",
                BUILTINS.iter().map(|(n, _, _)| *n).collect::<Vec<_>>().join(", ")
            ))
        })?;
    let args = Args::parse(params, allowed)?;
    std::fs::create_dir_all(out).map_err(|e| Failure::Input(format!("{}: {e}", out.display())))?;
    let stem = name.replace('-', "_");
    let path = out_path(out, &args, &stem);

    match name {
        "identity-map" => {
            let g = grid(&args, *n_default, 65)?;
            save_vector(&path, &synth::identity_map(&g))
        }
        "linear-map" => {
            let g = grid(&args, *n_default, 65)?;
            let m = args.matrix("matrix", g.dim())?;
            save_vector(&path, &synth::linear_map(&g, &m)?)
        }
        "fold1d" => {
            let g = grid(&args, *n_default, 1001)?;
            save_vector(&path, &synth::fold1d(&g)?)
        }
        "fold2d" => {
            let g = grid(&args, *n_default, 129)?;
            save_vector(&path, &synth::fold2d(&g)?)
        }
        "bump" => {
            let g = grid(&args, *n_default, 65)?;
            let center = args.coords("center", g.dim(), 0.0)?;
            let radius = args.length("radius", g.spacing(), 0.5)?;
            save_scalar(&path, &synth::bump(&g, &center, radius)?)
        }
        "ball" => {
            let g = grid(&args, *n_default, 65)?;
            let center = args.coords("center", g.dim(), 0.0)?;
            let radius = args.length("radius", g.spacing(), 0.5)?;
            save_scalar(&path, &synth::ball_indicator(&g, &center, radius)?)
        }
        "ball-mask" => {
            let g = grid(&args, *n_default, 65)?;
            let center = args.coords("center", g.dim(), 0.0)?;
            let radius = args.length("radius", g.spacing(), 0.5)?;
            let mask = RegionMask::from_fn(g, |x| {
                let d2: f64 =
                    x.iter().zip(&center).map(|(a, b)| (a - b) * (a - b)).sum();
                d2.sqrt() <= radius
            });
            save_mask(&path, &mask)
        }
        "box-mask" => {
            let g = grid(&args, *n_default, 65)?;
            let min = args.coords("min", g.dim(), -0.5)?;
            let max = args.coords("max", g.dim(), 0.5)?;
            let region = BoxRegion::new(min, max)?;
            save_mask(&path, &region.mask(&g)?)
        }
        "singular" => {
            let g = grid(&args, *n_default, 257)?;
            let gamma = args.f64("gamma", 0.5)?;
            let mollify = args.length("mollify", g.spacing(), 2.0 * g.spacing())?;
            save_scalar(&path, &synth::singular_profile(&g, gamma, mollify)?)
        }
        "singular-map" => {
            let g = grid(&args, 1, 1025)?;
            let gamma = args.f64("gamma", 0.5)?;
            let mollify = args.length("mollify", g.spacing(), 2.0 * g.spacing())?;
            let profile = synth::singular_map_1d(&g, gamma, mollify)?;
            save_vector(&path, &VectorField::from_components(&[profile])?)
        }
        "oscillatory" => {
            let g = grid(&args, *n_default, 257)?;
            save_scalar(&path, &synth::oscillatory(&g))
        }
        "constant" => {
            let g = grid(&args, *n_default, 65)?;
            let value = args.f64("value", 1.0)?;
            save_scalar(&path, &ScalarField::constant(g, value))
        }
        _ => unreachable!("guarded by the builtin table"),
    }
}
