//! Atmospheric scattering synthesis `I = J·t + A·(1 − t)` with
//! `t = exp(−β·d)`, its exact inverse, synthetic scenes, and paired-dataset
//! generation.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ppm::{read_ppm, write_ppm};
use crate::tensor::{Scalar, Shape, Tensor};

/// Smallest transmission [`invert_asm`] accepts by default.
pub const T_MIN: f64 = 0.05;

/// Default airlight range, sampled per channel.
pub const AIRLIGHT_RANGE: (f64, f64) = (0.7, 1.0);

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DepthKind {
    LinearX,
    LinearY,
    Radial,
    /// Mean over channels of a PPM image, min-max normalized.
    File(PathBuf),
}

impl DepthKind {
    pub fn name(&self) -> &'static str {
        match self {
            DepthKind::LinearX => "linear_x",
            DepthKind::LinearY => "linear_y",
            DepthKind::Radial => "radial",
            DepthKind::File(_) => "file",
        }
    }
}

impl fmt::Display for DepthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DepthKind::File(p) => write!(f, "file:{}", p.display()),
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for DepthKind {
    type Err = Error;

    /// `linear_x`, `linear_y`, `radial`, or `file:<path>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear_x" => Ok(DepthKind::LinearX),
            "linear_y" => Ok(DepthKind::LinearY),
            "radial" => Ok(DepthKind::Radial),
            _ => match s.strip_prefix("file:") {
                Some(p) if !p.is_empty() => Ok(DepthKind::File(PathBuf::from(p))),
                _ => Err(Error::Config(format!(
                    "unknown depth kind {s:?} (expected linear_x | linear_y | radial | file:<path>)"
                ))),
            },
        }
    }
}

fn normalize(raw: Vec<f64>, h: usize, w: usize) -> Tensor<f32> {
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let data = raw
        .into_iter()
        .map(|v| if span > 0.0 { ((v - lo) / span) as f32 } else { 0.0 })
        .collect();
    Tensor::new(Shape::new(1, 1, h, w), data).expect("length matches")
}

/// Depth map of shape `(1, 1, H, W)` with values in `[0, 1]`.
pub fn generate_depth(kind: &DepthKind, h: usize, w: usize) -> Result<Tensor<f32>> {
    if h == 0 || w == 0 {
        return Err(Error::Dimension(format!("depth map needs H, W >= 1, got {h}x{w}")));
    }
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let raw: Vec<f64> = match kind {
        DepthKind::LinearX => (0..h * w).map(|i| (i % w) as f64).collect(),
        DepthKind::LinearY => (0..h * w).map(|i| (i / w) as f64).collect(),
        DepthKind::Radial => (0..h * w)
            .map(|i| {
                let (y, x) = ((i / w) as f64, (i % w) as f64);
                ((y - cy).powi(2) + (x - cx).powi(2)).sqrt()
            })
            .collect(),
        DepthKind::File(path) => {
            let img = read_ppm(path)?;
            let s = img.shape();
            if (s.h, s.w) != (h, w) {
                return Err(Error::Dimension(format!(
                    "depth file {} is {}x{}, expected {h}x{w}",
                    path.display(),
                    s.h,
                    s.w
                )));
            }
            let plane = s.plane();
            let d = img.data();
            (0..plane)
                .map(|i| (0..3).map(|c| f64::from(d[c * plane + i])).sum::<f64>() / 3.0)
                .collect()
        }
    };
    Ok(normalize(raw, h, w))
}

/// Airlight, scattering coefficient and depth: everything that fixes the haze.
#[derive(Clone, Debug, PartialEq)]
pub struct HazeRecipe {
    pub airlight: [f32; 3],
    pub beta: f32,
    /// `(1, 1, H, W)`, values in `[0, 1]`.
    pub depth: Tensor<f32>,
    pub depth_kind: DepthKind,
}

impl HazeRecipe {
    pub fn new(airlight: [f32; 3], beta: f32, kind: DepthKind, h: usize, w: usize) -> Result<Self> {
        let r = HazeRecipe {
            airlight,
            beta,
            depth: generate_depth(&kind, h, w)?,
            depth_kind: kind,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if self.airlight.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::Config(format!(
                "airlight must lie in [0, 1], got {:?}",
                self.airlight
            )));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be finite and >= 0, got {}", self.beta)));
        }
        let s = self.depth.shape();
        if s.n != 1 || s.c != 1 {
            return Err(Error::Dimension(format!("depth map must be (1, 1, H, W), got {s}")));
        }
        if self.depth.data().iter().any(|d| !(0.0..=1.0).contains(d)) {
            return Err(Error::Config("depth values must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// `t = exp(−β·d)`, shape `(1, 1, H, W)`.
    pub fn transmission<T: Scalar>(&self) -> Tensor<T> {
        let beta = f64::from(self.beta);
        let d = self.depth.data();
        Tensor::from_fn(self.depth.shape(), |_, _, y, x| {
            T::from_f64((-beta * f64::from(d[y * self.depth.shape().w + x])).exp())
        })
    }
}

/// Hazy image and the pieces it is made of.
#[derive(Clone, Debug)]
pub struct HazeComponents<T: Scalar = f32> {
    pub hazy: Tensor<T>,
    /// `(1, 1, H, W)`.
    pub transmission: Tensor<T>,
    /// Direct attenuation `J·t`.
    pub direct: Tensor<T>,
    /// Airlight term `A·(1 − t)`.
    pub airlight: Tensor<T>,
}

/// Synthesize haze over a `(N, 3, H, W)` clear image in `[0, 1]`.
pub fn apply_asm<T: Scalar>(clear: &Tensor<T>, recipe: &HazeRecipe) -> Result<HazeComponents<T>> {
    recipe.validate()?;
    let s = clear.shape();
    let ds = recipe.depth.shape();
    if s.c != 3 || (s.h, s.w) != (ds.h, ds.w) {
        return Err(Error::Dimension(format!(
            "clear image {s} does not match depth map {ds}"
        )));
    }
    if clear
        .data()
        .iter()
        .any(|v| !(v.as_f64() >= 0.0 && v.as_f64() <= 1.0))
    {
        return Err(Error::Contract("clear image values must lie in [0, 1]".into()));
    }
    let t: Tensor<T> = recipe.transmission();
    let td = t.data();
    let plane = s.plane();
    let mut direct = Tensor::zeros(s);
    let mut air = Tensor::zeros(s);
    let mut hazy = Tensor::zeros(s);
    for (i, &j) in clear.data().iter().enumerate() {
        let c = (i / plane) % 3;
        let tv = td[i % plane].as_f64();
        let d = j.as_f64() * tv;
        let l = f64::from(recipe.airlight[c]) * (1.0 - tv);
        direct.data_mut()[i] = T::from_f64(d);
        air.data_mut()[i] = T::from_f64(l);
        hazy.data_mut()[i] = T::from_f64(d + l);
    }
    Ok(HazeComponents {
        hazy,
        transmission: t,
        direct,
        airlight: air,
    })
}

/// `J = (I − A·(1 − t)) / t`. Fails if any `t < t_min`.
pub fn invert_asm<T: Scalar>(
    hazy: &Tensor<T>,
    transmission: &Tensor<T>,
    airlight: [f32; 3],
    t_min: f64,
) -> Result<Tensor<T>> {
    let s = hazy.shape();
    let ts = transmission.shape();
    if s.c != 3 || ts.n != 1 || ts.c != 1 || (ts.h, ts.w) != (s.h, s.w) {
        return Err(Error::Dimension(format!(
            "hazy image {s} does not match transmission {ts}"
        )));
    }
    if let Some(pos) = transmission.data().iter().position(|t| !(t.as_f64() >= t_min)) {
        return Err(Error::Singularity(format!(
            "transmission {} at pixel {pos} is below t_min = {t_min}",
            transmission.data()[pos]
        )));
    }
    let plane = s.plane();
    let td = transmission.data();
    let data = hazy
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let c = (i / plane) % 3;
            let t = td[i % plane].as_f64();
            T::from_f64((v.as_f64() - f64::from(airlight[c]) * (1.0 - t)) / t)
        })
        .collect();
    Tensor::new(s, data)
}

/// A seeded synthetic outdoor-like scene: sky gradient, ground, a few
/// colored boxes and discs, and fine texture. Values stay in `[0.02, 0.98]`.
pub fn synthetic_scene(h: usize, w: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let horizon = rng.random_range(0.3..0.6) * h as f64;
    let sky: [f64; 3] = [rng.random_range(0.4..0.7), rng.random_range(0.6..0.8), rng.random_range(0.8..0.95)];
    let ground: [f64; 3] = [rng.random_range(0.2..0.5), rng.random_range(0.3..0.6), rng.random_range(0.1..0.3)];
    struct Blob {
        cy: f64,
        cx: f64,
        ry: f64,
        rx: f64,
        disc: bool,
        color: [f64; 3],
    }
    let blobs: Vec<Blob> = (0..rng.random_range(3..7))
        .map(|_| Blob {
            cy: rng.random_range(0.2..1.0) * h as f64,
            cx: rng.random::<f64>() * w as f64,
            ry: rng.random_range(0.05..0.25) * h as f64,
            rx: rng.random_range(0.05..0.25) * w as f64,
            disc: rng.random_bool(0.5),
            color: [rng.random(), rng.random(), rng.random()],
        })
        .collect();
    let fy = rng.random_range(0.2..0.9);
    let fx = rng.random_range(0.2..0.9);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let mut img = Tensor::from_fn(Shape::new(1, 3, h, w), |_, c, y, x| {
        let (yf, xf) = (y as f64, x as f64);
        let mut v = if yf < horizon {
            sky[c] * (0.8 + 0.2 * yf / horizon.max(1.0))
        } else {
            ground[c] * (1.0 - 0.3 * (yf - horizon) / (h as f64 - horizon).max(1.0))
        };
        for b in &blobs {
            let (dy, dx) = ((yf - b.cy) / b.ry, (xf - b.cx) / b.rx);
            let inside = if b.disc {
                dy * dy + dx * dx <= 1.0
            } else {
                dy.abs() <= 1.0 && dx.abs() <= 1.0
            };
            if inside {
                v = b.color[c];
            }
        }
        v += 0.04 * (fy * yf + phase).sin() * (fx * xf).cos();
        v as f32
    });
    for v in img.data_mut() {
        *v = v.clamp(0.02, 0.98);
    }
    img
}

/// How to haze each clear image. `airlight: None` samples each channel
/// uniformly from [`AIRLIGHT_RANGE`].
#[derive(Clone, Debug, PartialEq)]
pub struct RecipeSpec {
    pub airlight: Option<[f32; 3]>,
    pub beta: f32,
    pub depth: DepthKind,
}

/// One line of `manifest.jsonl`; paths are relative to the dataset root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub clear: String,
    pub hazy: String,
    #[serde(rename = "A")]
    pub airlight: [f32; 3],
    pub beta: f32,
    pub depth_kind: String,
    pub seed: u64,
}

pub const MANIFEST: &str = "manifest.jsonl";

fn pair_seed(seed: u64, image: usize, recipe: usize) -> u64 {
    // splitmix64 over the packed indices
    let mut z = seed ^ ((image as u64) << 20 | recipe as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Sorted `*.ppm` files directly under `dir`.
pub fn list_ppm(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm")) && path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

/// Haze every image in `clear_dir` with every recipe. Writes
/// `clear/` and `hazy/` PPMs plus a manifest under `out_dir`; returns the
/// number of pairs.
pub fn make_pair_dataset(
    clear_dir: &Path,
    recipes: &[RecipeSpec],
    out_dir: &Path,
    seed: u64,
) -> Result<usize> {
    if recipes.is_empty() {
        return Err(Error::Config("at least one haze recipe is required".into()));
    }
    let images = list_ppm(clear_dir)?;
    create_dir(&out_dir.join("clear"))?;
    create_dir(&out_dir.join("hazy"))?;
    let manifest_path = out_dir.join(MANIFEST);
    let file = File::create(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let mut manifest = BufWriter::new(file);
    let mut count = 0;
    for (i, path) in images.iter().enumerate() {
        let clear = read_ppm(path)?;
        let s = clear.shape();
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("img{i}"));
        for (r, spec) in recipes.iter().enumerate() {
            let ps = pair_seed(seed, i, r);
            let mut rng = ChaCha8Rng::seed_from_u64(ps);
            let airlight = spec.airlight.unwrap_or_else(|| {
                let (lo, hi) = AIRLIGHT_RANGE;
                std::array::from_fn(|_| rng.random_range(lo..=hi) as f32)
            });
            let recipe = HazeRecipe::new(airlight, spec.beta, spec.depth.clone(), s.h, s.w)?;
            let hazy = apply_asm(&clear, &recipe)?.hazy;
            let name = format!("{stem}_r{r}.ppm");
            let clear_rel = format!("clear/{name}");
            let hazy_rel = format!("hazy/{name}");
            write_ppm(out_dir.join(&clear_rel), &clear)?;
            write_ppm(out_dir.join(&hazy_rel), &hazy)?;
            let entry = ManifestEntry {
                clear: clear_rel,
                hazy: hazy_rel,
                airlight,
                beta: spec.beta,
                depth_kind: spec.depth.name().to_string(),
                seed: ps,
            };
            let line = serde_json::to_string(&entry)?;
            writeln!(manifest, "{line}").map_err(|e| Error::io(&manifest_path, e))?;
            count += 1;
        }
    }
    manifest.flush().map_err(|e| Error::io(&manifest_path, e))?;
    log::info!("wrote {count} pairs to {}", out_dir.display());
    Ok(count)
}

pub fn read_manifest(root: &Path) -> Result<Vec<ManifestEntry>> {
    let path = root.join(MANIFEST);
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(&path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// `(hazy, clear)` images listed in a dataset manifest.
pub fn load_pairs(root: &Path) -> Result<Vec<(Tensor<f32>, Tensor<f32>)>> {
    read_manifest(root)?
        .iter()
        .map(|e| Ok((read_ppm(root.join(&e.hazy))?, read_ppm(root.join(&e.clear))?)))
        .collect()
}
