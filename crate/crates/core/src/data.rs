//! Paired-image ingestion, geometric augmentation, buffered crop extraction,
//! and a synthetic noisy/clean dataset generator for desk-scale experiments.

use std::path::Path;

use image::{DynamicImage, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{PadMode, Tensor4};

/// A noisy/clean image pair with values in [0, 1], dims `(1, h, w, 3)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePair {
    pub noisy: Tensor4,
    pub clean: Tensor4,
    pub id: String,
}

impl ImagePair {
    pub fn new(noisy: Tensor4, clean: Tensor4, id: impl Into<String>) -> Result<Self> {
        if noisy.dims() != clean.dims() {
            return Err(Error::Data(format!(
                "pair dims differ: noisy {:?}, clean {:?}",
                noisy.dims(),
                clean.dims()
            )));
        }
        Ok(ImagePair {
            noisy,
            clean,
            id: id.into(),
        })
    }
}

/// Heteroscedastic Gaussian noise: per-pixel variance `a * clean + b`.
#[derive(Debug, Clone, Copy)]
pub struct NoiseModel {
    pub a: f64,
    pub b: f64,
}

impl NoiseModel {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if a < 0.0 || b < 0.0 {
            return Err(Error::Config("noise coefficients must be non-negative".into()));
        }
        Ok(NoiseModel { a, b })
    }

    /// Draw `noisy = clip01(clean + n)`, `n ~ Normal(0, sqrt(a*clean + b))`.
    pub fn apply(&self, clean: &Tensor4, rng: &mut ChaCha8Rng) -> Tensor4 {
        let unit = Normal::new(0.0f64, 1.0).expect("unit normal");
        let mut out = clean.clone();
        for v in out.data_mut() {
            let var = self.a * f64::from(*v) + self.b;
            let n = unit.sample(rng) * var.sqrt();
            *v = ((f64::from(*v) + n) as f32).clamp(0.0, 1.0);
        }
        out
    }
}

/// Load an 8-bit RGB image as a `(1, h, w, 3)` tensor scaled to [0, 1].
/// Non-RGB color types are rejected.
pub fn load_rgb8(path: &Path) -> Result<Tensor4> {
    let img = image::open(path)?;
    let rgb: RgbImage = match img {
        DynamicImage::ImageRgb8(buf) => buf,
        other => {
            return Err(Error::Data(format!(
                "{}: expected 8-bit RGB, got {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    let (w, h) = rgb.dimensions();
    let data: Vec<f32> = rgb.as_raw().iter().map(|v| f32::from(*v) / 255.0).collect();
    Tensor4::from_vec([1, h as usize, w as usize, 3], data)
}

/// Write a `(1, h, w, 3)` tensor in [0, 1] as an 8-bit RGB image; pixel
/// values are `round(clip01(v) * 255)`. Format follows the file extension.
pub fn save_rgb8(t: &Tensor4, path: &Path) -> Result<()> {
    let [n, h, w, c] = t.dims();
    if n != 1 || c != 3 {
        return Err(Error::Data(format!(
            "expected (1, h, w, 3) tensor, got {:?}",
            t.dims()
        )));
    }
    let bytes: Vec<u8> = t
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let img = RgbImage::from_raw(w as u32, h as u32, bytes)
        .ok_or_else(|| Error::Data("buffer size mismatch".into()))?;
    img.save(path)?;
    Ok(())
}

fn list_files(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        if entry.file_type()?.is_file() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    Ok(names)
}

/// Load matching filenames from two mirrored directories in lexicographic
/// order. Orphan files, non-RGB images, and size mismatches are errors.
pub fn load_pairs(noisy_dir: &Path, clean_dir: &Path) -> Result<Vec<ImagePair>> {
    let noisy_names = list_files(noisy_dir)?;
    let clean_names = list_files(clean_dir)?;
    for name in &noisy_names {
        if !clean_names.contains(name) {
            return Err(Error::Data(format!(
                "orphan file '{name}' in {} has no counterpart in {}",
                noisy_dir.display(),
                clean_dir.display()
            )));
        }
    }
    for name in &clean_names {
        if !noisy_names.contains(name) {
            return Err(Error::Data(format!(
                "orphan file '{name}' in {} has no counterpart in {}",
                clean_dir.display(),
                noisy_dir.display()
            )));
        }
    }
    let mut pairs = Vec::with_capacity(noisy_names.len());
    for name in noisy_names {
        let noisy = load_rgb8(&noisy_dir.join(&name))?;
        let clean = load_rgb8(&clean_dir.join(&name))?;
        if noisy.dims() != clean.dims() {
            return Err(Error::Data(format!(
                "pair '{name}' size mismatch: noisy {:?}, clean {:?}",
                noisy.dims(),
                clean.dims()
            )));
        }
        pairs.push(ImagePair { noisy, clean, id: name });
    }
    Ok(pairs)
}

/// One dihedral draw: independent horizontal/vertical flips plus an
/// orthogonal rotation, applied identically to both images of the pair.
pub fn augment(pair: &ImagePair, rng: &mut ChaCha8Rng) -> ImagePair {
    let flip_h = rng.gen_bool(0.5);
    let flip_v = rng.gen_bool(0.5);
    let rot = rng.gen_range(0u8..4);
    ImagePair {
        noisy: dihedral(&pair.noisy, flip_h, flip_v, rot),
        clean: dihedral(&pair.clean, flip_h, flip_v, rot),
        id: pair.id.clone(),
    }
}

/// Apply flips then a clockwise rotation of `rot * 90` degrees. Rotations by
/// 90/270 swap the spatial extents.
pub fn dihedral(t: &Tensor4, flip_h: bool, flip_v: bool, rot: u8) -> Tensor4 {
    let mut cur = t.clone();
    if flip_h {
        let (h, w) = (cur.h(), cur.w());
        cur = remap(&cur, h, w, |y, x, _, w| (y, w - 1 - x));
    }
    if flip_v {
        let (h, w) = (cur.h(), cur.w());
        cur = remap(&cur, h, w, |y, x, h, _| (h - 1 - y, x));
    }
    let (h, w) = (cur.h(), cur.w());
    match rot % 4 {
        0 => cur,
        1 => remap(&cur, w, h, |y, x, h, _| (h - 1 - x, y)),
        2 => remap(&cur, h, w, |y, x, h, w| (h - 1 - y, w - 1 - x)),
        _ => remap(&cur, w, h, |y, x, _, w| (x, w - 1 - y)),
    }
}

fn remap(
    t: &Tensor4,
    oh: usize,
    ow: usize,
    src_of: impl Fn(usize, usize, usize, usize) -> (usize, usize),
) -> Tensor4 {
    let [n, h, w, c] = t.dims();
    let mut out = Tensor4::zeros([n, oh, ow, c]);
    for ni in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let (sy, sx) = src_of(oy, ox, h, w);
                let src = t.idx(ni, sy, sx, 0);
                let dst = out.idx(ni, oy, ox, 0);
                out.data_mut()[dst..dst + c].copy_from_slice(&t.data()[src..src + c]);
            }
        }
    }
    out
}

/// Reflect-pad both images of the pair by 2 pixels, then cut the window at
/// `origin` with extents `crop * crop`.
pub fn crop_at(pair: &ImagePair, origin: (usize, usize), crop: usize) -> Result<ImagePair> {
    let padded_n = pair.noisy.pad([[2, 2], [2, 2]], PadMode::Reflect)?;
    let padded_c = pair.clean.pad([[2, 2], [2, 2]], PadMode::Reflect)?;
    Ok(ImagePair {
        noisy: padded_n.crop(origin, (crop, crop))?,
        clean: padded_c.crop(origin, (crop, crop))?,
        id: pair.id.clone(),
    })
}

/// Reflect-pad by the 2-pixel buffer, then sample a uniformly random window
/// of `crop * crop`, identical for both images.
pub fn extract_crop(pair: &ImagePair, crop: usize, rng: &mut ChaCha8Rng) -> Result<ImagePair> {
    let ph = pair.noisy.h() + 4;
    let pw = pair.noisy.w() + 4;
    if crop > ph || crop > pw {
        return Err(Error::Bounds(format!(
            "crop {crop} exceeds padded extents {ph}x{pw}"
        )));
    }
    let y0 = rng.gen_range(0..=ph - crop);
    let x0 = rng.gen_range(0..=pw - crop);
    crop_at(pair, (y0, x0), crop)
}

fn splitmix(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(index.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Procedural clean image: smooth gradients, a few soft-edged shapes, and
/// band-limited sinusoid texture, clamped to [0, 1].
fn synth_clean(size: usize, rng: &mut ChaCha8Rng) -> Tensor4 {
    let s = size as f64;
    let mut base = [[0.0f64; 3]; 3]; // per-channel [offset, x-slope, y-slope]
    for ch in base.iter_mut() {
        ch[0] = rng.gen_range(0.3..0.7);
        ch[1] = rng.gen_range(-0.3..0.3);
        ch[2] = rng.gen_range(-0.3..0.3);
    }
    struct Blob {
        cy: f64,
        cx: f64,
        r: f64,
        amp: [f64; 3],
        hard: bool,
    }
    let blobs: Vec<Blob> = (0..3)
        .map(|_| Blob {
            cy: rng.gen_range(0.0..s),
            cx: rng.gen_range(0.0..s),
            r: rng.gen_range(s * 0.1..s * 0.4),
            amp: [
                rng.gen_range(-0.35..0.35),
                rng.gen_range(-0.35..0.35),
                rng.gen_range(-0.35..0.35),
            ],
            hard: rng.gen_bool(0.5),
        })
        .collect();
    let tex_amp = rng.gen_range(0.02..0.06);
    let fx = rng.gen_range(1.0..4.0);
    let fy = rng.gen_range(1.0..4.0);
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);

    let mut out = Tensor4::zeros([1, size, size, 3]);
    let od = out.data_mut();
    for y in 0..size {
        for x in 0..size {
            let (xf, yf) = (x as f64 / s, y as f64 / s);
            let tex = tex_amp
                * (std::f64::consts::TAU * (fx * xf + fy * yf) + phase).sin();
            for c in 0..3 {
                let mut v = base[c][0] + base[c][1] * xf + base[c][2] * yf + tex;
                for blob in &blobs {
                    let d2 = (y as f64 - blob.cy).powi(2) + (x as f64 - blob.cx).powi(2);
                    if blob.hard {
                        // sharp-edged disc
                        if d2 < blob.r * blob.r {
                            v += blob.amp[c];
                        }
                    } else {
                        v += blob.amp[c] * (-d2 / (blob.r * blob.r)).exp();
                    }
                }
                od[(y * size + x) * 3 + c] = v.clamp(0.0, 1.0) as f32;
            }
        }
    }
    out
}

/// Deterministic synthetic dataset: `count` pairs of `size * size` images.
/// Per-item RNG streams are derived from `(seed, index)`.
pub fn synth_dataset(
    count: usize,
    size: usize,
    noise: &NoiseModel,
    seed: u64,
) -> Result<Vec<ImagePair>> {
    if size % 16 != 0 {
        return Err(Error::Alignment(format!(
            "synthetic image size {size} must be a multiple of 16"
        )));
    }
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed, i as u64));
            let clean = synth_clean(size, &mut rng);
            let noisy = noise.apply(&clean, &mut rng);
            ImagePair::new(noisy, clean, format!("synth{i:04}"))
        })
        .collect()
}
