//! Challenge-protocol fidelity metrics: PSNR and per-channel Gaussian SSIM,
//! both computed after a 1-pixel boundary crop of prediction and target.
//!
//! PSNR uses one MSE over all RGB elements jointly. SSIM uses an 11x11
//! Gaussian window (sigma 1.5, K1 = 0.01, K2 = 0.03 on the unit range),
//! computed independently per channel over valid window positions and then
//! averaged across channels.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::LayerGraph;
use crate::model::ModelParams;
use crate::tensor::Tensor4;

/// PSNR value reported when the MSE vanishes (and an upper cap otherwise).
pub const PSNR_CAP_DB: f64 = 100.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn boundary_crop(t: &Tensor4) -> Result<Tensor4> {
    let [_, h, w, _] = t.dims();
    if h < 3 || w < 3 {
        return Err(Error::Bounds(format!(
            "image {h}x{w} too small for the 1-pixel boundary crop"
        )));
    }
    t.crop((1, 1), (h - 2, w - 2))
}

fn check_same_dims(pred: &Tensor4, gt: &Tensor4) -> Result<()> {
    if pred.dims() != gt.dims() {
        return Err(Error::DimMismatch(format!(
            "metric inputs: pred {:?}, gt {:?}",
            pred.dims(),
            gt.dims()
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB on the unit range, after the 1-pixel
/// boundary crop, with MSE taken jointly over all RGB elements.
pub fn psnr(pred: &Tensor4, gt: &Tensor4) -> Result<f64> {
    check_same_dims(pred, gt)?;
    let p = boundary_crop(pred)?;
    let g = boundary_crop(gt)?;
    let mut sq = 0.0f64;
    for (a, b) in p.data().iter().zip(g.data()) {
        let d = f64::from(*a) - f64::from(*b);
        sq += d * d;
    }
    let mse = sq / p.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

fn gaussian_window() -> [f64; SSIM_WINDOW * SSIM_WINDOW] {
    let mut w = [0.0f64; SSIM_WINDOW * SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for y in 0..SSIM_WINDOW {
        for x in 0..SSIM_WINDOW {
            let d2 = (y as f64 - c).powi(2) + (x as f64 - c).powi(2);
            let v = (-d2 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            w[y * SSIM_WINDOW + x] = v;
            sum += v;
        }
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Mean structural similarity after the 1-pixel boundary crop.
pub fn ssim(pred: &Tensor4, gt: &Tensor4) -> Result<f64> {
    check_same_dims(pred, gt)?;
    let p = boundary_crop(pred)?;
    let g = boundary_crop(gt)?;
    let [n, h, w, c] = p.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Bounds(format!(
            "cropped image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    let win = gaussian_window();
    let mut channel_mean_sum = 0.0f64;
    for ni in 0..n {
        for ci in 0..c {
            let mut acc = 0.0f64;
            let mut count = 0usize;
            for y0 in 0..=h - SSIM_WINDOW {
                for x0 in 0..=w - SSIM_WINDOW {
                    let mut mx = 0.0f64;
                    let mut my = 0.0f64;
                    let mut sxx = 0.0f64;
                    let mut syy = 0.0f64;
                    let mut sxy = 0.0f64;
                    for dy in 0..SSIM_WINDOW {
                        for dx in 0..SSIM_WINDOW {
                            let wv = win[dy * SSIM_WINDOW + dx];
                            let a = f64::from(p.at(ni, y0 + dy, x0 + dx, ci));
                            let b = f64::from(g.at(ni, y0 + dy, x0 + dx, ci));
                            mx += wv * a;
                            my += wv * b;
                            sxx += wv * a * a;
                            syy += wv * b * b;
                            sxy += wv * a * b;
                        }
                    }
                    let vx = sxx - mx * mx;
                    let vy = syy - my * my;
                    let cxy = sxy - mx * my;
                    let val = ((2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                        / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
                    acc += val;
                    count += 1;
                }
            }
            channel_mean_sum += acc / count as f64;
        }
    }
    Ok(channel_mean_sum / (n * c) as f64)
}

/// Per-image metric values plus set-level means.
#[derive(Debug, Clone)]
pub struct MetricReport {
    pub psnr_db: f64,
    pub ssim: f64,
    pub per_image: Vec<ImageMetrics>,
}

#[derive(Debug, Clone)]
pub struct ImageMetrics {
    pub id: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

impl MetricReport {
    /// Line-oriented text table.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("{:<24} {:>10} {:>10}\n", "id", "psnr_db", "ssim"));
        for m in &self.per_image {
            s.push_str(&format!(
                "{:<24} {:>10.4} {:>10.6}\n",
                m.id, m.psnr_db, m.ssim
            ));
        }
        s.push_str(&format!(
            "{:<24} {:>10.4} {:>10.6}\n",
            "mean", self.psnr_db, self.ssim
        ));
        s
    }

    /// Machine-readable delimited file: `id,psnr_db,ssim`.
    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "id,psnr_db,ssim")?;
        for m in &self.per_image {
            writeln!(f, "{},{:.6},{:.8}", m.id, m.psnr_db, m.ssim)?;
        }
        writeln!(f, "mean,{:.6},{:.8}", self.psnr_db, self.ssim)?;
        Ok(())
    }
}

/// Run the model over every pair and aggregate the challenge metrics.
/// Predictions are clipped to the unit range before scoring (matching 8-bit
/// export). Evaluation aborts on the first failing image, naming it.
pub fn evaluate_set(
    graph: &LayerGraph,
    params: &ModelParams,
    pairs: &[crate::data::ImagePair],
) -> Result<MetricReport> {
    let mut per_image = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let restored = graph
            .forward(params, &pair.noisy)
            .map(|out| crate::ops::clip01(&out))
            .map_err(|e| Error::Data(format!("image '{}': {e}", pair.id)))?;
        let p = psnr(&restored, &pair.clean)
            .map_err(|e| Error::Data(format!("image '{}': {e}", pair.id)))?;
        let s = ssim(&restored, &pair.clean)
            .map_err(|e| Error::Data(format!("image '{}': {e}", pair.id)))?;
        per_image.push(ImageMetrics {
            id: pair.id.clone(),
            psnr_db: p,
            ssim: s,
        });
    }
    let n = per_image.len().max(1) as f64;
    Ok(MetricReport {
        psnr_db: per_image.iter().map(|m| m.psnr_db).sum::<f64>() / n,
        ssim: per_image.iter().map(|m| m.ssim).sum::<f64>() / n,
        per_image,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::dihedral;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Tensor4 {
        let data = (0..h * w * 3).map(|_| rng.gen_range(0.0f32..1.0)).collect();
        Tensor4::from_vec([1, h, w, 3], data).unwrap()
    }

    #[test]
    fn identical_images_hit_the_cap_and_unit_ssim() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = rand_image(&mut rng, 20, 20);
        assert_eq!(psnr(&img, &img).unwrap(), PSNR_CAP_DB);
        assert!((ssim(&img, &img).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn uniform_error_of_point_one_gives_twenty_db() {
        let gt = Tensor4::zeros([1, 16, 16, 3]);
        let pred = Tensor4::filled([1, 16, 16, 3], 0.1);
        let p = psnr(&pred, &gt).unwrap();
        assert!((p - 20.0).abs() < 1e-6, "psnr {p}");
    }

    #[test]
    fn border_errors_do_not_affect_either_metric() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gt = rand_image(&mut rng, 20, 24);
        let mut pred = gt.clone();
        // Corrupt only the 1-pixel border.
        let [_, h, w, c] = pred.dims();
        for y in 0..h {
            for x in 0..w {
                if y == 0 || y == h - 1 || x == 0 || x == w - 1 {
                    for ci in 0..c {
                        let i = pred.idx(0, y, x, ci);
                        pred.data_mut()[i] = rng.gen_range(0.0..1.0);
                    }
                }
            }
        }
        assert_eq!(psnr(&pred, &gt).unwrap(), PSNR_CAP_DB);
        assert!((ssim(&pred, &gt).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn inverted_high_contrast_image_scores_poorly() {
        // Checkerboard blocks of 0.05 / 0.95.
        let mut gt = Tensor4::zeros([1, 32, 32, 3]);
        for y in 0..32 {
            for x in 0..32 {
                let v = if ((y / 4) + (x / 4)) % 2 == 0 { 0.05 } else { 0.95 };
                for c in 0..3 {
                    let i = gt.idx(0, y, x, c);
                    gt.data_mut()[i] = v;
                }
            }
        }
        let mut pred = gt.clone();
        for v in pred.data_mut() {
            *v = 1.0 - *v;
        }
        let s = ssim(&pred, &gt).unwrap();
        assert!(s < 0.5, "inverted ssim {s}");
    }

    /// Independent SSIM oracle: separate mean/variance passes over explicit
    /// padded-free maps instead of the src single-pass accumulation.
    fn ssim_oracle(pred: &Tensor4, gt: &Tensor4) -> f64 {
        let p = pred.crop((1, 1), (pred.h() - 2, pred.w() - 2)).unwrap();
        let g = gt.crop((1, 1), (gt.h() - 2, gt.w() - 2)).unwrap();
        let (h, w, c) = (p.h(), p.w(), p.c());
        let mut win = vec![0.0f64; 121];
        let mut sum = 0.0;
        for y in 0..11 {
            for x in 0..11 {
                let d2 = (y as f64 - 5.0).powi(2) + (x as f64 - 5.0).powi(2);
                win[y * 11 + x] = (-d2 / 4.5).exp();
                sum += win[y * 11 + x];
            }
        }
        for v in &mut win {
            *v /= sum;
        }
        let stat = |img: &Tensor4, y0: usize, x0: usize, ci: usize| -> f64 {
            let mut m = 0.0;
            for dy in 0..11 {
                for dx in 0..11 {
                    m += win[dy * 11 + dx] * f64::from(img.at(0, y0 + dy, x0 + dx, ci));
                }
            }
            m
        };
        let mut total = 0.0f64;
        for ci in 0..c {
            let mut acc = 0.0f64;
            let mut count = 0usize;
            for y0 in 0..=h - 11 {
                for x0 in 0..=w - 11 {
                    let mx = stat(&p, y0, x0, ci);
                    let my = stat(&g, y0, x0, ci);
                    let (mut vx, mut vy, mut cxy) = (0.0f64, 0.0f64, 0.0f64);
                    for dy in 0..11 {
                        for dx in 0..11 {
                            let wv = win[dy * 11 + dx];
                            let a = f64::from(p.at(0, y0 + dy, x0 + dx, ci)) - mx;
                            let b = f64::from(g.at(0, y0 + dy, x0 + dx, ci)) - my;
                            vx += wv * a * a;
                            vy += wv * b * b;
                            cxy += wv * a * b;
                        }
                    }
                    acc += ((2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                        / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
                    count += 1;
                }
            }
            total += acc / count as f64;
        }
        total / c as f64
    }

    #[test]
    fn ssim_matches_independent_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..3 {
            let gt = rand_image(&mut rng, 24, 28);
            let mut pred = gt.clone();
            for v in pred.data_mut() {
                *v = (*v + rng.gen_range(-0.1f32..0.1)).clamp(0.0, 1.0);
            }
            let a = ssim(&pred, &gt).unwrap();
            let b = ssim_oracle(&pred, &gt);
            assert!((a - b).abs() < 1e-6, "src {a}, oracle {b}");
        }
    }

    #[test]
    fn ssim_invariant_under_joint_dihedral_transforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let gt = rand_image(&mut rng, 20, 20);
        let mut pred = gt.clone();
        for v in pred.data_mut() {
            *v = (*v + rng.gen_range(-0.05f32..0.05)).clamp(0.0, 1.0);
        }
        let base = ssim(&pred, &gt).unwrap();
        for (fh, fv, rot) in [(true, false, 0), (false, true, 2), (false, false, 1)] {
            let tp = dihedral(&pred, fh, fv, rot);
            let tg = dihedral(&gt, fh, fv, rot);
            let s = ssim(&tp, &tg).unwrap();
            assert!((s - base).abs() < 1e-9, "transform ({fh},{fv},{rot})");
        }
    }

    #[test]
    fn psnr_decreases_with_noise_amplitude() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gt = rand_image(&mut rng, 24, 24);
        let mut prev = f64::INFINITY;
        for amp in [0.01f32, 0.03, 0.1] {
            let mut pred = gt.clone();
            for v in pred.data_mut() {
                *v = (*v + rng.gen_range(-amp..amp)).clamp(0.0, 1.0);
            }
            let p = psnr(&pred, &gt).unwrap();
            assert!(p < prev, "amp {amp}: psnr {p} vs prev {prev}");
            prev = p;
        }
    }

    #[test]
    fn too_small_for_window_is_rejected() {
        let a = Tensor4::zeros([1, 12, 12, 3]);
        assert!(ssim(&a, &a).is_err()); // 10x10 after crop < 11
        assert!(psnr(&a, &a).is_ok());
    }

    #[test]
    fn evaluate_set_reports_per_image_and_means() {
        use crate::model::{ArchConfig, ModelKind, ModelParams};
        let cfg = ArchConfig::with_widths(ModelKind::Student, vec![4], 8);
        let g = cfg.build_graph().unwrap();
        let p = ModelParams::zeros(&g); // identity denoiser
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pairs: Vec<crate::data::ImagePair> = (0..3)
            .map(|i| {
                let img = rand_image(&mut rng, 16, 16);
                crate::data::ImagePair::new(img.clone(), img, format!("p{i}")).unwrap()
            })
            .collect();
        let report = evaluate_set(&g, &p, &pairs).unwrap();
        assert_eq!(report.per_image.len(), 3);
        assert_eq!(report.psnr_db, PSNR_CAP_DB);
        assert!((report.ssim - 1.0).abs() < 1e-9);
        let mean_check: f64 =
            report.per_image.iter().map(|m| m.psnr_db).sum::<f64>() / 3.0;
        assert_eq!(report.psnr_db, mean_check);
        let table = report.to_table();
        assert!(table.contains("p0") && table.contains("mean"));
    }
}
