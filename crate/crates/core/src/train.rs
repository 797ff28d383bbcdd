//! Optimization loop: Adam with bias correction, cosine annealing, global
//! gradient-norm clipping, progressive context expansion, checkpointing, and
//! the frozen-teacher distillation procedure.
//!
//! Everything is deterministic under a fixed seed: initialization, batch
//! sampling, augmentation draws, and updates. The crop schedule partitions
//! training into phases; the base phase follows the configured `t_max`, and
//! each fine-tuning phase restarts the cosine schedule over its own length.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{augment, extract_crop, ImagePair};
use crate::error::{Error, Result};
use crate::graph::{ActivationTape, LayerGraph};
use crate::loss::{loss_backward, loss_total, LossWeights};
use crate::model::{ArchConfig, ModelParams};
use crate::ops::clip01;
use crate::tensor::Tensor4;

/// Optimizer and loop hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    /// Cosine period of the base phase, in epochs.
    pub t_max: usize,
    pub clip_norm: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub steps_per_epoch: usize,
    /// `(start_epoch, crop_size)` entries sorted by start epoch; the first
    /// entry must start at 0. Crop sizes must match the model alignment.
    pub crop_schedule: Vec<(usize, usize)>,
    pub seed: u64,
    /// Validate every this many epochs (the final epoch always validates).
    pub eval_every: usize,
    /// When set, writes `best.ldnw`, `last.ldnw`, and `log.txt` here.
    pub out_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            lr_max: 1e-3,
            lr_min: 1e-5,
            t_max: 200,
            clip_norm: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 8,
            steps_per_epoch: 16,
            crop_schedule: vec![(0, 256)],
            seed: 0,
            eval_every: 1,
            out_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.steps_per_epoch == 0 {
            return Err(Error::Config(
                "epochs, batch_size, and steps_per_epoch must be positive".into(),
            ));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be positive".into()));
        }
        if self.t_max == 0 {
            return Err(Error::Config("t_max must be positive".into()));
        }
        if self.lr_min < 0.0 || self.lr_max < self.lr_min {
            return Err(Error::Config("need lr_max >= lr_min >= 0".into()));
        }
        if self.crop_schedule.is_empty() || self.crop_schedule[0].0 != 0 {
            return Err(Error::Config(
                "crop schedule must be non-empty and start at epoch 0".into(),
            ));
        }
        if self.crop_schedule.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::Config(
                "crop schedule must be strictly sorted by start epoch".into(),
            ));
        }
        Ok(())
    }

    /// Crop size in effect at `epoch`.
    pub fn crop_for_epoch(&self, epoch: usize) -> usize {
        self.crop_schedule
            .iter()
            .rev()
            .find(|(start, _)| *start <= epoch)
            .map(|(_, c)| *c)
            .expect("validated schedule covers epoch 0")
    }

    /// Learning rate at `epoch` under the phase-wise cosine schedule.
    pub fn lr_for_epoch(&self, epoch: usize) -> f64 {
        let mut start = 0usize;
        let mut end = self.epochs;
        for (i, (s, _)) in self.crop_schedule.iter().enumerate() {
            if *s <= epoch {
                start = *s;
                end = self
                    .crop_schedule
                    .get(i + 1)
                    .map(|(n, _)| *n)
                    .unwrap_or(self.epochs);
            }
        }
        let t = epoch - start;
        let t_max = if start == 0 {
            self.t_max
        } else {
            (end - start).max(1)
        };
        cosine_lr_at(t, t_max, self.lr_max, self.lr_min)
    }
}

/// Cosine annealing value at step `t` of a period `t_max`; `t > t_max`
/// clamps to `lr_min`.
pub fn cosine_lr_at(t: usize, t_max: usize, lr_max: f64, lr_min: f64) -> f64 {
    if t >= t_max {
        return lr_min;
    }
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * t as f64 / t_max as f64).cos())
}

/// Cosine annealing with the config's base period.
pub fn cosine_lr(t: usize, cfg: &TrainConfig) -> f64 {
    cosine_lr_at(t, cfg.t_max, cfg.lr_max, cfg.lr_min)
}

/// Scale all gradients jointly so the global L2 norm does not exceed
/// `max_norm`. Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [Vec<f32>], max_norm: f64) -> f64 {
    let mut sq = 0.0f64;
    for g in grads.iter() {
        for v in g {
            sq += f64::from(*v) * f64::from(*v);
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = (max_norm / norm) as f32;
        for g in grads.iter_mut() {
            for v in g {
                *v *= scale;
            }
        }
    }
    norm
}

/// Per-parameter first/second moment estimates and the shared step counter.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    step: u64,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        let m = params.iter().map(|p| vec![0.0f32; p.data.len()]).collect();
        let v = params.iter().map(|p| vec![0.0f32; p.data.len()]).collect();
        OptimizerState { m, v, step: 0 }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update over every parameter tensor.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &[Vec<f32>],
    state: &mut OptimizerState,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::DimMismatch(format!(
            "gradient tensors {} != parameter tensors {}",
            grads.len(),
            params.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (i, g) in grads.iter().enumerate() {
        let p = params.param_mut(i);
        if g.len() != p.data.len() {
            return Err(Error::DimMismatch(format!(
                "gradient length {} != parameter '{}' length {}",
                g.len(),
                p.name,
                p.data.len()
            )));
        }
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        for j in 0..g.len() {
            let gj = f64::from(g[j]);
            let mj = cfg.beta1 * f64::from(m[j]) + (1.0 - cfg.beta1) * gj;
            let vj = cfg.beta2 * f64::from(v[j]) + (1.0 - cfg.beta2) * gj * gj;
            m[j] = mj as f32;
            v[j] = vj as f32;
            let mhat = mj / bc1;
            let vhat = vj / bc2;
            p.data[j] = (f64::from(p.data[j]) - lr * mhat / (vhat.sqrt() + cfg.eps)) as f32;
        }
    }
    Ok(())
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub crop: usize,
    pub l_total: f64,
    pub val_psnr: Option<f64>,
}

/// Outcome of a training run. `params` is the best-by-validation-PSNR
/// checkpoint; `final_params` is the last epoch's state.
#[derive(Debug, Clone)]
pub struct TrainResult {
    pub params: ModelParams,
    pub best_val_psnr: f64,
    pub final_params: ModelParams,
    pub log: Vec<EpochLog>,
}

impl TrainResult {
    /// Render the sidecar log: config header plus one line per epoch.
    pub fn log_text(&self, cfg: &TrainConfig, weights: &LossWeights) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "# epochs={} lr_max={} lr_min={} t_max={} clip_norm={} beta1={} beta2={} eps={} batch={} steps={} seed={} eval_every={}\n",
            cfg.epochs, cfg.lr_max, cfg.lr_min, cfg.t_max, cfg.clip_norm, cfg.beta1,
            cfg.beta2, cfg.eps, cfg.batch_size, cfg.steps_per_epoch, cfg.seed, cfg.eval_every
        ));
        s.push_str(&format!(
            "# crop_schedule={:?} lambda_gt={} lambda_distill={} lambda_l1={} alpha={}\n",
            cfg.crop_schedule, weights.lambda_gt, weights.lambda_distill, weights.lambda_l1,
            weights.alpha()
        ));
        s.push_str("# epoch,lr,l_total,val_psnr\n");
        for e in &self.log {
            let psnr = e
                .val_psnr
                .map(|p| format!("{p:.6}"))
                .unwrap_or_else(|| "-".into());
            s.push_str(&format!("{},{:.8e},{:.8e},{}\n", e.epoch, e.lr, e.l_total, psnr));
        }
        s
    }
}

/// Mean challenge-protocol PSNR of the model over `pairs`, with predictions
/// clipped to the unit range first (mirrors 8-bit export).
pub fn validation_psnr(
    graph: &LayerGraph,
    params: &ModelParams,
    pairs: &[ImagePair],
) -> Result<f64> {
    let mut sum = 0.0f64;
    for pair in pairs {
        let restored = clip01(&graph.forward(params, &pair.noisy)?);
        sum += crate::metrics::psnr(&restored, &pair.clean)?;
    }
    Ok(sum / pairs.len().max(1) as f64)
}

fn stack_batch(items: &[ImagePair]) -> (Tensor4, Tensor4) {
    let [_, h, w, c] = items[0].noisy.dims();
    let mut noisy = Tensor4::zeros([items.len(), h, w, c]);
    let mut clean = Tensor4::zeros([items.len(), h, w, c]);
    let plane = h * w * c;
    for (i, item) in items.iter().enumerate() {
        noisy.data_mut()[i * plane..(i + 1) * plane].copy_from_slice(item.noisy.data());
        clean.data_mut()[i * plane..(i + 1) * plane].copy_from_slice(item.clean.data());
    }
    (noisy, clean)
}

fn train_loop(
    arch: &ArchConfig,
    teacher: Option<(&LayerGraph, &ModelParams)>,
    train_pairs: &[ImagePair],
    val_pairs: &[ImagePair],
    cfg: &TrainConfig,
    weights: &LossWeights,
) -> Result<TrainResult> {
    cfg.validate()?;
    weights.validate()?;
    if train_pairs.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if train_pairs[0].noisy.c() != arch.input_channels {
        return Err(Error::Channels(format!(
            "dataset has {} channels, model expects {}",
            train_pairs[0].noisy.c(),
            arch.input_channels
        )));
    }
    let graph = arch.build_graph()?;
    for (_, crop) in &cfg.crop_schedule {
        if crop % graph.alignment() != 0 {
            return Err(Error::Alignment(format!(
                "crop size {crop} is not a multiple of the model alignment {}",
                graph.alignment()
            )));
        }
        if let Some((tg, _)) = teacher {
            if crop % tg.alignment() != 0 {
                return Err(Error::Alignment(format!(
                    "crop size {crop} aligns for the student but not the teacher (alignment {})",
                    tg.alignment()
                )));
            }
        }
    }
    if let Some((tg, tp)) = teacher {
        tg.check_params(tp)?;
    }

    let mut params = ModelParams::init_he(&graph, cfg.seed);
    let mut state = OptimizerState::new(&params);
    // Separate draw stream from initialization.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x74726169_6e5f726e);
    let mut log: Vec<EpochLog> = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, ModelParams)> = None;

    for epoch in 0..cfg.epochs {
        let crop = cfg.crop_for_epoch(epoch);
        let lr = cfg.lr_for_epoch(epoch);
        let mut loss_sum = 0.0f64;
        for _ in 0..cfg.steps_per_epoch {
            let mut items = Vec::with_capacity(cfg.batch_size);
            for _ in 0..cfg.batch_size {
                let idx = rng.gen_range(0..train_pairs.len());
                let cropped = extract_crop(&train_pairs[idx], crop, &mut rng)?;
                items.push(augment(&cropped, &mut rng));
            }
            let (noisy, gt) = stack_batch(&items);
            let mut tape = ActivationTape::new();
            let out = graph.forward_opts(&params, &noisy, Default::default(), Some(&mut tape))?;
            let teacher_out = match teacher {
                Some((tg, tp)) => tg.forward(tp, &noisy)?,
                None => gt.clone(),
            };
            let report = loss_total(&out, &teacher_out, &gt, weights)?;
            let upstream = loss_backward(&out, &teacher_out, &gt, weights)?;
            let grads = graph.backward(&params, &mut tape, &upstream)?;
            let mut gvecs = grads.params;
            clip_global_norm(&mut gvecs, cfg.clip_norm);
            adam_step(&mut params, &gvecs, &mut state, lr, cfg)?;
            loss_sum += report.l_total;
        }
        let l_total = loss_sum / cfg.steps_per_epoch as f64;
        let evaluate = !val_pairs.is_empty()
            && ((epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs);
        let val_psnr = if evaluate {
            let p = validation_psnr(&graph, &params, val_pairs)?;
            if best.as_ref().map(|(b, _)| p > *b).unwrap_or(true) {
                best = Some((p, params.clone()));
            }
            Some(p)
        } else {
            None
        };
        log.push(EpochLog {
            epoch,
            lr,
            crop,
            l_total,
            val_psnr,
        });
    }

    let (best_val_psnr, best_params) = match best {
        Some((p, bp)) => (p, bp),
        None => (f64::NAN, params.clone()),
    };
    let result = TrainResult {
        params: best_params,
        best_val_psnr,
        final_params: params,
        log,
    };
    if let Some(dir) = &cfg.out_dir {
        std::fs::create_dir_all(dir)?;
        result.params.save_ldnw(dir.join("best.ldnw"))?;
        result.final_params.save_ldnw(dir.join("last.ldnw"))?;
        std::fs::write(dir.join("log.txt"), result.log_text(cfg, weights))?;
    }
    Ok(result)
}

/// Supervised training (no teacher term). `weights.lambda_distill` must be 0.
pub fn train_supervised(
    arch: &ArchConfig,
    train_pairs: &[ImagePair],
    val_pairs: &[ImagePair],
    cfg: &TrainConfig,
    weights: &LossWeights,
) -> Result<TrainResult> {
    if weights.lambda_distill != 0.0 {
        return Err(Error::Config(
            "supervised training requires lambda_distill = 0 (use train_distilled)".into(),
        ));
    }
    train_loop(arch, None, train_pairs, val_pairs, cfg, weights)
}

/// Distillation training against a frozen teacher. The teacher runs
/// inference only; its parameters are never touched.
pub fn train_distilled(
    student_arch: &ArchConfig,
    teacher_arch: &ArchConfig,
    teacher_params: &ModelParams,
    train_pairs: &[ImagePair],
    val_pairs: &[ImagePair],
    cfg: &TrainConfig,
    weights: &LossWeights,
) -> Result<TrainResult> {
    let teacher_graph = teacher_arch.build_graph()?;
    train_loop(
        student_arch,
        Some((&teacher_graph, teacher_params)),
        train_pairs,
        val_pairs,
        cfg,
        weights,
    )
}
