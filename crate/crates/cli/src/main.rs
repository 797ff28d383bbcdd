//! Command-line front end: denoise, eval, train, distill, count, parity,
//! membudget, export-fp16.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure. Every command is
//! deterministic given identical flags and seed, never mutates its inputs,
//! and echoes its resolved numeric settings at startup. `LDN_THREADS` caps
//! the worker thread pool.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use litedenoise_core::data::{load_pairs, load_rgb8, save_rgb8, synth_dataset, ImagePair, NoiseModel};
use litedenoise_core::deploy::{
    estimate_memory, export_fp16, parity_check, tiled_forward_opts, ParityPath, TilePlan,
    FP16_PARITY_TOLERANCE,
};
use litedenoise_core::graph::ExecOpts;
use litedenoise_core::loss::LossWeights;
use litedenoise_core::metrics::evaluate_set;
use litedenoise_core::model::{model_macs, param_count, ArchConfig, ModelParams};
use litedenoise_core::ops::clip01;
use litedenoise_core::train::{train_distilled, train_supervised, TrainConfig};
use litedenoise_core::{Dtype, Tensor4};

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<litedenoise_core::Error> for CliError {
    fn from(e: litedenoise_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type CmdResult = Result<(), CliError>;

fn usage<T>(msg: impl Into<String>) -> Result<T, CliError> {
    Err(CliError::Usage(msg.into()))
}

#[derive(Parser)]
#[command(
    name = "ldn",
    about = "Train, evaluate, and deploy the lightweight denoiser and its teacher",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Restore an image with a trained model
    Denoise(DenoiseArgs),
    /// Score a model on paired noisy/clean directories (PSNR/SSIM)
    Eval(EvalArgs),
    /// Supervised training (no teacher)
    Train(TrainArgs),
    /// Knowledge distillation against a frozen teacher
    Distill(DistillArgs),
    /// Parameter and MAC accounting
    Count(CountArgs),
    /// Numerical parity between execution paths
    Parity(ParityArgs),
    /// Activation-memory estimate and budget check
    Membudget(MembudgetArgs),
    /// Cast a weight file to FP16
    ExportFp16(ExportArgs),
}

/// Architecture selection: a named preset plus optional overrides.
#[derive(Args, Debug)]
struct ArchArgs {
    /// Architecture preset: "student" or "teacher"
    #[arg(long, default_value = "student")]
    arch: String,
    /// Override encoder level widths, e.g. 16,32,64,128
    #[arg(long, value_delimiter = ',')]
    widths: Option<Vec<usize>>,
    /// Override bottleneck width
    #[arg(long)]
    bottleneck: Option<usize>,
    /// Override blocks per encoder stage
    #[arg(long)]
    enc_blocks: Option<usize>,
    /// Override blocks at the bottleneck
    #[arg(long)]
    bottleneck_blocks: Option<usize>,
    /// Override blocks per decoder stage
    #[arg(long)]
    dec_blocks: Option<usize>,
}

impl ArchArgs {
    fn build(&self) -> Result<ArchConfig, CliError> {
        let mut cfg = match self.arch.as_str() {
            "student" => ArchConfig::student_default(),
            "teacher" => ArchConfig::teacher_default(),
            other => return usage(format!("unknown --arch '{other}' (student or teacher)")),
        };
        if let Some(w) = &self.widths {
            cfg.level_widths = w.clone();
        }
        if let Some(b) = self.bottleneck {
            cfg.bottleneck_width = b;
        }
        if let Some(v) = self.enc_blocks {
            cfg.enc_blocks = v;
        }
        if let Some(v) = self.bottleneck_blocks {
            cfg.bottleneck_blocks = v;
        }
        if let Some(v) = self.dec_blocks {
            cfg.dec_blocks = v;
        }
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }

    fn describe(&self, cfg: &ArchConfig) -> String {
        format!(
            "arch={} widths={:?} bottleneck={} blocks={}/{}/{} alignment={}",
            self.arch,
            cfg.level_widths,
            cfg.bottleneck_width,
            cfg.enc_blocks,
            cfg.bottleneck_blocks,
            cfg.dec_blocks,
            cfg.alignment()
        )
    }
}

fn parse_res(s: &str) -> Result<(usize, usize), CliError> {
    let parts: Vec<&str> = s.split('x').collect();
    if parts.len() != 2 {
        return usage(format!("bad resolution '{s}', expected HxW like 1088x1920"));
    }
    let h = parts[0]
        .parse::<usize>()
        .map_err(|_| CliError::Usage(format!("bad height in '{s}'")))?;
    let w = parts[1]
        .parse::<usize>()
        .map_err(|_| CliError::Usage(format!("bad width in '{s}'")))?;
    if h == 0 || w == 0 {
        return usage(format!("resolution '{s}' must be positive"));
    }
    Ok((h, w))
}

fn parse_schedule(s: &str) -> Result<Vec<(usize, usize)>, CliError> {
    let mut out = Vec::new();
    for item in s.split(',') {
        let parts: Vec<&str> = item.split(':').collect();
        if parts.len() != 2 {
            return usage(format!(
                "bad crop schedule entry '{item}', expected START:SIZE like 0:64"
            ));
        }
        let start = parts[0]
            .parse::<usize>()
            .map_err(|_| CliError::Usage(format!("bad epoch in '{item}'")))?;
        let size = parts[1]
            .parse::<usize>()
            .map_err(|_| CliError::Usage(format!("bad crop size in '{item}'")))?;
        out.push((start, size));
    }
    Ok(out)
}

fn load_weights(path: &PathBuf, cfg: &ArchConfig) -> Result<ModelParams, CliError> {
    let params = ModelParams::load_ldnw(path)
        .map_err(|e| CliError::Usage(format!("cannot load weights {}: {e}", path.display())))?;
    let graph = cfg.build_graph()?;
    graph
        .check_params(&params)
        .map_err(|e| CliError::Usage(format!("weights do not match the architecture: {e}")))?;
    Ok(params)
}

#[derive(Args, Debug)]
struct DenoiseArgs {
    #[command(flatten)]
    arch: ArchArgs,
    /// LDNW weight file
    #[arg(long)]
    weights: PathBuf,
    /// Input image (8-bit RGB)
    #[arg(long)]
    input: PathBuf,
    /// Output image path
    #[arg(long)]
    output: PathBuf,
    /// Tile extent for halo-tiled inference (multiple of the alignment)
    #[arg(long)]
    tile: Option<usize>,
    /// Halo override in pixels (default: receptive radius rounded up)
    #[arg(long)]
    halo: Option<usize>,
    /// Run with FP16 weights and activations
    #[arg(long)]
    fp16: bool,
}

fn cmd_denoise(a: &DenoiseArgs) -> CmdResult {
    let cfg = a.arch.build()?;
    println!(
        "resolved: {} tile={:?} halo={:?} fp16={}",
        a.arch.describe(&cfg),
        a.tile,
        a.halo,
        a.fp16
    );
    let params = load_weights(&a.weights, &cfg)?;
    let graph = cfg.build_graph()?;
    let img = load_rgb8(&a.input)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", a.input.display())))?;
    graph
        .check_input(&img)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let (run_params, opts) = if a.fp16 {
        let (p16, saturated) = export_fp16(&params);
        if saturated > 0 {
            println!("fp16 cast saturated {saturated} weight values");
        }
        (
            p16,
            ExecOpts {
                fp16: true,
                ..ExecOpts::default()
            },
        )
    } else {
        (params, ExecOpts::default())
    };
    let restored = match a.tile {
        None => graph.forward_opts(&run_params, &img, opts, None)?,
        Some(tile) => {
            let plan = match a.halo {
                None => TilePlan::new(&graph, img.h(), img.w(), (tile, tile)),
                Some(h) => TilePlan::with_halo(&graph, img.h(), img.w(), (tile, tile), h),
            }
            .map_err(|e| CliError::Usage(e.to_string()))?;
            println!(
                "tiling: {} tiles of {tile}x{tile}, halo {}",
                plan.tiles.len(),
                plan.halo
            );
            tiled_forward_opts(&graph, &run_params, &img, &plan, opts)?
        }
    };
    save_rgb8(&clip01(&restored), &a.output)?;
    println!("wrote {}", a.output.display());
    Ok(())
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    arch: ArchArgs,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    noisy_dir: PathBuf,
    #[arg(long)]
    clean_dir: PathBuf,
    /// Also write the per-image table as CSV
    #[arg(long)]
    report: Option<PathBuf>,
}

fn cmd_eval(a: &EvalArgs) -> CmdResult {
    let cfg = a.arch.build()?;
    println!("resolved: {}", a.arch.describe(&cfg));
    let params = load_weights(&a.weights, &cfg)?;
    let graph = cfg.build_graph()?;
    let pairs = load_pairs(&a.noisy_dir, &a.clean_dir)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    if pairs.is_empty() {
        return usage("no image pairs found");
    }
    let report = evaluate_set(&graph, &params, &pairs)?;
    print!("{}", report.to_table());
    if let Some(path) = &a.report {
        report.write_csv(path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

/// Flags shared by `train` and `distill`.
#[derive(Args, Debug)]
struct TrainFlags {
    /// Checkpoint/log directory
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr_max: f64,
    #[arg(long, default_value_t = 1e-5)]
    lr_min: f64,
    /// Cosine period of the base phase (defaults to the base phase length)
    #[arg(long)]
    t_max: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    clip_norm: f64,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 16)]
    steps_per_epoch: usize,
    /// Progressive crop schedule, START:SIZE entries, e.g. 0:64,20:128
    #[arg(long, default_value = "0:64")]
    crop_schedule: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    eval_every: usize,
    /// Ground-truth MSE weight
    #[arg(long, default_value_t = 100.0)]
    lambda_gt: f64,
    /// Ground-truth L1 weight
    #[arg(long, default_value_t = 50.0)]
    lambda_l1: f64,
    /// Paired training images: noisy side
    #[arg(long, requires = "clean_dir")]
    noisy_dir: Option<PathBuf>,
    /// Paired training images: clean side
    #[arg(long, requires = "noisy_dir")]
    clean_dir: Option<PathBuf>,
    /// Validation pairs held out from the end of the (lexicographic) list
    #[arg(long, default_value_t = 8)]
    val_count: usize,
    /// Generate a synthetic dataset of this many training images instead of
    /// loading directories
    #[arg(long)]
    synth_count: Option<usize>,
    #[arg(long, default_value_t = 64)]
    synth_size: usize,
    /// Signal-dependent noise variance coefficient
    #[arg(long, default_value_t = 0.01)]
    noise_a: f64,
    /// Read-noise variance floor
    #[arg(long, default_value_t = 0.0004)]
    noise_b: f64,
}

impl TrainFlags {
    fn train_config(&self) -> Result<TrainConfig, CliError> {
        let schedule = parse_schedule(&self.crop_schedule)?;
        let base_len = schedule
            .get(1)
            .map(|(s, _)| *s)
            .unwrap_or(self.epochs)
            .min(self.epochs);
        let cfg = TrainConfig {
            epochs: self.epochs,
            lr_max: self.lr_max,
            lr_min: self.lr_min,
            t_max: self.t_max.unwrap_or(base_len.max(1)),
            clip_norm: self.clip_norm,
            batch_size: self.batch,
            steps_per_epoch: self.steps_per_epoch,
            crop_schedule: schedule,
            seed: self.seed,
            eval_every: self.eval_every,
            out_dir: Some(self.out_dir.clone()),
            ..TrainConfig::default()
        };
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }

    fn datasets(&self) -> Result<(Vec<ImagePair>, Vec<ImagePair>), CliError> {
        match (&self.noisy_dir, &self.clean_dir, self.synth_count) {
            (Some(nd), Some(cd), None) => {
                let mut pairs = load_pairs(nd, cd).map_err(|e| CliError::Usage(e.to_string()))?;
                if pairs.len() <= self.val_count {
                    return usage(format!(
                        "need more than --val-count {} pairs, found {}",
                        self.val_count,
                        pairs.len()
                    ));
                }
                let val = pairs.split_off(pairs.len() - self.val_count);
                Ok((pairs, val))
            }
            (None, None, Some(count)) => {
                let noise = NoiseModel::new(self.noise_a, self.noise_b)
                    .map_err(|e| CliError::Usage(e.to_string()))?;
                let all =
                    synth_dataset(count + self.val_count, self.synth_size, &noise, self.seed)?;
                let mut train = all;
                let val = train.split_off(count);
                Ok((train, val))
            }
            (None, None, None) => usage("provide either --noisy-dir/--clean-dir or --synth-count"),
            _ => usage("--synth-count cannot be combined with image directories"),
        }
    }

    fn echo(&self, cfg: &TrainConfig, weights: &LossWeights) {
        println!(
            "resolved: epochs={} lr_max={} lr_min={} t_max={} clip_norm={} batch={} steps_per_epoch={} crop_schedule={:?} seed={} eval_every={}",
            cfg.epochs, cfg.lr_max, cfg.lr_min, cfg.t_max, cfg.clip_norm, cfg.batch_size,
            cfg.steps_per_epoch, cfg.crop_schedule, cfg.seed, cfg.eval_every
        );
        println!(
            "resolved: lambda_gt={} lambda_distill={} lambda_l1={} alpha={}",
            weights.lambda_gt,
            weights.lambda_distill,
            weights.lambda_l1,
            weights.alpha()
        );
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    arch: ArchArgs,
    #[command(flatten)]
    flags: TrainFlags,
}

fn cmd_train(a: &TrainArgs) -> CmdResult {
    let cfg = a.arch.build()?;
    let tcfg = a.flags.train_config()?;
    let weights = LossWeights {
        lambda_gt: a.flags.lambda_gt,
        lambda_distill: 0.0,
        lambda_l1: a.flags.lambda_l1,
    };
    println!("resolved: {}", a.arch.describe(&cfg));
    a.flags.echo(&tcfg, &weights);
    let (train, val) = a.flags.datasets()?;
    println!("dataset: {} train / {} val", train.len(), val.len());
    let result = train_supervised(&cfg, &train, &val, &tcfg, &weights)?;
    println!(
        "best val PSNR {:.4} dB; checkpoints in {}",
        result.best_val_psnr,
        a.flags.out_dir.display()
    );
    Ok(())
}

#[derive(Args, Debug)]
struct DistillArgs {
    #[command(flatten)]
    arch: ArchArgs,
    #[command(flatten)]
    flags: TrainFlags,
    /// Frozen teacher weight file (LDNW)
    #[arg(long)]
    teacher_weights: Option<PathBuf>,
    /// Teacher preset: "student" or "teacher"
    #[arg(long, default_value = "teacher")]
    teacher_arch: String,
    /// Teacher width override
    #[arg(long, value_delimiter = ',')]
    teacher_widths: Option<Vec<usize>>,
    /// Teacher bottleneck override
    #[arg(long)]
    teacher_bottleneck: Option<usize>,
    /// Teacher-matching MSE weight; the default 900 with --lambda-gt 100
    /// puts alpha = 900/(900+100) = 0.9 on the teacher
    #[arg(long, default_value_t = 900.0)]
    lambda_distill: f64,
}

fn cmd_distill(a: &DistillArgs) -> CmdResult {
    let student_cfg = a.arch.build()?;
    let teacher_args = ArchArgs {
        arch: a.teacher_arch.clone(),
        widths: a.teacher_widths.clone(),
        bottleneck: a.teacher_bottleneck,
        enc_blocks: None,
        bottleneck_blocks: None,
        dec_blocks: None,
    };
    let teacher_cfg = teacher_args.build()?;
    let Some(teacher_weights_path) = &a.teacher_weights else {
        return usage("distillation requires --teacher-weights");
    };
    let tcfg = a.flags.train_config()?;
    let weights = LossWeights {
        lambda_gt: a.flags.lambda_gt,
        lambda_distill: a.lambda_distill,
        lambda_l1: a.flags.lambda_l1,
    };
    println!("resolved: student {}", a.arch.describe(&student_cfg));
    println!("resolved: teacher {}", teacher_args.describe(&teacher_cfg));
    a.flags.echo(&tcfg, &weights);
    let teacher_params = load_weights(teacher_weights_path, &teacher_cfg)?;
    let (train, val) = a.flags.datasets()?;
    println!("dataset: {} train / {} val", train.len(), val.len());
    let result = train_distilled(
        &student_cfg,
        &teacher_cfg,
        &teacher_params,
        &train,
        &val,
        &tcfg,
        &weights,
    )?;
    println!(
        "best val PSNR {:.4} dB; checkpoints in {}",
        result.best_val_psnr,
        a.flags.out_dir.display()
    );
    Ok(())
}

#[derive(Args, Debug)]
struct CountArgs {
    #[command(flatten)]
    arch: ArchArgs,
    /// Also report MACs at this resolution, e.g. 1088x1920
    #[arg(long)]
    res: Option<String>,
}

fn cmd_count(a: &CountArgs) -> CmdResult {
    let cfg = a.arch.build()?;
    println!("resolved: {}", a.arch.describe(&cfg));
    let params = param_count(&cfg)?;
    println!("parameters: {params} ({:.3}M)", params as f64 / 1e6);
    let is_default_student = cfg == ArchConfig::student_default();
    if is_default_student {
        println!("deployed-model reference: 1.96M params, 14.13 GMACs at 1088x1920");
        let dev = (params as f64 - 1.96e6) / 1.96e6;
        println!("parameter deviation from 1.96M: {:+.2}%", dev * 100.0);
    }
    if cfg == ArchConfig::teacher_default() {
        println!("teacher reference: 41.6M params");
        let dev = (params as f64 - 41.6e6) / 41.6e6;
        println!("parameter deviation from 41.6M: {:+.2}%", dev * 100.0);
    }
    if let Some(res) = &a.res {
        let (h, w) = parse_res(res)?;
        let macs = model_macs(&cfg, h, w).map_err(|e| CliError::Usage(e.to_string()))?;
        println!("MACs at {h}x{w}: {macs} ({:.2} GMACs)", macs as f64 / 1e9);
        if is_default_student && (h, w) == (1088, 1920) {
            println!(
                "GMAC ratio to the published 14.13: {:.2}x (deployed block layout is not public)",
                macs as f64 / 14.13e9
            );
        }
    }
    Ok(())
}

#[derive(Args, Debug)]
struct ParityArgs {
    #[command(flatten)]
    arch: ArchArgs,
    /// Weights to check (default: fresh seeded initialization)
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// First path: reference-f32 | optimized-f32 | fp16-weights
    #[arg(long, default_value = "reference-f32")]
    path_a: String,
    /// Second path
    #[arg(long, default_value = "optimized-f32")]
    path_b: String,
    /// Max-abs tolerance (default 1e-4; 5e-3 when a path is fp16-weights)
    #[arg(long)]
    tolerance: Option<f64>,
    /// Number of random probe inputs
    #[arg(long, default_value_t = 10)]
    inputs: usize,
    /// Probe input extent (multiple of the alignment)
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Also write the per-input table as CSV
    #[arg(long)]
    report: Option<PathBuf>,
}

fn parse_path(s: &str) -> Result<ParityPath, CliError> {
    match s {
        "reference-f32" => Ok(ParityPath::ReferenceF32),
        "optimized-f32" => Ok(ParityPath::OptimizedF32),
        "fp16-weights" => Ok(ParityPath::Fp16Weights),
        other => usage(format!(
            "unknown path '{other}' (reference-f32, optimized-f32, fp16-weights)"
        )),
    }
}

fn cmd_parity(a: &ParityArgs) -> CmdResult {
    use rand::{Rng, SeedableRng};
    let cfg = a.arch.build()?;
    let path_a = parse_path(&a.path_a)?;
    let path_b = parse_path(&a.path_b)?;
    let fp16_involved = path_a == ParityPath::Fp16Weights || path_b == ParityPath::Fp16Weights;
    let tolerance = a.tolerance.unwrap_or(if fp16_involved {
        FP16_PARITY_TOLERANCE
    } else {
        1e-4
    });
    println!(
        "resolved: {} path_a={path_a} path_b={path_b} tolerance={tolerance:e} inputs={} size={} seed={}",
        a.arch.describe(&cfg),
        a.inputs,
        a.size,
        a.seed
    );
    let graph = cfg.build_graph()?;
    if a.size % graph.alignment() != 0 {
        return usage(format!(
            "--size {} must be a multiple of the alignment {}",
            a.size,
            graph.alignment()
        ));
    }
    let params = match &a.weights {
        Some(path) => load_weights(path, &cfg)?,
        None => ModelParams::init_he(&graph, a.seed),
    };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(a.seed ^ 0x70617269_7479);
    let inputs: Vec<Tensor4> = (0..a.inputs)
        .map(|_| {
            let data = (0..a.size * a.size * cfg.input_channels)
                .map(|_| rng.gen_range(0.0f32..1.0))
                .collect();
            Tensor4::from_vec([1, a.size, a.size, cfg.input_channels], data)
                .expect("sized buffer")
        })
        .collect();
    let report = parity_check(&graph, &params, &inputs, path_a, path_b, tolerance)?;
    print!("{}", report.to_table());
    if let Some(path) = &a.report {
        report.write_csv(path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

#[derive(Args, Debug)]
struct MembudgetArgs {
    /// Resolution to simulate, e.g. 2432x3200
    #[arg(long, default_value = "2432x3200")]
    res: String,
    /// Activation dtype: f16 or f32
    #[arg(long, default_value = "f16")]
    dtype: String,
    /// Budget in bytes; prints FITS/OOM per architecture when set
    #[arg(long)]
    budget: Option<u64>,
    /// Estimate per-tile memory for this tile extent instead
    #[arg(long)]
    tile: Option<usize>,
    /// Print the full per-layer live-set table
    #[arg(long)]
    table: bool,
}

fn cmd_membudget(a: &MembudgetArgs) -> CmdResult {
    let (h, w) = parse_res(&a.res)?;
    let dtype = match a.dtype.as_str() {
        "f16" => Dtype::F16,
        "f32" => Dtype::F32,
        other => return usage(format!("unknown dtype '{other}' (f16 or f32)")),
    };
    println!(
        "resolved: res={h}x{w} dtype={} budget={:?} tile={:?}",
        a.dtype, a.budget, a.tile
    );
    for (name, cfg) in [
        ("student", ArchConfig::student_default()),
        ("teacher", ArchConfig::teacher_default()),
    ] {
        let graph = cfg.build_graph()?;
        if h % graph.alignment() != 0 || w % graph.alignment() != 0 {
            return usage(format!(
                "resolution {h}x{w} must be a multiple of {} for the {name}",
                graph.alignment()
            ));
        }
        let plan = match a.tile {
            None => None,
            Some(t) => Some(
                TilePlan::new(&graph, h, w, (t, t)).map_err(|e| CliError::Usage(e.to_string()))?,
            ),
        };
        let est = estimate_memory(&graph, h, w, dtype, plan.as_ref())?;
        if a.table {
            print!("{}", est.to_table());
        }
        let verdict = match a.budget {
            None => String::new(),
            Some(b) => {
                if est.peak_bytes <= b {
                    " -> FITS".into()
                } else {
                    " -> OOM".to_string()
                }
            }
        };
        println!(
            "{name}: peak activation {} bytes ({:.1} MB){verdict}",
            est.peak_bytes,
            est.peak_bytes as f64 / (1u64 << 20) as f64
        );
    }
    Ok(())
}

#[derive(Args, Debug)]
struct ExportArgs {
    /// Source LDNW weight file (F32)
    #[arg(long)]
    weights: PathBuf,
    /// Destination LDNW weight file (F16)
    #[arg(long)]
    output: PathBuf,
}

fn cmd_export_fp16(a: &ExportArgs) -> CmdResult {
    let params = ModelParams::load_ldnw(&a.weights)
        .map_err(|e| CliError::Usage(format!("cannot load {}: {e}", a.weights.display())))?;
    let (p16, saturated) = export_fp16(&params);
    p16.save_ldnw(&a.output)?;
    println!(
        "wrote {} ({} tensors, {} values, {} saturated)",
        a.output.display(),
        p16.len(),
        p16.total_values(),
        saturated
    );
    Ok(())
}

fn init_threads() {
    if let Ok(v) = std::env::var("LDN_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
        }
    }
}

fn main() -> ExitCode {
    init_threads();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            // --help / --version land here with a non-error kind.
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0u8,
                _ => 1u8,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.cmd {
        Cmd::Denoise(a) => cmd_denoise(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Distill(a) => cmd_distill(a),
        Cmd::Count(a) => cmd_count(a),
        Cmd::Parity(a) => cmd_parity(a),
        Cmd::Membudget(a) => cmd_membudget(a),
        Cmd::ExportFp16(a) => cmd_export_fp16(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
