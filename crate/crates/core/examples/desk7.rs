use std::time::Instant;
use litedenoise_core::data::{synth_dataset, NoiseModel};
use litedenoise_core::loss::LossWeights;
use litedenoise_core::model::{ArchConfig, ModelKind};
use litedenoise_core::train::{train_distilled, train_supervised, validation_psnr, TrainConfig};

fn main() {
    let t_all = Instant::now();
    let noise = NoiseModel::new(0.01, 0.0004).unwrap();
    let train = synth_dataset(200, 64, &noise, 20_000).unwrap();
    let val = synth_dataset(50, 64, &noise, 30_000).unwrap();

    let teacher_arch = ArchConfig {
        kind: ModelKind::Teacher,
        input_channels: 3,
        level_widths: vec![16, 32],
        bottleneck_width: 64,
        enc_blocks: 2, bottleneck_blocks: 2, dec_blocks: 2,
    };
    let student_arch = ArchConfig::with_widths(ModelKind::Student, vec![8, 16, 32, 64], 128);

    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);

    let teacher_cfg = TrainConfig {
        epochs: 20, t_max: 20,
        batch_size: 4, steps_per_epoch: 12,
        crop_schedule: vec![(0, 32)],
        seed, eval_every: 5,
        ..TrainConfig::default()
    };
    let t0 = Instant::now();
    let teacher = train_supervised(&teacher_arch, &train, &val, &teacher_cfg, &LossWeights::supervised_default()).unwrap();
    println!("seed {seed}: teacher best {:.3} dB ({:?})", teacher.best_val_psnr, t0.elapsed());

    let student_cfg = TrainConfig {
        epochs: 24, t_max: 20,
        batch_size: 4, steps_per_epoch: 12,
        crop_schedule: vec![(0, 32), (20, 64)],
        seed, eval_every: 4,
        ..TrainConfig::default()
    };
    let t1 = Instant::now();
    let sup = train_supervised(&student_arch, &train, &val, &student_cfg, &LossWeights::supervised_default()).unwrap();
    println!("seed {seed}: supervised student best {:.3} dB ({:?})", sup.best_val_psnr, t1.elapsed());

    let t2 = Instant::now();
    let dis = train_distilled(&student_arch, &teacher_arch, &teacher.params, &train, &val, &student_cfg, &LossWeights::distill_default()).unwrap();
    println!("seed {seed}: distilled student best {:.3} dB ({:?})", dis.best_val_psnr, t2.elapsed());

    let tg = teacher_arch.build_graph().unwrap();
    let teacher_val = validation_psnr(&tg, &teacher.params, &val).unwrap();
    println!(
        "seed {seed}: teacher {:.3}, sup {:.3}, dis {:.3} | dis-sup {:+.3} dB, teacher-dis {:+.3} dB | total {:?}",
        teacher_val, sup.best_val_psnr, dis.best_val_psnr,
        dis.best_val_psnr - sup.best_val_psnr, teacher_val - dis.best_val_psnr,
        t_all.elapsed()
    );
}
