use std::time::Instant;
use litedenoise_core::data::{synth_dataset, NoiseModel};
use litedenoise_core::graph::ActivationTape;
use litedenoise_core::loss::{loss_backward, loss_total, LossWeights};
use litedenoise_core::model::{ArchConfig, ModelKind, ModelParams};
use litedenoise_core::train::validation_psnr;
use litedenoise_core::Tensor4;

fn main() {
    let noise = NoiseModel::new(0.01, 0.0004).unwrap();
    let val = synth_dataset(50, 64, &noise, 999).unwrap();

    let teacher = ArchConfig {
        kind: ModelKind::Teacher,
        input_channels: 3,
        level_widths: vec![16, 32],
        bottleneck_width: 64,
        enc_blocks: 2, bottleneck_blocks: 2, dec_blocks: 2,
    };
    let student = ArchConfig::with_widths(ModelKind::Student, vec![8, 16, 32, 64], 128);

    for (name, cfg) in [("teacher16/32b64", &teacher), ("student8-64b128", &student)] {
        let g = cfg.build_graph().unwrap();
        let p = ModelParams::init_he(&g, 1);
        for crop in [32usize, 64] {
            let batch = 4usize;
            let x = Tensor4::filled([batch, crop, crop, 3], 0.4);
            let gt = Tensor4::filled([batch, crop, crop, 3], 0.5);
            let w = LossWeights::supervised_default();
            let t0 = Instant::now();
            let mut tape = ActivationTape::new();
            let out = g.forward_opts(&p, &x, Default::default(), Some(&mut tape)).unwrap();
            let fwd = t0.elapsed();
            let t1 = Instant::now();
            let _ = loss_total(&out, &gt, &gt, &w).unwrap();
            let up = loss_backward(&out, &gt, &gt, &w).unwrap();
            let _ = g.backward(&p, &mut tape, &up).unwrap();
            let bwd = t1.elapsed();
            println!("{name} crop{crop} batch{batch}: fwd {:?}, loss+bwd {:?}", fwd, bwd);
        }
        let t2 = Instant::now();
        let psnr = validation_psnr(&g, &p, &val).unwrap();
        println!("{name}: eval 50x64^2 {:?} (psnr {:.2})", t2.elapsed(), psnr);
    }
    // noisy-input baseline PSNR
    let mut sum = 0.0;
    for pair in &val {
        sum += litedenoise_core::metrics::psnr(&pair.noisy, &pair.clean).unwrap();
    }
    println!("noisy baseline psnr: {:.3}", sum / val.len() as f64);
}
