//! End-to-end checks of the `ldn` command surface: exit codes, determinism,
//! and the per-command output contracts.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn ldn() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ldn"))
}

fn run(args: &[&str]) -> Output {
    ldn().args(args).output().expect("spawn ldn")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_gradient_png(path: &Path, w: u32, h: u32) {
    let img = image::RgbImage::from_fn(w, h, |x, y| {
        image::Rgb([
            (x * 7 % 256) as u8,
            (y * 11 % 256) as u8,
            ((x + y) * 3 % 256) as u8,
        ])
    });
    img.save(path).unwrap();
}

fn zero_weights_file(dir: &Path) -> PathBuf {
    let cfg = litedenoise_core::model::ArchConfig::with_widths(
        litedenoise_core::model::ModelKind::Student,
        vec![4, 8],
        16,
    );
    let graph = cfg.build_graph().unwrap();
    let params = litedenoise_core::model::ModelParams::zeros(&graph);
    let path = dir.join("zero.ldnw");
    params.save_ldnw(&path).unwrap();
    path
}

#[test]
fn zero_weight_student_denoise_is_exact_identity_at_8bit() {
    let dir = tempfile::tempdir().unwrap();
    let weights = zero_weights_file(dir.path());
    let input = dir.path().join("in.png");
    write_gradient_png(&input, 48, 32);
    let output = dir.path().join("out.png");
    let out = run(&[
        "denoise",
        "--widths",
        "4,8",
        "--bottleneck",
        "16",
        "--weights",
        weights.to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
        "--output",
        output.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let a = image::open(&input).unwrap().to_rgb8();
    let b = image::open(&output).unwrap().to_rgb8();
    assert_eq!(a.as_raw(), b.as_raw());
}

#[test]
fn tiled_denoise_output_is_byte_identical_to_untiled() {
    let dir = tempfile::tempdir().unwrap();
    // Non-trivial weights so tiling actually matters.
    let cfg = litedenoise_core::model::ArchConfig::with_widths(
        litedenoise_core::model::ModelKind::Student,
        vec![4, 8],
        16,
    );
    let graph = cfg.build_graph().unwrap();
    let params = litedenoise_core::model::ModelParams::init_he(&graph, 5);
    let weights = dir.path().join("w.ldnw");
    params.save_ldnw(&weights).unwrap();

    let input = dir.path().join("in.png");
    write_gradient_png(&input, 64, 64);
    let whole = dir.path().join("whole.png");
    let tiled = dir.path().join("tiled.png");
    let base = [
        "denoise",
        "--widths",
        "4,8",
        "--bottleneck",
        "16",
        "--weights",
        weights.to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
    ];
    let out = run(&[&base[..], &["--output", whole.to_str().unwrap()]].concat());
    assert!(out.status.success(), "{}", stderr(&out));
    let out = run(&[
        &base[..],
        &["--output", tiled.to_str().unwrap(), "--tile", "24"],
    ]
    .concat());
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(
        std::fs::read(&whole).unwrap(),
        std::fs::read(&tiled).unwrap()
    );
}

#[test]
fn mismatched_weights_exit_one_with_shape_message() {
    let dir = tempfile::tempdir().unwrap();
    let weights = zero_weights_file(dir.path());
    let input = dir.path().join("in.png");
    write_gradient_png(&input, 32, 32);
    let out = run(&[
        "denoise",
        "--widths",
        "8,16", // different widths than the saved file
        "--bottleneck",
        "32",
        "--weights",
        weights.to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
        "--output",
        dir.path().join("o.png").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("mismatch"), "{}", stderr(&out));
}

#[test]
fn misaligned_input_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let weights = zero_weights_file(dir.path());
    let input = dir.path().join("in.png");
    write_gradient_png(&input, 33, 32); // width not a multiple of 4
    let out = run(&[
        "denoise",
        "--widths",
        "4,8",
        "--bottleneck",
        "16",
        "--weights",
        weights.to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
        "--output",
        dir.path().join("o.png").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("multiple"), "{}", stderr(&out));
}

#[test]
fn eval_identity_model_on_identical_dirs_caps_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let weights = zero_weights_file(dir.path());
    let imgs = dir.path().join("imgs");
    std::fs::create_dir(&imgs).unwrap();
    for i in 0..3 {
        write_gradient_png(&imgs.join(format!("img{i}.png")), 32, 32);
    }
    let report = dir.path().join("report.csv");
    let with_report = run(&[
        "eval",
        "--widths",
        "4,8",
        "--bottleneck",
        "16",
        "--weights",
        weights.to_str().unwrap(),
        "--noisy-dir",
        imgs.to_str().unwrap(),
        "--clean-dir",
        imgs.to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
    ]);
    assert!(with_report.status.success(), "{}", stderr(&with_report));
    let text = stdout(&with_report);
    assert!(text.contains("100.0000"), "{text}"); // capped PSNR
    assert!(text.contains("1.000000"), "{text}"); // SSIM of identical images
    let csv = std::fs::read_to_string(&report).unwrap();
    // header + 3 images + mean line
    assert_eq!(csv.lines().count(), 5);
    // Deterministic across repeated runs.
    let plain = [
        "eval",
        "--widths",
        "4,8",
        "--bottleneck",
        "16",
        "--weights",
        weights.to_str().unwrap(),
        "--noisy-dir",
        imgs.to_str().unwrap(),
        "--clean-dir",
        imgs.to_str().unwrap(),
    ];
    assert_eq!(stdout(&run(&plain)), stdout(&run(&plain)));
}

#[test]
fn distill_without_teacher_weights_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "distill",
        "--widths",
        "4,8",
        "--bottleneck",
        "16",
        "--synth-count",
        "2",
        "--val-count",
        "1",
        "--synth-size",
        "16",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr(&out).contains("--teacher-weights"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn help_shows_loss_defaults_and_alpha() {
    let out = run(&["distill", "--help"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("900"), "{text}");
    assert!(text.contains("100"), "{text}");
    assert!(text.contains("0.9"), "{text}");
}

#[test]
fn train_runs_are_deterministic_for_a_seed() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let common = [
        "train",
        "--widths",
        "4,8",
        "--bottleneck",
        "16",
        "--synth-count",
        "4",
        "--val-count",
        "2",
        "--synth-size",
        "32",
        "--epochs",
        "2",
        "--batch",
        "2",
        "--steps-per-epoch",
        "2",
        "--crop-schedule",
        "0:16",
        "--seed",
        "11",
        "--out-dir",
    ];
    let a = run(&[&common[..], &[dir_a.path().to_str().unwrap()]].concat());
    let b = run(&[&common[..], &[dir_b.path().to_str().unwrap()]].concat());
    assert!(a.status.success(), "{}", stderr(&a));
    assert!(b.status.success(), "{}", stderr(&b));
    assert_eq!(
        std::fs::read(dir_a.path().join("best.ldnw")).unwrap(),
        std::fs::read(dir_b.path().join("best.ldnw")).unwrap()
    );
    assert_eq!(
        std::fs::read_to_string(dir_a.path().join("log.txt")).unwrap(),
        std::fs::read_to_string(dir_b.path().join("log.txt")).unwrap()
    );
}

#[test]
fn count_reports_params_and_reference_figures() {
    let out = run(&["count", "--arch", "student", "--res", "1088x1920"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("1963411"), "{text}");
    assert!(text.contains("1.96M"), "{text}");
    assert!(text.contains("14.13"), "{text}");
    assert!(text.contains("GMACs"), "{text}");

    let bad = run(&["count", "--arch", "student", "--res", "banana"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn parity_f32_paths_pass_at_default_tolerance() {
    let out = run(&[
        "parity", "--widths", "4,8", "--bottleneck", "16", "--inputs", "4", "--size", "16",
        "--seed", "2",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("PASS"), "{text}");
    assert!(text.contains("1e-4") || text.contains("1e-04") || text.contains("0.0001"), "{text}");
}

#[test]
fn membudget_splits_student_and_teacher_on_a_budget_between_them() {
    // 3 GB sits between the measured student (~1.5 GB) and teacher (~5.7 GB)
    // peaks at 2432x3200 in FP16.
    let out = run(&[
        "membudget",
        "--res",
        "2432x3200",
        "--dtype",
        "f16",
        "--budget",
        "3221225472",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let student_line = text.lines().find(|l| l.starts_with("student:")).unwrap();
    let teacher_line = text.lines().find(|l| l.starts_with("teacher:")).unwrap();
    assert!(student_line.contains("FITS"), "{student_line}");
    assert!(teacher_line.contains("OOM"), "{teacher_line}");
}

#[test]
fn export_fp16_halves_weight_payload_and_roundtrips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = litedenoise_core::model::ArchConfig::with_widths(
        litedenoise_core::model::ModelKind::Student,
        vec![4, 8],
        16,
    );
    let graph = cfg.build_graph().unwrap();
    let params = litedenoise_core::model::ModelParams::init_he(&graph, 9);
    let f32_path = dir.path().join("w32.ldnw");
    params.save_ldnw(&f32_path).unwrap();
    let f16_path = dir.path().join("w16.ldnw");
    let out = run(&[
        "export-fp16",
        "--weights",
        f32_path.to_str().unwrap(),
        "--output",
        f16_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let loaded = litedenoise_core::model::ModelParams::load_ldnw(&f16_path).unwrap();
    assert_eq!(loaded.total_values(), params.total_values());
    let s32 = std::fs::metadata(&f32_path).unwrap().len();
    let s16 = std::fs::metadata(&f16_path).unwrap().len();
    assert!(s16 < s32 * 6 / 10, "f16 {s16} vs f32 {s32}");
}

#[test]
fn unknown_flags_exit_one_and_help_exits_zero() {
    let bad = run(&["count", "--frobnicate"]);
    assert_eq!(bad.status.code(), Some(1));
    let help = run(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    let _ = TINY; // shared flag set exercised above via explicit args
}
