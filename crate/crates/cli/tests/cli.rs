//! End-to-end exercises of the six subcommands, driving them through the
//! same argument structs `main` builds, plus process-level exit-code checks
//! against the compiled binary.

use fisr_cli::commands::{
    cmd_ablate, cmd_baseline, cmd_eval, cmd_gen, cmd_infer, cmd_train, evaluate_with, AblateArgs,
    BaselineArgs, EvalArgs, GenArgs, InferArgs, StitchArg, TrainArgs, UpscalerArg,
};
use fisr_cli::io::{read_json, sha256_file, write_frame_png};
use fisr_cli::CliError;
use fisr_core::frames::{Colorspace, Frame, MetricsReport};
use fisr_core::synthdata::{materialize, DatasetManifest};
use fisr_core::trainer::AblationRow;
use fisr_core::windowing::{Window, WindowPrediction};
use ndarray::Array3;
use serde_json::Value;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use tempfile::TempDir;

const GEN_TOML: &str = "\
patch = 32
frame_stride = 10
seed = 3

[desk]
count = 2
frame_count = 19
seed = 5
height = 32
width = 32
";

const TRAIN_TOML: &str = "\
epochs = 2
lr = 1e-3
batch_size = 3
seed = 7

[network]
base_channels = 4
levels = 1
unet_depth = 1
stack = \"full\"
bicubic_residual = true

[provider]
kind = \"block_matching\"
block = 8
search = 6
";

struct Fixture {
    root: TempDir,
    gen_config: PathBuf,
    train_config: PathBuf,
    data: PathBuf,
    run: PathBuf,
}

impl Fixture {
    fn checkpoint(&self) -> PathBuf {
        self.run.join("checkpoint.fisr")
    }

    fn tmp(&self, name: &str) -> PathBuf {
        let dir = self.root.path().join(name);
        fs::create_dir_all(&dir).unwrap();
        dir
    }
}

fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let root = TempDir::new().unwrap();
        let gen_config = root.path().join("gen.toml");
        let train_config = root.path().join("train.toml");
        fs::write(&gen_config, GEN_TOML).unwrap();
        fs::write(&train_config, TRAIN_TOML).unwrap();
        let data = root.path().join("data");
        let run = root.path().join("run");
        cmd_gen(&GenArgs { config: gen_config.clone(), out: data.clone(), force: false, seed: None })
            .unwrap();
        cmd_train(&train_args(&train_config, &data, &run)).unwrap();
        Fixture { root, gen_config, train_config, data, run }
    })
}

fn train_args(config: &Path, data: &Path, out: &Path) -> TrainArgs {
    TrainArgs {
        config: config.to_path_buf(),
        data: data.to_path_buf(),
        out: out.to_path_buf(),
        force: false,
        seed: None,
        mask: None,
        no_flow_stack: false,
        resume: None,
        device: "cpu".into(),
    }
}

/// Sorted (relative path, content hash) pairs for every file under `dir`.
fn dir_digest(dir: &Path) -> Vec<(String, String)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, String)>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, sha256_file(&path).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}

fn jsonl_lines(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn gen_writes_the_same_dataset_twice() {
    let fx = fixture();
    let again = fx.tmp("gen-again");
    cmd_gen(&GenArgs { config: fx.gen_config.clone(), out: again.clone(), force: true, seed: None })
        .unwrap();
    assert_eq!(dir_digest(&fx.data), dir_digest(&again));
}

#[test]
fn gen_sample_count_follows_stride_arithmetic() {
    let fx = fixture();
    let manifest: DatasetManifest = read_json(&fx.data.join("manifest.json")).unwrap();
    // 19 frames per scene, 9 per sample, stride 10: starts 0 and 10.
    assert_eq!(manifest.samples.len(), 4);
    for scene in 0..2 {
        let starts: Vec<usize> = manifest
            .samples
            .iter()
            .filter(|s| s.scene == scene)
            .map(|s| s.start_frame)
            .collect();
        assert_eq!(starts, vec![0, 10]);
    }
    let samples = materialize(&manifest).unwrap();
    assert_eq!(samples.len(), 4);
    assert_eq!(samples[0].hr_truth[0].data.dim(), (32, 32, 3));
    assert_eq!(samples[0].lr_inputs[0].data.dim(), (16, 16, 3));
}

#[test]
fn gen_refuses_a_nonempty_out_dir_without_force() {
    let fx = fixture();
    let out = fx.tmp("refuse");
    fs::write(out.join("keep.txt"), "precious").unwrap();
    let err = cmd_gen(&GenArgs {
        config: fx.gen_config.clone(),
        out: out.clone(),
        force: false,
        seed: None,
    })
    .unwrap_err();
    assert!(matches!(err, CliError::Usage(_)));
    assert_eq!(fs::read_to_string(out.join("keep.txt")).unwrap(), "precious");
}

#[test]
fn commands_echo_their_config_byte_for_byte() {
    let fx = fixture();
    assert_eq!(fs::read(fx.data.join("config.toml")).unwrap(), GEN_TOML.as_bytes());
    assert_eq!(fs::read(fx.run.join("config.toml")).unwrap(), TRAIN_TOML.as_bytes());
    let hashes = fs::read_to_string(fx.run.join("inputs.sha256")).unwrap();
    assert!(hashes.lines().any(|l| l.ends_with("  config.toml")));
    assert!(hashes.lines().any(|l| l.ends_with("  manifest.json")));
}

#[test]
fn train_logs_one_record_per_step() {
    let fx = fixture();
    let lines = jsonl_lines(&fx.run.join("metrics.jsonl"));
    // 4 samples, batch 3: 2 steps per epoch, 2 epochs.
    assert_eq!(lines.len(), 4);
    for (i, line) in lines.iter().enumerate() {
        assert_eq!(line["step"].as_u64().unwrap(), i as u64 + 1);
        assert_eq!(line["epoch"].as_u64().unwrap(), i as u64 / 2 + 1);
        assert!(line["total"].as_f64().unwrap().is_finite());
        assert_eq!(line["lr"].as_f64().unwrap(), 1e-3);
    }
    let sizes: Vec<usize> =
        lines.iter().map(|l| l["batch_samples"].as_array().unwrap().len()).collect();
    assert_eq!(sizes, vec![3, 1, 3, 1]);
}

#[test]
fn train_reruns_bitwise_identically() {
    let fx = fixture();
    let out = fx.tmp("train-again");
    cmd_train(&train_args(&fx.train_config, &fx.data, &out)).unwrap();
    assert_eq!(
        fs::read(fx.run.join("metrics.jsonl")).unwrap(),
        fs::read(out.join("metrics.jsonl")).unwrap()
    );
    assert_eq!(
        fs::read(fx.checkpoint()).unwrap(),
        fs::read(out.join("checkpoint.fisr")).unwrap()
    );
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let fx = fixture();
    let short_config = fx.root.path().join("train-short.toml");
    fs::write(&short_config, TRAIN_TOML.replace("epochs = 2", "epochs = 1")).unwrap();
    let half = fx.tmp("resume-half");
    cmd_train(&train_args(&short_config, &fx.data, &half)).unwrap();

    let full = fx.tmp("resume-full");
    let mut args = train_args(&fx.train_config, &fx.data, &full);
    args.resume = Some(half.join("checkpoint.fisr"));
    cmd_train(&args).unwrap();

    assert_eq!(
        fs::read(fx.checkpoint()).unwrap(),
        fs::read(full.join("checkpoint.fisr")).unwrap()
    );
    // The resumed log holds exactly the second epoch of the straight run.
    let straight = jsonl_lines(&fx.run.join("metrics.jsonl"));
    let resumed = jsonl_lines(&full.join("metrics.jsonl"));
    assert_eq!(resumed, straight[2..].to_vec());
}

#[test]
fn train_flags_land_in_resolved_json() {
    let fx = fixture();
    let out = fx.tmp("train-flags");
    let mut args = train_args(&fx.train_config, &fx.data, &out);
    args.mask = Some('b');
    args.no_flow_stack = true;
    args.seed = Some(99);
    cmd_train(&args).unwrap();
    let resolved: Value = read_json(&out.join("resolved.json")).unwrap();
    assert_eq!(resolved["seed"].as_u64().unwrap(), 99);
    assert_eq!(resolved["network"]["stack"], "frames_only");
    assert_eq!(resolved["mask"]["r1"], true);
    assert_eq!(resolved["mask"]["tm1"], true);
    assert_eq!(resolved["mask"]["tmm"], false);
    assert_eq!(resolved["mask"]["tm2"], false);
}

#[test]
fn eval_scores_ground_truth_at_the_psnr_cap() {
    let fx = fixture();
    let manifest: DatasetManifest = read_json(&fx.data.join("manifest.json")).unwrap();
    let samples = materialize(&manifest).unwrap();
    let (report, rows) = evaluate_with(&samples, |_, sample| {
        let mut preds = Vec::new();
        for w in 1..=3 {
            let window = Window::Stride1 { w };
            let frames: Vec<Frame> = window
                .output_times()
                .iter()
                .map(|t| sample.hr_at(*t).unwrap().clone())
                .collect();
            preds.push(WindowPrediction {
                window,
                base: fisr_core::windowing::TimeIndex(0),
                frames: frames.try_into().unwrap(),
            });
        }
        Ok(preds)
    })
    .unwrap();
    assert_eq!(report.vfisr_frames, 6 * samples.len());
    assert_eq!(report.sr_frames, 3 * samples.len());
    assert_eq!(report.psnr_vfisr, 100.0);
    assert_eq!(report.psnr_sr, 100.0);
    assert!(rows.iter().all(|r| r.ssim > 0.9999));
}

#[test]
fn eval_command_splits_interpolated_from_super_resolved() {
    let fx = fixture();
    let out = fx.tmp("eval");
    cmd_eval(&EvalArgs {
        checkpoint: fx.checkpoint(),
        data: fx.data.clone(),
        out: out.clone(),
        force: false,
        config: None,
        device: "cpu".into(),
    })
    .unwrap();
    let report: MetricsReport = read_json(&out.join("report.json")).unwrap();
    assert_eq!(report.vfisr_frames, 24);
    assert_eq!(report.sr_frames, 12);
    assert!(report.psnr_vfisr > 0.0 && report.psnr_vfisr <= 100.0);
    let rows = jsonl_lines(&out.join("frames.jsonl"));
    assert_eq!(rows.len(), 36);
    let vfi = rows.iter().filter(|r| r["kind"] == "vfi_sr").count();
    assert_eq!(vfi, 24);
    assert!(rows
        .iter()
        .all(|r| (r["time"].as_i64().unwrap() % 2 != 0) == (r["kind"] == "vfi_sr")));
    let mean = rows.iter().filter(|r| r["kind"] == "sr").map(|r| r["psnr"].as_f64().unwrap());
    let mean = mean.sum::<f64>() / 12.0;
    assert!((mean - report.psnr_sr).abs() < 1e-12);
}

#[test]
fn eval_report_roundtrips_through_serde() {
    let fx = fixture();
    let out = fx.tmp("eval-roundtrip");
    cmd_eval(&EvalArgs {
        checkpoint: fx.checkpoint(),
        data: fx.data.clone(),
        out: out.clone(),
        force: false,
        config: None,
        device: "cpu".into(),
    })
    .unwrap();
    let report: MetricsReport = read_json(&out.join("report.json")).unwrap();
    let reserialized = serde_json::to_string_pretty(&report).unwrap() + "\n";
    assert_eq!(fs::read_to_string(out.join("report.json")).unwrap(), reserialized);
}

/// Four small in-gamut frames with content that drifts per frame.
fn infer_inputs(dir: &Path) {
    fs::create_dir_all(dir).unwrap();
    for i in 0..4 {
        let mut data = Array3::zeros((15, 17, 3));
        for y in 0..15 {
            for x in 0..17 {
                let phase = (x + 2 * i) as f64 / 17.0 + y as f64 / 15.0;
                data[(y, x, 0)] = 0.2 + 0.6 * (0.5 + 0.5 * (phase * std::f64::consts::TAU).sin());
                data[(y, x, 1)] = 0.05 * (phase * 3.0).cos();
                data[(y, x, 2)] = -0.03;
            }
        }
        let frame = Frame::new(data, Colorspace::Yuv).unwrap();
        write_frame_png(&frame, &dir.join(format!("in-{i:02}.png"))).unwrap();
    }
}

#[test]
fn infer_doubles_frame_rate_and_resolution() {
    let fx = fixture();
    let input = fx.tmp("infer-in");
    infer_inputs(&input);
    let out = fx.tmp("infer-out");
    cmd_infer(&InferArgs {
        checkpoint: fx.checkpoint(),
        input: input.clone(),
        out: out.clone(),
        force: false,
        stitch_policy: StitchArg::Later,
        raw_dims: None,
        config: None,
        device: "cpu".into(),
    })
    .unwrap();

    let files: Vec<String> = {
        let mut v: Vec<String> = fs::read_dir(out.join("frames"))
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        v.sort();
        v
    };
    // 4 inputs leave 2 interior windows: 2*(4-2)+1 stitched frames.
    let expect: Vec<String> = (1..=5).map(|t| format!("frame-{t:04}.png")).collect();
    assert_eq!(files, expect);
    let img = image::open(out.join("frames/frame-0001.png")).unwrap();
    assert_eq!((img.width(), img.height()), (34, 30));

    let prov: Value = read_json(&out.join("provenance.json")).unwrap();
    assert_eq!(prov["input_frames"], 4);
    assert_eq!(prov["output_frames"], 5);
    assert_eq!(prov["input_size"], serde_json::json!([15, 17]));
    assert_eq!(prov["padded_size"], serde_json::json!([16, 18]));
    let frames = prov["frames"].as_array().unwrap();
    let shared = &frames[2];
    assert_eq!(shared["time"], 3);
    assert_eq!(shared["contributors"], serde_json::json!([0, 1]));
    assert_eq!(shared["chosen"], 1);
    assert_eq!(frames[0]["contributors"], serde_json::json!([0]));
}

#[test]
fn infer_average_policy_marks_overlaps_unattributed() {
    let fx = fixture();
    let input = fx.tmp("infer-avg-in");
    infer_inputs(&input);
    let out = fx.tmp("infer-avg-out");
    cmd_infer(&InferArgs {
        checkpoint: fx.checkpoint(),
        input,
        out: out.clone(),
        force: false,
        stitch_policy: StitchArg::Average,
        raw_dims: None,
        config: None,
        device: "cpu".into(),
    })
    .unwrap();
    let prov: Value = read_json(&out.join("provenance.json")).unwrap();
    let shared = &prov["frames"].as_array().unwrap()[2];
    assert_eq!(shared["chosen"], Value::Null);
    assert_eq!(prov["stitch_policy"], "average");
}

#[test]
fn infer_rejects_short_sequences() {
    let fx = fixture();
    let input = fx.tmp("infer-short-in");
    fs::create_dir_all(&input).unwrap();
    let mut data = Array3::zeros((8, 8, 3));
    data.fill(0.5);
    let frame = Frame::new(data, Colorspace::Yuv).unwrap();
    write_frame_png(&frame, &input.join("a.png")).unwrap();
    write_frame_png(&frame, &input.join("b.png")).unwrap();
    let err = cmd_infer(&InferArgs {
        checkpoint: fx.checkpoint(),
        input,
        out: fx.tmp("infer-short-out"),
        force: true,
        stitch_policy: StitchArg::Later,
        raw_dims: None,
        config: None,
        device: "cpu".into(),
    })
    .unwrap_err();
    assert!(matches!(err, CliError::Usage(_)));
}

#[test]
fn ablate_tabulates_every_variant_deterministically() {
    let fx = fixture();
    let config = fx.root.path().join("ablate.toml");
    fs::write(
        &config,
        "\
epochs = 1
lr = 1e-3
batch_size = 4
seed = 7

[network]
base_channels = 4
levels = 3
unet_depth = 1
stack = \"full\"
bicubic_residual = true

[provider]
kind = \"zero\"
",
    )
    .unwrap();
    let run = |out: &Path| {
        cmd_ablate(&AblateArgs {
            config: config.clone(),
            data: fx.data.clone(),
            eval_data: None,
            grid: "table2".into(),
            out: out.to_path_buf(),
            force: false,
            seed: None,
            device: "cpu".into(),
        })
        .unwrap();
    };
    let a = fx.tmp("ablate-a");
    let b = fx.tmp("ablate-b");
    run(&a);
    run(&b);

    let rows: Vec<AblationRow> = read_json(&a.join("table.json")).unwrap();
    let grid: Value = read_json(&a.join("grid.json")).unwrap();
    assert_eq!(rows.len(), grid.as_array().unwrap().len());
    let names: Vec<&str> =
        grid.as_array().unwrap().iter().map(|v| v["name"].as_str().unwrap()).collect();
    assert_eq!(rows.iter().map(|r| r.name.as_str()).collect::<Vec<_>>(), names);
    for row in &rows {
        assert!(row.final_loss.is_finite());
        assert!(row.psnr_vfisr > 0.0);
    }
    let table = fs::read_to_string(a.join("table.txt")).unwrap();
    for name in names {
        assert!(table.contains(name));
    }
    assert_eq!(
        fs::read(a.join("table.json")).unwrap(),
        fs::read(b.join("table.json")).unwrap()
    );
    assert_eq!(
        fs::read(a.join("metrics.jsonl")).unwrap(),
        fs::read(b.join("metrics.jsonl")).unwrap()
    );
}

#[test]
fn baseline_reports_both_cascade_orders() {
    let fx = fixture();
    let out = fx.tmp("baseline");
    cmd_baseline(&BaselineArgs {
        data: fx.data.clone(),
        out: out.clone(),
        force: false,
        config: None,
        upscaler: UpscalerArg::Bicubic,
    })
    .unwrap();
    let report: Value = read_json(&out.join("report.json")).unwrap();
    for order in ["sr_then_vfi", "vfi_then_sr"] {
        let r = &report[order];
        assert_eq!(r["vfisr_frames"].as_u64().unwrap(), 24);
        assert_eq!(r["sr_frames"].as_u64().unwrap(), 12);
        assert!(r["psnr_sr"].as_f64().unwrap() > 10.0);
    }
    // Super-resolved frames never pass through interpolation, so both
    // orders score them identically.
    assert_eq!(report["sr_then_vfi"]["psnr_sr"], report["vfi_then_sr"]["psnr_sr"]);
    let resolved: Value = read_json(&out.join("resolved.json")).unwrap();
    assert_eq!(resolved["upscaler"], "bicubic");
    assert_eq!(resolved["provider"]["kind"], "block_matching");
}

fn run_binary(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_fisr")).args(args).output().unwrap()
}

#[test]
fn missing_config_file_exits_2() {
    let out = TempDir::new().unwrap();
    let result = run_binary(&[
        "gen",
        "--config",
        "/nonexistent/gen.toml",
        "--out",
        out.path().join("d").to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("not found"), "stderr: {stderr}");
}

#[test]
fn unknown_flag_exits_2() {
    let result = run_binary(&["gen", "--frobnicate"]);
    assert_eq!(result.status.code(), Some(2));
}

#[test]
fn unknown_device_exits_2() {
    let fx = fixture();
    let out = TempDir::new().unwrap();
    let result = run_binary(&[
        "train",
        "--config",
        fx.train_config.to_str().unwrap(),
        "--data",
        fx.data.to_str().unwrap(),
        "--out",
        out.path().join("d").to_str().unwrap(),
        "--device",
        "cuda",
    ]);
    assert_eq!(result.status.code(), Some(2));
}

#[test]
fn corrupt_dataset_exits_1() {
    let fx = fixture();
    let root = TempDir::new().unwrap();
    let data = root.path().join("data");
    fs::create_dir_all(&data).unwrap();
    fs::write(data.join("manifest.json"), "{ not json").unwrap();
    let result = run_binary(&[
        "train",
        "--config",
        fx.train_config.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        root.path().join("run").to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(1));
}

#[test]
fn successful_run_exits_0_and_prints_a_summary() {
    let fx = fixture();
    let out = TempDir::new().unwrap();
    let result = run_binary(&[
        "eval",
        "--checkpoint",
        fx.checkpoint().to_str().unwrap(),
        "--data",
        fx.data.to_str().unwrap(),
        "--out",
        out.path().join("e").to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&result.stderr));
    let stdout = String::from_utf8_lossy(&result.stdout);
    assert!(stdout.contains("VFI-SR:"), "stdout: {stdout}");
    assert!(stdout.contains("SR:"), "stdout: {stdout}");
}
