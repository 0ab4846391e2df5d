//! The six subcommands as plain functions over parsed argument structs.

use crate::config::{
    apply_overrides, check_device, load_gen_config, load_train_config, TrainOverrides,
};
use crate::io::{
    echo_config, prepare_out_dir, read_frame_dir, read_json, read_raw_yuv, write_frame_png,
    write_input_hashes, write_json, JsonlWriter,
};
use crate::{usage, CliError, CliResult};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fisr_core::baseline::{run_baselines, Upscaler};
use fisr_core::flowwarp::{assemble_input_stack, FlowProvider};
use fisr_core::frames::{psnr, ssim, Frame, MetricsReport};
use fisr_core::network::checkpoint::Checkpoint;
use fisr_core::network::{build_pyramid, output_to_frames, NetworkConfig};
use fisr_core::synthdata::{generate_scene, materialize, DatasetManifest};
use fisr_core::trainer::{
    predict_sample, prepare_samples, run_ablation, table1_grid, table2_grid, AblationRow,
    AblationVariant, ProviderSpec, StepRecord, Trainer,
};
use fisr_core::windowing::{
    stitch, StitchPolicy, TimeIndex, TrainingSample, Window, WindowPrediction,
};
use ndarray::Array3;
use serde::Serialize;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Parser, Debug)]
#[command(
    name = "fisr",
    version,
    about = "Joint video frame interpolation and 2x super-resolution at desk scale"
)]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Generate a synthetic dataset (scene frames + manifest).
    Gen(GenArgs),
    /// Train a network on a generated dataset.
    Train(TrainArgs),
    /// Score a checkpoint, split into interpolated and super-resolved frames.
    Eval(EvalArgs),
    /// Double the frame rate and resolution of a frame sequence.
    Infer(InferArgs),
    /// Run an ablation grid and tabulate the results.
    Ablate(AblateArgs),
    /// Score the cascaded reference pipelines on a dataset.
    Baseline(BaselineArgs),
}

pub fn dispatch(cli: &Cli) -> CliResult<()> {
    match &cli.cmd {
        Cmd::Gen(a) => cmd_gen(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Infer(a) => cmd_infer(a),
        Cmd::Ablate(a) => cmd_ablate(a),
        Cmd::Baseline(a) => cmd_baseline(a),
    }
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// Dataset description (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    pub force: bool,
    /// Override the crop-placement seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn cmd_gen(args: &GenArgs) -> CliResult<()> {
    let (mut cfg, bytes) = load_gen_config(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let specs = cfg.scene_specs();
    if specs.is_empty() {
        return Err(usage("config defines no scenes"));
    }
    let dataset = fisr_core::synthdata::build_dataset(&specs, cfg.patch, cfg.frame_stride, cfg.seed)?;

    prepare_out_dir(&args.out, args.force)?;
    echo_config(&args.out, &bytes)?;
    write_json(&args.out.join("resolved.json"), &cfg)?;
    write_input_hashes(&args.out, &[("config.toml", &args.config)])?;
    write_json(&args.out.join("manifest.json"), &dataset.manifest)?;
    for (i, spec) in specs.iter().enumerate() {
        let scene = generate_scene(spec)?;
        let dir = args.out.join(format!("scenes/scene-{i:03}"));
        fs::create_dir_all(&dir)?;
        for (f, frame) in scene.frames.iter().enumerate() {
            write_frame_png(frame, &dir.join(format!("frame-{f:04}.png")))?;
        }
    }
    println!(
        "wrote {} scenes and {} training samples to {}",
        specs.len(),
        dataset.manifest.samples.len(),
        args.out.display()
    );
    Ok(())
}

struct LoadedDataset {
    manifest: DatasetManifest,
    samples: Vec<TrainingSample>,
    manifest_path: PathBuf,
}

fn load_dataset(dir: &Path) -> CliResult<LoadedDataset> {
    let manifest_path = dir.join("manifest.json");
    let manifest: DatasetManifest = read_json(&manifest_path)?;
    let samples = materialize(&manifest)?;
    if samples.is_empty() {
        return Err(usage(format!("dataset {} holds no samples", dir.display())));
    }
    Ok(LoadedDataset { manifest, samples, manifest_path })
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Dataset directory from `gen`.
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory for logs and the checkpoint.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
    /// Override the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Loss-term ladder column (a-f) overriding the config mask.
    #[arg(long)]
    pub mask: Option<char>,
    /// Feed the network frames only (no flows, no warps).
    #[arg(long)]
    pub no_flow_stack: bool,
    /// Continue from a checkpoint instead of a fresh initialization.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Compute device; only "cpu" exists.
    #[arg(long, default_value = "cpu")]
    pub device: String,
}

pub fn cmd_train(args: &TrainArgs) -> CliResult<()> {
    check_device(&args.device)?;
    let (mut cfg, bytes) = load_train_config(&args.config)?;
    let overrides = TrainOverrides {
        seed: args.seed,
        mask: args.mask,
        no_flow_stack: args.no_flow_stack,
    };
    apply_overrides(&mut cfg, &overrides)?;
    let data = load_dataset(&args.data)?;
    let prepared =
        prepare_samples(&data.samples, Some(&data.manifest), cfg.provider, &cfg.network)?;

    prepare_out_dir(&args.out, args.force)?;
    echo_config(&args.out, &bytes)?;
    write_json(&args.out.join("resolved.json"), &cfg)?;
    write_input_hashes(
        &args.out,
        &[("config.toml", args.config.as_path()), ("manifest.json", data.manifest_path.as_path())],
    )?;

    let mut trainer = match &args.resume {
        Some(path) => {
            if !path.is_file() {
                return Err(usage(format!("checkpoint not found: {}", path.display())));
            }
            Trainer::from_checkpoint(cfg.clone(), Checkpoint::load(path)?)?
        }
        None => Trainer::new(cfg.clone())?,
    };

    let mut log = JsonlWriter::create(&args.out.join("metrics.jsonl"))?;
    let mut log_err: Option<CliError> = None;
    let mut last: Option<StepRecord> = None;
    trainer.run(&prepared, |rec| {
        if log_err.is_none() {
            if let Err(e) = log.write(rec) {
                log_err = Some(e);
            }
        }
        last = Some(rec.clone());
    })?;
    if let Some(e) = log_err {
        return Err(e);
    }
    log.finish()?;

    let ckpt_path = args.out.join("checkpoint.fisr");
    trainer.checkpoint().save(&ckpt_path)?;
    match &last {
        Some(rec) => println!(
            "trained {} epochs ({} steps) on {} samples, final batch loss {:.6}",
            rec.epoch, rec.step, data.samples.len(), rec.total
        ),
        None => println!("nothing to do: checkpoint already covers the configured epochs"),
    }
    println!("checkpoint: {}", ckpt_path.display());
    Ok(())
}

/// One scored output frame.
#[derive(Debug, Clone, Serialize)]
pub struct FrameRow {
    pub sample: usize,
    /// Stride-1 window index, 1 to 3.
    pub window: u8,
    /// Half-step timestamp inside the sample.
    pub time: i32,
    /// "vfi_sr" for interpolated timestamps, "sr" for input timestamps.
    pub kind: &'static str,
    pub psnr: f64,
    pub ssim: f64,
}

/// Scores arbitrary per-sample predictions against the ground truth; the
/// predictor indirection lets tests inject known frames.
pub fn evaluate_with(
    samples: &[TrainingSample],
    mut predictor: impl FnMut(usize, &TrainingSample) -> CliResult<Vec<WindowPrediction>>,
) -> CliResult<(MetricsReport, Vec<FrameRow>)> {
    let mut rows = Vec::new();
    for (i, sample) in samples.iter().enumerate() {
        for (k, pred) in predictor(i, sample)?.iter().enumerate() {
            for (t, frame) in pred.output_times().iter().zip(pred.frames.iter()) {
                let truth = sample.hr_at(*t)?;
                rows.push(FrameRow {
                    sample: i,
                    window: k as u8 + 1,
                    time: t.0,
                    kind: if t.is_interpolated() { "vfi_sr" } else { "sr" },
                    psnr: psnr(frame, truth)?,
                    ssim: ssim(frame, truth)?,
                });
            }
        }
    }
    let mean = |kind: &str, pick: fn(&FrameRow) -> f64| {
        let vals: Vec<f64> = rows.iter().filter(|r| r.kind == kind).map(pick).collect();
        vals.iter().sum::<f64>() / vals.len().max(1) as f64
    };
    let report = MetricsReport {
        psnr_vfisr: mean("vfi_sr", |r| r.psnr),
        psnr_sr: mean("sr", |r| r.psnr),
        ssim_vfisr: mean("vfi_sr", |r| r.ssim),
        ssim_sr: mean("sr", |r| r.ssim),
        vfisr_frames: rows.iter().filter(|r| r.kind == "vfi_sr").count(),
        sr_frames: rows.iter().filter(|r| r.kind == "sr").count(),
    };
    Ok((report, rows))
}

fn provider_from_config(config: &Option<PathBuf>) -> CliResult<ProviderSpec> {
    match config {
        Some(path) => Ok(load_train_config(path)?.0.provider),
        None => Ok(ProviderSpec::default()),
    }
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset directory from `gen`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
    /// Train config supplying the flow provider; defaults to block matching.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "cpu")]
    pub device: String,
}

fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    if !path.is_file() {
        return Err(usage(format!("checkpoint not found: {}", path.display())));
    }
    Ok(Checkpoint::load(path)?)
}

pub fn cmd_eval(args: &EvalArgs) -> CliResult<()> {
    check_device(&args.device)?;
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let provider = provider_from_config(&args.config)?;
    let data = load_dataset(&args.data)?;
    let prepared = prepare_samples(&data.samples, Some(&data.manifest), provider, &ckpt.config)?;
    let network = ckpt.network;
    let (report, rows) =
        evaluate_with(&data.samples, |i, _| Ok(predict_sample(&network, &prepared[i])?))?;

    prepare_out_dir(&args.out, args.force)?;
    #[derive(Serialize)]
    struct Resolved<'a> {
        checkpoint: String,
        network: &'a NetworkConfig,
        provider: ProviderSpec,
    }
    write_json(
        &args.out.join("resolved.json"),
        &Resolved {
            checkpoint: args.checkpoint.display().to_string(),
            network: &ckpt.config,
            provider,
        },
    )?;
    let mut inputs: Vec<(&str, &Path)> = vec![
        ("checkpoint.fisr", args.checkpoint.as_path()),
        ("manifest.json", data.manifest_path.as_path()),
    ];
    if let Some(cfg) = &args.config {
        echo_config(&args.out, &fs::read(cfg)?)?;
        inputs.push(("config.toml", cfg.as_path()));
    }
    write_input_hashes(&args.out, &inputs)?;
    write_json(&args.out.join("report.json"), &report)?;
    let mut table = JsonlWriter::create(&args.out.join("frames.jsonl"))?;
    for row in &rows {
        table.write(row)?;
    }
    table.finish()?;

    println!(
        "VFI-SR: {:.3} dB / SSIM {:.4} over {} frames",
        report.psnr_vfisr, report.ssim_vfisr, report.vfisr_frames
    );
    println!(
        "SR:     {:.3} dB / SSIM {:.4} over {} frames",
        report.psnr_sr, report.ssim_sr, report.sr_frames
    );
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StitchArg {
    Later,
    Earlier,
    Average,
}

impl From<StitchArg> for StitchPolicy {
    fn from(a: StitchArg) -> StitchPolicy {
        match a {
            StitchArg::Later => StitchPolicy::Later,
            StitchArg::Earlier => StitchPolicy::Earlier,
            StitchArg::Average => StitchPolicy::Average,
        }
    }
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Input frames: a directory of PNGs, or a raw planar YUV file together
    /// with --raw-dims.
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
    /// Which window wins where outputs overlap.
    #[arg(long, value_enum, default_value_t = StitchArg::Later)]
    pub stitch_policy: StitchArg,
    /// WxH of raw YUV frames, e.g. 192x108.
    #[arg(long)]
    pub raw_dims: Option<String>,
    /// Train config supplying the flow provider; defaults to block matching.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "cpu")]
    pub device: String,
}

fn parse_dims(text: &str) -> CliResult<(usize, usize)> {
    let parts: Vec<&str> = text.split('x').collect();
    let parsed = if parts.len() == 2 {
        parts[0].parse::<usize>().ok().zip(parts[1].parse::<usize>().ok())
    } else {
        None
    };
    parsed.ok_or_else(|| usage(format!("bad --raw-dims '{text}', expected WxH like 192x108")))
}

/// Replicate-pads bottom/right so both dimensions divide `div`.
fn pad_to_multiple(frame: &Frame, div: usize) -> CliResult<Frame> {
    let (h, w, c) = frame.data.dim();
    let nh = h.div_ceil(div) * div;
    let nw = w.div_ceil(div) * div;
    if (nh, nw) == (h, w) {
        return Ok(frame.clone());
    }
    let mut data = Array3::zeros((nh, nw, c));
    for y in 0..nh {
        for x in 0..nw {
            for ch in 0..c {
                data[(y, x, ch)] = frame.data[(y.min(h - 1), x.min(w - 1), ch)];
            }
        }
    }
    Ok(Frame::new(data, frame.colorspace)?)
}

fn crop_frame(frame: &Frame, h: usize, w: usize) -> CliResult<Frame> {
    if frame.data.dim().0 == h && frame.data.dim().1 == w {
        return Ok(frame.clone());
    }
    let data = frame.data.slice(ndarray::s![..h, ..w, ..]).to_owned();
    Ok(Frame::new(data, frame.colorspace)?)
}

fn flow_provider(spec: ProviderSpec) -> CliResult<FlowProvider> {
    match spec {
        ProviderSpec::Zero => Ok(FlowProvider::Zero),
        ProviderSpec::BlockMatching { block, search } => {
            Ok(FlowProvider::BlockMatching { block, search })
        }
        ProviderSpec::Oracle => Err(usage(
            "the oracle provider needs dataset motion metadata; use zero or block_matching",
        )),
    }
}

pub fn cmd_infer(args: &InferArgs) -> CliResult<()> {
    check_device(&args.device)?;
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let spec = provider_from_config(&args.config)?;
    let provider = flow_provider(spec)?;
    let frames = match &args.raw_dims {
        Some(dims) => {
            let (w, h) = parse_dims(dims)?;
            read_raw_yuv(&args.input, w, h)?
        }
        None => read_frame_dir(&args.input)?,
    };
    let n = frames.len();
    if n < 3 {
        return Err(usage(format!("need at least 3 input frames, found {n}")));
    }
    let (h0, w0, _) = frames[0].data.dim();
    if frames.iter().any(|f| f.data.dim() != frames[0].data.dim()) {
        return Err(usage("input frames disagree in size"));
    }

    let cfg = ckpt.config;
    let div = (if cfg.levels == 3 { 4 } else { 1 }) << cfg.unet_depth;
    let padded: Vec<Frame> =
        frames.iter().map(|f| pad_to_multiple(f, div)).collect::<CliResult<_>>()?;
    let network = ckpt.network;

    let window = Window::Stride1 { w: 2 };
    let mut predictions = Vec::with_capacity(n - 2);
    for c in 1..n - 1 {
        let inputs = [&padded[c - 1], &padded[c], &padded[c + 1]];
        let stack = assemble_input_stack(window, inputs, &provider, cfg.stack)?;
        let pyramid = build_pyramid(&stack, cfg.stack, cfg.levels)?;
        let pass = network.forward(&pyramid)?;
        let mut out = output_to_frames(pass.outputs.last().unwrap())?;
        for f in &mut out {
            *f = crop_frame(f, 2 * h0, 2 * w0)?;
            f.clamp_yuv();
        }
        predictions.push(WindowPrediction {
            window,
            base: TimeIndex(2 * c as i32),
            frames: out,
        });
    }
    let stitched = stitch(&predictions, args.stitch_policy.into())?;

    prepare_out_dir(&args.out, args.force)?;
    let frame_dir = args.out.join("frames");
    fs::create_dir_all(&frame_dir)?;
    let mut files = Vec::new();
    for (t, frame) in &stitched.frames {
        let name = format!("frame-{:04}.png", t.0);
        write_frame_png(frame, &frame_dir.join(&name))?;
        files.push(name);
    }

    #[derive(Serialize)]
    struct ProvenanceFrame<'a> {
        file: &'a str,
        time: i32,
        /// Windows, indexed 0-based in input order, that predicted this
        /// timestamp.
        contributors: &'a [usize],
        /// Contributor whose pixels were kept; null means averaged.
        chosen: Option<usize>,
    }
    #[derive(Serialize)]
    struct Provenance<'a> {
        stitch_policy: StitchPolicy,
        input_frames: usize,
        output_frames: usize,
        input_size: [usize; 2],
        padded_size: [usize; 2],
        frames: Vec<ProvenanceFrame<'a>>,
    }
    let prov = Provenance {
        stitch_policy: args.stitch_policy.into(),
        input_frames: n,
        output_frames: stitched.frames.len(),
        input_size: [h0, w0],
        padded_size: [padded[0].data.dim().0, padded[0].data.dim().1],
        frames: stitched
            .sources
            .iter()
            .zip(files.iter())
            .map(|(s, f)| ProvenanceFrame {
                file: f,
                time: s.time.0,
                contributors: &s.contributors,
                chosen: s.chosen,
            })
            .collect(),
    };
    write_json(&args.out.join("provenance.json"), &prov)?;

    #[derive(Serialize)]
    struct Resolved<'a> {
        checkpoint: String,
        network: &'a NetworkConfig,
        provider: ProviderSpec,
        stitch_policy: StitchPolicy,
    }
    write_json(
        &args.out.join("resolved.json"),
        &Resolved {
            checkpoint: args.checkpoint.display().to_string(),
            network: &cfg,
            provider: spec,
            stitch_policy: args.stitch_policy.into(),
        },
    )?;
    let mut inputs: Vec<(String, PathBuf)> =
        vec![("checkpoint.fisr".into(), args.checkpoint.clone())];
    if args.raw_dims.is_some() {
        inputs.push((args.input.display().to_string(), args.input.clone()));
    } else {
        let mut paths: Vec<PathBuf> = fs::read_dir(&args.input)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "png"))
            .collect();
        paths.sort();
        for p in paths {
            inputs.push((p.file_name().unwrap().to_string_lossy().into_owned(), p));
        }
    }
    let refs: Vec<(&str, &Path)> =
        inputs.iter().map(|(l, p)| (l.as_str(), p.as_path())).collect();
    write_input_hashes(&args.out, &refs)?;

    println!(
        "{} input frames -> {} output frames at {}x{} in {}",
        n,
        stitched.frames.len(),
        2 * w0,
        2 * h0,
        args.out.display()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    /// Base training configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Training dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Held-out dataset for the reported metrics; defaults to --data.
    #[arg(long)]
    pub eval_data: Option<PathBuf>,
    /// "table1", "table2", or a JSON file with explicit variants.
    #[arg(long)]
    pub grid: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
    /// Override the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "cpu")]
    pub device: String,
}

fn format_table(rows: &[AblationRow]) -> String {
    let name_w = rows.iter().map(|r| r.name.len()).max().unwrap_or(4).max(7);
    let mut text = format!(
        "{:<name_w$}  {:>11}  {:>8}  {:>11}  {:>8}  {:>10}\n",
        "variant", "psnr-vfisr", "psnr-sr", "ssim-vfisr", "ssim-sr", "final-loss"
    );
    for r in rows {
        text.push_str(&format!(
            "{:<name_w$}  {:>11.3}  {:>8.3}  {:>11.4}  {:>8.4}  {:>10.5}\n",
            r.name, r.psnr_vfisr, r.psnr_sr, r.ssim_vfisr, r.ssim_sr, r.final_loss
        ));
    }
    text
}

pub fn cmd_ablate(args: &AblateArgs) -> CliResult<()> {
    check_device(&args.device)?;
    let (mut cfg, bytes) = load_train_config(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let train = load_dataset(&args.data)?;
    let eval;
    let (eval_samples, eval_manifest, eval_manifest_path) = match &args.eval_data {
        Some(dir) => {
            eval = load_dataset(dir)?;
            (&eval.samples, &eval.manifest, Some(eval.manifest_path.clone()))
        }
        None => (&train.samples, &train.manifest, None),
    };
    let mut grid_file = None;
    let variants: Vec<AblationVariant> = match args.grid.as_str() {
        "table1" => table1_grid(cfg.network.levels, cfg.network.stack),
        "table2" => table2_grid(),
        path => {
            let p = Path::new(path);
            grid_file = Some(p.to_path_buf());
            read_json(p)?
        }
    };

    prepare_out_dir(&args.out, args.force)?;
    echo_config(&args.out, &bytes)?;
    write_json(&args.out.join("resolved.json"), &cfg)?;
    write_json(&args.out.join("grid.json"), &variants)?;
    let mut inputs: Vec<(&str, &Path)> = vec![
        ("config.toml", args.config.as_path()),
        ("manifest.json", train.manifest_path.as_path()),
    ];
    if let Some(p) = &eval_manifest_path {
        inputs.push(("eval-manifest.json", p.as_path()));
    }
    if let Some(p) = &grid_file {
        inputs.push(("grid.json", p.as_path()));
    }
    write_input_hashes(&args.out, &inputs)?;

    #[derive(Serialize)]
    struct VariantStep<'a> {
        variant: &'a str,
        #[serde(flatten)]
        record: &'a StepRecord,
    }
    let mut log = JsonlWriter::create(&args.out.join("metrics.jsonl"))?;
    let mut log_err: Option<CliError> = None;
    let rows = run_ablation(
        &variants,
        &cfg,
        &train.samples,
        Some(&train.manifest),
        eval_samples,
        Some(eval_manifest),
        |name, rec| {
            if log_err.is_none() {
                if let Err(e) = log.write(&VariantStep { variant: name, record: rec }) {
                    log_err = Some(e);
                }
            }
        },
    )?;
    if let Some(e) = log_err {
        return Err(e);
    }
    log.finish()?;

    write_json(&args.out.join("table.json"), &rows)?;
    let text = format_table(&rows);
    fs::write(args.out.join("table.txt"), &text)?;
    print!("{text}");
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum UpscalerArg {
    Bicubic,
    Nearest,
}

impl From<UpscalerArg> for Upscaler {
    fn from(a: UpscalerArg) -> Upscaler {
        match a {
            UpscalerArg::Bicubic => Upscaler::Bicubic,
            UpscalerArg::Nearest => Upscaler::Nearest,
        }
    }
}

#[derive(Args, Debug)]
pub struct BaselineArgs {
    /// Dataset directory from `gen`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
    /// Train config supplying the flow provider; defaults to block matching.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = UpscalerArg::Bicubic)]
    pub upscaler: UpscalerArg,
}

pub fn cmd_baseline(args: &BaselineArgs) -> CliResult<()> {
    let spec = provider_from_config(&args.config)?;
    let data = load_dataset(&args.data)?;
    let report =
        run_baselines(&data.samples, Some(&data.manifest), spec, args.upscaler.into())?;

    prepare_out_dir(&args.out, args.force)?;
    #[derive(Serialize)]
    struct Resolved {
        provider: ProviderSpec,
        upscaler: Upscaler,
    }
    write_json(
        &args.out.join("resolved.json"),
        &Resolved { provider: spec, upscaler: args.upscaler.into() },
    )?;
    let mut inputs: Vec<(&str, &Path)> =
        vec![("manifest.json", data.manifest_path.as_path())];
    if let Some(cfg) = &args.config {
        echo_config(&args.out, &fs::read(cfg)?)?;
        inputs.push(("config.toml", cfg.as_path()));
    }
    write_input_hashes(&args.out, &inputs)?;
    write_json(&args.out.join("report.json"), &report)?;

    for (name, r) in
        [("sr-then-vfi", &report.sr_then_vfi), ("vfi-then-sr", &report.vfi_then_sr)]
    {
        println!(
            "{name:<12} VFI-SR {:.3} dB / SSIM {:.4}   SR {:.3} dB / SSIM {:.4}",
            r.psnr_vfisr, r.ssim_vfisr, r.psnr_sr, r.ssim_sr
        );
    }
    Ok(())
}
