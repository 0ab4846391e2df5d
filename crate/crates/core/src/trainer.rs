//! The optimization loop: sample preparation, Adam, the epoch/batch
//! schedule, checkpoint-exact resume, a finite-difference gradient auditor,
//! and the ablation grids.
//!
//! Determinism contract: given one `TrainConfig` seed, initialization, the
//! per-epoch shuffle, every Adam update and therefore every logged loss are
//! reproducible bitwise. The per-epoch permutation is seeded by (seed,
//! epoch) alone, so a run resumed from a checkpoint continues on exactly the
//! trajectory of an uninterrupted run.

use crate::flowwarp::{assemble_input_stack, FlowError, FlowProvider, StackMode};
use crate::frames::{bicubic_resize_plane, Frame, FrameError, MetricsReport};
use crate::loss::{
    multiscale_loss, multiscale_loss_grad, rmse_distance, total_loss, total_loss_grad,
    LossBreakdown, LossError, LossWeights, PredictionGrads, PredictionSet, TermMask,
};
use crate::network::{
    build_pyramid, checkpoint::Checkpoint, frame_to_chw, output_to_frames, ForwardPass, Network,
    NetworkConfig, NetworkError,
};
use crate::synthdata::{DatasetManifest, SceneOracle, SynthError};
use crate::windowing::{
    evaluate_predictions, training_windows, TimeIndex, TrainingSample, WindowError,
    WindowPrediction,
};
use ndarray::{s, Array3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("bad training config: {0}")]
    BadConfig(String),
    #[error("oracle flow provider needs a manifest whose records cover every sample")]
    OracleNeedsManifest,
    #[error(
        "non-finite loss at epoch {epoch}, step {step}, batch {batch} (samples {samples:?})"
    )]
    NonFiniteLoss { epoch: u64, step: u64, batch: usize, samples: Vec<usize> },
    #[error("checkpoint was trained with a different network config")]
    CheckpointMismatch,
    #[error(transparent)]
    Window(#[from] WindowError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Frame(#[from] FrameError),
}

/// Serializable choice of flow provider; `Oracle` is resolved against the
/// dataset manifest's per-sample motion metadata.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ProviderSpec {
    Zero,
    BlockMatching { block: usize, search: usize },
    Oracle,
}

impl Default for ProviderSpec {
    fn default() -> Self {
        ProviderSpec::BlockMatching { block: 8, search: 6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    /// Epochs (1-based) at which the rate is multiplied by `factor`.
    pub drops: Vec<usize>,
    pub factor: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule { drops: Vec::new(), factor: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    #[serde(default)]
    pub lr_drops: LrSchedule,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default)]
    pub mask: TermMask,
    pub network: NetworkConfig,
    #[serde(default)]
    pub provider: ProviderSpec,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::BadConfig("epochs must be at least 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(TrainError::BadConfig("lr must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::BadConfig("batch_size must be at least 1".into()));
        }
        if !(self.lr_drops.factor > 0.0) {
            return Err(TrainError::BadConfig("lr drop factor must be positive".into()));
        }
        let d = &self.lr_drops.drops;
        if !d.windows(2).all(|p| p[0] < p[1]) {
            return Err(TrainError::BadConfig("lr drops must be strictly increasing".into()));
        }
        if d.iter().any(|&e| e == 0 || e > self.epochs) {
            return Err(TrainError::BadConfig("lr drops must lie within [1, epochs]".into()));
        }
        self.weights.validate()?;
        self.network.validate()?;
        Ok(())
    }
}

/// Learning rate as a pure function of the 1-based epoch index: the base
/// rate times `factor` once per drop epoch already reached.
pub fn lr_at(config: &TrainConfig, epoch: usize) -> f64 {
    let passed = config.lr_drops.drops.iter().filter(|&&d| epoch >= d).count();
    config.lr * config.lr_drops.factor.powi(passed as i32)
}

/// One sample's network-ready tensors: per window the level pyramid of its
/// assembled input stack, plus ground truth as channel-major tensors at
/// every level's output resolution.
pub struct PreparedSample {
    pub pyramids: [Vec<Array3<f64>>; 4],
    /// `gt[l][i]` is the truth at half-step `i - 3`, level `l` resolution.
    pub gt: Vec<[Array3<f64>; 7]>,
}

fn chw_scaled(frame: &Frame, scale: f64) -> Result<Array3<f64>, FrameError> {
    if scale == 1.0 {
        return Ok(frame_to_chw(frame));
    }
    let (_, _, c) = frame.data.dim();
    let planes: Vec<_> = (0..c)
        .map(|ch| bicubic_resize_plane(frame.data.index_axis(ndarray::Axis(2), ch), scale))
        .collect::<Result<_, _>>()?;
    let (h, w) = planes[0].dim();
    let mut out = Array3::zeros((c, h, w));
    for (ch, p) in planes.iter().enumerate() {
        out.index_axis_mut(ndarray::Axis(0), ch).assign(p);
    }
    Ok(out)
}

/// Resolves the provider for sample `index`. Oracle needs the manifest's
/// motion metadata and answers at `spatial_scale` times the scene
/// resolution: 0.5 for the half-resolution inputs, 1.0 for full-size frames.
pub fn resolve_provider(
    spec: ProviderSpec,
    manifest: Option<&DatasetManifest>,
    index: usize,
    spatial_scale: f64,
) -> Result<FlowProvider, TrainError> {
    match spec {
        ProviderSpec::Zero => Ok(FlowProvider::Zero),
        ProviderSpec::BlockMatching { block, search } => {
            Ok(FlowProvider::BlockMatching { block, search })
        }
        ProviderSpec::Oracle => {
            let m = manifest.ok_or(TrainError::OracleNeedsManifest)?;
            let record = m.samples.get(index).ok_or(TrainError::OracleNeedsManifest)?;
            let oracle =
                SceneOracle::from_spec(&m.scenes[record.scene], record.start_frame, spatial_scale)?;
            Ok(FlowProvider::Oracle(Arc::new(oracle)))
        }
    }
}

pub fn prepare_sample(
    sample: &TrainingSample,
    provider: &FlowProvider,
    net: &NetworkConfig,
) -> Result<PreparedSample, TrainError> {
    let mut pyramids = Vec::with_capacity(4);
    for window in training_windows() {
        let stack = assemble_input_stack(window, sample.window_inputs(window), provider, net.stack)?;
        pyramids.push(build_pyramid(&stack, net.stack, net.levels)?);
    }
    let scales: &[f64] = if net.levels == 3 { &[0.25, 0.5, 1.0] } else { &[1.0] };
    let mut gt = Vec::with_capacity(scales.len());
    for &scale in scales {
        let level: Vec<Array3<f64>> = sample
            .hr_truth
            .iter()
            .map(|f| chw_scaled(f, scale))
            .collect::<Result<_, _>>()?;
        gt.push(level.try_into().expect("seven truths"));
    }
    Ok(PreparedSample { pyramids: pyramids.try_into().ok().expect("four windows"), gt })
}

pub fn prepare_samples(
    samples: &[TrainingSample],
    manifest: Option<&DatasetManifest>,
    spec: ProviderSpec,
    net: &NetworkConfig,
) -> Result<Vec<PreparedSample>, TrainError> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| prepare_sample(s, &resolve_provider(spec, manifest, i, 0.5)?, net))
        .collect()
}

fn slot_tensor(out: &Array3<f64>, slot: usize) -> Array3<f64> {
    out.slice(s![3 * slot..3 * slot + 3, .., ..]).to_owned()
}

fn forward_all(network: &Network, prepared: &PreparedSample) -> Result<Vec<ForwardPass>, TrainError> {
    prepared.pyramids.iter().map(|p| Ok(network.forward(p)?)).collect()
}

/// Builds one `PredictionSet` per level from the four window passes, slicing
/// each window's 9-channel output into its three frames.
fn prediction_sets(
    passes: &[ForwardPass],
    gt: &[[Array3<f64>; 7]],
) -> Result<Vec<PredictionSet>, LossError> {
    (0..gt.len())
        .map(|l| {
            let s1 = [0, 1, 2]
                .map(|w| [0, 1, 2].map(|slot| slot_tensor(&passes[w].outputs[l], slot)));
            let s2 = [0, 1, 2].map(|slot| slot_tensor(&passes[3].outputs[l], slot));
            PredictionSet::new(s1, s2, gt[l].clone())
        })
        .collect()
}

fn loss_value(
    sets: &[PredictionSet],
    weights: &LossWeights,
    mask: TermMask,
) -> Result<LossBreakdown, LossError> {
    if sets.len() == 3 {
        multiscale_loss(sets, weights, mask)
    } else {
        Ok(total_loss(&sets[0], weights, mask))
    }
}

fn loss_and_grads(
    sets: &[PredictionSet],
    weights: &LossWeights,
    mask: TermMask,
) -> Result<(LossBreakdown, Vec<PredictionGrads>), LossError> {
    if sets.len() == 3 {
        multiscale_loss_grad(sets, weights, mask)
    } else {
        let (b, g) = total_loss_grad(&sets[0], weights, mask);
        Ok((b, vec![g]))
    }
}

/// Reassembles the per-level 9-channel output gradient of window `k` from
/// the loss's per-frame gradients.
fn window_grads(k: usize, pgrads: &[PredictionGrads]) -> Vec<Array3<f64>> {
    pgrads
        .iter()
        .map(|g| {
            let slots = if k < 3 { &g.stride1[k] } else { &g.stride2 };
            let (c, h, w) = slots[0].dim();
            let mut out = Array3::zeros((3 * c, h, w));
            for (slot, t) in slots.iter().enumerate() {
                out.slice_mut(s![3 * slot..3 * slot + 3, .., ..]).assign(t);
            }
            out
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Network,
    pub v: Network,
    pub t: u64,
}

impl Adam {
    pub fn new(network: &Network) -> Adam {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: network.zeros_like(),
            v: network.zeros_like(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut Network, grads: &Network, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let gts = grads.tensors();
        let mut pts = params.tensors_mut();
        let mut mts = self.m.tensors_mut();
        let mut vts = self.v.tensors_mut();
        for i in 0..pts.len() {
            let g = gts[i].1.as_slice();
            let p = pts[i].1.as_slice_mut();
            let m = mts[i].1.as_slice_mut();
            let v = vts[i].1.as_slice_mut();
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                p[j] -= lr * (m[j] / bc1) / ((v[j] / bc2).sqrt() + self.eps);
            }
        }
    }
}

/// One line of the metrics log: a single optimizer update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: u64,
    pub lr: f64,
    /// Batch-mean total loss.
    pub total: f64,
    /// Batch-mean per-level contributions (level weight applied), coarsest
    /// first.
    pub levels: Vec<f64>,
    pub batch_samples: Vec<usize>,
}

pub struct Trainer {
    pub config: TrainConfig,
    pub network: Network,
    pub adam: Adam,
    pub step: u64,
    /// Completed epochs.
    pub epoch: u64,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Trainer, TrainError> {
        config.validate()?;
        let network = Network::init(config.network, config.seed)?;
        let adam = Adam::new(&network);
        Ok(Trainer { config, network, adam, step: 0, epoch: 0 })
    }

    pub fn from_checkpoint(config: TrainConfig, ckpt: Checkpoint) -> Result<Trainer, TrainError> {
        config.validate()?;
        if ckpt.config != config.network {
            return Err(TrainError::CheckpointMismatch);
        }
        let mut adam = Adam::new(&ckpt.network);
        if let Some(m) = ckpt.adam_m {
            adam.m = m;
        }
        if let Some(v) = ckpt.adam_v {
            adam.v = v;
        }
        adam.t = ckpt.step;
        Ok(Trainer {
            config,
            network: ckpt.network,
            adam,
            step: ckpt.step,
            epoch: ckpt.epoch,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.network,
            step: self.step,
            epoch: self.epoch,
            network: self.network.clone(),
            adam_m: Some(self.adam.m.clone()),
            adam_v: Some(self.adam.v.clone()),
        }
    }

    /// Trains from the current epoch up to `config.epochs`, calling
    /// `on_step` after every optimizer update.
    pub fn run(
        &mut self,
        data: &[PreparedSample],
        mut on_step: impl FnMut(&StepRecord),
    ) -> Result<(), TrainError> {
        if data.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        while self.epoch < self.config.epochs as u64 {
            let epoch = self.epoch + 1;
            let lr = lr_at(&self.config, epoch as usize);
            let mut order: Vec<usize> = (0..data.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(
                self.config.seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15),
            );
            order.shuffle(&mut rng);
            for (batch, chunk) in order.chunks(self.config.batch_size).enumerate() {
                let mut grads = self.network.zeros_like();
                let mut total = 0.0;
                let mut levels = vec![0.0; self.config.network.levels];
                for &si in chunk {
                    let breakdown = self.accumulate_sample(&data[si], &mut grads)?;
                    total += breakdown.total;
                    for (l, lv) in breakdown.levels.iter().enumerate() {
                        levels[l] += lv.level_weight * lv.weighted;
                    }
                }
                let n = chunk.len() as f64;
                total /= n;
                for l in &mut levels {
                    *l /= n;
                }
                if !total.is_finite() {
                    return Err(TrainError::NonFiniteLoss {
                        epoch,
                        step: self.step + 1,
                        batch,
                        samples: chunk.to_vec(),
                    });
                }
                for (_, mut t) in grads.tensors_mut() {
                    for v in t.as_slice_mut() {
                        *v /= n;
                    }
                }
                self.adam.step(&mut self.network, &grads, lr);
                self.step += 1;
                on_step(&StepRecord {
                    step: self.step,
                    epoch,
                    lr,
                    total,
                    levels: levels.clone(),
                    batch_samples: chunk.to_vec(),
                });
            }
            self.epoch = epoch;
        }
        Ok(())
    }

    /// Forwards all four windows of one sample, computes the loss, and adds
    /// the parameter gradients to `grads`.
    fn accumulate_sample(
        &self,
        prepared: &PreparedSample,
        grads: &mut Network,
    ) -> Result<LossBreakdown, TrainError> {
        let passes = forward_all(&self.network, prepared)?;
        let sets = prediction_sets(&passes, &prepared.gt)?;
        let (breakdown, pgrads) = loss_and_grads(&sets, &self.config.weights, self.config.mask)?;
        for (k, pass) in passes.iter().enumerate() {
            self.network.backward(pass, &window_grads(k, &pgrads), grads)?;
        }
        Ok(breakdown)
    }
}

/// Finest-level stride-1 predictions of one sample as clamped YUV frames.
pub fn predict_sample(
    network: &Network,
    prepared: &PreparedSample,
) -> Result<Vec<WindowPrediction>, TrainError> {
    let windows = training_windows();
    (0..3)
        .map(|k| {
            let pass = network.forward(&prepared.pyramids[k])?;
            let mut frames = output_to_frames(pass.outputs.last().unwrap())?;
            for f in &mut frames {
                f.clamp_yuv();
            }
            Ok(WindowPrediction { window: windows[k], base: TimeIndex(0), frames })
        })
        .collect()
}

/// Evaluates a network over a dataset, pooling the interpolation/SR metric
/// split across samples.
pub fn evaluate_network(
    network: &Network,
    prepared: &[PreparedSample],
    samples: &[TrainingSample],
) -> Result<MetricsReport, TrainError> {
    let mut reports = Vec::with_capacity(samples.len());
    for (p, s) in prepared.iter().zip(samples.iter()) {
        let predictions = predict_sample(network, p)?;
        reports.push(evaluate_predictions(&predictions, &s.truths())?);
    }
    Ok(MetricsReport::merge(&reports))
}

/// Mean RMSE between co-timed stride-1 predictions (windows 1/2 at -1,
/// windows 2/3 at +1) at the finest level: how much the network disagrees
/// with itself where windows overlap.
pub fn overlap_consistency(
    network: &Network,
    prepared: &[PreparedSample],
) -> Result<f64, TrainError> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for p in prepared {
        let outs: Vec<Array3<f64>> = (0..3)
            .map(|k| {
                network
                    .forward(&p.pyramids[k])
                    .map(|pass| pass.outputs.last().unwrap().clone())
            })
            .collect::<Result<_, _>>()?;
        sum += rmse_distance(&slot_tensor(&outs[0], 2), &slot_tensor(&outs[1], 0));
        sum += rmse_distance(&slot_tensor(&outs[1], 2), &slot_tensor(&outs[2], 0));
        n += 2;
    }
    if n == 0 {
        return Err(TrainError::EmptyDataset);
    }
    Ok(sum / n as f64)
}

/// Central-finite-difference audit of the full pipeline gradient (four
/// windows, multi-scale loss) on up to `probes` randomly chosen parameters.
/// Returns the worst relative error, `|fd - g| / max(|fd|, |g|, 1e-6)`.
///
/// `epsilon = 1e-4` is the f64 sweet spot here: below ~3e-5 the loss is
/// large enough that cancellation noise in `L(+eps) - L(-eps)` swamps small
/// gradients, and above ~3e-4 curvature truncation shows up.
pub fn grad_audit(
    network: &Network,
    prepared: &PreparedSample,
    weights: &LossWeights,
    mask: TermMask,
    epsilon: f64,
    probes: usize,
    seed: u64,
) -> Result<f64, TrainError> {
    let mut grads = network.zeros_like();
    {
        let passes = forward_all(network, prepared)?;
        let sets = prediction_sets(&passes, &prepared.gt)?;
        let (_, pgrads) = loss_and_grads(&sets, weights, mask)?;
        for (k, pass) in passes.iter().enumerate() {
            network.backward(pass, &window_grads(k, &pgrads), &mut grads)?;
        }
    }
    let loss_of = |net: &Network| -> Result<f64, TrainError> {
        let passes = forward_all(net, prepared)?;
        let sets = prediction_sets(&passes, &prepared.gt)?;
        Ok(loss_value(&sets, weights, mask)?.total)
    };

    let lens: Vec<usize> = network.tensors().iter().map(|(_, t)| t.as_slice().len()).collect();
    let total: usize = lens.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..probes.min(200) {
        let flat = rng.gen_range(0..total);
        let (mut ti, mut off) = (0, flat);
        while off >= lens[ti] {
            off -= lens[ti];
            ti += 1;
        }
        let analytic = grads.tensors()[ti].1.as_slice()[off];
        let mut plus = network.clone();
        plus.tensors_mut()[ti].1.as_slice_mut()[off] += epsilon;
        let mut minus = network.clone();
        minus.tensors_mut()[ti].1.as_slice_mut()[off] -= epsilon;
        let fd = (loss_of(&plus)? - loss_of(&minus)?) / (2.0 * epsilon);
        let rel = (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// One ablation run: a named override of the loss mask, scale-level count
/// and input stack on top of a shared base config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationVariant {
    pub name: String,
    pub mask: TermMask,
    pub levels: usize,
    pub stack: StackMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub psnr_vfisr: f64,
    pub psnr_sr: f64,
    pub ssim_vfisr: f64,
    pub ssim_sr: f64,
    pub final_loss: f64,
}

/// The loss-term ladder, columns (a) through (f): reconstruction only, then
/// cumulatively +matching, +matching-mean, +difference, +stride-2
/// reconstruction/difference, +stride-2 matching.
pub fn table1_grid(levels: usize, stack: StackMode) -> Vec<AblationVariant> {
    "abcdef"
        .chars()
        .map(|c| AblationVariant {
            name: format!("({c})"),
            mask: TermMask::ladder(c).expect("ladder column"),
            levels,
            stack,
        })
        .collect()
}

/// Component accumulation: plain single-scale reconstruction, then
/// +temporal loss, +multi-scale, +flow inputs, +warped-frame inputs.
pub fn table2_grid() -> Vec<AblationVariant> {
    let r_only = TermMask::ladder('a').expect("ladder column");
    vec![
        AblationVariant {
            name: "baseline".into(),
            mask: r_only,
            levels: 1,
            stack: StackMode::FramesOnly,
        },
        AblationVariant {
            name: "+temporal loss".into(),
            mask: TermMask::all(),
            levels: 1,
            stack: StackMode::FramesOnly,
        },
        AblationVariant {
            name: "+multi-scale".into(),
            mask: TermMask::all(),
            levels: 3,
            stack: StackMode::FramesOnly,
        },
        AblationVariant {
            name: "+optical flow".into(),
            mask: TermMask::all(),
            levels: 3,
            stack: StackMode::FramesFlows,
        },
        AblationVariant {
            name: "+warped frames".into(),
            mask: TermMask::all(),
            levels: 3,
            stack: StackMode::Full,
        },
    ]
}

/// Trains every variant with the identical seed and budget and evaluates it
/// on the held-out split. Samples are re-prepared per variant because the
/// stack mode and level count change the input tensors.
#[allow(clippy::too_many_arguments)]
pub fn run_ablation(
    variants: &[AblationVariant],
    base: &TrainConfig,
    train_samples: &[TrainingSample],
    train_manifest: Option<&DatasetManifest>,
    eval_samples: &[TrainingSample],
    eval_manifest: Option<&DatasetManifest>,
    mut on_step: impl FnMut(&str, &StepRecord),
) -> Result<Vec<AblationRow>, TrainError> {
    let mut rows = Vec::with_capacity(variants.len());
    for v in variants {
        let mut config = base.clone();
        config.mask = v.mask;
        config.network.levels = v.levels;
        config.network.stack = v.stack;
        let train_prep =
            prepare_samples(train_samples, train_manifest, config.provider, &config.network)?;
        let eval_prep =
            prepare_samples(eval_samples, eval_manifest, config.provider, &config.network)?;
        let mut trainer = Trainer::new(config)?;
        let mut final_loss = f64::NAN;
        trainer.run(&train_prep, |r| {
            final_loss = r.total;
            on_step(&v.name, r);
        })?;
        let report = evaluate_network(&trainer.network, &eval_prep, eval_samples)?;
        rows.push(AblationRow {
            name: v.name.clone(),
            psnr_vfisr: report.psnr_vfisr,
            psnr_sr: report.psnr_sr,
            ssim_vfisr: report.ssim_vfisr,
            ssim_sr: report.ssim_sr,
            final_loss,
        });
    }
    Ok(rows)
}
