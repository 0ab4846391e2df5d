//! Timestamps, training samples, sliding windows, and the bookkeeping that
//! ties predictions back to ground truth.
//!
//! Time is counted in *half-steps* of the input frame interval: input frames
//! sit at even half-steps, interpolated outputs at odd ones. A training
//! sample spans nine consecutive high-rate source frames, indexed here as
//! half-steps -4..=+4; its five low-resolution inputs sit at the even steps
//! and its seven high-resolution truths at -3..=+3.

use crate::frames::{bicubic_resize, psnr, ssim, Frame, FrameError, MetricsReport};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WindowError {
    #[error("a training sample needs exactly 9 source frames, got {0}")]
    BadFrameCount(usize),
    #[error("source frames disagree in shape or colorspace")]
    InconsistentFrames,
    #[error("crop {x},{y} {w}x{h} does not fit a {fh}x{fw} frame")]
    CropOutOfBounds { x: usize, y: usize, w: usize, h: usize, fh: usize, fw: usize },
    #[error("sample region {w}x{h} must have even dimensions of at least 8")]
    BadSampleDims { w: usize, h: usize },
    #[error("stride-1 window index must be 1, 2 or 3, got {0}")]
    BadWindowIndex(u8),
    #[error("no timestamp {0} in this sample")]
    NoSuchTime(TimeIndex),
    #[error("stitch needs at least one window")]
    EmptyStitch,
    #[error("windows are not sorted by center time")]
    UnsortedWindows,
    #[error("window coverage has gaps at half-steps {0:?}")]
    MissingCoverage(Vec<i32>),
    #[error("consecutive windows must overlap at exactly one timestamp, found {0} shared")]
    BadOverlap(usize),
    #[error("no ground truth at half-step {0}")]
    MissingTruth(TimeIndex),
    #[error("no {0} frames to average metrics over")]
    EmptyMetricsBucket(&'static str),
    #[error(transparent)]
    Frame(#[from] FrameError),
}

/// A point on the half-step time lattice. One unit is half the input frame
/// interval; even values are input times, odd values are interpolated times.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct TimeIndex(pub i32);

impl TimeIndex {
    pub fn is_interpolated(self) -> bool {
        self.0.rem_euclid(2) == 1
    }
}

impl std::fmt::Display for TimeIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:+}/2", self.0)
    }
}

impl std::ops::Add<i32> for TimeIndex {
    type Output = TimeIndex;
    fn add(self, rhs: i32) -> TimeIndex {
        TimeIndex(self.0 + rhs)
    }
}

/// One network invocation: three inputs in, three outputs out, all times
/// relative to the training sample's center.
///
/// The three stride-1 windows slide across the sample one input frame at a
/// time; the stride-2 window skips every other input so its outputs land on
/// input timestamps, which is what lets the loss compare interpolated frames
/// against super-resolved ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Window {
    Stride1 { w: u8 },
    Stride2,
}

impl Window {
    pub fn stride1(w: u8) -> Result<Window, WindowError> {
        if (1..=3).contains(&w) {
            Ok(Window::Stride1 { w })
        } else {
            Err(WindowError::BadWindowIndex(w))
        }
    }

    /// Input timestamps, earliest first. Spacing is 2 half-steps for stride 1
    /// and 4 for stride 2.
    pub fn input_times(self) -> [TimeIndex; 3] {
        match self {
            Window::Stride1 { w } => {
                let w = w as i32;
                [TimeIndex(2 * w - 6), TimeIndex(2 * w - 4), TimeIndex(2 * w - 2)]
            }
            Window::Stride2 => [TimeIndex(-4), TimeIndex(0), TimeIndex(4)],
        }
    }

    /// Output timestamps: the center input time and the two midpoints toward
    /// the end inputs. The middle output always coincides with the middle
    /// input (that frame is super-resolved, not interpolated).
    pub fn output_times(self) -> [TimeIndex; 3] {
        let [a, c, b] = self.input_times();
        [TimeIndex((a.0 + c.0) / 2), c, TimeIndex((c.0 + b.0) / 2)]
    }

    pub fn center(self) -> TimeIndex {
        self.input_times()[1]
    }

    /// Half-steps between adjacent inputs (2 or 4).
    pub fn input_spacing(self) -> i32 {
        let t = self.input_times();
        t[1].0 - t[0].0
    }
}

/// The four windows drawn from every training sample.
pub fn training_windows() -> [Window; 4] {
    [
        Window::Stride1 { w: 1 },
        Window::Stride1 { w: 2 },
        Window::Stride1 { w: 3 },
        Window::Stride2,
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

/// How to cut the sample region out of the source frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CropSpec {
    /// Use the full frame.
    None,
    /// A fixed rectangle, applied identically to all nine frames.
    Rect(CropRect),
    /// A seeded random square of the given side length.
    RandomSquare { size: usize },
}

/// Five low-resolution inputs (even half-steps -4..=+4) and seven
/// high-resolution truths (half-steps -3..=+3) cut from nine consecutive
/// high-rate frames.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub lr_inputs: [Frame; 5],
    pub hr_truth: [Frame; 7],
}

impl TrainingSample {
    pub fn lr_at(&self, t: TimeIndex) -> Result<&Frame, WindowError> {
        if t.0 % 2 == 0 && (-4..=4).contains(&t.0) {
            Ok(&self.lr_inputs[((t.0 + 4) / 2) as usize])
        } else {
            Err(WindowError::NoSuchTime(t))
        }
    }

    pub fn hr_at(&self, t: TimeIndex) -> Result<&Frame, WindowError> {
        if (-3..=3).contains(&t.0) {
            Ok(&self.hr_truth[(t.0 + 3) as usize])
        } else {
            Err(WindowError::NoSuchTime(t))
        }
    }

    /// The three low-resolution inputs a window consumes.
    pub fn window_inputs(&self, window: Window) -> [&Frame; 3] {
        window.input_times().map(|t| self.lr_at(t).expect("window times lie inside the sample"))
    }

    /// All (timestamp, truth frame) pairs, for evaluation.
    pub fn truths(&self) -> Vec<(TimeIndex, &Frame)> {
        (-3..=3).map(|t| (TimeIndex(t), self.hr_at(TimeIndex(t)).unwrap())).collect()
    }
}

fn crop_frame(frame: &Frame, r: CropRect) -> Frame {
    let data = frame
        .data
        .slice(ndarray::s![r.y..r.y + r.height, r.x..r.x + r.width, ..])
        .to_owned();
    Frame { data, colorspace: frame.colorspace }
}

/// Cuts a training sample from nine consecutive high-rate frames.
///
/// The crop (if any) is applied first, identically to every frame; inputs are
/// then the bicubic half-scale of frames 0, 2, 4, 6, 8 and truths are frames
/// 1..=7 at full resolution. `seed` only matters for `CropSpec::RandomSquare`.
pub fn build_training_sample(
    frames: &[Frame],
    crop: CropSpec,
    seed: u64,
) -> Result<TrainingSample, WindowError> {
    if frames.len() != 9 {
        return Err(WindowError::BadFrameCount(frames.len()));
    }
    let dim = frames[0].data.dim();
    let cs = frames[0].colorspace;
    if frames.iter().any(|f| f.data.dim() != dim || f.colorspace != cs) {
        return Err(WindowError::InconsistentFrames);
    }
    let (fh, fw, _) = dim;
    let rect = match crop {
        CropSpec::None => CropRect { x: 0, y: 0, width: fw, height: fh },
        CropSpec::Rect(r) => r,
        CropSpec::RandomSquare { size } => {
            if size > fh || size > fw {
                return Err(WindowError::CropOutOfBounds {
                    x: 0,
                    y: 0,
                    w: size,
                    h: size,
                    fh,
                    fw,
                });
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = rng.gen_range(0..=fw - size);
            let y = rng.gen_range(0..=fh - size);
            CropRect { x, y, width: size, height: size }
        }
    };
    if rect.x + rect.width > fw || rect.y + rect.height > fh {
        return Err(WindowError::CropOutOfBounds {
            x: rect.x,
            y: rect.y,
            w: rect.width,
            h: rect.height,
            fh,
            fw,
        });
    }
    if rect.width % 2 != 0 || rect.height % 2 != 0 || rect.width < 8 || rect.height < 8 {
        return Err(WindowError::BadSampleDims { w: rect.width, h: rect.height });
    }

    let cropped: Vec<Frame> = frames.iter().map(|f| crop_frame(f, rect)).collect();
    let lr: Vec<Frame> = [0, 2, 4, 6, 8]
        .iter()
        .map(|&i| bicubic_resize(&cropped[i], 0.5))
        .collect::<Result<_, _>>()?;
    let hr: Vec<Frame> = cropped[1..=7].to_vec();
    Ok(TrainingSample {
        lr_inputs: lr.try_into().expect("five inputs"),
        hr_truth: hr.try_into().expect("seven truths"),
    })
}

/// Three output frames from one window, anchored on the global timeline.
///
/// `base` is the absolute half-step of the window's relative origin; for
/// windows inside a training sample it is 0, for inference it is twice the
/// index of the center input frame.
#[derive(Debug, Clone)]
pub struct WindowPrediction {
    pub window: Window,
    pub base: TimeIndex,
    pub frames: [Frame; 3],
}

impl WindowPrediction {
    pub fn output_times(&self) -> [TimeIndex; 3] {
        self.window.output_times().map(|t| TimeIndex(t.0 + self.base.0))
    }

    pub fn center_time(&self) -> TimeIndex {
        TimeIndex(self.window.center().0 + self.base.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StitchPolicy {
    /// At an overlap, keep the frame from the window with the later center.
    Later,
    /// Keep the earlier window's frame.
    Earlier,
    /// Average the overlapping frames.
    Average,
}

/// Which windows contributed a stitched frame, in window-list order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StitchSource {
    pub time: TimeIndex,
    pub contributors: Vec<usize>,
    /// Index of the window whose pixels were kept; `None` means averaged.
    pub chosen: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Stitched {
    pub frames: Vec<(TimeIndex, Frame)>,
    pub sources: Vec<StitchSource>,
}

/// Merges per-window predictions into one timeline.
///
/// Windows must be sorted by center time and each consecutive pair must share
/// exactly one output timestamp; N windows stitch into 2N + 1 frames.
pub fn stitch(predictions: &[WindowPrediction], policy: StitchPolicy) -> Result<Stitched, WindowError> {
    if predictions.is_empty() {
        return Err(WindowError::EmptyStitch);
    }
    if predictions.windows(2).any(|p| p[0].center_time() >= p[1].center_time()) {
        return Err(WindowError::UnsortedWindows);
    }
    for pair in predictions.windows(2) {
        let a = pair[0].output_times();
        let b = pair[1].output_times();
        let shared = a.iter().filter(|t| b.contains(t)).count();
        if shared != 1 {
            if shared == 0 {
                let gap: Vec<i32> = (a[2].0 + 1..b[0].0).collect();
                return Err(WindowError::MissingCoverage(gap));
            }
            return Err(WindowError::BadOverlap(shared));
        }
    }

    let mut slots: BTreeMap<i32, Vec<(usize, &Frame)>> = BTreeMap::new();
    for (wi, pred) in predictions.iter().enumerate() {
        for (t, f) in pred.output_times().iter().zip(pred.frames.iter()) {
            slots.entry(t.0).or_default().push((wi, f));
        }
    }

    let mut frames = Vec::with_capacity(slots.len());
    let mut sources = Vec::with_capacity(slots.len());
    for (t, contributors) in &slots {
        let (frame, chosen) = match policy {
            StitchPolicy::Later => {
                let &(wi, f) = contributors.last().unwrap();
                (f.clone(), Some(wi))
            }
            StitchPolicy::Earlier => {
                let &(wi, f) = contributors.first().unwrap();
                (f.clone(), Some(wi))
            }
            StitchPolicy::Average => {
                if contributors.len() == 1 {
                    (contributors[0].1.clone(), Some(contributors[0].0))
                } else {
                    let mut acc = contributors[0].1.data.clone();
                    for (_, f) in &contributors[1..] {
                        acc += &f.data;
                    }
                    acc /= contributors.len() as f64;
                    (Frame { data: acc, colorspace: contributors[0].1.colorspace }, None)
                }
            }
        };
        frames.push((TimeIndex(*t), frame));
        sources.push(StitchSource {
            time: TimeIndex(*t),
            contributors: contributors.iter().map(|&(wi, _)| wi).collect(),
            chosen,
        });
    }
    Ok(Stitched { frames, sources })
}

/// Scores every predicted frame against the truth at its timestamp,
/// averaging interpolated (odd half-step) and super-resolved (even
/// half-step) frames separately. Overlapping timestamps are scored once per
/// window, before any stitching.
pub fn evaluate_predictions(
    predictions: &[WindowPrediction],
    truths: &[(TimeIndex, &Frame)],
) -> Result<MetricsReport, WindowError> {
    let lut: BTreeMap<i32, &Frame> = truths.iter().map(|&(t, f)| (t.0, f)).collect();
    let mut vfisr: Vec<(f64, f64)> = Vec::new();
    let mut sr: Vec<(f64, f64)> = Vec::new();
    for pred in predictions {
        for (t, f) in pred.output_times().iter().zip(pred.frames.iter()) {
            let truth = lut.get(&t.0).ok_or(WindowError::MissingTruth(*t))?;
            let scores = (psnr(f, truth)?, ssim(f, truth)?);
            if t.is_interpolated() {
                vfisr.push(scores);
            } else {
                sr.push(scores);
            }
        }
    }
    if vfisr.is_empty() {
        return Err(WindowError::EmptyMetricsBucket("interpolated"));
    }
    if sr.is_empty() {
        return Err(WindowError::EmptyMetricsBucket("super-resolved"));
    }
    let mean = |v: &[(f64, f64)], pick: fn(&(f64, f64)) -> f64| {
        v.iter().map(pick).sum::<f64>() / v.len() as f64
    };
    Ok(MetricsReport {
        psnr_vfisr: mean(&vfisr, |s| s.0),
        psnr_sr: mean(&sr, |s| s.0),
        ssim_vfisr: mean(&vfisr, |s| s.1),
        ssim_sr: mean(&sr, |s| s.1),
        vfisr_frames: vfisr.len(),
        sr_frames: sr.len(),
    })
}
