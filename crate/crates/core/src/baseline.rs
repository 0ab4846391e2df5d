//! Cascaded reference pipelines: upscale-then-interpolate and
//! interpolate-then-upscale.
//!
//! Interpolation is classical warp-and-average: estimate the two cross flows
//! between neighboring inputs, halve them under the linear-motion assumption,
//! backward-warp both endpoints to the midpoint and average. Upscaling is
//! bicubic (or nearest-neighbor, kept around as a sanity floor). Each cascade
//! emits the same nine frames per sample as the three stride-1 model windows,
//! so its report is directly comparable to a trained network's.

use crate::flowwarp::{backward_warp, estimate_flow, FlowError, FlowField, FlowProvider};
use crate::frames::{bicubic_resize, Frame, FrameError, MetricsReport};
use crate::synthdata::DatasetManifest;
use crate::trainer::{resolve_provider, ProviderSpec, TrainError};
use crate::windowing::{
    evaluate_predictions, TimeIndex, TrainingSample, Window, WindowError, WindowPrediction,
};
use ndarray::Array3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("midpoint of {0} and {1} is off the half-step lattice")]
    OddMidpoint(TimeIndex, TimeIndex),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Window(#[from] WindowError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Which stage of the cascade runs first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CascadeOrder {
    SrThenVfi,
    VfiThenSr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Upscaler {
    Bicubic,
    Nearest,
}

/// Doubles the frame's spatial dimensions.
pub fn upscale2x(frame: &Frame, how: Upscaler) -> Result<Frame, FrameError> {
    match how {
        Upscaler::Bicubic => bicubic_resize(frame, 2.0),
        Upscaler::Nearest => {
            let (h, w, c) = frame.data.dim();
            let mut out = Array3::zeros((2 * h, 2 * w, c));
            for y in 0..2 * h {
                for x in 0..2 * w {
                    for ch in 0..c {
                        out[(y, x, ch)] = frame.data[(y / 2, x / 2, ch)];
                    }
                }
            }
            Frame::new(out, frame.colorspace)
        }
    }
}

/// Synthesizes the frame midway between `a` (at `ta`) and `b` (at `tb`):
/// half of each estimated cross flow, retagged to the midpoint, warps its
/// endpoint there; the two warps are averaged.
pub fn warp_average_midpoint(
    a: &Frame,
    b: &Frame,
    ta: TimeIndex,
    tb: TimeIndex,
    provider: &FlowProvider,
) -> Result<Frame, BaselineError> {
    if (ta.0 + tb.0) % 2 != 0 {
        return Err(BaselineError::OddMidpoint(ta, tb));
    }
    let tm = TimeIndex((ta.0 + tb.0) / 2);
    let f_ab = estimate_flow(provider, a, b, ta, tb)?;
    let f_ba = estimate_flow(provider, b, a, tb, ta)?;
    let f_ma = FlowField::new(&f_ba.data * 0.5, tm, ta)?;
    let f_mb = FlowField::new(&f_ab.data * 0.5, tm, tb)?;
    let wa = backward_warp(a, &f_ma)?;
    let wb = backward_warp(b, &f_mb)?;
    Ok(Frame::new((&wa.data + &wb.data) * 0.5, a.colorspace)?)
}

/// Runs one cascade over a training sample, producing the three stride-1
/// window predictions. `lr_provider` serves flows at input resolution,
/// `hr_provider` at doubled resolution (used when interpolation runs after
/// upscaling).
pub fn cascade_sample(
    sample: &TrainingSample,
    order: CascadeOrder,
    up: Upscaler,
    lr_provider: &FlowProvider,
    hr_provider: &FlowProvider,
) -> Result<Vec<WindowPrediction>, BaselineError> {
    (1..=3)
        .map(|w| {
            let window = Window::stride1(w)?;
            let [ta, tb, tc] = window.input_times();
            let [a, b, c] = sample.window_inputs(window);
            let mut frames = match order {
                CascadeOrder::SrThenVfi => {
                    let ha = upscale2x(a, up)?;
                    let hb = upscale2x(b, up)?;
                    let hc = upscale2x(c, up)?;
                    let m1 = warp_average_midpoint(&ha, &hb, ta, tb, hr_provider)?;
                    let m2 = warp_average_midpoint(&hb, &hc, tb, tc, hr_provider)?;
                    [m1, hb, m2]
                }
                CascadeOrder::VfiThenSr => {
                    let m1 = warp_average_midpoint(a, b, ta, tb, lr_provider)?;
                    let m2 = warp_average_midpoint(b, c, tb, tc, lr_provider)?;
                    [upscale2x(&m1, up)?, upscale2x(b, up)?, upscale2x(&m2, up)?]
                }
            };
            for f in &mut frames {
                f.clamp_yuv();
            }
            Ok(WindowPrediction { window, base: TimeIndex(0), frames })
        })
        .collect()
}

/// Block matching searches in pixels, so its parameters double with the
/// resolution; zero and oracle providers are resolution-agnostic.
fn hr_spec(spec: ProviderSpec) -> ProviderSpec {
    match spec {
        ProviderSpec::BlockMatching { block, search } => {
            ProviderSpec::BlockMatching { block: 2 * block, search: 2 * search }
        }
        other => other,
    }
}

/// Metrics of one cascade order over a dataset, pooled like
/// `evaluate_network` so model and baseline numbers are interchangeable.
pub fn evaluate_cascade(
    samples: &[TrainingSample],
    manifest: Option<&DatasetManifest>,
    spec: ProviderSpec,
    order: CascadeOrder,
    up: Upscaler,
) -> Result<MetricsReport, BaselineError> {
    if samples.is_empty() {
        return Err(TrainError::EmptyDataset.into());
    }
    let reports = samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let lr = resolve_provider(spec, manifest, i, 0.5)?;
            let hr = resolve_provider(hr_spec(spec), manifest, i, 1.0)?;
            let preds = cascade_sample(s, order, up, &lr, &hr)?;
            Ok(evaluate_predictions(&preds, &s.truths())?)
        })
        .collect::<Result<Vec<_>, BaselineError>>()?;
    Ok(MetricsReport::merge(&reports))
}

/// Both cascade orders over one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub sr_then_vfi: MetricsReport,
    pub vfi_then_sr: MetricsReport,
}

impl BaselineReport {
    /// Interpolation PSNR of the stronger cascade.
    pub fn best_vfisr_psnr(&self) -> f64 {
        self.sr_then_vfi.psnr_vfisr.max(self.vfi_then_sr.psnr_vfisr)
    }

    /// Plain-upscaling PSNR on the non-interpolated frames. Both orders
    /// upscale the center input unchanged, so either report serves.
    pub fn sr_psnr(&self) -> f64 {
        self.sr_then_vfi.psnr_sr
    }
}

pub fn run_baselines(
    samples: &[TrainingSample],
    manifest: Option<&DatasetManifest>,
    spec: ProviderSpec,
    up: Upscaler,
) -> Result<BaselineReport, BaselineError> {
    Ok(BaselineReport {
        sr_then_vfi: evaluate_cascade(samples, manifest, spec, CascadeOrder::SrThenVfi, up)?,
        vfi_then_sr: evaluate_cascade(samples, manifest, spec, CascadeOrder::VfiThenSr, up)?,
    })
}
