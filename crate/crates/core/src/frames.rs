//! Planar float frames and the image math used everywhere else: bicubic
//! resampling, PSNR/SSIM, and BT.709 colorspace conversion.
//!
//! Frames are `(height, width, channels)` arrays of `f64`. Luma lives in
//! `[0, 1]`; chroma uses the signed convention `[-0.5, 0.5]`. Quantization to
//! 8-bit happens only at file I/O boundaries, never here.

use ndarray::{Array2, Array3, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FrameError {
    #[error("frame must have 1 or 3 channels, got {0}")]
    BadChannelCount(usize),
    #[error("frame dimensions must be nonzero, got {h}x{w}")]
    EmptyFrame { h: usize, w: usize },
    #[error("frame contains a non-finite value at ({y}, {x}, {c})")]
    NonFinite { y: usize, x: usize, c: usize },
    #[error("shape mismatch: {a:?} vs {b:?}")]
    ShapeMismatch { a: (usize, usize, usize), b: (usize, usize, usize) },
    #[error("colorspace mismatch: {a:?} vs {b:?}")]
    ColorspaceMismatch { a: Colorspace, b: Colorspace },
    #[error("scale {scale} maps {h}x{w} to an empty image")]
    DegenerateScale { scale: f64, h: usize, w: usize },
    #[error("{op} requires a {need:?} frame, got {got:?}")]
    WrongColorspace { op: &'static str, need: Colorspace, got: Colorspace },
    #[error("frame {h}x{w} is smaller than the {win}x{win} SSIM window")]
    FrameTooSmall { h: usize, w: usize, win: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Colorspace {
    Rgb,
    Yuv,
}

/// A single video frame in float precision, height-major with interleaved
/// channels last: `data[(y, x, c)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub data: Array3<f64>,
    pub colorspace: Colorspace,
}

impl Frame {
    /// Validates channel count, nonzero size, and finiteness.
    pub fn new(data: Array3<f64>, colorspace: Colorspace) -> Result<Self, FrameError> {
        let (h, w, c) = data.dim();
        if c != 1 && c != 3 {
            return Err(FrameError::BadChannelCount(c));
        }
        if h == 0 || w == 0 {
            return Err(FrameError::EmptyFrame { h, w });
        }
        if let Some(((y, x, c), _)) = data.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(FrameError::NonFinite { y, x, c });
        }
        Ok(Frame { data, colorspace })
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn channels(&self) -> usize {
        self.data.dim().2
    }

    /// Clamps a 3-channel YUV frame into the representable range:
    /// Y to [0, 1], U and V to [-0.5, 0.5]. Network outputs pass through
    /// this before metrics or export.
    pub fn clamp_yuv(&mut self) {
        debug_assert_eq!(self.colorspace, Colorspace::Yuv);
        for ((_, _, c), v) in self.data.indexed_iter_mut() {
            *v = if c == 0 { v.clamp(0.0, 1.0) } else { v.clamp(-0.5, 0.5) };
        }
    }

    /// The luma plane: channel 0 for YUV and single-channel frames, the
    /// BT.709 weighted sum for RGB.
    pub fn luma(&self) -> Array2<f64> {
        let (h, w, c) = self.data.dim();
        match (self.colorspace, c) {
            (Colorspace::Rgb, 3) => {
                Array2::from_shape_fn((h, w), |(y, x)| {
                    KR * self.data[(y, x, 0)] + KG * self.data[(y, x, 1)] + KB * self.data[(y, x, 2)]
                })
            }
            _ => self.data.index_axis(ndarray::Axis(2), 0).to_owned(),
        }
    }
}

fn check_pair(a: &Frame, b: &Frame) -> Result<(), FrameError> {
    if a.data.dim() != b.data.dim() {
        return Err(FrameError::ShapeMismatch { a: a.data.dim(), b: b.data.dim() });
    }
    if a.colorspace != b.colorspace {
        return Err(FrameError::ColorspaceMismatch { a: a.colorspace, b: b.colorspace });
    }
    Ok(())
}

/// Catmull-Rom bicubic kernel (a = -0.5), nonzero on |t| < 2.
pub fn bicubic_kernel(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        A * (((t - 5.0) * t + 8.0) * t - 4.0)
    } else {
        0.0
    }
}

/// Per-output-index taps for one resampled axis.
///
/// Output pixel centers map into the source as `x = (o + 0.5)/scale - 0.5`;
/// four taps around `x` are weighted by the kernel and clamped to the edge.
/// The same fixed 4-tap kernel is used at every scale (no low-pass widening
/// when minifying), so a constant image is preserved exactly at any scale and
/// scale 1 is the identity.
fn axis_taps(n_in: usize, n_out: usize, scale: f64) -> Vec<[(usize, f64); 4]> {
    (0..n_out)
        .map(|o| {
            let x = (o as f64 + 0.5) / scale - 0.5;
            let i0 = x.floor() as isize;
            let mut taps = [(0usize, 0.0f64); 4];
            for (j, tap) in taps.iter_mut().enumerate() {
                let i = i0 - 1 + j as isize;
                let w = bicubic_kernel(x - i as f64);
                let i = i.clamp(0, n_in as isize - 1) as usize;
                *tap = (i, w);
            }
            taps
        })
        .collect()
}

/// Separable bicubic resampling of a single plane by a positive scale factor.
/// Output dimensions are `round(n * scale)`.
pub fn bicubic_resize_plane(plane: ArrayView2<f64>, scale: f64) -> Result<Array2<f64>, FrameError> {
    let (h, w) = plane.dim();
    let out_h = (h as f64 * scale).round() as usize;
    let out_w = (w as f64 * scale).round() as usize;
    if !(scale > 0.0) || out_h == 0 || out_w == 0 {
        return Err(FrameError::DegenerateScale { scale, h, w });
    }
    let col_taps = axis_taps(w, out_w, scale);
    let row_taps = axis_taps(h, out_h, scale);

    let mut tmp = Array2::zeros((h, out_w));
    for y in 0..h {
        for (ox, taps) in col_taps.iter().enumerate() {
            tmp[(y, ox)] = taps.iter().map(|&(i, k)| k * plane[(y, i)]).sum::<f64>();
        }
    }
    let mut out = Array2::zeros((out_h, out_w));
    for (oy, taps) in row_taps.iter().enumerate() {
        for ox in 0..out_w {
            out[(oy, ox)] = taps.iter().map(|&(i, k)| k * tmp[(i, ox)]).sum::<f64>();
        }
    }
    Ok(out)
}

/// Bicubic resampling of every channel of a frame.
pub fn bicubic_resize(frame: &Frame, scale: f64) -> Result<Frame, FrameError> {
    let (_, _, c) = frame.data.dim();
    let mut planes = Vec::with_capacity(c);
    for ch in 0..c {
        planes.push(bicubic_resize_plane(frame.data.index_axis(ndarray::Axis(2), ch), scale)?);
    }
    let (oh, ow) = planes[0].dim();
    let mut data = Array3::zeros((oh, ow, c));
    for (ch, plane) in planes.iter().enumerate() {
        data.index_axis_mut(ndarray::Axis(2), ch).assign(plane);
    }
    Ok(Frame { data, colorspace: frame.colorspace })
}

/// Peak signal-to-noise ratio in dB over all channels jointly, peak 1.0.
/// Identical frames (and anything above it) cap at 100 dB.
pub fn psnr(a: &Frame, b: &Frame) -> Result<f64, FrameError> {
    check_pair(a, b)?;
    let n = a.data.len() as f64;
    let mse: f64 = a
        .data
        .iter()
        .zip(b.data.iter())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(100.0);
    }
    Ok((-10.0 * mse.log10()).min(100.0))
}

pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut g = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum::<f64>();
    g.map(|v| v / s)
}

/// Gaussian-filtered plane, valid region only (no padding).
fn gauss_valid(p: &Array2<f64>) -> Array2<f64> {
    let g = gaussian_window();
    let (h, w) = p.dim();
    let mut rows = Array2::zeros((h, w - SSIM_WINDOW + 1));
    for y in 0..h {
        for x in 0..w - SSIM_WINDOW + 1 {
            rows[(y, x)] = (0..SSIM_WINDOW).map(|k| g[k] * p[(y, x + k)]).sum::<f64>();
        }
    }
    let mut out = Array2::zeros((h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1));
    for y in 0..h - SSIM_WINDOW + 1 {
        for x in 0..w - SSIM_WINDOW + 1 {
            out[(y, x)] = (0..SSIM_WINDOW).map(|k| g[k] * rows[(y + k, x)]).sum::<f64>();
        }
    }
    out
}

/// Single-scale structural similarity on the luma plane.
///
/// 11x11 Gaussian window (sigma 1.5), valid positions only,
/// C1 = (0.01 * peak)^2 and C2 = (0.03 * peak)^2 with peak 1.0.
pub fn ssim(a: &Frame, b: &Frame) -> Result<f64, FrameError> {
    check_pair(a, b)?;
    let (h, w, _) = a.data.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(FrameError::FrameTooSmall { h, w, win: SSIM_WINDOW });
    }
    let x = a.luma();
    let y = b.luma();
    let mu_x = gauss_valid(&x);
    let mu_y = gauss_valid(&y);
    let xx = gauss_valid(&(&x * &x));
    let yy = gauss_valid(&(&y * &y));
    let xy = gauss_valid(&(&x * &y));

    const C1: f64 = 0.01 * 0.01;
    const C2: f64 = 0.03 * 0.03;
    let mut sum = 0.0;
    for ((i, j), &mx) in mu_x.indexed_iter() {
        let my = mu_y[(i, j)];
        let var_x = xx[(i, j)] - mx * mx;
        let var_y = yy[(i, j)] - my * my;
        let cov = xy[(i, j)] - mx * my;
        sum += ((2.0 * mx * my + C1) * (2.0 * cov + C2))
            / ((mx * mx + my * my + C1) * (var_x + var_y + C2));
    }
    Ok(sum / mu_x.len() as f64)
}

// BT.709 luma weights, full range.
const KR: f64 = 0.2126;
const KG: f64 = 0.7152;
const KB: f64 = 0.0722;
const U_SCALE: f64 = 2.0 * (1.0 - KB); // 1.8556
const V_SCALE: f64 = 2.0 * (1.0 - KR); // 1.5748

/// RGB -> YUV (BT.709, full range, signed chroma). Black maps to (0, 0, 0)
/// and white to (1, 0, 0).
pub fn yuv_from_rgb(frame: &Frame) -> Result<Frame, FrameError> {
    if frame.colorspace != Colorspace::Rgb || frame.channels() != 3 {
        return Err(FrameError::WrongColorspace {
            op: "yuv_from_rgb",
            need: Colorspace::Rgb,
            got: frame.colorspace,
        });
    }
    let (h, w, _) = frame.data.dim();
    let mut data = Array3::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            let (r, g, b) = (frame.data[(y, x, 0)], frame.data[(y, x, 1)], frame.data[(y, x, 2)]);
            let luma = KR * r + KG * g + KB * b;
            data[(y, x, 0)] = luma;
            data[(y, x, 1)] = (b - luma) / U_SCALE;
            data[(y, x, 2)] = (r - luma) / V_SCALE;
        }
    }
    Ok(Frame { data, colorspace: Colorspace::Yuv })
}

/// YUV -> RGB, the exact inverse of [`yuv_from_rgb`].
pub fn rgb_from_yuv(frame: &Frame) -> Result<Frame, FrameError> {
    if frame.colorspace != Colorspace::Yuv || frame.channels() != 3 {
        return Err(FrameError::WrongColorspace {
            op: "rgb_from_yuv",
            need: Colorspace::Yuv,
            got: frame.colorspace,
        });
    }
    let (h, w, _) = frame.data.dim();
    let mut data = Array3::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            let (luma, u, v) = (frame.data[(y, x, 0)], frame.data[(y, x, 1)], frame.data[(y, x, 2)]);
            let r = luma + V_SCALE * v;
            let b = luma + U_SCALE * u;
            let g = (luma - KR * r - KB * b) / KG;
            data[(y, x, 0)] = r;
            data[(y, x, 1)] = g;
            data[(y, x, 2)] = b;
        }
    }
    Ok(Frame { data, colorspace: Colorspace::Rgb })
}

/// Quality summary split by output kind: interpolated frames (odd half-step
/// timestamps) versus super-resolved frames (even half-steps). PSNR/SSIM are
/// means of per-frame values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub psnr_vfisr: f64,
    pub psnr_sr: f64,
    pub ssim_vfisr: f64,
    pub ssim_sr: f64,
    pub vfisr_frames: usize,
    pub sr_frames: usize,
}

impl MetricsReport {
    pub fn frame_count(&self) -> usize {
        self.vfisr_frames + self.sr_frames
    }

    /// Pools per-frame means across reports, weighting by frame counts.
    pub fn merge(reports: &[MetricsReport]) -> MetricsReport {
        let mut out = MetricsReport {
            psnr_vfisr: 0.0,
            psnr_sr: 0.0,
            ssim_vfisr: 0.0,
            ssim_sr: 0.0,
            vfisr_frames: 0,
            sr_frames: 0,
        };
        for r in reports {
            out.psnr_vfisr += r.psnr_vfisr * r.vfisr_frames as f64;
            out.ssim_vfisr += r.ssim_vfisr * r.vfisr_frames as f64;
            out.vfisr_frames += r.vfisr_frames;
            out.psnr_sr += r.psnr_sr * r.sr_frames as f64;
            out.ssim_sr += r.ssim_sr * r.sr_frames as f64;
            out.sr_frames += r.sr_frames;
        }
        if out.vfisr_frames > 0 {
            out.psnr_vfisr /= out.vfisr_frames as f64;
            out.ssim_vfisr /= out.vfisr_frames as f64;
        }
        if out.sr_frames > 0 {
            out.psnr_sr /= out.sr_frames as f64;
            out.ssim_sr /= out.sr_frames as f64;
        }
        out
    }
}
