//! Optical flow estimation, linear-motion half-flows, backward warping, and
//! assembly of the per-window network input stack.
//!
//! A flow field tagged `from -> to` answers: for content sitting at pixel `x`
//! of the frame at time `from`, where is it in the frame at time `to`?
//! Backward warping a source frame by such a field therefore reconstructs the
//! `from`-time frame: `out(x) = source(x + flow(x))`, sampled bilinearly with
//! clamp-to-edge borders. Flow channel 0 is the horizontal displacement
//! (positive right), channel 1 vertical (positive down), in pixels at the
//! field's own resolution.

use crate::frames::{Frame, FrameError};
use crate::windowing::{TimeIndex, Window};
use ndarray::Array3;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("flow field must be (h, w, 2), got {0:?}")]
    BadFlowShape((usize, usize, usize)),
    #[error("frames must share dimensions for flow, got {a:?} vs {b:?}")]
    FrameMismatch { a: (usize, usize, usize), b: (usize, usize, usize) },
    #[error("flow {fh}x{fw} does not match frame {h}x{w}")]
    FlowFrameMismatch { fh: usize, fw: usize, h: usize, w: usize },
    #[error("flow endpoints must differ, both are {0}")]
    ZeroSpan(TimeIndex),
    #[error("block matching needs block >= 4 and search >= 1, got block {block} search {search}")]
    BadBlockConfig { block: usize, search: usize },
    #[error("expected the four full-step flows (-S->0, 0->-S, 0->+S, +S->0) around a common center; got tags ({0}->{1}), ({2}->{3}), ({4}->{5}), ({6}->{7})")]
    BadFlowTags(TimeIndex, TimeIndex, TimeIndex, TimeIndex, TimeIndex, TimeIndex, TimeIndex, TimeIndex),
    #[error("input stack needs 3-channel frames")]
    NotThreeChannels,
    #[error("oracle cannot produce this flow: {0}")]
    OracleUnsupported(String),
    #[error(transparent)]
    Frame(#[from] FrameError),
}

/// A dense displacement field from one timestamp to another.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    /// `(h, w, 2)`: channel 0 horizontal, channel 1 vertical, in pixels.
    pub data: Array3<f64>,
    pub from_time: TimeIndex,
    pub to_time: TimeIndex,
}

impl FlowField {
    pub fn new(data: Array3<f64>, from_time: TimeIndex, to_time: TimeIndex) -> Result<Self, FlowError> {
        let dim = data.dim();
        if dim.2 != 2 || dim.0 == 0 || dim.1 == 0 {
            return Err(FlowError::BadFlowShape(dim));
        }
        Ok(FlowField { data, from_time, to_time })
    }

    pub fn zero(h: usize, w: usize, from_time: TimeIndex, to_time: TimeIndex) -> Self {
        FlowField { data: Array3::zeros((h, w, 2)), from_time, to_time }
    }
}

/// Answers time-indexed flow queries from ground-truth scene motion.
/// Implemented by the synthetic generator.
pub trait FlowOracle: Send + Sync {
    fn flow_data(
        &self,
        from: TimeIndex,
        to: TimeIndex,
        h: usize,
        w: usize,
    ) -> Result<Array3<f64>, FlowError>;
}

/// Pluggable flow estimation backend.
#[derive(Clone)]
pub enum FlowProvider {
    /// All-zero flow; warping degenerates to frame copying.
    Zero,
    /// Exhaustive per-block SAD search on luma, one integer displacement per
    /// block, replicated to every pixel of the block.
    BlockMatching { block: usize, search: usize },
    /// Exact motion from a synthetic scene.
    Oracle(Arc<dyn FlowOracle>),
}

impl std::fmt::Debug for FlowProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FlowProvider::Zero => write!(f, "Zero"),
            FlowProvider::BlockMatching { block, search } => {
                write!(f, "BlockMatching {{ block: {block}, search: {search} }}")
            }
            FlowProvider::Oracle(_) => write!(f, "Oracle"),
        }
    }
}

/// Estimates the flow from `src` (at `from`) to `dst` (at `to`).
pub fn estimate_flow(
    provider: &FlowProvider,
    src: &Frame,
    dst: &Frame,
    from: TimeIndex,
    to: TimeIndex,
) -> Result<FlowField, FlowError> {
    if src.data.dim() != dst.data.dim() {
        return Err(FlowError::FrameMismatch { a: src.data.dim(), b: dst.data.dim() });
    }
    if from == to {
        return Err(FlowError::ZeroSpan(from));
    }
    let (h, w, _) = src.data.dim();
    match provider {
        FlowProvider::Zero => Ok(FlowField::zero(h, w, from, to)),
        FlowProvider::BlockMatching { block, search } => {
            if *block < 4 || *search < 1 {
                return Err(FlowError::BadBlockConfig { block: *block, search: *search });
            }
            Ok(FlowField { data: block_match(src, dst, *block, *search), from_time: from, to_time: to })
        }
        FlowProvider::Oracle(oracle) => {
            let data = oracle.flow_data(from, to, h, w)?;
            let dim = data.dim();
            if dim != (h, w, 2) {
                return Err(FlowError::BadFlowShape(dim));
            }
            Ok(FlowField { data, from_time: from, to_time: to })
        }
    }
}

/// For each block of `src`, the integer displacement within the search radius
/// whose SAD against `dst` is lowest. Candidates that would read outside
/// `dst` are skipped; ties prefer the smaller displacement magnitude, then
/// row-major order. Works on luma.
fn block_match(src: &Frame, dst: &Frame, block: usize, search: usize) -> Array3<f64> {
    let sl = src.luma();
    let dl = dst.luma();
    let (h, w) = sl.dim();
    let mut flow = Array3::zeros((h, w, 2));
    let s = search as isize;
    let mut by = 0;
    while by < h {
        let bh = block.min(h - by);
        let mut bx = 0;
        while bx < w {
            let bw = block.min(w - bx);
            let mut best = (f64::INFINITY, i64::MAX, 0isize, 0isize);
            for dy in -s..=s {
                for dx in -s..=s {
                    let (ty, tx) = (by as isize + dy, bx as isize + dx);
                    if ty < 0 || tx < 0 || ty + bh as isize > h as isize || tx + bw as isize > w as isize {
                        continue;
                    }
                    let mut sad = 0.0;
                    for y in 0..bh {
                        for x in 0..bw {
                            sad += (sl[(by + y, bx + x)] - dl[(ty as usize + y, tx as usize + x)]).abs();
                        }
                    }
                    let d2 = (dy * dy + dx * dx) as i64;
                    if sad < best.0 || (sad == best.0 && d2 < best.1) {
                        best = (sad, d2, dy, dx);
                    }
                }
            }
            for y in by..by + bh {
                for x in bx..bx + bw {
                    flow[(y, x, 0)] = best.3 as f64;
                    flow[(y, x, 1)] = best.2 as f64;
                }
            }
            bx += block;
        }
        by += block;
    }
    flow
}

/// Halves the four full-step flows of a window under a linear-motion
/// assumption, retagging them to the mid-step timestamps.
///
/// Input tags must be `(c-S -> c)`, `(c -> c-S)`, `(c -> c+S)`, `(c+S -> c)`
/// for a common center `c` and even spacing `S >= 2`; the outputs are tagged
/// `(c-S/2 -> c)`, `(c-S/2 -> c-S)`, `(c+S/2 -> c+S)`, `(c+S/2 -> c)`.
pub fn approximate_half_flows(flows: &[FlowField; 4]) -> Result<[FlowField; 4], FlowError> {
    let [f_m0, f_0m, f_0p, f_p0] = flows;
    let c = f_m0.to_time;
    let span = c.0 - f_m0.from_time.0;
    let tags_ok = span >= 2
        && span % 2 == 0
        && f_0m.from_time == c
        && f_0m.to_time == f_m0.from_time
        && f_0p.from_time == c
        && f_0p.to_time == TimeIndex(c.0 + span)
        && f_p0.from_time == TimeIndex(c.0 + span)
        && f_p0.to_time == c;
    if !tags_ok {
        return Err(FlowError::BadFlowTags(
            f_m0.from_time, f_m0.to_time, f_0m.from_time, f_0m.to_time,
            f_0p.from_time, f_0p.to_time, f_p0.from_time, f_p0.to_time,
        ));
    }
    let dim = f_m0.data.dim();
    if flows.iter().any(|f| f.data.dim() != dim) {
        return Err(FlowError::BadFlowShape(dim));
    }
    let half = span / 2;
    let halve = |f: &FlowField, from: i32, to: i32| FlowField {
        data: &f.data * 0.5,
        from_time: TimeIndex(from),
        to_time: TimeIndex(to),
    };
    Ok([
        halve(f_m0, c.0 - half, c.0),
        halve(f_0m, c.0 - half, c.0 - span),
        halve(f_0p, c.0 + half, c.0 + span),
        halve(f_p0, c.0 + half, c.0),
    ])
}

/// Reconstructs the flow's `from`-time frame by sampling `source` at
/// `x + flow(x)`, bilinear with clamp-to-edge borders.
pub fn backward_warp(source: &Frame, flow: &FlowField) -> Result<Frame, FlowError> {
    let (h, w, c) = source.data.dim();
    let (fh, fw, _) = flow.data.dim();
    if (fh, fw) != (h, w) {
        return Err(FlowError::FlowFrameMismatch { fh, fw, h, w });
    }
    let mut out = Array3::zeros((h, w, c));
    for y in 0..h {
        for x in 0..w {
            let sx = (x as f64 + flow.data[(y, x, 0)]).clamp(0.0, (w - 1) as f64);
            let sy = (y as f64 + flow.data[(y, x, 1)]).clamp(0.0, (h - 1) as f64);
            let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let (tx, ty) = (sx - x0 as f64, sy - y0 as f64);
            for ch in 0..c {
                let top = source.data[(y0, x0, ch)] * (1.0 - tx) + source.data[(y0, x1, ch)] * tx;
                let bot = source.data[(y1, x0, ch)] * (1.0 - tx) + source.data[(y1, x1, ch)] * tx;
                out[(y, x, ch)] = top * (1.0 - ty) + bot * ty;
            }
        }
    }
    Ok(Frame { data: out, colorspace: source.colorspace })
}

/// What goes into the network besides the frames themselves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StackMode {
    /// Frames only: 9 channels.
    FramesOnly,
    /// Frames + the four half-flows: 17 channels.
    FramesFlows,
    /// Frames + half-flows + the four warped frames: 29 channels.
    Full,
}

impl StackMode {
    pub fn channels(self) -> usize {
        match self {
            StackMode::FramesOnly => 9,
            StackMode::FramesFlows => 17,
            StackMode::Full => 29,
        }
    }
}

/// The per-window network input, channel-major `(c, h, w)`.
///
/// Layout: frames (3 x YUV), then half-flows in the order
/// `(-S/2 -> 0)`, `(-S/2 -> -S)`, `(+S/2 -> +S)`, `(+S/2 -> 0)` as (dx, dy)
/// pairs, then the corresponding backward-warped frames (3 x YUV), each built
/// from the source frame the half-flow points into. Times are relative to the
/// window like everything else; with the zero provider the warped channels
/// are exact copies of their source frames.
pub fn assemble_input_stack(
    window: Window,
    frames: [&Frame; 3],
    provider: &FlowProvider,
    mode: StackMode,
) -> Result<Array3<f64>, FlowError> {
    if frames.iter().any(|f| f.channels() != 3) {
        return Err(FlowError::NotThreeChannels);
    }
    let (h, w, _) = frames[0].data.dim();
    if frames.iter().any(|f| f.data.dim() != (h, w, 3)) {
        return Err(FlowError::FrameMismatch { a: frames[0].data.dim(), b: frames[1].data.dim() });
    }
    let mut stack = Array3::zeros((mode.channels(), h, w));
    let mut ch = 0;
    let push_frame = |stack: &mut Array3<f64>, f: &Frame, ch: &mut usize| {
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    stack[(*ch, y, x)] = f.data[(y, x, c)];
                }
            }
            *ch += 1;
        }
    };
    for f in frames {
        push_frame(&mut stack, f, &mut ch);
    }
    if mode == StackMode::FramesOnly {
        return Ok(stack);
    }

    let [ta, tc, tb] = window.input_times();
    let full = [
        estimate_flow(provider, frames[0], frames[1], ta, tc)?,
        estimate_flow(provider, frames[1], frames[0], tc, ta)?,
        estimate_flow(provider, frames[1], frames[2], tc, tb)?,
        estimate_flow(provider, frames[2], frames[1], tb, tc)?,
    ];
    let halves = approximate_half_flows(&full)?;
    for f in &halves {
        for c in 0..2 {
            for y in 0..h {
                for x in 0..w {
                    stack[(ch, y, x)] = f.data[(y, x, c)];
                }
            }
            ch += 1;
        }
    }
    if mode == StackMode::FramesFlows {
        return Ok(stack);
    }

    // Each half-flow reconstructs its from-time frame out of the frame at its
    // to-time: center, earliest, latest, center.
    let sources = [frames[1], frames[0], frames[2], frames[1]];
    for (flow, src) in halves.iter().zip(sources) {
        let warped = backward_warp(src, flow)?;
        push_frame(&mut stack, &warped, &mut ch);
    }
    debug_assert_eq!(ch, 29);
    Ok(stack)
}
