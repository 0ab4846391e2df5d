//! The multi-scale prediction network.
//!
//! One U-Net runs per scale level, coarsest first. Level inputs are bicubic
//! downscalings of the 29-channel window stack by 4, 2 and 1 (flow channels
//! value-scaled alongside), and every level after the first additionally sees
//! the previous level's 9-channel prediction, which has exactly its input
//! resolution because each U-Net ends in a 2x upsampling head. Each level
//! therefore emits the window's three YUV frames at twice its own input
//! resolution; the last level's output is the final full-resolution
//! prediction.
//!
//! Backpropagation is hand-written. `backward` takes one gradient tensor per
//! level output (the loss is applied at every level) and chains them from the
//! finest level down, adding the gradient that flows through the coarser
//! level's concatenated prediction channels.

pub mod checkpoint;
mod layers;

pub use layers::{concat_channels, split_channels};

use crate::flowwarp::StackMode;
use crate::frames::{bicubic_resize_plane, Colorspace, Frame, FrameError};
use layers::{leaky_relu, leaky_relu_backward, Conv2d, ConvCache, ConvTCache, ConvTranspose2};
use ndarray::{Array1, Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("levels must be 1 or 3, got {0}")]
    BadLevelCount(usize),
    #[error("base_channels and unet_depth must be at least 1")]
    BadConfig,
    #[error("expected {want} pyramid levels, got {got}")]
    WrongPyramid { want: usize, got: usize },
    #[error("level {level} input {h}x{w} must be divisible by 2^{depth}")]
    IndivisibleInput { level: usize, h: usize, w: usize, depth: usize },
    #[error("level {level} expects {want} channels, got {got}")]
    WrongChannels { level: usize, want: usize, got: usize },
    #[error("pyramid level {level} must be exactly half the next level's resolution")]
    BrokenPyramid { level: usize },
    #[error("gradient count {got} does not match level count {want}")]
    WrongGradCount { want: usize, got: usize },
    #[error("tensor {name} has shape {got:?}, expected {want:?}")]
    TensorShape { name: String, got: Vec<usize>, want: Vec<usize> },
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub const OUT_CHANNELS: usize = 9;

/// Activation after every internal convolution. Leaky (slope 0.1) is the
/// default: plain ReLU makes an all-dead network an absorbing point of the
/// temporal-matching terms (windows agree perfectly once every
/// input-sensitive feature is silenced, and zero-gradient units never
/// recover), which reliably collapses training onto the bicubic blend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    #[default]
    LeakyRelu,
}

impl Activation {
    /// Gradient of the negative branch.
    pub fn slope(self) -> f64 {
        match self {
            Activation::Relu => 0.0,
            Activation::LeakyRelu => 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    /// Width of every internal convolution.
    pub base_channels: usize,
    /// Scale levels: 3 (multi-scale) or 1 (finest level only).
    pub levels: usize,
    /// Encoder/decoder stages per U-Net.
    pub unet_depth: usize,
    /// What the window stack contains (decides input channels: 9/17/29).
    pub stack: StackMode,
    /// Add a bicubic 2x upscaling of the input frames to the output instead
    /// of predicting frames from scratch.
    pub bicubic_residual: bool,
    #[serde(default)]
    pub activation: Activation,
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<(), NetworkError> {
        if self.levels != 1 && self.levels != 3 {
            return Err(NetworkError::BadLevelCount(self.levels));
        }
        if self.base_channels == 0 || self.unet_depth == 0 {
            return Err(NetworkError::BadConfig);
        }
        Ok(())
    }

    pub fn stack_channels(&self) -> usize {
        self.stack.channels()
    }

    /// Input channels of level `l`: the stack plus, after the first level,
    /// the previous level's prediction.
    pub fn level_in_channels(&self, l: usize) -> usize {
        self.stack_channels() + if l == 0 { 0 } else { OUT_CHANNELS }
    }
}

/// Downscales a window stack into per-level network inputs, coarsest first
/// (scales 1/4, 1/2, 1 for three levels; identity for one). Flow channels
/// (9..17 when present) are value-scaled by the same factor, since a
/// displacement measured in pixels shrinks with the image.
pub fn build_pyramid(
    stack: &Array3<f64>,
    mode: StackMode,
    levels: usize,
) -> Result<Vec<Array3<f64>>, NetworkError> {
    if levels != 1 && levels != 3 {
        return Err(NetworkError::BadLevelCount(levels));
    }
    let (c, _, _) = stack.dim();
    if c != mode.channels() {
        return Err(NetworkError::WrongChannels { level: 0, want: mode.channels(), got: c });
    }
    let scales: &[f64] = if levels == 3 { &[0.25, 0.5, 1.0] } else { &[1.0] };
    let mut pyramid = Vec::with_capacity(levels);
    for &scale in scales {
        if scale == 1.0 {
            pyramid.push(stack.clone());
            continue;
        }
        let mut planes = Vec::with_capacity(c);
        for ch in 0..c {
            let mut plane =
                bicubic_resize_plane(stack.index_axis(ndarray::Axis(0), ch), scale)?;
            let is_flow = mode != StackMode::FramesOnly && (9..17).contains(&ch);
            if is_flow {
                plane *= scale;
            }
            planes.push(plane);
        }
        let (h, w) = planes[0].dim();
        let mut level = Array3::zeros((c, h, w));
        for (ch, plane) in planes.iter().enumerate() {
            level.index_axis_mut(ndarray::Axis(0), ch).assign(plane);
        }
        pyramid.push(level);
    }
    Ok(pyramid)
}

/// One encoder/decoder U-Net with a 2x upsampling head.
#[derive(Debug, Clone)]
pub struct Unet {
    slope: f64,
    stem: Conv2d,
    enc: Vec<(Conv2d, Conv2d)>,
    dec: Vec<(ConvTranspose2, Conv2d)>,
    head_up: ConvTranspose2,
    head_out: Conv2d,
}

impl Unet {
    fn build(cin: usize, c: usize, depth: usize, slope: f64, rng: Option<&mut ChaCha8Rng>) -> Unet {
        match rng {
            Some(rng) => Unet {
                slope,
                stem: Conv2d::init(cin, c, 1, rng),
                enc: (0..depth)
                    .map(|_| (Conv2d::init(c, c, 2, rng), Conv2d::init(c, c, 1, rng)))
                    .collect(),
                dec: (0..depth)
                    .map(|_| (ConvTranspose2::init(c, c, rng), Conv2d::init(2 * c, c, 1, rng)))
                    .collect(),
                head_up: ConvTranspose2::init(c, c, rng),
                head_out: Conv2d::init(c, OUT_CHANNELS, 1, rng),
            },
            None => Unet {
                slope,
                stem: Conv2d::zeros(cin, c, 1),
                enc: (0..depth).map(|_| (Conv2d::zeros(c, c, 2), Conv2d::zeros(c, c, 1))).collect(),
                dec: (0..depth)
                    .map(|_| (ConvTranspose2::zeros(c, c), Conv2d::zeros(2 * c, c, 1)))
                    .collect(),
                head_up: ConvTranspose2::zeros(c, c),
                head_out: Conv2d::zeros(c, OUT_CHANNELS, 1),
            },
        }
    }

    fn forward(&self, x: &Array3<f64>) -> (Array3<f64>, UnetCache) {
        let depth = self.enc.len();
        let (stem_out, stem_cache) = self.stem.forward(x);
        let mut s = Vec::with_capacity(depth + 1);
        let mut s0 = stem_out;
        leaky_relu(&mut s0, self.slope);
        s.push(s0);

        let mut enc_caches = Vec::with_capacity(depth);
        for (down, conv) in &self.enc {
            let (mut t, down_cache) = down.forward(s.last().unwrap());
            leaky_relu(&mut t, self.slope);
            let (mut u, conv_cache) = conv.forward(&t);
            leaky_relu(&mut u, self.slope);
            enc_caches.push((down_cache, t, conv_cache));
            s.push(u);
        }

        let mut h = s[depth].clone();
        let mut dec_caches = Vec::with_capacity(depth);
        for d in (0..depth).rev() {
            let (up, conv) = &self.dec[d];
            let (mut u, up_cache) = up.forward(&h);
            leaky_relu(&mut u, self.slope);
            let cat = layers::concat_channels(&u, &s[d]);
            let (mut out, conv_cache) = conv.forward(&cat);
            leaky_relu(&mut out, self.slope);
            dec_caches.push((up_cache, u, conv_cache, out.clone()));
            h = out;
        }
        dec_caches.reverse(); // index by stage d again

        let (mut head_mid, head_up_cache) = self.head_up.forward(&h);
        leaky_relu(&mut head_mid, self.slope);
        let (y, head_out_cache) = self.head_out.forward(&head_mid);
        let cache = UnetCache {
            stem: stem_cache,
            s,
            enc: enc_caches,
            dec: dec_caches,
            head_up: head_up_cache,
            head_mid,
            head_out: head_out_cache,
        };
        (y, cache)
    }

    /// Accumulates parameter gradients into `grad` (same tree shape) and
    /// returns the gradient with respect to the U-Net input.
    fn backward(&self, cache: &UnetCache, dout: &Array3<f64>, grad: &mut Unet) -> Array3<f64> {
        let depth = self.enc.len();
        let slope = self.slope;
        let mut d_mid = self.head_out.backward(&cache.head_out, dout, &mut grad.head_out);
        leaky_relu_backward(&mut d_mid, &cache.head_mid, slope);
        let mut dh = self.head_up.backward(&cache.head_up, &d_mid, &mut grad.head_up);

        // Skip gradients accumulate here as the decoder is unwound.
        let mut ds: Vec<Array3<f64>> =
            cache.s.iter().map(|t| Array3::zeros(t.dim())).collect();

        for d in 0..depth {
            let (up, conv) = &self.dec[d];
            let (up_cache, u, conv_cache, out) = &cache.dec[d];
            leaky_relu_backward(&mut dh, out, slope);
            let dcat = conv.backward(conv_cache, &dh, &mut grad.dec[d].1);
            let (mut du, dskip) = layers::split_channels(&dcat, u.dim().0);
            ds[d] += &dskip;
            leaky_relu_backward(&mut du, u, slope);
            dh = up.backward(up_cache, &du, &mut grad.dec[d].0);
        }
        ds[depth] += &dh;

        for d in (0..depth).rev() {
            let (down, conv) = &self.enc[d];
            let (down_cache, t, conv_cache) = &cache.enc[d];
            let mut dtop = std::mem::replace(&mut ds[d + 1], Array3::zeros((0, 0, 0)));
            leaky_relu_backward(&mut dtop, &cache.s[d + 1], slope);
            let mut dt = conv.backward(conv_cache, &dtop, &mut grad.enc[d].1);
            leaky_relu_backward(&mut dt, t, slope);
            ds[d] += &down.backward(down_cache, &dt, &mut grad.enc[d].0);
        }

        let mut ds0 = std::mem::replace(&mut ds[0], Array3::zeros((0, 0, 0)));
        leaky_relu_backward(&mut ds0, &cache.s[0], slope);
        self.stem.backward(&cache.stem, &ds0, &mut grad.stem)
    }
}

struct UnetCache {
    stem: ConvCache,
    /// Post-activation stage outputs `s[0..=depth]` (skip sources + bottom).
    s: Vec<Array3<f64>>,
    enc: Vec<(ConvCache, Array3<f64>, ConvCache)>,
    dec: Vec<(ConvTCache, Array3<f64>, ConvCache, Array3<f64>)>,
    head_up: ConvTCache,
    head_mid: Array3<f64>,
    head_out: ConvCache,
}

#[derive(Debug, Clone)]
pub struct Network {
    pub config: NetworkConfig,
    levels: Vec<Unet>,
}

/// Per-level outputs of one window forward pass, coarsest first, each
/// `(9, 2h_l, 2w_l)`, plus what backward needs.
pub struct ForwardPass {
    pub outputs: Vec<Array3<f64>>,
    caches: Vec<UnetCache>,
}

/// Borrowed view of one parameter tensor, for optimizers/checkpoints/audits.
pub enum TensorRef<'a> {
    Mat(&'a Array2<f64>),
    Vec1(&'a Array1<f64>),
}

pub enum TensorMut<'a> {
    Mat(&'a mut Array2<f64>),
    Vec1(&'a mut Array1<f64>),
}

impl TensorRef<'_> {
    pub fn as_slice(&self) -> &[f64] {
        match self {
            TensorRef::Mat(a) => a.as_slice().expect("standard layout"),
            TensorRef::Vec1(a) => a.as_slice().expect("standard layout"),
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        match self {
            TensorRef::Mat(a) => a.shape().to_vec(),
            TensorRef::Vec1(a) => a.shape().to_vec(),
        }
    }
}

impl TensorMut<'_> {
    pub fn as_slice_mut(&mut self) -> &mut [f64] {
        match self {
            TensorMut::Mat(a) => a.as_slice_mut().expect("standard layout"),
            TensorMut::Vec1(a) => a.as_slice_mut().expect("standard layout"),
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        match self {
            TensorMut::Mat(a) => a.shape().to_vec(),
            TensorMut::Vec1(a) => a.shape().to_vec(),
        }
    }
}

impl Network {
    /// Fresh network with Xavier-uniform weights and zero biases,
    /// deterministic per seed.
    pub fn init(config: NetworkConfig, seed: u64) -> Result<Network, NetworkError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let levels = (0..config.levels)
            .map(|l| {
                Unet::build(
                    config.level_in_channels(l),
                    config.base_channels,
                    config.unet_depth,
                    config.activation.slope(),
                    Some(&mut rng),
                )
            })
            .collect();
        Ok(Network { config, levels })
    }

    /// A structurally identical all-zero tree, used for gradients and
    /// optimizer moments.
    pub fn zeros_like(&self) -> Network {
        let levels = (0..self.config.levels)
            .map(|l| {
                Unet::build(
                    self.config.level_in_channels(l),
                    self.config.base_channels,
                    self.config.unet_depth,
                    self.config.activation.slope(),
                    None,
                )
            })
            .collect();
        Network { config: self.config, levels }
    }

    pub fn validate_pyramid(&self, pyramid: &[Array3<f64>]) -> Result<(), NetworkError> {
        if pyramid.len() != self.config.levels {
            return Err(NetworkError::WrongPyramid { want: self.config.levels, got: pyramid.len() });
        }
        let stack_ch = self.config.stack_channels();
        let depth = self.config.unet_depth;
        for (l, level) in pyramid.iter().enumerate() {
            let (c, h, w) = level.dim();
            if c != stack_ch {
                return Err(NetworkError::WrongChannels { level: l, want: stack_ch, got: c });
            }
            let div = 1 << depth;
            if h % div != 0 || w % div != 0 || h == 0 || w == 0 {
                return Err(NetworkError::IndivisibleInput { level: l, h, w, depth });
            }
            if l + 1 < pyramid.len() {
                let (_, nh, nw) = pyramid[l + 1].dim();
                if nh != 2 * h || nw != 2 * w {
                    return Err(NetworkError::BrokenPyramid { level: l });
                }
            }
        }
        Ok(())
    }

    pub fn forward(&self, pyramid: &[Array3<f64>]) -> Result<ForwardPass, NetworkError> {
        self.validate_pyramid(pyramid)?;
        let mut outputs: Vec<Array3<f64>> = Vec::with_capacity(self.levels.len());
        let mut caches = Vec::with_capacity(self.levels.len());
        for (l, unet) in self.levels.iter().enumerate() {
            let input = if l == 0 {
                pyramid[0].clone()
            } else {
                layers::concat_channels(&pyramid[l], &outputs[l - 1])
            };
            let (mut y, cache) = unet.forward(&input);
            if self.config.bicubic_residual {
                y += &residual_base(&pyramid[l])?;
            }
            outputs.push(y);
            caches.push(cache);
        }
        Ok(ForwardPass { outputs, caches })
    }

    /// Backpropagates one gradient per level output, accumulating parameter
    /// gradients into `grads` (a `zeros_like` tree).
    pub fn backward(
        &self,
        pass: &ForwardPass,
        dout: &[Array3<f64>],
        grads: &mut Network,
    ) -> Result<(), NetworkError> {
        if dout.len() != self.levels.len() {
            return Err(NetworkError::WrongGradCount { want: self.levels.len(), got: dout.len() });
        }
        let stack_ch = self.config.stack_channels();
        let mut carry: Option<Array3<f64>> = None;
        for l in (0..self.levels.len()).rev() {
            let mut g = dout[l].clone();
            if let Some(c) = carry.take() {
                g += &c;
            }
            let dinput = self.levels[l].backward(&pass.caches[l], &g, &mut grads.levels[l]);
            if l > 0 {
                carry = Some(dinput.slice(ndarray::s![stack_ch.., .., ..]).to_owned());
            }
        }
        Ok(())
    }

    /// All parameter tensors in a fixed order with stable names.
    pub fn tensors(&self) -> Vec<(String, TensorRef<'_>)> {
        let mut out = Vec::new();
        for (l, u) in self.levels.iter().enumerate() {
            let p = |name: &str| format!("l{l}.{name}");
            out.push((p("stem.w"), TensorRef::Mat(&u.stem.w)));
            out.push((p("stem.b"), TensorRef::Vec1(&u.stem.b)));
            for (d, (down, conv)) in u.enc.iter().enumerate() {
                out.push((p(&format!("enc{d}.down.w")), TensorRef::Mat(&down.w)));
                out.push((p(&format!("enc{d}.down.b")), TensorRef::Vec1(&down.b)));
                out.push((p(&format!("enc{d}.conv.w")), TensorRef::Mat(&conv.w)));
                out.push((p(&format!("enc{d}.conv.b")), TensorRef::Vec1(&conv.b)));
            }
            for (d, (up, conv)) in u.dec.iter().enumerate() {
                out.push((p(&format!("dec{d}.up.w")), TensorRef::Mat(&up.w)));
                out.push((p(&format!("dec{d}.up.b")), TensorRef::Vec1(&up.b)));
                out.push((p(&format!("dec{d}.conv.w")), TensorRef::Mat(&conv.w)));
                out.push((p(&format!("dec{d}.conv.b")), TensorRef::Vec1(&conv.b)));
            }
            out.push((p("head.up.w"), TensorRef::Mat(&u.head_up.w)));
            out.push((p("head.up.b"), TensorRef::Vec1(&u.head_up.b)));
            out.push((p("head.out.w"), TensorRef::Mat(&u.head_out.w)));
            out.push((p("head.out.b"), TensorRef::Vec1(&u.head_out.b)));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, TensorMut<'_>)> {
        let mut out = Vec::new();
        for (l, u) in self.levels.iter_mut().enumerate() {
            let p = |name: &str| format!("l{l}.{name}");
            out.push((p("stem.w"), TensorMut::Mat(&mut u.stem.w)));
            out.push((p("stem.b"), TensorMut::Vec1(&mut u.stem.b)));
            for (d, (down, conv)) in u.enc.iter_mut().enumerate() {
                out.push((p(&format!("enc{d}.down.w")), TensorMut::Mat(&mut down.w)));
                out.push((p(&format!("enc{d}.down.b")), TensorMut::Vec1(&mut down.b)));
                out.push((p(&format!("enc{d}.conv.w")), TensorMut::Mat(&mut conv.w)));
                out.push((p(&format!("enc{d}.conv.b")), TensorMut::Vec1(&mut conv.b)));
            }
            for (d, (up, conv)) in u.dec.iter_mut().enumerate() {
                out.push((p(&format!("dec{d}.up.w")), TensorMut::Mat(&mut up.w)));
                out.push((p(&format!("dec{d}.up.b")), TensorMut::Vec1(&mut up.b)));
                out.push((p(&format!("dec{d}.conv.w")), TensorMut::Mat(&mut conv.w)));
                out.push((p(&format!("dec{d}.conv.b")), TensorMut::Vec1(&mut conv.b)));
            }
            out.push((p("head.up.w"), TensorMut::Mat(&mut u.head_up.w)));
            out.push((p("head.up.b"), TensorMut::Vec1(&mut u.head_up.b)));
            out.push((p("head.out.w"), TensorMut::Mat(&mut u.head_out.w)));
            out.push((p("head.out.b"), TensorMut::Vec1(&mut u.head_out.b)));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.as_slice().len()).sum()
    }
}

/// Bicubic 2x upscaling of the stack's frame channels, arranged as the
/// window's three output frames: midpoint of frames (0,1), frame 1, midpoint
/// of frames (1,2).
fn residual_base(level_input: &Array3<f64>) -> Result<Array3<f64>, NetworkError> {
    let (_, h, w) = level_input.dim();
    let mut base = Array3::zeros((OUT_CHANNELS, 2 * h, 2 * w));
    for (out_frame, combo) in [(0usize, (0usize, Some(1usize))), (1, (1, None)), (2, (1, Some(2)))]
    {
        for c in 0..3 {
            let plane = match combo.1 {
                None => bicubic_resize_plane(
                    level_input.index_axis(ndarray::Axis(0), combo.0 * 3 + c),
                    2.0,
                )?,
                Some(other) => {
                    let mixed = (&level_input.index_axis(ndarray::Axis(0), combo.0 * 3 + c)
                        + &level_input.index_axis(ndarray::Axis(0), other * 3 + c))
                        * 0.5;
                    bicubic_resize_plane(mixed.view(), 2.0)?
                }
            };
            base.index_axis_mut(ndarray::Axis(0), out_frame * 3 + c).assign(&plane);
        }
    }
    Ok(base)
}

/// YUV frame -> channel-major tensor.
pub fn frame_to_chw(frame: &Frame) -> Array3<f64> {
    let (h, w, c) = frame.data.dim();
    let mut out = Array3::zeros((c, h, w));
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                out[(ch, y, x)] = frame.data[(y, x, ch)];
            }
        }
    }
    out
}

/// Channel-major tensor -> YUV frame. Values pass through untouched, so the
/// caller decides whether to clamp.
pub fn chw_to_frame(t: &Array3<f64>) -> Result<Frame, FrameError> {
    let (c, h, w) = t.dim();
    let mut data = Array3::zeros((h, w, c));
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                data[(y, x, ch)] = t[(ch, y, x)];
            }
        }
    }
    Frame::new(data, Colorspace::Yuv)
}

/// Splits a 9-channel window output into its three YUV frames.
pub fn output_to_frames(out: &Array3<f64>) -> Result<[Frame; 3], FrameError> {
    let frames: Vec<Frame> = (0..3)
        .map(|i| chw_to_frame(&out.slice(ndarray::s![3 * i..3 * i + 3, .., ..]).to_owned()))
        .collect::<Result<_, _>>()?;
    Ok(frames.try_into().expect("three frames"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::Rng;

    fn desk_config() -> NetworkConfig {
        NetworkConfig {
            base_channels: 4,
            levels: 3,
            unet_depth: 2,
            stack: StackMode::Full,
            bicubic_residual: false,
            activation: Activation::default(),
        }
    }

    fn rand_stack(c: usize, h: usize, w: usize, seed: u64) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn((c, h, w), |_| rng.gen_range(-0.5..0.5))
    }

    #[test]
    fn pyramid_shapes_and_flow_scaling() {
        let mut stack = rand_stack(29, 16, 16, 1);
        // Constant flow channel: dx = 4 at full resolution.
        stack.index_axis_mut(ndarray::Axis(0), 9).fill(4.0);
        // Constant frame channel.
        stack.index_axis_mut(ndarray::Axis(0), 0).fill(0.25);
        let pyr = build_pyramid(&stack, StackMode::Full, 3).unwrap();
        assert_eq!(pyr[0].dim(), (29, 4, 4));
        assert_eq!(pyr[1].dim(), (29, 8, 8));
        assert_eq!(pyr[2].dim(), (29, 16, 16));
        // Flow values shrink with resolution; frame values do not.
        assert!((pyr[0][(9, 2, 2)] - 1.0).abs() < 1e-9);
        assert!((pyr[1][(9, 2, 2)] - 2.0).abs() < 1e-9);
        assert!((pyr[2][(9, 2, 2)] - 4.0).abs() < 1e-12);
        for l in 0..3 {
            assert!((pyr[l][(0, 1, 1)] - 0.25).abs() < 1e-9, "level {l}");
        }
        // The finest level is the stack itself.
        assert_eq!(pyr[2], stack);

        let single = build_pyramid(&stack, StackMode::Full, 1).unwrap();
        assert_eq!(single.len(), 1);
        assert_eq!(single[0], stack);
    }

    #[test]
    fn forward_shapes_and_determinism() {
        let net = Network::init(desk_config(), 7).unwrap();
        let stack = rand_stack(29, 16, 16, 2);
        let pyr = build_pyramid(&stack, StackMode::Full, 3).unwrap();
        let a = net.forward(&pyr).unwrap();
        assert_eq!(a.outputs[0].dim(), (9, 8, 8));
        assert_eq!(a.outputs[1].dim(), (9, 16, 16));
        assert_eq!(a.outputs[2].dim(), (9, 32, 32));
        let b = net.forward(&pyr).unwrap();
        for (x, y) in a.outputs.iter().zip(b.outputs.iter()) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = Network::init(desk_config(), 11).unwrap();
        let b = Network::init(desk_config(), 11).unwrap();
        let c = Network::init(desk_config(), 12).unwrap();
        let eq = |x: &Network, y: &Network| {
            x.tensors()
                .iter()
                .zip(y.tensors().iter())
                .all(|((_, a), (_, b))| a.as_slice() == b.as_slice())
        };
        assert!(eq(&a, &b));
        assert!(!eq(&a, &c));
    }

    #[test]
    fn every_parameter_receives_gradient() {
        let net = Network::init(desk_config(), 3).unwrap();
        let stack = rand_stack(29, 16, 16, 3);
        let pyr = build_pyramid(&stack, StackMode::Full, 3).unwrap();
        let pass = net.forward(&pyr).unwrap();
        let dout: Vec<Array3<f64>> =
            pass.outputs.iter().map(|o| Array3::from_elem(o.dim(), 1.0)).collect();
        let mut grads = net.zeros_like();
        net.backward(&pass, &dout, &mut grads).unwrap();
        for (name, t) in grads.tensors() {
            assert!(
                t.as_slice().iter().any(|&v| v != 0.0),
                "no gradient reached {name}"
            );
        }
    }

    #[test]
    fn input_validation() {
        let net = Network::init(desk_config(), 0).unwrap();
        let stack = rand_stack(29, 18, 18, 4); // 18/4 is not integral
        assert!(build_pyramid(&stack, StackMode::Full, 2).is_err());
        let bad_pyr = vec![rand_stack(29, 5, 5, 5), rand_stack(29, 10, 10, 6), rand_stack(29, 20, 20, 7)];
        assert!(matches!(
            net.forward(&bad_pyr),
            Err(NetworkError::IndivisibleInput { .. })
        ));
        let wrong_ch = vec![rand_stack(9, 4, 4, 5), rand_stack(9, 8, 8, 6), rand_stack(9, 16, 16, 7)];
        assert!(matches!(net.forward(&wrong_ch), Err(NetworkError::WrongChannels { .. })));
    }

    #[test]
    fn zeroed_residual_network_outputs_the_bicubic_base() {
        let mut cfg = desk_config();
        cfg.bicubic_residual = true;
        let net = Network::init(cfg, 1).unwrap();
        let mut zeroed = net.clone();
        for (_, mut t) in zeroed.tensors_mut() {
            t.as_slice_mut().fill(0.0);
        }
        let stack = rand_stack(29, 16, 16, 9);
        let pyr = build_pyramid(&stack, StackMode::Full, 3).unwrap();
        let pass = zeroed.forward(&pyr).unwrap();
        for (l, out) in pass.outputs.iter().enumerate() {
            let want = residual_base(&pyr[l]).unwrap();
            assert_eq!(out, &want, "level {l}");
        }
    }

    #[test]
    fn network_gradients_match_finite_differences() {
        // End-to-end check on a tiny net: perturb a few parameters spread
        // over all levels and compare to the analytic gradient of a fixed
        // linear functional of all outputs.
        let cfg = NetworkConfig {
            base_channels: 3,
            levels: 3,
            unet_depth: 1,
            stack: StackMode::FramesOnly,
            bicubic_residual: false,
            activation: Activation::default(),
        };
        let net = Network::init(cfg, 5).unwrap();
        let stack = rand_stack(9, 8, 8, 10);
        let pyr = build_pyramid(&stack, StackMode::FramesOnly, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let weights: Vec<Array3<f64>> = [(9, 4, 4), (9, 8, 8), (9, 16, 16)]
            .iter()
            .map(|&d| Array3::from_shape_fn(d, |_| rng.gen_range(-1.0..1.0)))
            .collect();
        let loss = |n: &Network| {
            let p = n.forward(&pyr).unwrap();
            p.outputs.iter().zip(weights.iter()).map(|(o, w)| (o * w).sum()).sum::<f64>()
        };

        let pass = net.forward(&pyr).unwrap();
        let mut grads = net.zeros_like();
        net.backward(&pass, &weights, &mut grads).unwrap();

        let names: Vec<String> = net.tensors().iter().map(|(n, _)| n.clone()).collect();
        let eps = 1e-6;
        for probe in [0usize, 7, 13, 20, 26, 33] {
            let ti = probe % names.len();
            let within = probe * 31 % 7;
            let analytic = grads.tensors()[ti].1.as_slice()[within
                .min(grads.tensors()[ti].1.as_slice().len() - 1)];
            let coord = within.min(net.tensors()[ti].1.as_slice().len() - 1);

            let mut plus = net.clone();
            plus.tensors_mut()[ti].1.as_slice_mut()[coord] += eps;
            let mut minus = net.clone();
            minus.tensors_mut()[ti].1.as_slice_mut()[coord] -= eps;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * eps);
            assert!(
                (fd - analytic).abs() <= 1e-5 * analytic.abs().max(fd.abs()).max(1.0),
                "{}[{coord}]: fd {fd} vs analytic {analytic}",
                names[ti]
            );
        }
    }

    #[test]
    fn frame_tensor_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let frame = Frame::new(
            Array3::from_shape_fn((6, 5, 3), |_| rng.gen_range(0.0..1.0)),
            Colorspace::Yuv,
        )
        .unwrap();
        let chw = frame_to_chw(&frame);
        assert_eq!(chw.dim(), (3, 6, 5));
        let back = chw_to_frame(&chw).unwrap();
        assert_eq!(back.data, frame.data);

        let out = rand_stack(9, 4, 4, 3);
        let frames = output_to_frames(&out).unwrap();
        assert_eq!(frames[2].data[(1, 2, 0)], out[(6, 1, 2)]);
    }
}
