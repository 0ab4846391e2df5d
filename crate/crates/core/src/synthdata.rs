//! Deterministic synthetic video with known motion.
//!
//! Scenes are periodic textured canvases translated by per-layer motion
//! (constant velocity plus optional sinusoidal wobble), rendered by bilinear
//! lookup at continuous coordinates. For single-layer scenes the true flow
//! between any two frames is the integrated displacement, available exactly
//! through [`SceneOracle`]; multi-layer sprite scenes have no uniform flow
//! and the oracle refuses them.
//!
//! Time bookkeeping: a training sample built from scene frames
//! `start..start+9` places frame `start + i` at half-step time `i - 4`, so
//! one half-step equals one scene frame.

use crate::flowwarp::{FlowError, FlowOracle};
use crate::frames::{Colorspace, Frame};
use crate::windowing::{
    build_training_sample, CropRect, CropSpec, TimeIndex, TrainingSample, WindowError,
};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("frame_count must be at least 9, got {0}")]
    TooFewFrames(usize),
    #[error("canvas must be at least 16x16, got {h}x{w}")]
    CanvasTooSmall { h: usize, w: usize },
    #[error("scene needs at least one motion layer")]
    NoLayers,
    #[error("{kind} scenes need exactly one motion layer, got {got}")]
    OneLayerKind { kind: &'static str, got: usize },
    #[error("sprite scenes need at least two motion layers")]
    SpritesNeedLayers,
    #[error("layer {layer} peak speed {speed:.2} px/frame exceeds max_disp {max:.2}")]
    TooFast { layer: usize, speed: f64, max: f64 },
    #[error("bad texture parameters: {0}")]
    BadTexture(&'static str),
    #[error("scene motion is not a single uniform layer")]
    NonUniformMotion,
    #[error("patch must be even and nonzero, got {0}")]
    OddPatch(usize),
    #[error("patch {patch} exceeds canvas {h}x{w}")]
    PatchTooLarge { patch: usize, h: usize, w: usize },
    #[error("frame_stride must be nonzero")]
    ZeroStride,
    #[error("manifest references scene {0}, but only {1} scenes are listed")]
    BadSceneRef(usize, usize),
    #[error(transparent)]
    Window(#[from] WindowError),
}

/// Sinusoidal velocity modulation: displacement gains
/// `amp * sin(tau * freq * frame + phase)` per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Wobble {
    pub amp: (f64, f64),
    pub freq: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionLayer {
    /// Pixels per frame, (vx, vy).
    pub velocity: (f64, f64),
    #[serde(default)]
    pub wobble: Option<Wobble>,
}

impl MotionLayer {
    /// Integrated displacement of this layer's content at frame time `t`,
    /// relative to the texture's rest position.
    pub fn displacement(&self, t: f64) -> (f64, f64) {
        let (mut dx, mut dy) = (self.velocity.0 * t, self.velocity.1 * t);
        if let Some(w) = self.wobble {
            let s = (std::f64::consts::TAU * w.freq * t + w.phase).sin();
            dx += w.amp.0 * s;
            dy += w.amp.1 * s;
        }
        (dx, dy)
    }

    /// Displacement accumulated between two frame times, computed as
    /// velocity * (t1 - t0) plus the wobble difference. For pure linear
    /// motion this is exact, free of the cancellation a difference of two
    /// large absolute displacements would carry.
    pub fn flow_between(&self, t0: f64, t1: f64) -> (f64, f64) {
        let dt = t1 - t0;
        let (mut dx, mut dy) = (self.velocity.0 * dt, self.velocity.1 * dt);
        if let Some(w) = self.wobble {
            let s1 = (std::f64::consts::TAU * w.freq * t1 + w.phase).sin();
            let s0 = (std::f64::consts::TAU * w.freq * t0 + w.phase).sin();
            dx += w.amp.0 * (s1 - s0);
            dy += w.amp.1 * (s1 - s0);
        }
        (dx, dy)
    }

    /// Upper bound on per-frame displacement along either axis.
    fn peak_speed(&self) -> f64 {
        let wob = self.wobble.map_or(0.0, |w| {
            w.amp.0.abs().max(w.amp.1.abs()) * std::f64::consts::TAU * w.freq.abs()
        });
        self.velocity.0.abs().max(self.velocity.1.abs()) + wob
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TextureKind {
    /// Two-tone squares with per-cell luma jitter.
    Checker { cell: usize },
    /// Band-limited value noise, `octaves` layers of halving cell size.
    SmoothNoise { octaves: usize },
    /// Checker and noise blended, so the texture has energy at several
    /// frequencies and super-resolution is not trivially interpolation.
    Mix { cell: usize, octaves: usize },
    /// Noise background plus independently moving textured discs; one
    /// sprite group per motion layer after the first.
    Sprites { per_layer: usize },
}

fn default_max_disp() -> f64 {
    6.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub texture: TextureKind,
    pub motion: Vec<MotionLayer>,
    pub frame_count: usize,
    #[serde(default = "default_max_disp")]
    pub max_disp: f64,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.frame_count < 9 {
            return Err(SynthError::TooFewFrames(self.frame_count));
        }
        if self.height < 16 || self.width < 16 {
            return Err(SynthError::CanvasTooSmall { h: self.height, w: self.width });
        }
        if self.motion.is_empty() {
            return Err(SynthError::NoLayers);
        }
        match self.texture {
            TextureKind::Checker { cell } | TextureKind::Mix { cell, .. } if cell < 2 => {
                return Err(SynthError::BadTexture("cell must be at least 2"));
            }
            TextureKind::SmoothNoise { octaves } | TextureKind::Mix { octaves, .. }
                if octaves == 0 =>
            {
                return Err(SynthError::BadTexture("octaves must be at least 1"));
            }
            TextureKind::Sprites { per_layer } if per_layer == 0 => {
                return Err(SynthError::BadTexture("per_layer must be at least 1"));
            }
            _ => {}
        }
        match self.texture {
            TextureKind::Sprites { .. } => {
                if self.motion.len() < 2 {
                    return Err(SynthError::SpritesNeedLayers);
                }
            }
            TextureKind::Checker { .. } => {
                if self.motion.len() != 1 {
                    return Err(SynthError::OneLayerKind {
                        kind: "checker",
                        got: self.motion.len(),
                    });
                }
            }
            TextureKind::SmoothNoise { .. } => {
                if self.motion.len() != 1 {
                    return Err(SynthError::OneLayerKind { kind: "noise", got: self.motion.len() });
                }
            }
            TextureKind::Mix { .. } => {
                if self.motion.len() != 1 {
                    return Err(SynthError::OneLayerKind { kind: "mix", got: self.motion.len() });
                }
            }
        }
        for (i, layer) in self.motion.iter().enumerate() {
            let speed = layer.peak_speed();
            if speed > self.max_disp {
                return Err(SynthError::TooFast { layer: i, speed, max: self.max_disp });
            }
        }
        Ok(())
    }
}

/// Bilinear lookup with periodic wrap, so textures tile seamlessly under
/// arbitrary translation.
fn sample_wrap(canvas: &Array2<f64>, y: f64, x: f64) -> f64 {
    let (h, w) = canvas.dim();
    let yf = y.floor();
    let xf = x.floor();
    let fy = y - yf;
    let fx = x - xf;
    let wrap = |v: i64, n: usize| v.rem_euclid(n as i64) as usize;
    let y0 = wrap(yf as i64, h);
    let y1 = wrap(yf as i64 + 1, h);
    let x0 = wrap(xf as i64, w);
    let x1 = wrap(xf as i64 + 1, w);
    canvas[(y0, x0)] * (1.0 - fy) * (1.0 - fx)
        + canvas[(y0, x1)] * (1.0 - fy) * fx
        + canvas[(y1, x0)] * fy * (1.0 - fx)
        + canvas[(y1, x1)] * fy * fx
}

fn checker_canvas(h: usize, w: usize, cell: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let cells_y = h.div_ceil(cell);
    let cells_x = w.div_ceil(cell);
    let jitter =
        Array2::from_shape_fn((cells_y, cells_x), |_| rng.gen_range(-0.08..0.08));
    Array2::from_shape_fn((h, w), |(y, x)| {
        let (cy, cx) = (y / cell, x / cell);
        let base = if (cy + cx) % 2 == 0 { 0.82 } else { 0.18 };
        base + jitter[(cy, cx)]
    })
}

/// Value noise in [0, 1]: octaves of a random coarse grid, bilinearly
/// upsampled, with halving cell size and amplitude.
fn noise_canvas(
    h: usize,
    w: usize,
    base_cell: usize,
    octaves: usize,
    rng: &mut ChaCha8Rng,
) -> Array2<f64> {
    let mut out = Array2::zeros((h, w));
    let mut cell = base_cell.max(2);
    let mut amp = 1.0;
    let mut total = 0.0;
    for _ in 0..octaves {
        let gh = h.div_ceil(cell).max(1);
        let gw = w.div_ceil(cell).max(1);
        let grid = Array2::from_shape_fn((gh, gw), |_| rng.gen_range(0.0..1.0));
        for y in 0..h {
            for x in 0..w {
                out[(y, x)] +=
                    amp * sample_wrap(&grid, y as f64 / cell as f64, x as f64 / cell as f64);
            }
        }
        total += amp;
        amp *= 0.5;
        cell = (cell / 2).max(2);
    }
    out / total
}

struct Sprite {
    center: (f64, f64),
    radius: f64,
    luma: (f64, f64),
    cell: f64,
    tint: (f64, f64),
}

const SPRITE_FEATHER: f64 = 1.5;

impl Sprite {
    fn random(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Sprite {
        Sprite {
            center: (rng.gen_range(0.0..h as f64), rng.gen_range(0.0..w as f64)),
            radius: rng.gen_range(5.0..10.0),
            luma: (rng.gen_range(0.6..0.95), rng.gen_range(0.05..0.4)),
            cell: rng.gen_range(2.5..4.5),
            tint: (rng.gen_range(-0.15..0.15), rng.gen_range(-0.15..0.15)),
        }
    }

    /// Opacity at distance `d` from the center: solid core, cosine falloff
    /// over the feather band.
    fn alpha(&self, d: f64) -> f64 {
        if d <= self.radius - SPRITE_FEATHER {
            1.0
        } else if d >= self.radius {
            0.0
        } else {
            let t = (self.radius - d) / SPRITE_FEATHER;
            0.5 - 0.5 * (std::f64::consts::PI * t).cos()
        }
    }

    /// Internal pattern: a checker in sprite-local coordinates.
    fn luma_at(&self, ly: f64, lx: f64) -> f64 {
        let cy = (ly / self.cell).floor() as i64;
        let cx = (lx / self.cell).floor() as i64;
        if (cy + cx).rem_euclid(2) == 0 {
            self.luma.0
        } else {
            self.luma.1
        }
    }
}

pub struct Scene {
    pub spec: SceneSpec,
    pub frames: Vec<Frame>,
}

/// Renders all frames of a scene. Deterministic per spec (including seed).
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene, SynthError> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let y_canvas = match spec.texture {
        TextureKind::Checker { cell } => checker_canvas(h, w, cell, &mut rng),
        TextureKind::SmoothNoise { octaves } => {
            noise_canvas(h, w, 16, octaves, &mut rng) * 0.9 + 0.05
        }
        TextureKind::Mix { cell, octaves } => {
            let c = checker_canvas(h, w, cell, &mut rng);
            let n = noise_canvas(h, w, 16, octaves, &mut rng);
            c * 0.55 + n * 0.45
        }
        TextureKind::Sprites { .. } => noise_canvas(h, w, 16, 3, &mut rng) * 0.5 + 0.15,
    };
    let u_canvas = (noise_canvas(h, w, 32, 2, &mut rng) - 0.5) * 0.2;
    let v_canvas = (noise_canvas(h, w, 32, 2, &mut rng) - 0.5) * 0.2;

    let sprite_layers: Vec<Vec<Sprite>> = match spec.texture {
        TextureKind::Sprites { per_layer } => (1..spec.motion.len())
            .map(|_| (0..per_layer).map(|_| Sprite::random(h, w, &mut rng)).collect())
            .collect(),
        _ => Vec::new(),
    };

    let mut frames = Vec::with_capacity(spec.frame_count);
    for t in 0..spec.frame_count {
        let (dx, dy) = spec.motion[0].displacement(t as f64);
        let mut data = Array3::zeros((h, w, 3));
        for y in 0..h {
            for x in 0..w {
                let (sy, sx) = (y as f64 - dy, x as f64 - dx);
                data[(y, x, 0)] = sample_wrap(&y_canvas, sy, sx);
                data[(y, x, 1)] = sample_wrap(&u_canvas, sy, sx);
                data[(y, x, 2)] = sample_wrap(&v_canvas, sy, sx);
            }
        }
        for (li, sprites) in sprite_layers.iter().enumerate() {
            let (ldx, ldy) = spec.motion[li + 1].displacement(t as f64);
            for sprite in sprites {
                let cy = sprite.center.0 + ldy;
                let cx = sprite.center.1 + ldx;
                let reach = (sprite.radius + 1.0).ceil() as i64;
                let (icy, icx) = (cy.round() as i64, cx.round() as i64);
                for oy in -reach..=reach {
                    for ox in -reach..=reach {
                        let py = (icy + oy).rem_euclid(h as i64) as usize;
                        let px = (icx + ox).rem_euclid(w as i64) as usize;
                        let ly = (icy + oy) as f64 - cy;
                        let lx = (icx + ox) as f64 - cx;
                        let a = sprite.alpha((ly * ly + lx * lx).sqrt());
                        if a > 0.0 {
                            let s = sprite.luma_at(ly + sprite.radius, lx + sprite.radius);
                            data[(py, px, 0)] += a * (s - data[(py, px, 0)]);
                            data[(py, px, 1)] += a * (sprite.tint.0 - data[(py, px, 1)]);
                            data[(py, px, 2)] += a * (sprite.tint.1 - data[(py, px, 2)]);
                        }
                    }
                }
            }
        }
        frames.push(Frame::new(data, Colorspace::Yuv).expect("rendered frame is valid"));
    }
    Ok(Scene { spec: spec.clone(), frames })
}

impl Scene {
    /// Exact content displacement between two frame indices, in canvas
    /// pixels. Only defined when the scene moves as one layer.
    pub fn flow_between(&self, from_frame: f64, to_frame: f64) -> Result<(f64, f64), SynthError> {
        if self.spec.motion.len() != 1 {
            return Err(SynthError::NonUniformMotion);
        }
        Ok(self.spec.motion[0].flow_between(from_frame, to_frame))
    }

    /// Flow oracle for a training sample cut from this scene at
    /// `start_frame`, answering in frames scaled by `spatial_scale`
    /// (0.5 for the half-resolution inputs).
    pub fn sample_oracle(
        &self,
        start_frame: usize,
        spatial_scale: f64,
    ) -> Result<SceneOracle, SynthError> {
        SceneOracle::from_spec(&self.spec, start_frame, spatial_scale)
    }
}

/// Answers sample-relative flow queries from a scene's motion model.
#[derive(Debug, Clone)]
pub struct SceneOracle {
    motion: MotionLayer,
    start_frame: f64,
    spatial_scale: f64,
}

impl SceneOracle {
    pub fn from_spec(
        spec: &SceneSpec,
        start_frame: usize,
        spatial_scale: f64,
    ) -> Result<SceneOracle, SynthError> {
        if spec.motion.len() != 1 {
            return Err(SynthError::NonUniformMotion);
        }
        Ok(SceneOracle {
            motion: spec.motion[0],
            start_frame: start_frame as f64,
            spatial_scale,
        })
    }

    fn scene_time(&self, t: TimeIndex) -> f64 {
        self.start_frame + (t.0 + 4) as f64
    }
}

impl FlowOracle for SceneOracle {
    fn flow_data(
        &self,
        from: TimeIndex,
        to: TimeIndex,
        h: usize,
        w: usize,
    ) -> Result<Array3<f64>, FlowError> {
        let (dx, dy) =
            self.motion.flow_between(self.scene_time(from), self.scene_time(to));
        let mut data = Array3::zeros((h, w, 2));
        data.index_axis_mut(ndarray::Axis(2), 0).fill(dx * self.spatial_scale);
        data.index_axis_mut(ndarray::Axis(2), 1).fill(dy * self.spatial_scale);
        Ok(data)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: usize,
    pub scene: usize,
    pub start_frame: usize,
    pub crop: CropRect,
}

/// Everything needed to rebuild the dataset bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub patch: usize,
    pub frame_stride: usize,
    pub seed: u64,
    pub scenes: Vec<SceneSpec>,
    pub samples: Vec<SampleRecord>,
}

pub struct Dataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<TrainingSample>,
}

fn validate_dataset_args(
    specs: &[SceneSpec],
    patch: usize,
    frame_stride: usize,
) -> Result<(), SynthError> {
    if patch == 0 || patch % 2 != 0 {
        return Err(SynthError::OddPatch(patch));
    }
    if frame_stride == 0 {
        return Err(SynthError::ZeroStride);
    }
    for spec in specs {
        spec.validate()?;
        if patch > spec.height || patch > spec.width {
            return Err(SynthError::PatchTooLarge {
                patch,
                h: spec.height,
                w: spec.width,
            });
        }
    }
    Ok(())
}

/// Cuts 9-frame windows out of every scene, advancing by `frame_stride`,
/// with one seeded random `patch`x`patch` crop per window. Scene frames are
/// generated one scene at a time and dropped once their samples are cut.
pub fn build_dataset(
    specs: &[SceneSpec],
    patch: usize,
    frame_stride: usize,
    seed: u64,
) -> Result<Dataset, SynthError> {
    validate_dataset_args(specs, patch, frame_stride)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    let mut samples = Vec::new();
    for (scene_id, spec) in specs.iter().enumerate() {
        let scene = generate_scene(spec)?;
        let mut start = 0;
        while start + 9 <= spec.frame_count {
            let crop = CropRect {
                x: rng.gen_range(0..=spec.width - patch),
                y: rng.gen_range(0..=spec.height - patch),
                width: patch,
                height: patch,
            };
            samples.push(build_training_sample(
                &scene.frames[start..start + 9],
                CropSpec::Rect(crop),
                0,
            )?);
            records.push(SampleRecord {
                sample_id: records.len(),
                scene: scene_id,
                start_frame: start,
                crop,
            });
            start += frame_stride;
        }
    }
    let manifest = DatasetManifest {
        patch,
        frame_stride,
        seed,
        scenes: specs.to_vec(),
        samples: records,
    };
    Ok(Dataset { manifest, samples })
}

/// Rebuilds the exact samples a manifest describes, without fresh
/// randomness: crops come from the recorded rectangles.
pub fn materialize(manifest: &DatasetManifest) -> Result<Vec<TrainingSample>, SynthError> {
    let mut samples = Vec::with_capacity(manifest.samples.len());
    let mut current: Option<(usize, Scene)> = None;
    for record in &manifest.samples {
        if record.scene >= manifest.scenes.len() {
            return Err(SynthError::BadSceneRef(record.scene, manifest.scenes.len()));
        }
        if current.as_ref().map(|(id, _)| *id) != Some(record.scene) {
            current = Some((record.scene, generate_scene(&manifest.scenes[record.scene])?));
        }
        let scene = &current.as_ref().unwrap().1;
        samples.push(build_training_sample(
            &scene.frames[record.start_frame..record.start_frame + 9],
            CropSpec::Rect(record.crop),
            0,
        )?);
    }
    Ok(samples)
}

/// A varied deterministic scene list for the reference desk dataset:
/// 128x128 canvases cycling through the texture kinds, speeds up to the
/// 6 px/frame budget, every third scene with sinusoidal wobble so motion is
/// not globally linear.
pub fn desk_scenes(count: usize, frame_count: usize, seed: u64) -> Vec<SceneSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let texture = match i % 4 {
                0 => TextureKind::Mix { cell: 8 + 4 * (i % 3), octaves: 3 },
                1 => TextureKind::Checker { cell: 6 + 2 * (i % 4) },
                2 => TextureKind::SmoothNoise { octaves: 4 },
                _ => TextureKind::Sprites { per_layer: 4 },
            };
            let mut layer = |fast: bool| {
                let cap = if fast { 4.2 } else { 2.2 };
                MotionLayer {
                    velocity: (rng.gen_range(-cap..cap), rng.gen_range(-cap..cap)),
                    wobble: (i % 3 == 1).then(|| Wobble {
                        amp: (rng.gen_range(0.4..1.4), rng.gen_range(0.4..1.4)),
                        freq: rng.gen_range(0.05..0.12),
                        phase: rng.gen_range(0.0..std::f64::consts::TAU),
                    }),
                }
            };
            let motion = match texture {
                TextureKind::Sprites { .. } => vec![layer(false), layer(true)],
                _ => vec![layer(true)],
            };
            SceneSpec {
                height: 128,
                width: 128,
                texture,
                motion,
                frame_count,
                max_disp: 6.0,
                seed: seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(i as u64),
            }
        })
        .collect()
}
