//! Config file loading. All documents are TOML with unknown keys rejected;
//! loaders return the raw bytes alongside the parsed value so commands can
//! echo the file verbatim into their output directory.

use crate::{usage, CliResult};
use fisr_core::flowwarp::StackMode;
use fisr_core::loss::TermMask;
use fisr_core::synthdata::{desk_scenes, SceneSpec};
use fisr_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Dataset description for `gen`: sampling parameters plus scenes, either
/// from the bundled desk generator, listed explicitly, or both (desk scenes
/// first).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    /// Square crop (full-resolution pixels) cut per training sample.
    pub patch: usize,
    /// Scene frames between consecutive sample windows.
    pub frame_stride: usize,
    /// Seed for crop placement.
    pub seed: u64,
    #[serde(default)]
    pub desk: Option<DeskBlock>,
    #[serde(default, rename = "scene")]
    pub scenes: Vec<SceneSpec>,
}

/// Shortcut for a varied scene mix from the desk generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeskBlock {
    pub count: usize,
    pub frame_count: usize,
    pub seed: u64,
    #[serde(default)]
    pub height: Option<usize>,
    #[serde(default)]
    pub width: Option<usize>,
}

impl GenConfig {
    pub fn scene_specs(&self) -> Vec<SceneSpec> {
        let mut out = Vec::new();
        if let Some(d) = &self.desk {
            let mut scenes = desk_scenes(d.count, d.frame_count, d.seed);
            for s in &mut scenes {
                if let Some(h) = d.height {
                    s.height = h;
                }
                if let Some(w) = d.width {
                    s.width = w;
                }
            }
            out.extend(scenes);
        }
        out.extend(self.scenes.iter().cloned());
        out
    }
}

fn read_config_bytes(path: &Path) -> CliResult<Vec<u8>> {
    if !path.is_file() {
        return Err(usage(format!("config file not found: {}", path.display())));
    }
    Ok(std::fs::read(path)?)
}

fn parse_toml<T: serde::de::DeserializeOwned>(bytes: &[u8], path: &Path) -> CliResult<T> {
    let text = std::str::from_utf8(bytes)
        .map_err(|_| usage(format!("{} is not UTF-8", path.display())))?;
    toml::from_str(text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

pub fn load_gen_config(path: &Path) -> CliResult<(GenConfig, Vec<u8>)> {
    let bytes = read_config_bytes(path)?;
    let cfg = parse_toml(&bytes, path)?;
    Ok((cfg, bytes))
}

pub fn load_train_config(path: &Path) -> CliResult<(TrainConfig, Vec<u8>)> {
    let bytes = read_config_bytes(path)?;
    let cfg: TrainConfig = parse_toml(&bytes, path)?;
    cfg.validate().map_err(|e| usage(format!("{}: {e}", path.display())))?;
    Ok((cfg, bytes))
}

/// Flag overrides applied on top of a train config.
#[derive(Debug, Clone, Default)]
pub struct TrainOverrides {
    pub seed: Option<u64>,
    pub mask: Option<char>,
    pub no_flow_stack: bool,
}

pub fn apply_overrides(cfg: &mut TrainConfig, ov: &TrainOverrides) -> CliResult<()> {
    if let Some(s) = ov.seed {
        cfg.seed = s;
    }
    if let Some(c) = ov.mask {
        cfg.mask = TermMask::ladder(c)
            .ok_or_else(|| usage(format!("unknown mask column '{c}', expected a-f")))?;
    }
    if ov.no_flow_stack {
        cfg.network.stack = StackMode::FramesOnly;
    }
    Ok(())
}

pub fn check_device(device: &str) -> CliResult<()> {
    if device == "cpu" {
        Ok(())
    } else {
        Err(usage(format!("unknown device '{device}', only \"cpu\" is available")))
    }
}
