//! Frame and artifact I/O: 8-bit PNG and raw planar YUV on the outside,
//! float YUV frames on the inside, plus the provenance files every command
//! writes (config echo, SHA-256 input inventory, JSON artifacts).

use crate::{usage, CliResult};
use fisr_core::frames::{rgb_from_yuv, yuv_from_rgb, Colorspace, Frame};
use ndarray::Array3;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

/// Quantizes a [0, 1] value to 8 bits, round-half-up.
fn q8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn frame_to_rgb8(frame: &Frame) -> CliResult<image::RgbImage> {
    let rgb = match frame.colorspace {
        Colorspace::Rgb => frame.clone(),
        Colorspace::Yuv => rgb_from_yuv(frame)?,
    };
    let (h, w, _) = rgb.data.dim();
    let mut img = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = image::Rgb([
                q8(rgb.data[(y, x, 0)]),
                q8(rgb.data[(y, x, 1)]),
                q8(rgb.data[(y, x, 2)]),
            ]);
            img.put_pixel(x as u32, y as u32, px);
        }
    }
    Ok(img)
}

pub fn rgb8_to_frame(img: &image::RgbImage) -> CliResult<Frame> {
    let (w, h) = img.dimensions();
    let mut data = Array3::zeros((h as usize, w as usize, 3));
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            data[(y as usize, x as usize, c)] = px.0[c] as f64 / 255.0;
        }
    }
    Ok(yuv_from_rgb(&Frame::new(data, Colorspace::Rgb)?)?)
}

pub fn write_frame_png(frame: &Frame, path: &Path) -> CliResult<()> {
    Ok(frame_to_rgb8(frame)?.save(path)?)
}

pub fn read_frame_png(path: &Path) -> CliResult<Frame> {
    let img = image::open(path)?.into_rgb8();
    rgb8_to_frame(&img)
}

/// Reads every `*.png` in `dir`, sorted by file name.
pub fn read_frame_dir(dir: &Path) -> CliResult<Vec<Frame>> {
    if !dir.is_dir() {
        return Err(usage(format!("input directory not found: {}", dir.display())));
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "png"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(usage(format!("no PNG frames in {}", dir.display())));
    }
    paths.iter().map(|p| read_frame_png(p)).collect()
}

/// Reads raw planar 4:4:4 YUV, 8 bits per component, frame-major
/// (Y plane, U plane, V plane per frame). Luma maps to [0, 1], chroma to
/// [-0.5, 0.5] with 128 as zero.
pub fn read_raw_yuv(path: &Path, width: usize, height: usize) -> CliResult<Vec<Frame>> {
    if !path.is_file() {
        return Err(usage(format!("input file not found: {}", path.display())));
    }
    if width == 0 || height == 0 {
        return Err(usage("raw dimensions must be positive"));
    }
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let plane = width * height;
    if bytes.is_empty() || bytes.len() % (3 * plane) != 0 {
        return Err(usage(format!(
            "{} holds {} bytes, not a multiple of 3 x {width} x {height}",
            path.display(),
            bytes.len()
        )));
    }
    let mut frames = Vec::with_capacity(bytes.len() / (3 * plane));
    for chunk in bytes.chunks_exact(3 * plane) {
        let mut data = Array3::zeros((height, width, 3));
        for y in 0..height {
            for x in 0..width {
                let i = y * width + x;
                data[(y, x, 0)] = chunk[i] as f64 / 255.0;
                data[(y, x, 1)] = (chunk[plane + i] as f64 - 128.0) / 255.0;
                data[(y, x, 2)] = (chunk[2 * plane + i] as f64 - 128.0) / 255.0;
            }
        }
        frames.push(Frame::new(data, Colorspace::Yuv)?);
    }
    Ok(frames)
}

/// Creates `path` if needed and refuses to reuse a non-empty directory
/// without `force`.
pub fn prepare_out_dir(path: &Path, force: bool) -> CliResult<()> {
    if path.is_file() {
        return Err(usage(format!("{} exists and is a file", path.display())));
    }
    if path.is_dir() && path.read_dir()?.next().is_some() && !force {
        return Err(usage(format!(
            "output directory {} is not empty; pass --force to overwrite",
            path.display()
        )));
    }
    fs::create_dir_all(path)?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    format!("{:x}", h.finalize())
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// Writes `inputs.sha256`: one `<hex>  <label>` line per input, in the
/// given order.
pub fn write_input_hashes(out_dir: &Path, inputs: &[(&str, &Path)]) -> CliResult<()> {
    let mut text = String::new();
    for (label, path) in inputs {
        text.push_str(&format!("{}  {label}\n", sha256_file(path)?));
    }
    fs::write(out_dir.join("inputs.sha256"), text)?;
    Ok(())
}

/// Byte-identical copy of the config file the command was invoked with.
pub fn echo_config(out_dir: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(out_dir.join("config.toml"), bytes)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    if !path.is_file() {
        return Err(usage(format!("file not found: {}", path.display())));
    }
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

/// Line-delimited JSON writer for metric streams.
pub struct JsonlWriter {
    out: BufWriter<File>,
}

impl JsonlWriter {
    pub fn create(path: &Path) -> CliResult<JsonlWriter> {
        Ok(JsonlWriter { out: BufWriter::new(File::create(path)?) })
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> CliResult<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn finish(mut self) -> CliResult<()> {
        self.out.flush()?;
        Ok(())
    }
}
