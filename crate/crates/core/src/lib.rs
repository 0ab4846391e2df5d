//! Core library for joint video frame interpolation and 2x super-resolution.
//!
//! A sliding window of three low-resolution, low-frame-rate frames is mapped to
//! three high-resolution frames: two temporally interpolated frames halfway
//! between the inputs and one super-resolved frame at the window center. The
//! crates here provide the data model (frames, windows, timestamps), optical
//! flow and warping, the multi-window temporal loss, a multi-scale U-Net with
//! hand-written backprop, a deterministic trainer, and a synthetic video
//! generator with oracle motion.
//!
//! Everything is `f64`. All randomness flows from explicit seeds through
//! ChaCha8; identical seeds give bitwise-identical results.

pub mod baseline;
pub mod flowwarp;
pub mod frames;
pub mod loss;
pub mod network;
pub mod synthdata;
pub mod trainer;
pub mod windowing;
