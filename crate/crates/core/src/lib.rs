//! Label-correction toolkit for single-class cell detection.
//!
//! The crate covers every non-neural stage of an iterative self-training
//! pipeline for object detection with noisy and missing labels:
//!
//! - [`geometry`]: box arithmetic and the flip-and-scale view algebra used
//!   by test-time augmentation.
//! - [`metrics`]: greedy matching, AP50/AP75, COCO-averaged AP and AR.
//! - [`fusion`]: weighted boxes fusion of pooled TTA detections and the
//!   pseudo-label replacement step.
//! - [`curvewatch`]: saturating-curve fitting over a training series and
//!   the derivative-deceleration trigger that ends the early phase.
//! - [`imgproc`]: blur, gradients, Canny, Otsu, distance transform,
//!   watershed, connected components, Circle Hough Transform, and the
//!   weak-label pipelines built from them.
//! - [`cloning`]: seamless cloning with mixed gradients onto blurred
//!   backgrounds (synthetic-like training frames).
//! - [`selftrain`]: a deterministic detector simulator with two-phase
//!   learning dynamics driving the full loop end to end.
//! - [`io`]: annotation JSON, binary PGM, run configuration, and a
//!   file-backed detector for piping in real model predictions.

pub mod cloning;
pub mod curvewatch;
pub mod fusion;
pub mod geometry;
pub mod imgproc;
pub mod io;
pub mod metrics;
pub mod selftrain;
