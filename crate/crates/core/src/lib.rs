//! Motion-vector analysis for judging the temporal realism of video.
//!
//! The crate estimates block motion vectors from raw frames (or reads them
//! from CSV sidecars), turns them into per-frame, per-clip and per-class
//! motion statistics, compares real and generated corpora with KL, JS and
//! Wasserstein-1 divergences, and implements the masking, density and routing
//! arithmetic of motion-aware fusion.
//!
//! Modules, bottom-up:
//!
//! - [`media_io`]: frames (Y4M / raw planar), MV sidecars, corpus manifests
//! - [`motion_estimation`]: exhaustive SAD block matching and residuals
//! - [`mv_field`]: field resizing, magnitudes, masks, morphology, fusion tensor
//! - [`motion_stats`]: entropies, clip descriptors, heatmaps, profiles
//! - [`divergence`]: histograms, KL, JS, W1, normalised comparison matrix
//! - [`maf_policy`]: directional masks, density calibration, routing, gating
//! - [`report`]: the `estimate`, `stats`, `compare` and `calibrate` pipelines

pub mod divergence;
pub mod error;
pub mod grid;
pub mod maf_policy;
pub mod media_io;
pub mod motion_estimation;
pub mod motion_stats;
pub mod mv_field;
pub mod report;

pub use error::{Error, Result};
pub use grid::Grid;
