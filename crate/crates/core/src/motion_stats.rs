//! Frame, clip and class level motion statistics.
//!
//! All statistics here use the plain Euclidean magnitude of the field (no
//! bias, no intra zeroing). Class-level reductions weight clips equally and
//! sum in a fixed order so results never depend on thread scheduling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{self, Grid};
use crate::mv_field::{angle, plain_magnitude, MagnitudeField, MotionVectorField};

/// Side of the square grid every field is resized to for spatial statistics.
pub const DEFAULT_GRID: usize = 56;
pub const DEFAULT_ENTROPY_BINS: usize = 64;
pub const DEFAULT_DIRECTION_BINS: usize = 16;
pub const DEFAULT_SEGMENTS: usize = 5;
pub const REGION_LATTICE: usize = 4;

/// Value range the entropy histogram is built over.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy")]
pub enum HistRange {
    /// `(0, max]` of the frame being measured.
    FrameLocal,
    Fixed { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameStats {
    pub sum: f64,
    pub mean: f64,
    pub entropy: f64,
}

/// Bin index of `v` among `k` equal-width bins on `[lo, hi]`; values outside
/// the range clamp into the first/last bin.
#[inline]
pub(crate) fn bin_index(v: f64, lo: f64, hi: f64, k: usize) -> usize {
    let pos = ((v - lo) / (hi - lo) * k as f64).floor();
    if pos.is_nan() || pos < 0.0 {
        0
    } else {
        (pos as usize).min(k - 1)
    }
}

/// Shannon entropy in bits of a count vector, with `0 log 0 = 0`.
pub fn entropy_bits(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    let h = -counts
        .iter()
        .filter(|c| **c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            p * p.log2()
        })
        .sum::<f64>();
    h.max(0.0)
}

pub fn frame_stats(magnitudes: &MagnitudeField, bins: usize, range: HistRange) -> Result<FrameStats> {
    if magnitudes.is_empty() {
        return Err(Error::Empty("magnitude field has no cells".into()));
    }
    if bins == 0 {
        return Err(Error::InvalidArgument("entropy needs at least one bin".into()));
    }
    let values = magnitudes.values();
    let sum = grid::pairwise_sum(values);
    let mean = sum / values.len() as f64;
    let (lo, hi) = match range {
        HistRange::FrameLocal => (0.0, values.iter().copied().fold(0.0, f64::max)),
        HistRange::Fixed { lo, hi } => {
            if !(lo < hi) {
                return Err(Error::InvalidArgument(format!(
                    "histogram range ({lo}, {hi}) is empty"
                )));
            }
            (lo, hi)
        }
    };
    let entropy = if hi > lo {
        let mut counts = vec![0usize; bins];
        for &v in values {
            counts[bin_index(v, lo, hi, bins)] += 1;
        }
        entropy_bits(&counts)
    } else {
        // A motionless frame puts all mass in one bin.
        0.0
    };
    Ok(FrameStats { sum, mean, entropy })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipDescriptor {
    pub clip_id: String,
    pub class_label: String,
    pub frames: Vec<FrameStats>,
    /// Mean of the per-frame mean magnitudes.
    pub mean_magnitude: f64,
    /// Mean of the per-frame entropies.
    pub mean_entropy: f64,
}

impl ClipDescriptor {
    pub fn sums(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.sum).collect()
    }

    pub fn means(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.mean).collect()
    }

    pub fn entropies(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.entropy).collect()
    }
}

pub fn clip_descriptor(
    clip_id: impl Into<String>,
    class_label: impl Into<String>,
    magnitudes: &[MagnitudeField],
    bins: usize,
    range: HistRange,
) -> Result<ClipDescriptor> {
    if magnitudes.is_empty() {
        return Err(Error::Empty("clip has no frames".into()));
    }
    let frames = magnitudes
        .iter()
        .map(|m| frame_stats(m, bins, range))
        .collect::<Result<Vec<_>>>()?;
    ClipDescriptor::from_frames(clip_id, class_label, frames)
}

impl ClipDescriptor {
    /// Descriptor from already computed per-frame statistics.
    pub fn from_frames(
        clip_id: impl Into<String>,
        class_label: impl Into<String>,
        frames: Vec<FrameStats>,
    ) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::Empty("clip has no frames".into()));
        }
        let means: Vec<f64> = frames.iter().map(|f| f.mean).collect();
        let entropies: Vec<f64> = frames.iter().map(|f| f.entropy).collect();
        Ok(ClipDescriptor {
            clip_id: clip_id.into(),
            class_label: class_label.into(),
            mean_magnitude: grid::mean(&means),
            mean_entropy: grid::mean(&entropies),
            frames,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapGrid {
    pub size: usize,
    pub values: Vec<f64>,
    pub normalized: bool,
}

impl HeatmapGrid {
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.size + c]
    }

    /// Min–max rescaling to `[0, 1]`; constant maps become all zeros.
    pub fn normalize(&self) -> HeatmapGrid {
        let min = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let values = if max > min {
            self.values.iter().map(|v| (v - min) / (max - min)).collect()
        } else {
            vec![0.0; self.values.len()]
        };
        HeatmapGrid {
            size: self.size,
            values,
            normalized: true,
        }
    }
}

fn check_clips(clips: &[Vec<MagnitudeField>]) -> Result<()> {
    if clips.is_empty() {
        return Err(Error::Empty("class has no clips".into()));
    }
    if clips.iter().any(|c| c.is_empty()) {
        return Err(Error::Empty("clip has no frames".into()));
    }
    Ok(())
}

/// Elementwise mean of equally shaped grids in the given order.
fn mean_grid(grids: &[Grid<f64>]) -> Grid<f64> {
    let (rows, cols) = grids[0].shape();
    let mut column = vec![0.0; grids.len()];
    Grid::from_fn(rows, cols, |r, c| {
        for (slot, g) in column.iter_mut().zip(grids) {
            *slot = *g.get(r, c);
        }
        grid::mean(&column)
    })
}

/// Time-averaged magnitude map of one clip on a `size`×`size` grid.
pub fn clip_heatmap(frames: &[MagnitudeField], size: usize) -> Result<Grid<f64>> {
    if frames.is_empty() {
        return Err(Error::Empty("clip has no frames".into()));
    }
    let resized = frames
        .iter()
        .map(|m| Ok(m.resized(size, size)?.grid().clone()))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_grid(&resized))
}

/// Class mean of the clip heatmaps, before normalisation.
pub fn class_mean_heatmap(clips: &[Vec<MagnitudeField>], size: usize) -> Result<HeatmapGrid> {
    check_clips(clips)?;
    let per_clip = clips
        .iter()
        .map(|c| clip_heatmap(c, size))
        .collect::<Result<Vec<_>>>()?;
    Ok(HeatmapGrid {
        size,
        values: mean_grid(&per_clip).into_vec(),
        normalized: false,
    })
}

/// Normalised class heatmap on the default 56×56 grid.
pub fn class_heatmap(clips: &[Vec<MagnitudeField>]) -> Result<HeatmapGrid> {
    Ok(class_mean_heatmap(clips, DEFAULT_GRID)?.normalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionalProfile {
    /// Class-mean region magnitudes, row-major 4×4.
    pub means: Vec<f64>,
    /// `means` divided by their total; uniform when there is no motion.
    pub shares: Vec<f64>,
    pub degenerate: bool,
}

/// Region means of one map over the 4×4 lattice. Region `(r, c)` covers rows
/// `⌊r·G/4⌋..⌊(r+1)·G/4⌋` and likewise for columns.
pub fn region_means(map: &Grid<f64>) -> Vec<f64> {
    let bounds = |n: usize| -> Vec<usize> {
        (0..=REGION_LATTICE).map(|k| k * n / REGION_LATTICE).collect()
    };
    let (rb, cb) = (bounds(map.rows()), bounds(map.cols()));
    let mut out = Vec::with_capacity(REGION_LATTICE * REGION_LATTICE);
    for r in 0..REGION_LATTICE {
        for c in 0..REGION_LATTICE {
            let mut cells = Vec::new();
            for y in rb[r]..rb[r + 1] {
                for x in cb[c]..cb[c + 1] {
                    cells.push(*map.get(y, x));
                }
            }
            out.push(if cells.is_empty() { 0.0 } else { grid::mean(&cells) });
        }
    }
    out
}

pub fn regional_profile(clips: &[Vec<MagnitudeField>], size: usize) -> Result<RegionalProfile> {
    check_clips(clips)?;
    if size < REGION_LATTICE {
        return Err(Error::InvalidArgument(format!(
            "grid {size} is smaller than the {REGION_LATTICE}x{REGION_LATTICE} lattice"
        )));
    }
    let n = REGION_LATTICE * REGION_LATTICE;
    let per_clip = clips
        .iter()
        .map(|frames| {
            let per_frame = frames
                .iter()
                .map(|m| Ok(region_means(m.resized(size, size)?.grid())))
                .collect::<Result<Vec<_>>>()?;
            Ok(column_means(&per_frame, n))
        })
        .collect::<Result<Vec<_>>>()?;
    let means = column_means(&per_clip, n);
    let total = grid::pairwise_sum(&means);
    let (shares, degenerate) = if total > 0.0 {
        (means.iter().map(|m| m / total).collect(), false)
    } else {
        (vec![1.0 / n as f64; n], true)
    };
    Ok(RegionalProfile {
        means,
        shares,
        degenerate,
    })
}

fn column_means(rows: &[Vec<f64>], width: usize) -> Vec<f64> {
    (0..width)
        .map(|k| grid::mean(&rows.iter().map(|r| r[k]).collect::<Vec<_>>()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionHistogram {
    pub bins: usize,
    /// `bins + 1` edges from `-π` to `π`; bin `k` is `(edges[k], edges[k+1]]`.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub probabilities: Vec<f64>,
    /// No nonzero vector was seen; probabilities are all zero.
    pub empty: bool,
}

/// Bin of an angle in `(-π, π]` among `bins` half-open-on-the-left bins.
#[inline]
pub fn direction_bin(theta: f64, bins: usize) -> usize {
    let width = std::f64::consts::TAU / bins as f64;
    let pos = ((theta + std::f64::consts::PI) / width).ceil() as isize - 1;
    pos.clamp(0, bins as isize - 1) as usize
}

/// Pooled angular histogram over every cell of every field; zero vectors
/// carry no direction and are skipped.
pub fn direction_histogram<'a>(
    fields: impl IntoIterator<Item = &'a MotionVectorField>,
    bins: usize,
) -> Result<DirectionHistogram> {
    if bins < 2 {
        return Err(Error::InvalidArgument("direction histogram needs >= 2 bins".into()));
    }
    let mut counts = vec![0u64; bins];
    for field in fields {
        for (dx, dy) in field.dx().as_slice().iter().zip(field.dy().as_slice()) {
            if dx.hypot(*dy) == 0.0 {
                continue;
            }
            counts[direction_bin(angle(*dx, *dy), bins)] += 1;
        }
    }
    DirectionHistogram::from_counts(counts)
}

impl DirectionHistogram {
    /// Histogram over `counts.len()` equal sectors of `(-π, π]`.
    pub fn from_counts(counts: Vec<u64>) -> Result<Self> {
        let bins = counts.len();
        if bins < 2 {
            return Err(Error::InvalidArgument("direction histogram needs >= 2 bins".into()));
        }
        let total: u64 = counts.iter().sum();
        let probabilities = if total == 0 {
            vec![0.0; bins]
        } else {
            counts.iter().map(|&c| c as f64 / total as f64).collect()
        };
        let pi = std::f64::consts::PI;
        let edges = (0..=bins)
            .map(|k| -pi + std::f64::consts::TAU * k as f64 / bins as f64)
            .collect();
        Ok(DirectionHistogram {
            bins,
            edges,
            counts,
            probabilities,
            empty: total == 0,
        })
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Some(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    })
}

/// Index of the frame whose energy is closest to the median energy; the
/// earliest index wins ties.
pub fn representative_frame(energies: &[f64]) -> Result<usize> {
    let med = median(energies).ok_or_else(|| Error::Empty("clip has no frames".into()))?;
    let mut best = 0;
    for (t, e) in energies.iter().enumerate() {
        if (e - med).abs() < (energies[best] - med).abs() {
            best = t;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowGlyphGrid {
    pub rows: usize,
    pub cols: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    /// Frame the glyphs were drawn from, when chosen by
    /// [`representative_glyphs`].
    pub frame: Option<usize>,
}

/// Block-averages a field onto a `lattice_rows`×`lattice_cols` lattice and
/// scales every cell by `1 / (max cell norm + eps)`.
pub fn glyph_grid(
    field: &MotionVectorField,
    lattice_rows: usize,
    lattice_cols: usize,
    eps: f64,
) -> Result<FlowGlyphGrid> {
    let (rows, cols) = field.shape();
    if lattice_rows == 0 || lattice_cols == 0 || lattice_rows > rows || lattice_cols > cols {
        return Err(Error::InvalidArgument(format!(
            "lattice {lattice_rows}x{lattice_cols} does not fit a {rows}x{cols} field"
        )));
    }
    let rb: Vec<usize> = (0..=lattice_rows).map(|k| k * rows / lattice_rows).collect();
    let cb: Vec<usize> = (0..=lattice_cols).map(|k| k * cols / lattice_cols).collect();
    let mut u = Vec::with_capacity(lattice_rows * lattice_cols);
    let mut v = Vec::with_capacity(lattice_rows * lattice_cols);
    for r in 0..lattice_rows {
        for c in 0..lattice_cols {
            let (mut xs, mut ys) = (Vec::new(), Vec::new());
            for y in rb[r]..rb[r + 1] {
                for x in cb[c]..cb[c + 1] {
                    let (dx, dy, _) = field.get(y, x);
                    xs.push(dx);
                    ys.push(dy);
                }
            }
            u.push(grid::mean(&xs));
            v.push(grid::mean(&ys));
        }
    }
    let max_norm = u
        .iter()
        .zip(&v)
        .map(|(a, b)| a.hypot(*b))
        .fold(0.0, f64::max);
    let scale = 1.0 / (max_norm + eps);
    Ok(FlowGlyphGrid {
        rows: lattice_rows,
        cols: lattice_cols,
        u: u.into_iter().map(|x| x * scale).collect(),
        v: v.into_iter().map(|x| x * scale).collect(),
        frame: None,
    })
}

/// Glyphs of a clip's typical frame. Fields are resized to `size`×`size`
/// first; frame energy is the mean plain magnitude on that grid.
pub fn representative_glyphs(
    fields: &[MotionVectorField],
    size: usize,
    lattice: usize,
    eps: f64,
) -> Result<FlowGlyphGrid> {
    let resized = fields
        .iter()
        .map(|f| crate::mv_field::resize_bilinear(f, size, size))
        .collect::<Result<Vec<_>>>()?;
    let energies: Vec<f64> = resized
        .iter()
        .map(|f| grid::mean(plain_magnitude(f).values()))
        .collect();
    let t = representative_frame(&energies)?;
    let mut glyphs = glyph_grid(&resized[t], lattice, lattice, eps)?;
    glyphs.frame = Some(t);
    Ok(glyphs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionProfile {
    pub segments: usize,
    pub means: Vec<f64>,
    pub tau: Vec<f64>,
}

/// Segment means of one series; segment `j` spans `⌊jT/n⌋..⌊(j+1)T/n⌋`.
pub fn segment_means(series: &[f64], n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::InvalidArgument("need at least 2 segments".into()));
    }
    let t = series.len();
    if t < n {
        return Err(Error::InvalidArgument(format!(
            "clip has {t} frames, fewer than {n} segments"
        )));
    }
    Ok((0..n)
        .map(|j| grid::mean(&series[j * t / n..(j + 1) * t / n]))
        .collect())
}

/// Class motion-evolution curve from per-clip series of frame mean magnitudes.
pub fn motion_evolution(clips: &[Vec<f64>], n: usize) -> Result<EvolutionProfile> {
    if clips.is_empty() {
        return Err(Error::Empty("class has no clips".into()));
    }
    let per_clip = clips
        .iter()
        .map(|s| segment_means(s, n))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvolutionProfile {
        segments: n,
        means: column_means(&per_clip, n),
        tau: (0..n).map(|j| j as f64 / (n - 1) as f64).collect(),
    })
}

/// Linear resampling of `series` to `target_len` uniformly spaced points.
pub fn temporal_interpolate(series: &[f64], target_len: usize) -> Result<Vec<f64>> {
    if series.len() < 2 || target_len < 2 {
        return Err(Error::InvalidArgument(format!(
            "cannot interpolate {} samples to {target_len}",
            series.len()
        )));
    }
    let last = series.len() - 1;
    Ok((0..target_len)
        .map(|i| {
            if i == target_len - 1 {
                return series[last];
            }
            let pos = i as f64 * last as f64 / (target_len - 1) as f64;
            let k = (pos.floor() as usize).min(last - 1);
            grid::lerp(series[k], series[k + 1], pos - k as f64)
        })
        .collect())
}

/// Pointwise mean of several series after resampling each to `target_len`.
pub fn mean_interpolated_curve(series: &[Vec<f64>], target_len: usize) -> Result<Vec<f64>> {
    if series.is_empty() {
        return Err(Error::Empty("no series to average".into()));
    }
    let resampled = series
        .iter()
        .map(|s| {
            if s.len() == 1 {
                Ok(vec![s[0]; target_len])
            } else {
                temporal_interpolate(s, target_len)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(column_means(&resampled, target_len))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn mag(rows: usize, cols: usize, v: Vec<f64>) -> MagnitudeField {
        MagnitudeField::from_vec(rows, cols, v).unwrap()
    }

    #[test]
    fn frame_stats_examples() {
        let flat = mag(2, 2, vec![3.0; 4]);
        assert_eq!(frame_stats(&flat, 64, HistRange::FrameLocal).unwrap().entropy, 0.0);

        let uniform: Vec<f64> = (0..64).map(|k| (k as f64 + 0.5) / 64.0).collect();
        let s = frame_stats(&mag(8, 8, uniform), 64, HistRange::Fixed { lo: 0.0, hi: 1.0 }).unwrap();
        assert_eq!(s.entropy, 6.0);

        let s = frame_stats(&mag(2, 2, vec![0.0, 0.0, 1.0, 1.0]), 2, HistRange::Fixed { lo: 0.0, hi: 1.0 })
            .unwrap();
        assert_eq!((s.entropy, s.sum, s.mean), (1.0, 2.0, 0.5));

        let zero = mag(3, 3, vec![0.0; 9]);
        let s = frame_stats(&zero, 64, HistRange::FrameLocal).unwrap();
        assert_eq!((s.sum, s.mean, s.entropy), (0.0, 0.0, 0.0));
        assert!(frame_stats(&zero, 4, HistRange::Fixed { lo: 1.0, hi: 1.0 }).is_err());
        assert!(frame_stats(&mag(0, 0, vec![]), 4, HistRange::FrameLocal).is_err());
    }

    #[test]
    fn out_of_range_values_clamp() {
        let m = mag(1, 3, vec![0.0, 5.0, 0.75]);
        let s = frame_stats(&m, 2, HistRange::Fixed { lo: 0.5, hi: 1.0 }).unwrap();
        // bins: {0} -> 0, {5} -> 1, {0.75} -> 1
        let expected = -(1.0 / 3.0f64) * (1.0 / 3.0f64).log2() - (2.0 / 3.0f64) * (2.0 / 3.0f64).log2();
        assert!((s.entropy - expected).abs() < 1e-12);
    }

    #[test]
    fn clip_descriptor_examples() {
        let one = clip_descriptor("a", "c", &[mag(1, 2, vec![1.0, 3.0])], 4, HistRange::FrameLocal).unwrap();
        assert_eq!(one.mean_magnitude, one.frames[0].mean);
        assert_eq!(one.mean_entropy, one.frames[0].entropy);

        let two = clip_descriptor(
            "b",
            "c",
            &[mag(1, 1, vec![1.0]), mag(1, 1, vec![3.0])],
            4,
            HistRange::FrameLocal,
        )
        .unwrap();
        assert_eq!(two.mean_magnitude, 2.0);
        assert_eq!(two.mean_entropy, 0.0);
        assert!(clip_descriptor("x", "c", &[], 4, HistRange::FrameLocal).is_err());
    }

    #[test]
    fn heatmap_examples() {
        let constant = vec![vec![mag(10, 10, vec![2.0; 100])]];
        let h = class_heatmap(&constant).unwrap();
        assert_eq!(h.size, 56);
        assert!(h.values.iter().all(|&v| v == 0.0));

        let mut hot = vec![0.0; 56 * 56];
        hot[17 * 56 + 40] = 3.5;
        let h = class_heatmap(&[vec![mag(56, 56, hot.clone())]]).unwrap();
        for (k, v) in h.values.iter().enumerate() {
            assert_eq!(*v, if k == 17 * 56 + 40 { 1.0 } else { 0.0 });
        }
        let twice = class_heatmap(&[vec![mag(56, 56, hot.clone())], vec![mag(56, 56, hot)]]).unwrap();
        assert_eq!(twice, h);
        assert!(class_heatmap(&[]).is_err());
    }

    #[test]
    fn regional_examples() {
        let uniform = regional_profile(&[vec![mag(56, 56, vec![1.0; 56 * 56])]], 56).unwrap();
        assert!(uniform.shares.iter().all(|&s| (s - 1.0 / 16.0).abs() < 1e-15));
        assert!(!uniform.degenerate);

        let corner = Grid::from_fn(56, 56, |r, c| if r < 14 && c < 14 { 2.0 } else { 0.0 });
        let p = regional_profile(&[vec![MagnitudeField::new(corner).unwrap()]], 56).unwrap();
        assert_eq!(p.shares[0], 1.0);
        assert!(p.shares[1..].iter().all(|&s| s == 0.0));

        let two = Grid::from_fn(56, 56, |r, c| match (r / 14, c / 14) {
            (0, 1) => 1.0,
            (3, 2) => 3.0,
            _ => 0.0,
        });
        let p = regional_profile(&[vec![MagnitudeField::new(two).unwrap()]], 56).unwrap();
        assert_eq!(p.shares[1], 0.25);
        assert_eq!(p.shares[14], 0.75);

        let none = regional_profile(&[vec![mag(8, 8, vec![0.0; 64])]], 56).unwrap();
        assert!(none.degenerate);
        assert_eq!(none.shares, vec![1.0 / 16.0; 16]);
    }

    #[test]
    fn direction_examples() {
        let right = MotionVectorField::uniform(3, 3, 1.0, 0.0, 1).unwrap();
        let h = direction_histogram([&right], 16).unwrap();
        assert_eq!(h.probabilities[direction_bin(0.0, 16)], 1.0);
        assert_eq!(direction_bin(0.0, 16), 7);

        let left = MotionVectorField::uniform(3, 3, -1.0, 0.0, 1).unwrap();
        let h = direction_histogram([&right, &left], 16).unwrap();
        assert_eq!(h.probabilities[7], 0.5);
        assert_eq!(h.probabilities[15], 0.5);
        assert_eq!(h.edges[0], -PI);
        assert_eq!(h.edges[16], PI);

        let still = MotionVectorField::uniform(3, 3, 0.0, 0.0, 1).unwrap();
        let h = direction_histogram([&still], 16).unwrap();
        assert!(h.empty);
        assert!(direction_histogram([&still], 1).is_err());
    }

    #[test]
    fn representative_frame_examples() {
        assert_eq!(representative_frame(&[1.0, 5.0, 9.0]).unwrap(), 1);
        assert_eq!(representative_frame(&[1.0, 1.0, 1.0]).unwrap(), 0);
        assert_eq!(representative_frame(&[0.0, 10.0]).unwrap(), 0);
        assert_eq!(representative_frame(&[9.0, 1.0, 5.0, 7.0]).unwrap(), 2);
        assert!(representative_frame(&[]).is_err());
    }

    #[test]
    fn glyph_examples() {
        let f = MotionVectorField::uniform(12, 12, 3.0, 4.0, 1).unwrap();
        let g = glyph_grid(&f, 3, 4, 1e-9).unwrap();
        let k = 5.0 / (5.0 + 1e-9);
        for (u, v) in g.u.iter().zip(&g.v) {
            assert!((u - 0.6 * k).abs() < 1e-12 && (v - 0.8 * k).abs() < 1e-12);
        }

        let zero = MotionVectorField::uniform(4, 4, 0.0, 0.0, 0).unwrap();
        let g = glyph_grid(&zero, 2, 2, 1e-9).unwrap();
        assert!(g.u.iter().chain(&g.v).all(|&x| x == 0.0));

        let mut single = MotionVectorField::intra(4, 4, 1);
        single.set(3, 0, -2.0, 0.0, 1).unwrap();
        let g = glyph_grid(&single, 4, 4, 1e-9).unwrap();
        assert!((g.u[12].hypot(g.v[12]) - 1.0).abs() < 1e-9);
        assert_eq!(g.u.iter().filter(|&&x| x != 0.0).count(), 1);
        assert!(glyph_grid(&single, 5, 4, 1e-9).is_err());
    }

    #[test]
    fn representative_glyphs_pick_median_frame() {
        let fields: Vec<_> = [1.0, 9.0, 4.0]
            .iter()
            .map(|&m| MotionVectorField::uniform(4, 4, m, 0.0, 1).unwrap())
            .collect();
        let g = representative_glyphs(&fields, 8, 2, 1e-9).unwrap();
        assert_eq!(g.frame, Some(2));
    }

    #[test]
    fn evolution_examples() {
        let ramp: Vec<f64> = (0..10).map(|t| t as f64).collect();
        let e = motion_evolution(&[ramp.clone()], 5).unwrap();
        assert_eq!(e.means, vec![0.5, 2.5, 4.5, 6.5, 8.5]);
        assert_eq!(e.tau, vec![0.0, 0.25, 0.5, 0.75, 1.0]);

        let flat = motion_evolution(&[vec![2.0; 7]], 5).unwrap();
        assert!(flat.means.iter().all(|&m| m == 2.0));

        let mut rev = ramp.clone();
        rev.reverse();
        let r = motion_evolution(&[rev], 5).unwrap();
        let mut back = r.means.clone();
        back.reverse();
        assert_eq!(back, e.means);

        assert!(motion_evolution(&[vec![1.0; 4]], 5).is_err());
        assert!(motion_evolution(&[ramp], 1).is_err());
    }

    #[test]
    fn interpolate_examples() {
        assert_eq!(temporal_interpolate(&[0.0, 1.0], 3).unwrap(), vec![0.0, 0.5, 1.0]);
        let s = vec![0.3, -1.0, 7.25, 2.0];
        assert_eq!(temporal_interpolate(&s, 4).unwrap(), s);
        assert_eq!(
            temporal_interpolate(&[0.0, 2.0, 4.0], 5).unwrap(),
            vec![0.0, 1.0, 2.0, 3.0, 4.0]
        );
        assert!(temporal_interpolate(&[1.0], 3).is_err());
        assert!(temporal_interpolate(&[1.0, 2.0], 1).is_err());
    }

    fn arb_field() -> impl Strategy<Value = MagnitudeField> {
        (1usize..9, 1usize..9).prop_flat_map(|(r, c)| {
            proptest::collection::vec(0.0f64..100.0, r * c)
                .prop_map(move |v| MagnitudeField::from_vec(r, c, v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn entropy_bounds_and_sum_identity(m in arb_field(), k in 1usize..80) {
            let s = frame_stats(&m, k, HistRange::FrameLocal).unwrap();
            prop_assert!(s.entropy >= 0.0 && s.entropy <= (k as f64).log2() + 1e-12);
            let n = m.len() as f64;
            prop_assert!((s.sum - s.mean * n).abs() <= 1e-9 * s.sum.abs().max(1.0));
        }

        #[test]
        fn shares_sum_to_one_and_scale_free(m in arb_field(), scale in 0.01f64..100.0) {
            let p = regional_profile(&[vec![m.clone()]], 56).unwrap();
            prop_assert!((p.shares.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let q = regional_profile(&[vec![m.scaled(scale).unwrap()]], 56).unwrap();
            for (a, b) in p.shares.iter().zip(&q.shares) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn interpolation_keeps_endpoints_and_monotonicity(
            mut s in proptest::collection::vec(-50.0f64..50.0, 2..20),
            len in 2usize..40,
        ) {
            s.sort_by(f64::total_cmp);
            let out = temporal_interpolate(&s, len).unwrap();
            prop_assert_eq!(out[0], s[0]);
            prop_assert_eq!(out[len - 1], s[s.len() - 1]);
            prop_assert!(out.windows(2).all(|w| w[0] <= w[1]));
        }

        #[test]
        fn direction_probabilities_sum_to_one(
            cells in proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..50),
            bins in 2usize..40,
        ) {
            let n = cells.len();
            let f = MotionVectorField::new(
                Grid::from_vec(1, n, cells.iter().map(|c| c.0).collect()).unwrap(),
                Grid::from_vec(1, n, cells.iter().map(|c| c.1).collect()).unwrap(),
                Grid::filled(1, n, 1),
                1,
            ).unwrap();
            let h = direction_histogram([&f], bins).unwrap();
            if !h.empty {
                prop_assert!((h.probabilities.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }
    }
}
