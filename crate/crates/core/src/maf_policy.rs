//! Numeric policy of motion-aware fusion: directional masks, motion density,
//! density-threshold calibration, three-way routing and spatial gating.
//!
//! The learned parts of a fusion network (feature encoders, the gate network
//! and the mid/high fusion heads) are supplied by the caller; this module only
//! performs the arithmetic around them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{self, Grid};
use crate::mv_field::{
    local_average_blend, magnitude, morphological_open, BinaryMask, MotionVectorField,
};

pub const DEFAULT_Q_MV: f64 = 0.75;
pub const DEFAULT_EPSILON: f64 = 1e-4;
pub const DEFAULT_ALPHA_LOW: f64 = 0.25;
pub const DEFAULT_ALPHA_HIGH: f64 = 0.75;
pub const OPENING_RADIUS: usize = 1;
pub const BLEND_RADIUS: usize = 1;

/// Nearest-rank empirical quantile: the `⌈αN⌉`-th smallest value (1-based).
///
/// `αN` within `1e-9` of an integer is treated as that integer so products
/// such as `0.7 × 10` do not round up a rank.
pub fn nearest_rank_quantile(values: &[f64], alpha: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("quantile of an empty sample".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("quantile level {alpha} not in (0, 1)")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let raw = alpha * n as f64;
    let rank = if (raw - raw.round()).abs() < 1e-9 {
        raw.round()
    } else {
        raw.ceil()
    } as usize;
    Ok(sorted[rank.clamp(1, n) - 1])
}

/// 2×2 block average; a trailing odd row/column averages what it has.
pub fn downsample2(values: &Grid<f64>) -> Grid<f64> {
    let (rows, cols) = values.shape();
    Grid::from_fn(rows.div_ceil(2), cols.div_ceil(2), |r, c| {
        let mut cell = Vec::with_capacity(4);
        for y in 2 * r..(2 * r + 2).min(rows) {
            for x in 2 * c..(2 * c + 2).min(cols) {
                cell.push(*values.get(y, x));
            }
        }
        if cell.len() == 4 {
            ((cell[0] + cell[1]) + (cell[2] + cell[3])) / 4.0
        } else {
            grid::mean(&cell)
        }
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectionalMasks {
    pub backward: BinaryMask,
    pub forward: BinaryMask,
    /// `backward ∨ forward`, before opening.
    pub raw: BinaryMask,
    /// The opened mask `P`.
    pub mask: BinaryMask,
}

/// Per-direction quantile masks, their union and its opening.
pub fn directional_masks_detailed(field: &MotionVectorField, q_mv: f64) -> Result<DirectionalMasks> {
    if !(q_mv > 0.0 && q_mv < 1.0) {
        return Err(Error::InvalidArgument(format!("q_mv {q_mv} not in (0, 1)")));
    }
    let m = magnitude(field);
    let signs = field.t_sign();
    let direction_mask = |s: i8| -> Result<BinaryMask> {
        let ms = Grid::from_fn(m.shape().0, m.shape().1, |r, c| {
            if *signs.get(r, c) == s {
                *m.grid().get(r, c)
            } else {
                0.0
            }
        });
        let q = nearest_rank_quantile(downsample2(&ms).as_slice(), q_mv)?;
        BinaryMask::new(Grid::from_fn(ms.rows(), ms.cols(), |r, c| {
            u8::from(*ms.get(r, c) >= q && *signs.get(r, c) == s)
        }))
    };
    let backward = direction_mask(-1)?;
    let forward = direction_mask(1)?;
    let raw = backward.or(&forward)?;
    let mask = morphological_open(&raw, OPENING_RADIUS);
    Ok(DirectionalMasks {
        backward,
        forward,
        raw,
        mask,
    })
}

/// The opened motion mask `P` of one field.
pub fn directional_masks(field: &MotionVectorField, q_mv: f64) -> Result<BinaryMask> {
    Ok(directional_masks_detailed(field, q_mv)?.mask)
}

/// Fraction of active cells.
pub fn mask_density(mask: &BinaryMask) -> Result<f64> {
    let (rows, cols) = mask.shape();
    if rows * cols == 0 {
        return Err(Error::Empty("density of an empty mask".into()));
    }
    Ok(mask.count_ones() as f64 / (rows * cols) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoutingThresholds {
    /// Detector threshold of the magnitude mask, when densities came from one.
    pub tau: Option<f64>,
    pub alpha_low: f64,
    pub alpha_high: f64,
    pub epsilon: f64,
    pub p_low: f64,
    pub p_high: f64,
}

impl RoutingThresholds {
    /// Thresholds with fixed cut points, e.g. ones reported elsewhere.
    pub fn fixed(p_low: f64, p_high: f64) -> Result<Self> {
        if !(p_low <= p_high) {
            return Err(Error::InvalidArgument(format!(
                "p_low {p_low} exceeds p_high {p_high}"
            )));
        }
        Ok(RoutingThresholds {
            tau: None,
            alpha_low: DEFAULT_ALPHA_LOW,
            alpha_high: DEFAULT_ALPHA_HIGH,
            epsilon: DEFAULT_EPSILON,
            p_low,
            p_high,
        })
    }
}

/// `p_low = max(Q(α_low), ε)`, `p_high = Q(α_high)` with nearest-rank `Q`.
pub fn calibrate_thresholds(
    densities: &[f64],
    alpha_low: f64,
    alpha_high: f64,
    epsilon: f64,
) -> Result<RoutingThresholds> {
    if densities.is_empty() {
        return Err(Error::Empty("no densities to calibrate on".into()));
    }
    if !(0.0 < alpha_low && alpha_low < alpha_high && alpha_high < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "need 0 < alpha_low < alpha_high < 1, got {alpha_low}, {alpha_high}"
        )));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be > 0, got {epsilon}")));
    }
    let p_low = nearest_rank_quantile(densities, alpha_low)?.max(epsilon);
    let p_high = nearest_rank_quantile(densities, alpha_high)?;
    Ok(RoutingThresholds {
        tau: None,
        alpha_low,
        alpha_high,
        epsilon,
        p_low,
        p_high,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    /// Appearance only.
    Low,
    /// Light fusion.
    Mid,
    /// Heavy fusion.
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RouteDecision {
    pub route: Route,
    pub density: f64,
}

pub fn route(density: f64, thresholds: &RoutingThresholds) -> RouteDecision {
    let route = if density < thresholds.p_low {
        Route::Low
    } else if density <= thresholds.p_high {
        Route::Mid
    } else {
        Route::High
    };
    RouteDecision { route, density }
}

/// Fractions of `densities` sent to (low, mid, high).
///
/// A populated route absorbs rounding so that `(low + mid) + high`
/// evaluates to exactly `1.0`.
pub fn route_fractions(densities: &[f64], thresholds: &RoutingThresholds) -> Result<[f64; 3]> {
    if densities.is_empty() {
        return Err(Error::Empty("no densities to route".into()));
    }
    let mut counts = [0usize; 3];
    for &d in densities {
        counts[route(d, thresholds).route as usize] += 1;
    }
    let n = densities.len() as f64;
    let base = counts.map(|c| c as f64 / n);
    let total = |f: &[f64; 3]| (f[0] + f[1]) + f[2];
    // Let a populated route absorb the rounding, largest first, searching a
    // few ulps around its remainder value.
    let mut order: Vec<usize> = (0..3).filter(|&k| counts[k] > 0).collect();
    order.sort_by_key(|&k| (std::cmp::Reverse(counts[k]), k));
    for big in order {
        let mut fr = base;
        let others: f64 = (0..3).filter(|&k| k != big).map(|k| fr[k]).sum();
        fr[big] = 1.0 - others;
        let (mut up, mut down) = (fr[big], fr[big]);
        for _ in 0..64 {
            for cand in [up, down] {
                let mut trial = fr;
                trial[big] = cand.max(0.0);
                if total(&trial) == 1.0 {
                    return Ok(trial);
                }
            }
            up = up.next_up();
            down = down.next_down();
        }
    }
    Ok(base)
}

/// Channel-major feature stack `C × H × W`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::DimensionMismatch(format!(
                "{} values for {channels}x{height}x{width} features",
                data.len()
            )));
        }
        Ok(FeatureMap {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, ch: usize, y: usize, x: usize) -> f64 {
        self.data[(ch * self.height + y) * self.width + x]
    }

    /// Channel concatenation with `self` first.
    pub fn concat(&self, other: &FeatureMap) -> Result<FeatureMap> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::DimensionMismatch(format!(
                "features {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        FeatureMap::new(self.channels + other.channels, self.height, self.width, data)
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `σ(scalar) ⊙ P↑` where `P↑` is the mask resized to the feature grid by
/// nearest neighbour.
pub fn gate_map(gate_scalar_map: &Grid<f64>, mask: &BinaryMask) -> Result<Grid<f64>> {
    let (h, w) = gate_scalar_map.shape();
    let up = if mask.shape() == (h, w) {
        mask.clone()
    } else {
        mask.resized_nearest(h, w)?
    };
    Ok(Grid::from_fn(h, w, |y, x| {
        sigmoid(*gate_scalar_map.get(y, x)) * f64::from(*up.grid().get(y, x))
    }))
}

/// Multiplies every channel of `mv_features` by the gate.
pub fn apply_gate(
    mv_features: &FeatureMap,
    gate_scalar_map: &Grid<f64>,
    mask: &BinaryMask,
) -> Result<FeatureMap> {
    if gate_scalar_map.shape() != (mv_features.height, mv_features.width) {
        return Err(Error::DimensionMismatch(format!(
            "gate {:?} vs features {}x{}",
            gate_scalar_map.shape(),
            mv_features.height,
            mv_features.width
        )));
    }
    let gate = gate_map(gate_scalar_map, mask)?;
    let plane = mv_features.height * mv_features.width;
    let data = mv_features
        .data
        .iter()
        .enumerate()
        .map(|(k, v)| v * gate.as_slice()[k % plane])
        .collect();
    FeatureMap::new(mv_features.channels, mv_features.height, mv_features.width, data)
}

/// Local-average blend of a field under the fusion mask.
pub fn blend_field(field: &MotionVectorField, mask: &BinaryMask) -> Result<MotionVectorField> {
    local_average_blend(field, mask, BLEND_RADIUS)
}

/// Route one frame: appearance features pass through on the low route;
/// otherwise `[appearance, gated motion]` goes to `fuse_mid` or `fuse_high`.
pub fn fuse_by_route(
    decision: RouteDecision,
    appearance: &FeatureMap,
    gated_motion: &FeatureMap,
    fuse_mid: impl FnOnce(&FeatureMap) -> FeatureMap,
    fuse_high: impl FnOnce(&FeatureMap) -> FeatureMap,
) -> Result<FeatureMap> {
    match decision.route {
        Route::Low => Ok(appearance.clone()),
        Route::Mid => Ok(fuse_mid(&appearance.concat(gated_motion)?)),
        Route::High => Ok(fuse_high(&appearance.concat(gated_motion)?)),
    }
}
