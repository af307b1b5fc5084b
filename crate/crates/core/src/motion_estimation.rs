//! Exhaustive block-matching motion estimation.
//!
//! Frames are partitioned into `M`×`M` blocks (edge blocks are padded by
//! replicating the last row/column). For each block the integer displacement
//! in `[-S, S]²` minimising SAD against the reference frame is selected. A
//! vector `(dx, dy)` means the block at `(x, y)` in the current frame is
//! predicted by the reference block at `(x + dx, y + dy)`.
//!
//! Ties are resolved by the smallest `|dx| + |dy|`, then the smallest `dy`,
//! then the smallest `dx`. Candidates are visited in exactly that order, so
//! the first minimum found is the answer and partial sums may stop early.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::media_io::FrameSequence;
use crate::mv_field::MotionVectorField;

/// A single 8-bit luma plane.
pub type LumaPlane = Grid<u8>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub block_size: usize,
    pub search_radius: usize,
    pub reference_offset: i64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            block_size: 16,
            search_radius: 16,
            reference_offset: -1,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.block_size == 0 {
            return Err(Error::InvalidArgument("block size must be >= 1".into()));
        }
        if self.reference_offset == 0 {
            return Err(Error::InvalidArgument(
                "reference offset must be nonzero for inter estimation".into(),
            ));
        }
        Ok(())
    }

    /// Temporal sign of every vector estimated with this configuration.
    pub fn t_sign(&self) -> i8 {
        self.reference_offset.signum() as i8
    }

    /// All displacements of the search window in tie-break order.
    pub fn candidates(&self) -> Vec<(i32, i32)> {
        let s = self.search_radius as i32;
        let mut out: Vec<(i32, i32)> = (-s..=s)
            .flat_map(|dy| (-s..=s).map(move |dx| (dx, dy)))
            .collect();
        out.sort_by_key(|&(dx, dy)| (dx.abs() + dy.abs(), dy, dx));
        out
    }
}

/// Residual of one block: current samples minus motion-compensated samples.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockResidual {
    pub block_i: usize,
    pub block_j: usize,
    pub size: usize,
    pub values: Vec<i16>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockMatch {
    pub dx: i32,
    pub dy: i32,
    pub cost: u64,
}

/// Block grid of an `height`×`width` frame: `(⌈H/M⌉, ⌈W/M⌉)`.
pub fn partition_dims(height: usize, width: usize, block_size: usize) -> (usize, usize) {
    (height.div_ceil(block_size), width.div_ceil(block_size))
}

/// Sum of absolute differences between equally sized planes.
pub fn sad(block_a: &LumaPlane, block_b: &LumaPlane) -> Result<u64> {
    if block_a.shape() != block_b.shape() {
        return Err(Error::DimensionMismatch(format!(
            "SAD of {:?} and {:?} blocks",
            block_a.shape(),
            block_b.shape()
        )));
    }
    Ok(block_a
        .as_slice()
        .iter()
        .zip(block_b.as_slice())
        .map(|(a, b)| a.abs_diff(*b) as u64)
        .sum())
}

/// The `M`×`M` block at `(block_i, block_j)` displaced by `(dx, dy)`, with
/// out-of-frame samples replicated from the nearest edge.
pub fn extract_block(
    plane: &LumaPlane,
    block_i: usize,
    block_j: usize,
    block_size: usize,
    dx: i32,
    dy: i32,
) -> LumaPlane {
    let y0 = (block_i * block_size) as isize + dy as isize;
    let x0 = (block_j * block_size) as isize + dx as isize;
    Grid::from_fn(block_size, block_size, |r, c| {
        plane.clamped(y0 + r as isize, x0 + c as isize)
    })
}

fn check_grid(plane: &LumaPlane, block_i: usize, block_j: usize, m: usize) -> Result<()> {
    let (rows, cols) = partition_dims(plane.rows(), plane.cols(), m);
    if block_i >= rows || block_j >= cols {
        return Err(Error::BlockOutOfGrid {
            block_i,
            block_j,
            rows,
            cols,
        });
    }
    Ok(())
}

fn check_frames(current: &LumaPlane, reference: &LumaPlane) -> Result<()> {
    if current.shape() != reference.shape() {
        return Err(Error::DimensionMismatch(format!(
            "current {:?} vs reference {:?}",
            current.shape(),
            reference.shape()
        )));
    }
    if current.is_empty() {
        return Err(Error::Empty("empty frame".into()));
    }
    Ok(())
}

/// Full-search match of one block.
pub fn estimate_block(
    current: &LumaPlane,
    reference: &LumaPlane,
    block_i: usize,
    block_j: usize,
    config: &SearchConfig,
) -> Result<BlockMatch> {
    config.validate()?;
    check_frames(current, reference)?;
    check_grid(current, block_i, block_j, config.block_size)?;
    let padded = PaddedReference::new(reference, config);
    let candidates = config.candidates();
    Ok(search_block(current, &padded, block_i, block_j, config.block_size, &candidates))
}

/// Reference plane surrounded by an edge-replicated apron wide enough that
/// every candidate block is a plain in-bounds slice.
struct PaddedReference {
    data: Vec<u8>,
    stride: usize,
    pad: usize,
}

impl PaddedReference {
    fn new(reference: &LumaPlane, config: &SearchConfig) -> Self {
        // Covers the search radius plus the overhang of partial edge blocks.
        let pad = config.search_radius + config.block_size;
        let (h, w) = reference.shape();
        let stride = w + 2 * pad;
        let mut data = Vec::with_capacity(stride * (h + 2 * pad));
        for y in 0..h + 2 * pad {
            let sy = y as isize - pad as isize;
            for x in 0..stride {
                data.push(reference.clamped(sy, x as isize - pad as isize));
            }
        }
        PaddedReference { data, stride, pad }
    }

    #[inline]
    fn row(&self, y: isize, x: isize, len: usize) -> &[u8] {
        let start = (y + self.pad as isize) as usize * self.stride + (x + self.pad as isize) as usize;
        &self.data[start..start + len]
    }
}

fn search_block(
    current: &LumaPlane,
    reference: &PaddedReference,
    block_i: usize,
    block_j: usize,
    m: usize,
    candidates: &[(i32, i32)],
) -> BlockMatch {
    let block = extract_block(current, block_i, block_j, m, 0, 0);
    let (y0, x0) = ((block_i * m) as isize, (block_j * m) as isize);
    let mut best = BlockMatch {
        dx: 0,
        dy: 0,
        cost: u64::MAX,
    };
    for &(dx, dy) in candidates {
        let mut cost = 0u64;
        for r in 0..m {
            let cur = &block.as_slice()[r * m..(r + 1) * m];
            let refr = reference.row(y0 + r as isize + dy as isize, x0 + dx as isize, m);
            cost += cur
                .iter()
                .zip(refr)
                .map(|(a, b)| a.abs_diff(*b) as u32)
                .sum::<u32>() as u64;
            if cost >= best.cost {
                break;
            }
        }
        if cost < best.cost {
            best = BlockMatch { dx, dy, cost };
            if cost == 0 {
                break;
            }
        }
    }
    best
}

/// Motion field of `current` against `reference`; every vector carries
/// `t_sign = sign(reference_offset)`.
pub fn estimate_field(
    current: &LumaPlane,
    reference: &LumaPlane,
    config: &SearchConfig,
) -> Result<MotionVectorField> {
    config.validate()?;
    check_frames(current, reference)?;
    let m = config.block_size;
    let (rows, cols) = partition_dims(current.rows(), current.cols(), m);
    let padded = PaddedReference::new(reference, config);
    let candidates = config.candidates();
    let matches: Vec<BlockMatch> = (0..rows * cols)
        .into_par_iter()
        .map(|k| search_block(current, &padded, k / cols, k % cols, m, &candidates))
        .collect();
    let t = config.t_sign();
    MotionVectorField::new(
        Grid::from_vec(rows, cols, matches.iter().map(|b| b.dx as f64).collect())?,
        Grid::from_vec(rows, cols, matches.iter().map(|b| b.dy as f64).collect())?,
        Grid::filled(rows, cols, t),
        m,
    )
}

/// One field per frame. Frame `t` is matched against frame `t + k`; frames
/// whose reference falls outside the sequence get an all-intra field.
pub fn estimate_sequence(
    frames: &FrameSequence,
    config: &SearchConfig,
) -> Result<Vec<MotionVectorField>> {
    config.validate()?;
    let planes: Vec<LumaPlane> = frames.frames().par_iter().map(|f| f.luma()).collect();
    let (rows, cols) = partition_dims(frames.height(), frames.width(), config.block_size);
    (0..planes.len())
        .into_par_iter()
        .map(|t| {
            let r = t as i64 + config.reference_offset;
            if r < 0 || r >= planes.len() as i64 {
                Ok(MotionVectorField::intra(rows, cols, config.block_size))
            } else {
                estimate_field(&planes[t], &planes[r as usize], config)
            }
        })
        .collect()
}

fn integer_vector(field: &MotionVectorField, i: usize, j: usize) -> Result<(i32, i32)> {
    let (dx, dy, _) = field.get(i, j);
    if dx.fract() != 0.0 || dy.fract() != 0.0 {
        return Err(Error::InvalidArgument(format!(
            "block ({i}, {j}) has non-integer vector ({dx}, {dy})"
        )));
    }
    Ok((dx as i32, dy as i32))
}

/// Per-block residuals `current − displaced reference`.
pub fn residuals(
    current: &LumaPlane,
    reference: &LumaPlane,
    field: &MotionVectorField,
    config: &SearchConfig,
) -> Result<Vec<BlockResidual>> {
    check_frames(current, reference)?;
    let m = config.block_size;
    let dims = partition_dims(current.rows(), current.cols(), m);
    if field.shape() != dims {
        return Err(Error::DimensionMismatch(format!(
            "field grid {:?} vs frame partition {dims:?}",
            field.shape()
        )));
    }
    let mut out = Vec::with_capacity(dims.0 * dims.1);
    for i in 0..dims.0 {
        for j in 0..dims.1 {
            let (dx, dy) = integer_vector(field, i, j)?;
            let cur = extract_block(current, i, j, m, 0, 0);
            let pred = extract_block(reference, i, j, m, dx, dy);
            let values = cur
                .as_slice()
                .iter()
                .zip(pred.as_slice())
                .map(|(a, b)| *a as i16 - *b as i16)
                .collect();
            out.push(BlockResidual {
                block_i: i,
                block_j: j,
                size: m,
                values,
            });
        }
    }
    Ok(out)
}

/// Adds a residual back onto its motion-compensated prediction.
pub fn reconstruct_block(
    reference: &LumaPlane,
    field: &MotionVectorField,
    residual: &BlockResidual,
) -> Result<LumaPlane> {
    let (dx, dy) = integer_vector(field, residual.block_i, residual.block_j)?;
    let pred = extract_block(reference, residual.block_i, residual.block_j, residual.size, dx, dy);
    let values = pred
        .as_slice()
        .iter()
        .zip(&residual.values)
        .map(|(p, r)| {
            u8::try_from(*p as i16 + r)
                .map_err(|_| Error::Invariant("reconstructed sample outside 0..=255".into()))
        })
        .collect::<Result<Vec<u8>>>()?;
    Grid::from_vec(residual.size, residual.size, values)
}
