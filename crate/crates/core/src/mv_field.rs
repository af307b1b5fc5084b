//! Motion-vector field algebra.
//!
//! A [`MotionVectorField`] stores one `(dx, dy, t_sign)` triple per cell. Cells
//! are either codec/estimator blocks (`source_block_size > 1`) or pixels. The
//! functions here derive magnitude and direction maps, binary masks and their
//! morphology, local-average blending and the six-channel fusion tensor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{self, Grid};
use crate::media_io::{Frame, FrameSequence};

/// Additive bias under the square root of the fusion-path magnitude.
pub const MAGNITUDE_BIAS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionVectorField {
    dx: Grid<f64>,
    dy: Grid<f64>,
    t_sign: Grid<i8>,
    source_block_size: usize,
}

impl MotionVectorField {
    pub fn new(
        dx: Grid<f64>,
        dy: Grid<f64>,
        t_sign: Grid<i8>,
        source_block_size: usize,
    ) -> Result<Self> {
        if dx.shape() != dy.shape() || dx.shape() != t_sign.shape() {
            return Err(Error::DimensionMismatch(format!(
                "dx {:?}, dy {:?}, t_sign {:?}",
                dx.shape(),
                dy.shape(),
                t_sign.shape()
            )));
        }
        if let Some(bad) = t_sign.as_slice().iter().find(|t| !(-1..=1).contains(*t)) {
            return Err(Error::InvalidArgument(format!("t_sign value {bad}")));
        }
        if source_block_size == 0 {
            return Err(Error::InvalidArgument("source_block_size must be >= 1".into()));
        }
        Ok(MotionVectorField {
            dx,
            dy,
            t_sign,
            source_block_size,
        })
    }

    /// An all-intra field: zero displacement and `t_sign = 0` everywhere.
    pub fn intra(rows: usize, cols: usize, source_block_size: usize) -> Self {
        MotionVectorField {
            dx: Grid::filled(rows, cols, 0.0),
            dy: Grid::filled(rows, cols, 0.0),
            t_sign: Grid::filled(rows, cols, 0),
            source_block_size: source_block_size.max(1),
        }
    }

    /// A field with the same vector and sign in every cell.
    pub fn uniform(rows: usize, cols: usize, dx: f64, dy: f64, t_sign: i8) -> Result<Self> {
        Self::new(
            Grid::filled(rows, cols, dx),
            Grid::filled(rows, cols, dy),
            Grid::filled(rows, cols, t_sign),
            1,
        )
    }

    pub fn rows(&self) -> usize {
        self.dx.rows()
    }

    pub fn cols(&self) -> usize {
        self.dx.cols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.dx.shape()
    }

    pub fn source_block_size(&self) -> usize {
        self.source_block_size
    }

    pub fn dx(&self) -> &Grid<f64> {
        &self.dx
    }

    pub fn dy(&self) -> &Grid<f64> {
        &self.dy
    }

    pub fn t_sign(&self) -> &Grid<i8> {
        &self.t_sign
    }

    pub fn get(&self, r: usize, c: usize) -> (f64, f64, i8) {
        (*self.dx.get(r, c), *self.dy.get(r, c), *self.t_sign.get(r, c))
    }

    pub fn set(&mut self, r: usize, c: usize, dx: f64, dy: f64, t_sign: i8) -> Result<()> {
        if !(-1..=1).contains(&t_sign) {
            return Err(Error::InvalidArgument(format!("t_sign value {t_sign}")));
        }
        self.dx.set(r, c, dx);
        self.dy.set(r, c, dy);
        self.t_sign.set(r, c, t_sign);
        Ok(())
    }

    /// Multiplies every displacement by `factor`, leaving signs untouched.
    pub fn scaled(&self, factor: f64) -> Self {
        MotionVectorField {
            dx: self.dx.map(|v| v * factor),
            dy: self.dy.map(|v| v * factor),
            t_sign: self.t_sign.clone(),
            source_block_size: self.source_block_size,
        }
    }

    /// Expands a block field to a `height`×`width` per-pixel field by
    /// broadcasting each block's vector over the pixels it covers.
    pub fn to_pixel_field(&self, height: usize, width: usize) -> Result<Self> {
        let bs = self.source_block_size;
        if self.shape() == (height, width) && bs == 1 {
            return Ok(self.clone());
        }
        if height.div_ceil(bs) != self.rows() || width.div_ceil(bs) != self.cols() {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} grid of {bs}px blocks does not tile a {height}x{width} frame",
                self.rows(),
                self.cols()
            )));
        }
        let pick = |y: usize, x: usize| (y / bs, x / bs);
        Ok(MotionVectorField {
            dx: Grid::from_fn(height, width, |y, x| {
                let (r, c) = pick(y, x);
                *self.dx.get(r, c)
            }),
            dy: Grid::from_fn(height, width, |y, x| {
                let (r, c) = pick(y, x);
                *self.dy.get(r, c)
            }),
            t_sign: Grid::from_fn(height, width, |y, x| {
                let (r, c) = pick(y, x);
                *self.t_sign.get(r, c)
            }),
            source_block_size: 1,
        })
    }
}

/// Per-cell nonnegative motion magnitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MagnitudeField(Grid<f64>);

impl MagnitudeField {
    pub fn new(values: Grid<f64>) -> Result<Self> {
        if values.as_slice().iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidArgument(
                "magnitudes must be finite and nonnegative".into(),
            ));
        }
        Ok(MagnitudeField(values))
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(Grid::from_vec(rows, cols, values)?)
    }

    pub fn grid(&self) -> &Grid<f64> {
        &self.0
    }

    pub fn values(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn resized(&self, rows: usize, cols: usize) -> Result<Self> {
        // Convex combinations of nonnegative values stay nonnegative.
        Ok(MagnitudeField(grid::resize_bilinear_grid(&self.0, rows, cols)?))
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.0.map(|v| v * factor))
    }
}

/// Per-cell `{0, 1}` mask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryMask(Grid<u8>);

impl BinaryMask {
    pub fn new(values: Grid<u8>) -> Result<Self> {
        if values.as_slice().iter().any(|v| *v > 1) {
            return Err(Error::InvalidArgument("mask values must be 0 or 1".into()));
        }
        Ok(BinaryMask(values))
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<u8>) -> Result<Self> {
        Self::new(Grid::from_vec(rows, cols, values)?)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        BinaryMask(Grid::filled(rows, cols, 0))
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        BinaryMask(Grid::filled(rows, cols, 1))
    }

    pub fn grid(&self) -> &Grid<u8> {
        &self.0
    }

    pub fn values(&self) -> &[u8] {
        self.0.as_slice()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    pub fn count_ones(&self) -> usize {
        self.0.as_slice().iter().filter(|v| **v == 1).count()
    }

    pub fn or(&self, other: &BinaryMask) -> Result<BinaryMask> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch(format!(
                "mask {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let data = self
            .values()
            .iter()
            .zip(other.values())
            .map(|(a, b)| a | b)
            .collect();
        Ok(BinaryMask(Grid::from_vec(self.0.rows(), self.0.cols(), data)?))
    }

    /// Nearest-neighbour upsampling (or downsampling) to `rows`×`cols`.
    pub fn resized_nearest(&self, rows: usize, cols: usize) -> Result<BinaryMask> {
        Ok(BinaryMask(grid::resize_nearest_grid(&self.0, rows, cols)?))
    }
}

/// Bilinear resize of the displacement planes; `t_sign` is categorical and
/// is resampled by nearest neighbour.
pub fn resize_bilinear(
    field: &MotionVectorField,
    out_h: usize,
    out_w: usize,
) -> Result<MotionVectorField> {
    if field.rows() == 0 || field.cols() == 0 {
        return Err(Error::Empty("cannot resize an empty field".into()));
    }
    let dx = grid::resize_bilinear_grid(&field.dx, out_h, out_w)?;
    let dy = grid::resize_bilinear_grid(&field.dy, out_h, out_w)?;
    let t_sign = grid::resize_nearest_grid(&field.t_sign, out_h, out_w)?;
    MotionVectorField::new(dx, dy, t_sign, 1)
}

/// Largest centred sub-rectangle of `frame` whose width:height ratio is
/// `target_aspect`. Leftover rows/columns are split with the smaller half
/// before the crop.
pub fn center_crop(frame: &Frame, target_aspect: f64) -> Result<Frame> {
    if !(target_aspect > 0.0) || !target_aspect.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "target aspect must be positive, got {target_aspect}"
        )));
    }
    let (h, w) = (frame.height(), frame.width());
    // Small slack so that exact ratios like 16/9 are not floored away.
    const SLACK: f64 = 1e-9;
    let (new_h, new_w) = if (w as f64) > target_aspect * h as f64 {
        (h, ((h as f64 * target_aspect) + SLACK).floor() as usize)
    } else {
        (((w as f64 / target_aspect) + SLACK).floor() as usize, w)
    };
    let (new_h, new_w) = (new_h.min(h), new_w.min(w));
    if new_h == 0 || new_w == 0 {
        return Err(Error::InvalidArgument(format!(
            "cropping {h}x{w} to aspect {target_aspect} leaves nothing"
        )));
    }
    frame.crop((h - new_h) / 2, (w - new_w) / 2, new_h, new_w)
}

/// Fusion-path magnitude: `sqrt(dx² + dy² + 1e-12)`, zeroed on intra cells.
pub fn magnitude(field: &MotionVectorField) -> MagnitudeField {
    let values = Grid::from_fn(field.rows(), field.cols(), |r, c| {
        let (dx, dy, t) = field.get(r, c);
        if t == 0 {
            0.0
        } else {
            (dx * dx + dy * dy + MAGNITUDE_BIAS).sqrt()
        }
    });
    MagnitudeField(values)
}

/// Statistics-path magnitude: the plain Euclidean norm of every cell.
pub fn plain_magnitude(field: &MotionVectorField) -> MagnitudeField {
    let values = Grid::from_fn(field.rows(), field.cols(), |r, c| {
        let (dx, dy, _) = field.get(r, c);
        dx.hypot(dy)
    });
    MagnitudeField(values)
}

/// `atan2(dy, dx)` folded into `(-π, π]`.
#[inline]
pub fn angle(dx: f64, dy: f64) -> f64 {
    let theta = dy.atan2(dx);
    if theta <= -std::f64::consts::PI {
        std::f64::consts::PI
    } else {
        theta
    }
}

pub fn direction(field: &MotionVectorField) -> Grid<f64> {
    Grid::from_fn(field.rows(), field.cols(), |r, c| {
        let (dx, dy, _) = field.get(r, c);
        angle(dx, dy)
    })
}

/// `1` where the magnitude is at least `tau`.
pub fn threshold_mask(magnitudes: &MagnitudeField, tau: f64) -> Result<BinaryMask> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("tau must be > 0, got {tau}")));
    }
    Ok(BinaryMask(magnitudes.0.map(|m| u8::from(*m >= tau))))
}

/// Square-element erosion; neighbours outside the grid count as 0.
pub fn erode(mask: &BinaryMask, radius: usize) -> BinaryMask {
    let g = &mask.0;
    let (rows, cols) = g.shape();
    let r = radius as isize;
    let inside = |i: isize, n: usize| i >= 0 && (i as usize) < n;
    // Separable: horizontal minimum, then vertical minimum.
    let horiz = Grid::from_fn(rows, cols, |y, x| {
        let ok = (-r..=r).all(|d| {
            let xx = x as isize + d;
            inside(xx, cols) && *g.get(y, xx as usize) == 1
        });
        u8::from(ok)
    });
    BinaryMask(Grid::from_fn(rows, cols, |y, x| {
        let ok = (-r..=r).all(|d| {
            let yy = y as isize + d;
            inside(yy, rows) && *horiz.get(yy as usize, x) == 1
        });
        u8::from(ok)
    }))
}

/// Square-element dilation; neighbours outside the grid are ignored.
pub fn dilate(mask: &BinaryMask, radius: usize) -> BinaryMask {
    let g = &mask.0;
    let (rows, cols) = g.shape();
    let r = radius as isize;
    let inside = |i: isize, n: usize| i >= 0 && (i as usize) < n;
    let horiz = Grid::from_fn(rows, cols, |y, x| {
        let any = (-r..=r).any(|d| {
            let xx = x as isize + d;
            inside(xx, cols) && *g.get(y, xx as usize) == 1
        });
        u8::from(any)
    });
    BinaryMask(Grid::from_fn(rows, cols, |y, x| {
        let any = (-r..=r).any(|d| {
            let yy = y as isize + d;
            inside(yy, rows) && *horiz.get(yy as usize, x) == 1
        });
        u8::from(any)
    }))
}

/// Opening (erosion then dilation) with a `(2r+1)`×`(2r+1)` square.
pub fn morphological_open(mask: &BinaryMask, element_radius: usize) -> BinaryMask {
    dilate(&erode(mask, element_radius), element_radius)
}

/// Box-filter mean over a `(2r+1)`² window with clamped (replicated) edges.
pub fn box_mean(values: &Grid<f64>, radius: usize) -> Grid<f64> {
    let r = radius as isize;
    let n = ((2 * radius + 1) * (2 * radius + 1)) as f64;
    Grid::from_fn(values.rows(), values.cols(), |y, x| {
        let mut acc = 0.0;
        for dy in -r..=r {
            for dx in -r..=r {
                acc += values.clamped(y as isize + dy, x as isize + dx);
            }
        }
        acc / n
    })
}

/// Keeps vectors under the mask and replaces the rest with their local mean.
pub fn local_average_blend(
    field: &MotionVectorField,
    mask: &BinaryMask,
    window_radius: usize,
) -> Result<MotionVectorField> {
    if mask.shape() != field.shape() {
        return Err(Error::DimensionMismatch(format!(
            "mask {:?} vs field {:?}",
            mask.shape(),
            field.shape()
        )));
    }
    let blend = |plane: &Grid<f64>| {
        let avg = box_mean(plane, window_radius);
        Grid::from_fn(plane.rows(), plane.cols(), |r, c| {
            if *mask.0.get(r, c) == 1 {
                *plane.get(r, c)
            } else {
                *avg.get(r, c)
            }
        })
    };
    Ok(MotionVectorField {
        dx: blend(&field.dx),
        dy: blend(&field.dy),
        t_sign: field.t_sign.clone(),
        source_block_size: field.source_block_size,
    })
}

/// Channel order of a [`FusedTensor`] pixel.
pub const FUSED_CHANNELS: [&str; 6] = ["R", "G", "B", "dx", "dy", "t_sign"];

/// One frame of the six-channel appearance + motion tensor, stored
/// height × width × channel.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedTensor {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl FusedTensor {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        FUSED_CHANNELS.len()
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let base = (y * self.width + x) * 6;
        &self.data[base..base + 6]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }
}

/// Stacks RGB appearance with the motion channels of each frame.
///
/// Single-channel frames are replicated into R, G and B. Block fields are
/// broadcast to pixels through their `source_block_size`.
pub fn fuse_channels(
    frames: &FrameSequence,
    fields: &[MotionVectorField],
) -> Result<Vec<FusedTensor>> {
    if frames.len() != fields.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} frames vs {} motion fields",
            frames.len(),
            fields.len()
        )));
    }
    let (h, w) = (frames.height(), frames.width());
    frames
        .frames()
        .iter()
        .zip(fields)
        .map(|(frame, field)| {
            let px = field.to_pixel_field(h, w)?;
            let rgb: [&[u8]; 3] = match frame.channels() {
                3 => [frame.plane(0), frame.plane(1), frame.plane(2)],
                1 => [frame.plane(0); 3],
                n => {
                    return Err(Error::InvalidArgument(format!(
                        "cannot fuse {n}-channel frames"
                    )))
                }
            };
            let mut data = Vec::with_capacity(h * w * 6);
            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    let (dx, dy, t) = px.get(y, x);
                    data.extend_from_slice(&[
                        rgb[0][i] as f32,
                        rgb[1][i] as f32,
                        rgb[2][i] as f32,
                        dx as f32,
                        dy as f32,
                        t as f32,
                    ]);
                }
            }
            Ok(FusedTensor {
                height: h,
                width: w,
                data,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn mask(rows: usize, cols: usize, ones: &[(usize, usize)]) -> BinaryMask {
        let mut g = Grid::filled(rows, cols, 0u8);
        for &(r, c) in ones {
            g.set(r, c, 1);
        }
        BinaryMask::new(g).unwrap()
    }

    #[test]
    fn resize_constant_and_identity() {
        let f = MotionVectorField::uniform(3, 5, 2.0, -1.0, 1).unwrap();
        let big = resize_bilinear(&f, 17, 4).unwrap();
        assert!(big.dx().as_slice().iter().all(|&v| v == 2.0));
        assert!(big.dy().as_slice().iter().all(|&v| v == -1.0));
        assert!(big.t_sign().as_slice().iter().all(|&v| v == 1));
        let mut g = f.clone();
        g.set(1, 2, 0.3, 9.0, -1).unwrap();
        assert_eq!(resize_bilinear(&g, 3, 5).unwrap(), g);
    }

    #[test]
    fn resize_two_samples_to_four() {
        let f = MotionVectorField::new(
            Grid::from_vec(1, 2, vec![0.0, 4.0]).unwrap(),
            Grid::filled(1, 2, 0.0),
            Grid::from_vec(1, 2, vec![-1, 1]).unwrap(),
            1,
        )
        .unwrap();
        let out = resize_bilinear(&f, 1, 4).unwrap();
        assert_eq!(out.dx().as_slice(), &[0.0, 1.0, 3.0, 4.0]);
        assert_eq!(out.t_sign().as_slice(), &[-1, -1, 1, 1]);
    }

    #[test]
    fn resize_rejects_zero_dims() {
        let f = MotionVectorField::uniform(2, 2, 0.0, 0.0, 0).unwrap();
        assert!(resize_bilinear(&f, 0, 3).is_err());
    }

    #[test]
    fn crop_examples() {
        let square = Frame::gray(100, 100, vec![0; 100 * 100]).unwrap();
        assert_eq!(center_crop(&square, 1.0).unwrap(), square);

        let wide = Frame::gray(200, 100, (0..100 * 200).map(|i| (i % 200) as u8).collect()).unwrap();
        let c = center_crop(&wide, 1.0).unwrap();
        assert_eq!((c.height(), c.width()), (100, 100));
        assert_eq!(c.plane(0)[0], 50);
        assert_eq!(c.plane(0)[99], 149);

        let f = Frame::gray(10, 4, (0..40).map(|i| (i % 10) as u8).collect()).unwrap();
        let c = center_crop(&f, 2.0).unwrap();
        assert_eq!((c.height(), c.width()), (4, 8));
        assert_eq!(&c.plane(0)[..8], &[1, 2, 3, 4, 5, 6, 7, 8]);
    }

    #[test]
    fn crop_tall_and_degenerate() {
        let tall = Frame::gray(4, 10, (0..40).map(|i| (i / 4) as u8).collect()).unwrap();
        let c = center_crop(&tall, 1.0).unwrap();
        assert_eq!((c.height(), c.width()), (4, 4));
        assert_eq!(c.plane(0)[0], 3);
        let thin = Frame::gray(1, 10, vec![0; 10]).unwrap();
        assert!(center_crop(&thin, 100.0).is_err());
        assert!(center_crop(&thin, 0.0).is_err());
    }

    #[test]
    fn magnitude_variants() {
        let f = MotionVectorField::uniform(1, 1, 3.0, 4.0, 1).unwrap();
        assert!((magnitude(&f).values()[0] - 5.0).abs() < 1e-9);
        assert_eq!(plain_magnitude(&f).values()[0], 5.0);

        let intra = MotionVectorField::uniform(1, 1, 3.0, 4.0, 0).unwrap();
        assert_eq!(magnitude(&intra).values()[0], 0.0);
        assert_eq!(plain_magnitude(&intra).values()[0], 5.0);

        let still = MotionVectorField::uniform(1, 1, 0.0, 0.0, -1).unwrap();
        assert!((magnitude(&still).values()[0] - 1e-6).abs() < 1e-18);
        assert_eq!(plain_magnitude(&still).values()[0], 0.0);

        let left = MotionVectorField::uniform(1, 1, -1.0, 0.0, 1).unwrap();
        assert_eq!(plain_magnitude(&left).values()[0], 1.0);
    }

    #[test]
    fn direction_examples() {
        assert_eq!(angle(1.0, 0.0), 0.0);
        assert!((angle(0.0, 1.0) - PI / 2.0).abs() < 1e-15);
        assert_eq!(angle(-1.0, 0.0), PI);
        assert_eq!(angle(-1.0, -0.0), PI);
    }

    #[test]
    fn threshold_examples() {
        let zeros = MagnitudeField::from_vec(2, 2, vec![0.0; 4]).unwrap();
        assert_eq!(threshold_mask(&zeros, 0.5).unwrap().count_ones(), 0);
        let m = MagnitudeField::from_vec(1, 4, vec![0.49, 0.5, 0.51, 3.0]).unwrap();
        assert_eq!(threshold_mask(&m, 0.5).unwrap().values(), &[0, 1, 1, 1]);
        assert!(threshold_mask(&m, 0.0).is_err());
    }

    #[test]
    fn opening_examples() {
        let ones = BinaryMask::ones(6, 7);
        assert_eq!(morphological_open(&ones, 1), ones);

        let lone = mask(7, 7, &[(3, 3)]);
        assert_eq!(morphological_open(&lone, 1).count_ones(), 0);

        let mut block = vec![];
        for r in 2..7 {
            for c in 3..8 {
                block.push((r, c));
            }
        }
        let solid = mask(10, 11, &block);
        assert_eq!(morphological_open(&solid, 1), solid);
    }

    #[test]
    fn erosion_treats_outside_as_zero() {
        let e = erode(&BinaryMask::ones(5, 5), 1);
        let expected: Vec<u8> = (0..25)
            .map(|i| u8::from((1..4).contains(&(i / 5)) && (1..4).contains(&(i % 5))))
            .collect();
        assert_eq!(e.values(), expected.as_slice());
    }

    #[test]
    fn blend_examples() {
        let ramp = MotionVectorField::new(
            Grid::from_fn(3, 4, |r, c| (r * 4 + c) as f64),
            Grid::filled(3, 4, 1.0),
            Grid::filled(3, 4, 1),
            1,
        )
        .unwrap();
        assert_eq!(
            local_average_blend(&ramp, &BinaryMask::ones(3, 4), 1).unwrap(),
            ramp
        );

        let blended = local_average_blend(&ramp, &BinaryMask::zeros(3, 4), 1).unwrap();
        // Oracle: explicit 3x3 window sums with clamped indices.
        for r in 0..3usize {
            for c in 0..4usize {
                let mut s = 0.0;
                for rr in [r.saturating_sub(1), r, (r + 1).min(2)] {
                    for cc in [c.saturating_sub(1), c, (c + 1).min(3)] {
                        s += (rr * 4 + cc) as f64;
                    }
                }
                assert!((blended.dx().get(r, c) - s / 9.0).abs() < 1e-12);
            }
        }
        assert!(blended.dy().as_slice().iter().all(|&v| v == 1.0));

        let constant = MotionVectorField::uniform(4, 4, 2.5, -0.5, -1).unwrap();
        let m = mask(4, 4, &[(0, 0), (2, 3)]);
        let out = local_average_blend(&constant, &m, 1).unwrap();
        assert!(out.dx().as_slice().iter().all(|&v| (v - 2.5).abs() < 1e-12));
        assert!(local_average_blend(&constant, &BinaryMask::ones(2, 4), 1).is_err());
    }

    #[test]
    fn fuse_shapes_and_errors() {
        let frames = FrameSequence::new(vec![Frame::rgb(2, 2, vec![10; 12]).unwrap()]).unwrap();
        let zero = MotionVectorField::intra(2, 2, 1);
        let t = fuse_channels(&frames, &[zero.clone()]).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!((t[0].height(), t[0].width(), t[0].channels()), (2, 2, 6));
        assert_eq!(t[0].pixel(1, 1), &[10.0, 10.0, 10.0, 0.0, 0.0, 0.0]);
        assert!(fuse_channels(&frames, &[zero.clone(), zero]).is_err());
    }

    #[test]
    fn fuse_broadcasts_blocks() {
        let frames = FrameSequence::new(vec![Frame::gray(4, 4, vec![7; 16]).unwrap()]).unwrap();
        let mut f = MotionVectorField::intra(2, 2, 2);
        f.set(1, 0, 3.0, -2.0, 1).unwrap();
        let t = fuse_channels(&frames, &[f]).unwrap();
        assert_eq!(t[0].pixel(3, 1), &[7.0, 7.0, 7.0, 3.0, -2.0, 1.0]);
        assert_eq!(t[0].pixel(1, 1), &[7.0, 7.0, 7.0, 0.0, 0.0, 0.0]);
    }

    fn arb_mask() -> impl Strategy<Value = BinaryMask> {
        (1usize..12, 1usize..12).prop_flat_map(|(r, c)| {
            proptest::collection::vec(0u8..=1, r * c)
                .prop_map(move |v| BinaryMask::from_vec(r, c, v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn opening_idempotent_and_anti_extensive(m in arb_mask(), radius in 0usize..3) {
            let once = morphological_open(&m, radius);
            prop_assert_eq!(&morphological_open(&once, radius), &once);
            prop_assert!(once.values().iter().zip(m.values()).all(|(o, x)| o <= x));
        }

        #[test]
        fn direction_in_half_open_range(dx in -10.0f64..10.0, dy in -10.0f64..10.0) {
            let a = angle(dx, dy);
            prop_assert!(a > -PI && a <= PI);
        }

        #[test]
        fn magnitude_zero_exactly_on_intra(
            vals in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -1i8..=1), 1..30)
        ) {
            let n = vals.len();
            let f = MotionVectorField::new(
                Grid::from_vec(1, n, vals.iter().map(|v| v.0).collect()).unwrap(),
                Grid::from_vec(1, n, vals.iter().map(|v| v.1).collect()).unwrap(),
                Grid::from_vec(1, n, vals.iter().map(|v| v.2).collect()).unwrap(),
                1,
            ).unwrap();
            let m = magnitude(&f);
            for (mv, v) in m.values().iter().zip(&vals) {
                prop_assert!(*mv >= 0.0);
                prop_assert_eq!(*mv == 0.0, v.2 == 0);
            }
        }

        #[test]
        fn blend_identity_under_full_mask(radius in 0usize..4, seed in 0u64..1000) {
            let f = MotionVectorField::new(
                Grid::from_fn(5, 6, |r, c| ((r * 31 + c * 17) as u64 ^ seed) as f64 * 0.1),
                Grid::from_fn(5, 6, |r, c| (r as f64) - (c as f64)),
                Grid::filled(5, 6, 1),
                1,
            ).unwrap();
            prop_assert_eq!(local_average_blend(&f, &BinaryMask::ones(5, 6), radius).unwrap(), f);
        }
    }
}
