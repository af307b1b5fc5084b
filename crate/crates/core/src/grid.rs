//! Dense row-major 2-D storage shared by fields, masks and heatmaps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Grid {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {rows}x{cols} grid",
                data.len()
            )));
        }
        Ok(Grid { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Grid { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> &T {
        &self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: T) {
        self.data[r * self.cols + c] = value;
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(f).collect(),
        }
    }
}

impl<T: Copy> Grid<T> {
    /// Sample with coordinates clamped into the grid (edge replication).
    #[inline]
    pub fn clamped(&self, r: isize, c: isize) -> T {
        let r = r.clamp(0, self.rows as isize - 1) as usize;
        let c = c.clamp(0, self.cols as isize - 1) as usize;
        self.data[r * self.cols + c]
    }
}

/// Linear interpolation written so that `lerp(a, a, w) == a` exactly.
#[inline]
pub(crate) fn lerp(a: f64, b: f64, w: f64) -> f64 {
    a + (b - a) * w
}

/// Bilinear resampling with half-pixel centre alignment and edge clamping.
pub fn resize_bilinear_grid(src: &Grid<f64>, out_rows: usize, out_cols: usize) -> Result<Grid<f64>> {
    if out_rows == 0 || out_cols == 0 {
        return Err(Error::InvalidArgument(format!(
            "resize target {out_rows}x{out_cols} has a zero dimension"
        )));
    }
    if src.is_empty() {
        return Err(Error::Empty("cannot resize an empty grid".into()));
    }
    let ys: Vec<(usize, usize, f64)> = (0..out_rows)
        .map(|r| source_taps(r, src.rows(), out_rows))
        .collect();
    let xs: Vec<(usize, usize, f64)> = (0..out_cols)
        .map(|c| source_taps(c, src.cols(), out_cols))
        .collect();
    Ok(Grid::from_fn(out_rows, out_cols, |r, c| {
        let (y0, y1, wy) = ys[r];
        let (x0, x1, wx) = xs[c];
        let top = lerp(*src.get(y0, x0), *src.get(y0, x1), wx);
        let bottom = lerp(*src.get(y1, x0), *src.get(y1, x1), wx);
        lerp(top, bottom, wy)
    }))
}

/// The two source indices and the weight of the second for output index `dst`.
fn source_taps(dst: usize, in_len: usize, out_len: usize) -> (usize, usize, f64) {
    let scale = in_len as f64 / out_len as f64;
    let pos = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
    let i0 = pos.floor() as usize;
    let i1 = (i0 + 1).min(in_len - 1);
    (i0, i1, pos - i0 as f64)
}

/// Nearest-neighbour index under the same half-pixel alignment.
#[inline]
pub(crate) fn nearest_index(dst: usize, in_len: usize, out_len: usize) -> usize {
    let pos = (dst as f64 + 0.5) * in_len as f64 / out_len as f64;
    (pos.floor() as usize).min(in_len - 1)
}

pub fn resize_nearest_grid<T: Copy>(src: &Grid<T>, out_rows: usize, out_cols: usize) -> Result<Grid<T>> {
    if out_rows == 0 || out_cols == 0 {
        return Err(Error::InvalidArgument(format!(
            "resize target {out_rows}x{out_cols} has a zero dimension"
        )));
    }
    if src.is_empty() {
        return Err(Error::Empty("cannot resize an empty grid".into()));
    }
    Ok(Grid::from_fn(out_rows, out_cols, |r, c| {
        *src.get(
            nearest_index(r, src.rows(), out_rows),
            nearest_index(c, src.cols(), out_cols),
        )
    }))
}

/// Pairwise summation; the result depends only on the order of `values`.
pub(crate) fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if values.len() <= LEAF {
        return values.iter().fold(0.0, |acc, v| acc + v);
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    pairwise_sum(values) / values.len() as f64
}
