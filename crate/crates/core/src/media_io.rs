//! Reading frame sequences, motion-vector sidecars and corpus manifests.
//!
//! Supported frame inputs are YUV4MPEG2 streams (luma is kept, chroma is
//! dropped) and headerless planar 8-bit files. Sidecars and manifests are
//! small CSV files; see [`SIDECAR_HEADER`] and [`MANIFEST_HEADER`].

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::mv_field::MotionVectorField;

/// One 8-bit image, channel-planar.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl Frame {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "frame dimensions {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!(
                "{channels} channels (expected 1 or 3)"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::DimensionMismatch(format!(
                "{} samples for a {width}x{height}x{channels} frame",
                data.len()
            )));
        }
        Ok(Frame {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn gray(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        Self::new(width, height, 1, data)
    }

    /// Planar R, G, B.
    pub fn rgb(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        Self::new(width, height, 3, data)
    }

    pub fn from_luma(plane: &Grid<u8>) -> Result<Self> {
        Self::gray(plane.cols(), plane.rows(), plane.as_slice().to_vec())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn plane(&self, channel: usize) -> &[u8] {
        let n = self.width * self.height;
        &self.data[channel * n..(channel + 1) * n]
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    /// Luma plane; RGB is converted with BT.601 weights, rounded to nearest.
    pub fn luma(&self) -> Grid<u8> {
        let n = self.width * self.height;
        let data = if self.channels == 1 {
            self.data.clone()
        } else {
            let (r, g, b) = (self.plane(0), self.plane(1), self.plane(2));
            (0..n)
                .map(|i| {
                    // Integer BT.601: (299 R + 587 G + 114 B) / 1000, rounded.
                    let y = 299 * r[i] as u32 + 587 * g[i] as u32 + 114 * b[i] as u32;
                    ((y + 500) / 1000) as u8
                })
                .collect()
        };
        Grid::from_vec(self.height, self.width, data).expect("plane size matches frame")
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Frame> {
        if top + height > self.height || left + width > self.width || height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "crop {height}x{width}+{top}+{left} outside {}x{} frame",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(width * height * self.channels);
        for ch in 0..self.channels {
            let plane = self.plane(ch);
            for y in top..top + height {
                let row = y * self.width;
                data.extend_from_slice(&plane[row + left..row + left + width]);
            }
        }
        Frame::new(width, height, self.channels, data)
    }
}

/// An ordered, non-empty run of equally sized frames.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameSequence {
    width: usize,
    height: usize,
    channels: usize,
    frames: Vec<Frame>,
}

impl FrameSequence {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        let first = frames.first().ok_or(Error::NoFrames)?;
        let (width, height, channels) = (first.width, first.height, first.channels);
        if let Some((t, f)) = frames
            .iter()
            .enumerate()
            .find(|(_, f)| (f.width, f.height, f.channels) != (width, height, channels))
        {
            return Err(Error::DimensionMismatch(format!(
                "frame {t} is {}x{}x{}, frame 0 is {width}x{height}x{channels}",
                f.width, f.height, f.channels
            )));
        }
        Ok(FrameSequence {
            width,
            height,
            channels,
            frames,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &Frame {
        &self.frames[t]
    }
}

/// How to interpret a frame file. Y4M streams are recognised by their magic
/// regardless of the hint, and their header wins over any raw dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FormatHint {
    Auto,
    Y4m,
    Raw {
        width: usize,
        height: usize,
        channels: usize,
    },
}

const Y4M_MAGIC: &[u8] = b"YUV4MPEG2";

pub fn read_frames(path: impl AsRef<Path>, hint: FormatHint) -> Result<FrameSequence> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_frames(&bytes, hint)
}

pub fn parse_frames(bytes: &[u8], hint: FormatHint) -> Result<FrameSequence> {
    if bytes.starts_with(Y4M_MAGIC) {
        return parse_y4m(bytes);
    }
    match hint {
        FormatHint::Raw {
            width,
            height,
            channels,
        } => parse_raw(bytes, width, height, channels),
        FormatHint::Y4m => Err(Error::MalformedY4m("missing YUV4MPEG2 signature".into())),
        FormatHint::Auto => Err(Error::InvalidArgument(
            "not a Y4M stream; raw input needs explicit width, height and channels".into(),
        )),
    }
}

/// Headerless frame-major, channel-planar, row-major samples.
pub fn parse_raw(bytes: &[u8], width: usize, height: usize, channels: usize) -> Result<FrameSequence> {
    if width == 0 || height == 0 || !(channels == 1 || channels == 3) {
        return Err(Error::InvalidArgument(format!(
            "raw geometry {width}x{height}x{channels}"
        )));
    }
    let frame_len = width * height * channels;
    if bytes.is_empty() {
        return Err(Error::NoFrames);
    }
    if bytes.len() % frame_len != 0 {
        return Err(Error::Truncated(format!(
            "{} bytes is not a whole number of {frame_len}-byte frames",
            bytes.len()
        )));
    }
    let frames = bytes
        .chunks_exact(frame_len)
        .map(|chunk| Frame::new(width, height, channels, chunk.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    FrameSequence::new(frames)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Chroma {
    C420,
    C444,
    Mono,
}

impl Chroma {
    fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "420" | "420jpeg" | "420paldv" | "420mpeg2" => Ok(Chroma::C420),
            "444" => Ok(Chroma::C444),
            "mono" => Ok(Chroma::Mono),
            other => Err(Error::UnsupportedChroma(format!("C{other}"))),
        }
    }

    fn chroma_len(self, width: usize, height: usize) -> usize {
        match self {
            Chroma::C420 => 2 * width.div_ceil(2) * height.div_ceil(2),
            Chroma::C444 => 2 * width * height,
            Chroma::Mono => 0,
        }
    }
}

fn split_line(bytes: &[u8]) -> Option<(&[u8], &[u8])> {
    let nl = bytes.iter().position(|b| *b == b'\n')?;
    Some((&bytes[..nl], &bytes[nl + 1..]))
}

/// Parses a YUV4MPEG2 stream, keeping only the luma plane of each frame.
pub fn parse_y4m(bytes: &[u8]) -> Result<FrameSequence> {
    let (header, mut rest) =
        split_line(bytes).ok_or_else(|| Error::MalformedY4m("unterminated stream header".into()))?;
    let header = std::str::from_utf8(header)
        .map_err(|_| Error::MalformedY4m("stream header is not ASCII".into()))?;
    let mut tokens = header.split(' ');
    if tokens.next() != Some("YUV4MPEG2") {
        return Err(Error::MalformedY4m("missing YUV4MPEG2 signature".into()));
    }
    let (mut width, mut height, mut chroma) = (None, None, Chroma::C420);
    for token in tokens.filter(|t| !t.is_empty()) {
        let (key, value) = token.split_at(1);
        let dim = |v: &str| {
            v.parse::<usize>()
                .ok()
                .filter(|d| *d > 0)
                .ok_or_else(|| Error::MalformedY4m(format!("bad dimension `{token}`")))
        };
        match key {
            "W" => width = Some(dim(value)?),
            "H" => height = Some(dim(value)?),
            "C" => chroma = Chroma::from_tag(value)?,
            _ => {}
        }
    }
    let width = width.ok_or_else(|| Error::MalformedY4m("missing W".into()))?;
    let height = height.ok_or_else(|| Error::MalformedY4m("missing H".into()))?;
    let luma_len = width * height;
    let frame_len = luma_len + chroma.chroma_len(width, height);

    let mut frames = Vec::new();
    while !rest.is_empty() {
        let (marker, payload) = split_line(rest)
            .ok_or_else(|| Error::Truncated(format!("frame {} marker", frames.len())))?;
        if !marker.starts_with(b"FRAME") {
            return Err(Error::MalformedY4m(format!(
                "expected FRAME marker for frame {}",
                frames.len()
            )));
        }
        if payload.len() < frame_len {
            return Err(Error::Truncated(format!(
                "frame {} has {} of {frame_len} bytes",
                frames.len(),
                payload.len()
            )));
        }
        frames.push(Frame::gray(width, height, payload[..luma_len].to_vec())?);
        rest = &payload[frame_len..];
    }
    if frames.is_empty() {
        return Err(Error::NoFrames);
    }
    FrameSequence::new(frames)
}

/// Serialises gray frames as a `C420jpeg` Y4M stream with mid-grey chroma.
pub fn encode_y4m(frames: &FrameSequence) -> Vec<u8> {
    let (w, h) = (frames.width(), frames.height());
    let chroma = Chroma::C420.chroma_len(w, h);
    let mut out = format!("YUV4MPEG2 W{w} H{h} F25:1 Ip A1:1 C420jpeg\n").into_bytes();
    for frame in frames.frames() {
        out.extend_from_slice(b"FRAME\n");
        out.extend_from_slice(&frame.luma().into_vec());
        out.extend(std::iter::repeat_n(128u8, chroma));
    }
    out
}

pub fn write_y4m(frames: &FrameSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_y4m(frames)).map_err(|e| Error::io(path, e))
}

/// Column header of a motion-vector sidecar.
pub const SIDECAR_HEADER: &str = "frame,block_i,block_j,dx,dy,t_sign";

/// One sidecar data row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MvSidecarRecord {
    pub frame: usize,
    pub block_i: usize,
    pub block_j: usize,
    pub dx: f64,
    pub dy: f64,
    pub t_sign: i8,
}

pub fn read_mv_sidecar(
    path: impl AsRef<Path>,
    grid_rows: usize,
    grid_cols: usize,
) -> Result<Vec<MotionVectorField>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_mv_sidecar(&text, grid_rows, grid_cols)
}

/// Parses sidecar text into one field per frame index present, in order.
/// Blocks without a row are intra: zero displacement, `t_sign = 0`.
pub fn parse_mv_sidecar(
    text: &str,
    grid_rows: usize,
    grid_cols: usize,
) -> Result<Vec<MotionVectorField>> {
    Ok(parse_mv_sidecar_indexed(text, grid_rows, grid_cols, 1)?
        .into_iter()
        .map(|(_, f)| f)
        .collect())
}

/// Like [`parse_mv_sidecar`] but keeps each field's frame index and tags the
/// fields with `block_size`.
pub fn parse_mv_sidecar_indexed(
    text: &str,
    grid_rows: usize,
    grid_cols: usize,
    block_size: usize,
) -> Result<Vec<(usize, MotionVectorField)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader.headers()?.iter().collect::<Vec<_>>().join(",");
    if header != SIDECAR_HEADER {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{SIDECAR_HEADER}`, found `{header}`"),
        });
    }
    let mut out: Vec<(usize, MotionVectorField)> = Vec::new();
    let mut last: Option<(usize, usize, usize)> = None;
    for row in reader.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let record = parse_sidecar_row(&row, line)?;
        if record.block_i >= grid_rows || record.block_j >= grid_cols {
            return Err(Error::BlockOutOfGrid {
                block_i: record.block_i,
                block_j: record.block_j,
                rows: grid_rows,
                cols: grid_cols,
            });
        }
        let key = (record.frame, record.block_i, record.block_j);
        if last.is_some_and(|prev| prev >= key) {
            return Err(Error::Unsorted { line });
        }
        last = Some(key);
        if out.last().map(|(f, _)| *f) != Some(record.frame) {
            out.push((
                record.frame,
                MotionVectorField::intra(grid_rows, grid_cols, block_size),
            ));
        }
        let field = &mut out.last_mut().expect("pushed above").1;
        field.set(
            record.block_i,
            record.block_j,
            record.dx,
            record.dy,
            record.t_sign,
        )?;
    }
    Ok(out)
}

fn parse_sidecar_row(row: &csv::StringRecord, line: u64) -> Result<MvSidecarRecord> {
    if row.len() != 6 {
        return Err(Error::Parse {
            line,
            message: format!("expected 6 cells, found {}", row.len()),
        });
    }
    let index = |i: usize, name: &str| {
        row[i].parse::<usize>().map_err(|_| Error::Parse {
            line,
            message: format!("{name} `{}` is not a nonnegative integer", &row[i]),
        })
    };
    let real = |i: usize, name: &str| {
        row[i]
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::Parse {
                line,
                message: format!("{name} `{}` is not a finite number", &row[i]),
            })
    };
    let t_sign = match &row[5] {
        "-1" => -1,
        "0" => 0,
        "1" | "+1" => 1,
        other => {
            return Err(Error::InvalidTSign {
                line,
                value: other.to_string(),
            })
        }
    };
    Ok(MvSidecarRecord {
        frame: index(0, "frame")?,
        block_i: index(1, "block_i")?,
        block_j: index(2, "block_j")?,
        dx: real(3, "dx")?,
        dy: real(4, "dy")?,
        t_sign,
    })
}

/// Renders fields (frame `t` = position `t`) in canonical sidecar form:
/// every block of every frame, `(frame, i, j)` order, six decimals, LF.
pub fn format_mv_sidecar(fields: &[MotionVectorField]) -> Result<String> {
    format_mv_sidecar_indexed(fields.iter().enumerate())
}

pub fn format_mv_sidecar_indexed<'a>(
    fields: impl IntoIterator<Item = (usize, &'a MotionVectorField)>,
) -> Result<String> {
    let mut out = String::from(SIDECAR_HEADER);
    out.push('\n');
    let mut shape = None;
    for (t, field) in fields {
        if *shape.get_or_insert(field.shape()) != field.shape() {
            return Err(Error::DimensionMismatch(format!(
                "frame {t} grid {:?} differs from {:?}",
                field.shape(),
                shape.unwrap()
            )));
        }
        for i in 0..field.rows() {
            for j in 0..field.cols() {
                let (dx, dy, s) = field.get(i, j);
                writeln!(out, "{t},{i},{j},{dx:.6},{dy:.6},{s}").expect("write to String");
            }
        }
    }
    Ok(out)
}

pub fn write_mv_sidecar(fields: &[MotionVectorField], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = format_mv_sidecar(fields)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Column header of a corpus manifest.
pub const MANIFEST_HEADER: &str = "clip_id,class_label,frames_path,mv_path";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub clip_id: String,
    pub class_label: String,
    pub frames_path: PathBuf,
    pub mv_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
}

impl CorpusManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Distinct class labels in order of first appearance.
    pub fn classes(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.entries
            .iter()
            .filter(|e| seen.insert(e.class_label.clone()))
            .map(|e| e.class_label.clone())
            .collect()
    }
}

/// Loads and validates a manifest. Relative paths resolve against the
/// manifest's own directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<CorpusManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let manifest = parse_manifest(&text, base)?;
    for entry in &manifest.entries {
        let paths = std::iter::once(&entry.frames_path).chain(entry.mv_path.as_ref());
        for p in paths {
            if !p.is_file() {
                return Err(Error::MissingFile(p.clone()));
            }
        }
    }
    Ok(manifest)
}

/// Parses manifest text without touching the filesystem.
pub fn parse_manifest(text: &str, base: &Path) -> Result<CorpusManifest> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader.headers()?.iter().collect::<Vec<_>>().join(",");
    if header != MANIFEST_HEADER {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{MANIFEST_HEADER}`, found `{header}`"),
        });
    }
    let mut ids = HashSet::new();
    let mut entries = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.len() != 4 {
            return Err(Error::Parse {
                line,
                message: format!("expected 4 cells, found {}", row.len()),
            });
        }
        let clip_id = row[0].to_string();
        if clip_id.is_empty() || clip_id.contains(['/', '\\']) || clip_id.starts_with('.') {
            return Err(Error::Parse {
                line,
                message: format!("invalid clip_id `{clip_id}`"),
            });
        }
        if row[1].is_empty() || row[2].is_empty() {
            return Err(Error::Parse {
                line,
                message: "class_label and frames_path are required".into(),
            });
        }
        if !ids.insert(clip_id.clone()) {
            return Err(Error::DuplicateClip(clip_id));
        }
        entries.push(ManifestEntry {
            clip_id,
            class_label: row[1].to_string(),
            frames_path: base.join(&row[2]),
            mv_path: (!row[3].is_empty()).then(|| base.join(&row[3])),
        });
    }
    Ok(CorpusManifest { entries })
}

pub fn format_manifest(manifest: &CorpusManifest) -> String {
    let mut out = String::from(MANIFEST_HEADER);
    out.push('\n');
    for e in &manifest.entries {
        let mv = e
            .mv_path
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{}",
            e.clip_id,
            e.class_label,
            e.frames_path.display(),
            mv
        )
        .expect("write to String");
    }
    out
}
