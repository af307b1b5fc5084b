//! Batch pipelines behind the `estimate`, `stats`, `compare` and `calibrate`
//! commands, and their JSON / CSV / PGM serialisation.
//!
//! Every pipeline computes all results in memory first and only then hands
//! the finished files to a single [`Emitter`], so a failure never leaves a
//! half-written output directory behind and file contents never depend on
//! thread scheduling.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::divergence::{
    divergence_report, matrix_columns, normalize_matrix, DivergenceReport, Granularity,
    NormalizedMatrix, StatFamily, DEFAULT_DIVERGENCE_BINS, KL_SMOOTHING,
};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::maf_policy::{
    calibrate_thresholds, directional_masks, mask_density, route_fractions, RoutingThresholds,
    BLEND_RADIUS, DEFAULT_ALPHA_HIGH, DEFAULT_ALPHA_LOW, DEFAULT_EPSILON, DEFAULT_Q_MV,
    OPENING_RADIUS,
};
use crate::media_io::{
    format_manifest, format_mv_sidecar, load_manifest, parse_mv_sidecar_indexed, read_frames,
    CorpusManifest, FormatHint, ManifestEntry,
};
use crate::motion_estimation::{estimate_sequence, partition_dims, SearchConfig};
use crate::motion_stats::{
    class_mean_heatmap, frame_stats, motion_evolution, representative_frame,
    representative_glyphs, ClipDescriptor, DirectionHistogram, EvolutionProfile, FlowGlyphGrid,
    HeatmapGrid, HistRange, RegionalProfile, DEFAULT_DIRECTION_BINS, DEFAULT_ENTROPY_BINS,
    DEFAULT_GRID, DEFAULT_SEGMENTS, REGION_LATTICE,
};
use crate::motion_stats::{direction_histogram, regional_profile};
use crate::mv_field::{
    magnitude, plain_magnitude, resize_bilinear, threshold_mask, MagnitudeField,
    MotionVectorField, MAGNITUDE_BIAS,
};

pub const TOOL_NAME: &str = "mvlens";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const DEFAULT_TAU: f64 = 1.0;
pub const DEFAULT_GLYPH_LATTICE: usize = 8;
pub const DEFAULT_GLYPH_EPS: f64 = 1e-9;

/// Which per-frame mask feeds the routing densities in `calibrate`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensitySource {
    /// `1[‖v‖ ≥ τ]` over the block grid.
    #[default]
    Threshold,
    /// The opened directional mask `P`.
    MafMask,
}

/// Every tunable that influences a report. Serialised verbatim into each
/// report so the report can be regenerated from its own echo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub block_size: usize,
    pub search_radius: usize,
    pub ref_offset: i64,
    pub frame_format: FormatHint,
    pub entropy_bins: usize,
    pub entropy_range: HistRange,
    pub div_bins: usize,
    pub granularity: Granularity,
    pub q_mv: f64,
    pub alpha_low: f64,
    pub alpha_high: f64,
    pub epsilon: f64,
    pub tau: f64,
    pub density_source: DensitySource,
    pub grid: usize,
    pub segments: usize,
    pub dir_bins: usize,
    pub glyph_lattice: usize,
    pub glyph_eps: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        let search = SearchConfig::default();
        AnalysisConfig {
            block_size: search.block_size,
            search_radius: search.search_radius,
            ref_offset: search.reference_offset,
            frame_format: FormatHint::Auto,
            entropy_bins: DEFAULT_ENTROPY_BINS,
            entropy_range: HistRange::FrameLocal,
            div_bins: DEFAULT_DIVERGENCE_BINS,
            granularity: Granularity::Frame,
            q_mv: DEFAULT_Q_MV,
            alpha_low: DEFAULT_ALPHA_LOW,
            alpha_high: DEFAULT_ALPHA_HIGH,
            epsilon: DEFAULT_EPSILON,
            tau: DEFAULT_TAU,
            density_source: DensitySource::Threshold,
            grid: DEFAULT_GRID,
            segments: DEFAULT_SEGMENTS,
            dir_bins: DEFAULT_DIRECTION_BINS,
            glyph_lattice: DEFAULT_GLYPH_LATTICE,
            glyph_eps: DEFAULT_GLYPH_EPS,
        }
    }
}

impl AnalysisConfig {
    pub fn search(&self) -> SearchConfig {
        SearchConfig {
            block_size: self.block_size,
            search_radius: self.search_radius,
            reference_offset: self.ref_offset,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.search().validate()?;
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.entropy_bins == 0 {
            return bad("entropy_bins must be >= 1".into());
        }
        if let HistRange::Fixed { lo, hi } = self.entropy_range {
            if !(lo < hi) {
                return bad(format!("entropy range ({lo}, {hi}) is empty"));
            }
        }
        if self.div_bins < 2 {
            return bad("div_bins must be >= 2".into());
        }
        if !(self.q_mv > 0.0 && self.q_mv < 1.0) {
            return bad(format!("q_mv {} not in (0, 1)", self.q_mv));
        }
        if !(0.0 < self.alpha_low && self.alpha_low < self.alpha_high && self.alpha_high < 1.0) {
            return bad(format!(
                "need 0 < alpha_low < alpha_high < 1, got {}, {}",
                self.alpha_low, self.alpha_high
            ));
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon must be > 0, got {}", self.epsilon));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be > 0, got {}", self.tau));
        }
        if self.grid < REGION_LATTICE {
            return bad(format!("grid must be >= {REGION_LATTICE}, got {}", self.grid));
        }
        if self.segments < 2 {
            return bad("segments must be >= 2".into());
        }
        if self.dir_bins < 2 {
            return bad("dir_bins must be >= 2".into());
        }
        if self.glyph_lattice == 0 || self.glyph_lattice > self.grid {
            return bad(format!(
                "glyph_lattice must be in 1..={}, got {}",
                self.grid, self.glyph_lattice
            ));
        }
        if !(self.glyph_eps > 0.0) {
            return bad("glyph_eps must be > 0".into());
        }
        Ok(())
    }

    /// Reads a configuration from JSON: either a bare config object or any
    /// report carrying one under `"config"`.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| Error::InvalidArgument(format!("config JSON: {e}")))?;
        let inner = match value.get("config") {
            Some(c) => c.clone(),
            None => value,
        };
        let config: AnalysisConfig = serde_json::from_value(inner)
            .map_err(|e| Error::InvalidArgument(format!("config JSON: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Fixed numeric conventions, echoed next to the config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conventions {
    pub log_base: u32,
    pub quantile: String,
    pub kl_smoothing: f64,
    pub magnitude_bias: f64,
    pub opening_radius: usize,
    pub blend_radius: usize,
    pub region_lattice: usize,
    pub resize: String,
}

impl Default for Conventions {
    fn default() -> Self {
        Conventions {
            log_base: 2,
            quantile: "nearest_rank".into(),
            kl_smoothing: KL_SMOOTHING,
            magnitude_bias: MAGNITUDE_BIAS,
            opening_radius: OPENING_RADIUS,
            blend_radius: BLEND_RADIUS,
            region_lattice: REGION_LATTICE,
            resize: "bilinear_half_pixel".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MvSource {
    Sidecar,
    Estimated,
}

/// Frames' geometry plus one motion field per frame.
#[derive(Debug, Clone)]
pub struct ClipMotion {
    pub entry: ManifestEntry,
    pub width: usize,
    pub height: usize,
    pub fields: Vec<MotionVectorField>,
    pub source: MvSource,
}

/// Loads a clip's frames and its motion: the sidecar when the manifest names
/// one (blocks or frames it omits are intra), otherwise full-search
/// estimation with the configured search.
pub fn load_clip_motion(entry: &ManifestEntry, config: &AnalysisConfig) -> Result<ClipMotion> {
    let frames = read_frames(&entry.frames_path, config.frame_format)?;
    let (height, width) = (frames.height(), frames.width());
    let (rows, cols) = partition_dims(height, width, config.block_size);
    let (fields, source) = match &entry.mv_path {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let mut fields = vec![MotionVectorField::intra(rows, cols, config.block_size); frames.len()];
            for (t, field) in parse_mv_sidecar_indexed(&text, rows, cols, config.block_size)? {
                let slot = fields.get_mut(t).ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "{}: sidecar frame {t} but the clip has {} frames",
                        path.display(),
                        frames.len()
                    ))
                })?;
                *slot = field;
            }
            (fields, MvSource::Sidecar)
        }
        None => (estimate_sequence(&frames, &config.search())?, MvSource::Estimated),
    };
    Ok(ClipMotion {
        entry: entry.clone(),
        width,
        height,
        fields,
        source,
    })
}

fn with_context<T>(entry: &ManifestEntry, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::InvalidArgument(msg) => {
            Error::InvalidArgument(format!("clip `{}`: {msg}", entry.clip_id))
        }
        other => other,
    })
}

/// Everything the class aggregates need from one clip.
#[derive(Debug, Clone)]
pub struct ClipAnalysis {
    pub descriptor: ClipDescriptor,
    pub source: MvSource,
    /// Per-frame plain magnitudes on the `grid`×`grid` lattice.
    pub magnitudes: Vec<MagnitudeField>,
    /// Per-frame fields on the `grid`×`grid` lattice.
    pub fields: Vec<MotionVectorField>,
    pub direction_counts: Vec<u64>,
}

/// Per-frame statistics of a clip, computed on the pixel-resolution field.
pub fn analyze_clip(motion: &ClipMotion, config: &AnalysisConfig) -> Result<ClipAnalysis> {
    let g = config.grid;
    let mut frames = Vec::with_capacity(motion.fields.len());
    let mut magnitudes = Vec::with_capacity(motion.fields.len());
    let mut fields = Vec::with_capacity(motion.fields.len());
    let mut direction_counts = vec![0u64; config.dir_bins];
    for field in &motion.fields {
        let pixel = field.to_pixel_field(motion.height, motion.width)?;
        let mag = plain_magnitude(&pixel);
        frames.push(frame_stats(&mag, config.entropy_bins, config.entropy_range)?);
        magnitudes.push(mag.resized(g, g)?);
        fields.push(resize_bilinear(&pixel, g, g)?);
        let hist = direction_histogram(std::iter::once(&pixel), config.dir_bins)?;
        for (acc, c) in direction_counts.iter_mut().zip(&hist.counts) {
            *acc += c;
        }
    }
    let descriptor = ClipDescriptor::from_frames(
        motion.entry.clip_id.clone(),
        motion.entry.class_label.clone(),
        frames,
    )?;
    Ok(ClipAnalysis {
        descriptor,
        source: motion.source,
        magnitudes,
        fields,
        direction_counts,
    })
}

/// Only the descriptor of a clip.
pub fn describe_clip(motion: &ClipMotion, config: &AnalysisConfig) -> Result<ClipDescriptor> {
    let frames = motion
        .fields
        .iter()
        .map(|f| {
            let pixel = f.to_pixel_field(motion.height, motion.width)?;
            frame_stats(&plain_magnitude(&pixel), config.entropy_bins, config.entropy_range)
        })
        .collect::<Result<Vec<_>>>()?;
    ClipDescriptor::from_frames(
        motion.entry.clip_id.clone(),
        motion.entry.class_label.clone(),
        frames,
    )
}

fn load_corpus(path: &Path) -> Result<CorpusManifest> {
    let manifest = load_manifest(path)?;
    if manifest.is_empty() {
        return Err(Error::Empty(format!("{}: manifest lists no clips", path.display())));
    }
    Ok(manifest)
}

fn map_clips<T: Send>(
    manifest: &CorpusManifest,
    config: &AnalysisConfig,
    f: impl Fn(&ClipMotion) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    manifest
        .entries
        .par_iter()
        .map(|entry| with_context(entry, load_clip_motion(entry, config).and_then(|m| f(&m))))
        .collect()
}

/// Runs `f` on a dedicated pool of `threads` workers (all cores when `None`).
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::InvalidArgument("thread count must be >= 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(f)
}

/// Collects finished output files and writes them in insertion order; on
/// failure everything this emitter created is removed again.
#[derive(Debug, Default)]
pub struct Emitter {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Emitter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, path: PathBuf, bytes: impl Into<Vec<u8>>) {
        self.files.push((path, bytes.into()));
    }

    pub fn paths(&self) -> Vec<PathBuf> {
        self.files.iter().map(|(p, _)| p.clone()).collect()
    }

    pub fn commit(self, dir: &Path) -> Result<Vec<PathBuf>> {
        let dir_existed = dir.is_dir();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::with_capacity(self.files.len());
        for (path, bytes) in self.files {
            if let Err(e) = fs::write(&path, &bytes) {
                for p in &written {
                    let _ = fs::remove_file(p);
                }
                if !dir_existed {
                    let _ = fs::remove_dir(dir);
                }
                return Err(Error::io(&path, e));
            }
            written.push(path);
        }
        Ok(written)
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Invariant(format!("JSON serialisation: {e}")))?;
    s.push('\n');
    Ok(s)
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.into_inner()
        .map_err(|e| Error::Invariant(format!("CSV buffer: {e}")))
}

// ---------------------------------------------------------------- estimate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateSummary {
    pub written: Vec<PathBuf>,
    pub skipped: Vec<String>,
    pub manifest: PathBuf,
}

pub const ESTIMATED_MANIFEST: &str = "manifest.csv";

fn absolute(path: &Path) -> Result<PathBuf> {
    fs::canonicalize(path).map_err(|e| Error::io(path, e))
}

/// Writes `<clip_id>.mv.csv` for every clip without a sidecar (every clip
/// with `force`) plus an updated `manifest.csv` pointing at the results.
pub fn cmd_estimate(
    manifest_path: &Path,
    out_dir: &Path,
    config: &AnalysisConfig,
    force: bool,
) -> Result<EstimateSummary> {
    config.validate()?;
    let manifest = load_corpus(manifest_path)?;
    let out_manifest = out_dir.join(ESTIMATED_MANIFEST);
    if out_manifest.exists() && absolute(&out_manifest)? == absolute(manifest_path)? {
        return Err(Error::InvalidArgument(format!(
            "{} would overwrite the input manifest; choose another --out",
            out_manifest.display()
        )));
    }
    let todo: Vec<&ManifestEntry> = manifest
        .entries
        .iter()
        .filter(|e| force || e.mv_path.is_none())
        .collect();
    let search = config.search();
    let sidecars = todo
        .par_iter()
        .map(|entry| {
            with_context(
                entry,
                read_frames(&entry.frames_path, config.frame_format)
                    .and_then(|frames| estimate_sequence(&frames, &search))
                    .and_then(|fields| format_mv_sidecar(&fields)),
            )
        })
        .collect::<Result<Vec<String>>>()?;

    let mut emitter = Emitter::new();
    let mut entries = Vec::with_capacity(manifest.len());
    let mut skipped = Vec::new();
    let mut todo_iter = todo.iter().zip(sidecars).peekable();
    for entry in &manifest.entries {
        let mut updated = entry.clone();
        updated.frames_path = absolute(&entry.frames_path)?;
        match todo_iter.peek() {
            Some((e, _)) if e.clip_id == entry.clip_id => {
                let (_, text) = todo_iter.next().expect("peeked");
                let name = format!("{}.mv.csv", entry.clip_id);
                emitter.add(out_dir.join(&name), text);
                updated.mv_path = Some(PathBuf::from(name));
            }
            _ => {
                skipped.push(entry.clip_id.clone());
                updated.mv_path = entry.mv_path.as_deref().map(absolute).transpose()?;
            }
        }
        entries.push(updated);
    }
    let written = emitter.paths();
    emitter.add(out_manifest.clone(), format_manifest(&CorpusManifest { entries }));
    emitter.commit(out_dir)?;
    Ok(EstimateSummary {
        written,
        skipped,
        manifest: out_manifest,
    })
}

// ------------------------------------------------------------------- stats

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipReport {
    #[serde(flatten)]
    pub descriptor: ClipDescriptor,
    pub mv_source: MvSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub class_label: String,
    pub clips: Vec<String>,
    pub heatmap: HeatmapGrid,
    pub heatmap_file: String,
    pub regional: RegionalProfile,
    pub direction: DirectionHistogram,
    /// `None` when every clip is shorter than the segment count.
    pub evolution: Option<EvolutionProfile>,
    /// Clips left out of the evolution profile for being too short.
    pub evolution_skipped: Vec<String>,
    pub glyph_clip: String,
    pub glyphs: FlowGlyphGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub tool: String,
    pub version: String,
    pub config: AnalysisConfig,
    pub conventions: Conventions,
    pub clips: Vec<ClipReport>,
    pub classes: Vec<ClassSummary>,
}

/// File stem for a class label: anything outside `[A-Za-z0-9_-]` becomes `_`.
pub fn class_file_stem(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' })
        .collect()
}

fn summarize_class(label: &str, clips: &[&ClipAnalysis], config: &AnalysisConfig) -> Result<ClassSummary> {
    if clips.is_empty() {
        return Err(Error::Empty(format!("class `{label}` has no clips")));
    }
    let mags: Vec<Vec<MagnitudeField>> = clips.iter().map(|c| c.magnitudes.clone()).collect();
    let heatmap = class_mean_heatmap(&mags, config.grid)?.normalize();
    let regional = regional_profile(&mags, config.grid)?;

    let mut counts = vec![0u64; config.dir_bins];
    for c in clips {
        for (acc, v) in counts.iter_mut().zip(&c.direction_counts) {
            *acc += v;
        }
    }
    let direction = DirectionHistogram::from_counts(counts)?;

    let (long, short): (Vec<&&ClipAnalysis>, Vec<&&ClipAnalysis>) = clips
        .iter()
        .partition(|c| c.descriptor.frames.len() >= config.segments);
    let evolution = if long.is_empty() {
        None
    } else {
        let series: Vec<Vec<f64>> = long.iter().map(|c| c.descriptor.means()).collect();
        Some(motion_evolution(&series, config.segments)?)
    };

    let energies: Vec<f64> = clips.iter().map(|c| c.descriptor.mean_magnitude).collect();
    let rep = clips[representative_frame(&energies)?];
    let glyphs = representative_glyphs(&rep.fields, config.grid, config.glyph_lattice, config.glyph_eps)?;

    Ok(ClassSummary {
        class_label: label.to_string(),
        clips: clips.iter().map(|c| c.descriptor.clip_id.clone()).collect(),
        heatmap,
        heatmap_file: format!("heatmap_{}.pgm", class_file_stem(label)),
        regional,
        direction,
        evolution,
        evolution_skipped: short.iter().map(|c| c.descriptor.clip_id.clone()).collect(),
        glyph_clip: rep.descriptor.clip_id.clone(),
        glyphs,
    })
}

fn check_stats_invariants(report: &AnalysisReport) -> Result<()> {
    for class in &report.classes {
        let total: f64 = class.regional.shares.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Invariant(format!(
                "regional shares of `{}` sum to {total}",
                class.class_label
            )));
        }
        if !class.direction.empty {
            let total: f64 = class.direction.probabilities.iter().sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::Invariant(format!(
                    "direction histogram of `{}` sums to {total}",
                    class.class_label
                )));
            }
        }
        if class.heatmap.values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Invariant(format!(
                "heatmap of `{}` leaves [0, 1]",
                class.class_label
            )));
        }
    }
    Ok(())
}

/// All statistics of one corpus, without touching the filesystem for output.
pub fn analyze_corpus(manifest: &CorpusManifest, config: &AnalysisConfig) -> Result<AnalysisReport> {
    config.validate()?;
    if manifest.is_empty() {
        return Err(Error::Empty("manifest lists no clips".into()));
    }
    let analyses = map_clips(manifest, config, |m| analyze_clip(m, config))?;
    let labels = manifest.classes();
    let mut stems = std::collections::HashSet::new();
    for label in &labels {
        if !stems.insert(class_file_stem(label)) {
            return Err(Error::InvalidArgument(format!(
                "class labels collide on file name heatmap_{}.pgm",
                class_file_stem(label)
            )));
        }
    }
    let classes = labels
        .par_iter()
        .map(|label| {
            let members: Vec<&ClipAnalysis> = analyses
                .iter()
                .filter(|a| &a.descriptor.class_label == label)
                .collect();
            summarize_class(label, &members, config)
        })
        .collect::<Result<Vec<_>>>()?;
    let report = AnalysisReport {
        tool: TOOL_NAME.into(),
        version: TOOL_VERSION.into(),
        config: config.clone(),
        conventions: Conventions::default(),
        clips: analyses
            .into_iter()
            .map(|a| ClipReport {
                descriptor: a.descriptor,
                mv_source: a.source,
            })
            .collect(),
        classes,
    };
    check_stats_invariants(&report)?;
    Ok(report)
}

fn fmt_f(v: f64) -> String {
    format!("{v}")
}

pub fn stats_files(report: &AnalysisReport, out_dir: &Path) -> Result<Emitter> {
    let mut e = Emitter::new();
    e.add(out_dir.join("report.json"), to_json(report)?);
    e.add(
        out_dir.join("clip_stats.csv"),
        csv_bytes(
            &["clip_id", "class", "M_i", "H_i"],
            report.clips.iter().map(|c| {
                vec![
                    c.descriptor.clip_id.clone(),
                    c.descriptor.class_label.clone(),
                    fmt_f(c.descriptor.mean_magnitude),
                    fmt_f(c.descriptor.mean_entropy),
                ]
            }),
        )?,
    );
    e.add(
        out_dir.join("frame_stats.csv"),
        csv_bytes(
            &["clip_id", "frame", "S_t", "mean", "entropy"],
            report.clips.iter().flat_map(|c| {
                c.descriptor.frames.iter().enumerate().map(move |(t, f)| {
                    vec![
                        c.descriptor.clip_id.clone(),
                        t.to_string(),
                        fmt_f(f.sum),
                        fmt_f(f.mean),
                        fmt_f(f.entropy),
                    ]
                })
            }),
        )?,
    );
    e.add(
        out_dir.join("direction_hist.csv"),
        csv_bytes(
            &["class", "bin", "theta_lo", "theta_hi", "count", "probability"],
            report.classes.iter().flat_map(|c| {
                let d = &c.direction;
                (0..d.bins).map(move |k| {
                    vec![
                        c.class_label.clone(),
                        k.to_string(),
                        fmt_f(d.edges[k]),
                        fmt_f(d.edges[k + 1]),
                        d.counts[k].to_string(),
                        fmt_f(d.probabilities[k]),
                    ]
                })
            }),
        )?,
    );
    e.add(
        out_dir.join("regional.csv"),
        csv_bytes(
            &["class", "region_row", "region_col", "mean", "share"],
            report.classes.iter().flat_map(|c| {
                let r = &c.regional;
                (0..r.means.len()).map(move |k| {
                    vec![
                        c.class_label.clone(),
                        (k / REGION_LATTICE).to_string(),
                        (k % REGION_LATTICE).to_string(),
                        fmt_f(r.means[k]),
                        fmt_f(r.shares[k]),
                    ]
                })
            }),
        )?,
    );
    e.add(
        out_dir.join("evolution.csv"),
        csv_bytes(
            &["class", "segment", "tau", "mean"],
            report.classes.iter().flat_map(|c| {
                c.evolution.iter().flat_map(move |ev| {
                    (0..ev.segments).map(move |j| {
                        vec![
                            c.class_label.clone(),
                            (j + 1).to_string(),
                            fmt_f(ev.tau[j]),
                            fmt_f(ev.means[j]),
                        ]
                    })
                })
            }),
        )?,
    );
    for c in &report.classes {
        e.add(out_dir.join(&c.heatmap_file), encode_heatmap_pgm(&c.heatmap)?);
    }
    Ok(e)
}

/// `report.json`, the CSV projections and one heatmap PGM per class.
pub fn cmd_stats(manifest_path: &Path, out_dir: &Path, config: &AnalysisConfig) -> Result<AnalysisReport> {
    config.validate()?;
    let manifest = load_corpus(manifest_path)?;
    let report = analyze_corpus(&manifest, config)?;
    stats_files(&report, out_dir)?.commit(out_dir)?;
    Ok(report)
}

// ----------------------------------------------------------------- compare

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelComparison {
    pub model: String,
    pub clips: usize,
    pub mv_sum: DivergenceReport,
    pub motion_entropy: DivergenceReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub tool: String,
    pub version: String,
    pub config: AnalysisConfig,
    pub conventions: Conventions,
    pub reference_label: String,
    pub reference_clips: usize,
    pub columns: Vec<String>,
    pub models: Vec<ModelComparison>,
    /// Models × columns, in `columns` order.
    pub raw: Vec<Vec<f64>>,
    pub normalized: NormalizedMatrix,
}

pub const REFERENCE_LABEL: &str = "real";

/// Divergences of every generated class against the pooled real corpus.
pub fn compare_descriptors(
    real: &[ClipDescriptor],
    generated: &[ClipDescriptor],
    config: &AnalysisConfig,
) -> Result<CompareReport> {
    config.validate()?;
    if real.is_empty() || generated.is_empty() {
        return Err(Error::Empty("both corpora need at least one clip".into()));
    }
    let mut labels: Vec<String> = Vec::new();
    for d in generated {
        if !labels.contains(&d.class_label) {
            labels.push(d.class_label.clone());
        }
    }
    let models = labels
        .iter()
        .map(|label| {
            let members: Vec<ClipDescriptor> = generated
                .iter()
                .filter(|d| &d.class_label == label)
                .cloned()
                .collect();
            let report = |family| {
                divergence_report(
                    real,
                    &members,
                    family,
                    config.granularity,
                    config.div_bins,
                    REFERENCE_LABEL,
                    label,
                )
            };
            Ok(ModelComparison {
                model: label.clone(),
                clips: members.len(),
                mv_sum: report(StatFamily::MvSum)?,
                motion_entropy: report(StatFamily::MotionEntropy)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let columns = matrix_columns();
    let raw: Vec<Vec<f64>> = models
        .iter()
        .map(|m| m.mv_sum.values().into_iter().chain(m.motion_entropy.values()).collect())
        .collect();
    for (m, row) in models.iter().zip(&raw) {
        if row.iter().any(|v| !v.is_finite() || *v < 0.0) || m.mv_sum.js > 1.0 || m.motion_entropy.js > 1.0 {
            return Err(Error::Invariant(format!("divergences of `{}` out of range: {row:?}", m.model)));
        }
    }
    let normalized = normalize_matrix(labels, columns.clone(), &raw)?;
    Ok(CompareReport {
        tool: TOOL_NAME.into(),
        version: TOOL_VERSION.into(),
        config: config.clone(),
        conventions: Conventions::default(),
        reference_label: REFERENCE_LABEL.into(),
        reference_clips: real.len(),
        columns,
        models,
        raw,
        normalized,
    })
}

fn matrix_csv(columns: &[String], models: &[String], rows: &[Vec<f64>]) -> Result<Vec<u8>> {
    let header: Vec<&str> = std::iter::once("model").chain(columns.iter().map(String::as_str)).collect();
    csv_bytes(
        &header,
        models.iter().zip(rows).map(|(m, row)| {
            std::iter::once(m.clone()).chain(row.iter().map(|v| fmt_f(*v))).collect()
        }),
    )
}

pub fn compare_files(report: &CompareReport, out_dir: &Path) -> Result<Emitter> {
    let mut e = Emitter::new();
    e.add(out_dir.join("compare.json"), to_json(report)?);
    e.add(
        out_dir.join("divergences.csv"),
        matrix_csv(&report.columns, &report.normalized.models, &report.raw)?,
    );
    e.add(
        out_dir.join("normalized.csv"),
        matrix_csv(&report.columns, &report.normalized.models, &report.normalized.values)?,
    );
    Ok(e)
}

/// `compare.json`, `divergences.csv` and `normalized.csv`.
pub fn cmd_compare(
    real_manifest: &Path,
    gen_manifest: &Path,
    out_dir: &Path,
    config: &AnalysisConfig,
) -> Result<CompareReport> {
    config.validate()?;
    let real = load_corpus(real_manifest)?;
    let generated = load_corpus(gen_manifest)?;
    let describe = |m: &CorpusManifest| map_clips(m, config, |c| describe_clip(c, config));
    let report = compare_descriptors(&describe(&real)?, &describe(&generated)?, config)?;
    compare_files(&report, out_dir)?.commit(out_dir)?;
    Ok(report)
}

// --------------------------------------------------------------- calibrate

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RouteFractions {
    pub low: f64,
    pub mid: f64,
    pub high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub tool: String,
    pub version: String,
    pub config: AnalysisConfig,
    pub conventions: Conventions,
    pub density_source: DensitySource,
    /// Inter-coded frames that contributed a density.
    pub frames: usize,
    pub thresholds: RoutingThresholds,
    pub fractions: RouteFractions,
}

/// Routing density of every field that has at least one inter-coded block.
pub fn frame_densities(fields: &[MotionVectorField], config: &AnalysisConfig) -> Result<Vec<f64>> {
    fields
        .iter()
        .filter(|f| f.t_sign().as_slice().iter().any(|s| *s != 0))
        .map(|f| match config.density_source {
            DensitySource::Threshold => mask_density(&threshold_mask(&magnitude(f), config.tau)?),
            DensitySource::MafMask => mask_density(&directional_masks(f, config.q_mv)?),
        })
        .collect()
}

/// Calibrated thresholds and route fractions over a set of densities.
pub fn calibrate_densities(densities: &[f64], config: &AnalysisConfig) -> Result<CalibrationReport> {
    config.validate()?;
    if densities.is_empty() {
        return Err(Error::Empty("corpus has no inter-coded frames to calibrate on".into()));
    }
    let mut thresholds = calibrate_thresholds(densities, config.alpha_low, config.alpha_high, config.epsilon)?;
    if config.density_source == DensitySource::Threshold {
        thresholds.tau = Some(config.tau);
    }
    let [low, mid, high] = route_fractions(densities, &thresholds)?;
    if low + mid + high != 1.0 {
        return Err(Error::Invariant(format!("route fractions sum to {}", low + mid + high)));
    }
    Ok(CalibrationReport {
        tool: TOOL_NAME.into(),
        version: TOOL_VERSION.into(),
        config: config.clone(),
        conventions: Conventions::default(),
        density_source: config.density_source,
        frames: densities.len(),
        thresholds,
        fractions: RouteFractions { low, mid, high },
    })
}

/// `thresholds.json`: calibrated `p_low`, `p_high` and the route fractions.
pub fn cmd_calibrate(manifest_path: &Path, out_dir: &Path, config: &AnalysisConfig) -> Result<CalibrationReport> {
    config.validate()?;
    let manifest = load_corpus(manifest_path)?;
    let per_clip = map_clips(&manifest, config, |m| frame_densities(&m.fields, config))?;
    let densities: Vec<f64> = per_clip.into_iter().flatten().collect();
    let report = calibrate_densities(&densities, config)?;
    let mut e = Emitter::new();
    e.add(out_dir.join("thresholds.json"), to_json(&report)?);
    e.commit(out_dir)?;
    Ok(report)
}

// --------------------------------------------------------------------- PGM

/// ASCII (P2) PGM of a normalised heatmap, one image row per line, samples
/// `round(255·h)`.
pub fn encode_heatmap_pgm(heatmap: &HeatmapGrid) -> Result<String> {
    let n = heatmap.size;
    if heatmap.values.len() != n * n || n == 0 {
        return Err(Error::DimensionMismatch(format!(
            "heatmap of size {n} holds {} values",
            heatmap.values.len()
        )));
    }
    if heatmap.values.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidArgument("heatmap must be normalised to [0, 1]".into()));
    }
    let mut out = format!("P2\n{n} {n}\n255\n");
    for r in 0..n {
        let row: Vec<String> = (0..n)
            .map(|c| ((heatmap.get(r, c) * 255.0).round() as u8).to_string())
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    Ok(out)
}

pub fn export_heatmap_pgm(heatmap: &HeatmapGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_heatmap_pgm(heatmap)?).map_err(|e| Error::io(path, e))
}

/// Parses a P2 PGM into its samples and maxval. Comments (`#` to end of
/// line) are allowed anywhere whitespace is.
pub fn parse_pgm(text: &str) -> Result<(Grid<u16>, u16)> {
    let mut tokens = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(str::split_whitespace);
    if tokens.next() != Some("P2") {
        return Err(Error::Parse {
            line: 1,
            message: "expected P2 magic".into(),
        });
    }
    let mut number = |what: &str| -> Result<usize> {
        tokens
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::Parse {
                line: 0,
                message: format!("missing or invalid {what}"),
            })
    };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("maxval")?;
    if maxval == 0 || maxval > u16::MAX as usize {
        return Err(Error::Parse {
            line: 0,
            message: format!("maxval {maxval} out of range"),
        });
    }
    let mut data = Vec::with_capacity(width * height);
    for _ in 0..width * height {
        let v = number("sample")?;
        if v > maxval {
            return Err(Error::Parse {
                line: 0,
                message: format!("sample {v} exceeds maxval {maxval}"),
            });
        }
        data.push(v as u16);
    }
    Ok((Grid::from_vec(height, width, data)?, maxval as u16))
}

/// Heatmap values recovered from a square PGM, `sample / maxval`.
pub fn heatmap_from_pgm(text: &str) -> Result<HeatmapGrid> {
    let (grid, maxval) = parse_pgm(text)?;
    if grid.rows() != grid.cols() {
        return Err(Error::DimensionMismatch(format!(
            "heatmap PGM is {}x{}, expected square",
            grid.cols(),
            grid.rows()
        )));
    }
    Ok(HeatmapGrid {
        size: grid.rows(),
        values: grid.as_slice().iter().map(|&v| v as f64 / maxval as f64).collect(),
        normalized: true,
    })
}

/// One-line human summary per command, used by the CLI.
pub fn summary_line(label: &str, out_dir: &Path, files: usize) -> String {
    format!("{label}: wrote {files} file(s) to {}", out_dir.display())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::media_io::{write_mv_sidecar, write_y4m, Frame, FrameSequence};

    fn moving_clip(dir: &Path, name: &str, frames: usize, step: usize) -> PathBuf {
        let (w, h) = (32, 32);
        let seq = FrameSequence::new(
            (0..frames)
                .map(|t| {
                    let data = (0..w * h)
                        .map(|k| {
                            let (x, y) = (k % w, k / w);
                            (((x + t * step) * 37 + y * 11) % 251) as u8
                        })
                        .collect();
                    Frame::gray(w, h, data).unwrap()
                })
                .collect(),
        )
        .unwrap();
        let path = dir.join(format!("{name}.y4m"));
        write_y4m(&seq, &path).unwrap();
        path
    }

    fn small_config() -> AnalysisConfig {
        AnalysisConfig {
            block_size: 8,
            search_radius: 4,
            ..AnalysisConfig::default()
        }
    }

    #[test]
    fn config_round_trips_through_report_json() {
        let config = AnalysisConfig {
            entropy_bins: 32,
            granularity: Granularity::Clip,
            ..AnalysisConfig::default()
        };
        let wrapped = serde_json::json!({ "tool": "mvlens", "config": config });
        let back = AnalysisConfig::from_json(&wrapped.to_string()).unwrap();
        assert_eq!(back, config);
        let partial = AnalysisConfig::from_json(r#"{"q_mv": 0.5}"#).unwrap();
        assert_eq!(partial.q_mv, 0.5);
        assert_eq!(partial.block_size, 16);
        assert!(AnalysisConfig::from_json(r#"{"q_mv": 1.5}"#).is_err());
        assert!(AnalysisConfig::from_json(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn pgm_examples() {
        let zeros = HeatmapGrid {
            size: 56,
            values: vec![0.0; 56 * 56],
            normalized: true,
        };
        let text = encode_heatmap_pgm(&zeros).unwrap();
        assert!(text.starts_with("P2\n56 56\n255\n"));
        let body: Vec<&str> = text.lines().skip(3).flat_map(str::split_whitespace).collect();
        assert_eq!(body.len(), 56 * 56);
        assert!(body.iter().all(|t| *t == "0"));

        let mut one = zeros.clone();
        one.values[56 * 3 + 7] = 1.0;
        let (g, maxval) = parse_pgm(&encode_heatmap_pgm(&one).unwrap()).unwrap();
        assert_eq!(maxval, 255);
        assert_eq!(g.as_slice().iter().filter(|v| **v == 255).count(), 1);
        assert_eq!(*g.get(3, 7), 255);
        assert_eq!(g.as_slice().iter().filter(|v| **v == 0).count(), 56 * 56 - 1);

        let ramp = HeatmapGrid {
            size: 4,
            values: (0..16).map(|k| k as f64 / 15.0).collect(),
            normalized: true,
        };
        let back = heatmap_from_pgm(&encode_heatmap_pgm(&ramp).unwrap()).unwrap();
        for (a, b) in ramp.values.iter().zip(&back.values) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
        assert!(encode_heatmap_pgm(&HeatmapGrid { size: 1, values: vec![1.5], normalized: true }).is_err());
    }

    #[test]
    fn pgm_parser_rejects_junk() {
        assert!(parse_pgm("P5\n1 1\n255\n0\n").is_err());
        assert!(parse_pgm("P2\n2 1\n255\n0\n").is_err());
        assert!(parse_pgm("P2\n1 1\n7\n9\n").is_err());
        let (g, _) = parse_pgm("P2 # c\n1 2\n# x\n9\n3 4\n").unwrap();
        assert_eq!(g.as_slice(), &[3, 4]);
    }

    #[test]
    fn stats_on_two_frame_clip() {
        let dir = tempfile::tempdir().unwrap();
        moving_clip(dir.path(), "a", 2, 2);
        fs::write(dir.path().join("m.csv"), "clip_id,class_label,frames_path,mv_path\na,real,a.y4m,\n").unwrap();
        let out = dir.path().join("out");
        let report = cmd_stats(&dir.path().join("m.csv"), &out, &small_config()).unwrap();
        assert_eq!(report.clips[0].mv_source, MvSource::Estimated);
        let frame_csv = fs::read_to_string(out.join("frame_stats.csv")).unwrap();
        assert_eq!(frame_csv.lines().count(), 3);
        assert!(out.join("heatmap_real.pgm").is_file());
        // two frames are fewer than five segments
        assert!(report.classes[0].evolution.is_none());
        assert_eq!(report.classes[0].evolution_skipped, vec!["a".to_string()]);
    }

    #[test]
    fn sidecar_and_estimate_agree() {
        let dir = tempfile::tempdir().unwrap();
        let frames = moving_clip(dir.path(), "a", 4, 3);
        let config = small_config();
        let seq = read_frames(&frames, FormatHint::Auto).unwrap();
        let fields = estimate_sequence(&seq, &config.search()).unwrap();
        write_mv_sidecar(&fields, dir.path().join("a.mv.csv")).unwrap();
        let entry = |mv: Option<PathBuf>| ManifestEntry {
            clip_id: "a".into(),
            class_label: "x".into(),
            frames_path: frames.clone(),
            mv_path: mv,
        };
        let est = load_clip_motion(&entry(None), &config).unwrap();
        let side = load_clip_motion(&entry(Some(dir.path().join("a.mv.csv"))), &config).unwrap();
        assert_eq!(est.fields, side.fields);
        assert_eq!(side.source, MvSource::Sidecar);
        assert_eq!(describe_clip(&est, &config).unwrap(), describe_clip(&side, &config).unwrap());
    }

    #[test]
    fn estimate_skips_existing_and_forces() {
        let dir = tempfile::tempdir().unwrap();
        moving_clip(dir.path(), "a", 3, 1);
        moving_clip(dir.path(), "b", 3, 2);
        fs::write(dir.path().join("old.csv"), "frame,block_i,block_j,dx,dy,t_sign\n").unwrap();
        fs::write(
            dir.path().join("m.csv"),
            "clip_id,class_label,frames_path,mv_path\na,real,a.y4m,\nb,real,b.y4m,old.csv\n",
        )
        .unwrap();
        let out = dir.path().join("out");
        let s = cmd_estimate(&dir.path().join("m.csv"), &out, &small_config(), false).unwrap();
        assert_eq!(s.written, vec![out.join("a.mv.csv")]);
        assert_eq!(s.skipped, vec!["b".to_string()]);
        let again = load_manifest(out.join("manifest.csv")).unwrap();
        assert!(again.entries.iter().all(|e| e.mv_path.is_some()));
        let s = cmd_estimate(&dir.path().join("m.csv"), &out, &small_config(), true).unwrap();
        assert_eq!(s.written.len(), 2);
    }

    #[test]
    fn estimate_failure_leaves_nothing() {
        let dir = tempfile::tempdir().unwrap();
        moving_clip(dir.path(), "a", 3, 1);
        fs::write(dir.path().join("bad.y4m"), b"garbage").unwrap();
        fs::write(
            dir.path().join("m.csv"),
            "clip_id,class_label,frames_path,mv_path\na,real,a.y4m,\nbad,real,bad.y4m,\n",
        )
        .unwrap();
        let out = dir.path().join("out");
        let err = cmd_estimate(&dir.path().join("m.csv"), &out, &small_config(), false).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(!out.exists());
    }

    #[test]
    fn calibrate_static_corpus_floors_at_epsilon() {
        let dir = tempfile::tempdir().unwrap();
        moving_clip(dir.path(), "s", 4, 0);
        fs::write(dir.path().join("m.csv"), "clip_id,class_label,frames_path,mv_path\ns,real,s.y4m,\n").unwrap();
        let out = dir.path().join("out");
        let r = cmd_calibrate(&dir.path().join("m.csv"), &out, &small_config()).unwrap();
        assert_eq!(r.frames, 3);
        assert_eq!(r.thresholds.p_low, DEFAULT_EPSILON);
        assert_eq!(r.thresholds.tau, Some(DEFAULT_TAU));
        let f = r.fractions;
        assert_eq!(f.low + f.mid + f.high, 1.0);
        assert_eq!(f.low, 1.0);
        let json: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join("thresholds.json")).unwrap()).unwrap();
        for key in ["alpha_low", "alpha_high", "epsilon", "q_mv"] {
            assert!(json["config"].get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn compare_self_is_zero() {
        let d = |id: &str, class: &str, v: f64| {
            ClipDescriptor::from_frames(
                id,
                class,
                vec![crate::motion_stats::FrameStats { sum: v, mean: v / 4.0, entropy: v.sqrt() }],
            )
            .unwrap()
        };
        let real = vec![d("a", "real", 1.0), d("b", "real", 4.0), d("c", "real", 9.0)];
        let generated: Vec<_> = real
            .iter()
            .map(|c| ClipDescriptor { class_label: "m".into(), ..c.clone() })
            .collect();
        let r = compare_descriptors(&real, &generated, &AnalysisConfig::default()).unwrap();
        assert_eq!(r.raw, vec![vec![0.0; 8]]);
        assert_eq!(r.normalized.values, vec![vec![0.0; 8]]);
        assert_eq!(r.columns.len(), 8);
    }
}
