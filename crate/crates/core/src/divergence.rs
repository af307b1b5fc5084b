//! Comparing real and generated motion statistics.
//!
//! KL and JS act on histograms that share one set of equal-width edges; all
//! information quantities are in bits. Wasserstein-1 is computed exactly from
//! the raw samples.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion_stats::{bin_index, ClipDescriptor};

pub const DEFAULT_DIVERGENCE_BINS: usize = 50;
/// Mass added to every bin before KL so empty bins stay finite.
pub const KL_SMOOTHING: f64 = 1e-10;

/// Column names of one statistic family, in report order.
pub const METRIC_NAMES: [&str; 4] = ["KL(P‖Q)", "KL(Q‖P)", "JS", "WD"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalHistogram {
    pub lo: f64,
    pub hi: f64,
    pub probabilities: Vec<f64>,
    pub count: usize,
}

impl EmpiricalHistogram {
    pub fn bins(&self) -> usize {
        self.probabilities.len()
    }

    /// Histogram from explicit probabilities over `[lo, hi]`.
    pub fn from_probabilities(lo: f64, hi: f64, probabilities: Vec<f64>) -> Result<Self> {
        if !(lo < hi) || probabilities.is_empty() {
            return Err(Error::InvalidArgument("histogram needs lo < hi and >= 1 bin".into()));
        }
        let total: f64 = probabilities.iter().sum();
        if probabilities.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "probabilities must be nonnegative and sum to 1 (sum {total})"
            )));
        }
        Ok(EmpiricalHistogram {
            lo,
            hi,
            probabilities,
            count: 0,
        })
    }

    fn same_edges(&self, other: &Self) -> Result<()> {
        if self.lo != other.lo || self.hi != other.hi || self.bins() != other.bins() {
            return Err(Error::DimensionMismatch(format!(
                "histogram edges [{}, {}]x{} vs [{}, {}]x{}",
                self.lo,
                self.hi,
                self.bins(),
                other.lo,
                other.hi,
                other.bins()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramPair {
    pub p: EmpiricalHistogram,
    pub q: EmpiricalHistogram,
    /// Every sample in both sets had the same value; both histograms are a
    /// single bin of mass 1 centred on it.
    pub degenerate: bool,
}

fn bin_samples(samples: &[f64], lo: f64, hi: f64, bins: usize) -> EmpiricalHistogram {
    let mut counts = vec![0usize; bins];
    for &x in samples {
        counts[bin_index(x, lo, hi, bins)] += 1;
    }
    let n = samples.len() as f64;
    EmpiricalHistogram {
        lo,
        hi,
        probabilities: counts.iter().map(|&c| c as f64 / n).collect(),
        count: samples.len(),
    }
}

fn check_samples(samples: &[f64], name: &str) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Empty(format!("{name} sample set")));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument(format!("{name} contains non-finite samples")));
    }
    Ok(())
}

/// Histograms of both sample sets on shared equal-width edges spanning the
/// union's `[min, max]`.
pub fn build_histogram_pair(samples_p: &[f64], samples_q: &[f64], bins: usize) -> Result<HistogramPair> {
    check_samples(samples_p, "P")?;
    check_samples(samples_q, "Q")?;
    if bins < 2 {
        return Err(Error::InvalidArgument("need at least 2 bins".into()));
    }
    let all = samples_p.iter().chain(samples_q);
    let lo = all.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        let single = |n: usize| EmpiricalHistogram {
            lo: lo - 0.5,
            hi: lo + 0.5,
            probabilities: vec![1.0],
            count: n,
        };
        return Ok(HistogramPair {
            p: single(samples_p.len()),
            q: single(samples_q.len()),
            degenerate: true,
        });
    }
    Ok(HistogramPair {
        p: bin_samples(samples_p, lo, hi, bins),
        q: bin_samples(samples_q, lo, hi, bins),
        degenerate: false,
    })
}

/// `Σ P log2(P/Q)` over the support of `P`, after adding [`KL_SMOOTHING`] to
/// every bin of both histograms and renormalising.
pub fn kl(p: &EmpiricalHistogram, q: &EmpiricalHistogram) -> Result<f64> {
    p.same_edges(q)?;
    let k = p.bins() as f64;
    let norm = 1.0 + k * KL_SMOOTHING;
    let value: f64 = p
        .probabilities
        .iter()
        .zip(&q.probabilities)
        .filter(|(pk, _)| **pk > 0.0)
        .map(|(pk, qk)| {
            let ps = (pk + KL_SMOOTHING) / norm;
            let qs = (qk + KL_SMOOTHING) / norm;
            ps * (ps / qs).log2()
        })
        .sum();
    Ok(value.max(0.0))
}

/// Jensen–Shannon divergence in bits against the midpoint `M = (P+Q)/2`.
pub fn js(p: &EmpiricalHistogram, q: &EmpiricalHistogram) -> Result<f64> {
    p.same_edges(q)?;
    let term = |a: f64, m: f64| if a > 0.0 { a * (a / m).log2() } else { 0.0 };
    let value: f64 = p
        .probabilities
        .iter()
        .zip(&q.probabilities)
        .map(|(&a, &b)| {
            let m = (a + b) / 2.0;
            (term(a, m) + term(b, m)) / 2.0
        })
        .sum();
    Ok(value.clamp(0.0, 1.0))
}

/// Exact 1-D Wasserstein-1 distance, `∫ |F_P − F_Q|`, by merging the sorted
/// samples.
pub fn wasserstein1(samples_p: &[f64], samples_q: &[f64]) -> Result<f64> {
    check_samples(samples_p, "P")?;
    check_samples(samples_q, "Q")?;
    let mut a = samples_p.to_vec();
    let mut b = samples_q.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as i128, b.len() as i128);
    let (mut i, mut j) = (0usize, 0usize);
    let mut x = a[0].min(b[0]);
    let mut total = 0.0;
    while i < a.len() || j < b.len() {
        // Consume every sample equal to the current breakpoint.
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        let next = match (a.get(i), b.get(j)) {
            (Some(&u), Some(&v)) => u.min(v),
            (Some(&u), None) => u,
            (None, Some(&v)) => v,
            (None, None) => break,
        };
        // F_P = i/n and F_Q = j/m on [x, next).
        let gap = (i as i128 * m - j as i128 * n).unsigned_abs() as f64 / (n * m) as f64;
        total += gap * (next - x);
        x = next;
    }
    Ok(total)
}

/// Histogram-based W1 (sum of |CDF difference| × bin width), for ablations.
pub fn wasserstein1_binned(p: &EmpiricalHistogram, q: &EmpiricalHistogram) -> Result<f64> {
    p.same_edges(q)?;
    let width = (p.hi - p.lo) / p.bins() as f64;
    let (mut cp, mut cq, mut total) = (0.0, 0.0, 0.0);
    for (a, b) in p.probabilities.iter().zip(&q.probabilities) {
        cp += a;
        cq += b;
        total += (cp - cq).abs() * width;
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatFamily {
    MvSum,
    MotionEntropy,
}

impl StatFamily {
    pub const ALL: [StatFamily; 2] = [StatFamily::MvSum, StatFamily::MotionEntropy];

    pub fn as_str(self) -> &'static str {
        match self {
            StatFamily::MvSum => "mv_sum",
            StatFamily::MotionEntropy => "motion_entropy",
        }
    }
}

/// Which samples feed a comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    /// Every frame of every clip pooled as an independent sample (`S_t`, `H_t`).
    #[default]
    Frame,
    /// One sample per clip (`M_i`, `H_i`).
    Clip,
}

/// Samples of `family` drawn from `clips` at the given granularity.
pub fn family_samples(clips: &[ClipDescriptor], family: StatFamily, granularity: Granularity) -> Vec<f64> {
    match (family, granularity) {
        (StatFamily::MvSum, Granularity::Frame) => clips.iter().flat_map(|c| c.sums()).collect(),
        (StatFamily::MotionEntropy, Granularity::Frame) => {
            clips.iter().flat_map(|c| c.entropies()).collect()
        }
        (StatFamily::MvSum, Granularity::Clip) => clips.iter().map(|c| c.mean_magnitude).collect(),
        (StatFamily::MotionEntropy, Granularity::Clip) => {
            clips.iter().map(|c| c.mean_entropy).collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub family: StatFamily,
    pub granularity: Granularity,
    pub model_label: String,
    pub reference_label: String,
    pub bins: usize,
    pub kl_pq: f64,
    pub kl_qp: f64,
    pub js: f64,
    pub w1: f64,
    pub degenerate_range: bool,
}

impl DivergenceReport {
    /// Values in [`METRIC_NAMES`] order.
    pub fn values(&self) -> [f64; 4] {
        [self.kl_pq, self.kl_qp, self.js, self.w1]
    }
}

/// All four divergences between reference samples `P` and model samples `Q`.
pub fn divergence_from_samples(
    reference: &[f64],
    model: &[f64],
    bins: usize,
) -> Result<(f64, f64, f64, f64, bool)> {
    let pair = build_histogram_pair(reference, model, bins)?;
    Ok((
        kl(&pair.p, &pair.q)?,
        kl(&pair.q, &pair.p)?,
        js(&pair.p, &pair.q)?,
        wasserstein1(reference, model)?,
        pair.degenerate,
    ))
}

pub fn divergence_report(
    real: &[ClipDescriptor],
    model: &[ClipDescriptor],
    family: StatFamily,
    granularity: Granularity,
    bins: usize,
    reference_label: &str,
    model_label: &str,
) -> Result<DivergenceReport> {
    let p = family_samples(real, family, granularity);
    let q = family_samples(model, family, granularity);
    let (kl_pq, kl_qp, js, w1, degenerate_range) = divergence_from_samples(&p, &q, bins)?;
    Ok(DivergenceReport {
        family,
        granularity,
        model_label: model_label.to_string(),
        reference_label: reference_label.to_string(),
        bins,
        kl_pq,
        kl_qp,
        js,
        w1,
        degenerate_range,
    })
}

/// Models × metrics matrix rescaled per column to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedMatrix {
    pub models: Vec<String>,
    pub metrics: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

/// Per-column min–max rescaling; constant columns map to 0.
pub fn normalize_matrix(models: Vec<String>, metrics: Vec<String>, raw: &[Vec<f64>]) -> Result<NormalizedMatrix> {
    if raw.len() != models.len() || raw.iter().any(|r| r.len() != metrics.len()) {
        return Err(Error::DimensionMismatch(format!(
            "{} models x {} metrics vs {} rows",
            models.len(),
            metrics.len(),
            raw.len()
        )));
    }
    let mut values = vec![vec![0.0; metrics.len()]; models.len()];
    for k in 0..metrics.len() {
        let col = raw.iter().map(|r| r[k]);
        let min = col.clone().fold(f64::INFINITY, f64::min);
        let max = col.fold(f64::NEG_INFINITY, f64::max);
        if max > min {
            for (row, out) in raw.iter().zip(values.iter_mut()) {
                out[k] = (row[k] - min) / (max - min);
            }
        }
    }
    Ok(NormalizedMatrix {
        models,
        metrics,
        values,
    })
}

/// Column labels `"<family> <metric>"` for both families.
pub fn matrix_columns() -> Vec<String> {
    StatFamily::ALL
        .iter()
        .flat_map(|f| METRIC_NAMES.iter().map(move |m| format!("{} {m}", f.as_str())))
        .collect()
}
