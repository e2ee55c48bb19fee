//! Calibration and robustness analytics over prediction records.
//!
//! Every aggregation is a fold whose partial states merge exactly: counts
//! are integers and real sums use [`ExactSum`], so results do not depend on
//! record order or on how a stream was split.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Location, Result};
use crate::respool::Resolution;

pub const DEFAULT_ECE_BINS: usize = 15;

/// One evaluated image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub image_id: String,
    pub label: u32,
    pub probs: Vec<f64>,
    pub eval_height: u32,
    pub eval_width: u32,
    pub embedding: Option<Vec<f64>>,
    pub epoch: Option<u32>,
}

impl PredictionRecord {
    pub fn resolution(&self) -> Resolution {
        Resolution::new(self.eval_height, self.eval_width)
    }

    /// Highest-probability class; ties go to the lowest index.
    pub fn predicted(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn confidence(&self) -> f64 {
        self.probs.get(self.predicted()).copied().unwrap_or(0.0)
    }

    pub fn is_correct(&self) -> bool {
        self.predicted() == self.label as usize
    }
}

/// Correctly rounded floating-point sum (Shewchuk's non-overlapping
/// partials). The result is independent of insertion order and partial
/// sums merge without error.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExactSum {
    partials: Vec<f64>,
}

impl ExactSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, mut x: f64) {
        let mut i = 0;
        for j in 0..self.partials.len() {
            let mut y = self.partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                self.partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        self.partials.truncate(i);
        self.partials.push(x);
    }

    pub fn merge(&mut self, other: &ExactSum) {
        for &p in &other.partials {
            self.add(p);
        }
    }

    pub fn negated(&self) -> ExactSum {
        ExactSum {
            partials: self.partials.iter().map(|p| -p).collect(),
        }
    }

    /// Exact absolute value. The sign of the correctly rounded value is the
    /// sign of the exact sum.
    pub fn abs(&self) -> ExactSum {
        if self.value() < 0.0 {
            self.negated()
        } else {
            self.clone()
        }
    }

    pub fn value(&self) -> f64 {
        let mut n = self.partials.len();
        if n == 0 {
            return 0.0;
        }
        n -= 1;
        let mut hi = self.partials[n];
        let mut lo = 0.0;
        while n > 0 {
            let x = hi;
            n -= 1;
            let y = self.partials[n];
            hi = x + y;
            let yr = hi - x;
            lo = y - yr;
            if lo != 0.0 {
                break;
            }
        }
        // Half-way case: correct the rounding using the next partial.
        if n > 0 && ((lo < 0.0 && self.partials[n - 1] < 0.0) || (lo > 0.0 && self.partials[n - 1] > 0.0)) {
            let y = lo * 2.0;
            let x = hi + y;
            let yr = x - hi;
            if y == yr {
                hi = x;
            }
        }
        hi
    }
}

impl FromIterator<f64> for ExactSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = ExactSum::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

pub fn exact_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    values.into_iter().collect::<ExactSum>().value()
}

/// Natural-log entropy `-sum p ln p` with `0 ln 0 = 0`.
pub fn entropy(probs: &[f64]) -> Result<f64> {
    if let Some((i, p)) = probs.iter().enumerate().find(|(_, p)| p.is_nan() || **p < 0.0) {
        return Err(Error::data(
            Location::field(format!("probs[{i}]")),
            format!("probability must be non-negative, got {p}"),
        ));
    }
    let h = exact_sum(probs.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()));
    Ok(h.max(0.0))
}

/// Population mean and standard deviation.
fn moments(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = exact_sum(values.iter().copied()) / n;
    let var = exact_sum(values.iter().map(|x| (x - mean) * (x - mean))) / n;
    (mean, var.sqrt())
}

/// Third standardized moment with population (1/N) moments.
pub fn skewness(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::data(
            Location::None,
            format!("skewness needs at least 2 values, got {}", values.len()),
        ));
    }
    let (mean, std) = moments(values);
    if std == 0.0 || !std.is_finite() {
        return Err(Error::data(Location::None, "skewness undefined: zero variance"));
    }
    let n = values.len() as f64;
    Ok(exact_sum(values.iter().map(|x| ((x - mean) / std).powi(3))) / n)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntropyStats {
    pub entropies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// `None` when the entropies have zero variance.
    pub skewness: Option<f64>,
}

pub fn entropy_stats(records: &[PredictionRecord]) -> Result<EntropyStats> {
    if records.is_empty() {
        return Err(Error::data(Location::None, "no records"));
    }
    let entropies = records
        .iter()
        .map(|r| entropy(&r.probs))
        .collect::<Result<Vec<_>>>()?;
    let (mean, std) = moments(&entropies);
    let skewness = skewness(&entropies).ok();
    Ok(EntropyStats {
        entropies,
        mean,
        std,
        skewness,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkewnessPoint {
    pub epoch: u32,
    pub records: usize,
    /// `None` marks a gap (zero-variance entropies).
    pub skewness: Option<f64>,
}

/// Entropy skewness per epoch, ordered by epoch. Zero-variance epochs become
/// gaps; an epoch without records is an error.
pub fn skewness_curve(dumps: &[(u32, Vec<PredictionRecord>)]) -> Result<Vec<SkewnessPoint>> {
    let mut out = Vec::with_capacity(dumps.len());
    for (epoch, records) in dumps {
        if records.is_empty() {
            return Err(Error::data(
                Location::field(format!("epoch {epoch}")),
                format!("no prediction records for epoch {epoch}"),
            ));
        }
        let entropies = records
            .iter()
            .map(|r| entropy(&r.probs))
            .collect::<Result<Vec<_>>>()?;
        out.push(SkewnessPoint {
            epoch: *epoch,
            records: records.len(),
            skewness: skewness(&entropies).ok(),
        });
    }
    out.sort_by_key(|p| p.epoch);
    Ok(out)
}

/// Splits records by their `epoch` tag (untagged records are an error).
pub fn group_by_epoch(records: Vec<PredictionRecord>) -> Result<Vec<(u32, Vec<PredictionRecord>)>> {
    let mut groups: BTreeMap<u32, Vec<PredictionRecord>> = BTreeMap::new();
    for r in records {
        let epoch = r.epoch.ok_or_else(|| {
            Error::data(
                Location::field(format!("record {}", r.image_id)),
                "record has no epoch tag",
            )
        })?;
        groups.entry(epoch).or_default().push(r);
    }
    Ok(groups.into_iter().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationBin {
    /// Confidence range `(lower, upper]`.
    pub lower: f64,
    pub upper: f64,
    pub mean_confidence: f64,
    pub accuracy: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationReport {
    pub num_bins: usize,
    pub per_bin: Vec<CalibrationBin>,
    /// `S / N` where `S = sum_k |correct_k - sum conf_k|` is rounded once
    /// from its exact value.
    pub ece: f64,
}

fn bin_edge(k: usize, num_bins: usize) -> f64 {
    k as f64 / num_bins as f64
}

/// Bin `k` covers the real interval `(k/n, (k+1)/n]`; confidence 0 falls
/// into bin 0. Membership is decided on the exact value of `confidence`, not
/// on rounded bin edges.
pub fn bin_index(confidence: f64, num_bins: usize) -> usize {
    let n = num_bins as f64;
    let p = confidence * n;
    // confidence * n == p + err exactly.
    let err = confidence.mul_add(n, -p);
    let mut ceil = p.ceil();
    if ceil == p && err > 0.0 {
        ceil += 1.0;
    }
    (ceil.max(1.0) as usize - 1).min(num_bins - 1)
}

/// Streaming ECE state. `merge` combines partial folds exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct EceAccumulator {
    num_bins: usize,
    counts: Vec<u64>,
    correct: Vec<u64>,
    confidence: Vec<ExactSum>,
}

impl EceAccumulator {
    pub fn new(num_bins: usize) -> Result<Self> {
        if num_bins == 0 {
            return Err(Error::config("bins", "need at least one bin"));
        }
        Ok(EceAccumulator {
            num_bins,
            counts: vec![0; num_bins],
            correct: vec![0; num_bins],
            confidence: vec![ExactSum::new(); num_bins],
        })
    }

    pub fn push(&mut self, record: &PredictionRecord) {
        self.push_prediction(record.confidence(), record.is_correct());
    }

    pub fn push_prediction(&mut self, confidence: f64, correct: bool) {
        let k = bin_index(confidence, self.num_bins);
        self.counts[k] += 1;
        self.correct[k] += u64::from(correct);
        self.confidence[k].add(confidence);
    }

    pub fn merge(&mut self, other: &EceAccumulator) -> Result<()> {
        if other.num_bins != self.num_bins {
            return Err(Error::Report(format!(
                "cannot merge {}-bin and {}-bin calibration folds",
                self.num_bins, other.num_bins
            )));
        }
        for k in 0..self.num_bins {
            self.counts[k] += other.counts[k];
            self.correct[k] += other.correct[k];
            self.confidence[k].merge(&other.confidence[k]);
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<CalibrationReport> {
        let total: u64 = self.counts.iter().sum();
        if total == 0 {
            return Err(Error::data(Location::None, "ECE over an empty record set"));
        }
        let mut gaps = ExactSum::new();
        let per_bin = (0..self.num_bins)
            .map(|k| {
                let count = self.counts[k];
                let (mean_confidence, accuracy) = if count == 0 {
                    (0.0, 0.0)
                } else {
                    let c = count as f64;
                    (self.confidence[k].value() / c, self.correct[k] as f64 / c)
                };
                // n_k/N * |acc_k - conf_k| == |correct_k - sum conf_k| / N
                let mut gap = self.confidence[k].negated();
                gap.add(self.correct[k] as f64);
                gaps.merge(&gap.abs());
                CalibrationBin {
                    lower: bin_edge(k, self.num_bins),
                    upper: bin_edge(k + 1, self.num_bins),
                    mean_confidence,
                    accuracy,
                    count,
                }
            })
            .collect();
        Ok(CalibrationReport {
            num_bins: self.num_bins,
            per_bin,
            ece: gaps.value() / total as f64,
        })
    }
}

pub fn ece(records: &[PredictionRecord], num_bins: usize) -> Result<CalibrationReport> {
    let mut acc = EceAccumulator::new(num_bins)?;
    for r in records {
        acc.push(r);
    }
    acc.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingGrouping {
    /// Variance of each image's embeddings across the resolutions it was evaluated at.
    PerImageAcrossResolutions,
    /// Variance across images at each evaluation resolution.
    #[default]
    PerResolutionAcrossImages,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmbeddingVariance {
    pub grouping: EmbeddingGrouping,
    /// Group key (image id, or `HxW`) to mean per-dimension population variance.
    pub groups: BTreeMap<String, f64>,
    /// Average over groups.
    pub mean: f64,
}

fn group_variance(members: &[&[f64]]) -> f64 {
    let dims = members[0].len();
    let n = members.len() as f64;
    let per_dim = (0..dims).map(|d| {
        let mean = exact_sum(members.iter().map(|e| e[d])) / n;
        exact_sum(members.iter().map(|e| (e[d] - mean) * (e[d] - mean))) / n
    });
    exact_sum(per_dim) / dims as f64
}

pub fn embedding_variance(records: &[PredictionRecord], grouping: EmbeddingGrouping) -> Result<EmbeddingVariance> {
    if records.is_empty() {
        return Err(Error::data(Location::None, "no records"));
    }
    let mut dim = None;
    let mut groups: BTreeMap<String, Vec<&[f64]>> = BTreeMap::new();
    for r in records {
        let emb = r.embedding.as_deref().ok_or_else(|| {
            Error::data(
                Location::field(format!("record {}", r.image_id)),
                "record has no embedding",
            )
        })?;
        if emb.is_empty() || *dim.get_or_insert(emb.len()) != emb.len() {
            return Err(Error::data(
                Location::field(format!("record {}", r.image_id)),
                "embeddings must be non-empty and of equal length",
            ));
        }
        let key = match grouping {
            EmbeddingGrouping::PerImageAcrossResolutions => r.image_id.clone(),
            EmbeddingGrouping::PerResolutionAcrossImages => r.resolution().to_string(),
        };
        groups.entry(key).or_default().push(emb);
    }
    let groups: BTreeMap<String, f64> = groups
        .into_iter()
        .map(|(k, members)| (k, group_variance(&members)))
        .collect();
    let mean = exact_sum(groups.values().copied()) / groups.len() as f64;
    Ok(EmbeddingVariance {
        grouping,
        groups,
        mean,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResolutionAccuracy {
    pub correct: u64,
    pub total: u64,
    pub accuracy: f64,
}

/// Top-1 accuracy per evaluation resolution.
pub fn accuracy_by_resolution(records: &[PredictionRecord]) -> Result<BTreeMap<Resolution, ResolutionAccuracy>> {
    if records.is_empty() {
        return Err(Error::data(Location::None, "no records"));
    }
    let mut counts: BTreeMap<Resolution, (u64, u64)> = BTreeMap::new();
    for r in records {
        let e = counts.entry(r.resolution()).or_default();
        e.0 += u64::from(r.is_correct());
        e.1 += 1;
    }
    Ok(counts
        .into_iter()
        .map(|(res, (correct, total))| {
            (
                res,
                ResolutionAccuracy {
                    correct,
                    total,
                    accuracy: correct as f64 / total as f64,
                },
            )
        })
        .collect())
}

/// Percent value rounded to hundredths, as an integer count of hundredths.
fn hundredths(v: f64) -> i64 {
    (v * 100.0).round() as i64
}

fn render_hundredths(h: i64) -> String {
    let sign = if h < 0 { "-" } else { "" };
    format!("{sign}{}.{:02}", h.abs() / 100, h.abs() % 100)
}

/// `"17.91 (+1.86)"`; a zero delta renders as `(0.0)`.
pub fn format_with_delta(value: f64, baseline: f64) -> String {
    let v = hundredths(value);
    let delta = v - hundredths(baseline);
    let delta = match delta {
        0 => "0.0".to_string(),
        d if d > 0 => format!("+{}", render_hundredths(d)),
        d => render_hundredths(d),
    };
    format!("{} ({delta})", render_hundredths(v))
}

/// Accuracy table with signed deltas against the baseline column.
pub fn delta_table(candidate: &BTreeMap<String, f64>, baseline: &BTreeMap<String, f64>) -> Result<String> {
    let missing_in_candidate: Vec<&str> = baseline
        .keys()
        .filter(|k| !candidate.contains_key(*k))
        .map(String::as_str)
        .collect();
    let missing_in_baseline: Vec<&str> = candidate
        .keys()
        .filter(|k| !baseline.contains_key(*k))
        .map(String::as_str)
        .collect();
    if !missing_in_candidate.is_empty() || !missing_in_baseline.is_empty() {
        return Err(Error::Report(format!(
            "dataset keys differ: missing from candidate {missing_in_candidate:?}, missing from baseline {missing_in_baseline:?}"
        )));
    }
    let width = baseline.keys().map(String::len).max().unwrap_or(0).max(7);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>16}  {:>16}", "Dataset", "Baseline", "Candidate");
    for (key, &base) in baseline {
        let cand = candidate[key];
        let _ = writeln!(
            out,
            "{:<width$}  {:>16}  {:>16}",
            key,
            format_with_delta(base, base),
            format_with_delta(cand, base)
        );
    }
    Ok(out)
}
