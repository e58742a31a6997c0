//! Evaluation: top-k extraction, pooled global average precision at k, and
//! hit@1. All tie-breaking is fixed (confidence descending, then video
//! index ascending, then class id ascending) so scores are
//! platform-independent.

use alloc::vec::Vec;
use core::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MetricsError {
    NoVideos,
    /// Predictions and label sets must pair up one per video.
    LengthMismatch { predictions: usize, labels: usize },
    /// Global average precision is undefined without ground-truth pairs.
    NoPositives,
}

impl fmt::Display for MetricsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NoVideos => write!(f, "no videos to evaluate"),
            Self::LengthMismatch {
                predictions,
                labels,
            } => write!(
                f,
                "got {predictions} prediction lists but {labels} label sets"
            ),
            Self::NoPositives => write!(f, "label sets contain no ground-truth pairs"),
        }
    }
}

impl core::error::Error for MetricsError {}

/// One pooled prediction: which video, which class, how confident.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionRecord {
    pub video: usize,
    pub class: usize,
    pub confidence: f32,
}

/// Evaluation summary.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub gap: f64,
    pub hit_at_one: f64,
    pub videos: usize,
    /// Number of pooled predictions that entered the ranking.
    pub pooled_predictions: usize,
    /// Total ground-truth (video, label) pairs.
    pub total_positives: usize,
}

/// The `k` highest-confidence classes, descending; ties broken by ascending
/// class id. Returns fewer entries when there are fewer classes than `k`.
pub fn top_k(predictions: &[(usize, f32)], k: usize) -> Vec<(usize, f32)> {
    let mut sorted = predictions.to_vec();
    sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    sorted.truncate(k);
    sorted
}

fn pool_top_k(
    predictions: &[Vec<(usize, f32)>],
    k: usize,
) -> Vec<PredictionRecord> {
    let mut pooled = Vec::new();
    for (video, preds) in predictions.iter().enumerate() {
        for (class, confidence) in top_k(preds, k) {
            pooled.push(PredictionRecord {
                video,
                class,
                confidence,
            });
        }
    }
    pooled.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then(a.video.cmp(&b.video))
            .then(a.class.cmp(&b.class))
    });
    pooled
}

fn validate(
    predictions: &[Vec<(usize, f32)>],
    labels: &[Vec<usize>],
) -> Result<(), MetricsError> {
    if predictions.is_empty() {
        return Err(MetricsError::NoVideos);
    }
    if predictions.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    Ok(())
}

/// Global average precision over the pooled per-video top-k predictions.
///
/// All kept predictions are ranked globally by confidence; with `P` total
/// ground-truth pairs, `GAP = sum over hit ranks i of (hits_so_far(i) / i)
/// / P`. Scores depend only on the ranking, not the confidence scale.
pub fn gap_at_k(
    predictions: &[Vec<(usize, f32)>],
    labels: &[Vec<usize>],
    k: usize,
) -> Result<f64, MetricsError> {
    validate(predictions, labels)?;
    let total_positives: usize = labels.iter().map(|l| l.len()).sum();
    if total_positives == 0 {
        return Err(MetricsError::NoPositives);
    }
    let pooled = pool_top_k(predictions, k);
    let mut hits = 0usize;
    let mut sum = 0.0f64;
    for (rank0, rec) in pooled.iter().enumerate() {
        if labels[rec.video].contains(&rec.class) {
            hits += 1;
            sum += hits as f64 / (rank0 + 1) as f64;
        }
    }
    Ok(sum / total_positives as f64)
}

/// Fraction of videos whose single most confident class is in the label
/// set. Videos without predictions count as misses.
pub fn hit_at_one(
    predictions: &[Vec<(usize, f32)>],
    labels: &[Vec<usize>],
) -> Result<f64, MetricsError> {
    validate(predictions, labels)?;
    let mut hits = 0usize;
    for (preds, labs) in predictions.iter().zip(labels) {
        if let Some(&(class, _)) = top_k(preds, 1).first() {
            if labs.contains(&class) {
                hits += 1;
            }
        }
    }
    Ok(hits as f64 / predictions.len() as f64)
}

/// GAP@k plus hit@1 and the counts behind them.
pub fn evaluate(
    predictions: &[Vec<(usize, f32)>],
    labels: &[Vec<usize>],
    k: usize,
) -> Result<EvalResult, MetricsError> {
    let gap = gap_at_k(predictions, labels, k)?;
    let hit = hit_at_one(predictions, labels)?;
    let pooled = pool_top_k(predictions, k);
    Ok(EvalResult {
        gap,
        hit_at_one: hit,
        videos: predictions.len(),
        pooled_predictions: pooled.len(),
        total_positives: labels.iter().map(|l| l.len()).sum(),
    })
}

/// Expand a dense per-class score vector into `(class, confidence)` pairs.
pub fn dense_predictions(scores: &[f32]) -> Vec<(usize, f32)> {
    scores.iter().copied().enumerate().collect()
}
