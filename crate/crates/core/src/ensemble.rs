//! Multi-model score averaging with repeated frame subsampling. Every
//! member scores the same per-run subsample; the final prediction is the
//! (optionally weighted) mean over members and runs, accumulated in a fixed
//! order so results are reproducible per seed.

use alloc::vec::Vec;
use core::fmt;

use crate::model::{model_forward, ModelError, VideoModel};
use crate::rng::{derive_seed, SeededRng};
use crate::tensor::Tensor;
use crate::train::{subsample_frames, LabeledVideo};

#[derive(Debug, Clone, PartialEq)]
pub enum EnsembleError {
    Empty,
    /// Members must agree on the output class count.
    ClassMismatch { expected: usize, got: usize },
    /// Weight list must match the member list and carry positive mass.
    BadWeights,
    ZeroRuns,
    Model(ModelError),
}

impl fmt::Display for EnsembleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Empty => write!(f, "ensemble has no member models"),
            Self::ClassMismatch { expected, got } => {
                write!(f, "member predicts {got} classes, ensemble expects {expected}")
            }
            Self::BadWeights => write!(f, "weights must be positive and one per member"),
            Self::ZeroRuns => write!(f, "repeated sampling needs at least one run"),
            Self::Model(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for EnsembleError {}

impl From<ModelError> for EnsembleError {
    fn from(e: ModelError) -> Self {
        EnsembleError::Model(e)
    }
}

/// An ordered list of models (any mix of families) sharing a class count.
#[derive(Debug, Clone)]
pub struct EnsembleModel {
    members: Vec<VideoModel>,
    weights: Vec<f32>,
}

impl EnsembleModel {
    /// Uniform member weighting.
    pub fn new(members: Vec<VideoModel>) -> Result<EnsembleModel, EnsembleError> {
        let weights = alloc::vec![1.0; members.len()];
        Self::with_weights(members, weights)
    }

    /// Explicit per-member weights (normalized by their sum at prediction).
    pub fn with_weights(
        members: Vec<VideoModel>,
        weights: Vec<f32>,
    ) -> Result<EnsembleModel, EnsembleError> {
        let first = members.first().ok_or(EnsembleError::Empty)?;
        let classes = first.classes();
        for m in &members {
            if m.classes() != classes {
                return Err(EnsembleError::ClassMismatch {
                    expected: classes,
                    got: m.classes(),
                });
            }
        }
        if weights.len() != members.len() || weights.iter().any(|&w| w <= 0.0 || !w.is_finite())
        {
            return Err(EnsembleError::BadWeights);
        }
        Ok(EnsembleModel { members, weights })
    }

    pub fn members(&self) -> &[VideoModel] {
        &self.members
    }

    pub fn classes(&self) -> usize {
        self.members[0].classes()
    }
}

/// Score one video: for run `r` in `1..=runs`, draw a frame subsample from
/// the stream seeded with `derive_seed(seed, r)`, score it with every
/// member, and average everything. Deterministic per seed; runs are
/// order-independent because each run derives its own stream.
pub fn ensemble_predict(
    ensemble: &EnsembleModel,
    video: &LabeledVideo,
    runs: usize,
    max_frames: usize,
    seed: u64,
) -> Result<Tensor, EnsembleError> {
    if runs == 0 {
        return Err(EnsembleError::ZeroRuns);
    }
    let classes = ensemble.classes();
    let mut acc = alloc::vec![0.0f64; classes];
    for run in 1..=runs {
        let mut rng = SeededRng::new(derive_seed(seed, run as u64));
        let sample = subsample_frames(video, max_frames, &mut rng);
        for (model, &weight) in ensemble.members.iter().zip(&ensemble.weights) {
            let probs = model_forward(model, &sample.visual, &sample.audio)?;
            for (a, &p) in acc.iter_mut().zip(probs.data()) {
                *a += weight as f64 * p as f64;
            }
        }
    }
    let total_weight: f64 = ensemble.weights.iter().map(|&w| w as f64).sum();
    let norm = 1.0 / (runs as f64 * total_weight);
    Ok(Tensor::vector(acc.iter().map(|&a| (a * norm) as f32).collect()))
}
