//! Training: multi-label binary cross-entropy, Adam, frame subsampling and
//! the step loop. Every source of randomness flows from one seeded stream,
//! and gradient accumulation is single-threaded in a fixed order, so a
//! given seed reproduces the checkpoint sequence bit for bit.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::checkpoint::Checkpoint;
use crate::math::{ln64, sqrt64};
use crate::model::{
    accumulate_grads, model_backward, model_forward_cached, ModelError, VideoModel,
};
use crate::rng::SeededRng;
use crate::store::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub enum TrainError {
    EmptyDataset,
    BadVideo(&'static str),
    /// A non-finite gradient reached the optimizer; the step is aborted.
    NonFiniteGradient { param: String, step: u64 },
    Model(ModelError),
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EmptyDataset => write!(f, "training data is empty"),
            Self::BadVideo(msg) => write!(f, "bad labeled video: {msg}"),
            Self::NonFiniteGradient { param, step } => {
                write!(f, "non-finite gradient in {param:?} at optimizer step {step}")
            }
            Self::Model(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for TrainError {}

impl From<ModelError> for TrainError {
    fn from(e: ModelError) -> Self {
        TrainError::Model(e)
    }
}

/// One training example: paired per-frame visual/audio features and a
/// multi-label target set.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledVideo {
    pub id: String,
    pub visual: Tensor,
    pub audio: Tensor,
    pub labels: Vec<usize>,
}

impl LabeledVideo {
    /// Validates frame pairing and normalizes the label set (sorted,
    /// deduplicated).
    pub fn new(
        id: String,
        visual: Tensor,
        audio: Tensor,
        mut labels: Vec<usize>,
    ) -> Result<LabeledVideo, TrainError> {
        if visual.rank() != 2 || audio.rank() != 2 {
            return Err(TrainError::BadVideo("frame features must be matrices"));
        }
        if visual.rows() == 0 {
            return Err(TrainError::BadVideo("video needs at least one frame"));
        }
        if visual.rows() != audio.rows() {
            return Err(TrainError::BadVideo(
                "visual and audio streams must have the same frame count",
            ));
        }
        labels.sort_unstable();
        labels.dedup();
        Ok(LabeledVideo {
            id,
            visual,
            audio,
            labels,
        })
    }

    pub fn frames(&self) -> usize {
        self.visual.rows()
    }
}

/// Mean per-class binary cross-entropy and its gradient w.r.t. the
/// probabilities. Probabilities are clamped to `[1e-6, 1 - 1e-6]` before
/// the logs; elements pinned at the clamp receive zero gradient.
pub fn bce_loss(probs: &Tensor, labels: &[usize]) -> (f64, Tensor) {
    const LO: f32 = 1e-6;
    const HI: f32 = 1.0 - 1e-6;
    let c = probs.numel();
    let mut grad = Tensor::zeros(&[c]);
    let mut loss = 0.0f64;
    let inv_c = 1.0 / c as f64;
    for (class, (&p, g)) in probs.data().iter().zip(grad.data_mut()).enumerate() {
        let clamped = p.clamp(LO, HI) as f64;
        let positive = labels.binary_search(&class).is_ok();
        if positive {
            loss -= ln64(clamped) * inv_c;
        } else {
            loss -= ln64(1.0 - clamped) * inv_c;
        }
        if (LO..=HI).contains(&p) {
            *g = if positive {
                (-inv_c / clamped) as f32
            } else {
                (inv_c / (1.0 - clamped)) as f32
            };
        }
    }
    (loss, grad)
}

/// Adam hyperparameters. Defaults: lr 2e-4, betas (0.9, 0.999), eps 1e-8.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Per-parameter first/second moment estimates plus the step counter.
/// Moments are kept in f64 so the bias-corrected update is exact up to the
/// final f32 narrowing of the parameter itself.
#[derive(Debug, Clone)]
pub struct AdamState {
    slots: Vec<AdamSlot>,
    pub step: u64,
}

#[derive(Debug, Clone)]
struct AdamSlot {
    name: String,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> AdamState {
        AdamState {
            slots: store
                .iter()
                .map(|(name, t)| AdamSlot {
                    name: name.into(),
                    m: alloc::vec![0.0; t.numel()],
                    v: alloc::vec![0.0; t.numel()],
                })
                .collect(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update over every parameter that carries a
/// gradient buffer. Aborts (without touching any parameter) if a gradient
/// holds a non-finite value.
pub fn adam_step(
    store: &mut ParamStore,
    state: &mut AdamState,
    hp: &AdamParams,
) -> Result<(), TrainError> {
    let next_step = state.step + 1;
    for slot in &state.slots {
        if let Some(t) = store.get(&slot.name) {
            if let Some(g) = t.grad() {
                if g.iter().any(|x| !x.is_finite()) {
                    return Err(TrainError::NonFiniteGradient {
                        param: slot.name.clone(),
                        step: next_step,
                    });
                }
            }
        }
    }
    state.step = next_step;
    let t = state.step;
    let bias1 = 1.0 - crate::math::powi64(hp.beta1 as f64, t);
    let bias2 = 1.0 - crate::math::powi64(hp.beta2 as f64, t);
    for slot in &mut state.slots {
        let tensor = match store.get_mut(&slot.name) {
            Some(t) => t,
            None => continue,
        };
        let grad = match tensor.grad() {
            Some(g) => g.to_vec(),
            None => continue,
        };
        let data = tensor.data_mut();
        for i in 0..data.len() {
            let g = grad[i] as f64;
            slot.m[i] = hp.beta1 as f64 * slot.m[i] + (1.0 - hp.beta1 as f64) * g;
            slot.v[i] = hp.beta2 as f64 * slot.v[i] + (1.0 - hp.beta2 as f64) * g * g;
            let m_hat = slot.m[i] / bias1;
            let v_hat = slot.v[i] / bias2;
            let update = hp.lr as f64 * m_hat / (sqrt64(v_hat) + hp.epsilon as f64);
            data[i] = (data[i] as f64 - update) as f32;
        }
    }
    Ok(())
}

/// Uniform without-replacement frame subsampling that preserves temporal
/// order. Videos with at most `max_frames` frames pass through unchanged;
/// `max_frames == 0` means no limit. Consumes exactly `max_frames` draws
/// when sampling, so the stream position is a fixed function of the call
/// count.
pub fn subsample_frames(
    video: &LabeledVideo,
    max_frames: usize,
    rng: &mut SeededRng,
) -> LabeledVideo {
    let n = video.frames();
    if max_frames == 0 || n <= max_frames {
        return video.clone();
    }
    let mut indices: Vec<usize> = (0..n).collect();
    for i in 0..max_frames {
        let j = i + rng.index(n - i);
        indices.swap(i, j);
    }
    let mut chosen = indices[..max_frames].to_vec();
    chosen.sort_unstable();

    let gather = |t: &Tensor| {
        let mut data = Vec::with_capacity(max_frames * t.cols());
        for &i in &chosen {
            data.extend_from_slice(t.row(i));
        }
        Tensor::from_vec(&[max_frames, t.cols()], data).expect("gathered shape")
    };
    LabeledVideo {
        id: video.id.clone(),
        visual: gather(&video.visual),
        audio: gather(&video.audio),
        labels: video.labels.clone(),
    }
}

/// Step-loop configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: usize,
    /// Frames kept per video each time it is sampled.
    pub frames: usize,
    pub seed: u64,
    /// Emit a checkpoint every this many steps (0 = only initial + final).
    pub checkpoint_every: usize,
    pub adam: AdamParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            steps: 1000,
            frames: 30,
            seed: 0,
            checkpoint_every: 0,
            adam: AdamParams::default(),
        }
    }
}

/// Outcome of a training run: emitted checkpoints (always including the
/// initial state) and the per-step mean batch loss.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoints: Vec<Checkpoint>,
    pub losses: Vec<f64>,
}

/// SGD loop: per-epoch shuffle, frame subsampling, forward/backward,
/// mean-of-batch gradients, one Adam step per batch.
pub fn train(
    model: &mut VideoModel,
    data: &[LabeledVideo],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut rng = SeededRng::new(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = order.len(); // trigger a shuffle on first use
    let mut state = AdamState::new(&model.params);
    let mut checkpoints = alloc::vec![Checkpoint::from_store(&model.params, 0)];
    let mut losses = Vec::with_capacity(cfg.steps);
    let batch_size = cfg.batch_size.max(1).min(data.len());

    for step in 1..=cfg.steps {
        model.params.zero_grads();
        let mut batch_loss = 0.0f64;
        let scale = 1.0 / batch_size as f32;
        for _ in 0..batch_size {
            if cursor >= order.len() {
                rng.shuffle(&mut order);
                cursor = 0;
            }
            let video = &data[order[cursor]];
            cursor += 1;
            let sample = subsample_frames(video, cfg.frames, &mut rng);
            let (probs, cache) = model_forward_cached(model, &sample.visual, &sample.audio)?;
            let (loss, d_probs) = bce_loss(&probs, &sample.labels);
            let grads = model_backward(model, &cache, &d_probs)?;
            accumulate_grads(model, &grads, scale)?;
            batch_loss += loss;
        }
        losses.push(batch_loss / batch_size as f64);
        adam_step(&mut model.params, &mut state, &cfg.adam)?;
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
            checkpoints.push(Checkpoint::from_store(&model.params, step as u64));
        }
    }
    if cfg.steps > 0 {
        let already = cfg.checkpoint_every > 0 && cfg.steps % cfg.checkpoint_every == 0;
        if !already {
            checkpoints.push(Checkpoint::from_store(&model.params, cfg.steps as u64));
        }
    }
    Ok(TrainOutcome {
        checkpoints,
        losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn bce_at_half_is_ln_two() {
        let probs = Tensor::vector(vec![0.5, 0.5, 0.5]);
        let (loss, _) = bce_loss(&probs, &[1]);
        assert!((loss - core::f64::consts::LN_2).abs() < 1e-9);
    }

    #[test]
    fn bce_near_perfect_prediction_is_tiny() {
        let probs = Tensor::vector(vec![1.0 - 1e-6, 1e-6, 1e-6]);
        let (loss, _) = bce_loss(&probs, &[0]);
        assert!(loss < 1e-4, "loss {loss}");
    }

    #[test]
    fn bce_matches_scalar_oracle() {
        let mut rng = SeededRng::new(90);
        for _ in 0..20 {
            let probs = Tensor::from_fn(&[5], |_| 0.05 + 0.9 * rng.next_f64() as f32);
            let labels = vec![0, 3];
            let (loss, grad) = bce_loss(&probs, &labels);
            let mut want = 0.0f64;
            for c in 0..5 {
                let p = probs.data()[c] as f64;
                let y = if labels.contains(&c) { 1.0 } else { 0.0 };
                want -= (y * ln64(p) + (1.0 - y) * ln64(1.0 - p)) / 5.0;
            }
            assert!((loss - want).abs() < 1e-7);
            for c in 0..5 {
                let p = probs.data()[c] as f64;
                let y = if labels.contains(&c) { 1.0 } else { 0.0 };
                let g = -(y / p - (1.0 - y) / (1.0 - p)) / 5.0;
                assert!((grad.data()[c] as f64 - g).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn bce_gradient_passes_finite_difference_check() {
        let mut rng = SeededRng::new(91);
        let mut store = ParamStore::new();
        store
            .insert("p", Tensor::from_fn(&[6], |_| 0.1 + 0.8 * rng.next_f64() as f32))
            .unwrap();
        let labels = vec![1usize, 4];
        let (_, grad) = bce_loss(store.tensor("p"), &labels);
        store.accumulate_grad("p", grad.data(), 1.0).unwrap();
        let labels2 = labels.clone();
        let f = move |s: &ParamStore| bce_loss(s.tensor("p"), &labels2).0;
        let report = crate::gradcheck::grad_check(f, &mut store, 1e-4, 1e-5);
        assert!(report.passed, "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::vector(vec![1.0])).unwrap();
        store.accumulate_grad("w", &[0.1], 1.0).unwrap();
        let mut state = AdamState::new(&store);
        let hp = AdamParams::default();
        adam_step(&mut store, &mut state, &hp).unwrap();
        let delta = store.tensor("w").data()[0] - 1.0;
        // Bias-corrected first step is -lr * g / (|g| + eps) = -lr, up to
        // the f32 granularity of the stored parameter.
        assert!((delta + hp.lr).abs() < 1e-7, "delta {delta}");
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::vector(vec![1.5, -2.0])).unwrap();
        store.accumulate_grad("w", &[0.0, 0.0], 1.0).unwrap();
        let mut state = AdamState::new(&store);
        adam_step(&mut store, &mut state, &AdamParams::default()).unwrap();
        assert_eq!(store.tensor("w").data(), &[1.5, -2.0]);
    }

    #[test]
    fn adam_zero_lr_is_identity() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::vector(vec![1.5, -2.0])).unwrap();
        store.accumulate_grad("w", &[0.3, -0.7], 1.0).unwrap();
        let mut state = AdamState::new(&store);
        let hp = AdamParams {
            lr: 0.0,
            ..AdamParams::default()
        };
        adam_step(&mut store, &mut state, &hp).unwrap();
        assert_eq!(store.tensor("w").data(), &[1.5, -2.0]);
    }

    #[test]
    fn adam_three_steps_match_hand_unrolled_oracle() {
        // Objective 0.5 * w^2, so the gradient at w is w itself.
        let mut store = ParamStore::new();
        store.insert("w", Tensor::vector(vec![1.0])).unwrap();
        let mut state = AdamState::new(&store);
        let hp = AdamParams {
            lr: 0.1,
            ..AdamParams::default()
        };
        for _ in 0..3 {
            store.zero_grads();
            let w = store.tensor("w").data()[0];
            store.accumulate_grad("w", &[w], 1.0).unwrap();
            adam_step(&mut store, &mut state, &hp).unwrap();
        }

        // Hand-unrolled reference with the same f64 moments and f32
        // parameter narrowing.
        let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8f64, 0.1f64);
        let mut w = 1.0f32;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for t in 1..=3 {
            let g = w as f64;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1.powi(t));
            let v_hat = v / (1.0 - b2.powi(t));
            w = (w as f64 - lr * m_hat / (v_hat.sqrt() + eps)) as f32;
        }
        let got = store.tensor("w").data()[0];
        assert!((got as f64 - w as f64).abs() < 1e-9, "got {got}, want {w}");
    }

    #[test]
    fn adam_rejects_non_finite_gradients() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::vector(vec![1.0])).unwrap();
        store.accumulate_grad("w", &[f32::NAN], 1.0).unwrap();
        let mut state = AdamState::new(&store);
        match adam_step(&mut store, &mut state, &AdamParams::default()) {
            Err(TrainError::NonFiniteGradient { param, step: 1 }) => assert_eq!(param, "w"),
            other => panic!("expected non-finite abort, got {other:?}"),
        }
        // Parameter untouched, step not consumed.
        assert_eq!(store.tensor("w").data(), &[1.0]);
        assert_eq!(state.step, 0);
    }

    fn video(n: usize, seed: u64) -> LabeledVideo {
        let mut rng = SeededRng::new(seed);
        LabeledVideo::new(
            alloc::format!("v{seed}"),
            Tensor::from_fn(&[n, 3], |_| rng.normal_f32()),
            Tensor::from_fn(&[n, 2], |_| rng.normal_f32()),
            vec![0],
        )
        .unwrap()
    }

    #[test]
    fn subsampling_short_videos_is_identity() {
        let v = video(5, 1);
        let mut rng = SeededRng::new(2);
        let s = subsample_frames(&v, 10, &mut rng);
        assert_eq!(s, v);
    }

    #[test]
    fn subsampling_is_deterministic_and_ordered() {
        let v = video(100, 3);
        let a = subsample_frames(&v, 30, &mut SeededRng::new(7));
        let b = subsample_frames(&v, 30, &mut SeededRng::new(7));
        assert_eq!(a, b);
        assert_eq!(a.frames(), 30);
        // Temporal order preserved: rows must appear in the original order.
        let find_row = |row: &[f32]| {
            (0..100)
                .find(|&i| v.visual.row(i) == row)
                .expect("sampled row exists")
        };
        let positions: Vec<usize> = (0..30).map(|i| find_row(a.visual.row(i))).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn subsampling_frequencies_are_uniform() {
        let v = video(4, 4);
        let mut rng = SeededRng::new(5);
        let mut counts = [0usize; 4];
        let draws = 10_000;
        for _ in 0..draws {
            let s = subsample_frames(&v, 2, &mut rng);
            for i in 0..2 {
                let row = s.visual.row(i);
                let idx = (0..4).find(|&j| v.visual.row(j) == row).unwrap();
                counts[idx] += 1;
            }
        }
        for &c in &counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - 0.5).abs() < 0.02, "counts {counts:?}");
        }
    }
}
