//! End-to-end video classifiers. Six families share the same head
//! (optional context gate + mixture of experts) over different encoders:
//!
//! * `LfnlNetVlad` — per-modality NetVLAD, non-local block, normalization,
//!   concat, dense projection, context gate, MoE.
//! * `LfnlNetRvlad` — as above with center-free NetRVLAD pooling.
//! * `EfnlNetVlad` — frames fused across modalities first, gated per frame,
//!   then NetVLAD + non-local + normalization, dense projection, MoE.
//! * `SoftBof4k` / `SoftBof8k` — per-modality soft bag-of-features
//!   histograms, concat, dense projection, context gate, MoE.
//! * `Gru` — frame-fused stacked GRU encoder, context gate, MoE.
//!
//! Parameters live in a named [`ParamStore`] with a fixed, documented
//! layout, so optimizers, checkpoints and gradient checks all see the same
//! flat view.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::gate::{
    context_gate_backward, context_gate_forward, context_gate_rows_backward,
    context_gate_rows_forward, dense_backward, dense_forward, moe_backward, moe_forward,
    ContextGateParams, GateCache, HeadError, MoeCache, MoeParams,
};
use crate::gru::{
    gru_backward, gru_forward_cached, GruError, GruForwardCache, GruLayerParams, GruStack,
};
use crate::nonlocal::{
    nonlocal_backward, nonlocal_forward, NonLocalCache, NonLocalError, NonLocalParams,
};
use crate::pooling::{
    netvlad_backward_impl, netvlad_from_assign, normalize_vlad_backward,
    normalize_vlad_forward_impl, soft_assign_impl, soft_bof_backward_impl, soft_bof_from_assign,
    ClusterParams, PoolingError, VladNormCache,
};
use crate::rng::SeededRng;
use crate::store::{ParamStore, StoreError};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub enum ModelError {
    /// Input frame matrices disagree with the configured feature dims.
    DimMismatch {
        context: &'static str,
        got: usize,
        expected: usize,
    },
    /// Visual and audio streams must carry the same number of frames.
    FrameCountMismatch { visual: usize, audio: usize },
    EmptyVideo,
    BadConfig(&'static str),
    Pooling(PoolingError),
    NonLocal(NonLocalError),
    Head(HeadError),
    Gru(GruError),
    Store(StoreError),
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DimMismatch {
                context,
                got,
                expected,
            } => write!(f, "{context}: got dim {got}, expected {expected}"),
            Self::FrameCountMismatch { visual, audio } => write!(
                f,
                "visual stream has {visual} frames but audio has {audio}"
            ),
            Self::EmptyVideo => write!(f, "video has no frames"),
            Self::BadConfig(msg) => write!(f, "bad model config: {msg}"),
            Self::Pooling(e) => write!(f, "{e}"),
            Self::NonLocal(e) => write!(f, "{e}"),
            Self::Head(e) => write!(f, "{e}"),
            Self::Gru(e) => write!(f, "{e}"),
            Self::Store(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for ModelError {}

impl From<PoolingError> for ModelError {
    fn from(e: PoolingError) -> Self {
        ModelError::Pooling(e)
    }
}
impl From<NonLocalError> for ModelError {
    fn from(e: NonLocalError) -> Self {
        ModelError::NonLocal(e)
    }
}
impl From<HeadError> for ModelError {
    fn from(e: HeadError) -> Self {
        ModelError::Head(e)
    }
}
impl From<GruError> for ModelError {
    fn from(e: GruError) -> Self {
        ModelError::Gru(e)
    }
}
impl From<StoreError> for ModelError {
    fn from(e: StoreError) -> Self {
        ModelError::Store(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelFamily {
    LfnlNetVlad,
    LfnlNetRvlad,
    EfnlNetVlad,
    SoftBof4k,
    SoftBof8k,
    Gru,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 6] = [
        ModelFamily::LfnlNetVlad,
        ModelFamily::LfnlNetRvlad,
        ModelFamily::EfnlNetVlad,
        ModelFamily::SoftBof4k,
        ModelFamily::SoftBof8k,
        ModelFamily::Gru,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelFamily::LfnlNetVlad => "lfnl-netvlad",
            ModelFamily::LfnlNetRvlad => "lfnl-netrvlad",
            ModelFamily::EfnlNetVlad => "efnl-netvlad",
            ModelFamily::SoftBof4k => "soft-bof-4k",
            ModelFamily::SoftBof8k => "soft-bof-8k",
            ModelFamily::Gru => "gru",
        }
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl core::str::FromStr for ModelFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .find(|f| f.name() == s)
            .copied()
            .ok_or_else(|| format!("unknown model family {s:?}"))
    }
}

/// Sizing of one model. `for_family` fills in the conventional defaults:
/// 64 visual clusters with half as many audio clusters for the VLAD
/// families, 4096/8192-cluster histograms for soft bag-of-features, a
/// 1024-wide hidden projection, per-family expert counts (8/4/2), and a
/// two-layer GRU with 1200 hidden units.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub family: ModelFamily,
    pub classes: usize,
    pub visual_dim: usize,
    pub audio_dim: usize,
    pub visual_clusters: usize,
    pub audio_clusters: usize,
    /// Width F of the dense projection feeding the head.
    pub hidden: usize,
    /// Experts per class in the MoE head.
    pub experts: usize,
    /// Hidden units per GRU layer (GRU family only).
    pub gru_hidden: usize,
    /// Stacked GRU layers (GRU family only).
    pub gru_layers: usize,
}

impl ModelConfig {
    pub fn for_family(family: ModelFamily, classes: usize) -> ModelConfig {
        let (visual_clusters, audio_clusters, experts) = match family {
            ModelFamily::LfnlNetVlad => (64, 32, 8),
            ModelFamily::LfnlNetRvlad => (64, 32, 4),
            ModelFamily::EfnlNetVlad => (64, 32, 2),
            ModelFamily::SoftBof4k => (4096, 2048, 2),
            ModelFamily::SoftBof8k => (8192, 4096, 2),
            ModelFamily::Gru => (64, 32, 2),
        };
        ModelConfig {
            family,
            classes,
            visual_dim: 1024,
            audio_dim: 128,
            visual_clusters,
            audio_clusters,
            hidden: 1024,
            experts,
            gru_hidden: 1200,
            gru_layers: 2,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let all_positive = [
            self.classes,
            self.visual_dim,
            self.audio_dim,
            self.visual_clusters,
            self.audio_clusters,
            self.hidden,
            self.experts,
            self.gru_hidden,
            self.gru_layers,
        ]
        .iter()
        .all(|&v| v > 0);
        if !all_positive {
            return Err(ModelError::BadConfig("all config fields must be >= 1"));
        }
        Ok(())
    }

    /// Combined per-frame feature dim for the early-fused families.
    pub fn fused_dim(&self) -> usize {
        self.visual_dim + self.audio_dim
    }

    /// Feature width seen by the head (differs for the GRU family, whose
    /// encoder output is the hidden state).
    pub fn head_dim(&self) -> usize {
        match self.family {
            ModelFamily::Gru => self.gru_hidden,
            _ => self.hidden,
        }
    }
}

/// A configured model: its sizing plus a named parameter store.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoModel {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl VideoModel {
    pub fn classes(&self) -> usize {
        self.config.classes
    }

    pub fn parameter_count(&self) -> usize {
        self.params.total_elements()
    }
}

/// Alpha used for the center-anchored cluster initialization.
const INIT_ALPHA: f32 = 1.0;

fn nonlocal_inner(d: usize) -> usize {
    (d / 2).max(1)
}

fn insert_cluster(
    store: &mut ParamStore,
    prefix: &str,
    p: ClusterParams,
) -> Result<(), StoreError> {
    store.insert(&format!("{prefix}.w"), p.w)?;
    store.insert(&format!("{prefix}.b"), p.b)?;
    if let Some(c) = p.c {
        store.insert(&format!("{prefix}.c"), c)?;
    }
    Ok(())
}

fn insert_nonlocal(
    store: &mut ParamStore,
    prefix: &str,
    p: NonLocalParams,
) -> Result<(), StoreError> {
    store.insert(&format!("{prefix}.theta"), p.theta)?;
    store.insert(&format!("{prefix}.phi"), p.phi)?;
    store.insert(&format!("{prefix}.g"), p.g)?;
    store.insert(&format!("{prefix}.w"), p.w)?;
    Ok(())
}

fn insert_dense(
    store: &mut ParamStore,
    prefix: &str,
    d_in: usize,
    d_out: usize,
    rng: &mut SeededRng,
) -> Result<(), StoreError> {
    let std = 1.0 / crate::math::sqrt32(d_in as f32);
    store.insert(
        &format!("{prefix}.w"),
        Tensor::from_fn(&[d_in, d_out], |_| rng.normal_f32() * std),
    )?;
    store.insert(&format!("{prefix}.b"), Tensor::zeros(&[d_out]))?;
    Ok(())
}

fn insert_gate(
    store: &mut ParamStore,
    prefix: &str,
    f: usize,
    rng: &mut SeededRng,
) -> Result<(), StoreError> {
    let p = ContextGateParams::init(f, rng);
    store.insert(&format!("{prefix}.w"), p.w)?;
    store.insert(&format!("{prefix}.b"), p.b)?;
    Ok(())
}

fn insert_moe(
    store: &mut ParamStore,
    f: usize,
    classes: usize,
    experts: usize,
    rng: &mut SeededRng,
) -> Result<(), StoreError> {
    let p = MoeParams::init(f, classes, experts, rng);
    store.insert("moe.gate_w", p.gate_w)?;
    store.insert("moe.gate_b", p.gate_b)?;
    store.insert("moe.expert_w", p.expert_w)?;
    store.insert("moe.expert_b", p.expert_b)?;
    Ok(())
}

fn insert_gru(
    store: &mut ParamStore,
    d_in: usize,
    hidden: usize,
    layers: usize,
    rng: &mut SeededRng,
) -> Result<(), StoreError> {
    for l in 0..layers {
        let d = if l == 0 { d_in } else { hidden };
        let p = GruLayerParams::init(d, hidden, rng);
        for (suffix, t) in [
            ("w_z", p.w_z),
            ("w_r", p.w_r),
            ("w_h", p.w_h),
            ("u_z", p.u_z),
            ("u_r", p.u_r),
            ("u_h", p.u_h),
            ("b_z", p.b_z),
            ("b_r", p.b_r),
            ("b_h", p.b_h),
        ] {
            store.insert(&format!("gru.{l}.{suffix}"), t)?;
        }
    }
    Ok(())
}

/// Constructs a model of the configured family with freshly initialized
/// parameters. Deterministic: the same config and seed state always produce
/// a bit-identical store.
pub fn build_model(config: &ModelConfig, rng: &mut SeededRng) -> Result<VideoModel, ModelError> {
    config.validate()?;
    let mut store = ParamStore::new();
    let c = config.classes;
    match config.family {
        ModelFamily::LfnlNetVlad | ModelFamily::LfnlNetRvlad => {
            let centers = config.family == ModelFamily::LfnlNetVlad;
            let cluster = |k: usize, d: usize, rng: &mut SeededRng| {
                if centers {
                    ClusterParams::init_netvlad(k, d, INIT_ALPHA, rng)
                } else {
                    ClusterParams::init_centerless(k, d, INIT_ALPHA, rng)
                }
            };
            let (dv, da) = (config.visual_dim, config.audio_dim);
            insert_cluster(
                &mut store,
                "visual.cluster",
                cluster(config.visual_clusters, dv, rng),
            )?;
            insert_nonlocal(
                &mut store,
                "visual.nonlocal",
                NonLocalParams::init(dv, nonlocal_inner(dv), rng),
            )?;
            insert_cluster(
                &mut store,
                "audio.cluster",
                cluster(config.audio_clusters, da, rng),
            )?;
            insert_nonlocal(
                &mut store,
                "audio.nonlocal",
                NonLocalParams::init(da, nonlocal_inner(da), rng),
            )?;
            let concat = config.visual_clusters * dv + config.audio_clusters * da;
            insert_dense(&mut store, "proj", concat, config.hidden, rng)?;
            insert_gate(&mut store, "gate", config.hidden, rng)?;
            insert_moe(&mut store, config.hidden, c, config.experts, rng)?;
        }
        ModelFamily::EfnlNetVlad => {
            let d = config.fused_dim();
            insert_gate(&mut store, "frame_gate", d, rng)?;
            insert_cluster(
                &mut store,
                "fused.cluster",
                ClusterParams::init_netvlad(config.visual_clusters, d, INIT_ALPHA, rng),
            )?;
            insert_nonlocal(
                &mut store,
                "fused.nonlocal",
                NonLocalParams::init(d, nonlocal_inner(d), rng),
            )?;
            insert_dense(
                &mut store,
                "proj",
                config.visual_clusters * d,
                config.hidden,
                rng,
            )?;
            insert_moe(&mut store, config.hidden, c, config.experts, rng)?;
        }
        ModelFamily::SoftBof4k | ModelFamily::SoftBof8k => {
            insert_cluster(
                &mut store,
                "visual.cluster",
                ClusterParams::init_centerless(config.visual_clusters, config.visual_dim, INIT_ALPHA, rng),
            )?;
            insert_cluster(
                &mut store,
                "audio.cluster",
                ClusterParams::init_centerless(config.audio_clusters, config.audio_dim, INIT_ALPHA, rng),
            )?;
            let concat = config.visual_clusters + config.audio_clusters;
            insert_dense(&mut store, "proj", concat, config.hidden, rng)?;
            insert_gate(&mut store, "gate", config.hidden, rng)?;
            insert_moe(&mut store, config.hidden, c, config.experts, rng)?;
        }
        ModelFamily::Gru => {
            insert_gru(
                &mut store,
                config.fused_dim(),
                config.gru_hidden,
                config.gru_layers,
                rng,
            )?;
            insert_gate(&mut store, "gate", config.gru_hidden, rng)?;
            insert_moe(&mut store, config.gru_hidden, c, config.experts, rng)?;
        }
    }
    Ok(VideoModel {
        config: *config,
        params: store,
    })
}

fn cluster_from_store(store: &ParamStore, prefix: &str, with_centers: bool) -> ClusterParams {
    ClusterParams {
        w: store.tensor(&format!("{prefix}.w")).clone(),
        b: store.tensor(&format!("{prefix}.b")).clone(),
        c: if with_centers {
            Some(store.tensor(&format!("{prefix}.c")).clone())
        } else {
            None
        },
    }
}

fn nonlocal_from_store(store: &ParamStore, prefix: &str) -> NonLocalParams {
    NonLocalParams {
        theta: store.tensor(&format!("{prefix}.theta")).clone(),
        phi: store.tensor(&format!("{prefix}.phi")).clone(),
        g: store.tensor(&format!("{prefix}.g")).clone(),
        w: store.tensor(&format!("{prefix}.w")).clone(),
    }
}

fn gate_from_store(store: &ParamStore, prefix: &str) -> ContextGateParams {
    ContextGateParams {
        w: store.tensor(&format!("{prefix}.w")).clone(),
        b: store.tensor(&format!("{prefix}.b")).clone(),
    }
}

fn moe_from_store(store: &ParamStore, classes: usize, experts: usize) -> MoeParams {
    MoeParams::new(
        store.tensor("moe.gate_w").clone(),
        store.tensor("moe.gate_b").clone(),
        store.tensor("moe.expert_w").clone(),
        store.tensor("moe.expert_b").clone(),
        classes,
        experts,
    )
    .expect("store layout fixed at build time")
}

fn gru_from_store(store: &ParamStore, layers: usize) -> GruStack {
    let layer = |l: usize| GruLayerParams {
        w_z: store.tensor(&format!("gru.{l}.w_z")).clone(),
        w_r: store.tensor(&format!("gru.{l}.w_r")).clone(),
        w_h: store.tensor(&format!("gru.{l}.w_h")).clone(),
        u_z: store.tensor(&format!("gru.{l}.u_z")).clone(),
        u_r: store.tensor(&format!("gru.{l}.u_r")).clone(),
        u_h: store.tensor(&format!("gru.{l}.u_h")).clone(),
        b_z: store.tensor(&format!("gru.{l}.b_z")).clone(),
        b_r: store.tensor(&format!("gru.{l}.b_r")).clone(),
        b_h: store.tensor(&format!("gru.{l}.b_h")).clone(),
    };
    GruStack::new((0..layers).map(layer).collect()).expect("store layout fixed at build time")
}

/// One pooled-and-attended modality: everything the backward pass needs.
#[derive(Debug, Clone)]
struct ModalityVladCache {
    x: Tensor,
    cluster: ClusterParams,
    assign: Tensor,
    pooled: Tensor,
    nl: NonLocalParams,
    nl_cache: NonLocalCache,
    nl_out: Tensor,
    norm_cache: VladNormCache,
    normalized: Tensor,
}

fn modality_vlad_forward(x: &Tensor, cluster: ClusterParams, nl: NonLocalParams) -> Result<ModalityVladCache, ModelError> {
    let assign = soft_assign_impl(x, &cluster.w, &cluster.b);
    let pooled = netvlad_from_assign(x, &assign, cluster.c.as_ref());
    let (nl_out, nl_cache) = nonlocal_forward(&pooled, &nl)?;
    let (normalized, norm_cache) = normalize_vlad_forward_impl(&nl_out);
    Ok(ModalityVladCache {
        x: x.clone(),
        cluster,
        assign,
        pooled,
        nl,
        nl_cache,
        nl_out,
        norm_cache,
        normalized,
    })
}

/// Backward through one modality branch; returns named gradients under
/// `prefix` (cluster + non-local parameters) and the gradient w.r.t. the
/// branch input matrix.
fn modality_vlad_backward(
    cache: &ModalityVladCache,
    prefix: &str,
    d_norm: &Tensor,
    grads: &mut Vec<(String, Tensor)>,
) -> Result<Tensor, ModelError> {
    let d_nl_out = normalize_vlad_backward(&cache.norm_cache, d_norm);
    let (d_pooled, d_theta, d_phi, d_g, d_w) =
        nonlocal_backward(&cache.pooled, &cache.nl, &cache.nl_cache, &d_nl_out)?;
    let _ = &cache.nl_out;
    let (dx, dw, db, dc) = netvlad_backward_impl(
        &cache.x,
        &cache.cluster.w,
        cache.cluster.c.as_ref(),
        &cache.assign,
        &d_pooled,
    );
    grads.push((format!("{prefix}.cluster.w"), dw));
    grads.push((format!("{prefix}.cluster.b"), db));
    if let Some(dc) = dc {
        grads.push((format!("{prefix}.cluster.c"), dc));
    }
    grads.push((format!("{prefix}.nonlocal.theta"), d_theta));
    grads.push((format!("{prefix}.nonlocal.phi"), d_phi));
    grads.push((format!("{prefix}.nonlocal.g"), d_g));
    grads.push((format!("{prefix}.nonlocal.w"), d_w));
    Ok(dx)
}

/// One soft bag-of-features modality.
#[derive(Debug, Clone)]
struct ModalityBofCache {
    x: Tensor,
    cluster: ClusterParams,
    assign: Tensor,
    hist: Tensor,
}

fn modality_bof_forward(x: &Tensor, cluster: ClusterParams) -> ModalityBofCache {
    let assign = soft_assign_impl(x, &cluster.w, &cluster.b);
    let hist = soft_bof_from_assign(&assign);
    ModalityBofCache {
        x: x.clone(),
        cluster,
        assign,
        hist,
    }
}

fn modality_bof_backward(
    cache: &ModalityBofCache,
    prefix: &str,
    d_hist: &Tensor,
    grads: &mut Vec<(String, Tensor)>,
) {
    let (_dx, dw, db) =
        soft_bof_backward_impl(&cache.x, &cache.cluster.w, &cache.assign, d_hist);
    grads.push((format!("{prefix}.cluster.w"), dw));
    grads.push((format!("{prefix}.cluster.b"), db));
}

/// Shared tail of every family: dense projection (optional), context gate
/// (optional) and MoE.
#[derive(Debug, Clone)]
struct HeadCache {
    proj_in: Option<Tensor>,
    proj_out: Option<Tensor>,
    gate: Option<(ContextGateParams, GateCache, Tensor)>,
    moe: MoeParams,
    moe_in: Tensor,
    moe_cache: MoeCache,
}

fn head_forward(
    store: &ParamStore,
    feature: Tensor,
    project: bool,
    gate: bool,
    classes: usize,
    experts: usize,
) -> Result<(Tensor, HeadCache), ModelError> {
    let (proj_in, proj_out, mut current) = if project {
        let w = store.tensor("proj.w");
        let b = store.tensor("proj.b");
        if feature.numel() != w.rows() {
            return Err(ModelError::DimMismatch {
                context: "dense projection input",
                got: feature.numel(),
                expected: w.rows(),
            });
        }
        let y = dense_forward(&feature, w, b);
        (Some(feature), Some(y.clone()), y)
    } else {
        (None, None, feature)
    };
    let gate_cache = if gate {
        let p = gate_from_store(store, "gate");
        let (z, cache) = context_gate_forward(&current, &p)?;
        let pre_gate = core::mem::replace(&mut current, z);
        Some((p, cache, pre_gate))
    } else {
        None
    };
    let moe = moe_from_store(store, classes, experts);
    let (probs, moe_cache) = moe_forward(&current, &moe)?;
    Ok((
        probs,
        HeadCache {
            proj_in,
            proj_out,
            gate: gate_cache,
            moe,
            moe_in: current,
            moe_cache,
        },
    ))
}

/// Backward through the head; returns the gradient w.r.t. the encoder
/// feature vector.
fn head_backward(
    store: &ParamStore,
    cache: &HeadCache,
    d_probs: &Tensor,
    grads: &mut Vec<(String, Tensor)>,
) -> Result<Tensor, ModelError> {
    let (d_moe_in, d_gw, d_gb, d_ew, d_eb) =
        moe_backward(&cache.moe_in, &cache.moe, &cache.moe_cache, d_probs)?;
    grads.push(("moe.gate_w".into(), d_gw));
    grads.push(("moe.gate_b".into(), d_gb));
    grads.push(("moe.expert_w".into(), d_ew));
    grads.push(("moe.expert_b".into(), d_eb));

    let mut d_current = d_moe_in;
    if let Some((p, gate_cache, pre_gate)) = &cache.gate {
        let (dy, dw, db) = context_gate_backward(pre_gate, p, gate_cache, &d_current)?;
        grads.push(("gate.w".into(), dw));
        grads.push(("gate.b".into(), db));
        d_current = dy;
    }
    if let (Some(proj_in), Some(_)) = (&cache.proj_in, &cache.proj_out) {
        let w = store.tensor("proj.w");
        let (dx, dw, db) = dense_backward(proj_in, w, &d_current);
        grads.push(("proj.w".into(), dw));
        grads.push(("proj.b".into(), db));
        d_current = dx;
    }
    Ok(d_current)
}

/// Forward intermediates for one video, consumed by [`model_backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    kind: CacheKind,
    head: HeadCache,
}

#[derive(Debug, Clone)]
enum CacheKind {
    LateVlad {
        visual: ModalityVladCache,
        audio: ModalityVladCache,
    },
    EarlyVlad {
        fused_input: Tensor,
        frame_gate: ContextGateParams,
        frame_gate_cache: GateCache,
        branch: ModalityVladCache,
    },
    SoftBof {
        visual: ModalityBofCache,
        audio: ModalityBofCache,
    },
    Gru {
        stack: GruStack,
        gru_cache: GruForwardCache,
    },
}

fn validate_inputs(
    config: &ModelConfig,
    visual: &Tensor,
    audio: &Tensor,
) -> Result<usize, ModelError> {
    if visual.rank() != 2 || audio.rank() != 2 {
        return Err(ModelError::BadConfig("frame inputs must be matrices"));
    }
    if visual.rows() == 0 {
        return Err(ModelError::EmptyVideo);
    }
    if visual.cols() != config.visual_dim {
        return Err(ModelError::DimMismatch {
            context: "visual frames",
            got: visual.cols(),
            expected: config.visual_dim,
        });
    }
    if audio.cols() != config.audio_dim {
        return Err(ModelError::DimMismatch {
            context: "audio frames",
            got: audio.cols(),
            expected: config.audio_dim,
        });
    }
    if visual.rows() != audio.rows() {
        return Err(ModelError::FrameCountMismatch {
            visual: visual.rows(),
            audio: audio.rows(),
        });
    }
    Ok(visual.rows())
}

fn fuse_frames(visual: &Tensor, audio: &Tensor) -> Tensor {
    let n = visual.rows();
    let (dv, da) = (visual.cols(), audio.cols());
    let mut fused = Tensor::zeros(&[n, dv + da]);
    for i in 0..n {
        fused.row_mut(i)[..dv].copy_from_slice(visual.row(i));
        fused.row_mut(i)[dv..].copy_from_slice(audio.row(i));
    }
    fused
}

fn concat_vectors(a: &Tensor, b: &Tensor) -> Tensor {
    let mut data = Vec::with_capacity(a.numel() + b.numel());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Tensor::vector(data)
}

/// Class probabilities for one video.
pub fn model_forward(
    model: &VideoModel,
    visual: &Tensor,
    audio: &Tensor,
) -> Result<Tensor, ModelError> {
    Ok(model_forward_cached(model, visual, audio)?.0)
}

pub fn model_forward_cached(
    model: &VideoModel,
    visual: &Tensor,
    audio: &Tensor,
) -> Result<(Tensor, ForwardCache), ModelError> {
    validate_inputs(&model.config, visual, audio)?;
    let cfg = &model.config;
    let store = &model.params;
    match cfg.family {
        ModelFamily::LfnlNetVlad | ModelFamily::LfnlNetRvlad => {
            let centers = cfg.family == ModelFamily::LfnlNetVlad;
            let v = modality_vlad_forward(
                visual,
                cluster_from_store(store, "visual.cluster", centers),
                nonlocal_from_store(store, "visual.nonlocal"),
            )?;
            let a = modality_vlad_forward(
                audio,
                cluster_from_store(store, "audio.cluster", centers),
                nonlocal_from_store(store, "audio.nonlocal"),
            )?;
            let feature = concat_vectors(&v.normalized, &a.normalized);
            let (probs, head) =
                head_forward(store, feature, true, true, cfg.classes, cfg.experts)?;
            Ok((
                probs,
                ForwardCache {
                    kind: CacheKind::LateVlad {
                        visual: v,
                        audio: a,
                    },
                    head,
                },
            ))
        }
        ModelFamily::EfnlNetVlad => {
            let fused = fuse_frames(visual, audio);
            let frame_gate = gate_from_store(store, "frame_gate");
            let (gated, frame_gate_cache) = context_gate_rows_forward(&fused, &frame_gate)?;
            let branch = modality_vlad_forward(
                &gated,
                cluster_from_store(store, "fused.cluster", true),
                nonlocal_from_store(store, "fused.nonlocal"),
            )?;
            let feature = branch.normalized.clone();
            let (probs, head) =
                head_forward(store, feature, true, false, cfg.classes, cfg.experts)?;
            Ok((
                probs,
                ForwardCache {
                    kind: CacheKind::EarlyVlad {
                        fused_input: fused,
                        frame_gate,
                        frame_gate_cache,
                        branch,
                    },
                    head,
                },
            ))
        }
        ModelFamily::SoftBof4k | ModelFamily::SoftBof8k => {
            let v = modality_bof_forward(visual, cluster_from_store(store, "visual.cluster", false));
            let a = modality_bof_forward(audio, cluster_from_store(store, "audio.cluster", false));
            let feature = concat_vectors(&v.hist, &a.hist);
            let (probs, head) =
                head_forward(store, feature, true, true, cfg.classes, cfg.experts)?;
            Ok((
                probs,
                ForwardCache {
                    kind: CacheKind::SoftBof {
                        visual: v,
                        audio: a,
                    },
                    head,
                },
            ))
        }
        ModelFamily::Gru => {
            let fused = fuse_frames(visual, audio);
            let stack = gru_from_store(store, cfg.gru_layers);
            let (encoded, gru_cache) = gru_forward_cached(&fused, &stack)?;
            let (probs, head) =
                head_forward(store, encoded, false, true, cfg.classes, cfg.experts)?;
            Ok((
                probs,
                ForwardCache {
                    kind: CacheKind::Gru { stack, gru_cache },
                    head,
                },
            ))
        }
    }
}

/// Gradients of every model parameter for one video, given the upstream
/// gradient on the class probabilities. Returned as `(name, gradient)`
/// pairs matching the model's store layout.
pub fn model_backward(
    model: &VideoModel,
    cache: &ForwardCache,
    d_probs: &Tensor,
) -> Result<Vec<(String, Tensor)>, ModelError> {
    let store = &model.params;
    let mut grads: Vec<(String, Tensor)> = Vec::new();
    let d_feature = head_backward(store, &cache.head, d_probs, &mut grads)?;
    match &cache.kind {
        CacheKind::LateVlad { visual, audio } => {
            let split = visual.normalized.numel();
            let d_v = Tensor::vector(d_feature.data()[..split].to_vec());
            let d_a = Tensor::vector(d_feature.data()[split..].to_vec());
            modality_vlad_backward(visual, "visual", &d_v, &mut grads)?;
            modality_vlad_backward(audio, "audio", &d_a, &mut grads)?;
        }
        CacheKind::EarlyVlad {
            fused_input,
            frame_gate,
            frame_gate_cache,
            branch,
        } => {
            let d_gated = modality_vlad_backward(branch, "fused", &d_feature, &mut grads)?;
            let (_d_fused, dw, db) = context_gate_rows_backward(
                fused_input,
                frame_gate,
                frame_gate_cache,
                &d_gated,
            )?;
            grads.push(("frame_gate.w".into(), dw));
            grads.push(("frame_gate.b".into(), db));
        }
        CacheKind::SoftBof { visual, audio } => {
            let split = visual.hist.numel();
            let d_v = Tensor::vector(d_feature.data()[..split].to_vec());
            let d_a = Tensor::vector(d_feature.data()[split..].to_vec());
            modality_bof_backward(visual, "visual", &d_v, &mut grads);
            modality_bof_backward(audio, "audio", &d_a, &mut grads);
        }
        CacheKind::Gru { stack, gru_cache } => {
            let (_dx, layer_grads) = gru_backward(stack, gru_cache, &d_feature)?;
            for (l, g) in layer_grads.into_iter().enumerate() {
                for (suffix, t) in [
                    ("w_z", g.w_z),
                    ("w_r", g.w_r),
                    ("w_h", g.w_h),
                    ("u_z", g.u_z),
                    ("u_r", g.u_r),
                    ("u_h", g.u_h),
                    ("b_z", g.b_z),
                    ("b_r", g.b_r),
                    ("b_h", g.b_h),
                ] {
                    grads.push((format!("gru.{l}.{suffix}"), t));
                }
            }
        }
    }
    Ok(grads)
}

/// Accumulates named gradients into the model's store, scaled (e.g. by
/// `1/batch`).
pub fn accumulate_grads(
    model: &mut VideoModel,
    grads: &[(String, Tensor)],
    scale: f32,
) -> Result<(), ModelError> {
    for (name, g) in grads {
        model.params.accumulate_grad(name, g.data(), scale)?;
    }
    Ok(())
}
