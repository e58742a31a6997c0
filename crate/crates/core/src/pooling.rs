//! Descriptor aggregation: soft cluster assignment, NetVLAD / NetRVLAD
//! residual pooling, a hard-assignment VLAD reference, VLAD normalization,
//! and soft bag-of-features histograms. Forward passes come with explicit
//! vector-Jacobian products for training.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::rng::SeededRng;
use crate::tensor::{
    l2_norm, matmul, matmul_nt, matmul_tn, softmax_rows, softmax_rows_backward, Tensor,
    NORM_EPSILON,
};

#[derive(Debug, Clone, PartialEq)]
pub enum PoolingError {
    /// Descriptor dim of the input disagrees with the cluster parameters.
    DimMismatch { input: usize, params: usize },
    /// The descriptor matrix is not N×D with N ≥ 1, or holds non-finite values.
    BadDescriptors,
    /// Cluster parameter shapes are inconsistent.
    BadParams(&'static str),
    /// Operation needs an input produced by a VLAD-family pooling.
    NotVlad,
}

impl fmt::Display for PoolingError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DimMismatch { input, params } => write!(
                f,
                "descriptor dim {input} does not match cluster parameter dim {params}"
            ),
            Self::BadDescriptors => write!(f, "descriptor set must be a finite N×D matrix, N >= 1"),
            Self::BadParams(msg) => write!(f, "bad cluster parameters: {msg}"),
            Self::NotVlad => write!(f, "expected a VLAD-family pooled descriptor"),
        }
    }
}

impl core::error::Error for PoolingError {}

/// N frame descriptors of dimension D, stored as an N×D matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    x: Tensor,
}

impl DescriptorSet {
    pub fn new(x: Tensor) -> Result<DescriptorSet, PoolingError> {
        if x.rank() != 2 || x.rows() == 0 || !x.all_finite() {
            return Err(PoolingError::BadDescriptors);
        }
        Ok(DescriptorSet { x })
    }

    pub fn matrix(&self) -> &Tensor {
        &self.x
    }

    pub fn frames(&self) -> usize {
        self.x.rows()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }
}

/// Learnable soft-assignment parameters for one pooling layer: assignment
/// weights `w` (K×D), biases `b` (K) and, for pooling kinds that subtract
/// residuals, cluster centers `c` (K×D).
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterParams {
    pub w: Tensor,
    pub b: Tensor,
    pub c: Option<Tensor>,
}

impl ClusterParams {
    pub fn new(w: Tensor, b: Tensor, c: Option<Tensor>) -> Result<ClusterParams, PoolingError> {
        if w.rank() != 2 || w.rows() == 0 {
            return Err(PoolingError::BadParams("w must be K×D with K >= 1"));
        }
        if b.rank() != 1 || b.numel() != w.rows() {
            return Err(PoolingError::BadParams("b must be a K-vector"));
        }
        if let Some(c) = &c {
            if c.shape() != w.shape() {
                return Err(PoolingError::BadParams("c must match w's K×D shape"));
            }
        }
        Ok(ClusterParams { w, b, c })
    }

    pub fn clusters(&self) -> usize {
        self.w.rows()
    }

    pub fn dim(&self) -> usize {
        self.w.cols()
    }

    /// Center-anchored initialization: draws centers with coordinates of
    /// standard deviation `1/sqrt(D)` and sets `w_k = 2*alpha*c_k`,
    /// `b_k = -alpha*||c_k||^2`, so the soft assignment of a descriptor is
    /// proportional to `exp(-alpha*||x - c_k||^2)`. Large `alpha` approaches
    /// hard nearest-center assignment.
    pub fn init_netvlad(k: usize, d: usize, alpha: f32, rng: &mut SeededRng) -> ClusterParams {
        let std = 1.0 / crate::math::sqrt32(d as f32);
        let c = Tensor::from_fn(&[k, d], |_| rng.normal_f32() * std);
        let mut w = Tensor::zeros(&[k, d]);
        let mut b = Tensor::zeros(&[k]);
        for kk in 0..k {
            let mut sq = 0.0f64;
            for j in 0..d {
                let cj = c.at(kk, j);
                w.set(kk, j, 2.0 * alpha * cj);
                sq += (cj as f64) * (cj as f64);
            }
            b.data_mut()[kk] = -(alpha as f64 * sq) as f32;
        }
        ClusterParams { w, b, c: Some(c) }
    }

    /// Same calibration as [`ClusterParams::init_netvlad`] but the drawn
    /// centers are discarded, for pooling kinds that never subtract them.
    pub fn init_centerless(k: usize, d: usize, alpha: f32, rng: &mut SeededRng) -> ClusterParams {
        let mut p = Self::init_netvlad(k, d, alpha, rng);
        p.c = None;
        p
    }
}

/// Which pooling produced a descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    NetVlad,
    NetRvlad,
    HardVlad,
    SoftBof,
}

impl PoolKind {
    pub fn is_vlad_family(self) -> bool {
        !matches!(self, PoolKind::SoftBof)
    }
}

/// Aggregated video-level descriptor: a K×D residual matrix for the VLAD
/// family or a K-vector histogram for soft bag-of-features.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledDescriptor {
    pub v: Tensor,
    pub kind: PoolKind,
}

fn check_dims(x: &DescriptorSet, p: &ClusterParams) -> Result<(), PoolingError> {
    if x.dim() != p.dim() {
        return Err(PoolingError::DimMismatch {
            input: x.dim(),
            params: p.dim(),
        });
    }
    Ok(())
}

/// Soft assignment of each descriptor to the K clusters: row `i` is the
/// softmax over k of `w_k . x_i + b_k`, an N×K row-stochastic matrix.
pub fn soft_assign(x: &DescriptorSet, p: &ClusterParams) -> Result<Tensor, PoolingError> {
    check_dims(x, p)?;
    Ok(soft_assign_impl(x.matrix(), &p.w, &p.b))
}

pub(crate) fn soft_assign_impl(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let mut logits = matmul_nt(x, w).expect("dims checked");
    let k = w.rows();
    for i in 0..x.rows() {
        let row = logits.row_mut(i);
        for (l, &bk) in row.iter_mut().zip(&b.data()[..k]) {
            *l += bk;
        }
    }
    softmax_rows(&logits)
}

/// Gradients of [`soft_assign`] w.r.t. descriptors, weights and biases,
/// given the forward output `assign` and the upstream gradient `d_assign`.
/// Returns `(dx, dw, db)`.
pub fn soft_assign_backward(
    x: &DescriptorSet,
    p: &ClusterParams,
    assign: &Tensor,
    d_assign: &Tensor,
) -> Result<(Tensor, Tensor, Tensor), PoolingError> {
    check_dims(x, p)?;
    Ok(soft_assign_backward_impl(x.matrix(), &p.w, assign, d_assign))
}

pub(crate) fn soft_assign_backward_impl(
    x: &Tensor,
    w: &Tensor,
    assign: &Tensor,
    d_assign: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let d_logits = softmax_rows_backward(assign, d_assign);
    let dx = matmul(&d_logits, w).expect("dims checked");
    let dw = matmul_tn(&d_logits, x).expect("dims checked");
    let mut db = Tensor::zeros(&[w.rows()]);
    for i in 0..d_logits.rows() {
        for (dbk, &dl) in db.data_mut().iter_mut().zip(d_logits.row(i)) {
            *dbk += dl;
        }
    }
    (dx, dw, db)
}

/// Column sums of an N×K assignment matrix: total soft mass per cluster.
fn assignment_mass(assign: &Tensor) -> Vec<f64> {
    let (n, k) = (assign.rows(), assign.cols());
    let mut mass = vec![0.0f64; k];
    for i in 0..n {
        for (m, &a) in mass.iter_mut().zip(assign.row(i)) {
            *m += a as f64;
        }
    }
    mass
}

/// NetVLAD pooling: `V(k, j) = sum_i a_k(x_i) * (x_i(j) - c_k(j))`, the
/// soft-assigned sum of residuals against each cluster center. Output is
/// the raw K×D matrix; normalization is a separate explicit step so other
/// transforms can run on the unnormalized residuals.
pub fn netvlad_pool(x: &DescriptorSet, p: &ClusterParams) -> Result<PooledDescriptor, PoolingError> {
    let assign = soft_assign(x, p)?;
    let c = p.c.as_ref().ok_or(PoolingError::BadParams(
        "NetVLAD pooling requires cluster centers",
    ))?;
    Ok(PooledDescriptor {
        v: netvlad_from_assign(x.matrix(), &assign, Some(c)),
        kind: PoolKind::NetVlad,
    })
}

/// NetRVLAD pooling: residual-free variant that aggregates soft-weighted
/// descriptors directly, `V'(k, j) = sum_i a_k(x_i) * x_i(j)`. Centers in
/// `p`, if any, are ignored.
pub fn netrvlad_pool(
    x: &DescriptorSet,
    p: &ClusterParams,
) -> Result<PooledDescriptor, PoolingError> {
    let assign = soft_assign(x, p)?;
    Ok(PooledDescriptor {
        v: netvlad_from_assign(x.matrix(), &assign, None),
        kind: PoolKind::NetRvlad,
    })
}

pub(crate) fn netvlad_from_assign(x: &Tensor, assign: &Tensor, c: Option<&Tensor>) -> Tensor {
    let mut v = matmul_tn(assign, x).expect("dims checked");
    if let Some(c) = c {
        let mass = assignment_mass(assign);
        let d = x.cols();
        for k in 0..c.rows() {
            let row = v.row_mut(k);
            let crow = &c.data()[k * d..(k + 1) * d];
            for (vj, &ckj) in row.iter_mut().zip(crow) {
                *vj = (*vj as f64 - mass[k] * ckj as f64) as f32;
            }
        }
    }
    v
}

/// Gradients of [`netvlad_pool`] / [`netrvlad_pool`] w.r.t. descriptors and
/// all cluster parameters. `d_v` is the upstream gradient on the K×D output;
/// `assign` is the forward soft assignment. Returns `(dx, dw, db, dc)`
/// where `dc` is `None` when `p.c` is absent.
pub fn netvlad_pool_backward(
    x: &DescriptorSet,
    p: &ClusterParams,
    assign: &Tensor,
    d_v: &Tensor,
) -> Result<(Tensor, Tensor, Tensor, Option<Tensor>), PoolingError> {
    check_dims(x, p)?;
    Ok(netvlad_backward_impl(
        x.matrix(),
        &p.w,
        p.c.as_ref(),
        assign,
        d_v,
    ))
}

pub(crate) fn netvlad_backward_impl(
    x: &Tensor,
    w: &Tensor,
    c: Option<&Tensor>,
    assign: &Tensor,
    d_v: &Tensor,
) -> (Tensor, Tensor, Tensor, Option<Tensor>) {
    // Direct paths of V = A^T X - diag(mass(A)) C.
    let mut d_assign = matmul_nt(x, d_v).expect("dims checked");
    let dx_direct = matmul(assign, d_v).expect("dims checked");
    let dc = c.map(|c| {
        let (k, d) = (c.rows(), c.cols());
        // Center term contributes -sum_j dV(k,j) c(k,j) to every dA(i,k).
        let mut center_dot = vec![0.0f64; k];
        for kk in 0..k {
            let mut acc = 0.0f64;
            for j in 0..d {
                acc += d_v.at(kk, j) as f64 * c.at(kk, j) as f64;
            }
            center_dot[kk] = acc;
        }
        for i in 0..d_assign.rows() {
            for (da, dot) in d_assign.row_mut(i).iter_mut().zip(&center_dot) {
                *da = (*da as f64 - dot) as f32;
            }
        }
        let mass = assignment_mass(assign);
        let mut dc = Tensor::zeros(&[k, d]);
        for kk in 0..k {
            for j in 0..d {
                dc.set(kk, j, (-mass[kk] * d_v.at(kk, j) as f64) as f32);
            }
        }
        dc
    });
    // Assignment path through the softmax.
    let (dx_assign, dw, db) = soft_assign_backward_impl(x, w, assign, &d_assign);
    let mut dx = dx_direct;
    for (a, &b) in dx.data_mut().iter_mut().zip(dx_assign.data()) {
        *a += b;
    }
    (dx, dw, db, dc)
}

/// Reference VLAD with hard nearest-center assignment (ties go to the
/// lowest cluster index). Not differentiable; used as a test oracle and as
/// the limit that calibrated soft assignment approaches.
pub fn vlad_pool_hard(x: &DescriptorSet, centers: &Tensor) -> PooledDescriptor {
    let (k, d) = (centers.rows(), centers.cols());
    assert_eq!(x.dim(), d, "descriptor dim must match centers");
    let mut v = Tensor::zeros(&[k, d]);
    for i in 0..x.frames() {
        let xi = x.matrix().row(i);
        let mut best = 0usize;
        let mut best_dist = f64::INFINITY;
        for kk in 0..k {
            let ck = centers.row(kk);
            let dist: f64 = xi
                .iter()
                .zip(ck)
                .map(|(&a, &b)| {
                    let r = a as f64 - b as f64;
                    r * r
                })
                .sum();
            if dist < best_dist {
                best_dist = dist;
                best = kk;
            }
        }
        let crow = centers.row(best).to_vec();
        let vrow = v.row_mut(best);
        for ((vj, &xj), &cj) in vrow.iter_mut().zip(xi).zip(&crow) {
            *vj += xj - cj;
        }
    }
    PooledDescriptor {
        v,
        kind: PoolKind::HardVlad,
    }
}

/// Cached norms from [`normalize_vlad_forward`], needed by the backward pass.
#[derive(Debug, Clone)]
pub struct VladNormCache {
    /// Per-row L2 norms of the raw input; rows under the epsilon guard pass
    /// through unchanged and their entry here is `None`.
    row_norms: Vec<Option<f64>>,
    /// Intra-normalized rows, flattened.
    intra: Tensor,
    /// Global norm of the flattened intra-normalized vector, `None` under guard.
    global_norm: Option<f64>,
    /// Final output (needed for the projection term of the backward).
    out: Tensor,
}

/// Two-stage VLAD normalization: every row of the K×D matrix is
/// L2-normalized (intra), then the flattened K·D vector is L2-normalized
/// again (inter). Rows or vectors with norm below the epsilon guard pass
/// through unchanged.
pub fn normalize_vlad(pooled: &PooledDescriptor) -> Result<Tensor, PoolingError> {
    Ok(normalize_vlad_forward(pooled)?.0)
}

pub fn normalize_vlad_forward(
    pooled: &PooledDescriptor,
) -> Result<(Tensor, VladNormCache), PoolingError> {
    if !pooled.kind.is_vlad_family() {
        return Err(PoolingError::NotVlad);
    }
    Ok(normalize_vlad_forward_impl(&pooled.v))
}

pub(crate) fn normalize_vlad_forward_impl(v: &Tensor) -> (Tensor, VladNormCache) {
    let (k, d) = (v.rows(), v.cols());
    let mut intra = Tensor::zeros(&[k * d]);
    let mut row_norms = Vec::with_capacity(k);
    for kk in 0..k {
        let row = v.row(kk);
        let norm = l2_norm(row);
        let dst = &mut intra.data_mut()[kk * d..(kk + 1) * d];
        if norm < NORM_EPSILON as f64 {
            dst.copy_from_slice(row);
            row_norms.push(None);
        } else {
            let inv = 1.0 / norm;
            for (o, &x) in dst.iter_mut().zip(row) {
                *o = (x as f64 * inv) as f32;
            }
            row_norms.push(Some(norm));
        }
    }
    let global = l2_norm(intra.data());
    let (out, global_norm) = if global < NORM_EPSILON as f64 {
        (intra.clone(), None)
    } else {
        let inv = 1.0 / global;
        (
            Tensor::vector(intra.data().iter().map(|&x| (x as f64 * inv) as f32).collect()),
            Some(global),
        )
    };
    let cache = VladNormCache {
        row_norms,
        intra,
        global_norm,
        out: out.clone(),
    };
    (out, cache)
}

/// Backward of the two-stage normalization: maps the gradient on the
/// flattened K·D output back onto the raw K×D pooled matrix.
pub fn normalize_vlad_backward(cache: &VladNormCache, d_out: &Tensor) -> Tensor {
    let kd = cache.intra.numel();
    debug_assert_eq!(d_out.numel(), kd);
    // Inter stage: y = u / ||u||  =>  du = (dy - y (y . dy)) / ||u||.
    let d_intra: Vec<f32> = match cache.global_norm {
        None => d_out.data().to_vec(),
        Some(norm) => {
            let dot: f64 = cache
                .out
                .data()
                .iter()
                .zip(d_out.data())
                .map(|(&y, &dy)| y as f64 * dy as f64)
                .sum();
            cache
                .out
                .data()
                .iter()
                .zip(d_out.data())
                .map(|(&y, &dy)| ((dy as f64 - y as f64 * dot) / norm) as f32)
                .collect()
        }
    };
    // Intra stage, per row.
    let k = cache.row_norms.len();
    let d = kd / k;
    let mut dv = Tensor::zeros(&[k, d]);
    for kk in 0..k {
        let dint = &d_intra[kk * d..(kk + 1) * d];
        let yrow = &cache.intra.data()[kk * d..(kk + 1) * d];
        let dst = dv.row_mut(kk);
        match cache.row_norms[kk] {
            None => dst.copy_from_slice(dint),
            Some(norm) => {
                let dot: f64 = yrow
                    .iter()
                    .zip(dint)
                    .map(|(&y, &dy)| y as f64 * dy as f64)
                    .sum();
                for ((o, &y), &dy) in dst.iter_mut().zip(yrow).zip(dint) {
                    *o = ((dy as f64 - y as f64 * dot) / norm) as f32;
                }
            }
        }
    }
    dv
}

/// Soft bag-of-features: the mean soft assignment over frames,
/// `h_k = (1/N) sum_i a_k(x_i)`. The mean (rather than the sum) makes the
/// histogram invariant to video length; it sums to 1 like each assignment row.
pub fn soft_bof_pool(x: &DescriptorSet, p: &ClusterParams) -> Result<PooledDescriptor, PoolingError> {
    let assign = soft_assign(x, p)?;
    Ok(PooledDescriptor {
        v: soft_bof_from_assign(&assign),
        kind: PoolKind::SoftBof,
    })
}

pub(crate) fn soft_bof_from_assign(assign: &Tensor) -> Tensor {
    let n = assign.rows() as f64;
    let mass = assignment_mass(assign);
    Tensor::vector(mass.iter().map(|&m| (m / n) as f32).collect())
}

/// Gradients of [`soft_bof_pool`]: `(dx, dw, db)` given the forward
/// assignment and the upstream gradient on the K-vector histogram.
pub fn soft_bof_pool_backward(
    x: &DescriptorSet,
    p: &ClusterParams,
    assign: &Tensor,
    d_h: &Tensor,
) -> Result<(Tensor, Tensor, Tensor), PoolingError> {
    check_dims(x, p)?;
    Ok(soft_bof_backward_impl(x.matrix(), &p.w, assign, d_h))
}

pub(crate) fn soft_bof_backward_impl(
    x: &Tensor,
    w: &Tensor,
    assign: &Tensor,
    d_h: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (n, k) = (assign.rows(), assign.cols());
    let inv_n = 1.0 / n as f32;
    let mut d_assign = Tensor::zeros(&[n, k]);
    for i in 0..n {
        for (da, &dh) in d_assign.row_mut(i).iter_mut().zip(d_h.data()) {
            *da = dh * inv_n;
        }
    }
    soft_assign_backward_impl(x, w, assign, &d_assign)
}
