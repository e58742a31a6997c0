//! Embedded-Gaussian non-local block over the K cluster descriptors of a
//! pooled K×D matrix: pairwise similarities in a learned embedding space,
//! row-softmax attention, a linear value map, and a residual output
//! projection. With the output projection at zero the block is the
//! identity, so a freshly initialized block never perturbs its input.

use core::fmt;

use crate::rng::SeededRng;
use crate::tensor::{
    matmul, matmul_nt, matmul_tn, softmax_rows, softmax_rows_backward, ShapeError, Tensor,
};

#[derive(Debug, Clone, PartialEq)]
pub enum NonLocalError {
    /// Input feature dim disagrees with the block's maps.
    DimMismatch { input: usize, params: usize },
    /// The four linear maps are not mutually consistent.
    BadParams(&'static str),
    Shape(ShapeError),
}

impl fmt::Display for NonLocalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DimMismatch { input, params } => write!(
                f,
                "input feature dim {input} does not match block dim {params}"
            ),
            Self::BadParams(msg) => write!(f, "bad non-local parameters: {msg}"),
            Self::Shape(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for NonLocalError {}

impl From<ShapeError> for NonLocalError {
    fn from(e: ShapeError) -> Self {
        NonLocalError::Shape(e)
    }
}

/// The four linear maps of the block: query/key/value embeddings
/// (`theta`, `phi`, `g`, each D×D_inner, bias-free) and the output
/// projection `w` (D_inner×D).
#[derive(Debug, Clone, PartialEq)]
pub struct NonLocalParams {
    pub theta: Tensor,
    pub phi: Tensor,
    pub g: Tensor,
    pub w: Tensor,
}

impl NonLocalParams {
    pub fn new(
        theta: Tensor,
        phi: Tensor,
        g: Tensor,
        w: Tensor,
    ) -> Result<NonLocalParams, NonLocalError> {
        if theta.rank() != 2 || phi.shape() != theta.shape() || g.shape() != theta.shape() {
            return Err(NonLocalError::BadParams(
                "theta, phi, g must share a D×D_inner shape",
            ));
        }
        let (d, inner) = (theta.rows(), theta.cols());
        if inner == 0 {
            return Err(NonLocalError::BadParams("D_inner must be >= 1"));
        }
        if w.rank() != 2 || w.rows() != inner || w.cols() != d {
            return Err(NonLocalError::BadParams("w must be D_inner×D"));
        }
        Ok(NonLocalParams { theta, phi, g, w })
    }

    /// Embedding maps drawn with std `1/sqrt(D)`; the output projection
    /// starts at zero so the block begins as the identity.
    pub fn init(d: usize, d_inner: usize, rng: &mut SeededRng) -> NonLocalParams {
        let std = 1.0 / crate::math::sqrt32(d as f32);
        NonLocalParams {
            theta: Tensor::from_fn(&[d, d_inner], |_| rng.normal_f32() * std),
            phi: Tensor::from_fn(&[d, d_inner], |_| rng.normal_f32() * std),
            g: Tensor::from_fn(&[d, d_inner], |_| rng.normal_f32() * std),
            w: Tensor::zeros(&[d_inner, d]),
        }
    }

    pub fn dim(&self) -> usize {
        self.theta.rows()
    }

    pub fn inner_dim(&self) -> usize {
        self.theta.cols()
    }
}

fn check_input(v: &Tensor, p: &NonLocalParams) -> Result<(), NonLocalError> {
    if v.rank() != 2 || v.cols() != p.dim() {
        return Err(NonLocalError::DimMismatch {
            input: if v.rank() == 2 { v.cols() } else { 0 },
            params: p.dim(),
        });
    }
    Ok(())
}

/// Row-stochastic K×K attention over cluster descriptors:
/// `softmax_rows((V Wθ)(V Wφ)ᵀ)`.
pub fn attention_matrix(v: &Tensor, p: &NonLocalParams) -> Result<Tensor, NonLocalError> {
    check_input(v, p)?;
    let theta_v = matmul(v, &p.theta)?;
    let phi_v = matmul(v, &p.phi)?;
    Ok(softmax_rows(&matmul_nt(&theta_v, &phi_v)?))
}

/// Intermediates of a forward pass, consumed by [`nonlocal_backward`].
#[derive(Debug, Clone)]
pub struct NonLocalCache {
    theta_v: Tensor,
    phi_v: Tensor,
    g_v: Tensor,
    attn: Tensor,
    y: Tensor,
}

impl NonLocalCache {
    pub fn attention(&self) -> &Tensor {
        &self.attn
    }
}

/// Non-local block with residual connection:
/// `out = attention_matrix(V) · (V Wg) · W + V`.
pub fn nonlocal_block(v: &Tensor, p: &NonLocalParams) -> Result<Tensor, NonLocalError> {
    Ok(nonlocal_forward(v, p)?.0)
}

pub fn nonlocal_forward(
    v: &Tensor,
    p: &NonLocalParams,
) -> Result<(Tensor, NonLocalCache), NonLocalError> {
    check_input(v, p)?;
    let theta_v = matmul(v, &p.theta)?;
    let phi_v = matmul(v, &p.phi)?;
    let g_v = matmul(v, &p.g)?;
    let attn = softmax_rows(&matmul_nt(&theta_v, &phi_v)?);
    let y = matmul(&attn, &g_v)?;
    let projected = matmul(&y, &p.w)?;
    let out = v.add(&projected)?;
    Ok((
        out,
        NonLocalCache {
            theta_v,
            phi_v,
            g_v,
            attn,
            y,
        },
    ))
}

/// Gradients of the block w.r.t. its input and all four maps:
/// `(dv, dtheta, dphi, dg, dw)`.
pub fn nonlocal_backward(
    v: &Tensor,
    p: &NonLocalParams,
    cache: &NonLocalCache,
    d_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor, Tensor, Tensor), NonLocalError> {
    check_input(v, p)?;
    // Residual path.
    let mut dv = d_out.clone();
    // Projection: out += Y W.
    let dw = matmul_tn(&cache.y, d_out)?;
    let dy = matmul_nt(d_out, &p.w)?;
    // Y = A G.
    let d_attn = matmul_nt(&dy, &cache.g_v)?;
    let dg_v = matmul_tn(&cache.attn, &dy)?;
    // A = softmax_rows(theta_v phi_v^T).
    let d_scores = softmax_rows_backward(&cache.attn, &d_attn);
    let d_theta_v = matmul(&d_scores, &cache.phi_v)?;
    let d_phi_v = matmul_tn(&d_scores, &cache.theta_v)?;
    // Embeddings: theta_v = V Wθ, etc.
    let dtheta = matmul_tn(v, &d_theta_v)?;
    let dphi = matmul_tn(v, &d_phi_v)?;
    let dg = matmul_tn(v, &dg_v)?;
    for t in [
        matmul_nt(&d_theta_v, &p.theta)?,
        matmul_nt(&d_phi_v, &p.phi)?,
        matmul_nt(&dg_v, &p.g)?,
    ] {
        for (a, &b) in dv.data_mut().iter_mut().zip(t.data()) {
            *a += b;
        }
    }
    Ok((dv, dtheta, dphi, dg, dw))
}
