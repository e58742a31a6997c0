//! Classification heads: context gating and the per-class mixture of
//! experts, plus the plain dense projection the models use between pooling
//! and gating.

use core::fmt;

use crate::math::sigmoid32;
use crate::rng::SeededRng;
use crate::tensor::{matmul, matmul_nt, matmul_tn, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub enum HeadError {
    DimMismatch { input: usize, expected: usize },
    BadParams(&'static str),
}

impl fmt::Display for HeadError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DimMismatch { input, expected } => {
                write!(f, "input dim {input} does not match parameter dim {expected}")
            }
            Self::BadParams(msg) => write!(f, "bad head parameters: {msg}"),
        }
    }
}

impl core::error::Error for HeadError {}

/// Context gating: `z = sigmoid(W y + b) ⊙ y`, a learned multiplicative
/// reweighting of a feature vector by its own context. `w` is square (F×F).
#[derive(Debug, Clone, PartialEq)]
pub struct ContextGateParams {
    pub w: Tensor,
    pub b: Tensor,
}

impl ContextGateParams {
    pub fn new(w: Tensor, b: Tensor) -> Result<ContextGateParams, HeadError> {
        if w.rank() != 2 || w.rows() != w.cols() {
            return Err(HeadError::BadParams("gate matrix must be square"));
        }
        if b.rank() != 1 || b.numel() != w.rows() {
            return Err(HeadError::BadParams("gate bias must be an F-vector"));
        }
        Ok(ContextGateParams { w, b })
    }

    pub fn init(f: usize, rng: &mut SeededRng) -> ContextGateParams {
        let std = 1.0 / crate::math::sqrt32(f as f32);
        ContextGateParams {
            w: Tensor::from_fn(&[f, f], |_| rng.normal_f32() * std),
            b: Tensor::zeros(&[f]),
        }
    }

    pub fn dim(&self) -> usize {
        self.w.rows()
    }
}

/// Sigmoid activations cached by the gating forward pass.
#[derive(Debug, Clone)]
pub struct GateCache {
    gate: Tensor,
}

/// Gate a single feature vector.
pub fn context_gate(y: &Tensor, p: &ContextGateParams) -> Result<Tensor, HeadError> {
    if y.rank() != 1 || y.numel() != p.dim() {
        return Err(HeadError::DimMismatch {
            input: y.numel(),
            expected: p.dim(),
        });
    }
    let rows = y.reshape(&[1, y.numel()]).expect("vector reshape");
    let (out, _) = context_gate_rows_forward(&rows, p)?;
    Ok(out.flatten())
}

pub fn context_gate_forward(
    y: &Tensor,
    p: &ContextGateParams,
) -> Result<(Tensor, GateCache), HeadError> {
    let rows = y.reshape(&[1, y.numel()]).expect("vector reshape");
    let (out, cache) = context_gate_rows_forward(&rows, p)?;
    Ok((out.flatten(), cache))
}

pub fn context_gate_backward(
    y: &Tensor,
    p: &ContextGateParams,
    cache: &GateCache,
    d_z: &Tensor,
) -> Result<(Tensor, Tensor, Tensor), HeadError> {
    let rows = y.reshape(&[1, y.numel()]).expect("vector reshape");
    let d_rows = d_z.reshape(&[1, d_z.numel()]).expect("vector reshape");
    let (dy, dw, db) = context_gate_rows_backward(&rows, p, cache, &d_rows)?;
    Ok((dy.flatten(), dw, db))
}

/// Gate every row of an N×F matrix with shared parameters (frame-level
/// gating applies this to each frame vector).
pub fn context_gate_rows_forward(
    y: &Tensor,
    p: &ContextGateParams,
) -> Result<(Tensor, GateCache), HeadError> {
    if y.rank() != 2 || y.cols() != p.dim() {
        return Err(HeadError::DimMismatch {
            input: if y.rank() == 2 { y.cols() } else { 0 },
            expected: p.dim(),
        });
    }
    let mut act = matmul_nt(y, &p.w).expect("dims checked");
    for i in 0..act.rows() {
        for (a, &bj) in act.row_mut(i).iter_mut().zip(p.b.data()) {
            *a = sigmoid32(*a + bj);
        }
    }
    let out = act.hadamard(y).expect("same shape");
    Ok((out, GateCache { gate: act }))
}

pub fn context_gate_rows_backward(
    y: &Tensor,
    p: &ContextGateParams,
    cache: &GateCache,
    d_z: &Tensor,
) -> Result<(Tensor, Tensor, Tensor), HeadError> {
    if y.shape() != cache.gate.shape() || d_z.shape() != y.shape() {
        return Err(HeadError::BadParams("cache/gradient shape mismatch"));
    }
    // z = g ⊙ y with g = sigmoid(a), a = W y + b.
    let mut d_a = Tensor::zeros(y.shape());
    let mut dy = Tensor::zeros(y.shape());
    for i in 0..y.rows() {
        for j in 0..y.cols() {
            let g = cache.gate.at(i, j);
            let dz = d_z.at(i, j);
            dy.set(i, j, dz * g);
            d_a.set(i, j, dz * y.at(i, j) * g * (1.0 - g));
        }
    }
    // a_i = sum_j W[i][j] y_j  =>  dW = d_a^T y per row batch, dy += d_a W.
    let dw = matmul_tn(&d_a, y).expect("dims checked");
    let dy_gate = matmul(&d_a, &p.w).expect("dims checked");
    for (a, &b) in dy.data_mut().iter_mut().zip(dy_gate.data()) {
        *a += b;
    }
    let mut db = Tensor::zeros(&[p.dim()]);
    for i in 0..d_a.rows() {
        for (d, &v) in db.data_mut().iter_mut().zip(d_a.row(i)) {
            *d += v;
        }
    }
    Ok((dy, dw, db))
}

/// Mixture-of-experts multi-label head. For each class, E expert logits are
/// squashed through a sigmoid and combined with a per-class softmax gate;
/// every class score lands in [0, 1]. Weight columns are laid out class-major:
/// column `c * experts + e`.
#[derive(Debug, Clone, PartialEq)]
pub struct MoeParams {
    pub gate_w: Tensor,
    pub gate_b: Tensor,
    pub expert_w: Tensor,
    pub expert_b: Tensor,
    classes: usize,
    experts: usize,
}

impl MoeParams {
    pub fn new(
        gate_w: Tensor,
        gate_b: Tensor,
        expert_w: Tensor,
        expert_b: Tensor,
        classes: usize,
        experts: usize,
    ) -> Result<MoeParams, HeadError> {
        if classes == 0 || experts == 0 {
            return Err(HeadError::BadParams("classes and experts must be >= 1"));
        }
        let ce = classes * experts;
        if gate_w.rank() != 2 || gate_w.cols() != ce || expert_w.shape() != gate_w.shape() {
            return Err(HeadError::BadParams("weights must be F×(C·E)"));
        }
        if gate_b.numel() != ce || expert_b.numel() != ce {
            return Err(HeadError::BadParams("biases must be (C·E)-vectors"));
        }
        Ok(MoeParams {
            gate_w,
            gate_b,
            expert_w,
            expert_b,
            classes,
            experts,
        })
    }

    pub fn init(f: usize, classes: usize, experts: usize, rng: &mut SeededRng) -> MoeParams {
        let std = 1.0 / crate::math::sqrt32(f as f32);
        let ce = classes * experts;
        MoeParams {
            gate_w: Tensor::from_fn(&[f, ce], |_| rng.normal_f32() * std),
            gate_b: Tensor::zeros(&[ce]),
            expert_w: Tensor::from_fn(&[f, ce], |_| rng.normal_f32() * std),
            expert_b: Tensor::zeros(&[ce]),
            classes,
            experts,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.gate_w.rows()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn experts(&self) -> usize {
        self.experts
    }
}

/// Per-(class, expert) activations cached by the forward pass.
#[derive(Debug, Clone)]
pub struct MoeCache {
    /// Softmax gate weights, C×E.
    gates: Tensor,
    /// Sigmoid expert outputs, C×E.
    experts: Tensor,
}

/// Class probabilities for one feature vector.
pub fn moe_predict(v: &Tensor, p: &MoeParams) -> Result<Tensor, HeadError> {
    Ok(moe_forward(v, p)?.0)
}

pub fn moe_forward(v: &Tensor, p: &MoeParams) -> Result<(Tensor, MoeCache), HeadError> {
    if v.rank() != 1 || v.numel() != p.feature_dim() {
        return Err(HeadError::DimMismatch {
            input: v.numel(),
            expected: p.feature_dim(),
        });
    }
    let (c, e) = (p.classes, p.experts);
    let vrow = v.reshape(&[1, v.numel()]).expect("vector reshape");
    let gate_logits = add_bias(&matmul(&vrow, &p.gate_w).expect("dims checked"), &p.gate_b);
    let expert_logits = add_bias(
        &matmul(&vrow, &p.expert_w).expect("dims checked"),
        &p.expert_b,
    );
    let gates = crate::tensor::softmax_rows(
        &gate_logits.reshape(&[c, e]).expect("class-major layout"),
    );
    let mut experts = expert_logits.reshape(&[c, e]).expect("class-major layout");
    for x in experts.data_mut() {
        *x = sigmoid32(*x);
    }
    let mut probs = Tensor::zeros(&[c]);
    for cc in 0..c {
        let mut acc = 0.0f64;
        for ee in 0..e {
            acc += gates.at(cc, ee) as f64 * experts.at(cc, ee) as f64;
        }
        probs.data_mut()[cc] = acc as f32;
    }
    Ok((probs, MoeCache { gates, experts }))
}

fn add_bias(row: &Tensor, b: &Tensor) -> Tensor {
    let mut out = row.clone();
    for (x, &bb) in out.data_mut().iter_mut().zip(b.data()) {
        *x += bb;
    }
    out
}

/// Gradients of [`moe_predict`]: `(dv, d_gate_w, d_gate_b, d_expert_w,
/// d_expert_b)` given the upstream gradient on the class scores.
pub fn moe_backward(
    v: &Tensor,
    p: &MoeParams,
    cache: &MoeCache,
    d_probs: &Tensor,
) -> Result<(Tensor, Tensor, Tensor, Tensor, Tensor), HeadError> {
    let (c, e) = (p.classes, p.experts);
    if d_probs.numel() != c {
        return Err(HeadError::DimMismatch {
            input: d_probs.numel(),
            expected: c,
        });
    }
    // score_c = sum_e gate_ce * expert_ce.
    let mut d_gates = Tensor::zeros(&[c, e]);
    let mut d_experts = Tensor::zeros(&[c, e]);
    for cc in 0..c {
        let ds = d_probs.data()[cc];
        for ee in 0..e {
            d_gates.set(cc, ee, ds * cache.experts.at(cc, ee));
            d_experts.set(cc, ee, ds * cache.gates.at(cc, ee));
        }
    }
    let d_gate_logits = crate::tensor::softmax_rows_backward(&cache.gates, &d_gates);
    let mut d_expert_logits = d_experts;
    for (dx, &s) in d_expert_logits.data_mut().iter_mut().zip(cache.experts.data()) {
        *dx *= s * (1.0 - s);
    }

    let dgl = d_gate_logits.reshape(&[1, c * e]).expect("flat");
    let del = d_expert_logits.reshape(&[1, c * e]).expect("flat");
    let vrow = v.reshape(&[1, v.numel()]).expect("vector reshape");
    // logits = v · W + b.
    let d_gate_w = matmul_tn(&vrow, &dgl).expect("dims checked");
    let d_expert_w = matmul_tn(&vrow, &del).expect("dims checked");
    let d_gate_b = dgl.flatten();
    let d_expert_b = del.flatten();
    let mut dv = matmul_nt(&dgl, &p.gate_w).expect("dims checked").flatten();
    let dv_expert = matmul_nt(&del, &p.expert_w).expect("dims checked");
    for (a, &b) in dv.data_mut().iter_mut().zip(dv_expert.data()) {
        *a += b;
    }
    Ok((dv, d_gate_w, d_gate_b, d_expert_w, d_expert_b))
}

/// Dense affine projection `y = x W + b` with `w` of shape In×Out.
pub(crate) fn dense_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let xrow = x.reshape(&[1, x.numel()]).expect("vector reshape");
    let mut y = matmul(&xrow, w).expect("dims checked").flatten();
    for (o, &bb) in y.data_mut().iter_mut().zip(b.data()) {
        *o += bb;
    }
    y
}

/// Backward of [`dense_forward`]: `(dx, dw, db)`.
pub(crate) fn dense_backward(x: &Tensor, w: &Tensor, d_y: &Tensor) -> (Tensor, Tensor, Tensor) {
    let xrow = x.reshape(&[1, x.numel()]).expect("vector reshape");
    let dyrow = d_y.reshape(&[1, d_y.numel()]).expect("vector reshape");
    let dw = matmul_tn(&xrow, &dyrow).expect("dims checked");
    let dx = matmul_nt(&dyrow, w).expect("dims checked").flatten();
    (dx, dw, d_y.clone())
}
