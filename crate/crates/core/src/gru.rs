//! Stacked gated recurrent unit encoder. Frames are fed in temporal order
//! through one or more GRU layers starting from zero hidden state; the
//! video-level vector is the final hidden state of the top layer.
//!
//! Gate convention: `h' = (1 - z) ⊙ h + z ⊙ h~`, with
//! `z = σ(Wz·x + Uz·h + bz)`, `r = σ(Wr·x + Ur·h + br)` and
//! `h~ = tanh(Wh·x + Uh·(r ⊙ h) + bh)`.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::math::{sigmoid32, tanh32};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub enum GruError {
    /// Input vector length disagrees with the layer's input maps.
    DimMismatch { input: usize, expected: usize },
    /// Hidden state length disagrees with the layer's recurrent maps.
    HiddenMismatch { hidden: usize, expected: usize },
    /// Layer shapes are internally inconsistent.
    BadParams(&'static str),
    /// The stack's layers do not chain (layer input dim != previous hidden).
    BadStack,
    /// Sequence with zero frames.
    EmptySequence,
}

impl fmt::Display for GruError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DimMismatch { input, expected } => {
                write!(f, "input dim {input} does not match layer input dim {expected}")
            }
            Self::HiddenMismatch { hidden, expected } => {
                write!(f, "hidden dim {hidden} does not match layer hidden dim {expected}")
            }
            Self::BadParams(msg) => write!(f, "bad GRU parameters: {msg}"),
            Self::BadStack => write!(f, "stacked layers do not chain"),
            Self::EmptySequence => write!(f, "cannot encode an empty frame sequence"),
        }
    }
}

impl core::error::Error for GruError {}

/// Parameters of one GRU layer: input maps (D_in×H), recurrent maps (H×H)
/// and biases (H) for the update, reset and candidate gates.
#[derive(Debug, Clone, PartialEq)]
pub struct GruLayerParams {
    pub w_z: Tensor,
    pub w_r: Tensor,
    pub w_h: Tensor,
    pub u_z: Tensor,
    pub u_r: Tensor,
    pub u_h: Tensor,
    pub b_z: Tensor,
    pub b_r: Tensor,
    pub b_h: Tensor,
}

impl GruLayerParams {
    pub fn init(d_in: usize, hidden: usize, rng: &mut SeededRng) -> GruLayerParams {
        let w_std = 1.0 / crate::math::sqrt32(d_in as f32);
        let u_std = 1.0 / crate::math::sqrt32(hidden as f32);
        let mut w = |std: f32, rows: usize| Tensor::from_fn(&[rows, hidden], |_| rng.normal_f32() * std);
        let w_z = w(w_std, d_in);
        let w_r = w(w_std, d_in);
        let w_h = w(w_std, d_in);
        let u_z = w(u_std, hidden);
        let u_r = w(u_std, hidden);
        let u_h = w(u_std, hidden);
        GruLayerParams {
            w_z,
            w_r,
            w_h,
            u_z,
            u_r,
            u_h,
            b_z: Tensor::zeros(&[hidden]),
            b_r: Tensor::zeros(&[hidden]),
            b_h: Tensor::zeros(&[hidden]),
        }
    }

    pub fn validate(&self) -> Result<(), GruError> {
        let (d_in, h) = (self.w_z.rows(), self.w_z.cols());
        for (t, rows) in [
            (&self.w_r, d_in),
            (&self.w_h, d_in),
            (&self.u_z, h),
            (&self.u_r, h),
            (&self.u_h, h),
        ] {
            if t.rank() != 2 || t.rows() != rows || t.cols() != h {
                return Err(GruError::BadParams("gate matrix shapes disagree"));
            }
        }
        for b in [&self.b_z, &self.b_r, &self.b_h] {
            if b.rank() != 1 || b.numel() != h {
                return Err(GruError::BadParams("bias length disagrees with hidden dim"));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.w_z.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_z.cols()
    }
}

/// Ordered GRU layers; layer `l` consumes the hidden sequence of layer `l-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruStack {
    layers: Vec<GruLayerParams>,
}

impl GruStack {
    pub fn new(layers: Vec<GruLayerParams>) -> Result<GruStack, GruError> {
        if layers.is_empty() {
            return Err(GruError::BadParams("stack needs at least one layer"));
        }
        for layer in &layers {
            layer.validate()?;
        }
        for pair in layers.windows(2) {
            if pair[1].input_dim() != pair[0].hidden_dim() {
                return Err(GruError::BadStack);
            }
        }
        Ok(GruStack { layers })
    }

    pub fn init(d_in: usize, hidden: usize, layers: usize, rng: &mut SeededRng) -> GruStack {
        let mut v = Vec::with_capacity(layers);
        for l in 0..layers {
            let d = if l == 0 { d_in } else { hidden };
            v.push(GruLayerParams::init(d, hidden, rng));
        }
        GruStack { layers: v }
    }

    pub fn layers(&self) -> &[GruLayerParams] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn top_hidden_dim(&self) -> usize {
        self.layers.last().unwrap().hidden_dim()
    }
}

/// `out[j] = sum_i x[i] * m[i][j]`, accumulated in f64.
fn vec_mat_acc(x: &[f32], m: &Tensor, acc: &mut [f64]) {
    let h = m.cols();
    for (i, &xi) in x.iter().enumerate() {
        let xi = xi as f64;
        let row = &m.data()[i * h..(i + 1) * h];
        for (a, &mij) in acc.iter_mut().zip(row) {
            *a += xi * mij as f64;
        }
    }
}

/// `out[i] = sum_j m[i][j] * y[j]`, accumulated in f64 (matrix · column).
fn mat_vec_add(m: &Tensor, y: &[f32], out: &mut [f32]) {
    let h = m.cols();
    for (i, o) in out.iter_mut().enumerate() {
        let row = &m.data()[i * h..(i + 1) * h];
        let mut acc = 0.0f64;
        for (&mij, &yj) in row.iter().zip(y) {
            acc += mij as f64 * yj as f64;
        }
        *o += acc as f32;
    }
}

/// Per-step intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub struct GruStepCache {
    x: Vec<f32>,
    h_prev: Vec<f32>,
    z: Vec<f32>,
    r: Vec<f32>,
    h_tilde: Vec<f32>,
    rh: Vec<f32>,
}

fn check_step_dims(x: &Tensor, h: &Tensor, p: &GruLayerParams) -> Result<(), GruError> {
    if x.numel() != p.input_dim() {
        return Err(GruError::DimMismatch {
            input: x.numel(),
            expected: p.input_dim(),
        });
    }
    if h.numel() != p.hidden_dim() {
        return Err(GruError::HiddenMismatch {
            hidden: h.numel(),
            expected: p.hidden_dim(),
        });
    }
    Ok(())
}

/// One cell update: consumes input vector `x` and hidden state `h`,
/// returns the next hidden state.
pub fn gru_cell_step(x: &Tensor, h: &Tensor, p: &GruLayerParams) -> Result<Tensor, GruError> {
    check_step_dims(x, h, p)?;
    let (h_new, _) = cell_forward(x.data(), h.data(), p);
    Ok(Tensor::vector(h_new))
}

fn cell_forward(x: &[f32], h: &[f32], p: &GruLayerParams) -> (Vec<f32>, GruStepCache) {
    let hd = p.hidden_dim();
    let gate = |w: &Tensor, u: &Tensor, b: &Tensor, hin: &[f32]| -> Vec<f64> {
        let mut acc: Vec<f64> = b.data().iter().map(|&v| v as f64).collect();
        vec_mat_acc(x, w, &mut acc);
        vec_mat_acc(hin, u, &mut acc);
        acc
    };
    let z: Vec<f32> = gate(&p.w_z, &p.u_z, &p.b_z, h)
        .iter()
        .map(|&a| sigmoid32(a as f32))
        .collect();
    let r: Vec<f32> = gate(&p.w_r, &p.u_r, &p.b_r, h)
        .iter()
        .map(|&a| sigmoid32(a as f32))
        .collect();
    let rh: Vec<f32> = r.iter().zip(h).map(|(&ri, &hi)| ri * hi).collect();
    let h_tilde: Vec<f32> = gate(&p.w_h, &p.u_h, &p.b_h, &rh)
        .iter()
        .map(|&a| tanh32(a as f32))
        .collect();
    let mut h_new = vec![0.0f32; hd];
    for j in 0..hd {
        h_new[j] = (1.0 - z[j]) * h[j] + z[j] * h_tilde[j];
    }
    let cache = GruStepCache {
        x: x.to_vec(),
        h_prev: h.to_vec(),
        z,
        r,
        h_tilde,
        rh,
    };
    (h_new, cache)
}

/// Accumulated parameter gradients for one layer.
#[derive(Debug, Clone)]
pub struct GruLayerGrads {
    pub w_z: Tensor,
    pub w_r: Tensor,
    pub w_h: Tensor,
    pub u_z: Tensor,
    pub u_r: Tensor,
    pub u_h: Tensor,
    pub b_z: Tensor,
    pub b_r: Tensor,
    pub b_h: Tensor,
}

impl GruLayerGrads {
    pub fn zeros_like(p: &GruLayerParams) -> GruLayerGrads {
        GruLayerGrads {
            w_z: Tensor::zeros(p.w_z.shape()),
            w_r: Tensor::zeros(p.w_r.shape()),
            w_h: Tensor::zeros(p.w_h.shape()),
            u_z: Tensor::zeros(p.u_z.shape()),
            u_r: Tensor::zeros(p.u_r.shape()),
            u_h: Tensor::zeros(p.u_h.shape()),
            b_z: Tensor::zeros(p.b_z.shape()),
            b_r: Tensor::zeros(p.b_r.shape()),
            b_h: Tensor::zeros(p.b_h.shape()),
        }
    }
}

fn outer_add(grad: &mut Tensor, x: &[f32], dy: &[f32]) {
    let cols = grad.cols();
    let data = grad.data_mut();
    for (i, &xi) in x.iter().enumerate() {
        let row = &mut data[i * cols..(i + 1) * cols];
        for (g, &d) in row.iter_mut().zip(dy) {
            *g += xi * d;
        }
    }
}

fn add_slice(dst: &mut [f32], src: &[f32]) {
    for (a, &b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

/// One-step backward: maps `d_h_new` onto gradients for the step input and
/// the previous hidden state, accumulating parameter gradients into `grads`.
fn cell_backward(
    p: &GruLayerParams,
    cache: &GruStepCache,
    d_h_new: &[f32],
    grads: &mut GruLayerGrads,
) -> (Vec<f32>, Vec<f32>) {
    let hd = p.hidden_dim();
    let din = p.input_dim();
    let mut dx = vec![0.0f32; din];
    let mut dh_prev = vec![0.0f32; hd];

    let mut dz = vec![0.0f32; hd];
    let mut dht = vec![0.0f32; hd];
    for j in 0..hd {
        dz[j] = d_h_new[j] * (cache.h_tilde[j] - cache.h_prev[j]);
        dht[j] = d_h_new[j] * cache.z[j];
        dh_prev[j] += d_h_new[j] * (1.0 - cache.z[j]);
    }

    // Candidate gate: h~ = tanh(ah), ah = Wh·x + Uh·(r ⊙ h) + bh.
    let dah: Vec<f32> = dht
        .iter()
        .zip(&cache.h_tilde)
        .map(|(&d, &t)| d * (1.0 - t * t))
        .collect();
    outer_add(&mut grads.w_h, &cache.x, &dah);
    outer_add(&mut grads.u_h, &cache.rh, &dah);
    add_slice(grads.b_h.data_mut(), &dah);
    let mut drh = vec![0.0f32; hd];
    mat_vec_add(&p.u_h, &dah, &mut drh);
    mat_vec_add(&p.w_h, &dah, &mut dx);
    let mut dr = vec![0.0f32; hd];
    for j in 0..hd {
        dr[j] = drh[j] * cache.h_prev[j];
        dh_prev[j] += drh[j] * cache.r[j];
    }

    // Reset gate.
    let dar: Vec<f32> = dr
        .iter()
        .zip(&cache.r)
        .map(|(&d, &r)| d * r * (1.0 - r))
        .collect();
    outer_add(&mut grads.w_r, &cache.x, &dar);
    outer_add(&mut grads.u_r, &cache.h_prev, &dar);
    add_slice(grads.b_r.data_mut(), &dar);
    mat_vec_add(&p.w_r, &dar, &mut dx);
    mat_vec_add(&p.u_r, &dar, &mut dh_prev);

    // Update gate.
    let daz: Vec<f32> = dz
        .iter()
        .zip(&cache.z)
        .map(|(&d, &z)| d * z * (1.0 - z))
        .collect();
    outer_add(&mut grads.w_z, &cache.x, &daz);
    outer_add(&mut grads.u_z, &cache.h_prev, &daz);
    add_slice(grads.b_z.data_mut(), &daz);
    mat_vec_add(&p.w_z, &daz, &mut dx);
    mat_vec_add(&p.u_z, &daz, &mut dh_prev);

    (dx, dh_prev)
}

/// Full forward cache: per layer, per time step.
#[derive(Debug, Clone)]
pub struct GruForwardCache {
    steps: Vec<Vec<GruStepCache>>,
}

/// Encode an N×D frame sequence; returns the final hidden state of the top
/// layer. Hidden states start at zero.
pub fn gru_forward(x: &Tensor, stack: &GruStack) -> Result<Tensor, GruError> {
    Ok(gru_forward_cached(x, stack)?.0)
}

pub fn gru_forward_cached(
    x: &Tensor,
    stack: &GruStack,
) -> Result<(Tensor, GruForwardCache), GruError> {
    if x.rank() != 2 || x.rows() == 0 {
        return Err(GruError::EmptySequence);
    }
    if x.cols() != stack.input_dim() {
        return Err(GruError::DimMismatch {
            input: x.cols(),
            expected: stack.input_dim(),
        });
    }
    let n = x.rows();
    let mut inputs: Vec<Vec<f32>> = (0..n).map(|i| x.row(i).to_vec()).collect();
    let mut steps = Vec::with_capacity(stack.layers.len());
    let mut top = Vec::new();
    for layer in &stack.layers {
        let hd = layer.hidden_dim();
        let mut h = vec![0.0f32; hd];
        let mut layer_steps = Vec::with_capacity(n);
        let mut outputs = Vec::with_capacity(n);
        for frame in &inputs {
            let (h_new, cache) = cell_forward(frame, &h, layer);
            layer_steps.push(cache);
            outputs.push(h_new.clone());
            h = h_new;
        }
        steps.push(layer_steps);
        top = h;
        inputs = outputs;
    }
    Ok((Tensor::vector(top), GruForwardCache { steps }))
}

/// Backward through time for the whole stack. `d_top` is the gradient on
/// the final top-layer hidden state. Returns the gradient on the input
/// frame matrix and per-layer parameter gradients (bottom layer first).
pub fn gru_backward(
    stack: &GruStack,
    cache: &GruForwardCache,
    d_top: &Tensor,
) -> Result<(Tensor, Vec<GruLayerGrads>), GruError> {
    let n_layers = stack.layers.len();
    debug_assert_eq!(cache.steps.len(), n_layers);
    let n = cache.steps[0].len();
    if d_top.numel() != stack.top_hidden_dim() {
        return Err(GruError::HiddenMismatch {
            hidden: d_top.numel(),
            expected: stack.top_hidden_dim(),
        });
    }

    let mut grads: Vec<GruLayerGrads> = stack
        .layers
        .iter()
        .map(GruLayerGrads::zeros_like)
        .collect();

    // External per-time gradients flowing into the current layer's outputs;
    // for the top layer only the final step receives gradient.
    let mut d_ext: Vec<Vec<f32>> = vec![vec![0.0; stack.top_hidden_dim()]; n];
    d_ext[n - 1] = d_top.data().to_vec();

    let mut d_input_rows: Vec<Vec<f32>> = Vec::new();
    for (l, layer) in stack.layers.iter().enumerate().rev() {
        let mut dh_carry = vec![0.0f32; layer.hidden_dim()];
        let mut d_below: Vec<Vec<f32>> = vec![Vec::new(); n];
        for t in (0..n).rev() {
            let mut dh_total = d_ext[t].clone();
            add_slice(&mut dh_total, &dh_carry);
            let (dx, dh_prev) = cell_backward(layer, &cache.steps[l][t], &dh_total, &mut grads[l]);
            d_below[t] = dx;
            dh_carry = dh_prev;
        }
        d_input_rows = d_below.clone();
        d_ext = d_below;
    }

    let din = stack.input_dim();
    let mut dx = Tensor::zeros(&[n, din]);
    for (t, row) in d_input_rows.iter().enumerate() {
        dx.row_mut(t).copy_from_slice(row);
    }
    Ok((dx, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;
    use crate::store::ParamStore;

    fn zero_layer(d_in: usize, h: usize) -> GruLayerParams {
        GruLayerParams {
            w_z: Tensor::zeros(&[d_in, h]),
            w_r: Tensor::zeros(&[d_in, h]),
            w_h: Tensor::zeros(&[d_in, h]),
            u_z: Tensor::zeros(&[h, h]),
            u_r: Tensor::zeros(&[h, h]),
            u_h: Tensor::zeros(&[h, h]),
            b_z: Tensor::zeros(&[h]),
            b_r: Tensor::zeros(&[h]),
            b_h: Tensor::zeros(&[h]),
        }
    }

    #[test]
    fn zero_params_halve_the_state() {
        // z = r = 0.5 and h~ = 0, so h' = 0.5 * h.
        let p = zero_layer(2, 2);
        let x = Tensor::vector(alloc::vec![3.0, -1.0]);
        let h = Tensor::vector(alloc::vec![1.0, -2.0]);
        let out = gru_cell_step(&x, &h, &p).unwrap();
        assert_eq!(out.data(), &[0.5, -1.0]);
    }

    #[test]
    fn zero_state_is_fixed_point_of_zero_params() {
        let p = zero_layer(3, 2);
        let x = Tensor::vector(alloc::vec![0.4, 0.5, 0.6]);
        let h = Tensor::zeros(&[2]);
        let out = gru_cell_step(&x, &h, &p).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0]);
    }

    /// Scalar re-derivation of one step, element by element.
    fn cell_oracle(x: &[f32], h: &[f32], p: &GruLayerParams) -> Vec<f64> {
        let hd = p.hidden_dim();
        let act = |w: &Tensor, u: &Tensor, b: &Tensor, hin: &[f64], j: usize| -> f64 {
            let mut a = b.data()[j] as f64;
            for (i, &xi) in x.iter().enumerate() {
                a += xi as f64 * w.at(i, j) as f64;
            }
            for (i, &hi) in hin.iter().enumerate() {
                a += hi * u.at(i, j) as f64;
            }
            a
        };
        let hf: Vec<f64> = h.iter().map(|&v| v as f64).collect();
        let sigmoid = |a: f64| 1.0 / (1.0 + crate::math::exp64(-a));
        let mut out = Vec::new();
        for j in 0..hd {
            let z = sigmoid(act(&p.w_z, &p.u_z, &p.b_z, &hf, j));
            let r: Vec<f64> = (0..hd)
                .map(|jj| sigmoid(act(&p.w_r, &p.u_r, &p.b_r, &hf, jj)))
                .collect();
            let rh: Vec<f64> = r.iter().zip(&hf).map(|(&a, &b)| a * b).collect();
            let mut ah = p.b_h.data()[j] as f64;
            for (i, &xi) in x.iter().enumerate() {
                ah += xi as f64 * p.w_h.at(i, j) as f64;
            }
            for (i, &v) in rh.iter().enumerate() {
                ah += v * p.u_h.at(i, j) as f64;
            }
            let ht = ah.tanh();
            out.push((1.0 - z) * hf[j] + z * ht);
        }
        out
    }

    #[test]
    fn random_step_matches_scalar_oracle() {
        let mut rng = SeededRng::new(60);
        let p = GruLayerParams::init(3, 4, &mut rng);
        let x = Tensor::from_fn(&[3], |_| rng.normal_f32());
        let h = Tensor::from_fn(&[4], |_| rng.normal_f32());
        let got = gru_cell_step(&x, &h, &p).unwrap();
        let want = cell_oracle(x.data(), h.data(), &p);
        for (a, b) in got.data().iter().zip(&want) {
            assert!((*a as f64 - b).abs() < 1e-6);
        }
    }

    #[test]
    fn new_state_is_convex_combination() {
        let mut rng = SeededRng::new(61);
        for _ in 0..20 {
            let p = GruLayerParams::init(3, 5, &mut rng);
            let x = Tensor::from_fn(&[3], |_| rng.normal_f32() * 2.0);
            let h = Tensor::from_fn(&[5], |_| rng.normal_f32() * 2.0);
            let (h_new, cache) = cell_forward(x.data(), h.data(), &p);
            for j in 0..5 {
                let lo = h.data()[j].min(cache.h_tilde[j]) - 1e-6;
                let hi = h.data()[j].max(cache.h_tilde[j]) + 1e-6;
                assert!(h_new[j] >= lo && h_new[j] <= hi);
            }
        }
    }

    #[test]
    fn single_frame_reduces_to_cell_steps_from_zero() {
        let mut rng = SeededRng::new(62);
        let stack = GruStack::init(3, 4, 2, &mut rng);
        let x = Tensor::from_fn(&[1, 3], |_| rng.normal_f32());
        let out = gru_forward(&x, &stack).unwrap();

        let x0 = Tensor::vector(x.row(0).to_vec());
        let h0 = gru_cell_step(&x0, &Tensor::zeros(&[4]), &stack.layers()[0]).unwrap();
        let h1 = gru_cell_step(&h0, &Tensor::zeros(&[4]), &stack.layers()[1]).unwrap();
        assert_eq!(out.data(), h1.data());
    }

    #[test]
    fn zero_params_encode_anything_to_zero() {
        let stack = GruStack::new(alloc::vec![zero_layer(3, 4), zero_layer(4, 4)]).unwrap();
        let mut rng = SeededRng::new(63);
        let x = Tensor::from_fn(&[5, 3], |_| rng.normal_f32());
        let out = gru_forward(&x, &stack).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_matches_unrolled_oracle() {
        let mut rng = SeededRng::new(64);
        let stack = GruStack::init(3, 4, 2, &mut rng);
        let x = Tensor::from_fn(&[3, 3], |_| rng.normal_f32());
        let out = gru_forward(&x, &stack).unwrap();

        // Unroll manually with gru_cell_step.
        let mut h0 = Tensor::zeros(&[4]);
        let mut h1 = Tensor::zeros(&[4]);
        for t in 0..3 {
            let xt = Tensor::vector(x.row(t).to_vec());
            h0 = gru_cell_step(&xt, &h0, &stack.layers()[0]).unwrap();
            h1 = gru_cell_step(&h0, &h1, &stack.layers()[1]).unwrap();
        }
        for (a, b) in out.data().iter().zip(h1.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_empty_sequences() {
        let mut rng = SeededRng::new(65);
        let stack = GruStack::init(3, 4, 1, &mut rng);
        let x = Tensor::zeros(&[0, 3]);
        assert!(matches!(
            gru_forward(&x, &stack),
            Err(GruError::EmptySequence)
        ));
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = SeededRng::new(66);
        let stack = GruStack::init(3, 4, 2, &mut rng);
        let x = Tensor::from_fn(&[4, 3], |_| rng.normal_f32());
        let a = gru_forward(&x, &stack).unwrap();
        let b = gru_forward(&x, &stack).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    /// Rebuilds a two-layer stack from a ParamStore so finite differences
    /// can perturb the stored tensors.
    fn stack_from_store(store: &ParamStore, d_in: usize, h: usize) -> GruStack {
        let layer = |prefix: &str| GruLayerParams {
            w_z: store.tensor(&alloc::format!("{prefix}.w_z")).clone(),
            w_r: store.tensor(&alloc::format!("{prefix}.w_r")).clone(),
            w_h: store.tensor(&alloc::format!("{prefix}.w_h")).clone(),
            u_z: store.tensor(&alloc::format!("{prefix}.u_z")).clone(),
            u_r: store.tensor(&alloc::format!("{prefix}.u_r")).clone(),
            u_h: store.tensor(&alloc::format!("{prefix}.u_h")).clone(),
            b_z: store.tensor(&alloc::format!("{prefix}.b_z")).clone(),
            b_r: store.tensor(&alloc::format!("{prefix}.b_r")).clone(),
            b_h: store.tensor(&alloc::format!("{prefix}.b_h")).clone(),
        };
        let _ = (d_in, h);
        GruStack::new(alloc::vec![layer("gru.0"), layer("gru.1")]).unwrap()
    }

    #[test]
    fn bptt_gradients_pass_finite_difference_check() {
        let (d_in, h, n) = (3, 4, 5);
        let mut rng = SeededRng::new(67);
        let stack = GruStack::init(d_in, h, 2, &mut rng);
        let x = Tensor::from_fn(&[n, d_in], |_| rng.normal_f32());
        // Scalar objective: fixed random projection of the final state.
        let proj: alloc::vec::Vec<f32> = (0..h).map(|_| rng.normal_f32()).collect();

        let mut store = ParamStore::new();
        for (l, layer) in stack.layers().iter().enumerate() {
            for (suffix, t) in [
                ("w_z", &layer.w_z),
                ("w_r", &layer.w_r),
                ("w_h", &layer.w_h),
                ("u_z", &layer.u_z),
                ("u_r", &layer.u_r),
                ("u_h", &layer.u_h),
                ("b_z", &layer.b_z),
                ("b_r", &layer.b_r),
                ("b_h", &layer.b_h),
            ] {
                store
                    .insert(&alloc::format!("gru.{l}.{suffix}"), t.clone())
                    .unwrap();
            }
        }

        // Analytic gradients.
        let (out, cache) = gru_forward_cached(&x, &stack).unwrap();
        let d_top = Tensor::vector(proj.clone());
        let (_, grads) = gru_backward(&stack, &cache, &d_top).unwrap();
        let _ = out;
        for (l, g) in grads.iter().enumerate() {
            for (suffix, t) in [
                ("w_z", &g.w_z),
                ("w_r", &g.w_r),
                ("w_h", &g.w_h),
                ("u_z", &g.u_z),
                ("u_r", &g.u_r),
                ("u_h", &g.u_h),
                ("b_z", &g.b_z),
                ("b_r", &g.b_r),
                ("b_h", &g.b_h),
            ] {
                store
                    .accumulate_grad(&alloc::format!("gru.{l}.{suffix}"), t.data(), 1.0)
                    .unwrap();
            }
        }

        let xc = x.clone();
        let projc = proj.clone();
        let f = move |s: &ParamStore| {
            let stack = stack_from_store(s, d_in, h);
            let out = gru_forward(&xc, &stack).unwrap();
            out.data()
                .iter()
                .zip(&projc)
                .map(|(&o, &p)| o as f64 * p as f64)
                .sum()
        };
        let report = grad_check(f, &mut store, 1e-3, 1e-3);
        assert!(
            report.passed,
            "max rel err {} at {}[{}]",
            report.max_rel_err, report.worst_param, report.worst_index
        );
    }
}
