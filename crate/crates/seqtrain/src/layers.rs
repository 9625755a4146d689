//! Forward and hand-derived backward passes for the sequence layers:
//! feed-forward, 1D LSTM (both scan directions), feature concatenation for
//! bidirectional stacks, inverted dropout, and the two losses.
//!
//! Everything consumes and produces masked `SeqTensor`s. The LSTM follows the
//! fused layout: the non-recurrent part `x·W + b` is one matrix multiplication
//! over all T·B frames, the time scan only adds the recurrent term, and the
//! weight/input gradients are again single large products after the scan.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{
    add_bias_rows, matmul, matmul_nt, matmul_tn, sigmoid_scalar, SeqTensor, Tensor,
};

/// Gate block count of the 1D cell, order [i, f, g, o].
pub const LSTM_GATES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Activation {
    Identity,
    Sigmoid,
    Tanh,
    Relu,
}

impl Activation {
    pub fn parse(name: &str) -> Result<Activation> {
        match name {
            "identity" => Ok(Activation::Identity),
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::Network(format!("unknown activation {:?}", other))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }

    fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Sigmoid => sigmoid_scalar(x),
            Activation::Tanh => x.tanh(),
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
        }
    }

    /// Derivative expressed through the activation output y.
    fn derive_from_output(&self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Scan direction of a recurrent layer: `Forward` walks t = 0..T, `Backward`
/// walks each sequence from its last valid frame toward t = 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn from_sign(sign: i64) -> Result<Direction> {
        match sign {
            1 => Ok(Direction::Forward),
            -1 => Ok(Direction::Backward),
            other => Err(Error::Network(format!(
                "direction must be +1 or -1, got {}",
                other
            ))),
        }
    }

    pub fn sign(&self) -> i64 {
        match self {
            Direction::Forward => 1,
            Direction::Backward => -1,
        }
    }

    fn scan_order(&self, t_len: usize) -> Vec<usize> {
        match self {
            Direction::Forward => (0..t_len).collect(),
            Direction::Backward => (0..t_len).rev().collect(),
        }
    }
}

/// Borrowed LSTM parameter triple. W is [D_in, 4H] with gate blocks
/// [i, f, g, o] along the width, R is [H, 4H], b is [4H].
#[derive(Clone, Copy)]
pub struct LstmParams<'a> {
    pub w: &'a Tensor,
    pub r: &'a Tensor,
    pub b: &'a Tensor,
}

impl<'a> LstmParams<'a> {
    pub fn hidden_dim(&self) -> usize {
        self.r.dims()[0]
    }

    fn check(&self, d_in: usize) {
        let h = self.hidden_dim();
        assert_eq!(
            self.w.dims(),
            &[d_in, LSTM_GATES * h],
            "LSTM W shape {:?} does not match input dim {} and hidden {}",
            self.w.dims(),
            d_in,
            h
        );
        assert_eq!(self.r.dims(), &[h, LSTM_GATES * h], "LSTM R shape invalid");
        assert_eq!(self.b.dims(), &[LSTM_GATES * h], "LSTM b shape invalid");
    }
}

/// Retained forward intermediates of a linear layer.
pub struct LinearCache {
    pub x: SeqTensor,
    pub y: SeqTensor,
    pub activation: Activation,
}

/// Retained forward intermediates of an LSTM layer: post-activation gates
/// [T,B,4H], cell states [T,B,H], hidden outputs [T,B,H], the (masked) input,
/// and the scan direction.
pub struct LstmCache {
    pub x: SeqTensor,
    pub gates: Tensor,
    pub cells: Tensor,
    pub hidden: Tensor,
    pub direction: Direction,
}

/// Loss over the masked-in frames of one batch: summed (never averaged), with
/// the frame-error count for classification outputs and the gradient with
/// respect to the loss input.
pub struct LossResult {
    pub loss: f64,
    pub frame_errors: usize,
    pub frames: usize,
    pub grad_wrt_input: SeqTensor,
}

/// y = act(x·W + b) applied frame-wise, then masked.
pub fn linear_forward(
    x: &SeqTensor,
    w: &Tensor,
    b: &Tensor,
    activation: Activation,
) -> (SeqTensor, LinearCache) {
    let (t_len, b_len, d_in) = (x.time_len(), x.batch_len(), x.feat_dim());
    assert_eq!(w.dims().len(), 2, "linear W must be rank 2");
    assert_eq!(w.dims()[0], d_in, "linear W rows {} vs input dim {}", w.dims()[0], d_in);
    let d_out = w.dims()[1];
    assert_eq!(b.dims(), &[d_out], "linear bias shape mismatch");

    let flat = x.values.reshaped(&[t_len * b_len, d_in]);
    let z = add_bias_rows(&matmul(&flat, w), b);
    let y_vals = z.map(|v| activation.apply(v)).reshaped(&[t_len, b_len, d_out]);
    let y = x.with_values(y_vals).apply_mask();
    let cache = LinearCache {
        x: x.clone(),
        y: y.clone(),
        activation,
    };
    (y, cache)
}

/// Gradients of a linear layer. Returns (dX, dW, db).
pub fn linear_backward(cache: &LinearCache, w: &Tensor, d_y: &SeqTensor) -> (SeqTensor, Tensor, Tensor) {
    let (t_len, b_len, d_out) = (cache.y.time_len(), cache.y.batch_len(), cache.y.feat_dim());
    let d_in = cache.x.feat_dim();
    assert_eq!(d_y.values.dims(), cache.y.values.dims(), "dY shape mismatch");

    // dPre = dY ⊙ act'(y), zero on masked-out frames.
    let mut dpre = Tensor::zeros(&[t_len * b_len, d_out]);
    for t in 0..t_len {
        for bi in 0..b_len {
            if !cache.y.mask_at(t, bi) {
                continue;
            }
            let row = (t * b_len + bi) * d_out;
            for k in 0..d_out {
                let y = cache.y.values.data()[row + k];
                dpre.data_mut()[row + k] =
                    d_y.values.data()[row + k] * cache.activation.derive_from_output(y);
            }
        }
    }
    let x_flat = cache.x.values.reshaped(&[t_len * b_len, d_in]);
    let d_w = matmul_tn(&x_flat, &dpre);
    let mut d_b = Tensor::zeros(&[d_out]);
    for row in dpre.data().chunks(d_out) {
        for (acc, &v) in d_b.data_mut().iter_mut().zip(row) {
            *acc += v;
        }
    }
    let d_x_vals = matmul_nt(&dpre, w).reshaped(&[t_len, b_len, d_in]);
    let d_x = cache.x.with_values(d_x_vals).apply_mask();
    (d_x, d_w, d_b)
}

/// Fused LSTM forward pass.
///
/// The non-recurrent pre-activations Z = x·W + b are computed for all T·B
/// frames in a single matrix multiplication before the time scan. At frames
/// with mask 0 the cell state is carried through unchanged and the hidden
/// output is zeroed, so end-padding never contaminates the recurrence.
pub fn lstm_forward(x: &SeqTensor, p: LstmParams, direction: Direction) -> (SeqTensor, LstmCache) {
    let (t_len, b_len, d_in) = (x.time_len(), x.batch_len(), x.feat_dim());
    p.check(d_in);
    let h_dim = p.hidden_dim();
    let g_w = LSTM_GATES * h_dim;

    let flat = x.values.reshaped(&[t_len * b_len, d_in]);
    let z = add_bias_rows(&matmul(&flat, p.w), p.b);

    let mut gates = Tensor::zeros(&[t_len, b_len, g_w]);
    let mut cells = Tensor::zeros(&[t_len, b_len, h_dim]);
    let mut hidden = Tensor::zeros(&[t_len, b_len, h_dim]);

    let mut h_prev = Tensor::zeros(&[b_len, h_dim]);
    let mut c_prev = Tensor::zeros(&[b_len, h_dim]);

    for &t in &direction.scan_order(t_len) {
        // a = Z_t + h_prev · R
        let rec = matmul(&h_prev, p.r);
        let z_row = t * b_len * g_w;
        let mut h_t = Tensor::zeros(&[b_len, h_dim]);
        let mut c_t = Tensor::zeros(&[b_len, h_dim]);
        for bi in 0..b_len {
            if x.mask_at(t, bi) {
                for u in 0..h_dim {
                    let a_i = z.data()[z_row + bi * g_w + u] + rec.data()[bi * g_w + u];
                    let a_f = z.data()[z_row + bi * g_w + h_dim + u] + rec.data()[bi * g_w + h_dim + u];
                    let a_g = z.data()[z_row + bi * g_w + 2 * h_dim + u] + rec.data()[bi * g_w + 2 * h_dim + u];
                    let a_o = z.data()[z_row + bi * g_w + 3 * h_dim + u] + rec.data()[bi * g_w + 3 * h_dim + u];
                    let i = sigmoid_scalar(a_i);
                    let f = sigmoid_scalar(a_f);
                    let g = a_g.tanh();
                    let o = sigmoid_scalar(a_o);
                    let c = f * c_prev.data()[bi * h_dim + u] + i * g;
                    let gate_off = z_row + bi * g_w;
                    gates.data_mut()[gate_off + u] = i;
                    gates.data_mut()[gate_off + h_dim + u] = f;
                    gates.data_mut()[gate_off + 2 * h_dim + u] = g;
                    gates.data_mut()[gate_off + 3 * h_dim + u] = o;
                    c_t.data_mut()[bi * h_dim + u] = c;
                    h_t.data_mut()[bi * h_dim + u] = o * c.tanh();
                }
            } else {
                // state carried, output zeroed
                for u in 0..h_dim {
                    c_t.data_mut()[bi * h_dim + u] = c_prev.data()[bi * h_dim + u];
                }
            }
        }
        let cell_off = t * b_len * h_dim;
        cells.data_mut()[cell_off..cell_off + b_len * h_dim].copy_from_slice(c_t.data());
        hidden.data_mut()[cell_off..cell_off + b_len * h_dim].copy_from_slice(h_t.data());
        h_prev = h_t;
        c_prev = c_t;
    }

    let out = SeqTensor::new(hidden.clone(), x.mask.clone());
    let cache = LstmCache {
        x: x.clone(),
        gates,
        cells,
        hidden,
        direction,
    };
    (out, cache)
}

/// Exact BPTT through the fused LSTM. Returns (dX, dW, dR, db).
///
/// The time scan only propagates the recurrent terms; dW, dR, and dX are
/// computed as single large matrix products afterwards.
pub fn lstm_backward(
    cache: &LstmCache,
    p: LstmParams,
    d_h: &SeqTensor,
) -> (SeqTensor, Tensor, Tensor, Tensor) {
    let x = &cache.x;
    let (t_len, b_len, d_in) = (x.time_len(), x.batch_len(), x.feat_dim());
    let h_dim = p.hidden_dim();
    let g_w = LSTM_GATES * h_dim;
    assert_eq!(d_h.values.dims(), &[t_len, b_len, h_dim], "dH shape mismatch");

    let mut d_a = Tensor::zeros(&[t_len, b_len, g_w]);
    let mut dh_rec = Tensor::zeros(&[b_len, h_dim]);
    let mut dc_rec = Tensor::zeros(&[b_len, h_dim]);

    let order = cache.direction.scan_order(t_len);
    for pos in (0..t_len).rev() {
        let t = order[pos];
        let gate_base = t * b_len * g_w;
        let cell_base = t * b_len * h_dim;
        // c_prev for step t is the cell of the previous scan step (zeros at the first).
        let prev_t = if pos == 0 { None } else { Some(order[pos - 1]) };

        for bi in 0..b_len {
            if x.mask_at(t, bi) {
                for u in 0..h_dim {
                    let i = cache.gates.data()[gate_base + bi * g_w + u];
                    let f = cache.gates.data()[gate_base + bi * g_w + h_dim + u];
                    let g = cache.gates.data()[gate_base + bi * g_w + 2 * h_dim + u];
                    let o = cache.gates.data()[gate_base + bi * g_w + 3 * h_dim + u];
                    let c = cache.cells.data()[cell_base + bi * h_dim + u];
                    let c_prev = match prev_t {
                        Some(pt) => cache.cells.data()[pt * b_len * h_dim + bi * h_dim + u],
                        None => 0.0,
                    };
                    let tanh_c = c.tanh();
                    let dh = d_h.values.data()[cell_base + bi * h_dim + u]
                        + dh_rec.data()[bi * h_dim + u];
                    let d_o = dh * tanh_c;
                    let dc = dc_rec.data()[bi * h_dim + u] + dh * o * (1.0 - tanh_c * tanh_c);
                    let d_i = dc * g;
                    let d_f = dc * c_prev;
                    let d_g = dc * i;
                    dc_rec.data_mut()[bi * h_dim + u] = dc * f;
                    let off = gate_base + bi * g_w;
                    d_a.data_mut()[off + u] = d_i * i * (1.0 - i);
                    d_a.data_mut()[off + h_dim + u] = d_f * f * (1.0 - f);
                    d_a.data_mut()[off + 2 * h_dim + u] = d_g * (1.0 - g * g);
                    d_a.data_mut()[off + 3 * h_dim + u] = d_o * o * (1.0 - o);
                }
            }
            // mask 0: h was forced to zero (incoming dh discarded) and the
            // cell was carried, so dc_rec passes through untouched.
        }
        // gradient to the previous scan step's hidden state
        let da_t = Tensor::from_vec(
            &[b_len, g_w],
            d_a.data()[gate_base..gate_base + b_len * g_w].to_vec(),
        );
        dh_rec = matmul_nt(&da_t, p.r);
        // masked rows of da_t are zero, so dh_rec is zero there as required
    }

    // Single big products over all frames.
    let x_flat = x.values.reshaped(&[t_len * b_len, d_in]);
    let da_flat = d_a.reshaped(&[t_len * b_len, g_w]);
    let d_w = matmul_tn(&x_flat, &da_flat);

    // h of the previous scan step, laid out per frame (zeros at scan starts).
    let mut h_prev_all = Tensor::zeros(&[t_len, b_len, h_dim]);
    for (pos, &t) in order.iter().enumerate() {
        if pos == 0 {
            continue;
        }
        let src = order[pos - 1] * b_len * h_dim;
        let dst = t * b_len * h_dim;
        let n = b_len * h_dim;
        let (src_slice, dst_range) = (
            cache.hidden.data()[src..src + n].to_vec(),
            dst..dst + n,
        );
        h_prev_all.data_mut()[dst_range].copy_from_slice(&src_slice);
    }
    let d_r = matmul_tn(&h_prev_all.reshaped(&[t_len * b_len, h_dim]), &da_flat);

    let mut d_b = Tensor::zeros(&[g_w]);
    for row in da_flat.data().chunks(g_w) {
        for (acc, &v) in d_b.data_mut().iter_mut().zip(row) {
            *acc += v;
        }
    }

    let d_x_vals = matmul_nt(&da_flat, p.w).reshaped(&[t_len, b_len, d_in]);
    let d_x = x.with_values(d_x_vals).apply_mask();
    (d_x, d_w, d_r, d_b)
}

/// Feature-axis concatenation of per-frame outputs, [first | rest...].
/// All inputs must share the same mask.
pub fn concat_features(parts: &[&SeqTensor]) -> SeqTensor {
    assert!(!parts.is_empty(), "concat of zero inputs");
    let (t_len, b_len) = (parts[0].time_len(), parts[0].batch_len());
    for p in parts {
        assert_eq!(
            p.mask, parts[0].mask,
            "concat inputs carry different masks"
        );
    }
    let d_out: usize = parts.iter().map(|p| p.feat_dim()).sum();
    let mut values = Tensor::zeros(&[t_len, b_len, d_out]);
    for t in 0..t_len {
        for bi in 0..b_len {
            let mut off = (t * b_len + bi) * d_out;
            for p in parts {
                let d = p.feat_dim();
                let src = (t * b_len + bi) * d;
                values.data_mut()[off..off + d].copy_from_slice(&p.values.data()[src..src + d]);
                off += d;
            }
        }
    }
    SeqTensor::new(values, parts[0].mask.clone())
}

/// Bidirectional composition: [forward pass | backward pass] on the feature axis.
pub fn bidirectional(fwd: &SeqTensor, bwd: &SeqTensor) -> SeqTensor {
    concat_features(&[fwd, bwd])
}

/// Splits a feature-concatenated gradient back into per-input parts.
pub fn split_features(x: &SeqTensor, widths: &[usize]) -> Vec<SeqTensor> {
    let total: usize = widths.iter().sum();
    assert_eq!(x.feat_dim(), total, "split widths do not cover feature dim");
    let (t_len, b_len) = (x.time_len(), x.batch_len());
    let mut out = Vec::with_capacity(widths.len());
    let mut start = 0;
    for &w in widths {
        let mut values = Tensor::zeros(&[t_len, b_len, w]);
        for t in 0..t_len {
            for bi in 0..b_len {
                let src = (t * b_len + bi) * total + start;
                let dst = (t * b_len + bi) * w;
                values.data_mut()[dst..dst + w]
                    .copy_from_slice(&x.values.data()[src..src + w]);
            }
        }
        out.push(SeqTensor::new(values, x.mask.clone()));
        start += w;
    }
    out
}

/// Inverted dropout on training, identity on eval. Returns the output and the
/// multiplier tensor used (None when it was the identity).
pub fn dropout_forward(
    x: &SeqTensor,
    rate: f64,
    rng: &mut Rng,
    training: bool,
) -> (SeqTensor, Option<Tensor>) {
    assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0,1), got {}", rate);
    if !training || rate == 0.0 {
        return (x.clone(), None);
    }
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    let mut mult = Tensor::zeros(x.values.dims());
    for m in mult.data_mut() {
        *m = if rng.gen::<f64>() < keep { scale } else { 0.0 };
    }
    let y = x.with_values(x.values.mul(&mult)).apply_mask();
    (y, Some(mult))
}

pub fn dropout_backward(d_y: &SeqTensor, mult: Option<&Tensor>) -> SeqTensor {
    match mult {
        None => d_y.clone(),
        Some(m) => d_y.with_values(d_y.values.mul(m)).apply_mask(),
    }
}

/// Softmax cross-entropy over sparse labels. Loss is the sum over masked-in
/// frames of -log softmax(logits)[target]; the gradient is softmax - onehot.
/// Frame errors count argmax mismatches, ties broken toward the lowest class.
pub fn softmax_ce(logits: &SeqTensor, labels: &[u32]) -> Result<LossResult> {
    let (t_len, b_len, k) = (logits.time_len(), logits.batch_len(), logits.feat_dim());
    assert_eq!(labels.len(), t_len * b_len, "label count mismatch");
    let mut grad = Tensor::zeros(&[t_len, b_len, k]);
    let mut loss = 0.0;
    let mut frames = 0usize;
    let mut frame_errors = 0usize;

    for t in 0..t_len {
        for bi in 0..b_len {
            if !logits.mask_at(t, bi) {
                continue;
            }
            let row = (t * b_len + bi) * k;
            let target = labels[t * b_len + bi] as usize;
            if target >= k {
                return Err(Error::Data(format!(
                    "label {} out of range for {} classes at frame (t={}, b={})",
                    target, k, t, bi
                )));
            }
            let vals = &logits.values.data()[row..row + k];
            // max-subtraction + log-sum-exp for stability
            let mut max = f64::NEG_INFINITY;
            let mut argmax = 0usize;
            for (j, &v) in vals.iter().enumerate() {
                if v > max {
                    max = v;
                    argmax = j;
                }
            }
            let mut sum = 0.0;
            for &v in vals {
                sum += (v - max).exp();
            }
            let lse = max + sum.ln();
            loss += lse - vals[target];
            for j in 0..k {
                let p = (vals[j] - lse).exp();
                grad.data_mut()[row + j] = p - if j == target { 1.0 } else { 0.0 };
            }
            frames += 1;
            if argmax != target {
                frame_errors += 1;
            }
        }
    }
    Ok(LossResult {
        loss,
        frame_errors,
        frames,
        grad_wrt_input: logits.with_values(grad),
    })
}

/// Summed squared error over masked-in frames; gradient 2(pred - target).
pub fn mse(pred: &SeqTensor, target: &Tensor) -> LossResult {
    assert_eq!(pred.values.dims(), target.dims(), "mse target shape mismatch");
    let (t_len, b_len, d) = (pred.time_len(), pred.batch_len(), pred.feat_dim());
    let mut grad = Tensor::zeros(&[t_len, b_len, d]);
    let mut loss = 0.0;
    let mut frames = 0usize;
    for t in 0..t_len {
        for bi in 0..b_len {
            if !pred.mask_at(t, bi) {
                continue;
            }
            frames += 1;
            let row = (t * b_len + bi) * d;
            for j in 0..d {
                let diff = pred.values.data()[row + j] - target.data()[row + j];
                loss += diff * diff;
                grad.data_mut()[row + j] = 2.0 * diff;
            }
        }
    }
    LossResult {
        loss,
        frame_errors: 0,
        frames,
        grad_wrt_input: pred.with_values(grad),
    }
}
