//! Next-frame prediction network: four channel embeddings, one LSTM layer,
//! a linear projection onto four independent 129-way softmax heads.
//!
//! Everything here is written against [`Scalar`] so the same code trains in
//! `f32` and is checked against finite differences in `f64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{axpy, dot, Scalar};
use crate::tokenizer::{FrameToken, CHANNELS, VOCAB};

/// Width of the projection: one 129-way head per channel.
pub const OUTPUTS: usize = CHANNELS * VOCAB;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub embed_dim: usize,
    pub hidden_dim: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            hidden_dim: 128,
        }
    }
}

impl ModelDims {
    pub fn input_dim(&self) -> usize {
        CHANNELS * self.embed_dim
    }

    /// Rows of the gate matrix: the input concatenated with the previous hidden state.
    pub fn concat_dim(&self) -> usize {
        self.input_dim() + self.hidden_dim
    }

    pub fn gate_dim(&self) -> usize {
        4 * self.hidden_dim
    }
}

/// All learnable tensors, row-major. Gradients use the same type.
///
/// Tensor order (also the checkpoint order): embeddings `[4][129][E]`,
/// gate weights `[4E+H][4H]` with gate blocks input, forget, cell, output,
/// gate bias `[4H]`, projection weights `[H][516]`, projection bias `[516]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub dims: ModelDims,
    pub dropout_rate: f64,
    pub embeddings: Vec<T>,
    pub gate_weights: Vec<T>,
    pub gate_bias: Vec<T>,
    pub out_weights: Vec<T>,
    pub out_bias: Vec<T>,
}

pub const TENSOR_NAMES: [&str; 5] = ["embeddings", "gate_weights", "gate_bias", "out_weights", "out_bias"];

impl<T: Scalar> ModelParams<T> {
    pub fn zeros(dims: ModelDims, dropout_rate: f64) -> Self {
        Self {
            dims,
            dropout_rate,
            embeddings: vec![T::zero(); CHANNELS * VOCAB * dims.embed_dim],
            gate_weights: vec![T::zero(); dims.concat_dim() * dims.gate_dim()],
            gate_bias: vec![T::zero(); dims.gate_dim()],
            out_weights: vec![T::zero(); dims.hidden_dim * OUTPUTS],
            out_bias: vec![T::zero(); OUTPUTS],
        }
    }

    /// Fan-based uniform initialization with the forget-gate bias at +1.
    pub fn init(dims: ModelDims, dropout_rate: f64, seed: u64) -> Self {
        let mut p = Self::zeros(dims, dropout_rate);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |xs: &mut [T], fan_in: usize, fan_out: usize| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for x in xs {
                *x = T::lit(rng.gen_range(-limit..limit));
            }
        };
        fill(&mut p.embeddings, VOCAB, dims.embed_dim);
        fill(&mut p.gate_weights, dims.concat_dim(), dims.hidden_dim);
        fill(&mut p.out_weights, dims.hidden_dim, OUTPUTS);
        let h = dims.hidden_dim;
        for b in &mut p.gate_bias[h..2 * h] {
            *b = T::one();
        }
        p
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dims, self.dropout_rate)
    }

    pub fn tensors(&self) -> [&[T]; 5] {
        [
            &self.embeddings,
            &self.gate_weights,
            &self.gate_bias,
            &self.out_weights,
            &self.out_bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<T>; 5] {
        [
            &mut self.embeddings,
            &mut self.gate_weights,
            &mut self.gate_bias,
            &mut self.out_weights,
            &mut self.out_bias,
        ]
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    pub fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x = T::zero());
        }
    }

    pub fn scale(&mut self, k: T) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x = *x * k);
        }
    }

    pub fn norm(&self) -> T {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .fold(T::zero(), |acc, &x| acc + x * x)
            .sqrt()
    }

    /// Copy into another scalar type.
    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let conv = |xs: &[T]| xs.iter().map(|x| U::lit(x.as_f64())).collect::<Vec<U>>();
        ModelParams {
            dims: self.dims,
            dropout_rate: self.dropout_rate,
            embeddings: conv(&self.embeddings),
            gate_weights: conv(&self.gate_weights),
            gate_bias: conv(&self.gate_bias),
            out_weights: conv(&self.out_weights),
            out_bias: conv(&self.out_bias),
        }
    }
}

/// Recurrent state carried between windows of the same song.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState<T> {
    pub h: Vec<T>,
    pub c: Vec<T>,
}

impl<T: Scalar> LstmState<T> {
    pub fn zeros(hidden_dim: usize) -> Self {
        Self {
            h: vec![T::zero(); hidden_dim],
            c: vec![T::zero(); hidden_dim],
        }
    }
}

/// Activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct Cache<T> {
    steps: usize,
    inputs: Vec<FrameToken>,
    /// `[x_t, h_{t-1}]` per step.
    concat: Vec<T>,
    /// Activated gates per step.
    gates: Vec<T>,
    /// Cell states, `steps + 1` rows; row 0 is the initial state.
    cells: Vec<T>,
    tanh_cells: Vec<T>,
    /// Hidden output after dropout, as fed to the projection.
    dropped: Vec<T>,
    /// Dropout multipliers (0 or 1/(1-p)); empty in eval mode.
    mask: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct Forward<T> {
    /// `steps × 516` logits; row `t` predicts the frame after input `t`.
    pub logits: Vec<T>,
    pub final_state: LstmState<T>,
    pub cache: Cache<T>,
}

impl<T> Forward<T> {
    pub fn steps(&self) -> usize {
        self.cache.steps
    }
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Run the network over `inputs`. With `train_mode`, dropout is drawn from
/// a generator seeded with `rng_seed`.
pub fn forward<T: Scalar>(
    params: &ModelParams<T>,
    inputs: &[FrameToken],
    train_mode: bool,
    rng_seed: u64,
) -> Result<Forward<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    forward_from(params, inputs, None, train_mode.then_some(&mut rng))
}

/// Like [`forward`], starting from a carried state and drawing dropout from
/// `dropout_rng` when present.
pub fn forward_from<T: Scalar>(
    params: &ModelParams<T>,
    inputs: &[FrameToken],
    init: Option<&LstmState<T>>,
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<Forward<T>> {
    let dims = params.dims;
    let (e, h) = (dims.embed_dim, dims.hidden_dim);
    let (zd, gd) = (dims.concat_dim(), dims.gate_dim());
    let steps = inputs.len();
    let p = params.dropout_rate;
    let train = dropout_rng.is_some() && p > 0.0;
    let keep_scale = T::lit(1.0 / (1.0 - p));

    let mut concat = vec![T::zero(); steps * zd];
    let mut gates = vec![T::zero(); steps * gd];
    let mut cells = vec![T::zero(); (steps + 1) * h];
    let mut tanh_cells = vec![T::zero(); steps * h];
    let mut dropped = vec![T::zero(); steps * h];
    let mut mask = if train { vec![T::zero(); steps * h] } else { Vec::new() };
    let mut logits = vec![T::zero(); steps * OUTPUTS];

    let mut h_prev = init.map_or_else(|| vec![T::zero(); h], |s| s.h.clone());
    if let Some(s) = init {
        cells[..h].copy_from_slice(&s.c);
    }

    for t in 0..steps {
        let z = &mut concat[t * zd..(t + 1) * zd];
        for (c, &tok) in inputs[t].0.iter().enumerate() {
            let row = (c * VOCAB + tok as usize) * e;
            z[c * e..(c + 1) * e].copy_from_slice(&params.embeddings[row..row + e]);
        }
        z[CHANNELS * e..].copy_from_slice(&h_prev);

        let a = &mut gates[t * gd..(t + 1) * gd];
        a.copy_from_slice(&params.gate_bias);
        for (k, &zk) in z.iter().enumerate() {
            if zk != T::zero() {
                axpy(zk, &params.gate_weights[k * gd..(k + 1) * gd], a);
            }
        }
        let (ai, rest) = a.split_at_mut(h);
        let (af, rest) = rest.split_at_mut(h);
        let (ag, ao) = rest.split_at_mut(h);
        let (c_prev, c_next) = cells[t * h..(t + 2) * h].split_at_mut(h);
        let tc = &mut tanh_cells[t * h..(t + 1) * h];
        let hd = &mut dropped[t * h..(t + 1) * h];
        for j in 0..h {
            ai[j] = sigmoid(ai[j]);
            af[j] = sigmoid(af[j]);
            ag[j] = ag[j].tanh();
            ao[j] = sigmoid(ao[j]);
            c_next[j] = af[j] * c_prev[j] + ai[j] * ag[j];
            tc[j] = c_next[j].tanh();
            h_prev[j] = ao[j] * tc[j];
        }
        if train {
            let rng = dropout_rng.as_deref_mut().expect("train mode has a generator");
            let m = &mut mask[t * h..(t + 1) * h];
            for j in 0..h {
                m[j] = if rng.gen::<f64>() < p { T::zero() } else { keep_scale };
                hd[j] = h_prev[j] * m[j];
            }
        } else {
            hd.copy_from_slice(&h_prev);
        }

        let out = &mut logits[t * OUTPUTS..(t + 1) * OUTPUTS];
        out.copy_from_slice(&params.out_bias);
        for (k, &hk) in hd.iter().enumerate() {
            if hk != T::zero() {
                axpy(hk, &params.out_weights[k * OUTPUTS..(k + 1) * OUTPUTS], out);
            }
        }
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("logits"));
    }
    let final_state = LstmState {
        h: h_prev,
        c: cells[steps * h..].to_vec(),
    };
    Ok(Forward {
        logits,
        final_state,
        cache: Cache {
            steps,
            inputs: inputs.to_vec(),
            concat,
            gates,
            cells,
            tanh_cells,
            dropped,
            mask,
        },
    })
}

/// Per-channel softmax of one logit row, in place.
pub fn softmax_row<T: Scalar>(row: &mut [T]) {
    for block in row.chunks_exact_mut(VOCAB) {
        let max = block.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for x in block.iter_mut() {
            *x = (*x - max).exp();
            sum = sum + *x;
        }
        for x in block.iter_mut() {
            *x = *x / sum;
        }
    }
}

/// Per-step negative log-likelihood: `loss[t] = Σ_c −log softmax_c(logits[t])[targets[t].c]`.
pub fn nll<T: Scalar>(logits: &[T], targets: &[FrameToken]) -> Vec<T> {
    assert_eq!(logits.len(), targets.len() * OUTPUTS, "logits and targets disagree");
    logits
        .chunks_exact(OUTPUTS)
        .zip(targets)
        .map(|(row, tgt)| {
            let mut loss = T::zero();
            for (c, block) in row.chunks_exact(VOCAB).enumerate() {
                let max = block.iter().copied().fold(T::neg_infinity(), T::max);
                let lse = block.iter().map(|&x| (x - max).exp()).sum::<T>().ln() + max;
                loss = loss + lse - block[tgt.0[c] as usize];
            }
            loss
        })
        .collect()
}

/// Eval-mode loss of predicting each frame after the first: entry `t` is the
/// loss of frame `t + 1`.
pub fn frame_losses<T: Scalar>(params: &ModelParams<T>, frames: &[FrameToken]) -> Result<Vec<T>> {
    if frames.len() < 2 {
        return Err(Error::SequenceTooShort {
            len: frames.len(),
            needed: 1,
        });
    }
    let fwd = forward_from(params, &frames[..frames.len() - 1], None, None)?;
    let losses = nll(&fwd.logits, &frames[1..]);
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::NonFinite("loss"));
    }
    Ok(losses)
}

/// Gradient of the summed NLL with respect to every parameter.
pub fn backward<T: Scalar>(params: &ModelParams<T>, fwd: &Forward<T>, targets: &[FrameToken]) -> ModelParams<T> {
    let mut grads = params.zeros_like();
    backward_into(params, fwd, targets, T::one(), &mut grads);
    grads
}

/// Accumulate `weight ×` the gradient of the summed NLL into `grads`.
pub fn backward_into<T: Scalar>(
    params: &ModelParams<T>,
    fwd: &Forward<T>,
    targets: &[FrameToken],
    weight: T,
    grads: &mut ModelParams<T>,
) {
    let cache = &fwd.cache;
    let dims = params.dims;
    let (e, h) = (dims.embed_dim, dims.hidden_dim);
    let (zd, gd) = (dims.concat_dim(), dims.gate_dim());
    assert_eq!(targets.len(), cache.steps, "targets and forward pass disagree");

    let mut dh_next = vec![T::zero(); h];
    let mut dc_next = vec![T::zero(); h];
    let mut dlogits = vec![T::zero(); OUTPUTS];
    let mut dh = vec![T::zero(); h];
    let mut da = vec![T::zero(); gd];
    let one = T::one();

    for t in (0..cache.steps).rev() {
        dlogits.copy_from_slice(&fwd.logits[t * OUTPUTS..(t + 1) * OUTPUTS]);
        softmax_row(&mut dlogits);
        for (c, &v) in targets[t].0.iter().enumerate() {
            dlogits[c * VOCAB + v as usize] = dlogits[c * VOCAB + v as usize] - one;
        }
        dlogits.iter_mut().for_each(|x| *x = *x * weight);
        axpy(one, &dlogits, &mut grads.out_bias);

        let hd = &cache.dropped[t * h..(t + 1) * h];
        for k in 0..h {
            let w_row = &params.out_weights[k * OUTPUTS..(k + 1) * OUTPUTS];
            if hd[k] != T::zero() {
                axpy(hd[k], &dlogits, &mut grads.out_weights[k * OUTPUTS..(k + 1) * OUTPUTS]);
            }
            let mut g = dot(w_row, &dlogits);
            if !cache.mask.is_empty() {
                g = g * cache.mask[t * h + k];
            }
            dh[k] = g + dh_next[k];
        }

        let a = &cache.gates[t * gd..(t + 1) * gd];
        let c_prev = &cache.cells[t * h..(t + 1) * h];
        let tc = &cache.tanh_cells[t * h..(t + 1) * h];
        for j in 0..h {
            let (i, f, g, o) = (a[j], a[h + j], a[2 * h + j], a[3 * h + j]);
            let dc = dh[j] * o * (one - tc[j] * tc[j]) + dc_next[j];
            da[j] = dc * g * i * (one - i);
            da[h + j] = dc * c_prev[j] * f * (one - f);
            da[2 * h + j] = dc * i * (one - g * g);
            da[3 * h + j] = dh[j] * tc[j] * o * (one - o);
            dc_next[j] = dc * f;
        }
        axpy(one, &da, &mut grads.gate_bias);

        let z = &cache.concat[t * zd..(t + 1) * zd];
        let tokens = &cache.inputs[t].0;
        for k in 0..zd {
            let w_row = &params.gate_weights[k * gd..(k + 1) * gd];
            if z[k] != T::zero() {
                axpy(z[k], &da, &mut grads.gate_weights[k * gd..(k + 1) * gd]);
            }
            let dz = dot(w_row, &da);
            if k < CHANNELS * e {
                let (c, col) = (k / e, k % e);
                let idx = (c * VOCAB + tokens[c] as usize) * e + col;
                grads.embeddings[idx] = grads.embeddings[idx] + dz;
            } else {
                dh_next[k - CHANNELS * e] = dz;
            }
        }
    }
}

/// Adam moments and hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub first: ModelParams<T>,
    pub second: ModelParams<T>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub learning_rate: f64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ModelParams<T>, learning_rate: f64) -> Self {
        Self {
            step: 0,
            first: params.zeros_like(),
            second: params.zeros_like(),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            learning_rate,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step<T: Scalar>(params: &mut ModelParams<T>, grads: &ModelParams<T>, state: &mut AdamState<T>) {
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::lit(state.beta1), T::lit(state.beta2));
    let c1 = T::lit(1.0 - state.beta1.powi(t));
    let c2 = T::lit(1.0 - state.beta2.powi(t));
    let lr = T::lit(state.learning_rate);
    let eps = T::lit(state.eps);
    let one = T::one();
    let g_all = grads.tensors();
    let m_all = state.first.tensors_mut();
    let v_all = state.second.tensors_mut();
    for (((p, g), m), v) in params.tensors_mut().into_iter().zip(g_all).zip(m_all).zip(v_all) {
        for j in 0..p.len() {
            m[j] = b1 * m[j] + (one - b1) * g[j];
            v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            p[j] = p[j] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::UNASSIGNED;

    fn random_tokens(n: usize, seed: u64) -> Vec<FrameToken> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let c = rng.gen_range(0..5usize);
                if c == 4 {
                    FrameToken::REST
                } else {
                    let mut t = FrameToken::REST;
                    t.0[c] = rng.gen_range(55..80);
                    t
                }
            })
            .collect()
    }

    #[test]
    fn zero_params_give_uniform_loss() {
        let p = ModelParams::<f64>::zeros(ModelDims { embed_dim: 4, hidden_dim: 8 }, 0.2);
        let toks = random_tokens(6, 1);
        let fwd = forward(&p, &toks[..5], false, 0).unwrap();
        assert!(fwd.logits.iter().all(|&x| x == 0.0));
        for l in nll(&fwd.logits, &toks[1..]) {
            assert!((l - 4.0 * 129f64.ln()).abs() < 1e-12);
            assert!((l - 19.439).abs() < 1e-3);
        }
    }

    #[test]
    fn eval_mode_is_deterministic_and_train_mode_is_seeded() {
        let p = ModelParams::<f32>::init(ModelDims { embed_dim: 4, hidden_dim: 8 }, 0.5, 3);
        let toks = random_tokens(20, 2);
        let a = forward(&p, &toks, false, 1).unwrap().logits;
        let b = forward(&p, &toks, false, 2).unwrap().logits;
        assert_eq!(a, b);
        let c = forward(&p, &toks, true, 7).unwrap().logits;
        let d = forward(&p, &toks, true, 7).unwrap().logits;
        let e = forward(&p, &toks, true, 8).unwrap().logits;
        assert_eq!(c, d);
        assert_ne!(c, e);
        assert_ne!(a, c);
    }

    #[test]
    fn causality() {
        let p = ModelParams::<f64>::init(ModelDims { embed_dim: 3, hidden_dim: 5 }, 0.0, 4);
        let toks = random_tokens(12, 5);
        let base = forward(&p, &toks, false, 0).unwrap().logits;
        for t in 1..12 {
            let mut changed = toks.clone();
            changed[t] = FrameToken::with(crate::tokenizer::Channel::BurstMidBar, 3);
            let l = forward(&p, &changed, false, 0).unwrap().logits;
            assert_eq!(&l[..t * OUTPUTS], &base[..t * OUTPUTS], "perturbing {t}");
            assert_ne!(&l[t * OUTPUTS..(t + 1) * OUTPUTS], &base[t * OUTPUTS..(t + 1) * OUTPUTS]);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let p = ModelParams::<f64>::init(ModelDims { embed_dim: 4, hidden_dim: 6 }, 0.0, 9);
        let toks = random_tokens(8, 9);
        let mut logits = forward(&p, &toks, false, 0).unwrap().logits;
        for row in logits.chunks_exact_mut(OUTPUTS) {
            softmax_row(row);
            for block in row.chunks_exact(VOCAB) {
                assert!((block.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn confident_logits_drive_loss_to_zero() {
        let target = FrameToken::with(crate::tokenizer::Channel::BurstBarStart, 60);
        let mut prev = f64::INFINITY;
        for margin in [1.0, 5.0, 20.0, 60.0] {
            let mut row = vec![0.0f64; OUTPUTS];
            for (c, &v) in target.0.iter().enumerate() {
                row[c * VOCAB + v as usize] = margin;
            }
            let l = nll(&row, &[target])[0];
            assert!(l < prev && l >= 0.0);
            prev = l;
        }
        assert!(prev < 1e-20);
    }

    #[test]
    fn shuffled_targets_change_loss() {
        let p = ModelParams::<f64>::init(ModelDims { embed_dim: 4, hidden_dim: 8 }, 0.0, 11);
        let toks = random_tokens(30, 12);
        let fwd = forward(&p, &toks[..29], false, 0).unwrap();
        let base: f64 = nll(&fwd.logits, &toks[1..]).iter().sum();
        let mut shuffled = toks[1..].to_vec();
        shuffled.reverse();
        let other: f64 = nll(&fwd.logits, &shuffled).iter().sum();
        assert_ne!(base, other);
    }

    #[test]
    fn unused_embedding_rows_get_no_gradient() {
        let p = ModelParams::<f64>::init(ModelDims { embed_dim: 3, hidden_dim: 4 }, 0.0, 13);
        let toks = random_tokens(10, 14);
        let fwd = forward(&p, &toks[..9], false, 0).unwrap();
        let g = backward(&p, &fwd, &toks[1..]);
        let e = 3;
        for c in 0..CHANNELS {
            for v in 0..VOCAB {
                let used = toks[..9].iter().any(|t| t.0[c] as usize == v);
                let row = &g.embeddings[(c * VOCAB + v) * e..(c * VOCAB + v + 1) * e];
                if !used {
                    assert!(row.iter().all(|&x| x == 0.0), "channel {c} symbol {v}");
                }
            }
        }
        assert!(toks.iter().any(|t| t.0[0] == UNASSIGNED));
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut p = ModelParams::<f64>::zeros(ModelDims { embed_dim: 1, hidden_dim: 1 }, 0.0);
        let mut g = p.zeros_like();
        g.out_bias[0] = 3.0;
        g.out_bias[1] = -0.5;
        let mut s = AdamState::new(&p, 0.01);
        adam_step(&mut p, &g, &mut s);
        assert!((p.out_bias[0] + 0.01).abs() < 1e-9);
        assert!((p.out_bias[1] - 0.01).abs() < 1e-9);
        assert_eq!(p.out_bias[2], 0.0);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let mut p = ModelParams::<f32>::init(ModelDims { embed_dim: 2, hidden_dim: 3 }, 0.0, 1);
        let before = p.clone();
        let g = p.zeros_like();
        let mut s = AdamState::new(&p, 0.1);
        adam_step(&mut p, &g, &mut s);
        assert_eq!(p, before);
        assert_eq!(s.step, 1);
    }
}
