//! Analytic gradients against central finite differences in f64.

use melseg::nn::{backward, forward, nll, ModelDims, ModelParams, TENSOR_NAMES};
use melseg::tokenizer::{Channel, FrameToken};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tokens(n: usize, seed: u64) -> Vec<FrameToken> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let channels = [
        Channel::BurstBarStart,
        Channel::BurstMidBar,
        Channel::ContinuationBarStart,
        Channel::ContinuationMidBar,
    ];
    (0..n)
        .map(|_| {
            if rng.gen_bool(0.15) {
                FrameToken::REST
            } else {
                FrameToken::with(channels[rng.gen_range(0..4)], rng.gen_range(58..66))
            }
        })
        .collect()
}

fn total_loss(p: &ModelParams<f64>, seq: &[FrameToken], train: bool, seed: u64) -> f64 {
    let n = seq.len();
    let fwd = forward(p, &seq[..n - 1], train, seed).unwrap();
    nll(&fwd.logits, &seq[1..]).iter().sum()
}

fn check(dropout: f64, train: bool, seed: u64) {
    let dims = ModelDims { embed_dim: 3, hidden_dim: 5 };
    let mut p = ModelParams::<f64>::init(dims, dropout, seed);
    // Larger weights make the gates leave their linear regime.
    p.scale(2.0);
    let seq = tokens(14, seed + 100);
    let n = seq.len();
    let fwd = forward(&p, &seq[..n - 1], train, seed).unwrap();
    let grads = backward(&p, &fwd, &seq[1..]);

    let mut rng = ChaCha8Rng::seed_from_u64(seed + 200);
    let eps = 1e-5;
    let mut checked = 0;
    for ti in 0..5 {
        let len = p.tensors()[ti].len();
        let mut picks: Vec<usize> = (0..40).map(|_| rng.gen_range(0..len)).collect();
        if ti == 0 {
            // Embedding rows actually used by the sequence.
            let e = dims.embed_dim;
            for tok in &seq[..3] {
                for (c, &v) in tok.0.iter().enumerate() {
                    picks.push((c * 129 + v as usize) * e);
                }
            }
        }
        for idx in picks {
            let orig = p.tensors()[ti][idx];
            p.tensors_mut()[ti][idx] = orig + eps;
            let up = total_loss(&p, &seq, train, seed);
            p.tensors_mut()[ti][idx] = orig - eps;
            let down = total_loss(&p, &seq, train, seed);
            p.tensors_mut()[ti][idx] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let analytic = grads.tensors()[ti][idx];
            let scale = numeric.abs().max(analytic.abs()).max(1e-3);
            assert!(
                (numeric - analytic).abs() / scale < 1e-5,
                "{} [{idx}]: numeric {numeric} analytic {analytic}",
                TENSOR_NAMES[ti]
            );
            checked += 1;
        }
    }
    assert!(checked >= 200);
}

#[test]
fn gradients_match_finite_differences() {
    check(0.0, false, 1);
    check(0.0, false, 2);
}

#[test]
fn gradients_match_finite_differences_under_fixed_dropout_mask() {
    check(0.4, true, 3);
}

#[test]
fn f32_and_f64_agree() {
    let dims = ModelDims { embed_dim: 4, hidden_dim: 6 };
    let p64 = ModelParams::<f64>::init(dims, 0.0, 5);
    let p32: ModelParams<f32> = p64.cast();
    let seq = tokens(40, 6);
    let l64 = total_loss(&p64, &seq, false, 0);
    let f = forward(&p32, &seq[..39], false, 0).unwrap();
    let l32: f32 = nll(&f.logits, &seq[1..]).iter().sum();
    assert!(((l32 as f64) - l64).abs() / l64 < 1e-5, "{l32} vs {l64}");
}
