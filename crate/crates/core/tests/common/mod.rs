//! Property checks shared by the property tests and the acceptance report.
//! Each returns `Err` with a description of the first counterexample.
#![allow(dead_code)]

use melseg::corpus::{NoteEvent, Song, TimeSignature};
use melseg::nn::{backward, forward, nll, ModelDims, ModelParams, TENSOR_NAMES};
use melseg::segmenter::{find_peaks, normalize_losses, peaks_with_prominence};
use melseg::tokenizer::{tokenize, Channel, FrameToken};
use melseg::trainer::{ModelCheckpoint, TrainConfig, CHECKPOINT_FORMAT_VERSION};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<(), String>;

pub fn random_tokens(rng: &mut ChaCha8Rng, n: usize) -> Vec<FrameToken> {
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
                FrameToken::with(channels[rng.gen_range(0..4)], rng.gen_range(55..70))
            }
        })
        .collect()
}

fn seq_loss(p: &ModelParams<f64>, seq: &[FrameToken], train: bool, seed: u64) -> f64 {
    let f = forward(p, &seq[..seq.len() - 1], train, seed).unwrap();
    nll(&f.logits, &seq[1..]).iter().sum()
}

/// Analytic gradient against central differences on random small networks.
pub fn gradients_match(cases: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let dims = ModelDims {
            embed_dim: rng.gen_range(1..5),
            hidden_dim: rng.gen_range(1..9),
        };
        let dropout = if rng.gen_bool(0.5) { 0.3 } else { 0.0 };
        let mut p = ModelParams::<f64>::init(dims, dropout, rng.gen());
        p.scale(rng.gen_range(0.5..2.5));
        let len = rng.gen_range(3..11);
        let seq = random_tokens(&mut rng, len);
        let train = dropout > 0.0;
        let fseed: u64 = rng.gen();
        let fwd = forward(&p, &seq[..seq.len() - 1], train, fseed).map_err(|e| e.to_string())?;
        let g = backward(&p, &fwd, &seq[1..]);
        for t in 0..5 {
            let len = p.tensors()[t].len();
            let mut picks: Vec<usize> = (0..6).map(|_| rng.gen_range(0..len)).collect();
            if t == 0 {
                let e = dims.embed_dim;
                let tok = seq[0];
                for (c, &v) in tok.0.iter().enumerate() {
                    picks.push((c * 129 + v as usize) * e + rng.gen_range(0..e));
                }
            }
            for idx in picks {
                let eps = 1e-5;
                let orig = p.tensors()[t][idx];
                p.tensors_mut()[t][idx] = orig + eps;
                let up = seq_loss(&p, &seq, train, fseed);
                p.tensors_mut()[t][idx] = orig - eps;
                let down = seq_loss(&p, &seq, train, fseed);
                p.tensors_mut()[t][idx] = orig;
                let numeric = (up - down) / (2.0 * eps);
                let analytic = g.tensors()[t][idx];
                let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-4);
                if rel > 1e-4 {
                    return Err(format!(
                        "case {case}: {}[{idx}] numeric {numeric} analytic {analytic}",
                        TENSOR_NAMES[t]
                    ));
                }
            }
        }
    }
    Ok(())
}

/// Prominence straight from the definition: the deepest point one must pass
/// through to reach strictly higher ground, on the better of the two sides.
pub fn oracle_peaks(c: &[u8]) -> Vec<(usize, u8)> {
    let n = c.len();
    let mut out = Vec::new();
    for i in 1..n {
        let v = c[i];
        if c[i - 1] >= v {
            continue;
        }
        let Some(k) = (i + 1..n).find(|&k| c[k] != v) else { continue };
        if c[k] > v {
            continue;
        }
        let left_stop = (0..i).rev().find(|&j| c[j] > v).map_or(0, |j| j + 1);
        let right_stop = (i + 1..n).find(|&j| c[j] > v).unwrap_or(n);
        let left = *c[left_stop..=i].iter().min().unwrap();
        let right = *c[i..right_stop].iter().min().unwrap();
        out.push((i, v - left.max(right)));
    }
    out
}

/// Every curve of length ≤ `max_len` over `{0, 1, 2, 3}`.
pub fn find_peaks_exhaustive(max_len: usize) -> Check {
    let mut curve = Vec::with_capacity(max_len);
    let mut as_f = Vec::with_capacity(max_len);
    for n in 0..=max_len {
        let total = 4usize.pow(n as u32);
        for code in 0..total {
            curve.clear();
            let mut x = code;
            for _ in 0..n {
                curve.push((x % 4) as u8);
                x /= 4;
            }
            as_f.clear();
            as_f.extend(curve.iter().map(|&v| v as f64));
            let got = peaks_with_prominence(&as_f, 0);
            let want = oracle_peaks(&curve);
            let same = got.len() == want.len()
                && got.iter().zip(&want).all(|(&(gi, gp), &(wi, wp))| gi == wi && gp == wp as f64);
            if !same {
                return Err(format!("curve {curve:?}: got {got:?}, oracle {want:?}"));
            }
            for delta in [1.0, 2.0, 3.0] {
                let fp = find_peaks(&as_f, delta, 0);
                let expect: Vec<usize> = want.iter().filter(|&&(_, p)| p as f64 >= delta).map(|&(i, _)| i).collect();
                if fp != expect {
                    return Err(format!("curve {curve:?} delta {delta}: {fp:?} vs {expect:?}"));
                }
            }
        }
    }
    Ok(())
}

pub fn peak_count_monotone(curves: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..curves {
        let n = rng.gen_range(0..60);
        let discrete = rng.gen_bool(0.5);
        let c: Vec<f64> = (0..n)
            .map(|_| if discrete { rng.gen_range(0..5) as f64 } else { rng.gen_range(0.0..4.0) })
            .collect();
        let mut deltas: Vec<f64> = (0..12).map(|_| rng.gen_range(0.0..4.5)).collect();
        deltas.push(0.0);
        deltas.sort_by(f64::total_cmp);
        let counts: Vec<usize> = deltas.iter().map(|&d| find_peaks(&c, d, 0).len()).collect();
        if counts.windows(2).any(|w| w[1] > w[0]) {
            return Err(format!("curve {c:?}: counts {counts:?} over deltas {deltas:?}"));
        }
    }
    Ok(())
}

pub fn random_song(rng: &mut ChaCha8Rng, id: &str) -> Song {
    let ts = *[(4, 4), (2, 4), (3, 4), (6, 8), (3, 8), (5, 4)]
        .get(rng.gen_range(0..6))
        .unwrap();
    let ts = TimeSignature::new(ts.0, ts.1).unwrap();
    let mut onset = 0;
    let n = rng.gen_range(1..60);
    let notes: Vec<NoteEvent> = (0..n)
        .map(|i| {
            let duration = rng.gen_range(1..12);
            let pitch = if i > 0 && rng.gen_bool(0.1) { None } else { Some(rng.gen_range(50..80)) };
            let e = NoteEvent { onset, duration, pitch };
            onset += duration;
            e
        })
        .collect();
    let fpb = melseg::corpus::frames_per_bar(ts, 16);
    Song {
        id: id.to_string(),
        time_signature: ts,
        alpha: 16,
        notes,
        anacrusis_frames: rng.gen_range(0..fpb),
        gold_boundaries: vec![],
        tonic: Some(rng.gen_range(0..12)),
    }
}

pub fn realign_round_trip(songs: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for k in 0..songs {
        let s = random_song(&mut rng, &format!("r{k}"));
        let alpha = [16, 32, 48][rng.gen_range(0..3)];
        let scale = alpha / 16;
        let seq = tokenize(&s, alpha).map_err(|e| e.to_string())?;
        let expected: Vec<(u32, u32, u8)> = s
            .notes
            .iter()
            .filter_map(|n| n.pitch.map(|p| (n.onset * scale, n.duration * scale, p)))
            .collect();
        if seq.realign() != expected {
            return Err(format!("song {k} at alpha {alpha} does not realign"));
        }
    }
    Ok(())
}

pub fn shift_invariance(curves: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..curves {
        let n = rng.gen_range(0..50);
        let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..20.0)).collect();
        let c = rng.gen_range(-10.0..10.0);
        let shifted: Vec<f64> = raw.iter().map(|x| x + c).collect();
        let a = normalize_losses(&raw, 1.0, 1.0);
        let b = normalize_losses(&shifted, 1.0, 1.0);
        if a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-9) {
            return Err(format!("shift {c} changes the normalized curve of {raw:?}"));
        }
    }
    Ok(())
}

pub fn checkpoint_round_trip(cases: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..cases {
        let cfg = TrainConfig {
            embed_dim: rng.gen_range(1..6),
            hidden_dim: rng.gen_range(1..10),
            learning_rate: rng.gen_range(1e-5..1e-1),
            seed: rng.gen(),
            ..TrainConfig::default()
        };
        let nll = if rng.gen_bool(0.1) { f64::INFINITY } else { rng.gen_range(0.0..20.0) };
        let ck = ModelCheckpoint {
            params: ModelParams::<f32>::init(cfg.dims(), cfg.dropout, rng.gen()),
            config: cfg,
            validation_nll: nll,
            format_version: CHECKPOINT_FORMAT_VERSION,
        };
        let bytes = ck.to_bytes();
        let back = ModelCheckpoint::<f32>::from_bytes(&bytes).map_err(|e| e.to_string())?;
        if back != ck || back.to_bytes() != bytes {
            return Err("checkpoint changed across a save/load cycle".into());
        }
        let wide: ModelCheckpoint<f64> = ModelCheckpoint {
            params: ck.params.cast(),
            config: ck.config.clone(),
            validation_nll: ck.validation_nll,
            format_version: ck.format_version,
        };
        let back = ModelCheckpoint::<f64>::from_bytes(&wide.to_bytes()).map_err(|e| e.to_string())?;
        if back != wide {
            return Err("f64 checkpoint changed across a save/load cycle".into());
        }
    }
    Ok(())
}

/// A melody of two-bar phrases in `num/den`; each phrase ends on a long note,
/// sometimes followed by a rest. Gold boundaries sit on each phrase's first note.
pub fn phrase_song(rng: &mut ChaCha8Rng, id: &str, num: u32, den: u32) -> Song {
    let ts = TimeSignature::new(num, den).unwrap();
    let fpb = melseg::corpus::frames_per_bar(ts, 16);
    let beat = 16 / den;
    let mut notes = Vec::new();
    let mut gold = Vec::new();
    let mut onset = 0;
    let phrases = rng.gen_range(2..6);
    let tonic = rng.gen_range(0..12u8);
    for ph in 0..phrases {
        if ph > 0 {
            gold.push(notes.len());
        }
        let end = onset + 2 * fpb;
        while onset < end {
            let left = end - onset;
            let d = if left <= 2 * beat { left } else { beat * rng.gen_range(1..3).min(left / beat) };
            let rest = left == d && d > beat && rng.gen_bool(0.5);
            let sounding = if rest { d - beat } else { d };
            notes.push(NoteEvent {
                onset,
                duration: sounding,
                pitch: Some(60 + tonic + [0, 2, 4, 5, 7][rng.gen_range(0..5)]),
            });
            onset += sounding;
            if rest {
                notes.push(NoteEvent { onset, duration: beat, pitch: None });
                onset += beat;
            }
        }
    }
    Song {
        id: id.to_string(),
        time_signature: ts,
        alpha: 16,
        notes,
        anacrusis_frames: 0,
        gold_boundaries: gold,
        tonic: Some(tonic),
    }
}

pub fn phrase_corpus(n: usize, seed: u64) -> Vec<Song> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let meters = [(4, 4), (2, 4), (3, 4), (6, 8)];
    (0..n)
        .map(|i| {
            let (num, den) = meters[i % meters.len()];
            phrase_song(&mut rng, &format!("syn:{i}"), num, den)
        })
        .collect()
}

/// A pipeline configuration small enough to run in a couple of seconds.
pub fn tiny_run_config() -> melseg::config::RunConfig {
    let mut cfg = melseg::config::RunConfig::from_flat(
        "train.embed_dim = 4\ntrain.hidden_dim = 8\ntrain.epochs = 2\n\
         grid.learning_rates = [0.01]\ngrid.batch_sizes = [8]\ngrid.max_seq_lens = [64]\n\
         ensemble.k = 3\n",
    )
    .unwrap();
    cfg.seed = 4;
    cfg
}
