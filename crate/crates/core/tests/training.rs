mod common;

use melseg::corpus::{NoteEvent, Song, TimeSignature};
use melseg::trainer::{grid_search, mean_nll, prepare, train, ModelCheckpoint, Preprocessing, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn four_quarters() -> Song {
    Song {
        id: "loop".into(),
        time_signature: TimeSignature::new(4, 4).unwrap(),
        alpha: 16,
        notes: [60u8, 64, 67, 72]
            .iter()
            .enumerate()
            .map(|(i, &p)| NoteEvent {
                onset: 4 * i as u32,
                duration: 4,
                pitch: Some(p),
            })
            .collect(),
        anacrusis_frames: 0,
        gold_boundaries: vec![],
        tonic: Some(0),
    }
}

fn smoke_corpus(n: usize) -> Vec<Song> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    (0..n).map(|i| common::random_song(&mut rng, &format!("smoke:{i}"))).collect()
}

#[test]
fn repeated_sixteen_frame_song_is_learned_within_500_steps() {
    let song = four_quarters();
    assert_eq!(song.len_frames(), 16);
    let cfg = TrainConfig {
        preprocessing: Preprocessing::KeyNormalize,
        batch_size: 1,
        max_seq_len: 16,
        epochs: 500,
        patience: 500,
        learning_rate: 1e-2,
        seed: 3,
        ..TrainConfig::default()
    };
    let out = train::<f32>(&[song.clone()], &[song], &cfg).unwrap();
    assert!(out.log.len() <= 500);
    assert!(out.checkpoint.validation_nll < 0.1, "NLL {}", out.checkpoint.validation_nll);
}

#[test]
fn training_nll_drops_below_uniform_in_the_first_epoch() {
    let songs = smoke_corpus(50);
    let cfg = TrainConfig {
        embed_dim: 8,
        hidden_dim: 16,
        epochs: 1,
        seed: 1,
        ..TrainConfig::default()
    };
    let out = train::<f32>(&songs[..40], &songs[40..], &cfg).unwrap();
    let uniform = 4.0 * 129f64.ln();
    assert!(out.log[0].train_nll < uniform);
    assert!(out.log[0].val_nll < uniform);
}

#[test]
fn fixed_seed_gives_identical_checkpoint_bytes() {
    let songs = smoke_corpus(20);
    let cfg = TrainConfig {
        embed_dim: 4,
        hidden_dim: 8,
        epochs: 2,
        seed: 9,
        ..TrainConfig::default()
    };
    let a = train::<f32>(&songs[..15], &songs[15..], &cfg).unwrap().checkpoint.to_bytes();
    let b = train::<f32>(&songs[..15], &songs[15..], &cfg).unwrap().checkpoint.to_bytes();
    assert_eq!(a, b);
    let other = TrainConfig { seed: 10, ..cfg };
    let c = train::<f32>(&songs[..15], &songs[15..], &other).unwrap().checkpoint.to_bytes();
    assert_ne!(a, c);
}

#[test]
fn reloaded_checkpoint_reproduces_validation_nll() {
    let songs = smoke_corpus(20);
    let cfg = TrainConfig {
        embed_dim: 4,
        hidden_dim: 8,
        epochs: 2,
        preprocessing: Preprocessing::KeyNormalize,
        ..TrainConfig::default()
    };
    let ck = train::<f32>(&songs[..15], &songs[15..], &cfg).unwrap().checkpoint;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    ck.save(&path).unwrap();
    let back = ModelCheckpoint::<f32>::load(&path).unwrap();
    assert_eq!(back, ck);
    let seqs: Vec<_> = songs[15..]
        .iter()
        .map(|s| prepare(s, cfg.preprocessing, cfg.alpha).unwrap())
        .collect();
    let nll = mean_nll(&back.params, &seqs).unwrap();
    assert!((nll - ck.validation_nll).abs() < 1e-6);
}

#[test]
fn grid_of_two_by_two_trains_four_models_per_group() {
    let songs = smoke_corpus(24);
    let base = TrainConfig {
        embed_dim: 3,
        hidden_dim: 4,
        epochs: 1,
        ..TrainConfig::default()
    };
    let mut grid = Vec::new();
    for lr in [1e-2, 1e-3] {
        for batch_size in [4, 8] {
            grid.push(TrainConfig { learning_rate: lr, batch_size, ..base.clone() });
        }
    }
    let winners = grid_search::<f32>(&songs[..18], &songs[18..], &grid).unwrap();
    assert_eq!(winners.len(), 1);
    assert_eq!(winners[0].trials.len(), 4);
    let best = winners[0].trials.iter().map(|t| t.validation_nll).fold(f64::INFINITY, f64::min);
    assert_eq!(winners[0].best.validation_nll, best);

    let single = grid_search::<f32>(&songs[..18], &songs[18..], &grid[..1]).unwrap();
    assert_eq!(single[0].best.config, grid[0]);
}
