//! End-to-end runs: split, grid search per meter group, ensemble
//! segmentation, evaluation, and the ablation table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Provenance, RunConfig};
use crate::corpus::{parse_esac_with, read_corpus, split_corpus, EsacOptions, MeterGroup, Reject, Song};
use crate::ensemble::{Ensemble, Member, Scope};
use crate::error::{Error, Result};
use crate::eval::{over_segmentation, pct, report, score_songs, EvalReport};
use crate::scalar::Scalar;
use crate::segmenter::{
    curve_csv, rule_segment, search_prominence_where, segment_curve, song_curve, write_predictions,
    BoundaryPrediction, Constraints, LossCurve, Rule, SegmenterConfig,
};
use crate::tokenizer::FrameSequence;
use crate::trainer::{grid_search, log_csv, train, EpochLog, ModelCheckpoint, Preprocessing, TrainConfig, Trial};

/// Songs from either an EsAC file or a canonical JSON-lines corpus.
pub fn read_songs(text: &str, opts: &EsacOptions) -> Result<(Vec<Song>, Vec<Reject>)> {
    if text.trim_start().starts_with('{') {
        Ok((read_corpus(text)?, Vec::new()))
    } else {
        let ingest = parse_esac_with(text, opts);
        Ok((ingest.songs, ingest.rejects))
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Vec<Song>,
    pub validation: Vec<Song>,
    pub test: Vec<Song>,
    /// Groups with at least one training song, each trained separately.
    pub groups: Vec<MeterGroup>,
}

/// Apply the meter filter and split.
pub fn prepare_dataset(songs: &[Song], cfg: &RunConfig) -> Result<Dataset> {
    let kept: Vec<Song> = songs
        .iter()
        .filter(|s| cfg.corpus.meters.as_ref().is_none_or(|m| m.contains(&s.meter_group())))
        .cloned()
        .collect();
    let split = split_corpus(&kept, &cfg.split())?;
    let take = |ids: &[String]| {
        let wanted: std::collections::BTreeSet<&str> = ids.iter().map(String::as_str).collect();
        kept.iter().filter(|s| wanted.contains(s.id.as_str())).cloned().collect::<Vec<_>>()
    };
    let train = take(&split.train);
    let groups = MeterGroup::ALL
        .into_iter()
        .filter(|g| train.iter().any(|s| s.meter_group() == *g))
        .collect();
    Ok(Dataset {
        validation: take(&split.validation),
        test: take(&split.test),
        train,
        groups,
    })
}

#[derive(Clone, Debug)]
pub struct Models<T> {
    /// One model over every meter group.
    pub single: Member<T>,
    /// First member per group, with the single model as fallback.
    pub multi: Ensemble<T>,
    /// All `k` members per group, with the single model as fallback.
    pub ensemble: Ensemble<T>,
    pub trials: Vec<Trial>,
    /// File stem, epoch log, checkpoint for every model kept.
    pub runs: Vec<(String, Vec<EpochLog>, Scope)>,
}

fn tag(scope: Scope, pre: Preprocessing, member: usize) -> String {
    format!("{}_{}_m{member}", scope.as_str().replace('/', "-"), pre)
}

/// Member `m` of a group uses `preprocessings[m % P]` and seed `seed + m / P`.
/// The first `P` members are the grid winners; the rest retrain a winner's
/// configuration with a new seed.
pub fn train_models<T: Scalar>(data: &Dataset, cfg: &RunConfig) -> Result<Models<T>> {
    cfg.validate()?;
    let pres = &cfg.ensemble.preprocessings;
    let p = pres.len();
    let k = cfg.ensemble.k;
    let base = TrainConfig {
        seed: cfg.seed,
        alpha: cfg.corpus.alpha,
        ..cfg.train.clone()
    };
    let mut grid = cfg.grid.expand(&TrainConfig {
        meter_group: None,
        preprocessing: pres[0],
        ..base.clone()
    });
    for &g in &data.groups {
        for &pre in &pres[..k.min(p)] {
            grid.extend(cfg.grid.expand(&TrainConfig {
                meter_group: Some(g),
                preprocessing: pre,
                ..base.clone()
            }));
        }
    }
    let winners = grid_search::<T>(&data.train, &data.validation, &grid)?;
    let winner = |group: Option<MeterGroup>, pre: Preprocessing| {
        winners
            .iter()
            .find(|w| w.meter_group == group && w.preprocessing == pre)
            .expect("every grid cell has a winner")
    };

    let extra: Vec<(MeterGroup, usize, TrainConfig)> = data
        .groups
        .iter()
        .flat_map(|&g| {
            (p..k).map(move |m| {
                let c = TrainConfig {
                    seed: cfg.seed + (m / p) as u64,
                    ..winner(Some(g), pres[m % p]).best.config.clone()
                };
                (g, m, c)
            })
        })
        .collect();
    let extra_out: Vec<_> = extra
        .par_iter()
        .map(|(_, _, c)| train::<T>(&data.train, &data.validation, c))
        .collect::<Result<_>>()?;

    let single_w = winner(None, pres[0]);
    let single = single_w.best.clone();
    let mut runs = vec![(tag(Scope::All, pres[0], 0), single_w.log.clone(), Scope::All)];
    let member = |c: &ModelCheckpoint<T>| Member {
        checkpoint: c.clone(),
        segmenter: cfg.segmenter.clone(),
    };
    let mut ensemble = Ensemble::default();
    let mut multi = Ensemble::default();
    ensemble.members.insert(Scope::All, vec![member(&single)]);
    for &g in &data.groups {
        let scope = Scope::Group(g);
        let mut list = Vec::new();
        for m in 0..k {
            if m < p {
                let w = winner(Some(g), pres[m]);
                list.push(member(&w.best));
                runs.push((tag(scope, pres[m], m), w.log.clone(), scope));
            } else {
                let i = extra.iter().position(|(eg, em, _)| *eg == g && *em == m).expect("member trained");
                list.push(member(&extra_out[i].checkpoint));
                runs.push((tag(scope, pres[m % p], m), extra_out[i].log.clone(), scope));
            }
        }
        ensemble.members.insert(scope, list);
    }

    for (scope, members) in ensemble.members.iter_mut() {
        let songs = tuning_songs(data, *scope);
        for m in members.iter_mut() {
            m.segmenter = tune_segmenter(&m.checkpoint, &m.segmenter, &songs, cfg)?.0;
        }
    }
    let single = ensemble.members[&Scope::All][0].clone();
    for (scope, members) in &ensemble.members {
        multi.members.insert(*scope, vec![members[0].clone()]);
    }
    Ok(Models {
        single,
        multi,
        ensemble,
        trials: winners.into_iter().flat_map(|w| w.trials).collect(),
        runs,
    })
}

/// Validation songs of a scope; the whole validation split when the group has
/// none there, and the training split when validation is empty.
fn tuning_songs(data: &Dataset, scope: Scope) -> Vec<Song> {
    let pool = if data.validation.is_empty() { &data.train } else { &data.validation };
    let own: Vec<Song> = pool.iter().filter(|s| scope.contains(s.meter_group())).cloned().collect();
    if own.is_empty() {
        pool.clone()
    } else {
        own
    }
}

/// Choose `a` and `b` from the tuning grid by macro F on `songs`. The
/// configured pair is tried first and only a strictly better candidate
/// replaces it. Returns the chosen configuration and its F-score.
pub fn tune_segmenter<T: Scalar>(
    ckpt: &ModelCheckpoint<T>,
    base: &SegmenterConfig,
    songs: &[Song],
    cfg: &RunConfig,
) -> Result<(SegmenterConfig, f64)> {
    let cs = curves(ckpt, songs, base)?;
    let f_of = |a: f64, b: f64| -> Result<f64> {
        let seg = SegmenterConfig { a, b, ..base.clone() };
        let preds: Vec<_> = songs
            .par_iter()
            .zip(&cs)
            .map(|(s, (seq, curve))| segment_curve(&curve.renormalized(a, b), s, seq, &seg))
            .collect();
        let scores = score_songs(&preds, songs, cfg.eval.policy)?;
        Ok(report(&scores, cfg.eval.rvalue_variant, cfg.eval.bucket_width).overall.f_score)
    };
    let mut best = (base.a, base.b, f_of(base.a, base.b)?);
    for (a, b) in cfg.tune.candidates((base.a, base.b)) {
        if (a, b) == (base.a, base.b) {
            continue;
        }
        let f = f_of(a, b)?;
        if f > best.2 {
            best = (a, b, f);
        }
    }
    Ok((
        SegmenterConfig {
            a: best.0,
            b: best.1,
            ..base.clone()
        },
        best.2,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub name: String,
    pub report: EvalReport,
}

pub const ROW_SINGLE: &str = "Single-Temp";
pub const ROW_MULTI: &str = "Multi-Temp";
pub const ROW_ENSEMBLE: &str = "Ensemble-Multi-Temp";
pub const ROW_NO_PAUSE: &str = "Single-Temp without Pause";
pub const ROW_NO_BARS: &str = "Single-Temp without Bars";
pub const ROW_NO_CONSTRAINTS: &str = "Single-Temp without Bars,Pause";
pub const ROW_PAUSE: &str = "Pause";
pub const ROW_BARS: &str = "Bars";
pub const ROW_BARS_PAUSE: &str = "Bars,Pause";

fn row(name: &str, preds: &[BoundaryPrediction], songs: &[Song], cfg: &RunConfig) -> Result<Row> {
    let scores = score_songs(preds, songs, cfg.eval.policy)?;
    Ok(Row {
        name: name.to_string(),
        report: report(&scores, cfg.eval.rvalue_variant, cfg.eval.bucket_width),
    })
}

/// Rows for the three rule-only baselines; no model needed.
pub fn rule_rows(songs: &[Song], cfg: &RunConfig) -> Result<Vec<Row>> {
    [(ROW_PAUSE, Rule::Pause), (ROW_BARS, Rule::Bar), (ROW_BARS_PAUSE, Rule::BarPause)]
        .into_iter()
        .map(|(name, rule)| {
            let preds: Vec<_> = songs
                .iter()
                .map(|s| rule_segment(s, rule, cfg.corpus.alpha))
                .collect::<Result<_>>()?;
            row(name, &preds, songs, cfg)
        })
        .collect()
}

type Curves<T> = Vec<(FrameSequence, LossCurve<T>)>;

fn curves<T: Scalar>(ckpt: &ModelCheckpoint<T>, songs: &[Song], seg: &SegmenterConfig) -> Result<Curves<T>> {
    songs.par_iter().map(|s| song_curve(ckpt, s, seg)).collect()
}

/// The single model under its own segmenter settings and the three reduced
/// constraint sets. Returns the rows and the configured row's predictions.
pub fn single_rows<T: Scalar>(
    single: &Member<T>,
    songs: &[Song],
    cfg: &RunConfig,
) -> Result<(Vec<Row>, Vec<BoundaryPrediction>)> {
    let base = &single.segmenter;
    let cs = curves(&single.checkpoint, songs, base)?;
    let run = |c: Constraints| -> Vec<BoundaryPrediction> {
        let seg = SegmenterConfig {
            constraints: c,
            ..base.clone()
        };
        songs
            .iter()
            .zip(&cs)
            .map(|(s, (seq, curve))| segment_curve(curve, s, seq, &seg))
            .collect()
    };
    let main = run(base.constraints);
    let rows = vec![
        row(ROW_SINGLE, &main, songs, cfg)?,
        row(ROW_NO_PAUSE, &run(Constraints { pause: false, bar: true }), songs, cfg)?,
        row(ROW_NO_BARS, &run(Constraints { pause: true, bar: false }), songs, cfg)?,
        row(ROW_NO_CONSTRAINTS, &run(Constraints::NONE), songs, cfg)?,
    ];
    Ok((rows, main))
}

pub struct Ablation {
    /// In the order of the published tables.
    pub rows: Vec<Row>,
    pub ensemble_predictions: Vec<BoundaryPrediction>,
}

pub fn ablation<T: Scalar>(
    single: &Member<T>,
    multi: &Ensemble<T>,
    ensemble: &Ensemble<T>,
    songs: &[Song],
    cfg: &RunConfig,
) -> Result<Ablation> {
    let (mut singles, _) = single_rows(single, songs, cfg)?;
    let multi_preds = multi.segment_corpus(songs)?;
    let ens_preds = ensemble.segment_corpus(songs)?;
    let mut rows = vec![singles.remove(0)];
    rows.push(row(ROW_MULTI, &multi_preds, songs, cfg)?);
    rows.push(row(ROW_ENSEMBLE, &ens_preds, songs, cfg)?);
    rows.extend(singles);
    rows.extend(rule_rows(songs, cfg)?);
    Ok(Ablation {
        rows,
        ensemble_predictions: ens_preds,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub provenance: Provenance,
    pub split: SplitSizes,
    pub rows: Vec<Row>,
    pub trials: Vec<Trial>,
}

impl PipelineReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn row(&self, name: &str) -> Option<&EvalReport> {
        self.rows.iter().find(|r| r.name == name).map(|r| &r.report)
    }
}

/// Text table of the rows in percent.
pub fn rows_table(rows: &[Row]) -> String {
    let mut out = format!(
        "{:<32} {:>7} {:>7} {:>7} {:>8} {:>7}\n",
        "condition", "P", "R", "F", "OS", "R-val"
    );
    for r in rows {
        let s = &r.report.overall;
        let os = over_segmentation(s.precision, s.recall).map_or("-".to_string(), |v| format!("{v:.4}"));
        let rv = s.r_value.map_or("-".to_string(), pct);
        let _ = writeln!(
            out,
            "{:<32} {:>7} {:>7} {:>7} {os:>8} {rv:>7}",
            r.name,
            pct(s.precision),
            pct(s.recall),
            pct(s.f_score)
        );
    }
    out
}

pub struct PipelineOutput<T> {
    pub report: PipelineReport,
    pub models: Models<T>,
    pub data: Dataset,
    pub predictions: Vec<BoundaryPrediction>,
}

/// Split, train, segment the test songs, evaluate every ablation condition.
/// With `out_dir`, checkpoints, logs, the manifest, predictions, the report
/// and the loss curves of `curve_ids` are written there.
pub fn run_pipeline<T: Scalar>(
    songs: &[Song],
    provenance: &Provenance,
    out_dir: Option<&Path>,
    curve_ids: &[String],
) -> Result<PipelineOutput<T>> {
    let cfg = &provenance.config;
    let data = prepare_dataset(songs, cfg)?;
    let models = train_models::<T>(&data, cfg)?;
    let abl = ablation(&models.single, &models.multi, &models.ensemble, &data.test, cfg)?;
    let report = PipelineReport {
        provenance: provenance.clone(),
        split: SplitSizes {
            train: data.train.len(),
            validation: data.validation.len(),
            test: data.test.len(),
        },
        rows: abl.rows,
        trials: models.trials.clone(),
    };
    let out = PipelineOutput {
        report,
        models,
        data,
        predictions: abl.ensemble_predictions,
    };
    if let Some(dir) = out_dir {
        write_outputs(dir, &out, provenance, songs, curve_ids)?;
    }
    Ok(out)
}

fn write_with_meta(path: &Path, body: &str, provenance: &Provenance) -> Result<()> {
    std::fs::write(path, body)?;
    let mut meta = path.as_os_str().to_owned();
    meta.push(".meta.json");
    std::fs::write(PathBuf::from(meta), serde_json::to_string_pretty(provenance)? + "\n")?;
    Ok(())
}

/// Loss-curve CSV of one song under a model, peaks as the segmenter picks them.
pub fn song_curve_csv<T: Scalar>(ckpt: &ModelCheckpoint<T>, song: &Song, seg: &SegmenterConfig) -> Result<String> {
    let (seq, curve) = song_curve(ckpt, song, seg)?;
    let rests: Vec<usize> = (0..seq.len()).filter(|&f| seq.is_rest_frame(f)).collect();
    let delta = seg.delta_frames(&seq);
    let (_, peaks) = search_prominence_where(
        &curve.normalized,
        curve.skip_prefix_frames,
        crate::segmenter::boundary_budget(&seq),
        seg.binary_search_iters,
        |f| crate::segmenter::eligible_frame(&seq, &rests, delta, seg.constraints, f),
    );
    Ok(curve_csv(&curve, &seq, &peaks))
}

fn write_outputs<T: Scalar>(
    dir: &Path,
    out: &PipelineOutput<T>,
    provenance: &Provenance,
    songs: &[Song],
    curve_ids: &[String],
) -> Result<()> {
    for sub in ["checkpoints", "logs", "curves"] {
        std::fs::create_dir_all(dir.join(sub))?;
    }
    let mut paths: BTreeMap<Scope, Vec<PathBuf>> = BTreeMap::new();
    let mut next: BTreeMap<Scope, usize> = BTreeMap::new();
    for (stem, log, scope) in &out.models.runs {
        let i = next.entry(*scope).or_default();
        let ckpt = &out.models.ensemble.members[scope][*i].checkpoint;
        *i += 1;
        let rel = PathBuf::from("checkpoints").join(format!("{stem}.ckpt"));
        ckpt.save(&dir.join(&rel))?;
        paths.entry(*scope).or_default().push(rel);
        write_with_meta(&dir.join("logs").join(format!("{stem}.csv")), &log_csv(log), provenance)?;
    }
    let mut manifest = out.models.ensemble.manifest(&paths);
    manifest.provenance = Some(provenance.clone());
    manifest.save(&dir.join("manifest.json"))?;
    std::fs::write(
        dir.join("checkpoints").join("provenance.json"),
        serde_json::to_string_pretty(provenance)? + "\n",
    )?;

    write_with_meta(&dir.join("predictions.jsonl"), &write_predictions(&out.predictions), provenance)?;
    std::fs::write(dir.join("report.json"), out.report.to_json())?;
    std::fs::write(dir.join("report.txt"), rows_table(&out.report.rows))?;
    if let Some(ens) = out.report.row(ROW_ENSEMBLE) {
        write_with_meta(&dir.join("buckets.csv"), &ens.buckets_csv(), provenance)?;
    }
    for id in curve_ids {
        let song = songs
            .iter()
            .find(|s| &s.id == id)
            .ok_or_else(|| Error::Config(format!("curve requested for unknown song {id}")))?;
        let single = &out.models.single;
        let csv = song_curve_csv(&single.checkpoint, song, &single.segmenter)?;
        let name = id.replace(['/', ':'], "_");
        write_with_meta(&dir.join("curves").join(format!("{name}.csv")), &csv, provenance)?;
    }
    Ok(())
}
