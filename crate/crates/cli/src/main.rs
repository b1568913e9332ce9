use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use melseg::config::{Provenance, RunConfig};
use melseg::corpus::{meter_distribution, split_corpus, write_corpus, EsacOptions, MeterGroup, Song};
use melseg::ensemble::{Ensemble, Manifest, Scope};
use melseg::eval::{evaluate, RValueVariant};
use melseg::pipeline::{ablation, read_songs, rows_table, run_pipeline, song_curve_csv, Dataset};
use melseg::segmenter::{read_predictions, rule_segment, segment, write_predictions, Rule};
use melseg::trainer::{grid_search, log_csv, train, ModelCheckpoint, Preprocessing, TrainConfig};
use serde_json::json;

type Ckpt = ModelCheckpoint<f32>;

#[derive(Parser)]
#[command(name = "melseg", version, about = "Phrase segmentation of folk melodies from LSTM prediction error")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Seed for the split and every model.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Flat `section.key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    rvalue_variant: Option<Variant>,
    /// Override one configuration key, e.g. `--set train.hidden_dim=64`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    Rasanen,
    PaperEq,
}

#[derive(Clone, Copy, ValueEnum)]
enum Part {
    All,
    Train,
    Validation,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Parse EsAC records into the canonical JSON-lines corpus.
    Ingest {
        input: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Write the train/validation/test id lists.
    Split {
        corpus: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Train one model with the configured settings.
    Train {
        corpus: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Meter group to train on (`all` for every group).
        #[arg(long, default_value = "all")]
        meter: String,
        #[arg(long)]
        preprocessing: Option<String>,
    },
    /// Grid search per meter group and preprocessing; writes the winners.
    Grid {
        corpus: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Groups to search (`all` adds the global model); default every group.
        #[arg(long, value_delimiter = ',')]
        meters: Vec<String>,
    },
    /// Segment songs with one checkpoint or an ensemble manifest.
    Segment {
        corpus: PathBuf,
        #[arg(long, conflicts_with = "manifest")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        part: Part,
    },
    /// Rule-only boundaries: pause, bar, or bar+pause.
    Baseline {
        corpus: PathBuf,
        #[arg(long)]
        rule: String,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        part: Part,
    },
    /// Score a prediction file against the gold boundaries.
    Eval {
        corpus: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[arg(long)]
        buckets: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "all")]
        part: Part,
    },
    /// Every ablation condition on the test split, from a pipeline manifest.
    Ablate {
        corpus: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Loss-curve CSV for one song.
    Curve {
        corpus: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        song: String,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Split, grid-train per meter group, ensemble-segment, evaluate.
    Pipeline {
        corpus: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, value_delimiter = ',')]
        meters: Vec<String>,
        /// Also write this song's loss curve (repeatable).
        #[arg(long)]
        curve: Vec<String>,
    },
}

struct Ctx {
    cfg: RunConfig,
}

impl Ctx {
    fn new(g: &Global) -> Result<Self> {
        let mut cfg = match &g.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                RunConfig::from_flat(&text).with_context(|| format!("config {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        for o in &g.overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| anyhow!("--set expects KEY=VALUE, got {o:?}"))?;
            cfg.set(k, v)?;
        }
        if let Some(seed) = g.seed {
            cfg.seed = seed;
        }
        cfg.train.seed = cfg.seed;
        if let Some(v) = g.rvalue_variant {
            cfg.eval.rvalue_variant = match v {
                Variant::Rasanen => RValueVariant::Rasanen,
                Variant::PaperEq => RValueVariant::PaperEq,
            };
        }
        cfg.validate()?;
        Ok(Self { cfg })
    }

    fn esac_options(&self) -> EsacOptions {
        EsacOptions {
            alpha: self.cfg.corpus.alpha,
            durations: self.cfg.corpus.durations,
        }
    }

    /// Songs plus the provenance record tying outputs to these corpus bytes.
    fn load(&self, path: &Path) -> Result<(Vec<Song>, Provenance)> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let text = String::from_utf8_lossy(&bytes);
        let (songs, rejects) = read_songs(&text, &self.esac_options())?;
        if !rejects.is_empty() {
            eprintln!("{} records rejected while parsing {}", rejects.len(), path.display());
        }
        if songs.is_empty() {
            bail!("no songs in {}", path.display());
        }
        Ok((songs, Provenance::new(&self.cfg, &bytes)))
    }

    fn part(&self, songs: &[Song], part: Part) -> Result<Vec<Song>> {
        if matches!(part, Part::All) {
            return Ok(songs.to_vec());
        }
        let data: Dataset = melseg::pipeline::prepare_dataset(songs, &self.cfg)?;
        Ok(match part {
            Part::Train => data.train,
            Part::Validation => data.validation,
            Part::Test => data.test,
            Part::All => unreachable!(),
        })
    }
}

fn write(path: &Path, body: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

/// Line-oriented outputs get their provenance in a `.meta.json` sidecar.
fn write_with_meta(path: &Path, body: &str, prov: &Provenance) -> Result<()> {
    write(path, body)?;
    let mut meta = path.as_os_str().to_owned();
    meta.push(".meta.json");
    write(Path::new(&meta), &(serde_json::to_string_pretty(prov)? + "\n"))
}

fn save_checkpoint(path: &Path, ck: &Ckpt, prov: &Provenance) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    ck.save(path)?;
    let mut meta = path.as_os_str().to_owned();
    meta.push(".meta.json");
    write(Path::new(&meta), &(serde_json::to_string_pretty(prov)? + "\n"))
}

fn parse_meters(list: &[String]) -> Result<Vec<Option<MeterGroup>>> {
    list.iter()
        .map(|m| match m.trim() {
            "all" => Ok(None),
            g => g.parse::<MeterGroup>().map(Some).map_err(|e| anyhow!(e)),
        })
        .collect()
}

fn distribution_table(songs: &[Song]) -> String {
    let mut out = format!("{} songs\n", songs.len());
    for (g, frac) in meter_distribution(songs) {
        out.push_str(&format!("{:<6} {:>6.2}%\n", g.as_str(), frac * 100.0));
    }
    out
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.global.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    let ctx = Ctx::new(&cli.global)?;
    let cfg = &ctx.cfg;
    match cli.command {
        Command::Ingest { input, out } => {
            let text = std::fs::read_to_string(&input).with_context(|| format!("reading {}", input.display()))?;
            let ingest = melseg::corpus::parse_esac_with(&text, &ctx.esac_options());
            if ingest.songs.is_empty() {
                bail!("no songs parsed from {}", input.display());
            }
            let prov = Provenance::new(cfg, text.as_bytes());
            write_with_meta(&out, &write_corpus(&ingest.songs), &prov)?;
            let rejects: String = ingest.rejects.iter().map(|r| format!("{}\t{}\n", r.id, r.reason)).collect();
            let mut rej_path = out.as_os_str().to_owned();
            rej_path.push(".rejects.tsv");
            write(Path::new(&rej_path), &rejects)?;
            print!("{}", distribution_table(&ingest.songs));
            println!("{} records rejected", ingest.rejects.len());
        }
        Command::Split { corpus, out } => {
            let (songs, prov) = ctx.load(&corpus)?;
            let split = split_corpus(&songs, &cfg.split())?;
            let body = json!({ "provenance": prov, "split": split });
            write(&out, &(serde_json::to_string_pretty(&body)? + "\n"))?;
            println!(
                "train {} / validation {} / test {}",
                split.train.len(),
                split.validation.len(),
                split.test.len()
            );
        }
        Command::Train { corpus, out, meter, preprocessing } => {
            let (songs, prov) = ctx.load(&corpus)?;
            let data = melseg::pipeline::prepare_dataset(&songs, cfg)?;
            let mut tc = TrainConfig {
                alpha: cfg.corpus.alpha,
                meter_group: parse_meters(&[meter])?[0],
                ..cfg.train.clone()
            };
            if let Some(p) = preprocessing {
                tc.preprocessing = p.parse::<Preprocessing>().map_err(|e| anyhow!(e))?;
            }
            let outcome = train::<f32>(&data.train, &data.validation, &tc)?;
            save_checkpoint(&out, &outcome.checkpoint, &prov)?;
            let mut log = out.as_os_str().to_owned();
            log.push(".log.csv");
            write_with_meta(Path::new(&log), &log_csv(&outcome.log), &prov)?;
            println!(
                "validation NLL {:.4} after {} epochs{}",
                outcome.checkpoint.validation_nll,
                outcome.log.len(),
                if outcome.diverged { " (diverged)" } else { "" }
            );
        }
        Command::Grid { corpus, out_dir, meters } => {
            let (songs, prov) = ctx.load(&corpus)?;
            let data = melseg::pipeline::prepare_dataset(&songs, cfg)?;
            let scopes = if meters.is_empty() {
                data.groups.iter().map(|&g| Some(g)).collect()
            } else {
                parse_meters(&meters)?
            };
            let mut grid = Vec::new();
            for &group in &scopes {
                for &pre in &cfg.ensemble.preprocessings {
                    grid.extend(cfg.grid.expand(&TrainConfig {
                        meter_group: group,
                        preprocessing: pre,
                        alpha: cfg.corpus.alpha,
                        ..cfg.train.clone()
                    }));
                }
            }
            let winners = grid_search::<f32>(&data.train, &data.validation, &grid)?;
            let mut trials = Vec::new();
            for w in &winners {
                let stem = format!("{}_{}", Scope::of(w.meter_group).as_str().replace('/', "-"), w.preprocessing);
                save_checkpoint(&out_dir.join(format!("{stem}.ckpt")), &w.best, &prov)?;
                write_with_meta(&out_dir.join(format!("{stem}.log.csv")), &log_csv(&w.log), &prov)?;
                println!("{stem}: validation NLL {:.4}", w.best.validation_nll);
                trials.extend(w.trials.clone());
            }
            let body = json!({ "provenance": prov, "trials": trials });
            write(&out_dir.join("trials.json"), &(serde_json::to_string_pretty(&body)? + "\n"))?;
        }
        Command::Segment { corpus, checkpoint, manifest, out, part } => {
            let (songs, prov) = ctx.load(&corpus)?;
            let songs = ctx.part(&songs, part)?;
            let preds = match (checkpoint, manifest) {
                (Some(c), _) => {
                    let ck = Ckpt::load(&c).with_context(|| format!("loading {}", c.display()))?;
                    songs
                        .iter()
                        .map(|s| segment(&ck, s, &cfg.segmenter))
                        .collect::<melseg::Result<Vec<_>>>()?
                }
                (None, Some(m)) => {
                    let base = m.parent().unwrap_or(Path::new("."));
                    let ens = Ensemble::<f32>::from_manifest(&Manifest::load(&m)?, base)?;
                    ens.segment_corpus(&songs)?
                }
                (None, None) => bail!("pass --checkpoint or --manifest"),
            };
            write_with_meta(&out, &write_predictions(&preds), &prov)?;
            println!("{} songs segmented", preds.len());
        }
        Command::Baseline { corpus, rule, out, part } => {
            let (songs, prov) = ctx.load(&corpus)?;
            let songs = ctx.part(&songs, part)?;
            let rule: Rule = rule.parse().map_err(|e: String| anyhow!(e))?;
            let preds = songs
                .iter()
                .map(|s| rule_segment(s, rule, cfg.corpus.alpha))
                .collect::<melseg::Result<Vec<_>>>()?;
            write_with_meta(&out, &write_predictions(&preds), &prov)?;
            let report = evaluate(&preds, &songs, cfg.eval.policy, cfg.eval.rvalue_variant)?;
            print!("{}", report.table());
        }
        Command::Eval { corpus, predictions, out, buckets, part } => {
            let (songs, prov) = ctx.load(&corpus)?;
            let songs = ctx.part(&songs, part)?;
            let text = std::fs::read_to_string(&predictions)
                .with_context(|| format!("reading {}", predictions.display()))?;
            let preds = read_predictions(&text)?;
            let scores = melseg::eval::score_songs(&preds, &songs, cfg.eval.policy)?;
            let report = melseg::eval::report(&scores, cfg.eval.rvalue_variant, cfg.eval.bucket_width);
            if let Some(o) = out {
                let body = json!({ "provenance": prov, "report": report });
                write(&o, &(serde_json::to_string_pretty(&body)? + "\n"))?;
            }
            if let Some(b) = buckets {
                write_with_meta(&b, &report.buckets_csv(), &prov)?;
            }
            print!("{}", report.table());
        }
        Command::Ablate { corpus, manifest, out } => {
            let (songs, prov) = ctx.load(&corpus)?;
            let data = melseg::pipeline::prepare_dataset(&songs, cfg)?;
            let base = manifest.parent().unwrap_or(Path::new("."));
            let m = Manifest::load(&manifest)?;
            let ensemble = Ensemble::<f32>::from_manifest(&m, base)?;
            let single = ensemble
                .members
                .get(&Scope::All)
                .and_then(|v| v.first())
                .ok_or_else(|| anyhow!("manifest {} has no `all` checkpoint for the single model", manifest.display()))?
                .clone();
            let mut multi = Ensemble::default();
            for (scope, members) in &ensemble.members {
                multi.members.insert(*scope, members[..1].to_vec());
            }
            let abl = ablation(&single, &multi, &ensemble, &data.test, cfg)?;
            if let Some(o) = out {
                let body = json!({ "provenance": prov, "rows": abl.rows });
                write(&o, &(serde_json::to_string_pretty(&body)? + "\n"))?;
            }
            print!("{}", rows_table(&abl.rows));
        }
        Command::Curve { corpus, checkpoint, song, out } => {
            let (songs, prov) = ctx.load(&corpus)?;
            let s = songs
                .iter()
                .find(|s| s.id == song)
                .ok_or_else(|| anyhow!("no song {song:?} in {}", corpus.display()))?;
            let ck = Ckpt::load(&checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
            write_with_meta(&out, &song_curve_csv(&ck, s, &cfg.segmenter)?, &prov)?;
        }
        Command::Pipeline { corpus, out_dir, meters, curve } => {
            let mut run_cfg = cfg.clone();
            if !meters.is_empty() {
                let groups: Option<Vec<MeterGroup>> = parse_meters(&meters)?.into_iter().collect();
                run_cfg.corpus.meters = Some(groups.ok_or_else(|| anyhow!("--meters takes meter groups, not `all`"))?);
            }
            let ctx = Ctx { cfg: run_cfg };
            let (songs, prov) = ctx.load(&corpus)?;
            std::fs::create_dir_all(&out_dir)?;
            let out = run_pipeline::<f32>(&songs, &prov, Some(&out_dir), &curve)?;
            print!("{}", rows_table(&out.report.rows));
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
