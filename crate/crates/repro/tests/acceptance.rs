//! Acceptance report: one PASS/FAIL line per criterion, non-zero exit if any
//! fails. `MELSEG_CRITERIA=1,4` restricts the run to the listed criteria.
//!
//! Criteria 2 to 5 read the ingested Essen corpus at `data/essen_europa.esac`
//! (produced by `tools/fetch_essen.sh`).

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use melseg::config::{Provenance, RunConfig};
use melseg::corpus::{meter_distribution, parse_esac_with, EsacOptions, MeterGroup, Song};
use melseg::eval::{r_value, RValueVariant};
use melseg::pipeline::{
    rule_rows, run_pipeline, ROW_BARS, ROW_BARS_PAUSE, ROW_ENSEMBLE, ROW_NO_CONSTRAINTS, ROW_PAUSE, ROW_SINGLE,
};

struct Outcome {
    pass: bool,
    lines: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Self { pass: true, lines: Vec::new() }
    }

    fn check(&mut self, ok: bool, what: String) {
        self.pass &= ok;
        self.lines.push(format!("{} {what}", if ok { "ok  " } else { "MISS" }));
    }

    fn fail(msg: String) -> Self {
        Self { pass: false, lines: vec![msg] }
    }
}

fn corpus_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/essen_europa.esac")
}

fn essen() -> Result<Vec<Song>, String> {
    let path = corpus_path();
    let text = std::fs::read_to_string(&path)
        .map_err(|e| format!("cannot read {} ({e}); run tools/fetch_essen.sh first", path.display()))?;
    Ok(parse_esac_with(&text, &EsacOptions::default()).songs)
}

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol
}

fn criterion_1() -> Outcome {
    let mut o = Outcome::new();
    for (p, r, published) in [(76.96, 80.81, 81.53), (98.28, 48.74, 63.76), (75.62, 74.32, 78.66), (47.34, 89.83, 19.06)] {
        let rv = r_value(p / 100.0, r / 100.0, RValueVariant::Rasanen).expect("valid P/R");
        let shown = (rv * 10_000.0).round() / 100.0;
        o.check(within(shown, published, 0.05), format!("R({p}, {r}) = {shown:.2}, published {published:.2}"));
    }
    o
}

fn rule_scores(songs: &[Song]) -> Vec<(String, f64, f64)> {
    let rows = rule_rows(songs, &RunConfig::default()).expect("rule rows");
    rows.into_iter()
        .map(|r| (r.name, 100.0 * r.report.overall.precision, 100.0 * r.report.overall.recall))
        .collect()
}

fn criterion_2() -> Outcome {
    let songs = match essen() {
        Ok(s) => s,
        Err(e) => return Outcome::fail(e),
    };
    let mut o = Outcome::new();
    let (_, p, r) = rule_scores(&songs).into_iter().find(|x| x.0 == ROW_PAUSE).unwrap();
    o.check((95.0..=100.0).contains(&p), format!("Pause precision {p:.2} in [95, 100] (published 98.28)"));
    o.check((44.0..=53.0).contains(&r), format!("Pause recall {r:.2} in [44, 53] (published 48.74)"));
    o
}

fn criterion_3() -> Outcome {
    let songs = match essen() {
        Ok(s) => s,
        Err(e) => return Outcome::fail(e),
    };
    let mut o = Outcome::new();
    let scores = rule_scores(&songs);
    for (name, tp, tr) in [(ROW_BARS, 45.47, 83.32), (ROW_BARS_PAUSE, 47.34, 89.83)] {
        let (_, p, r) = scores.iter().find(|x| x.0 == name).unwrap();
        o.check(within(*p, tp, 6.0), format!("{name} precision {p:.2} vs {tp} ± 6"));
        o.check(within(*r, tr, 6.0), format!("{name} recall {r:.2} vs {tr} ± 6"));
    }
    o
}

fn criterion_4() -> Outcome {
    let songs = match essen() {
        Ok(s) => s,
        Err(e) => return Outcome::fail(e),
    };
    let mut o = Outcome::new();
    let n = songs.len() as f64;
    o.check(within(n, 6236.0, 62.36), format!("{n} songs vs 6236 ± 1%"));
    let table = [
        (MeterGroup::FourFour, 26.65),
        (MeterGroup::TwoFour, 22.03),
        (MeterGroup::ThreeFour, 20.44),
        (MeterGroup::SixEight, 13.00),
        (MeterGroup::ThreeEight, 5.22),
        (MeterGroup::Other, 12.56),
    ];
    let dist = meter_distribution(&songs);
    for (g, want) in table {
        let got = 100.0 * dist.iter().find(|d| d.0 == g).map_or(0.0, |d| d.1);
        o.check(within(got, want, 1.5), format!("{} {got:.2}% vs {want:.2} ± 1.5", g.as_str()));
    }
    o
}

/// Desk-scale settings: one hyperparameter cell, a narrow model, two members
/// per meter group.
fn desk_config() -> RunConfig {
    RunConfig::from_flat(
        "train.embed_dim = 32\n\
         train.hidden_dim = 64\n\
         train.epochs = 8\n\
         train.patience = 2\n\
         grid.learning_rates = [0.002]\n\
         grid.batch_sizes = [16]\n\
         grid.max_seq_lens = [64]\n\
         ensemble.k = 2\n",
    )
    .expect("desk config")
}

fn criterion_5() -> Outcome {
    let songs = match essen() {
        Ok(s) => s,
        Err(e) => return Outcome::fail(e),
    };
    let cfg = desk_config();
    let text = std::fs::read(corpus_path()).unwrap();
    let prov = Provenance::new(&cfg, &text);
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance-desk");
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    let start = Instant::now();
    let out = match run_pipeline::<f32>(&songs, &prov, Some(&dir), &[]) {
        Ok(o) => o,
        Err(e) => return Outcome::fail(format!("pipeline failed: {e}")),
    };
    let elapsed = start.elapsed();
    let f = |name: &str| 100.0 * out.report.row(name).expect("row").overall.f_score;
    let (single, none, ens) = (f(ROW_SINGLE), f(ROW_NO_CONSTRAINTS), f(ROW_ENSEMBLE));
    let mut o = Outcome::new();
    o.check(single >= 65.0, format!("Single-Temp F {single:.2} >= 65 (published 73.14)"));
    o.check(within(none, 48.39, 8.0), format!("unconstrained F {none:.2} vs 48.39 ± 8"));
    o.check(
        none < single && single <= ens,
        format!("ordering F(none) {none:.2} < F(single) {single:.2} <= F(ensemble) {ens:.2}"),
    );
    o.check(
        elapsed <= Duration::from_secs(2 * 3600),
        format!("run time {:.0}s within 2h; artifacts in {}", elapsed.as_secs_f64(), dir.display()),
    );
    o
}

fn timed(o: &mut Outcome, name: &str, check: impl FnOnce() -> common::Check) {
    let start = Instant::now();
    let result = check();
    let secs = start.elapsed().as_secs_f64();
    match result {
        Ok(()) => o.check(secs < 30.0, format!("({name}) {secs:.1}s")),
        Err(e) => o.check(false, format!("({name}) {e}")),
    }
}

fn criterion_6() -> Outcome {
    let mut o = Outcome::new();
    timed(&mut o, "a: gradients vs finite differences, 100 cases", || common::gradients_match(100, 21));
    timed(&mut o, "b: find_peaks vs prominence oracle, len <= 12", || common::find_peaks_exhaustive(12));
    timed(&mut o, "c: peak count monotone in delta, 1000 curves", || common::peak_count_monotone(1000, 22));
    timed(&mut o, "d: tokenize/realign round trip, 1000 songs", || common::realign_round_trip(1000, 23));
    timed(&mut o, "e: normalized-loss shift invariance", || common::shift_invariance(1000, 24));
    timed(&mut o, "f: checkpoint round trip bit-exact", || common::checkpoint_round_trip(50, 25));
    o
}

fn criterion_7() -> Outcome {
    // A small Essen slice keeps two full runs cheap; synthetic songs stand in
    // when the corpus has not been fetched.
    let (songs, source) = match essen() {
        Ok(s) => (s.into_iter().step_by(20).collect::<Vec<_>>(), "Essen slice"),
        Err(_) => (common::phrase_corpus(120, 7), "synthetic corpus"),
    };
    let cfg = common::tiny_run_config();
    let prov = Provenance::new(&cfg, melseg::corpus::write_corpus(&songs).as_bytes());
    let base = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance-determinism");
    let _ = std::fs::remove_dir_all(&base);
    let mut reports = Vec::new();
    for run in ["a", "b"] {
        let dir = base.join(run);
        std::fs::create_dir_all(&dir).unwrap();
        if let Err(e) = run_pipeline::<f32>(&songs, &prov, Some(&dir), &[]) {
            return Outcome::fail(format!("pipeline failed: {e}"));
        }
        let read = |f: &str| std::fs::read(dir.join(f)).unwrap();
        reports.push((read("report.json"), read("predictions.jsonl"), read("manifest.json")));
    }
    let mut o = Outcome::new();
    let same = |i: usize| match i {
        0 => reports[0].0 == reports[1].0,
        1 => reports[0].1 == reports[1].1,
        _ => reports[0].2 == reports[1].2,
    };
    let n = songs.len();
    o.check(same(0), format!("report.json byte-identical across two runs ({source}, {n} songs)"));
    o.check(same(1), "predictions.jsonl byte-identical".into());
    o.check(same(2), "manifest.json byte-identical".into());
    o
}

fn main() {
    // The harness's listing mode has no tests to enumerate here.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let only: Option<Vec<usize>> = std::env::var("MELSEG_CRITERIA")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let criteria: [(usize, &str, fn() -> Outcome); 7] = [
        (1, "R-value reproduces published values", criterion_1),
        (2, "Pause baseline on Essen", criterion_2),
        (3, "Bars and Bars+Pause baselines on Essen", criterion_3),
        (4, "corpus size and meter distribution", criterion_4),
        (5, "desk-scale model quality", criterion_5),
        (6, "property suites", criterion_6),
        (7, "pipeline determinism", criterion_7),
    ];
    let mut failed = Vec::new();
    for (n, title, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let verdict = if outcome.pass { "PASS" } else { "FAIL" };
        println!("criterion {n}: {verdict} {title} ({:.1}s)", start.elapsed().as_secs_f64());
        for line in &outcome.lines {
            println!("    {line}");
        }
        if !outcome.pass {
            failed.push(n);
        }
    }
    if !failed.is_empty() {
        println!("acceptance: criteria {failed:?} failed");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}
