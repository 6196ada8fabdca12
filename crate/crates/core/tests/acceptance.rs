//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits non-zero if any failed.

mod common;

use std::collections::BTreeSet;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use attnex::eval::{
    area_under, p_at_1, pr_curve_and_auc, prf_at_threshold, GoldFormat, GoldTriple, MatchPolicy,
    PrPoint, ScoredTriple,
};
use attnex::pipeline::{cmd_rank_toy_train, cmd_stats, ToyTrainOptions};
use attnex::rank::{contrastive_loss, gradient_check, negative_pair_accuracy, Embedding, ToyEncoder};
use attnex::search::{beam_search, beam_search_mode, BeamParams, SearchConstraint};
use attnex::tasks::TripleText;
use attnex::PositionMode;
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if $cond {
        } else {
            return Err(format!($($fmt)+));
        }
    };
}

fn constraint_kind(c: &SearchConstraint) -> usize {
    match c {
        SearchConstraint::Open => 0,
        SearchConstraint::RelationLinked(_) => 1,
        SearchConstraint::CandidateNp(_) => 2,
    }
}

/// Random instance with the requested mode and constraint kind.
fn instance_with(kind: usize, mode: PositionMode, sparsity: f64, rng: &mut ChaCha8Rng) -> Instance {
    let mut inst = random_instance(4, 12, sparsity, rng);
    inst.mode = mode;
    let n = inst.attention.size();
    while constraint_kind(&inst.constraint) != kind {
        inst.constraint = random_constraint(n, rng);
    }
    inst
}

fn beam_oracle_equivalence() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let params = BeamParams::default().with_beam_size(64);
    let mut checked = 0;
    let mut nonempty = 0;
    for round in 0..80 {
        for kind in 0..3 {
            for mode in PositionMode::ALL {
                let sparsity = if round % 2 == 0 { 0.0 } else { 0.5 };
                let inst = instance_with(kind, mode, sparsity, &mut rng);
                let got = beam_search_mode(&inst.attention, &inst.pair, mode, &params, &inst.constraint);
                match oracle_best(&inst, params.max_steps, true) {
                    None => ensure!(got.is_empty(), "beam found a path the oracle rejects: {inst:?}"),
                    Some((score, path)) => {
                        nonempty += 1;
                        ensure!(!got.is_empty(), "beam found nothing: {inst:?}");
                        ensure!(got[0].score == score, "score {} vs oracle {score}: {inst:?}", got[0].score);
                        ensure!(got[0].path == path, "path {:?} vs oracle {path:?}: {inst:?}", got[0].path);
                    }
                }
                checked += 1;
            }
        }
    }
    let took = started.elapsed();
    ensure!(nonempty >= 200, "only {nonempty} instances had a feasible path");
    ensure!(took < Duration::from_secs(30), "took {took:?}");
    Ok(format!("{checked} instances ({nonempty} with a path), 9 mode/constraint cells, {took:.1?}"))
}

fn beam_monotonicity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for i in 0..1000 {
        let inst = random_instance(4, 12, 0.2, &mut rng);
        let mut last = 0.0f64;
        for k in [1, 2, 4, 8] {
            let params = BeamParams::default().with_beam_size(k);
            let best = beam_search_mode(&inst.attention, &inst.pair, inst.mode, &params, &inst.constraint)
                .first()
                .map_or(0.0, |c| c.score);
            ensure!(best >= last, "instance {i}: k={k} gave {best} < {last}");
            last = best;
        }
    }
    Ok("1000 instances, k in {1,2,4,8}".into())
}

fn constraint_soundness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut searches = 0;
    let mut emitted = 0;
    while searches < 1000 {
        let inst = random_instance(4, 14, 0.2, &mut rng);
        if constraint_kind(&inst.constraint) == 0 {
            continue;
        }
        searches += 1;
        let n = inst.attention.size();
        let params = BeamParams::default().with_beam_size(rng.gen_range(1..16));
        for c in beam_search(&inst.attention, &inst.pair, &params, &inst.constraint) {
            emitted += c.path.len();
            ensure!(oracle_admits(&inst.constraint, &c.path), "path {:?} escapes {:?}", c.path, inst.constraint);
            let allowed = region(&inst.pair, c.mode, n);
            ensure!(c.path.iter().all(|t| allowed.contains(t)), "path {:?} outside {:?} region", c.path, c.mode);
        }
    }
    Ok(format!("{searches} constrained searches, {emitted} tokens emitted, 0 violations"))
}

fn loss_correctness() -> Outcome {
    let one = contrastive_loss(&[Embedding(vec![0.3, 2.0])], &[Embedding(vec![-1.0, 0.5])])
        .map_err(|e| e.to_string())?
        .loss;
    ensure!(one.abs() <= 1e-9, "N=1 loss {one}");
    let basis = [Embedding(vec![1.0, 0.0]), Embedding(vec![0.0, 1.0])];
    let two = contrastive_loss(&basis, &basis).map_err(|e| e.to_string())?.loss;
    ensure!((two - 0.3133).abs() <= 1e-4, "N=2 loss {two}");

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.gen_range(1..10);
        let d = rng.gen_range(2..20);
        let mut v = || (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
        let u: Vec<Vec<f64>> = (0..n).map(|_| v()).collect();
        let w: Vec<Vec<f64>> = (0..n).map(|_| v()).collect();
        let wrap = |x: &[Vec<f64>]| x.iter().cloned().map(Embedding).collect::<Vec<_>>();
        let got = contrastive_loss(&wrap(&u), &wrap(&w)).map_err(|e| e.to_string())?.loss;
        worst = worst.max((got - dense_oracle(&u, &w)).abs());
    }
    ensure!(worst <= 1e-8, "oracle gap {worst:e}");

    let pairs: Vec<(String, String)> = separable_pairs().into_iter().take(8).collect();
    let enc = ToyEncoder::from_texts(pairs.iter().flat_map(|(s, t)| [s.as_str(), t.as_str()]), 6, 3);
    let batch = enc.batch_from_texts(&pairs);
    let rel = gradient_check(&enc, &batch, 1e-5).map_err(|e| e.to_string())?;
    ensure!(rel <= 1e-4, "gradient relative error {rel:e}");
    Ok(format!("N=1 {one:.1e}, N=2 {two:.4}, oracle gap {worst:.1e}, gradient error {rel:.1e}"))
}

fn ranking_sanity() -> Outcome {
    let pairs = separable_pairs();
    let (encoder, summary) = cmd_rank_toy_train(&pairs, &ToyTrainOptions::default()).map_err(|e| e.to_string())?;
    let acc = negative_pair_accuracy(&negative_items(&pairs, 5), &encoder).map_err(|e| e.to_string())?;
    ensure!(acc == 1.0, "top-1 accuracy {acc}");
    Ok(format!(
        "{} sentences, top-1 accuracy {acc:.2}, loss {:.3} -> {:.3}",
        pairs.len(),
        summary.initial_loss,
        summary.final_loss
    ))
}

fn metrics() -> Outcome {
    let t = |h: &str, r: &str, tl: &str| TripleText {
        head: h.into(),
        relation: r.into(),
        tail: tl.into(),
    };
    let sc = |tr, c| ScoredTriple {
        sentence: "s".into(),
        triple: tr,
        confidence: c,
    };
    let g = |tr| GoldTriple {
        sentence: "s".into(),
        triple: tr,
    };
    let policy = MatchPolicy::default();
    let gold = vec![g(t("a", "r", "b")), g(t("c", "r", "d")), g(t("e", "r", "f")), g(t("h", "r", "i"))];
    let pred = vec![sc(t("a", "r", "b"), 0.9), sc(t("c", "r", "d"), 0.8), sc(t("x", "q", "y"), 0.7)];
    let f1 = prf_at_threshold(&pred, &gold, &policy, 0.0).f1;
    ensure!((f1 - 4.0 / 7.0).abs() < 1e-15, "F1 {f1}");

    let points = [
        PrPoint { threshold: 0.9, precision: 1.0, recall: 0.5 },
        PrPoint { threshold: 0.4, precision: 0.5, recall: 1.0 },
    ];
    let auc = area_under(&points);
    ensure!(auc == 0.875, "AUC {auc}");
    let two_gold = vec![g(t("a", "r", "b")), g(t("c", "r", "d"))];
    let curve_pred = vec![
        sc(t("a", "r", "b"), 0.9),
        sc(t("x", "q", "y"), 0.4),
        sc(t("c", "r", "d"), 0.4),
        sc(t("u", "q", "v"), 0.4),
    ];
    let curve = pr_curve_and_auc(&curve_pred, &two_gold, &policy);
    ensure!(curve.points == points && curve.auc == 0.875, "curve {curve:?}");

    let facts = [("f1", "Glasgow"), ("f2", "1941")].map(|(a, b)| (a.to_string(), b.to_string())).into();
    let guesses = [("f1", Some("Glasgow")), ("f2", None)].map(|(a, b)| (a.to_string(), b.map(String::from))).into();
    let p1 = p_at_1(&guesses, &facts).map_err(|e| e.to_string())?;
    ensure!(p1 == 0.5, "P@1 {p1}");
    Ok(format!("F1 {f1:.4} (4/7), AUC {auc}, P@1 {p1}"))
}

fn oie2016_gold() -> Option<PathBuf> {
    if let Some(p) = std::env::var_os("OIE2016_GOLD") {
        return Some(PathBuf::from(p));
    }
    let bundled = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/oie2016_test.tsv");
    bundled.exists().then_some(bundled)
}

fn relation_position_statistic() -> Outcome {
    let Some(path) = oie2016_gold() else {
        return Err("OIE2016 gold test file not available; set OIE2016_GOLD or place it at \
                    crates/core/data/oie2016_test.tsv (benchmark layout)"
            .into());
    };
    let s = cmd_stats(&path, GoldFormat::Benchmark).map_err(|e| format!("{e:#}"))?;
    let got = (s.left, s.right, s.middle, s.total);
    ensure!(got == (128, 165, 1437, 1730), "left/right/middle/total {got:?}, unlocatable {}", s.unlocatable);
    let pct = (1000.0 * s.outside_fraction()).round() / 10.0;
    ensure!(pct == 16.9, "outside fraction {pct}%");
    Ok(format!("128/165/1437 of 1730, {pct}% outside"))
}

fn attnex(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_attnex"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("attnex {args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn fixture_dataset() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/running_example/dataset")
}

fn extract_triples(out: &Path, extra: &[&str]) -> Result<Vec<(String, String, String)>, String> {
    let dataset = fixture_dataset();
    let mut args = vec!["extract", "--dataset", dataset.to_str().unwrap(), "--output", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    attnex(&args)?;
    let text = fs::read_to_string(out).map_err(|e| e.to_string())?;
    let line: serde_json::Value = serde_json::from_str(text.lines().next().unwrap_or("")).map_err(|e| e.to_string())?;
    Ok(line["predictions"]
        .as_array()
        .ok_or("no predictions array")?
        .iter()
        .map(|t| {
            let f = |k: &str| t[k].as_str().unwrap_or_default().to_string();
            (f("head"), f("relation"), f("tail"))
        })
        .collect())
}

fn end_to_end_fixture() -> Outcome {
    let started = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let own = |h: &str, r: &str, t: &str| (h.to_string(), r.to_string(), t.to_string());
    let born = own("Fisher", "Born in", "Glasgow");
    let grad = own("Fisher", "is a graduate of", "London Opera Centre");

    let ranked = extract_triples(&tmp.path().join("r.jsonl"), &["--task", "oie", "--top-n", "2"])?;
    let as_set = |v: &[(String, String, String)]| v.iter().cloned().collect::<BTreeSet<_>>();
    ensure!(as_set(&ranked) == as_set(&[born.clone(), grad.clone()]) && ranked.len() == 2, "ranked {ranked:?}");

    let between = extract_triples(&tmp.path().join("b.jsonl"), &["--task", "oie", "--top-n", "2", "--between-only"])?;
    ensure!(!between.contains(&born) && between.contains(&grad), "between-only {between:?}");

    let raw = extract_triples(&tmp.path().join("n.jsonl"), &["--task", "oie", "--top-n", "2", "--no-ranking"])?;
    ensure!(as_set(&raw) == as_set(&ranked), "no-ranking set {raw:?}");
    ensure!(raw != ranked, "no-ranking kept the ranked order {raw:?}");

    let took = started.elapsed();
    ensure!(took < Duration::from_secs(5), "took {took:?}");
    Ok(format!("ranked {:?}, raw order {:?}, {took:.1?}", ranked[0].1, raw[0].1))
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let a = tmp.path().join("a.jsonl");
    let b = tmp.path().join("b.jsonl");
    extract_triples(&a, &["--top-n", "3"])?;
    extract_triples(&b, &["--top-n", "3"])?;
    let (x, y) = (fs::read(&a).map_err(|e| e.to_string())?, fs::read(&b).map_err(|e| e.to_string())?);
    ensure!(x == y, "prediction files differ");
    Ok(format!("{} identical bytes", x.len()))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("beam-oracle equivalence", beam_oracle_equivalence),
        ("beam monotonicity", beam_monotonicity),
        ("constraint soundness", constraint_soundness),
        ("contrastive loss correctness", loss_correctness),
        ("ranking sanity", ranking_sanity),
        ("metrics", metrics),
        ("relation-position statistic", relation_position_statistic),
        ("end-to-end fixture", end_to_end_fixture),
        ("determinism", determinism),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = panic::catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| Err(format!("panicked: {:?}", p.downcast_ref::<String>().map(String::as_str).or(p.downcast_ref::<&str>().copied()))));
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
