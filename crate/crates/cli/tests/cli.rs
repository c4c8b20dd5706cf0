use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use serde_json::Value;

fn mmdial(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmdial")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = mmdial(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Catalog plus a generated corpus of `n` furniture dialogs.
fn corpus(dir: &Path, n: usize) -> PathBuf {
    let cat = dir.join("catalog.json");
    let corpus = dir.join("corpus.json");
    ok(&["gen-catalog", "--domain", "furniture", "--items", "179", "--seed", "7", "--out", p(&cat)]);
    ok(&["gen-dialogs", "--catalog", p(&cat), "--dialogs", &n.to_string(), "--seed", "1", "--out", p(&corpus)]);
    corpus
}

#[test]
fn gen_catalog_is_repeatable_and_checks_size() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    ok(&["gen-catalog", "--domain", "fashion", "--items", "80", "--seed", "3", "--out", p(&a)]);
    ok(&["gen-catalog", "--domain", "fashion", "--items", "80", "--seed", "3", "--out", p(&b)]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(json(&a)["items"].as_array().unwrap().len(), 80);
    let manifest = json(&dir.path().join("a.json.manifest.json"));
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["command"][1], "gen-catalog");

    let small = mmdial(&["gen-catalog", "--domain", "furniture", "--items", "2", "--out", p(&a)]);
    assert_eq!(small.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&small.stderr).contains("items"));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(mmdial(&["gen-catalog", "--domain", "toys", "--items", "9", "--out", "x"]).status.code(), Some(2));
    assert_eq!(mmdial(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(mmdial(&["validate", "--corpus", "/nonexistent/corpus.json"]).status.code(), Some(2));
}

#[test]
fn default_split_of_100_dialogs() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = corpus(dir.path(), 100);
    ok(&["validate", "--corpus", p(&corpus)]);
    let out = dir.path().join("splits");
    ok(&["splits", "--corpus", p(&corpus), "--seed", "4", "--out-dir", p(&out)]);
    let sizes: Vec<usize> = ["train", "dev", "testdev", "test"]
        .iter()
        .map(|n| json(&out.join(format!("{n}.json")))["dialogs"].as_array().unwrap().len())
        .collect();
    assert_eq!(sizes, vec![60, 10, 15, 15]);
    // the catalog travels with the splits so they validate on their own
    ok(&["validate", "--corpus", p(&out.join("test.json"))]);
    let bad = mmdial(&["splits", "--corpus", p(&corpus), "--ratios", "0.5,0.5,0.5,0.5", "--out-dir", p(&out)]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn empty_corpus_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = corpus(dir.path(), 3);
    let mut v = json(&corpus);
    v["dialogs"] = Value::Array(vec![]);
    let empty = dir.path().join("empty.json");
    fs::write(&empty, v.to_string()).unwrap();
    let out = mmdial(&["splits", "--corpus", p(&empty), "--out-dir", p(&dir.path().join("s"))]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(mmdial(&["validate", "--corpus", p(&empty)]).status.code(), Some(1));
}

#[test]
fn validate_fixtures_and_corruption() {
    let fixtures = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/fixtures/annotations.txt");
    ok(&["validate", "--annotations", fixtures]);

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.txt");
    fs::write(&bad, "@domain furniture\n[DA:REQUEST:DISPREFER:SOFA I hate it]\n").unwrap();
    let out = mmdial(&["validate", "--annotations", p(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("DISPREFER"));

    let corpus = corpus(dir.path(), 4);
    let text = fs::read_to_string(&corpus).unwrap();
    let corrupted = text.replacen("[DA:REQUEST:GET:", "[DA:REQUEST:DISPREFER:", 1);
    assert_ne!(text, corrupted);
    fs::write(&corpus, corrupted).unwrap();
    let out = mmdial(&["validate", "--corpus", p(&corpus)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn parse_prints_canonical_form() {
    let out = ok(&["parse", "--domain", "fashion", "[DA:INFORM:GET:DRESS.price  The dress costs [O.price $99.99 ] .]"]);
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "[DA:INFORM:GET:DRESS.price The dress costs [O.price $99.99] .]");
    let bad = mmdial(&["parse", "--domain", "fashion", "[DA:REQUEST:COUNT:DRESS how many]"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(bad.stdout.is_empty());
}

#[test]
fn simulate_replays_a_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cat = dir.path().join("catalog.json");
    ok(&["gen-catalog", "--domain", "furniture", "--items", "60", "--seed", "1", "--out", p(&cat)]);
    let trace = dir.path().join("trace.jsonl");
    fs::write(
        &trace,
        concat!(
            r#"{"turn":0,"action":"SearchFurniture","arguments":{"filters":[{"op":"equals","attribute":"category","value":"SOFA"}]}}"#,
            "\n",
            r#"{"turn":1,"action":"FocusOnFurniture","arguments":{"position":"left"}}"#,
            "\n",
            r#"{"turn":2,"action":"RotateFurniture","arguments":{"direction":"left"}}"#,
            "\n"
        ),
    )
    .unwrap();
    let out = dir.path().join("sim.jsonl");
    ok(&["simulate", "--catalog", p(&cat), "--trace", p(&trace), "--out", p(&out)]);
    let lines: Vec<Value> = fs::read_to_string(&out)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0]["result"]["status"], "ok");
    assert_eq!(lines[2]["action"], "RotateFurniture");
    assert!(dir.path().join("sim.jsonl.manifest.json").exists());
}

#[test]
fn end_to_end_pipeline() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let corpus = corpus(d, 100);
    let splits = d.join("splits");
    ok(&["splits", "--corpus", p(&corpus), "--seed", "2", "--out-dir", p(&splits)]);
    let config = d.join("train.toml");
    fs::write(&config, "learning_rate = 0.001\nmax_epochs = 15\n").unwrap();
    let model = d.join("model.json");
    ok(&["train", "--corpus-dir", p(&splits), "--config", p(&config), "--out", p(&model)]);
    assert!(d.join("model.json.log.jsonl").exists());

    let train = splits.join("train.json");
    let testdev = splits.join("testdev.json");
    let tfidf = d.join("tfidf.json");
    let fusion = d.join("fusion.json");
    ok(&["predict", "--baseline", "tfidf", "--train", p(&train), "--corpus", p(&testdev), "--out", p(&tfidf)]);
    ok(&["predict", "--model", p(&model), "--train", p(&train), "--corpus", p(&testdev), "--out", p(&fusion)]);

    for pred in [&tfidf, &fusion] {
        let report = d.join("report.json");
        ok(&["evaluate", "--task", "all", "--gold", p(&testdev), "--pred", p(pred), "--out", p(&report)]);
        let r = json(&report);
        for key in ["accuracy", "perplexity", "attribute_accuracy"] {
            assert!(r["action"][key].is_number(), "{key}");
        }
        assert!(r["response"]["bleu4"].is_number());
        for key in ["recall@1", "recall@5", "recall@10", "mean_rank", "mrr"] {
            assert!(r["response"]["retrieval"][key].is_number(), "{key}");
        }
        for key in ["intent_f1", "slot_f1", "coref_f1"] {
            assert!(r["dst"][key].is_number(), "{key}");
        }
        assert!(d.join("report.json.manifest.json").exists());
    }

    // accuracy of the TF-IDF baseline against the majority class of train
    let report = d.join("action.json");
    ok(&["evaluate", "--task", "action", "--gold", p(&testdev), "--pred", p(&tfidf), "--out", p(&report)]);
    let acc = json(&report)["action"]["accuracy"].as_f64().unwrap();
    assert!(json(&report).get("dst").is_none());
    let gold = json(&testdev);
    let mut counts = std::collections::BTreeMap::<String, usize>::new();
    for dialog in json(&train)["dialogs"].as_array().unwrap() {
        for r in dialog["rounds"].as_array().unwrap() {
            *counts.entry(r["action"]["action"].as_str().unwrap().to_string()).or_default() += 1;
        }
    }
    let majority = counts.iter().max_by_key(|(_, c)| **c).unwrap().0.clone();
    let rounds: Vec<&Value> = gold["dialogs"].as_array().unwrap().iter().flat_map(|d| d["rounds"].as_array().unwrap()).collect();
    let rate = rounds.iter().filter(|r| r["action"]["action"] == majority.as_str()).count() as f64 / rounds.len() as f64;
    assert!(acc >= rate, "tfidf {acc} < majority {rate}");

    // gold against itself
    let report = d.join("gold.json");
    ok(&["evaluate", "--task", "dst", "--gold", p(&testdev), "--pred", p(&testdev), "--out", p(&report)]);
    let r = json(&report);
    for key in ["intent_f1", "slot_f1", "coref_f1"] {
        assert_eq!(r["dst"][key].as_f64(), Some(1.0), "{key}");
    }

    // predictions for another split do not line up with the gold rounds
    let out = mmdial(&["evaluate", "--task", "action", "--gold", p(&splits.join("test.json")), "--pred", p(&tfidf), "--out", p(&report)]);
    assert_eq!(out.status.code(), Some(1));

    assert!(started.elapsed().as_secs() < 60, "pipeline took {:?}", started.elapsed());
}
