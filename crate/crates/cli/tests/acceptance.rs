//! Acceptance suite: prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

// a NaN measurement must fail its check, hence the negated comparisons
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use mmdial_cli::{action_rate, evaluate, majority_action, predict_tfidf, Task};
use mmdial_core::datagen::{
    corpus_stats, gen_catalog, gen_corpus, round_bounds, split_corpus, DialogCorpus, GeneratorConfig, DEFAULT_RATIOS,
};
use mmdial_core::environment::*;
use mmdial_core::fusion_model::{
    self, batch_grad, batch_loss, numeric_grad, random_examples, relative_error, Adam, FusionModel, ModelConfig, ModelParams, Vocab,
};
use mmdial_core::label_lang::{fixture_lines, parse, serialize, validate, BeliefFrame, FIXTURES};
use mmdial_core::metrics::{action_metrics, bleu4, dst_metrics, retrieval_metrics, ActionGold};
use mmdial_core::ontology::{Domain, OntologyGraph};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure!(elapsed < limit, "took {elapsed:.2?}, limit {limit:?}");
    Ok(())
}

fn fixtures() -> Outcome {
    let t = Instant::now();
    let g = OntologyGraph::shipped();
    let lines = fixture_lines(FIXTURES);
    ensure!(lines.len() >= 30, "only {} fixtures", lines.len());
    for (domain, line) in &lines {
        let u = parse(line, &g, *domain).map_err(|e| format!("{line}: {e}"))?;
        let diags = validate(&u, &g, *domain);
        ensure!(diags.is_empty(), "{line}: {}", diags[0]);
        let canon = serialize(&u);
        let again = parse(&canon, &g, *domain).map_err(|e| format!("{canon}: {e}"))?;
        ensure!(again == u, "{line}: re-parse of the canonical form differs");
        ensure!(serialize(&again) == canon, "{line}: canonical form is not a fixed point");
    }
    within(t.elapsed(), Duration::from_secs(1))?;
    Ok(format!("{} fixtures in {:.0?}", lines.len(), t.elapsed()))
}

fn ontology_laws() -> Outcome {
    let g = OntologyGraph::shipped();
    let types: Vec<&str> = g.types().map(|n| n.name.as_str()).collect();
    let sub = |a: &str, b: &str| g.is_subtype(a, b).unwrap();
    for a in &types {
        ensure!(sub(a, a), "{a} is not a subtype of itself");
        let ancestors: Vec<&str> = g.ancestors(a).collect();
        for b in &types {
            if !sub(a, b) {
                continue;
            }
            for c in &types {
                ensure!(!sub(b, c) || sub(a, c), "{a} <: {b} <: {c} but not {a} <: {c}");
            }
        }
        if let Some(p) = g.parent(a) {
            let mine: Vec<_> = g.attributes_of(a).unwrap();
            for attr in g.attributes_of(p).unwrap() {
                ensure!(mine.contains(&attr), "{a} does not inherit {}.{}", p, attr.name);
            }
        }
        ensure!(ancestors.first() == Some(a), "{a} is not first among its ancestors");
    }
    for domain in [Domain::Furniture, Domain::Fashion] {
        ensure!(!g.validate_combo("REQUEST", "DISPREFER", domain).unwrap(), "(REQUEST, DISPREFER) accepted in {domain}");
    }
    let acts: Vec<&str> = g.combos().pairs(Domain::Furniture).map(|(a, _)| a).collect();
    for act in acts {
        for activity in ["COUNT", "ROTATE"] {
            ensure!(!g.validate_combo(act, activity, Domain::Fashion).unwrap(), "fashion accepts ({act}, {activity})");
        }
    }
    let u = mmdial_core::label_lang::parse_syntax("[DA:REQUEST:DISPREFER:SOFA no]").unwrap();
    ensure!(!validate(&u, &g, Domain::Furniture).is_empty(), "annotation with (REQUEST, DISPREFER) validates");
    Ok(format!("{} types", types.len()))
}

fn random_filters(rng: &mut ChaCha8Rng, catalog: &Catalog) -> Vec<Filter> {
    let mut out = Vec::new();
    let item = catalog.items().choose(rng).unwrap();
    if rng.random_bool(0.6) {
        out.push(Filter::Equals {
            attribute: "category".into(),
            value: item.category().unwrap().into(),
        });
    }
    if rng.random_bool(0.4) {
        out.push(Filter::Equals {
            attribute: "color".into(),
            value: item.text("color").unwrap().into(),
        });
    }
    if rng.random_bool(0.3) {
        out.push(Filter::Range {
            attribute: "price".into(),
            min: rng.random_bool(0.5).then(|| rng.random_range(0.0..300.0)),
            max: Some(rng.random_range(50.0..2000.0)),
        });
    }
    out
}

fn random_call(rng: &mut ChaCha8Rng, domain: Domain, catalog: &Catalog) -> ApiCall {
    let item = catalog.items().choose(rng).unwrap().item_id.clone();
    let attribute = ["price", "color", "material", "brand", "bogus"].choose(rng).unwrap().to_string();
    match (domain, rng.random_range(0..8)) {
        (Domain::Furniture, 0) => ApiCall::SearchFurniture {
            filters: random_filters(rng, catalog),
        },
        (Domain::Furniture, 1) => ApiCall::FocusOnFurniture {
            position: *Position::ALL.choose(rng).unwrap(),
        },
        (Domain::Furniture, 2 | 3) => ApiCall::RotateFurniture {
            direction: *RotateDirection::ALL.choose(rng).unwrap(),
        },
        (Domain::Furniture, 4) => ApiCall::NavigateCarousel {
            direction: if rng.random_bool(0.5) { NavDirection::Next } else { NavDirection::Previous },
        },
        (Domain::Fashion, 0 | 1) => ApiCall::SearchDatabase {
            filters: random_filters(rng, catalog),
        },
        (Domain::Fashion, 2) => ApiCall::SearchMemory {
            filters: random_filters(rng, catalog),
        },
        (Domain::Fashion, 3) => ApiCall::RotateFurniture {
            direction: RotateDirection::Left,
        },
        (_, 5) => ApiCall::SpecifyInfo {
            item_id: item,
            attributes: vec![attribute],
        },
        (_, 6) => ApiCall::AddToCart {
            item_id: rng.random_bool(0.5).then_some(item),
        },
        _ => ApiCall::None,
    }
}

fn inverse_nav(d: NavDirection) -> NavDirection {
    match d {
        NavDirection::Next => NavDirection::Previous,
        NavDirection::Previous => NavDirection::Next,
    }
}

fn check_step(state: &EnvState, call: &ApiCall, catalog: &Catalog) -> Result<(EnvState, usize), String> {
    let (next, result) = apply(state, call, catalog);
    ensure!(apply(state, call, catalog) == (next.clone(), result.clone()), "apply is not pure for {call:?}");
    ensure!(!result.is_error() || next == *state, "{call:?} failed but changed the state");
    ensure!(next.is_valid(), "{call:?} produced an invalid state");
    let mut checked = 0;
    match call {
        ApiCall::SearchFurniture { filters } => {
            let brute: Vec<ItemId> = catalog
                .items()
                .iter()
                .filter(|it| filters.iter().all(|f| f.matches(it)))
                .map(|it| it.item_id.clone())
                .collect();
            let EnvState::Furniture(FurnitureState {
                mode: FurnitureMode::Carousel(c),
                ..
            }) = &next
            else {
                return Err("search did not leave a carousel".into());
            };
            ensure!(c.results == brute, "search differs from a brute-force filter");
            checked += 1;
        }
        ApiCall::RotateFurniture { direction } if !result.is_error() => {
            if matches!(direction, RotateDirection::Left | RotateDirection::Right) {
                let mut s = state.clone();
                for _ in 0..4 {
                    s = apply(&s, call, catalog).0;
                }
                ensure!(s == *state, "four {direction:?} rotations are not the identity");
                checked += 1;
            }
        }
        ApiCall::NavigateCarousel { direction } if result.status == ApiStatus::Ok => {
            let back = apply(&next, &ApiCall::NavigateCarousel { direction: inverse_nav(*direction) }, catalog).0;
            // navigation leaves focus mode, so compare against the carousel it restored
            let EnvState::Furniture(s) = state else { unreachable!() };
            let carousel = match &s.mode {
                FurnitureMode::Carousel(c) => c.clone(),
                FurnitureMode::Focused { saved_carousel, .. } => saved_carousel.clone(),
            };
            let expected = EnvState::Furniture(FurnitureState {
                mode: FurnitureMode::Carousel(carousel),
                cart: s.cart.clone(),
            });
            ensure!(back == expected, "{direction:?} then its inverse does not return");
            checked += 1;
        }
        ApiCall::SearchDatabase { filters } if !result.is_error() => {
            // the shown item satisfies as many filters as any unseen item can
            let (EnvState::Fashion(before), EnvState::Fashion(after)) = (state, &next) else { unreachable!() };
            let score = |it: &CatalogItem| filters.iter().filter(|f| f.matches(it)).count();
            let best = catalog
                .items()
                .iter()
                .filter(|it| it.item_id != before.current && !before.memory.contains(&it.item_id))
                .map(score)
                .max()
                .unwrap_or(0);
            ensure!(score(catalog.get(&after.current).unwrap()) == best, "SearchDatabase did not return a best match");
            checked += 1;
        }
        _ => {}
    }
    Ok((next, checked))
}

fn environment_laws() -> Outcome {
    let t = Instant::now();
    let mut checked = 0;
    for domain in [Domain::Furniture, Domain::Fashion] {
        let catalog = gen_catalog(domain, 60, 17).unwrap();
        for seq in 0..500u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seq);
            let mut state = match domain {
                Domain::Furniture => EnvState::furniture(),
                Domain::Fashion => {
                    let ids: Vec<ItemId> = catalog.items().iter().map(|i| i.item_id.clone()).collect();
                    EnvState::fashion(ids[0].clone(), ids[1..4].to_vec(), &catalog).unwrap()
                }
            };
            let calls: Vec<ApiCall> = (0..rng.random_range(1..30)).map(|_| random_call(&mut rng, domain, &catalog)).collect();
            let start = state.clone();
            for call in &calls {
                let (next, n) = check_step(&state, call, &catalog).map_err(|e| format!("{domain} sequence {seq}: {e}"))?;
                checked += n;
                state = next;
            }
            let trace = replay(&start, &calls, &catalog);
            ensure!(trace.last().map(|s| &s.0) == Some(&state), "{domain} sequence {seq}: replay differs from folding apply");
        }
    }
    within(t.elapsed(), Duration::from_secs(5))?;
    Ok(format!("1000 sequences, {checked} law instances, {:.2?}", t.elapsed()))
}

fn close(x: f64, want: f64, tol: f64, what: &str) -> Result<(), String> {
    ensure!((x - want).abs() <= tol, "{what}: {x} vs {want}");
    Ok(())
}

fn metric_oracles() -> Outcome {
    let labels = ["A", "B", "C", "D", "E", "F", "G"];
    let uniform: BTreeMap<String, f64> = labels.iter().map(|l| (l.to_string(), 1.0 / 7.0)).collect();
    let gold = |a: &str| ActionGold {
        action: a.into(),
        attributes: vec![],
    };
    let r = action_metrics(&[gold("C")], &[uniform], &[BTreeMap::new()]).map_err(|e| e.to_string())?;
    close(r.perplexity.0, 7.0, 1e-9, "uniform perplexity")?;
    let d = |p: f64| BTreeMap::from([("A".to_string(), p), ("B".to_string(), 1.0 - p)]);
    let r = action_metrics(&[gold("A"), gold("A")], &[d(0.5), d(0.25)], &[BTreeMap::new(), BTreeMap::new()]).map_err(|e| e.to_string())?;
    close(r.perplexity.0, 2.828427, 1e-6, "two-round perplexity")?;

    let refs: Vec<String> = ["show me the red sofa", "it costs forty dollars", "added to your cart"].map(String::from).to_vec();
    close(bleu4(&refs, &refs).map_err(|e| e.to_string())?, 1.0, 1e-12, "identical BLEU-4")?;

    let r = retrieval_metrics(&[1, 100]).map_err(|e| e.to_string())?;
    close(r.recall_at_1.0, 0.5, 1e-12, "recall@1")?;
    close(r.mean_rank.0, 50.5, 1e-12, "mean rank")?;
    close(r.mrr.0, 0.505, 1e-12, "mrr")?;

    let g = OntologyGraph::shipped();
    let catalog = gen_catalog(Domain::Furniture, 100, 8).unwrap();
    let corpus = gen_corpus(&catalog, &GeneratorConfig::new(Domain::Furniture, 40, 8), &g, "catalog.json").unwrap();
    let frames: Vec<BeliefFrame> = corpus.rounds().map(|(_, _, r)| r.belief.clone()).collect();
    let r = dst_metrics(&frames, &frames).map_err(|e| e.to_string())?;
    for (name, f1) in [("intent", r.intent_f1.0), ("slot", r.slot_f1.0), ("coref", r.coref_f1.0)] {
        close(f1, 1.0, 0.0, &format!("gold-vs-gold {name} F1"))?;
    }
    // keep every other slot of each frame, from frames with an even slot count
    let even: Vec<BeliefFrame> = frames.iter().filter(|f| !f.slots.is_empty() && f.slots.len() % 2 == 0).cloned().collect();
    ensure!(!even.is_empty(), "no frames with an even number of slots");
    let halved: Vec<BeliefFrame> = even
        .iter()
        .map(|f| BeliefFrame {
            slots: f.slots.iter().step_by(2).cloned().collect(),
            ..f.clone()
        })
        .collect();
    let r = dst_metrics(&even, &halved).map_err(|e| e.to_string())?;
    close(r.slot_recall.0, 0.5, 1e-9, "half-slot-drop recall")?;
    close(r.slot_precision.0, 1.0, 1e-9, "half-slot-drop precision")?;
    Ok("perplexity, BLEU-4, retrieval and DST oracles".into())
}

fn gradient_check() -> Outcome {
    let t = Instant::now();
    let cfg = ModelConfig {
        d_h: 8,
        ..ModelConfig::for_domain(Domain::Furniture)
    };
    let vocab_size = 30;
    let mut worst = 0.0f64;
    for init in 0..10u64 {
        let params = ModelParams::init(&cfg, vocab_size, 100 + init);
        let batch = random_examples(&cfg, vocab_size, 4, 200 + init);
        let (_, grad) = batch_grad(&cfg, &params, &batch);
        let mut rng = ChaCha8Rng::seed_from_u64(300 + init);
        let sizes: Vec<usize> = params.slices().iter().map(|s| s.len()).collect();
        for _ in 0..100 {
            // pick a tensor first so small tensors are sampled as often as the embeddings
            let tensor = rng.random_range(0..sizes.len());
            let offset = rng.random_range(0..sizes[tensor]);
            let numeric = numeric_grad(&cfg, &params, &batch, tensor, offset, 1e-4);
            let analytic = grad.slices()[tensor][offset];
            worst = worst.max(relative_error(analytic, numeric));
        }
    }
    ensure!(worst < 1e-4, "max relative error {worst:e}");
    within(t.elapsed(), Duration::from_secs(10))?;
    Ok(format!("max relative error {worst:.2e} over 1000 parameters, {:.2?}", t.elapsed()))
}

fn learning_sanity() -> Outcome {
    let t = Instant::now();
    let g = OntologyGraph::shipped();
    let domain = Domain::Furniture;
    let catalog = gen_catalog(domain, 179, 1).unwrap();
    let corpus = gen_corpus(&catalog, &GeneratorConfig::new(domain, 500, 7), &g, "catalog.json").unwrap();
    let [train, dev, testdev, _] = split_corpus(&corpus, DEFAULT_RATIOS, 3).unwrap();

    // overfit ten real rounds
    let cfg = ModelConfig {
        learning_rate: 1e-2,
        min_count: 1,
        ..ModelConfig::for_domain(domain)
    };
    let few = DialogCorpus {
        dialogs: train.dialogs[..2].to_vec(),
        ..train.clone()
    };
    let vocab = Vocab::build(few.rounds().map(|(_, _, r)| r.user_utterance.as_str()), 1);
    let model = FusionModel::new(cfg.clone(), vocab).map_err(|e| e.to_string())?;
    let batch: Vec<_> = model.examples(&few, &catalog).map_err(|e| e.to_string())?.into_iter().take(10).collect();
    ensure!(batch.len() == 10, "only {} rounds for the overfit batch", batch.len());
    let mut params = model.params.clone();
    let mut adam = Adam::new(&params, cfg.learning_rate, cfg.clip);
    let mut steps = None;
    for step in 1..=500 {
        let (_, grad) = batch_grad(&cfg, &params, &batch);
        adam.step(&mut params, &grad);
        if batch_loss(&cfg, &params, &batch) < 0.05 {
            steps = Some(step);
            break;
        }
    }
    let steps = steps.ok_or_else(|| format!("loss {:.4} after 500 steps", batch_loss(&cfg, &params, &batch)))?;

    let (fusion, _) = fusion_model::train(ModelConfig::for_domain(domain), &train, &dev, &catalog).map_err(|e| e.to_string())?;
    let fusion_acc = fusion.accuracy(&fusion.examples(&testdev, &catalog).map_err(|e| e.to_string())?);
    let majority = majority_action(&train).ok_or("empty train split")?;
    let majority_acc = action_rate(&testdev, &majority);
    let preds = predict_tfidf(&train, &testdev, 0).map_err(|e| e.to_string())?;
    let report = evaluate(Task::Action, &testdev, &preds).map_err(|e| e.to_string())?;
    let tfidf_acc = report.action.ok_or("no action report")?.accuracy.0;
    let summary = format!(
        "overfit in {steps} steps; testdev accuracy fusion {fusion_acc:.3}, tfidf {tfidf_acc:.3}, majority {majority_acc:.3}; {:.1?}",
        t.elapsed()
    );
    ensure!(fusion_acc >= tfidf_acc + 0.05 && fusion_acc >= majority_acc + 0.05, "{summary}");
    within(t.elapsed(), Duration::from_secs(300))?;
    Ok(summary)
}

fn calibration() -> Outcome {
    let g = OntologyGraph::shipped();
    let mut parts = Vec::new();
    for (domain, target) in [(Domain::Furniture, 7.62), (Domain::Fashion, 5.39)] {
        let catalog = gen_catalog(domain, 179, 11).unwrap();
        let corpus = gen_corpus(&catalog, &GeneratorConfig::new(domain, 500, 11), &g, "catalog.json").unwrap();
        let stats = corpus_stats(&corpus);
        ensure!((stats.mean_rounds - target).abs() <= 0.5, "{domain} mean rounds {:.2}, target {target}", stats.mean_rounds);
        let (lo, hi) = round_bounds(domain);
        ensure!(stats.min_rounds >= lo && stats.max_rounds <= hi, "{domain} rounds span [{}, {}]", stats.min_rounds, stats.max_rounds);
        let inform = stats.dialog_act_share.get("INFORM").copied().unwrap_or(0.0);
        ensure!((0.35..=0.60).contains(&inform), "{domain} INFORM share {inform:.3}");
        for d in &corpus.dialogs {
            let trace = replay(&d.initial_state, &d.actions(), &catalog);
            let mut state = d.initial_state.clone();
            for (i, (r, (next, result))) in d.rounds.iter().zip(&trace).enumerate() {
                ensure!(context_of(&state) == r.context, "{} round {i}: replayed context differs", d.dialog_id);
                ensure!(*result == r.result, "{} round {i}: replayed result differs", d.dialog_id);
                state = next.clone();
            }
        }
        parts.push(format!("{domain} mean {:.2} INFORM {:.2}", stats.mean_rounds, inform));
    }
    Ok(parts.join("; "))
}

fn run_pipeline(dir: &Path, threads: &str) -> Result<(), String> {
    let bin = env!("CARGO_BIN_EXE_mmdial");
    let p = |name: &str| dir.join(name).to_str().unwrap().to_string();
    fs::write(dir.join("train.toml"), "max_epochs = 4\nlearning_rate = 0.001\n").unwrap();
    let steps: Vec<Vec<String>> = [
        "gen-catalog --domain furniture --items 120 --seed 5 --out {catalog.json}",
        "gen-dialogs --catalog {catalog.json} --dialogs 120 --seed 5 --out {corpus.json}",
        "splits --corpus {corpus.json} --seed 5 --out-dir {splits}",
        "train --corpus-dir {splits} --config {train.toml} --out {model.json}",
        "predict --baseline tfidf --train {splits/train.json} --corpus {splits/testdev.json} --seed 5 --out {tfidf.json}",
        "predict --model {model.json} --train {splits/train.json} --corpus {splits/testdev.json} --seed 5 --out {fusion.json}",
        "evaluate --gold {splits/testdev.json} --pred {tfidf.json} --out {report_tfidf.json}",
        "evaluate --gold {splits/testdev.json} --pred {fusion.json} --out {report_fusion.json}",
    ]
    .iter()
    .map(|line| {
        line.split(' ')
            .map(|w| match w.strip_prefix('{').and_then(|w| w.strip_suffix('}')) {
                Some(name) => p(name),
                None => w.to_string(),
            })
            .collect()
    })
    .collect();
    for args in steps {
        let out = Command::new(bin)
            .args(&args)
            .env("RAYON_NUM_THREADS", threads)
            .output()
            .map_err(|e| e.to_string())?;
        ensure!(out.status.success(), "{} failed: {}", args[0], String::from_utf8_lossy(&out.stderr));
    }
    Ok(())
}

/// Every non-manifest file under `dir`, by relative path.
fn outputs(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if !path.to_string_lossy().ends_with(".manifest.json") {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Outcome {
    let dirs: Vec<tempfile::TempDir> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    // two concurrent multi-threaded runs and one single-threaded run
    let results: Vec<Result<(), String>> = std::thread::scope(|s| {
        let handles: Vec<_> = dirs
            .iter()
            .zip(["4", "4", "1"])
            .map(|(d, threads)| s.spawn(move || run_pipeline(d.path(), threads)))
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    for r in results {
        r?;
    }
    let base = outputs(dirs[0].path());
    ensure!(base.len() >= 12, "only {} outputs", base.len());
    for d in &dirs[1..] {
        let other = outputs(d.path());
        ensure!(other.keys().eq(base.keys()), "different output files");
        for (name, bytes) in &base {
            ensure!(other[name] == *bytes, "{name} differs between runs");
        }
    }
    let library = [
        serde_json::to_string(&gen_catalog(Domain::Fashion, 90, 3).unwrap()).unwrap(),
        serde_json::to_string(&gen_catalog(Domain::Fashion, 90, 3).unwrap()).unwrap(),
    ];
    ensure!(library[0] == library[1], "catalog generation differs between calls");
    Ok(format!("{} files identical across 3 runs (4, 4 and 1 threads)", base.len()))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("golden fixtures", fixtures),
        ("ontology laws", ontology_laws),
        ("environment laws", environment_laws),
        ("metric oracles", metric_oracles),
        ("gradient check", gradient_check),
        ("learning sanity", learning_sanity),
        ("generator calibration", calibration),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("criterion {}: PASS {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
