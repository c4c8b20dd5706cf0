//! Pipeline glue behind the `mmdial` binary: file formats, run manifests,
//! prediction and evaluation drivers.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context as _};
use mmdial_core::baselines::{build_pools, rank_candidates, retrieval_index, round_document, DstBaseline, TfidfActionModel, POOL_SIZE};
use mmdial_core::datagen::DialogCorpus;
use mmdial_core::environment::{actions_for, Catalog};
use mmdial_core::fusion_model::{attribute_heads, FusionModel, ModelConfig, Nonlinearity};
use mmdial_core::metrics::{
    action_metrics, bleu4, dst_metrics, retrieval_metrics, ActionGold, PredictionFile, Report, ResponseReport, RoundPrediction,
    PREDICTION_SCHEMA_VERSION,
};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Failure classes, mapped to the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unreadable inputs, configuration outside its invariants.
    Usage(anyhow::Error),
    /// Inputs were read but failed a check.
    Validation(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Validation(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(e) | CliError::Validation(e) => write!(f, "{e:#}"),
        }
    }
}

pub fn usage(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Usage(e.into())
}

pub fn invalid(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Validation(e.into())
}

pub type CliResult<T> = Result<T, CliError>;

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(usage)?;
    serde_json::from_str(&text)
        .with_context(|| format!("{} does not match its schema", path.display()))
        .map_err(invalid)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(usage)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).map_err(usage)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display())).map_err(usage)
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display())).map_err(usage)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Provenance record written next to every output as `<out>.manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    /// Input path -> SHA-256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub version: String,
    pub timestamp: String,
}

impl RunManifest {
    pub fn new(command: Vec<String>, inputs: &[&Path], seed: Option<u64>) -> CliResult<Self> {
        let mut digests = BTreeMap::new();
        for p in inputs {
            digests.insert(p.display().to_string(), sha256_file(p)?);
        }
        Ok(Self {
            command,
            inputs: digests,
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        })
    }

    pub fn path_for(out: &Path) -> PathBuf {
        let mut name = out.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        out.with_file_name(name)
    }

    pub fn write_for(&self, out: &Path) -> CliResult<()> {
        write_json(&Self::path_for(out), self)
    }
}

/// Catalog a corpus refers to: an explicit path wins, otherwise the corpus's
/// `catalog_file` next to the corpus file.
pub fn catalog_path(corpus_path: &Path, corpus: &DialogCorpus, explicit: Option<&Path>) -> PathBuf {
    match explicit {
        Some(p) => p.to_path_buf(),
        None => corpus_path.parent().unwrap_or(Path::new(".")).join(&corpus.catalog_file),
    }
}

/// Optional keys of the `train --config` file. Anything not given keeps the
/// domain default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: Option<u64>,
    pub d_w: Option<usize>,
    pub d_h: Option<usize>,
    pub d_v: Option<usize>,
    pub hash_buckets: Option<usize>,
    pub min_count: Option<usize>,
    pub learning_rate: Option<f64>,
    pub clip: Option<f64>,
    pub nonlinearity: Option<Nonlinearity>,
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
}

impl TrainConfig {
    pub fn apply(&self, mut cfg: ModelConfig) -> ModelConfig {
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { cfg.$f = v; })* };
        }
        set!(seed, d_w, d_h, d_v, hash_buckets, min_count, learning_rate, clip, nonlinearity, batch_size, max_epochs, patience);
        cfg
    }
}

/// Most frequent action of a corpus, ties broken by name.
pub fn majority_action(corpus: &DialogCorpus) -> Option<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for (_, _, r) in corpus.rounds() {
        *counts.entry(r.action.name()).or_default() += 1;
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(a.0)))
        .map(|(k, _)| k.to_string())
}

/// Share of `corpus` rounds whose action is `action`.
pub fn action_rate(corpus: &DialogCorpus, action: &str) -> f64 {
    let n = corpus.n_rounds();
    if n == 0 {
        return 0.0;
    }
    corpus.rounds().filter(|(_, _, r)| r.action.name() == action).count() as f64 / n as f64
}

/// Rounds of history the retrieval baseline puts in its query.
pub const RETRIEVAL_WINDOW: usize = 1;

/// Fills `rounds` with TF-IDF retrieval results and baseline belief frames.
/// Pools draw their distractors from `corpus` and `train`.
fn add_response_and_dst(
    rounds: &mut [RoundPrediction],
    corpus: &DialogCorpus,
    train: &DialogCorpus,
    pool_seed: u64,
) -> CliResult<()> {
    let pools = build_pools(corpus, &[train], pool_seed).map_err(invalid)?;
    let index = retrieval_index(train).map_err(invalid)?;
    let dst = DstBaseline::fit(train).map_err(invalid)?;
    let located: Vec<(usize, usize)> = corpus
        .dialogs
        .iter()
        .enumerate()
        .flat_map(|(di, d)| (0..d.rounds.len()).map(move |ri| (di, ri)))
        .collect();
    for ((pred, pool), (di, ri)) in rounds.iter_mut().zip(&pools).zip(located) {
        let round = &corpus.dialogs[di].rounds[ri];
        let (scores, order) = rank_candidates(&round_document(corpus, di, ri, RETRIEVAL_WINDOW), pool, &index);
        pred.response = Some(pool.candidates[order[0]].clone());
        pred.candidate_scores = Some(scores);
        pred.ground_truth_index = Some(pool.ground_truth);
        pred.dst_frame = Some(dst.predict(&round.user_utterance, &round.context));
    }
    Ok(())
}

fn empty_rounds(corpus: &DialogCorpus) -> Vec<RoundPrediction> {
    corpus
        .rounds()
        .map(|(d, turn, _)| RoundPrediction {
            dialog_id: d.dialog_id.clone(),
            turn,
            action_distribution: BTreeMap::new(),
            attribute_predictions: BTreeMap::new(),
            candidate_scores: None,
            ground_truth_index: None,
            response: None,
            dst_frame: None,
        })
        .collect()
}

fn require_rounds(corpus: &DialogCorpus) -> CliResult<()> {
    if corpus.n_rounds() == 0 {
        return Err(invalid(anyhow!("corpus has no rounds")));
    }
    Ok(())
}

/// TF-IDF baselines for all three tasks.
pub fn predict_tfidf(train: &DialogCorpus, corpus: &DialogCorpus, pool_seed: u64) -> CliResult<PredictionFile> {
    require_rounds(corpus)?;
    let model = TfidfActionModel::fit(train, attribute_heads(corpus.domain), 0).map_err(invalid)?;
    let mut rounds = empty_rounds(corpus);
    let docs = corpus
        .dialogs
        .iter()
        .enumerate()
        .flat_map(|(di, d)| (0..d.rounds.len()).map(move |ri| (di, ri)))
        .map(|(di, ri)| round_document(corpus, di, ri, model.window));
    for (pred, doc) in rounds.iter_mut().zip(docs) {
        let mut dist: BTreeMap<String, f64> = actions_for(corpus.domain).iter().map(|a| (a.to_string(), 0.0)).collect();
        dist.extend(model.action_distribution(&doc));
        pred.action_distribution = dist;
        pred.attribute_predictions = model.attribute_probabilities(&doc);
    }
    add_response_and_dst(&mut rounds, corpus, train, pool_seed)?;
    Ok(PredictionFile {
        schema_version: PREDICTION_SCHEMA_VERSION,
        predictor: "tfidf".into(),
        rounds,
    })
}

/// Fusion model actions; responses and belief frames come from the TF-IDF
/// baselines when a train split is given.
pub fn predict_fusion(
    model: &FusionModel,
    catalog: &Catalog,
    corpus: &DialogCorpus,
    train: Option<&DialogCorpus>,
    pool_seed: u64,
) -> CliResult<PredictionFile> {
    require_rounds(corpus)?;
    if model.config.domain != corpus.domain {
        return Err(invalid(anyhow!("model is for {} but corpus is {}", model.config.domain, corpus.domain)));
    }
    let mut rounds = empty_rounds(corpus);
    for (pred, (_, _, r)) in rounds.iter_mut().zip(corpus.rounds()) {
        let p = model.predict(&r.user_utterance, &r.context, catalog);
        pred.action_distribution = model.config.actions.iter().cloned().zip(p.action_probs.iter().copied()).collect();
        pred.attribute_predictions = model.attribute_map(&p);
    }
    if let Some(train) = train {
        add_response_and_dst(&mut rounds, corpus, train, pool_seed)?;
    }
    Ok(PredictionFile {
        schema_version: PREDICTION_SCHEMA_VERSION,
        predictor: "fusion".into(),
        rounds,
    })
}

/// Predictions that copy the gold annotations, with a pool in which only
/// the gold response scores.
pub fn gold_predictions(corpus: &DialogCorpus) -> PredictionFile {
    let heads = attribute_heads(corpus.domain);
    let rounds = corpus
        .rounds()
        .map(|(d, turn, r)| {
            let args = r.action.argument_attributes();
            let mut scores = vec![0.0; POOL_SIZE];
            scores[0] = 1.0;
            RoundPrediction {
                dialog_id: d.dialog_id.clone(),
                turn,
                action_distribution: BTreeMap::from([(r.action.name().to_string(), 1.0)]),
                attribute_predictions: heads
                    .iter()
                    .map(|h| (h.to_string(), if args.iter().any(|a| a == h) { 1.0 } else { 0.0 }))
                    .collect(),
                candidate_scores: Some(scores),
                ground_truth_index: Some(0),
                response: Some(r.assistant_utterance.clone()),
                dst_frame: Some(r.belief.clone()),
            }
        })
        .collect();
    PredictionFile {
        schema_version: PREDICTION_SCHEMA_VERSION,
        predictor: "gold".into(),
        rounds,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Action,
    Response,
    Dst,
    All,
}

impl std::str::FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "action" => Ok(Task::Action),
            "response" => Ok(Task::Response),
            "dst" => Ok(Task::Dst),
            "all" => Ok(Task::All),
            other => Err(format!("unknown task `{other}` (expected action|response|dst|all)")),
        }
    }
}

/// Scores `pred` against `gold`. Every gold round needs exactly one
/// prediction, matched on (dialog id, turn).
pub fn evaluate(task: Task, gold: &DialogCorpus, pred: &PredictionFile) -> anyhow::Result<Report> {
    let mut by_key: BTreeMap<(&str, usize), &RoundPrediction> = BTreeMap::new();
    for p in &pred.rounds {
        if by_key.insert((p.dialog_id.as_str(), p.turn), p).is_some() {
            bail!("duplicate prediction for {} turn {}", p.dialog_id, p.turn);
        }
    }
    let mut aligned = Vec::with_capacity(gold.n_rounds());
    for (d, turn, r) in gold.rounds() {
        let p = by_key
            .remove(&(d.dialog_id.as_str(), turn))
            .ok_or_else(|| anyhow!("no prediction for {} turn {}", d.dialog_id, turn))?;
        aligned.push((r, p));
    }
    if let Some(((id, turn), _)) = by_key.into_iter().next() {
        bail!("prediction for {id} turn {turn} has no gold round");
    }
    if aligned.is_empty() {
        bail!("gold corpus has no rounds");
    }
    let mut report = Report::new(pred.predictor.clone());
    if matches!(task, Task::Action | Task::All) {
        let heads = attribute_heads(gold.domain);
        let golds: Vec<ActionGold> = aligned
            .iter()
            .map(|(r, _)| {
                let args = r.action.argument_attributes();
                ActionGold {
                    action: r.action.name().to_string(),
                    attributes: if r.action.takes_attributes() {
                        heads.iter().map(|h| (h.to_string(), args.iter().any(|a| a == h))).collect()
                    } else {
                        Vec::new()
                    },
                }
            })
            .collect();
        let dists: Vec<_> = aligned.iter().map(|(_, p)| p.action_distribution.clone()).collect();
        let attrs: Vec<_> = aligned.iter().map(|(_, p)| p.attribute_predictions.clone()).collect();
        report.action = Some(action_metrics(&golds, &dists, &attrs)?);
    }
    if matches!(task, Task::Response | Task::All) {
        let mut refs = Vec::new();
        let mut hyps = Vec::new();
        let mut ranks = Vec::new();
        for (r, p) in &aligned {
            let missing = |what| anyhow!("{} turn {} lacks {what}", p.dialog_id, p.turn);
            refs.push(r.assistant_utterance.clone());
            hyps.push(p.response.clone().ok_or_else(|| missing("a response"))?);
            let scores = p.candidate_scores.as_ref().ok_or_else(|| missing("candidate scores"))?;
            let gt = p.ground_truth_index.ok_or_else(|| missing("a ground-truth index"))?;
            if scores.len() != POOL_SIZE || gt >= POOL_SIZE {
                bail!("{} turn {}: candidate pool must have {POOL_SIZE} scores", p.dialog_id, p.turn);
            }
            ranks.push(mmdial_core::baselines::ground_truth_rank(scores, gt));
        }
        report.response = Some(ResponseReport {
            bleu4: bleu4(&refs, &hyps)?.into(),
            retrieval: retrieval_metrics(&ranks)?,
        });
    }
    if matches!(task, Task::Dst | Task::All) {
        let golds: Vec<_> = aligned.iter().map(|(r, _)| r.belief.clone()).collect();
        let preds = aligned
            .iter()
            .map(|(_, p)| p.dst_frame.clone().ok_or_else(|| anyhow!("{} turn {} lacks a belief frame", p.dialog_id, p.turn)))
            .collect::<anyhow::Result<Vec<_>>>()?;
        report.dst = Some(dst_metrics(&golds, &preds)?);
    }
    Ok(report)
}
