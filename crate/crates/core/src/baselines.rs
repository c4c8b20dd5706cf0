//! Non-neural reference predictors: a TF-IDF action classifier, TF-IDF
//! response retrieval over fixed candidate pools, and a nearest-neighbour
//! belief tracker.

use std::collections::{BTreeMap, HashMap};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::DialogCorpus;
use crate::environment::{ApiCall, ItemId, MultimodalContext, UnitTag};
use crate::label_lang::{BeliefFrame, CorefEntry, IntentLabel, SlotEntry};
use crate::tokenize::tokenize;

pub const POOL_SIZE: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("cannot build an index from an empty corpus")]
    EmptyCorpus,
    #[error("need at least {POOL_SIZE} distinct assistant utterances, found {0}")]
    TooFewCandidates(usize),
}

/// Sparse TF-IDF vector, L2-normalised, sorted by term id.
pub type SparseVec = Vec<(usize, f64)>;

pub fn cosine(a: &SparseVec, b: &SparseVec) -> f64 {
    let (mut i, mut j, mut dot) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                dot += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    dot
}

fn add_scaled(acc: &mut BTreeMap<usize, f64>, v: &SparseVec, k: f64) {
    for (t, x) in v {
        *acc.entry(*t).or_default() += k * x;
    }
}

fn normalise(mut v: SparseVec) -> SparseVec {
    let n = v.iter().map(|(_, x)| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|(_, x)| *x /= n);
    }
    v
}

/// Term statistics of the training documents plus per-label centroids.
#[derive(Debug, Clone, PartialEq)]
pub struct TfidfIndex {
    pub terms: HashMap<String, usize>,
    pub idf: Vec<f64>,
    pub n_docs: usize,
    pub labels: Vec<String>,
    pub centroids: Vec<SparseVec>,
}

impl TfidfIndex {
    /// Fits idf on `docs` (`idf = ln((N+1)/(df+1)) + 1`) and averages the
    /// normalised document vectors of each label.
    pub fn fit(docs: &[(String, String)]) -> Result<Self, BaselineError> {
        if docs.is_empty() {
            return Err(BaselineError::EmptyCorpus);
        }
        let mut terms: HashMap<String, usize> = HashMap::new();
        let mut df: Vec<usize> = Vec::new();
        for (text, _) in docs {
            let mut seen: Vec<String> = tokenize(text);
            seen.sort();
            seen.dedup();
            for t in seen {
                let id = *terms.entry(t).or_insert_with(|| {
                    df.push(0);
                    df.len() - 1
                });
                df[id] += 1;
            }
        }
        let n = docs.len();
        let idf = df
            .iter()
            .map(|d| ((n as f64 + 1.0) / (*d as f64 + 1.0)).ln() + 1.0)
            .collect();
        let mut index = Self {
            terms,
            idf,
            n_docs: n,
            labels: Vec::new(),
            centroids: Vec::new(),
        };
        let mut labels: Vec<String> = docs.iter().map(|(_, l)| l.clone()).collect();
        labels.sort();
        labels.dedup();
        let mut sums = vec![BTreeMap::new(); labels.len()];
        let mut counts = vec![0usize; labels.len()];
        for (text, label) in docs {
            let k = labels.binary_search(label).expect("label collected above");
            add_scaled(&mut sums[k], &index.vectorize(text), 1.0);
            counts[k] += 1;
        }
        index.centroids = sums
            .into_iter()
            .zip(&counts)
            .map(|(s, c)| s.into_iter().map(|(t, x)| (t, x / *c as f64)).collect())
            .collect();
        index.labels = labels;
        Ok(index)
    }

    /// Raw-count tf times idf, L2-normalised; unseen tokens are ignored.
    pub fn vectorize(&self, text: &str) -> SparseVec {
        let mut tf: BTreeMap<usize, f64> = BTreeMap::new();
        for t in tokenize(text) {
            if let Some(id) = self.terms.get(&t) {
                *tf.entry(*id).or_default() += 1.0;
            }
        }
        normalise(tf.into_iter().map(|(t, c)| (t, c * self.idf[t])).collect())
    }

    /// Softmax over cosine similarities to the label centroids. An empty or
    /// all-unknown utterance gives the uniform distribution.
    pub fn classify(&self, text: &str) -> Vec<f64> {
        let v = self.vectorize(text);
        let sims: Vec<f64> = self.centroids.iter().map(|c| cosine(&v, c)).collect();
        let m = sims.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = sims.iter().map(|s| (s - m).exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|x| x / z).collect()
    }
}

/// Document text for a round: the current user utterance, optionally
/// preceded by up to `window` earlier rounds of both speakers.
pub fn round_document(corpus: &DialogCorpus, dialog: usize, round: usize, window: usize) -> String {
    let d = &corpus.dialogs[dialog];
    let mut parts = Vec::new();
    for r in &d.rounds[round.saturating_sub(window)..round] {
        parts.push(r.user_utterance.as_str());
        parts.push(r.assistant_utterance.as_str());
    }
    parts.push(&d.rounds[round].user_utterance);
    parts.join(" ")
}

fn documents(corpus: &DialogCorpus, window: usize) -> Vec<(usize, usize, String)> {
    corpus
        .dialogs
        .iter()
        .enumerate()
        .flat_map(|(di, d)| (0..d.rounds.len()).map(move |ri| (di, ri)))
        .map(|(di, ri)| (di, ri, round_document(corpus, di, ri, window)))
        .collect()
}

/// TF-IDF action classifier with one binary classifier per attribute head.
#[derive(Debug, Clone)]
pub struct TfidfActionModel {
    pub window: usize,
    pub actions: TfidfIndex,
    pub heads: Vec<(String, TfidfIndex)>,
}

impl TfidfActionModel {
    pub fn fit(train: &DialogCorpus, heads: &[&str], window: usize) -> Result<Self, BaselineError> {
        let docs = documents(train, window);
        let rounds: Vec<&ApiCall> = train.rounds().map(|(_, _, r)| &r.action).collect();
        let labelled: Vec<(String, String)> = docs
            .iter()
            .zip(&rounds)
            .map(|((_, _, t), a)| (t.clone(), a.name().to_string()))
            .collect();
        let actions = TfidfIndex::fit(&labelled)?;
        let mut out = Vec::new();
        for h in heads {
            let docs: Vec<(String, String)> = docs
                .iter()
                .zip(&rounds)
                .filter(|(_, a)| a.takes_attributes())
                .map(|((_, _, t), a)| {
                    let on = a.argument_attributes().iter().any(|x| x == h);
                    (t.clone(), if on { "1" } else { "0" }.to_string())
                })
                .collect();
            if !docs.is_empty() {
                out.push((h.to_string(), TfidfIndex::fit(&docs)?));
            }
        }
        Ok(Self {
            window,
            actions,
            heads: out,
        })
    }

    pub fn action_distribution(&self, doc: &str) -> BTreeMap<String, f64> {
        self.actions.labels.iter().cloned().zip(self.actions.classify(doc)).collect()
    }

    /// Probability that each head's attribute is an argument of the action.
    pub fn attribute_probabilities(&self, doc: &str) -> BTreeMap<String, f64> {
        self.heads
            .iter()
            .map(|(h, idx)| {
                let p = idx.classify(doc);
                let on = idx.labels.iter().position(|l| l == "1").map_or(0.0, |i| p[i]);
                (h.clone(), on)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidatePool {
    pub dialog_id: String,
    pub turn: usize,
    pub candidates: Vec<String>,
    pub ground_truth: usize,
}

impl CandidatePool {
    pub fn is_valid(&self) -> bool {
        self.candidates.len() == POOL_SIZE
            && self.ground_truth < POOL_SIZE
            && self.candidates.iter().filter(|c| **c == self.candidates[self.ground_truth]).count() == 1
    }
}

/// One pool of [`POOL_SIZE`] responses per round: the gold assistant
/// utterance at a seeded position plus distinct distractors sampled without
/// replacement from the other assistant utterances of `corpus` and `extra`.
pub fn build_pools(corpus: &DialogCorpus, extra: &[&DialogCorpus], seed: u64) -> Result<Vec<CandidatePool>, BaselineError> {
    let mut distinct: Vec<&str> = std::iter::once(corpus)
        .chain(extra.iter().copied())
        .flat_map(|c| c.rounds().map(|(_, _, r)| r.assistant_utterance.as_str()))
        .collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < POOL_SIZE {
        return Err(BaselineError::TooFewCandidates(distinct.len()));
    }
    let rounds: Vec<(String, usize, &str)> = corpus
        .rounds()
        .map(|(d, i, r)| (d.dialog_id.clone(), i, r.assistant_utterance.as_str()))
        .collect();
    Ok(rounds
        .into_par_iter()
        .enumerate()
        .map(|(k, (dialog_id, turn, gold))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let gold_at = distinct.binary_search(&gold).expect("gold is in the distinct set");
            // sample from the distinct set minus the gold entry
            let picks = sample(&mut rng, distinct.len() - 1, POOL_SIZE - 1);
            let mut candidates: Vec<String> = picks
                .iter()
                .map(|i| distinct[if i >= gold_at { i + 1 } else { i }].to_string())
                .collect();
            let ground_truth = rand::Rng::random_range(&mut rng, 0..POOL_SIZE);
            candidates.insert(ground_truth, gold.to_string());
            CandidatePool {
                dialog_id,
                turn,
                candidates,
                ground_truth,
            }
        })
        .collect())
}

/// Rank (1-based) of the ground truth when candidates are sorted by
/// descending score, with ties broken against it.
pub fn ground_truth_rank(scores: &[f64], ground_truth: usize) -> usize {
    let g = scores[ground_truth];
    1 + scores
        .iter()
        .enumerate()
        .filter(|(i, s)| *i != ground_truth && **s >= g)
        .count()
}

/// Cosine of each candidate to the context and the candidate order, best
/// first, with the ground truth placed after any candidates tied with it.
pub fn rank_candidates(context: &str, pool: &CandidatePool, index: &TfidfIndex) -> (Vec<f64>, Vec<usize>) {
    let q = index.vectorize(context);
    let scores: Vec<f64> = pool.candidates.iter().map(|c| cosine(&q, &index.vectorize(c))).collect();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|a, b| {
        scores[*b]
            .total_cmp(&scores[*a])
            .then_with(|| (*a == pool.ground_truth).cmp(&(*b == pool.ground_truth)))
            .then_with(|| a.cmp(b))
    });
    (scores, order)
}

/// Fits the retrieval index on the train split's user and assistant turns.
pub fn retrieval_index(train: &DialogCorpus) -> Result<TfidfIndex, BaselineError> {
    let docs: Vec<(String, String)> = train
        .rounds()
        .flat_map(|(_, _, r)| {
            [
                (r.user_utterance.clone(), String::new()),
                (r.assistant_utterance.clone(), String::new()),
            ]
        })
        .collect();
    TfidfIndex::fit(&docs)
}

/// Belief tracker: copies the intents of the most similar training
/// utterance, tags slot values with a lexicon of training spans, and links
/// object mentions to the item the scene puts in focus.
#[derive(Debug, Clone)]
pub struct DstBaseline {
    index: TfidfIndex,
    docs: Vec<SparseVec>,
    frames: Vec<BeliefFrame>,
    /// Token sequence of a span -> most frequent slot name.
    lexicon: HashMap<Vec<String>, String>,
    max_span: usize,
}

fn alnum_tokens(text: &str) -> Vec<String> {
    tokenize(text)
        .into_iter()
        .filter(|t| t.chars().any(char::is_alphanumeric))
        .collect()
}

/// Item a bare mention most plausibly refers to.
fn salient_item(context: &MultimodalContext) -> Option<ItemId> {
    let by = |tag| context.units.iter().find(|u| u.tag == tag).and_then(|u| u.item_id.clone());
    by(UnitTag::Focused).or_else(|| by(UnitTag::Current)).or_else(|| by(UnitTag::Center))
}

impl DstBaseline {
    pub fn fit(train: &DialogCorpus) -> Result<Self, BaselineError> {
        let texts: Vec<(String, String)> = train
            .rounds()
            .map(|(_, _, r)| (r.user_utterance.clone(), String::new()))
            .collect();
        let index = TfidfIndex::fit(&texts)?;
        let docs = texts.iter().map(|(t, _)| index.vectorize(t)).collect();
        let frames: Vec<BeliefFrame> = train.rounds().map(|(_, _, r)| r.belief.clone()).collect();
        let mut counts: HashMap<Vec<String>, BTreeMap<String, usize>> = HashMap::new();
        for f in &frames {
            for s in &f.slots {
                let toks = alnum_tokens(&s.text);
                if !toks.is_empty() {
                    *counts.entry(toks).or_default().entry(s.name.clone()).or_default() += 1;
                }
            }
        }
        let max_span = counts.keys().map(Vec::len).max().unwrap_or(0);
        let lexicon = counts
            .into_iter()
            .map(|(k, names)| {
                let best = names
                    .into_iter()
                    .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
                    .expect("non-empty")
                    .0;
                (k, best)
            })
            .collect();
        Ok(Self {
            index,
            docs,
            frames,
            lexicon,
            max_span,
        })
    }

    pub fn predict(&self, utterance: &str, context: &MultimodalContext) -> BeliefFrame {
        let q = self.index.vectorize(utterance);
        let mut best = 0;
        let mut best_sim = f64::NEG_INFINITY;
        for (i, d) in self.docs.iter().enumerate() {
            let s = cosine(&q, d);
            if s > best_sim {
                best = i;
                best_sim = s;
            }
        }
        let neighbour = &self.frames[best];
        let intents: Vec<IntentLabel> = neighbour.intents.clone();
        let mut slots = Vec::new();
        let toks = alnum_tokens(utterance);
        let mut i = 0;
        while i < toks.len() {
            let mut matched = 0;
            for len in (1..=self.max_span.min(toks.len() - i)).rev() {
                if let Some(name) = self.lexicon.get(&toks[i..i + len]) {
                    slots.push(SlotEntry {
                        intent: 0,
                        name: name.clone(),
                        text: toks[i..i + len].join(" "),
                    });
                    matched = len;
                    break;
                }
            }
            i += matched.max(1);
        }
        let coref = match (salient_item(context), intents.is_empty()) {
            (Some(item), false) => neighbour
                .coref
                .iter()
                .map(|c| CorefEntry {
                    intent: c.intent,
                    mention: c.mention.clone(),
                    item_id: item.clone(),
                })
                .collect(),
            _ => Vec::new(),
        };
        BeliefFrame { intents, slots, coref }
    }
}
