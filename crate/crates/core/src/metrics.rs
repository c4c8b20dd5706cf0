//! Evaluation for action prediction, response retrieval and generation, and
//! belief tracking, plus the report document.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::de::Deserializer;
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use thiserror::Error;

use crate::label_lang::BeliefFrame;
use crate::tokenize::tokenize;

pub const PERPLEXITY_FLOOR: f64 = 1e-12;
pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const PREDICTION_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("{gold} gold rounds but {pred} predictions")]
    Misaligned { gold: usize, pred: usize },
    #[error("round {0}: action distribution is not a probability distribution")]
    InvalidDistribution(usize),
    #[error("rank {0} outside [1, 100]")]
    RankOutOfRange(usize),
    #[error("no rounds to evaluate")]
    Empty,
    #[error("round {0}: prediction lacks {1}")]
    Missing(usize, &'static str),
}

/// A decimal written with exactly six fractional digits.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Fixed6(pub f64);

impl Serialize for Fixed6 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let text = format!("{:.6}", self.0);
        let raw = RawValue::from_string(text).map_err(serde::ser::Error::custom)?;
        raw.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Fixed6 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        f64::deserialize(d).map(Fixed6)
    }
}

impl fmt::Display for Fixed6 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6}", self.0)
    }
}

impl From<f64> for Fixed6 {
    fn from(x: f64) -> Self {
        Fixed6(x)
    }
}

/// Gold side of one round for action evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionGold {
    pub action: String,
    /// Attribute heads with their gold on/off labels; empty when the action
    /// takes no attribute arguments.
    pub attributes: Vec<(String, bool)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    /// `counts[gold][predicted]`.
    pub counts: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionReport {
    pub rounds: usize,
    pub accuracy: Fixed6,
    pub perplexity: Fixed6,
    pub attribute_accuracy: Fixed6,
    pub confusion: ConfusionMatrix,
}

/// Predicted label with ties resolved against the gold label.
fn pessimistic_argmax(dist: &BTreeMap<String, f64>, gold: &str) -> String {
    let best = dist.values().cloned().fold(f64::NEG_INFINITY, f64::max);
    let tied: Vec<&String> = dist.iter().filter(|(_, p)| **p == best).map(|(k, _)| k).collect();
    tied.iter()
        .find(|k| k.as_str() != gold)
        .or_else(|| tied.first())
        .map(|k| k.to_string())
        .unwrap_or_default()
}

fn valid_distribution(dist: &BTreeMap<String, f64>) -> bool {
    !dist.is_empty()
        && dist.values().all(|p| p.is_finite() && *p >= 0.0)
        && (dist.values().sum::<f64>() - 1.0).abs() < 1e-6
}

/// Accuracy (ties count against the prediction), perplexity of the gold
/// action, micro attribute accuracy at threshold 0.5 over rounds whose gold
/// action takes attributes, and the confusion matrix.
pub fn action_metrics(
    gold: &[ActionGold],
    dists: &[BTreeMap<String, f64>],
    attribute_probs: &[BTreeMap<String, f64>],
) -> Result<ActionReport, MetricsError> {
    if gold.len() != dists.len() || gold.len() != attribute_probs.len() {
        return Err(MetricsError::Misaligned {
            gold: gold.len(),
            pred: dists.len().min(attribute_probs.len()),
        });
    }
    if gold.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut labels: Vec<String> = gold.iter().map(|g| g.action.clone()).collect();
    labels.extend(dists.iter().flat_map(|d| d.keys().cloned()));
    labels.sort();
    labels.dedup();
    let pos = |l: &str| labels.binary_search_by(|x| x.as_str().cmp(l)).expect("collected");
    let mut counts = vec![vec![0usize; labels.len()]; labels.len()];
    let (mut hits, mut nll, mut attr_hits, mut attr_total) = (0usize, 0.0, 0usize, 0usize);
    for (i, ((g, d), ap)) in gold.iter().zip(dists).zip(attribute_probs).enumerate() {
        if !valid_distribution(d) {
            return Err(MetricsError::InvalidDistribution(i));
        }
        let predicted = pessimistic_argmax(d, &g.action);
        if predicted == g.action {
            hits += 1;
        }
        counts[pos(&g.action)][pos(&predicted)] += 1;
        nll -= d.get(&g.action).copied().unwrap_or(0.0).max(PERPLEXITY_FLOOR).ln();
        for (head, on) in &g.attributes {
            let p = ap.get(head).copied().unwrap_or(0.0);
            attr_total += 1;
            if (p >= 0.5) == *on {
                attr_hits += 1;
            }
        }
    }
    let n = gold.len() as f64;
    Ok(ActionReport {
        rounds: gold.len(),
        accuracy: Fixed6(hits as f64 / n),
        perplexity: Fixed6((nll / n).exp()),
        attribute_accuracy: Fixed6(if attr_total == 0 { 0.0 } else { attr_hits as f64 / attr_total as f64 }),
        confusion: ConfusionMatrix { labels, counts },
    })
}

fn ngrams(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Corpus-level BLEU-4 with uniform weights, brevity penalty, and add-one
/// smoothing on the 2- to 4-gram precisions.
pub fn bleu4(references: &[String], hypotheses: &[String]) -> Result<f64, MetricsError> {
    if references.len() != hypotheses.len() {
        return Err(MetricsError::Misaligned {
            gold: references.len(),
            pred: hypotheses.len(),
        });
    }
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (r, h) in references.iter().zip(hypotheses) {
        let (r, h) = (tokenize(r), tokenize(h));
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=4 {
            let rc = ngrams(&r, n);
            for (g, c) in ngrams(&h, n) {
                total[n - 1] += c;
                matched[n - 1] += c.min(rc.get(g).copied().unwrap_or(0));
            }
        }
    }
    if hyp_len == 0 || matched[0] == 0 {
        return Ok(0.0);
    }
    let mut log_p = (matched[0] as f64 / total[0] as f64).ln();
    for n in 1..4 {
        log_p += ((matched[n] as f64 + 1.0) / (total[n] as f64 + 1.0)).ln();
    }
    let bp = if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(bp * (log_p / 4.0).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub rounds: usize,
    #[serde(rename = "recall@1")]
    pub recall_at_1: Fixed6,
    #[serde(rename = "recall@5")]
    pub recall_at_5: Fixed6,
    #[serde(rename = "recall@10")]
    pub recall_at_10: Fixed6,
    pub mean_rank: Fixed6,
    pub mrr: Fixed6,
}

pub fn retrieval_metrics(ranks: &[usize]) -> Result<RetrievalReport, MetricsError> {
    if ranks.is_empty() {
        return Err(MetricsError::Empty);
    }
    if let Some(r) = ranks.iter().find(|r| !(1..=100).contains(*r)) {
        return Err(MetricsError::RankOutOfRange(*r));
    }
    let n = ranks.len() as f64;
    let at = |k: usize| ranks.iter().filter(|r| **r <= k).count() as f64 / n;
    Ok(RetrievalReport {
        rounds: ranks.len(),
        recall_at_1: Fixed6(at(1)),
        recall_at_5: Fixed6(at(5)),
        recall_at_10: Fixed6(at(10)),
        mean_rank: Fixed6(ranks.iter().sum::<usize>() as f64 / n),
        mrr: Fixed6(ranks.iter().map(|r| 1.0 / *r as f64).sum::<f64>() / n),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: Fixed6,
    pub recall: Fixed6,
    pub f1: Fixed6,
}

impl Prf {
    /// Micro P/R/F1 from matched, predicted and gold counts. With nothing
    /// predicted and nothing gold all three are 1.
    pub fn from_counts(matched: usize, predicted: usize, gold: usize) -> Self {
        if predicted == 0 && gold == 0 {
            return Self {
                precision: Fixed6(1.0),
                recall: Fixed6(1.0),
                f1: Fixed6(1.0),
            };
        }
        let p = if predicted == 0 { 0.0 } else { matched as f64 / predicted as f64 };
        let r = if gold == 0 { 0.0 } else { matched as f64 / gold as f64 };
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        Self {
            precision: Fixed6(p),
            recall: Fixed6(r),
            f1: Fixed6(f),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DstReport {
    pub rounds: usize,
    pub intent_precision: Fixed6,
    pub intent_recall: Fixed6,
    pub intent_f1: Fixed6,
    pub slot_precision: Fixed6,
    pub slot_recall: Fixed6,
    pub slot_f1: Fixed6,
    pub coref_precision: Fixed6,
    pub coref_recall: Fixed6,
    pub coref_f1: Fixed6,
}

/// Lowercased word tokens with punctuation dropped, space separated.
pub fn normalize_span(text: &str) -> String {
    tokenize(text)
        .into_iter()
        .filter(|t| t.chars().any(char::is_alphanumeric))
        .collect::<Vec<_>>()
        .join(" ")
}

fn object_of(mention: &str) -> &str {
    match mention.rsplit_once('_') {
        Some((obj, k)) if !k.is_empty() && k.chars().all(|c| c.is_ascii_digit()) => obj,
        _ => mention,
    }
}

fn frame_keys(f: &BeliefFrame) -> [Vec<String>; 3] {
    let intent_str = |i: usize| f.intents.get(i).map(|x| x.to_string()).unwrap_or_default();
    let intents = f.intents.iter().map(|i| i.to_string()).collect();
    let slots = f
        .slots
        .iter()
        .map(|s| format!("{}\u{1f}{}\u{1f}{}", intent_str(s.intent), s.name.to_lowercase(), normalize_span(&s.text)))
        .collect();
    let coref = f
        .coref
        .iter()
        .map(|c| format!("{}\u{1f}{}", object_of(&c.mention), c.item_id))
        .collect();
    [intents, slots, coref]
}

fn multiset_overlap(a: &[String], b: &[String]) -> usize {
    let mut counts: HashMap<&str, isize> = HashMap::new();
    for x in a {
        *counts.entry(x).or_default() += 1;
    }
    let mut hit = 0;
    for x in b {
        if let Some(c) = counts.get_mut(x.as_str()) {
            if *c > 0 {
                *c -= 1;
                hit += 1;
            }
        }
    }
    hit
}

/// Micro-averaged P/R/F1 for intents, (intent, slot, span) triples and
/// (object type, item) coreference pairs, each matched as multisets.
pub fn dst_metrics(gold: &[BeliefFrame], predicted: &[BeliefFrame]) -> Result<DstReport, MetricsError> {
    if gold.len() != predicted.len() {
        return Err(MetricsError::Misaligned {
            gold: gold.len(),
            pred: predicted.len(),
        });
    }
    // [kind][matched, predicted, gold]
    let mut c = [[0usize; 3]; 3];
    for (g, p) in gold.iter().zip(predicted) {
        let (gk, pk) = (frame_keys(g), frame_keys(p));
        for k in 0..3 {
            c[k][0] += multiset_overlap(&gk[k], &pk[k]);
            c[k][1] += pk[k].len();
            c[k][2] += gk[k].len();
        }
    }
    let [i, s, r] = c.map(|x| Prf::from_counts(x[0], x[1], x[2]));
    Ok(DstReport {
        rounds: gold.len(),
        intent_precision: i.precision,
        intent_recall: i.recall,
        intent_f1: i.f1,
        slot_precision: s.precision,
        slot_recall: s.recall,
        slot_f1: s.f1,
        coref_precision: r.precision,
        coref_recall: r.recall,
        coref_f1: r.f1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseReport {
    pub bleu4: Fixed6,
    pub retrieval: RetrievalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub predictor: String,
    pub notes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<ActionReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<ResponseReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dst: Option<DstReport>,
}

impl Report {
    pub fn new(predictor: impl Into<String>) -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            predictor: predictor.into(),
            notes: vec![
                format!("perplexity floors gold probabilities at {PERPLEXITY_FLOOR:e}"),
                "accuracy counts ties against the prediction".into(),
                "attribute_accuracy is micro-averaged over attribute heads on rounds whose gold action takes attributes".into(),
                "bleu4 is corpus-level with add-one smoothing for 2- to 4-gram precisions".into(),
                "retrieval ranks break ties against the ground truth".into(),
                "dst scores are micro-averaged; spans are lowercased with punctuation removed".into(),
            ],
            action: None,
            response: None,
            dst: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

/// One line of a prediction file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundPrediction {
    pub dialog_id: String,
    pub turn: usize,
    pub action_distribution: BTreeMap<String, f64>,
    #[serde(default)]
    pub attribute_predictions: BTreeMap<String, f64>,
    /// Scores for the round's candidate pool, in pool order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate_scores: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth_index: Option<usize>,
    /// Highest-scoring candidate, used as the generated response.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dst_frame: Option<BeliefFrame>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionFile {
    pub schema_version: u32,
    pub predictor: String,
    pub rounds: Vec<RoundPrediction>,
}
