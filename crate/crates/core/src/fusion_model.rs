//! Multimodal action predictor: a per-token projection of learned word
//! embeddings attends over the embedded scene, a learned query pools the
//! fused sequence, and softmax/sigmoid heads predict the API action and its
//! attribute arguments.
//!
//! Shapes, for one round with `n` tokens and `k` context units:
//!
//! ```text
//! u  = X·W_enc                         n × h
//! M̃  = f(C·W_ctx + b_ctx)              k × h
//! m  = softmax(u·M̃ᵀ/√h)·M̃              n × h
//! ũ  = [u ; m]                         n × 2h
//! q  = softmax(ũ·θ/√2h)ᵀ·ũ             2h
//! p  = softmax(q·W_act + b_act)
//! σ  = sigmoid(q·W_attr + b_attr)
//! ```
//!
//! Gradients are derived by hand and checked against finite differences in
//! the tests.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hasher;

use fnv::FnvHasher;
use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::{DialogCorpus, DialogRound};
use crate::environment::{actions_for, ApiCall, AttrValue, Catalog, MultimodalContext, UnitTag};
use crate::ontology::Domain;
use crate::tokenize::tokenize;

pub const UNK: usize = 0;
pub const UNK_TOKEN: &str = "<unk>";

/// Binary attribute heads: the attributes that appear in each domain's API
/// argument lists.
pub fn attribute_heads(domain: Domain) -> &'static [&'static str] {
    match domain {
        Domain::Furniture => &["category", "color", "intendedRoom", "material", "price", "customerRating"],
        Domain::Fashion => &["brand", "price", "customerRating", "availableSizes", "color"],
    }
}

/// Item attributes hashed into the context features of each scene unit.
pub fn context_attributes(domain: Domain) -> &'static [&'static str] {
    match domain {
        Domain::Furniture => &["category", "color", "material", "price"],
        Domain::Fashion => &["category", "color", "pattern", "brand", "price"],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    Tanh,
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub domain: Domain,
    /// Word-embedding width D_W.
    pub d_w: usize,
    /// Hidden width D_H.
    pub d_h: usize,
    /// Width of each hashed attribute-value and tag embedding; a context
    /// unit is `(context attributes + 1) · d_v` wide.
    pub d_v: usize,
    pub hash_buckets: usize,
    pub actions: Vec<String>,
    pub attribute_heads: Vec<String>,
    pub context_attributes: Vec<String>,
    pub min_count: usize,
    pub learning_rate: f64,
    pub clip: f64,
    pub nonlinearity: Nonlinearity,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a dev-accuracy improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::for_domain(Domain::Furniture)
    }
}

impl ModelConfig {
    pub fn for_domain(domain: Domain) -> Self {
        Self {
            domain,
            d_w: 32,
            d_h: 32,
            d_v: 8,
            hash_buckets: 512,
            actions: actions_for(domain).iter().map(|a| a.to_string()).collect(),
            attribute_heads: attribute_heads(domain).iter().map(|a| a.to_string()).collect(),
            context_attributes: context_attributes(domain).iter().map(|a| a.to_string()).collect(),
            min_count: 5,
            learning_rate: 1e-4,
            clip: 1.0,
            nonlinearity: Nonlinearity::Tanh,
            batch_size: 16,
            max_epochs: 40,
            patience: 6,
            seed: 0,
        }
    }

    /// Width D_M of one context unit.
    pub fn d_m(&self) -> usize {
        (self.context_attributes.len() + 1) * self.d_v
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let sizes = [self.d_w, self.d_h, self.d_v, self.hash_buckets, self.batch_size, self.actions.len()];
        if sizes.contains(&0) {
            return Err(ModelError::Config("sizes, hash buckets, batch size and the action set must be non-zero".into()));
        }
        if !(self.learning_rate > 0.0 && self.clip > 0.0) {
            return Err(ModelError::Config("learning rate and clip bound must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("the training split is empty")]
    EmptyTrain,
    #[error("action `{0}` is not in the model's action set")]
    UnknownAction(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// Tokens seen at least `min_count` times, most frequent first (ties
    /// alphabetical), after the reserved unknown token.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, min_count: usize) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for t in texts {
            for tok in tokenize(t) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut kept: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut tokens = vec![UNK_TOKEN.to_string()];
        tokens.extend(kept.into_iter().map(|(t, _)| t));
        tokens.into()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Token ids of an utterance; an empty utterance becomes `[UNK]`.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        let ids: Vec<usize> = tokenize(text).iter().map(|t| self.id(t)).collect();
        if ids.is_empty() {
            vec![UNK]
        } else {
            ids
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub word_emb: Array2<f64>,
    pub w_enc: Array2<f64>,
    pub value_emb: Array2<f64>,
    pub tag_emb: Array2<f64>,
    pub w_ctx: Array2<f64>,
    pub b_ctx: Array1<f64>,
    pub theta: Array1<f64>,
    pub w_act: Array2<f64>,
    pub b_act: Array1<f64>,
    pub w_attr: Array2<f64>,
    pub b_attr: Array1<f64>,
}

impl ModelParams {
    pub fn zeros(cfg: &ModelConfig, vocab_size: usize) -> Self {
        let h = cfg.d_h;
        Self {
            word_emb: Array2::zeros((vocab_size, cfg.d_w)),
            w_enc: Array2::zeros((cfg.d_w, h)),
            value_emb: Array2::zeros((cfg.hash_buckets, cfg.d_v)),
            tag_emb: Array2::zeros((UnitTag::ALL.len(), cfg.d_v)),
            w_ctx: Array2::zeros((cfg.d_m(), h)),
            b_ctx: Array1::zeros(h),
            theta: Array1::zeros(2 * h),
            w_act: Array2::zeros((2 * h, cfg.actions.len())),
            b_act: Array1::zeros(cfg.actions.len()),
            w_attr: Array2::zeros((2 * h, cfg.attribute_heads.len())),
            b_attr: Array1::zeros(cfg.attribute_heads.len()),
        }
    }

    /// Gaussian initialisation scaled by fan-in; biases start at zero.
    pub fn init(cfg: &ModelConfig, vocab_size: usize, seed: u64) -> Self {
        let mut p = Self::zeros(cfg, vocab_size);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |a: &mut [f64], fan_in: usize| {
            let n = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("positive scale");
            a.iter_mut().for_each(|x| *x = n.sample(&mut rng));
        };
        let (dw, h, dv, dm) = (cfg.d_w, cfg.d_h, cfg.d_v, cfg.d_m());
        fill(p.word_emb.as_slice_mut().unwrap(), dw);
        fill(p.w_enc.as_slice_mut().unwrap(), dw);
        fill(p.value_emb.as_slice_mut().unwrap(), dv);
        fill(p.tag_emb.as_slice_mut().unwrap(), dv);
        fill(p.w_ctx.as_slice_mut().unwrap(), dm);
        fill(p.theta.as_slice_mut().unwrap(), 2 * h);
        fill(p.w_act.as_slice_mut().unwrap(), 2 * h);
        fill(p.w_attr.as_slice_mut().unwrap(), 2 * h);
        p
    }

    /// Every tensor as a flat slice, in a fixed order.
    pub fn slices(&self) -> [&[f64]; 11] {
        [
            self.word_emb.as_slice().unwrap(),
            self.w_enc.as_slice().unwrap(),
            self.value_emb.as_slice().unwrap(),
            self.tag_emb.as_slice().unwrap(),
            self.w_ctx.as_slice().unwrap(),
            self.b_ctx.as_slice().unwrap(),
            self.theta.as_slice().unwrap(),
            self.w_act.as_slice().unwrap(),
            self.b_act.as_slice().unwrap(),
            self.w_attr.as_slice().unwrap(),
            self.b_attr.as_slice().unwrap(),
        ]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 11] {
        [
            self.word_emb.as_slice_mut().unwrap(),
            self.w_enc.as_slice_mut().unwrap(),
            self.value_emb.as_slice_mut().unwrap(),
            self.tag_emb.as_slice_mut().unwrap(),
            self.w_ctx.as_slice_mut().unwrap(),
            self.b_ctx.as_slice_mut().unwrap(),
            self.theta.as_slice_mut().unwrap(),
            self.w_act.as_slice_mut().unwrap(),
            self.b_act.as_slice_mut().unwrap(),
            self.w_attr.as_slice_mut().unwrap(),
            self.b_attr.as_slice_mut().unwrap(),
        ]
    }

    pub fn n_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|x| x.is_finite()))
    }

    fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    fn scale(&mut self, k: f64) {
        for a in self.slices_mut() {
            a.iter_mut().for_each(|x| *x *= k);
        }
    }
}

/// One featurised round.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub tokens: Vec<usize>,
    /// Per context unit, one hash bucket per context attribute.
    pub values: Vec<Vec<usize>>,
    pub tags: Vec<usize>,
    pub action: usize,
    pub attributes: Vec<f64>,
    /// Whether the attribute heads are supervised for this round.
    pub attributes_supervised: bool,
}

fn bucket(attr: &str, value: &str, buckets: usize) -> usize {
    let mut h = FnvHasher::default();
    h.write(attr.as_bytes());
    h.write_u8(b'=');
    h.write(value.as_bytes());
    (h.finish() % buckets as u64) as usize
}

fn feature_value(v: Option<&AttrValue>) -> String {
    match v {
        None => "-".into(),
        // coarse log-scale band so nearby prices share a bucket
        Some(AttrValue::Dec(p)) => format!("band{}", p.max(1.0).log2().floor() as i64),
        Some(other) => other.to_string(),
    }
}

/// Featurises a scene: `(value buckets per unit, tag ids)`.
pub fn featurize_context(
    cfg: &ModelConfig,
    context: &MultimodalContext,
    catalog: &Catalog,
) -> (Vec<Vec<usize>>, Vec<usize>) {
    let mut values = Vec::with_capacity(context.units.len());
    let mut tags = Vec::with_capacity(context.units.len());
    for u in &context.units {
        let item = u.item_id.as_deref().and_then(|id| catalog.get(id));
        values.push(
            cfg.context_attributes
                .iter()
                .map(|a| bucket(a, &feature_value(item.and_then(|it| it.get(a))), cfg.hash_buckets))
                .collect(),
        );
        tags.push(u.tag.index());
    }
    (values, tags)
}

/// Gold attribute labels for a call: 1 for each head the call names.
pub fn attribute_labels(cfg: &ModelConfig, call: &ApiCall) -> Vec<f64> {
    let args = call.argument_attributes();
    cfg.attribute_heads
        .iter()
        .map(|h| if args.contains(h) { 1.0 } else { 0.0 })
        .collect()
}

/// Input tensors for one round.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub tokens: Vec<usize>,
    pub values: Vec<Vec<usize>>,
    pub tags: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub action_probs: Vec<f64>,
    pub attribute_probs: Vec<f64>,
}

impl Prediction {
    pub fn argmax(&self) -> usize {
        argmax(&self.action_probs)
    }
}

/// First index of the maximum.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

fn softmax(x: ArrayView1<f64>) -> Array1<f64> {
    let m = x.fold(f64::NEG_INFINITY, |a, b| a.max(*b));
    let e = x.mapv(|v| (v - m).exp());
    let z = e.sum();
    e / z
}

fn softmax_rows(x: ArrayView2<f64>) -> Array2<f64> {
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        let s = softmax(row.view());
        row.assign(&s);
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), ModelError> {
    if cond {
        Ok(())
    } else {
        Err(ModelError::Shape(msg()))
    }
}

/// Scaled dot-product attention `softmax(QKᵀ/√d)·V`.
pub fn attend(q: ArrayView2<f64>, k: ArrayView2<f64>, v: ArrayView2<f64>) -> Result<Array2<f64>, ModelError> {
    check(q.ncols() == k.ncols(), || format!("query width {} vs key width {}", q.ncols(), k.ncols()))?;
    check(k.nrows() == v.nrows(), || format!("{} keys vs {} values", k.nrows(), v.nrows()))?;
    check(k.nrows() > 0, || "no keys".into())?;
    let scores = q.dot(&k.t()) / (k.ncols() as f64).sqrt();
    Ok(softmax_rows(scores.view()).dot(&v))
}

/// Per-token projected embeddings, `n × D_H`.
pub fn encode_utterance(tokens: &[usize], params: &ModelParams) -> Array2<f64> {
    let tokens: &[usize] = if tokens.is_empty() { &[UNK] } else { tokens };
    let x = params.word_emb.select(Axis(0), tokens);
    x.dot(&params.w_enc)
}

fn activate(f: Nonlinearity, z: &Array2<f64>) -> Array2<f64> {
    match f {
        Nonlinearity::Tanh => z.mapv(f64::tanh),
        Nonlinearity::Relu => z.mapv(|x| x.max(0.0)),
    }
}

/// `f(M·W_ctx + b_ctx)` for a raw `N_M × D_M` context tensor.
pub fn embed_context(m: ArrayView2<f64>, params: &ModelParams, f: Nonlinearity) -> Result<Array2<f64>, ModelError> {
    check(m.ncols() == params.w_ctx.nrows(), || {
        format!("context width {} vs projection input {}", m.ncols(), params.w_ctx.nrows())
    })?;
    Ok(activate(f, &(m.dot(&params.w_ctx) + &params.b_ctx)))
}

/// `ũ = [u ; Attention(u, M̃, M̃)]`.
pub fn fuse(u: ArrayView2<f64>, m: ArrayView2<f64>) -> Result<Array2<f64>, ModelError> {
    check(u.ncols() == m.ncols(), || format!("utterance width {} vs context width {}", u.ncols(), m.ncols()))?;
    let att = attend(u, m, m)?;
    Ok(concatenate(Axis(1), &[u, att.view()]).expect("equal row counts"))
}

/// Action distribution and attribute probabilities from a fused sequence.
pub fn predict_fused(fused: ArrayView2<f64>, params: &ModelParams) -> Prediction {
    let theta = params.theta.view().insert_axis(Axis(0));
    let q = attend(theta, fused, fused).expect("θ width matches ũ");
    let q = q.row(0);
    let logits = q.dot(&params.w_act) + &params.b_act;
    let z = q.dot(&params.w_attr) + &params.b_attr;
    Prediction {
        action_probs: softmax(logits.view()).to_vec(),
        attribute_probs: z.iter().map(|x| sigmoid(*x)).collect(),
    }
}

/// Cross-entropy of the gold action plus, when supervised, the summed binary
/// cross-entropies of the attribute heads.
pub fn loss(pred: &Prediction, action: usize, attributes: Option<&[f64]>) -> f64 {
    const TINY: f64 = 1e-300;
    let mut l = -pred.action_probs[action].max(TINY).ln();
    if let Some(ys) = attributes {
        for (p, y) in pred.attribute_probs.iter().zip(ys) {
            l -= y * p.max(TINY).ln() + (1.0 - y) * (1.0 - p).max(TINY).ln();
        }
    }
    l
}

/// Raw `N_M × D_M` context tensor gathered from the embedding tables.
pub fn context_tensor(values: &[Vec<usize>], tags: &[usize], params: &ModelParams) -> Array2<f64> {
    let dv = params.value_emb.ncols();
    let width = (values.first().map_or(0, |v| v.len()) + 1) * dv;
    let mut c = Array2::zeros((values.len(), width));
    for (i, (vals, tag)) in values.iter().zip(tags).enumerate() {
        for (j, b) in vals.iter().enumerate() {
            c.slice_mut(s![i, j * dv..(j + 1) * dv]).assign(&params.value_emb.row(*b));
        }
        c.slice_mut(s![i, vals.len() * dv..]).assign(&params.tag_emb.row(*tag));
    }
    c
}

pub fn forward(cfg: &ModelConfig, params: &ModelParams, x: &Inputs) -> Prediction {
    let u = encode_utterance(&x.tokens, params);
    let c = context_tensor(&x.values, &x.tags, params);
    let m = embed_context(c.view(), params, cfg.nonlinearity).expect("featuriser matches config");
    let fused = fuse(u.view(), m.view()).expect("widths equal D_H");
    predict_fused(fused.view(), params)
}

fn standard(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

/// Loss and gradient for one example.
pub fn example_grad(cfg: &ModelConfig, params: &ModelParams, ex: &Example) -> (f64, ModelParams) {
    let h = cfg.d_h;
    let dv = cfg.d_v;
    let tokens: Vec<usize> = if ex.tokens.is_empty() { vec![UNK] } else { ex.tokens.clone() };
    // forward with caches
    let x = params.word_emb.select(Axis(0), &tokens);
    let u = x.dot(&params.w_enc);
    let c = context_tensor(&ex.values, &ex.tags, params);
    let mt = activate(cfg.nonlinearity, &(c.dot(&params.w_ctx) + &params.b_ctx));
    let s1 = 1.0 / (h as f64).sqrt();
    let a = softmax_rows((u.dot(&mt.t()) * s1).view());
    let m = a.dot(&mt);
    let ut = concatenate(Axis(1), &[u.view(), m.view()]).unwrap();
    let s2 = 1.0 / ((2 * h) as f64).sqrt();
    let alpha = softmax((ut.dot(&params.theta) * s2).view());
    let q = ut.t().dot(&alpha);
    let p = softmax((q.dot(&params.w_act) + &params.b_act).view());
    let sig = (q.dot(&params.w_attr) + &params.b_attr).mapv(sigmoid);
    let pred = Prediction {
        action_probs: p.to_vec(),
        attribute_probs: sig.to_vec(),
    };
    let sup = ex.attributes_supervised.then_some(ex.attributes.as_slice());
    let l = loss(&pred, ex.action, sup);

    // backward
    let mut g = ModelParams::zeros(cfg, params.word_emb.nrows());
    let mut dl = p.clone();
    dl[ex.action] -= 1.0;
    let q2 = q.view().insert_axis(Axis(1));
    g.w_act = standard(q2.dot(&dl.view().insert_axis(Axis(0))));
    let mut dq = params.w_act.dot(&dl);
    g.b_act = dl;
    if ex.attributes_supervised {
        let dz = &sig - &Array1::from(ex.attributes.clone());
        g.w_attr = standard(q2.dot(&dz.view().insert_axis(Axis(0))));
        dq += &params.w_attr.dot(&dz);
        g.b_attr = dz;
    }
    let mut dut = alpha.view().insert_axis(Axis(1)).dot(&dq.view().insert_axis(Axis(0)));
    let dalpha = ut.dot(&dq);
    let de = &alpha * &(&dalpha - alpha.dot(&dalpha));
    dut += &(de.view().insert_axis(Axis(1)).dot(&params.theta.view().insert_axis(Axis(0))) * s2);
    g.theta = ut.t().dot(&de) * s2;
    let mut du = dut.slice(s![.., ..h]).to_owned();
    let dm = dut.slice(s![.., h..]);
    let da = dm.dot(&mt.t());
    let mut dmt = a.t().dot(&dm);
    let rows = (&da * &a).sum_axis(Axis(1));
    let ds = &a * &(&da - &rows.insert_axis(Axis(1)));
    du += &(ds.dot(&mt) * s1);
    dmt += &(ds.t().dot(&u) * s1);
    let dz = match cfg.nonlinearity {
        Nonlinearity::Tanh => &dmt * &mt.mapv(|y| 1.0 - y * y),
        Nonlinearity::Relu => &dmt * &mt.mapv(|y| if y > 0.0 { 1.0 } else { 0.0 }),
    };
    g.w_ctx = standard(c.t().dot(&dz));
    g.b_ctx = dz.sum_axis(Axis(0));
    let dc = dz.dot(&params.w_ctx.t());
    for (i, (vals, tag)) in ex.values.iter().zip(&ex.tags).enumerate() {
        for (j, b) in vals.iter().enumerate() {
            let mut row = g.value_emb.row_mut(*b);
            row += &dc.slice(s![i, j * dv..(j + 1) * dv]);
        }
        let mut row = g.tag_emb.row_mut(*tag);
        row += &dc.slice(s![i, vals.len() * dv..]);
    }
    g.w_enc = standard(x.t().dot(&du));
    let dx = du.dot(&params.w_enc.t());
    for (i, t) in tokens.iter().enumerate() {
        let mut row = g.word_emb.row_mut(*t);
        row += &dx.row(i);
    }
    (l, g)
}

/// Examples summed per fixed-size chunk, chunks summed in order, so the
/// result does not depend on thread scheduling.
const REDUCE_CHUNK: usize = 4;

/// Mean loss and gradient over a batch.
pub fn batch_grad(cfg: &ModelConfig, params: &ModelParams, batch: &[Example]) -> (f64, ModelParams) {
    assert!(!batch.is_empty(), "batch must be non-empty");
    let partials: Vec<(f64, ModelParams)> = batch
        .par_chunks(REDUCE_CHUNK)
        .map(|chunk| {
            let mut it = chunk.iter().map(|ex| example_grad(cfg, params, ex));
            let (mut l, mut g) = it.next().expect("non-empty chunk");
            for (li, gi) in it {
                l += li;
                g.add_assign(&gi);
            }
            (l, g)
        })
        .collect();
    let mut it = partials.into_iter();
    let (mut l, mut g) = it.next().unwrap();
    for (li, gi) in it {
        l += li;
        g.add_assign(&gi);
    }
    let k = 1.0 / batch.len() as f64;
    g.scale(k);
    (l * k, g)
}

pub fn batch_loss(cfg: &ModelConfig, params: &ModelParams, batch: &[Example]) -> f64 {
    let total: f64 = batch
        .iter()
        .map(|ex| {
            let pred = forward(cfg, params, &ex.inputs());
            loss(&pred, ex.action, ex.attributes_supervised.then_some(ex.attributes.as_slice()))
        })
        .sum();
    total / batch.len() as f64
}

impl Example {
    pub fn inputs(&self) -> Inputs {
        Inputs {
            tokens: self.tokens.clone(),
            values: self.values.clone(),
            tags: self.tags.clone(),
        }
    }
}

/// Adam with per-value gradient clipping.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub clip: f64,
    m: ModelParams,
    v: ModelParams,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(params: &ModelParams, lr: f64, clip: f64) -> Self {
        let mut z = params.clone();
        z.scale(0.0);
        Self {
            lr,
            clip,
            m: z.clone(),
            v: z,
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grad: &ModelParams) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        let (lr, clip) = (self.lr, self.clip);
        for (((p, g), m), v) in params
            .slices_mut()
            .into_iter()
            .zip(grad.slices())
            .zip(self.m.slices_mut())
            .zip(self.v.slices_mut())
        {
            for i in 0..p.len() {
                let gi = g[i].clamp(-clip, clip);
                m[i] = Self::B1 * m[i] + (1.0 - Self::B1) * gi;
                v[i] = Self::B2 * v[i] + (1.0 - Self::B2) * gi * gi;
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionModel {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: ModelParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub loss: f64,
    pub dev_accuracy: Option<f64>,
}

impl FusionModel {
    pub fn new(config: ModelConfig, vocab: Vocab) -> Result<Self, ModelError> {
        config.validate()?;
        let params = ModelParams::init(&config, vocab.len(), config.seed);
        Ok(Self { config, vocab, params })
    }

    pub fn action_index(&self, name: &str) -> Result<usize, ModelError> {
        self.config
            .actions
            .iter()
            .position(|a| a == name)
            .ok_or_else(|| ModelError::UnknownAction(name.to_string()))
    }

    pub fn inputs(&self, utterance: &str, context: &MultimodalContext, catalog: &Catalog) -> Inputs {
        let (values, tags) = featurize_context(&self.config, context, catalog);
        Inputs {
            tokens: self.vocab.encode(utterance),
            values,
            tags,
        }
    }

    pub fn example(&self, round: &DialogRound, catalog: &Catalog) -> Result<Example, ModelError> {
        let x = self.inputs(&round.user_utterance, &round.context, catalog);
        Ok(Example {
            tokens: x.tokens,
            values: x.values,
            tags: x.tags,
            action: self.action_index(round.action.name())?,
            attributes: attribute_labels(&self.config, &round.action),
            attributes_supervised: round.action.takes_attributes(),
        })
    }

    pub fn examples(&self, corpus: &DialogCorpus, catalog: &Catalog) -> Result<Vec<Example>, ModelError> {
        corpus.rounds().map(|(_, _, r)| self.example(r, catalog)).collect()
    }

    pub fn predict(&self, utterance: &str, context: &MultimodalContext, catalog: &Catalog) -> Prediction {
        forward(&self.config, &self.params, &self.inputs(utterance, context, catalog))
    }

    pub fn accuracy(&self, examples: &[Example]) -> f64 {
        if examples.is_empty() {
            return 0.0;
        }
        let hits = examples
            .par_iter()
            .filter(|ex| forward(&self.config, &self.params, &ex.inputs()).argmax() == ex.action)
            .count();
        hits as f64 / examples.len() as f64
    }

    pub fn attribute_map(&self, pred: &Prediction) -> BTreeMap<String, f64> {
        self.config
            .attribute_heads
            .iter()
            .cloned()
            .zip(pred.attribute_probs.iter().copied())
            .collect()
    }
}

/// Trains on `train` with early stopping on `dev` action accuracy and returns
/// the best model with one log record per epoch.
pub fn train(
    config: ModelConfig,
    train: &DialogCorpus,
    dev: &DialogCorpus,
    catalog: &Catalog,
) -> Result<(FusionModel, Vec<LogRecord>), ModelError> {
    if train.n_rounds() == 0 {
        return Err(ModelError::EmptyTrain);
    }
    let vocab = Vocab::build(train.rounds().map(|(_, _, r)| r.user_utterance.as_str()), config.min_count);
    let mut model = FusionModel::new(config, vocab)?;
    let train_ex = model.examples(train, catalog)?;
    let dev_ex = model.examples(dev, catalog)?;
    let cfg = model.config.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut adam = Adam::new(&model.params, cfg.learning_rate, cfg.clip);
    let mut order: Vec<usize> = (0..train_ex.len()).collect();
    let mut log = Vec::new();
    let mut best: Option<(f64, ModelParams)> = None;
    let mut stale = 0;
    let mut step = 0;
    for _epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<Example> = idx.iter().map(|i| train_ex[*i].clone()).collect();
            let (l, g) = batch_grad(&cfg, &model.params, &batch);
            adam.step(&mut model.params, &g);
            total += l * batch.len() as f64;
            step += 1;
        }
        let dev_acc = (!dev_ex.is_empty()).then(|| model.accuracy(&dev_ex));
        log.push(LogRecord {
            step,
            loss: total / train_ex.len() as f64,
            dev_accuracy: dev_acc,
        });
        let Some(acc) = dev_acc else { continue };
        if best.as_ref().is_none_or(|(b, _)| acc > *b) {
            best = Some((acc, model.params.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    if let Some((_, p)) = best {
        model.params = p;
    }
    Ok((model, log))
}

/// Central finite-difference derivative of the batch loss with respect to
/// parameter `(tensor, offset)`.
pub fn numeric_grad(cfg: &ModelConfig, params: &ModelParams, batch: &[Example], tensor: usize, offset: usize, h: f64) -> f64 {
    let mut p = params.clone();
    p.slices_mut()[tensor][offset] += h;
    let up = batch_loss(cfg, &p, batch);
    p.slices_mut()[tensor][offset] -= 2.0 * h;
    let down = batch_loss(cfg, &p, batch);
    (up - down) / (2.0 * h)
}

/// Relative error used by the gradient check; exact agreement (including
/// both zero) is 0.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        0.0
    } else {
        diff / analytic.abs().max(numeric.abs()).max(1e-8)
    }
}

/// Synthetic examples with random tokens and scenes, for gradient checks
/// and overfitting tests.
pub fn random_examples(cfg: &ModelConfig, vocab_size: usize, n: usize, seed: u64) -> Vec<Example> {
    use rand::seq::IndexedRandom;
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.random_range(1..8);
            let k = *[1usize, 3, 4].choose(&mut rng).unwrap();
            Example {
                tokens: (0..len).map(|_| rng.random_range(0..vocab_size)).collect(),
                values: (0..k)
                    .map(|_| (0..cfg.context_attributes.len()).map(|_| rng.random_range(0..cfg.hash_buckets)).collect())
                    .collect(),
                tags: (0..k).map(|_| rng.random_range(0..UnitTag::ALL.len())).collect(),
                action: rng.random_range(0..cfg.actions.len()),
                attributes: (0..cfg.attribute_heads.len()).map(|_| rng.random_range(0..2) as f64).collect(),
                attributes_supervised: rng.random_bool(0.5),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::seq::IndexedRandom;
    use rand::Rng;

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            d_w: 6,
            d_h: 8,
            d_v: 3,
            hash_buckets: 16,
            ..ModelConfig::for_domain(Domain::Furniture)
        }
    }

    #[test]
    fn attend_uniform_and_single_key() {
        let q = array![[1.0, 2.0], [0.0, -1.0]];
        let k = array![[0.0, 0.0], [0.0, 0.0], [0.0, 0.0]];
        let v = array![[1.0, 0.0], [2.0, 4.0], [3.0, 8.0]];
        let out = attend(q.view(), k.view(), v.view()).unwrap();
        for row in out.rows() {
            assert!((row[0] - 2.0).abs() < 1e-12 && (row[1] - 4.0).abs() < 1e-12);
        }
        let k1 = array![[5.0, -3.0]];
        let v1 = array![[7.0, 9.0]];
        let out = attend(q.view(), k1.view(), v1.view()).unwrap();
        assert_eq!(out, array![[7.0, 9.0], [7.0, 9.0]]);
        assert!(attend(q.view(), array![[1.0]].view(), v1.view()).is_err());
    }

    #[test]
    fn attend_two_by_two_by_hand() {
        // scores / sqrt(2): row 0 -> [1, 0]/√2, row 1 -> [0, 2]/√2
        let q = array![[1.0, 0.0], [0.0, 1.0]];
        let k = array![[1.0, 0.0], [0.0, 2.0]];
        let v = array![[1.0, 0.0], [0.0, 1.0]];
        let out = attend(q.view(), k.view(), v.view()).unwrap();
        let w0 = 1.0 / (1.0 + (-1.0 / 2f64.sqrt()).exp());
        let w1 = 1.0 / (1.0 + (2.0 / 2f64.sqrt()).exp());
        assert!((out[[0, 0]] - w0).abs() < 1e-12 && (out[[0, 1]] - (1.0 - w0)).abs() < 1e-12);
        assert!((out[[1, 0]] - w1).abs() < 1e-12 && (out[[1, 1]] - (1.0 - w1)).abs() < 1e-12);
    }

    #[test]
    fn attend_is_permutation_equivariant_in_keys() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = |rng: &mut ChaCha8Rng, n, m| Array2::from_shape_fn((n, m), |_| rng.random_range(-1.0..1.0));
        let q = r(&mut rng, 4, 5);
        let k = r(&mut rng, 3, 5);
        let v = r(&mut rng, 3, 2);
        let perm = [2, 0, 1];
        let a = attend(q.view(), k.view(), v.view()).unwrap();
        let b = attend(q.view(), k.select(Axis(0), &perm).view(), v.select(Axis(0), &perm).view()).unwrap();
        assert!((&a - &b).iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn encoder_matches_hand_product() {
        let cfg = small_cfg();
        let p = ModelParams::init(&cfg, 10, 1);
        let toks = [3, 0, 9, 3, 1];
        let u = encode_utterance(&toks, &p);
        assert_eq!(u.dim(), (5, 8));
        for (i, t) in toks.iter().enumerate() {
            for j in 0..8 {
                let manual: f64 = (0..cfg.d_w).map(|k| p.word_emb[[*t, k]] * p.w_enc[[k, j]]).sum();
                assert!((u[[i, j]] - manual).abs() < 1e-12);
            }
        }
        let empty = encode_utterance(&[], &p);
        assert_eq!(empty.row(0), encode_utterance(&[UNK], &p).row(0));
    }

    #[test]
    fn context_embedding_cases() {
        let mut cfg = small_cfg();
        cfg.context_attributes = vec!["a".into()];
        cfg.d_v = 1;
        cfg.d_h = 2;
        let mut p = ModelParams::zeros(&cfg, 3);
        let zero = embed_context(Array2::zeros((3, 2)).view(), &p, Nonlinearity::Tanh).unwrap();
        assert!(zero.iter().all(|x| *x == 0.0));
        p.w_ctx = array![[1.0, 2.0], [-1.0, 0.5]];
        p.b_ctx = array![0.1, -0.2];
        let out = embed_context(array![[1.0, 0.0], [0.5, 2.0]].view(), &p, Nonlinearity::Tanh).unwrap();
        let want = [[1.1f64.tanh(), 1.8f64.tanh()], [(-1.4f64).tanh(), 1.8f64.tanh()]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((out[[i, j]] - want[i][j]).abs() < 1e-12);
            }
        }
        assert!(embed_context(Array2::zeros((1, 3)).view(), &p, Nonlinearity::Tanh).is_err());
    }

    #[test]
    fn fuse_shapes_and_single_unit() {
        let u = array![[1.0, 2.0], [3.0, -1.0], [0.0, 0.5]];
        let m = array![[0.3, -0.7]];
        let f = fuse(u.view(), m.view()).unwrap();
        assert_eq!(f.dim(), (3, 4));
        for row in f.rows() {
            assert_eq!((row[2], row[3]), (0.3, -0.7));
        }
        let m2 = array![[0.3, -0.7], [1.0, 1.0]];
        let f2 = fuse(u.view(), m2.view()).unwrap();
        let manual = concatenate(Axis(1), &[u.view(), attend(u.view(), m2.view(), m2.view()).unwrap().view()]).unwrap();
        assert_eq!(f2, manual);
        assert!(fuse(u.view(), array![[1.0]].view()).is_err());
    }

    #[test]
    fn predict_hand_case() {
        let cfg = ModelConfig {
            d_h: 1,
            actions: vec!["a".into(), "b".into()],
            attribute_heads: vec!["x".into()],
            ..small_cfg()
        };
        let mut p = ModelParams::zeros(&cfg, 2);
        let fused = array![[1.0, 2.0], [3.0, 0.0]];
        let zero = predict_fused(fused.view(), &p);
        assert_eq!(zero.action_probs, vec![0.5, 0.5]);
        assert_eq!(zero.attribute_probs, vec![0.5]);
        // θ = [1, 0]: scores [1, 3]/√2
        p.theta = array![1.0, 0.0];
        p.w_act = array![[1.0, 0.0], [0.0, 1.0]];
        p.w_attr = array![[1.0], [-1.0]];
        let pred = predict_fused(fused.view(), &p);
        let a0 = 1.0 / (1.0 + (2.0 / 2f64.sqrt()).exp());
        let q = [a0 * 1.0 + (1.0 - a0) * 3.0, a0 * 2.0];
        let pa = 1.0 / (1.0 + (q[1] - q[0]).exp());
        assert!((pred.action_probs[0] - pa).abs() < 1e-12);
        assert!((pred.attribute_probs[0] - 1.0 / (1.0 + (q[1] - q[0]).exp())).abs() < 1e-12);
        assert!((pred.action_probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn loss_closed_forms() {
        let uniform = Prediction {
            action_probs: vec![1.0 / 7.0; 7],
            attribute_probs: vec![],
        };
        assert!((loss(&uniform, 3, None) - 7f64.ln()).abs() < 1e-12);
        let perfect = Prediction {
            action_probs: vec![0.0, 1.0],
            attribute_probs: vec![1.0, 0.0],
        };
        assert_eq!(loss(&perfect, 1, Some(&[1.0, 0.0])), 0.0);
        let p = Prediction {
            action_probs: vec![0.2, 0.8],
            attribute_probs: vec![0.9, 0.3],
        };
        let want = -(0.2f64.ln()) - 0.9f64.ln() - 0.7f64.ln();
        assert!((loss(&p, 0, Some(&[1.0, 0.0])) - want).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cfg = small_cfg();
        for init in 0..3u64 {
            let p = ModelParams::init(&cfg, 12, init);
            let batch = random_examples(&cfg, 12, 5, 100 + init);
            let (_, g) = batch_grad(&cfg, &p, &batch);
            let mut rng = ChaCha8Rng::seed_from_u64(init);
            let sizes: Vec<usize> = p.slices().iter().map(|s| s.len()).collect();
            for _ in 0..40 {
                let t = rng.random_range(0..sizes.len());
                let o = rng.random_range(0..sizes[t]);
                let num = numeric_grad(&cfg, &p, &batch, t, o, 1e-4);
                let err = relative_error(g.slices()[t][o], num);
                assert!(err < 1e-4, "tensor {t} offset {o}: {} vs {num}", g.slices()[t][o]);
            }
        }
    }

    #[test]
    fn attribute_heads_idle_without_supervision() {
        let cfg = small_cfg();
        let p = ModelParams::init(&cfg, 12, 5);
        let mut batch = random_examples(&cfg, 12, 6, 8);
        batch.iter_mut().for_each(|e| e.attributes_supervised = false);
        let (_, g) = batch_grad(&cfg, &p, &batch);
        assert!(g.w_attr.iter().chain(g.b_attr.iter()).all(|x| *x == 0.0));
    }

    #[test]
    fn zero_loss_point_has_stationary_action_head() {
        let cfg = ModelConfig {
            actions: vec!["only".into()],
            ..small_cfg()
        };
        let p = ModelParams::init(&cfg, 12, 2);
        let mut batch = random_examples(&cfg, 12, 4, 3);
        batch.iter_mut().for_each(|e| {
            e.action = 0;
            e.attributes_supervised = false;
        });
        let (l, g) = batch_grad(&cfg, &p, &batch);
        assert!(l.abs() < 1e-12);
        assert!(g.w_act.iter().chain(g.b_act.iter()).all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn clipping_bounds_first_update() {
        let cfg = small_cfg();
        let mut p = ModelParams::init(&cfg, 12, 2);
        let before = p.clone();
        let mut g = ModelParams::zeros(&cfg, 12);
        g.b_act.fill(50.0);
        let mut adam = Adam::new(&p, 0.1, 1.0);
        adam.step(&mut p, &g);
        // Adam's first step moves by lr·sign(g) whatever the magnitude
        for (a, b) in p.b_act.iter().zip(before.b_act.iter()) {
            assert!(((b - a) - 0.1).abs() < 1e-6);
        }
    }

    #[test]
    fn overfits_ten_examples() {
        let cfg = ModelConfig {
            learning_rate: 1e-2,
            ..small_cfg()
        };
        let mut p = ModelParams::init(&cfg, 12, 4);
        let batch = random_examples(&cfg, 12, 10, 4);
        let mut adam = Adam::new(&p, cfg.learning_rate, cfg.clip);
        let mut prev = f64::INFINITY;
        for step in 0..500 {
            let (l, g) = batch_grad(&cfg, &p, &batch);
            if step < 50 {
                assert!(l < prev, "loss rose at step {step}");
            }
            prev = l;
            adam.step(&mut p, &g);
        }
        assert!(batch_loss(&cfg, &p, &batch) < 0.05);
    }

    #[test]
    fn vocab_min_count() {
        let texts = ["a b c", "a b", "a", "a b", "a"];
        let v = Vocab::build(texts, 3);
        assert!(v.contains("a") && v.contains("b") && !v.contains("c"));
        assert_eq!(v.id("c"), UNK);
        assert_eq!(v.encode(""), vec![UNK]);
        let words = ["x", "y"];
        let picked = words.choose(&mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(v.id(picked), UNK);
    }
}
