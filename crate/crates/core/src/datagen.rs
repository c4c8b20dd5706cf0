//! Seeded synthetic catalogs and fully annotated dialog corpora.
//!
//! Dialogs come from an agenda-based user simulator: each dialog samples a
//! goal from a real catalog item, draws its length from a discretised
//! truncated normal, and then alternates templated user and assistant turns.
//! Every template is an annotated string, so the gold parse, belief frame and
//! coreference links are produced by the same code path as the surface text.
//! Assistant turns execute [`ApiCall`]s on the environment and describe the
//! result.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::environment::{
    apply, context_of, matches_all, replay, ApiCall, ApiResult, ApiStatus, AttrValue, Catalog, CatalogItem,
    EnvState, Filter, FurnitureMode, ItemId, MultimodalContext, NavDirection, Payload, Position,
    RotateDirection, CAROUSEL_SIZE, MEMORY_SIZE,
};
use crate::label_lang::{
    extract_mentions, flatten, parse, validate, AnnotatedUtterance, AnnotationRecord, BeliefFrame, CorefLink,
};
use crate::ontology::{Domain, OntologyGraph};

pub const CORPUS_SCHEMA_VERSION: u32 = 1;
pub const TEMPLATE_INVENTORY: &str = "v1";

/// Attempts at drawing a satisfiable goal before giving up on a dialog.
const GOAL_ATTEMPTS: usize = 32;

const POOLS_JSON: &str = include_str!("../data/pools.json");

#[derive(Debug, Clone, Deserialize)]
pub struct CategoryPool {
    #[serde(rename = "type")]
    pub ty: String,
    pub noun: String,
    pub plural: String,
    pub price: [f64; 2],
    #[serde(default)]
    pub rooms: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct FurniturePools {
    pub categories: Vec<CategoryPool>,
    pub colors: Vec<String>,
    pub materials: Vec<String>,
    pub brands: Vec<String>,
    pub styles: Vec<String>,
    pub name_heads: Vec<String>,
    pub name_tails: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct FashionPools {
    pub categories: Vec<CategoryPool>,
    pub colors: Vec<String>,
    pub materials: Vec<String>,
    pub patterns: Vec<String>,
    pub brands: Vec<String>,
    pub sizes: Vec<String>,
    pub occasions: Vec<String>,
    pub seasons: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ValuePools {
    pub furniture: FurniturePools,
    pub fashion: FashionPools,
}

impl ValuePools {
    pub fn shipped() -> &'static ValuePools {
        static POOLS: OnceLock<ValuePools> = OnceLock::new();
        POOLS.get_or_init(|| serde_json::from_str(POOLS_JSON).expect("shipped value pools are valid JSON"))
    }

    pub fn categories(&self, domain: Domain) -> &[CategoryPool] {
        match domain {
            Domain::Furniture => &self.furniture.categories,
            Domain::Fashion => &self.fashion.categories,
        }
    }

    pub fn category(&self, domain: Domain, ty: &str) -> Option<&CategoryPool> {
        self.categories(domain).iter().find(|c| c.ty == ty)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GenError {
    #[error("a catalog needs at least {min} items, got {got}")]
    TooFewItems { min: usize, got: usize },
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error("dialog {dialog}: no satisfiable goal after {GOAL_ATTEMPTS} attempts")]
    Unsatisfiable { dialog: usize },
    #[error("template produced an invalid annotation `{text}`: {message}")]
    Template { text: String, message: String },
    #[error("split ratios must be non-negative and sum to at most 1, got {0:?}")]
    Ratios([f64; 4]),
}

fn money(p: f64) -> f64 {
    (p * 100.0).round() / 100.0
}

/// Seeded catalog with attribute values drawn from the shipped pools.
pub fn gen_catalog(domain: Domain, n_items: usize, seed: u64) -> Result<Catalog, GenError> {
    if n_items < 3 {
        return Err(GenError::TooFewItems { min: 3, got: n_items });
    }
    let pools = ValuePools::shipped();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cats = pools.categories(domain);
    let mut items = Vec::with_capacity(n_items);
    for i in 0..n_items {
        // round-robin first so every category appears in small catalogs
        let cat = if i < cats.len() { &cats[i] } else { cats.choose(&mut rng).unwrap() };
        let mut a = BTreeMap::new();
        let text = |s: &String| AttrValue::Text(s.clone());
        a.insert("category".to_string(), AttrValue::Text(cat.ty.clone()));
        let price = rng.random_range(cat.price[0]..cat.price[1]).floor() + 0.99;
        a.insert("price".into(), AttrValue::Dec(money(price)));
        let rating = rng.random_range(250..=500) as f64 / 100.0;
        a.insert("customerRating".into(), AttrValue::Dec(rating));
        a.insert("amountInStock".into(), AttrValue::Int(rng.random_range(0..40)));
        let id = match domain {
            Domain::Furniture => {
                let p = &pools.furniture;
                a.insert("color".into(), text(p.colors.choose(&mut rng).unwrap()));
                a.insert("material".into(), text(p.materials.choose(&mut rng).unwrap()));
                a.insert("brand".into(), text(p.brands.choose(&mut rng).unwrap()));
                a.insert("decorStyle".into(), text(p.styles.choose(&mut rng).unwrap()));
                a.insert("intendedRoom".into(), text(cat.rooms.choose(&mut rng).unwrap()));
                let name = format!(
                    "{}{}",
                    p.name_heads.choose(&mut rng).unwrap(),
                    p.name_tails.choose(&mut rng).unwrap()
                );
                a.insert("name".into(), AttrValue::Text(name));
                a.insert(
                    "width".into(),
                    AttrValue::Text(format!("{} inches", rng.random_range(12..96))),
                );
                a.insert("assemblyRequired".into(), AttrValue::Bool(rng.random_bool(0.5)));
                format!("F{:04}", i + 1)
            }
            Domain::Fashion => {
                let p = &pools.fashion;
                a.insert("color".into(), text(p.colors.choose(&mut rng).unwrap()));
                a.insert("material".into(), text(p.materials.choose(&mut rng).unwrap()));
                a.insert("pattern".into(), text(p.patterns.choose(&mut rng).unwrap()));
                a.insert("brand".into(), text(p.brands.choose(&mut rng).unwrap()));
                a.insert("forOccasion".into(), text(p.occasions.choose(&mut rng).unwrap()));
                a.insert("forSeason".into(), text(p.seasons.choose(&mut rng).unwrap()));
                let lo = rng.random_range(0..p.sizes.len() - 1);
                let hi = rng.random_range(lo + 1..p.sizes.len());
                a.insert("availableSizes".into(), AttrValue::List(p.sizes[lo..=hi].to_vec()));
                format!("C{:04}", i + 1)
            }
        };
        items.push(CatalogItem {
            item_id: id,
            domain,
            attributes: a,
        });
    }
    Ok(Catalog::new(domain, items))
}

/// Round-count distribution: a normal with standard deviation `sd`,
/// discretised to integers and truncated to `[min, max]`, whose location is
/// fitted so the truncated mean equals `mean`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundDist {
    pub mean: f64,
    pub sd: f64,
    pub min: usize,
    pub max: usize,
}

fn normal_cdf(x: f64, mu: f64, sd: f64) -> f64 {
    Normal::new(mu, sd).map(|n| n.cdf(x)).unwrap_or(f64::NAN)
}

impl RoundDist {
    pub fn furniture() -> Self {
        Self {
            mean: 7.62,
            sd: 1.8,
            min: 4,
            max: 14,
        }
    }

    pub fn fashion() -> Self {
        Self {
            mean: 5.39,
            sd: 1.4,
            min: 3,
            max: 12,
        }
    }

    fn pmf_at(&self, mu: f64) -> Vec<f64> {
        let w: Vec<f64> = (self.min..=self.max)
            .map(|k| {
                let k = k as f64;
                normal_cdf(k + 0.5, mu, self.sd) - normal_cdf(k - 0.5, mu, self.sd)
            })
            .collect();
        let z: f64 = w.iter().sum();
        w.into_iter().map(|x| x / z).collect()
    }

    fn mean_at(&self, mu: f64) -> f64 {
        self.pmf_at(mu)
            .iter()
            .zip(self.min..=self.max)
            .map(|(p, k)| p * k as f64)
            .sum()
    }

    /// Probability of each round count `min..=max`.
    pub fn pmf(&self) -> Vec<f64> {
        let (mut lo, mut hi) = (self.min as f64 - 4.0 * self.sd, self.max as f64 + 4.0 * self.sd);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if self.mean_at(mid) < self.mean {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        self.pmf_at(0.5 * (lo + hi))
    }

    pub fn expected(&self) -> f64 {
        self.pmf()
            .iter()
            .zip(self.min..=self.max)
            .map(|(p, k)| p * k as f64)
            .sum()
    }
}

/// Simulator moves with their mixture weights.
pub const FURNITURE_MOVES: [&str; 9] = [
    "info", "rotate", "focus", "prefer", "check", "compare", "refine", "more", "disprefer",
];
pub const FASHION_MOVES: [&str; 9] = [
    "info", "info_memory", "search", "similar", "recall", "prefer", "disprefer", "check", "compare",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n_dialogs: usize,
    pub rounds: RoundDist,
    /// Mixture over the domain's mid-dialog moves; must sum to 1.
    pub move_weights: BTreeMap<String, f64>,
    /// Probability that the goal ends with a purchase.
    pub buy_rate: f64,
    /// Probability that a furniture dialog opens with a count question.
    pub count_open_rate: f64,
    pub templates: String,
    pub seed: u64,
}

impl GeneratorConfig {
    pub fn new(domain: Domain, n_dialogs: usize, seed: u64) -> Self {
        let (rounds, weights): (RoundDist, &[(&str, f64)]) = match domain {
            Domain::Furniture => (
                RoundDist::furniture(),
                &[
                    ("info", 0.26),
                    ("rotate", 0.20),
                    ("focus", 0.08),
                    ("prefer", 0.12),
                    ("check", 0.08),
                    ("compare", 0.08),
                    ("refine", 0.08),
                    ("more", 0.06),
                    ("disprefer", 0.04),
                ],
            ),
            Domain::Fashion => (
                RoundDist::fashion(),
                &[
                    ("info", 0.24),
                    ("info_memory", 0.08),
                    ("search", 0.14),
                    ("similar", 0.14),
                    ("recall", 0.08),
                    ("prefer", 0.08),
                    ("disprefer", 0.08),
                    ("check", 0.08),
                    ("compare", 0.08),
                ],
            ),
        };
        Self {
            n_dialogs,
            rounds,
            move_weights: weights.iter().map(|(k, w)| (k.to_string(), *w)).collect(),
            buy_rate: 0.7,
            count_open_rate: 0.15,
            templates: TEMPLATE_INVENTORY.to_string(),
            seed,
        }
    }

    pub fn validate(&self, domain: Domain) -> Result<(), GenError> {
        let bad = |m: String| Err(GenError::Config(m));
        let (lo, hi, moves): (usize, usize, &[&str]) = match domain {
            Domain::Furniture => (4, 14, &FURNITURE_MOVES),
            Domain::Fashion => (3, 12, &FASHION_MOVES),
        };
        let r = &self.rounds;
        if r.min < lo || r.max > hi || r.min > r.max {
            return bad(format!("round bounds [{}, {}] outside [{lo}, {hi}]", r.min, r.max));
        }
        if !(r.sd > 0.0 && r.mean >= r.min as f64 && r.mean <= r.max as f64) {
            return bad("round mean must lie within the bounds and sd must be positive".into());
        }
        if let Some(k) = self.move_weights.keys().find(|k| !moves.contains(&k.as_str())) {
            return bad(format!("unknown move `{k}` for {domain}"));
        }
        if self.move_weights.values().any(|w| w.is_nan() || *w < 0.0) {
            return bad("move weights must be non-negative".into());
        }
        let sum: f64 = self.move_weights.values().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return bad(format!("move weights sum to {sum}, expected 1"));
        }
        for (name, p) in [("buy_rate", self.buy_rate), ("count_open_rate", self.count_open_rate)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must be a probability"));
            }
        }
        if self.templates != TEMPLATE_INVENTORY {
            return bad(format!("unknown template inventory `{}`", self.templates));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundAnnotations {
    pub user: AnnotationRecord,
    pub assistant: AnnotationRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogRound {
    #[serde(rename = "U")]
    pub user_utterance: String,
    #[serde(rename = "A")]
    pub assistant_utterance: String,
    pub annotations: RoundAnnotations,
    /// Scene before the assistant acts.
    pub context: MultimodalContext,
    pub action: ApiCall,
    pub result: ApiResult,
    pub belief: BeliefFrame,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dialog {
    pub dialog_id: String,
    pub initial_state: EnvState,
    pub rounds: Vec<DialogRound>,
}

impl Dialog {
    pub fn actions(&self) -> Vec<ApiCall> {
        self.rounds.iter().map(|r| r.action.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogCorpus {
    pub schema_version: u32,
    pub domain: Domain,
    pub catalog_file: String,
    pub seed: u64,
    pub dialogs: Vec<Dialog>,
}

impl DialogCorpus {
    pub fn rounds(&self) -> impl Iterator<Item = (&Dialog, usize, &DialogRound)> {
        self.dialogs
            .iter()
            .flat_map(|d| d.rounds.iter().enumerate().map(move |(i, r)| (d, i, r)))
    }

    pub fn n_rounds(&self) -> usize {
        self.dialogs.iter().map(|d| d.rounds.len()).sum()
    }

    fn with_dialogs(&self, dialogs: Vec<Dialog>) -> Self {
        Self {
            schema_version: self.schema_version,
            domain: self.domain,
            catalog_file: self.catalog_file.clone(),
            seed: self.seed,
            dialogs,
        }
    }
}

/// An annotated template rendering plus coreference targets keyed by
/// mention (`TABLE`, `TABLE_1`, ...).
struct Utt {
    text: String,
    coref: Vec<(String, ItemId)>,
}

impl Utt {
    fn new(text: String) -> Self {
        Self { text, coref: Vec::new() }
    }

    fn link(mut self, key: impl Into<String>, item: &str) -> Self {
        self.coref.push((key.into(), item.to_string()));
        self
    }
}

fn esc(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        if matches!(c, '[' | ']' | '\\') {
            out.push('\\');
        }
        out.push(c);
    }
    out
}

fn slot(label: &str, value: &str) -> String {
    format!("[{label} {}]", esc(value))
}

fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut s = template.to_string();
    for (k, v) in vars {
        s = s.replace(&format!("{{{k}}}"), v);
    }
    s
}

fn seg(intent: &str, body: &str) -> String {
    format!("[DA:{intent} {body}]")
}

fn price_text(p: f64) -> String {
    format!("${p:.2}")
}

fn value_text(v: &AttrValue) -> String {
    match v {
        AttrValue::Dec(d) => format!("{d:.2}"),
        other => other.to_string(),
    }
}

fn cap(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn position_of(state: &EnvState, item: &str) -> Option<Position> {
    let EnvState::Furniture(s) = state else { return None };
    let FurnitureMode::Carousel(c) = &s.mode else { return None };
    c.slots()
        .iter()
        .position(|x| x.map(String::as_str) == Some(item))
        .map(|i| Position::ALL[i])
}

fn adj_position(p: Position) -> &'static str {
    match p {
        Position::Left => "left",
        Position::Center => "middle",
        Position::Right => "right",
    }
}

fn loc_position(p: Position) -> &'static str {
    match p {
        Position::Left => "on the left",
        Position::Center => "in the middle",
        Position::Right => "on the right",
    }
}

/// Question wording per attribute; `{r}` is the annotated item reference.
fn ask_templates(attr: &str) -> &'static [&'static str] {
    match attr {
        "price" => &["How much is {r}?", "What does {r} cost?", "What's the price of {r}?"],
        "customerRating" => &["How is {r} rated?", "What are the reviews like for {r}?"],
        "material" => &["What is {r} made of?", "What material is {r}?"],
        "brand" => &["Who makes {r}?", "What brand is {r}?"],
        "color" => &["What color is {r}?", "What colors does {r} come in?"],
        "intendedRoom" => &["Which room is {r} meant for?", "Where would {r} go?"],
        "width" => &["How wide is {r}?", "What are the dimensions of {r}?"],
        "decorStyle" => &["What style is {r}?"],
        "availableSizes" => &["What sizes does {r} come in?", "Which sizes are available for {r}?"],
        "pattern" => &["What pattern is {r}?"],
        _ => &["Tell me more about {r}."],
    }
}

fn attr_word(attr: &str) -> &'static str {
    match attr {
        "price" => "price",
        "customerRating" => "rating",
        "material" => "material",
        "brand" => "brand",
        "color" => "color",
        "intendedRoom" => "intended room",
        "width" => "width",
        "decorStyle" => "style",
        "availableSizes" => "sizes",
        "pattern" => "pattern",
        _ => "details",
    }
}

/// Verb phrase stating an attribute value, with the slot prefix `p`.
fn fact(attr: &str, v: &AttrValue, p: &str) -> String {
    let l = |a: &str| format!("{p}.{a}");
    match attr {
        "price" => format!("costs {}", slot(&l(attr), &price_text(v.as_f64().unwrap_or(0.0)))),
        "customerRating" => format!("is rated {}", slot(&l(attr), &value_text(v))),
        "material" => format!("is made of {}", slot(&l(attr), &value_text(v))),
        "brand" => format!("is made by [{} {}]", l(attr), slot(".name", &value_text(v))),
        "color" => format!("is {}", slot(&l(attr), &value_text(v))),
        "intendedRoom" => format!("is meant for the {}", slot(&l(attr), &value_text(v))),
        "width" => format!("is {} wide", slot(&l(attr), &value_text(v))),
        "decorStyle" => format!("has a {} look", slot(&l(attr), &value_text(v))),
        "availableSizes" => format!("comes in {}", slot(&l(attr), &value_text(v))),
        "pattern" => format!("has a {} pattern", slot(&l(attr), &value_text(v))),
        _ => format!("has {}", slot(&l(attr), &value_text(v))),
    }
}

struct Session<'a> {
    domain: Domain,
    catalog: &'a Catalog,
    g: &'a OntologyGraph,
    pools: &'a ValuePools,
    cfg: &'a GeneratorConfig,
    rng: ChaCha8Rng,
    state: EnvState,
    rounds: Vec<DialogRound>,
}

impl<'a> Session<'a> {
    fn pick<T: Copy>(&mut self, xs: &[T]) -> T {
        *xs.choose(&mut self.rng).expect("non-empty choice")
    }

    fn item(&self, id: &str) -> &'a CatalogItem {
        self.catalog.get(id).expect("generator only references catalog items")
    }

    fn cat(&self, item: &CatalogItem) -> &'a CategoryPool {
        let ty = item.category().unwrap_or_default();
        self.pools
            .category(self.domain, ty)
            .unwrap_or(&self.pools.categories(self.domain)[0])
    }

    fn text(&self, id: &str, attr: &str) -> String {
        self.item(id).get(attr).map(value_text).unwrap_or_default()
    }

    fn annotate(&self, u: &Utt) -> Result<AnnotatedUtterance, GenError> {
        let bad = |m: String| GenError::Template {
            text: u.text.clone(),
            message: m,
        };
        let mut a = parse(&u.text, self.g, self.domain).map_err(|e| bad(e.to_string()))?;
        let mentions = extract_mentions(&a);
        for (key, item) in &u.coref {
            let m = mentions
                .iter()
                .find(|m| &m.key() == key)
                .ok_or_else(|| bad(format!("no mention `{key}`")))?;
            a.coref_links.push(CorefLink {
                mention: m.path.clone(),
                item_id: item.clone(),
            });
        }
        if let Some(d) = validate(&a, self.g, self.domain).first() {
            return Err(bad(d.to_string()));
        }
        Ok(a)
    }

    /// Executes one round: the user speaks, the assistant acts and replies.
    fn round(
        &mut self,
        user: Utt,
        call: ApiCall,
        reply: impl FnOnce(&mut Self, &EnvState, &ApiResult) -> Utt,
    ) -> Result<(), GenError> {
        let context = context_of(&self.state);
        let (next, result) = apply(&self.state, &call, self.catalog);
        let asst = if result.is_error() {
            self.apology(&next)
        } else {
            reply(self, &next, &result)
        };
        let u = self.annotate(&user)?;
        let a = self.annotate(&asst)?;
        self.rounds.push(DialogRound {
            user_utterance: u.raw_text.clone(),
            assistant_utterance: a.raw_text.clone(),
            annotations: RoundAnnotations {
                user: AnnotationRecord::from(&u),
                assistant: AnnotationRecord::from(&a),
            },
            context,
            action: call,
            result,
            belief: flatten(&u),
        });
        self.state = next;
        Ok(())
    }

    fn apology(&mut self, state: &EnvState) -> Utt {
        let ty = match state.attended_item() {
            Some(id) => self.item(id).category().unwrap_or("OBJECT").to_string(),
            None => OntologyGraph::domain_root(self.domain).to_string(),
        };
        let body = self.pick(&["Sorry, I couldn't find that.", "I'm afraid I can't do that right now."]);
        Utt::new(seg(&format!("INFORM:GET:{ty}"), body))
    }
}

// ---------------------------------------------------------------- furniture

struct FurnitureGoal {
    target: ItemId,
    filters: Vec<Filter>,
    unused: Vec<&'static str>,
}

fn price_cap(p: f64) -> f64 {
    ((p / 50.0).floor() + 1.0) * 50.0
}

fn constraint(attr: &str, item: &CatalogItem) -> Filter {
    match attr {
        "price" => Filter::Range {
            attribute: "price".into(),
            min: None,
            max: Some(price_cap(item.price().unwrap_or(0.0))),
        },
        a => Filter::Equals {
            attribute: a.into(),
            value: item.text(a).unwrap_or_default().to_string(),
        },
    }
}

impl Session<'_> {
    /// Annotated plural noun phrase for a filter set, e.g.
    /// `[O.color brown] tables [O.price under $500]`.
    fn describe(&self, filters: &[Filter], cat: &CategoryPool) -> String {
        let mut pre = Vec::new();
        let mut post = Vec::new();
        for f in filters {
            match f {
                Filter::Equals { attribute, value } => match attribute.as_str() {
                    "category" => {}
                    "intendedRoom" => post.push(format!("for the {}", slot("O.intendedRoom", value))),
                    a => pre.push(slot(&format!("O.{a}"), value)),
                },
                Filter::Range { attribute, max, .. } => {
                    if let Some(m) = max {
                        post.push(slot(&format!("O.{attribute}"), &format!("under ${m:.0}")));
                    }
                }
                Filter::Contains { attribute, value } => post.push(format!("in {}", slot(&format!("O.{attribute}"), value))),
            }
        }
        let mut parts = pre;
        parts.push(cat.plural.clone());
        parts.extend(post);
        parts.join(" ")
    }

    fn furniture_goal(&mut self, dialog: usize) -> Result<FurnitureGoal, GenError> {
        for _ in 0..GOAL_ATTEMPTS {
            let target = self.catalog.items().choose(&mut self.rng).expect("non-empty catalog");
            let mut pool = ["color", "material", "intendedRoom", "price"];
            pool.shuffle(&mut self.rng);
            let extra = self.rng.random_range(0..=2);
            let mut filters = vec![constraint("category", target)];
            filters.extend(pool[..extra].iter().map(|a| constraint(a, target)));
            if self.catalog.items().iter().any(|it| matches_all(&filters, it)) {
                return Ok(FurnitureGoal {
                    target: target.item_id.clone(),
                    filters,
                    unused: pool[extra..].to_vec(),
                });
            }
        }
        Err(GenError::Unsatisfiable { dialog })
    }

    fn furniture_ref(&mut self, target: &str) -> String {
        let it = self.item(target);
        let noun = &self.cat(it).noun;
        let name = slot("O.name", &self.text(target, "name"));
        match position_of(&self.state, target) {
            Some(p) => {
                let opts = [
                    format!("the {} one", adj_position(p)),
                    format!("the {noun} {}", loc_position(p)),
                    format!("the {name} {noun}"),
                    format!("[USER.attentionOn that] {noun}"),
                ];
                opts.choose(&mut self.rng).unwrap().clone()
            }
            None => {
                let opts = [
                    "it".to_string(),
                    "this one".to_string(),
                    format!("[USER.attentionOn this] {noun}"),
                    format!("the {name} {noun}"),
                ];
                opts.choose(&mut self.rng).unwrap().clone()
            }
        }
    }

    fn focus_reply(&mut self, ty: &str, item: &str) -> Utt {
        let it = self.item(item);
        let noun = self.cat(it).noun.clone();
        let name = slot("O.name", &self.text(item, "name"));
        let body = match self.rng.random_range(0..3) {
            0 => format!(
                "Here is the {name} {noun} up close. It is {} and made of {}.",
                slot("O.color", &self.text(item, "color")),
                slot("O.material", &self.text(item, "material"))
            ),
            1 => format!(
                "This is the {name} {noun} from [O.brand {}].",
                slot(".name", &self.text(item, "brand"))
            ),
            _ => format!("Here's a closer look at the {name} {noun}."),
        };
        Utt::new(seg(&format!("INFORM:GET:{ty}"), &body)).link(ty, item)
    }

    fn carousel_reply(&mut self, ty: &str, result: &ApiResult, filters: &[Filter], cat: &CategoryPool) -> Utt {
        let shown = matches!(&result.payload, Payload::Items { item_ids } if !item_ids.is_empty());
        let desc = self.describe(filters, cat);
        let body = if !shown {
            format!("Sorry, I don't have any {desc}.")
        } else {
            let t = self.pick(&["Here are some {d}.", "I found these {d}.", "Sure, here are a few {d}."]);
            fill(t, &[("d", &desc)])
        };
        Utt::new(seg(&format!("INFORM:GET:{ty}"), &body))
    }

    fn furniture_dialog(&mut self, index: usize, n_rounds: usize) -> Result<(), GenError> {
        let mut goal = self.furniture_goal(index)?;
        let mut target = goal.target.clone();
        let t_item = self.item(&target);
        let cat = self.cat(t_item);
        let ty = cat.ty.clone();
        let noun = cat.noun.clone();

        // opening: search or count
        let desc = self.describe(&goal.filters, cat);
        let filters = goal.filters.clone();
        if self.rng.random_bool(self.cfg.count_open_rate) {
            let user = Utt::new(seg(&format!("ASK:COUNT:{ty}"), &format!("How many {desc} do you have?")));
            self.round(user, ApiCall::SearchFurniture { filters }, |s, st, _| {
                let n = match st {
                    EnvState::Furniture(f) => match &f.mode {
                        FurnitureMode::Carousel(c) => c.results.len(),
                        _ => 0,
                    },
                    _ => 0,
                };
                let d = s.describe(&goal.filters, cat);
                Utt::new(seg(
                    &format!("INFORM:COUNT:{ty}"),
                    &format!("I found {} {d}.", slot("A.amount", &n.to_string())),
                ))
            })?;
        } else {
            let t = self.pick(&[
                "I'm looking for {d}.",
                "Can you show me {d}?",
                "Do you have any {d}?",
                "I need {d}.",
                "Hi! I want to see {d}.",
            ]);
            let user = Utt::new(seg(&format!("REQUEST:GET:{ty}"), &fill(t, &[("d", &desc)])));
            let f2 = filters.clone();
            self.round(user, ApiCall::SearchFurniture { filters }, |s, _, r| {
                s.carousel_reply(&ty, r, &f2, cat)
            })?;
        }

        // a shopper settles on something from the first couple of pages
        if let EnvState::Furniture(f) = &self.state {
            if let FurnitureMode::Carousel(c) = &f.mode {
                let early = &c.results[..c.results.len().min(2 * CAROUSEL_SIZE)];
                if !early.is_empty() && !early.contains(&target) {
                    target = early.choose(&mut self.rng).unwrap().clone();
                }
            }
        }
        let weights: Vec<(&'static str, f64)> = FURNITURE_MOVES
            .iter()
            .map(|m| (*m, self.cfg.move_weights.get(*m).copied().unwrap_or(0.0)))
            .collect();
        while self.rounds.len() + 1 < n_rounds {
            let focused = matches!(&self.state, EnvState::Furniture(f) if matches!(f.mode, FurnitureMode::Focused { .. }));
            let pos = position_of(&self.state, &target);
            if !focused && pos.is_none() {
                self.navigate_to(&ty, cat, &target)?;
                continue;
            }
            let visible_others: Vec<(Position, ItemId)> = match &self.state {
                EnvState::Furniture(f) => match &f.mode {
                    FurnitureMode::Carousel(c) => c
                        .slots()
                        .iter()
                        .enumerate()
                        .filter_map(|(i, x)| x.filter(|x| **x != target).map(|x| (Position::ALL[i], x.clone())))
                        .collect(),
                    _ => Vec::new(),
                },
                _ => Vec::new(),
            };
            let applicable = |m: &str| match m {
                "focus" | "compare" | "disprefer" => !focused && (m == "focus" || !visible_others.is_empty()),
                "refine" => !goal.unused.is_empty(),
                _ => true,
            };
            let live: Vec<(&str, f64)> = weights.iter().copied().filter(|(m, w)| *w > 0.0 && applicable(m)).collect();
            if live.is_empty() {
                self.furniture_info(&ty, &target)?;
                continue;
            }
            let idx = WeightedIndex::new(live.iter().map(|(_, w)| *w))
                .expect("positive weights")
                .sample(&mut self.rng);
            match live[idx].0 {
                "info" => self.furniture_info(&ty, &target)?,
                "rotate" => self.furniture_rotate(&ty, &target, pos)?,
                "focus" => {
                    let p = pos.expect("focus only in carousel");
                    let t = self.pick(&[
                        "Can I take a closer look at the {n} {l}?",
                        "Let me see the {a} one up close.",
                        "Zoom in on the {a} one, please.",
                        "Can you show me the {a} {n}?",
                    ]);
                    let body = fill(t, &[("n", &noun), ("l", loc_position(p)), ("a", adj_position(p))]);
                    let user = Utt::new(seg(&format!("REQUEST:GET:{ty}"), &body)).link(ty.clone(), &target);
                    let tgt = target.clone();
                    self.round(user, ApiCall::FocusOnFurniture { position: p }, |s, _, _| s.focus_reply(&ty, &tgt))?;
                }
                "prefer" => {
                    let t = self.pick(&[
                        "I really like [USER.attentionOn that] one.",
                        "[USER.attentionOn This] {n} looks great.",
                        "Oh, I love [USER.attentionOn that] {n}!",
                    ]);
                    let user =
                        Utt::new(seg(&format!("INFORM:PREFER:{ty}"), &fill(t, &[("n", &noun)]))).link(ty.clone(), &target);
                    let tgt = target.clone();
                    match pos {
                        Some(p) => self.round(user, ApiCall::FocusOnFurniture { position: p }, |s, _, _| {
                            s.focus_reply(&ty, &tgt)
                        })?,
                        None => self.round(user, ApiCall::None, |s, _, _| {
                            let b = s.pick(&[
                                "Would you like me to add it to your cart?",
                                "Great choice. Should I add it to your cart?",
                            ]);
                            Utt::new(seg(&format!("PROMPT:ADD_TO_CART:{ty}"), b)).link(ty.clone(), &tgt)
                        })?,
                    }
                }
                "check" => {
                    let attr = self.pick(&["color", "material"]);
                    let truth = self.text(&target, attr);
                    let pool = match attr {
                        "color" => &self.pools.furniture.colors,
                        _ => &self.pools.furniture.materials,
                    };
                    let asked = if self.rng.random_bool(0.5) {
                        truth.clone()
                    } else {
                        pool.choose(&mut self.rng).unwrap().clone()
                    };
                    let r = self.furniture_ref(&target);
                    let t = match attr {
                        "color" => self.pick(&["Is {r} {c}?", "Does {r} come in {c}?"]),
                        _ => self.pick(&["Is {r} made of {c}?", "Is {r} {c}?"]),
                    };
                    let body = fill(t, &[("r", &r), ("c", &slot(".check", &asked))]);
                    let user = Utt::new(seg(&format!("REQUEST:CHECK:{ty}.{attr}"), &cap_first(&body))).link(ty.clone(), &target);
                    let call = ApiCall::SpecifyInfo {
                        item_id: target.clone(),
                        attributes: vec![attr.to_string()],
                    };
                    self.round(user, call, |_, _, _| {
                        let body = if asked == truth {
                            format!("Yes, it is {}.", slot(".check", &asked))
                        } else {
                            format!("No, it is {}.", slot(&format!("O.{attr}"), &truth))
                        };
                        Utt::new(seg(&format!("INFORM:CHECK:{ty}.{attr}"), &body))
                    })?;
                }
                "compare" => {
                    let p = pos.expect("compare only in carousel");
                    let (xp, x) = visible_others.choose(&mut self.rng).unwrap().clone();
                    let attr = self.pick(&["price", "customerRating"]);
                    let cmp = if attr == "price" { "cheaper" } else { "rated higher" };
                    let body = format!(
                        "Is the {} [A.comp:{ty}_1 one] {cmp} than the {} [A.comp:{ty}_2 one]?",
                        adj_position(p),
                        adj_position(xp)
                    );
                    let user = Utt::new(seg(&format!("REQUEST:COMPARE:{ty}.{attr}"), &body))
                        .link(format!("{ty}_1"), &target)
                        .link(format!("{ty}_2"), &x);
                    let call = ApiCall::SpecifyInfo {
                        item_id: x.clone(),
                        attributes: vec![attr.to_string()],
                    };
                    self.round(user, call, |s, _, _| {
                        let v = s.item(&x).get(attr).cloned().unwrap_or(AttrValue::Dec(0.0));
                        let body = format!("The {} [A.comp:{ty}_1 one] {}.", adj_position(xp), fact(attr, &v, "O"));
                        Utt::new(seg(&format!("INFORM:COMPARE:{ty}.{attr}"), &body)).link(format!("{ty}_1"), &x)
                    })?;
                }
                "refine" => {
                    let attr = goal.unused.remove(0);
                    let t_item = self.item(&target);
                    goal.filters.push(constraint(attr, t_item));
                    let added = self.describe(&goal.filters[goal.filters.len() - 1..], cat);
                    let body = match attr {
                        "intendedRoom" | "price" => {
                            let t = self.pick(&["Only show me {d}.", "Can you narrow it down to {d}?"]);
                            fill(t, &[("d", &added)])
                        }
                        _ => {
                            let v = slot(&format!("O.{attr}"), t_item.text(attr).unwrap_or_default());
                            let t = self.pick(&["Only show me {v} ones.", "Do you have any {v} ones?", "Can you narrow it down to {v} {p}?"]);
                            fill(t, &[("v", &v), ("p", &cat.plural)])
                        }
                    };
                    let user = Utt::new(seg(&format!("REQUEST:REFINE:{ty}.{attr}"), &body));
                    let filters = goal.filters.clone();
                    self.round(user, ApiCall::SearchFurniture { filters: filters.clone() }, |s, _, _| {
                        let d = s.describe(&filters, cat);
                        let t = s.pick(&["I've limited the results to {d}.", "Here are only {d} now."]);
                        Utt::new(seg(&format!("INFORM:REFINE:{ty}.{attr}"), &fill(t, &[("d", &d)])))
                    })?;
                }
                "more" => {
                    let t = self.pick(&[
                        "Can you show me [O.sequential more] options?",
                        "What else do you have?",
                        "Show me [O.sequential other] {p}.",
                        "Do you have [O.sequential more] {p}?",
                    ]);
                    let user = Utt::new(seg(&format!("REQUEST:GET:{ty}"), &fill(t, &[("p", &cat.plural)])));
                    self.round(user, ApiCall::NavigateCarousel { direction: NavDirection::Next }, |s, _, r| {
                        more_reply(s, &ty, cat, r)
                    })?;
                }
                "disprefer" => {
                    let (xp, x) = visible_others.choose(&mut self.rng).unwrap().clone();
                    let body = if self.rng.random_bool(0.5) {
                        format!("I'm not a fan of the {} one.", slot("O.color", &self.text(&x, "color")))
                    } else {
                        format!("I don't like the {} one.", adj_position(xp))
                    };
                    let user = Utt::new(seg(&format!("INFORM:DISPREFER:{ty}"), &body)).link(ty.clone(), &x);
                    let tp = pos.expect("disprefer only in carousel");
                    let tgt = target.clone();
                    self.round(user, ApiCall::None, |_, _, _| {
                        let body = format!("No problem. What do you think of the {} one?", adj_position(tp));
                        Utt::new(seg(&format!("PROMPT:PREFER:{ty}"), &body)).link(ty.clone(), &tgt)
                    })?;
                }
                other => unreachable!("unknown move {other}"),
            }
        }

        // closing
        let focused = matches!(&self.state, EnvState::Furniture(f) if matches!(f.mode, FurnitureMode::Focused { .. }));
        if self.rng.random_bool(self.cfg.buy_rate) {
            let color = slot("O.color", &self.text(&target, "color"));
            let t = self.pick(&[
                "I'll take it!",
                "Please add it to my cart.",
                "Add [USER.attentionOn this] {n} to my cart.",
                "I want to buy the {c} one.",
            ]);
            let body = fill(t, &[("n", &noun), ("c", &color)]);
            let user = Utt::new(seg(&format!("REQUEST:ADD_TO_CART:{ty}"), &body)).link(ty.clone(), &target);
            let call = ApiCall::AddToCart {
                item_id: (!focused).then(|| target.clone()),
            };
            let tgt = target.clone();
            self.round(user, call, |s, _, _| {
                let body = if s.rng.random_bool(0.5) {
                    format!("I've added the {} {noun} to your cart.", slot("O.name", &s.text(&tgt, "name")))
                } else {
                    format!(
                        "Done, the {} {noun} is in your cart.",
                        slot("O.price", &price_text(s.item(&tgt).price().unwrap_or(0.0)))
                    )
                };
                Utt::new(seg(&format!("INFORM:ADD_TO_CART:{ty}"), &body)).link(ty.clone(), &tgt)
            })?;
        } else {
            let b = self.pick(&["I like it, but I'll think about it.", "Thanks, I'll keep it in mind."]);
            let user = Utt::new(seg(&format!("INFORM:PREFER:{ty}"), b));
            self.round(user, ApiCall::None, |s, _, _| {
                let t = s.pick(&["Sure, let me know if you want to see more {p}.", "Of course. I'm here if you need anything else."]);
                Utt::new(seg(&format!("PROMPT:GET:{ty}"), &fill(t, &[("p", &cat.plural)])))
            })?;
        }
        Ok(())
    }

    fn navigate_to(&mut self, ty: &str, cat: &CategoryPool, target: &str) -> Result<(), GenError> {
        let dir = match &self.state {
            EnvState::Furniture(f) => match &f.mode {
                FurnitureMode::Carousel(c) => {
                    let at = c.results.iter().position(|x| x == target).unwrap_or(0);
                    if at < c.offset {
                        NavDirection::Previous
                    } else {
                        NavDirection::Next
                    }
                }
                _ => NavDirection::Next,
            },
            _ => NavDirection::Next,
        };
        let user = match dir {
            NavDirection::Next => {
                let t = self.pick(&[
                    "Can you show me [O.sequential more] options?",
                    "What else do you have?",
                    "Show me [O.sequential other] {p}.",
                    "Do you have [O.sequential more] {p}?",
                ]);
                fill(t, &[("p", &cat.plural)])
            }
            NavDirection::Previous => {
                let t = self.pick(&[
                    "Can you go back to the [O.sequential previous] ones?",
                    "Show me the [O.sequential earlier] {p} again.",
                ]);
                fill(t, &[("p", &cat.plural)])
            }
        };
        let user = Utt::new(seg(&format!("REQUEST:GET:{ty}"), &user));
        self.round(user, ApiCall::NavigateCarousel { direction: dir }, |s, _, r| more_reply(s, ty, cat, r))
    }

    fn furniture_info(&mut self, ty: &str, target: &str) -> Result<(), GenError> {
        let pool = ["price", "customerRating", "material", "brand", "color", "intendedRoom", "width", "decorStyle"];
        let attrs: Vec<&str> = if self.rng.random_bool(0.2) {
            pool.choose_multiple(&mut self.rng, 2).copied().collect()
        } else {
            vec![self.pick(&pool)]
        };
        self.info_round(ty, target, &attrs, None)
    }

    /// Info question about `target`; `reference` overrides the phrase used
    /// to name it.
    fn info_round(&mut self, ty: &str, target: &str, attrs: &[&str], reference: Option<String>) -> Result<(), GenError> {
        let r = match reference {
            Some(r) => r,
            None => match self.domain {
                Domain::Furniture => self.furniture_ref(target),
                Domain::Fashion => self.fashion_ref(),
            },
        };
        let (intent_attr, body) = if attrs.len() == 1 {
            let t = self.pick(ask_templates(attrs[0]));
            (attrs[0].to_string(), fill(t, &[("r", &r)]))
        } else {
            let body = format!("What's the {} and {} of {r}?", attr_word(attrs[0]), attr_word(attrs[1]));
            ("info".to_string(), body)
        };
        let user = Utt::new(seg(&format!("ASK:GET:{ty}.{intent_attr}"), &body)).link(ty, target);
        let call = ApiCall::SpecifyInfo {
            item_id: target.to_string(),
            attributes: attrs.iter().map(|a| a.to_string()).collect(),
        };
        self.round(user, call, |s, _, res| {
            let Payload::Info { values, .. } = &res.payload else {
                return s.apology(&s.state.clone());
            };
            let p = if values.len() > 1 { "INFO" } else { "O" };
            let facts: Vec<String> = values.iter().map(|v| fact(&v.attribute, &v.value, p)).collect();
            let subject = s.pick(&["It", "This one", "That one"]);
            let body = format!("{subject} {}.", facts.join(" and "));
            Utt::new(seg(&format!("INFORM:GET:{ty}.{intent_attr}"), &body))
        })
    }

    fn furniture_rotate(&mut self, ty: &str, target: &str, pos: Option<Position>) -> Result<(), GenError> {
        let (e, dir) = self.pick(&[
            ("LEFT", RotateDirection::Left),
            ("RIGHT", RotateDirection::Right),
            ("FRONT", RotateDirection::Front),
            ("BACK", RotateDirection::Back),
            ("BACK", RotateDirection::Back),
            ("UP", RotateDirection::Up),
            ("DOWN", RotateDirection::Down),
        ]);
        let body = match dir {
            RotateDirection::Left | RotateDirection::Right => {
                let w = slot(&format!("A.rotateTo:{e}"), &e.to_lowercase());
                let t = self.pick(&["Can I see it from the {d}?", "Could you turn it to the {d}?", "Rotate it to the {d}, please."]);
                fill(t, &[("d", &w)])
            }
            RotateDirection::Front | RotateDirection::Back => {
                let w = slot(&format!("A.rotateTo:{e}"), &e.to_lowercase());
                let t = self.pick(&["Can you show me the {d} of it?", "Show me the {d} view.", "What does the {d} look like?"]);
                fill(t, &[("d", &w)])
            }
            RotateDirection::Up | RotateDirection::Down => {
                let word = if dir == RotateDirection::Up { "above" } else { "below" };
                let w = slot(&format!("A.rotateTo:{e}"), word);
                let t = self.pick(&["Can I see it from {d}?", "Show me the view from {d}."]);
                fill(t, &[("d", &w)])
            }
        };
        let user = Utt::new(seg(&format!("REQUEST:ROTATE:{ty}"), &body)).link(ty, target);
        match pos {
            // the item must be brought into focus before it can turn
            Some(p) => {
                let tgt = target.to_string();
                self.round(user, ApiCall::FocusOnFurniture { position: p }, |s, _, _| {
                    if s.rng.random_bool(0.5) {
                        let body = "Sure, let me bring it up close first.";
                        Utt::new(seg(&format!("CONFIRM:ROTATE:{ty}"), body))
                    } else {
                        s.focus_reply(ty, &tgt)
                    }
                })
            }
            None => self.round(user, ApiCall::RotateFurniture { direction: dir }, |s, _, r| {
                let body = if r.status == ApiStatus::Clamped {
                    "That is as far as it turns.".to_string()
                } else {
                    let word = match dir {
                        RotateDirection::Up => "top".to_string(),
                        RotateDirection::Down => "bottom".to_string(),
                        _ => e.to_lowercase(),
                    };
                    let t = s.pick(&["Here is the {d} view.", "This is how it looks from the {d}."]);
                    fill(t, &[("d", &slot(&format!("A.rotateTo:{e}"), &word))])
                };
                Utt::new(seg(&format!("INFORM:ROTATE:{ty}"), &body))
            }),
        }
    }
}

fn cap_first(s: &str) -> String {
    cap(s)
}

fn more_reply(s: &mut Session<'_>, ty: &str, cat: &CategoryPool, r: &ApiResult) -> Utt {
    let body = if r.status == ApiStatus::Clamped {
        format!("Those are all the {} I have.", cat.plural)
    } else {
        let t = s.pick(&["Here are a few more {p}.", "Sure, here are some other {p}.", "How about these?"]);
        fill(t, &[("p", &cat.plural)])
    };
    Utt::new(seg(&format!("INFORM:GET:{ty}"), &body))
}

// ---------------------------------------------------------------- fashion

impl Session<'_> {
    fn current(&self) -> ItemId {
        match &self.state {
            EnvState::Fashion(f) => f.current.clone(),
            EnvState::Furniture(_) => unreachable!("fashion session"),
        }
    }

    fn memory(&self) -> Vec<ItemId> {
        match &self.state {
            EnvState::Fashion(f) => f.memory.clone(),
            EnvState::Furniture(_) => unreachable!("fashion session"),
        }
    }

    fn ty_of(&self, id: &str) -> String {
        self.item(id).category().unwrap_or("CLOTHING").to_string()
    }

    fn fashion_ref(&mut self) -> String {
        let cur = self.current();
        let noun = self.cat(self.item(&cur)).noun.clone();
        let opts = [
            "it".to_string(),
            "this one".to_string(),
            format!("[USER.attentionOn this] {noun}"),
            format!("this {} {noun}", slot("O.color", &self.text(&cur, "color"))),
        ];
        opts.choose(&mut self.rng).unwrap().clone()
    }

    fn fashion_initial(&mut self, dialog: usize) -> Result<EnvState, GenError> {
        let items = self.catalog.items();
        if items.len() < MEMORY_SIZE + 2 {
            return Err(GenError::TooFewItems {
                min: MEMORY_SIZE + 2,
                got: items.len(),
            });
        }
        for _ in 0..GOAL_ATTEMPTS {
            let current = items.choose(&mut self.rng).unwrap();
            let ty = current.category();
            // prefer remembered items of the same kind, as after a short browse
            let same: Vec<&CatalogItem> = items
                .iter()
                .filter(|it| it.item_id != current.item_id && it.category() == ty)
                .collect();
            let mut memory: Vec<ItemId> = same
                .choose_multiple(&mut self.rng, 2)
                .map(|it| it.item_id.clone())
                .collect();
            while memory.len() < MEMORY_SIZE {
                let it = items.choose(&mut self.rng).unwrap();
                if it.item_id != current.item_id && !memory.contains(&it.item_id) {
                    memory.push(it.item_id.clone());
                }
            }
            memory.shuffle(&mut self.rng);
            if let Ok(s) = EnvState::fashion(current.item_id.clone(), memory, self.catalog) {
                return Ok(s);
            }
        }
        Err(GenError::Unsatisfiable { dialog })
    }

    fn search_reply(&mut self, st: &EnvState, from_memory: bool) -> Utt {
        let EnvState::Fashion(f) = st else { unreachable!("fashion session") };
        let id = f.current.clone();
        let ty = self.ty_of(&id);
        let noun = self.cat(self.item(&id)).noun.clone();
        let color = slot("O.color", &self.text(&id, "color"));
        let body = if from_memory {
            format!("Here's the {color} {noun} you saw earlier.")
        } else {
            match self.rng.random_range(0..3) {
                0 => format!(
                    "Here's [O.sequential another] {color} {noun} from [O.brand {}].",
                    slot(".name", &self.text(&id, "brand"))
                ),
                1 => format!(
                    "How about this {} {noun} for {}?",
                    slot("O.pattern", &self.text(&id, "pattern")),
                    slot("O.price", &price_text(self.item(&id).price().unwrap_or(0.0)))
                ),
                _ => format!("I found this {color} {noun} for you."),
            }
        };
        Utt::new(seg(&format!("INFORM:GET:{ty}"), &body)).link(ty, &id)
    }

    fn fashion_dialog(&mut self, index: usize, n_rounds: usize) -> Result<EnvState, GenError> {
        let initial = self.fashion_initial(index)?;
        self.state = initial.clone();
        let weights: Vec<(&'static str, f64)> = FASHION_MOVES
            .iter()
            .map(|m| (*m, self.cfg.move_weights.get(*m).copied().unwrap_or(0.0)))
            .collect();
        while self.rounds.len() + 1 < n_rounds {
            let cur = self.current();
            let ty = self.ty_of(&cur);
            let noun = self.cat(self.item(&cur)).noun.clone();
            let memory = self.memory();
            let live: Vec<(&str, f64)> = weights.iter().copied().filter(|(_, w)| *w > 0.0).collect();
            let mv = match WeightedIndex::new(live.iter().map(|(_, w)| *w)) {
                Ok(w) => live[w.sample(&mut self.rng)].0,
                Err(_) => "info",
            };
            match mv {
                "info" => {
                    let pool = ["price", "customerRating", "brand", "availableSizes", "color", "material", "pattern"];
                    let attrs: Vec<&str> = if self.rng.random_bool(0.25) {
                        pool.choose_multiple(&mut self.rng, 2).copied().collect()
                    } else {
                        vec![self.pick(&pool)]
                    };
                    self.info_round(&ty, &cur, &attrs, None)?;
                }
                "info_memory" | "compare" => {
                    let m = memory.choose(&mut self.rng).unwrap().clone();
                    let mty = self.ty_of(&m);
                    let mnoun = self.cat(self.item(&m)).noun.clone();
                    let mcolor = self.text(&m, "color");
                    if mv == "info_memory" {
                        let attr = self.pick(&["price", "customerRating", "brand"]);
                        let r = format!("the {} {mnoun} I saw before", slot("O.color", &mcolor));
                        self.info_round(&mty, &m, &[attr], Some(r))?;
                    } else {
                        let body = format!(
                            "Is [USER.attentionOn this] one cheaper than the {} [A.comp:{mty}_1 {mnoun}] I saw before?",
                            slot("R1.color", &mcolor)
                        );
                        let user = Utt::new(seg(&format!("REQUEST:COMPARE:{ty}.price"), &body))
                            .link(ty.clone(), &cur)
                            .link(format!("{mty}_1"), &m);
                        let call = ApiCall::SpecifyInfo {
                            item_id: m.clone(),
                            attributes: vec!["price".into()],
                        };
                        self.round(user, call, |s, _, _| {
                            let p = price_text(s.item(&m).price().unwrap_or(0.0));
                            let body = format!(
                                "The {} one you saw before is {}.",
                                slot("O.color", &mcolor),
                                slot("O.price", &p)
                            );
                            Utt::new(seg(&format!("INFORM:COMPARE:{ty}.price"), &body))
                        })?;
                    }
                }
                "search" => {
                    let goal = self.catalog.items().choose(&mut self.rng).unwrap();
                    let gty = goal.category().unwrap_or("CLOTHING").to_string();
                    let gcat = self.cat(goal);
                    let color = goal.text("color").unwrap_or_default().to_string();
                    let mut filters = vec![
                        Filter::Equals {
                            attribute: "category".into(),
                            value: gty.clone(),
                        },
                        Filter::Equals {
                            attribute: "color".into(),
                            value: color.clone(),
                        },
                    ];
                    let c = slot("O.color", &color);
                    let body = if self.rng.random_bool(0.3) {
                        let cap = price_cap(goal.price().unwrap_or(0.0));
                        filters.push(Filter::Range {
                            attribute: "price".into(),
                            min: None,
                            max: Some(cap),
                        });
                        format!(
                            "I'm looking for a {c} {} {}.",
                            gcat.noun,
                            slot("O.price", &format!("under ${cap:.0}"))
                        )
                    } else {
                        let t = self.pick(&[
                            "Can you show me [O.sequential another] {c} {n}?",
                            "Do you have any {c} {p}?",
                            "Show me a {c} {n}, please.",
                        ]);
                        fill(t, &[("c", &c), ("n", &gcat.noun), ("p", &gcat.plural)])
                    };
                    let user = Utt::new(seg(&format!("REQUEST:GET:{gty}"), &body));
                    self.round(user, ApiCall::SearchDatabase { filters }, |s, st, _| s.search_reply(st, false))?;
                }
                "similar" => {
                    // same words, but the wizard looks in memory first
                    let same: Vec<ItemId> = memory
                        .iter()
                        .filter(|m| self.item(m).category() == Some(ty.as_str()) && self.text(m, "color") != self.text(&cur, "color"))
                        .cloned()
                        .collect();
                    let color = if !same.is_empty() && self.rng.random_bool(0.6) {
                        let m = same.choose(&mut self.rng).unwrap().clone();
                        self.text(&m, "color")
                    } else {
                        let c = self.pools.fashion.colors.choose(&mut self.rng).unwrap().clone();
                        c
                    };
                    let filters = vec![
                        Filter::Equals {
                            attribute: "category".into(),
                            value: ty.clone(),
                        },
                        Filter::Equals {
                            attribute: "color".into(),
                            value: color.clone(),
                        },
                    ];
                    let in_memory = memory.iter().any(|m| matches_all(&filters, self.item(m)));
                    let t = self.pick(&["Do you have this in {c}?", "Is there one like this in {c}?", "Can I see this {n} in {c}?"]);
                    let body = fill(t, &[("c", &slot("O.color", &color)), ("n", &noun)]);
                    let user = Utt::new(seg(&format!("REQUEST:GET:{ty}"), &body));
                    let call = if in_memory {
                        ApiCall::SearchMemory { filters }
                    } else {
                        ApiCall::SearchDatabase { filters }
                    };
                    self.round(user, call, move |s, st, _| s.search_reply(st, in_memory))?;
                }
                "recall" => {
                    let m = memory.choose(&mut self.rng).unwrap().clone();
                    let mty = self.ty_of(&m);
                    let mcat = self.cat(self.item(&m));
                    let color = self.text(&m, "color");
                    let filters = vec![
                        Filter::Equals {
                            attribute: "category".into(),
                            value: mty.clone(),
                        },
                        Filter::Equals {
                            attribute: "color".into(),
                            value: color.clone(),
                        },
                    ];
                    let t = self.pick(&[
                        "Can you show me the {c} {n} I saw earlier again?",
                        "Let me see that {c} {n} from before.",
                        "Go back to the {c} {n}, please.",
                    ]);
                    let body = fill(t, &[("c", &slot("O.color", &color)), ("n", &mcat.noun)]);
                    let user = Utt::new(seg(&format!("REQUEST:GET:{mty}"), &body)).link(mty.clone(), &m);
                    self.round(user, ApiCall::SearchMemory { filters }, |s, st, _| s.search_reply(st, true))?;
                }
                "prefer" => {
                    let t = self.pick(&["I love [USER.attentionOn this] {n}!", "[USER.attentionOn This] one is beautiful!", "I really like [USER.attentionOn this] {n}."]);
                    let user = Utt::new(seg(&format!("INFORM:PREFER:{ty}"), &fill(t, &[("n", &noun)]))).link(ty.clone(), &cur);
                    self.round(user, ApiCall::None, |s, _, _| {
                        let b = s.pick(&["Would you like to add it to your cart?", "It's a great pick. Shall I add it to your cart?"]);
                        Utt::new(seg(&format!("PROMPT:ADD_TO_CART:{ty}"), b))
                    })?;
                }
                "disprefer" => {
                    let t = self.pick(&["I don't like [USER.attentionOn this] one.", "[USER.attentionOn That] {n} is not for me.", "Hmm, [USER.attentionOn this] {n} is ugly."]);
                    let user = Utt::new(seg(&format!("INFORM:DISPREFER:{ty}"), &fill(t, &[("n", &noun)]))).link(ty.clone(), &cur);
                    let filters = vec![Filter::Equals {
                        attribute: "category".into(),
                        value: ty.clone(),
                    }];
                    self.round(user, ApiCall::SearchDatabase { filters }, |s, st, _| s.search_reply(st, false))?;
                }
                "check" => {
                    let item = self.item(&cur);
                    let (attr, truth_list): (&str, Vec<String>) = if self.rng.random_bool(0.5) {
                        match item.get("availableSizes") {
                            Some(AttrValue::List(v)) => ("availableSizes", v.clone()),
                            _ => ("color", vec![self.text(&cur, "color")]),
                        }
                    } else {
                        ("color", vec![self.text(&cur, "color")])
                    };
                    let pool = if attr == "availableSizes" { &self.pools.fashion.sizes } else { &self.pools.fashion.colors };
                    let asked = pool.choose(&mut self.rng).unwrap().clone();
                    let body = if attr == "availableSizes" {
                        format!("Does [USER.attentionOn this] {noun} come in size {}?", slot(".check", &asked))
                    } else {
                        format!("Is it available in {}?", slot(".check", &asked))
                    };
                    let user = Utt::new(seg(&format!("REQUEST:CHECK:{ty}.{attr}"), &body)).link(ty.clone(), &cur);
                    let call = ApiCall::SpecifyInfo {
                        item_id: cur.clone(),
                        attributes: vec![attr.to_string()],
                    };
                    self.round(user, call, |_, _, _| {
                        let body = if truth_list.contains(&asked) {
                            format!("Yes, it comes in {}.", slot(".check", &asked))
                        } else {
                            format!("No, it only comes in {}.", slot(&format!("O.{attr}"), &truth_list.join(", ")))
                        };
                        Utt::new(seg(&format!("INFORM:CHECK:{ty}.{attr}"), &body))
                    })?;
                }
                other => unreachable!("unknown move {other}"),
            }
        }

        let cur = self.current();
        let ty = self.ty_of(&cur);
        let noun = self.cat(self.item(&cur)).noun.clone();
        if self.rng.random_bool(self.cfg.buy_rate) {
            let color = slot("O.color", &self.text(&cur, "color"));
            let t = self.pick(&["Put it in my cart.", "I'll take [USER.attentionOn this] {n}!", "Add the {c} one to my cart."]);
            let user = Utt::new(seg(&format!("REQUEST:ADD_TO_CART:{ty}"), &fill(t, &[("n", &noun), ("c", &color)]))).link(ty.clone(), &cur);
            self.round(user, ApiCall::AddToCart { item_id: None }, |s, _, _| {
                let body = format!("I've added the {} {noun} to your cart.", slot("O.color", &s.text(&cur, "color")));
                Utt::new(seg(&format!("INFORM:ADD_TO_CART:{ty}"), &body)).link(ty.clone(), &cur)
            })?;
        } else {
            let b = self.pick(&["Thanks, I'll think about it.", "I like it, but not today."]);
            let user = Utt::new(seg(&format!("INFORM:PREFER:{ty}"), b));
            self.round(user, ApiCall::None, |s, _, _| {
                let b = s.pick(&["Sure, let me know if you need anything else.", "No problem. Happy shopping!"]);
                Utt::new(seg(&format!("PROMPT:GET:{ty}"), b))
            })?;
        }
        Ok(initial)
    }
}

fn dialog_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn gen_dialog(
    catalog: &Catalog,
    g: &OntologyGraph,
    cfg: &GeneratorConfig,
    weights: &WeightedIndex<f64>,
    index: usize,
) -> Result<Dialog, GenError> {
    let mut rng = dialog_rng(cfg.seed, index);
    let n_rounds = cfg.rounds.min + weights.sample(&mut rng);
    let mut s = Session {
        domain: catalog.domain,
        catalog,
        g,
        pools: ValuePools::shipped(),
        cfg,
        rng,
        state: EnvState::furniture(),
        rounds: Vec::with_capacity(n_rounds),
    };
    let initial_state = match catalog.domain {
        Domain::Furniture => {
            s.furniture_dialog(index, n_rounds)?;
            EnvState::furniture()
        }
        Domain::Fashion => s.fashion_dialog(index, n_rounds)?,
    };
    Ok(Dialog {
        dialog_id: format!("{}-{:05}", catalog.domain, index),
        initial_state,
        rounds: s.rounds,
    })
}

/// Generates `config.n_dialogs` dialogs. Each dialog draws from its own
/// random stream derived from `(seed, index)`, so the parallel result equals
/// the sequential one.
pub fn gen_corpus(
    catalog: &Catalog,
    config: &GeneratorConfig,
    g: &OntologyGraph,
    catalog_file: &str,
) -> Result<DialogCorpus, GenError> {
    config.validate(catalog.domain)?;
    if catalog.len() < 3 {
        return Err(GenError::TooFewItems {
            min: 3,
            got: catalog.len(),
        });
    }
    let weights = WeightedIndex::new(config.rounds.pmf()).map_err(|e| GenError::Config(e.to_string()))?;
    let dialogs = (0..config.n_dialogs)
        .into_par_iter()
        .map(|i| gen_dialog(catalog, g, config, &weights, i))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DialogCorpus {
        schema_version: CORPUS_SCHEMA_VERSION,
        domain: catalog.domain,
        catalog_file: catalog_file.to_string(),
        seed: config.seed,
        dialogs,
    })
}

pub const DEFAULT_RATIOS: [f64; 4] = [0.60, 0.10, 0.15, 0.15];
pub const SPLIT_NAMES: [&str; 4] = ["train", "dev", "testdev", "test"];

/// Dialog-level partition into train/dev/testdev/test. Ratios summing to
/// less than one leave the remainder unassigned.
pub fn split_corpus(corpus: &DialogCorpus, ratios: [f64; 4], seed: u64) -> Result<[DialogCorpus; 4], GenError> {
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| r.is_nan() || *r < 0.0) || sum > 1.0 + 1e-9 {
        return Err(GenError::Ratios(ratios));
    }
    let n = corpus.dialogs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut bounds = [0usize; 5];
    let mut acc = 0.0;
    for (k, r) in ratios.iter().enumerate() {
        acc += r;
        bounds[k + 1] = ((acc * n as f64).round() as usize).min(n);
    }
    Ok(std::array::from_fn(|k| {
        let mut idx = order[bounds[k]..bounds[k + 1]].to_vec();
        idx.sort_unstable();
        corpus.with_dialogs(idx.into_iter().map(|i| corpus.dialogs[i].clone()).collect())
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusIssue {
    pub dialog_id: String,
    pub round: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for CorpusIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.round {
            Some(r) => write!(f, "{} round {}: {}", self.dialog_id, r, self.message),
            None => write!(f, "{}: {}", self.dialog_id, self.message),
        }
    }
}

pub fn round_bounds(domain: Domain) -> (usize, usize) {
    match domain {
        Domain::Furniture => (4, 14),
        Domain::Fashion => (3, 12),
    }
}

/// Full consistency check: annotations parse and validate, stored text and
/// belief frames agree with them, every id resolves, and replaying the action
/// trace reproduces each stored context and result.
pub fn validate_corpus(corpus: &DialogCorpus, catalog: &Catalog, g: &OntologyGraph) -> Vec<CorpusIssue> {
    let mut out = Vec::new();
    let (lo, hi) = round_bounds(corpus.domain);
    if corpus.domain != catalog.domain {
        out.push(CorpusIssue {
            dialog_id: String::new(),
            round: None,
            message: format!("corpus is {} but catalog is {}", corpus.domain, catalog.domain),
        });
        return out;
    }
    for d in &corpus.dialogs {
        let mut issue = |round: Option<usize>, message: String| {
            out.push(CorpusIssue {
                dialog_id: d.dialog_id.clone(),
                round,
                message,
            })
        };
        if !(lo..=hi).contains(&d.rounds.len()) {
            issue(None, format!("{} rounds outside [{lo}, {hi}]", d.rounds.len()));
        }
        let trace = replay(&d.initial_state, &d.actions(), catalog);
        let mut state = d.initial_state.clone();
        for (i, (r, (next, result))) in d.rounds.iter().zip(&trace).enumerate() {
            for (side, rec, text) in [
                ("user", &r.annotations.user, &r.user_utterance),
                ("assistant", &r.annotations.assistant, &r.assistant_utterance),
            ] {
                match rec.to_utterance() {
                    Err(e) => issue(Some(i), format!("{side} annotation: {e}")),
                    Ok(u) => {
                        for diag in validate(&u, g, corpus.domain) {
                            issue(Some(i), format!("{side} annotation: {diag}"));
                        }
                        if &u.raw_text != text {
                            issue(Some(i), format!("{side} text differs from its annotation"));
                        }
                        for link in &u.coref_links {
                            if !catalog.contains(&link.item_id) {
                                issue(Some(i), format!("unknown item `{}`", link.item_id));
                            }
                        }
                        if side == "user" && flatten(&u) != r.belief {
                            issue(Some(i), "belief frame differs from the user annotation".into());
                        }
                    }
                }
            }
            if context_of(&state) != r.context {
                issue(Some(i), "stored context differs from replay".into());
            }
            if result != &r.result {
                issue(Some(i), "stored result differs from replay".into());
            }
            state = next.clone();
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    pub dialogs: usize,
    pub rounds: usize,
    pub mean_rounds: f64,
    pub min_rounds: usize,
    pub max_rounds: usize,
    /// Share of each dialog act over all annotated intents, both speakers.
    pub dialog_act_share: BTreeMap<String, f64>,
    pub activity_counts: BTreeMap<String, usize>,
    pub action_counts: BTreeMap<String, usize>,
    pub mean_user_tokens: f64,
}

pub fn corpus_stats(corpus: &DialogCorpus) -> CorpusStats {
    let lens: Vec<usize> = corpus.dialogs.iter().map(|d| d.rounds.len()).collect();
    let mut acts: BTreeMap<String, usize> = BTreeMap::new();
    let mut activities: BTreeMap<String, usize> = BTreeMap::new();
    let mut actions: BTreeMap<String, usize> = BTreeMap::new();
    let mut user_tokens = 0usize;
    for (_, _, r) in corpus.rounds() {
        *actions.entry(r.action.name().to_string()).or_default() += 1;
        user_tokens += crate::tokenize::tokenize(&r.user_utterance).len();
        for rec in [&r.annotations.user, &r.annotations.assistant] {
            if let Ok(u) = rec.to_utterance() {
                for seg in &u.segments {
                    if let Some(i) = seg.intent() {
                        *acts.entry(i.dialog_act.clone()).or_default() += 1;
                        *activities.entry(i.activity.clone()).or_default() += 1;
                    }
                }
            }
        }
    }
    let total_acts: usize = acts.values().sum();
    let n_rounds: usize = lens.iter().sum();
    CorpusStats {
        dialogs: lens.len(),
        rounds: n_rounds,
        mean_rounds: if lens.is_empty() { 0.0 } else { n_rounds as f64 / lens.len() as f64 },
        min_rounds: lens.iter().copied().min().unwrap_or(0),
        max_rounds: lens.iter().copied().max().unwrap_or(0),
        dialog_act_share: acts
            .into_iter()
            .map(|(k, v)| (k, v as f64 / total_acts.max(1) as f64))
            .collect(),
        activity_counts: activities,
        action_counts: actions,
        mean_user_tokens: user_tokens as f64 / n_rounds.max(1) as f64,
    }
}
