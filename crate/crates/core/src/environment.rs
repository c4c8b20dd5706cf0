//! Deterministic shopping environments.
//!
//! Furniture is a carousel of three search results that can be zoomed into
//! one focused item and rotated; fashion shows one current item plus three
//! previously viewed items. [`apply`] is a pure transition function: it never
//! mutates its input, and an error result always carries the unchanged state.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ontology::{AttrRange, Domain, OntologyGraph, Primitive};

pub type ItemId = String;

/// Number of carousel positions, also the paging step.
pub const CAROUSEL_SIZE: usize = 3;
/// Number of previously viewed items in the fashion scene.
pub const MEMORY_SIZE: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttrValue {
    Bool(bool),
    Int(i64),
    Dec(f64),
    Text(String),
    List(Vec<String>),
}

impl AttrValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            AttrValue::Int(i) => Some(*i as f64),
            AttrValue::Dec(d) => Some(*d),
            _ => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            AttrValue::Text(s) => Some(s),
            _ => None,
        }
    }
}

impl fmt::Display for AttrValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttrValue::Bool(b) => write!(f, "{b}"),
            AttrValue::Int(i) => write!(f, "{i}"),
            AttrValue::Dec(d) => write!(f, "{d:.2}"),
            AttrValue::Text(s) => f.write_str(s),
            AttrValue::List(v) => f.write_str(&v.join(", ")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogItem {
    pub item_id: ItemId,
    pub domain: Domain,
    pub attributes: BTreeMap<String, AttrValue>,
}

impl CatalogItem {
    pub fn get(&self, attr: &str) -> Option<&AttrValue> {
        self.attributes.get(attr)
    }

    /// Ontology type of the item, stored in its `category` attribute.
    pub fn category(&self) -> Option<&str> {
        self.get("category").and_then(AttrValue::as_text)
    }

    pub fn text(&self, attr: &str) -> Option<&str> {
        self.get(attr).and_then(AttrValue::as_text)
    }

    pub fn price(&self) -> Option<f64> {
        self.get("price").and_then(AttrValue::as_f64)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CatalogFile {
    domain: Domain,
    items: Vec<CatalogItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "CatalogFile", into = "CatalogFile")]
pub struct Catalog {
    pub domain: Domain,
    items: Vec<CatalogItem>,
    index: BTreeMap<ItemId, usize>,
}

impl From<CatalogFile> for Catalog {
    fn from(f: CatalogFile) -> Self {
        Catalog::new(f.domain, f.items)
    }
}

impl From<Catalog> for CatalogFile {
    fn from(c: Catalog) -> Self {
        CatalogFile {
            domain: c.domain,
            items: c.items,
        }
    }
}

impl Catalog {
    pub fn new(domain: Domain, items: Vec<CatalogItem>) -> Self {
        let index = items
            .iter()
            .enumerate()
            .map(|(i, it)| (it.item_id.clone(), i))
            .collect();
        Self {
            domain,
            items,
            index,
        }
    }

    pub fn items(&self) -> &[CatalogItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&CatalogItem> {
        self.index.get(id).map(|&i| &self.items[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    /// Checks ids, ontology typing of every attribute, and value bounds.
    pub fn validate(&self, g: &OntologyGraph) -> Vec<String> {
        let mut errs = Vec::new();
        if self.index.len() != self.items.len() {
            errs.push("duplicate item ids".to_string());
        }
        let root = OntologyGraph::domain_root(self.domain);
        for item in &self.items {
            let id = &item.item_id;
            if item.domain != self.domain {
                errs.push(format!("{id}: domain {} in a {} catalog", item.domain, self.domain));
            }
            let Some(ty) = item.category() else {
                errs.push(format!("{id}: missing category"));
                continue;
            };
            if !g.is_subtype(ty, root).unwrap_or(false) {
                errs.push(format!("{id}: category `{ty}` is not a {root}"));
                continue;
            }
            for (name, value) in &item.attributes {
                let def = match g.resolve_attribute(ty, name) {
                    Ok(d) => d,
                    Err(e) => {
                        errs.push(format!("{id}: {e}"));
                        continue;
                    }
                };
                let ok = match (&def.range, value) {
                    (AttrRange::Primitive(Primitive::Decimal), v) => v.as_f64().is_some(),
                    (AttrRange::Primitive(Primitive::Integer), AttrValue::Int(_)) => true,
                    (AttrRange::Primitive(Primitive::Boolean), AttrValue::Bool(_)) => true,
                    (_, AttrValue::Text(_) | AttrValue::List(_)) => !matches!(
                        def.range,
                        AttrRange::Primitive(Primitive::Integer | Primitive::Decimal | Primitive::Boolean)
                    ),
                    _ => false,
                };
                if !ok {
                    errs.push(format!("{id}: value of `{name}` does not match its range"));
                }
            }
            if item.price().is_some_and(|p| p < 0.0 || !p.is_finite()) {
                errs.push(format!("{id}: negative price"));
            }
            if let Some(r) = item.get("customerRating").and_then(AttrValue::as_f64) {
                if !(0.0..=5.0).contains(&r) {
                    errs.push(format!("{id}: rating {r} outside [0, 5]"));
                }
            }
        }
        errs
    }
}

/// One conjunct of a search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Filter {
    /// Categorical equality.
    Equals { attribute: String, value: String },
    /// Set-valued attribute contains the value.
    Contains { attribute: String, value: String },
    /// Inclusive numeric range; either bound may be open.
    Range {
        attribute: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        min: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max: Option<f64>,
    },
}

impl Filter {
    pub fn attribute(&self) -> &str {
        match self {
            Filter::Equals { attribute, .. }
            | Filter::Contains { attribute, .. }
            | Filter::Range { attribute, .. } => attribute,
        }
    }

    pub fn matches(&self, item: &CatalogItem) -> bool {
        match self {
            Filter::Equals { attribute, value } => item.text(attribute) == Some(value.as_str()),
            Filter::Contains { attribute, value } => match item.get(attribute) {
                Some(AttrValue::List(v)) => v.contains(value),
                Some(AttrValue::Text(s)) => s == value,
                _ => false,
            },
            Filter::Range { attribute, min, max } => match item.get(attribute).and_then(AttrValue::as_f64) {
                Some(x) => min.is_none_or(|m| x >= m) && max.is_none_or(|m| x <= m),
                None => false,
            },
        }
    }
}

pub fn matches_all(filters: &[Filter], item: &CatalogItem) -> bool {
    filters.iter().all(|f| f.matches(item))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Position {
    Left,
    Center,
    Right,
}

impl Position {
    pub const ALL: [Position; 3] = [Position::Left, Position::Center, Position::Right];

    pub fn index(self) -> usize {
        match self {
            Position::Left => 0,
            Position::Center => 1,
            Position::Right => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Position::Left => "left",
            Position::Center => "center",
            Position::Right => "right",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RotateDirection {
    Left,
    Right,
    Up,
    Down,
    Front,
    Back,
}

impl RotateDirection {
    pub const ALL: [RotateDirection; 6] = [
        RotateDirection::Left,
        RotateDirection::Right,
        RotateDirection::Up,
        RotateDirection::Down,
        RotateDirection::Front,
        RotateDirection::Back,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NavDirection {
    Next,
    Previous,
}

/// An assistant action with its arguments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", content = "arguments")]
pub enum ApiCall {
    SearchFurniture {
        filters: Vec<Filter>,
    },
    SpecifyInfo {
        item_id: ItemId,
        attributes: Vec<String>,
    },
    FocusOnFurniture {
        position: Position,
    },
    RotateFurniture {
        direction: RotateDirection,
    },
    NavigateCarousel {
        direction: NavDirection,
    },
    AddToCart {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        item_id: Option<ItemId>,
    },
    SearchDatabase {
        filters: Vec<Filter>,
    },
    SearchMemory {
        filters: Vec<Filter>,
    },
    None,
}

pub const FURNITURE_ACTIONS: [&str; 7] = [
    "SearchFurniture",
    "SpecifyInfo",
    "FocusOnFurniture",
    "RotateFurniture",
    "NavigateCarousel",
    "AddToCart",
    "None",
];

pub const FASHION_ACTIONS: [&str; 5] = ["SpecifyInfo", "SearchDatabase", "SearchMemory", "AddToCart", "None"];

pub fn actions_for(domain: Domain) -> &'static [&'static str] {
    match domain {
        Domain::Furniture => &FURNITURE_ACTIONS,
        Domain::Fashion => &FASHION_ACTIONS,
    }
}

impl ApiCall {
    pub fn name(&self) -> &'static str {
        match self {
            ApiCall::SearchFurniture { .. } => "SearchFurniture",
            ApiCall::SpecifyInfo { .. } => "SpecifyInfo",
            ApiCall::FocusOnFurniture { .. } => "FocusOnFurniture",
            ApiCall::RotateFurniture { .. } => "RotateFurniture",
            ApiCall::NavigateCarousel { .. } => "NavigateCarousel",
            ApiCall::AddToCart { .. } => "AddToCart",
            ApiCall::SearchDatabase { .. } => "SearchDatabase",
            ApiCall::SearchMemory { .. } => "SearchMemory",
            ApiCall::None => "None",
        }
    }

    pub fn available_in(&self, domain: Domain) -> bool {
        actions_for(domain).contains(&self.name())
    }

    /// Attribute names the call takes as arguments (search filters or
    /// requested info), in order, without duplicates.
    pub fn argument_attributes(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        let mut push = |a: &str| {
            if !out.iter().any(|x| x == a) {
                out.push(a.to_string());
            }
        };
        match self {
            ApiCall::SearchFurniture { filters }
            | ApiCall::SearchDatabase { filters }
            | ApiCall::SearchMemory { filters } => filters.iter().for_each(|f| push(f.attribute())),
            ApiCall::SpecifyInfo { attributes, .. } => attributes.iter().for_each(|a| push(a)),
            _ => {}
        }
        out
    }

    pub fn takes_attributes(&self) -> bool {
        matches!(
            self,
            ApiCall::SearchFurniture { .. }
                | ApiCall::SearchDatabase { .. }
                | ApiCall::SearchMemory { .. }
                | ApiCall::SpecifyInfo { .. }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApiStatus {
    Ok,
    Clamped,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfoValue {
    pub attribute: String,
    pub value: AttrValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    Empty,
    Items { item_ids: Vec<ItemId> },
    Info { item_id: ItemId, values: Vec<InfoValue> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiResult {
    pub status: ApiStatus,
    pub payload: Payload,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl ApiResult {
    fn ok(payload: Payload) -> Self {
        Self {
            status: ApiStatus::Ok,
            payload,
            message: None,
        }
    }

    fn clamped(payload: Payload) -> Self {
        Self {
            status: ApiStatus::Clamped,
            payload,
            message: None,
        }
    }

    fn error(msg: impl Into<String>) -> Self {
        Self {
            status: ApiStatus::Error,
            payload: Payload::Empty,
            message: Some(msg.into()),
        }
    }

    pub fn is_error(&self) -> bool {
        self.status == ApiStatus::Error
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Carousel {
    pub results: Vec<ItemId>,
    pub offset: usize,
}

impl Carousel {
    pub fn new(results: Vec<ItemId>) -> Self {
        Self { results, offset: 0 }
    }

    /// Items shown at left/center/right.
    pub fn slots(&self) -> [Option<&ItemId>; CAROUSEL_SIZE] {
        std::array::from_fn(|i| self.results.get(self.offset + i))
    }

    pub fn visible(&self) -> Vec<ItemId> {
        self.slots().into_iter().flatten().cloned().collect()
    }

    pub fn is_valid(&self) -> bool {
        self.offset.is_multiple_of(CAROUSEL_SIZE) && (self.offset == 0 || self.offset < self.results.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Orientation {
    /// Degrees, one of 0/90/180/270.
    pub yaw: u16,
    /// Degrees, one of -90/0/90.
    pub pitch: i16,
}

impl Orientation {
    pub const FRONT: Orientation = Orientation { yaw: 0, pitch: 0 };
    pub const BACK: Orientation = Orientation { yaw: 180, pitch: 0 };

    /// Returns the new orientation and whether the pitch hit its bound.
    pub fn rotate(self, dir: RotateDirection) -> (Orientation, bool) {
        match dir {
            RotateDirection::Left => (Orientation { yaw: (self.yaw + 270) % 360, ..self }, false),
            RotateDirection::Right => (Orientation { yaw: (self.yaw + 90) % 360, ..self }, false),
            RotateDirection::Up => {
                let pitch = (self.pitch + 90).min(90);
                (Orientation { pitch, ..self }, pitch == self.pitch)
            }
            RotateDirection::Down => {
                let pitch = (self.pitch - 90).max(-90);
                (Orientation { pitch, ..self }, pitch == self.pitch)
            }
            RotateDirection::Front => (Self::FRONT, false),
            RotateDirection::Back => (Self::BACK, false),
        }
    }

    pub fn is_valid(self) -> bool {
        self.yaw.is_multiple_of(90) && self.yaw < 360 && matches!(self.pitch, -90 | 0 | 90)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum FurnitureMode {
    Carousel(Carousel),
    Focused {
        item: ItemId,
        orientation: Orientation,
        saved_carousel: Carousel,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FurnitureState {
    pub mode: FurnitureMode,
    pub cart: BTreeSet<ItemId>,
}

impl FurnitureState {
    pub fn initial() -> Self {
        Self {
            mode: FurnitureMode::Carousel(Carousel::default()),
            cart: BTreeSet::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FashionState {
    pub current: ItemId,
    pub memory: Vec<ItemId>,
    pub cart: BTreeSet<ItemId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "domain", rename_all = "snake_case")]
pub enum EnvState {
    Furniture(FurnitureState),
    Fashion(FashionState),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EnvError {
    #[error("unknown item `{0}`")]
    UnknownItem(String),
    #[error("fashion memory needs {MEMORY_SIZE} distinct items different from the current one")]
    BadMemory,
    #[error("state belongs to a different domain than the catalog")]
    DomainMismatch,
}

impl EnvState {
    pub fn furniture() -> Self {
        EnvState::Furniture(FurnitureState::initial())
    }

    pub fn fashion(current: ItemId, memory: Vec<ItemId>, catalog: &Catalog) -> Result<Self, EnvError> {
        for id in std::iter::once(&current).chain(&memory) {
            if !catalog.contains(id) {
                return Err(EnvError::UnknownItem(id.clone()));
            }
        }
        let distinct: BTreeSet<&ItemId> = memory.iter().collect();
        if memory.len() != MEMORY_SIZE || distinct.len() != MEMORY_SIZE || distinct.contains(&current) {
            return Err(EnvError::BadMemory);
        }
        Ok(EnvState::Fashion(FashionState {
            current,
            memory,
            cart: BTreeSet::new(),
        }))
    }

    pub fn domain(&self) -> Domain {
        match self {
            EnvState::Furniture(_) => Domain::Furniture,
            EnvState::Fashion(_) => Domain::Fashion,
        }
    }

    pub fn cart(&self) -> &BTreeSet<ItemId> {
        match self {
            EnvState::Furniture(s) => &s.cart,
            EnvState::Fashion(s) => &s.cart,
        }
    }

    /// The single item the user is looking at, if any.
    pub fn attended_item(&self) -> Option<&ItemId> {
        match self {
            EnvState::Furniture(s) => match &s.mode {
                FurnitureMode::Focused { item, .. } => Some(item),
                FurnitureMode::Carousel(_) => None,
            },
            EnvState::Fashion(s) => Some(&s.current),
        }
    }

    pub fn is_valid(&self) -> bool {
        match self {
            EnvState::Furniture(s) => match &s.mode {
                FurnitureMode::Carousel(c) => c.is_valid(),
                FurnitureMode::Focused {
                    orientation,
                    saved_carousel,
                    ..
                } => orientation.is_valid() && saved_carousel.is_valid(),
            },
            EnvState::Fashion(s) => s.memory.len() == MEMORY_SIZE,
        }
    }
}

fn items_payload(ids: Vec<ItemId>) -> Payload {
    Payload::Items { item_ids: ids }
}

fn specify_info(item_id: &str, attributes: &[String], catalog: &Catalog) -> ApiResult {
    let Some(item) = catalog.get(item_id) else {
        return ApiResult::error(format!("unknown item `{item_id}`"));
    };
    if attributes.is_empty() {
        return ApiResult::error("SpecifyInfo needs at least one attribute");
    }
    let mut values = Vec::with_capacity(attributes.len());
    for a in attributes {
        match item.get(a) {
            Some(v) => values.push(InfoValue {
                attribute: a.clone(),
                value: v.clone(),
            }),
            None => return ApiResult::error(format!("item `{item_id}` has no attribute `{a}`")),
        }
    }
    ApiResult::ok(Payload::Info {
        item_id: item_id.to_string(),
        values,
    })
}

fn apply_furniture(s: &FurnitureState, call: &ApiCall, catalog: &Catalog) -> (FurnitureState, ApiResult) {
    let unchanged = |r: ApiResult| (s.clone(), r);
    match call {
        ApiCall::SearchFurniture { filters } => {
            let results: Vec<ItemId> = catalog
                .items()
                .iter()
                .filter(|it| matches_all(filters, it))
                .map(|it| it.item_id.clone())
                .collect();
            let carousel = Carousel::new(results);
            let shown = carousel.visible();
            let next = FurnitureState {
                mode: FurnitureMode::Carousel(carousel),
                cart: s.cart.clone(),
            };
            (next, ApiResult::ok(items_payload(shown)))
        }
        ApiCall::FocusOnFurniture { position } => match &s.mode {
            FurnitureMode::Focused { .. } => unchanged(ApiResult::error("already focused")),
            FurnitureMode::Carousel(c) => match c.slots()[position.index()] {
                None => unchanged(ApiResult::error(format!("{} slot is empty", position.as_str()))),
                Some(item) => {
                    let next = FurnitureState {
                        mode: FurnitureMode::Focused {
                            item: item.clone(),
                            orientation: Orientation::FRONT,
                            saved_carousel: c.clone(),
                        },
                        cart: s.cart.clone(),
                    };
                    (next, ApiResult::ok(items_payload(vec![item.clone()])))
                }
            },
        },
        ApiCall::RotateFurniture { direction } => match &s.mode {
            FurnitureMode::Carousel(_) => unchanged(ApiResult::error("nothing is focused")),
            FurnitureMode::Focused {
                item,
                orientation,
                saved_carousel,
            } => {
                let (o, clamped) = orientation.rotate(*direction);
                let next = FurnitureState {
                    mode: FurnitureMode::Focused {
                        item: item.clone(),
                        orientation: o,
                        saved_carousel: saved_carousel.clone(),
                    },
                    cart: s.cart.clone(),
                };
                let payload = items_payload(vec![item.clone()]);
                let r = if clamped {
                    ApiResult::clamped(payload)
                } else {
                    ApiResult::ok(payload)
                };
                (next, r)
            }
        },
        ApiCall::NavigateCarousel { direction } => {
            let mut c = match &s.mode {
                FurnitureMode::Carousel(c) => c.clone(),
                FurnitureMode::Focused { saved_carousel, .. } => saved_carousel.clone(),
            };
            let moved = match direction {
                NavDirection::Next if c.offset + CAROUSEL_SIZE < c.results.len() => {
                    c.offset += CAROUSEL_SIZE;
                    true
                }
                NavDirection::Previous if c.offset >= CAROUSEL_SIZE => {
                    c.offset -= CAROUSEL_SIZE;
                    true
                }
                _ => false,
            };
            let payload = items_payload(c.visible());
            let next = FurnitureState {
                mode: FurnitureMode::Carousel(c),
                cart: s.cart.clone(),
            };
            let r = if moved {
                ApiResult::ok(payload)
            } else {
                ApiResult::clamped(payload)
            };
            (next, r)
        }
        ApiCall::AddToCart { item_id } => {
            let target = match (item_id, &s.mode) {
                (Some(id), _) => id.clone(),
                (None, FurnitureMode::Focused { item, .. }) => item.clone(),
                (None, FurnitureMode::Carousel(_)) => {
                    return unchanged(ApiResult::error("no target item to add"))
                }
            };
            if !catalog.contains(&target) {
                return unchanged(ApiResult::error(format!("unknown item `{target}`")));
            }
            let mut next = s.clone();
            next.cart.insert(target.clone());
            (next, ApiResult::ok(items_payload(vec![target])))
        }
        ApiCall::SpecifyInfo { item_id, attributes } => unchanged(specify_info(item_id, attributes, catalog)),
        ApiCall::None => unchanged(ApiResult::ok(Payload::Empty)),
        ApiCall::SearchDatabase { .. } | ApiCall::SearchMemory { .. } => {
            unchanged(ApiResult::error(format!("{} is not a furniture action", call.name())))
        }
    }
}

fn apply_fashion(s: &FashionState, call: &ApiCall, catalog: &Catalog) -> (FashionState, ApiResult) {
    let unchanged = |r: ApiResult| (s.clone(), r);
    match call {
        ApiCall::SearchDatabase { filters } => {
            // best = most satisfied filters among unseen items, ties by catalog order
            let best = catalog
                .items()
                .iter()
                .filter(|it| it.item_id != s.current && !s.memory.contains(&it.item_id))
                .map(|it| (filters.iter().filter(|f| f.matches(it)).count(), it))
                .fold(None::<(usize, &CatalogItem)>, |acc, (score, it)| match acc {
                    Some((b, _)) if b >= score => acc,
                    _ => Some((score, it)),
                });
            match best {
                None => unchanged(ApiResult::error("no unseen items")),
                Some((_, it)) => {
                    let mut memory = vec![s.current.clone()];
                    memory.extend(s.memory.iter().take(MEMORY_SIZE - 1).cloned());
                    let next = FashionState {
                        current: it.item_id.clone(),
                        memory,
                        cart: s.cart.clone(),
                    };
                    (next, ApiResult::ok(items_payload(vec![it.item_id.clone()])))
                }
            }
        }
        ApiCall::SearchMemory { filters } => {
            let hit = s
                .memory
                .iter()
                .find(|id| catalog.get(id).is_some_and(|it| matches_all(filters, it)));
            match hit {
                None => unchanged(ApiResult::error("no remembered item matches")),
                Some(id) => {
                    let mut memory = vec![s.current.clone()];
                    memory.extend(s.memory.iter().filter(|m| *m != id).cloned());
                    let next = FashionState {
                        current: id.clone(),
                        memory,
                        cart: s.cart.clone(),
                    };
                    (next, ApiResult::ok(items_payload(vec![id.clone()])))
                }
            }
        }
        ApiCall::AddToCart { item_id } => {
            let target = item_id.clone().unwrap_or_else(|| s.current.clone());
            if !catalog.contains(&target) {
                return unchanged(ApiResult::error(format!("unknown item `{target}`")));
            }
            let mut next = s.clone();
            next.cart.insert(target.clone());
            (next, ApiResult::ok(items_payload(vec![target])))
        }
        ApiCall::SpecifyInfo { item_id, attributes } => unchanged(specify_info(item_id, attributes, catalog)),
        ApiCall::None => unchanged(ApiResult::ok(Payload::Empty)),
        _ => unchanged(ApiResult::error(format!("{} is not a fashion action", call.name()))),
    }
}

/// Executes one API call. Pure: equal inputs give equal outputs.
pub fn apply(state: &EnvState, call: &ApiCall, catalog: &Catalog) -> (EnvState, ApiResult) {
    if state.domain() != catalog.domain {
        return (state.clone(), ApiResult::error("catalog domain does not match the state"));
    }
    match state {
        EnvState::Furniture(s) => {
            let (n, r) = apply_furniture(s, call, catalog);
            (EnvState::Furniture(n), r)
        }
        EnvState::Fashion(s) => {
            let (n, r) = apply_fashion(s, call, catalog);
            (EnvState::Fashion(n), r)
        }
    }
}

/// Folds [`apply`] over `calls`; errors are recorded and the state carried forward.
pub fn replay(initial: &EnvState, calls: &[ApiCall], catalog: &Catalog) -> Vec<(EnvState, ApiResult)> {
    let mut state = initial.clone();
    let mut out = Vec::with_capacity(calls.len());
    for call in calls {
        let (next, result) = apply(&state, call, catalog);
        out.push((next.clone(), result));
        state = next;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitTag {
    Left,
    Center,
    Right,
    Focused,
    Current,
    Memory,
}

impl UnitTag {
    pub const ALL: [UnitTag; 6] = [
        UnitTag::Left,
        UnitTag::Center,
        UnitTag::Right,
        UnitTag::Focused,
        UnitTag::Current,
        UnitTag::Memory,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextUnit {
    pub item_id: Option<ItemId>,
    pub tag: UnitTag,
}

/// The scene co-observed by both speakers at one turn.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MultimodalContext {
    pub units: Vec<ContextUnit>,
}

pub fn context_of(state: &EnvState) -> MultimodalContext {
    let units = match state {
        EnvState::Furniture(s) => match &s.mode {
            FurnitureMode::Carousel(c) => c
                .slots()
                .into_iter()
                .zip([UnitTag::Left, UnitTag::Center, UnitTag::Right])
                .map(|(id, tag)| ContextUnit {
                    item_id: id.cloned(),
                    tag,
                })
                .collect(),
            FurnitureMode::Focused { item, .. } => vec![ContextUnit {
                item_id: Some(item.clone()),
                tag: UnitTag::Focused,
            }],
        },
        EnvState::Fashion(s) => std::iter::once(ContextUnit {
            item_id: Some(s.current.clone()),
            tag: UnitTag::Current,
        })
        .chain(s.memory.iter().map(|m| ContextUnit {
            item_id: Some(m.clone()),
            tag: UnitTag::Memory,
        }))
        .collect(),
    };
    MultimodalContext { units }
}

/// What the assistant's response is conditioned on after acting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActionContextSpec {
    Scene { context: MultimodalContext },
    Info { item_id: ItemId, values: Vec<InfoValue> },
}

pub fn action_context_of(state: &EnvState, last_result: &ApiResult) -> ActionContextSpec {
    match &last_result.payload {
        Payload::Info { item_id, values } => ActionContextSpec::Info {
            item_id: item_id.clone(),
            values: values.clone(),
        },
        _ => ActionContextSpec::Scene {
            context: context_of(state),
        },
    }
}

/// One line of an action trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub turn: usize,
    #[serde(flatten)]
    pub call: ApiCall,
}
