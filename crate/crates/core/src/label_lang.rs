//! Bracketed labeling language for dialog annotations.
//!
//! Grammar (tokens are whitespace-delimited; `\[`, `\]` and `\\` escape
//! literal brackets and backslashes in text):
//!
//! ```text
//! Utterance := Segment+
//! Segment   := '[' IntentLabel ' ' Content ']'
//! Content   := (Token | Slot)+
//! Slot      := '[' SlotLabel ' ' Content ']'
//! IntentLabel := ('DA' | 'IN') ':' DIALOG_ACT ':' ACTIVITY ':' OBJECT ('.' attribute)?
//! SlotLabel := (k ':')? Prefix? '.' attribute (':' ENUM_VALUE | ':' TYPE '_' k)?
//! Prefix    := 'A' | 'O' | 'INFO' | 'R' k | OBJECT
//! ```
//!
//! [`parse_syntax`] only checks the grammar. [`parse`] additionally runs
//! [`validate`] against an ontology and fails on the first diagnostic.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ontology::{AttrRange, Domain, Kind, OntologyGraph};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct IntentLabel {
    pub dialog_act: String,
    pub activity: String,
    pub object: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute: Option<String>,
}

impl IntentLabel {
    pub fn new(dialog_act: &str, activity: &str, object: &str, attribute: Option<&str>) -> Self {
        Self {
            dialog_act: dialog_act.into(),
            activity: activity.into(),
            object: object.into(),
            attribute: attribute.map(Into::into),
        }
    }

    pub fn is_info(&self) -> bool {
        self.attribute.as_deref() == Some("info")
    }
}

impl fmt::Display for IntentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DA:{}:{}:{}", self.dialog_act, self.activity, self.object)?;
        if let Some(a) = &self.attribute {
            write!(f, ".{a}")?;
        }
        Ok(())
    }
}

/// Which entity a slot's attribute restricts.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum SlotPrefix {
    /// `A.` the intent's activity
    Activity,
    /// `O.` the intent's object
    Object,
    /// `INFO.` one attribute of an `.info` intent
    Info,
    /// `R<k>.` the k-th introduced object
    Reference(u32),
    /// `<k>:OBJECT.` a named object bound to index k
    Indexed { index: u32, object: String },
    /// `OBJECT.` a named object such as `USER`
    Named(String),
    /// `.attr`
    Bare,
}

impl fmt::Display for SlotPrefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SlotPrefix::Activity => f.write_str("A"),
            SlotPrefix::Object => f.write_str("O"),
            SlotPrefix::Info => f.write_str("INFO"),
            SlotPrefix::Reference(k) => write!(f, "R{k}"),
            SlotPrefix::Indexed { index, object } => write!(f, "{index}:{object}"),
            SlotPrefix::Named(o) => f.write_str(o),
            SlotPrefix::Bare => Ok(()),
        }
    }
}

/// An object introduced with an index, e.g. `DRESS_1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IndexBinding {
    pub object: Option<String>,
    pub index: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum SlotSuffix {
    Enum(String),
    Binding { object: String, index: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SlotLabel {
    pub prefix: SlotPrefix,
    pub attribute: String,
    pub suffix: Option<SlotSuffix>,
}

impl SlotLabel {
    pub fn enum_value(&self) -> Option<&str> {
        match &self.suffix {
            Some(SlotSuffix::Enum(v)) => Some(v),
            _ => None,
        }
    }

    pub fn index_binding(&self) -> Option<IndexBinding> {
        if let Some(SlotSuffix::Binding { object, index }) = &self.suffix {
            return Some(IndexBinding {
                object: Some(object.clone()),
                index: *index,
            });
        }
        match &self.prefix {
            SlotPrefix::Reference(k) => Some(IndexBinding {
                object: None,
                index: *k,
            }),
            SlotPrefix::Indexed { index, object } => Some(IndexBinding {
                object: Some(object.clone()),
                index: *index,
            }),
            _ => None,
        }
    }

    fn suffix_str(&self) -> String {
        match &self.suffix {
            None => String::new(),
            Some(SlotSuffix::Enum(v)) => format!(":{v}"),
            Some(SlotSuffix::Binding { object, index }) => format!(":{object}_{index}"),
        }
    }
}

impl fmt::Display for SlotLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}{}", self.prefix, self.attribute, self.suffix_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Label {
    Intent(IntentLabel),
    Slot(SlotLabel),
}

/// Byte range into the utterance's raw text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn text<'a>(&self, raw: &'a str) -> &'a str {
        &raw[self.start..self.end]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub span: Span,
    pub space_before: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Content {
    Token(Token),
    Slot(ParseNode),
}

#[derive(Debug, Clone)]
pub struct ParseNode {
    pub label: Label,
    pub span: Span,
    /// Half-open range of utterance token indices covered by this node.
    pub tokens: (usize, usize),
    pub space_before: bool,
    pub content: Vec<Content>,
    /// Byte offset of the opening bracket in the annotated source.
    pub source_offset: usize,
}

// source_offset is provenance, not structure
impl PartialEq for ParseNode {
    fn eq(&self, other: &Self) -> bool {
        self.label == other.label
            && self.span == other.span
            && self.tokens == other.tokens
            && self.space_before == other.space_before
            && self.content == other.content
    }
}

impl Eq for ParseNode {}

impl ParseNode {
    pub fn children(&self) -> impl Iterator<Item = &ParseNode> {
        self.content.iter().filter_map(|c| match c {
            Content::Slot(n) => Some(n),
            Content::Token(_) => None,
        })
    }

    pub fn intent(&self) -> Option<&IntentLabel> {
        match &self.label {
            Label::Intent(i) => Some(i),
            Label::Slot(_) => None,
        }
    }

    pub fn slot(&self) -> Option<&SlotLabel> {
        match &self.label {
            Label::Slot(s) => Some(s),
            Label::Intent(_) => None,
        }
    }
}

/// Link from an object mention (path into the segment tree) to a catalog item.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CorefLink {
    pub mention: Vec<usize>,
    pub item_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedUtterance {
    pub raw_text: String,
    pub segments: Vec<ParseNode>,
    pub coref_links: Vec<CorefLink>,
    /// Every token in document order.
    pub tokens: Vec<Token>,
}

impl AnnotatedUtterance {
    pub fn node(&self, path: &[usize]) -> Option<&ParseNode> {
        let (first, rest) = path.split_first()?;
        let mut node = self.segments.get(*first)?;
        for &i in rest {
            node = node.children().nth(i)?;
        }
        Some(node)
    }

    pub fn span_text(&self, span: Span) -> &str {
        span.text(&self.raw_text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SlotEntry {
    pub intent: usize,
    pub name: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CorefEntry {
    pub intent: usize,
    pub mention: String,
    pub item_id: String,
}

/// Flattened user-side state for one turn.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeliefFrame {
    pub intents: Vec<IntentLabel>,
    pub slots: Vec<SlotEntry>,
    pub coref: Vec<CorefEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagCode {
    UnknownType,
    WrongKind,
    UnknownAttribute,
    InvalidCombo,
    InfoOutsideInfo,
    BadEnumValue,
    BadBinding,
    BadCoref,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub code: DiagCode,
    pub path: Vec<usize>,
    pub offset: usize,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(
            f,
            "{sev}[{:?}] at byte {} (node {:?}): {}",
            self.code, self.offset, self.path, self.message
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LabelError {
    #[error("unbalanced brackets at byte {offset}")]
    Unbalanced { offset: usize },
    #[error("malformed label `{label}` at byte {offset}: {reason}")]
    BadLabel {
        offset: usize,
        label: String,
        reason: String,
    },
    #[error("empty content at byte {offset}")]
    EmptyContent { offset: usize },
    #[error("text outside of a segment at byte {offset}")]
    StrayText { offset: usize },
    #[error("empty utterance")]
    Empty,
    #[error("{0}")]
    Invalid(Diagnostic),
}

impl LabelError {
    pub fn offset(&self) -> usize {
        match self {
            LabelError::Unbalanced { offset }
            | LabelError::BadLabel { offset, .. }
            | LabelError::EmptyContent { offset }
            | LabelError::StrayText { offset } => *offset,
            LabelError::Empty => 0,
            LabelError::Invalid(d) => d.offset,
        }
    }
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
    raw: String,
    tokens: Vec<Token>,
}

fn is_ident(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn split_binding(s: &str) -> Option<(String, u32)> {
    let (obj, idx) = s.rsplit_once('_')?;
    if obj.is_empty() || !is_ident(obj) || idx.is_empty() || !idx.bytes().all(|b| b.is_ascii_digit())
    {
        return None;
    }
    // bindings name object types, which are upper case
    if !obj.chars().next().is_some_and(|c| c.is_ascii_uppercase()) {
        return None;
    }
    Some((obj.to_string(), idx.parse().ok()?))
}

fn parse_intent_label(label: &str, offset: usize) -> Result<IntentLabel, LabelError> {
    let bad = |reason: &str| LabelError::BadLabel {
        offset,
        label: label.to_string(),
        reason: reason.to_string(),
    };
    let parts: Vec<&str> = label.split(':').collect();
    if parts.len() != 4 {
        return Err(bad("intent must be SIGIL:DIALOG_ACT:ACTIVITY:OBJECT[.attribute]"));
    }
    if parts[0] != "DA" && parts[0] != "IN" {
        return Err(bad("intent sigil must be DA or IN"));
    }
    let (object, attribute) = match parts[3].split_once('.') {
        Some((o, a)) => (o, Some(a)),
        None => (parts[3], None),
    };
    for p in [parts[1], parts[2], object] {
        if !is_ident(p) {
            return Err(bad("expected identifier"));
        }
    }
    if let Some(a) = attribute {
        if !is_ident(a) {
            return Err(bad("expected attribute identifier"));
        }
    }
    Ok(IntentLabel::new(parts[1], parts[2], object, attribute))
}

fn parse_slot_label(label: &str, offset: usize) -> Result<SlotLabel, LabelError> {
    let bad = |reason: &str| LabelError::BadLabel {
        offset,
        label: label.to_string(),
        reason: reason.to_string(),
    };
    let mut rest = label;
    let mut index = None;
    if let Some((head, tail)) = rest.split_once(':') {
        if !head.is_empty() && head.bytes().all(|b| b.is_ascii_digit()) && !head.contains('.') {
            index = Some(head.parse::<u32>().map_err(|_| bad("index out of range"))?);
            rest = tail;
        }
    }
    let (head, tail) = rest
        .split_once('.')
        .ok_or_else(|| bad("slot label needs `.attribute`"))?;
    let (attribute, suffix) = match tail.split_once(':') {
        Some((a, s)) => (a, Some(s)),
        None => (tail, None),
    };
    if !is_ident(attribute) {
        return Err(bad("expected attribute identifier"));
    }
    let prefix = match (head, index) {
        ("", None) => SlotPrefix::Bare,
        ("A", None) => SlotPrefix::Activity,
        ("O", None) => SlotPrefix::Object,
        ("INFO", None) => SlotPrefix::Info,
        (h, None) if h.len() > 1 && h.starts_with('R') && h[1..].bytes().all(|b| b.is_ascii_digit()) => {
            SlotPrefix::Reference(h[1..].parse().map_err(|_| bad("index out of range"))?)
        }
        (h, None) if is_ident(h) => SlotPrefix::Named(h.to_string()),
        (h, Some(index)) if is_ident(h) && !matches!(h, "A" | "O" | "INFO") => SlotPrefix::Indexed {
            index,
            object: h.to_string(),
        },
        _ => return Err(bad("unrecognized slot prefix")),
    };
    let suffix = match suffix {
        None => None,
        Some(s) if !is_ident(s) => return Err(bad("expected value after `:`")),
        Some(s) => Some(match split_binding(s) {
            Some((object, index)) => SlotSuffix::Binding { object, index },
            None => SlotSuffix::Enum(s.to_string()),
        }),
    };
    Ok(SlotLabel {
        prefix,
        attribute: attribute.to_string(),
        suffix,
    })
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    /// Skips whitespace; reports whether any was skipped.
    fn skip_ws(&mut self) -> bool {
        let start = self.pos;
        while self.peek().is_some_and(char::is_whitespace) {
            self.bump();
        }
        self.pos > start
    }

    fn push_space(&mut self, space_before: bool) {
        if space_before && !self.raw.is_empty() {
            self.raw.push(' ');
        }
    }

    fn utterance(mut self) -> Result<AnnotatedUtterance, LabelError> {
        let mut segments = Vec::new();
        loop {
            let had_ws = self.skip_ws();
            match self.peek() {
                None => break,
                Some('[') => {
                    let node = self.bracket(true, had_ws && !segments.is_empty())?;
                    segments.push(node);
                }
                Some(']') => return Err(LabelError::Unbalanced { offset: self.pos }),
                Some(_) => return Err(LabelError::StrayText { offset: self.pos }),
            }
        }
        if segments.is_empty() {
            return Err(LabelError::Empty);
        }
        Ok(AnnotatedUtterance {
            raw_text: self.raw,
            segments,
            coref_links: Vec::new(),
            tokens: self.tokens,
        })
    }

    fn bracket(&mut self, top: bool, space_before: bool) -> Result<ParseNode, LabelError> {
        let open = self.pos;
        self.bump(); // '['
        let label_start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_whitespace() || c == '[' || c == ']' {
                break;
            }
            self.bump();
        }
        let label_text = &self.src[label_start..self.pos];
        if self.peek().is_none() {
            return Err(LabelError::Unbalanced { offset: open });
        }
        if label_text.is_empty() {
            return Err(LabelError::BadLabel {
                offset: open,
                label: String::new(),
                reason: "missing label".into(),
            });
        }
        let label = if top {
            Label::Intent(parse_intent_label(label_text, open)?)
        } else {
            Label::Slot(parse_slot_label(label_text, open)?)
        };
        if !self.peek().is_some_and(char::is_whitespace) {
            return Err(LabelError::EmptyContent { offset: open });
        }
        self.skip_ws();

        self.push_space(space_before);
        let start = self.raw.len();
        let first_token = self.tokens.len();
        let mut content = Vec::new();
        let mut first = true;
        loop {
            let had_ws = self.skip_ws();
            let sb = had_ws && !first;
            match self.peek() {
                None => return Err(LabelError::Unbalanced { offset: open }),
                Some(']') => {
                    self.bump();
                    break;
                }
                Some('[') => {
                    let child = self.bracket(false, sb)?;
                    content.push(Content::Slot(child));
                }
                Some(_) => {
                    let tok = self.token(sb)?;
                    content.push(Content::Token(tok));
                }
            }
            first = false;
        }
        if content.is_empty() {
            return Err(LabelError::EmptyContent { offset: open });
        }
        Ok(ParseNode {
            label,
            span: Span {
                start,
                end: self.raw.len(),
            },
            tokens: (first_token, self.tokens.len()),
            space_before,
            content,
            source_offset: open,
        })
    }

    fn token(&mut self, space_before: bool) -> Result<Token, LabelError> {
        self.push_space(space_before);
        let start = self.raw.len();
        let mut text = String::new();
        while let Some(c) = self.peek() {
            match c {
                c if c.is_whitespace() => break,
                '[' | ']' => break,
                '\\' => {
                    let at = self.pos;
                    self.bump();
                    match self.bump() {
                        Some(e @ ('[' | ']' | '\\')) => text.push(e),
                        _ => {
                            return Err(LabelError::BadLabel {
                                offset: at,
                                label: "\\".into(),
                                reason: "only \\[, \\] and \\\\ are valid escapes".into(),
                            })
                        }
                    }
                }
                c => {
                    text.push(c);
                    self.bump();
                }
            }
        }
        self.raw.push_str(&text);
        let tok = Token {
            text,
            span: Span {
                start,
                end: self.raw.len(),
            },
            space_before,
        };
        self.tokens.push(tok.clone());
        Ok(tok)
    }
}

/// Grammar-only parse; no ontology checks.
pub fn parse_syntax(text: &str) -> Result<AnnotatedUtterance, LabelError> {
    Parser {
        src: text,
        pos: 0,
        raw: String::new(),
        tokens: Vec::new(),
    }
    .utterance()
}

/// Parses and validates; the first error diagnostic becomes the error.
pub fn parse(text: &str, g: &OntologyGraph, domain: Domain) -> Result<AnnotatedUtterance, LabelError> {
    let u = parse_syntax(text)?;
    if let Some(d) = validate(&u, g, domain)
        .into_iter()
        .find(|d| d.severity == Severity::Error)
    {
        return Err(LabelError::Invalid(d));
    }
    Ok(u)
}

fn escape(text: &str, out: &mut String) {
    for c in text.chars() {
        if matches!(c, '[' | ']' | '\\') {
            out.push('\\');
        }
        out.push(c);
    }
}

fn write_node(node: &ParseNode, out: &mut String) {
    out.push('[');
    match &node.label {
        Label::Intent(i) => out.push_str(&i.to_string()),
        Label::Slot(s) => out.push_str(&s.to_string()),
    }
    out.push(' ');
    for (i, item) in node.content.iter().enumerate() {
        match item {
            Content::Token(t) => {
                if t.space_before && i > 0 {
                    out.push(' ');
                }
                escape(&t.text, out);
            }
            Content::Slot(n) => {
                if n.space_before && i > 0 {
                    out.push(' ');
                }
                write_node(n, out);
            }
        }
    }
    out.push(']');
}

/// Canonical annotated string: `DA:` sigil, single spaces, original tokens.
pub fn serialize(u: &AnnotatedUtterance) -> String {
    let mut out = String::new();
    for (i, seg) in u.segments.iter().enumerate() {
        if i > 0 && seg.space_before {
            out.push(' ');
        }
        write_node(seg, &mut out);
    }
    out
}

struct Validator<'a> {
    g: &'a OntologyGraph,
    domain: Domain,
    out: Vec<Diagnostic>,
}

impl Validator<'_> {
    fn diag(&mut self, code: DiagCode, path: &[usize], offset: usize, message: String) {
        self.out.push(Diagnostic {
            severity: Severity::Error,
            code,
            path: path.to_vec(),
            offset,
            message,
        });
    }

    fn expect_kind(&mut self, name: &str, kind: Kind, path: &[usize], offset: usize) -> bool {
        match self.g.kind_of(name) {
            None => {
                self.diag(DiagCode::UnknownType, path, offset, format!("unknown type `{name}`"));
                false
            }
            Some(k) if k != kind => {
                self.diag(
                    DiagCode::WrongKind,
                    path,
                    offset,
                    format!("`{name}` is a {k:?}, expected {kind:?}"),
                );
                false
            }
            _ => true,
        }
    }

    fn segment(&mut self, node: &ParseNode, path: &[usize]) {
        let Label::Intent(intent) = &node.label else {
            return;
        };
        let off = node.source_offset;
        let da_ok = self.expect_kind(&intent.dialog_act, Kind::DialogAct, path, off);
        let act_ok = self.expect_kind(&intent.activity, Kind::Activity, path, off);
        let obj_ok = self.expect_kind(&intent.object, Kind::Object, path, off);
        if da_ok && act_ok && !self.g.combos().contains(self.domain, &intent.dialog_act, &intent.activity)
        {
            self.diag(
                DiagCode::InvalidCombo,
                path,
                off,
                format!(
                    "{}:{} is not a valid combination for {}",
                    intent.dialog_act, intent.activity, self.domain
                ),
            );
        }
        if obj_ok {
            if let Some(a) = &intent.attribute {
                if self.g.resolve_attribute(&intent.object, a).is_err() {
                    self.diag(
                        DiagCode::UnknownAttribute,
                        path,
                        off,
                        format!("`{}` has no attribute `{a}`", intent.object),
                    );
                }
            }
        }
        let ctx = SlotCtx {
            intent,
            act_ok,
            obj_ok,
            parent_range: None,
        };
        for (i, child) in node.children().enumerate() {
            let mut p = path.to_vec();
            p.push(i);
            self.slot(child, &p, &ctx);
        }
    }

    fn slot(&mut self, node: &ParseNode, path: &[usize], ctx: &SlotCtx<'_>) {
        let Label::Slot(slot) = &node.label else {
            return;
        };
        let off = node.source_offset;
        let intent = ctx.intent;
        let targets: Vec<String> = match &slot.prefix {
            SlotPrefix::Activity => ctx.act_ok.then(|| intent.activity.clone()).into_iter().collect(),
            SlotPrefix::Object | SlotPrefix::Reference(_) => {
                ctx.obj_ok.then(|| intent.object.clone()).into_iter().collect()
            }
            SlotPrefix::Info => {
                if !intent.is_info() {
                    self.diag(
                        DiagCode::InfoOutsideInfo,
                        path,
                        off,
                        format!("INFO prefix under intent `{intent}` without `.info`"),
                    );
                }
                ctx.obj_ok.then(|| intent.object.clone()).into_iter().collect()
            }
            SlotPrefix::Named(o) | SlotPrefix::Indexed { object: o, .. } => {
                if self.expect_kind(o, Kind::Object, path, off) {
                    vec![o.clone()]
                } else {
                    vec![]
                }
            }
            SlotPrefix::Bare => match &ctx.parent_range {
                Some(AttrRange::Type(t)) => vec![t.clone()],
                _ => {
                    let mut v = Vec::new();
                    if ctx.obj_ok {
                        v.push(intent.object.clone());
                    }
                    if ctx.act_ok {
                        v.push(intent.activity.clone());
                    }
                    v
                }
            },
        };
        let resolved = targets
            .iter()
            .find_map(|t| self.g.resolve_attribute(t, &slot.attribute).ok());
        let range = match resolved {
            Some(def) => Some(def.range.clone()),
            None => {
                if !targets.is_empty() {
                    self.diag(
                        DiagCode::UnknownAttribute,
                        path,
                        off,
                        format!("no attribute `{}` on {}", slot.attribute, targets.join(" or ")),
                    );
                }
                None
            }
        };
        match (&slot.suffix, &range) {
            (Some(SlotSuffix::Enum(v)), Some(AttrRange::Enum(e))) => {
                let ok = self
                    .g
                    .enum_def(e)
                    .is_some_and(|d| d.values.iter().any(|x| x == v));
                if !ok {
                    self.diag(
                        DiagCode::BadEnumValue,
                        path,
                        off,
                        format!("`{v}` is not a value of enum `{e}`"),
                    );
                }
            }
            (Some(SlotSuffix::Enum(v)), Some(_)) => self.diag(
                DiagCode::BadEnumValue,
                path,
                off,
                format!("attribute `{}` is not enum-valued (got `{v}`)", slot.attribute),
            ),
            (Some(SlotSuffix::Binding { object, .. }), Some(r)) => {
                let ok = match r {
                    AttrRange::Type(t) => self.g.is_subtype(object, t).unwrap_or(false),
                    _ => false,
                };
                if !ok {
                    self.diag(
                        DiagCode::BadBinding,
                        path,
                        off,
                        format!("`{object}` cannot fill attribute `{}`", slot.attribute),
                    );
                }
            }
            _ => {}
        }
        let child_ctx = SlotCtx {
            intent,
            act_ok: ctx.act_ok,
            obj_ok: ctx.obj_ok,
            parent_range: range,
        };
        for (i, child) in node.children().enumerate() {
            let mut p = path.to_vec();
            p.push(i);
            self.slot(child, &p, &child_ctx);
        }
    }
}

struct SlotCtx<'a> {
    intent: &'a IntentLabel,
    act_ok: bool,
    obj_ok: bool,
    parent_range: Option<AttrRange>,
}

/// All ontology diagnostics for `u`; empty iff the utterance is well formed.
pub fn validate(u: &AnnotatedUtterance, g: &OntologyGraph, domain: Domain) -> Vec<Diagnostic> {
    let mut v = Validator {
        g,
        domain,
        out: Vec::new(),
    };
    for (i, seg) in u.segments.iter().enumerate() {
        v.segment(seg, &[i]);
    }
    let mentions = extract_mentions(u);
    for link in &u.coref_links {
        if !mentions.iter().any(|m| m.path == link.mention) {
            let offset = u.node(&link.mention).map_or(0, |n| n.source_offset);
            v.diag(
                DiagCode::BadCoref,
                &link.mention,
                offset,
                format!("coreference to {:?} is not an object mention", link.mention),
            );
        }
    }
    v.out
}

/// A reference to an object (type plus optional index) inside an utterance.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mention {
    pub path: Vec<usize>,
    pub object: String,
    pub index: Option<u32>,
}

impl Mention {
    pub fn key(&self) -> String {
        match self.index {
            Some(k) => format!("{}_{k}", self.object),
            None => self.object.clone(),
        }
    }
}

fn walk_slots<'a>(node: &'a ParseNode, path: &mut Vec<usize>, f: &mut dyn FnMut(&'a ParseNode, &[usize])) {
    for (i, child) in node.children().enumerate() {
        path.push(i);
        f(child, path);
        walk_slots(child, path, f);
        path.pop();
    }
}

/// Object mentions in document order, deduplicated per segment by
/// (object type, index).
pub fn extract_mentions(u: &AnnotatedUtterance) -> Vec<Mention> {
    let mut out = Vec::new();
    for (s, seg) in u.segments.iter().enumerate() {
        let Some(intent) = seg.intent() else { continue };
        // index -> object type for explicit bindings in this segment
        let mut typed_indices = Vec::new();
        walk_slots(seg, &mut vec![s], &mut |n, _| {
            if let Some(SlotSuffix::Binding { object, index }) = n.slot().and_then(|l| l.suffix.as_ref())
            {
                typed_indices.push((*index, object.clone()));
            }
        });
        let type_for = |k: u32| -> String {
            typed_indices
                .iter()
                .find(|(i, _)| *i == k)
                .map(|(_, o)| o.clone())
                .unwrap_or_else(|| intent.object.clone())
        };

        let mut seg_mentions = vec![Mention {
            path: vec![s],
            object: intent.object.clone(),
            index: None,
        }];
        walk_slots(seg, &mut vec![s], &mut |n, path| {
            let Some(label) = n.slot() else { return };
            let candidate = if let Some(SlotSuffix::Binding { object, index }) = &label.suffix {
                Some((object.clone(), Some(*index)))
            } else if label.attribute == "attentionOn" {
                match &label.prefix {
                    SlotPrefix::Indexed { index, .. } | SlotPrefix::Reference(index) => {
                        Some((type_for(*index), Some(*index)))
                    }
                    _ => Some((intent.object.clone(), None)),
                }
            } else {
                None
            };
            if let Some((object, index)) = candidate {
                if !seg_mentions.iter().any(|m| m.object == object && m.index == index) {
                    seg_mentions.push(Mention {
                        path: path.to_vec(),
                        object,
                        index,
                    });
                }
            }
        });
        out.extend(seg_mentions);
    }
    out
}

fn slot_entries(node: &ParseNode, intent: usize, parent: Option<&str>, u: &AnnotatedUtterance, out: &mut Vec<SlotEntry>) {
    for child in node.children() {
        let Some(label) = child.slot() else { continue };
        let name = match parent {
            None => label.to_string(),
            Some(p) => format!("{p}.{}{}", label.attribute, label.suffix_str()),
        };
        out.push(SlotEntry {
            intent,
            name: name.clone(),
            text: u.span_text(child.span).to_string(),
        });
        slot_entries(child, intent, Some(&name), u, out);
    }
}

/// Flattens an utterance into intents, named slot spans and coreferences.
pub fn flatten(u: &AnnotatedUtterance) -> BeliefFrame {
    let mut frame = BeliefFrame::default();
    for (i, seg) in u.segments.iter().enumerate() {
        if let Some(intent) = seg.intent() {
            frame.intents.push(intent.clone());
        }
        slot_entries(seg, i, None, u, &mut frame.slots);
    }
    let mentions = extract_mentions(u);
    for link in &u.coref_links {
        if let Some(m) = mentions.iter().find(|m| m.path == link.mention) {
            frame.coref.push(CorefEntry {
                intent: link.mention[0],
                mention: m.key(),
                item_id: link.item_id.clone(),
            });
        }
    }
    frame
}

/// Wire form: canonical annotated string plus the coreference sidecar.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub coref: Vec<CorefLink>,
}

impl From<&AnnotatedUtterance> for AnnotationRecord {
    fn from(u: &AnnotatedUtterance) -> Self {
        Self {
            text: serialize(u),
            coref: u.coref_links.clone(),
        }
    }
}

impl AnnotationRecord {
    pub fn to_utterance(&self) -> Result<AnnotatedUtterance, LabelError> {
        let mut u = parse_syntax(&self.text)?;
        u.coref_links = self.coref.clone();
        Ok(u)
    }
}

/// Shipped golden fixtures, one annotated utterance per line.
pub const FIXTURES: &str = include_str!("../fixtures/annotations.txt");

/// Fixture lines with their domain. Lines are grouped under `@domain <name>`
/// headers; `#` starts a comment line.
pub fn fixture_lines(text: &str) -> Vec<(Domain, &str)> {
    let mut domain = Domain::Furniture;
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(d) = line.strip_prefix("@domain") {
            domain = d.trim().parse().expect("fixture domain header");
            continue;
        }
        out.push((domain, line));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g() -> OntologyGraph {
        OntologyGraph::shipped()
    }

    #[test]
    fn simple_intent_no_slots() {
        let u = parse("[DA:ASK:GET:DRESS.price How much is the dress?]", &g(), Domain::Fashion).unwrap();
        assert_eq!(u.segments.len(), 1);
        assert_eq!(
            u.segments[0].intent().unwrap(),
            &IntentLabel::new("ASK", "GET", "DRESS", Some("price"))
        );
        assert_eq!(u.segments[0].children().count(), 0);
        assert_eq!(u.raw_text, "How much is the dress?");
    }

    #[test]
    fn slot_span_and_attached_punctuation() {
        let src = "[DA:INFORM:GET:TABLE.color That table is [O.color hunter green].]";
        let u = parse(src, &g(), Domain::Furniture).unwrap();
        assert_eq!(u.raw_text, "That table is hunter green.");
        let slot = u.segments[0].children().next().unwrap();
        assert_eq!(u.span_text(slot.span), "hunter green");
        assert_eq!(serialize(&u), src);
        let f = flatten(&u);
        assert_eq!(
            f.slots,
            vec![SlotEntry {
                intent: 0,
                name: "O.color".into(),
                text: "hunter green".into()
            }]
        );
    }

    #[test]
    fn nested_slot_and_in_sigil() {
        let src = "[IN:INFORM:GET:SKIRT Here's [O.sequential another] [O.color brown] skirt from [O.brand [.name Wind & Wool]].]";
        let u = parse(src, &g(), Domain::Fashion).unwrap();
        let brand = u.segments[0].children().nth(2).unwrap();
        assert_eq!(brand.slot().unwrap().attribute, "brand");
        let name = brand.children().next().unwrap();
        assert_eq!(name.slot().unwrap().prefix, SlotPrefix::Bare);
        assert_eq!(u.span_text(name.span), "Wind & Wool");
        assert!(serialize(&u).starts_with("[DA:INFORM:GET:SKIRT"));
        let f = flatten(&u);
        assert_eq!(f.slots[3].name, "O.brand.name");
        assert_eq!(f.slots.len(), 4);
    }

    #[test]
    fn info_slots() {
        let u = parse(
            "[DA:INFORM:GET:SKIRT.info This costs [INFO.price $139] and has a [INFO.customerRating 3.86] rating.]",
            &g(),
            Domain::Fashion,
        )
        .unwrap();
        let f = flatten(&u);
        assert_eq!(f.slots.len(), 2);
        assert_eq!(f.slots[0].text, "$139");
        assert_eq!(f.slots[1].name, "INFO.customerRating");
    }

    #[test]
    fn info_outside_info_intent() {
        let u = parse_syntax("[DA:ASK:GET:DRESS.price What is [INFO.color this]]").unwrap();
        let d = validate(&u, &g(), Domain::Fashion);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].code, DiagCode::InfoOutsideInfo);
    }

    #[test]
    fn invalid_combo_diagnostic() {
        let u = parse_syntax("[DA:REQUEST:DISPREFER:TABLE I hate it]").unwrap();
        let d = validate(&u, &g(), Domain::Furniture);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].code, DiagCode::InvalidCombo);
        let err = parse("[DA:REQUEST:DISPREFER:TABLE I hate it]", &g(), Domain::Furniture).unwrap_err();
        assert_eq!(err.offset(), 0);
    }

    #[test]
    fn fashion_rejects_count() {
        let src = "[DA:REQUEST:COUNT:DRESS How many [O.color green] ones do you have?]";
        assert!(parse(src, &g(), Domain::Furniture).is_ok());
        let err = parse(src, &g(), Domain::Fashion).unwrap_err();
        assert!(matches!(err, LabelError::Invalid(Diagnostic { code: DiagCode::InvalidCombo, .. })));
    }

    #[test]
    fn syntax_errors_carry_offsets() {
        assert_eq!(
            parse_syntax("[DA:ASK:GET:DRESS How [O.color red").unwrap_err(),
            LabelError::Unbalanced { offset: 22 }
        );
        assert_eq!(
            parse_syntax("[DA:ASK:GET:DRESS hi]]").unwrap_err(),
            LabelError::Unbalanced { offset: 21 }
        );
        assert_eq!(
            parse_syntax("hello [DA:ASK:GET:DRESS hi]").unwrap_err(),
            LabelError::StrayText { offset: 0 }
        );
        assert!(matches!(
            parse_syntax("[XX:ASK:GET:DRESS hi]").unwrap_err(),
            LabelError::BadLabel { offset: 0, .. }
        ));
        assert_eq!(
            parse_syntax("[DA:ASK:GET:DRESS [O.color ]]").unwrap_err(),
            LabelError::EmptyContent { offset: 18 }
        );
        assert_eq!(parse_syntax("   ").unwrap_err(), LabelError::Empty);
    }

    #[test]
    fn unknown_names_and_enum_values() {
        let err = parse("[DA:ASK:GET:UNICORN hi]", &g(), Domain::Fashion).unwrap_err();
        assert!(matches!(err, LabelError::Invalid(Diagnostic { code: DiagCode::UnknownType, .. })));
        let err = parse("[DA:ASK:GET:DRESS [O.wingspan big]]", &g(), Domain::Fashion).unwrap_err();
        assert!(matches!(err, LabelError::Invalid(Diagnostic { code: DiagCode::UnknownAttribute, offset: 18, .. })));
        let err = parse("[DA:REQUEST:ROTATE:TABLE the [A.rotateTo:SIDEWAYS side]]", &g(), Domain::Furniture)
            .unwrap_err();
        assert!(matches!(err, LabelError::Invalid(Diagnostic { code: DiagCode::BadEnumValue, .. })));
    }

    #[test]
    fn escapes_round_trip() {
        let src = r"[DA:INFORM:GET:TABLE A \[bracketed\] note \\ here]";
        let u = parse(src, &g(), Domain::Furniture).unwrap();
        assert_eq!(u.raw_text, r"A [bracketed] note \ here");
        assert_eq!(serialize(&u), src);
    }

    #[test]
    fn canonicalizes_whitespace() {
        let u = parse_syntax("[IN:INFORM:CHECK:TABLE.color   Yes, the table is [.check blue ] .]").unwrap();
        assert_eq!(serialize(&u), "[DA:INFORM:CHECK:TABLE.color Yes, the table is [.check blue] .]");
        assert_eq!(u.raw_text, "Yes, the table is blue .");
    }

    #[test]
    fn multi_segment_raw_text() {
        let u = parse_syntax("[DA:CONFIRM:GET:TABLE_LAMP Yes I do!] [DA:INFORM:GET:TABLE_LAMP It is [O.price $38].]")
            .unwrap();
        assert_eq!(u.raw_text, "Yes I do! It is $38.");
        assert_eq!(flatten(&u).intents.len(), 2);
        assert_eq!(flatten(&u).slots[0].intent, 1);
    }

    #[test]
    fn mentions() {
        let u = parse_syntax("[DA:REQUEST:GET:CHAIR Show me the back of it]").unwrap();
        let m = extract_mentions(&u);
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].object, "CHAIR");

        let u = parse_syntax("[DA:REQUEST:COMPARE:DRESS.price Is the [R1.color green] [A.comp:DRESS_1 one] more expensive than [2:USER.attentionOn this] [A.comp:DRESS_2 dress]?]").unwrap();
        let m = extract_mentions(&u);
        let keys: Vec<String> = m.iter().map(Mention::key).collect();
        assert_eq!(keys, vec!["DRESS", "DRESS_1", "DRESS_2"]);

        let u = parse_syntax("[DA:ASK:GET:TABLE.color What color is [USER.attentionOn that] table?]").unwrap();
        assert_eq!(extract_mentions(&u).len(), 1);
    }

    #[test]
    fn slot_label_forms() {
        let l = parse_slot_label("2:USER.attentionOn", 0).unwrap();
        assert_eq!(
            l.prefix,
            SlotPrefix::Indexed {
                index: 2,
                object: "USER".into()
            }
        );
        assert_eq!(l.index_binding().unwrap().index, 2);
        let l = parse_slot_label("A.comp:TABLE_LAMP_3", 0).unwrap();
        assert_eq!(
            l.index_binding(),
            Some(IndexBinding {
                object: Some("TABLE_LAMP".into()),
                index: 3
            })
        );
        let l = parse_slot_label("A.rotateTo:BACK", 0).unwrap();
        assert_eq!(l.enum_value(), Some("BACK"));
        let l = parse_slot_label("R1.color", 0).unwrap();
        assert_eq!(l.prefix, SlotPrefix::Reference(1));
        for s in ["2:USER.attentionOn", "A.comp:TABLE_LAMP_3", "R1.color", ".name", "INFO.price"] {
            assert_eq!(parse_slot_label(s, 0).unwrap().to_string(), s);
        }
        assert!(parse_slot_label("color", 0).is_err());
    }

    #[test]
    fn coref_flatten() {
        let mut u = parse_syntax("[DA:REQUEST:ADD_TO_CART:SOFA I'll take [USER.attentionOn it]]").unwrap();
        u.coref_links.push(CorefLink {
            mention: vec![0],
            item_id: "f-001".into(),
        });
        assert!(validate(&u, &g(), Domain::Furniture).is_empty());
        let f = flatten(&u);
        assert_eq!(
            f.coref,
            vec![CorefEntry {
                intent: 0,
                mention: "SOFA".into(),
                item_id: "f-001".into()
            }]
        );
        u.coref_links.push(CorefLink {
            mention: vec![0, 0],
            item_id: "f-002".into(),
        });
        assert_eq!(validate(&u, &g(), Domain::Furniture)[0].code, DiagCode::BadCoref);
    }

    #[test]
    fn zero_slots_flatten() {
        let u = parse_syntax("[DA:REQUEST:GET:DRESS I'd like to a buy a dress.]").unwrap();
        let f = flatten(&u);
        assert_eq!(f.intents.len(), 1);
        assert!(f.slots.is_empty());
    }

    #[test]
    fn empty_serialize() {
        let u = AnnotatedUtterance {
            raw_text: String::new(),
            segments: vec![],
            coref_links: vec![],
            tokens: vec![],
        };
        assert_eq!(serialize(&u), "");
    }

    #[test]
    fn shipped_fixtures_parse_and_round_trip() {
        let g = g();
        let lines = fixture_lines(FIXTURES);
        assert!(lines.len() >= 30);
        for (domain, line) in lines {
            let u = parse(line, &g, domain).unwrap_or_else(|e| panic!("{line}: {e}"));
            assert!(validate(&u, &g, domain).is_empty(), "{line}");
            let canon = serialize(&u);
            let again = parse(&canon, &g, domain).unwrap();
            assert_eq!(again, u, "{line}");
            assert_eq!(serialize(&again), canon);
            for n in flatten(&u).slots {
                assert!(u.raw_text.contains(&n.text));
            }
        }
    }
}
