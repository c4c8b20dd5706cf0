//! Type system for annotations: object, activity and dialog-act hierarchies,
//! attribute definitions with inheritance, and the dialog-act x activity
//! validity table per domain.
//!
//! The ontology is loaded from a flat JSON document with four top-level
//! arrays (`types`, `attributes`, `enums`, `combos`). Loading validates the
//! whole graph once; afterwards the graph is immutable and every query is a
//! plain lookup.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Shipped ontology document, transcribed from the annotation guidelines.
pub const SHIPPED_ONTOLOGY: &str = include_str!("../ontology/simmc.json");

pub const OBJECT_ROOT: &str = "OBJECT";
pub const ACTIVITY_ROOT: &str = "ACTIVITY";
pub const DIALOG_ACT_ROOT: &str = "DIALOG_ACT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Object,
    Activity,
    DialogAct,
}

impl Kind {
    pub fn root(self) -> &'static str {
        match self {
            Kind::Object => OBJECT_ROOT,
            Kind::Activity => ACTIVITY_ROOT,
            Kind::DialogAct => DIALOG_ACT_ROOT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Furniture,
    Fashion,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Furniture => "furniture",
            Domain::Fashion => "fashion",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Domain {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "furniture" => Ok(Domain::Furniture),
            "fashion" => Ok(Domain::Fashion),
            other => Err(format!("unknown domain `{other}` (expected furniture|fashion)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeNode {
    pub name: String,
    pub kind: Kind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Primitive {
    String,
    Integer,
    Decimal,
    Boolean,
}

/// What an attribute's values range over.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttrRange {
    Type(String),
    Primitive(Primitive),
    Enum(String),
}

fn default_true() -> bool {
    true
}

fn is_true(b: &bool) -> bool {
    *b
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AttributeDef {
    pub name: String,
    pub domain: String,
    pub range: AttrRange,
    #[serde(default = "default_true", skip_serializing_if = "is_true")]
    pub canonical: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inverse_of: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnumDef {
    pub name: String,
    pub values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ComboEntry {
    pub domain: Domain,
    pub dialog_act: String,
    pub activity: String,
}

/// Valid (dialog act, activity) pairs per domain.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ComboTable {
    valid_pairs: BTreeSet<(Domain, String, String)>,
}

impl ComboTable {
    pub fn contains(&self, domain: Domain, dialog_act: &str, activity: &str) -> bool {
        self.valid_pairs
            .contains(&(domain, dialog_act.to_string(), activity.to_string()))
    }

    pub fn pairs(&self, domain: Domain) -> impl Iterator<Item = (&str, &str)> {
        self.valid_pairs
            .iter()
            .filter(move |(d, _, _)| *d == domain)
            .map(|(_, da, act)| (da.as_str(), act.as_str()))
    }

    pub fn len(&self, domain: Domain) -> usize {
        self.pairs(domain).count()
    }
}

/// On-disk form of the ontology.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OntologyDocument {
    #[serde(default)]
    pub types: Vec<TypeNode>,
    #[serde(default)]
    pub attributes: Vec<AttributeDef>,
    #[serde(default)]
    pub enums: Vec<EnumDef>,
    #[serde(default)]
    pub combos: Vec<ComboEntry>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OntologyError {
    #[error("malformed ontology document: {0}")]
    Malformed(String),
    #[error("missing root `{0}` for its kind")]
    MissingRoot(String),
    #[error("duplicate name `{0}`")]
    Duplicate(String),
    #[error("dangling reference `{reference}` in `{owner}`")]
    Dangling { owner: String, reference: String },
    #[error("cycle in hierarchy through `{0}`")]
    Cycle(String),
    #[error("type `{child}` has kind different from its parent `{parent}`")]
    KindMismatch { child: String, parent: String },
    #[error("inverse pair `{0}`/`{1}` must have exactly one canonical side")]
    InverseCanonical(String, String),
    #[error("inverse reference of `{0}` is not reciprocal")]
    InverseNotReciprocal(String),
    #[error("attribute `{attribute}` declared at two levels of the chain of `{ty}`")]
    AmbiguousAttribute { ty: String, attribute: String },
    #[error("combo ({dialog_act}, {activity}) uses names of the wrong kind")]
    ComboKind {
        dialog_act: String,
        activity: String,
    },
    #[error("undeclared name `{0}`")]
    Undeclared(String),
    #[error("type `{ty}` has no attribute `{attribute}`")]
    NoSuchAttribute { ty: String, attribute: String },
}

/// A validated, immutable ontology.
#[derive(Debug, Clone, PartialEq)]
pub struct OntologyGraph {
    types: BTreeMap<String, TypeNode>,
    // keyed by (declaring type, attribute name)
    attributes: BTreeMap<(String, String), AttributeDef>,
    enums: BTreeMap<String, EnumDef>,
    combos: ComboTable,
    children: BTreeMap<String, Vec<String>>,
    // declaration order, kept for serialization
    type_order: Vec<String>,
    attr_order: Vec<(String, String)>,
    enum_order: Vec<String>,
}

impl OntologyGraph {
    pub fn from_json(text: &str) -> Result<Self, OntologyError> {
        let doc: OntologyDocument =
            serde_json::from_str(text).map_err(|e| OntologyError::Malformed(e.to_string()))?;
        Self::from_document(doc)
    }

    pub fn shipped() -> Self {
        Self::from_json(SHIPPED_ONTOLOGY).expect("shipped ontology is valid")
    }

    pub fn from_document(doc: OntologyDocument) -> Result<Self, OntologyError> {
        let mut types = BTreeMap::new();
        let mut type_order = Vec::new();
        let mut enums = BTreeMap::new();
        let mut enum_order = Vec::new();

        // names are unique across types and enums together
        for node in &doc.types {
            if types.contains_key(&node.name) {
                return Err(OntologyError::Duplicate(node.name.clone()));
            }
            types.insert(node.name.clone(), node.clone());
            type_order.push(node.name.clone());
        }
        for e in &doc.enums {
            if types.contains_key(&e.name) || enums.contains_key(&e.name) {
                return Err(OntologyError::Duplicate(e.name.clone()));
            }
            let mut seen = BTreeSet::new();
            for v in &e.values {
                if !seen.insert(v) {
                    return Err(OntologyError::Duplicate(format!("{}.{}", e.name, v)));
                }
            }
            if e.values.is_empty() {
                return Err(OntologyError::Malformed(format!("enum `{}` has no values", e.name)));
            }
            enums.insert(e.name.clone(), e.clone());
            enum_order.push(e.name.clone());
        }

        for kind in [Kind::Object, Kind::Activity, Kind::DialogAct] {
            match types.get(kind.root()) {
                Some(n) if n.kind == kind && n.parent.is_none() => {}
                _ => return Err(OntologyError::MissingRoot(kind.root().to_string())),
            }
        }

        let mut children: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for name in &type_order {
            let node = &types[name];
            match &node.parent {
                None => {
                    if node.name != node.kind.root() {
                        return Err(OntologyError::Dangling {
                            owner: node.name.clone(),
                            reference: "<no parent>".into(),
                        });
                    }
                }
                Some(p) => {
                    let parent = types.get(p).ok_or_else(|| OntologyError::Dangling {
                        owner: node.name.clone(),
                        reference: p.clone(),
                    })?;
                    if parent.kind != node.kind {
                        return Err(OntologyError::KindMismatch {
                            child: node.name.clone(),
                            parent: p.clone(),
                        });
                    }
                    children.entry(p.clone()).or_default().push(node.name.clone());
                }
            }
        }

        // every chain must terminate at a root
        for name in &type_order {
            let mut cur = name.as_str();
            let mut steps = 0usize;
            while let Some(p) = types[cur].parent.as_deref() {
                steps += 1;
                if steps > types.len() || p == name {
                    return Err(OntologyError::Cycle(name.clone()));
                }
                cur = p;
            }
        }

        let mut attributes = BTreeMap::new();
        let mut attr_order = Vec::new();
        for attr in &doc.attributes {
            if !types.contains_key(&attr.domain) {
                return Err(OntologyError::Dangling {
                    owner: attr.name.clone(),
                    reference: attr.domain.clone(),
                });
            }
            if types[&attr.domain].kind == Kind::DialogAct {
                return Err(OntologyError::Dangling {
                    owner: attr.name.clone(),
                    reference: attr.domain.clone(),
                });
            }
            match &attr.range {
                AttrRange::Type(t) if !types.contains_key(t) => {
                    return Err(OntologyError::Dangling {
                        owner: attr.name.clone(),
                        reference: t.clone(),
                    })
                }
                AttrRange::Enum(e) if !enums.contains_key(e) => {
                    return Err(OntologyError::Dangling {
                        owner: attr.name.clone(),
                        reference: e.clone(),
                    })
                }
                _ => {}
            }
            let key = (attr.domain.clone(), attr.name.clone());
            if attributes.contains_key(&key) {
                return Err(OntologyError::Duplicate(format!("{}.{}", attr.domain, attr.name)));
            }
            attributes.insert(key.clone(), attr.clone());
            attr_order.push(key);
        }

        let graph_partial = OntologyGraph {
            types,
            attributes,
            enums,
            combos: ComboTable::default(),
            children,
            type_order,
            attr_order,
            enum_order,
        };

        // inverse pairs
        for key in &graph_partial.attr_order {
            let attr = &graph_partial.attributes[key];
            if let Some(inv) = &attr.inverse_of {
                let matches: Vec<&AttributeDef> = graph_partial
                    .attributes
                    .values()
                    .filter(|a| &a.name == inv)
                    .collect();
                let other = match matches.as_slice() {
                    [one] => *one,
                    [] => {
                        return Err(OntologyError::Dangling {
                            owner: attr.name.clone(),
                            reference: inv.clone(),
                        })
                    }
                    _ => return Err(OntologyError::Duplicate(inv.clone())),
                };
                if other.inverse_of.as_deref() != Some(attr.name.as_str()) {
                    return Err(OntologyError::InverseNotReciprocal(attr.name.clone()));
                }
                if attr.canonical == other.canonical {
                    return Err(OntologyError::InverseCanonical(
                        attr.name.clone(),
                        other.name.clone(),
                    ));
                }
            }
        }

        // the same attribute name must not be declared twice along one chain
        for ty in &graph_partial.type_order {
            let mut seen = BTreeSet::new();
            for anc in graph_partial.ancestors(ty) {
                for ((d, n), _) in graph_partial.attributes.range((anc.to_string(), String::new())..)
                {
                    if d != anc {
                        break;
                    }
                    if !seen.insert(n.clone()) {
                        return Err(OntologyError::AmbiguousAttribute {
                            ty: ty.clone(),
                            attribute: n.clone(),
                        });
                    }
                }
            }
        }

        let mut graph = graph_partial;
        let mut combos = ComboTable::default();
        for c in &doc.combos {
            for (name, kind) in [(&c.dialog_act, Kind::DialogAct), (&c.activity, Kind::Activity)] {
                match graph.types.get(name) {
                    None => {
                        return Err(OntologyError::Dangling {
                            owner: "combos".into(),
                            reference: name.clone(),
                        })
                    }
                    Some(n) if n.kind != kind => {
                        return Err(OntologyError::ComboKind {
                            dialog_act: c.dialog_act.clone(),
                            activity: c.activity.clone(),
                        })
                    }
                    _ => {}
                }
            }
            if !combos
                .valid_pairs
                .insert((c.domain, c.dialog_act.clone(), c.activity.clone()))
            {
                return Err(OntologyError::Duplicate(format!(
                    "{}:{}:{}",
                    c.domain, c.dialog_act, c.activity
                )));
            }
        }
        graph.combos = combos;
        Ok(graph)
    }

    /// Inverse of [`OntologyGraph::from_document`], preserving declaration order.
    pub fn to_document(&self) -> OntologyDocument {
        OntologyDocument {
            types: self.type_order.iter().map(|n| self.types[n].clone()).collect(),
            attributes: self
                .attr_order
                .iter()
                .map(|k| self.attributes[k].clone())
                .collect(),
            enums: self.enum_order.iter().map(|n| self.enums[n].clone()).collect(),
            combos: self
                .combos
                .valid_pairs
                .iter()
                .map(|(d, da, act)| ComboEntry {
                    domain: *d,
                    dialog_act: da.clone(),
                    activity: act.clone(),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("ontology serializes")
    }

    pub fn node(&self, name: &str) -> Result<&TypeNode, OntologyError> {
        self.types
            .get(name)
            .ok_or_else(|| OntologyError::Undeclared(name.to_string()))
    }

    pub fn contains_type(&self, name: &str) -> bool {
        self.types.contains_key(name)
    }

    pub fn kind_of(&self, name: &str) -> Option<Kind> {
        self.types.get(name).map(|n| n.kind)
    }

    pub fn types(&self) -> impl Iterator<Item = &TypeNode> {
        self.type_order.iter().map(move |n| &self.types[n])
    }

    pub fn enum_def(&self, name: &str) -> Option<&EnumDef> {
        self.enums.get(name)
    }

    pub fn combos(&self) -> &ComboTable {
        &self.combos
    }

    pub fn parent(&self, name: &str) -> Option<&str> {
        self.types.get(name).and_then(|n| n.parent.as_deref())
    }

    pub fn children(&self, name: &str) -> &[String] {
        self.children.get(name).map(Vec::as_slice).unwrap_or(&[])
    }

    /// `name` followed by its ancestors up to the kind root.
    pub fn ancestors<'a>(&'a self, name: &str) -> impl Iterator<Item = &'a str> + 'a {
        std::iter::successors(
            self.types.get(name).map(|n| n.name.as_str()),
            move |cur| self.parent(cur),
        )
    }

    /// True iff `b` is reachable from `a` through parent links (reflexive).
    pub fn is_subtype(&self, a: &str, b: &str) -> Result<bool, OntologyError> {
        self.node(a)?;
        self.node(b)?;
        Ok(self.ancestors(a).any(|x| x == b))
    }

    /// Attributes declared on `ty` and all its ancestors.
    pub fn attributes_of(&self, ty: &str) -> Result<Vec<&AttributeDef>, OntologyError> {
        self.node(ty)?;
        let mut out = Vec::new();
        for anc in self.ancestors(ty) {
            out.extend(self.declared_on(anc));
        }
        Ok(out)
    }

    fn declared_on<'a>(&'a self, ty: &str) -> impl Iterator<Item = &'a AttributeDef> + 'a {
        let owner = ty.to_string();
        self.attributes
            .range((owner.clone(), String::new())..)
            .take_while(move |((d, _), _)| *d == owner)
            .map(|(_, a)| a)
    }

    pub fn resolve_attribute(&self, ty: &str, attr: &str) -> Result<&AttributeDef, OntologyError> {
        self.node(ty)?;
        self.ancestors(ty)
            .find_map(|anc| self.attributes.get(&(anc.to_string(), attr.to_string())))
            .ok_or_else(|| OntologyError::NoSuchAttribute {
                ty: ty.to_string(),
                attribute: attr.to_string(),
            })
    }

    pub fn validate_combo(
        &self,
        dialog_act: &str,
        activity: &str,
        domain: Domain,
    ) -> Result<bool, OntologyError> {
        self.node(dialog_act)?;
        self.node(activity)?;
        Ok(self.combos.contains(domain, dialog_act, activity))
    }

    /// The root type that every item of a domain descends from.
    pub fn domain_root(domain: Domain) -> &'static str {
        match domain {
            Domain::Furniture => "FURNITURE",
            Domain::Fashion => "CLOTHING",
        }
    }

    /// Leaf-most object types under the domain root (those without children).
    pub fn item_types(&self, domain: Domain) -> Vec<&str> {
        let root = Self::domain_root(domain);
        self.type_order
            .iter()
            .filter(|n| self.children(n).is_empty())
            .filter(|n| self.ancestors(n).any(|a| a == root) && n.as_str() != root)
            .map(String::as_str)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc() -> OntologyDocument {
        serde_json::from_str(SHIPPED_ONTOLOGY).unwrap()
    }

    #[test]
    fn shipped_contains_core_names() {
        let g = OntologyGraph::shipped();
        for n in ["DRESS", "SKIRT", "SOFA", "GET", "ASK", "TABLE_LAMP", "CHAIR"] {
            assert!(g.contains_type(n), "{n}");
        }
    }

    #[test]
    fn empty_document_missing_roots() {
        let err = OntologyGraph::from_json("{}").unwrap_err();
        assert_eq!(err, OntologyError::MissingRoot("OBJECT".into()));
    }

    #[test]
    fn self_parent_is_cycle() {
        let mut d = doc();
        let sofa = d.types.iter_mut().find(|t| t.name == "SOFA").unwrap();
        sofa.parent = Some("SOFA".into());
        assert_eq!(
            OntologyGraph::from_document(d).unwrap_err(),
            OntologyError::Cycle("SOFA".into())
        );
    }

    #[test]
    fn two_node_cycle() {
        let mut d = doc();
        d.types.push(TypeNode {
            name: "A_X".into(),
            kind: Kind::Object,
            parent: Some("B_X".into()),
        });
        d.types.push(TypeNode {
            name: "B_X".into(),
            kind: Kind::Object,
            parent: Some("A_X".into()),
        });
        assert!(matches!(
            OntologyGraph::from_document(d),
            Err(OntologyError::Cycle(_))
        ));
    }

    #[test]
    fn duplicate_and_dangling() {
        let mut d = doc();
        d.types.push(TypeNode {
            name: "SOFA".into(),
            kind: Kind::Object,
            parent: Some("FURNITURE".into()),
        });
        assert_eq!(
            OntologyGraph::from_document(d).unwrap_err(),
            OntologyError::Duplicate("SOFA".into())
        );

        let mut d = doc();
        d.attributes.push(AttributeDef {
            name: "legs".into(),
            domain: "CHAIR".into(),
            range: AttrRange::Type("LEG".into()),
            canonical: true,
            inverse_of: None,
        });
        assert_eq!(
            OntologyGraph::from_document(d).unwrap_err(),
            OntologyError::Dangling {
                owner: "legs".into(),
                reference: "LEG".into()
            }
        );
    }

    #[test]
    fn inverse_pair_needs_one_canonical_side() {
        let mut d = doc();
        for a in d.attributes.iter_mut() {
            if a.name == "inAttentionOf" {
                a.canonical = true;
            }
        }
        assert!(matches!(
            OntologyGraph::from_document(d),
            Err(OntologyError::InverseCanonical(..))
        ));

        let mut d = doc();
        for a in d.attributes.iter_mut() {
            if a.name == "attentionOn" {
                a.canonical = false;
            }
        }
        assert!(matches!(
            OntologyGraph::from_document(d),
            Err(OntologyError::InverseCanonical(..))
        ));
    }

    #[test]
    fn attribute_redeclared_on_subtype_is_rejected() {
        let mut d = doc();
        d.attributes.push(AttributeDef {
            name: "price".into(),
            domain: "DRESS".into(),
            range: AttrRange::Primitive(Primitive::Decimal),
            canonical: true,
            inverse_of: None,
        });
        assert_eq!(
            OntologyGraph::from_document(d).unwrap_err(),
            OntologyError::AmbiguousAttribute {
                ty: "DRESS".into(),
                attribute: "price".into()
            }
        );
    }

    #[test]
    fn subtype_examples() {
        let g = OntologyGraph::shipped();
        assert!(g.is_subtype("SOFA", "FURNITURE").unwrap());
        assert!(g.is_subtype("SOFA", "SOFA").unwrap());
        assert!(!g.is_subtype("FURNITURE", "SOFA").unwrap());
        assert!(g.is_subtype("TABLE_LAMP", "FURNITURE").unwrap());
        assert!(g.is_subtype("NOPE", "SOFA").is_err());
    }

    #[test]
    fn attributes_of_examples() {
        let g = OntologyGraph::shipped();
        let names = |t: &str| -> BTreeSet<String> {
            g.attributes_of(t).unwrap().into_iter().map(|a| a.name.clone()).collect()
        };
        let dress = names("DRESS");
        for a in ["color", "price", "hemLength"] {
            assert!(dress.contains(a), "{a}");
        }
        let count = names("COUNT");
        for a in ["countFrom", "countTo", "countUnit", "amount", "endTime", "startTime"] {
            assert!(count.contains(a), "{a}");
        }
        assert!(names("DIALOG_ACT").is_empty());
        assert!(g.attributes_of("NOPE").is_err());
    }

    #[test]
    fn root_without_attributes_is_empty() {
        let mut d = doc();
        d.attributes.retain(|a| a.domain != "OBJECT");
        for a in d.attributes.iter_mut() {
            if a.name == "attentionOn" {
                a.inverse_of = None;
            }
        }
        let g = OntologyGraph::from_document(d).unwrap();
        assert!(g.attributes_of("OBJECT").unwrap().is_empty());
    }

    #[test]
    fn combo_examples() {
        let g = OntologyGraph::shipped();
        assert!(!g.validate_combo("REQUEST", "DISPREFER", Domain::Furniture).unwrap());
        assert!(g.validate_combo("INFORM", "GET", Domain::Fashion).unwrap());
        assert!(!g.validate_combo("ASK", "ROTATE", Domain::Fashion).unwrap());
        assert!(g.validate_combo("REQUEST", "ROTATE", Domain::Furniture).unwrap());
        assert!(g.validate_combo("ASK", "NOPE", Domain::Fashion).is_err());
        assert_eq!(g.combos().len(Domain::Furniture), 38);
        assert!(g.combos().len(Domain::Furniture) <= 45);
        assert!(g.combos().len(Domain::Fashion) <= 40);
    }

    #[test]
    fn resolve_examples() {
        let g = OntologyGraph::shipped();
        let price = g.resolve_attribute("DRESS", "price").unwrap();
        assert_eq!(price.domain, "CLOTHING");
        assert!(g.resolve_attribute("TABLE_LAMP", "nonexistent").is_err());
        let rot = g.resolve_attribute("ROTATE", "rotateTo").unwrap();
        assert_eq!(rot.range, AttrRange::Enum("ROTATION_VIEW".into()));
    }

    #[test]
    fn json_round_trip() {
        let g = OntologyGraph::shipped();
        let again = OntologyGraph::from_json(&g.to_json()).unwrap();
        assert_eq!(g, again);
    }

    #[test]
    fn item_types_per_domain() {
        let g = OntologyGraph::shipped();
        let f = g.item_types(Domain::Furniture);
        assert!(f.contains(&"SOFA") && f.contains(&"TABLE_LAMP") && !f.contains(&"LAMP"));
        let c = g.item_types(Domain::Fashion);
        assert!(c.contains(&"DRESS") && !c.contains(&"SOFA"));
    }
}
