//! Visual subsumption hierarchy.
//!
//! A [`Hierarchy`] is a single-rooted tree of concept nodes. Every node,
//! the root included, carries a [`Differentia`]: the property assertions
//! that set it apart from its siblings. The genus of a node is the union
//! of its ancestors' differentiae, so the differentia one level up becomes
//! part of the genus one level down.
//!
//! Nodes are addressed by their [`PathIndex`] (`"1"`, `"1_2"`, `"1_1_3"`),
//! which is assigned from sibling insertion order and never changes.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("node {0} not found")]
    NotFound(String),
    #[error("unknown facet `{0}`")]
    UnknownFacet(FacetId),
    #[error("duplicate facet `{0}` in registry")]
    DuplicateFacet(FacetId),
    #[error("facet `{0}` has an empty value domain")]
    EmptyDomain(FacetId),
    #[error("value {value} is outside the domain of facet `{facet}`")]
    ValueOutOfDomain { facet: FacetId, value: Atom },
    #[error("differentia must assert at least one property")]
    EmptyDifferentia,
    #[error("differentia spans several facets ({0}); exactly one facet per level is allowed")]
    MultiFacetDifferentia(String),
    #[error("facet `{0}` is not ascertainable")]
    UnascertainableFacet(FacetId),
    #[error("facet `{0}` is not part of the succession order")]
    NotInSuccession(FacetId),
    #[error("facet `{0}` appears twice in the succession order")]
    DuplicateSuccession(FacetId),
    #[error("facet `{facet}` is already used by ancestor {ancestor}")]
    FacetReused { facet: FacetId, ancestor: PathIndex },
    #[error("siblings under {parent} use facet `{expected}`, not `{found}`")]
    SiblingFacetMismatch {
        parent: PathIndex,
        expected: FacetId,
        found: FacetId,
    },
    #[error("value set overlaps sibling {sibling} on facet `{facet}`")]
    SiblingOverlap { sibling: PathIndex, facet: FacetId },
    #[error("invalid path index `{0}`")]
    InvalidPath(String),
    #[error("stale hierarchy version: expected {expected}, current {current}")]
    VersionConflict { expected: u64, current: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FacetId(String);

impl FacetId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for FacetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for FacetId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

/// A single value: an enumerated token or an integer.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Atom {
    Int(i64),
    Token(String),
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Atom::Int(v) => write!(f, "{v}"),
            Atom::Token(t) => f.write_str(t),
        }
    }
}

impl From<i64> for Atom {
    fn from(v: i64) -> Self {
        Atom::Int(v)
    }
}

impl From<&str> for Atom {
    fn from(v: &str) -> Self {
        Atom::Token(v.to_string())
    }
}

/// Non-empty set of atoms. Serialized as a bare scalar when it holds a
/// single value and as an array otherwise.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ValueSet(BTreeSet<Atom>);

impl ValueSet {
    pub fn new(atoms: impl IntoIterator<Item = Atom>) -> Option<Self> {
        let set: BTreeSet<Atom> = atoms.into_iter().collect();
        (!set.is_empty()).then_some(Self(set))
    }

    pub fn one(atom: impl Into<Atom>) -> Self {
        Self(BTreeSet::from([atom.into()]))
    }

    pub fn atoms(&self) -> impl Iterator<Item = &Atom> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, atom: &Atom) -> bool {
        self.0.contains(atom)
    }

    pub fn is_subset(&self, other: &ValueSet) -> bool {
        self.0.is_subset(&other.0)
    }

    pub fn is_disjoint(&self, other: &ValueSet) -> bool {
        self.0.is_disjoint(&other.0)
    }

    pub fn union(&self, other: &ValueSet) -> ValueSet {
        ValueSet(self.0.union(&other.0).cloned().collect())
    }
}

impl fmt::Display for ValueSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.len() == 1 {
            return write!(f, "{}", self.0.iter().next().expect("non-empty"));
        }
        let parts: Vec<String> = self.0.iter().map(ToString::to_string).collect();
        write!(f, "{{{}}}", parts.join(","))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ValueSetRepr {
    One(Atom),
    Many(Vec<Atom>),
}

impl Serialize for ValueSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        if self.0.len() == 1 {
            ValueSetRepr::One(self.0.iter().next().cloned().expect("non-empty")).serialize(serializer)
        } else {
            ValueSetRepr::Many(self.0.iter().cloned().collect()).serialize(serializer)
        }
    }
}

impl<'de> Deserialize<'de> for ValueSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let atoms = match ValueSetRepr::deserialize(deserializer)? {
            ValueSetRepr::One(a) => vec![a],
            ValueSetRepr::Many(v) => v,
        };
        ValueSet::new(atoms).ok_or_else(|| serde::de::Error::custom("value set must not be empty"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValueDomain {
    Tokens { values: BTreeSet<String> },
    IntRange { min: i64, max: i64 },
    IntSet { values: BTreeSet<i64> },
}

impl ValueDomain {
    pub fn tokens<I, S>(values: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ValueDomain::Tokens {
            values: values.into_iter().map(Into::into).collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            ValueDomain::Tokens { values } => values.is_empty(),
            ValueDomain::IntRange { min, max } => min > max,
            ValueDomain::IntSet { values } => values.is_empty(),
        }
    }

    pub fn contains(&self, atom: &Atom) -> bool {
        match (self, atom) {
            (ValueDomain::Tokens { values }, Atom::Token(t)) => values.contains(t),
            (ValueDomain::IntRange { min, max }, Atom::Int(v)) => (*min..=*max).contains(v),
            (ValueDomain::IntSet { values }, Atom::Int(v)) => values.contains(v),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Facet {
    pub facet_id: FacetId,
    pub name: String,
    pub value_domain: ValueDomain,
    pub ascertainable: bool,
}

impl Facet {
    pub fn new(id: &str, name: &str, value_domain: ValueDomain) -> Self {
        Self {
            facet_id: FacetId::new(id),
            name: name.to_string(),
            value_domain,
            ascertainable: true,
        }
    }

    pub fn unascertainable(mut self) -> Self {
        self.ascertainable = false;
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PropertyRegistry {
    facets: BTreeMap<FacetId, Facet>,
}

impl PropertyRegistry {
    pub fn new(facets: impl IntoIterator<Item = Facet>) -> Result<Self, ModelError> {
        let mut registry = Self::default();
        for facet in facets {
            registry.insert(facet)?;
        }
        Ok(registry)
    }

    pub fn insert(&mut self, facet: Facet) -> Result<(), ModelError> {
        if facet.value_domain.is_empty() {
            return Err(ModelError::EmptyDomain(facet.facet_id));
        }
        if self.facets.contains_key(&facet.facet_id)
            || self.facets.values().any(|f| f.name == facet.name)
        {
            return Err(ModelError::DuplicateFacet(facet.facet_id));
        }
        self.facets.insert(facet.facet_id.clone(), facet);
        Ok(())
    }

    pub fn get(&self, id: &FacetId) -> Option<&Facet> {
        self.facets.get(id)
    }

    pub fn facets(&self) -> impl Iterator<Item = &Facet> {
        self.facets.values()
    }

    pub fn len(&self) -> usize {
        self.facets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facets.is_empty()
    }

    /// Checks that the facet is registered and every asserted value lies in
    /// its domain.
    pub fn check_assertion(&self, assertion: &PropertyAssertion) -> Result<&Facet, ModelError> {
        let facet = self
            .get(&assertion.facet)
            .ok_or_else(|| ModelError::UnknownFacet(assertion.facet.clone()))?;
        if let Some(bad) = assertion.value.atoms().find(|a| !facet.value_domain.contains(a)) {
            return Err(ModelError::ValueOutOfDomain {
                facet: facet.facet_id.clone(),
                value: bad.clone(),
            });
        }
        Ok(facet)
    }

    pub fn check_observation(&self, observed: &Observation) -> Result<(), ModelError> {
        observed
            .assertions()
            .try_for_each(|a| self.check_assertion(&a).map(|_| ()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PropertyAssertion {
    pub facet: FacetId,
    pub value: ValueSet,
}

impl PropertyAssertion {
    pub fn new(facet: impl Into<FacetId>, value: ValueSet) -> Self {
        Self {
            facet: facet.into(),
            value,
        }
    }

    pub fn one(facet: &str, atom: impl Into<Atom>) -> Self {
        Self::new(facet, ValueSet::one(atom))
    }
}

impl fmt::Display for PropertyAssertion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}={}", self.facet, self.value)
    }
}

/// What an annotator asserted about one object: at most one value set per
/// facet. Asserting the same facet twice accumulates the values.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Observation(BTreeMap<FacetId, ValueSet>);

impl Observation {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_assertions(assertions: impl IntoIterator<Item = PropertyAssertion>) -> Self {
        let mut obs = Self::new();
        for a in assertions {
            obs.insert(a);
        }
        obs
    }

    pub fn insert(&mut self, assertion: PropertyAssertion) {
        let merged = match self.0.get(&assertion.facet) {
            Some(prev) => prev.union(&assertion.value),
            None => assertion.value,
        };
        self.0.insert(assertion.facet, merged);
    }

    /// Replaces whatever was observed for the facet.
    pub fn set(&mut self, assertion: PropertyAssertion) {
        self.0.insert(assertion.facet, assertion.value);
    }

    pub fn get(&self, facet: &FacetId) -> Option<&ValueSet> {
        self.0.get(facet)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn assertions(&self) -> impl Iterator<Item = PropertyAssertion> + '_ {
        self.0
            .iter()
            .map(|(f, v)| PropertyAssertion::new(f.clone(), v.clone()))
    }

    /// An assertion `facet ∈ S` is satisfied when the observed values for
    /// `facet` are a (non-empty) subset of `S`.
    pub fn satisfies(&self, assertion: &PropertyAssertion) -> bool {
        self.0
            .get(&assertion.facet)
            .is_some_and(|seen| seen.is_subset(&assertion.value))
    }

    pub fn satisfies_all<'a>(&self, assertions: impl IntoIterator<Item = &'a PropertyAssertion>) -> bool {
        assertions.into_iter().all(|a| self.satisfies(a))
    }

    pub fn merge(&mut self, other: &Observation) {
        for a in other.assertions() {
            self.insert(a);
        }
    }
}

impl FromIterator<PropertyAssertion> for Observation {
    fn from_iter<T: IntoIterator<Item = PropertyAssertion>>(iter: T) -> Self {
        Self::from_assertions(iter)
    }
}

/// The assertions distinguishing a node from its siblings.
///
/// Well-formed hierarchies use exactly one facet per differentia; the type
/// still admits several so that batch validation can report the violation
/// on hierarchies assembled outside [`Hierarchy::add_concept`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Differentia(Vec<PropertyAssertion>);

impl Differentia {
    pub fn new(assertions: impl IntoIterator<Item = PropertyAssertion>) -> Result<Self, ModelError> {
        let merged = Observation::from_assertions(assertions);
        if merged.is_empty() {
            return Err(ModelError::EmptyDifferentia);
        }
        Ok(Self(merged.assertions().collect()))
    }

    pub fn single(facet: &str, value: ValueSet) -> Self {
        Self(vec![PropertyAssertion::new(facet, value)])
    }

    pub fn one(facet: &str, atom: impl Into<Atom>) -> Self {
        Self::single(facet, ValueSet::one(atom))
    }

    pub fn assertions(&self) -> &[PropertyAssertion] {
        &self.0
    }

    pub fn facets(&self) -> impl Iterator<Item = &FacetId> {
        self.0.iter().map(|a| &a.facet)
    }

    pub fn is_single_facet(&self) -> bool {
        self.0.len() == 1
    }

    pub fn get(&self, facet: &FacetId) -> Option<&ValueSet> {
        self.0.iter().find(|a| &a.facet == facet).map(|a| &a.value)
    }

    /// The facet that places this node in its sibling array: its only
    /// facet, or the earliest one in `succession` when it spans several.
    pub fn primary_facet(&self, succession: &[FacetId]) -> &FacetId {
        self.0
            .iter()
            .map(|a| &a.facet)
            .min_by_key(|f| succession.iter().position(|s| s == *f).unwrap_or(usize::MAX))
            .expect("differentia is non-empty")
    }
}

impl fmt::Display for Differentia {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join(" & "))
    }
}

/// Dotted (underscore-separated) position of a node: `"1"` for the root,
/// parent index plus `_k` for the k-th child, 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PathIndex(String);

impl PathIndex {
    pub fn root() -> Self {
        Self("1".to_string())
    }

    pub fn child(&self, k: usize) -> Self {
        Self(format!("{}_{}", self.0, k))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn components(&self) -> Vec<u32> {
        self.0
            .split('_')
            .map(|c| c.parse().expect("validated path component"))
            .collect()
    }

    pub fn depth(&self) -> usize {
        self.0.matches('_').count()
    }

    pub fn parent(&self) -> Option<PathIndex> {
        self.0.rfind('_').map(|i| PathIndex(self.0[..i].to_string()))
    }

    pub fn last(&self) -> u32 {
        *self.components().last().expect("non-empty path")
    }

    /// Strict ancestry: `self` lies on the path from the root to `other`.
    pub fn is_ancestor_of(&self, other: &PathIndex) -> bool {
        other.0.len() > self.0.len()
            && other.0.starts_with(&self.0)
            && other.0.as_bytes()[self.0.len()] == b'_'
    }

    pub fn is_ancestor_or_self(&self, other: &PathIndex) -> bool {
        self == other || self.is_ancestor_of(other)
    }

    /// True when neither node subsumes the other.
    pub fn unrelated(&self, other: &PathIndex) -> bool {
        !self.is_ancestor_or_self(other) && !other.is_ancestor_or_self(self)
    }
}

impl FromStr for PathIndex {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.split('_');
        if parts.next() != Some("1") {
            return Err(ModelError::InvalidPath(s.to_string()));
        }
        for part in parts {
            match part.parse::<u32>() {
                Ok(k) if k >= 1 && !part.starts_with('0') => {}
                _ => return Err(ModelError::InvalidPath(s.to_string())),
            }
        }
        Ok(Self(s.to_string()))
    }
}

impl fmt::Display for PathIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Ord for PathIndex {
    fn cmp(&self, other: &Self) -> Ordering {
        self.components().cmp(&other.components())
    }
}

impl PartialOrd for PathIndex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Serialize for PathIndex {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for PathIndex {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(usize);

/// Owned snapshot of one node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptNode {
    pub node_id: NodeId,
    pub parent: Option<PathIndex>,
    pub differentia: Differentia,
    pub gloss: Option<String>,
    pub path_index: PathIndex,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct NodeData {
    parent: Option<usize>,
    children: Vec<usize>,
    differentia: Differentia,
    gloss: Option<String>,
    path: PathIndex,
}

#[derive(Debug, Clone)]
pub struct Hierarchy {
    purpose: String,
    succession_order: Vec<FacetId>,
    registry: PropertyRegistry,
    nodes: Vec<NodeData>,
    by_path: HashMap<PathIndex, usize>,
    version: u64,
}

impl PartialEq for Hierarchy {
    fn eq(&self, other: &Self) -> bool {
        self.purpose == other.purpose
            && self.succession_order == other.succession_order
            && self.registry == other.registry
            && self.version == other.version
            && self.nodes().map(|n| (n.path_index, n.differentia, n.gloss)).eq(other
                .nodes()
                .map(|n| (n.path_index, n.differentia, n.gloss)))
    }
}

impl Hierarchy {
    /// Creates a hierarchy holding only its root.
    pub fn new(
        purpose: impl Into<String>,
        registry: PropertyRegistry,
        succession_order: Vec<FacetId>,
        root_differentia: Differentia,
        root_gloss: Option<String>,
    ) -> Result<Self, ModelError> {
        let mut seen = BTreeSet::new();
        for f in &succession_order {
            if registry.get(f).is_none() {
                return Err(ModelError::UnknownFacet(f.clone()));
            }
            if !seen.insert(f.clone()) {
                return Err(ModelError::DuplicateSuccession(f.clone()));
            }
        }
        for a in root_differentia.assertions() {
            registry.check_assertion(a)?;
        }
        let root = PathIndex::root();
        Ok(Self {
            purpose: purpose.into(),
            succession_order,
            registry,
            nodes: vec![NodeData {
                parent: None,
                children: Vec::new(),
                differentia: root_differentia,
                gloss: root_gloss,
                path: root.clone(),
            }],
            by_path: HashMap::from([(root, 0)]),
            version: 0,
        })
    }

    pub fn purpose(&self) -> &str {
        &self.purpose
    }

    pub fn succession_order(&self) -> &[FacetId] {
        &self.succession_order
    }

    pub fn succession_position(&self, facet: &FacetId) -> Option<usize> {
        self.succession_order.iter().position(|f| f == facet)
    }

    pub fn registry(&self) -> &PropertyRegistry {
        &self.registry
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Overrides the version counter, e.g. when restoring a persisted
    /// hierarchy or installing a replacement under compare-and-set.
    pub fn set_version(&mut self, version: u64) {
        self.version = version;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn root(&self) -> ConceptNode {
        self.snapshot(0)
    }

    pub fn contains(&self, path: &PathIndex) -> bool {
        self.by_path.contains_key(path)
    }

    pub fn node(&self, path: &PathIndex) -> Result<ConceptNode, ModelError> {
        Ok(self.snapshot(self.idx(path)?))
    }

    pub fn path_index(&self, node_id: NodeId) -> Result<&PathIndex, ModelError> {
        self.nodes
            .get(node_id.0)
            .map(|n| &n.path)
            .ok_or_else(|| ModelError::NotFound(format!("#{}", node_id.0)))
    }

    pub fn differentia(&self, path: &PathIndex) -> Result<&Differentia, ModelError> {
        Ok(&self.nodes[self.idx(path)?].differentia)
    }

    pub fn gloss(&self, path: &PathIndex) -> Result<Option<&str>, ModelError> {
        Ok(self.nodes[self.idx(path)?].gloss.as_deref())
    }

    pub fn parent(&self, path: &PathIndex) -> Result<Option<PathIndex>, ModelError> {
        let i = self.idx(path)?;
        Ok(self.nodes[i].parent.map(|p| self.nodes[p].path.clone()))
    }

    pub fn children(&self, path: &PathIndex) -> Result<Vec<PathIndex>, ModelError> {
        let i = self.idx(path)?;
        Ok(self.nodes[i]
            .children
            .iter()
            .map(|&c| self.nodes[c].path.clone())
            .collect())
    }

    pub fn ancestors(&self, path: &PathIndex) -> Result<Vec<PathIndex>, ModelError> {
        let mut out = Vec::new();
        let mut cur = self.nodes[self.idx(path)?].parent;
        while let Some(i) = cur {
            out.push(self.nodes[i].path.clone());
            cur = self.nodes[i].parent;
        }
        Ok(out)
    }

    /// Nodes in pre-order (parent before children, siblings in insertion
    /// order), which is also ascending path-index order.
    pub fn nodes(&self) -> impl Iterator<Item = ConceptNode> + '_ {
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            order.push(i);
            stack.extend(self.nodes[i].children.iter().rev());
        }
        order.into_iter().map(|i| self.snapshot(i))
    }

    pub fn paths(&self) -> Vec<PathIndex> {
        self.nodes().map(|n| n.path_index).collect()
    }

    /// Facet of the array formed by the node's children, taken from the
    /// first child. `None` for leaves.
    pub fn child_facet(&self, path: &PathIndex) -> Result<Option<&FacetId>, ModelError> {
        let i = self.idx(path)?;
        Ok(self.nodes[i]
            .children
            .first()
            .map(|&c| self.nodes[c].differentia.primary_facet(&self.succession_order)))
    }

    /// Union of the differentiae of all proper ancestors. Empty for the root.
    pub fn derive_genus(&self, path: &PathIndex) -> Result<BTreeSet<PropertyAssertion>, ModelError> {
        let mut genus = BTreeSet::new();
        let mut cur = self.nodes[self.idx(path)?].parent;
        while let Some(i) = cur {
            genus.extend(self.nodes[i].differentia.assertions().iter().cloned());
            cur = self.nodes[i].parent;
        }
        Ok(genus)
    }

    /// Genus plus the node's own differentia.
    pub fn signature(&self, path: &PathIndex) -> Result<BTreeSet<PropertyAssertion>, ModelError> {
        let mut sig = self.derive_genus(path)?;
        sig.extend(self.differentia(path)?.assertions().iter().cloned());
        Ok(sig)
    }

    /// Adds a child under `parent`, enforcing the construction rules: one
    /// ascertainable facet from the succession order, not already used by an
    /// ancestor, shared with every existing sibling and value-disjoint from
    /// each of them. On error the hierarchy is left untouched.
    pub fn add_concept(
        &mut self,
        parent: &PathIndex,
        differentia: Differentia,
        gloss: Option<String>,
    ) -> Result<ConceptNode, ModelError> {
        let pi = self.idx(parent)?;
        if !differentia.is_single_facet() {
            let names: Vec<&str> = differentia.facets().map(FacetId::as_str).collect();
            return Err(ModelError::MultiFacetDifferentia(names.join(", ")));
        }
        let assertion = &differentia.assertions()[0];
        let facet = self.registry.check_assertion(assertion)?;
        if !facet.ascertainable {
            return Err(ModelError::UnascertainableFacet(facet.facet_id.clone()));
        }
        if self.succession_position(&assertion.facet).is_none() {
            return Err(ModelError::NotInSuccession(assertion.facet.clone()));
        }
        let mut cur = Some(pi);
        while let Some(i) = cur {
            if self.nodes[i].differentia.get(&assertion.facet).is_some() {
                return Err(ModelError::FacetReused {
                    facet: assertion.facet.clone(),
                    ancestor: self.nodes[i].path.clone(),
                });
            }
            cur = self.nodes[i].parent;
        }
        for &s in &self.nodes[pi].children {
            let sibling = &self.nodes[s];
            let sibling_facet = sibling.differentia.primary_facet(&self.succession_order);
            if sibling_facet != &assertion.facet {
                return Err(ModelError::SiblingFacetMismatch {
                    parent: parent.clone(),
                    expected: sibling_facet.clone(),
                    found: assertion.facet.clone(),
                });
            }
            if let Some(values) = sibling.differentia.get(&assertion.facet) {
                if !values.is_disjoint(&assertion.value) {
                    return Err(ModelError::SiblingOverlap {
                        sibling: sibling.path.clone(),
                        facet: assertion.facet.clone(),
                    });
                }
            }
        }
        let idx = self.push_child(pi, differentia, gloss);
        Ok(self.snapshot(idx))
    }

    /// Compare-and-set variant of [`add_concept`](Self::add_concept).
    pub fn add_concept_at(
        &mut self,
        expected_version: u64,
        parent: &PathIndex,
        differentia: Differentia,
        gloss: Option<String>,
    ) -> Result<ConceptNode, ModelError> {
        if expected_version != self.version {
            return Err(ModelError::VersionConflict {
                expected: expected_version,
                current: self.version,
            });
        }
        self.add_concept(parent, differentia, gloss)
    }

    /// Appends a child checking only registry validity (known facets,
    /// in-domain values). Canon violations are left for the validator to
    /// report; used when restoring hierarchies from files.
    pub fn graft(
        &mut self,
        parent: &PathIndex,
        differentia: Differentia,
        gloss: Option<String>,
    ) -> Result<PathIndex, ModelError> {
        let pi = self.idx(parent)?;
        for a in differentia.assertions() {
            self.registry.check_assertion(a)?;
        }
        let idx = self.push_child(pi, differentia, gloss);
        Ok(self.nodes[idx].path.clone())
    }

    pub fn set_gloss(&mut self, path: &PathIndex, gloss: Option<String>) -> Result<(), ModelError> {
        let i = self.idx(path)?;
        self.nodes[i].gloss = gloss;
        self.version += 1;
        Ok(())
    }

    pub fn set_purpose(&mut self, purpose: impl Into<String>) {
        self.purpose = purpose.into();
        self.version += 1;
    }

    /// Mutable access to the registry; bumps the version.
    pub fn registry_mut(&mut self) -> &mut PropertyRegistry {
        self.version += 1;
        &mut self.registry
    }

    pub fn set_succession_order(&mut self, order: Vec<FacetId>) -> Result<(), ModelError> {
        let mut seen = BTreeSet::new();
        for f in &order {
            if self.registry.get(f).is_none() {
                return Err(ModelError::UnknownFacet(f.clone()));
            }
            if !seen.insert(f) {
                return Err(ModelError::DuplicateSuccession(f.clone()));
            }
        }
        self.succession_order = order;
        self.version += 1;
        Ok(())
    }

    fn push_child(&mut self, parent: usize, differentia: Differentia, gloss: Option<String>) -> usize {
        let k = self.nodes[parent].children.len() + 1;
        let path = self.nodes[parent].path.child(k);
        let idx = self.nodes.len();
        self.nodes.push(NodeData {
            parent: Some(parent),
            children: Vec::new(),
            differentia,
            gloss,
            path: path.clone(),
        });
        self.nodes[parent].children.push(idx);
        self.by_path.insert(path, idx);
        self.version += 1;
        idx
    }

    fn idx(&self, path: &PathIndex) -> Result<usize, ModelError> {
        self.by_path
            .get(path)
            .copied()
            .ok_or_else(|| ModelError::NotFound(path.to_string()))
    }

    fn snapshot(&self, i: usize) -> ConceptNode {
        let n = &self.nodes[i];
        ConceptNode {
            node_id: NodeId(i),
            parent: n.parent.map(|p| self.nodes[p].path.clone()),
            differentia: n.differentia.clone(),
            gloss: n.gloss.clone(),
            path_index: n.path.clone(),
        }
    }
}
