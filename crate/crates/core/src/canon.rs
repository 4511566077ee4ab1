//! Faceted-classification canons as read-only checks over a hierarchy.
//!
//! Each check returns a list of [`Violation`]s; an empty list is a pass.
//! Relevance to the purpose cannot be decided mechanically, so it is
//! tracked through explicit [`RelevanceAttestation`]s and only reported as
//! a warning when missing.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::AnnotatorId;
use crate::model::{FacetId, Hierarchy, ModelError, Observation, PathIndex};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CanonError {
    #[error("facet `{facet}` used at {node} is missing from the succession order")]
    NotInSuccession { facet: FacetId, node: PathIndex },
    #[error("unknown facet `{0}`")]
    UnknownFacet(FacetId),
    #[error("the hierarchy has no purpose statement to attest against")]
    MissingPurpose,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ViolationCode {
    UnascertainableFacet,
    SuccessionOrderBreach,
    ModulationGap,
    SiblingOverlap,
    SiblingFacetMismatch,
    NonExhaustiveArray,
    MissingRelevanceAttestation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

impl ViolationCode {
    pub fn severity(self) -> Severity {
        match self {
            ViolationCode::MissingRelevanceAttestation => Severity::Warning,
            _ => Severity::Error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub node_ref: PathIndex,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub facet: Option<FacetId>,
    pub detail: String,
}

impl Violation {
    fn new(code: ViolationCode, node_ref: &PathIndex, facet: Option<&FacetId>, detail: String) -> Self {
        Self {
            code,
            node_ref: node_ref.clone(),
            facet: facet.cloned(),
            detail,
        }
    }

    pub fn severity(&self) -> Severity {
        self.code.severity()
    }
}

fn sorted(mut v: Vec<Violation>) -> Vec<Violation> {
    v.sort_by(|a, b| {
        (&a.node_ref, a.code, &a.detail).cmp(&(&b.node_ref, b.code, &b.detail))
    });
    v
}

/// One violation per node whose differentia uses an unascertainable facet.
pub fn check_ascertainability(h: &Hierarchy) -> Vec<Violation> {
    let mut out = Vec::new();
    for node in h.nodes() {
        for facet_id in node.differentia.facets() {
            if let Some(facet) = h.registry().get(facet_id) {
                if !facet.ascertainable {
                    out.push(Violation::new(
                        ViolationCode::UnascertainableFacet,
                        &node.path_index,
                        Some(facet_id),
                        format!("facet `{facet_id}` is not definite and ascertainable"),
                    ));
                }
            }
        }
    }
    sorted(out)
}

/// Sibling arrays must share one facet, and each array's facet must come
/// strictly after the facet of the array its parent belongs to.
///
/// Array-level violations are reported on the parent node.
pub fn check_succession(h: &Hierarchy) -> Result<Vec<Violation>, CanonError> {
    let order = h.succession_order();
    let position = |facet: &FacetId, node: &PathIndex| {
        h.succession_position(facet).ok_or_else(|| CanonError::NotInSuccession {
            facet: facet.clone(),
            node: node.clone(),
        })
    };
    for node in h.nodes() {
        for f in node.differentia.facets() {
            position(f, &node.path_index)?;
        }
    }

    let mut out = Vec::new();
    for parent in h.nodes() {
        let children = h.children(&parent.path_index)?;
        let Some(first) = children.first() else { continue };
        let array_facet = h.differentia(first)?.primary_facet(order).clone();
        for child in &children[1..] {
            let facet = h.differentia(child)?.primary_facet(order);
            if facet != &array_facet {
                out.push(Violation::new(
                    ViolationCode::SiblingFacetMismatch,
                    &parent.path_index,
                    Some(facet),
                    format!("child {child} uses `{facet}` while its siblings use `{array_facet}`"),
                ));
            }
        }
        let parent_facet = parent.differentia.primary_facet(order);
        if position(&array_facet, first)? <= position(parent_facet, &parent.path_index)? {
            out.push(Violation::new(
                ViolationCode::SuccessionOrderBreach,
                &parent.path_index,
                Some(&array_facet),
                format!(
                    "array facet `{array_facet}` does not come after parent facet `{parent_facet}` in the succession order"
                ),
            ));
        }
    }
    Ok(sorted(out))
}

/// Siblings must be value-disjoint on their shared facet. Reported on the
/// later sibling of each overlapping pair.
pub fn check_sibling_disjointness(h: &Hierarchy) -> Vec<Violation> {
    let order = h.succession_order();
    let mut out = Vec::new();
    for parent in h.nodes() {
        let children = h.children(&parent.path_index).expect("node exists");
        for (j, later) in children.iter().enumerate() {
            let dl = h.differentia(later).expect("node exists");
            let facet = dl.primary_facet(order);
            for earlier in &children[..j] {
                let de = h.differentia(earlier).expect("node exists");
                if let (Some(a), Some(b)) = (de.get(facet), dl.get(facet)) {
                    if !a.is_disjoint(b) {
                        out.push(Violation::new(
                            ViolationCode::SiblingOverlap,
                            later,
                            Some(facet),
                            format!("`{facet}` values {b} overlap sibling {earlier} ({a})"),
                        ));
                    }
                }
            }
        }
    }
    sorted(out)
}

/// Chains must not skip levels. A node violates modulation when its
/// differentia spans more than one facet, or when its facet jumps over an
/// intermediate facet of the succession order that discriminates some
/// other node of the same top-level branch.
pub fn check_modulation(h: &Hierarchy) -> Vec<Violation> {
    let order = h.succession_order();
    let nodes: Vec<_> = h.nodes().collect();
    let mut out = Vec::new();
    for node in &nodes {
        if !node.differentia.is_single_facet() {
            let names: Vec<&str> = node.differentia.facets().map(FacetId::as_str).collect();
            out.push(Violation::new(
                ViolationCode::ModulationGap,
                &node.path_index,
                None,
                format!("differentia asserts {} facets at once ({})", names.len(), names.join(", ")),
            ));
            continue;
        }
        let Some(parent) = &node.parent else { continue };
        let facet = node.differentia.primary_facet(order);
        let parent_facet = h.differentia(parent).expect("parent exists").primary_facet(order);
        let (Some(pf), Some(pp)) = (h.succession_position(facet), h.succession_position(parent_facet)) else {
            continue;
        };
        if pf <= pp + 1 {
            continue;
        }
        let branch_root = top_level_ancestor(&node.path_index);
        let skipped: BTreeSet<&FacetId> = order[pp + 1..pf].iter().collect();
        let used_elsewhere: BTreeSet<&FacetId> = nodes
            .iter()
            .filter(|other| {
                branch_root.as_ref().is_none_or(|b| b.is_ancestor_or_self(&other.path_index))
                    && !node.path_index.is_ancestor_or_self(&other.path_index)
            })
            .map(|other| other.differentia.primary_facet(order))
            .filter(|f| skipped.contains(f))
            .collect();
        if let Some(missing) = used_elsewhere.first() {
            out.push(Violation::new(
                ViolationCode::ModulationGap,
                &node.path_index,
                Some(missing),
                format!("`{facet}` follows `{parent_facet}` directly, skipping `{missing}` which discriminates elsewhere in the branch"),
            ));
        }
    }
    sorted(out)
}

/// Depth-1 ancestor (or self); `None` for the root and its children, whose
/// branch is the whole hierarchy.
fn top_level_ancestor(path: &PathIndex) -> Option<PathIndex> {
    if path.depth() < 2 {
        return None;
    }
    let c = path.components();
    format!("{}_{}", c[0], c[1]).parse().ok()
}

/// Observed objects falling into one parent's universe.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectGroup {
    pub parent: PathIndex,
    pub objects: Vec<Observation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub parent: PathIndex,
    pub total: usize,
    pub matched: usize,
    pub unmatched: usize,
    pub ambiguous: usize,
    pub coverage_ratio: f64,
    /// Objects that fit no child: candidates for a new concept.
    pub new_concept_candidates: Vec<Observation>,
}

/// Checks each parent's children against the objects observed in its
/// universe. An object matches a child when it satisfies every assertion
/// of that child's differentia.
pub fn check_exhaustiveness(h: &Hierarchy, groups: &[ObjectGroup]) -> Result<Vec<CoverageReport>, CanonError> {
    let mut reports = Vec::with_capacity(groups.len());
    for group in groups {
        let children = h.children(&group.parent)?;
        let mut report = CoverageReport {
            parent: group.parent.clone(),
            total: group.objects.len(),
            matched: 0,
            unmatched: 0,
            ambiguous: 0,
            coverage_ratio: 1.0,
            new_concept_candidates: Vec::new(),
        };
        for obj in &group.objects {
            let hits = children
                .iter()
                .filter(|c| obj.satisfies_all(h.differentia(c).expect("child exists").assertions()))
                .count();
            match hits {
                0 => {
                    report.unmatched += 1;
                    report.new_concept_candidates.push(obj.clone());
                }
                1 => report.matched += 1,
                _ => report.ambiguous += 1,
            }
        }
        if report.total > 0 {
            report.coverage_ratio = report.matched as f64 / report.total as f64;
        }
        reports.push(report);
    }
    Ok(reports)
}

/// Places each observation in the universe of every internal node whose
/// signature it satisfies, provided it also asserts the facet that node's
/// children are split on. Groups come out in path order.
pub fn group_by_parent(h: &Hierarchy, observations: &[Observation]) -> Vec<ObjectGroup> {
    let mut groups: BTreeMap<PathIndex, Vec<Observation>> = BTreeMap::new();
    for node in h.nodes() {
        let Ok(Some(child_facet)) = h.child_facet(&node.path_index) else { continue };
        let sig = h.signature(&node.path_index).expect("node exists");
        for obs in observations {
            if obs.get(child_facet).is_some() && obs.satisfies_all(&sig) {
                groups.entry(node.path_index.clone()).or_default().push(obs.clone());
            }
        }
    }
    groups
        .into_iter()
        .map(|(parent, objects)| ObjectGroup { parent, objects })
        .collect()
}

pub fn exhaustiveness_violations(reports: &[CoverageReport]) -> Vec<Violation> {
    sorted(
        reports
            .iter()
            .filter(|r| r.unmatched > 0)
            .map(|r| {
                Violation::new(
                    ViolationCode::NonExhaustiveArray,
                    &r.parent,
                    None,
                    format!(
                        "{} of {} observed objects fit no child; new-concept candidates",
                        r.unmatched, r.total
                    ),
                )
            })
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelevanceAttestation {
    pub facet_id: FacetId,
    pub purpose: String,
    pub attestor: AnnotatorId,
    pub timestamp: DateTime<Utc>,
}

/// Active attestations, one per facet; the latest wins.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Attestations(BTreeMap<FacetId, RelevanceAttestation>);

impl Attestations {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, facet: &FacetId) -> Option<&RelevanceAttestation> {
        self.0.get(facet)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &RelevanceAttestation> {
        self.0.values()
    }

    pub(crate) fn insert(&mut self, a: RelevanceAttestation) {
        self.0.insert(a.facet_id.clone(), a);
    }
}

/// Records that `attestor` judged `facet` relevant to the hierarchy's
/// current purpose.
pub fn attest_relevance(
    h: &Hierarchy,
    attestations: &mut Attestations,
    facet: &FacetId,
    attestor: &AnnotatorId,
    timestamp: DateTime<Utc>,
) -> Result<RelevanceAttestation, CanonError> {
    if h.registry().get(facet).is_none() {
        return Err(CanonError::UnknownFacet(facet.clone()));
    }
    if h.purpose().trim().is_empty() {
        return Err(CanonError::MissingPurpose);
    }
    let a = RelevanceAttestation {
        facet_id: facet.clone(),
        purpose: h.purpose().to_string(),
        attestor: attestor.clone(),
        timestamp,
    };
    attestations.insert(a.clone());
    Ok(a)
}

/// Warns for every facet of the succession order without an attestation
/// against the current purpose. Reported on the first node using the
/// facet, or on the root when no node uses it.
pub fn check_relevance(h: &Hierarchy, attestations: &Attestations) -> Vec<Violation> {
    let nodes: Vec<_> = h.nodes().collect();
    let mut out = Vec::new();
    for facet in h.succession_order() {
        let ok = attestations.get(facet).is_some_and(|a| a.purpose == h.purpose());
        if ok {
            continue;
        }
        let at = nodes
            .iter()
            .find(|n| n.differentia.get(facet).is_some())
            .map(|n| n.path_index.clone())
            .unwrap_or_else(PathIndex::root);
        out.push(Violation::new(
            ViolationCode::MissingRelevanceAttestation,
            &at,
            Some(facet),
            format!("no attestation that `{facet}` is relevant to the purpose"),
        ));
    }
    sorted(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub hierarchy_version: u64,
    pub violations: Vec<Violation>,
    pub coverage: Vec<CoverageReport>,
    pub errors: usize,
    pub warnings: usize,
}

impl ValidationReport {
    pub fn has_errors(&self) -> bool {
        self.errors > 0
    }

    pub fn codes(&self) -> Vec<ViolationCode> {
        self.violations.iter().map(|v| v.code).collect()
    }
}

/// Runs every check. `observations` feed the exhaustiveness check.
pub fn validate(
    h: &Hierarchy,
    attestations: &Attestations,
    observations: &[Observation],
) -> Result<ValidationReport, CanonError> {
    let coverage = check_exhaustiveness(h, &group_by_parent(h, observations))?;
    let mut all = check_ascertainability(h);
    all.extend(check_succession(h)?);
    all.extend(check_sibling_disjointness(h));
    all.extend(check_modulation(h));
    all.extend(exhaustiveness_violations(&coverage));
    all.extend(check_relevance(h, attestations));
    let violations = sorted(all);
    let errors = violations.iter().filter(|v| v.severity() == Severity::Error).count();
    Ok(ValidationReport {
        hierarchy_version: h.version(),
        warnings: violations.len() - errors,
        errors,
        violations,
        coverage,
    })
}
