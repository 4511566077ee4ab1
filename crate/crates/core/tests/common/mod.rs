#![allow(dead_code)]

use facetgt_core::model::{
    Atom, Differentia, Facet, FacetId, Hierarchy, Observation, PathIndex, PropertyAssertion, PropertyRegistry,
    ValueDomain, ValueSet,
};
use facetgt_core::pipeline::Assignment;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

const DOMAIN: i64 = 8;

/// A random hierarchy built only through `add_concept`, so every node obeys
/// the canon: up to `max_nodes` nodes over up to `max_facets` facets.
pub fn random_hierarchy(rng: &mut impl Rng, max_nodes: usize, max_facets: usize) -> Hierarchy {
    let n_facets = rng.random_range(1..=max_facets);
    let facets: Vec<Facet> = (0..n_facets)
        .map(|i| {
            let domain = if i % 2 == 0 {
                ValueDomain::IntRange { min: 0, max: DOMAIN - 1 }
            } else {
                ValueDomain::tokens((0..DOMAIN).map(|v| format!("t{v}")))
            };
            Facet::new(&format!("f{i}"), &format!("facet {i}"), domain)
        })
        .collect();
    let order: Vec<FacetId> = facets.iter().map(|f| f.facet_id.clone()).collect();
    let registry = PropertyRegistry::new(facets).unwrap();
    let root = Differentia::single("f0", random_values(rng, 0, &[]));
    let mut h = Hierarchy::new("random", registry, order.clone(), root, None).unwrap();

    let target = rng.random_range(1..=max_nodes);
    let mut attempts = 0;
    while h.len() < target && attempts < 20 * max_nodes {
        attempts += 1;
        let paths = h.paths();
        let parent = paths.choose(rng).unwrap().clone();
        let facet_ix = match h.child_facet(&parent).unwrap() {
            Some(f) => order.iter().position(|o| o == f).unwrap(),
            None => {
                let used = h
                    .ancestors(&parent)
                    .unwrap()
                    .into_iter()
                    .chain([parent.clone()])
                    .flat_map(|p| h.differentia(&p).unwrap().facets().cloned().collect::<Vec<_>>())
                    .filter_map(|f| order.iter().position(|o| o == &f))
                    .max()
                    .unwrap();
                if used + 1 >= order.len() {
                    continue;
                }
                rng.random_range(used + 1..order.len())
            }
        };
        let taken: Vec<Atom> = h
            .children(&parent)
            .unwrap()
            .iter()
            .flat_map(|c| {
                h.differentia(c)
                    .unwrap()
                    .get(&order[facet_ix])
                    .map(|v| v.atoms().cloned().collect::<Vec<_>>())
                    .unwrap_or_default()
            })
            .collect();
        if taken.len() as i64 >= DOMAIN {
            continue;
        }
        let values = random_values(rng, facet_ix, &taken);
        h.add_concept(&parent, Differentia::single(order[facet_ix].as_str(), values), None)
            .expect("generated concept obeys the canon");
    }
    h
}

fn atom(facet_ix: usize, v: i64) -> Atom {
    if facet_ix % 2 == 0 {
        Atom::Int(v)
    } else {
        Atom::Token(format!("t{v}"))
    }
}

/// One or two values of the facet's domain not in `taken`.
fn random_values(rng: &mut impl Rng, facet_ix: usize, taken: &[Atom]) -> ValueSet {
    let mut free: Vec<Atom> = (0..DOMAIN).map(|v| atom(facet_ix, v)).filter(|a| !taken.contains(a)).collect();
    free.shuffle(rng);
    let k = if free.len() > 1 && rng.random_bool(0.3) { 2 } else { 1 };
    ValueSet::new(free.into_iter().take(k)).unwrap()
}

/// Either fully random, or a perturbed copy of some node's signature so
/// that deep matches are common.
pub fn random_observation(rng: &mut impl Rng, h: &Hierarchy) -> Observation {
    let facets: Vec<FacetId> = h.succession_order().to_vec();
    let mut obs = Observation::new();
    if rng.random_bool(0.7) {
        let paths = h.paths();
        let node = paths.choose(rng).unwrap();
        for a in h.signature(node).unwrap() {
            if rng.random_bool(0.9) {
                obs.set(a);
            }
        }
    }
    for (i, f) in facets.iter().enumerate() {
        if rng.random_bool(0.25) {
            let v = rng.random_range(0..DOMAIN);
            if rng.random_bool(0.5) {
                obs.set(PropertyAssertion::new(f.clone(), ValueSet::one(atom(i, v))));
            } else {
                obs.insert(PropertyAssertion::new(f.clone(), ValueSet::one(atom(i, v))));
            }
        }
    }
    obs
}

/// Scans every node and keeps the deepest one whose whole signature the
/// observation satisfies.
pub fn brute_force_classify(h: &Hierarchy, obs: &Observation) -> Assignment {
    let mut best: Option<PathIndex> = None;
    for p in h.paths() {
        let sig = h.signature(&p).unwrap();
        if obs.satisfies_all(sig.iter()) && best.as_ref().is_none_or(|b| p.depth() > b.depth()) {
            best = Some(p);
        }
    }
    match best {
        Some(node) => Assignment::Node { node },
        None => Assignment::Unrecognized,
    }
}
