//! The musical-instrument sub-hierarchy used throughout the tests, plus
//! the published agreement grids and corpus statistics it was annotated
//! against.

use crate::lexicon::{Language, Lexicon};
use crate::model::{
    Differentia, Facet, FacetId, Hierarchy, PathIndex, PropertyRegistry, ValueDomain, ValueSet,
};

pub mod facets {
    pub const SOUND_MECHANISM: &str = "sound-mechanism";
    pub const SOUND_PRODUCTION: &str = "sound-production";
    pub const STRING_COUNT: &str = "string-count";
    pub const INPUT_JACK: &str = "input-jack";
    pub const TRUSS_ROD: &str = "truss-rod";
}

pub const PURPOSE: &str = "classify musical instruments as per affordances";

/// Counts grid for the differentia-driven campaign (eight annotators).
pub const TABLE3_GT1_CSV: &str = include_str!("../fixtures/table3_gt1.csv");
/// Counts grid for the label-driven campaign (eight annotators).
pub const TABLE3_GT2_CSV: &str = include_str!("../fixtures/table3_gt2.csv");
/// Differentia-driven campaign restricted to single-object images.
pub const TABLE6_CSV: &str = include_str!("../fixtures/table6_gt1_single_object.csv");
/// Expert flaw counts per dataset category (`original` and `ue` columns).
pub const TABLE2_CSV: &str = include_str!("../fixtures/table2.csv");

/// Dataset categories in published column order with their image totals.
pub const CORPUS_CATEGORIES: [(&str, usize); 9] = [
    ("Musical Instrument", 506),
    ("Stringed Instrument", 497),
    ("Keyboard Instrument", 479),
    ("Wind Instrument", 290),
    ("Guitar", 504),
    ("Dulcimer", 316),
    ("Koto", 188),
    ("Acoustic Guitar", 505),
    ("Electric Guitar", 375),
];

/// (path index, English label, gloss) for the nine fixture concepts.
pub const CONCEPTS: [(&str, &str, &str); 9] = [
    ("1", "musical instrument", "any of various devices or contrivances that can be used to produce musical tones or sounds"),
    ("1_1", "stringed instrument", "a musical instrument in which taut strings provide the source of sound"),
    ("1_1_1", "guitar", "a stringed instrument usually having six strings; played by strumming or plucking"),
    ("1_1_1_1", "acoustic guitar", "sound is not amplified by electrical means"),
    ("1_1_1_2", "electric guitar", "a guitar whose sound is amplified by electrical means"),
    ("1_1_2", "dulcimer", "a stringed instrument with an elliptical body and a fretted fingerboard and three or four strings"),
    ("1_1_3", "koto", "Japanese stringed instrument that has 13 silk strings that are plucked"),
    ("1_2", "keyboard instrument", "a musical instrument that is played by means of a keyboard"),
    ("1_3", "wind instrument", "a musical instrument in which the sound is produced by an enclosed column of air moved by the breath"),
];

fn gloss(path: &str) -> Option<String> {
    CONCEPTS
        .iter()
        .find(|(p, _, _)| *p == path)
        .map(|(_, _, g)| g.to_string())
}

pub fn registry() -> PropertyRegistry {
    PropertyRegistry::new([
        Facet::new(facets::SOUND_MECHANISM, "Sound mechanism", ValueDomain::tokens(["present", "absent"])),
        Facet::new(
            facets::SOUND_PRODUCTION,
            "Sound production",
            ValueDomain::tokens(["taut-strings", "keyboard", "embouchure"]),
        ),
        Facet::new(facets::STRING_COUNT, "Number of taut strings", ValueDomain::IntRange { min: 1, max: 100 }),
        Facet::new(facets::INPUT_JACK, "Input jack", ValueDomain::tokens(["present", "absent"])),
    ])
    .expect("fixture registry is valid")
}

pub fn succession() -> Vec<FacetId> {
    [
        facets::SOUND_MECHANISM,
        facets::SOUND_PRODUCTION,
        facets::STRING_COUNT,
        facets::INPUT_JACK,
    ]
    .into_iter()
    .map(FacetId::new)
    .collect()
}

fn at(s: &str) -> PathIndex {
    s.parse().expect("fixture path")
}

fn add(h: &mut Hierarchy, parent: &str, d: Differentia, expect: &str) {
    let node = h
        .add_concept(&at(parent), d, gloss(expect))
        .expect("fixture concept is valid");
    assert_eq!(node.path_index.as_str(), expect);
}

/// Root, stringed instruments and the guitar subtree (five nodes).
pub fn musical_instruments_up_to_guitar() -> Hierarchy {
    let mut h = Hierarchy::new(
        PURPOSE,
        registry(),
        succession(),
        Differentia::one(facets::SOUND_MECHANISM, "present"),
        gloss("1"),
    )
    .expect("fixture root is valid");
    add(&mut h, "1", Differentia::one(facets::SOUND_PRODUCTION, "taut-strings"), "1_1");
    add(&mut h, "1_1", Differentia::one(facets::STRING_COUNT, 6), "1_1_1");
    add(&mut h, "1_1_1", Differentia::one(facets::INPUT_JACK, "absent"), "1_1_1_1");
    add(&mut h, "1_1_1", Differentia::one(facets::INPUT_JACK, "present"), "1_1_1_2");
    h
}

/// The complete nine-node hierarchy.
pub fn musical_instruments() -> Hierarchy {
    let mut h = musical_instruments_up_to_guitar();
    add(
        &mut h,
        "1_1",
        Differentia::single(facets::STRING_COUNT, ValueSet::new([3.into(), 4.into()]).expect("non-empty")),
        "1_1_2",
    );
    add(&mut h, "1_1", Differentia::one(facets::STRING_COUNT, 13), "1_1_3");
    add(&mut h, "1", Differentia::one(facets::SOUND_PRODUCTION, "keyboard"), "1_2");
    add(&mut h, "1", Differentia::one(facets::SOUND_PRODUCTION, "embouchure"), "1_3");
    h
}

/// The full hierarchy with an extra, unascertainable `truss-rod` facet
/// registered last in the succession order (but not used by any node).
pub fn musical_instruments_with_truss_rod() -> Hierarchy {
    let mut h = musical_instruments();
    h.registry_mut()
        .insert(
            Facet::new(facets::TRUSS_ROD, "Truss rod", ValueDomain::tokens(["present", "absent"])).unascertainable(),
        )
        .expect("new facet");
    let mut order = succession();
    order.push(FacetId::new(facets::TRUSS_ROD));
    h.set_succession_order(order).expect("known facets");
    h
}

/// English labels for all nine concepts.
pub fn english_lexicon(h: &Hierarchy) -> Lexicon {
    let mut lex = Lexicon::new();
    let eng = Language::new("eng").expect("non-empty");
    for (path, label, _) in CONCEPTS {
        lex.add_label(h, &at(path), &eng, label).expect("fixture label");
    }
    lex
}

/// Human-readable differentia text as printed in the agreement grids.
pub const DIFFERENTIA_TEXT: [(&str, &str); 9] = [
    ("1", "with Sound Mechanism"),
    ("1_1", "with Taut Strings"),
    ("1_1_1", "with 6 Strings"),
    ("1_1_1_1", "with No Input Jack"),
    ("1_1_1_2", "with Input Jack"),
    ("1_1_2", "with 3 or 4 Strings"),
    ("1_1_3", "with 13 Strings"),
    ("1_2", "with Keyboard"),
    ("1_3", "with Embouchure"),
];
