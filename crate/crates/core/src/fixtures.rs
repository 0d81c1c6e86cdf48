//! Bundled example problems.

use crate::problem::Problem;

const FIXTURES: &[(&str, &str)] = &[
    ("ex2_2", include_str!("../fixtures/ex2_2.json")),
    ("ex2_3", include_str!("../fixtures/ex2_3.json")),
    ("ex3_2", include_str!("../fixtures/ex3_2.json")),
    ("ex3_3", include_str!("../fixtures/ex3_3.json")),
];

/// Names of the bundled fixtures.
pub fn fixture_names() -> Vec<&'static str> {
    FIXTURES.iter().map(|(n, _)| *n).collect()
}

/// Raw JSON of a bundled fixture. Accepts the name with or without `.json`
/// and ignores any leading directories.
pub fn fixture_source(name: &str) -> Option<&'static str> {
    let base = name.rsplit(['/', '\\']).next().unwrap_or(name);
    let stem = base.strip_suffix(".json").unwrap_or(base);
    FIXTURES.iter().find(|(n, _)| *n == stem).map(|(_, s)| *s)
}

/// Parse a bundled fixture.
///
/// # Panics
/// If the name is unknown or the bundled file is invalid.
pub fn fixture(name: &str) -> Problem {
    fixture_source(name)
        .unwrap_or_else(|| panic!("unknown fixture `{name}`"))
        .parse()
        .unwrap_or_else(|e| panic!("bundled fixture `{name}` is invalid: {e}"))
}
