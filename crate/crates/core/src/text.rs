//! String normalization used for keyword matching and exact-match metrics.

/// Case-folds, maps punctuation to spaces and collapses whitespace.
pub fn normalize_loose(s: &str) -> String {
    let mapped: String = s
        .chars()
        .flat_map(char::to_lowercase)
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    collapse_ws(&mapped)
}

/// Case-folds, trims and collapses whitespace; punctuation is kept.
pub fn normalize_strict(s: &str) -> String {
    let lowered: String = s.chars().flat_map(char::to_lowercase).collect();
    collapse_ws(&lowered)
}

fn collapse_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Splits a comma-separated location into trimmed, non-empty components.
pub fn location_components(s: &str) -> Vec<String> {
    s.split(',')
        .map(str::trim)
        .filter(|c| !c.is_empty())
        .map(str::to_owned)
        .collect()
}
