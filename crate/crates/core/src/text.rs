// SPDX-License-Identifier: MIT OR Apache-2.0

//! String normalization shared by the answer matchers and scorers.

/// Case-fold and collapse runs of whitespace to one space, trimming both
/// ends.
pub fn normalize_ws(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// [`normalize_ws`] after replacing punctuation with spaces.
pub fn normalize_answer(s: &str) -> String {
    let stripped: String = s
        .chars()
        .map(|c| {
            if c.is_alphanumeric() || c.is_whitespace() {
                c
            } else {
                ' '
            }
        })
        .collect();
    normalize_ws(&stripped)
}

/// Generation match used by the interventions: the case-folded,
/// whitespace-collapsed `expected` is a prefix of the generation.
pub fn generation_matches(generation: &str, expected: &str) -> bool {
    let want = normalize_ws(expected);
    !want.is_empty() && normalize_ws(generation).starts_with(&want)
}

/// Oracle answer match used by the dataset filters; also ignores
/// punctuation.
pub fn answer_matches(answer: &str, expected: &str) -> bool {
    let want = normalize_answer(expected);
    !want.is_empty() && normalize_answer(answer).starts_with(&want)
}

/// True when `needle` occurs case-insensitively in `haystack`,
/// bounded by non-alphanumeric characters or the string ends.
pub fn whole_word_hits(haystack: &str, needle: &str) -> bool {
    let hay = haystack.to_lowercase();
    let needle = needle.to_lowercase();
    if needle.trim().is_empty() {
        return false;
    }
    let is_word = |c: Option<char>| c.is_some_and(char::is_alphanumeric);
    let mut from = 0;
    while let Some(rel) = hay[from..].find(&needle) {
        let start = from + rel;
        let end = start + needle.len();
        let before = hay[..start].chars().next_back();
        let after = hay[end..].chars().next();
        if !is_word(before) && !is_word(after) {
            return true;
        }
        from = start + hay[start..].chars().next().map_or(1, char::len_utf8);
    }
    false
}
