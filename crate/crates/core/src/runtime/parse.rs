use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

/// Ids from `valid_ids` mentioned in `text`, in order of first mention.
///
/// Text is split on anything that cannot appear in an identifier, so
/// surrounding prose, commas and bullets are ignored, and `M1` never
/// matches inside `M10`.
pub fn parse_id_list(text: &str, valid_ids: &BTreeSet<String>) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let is_id_char = |c: char| c.is_alphanumeric() || matches!(c, '_' | '-' | '.' | ':');
    for token in text.split(|c: char| !is_id_char(c)) {
        let token = token.trim_matches(|c: char| matches!(c, '.' | ':' | '-'));
        if token.is_empty() {
            continue;
        }
        if valid_ids.contains(token) && seen.insert(token) {
            out.push(token.to_string());
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Yes,
    No,
    Indeterminate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct YesNoLexicon {
    pub affirmative: Vec<String>,
    pub negative: Vec<String>,
}

impl Default for YesNoLexicon {
    fn default() -> Self {
        let words = |ws: &[&str]| ws.iter().map(|w| w.to_string()).collect();
        Self {
            affirmative: words(&["yes", "yeah", "yep", "affirmative"]),
            negative: words(&["no", "nope", "negative"]),
        }
    }
}

/// Classify by the first word found in either lexicon (case-insensitive).
/// A word listed in both, or no match at all, is indeterminate.
pub fn parse_yes_no(text: &str, lexicon: &YesNoLexicon) -> Verdict {
    let has = |list: &[String], w: &str| list.iter().any(|x| x.eq_ignore_ascii_case(w));
    for word in text.split(|c: char| !c.is_alphanumeric()) {
        if word.is_empty() {
            continue;
        }
        match (
            has(&lexicon.affirmative, word),
            has(&lexicon.negative, word),
        ) {
            (true, false) => return Verdict::Yes,
            (false, true) => return Verdict::No,
            (true, true) => return Verdict::Indeterminate,
            (false, false) => {}
        }
    }
    Verdict::Indeterminate
}
