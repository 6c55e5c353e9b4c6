//! Label text normalization and the heuristics that map free-form model
//! output onto a closed set of names.
//!
//! Three views of a string are used throughout:
//!
//! * [`clean_name`]: punctuation replaced by spaces, whitespace collapsed,
//!   original casing kept. This is what gets stored.
//! * [`fold`]: the cleaned form lowercased. Used for equality.
//! * [`compact`]: lowercase alphanumerics only, so `tennis court`,
//!   `tennis_court` and `tenniscourt` coincide. Used for containment.

/// Words that never count as evidence for a word-overlap match.
const STOPWORDS: &[&str] = &[
    "and", "the", "for", "with", "from", "into", "this", "that", "are", "its",
];

fn is_kept(c: char) -> bool {
    c.is_alphanumeric() || c == '&'
}

/// Removes punctuation and brackets and collapses whitespace runs.
///
/// `&` survives because taxonomy names such as `Transportation & Infrastructure`
/// use it as a word. A lone `&` at either end is dropped.
pub fn clean_name(raw: &str) -> String {
    let spaced: String = raw
        .chars()
        .map(|c| if is_kept(c) { c } else { ' ' })
        .collect();
    let words: Vec<&str> = spaced.split_whitespace().collect();
    let start = words.iter().position(|w| *w != "&").unwrap_or(words.len());
    let end = words.iter().rposition(|w| *w != "&").map_or(start, |i| i + 1);
    words[start..end.max(start)].join(" ")
}

/// Case-folded cleaned form, used for equality between names.
pub fn fold(raw: &str) -> String {
    clean_name(raw).to_lowercase()
}

/// Lowercase alphanumerics only.
pub fn compact(raw: &str) -> String {
    raw.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

fn content_words(raw: &str) -> Vec<String> {
    fold(raw)
        .split(' ')
        .filter(|w| w.chars().count() >= 3 && !STOPWORDS.contains(w))
        .map(str::to_owned)
        .collect()
}

/// Index of the name equal to `answer` under [`fold`], falling back to
/// [`compact`] equality when that is unambiguous.
pub fn exact_match<S: AsRef<str>>(answer: &str, names: &[S]) -> Option<usize> {
    let folded = fold(answer);
    if folded.is_empty() {
        return None;
    }
    if let Some(i) = names.iter().position(|n| fold(n.as_ref()) == folded) {
        return Some(i);
    }
    let packed = compact(answer);
    let hits: Vec<usize> = names
        .iter()
        .enumerate()
        .filter(|(_, n)| compact(n.as_ref()) == packed)
        .map(|(i, _)| i)
        .collect();
    (hits.len() == 1).then(|| hits[0])
}

// Shortest answer allowed to match as a fragment of a longer name.
const MIN_FRAGMENT: usize = 3;

fn contains_either_way(answer: &str, name: &str) -> bool {
    if answer.is_empty() || name.is_empty() {
        return false;
    }
    answer.contains(name) || (answer.chars().count() >= MIN_FRAGMENT && name.contains(answer))
}

/// Names whose compact form contains, or is contained in, the compact answer.
pub fn containment_candidates<S: AsRef<str>>(answer: &str, names: &[S]) -> Vec<usize> {
    let packed = compact(answer);
    names
        .iter()
        .enumerate()
        .filter(|(_, n)| contains_either_way(&packed, &compact(n.as_ref())))
        .map(|(i, _)| i)
        .collect()
}

/// Names sharing at least one content word with the answer.
pub fn word_overlap_candidates<S: AsRef<str>>(answer: &str, names: &[S]) -> Vec<usize> {
    let answer_words = content_words(answer);
    names
        .iter()
        .enumerate()
        .filter(|(_, n)| {
            content_words(n.as_ref())
                .iter()
                .any(|w| answer_words.contains(w))
        })
        .map(|(i, _)| i)
        .collect()
}

/// Matching used when a classifier picks one of the active classes.
///
/// Exact match first; otherwise containment candidates, where a candidate
/// that is a strict fragment of another candidate is dropped (so
/// `no buildings` wins over `buildings`). Anything but a single survivor is
/// a miss.
pub fn match_class<S: AsRef<str>>(answer: &str, names: &[S]) -> Option<usize> {
    if let Some(i) = exact_match(answer, names) {
        return Some(i);
    }
    let candidates = containment_candidates(answer, names);
    let packed: Vec<String> = candidates
        .iter()
        .map(|&i| compact(names[i].as_ref()))
        .collect();
    let survivors: Vec<usize> = candidates
        .iter()
        .enumerate()
        .filter(|(a, _)| {
            !packed
                .iter()
                .enumerate()
                .any(|(b, other)| *a != b && other.len() > packed[*a].len() && other.contains(&packed[*a]))
        })
        .map(|(_, &i)| i)
        .collect();
    (survivors.len() == 1).then(|| survivors[0])
}

/// Matching used when assigning a label to a meta-class.
///
/// Exact match first; otherwise the union of containment and word-overlap
/// candidates must be a single name.
pub fn match_meta_class<S: AsRef<str>>(answer: &str, names: &[S]) -> Option<usize> {
    if let Some(i) = exact_match(answer, names) {
        return Some(i);
    }
    let mut candidates = containment_candidates(answer, names);
    candidates.extend(word_overlap_candidates(answer, names));
    candidates.sort_unstable();
    candidates.dedup();
    (candidates.len() == 1).then(|| candidates[0])
}
