use std::sync::LazyLock;

use regex::Regex;

use crate::text::clean_name;

// Optional bullet or list number, optional markdown emphasis, then the tag.
static NAME_LINE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^\s*(?:[-*•#>]+\s*)?(?:\d+[.)]\s*)?[*_]*\s*cluster[\s_-]*(\d+)\s*[*_]*\s*[:=\-–]\s*(.*)$")
        .expect("valid regex")
});

static ASSIGN_LINE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?im)^\s*(?:[-*•#>]+\s*)?[*_]*\s*cluster(?:[\s_-]*\d+)?\s*[*_]*\s*[:=\-–]\s*(.*)$")
        .expect("valid regex")
});

/// Parses one `Cluster_<i>: <name>` line into its index and cleaned name.
pub fn parse_cluster_name_line(line: &str) -> Option<(usize, String)> {
    let caps = NAME_LINE.captures(line)?;
    let index = caps[1].parse::<usize>().ok()?;
    let name = clean_name(&caps[2]);
    (!name.is_empty()).then_some((index, name))
}

/// Extracts the cleaned value of the first `Cluster: <name>` line, if any.
pub fn parse_assignment_line(text: &str) -> Option<String> {
    ASSIGN_LINE
        .captures_iter(text)
        .map(|c| clean_name(&c[1]))
        .find(|name| !name.is_empty())
}
