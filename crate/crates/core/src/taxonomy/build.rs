use serde::{Deserialize, Serialize};

use super::parse::{parse_assignment_line, parse_cluster_name_line};
use super::{ensure_unique, ClassLabel, ClusterSpec, Taxonomy, TaxonomyError, TaxonomyNode, ROOT, UNKNOWN};
use crate::exec;
use crate::gateway::{Decoding, Gateway, ModelRequest, RequestKind};
use crate::text::{clean_name, fold, match_meta_class};

pub const DEFAULT_NAMES_TEMPLATE: &str = "Suggest {k} non-overlapping category names for the following labels based on semantic similarity. Output in the form Cluster_1: [Name], ..., Cluster_{k}: [Name].\n\nLabels: {labels}";

pub const DEFAULT_ASSIGN_TEMPLATE: &str = "Assign this label to one of the categories [{categories}]. Output in the form Cluster: [Name].\n\nLabel: {label}";

const NAMES_REMINDER: &str = "\n\nAnswer only with lines of the form Cluster_<number>: <name>.";
const ASSIGN_REMINDER: &str = "\n\nAnswer with a single line of the form Cluster: <name>.";

/// Model and prompt settings for LLM-driven clustering.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringConfig {
    pub model_id: String,
    pub decoding: Decoding,
    /// Re-asks after a malformed answer.
    pub retries: u32,
    /// Slots: `{k}`, `{labels}`.
    pub names_template: String,
    /// Slots: `{categories}`, `{label}`.
    pub assign_template: String,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self {
            model_id: "gpt-4o".into(),
            decoding: Decoding::default(),
            retries: 2,
            names_template: DEFAULT_NAMES_TEMPLATE.into(),
            assign_template: DEFAULT_ASSIGN_TEMPLATE.into(),
        }
    }
}

impl ClusteringConfig {
    pub fn names_prompt(&self, labels: &[ClassLabel], k: usize) -> String {
        let labels = labels.iter().map(ClassLabel::as_str).collect::<Vec<_>>().join(", ");
        self.names_template
            .replace("{k}", &k.to_string())
            .replace("{labels}", &labels)
    }

    pub fn assign_prompt<S: AsRef<str>>(&self, label: &ClassLabel, meta_names: &[S]) -> String {
        let categories = meta_names.iter().map(AsRef::as_ref).collect::<Vec<_>>().join(", ");
        self.assign_template
            .replace("{categories}", &categories)
            .replace("{label}", label.as_str())
    }

    fn request(&self, prompt: String) -> ModelRequest {
        ModelRequest::new(RequestKind::Classify, &self.model_id, prompt).with_decoding(self.decoding)
    }
}

fn with_reminder(prompt: String, attempt: u32, reminder: &str) -> String {
    if attempt == 0 {
        prompt
    } else {
        prompt + reminder
    }
}

/// Asks for up to `k` meta-class names and parses the `Cluster_<i>: <name>`
/// lines, in index order, with case-insensitive duplicates dropped.
pub fn generate_meta_class_names(
    labels: &[ClassLabel],
    k: usize,
    gateway: &Gateway,
    cfg: &ClusteringConfig,
) -> Result<Vec<String>, TaxonomyError> {
    if labels.is_empty() {
        return Err(TaxonomyError::NoLabels);
    }
    if k == 0 {
        return Err(TaxonomyError::InvalidSpec("k must be at least 1".into()));
    }
    let base = cfg.names_prompt(labels, k);
    let mut last = String::new();
    for attempt in 0..=cfg.retries {
        let req = cfg.request(with_reminder(base.clone(), attempt, NAMES_REMINDER));
        let text = gateway.invoke(&req)?.text.unwrap_or_default();
        let mut parsed: Vec<(usize, String)> = text.lines().filter_map(parse_cluster_name_line).collect();
        if parsed.is_empty() {
            last = text;
            continue;
        }
        parsed.sort_by_key(|(index, _)| *index);
        let mut names: Vec<String> = Vec::new();
        for (_, name) in parsed {
            if !names.iter().any(|n| fold(n) == fold(&name)) {
                names.push(name);
            }
        }
        names.truncate(k);
        return Ok(names);
    }
    Err(TaxonomyError::MalformedModelOutput {
        attempts: cfg.retries + 1,
        last,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Assignment {
    Meta(String),
    Unknown,
}

/// Asks which meta-class a label belongs to.
///
/// The answer is taken from a `Cluster: <name>` line when present, otherwise
/// the whole reply is used. It resolves by exact match, then by a unique
/// containment or shared-word match, and otherwise to [`Assignment::Unknown`].
/// Empty replies are re-asked; if every attempt is empty the label is Unknown.
pub fn assign_label<S: AsRef<str>>(
    label: &ClassLabel,
    meta_names: &[S],
    gateway: &Gateway,
    cfg: &ClusteringConfig,
) -> Result<Assignment, TaxonomyError> {
    let base = cfg.assign_prompt(label, meta_names);
    for attempt in 0..=cfg.retries {
        let req = cfg.request(with_reminder(base.clone(), attempt, ASSIGN_REMINDER));
        let text = gateway.invoke(&req)?.text.unwrap_or_default();
        let answer = parse_assignment_line(&text).unwrap_or_else(|| clean_name(&text));
        if answer.is_empty() {
            continue;
        }
        return Ok(match match_meta_class(&answer, meta_names) {
            Some(i) => Assignment::Meta(meta_names[i].as_ref().to_owned()),
            None => Assignment::Unknown,
        });
    }
    Ok(Assignment::Unknown)
}

/// One clustering level: names, then per-label assignment. Groups follow the
/// order of the generated names with Unknown last; empty groups are dropped.
pub fn build_level(
    labels: &[ClassLabel],
    k: usize,
    gateway: &Gateway,
    cfg: &ClusteringConfig,
) -> Result<Vec<(String, Vec<ClassLabel>)>, TaxonomyError> {
    let names = generate_meta_class_names(labels, k, gateway, cfg)?;
    let assignments = exec::try_map(labels, |label| assign_label(label, &names, gateway, cfg))?;

    let mut groups: Vec<(String, Vec<ClassLabel>)> =
        names.iter().map(|n| (n.clone(), Vec::new())).collect();
    // a generated name that already reads "Unknown" doubles as the bucket
    let unknown_slot = names.iter().position(|n| fold(n) == fold(UNKNOWN));
    let mut unknown = Vec::new();
    for (label, assignment) in labels.iter().zip(assignments) {
        match assignment {
            Assignment::Meta(name) => {
                let slot = names.iter().position(|n| *n == name).expect("assigned name is generated");
                groups[slot].1.push(label.clone());
            }
            Assignment::Unknown => match unknown_slot {
                Some(slot) => groups[slot].1.push(label.clone()),
                None => unknown.push(label.clone()),
            },
        }
    }
    if !unknown.is_empty() {
        groups.push((UNKNOWN.to_owned(), unknown));
    }
    groups.retain(|(_, members)| !members.is_empty());
    Ok(groups)
}

/// Applies [`build_level`] recursively following `spec`. A branch stops at the
/// spec depth or when its group holds a single class.
pub fn build_hierarchy(
    labels: &[ClassLabel],
    spec: &ClusterSpec,
    gateway: &Gateway,
    cfg: &ClusteringConfig,
) -> Result<Taxonomy, TaxonomyError> {
    if labels.is_empty() {
        return Err(TaxonomyError::NoLabels);
    }
    ensure_unique(labels)?;
    let root = build_node(ROOT.to_owned(), labels.to_vec(), spec.sizes(), gateway, cfg)?;
    Taxonomy::new(root)
}

fn build_node(
    name: String,
    labels: Vec<ClassLabel>,
    sizes: &[usize],
    gateway: &Gateway,
    cfg: &ClusteringConfig,
) -> Result<TaxonomyNode, TaxonomyError> {
    let Some((&k, rest)) = sizes.split_first() else {
        return Ok(TaxonomyNode::leaf_group(name, labels));
    };
    if labels.len() <= 1 {
        return Ok(TaxonomyNode::leaf_group(name, labels));
    }
    let groups = build_level(&labels, k, gateway, cfg)?;
    let children = exec::try_map(&groups, |(child, members)| {
        build_node(child.clone(), members.clone(), rest, gateway, cfg)
    })?;
    Ok(TaxonomyNode::branch(name, children))
}
