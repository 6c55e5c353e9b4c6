//! Meta-class taxonomies over a flat class list.
//!
//! A [`Taxonomy`] is a tree whose leaves are exactly the input classes. It is
//! built by asking a language model for meta-class names ([`build`]),
//! assigning every class to one of them, and recursing into each group
//! according to a [`ClusterSpec`].

mod build;
mod doc;
mod parse;

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::gateway::GatewayError;

pub use build::{
    assign_label, build_hierarchy, build_level, generate_meta_class_names, Assignment,
    ClusteringConfig,
};
pub use doc::{deserialize_taxonomy, serialize_taxonomy};
pub use parse::{parse_assignment_line, parse_cluster_name_line};

/// Name of the bucket holding classes that could not be assigned.
pub const UNKNOWN: &str = "Unknown";

/// Name given to the root node by [`build_hierarchy`].
pub const ROOT: &str = "root";

#[derive(Debug, thiserror::Error)]
pub enum TaxonomyError {
    #[error("class label must be non-empty")]
    EmptyLabel,
    #[error("duplicate class label {0:?}")]
    DuplicateLabel(String),
    #[error("no class labels given")]
    NoLabels,
    #[error("invalid cluster spec: {0}")]
    InvalidSpec(String),
    #[error("no parseable `Cluster_<i>: <name>` line after {attempts} attempts; last output: {last:?}")]
    MalformedModelOutput { attempts: u32, last: String },
    #[error(transparent)]
    Backend(#[from] GatewayError),
    #[error("schema violation at {path}: {message}")]
    SchemaViolation { path: String, message: String },
}

/// One user-facing class name, trimmed and non-empty.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ClassLabel(String);

impl ClassLabel {
    pub fn new(name: impl AsRef<str>) -> Result<Self, TaxonomyError> {
        let trimmed = name.as_ref().trim();
        if trimmed.is_empty() {
            return Err(TaxonomyError::EmptyLabel);
        }
        Ok(Self(trimmed.to_owned()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for ClassLabel {
    type Error = TaxonomyError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<ClassLabel> for String {
    fn from(label: ClassLabel) -> Self {
        label.0
    }
}

impl AsRef<str> for ClassLabel {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Parses a list of names into labels, rejecting case-insensitive duplicates.
pub fn class_set<S: AsRef<str>>(names: &[S]) -> Result<Vec<ClassLabel>, TaxonomyError> {
    let labels = names
        .iter()
        .map(ClassLabel::new)
        .collect::<Result<Vec<_>, _>>()?;
    ensure_unique(&labels)?;
    Ok(labels)
}

pub(crate) fn ensure_unique(labels: &[ClassLabel]) -> Result<(), TaxonomyError> {
    let mut seen = HashSet::new();
    for label in labels {
        if !seen.insert(label.as_str().to_lowercase()) {
            return Err(TaxonomyError::DuplicateLabel(label.to_string()));
        }
    }
    Ok(())
}

/// Requested meta-class counts per level, `[K1, .., KD]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct ClusterSpec(Vec<usize>);

impl ClusterSpec {
    pub fn new(sizes: Vec<usize>) -> Result<Self, TaxonomyError> {
        if sizes.is_empty() {
            return Err(TaxonomyError::InvalidSpec("at least one level is required".into()));
        }
        if let Some(pos) = sizes.iter().position(|&k| k == 0) {
            return Err(TaxonomyError::InvalidSpec(format!("level {} asks for 0 clusters", pos + 1)));
        }
        Ok(Self(sizes))
    }

    pub fn sizes(&self) -> &[usize] {
        &self.0
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }
}

impl TryFrom<Vec<usize>> for ClusterSpec {
    type Error = TaxonomyError;

    fn try_from(value: Vec<usize>) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<ClusterSpec> for Vec<usize> {
    fn from(spec: ClusterSpec) -> Self {
        spec.0
    }
}

/// A named node. Internal nodes carry `children`; terminal nodes carry `leaves`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaxonomyNode {
    pub name: String,
    pub children: Vec<TaxonomyNode>,
    pub leaves: Vec<ClassLabel>,
}

impl TaxonomyNode {
    pub fn leaf_group(name: impl Into<String>, leaves: Vec<ClassLabel>) -> Self {
        Self {
            name: name.into(),
            children: Vec::new(),
            leaves,
        }
    }

    pub fn branch(name: impl Into<String>, children: Vec<TaxonomyNode>) -> Self {
        Self {
            name: name.into(),
            children,
            leaves: Vec::new(),
        }
    }

    /// Names a router chooses between at this node: child meta-classes first,
    /// then direct leaves.
    pub fn options(&self) -> Vec<&str> {
        self.children
            .iter()
            .map(|c| c.name.as_str())
            .chain(self.leaves.iter().map(ClassLabel::as_str))
            .collect()
    }

    pub fn child(&self, name: &str) -> Option<&TaxonomyNode> {
        self.children.iter().find(|c| c.name == name)
    }

    pub fn is_terminal(&self) -> bool {
        self.children.is_empty()
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves.len() + self.children.iter().map(TaxonomyNode::leaf_count).sum::<usize>()
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a ClassLabel>) {
        for child in &self.children {
            child.collect_leaves(out);
        }
        out.extend(self.leaves.iter());
    }

    fn depth(&self) -> usize {
        let below = self.children.iter().map(|c| c.depth() + 1).max().unwrap_or(0);
        below.max(usize::from(!self.leaves.is_empty()))
    }
}

/// Immutable meta-class tree; the leaves partition the class set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Taxonomy {
    root: TaxonomyNode,
}

impl Taxonomy {
    /// Wraps a root after checking every structural invariant.
    pub fn new(root: TaxonomyNode) -> Result<Self, TaxonomyError> {
        validate_node(&root, &root.name, &mut HashSet::new(), true)?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &TaxonomyNode {
        &self.root
    }

    /// All class labels, depth-first in child order.
    pub fn leaves(&self) -> Vec<&ClassLabel> {
        let mut out = Vec::new();
        self.root.collect_leaves(&mut out);
        out
    }

    /// Number of meta-class levels above the deepest leaf. A flat taxonomy
    /// (root holding the classes directly) has depth 0.
    pub fn depth(&self) -> usize {
        self.max_path_len() - 1
    }

    /// Length of the longest root-to-leaf path, root excluded.
    pub fn max_path_len(&self) -> usize {
        self.root.depth()
    }

    /// Node names from the first level below the root down to the leaf.
    pub fn truth_path(&self, label: &str) -> Option<Vec<String>> {
        fn walk(node: &TaxonomyNode, label: &str, path: &mut Vec<String>) -> bool {
            if node.leaves.iter().any(|l| l.as_str() == label) {
                path.push(label.to_owned());
                return true;
            }
            for child in &node.children {
                path.push(child.name.clone());
                if walk(child, label, path) {
                    return true;
                }
                path.pop();
            }
            false
        }
        let mut path = Vec::new();
        walk(&self.root, label, &mut path).then_some(path)
    }

    /// True when each step of `path` is an option of the node reached so far
    /// and only the last step may be a leaf.
    pub fn is_walk(&self, path: &[String]) -> bool {
        let mut node = &self.root;
        for (i, step) in path.iter().enumerate() {
            if let Some(child) = node.child(step) {
                node = child;
            } else if node.leaves.iter().any(|l| l.as_str() == step) {
                return i + 1 == path.len();
            } else {
                return false;
            }
        }
        true
    }

    /// Checks that no node has more than `K + 1` children at its level (the
    /// extra slot admits the Unknown bucket).
    pub fn check_width(&self, spec: &ClusterSpec) -> Result<(), TaxonomyError> {
        fn walk(node: &TaxonomyNode, level: usize, spec: &ClusterSpec, path: &str) -> Result<(), TaxonomyError> {
            if node.children.is_empty() {
                return Ok(());
            }
            let Some(&k) = spec.sizes().get(level) else {
                return Err(TaxonomyError::SchemaViolation {
                    path: path.to_owned(),
                    message: format!("meta-classes below level {} exceed the cluster spec depth", spec.depth()),
                });
            };
            let named = node.children.iter().filter(|c| c.name != UNKNOWN).count();
            if named > k || node.children.len() > k + 1 {
                return Err(TaxonomyError::SchemaViolation {
                    path: path.to_owned(),
                    message: format!("{} children exceed K = {k}", node.children.len()),
                });
            }
            for child in &node.children {
                walk(child, level + 1, spec, &format!("{path}/{}", child.name))?;
            }
            Ok(())
        }
        walk(&self.root, 0, spec, &self.root.name)
    }
}

fn validate_node(
    node: &TaxonomyNode,
    path: &str,
    seen: &mut HashSet<String>,
    is_root: bool,
) -> Result<(), TaxonomyError> {
    let violation = |message: String| TaxonomyError::SchemaViolation {
        path: path.to_owned(),
        message,
    };
    if node.name.trim().is_empty() {
        return Err(violation("node name is empty".into()));
    }
    if node.leaf_count() == 0 {
        return Err(violation(if is_root {
            "taxonomy has no classes".into()
        } else {
            format!("meta-class {:?} has no classes", node.name)
        }));
    }
    let mut siblings = HashSet::new();
    for option in node.options() {
        if !siblings.insert(option.to_lowercase()) {
            return Err(violation(format!("sibling name {option:?} appears twice")));
        }
    }
    for leaf in &node.leaves {
        if !seen.insert(leaf.as_str().to_lowercase()) {
            return Err(violation(format!("class {:?} appears more than once", leaf.as_str())));
        }
    }
    for child in &node.children {
        validate_node(child, &format!("{path}/{}", child.name), seen, false)?;
    }
    Ok(())
}
