//! JSON document form of a [`Taxonomy`].
//!
//! Every node is an object with exactly three keys, always in this order:
//!
//! ```json
//! { "name": "root", "children": [ ... ], "leaves": [ "beach", ... ] }
//! ```
//!
//! Output is pretty-printed with two-space indentation and a trailing newline,
//! so equal taxonomies serialize to identical bytes.

use serde::Serialize;
use serde_json::Value;

use super::{ClassLabel, Taxonomy, TaxonomyError, TaxonomyNode};

#[derive(Serialize)]
struct NodeDoc<'a> {
    name: &'a str,
    children: Vec<NodeDoc<'a>>,
    leaves: Vec<&'a str>,
}

impl<'a> From<&'a TaxonomyNode> for NodeDoc<'a> {
    fn from(node: &'a TaxonomyNode) -> Self {
        Self {
            name: &node.name,
            children: node.children.iter().map(NodeDoc::from).collect(),
            leaves: node.leaves.iter().map(ClassLabel::as_str).collect(),
        }
    }
}

pub fn serialize_taxonomy(taxonomy: &Taxonomy) -> String {
    let mut out = serde_json::to_string_pretty(&NodeDoc::from(taxonomy.root())).expect("plain tree");
    out.push('\n');
    out
}

pub fn deserialize_taxonomy(doc: &str) -> Result<Taxonomy, TaxonomyError> {
    if doc.trim().is_empty() {
        return Err(violation("$", "document is empty"));
    }
    let value: Value =
        serde_json::from_str(doc).map_err(|e| violation("$", &format!("not valid JSON: {e}")))?;
    let root = node_from_value(&value, "$")?;
    Taxonomy::new(root)
}

fn violation(path: &str, message: &str) -> TaxonomyError {
    TaxonomyError::SchemaViolation {
        path: path.to_owned(),
        message: message.to_owned(),
    }
}

fn node_from_value(value: &Value, path: &str) -> Result<TaxonomyNode, TaxonomyError> {
    let obj = value
        .as_object()
        .ok_or_else(|| violation(path, "expected an object"))?;
    if let Some(extra) = obj.keys().find(|k| !matches!(k.as_str(), "name" | "children" | "leaves")) {
        return Err(violation(path, &format!("unexpected key {extra:?}")));
    }
    let name = obj
        .get("name")
        .and_then(Value::as_str)
        .ok_or_else(|| violation(path, "missing string field \"name\""))?;
    let field = |key: &str| -> Result<&[Value], TaxonomyError> {
        match obj.get(key) {
            None => Ok(&[]),
            Some(Value::Array(items)) => Ok(items),
            Some(_) => Err(violation(path, &format!("\"{key}\" must be an array"))),
        }
    };

    let children = field("children")?
        .iter()
        .enumerate()
        .map(|(i, child)| node_from_value(child, &format!("{path}.children[{i}]")))
        .collect::<Result<Vec<_>, _>>()?;
    let leaves = field("leaves")?
        .iter()
        .enumerate()
        .map(|(i, leaf)| {
            let at = format!("{path}.leaves[{i}]");
            let text = leaf.as_str().ok_or_else(|| violation(&at, "leaf must be a string"))?;
            ClassLabel::new(text).map_err(|e| violation(&at, &e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;

    Ok(TaxonomyNode {
        name: name.to_owned(),
        children,
        leaves,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::fixtures::ucm_gpt4o;

    #[test]
    fn round_trip_is_identity() {
        let t = ucm_gpt4o();
        let doc = serialize_taxonomy(&t);
        assert_eq!(deserialize_taxonomy(&doc).unwrap(), t);
        assert_eq!(serialize_taxonomy(&deserialize_taxonomy(&doc).unwrap()), doc);
    }

    #[test]
    fn key_order_is_fixed() {
        let doc = serialize_taxonomy(&ucm_gpt4o());
        let name = doc.find("\"name\"").unwrap();
        let children = doc.find("\"children\"").unwrap();
        let leaves = doc.find("\"leaves\"").unwrap();
        assert!(name < children && children < leaves);
        assert!(doc.ends_with("}\n"));
    }

    #[test]
    fn empty_document_is_rejected() {
        assert!(matches!(
            deserialize_taxonomy(""),
            Err(TaxonomyError::SchemaViolation { .. })
        ));
        assert!(deserialize_taxonomy("   \n").is_err());
    }

    #[test]
    fn duplicated_leaf_is_named() {
        let doc = r#"{"name":"root","children":[
            {"name":"Water","children":[],"leaves":["lake","river"]},
            {"name":"Land","children":[],"leaves":["forest","river"]}
        ],"leaves":[]}"#;
        let err = deserialize_taxonomy(doc).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("river"), "{msg}");
        assert!(msg.contains("Land"), "{msg}");
    }

    #[test]
    fn structural_errors_carry_a_path() {
        let doc = r#"{"name":"root","children":[{"name":"A","leaves":[3]}]}"#;
        match deserialize_taxonomy(doc) {
            Err(TaxonomyError::SchemaViolation { path, .. }) => assert_eq!(path, "$.children[0].leaves[0]"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(deserialize_taxonomy(r#"{"name":"root","leaves":["a"],"extra":1}"#).is_err());
        assert!(deserialize_taxonomy(r#"{"children":[]}"#).is_err());
    }
}
