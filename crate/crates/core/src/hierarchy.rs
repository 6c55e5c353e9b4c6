//! Coarse-to-fine classification over a taxonomy.
//!
//! The patch is described once. At each node the classifier picks among the
//! node's options (child meta-classes, then leaf classes) and the runner
//! descends into the pick. A wrong turn is never undone.

use serde::{Deserialize, Serialize};

use crate::exec;
use crate::gateway::GatewayError;
use crate::imaging::ImagePatch;
use crate::pipeline::{
    classify_with_description, describe_patch, patch_image, Backends, PipelineConfig, PipelineError, Source,
};
use crate::taxonomy::{ClassLabel, Taxonomy};

#[derive(Debug, thiserror::Error)]
pub enum HierarchyError {
    #[error("{0:?} is not a leaf of the taxonomy")]
    UnknownLabel(String),
    #[error("patch {patch}: {source}")]
    Pipeline {
        patch: String,
        #[source]
        source: PipelineError,
    },
}

impl HierarchyError {
    pub fn is_exhaustion(&self) -> bool {
        matches!(self, HierarchyError::Pipeline { source, .. } if source.is_exhaustion())
    }
}

/// Routed prediction for one patch. Also the hierarchical JSONL record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HierarchicalOutcome {
    pub patch_id: String,
    /// Node names from the first level below the root down to where routing
    /// stopped.
    pub path: Vec<String>,
    /// How each entry of `path` was chosen.
    pub sources: Vec<Source>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_path: Option<Vec<String>>,
}

/// Ancestor chain of a leaf, excluding the root.
pub fn truth_path(label: &str, taxonomy: &Taxonomy) -> Result<Vec<String>, HierarchyError> {
    taxonomy
        .truth_path(label)
        .ok_or_else(|| HierarchyError::UnknownLabel(label.to_owned()))
}

pub fn classify_hierarchical(
    patch: &ImagePatch,
    taxonomy: &Taxonomy,
    cfg: &PipelineConfig,
    backends: Backends<'_>,
) -> Result<HierarchicalOutcome, HierarchyError> {
    let patch_id = patch.id();
    let wrap = |source: PipelineError| HierarchyError::Pipeline {
        patch: patch_id.clone(),
        source,
    };
    let truth = patch
        .ground_truth
        .as_ref()
        .map(|t| truth_path(t.as_str(), taxonomy))
        .transpose()?;

    let image = patch_image(patch);
    let leaves: Vec<ClassLabel> = taxonomy.leaves().into_iter().cloned().collect();
    let described: Result<_, GatewayError> = match describe_patch(patch, &image, &leaves, cfg, backends.describer) {
        Ok(d) => Ok(d),
        Err(PipelineError::Gateway(e)) => Err(e),
        Err(e) => return Err(wrap(e)),
    };

    let mut node = taxonomy.root();
    let mut path = Vec::new();
    let mut sources = Vec::new();
    loop {
        let options = node.options();
        let (choice, source) = if options.len() == 1 {
            (options[0].to_owned(), Source::Forced)
        } else {
            let classes = options
                .iter()
                .map(ClassLabel::new)
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| wrap(e.into()))?;
            let out = classify_with_description(
                &patch_id,
                &image,
                described.as_ref().map(Option::as_ref),
                &classes,
                cfg,
                backends,
            )
            .map_err(wrap)?;
            (out.label.as_str().to_owned(), out.source)
        };
        let next = node.child(&choice);
        path.push(choice);
        sources.push(source);
        match next {
            Some(child) => node = child,
            None => break,
        }
    }
    Ok(HierarchicalOutcome {
        patch_id,
        path,
        sources,
        truth_path: truth,
    })
}

/// Routes a batch; outcomes come back in input order.
pub fn classify_hierarchical_batch(
    patches: &[ImagePatch],
    taxonomy: &Taxonomy,
    cfg: &PipelineConfig,
    backends: Backends<'_>,
) -> Result<Vec<HierarchicalOutcome>, HierarchyError> {
    cfg.prompt.validate().map_err(|source| HierarchyError::Pipeline {
        patch: String::new(),
        source,
    })?;
    exec::try_map(patches, |p| classify_hierarchical(p, taxonomy, cfg, backends))
}
