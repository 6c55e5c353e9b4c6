//! Two-stage patch classification: a vision model writes a description and a
//! language model picks a class from it. Embedding similarity takes over when
//! no usable class comes back.

mod fallback;
mod prompt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::gateway::{Decoding, Gateway, GatewayError, ImagePayload, ModelRequest, RequestKind};
use crate::imaging::{encode_png, ImagePatch};
use crate::taxonomy::{ensure_unique, ClassLabel, TaxonomyError};
use crate::{exec, text};

pub use fallback::{argmax, cosine_scores};
pub use prompt::PromptConfig;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("the class list is empty")]
    NoClasses,
    #[error(transparent)]
    Classes(#[from] TaxonomyError),
    #[error("patch {0} has no geo-context token and strict geo-context is on")]
    MissingGeoContext(String),
    #[error("template: {0}")]
    Template(String),
    #[error("{0} embedding has zero or non-finite norm")]
    DegenerateEmbedding(String),
    #[error("class #{index} embedding has {found} dimensions, image has {expected}")]
    DimensionMismatch { expected: usize, found: usize, index: usize },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("patch {patch}: primary path failed ({primary}) and fallback failed ({fallback})")]
    BothPathsFailed {
        patch: String,
        primary: Box<GatewayError>,
        fallback: Box<GatewayError>,
    },
}

impl PipelineError {
    pub fn is_exhaustion(&self) -> bool {
        match self {
            PipelineError::Gateway(e) => e.is_exhaustion(),
            PipelineError::BothPathsFailed { fallback, .. } => fallback.is_exhaustion(),
            _ => false,
        }
    }
}

/// Which path produced a label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Primary,
    Fallback,
    /// Only one option existed, so no model was asked.
    Forced,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub prompt: PromptConfig,
    pub describer_model: String,
    pub classifier_model: String,
    pub embedder_model: String,
    pub describe_decoding: Decoding,
    pub classify_decoding: Decoding,
    /// Extra describer attempts after an empty description.
    pub describe_retries: u32,
    /// Extra classifier attempts after an invalid answer.
    pub classify_retries: u32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            prompt: PromptConfig::default(),
            describer_model: "kosmos-2".into(),
            classifier_model: "gpt-4o".into(),
            embedder_model: "clip-vit-b-32".into(),
            describe_decoding: Decoding::default(),
            classify_decoding: Decoding {
                temperature: 0.0,
                max_output_tokens: 32,
            },
            describe_retries: 1,
            classify_retries: 1,
        }
    }
}

/// The three model roles, each behind its own gateway.
#[derive(Clone, Copy)]
pub struct Backends<'a> {
    pub describer: &'a Gateway,
    pub classifier: &'a Gateway,
    pub embedder: &'a Gateway,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Description {
    pub patch_id: String,
    pub text: String,
    /// Fingerprint of the describer request that produced `text`.
    pub prompt_digest: String,
    pub model_id: String,
}

impl Description {
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.text.as_bytes()))
    }
}

/// The classifier's verdict after all attempts.
#[derive(Clone, Debug, PartialEq)]
pub struct Verdict {
    pub label: Option<ClassLabel>,
    /// Raw text of the last attempt.
    pub raw_output: String,
    pub attempts: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassificationOutcome {
    pub patch_id: String,
    pub label: ClassLabel,
    pub source: Source,
    pub raw_output: String,
    /// Present exactly when `source` is [`Source::Fallback`].
    pub similarity_scores: Option<Vec<(ClassLabel, f64)>>,
    pub description: Option<Description>,
}

pub fn patch_image(patch: &ImagePatch) -> ImagePayload {
    ImagePayload::png(encode_png(&patch.pixels))
}

fn check_classes(classes: &[ClassLabel]) -> Result<(), PipelineError> {
    if classes.is_empty() {
        return Err(PipelineError::NoClasses);
    }
    ensure_unique(classes)?;
    Ok(())
}

pub fn build_vision_prompt(
    patch: &ImagePatch,
    classes: &[ClassLabel],
    cfg: &PromptConfig,
) -> Result<String, PipelineError> {
    cfg.vision_prompt(patch, classes)
}

/// Asks the describer, re-asking after an empty answer. `Ok(None)` means
/// every attempt came back empty.
pub fn describe_patch(
    patch: &ImagePatch,
    image: &ImagePayload,
    vision_classes: &[ClassLabel],
    cfg: &PipelineConfig,
    describer: &Gateway,
) -> Result<Option<Description>, PipelineError> {
    let base = build_vision_prompt(patch, vision_classes, &cfg.prompt)?;
    let patch_id = patch.id();
    for attempt in 0..=cfg.describe_retries {
        let mut prompt = base.clone();
        if attempt > 0 {
            prompt.push_str(&cfg.prompt.describer_reminder);
        }
        let req = ModelRequest::new(RequestKind::Describe, &cfg.describer_model, prompt)
            .with_image(image.clone())
            .with_decoding(cfg.describe_decoding);
        let reply = describer.invoke(&req)?;
        let text = reply.text.unwrap_or_default();
        if !text.trim().is_empty() {
            return Ok(Some(Description {
                patch_id,
                text: text.trim().to_owned(),
                prompt_digest: req.fingerprint(),
                model_id: cfg.describer_model.clone(),
            }));
        }
        log::debug!("{patch_id}: empty description on attempt {}", attempt + 1);
    }
    Ok(None)
}

/// Maps a description onto `classes`, re-asking with a reminder after an
/// answer that matches no class.
pub fn classify_description(
    desc: &Description,
    classes: &[ClassLabel],
    cfg: &PipelineConfig,
    classifier: &Gateway,
) -> Result<Verdict, PipelineError> {
    check_classes(classes)?;
    let mut raw_output = String::new();
    for attempt in 0..=cfg.classify_retries {
        let prompt = cfg.prompt.classifier_prompt(&desc.text, classes, attempt);
        let req = ModelRequest::new(RequestKind::Classify, &cfg.classifier_model, prompt)
            .with_decoding(cfg.classify_decoding);
        raw_output = classifier.invoke(&req)?.text.unwrap_or_default();
        if let Some(i) = text::match_class(&raw_output, classes) {
            return Ok(Verdict {
                label: Some(classes[i].clone()),
                raw_output,
                attempts: attempt + 1,
            });
        }
        log::debug!("{}: invalid classifier answer {raw_output:?}", desc.patch_id);
    }
    Ok(Verdict {
        label: None,
        raw_output,
        attempts: cfg.classify_retries + 1,
    })
}

/// Embeds the patch and every class prompt, then takes the cosine argmax.
pub fn fallback_classify(
    image: &ImagePayload,
    classes: &[ClassLabel],
    cfg: &PipelineConfig,
    embedder: &Gateway,
) -> Result<(ClassLabel, Vec<(ClassLabel, f64)>), PipelineError> {
    check_classes(classes)?;
    let embed = |req: ModelRequest| -> Result<Vec<f64>, PipelineError> {
        Ok(embedder.invoke(&req)?.vector.unwrap_or_default())
    };
    let image_vec = embed(
        ModelRequest::new(RequestKind::EmbedImage, &cfg.embedder_model, "").with_image(image.clone()),
    )?;
    let class_vecs = classes
        .iter()
        .map(|c| {
            embed(ModelRequest::new(
                RequestKind::EmbedText,
                &cfg.embedder_model,
                cfg.prompt.fallback_prompt(c),
            ))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let scores = cosine_scores(&image_vec, &class_vecs)?;
    let best = argmax(&scores).expect("classes are non-empty");
    Ok((
        classes[best].clone(),
        classes.iter().cloned().zip(scores).collect(),
    ))
}

/// Classifies from an already obtained description, as the hierarchy runner
/// does at every level. `description` carries the describer's result or the
/// transport error that prevented one.
pub fn classify_with_description(
    patch_id: &str,
    image: &ImagePayload,
    description: Result<Option<&Description>, &GatewayError>,
    classes: &[ClassLabel],
    cfg: &PipelineConfig,
    backends: Backends<'_>,
) -> Result<ClassificationOutcome, PipelineError> {
    check_classes(classes)?;
    let mut primary_error = description.err().cloned();
    let mut raw_output = String::new();
    if let Ok(Some(desc)) = description {
        match classify_description(desc, classes, cfg, backends.classifier) {
            Ok(Verdict {
                label: Some(label),
                raw_output,
                ..
            }) => {
                return Ok(ClassificationOutcome {
                    patch_id: patch_id.to_owned(),
                    label,
                    source: Source::Primary,
                    raw_output,
                    similarity_scores: None,
                    description: Some(desc.clone()),
                })
            }
            Ok(verdict) => raw_output = verdict.raw_output,
            Err(PipelineError::Gateway(e)) => primary_error = Some(e),
            Err(e) => return Err(e),
        }
    }
    if let Some(e) = &primary_error {
        log::warn!("{patch_id}: primary path failed, using fallback: {e}");
    }
    match fallback_classify(image, classes, cfg, backends.embedder) {
        Ok((label, scores)) => Ok(ClassificationOutcome {
            patch_id: patch_id.to_owned(),
            label,
            source: Source::Fallback,
            raw_output,
            similarity_scores: Some(scores),
            description: description.ok().flatten().cloned(),
        }),
        Err(PipelineError::Gateway(fallback)) => Err(match primary_error {
            Some(primary) => PipelineError::BothPathsFailed {
                patch: patch_id.to_owned(),
                primary: Box::new(primary),
                fallback: Box::new(fallback),
            },
            None => PipelineError::Gateway(fallback),
        }),
        Err(e) => Err(e),
    }
}

/// Runs the describe / classify / fallback pipeline on one patch. The
/// returned label is always one of `classes`.
pub fn classify_patch(
    patch: &ImagePatch,
    classes: &[ClassLabel],
    cfg: &PipelineConfig,
    backends: Backends<'_>,
) -> Result<ClassificationOutcome, PipelineError> {
    check_classes(classes)?;
    let image = patch_image(patch);
    let described = match describe_patch(patch, &image, classes, cfg, backends.describer) {
        Ok(d) => Ok(d),
        Err(PipelineError::Gateway(e)) => Err(e),
        Err(e) => return Err(e),
    };
    classify_with_description(
        &patch.id(),
        &image,
        described.as_ref().map(Option::as_ref),
        classes,
        cfg,
        backends,
    )
}

/// Classifies a batch; outcomes come back in input order.
pub fn classify_patches(
    patches: &[ImagePatch],
    classes: &[ClassLabel],
    cfg: &PipelineConfig,
    backends: Backends<'_>,
) -> Result<Vec<ClassificationOutcome>, PipelineError> {
    cfg.prompt.validate()?;
    exec::try_map(patches, |p| classify_patch(p, classes, cfg, backends))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class: String,
    pub score: f64,
}

/// One line of the predictions JSONL.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub patch_id: String,
    pub scene_id: String,
    pub grid_pos: [u32; 2],
    pub label: String,
    pub source: Source,
    pub description_digest: Option<String>,
    pub raw_output: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<ClassScore>>,
    /// Ground truth, when the manifest provides one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<String>,
}

impl PredictionRecord {
    pub fn new(patch: &ImagePatch, outcome: &ClassificationOutcome) -> Self {
        Self {
            patch_id: outcome.patch_id.clone(),
            scene_id: patch.scene_id.clone(),
            grid_pos: [patch.grid_pos.0, patch.grid_pos.1],
            label: outcome.label.as_str().to_owned(),
            source: outcome.source,
            description_digest: outcome.description.as_ref().map(Description::digest),
            raw_output: outcome.raw_output.clone(),
            scores: outcome.similarity_scores.as_ref().map(|s| {
                s.iter()
                    .map(|(c, v)| ClassScore {
                        class: c.as_str().to_owned(),
                        score: *v,
                    })
                    .collect()
            }),
            truth: patch.ground_truth.as_ref().map(|t| t.as_str().to_owned()),
        }
    }
}

/// Serializes records one JSON object per line.
pub fn to_jsonl<T: Serialize>(records: &[T]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

pub fn from_jsonl<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>, (usize, serde_json::Error)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| (i + 1, e)))
        .collect()
}
