use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::imaging::ImagePatch;
use crate::taxonomy::ClassLabel;

/// Prompt text for every model role in the pipeline.
///
/// Slots are written `{name}`; each template must contain its slots exactly
/// once (see [`PromptConfig::validate`]).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptConfig {
    pub context_line: String,
    pub directive: String,
    /// Slot: `{geo_context}`.
    pub geo_context_template: String,
    /// Slot: `{classes}`. Rendered last so the prompt ends with the class list.
    pub classes_template: String,
    pub include_classes: bool,
    pub include_geo_context: bool,
    /// Fail instead of omitting the geo sentence when a patch has no token.
    pub strict_geo_context: bool,
    /// Slots: `{description}`, `{classes}`.
    pub classifier_template: String,
    /// Appended when the classifier is asked again after an invalid answer.
    pub classifier_reminder: String,
    /// Appended when the describer is asked again after an empty answer.
    pub describer_reminder: String,
    /// Slot: `{class}`.
    pub fallback_template: String,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            context_line: "This is a satellite image.".into(),
            directive: "Describe in detail what is visible in the image.".into(),
            geo_context_template: "The image comes from the map tile {geo_context}.".into(),
            classes_template: "The image may show one of the following classes: {classes}".into(),
            include_classes: false,
            include_geo_context: false,
            strict_geo_context: false,
            classifier_template: "You are given a description of a satellite image. Description: {description}. Choose exactly one class from: {classes}. Answer with the class name only.".into(),
            classifier_reminder: " Reply with one of the listed class names exactly as written, and nothing else.".into(),
            describer_reminder: " Your previous answer was empty; give a full description.".into(),
            fallback_template: "a satellite photo of {class}".into(),
        }
    }
}

fn check_slots(field: &str, template: &str, slots: &[&str]) -> Result<(), PipelineError> {
    for slot in slots {
        let marker = format!("{{{slot}}}");
        let count = template.matches(&marker).count();
        if count != 1 {
            return Err(PipelineError::Template(format!(
                "{field} must contain {marker} exactly once, found {count}"
            )));
        }
    }
    Ok(())
}

fn join(classes: &[ClassLabel]) -> String {
    classes.iter().map(ClassLabel::as_str).collect::<Vec<_>>().join(", ")
}

impl PromptConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        check_slots("geo_context_template", &self.geo_context_template, &["geo_context"])?;
        check_slots("classes_template", &self.classes_template, &["classes"])?;
        check_slots("classifier_template", &self.classifier_template, &["description", "classes"])?;
        check_slots("fallback_template", &self.fallback_template, &["class"])
    }

    /// Describer prompt: context, directive, optional geo sentence, optional
    /// class list.
    pub fn vision_prompt(&self, patch: &ImagePatch, classes: &[ClassLabel]) -> Result<String, PipelineError> {
        let mut parts = vec![self.context_line.trim().to_owned(), self.directive.trim().to_owned()];
        if self.include_geo_context {
            match &patch.geo_context {
                Some(token) => parts.push(self.geo_context_template.replace("{geo_context}", token)),
                None if self.strict_geo_context => {
                    return Err(PipelineError::MissingGeoContext(patch.id()));
                }
                None => {}
            }
        }
        if self.include_classes {
            if classes.is_empty() {
                return Err(PipelineError::NoClasses);
            }
            parts.push(self.classes_template.replace("{classes}", &join(classes)));
        }
        parts.retain(|p| !p.is_empty());
        Ok(parts.join(" "))
    }

    pub fn classifier_prompt(&self, description: &str, classes: &[ClassLabel], attempt: u32) -> String {
        // substitute {classes} first so a description containing "{classes}" stays verbatim
        let mut prompt = self
            .classifier_template
            .replace("{classes}", &join(classes))
            .replace("{description}", description.trim());
        if attempt > 0 {
            prompt.push_str(&self.classifier_reminder);
        }
        prompt
    }

    pub fn fallback_prompt(&self, class: &ClassLabel) -> String {
        self.fallback_template.replace("{class}", class.as_str())
    }
}
