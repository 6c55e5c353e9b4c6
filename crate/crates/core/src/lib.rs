//! Zero-shot classification of geospatial image patches.
//!
//! A vision model describes each patch, a language model maps the description
//! onto the user's classes, and an image/text embedding model serves as a
//! fallback when the answer is not one of them. Large class sets can be
//! organised into meta-class taxonomies and classified coarse-to-fine.
//!
//! Every model is reached through [`gateway::Gateway`], so the whole pipeline
//! runs offline against scripted transcripts.

pub mod app;
pub mod eval;
pub mod exec;
pub mod gateway;
pub mod hierarchy;
pub mod imaging;
pub mod pipeline;
pub mod taxonomy;
pub mod text;
