//! Multimodal task-oriented dialog toolkit: an ontology-checked annotation
//! language, deterministic shopping environments, a synthetic corpus
//! generator, a small multimodal action predictor with analytic gradients,
//! TF-IDF baselines, and the action / response / state-tracking metrics.

pub mod ontology;
pub mod label_lang;
pub mod tokenize;
pub mod environment;
pub mod datagen;
pub mod fusion_model;
pub mod baselines;
pub mod metrics;
