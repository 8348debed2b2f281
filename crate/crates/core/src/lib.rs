//! Cross-modal metric learning between images and recipes.
//!
//! Two encoder branches map image features and recipes (ingredient tokens
//! plus instruction sentences) onto a shared unit sphere. Training uses a
//! hinge triplet loss whose triplets come from two sources, matching
//! image/recipe instances and shared class labels, with negatives mined
//! inside the mini-batch. Evaluation ranks pools of the opposite modality
//! and reports median rank and recall at K over repeated bags.

pub mod cli;
pub mod config;
pub mod data;
pub mod encoders;
pub mod error;
pub mod numerics;
pub mod queries;
pub mod retrieval;
pub mod trainer;
pub mod triplet;

pub use error::{Error, Result};
