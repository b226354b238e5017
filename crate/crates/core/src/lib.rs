//! Generate Design Structure Matrices (DSMs) of engineered systems with language
//! models, with or without retrieval, and score them against ground truth.

pub mod dsm;
pub mod metrics;
pub mod parse;
pub mod prompt;
pub mod gateway;
pub mod corpus;
pub mod graphrag;
pub mod align;
pub mod runner;
