//! Teacher-student distillation for pre-indexable document retrieval.

pub mod corpus;
pub mod distill;
pub mod jsonl;
pub mod metrics;
pub mod models;
pub mod tensor;
