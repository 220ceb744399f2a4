//! Audio reasoning dataset curation and evaluation.
//!
//! The library is organized around a four-stage curation pipeline
//! (corpus ingestion, QA construction, reasoning-trace generation,
//! quality verification) followed by SFT export, plus an evaluation
//! harness that scores answer accuracy and rubric-based reasoning
//! quality over multiple runs.

pub mod backend;
pub mod corpus;
pub mod cot;
pub mod eval;
pub mod extract;
pub mod hash;
pub mod jsonl;
pub mod pipeline;
pub mod qa;
pub mod sft;
pub mod stage;
pub mod verify;
