//! Non-neural core of a triplet-structured referring pipeline for
//! multimodal models: the answer grammar, structured task blocks,
//! reference routing, grouped Hungarian matching, mask-guided feature
//! aggregation, region metrics, and a corpus builder/validator.

pub mod aggregation;
pub mod corpus;
pub mod geometry;
pub mod matching;
pub mod metrics;
pub mod router;
pub mod trp;
pub mod vdcot;
