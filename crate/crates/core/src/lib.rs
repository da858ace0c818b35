//! Reason comparing network for stance (dis)agreement detection between
//! utterance pairs, with a small reverse-mode autodiff core.

pub mod cli;
pub mod comparator;
pub mod corpus;
pub mod encoder;
pub mod model;
pub mod reason;
pub mod synthetic;
pub mod tensor_math;
pub mod text;
pub mod training;
pub mod viz;
