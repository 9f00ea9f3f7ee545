//! Retrieval, query performance prediction, and listwise and pointwise
//! evaluation of predictors.

pub mod apae;
pub mod corpus;
pub mod exec;
pub mod harness;
pub mod listwise;
pub mod metrics;
pub mod qpp;
pub mod retrieval;
pub mod synthetic;
