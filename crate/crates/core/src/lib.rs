//! Decision-boundary weakspot auditing and data-driven bias mitigation for
//! last-layer classifiers over fixed embeddings.

// `!(x >= 0.0)` style checks reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audit;
pub mod data;
pub mod index;
pub mod learner;
pub mod metrics;
pub mod pipeline;
pub mod procurement;
pub mod prompt;
pub mod review;
