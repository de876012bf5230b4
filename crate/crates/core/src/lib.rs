//! Two-stage NDA analysis toolkit: segment agreements into clauses with an
//! LLM, classify each clause into a 14-class taxonomy, and evaluate both
//! stages with alignment-based metrics.

pub mod alignment;
pub mod corpus;
pub mod gateway;
pub mod metrics;
pub mod pipeline;
pub mod prompts;
pub mod semantic;
pub mod workers;
