//! Evaluation metrics and the experiment harnesses built on the pipeline.

mod gradcheck;
mod harness;
mod metrics;

pub use gradcheck::{model_grad_check, run_grad_check, GradCheckSpec, GradCheckSuite, VariantGradCheck};
pub use harness::*;
pub use metrics::{average_ranks, median, nse, relative_improvement, spearman, NseResult};
