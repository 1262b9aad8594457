//! Conditional inference, predictive error under context/evaluation splits,
//! the kernel two-sample test and principal-component embeddings.

mod infer;
mod mmd;
mod pca;
mod split;

use std::io::Write;

pub use infer::{
    infer_function, model_predictive_mse, posterior_mean, predictive_mse, InferredFunction,
    MeanPredictor, ModelPredictor,
};
pub use mmd::{
    mmd_two_sample, quadrature_weights, test_power, write_test_csv, Bandwidth, PowerConfig,
    PowerEstimate, TestResult,
};
pub use pca::{pca_embed, write_embedding_csv, Embedding};
pub use split::{split_context, split_indices, SplitIndices, SplitSpec, SplitStrategy};

/// One row of an evaluation report.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub dataset: String,
    pub strategy: SplitStrategy,
    pub p: f64,
    pub mse: f64,
}

pub fn write_eval_csv<W: Write>(mut w: W, rows: &[EvalRow]) -> std::io::Result<()> {
    writeln!(w, "dataset,strategy,p,mse")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.dataset, r.strategy, r.p, r.mse)?;
    }
    Ok(())
}
