//! One-vs-rest linear max-margin decoders and generalization analyses.

mod analysis;
mod archive;
mod decoder;
mod svm;

pub use analysis::{
    cross_stimulus_encoding, cross_task_gap, cross_task_matrix, cross_time_matrix, evaluate_set, fit_set,
    task_relevance_table, CrossTime, GeneralizationMatrix, RelevanceRow,
};
pub use archive::{load_decoders, save_decoders};
pub(crate) use decoder::stratified_folds;
pub use decoder::{
    fit_decoder, multiclass_accuracy, predict_argmax, stack_normals, CvConfig, DecoderMeta, DecoderSet, Hyperplane,
    LinearDecoder, Standardizer, CV_FLOOR, C_GRID,
};
pub use svm::SolverParams;
