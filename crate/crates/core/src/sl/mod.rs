//! Supervised inverse model: dataset generation and a small CNN mapping
//! field images to design parameters.

mod cnn;
mod dataset;

pub use cnn::{diagnose_fit, train_cnn, CnnBatch, CnnConfig, CnnModel, FitDiagnosis, FitThresholds, LossCurves,
    Selection, train_cnn_select};
pub use dataset::{
    fmap_name, generate_dataset, parse_index, prepare_input, split_indices, validation_count, Dataset, DatasetIndex,
    DatasetOptions, Provenance, Sample, Split, INDEX_FILE, SAMPLE_SIDE,
};
