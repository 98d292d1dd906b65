//! Shared inputs for the benchmarks.

use huesearch_core::survey::{filter_by_frequency, remove_outliers, resample_smote_for, restrict_labels};
use huesearch_core::synth::{synthetic_survey, SurveyModel};
use huesearch_core::{ColorNameDataset, DatasetFilterParams, LabelSet, Stage};

/// Synthetic survey run through the default preparation steps.
pub fn prepared_survey(answers: usize, seed: u64) -> ColorNameDataset {
    let raw = ColorNameDataset::from_samples(synthetic_survey(answers, seed, &SurveyModel::default()), Stage::Raw);
    let p = DatasetFilterParams::default();
    let labels = LabelSet::berlin_kay();
    let d = filter_by_frequency(&raw, p.tau).expect("filter");
    let d = remove_outliers(&d, p.outlier_k, p.outlier_radius).expect("clean");
    let d = resample_smote_for(&d, p.smote_k, seed, Some(&labels)).expect("smote");
    restrict_labels(&d, &labels).expect("restrict")
}
