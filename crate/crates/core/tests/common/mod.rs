#![allow(dead_code)]

use std::sync::OnceLock;

use huesearch_core::survey::{
    filter_by_frequency, remove_outliers, resample_smote_for, restrict_labels,
};
use huesearch_core::gauss;
use huesearch_core::synth::{synthetic_survey, SurveyModel};
use huesearch_core::tree::train_tree;
use huesearch_core::{
    ColorNameDataset, DatasetFilterParams, DecisionTree, LabelSet, SemanticMap, Stage,
    TreeTrainParams,
};

pub fn raw_survey(n: usize, seed: u64) -> ColorNameDataset {
    ColorNameDataset::from_samples(synthetic_survey(n, seed, &SurveyModel::default()), Stage::Raw)
}

/// Frequency filter, optional cleaning and balancing, then restriction to
/// the basic color names.
pub fn prepare(raw: &ColorNameDataset, clean: bool, smote: bool, seed: u64) -> ColorNameDataset {
    let p = DatasetFilterParams::default();
    let labels = LabelSet::berlin_kay();
    let mut d = filter_by_frequency(raw, p.tau).unwrap();
    if clean {
        d = remove_outliers(&d, p.outlier_k, p.outlier_radius).unwrap();
    }
    if smote {
        d = resample_smote_for(&d, p.smote_k, seed, Some(&labels)).unwrap();
    }
    restrict_labels(&d, &labels).unwrap()
}

/// Basic-color tree trained on a synthetic survey with cleaning and SMOTE.
pub fn basic_tree(n: usize, seed: u64) -> DecisionTree {
    let d = prepare(&raw_survey(n, seed), true, true, seed);
    train_tree(&d, &TreeTrainParams::default()).unwrap()
}

/// Answers in the shared survey. Cleaning is density based, so much
/// smaller synthetic surveys lose most of their samples to it.
pub const SHARED_SURVEY: usize = 200_000;

/// One basic-color tree per test binary.
pub fn shared_tree() -> &'static DecisionTree {
    static TREE: OnceLock<DecisionTree> = OnceLock::new();
    TREE.get_or_init(|| basic_tree(SHARED_SURVEY, 1))
}

/// Direct evaluation of the normalized 2D Gaussian sum for one class,
/// reading neighbors through half-sample reflection.
pub fn brute_force_responses(map: &SemanticMap, sigma: f64, h: usize, class: u8) -> Vec<f64> {
    let (w, hgt) = (map.width(), map.height());
    let hi = h as i64;
    let weight = |s: i64, t: i64| {
        if sigma == 0.0 {
            f64::from(u8::from(s == 0 && t == 0))
        } else {
            (-((s * s + t * t) as f64) / (2.0 * sigma * sigma)).exp()
        }
    };
    let mut norm = 0.0;
    for s in -hi..=hi {
        for t in -hi..=hi {
            norm += weight(s, t);
        }
    }
    let mut out = vec![0.0; w * hgt];
    for y in 0..hgt as i64 {
        for x in 0..w as i64 {
            let mut acc = 0.0;
            for s in -hi..=hi {
                for t in -hi..=hi {
                    let sx = gauss::reflect(x - s, w);
                    let sy = gauss::reflect(y - t, hgt);
                    if map.get(sx, sy) == class {
                        acc += weight(s, t);
                    }
                }
            }
            out[y as usize * w + x as usize] = acc / norm;
        }
    }
    out
}
