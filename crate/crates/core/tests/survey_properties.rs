use std::collections::BTreeMap;
use std::sync::Arc;

use huesearch_core::survey::{
    filter_by_frequency, most_frequent_labels, read_dataset, remove_outliers, resample_smote,
    restrict_labels, write_dataset,
};
use huesearch_core::{ColorNameDataset, ColorSample, LabelSet, Rgb, Stage};
use proptest::prelude::*;

const LABELS: [&str; 5] = ["red", "green", "blue", "light blue", "mauve"];

fn arb_sample() -> impl Strategy<Value = ColorSample> {
    (any::<[u8; 3]>(), 0..LABELS.len()).prop_map(|(rgb, l)| ColorSample::new(Rgb(rgb), LABELS[l]).unwrap())
}

/// Samples packed into a few tight clusters, which is where the
/// neighborhood rules are actually exercised.
fn arb_clustered() -> impl Strategy<Value = Vec<ColorSample>> {
    let centers = prop::collection::vec(any::<[u8; 3]>(), 1..4);
    centers.prop_flat_map(|centers| {
        let n = centers.len();
        prop::collection::vec((0..n, any::<[i8; 3]>(), 0..3usize), 1..160).prop_map(move |pts| {
            pts.into_iter()
                .map(|(c, off, l)| {
                    let rgb = Rgb::from_f64([0, 1, 2].map(|i| f64::from(centers[c][i]) + f64::from(off[i] / 16)));
                    ColorSample::new(rgb, LABELS[l]).unwrap()
                })
                .collect()
        })
    })
}

fn dataset(samples: Vec<ColorSample>, stage: Stage) -> ColorNameDataset {
    ColorNameDataset::from_samples(samples, stage)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kept_labels_form_a_minimal_covering_prefix(
        counts in prop::collection::btree_map("[a-z]{1,6}", 1usize..500, 1..20),
        tau in 0.01f64..=1.0,
    ) {
        let counts: BTreeMap<Arc<str>, usize> = counts.into_iter().map(|(k, v)| (k.into(), v)).collect();
        let total: usize = counts.values().sum();
        let kept = most_frequent_labels(&counts, tau);
        let covered: usize = kept.iter().map(|l| counts[l]).sum();
        prop_assert!(covered as f64 >= tau * total as f64 - 1e-9);
        let smallest = kept.iter().map(|l| counts[l]).min().unwrap();
        prop_assert!(((covered - smallest) as f64) < tau * total as f64);
        for (label, &c) in &counts {
            if !kept.contains(label) {
                prop_assert!(c <= smallest);
            }
        }
    }

    #[test]
    fn frequency_filter_keeps_whole_labels(samples in prop::collection::vec(arb_sample(), 1..300), tau in 0.05f64..=1.0) {
        let d = dataset(samples, Stage::Raw);
        let f = filter_by_frequency(&d, tau).unwrap();
        for label in f.labels() {
            prop_assert_eq!(f.count_of(label), d.count_of(label));
        }
        prop_assert_eq!(f.stage(), Stage::Filtered);
    }

    #[test]
    fn outlier_removal_is_an_order_preserving_subsequence(
        samples in arb_clustered(),
        k in 1usize..6,
        radius in 1.0f64..30.0,
    ) {
        let d = dataset(samples.clone(), Stage::Filtered);
        let out = remove_outliers(&d, k, radius).unwrap();
        let mut rest = samples.iter();
        for s in out.samples() {
            prop_assert!(rest.any(|o| o == s), "{:?} out of order or invented", s);
        }
        // Each survivor of a large enough class has k same-label neighbors in the input.
        for s in out.samples() {
            let class: Vec<&ColorSample> = samples.iter().filter(|o| o.label == s.label).collect();
            if class.len() > k {
                let near = class.iter().filter(|o| (f64::from(o.rgb.squared_distance(s.rgb))).sqrt() <= radius).count();
                prop_assert!(near > k);
            }
        }
    }

    #[test]
    fn smote_balances_every_label(samples in arb_clustered(), k in 1usize..6, seed in any::<u64>()) {
        let d = dataset(samples.clone(), Stage::Cleaned);
        let out = resample_smote(&d, k, seed).unwrap();
        let target = d.label_counts().values().copied().max().unwrap();
        for label in d.labels() {
            prop_assert_eq!(out.count_of(label), target);
        }
        prop_assert_eq!(&out.samples()[..samples.len()], &samples[..]);
        let again = resample_smote(&d, k, seed).unwrap();
        prop_assert_eq!(out.samples(), again.samples());
    }

    #[test]
    fn stage_files_round_trip(samples in prop::collection::vec(arb_sample(), 1..100)) {
        let d = dataset(samples, Stage::Resampled);
        let mut bytes = Vec::new();
        write_dataset(&d, &mut bytes).unwrap();
        let back = read_dataset(bytes.as_slice()).unwrap();
        prop_assert_eq!(back.samples(), d.samples());
        prop_assert_eq!(back.stage(), Stage::Resampled);
        prop_assert_eq!(back.fingerprint(), d.fingerprint());
    }

    #[test]
    fn holdout_is_a_partition(samples in prop::collection::vec(arb_sample(), 2..200), seed in any::<u64>()) {
        let d = dataset(samples, Stage::Restricted);
        let (train, test) = d.split_holdout(0.25, seed).unwrap();
        prop_assert_eq!(train.len() + test.len(), d.len());
        let mut all: Vec<&ColorSample> = train.samples().iter().chain(test.samples()).collect();
        let mut orig: Vec<&ColorSample> = d.samples().iter().collect();
        let key = |s: &&ColorSample| (s.rgb.0, s.label.to_string());
        all.sort_by_key(key);
        orig.sort_by_key(key);
        prop_assert_eq!(all, orig);
    }
}

#[test]
fn outlier_removal_is_idempotent_on_separated_clusters() {
    // Tight clusters far from each other plus isolated strays: removing a
    // stray never costs a cluster member a neighbor.
    let mut samples = Vec::new();
    for (label, center) in [("red", [200u8, 20, 20]), ("blue", [20, 20, 200])] {
        for i in 0..30u8 {
            let c = Rgb::new(center[0] + i % 3, center[1] + i % 5, center[2] + i % 2);
            samples.push(ColorSample::new(c, label).unwrap());
        }
        samples.push(ColorSample::new(Rgb::new(120, 120, 120), label).unwrap());
    }
    let d = dataset(samples, Stage::Filtered);
    let once = remove_outliers(&d, 5, 8.0).unwrap();
    assert_eq!(once.len(), 60);
    let twice = remove_outliers(&dataset(once.samples().to_vec(), Stage::Filtered), 5, 8.0).unwrap();
    assert_eq!(once.samples(), twice.samples());
}

#[test]
fn second_outlier_pass_can_remove_more() {
    // With k = 2 and radius 10 along the red axis, 26 has one neighbor and
    // goes first; 18 then loses it and goes on the next pass.
    let chain: Vec<ColorSample> = [0u8, 5, 10, 18, 26]
        .iter()
        .map(|&r| ColorSample::new(Rgb::new(r, 0, 0), "red").unwrap())
        .collect();
    let once = remove_outliers(&dataset(chain, Stage::Filtered), 2, 10.0).unwrap();
    let reds: Vec<u8> = once.samples().iter().map(|s| s.rgb.r()).collect();
    assert_eq!(reds, [0, 5, 10, 18]);
    let twice = remove_outliers(&dataset(once.samples().to_vec(), Stage::Filtered), 2, 10.0).unwrap();
    let reds: Vec<u8> = twice.samples().iter().map(|s| s.rgb.r()).collect();
    assert_eq!(reds, [0, 5, 10]);
}

#[test]
fn restriction_drops_everything_outside_the_vocabulary() {
    let samples: Vec<ColorSample> = LABELS
        .iter()
        .enumerate()
        .map(|(i, l)| ColorSample::new(Rgb::new(i as u8, 0, 0), l).unwrap())
        .collect();
    let d = dataset(samples, Stage::Resampled);
    let out = restrict_labels(&d, &LabelSet::berlin_kay()).unwrap();
    let kept: Vec<&str> = out.labels().collect();
    assert_eq!(kept, ["blue", "green", "red"]);
    assert_eq!(out.stage(), Stage::Restricted);
}
