mod common;

use std::collections::BTreeMap;

use huesearch_core::pipeline::{label_all, label_identity};
use huesearch_core::search::{evaluate, read_records, search, write_records, NO_PREDICTION};
use huesearch_core::synth::{export_fixture, part_vocabulary, pedestrian_fixture, SceneParams};
use huesearch_core::{
    LabelingParams, PersonRecord, PoolingMode, Preprocess, Query, RetinexParams, SearchVocabulary,
    SmoothingParams,
};
use proptest::prelude::*;

const CLASSES: [&str; 3] = ["upper", "lower", "shoes"];
const COLORS: [&str; 4] = ["red", "blue", "black", "light blue"];

fn arb_parts() -> impl Strategy<Value = BTreeMap<String, String>> {
    prop::collection::btree_map(
        (0..CLASSES.len()).prop_map(|i| CLASSES[i].to_string()),
        (0..COLORS.len()).prop_map(|i| COLORS[i].to_string()),
        0..=CLASSES.len(),
    )
}

/// Truth and prediction for the same ids.
fn arb_pair() -> impl Strategy<Value = (Vec<PersonRecord>, Vec<PersonRecord>)> {
    prop::collection::vec((arb_parts(), arb_parts()), 1..30).prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, (t, p))| (PersonRecord::labels_only(format!("{i}"), t), PersonRecord::labels_only(format!("{i}"), p)))
            .unzip()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn evaluation_counts_are_consistent((truth, pred) in arb_pair()) {
        let r = evaluate(&pred, &truth).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.ras) && (0.0..=1.0).contains(&r.recall));
        let truth_regions: usize = truth.iter().map(|t| t.parts.len()).sum();
        prop_assert_eq!(r.tp + r.fn_, truth_regions);
        let diagonal: usize = (0..r.labels.len()).map(|i| r.confusion[i][i]).sum();
        prop_assert_eq!(diagonal, r.tp);
        let missing = r.labels.len();
        let unpredicted: usize = r.confusion.iter().map(|row| row[missing]).sum();
        prop_assert_eq!(r.tp + r.fp + unpredicted, truth_regions);
        for (i, label) in r.labels.iter().enumerate() {
            let expected = truth.iter().flat_map(|t| t.parts.values()).filter(|l| *l == label).count();
            prop_assert_eq!(r.confusion[i].iter().sum::<usize>(), expected);
        }
        if r.tp + r.fp > 0 {
            prop_assert_eq!(r.ras, r.tp as f64 / (r.tp + r.fp) as f64);
        }
    }

    #[test]
    fn adding_a_predicate_never_widens_results(
        db in prop::collection::vec(arb_parts(), 1..60),
        picks in prop::collection::vec((0..CLASSES.len(), 0..COLORS.len()), 1..4),
    ) {
        let db: Vec<PersonRecord> = db.into_iter().enumerate().map(|(i, p)| PersonRecord::labels_only(format!("{i:03}"), p)).collect();
        let mut predicates: Vec<(&str, &str)> = Vec::new();
        for (c, l) in picks {
            if !predicates.iter().any(|p| p.0 == CLASSES[c]) {
                predicates.push((CLASSES[c], COLORS[l]));
            }
        }
        let vocab = SearchVocabulary::from_records(&db);
        for n in 1..predicates.len() {
            let broad = Query::new(predicates[..n].iter().copied()).unwrap();
            let narrow = Query::new(predicates[..=n].iter().copied()).unwrap();
            let (Ok(a), Ok(b)) = (search(&broad, &db, &vocab), search(&narrow, &db, &vocab)) else {
                continue;
            };
            prop_assert!(b.iter().all(|id| a.contains(id)));
        }
    }

    #[test]
    fn query_text_round_trips(picks in prop::collection::btree_map(0..CLASSES.len(), 0..COLORS.len(), 1..4)) {
        let q = Query::new(picks.iter().map(|(&c, &l)| (CLASSES[c], COLORS[l]))).unwrap();
        prop_assert_eq!(Query::parse(&q.to_string()).unwrap(), q);
    }

    #[test]
    fn record_lines_round_trip(rows in prop::collection::vec(arb_parts(), 0..20)) {
        let records: Vec<PersonRecord> = rows.into_iter().enumerate().map(|(i, p)| PersonRecord::labels_only(format!("p{i}"), p)).collect();
        let mut bytes = Vec::new();
        write_records(&records, &mut bytes).unwrap();
        prop_assert_eq!(read_records(bytes.as_slice()).unwrap(), records);
    }
}

#[test]
fn ten_region_fixture() {
    let truth: Vec<PersonRecord> = (0..5)
        .map(|i| PersonRecord::labels_only(format!("{i}"), [("upper", "red"), ("lower", "blue")]))
        .collect();
    let mut pred = truth.clone();
    pred[0].parts.insert("upper".into(), "green".into());
    pred[1].parts.insert("lower".into(), "black".into());
    pred[2].parts.remove("lower");
    let r = evaluate(&pred, &truth).unwrap();
    assert_eq!((r.tp, r.fp, r.fn_), (7, 2, 3));
    assert!((100.0 * r.ras - 77.8).abs() < 0.05);
    assert!((100.0 * r.recall - 70.0).abs() < 1e-9);
    assert_eq!(r.labels.last().map(String::as_str), Some("red"));
    assert!(r.confusion_csv().contains(NO_PREDICTION));
}

#[test]
fn zero_sigma_equals_no_smoothing() {
    let tree = common::shared_tree();
    let fixture = pedestrian_fixture(8, 3, &SceneParams::market());
    let mut plain = LabelingParams::new(part_vocabulary());
    plain.pooling = PoolingMode::SatSort;
    let mut zero = plain.clone();
    zero.smoothing = Some(SmoothingParams::new(0.0).unwrap());
    for item in &fixture {
        assert_eq!(
            label_identity(&item.frames, tree, &plain).unwrap(),
            label_identity(&item.frames, tree, &zero).unwrap()
        );
    }
}

#[test]
fn labeling_is_reproducible_and_order_free() {
    let tree = common::shared_tree();
    let fixture = pedestrian_fixture(6, 4, &SceneParams::market());
    let mut params = LabelingParams::new(part_vocabulary());
    params.preprocess = Preprocess::Msrcp(RetinexParams::default());
    params.pooling = PoolingMode::Random;
    let identities: Vec<_> = fixture.iter().map(|f| f.frames.clone()).collect();
    let a: Vec<_> = label_all(&identities, tree, &params).into_iter().map(Result::unwrap).collect();

    let mut shuffled = identities.clone();
    for identity in &mut shuffled {
        identity.frames.reverse();
    }
    shuffled.reverse();
    let mut b: Vec<_> = label_all(&shuffled, tree, &params).into_iter().map(Result::unwrap).collect();
    b.reverse();
    assert_eq!(a, b);
    for record in &a {
        let provenance = record.provenance.as_ref().unwrap();
        assert_eq!(provenance.pooling, PoolingMode::Random);
        assert!(record.parts.keys().all(|k| record.details.contains_key(k)));
    }
}

#[test]
fn exported_fixture_has_expected_layout() {
    let fixture = pedestrian_fixture(2, 9, &SceneParams::market());
    let dir = tempfile::tempdir().unwrap();
    export_fixture(&fixture, dir.path()).unwrap();
    let manifest = std::fs::read_to_string(dir.path().join("manifest.csv")).unwrap();
    let frames: usize = fixture.iter().map(|f| f.frames.frames.len()).sum();
    assert_eq!(manifest.lines().count(), frames + 1);
    let truth = huesearch_core::search::load_truth_csv(&dir.path().join("truth.csv")).unwrap();
    assert_eq!(truth, fixture.iter().map(|f| f.truth.clone()).collect::<Vec<_>>());
    assert!(dir.path().join("classes.txt").exists());
}
