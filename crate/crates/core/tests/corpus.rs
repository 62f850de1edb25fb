use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use proptest::prelude::*;

use reccot::corpus::{
    build_frequency_table, clean_records, filter_k_core, ingest, split, CorpusSplit, FrequencyMode,
    RatingFrequencyTable, ReviewRecord, SchemaMapping, SplitPart, SplitRow,
};

fn record(u: usize, i: usize, rating: u8, ordinal: u64) -> ReviewRecord {
    ReviewRecord {
        user_id: format!("u{u}"),
        item_id: format!("i{i}"),
        rating: f64::from(rating),
        review_text: format!("review number {ordinal}"),
        timestamp: None,
        ordinal,
        item_text: None,
    }
}

fn interactions() -> impl Strategy<Value = Vec<ReviewRecord>> {
    prop::collection::vec((0..25usize, 0..20usize, 1..=5u8), 0..300).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(n, (u, i, r))| record(u, i, r, n as u64))
            .collect()
    })
}

proptest! {
    #[test]
    fn k_core_is_a_fixpoint_and_every_survivor_qualifies(records in interactions(), k in 1..7usize) {
        let once = filter_k_core(&records, k).unwrap();
        prop_assert_eq!(&filter_k_core(&once, k).unwrap(), &once);
        let mut users: HashMap<&str, usize> = HashMap::new();
        let mut items: HashMap<&str, usize> = HashMap::new();
        for r in &once {
            *users.entry(&r.user_id).or_default() += 1;
            *items.entry(&r.item_id).or_default() += 1;
        }
        prop_assert!(users.values().chain(items.values()).all(|&c| c >= k));
        let ordinals: Vec<u64> = once.iter().map(|r| r.ordinal).collect();
        prop_assert!(ordinals.windows(2).all(|w| w[0] < w[1]), "order preserved");
    }

    #[test]
    fn inverse_weights_are_antitone_in_counts(counts in prop::collection::vec(1..10_000u64, 5)) {
        let map: BTreeMap<u8, u64> = (1..=5u8).zip(counts).collect();
        let t = RatingFrequencyTable::from_counts(map, FrequencyMode::Inverse).unwrap();
        for a in 1..=5u8 {
            for b in 1..=5u8 {
                if t.counts[&a] < t.counts[&b] {
                    prop_assert!(t.weights[&a] > t.weights[&b]);
                }
                if t.counts[&a] == t.counts[&b] {
                    prop_assert_eq!(t.weights[&a], t.weights[&b]);
                }
            }
        }
        prop_assert!((t.expected_weight() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_counts_weigh_one(c in 1..1000u64, k in 1..=5usize) {
        let map: BTreeMap<u8, u64> = (1..=k as u8).map(|r| (r, c)).collect();
        for mode in [FrequencyMode::Inverse, FrequencyMode::Raw] {
            let t = RatingFrequencyTable::from_counts(map.clone(), mode).unwrap();
            prop_assert!(t.weights.values().all(|&w| w == 1.0));
        }
    }

    #[test]
    fn split_partitions_and_round_trips(records in interactions(), seed in 0..1000u64) {
        prop_assume!(records.len() >= 10);
        let s = split(&records, (0.8, 0.1, 0.1), seed).unwrap();
        prop_assert_eq!(s.len(), records.len());
        prop_assert_eq!(s.folds.len(), s.train.len());
        let mut seen: Vec<u64> = s.train.iter().chain(&s.validation).chain(&s.test).map(|r| r.ordinal).collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..records.len() as u64).collect::<Vec<_>>());
        let lines: Vec<String> = s.to_rows().iter().map(|r| serde_json::to_string(r).unwrap()).collect();
        let rows: Vec<SplitRow> = lines.iter().map(|l| serde_json::from_str(l).unwrap()).collect();
        prop_assert_eq!(CorpusSplit::from_rows(rows).unwrap(), s.clone());
        prop_assert_eq!(split(&records, (0.8, 0.1, 0.1), seed).unwrap(), s);
    }
}

#[test]
fn ingest_clean_and_filter_a_file() {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    for u in 0..3 {
        for i in 0..3 {
            writeln!(
                f,
                r#"{{"reviewerID":"u{u}","asin":{i},"overall":{},"reviewText":"Fits well.<br />Would <b>buy</b> again &amp; again","unixReviewTime":{}}}"#,
                1 + (u + i) % 5,
                1000 + u * 10 + i
            )
            .unwrap();
        }
    }
    writeln!(f, r#"{{"reviewerID":"u9","asin":"x","overall":4,"reviewText":"short"}}"#).unwrap();
    writeln!(f, r#"{{"reviewerID":"u9","asin":"x","overall":0,"reviewText":"rating out of range here"}}"#).unwrap();
    writeln!(f, "not json").unwrap();
    writeln!(f).unwrap();
    let schema = SchemaMapping {
        user: "reviewerID".into(),
        item: "asin".into(),
        rating: "overall".into(),
        text: "reviewText".into(),
        timestamp: Some("unixReviewTime".into()),
        item_text: None,
    };
    let report = ingest(f.path(), &schema).unwrap();
    assert_eq!((report.records.len(), report.skipped), (10, 2));
    let (clean, dropped) = clean_records(report.records);
    assert_eq!(dropped, 1, "the too-short review goes");
    assert!(clean.iter().all(|r| !r.review_text.contains('<') && !r.review_text.contains("&amp;")));
    assert_eq!(clean[0].item_id, "0", "numeric ids become strings");
    assert_eq!(clean[0].timestamp, Some(1000));
    let core = filter_k_core(&clean, 3).unwrap();
    assert_eq!(core.len(), 9);
    let table = build_frequency_table(&core, FrequencyMode::Inverse).unwrap();
    assert_eq!(table.total, 9);
    assert!(table.weights.values().all(|w| w.is_finite() && *w > 0.0));
}

#[test]
fn split_rejects_bad_ratios_and_tiny_corpora() {
    let records: Vec<ReviewRecord> = (0..20).map(|n| record(n, n, 3, n as u64)).collect();
    assert!(split(&records, (0.8, 0.2, 0.0), 0).is_err());
    assert!(split(&records, (0.5, 0.3, 0.3), 0).is_err());
    assert!(split(&records[..5], (0.8, 0.1, 0.1), 0).is_err());
    let s = split(&records, (0.8, 0.1, 0.1), 0).unwrap();
    let rows = s.to_rows();
    assert!(rows.iter().all(|r| (r.split == SplitPart::Train) == r.fold.is_some()));
}
