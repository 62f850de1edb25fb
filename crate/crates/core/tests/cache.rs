use proptest::prelude::*;

use reccot::cache::{cache_read, cache_write, retrieve_history, CacheStore, EntityKind, StackedHistory};
use reccot::encoder::EncodedReview;
use reccot::Error;

fn reviews(pairs: &[(u8, u8)], dim: usize, values: &[f32]) -> Vec<EncodedReview> {
    pairs
        .iter()
        .enumerate()
        .map(|(n, &(u, i))| EncodedReview {
            user_id: format!("user-{u}"),
            item_id: format!("item-{i}"),
            ordinal: n as u64,
            embedding: (0..dim).map(|j| f64::from(values[(n * dim + j) % values.len()])).collect(),
            predicted_rating: 3.0,
        })
        .collect()
}

proptest! {
    #[test]
    fn bytes_round_trip(
        pairs in prop::collection::vec((0..12u8, 0..12u8), 1..80),
        dim in 1..9usize,
        values in prop::collection::vec(-1e6f32..1e6f32, 1..64),
    ) {
        let mut store = CacheStore::new(dim);
        for r in reviews(&pairs, dim, &values) {
            store.insert(&r).unwrap();
        }
        let bytes = store.to_bytes();
        let back = CacheStore::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.summary(), store.summary());
        for kind in [EntityKind::User, EntityKind::Item] {
            for key in store.keys(kind) {
                prop_assert_eq!(back.history(kind, key), store.history(kind, key));
            }
        }
        prop_assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn every_truncation_is_rejected(pairs in prop::collection::vec((0..4u8, 0..4u8), 1..10), cut in 0.0..1.0f64) {
        let mut store = CacheStore::new(3);
        for r in reviews(&pairs, 3, &[0.5, -2.0, 7.25]) {
            store.insert(&r).unwrap();
        }
        let bytes = store.to_bytes();
        let at = ((bytes.len() as f64) * cut) as usize;
        let is_corrupt = matches!(CacheStore::from_bytes(&bytes[..at]), Err(Error::Corrupt { .. }));
        prop_assert!(is_corrupt);
    }

    #[test]
    fn history_is_the_newest_rows_padded(m in 0..25usize, k_max in 1..16usize, excluded in 0..25usize) {
        let pairs: Vec<(u8, u8)> = (0..m).map(|i| (0, i as u8)).collect();
        let values: Vec<f32> = (0..4 * m.max(1)).map(|v| v as f32 + 1.0).collect();
        let mut store = CacheStore::new(4);
        for r in reviews(&pairs, 4, &values) {
            store.insert(&r).unwrap();
        }
        let item = format!("item-{excluded}");
        let h: StackedHistory<f64> =
            retrieve_history(&store, EntityKind::User, "user-0", k_max, Some(("user-0", &item))).unwrap();
        let kept: Vec<usize> = (0..m).filter(|&i| i != excluded).collect();
        let newest = &kept[kept.len().saturating_sub(k_max)..];
        prop_assert_eq!(h.true_length, newest.len());
        prop_assert_eq!(h.miss, newest.is_empty());
        prop_assert_eq!(h.k_max(), k_max);
        for r in 0..k_max {
            prop_assert_eq!(h.mask[r], r < newest.len());
            let want: Vec<f64> = match newest.get(r) {
                Some(&n) => (0..4).map(|j| f64::from(values[(n * 4 + j) % values.len()])).collect(),
                None => vec![0.0; 4],
            };
            prop_assert_eq!(h.matrix.row(r), want.as_slice());
        }
    }
}

#[test]
fn file_round_trip_and_lock() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cache.bin");
    let rs = reviews(&[(0, 0), (0, 1), (1, 0), (0, 0)], 2, &[1.5, -0.25, 3.0]);
    let report = cache_write(&rs, 2, &path).unwrap();
    assert_eq!(report.duplicates_overwritten, 1);
    assert_eq!((report.reviews, report.records, report.users, report.items), (3, 6, 2, 2));
    let store = cache_read(&path).unwrap();
    let s = store.summary();
    assert_eq!((s.dim, s.records, s.user_entries, s.item_entries), (2, 6, 3, 3));
    let h = store.history(EntityKind::User, "user-0").unwrap();
    assert_eq!(h.last().unwrap().counterpart.as_deref(), Some("item-0"), "the rewrite is the newest entry");

    std::fs::write(dir.path().join("cache.bin.lock"), b"").unwrap();
    assert!(matches!(store.write(&path), Err(Error::Refused(_))));
    std::fs::remove_file(dir.path().join("cache.bin.lock")).unwrap();
    store.write(&path).unwrap();
    assert!(!dir.path().join("cache.bin.lock").exists());
    assert!(!dir.path().join("cache.bin.tmp").exists());
}

#[test]
fn bad_inputs_are_refused() {
    let mut store = CacheStore::new(3);
    let mut r = reviews(&[(0, 0)], 2, &[1.0]).remove(0);
    assert!(matches!(store.insert(&r), Err(Error::Shape(_))));
    r.embedding = vec![1.0, f64::NAN, 0.0];
    assert!(matches!(store.insert(&r), Err(Error::NonFinite(_))));
    assert!(retrieve_history::<f64>(&store, EntityKind::User, "user-0", 0, None).is_err());
    assert!(matches!(cache_read(std::path::Path::new("/nonexistent/cache.bin")), Err(Error::Io { .. })));

    let mut good = CacheStore::new(1);
    good.insert(&reviews(&[(0, 0)], 1, &[2.0]).remove(0)).unwrap();
    let mut bytes = good.to_bytes();
    bytes.push(0);
    assert!(matches!(CacheStore::from_bytes(&bytes), Err(Error::Corrupt { .. })), "trailing bytes");
    let mut bytes = good.to_bytes();
    let last = bytes.len() - 4;
    bytes[last..].copy_from_slice(&f32::INFINITY.to_le_bytes());
    assert!(matches!(CacheStore::from_bytes(&bytes), Err(Error::Corrupt { .. })), "non-finite value");
}
