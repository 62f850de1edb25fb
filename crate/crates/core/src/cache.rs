//! Binary store of per-review embeddings, indexed by user and by item.
//!
//! Layout (little-endian): `"RCCT"`, u16 version, u16 flags, u32 d, u64 record
//! count, then records of `[u8 kind][u16 key len][key][u32 ordinal][d × f32]`.
//! Each review is written twice, once per side, sharing its ordinal.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoder::EncodedReview;
use crate::nn::Tensor2D;
use crate::{Error, Result, Scalar};

pub const MAGIC: &[u8; 4] = b"RCCT";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    User,
    Item,
}

impl EntityKind {
    fn code(self) -> u8 {
        match self {
            EntityKind::User => 0,
            EntityKind::Item => 1,
        }
    }
}

/// One cached embedding in an entity's history.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryEntry {
    /// The other side of the interaction, when known.
    pub counterpart: Option<String>,
    pub ordinal: u32,
    pub vector: Vec<f32>,
}

/// Counts produced by a write.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WriteReport {
    pub reviews: usize,
    pub records: usize,
    pub users: usize,
    pub items: usize,
    pub duplicates_overwritten: usize,
}

/// Header fields and index sizes, as printed by `cache-inspect`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheSummary {
    pub version: u16,
    pub flags: u16,
    pub dim: usize,
    pub records: u64,
    pub users: usize,
    pub items: usize,
    pub user_entries: usize,
    pub item_entries: usize,
}

/// In-memory user and item histories, oldest first.
#[derive(Clone, Debug, PartialEq)]
pub struct CacheStore {
    dim: usize,
    version: u16,
    flags: u16,
    users: BTreeMap<String, Vec<HistoryEntry>>,
    items: BTreeMap<String, Vec<HistoryEntry>>,
    duplicates_overwritten: usize,
}

impl CacheStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            version: VERSION,
            flags: 0,
            users: BTreeMap::new(),
            items: BTreeMap::new(),
            duplicates_overwritten: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn version(&self) -> u16 {
        self.version
    }

    pub fn flags(&self) -> u16 {
        self.flags
    }

    pub fn duplicates_overwritten(&self) -> usize {
        self.duplicates_overwritten
    }

    fn index(&self, kind: EntityKind) -> &BTreeMap<String, Vec<HistoryEntry>> {
        match kind {
            EntityKind::User => &self.users,
            EntityKind::Item => &self.items,
        }
    }

    pub fn keys(&self, kind: EntityKind) -> impl Iterator<Item = &str> {
        self.index(kind).keys().map(String::as_str)
    }

    pub fn history(&self, kind: EntityKind, key: &str) -> Option<&[HistoryEntry]> {
        self.index(kind).get(key).map(Vec::as_slice)
    }

    /// Appends one review under its user and its item. An earlier review of
    /// the same (user, item) pair is removed first; returns whether that happened.
    pub fn insert(&mut self, review: &EncodedReview) -> Result<bool> {
        if review.embedding.len() != self.dim {
            return Err(Error::Shape(format!(
                "embedding for ({}, {}) has {} entries, cache dimension is {}",
                review.user_id,
                review.item_id,
                review.embedding.len(),
                self.dim
            )));
        }
        let ordinal = u32::try_from(review.ordinal)
            .map_err(|_| Error::invalid(format!("review ordinal {} exceeds u32", review.ordinal)))?;
        let vector: Vec<f32> = review.embedding.iter().map(|&x| x as f32).collect();
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!(
                "embedding for ({}, {})",
                review.user_id, review.item_id
            )));
        }
        let mut replaced = false;
        if let Some(list) = self.users.get_mut(&review.user_id) {
            let before = list.len();
            list.retain(|e| e.counterpart.as_deref() != Some(review.item_id.as_str()));
            replaced = list.len() != before;
        }
        if replaced {
            if let Some(list) = self.items.get_mut(&review.item_id) {
                list.retain(|e| e.counterpart.as_deref() != Some(review.user_id.as_str()));
            }
            self.duplicates_overwritten += 1;
        }
        self.users.entry(review.user_id.clone()).or_default().push(HistoryEntry {
            counterpart: Some(review.item_id.clone()),
            ordinal,
            vector: vector.clone(),
        });
        self.items.entry(review.item_id.clone()).or_default().push(HistoryEntry {
            counterpart: Some(review.user_id.clone()),
            ordinal,
            vector,
        });
        Ok(replaced)
    }

    pub fn summary(&self) -> CacheSummary {
        let user_entries = self.users.values().map(Vec::len).sum();
        let item_entries = self.items.values().map(Vec::len).sum();
        CacheSummary {
            version: self.version,
            flags: self.flags,
            dim: self.dim,
            records: (user_entries + item_entries) as u64,
            users: self.users.len(),
            items: self.items.len(),
            user_entries,
            item_entries,
        }
    }

    /// Serialises the store. Interactions are emitted in ordinal order so the
    /// two sides of one review stay adjacent.
    pub fn to_bytes(&self) -> Vec<u8> {
        let summary = self.summary();
        let mut records: Vec<(u32, EntityKind, &str, &[f32])> = Vec::with_capacity(summary.records as usize);
        for (kind, index) in [(EntityKind::User, &self.users), (EntityKind::Item, &self.items)] {
            for (key, list) in index {
                for e in list {
                    records.push((e.ordinal, kind, key, &e.vector));
                }
            }
        }
        records.sort_by_key(|r| (r.0, r.1.code()));
        let mut out = Vec::with_capacity(HEADER_LEN + records.len() * (16 + 4 * self.dim));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&self.flags.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(records.len() as u64).to_le_bytes());
        for (ordinal, kind, key, vector) in records {
            out.push(kind.code());
            out.extend_from_slice(&(key.len() as u16).to_le_bytes());
            out.extend_from_slice(key.as_bytes());
            out.extend_from_slice(&ordinal.to_le_bytes());
            for x in vector {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    /// Parses a serialised store, rejecting bad headers and truncation.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(Error::Corrupt { offset: 0, reason: format!("bad magic {magic:?}") });
        }
        let version = r.u16("version")?;
        if version != VERSION {
            return Err(Error::Corrupt { offset: 4, reason: format!("unsupported version {version}") });
        }
        let flags = r.u16("flags")?;
        let dim = r.u32("dimension")? as usize;
        let count = r.u64("record count")?;
        let mut store = CacheStore { version, flags, ..CacheStore::new(dim) };
        let mut sides: HashMap<u32, [Option<(String, usize)>; 2]> = HashMap::new();
        for _ in 0..count {
            let at = r.pos as u64;
            let kind = match r.take(1, "record kind")?[0] {
                0 => EntityKind::User,
                1 => EntityKind::Item,
                k => return Err(Error::Corrupt { offset: at, reason: format!("unknown record kind {k}") }),
            };
            let key_len = r.u16("key length")? as usize;
            let key_at = r.pos as u64;
            let key = std::str::from_utf8(r.take(key_len, "key")?)
                .map_err(|_| Error::Corrupt { offset: key_at, reason: "key is not UTF-8".into() })?
                .to_string();
            let ordinal = r.u32("ordinal")?;
            let vec_at = r.pos as u64;
            let raw = r.take(4 * dim, "embedding")?;
            let vector: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if vector.iter().any(|x| !x.is_finite()) {
                return Err(Error::Corrupt { offset: vec_at, reason: "non-finite embedding value".into() });
            }
            let index = match kind {
                EntityKind::User => &mut store.users,
                EntityKind::Item => &mut store.items,
            };
            let list = index.entry(key.clone()).or_default();
            sides.entry(ordinal).or_default()[kind.code() as usize] = Some((key, list.len()));
            list.push(HistoryEntry { counterpart: None, ordinal, vector });
        }
        if r.pos != bytes.len() {
            return Err(Error::Corrupt {
                offset: r.pos as u64,
                reason: format!("{} trailing bytes", bytes.len() - r.pos),
            });
        }
        for [user, item] in sides.into_values() {
            if let (Some((u, ui)), Some((i, ii))) = (user, item) {
                store.users.get_mut(&u).unwrap()[ui].counterpart = Some(i.clone());
                store.items.get_mut(&i).unwrap()[ii].counterpart = Some(u);
            }
        }
        Ok(store)
    }

    /// Writes atomically (temp file + rename) while holding `<path>.lock`.
    pub fn write(&self, path: &Path) -> Result<WriteReport> {
        let lock = sibling(path, "lock");
        OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&lock)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::AlreadyExists => {
                    Error::Refused(format!("{} exists; another writer holds the cache", lock.display()))
                }
                _ => Error::io(&lock, e),
            })?;
        let tmp = sibling(path, "tmp");
        let result = fs::write(&tmp, self.to_bytes())
            .and_then(|_| fs::rename(&tmp, path))
            .map_err(|e| Error::io(path, e));
        let _ = fs::remove_file(&lock);
        result?;
        let s = self.summary();
        Ok(WriteReport {
            reviews: s.user_entries,
            records: s.records as usize,
            users: s.users,
            items: s.items,
            duplicates_overwritten: self.duplicates_overwritten,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn sibling(path: &Path, ext: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".");
    name.push(ext);
    path.with_file_name(name)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Corrupt {
                offset: self.pos as u64,
                reason: format!("truncated while reading {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Builds a store from `entries` and writes it to `path`.
pub fn cache_write<'a, I>(entries: I, dim: usize, path: &Path) -> Result<WriteReport>
where
    I: IntoIterator<Item = &'a EncodedReview>,
{
    let mut store = CacheStore::new(dim);
    for e in entries {
        if store.insert(e)? {
            log::warn!("overwrote earlier review of ({}, {})", e.user_id, e.item_id);
        }
    }
    store.write(path)
}

pub fn cache_read(path: &Path) -> Result<CacheStore> {
    CacheStore::read(path)
}

/// A fixed-height history matrix with its validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct StackedHistory<T> {
    /// `k_max × d`; rows at and beyond `true_length` are zero.
    pub matrix: Tensor2D<T>,
    pub mask: Vec<bool>,
    pub true_length: usize,
    /// No usable rows: unknown key, or every row excluded.
    pub miss: bool,
}

impl<T: Scalar> StackedHistory<T> {
    pub fn empty(k_max: usize, dim: usize) -> Self {
        Self {
            matrix: Tensor2D::zeros(k_max, dim),
            mask: vec![false; k_max],
            true_length: 0,
            miss: true,
        }
    }

    /// Stacks `rows` (oldest first) and pads to `k_max`.
    pub fn from_rows(rows: &[&[f32]], k_max: usize, dim: usize) -> Result<Self> {
        if rows.len() > k_max {
            return Err(Error::Shape(format!("{} rows exceed k_max {k_max}", rows.len())));
        }
        let mut out = Self::empty(k_max, dim);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::Shape(format!("history row has {} entries, expected {dim}", row.len())));
            }
            for (c, &x) in row.iter().enumerate() {
                out.matrix.set(r, c, T::of(x as f64));
            }
            out.mask[r] = true;
        }
        out.true_length = rows.len();
        out.miss = rows.is_empty();
        Ok(out)
    }

    pub fn k_max(&self) -> usize {
        self.mask.len()
    }

    /// The unmasked rows as a `true_length × d` matrix.
    pub fn valid_rows(&self) -> Tensor2D<T> {
        let d = self.matrix.cols();
        Tensor2D::from_vec(self.true_length, d, self.matrix.data()[..self.true_length * d].to_vec())
            .expect("prefix of a valid matrix")
    }
}

/// The most recent `min(m, k_max)` embeddings of `key`, zero-padded to `k_max`.
///
/// `exclude` names one (user, item) interaction whose embedding is left out.
/// Unknown keys, and keys whose only entries were excluded, give a miss.
pub fn retrieve_history<T: Scalar>(
    store: &CacheStore,
    kind: EntityKind,
    key: &str,
    k_max: usize,
    exclude: Option<(&str, &str)>,
) -> Result<StackedHistory<T>> {
    if k_max == 0 {
        return Err(Error::invalid("k_max must be positive"));
    }
    let Some(list) = store.history(kind, key) else {
        return Ok(StackedHistory::empty(k_max, store.dim()));
    };
    let skip = exclude.and_then(|(user, item)| match kind {
        EntityKind::User if user == key => Some(item),
        EntityKind::Item if item == key => Some(user),
        _ => None,
    });
    let kept: Vec<&[f32]> = list
        .iter()
        .filter(|e| skip.is_none() || e.counterpart.as_deref() != skip)
        .map(|e| e.vector.as_slice())
        .collect();
    let start = kept.len().saturating_sub(k_max);
    StackedHistory::from_rows(&kept[start..], k_max, store.dim())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn review(u: &str, i: &str, ordinal: u64, fill: f64) -> EncodedReview {
        EncodedReview {
            user_id: u.into(),
            item_id: i.into(),
            ordinal,
            embedding: vec![fill, -fill, 0.5],
            predicted_rating: 3.0,
        }
    }

    #[test]
    fn fan_out_counts() {
        let mut s = CacheStore::new(3);
        for (n, i) in ["a", "b", "c"].iter().enumerate() {
            s.insert(&review("u1", i, n as u64, n as f64)).unwrap();
        }
        assert_eq!(s.history(EntityKind::User, "u1").unwrap().len(), 3);
        for i in ["a", "b", "c"] {
            assert_eq!(s.history(EntityKind::Item, i).unwrap().len(), 1);
        }
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let mut s = CacheStore::new(4);
        assert!(s.insert(&review("u", "i", 0, 1.0)).is_err());
    }

    #[test]
    fn duplicate_pair_overwrites() {
        let mut s = CacheStore::new(3);
        s.insert(&review("u", "i", 0, 1.0)).unwrap();
        s.insert(&review("u", "j", 1, 2.0)).unwrap();
        assert!(s.insert(&review("u", "i", 2, 3.0)).unwrap());
        let h = s.history(EntityKind::User, "u").unwrap();
        assert_eq!(h.len(), 2);
        assert_eq!(h[1].vector[0], 3.0);
        assert_eq!(s.history(EntityKind::Item, "i").unwrap().len(), 1);
        assert_eq!(s.duplicates_overwritten(), 1);
    }

    #[test]
    fn empty_round_trip() {
        let s = CacheStore::new(8);
        let back = CacheStore::from_bytes(&s.to_bytes()).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.summary().records, 0);
    }

    #[test]
    fn round_trip_restores_counterparts() {
        let mut s = CacheStore::new(3);
        s.insert(&review("u1", "a", 0, 0.25)).unwrap();
        s.insert(&review("u2", "a", 1, 0.5)).unwrap();
        s.insert(&review("u1", "b", 2, 0.75)).unwrap();
        let back = CacheStore::from_bytes(&s.to_bytes()).unwrap();
        assert_eq!(back.history(EntityKind::User, "u1"), s.history(EntityKind::User, "u1"));
        assert_eq!(back.history(EntityKind::Item, "a"), s.history(EntityKind::Item, "a"));
    }

    #[test]
    fn header_validation() {
        let mut s = CacheStore::new(3);
        s.insert(&review("u", "i", 0, 1.0)).unwrap();
        let good = s.to_bytes();
        let mut bad = good.clone();
        bad[0] ^= 0xff;
        assert!(matches!(CacheStore::from_bytes(&bad), Err(Error::Corrupt { offset: 0, .. })));
        let mut bad = good.clone();
        bad[4] = 9;
        assert!(matches!(CacheStore::from_bytes(&bad), Err(Error::Corrupt { offset: 4, .. })));
        let cut = &good[..good.len() - 3];
        match CacheStore::from_bytes(cut) {
            Err(Error::Corrupt { offset, .. }) => assert!(offset > HEADER_LEN as u64),
            other => panic!("{other:?}"),
        }
        let mut long = good.clone();
        long.push(0);
        assert!(CacheStore::from_bytes(&long).is_err());
    }

    #[test]
    fn padding_and_truncation() {
        let mut s = CacheStore::new(3);
        for n in 0..15 {
            s.insert(&review("u", &format!("i{n}"), n, n as f64)).unwrap();
        }
        let h: StackedHistory<f64> = retrieve_history(&s, EntityKind::User, "u", 10, None).unwrap();
        assert_eq!(h.true_length, 10);
        assert_eq!(h.matrix.get(0, 0), 5.0);
        assert_eq!(h.matrix.get(9, 0), 14.0);
        let h: StackedHistory<f64> = retrieve_history(&s, EntityKind::Item, "i3", 10, None).unwrap();
        assert_eq!((h.true_length, h.mask.iter().filter(|&&m| m).count()), (1, 1));
        assert!(h.matrix.data()[3..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn exclusion_and_misses() {
        let mut s = CacheStore::new(3);
        s.insert(&review("u", "a", 0, 1.0)).unwrap();
        s.insert(&review("u", "b", 1, 2.0)).unwrap();
        let h: StackedHistory<f64> = retrieve_history(&s, EntityKind::User, "u", 4, Some(("u", "a"))).unwrap();
        assert_eq!(h.true_length, 1);
        assert_eq!(h.matrix.get(0, 0), 2.0);
        let h: StackedHistory<f64> = retrieve_history(&s, EntityKind::Item, "a", 4, Some(("u", "a"))).unwrap();
        assert!(h.miss && h.true_length == 0);
        let h: StackedHistory<f64> = retrieve_history(&s, EntityKind::User, "nobody", 4, None).unwrap();
        assert!(h.miss && h.mask.iter().all(|&m| !m));
        assert!(retrieve_history::<f64>(&s, EntityKind::User, "u", 0, None).is_err());
    }

    #[test]
    fn lock_blocks_second_writer() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        fs::write(sibling(&path, "lock"), b"").unwrap();
        assert!(matches!(CacheStore::new(2).write(&path), Err(Error::Refused(_))));
        fs::remove_file(sibling(&path, "lock")).unwrap();
        let report = CacheStore::new(2).write(&path).unwrap();
        assert_eq!(report.records, 0);
        assert!(!sibling(&path, "lock").exists() && !sibling(&path, "tmp").exists());
    }
}
