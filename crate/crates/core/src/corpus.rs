//! Review ingestion, text cleaning, k-core filtering, rating-frequency table
//! and train/validation/test splitting.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::{Error, Result};

/// The five rating categories.
pub const CATEGORIES: [u8; 5] = [1, 2, 3, 4, 5];

/// Cleaned text shorter than this many characters is dropped.
pub const MIN_TEXT_CHARS: usize = 10;

/// One (user, item, rating, review) interaction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReviewRecord {
    pub user_id: String,
    pub item_id: String,
    pub rating: f64,
    pub review_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<i64>,
    /// Line position in the source file; breaks timestamp ties.
    #[serde(default)]
    pub ordinal: u64,
    /// Optional item-side metadata text (title, description).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item_text: Option<String>,
}

impl ReviewRecord {
    pub fn category(&self) -> u8 {
        rating_category(self.rating).expect("record ratings are validated on ingest")
    }

    /// Recency key: timestamp first, file order second.
    pub fn recency_key(&self) -> (i64, u64) {
        (self.timestamp.unwrap_or(i64::MIN), self.ordinal)
    }
}

/// Maps a rating to its category if it is exactly one of 1..=5.
pub fn rating_category(rating: f64) -> Option<u8> {
    CATEGORIES
        .iter()
        .copied()
        .find(|&c| rating == f64::from(c))
}

/// Field names of the raw review JSON objects.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchemaMapping {
    pub user: String,
    pub item: String,
    pub rating: String,
    pub text: String,
    pub timestamp: Option<String>,
    pub item_text: Option<String>,
}

impl Default for SchemaMapping {
    fn default() -> Self {
        Self {
            user: "user".into(),
            item: "item".into(),
            rating: "rating".into(),
            text: "text".into(),
            timestamp: Some("timestamp".into()),
            item_text: None,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct IngestReport {
    pub records: Vec<ReviewRecord>,
    /// Lines that failed to parse or carried missing/out-of-range fields.
    pub skipped: usize,
}

fn string_field(obj: &serde_json::Map<String, Value>, key: &str) -> Option<String> {
    match obj.get(key)? {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn parse_line(line: &str, schema: &SchemaMapping, ordinal: u64) -> Option<ReviewRecord> {
    let value: Value = serde_json::from_str(line).ok()?;
    let obj = value.as_object()?;
    let rating = obj.get(&schema.rating)?.as_f64()?;
    rating_category(rating)?;
    let timestamp = schema
        .timestamp
        .as_ref()
        .and_then(|k| obj.get(k))
        .and_then(Value::as_i64);
    let item_text = schema
        .item_text
        .as_ref()
        .and_then(|k| string_field(obj, k));
    Some(ReviewRecord {
        user_id: string_field(obj, &schema.user)?,
        item_id: string_field(obj, &schema.item)?,
        rating,
        review_text: obj.get(&schema.text)?.as_str()?.to_string(),
        timestamp,
        ordinal,
        item_text,
    })
}

/// Reads one JSON review object per line. Blank lines are ignored; malformed
/// lines, missing fields and ratings outside {1,…,5} are counted and skipped.
pub fn ingest(path: &Path, schema: &SchemaMapping) -> Result<IngestReport> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut report = IngestReport::default();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(&line, schema, n as u64) {
            Some(r) => report.records.push(r),
            None => report.skipped += 1,
        }
    }
    Ok(report)
}

fn markup() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"<[^>]*>|&#?[a-z0-9]+;").unwrap())
}

/// Drops a glued-on `br` line-break remnant ("tune.br", "designsbr").
fn strip_br(token: &str) -> Option<&str> {
    if token == "br" {
        return None;
    }
    match token.strip_suffix("br") {
        Some(stem) if stem.chars().count() >= 2 => Some(stem),
        _ => Some(token),
    }
}

/// Lowercases, removes markup and `br` remnants, control characters and
/// repeated whitespace. Returns an empty string when fewer than
/// [`MIN_TEXT_CHARS`] characters remain.
pub fn clean_text(raw: &str) -> String {
    let lowered = raw.to_lowercase();
    let no_markup = markup().replace_all(&lowered, " ");
    let no_control: String = no_markup
        .chars()
        .map(|c| if c.is_control() { ' ' } else { c })
        .collect();
    let cleaned = no_control
        .split_whitespace()
        .filter_map(strip_br)
        .collect::<Vec<_>>()
        .join(" ");
    if cleaned.chars().count() < MIN_TEXT_CHARS {
        String::new()
    } else {
        cleaned
    }
}

/// Applies [`clean_text`] to every record; returns survivors and the drop count.
pub fn clean_records(records: Vec<ReviewRecord>) -> (Vec<ReviewRecord>, usize) {
    let before = records.len();
    let kept: Vec<_> = records
        .into_iter()
        .filter_map(|mut r| {
            r.review_text = clean_text(&r.review_text);
            if r.review_text.is_empty() {
                return None;
            }
            r.item_text = r.item_text.map(|t| clean_text(&t)).filter(|t| !t.is_empty());
            Some(r)
        })
        .collect();
    let dropped = before - kept.len();
    (kept, dropped)
}

/// Iteratively removes users and items with fewer than `k` interactions
/// until every survivor has at least `k`. Input order is preserved.
pub fn filter_k_core(records: &[ReviewRecord], k: usize) -> Result<Vec<ReviewRecord>> {
    if k == 0 {
        return Err(Error::invalid("k-core filter needs k >= 1"));
    }
    let mut alive = vec![true; records.len()];
    loop {
        let mut users: HashMap<&str, usize> = HashMap::new();
        let mut items: HashMap<&str, usize> = HashMap::new();
        for (r, _) in records.iter().zip(&alive).filter(|(_, &a)| a) {
            *users.entry(&r.user_id).or_default() += 1;
            *items.entry(&r.item_id).or_default() += 1;
        }
        let mut changed = false;
        for (r, a) in records.iter().zip(alive.iter_mut()).filter(|(_, a)| **a) {
            if users[r.user_id.as_str()] < k || items[r.item_id.as_str()] < k {
                *a = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    Ok(records
        .iter()
        .zip(&alive)
        .filter(|(_, &a)| a)
        .map(|(r, _)| r.clone())
        .collect())
}

/// How category weights are derived from counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrequencyMode {
    /// `total / (K · count)`: rare categories weigh more.
    #[default]
    Inverse,
    /// `K · count / total`: the plain occurrence frequency, normalised.
    Raw,
}

/// Per-category counts and the derived reward weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatingFrequencyTable {
    pub counts: BTreeMap<u8, u64>,
    /// Only categories with a nonzero count carry a weight.
    pub weights: BTreeMap<u8, f64>,
    pub total: u64,
    pub mode: FrequencyMode,
}

impl RatingFrequencyTable {
    pub fn from_counts(counts: BTreeMap<u8, u64>, mode: FrequencyMode) -> Result<Self> {
        let total: u64 = counts.values().sum();
        if total == 0 {
            return Err(Error::invalid("frequency table needs at least one record"));
        }
        let nonzero = counts.values().filter(|&&c| c > 0).count() as f64;
        let weights = counts
            .iter()
            .filter(|(_, &c)| c > 0)
            .map(|(&cat, &c)| {
                let w = match mode {
                    FrequencyMode::Inverse => total as f64 / (nonzero * c as f64),
                    FrequencyMode::Raw => nonzero * c as f64 / total as f64,
                };
                (cat, w)
            })
            .collect();
        Ok(Self {
            counts,
            weights,
            total,
            mode,
        })
    }

    /// Weight of the category a rating falls into, if that category was observed.
    pub fn weight(&self, rating: f64) -> Option<f64> {
        rating_category(rating).and_then(|c| self.weights.get(&c).copied())
    }

    /// Mean weight when categories are drawn with count-proportional probability.
    pub fn expected_weight(&self) -> f64 {
        self.weights
            .iter()
            .map(|(c, w)| w * self.counts[c] as f64)
            .sum::<f64>()
            / self.total as f64
    }
}

pub fn build_frequency_table(
    records: &[ReviewRecord],
    mode: FrequencyMode,
) -> Result<RatingFrequencyTable> {
    let mut counts: BTreeMap<u8, u64> = CATEGORIES.iter().map(|&c| (c, 0)).collect();
    for r in records {
        *counts.get_mut(&r.category()).expect("valid category") += 1;
    }
    RatingFrequencyTable::from_counts(counts, mode)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Fold {
    A,
    B,
}

impl Fold {
    pub fn other(self) -> Fold {
        match self {
            Fold::A => Fold::B,
            Fold::B => Fold::A,
        }
    }
}

impl std::fmt::Display for Fold {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Fold::A => "A",
            Fold::B => "B",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitPart {
    Train,
    Validation,
    Test,
}

/// Disjoint train/validation/test parts; `folds[i]` is the fold of `train[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSplit {
    pub train: Vec<ReviewRecord>,
    pub validation: Vec<ReviewRecord>,
    pub test: Vec<ReviewRecord>,
    pub folds: Vec<Fold>,
}

/// One line of the split manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRow {
    #[serde(flatten)]
    pub record: ReviewRecord,
    pub split: SplitPart,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold: Option<Fold>,
}

impl CorpusSplit {
    pub fn fold(&self, fold: Fold) -> Vec<&ReviewRecord> {
        self.train
            .iter()
            .zip(&self.folds)
            .filter(|(_, &f)| f == fold)
            .map(|(r, _)| r)
            .collect()
    }

    pub fn to_rows(&self) -> Vec<SplitRow> {
        let train = self.train.iter().zip(&self.folds).map(|(r, &f)| SplitRow {
            record: r.clone(),
            split: SplitPart::Train,
            fold: Some(f),
        });
        let rest = [
            (SplitPart::Validation, &self.validation),
            (SplitPart::Test, &self.test),
        ]
        .into_iter()
        .flat_map(|(part, recs)| {
            recs.iter().map(move |r| SplitRow {
                record: r.clone(),
                split: part,
                fold: None,
            })
        });
        train.chain(rest).collect()
    }

    pub fn from_rows(rows: Vec<SplitRow>) -> Result<Self> {
        let mut out = CorpusSplit {
            train: Vec::new(),
            validation: Vec::new(),
            test: Vec::new(),
            folds: Vec::new(),
        };
        for row in rows {
            match row.split {
                SplitPart::Train => {
                    let fold = row.fold.ok_or_else(|| {
                        Error::invalid(format!(
                            "train record {}/{} has no fold assignment",
                            row.record.user_id, row.record.item_id
                        ))
                    })?;
                    out.train.push(row.record);
                    out.folds.push(fold);
                }
                SplitPart::Validation => out.validation.push(row.record),
                SplitPart::Test => out.test.push(row.record),
            }
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Seeded random split by interaction, then a random halving of train into folds.
/// Each part keeps source-file order.
pub fn split(records: &[ReviewRecord], ratios: (f64, f64, f64), seed: u64) -> Result<CorpusSplit> {
    let (tr, va, te) = ratios;
    if tr <= 0.0 || va <= 0.0 || te <= 0.0 || ((tr + va + te) - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "split ratios must be positive and sum to 1, got {ratios:?}"
        )));
    }
    if records.len() < 10 {
        return Err(Error::invalid(format!(
            "cannot split {} records (need at least 10)",
            records.len()
        )));
    }
    let n = records.len();
    let mut rng = crate::seeded_rng(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let n_train = (n as f64 * tr).round() as usize;
    let n_val = ((n as f64 * va).round() as usize).min(n - n_train);
    let mut parts = [
        idx[..n_train].to_vec(),
        idx[n_train..n_train + n_val].to_vec(),
        idx[n_train + n_val..].to_vec(),
    ];
    for p in &mut parts {
        p.sort_unstable();
    }
    let mut order: Vec<usize> = (0..n_train).collect();
    order.shuffle(&mut rng);
    let mut folds = vec![Fold::B; n_train];
    for &i in &order[..n_train.div_ceil(2)] {
        folds[i] = Fold::A;
    }
    let take = |ix: &[usize]| ix.iter().map(|&i| records[i].clone()).collect::<Vec<_>>();
    Ok(CorpusSplit {
        train: take(&parts[0]),
        validation: take(&parts[1]),
        test: take(&parts[2]),
        folds,
    })
}
