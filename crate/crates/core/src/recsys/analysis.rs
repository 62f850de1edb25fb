use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::ReviewRecord;
use crate::{Error, Result};

/// User interaction-count bucket edges: `<10, [10,20), [20,30), ≥30`.
pub const ENGAGEMENT_EDGES: [usize; 3] = [10, 20, 30];
/// Review-length bucket upper bounds (characters, inclusive), plus an overflow bucket.
pub const LENGTH_EDGES: [usize; 4] = [127, 255, 511, 1024];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
    pub count: usize,
}

pub fn metrics(predictions: &[f64], targets: &[f64]) -> Result<Metrics> {
    if predictions.is_empty() || predictions.len() != targets.len() {
        return Err(Error::invalid(format!(
            "metrics need equal non-empty inputs, got {} and {}",
            predictions.len(),
            targets.len()
        )));
    }
    let n = predictions.len() as f64;
    let (mut se, mut ae) = (0.0, 0.0);
    for (p, t) in predictions.iter().zip(targets) {
        se += (p - t) * (p - t);
        ae += (p - t).abs();
    }
    Ok(Metrics { mse: se / n, mae: ae / n, count: predictions.len() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub user_id: String,
    pub item_id: String,
    pub truth: f64,
    pub prediction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketMetrics {
    pub label: String,
    pub interactions: usize,
    pub users: usize,
    pub mse: Option<f64>,
    pub mae: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngagementReport {
    pub engagement_edges: Vec<usize>,
    pub length_edges: Vec<usize>,
    pub by_engagement: Vec<BucketMetrics>,
    pub by_review_length: Vec<BucketMetrics>,
}

/// Groups `(key, user, prediction, truth)` rows into `labels.len()` buckets.
pub fn bucket_metrics(labels: &[String], rows: &[(usize, &str, f64, f64)]) -> Vec<BucketMetrics> {
    labels
        .iter()
        .enumerate()
        .map(|(b, label)| {
            let inside: Vec<_> = rows.iter().filter(|r| r.0 == b).collect();
            let users: BTreeSet<&str> = inside.iter().map(|r| r.1).collect();
            let m = metrics(
                &inside.iter().map(|r| r.2).collect::<Vec<_>>(),
                &inside.iter().map(|r| r.3).collect::<Vec<_>>(),
            )
            .ok();
            BucketMetrics {
                label: label.clone(),
                interactions: inside.len(),
                users: users.len(),
                mse: m.map(|m| m.mse),
                mae: m.map(|m| m.mae),
            }
        })
        .collect()
}

fn half_open_labels(edges: &[usize]) -> Vec<String> {
    let mut labels = vec![format!("<{}", edges[0])];
    labels.extend(edges.windows(2).map(|w| format!("{}-{}", w[0], w[1])));
    labels.push(format!(">={}", edges[edges.len() - 1]));
    labels
}

fn inclusive_labels(edges: &[usize]) -> Vec<String> {
    let mut labels = Vec::new();
    let mut lo = 0;
    for &e in edges {
        labels.push(format!("{lo}-{e}"));
        lo = e + 1;
    }
    labels.push(format!(">{}", edges[edges.len() - 1]));
    labels
}

/// Per-bucket error by user engagement (`user_counts`, usually training
/// interactions per user) and by review length in characters.
pub fn analyze_by_engagement(
    records: &[ReviewRecord],
    predictions: &[Prediction],
    user_counts: &HashMap<String, usize>,
    engagement_edges: &[usize],
    length_edges: &[usize],
) -> Result<EngagementReport> {
    if records.len() != predictions.len() {
        return Err(Error::invalid("records and predictions differ in length"));
    }
    let sorted = |e: &[usize]| !e.is_empty() && e.windows(2).all(|w| w[0] < w[1]);
    if !sorted(engagement_edges) || !sorted(length_edges) {
        return Err(Error::invalid("bucket edges must be non-empty and strictly increasing"));
    }
    let mut eng_rows = Vec::with_capacity(records.len());
    let mut len_rows = Vec::with_capacity(records.len());
    for (r, p) in records.iter().zip(predictions) {
        let count = user_counts.get(&r.user_id).copied().unwrap_or(0);
        let eb = engagement_edges.iter().take_while(|&&e| count >= e).count();
        let chars = r.review_text.chars().count();
        let lb = length_edges.iter().take_while(|&&e| chars > e).count();
        eng_rows.push((eb, r.user_id.as_str(), p.prediction, p.truth));
        len_rows.push((lb, r.user_id.as_str(), p.prediction, p.truth));
    }
    Ok(EngagementReport {
        engagement_edges: engagement_edges.to_vec(),
        length_edges: length_edges.to_vec(),
        by_engagement: bucket_metrics(&half_open_labels(engagement_edges), &eng_rows),
        by_review_length: bucket_metrics(&inclusive_labels(length_edges), &len_rows),
    })
}
