use std::collections::HashMap;

use rand::Rng as _;

use super::*;
use crate::cache::{retrieve_history, CacheStore, EntityKind, StackedHistory};
use crate::corpus::ReviewRecord;
use crate::encoder::EncodedReview;
use crate::nn::{dropout_mask, grad_check, Parameterized, Tensor2D};
use crate::{seeded_rng, Error, Rng};

fn random_tensor(rows: usize, cols: usize, scale: f64, rng: &mut Rng) -> Tensor2D<f64> {
    Tensor2D::filled_with(rows, cols, || rng.gen_range(-scale..scale))
}

fn random_block(d: usize, rng: &mut Rng) -> AttnBlock<f64> {
    AttnBlock {
        wq: random_tensor(d, d, 0.8, rng),
        wk: random_tensor(d, d, 0.8, rng),
        wv: random_tensor(d, d, 0.8, rng),
        gate: Tensor2D::from_vec(1, 1, vec![rng.gen_range(0.5..1.5)]).unwrap(),
    }
}

fn history(rows: &[Vec<f32>], k_max: usize, d: usize) -> StackedHistory<f64> {
    let refs: Vec<&[f32]> = rows.iter().map(Vec::as_slice).collect();
    StackedHistory::from_rows(&refs, k_max, d).unwrap()
}

#[test]
fn contrastive_cases() {
    let v = [0.0, 0.0];
    assert_eq!(contrastive_loss(&v, &v, &[2.0, 0.0], 1.0), 0.0);
    // D+ = 0.5, D- = 0.2
    let pos = [0.5f64.sqrt(), 0.0];
    let neg = [0.0, 0.2f64.sqrt()];
    assert!((contrastive_loss(&v, &pos, &neg, 1.0) - 1.3).abs() < 1e-12);
    assert!((contrastive_loss(&[0.3f64, -1.0], &[1.0, 2.0], &[1.0, 2.0], 0.7) - 0.7).abs() < 1e-12);
}

#[test]
fn fuse_miss_returns_query() {
    let mut rng = seeded_rng(0);
    let blocks = vec![random_block(3, &mut rng)];
    let p = [0.1, 0.2, 0.3];
    assert_eq!(fuse(&p, &StackedHistory::empty(5, 3), &blocks, None).unwrap(), p.to_vec());
    let mut broken = StackedHistory::<f64>::empty(5, 3);
    broken.miss = false;
    assert!(matches!(fuse(&p, &broken, &blocks, None), Err(Error::InvalidInput(_))));
}

#[test]
fn fuse_degenerate_cases() {
    let mut rng = seeded_rng(1);
    let mut b = random_block(3, &mut rng);
    b.gate.set(0, 0, 0.0);
    let row = vec![0.5f32, -1.0, 2.0];
    let h = history(&[row.clone()], 4, 3);
    let out = fuse(&[9.0, 9.0, 9.0], &h, &[b.clone()], None).unwrap();
    let want = b.wv.vec_mul(&row.iter().map(|&x| x as f64).collect::<Vec<_>>());
    for (a, w) in out.iter().zip(want) {
        assert!((a - w).abs() < 1e-12);
    }
    let zero_block = AttnBlock::<f64> { gate: Tensor2D::from_vec(1, 1, vec![1.0]).unwrap(), ..AttnBlock::zeros(3) };
    let h = history(&[vec![0.0; 3]], 4, 3);
    let p = [0.4, -0.2, 0.9];
    assert_eq!(fuse(&p, &h, &[zero_block.clone(), zero_block], None).unwrap(), p.to_vec());
}

/// Direct single-block evaluation with explicit loops.
fn brute_block(x: &[f64], rows: &[Vec<f64>], b: &AttnBlock<f64>) -> Vec<f64> {
    let d = x.len();
    let proj = |v: &[f64], w: &Tensor2D<f64>| -> Vec<f64> { (0..d).map(|c| (0..d).map(|r| v[r] * w.get(r, c)).sum()).collect() };
    let q = proj(x, &b.wq);
    let scores: Vec<f64> = rows
        .iter()
        .map(|h| proj(h, &b.wk).iter().zip(&q).map(|(k, q)| k * q).sum::<f64>() / (d as f64).sqrt())
        .collect();
    let m = scores.iter().cloned().fold(f64::MIN, f64::max);
    let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
    let mut out: Vec<f64> = x.iter().map(|v| v * b.gate.get(0, 0)).collect();
    for (h, s) in rows.iter().zip(&scores) {
        let w = (s - m).exp() / z;
        for (o, v) in out.iter_mut().zip(proj(h, &b.wv)) {
            *o += w * v;
        }
    }
    out
}

#[test]
fn fuse_matches_brute_force() {
    let mut rng = seeded_rng(2);
    for trial in 0..20 {
        let d = 2 + trial % 5;
        let m = 1 + trial % 7;
        let b = random_block(d, &mut rng);
        let rows: Vec<Vec<f32>> = (0..m).map(|_| (0..d).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).collect();
        let rows64: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|&x| x as f64).collect()).collect();
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let got = fuse(&x, &history(&rows, m + 3, d), &[b.clone()], None).unwrap();
        for (a, w) in got.iter().zip(brute_block(&x, &rows64, &b)) {
            assert!((a - w).abs() < 1e-10);
        }
    }
}

fn world(d: usize) -> (CacheStore, Vec<ReviewRecord>) {
    let mut rng = seeded_rng(3);
    let mut store = CacheStore::new(d);
    let mut records = Vec::new();
    let mut ordinal = 0;
    for u in 0..4 {
        for i in 0..4 {
            if (u + i) % 3 == 0 {
                continue;
            }
            let rating = 1.0 + ((u * 3 + i) % 5) as f64;
            store
                .insert(&EncodedReview {
                    user_id: format!("u{u}"),
                    item_id: format!("i{i}"),
                    ordinal,
                    embedding: (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                    predicted_rating: rating,
                })
                .unwrap();
            records.push(ReviewRecord {
                user_id: format!("u{u}"),
                item_id: format!("i{i}"),
                rating,
                review_text: "x".repeat(10 + ordinal as usize * 20),
                timestamp: None,
                ordinal,
                item_text: None,
            });
            ordinal += 1;
        }
    }
    (store, records)
}

fn random_params(records: &[ReviewRecord], d: usize, layers: usize, seed: u64) -> RecModelParams<f64> {
    let mut rng = seeded_rng(seed);
    let users = IdIndex::from_ids(records.iter().map(|r| r.user_id.as_str()));
    let items = IdIndex::from_ids(records.iter().map(|r| r.item_id.as_str()));
    let mut w = RecWeights::zeros(users.table_rows(), items.table_rows(), d, layers, 5);
    w.visit_mut(&mut |_, t| {
        for x in t.data_mut() {
            *x = rng.gen_range(-0.7..0.7);
        }
    });
    RecModelParams { users, items, weights: w, margin: 1.0, dropout: 0.3 }
}

#[test]
fn zero_network_predicts_bias() {
    let (store, records) = world(3);
    let users = IdIndex::from_ids(records.iter().map(|r| r.user_id.as_str()));
    let items = IdIndex::from_ids(records.iter().map(|r| r.item_id.as_str()));
    let mut weights = RecWeights::zeros(users.table_rows(), items.table_rows(), 3, 2, 4);
    weights.proj_out.bias.set(0, 0, 3.3);
    let p = RecModelParams { users, items, weights, margin: 1.0, dropout: 0.0 };
    for r in &records {
        assert_eq!(p.predict(&r.user_id, &r.item_id, &store, 5).unwrap(), 3.3);
    }
    assert_eq!(p.predict("stranger", "unknown", &store, 5).unwrap(), 3.3);
}

#[test]
fn prediction_is_deterministic_and_clamped() {
    let (store, records) = world(4);
    let p = random_params(&records, 4, 2, 4);
    let a = p.predict("u1", "i2", &store, 6).unwrap();
    assert_eq!(a, p.predict("u1", "i2", &store, 6).unwrap());
    let mut big = p.clone();
    big.weights.proj_out.bias.set(0, 0, 100.0);
    assert_eq!(big.predict("u1", "i2", &store, 6).unwrap(), 5.0);
}

#[test]
fn padding_length_is_irrelevant() {
    let (store, records) = world(4);
    let p = random_params(&records, 4, 3, 5);
    for r in &records {
        let h10: StackedHistory<f64> = retrieve_history(&store, EntityKind::User, &r.user_id, 10, None).unwrap();
        let h20: StackedHistory<f64> = retrieve_history(&store, EntityKind::User, &r.user_id, 20, None).unwrap();
        let i10: StackedHistory<f64> = retrieve_history(&store, EntityKind::Item, &r.item_id, 10, None).unwrap();
        let i20: StackedHistory<f64> = retrieve_history(&store, EntityKind::Item, &r.item_id, 20, None).unwrap();
        let a = p.predict_with_histories(&r.user_id, &r.item_id, &h10, &i10).unwrap();
        let b = p.predict_with_histories(&r.user_id, &r.item_id, &h20, &i20).unwrap();
        assert!((a - b).abs() <= 1e-10);
    }
}

fn micro_batch(
    p: &RecModelParams<f64>,
    store: &CacheStore,
    records: &[ReviewRecord],
) -> Vec<Interaction<f64>> {
    records[..4]
        .iter()
        .map(|r| Interaction::build(p, store, &r.user_id, &r.item_id, r.rating, 5, true).unwrap())
        .collect()
}

fn check_loss_gradient(contrastive_weight: f64, dropout: bool) -> f64 {
    let d = 4;
    let (store, records) = world(d);
    let p = random_params(&records, d, 2, 6);
    let xs = micro_batch(&p, &store, &records);
    let batch: Vec<&Interaction<f64>> = xs.iter().collect();
    let mut plan = BatchPlan::deterministic(4, vec![Some(1), Some(2), Some(3), Some(0)]);
    plan.neg_user = vec![Some(2), Some(0), Some(1), Some(1)];
    plan.cold_item[3] = true;
    if dropout {
        let mut rng = seeded_rng(7);
        for k in 0..4 {
            plan.user_masks[k] = (0..2).map(|_| dropout_mask(d, 0.3, &mut rng)).collect();
            plan.item_masks[k] = (0..2).map(|_| dropout_mask(d, 0.3, &mut rng)).collect();
        }
        plan.proj_masks = (0..4).map(|_| dropout_mask(5, 0.3, &mut rng)).collect();
    }
    let (loss, grads) = loss_and_grad(&p, &batch, &plan, contrastive_weight).unwrap();
    if contrastive_weight > 0.0 {
        assert!(loss.contrastive > 0.0, "hinge should be active in the fixture");
    }
    grad_check(
        |theta| {
            let mut q = p.clone();
            q.unflatten(theta).unwrap();
            loss_and_grad(&q, &batch, &plan, contrastive_weight).unwrap().0.total
        },
        &p.flatten(),
        &grads.flatten(),
    )
}

#[test]
fn full_loss_gradient() {
    assert!(check_loss_gradient(1.0, true) < 1e-4);
    assert!(check_loss_gradient(1.0, false) < 1e-4);
}

#[test]
fn mse_only_gradient() {
    assert!(check_loss_gradient(0.0, true) < 1e-4);
}

#[test]
fn zero_contrastive_weight_is_pure_mse() {
    let (store, records) = world(4);
    let p = random_params(&records, 4, 2, 8);
    let xs = micro_batch(&p, &store, &records);
    let batch: Vec<&Interaction<f64>> = xs.iter().collect();
    let plan = BatchPlan::deterministic(4, vec![Some(1), Some(0), Some(3), Some(2)]);
    let (loss, _) = loss_and_grad(&p, &batch, &plan, 0.0).unwrap();
    assert_eq!(loss.total, loss.mse);
}

#[test]
fn batch_of_one_is_rejected() {
    let (store, records) = world(4);
    let cfg = RecsysConfig { batch_size: 1, ..RecsysConfig::default() };
    assert!(train_recsys::<f64>(&records, &[], &store, &cfg).is_err());
    let p = random_params(&records, 4, 1, 9);
    let xs = micro_batch(&p, &store, &records);
    assert!(BatchPlan::draw(&[&xs[0]], &p.weights, 0.0, 0.0, false, &mut seeded_rng(0)).is_err());
}

#[test]
fn accidental_positive_rejection() {
    let (store, records) = world(4);
    let p = random_params(&records, 4, 1, 10);
    let xs = micro_batch(&p, &store, &records);
    let batch: Vec<&Interaction<f64>> = xs.iter().collect();
    let mut rng = seeded_rng(11);
    for _ in 0..50 {
        let plan = BatchPlan::draw(&batch, &p.weights, 0.0, 0.0, true, &mut rng).unwrap();
        for k in 0..4 {
            if let Some(j) = plan.neg_item[k] {
                assert!(j != k && batch[j].item_row != batch[k].item_row);
            }
            if let Some(j) = plan.neg_user[k] {
                assert!(j != k && batch[j].user_row != batch[k].user_row);
            }
        }
    }
}

#[test]
fn training_is_deterministic_and_learns() {
    let (store, records) = world(4);
    let cfg = RecsysConfig {
        layers: 2,
        learning_rate: 0.01,
        batch_size: 4,
        epochs: 30,
        dropout: 0.0,
        hidden: 8,
        k_max: 5,
        ..RecsysConfig::default()
    };
    let (a, trace_a) = train_recsys::<f64>(&records, &records, &store, &cfg).unwrap();
    let (b, trace_b) = train_recsys::<f64>(&records, &records, &store, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(trace_a, trace_b);
    let first = trace_a.epochs[0].train_mse;
    let last = trace_a.epochs.last().unwrap().train_mse;
    assert!(last < first * 0.5, "{first} -> {last}");
}

#[test]
fn metric_cases() {
    let m = metrics(&[1.0, 2.0], &[2.0, 4.0]).unwrap();
    assert_eq!((m.mse, m.mae, m.count), (2.5, 1.5, 2));
    assert_eq!(metrics(&[3.0, 4.0], &[3.0, 4.0]).unwrap().mse, 0.0);
    assert!(metrics(&[], &[]).is_err());
    let t = [1.0, 5.0, 4.0, 2.0];
    let mean = 3.0;
    let var = t.iter().map(|x: &f64| (x - mean).powi(2)).sum::<f64>() / 4.0;
    assert_eq!(metrics(&[mean; 4], &t).unwrap().mse, var);
}

#[test]
fn engagement_buckets() {
    let (_, records) = world(2);
    let preds: Vec<Prediction> = records
        .iter()
        .enumerate()
        .map(|(k, r)| Prediction { user_id: r.user_id.clone(), item_id: r.item_id.clone(), truth: r.rating, prediction: k as f64 * 0.3 })
        .collect();
    let all = metrics(&preds.iter().map(|p| p.prediction).collect::<Vec<_>>(), &preds.iter().map(|p| p.truth).collect::<Vec<_>>()).unwrap();
    let counts: HashMap<String, usize> = records.iter().map(|r| (r.user_id.clone(), 12)).collect();
    let rep = analyze_by_engagement(&records, &preds, &counts, &ENGAGEMENT_EDGES, &LENGTH_EDGES).unwrap();
    assert_eq!(rep.length_edges, vec![127, 255, 511, 1024]);
    let labels: Vec<&str> = rep.by_engagement.iter().map(|b| b.label.as_str()).collect();
    assert_eq!(labels, ["<10", "10-20", "20-30", ">=30"]);
    assert_eq!(rep.by_engagement[1].mse, Some(all.mse));
    assert_eq!(rep.by_engagement.iter().map(|b| b.users).sum::<usize>(), 4);
    assert_eq!(rep.by_review_length.iter().map(|b| b.interactions).sum::<usize>(), records.len());
    let labels: Vec<&str> = rep.by_review_length.iter().map(|b| b.label.as_str()).collect();
    assert_eq!(labels, ["0-127", "128-255", "256-511", "512-1024", ">1024"]);
    assert!(analyze_by_engagement(&records, &preds, &counts, &[20, 10], &LENGTH_EDGES).is_err());
}
