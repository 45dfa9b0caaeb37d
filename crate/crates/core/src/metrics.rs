//! Ranking metrics over binary gains.
//!
//! `order` lists track indices from first to last shown; `gains[i]` belongs to
//! track `i`. Discounts are `1 / log2(position + 1)` with 1-based positions.

use serde::{Deserialize, Serialize};

use crate::data::{Objective, ObjectiveMatrix, NUM_OBJECTIVES};

fn discount(position: usize) -> f64 {
    1.0 / ((position + 1) as f64).log2()
}

fn dcg(gains: impl Iterator<Item = f64>, k: usize) -> f64 {
    gains.take(k).enumerate().map(|(i, g)| g * discount(i + 1)).sum()
}

/// NDCG@k. A session whose gains are all zero scores 1.
pub fn ndcg_at_k(order: &[usize], gains: &[f64], k: usize) -> f64 {
    let mut ideal: Vec<f64> = gains.to_vec();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg = dcg(ideal.into_iter(), k);
    if idcg == 0.0 {
        return 1.0;
    }
    dcg(order.iter().map(|&i| gains[i]), k) / idcg
}

/// Average precision at k, normalised by `min(k, relevant)`; 0 with nothing relevant.
pub fn map_at_k(order: &[usize], gains: &[f64], k: usize) -> f64 {
    let relevant = gains.iter().filter(|&&g| g > 0.0).count();
    if relevant == 0 || k == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut total = 0.0;
    for (i, &t) in order.iter().take(k).enumerate() {
        if gains[t] > 0.0 {
            hits += 1;
            total += hits as f64 / (i + 1) as f64;
        }
    }
    total / k.min(relevant) as f64
}

/// Objective tracks surfaced in the top k (`all`) and how many were streamed (`good`).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoodAll {
    pub all: u32,
    pub good: u32,
}

pub fn good_all(order: &[usize], e: &ObjectiveMatrix, sat: &[u8], k: usize) -> [GoodAll; NUM_OBJECTIVES] {
    let mut out = [GoodAll::default(); NUM_OBJECTIVES];
    for &t in order.iter().take(k) {
        for o in Objective::ALL {
            if e.get(t, o) {
                out[o.column()].all += 1;
                out[o.column()].good += u32::from(sat[t] == 1);
            }
        }
    }
    out
}
