//! Full-ranking evaluation with Recall@K and NDCG@K.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::Serialize;

use crate::data::InteractionDataset;
use crate::error::{Error, Result};
use crate::model::{EmbeddingLookup, ModelParameters, Table};
use crate::scalar::Scalar;

/// Top-K items for one user, nearest first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedList {
    pub user: usize,
    pub items: Vec<usize>,
}

/// Which per-user set is treated as ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalTarget {
    /// Test items; training (and optionally validation) items are excluded.
    Test { exclude_validation: bool },
    /// Validation items; training items are excluded.
    Validation,
    /// Training items, nothing excluded. Used to measure fit.
    Train,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KMetrics {
    pub k: usize,
    pub recall: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub metrics: Vec<KMetrics>,
    pub users: usize,
}

impl MetricsReport {
    pub fn at(&self, k: usize) -> Option<&KMetrics> {
        self.metrics.iter().find(|m| m.k == k)
    }

    /// `K<TAB>recall<TAB>ndcg` rows.
    pub fn to_tsv(&self) -> String {
        self.metrics
            .iter()
            .map(|m| format!("{}\t{}\t{}\n", m.k, m.recall, m.ndcg))
            .collect()
    }
}

fn contains(sorted: &[usize], item: usize) -> bool {
    sorted.binary_search(&item).is_ok()
}

/// Top-`k` items by ascending distance to the user, skipping every item in
/// the (sorted) `exclude` sets. Ties go to the smaller item id.
pub fn rank_items<T: Scalar>(
    params: &ModelParameters<T>,
    user: usize,
    exclude: &[&[usize]],
    k: usize,
) -> Result<RankedList> {
    rank_by(params, user, exclude, k, |d| d)
}

/// Like [`rank_items`], ranking by `key(distance)`.
pub fn rank_by<T: Scalar>(
    params: &ModelParameters<T>,
    user: usize,
    exclude: &[&[usize]],
    k: usize,
    key: impl Fn(T) -> T,
) -> Result<RankedList> {
    let u = params.get(Table::User, user)?;
    let mut scored: Vec<(T, usize)> = (0..params.n_items)
        .filter(|&v| !exclude.iter().any(|s| contains(s, v)))
        .map(|v| (key(crate::model::space_distance(params.space, params.curvature, u, params.entities.row(v))), v))
        .collect();
    let cmp = |a: &(T, usize), b: &(T, usize)| {
        a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1))
    };
    if k < scored.len() {
        scored.select_nth_unstable_by(k, cmp);
        scored.truncate(k);
    }
    scored.sort_by(cmp);
    Ok(RankedList {
        user,
        items: scored.into_iter().map(|(_, v)| v).collect(),
    })
}

/// `|top-K ∩ T_u| / |T_u|`; `test` must be sorted.
pub fn recall_at_k(ranked: &[usize], test: &[usize], k: usize) -> f64 {
    if test.is_empty() {
        return 0.0;
    }
    let hits = ranked.iter().take(k).filter(|&&v| contains(test, v)).count();
    hits as f64 / test.len() as f64
}

/// Binary-relevance NDCG with a `log₂(i + 1)` discount; `test` must be sorted.
pub fn ndcg_at_k(ranked: &[usize], test: &[usize], k: usize) -> f64 {
    if test.is_empty() {
        return 0.0;
    }
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, &v)| contains(test, v))
        .map(|(i, _)| 1.0 / ((i + 2) as f64).log2())
        .sum();
    let idcg: f64 = (0..k.min(test.len()))
        .map(|i| 1.0 / ((i + 2) as f64).log2())
        .sum();
    dcg / idcg
}

/// Macro-averaged metrics over users whose target set is nonempty.
pub fn evaluate<T: Scalar>(
    params: &ModelParameters<T>,
    data: &InteractionDataset,
    ks: &[usize],
    target: EvalTarget,
) -> Result<MetricsReport> {
    if params.users.rows() != data.n_users || params.n_items != data.n_items {
        return Err(Error::InvalidInput(format!(
            "model has {} users / {} items, data has {} / {}",
            params.users.rows(),
            params.n_items,
            data.n_users,
            data.n_items
        )));
    }
    if ks.is_empty() {
        return Err(Error::InvalidInput("no cutoffs requested".into()));
    }
    let max_k = *ks.iter().max().unwrap();
    let per_user: Vec<Option<Vec<(f64, f64)>>> = (0..data.n_users)
        .into_par_iter()
        .map(|u| {
            let (truth, exclude): (&[usize], Vec<&[usize]>) = match target {
                EvalTarget::Test { exclude_validation } => {
                    let mut ex = vec![data.train[u].as_slice()];
                    if exclude_validation {
                        ex.push(&data.validation[u]);
                    }
                    (&data.test[u], ex)
                }
                EvalTarget::Validation => (&data.validation[u], vec![data.train[u].as_slice()]),
                EvalTarget::Train => (&data.train[u], Vec::new()),
            };
            if truth.is_empty() {
                return Ok(None);
            }
            let ranked = rank_items(params, u, &exclude, max_k)?;
            Ok(Some(
                ks.iter()
                    .map(|&k| (recall_at_k(&ranked.items, truth, k), ndcg_at_k(&ranked.items, truth, k)))
                    .collect(),
            ))
        })
        .collect::<Result<_>>()?;
    let mut sums = vec![(0.0, 0.0); ks.len()];
    let mut users = 0usize;
    for row in per_user.into_iter().flatten() {
        users += 1;
        for (s, (r, n)) in sums.iter_mut().zip(row) {
            s.0 += r;
            s.1 += n;
        }
    }
    if users == 0 {
        return Err(Error::Degenerate("no users with a nonempty target set".into()));
    }
    Ok(MetricsReport {
        metrics: ks
            .iter()
            .zip(sums)
            .map(|(&k, (r, n))| KMetrics {
                k,
                recall: r / users as f64,
                ndcg: n / users as f64,
            })
            .collect(),
        users,
    })
}

/// Recall@K of the training items, each ranked against the user's
/// non-training items only (the test-time protocol with the item held out).
///
/// Macro-averaged over users with at least one training item. Unlike
/// `evaluate` with [`EvalTarget::Train`], this is not capped at `K/|S_u|`.
pub fn fit_recall_at_k<T: Scalar>(params: &ModelParameters<T>, data: &InteractionDataset, k: usize) -> Result<f64> {
    if params.users.rows() != data.n_users || params.n_items != data.n_items {
        return Err(Error::InvalidInput("model and data disagree on table sizes".into()));
    }
    let per_user: Vec<Option<f64>> = (0..data.n_users)
        .into_par_iter()
        .map(|u| {
            let train = &data.train[u];
            if train.is_empty() {
                return None;
            }
            let user = params.users.row(u);
            let dist = |v: usize| crate::model::space_distance(params.space, params.curvature, user, params.entities.row(v));
            let mut others: Vec<(T, usize)> = (0..params.n_items)
                .filter(|&v| !contains(train, v))
                .map(|v| (dist(v), v))
                .collect();
            let cmp = |a: &(T, usize), b: &(T, usize)| {
                a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1))
            };
            others.sort_by(cmp);
            let hits = train
                .iter()
                .filter(|&&v| {
                    let key = (dist(v), v);
                    others.partition_point(|o| cmp(o, &key) == Ordering::Less) < k
                })
                .count();
            Some(hits as f64 / train.len() as f64)
        })
        .collect();
    let scored: Vec<f64> = per_user.into_iter().flatten().collect();
    if scored.is_empty() {
        return Err(Error::Degenerate("no users with training items".into()));
    }
    Ok(scored.iter().sum::<f64>() / scored.len() as f64)
}
