//! Top-K ranking evaluation: Recall@K and NDCG@K under train-item masking.
//!
//! [`evaluate`] is the fast path (heap-based partial selection);
//! [`oracle_evaluate`] re-derives every number by full materialization,
//! full sorting, and independently written metric formulas. The two must
//! agree to 1e−12 and the oracle exists purely to keep the fast path
//! honest.

use crate::data::InteractionDataset;
use crate::{Error, Result};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};

/// Which interactions count as relevant, and what gets masked.
///
/// Val masks train; test masks train ∪ val; train masks nothing (used for
/// memorization diagnostics).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

/// Averaged ranking metrics for one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub split: Split,
    pub seed: u64,
    #[serde(rename = "users")]
    pub num_evaluated_users: usize,
    pub excluded_users: usize,
    /// Keys like `recall@20`, `ndcg@20`; absent when no user was evaluated.
    pub metrics: BTreeMap<String, f64>,
}

impl MetricsReport {
    pub fn get(&self, metric: &str) -> Option<f64> {
        self.metrics.get(metric).copied()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// Top-K unmasked item ids by descending score, ties broken by ascending id.
pub fn rank_items(scores: &[f64], mask: &HashSet<usize>, k: usize) -> Result<Vec<usize>> {
    let unmasked = scores.len() - mask.len();
    if k > unmasked {
        return Err(Error::ContractViolation(format!(
            "rank_items: K = {k} exceeds {unmasked} unmasked items"
        )));
    }
    // Min-heap of the current top K; comparator mirrors the final order.
    use std::cmp::Ordering;
    use std::collections::BinaryHeap;

    #[derive(PartialEq)]
    struct Entry {
        score: f64,
        id: usize,
    }
    impl Eq for Entry {}
    impl Ord for Entry {
        fn cmp(&self, other: &Self) -> Ordering {
            // The max-heap root must be the weakest entry: lower score is
            // "greater", ties resolved so the higher id is "greater".
            other
                .score
                .partial_cmp(&self.score)
                .expect("scores must not be NaN")
                .then(self.id.cmp(&other.id))
        }
    }
    impl PartialOrd for Entry {
        fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
            Some(self.cmp(other))
        }
    }

    let mut heap: BinaryHeap<Entry> = BinaryHeap::with_capacity(k + 1);
    for (id, &score) in scores.iter().enumerate() {
        if mask.contains(&id) {
            continue;
        }
        heap.push(Entry { score, id });
        if heap.len() > k {
            heap.pop();
        }
    }
    let mut top: Vec<Entry> = heap.into_vec();
    top.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("scores must not be NaN")
            .then(a.id.cmp(&b.id))
    });
    Ok(top.into_iter().map(|e| e.id).collect())
}

/// |topk ∩ relevant| / |relevant|.
pub fn recall_at_k(topk: &[usize], relevant: &HashSet<usize>) -> Result<f64> {
    if relevant.is_empty() {
        return Err(Error::ContractViolation(
            "recall_at_k: empty relevant set".into(),
        ));
    }
    let hits = topk.iter().filter(|id| relevant.contains(id)).count();
    Ok(hits as f64 / relevant.len() as f64)
}

/// Binary-relevance NDCG with `1/log₂(rank+1)` gains.
pub fn ndcg_at_k(topk: &[usize], relevant: &HashSet<usize>, k: usize) -> Result<f64> {
    if relevant.is_empty() {
        return Err(Error::ContractViolation(
            "ndcg_at_k: empty relevant set".into(),
        ));
    }
    let dcg: f64 = topk
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, id)| relevant.contains(id))
        .map(|(pos, _)| 1.0 / ((pos + 2) as f64).log2())
        .sum();
    let ideal_hits = k.min(relevant.len());
    let idcg: f64 = (0..ideal_hits).map(|r| 1.0 / ((r + 2) as f64).log2()).sum();
    Ok(dcg / idcg)
}

fn relevant_by_user(ds: &InteractionDataset, split: Split) -> Vec<HashSet<usize>> {
    let pairs = match split {
        Split::Train => &ds.train,
        Split::Val => &ds.val,
        Split::Test => &ds.test,
    };
    let mut rel = vec![HashSet::new(); ds.num_users];
    for &(u, i) in pairs {
        rel[u].insert(i);
    }
    rel
}

fn mask_by_user(ds: &InteractionDataset, split: Split) -> Vec<HashSet<usize>> {
    let mut mask = vec![HashSet::new(); ds.num_users];
    match split {
        Split::Train => {}
        Split::Val => {
            for &(u, i) in &ds.train {
                mask[u].insert(i);
            }
        }
        Split::Test => {
            for &(u, i) in ds.train.iter().chain(&ds.val) {
                mask[u].insert(i);
            }
        }
    }
    mask
}

fn check_embedding_shapes(e_u: &Array2<f64>, e_i: &Array2<f64>, ds: &InteractionDataset) -> Result<()> {
    if e_u.nrows() != ds.num_users || e_i.nrows() != ds.num_items || e_u.ncols() != e_i.ncols() {
        return Err(Error::ShapeMismatch {
            op: "evaluate",
            expected: format!("{}x d and {}x d", ds.num_users, ds.num_items),
            got: format!(
                "{}x{} and {}x{}",
                e_u.nrows(),
                e_u.ncols(),
                e_i.nrows(),
                e_i.ncols()
            ),
        });
    }
    Ok(())
}

/// Masked full-ranking evaluation averaged over users with at least one
/// relevant item in the split.
pub fn evaluate(
    e_u: &Array2<f64>,
    e_i: &Array2<f64>,
    ds: &InteractionDataset,
    split: Split,
    ks: &[usize],
    seed: u64,
) -> Result<MetricsReport> {
    check_embedding_shapes(e_u, e_i, ds)?;
    let relevant = relevant_by_user(ds, split);
    let masks = mask_by_user(ds, split);
    let max_k = ks.iter().copied().max().unwrap_or(0);

    let mut sums: BTreeMap<String, f64> = BTreeMap::new();
    let mut evaluated = 0usize;
    let mut excluded = 0usize;
    for u in 0..ds.num_users {
        if relevant[u].is_empty() {
            excluded += 1;
            continue;
        }
        let scores: Vec<f64> = e_i.dot(&e_u.row(u)).to_vec();
        let topk = rank_items(&scores, &masks[u], max_k)?;
        for &k in ks {
            let r = recall_at_k(&topk[..k], &relevant[u])?;
            let n = ndcg_at_k(&topk, &relevant[u], k)?;
            *sums.entry(format!("recall@{k}")).or_insert(0.0) += r;
            *sums.entry(format!("ndcg@{k}")).or_insert(0.0) += n;
        }
        evaluated += 1;
    }

    let metrics = if evaluated > 0 {
        sums.into_iter()
            .map(|(k, v)| (k, v / evaluated as f64))
            .collect()
    } else {
        BTreeMap::new()
    };
    Ok(MetricsReport {
        split,
        seed,
        num_evaluated_users: evaluated,
        excluded_users: excluded,
        metrics,
    })
}

/// Brute-force verification path: full score materialization, full sort,
/// and metric formulas written independently of the fast path.
pub fn oracle_evaluate(
    e_u: &Array2<f64>,
    e_i: &Array2<f64>,
    ds: &InteractionDataset,
    split: Split,
    ks: &[usize],
    seed: u64,
) -> Result<MetricsReport> {
    check_embedding_shapes(e_u, e_i, ds)?;
    let relevant = relevant_by_user(ds, split);
    let masks = mask_by_user(ds, split);

    let mut sums: BTreeMap<String, f64> = BTreeMap::new();
    let mut evaluated = 0usize;
    let mut excluded = 0usize;
    for u in 0..ds.num_users {
        if relevant[u].is_empty() {
            excluded += 1;
            continue;
        }
        // Dot products spelled out longhand.
        let mut scored: Vec<(usize, f64)> = Vec::new();
        for i in 0..ds.num_items {
            if masks[u].contains(&i) {
                continue;
            }
            let mut s = 0.0;
            for t in 0..e_u.ncols() {
                s += e_u[(u, t)] * e_i[(i, t)];
            }
            scored.push((i, s));
        }
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));

        for &k in ks {
            if k > scored.len() {
                return Err(Error::ContractViolation(format!(
                    "oracle_evaluate: K = {k} exceeds {} unmasked items",
                    scored.len()
                )));
            }
            let mut hits = 0usize;
            let mut dcg = 0.0;
            for (rank, &(id, _)) in scored.iter().take(k).enumerate() {
                if relevant[u].contains(&id) {
                    hits += 1;
                    dcg += 1.0 / ((rank as f64) + 2.0).log2();
                }
            }
            let recall = hits as f64 / relevant[u].len() as f64;
            let mut idcg = 0.0;
            for rank in 0..k.min(relevant[u].len()) {
                idcg += 1.0 / ((rank as f64) + 2.0).log2();
            }
            *sums.entry(format!("recall@{k}")).or_insert(0.0) += recall;
            *sums.entry(format!("ndcg@{k}")).or_insert(0.0) += dcg / idcg;
        }
        evaluated += 1;
    }

    let metrics = if evaluated > 0 {
        sums.into_iter()
            .map(|(k, v)| (k, v / evaluated as f64))
            .collect()
    } else {
        BTreeMap::new()
    };
    Ok(MetricsReport {
        split,
        seed,
        num_evaluated_users: evaluated,
        excluded_users: excluded,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::InteractionDataset;

    fn hs(ids: &[usize]) -> HashSet<usize> {
        ids.iter().copied().collect()
    }

    #[test]
    fn mask_removes_top_item() {
        let top = rank_items(&[0.9, 0.8, 0.7], &hs(&[0]), 2).unwrap();
        assert_eq!(top, vec![1, 2]);
    }

    #[test]
    fn equal_scores_tie_break_by_id() {
        let top = rank_items(&[0.5, 0.5, 0.5], &HashSet::new(), 2).unwrap();
        assert_eq!(top, vec![0, 1]);
    }

    #[test]
    fn rank_matches_full_sort_oracle() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let scores: Vec<f64> = (0..1000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let top = rank_items(&scores, &HashSet::new(), 25).unwrap();
        let mut sorted: Vec<(usize, f64)> = scores.iter().copied().enumerate().collect();
        sorted.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let expected: Vec<usize> = sorted.iter().take(25).map(|&(i, _)| i).collect();
        assert_eq!(top, expected);
    }

    #[test]
    fn k_too_large_is_contract_violation() {
        assert!(rank_items(&[1.0, 2.0], &hs(&[0]), 2).is_err());
    }

    #[test]
    fn recall_definition() {
        assert_eq!(recall_at_k(&[1, 5, 9], &hs(&[1, 2, 3])).unwrap(), 1.0 / 3.0);
        assert_eq!(recall_at_k(&[1, 2, 3], &hs(&[1, 2])).unwrap(), 1.0);
        assert_eq!(recall_at_k(&[7, 8], &hs(&[1])).unwrap(), 0.0);
    }

    #[test]
    fn ndcg_hand_cases() {
        // Single relevant item at rank 1.
        assert!((ndcg_at_k(&[3, 4], &hs(&[3]), 2).unwrap() - 1.0).abs() < 1e-12);
        // Single relevant item at rank 2, K = 2 → 1/log₂3.
        let v = ndcg_at_k(&[4, 3], &hs(&[3]), 2).unwrap();
        assert!((v - 0.630930).abs() < 1e-6, "got {v}");
        // No hits.
        assert_eq!(ndcg_at_k(&[4, 5], &hs(&[3]), 2).unwrap(), 0.0);
    }

    fn random_instance(
        seed: u64,
        max_users: usize,
        max_items: usize,
    ) -> (Array2<f64>, Array2<f64>, InteractionDataset) {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let users = rng.random_range(3..=max_users);
        let items = rng.random_range(16..=max_items.max(17));
        let d = rng.random_range(2..6);
        let mut train = Vec::new();
        let mut val = Vec::new();
        let mut test = Vec::new();
        for u in 0..users {
            let mut pool: Vec<usize> = (0..items).collect();
            use rand::seq::SliceRandom;
            pool.shuffle(&mut rng);
            let n = rng.random_range(1..8);
            for (k, &i) in pool.iter().take(n + 2).enumerate() {
                if k < n {
                    train.push((u, i));
                } else if k == n && rng.random::<f64>() < 0.8 {
                    val.push((u, i));
                } else if rng.random::<f64>() < 0.8 {
                    test.push((u, i));
                }
            }
        }
        let ds = InteractionDataset::from_splits(users, items, train, val, test, seed);
        let e_u = Array2::from_shape_fn((users, d), |_| rng.random_range(-1.0..1.0));
        let e_i = Array2::from_shape_fn((items, d), |_| rng.random_range(-1.0..1.0));
        (e_u, e_i, ds)
    }

    #[test]
    fn evaluate_matches_oracle_on_random_instances() {
        for seed in 0..40 {
            let (e_u, e_i, ds) = random_instance(seed, 30, 40);
            let ks = [3, 5];
            let fast = evaluate(&e_u, &e_i, &ds, Split::Test, &ks, seed).unwrap();
            let slow = oracle_evaluate(&e_u, &e_i, &ds, Split::Test, &ks, seed).unwrap();
            assert_eq!(fast.num_evaluated_users, slow.num_evaluated_users);
            for (k, v) in &fast.metrics {
                let o = slow.metrics[k];
                assert!((v - o).abs() < 1e-12, "{k}: {v} vs {o} (seed {seed})");
            }
        }
    }

    #[test]
    fn perfect_model_scores_one() {
        // Embeddings that score each user's test items strictly highest.
        let users = 4;
        let items = 6;
        let mut test = Vec::new();
        let mut e_u = Array2::zeros((users, items));
        let e_i = Array2::eye(items);
        for u in 0..users {
            let i = u + 2;
            test.push((u, i));
            e_u[(u, i)] = 1.0;
        }
        let ds = InteractionDataset::from_splits(users, items, vec![(0, 0), (1, 0), (2, 0), (3, 0)], vec![], test, 0);
        let report = evaluate(&e_u, &e_i, &ds, Split::Test, &[2, 4], 0).unwrap();
        for (_, v) in &report.metrics {
            assert_eq!(*v, 1.0);
        }
    }

    #[test]
    fn metrics_non_decreasing_in_k() {
        for seed in 50..60 {
            let (e_u, e_i, ds) = random_instance(seed, 20, 30);
            let report = evaluate(&e_u, &e_i, &ds, Split::Test, &[2, 4, 6], seed).unwrap();
            if report.num_evaluated_users == 0 {
                continue;
            }
            assert!(report.get("recall@2") <= report.get("recall@4"));
            assert!(report.get("recall@4") <= report.get("recall@6"));
            assert!(report.get("ndcg@2") <= report.get("ndcg@4"));
            assert!(report.get("ndcg@4") <= report.get("ndcg@6"));
        }
    }

    #[test]
    fn empty_split_reports_no_averages() {
        let ds = InteractionDataset::from_splits(2, 4, vec![(0, 0), (1, 1)], vec![], vec![], 0);
        let e_u = Array2::zeros((2, 3));
        let e_i = Array2::zeros((4, 3));
        let report = evaluate(&e_u, &e_i, &ds, Split::Test, &[2], 0).unwrap();
        assert_eq!(report.num_evaluated_users, 0);
        assert!(report.metrics.is_empty());
    }

    #[test]
    fn evaluation_is_deterministic() {
        let (e_u, e_i, ds) = random_instance(99, 25, 30);
        let a = evaluate(&e_u, &e_i, &ds, Split::Test, &[3], 99).unwrap();
        let b = evaluate(&e_u, &e_i, &ds, Split::Test, &[3], 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn item_relabeling_leaves_metrics_unchanged() {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let (e_u, e_i, ds) = random_instance(7, 20, 25);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut perm: Vec<usize> = (0..ds.num_items).collect();
        perm.shuffle(&mut rng);

        let mut e_i_p = Array2::zeros(e_i.dim());
        for i in 0..ds.num_items {
            e_i_p.row_mut(perm[i]).assign(&e_i.row(i));
        }
        let relabel = |pairs: &Vec<(usize, usize)>| -> Vec<(usize, usize)> {
            pairs.iter().map(|&(u, i)| (u, perm[i])).collect()
        };
        let ds_p = InteractionDataset::from_splits(
            ds.num_users,
            ds.num_items,
            relabel(&ds.train),
            relabel(&ds.val),
            relabel(&ds.test),
            ds.split_seed,
        );
        let a = evaluate(&e_u, &e_i, &ds, Split::Test, &[4], 0).unwrap();
        let b = evaluate(&e_u, &e_i_p, &ds_p, Split::Test, &[4], 0).unwrap();
        for (k, v) in &a.metrics {
            assert!((v - b.metrics[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn report_serializes_with_expected_keys() {
        let ds = InteractionDataset::from_splits(1, 3, vec![(0, 0)], vec![], vec![(0, 1)], 3);
        let e_u = Array2::ones((1, 2));
        let e_i = Array2::ones((3, 2));
        let report = evaluate(&e_u, &e_i, &ds, Split::Test, &[1], 3).unwrap();
        let json = report.to_json();
        assert!(json.contains("\"split\":\"test\""), "{json}");
        assert!(json.contains("\"seed\":3"), "{json}");
        assert!(json.contains("\"users\":1"), "{json}");
        assert!(json.contains("recall@1"), "{json}");
        let back: MetricsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }
}
