//! Deterministic synthetic dataset generators for benchmarks and tests.

use crate::data::{InteractionDataset, RawInteractions};
use rand::Rng;
use rand::SeedableRng;
use std::collections::HashSet;

/// Heterophilic benchmark: items fall into contiguous categories and every
/// user draws from at least two preferred categories, with a little uniform
/// noise. Users group dissimilar items under one hyperedge, which is the
/// structure the dual-channel model is built to exploit.
pub fn heterophilic_benchmark(
    num_users: usize,
    num_items: usize,
    num_categories: usize,
    seed: u64,
) -> RawInteractions {
    assert!(num_categories >= 2 && num_items >= num_categories);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let per_category = num_items / num_categories;
    let category_items = |c: usize| -> (usize, usize) {
        let start = c * per_category;
        let end = if c + 1 == num_categories {
            num_items
        } else {
            start + per_category
        };
        (start, end)
    };

    let mut pairs = Vec::new();
    for u in 0..num_users {
        // Two or three preferred categories per user.
        let mut cats: Vec<usize> = (0..num_categories).collect();
        use rand::seq::SliceRandom;
        cats.shuffle(&mut rng);
        let num_prefs = if rng.random::<f64>() < 0.5 { 2 } else { 3 };
        let prefs = &cats[..num_prefs.min(num_categories)];

        let n = rng.random_range(16..28);
        let mut chosen: HashSet<usize> = HashSet::new();
        let mut guard = 0;
        while chosen.len() < n && guard < 10 * n + 100 {
            guard += 1;
            let item = if rng.random::<f64>() < 0.9 {
                let c = prefs[rng.random_range(0..prefs.len())];
                let (lo, hi) = category_items(c);
                rng.random_range(lo..hi)
            } else {
                rng.random_range(0..num_items)
            };
            chosen.insert(item);
        }
        let mut items: Vec<usize> = chosen.into_iter().collect();
        items.sort_unstable();
        for i in items {
            pairs.push((format!("u{u}"), format!("i{i}")));
        }
    }
    RawInteractions {
        pairs,
        source_path: format!("synthetic:heterophilic:{seed}"),
    }
}

/// Tiny planted-interaction dataset for memorization checks: every user
/// gets `per_user` distinct random items, all in train; val and test stay
/// empty so the train split itself is the evaluation target.
pub fn memorization_toy(
    num_users: usize,
    num_items: usize,
    per_user: usize,
    seed: u64,
) -> InteractionDataset {
    assert!(per_user <= num_items);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    for u in 0..num_users {
        let mut pool: Vec<usize> = (0..num_items).collect();
        use rand::seq::SliceRandom;
        pool.shuffle(&mut rng);
        for &i in pool.iter().take(per_user) {
            train.push((u, i));
        }
    }
    InteractionDataset::from_splits(num_users, num_items, train, vec![], vec![], seed)
}

/// Raw pairs with exact user/item/interaction counts (every user and item
/// appears at least once). Used to reproduce published statistics rows.
pub fn with_exact_counts(
    num_users: usize,
    num_items: usize,
    num_interactions: usize,
    seed: u64,
) -> RawInteractions {
    assert!(num_interactions >= num_users.max(num_items));
    assert!(num_interactions <= num_users * num_items);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut seen: HashSet<(usize, usize)> = HashSet::new();
    let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(num_interactions);
    let push = |p: (usize, usize), seen: &mut HashSet<(usize, usize)>, pairs: &mut Vec<(usize, usize)>| {
        if seen.insert(p) {
            pairs.push(p);
        }
    };
    for u in 0..num_users {
        push((u, u % num_items), &mut seen, &mut pairs);
    }
    for i in 0..num_items {
        push((i % num_users, i), &mut seen, &mut pairs);
    }
    while pairs.len() < num_interactions {
        let p = (
            rng.random_range(0..num_users),
            rng.random_range(0..num_items),
        );
        push(p, &mut seen, &mut pairs);
    }
    RawInteractions {
        pairs: pairs
            .into_iter()
            .map(|(u, i)| (format!("u{u}"), format!("i{i}")))
            .collect(),
        source_path: format!("synthetic:counts:{seed}"),
    }
}
