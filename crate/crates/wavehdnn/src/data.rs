//! Interaction ingestion, ID remapping, deterministic splits, and dataset
//! statistics.
//!
//! Raw input is tab-separated `user_token<TAB>item_token` lines (optionally
//! gzip-compressed). Duplicate pairs collapse to their first occurrence,
//! IDs are assigned by first appearance, and each user's interactions are
//! shuffled with a per-user seeded generator before a 7:1:2 train/val/test
//! split. The split is per-user so every user stays trainable; users with
//! fewer than 3 interactions go entirely to train.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

/// Deduplicated raw token pairs in file order.
#[derive(Debug, Clone)]
pub struct RawInteractions {
    pub pairs: Vec<(String, String)>,
    pub source_path: String,
}

/// Remapped interactions with train/val/test splits.
///
/// IDs are contiguous in `[0, num_users)` / `[0, num_items)`; split lists
/// are pairwise disjoint, canonically sorted by `(user, item)`, and every
/// user appears in train at least once.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionDataset {
    pub num_users: usize,
    pub num_items: usize,
    pub train: Vec<(usize, usize)>,
    pub val: Vec<(usize, usize)>,
    pub test: Vec<(usize, usize)>,
    /// Per-user sorted train item ids.
    pub train_items_of: Vec<Vec<usize>>,
    pub split_seed: u64,
}

impl InteractionDataset {
    /// Assemble a dataset directly from split lists (test fixtures and
    /// archive loading). Lists are canonicalized; `train_items_of` is
    /// rebuilt.
    pub fn from_splits(
        num_users: usize,
        num_items: usize,
        mut train: Vec<(usize, usize)>,
        mut val: Vec<(usize, usize)>,
        mut test: Vec<(usize, usize)>,
        split_seed: u64,
    ) -> Self {
        train.sort_unstable();
        val.sort_unstable();
        test.sort_unstable();
        let mut train_items_of = vec![Vec::new(); num_users];
        for &(u, i) in &train {
            train_items_of[u].push(i);
        }
        // Already sorted by (user, item), so per-user lists are sorted.
        InteractionDataset {
            num_users,
            num_items,
            train,
            val,
            test,
            train_items_of,
            split_seed,
        }
    }

    pub fn num_interactions(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    /// Whether `(user, item)` is a train interaction.
    pub fn in_train(&self, user: usize, item: usize) -> bool {
        self.train_items_of[user].binary_search(&item).is_ok()
    }
}

/// Dataset statistics in the usual users/items/interactions/density schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub num_users: usize,
    pub num_items: usize,
    pub num_interactions: usize,
    pub density: f64,
    /// Display form with the mantissa truncated to one decimal, e.g.
    /// `1.9e-3`.
    pub density_display: String,
}

/// Load and deduplicate `user<TAB>item` lines. Files ending in `.gz` or
/// `.gzip` are transparently decompressed.
pub fn load_interactions<P: AsRef<Path>>(path: P) -> Result<RawInteractions> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let file = fs::File::open(path).map_err(|source| Error::Io {
        path: display.clone(),
        source,
    })?;
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    let reader: Box<dyn Read> = if ext == "gz" || ext == "gzip" {
        Box::new(flate2::read::GzDecoder::new(file))
    } else {
        Box::new(file)
    };
    parse_interactions(BufReader::new(reader), &display)
}

fn parse_interactions<R: BufRead>(reader: R, source_path: &str) -> Result<RawInteractions> {
    let mut pairs = Vec::new();
    let mut seen: HashMap<(String, String), ()> = HashMap::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| Error::Io {
            path: source_path.to_string(),
            source,
        })?;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.is_empty() {
            continue;
        }
        let mut fields = trimmed.split('\t');
        let user = fields.next().unwrap_or("");
        let item = fields.next().unwrap_or("");
        if user.is_empty() || item.is_empty() {
            return Err(Error::MalformedLine {
                path: source_path.to_string(),
                line: lineno + 1,
                detail: format!("expected `user<TAB>item`, got `{trimmed}`"),
            });
        }
        let key = (user.to_string(), item.to_string());
        if seen.insert(key.clone(), ()).is_none() {
            pairs.push(key);
        }
    }
    if pairs.is_empty() {
        return Err(Error::EmptyInput(source_path.to_string()));
    }
    Ok(RawInteractions {
        pairs,
        source_path: source_path.to_string(),
    })
}

/// Token vocabularies in first-appearance order (the same order
/// [`remap_and_split`] assigns ids).
pub fn token_maps(raw: &RawInteractions) -> (Vec<String>, Vec<String>) {
    let mut users = Vec::new();
    let mut items = Vec::new();
    let mut user_ids: HashMap<&str, usize> = HashMap::new();
    let mut item_ids: HashMap<&str, usize> = HashMap::new();
    for (u, i) in &raw.pairs {
        if !user_ids.contains_key(u.as_str()) {
            user_ids.insert(u, users.len());
            users.push(u.clone());
        }
        if !item_ids.contains_key(i.as_str()) {
            item_ids.insert(i, items.len());
            items.push(i.clone());
        }
    }
    (users, items)
}

use crate::derive_seed;

/// Remap tokens to dense ids and split per user at the 7:1:2 ratio.
///
/// Users with `n < 3` interactions place everything in train; otherwise
/// train takes `⌈0.7n⌉`, val takes `⌈0.1n⌉` capped at what remains, and
/// test takes the rest. A pure function of `(raw, seed)`.
pub fn remap_and_split(raw: &RawInteractions, seed: u64) -> InteractionDataset {
    assert!(!raw.pairs.is_empty(), "raw interactions must be non-empty");
    let (user_tokens, item_tokens) = token_maps(raw);
    let user_ids: HashMap<&str, usize> = user_tokens
        .iter()
        .enumerate()
        .map(|(k, t)| (t.as_str(), k))
        .collect();
    let item_ids: HashMap<&str, usize> = item_tokens
        .iter()
        .enumerate()
        .map(|(k, t)| (t.as_str(), k))
        .collect();

    let num_users = user_tokens.len();
    let num_items = item_tokens.len();
    let mut per_user: Vec<Vec<usize>> = vec![Vec::new(); num_users];
    for (u, i) in &raw.pairs {
        per_user[user_ids[u.as_str()]].push(item_ids[i.as_str()]);
    }

    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for (u, items) in per_user.iter_mut().enumerate() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(seed, 1, u as u64));
        items.shuffle(&mut rng);
        let n = items.len();
        let (n_train, n_val) = if n < 3 {
            (n, 0)
        } else {
            let t = (0.7 * n as f64).ceil() as usize;
            let v = ((0.1 * n as f64).ceil() as usize).min(n - t);
            (t, v)
        };
        for (k, &item) in items.iter().enumerate() {
            if k < n_train {
                train.push((u, item));
            } else if k < n_train + n_val {
                val.push((u, item));
            } else {
                test.push((u, item));
            }
        }
    }
    InteractionDataset::from_splits(num_users, num_items, train, val, test, seed)
}

/// Counts over all splits and the interactions/(users×items) density.
pub fn compute_stats(ds: &InteractionDataset) -> DatasetStats {
    let num_interactions = ds.num_interactions();
    let density = num_interactions as f64 / (ds.num_users as f64 * ds.num_items as f64);
    DatasetStats {
        num_users: ds.num_users,
        num_items: ds.num_items,
        num_interactions,
        density,
        density_display: display_density(density),
    }
}

/// Scientific form with the mantissa truncated (not rounded) to one
/// decimal: 1.9567e-3 → "1.9e-3", 4.3082e-3 → "4.3e-3".
pub fn display_density(density: f64) -> String {
    if density <= 0.0 || !density.is_finite() {
        return "0.0e0".to_string();
    }
    let exp = density.log10().floor() as i32;
    let mantissa = density / 10f64.powi(exp);
    // Guard the edge where floating division lands exactly on 10.0.
    let (mantissa, exp) = if mantissa >= 10.0 {
        (mantissa / 10.0, exp + 1)
    } else {
        (mantissa, exp)
    };
    let truncated = (mantissa * 10.0).floor() / 10.0;
    format!("{truncated:.1}e{exp}")
}

const META_FILE: &str = "meta";
const TRAIN_FILE: &str = "train.tsv";
const VAL_FILE: &str = "val.tsv";
const TEST_FILE: &str = "test.tsv";
const USER_MAP_FILE: &str = "id_map_users.tsv";
const ITEM_MAP_FILE: &str = "id_map_items.tsv";

#[derive(Serialize, Deserialize)]
struct ArchiveMeta {
    num_users: usize,
    num_items: usize,
    num_interactions: usize,
    split_seed: u64,
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Write the split archive: `meta`, three split TSVs with integer ids, and
/// the token↔id maps.
pub fn write_archive<P: AsRef<Path>>(
    ds: &InteractionDataset,
    user_tokens: &[String],
    item_tokens: &[String],
    dir: P,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;

    let meta = ArchiveMeta {
        num_users: ds.num_users,
        num_items: ds.num_items,
        num_interactions: ds.num_interactions(),
        split_seed: ds.split_seed,
    };
    let meta_path = dir.join(META_FILE);
    fs::write(
        &meta_path,
        serde_json::to_string_pretty(&meta).expect("meta serializes"),
    )
    .map_err(|e| io_err(&meta_path, e))?;

    for (name, pairs) in [
        (TRAIN_FILE, &ds.train),
        (VAL_FILE, &ds.val),
        (TEST_FILE, &ds.test),
    ] {
        let path = dir.join(name);
        let mut w = std::io::BufWriter::new(fs::File::create(&path).map_err(|e| io_err(&path, e))?);
        for &(u, i) in pairs.iter() {
            writeln!(w, "{u}\t{i}").map_err(|e| io_err(&path, e))?;
        }
        w.flush().map_err(|e| io_err(&path, e))?;
    }

    for (name, tokens) in [(USER_MAP_FILE, user_tokens), (ITEM_MAP_FILE, item_tokens)] {
        let path = dir.join(name);
        let mut w = std::io::BufWriter::new(fs::File::create(&path).map_err(|e| io_err(&path, e))?);
        for (id, token) in tokens.iter().enumerate() {
            writeln!(w, "{token}\t{id}").map_err(|e| io_err(&path, e))?;
        }
        w.flush().map_err(|e| io_err(&path, e))?;
    }
    Ok(())
}

fn read_split_file(path: &Path) -> Result<Vec<(usize, usize)>> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut pairs = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let parse = |s: Option<&str>| -> Result<usize> {
            s.and_then(|v| v.parse().ok()).ok_or(Error::MalformedLine {
                path: path.display().to_string(),
                line: lineno + 1,
                detail: "expected two integer ids".into(),
            })
        };
        let u = parse(fields.next())?;
        let i = parse(fields.next())?;
        pairs.push((u, i));
    }
    Ok(pairs)
}

/// Read a split archive back into a dataset.
pub fn read_archive<P: AsRef<Path>>(dir: P) -> Result<InteractionDataset> {
    let dir = dir.as_ref();
    let meta_path = dir.join(META_FILE);
    let meta_text = fs::read_to_string(&meta_path).map_err(|e| io_err(&meta_path, e))?;
    let meta: ArchiveMeta = serde_json::from_str(&meta_text).map_err(|e| {
        Error::MalformedLine {
            path: meta_path.display().to_string(),
            line: 0,
            detail: e.to_string(),
        }
    })?;
    let train = read_split_file(&dir.join(TRAIN_FILE))?;
    let val = read_split_file(&dir.join(VAL_FILE))?;
    let test = read_split_file(&dir.join(TEST_FILE))?;
    let ds = InteractionDataset::from_splits(
        meta.num_users,
        meta.num_items,
        train,
        val,
        test,
        meta.split_seed,
    );
    if ds.num_interactions() != meta.num_interactions {
        return Err(Error::ContractViolation(format!(
            "archive {} claims {} interactions but splits hold {}",
            dir.display(),
            meta.num_interactions,
            ds.num_interactions()
        )));
    }
    Ok(ds)
}

/// Read a token↔id map file back as id-ordered tokens.
pub fn read_id_map<P: AsRef<Path>>(path: P) -> Result<Vec<String>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut entries = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let token = fields.next().unwrap_or("").to_string();
        let id: usize = fields
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or(Error::MalformedLine {
                path: path.display().to_string(),
                line: lineno + 1,
                detail: "expected `token<TAB>id`".into(),
            })?;
        entries.push((id, token));
    }
    entries.sort_unstable();
    Ok(entries.into_iter().map(|(_, t)| t).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn raw_from(pairs: &[(&str, &str)]) -> RawInteractions {
        RawInteractions {
            pairs: pairs
                .iter()
                .map(|&(u, i)| (u.to_string(), i.to_string()))
                .collect(),
            source_path: "test".into(),
        }
    }

    #[test]
    fn dedup_keeps_first_occurrence() {
        let input = "u1\ti1\nu1\ti1\nu2\ti1\n";
        let raw = parse_interactions(BufReader::new(input.as_bytes()), "mem").unwrap();
        assert_eq!(raw.pairs.len(), 2);
        assert_eq!(raw.pairs[0], ("u1".into(), "i1".into()));
        assert_eq!(raw.pairs[1], ("u2".into(), "i1".into()));
    }

    #[test]
    fn empty_file_is_an_error() {
        let err = parse_interactions(BufReader::new("".as_bytes()), "mem").unwrap_err();
        assert!(matches!(err, Error::EmptyInput(_)));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse_interactions(BufReader::new("u1\n".as_bytes()), "mem").unwrap_err();
        match err {
            Error::MalformedLine { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn trailing_fields_ignored() {
        let input = "u1\ti1\t4.5\textra\n";
        let raw = parse_interactions(BufReader::new(input.as_bytes()), "mem").unwrap();
        assert_eq!(raw.pairs, vec![("u1".into(), "i1".into())]);
    }

    #[test]
    fn gzip_input_accepted_by_suffix() {
        use flate2::write::GzEncoder;
        use flate2::Compression;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.tsv.gz");
        let mut enc = GzEncoder::new(fs::File::create(&path).unwrap(), Compression::default());
        enc.write_all(b"a\tx\nb\ty\n").unwrap();
        enc.finish().unwrap();
        let raw = load_interactions(&path).unwrap();
        assert_eq!(raw.pairs.len(), 2);
    }

    #[test]
    fn ten_interactions_split_seven_one_two() {
        let pairs: Vec<(String, String)> =
            (0..10).map(|i| ("u".to_string(), format!("i{i}"))).collect();
        let raw = RawInteractions {
            pairs,
            source_path: "mem".into(),
        };
        let ds = remap_and_split(&raw, 7);
        assert_eq!(ds.train.len(), 7);
        assert_eq!(ds.val.len(), 1);
        assert_eq!(ds.test.len(), 2);
    }

    #[test]
    fn single_interaction_goes_to_train() {
        let raw = raw_from(&[("u", "i")]);
        let ds = remap_and_split(&raw, 0);
        assert_eq!((ds.train.len(), ds.val.len(), ds.test.len()), (1, 0, 0));
    }

    #[test]
    fn split_is_deterministic() {
        let pairs: Vec<(String, String)> = (0..50)
            .flat_map(|u| (0..12).map(move |i| (format!("u{u}"), format!("i{}", (u * 5 + i) % 40))))
            .collect();
        let raw = RawInteractions {
            pairs,
            source_path: "mem".into(),
        };
        let a = remap_and_split(&raw, 123);
        let b = remap_and_split(&raw, 123);
        assert_eq!(a, b);
        let c = remap_and_split(&raw, 124);
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn splits_partition_the_input() {
        let pairs: Vec<(String, String)> = (0..30)
            .flat_map(|u| (0..8).map(move |i| (format!("u{u}"), format!("i{}", (u + i * 3) % 25))))
            .collect();
        let raw = RawInteractions {
            pairs: pairs.clone(),
            source_path: "mem".into(),
        };
        let ds = remap_and_split(&raw, 5);
        let all: HashSet<(usize, usize)> = ds
            .train
            .iter()
            .chain(&ds.val)
            .chain(&ds.test)
            .cloned()
            .collect();
        assert_eq!(all.len(), ds.num_interactions(), "splits are disjoint");
        assert_eq!(all.len(), pairs.len(), "union covers the input");
        // Every user appears in train.
        let train_users: HashSet<usize> = ds.train.iter().map(|&(u, _)| u).collect();
        assert_eq!(train_users.len(), ds.num_users);
    }

    #[test]
    fn ids_are_first_appearance_order() {
        let raw = raw_from(&[("bob", "x"), ("alice", "y"), ("bob", "y")]);
        let (users, items) = token_maps(&raw);
        assert_eq!(users, vec!["bob".to_string(), "alice".to_string()]);
        assert_eq!(items, vec!["x".to_string(), "y".to_string()]);
    }

    #[test]
    fn stats_match_published_density_rows() {
        // Counts drive density; pair content is irrelevant here.
        let cases = [
            (11_000, 9_332, 200_860, "1.9e-3"),
            (23_310, 5_237, 525_922, "4.3e-3"),
            (11_091, 11_010, 277_535, "2.2e-3"),
        ];
        for (users, items, inter, expected) in cases {
            let density = inter as f64 / (users as f64 * items as f64);
            assert_eq!(display_density(density), expected);
        }
    }

    #[test]
    fn complete_bipartite_density_is_one() {
        let raw = raw_from(&[("a", "x"), ("a", "y"), ("b", "x"), ("b", "y")]);
        let ds = remap_and_split(&raw, 0);
        let stats = compute_stats(&ds);
        assert_eq!(stats.density, 1.0);
        assert_eq!(stats.num_interactions, 4);
    }

    #[test]
    fn archive_round_trips() {
        let pairs: Vec<(String, String)> = (0..20)
            .flat_map(|u| (0..7).map(move |i| (format!("u{u}"), format!("i{}", (u * 3 + i) % 15))))
            .collect();
        let raw = RawInteractions {
            pairs,
            source_path: "mem".into(),
        };
        let ds = remap_and_split(&raw, 77);
        let (users, items) = token_maps(&raw);
        let dir = tempfile::tempdir().unwrap();
        write_archive(&ds, &users, &items, dir.path()).unwrap();
        let loaded = read_archive(dir.path()).unwrap();
        assert_eq!(ds, loaded);
        let loaded_users = read_id_map(dir.path().join(USER_MAP_FILE)).unwrap();
        assert_eq!(loaded_users, users);
    }

    #[test]
    fn archive_bytes_are_deterministic() {
        let pairs: Vec<(String, String)> = (0..25)
            .flat_map(|u| (0..9).map(move |i| (format!("u{u}"), format!("i{}", (u * 7 + i) % 30))))
            .collect();
        let raw = RawInteractions {
            pairs,
            source_path: "mem".into(),
        };
        let dirs: Vec<_> = (0..2)
            .map(|_| {
                let ds = remap_and_split(&raw, 9);
                let (users, items) = token_maps(&raw);
                let dir = tempfile::tempdir().unwrap();
                write_archive(&ds, &users, &items, dir.path()).unwrap();
                dir
            })
            .collect();
        for name in [META_FILE, TRAIN_FILE, VAL_FILE, TEST_FILE, USER_MAP_FILE, ITEM_MAP_FILE] {
            let a = fs::read(dirs[0].path().join(name)).unwrap();
            let b = fs::read(dirs[1].path().join(name)).unwrap();
            assert_eq!(a, b, "file {name} differs between identical runs");
        }
    }

    #[test]
    fn aggregate_train_ratio_near_seventy_percent() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let mut pairs = Vec::new();
        for u in 0..200 {
            let n = rng.random_range(10..60);
            let mut items: Vec<usize> = (0..500).collect();
            use rand::seq::SliceRandom;
            items.shuffle(&mut rng);
            for &i in items.iter().take(n) {
                pairs.push((format!("u{u}"), format!("i{i}")));
            }
        }
        let raw = RawInteractions {
            pairs,
            source_path: "mem".into(),
        };
        let ds = remap_and_split(&raw, 11);
        let ratio = ds.train.len() as f64 / ds.num_interactions() as f64;
        assert!(
            (0.65..=0.75).contains(&ratio),
            "aggregate train ratio {ratio}"
        );
    }
}
