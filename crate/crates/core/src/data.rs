//! Interaction and knowledge-graph loading, id densification and per-user splits.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::NeighborSet;

/// Bijection between original (file) ids and dense `0..n` ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    originals: Vec<u64>,
    index: HashMap<u64, usize>,
}

impl IdMap {
    /// Dense ids assigned in the order of `originals`; duplicates are dropped.
    pub fn from_originals(originals: impl IntoIterator<Item = u64>) -> Self {
        let mut map = IdMap::default();
        for o in originals {
            map.insert(o);
        }
        map
    }

    /// Dense ids assigned in ascending original-id order.
    pub fn sorted(originals: impl IntoIterator<Item = u64>) -> Self {
        let set: BTreeSet<u64> = originals.into_iter().collect();
        Self::from_originals(set)
    }

    fn insert(&mut self, original: u64) -> usize {
        if let Some(&d) = self.index.get(&original) {
            return d;
        }
        let d = self.originals.len();
        self.originals.push(original);
        self.index.insert(original, d);
        d
    }

    pub fn len(&self) -> usize {
        self.originals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.originals.is_empty()
    }

    pub fn dense(&self, original: u64) -> Option<usize> {
        self.index.get(&original).copied()
    }

    pub fn original(&self, dense: usize) -> Option<u64> {
        self.originals.get(dense).copied()
    }

    pub fn originals(&self) -> &[u64] {
        &self.originals
    }

    /// Writes `original_id<TAB>dense_id` lines.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (d, o) in self.originals.iter().enumerate() {
            out.push_str(&format!("{o}\t{d}\n"));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields = parse_fields(line, 2, path, i + 1)?;
            pairs.push((fields[1], fields[0]));
        }
        pairs.sort_unstable();
        for (expect, &(d, _)) in pairs.iter().enumerate() {
            if d != expect as u64 {
                return Err(Error::Parse {
                    path: path.into(),
                    line: 0,
                    msg: format!("dense ids are not contiguous at {expect}"),
                });
            }
        }
        Ok(Self::from_originals(pairs.into_iter().map(|(_, o)| o)))
    }
}

fn parse_fields(line: &str, n: usize, path: &Path, lineno: usize) -> Result<Vec<u64>> {
    let err = |msg: String| Error::Parse {
        path: path.to_path_buf(),
        line: lineno,
        msg,
    };
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != n {
        return Err(err(format!("expected {n} tab-separated fields, found {}", fields.len())));
    }
    fields
        .iter()
        .map(|f| {
            f.parse::<u64>()
                .map_err(|_| err(format!("`{f}` is not a nonnegative integer")))
        })
        .collect()
}

fn read_rows(path: &Path, n: usize) -> Result<Vec<Vec<u64>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        rows.push(parse_fields(line, n, path, i + 1)?);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            path: path.into(),
            line: 0,
            msg: "file contains no records".into(),
        });
    }
    Ok(rows)
}

/// Deduplicated implicit feedback with dense ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interactions {
    pub users: IdMap,
    pub items: IdMap,
    /// Sorted, unique `(user, item)` pairs.
    pub pairs: Vec<(usize, usize)>,
}

impl Interactions {
    /// Densifies raw `(user, item)` pairs, sorting ids ascending.
    pub fn from_raw(raw: &[(u64, u64)]) -> Self {
        let users = IdMap::sorted(raw.iter().map(|p| p.0));
        let items = IdMap::sorted(raw.iter().map(|p| p.1));
        let mut pairs: Vec<(usize, usize)> = raw
            .iter()
            .map(|&(u, v)| (users.dense(u).unwrap(), items.dense(v).unwrap()))
            .collect();
        pairs.sort_unstable();
        pairs.dedup();
        Self { users, items, pairs }
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    /// Items per user, in ascending item order.
    pub fn by_user(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_users()];
        for &(u, v) in &self.pairs {
            out[u].push(v);
        }
        out
    }

    /// Id-map sidecar paths written next to an interactions file.
    pub fn sidecar_paths(path: &Path) -> (PathBuf, PathBuf) {
        (suffixed(path, "users.map"), suffixed(path, "items.map"))
    }
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

/// Reads a `user<TAB>item` file as raw original-id pairs.
pub fn read_interaction_pairs(path: &Path) -> Result<Vec<(u64, u64)>> {
    let rows = read_rows(path, 2)?;
    Ok(rows.into_iter().map(|r| (r[0], r[1])).collect())
}

/// Reads a `user<TAB>item` file.
pub fn load_interactions(path: &Path) -> Result<Interactions> {
    Ok(Interactions::from_raw(&read_interaction_pairs(path)?))
}

/// Iteratively drops users and items with fewer than `k` interactions.
pub fn k_core_filter(raw: &[(u64, u64)], k: usize) -> Vec<(u64, u64)> {
    let mut pairs: Vec<(u64, u64)> = raw.to_vec();
    pairs.sort_unstable();
    pairs.dedup();
    loop {
        let mut uc: HashMap<u64, usize> = HashMap::new();
        let mut ic: HashMap<u64, usize> = HashMap::new();
        for &(u, v) in &pairs {
            *uc.entry(u).or_default() += 1;
            *ic.entry(v).or_default() += 1;
        }
        let before = pairs.len();
        pairs.retain(|(u, v)| uc[u] >= k && ic[v] >= k);
        if pairs.len() == before {
            return pairs;
        }
    }
}

/// Triples with dense ids. Entities `0..n_items` are the items.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeGraph {
    pub entities: IdMap,
    pub relations: IdMap,
    /// Sorted, unique `(head, relation, tail)` triples.
    pub triples: Vec<(usize, usize, usize)>,
    pub neighbors: NeighborSet,
}

impl KnowledgeGraph {
    /// A graph without triples whose entities are exactly the items.
    pub fn empty(items: &IdMap) -> Self {
        Self {
            entities: items.clone(),
            relations: IdMap::default(),
            triples: Vec::new(),
            neighbors: NeighborSet::empty(items.len()),
        }
    }

    /// Builds the graph from raw triples. A head is an item when its id
    /// appears in `items`; other entity ids get dense ids after the items in
    /// ascending original order.
    pub fn from_raw(items: &IdMap, raw: &[(u64, u64, u64)]) -> Result<Self> {
        let n_items = items.len();
        let others: BTreeSet<u64> = raw
            .iter()
            .flat_map(|&(h, _, t)| [h, t])
            .filter(|e| items.dense(*e).is_none())
            .collect();
        let entities = IdMap::from_originals(items.originals().iter().copied().chain(others));
        let relations = IdMap::sorted(raw.iter().map(|t| t.1));
        let mut triples: Vec<(usize, usize, usize)> = raw
            .iter()
            .map(|&(h, r, t)| {
                (
                    entities.dense(h).unwrap(),
                    relations.dense(r).unwrap(),
                    entities.dense(t).unwrap(),
                )
            })
            .collect();
        triples.sort_unstable();
        triples.dedup();
        let neighbors = NeighborSet::from_triples(
            n_items,
            triples.iter().copied().filter(|&(h, _, _)| h < n_items),
        )?;
        Ok(Self {
            entities,
            relations,
            triples,
            neighbors,
        })
    }

    pub fn n_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn n_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn sidecar_paths(path: &Path) -> (PathBuf, PathBuf) {
        (suffixed(path, "entities.map"), suffixed(path, "relations.map"))
    }

    /// Undirected adjacency over all triples, neighbors sorted.
    pub fn undirected_adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n_entities()];
        for &(h, _, t) in &self.triples {
            adj[h].push(t);
            adj[t].push(h);
        }
        for a in adj.iter_mut() {
            a.sort_unstable();
            a.dedup();
        }
        adj
    }
}

/// Reads a `head<TAB>relation<TAB>tail` file as raw original-id triples.
pub fn read_triples(path: &Path) -> Result<Vec<(u64, u64, u64)>> {
    let rows = read_rows(path, 3)?;
    Ok(rows.into_iter().map(|r| (r[0], r[1], r[2])).collect())
}

/// Reads a `head<TAB>relation<TAB>tail` file.
pub fn load_triples(path: &Path, items: &IdMap) -> Result<KnowledgeGraph> {
    KnowledgeGraph::from_raw(items, &read_triples(path)?)
}

/// Fractions used by [`split`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    /// Share of each user's interactions kept for training plus validation.
    pub train: f64,
    /// Share of the training pool moved to validation.
    pub validation: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            validation: 0.1,
        }
    }
}

/// Per-user train / validation / test item sets, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionDataset {
    pub n_users: usize,
    pub n_items: usize,
    pub train: Vec<Vec<usize>>,
    pub validation: Vec<Vec<usize>>,
    pub test: Vec<Vec<usize>>,
}

impl InteractionDataset {
    /// Every `(user, item)` training pair, user-major.
    pub fn train_pairs(&self) -> Vec<(usize, usize)> {
        self.train
            .iter()
            .enumerate()
            .flat_map(|(u, items)| items.iter().map(move |&v| (u, v)))
            .collect()
    }

    pub fn in_train(&self, user: usize, item: usize) -> bool {
        self.train[user].binary_search(&item).is_ok()
    }

    /// Builds a dataset directly from per-user sets (sorted and deduplicated here).
    pub fn from_sets(
        n_items: usize,
        train: Vec<Vec<usize>>,
        validation: Vec<Vec<usize>>,
        test: Vec<Vec<usize>>,
    ) -> Result<Self> {
        let n_users = train.len();
        if validation.len() != n_users || test.len() != n_users {
            return Err(Error::InvalidInput("split partitions disagree on user count".into()));
        }
        let norm = |mut sets: Vec<Vec<usize>>| -> Result<Vec<Vec<usize>>> {
            for s in sets.iter_mut() {
                s.sort_unstable();
                s.dedup();
                if let Some(&v) = s.iter().find(|&&v| v >= n_items) {
                    return Err(Error::UnknownId { kind: "item", id: v });
                }
            }
            Ok(sets)
        };
        Ok(Self {
            n_users,
            n_items,
            train: norm(train)?,
            validation: norm(validation)?,
            test: norm(test)?,
        })
    }
}

/// Seeded per-user random split.
///
/// Users with fewer than three interactions keep everything in training.
/// Otherwise `⌊n·train⌋` items (at least one) form the training pool and the
/// rest go to test; `round(pool·validation)` of the pool move to validation
/// while keeping at least one training item.
pub fn split(interactions: &Interactions, ratios: SplitRatios, seed: u64) -> InteractionDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_user = interactions.by_user();
    let n_users = per_user.len();
    let mut train = Vec::with_capacity(n_users);
    let mut validation = Vec::with_capacity(n_users);
    let mut test = Vec::with_capacity(n_users);
    for mut items in per_user {
        let n = items.len();
        if n < 3 {
            train.push(items);
            validation.push(Vec::new());
            test.push(Vec::new());
            continue;
        }
        items.shuffle(&mut rng);
        let pool = ((n as f64 * ratios.train + 1e-9).floor() as usize).clamp(1, n);
        let n_val = ((pool as f64 * ratios.validation).round() as usize).min(pool - 1);
        let mut tr = items[..pool - n_val].to_vec();
        let mut va = items[pool - n_val..pool].to_vec();
        let mut te = items[pool..].to_vec();
        tr.sort_unstable();
        va.sort_unstable();
        te.sort_unstable();
        train.push(tr);
        validation.push(va);
        test.push(te);
    }
    InteractionDataset {
        n_users,
        n_items: interactions.n_items(),
        train,
        validation,
        test,
    }
}

/// Writes `user<TAB>item` lines using original ids.
pub fn write_interactions(path: &Path, pairs: &[(u64, u64)]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for (u, v) in pairs {
        writeln!(f, "{u}\t{v}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Writes `head<TAB>relation<TAB>tail` lines using original ids.
pub fn write_triples(path: &Path, triples: &[(u64, u64, u64)]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for (h, r, t) in triples {
        writeln!(f, "{h}\t{r}\t{t}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
