use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HnswConfig {
    /// Max links per node on upper levels; level 0 allows `2 * m`.
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    pub seed: u64,
}

impl Default for HnswConfig {
    fn default() -> Self {
        HnswConfig {
            m: 16,
            ef_construction: 200,
            ef_search: 64,
            seed: 17,
        }
    }
}

impl HnswConfig {
    pub fn level_lambda(&self) -> f64 {
        1.0 / (self.m as f64).ln()
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::invalid(format!("HNSW m must be >= 2, got {}", self.m)));
        }
        if self.ef_construction == 0 || self.ef_search == 0 {
            return Err(Error::invalid("ef parameters must be positive"));
        }
        Ok(())
    }

    fn max_degree(&self, level: usize) -> usize {
        if level == 0 {
            2 * self.m
        } else {
            self.m
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InsertOutcome {
    Inserted,
    Replaced,
}

/// Similarity-ordered candidate. Higher similarity is "greater"; equal
/// similarities order by lower internal index first.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Scored {
    pub sim: f32,
    pub node: u32,
}

impl Eq for Scored {}

impl Ord for Scored {
    fn cmp(&self, other: &Self) -> Ordering {
        self.sim
            .total_cmp(&other.sim)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Min-heap adapter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Worst(std::cmp::Reverse<Scored>);

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0f32; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f32 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for j in 0..8 {
            acc[j] += x[j] * y[j];
        }
    }
    acc.iter().sum::<f32>() + tail
}

pub(crate) fn normalize(v: &[f32]) -> Result<Vec<f32>> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("embedding vector"));
    }
    let norm = v.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::invalid("cannot index a zero vector"));
    }
    Ok(v.iter().map(|x| (*x as f64 / norm) as f32).collect())
}

/// Per-thread visited marks, cleared by bumping an epoch.
pub(crate) struct Visited {
    stamp: Vec<u32>,
    epoch: u32,
}

impl Visited {
    fn reset(&mut self, n: usize) -> &mut Self {
        if self.stamp.len() < n {
            self.stamp.resize(n, 0);
        }
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.stamp.fill(0);
            self.epoch = 1;
        }
        self
    }

    #[inline]
    fn check_and_set(&mut self, node: u32) -> bool {
        let s = &mut self.stamp[node as usize];
        let seen = *s == self.epoch;
        *s = self.epoch;
        seen
    }
}

thread_local! {
    static VISITED: std::cell::RefCell<Visited> = const { std::cell::RefCell::new(Visited { stamp: Vec::new(), epoch: 0 }) };
}

/// SplitMix64, used to derive per-node level draws from the index seed.
pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hierarchical navigable small-world graph over L2-normalized vectors;
/// similarity is the dot product (cosine).
#[derive(Clone, Debug)]
pub struct HnswIndex {
    pub(crate) config: HnswConfig,
    pub(crate) dim: usize,
    pub(crate) ids: Vec<String>,
    pub(crate) positions: HashMap<String, u32>,
    pub(crate) vectors: Vec<f32>,
    /// `links[node][level]` = neighbor list.
    pub(crate) links: Vec<Vec<Vec<u32>>>,
    pub(crate) entry: Option<u32>,
    pub(crate) max_level: usize,
}

impl HnswIndex {
    pub fn new(dim: usize, config: HnswConfig) -> Result<Self> {
        config.validate()?;
        if dim == 0 {
            return Err(Error::invalid("index dimension must be positive"));
        }
        Ok(HnswIndex {
            config,
            dim,
            ids: Vec::new(),
            positions: HashMap::new(),
            vectors: Vec::new(),
            links: Vec::new(),
            entry: None,
            max_level: 0,
        })
    }

    pub fn config(&self) -> &HnswConfig {
        &self.config
    }

    pub fn set_ef_search(&mut self, ef: usize) {
        self.config.ef_search = ef.max(1);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn contains(&self, id: &str) -> bool {
        self.positions.contains_key(id)
    }

    /// Stored (normalized) vector of `id`.
    pub fn vector_of(&self, id: &str) -> Option<&[f32]> {
        self.positions.get(id).map(|&p| self.vector(p))
    }

    pub fn entry_point(&self) -> Option<&str> {
        self.entry.map(|e| self.ids[e as usize].as_str())
    }

    /// Top level of every node.
    pub fn node_levels(&self) -> Vec<usize> {
        self.links.iter().map(|l| l.len() - 1).collect()
    }

    /// Neighbor ids of `id` at `level`.
    pub fn neighbors(&self, id: &str, level: usize) -> Option<Vec<&str>> {
        let p = *self.positions.get(id)?;
        self.links[p as usize]
            .get(level)
            .map(|ns| ns.iter().map(|n| self.ids[*n as usize].as_str()).collect())
    }

    #[inline]
    fn vector(&self, node: u32) -> &[f32] {
        let s = node as usize * self.dim;
        &self.vectors[s..s + self.dim]
    }

    #[inline]
    fn sim(&self, q: &[f32], node: u32) -> f32 {
        dot(q, self.vector(node))
    }

    fn draw_level(&self, node: usize) -> usize {
        let bits = splitmix64(self.config.seed ^ splitmix64(node as u64));
        // Uniform in (0, 1].
        let u = ((bits >> 11) as f64 + 1.0) / (1u64 << 53) as f64;
        (-u.ln() * self.config.level_lambda()).floor() as usize
    }

    fn check_query(&self, query: &[f32]) -> Result<Vec<f32>> {
        if query.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: query.len(),
            });
        }
        normalize(query)
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: &[f32]) -> Result<InsertOutcome> {
        let id = id.into();
        let v = self.check_query(vector)?;
        if let Some(&p) = self.positions.get(&id) {
            warn!("duplicate id {id} in HNSW insert, replacing its vector");
            let s = p as usize * self.dim;
            self.vectors[s..s + self.dim].copy_from_slice(&v);
            let top = self.links[p as usize].len() - 1;
            for l in self.links[p as usize].iter_mut() {
                l.clear();
            }
            self.connect(p, top);
            return Ok(InsertOutcome::Replaced);
        }

        let node = self.ids.len() as u32;
        let level = self.draw_level(node as usize);
        self.ids.push(id.clone());
        self.positions.insert(id, node);
        self.vectors.extend_from_slice(&v);
        self.links.push(vec![Vec::new(); level + 1]);

        match self.entry {
            None => {
                self.entry = Some(node);
                self.max_level = level;
            }
            Some(_) => {
                self.connect(node, level);
                if level > self.max_level {
                    self.max_level = level;
                    self.entry = Some(node);
                }
            }
        }
        Ok(InsertOutcome::Inserted)
    }

    /// Links `node` into every level up to `level` using the current graph.
    fn connect(&mut self, node: u32, level: usize) {
        let Some(entry) = self.entry else { return };
        if entry == node && self.len() == 1 {
            return;
        }
        let q = self.vector(node).to_vec();
        let mut ep = vec![Scored {
            sim: self.sim(&q, entry),
            node: entry,
        }];
        for l in ((level + 1)..=self.max_level).rev() {
            ep = self.search_layer(&q, &ep, 1, l, None);
        }
        for l in (0..=level.min(self.max_level)).rev() {
            let candidates = self.search_layer(&q, &ep, self.config.ef_construction, l, None);
            let others: Vec<Scored> = candidates.iter().copied().filter(|c| c.node != node).collect();
            let chosen = self.select_neighbors(&others, self.config.max_degree(l), l);
            self.links[node as usize][l] = chosen.iter().map(|c| c.node).collect();
            let cap = self.config.max_degree(l);
            for c in &chosen {
                let nb = c.node as usize;
                if self.links[nb].len() <= l || self.links[nb][l].contains(&node) {
                    continue;
                }
                self.links[nb][l].push(node);
                if self.links[nb][l].len() > cap {
                    let base = self.vector(c.node).to_vec();
                    let pool: Vec<Scored> = self.links[nb][l]
                        .iter()
                        .map(|&n| Scored {
                            sim: dot(&base, self.vector(n)),
                            node: n,
                        })
                        .collect();
                    let kept = self.select_neighbors(&pool, cap, l);
                    self.links[nb][l] = kept.iter().map(|s| s.node).collect();
                }
            }
            if !others.is_empty() {
                ep = others;
            }
        }
    }

    /// Diversity heuristic: keep a candidate only if it is closer to the
    /// base than to every neighbor already kept, then top up with the best
    /// pruned candidates until `cap` is reached.
    fn select_neighbors(&self, candidates: &[Scored], cap: usize, _level: usize) -> Vec<Scored> {
        let mut sorted = candidates.to_vec();
        sorted.sort_by(|a, b| b.cmp(a));
        sorted.dedup_by_key(|s| s.node);
        let mut kept: Vec<Scored> = Vec::with_capacity(cap);
        let mut pruned: Vec<Scored> = Vec::new();
        for c in sorted {
            if kept.len() >= cap {
                break;
            }
            let cv = self.vector(c.node);
            let diverse = kept.iter().all(|k| dot(cv, self.vector(k.node)) < c.sim);
            if diverse {
                kept.push(c);
            } else {
                pruned.push(c);
            }
        }
        for p in pruned {
            if kept.len() >= cap {
                break;
            }
            kept.push(p);
        }
        kept
    }

    /// Best-first beam search on one level. Returns up to `ef` nodes sorted
    /// by descending similarity. With a filter, only accepted nodes enter
    /// the result set but traversal uses the whole graph.
    fn search_layer(
        &self,
        q: &[f32],
        entry: &[Scored],
        ef: usize,
        level: usize,
        filter: Option<&dyn Fn(u32) -> bool>,
    ) -> Vec<Scored> {
        VISITED.with_borrow_mut(|v| self.search_layer_marked(q, entry, ef, level, filter, v))
    }

    fn search_layer_marked(
        &self,
        q: &[f32],
        entry: &[Scored],
        ef: usize,
        level: usize,
        filter: Option<&dyn Fn(u32) -> bool>,
        marks: &mut Visited,
    ) -> Vec<Scored> {
        let visited = marks.reset(self.len());
        let mut candidates: BinaryHeap<Scored> = BinaryHeap::new();
        let mut results: BinaryHeap<Worst> = BinaryHeap::new();
        let admit = |n: u32| filter.is_none_or(|f| f(n));
        for e in entry {
            if visited.check_and_set(e.node) {
                continue;
            }
            candidates.push(*e);
            if admit(e.node) {
                results.push(Worst(std::cmp::Reverse(*e)));
                if results.len() > ef {
                    results.pop();
                }
            }
        }
        while let Some(c) = candidates.pop() {
            if results.len() >= ef {
                let worst = results.peek().map(|w| w.0 .0).unwrap();
                if c.sim < worst.sim {
                    break;
                }
            }
            let Some(ns) = self.links[c.node as usize].get(level) else {
                continue;
            };
            for &n in ns {
                if visited.check_and_set(n) {
                    continue;
                }
                let s = Scored {
                    sim: self.sim(q, n),
                    node: n,
                };
                let full = results.len() >= ef;
                let beats = !full || s > results.peek().unwrap().0 .0;
                if beats || (filter.is_some() && !admit(n)) {
                    candidates.push(s);
                }
                if beats && admit(n) {
                    results.push(Worst(std::cmp::Reverse(s)));
                    if results.len() > ef {
                        results.pop();
                    }
                }
            }
        }
        let mut out: Vec<Scored> = results.into_iter().map(|w| w.0 .0).collect();
        out.sort_by(|a, b| b.cmp(a));
        out
    }

    fn finish(&self, mut hits: Vec<Scored>, k: usize) -> Vec<(String, f64)> {
        hits.sort_by(|a, b| {
            b.sim
                .total_cmp(&a.sim)
                .then_with(|| self.ids[a.node as usize].cmp(&self.ids[b.node as usize]))
        });
        hits.truncate(k);
        hits.into_iter()
            .map(|s| (self.ids[s.node as usize].clone(), s.sim as f64))
            .collect()
    }

    fn descend(&self, q: &[f32]) -> Vec<Scored> {
        let entry = self.entry.expect("non-empty index has an entry point");
        let mut ep = vec![Scored {
            sim: self.sim(q, entry),
            node: entry,
        }];
        for l in (1..=self.max_level).rev() {
            let width = if l == 1 { self.config.ef_search } else { 1 };
            ep = self.search_layer(q, &ep, width, l, None);
        }
        ep
    }

    /// Approximate top-k by cosine similarity, sorted descending.
    pub fn search(&self, query: &[f32], k: usize) -> Result<Vec<(String, f64)>> {
        if self.is_empty() {
            return Err(Error::EmptyIndex);
        }
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        let q = self.check_query(query)?;
        let ep = self.descend(&q);
        let ef = self.config.ef_search.max(k);
        Ok(self.finish(self.search_layer(&q, &ep, ef, 0, None), k))
    }

    /// Approximate top-k among ids accepted by `filter`.
    pub fn search_filtered(
        &self,
        query: &[f32],
        k: usize,
        filter: &dyn Fn(&str) -> bool,
    ) -> Result<Vec<(String, f64)>> {
        if self.is_empty() {
            return Err(Error::EmptyIndex);
        }
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        let q = self.check_query(query)?;
        let ep = self.descend(&q);
        let ef = self.config.ef_search.max(k);
        let node_filter = |n: u32| filter(&self.ids[n as usize]);
        Ok(self.finish(self.search_layer(&q, &ep, ef, 0, Some(&node_filter)), k))
    }

    /// Exact top-k by full scan; ties broken by ascending id.
    pub fn brute_force_search(&self, query: &[f32], k: usize) -> Result<Vec<(String, f64)>> {
        self.brute_force_filtered(query, k, &|_| true)
    }

    pub fn brute_force_filtered(
        &self,
        query: &[f32],
        k: usize,
        filter: &dyn Fn(&str) -> bool,
    ) -> Result<Vec<(String, f64)>> {
        if self.is_empty() {
            return Err(Error::EmptyIndex);
        }
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        let q = self.check_query(query)?;
        let hits: Vec<Scored> = (0..self.len() as u32)
            .filter(|n| filter(&self.ids[*n as usize]))
            .map(|n| Scored {
                sim: self.sim(&q, n),
                node: n,
            })
            .collect();
        Ok(self.finish(hits, k))
    }
}

/// Cosine similarity in f64 for arbitrary (non-zero) vectors.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    d / (na * nb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vectors(n: usize, dim: usize, seed: u64) -> Vec<Vec<f32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..dim).map(|_| rng.random::<f32>() * 2.0 - 1.0).collect())
            .collect()
    }

    #[test]
    fn first_insert_is_entry_point() {
        let mut idx = HnswIndex::new(3, HnswConfig::default()).unwrap();
        idx.insert("a", &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(idx.entry_point(), Some("a"));
        let hit = idx.search(&[1.0, 2.0, 3.0], 1).unwrap();
        assert_eq!(hit[0].0, "a");
        assert!((hit[0].1 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_zero_and_wrong_dim() {
        let mut idx = HnswIndex::new(2, HnswConfig::default()).unwrap();
        assert!(idx.insert("z", &[0.0, 0.0]).is_err());
        assert!(idx.insert("z", &[1.0]).is_err());
        assert!(matches!(idx.search(&[1.0, 0.0], 1), Err(Error::EmptyIndex)));
    }

    #[test]
    fn stored_vectors_are_unit_norm() {
        let mut idx = HnswIndex::new(8, HnswConfig::default()).unwrap();
        for (i, v) in random_vectors(50, 8, 3).iter().enumerate() {
            idx.insert(format!("v{i}"), &v.iter().map(|x| x * 7.0).collect::<Vec<_>>()).unwrap();
        }
        for id in idx.ids().to_vec() {
            let n: f64 = idx.vector_of(&id).unwrap().iter().map(|x| (*x as f64).powi(2)).sum();
            assert!((n.sqrt() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn duplicate_replaces() {
        let mut idx = HnswIndex::new(2, HnswConfig::default()).unwrap();
        idx.insert("a", &[1.0, 0.0]).unwrap();
        idx.insert("b", &[0.0, 1.0]).unwrap();
        assert_eq!(idx.insert("a", &[0.0, 1.0]).unwrap(), InsertOutcome::Replaced);
        assert_eq!(idx.len(), 2);
        let hits = idx.brute_force_search(&[0.0, 1.0], 2).unwrap();
        assert!((hits[0].1 - 1.0).abs() < 1e-6 && (hits[1].1 - 1.0).abs() < 1e-6);
        assert_eq!(hits[0].0, "a");
    }

    #[test]
    fn brute_force_orthogonal() {
        let mut idx = HnswIndex::new(2, HnswConfig::default()).unwrap();
        idx.insert("x", &[1.0, 0.0]).unwrap();
        idx.insert("y", &[0.0, 1.0]).unwrap();
        let hits = idx.brute_force_search(&[1.0, 0.0], 2).unwrap();
        assert_eq!(hits[0], ("x".to_string(), 1.0));
        assert_eq!(hits[1].0, "y");
        assert!(hits[1].1.abs() < 1e-12);
    }

    #[test]
    fn k_larger_than_index_returns_all() {
        let mut idx = HnswIndex::new(4, HnswConfig::default()).unwrap();
        for (i, v) in random_vectors(20, 4, 9).iter().enumerate() {
            idx.insert(format!("v{i:02}"), v).unwrap();
        }
        let hits = idx.search(&[1.0, 0.0, 0.0, 0.0], 100).unwrap();
        assert_eq!(hits.len(), 20);
        assert!(hits.windows(2).all(|w| w[0].1 >= w[1].1));
    }

    #[test]
    fn filtered_search_respects_filter() {
        let mut idx = HnswIndex::new(6, HnswConfig::default()).unwrap();
        for (i, v) in random_vectors(300, 6, 5).iter().enumerate() {
            idx.insert(format!("v{i:03}"), v).unwrap();
        }
        let q = [0.3f32, -0.2, 0.9, 0.1, 0.0, 0.4];
        let even = |id: &str| id[1..].parse::<usize>().unwrap() % 7 == 0;
        let a = idx.search_filtered(&q, 3, &even).unwrap();
        let b = idx.brute_force_filtered(&q, 3, &even).unwrap();
        assert!(a.iter().all(|(id, _)| even(id)));
        assert_eq!(a[0].0, b[0].0);
    }
}
