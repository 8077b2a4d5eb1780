use std::collections::BTreeMap;

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::DyadCorpus;
use crate::ann::{dot, normalize};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from};

const MAX_ITER: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopicModel {
    pub dyad_id: String,
    pub centroids: Vec<Vec<f32>>,
    pub assignment: BTreeMap<String, usize>,
    /// Topic richest in event-matched articles, when there is more than one.
    pub violent_topic: Option<usize>,
}

impl TopicModel {
    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    pub fn topic_of(&self, article_id: &str) -> Option<usize> {
        self.assignment.get(article_id).copied()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.len()];
        for t in self.assignment.values() {
            s[*t] += 1;
        }
        s
    }

    pub fn non_violent(&self) -> Vec<usize> {
        (0..self.len()).filter(|t| Some(*t) != self.violent_topic).collect()
    }
}

pub fn initial_topic_count(n: usize, min_topic_size: usize, max_topics: usize) -> usize {
    (n / min_topic_size.max(1)).clamp(3, max_topics.max(3))
}

fn nearest(v: &[f32], centroids: &[Vec<f32>], skip: Option<usize>) -> usize {
    let mut best = usize::MAX;
    let mut best_sim = f32::NEG_INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        if Some(i) == skip {
            continue;
        }
        let s = dot(v, c);
        if s > best_sim {
            best_sim = s;
            best = i;
        }
    }
    best
}

fn mean_direction(vectors: &[&[f32]]) -> Option<Vec<f32>> {
    let dim = vectors.first()?.len();
    let mut acc = vec![0f64; dim];
    for v in vectors {
        for (a, x) in acc.iter_mut().zip(v.iter()) {
            *a += *x as f64;
        }
    }
    let sum: Vec<f32> = acc.iter().map(|a| *a as f32).collect();
    normalize(&sum).ok()
}

fn recompute(vectors: &[&[f32]], labels: &[usize], centroids: &mut [Vec<f32>]) {
    for (c, centroid) in centroids.iter_mut().enumerate() {
        let members: Vec<&[f32]> = vectors
            .iter()
            .zip(labels)
            .filter(|(_, l)| **l == c)
            .map(|(v, _)| *v)
            .collect();
        if let Some(m) = mean_direction(&members) {
            *centroid = m;
        }
    }
}

fn seed_centroids(vectors: &[&[f32]], k: usize, rng: &mut impl Rng) -> Vec<Vec<f32>> {
    let n = vectors.len();
    let mut centroids = vec![vectors[rng.random_range(0..n)].to_vec()];
    let mut dist: Vec<f64> = vectors
        .iter()
        .map(|v| (1.0 - dot(v, &centroids[0]) as f64).max(0.0))
        .collect();
    while centroids.len() < k {
        let total: f64 = dist.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = n - 1;
        for (i, d) in dist.iter().enumerate() {
            if target < *d {
                pick = i;
                break;
            }
            target -= d;
        }
        let c = vectors[pick].to_vec();
        for (d, v) in dist.iter_mut().zip(vectors) {
            *d = d.min((1.0 - dot(v, &c) as f64).max(0.0));
        }
        centroids.push(c);
    }
    centroids
}

/// Spherical k-means with k-means++ seeding, followed by merging topics
/// smaller than `min_topic_size` into their members' nearest remaining
/// centroids.
pub fn cluster_topics(
    corpus: &DyadCorpus,
    min_topic_size: usize,
    max_topics: usize,
    seed: u64,
) -> Result<TopicModel> {
    if min_topic_size == 0 {
        return Err(Error::invalid("min_topic_size must be positive"));
    }
    let n = corpus.articles.len();
    if n == 0 {
        return Err(Error::invalid(format!("dyad {} has no articles to cluster", corpus.dyad_id)));
    }
    let vectors: Vec<&[f32]> = corpus.articles.iter().map(|a| a.embedding.as_slice()).collect();
    let identical = vectors.iter().all(|v| *v == vectors[0]);
    if identical && n > 1 {
        warn!("dyad {}: all embeddings identical, using a single topic", corpus.dyad_id);
    }

    let mut labels = vec![0usize; n];
    let mut centroids;
    if identical || n < 2 * min_topic_size {
        centroids = vec![mean_direction(&vectors).unwrap_or_else(|| vectors[0].to_vec())];
    } else {
        let k = initial_topic_count(n, min_topic_size, max_topics).min(n);
        let mut rng = rng_from(derive_seed(seed, &corpus.dyad_id));
        centroids = seed_centroids(&vectors, k, &mut rng);
        for iter in 0..MAX_ITER {
            let mut changed = iter == 0;
            for (i, v) in vectors.iter().enumerate() {
                let c = nearest(v, &centroids, None);
                if c != labels[i] {
                    labels[i] = c;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
            recompute(&vectors, &labels, &mut centroids);
        }
        merge_small(&vectors, &mut labels, &mut centroids, min_topic_size);
    }

    let mut gold = vec![0usize; centroids.len()];
    let mut size = vec![0usize; centroids.len()];
    for (a, l) in corpus.articles.iter().zip(&labels) {
        size[*l] += 1;
        gold[*l] += a.gold as usize;
    }
    let mut violent_topic = None;
    if centroids.len() > 1 {
        let mut best = 0.0;
        for t in 0..centroids.len() {
            let frac = gold[t] as f64 / size[t] as f64;
            if frac > best {
                best = frac;
                violent_topic = Some(t);
            }
        }
    }

    Ok(TopicModel {
        dyad_id: corpus.dyad_id.clone(),
        centroids,
        assignment: corpus
            .articles
            .iter()
            .zip(&labels)
            .map(|(a, l)| (a.article_id.clone(), *l))
            .collect(),
        violent_topic,
    })
}

fn merge_small(vectors: &[&[f32]], labels: &mut [usize], centroids: &mut Vec<Vec<f32>>, min: usize) {
    loop {
        let mut sizes = vec![0usize; centroids.len()];
        for l in labels.iter() {
            sizes[*l] += 1;
        }
        // Empty clusters go first; then the smallest undersized one.
        let victim = (0..centroids.len())
            .filter(|c| sizes[*c] < min)
            .min_by_key(|c| (sizes[*c], *c));
        let Some(victim) = victim else { break };
        if centroids.len() == 1 {
            break;
        }
        for (i, v) in vectors.iter().enumerate() {
            if labels[i] == victim {
                labels[i] = nearest(v, centroids, Some(victim));
            }
        }
        centroids.remove(victim);
        for l in labels.iter_mut() {
            if *l > victim {
                *l -= 1;
            }
        }
        recompute(vectors, labels, centroids);
    }
}
