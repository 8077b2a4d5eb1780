use std::collections::HashMap;

use log::{debug, warn};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{cluster_topics, CorpusArticle, Digest, DigestConfig, DigestKind, DyadCorpus, TopicModel, PER_TOPIC};
use crate::ann::{dot, HnswIndex};
use crate::error::{Error, Result};
use crate::month::Month;
use crate::rng::{derive_seed, rng_from};

/// How context articles are looked up for retrieval digests.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Retrieval {
    #[default]
    Approximate,
    Exact,
}

fn assemble(
    corpus: &DyadCorpus,
    month: Month,
    kind: DigestKind,
    seed: u64,
    members: &[&CorpusArticle],
) -> Digest {
    Digest {
        dyad_id: corpus.dyad_id.clone(),
        month,
        kind,
        snippets: members.iter().map(|a| a.snippet.clone()).collect(),
        member_embeddings: members.iter().map(|a| a.embedding.clone()).collect(),
        total_tokens: members.iter().map(|a| a.snippet.token_count).sum(),
        seed,
    }
}

fn low_members<'a>(corpus: &'a DyadCorpus, month: Month, model: &TopicModel, limit: usize) -> Vec<&'a CorpusArticle> {
    let in_month: Vec<&CorpusArticle> = corpus.articles.iter().filter(|a| a.month == month).collect();
    let mut ordered: Vec<&CorpusArticle> = in_month.iter().copied().filter(|a| a.gold).collect();
    for (t, centroid) in model.centroids.iter().enumerate() {
        let mut scored: Vec<(f32, &CorpusArticle)> = in_month
            .iter()
            .filter(|a| !a.gold && model.topic_of(&a.article_id) == Some(t))
            .map(|a| (dot(&a.embedding, centroid), *a))
            .collect();
        scored.sort_by(|x, y| y.0.total_cmp(&x.0).then_with(|| x.1.article_id.cmp(&y.1.article_id)));
        ordered.extend(scored.into_iter().take(PER_TOPIC).map(|(_, a)| a));
    }
    let mut used = 0;
    ordered
        .into_iter()
        .filter(|a| {
            let fits = used + a.snippet.token_count <= limit;
            if fits {
                used += a.snippet.token_count;
            }
            fits
        })
        .collect()
}

/// Event snippets of the month, then up to five in-month articles per topic
/// closest to its centroid. `None` when the dyad-month has no articles.
pub fn low_context_digest(
    corpus: &DyadCorpus,
    month: Month,
    model: &TopicModel,
    config: &DigestConfig,
) -> Option<Digest> {
    let members = low_members(corpus, month, model, config.context_limit);
    if members.is_empty() {
        return None;
    }
    Some(assemble(corpus, month, DigestKind::Low, config.seed, &members))
}

/// Event-blocks (an event snippet plus its nearest in-month context article
/// from every non-violent topic) packed into digests within the context
/// limit. Months without events fall back to the low-context selection.
pub fn rag_digest(
    corpus: &DyadCorpus,
    month: Month,
    model: &TopicModel,
    index: &HnswIndex,
    config: &DigestConfig,
    retrieval: Retrieval,
) -> Result<Vec<Digest>> {
    let events: Vec<&CorpusArticle> = corpus
        .articles
        .iter()
        .filter(|a| a.month == month && a.gold)
        .collect();
    if events.is_empty() {
        let members = low_members(corpus, month, model, config.context_limit);
        if members.is_empty() {
            return Ok(Vec::new());
        }
        return Ok(vec![assemble(corpus, month, DigestKind::Rag, config.seed, &members)]);
    }

    let context: HashMap<&str, (usize, &CorpusArticle)> = corpus
        .articles
        .iter()
        .filter(|a| a.month == month && !a.gold)
        .filter_map(|a| model.topic_of(&a.article_id).map(|t| (a.article_id.as_str(), (t, a))))
        .collect();

    let (present, absent): (Vec<usize>, Vec<usize>) = model
        .non_violent()
        .into_iter()
        .partition(|t| context.values().any(|(tt, _)| tt == t));
    if !absent.is_empty() {
        debug!("dyad {} {month}: no in-month context in topics {absent:?}", corpus.dyad_id);
    }

    let mut blocks: Vec<Vec<&CorpusArticle>> = Vec::with_capacity(events.len());
    for ev in &events {
        let mut block = vec![*ev];
        let mut used = ev.snippet.token_count;
        for &t in &present {
            let filter = |id: &str| context.get(id).is_some_and(|(tt, _)| *tt == t);
            let hits = match retrieval {
                Retrieval::Approximate => index.search_filtered(&ev.embedding, 1, &filter)?,
                Retrieval::Exact => index.brute_force_filtered(&ev.embedding, 1, &filter)?,
            };
            let Some((id, _)) = hits.first() else {
                warn!("dyad {} {month}: topic {t} has no indexed members, skipped", corpus.dyad_id);
                continue;
            };
            let art = context[id.as_str()].1;
            if used + art.snippet.token_count <= config.context_limit {
                used += art.snippet.token_count;
                block.push(art);
            }
        }
        blocks.push(block);
    }

    let seed = derive_seed(config.seed, &format!("{}|{month}", corpus.dyad_id));
    let groups = pack_blocks(
        &blocks.iter().map(|b| b.iter().map(|a| a.snippet.token_count).sum()).collect::<Vec<usize>>(),
        config.context_limit,
        seed,
    );
    Ok(groups
        .into_iter()
        .map(|g| {
            let members: Vec<&CorpusArticle> = g.iter().flat_map(|i| blocks[*i].iter().copied()).collect();
            assemble(corpus, month, DigestKind::Rag, config.seed, &members)
        })
        .collect())
}

/// Splits blocks into groups whose token sums stay within `limit`. One group
/// when everything fits; otherwise a seeded shuffle is cut greedily into
/// groups and the last group is topped up with randomly drawn other blocks.
/// Every block must individually fit.
pub(crate) fn pack_blocks(sizes: &[usize], limit: usize, seed: u64) -> Vec<Vec<usize>> {
    if sizes.iter().sum::<usize>() <= limit {
        return vec![(0..sizes.len()).collect()];
    }
    let mut rng = rng_from(seed);
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.shuffle(&mut rng);
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut current = Vec::new();
    let mut used = 0;
    for i in order {
        if used + sizes[i] > limit && !current.is_empty() {
            groups.push(std::mem::take(&mut current));
            used = 0;
        }
        used += sizes[i];
        current.push(i);
    }
    if !current.is_empty() {
        groups.push(current);
    }
    if let Some(last) = groups.last_mut() {
        let mut extra: Vec<usize> = (0..sizes.len()).filter(|i| !last.contains(i)).collect();
        extra.shuffle(&mut rng);
        let mut used: usize = last.iter().map(|i| sizes[*i]).sum();
        for i in extra {
            if used + sizes[i] <= limit {
                used += sizes[i];
                last.push(i);
            }
        }
    }
    groups
}

/// Fits topics for every dyad and emits its digests of the requested kind,
/// sorted by dyad and month.
pub fn build_digests(
    corpora: &[DyadCorpus],
    kind: DigestKind,
    index: Option<&HnswIndex>,
    config: &DigestConfig,
    retrieval: Retrieval,
) -> Result<(Vec<Digest>, Vec<TopicModel>)> {
    config.validate()?;
    if kind == DigestKind::Rag && index.is_none() {
        return Err(Error::invalid("retrieval digests need an index"));
    }
    let per_dyad: Vec<Result<(Vec<Digest>, TopicModel)>> = corpora
        .par_iter()
        .filter(|c| !c.articles.is_empty())
        .map(|c| {
            let model = cluster_topics(c, config.min_topic_size, config.max_topics, config.seed)?;
            let mut out = Vec::new();
            for m in c.months() {
                match kind {
                    DigestKind::Low => out.extend(low_context_digest(c, m, &model, config)),
                    DigestKind::Rag => {
                        out.extend(rag_digest(c, m, &model, index.unwrap(), config, retrieval)?)
                    }
                }
            }
            Ok((out, model))
        })
        .collect();
    let mut digests = Vec::new();
    let mut models = Vec::new();
    for r in per_dyad {
        let (d, m) = r?;
        digests.extend(d);
        models.push(m);
    }
    Ok((digests, models))
}
