use std::collections::{BTreeMap, BTreeSet};

use nexus_core::ann::{HnswConfig, HnswIndex};
use nexus_core::digest::{
    build_digests, cluster_topics, low_context_digest, rag_digest, CorpusArticle, DigestConfig,
    DigestKind, DyadCorpus, Retrieval, Snippet,
};
use nexus_core::Month;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const DIM: usize = 16;

fn unit(v: Vec<f32>) -> Vec<f32> {
    let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn noisy_axis(axis: usize, sd: f64, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let noise = Normal::new(0.0, sd).unwrap();
    let mut v: Vec<f32> = (0..DIM).map(|_| noise.sample(rng) as f32).collect();
    v[axis] += 1.0;
    unit(v)
}

fn article(id: String, month: Month, gold: bool, embedding: Vec<f32>, tokens: usize) -> CorpusArticle {
    let text = (0..tokens).map(|i| format!("{id}t{i}")).collect::<Vec<_>>().join(" ");
    CorpusArticle {
        snippet: Snippet { article_id: id.clone(), text, token_count: tokens },
        article_id: id,
        month,
        gold,
        embedding,
    }
}

fn target() -> Month {
    "2021-03".parse().unwrap()
}

/// Three topic directions (axes 0..3). The target month holds 6 context
/// articles per topic and 2 event articles lying in topic 0; other months
/// pad each topic to 25 articles.
fn three_topic_fixture(seed: u64, tokens: usize) -> DyadCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = target();
    let mut arts = Vec::new();
    for t in 0..3 {
        for i in 0..6 {
            arts.push(article(format!("c{t}_{i:02}"), m, false, noisy_axis(t, 0.05, &mut rng), tokens));
        }
        let pad = if t == 0 { 17 } else { 19 };
        for i in 0..pad {
            let month = m.offset(1 + (i % 4) as i32);
            arts.push(article(format!("p{t}_{i:02}"), month, false, noisy_axis(t, 0.05, &mut rng), tokens));
        }
    }
    for e in 0..2 {
        arts.push(article(format!("e{e}"), m, true, noisy_axis(0, 0.05, &mut rng), tokens));
    }
    arts.sort_by(|a, b| a.article_id.cmp(&b.article_id));
    DyadCorpus { dyad_id: "D1".into(), articles: arts }
}

fn index_of(corpora: &[DyadCorpus]) -> HnswIndex {
    let mut idx = HnswIndex::new(DIM, HnswConfig::default()).unwrap();
    for c in corpora {
        for a in &c.articles {
            idx.insert(a.article_id.clone(), &a.embedding).unwrap();
        }
    }
    idx
}

fn config(context_limit: usize) -> DigestConfig {
    DigestConfig { context_limit, min_topic_size: 20, ..Default::default() }
}

#[test]
fn two_blobs_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let m = target();
    let mut arts = Vec::new();
    for blob in 0..2 {
        for i in 0..400 {
            arts.push(article(format!("b{blob}_{i:03}"), m, false, noisy_axis(blob, 0.15, &mut rng), 5));
        }
    }
    let corpus = DyadCorpus { dyad_id: "B".into(), articles: arts };
    let model = cluster_topics(&corpus, 200, 21, 17).unwrap();
    assert!(model.sizes().iter().all(|s| *s >= 200));
    let mut majority = 0;
    for t in 0..model.len() {
        let mut counts = [0usize; 2];
        for (id, tt) in &model.assignment {
            if *tt == t {
                counts[if id.starts_with("b0") { 0 } else { 1 }] += 1;
            }
        }
        majority += counts[0].max(counts[1]);
    }
    let purity = majority as f64 / 800.0;
    assert!(purity >= 0.99, "purity {purity}");
}

#[test]
fn small_and_identical_inputs_give_one_topic() {
    let m = target();
    let same: Vec<CorpusArticle> =
        (0..50).map(|i| article(format!("s{i:02}"), m, i == 0, unit(vec![1.0; DIM]), 3)).collect();
    let corpus = DyadCorpus { dyad_id: "S".into(), articles: same };
    let model = cluster_topics(&corpus, 10, 21, 1).unwrap();
    assert_eq!(model.len(), 1);
    assert_eq!(model.violent_topic, None);

    let small = three_topic_fixture(1, 4);
    let model = cluster_topics(&small, 40, 21, 1).unwrap();
    assert_eq!(model.len(), 1);
    assert_eq!(model.assignment.len(), small.articles.len());
}

#[test]
fn fixture_topics_and_violent_topic() {
    let corpus = three_topic_fixture(2, 10);
    let model = cluster_topics(&corpus, 20, 21, 17).unwrap();
    assert_eq!(model.len(), 3);
    let v = model.violent_topic.unwrap();
    assert_eq!(model.topic_of("e0"), Some(v));
    assert_eq!(model.topic_of("c0_00"), Some(v));
}

#[test]
fn low_context_counts() {
    let corpus = three_topic_fixture(3, 10);
    let model = cluster_topics(&corpus, 20, 21, 17).unwrap();
    let d = low_context_digest(&corpus, target(), &model, &config(8192)).unwrap();
    assert_eq!(d.snippets.len(), 2 + 5 * 3);
    assert!(d.snippets[0].article_id.starts_with('e') && d.snippets[1].article_id.starts_with('e'));
    assert_eq!(d.total_tokens, 170);
    assert_eq!(d.member_embeddings.len(), d.snippets.len());

    // A month with two context articles per topic and no events.
    let m = target().offset(40);
    let mut small = corpus.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for t in 0..3 {
        for i in 0..2 {
            small.articles.push(article(format!("x{t}{i}"), m, false, noisy_axis(t, 0.05, &mut rng), 10));
        }
    }
    let model = cluster_topics(&small, 20, 21, 17).unwrap();
    let d = low_context_digest(&small, m, &model, &config(8192)).unwrap();
    assert_eq!(d.snippets.len(), 6);
    assert!(low_context_digest(&small, m.offset(1), &model, &config(8192)).is_none());
}

#[test]
fn single_event_month_is_event_only() {
    let m = target();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let corpus = DyadCorpus {
        dyad_id: "E".into(),
        articles: vec![article("ev".into(), m, true, noisy_axis(1, 0.1, &mut rng), 7)],
    };
    let model = cluster_topics(&corpus, 20, 21, 1).unwrap();
    let d = low_context_digest(&corpus, m, &model, &config(8192)).unwrap();
    assert_eq!(d.snippet_ids(), vec!["ev".to_string()]);
}

#[test]
fn rag_blocks_and_limits() {
    let corpus = three_topic_fixture(6, 100);
    let model = cluster_topics(&corpus, 20, 21, 17).unwrap();
    let idx = index_of(std::slice::from_ref(&corpus));
    let non_violent = model.non_violent().len();
    assert_eq!(non_violent, 2);

    let wide = rag_digest(&corpus, target(), &model, &idx, &config(8192), Retrieval::Approximate).unwrap();
    assert_eq!(wide.len(), 1);
    assert_eq!(wide[0].snippets.len(), 2 * (1 + non_violent));
    let ids = wide[0].snippet_ids();
    for block in ids.chunks(1 + non_violent) {
        assert!(block[0].starts_with('e'));
        let topics: BTreeSet<usize> = block[1..].iter().map(|id| model.topic_of(id).unwrap()).collect();
        assert_eq!(topics.len(), non_violent);
        assert!(!topics.contains(&model.violent_topic.unwrap()));
    }

    // Each block is 300 tokens, so a 400-token limit forces one block per digest.
    let tight = rag_digest(&corpus, target(), &model, &idx, &config(400), Retrieval::Approximate).unwrap();
    assert_eq!(tight.len(), 2);
    let mut events = BTreeSet::new();
    for d in &tight {
        assert!(d.total_tokens <= 400);
        assert_eq!(d.snippets.len(), 1 + non_violent);
        events.insert(d.snippets[0].article_id.clone());
    }
    assert_eq!(events.len(), 2);
}

#[test]
fn rag_falls_back_without_events() {
    let corpus = three_topic_fixture(7, 10);
    let model = cluster_topics(&corpus, 20, 21, 17).unwrap();
    let idx = index_of(std::slice::from_ref(&corpus));
    let m = target().offset(1);
    let rag = rag_digest(&corpus, m, &model, &idx, &config(8192), Retrieval::Approximate).unwrap();
    let low = low_context_digest(&corpus, m, &model, &config(8192)).unwrap();
    assert_eq!(rag.len(), 1);
    assert_eq!(rag[0].kind, DigestKind::Rag);
    assert_eq!(rag[0].snippets, low.snippets);
}

fn benchmark(seed: u64) -> Vec<DyadCorpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = target();
    (0..3)
        .map(|d| {
            let mut arts = Vec::new();
            for mo in 0..12 {
                let m = start.offset(mo);
                for t in 0..4 {
                    for i in 0..6 {
                        let emb = noisy_axis((d * 4 + t) % DIM, 0.4, &mut rng);
                        arts.push(article(format!("d{d}m{mo:02}t{t}i{i}"), m, false, emb, 20));
                    }
                }
                for e in 0..3 {
                    let emb = noisy_axis((d * 4) % DIM, 0.4, &mut rng);
                    arts.push(article(format!("d{d}m{mo:02}e{e}"), m, true, emb, 20));
                }
            }
            arts.sort_by(|a, b| a.article_id.cmp(&b.article_id));
            DyadCorpus { dyad_id: format!("D{d}"), articles: arts }
        })
        .collect()
}

#[test]
fn build_is_deterministic_and_bounded() {
    let corpora = benchmark(11);
    let idx = index_of(&corpora);
    let cfg = DigestConfig { context_limit: 300, min_topic_size: 40, ..Default::default() };
    let (a, models) = build_digests(&corpora, DigestKind::Rag, Some(&idx), &cfg, Retrieval::Approximate).unwrap();
    let (b, _) = build_digests(&corpora, DigestKind::Rag, Some(&idx), &cfg, Retrieval::Approximate).unwrap();
    assert_eq!(a, b);
    assert_eq!(models.len(), 3);
    let dyad_of: BTreeMap<&str, &str> = corpora
        .iter()
        .flat_map(|c| c.articles.iter().map(move |x| (x.article_id.as_str(), c.dyad_id.as_str())))
        .collect();
    for d in &a {
        assert!(d.total_tokens <= 300);
        assert!(!d.snippets.is_empty());
        for s in &d.snippets {
            assert_eq!(dyad_of[s.article_id.as_str()], d.dyad_id);
        }
    }
    let (low, _) = build_digests(&corpora, DigestKind::Low, None, &cfg, Retrieval::Approximate).unwrap();
    assert_eq!(low.len(), 36);
    assert!(build_digests(&corpora, DigestKind::Rag, None, &cfg, Retrieval::Approximate).is_err());
}

#[test]
fn exact_retrieval_agrees_with_index() {
    let corpora = benchmark(12);
    let idx = index_of(&corpora);
    let cfg = DigestConfig { min_topic_size: 40, ..Default::default() };
    let (approx, _) = build_digests(&corpora, DigestKind::Rag, Some(&idx), &cfg, Retrieval::Approximate).unwrap();
    let (exact, _) = build_digests(&corpora, DigestKind::Rag, Some(&idx), &cfg, Retrieval::Exact).unwrap();
    assert_eq!(approx.len(), exact.len());
    let mut total = 0;
    let mut differ = 0;
    for (a, e) in approx.iter().zip(&exact) {
        assert_eq!(a.snippets.len(), e.snippets.len());
        for (x, y) in a.snippets.iter().zip(&e.snippets) {
            total += 1;
            differ += (x.article_id != y.article_id) as usize;
        }
    }
    assert!(differ as f64 <= 0.05 * total as f64, "{differ} of {total} differ");
}
