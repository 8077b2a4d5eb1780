//! Topic clustering and dyad-month digest assembly.

mod assemble;
mod topics;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::ann::normalize;
use crate::error::{Error, Result};
use crate::ingest::{Article, LabeledArticle};
use crate::month::Month;

pub use assemble::{build_digests, low_context_digest, rag_digest, Retrieval};
pub use topics::{cluster_topics, initial_topic_count, TopicModel};

pub const DEFAULT_SNIPPET_LIMIT: usize = 256;
pub const DEFAULT_CONTEXT_LIMIT: usize = 8192;
pub const DEFAULT_MIN_TOPIC_SIZE: usize = 200;
pub const DEFAULT_MAX_TOPICS: usize = 21;
/// Context articles taken per topic in a low-context digest.
pub const PER_TOPIC: usize = 5;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snippet {
    pub article_id: String,
    pub text: String,
    pub token_count: usize,
}

/// Leading `limit` whitespace tokens of headline followed by body.
pub fn snippet(article: &Article, limit: usize) -> Result<Snippet> {
    if limit == 0 {
        return Err(Error::invalid("snippet limit must be positive"));
    }
    let tokens: Vec<&str> = article
        .headline
        .split_whitespace()
        .chain(article.body.split_whitespace())
        .take(limit)
        .collect();
    if tokens.is_empty() {
        return Err(Error::invalid(format!(
            "article {} has empty headline and body",
            article.article_id
        )));
    }
    Ok(Snippet {
        article_id: article.article_id.clone(),
        text: tokens.join(" "),
        token_count: tokens.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DigestKind {
    Low,
    Rag,
}

impl DigestKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DigestKind::Low => "low",
            DigestKind::Rag => "rag",
        }
    }
}

impl fmt::Display for DigestKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DigestKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low" => Ok(DigestKind::Low),
            "rag" => Ok(DigestKind::Rag),
            other => Err(Error::invalid(format!("digest kind `{other}` (expected low or rag)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Digest {
    pub dyad_id: String,
    pub month: Month,
    pub kind: DigestKind,
    pub snippets: Vec<Snippet>,
    pub member_embeddings: Vec<Vec<f32>>,
    pub total_tokens: usize,
    pub seed: u64,
}

impl Digest {
    pub fn snippet_ids(&self) -> Vec<String> {
        self.snippets.iter().map(|s| s.article_id.clone()).collect()
    }

    pub fn text(&self) -> String {
        self.snippets
            .iter()
            .map(|s| s.text.as_str())
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    pub fn to_record(&self) -> DigestRecord {
        DigestRecord {
            dyad_id: self.dyad_id.clone(),
            month: self.month,
            kind: self.kind,
            snippet_ids: self.snippet_ids(),
            text: self.text(),
            total_tokens: self.total_tokens,
            seed: self.seed,
        }
    }
}

/// One line of `digests.jsonl`. Member embeddings are not stored; they are
/// recovered from the embedding file by snippet id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DigestRecord {
    pub dyad_id: String,
    pub month: Month,
    pub kind: DigestKind,
    pub snippet_ids: Vec<String>,
    pub text: String,
    pub total_tokens: usize,
    pub seed: u64,
}

pub fn write_digests(path: &Path, digests: &[Digest]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for d in digests {
        serde_json::to_writer(&mut w, &d.to_record())?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_digests(path: &Path) -> Result<Vec<DigestRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DigestRecord = serde_json::from_str(&line)
            .map_err(|e| Error::invalid(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DigestConfig {
    pub snippet_limit: usize,
    pub context_limit: usize,
    pub min_topic_size: usize,
    pub max_topics: usize,
    pub seed: u64,
}

impl Default for DigestConfig {
    fn default() -> Self {
        DigestConfig {
            snippet_limit: DEFAULT_SNIPPET_LIMIT,
            context_limit: DEFAULT_CONTEXT_LIMIT,
            min_topic_size: DEFAULT_MIN_TOPIC_SIZE,
            max_topics: DEFAULT_MAX_TOPICS,
            seed: 17,
        }
    }
}

impl DigestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.snippet_limit == 0 || self.min_topic_size == 0 {
            return Err(Error::invalid("snippet limit and min topic size must be positive"));
        }
        if self.context_limit < self.snippet_limit {
            return Err(Error::invalid(format!(
                "context limit {} is below the snippet limit {}",
                self.context_limit, self.snippet_limit
            )));
        }
        if self.max_topics < 3 {
            return Err(Error::invalid("max_topics must be at least 3"));
        }
        Ok(())
    }
}

/// An article of one dyad ready for digesting: unit embedding and snippet.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusArticle {
    pub article_id: String,
    pub month: Month,
    pub gold: bool,
    pub embedding: Vec<f32>,
    pub snippet: Snippet,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DyadCorpus {
    pub dyad_id: String,
    pub articles: Vec<CorpusArticle>,
}

impl DyadCorpus {
    pub fn months(&self) -> Vec<Month> {
        let mut m: Vec<Month> = self.articles.iter().map(|a| a.month).collect();
        m.sort();
        m.dedup();
        m
    }

    pub fn get(&self, article_id: &str) -> Option<&CorpusArticle> {
        self.articles.iter().find(|a| a.article_id == article_id)
    }
}

/// Groups labeled articles by dyad, attaching snippets and normalized
/// embeddings. Articles without text or a usable embedding are skipped.
pub fn build_corpora(
    labeled: &[LabeledArticle],
    articles: &[Article],
    embeddings: &BTreeMap<String, Vec<f32>>,
    snippet_limit: usize,
) -> Result<Vec<DyadCorpus>> {
    let by_id: HashMap<&str, &Article> = articles.iter().map(|a| (a.article_id.as_str(), a)).collect();
    let mut cache: HashMap<&str, Option<(Vec<f32>, Snippet)>> = HashMap::new();
    let mut groups: BTreeMap<&str, Vec<CorpusArticle>> = BTreeMap::new();
    for l in labeled {
        let prepared = cache.entry(l.article_id.as_str()).or_insert_with(|| {
            let Some(article) = by_id.get(l.article_id.as_str()) else {
                warn!("labeled article {} not found among articles", l.article_id);
                return None;
            };
            let emb = article.embedding.as_ref().or_else(|| embeddings.get(&l.article_id));
            let Some(emb) = emb else {
                warn!("article {} has no embedding, skipped", l.article_id);
                return None;
            };
            let unit = match normalize(emb) {
                Ok(u) => u,
                Err(e) => {
                    warn!("article {}: {e}, skipped", l.article_id);
                    return None;
                }
            };
            match snippet(article, snippet_limit) {
                Ok(s) => Some((unit, s)),
                Err(e) => {
                    warn!("{e}, skipped");
                    None
                }
            }
        });
        if let Some((emb, snip)) = prepared {
            groups.entry(l.dyad_id.as_str()).or_default().push(CorpusArticle {
                article_id: l.article_id.clone(),
                month: l.month,
                gold: l.gold,
                embedding: emb.clone(),
                snippet: snip.clone(),
            });
        }
    }
    Ok(groups
        .into_iter()
        .map(|(d, mut arts)| {
            arts.sort_by(|a, b| a.article_id.cmp(&b.article_id));
            arts.dedup_by(|a, b| a.article_id == b.article_id);
            DyadCorpus {
                dyad_id: d.to_string(),
                articles: arts,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn article(body_tokens: usize) -> Article {
        Article {
            article_id: "a".into(),
            date: NaiveDate::from_ymd_opt(2021, 3, 4).unwrap(),
            headline: "Head line".into(),
            body: (0..body_tokens).map(|i| format!("w{i}")).collect::<Vec<_>>().join("  "),
            embedding: None,
        }
    }

    #[test]
    fn snippet_truncates_at_limit() {
        assert_eq!(snippet(&article(298), 256).unwrap().token_count, 256);
        let s = snippet(&article(8), 256).unwrap();
        assert_eq!(s.token_count, 10);
        assert_eq!(s.text, "Head line w0 w1 w2 w3 w4 w5 w6 w7");
        let exact = snippet(&article(254), 256).unwrap();
        assert_eq!(exact.token_count, 256);
        assert!(exact.text.ends_with("w253"));
    }

    #[test]
    fn empty_article_errors() {
        let mut a = article(0);
        a.headline = "  ".into();
        assert!(snippet(&a, 256).is_err());
        assert!(snippet(&article(3), 0).is_err());
    }

    #[test]
    fn kind_parses() {
        assert_eq!("rag".parse::<DigestKind>().unwrap(), DigestKind::Rag);
        assert!("high".parse::<DigestKind>().is_err());
        assert_eq!(serde_json::to_string(&DigestKind::Low).unwrap(), "\"low\"");
    }

    #[test]
    fn config_rejects_small_context() {
        let c = DigestConfig { context_limit: 100, ..Default::default() };
        assert!(c.validate().is_err());
        assert!(DigestConfig::default().validate().is_ok());
    }
}
