use std::collections::{BTreeMap, BTreeSet};

use log::warn;
use serde::{Deserialize, Serialize};

use super::{Article, DyadProbabilityRow, HeadlineMatch};
use crate::error::{Error, Result};
use crate::month::{Month, MonthRange};

/// One article assigned to one dyad. Ambiguous gold articles appear once per
/// dyad they matched.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabeledArticle {
    pub dyad_id: String,
    pub article_id: String,
    pub month: Month,
    /// Back-labeled from an event headline rather than by probability.
    pub gold: bool,
    #[serde(default)]
    pub ambiguous: bool,
}

#[derive(Clone, Debug, Default)]
pub struct FilterOutcome {
    pub labeled: Vec<LabeledArticle>,
    pub warnings: Vec<String>,
}

/// Keeps gold articles (for allowed dyads) unconditionally, and otherwise
/// assigns an article to its argmax allowed dyad when that probability is
/// at least `threshold`.
pub fn apply_dyad_filter(
    articles: &[Article],
    gold: &HeadlineMatch,
    probs: &[DyadProbabilityRow],
    threshold: f64,
    allowed: &BTreeSet<String>,
) -> Result<FilterOutcome> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::invalid(format!("threshold {threshold} outside (0, 1]")));
    }
    let by_id: BTreeMap<&str, &Article> =
        articles.iter().map(|a| (a.article_id.as_str(), a)).collect();
    let mut out = FilterOutcome::default();

    for a in articles {
        if let Some(dyads) = gold.dyads_of(&a.article_id) {
            let ambiguous = gold.ambiguous.contains(&a.article_id);
            for d in dyads.iter().filter(|d| allowed.contains(*d)) {
                out.labeled.push(LabeledArticle {
                    dyad_id: d.clone(),
                    article_id: a.article_id.clone(),
                    month: a.month(),
                    gold: true,
                    ambiguous,
                });
            }
        }
    }

    for row in probs {
        let Some(article) = by_id.get(row.article_id.as_str()) else {
            let msg = format!("probability row for unknown article {}", row.article_id);
            warn!("{msg}");
            out.warnings.push(msg);
            continue;
        };
        if gold.is_gold(&row.article_id) {
            continue;
        }
        // BTreeMap iteration is lexicographic, so strict > keeps the first
        // dyad on ties.
        let mut best: Option<(&String, f64)> = None;
        for (d, &p) in &row.probabilities {
            if !allowed.contains(d) {
                continue;
            }
            if best.is_none_or(|(_, bp)| p > bp) {
                best = Some((d, p));
            }
        }
        if let Some((d, p)) = best {
            if p >= threshold {
                out.labeled.push(LabeledArticle {
                    dyad_id: d.clone(),
                    article_id: article.article_id.clone(),
                    month: article.month(),
                    gold: false,
                    ambiguous: false,
                });
            }
        }
    }

    out.labeled.sort();
    out.labeled.dedup();
    Ok(out)
}

/// The `n` dyads with most labeled articles inside `window`, ties broken by
/// dyad id.
pub fn select_top_dyads(labeled: &[LabeledArticle], window: MonthRange, n: usize) -> Vec<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for a in labeled.iter().filter(|a| window.contains(a.month)) {
        *counts.entry(a.dyad_id.as_str()).or_default() += 1;
    }
    if counts.is_empty() {
        warn!("no labeled articles in window {window}");
        return Vec::new();
    }
    if counts.len() < n {
        warn!("only {} dyads present in {window}, fewer than {n} requested", counts.len());
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    ranked.into_iter().take(n).map(|(d, _)| d.to_string()).collect()
}
