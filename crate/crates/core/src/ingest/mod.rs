//! Corpus ingestion: events, articles, embeddings and dyad-probability rows,
//! plus headline back-labeling, probability filtering and monthly aggregation.

mod aggregate;
mod filter;
mod headline;
mod load;

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::month::Month;

pub use aggregate::aggregate_monthly;
pub use filter::{apply_dyad_filter, select_top_dyads, FilterOutcome, LabeledArticle};
pub use headline::{match_headlines, normalize_headline, HeadlineMatch};
pub use load::{
    attach_embeddings, load_articles, load_dyad_probs, load_embeddings, load_events, meta_path,
    write_embeddings, EmbeddingMatrix, EmbeddingMeta, LoadReport, RowError,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConflictEvent {
    pub event_id: String,
    pub dyad_id: String,
    #[serde(default)]
    pub country_id: String,
    pub date: NaiveDate,
    pub fatalities: u64,
    pub headline: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Article {
    pub article_id: String,
    pub date: NaiveDate,
    pub headline: String,
    pub body: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f32>>,
}

impl Article {
    pub fn month(&self) -> Month {
        Month::from_date(self.date)
    }
}

/// Per-article dyad membership probabilities from an external classifier.
/// Probabilities need not sum to one; the remainder is an implicit "other".
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DyadProbabilityRow {
    pub article_id: String,
    #[serde(rename = "probs")]
    pub probabilities: BTreeMap<String, f64>,
}

/// Contiguous monthly grid of fatalities for one dyad.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DyadMonthSeries {
    pub dyad_id: String,
    pub country_id: String,
    pub months: Vec<Month>,
    pub log_fatalities: Vec<f64>,
    pub raw_fatalities: Vec<u64>,
}

impl DyadMonthSeries {
    pub fn len(&self) -> usize {
        self.months.len()
    }

    pub fn is_empty(&self) -> bool {
        self.months.is_empty()
    }

    /// Copy of the series restricted to months `<= end`.
    pub fn truncated(&self, end: Month) -> DyadMonthSeries {
        let keep = self.months.iter().take_while(|m| **m <= end).count();
        DyadMonthSeries {
            dyad_id: self.dyad_id.clone(),
            country_id: self.country_id.clone(),
            months: self.months[..keep].to_vec(),
            log_fatalities: self.log_fatalities[..keep].to_vec(),
            raw_fatalities: self.raw_fatalities[..keep].to_vec(),
        }
    }

    /// Month ordinals as real-valued GP inputs.
    pub fn times(&self) -> Vec<f64> {
        self.months.iter().map(|m| m.ordinal() as f64).collect()
    }
}
