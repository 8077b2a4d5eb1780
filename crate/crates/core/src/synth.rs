//! Synthetic corpora with known escalation regimes, for tests and demos.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{write_embeddings, Article, ConflictEvent, DyadProbabilityRow, EmbeddingMatrix};
use crate::labeler::EscalationState;
use crate::month::Month;
use crate::rng::{derive_seed, rng_from};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// Regime-switching fatalities; article embeddings carry no state signal.
    Regimes,
    /// As `Regimes`, with embeddings drawn around a state-specific mean.
    Planted,
}

impl FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regimes" => Ok(Scenario::Regimes),
            "planted" => Ok(Scenario::Planted),
            other => Err(Error::invalid(format!("unknown scenario `{other}`"))),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Regimes => "regimes",
            Scenario::Planted => "planted",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub scenario: Scenario,
    pub seed: u64,
    pub n_dyads: usize,
    pub start: Month,
    pub months: usize,
    pub dim: usize,
    pub context_per_month: usize,
    pub noise_sd: f64,
    /// Distance between state means, in units of the per-dimension noise.
    pub separation: f64,
    pub topics: usize,
}

impl SynthConfig {
    pub fn new(scenario: Scenario) -> Self {
        SynthConfig {
            scenario,
            seed: 17,
            n_dyads: 4,
            start: Month::new(2016, 1).unwrap(),
            months: 84,
            dim: 32,
            context_per_month: 9,
            noise_sd: 0.3,
            separation: 2.0,
            topics: 3,
        }
    }

    pub fn train_end(&self) -> Month {
        self.start.offset(self.months as i32 - 25)
    }

    pub fn val_end(&self) -> Month {
        self.start.offset(self.months as i32 - 1)
    }
}

/// Piecewise log-linear trend: peace spells at zero, 12-month ramps up and
/// down and plateaus in between. Returns the noiseless log level and the
/// true state per month.
pub fn regime_path(months: usize, rng: &mut impl Rng) -> (Vec<f64>, Vec<EscalationState>) {
    use EscalationState::*;
    let mut level = Vec::with_capacity(months);
    let mut truth = Vec::with_capacity(months);
    let floor = 1.5;
    let mut phase = rng.random_range(0..4);
    let mut first = true;
    while level.len() < months {
        let shorten = |n: usize, rng: &mut dyn rand::RngCore| {
            if first {
                rng.random_range(n / 2..=n)
            } else {
                n
            }
        };
        match phase {
            0 => {
                let n = shorten(rng.random_range(6..=10), rng);
                for _ in 0..n {
                    level.push(0.0);
                    truth.push(Peace);
                }
            }
            1 => {
                let slope = rng.random_range(0.4..0.5);
                let n = shorten(12, rng);
                let from = 12 - n;
                for i in from..12 {
                    level.push(floor + slope * (i as f64 + 1.0));
                    truth.push(Escalation);
                }
            }
            2 => {
                let top = level.last().copied().filter(|l| *l > floor).unwrap_or(floor + 5.0);
                let n = shorten(rng.random_range(8..=14), rng);
                for _ in 0..n {
                    level.push(top);
                    truth.push(Plateau);
                }
            }
            _ => {
                let top = level.last().copied().filter(|l| *l > floor).unwrap_or(floor + 5.0);
                let slope = (top - floor) / 12.0;
                let n = shorten(12, rng);
                let from = 12 - n;
                for i in from..12 {
                    level.push(top - slope * (i as f64 + 1.0));
                    truth.push(Deescalation);
                }
            }
        }
        first = false;
        phase = (phase + 1) % 4;
    }
    level.truncate(months);
    truth.truncate(months);
    (level, truth)
}

/// Integer fatalities from log levels with Gaussian noise in log space;
/// zero-level months stay at zero.
pub fn observe(level: &[f64], noise_sd: f64, rng: &mut impl Rng) -> Vec<u64> {
    let noise = Normal::new(0.0, noise_sd).unwrap();
    level
        .iter()
        .map(|l| {
            if *l <= 0.0 {
                0
            } else {
                (l + noise.sample(rng)).exp_m1().round().max(0.0) as u64
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub dyad_id: String,
    pub month: Month,
    pub state_code: u8,
    pub fatalities: u64,
}

#[derive(Clone, Debug)]
pub struct SynthData {
    pub config: SynthConfig,
    pub events: Vec<ConflictEvent>,
    pub articles: Vec<Article>,
    pub embeddings: EmbeddingMatrix,
    pub probs: Vec<DyadProbabilityRow>,
    pub truth: Vec<TruthRow>,
}

const WORDS: &[&str] = &[
    "government", "forces", "rebels", "talks", "village", "province", "market", "border", "convoy",
    "ceasefire", "officials", "aid", "refugees", "council", "militia", "election", "patrol", "river",
    "highway", "harvest", "prices", "mediators", "statement", "district", "clashes", "mission",
    "envoy", "drought", "supplies", "commanders", "residents", "checkpoint",
];

fn body(rng: &mut impl Rng, n: usize) -> String {
    (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

fn date_in(m: Month, rng: &mut impl Rng) -> NaiveDate {
    NaiveDate::from_ymd_opt(m.year(), m.month(), rng.random_range(1..=28)).unwrap()
}

fn unit_axis(dim: usize, axis: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[axis % dim] = 1.0;
    v
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    if cfg.dim < 4 + cfg.topics + 1 {
        return Err(Error::invalid("synthetic embedding dimension too small"));
    }
    let noise = Normal::new(0.0, 1.0).unwrap();
    // State means on axes 0..4, topic offsets on the following axes.
    let shift = cfg.separation / std::f64::consts::SQRT_2;
    let state_mean: Vec<Vec<f64>> = (0..4).map(|c| unit_axis(cfg.dim, c).iter().map(|v| v * shift).collect()).collect();
    let topic_mean: Vec<Vec<f64>> = (0..=cfg.topics)
        .map(|t| unit_axis(cfg.dim, 4 + t).iter().map(|v| v * 3.0).collect())
        .collect();

    let mut events = Vec::new();
    let mut articles = Vec::new();
    let mut ids = Vec::new();
    let mut data: Vec<f32> = Vec::new();
    let mut probs = Vec::new();
    let mut truth = Vec::new();

    for d in 0..cfg.n_dyads {
        let dyad = format!("D{:02}", d + 1);
        let country = format!("C{}", d / 2 + 1);
        let mut rng: ChaCha8Rng = rng_from(derive_seed(cfg.seed, &dyad));
        let (level, states) = regime_path(cfg.months, &mut rng);
        let raw = observe(&level, cfg.noise_sd, &mut rng);
        let embed = |state: EscalationState, topic: usize, rng: &mut ChaCha8Rng| -> Vec<f32> {
            (0..cfg.dim)
                .map(|j| {
                    let mut v = topic_mean[topic][j] + noise.sample(rng);
                    if cfg.scenario == Scenario::Planted {
                        v += state_mean[state.index()][j];
                    }
                    v as f32
                })
                .collect()
        };
        for (i, (&fatal, &state)) in raw.iter().zip(&states).enumerate() {
            let m = cfg.start.offset(i as i32);
            truth.push(TruthRow {
                dyad_id: dyad.clone(),
                month: m,
                state_code: state.code(),
                fatalities: fatal,
            });
            let n_events = if fatal == 0 { 0 } else { 1 + (fatal > 20) as u64 + (fatal > 100) as u64 };
            for e in 0..n_events {
                let share = fatal / n_events + if e == 0 { fatal % n_events } else { 0 };
                let event_id = format!("{dyad}-{m}-e{e}");
                let headline = format!("Fighting near {dyad} site {i}-{e} leaves {share} dead");
                let date = date_in(m, &mut rng);
                events.push(ConflictEvent {
                    event_id: event_id.clone(),
                    dyad_id: dyad.clone(),
                    country_id: country.clone(),
                    date,
                    fatalities: share,
                    headline: headline.clone(),
                });
                let article_id = format!("{dyad}-{m}-g{e}");
                articles.push(Article {
                    article_id: article_id.clone(),
                    date,
                    headline: format!("  {}. ", headline.to_uppercase()),
                    body: body(&mut rng, 300),
                    embedding: None,
                });
                ids.push(article_id);
                data.extend(embed(state, 0, &mut rng));
            }
            for c in 0..cfg.context_per_month + 2 {
                let article_id = format!("{dyad}-{m}-c{c}");
                let topic = 1 + c % cfg.topics;
                let p = if c < cfg.context_per_month {
                    rng.random_range(0.82..0.99)
                } else {
                    rng.random_range(0.3..0.7)
                };
                articles.push(Article {
                    article_id: article_id.clone(),
                    date: date_in(m, &mut rng),
                    headline: format!("Report {c} from {dyad} region"),
                    body: body(&mut rng, 200),
                    embedding: None,
                });
                probs.push(DyadProbabilityRow {
                    article_id: article_id.clone(),
                    probabilities: [(dyad.clone(), p)].into_iter().collect(),
                });
                ids.push(article_id);
                data.extend(embed(state, topic, &mut rng));
            }
        }
    }
    Ok(SynthData {
        config: cfg.clone(),
        events,
        articles,
        embeddings: EmbeddingMatrix {
            dim: cfg.dim,
            ids,
            data,
        },
        probs,
        truth,
    })
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Pipeline configuration matching a synthetic data set written to `dir`.
pub fn pipeline_toml(cfg: &SynthConfig) -> String {
    format!(
        r#"[paths]
events = "events.jsonl"
articles = "articles.jsonl"
embeddings = "embeddings.f32"
probs = "dyad_probs.jsonl"
out = "out"

[window]
data_start = "{start}"
train_end = "{train_end}"
test_start = "{test_start}"
val_end = "{val_end}"

[ingest]
threshold = 0.8
top_n = {n}

[digest]
min_topic_size = 150
kinds = ["low", "rag"]
"#,
        start = cfg.start,
        train_end = cfg.train_end(),
        test_start = cfg.train_end().offset(1),
        val_end = cfg.val_end(),
        n = cfg.n_dyads,
    )
}

/// Writes events, articles, embeddings, dyad probabilities, the true state
/// table and a ready-to-run `pipeline.toml` into `dir`.
pub fn write(data: &SynthData, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_jsonl(&dir.join("events.jsonl"), &data.events)?;
    write_jsonl(&dir.join("articles.jsonl"), &data.articles)?;
    write_jsonl(&dir.join("dyad_probs.jsonl"), &data.probs)?;
    write_embeddings(&dir.join("embeddings.f32"), &data.embeddings)?;
    let truth_path = dir.join("truth.csv");
    let mut w = csv::Writer::from_path(&truth_path).map_err(|e| Error::invalid(e.to_string()))?;
    for t in &data.truth {
        w.serialize(t)?;
    }
    w.flush().map_err(|e| Error::io(&truth_path, e))?;
    let toml_path = dir.join("pipeline.toml");
    fs::write(&toml_path, pipeline_toml(&data.config)).map_err(|e| Error::io(&toml_path, e))
}
