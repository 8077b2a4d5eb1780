use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::ann::HnswConfig;
use crate::digest::{DigestConfig, DigestKind};
use crate::error::{Error, Result};
use crate::eval::ReportConfig;
use crate::forecast::{SoftmaxConfig, Window, DEFAULT_STEPS};
use crate::gp::{PriorSpec, DEFAULT_PRIOR_LOG_SD, DEFAULT_PRIOR_MEDIAN};
use crate::labeler::DEFAULT_TAU;
use crate::month::{Month, MonthRange};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub events: PathBuf,
    pub articles: PathBuf,
    pub embeddings: PathBuf,
    pub probs: PathBuf,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    pub data_start: Month,
    pub train_end: Month,
    pub test_start: Month,
    pub val_end: Month,
}

impl WindowConfig {
    pub fn data(&self) -> Result<MonthRange> {
        MonthRange::new(self.data_start, self.val_end)
    }

    pub fn train(&self) -> Result<MonthRange> {
        MonthRange::new(self.data_start, self.train_end)
    }

    pub fn forecast_window(&self) -> Window {
        Window {
            train_end: self.train_end,
            test_start: self.test_start,
            val_end: self.val_end,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestSection {
    pub threshold: f64,
    pub top_n: usize,
}

impl Default for IngestSection {
    fn default() -> Self {
        IngestSection { threshold: 0.8, top_n: 25 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GpSection {
    pub prior_median: f64,
    pub prior_log_sd: f64,
    pub hierarchical: bool,
}

impl Default for GpSection {
    fn default() -> Self {
        GpSection {
            prior_median: DEFAULT_PRIOR_MEDIAN,
            prior_log_sd: DEFAULT_PRIOR_LOG_SD,
            hierarchical: true,
        }
    }
}

impl GpSection {
    pub fn prior(&self) -> Result<PriorSpec> {
        PriorSpec::from_median(self.prior_median, self.prior_log_sd)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelsSection {
    pub tau: f64,
}

impl Default for LabelsSection {
    fn default() -> Self {
        LabelsSection { tau: DEFAULT_TAU }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IndexSection {
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    pub seed: u64,
}

impl Default for IndexSection {
    fn default() -> Self {
        let d = HnswConfig::default();
        IndexSection {
            m: d.m,
            ef_construction: d.ef_construction,
            ef_search: d.ef_search,
            seed: d.seed,
        }
    }
}

impl IndexSection {
    pub fn hnsw(&self) -> HnswConfig {
        HnswConfig {
            m: self.m,
            ef_construction: self.ef_construction,
            ef_search: self.ef_search,
            seed: self.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DigestSection {
    pub kinds: Vec<DigestKind>,
    pub min_topic_size: usize,
    pub max_topics: usize,
    pub context_limit: usize,
    pub snippet_limit: usize,
    pub seed: u64,
}

impl Default for DigestSection {
    fn default() -> Self {
        let d = DigestConfig::default();
        DigestSection {
            kinds: vec![DigestKind::Low, DigestKind::Rag],
            min_topic_size: d.min_topic_size,
            max_topics: d.max_topics,
            context_limit: d.context_limit,
            snippet_limit: d.snippet_limit,
            seed: d.seed,
        }
    }
}

impl DigestSection {
    pub fn digest_config(&self) -> DigestConfig {
        DigestConfig {
            snippet_limit: self.snippet_limit,
            context_limit: self.context_limit,
            min_topic_size: self.min_topic_size,
            max_topics: self.max_topics,
            seed: self.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForecastSection {
    pub steps: Vec<usize>,
    pub lr: f64,
    pub epochs: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for ForecastSection {
    fn default() -> Self {
        let d = SoftmaxConfig::default();
        ForecastSection {
            steps: DEFAULT_STEPS.to_vec(),
            lr: d.lr,
            epochs: d.epochs,
            l2: d.l2,
            seed: d.seed,
        }
    }
}

impl ForecastSection {
    pub fn softmax(&self) -> SoftmaxConfig {
        SoftmaxConfig {
            lr: self.lr,
            epochs: self.epochs,
            seed: self.seed,
            l2: self.l2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateSection {
    pub baseline_window: usize,
    pub n_boot: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        let d = ReportConfig::default();
        EvaluateSection {
            baseline_window: crate::eval::DEFAULT_WINDOW,
            n_boot: d.n_boot,
            level: d.level,
            seed: d.seed,
        }
    }
}

impl EvaluateSection {
    pub fn report(&self) -> ReportConfig {
        ReportConfig {
            n_boot: self.n_boot,
            level: self.level,
            seed: self.seed,
        }
    }
}

/// Whole-pipeline configuration, read from a single TOML file. Relative
/// paths resolve against the file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    pub window: WindowConfig,
    #[serde(default)]
    pub ingest: IngestSection,
    #[serde(default)]
    pub gp: GpSection,
    #[serde(default)]
    pub labels: LabelsSection,
    #[serde(default)]
    pub index: IndexSection,
    #[serde(default)]
    pub digest: DigestSection,
    #[serde(default)]
    pub forecast: ForecastSection,
    #[serde(default)]
    pub evaluate: EvaluateSection,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl PipelineConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, &base)
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.window;
        if w.data_start > w.train_end {
            return Err(Error::Config(format!("data_start {} is after train_end {}", w.data_start, w.train_end)));
        }
        w.forecast_window().validate().map_err(|e| Error::Config(e.to_string()))?;
        if !(self.ingest.threshold > 0.0 && self.ingest.threshold <= 1.0) {
            return Err(Error::Config(format!("ingest.threshold {} outside (0, 1]", self.ingest.threshold)));
        }
        if self.ingest.top_n == 0 {
            return Err(Error::Config("ingest.top_n must be positive".into()));
        }
        self.gp.prior()?;
        if !(self.labels.tau > 0.0) {
            return Err(Error::Config(format!("labels.tau must be positive, got {}", self.labels.tau)));
        }
        self.index.hnsw().validate()?;
        if self.digest.kinds.is_empty() {
            return Err(Error::Config("digest.kinds is empty".into()));
        }
        self.digest.digest_config().validate()?;
        if self.forecast.steps.is_empty() {
            return Err(Error::Config("forecast.steps is empty".into()));
        }
        if !(self.forecast.lr > 0.0) || self.forecast.l2 < 0.0 {
            return Err(Error::Config("forecast.lr must be positive and l2 non-negative".into()));
        }
        let e = &self.evaluate;
        if e.baseline_window == 0 || e.n_boot == 0 || !(e.level > 0.0 && e.level < 1.0) {
            return Err(Error::Config("evaluate needs baseline_window, n_boot > 0 and level in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(&self.paths.out)
    }

    /// Digest of the canonical JSON form; independent of field order in
    /// the TOML source.
    pub fn hash(&self) -> String {
        canonical_hash(self)
    }
}

/// sha256 over compact JSON with object keys sorted.
pub fn canonical_hash<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("config serializes");
    let text = serde_json::to_string(&v).expect("value serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}
