//! Stage orchestration: configuration, per-stage runners and run manifests.
//!
//! Each stage records a manifest with the digests of what it read and
//! wrote. A stage is skipped when its key (own config section, input
//! digests and the keys of the stages it depends on) matches the stored
//! manifest and its outputs are unchanged on disk.

mod config;
mod stages;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest as _, Sha256};

use crate::error::{Error, Result};
use crate::labeler::LabelerConfig;

pub use config::{
    canonical_hash, DigestSection, EvaluateSection, ForecastSection, GpSection, IndexSection, IngestSection,
    LabelsSection, PathsConfig, PipelineConfig, WindowConfig,
};
pub use stages::{
    build_index, digest_stage, evaluate_stage, fit_stage, forecast_file, forecast_stage, index_stage,
    index_vectors, ingest_stage, label_stage, model_file, parse_forecast_file, read_fits_dir, read_label_dir,
    read_series_dir, BaselineParams, IngestParams, IngestSummary, ARTICLES_FILE, EMBEDDINGS_FILE, LABELED_FILE,
    LABELS_TRAIN, LABELS_VAL,
};

pub const TOOL_VERSION: &str = concat!("nexus ", env!("CARGO_PKG_VERSION"));

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Ingest,
    FitTrends,
    Label,
    Index,
    Digest,
    Forecast,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Ingest,
        Stage::FitTrends,
        Stage::Label,
        Stage::Index,
        Stage::Digest,
        Stage::Forecast,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::FitTrends => "fit-trends",
            Stage::Label => "label",
            Stage::Index => "index",
            Stage::Digest => "digest",
            Stage::Forecast => "forecast",
            Stage::Evaluate => "evaluate",
        }
    }

    /// Stages whose outputs this one reads.
    pub fn upstream(self) -> &'static [Stage] {
        match self {
            Stage::Ingest => &[],
            Stage::FitTrends => &[Stage::Ingest],
            Stage::Label => &[Stage::Ingest, Stage::FitTrends],
            Stage::Index => &[Stage::Ingest],
            Stage::Digest => &[Stage::Ingest, Stage::Index],
            Stage::Forecast => &[Stage::Ingest, Stage::Label, Stage::Digest],
            Stage::Evaluate => &[Stage::Label, Stage::Forecast],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub stage: String,
    pub config_hash: String,
    pub stage_key: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub wall_time_secs: f64,
    pub tool_version: String,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn collect_files(path: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        entries.sort();
        for e in entries {
            collect_files(&e, out)?;
        }
    } else if path.exists() {
        out.push(path.to_path_buf());
    } else {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "missing stage input or output"),
        ));
    }
    Ok(())
}

/// sha256 of every file under the given paths, keyed by path relative to
/// `base` where possible.
pub fn digest_paths(paths: &[PathBuf], base: &Path) -> Result<BTreeMap<String, String>> {
    let mut files = Vec::new();
    for p in paths {
        collect_files(p, &mut files)?;
    }
    let mut out = BTreeMap::new();
    for f in files {
        let key = f.strip_prefix(base).unwrap_or(&f).to_string_lossy().replace('\\', "/");
        out.insert(key, sha256_file(&f)?);
    }
    Ok(out)
}

/// Where each stage writes, relative to the output directory.
pub struct Layout {
    pub out: PathBuf,
}

impl Layout {
    pub fn ingest(&self) -> PathBuf {
        self.out.join("ingest")
    }
    pub fn series(&self) -> PathBuf {
        self.ingest().join("series")
    }
    pub fn labeled(&self) -> PathBuf {
        self.ingest().join("labeled")
    }
    pub fn embeddings(&self) -> PathBuf {
        self.labeled().join(EMBEDDINGS_FILE)
    }
    pub fn fits(&self) -> PathBuf {
        self.out.join("fits")
    }
    pub fn labels(&self) -> PathBuf {
        self.out.join("labels")
    }
    pub fn index(&self) -> PathBuf {
        self.out.join("index").join("index.hnsw")
    }
    pub fn digests(&self) -> PathBuf {
        self.out.join("digests").join("digests.jsonl")
    }
    pub fn forecasts(&self) -> PathBuf {
        self.out.join("forecasts")
    }
    pub fn report(&self) -> PathBuf {
        self.out.join("report")
    }
    pub fn manifest(&self, stage: Stage) -> PathBuf {
        self.out.join("manifests").join(format!("{}.json", stage.name()))
    }
}

fn with_meta(matrix: &Path) -> Vec<PathBuf> {
    vec![matrix.to_path_buf(), crate::ingest::meta_path(matrix)]
}

impl PipelineConfig {
    pub fn layout(&self) -> Layout {
        Layout { out: self.out_dir() }
    }

    fn stage_inputs(&self, stage: Stage) -> Vec<PathBuf> {
        let l = self.layout();
        match stage {
            Stage::Ingest => {
                let mut v = vec![
                    self.resolve(&self.paths.events),
                    self.resolve(&self.paths.articles),
                    self.resolve(&self.paths.probs),
                ];
                v.extend(with_meta(&self.resolve(&self.paths.embeddings)));
                v
            }
            Stage::FitTrends => vec![l.series()],
            Stage::Label => vec![l.series(), l.fits()],
            Stage::Index => with_meta(&l.embeddings()),
            Stage::Digest => vec![l.labeled(), l.index()],
            Stage::Forecast => {
                let mut v = vec![l.digests(), l.labels()];
                v.extend(with_meta(&l.embeddings()));
                v
            }
            Stage::Evaluate => vec![l.forecasts(), l.labels()],
        }
    }

    fn stage_outputs(&self, stage: Stage) -> Vec<PathBuf> {
        let l = self.layout();
        match stage {
            Stage::Ingest => vec![l.ingest()],
            Stage::FitTrends => vec![l.fits()],
            Stage::Label => vec![l.labels()],
            Stage::Index => vec![l.index()],
            Stage::Digest => vec![l.digests()],
            Stage::Forecast => vec![l.forecasts()],
            Stage::Evaluate => vec![l.report()],
        }
    }

    /// The configuration values a stage depends on.
    pub fn stage_section(&self, stage: Stage) -> serde_json::Value {
        let w = &self.window;
        match stage {
            Stage::Ingest => json!({
                "ingest": self.ingest,
                "data_start": w.data_start,
                "train_end": w.train_end,
                "val_end": w.val_end,
            }),
            Stage::FitTrends => json!({ "gp": self.gp, "train_end": w.train_end }),
            Stage::Label => json!({ "labels": self.labels, "train_end": w.train_end, "val_end": w.val_end }),
            Stage::Index => json!({ "index": self.index }),
            Stage::Digest => json!({ "digest": self.digest }),
            Stage::Forecast => json!({
                "forecast": self.forecast,
                "kinds": self.digest.kinds,
                "window": w,
            }),
            Stage::Evaluate => json!({ "evaluate": self.evaluate }),
        }
    }

    fn run_stage(&self, stage: Stage) -> Result<()> {
        let l = self.layout();
        let w = &self.window;
        match stage {
            Stage::Ingest => {
                let params = IngestParams {
                    threshold: self.ingest.threshold,
                    top_n: self.ingest.top_n,
                    window: w.data()?,
                    select_window: w.train()?,
                };
                ingest_stage(
                    &self.resolve(&self.paths.events),
                    &self.resolve(&self.paths.articles),
                    &self.resolve(&self.paths.embeddings),
                    &self.resolve(&self.paths.probs),
                    &params,
                    &l.ingest(),
                )?;
            }
            Stage::FitTrends => fit_stage(&l.series(), &self.gp.prior()?, self.gp.hierarchical, w.train_end, &l.fits())?,
            Stage::Label => label_stage(
                &l.series(),
                &l.fits().join("train"),
                &l.fits().join("val"),
                &LabelerConfig {
                    tau: self.labels.tau,
                    train_end: w.train_end,
                    val_end: w.val_end,
                },
                &l.labels(),
            )?,
            Stage::Index => index_stage(&l.embeddings(), self.index.hnsw(), &l.index())?,
            Stage::Digest => {
                digest_stage(&l.labeled(), &l.index(), &self.digest.kinds, &self.digest.digest_config(), &l.digests())?;
            }
            Stage::Forecast => {
                let emb = crate::ingest::load_embeddings(&l.embeddings())?.to_map();
                forecast_stage(
                    &l.digests(),
                    &emb,
                    &l.labels(),
                    &self.forecast.steps,
                    &self.digest.kinds,
                    &w.forecast_window(),
                    &self.forecast.softmax(),
                    &l.forecasts(),
                )?;
            }
            Stage::Evaluate => {
                let mut files = Vec::new();
                for kind in &self.digest.kinds {
                    for step in &self.forecast.steps {
                        files.push(l.forecasts().join(forecast_file(*step, *kind)));
                    }
                }
                let (mut history, val) = read_label_dir(&l.labels())?;
                history.extend(val);
                let e = &self.evaluate;
                evaluate_stage(
                    &files,
                    &history,
                    &BaselineParams {
                        window: e.baseline_window,
                        n_boot: e.n_boot,
                        seed: e.seed,
                    },
                    &e.report(),
                    &l.report(),
                )?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Run only this stage; upstream stages must have run before.
    pub stage: Option<Stage>,
    pub force: bool,
}

#[derive(Clone, Debug)]
pub struct StageOutcome {
    pub stage: Stage,
    pub skipped: bool,
    pub manifest: RunManifest,
}

fn stage_key(stage: Stage, section: &serde_json::Value, inputs: &BTreeMap<String, String>, upstream: &[String]) -> String {
    canonical_hash(&json!({
        "stage": stage.name(),
        "section": canonical_hash(section),
        "inputs": inputs,
        "upstream": upstream,
    }))
}

fn stage_error(stage: Stage, e: Error) -> Error {
    Error::Stage {
        stage: stage.name().to_string(),
        source: Box::new(e),
    }
}

/// Runs the pipeline in stage order, skipping stages whose key and outputs
/// are unchanged since their last manifest.
pub fn run_pipeline(config: &PipelineConfig, opts: &RunOptions) -> Result<Vec<StageOutcome>> {
    config.validate()?;
    let layout = config.layout();
    let base = config.base_dir.clone();
    let config_hash = config.hash();
    let mut keys: BTreeMap<Stage, String> = BTreeMap::new();
    let mut outcomes = Vec::new();

    for stage in Stage::ALL {
        let manifest_path = layout.manifest(stage);
        let selected = opts.stage.is_none_or(|s| s == stage);
        if !selected {
            if opts.stage.is_some_and(|s| s.upstream().contains(&stage)) {
                let m = RunManifest::load(&manifest_path).map_err(|_| {
                    stage_error(stage, Error::Config(format!("stage `{stage}` has not run yet")))
                })?;
                keys.insert(stage, m.stage_key);
            }
            continue;
        }

        let upstream: Vec<String> = stage.upstream().iter().map(|s| keys[s].clone()).collect();
        let inputs = digest_paths(&config.stage_inputs(stage), &base).map_err(|e| stage_error(stage, e))?;
        let key = stage_key(stage, &config.stage_section(stage), &inputs, &upstream);

        if !opts.force {
            if let Ok(prev) = RunManifest::load(&manifest_path) {
                let unchanged = prev.stage_key == key
                    && digest_paths(&config.stage_outputs(stage), &base).is_ok_and(|o| o == prev.outputs);
                if unchanged {
                    info!("{stage}: unchanged, skipped");
                    keys.insert(stage, key);
                    outcomes.push(StageOutcome {
                        stage,
                        skipped: true,
                        manifest: prev,
                    });
                    continue;
                }
            }
        }

        info!("{stage}: running");
        let t0 = Instant::now();
        config.run_stage(stage).map_err(|e| stage_error(stage, e))?;
        let outputs = digest_paths(&config.stage_outputs(stage), &base).map_err(|e| stage_error(stage, e))?;
        let manifest = RunManifest {
            stage: stage.name().to_string(),
            config_hash: config_hash.clone(),
            stage_key: key.clone(),
            inputs,
            outputs,
            wall_time_secs: t0.elapsed().as_secs_f64(),
            tool_version: TOOL_VERSION.to_string(),
        };
        manifest.save(&manifest_path)?;
        keys.insert(stage, key);
        outcomes.push(StageOutcome {
            stage,
            skipped: false,
            manifest,
        });
    }
    Ok(outcomes)
}
