use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::ann::{HnswConfig, HnswIndex};
use crate::digest::{build_corpora, build_digests, read_digests, write_digests, DigestConfig, DigestKind, Retrieval};
use crate::error::{Error, Result};
use crate::eval::{
    baseline_records, emit_report, read_forecasts_csv, write_forecasts_csv, Combination, MetricRow, ReportConfig,
    SOURCE_MODEL,
};
use crate::forecast::{run_steps, PooledDigest, SoftmaxConfig, StepRun, Window};
use crate::gp::{fit_hierarchical, fit_independent, KernelParams, PriorSpec, TrendFit, TrendFitFile};
use crate::ingest::{
    aggregate_monthly, apply_dyad_filter, load_articles, load_dyad_probs, load_embeddings, load_events,
    match_headlines, select_top_dyads, write_embeddings, Article, DyadMonthSeries, EmbeddingMatrix, LabeledArticle,
};
use crate::labeler::{label_map, label_windows, read_labels_csv, write_labels_csv, LabelMap, LabelerConfig};
use crate::month::{Month, MonthRange};

pub const LABELED_FILE: &str = "labeled.jsonl";
pub const ARTICLES_FILE: &str = "articles.jsonl";
pub const EMBEDDINGS_FILE: &str = "embeddings.f32";
pub const LABELS_TRAIN: &str = "labels_train.csv";
pub const LABELS_VAL: &str = "labels_val.csv";

pub(crate) fn fresh_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| Error::invalid(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

/// `*.json` files of a directory in name order.
fn json_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    Ok(files)
}

fn file_safe(id: &str) -> String {
    id.chars()
        .map(|ch| if ch.is_ascii_alphanumeric() || ch == '-' || ch == '_' { ch } else { '_' })
        .collect()
}

#[derive(Clone, Debug)]
pub struct IngestParams {
    pub threshold: f64,
    pub top_n: usize,
    /// Months kept for series and articles.
    pub window: MonthRange,
    /// Months over which dyads are ranked by article count.
    pub select_window: MonthRange,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub events: usize,
    pub events_rejected: usize,
    pub events_outside_window: usize,
    pub articles: usize,
    pub articles_rejected: usize,
    pub prob_rows: usize,
    pub gold_articles: usize,
    pub ambiguous_articles: usize,
    pub dyads: Vec<String>,
    pub labeled: usize,
    pub missing_embeddings: usize,
    pub warnings: Vec<String>,
}

/// Loads the raw inputs, back-labels and filters articles, keeps the top
/// dyads and writes `series/`, `labeled/` and `summary.json` under `out`.
pub fn ingest_stage(
    events: &Path,
    articles: &Path,
    embeddings: &Path,
    probs: &Path,
    params: &IngestParams,
    out: &Path,
) -> Result<IngestSummary> {
    let ev = load_events(events)?;
    let ar = load_articles(articles)?;
    let pr = load_dyad_probs(probs)?;
    let emb = load_embeddings(embeddings)?;
    let mut summary = IngestSummary {
        events_rejected: ev.errors.len(),
        articles_rejected: ar.errors.len(),
        prob_rows: pr.records.len(),
        ..Default::default()
    };
    for e in ev.errors.iter().chain(&ar.errors).chain(&pr.errors) {
        warn!("line {}: {}", e.line, e.message);
    }
    summary.warnings.extend(ev.warnings.iter().chain(&ar.warnings).chain(&pr.warnings).cloned());

    let (in_window, outside): (Vec<_>, Vec<_>) = ev
        .records
        .into_iter()
        .partition(|e| params.window.contains(Month::from_date(e.date)));
    summary.events = in_window.len();
    summary.events_outside_window = outside.len();
    if !outside.is_empty() {
        warn!("{} events outside {} dropped", outside.len(), params.window);
    }
    let articles: Vec<Article> = ar.records.into_iter().filter(|a| params.window.contains(a.month())).collect();
    summary.articles = articles.len();

    let gold = match_headlines(&articles, &in_window);
    summary.ambiguous_articles = gold.ambiguous.len();
    let all_dyads: BTreeSet<String> = in_window
        .iter()
        .map(|e| e.dyad_id.clone())
        .chain(pr.records.iter().flat_map(|r| r.probabilities.keys().cloned()))
        .collect();
    let filtered = apply_dyad_filter(&articles, &gold, &pr.records, params.threshold, &all_dyads)?;
    summary.warnings.extend(filtered.warnings);

    let top = select_top_dyads(&filtered.labeled, params.select_window, params.top_n);
    let keep: BTreeSet<&str> = top.iter().map(String::as_str).collect();
    let labeled: Vec<LabeledArticle> = filtered
        .labeled
        .into_iter()
        .filter(|l| keep.contains(l.dyad_id.as_str()))
        .collect();
    summary.gold_articles = labeled.iter().filter(|l| l.gold).count();
    summary.labeled = labeled.len();
    summary.dyads = top.clone();

    fresh_dir(out)?;
    let series_dir = out.join("series");
    fs::create_dir_all(&series_dir).map_err(|e| Error::io(&series_dir, e))?;
    for d in &top {
        let s = aggregate_monthly(&in_window, d, params.window)?;
        write_json(&series_dir.join(format!("{}.json", file_safe(d))), &s)?;
    }

    let ids: BTreeSet<&str> = labeled.iter().map(|l| l.article_id.as_str()).collect();
    let mut kept: Vec<Article> = articles.into_iter().filter(|a| ids.contains(a.article_id.as_str())).collect();
    kept.sort_by(|a, b| a.article_id.cmp(&b.article_id));
    for a in kept.iter_mut() {
        a.embedding = None;
    }
    let row_of: BTreeMap<&str, usize> = emb.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut sub = EmbeddingMatrix {
        dim: emb.dim,
        ids: Vec::new(),
        data: Vec::new(),
    };
    for id in &ids {
        match row_of.get(id) {
            Some(&i) => {
                sub.ids.push(id.to_string());
                sub.data.extend_from_slice(emb.row(i));
            }
            None => summary.missing_embeddings += 1,
        }
    }
    if summary.missing_embeddings > 0 {
        warn!("{} labeled articles have no embedding", summary.missing_embeddings);
    }

    let labeled_dir = out.join("labeled");
    fs::create_dir_all(&labeled_dir).map_err(|e| Error::io(&labeled_dir, e))?;
    write_jsonl(&labeled_dir.join(LABELED_FILE), &labeled)?;
    write_jsonl(&labeled_dir.join(ARTICLES_FILE), &kept)?;
    write_embeddings(&labeled_dir.join(EMBEDDINGS_FILE), &sub)?;
    write_json(&out.join("summary.json"), &summary)?;
    info!(
        "ingest: {} dyads, {} labeled articles ({} gold)",
        top.len(),
        summary.labeled,
        summary.gold_articles
    );
    Ok(summary)
}

pub fn read_series_dir(dir: &Path) -> Result<Vec<DyadMonthSeries>> {
    json_files(dir)?.iter().map(|p| read_json(p)).collect()
}

fn truncate(s: &DyadMonthSeries, end: Month) -> DyadMonthSeries {
    let n = s.months.iter().take_while(|m| **m <= end).count();
    DyadMonthSeries {
        dyad_id: s.dyad_id.clone(),
        country_id: s.country_id.clone(),
        months: s.months[..n].to_vec(),
        log_fatalities: s.log_fatalities[..n].to_vec(),
        raw_fatalities: s.raw_fatalities[..n].to_vec(),
    }
}

fn fit_all(series: &[DyadMonthSeries], prior: &PriorSpec, hierarchical: bool) -> Result<BTreeMap<String, TrendFit>> {
    let init = KernelParams::default();
    if hierarchical {
        Ok(fit_hierarchical(series, prior, &init)?.0)
    } else {
        fit_independent(series, prior, &init)
    }
}

fn write_fits(dir: &Path, fits: &BTreeMap<String, TrendFit>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (d, f) in fits {
        write_json(&dir.join(format!("{}.json", file_safe(d))), &TrendFitFile::from(f))?;
    }
    Ok(())
}

/// Two fits per dyad: one on data through `train_end` (written to
/// `out/train`) and one on the whole series (`out/val`).
pub fn fit_stage(series_dir: &Path, prior: &PriorSpec, hierarchical: bool, train_end: Month, out: &Path) -> Result<()> {
    let series = read_series_dir(series_dir)?;
    if series.is_empty() {
        return Err(Error::invalid(format!("no series in {}", series_dir.display())));
    }
    let train: Vec<DyadMonthSeries> = series
        .iter()
        .map(|s| truncate(s, train_end))
        .filter(|s| {
            if s.months.is_empty() {
                warn!("dyad {} has no months through {train_end}", s.dyad_id);
            }
            !s.months.is_empty()
        })
        .collect();
    let fits_train = fit_all(&train, prior, hierarchical)?;
    let fits_val = fit_all(&series, prior, hierarchical)?;
    fresh_dir(out)?;
    write_fits(&out.join("train"), &fits_train)?;
    write_fits(&out.join("val"), &fits_val)?;
    info!("fit-trends: {} dyads", series.len());
    Ok(())
}

pub fn read_fits_dir(dir: &Path) -> Result<BTreeMap<String, TrendFit>> {
    let mut out = BTreeMap::new();
    for p in json_files(dir)? {
        let f: TrendFitFile = read_json(&p)?;
        let fit = TrendFit::try_from(f)?;
        out.insert(fit.dyad_id.clone(), fit);
    }
    Ok(out)
}

pub fn label_stage(
    series_dir: &Path,
    fits_train: &Path,
    fits_val: &Path,
    config: &LabelerConfig,
    out: &Path,
) -> Result<()> {
    let series = read_series_dir(series_dir)?;
    let (train, val) = label_windows(&series, &read_fits_dir(fits_train)?, &read_fits_dir(fits_val)?, config)?;
    fresh_dir(out)?;
    write_labels_csv(&out.join(LABELS_TRAIN), &train)?;
    write_labels_csv(&out.join(LABELS_VAL), &val)?;
    info!("label: {} train and {} validation series", train.len(), val.len());
    Ok(())
}

/// Label lookups from a labels directory: (train, validation).
pub fn read_label_dir(dir: &Path) -> Result<(LabelMap, LabelMap)> {
    Ok((
        label_map(&read_labels_csv(&dir.join(LABELS_TRAIN))?),
        label_map(&read_labels_csv(&dir.join(LABELS_VAL))?),
    ))
}

/// Builds the index over every row of an embedding file, in file order.
pub fn build_index(embeddings: &EmbeddingMatrix, config: HnswConfig) -> Result<HnswIndex> {
    let mut index = HnswIndex::new(embeddings.dim, config)?;
    for (i, id) in embeddings.ids.iter().enumerate() {
        index.insert(id.clone(), embeddings.row(i))?;
    }
    Ok(index)
}

pub fn index_stage(embeddings: &Path, config: HnswConfig, out: &Path) -> Result<()> {
    let matrix = load_embeddings(embeddings)?;
    let index = build_index(&matrix, config)?;
    if let Some(dir) = out.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    index.save(out)?;
    info!("index: {} vectors of dim {}", index.len(), index.dim());
    Ok(())
}

/// Embeddings of every indexed article, as stored in the index.
pub fn index_vectors(index: &HnswIndex) -> BTreeMap<String, Vec<f32>> {
    index
        .ids()
        .iter()
        .filter_map(|id| index.vector_of(id).map(|v| (id.clone(), v.to_vec())))
        .collect()
}

pub fn digest_stage(
    labeled_dir: &Path,
    index_path: &Path,
    kinds: &[DigestKind],
    config: &DigestConfig,
    out: &Path,
) -> Result<usize> {
    let labeled: Vec<LabeledArticle> = read_jsonl(&labeled_dir.join(LABELED_FILE))?;
    let articles: Vec<Article> = read_jsonl(&labeled_dir.join(ARTICLES_FILE))?;
    let index = HnswIndex::load(index_path)?;
    let corpora = build_corpora(&labeled, &articles, &index_vectors(&index), config.snippet_limit)?;
    let mut all = Vec::new();
    for kind in kinds {
        let (digests, models) = build_digests(&corpora, *kind, Some(&index), config, Retrieval::Approximate)?;
        info!("digest {kind}: {} digests over {} topic models", digests.len(), models.len());
        all.extend(digests);
    }
    if let Some(dir) = out.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_digests(out, &all)?;
    Ok(all.len())
}

pub fn forecast_file(step: usize, kind: DigestKind) -> String {
    format!("forecasts_{step}_{kind}.csv")
}

pub fn model_file(step: usize, kind: DigestKind) -> String {
    format!("model_{step}_{kind}.json")
}

/// Parses `forecasts_{step}_{kind}.csv`.
pub fn parse_forecast_file(path: &Path) -> Option<(usize, DigestKind)> {
    let name = path.file_name()?.to_str()?;
    let rest = name.strip_prefix("forecasts_")?.strip_suffix(".csv")?;
    let (step, kind) = rest.split_once('_')?;
    Some((step.parse().ok()?, kind.parse().ok()?))
}

#[allow(clippy::too_many_arguments)]
pub fn forecast_stage(
    digests: &Path,
    embeddings: &BTreeMap<String, Vec<f32>>,
    labels_dir: &Path,
    steps: &[usize],
    kinds: &[DigestKind],
    window: &Window,
    config: &SoftmaxConfig,
    out: &Path,
) -> Result<Vec<StepRun>> {
    window.validate()?;
    let records = read_digests(digests)?;
    let (lt, lv) = read_label_dir(labels_dir)?;
    fresh_dir(out)?;
    let mut runs = Vec::new();
    for kind in kinds {
        let pooled: Vec<PooledDigest> = records
            .iter()
            .filter(|r| r.kind == *kind)
            .map(|r| PooledDigest::from_record(r, embeddings))
            .collect::<Result<_>>()?;
        if pooled.is_empty() {
            return Err(Error::invalid(format!("no {kind} digests in {}", digests.display())));
        }
        for run in run_steps(&pooled, &lt, &lv, steps, *kind, window, config)? {
            info!(
                "forecast step {} {kind}: {} train, {} test, {} missing labels, loss {:.4}",
                run.step, run.stats.train, run.stats.test, run.stats.missing_label, run.model.final_loss
            );
            run.model.save(&out.join(model_file(run.step, *kind)))?;
            write_forecasts_csv(&out.join(forecast_file(run.step, *kind)), &run.records)?;
            runs.push(run);
        }
    }
    Ok(runs)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineParams {
    pub window: usize,
    pub n_boot: usize,
    pub seed: u64,
}

/// Reads model forecasts, attaches aligned baselines computed from the
/// combined label history, and writes the report into `out`.
pub fn evaluate_stage(
    forecasts: &[PathBuf],
    history: &LabelMap,
    baseline: &BaselineParams,
    report: &ReportConfig,
    out: &Path,
) -> Result<Vec<MetricRow>> {
    let mut combos = Vec::new();
    for path in forecasts {
        let (step, kind) = parse_forecast_file(path).ok_or_else(|| {
            Error::invalid(format!("{} is not named forecasts_{{step}}_{{kind}}.csv", path.display()))
        })?;
        let model = read_forecasts_csv(path, step, SOURCE_MODEL)?;
        let base = baseline_records(&model, history, baseline.window, baseline.n_boot, baseline.seed)?;
        combos.push(Combination {
            step,
            kind: kind.to_string(),
            model,
            baseline: base,
        });
    }
    combos.sort_by(|a, b| (a.step, &a.kind).cmp(&(b.step, &b.kind)));
    fresh_dir(out)?;
    emit_report(&combos, out, report)
}
