use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::error;

use nexus_core::ann::{HnswConfig, HnswIndex};
use nexus_core::digest::{DigestConfig, DigestKind};
use nexus_core::eval::ReportConfig;
use nexus_core::forecast::{SoftmaxConfig, Window};
use nexus_core::gp::{PriorSpec, DEFAULT_PRIOR_LOG_SD, DEFAULT_PRIOR_MEDIAN};
use nexus_core::labeler::{label_map, read_labels_csv, LabelMap, LabelerConfig, DEFAULT_TAU};
use nexus_core::pipeline::{self, BaselineParams, IngestParams, PipelineConfig, RunOptions, Stage};
use nexus_core::synth::{self, Scenario, SynthConfig};
use nexus_core::{Month, MonthRange};

#[derive(Parser)]
#[command(name = "nexus", version, about = "Escalation-state forecasting from conflict events and news digests")]
struct Cli {
    /// Log level filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the whole pipeline (or one stage) from a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        stage: Option<String>,
        #[arg(long)]
        force: bool,
    },
    /// Write a synthetic data set and a matching pipeline.toml.
    Synth {
        #[arg(long)]
        scenario: Scenario,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 17)]
        seed: u64,
        #[arg(long)]
        dyads: Option<usize>,
        #[arg(long)]
        months: Option<usize>,
    },
    Ingest(IngestArgs),
    FitTrends(FitArgs),
    Label(LabelArgs),
    #[command(subcommand)]
    Index(IndexCommand),
    Digest(DigestArgs),
    Forecast(ForecastArgs),
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    events: PathBuf,
    #[arg(long)]
    articles: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    probs: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    threshold: f64,
    #[arg(long, default_value_t = 25)]
    top_n: usize,
    /// Data window, START:END.
    #[arg(long)]
    window: MonthRange,
    /// Window used to rank dyads; defaults to the data window.
    #[arg(long)]
    select_window: Option<MonthRange>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    series: PathBuf,
    #[arg(long, default_value_t = DEFAULT_PRIOR_MEDIAN)]
    prior_median: f64,
    #[arg(long = "prior-logsd", default_value_t = DEFAULT_PRIOR_LOG_SD)]
    prior_log_sd: f64,
    #[arg(long)]
    hierarchical: bool,
    #[arg(long)]
    train_end: Month,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LabelArgs {
    /// Series directory written by `ingest`; supplies raw fatalities.
    #[arg(long)]
    series: PathBuf,
    #[arg(long)]
    fits_train: PathBuf,
    #[arg(long)]
    fits_val: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f64,
    #[arg(long)]
    train_end: Month,
    #[arg(long)]
    val_end: Month,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum IndexCommand {
    /// Build an index over every row of an embedding file.
    Build {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = HnswConfig::default().m)]
        m: usize,
        #[arg(long, default_value_t = HnswConfig::default().ef_construction)]
        ef_construction: usize,
        #[arg(long, default_value_t = HnswConfig::default().ef_search)]
        ef_search: usize,
        #[arg(long, default_value_t = HnswConfig::default().seed)]
        seed: u64,
    },
    /// Nearest neighbors of an indexed item.
    Query {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        id: String,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        ef_search: Option<usize>,
    },
}

#[derive(Args)]
struct DigestArgs {
    #[arg(long, required = true)]
    kind: Vec<DigestKind>,
    #[arg(long)]
    labeled: PathBuf,
    #[arg(long)]
    index: PathBuf,
    #[arg(long, default_value_t = DigestConfig::default().min_topic_size)]
    min_topic_size: usize,
    #[arg(long, default_value_t = DigestConfig::default().max_topics)]
    max_topics: usize,
    #[arg(long, default_value_t = DigestConfig::default().context_limit)]
    context_limit: usize,
    #[arg(long, default_value_t = DigestConfig::default().snippet_limit)]
    snippet_limit: usize,
    #[arg(long, default_value_t = 17)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ForecastArgs {
    #[arg(long)]
    digests: PathBuf,
    /// Directory holding labels_train.csv and labels_val.csv.
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,1,3,6")]
    steps: Vec<usize>,
    #[arg(long, required = true)]
    kind: Vec<DigestKind>,
    /// Embedding file for digest members.
    #[arg(long, conflicts_with = "index")]
    embeddings: Option<PathBuf>,
    /// Index whose stored vectors supply digest member embeddings.
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    train_end: Month,
    #[arg(long)]
    test_start: Month,
    #[arg(long)]
    val_end: Month,
    #[arg(long, default_value_t = SoftmaxConfig::default().lr)]
    lr: f64,
    #[arg(long, default_value_t = SoftmaxConfig::default().epochs)]
    epochs: usize,
    #[arg(long, default_value_t = SoftmaxConfig::default().l2)]
    l2: f64,
    #[arg(long, default_value_t = 17)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Files named forecasts_{step}_{kind}.csv.
    #[arg(long, required = true, num_args = 1..)]
    forecasts: Vec<PathBuf>,
    /// Label CSV files, or directories holding labels_train.csv and labels_val.csv.
    #[arg(long, required = true, num_args = 1..)]
    labels: Vec<PathBuf>,
    #[arg(long, default_value_t = 12)]
    baseline_window: usize,
    #[arg(long, default_value_t = ReportConfig::default().n_boot)]
    n_boot: usize,
    #[arg(long, default_value_t = ReportConfig::default().level)]
    level: f64,
    #[arg(long, default_value_t = 17)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn read_history(paths: &[PathBuf]) -> Result<LabelMap> {
    let mut out = LabelMap::new();
    for p in paths {
        if p.is_dir() {
            let (train, val) = pipeline::read_label_dir(p)?;
            out.extend(train);
            out.extend(val);
        } else {
            out.extend(label_map(&read_labels_csv(p)?));
        }
    }
    Ok(out)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, stage, force } => {
            let cfg = PipelineConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            let stage = stage.map(|s| s.parse::<Stage>()).transpose()?;
            for o in pipeline::run_pipeline(&cfg, &RunOptions { stage, force })? {
                if o.skipped {
                    println!("{:<10} skipped (unchanged)", o.stage.name());
                } else {
                    println!("{:<10} ran in {:.2}s", o.stage.name(), o.manifest.wall_time_secs);
                }
            }
        }
        Command::Synth {
            scenario,
            out,
            seed,
            dyads,
            months,
        } => {
            let mut cfg = SynthConfig {
                seed,
                ..SynthConfig::new(scenario)
            };
            if let Some(n) = dyads {
                cfg.n_dyads = n;
            }
            if let Some(m) = months {
                if m < 30 {
                    bail!("--months must be at least 30");
                }
                cfg.months = m;
            }
            let data = synth::generate(&cfg)?;
            synth::write(&data, &out)?;
            println!(
                "{} events, {} articles for {} dyads written to {}",
                data.events.len(),
                data.articles.len(),
                cfg.n_dyads,
                out.display()
            );
        }
        Command::Ingest(a) => {
            let params = IngestParams {
                threshold: a.threshold,
                top_n: a.top_n,
                window: a.window,
                select_window: a.select_window.unwrap_or(a.window),
            };
            let s = pipeline::ingest_stage(&a.events, &a.articles, &a.embeddings, &a.probs, &params, &a.out)?;
            println!("{}", serde_json::to_string_pretty(&s)?);
        }
        Command::FitTrends(a) => {
            let prior = PriorSpec::from_median(a.prior_median, a.prior_log_sd)?;
            pipeline::fit_stage(&a.series, &prior, a.hierarchical, a.train_end, &a.out)?;
        }
        Command::Label(a) => {
            let cfg = LabelerConfig {
                tau: a.tau,
                train_end: a.train_end,
                val_end: a.val_end,
            };
            pipeline::label_stage(&a.series, &a.fits_train, &a.fits_val, &cfg, &a.out)?;
        }
        Command::Index(IndexCommand::Build {
            embeddings,
            out,
            m,
            ef_construction,
            ef_search,
            seed,
        }) => {
            let cfg = HnswConfig {
                m,
                ef_construction,
                ef_search,
                seed,
            };
            pipeline::index_stage(&embeddings, cfg, &out)?;
        }
        Command::Index(IndexCommand::Query { index, id, k, ef_search }) => {
            let mut idx = HnswIndex::load(&index)?;
            if let Some(ef) = ef_search {
                idx.set_ef_search(ef);
            }
            let Some(q) = idx.vector_of(&id).map(<[f32]>::to_vec) else {
                bail!("id {id} is not in {}", index.display());
            };
            for (hit, sim) in idx.search(&q, k)? {
                println!("{hit}\t{sim:.6}");
            }
        }
        Command::Digest(a) => {
            let cfg = DigestConfig {
                snippet_limit: a.snippet_limit,
                context_limit: a.context_limit,
                min_topic_size: a.min_topic_size,
                max_topics: a.max_topics,
                seed: a.seed,
            };
            let n = pipeline::digest_stage(&a.labeled, &a.index, &a.kind, &cfg, &a.out)?;
            println!("{n} digests written to {}", a.out.display());
        }
        Command::Forecast(a) => {
            let embeddings = match (&a.embeddings, &a.index) {
                (Some(p), _) => nexus_core::ingest::load_embeddings(p)?.to_map(),
                (None, Some(p)) => pipeline::index_vectors(&HnswIndex::load(p)?),
                (None, None) => bail!("forecast needs --embeddings or --index for digest member vectors"),
            };
            let window = Window {
                train_end: a.train_end,
                test_start: a.test_start,
                val_end: a.val_end,
            };
            let cfg = SoftmaxConfig {
                lr: a.lr,
                epochs: a.epochs,
                seed: a.seed,
                l2: a.l2,
            };
            let runs = pipeline::forecast_stage(&a.digests, &embeddings, &a.labels, &a.steps, &a.kind, &window, &cfg, &a.out)?;
            for r in runs {
                println!(
                    "step {} {}: {} train pairs, {} test forecasts",
                    r.step, r.kind, r.stats.train, r.records.len()
                );
            }
        }
        Command::Evaluate(a) => {
            let history = read_history(&a.labels)?;
            let rows = pipeline::evaluate_stage(
                &a.forecasts,
                &history,
                &BaselineParams {
                    window: a.baseline_window,
                    n_boot: a.n_boot,
                    seed: a.seed,
                },
                &ReportConfig {
                    n_boot: a.n_boot,
                    level: a.level,
                    seed: a.seed,
                },
                &a.out,
            )?;
            println!("{} metric rows written to {}", rows.len(), a.out.join("metrics.csv").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log)
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e:#}");
            ExitCode::FAILURE
        }
    }
}
