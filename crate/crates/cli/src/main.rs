//! `groundcap`: ingest segmentations, build grounded scenes, generate and
//! score captions, and run the annotation study service.

mod commands;
mod config;
mod error;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use groundcap_core::metrics::agreement::Distance;
use groundcap_core::metrics::report::Criterion;
use groundcap_core::store::ingest::IngestOptions;
use groundcap_core::store::CaptionSource;
use groundcap_core::{Exec, Split};
use groundcap_service::{ServiceConfig, Workflow};

use crate::commands::{finish_batch, open_existing, write_json};
use crate::config::{DecompositionFlags, FileConfig, OrderingFlags, RefineFlags};
use crate::error::CliError;

/// Eval share of the published split: 10,000 of 52,016 frames.
const DEFAULT_EVAL_FRACTION: f64 = 10_000.0 / 52_016.0;

#[derive(Debug, Parser)]
#[command(name = "groundcap", version, about = "Grounded caption dataset toolkit")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dataset store directory [default: ./groundcap-data].
    #[arg(long, global = true)]
    store: Option<PathBuf>,
    /// Seed for every stochastic step [default: 0].
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Process items on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    /// Worker threads for batch commands [default: all cores].
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SourceArg {
    Auto,
    Human,
    Model,
}

impl From<SourceArg> for CaptionSource {
    fn from(s: SourceArg) -> Self {
        match s {
            SourceArg::Auto => CaptionSource::Auto,
            SourceArg::Human => CaptionSource::Human,
            SourceArg::Model => CaptionSource::Model,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Eval,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Eval => Split::Eval,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DistanceArg {
    Nominal,
    Ordinal,
    Interval,
}

impl From<DistanceArg> for Distance {
    fn from(d: DistanceArg) -> Self {
        match d {
            DistanceArg::Nominal => Distance::Nominal,
            DistanceArg::Ordinal => Distance::Ordinal,
            DistanceArg::Interval => Distance::Interval,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CriterionArg {
    ObjectPrecision,
    GroundingRecall,
    DescriptionAccuracy,
    LanguageQuality,
    Overall,
}

impl From<CriterionArg> for Criterion {
    fn from(c: CriterionArg) -> Self {
        match c {
            CriterionArg::ObjectPrecision => Criterion::ObjectPrecision,
            CriterionArg::GroundingRecall => Criterion::GroundingRecall,
            CriterionArg::DescriptionAccuracy => Criterion::DescriptionAccuracy,
            CriterionArg::LanguageQuality => Criterion::LanguageQuality,
            CriterionArg::Overall => Criterion::Overall,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Ingest label maps (PGM/PAM) with their `<stem>.legend.json` legends.
    Ingest {
        #[arg(required = true)]
        labelmaps: Vec<PathBuf>,
        /// Image file extension, looked up next to each label map.
        #[arg(long, default_value = "png")]
        image_ext: String,
        /// File with one allowed class name per line.
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Keep stuff segments as a single tight box.
        #[arg(long)]
        no_decompose: bool,
        #[command(flatten)]
        decomposition: DecompositionFlags,
        #[command(flatten)]
        ordering: OrderingFlags,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Re-run stuff decomposition from each frame's recorded label map.
    Decompose {
        frames: Vec<String>,
        #[command(flatten)]
        decomposition: DecompositionFlags,
        #[command(flatten)]
        ordering: OrderingFlags,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Re-filter, order and renumber objects.
    Order {
        frames: Vec<String>,
        #[command(flatten)]
        ordering: OrderingFlags,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Check a caption against a frame; diagnostics go to stderr.
    Validate {
        #[arg(long)]
        frame: String,
        /// Caption file, or `-` for stdin.
        #[arg(long, conflicts_with = "caption")]
        file: Option<PathBuf>,
        /// Stored caption id.
        #[arg(long)]
        caption: Option<String>,
    },
    /// Score captions against human references.
    Score {
        #[arg(long, value_enum)]
        split: Option<SplitArg>,
        #[arg(long, value_enum, default_value = "auto")]
        source: SourceArg,
        /// Print only the corpus summary.
        #[arg(long)]
        summary: bool,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Generate or refine automatic captions through the captioner.
    Refine {
        frames: Vec<String>,
        /// Run the full pipeline even when an automatic caption exists.
        #[arg(long)]
        regenerate: bool,
        #[command(flatten)]
        refine: RefineFlags,
        /// Attempt log per frame.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Assign train/eval splits.
    Splits {
        #[arg(long, default_value_t = DEFAULT_EVAL_FRACTION)]
        eval_fraction: f64,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Run the annotation service.
    Serve {
        /// Service configuration with raters and tokens.
        #[arg(long)]
        raters: PathBuf,
        #[arg(long)]
        bind: Option<String>,
    },
    /// Study reports.
    #[command(subcommand)]
    Report(ReportCommand),
    /// Import a JSON Lines caption dataset.
    Import {
        file: PathBuf,
        /// Boxes are normalized to [0, 1].
        #[arg(long)]
        normalized: bool,
    },
}

#[derive(Debug, Subcommand)]
enum ReportCommand {
    /// Krippendorff's alpha and mean rating per criterion and caption source.
    Agreement {
        #[arg(long, value_enum, value_delimiter = ',')]
        source: Vec<SourceArg>,
        #[arg(long, value_enum, default_value = "ordinal")]
        distance: DistanceArg,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Pearson and Spearman correlation of automatic metrics with ratings.
    Correlation {
        #[arg(long, value_enum, default_value = "overall")]
        criterion: CriterionArg,
        #[arg(long, value_enum, value_delimiter = ',')]
        source: Vec<SourceArg>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

fn sources(args: &[SourceArg]) -> Vec<CaptionSource> {
    if args.is_empty() {
        CaptionSource::ALL.to_vec()
    } else {
        args.iter().map(|&s| s.into()).collect()
    }
}

fn print_report<T: std::fmt::Display + serde::Serialize>(report: &T, json: Option<&Path>) -> Result<(), CliError> {
    print!("{report}");
    json.map_or(Ok(()), |p| write_json(p, report))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let seed = cli.seed.or(file.seed).unwrap_or(0);
    let store_root = cli
        .store
        .clone()
        .or_else(|| file.store.clone())
        .unwrap_or_else(|| PathBuf::from("groundcap-data"));
    let exec = if cli.sequential {
        Exec::Sequential
    } else {
        Exec::Parallel
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        #[cfg(feature = "parallel")]
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }

    match cli.command {
        Command::Ingest {
            labelmaps,
            image_ext,
            vocab,
            no_decompose,
            decomposition,
            ordering,
            json,
        } => {
            let args = commands::IngestArgs {
                labelmaps,
                image_ext,
                vocab,
                options: IngestOptions {
                    decomposition: config::decomposition(&file, &decomposition, seed)?,
                    decompose: !no_decompose,
                },
                ordering: config::ordering(&file, &ordering)?,
            };
            let store = groundcap_core::store::Store::open(&store_root)?;
            finish_batch(commands::ingest(&store, &args, exec)?, json.as_deref())
        }
        Command::Decompose {
            frames,
            decomposition,
            ordering,
            json,
        } => {
            let params = config::decomposition(&file, &decomposition, seed)?;
            let ordering = config::ordering(&file, &ordering)?;
            let store = open_existing(&store_root)?;
            finish_batch(
                commands::decompose(&store, &frames, &params, &ordering, exec)?,
                json.as_deref(),
            )
        }
        Command::Order { frames, ordering, json } => {
            let ordering = config::ordering(&file, &ordering)?;
            let store = open_existing(&store_root)?;
            finish_batch(commands::order(&store, &frames, &ordering, exec)?, json.as_deref())
        }
        Command::Validate {
            frame,
            file: path,
            caption,
        } => {
            let store = open_existing(&store_root)?;
            commands::validate(&store, &frame, path.as_deref(), caption.as_deref())
        }
        Command::Score {
            split,
            source,
            summary,
            json,
        } => {
            let store = open_existing(&store_root)?;
            let out = commands::score(&store, split.map(Into::into), source.into(), exec)?;
            if summary {
                let mut short = out.report.clone();
                short.items.clear();
                print!("{short}");
            } else {
                print!("{}", out.report);
            }
            if !out.without_reference.is_empty() {
                eprintln!(
                    "{} frame(s) have no human reference and were skipped",
                    out.without_reference.len()
                );
            }
            json.map_or(Ok(()), |p| write_json(&p, &out))
        }
        Command::Refine {
            frames,
            regenerate,
            refine,
            json,
        } => {
            let params = config::refine(&file, &refine)?;
            let captioner = commands::http_captioner(config::captioner(&file, &refine)?)?;
            let store = open_existing(&store_root)?;
            let (items, logs) = commands::refine_frames(&store, &frames, &captioner, &params, regenerate, exec)?;
            if let Some(p) = &json {
                write_json(p, &logs.into_iter().collect::<std::collections::BTreeMap<_, _>>())?;
            }
            finish_batch(items, None)
        }
        Command::Splits { eval_fraction, json } => {
            let store = open_existing(&store_root)?;
            let table = commands::splits(&store, eval_fraction, seed)?;
            println!(
                "{} frames: {} train, {} eval (seed {seed})",
                table.assignments.len(),
                table.assignments.len() - table.eval_count,
                table.eval_count
            );
            json.map_or(Ok(()), |p| write_json(&p, &table))
        }
        Command::Serve { raters, bind } => {
            let mut cfg = ServiceConfig::load(&raters).map_err(CliError::Config)?;
            if let Some(s) = cli.store.clone() {
                cfg.store = s;
            }
            if let Some(b) = bind {
                cfg.bind = b;
            }
            if let Some(s) = cli.seed {
                cfg.study_seed = s;
            }
            open_existing(&cfg.store)?;
            let wf = Workflow::new(&cfg).map_err(|e| CliError::Config(e.to_string()))?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Io(e.to_string()))?;
            eprintln!("serving {} on {}", cfg.store.display(), cfg.bind);
            rt.block_on(groundcap_service::http::serve(Arc::new(wf), &cfg.bind))
                .map_err(|e| CliError::Io(format!("{}: {e}", cfg.bind)))
        }
        Command::Report(ReportCommand::Agreement { source, distance, json }) => {
            let store = open_existing(&store_root)?;
            let report = commands::agreement(&store, &sources(&source), distance.into())?;
            print_report(&report, json.as_deref())
        }
        Command::Report(ReportCommand::Correlation {
            criterion,
            source,
            json,
        }) => {
            let store = open_existing(&store_root)?;
            let report = commands::correlation(&store, &sources(&source), criterion.into())?;
            print_report(&report, json.as_deref())
        }
        Command::Import { file: path, normalized } => {
            let store = groundcap_core::store::Store::open(&store_root)?;
            commands::import(&store, &path, normalized)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("groundcap: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
