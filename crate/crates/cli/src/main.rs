use clap::{Args, Parser, Subcommand};
use matchkit::benchmark::{
    load_eval_dataset, read_report, run_benchmark, sample_eval_pairs, write_report, BenchmarkConfig, BenchmarkError,
    EvalDatasetError, ScoreTable,
};
use matchkit::matcher::{MatcherError, MatcherKind, MatcherSpec};
use matchkit::pipeline::{
    augment_dataset, label_videos, propagate_cached, ConfigError, PipelineConfig, RunError, RunSummary, VideoFrames,
    MANIFEST_FILE,
};
use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_CONFIG: u8 = 2;
const EXIT_PARTIAL: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "matchkit", version, about = "Video correspondence labeling and two-view matcher evaluation")]
struct Cli {
    /// Log filter: error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "info")]
    log_level: log::LevelFilter,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Label a frame directory (or a directory of them) and emit training pairs.
    Label {
        /// A directory of %08d.pgm frames, or a directory of such directories.
        #[arg(long)]
        frames: PathBuf,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Re-run propagation on the base labels cached by a previous `label` run.
    Propagate {
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Apply perspective augmentation to an emitted dataset.
    Augment {
        /// Dataset directory holding a manifest.json.
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Score matchers by relative-pose AUC on evaluation datasets.
    Evaluate {
        /// Dataset directory holding a pairs.json.
        #[arg(long = "dataset", required = true, num_args = 1..)]
        datasets: Vec<PathBuf>,
        /// `kind[:key=value,...]` or `@spec.json`.
        #[arg(long = "method", required = true, num_args = 1..)]
        methods: Vec<String>,
        #[arg(long, default_value_t = 1.0)]
        ransac_threshold: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        parallelism: usize,
        /// Draw this many pairs per overlap bin instead of using every pair.
        #[arg(long)]
        per_bin: Option<usize>,
    },
    /// Merge reports into one table with mean AUC and mean rank.
    Rank {
        #[arg(long = "reports", required = true, num_args = 1..)]
        reports: Vec<PathBuf>,
        /// Also write the merged rows as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct PipelineArgs {
    /// JSON pipeline configuration; unspecified fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long)]
    no_augment: bool,
    #[arg(long)]
    min_corrs: Option<usize>,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl ToString) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.to_string(),
        }
    }

    fn io(message: impl ToString) -> Self {
        Self {
            code: EXIT_IO,
            message: message.to_string(),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io(_) => Self::io(e),
            _ => Self::config(e),
        }
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Config(_) => Self::config(e),
            _ => Self::io(e),
        }
    }
}

impl From<EvalDatasetError> for Failure {
    fn from(e: EvalDatasetError) -> Self {
        match e {
            EvalDatasetError::Io(..) => Self::io(e),
            _ => Self::config(e),
        }
    }
}

impl From<BenchmarkError> for Failure {
    fn from(e: BenchmarkError) -> Self {
        match e {
            BenchmarkError::Io(..) | BenchmarkError::Pool(_) => Self::io(e),
            _ => Self::config(e),
        }
    }
}

impl PipelineArgs {
    fn resolve(&self) -> Result<PipelineConfig, Failure> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path).map_err(|e| Failure::from(e).context(path))?,
            None => PipelineConfig::default(),
        };
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(n) = self.parallelism {
            cfg.parallelism = n;
        }
        if self.no_augment {
            cfg.augmentation.enabled = false;
        }
        if let Some(n) = self.min_corrs {
            cfg.min_correspondences = n;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl Failure {
    fn context(mut self, path: &Path) -> Self {
        self.message = format!("{}: {}", path.display(), self.message);
        self
    }
}

/// Parses `kind[:key=value,...]` or `@spec.json`. Values are read as JSON
/// when they parse as JSON and as strings otherwise; `name` sets the method
/// name, which defaults to the kind.
fn parse_method(text: &str) -> Result<MatcherSpec, Failure> {
    let spec = if let Some(path) = text.strip_prefix('@') {
        let json = std::fs::read_to_string(path).map_err(|e| Failure::io(format!("{path}: {e}")))?;
        serde_json::from_str(&json).map_err(|e| Failure::config(format!("{path}: {e}")))?
    } else {
        let (kind, params) = text.split_once(':').unwrap_or((text, ""));
        let kind: MatcherKind = serde_json::from_value(Value::String(kind.to_string()))
            .map_err(|_| Failure::config(format!("unknown matcher kind {kind:?} in {text:?}")))?;
        let default_name = serde_json::to_value(kind).ok().and_then(|v| v.as_str().map(str::to_string));
        let mut spec = MatcherSpec::new(kind, default_name.unwrap_or_default());
        for item in params.split(',').filter(|s| !s.is_empty()) {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| Failure::config(format!("expected key=value, found {item:?} in {text:?}")))?;
            if key == "name" {
                spec.name = value.to_string();
            } else {
                let value = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
                spec.params.insert(key.to_string(), value);
            }
        }
        spec
    };
    spec.validate().map_err(|e: MatcherError| Failure::config(e))?;
    Ok(spec)
}

fn report_run(summary: &RunSummary, cfg: &PipelineConfig) -> u8 {
    println!(
        "{} training pairs from {} base pairs ({} dropped) -> {}",
        summary.manifest.pairs.len(),
        summary.base_pairs,
        summary.dropped,
        cfg.output_dir.join(MANIFEST_FILE).display()
    );
    if summary.is_partial() {
        EXIT_PARTIAL
    } else {
        0
    }
}

fn run(cli: Cli) -> Result<u8, Failure> {
    match cli.command {
        Command::Label { frames, pipeline } => {
            let cfg = pipeline.resolve()?;
            let videos = VideoFrames::discover(&frames).map_err(Failure::io)?;
            let summary = label_videos(&videos, &cfg)?;
            Ok(report_run(&summary, &cfg))
        }
        Command::Propagate { pipeline } => {
            let cfg = pipeline.resolve()?;
            let summary = propagate_cached(&cfg)?;
            Ok(report_run(&summary, &cfg))
        }
        Command::Augment { input, pipeline } => {
            let mut cfg = pipeline.resolve()?;
            if input == cfg.output_dir {
                return Err(Failure::config("--input and --out must differ"));
            }
            cfg.augmentation.enabled = !pipeline.no_augment;
            let summary = augment_dataset(&input, &cfg)?;
            Ok(report_run(&summary, &cfg))
        }
        Command::Evaluate {
            datasets,
            methods,
            ransac_threshold,
            seed,
            report,
            parallelism,
            per_bin,
        } => {
            let methods = methods.iter().map(|m| parse_method(m)).collect::<Result<Vec<_>, _>>()?;
            let mut loaded = Vec::with_capacity(datasets.len());
            for dir in &datasets {
                let mut ds = load_eval_dataset(dir)?;
                if let Some(n) = per_bin {
                    ds.pairs = sample_eval_pairs(&ds.pairs, n, seed).pairs;
                }
                loaded.push(ds);
            }
            let mut cfg = BenchmarkConfig {
                seed,
                parallelism,
                ..BenchmarkConfig::default()
            };
            cfg.ransac.threshold = ransac_threshold;
            let result = run_benchmark(&loaded, &methods, &cfg)?;
            if let Some(path) = report {
                write_report(&path, &result.rows)?;
            }
            print!("{}", result.table.render());
            Ok(0)
        }
        Command::Rank { reports, out } => {
            let mut rows = Vec::new();
            for path in &reports {
                rows.extend(read_report(path)?);
            }
            let table = ScoreTable::from_rows(&rows)?;
            if let Some(path) = out {
                write_report(&path, &rows)?;
            }
            print!("{}", table.render());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().filter_level(cli.log_level).init();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
