//! Command-line orchestration of the pipeline:
//! `fetch` → `predict` → `train` → `report` → `override` → `serve`.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, Utc};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use thiserror::Error;

use crate::classifier::{self, ClassifierError, TrainParams, TrainedModel};
use crate::corpus::{self, DEFAULT_CAP};
use crate::features::{self, DEFAULT_EPS};
use crate::github_fetcher::{ActivityComment, ActivityKind, FetchError, FetchOptions, FetchWindow, Fetcher, RepoRef};
use crate::review_service;
use crate::store_report::{self, OverrideAction, PredictionRecord, ReportFormat, DEFAULT_MIN_COMMENTS};

/// Environment variable overriding the GitHub API base URL.
pub const BASE_URL_ENV: &str = "GITHUB_API_URL";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExitStatus(pub i32);

impl ExitStatus {
    pub const SUCCESS: ExitStatus = ExitStatus(0);
    pub const USAGE: ExitStatus = ExitStatus(2);
    pub const ENVIRONMENT: ExitStatus = ExitStatus(3);
    pub const DATA: ExitStatus = ExitStatus(4);
    pub const NETWORK: ExitStatus = ExitStatus(5);
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Environment(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Network(String),
}

impl CliError {
    pub fn status(&self) -> ExitStatus {
        match self {
            CliError::Usage(_) => ExitStatus::USAGE,
            CliError::Environment(_) => ExitStatus::ENVIRONMENT,
            CliError::Data(_) => ExitStatus::DATA,
            CliError::Network(_) => ExitStatus::NETWORK,
        }
    }
}

impl From<FetchError> for CliError {
    fn from(e: FetchError) -> Self {
        match e {
            FetchError::Credential(_) => CliError::Environment(e.to_string()),
            FetchError::InvalidRequest(_) => CliError::Usage(e.to_string()),
            FetchError::Cache(_) => CliError::Data(e.to_string()),
            _ => CliError::Network(e.to_string()),
        }
    }
}

fn data_err(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

fn parse_timestamp_arg(s: &str) -> Result<DateTime<Utc>, String> {
    if let Some(t) = corpus::parse_timestamp(s) {
        return Ok(t);
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map(|d| d.and_hms_opt(0, 0, 0).expect("midnight").and_utc())
        .map_err(|_| format!("expected an RFC 3339 timestamp or YYYY-MM-DD, found {s:?}"))
}

fn parse_eps(s: &str) -> Result<f64, String> {
    let eps: f64 = s.parse().map_err(|_| format!("invalid number {s:?}"))?;
    if eps > 0.0 && eps <= 1.0 {
        Ok(eps)
    } else {
        Err(format!("eps must lie in (0, 1], found {eps}"))
    }
}

fn parse_cap(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(n) if n >= 1 => Ok(n),
        _ => Err(format!("cap must be a positive integer, found {s:?}")),
    }
}

fn parse_kinds(s: &str) -> Result<BTreeSet<ActivityKind>, String> {
    let kinds = s
        .split(',')
        .filter(|k| !k.trim().is_empty())
        .map(str::parse)
        .collect::<Result<BTreeSet<_>, _>>()?;
    if kinds.is_empty() {
        return Err("at least one kind is required".into());
    }
    Ok(kinds)
}

#[derive(Debug, Parser)]
#[command(name = "botwatch", version, about = "Detect bot accounts from GitHub issue and pull-request comments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Table,
    Json,
    Ndjson,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OverrideArg {
    Bot,
    Human,
    Clear,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Retrieve issue and pull-request comments into an activity CSV.
    Fetch {
        /// Repository as OWNER/NAME.
        #[arg(long)]
        repo: RepoRef,
        /// Name of the environment variable holding the API token.
        #[arg(long, default_value = "GITHUB_TOKEN")]
        token_env: String,
        /// Window start (inclusive), RFC 3339 or YYYY-MM-DD.
        #[arg(long, value_parser = parse_timestamp_arg)]
        since: DateTime<Utc>,
        /// Window end (exclusive), RFC 3339 or YYYY-MM-DD.
        #[arg(long, value_parser = parse_timestamp_arg)]
        until: DateTime<Utc>,
        /// Comma-separated activity kinds: issues, prs.
        #[arg(long, default_value = "issues,prs", value_parser = parse_kinds)]
        kinds: BTreeSet<ActivityKind>,
        /// API base URL (defaults to $GITHUB_API_URL or https://api.github.com).
        #[arg(long)]
        base_url: Option<String>,
        /// Directory for cached responses.
        #[arg(long)]
        cache: Option<PathBuf>,
        /// Skip inline pull-request review comments.
        #[arg(long)]
        no_review_comments: bool,
        #[arg(long, default_value_t = 100)]
        per_page: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Classify every contributor of an activity CSV.
    Predict {
        #[arg(long = "in")]
        input: PathBuf,
        /// `default` or a path to a model JSON file.
        #[arg(long, default_value = "default")]
        model: String,
        /// Pattern clustering threshold on normalized edit distance.
        #[arg(long, default_value_t = DEFAULT_EPS, value_parser = parse_eps)]
        eps: f64,
        /// Contributors with fewer comments are reported as unknown.
        #[arg(long, default_value_t = DEFAULT_MIN_COMMENTS)]
        min_comments: usize,
        /// Most recent comments kept per contributor.
        #[arg(long, default_value_t = DEFAULT_CAP, value_parser = parse_cap)]
        cap: usize,
        #[arg(long, value_parser = parse_timestamp_arg)]
        since: Option<DateTime<Utc>>,
        #[arg(long, value_parser = parse_timestamp_arg)]
        until: Option<DateTime<Utc>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a decision tree on labeled contributors.
    Train {
        /// Predictions CSV supplying the feature columns.
        #[arg(long)]
        features: PathBuf,
        /// CSV with header repository,login,label.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = 4)]
        max_depth: usize,
        #[arg(long, default_value_t = 2)]
        min_leaf: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize a predictions CSV per repository.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "table")]
        format: FormatArg,
        /// Index name for ndjson output.
        #[arg(long, default_value = "contributors")]
        index: String,
        /// Alias map (`canonical: alias, ...`) applied before summarizing.
        #[arg(long)]
        aliases: Option<PathBuf>,
    },
    /// Set or clear the operator override of a contributor.
    Override {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, required_unless_present = "from", requires_all = ["login", "set"])]
        repo: Option<RepoRef>,
        #[arg(long)]
        login: Option<String>,
        #[arg(long, value_enum)]
        set: Option<OverrideArg>,
        /// Batch file with header repository,login,override.
        #[arg(long, conflicts_with_all = ["repo", "login", "set"])]
        from: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the review API (and optionally the dashboard assets).
    Serve {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        /// Directory of static dashboard assets.
        #[arg(long)]
        ui_dir: Option<PathBuf>,
        /// Activity CSV used for sample comments.
        #[arg(long)]
        comments: Option<PathBuf>,
    },
}

/// Options for turning activity records into predictions.
#[derive(Debug, Clone, Copy)]
pub struct PredictOptions {
    pub eps: f64,
    pub min_comments: usize,
    pub cap: usize,
    pub window: FetchWindow,
}

impl Default for PredictOptions {
    fn default() -> Self {
        PredictOptions {
            eps: DEFAULT_EPS,
            min_comments: DEFAULT_MIN_COMMENTS,
            cap: DEFAULT_CAP,
            window: FetchWindow::unbounded(),
        }
    }
}

/// Profiles, features and predictions for every contributor, ordered by
/// repository then login.
pub fn predict_activity(
    records: &[ActivityComment],
    model: &TrainedModel,
    options: &PredictOptions,
) -> Result<Vec<PredictionRecord>, ClassifierError> {
    let profiles = corpus::build_profiles(records, &options.window, options.cap);
    profiles
        .into_par_iter()
        .map(|profile| {
            let fv = features::extract_features(&profile, options.eps);
            let prediction = classifier::predict(model, &fv)?;
            Ok(PredictionRecord::new(profile.repo, profile.login, fv, prediction, options.min_comments))
        })
        .collect()
}

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn run(argv: &[String], env: &HashMap<String, String>) -> ExitStatus {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with_output(argv, env, &mut stdout.lock(), &mut stderr.lock())
}

pub fn run_with_output(
    argv: &[String],
    env: &HashMap<String, String>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> ExitStatus {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let rendered = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{rendered}");
                    ExitStatus::SUCCESS
                }
                _ => {
                    let _ = write!(err, "{rendered}");
                    ExitStatus::USAGE
                }
            };
        }
    };
    match dispatch(cli.command, env, out) {
        Ok(()) => ExitStatus::SUCCESS,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.status()
        }
    }
}

fn load_model_arg(choice: &str) -> Result<TrainedModel, CliError> {
    if choice == "default" {
        Ok(classifier::default_model())
    } else {
        classifier::load_model(Path::new(choice)).map_err(data_err)
    }
}

fn dispatch(command: Command, env: &HashMap<String, String>, out: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Fetch {
            repo,
            token_env,
            since,
            until,
            kinds,
            base_url,
            cache,
            no_review_comments,
            per_page,
            out: destination,
        } => {
            let window = FetchWindow::new(since, until).map_err(|e| CliError::Usage(e.to_string()))?;
            let token = env
                .get(&token_env)
                .filter(|t| !t.is_empty())
                .ok_or_else(|| CliError::Environment(format!("environment variable {token_env} is not set")))?;
            let base_url = base_url
                .or_else(|| env.get(BASE_URL_ENV).cloned())
                .unwrap_or_else(|| crate::github_fetcher::DEFAULT_BASE_URL.to_string());
            let options = FetchOptions {
                base_url,
                per_page,
                include_review_comments: !no_review_comments,
                ..FetchOptions::default()
            };
            let fetcher = Fetcher::with_defaults(options, cache.as_deref())?;
            let records = fetcher.fetch(&repo, token, &window, &kinds)?;
            corpus::write_activity_csv(&records, &destination).map_err(data_err)?;
            log::info!("{} comments from {repo} written to {}", records.len(), destination.display());
            Ok(())
        }
        Command::Predict {
            input,
            model,
            eps,
            min_comments,
            cap,
            since,
            until,
            out: destination,
        } => {
            let window = match (since, until) {
                (None, None) => FetchWindow::unbounded(),
                (s, u) => FetchWindow::new(
                    s.unwrap_or(DateTime::<Utc>::MIN_UTC),
                    u.unwrap_or(DateTime::<Utc>::MAX_UTC),
                )
                .map_err(|e| CliError::Usage(e.to_string()))?,
            };
            let model = load_model_arg(&model)?;
            let records = corpus::read_activity_csv(&input).map_err(data_err)?;
            let options = PredictOptions {
                eps,
                min_comments,
                cap,
                window,
            };
            let predictions = predict_activity(&records, &model, &options).map_err(data_err)?;
            store_report::persist_predictions(&predictions, &destination).map_err(data_err)
        }
        Command::Train {
            features,
            labels,
            max_depth,
            min_leaf,
            out: destination,
        } => {
            let records = store_report::load_predictions(&features).map_err(data_err)?;
            let labels = classifier::read_labels(&labels).map_err(data_err)?;
            let (dataset, unmatched) = classifier::join_training_set(&records, &labels);
            for (repo, login) in &unmatched {
                log::warn!("label for {repo} {login} has no matching prediction row");
            }
            let model = classifier::train_tree(&dataset, TrainParams { max_depth, min_leaf }).map_err(data_err)?;
            classifier::save_model(&model, &destination).map_err(data_err)
        }
        Command::Report {
            input,
            format,
            index,
            aliases,
        } => {
            let mut records = store_report::load_predictions(&input).map_err(data_err)?;
            if let Some(path) = aliases {
                let text = std::fs::read_to_string(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
                let map = store_report::parse_alias_map(&text).map_err(data_err)?;
                records = store_report::merge_identities(&records, &map).map_err(data_err)?;
            }
            let text = match format {
                FormatArg::Table => store_report::render_report(&store_report::summarize(&records), ReportFormat::Table),
                FormatArg::Json => store_report::render_report(&store_report::summarize(&records), ReportFormat::Json),
                FormatArg::Ndjson => {
                    store_report::export_bulk_ndjson(&records, &index).map_err(|e| CliError::Usage(e.to_string()))?
                }
            };
            out.write_all(text.as_bytes()).map_err(data_err)
        }
        Command::Override {
            input,
            repo,
            login,
            set,
            from,
            out: destination,
        } => {
            let mut records = store_report::load_predictions(&input).map_err(data_err)?;
            let actions = match (from, repo, login, set) {
                (Some(path), ..) => store_report::read_overrides(&path).map_err(data_err)?,
                (None, Some(repo), Some(login), Some(set)) => {
                    let action = match set {
                        OverrideArg::Bot => OverrideAction::Set(crate::Label::Bot),
                        OverrideArg::Human => OverrideAction::Set(crate::Label::Human),
                        OverrideArg::Clear => OverrideAction::Clear,
                    };
                    vec![(repo, login, action)]
                }
                _ => return Err(CliError::Usage("--repo, --login and --set are required without --from".into())),
            };
            for (repo, login, action) in actions {
                records = store_report::apply_override(&records, &repo, &login, action).map_err(data_err)?;
            }
            store_report::persist_predictions(&records, &destination).map_err(data_err)
        }
        Command::Serve {
            input,
            port,
            host,
            ui_dir,
            comments,
        } => {
            let store = review_service::ReviewStore::open(&input, comments.as_deref()).map_err(data_err)?;
            let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Environment(e.to_string()))?;
            let addr = SocketAddr::new(host, port);
            runtime
                .block_on(review_service::serve(addr, std::sync::Arc::new(store), ui_dir))
                .map_err(|e| CliError::Environment(format!("serve on {addr}: {e}")))
        }
    }
}
