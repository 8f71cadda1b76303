use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use proclens_core::evaluation::{record_rating, EvaluationRecord, RejectReason, Rubric};
use proclens_core::event_log::{ingest_csv, parse_jsonl, split_sessions, validate, write_jsonl, ColumnMapping};
use proclens_core::llm_harness::{
    generation_stats, run_batch, CacheTransport, Harness, HttpTransport, MockTransport, PlanSpec, Transport,
};
use proclens_core::project::{GenerateError, Project, ProjectConfig, CONFIG_ENV};
use proclens_core::replay::reconstruct_at_with;
use proclens_core::report::build_report;
use proclens_core::TaskKind;

#[derive(Debug, Parser)]
#[command(name = "proclens", version, about = "Replay, segment and summarize keystroke-level programming sessions")]
pub struct Cli {
    /// Project config file.
    #[arg(long, global = true, env = CONFIG_ENV, default_value = "proclens.toml")]
    pub config: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse, validate and split raw logs into one canonical JSONL file per session.
    Ingest(IngestArgs),
    /// Print the code after the first N events of a session.
    Replay {
        #[arg(long)]
        session: String,
        /// 1-based event index.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        at: u64,
        /// Print the full state as JSON instead of the bare text.
        #[arg(long)]
        json: bool,
    },
    /// Print the snapshot sequence of a session as JSON.
    Snapshots {
        #[arg(long)]
        session: String,
        #[arg(long, value_parser = clap::value_parser!(i64).range(1..))]
        threshold: Option<i64>,
        #[arg(long)]
        dedup: bool,
    },
    /// Print the prompt that would be sent for a session.
    RenderPrompt {
        #[arg(long)]
        session: String,
        #[arg(long, value_enum)]
        task: TaskArg,
        #[command(flatten)]
        range: RangeArgs,
    },
    /// Run a batch plan and store one record per item.
    Run {
        /// JSON plan; `{}` means every session, task and model.
        #[arg(long)]
        plan: PathBuf,
        /// Answer from a deterministic in-process mock.
        #[arg(long, conflicts_with = "cache")]
        mock: bool,
        /// Answer only from responses already in the record store.
        #[arg(long)]
        cache: bool,
        /// Regenerate even when a matching record exists.
        #[arg(long)]
        force: bool,
    },
    /// Mean latency and response length per model.
    Stats {
        #[arg(long)]
        json: bool,
    },
    /// Record a rating. Prompts on stdin for anything not given as a flag.
    Evaluate(EvaluateArgs),
    /// Aggregate report over records and ratings.
    Report {
        #[arg(long)]
        json: bool,
    },
    /// Serve the JSON API for the review app.
    Serve {
        #[arg(long, default_value_t = 8765)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Generate with the deterministic mock instead of the configured endpoints.
        #[arg(long)]
        mock: bool,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TaskArg {
    Summary,
    Feedback,
}

impl From<TaskArg> for TaskKind {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Summary => TaskKind::Summary,
            TaskArg::Feedback => TaskKind::Feedback,
        }
    }
}

#[derive(Debug, Args)]
pub struct RangeArgs {
    /// First step (1-based) of a sub-range.
    #[arg(long = "from", value_parser = clap::value_parser!(u64).range(1..))]
    pub step_from: Option<u64>,
    /// Last step of a sub-range.
    #[arg(long = "to", value_parser = clap::value_parser!(u64).range(1..))]
    pub step_to: Option<u64>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// JSONL event files, or CSV files together with --mapping.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// JSON column mapping for CSV inputs.
    #[arg(long)]
    pub mapping: Option<PathBuf>,
    /// Output directory; defaults to the project's events directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub record: String,
    #[arg(long)]
    pub rater: String,
    #[arg(long)]
    pub acceptable: Option<bool>,
    /// single_state_only, generic_only or other.
    #[arg(long)]
    pub reason: Option<String>,
    #[arg(long)]
    pub hallucinations: Option<u32>,
    #[arg(long)]
    pub process_focus: Option<u8>,
    #[arg(long)]
    pub specificity: Option<u8>,
    #[arg(long)]
    pub correctness: Option<u8>,
    #[arg(long)]
    pub utility: Option<u8>,
    /// Theme tag; repeatable.
    #[arg(long = "theme")]
    pub themes: Vec<String>,
    #[arg(long)]
    pub notes: Option<String>,
}

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation: exit status 2.
    Usage(String),
    /// Bad data or a failed operation: exit status 1.
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
        }
    }
}

fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

fn from_generate(e: GenerateError) -> CliError {
    match e {
        GenerateError::UnknownSession(_) | GenerateError::UnknownModel(_) => CliError::Usage(e.to_string()),
        GenerateError::Segmentation(proclens_core::segmentation::SegmentationError::InvalidRange { .. }) => {
            CliError::Usage(e.to_string())
        }
        other => data(other),
    }
}

fn load(config: &Path) -> Result<Project, CliError> {
    Project::load(config).map_err(data)
}

/// Runs one command. `input` feeds interactive prompts.
pub fn execute(cli: Cli, input: &mut dyn BufRead, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Ingest(args) => ingest(&cli.config, args, out),
        Command::Replay { session, at, json } => {
            let project = load(&cli.config)?;
            let s = project
                .session(&session)
                .ok_or_else(|| CliError::Usage(format!("unknown session '{session}'")))?;
            let state = reconstruct_at_with(s, at as usize, project.config.replay_mode).map_err(data)?;
            if json {
                writeln!(out, "{}", serde_json::to_string_pretty(&state).map_err(data)?).map_err(data)?;
            } else {
                write!(out, "{}", state.text).map_err(data)?;
            }
            Ok(())
        }
        Command::Snapshots {
            session,
            threshold,
            dedup,
        } => {
            let project = load(&cli.config)?;
            let seq = project.snapshots(&session, threshold, dedup).map_err(from_generate)?;
            writeln!(out, "{}", serde_json::to_string_pretty(&seq).map_err(data)?).map_err(data)
        }
        Command::RenderPrompt { session, task, range } => {
            let project = load(&cli.config)?;
            let range = resolve_range(&project, &session, &range)?;
            let (bundle, _) = project.prompt(&session, task.into(), range).map_err(from_generate)?;
            eprintln!("{} steps, about {} tokens", bundle.step_count, bundle.estimated_tokens);
            write!(out, "{}", bundle.prompt_text).map_err(data)
        }
        Command::Run {
            plan,
            mock,
            cache,
            force,
        } => {
            let project = load(&cli.config)?;
            let text = fs::read_to_string(&plan).map_err(|e| data(format!("{}: {e}", plan.display())))?;
            let spec: PlanSpec =
                serde_json::from_str(&text).map_err(|e| data(format!("{}: {e}", plan.display())))?;
            let plan = spec.resolve(
                &project.session_ids(),
                &project.config.tasks,
                &project.model_ids(),
                project.config.threshold_ms,
            );
            let transport: Arc<dyn Transport> = if mock {
                Arc::new(MockTransport::canned())
            } else if cache {
                Arc::new(CacheTransport::from_store(&project.records).map_err(data)?)
            } else {
                Arc::new(HttpTransport::new())
            };
            let harness = Harness::new(transport).with_rate_limit(project.config.rate_limit_ms);
            let outcome =
                run_batch(&plan, project.batch_inputs(), &harness, &project.records, force).map_err(data)?;
            let errors = outcome.records.iter().filter(|r| !r.is_ok()).count();
            writeln!(
                out,
                "{} records ({} generated, {} reused, {} errors)\n",
                outcome.records.len(),
                outcome.executed,
                outcome.reused,
                errors
            )
            .map_err(data)?;
            write!(out, "{}", generation_stats(&outcome.records)).map_err(data)
        }
        Command::Stats { json } => {
            let project = load(&cli.config)?;
            let table = generation_stats(&project.records.list().map_err(data)?);
            if json {
                writeln!(out, "{}", serde_json::to_string_pretty(&table).map_err(data)?).map_err(data)
            } else {
                write!(out, "{table}").map_err(data)
            }
        }
        Command::Evaluate(args) => {
            let project = load(&cli.config)?;
            if !project.records.contains(&args.record) {
                return Err(CliError::Usage(format!("unknown record '{}'", args.record)));
            }
            let rating = collect_rating(args, input)?;
            let stored = record_rating(&project.evaluations, &project.records, rating).map_err(data)?;
            writeln!(
                out,
                "stored rating of {} by {} ({} version(s))",
                stored.latest.record_id,
                stored.latest.rater_id,
                stored.history.len()
            )
            .map_err(data)
        }
        Command::Report { json } => {
            let project = load(&cli.config)?;
            let report = build_report(
                &project.records.list().map_err(data)?,
                &project.evaluations.latest().map_err(data)?,
                &project.codebook,
            );
            if json {
                writeln!(out, "{}", serde_json::to_string_pretty(&report).map_err(data)?).map_err(data)
            } else {
                write!(out, "{}", report.render()).map_err(data)
            }
        }
        Command::Serve { port, host, mock } => {
            let project = load(&cli.config)?;
            let transport: Arc<dyn Transport> = if mock {
                Arc::new(MockTransport::canned())
            } else {
                Arc::new(HttpTransport::new())
            };
            let harness = Harness::new(transport).with_rate_limit(project.config.rate_limit_ms);
            let state = Arc::new(crate::server::AppState { project, harness });
            let runtime = tokio::runtime::Runtime::new().map_err(data)?;
            runtime.block_on(crate::server::serve(state, &host, port)).map_err(data)
        }
    }
}

fn resolve_range(project: &Project, session: &str, range: &RangeArgs) -> Result<Option<(usize, usize)>, CliError> {
    if range.step_from.is_none() && range.step_to.is_none() {
        return Ok(None);
    }
    let len = project.snapshots(session, None, false).map_err(from_generate)?.len();
    let from = range.step_from.map_or(1, |v| v as usize);
    let to = range.step_to.map_or(len, |v| v as usize);
    Ok(Some((from, to)))
}

fn ingest(config: &Path, args: IngestArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let out_dir = match args.out {
        Some(dir) => dir,
        None => ProjectConfig::load(config).map_err(data)?.events_dir,
    };
    let mapping = match &args.mapping {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| data(format!("{}: {e}", p.display())))?;
            Some(ColumnMapping::from_json(&text).map_err(|e| data(format!("{}: {e}", p.display())))?)
        }
        None => None,
    };

    let mut events = Vec::new();
    for path in &args.inputs {
        let file = fs::File::open(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
        let parsed = if path.extension().is_some_and(|e| e == "csv") {
            let mapping = mapping
                .as_ref()
                .ok_or_else(|| CliError::Usage(format!("{} is CSV; pass --mapping", path.display())))?;
            ingest_csv(file, mapping)
        } else {
            parse_jsonl(file)
        };
        events.extend(parsed.map_err(|e| data(format!("{}: {e}", path.display())))?);
    }

    let report = validate(&events);
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    if !report.errors.is_empty() {
        for e in &report.errors {
            eprintln!("error: {e}");
        }
        return Err(data(format!("{} validation error(s); nothing written", report.errors.len())));
    }

    let n_events = events.len();
    let sessions = split_sessions(events);
    fs::create_dir_all(&out_dir).map_err(|e| data(format!("{}: {e}", out_dir.display())))?;
    for s in &sessions {
        let path = out_dir.join(format!("{}.jsonl", s.key.id()));
        let file = fs::File::create(&path).map_err(|e| data(format!("{}: {e}", path.display())))?;
        write_jsonl(std::io::BufWriter::new(file), s.events()).map_err(data)?;
    }
    writeln!(
        out,
        "{n_events} events, {} sessions, {} warnings; written to {}",
        sessions.len(),
        report.warnings.len(),
        out_dir.display()
    )
    .map_err(data)
}

fn ask(input: &mut dyn BufRead, prompt: &str) -> Result<String, CliError> {
    eprint!("{prompt}: ");
    let mut line = String::new();
    if input.read_line(&mut line).map_err(data)? == 0 {
        return Err(CliError::Usage(format!("no answer for '{prompt}'")));
    }
    Ok(line.trim().to_owned())
}

fn ask_parsed<T: std::str::FromStr>(input: &mut dyn BufRead, prompt: &str) -> Result<T, CliError> {
    loop {
        let answer = ask(input, prompt)?;
        match answer.parse() {
            Ok(v) => return Ok(v),
            Err(_) => eprintln!("could not read '{answer}'"),
        }
    }
}

fn ask_yes_no(input: &mut dyn BufRead, prompt: &str) -> Result<bool, CliError> {
    loop {
        match ask(input, &format!("{prompt} [y/n]"))?.to_ascii_lowercase().as_str() {
            "y" | "yes" => return Ok(true),
            "n" | "no" => return Ok(false),
            _ => eprintln!("answer y or n"),
        }
    }
}

fn collect_rating(args: EvaluateArgs, input: &mut dyn BufRead) -> Result<EvaluationRecord, CliError> {
    let interactive = args.acceptable.is_none();
    let acceptable = match args.acceptable {
        Some(v) => v,
        None => ask_yes_no(input, "acceptable")?,
    };
    let reject_reason = match (&args.reason, acceptable, interactive) {
        (Some(r), _, _) => Some(r.parse::<RejectReason>().map_err(|e| CliError::Usage(e.to_string()))?),
        (None, false, true) => Some(ask_parsed(input, "reason (single_state_only, generic_only, other)")?),
        _ => None,
    };

    let scores = [args.process_focus, args.specificity, args.correctness, args.utility];
    let any_score = args.hallucinations.is_some() || scores.iter().any(Option::is_some);
    let rubric = if any_score {
        match (args.hallucinations, scores) {
            (Some(h), [Some(p), Some(s), Some(c), Some(u)]) => Some(Rubric {
                hallucination_count: h,
                process_focus: p,
                specificity: s,
                correctness: c,
                utility: u,
            }),
            _ => {
                return Err(CliError::Usage(
                    "rubric needs --hallucinations, --process-focus, --specificity, --correctness and --utility".into(),
                ))
            }
        }
    } else if interactive && ask_yes_no(input, "score the rubric")? {
        Some(Rubric {
            hallucination_count: ask_parsed(input, "hallucinations (count)")?,
            process_focus: ask_parsed(input, "process focus (1-5)")?,
            specificity: ask_parsed(input, "specificity (1-5)")?,
            correctness: ask_parsed(input, "correctness (1-5)")?,
            utility: ask_parsed(input, "utility (1-5)")?,
        })
    } else {
        None
    };

    let themes = if interactive && args.themes.is_empty() {
        ask(input, "themes (comma separated, blank for none)")?
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(str::to_owned)
            .collect()
    } else {
        args.themes
    };
    let notes = match args.notes {
        Some(n) => n,
        None if interactive => ask(input, "notes")?,
        None => String::new(),
    };

    Ok(EvaluationRecord {
        record_id: args.record,
        rater_id: args.rater,
        acceptable,
        reject_reason,
        rubric,
        themes,
        notes,
    })
}
