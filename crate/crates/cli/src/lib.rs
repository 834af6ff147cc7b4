//! `audit`: runs the dataset audit pipeline over a directory of annotation
//! tables and serves the hand survey.

pub mod config;
pub mod context;
pub mod error;
pub mod server;
pub mod stages;

use std::ffi::OsString;
use std::fs::OpenOptions;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Context as _;
use clap::{Args, Parser, Subcommand};

use audit_core::ingest::ParseMode;

pub use config::Config;
pub use context::Context;
pub use error::{exit_code, usage, UsageError, EXIT_DATA, EXIT_USAGE};
pub use stages::Stage;

#[derive(Debug, Parser)]
#[command(name = "audit", version, about = "Audit an image dataset's people, content and labels")]
pub struct Cli {
    /// Configuration file; `./audit.toml` is used when present.
    #[arg(long, global = true, env = "AUDIT_CONFIG")]
    pub config: Option<PathBuf>,
    /// Worker threads for the census (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Skip malformed rows with a warning instead of failing.
    #[arg(long, global = true)]
    pub lenient: bool,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub inputs: InputArgs,
    #[command(subcommand)]
    pub command: Command,
}

/// Input paths that override the configuration file.
#[derive(Debug, Default, Args)]
pub struct InputArgs {
    /// Face annotations (repeatable, one file per model is typical).
    #[arg(long, global = true)]
    pub faces: Vec<PathBuf>,
    #[arg(long, global = true)]
    pub nsfw: Option<PathBuf>,
    #[arg(long, global = true)]
    pub classes: Option<PathBuf>,
    #[arg(long, global = true)]
    pub class_sizes: Option<PathBuf>,
    /// Top-5 predictions (repeatable).
    #[arg(long, global = true)]
    pub predictions: Vec<PathBuf>,
    /// Label embeddings (repeatable).
    #[arg(long, global = true)]
    pub embeddings: Vec<PathBuf>,
    #[arg(long, global = true)]
    pub vocabulary: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse every configured input and report row counts.
    Validate,
    /// Per-class count, age and gender tables.
    Census,
    /// Per-class content-score statistics.
    Nsfw,
    /// Cluster classes and select the survey shortlist.
    Cluster,
    /// Two-dimensional label coordinates and the content surface.
    Semantics,
    /// Group gender distributions and the skewness ranking.
    Bias,
    /// Denylist, reference-list and watchlist screening of labels.
    Screen,
    /// Classifier accuracy and the human-delta comparison.
    Accuracy,
    /// Hand-survey server and export.
    Survey {
        #[command(subcommand)]
        command: SurveyCommand,
    },
    /// The audit card (JSON, HTML and SVG panels).
    Card,
    /// Every stage whose inputs are configured.
    All,
}

#[derive(Debug, Subcommand)]
pub enum SurveyCommand {
    /// Serve the survey API (and the review UI, if `paths.static_dir` is set).
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
    /// Write `survey_export.csv` from the queue and event log.
    Export,
}

pub fn init_logging() {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_target(false)
        .try_init();
}

/// Parses arguments, runs the command and returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    init_logging();
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

/// The configuration with command-line overrides applied.
pub fn load_config(cli: &Cli) -> anyhow::Result<Config> {
    let path = cli.config.clone().or_else(|| {
        let default = PathBuf::from("audit.toml");
        default.exists().then_some(default)
    });
    let mut cfg = match &path {
        Some(p) => Config::load(p).map_err(|e| usage(format!("{e:#}")))?,
        None => Config::default(),
    };
    let i = &cli.inputs;
    let p = &mut cfg.paths;
    if !i.faces.is_empty() {
        p.faces = config::OneOrMany::Many(i.faces.clone());
    }
    if !i.predictions.is_empty() {
        p.predictions = config::OneOrMany::Many(i.predictions.clone());
    }
    if !i.embeddings.is_empty() {
        p.embeddings = config::OneOrMany::Many(i.embeddings.clone());
    }
    for (slot, given) in [
        (&mut p.nsfw, &i.nsfw),
        (&mut p.classes, &i.classes),
        (&mut p.class_sizes, &i.class_sizes),
        (&mut p.vocabulary, &i.vocabulary),
    ] {
        if given.is_some() {
            *slot = given.clone();
        }
    }
    if let Some(out) = &cli.out {
        p.out = out.clone();
    }
    cfg.check().map_err(|e| usage(format!("{e:#}")))?;
    Ok(cfg)
}

pub fn execute(cli: Cli) -> anyhow::Result<()> {
    let cfg = load_config(&cli)?;
    let mode = if cli.lenient {
        ParseMode::Lenient
    } else {
        ParseMode::Strict
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().context("starting worker threads")?;
    let ctx = Context::new(cfg, mode);
    pool.install(|| dispatch(&ctx, &cli.command))
}

fn dispatch(ctx: &Context, command: &Command) -> anyhow::Result<()> {
    let stage = match command {
        Command::Validate => return validate(ctx),
        Command::Census => Stage::Census,
        Command::Nsfw => Stage::Nsfw,
        Command::Cluster => Stage::Cluster,
        Command::Semantics => Stage::Semantics,
        Command::Bias => Stage::Bias,
        Command::Screen => Stage::Screen,
        Command::Accuracy => Stage::Accuracy,
        Command::Card => Stage::Card,
        Command::Survey {
            command: SurveyCommand::Export,
        } => Stage::SurveyExport,
        Command::Survey {
            command: SurveyCommand::Serve { addr },
        } => return serve(ctx, *addr),
        Command::All => {
            stages::run_all(ctx)?;
            return Ok(());
        }
    };
    stage.run(ctx)?;
    Ok(())
}

fn serve(ctx: &Context, addr: SocketAddr) -> anyhow::Result<()> {
    let state = ctx.load_survey()?;
    let log_path = ctx.survey_log_path()?;
    let log = OpenOptions::new()
        .create(true)
        .append(true)
        .open(log_path)
        .with_context(|| format!("{}: cannot open for appending", log_path.display()))?;
    let app = Arc::new(server::SurveyServer::new(
        state,
        Box::new(log),
        server::system_clock(),
        ctx.cfg.paths.image_root.clone(),
    ));
    let static_dir = ctx.cfg.paths.static_dir.clone();
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("starting the async runtime")?
        .block_on(server::serve(addr, app, static_dir))
        .with_context(|| format!("serving on {addr}"))
}

/// Loads every configured input; the first failure is returned.
fn validate(ctx: &Context) -> anyhow::Result<()> {
    let p = &ctx.cfg.paths;
    let report = |what: &str, n: usize| println!("{what}: {n}");
    if p.classes.is_some() {
        report("classes", ctx.classes()?.len());
    }
    if p.class_sizes.is_some() {
        report("class sizes", ctx.class_sizes()?.len());
    }
    if !p.faces.paths().is_empty() {
        report("faces", ctx.faces()?.len());
    }
    if p.nsfw.is_some() {
        report("content scores", ctx.nsfw()?.len());
    }
    if !p.predictions.paths().is_empty() {
        report("predictions", ctx.predictions()?.len());
    }
    if !p.embeddings.paths().is_empty() {
        report("embeddings", ctx.embeddings()?.len());
    }
    if p.vocabulary.is_some() {
        report("vocabulary", ctx.vocabulary()?.len());
    }
    for path in [&p.denylist, &p.reference_labels].into_iter().flatten() {
        report(&path.display().to_string(), ctx.term_list(path)?.len());
    }
    if let Some(groups) = ctx.group_mapping()? {
        report("group mapping", groups.len());
    }
    if p.classes.is_some() {
        if let Some(list) = ctx.ranking_list()? {
            report("ranking classes", list.found.len());
        }
        for w in ctx.watchlists()? {
            report(&format!("watchlist {}", w.list.name), w.found.len());
        }
    }
    for (name, table) in ctx.external_tables()? {
        report(&format!("external {name}"), table.rows.len());
    }
    if p.survey_log.is_some() && Stage::SurveyExport.missing_input(ctx).is_none() {
        report("survey labels", ctx.survey()?.events().len());
    }
    Ok(())
}
