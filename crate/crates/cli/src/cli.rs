//! Subcommand definitions and their execution against a project directory.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use normlens::commands::{self, BatchOptions, ConceptSpec, Outcome, RubricRequest};
use normlens::elicitation::PromptScript;
use normlens::grounding::GroundingTemplate;
use normlens::ingestion::{self, CorpusFormat, DownsampleSpec, FillField};
use normlens::metrics;
use normlens::provider::{ChatProvider, SystemClock};
use normlens::schema::validate_project;
use normlens::store::{export_graph, stage_accounting, write_graph};
use normlens::{Aspect, Error, Event, HumanJudgment, Project, Result, Rubric, Store, Workflow};

use crate::config::{self, Config};

#[derive(Debug, Parser)]
#[command(name = "normlens", version, about = "Ground conversations in cultural norms", propagate_version = true)]
pub struct Cli {
    /// Project directory (event log, snapshots, exports).
    #[arg(long, short = 'p', global = true, env = "NORMLENS_PROJECT")]
    pub project: Option<PathBuf>,

    /// TOML config file; defaults to <project>/normlens.toml when present.
    #[arg(long, short = 'c', global = true)]
    pub config: Option<PathBuf>,

    /// Print the events a command would append, without appending them.
    #[arg(long, global = true)]
    pub dry_run: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load a corpus into the project.
    Ingest(IngestArgs),
    /// Ask the provider for missing relationships, settings or summaries.
    Fill {
        #[arg(long, value_delimiter = ',', required = true, value_parser = parse_fill_field)]
        fields: Vec<FillField>,
        #[command(flatten)]
        provider: ProviderArg,
    },
    /// Elicit norm, violation and effect descriptions.
    Elicit {
        #[command(flatten)]
        provider: ProviderArg,
        /// Re-parse stored transcripts instead of calling the provider.
        #[arg(long)]
        reinterpret: bool,
    },
    /// Embed norm descriptions that lack an embedding.
    Embed {
        /// `hashing`, `hashing:<dims>`, `http` or `replay:<file>`.
        #[arg(long)]
        embedder: Option<String>,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
    },
    /// Cluster the unmapped descriptions for the next round.
    Cluster {
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Create, mark, import or export norm concepts.
    #[command(subcommand)]
    Concept(ConceptCommand),
    /// Assign unmapped descriptions to the nearest concept.
    Augment {
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Reassign automated mappings using good and bad marks.
    Reassign {
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Map assigned descriptions onto their concept's symbolic slots.
    Ground {
        #[command(flatten)]
        provider: ProviderArg,
        /// Alternative prompt template file.
        #[arg(long)]
        template: Option<PathBuf>,
    },
    /// Build or import the rubric used by multi-agent verification.
    #[command(subcommand)]
    Rubric(RubricCommand),
    /// Verify descriptions, mappings or violation judgments.
    Verify {
        #[arg(long, value_parser = parse_aspect)]
        aspect: Aspect,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        threshold: Option<f64>,
        #[command(flatten)]
        provider: ProviderArg,
    },
    /// Record human judgments from a JSON array or JSONL file.
    Judgments { file: PathBuf },
    /// Print evaluation reports.
    Metrics {
        #[arg(value_enum, default_value_t = Report::All)]
        report: Report,
        /// Machine-readable output.
        #[arg(long)]
        json: bool,
    },
    /// Write the schema graph as JSONL.
    ExportGraph {
        /// Output path, or `-` for stdout. Defaults to the project's exports directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Show round, coverage and counts.
    Status,
    /// Check the project against every schema invariant.
    Validate,
    /// Run the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        /// Shared secret expected after the annotator id in bearer tokens.
        #[arg(long, env = "NORMLENS_SECRET")]
        secret: Option<String>,
        #[command(flatten)]
        provider: ProviderArg,
    },
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long, value_parser = parse_format)]
    pub format: CorpusFormat,
    pub path: PathBuf,
    /// `[task:]label=fraction`, repeatable.
    #[arg(long, value_parser = parse_downsample)]
    pub downsample: Vec<DownsampleSpec>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fields to fill right after loading.
    #[arg(long, value_delimiter = ',', value_parser = parse_fill_field)]
    pub fill: Vec<FillField>,
    #[command(flatten)]
    pub provider: ProviderArg,
}

#[derive(Debug, Args, Clone, Default)]
pub struct ProviderArg {
    /// `echo`, `http`, `replay:<cassette>` or `scripted:<json>`.
    #[arg(long)]
    pub provider: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum ConceptCommand {
    /// Create one concept from a JSON spec file.
    Create {
        file: PathBuf,
        #[arg(long)]
        annotator: Option<String>,
    },
    /// Record good and bad example marks.
    Mark {
        /// Concept id or name.
        concept: String,
        #[arg(long, value_delimiter = ',')]
        good: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        bad: Vec<String>,
        #[arg(long)]
        annotator: String,
    },
    /// Create concepts from a JSON array of specs.
    Import { file: PathBuf },
    /// Write all concepts as a JSON array of specs.
    Export {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum RubricCommand {
    /// Run the critic and verifier roles from a request file.
    Generate {
        request: PathBuf,
        #[command(flatten)]
        provider: ProviderArg,
    },
    /// Store a rubric document as the next version.
    Import { file: PathBuf },
    /// Print the latest rubric for an aspect.
    Show {
        #[arg(value_parser = parse_aspect)]
        aspect: Aspect,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    #[value(name = "self")]
    SelfCheck,
    #[value(alias = "multiagent")]
    Agents,
}

impl From<Mode> for Workflow {
    fn from(m: Mode) -> Self {
        match m {
            Mode::SelfCheck => Workflow::SelfCheck,
            Mode::Agents => Workflow::MultiAgent,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Report {
    Quality,
    Agreement,
    Likert,
    Distribution,
    Accounting,
    All,
}

fn parse_format(s: &str) -> std::result::Result<CorpusFormat, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_fill_field(s: &str) -> std::result::Result<FillField, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_downsample(s: &str) -> std::result::Result<DownsampleSpec, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_aspect(s: &str) -> std::result::Result<Aspect, String> {
    s.parse().map_err(|e: normlens::error::ParseEnumError| e.to_string())
}

/// Appends (or, in dry-run mode, collects) events on behalf of a command.
struct Exec {
    store: Store,
    dry: bool,
    scratch: Project,
    planned: Vec<Event>,
}

impl Exec {
    fn project(&self) -> &Project {
        if self.dry {
            &self.scratch
        } else {
            self.store.project()
        }
    }

    fn push(&mut self, events: Vec<Event>) -> Result<()> {
        if self.dry {
            for e in &events {
                self.scratch.apply(e)?;
            }
            self.planned.extend(events);
            Ok(())
        } else {
            self.store.append_all(events).map(|_| ())
        }
    }
}

fn provider_for(arg: &ProviderArg, config: &Config) -> Result<Arc<dyn ChatProvider>> {
    let spec = arg
        .provider
        .clone()
        .or_else(|| config.provider.clone())
        .ok_or_else(|| Error::InvalidArgument("no provider configured; pass --provider or set `provider`".into()))?;
    config::chat_provider(&spec)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Reads a JSON array, or one JSON document per line.
fn read_records<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim_start().starts_with('[') {
        return Ok(serde_json::from_str(&text)?);
    }
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn resolve_concept(project: &Project, key: &str) -> Result<String> {
    if project.concepts.contains_key(key) {
        return Ok(key.to_owned());
    }
    project
        .concept_by_name(key)
        .map(|c| c.id.clone())
        .ok_or_else(|| Error::not_found("concept", key))
}

fn warn_all(out: &mut dyn Write, warnings: &[String]) -> Result<()> {
    for w in warnings {
        writeln!(out, "warning: {w}").map_err(|e| Error::io("<stdout>", e))?;
    }
    Ok(())
}

macro_rules! say {
    ($out:expr, $($arg:tt)*) => {
        writeln!($out, $($arg)*).map_err(|e| Error::io("<stdout>", e))?
    };
}

/// Runs one parsed command line, writing human-readable output to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let Some(project_dir) = cli.project.clone() else {
        return Err(Error::InvalidArgument(
            "no project given; pass --project <dir> or set NORMLENS_PROJECT".into(),
        ));
    };
    let creates = matches!(cli.command, Command::Ingest(_));
    if !creates && !project_dir.join("events.jsonl").exists() && !project_dir.is_dir() {
        return Err(Error::not_found("project", project_dir.display().to_string()));
    }
    let config = Config::load(cli.config.as_deref(), &project_dir)?;
    if let Command::Serve { addr, secret, provider } = &cli.command {
        let store = Store::open(&project_dir)?;
        let provider = match provider.provider.clone().or_else(|| config.provider.clone()) {
            Some(spec) => Some(config::chat_provider(&spec)?),
            None => None,
        };
        let state = crate::server::AppState::new(store, config.clone(), provider, secret.clone());
        say!(out, "listening on {addr}");
        return crate::server::serve(state, addr);
    }
    let store = Store::open(&project_dir)?;
    let scratch = store.project().clone();
    let mut exec = Exec {
        store,
        dry: cli.dry_run,
        scratch,
        planned: Vec::new(),
    };
    let before = exec.project().version;
    let clock = SystemClock;
    let batch = |parallelism: usize| BatchOptions {
        retry: config.retry(),
        parallelism,
        clock: &clock,
    };

    match cli.command {
        Command::Serve { .. } => unreachable!("handled above"),
        Command::Ingest(args) => {
            let mut report = ingestion::load_corpus(&args.path, args.format)?;
            for e in &report.errors {
                say!(out, "warning: {e}");
            }
            let seed = args.seed.unwrap_or(config.seed);
            for spec in &args.downsample {
                let kept = ingestion::downsample(&mut report.conversations, spec, seed)?;
                say!(out, "downsample {spec}: kept {} labels", kept.len());
            }
            for (source, n) in &report.counts {
                say!(out, "{source}: {n} conversations");
            }
            let outcome = commands::ingest(exec.project(), report.conversations);
            warn_all(out, &outcome.warnings)?;
            exec.push(outcome.events)?;
            if !args.fill.is_empty() {
                let provider = provider_for(&args.provider, &config)?;
                let project = exec.project().clone();
                let outcome = commands::fill(
                    &project,
                    &args.fill,
                    provider.as_ref(),
                    batch(config.parallelism),
                    &mut |e| exec.push(e),
                )?;
                warn_all(out, &outcome.warnings)?;
            }
        }
        Command::Fill { fields, provider } => {
            let provider = provider_for(&provider, &config)?;
            let project = exec.project().clone();
            let outcome =
                commands::fill(&project, &fields, provider.as_ref(), batch(config.parallelism), &mut |e| exec.push(e))?;
            warn_all(out, &outcome.warnings)?;
        }
        Command::Elicit { provider, reinterpret } => {
            if reinterpret {
                let outcome = commands::reinterpret(exec.project());
                exec.push(outcome.events)?;
            } else {
                let provider = provider_for(&provider, &config)?;
                let project = exec.project().clone();
                let outcome = commands::elicit(
                    &project,
                    provider.as_ref(),
                    &PromptScript::default(),
                    batch(config.parallelism),
                    &mut |e| exec.push(e),
                )?;
                warn_all(out, &outcome.warnings)?;
            }
            for (kind, n) in commands::description_counts(exec.project()) {
                say!(out, "{}: {n}", kind.as_str());
            }
        }
        Command::Embed { embedder, batch_size } => {
            let spec = embedder.or(config.embedder.clone()).unwrap_or_else(|| "hashing".into());
            let embedder = config::embedder(&spec)?;
            let outcome = commands::embed(exec.project(), embedder.as_ref(), batch_size)?;
            say!(out, "embedded {} descriptions", outcome.events.len());
            exec.push(outcome.events)?;
        }
        Command::Cluster { k, seed } => {
            let mut d = config.discovery();
            d.k = k.or(d.k);
            d.seed = seed.unwrap_or(d.seed);
            let outcome = commands::cluster(exec.project(), &d)?;
            warn_all(out, &outcome.warnings)?;
            for e in &outcome.events {
                if let Event::ClustersComputed { round, clusters, .. } = e {
                    say!(out, "round {round}: {} clusters", clusters.len());
                    for c in clusters {
                        say!(out, "  {} ({} members)", c.cluster_id, c.members.len());
                    }
                }
            }
            exec.push(outcome.events)?;
        }
        Command::Concept(cmd) => run_concept(cmd, &mut exec, out)?,
        Command::Augment { tau } => {
            let outcome = commands::augment(exec.project(), tau.unwrap_or(config.tau))?;
            warn_all(out, &outcome.warnings)?;
            exec.push(outcome.events)?;
            coverage_line(exec.project(), out)?;
        }
        Command::Reassign { tau, lambda } => {
            let outcome = commands::reassign(
                exec.project(),
                tau.unwrap_or(config.tau),
                lambda.unwrap_or(config.lambda),
            )?;
            exec.push(outcome.events)?;
            coverage_line(exec.project(), out)?;
        }
        Command::Ground { provider, template } => {
            let template = match template {
                Some(p) => GroundingTemplate::parse(&std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?)?,
                None => GroundingTemplate::default(),
            };
            let provider = provider_for(&provider, &config)?;
            let project = exec.project().clone();
            let outcome = commands::ground(
                &project,
                provider.as_ref(),
                &template,
                batch(config.parallelism),
                &mut |e| exec.push(e),
            )?;
            warn_all(out, &outcome.warnings)?;
            say!(out, "groundings: {}", exec.project().groundings.len());
        }
        Command::Rubric(cmd) => match cmd {
            RubricCommand::Generate { request, provider } => {
                let request: RubricRequest = read_json(&request)?;
                let provider = provider_for(&provider, &config)?;
                let outcome = commands::generate_rubric(exec.project(), &request, provider.as_ref(), config.retry())?;
                warn_all(out, &outcome.warnings)?;
                exec.push(outcome.events)?;
            }
            RubricCommand::Import { file } => {
                let rubric: Rubric = read_json(&file)?;
                let outcome = commands::import_rubric(exec.project(), rubric)?;
                exec.push(outcome.events)?;
            }
            RubricCommand::Show { aspect } => {
                let rubric = exec
                    .project()
                    .latest_rubric(aspect)
                    .ok_or_else(|| Error::not_found("rubric", aspect.as_str()))?;
                say!(out, "{}", serde_json::to_string_pretty(rubric)?);
            }
        },
        Command::Verify {
            aspect,
            mode,
            threshold,
            provider,
        } => {
            let provider = provider_for(&provider, &config)?;
            let mut cfg = config.batch();
            if let Some(t) = threshold {
                cfg.threshold = t;
            }
            let project = exec.project().clone();
            let (outcome, summary) =
                commands::verify(&project, aspect, mode.into(), provider.as_ref(), &cfg, &mut |e| exec.push(e))?;
            warn_all(out, &outcome.warnings)?;
            say!(
                out,
                "retained {}, discarded {}, failed {}",
                summary.retained,
                summary.discarded,
                summary.failed
            );
        }
        Command::Judgments { file } => {
            let judgments: Vec<HumanJudgment> = read_records(&file)?;
            let outcome = commands::record_judgments(exec.project(), judgments)?;
            say!(out, "recorded {} judgments", outcome.events.len());
            exec.push(outcome.events)?;
        }
        Command::Metrics { report, json } => print_metrics(exec.project(), report, json, out)?,
        Command::ExportGraph { out: path } => {
            let records = export_graph(exec.project())?;
            match path {
                Some(p) if p.as_os_str() == "-" => {
                    write_graph(&records, &mut *out).map_err(|e| Error::io("<stdout>", e))?;
                }
                Some(p) => {
                    let f = std::fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
                    write_graph(&records, std::io::BufWriter::new(f)).map_err(|e| Error::io(&p, e))?;
                    say!(out, "wrote {} records to {}", records.len(), p.display());
                }
                None => {
                    let p = exec.store.write_export()?;
                    say!(out, "wrote {} records to {}", records.len(), p.display());
                }
            }
        }
        Command::Status => {
            let p = exec.project();
            say!(out, "version {}", p.version);
            say!(out, "round {}", p.round);
            say!(out, "conversations {}", p.conversations.len());
            for (kind, n) in commands::description_counts(p) {
                say!(out, "{} {n}", kind.as_str());
            }
            say!(out, "embeddings {}", p.embeddings.len());
            say!(out, "groundings {}", p.groundings.len());
            say!(out, "verdicts {}", p.verdicts.len());
            say!(out, "judgments {}", p.judgments.len());
            say!(out, "failures {}", p.failures.len());
            coverage_line(p, out)?;
        }
        Command::Validate => {
            let reports = validate_project(exec.project());
            for r in &reports {
                say!(out, "{}: {} ({})", r.target_id, r.message, r.rule);
            }
            if !reports.is_empty() {
                return Err(Error::invariant("validate", format!("{} violations", reports.len())));
            }
            say!(out, "ok");
        }
    }

    if exec.dry {
        for e in &exec.planned {
            say!(out, "{}", serde_json::to_string(e)?);
        }
    } else {
        let after = exec.project().version;
        if after != before {
            say!(out, "appended {} events (version {after})", after - before);
        }
    }
    Ok(())
}

fn run_concept(cmd: ConceptCommand, exec: &mut Exec, out: &mut dyn Write) -> Result<()> {
    let outcome: Outcome = match cmd {
        ConceptCommand::Create { file, annotator } => {
            let mut spec: ConceptSpec = read_json(&file)?;
            if let Some(a) = annotator {
                spec.annotator = a;
            }
            commands::create_concept(exec.project(), &spec)?
        }
        ConceptCommand::Mark {
            concept,
            good,
            bad,
            annotator,
        } => {
            let id = resolve_concept(exec.project(), &concept)?;
            commands::mark(exec.project(), &id, &good, &bad, &annotator)?
        }
        ConceptCommand::Import { file } => {
            let specs: Vec<ConceptSpec> = read_json(&file)?;
            commands::import_concepts(exec.project(), &specs)?
        }
        ConceptCommand::Export { out: path } => {
            let text = serde_json::to_string_pretty(&commands::export_concepts(exec.project()))?;
            match path {
                Some(p) => std::fs::write(&p, text + "\n").map_err(|e| Error::io(&p, e))?,
                None => say!(out, "{text}"),
            }
            Outcome::default()
        }
    };
    warn_all(out, &outcome.warnings)?;
    for e in &outcome.events {
        if let Event::ConceptCreated { concept, .. } = e {
            say!(out, "created {} ({})", concept.id, concept.name);
        }
    }
    exec.push(outcome.events)
}

fn coverage_line(p: &Project, out: &mut dyn Write) -> Result<()> {
    let c = normlens::discovery::coverage_stats(p);
    say!(
        out,
        "coverage {}/{} = {:.3} over {} concepts",
        c.mapped,
        c.total,
        c.coverage_fraction,
        c.concepts
    );
    Ok(())
}

/// Everything the metrics reports compute, in one document.
pub fn metrics_document(p: &Project) -> serde_json::Value {
    let likert = metrics::likert_mean(&p.judgments).map_err(|e| e.to_string());
    serde_json::json!({
        "quality": metrics::quality_report(p),
        "agreement": metrics::agreement_report(p)
            .into_iter()
            .map(|(a, r)| (a.as_str().to_owned(), match r {
                Ok(r) => serde_json::to_value(r).expect("serializes"),
                Err(e) => serde_json::json!({"error": e}),
            }))
            .collect::<serde_json::Map<_, _>>(),
        "likert": match likert {
            Ok(r) => serde_json::to_value(r).expect("serializes"),
            Err(e) => serde_json::json!({"error": e}),
        },
        "distribution": metrics::concept_field_distribution(p),
        "accounting": stage_accounting(p),
    })
}

fn print_metrics(p: &Project, report: Report, json: bool, out: &mut dyn Write) -> Result<()> {
    if json {
        let doc = metrics_document(p);
        let value = match report {
            Report::All => doc,
            Report::Quality => doc["quality"].clone(),
            Report::Agreement => doc["agreement"].clone(),
            Report::Likert => doc["likert"].clone(),
            Report::Distribution => doc["distribution"].clone(),
            Report::Accounting => doc["accounting"].clone(),
        };
        say!(out, "{}", serde_json::to_string_pretty(&value)?);
        return Ok(());
    }
    let all = report == Report::All;
    if all || report == Report::Quality {
        say!(out, "aspect\tstage\tquality\tretention\tn");
        for row in metrics::quality_report(p) {
            say!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                row.aspect.as_str(),
                row.stage,
                row.result.quality,
                row.result.retention,
                row.result.original
            );
        }
    }
    if all || report == Report::Agreement {
        for (aspect, r) in metrics::agreement_report(p) {
            match r {
                Ok(r) => say!(
                    out,
                    "alpha {}: {:.3} ({} items, {} dropped)",
                    aspect.as_str(),
                    r.alpha,
                    r.items_used,
                    r.items_dropped
                ),
                Err(e) => say!(out, "alpha {}: {e}", aspect.as_str()),
            }
        }
    }
    if all || report == Report::Likert {
        match metrics::likert_mean(&p.judgments) {
            Ok(r) => say!(out, "likert mean {:.2} over {} ratings", r.mean, r.count),
            Err(e) => say!(out, "likert: {e}"),
        }
    }
    if all || report == Report::Distribution {
        write!(out, "{}", metrics::concept_field_distribution(p).to_tsv()).map_err(|e| Error::io("<stdout>", e))?;
    }
    if all || report == Report::Accounting {
        say!(out, "{}", serde_json::to_string_pretty(&stage_accounting(p))?);
    }
    Ok(())
}
