use std::fs::File;
use std::io::{BufReader, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use twinpilot_control::server::{serve, Runtime};
use twinpilot_core::agent::LlmBackend;
use twinpilot_core::dataset::{
    annotate_plausibility, evaluate, read_annotations, sample_dataset, Dataset, EvalOptions,
};
use twinpilot_core::observer::{load_rules, RuleSet};
use twinpilot_core::script::Script;
use twinpilot_core::session::{bundled_script, record_script, replay, Session, SessionConfig, BUNDLED_SCRIPTS};
use twinpilot_core::sim::LayoutConfig;

#[derive(Parser)]
#[command(name = "twinpilot", version, about = "Digital-twin sessions, agents and datasets for modular production plants")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pure simulation without agents.
    Sim {
        #[command(subcommand)]
        command: SimCommand,
    },
    /// Run a script in lockstep with the configured agents.
    Run {
        /// Session config path, or `demo`.
        config: String,
        /// Script path or bundled script name.
        script: String,
        /// Write events.log and events.jsonl here.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Ask the summarizer for a report at the end.
        #[arg(long)]
        summary: bool,
    },
    /// Serve the HTTP API for a session.
    Serve {
        /// Session config path, or `demo`.
        #[arg(default_value = "demo")]
        config: String,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Directory for datasets recorded through the API.
        #[arg(long)]
        datasets: Option<PathBuf>,
    },
    /// Record manually operated scripts into a dataset (agents disabled).
    Record {
        /// Session config path, or `demo`; supplies the agents the cases are built for.
        config: String,
        /// Script paths or bundled script names; one suite each.
        #[arg(required = true)]
        scripts: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        /// Task description for scripts whose header has none.
        #[arg(long)]
        task: Option<String>,
    },
    /// Score a backend against a dataset and print the correctness table.
    Eval {
        /// Dataset path, or `sample`.
        dataset: String,
        /// `oracle` (the dataset's own answers) or a backend id from --config.
        #[arg(long)]
        backend: String,
        #[arg(long)]
        config: Option<String>,
        /// JSONL plausibility annotations to merge.
        #[arg(long)]
        annotations: Option<PathBuf>,
        /// Write the full JSON report here.
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long)]
        exclude_backend_failures: bool,
    },
    /// Export a dataset as SFT records or as a test file.
    Export {
        format: ExportFormat,
        /// Dataset path, or `sample`.
        dataset: String,
        path: PathBuf,
    },
    /// Check a config, layout, rules, script or dataset file.
    Validate { path: String },
    /// Print a bundled asset.
    Show { asset: Asset, name: Option<String> },
}

#[derive(Subcommand)]
enum SimCommand {
    /// Replay a script and print its view of the event log.
    Replay {
        /// Script path or bundled script name.
        script: String,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ExportFormat {
    Sft,
    Tests,
}

#[derive(Clone, Copy, ValueEnum)]
enum Asset {
    Layout,
    Rules,
    Config,
    Sample,
    Script,
}

fn load_config(arg: &str) -> Result<SessionConfig> {
    if arg == "demo" {
        return Ok(SessionConfig::demo());
    }
    SessionConfig::load(Path::new(arg)).with_context(|| format!("loading session config {arg}"))
}

fn load_script(arg: &str) -> Result<Script> {
    if let Some(script) = bundled_script(arg) {
        return Ok(script);
    }
    Script::load(Path::new(arg)).with_context(|| format!("loading script {arg}"))
}

fn load_dataset(arg: &str) -> Result<Dataset> {
    if arg == "sample" {
        return Ok(sample_dataset());
    }
    Dataset::import_tests(Path::new(arg)).with_context(|| format!("loading dataset {arg}"))
}

fn script_name(arg: &str) -> String {
    Path::new(arg)
        .file_stem()
        .map_or_else(|| arg.to_string(), |s| s.to_string_lossy().into_owned())
}

fn print_lines(lines: &[String]) -> Result<()> {
    let mut out = std::io::stdout().lock();
    for line in lines {
        writeln!(out, "{line}")?;
    }
    Ok(())
}

fn validate(path: &str) -> Result<String> {
    if path == "demo" {
        SessionConfig::demo().validate()?;
        return Ok("session config (bundled demo)".into());
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {path}"))?;
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    let head: serde_json::Value =
        serde_json::from_str(first).or_else(|_| serde_json::from_str(&text)).context("not a JSON or JSONL file")?;
    if head.get("schema_version").is_some() {
        let ds = Dataset::parse_str(&text)?;
        ds.validate()?;
        let m = ds.manifest();
        return Ok(format!(
            "dataset with {} cases ({} routine, {} unexpected) in {} suites",
            m.totals,
            m.routine,
            m.unexpected,
            m.suites.len()
        ));
    }
    if head.get("until").is_some() {
        let script = Script::parse_str(&text)?;
        replay(&script).context("script does not run")?;
        return Ok(format!("script with {} entries until t={}", script.entries.len(), script.header.until));
    }
    let modules = head.get("modules").and_then(|m| m.as_array());
    if let Some(modules) = modules {
        let is_rules = modules.iter().any(|m| m.get("rules").is_some());
        if is_rules {
            let rules = load_rules(&text)?;
            return Ok(format!("observer rules for {} modules", rules.modules.len()));
        }
        let layout = LayoutConfig::parse(&text)?;
        layout.validate()?;
        return Ok(format!("layout with {} modules", layout.modules.len()));
    }
    let config = SessionConfig::load(Path::new(path))?;
    config.validate()?;
    Ok(format!("session config with {} agents", config.agents.len()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Sim {
            command: SimCommand::Replay { script, out_dir },
        } => {
            let script = load_script(&script)?;
            let lines = replay(&script)?;
            if let Some(dir) = out_dir {
                let mut session = Session::plain(script.header.epoch.unwrap_or_default());
                session.schedule(script.entries.clone())?;
                session.run_until(script.header.until)?;
                session.persist(&dir).with_context(|| format!("writing {}", dir.display()))?;
            }
            print_lines(&lines)
        }
        Command::Run {
            config,
            script,
            out_dir,
            summary,
        } => {
            let config = load_config(&config)?;
            let script = load_script(&script)?;
            let mut session = Session::new(&config)?;
            session.schedule(script.entries)?;
            session.run_until(script.header.until)?;
            if summary {
                session.summary()?;
            }
            if let Some(dir) = out_dir {
                session.persist(&dir).with_context(|| format!("writing {}", dir.display()))?;
            }
            let log = session.log();
            print_lines(&log.render_all(log.events()))
        }
        Command::Serve { config, addr, datasets } => {
            let config = load_config(&config)?;
            let mut runtime = Runtime::new(Session::new(&config)?);
            if let Some(dir) = datasets {
                std::fs::create_dir_all(&dir)?;
                runtime.dataset_dir = Some(dir);
            }
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(runtime, addr))?;
            Ok(())
        }
        Command::Record {
            config,
            scripts,
            out,
            task,
        } => {
            let config = load_config(&config)?;
            let mut suites = Vec::new();
            let mut last = None;
            for arg in &scripts {
                let script = load_script(arg)?;
                let description = script
                    .header
                    .task
                    .clone()
                    .or_else(|| task.clone())
                    .ok_or_else(|| anyhow!("{arg}: no task description; pass --task"))?;
                let name = script_name(arg);
                let (session, suite, warnings) = record_script(&config, &script, &name, &description)?;
                for w in warnings {
                    eprintln!("warning: {name}: {w}");
                }
                eprintln!("{name}: {} cases", suite.cases.len());
                suites.push(suite);
                last = Some(session);
            }
            let session = last.expect("at least one script");
            let dataset = session.dataset(suites);
            dataset.export_tests(&out)?;
            let m = dataset.manifest();
            println!(
                "wrote {} cases ({} routine, {} unexpected) to {}",
                m.totals,
                m.routine,
                m.unexpected,
                out.display()
            );
            Ok(())
        }
        Command::Eval {
            dataset,
            backend,
            config,
            annotations,
            json,
            exclude_backend_failures,
        } => {
            let dataset = load_dataset(&dataset)?;
            let options = EvalOptions {
                exclude_backend_failures,
            };
            let configured = match &config {
                Some(cfg) => Session::new(&load_config(cfg)?)?.backend(&backend),
                None => None,
            };
            let chosen: Arc<dyn LlmBackend> = match configured {
                Some(b) => b,
                None if backend == "oracle" => Arc::new(dataset.oracle("oracle")),
                None if config.is_some() => bail!("config has no backend {backend:?}"),
                None => bail!("backend {backend:?} needs --config"),
            };
            let mut report = evaluate(&dataset, chosen.as_ref(), options);
            report.backend = backend;
            if let Some(path) = annotations {
                let file = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
                report = annotate_plausibility(&report, &read_annotations(BufReader::new(file))?)?;
            }
            if let Some(path) = json {
                std::fs::write(&path, serde_json::to_string_pretty(&report)?)?;
            }
            print!("{}", report.table());
            Ok(())
        }
        Command::Export { format, dataset, path } => {
            let dataset = load_dataset(&dataset)?;
            match format {
                ExportFormat::Sft => {
                    let n = dataset.export_sft(&path)?;
                    println!("wrote {n} SFT records to {}", path.display());
                }
                ExportFormat::Tests => {
                    dataset.export_tests(&path)?;
                    println!("wrote {} cases to {}", dataset.case_count(), path.display());
                }
            }
            Ok(())
        }
        Command::Validate { path } => {
            let what = validate(&path)?;
            println!("ok: {what}");
            Ok(())
        }
        Command::Show { asset, name } => {
            let text = match asset {
                Asset::Layout => LayoutConfig::bundled_text().to_string(),
                Asset::Rules => RuleSet::bundled_text().to_string(),
                Asset::Config => SessionConfig::demo_text().to_string(),
                Asset::Sample => sample_dataset().to_jsonl(),
                Asset::Script => {
                    let name = name.ok_or_else(|| anyhow!("choose one of: {}", BUNDLED_SCRIPTS.join(", ")))?;
                    bundled_script(&name)
                        .ok_or_else(|| anyhow!("no bundled script {name:?}; choose one of: {}", BUNDLED_SCRIPTS.join(", ")))?
                        .to_jsonl()
                }
            };
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
