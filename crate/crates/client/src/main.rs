use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use serde_json::Value;

use digico_client::{default_url, Client, ClientError, URL_ENV};
use digico_core::api::{ExperimentRequest, JobState, PlanSource};
use digico_core::config::parse_override_value;
use digico_core::experiment::{RunStatus, BUILTIN_PLANS};

const CONFIG_ERROR: u8 = 2;
const RUN_FAILURE: u8 = 1;

#[derive(Parser)]
#[command(name = "digico", version, about = "Run and summarize digico experiments through the digico service")]
struct Cli {
    /// Base URL of the service.
    #[arg(long, env = URL_ENV, default_value_t = default_url(), global = true)]
    url: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute every run of a plan; finished runs are skipped on rerun.
    Run {
        /// Built-in plan name or path to a TOML plan file.
        #[arg(long)]
        plan: String,
        /// Use seeds 0..n instead of the plan's seeds.
        #[arg(long)]
        seeds: Option<u64>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Output root; the service default applies when absent.
        #[arg(long, env = "DIGICO_OUT")]
        out: Option<PathBuf>,
        /// Extra `key=value` applied to every run.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Status poll interval in milliseconds.
        #[arg(long, default_value_t = 500)]
        poll_ms: u64,
    },
    /// Aggregate every run under a directory into one summary document.
    Summarize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Show the built-in plans.
    ListPlans,
    /// Check a set of overrides and print the resulting configuration.
    Validate {
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

fn parse_overrides(raw: &[String]) -> Result<BTreeMap<String, Value>, String> {
    raw.iter()
        .map(|kv| {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| format!("override `{kv}` is not of the form key=value"))?;
            Ok((k.trim().to_string(), parse_override_value(v.trim())))
        })
        .collect()
}

/// The service resolves paths against its own working directory; send
/// absolute ones so both sides agree.
fn absolute(p: &Path) -> String {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf()).display().to_string()
}

fn plan_source(plan: &str) -> Result<PlanSource, String> {
    if BUILTIN_PLANS.contains(&plan) {
        return Ok(PlanSource::Builtin(plan.to_string()));
    }
    let path = Path::new(plan);
    if path.is_file() {
        return std::fs::read_to_string(path)
            .map(PlanSource::Toml)
            .map_err(|e| format!("cannot read plan file {}: {e}", path.display()));
    }
    Err(format!(
        "`{plan}` is neither a built-in plan ({}) nor a plan file",
        BUILTIN_PLANS.join(", ")
    ))
}

fn fail(e: ClientError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(if e.is_config() { CONFIG_ERROR } else { RUN_FAILURE })
}

fn usage(msg: String) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(CONFIG_ERROR)
}

#[tokio::main]
async fn main() -> ExitCode {
    let cli = Cli::parse();
    let client = Client::new(cli.url);
    match cli.command {
        Command::ListPlans => match client.plans().await {
            Ok(plans) => {
                for p in plans {
                    println!("{:<20} {:>4} conditions x {:>2} seeds  {}", p.name, p.conditions, p.seeds, p.description);
                }
                ExitCode::SUCCESS
            }
            Err(e) => fail(e),
        },
        Command::Validate { overrides } => {
            let overrides = match parse_overrides(&overrides) {
                Ok(o) => o,
                Err(msg) => return usage(msg),
            };
            match client.validate(overrides).await {
                Ok(resp) => {
                    println!("{}", serde_json::to_string_pretty(&resp.config).expect("config serializes"));
                    println!("config hash {}", resp.config_hash);
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::Summarize { input, out } => match client.summarize(&absolute(&input), &absolute(&out)).await {
            Ok(doc) => {
                println!("{} conditions summarized into {}", doc.conditions.len(), out.display());
                ExitCode::SUCCESS
            }
            Err(e) => fail(e),
        },
        Command::Run {
            plan,
            seeds,
            workers,
            out,
            overrides,
            poll_ms,
        } => {
            let source = match plan_source(&plan) {
                Ok(s) => s,
                Err(msg) => return usage(msg),
            };
            let overrides = match parse_overrides(&overrides) {
                Ok(o) => o,
                Err(msg) => return usage(msg),
            };
            let req = ExperimentRequest {
                plan: source,
                seeds,
                workers,
                out: out.as_deref().map(absolute),
                overrides,
            };
            let accepted = match client.start_experiment(&req).await {
                Ok(a) => a,
                Err(e) => return fail(e),
            };
            println!("{}: {} runs -> {} (job {})", accepted.plan, accepted.total, accepted.out, accepted.id);
            let total = accepted.total;
            let status = client
                .wait_experiment(&accepted.id, Duration::from_millis(poll_ms), |n, rec| {
                    let tag = match rec.status {
                        RunStatus::Completed => "done",
                        RunStatus::Skipped => "skipped",
                        RunStatus::Failed => "FAILED",
                    };
                    match &rec.error {
                        Some(err) => println!("[{n}/{total}] {} {tag}: {err}", rec.dir.display()),
                        None => println!("[{n}/{total}] {} {tag}", rec.dir.display()),
                    }
                })
                .await;
            let status = match status {
                Ok(s) => s,
                Err(e) => return fail(e),
            };
            match (status.state, status.report) {
                (JobState::Finished, Some(report)) => {
                    println!(
                        "{}: {} completed, {} skipped, {} failed",
                        report.plan, report.completed, report.skipped, report.failed
                    );
                    ExitCode::from(report.exit_code() as u8)
                }
                (_, _) => {
                    eprintln!(
                        "error: experiment {} failed: {}",
                        status.id,
                        status.error.as_deref().unwrap_or("unknown error")
                    );
                    ExitCode::from(RUN_FAILURE)
                }
            }
        }
    }
}
