//! Command-line interface: dataset generation, store building, pipeline
//! runs, scoring, the channel identifiability experiment, and small
//! inspection utilities.

use crate::eval::{
    identifiability_experiment, score_detection, score_diagnosis, Channel, MacroScore, Metrics,
};
use crate::llm::{HttpClient, HttpConfig, LlmClient, MockClient, MockScript};
use crate::log_agent::TemplateMiner;
use crate::meta::{run_pipeline, write_report, FailureReport, PipelineConfig};
use crate::metric_agent::{describe_metrics, preprocess, PreprocessConfig};
use crate::rag::{raw_cluster_features, ExampleLabel, ExampleStore, LabeledExample};
use crate::roles::{bootstrap_roles, refresh_roles, ClusterConfig, RoleTable, SystemState};
use crate::simulator::{
    export_campaign, generate_campaign, load_dataset, oracle_script_from_truth, CampaignSpec,
    ClusterSpec, LoadedDataset,
};
use crate::telemetry::load_bundle;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "agentfm",
    version,
    about = "Role-aware failure management for distributed databases"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// Seed for anything stochastic (dataset generation, verdict flips).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for window-parallel work (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Log filter, e.g. `warn`, `info`, or `agentfm=debug`.
    #[arg(long, global = true, default_value = "warn")]
    log_level: String,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a fault-injection dataset.
    Simulate(SimulateArgs),
    /// Build the retrieval store from a labeled dataset.
    Store {
        #[command(subcommand)]
        command: StoreCommand,
    },
    /// Run the detection → diagnosis → mitigation pipeline over a dataset.
    Run(RunArgs),
    /// Score pipeline reports against a dataset's ground truth.
    Eval(EvalArgs),
    /// Leave-one-out fault identifiability through one telemetry channel.
    Identifiability(IdentifiabilityArgs),
    /// Mine log templates from a telemetry bundle.
    ParseLogs(InputArgs),
    /// Describe a bundle's metrics in plain language.
    DescribeMetrics(InputArgs),
    /// Bootstrap and print the role table for a cluster config.
    Roles(RolesArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// Fault windows per fault type.
    #[arg(long, default_value_t = 20)]
    per_fault: usize,
    /// Fault-free windows.
    #[arg(long, default_value_t = 100)]
    normal: usize,
}

#[derive(Subcommand)]
enum StoreCommand {
    /// Digest every window of a dataset and store labeled feature vectors.
    Build(StoreBuildArgs),
}

#[derive(Args)]
struct StoreBuildArgs {
    /// Dataset directory (from `simulate`).
    #[arg(long)]
    data: PathBuf,
    /// Output store file (JSONL).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Dataset directory (from `simulate`).
    #[arg(long)]
    data: PathBuf,
    /// Directory for per-window reports.
    #[arg(long)]
    reports: PathBuf,
    /// Retrieval store built by `store build`.
    #[arg(long)]
    store: Option<PathBuf>,
    /// Replay a scripted mock provider from this JSON file.
    #[arg(long, conflicts_with_all = ["oracle", "http"])]
    mock_script: Option<PathBuf>,
    /// Use a scripted oracle built from the dataset's own ground truth.
    #[arg(long, conflicts_with = "http")]
    oracle: bool,
    /// With --oracle: flip each detection verdict with this probability.
    #[arg(long, requires = "oracle", default_value_t = 0.0)]
    flip_rate: f64,
    /// Use the HTTP chat-completions provider configured via
    /// AGENTFM_LLM_ENDPOINT / AGENTFM_LLM_MODEL / AGENTFM_LLM_KEY.
    #[arg(long)]
    http: bool,
    /// Mark a node as down from a window start onward (`node@start`);
    /// repeatable. Leadership is reassigned and later reports carry the new
    /// role-table epoch.
    #[arg(long = "down", value_name = "NODE@START")]
    down: Vec<String>,
}

#[derive(Args)]
struct EvalArgs {
    /// Dataset directory holding truth.json.
    #[arg(long)]
    data: PathBuf,
    /// Reports directory written by `run`.
    #[arg(long)]
    reports: PathBuf,
    /// Output metrics file (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct IdentifiabilityArgs {
    /// Dataset directory (from `simulate`).
    #[arg(long)]
    data: PathBuf,
    /// Telemetry channel to classify through.
    #[arg(long, value_enum)]
    channel: ChannelArg,
    /// Optional JSON output file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ChannelArg {
    Metrics,
    Logs,
}

impl From<ChannelArg> for Channel {
    fn from(arg: ChannelArg) -> Channel {
        match arg {
            ChannelArg::Metrics => Channel::Metrics,
            ChannelArg::Logs => Channel::Logs,
        }
    }
}

#[derive(Args)]
struct InputArgs {
    /// Telemetry bundle file (JSONL).
    #[arg(long)]
    input: PathBuf,
}

#[derive(Args)]
struct RolesArgs {
    /// Cluster config file (JSON).
    #[arg(long)]
    cluster: PathBuf,
    /// Node ids to mark as down before printing; repeatable.
    #[arg(long = "down")]
    down: Vec<String>,
}

/// Entry point for the `agentfm` binary; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // clap renders help/version through the same error path; keep
            // its exit-code convention (0 for those, 2 for usage errors).
            let code = err.exit_code();
            let _ = err.print();
            return code;
        }
    };
    env_logger::Builder::new()
        .parse_filters(&cli.global.log_level)
        .try_init()
        .ok();
    if cli.global.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.global.jobs)
            .build_global()
            .ok();
    }
    match dispatch(cli) {
        Ok(()) => 0,
        Err(message) => {
            eprintln!("error: {message}");
            1
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Simulate(args) => cmd_simulate(&cli.global, &args),
        Command::Store {
            command: StoreCommand::Build(args),
        } => cmd_store_build(&args),
        Command::Run(args) => cmd_run(&cli.global, &args),
        Command::Eval(args) => cmd_eval(&args),
        Command::Identifiability(args) => cmd_identifiability(&args),
        Command::ParseLogs(args) => cmd_parse_logs(&args),
        Command::DescribeMetrics(args) => cmd_describe_metrics(&args),
        Command::Roles(args) => cmd_roles(&args),
    }
}

fn cmd_simulate(global: &GlobalArgs, args: &SimulateArgs) -> Result<(), String> {
    let spec = ClusterSpec::default();
    let campaign = generate_campaign(
        &spec,
        &CampaignSpec {
            per_fault: args.per_fault,
            normal: args.normal,
            seed: global.seed,
        },
    )
    .map_err(|e| e.to_string())?;
    export_campaign(&campaign, &args.out).map_err(|e| e.to_string())?;
    println!(
        "wrote {} windows ({} fault, {} normal) to {}",
        campaign.windows.len(),
        campaign.truth.fault_windows().len(),
        campaign.windows.len() - campaign.truth.fault_windows().len(),
        args.out.display()
    );
    Ok(())
}

/// Digests one window without a model: deterministic summaries only.
fn digest_window(
    bundles: &[crate::telemetry::TelemetryBundle],
    table: &RoleTable,
) -> Result<crate::meta::ClusterDigest, String> {
    let digests = crate::meta::collect(bundles, table, None, &Default::default())
        .map_err(|e| e.to_string())?;
    let spans: Vec<crate::telemetry::TraceSpan> = bundles
        .iter()
        .flat_map(|b| b.spans.iter().cloned())
        .collect();
    crate::meta::integrate_with_traces(digests, &spans).map_err(|e| e.to_string())
}

fn cmd_store_build(args: &StoreBuildArgs) -> Result<(), String> {
    let dataset = load_dataset(&args.data).map_err(|e| e.to_string())?;
    let table = bootstrap_roles(&dataset.config).map_err(|e| e.to_string())?;
    let mut store = ExampleStore::new();
    for (window, bundles) in &dataset.windows {
        let start = window.start() as u64;
        let digest = digest_window(bundles, &table)?;
        let label = match dataset.truth.windows.get(&start) {
            Some(Some(entry)) => ExampleLabel::Fault(entry.label),
            Some(None) => ExampleLabel::Normal,
            None => return Err(format!("window {start} is missing from truth.json")),
        };
        store
            .add_example(LabeledExample {
                id: format!("w{start}"),
                digest_text: digest.text.clone(),
                features: raw_cluster_features(&digest),
                label,
            })
            .map_err(|e| e.to_string())?;
    }
    store.save_jsonl(&args.out).map_err(|e| e.to_string())?;
    println!("stored {} examples in {}", store.len(), args.out.display());
    Ok(())
}

/// Parses one `node@start` liveness override.
fn parse_down(spec: &str) -> Result<(String, u64), String> {
    let (node, start) = spec
        .split_once('@')
        .ok_or_else(|| format!("--down {spec:?}: expected node@start"))?;
    let start: u64 = start
        .parse()
        .map_err(|_| format!("--down {spec:?}: start must be whole seconds"))?;
    Ok((node.to_string(), start))
}

/// Builds the per-window role tables, applying `--down` overrides in window
/// order. Refreshing is idempotent, so the epoch advances exactly when the
/// table actually changes.
fn role_tables_for(
    dataset: &LoadedDataset,
    down: &[(String, u64)],
) -> Result<Vec<RoleTable>, String> {
    let mut table = bootstrap_roles(&dataset.config).map_err(|e| e.to_string())?;
    for (node, _) in down {
        if !table.roles.contains_key(node.as_str()) {
            return Err(format!("--down names unknown node {node:?}"));
        }
    }
    let mut tables = Vec::with_capacity(dataset.windows.len());
    for (window, _) in &dataset.windows {
        let start = window.start() as u64;
        let mut state = SystemState::from_table(&table);
        for (node, from) in down {
            if *from <= start {
                state = state.with_down(node);
            }
        }
        table = refresh_roles(&table, &state).map_err(|e| e.to_string())?;
        tables.push(table.clone());
    }
    Ok(tables)
}

fn cmd_run(global: &GlobalArgs, args: &RunArgs) -> Result<(), String> {
    let dataset = load_dataset(&args.data).map_err(|e| e.to_string())?;
    let client: Box<dyn LlmClient> = if let Some(path) = &args.mock_script {
        Box::new(MockClient::new(
            MockScript::from_json_file(path).map_err(|e| e.to_string())?,
        ))
    } else if args.oracle {
        let (script, flipped) =
            oracle_script_from_truth(&dataset.truth, args.flip_rate, global.seed);
        log::info!("oracle script flips {} verdicts", flipped.len());
        Box::new(MockClient::new(script))
    } else if args.http {
        let config = HttpConfig::from_env().map_err(|e| e.to_string())?;
        Box::new(HttpClient::new(config).map_err(|e| e.to_string())?)
    } else {
        return Err("choose a provider: --mock-script <file>, --oracle, or --http".into());
    };
    let store = args
        .store
        .as_ref()
        .map(|path| ExampleStore::load_jsonl(path).map_err(|e| e.to_string()))
        .transpose()?;

    let down = args
        .down
        .iter()
        .map(|spec| parse_down(spec))
        .collect::<Result<Vec<_>, _>>()?;
    let tables = role_tables_for(&dataset, &down)?;

    let config = PipelineConfig::default();
    let mut lines: Vec<(u64, String)> = dataset
        .windows
        .par_iter()
        .zip(&tables)
        .map(|((window, bundles), table)| {
            let start = window.start() as u64;
            let report = run_pipeline(bundles, table, store.as_ref(), client.as_ref(), &config)
                .map_err(|e| format!("window {start}: {e}"))?;
            write_report(&args.reports, &report).map_err(|e| format!("window {start}: {e}"))?;
            let line = format!(
                "window {start}: anomalous={} diagnosis={} mitigation={} epoch={}{}",
                report.verdict.anomalous,
                report
                    .diagnosis
                    .as_ref()
                    .map_or("-".to_string(), |d| d.label.to_string()),
                report.mitigation.as_ref().map_or(0, |m| m.actions.len()),
                report.role_table_epoch,
                report
                    .error
                    .as_ref()
                    .map_or(String::new(), |e| format!(" [{} failed]", e.stage)),
            );
            Ok::<(u64, String), String>((start, line))
        })
        .collect::<Result<_, _>>()?;
    lines.sort();
    for (_, line) in &lines {
        println!("{line}");
    }
    println!("wrote {} reports to {}", lines.len(), args.reports.display());
    Ok(())
}

/// What `eval` writes: window count plus detection and (when the truth has
/// fault windows) diagnosis scores.
#[derive(Serialize)]
struct EvalOutput {
    windows: usize,
    detection: Metrics,
    diagnosis: Option<MacroScore>,
}

/// Loads every `<start>.json` report from a directory.
fn load_reports(dir: &Path) -> Result<BTreeMap<u64, FailureReport>, String> {
    let mut reports = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| format!("{}: {e}", dir.display()))? {
        let path = entry.map_err(|e| e.to_string())?.path();
        if path.extension().is_none_or(|ext| ext != "json") {
            continue;
        }
        let text = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
        let report: FailureReport = serde_json::from_str(&text)
            .map_err(|e| format!("{}: {e}", path.display()))?;
        reports.insert(report.window.start() as u64, report);
    }
    if reports.is_empty() {
        return Err(format!("no reports found in {}", dir.display()));
    }
    Ok(reports)
}

fn cmd_eval(args: &EvalArgs) -> Result<(), String> {
    let truth = crate::simulator::GroundTruth::load_json_file(&args.data.join("truth.json"))
        .map_err(|e| e.to_string())?;
    let reports = load_reports(&args.reports)?;
    let verdicts: BTreeMap<u64, bool> = reports
        .iter()
        .map(|(start, r)| (*start, r.verdict.anomalous))
        .collect();
    let detection = score_detection(&truth, &verdicts).map_err(|e| e.to_string())?;
    let diagnosis = if truth.fault_windows().is_empty() {
        None
    } else {
        let diagnoses: BTreeMap<u64, crate::tasks::DiagnosisLabel> = reports
            .iter()
            .filter_map(|(start, r)| r.diagnosis.as_ref().map(|d| (*start, d.label)))
            .collect();
        Some(score_diagnosis(&truth, &diagnoses).map_err(|e| e.to_string())?)
    };
    println!(
        "detection: precision {:.4} recall {:.4} f1 {:.4}",
        detection.precision, detection.recall, detection.f1
    );
    if let Some(diagnosis) = &diagnosis {
        println!(
            "diagnosis (macro over {} classes): precision {:.4} recall {:.4} f1 {:.4}",
            diagnosis.per_class.len(),
            diagnosis.precision,
            diagnosis.recall,
            diagnosis.f1
        );
    }
    let output = EvalOutput {
        windows: reports.len(),
        detection,
        diagnosis,
    };
    let mut body = serde_json::to_string_pretty(&output).map_err(|e| e.to_string())?;
    body.push('\n');
    std::fs::write(&args.out, body).map_err(|e| e.to_string())?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_identifiability(args: &IdentifiabilityArgs) -> Result<(), String> {
    let dataset = load_dataset(&args.data).map_err(|e| e.to_string())?;
    let channel: Channel = args.channel.into();
    let report = identifiability_experiment(&dataset.windows, &dataset.truth, channel)
        .map_err(|e| e.to_string())?;
    println!("channel: {channel}");
    for row in &report.rows {
        println!(
            "{:<24} precision {:.3} recall {:.3} f1 {:.3} {}",
            row.label.to_string(),
            row.metrics.precision,
            row.metrics.recall,
            row.metrics.f1,
            if row.identifiable {
                "identifiable"
            } else {
                "not identifiable"
            }
        );
    }
    if let Some(out) = &args.out {
        let mut body = serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?;
        body.push('\n');
        std::fs::write(out, body).map_err(|e| e.to_string())?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn cmd_parse_logs(args: &InputArgs) -> Result<(), String> {
    let bundle = load_bundle(&args.input).map_err(|e| e.to_string())?;
    let mut miner = TemplateMiner::new();
    for entry in &bundle.logs.entries {
        miner.parse_log(entry);
    }
    let mut templates: Vec<_> = miner.templates().values().cloned().collect();
    templates.sort_by(|a, b| {
        b.match_count
            .cmp(&a.match_count)
            .then_with(|| a.pattern.cmp(&b.pattern))
    });
    println!(
        "{} entries, {} templates",
        bundle.logs.entries.len(),
        templates.len()
    );
    for template in templates {
        println!("{:>6}x {}", template.match_count, template.pattern);
    }
    Ok(())
}

fn cmd_describe_metrics(args: &InputArgs) -> Result<(), String> {
    let bundle = load_bundle(&args.input).map_err(|e| e.to_string())?;
    let dense =
        preprocess(&bundle.metrics, &PreprocessConfig::default()).map_err(|e| e.to_string())?;
    let description = describe_metrics(&dense, bundle.window, None);
    println!("{}", description.text);
    Ok(())
}

fn cmd_roles(args: &RolesArgs) -> Result<(), String> {
    let config = ClusterConfig::from_json_file(&args.cluster).map_err(|e| e.to_string())?;
    let mut table = bootstrap_roles(&config).map_err(|e| e.to_string())?;
    if !args.down.is_empty() {
        let mut state = SystemState::from_table(&table);
        for node in &args.down {
            if !table.roles.contains_key(node.as_str()) {
                return Err(format!("--down names unknown node {node:?}"));
            }
            state = state.with_down(node);
        }
        table = refresh_roles(&table, &state).map_err(|e| e.to_string())?;
    }
    println!("epoch {}", table.epoch);
    for role in table.roles.values() {
        println!(
            "{:<6} {:<12} {:<9} leaders={} importance={:.2} {}",
            role.node_id,
            role.kind.to_string(),
            role.leadership.to_string(),
            role.leader_partition_count,
            role.importance,
            match role.liveness {
                crate::roles::Liveness::Up => "up",
                crate::roles::Liveness::Down => "down",
            }
        );
    }
    Ok(())
}
