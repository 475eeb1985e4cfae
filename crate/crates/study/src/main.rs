//! `telesim` command line.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use telesim_core::ids::EncounterId;
use telesim_core::patient::load_scenario;
use telesim_core::planner::{ClinicalProtocol, Planner};
use telesim_core::scoring::{
    ingest_manual, parse_item_csv, parse_rating_csv, CaseRubric, EncounterRef,
};
use telesim_core::session::Arm;
use telesim_core::trace::{audit, EncounterTrace};
use telesim_study::analyze::{load_inputs, manual_sheet_path, StudyMeta};
use telesim_study::runner::{read_records, sheet_json, LiveQueue};
use telesim_study::service::{serve, ServiceState};
use telesim_study::{
    analyze, make_plan, run_study, Backends, RunContext, ScenarioStore, StudyConfig, StudyPlan,
};

#[derive(Parser)]
#[command(
    name = "telesim",
    version,
    about = "Simulated telehealth crossover studies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Study configuration (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma separated arm names; overrides the configured arms.
    #[arg(long, value_delimiter = ',')]
    arms: Option<Vec<Arm>>,
}

impl Common {
    fn load(&self) -> Result<StudyConfig, String> {
        let mut config = match &self.config {
            Some(path) => StudyConfig::load(path).map_err(|e| e.to_string())?,
            None => StudyConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(arms) = &self.arms {
            config.arms = arms.clone();
        }
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Checks a scenario script, and optionally its protocol and rubric.
    ValidateScenario {
        scenario: PathBuf,
        #[arg(long)]
        protocol: Option<PathBuf>,
        #[arg(long)]
        rubric: Option<PathBuf>,
    },
    /// Writes the randomized crossover plan as JSON.
    MakePlan {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Runs every encounter of the plan into a study directory.
    RunStudy {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Reuse an existing plan instead of drawing one.
        #[arg(long)]
        plan: Option<PathBuf>,
    },
    /// Turns manual score CSVs into manual sheets for a study directory.
    Score {
        #[command(flatten)]
        common: Common,
        /// Study directory.
        #[arg(long)]
        out: PathBuf,
        /// CSV with columns encounter_id,item_id,score.
        #[arg(long)]
        items: PathBuf,
        /// CSV with columns encounter_id,criterion,rating.
        #[arg(long)]
        ratings: Option<PathBuf>,
        #[arg(long)]
        rater: String,
    },
    /// Analyzes a finished study directory into a report bundle.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Study directory.
        #[arg(long)]
        out: PathBuf,
        /// Report directory; defaults to `<out>/report`.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value_t = 10_000)]
        bootstrap_n: usize,
        #[arg(long, default_value_t = 0.95)]
        ci_level: f64,
    },
    /// Prints the evidence audit of one or more traces.
    Audit { traces: Vec<PathBuf> },
    /// Hosts live sessions over HTTP and WebSocket.
    Serve {
        #[command(flatten)]
        common: Common,
        /// Study directory that receives manual sheets.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        addr: Option<SocketAddr>,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn read(path: &Path) -> Result<String, String> {
    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), String> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    }
    fs::write(path, bytes).map_err(|e| format!("{}: {e}", path.display()))
}

fn store_for(config: &StudyConfig) -> Result<ScenarioStore, String> {
    let mut store = ScenarioStore::demo();
    if let Some(dir) = &config.scenario_dir {
        store.add_dir(dir).map_err(|e| e.to_string())?;
    }
    Ok(store)
}

fn plan_for(config: &StudyConfig) -> Result<StudyPlan, String> {
    make_plan(
        config.seed,
        &config.scenarios,
        &config.actors,
        &config.replication,
        &config.arms,
    )
    .map_err(|e| e.to_string())
}

fn to_json<T: serde::Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("value serializes");
    out.push(b'\n');
    out
}

fn run(command: Command) -> Result<ExitCode, String> {
    match command {
        Command::ValidateScenario {
            scenario,
            protocol,
            rubric,
        } => {
            let mut problems = Vec::new();
            let script = match load_scenario(&read(&scenario)?) {
                Ok(s) => Some(s),
                Err(e) if e.violations().is_empty() => {
                    problems.push(e.to_string());
                    None
                }
                Err(e) => {
                    problems.extend(e.violations().iter().map(ToString::to_string));
                    None
                }
            };
            if let (Some(path), Some(script)) = (&protocol, &script) {
                match ClinicalProtocol::parse(&read(path)?) {
                    Ok(p) => {
                        if let Err(e) = Planner::new(script, p) {
                            problems.push(format!("protocol: {e}"));
                        }
                    }
                    Err(e) => problems.push(format!("protocol: {e}")),
                }
            }
            if let Some(path) = &rubric {
                match CaseRubric::parse(&read(path)?) {
                    Ok(r) => {
                        problems.extend(r.violations().into_iter().map(|v| format!("rubric: {v}")))
                    }
                    Err(e) => problems.push(format!("rubric: {e}")),
                }
            }
            if problems.is_empty() {
                println!("{}: ok", scenario.display());
                Ok(ExitCode::SUCCESS)
            } else {
                for p in &problems {
                    println!("{}: {p}", scenario.display());
                }
                Ok(ExitCode::FAILURE)
            }
        }
        Command::MakePlan { common, out } => {
            let config = common.load()?;
            let plan = plan_for(&config)?;
            let bytes = to_json(&plan);
            match out {
                Some(path) => write(&path, &bytes)?,
                None => print!("{}", String::from_utf8_lossy(&bytes)),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::RunStudy { common, out, plan } => {
            let config = common.load()?;
            let store = store_for(&config)?;
            let plan = match plan {
                Some(path) => serde_json::from_str(&read(&path)?)
                    .map_err(|e| format!("{}: {e}", path.display()))?,
                None => plan_for(&config)?,
            };
            write(&out.join("plan.json"), &to_json(&plan))?;
            write(&out.join("config.json"), &to_json(&config))?;
            let queue = Arc::new(LiveQueue::new());
            let backends =
                Backends::from_config(&config, Some(queue.clone())).map_err(|e| e.to_string())?;
            let live = config.arms.iter().any(|a| {
                matches!(
                    config.backend(*a),
                    telesim_study::config::BackendConfig::Live { .. }
                )
            });
            if live {
                // Live arms wait on sessions opened through the service.
                let state = ServiceState::new(
                    Arc::new(store_for(&config)?),
                    config.clone(),
                    backends.clone(),
                    Some(queue),
                    Some(out.clone()),
                );
                let addr: SocketAddr = config
                    .serve
                    .addr
                    .parse()
                    .map_err(|e| format!("serve.addr: {e}"))?;
                std::thread::spawn(move || {
                    let rt = tokio::runtime::Runtime::new().expect("tokio runtime");
                    if let Err(e) = rt.block_on(serve(state, addr)) {
                        tracing::error!("service stopped: {e}");
                    }
                });
            }
            let ctx = RunContext {
                store: &store,
                backends,
                config,
                out_dir: out.clone(),
            };
            let records = run_study(&plan, &ctx).map_err(|e| e.to_string())?;
            let failed = records.iter().filter(|r| !r.succeeded()).count();
            println!(
                "{} encounters, {failed} failed; records in {}",
                records.len(),
                out.join("records.json").display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Score {
            common,
            out,
            items,
            ratings,
            rater,
        } => {
            let config = common.load()?;
            let store = store_for(&config)?;
            let records = read_records(&out).map_err(|e| e.to_string())?;
            let item_rows = parse_item_csv(&read(&items)?).map_err(|e| e.to_string())?;
            let rating_rows = match &ratings {
                Some(p) => parse_rating_csv(&read(p)?).map_err(|e| e.to_string())?,
                None => Vec::new(),
            };
            let mut written = 0;
            for record in records.iter().filter(|r| r.succeeded()) {
                let id = EncounterId::new(record.encounter_id.as_str());
                if !item_rows.iter().any(|r| r.encounter_id == id) {
                    continue;
                }
                let entry = &record.entry;
                let case = store.case(&entry.scenario).map_err(|e| e.to_string())?;
                let encounter = EncounterRef {
                    encounter_id: Some(id),
                    scenario: entry.scenario.as_str().into(),
                    arm: entry.arm,
                    actor: entry.actor.as_str().into(),
                };
                let sheet =
                    ingest_manual(&encounter, &case.rubric, &item_rows, &rating_rows, &rater)
                        .map_err(|e| format!("{}: {e}", record.encounter_id))?;
                write(
                    &out.join(manual_sheet_path(&record.encounter_id)),
                    &sheet_json(&sheet),
                )?;
                written += 1;
            }
            println!("{written} manual sheets written");
            Ok(ExitCode::SUCCESS)
        }
        Command::Analyze {
            common,
            out,
            report,
            bootstrap_n,
            ci_level,
        } => {
            let mut config = common.load()?;
            config.analysis.bootstrap_n = bootstrap_n;
            config.analysis.ci_level = ci_level;
            config.analysis.validate()?;
            let store = store_for(&config)?;
            let plan: StudyPlan =
                serde_json::from_str(&read(&out.join("plan.json"))?).map_err(|e| e.to_string())?;
            let records = read_records(&out).map_err(|e| e.to_string())?;
            let inputs = load_inputs(&out, &records).map_err(|e| e.to_string())?;
            let meta = StudyMeta {
                seed: plan.seed,
                arms: plan.arms.clone(),
                replicated: plan
                    .replicated_scenarios()
                    .into_iter()
                    .map(str::to_owned)
                    .collect(),
                config_hash: config.hash(),
            };
            let bundle =
                analyze(&inputs, &store, &config.analysis, &meta).map_err(|e| e.to_string())?;
            let dir = report.unwrap_or_else(|| out.join("report"));
            let manifest = bundle.write(&dir).map_err(|e| e.to_string())?;
            println!(
                "{} files written to {}",
                manifest.files.len(),
                dir.display()
            );
            for note in &bundle.notes {
                println!("note: {note}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Audit { traces } => {
            let mut clean = true;
            for path in &traces {
                let bytes = fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
                let trace = EncounterTrace::from_bytes(&bytes)
                    .map_err(|e| format!("{}: {e}", path.display()))?;
                let report = audit(&trace);
                clean &= report.is_clean();
                println!("{}", path.display());
                print!("{}", report.to_table());
            }
            Ok(if clean {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::Serve { common, out, addr } => {
            let config = common.load()?;
            let addr = match addr {
                Some(a) => a,
                None => config
                    .serve
                    .addr
                    .parse()
                    .map_err(|e| format!("serve.addr: {e}"))?,
            };
            let backends = Backends::from_config(&config, None).map_err(|e| e.to_string())?;
            let state =
                ServiceState::new(Arc::new(store_for(&config)?), config, backends, None, out);
            let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
            rt.block_on(serve(state, addr)).map_err(|e| e.to_string())?;
            Ok(ExitCode::SUCCESS)
        }
    }
}
