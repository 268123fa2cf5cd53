//! `markdown` command-line tool and HTTP service.

pub mod service;
pub mod whatif;

use std::ffi::OsString;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use markdown_core::config::EngineConfig;
use markdown_core::demand::{generate_catalogue, BaselineModel, DemandModel, PredictionTable};
use markdown_core::domain::DepthSet;
use markdown_core::experiment::{run_online_test, TestReport, FULL_OPTIMIZATION, MANUAL, SUPPLY_SIDE};
use markdown_core::io;
use markdown_core::ithax::solve;
use markdown_core::optimizer::reprice;
use markdown_core::validation::{audit_monotonicity, build_feasible_region, FeasibleRegion};
use serde::Serialize;
use serde_json::{json, Value};

use crate::whatif::CatalogueSummary;

pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "markdown", version, about = "Markdown event selection, pricing and evaluation")]
pub struct Cli {
    /// Run configuration (.json or .toml).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Writes a synthetic catalogue and sales history from the `world` section.
    Generate {
        #[arg(long)]
        catalogue: PathBuf,
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Validates a catalogue, prints its summary and optionally converts it.
    Ingest {
        #[arg(long)]
        catalogue: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Selects and prices an event with the supply-side solver.
    Solve {
        #[arg(long)]
        catalogue: PathBuf,
        /// Solution file: product_id, depth, discounted_price.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Solve report (JSON); printed to stdout when absent.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Fits the built-in demand model on a sales history.
    Fit {
        #[arg(long)]
        history: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Backtests the model over time-series folds and builds the feasible region.
    Validate {
        #[arg(long)]
        history: PathBuf,
        /// Region document (JSON).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Group by depth WAPE table; printed to stdout when absent.
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Solves, holds out a random share and reprices the rest.
    Optimize {
        #[arg(long)]
        catalogue: PathBuf,
        /// Fitted model (.json) or prediction table (.csv).
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        region: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Simulated three-arm tests.
    Experiment {
        #[command(subcommand)]
        command: ExperimentCommand,
    },
    /// Runs the HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        #[arg(long, default_value = "markdown-data")]
        data_dir: PathBuf,
        /// Catalogues to ingest at start-up.
        #[arg(long)]
        catalogue: Vec<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        region: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum ExperimentCommand {
    /// Runs the test over consecutive seeds on one synthetic world.
    Run {
        #[arg(long)]
        seeds: Option<u64>,
        /// Full report (JSON); a summary is printed to stdout either way.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-product realized profits of the first seed.
        #[arg(long)]
        profits: Option<PathBuf>,
    },
}

/// Parses `args` and runs the command. Returns the process exit code:
/// 0 on success, 1 on a domain error, 2 on a usage error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn load_config(cli: &Cli) -> Result<EngineConfig> {
    let mut config = match &cli.config {
        Some(path) => EngineConfig::load(path).with_context(|| format!("config {}", path.display()))?,
        None => EngineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config)
}

/// JSON document stamped with the engine version and seed.
fn stamped<T: Serialize>(seed: u64, payload: &T) -> Value {
    let mut v = serde_json::to_value(payload).expect("payload serializes");
    if let Value::Object(map) = &mut v {
        map.insert("engine_version".into(), json!(ENGINE_VERSION));
        map.insert("seed".into(), json!(seed));
    }
    v
}

fn emit(value: &Value, path: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn create(path: &Path) -> Result<File> {
    File::create(path).with_context(|| format!("creating {}", path.display()))
}

fn load_catalogue(path: &Path) -> Result<markdown_core::domain::Catalogue> {
    io::read_catalogue(path).with_context(|| format!("catalogue {}", path.display()))
}

fn load_model(path: &Path) -> Result<Box<dyn DemandModel>> {
    let file = File::open(path).with_context(|| format!("model {}", path.display()))?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => {
            let m: BaselineModel = serde_json::from_reader(file).with_context(|| format!("model {}", path.display()))?;
            Ok(Box::new(m))
        }
        Some("csv") => Ok(Box::new(PredictionTable::from_csv(file).with_context(|| format!("predictions {}", path.display()))?)),
        _ => bail!("model must be a .json fitted model or a .csv prediction table"),
    }
}

fn load_region(path: &Path) -> Result<FeasibleRegion> {
    let file = File::open(path).with_context(|| format!("region {}", path.display()))?;
    Ok(serde_json::from_reader(file).with_context(|| format!("region {}", path.display()))?)
}

fn execute(cli: Cli) -> Result<()> {
    let config = load_config(&cli)?;
    let seed = config.seed;
    match &cli.command {
        Command::Generate { catalogue, history } => {
            let (cat, hist, _) = generate_catalogue(&config.world, seed)?;
            io::write_catalogue(&cat, catalogue)?;
            if let Some(h) = history {
                io::write_history_csv(&hist, create(h)?)?;
            }
            emit(&stamped(seed, &json!({ "summary": CatalogueSummary::of(&cat), "history_records": hist.records.len() })), None)
        }
        Command::Ingest { catalogue, out } => {
            let cat = load_catalogue(catalogue)?;
            if let Some(out) = out {
                io::write_catalogue(&cat, out)?;
            }
            emit(&stamped(seed, &json!({ "summary": CatalogueSummary::of(&cat) })), None)
        }
        Command::Solve { catalogue, out, report } => {
            let cat = load_catalogue(catalogue)?;
            let targets = config.ithax_targets()?;
            let levers = config.levers()?;
            let initial = config.initial_mapping(&cat)?;
            let solution = solve(&cat, &targets, &initial, &levers)?;
            if let Some(out) = out {
                io::write_solution_csv(&cat, &solution.assignment, create(out)?)?;
            }
            emit(&stamped(seed, &json!({ "report": solution.report })), report.as_deref())?;
            if !solution.report.converged {
                bail!(
                    "solver stopped after {} iterations without convergence (f1 = {:.4}, f2 = {:.4})",
                    solution.report.iterations,
                    solution.report.f1,
                    solution.report.f2
                );
            }
            Ok(())
        }
        Command::Fit { history, out } => {
            let hist = io::read_history(history).with_context(|| format!("history {}", history.display()))?;
            let model = config.fit(&hist)?;
            std::fs::write(out, serde_json::to_string_pretty(&model)?)?;
            emit(&stamped(seed, &json!({ "records": hist.records.len(), "groups": model.groups.len(), "warnings": model.warnings })), None)
        }
        Command::Validate { history, out, table } => {
            let hist = io::read_history(history).with_context(|| format!("history {}", history.display()))?;
            let grid = config.depth_set()?;
            let groups: Vec<String> = {
                let set: std::collections::BTreeSet<&str> = hist.records.iter().map(|r| &*r.group).collect();
                set.into_iter().map(String::from).collect()
            };
            let region = build_feasible_region(&hist, |h| config.fit(h), &grid, &groups, &config.region)?;
            if let Some(out) = out {
                std::fs::write(out, serde_json::to_string_pretty(&region)?)?;
            }
            match table {
                Some(t) => std::fs::write(t, region.to_table_csv())?,
                None => print!("{}", region.to_table_csv()),
            }
            Ok(())
        }
        Command::Optimize { catalogue, model, region, out, report } => {
            let cat = load_catalogue(catalogue)?;
            let model = load_model(model)?;
            let region = load_region(region)?;
            let targets = config.ithax_targets()?;
            let levers = config.levers()?;
            let initial = config.initial_mapping(&cat)?;
            let solution = solve(&cat, &targets, &initial, &levers)?;
            if !solution.report.converged {
                emit(&stamped(seed, &json!({ "report": solution.report })), report.as_deref())?;
                bail!("supply-side solve did not converge; nothing repriced");
            }
            let grid = config.depth_set()?;
            let mut event = reprice(&cat, &solution.assignment, model.as_ref(), &region, &grid, config.holdout_fraction, seed)?;
            event.solve_report = Some(solution.report);
            let audit = audit_monotonicity(model.as_ref(), &cat, &grid, Some(&region))?;
            if let Some(out) = out {
                io::write_event_csv(&event, create(out)?)?;
            }
            emit(
                &stamped(seed, &json!({ "summary": event.summary, "solve_report": event.solve_report, "audit": audit })),
                report.as_deref(),
            )
        }
        Command::Experiment { command: ExperimentCommand::Run { seeds, out, profits } } => {
            run_experiment(&config, seeds.unwrap_or(config.experiment.seeds), out.as_deref(), profits.as_deref())
        }
        Command::Serve { addr, data_dir, catalogue, model, region } => {
            let model: Option<Arc<dyn DemandModel>> = match model {
                Some(p) => Some(Arc::from(load_model(p)?)),
                None => None,
            };
            let region = region.as_deref().map(load_region).transpose()?;
            let state = service::AppState::new(config, data_dir, model, region)?;
            for path in catalogue {
                let id = state.add_catalogue(load_catalogue(path)?);
                log::info!("ingested {} as {id}", path.display());
            }
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(service::serve(Arc::new(state), addr))?;
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct ExperimentSummary {
    seeds: u64,
    /// Seeds where median profit ordered full >= supply-side >= manual.
    ordered: u64,
    full_beats_manual: u64,
    supply_beats_manual: u64,
    full_beats_supply: u64,
    reports: Vec<TestReport>,
}

fn run_experiment(config: &EngineConfig, seeds: u64, out: Option<&Path>, profits: Option<&Path>) -> Result<()> {
    if seeds == 0 {
        bail!("--seeds must be positive");
    }
    let (catalogue, history, world) = generate_catalogue(&config.world, config.seed)?;
    let model = config.fit(&history)?;
    let grid = DepthSet::new(config.experiment.depths.clone())?;
    let groups: Vec<String> = catalogue.groups().into_iter().map(String::from).collect();
    let region = build_feasible_region(&history, |h| config.fit(h), &grid, &groups, &config.region)?;
    let test = config.online_test(&catalogue);

    let mut summary = ExperimentSummary {
        seeds,
        ordered: 0,
        full_beats_manual: 0,
        supply_beats_manual: 0,
        full_beats_supply: 0,
        reports: Vec::new(),
    };
    for i in 0..seeds {
        let seed = config.seed.wrapping_add(i);
        let result = run_online_test(&world, &catalogue, &test, &model, &region, seed)?;
        if i == 0 {
            if let Some(p) = profits {
                io::write_profits_csv(&result.arms, create(p)?)?;
            }
        }
        let r = result.report;
        let median = |name: &str| r.arm(name).map(|a| a.median).unwrap_or(f64::NAN);
        let wins = |a: &str, b: &str| r.pair(a, b).is_some_and(|row| median(a) > median(b) && row.p < 0.05);
        summary.ordered += u64::from(median(FULL_OPTIMIZATION) >= median(SUPPLY_SIDE) && median(SUPPLY_SIDE) >= median(MANUAL));
        summary.full_beats_manual += u64::from(wins(FULL_OPTIMIZATION, MANUAL));
        summary.supply_beats_manual += u64::from(wins(SUPPLY_SIDE, MANUAL));
        summary.full_beats_supply += u64::from(wins(FULL_OPTIMIZATION, SUPPLY_SIDE));
        summary.reports.push(r);
    }
    let doc = stamped(config.seed, &summary);
    if let Some(out) = out {
        emit(&doc, Some(out))?;
    }
    let mut brief = doc;
    if let Value::Object(map) = &mut brief {
        map.remove("reports");
    }
    emit(&brief, None)
}
