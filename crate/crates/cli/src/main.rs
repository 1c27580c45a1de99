use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{Arc, RwLock};

use anyhow::{bail, Context, Result};
use chrono::Utc;
use clap::{Args, Parser, Subcommand, ValueEnum};

use itrash_core::analytics::{
    accuracy, export_sankey, flow_matrix, follow_rate, follow_rate_by_color, peak_ratio, summarize, temporal_stats,
    AccuracyMode, Pairing,
};
use itrash_core::classifier::{
    Classifier, ConfusionTable, RemoteClassifier, RemoteConfig, ScriptedClassifier, SimulatedClassifier,
};
use itrash_core::controller::ControllerConfig;
use itrash_core::domain::{BinColor, OutcomeKind};
use itrash_core::ledger::{Ledger, Tokens, DEFAULT_SYSTEM_FUNDING};
use itrash_core::replay::{generate_trace, replay, EventTrace, ScenarioSpec};
use itrash_core::runtime::Kiosk;
use itrash_core::store::{EventStore, QueryFilter};
use itrash_gateway::{router, serve, spawn_controller, ClockMode, GatewayOptions};

#[derive(Parser)]
#[command(name = "itrash", version, about = "Sorting-assist trashcan: records, analytics, replay and gateway")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Inspect and edit a JSONL record store.
    #[command(subcommand)]
    Store(StoreCmd),
    /// Metrics over a record store.
    Analyze(AnalyzeArgs),
    /// Generate and replay deterministic traces.
    #[command(subcommand)]
    Replay(ReplayCmd),
    /// Run the HTTP gateway with a live controller.
    Serve(ServeArgs),
    /// Classify one image file.
    Classify(ClassifyArgs),
}

#[derive(Subcommand)]
enum StoreCmd {
    /// Append records from a JSONL file.
    Import {
        #[arg(long)]
        store: PathBuf,
        file: PathBuf,
    },
    /// Write all records to a JSONL file.
    Export {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Set the ground-truth bin of a record.
    Annotate {
        #[arg(long)]
        store: PathBuf,
        record_id: String,
        real: BinColor,
    },
    /// Print matching records as JSON lines.
    List {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        disposed: bool,
        #[arg(long)]
        outcome: Vec<OutcomeKind>,
    },
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    store: PathBuf,
    /// Print JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    what: AnalyzeCmd,
}

#[derive(Subcommand)]
enum AnalyzeCmd {
    Accuracy {
        #[arg(long, default_value = "prediction")]
        mode: AccuracyMode,
    },
    /// A: thrown vs real, B: predicted vs real, C: correct predictions vs thrown.
    Flows {
        #[arg(long)]
        pairing: Pairing,
    },
    /// Share of correct predictions thrown where the LED said.
    Follow,
    /// Disposals per time-of-day slot across days.
    Temporal {
        #[arg(long, default_value = "1h", value_parser = humantime::parse_duration)]
        slot: std::time::Duration,
        #[arg(long, default_value_t = 5)]
        days: u32,
    },
    /// Write a flow matrix as a Sankey node/link JSON file.
    Sankey {
        #[arg(long)]
        pairing: Pairing,
        #[arg(long)]
        out: PathBuf,
    },
    /// Outcome counts, including reward claims.
    Summary,
}

#[derive(Subcommand)]
enum ReplayCmd {
    /// Generate a trace and replay it into a store file.
    Run {
        /// canonical_itrash, canonical_control or a scenario JSON file.
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the generated trace here.
        #[arg(long)]
        trace_out: Option<PathBuf>,
    },
    /// Only generate the trace.
    Trace {
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay an existing trace file.
    File {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ClassifierKind {
    /// Answer written into simulated item images.
    Scripted,
    /// Confusion-table draws from the ground truth in item images.
    Simulated,
    /// OpenAI-compatible vision endpoint.
    Remote,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClockArg {
    Realtime,
    Manual,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Expose the stimulus endpoint.
    #[arg(long)]
    simulation: bool,
    #[arg(long, value_enum, default_value = "realtime")]
    clock: ClockArg,
    #[arg(long, value_enum, default_value = "scripted")]
    classifier: ClassifierKind,
    #[arg(long)]
    remote_config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Record store file; in memory when omitted.
    #[arg(long)]
    store: Option<PathBuf>,
    /// Initial balance of the system wallet.
    #[arg(long, default_value_t = DEFAULT_SYSTEM_FUNDING)]
    funding: Tokens,
}

#[derive(Args)]
struct ClassifyArgs {
    image: PathBuf,
    #[arg(long, value_enum, default_value = "remote")]
    classifier: ClassifierKind,
    #[arg(long)]
    remote_config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn open_store(path: &Path) -> Result<EventStore> {
    if !path.exists() {
        bail!("store {} does not exist", path.display());
    }
    EventStore::open(path).with_context(|| format!("opening {}", path.display()))
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run_store(cmd: StoreCmd) -> Result<()> {
    match cmd {
        StoreCmd::Import { store, file } => {
            let mut s = EventStore::open(&store)?;
            let n = s.import(&file)?;
            println!("imported {n} records into {}", store.display());
        }
        StoreCmd::Export { store, out } => {
            let n = open_store(&store)?.export(&out)?;
            println!("exported {n} records to {}", out.display());
        }
        StoreCmd::Annotate { store, record_id, real } => {
            let r = open_store(&store)?.annotate_real_at(&record_id, real, Utc::now())?;
            println!("{}", r.to_json_line());
        }
        StoreCmd::List { store, disposed, outcome } => {
            let filter = QueryFilter {
                disposed_only: disposed,
                outcomes: outcome,
                ..QueryFilter::default()
            };
            for r in open_store(&store)?.query(&filter) {
                println!("{}", r.to_json_line());
            }
        }
    }
    Ok(())
}

fn run_analyze(args: AnalyzeArgs) -> Result<()> {
    let store = open_store(&args.store)?;
    let records = store.records();
    match args.what {
        AnalyzeCmd::Accuracy { mode } => {
            let r = accuracy(records, mode)?;
            if args.json {
                print_json(&serde_json::json!({ "mode": mode, "correct": r.numerator, "total": r.denominator, "accuracy": r.value() }))?;
            } else {
                println!("{} accuracy: {r}", if mode == AccuracyMode::Prediction { "prediction" } else { "disposal" });
            }
        }
        AnalyzeCmd::Flows { pairing } => {
            let m = flow_matrix(records, pairing)?;
            if args.json {
                print_json(&m)?;
            } else {
                println!("{m}");
            }
        }
        AnalyzeCmd::Follow => {
            let f = follow_rate(records)?;
            let by = follow_rate_by_color(records)?;
            if args.json {
                print_json(&serde_json::json!({ "overall": f, "by_color": {
                    "blue": by[0], "yellow": by[1], "brown": by[2] } }))?;
            } else {
                println!("followed: {f}");
                for c in BinColor::ALL {
                    match by[c.index()] {
                        Some(r) => println!("  {c:<6} {r}"),
                        None => println!("  {c:<6} no correct predictions"),
                    }
                }
            }
        }
        AnalyzeCmd::Temporal { slot, days } => {
            let slot = chrono::Duration::from_std(slot)?;
            let stats = temporal_stats(records, slot, days)?;
            if args.json {
                print_json(&stats)?;
            } else {
                println!("{:<12}{:>8}{:>8}{:>8}{:>8}{:>8}", "slot", "mean", "median", "q1", "q3", "max");
                for s in stats.iter().filter(|s| s.total.mean > 0.0) {
                    let t = &s.total;
                    println!(
                        "{:<12}{:>8.2}{:>8.2}{:>8.2}{:>8.2}{:>8.2}",
                        s.label(),
                        t.mean,
                        t.median,
                        t.q1,
                        t.q3,
                        t.counts.iter().copied().fold(0.0, f64::max)
                    );
                }
                if let Some(r) = peak_ratio(&stats, (11 * 60, 14 * 60), (8 * 60, 20 * 60)) {
                    println!("11:00-14:00 mean / rest of 08:00-20:00 mean: {r:.2}");
                }
            }
        }
        AnalyzeCmd::Sankey { pairing, out } => {
            let d = export_sankey(&flow_matrix(records, pairing)?, &out)?;
            println!("wrote {} nodes and {} links to {}", d.nodes.len(), d.links.len(), out.display());
        }
        AnalyzeCmd::Summary => {
            let s = summarize(records);
            if args.json {
                print_json(&s)?;
            } else {
                println!("presented {}, disposed {}, not disposed {}", s.presented, s.disposed, s.undisposed);
                for (k, n) in &s.by_outcome {
                    println!("  {k:<18} {n}");
                }
                println!("user reward claims {}", s.user_claims);
                for (ngo, n) in &s.donations_by_ngo {
                    println!("donations to ngo {ngo}: {n}");
                }
            }
        }
    }
    Ok(())
}

fn write_store(records: &EventStore, out: &Path) -> Result<()> {
    let n = records.export(out)?;
    println!("replayed {n} records into {}", out.display());
    Ok(())
}

fn run_replay(cmd: ReplayCmd) -> Result<()> {
    match cmd {
        ReplayCmd::Run {
            scenario,
            seed,
            out,
            trace_out,
        } => {
            let trace = generate_trace(&ScenarioSpec::resolve(&scenario)?, seed)?;
            if let Some(p) = trace_out {
                fs::write(&p, trace.to_jsonl())?;
            }
            let result = replay(&trace)?;
            write_store(&result.store.read().expect("store lock"), &out)?;
        }
        ReplayCmd::Trace { scenario, seed, out } => {
            let trace = generate_trace(&ScenarioSpec::resolve(&scenario)?, seed)?;
            fs::write(&out, trace.to_jsonl())?;
            println!("wrote {} sessions ({} stimuli) to {}", trace.meta.sessions, trace.stimuli.len(), out.display());
        }
        ReplayCmd::File { trace, out } => {
            let trace = EventTrace::from_jsonl(&fs::read_to_string(&trace)?)?;
            let result = replay(&trace)?;
            write_store(&result.store.read().expect("store lock"), &out)?;
        }
    }
    Ok(())
}

fn build_classifier(kind: ClassifierKind, remote_config: Option<&Path>, seed: u64) -> Result<Box<dyn Classifier + Send>> {
    Ok(match kind {
        ClassifierKind::Scripted => Box::new(ScriptedClassifier),
        ClassifierKind::Simulated => Box::new(SimulatedClassifier::new(ConfusionTable::reported_itrash(), seed)?),
        ClassifierKind::Remote => {
            let config = match remote_config {
                Some(p) => RemoteConfig::load(p)?,
                None => RemoteConfig::default(),
            };
            Box::new(RemoteClassifier::http(config)?)
        }
    })
}

fn run_serve(args: ServeArgs) -> Result<()> {
    let classifier = build_classifier(args.classifier, args.remote_config.as_deref(), args.seed)?;
    let store = match &args.store {
        Some(p) => EventStore::open(p)?,
        None => EventStore::in_memory(),
    };
    let ledger = Arc::new(RwLock::new(Ledger::bootstrap(args.funding)));
    let kiosk = Kiosk::new(ControllerConfig::default(), classifier, ledger, store.shared(), Utc::now())?;
    let clock = match args.clock {
        ClockArg::Realtime => ClockMode::Realtime,
        ClockArg::Manual => ClockMode::Manual,
    };
    let (handle, _join) = spawn_controller(kiosk, clock);
    let app = router(
        handle,
        &GatewayOptions {
            simulation: args.simulation,
            ..GatewayOptions::default()
        },
    );
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(serve(args.addr, app))?;
    Ok(())
}

fn run_classify(args: ClassifyArgs) -> Result<()> {
    let image = fs::read(&args.image).with_context(|| format!("reading {}", args.image.display()))?;
    let mut c = build_classifier(args.classifier, args.remote_config.as_deref(), args.seed)?;
    match c.classify(&image)?.color() {
        Some(color) => println!("{color}"),
        None => println!("invalid"),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let result = match Cli::parse().command {
        Command::Store(c) => run_store(c),
        Command::Analyze(a) => run_analyze(a),
        Command::Replay(c) => run_replay(c),
        Command::Serve(a) => run_serve(a),
        Command::Classify(a) => run_classify(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
