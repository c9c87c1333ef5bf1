use std::fs::{self, File};
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use feedstation::codec;
use feedstation::rfid::{decode_frame, encode_frame, FdxbFrame, FrameFlags, TagId};
use feedstation::simharness::{
    generate_trace, one_night_scenario, read_station_trace, run_scenario, station_inputs, table_one,
    Scenario, ScenarioReport, ScenarioRun, SimLink, DRAIN_MS,
};
use feedstation::station::{runtime, RunSummary, SingleTaskStation, StationConfig, StationInput, StationLog};
use feedstation::uplinkqueue::{FileStorage, LogStorage, MemStorage};
use log::info;

#[derive(Debug, Parser)]
#[command(name = "feedstation", version, about = "Feeding station tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the station firmware logic.
    #[command(subcommand)]
    Station(StationCommand),
    /// Run a scenario file through station, link and server.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the report here instead of stdout.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Both)]
        format: Format,
    },
    /// Laboratory weighing batch: 40/50/100 g, still and moving.
    Lab {
        #[arg(long, default_value_t = 20_240_601)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        runs: usize,
    },
    /// Encode or decode FDX-B frames.
    #[command(subcommand)]
    Frame(FrameCommand),
    /// Decode radio payloads.
    #[command(subcommand)]
    Payload(PayloadCommand),
}

#[derive(Debug, Subcommand)]
enum StationCommand {
    /// Feed a recorded trace, or a generated night, through a station.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Trace file, or `live-sim` for a generated night.
        #[arg(long)]
        trace: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// One task on a virtual clock instead of one thread per sub-system.
        #[arg(long)]
        deterministic: bool,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum FrameCommand {
    /// Print the 32-hex-digit frame for a tag such as 756_000123456789.
    Encode {
        tag: String,
        /// Clear the animal application bit.
        #[arg(long)]
        not_animal: bool,
    },
    Decode { hex: String },
}

#[derive(Debug, Subcommand)]
enum PayloadCommand {
    Decode { hex: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Lines,
    Both,
}

fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format(|buf, rec| {
            writeln!(buf, "{} {} {} {}", buf.timestamp_millis(), rec.level(), rec.target(), rec.args())
        })
        .init();
}

fn main() -> ExitCode {
    init_logging();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

type AnyError = Box<dyn std::error::Error>;

fn run(cmd: Command) -> Result<(), AnyError> {
    match cmd {
        Command::Station(StationCommand::Run { config, trace, seed, deterministic, report }) => {
            let cfg = match config {
                Some(p) => StationConfig::load(&p)?,
                None => StationConfig::default(),
            };
            let text = station_run(cfg, &trace, seed, deterministic)?;
            emit(report.as_deref(), &text)
        }
        Command::Simulate { scenario, seed, report, format } => {
            let mut sc = Scenario::load(&scenario)?;
            if let Some(s) = seed {
                sc.seed = s;
            }
            let r = run_scenario(&sc)?;
            let text = match format {
                Format::Table => r.to_table(),
                Format::Lines => r.to_lines(),
                Format::Both => r.render(),
            };
            emit(report.as_deref(), &text)
        }
        Command::Lab { seed, runs } => {
            let t = table_one(seed, runs);
            print!("{}", t.to_table());
            Ok(())
        }
        Command::Frame(FrameCommand::Encode { tag, not_animal }) => {
            let tag: TagId = tag.parse()?;
            let flags = if not_animal { FrameFlags::default() } else { FrameFlags::ANIMAL };
            println!("{}", encode_frame(tag, flags));
            Ok(())
        }
        Command::Frame(FrameCommand::Decode { hex }) => {
            let d = decode_frame(&FdxbFrame::from_hex(&hex)?)?;
            println!("tag={} animal={} data_block={} reserved={} extension={:#08x}", d.tag, d.flags.animal, d.flags.data_block, d.reserved, d.extension);
            Ok(())
        }
        Command::Payload(PayloadCommand::Decode { hex }) => {
            let bytes = codec::from_hex(hex.trim())?;
            let msg = codec::decode(&bytes)?;
            println!("{msg}");
            Ok(())
        }
    }
}

fn emit(path: Option<&Path>, text: &str) -> Result<(), AnyError> {
    match path {
        Some(p) => fs::write(p, text)?,
        None => io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn summary_lines(s: &RunSummary) -> String {
    format!(
        "system_updates={}\nanimal_updates={}\ntrap_events={}\ndb_syncs={}\nvisits={}\ncaptures={}\ndrained={}\nqueue_left={}\nparked={}\nend_ms={}\n",
        s.system_updates, s.animal_updates, s.trap_events, s.db_syncs, s.visits, s.captures, s.drained, s.queue_left, s.parked, s.end_ms
    )
}

fn station_run(cfg: StationConfig, trace: &str, seed: u64, deterministic: bool) -> Result<String, AnyError> {
    let (name, inputs, truth) = if trace == "live-sim" {
        let mut sc = one_night_scenario(seed);
        sc.link = cfg.link.clone();
        sc.max_attempts = cfg.queue.max_attempts;
        let generated = generate_trace(&sc)?;
        let inputs = station_inputs(&sc, &generated);
        (sc.name.clone(), inputs, Some((sc, generated)))
    } else {
        let f = File::open(trace).map_err(|e| format!("{trace}: {e}"))?;
        let inputs = read_station_trace(BufReader::new(f), cfg.station_id())?;
        (trace.to_string(), inputs, None)
    };
    let duration_ms = match &truth {
        Some((sc, _)) => sc.duration_ms,
        None => inputs.last().map_or(0, |i| i.ts() + 1),
    };
    info!("{} inputs over {} s", inputs.len(), duration_ms / 1000);
    let link = SimLink::new(cfg.link.clone(), seed, cfg.epoch_s);

    if !deterministic {
        let summary = match cfg.queue_path.clone() {
            Some(p) => threaded(cfg, FileStorage::new(p), link, inputs, duration_ms)?,
            None => threaded(cfg, MemStorage::new(), link, inputs, duration_ms)?,
        };
        return Ok(summary_lines(&summary));
    }

    let period = cfg.system_update_period_s;
    let epoch = cfg.epoch_s;
    let (summary, log, world) = match cfg.queue_path {
        Some(_) => single(SingleTaskStation::with_files(cfg)?, link, inputs, duration_ms),
        None => single(SingleTaskStation::in_memory(cfg)?, link, inputs, duration_ms),
    };
    let server_visits: Vec<_> = world.server().visits().cloned().collect();
    let report = match truth {
        Some((sc, trace)) => {
            let run = ScenarioRun { trace, summary, log, server_visits, link: world.stats(), world };
            ScenarioReport::from_run(&sc, &run, epoch, period)
        }
        None => ScenarioReport::base(&name, seed, duration_ms, &summary, &log, &server_visits, world.stats(), period),
    };
    Ok(report.render())
}

fn single<S: LogStorage>(
    mut station: SingleTaskStation<S>,
    mut link: SimLink,
    inputs: Vec<StationInput>,
    duration_ms: i64,
) -> (RunSummary, StationLog, SimLink) {
    let summary = station.run(inputs, &mut link, duration_ms, DRAIN_MS);
    (summary, station.orchestrator().log().clone(), link)
}

fn threaded<S: LogStorage + Send + 'static>(
    cfg: StationConfig,
    storage: S,
    link: SimLink,
    inputs: Vec<StationInput>,
    duration_ms: i64,
) -> Result<RunSummary, AnyError> {
    let handle = runtime::spawn(cfg, storage, link)?;
    for input in inputs {
        handle.send(input)?;
    }
    handle.tick(duration_ms)?;
    Ok(handle.shutdown(DRAIN_MS)?)
}
