//! `rfsoc serve` runs the sequencer server; `rfsoc bench` drives experiments
//! and timing studies against it or against an in-process backend.

use std::fs::{self, File};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use rfsoc_sequencer::backend::{init_backend, BoardName, BoardProfile, OverheadModel, QubitModel};
use rfsoc_sequencer::bench::{
    analyze, build_plan, flux_map_peaks, ideal_time, plot, run_plan, scaling_report,
    write_dataset_csv, write_scaling_csv, Endpoint, ExperimentKind, ExperimentParams,
    LocalEndpoint, Runcard, ScalingRow,
};
use rfsoc_sequencer::client::Client;
use rfsoc_sequencer::server::{self, ServerConfig};

#[derive(Parser)]
#[command(
    name = "rfsoc",
    version,
    about = "RFSoC pulse-sequencer server and benchmarks"
)]
struct Cli {
    /// error, warn, info, debug or trace
    #[arg(long, global = true, default_value = "info")]
    log_level: log::LevelFilter,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve requests on a TCP port.
    Serve(ServeArgs),
    /// Run calibration routines and timing studies.
    #[command(subcommand)]
    Bench(BenchCommand),
}

#[derive(Args)]
struct OverheadArgs {
    /// Seconds charged per client connection.
    #[arg(long, default_value_t = 0.050)]
    connection_overhead: f64,
    /// Seconds charged per program load.
    #[arg(long, default_value_t = 0.200)]
    load_overhead: f64,
}

impl OverheadArgs {
    fn model(&self) -> OverheadModel {
        OverheadModel {
            connection_overhead: self.connection_overhead,
            program_load_overhead: self.load_overhead,
        }
    }
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:6000")]
    bind: String,
    /// ZCU111, RFSoc4x2 or ZCU216
    #[arg(long, default_value = "ZCU216")]
    board: BoardName,
    /// Qubit model JSON; the built-in model when omitted.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Backend seed; random when omitted.
    #[arg(long)]
    seed: Option<u64>,
    /// Seconds to wait for a request before dropping the connection.
    #[arg(long, default_value_t = 30.0)]
    read_timeout: f64,
    #[command(flatten)]
    overheads: OverheadArgs,
}

/// Where requests go: a server, or a local backend built from these options.
#[derive(Args)]
struct TargetArgs {
    /// HOST:PORT of a running server; runs in-process when omitted.
    #[arg(long)]
    server: Option<String>,
    #[arg(long, default_value = "ZCU216")]
    board: BoardName,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Seed of the in-process backend.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Flux bias the routines run at.
    #[arg(long, default_value_t = 0.0)]
    bias: f64,
    /// Center of qubit-drive sweeps in Hz; the model's qubit frequency at
    /// the bias when omitted.
    #[arg(long)]
    drive_center: Option<f64>,
    #[command(flatten)]
    overheads: OverheadArgs,
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Run one routine and print its estimate.
    Run {
        #[arg(long)]
        kind: ExperimentKind,
        #[arg(long, default_value_t = 101)]
        points: usize,
        #[arg(long, default_value_t = 4096)]
        shots: u64,
        /// Relaxation time in seconds; the routine's default when omitted.
        #[arg(long)]
        relax: Option<f64>,
        /// Write the timing row as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the acquired data as CSV.
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        target: TargetArgs,
    },
    /// Time routines over a range of sweep sizes.
    Scaling {
        /// Comma-separated routines.
        #[arg(long, value_delimiter = ',', required = true)]
        kind: Vec<ExperimentKind>,
        /// Comma-separated point counts.
        #[arg(long, value_delimiter = ',', default_value = "1,10,100,1000,10000")]
        points: Vec<usize>,
        #[arg(long, default_value_t = 1024)]
        shots: u64,
        #[arg(long)]
        relax: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write an SVG plot of the rows.
        #[arg(long)]
        plot: Option<PathBuf>,
        #[command(flatten)]
        target: TargetArgs,
    },
    /// Print the ideal time of a shot loop.
    Ideal {
        #[arg(long)]
        shots: u64,
        /// Relaxation time in seconds.
        #[arg(long)]
        relax: f64,
        /// File of per-point sequence durations in seconds, separated by
        /// whitespace or commas; `#` starts a comment.
        #[arg(long)]
        durations: PathBuf,
    },
}

type BoxError = Box<dyn std::error::Error>;

enum Target {
    Remote(Client),
    Local(Box<LocalEndpoint>),
}

impl Endpoint for Target {
    fn execute(
        &mut self,
        request: &rfsoc_sequencer::components::ExperimentRequest,
    ) -> Result<rfsoc_sequencer::components::AcquisitionResult, rfsoc_sequencer::client::ClientError>
    {
        match self {
            Target::Remote(client) => Endpoint::execute(client, request),
            Target::Local(local) => local.execute(request),
        }
    }
}

fn prepare(args: &TargetArgs) -> Result<(Target, Runcard), BoxError> {
    let model = match &args.model {
        Some(path) => QubitModel::load(path)?,
        None => QubitModel::default(),
    };
    let card = Runcard::from_model(&model, args.bias);
    let target = match &args.server {
        Some(addr) => Target::Remote(Client::new(addr.clone())),
        None => Target::Local(Box::new(LocalEndpoint::new(init_backend(
            model,
            BoardProfile::for_board(args.board),
            args.seed,
            args.overheads.model(),
        )))),
    };
    Ok((target, card))
}

fn parse_durations(text: &str) -> Result<Vec<f64>, BoxError> {
    text.lines()
        .map(|line| line.split('#').next().unwrap_or(""))
        .flat_map(|line| line.split(|c: char| c == ',' || c.is_whitespace()))
        .filter(|token| !token.is_empty())
        .map(|token| {
            token
                .parse::<f64>()
                .map_err(|e| format!("bad duration '{token}': {e}").into())
        })
        .collect()
}

fn print_rows(rows: &[ScalingRow]) {
    println!(
        "{:<22} {:>7} {:>14} {:>14} {:>10}",
        "kind", "points", "wall_s", "ideal_s", "ratio"
    );
    for row in rows {
        println!(
            "{:<22} {:>7} {:>14.6} {:>14.6} {:>10.4}",
            row.kind.name(),
            row.points,
            row.wall_s,
            row.ideal_s,
            row.ratio
        );
    }
}

fn bench(command: BenchCommand) -> Result<(), BoxError> {
    match command {
        BenchCommand::Run {
            kind,
            points,
            shots,
            relax,
            out,
            data,
            target,
        } => {
            let (mut endpoint, card) = prepare(&target)?;
            let params = ExperimentParams {
                points,
                shots,
                relaxation: relax,
                drive_center: target.drive_center,
            };
            let plan = build_plan(kind, &card, &params)?;
            let dataset = run_plan(&plan, &mut endpoint)?;
            let row = ScalingRow::from_accounting(
                kind,
                points,
                &dataset.accounting,
                &target.overheads.model(),
            );
            print_rows(std::slice::from_ref(&row));
            match analyze(&dataset) {
                Ok(Some(estimate)) => println!("{} = {:.6e}", estimate.name, estimate.value),
                Ok(None) if kind == ExperimentKind::FluxMap => {
                    for (bias, frequency) in flux_map_peaks(&dataset) {
                        println!("bias {bias:.6} peak {frequency:.6e}");
                    }
                }
                Ok(None) => {}
                Err(e) => log::warn!("{e}"),
            }
            if let Some(path) = out {
                write_scaling_csv(&[row], File::create(path)?)?;
            }
            if let Some(path) = data {
                write_dataset_csv(&dataset, File::create(path)?)?;
            }
        }
        BenchCommand::Scaling {
            kind,
            points,
            shots,
            relax,
            out,
            plot: plot_path,
            target,
        } => {
            let (mut endpoint, card) = prepare(&target)?;
            let params = ExperimentParams {
                points: 1,
                shots,
                relaxation: relax,
                drive_center: target.drive_center,
            };
            let overheads = target.overheads.model();
            let mut rows = Vec::new();
            for k in kind {
                rows.extend(scaling_report(
                    k,
                    &points,
                    &mut endpoint,
                    &card,
                    &params,
                    &overheads,
                )?);
            }
            print_rows(&rows);
            if let Some(path) = out {
                write_scaling_csv(&rows, File::create(path)?)?;
            }
            if let Some(path) = plot_path {
                fs::write(path, plot::scaling_svg(&rows))?;
            }
        }
        BenchCommand::Ideal {
            shots,
            relax,
            durations,
        } => {
            let durations = parse_durations(&fs::read_to_string(durations)?)?;
            println!("{}", ideal_time(shots, &durations, relax));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(cli.log_level)
        .parse_default_env()
        .init();
    let result = match cli.command {
        Command::Serve(args) => {
            let config = ServerConfig {
                bind: args.bind,
                board: args.board,
                model: args.model,
                seed: args.seed,
                overheads: args.overheads.model(),
                read_timeout: Duration::from_secs_f64(args.read_timeout),
                ..ServerConfig::default()
            };
            server::serve(config).map_err(BoxError::from)
        }
        Command::Bench(command) => bench(command),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
