mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use commands::CliError;

#[derive(Parser, Debug)]
#[command(name = "drrpvt", version, about = "Bike repositioning with carrier vehicles and crowdsourced trailers")]
pub struct Cli {
    /// Seed for every random choice made by the command.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Upper bound on parallel work in sweeps and replications.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Directory that receives every artifact.
    #[arg(long, global = true, default_value = "out")]
    pub output_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build an instance from station and trip CSV exports.
    Ingest(IngestArgs),
    /// Generate a synthetic instance.
    Synth(SynthArgs),
    /// Group stations around main stations.
    Cluster(ClusterArgs),
    /// Solve one instance with the exact MILP or the dual decomposition.
    Solve(SolveArgs),
    /// Simulate a horizon under one or all policies.
    Simulate(SimulateArgs),
    /// Run a named experiment sweep.
    Experiment(ExperimentArgs),
    /// Compare simulation reports of the three policies.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    #[arg(long)]
    pub stations: PathBuf,
    #[arg(long)]
    pub trips: PathBuf,
    /// JSON object mapping canonical column names to the file's headers.
    #[arg(long)]
    pub mapping: Option<PathBuf>,
    /// JSON fleet and price parameters; defaults apply to missing keys.
    #[arg(long)]
    pub fleet: Option<PathBuf>,
    #[arg(long, default_value_t = 30)]
    pub epoch_minutes: u32,
    #[arg(long, default_value_t = 7)]
    pub start_hour: u32,
    #[arg(long, default_value_t = 10)]
    pub end_hour: u32,
    #[arg(long, default_value = "instance")]
    pub name: String,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// JSON generator configuration; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub stations: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub intensity: Option<f64>,
    #[arg(long)]
    pub vehicles: Option<usize>,
    #[arg(long)]
    pub trailers: Option<usize>,
    #[arg(long, default_value = "instance")]
    pub name: String,
}

#[derive(Args, Debug)]
pub struct ClusterArgs {
    #[arg(long)]
    pub instance: PathBuf,
    /// Main-station count; one per five stations by default.
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SolverKind {
    Milp,
    Ldd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Joint,
    Vehicles,
    Trailers,
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long, value_enum, default_value_t = SolverKind::Milp)]
    pub solver: SolverKind,
    #[arg(long, value_enum, default_value_t = ModeArg::Joint)]
    pub mode: ModeArg,
    /// Route vehicles over main stations and plan trailers per cluster (LDD only).
    #[arg(long)]
    pub clustering: bool,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub gamma0: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// Wall-clock limit in seconds.
    #[arg(long, default_value_t = 300.0)]
    pub time_limit: f64,
    #[arg(long)]
    pub node_limit: Option<usize>,
    /// Also write the MILP (JSON) that the exact solver sees.
    #[arg(long)]
    pub dump_milp: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    Drrpvt,
    Drrpv,
    Drrpt,
    Noop,
    /// The three repositioning policies plus their comparison.
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PlannerArg {
    Exact,
    Clustered,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long, value_enum, default_value_t = PolicyArg::Drrpvt)]
    pub policy: PolicyArg,
    #[arg(long, value_enum, default_value_t = PlannerArg::Clustered)]
    pub planner: PlannerArg,
    #[arg(long)]
    pub lookahead: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Node limit per planning solve.
    #[arg(long)]
    pub node_limit: Option<usize>,
    /// Independent runs with seeds `seed, seed + 1, ...`.
    #[arg(long, default_value_t = 1)]
    pub replications: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ExperimentName {
    MainStations,
    RuntimeSweep,
    RatioSweep,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AxisArg {
    MainStations,
    Vehicles,
    Trailers,
}

#[derive(Args, Debug)]
pub struct ExperimentArgs {
    #[arg(value_enum)]
    pub name: ExperimentName,
    /// JSON generator configuration used as the template.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Station count for main-stations and ratio-sweep.
    #[arg(long, default_value_t = 30)]
    pub stations: usize,
    #[arg(long, default_value_t = 2)]
    pub horizon: usize,
    #[arg(long)]
    pub k: Option<usize>,
    /// Comma-separated station counts for runtime-sweep.
    #[arg(long, value_delimiter = ',', default_value = "5,10,15,20,25,30")]
    pub sizes: Vec<usize>,
    #[arg(long, value_enum, default_value_t = AxisArg::MainStations)]
    pub axis: AxisArg,
    /// Comma-separated stations-per-unit ratios for ratio-sweep.
    #[arg(long, value_delimiter = ',', default_value = "3,5,10")]
    pub ratios: Vec<f64>,
    /// Per-solve wall-clock limit in seconds.
    #[arg(long, default_value_t = 300.0)]
    pub time_limit: f64,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Report of the joint policy.
    #[arg(long)]
    pub joint: PathBuf,
    /// Report of the vehicles-only policy.
    #[arg(long)]
    pub vehicles: PathBuf,
    /// Report of the trailers-only policy.
    #[arg(long)]
    pub trailers: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            return fail(&CliError::Usage(e.to_string().trim().to_string()));
        }
    };
    match commands::run(&cli) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}

fn fail(e: &CliError) -> ExitCode {
    eprintln!("{}", json!({ "error": { "kind": e.kind(), "message": e.to_string() } }));
    ExitCode::from(if matches!(e, CliError::Usage(_)) { 2 } else { 1 })
}
