//! `personaq`: adaptive persona-based survey querying from the command line.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Parser, Debug)]
#[command(
    name = "personaq",
    version,
    about = "Adaptive survey querying with a persona mixture prior"
)]
struct Cli {
    /// Worker threads for parallel stages (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log progress (-v) or debug detail (-vv) to stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// JSON config file; flags override its values.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Print the effective config as JSON and exit.
    #[arg(long)]
    pub print_config: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Query a chat-completion endpoint for every persona × question pair.
    Elicit(commands::ElicitArgs),
    /// Generate a Dirichlet dictionary and users drawn from it.
    GenSynthetic(commands::GenArgs),
    /// Fit the persona prior by EM on training users.
    FitPrior(commands::FitPriorArgs),
    /// Calibrate an IRT item bank for the CAT baselines.
    FitCat(commands::FitCatArgs),
    /// Compress the dictionary into prototype personas.
    Cluster(commands::ClusterArgs),
    /// Rewrite a tensor by temperature scaling or from elicited modes.
    Transform(commands::TransformArgs),
    /// Choose a fixed question list before seeing any answers.
    Design(commands::DesignArgs),
    /// Evaluate policies over budgets on held-out users.
    Run(commands::RunArgs),
    /// Answer greedily chosen questions yourself.
    Interactive(commands::InteractiveArgs),
    /// Render a results JSON file as text tables or CSV.
    Report(commands::ReportArgs),
    /// Convert a raw wide survey CSV into a response table.
    Import(commands::ImportArgs),
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformOp {
    Temperature,
    DetNoise,
}

fn dispatch(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Elicit(a) => commands::elicit(a),
        Command::GenSynthetic(a) => commands::gen_synthetic(a),
        Command::FitPrior(a) => commands::fit_prior(a),
        Command::FitCat(a) => commands::fit_cat(a),
        Command::Cluster(a) => commands::cluster(a),
        Command::Transform(a) => commands::transform(a),
        Command::Design(a) => commands::design(a),
        Command::Run(a) => commands::run(a),
        Command::Interactive(a) => commands::interactive(a),
        Command::Report(a) => commands::report(a),
        Command::Import(a) => commands::import(a),
    }
}

/// The error and its causes on one line, skipping causes whose text an
/// outer message already includes.
fn one_line(e: &anyhow::Error) -> String {
    let mut line = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if line.contains(&text) {
            continue;
        }
        if !line.is_empty() {
            line.push_str(": ");
        }
        line.push_str(&text);
    }
    line.replace('\n', " ")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: thread pool: {e}");
            return ExitCode::FAILURE;
        }
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", one_line(&e));
            ExitCode::FAILURE
        }
    }
}
