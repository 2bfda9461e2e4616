use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Parser, ValueEnum};

use expertgraph::pipeline::{Pipeline, PipelineConfig, Stage, StageStatus};
use expertgraph::Error;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StageArg {
    Simulate,
    Ingest,
    Trace,
    Signals,
    Pretrain,
    Graphs,
    Train,
    Backtest,
    Report,
    /// Every stage in order.
    All,
}

/// Expert tracing, graph propagation and backtesting pipeline.
#[derive(Debug, Parser)]
#[command(name = "expertgraph", version)]
struct Cli {
    /// Stage to run.
    #[arg(value_enum)]
    stage: StageArg,
    /// TOML config file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Clips every date range to start no earlier than this day.
    #[arg(long)]
    start: Option<NaiveDate>,
    /// Clips every date range to end no later than this day.
    #[arg(long)]
    end: Option<NaiveDate>,
    /// Overrides the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        _ => 2,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut cfg = PipelineConfig::from_file(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cli.start.is_some() {
        cfg.dates.start = cli.start;
    }
    if cli.end.is_some() {
        cfg.dates.end = cli.end;
    }
    if let Some(out) = cli.out {
        cfg.out_dir = out;
    }
    let pipeline = Pipeline::new(cfg)?;
    let stages: Vec<Stage> = match cli.stage {
        StageArg::All => Stage::ALL
            .into_iter()
            .filter(|s| *s != Stage::Simulate || !pipeline.config.inputs.is_external())
            .collect(),
        other => {
            let name = format!("{other:?}").to_lowercase();
            vec![Stage::parse(&name).expect("stage names match")]
        }
    };
    for stage in stages {
        match pipeline.run(stage)? {
            StageStatus::Ran => println!("{stage}: done -> {}", pipeline.dir(stage).display()),
            StageStatus::UpToDate => println!("{stage}: up to date"),
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
