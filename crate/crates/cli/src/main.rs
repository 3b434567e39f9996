use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use loader_core::experiment::{run_experiment, Experiment, ExperimentError};
use loader_core::metrics::{
    read_summary_csv, summarize, write_summary_csv, MetricsLog, SUMMARY_HEADER,
};
use loader_core::scenario::{parse_duration, parse_scenario};
use loader_core::sim::SimOutput;

const STEADY_FRACTION: f64 = 0.5;

#[derive(Parser)]
#[command(
    name = "loader",
    version,
    about = "Replicated-state dataplane applications: compile, embed, simulate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a scenario, compile its application and print the embedding plan.
    Validate(Common),
    /// Simulate a scenario once and write its CSV files.
    Run(Common),
    /// Simulate a scenario for several replica counts.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated replica counts.
        #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
        counts: Vec<usize>,
    },
    /// Print a summary.csv produced by `run` or `sweep`.
    Summarize {
        /// Output directory or summary.csv file.
        path: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    scenario: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Simulated duration, e.g. 30s.
    #[arg(long, value_parser = parse_t_end)]
    t_end: Option<loader_core::Nanos>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Also write the event trace.
    #[arg(long)]
    trace: bool,
    /// Replica count overriding the scenario.
    #[arg(long)]
    replicas: Option<usize>,
}

fn parse_t_end(v: &str) -> Result<loader_core::Nanos, String> {
    parse_duration(v).ok_or_else(|| format!("expected a duration like 30s, got `{v}`"))
}

enum Failure {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

fn classify(e: ExperimentError) -> Failure {
    match e {
        ExperimentError::Sim(_) => Failure::Runtime(e.into()),
        _ => Failure::Validation(e.into()),
    }
}

fn load(common: &Common) -> Result<Experiment, Failure> {
    let text = fs::read_to_string(&common.scenario)
        .with_context(|| format!("reading {}", common.scenario.display()))
        .map_err(Failure::Validation)?;
    let mut exp = parse_scenario(&text)
        .with_context(|| common.scenario.display().to_string())
        .map_err(Failure::Validation)?;
    if let Some(seed) = common.seed {
        exp.sim.seed = seed;
    }
    if let Some(t) = common.t_end {
        exp.sim.t_end = t;
        for f in &mut exp.flows {
            f.stop = f.stop.min(t);
        }
    }
    if let Some(c) = common.replicas {
        let switches = exp.topo.switches().len();
        if c == 0 || c > switches {
            return Err(Failure::Validation(anyhow::anyhow!(
                "--replicas must lie in 1..={switches}, got {c}"
            )));
        }
        exp.replica_count = c;
    }
    exp.sim.trace = common.trace;
    Ok(exp)
}

fn out_dir(common: &Common, exp: &Experiment) -> PathBuf {
    common
        .out_dir
        .clone()
        .unwrap_or_else(|| Path::new("out").join(&exp.name))
}

fn write_output(dir: &Path, out: &SimOutput) -> Result<()> {
    out.log
        .write_csv(dir, STEADY_FRACTION)
        .with_context(|| format!("writing {}", dir.display()))?;
    if !out.trace.is_empty() {
        let mut text = out.trace.join("\n");
        text.push('\n');
        fs::write(dir.join("trace.txt"), text)?;
    }
    Ok(())
}

fn print_summary(logs: &[MetricsLog]) {
    for s in summarize(logs, STEADY_FRACTION) {
        println!(
            "C={} replicas={} data_util={:.4} replication_fraction={:.4} data_ratio_vs_single={} detections={} throughput_bps={:.0}",
            s.replica_count,
            s.replicas,
            s.mean_data_util,
            s.replication_fraction,
            s.data_ratio_vs_single.map_or_else(|| "-".to_string(), |r| format!("{r:.3}")),
            s.detections,
            s.aggregate_throughput_bps,
        );
    }
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Validate(common) => {
            let exp = load(&common)?;
            let setup = exp.prepare(exp.replica_count).map_err(classify)?;
            let log = MetricsLog::new(
                loader_core::sim::run_info(&setup, &exp.sim),
                Vec::new(),
                Vec::new(),
            );
            print!("{}", log.plan_text());
            println!("ok");
        }
        Command::Run(common) => {
            let exp = load(&common)?;
            let out = exp.run(exp.replica_count).map_err(classify)?;
            let dir = out_dir(&common, &exp);
            write_output(&dir, &out)?;
            let logs = [out.log];
            write_summary_csv(&dir.join("summary.csv"), &summarize(&logs, STEADY_FRACTION))?;
            print_summary(&logs);
        }
        Command::Sweep { common, counts } => {
            let exp = load(&common)?;
            let switches = exp.topo.switches().len();
            if let Some(&c) = counts.iter().find(|&&c| c == 0 || c > switches) {
                return Err(Failure::Validation(anyhow::anyhow!(
                    "replica counts must lie in 1..={switches}, got {c}"
                )));
            }
            let dir = out_dir(&common, &exp);
            let mut logs = Vec::new();
            for (c, res) in counts.iter().zip(run_experiment(&exp, &counts)) {
                let out = res.map_err(classify)?;
                write_output(&dir.join(format!("c{c}")), &out)?;
                logs.push(out.log);
            }
            fs::create_dir_all(&dir)?;
            write_summary_csv(&dir.join("summary.csv"), &summarize(&logs, STEADY_FRACTION))?;
            print_summary(&logs);
        }
        Command::Summarize { path } => {
            let file = if path.is_dir() {
                path.join("summary.csv")
            } else {
                path
            };
            let rows = read_summary_csv(&file)
                .with_context(|| format!("reading {}", file.display()))
                .map_err(Failure::Validation)?;
            for row in rows {
                let fields: Vec<String> = SUMMARY_HEADER
                    .iter()
                    .filter_map(|k| row.get(*k).map(|v| format!("{k}={v}")))
                    .collect();
                println!("{}", fields.join(" "));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
