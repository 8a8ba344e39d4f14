use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use contact_shape::config::RunConfig;
use contact_shape::harness::{run_bench, run_estimate, run_simulate};
use contact_shape::Error;

#[derive(Parser)]
#[command(name = "contact-shape", version, about = "Contact position and tool shape estimation from wrench measurements")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one run and write its measurement log and ground truth.
    Simulate(Common),
    /// Run an estimator over a measurement log.
    Estimate {
        #[command(flatten)]
        common: Common,
        /// Measurement CSV with header t,Fx,Fy,Mz[,cx,cy].
        #[arg(long)]
        input: PathBuf,
    },
    /// Run the method x shape x trial matrix and aggregate.
    Bench(Common),
    /// Like bench, repeated for every value of the configured sweep variable.
    Sweep(Common),
}

#[derive(Args)]
struct Common {
    /// TOML configuration; defaults apply to every missing key.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// proposed, naive, baseline or oracle. Restricts bench to one method.
    #[arg(long)]
    method: Option<String>,
    /// straight, arch, angular, wavy or knife. Restricts bench to one shape.
    #[arg(long)]
    shape: Option<String>,
    #[arg(long)]
    trials: Option<usize>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(m) = &self.method {
            cfg.method = m.clone();
            cfg.bench.methods = vec![m.clone()];
        }
        if let Some(s) = &self.shape {
            cfg.shape = s.clone();
            cfg.bench.shapes = vec![s.clone()];
        }
        if let Some(t) = self.trials {
            cfg.trials = t;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        Error::Data { .. } | Error::Snapshot(_) | Error::Io(_) => 2,
        _ => 3,
    }
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Simulate(c) => {
            let cfg = c.resolve()?;
            let path = run_simulate(&cfg, &c.out)?;
            println!("{}", path.display());
            Ok(0)
        }
        Command::Estimate { common, input } => {
            let cfg = common.resolve()?;
            let run = run_estimate(&cfg, &input, &common.out)?;
            let paused = run.records.iter().filter(|r| r.paused).count();
            println!("{} records ({paused} paused) written to {}", run.records.len(), common.out.display());
            Ok(0)
        }
        Command::Bench(c) => bench(c, false),
        Command::Sweep(c) => bench(c, true),
    }
}

fn bench(c: Common, sweep: bool) -> Result<u8, Error> {
    let cfg = c.resolve()?;
    let outcome = run_bench(&cfg, &c.out, sweep)?;
    println!(
        "{} trials, {} failed; aggregate in {}",
        outcome.trials.len(),
        outcome.failures.len(),
        c.out.join("aggregate.csv").display()
    );
    Ok(if outcome.failures.is_empty() { 0 } else { 3 })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
