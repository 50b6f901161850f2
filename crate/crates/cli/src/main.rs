use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pilotguard::error::Error;
use pilotguard::exec::Execution;
use pilotguard::experiment::{run, ExperimentConfig, ExperimentKind};
use toml::{Table, Value};

/// Pilot-contamination experiments: secrecy outage sweeps and detection rates.
#[derive(Parser, Debug)]
#[command(name = "pilotguard", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// SOP against the number of antennas, passive vs. active attacker.
    Fig1(RunArgs),
    /// SOP against the correlation of Eve's channels.
    Fig2(RunArgs),
    /// Key-confirmation, trace-check and pairing failure rates per attack.
    Detect(RunArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// TOML config, or a previous output CSV to replay its configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; defaults to the number of cores. Does not affect results.
    #[arg(long)]
    workers: Option<usize>,

    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long)]
    trials_r0: Option<u64>,
    #[arg(long)]
    n: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    n_list: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    zeta_list: Option<Vec<f64>>,
    #[arg(long, allow_negative_numbers = true)]
    zeta: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    gamma: Option<f64>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    gamma_list: Option<Vec<f64>>,
    #[arg(long, allow_negative_numbers = true)]
    delta: Option<f64>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    delta_list: Option<Vec<f64>>,
    #[arg(long, allow_negative_numbers = true)]
    epsilon: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    sigma_h2: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    sigma_g2: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    sigma_q2: Option<f64>,
    #[arg(long)]
    key_bits: Option<u64>,
    #[arg(long, allow_negative_numbers = true)]
    rate_fraction: Option<f64>,
    #[arg(long)]
    both_phases: Option<bool>,
    /// Comma-separated attack modes, e.g. passive,random-q.
    #[arg(long, value_delimiter = ',')]
    modes: Option<Vec<String>>,
}

impl RunArgs {
    /// Flags that were given, keyed like the config file.
    fn overrides(&self) -> Table {
        let mut t = Table::new();
        let int = |v: u64| Value::Integer(v as i64);
        let floats = |v: &[f64]| Value::Array(v.iter().map(|x| Value::Float(*x)).collect());
        let mut put = |key: &str, value: Option<Value>| {
            if let Some(v) = value {
                t.insert(key.into(), v);
            }
        };
        put("seed", self.seed.map(int));
        put("trials", self.trials.map(int));
        put("trials_r0", self.trials_r0.map(int));
        put("n", self.n.map(int));
        put(
            "n_list",
            self.n_list.as_ref().map(|v| Value::Array(v.iter().map(|&n| int(n)).collect())),
        );
        put("zeta_list", self.zeta_list.as_deref().map(floats));
        put("zeta", self.zeta.map(Value::Float));
        put("gamma", self.gamma.map(Value::Float));
        put("gamma_list", self.gamma_list.as_deref().map(floats));
        put("delta", self.delta.map(Value::Float));
        put("delta_list", self.delta_list.as_deref().map(floats));
        put("epsilon", self.epsilon.map(Value::Float));
        put("sigma_h2", self.sigma_h2.map(Value::Float));
        put("sigma_g2", self.sigma_g2.map(Value::Float));
        put("sigma_q2", self.sigma_q2.map(Value::Float));
        put("key_bits", self.key_bits.map(int));
        put("rate_fraction", self.rate_fraction.map(Value::Float));
        put("both_phases", self.both_phases.map(Value::Boolean));
        put(
            "modes",
            self.modes
                .as_ref()
                .map(|v| Value::Array(v.iter().map(|m| Value::String(m.clone())).collect())),
        );
        t
    }
}

enum Failure {
    Validation(String),
    Numerical(String),
}

fn execute(kind: ExperimentKind, args: &RunArgs) -> Result<(), Failure> {
    let classify = |e: Error| {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Validation(e.to_string())
        }
    };
    let text = match &args.config {
        Some(path) => Some(
            std::fs::read_to_string(path)
                .map_err(|e| Failure::Validation(format!("cannot read config {}: {e}", path.display())))?,
        ),
        None => None,
    };
    let config = ExperimentConfig::resolve(kind, text.as_deref(), &args.overrides()).map_err(classify)?;
    let exec = match args.workers {
        Some(w) => Execution::with_workers(w).map_err(classify)?,
        None => Execution::available(),
    };
    eprintln!("running {kind} with {} trials per point on {} worker(s)", config.trials(), exec.workers());
    let result = run(&config, exec).map_err(classify)?;
    for w in &result.metadata.warnings {
        eprintln!("warning: {w}");
    }
    result
        .write_csv(&args.out)
        .map_err(|e| Failure::Validation(format!("cannot write {}: {e}", args.out.display())))?;
    eprintln!("wrote {} rows to {}", result.rows.len(), args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    // clap exits with 2 on usage errors, which is reserved for numerical failures here.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (kind, args) = match &cli.command {
        Command::Fig1(a) => (ExperimentKind::Fig1, a),
        Command::Fig2(a) => (ExperimentKind::Fig2, a),
        Command::Detect(a) => (ExperimentKind::Detect, a),
    };
    match execute(kind, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("numerical error: {msg}");
            ExitCode::from(2)
        }
    }
}
