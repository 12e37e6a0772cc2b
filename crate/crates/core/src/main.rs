use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use kadlab::harness::{execute, summarize, HarnessError, ScenarioConfig, ScenarioKind};

/// Runs a seeded DHT experiment sweep and writes per-trial rows as CSV.
///
/// Options come from scenario defaults, then the `--config` file, then flags.
/// List options take comma-separated values.
#[derive(Debug, Parser)]
#[command(name = "kadlab", version)]
struct Cli {
    /// attack-effectiveness, detection-roc, detection-vs-netsize,
    /// mitigation-effectiveness, mitigation-overhead, sybil-gen-cost or
    /// netsize-accuracy
    scenario: String,
    /// Flat key=value file; keys are the long flag names.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Network sizes.
    #[arg(long)]
    n: Option<String>,
    /// Sybil counts.
    #[arg(long)]
    e: Option<String>,
    #[arg(long)]
    trials: Option<String>,
    /// KL thresholds.
    #[arg(long)]
    threshold: Option<String>,
    #[arg(long)]
    p_miss: Option<String>,
    #[arg(long)]
    p_offline: Option<String>,
    /// Master seed.
    #[arg(long)]
    seed: Option<String>,
    /// Provider record lifetime.
    #[arg(long)]
    ttl_hours: Option<String>,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    /// Estimator lookups per trial.
    #[arg(long)]
    samples: Option<String>,
    /// FindProviders queries per trial.
    #[arg(long)]
    downloaders: Option<String>,
    /// Targets per network (sybil-gen-cost).
    #[arg(long)]
    targets: Option<String>,
    /// Bits subtracted from the region prefix length.
    #[arg(long)]
    margin: Option<String>,
    #[arg(long)]
    lookup_budget: Option<String>,
    /// Provide before launching the Sybils (true/false).
    #[arg(long)]
    provide_first: Option<String>,
    /// Virtual hours between provide and queries.
    #[arg(long)]
    wait_hours: Option<String>,
}

impl Cli {
    fn config(&self) -> Result<ScenarioConfig, HarnessError> {
        let kind: ScenarioKind = self.scenario.parse()?;
        let mut config = ScenarioConfig::new(kind);
        if let Some(path) = &self.config {
            config.apply_file(&std::fs::read_to_string(path)?)?;
            config.scenario = kind;
        }
        let flags = [
            ("n", &self.n),
            ("e", &self.e),
            ("trials", &self.trials),
            ("threshold", &self.threshold),
            ("p-miss", &self.p_miss),
            ("p-offline", &self.p_offline),
            ("seed", &self.seed),
            ("ttl-hours", &self.ttl_hours),
            ("k", &self.k),
            ("alpha", &self.alpha),
            ("samples", &self.samples),
            ("downloaders", &self.downloaders),
            ("targets", &self.targets),
            ("margin", &self.margin),
            ("lookup-budget", &self.lookup_budget),
            ("provide-first", &self.provide_first),
            ("wait-hours", &self.wait_hours),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                config.set(key, v)?;
            }
        }
        if let Some(out) = &self.out {
            config.out = Some(out.clone());
        }
        config.validate()?;
        Ok(config)
    }
}

fn run(cli: &Cli) -> Result<(), HarnessError> {
    let config = cli.config()?;
    let report = execute(&config)?;
    if config.out.is_none() {
        report.write_csv(std::io::stdout().lock())?;
        eprint!("{}", summarize(&report));
    } else {
        print!("{}", summarize(&report));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kadlab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
