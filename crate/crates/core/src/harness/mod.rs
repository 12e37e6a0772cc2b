//! Seeded experiment sweeps.
//!
//! A run walks the sweep in a fixed order: network sizes outermost, then
//! Sybil counts, then trial indices. Trial `i` gets
//!
//! ```text
//! sub_seed = rng::sub_seed(master_seed, 0, i)
//! ```
//!
//! and everything random inside the trial (node IDs, targets, downloaders,
//! Sybil candidates) derives from that value, `n` and `e`. A row can
//! therefore be replayed from its `n`, `e`, `trial` and `master_seed`
//! columns, and adding or reordering sweep values never changes other rows.
//!
//! The seed ignores `n` and `e` on purpose. Node IDs come from a counter, so
//! trial `i` at size 1000 uses the first 1000 nodes of its size-2000
//! network, and the target and Sybil candidate stream are the same at every
//! size and Sybil count. Comparisons along either axis are paired.
//!
//! Trials run on the rayon thread pool; rows are collected in sweep order, so
//! the output does not depend on the number of threads.

mod config;
mod report;
mod scenarios;


use std::fs::File;
use std::io::BufWriter;

use rayon::prelude::*;
use thiserror::Error;

use crate::attack::AttackError;
use crate::rng::sub_seed;
use crate::simnet::SimError;

pub use config::{ScenarioConfig, ScenarioKind};
pub use report::{aggregates, mean_ci, summarize, Aggregate, Cell, ScenarioReport};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error("{0}")]
    Run(String),
}

impl HarnessError {
    /// Process exit status: 2 for I/O failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Io(_) => 2,
            HarnessError::Csv(e) if e.is_io_error() => 2,
            _ => 1,
        }
    }
}

/// Seed of trial `index`, shared by every point of the sweep.
pub fn trial_seed(master_seed: u64, index: usize) -> u64 {
    sub_seed(master_seed, 0, index as u64)
}

/// Runs every trial of the sweep and returns the rows. Writes nothing.
pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioReport, HarnessError> {
    config.validate()?;
    let trials: Vec<scenarios::Trial> = config
        .n
        .iter()
        .flat_map(|&n| config.e_values.iter().map(move |&e| (n, e)))
        .flat_map(|(n, e)| (0..config.trials).map(move |index| trial(config, n, e, index)))
        .collect();
    let per_trial: Vec<Vec<Vec<Cell>>> = trials
        .par_iter()
        .map(|t| scenarios::run_trial(config, t))
        .collect::<Result<_, _>>()?;
    let rows = per_trial.into_iter().flatten().collect();
    Ok(ScenarioReport {
        scenario: config.scenario,
        master_seed: config.seed,
        columns: scenarios::columns(config.scenario),
        rows,
    })
}

/// Runs one trial on its own; equals the matching rows of a full run.
pub fn run_single_trial(
    config: &ScenarioConfig,
    n: usize,
    e: usize,
    index: usize,
) -> Result<Vec<Vec<Cell>>, HarnessError> {
    config.validate()?;
    scenarios::run_trial(config, &trial(config, n, e, index))
}

fn trial(config: &ScenarioConfig, n: usize, e: usize, index: usize) -> scenarios::Trial {
    scenarios::Trial {
        n,
        e,
        index,
        master_seed: config.seed,
        sub_seed: trial_seed(config.seed, index),
    }
}

/// [`run_scenario`], then writes the CSV to `config.out` when set.
pub fn execute(config: &ScenarioConfig) -> Result<ScenarioReport, HarnessError> {
    let report = run_scenario(config)?;
    if let Some(path) = &config.out {
        let file = File::create(path)?;
        report.write_csv(BufWriter::new(file))?;
    }
    Ok(report)
}
