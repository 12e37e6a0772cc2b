use std::fmt::{self, Write as _};
use std::io::Write;

use super::config::ScenarioKind;

/// One CSV field. Reals print in Rust's shortest round-trip form, so output
/// is stable across runs and platforms.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(u64),
    Real(f64),
    Flag(bool),
    Text(String),
}

impl Cell {
    pub fn as_f64(&self) -> f64 {
        match self {
            Cell::Int(v) => *v as f64,
            Cell::Real(v) => *v,
            Cell::Flag(b) => f64::from(u8::from(*b)),
            Cell::Text(_) => f64::NAN,
        }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Int(v) => write!(f, "{v}"),
            Cell::Real(v) => write!(f, "{v}"),
            Cell::Flag(b) => write!(f, "{b}"),
            Cell::Text(s) => f.write_str(s),
        }
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<u32> for Cell {
    fn from(v: u32) -> Self {
        Cell::Int(v.into())
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Real(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Flag(v)
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

/// Per-trial rows of one scenario run, in sweep order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioReport {
    pub scenario: ScenarioKind,
    pub master_seed: u64,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl ScenarioReport {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| *c == name)
    }

    /// Values of one column as reals, in row order.
    pub fn values(&self, name: &str) -> Vec<f64> {
        let i = self.column(name).unwrap_or_else(|| panic!("no column `{name}`"));
        self.rows.iter().map(|r| r[i].as_f64()).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|c| c.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

/// Mean of one metric over a group of rows, with a 95% interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    /// `(column, value)` pairs identifying the group.
    pub group: Vec<(&'static str, String)>,
    pub metric: String,
    pub count: usize,
    pub mean: f64,
    pub low: f64,
    pub high: f64,
}

/// Mean and normal-approximation 95% half-width `1.96 · σ / √n`, with the
/// population standard deviation (so a Bernoulli column gives
/// `1.96 · √(p̂(1 − p̂)/n)`).
pub fn mean_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, 1.96 * (var / n).sqrt())
}

fn group_rows(report: &ScenarioReport, keys: &[&'static str]) -> Vec<(Vec<(&'static str, String)>, Vec<usize>)> {
    let idx: Vec<usize> = keys
        .iter()
        .map(|k| report.column(k).unwrap_or_else(|| panic!("no column `{k}`")))
        .collect();
    let mut groups: Vec<(Vec<(&'static str, String)>, Vec<usize>)> = Vec::new();
    for (r, row) in report.rows.iter().enumerate() {
        let label: Vec<(&'static str, String)> =
            keys.iter().zip(&idx).map(|(k, &i)| (*k, row[i].to_string())).collect();
        match groups.iter_mut().find(|(g, _)| *g == label) {
            Some((_, members)) => members.push(r),
            None => groups.push((label, vec![r])),
        }
    }
    groups
}

enum Stat {
    Mean(&'static str),
    /// Mean of `1 - column`.
    Complement(&'static str),
    /// Harmonic mean, interval from the reciprocal mean.
    Harmonic(&'static str),
    AbsMean(&'static str),
}

fn plan(kind: ScenarioKind) -> (Vec<&'static str>, Vec<(&'static str, Stat)>) {
    use ScenarioKind::*;
    use Stat::*;
    match kind {
        AttackEffectiveness => (
            vec!["n", "e"],
            vec![
                ("a_eff", Mean("a_eff")),
                ("honest_holders", Mean("honest_holders")),
                ("attempts", Mean("attempts")),
            ],
        ),
        DetectionRoc | DetectionVsNetsize => (
            vec!["n", "e", "threshold"],
            vec![("flag_rate", Mean("flagged")), ("miss_rate", Complement("flagged")), ("kl", Mean("kl"))],
        ),
        MitigationEffectiveness => (
            vec!["n", "e"],
            vec![
                ("m_eff", Mean("m_eff")),
                ("detected", Mean("detected")),
                ("honest_resolvers", Mean("honest_resolvers")),
                ("provide_lookups", Mean("provide_lookups")),
            ],
        ),
        MitigationOverhead => (
            vec!["n", "e"],
            vec![
                ("lookup_count", Mean("lookup_count")),
                ("region_size", Mean("region_size")),
                ("honest_in_region", Mean("honest_in_region")),
            ],
        ),
        SybilGenCost => (
            vec!["n", "e"],
            vec![
                ("attempt_ratio", Mean("attempt_ratio")),
                ("attempts", Mean("attempts")),
                ("attempts_harmonic", Harmonic("attempts")),
                ("cost_usd", Mean("cost_usd")),
            ],
        ),
        NetsizeAccuracy => (
            vec!["n"],
            vec![("n_hat", Mean("n_hat")), ("abs_rel_error", AbsMean("rel_error"))],
        ),
    }
}

/// Per-group aggregates of the scenario's headline metrics. For detection
/// runs `flag_rate` at `e = 0` is f_p and `miss_rate` at `e > 0` is f_n.
pub fn aggregates(report: &ScenarioReport) -> Vec<Aggregate> {
    let (keys, stats) = plan(report.scenario);
    let mut out = Vec::new();
    for (group, members) in group_rows(report, &keys) {
        for (metric, stat) in &stats {
            let col = |name: &str| {
                let i = report.column(name).unwrap_or_else(|| panic!("no column `{name}`"));
                members.iter().map(|&r| report.rows[r][i].as_f64()).collect::<Vec<f64>>()
            };
            let (mean, low, high) = match stat {
                Stat::Mean(c) => {
                    let (m, h) = mean_ci(&col(c));
                    (m, m - h, m + h)
                }
                Stat::Complement(c) => {
                    let v: Vec<f64> = col(c).iter().map(|x| 1.0 - x).collect();
                    let (m, h) = mean_ci(&v);
                    (m, m - h, m + h)
                }
                Stat::AbsMean(c) => {
                    let v: Vec<f64> = col(c).iter().map(|x| x.abs()).collect();
                    let (m, h) = mean_ci(&v);
                    (m, m - h, m + h)
                }
                Stat::Harmonic(c) => {
                    let v: Vec<f64> = col(c).iter().map(|x| 1.0 / x).collect();
                    let (m, h) = mean_ci(&v);
                    let high = if m - h > 0.0 { 1.0 / (m - h) } else { f64::INFINITY };
                    (1.0 / m, 1.0 / (m + h), high)
                }
            };
            out.push(Aggregate {
                group: group.clone(),
                metric: metric.to_string(),
                count: members.len(),
                mean,
                low,
                high,
            });
        }
    }
    out
}

/// Human-readable table of [`aggregates`].
pub fn summarize(report: &ScenarioReport) -> String {
    let rows = aggregates(report);
    let mut s = String::new();
    let _ = writeln!(s, "scenario {}  seed {}  rows {}", report.scenario, report.master_seed, report.rows.len());
    let _ = writeln!(
        s,
        "{:<32} {:<18} {:>7} {:>14} {:>14} {:>14}",
        "group", "metric", "count", "mean", "ci95_low", "ci95_high"
    );
    for a in rows {
        let group = a
            .group
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(" ");
        let _ = writeln!(
            s,
            "{:<32} {:<18} {:>7} {:>14.6} {:>14.6} {:>14.6}",
            group, a.metric, a.count, a.mean, a.low, a.high
        );
    }
    s
}
