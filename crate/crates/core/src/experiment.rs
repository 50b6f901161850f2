//! Experiment configuration and the fig1 / fig2 / detect sweeps.
//!
//! A configuration is resolved from, in increasing priority: the defaults of
//! the experiment kind, top-level keys of the config file, the file's
//! `[fig1]` / `[fig2]` / `[detect]` section for that kind, and command-line
//! overrides. The resolved configuration is echoed into the output's
//! metadata line; feeding a previous output back as the config file
//! reproduces it byte for byte.

use std::fmt;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::adversary::{AttackMode, AttackStrategy};
use crate::channel::{build_joint_covariance, rho_no_attack, sk_capacity, ChannelStatistics};
use crate::detector::{protocol_trial, Pairing, ProtocolParams};
use crate::error::{Error, Result};
use crate::exec::{try_map_trials, Execution};
use crate::numerics::{RngStream, StreamDomain};
use crate::secrecy::{estimate_r0, sop_with_reference, RateEstimate, SopEstimate};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Fig1,
    Fig2,
    Detect,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 3] = [ExperimentKind::Fig1, ExperimentKind::Fig2, ExperimentKind::Detect];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Fig1 => "fig1",
            ExperimentKind::Fig2 => "fig2",
            ExperimentKind::Detect => "detect",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::config("experiment", format!("unknown experiment {s:?}")))
    }
}

/// SOP against the number of antennas, passive vs. baseline attacker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fig1Config {
    pub seed: u64,
    pub trials: u64,
    pub trials_r0: u64,
    pub n_list: Vec<usize>,
    pub sigma_h2: f64,
    pub sigma_g2: f64,
    pub gamma: f64,
    pub rate_fraction: f64,
    /// Whether the active attacker also transmits in phase 1.
    pub both_phases: bool,
}

impl Default for Fig1Config {
    fn default() -> Self {
        Fig1Config {
            seed: 1,
            trials: 10_000,
            trials_r0: 10_000,
            n_list: vec![2, 4, 6],
            sigma_h2: 1.0,
            sigma_g2: 0.5,
            gamma: 0.0,
            rate_fraction: 0.2,
            both_phases: false,
        }
    }
}

/// SOP against the correlation factor for passive, baseline and correlated-ML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fig2Config {
    pub seed: u64,
    pub trials: u64,
    pub trials_r0: u64,
    pub n: usize,
    pub zeta_list: Vec<f64>,
    pub sigma_h2: f64,
    pub sigma_g2: f64,
    pub gamma: f64,
    pub rate_fraction: f64,
    pub both_phases: bool,
}

impl Default for Fig2Config {
    fn default() -> Self {
        Fig2Config {
            seed: 1,
            trials: 10_000,
            trials_r0: 10_000,
            n: 6,
            zeta_list: vec![0.0, 0.2, 0.4, 0.6],
            sigma_h2: 0.5,
            sigma_g2: 0.5,
            gamma: 0.0,
            rate_fraction: 0.2,
            both_phases: false,
        }
    }
}

/// Pairing outcomes per attack mode over a grid of noise levels and guard bands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectConfig {
    pub seed: u64,
    pub trials: u64,
    pub n: usize,
    pub key_bits: usize,
    pub delta_list: Vec<f64>,
    pub gamma_list: Vec<f64>,
    pub epsilon: f64,
    pub sigma_h2: f64,
    pub sigma_g2: f64,
    pub sigma_q2: f64,
    /// Correlation of Eve's two channels; only the correlated-ML mode depends on it.
    pub zeta: f64,
    pub modes: Vec<AttackMode>,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            seed: 1,
            trials: 1000,
            n: 8,
            key_bits: 64,
            delta_list: vec![1.0],
            gamma_list: vec![0.01],
            epsilon: 0.2,
            sigma_h2: 0.5,
            sigma_g2: 0.5,
            sigma_q2: 0.5,
            zeta: 0.0,
            modes: vec![
                AttackMode::Passive,
                AttackMode::BaselinePhase2,
                AttackMode::RandomQ,
                AttackMode::FullKnowledge,
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExperimentConfig {
    Fig1(Fig1Config),
    Fig2(Fig2Config),
    Detect(DetectConfig),
}

impl ExperimentConfig {
    pub fn defaults(kind: ExperimentKind) -> Self {
        match kind {
            ExperimentKind::Fig1 => ExperimentConfig::Fig1(Fig1Config::default()),
            ExperimentKind::Fig2 => ExperimentConfig::Fig2(Fig2Config::default()),
            ExperimentKind::Detect => ExperimentConfig::Detect(DetectConfig::default()),
        }
    }

    pub fn kind(&self) -> ExperimentKind {
        match self {
            ExperimentConfig::Fig1(_) => ExperimentKind::Fig1,
            ExperimentConfig::Fig2(_) => ExperimentKind::Fig2,
            ExperimentConfig::Detect(_) => ExperimentKind::Detect,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            ExperimentConfig::Fig1(c) => c.seed,
            ExperimentConfig::Fig2(c) => c.seed,
            ExperimentConfig::Detect(c) => c.seed,
        }
    }

    pub fn trials(&self) -> u64 {
        match self {
            ExperimentConfig::Fig1(c) => c.trials,
            ExperimentConfig::Fig2(c) => c.trials,
            ExperimentConfig::Detect(c) => c.trials,
        }
    }

    /// Flat key-value form including `experiment`, as echoed into outputs.
    pub fn to_table(&self) -> Table {
        let inner = match self {
            ExperimentConfig::Fig1(c) => Table::try_from(c),
            ExperimentConfig::Fig2(c) => Table::try_from(c),
            ExperimentConfig::Detect(c) => Table::try_from(c),
        };
        let mut table = inner.expect("configs serialize to plain tables");
        table.insert("experiment".into(), Value::String(self.kind().as_str().into()));
        table
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self.to_table()).expect("tables are valid JSON")
    }

    /// Merges the layers described in the module docs and validates the result.
    /// `file` is either TOML text or a previous output, whose metadata echo is used.
    pub fn resolve(kind: ExperimentKind, file: Option<&str>, overrides: &Table) -> Result<Self> {
        let defaults = ExperimentConfig::defaults(kind).to_table();
        let mut layered = Table::new();
        if let Some(text) = file {
            let file_table = parse_config_text(text)?;
            for (key, value) in &file_table {
                match (key.as_str(), value) {
                    ("experiment", Value::String(s)) => {
                        if s != kind.as_str() {
                            return Err(Error::config(
                                "experiment",
                                format!("file is for {s}, command is {kind}"),
                            ));
                        }
                    }
                    ("experiment", _) => return Err(Error::config("experiment", "must be a string")),
                    (section, Value::Table(_)) if section.parse::<ExperimentKind>().is_ok() => {}
                    (_, Value::Table(_)) => {
                        return Err(Error::config(key.clone(), "unknown section"));
                    }
                    _ => {
                        layered.insert(key.clone(), value.clone());
                    }
                }
            }
            if let Some(section) = file_table.get(kind.as_str()).and_then(Value::as_table) {
                for (key, value) in section {
                    if key == "experiment" {
                        return Err(Error::config("experiment", "not allowed inside a section"));
                    }
                    layered.insert(key.clone(), value.clone());
                }
            }
        }
        for (key, value) in overrides {
            layered.insert(key.clone(), value.clone());
        }
        if kind == ExperimentKind::Detect {
            for (scalar, list) in [("gamma", "gamma_list"), ("delta", "delta_list")] {
                if let Some(v) = layered.remove(scalar) {
                    layered.insert(list.into(), Value::Array(vec![v]));
                }
            }
        }

        let config = match kind {
            ExperimentKind::Fig1 => ExperimentConfig::Fig1(decode(&defaults, &layered)?),
            ExperimentKind::Fig2 => ExperimentConfig::Fig2(decode(&defaults, &layered)?),
            ExperimentKind::Detect => ExperimentConfig::Detect(decode(&defaults, &layered)?),
        };
        config.validate()?;
        Ok(config)
    }

    /// Range and consistency checks, each reported against the offending field.
    /// A correlation outside the PSD region is a numerical error and carries the boundary.
    pub fn validate(&self) -> Result<()> {
        match self {
            ExperimentConfig::Fig1(c) => {
                positive_count("trials", c.trials)?;
                at_least("trials_r0", c.trials_r0, 2)?;
                increasing("n_list", &c.n_list.iter().map(|&n| n as f64).collect::<Vec<_>>())?;
                if c.n_list[0] == 0 {
                    return Err(Error::config("n_list", "antenna counts must be at least 1"));
                }
                rate_fraction(c.rate_fraction)?;
                for &n in &c.n_list {
                    stats_for(ChannelStatistics::independent(n, c.sigma_h2, c.sigma_g2, c.gamma))?;
                }
            }
            ExperimentConfig::Fig2(c) => {
                positive_count("trials", c.trials)?;
                at_least("trials_r0", c.trials_r0, 2)?;
                increasing("zeta_list", &c.zeta_list)?;
                rate_fraction(c.rate_fraction)?;
                for &zeta in &c.zeta_list {
                    let stats = stats_for(ChannelStatistics::scalar_diagonal(
                        c.n, c.sigma_h2, c.sigma_g2, zeta, c.gamma,
                    ))?;
                    build_joint_covariance(&stats)?;
                }
            }
            ExperimentConfig::Detect(c) => {
                positive_count("trials", c.trials)?;
                if c.key_bits == 0 {
                    return Err(Error::config("key_bits", "must be at least 1"));
                }
                increasing("delta_list", &c.delta_list)?;
                if c.delta_list.iter().any(|d| *d < 0.0) {
                    return Err(Error::config("delta_list", "guard bands must be >= 0"));
                }
                increasing("gamma_list", &c.gamma_list)?;
                if !(c.epsilon > 0.0 && c.epsilon.is_finite()) {
                    return Err(Error::config("epsilon", format!("must be finite and > 0, got {}", c.epsilon)));
                }
                if !(c.sigma_q2 >= 0.0 && c.sigma_q2.is_finite()) {
                    return Err(Error::config("sigma_q2", format!("must be finite and >= 0, got {}", c.sigma_q2)));
                }
                if c.modes.is_empty() {
                    return Err(Error::config("modes", "needs at least one attack mode"));
                }
                for (i, m) in c.modes.iter().enumerate() {
                    if c.modes[..i].contains(m) {
                        return Err(Error::config("modes", format!("{} listed twice", m.as_str())));
                    }
                }
                for &gamma in &c.gamma_list {
                    let stats = stats_for(detect_stats(c, gamma))?;
                    build_joint_covariance(&stats)?;
                }
            }
        }
        Ok(())
    }
}

/// Accepts TOML, or a previous output whose first line is `#` + JSON metadata.
fn parse_config_text(text: &str) -> Result<Table> {
    if text.starts_with('#') {
        let meta = Metadata::from_output(text)?;
        let table = Table::try_from(&meta.config).map_err(|e| Error::config("config", e.to_string()))?;
        return Ok(table);
    }
    toml::from_str(text).map_err(|e| Error::config("config", e.message().to_string()))
}

/// Deserializes `defaults` overlaid with `layered`. On failure, blames the
/// first layered key that fails on its own, so errors name a field.
fn decode<T: DeserializeOwned>(defaults: &Table, layered: &Table) -> Result<T> {
    let mut merged = defaults.clone();
    for (k, v) in layered {
        if !defaults.contains_key(k) {
            return Err(Error::config(k.clone(), "unknown field for this experiment"));
        }
        merged.insert(k.clone(), v.clone());
    }
    merged.remove("experiment");
    match merged.try_into::<T>() {
        Ok(value) => Ok(value),
        Err(err) => {
            for (k, v) in layered {
                let mut single = defaults.clone();
                single.remove("experiment");
                single.insert(k.clone(), v.clone());
                if let Err(e) = single.try_into::<T>() {
                    return Err(Error::config(k.clone(), e.to_string().trim().to_string()));
                }
            }
            Err(Error::config("config", err.to_string()))
        }
    }
}

fn positive_count(field: &str, value: u64) -> Result<()> {
    at_least(field, value, 1)
}

fn at_least(field: &str, value: u64, min: u64) -> Result<()> {
    if value < min {
        return Err(Error::config(field, format!("must be at least {min}, got {value}")));
    }
    Ok(())
}

fn increasing(field: &str, values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::config(field, "must not be empty"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::config(field, "values must be finite"));
    }
    if values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::config(field, "values must be strictly increasing"));
    }
    Ok(())
}

fn rate_fraction(value: f64) -> Result<()> {
    if !(value > 0.0 && value < 1.0) {
        return Err(Error::config("rate_fraction", format!("must lie in (0, 1), got {value}")));
    }
    Ok(())
}

/// Turns channel-parameter errors into config errors on the matching key.
fn stats_for(stats: Result<ChannelStatistics>) -> Result<ChannelStatistics> {
    stats.map_err(|e| match e {
        Error::Parameter { name, reason } => Error::config(config_key(name), reason),
        other => other,
    })
}

fn config_key(name: &str) -> String {
    match name {
        "N" | "n" => "n".into(),
        "sigma_H2" | "sigma_h2" => "sigma_h2".into(),
        "sigma_G2" | "sigma_g2" => "sigma_g2".into(),
        other => other.to_lowercase(),
    }
}

fn detect_stats(c: &DetectConfig, gamma: f64) -> Result<ChannelStatistics> {
    if c.modes.contains(&AttackMode::CorrelatedMl) && c.zeta != 0.0 {
        ChannelStatistics::scalar_diagonal(c.n, c.sigma_h2, c.sigma_g2, c.zeta, gamma)
    } else {
        ChannelStatistics::independent(c.n, c.sigma_h2, c.sigma_g2, gamma)
    }
}

fn strategy_for(mode: AttackMode, sigma_q2: f64) -> AttackStrategy {
    match mode {
        AttackMode::Passive => AttackStrategy::Passive,
        AttackMode::BaselinePhase2 => AttackStrategy::Baseline { both_phases: false },
        AttackMode::BaselineBoth => AttackStrategy::Baseline { both_phases: true },
        AttackMode::RandomQ => AttackStrategy::RandomQ { sigma_q2 },
        AttackMode::CorrelatedMl => AttackStrategy::CorrelatedMl,
        AttackMode::FullKnowledge => AttackStrategy::FullKnowledge,
    }
}

/// The `#`-prefixed JSON line at the top of every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub trials: u64,
    pub version: String,
    pub config: serde_json::Value,
    pub warnings: Vec<String>,
}

impl Metadata {
    pub fn from_output(text: &str) -> Result<Self> {
        let line = text.lines().next().unwrap_or_default();
        let json = line
            .strip_prefix('#')
            .ok_or_else(|| Error::config("config", "output has no metadata line"))?;
        serde_json::from_str(json).map_err(|e| Error::config("config", format!("bad metadata line: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(u64),
    Real(f64),
    Text(String),
}

impl Cell {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Int(i) => Some(*i as f64),
            Cell::Real(x) => Some(*x),
            Cell::Text(_) => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Cell::Text(s) => Some(s),
            _ => None,
        }
    }

    fn render(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Real(x) if x.is_finite() => format!("{x:.16e}"),
            Cell::Real(x) => x.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub metadata: Metadata,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl ExperimentResult {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| *c == name)
    }

    /// Numeric column by name; panics on unknown or textual columns.
    pub fn column(&self, name: &str) -> Vec<f64> {
        let i = self.column_index(name).unwrap_or_else(|| panic!("no column {name}"));
        self.rows
            .iter()
            .map(|r| r[i].as_f64().unwrap_or_else(|| panic!("column {name} is not numeric")))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let meta = serde_json::to_string(&self.metadata).expect("metadata serializes");
        let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        writer.write_record(&self.columns).expect("in-memory write");
        for row in &self.rows {
            writer.write_record(row.iter().map(Cell::render)).expect("in-memory write");
        }
        let body = String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("utf-8 cells");
        format!("#{meta}\n{body}")
    }

    /// Writes the CSV, replacing the file atomically-enough via a sibling temp file.
    pub fn write_csv(&self, path: &std::path::Path) -> std::io::Result<()> {
        let tmp = path.with_extension("partial");
        std::fs::write(&tmp, self.to_csv())?;
        std::fs::rename(tmp, path)
    }
}

fn metadata(config: &ExperimentConfig, warnings: Vec<String>) -> Metadata {
    Metadata {
        experiment: config.kind(),
        seed: config.seed(),
        trials: config.trials(),
        version: VERSION.to_string(),
        config: config.to_json(),
        warnings,
    }
}

pub fn run(config: &ExperimentConfig, exec: Execution) -> Result<ExperimentResult> {
    config.validate()?;
    match config {
        ExperimentConfig::Fig1(c) => run_fig1(config, c, exec),
        ExperimentConfig::Fig2(c) => run_fig2(config, c, exec),
        ExperimentConfig::Detect(c) => run_detect(config, c, exec),
    }
}

fn sop(
    stats: &ChannelStatistics,
    attack: AttackStrategy,
    r0: &RateEstimate,
    fraction: f64,
    trials: u64,
    seed: u64,
    exec: Execution,
) -> Result<SopEstimate> {
    let prepared = attack.prepare(stats)?;
    sop_with_reference(stats, &prepared, r0.mean, fraction, trials, seed, exec)
}

fn run_fig1(config: &ExperimentConfig, c: &Fig1Config, exec: Execution) -> Result<ExperimentResult> {
    let mut rows = Vec::new();
    for &n in &c.n_list {
        let stats = ChannelStatistics::independent(n, c.sigma_h2, c.sigma_g2, c.gamma)?;
        let r0 = estimate_r0(&stats, c.trials_r0, c.seed, exec)?;
        let passive = sop(&stats, AttackStrategy::Passive, &r0, c.rate_fraction, c.trials, c.seed, exec)?;
        let active = sop(
            &stats,
            AttackStrategy::Baseline {
                both_phases: c.both_phases,
            },
            &r0,
            c.rate_fraction,
            c.trials,
            c.seed,
            exec,
        )?;
        rows.push(vec![
            Cell::Int(n as u64),
            Cell::Real(passive.p_out),
            Cell::Real(passive.half_width),
            Cell::Real(active.p_out),
            Cell::Real(active.half_width),
            Cell::Real(r0.mean),
            Cell::Real(r0.stderr),
        ]);
    }
    Ok(ExperimentResult {
        metadata: metadata(config, Vec::new()),
        columns: vec!["n", "sop_passive", "ci_passive", "sop_active", "ci_active", "r0", "r0_stderr"],
        rows,
    })
}

fn run_fig2(config: &ExperimentConfig, c: &Fig2Config, exec: Execution) -> Result<ExperimentResult> {
    // R0 depends only on H, so one estimate serves every zeta.
    let reference = ChannelStatistics::independent(c.n, c.sigma_h2, c.sigma_g2, c.gamma)?;
    let r0 = estimate_r0(&reference, c.trials_r0, c.seed, exec)?;
    let mut rows = Vec::new();
    for &zeta in &c.zeta_list {
        let stats = ChannelStatistics::scalar_diagonal(c.n, c.sigma_h2, c.sigma_g2, zeta, c.gamma)?;
        let run_arm = |attack| sop(&stats, attack, &r0, c.rate_fraction, c.trials, c.seed, exec);
        let passive = run_arm(AttackStrategy::Passive)?;
        let baseline = run_arm(AttackStrategy::Baseline {
            both_phases: c.both_phases,
        })?;
        let corr = run_arm(AttackStrategy::CorrelatedMl)?;
        rows.push(vec![
            Cell::Real(zeta),
            Cell::Real(passive.p_out),
            Cell::Real(passive.half_width),
            Cell::Real(baseline.p_out),
            Cell::Real(baseline.half_width),
            Cell::Real(corr.p_out),
            Cell::Real(corr.half_width),
            Cell::Real(corr.alpha_mean.unwrap_or(f64::NAN)),
            Cell::Int(corr.infeasible),
            Cell::Real(r0.mean),
            Cell::Real(r0.stderr),
        ]);
    }
    Ok(ExperimentResult {
        metadata: metadata(config, Vec::new()),
        columns: vec![
            "zeta",
            "sop_passive",
            "ci_passive",
            "sop_baseline",
            "ci_baseline",
            "sop_corr_ml",
            "ci_corr_ml",
            "alpha_mean",
            "infeasible_count",
            "r0",
            "r0_stderr",
        ],
        rows,
    })
}

/// Warns when the key is longer than the capacity-backed number of bits.
fn key_length_warnings(c: &DetectConfig) -> Vec<String> {
    let samples = 2.0 * (c.n * c.n) as f64;
    c.gamma_list
        .iter()
        .filter_map(|&gamma| {
            let capacity = sk_capacity(rho_no_attack(c.sigma_h2, gamma)).ok()?;
            (capacity * samples < c.key_bits as f64).then(|| {
                format!(
                    "gamma = {gamma}: key capacity {:.3} bits over {} samples is below key_bits = {}",
                    capacity * samples,
                    samples,
                    c.key_bits
                )
            })
        })
        .collect()
}

fn run_detect(config: &ExperimentConfig, c: &DetectConfig, exec: Execution) -> Result<ExperimentResult> {
    let mut rows = Vec::new();
    for &mode in &c.modes {
        for &gamma in &c.gamma_list {
            let stats = detect_stats(c, gamma)?;
            let attack = strategy_for(mode, c.sigma_q2).prepare(&stats)?;
            for &delta in &c.delta_list {
                let params = ProtocolParams {
                    key_bits: c.key_bits,
                    delta,
                    epsilon: c.epsilon,
                };
                let reports = try_map_trials(exec, c.trials, |i| {
                    let mut rng = RngStream::for_trial(c.seed, StreamDomain::Detection, i);
                    protocol_trial(&stats, &attack, &params, &mut rng)
                })?;
                let rate = |pred: &dyn Fn(&crate::detector::DetectionReport) -> bool| {
                    reports.iter().filter(|r| pred(r)).count() as f64 / c.trials as f64
                };
                rows.push(vec![
                    Cell::Text(mode.as_str().into()),
                    Cell::Real(gamma),
                    Cell::Real(delta),
                    Cell::Real(rate(&|r| !r.keyconf.is_pass())),
                    Cell::Real(rate(&|r| !r.trace_alice.is_pass())),
                    Cell::Real(rate(&|r| !r.trace_bob.is_pass())),
                    Cell::Real(rate(&|r| r.pairing == Pairing::Fails)),
                    Cell::Int(c.trials),
                ]);
            }
        }
    }
    Ok(ExperimentResult {
        metadata: metadata(config, key_length_warnings(c)),
        columns: vec![
            "mode",
            "gamma",
            "delta",
            "keyconf_fail_rate",
            "traceA_fail_rate",
            "traceB_fail_rate",
            "pairing_fail_rate",
            "trials",
        ],
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn overrides(pairs: &[(&str, Value)]) -> Table {
        pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    #[test]
    fn defaults_validate() {
        for kind in ExperimentKind::ALL {
            let c = ExperimentConfig::resolve(kind, None, &Table::new()).unwrap();
            assert_eq!(c, ExperimentConfig::defaults(kind));
        }
    }

    #[test]
    fn layering_order() {
        let file = r#"
            experiment = "fig1"
            seed = 3
            trials = 50
            [fig1]
            trials = 60
            n_list = [2, 3]
            [fig2]
            n = 99
        "#;
        let c = ExperimentConfig::resolve(
            ExperimentKind::Fig1,
            Some(file),
            &overrides(&[("seed", Value::Integer(4))]),
        )
        .unwrap();
        let ExperimentConfig::Fig1(c) = c else { panic!() };
        assert_eq!((c.seed, c.trials, c.n_list), (4, 60, vec![2, 3]));
        assert_eq!(c.sigma_g2, 0.5);
    }

    fn config_error(kind: ExperimentKind, file: &str) -> String {
        match ExperimentConfig::resolve(kind, Some(file), &Table::new()) {
            Err(Error::Config { field, .. }) => field,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn errors_name_the_field() {
        use ExperimentKind::*;
        assert_eq!(config_error(Fig1, "n_list = [4, 2]"), "n_list");
        assert_eq!(config_error(Fig1, "n_list = []"), "n_list");
        assert_eq!(config_error(Fig1, "trials = \"many\""), "trials");
        assert_eq!(config_error(Fig1, "zeta_list = [0.1]"), "zeta_list");
        assert_eq!(config_error(Fig1, "rate_fraction = 1.5"), "rate_fraction");
        assert_eq!(config_error(Fig1, "sigma_h2 = -1.0"), "sigma_h2");
        assert_eq!(config_error(Fig2, "experiment = \"fig1\""), "experiment");
        assert_eq!(config_error(Fig2, "[plots]\nx = 1"), "plots");
        assert_eq!(config_error(Detect, "modes = [\"passive\", \"passive\"]"), "modes");
        assert_eq!(config_error(Detect, "modes = [\"sneaky\"]"), "modes");
        assert_eq!(config_error(Detect, "epsilon = 0"), "epsilon");
        assert_eq!(config_error(Detect, "key_bits = 0"), "key_bits");
        assert_eq!(config_error(Detect, "trials = 0"), "trials");
        assert_eq!(config_error(Detect, "this is = not toml"), "config");
    }

    #[test]
    fn zeta_beyond_psd_boundary_is_numerical() {
        let err = ExperimentConfig::resolve(ExperimentKind::Fig2, Some("zeta_list = [0.2, 0.9]"), &Table::new())
            .unwrap_err();
        match &err {
            Error::CovarianceNotPsd { zeta, boundary } => {
                assert_eq!(*zeta, 0.9);
                assert!((boundary - (2.0f64 / 3.0).sqrt()).abs() < 1e-6);
            }
            other => panic!("{other:?}"),
        }
        assert!(err.is_numerical());
    }

    #[test]
    fn detect_scalar_aliases() {
        let c = ExperimentConfig::resolve(
            ExperimentKind::Detect,
            None,
            &overrides(&[("gamma", Value::Float(0.05)), ("delta", Value::Float(0.5))]),
        )
        .unwrap();
        let ExperimentConfig::Detect(c) = c else { panic!() };
        assert_eq!((c.gamma_list, c.delta_list), (vec![0.05], vec![0.5]));
    }

    fn small(kind: ExperimentKind) -> ExperimentConfig {
        let file = match kind {
            ExperimentKind::Fig1 => "trials = 300\ntrials_r0 = 200\nn_list = [2, 3]",
            ExperimentKind::Fig2 => "trials = 300\ntrials_r0 = 200\nn = 3\nzeta_list = [0.0, 0.5]",
            ExperimentKind::Detect => "trials = 100\nn = 4\ngamma_list = [0.0, 0.1]\nmodes = [\"passive\", \"correlated-ml\"]\nzeta = 0.3",
        };
        ExperimentConfig::resolve(kind, Some(file), &Table::new()).unwrap()
    }

    #[test]
    fn echo_replays_byte_identically() {
        for kind in ExperimentKind::ALL {
            let cfg = small(kind);
            let first = run(&cfg, Execution::Parallel { workers: 3 }).unwrap().to_csv();
            let replayed = ExperimentConfig::resolve(kind, Some(&first), &Table::new()).unwrap();
            assert_eq!(replayed, cfg);
            let second = run(&replayed, Execution::Sequential).unwrap().to_csv();
            assert_eq!(first, second, "{kind}");
        }
    }

    #[test]
    fn output_shape() {
        let r = run(&small(ExperimentKind::Fig2), Execution::Sequential).unwrap();
        assert_eq!(r.rows.len(), 2);
        assert_eq!(r.column("zeta"), vec![0.0, 0.5]);
        assert!(r.column("alpha_mean")[0].abs() < 1e-12);
        assert!(r.column("alpha_mean")[1] > 0.0);
        // At zeta = 0 Eve learns nothing, alpha = 0 and the attack injects nothing.
        assert_eq!(r.column("sop_corr_ml")[0], r.column("sop_passive")[0]);
        assert_eq!(r.column("infeasible_count"), vec![0.0, 0.0]);
        let csv = r.to_csv();
        let mut lines = csv.lines();
        let meta = Metadata::from_output(&csv).unwrap();
        assert_eq!(meta.experiment, ExperimentKind::Fig2);
        assert_eq!(meta.config["n"], 3);
        assert!(meta.config.get("workers").is_none());
        assert!(lines.next().unwrap().starts_with("#{"));
        assert!(lines.next().unwrap().starts_with("zeta,sop_passive,ci_passive,sop_baseline"));
        for col in ["sop_passive", "sop_baseline", "sop_corr_ml"] {
            assert!(r.column(col).iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }

    #[test]
    fn float_cells_round_trip() {
        for x in [0.1, 1.0 / 3.0, 2.0f64.sqrt(), 1e-300, 0.0] {
            let text = Cell::Real(x).render();
            assert_eq!(text.parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn detect_rows_and_warnings() {
        let r = run(&small(ExperimentKind::Detect), Execution::Sequential).unwrap();
        assert_eq!(r.rows.len(), 4);
        assert_eq!(r.rows[0][0].as_text(), Some("passive"));
        // gamma = 0: estimates are identical, so keys always confirm.
        assert_eq!(r.column("keyconf_fail_rate")[0], 0.0);
        // 2 N^2 = 32 samples at gamma = 0.1 support about 55 bits, less than 64.
        assert_eq!(r.metadata.warnings.len(), 1);
        assert!(r.metadata.warnings[0].contains("gamma = 0.1"));
    }
}
