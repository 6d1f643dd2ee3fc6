//! Output files. Every artifact embeds the effective config (as a `# `
//! comment line in CSVs, as a `config` field in JSON), floats are printed
//! with enough digits to round-trip exactly, and writes go through a
//! temp-then-rename so readers never see partial files.

use crate::config::RunConfig;
use crate::CliError;
use dfl_core::RoundMetrics;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

/// 17 significant digits; parses back to the identical f64.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_default()
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn echo_line(config: &RunConfig) -> Result<String, CliError> {
    Ok(format!("# {}\n", serde_json::to_string(config)?))
}

/// Per-round, per-client training metrics for every (rule, seed) run.
pub fn render_metrics_csv(
    config: &RunConfig,
    rows: &[(String, u64, Vec<RoundMetrics>)],
) -> Result<String, CliError> {
    let mut out = echo_line(config)?;
    out.push_str(
        "rule,seed,round,client,loss,accuracy,global_accuracy,consensus_distance,tracking_residual,noise_diff_sum,diverged\n",
    );
    for (rule, seed, all) in rows {
        for m in all {
            for client in 0..m.per_client_loss.len() {
                writeln!(
                    out,
                    "{rule},{seed},{round},{client},{loss},{acc},{global},{consensus},{tracking},{noise},{diverged}",
                    round = m.round,
                    loss = fmt_float(m.per_client_loss[client]),
                    acc = fmt_float(m.per_client_accuracy[client]),
                    global = fmt_float(m.global_accuracy),
                    consensus = fmt_float(m.consensus_distance),
                    tracking = fmt_float(m.tracking_residual),
                    noise = fmt_opt(m.noise_diff_sum_norm),
                    diverged = m.diverged,
                )
                .expect("writing to a string");
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSummary {
    /// Mean final test accuracy of the averaged model over non-diverged
    /// seeds; absent if every seed diverged.
    pub final_accuracy_mean: Option<f64>,
    pub final_accuracy_std: Option<f64>,
    /// Baseline mean minus this rule's mean; positive means the rule costs
    /// accuracy. Absent when the unprotected baseline was not run.
    pub accuracy_loss_vs_baseline: Option<f64>,
    pub diverged_runs: usize,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryDoc {
    pub config: RunConfig,
    pub rules: BTreeMap<String, RuleSummary>,
}

/// Mean and sample standard deviation of the finite entries.
fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return (None, None);
    }
    let n = finite.len() as f64;
    let mean = finite.iter().sum::<f64>() / n;
    let std = if finite.len() > 1 {
        (finite.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (Some(mean), Some(std))
}

pub fn summarize(config: &RunConfig, rows: &[(String, u64, Vec<RoundMetrics>)]) -> SummaryDoc {
    let mut per_rule: BTreeMap<String, Vec<&Vec<RoundMetrics>>> = BTreeMap::new();
    for (rule, _, all) in rows {
        per_rule.entry(rule.clone()).or_default().push(all);
    }
    let final_accuracies = |runs: &[&Vec<RoundMetrics>]| -> Vec<f64> {
        runs.iter()
            .map(|all| all.last().map_or(f64::NAN, |m| m.global_accuracy))
            .collect()
    };
    let baseline_mean = per_rule
        .get("dsgt")
        .and_then(|runs| mean_std(&final_accuracies(runs)).0);

    let rules = per_rule
        .iter()
        .map(|(rule, runs)| {
            let accs = final_accuracies(runs);
            let (mean, std) = mean_std(&accs);
            let diverged_runs = runs
                .iter()
                .filter(|all| all.last().is_some_and(|m| m.diverged))
                .count();
            let loss = match (baseline_mean, mean) {
                (Some(base), Some(mean)) => Some(base - mean),
                _ => None,
            };
            (
                rule.clone(),
                RuleSummary {
                    final_accuracy_mean: mean,
                    final_accuracy_std: std,
                    accuracy_loss_vs_baseline: loss,
                    diverged_runs,
                    seeds: runs.len(),
                },
            )
        })
        .collect();
    SummaryDoc {
        config: config.clone(),
        rules,
    }
}

pub fn render_summary_json(summary: &SummaryDoc) -> Result<String, CliError> {
    Ok(format!("{}\n", serde_json::to_string_pretty(summary)?))
}

/// Budget table: one row per (round, client) with both rules' budgets.
pub struct BudgetRow {
    pub round: usize,
    pub client: usize,
    pub epsilon_lppa: f64,
    pub epsilon_dp: f64,
    pub delta_f: f64,
}

pub fn render_budgets_csv(config: &RunConfig, rows: &[BudgetRow]) -> Result<String, CliError> {
    let mut out = echo_line(config)?;
    out.push_str("round,client,epsilon_lppa,epsilon_dp,ratio,delta_f\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.round,
            r.client,
            fmt_float(r.epsilon_lppa),
            fmt_float(r.epsilon_dp),
            fmt_float(r.epsilon_dp / r.epsilon_lppa),
            fmt_float(r.delta_f),
        )
        .expect("writing to a string");
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSeedResult {
    pub seed: u64,
    pub mse: f64,
    pub grad_match_residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRuleResult {
    pub median_mse: f64,
    pub per_seed: Vec<AttackSeedResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackDoc {
    pub config: RunConfig,
    pub victim: usize,
    pub target_round: usize,
    pub batch_size: usize,
    pub results: BTreeMap<String, AttackRuleResult>,
}

pub fn render_attack_json(doc: &AttackDoc) -> Result<String, CliError> {
    Ok(format!("{}\n", serde_json::to_string_pretty(doc)?))
}

/// Long-format dump of true versus reconstructed feature values.
pub struct ReconstructionRow {
    pub rule: String,
    pub seed: u64,
    pub sample: usize,
    pub coordinate: usize,
    pub true_value: f64,
    pub reconstructed: f64,
}

pub fn render_reconstruction_csv(
    config: &RunConfig,
    rows: &[ReconstructionRow],
) -> Result<String, CliError> {
    let mut out = echo_line(config)?;
    out.push_str("rule,seed,sample,coordinate,true_value,reconstructed\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.rule,
            r.seed,
            r.sample,
            r.coordinate,
            fmt_float(r.true_value),
            fmt_float(r.reconstructed),
        )
        .expect("writing to a string");
    }
    Ok(out)
}

pub struct SweepRow {
    pub rule: String,
    pub beta: f64,
    pub seed: u64,
    pub final_accuracy: f64,
    pub attack_mse: Option<f64>,
    pub diverged: bool,
}

pub fn render_sweep_csv(config: &RunConfig, rows: &[SweepRow]) -> Result<String, CliError> {
    let mut out = echo_line(config)?;
    out.push_str("rule,beta,seed,final_accuracy,attack_mse,diverged\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.rule,
            fmt_float(r.beta),
            r.seed,
            fmt_float(r.final_accuracy),
            fmt_opt(r.attack_mse),
            r.diverged,
        )
        .expect("writing to a string");
    }
    Ok(out)
}
