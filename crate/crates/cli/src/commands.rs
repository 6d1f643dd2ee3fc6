//! Subcommand implementations. Each command is a plain function over a
//! validated config so the binary stays a thin argument-parsing shell and
//! the behavior is testable in-process.
//!
//! Data handling is arranged so aggregation rules always see identical
//! inputs: the graph and mixing weights depend only on the config, and the
//! split plus shards depend only on the config and the seed.

use crate::artifacts::{
    self, AttackDoc, AttackRuleResult, AttackSeedResult, BudgetRow, ReconstructionRow, SummaryDoc,
    SweepRow,
};
use crate::config::{DatasetConfig, RuleName, RunConfig, SensitivityConfig};
use crate::CliError;
use dfl_core::{
    budget_dp, budget_lppa, dlg_attack, empirical_sensitivity, generate_synthetic, load_csv, mse,
    partition, sinkhorn_knopp, split_train_test, AttackConfig, Dataset, DenseVector, Digraph,
    PartitionSpec, PrivacyParams, RoundMetrics, SimulationConfig, SimulationState, WeightMatrix,
    SINKHORN_MAX_ITER, SINKHORN_TOL,
};
use std::collections::BTreeMap;
use std::path::Path;

/// Graph and balanced mixing weights; independent of seed and rule.
fn build_network(config: &RunConfig) -> Result<(Digraph, WeightMatrix), CliError> {
    let graph = config.build_graph()?;
    let weights = sinkhorn_knopp(&graph, SINKHORN_TOL, SINKHORN_MAX_ITER)?;
    Ok((graph, weights))
}

fn build_dataset(config: &RunConfig, seed: u64) -> Result<Dataset, CliError> {
    match &config.dataset {
        DatasetConfig::Synthetic {
            n_samples,
            dim,
            n_classes,
            separation,
        } => Ok(generate_synthetic(
            *n_samples,
            *dim,
            *n_classes,
            *separation,
            seed,
        )?),
        DatasetConfig::Csv { path, label_column } => Ok(load_csv(path, label_column)?),
    }
}

struct SeedData {
    shards: Vec<Dataset>,
    test: Dataset,
}

fn seed_data(config: &RunConfig, n_clients: usize, seed: u64) -> Result<SeedData, CliError> {
    let full = build_dataset(config, seed)?;
    let (train, test) = split_train_test(&full, config.test_fraction, seed)?;
    let spec = PartitionSpec {
        kind: config.partition_kind(),
        n_clients,
    };
    let shards = partition(&train, &spec, seed)?;
    Ok(SeedData { shards, test })
}

fn simulation(
    config: &RunConfig,
    rule: RuleName,
    rounds: usize,
    graph: &Digraph,
    weights: &WeightMatrix,
    data: &SeedData,
    seed: u64,
) -> Result<SimulationState, CliError> {
    let model = config.model_spec(data.test.dim(), data.test.n_classes)?;
    let sim_config = SimulationConfig {
        model,
        rule: rule.to_rule(config.beta),
        lambda: config.lambda,
        rounds,
        local_epochs: config.local_epochs,
        batch_size: config.batch_size,
        seed,
    };
    Ok(SimulationState::new(
        sim_config,
        graph.clone(),
        weights.clone(),
        data.shards.clone(),
        Some(data.test.clone()),
    )?)
}

pub struct RunOutcome {
    pub summary: SummaryDoc,
    pub diverged_runs: usize,
}

/// Trains under every configured rule and seed; writes `metrics.csv` and
/// `summary.json`.
pub fn cmd_run(config: &RunConfig, out_dir: &Path) -> Result<RunOutcome, CliError> {
    config.validate()?;
    let (graph, weights) = build_network(config)?;
    let mut rows: Vec<(String, u64, Vec<RoundMetrics>)> = Vec::new();
    let mut diverged_runs = 0;
    for &seed in &config.seeds {
        let data = seed_data(config, graph.n(), seed)?;
        for &rule in &config.rules {
            let mut sim = simulation(config, rule, config.rounds, &graph, &weights, &data, seed)?;
            let all = sim.run()?;
            if sim.diverged() {
                diverged_runs += 1;
            }
            rows.push((rule.as_str().to_string(), seed, all));
        }
    }
    let metrics = artifacts::render_metrics_csv(config, &rows)?;
    artifacts::write_atomic(&out_dir.join("metrics.csv"), metrics.as_bytes())?;
    let summary = artifacts::summarize(config, &rows);
    let summary_json = artifacts::render_summary_json(&summary)?;
    artifacts::write_atomic(&out_dir.join("summary.json"), summary_json.as_bytes())?;
    Ok(RunOutcome {
        summary,
        diverged_runs,
    })
}

/// Per-client query sensitivities: the configured constant, or each
/// client's observed leave-one-out gradient sensitivity at its initial
/// model under the first seed.
fn sensitivities(
    config: &RunConfig,
    graph: &Digraph,
    weights: &WeightMatrix,
) -> Result<DenseVector, CliError> {
    let n = graph.n();
    match config.sensitivity {
        SensitivityConfig::Fixed { value } => Ok(DenseVector::from_fn(n, |_| value)),
        SensitivityConfig::Empirical => {
            let seed = config.seeds[0];
            let data = seed_data(config, n, seed)?;
            let model = config.model_spec(data.test.dim(), data.test.n_classes)?;
            let sim = simulation(config, RuleName::Dsgt, 0, graph, weights, &data, seed)?;
            let per_client = sim
                .clients()
                .iter()
                .map(|c| empirical_sensitivity(&model, &c.theta, &c.shard))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(DenseVector::new(per_client))
        }
    }
}

/// Tabulates per-round budgets for both noise schemes; writes
/// `budgets.csv`.
pub fn cmd_budget(
    config: &RunConfig,
    out_dir: &Path,
    t_max: usize,
) -> Result<Vec<BudgetRow>, CliError> {
    config.validate()?;
    let (graph, weights) = build_network(config)?;
    let n = graph.n();
    let delta_f = sensitivities(config, &graph, &weights)?;
    let beta = DenseVector::from_fn(n, |_| config.beta);
    let params = PrivacyParams::new(beta, delta_f)?;
    let mut rows = Vec::with_capacity((t_max + 1) * n);
    for round in 0..=t_max {
        let lppa = budget_lppa(&params, &weights, round)?;
        let dp = budget_dp(&params, &weights, round)?;
        for client in 0..n {
            rows.push(BudgetRow {
                round,
                client,
                epsilon_lppa: lppa.per_client[client],
                epsilon_dp: dp.per_client[client],
                delta_f: params.delta_f()[client],
            });
        }
    }
    let csv = artifacts::render_budgets_csv(config, &rows)?;
    artifacts::write_atomic(&out_dir.join("budgets.csv"), csv.as_bytes())?;
    Ok(rows)
}

/// Runs each rule to the target round, intercepts the victim's tracker
/// message, and tries to reconstruct the batch behind it; writes
/// `attack.json` and `reconstruction.csv`.
pub fn cmd_attack(
    config: &RunConfig,
    out_dir: &Path,
    victim: usize,
    target_round: usize,
) -> Result<AttackDoc, CliError> {
    config.validate()?;
    let (graph, weights) = build_network(config)?;
    if victim >= graph.n() {
        return Err(CliError::Config(format!(
            "victim {victim} out of range for {} clients",
            graph.n()
        )));
    }
    let attack_cfg = AttackConfig::default();
    let mut results = BTreeMap::new();
    let mut recon_rows = Vec::new();
    let mut batch_size = 0;
    for &rule in &config.rules {
        let mut per_seed = Vec::new();
        for &seed in &config.seeds {
            let data = seed_data(config, graph.n(), seed)?;
            let mut sim = simulation(config, rule, target_round, &graph, &weights, &data, seed)?;
            sim.run()?;
            let client = &sim.clients()[victim];
            let truth = &client.round_batch.features;
            batch_size = truth.n_rows();
            let model = config.model_spec(data.test.dim(), data.test.n_classes)?;
            let result = dlg_attack(
                &model,
                &client.theta,
                &client.gamma,
                batch_size,
                &attack_cfg,
                seed,
            )?;
            per_seed.push(AttackSeedResult {
                seed,
                mse: mse(&result.x_hat, truth)?,
                grad_match_residual: result.grad_match_residual,
                iterations: result.iterations_used,
            });
            for sample in 0..truth.n_rows() {
                for coordinate in 0..truth.n_cols() {
                    recon_rows.push(ReconstructionRow {
                        rule: rule.as_str().to_string(),
                        seed,
                        sample,
                        coordinate,
                        true_value: truth[(sample, coordinate)],
                        reconstructed: result.x_hat[(sample, coordinate)],
                    });
                }
            }
        }
        results.insert(
            rule.as_str().to_string(),
            AttackRuleResult {
                median_mse: median(per_seed.iter().map(|r| r.mse)),
                per_seed,
            },
        );
    }
    let doc = AttackDoc {
        config: config.clone(),
        victim,
        target_round,
        batch_size,
        results,
    };
    artifacts::write_atomic(
        &out_dir.join("attack.json"),
        artifacts::render_attack_json(&doc)?.as_bytes(),
    )?;
    let recon = artifacts::render_reconstruction_csv(config, &recon_rows)?;
    artifacts::write_atomic(&out_dir.join("reconstruction.csv"), recon.as_bytes())?;
    Ok(doc)
}

fn median(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    match v.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => v[n / 2],
        n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

/// Cheaper attack settings for the sweep, where only the relative ordering
/// across noise scales matters.
fn sweep_attack_config() -> AttackConfig {
    AttackConfig {
        max_iters: 500,
        restarts: 1,
        ..AttackConfig::default()
    }
}

/// Scans noise scales: final accuracy per (rule, beta, seed), optionally
/// with an attack on client 0's first tracker message; writes `sweep.csv`.
pub fn cmd_sweep(
    config: &RunConfig,
    out_dir: &Path,
    betas: &[f64],
    with_attack: bool,
) -> Result<Vec<SweepRow>, CliError> {
    config.validate()?;
    if betas.is_empty() {
        return Err(CliError::Config("sweep needs at least one beta".into()));
    }
    for &beta in betas {
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(CliError::Config(format!(
                "sweep beta must be positive, got {beta}"
            )));
        }
    }
    let (graph, weights) = build_network(config)?;
    let attack_cfg = sweep_attack_config();
    let mut rows = Vec::new();
    for &seed in &config.seeds {
        let data = seed_data(config, graph.n(), seed)?;
        let model = config.model_spec(data.test.dim(), data.test.n_classes)?;
        for &beta in betas {
            let scan = RunConfig {
                beta,
                ..config.clone()
            };
            for &rule in &config.rules {
                let mut sim =
                    simulation(&scan, rule, config.rounds, &graph, &weights, &data, seed)?;
                let attack_mse = if with_attack {
                    let client = &sim.clients()[0];
                    let result = dlg_attack(
                        &model,
                        &client.theta,
                        &client.gamma,
                        client.round_batch.labels.len(),
                        &attack_cfg,
                        seed,
                    )?;
                    Some(mse(&result.x_hat, &client.round_batch.features)?)
                } else {
                    None
                };
                let all = sim.run()?;
                let last = all.last().expect("run returns at least round zero");
                rows.push(SweepRow {
                    rule: rule.as_str().to_string(),
                    beta,
                    seed,
                    final_accuracy: last.global_accuracy,
                    attack_mse,
                    diverged: last.diverged,
                });
            }
        }
    }
    let csv = artifacts::render_sweep_csv(config, &rows)?;
    artifacts::write_atomic(&out_dir.join("sweep.csv"), csv.as_bytes())?;
    Ok(rows)
}
