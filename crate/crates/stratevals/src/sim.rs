//! Replicated Monte-Carlo experiments.
//!
//! Replicate `r` draws its block stream from `seed + r`, so results are
//! deterministic for a fixed config regardless of how many workers run the
//! replicates; rows are merged in replicate order. All methods within a
//! config share each replicate's stream, which makes method comparisons
//! paired.

use anyhow::{Context, Result};
use rayon::prelude::*;

use stratevals_core::confseq::{
    cs_max_two_sided, cs_mean_effect, cs_min_two_sided, cs_per_stratum, CsInterval, DeltaGrid,
    LevelSplit,
};
use stratevals_core::eprocess::{test_global_null, TestConfig};
use stratevals_core::ingest::{erase_strata, generate_stream, Block};
use stratevals_core::learners::CrossTalkMode;

use crate::config::{build_combiner, SimConfig, SimKind, TargetKind};

/// One row of the long-format output table.
#[derive(Debug, Clone)]
pub struct LongRow {
    pub method: String,
    pub replicate: u32,
    pub m: usize,
    pub log10_e: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub rejected: Option<bool>,
}

/// Aggregate rows; exactly recomputable from the long rows.
#[derive(Debug, Clone)]
pub enum Aggregates {
    /// `method,power`
    Power(Vec<(String, f64)>),
    /// `method,m,mean_width`
    MeanWidth(Vec<(String, usize, f64)>),
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub rows: Vec<LongRow>,
    pub aggregates: Aggregates,
}

/// Per-replicate, per-method traces of a test-kind simulation.
struct TestReplicate {
    log_e: Vec<f64>,
    rejected_at: Option<usize>,
}

/// Run a simulation config on `workers` threads.
pub fn run_simulation(config: &SimConfig, workers: usize) -> Result<SimOutput> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .context("failed to build worker pool")?;
    match config.kind {
        SimKind::Test => pool.install(|| run_test_kind(config)),
        SimKind::Confseq => pool.install(|| run_confseq_kind(config)),
    }
}

fn replicate_blocks(config: &SimConfig, replicate: u32) -> Vec<Block> {
    generate_stream(
        &config.theta(),
        config.block_design(),
        &config.blocks_per_stratum(),
        config.schedule.into(),
        config.seed.wrapping_add(u64::from(replicate)),
    )
}

fn run_test_kind(config: &SimConfig) -> Result<SimOutput> {
    let n_strata = config.n_strata();
    let horizon = config.horizon();
    let prior = config.beta_prior();

    let mut method_configs = Vec::new();
    for method in &config.methods {
        let strata_for_method = if method.unstratified { 1 } else { n_strata };
        let combiner = build_combiner(method, strata_for_method, Some(horizon))?;
        let test_config = TestConfig {
            n_strata: strata_for_method,
            combiner,
            crosstalk: method.crosstalk.into(),
            alpha: config.alpha,
            prior,
        };
        method_configs.push((method.name.clone(), method.unstratified, test_config));
    }

    let per_replicate: Vec<Vec<TestReplicate>> = (0..config.replications)
        .into_par_iter()
        .map(|r| {
            let blocks = replicate_blocks(config, r);
            let erased = erase_strata(&blocks);
            method_configs
                .iter()
                .map(|(_, unstratified, test_config)| {
                    let stream = if *unstratified { &erased } else { &blocks };
                    let trace = test_global_null(stream, test_config)
                        .expect("histories are aligned by construction");
                    TestReplicate { log_e: trace.log_e, rejected_at: trace.rejected_at }
                })
                .collect()
        })
        .collect();

    let mut rows = Vec::new();
    let mut power = Vec::new();
    for (i, (name, _, _)) in method_configs.iter().enumerate() {
        let mut rejections = 0u32;
        for (r, replicate) in per_replicate.iter().enumerate() {
            let trace = &replicate[i];
            if trace.rejected_at.is_some() {
                rejections += 1;
            }
            for m in 1..=horizon {
                rows.push(LongRow {
                    method: name.clone(),
                    replicate: r as u32,
                    m,
                    log10_e: Some(trace.log_e[m] * std::f64::consts::LOG10_E),
                    lower: None,
                    upper: None,
                    rejected: Some(trace.rejected_at.map_or(false, |at| at <= m)),
                });
            }
        }
        let denom = config.replications.max(1) as f64;
        power.push((name.clone(), f64::from(rejections) / denom));
    }
    Ok(SimOutput { rows, aggregates: Aggregates::Power(power) })
}

fn run_confseq_kind(config: &SimConfig) -> Result<SimOutput> {
    let n_strata = config.n_strata();
    let horizon = config.horizon();
    let prior = config.beta_prior();
    let grid = DeltaGrid::with_step(config.grid_step);
    let section = config.confseq.as_ref().expect("validated");
    let split = if section.split_alpha {
        LevelSplit::HalfAlphaEachSide
    } else {
        LevelSplit::FullAlphaEachSide
    };
    let weights = config.stratum_weights();

    // Resolve combiners up front so config errors surface before the run.
    let mut combiners = Vec::new();
    for method in &config.methods {
        combiners.push(build_combiner(method, n_strata, Some(horizon))?);
    }

    // Labels, in output order: per-stratum targets expand per stratum.
    let labels: Vec<String> = config
        .methods
        .iter()
        .flat_map(|method| match section.target {
            TargetKind::PerStratum => (1..=n_strata)
                .map(|k| format!("{}@stratum-{k}", method.name))
                .collect::<Vec<_>>(),
            _ => vec![method.name.clone()],
        })
        .collect();

    let per_replicate: Vec<Vec<Vec<CsInterval>>> = (0..config.replications)
        .into_par_iter()
        .map(|r| {
            let blocks = replicate_blocks(config, r);
            let mut series_per_label = Vec::with_capacity(labels.len());
            for (method, combiner) in config.methods.iter().zip(&combiners) {
                let mode: CrossTalkMode = method.crosstalk.into();
                match section.target {
                    TargetKind::PerStratum => {
                        for k in 0..n_strata {
                            series_per_label.push(cs_per_stratum(
                                &blocks,
                                n_strata,
                                k,
                                mode,
                                prior,
                                config.alpha,
                                &grid,
                            ));
                        }
                    }
                    TargetKind::Min => series_per_label.push(cs_min_two_sided(
                        &blocks,
                        n_strata,
                        combiner,
                        prior,
                        config.alpha,
                        &grid,
                        split,
                    )),
                    TargetKind::Max => series_per_label.push(cs_max_two_sided(
                        &blocks,
                        n_strata,
                        combiner,
                        prior,
                        config.alpha,
                        &grid,
                        split,
                    )),
                    TargetKind::Mean => series_per_label.push(cs_mean_effect(
                        &blocks,
                        n_strata,
                        weights.as_ref().expect("validated"),
                        prior,
                        config.alpha,
                        &grid,
                    )),
                }
            }
            series_per_label
        })
        .collect();

    let mut rows = Vec::new();
    let mut widths = Vec::new();
    for (i, label) in labels.iter().enumerate() {
        let mut width_sums = vec![0.0f64; horizon + 1];
        for (r, replicate) in per_replicate.iter().enumerate() {
            let series = &replicate[i];
            for interval in series {
                rows.push(LongRow {
                    method: label.clone(),
                    replicate: r as u32,
                    m: interval.time,
                    log10_e: None,
                    lower: (!interval.empty).then_some(interval.lower),
                    upper: (!interval.empty).then_some(interval.upper),
                    rejected: None,
                });
                width_sums[interval.time] += interval.width();
            }
        }
        let denom = config.replications.max(1) as f64;
        for (m, sum) in width_sums.iter().enumerate() {
            widths.push((label.clone(), m, sum / denom));
        }
    }
    Ok(SimOutput { rows, aggregates: Aggregates::MeanWidth(widths) })
}
