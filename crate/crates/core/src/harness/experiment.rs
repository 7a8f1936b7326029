//! Monte Carlo experiments: welfare gain of cooperation and frequency of
//! individual-rationality violations per payoff mechanism.
//!
//! Each run draws a random ordering of the households from its own
//! sub-seed; a coalition of size `s` is the first `s` households of that
//! ordering, so the sizes of one run form a nested chain. Runs execute in
//! parallel and are reduced in run order, which keeps reports
//! independent of the thread count.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{Scenario, ScenarioConfig};
use crate::alloc::{self, AllocationContext, Mechanism};
use crate::error::{Error, Result};
use crate::game::{build_game, Scheme, GAME_TOL, MAX_LP_PLAYERS};
use crate::model::{Coalition, Prosumer, ScheduleResult, TariffHour};
use crate::solver;

/// Standalone sums below this are left out of gain ratios.
pub const MIN_STANDALONE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ReportFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExperimentOptions {
    /// Worker threads; `None` uses rayon's default.
    pub threads: Option<usize>,
}

impl ExperimentOptions {
    /// Reads `COOPGRID_THREADS`.
    pub fn from_env() -> Result<Self> {
        match std::env::var("COOPGRID_THREADS") {
            Ok(v) => match v.trim().parse::<usize>() {
                Ok(n) if n > 0 => Ok(ExperimentOptions { threads: Some(n) }),
                _ => Err(Error::invalid(format!("COOPGRID_THREADS={v:?} is not a positive integer"))),
            },
            Err(_) => Ok(ExperimentOptions::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub experiment: String,
    pub seed: u64,
    pub runs: usize,
    pub sizes: Vec<usize>,
    pub hours: usize,
    pub households: usize,
    /// SHA-256 of the effective config as JSON.
    pub config_digest: String,
}

fn metadata(experiment: &str, config: &ScenarioConfig, scenario: &Scenario, sizes: &[usize]) -> Result<Metadata> {
    let json = serde_json::to_string(config)?;
    let digest = Sha256::digest(json.as_bytes());
    Ok(Metadata {
        experiment: experiment.to_string(),
        seed: config.seed,
        runs: config.runs,
        sizes: sizes.to_vec(),
        hours: scenario.hours,
        households: scenario.households.len(),
        config_digest: digest.iter().map(|b| format!("{b:02x}")).collect(),
    })
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed of one Monte Carlo run.
pub fn run_seed(seed: u64, run: usize) -> u64 {
    splitmix64(splitmix64(seed) ^ run as u64)
}

/// Household ordering used by one run.
pub fn run_order(households: usize, seed: u64, run: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(run_seed(seed, run));
    let mut order: Vec<usize> = (0..households).collect();
    order.shuffle(&mut rng);
    order
}

fn prepare(config: &ScenarioConfig, scenario: &Scenario) -> Result<Vec<usize>> {
    if scenario.households.is_empty() {
        return Err(Error::invalid("scenario has no households"));
    }
    if scenario.hours == 0 {
        return Err(Error::invalid("scenario has no hours"));
    }
    if config.runs == 0 {
        return Err(Error::invalid("runs must be at least 1"));
    }
    config.sizes(scenario.households.len())
}

/// Runs `f` for every run index on a pool of the requested size and
/// returns the results in run order; the first failing run wins.
fn run_all<T: Send>(runs: usize, options: ExperimentOptions, f: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = options.threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    let results: Vec<Result<T>> = pool.install(|| (0..runs).into_par_iter().map(&f).collect());
    results.into_iter().collect()
}

fn in_run(size: usize, run: usize, hour: usize) -> impl FnOnce(Error) -> Error {
    move |e| Error::InRun {
        size,
        run,
        hour,
        source: Box::new(e),
    }
}

/// Standalone values of each household, indexed like `order`.
fn standalone_values(community: &[Prosumer], tariff: TariffHour) -> Result<Vec<f64>> {
    community
        .iter()
        .enumerate()
        .map(|(i, p)| Ok(solver::best_response(p, i, tariff)?.schedule.welfare))
        .collect()
}

fn mean_std(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (Some(mean), Some(var.sqrt()))
}

fn gain_pct(value: f64, standalone: f64) -> Option<f64> {
    (standalone.abs() >= MIN_STANDALONE).then(|| (value - standalone) / standalone * 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainRow {
    pub size: usize,
    /// Hours that entered the gain ratios.
    pub samples: usize,
    /// Hours left out because standalone welfare was zero.
    pub excluded_hours: usize,
    /// Mean and spread of the daily mean gain (%) over runs and days.
    pub centralized_mean: Option<f64>,
    pub centralized_std: Option<f64>,
    pub decentralized_mean: Option<f64>,
    pub decentralized_std: Option<f64>,
    /// Mean of the daily centralized minus decentralized gain.
    pub difference_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainSample {
    pub size: usize,
    pub run: usize,
    pub hour: usize,
    pub members: Vec<String>,
    pub standalone: Vec<f64>,
    pub centralized: f64,
    pub decentralized: f64,
    pub centralized_gain: Option<f64>,
    pub decentralized_gain: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WelfareGainReport {
    pub metadata: Metadata,
    pub rows: Vec<GainRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub samples: Vec<GainSample>,
}

/// Welfare gain of both schedulers over standalone operation, per
/// coalition size.
pub fn experiment_welfare_gain(
    config: &ScenarioConfig,
    scenario: &Scenario,
    options: ExperimentOptions,
) -> Result<WelfareGainReport> {
    let sizes = prepare(config, scenario)?;
    let largest = *sizes.iter().max().expect("sizes are non-empty");
    let per_run = run_all(config.runs, options, |run| {
        let order = run_order(scenario.households.len(), config.seed, run);
        let mut out: Vec<Vec<GainSample>> = vec![Vec::with_capacity(scenario.hours); sizes.len()];
        for hour in 0..scenario.hours {
            let tariff = scenario.tariff_at(hour);
            let everyone = scenario.community(&order[..largest], hour);
            let standalone = standalone_values(&everyone, tariff).map_err(in_run(1, run, hour))?;
            for (k, &size) in sizes.iter().enumerate() {
                let community = &everyone[..size];
                let grand = Coalition::grand(size);
                let central = solver::centralized_schedule(community, grand, tariff)
                    .map_err(in_run(size, run, hour))?
                    .schedule
                    .welfare;
                let decentral = solver::decentralized_schedule(community, grand, tariff)
                    .map_err(in_run(size, run, hour))?
                    .welfare;
                let total: f64 = standalone[..size].iter().sum();
                let (members, alone) = if config.record_samples {
                    (scenario.ids(&order[..size]), standalone[..size].to_vec())
                } else {
                    (Vec::new(), Vec::new())
                };
                out[k].push(GainSample {
                    size,
                    run,
                    hour,
                    members,
                    standalone: alone,
                    centralized: central,
                    decentralized: decentral,
                    centralized_gain: gain_pct(central, total),
                    decentralized_gain: gain_pct(decentral, total),
                });
            }
        }
        Ok(out)
    })?;

    let mut rows = Vec::with_capacity(sizes.len());
    for (k, &size) in sizes.iter().enumerate() {
        let mut central_days = Vec::new();
        let mut decentral_days = Vec::new();
        let mut differences = Vec::new();
        let mut samples = 0;
        let mut excluded = 0;
        for run in &per_run {
            for day in run[k].chunks(24) {
                let kept: Vec<(f64, f64)> = day
                    .iter()
                    .filter_map(|s| Some((s.centralized_gain?, s.decentralized_gain?)))
                    .collect();
                samples += kept.len();
                excluded += day.len() - kept.len();
                if kept.is_empty() {
                    continue;
                }
                let n = kept.len() as f64;
                let c = kept.iter().map(|g| g.0).sum::<f64>() / n;
                let d = kept.iter().map(|g| g.1).sum::<f64>() / n;
                central_days.push(c);
                decentral_days.push(d);
                differences.push(c - d);
            }
        }
        let (centralized_mean, centralized_std) = mean_std(&central_days);
        let (decentralized_mean, decentralized_std) = mean_std(&decentral_days);
        rows.push(GainRow {
            size,
            samples,
            excluded_hours: excluded,
            centralized_mean,
            centralized_std,
            decentralized_mean,
            decentralized_std,
            difference_mean: mean_std(&differences).0,
        });
    }
    let samples = if config.record_samples {
        per_run.into_iter().flat_map(|run| run.into_iter().flatten()).collect()
    } else {
        Vec::new()
    };
    Ok(WelfareGainReport {
        metadata: metadata("welfare-gain", config, scenario, &sizes)?,
        rows,
        samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrRow {
    pub mechanism: Mechanism,
    pub scheme: Scheme,
    pub size: usize,
    pub violations: u64,
    /// (hour, member) pairs examined.
    pub pairs: u64,
    pub percent: f64,
}

/// Daily gain (%) of one member's payoff over its standalone value,
/// from run 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerGain {
    pub size: usize,
    /// Position in the coalition, from 1.
    pub player: usize,
    pub prosumer_id: String,
    pub mechanism: Mechanism,
    pub scheme: Scheme,
    pub day: usize,
    pub gain_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrReport {
    pub metadata: Metadata,
    pub rows: Vec<IrRow>,
    pub player_gains: Vec<PlayerGain>,
}

/// Payoffs of every requested mechanism for one coalition and hour,
/// keyed by (mechanism index, scheme index).
fn hour_payoffs(
    community: &[Prosumer],
    standalone: &[f64],
    mechanisms: &[Mechanism],
    config: &ScenarioConfig,
    tariff: TariffHour,
    hour: usize,
) -> Result<Vec<[Vec<f64>; 2]>> {
    let size = community.len();
    let grand = Coalition::grand(size);
    let needs_shapley = mechanisms.contains(&Mechanism::Shapley);
    let mut per_scheme: Vec<Vec<Vec<f64>>> = Vec::with_capacity(2);
    let dnem = if mechanisms.contains(&Mechanism::Dnem) {
        Some(alloc::dnem_allocation(community, grand, tariff, hour)?.allocation.payoffs)
    } else {
        None
    };
    for scheme in Scheme::ALL {
        let game;
        let schedule: ScheduleResult;
        let ctx = if needs_shapley {
            game = build_game(community, scheme, tariff, hour)?;
            AllocationContext::new(community, &game)
        } else {
            schedule = match scheme {
                Scheme::Centralized => solver::centralized_schedule(community, grand, tariff)?.schedule,
                Scheme::Decentralized => solver::decentralized_schedule(community, grand, tariff)?,
            };
            AllocationContext::from_schedule(community, scheme, hour, tariff, &schedule, standalone.to_vec(), &[])
        };
        let mut rows = Vec::with_capacity(mechanisms.len());
        for &m in mechanisms {
            rows.push(match m {
                Mechanism::EqualDivision => alloc::equal_division(&ctx).payoffs,
                Mechanism::Egalitarian => alloc::egalitarian(&ctx).payoffs,
                Mechanism::Proportional => alloc::proportional(&ctx, config.proportional_rule).payoffs,
                Mechanism::NetConsumption => alloc::net_consumption_rule(&ctx).payoffs,
                Mechanism::Shapley => alloc::shapley(&ctx)?.payoffs,
                Mechanism::Dnem => dnem.clone().expect("computed above"),
            });
        }
        per_scheme.push(rows);
    }
    let decentral = per_scheme.pop().expect("two schemes");
    let central = per_scheme.pop().expect("two schemes");
    Ok(central.into_iter().zip(decentral).map(|(c, d)| [c, d]).collect())
}

fn dedup_mechanisms(list: &[Mechanism]) -> Vec<Mechanism> {
    let mut out = Vec::new();
    for &m in list {
        if !out.contains(&m) {
            out.push(m);
        }
    }
    out
}

/// How often each mechanism pays a member less than its standalone
/// value, per scheme and coalition size.
pub fn experiment_ir_violation(
    config: &ScenarioConfig,
    scenario: &Scenario,
    options: ExperimentOptions,
) -> Result<IrReport> {
    let sizes = prepare(config, scenario)?;
    let mechanisms = dedup_mechanisms(&config.mechanisms);
    if mechanisms.is_empty() {
        return Err(Error::invalid("no mechanisms selected"));
    }
    let largest = *sizes.iter().max().expect("sizes are non-empty");
    if mechanisms.contains(&Mechanism::Shapley) && largest > MAX_LP_PLAYERS {
        return Err(Error::SizeLimit {
            what: "Shapley value",
            size: largest,
            limit: MAX_LP_PLAYERS,
        });
    }
    let days = scenario.hours.div_ceil(24);

    // per run: violations[size][mechanism][scheme], and for run 0 the
    // daily (payoff, standalone) sums per size, mechanism, scheme, player, day
    type Daily = Vec<Vec<[Vec<Vec<(f64, f64)>>; 2]>>;
    let per_run = run_all(config.runs, options, |run| {
        let order = run_order(scenario.households.len(), config.seed, run);
        let mut counts = vec![vec![[0u64; 2]; mechanisms.len()]; sizes.len()];
        let mut daily: Daily = if run == 0 {
            sizes
                .iter()
                .map(|&s| {
                    (0..mechanisms.len())
                        .map(|_| [vec![vec![(0.0, 0.0); days]; s], vec![vec![(0.0, 0.0); days]; s]])
                        .collect()
                })
                .collect()
        } else {
            Vec::new()
        };
        for hour in 0..scenario.hours {
            let tariff = scenario.tariff_at(hour);
            let everyone = scenario.community(&order[..largest], hour);
            let standalone = standalone_values(&everyone, tariff).map_err(in_run(1, run, hour))?;
            for (k, &size) in sizes.iter().enumerate() {
                let payoffs = hour_payoffs(
                    &everyone[..size],
                    &standalone[..size],
                    &mechanisms,
                    config,
                    tariff,
                    hour,
                )
                .map_err(in_run(size, run, hour))?;
                for (m, schemes) in payoffs.iter().enumerate() {
                    for (s, psi) in schemes.iter().enumerate() {
                        for (i, &p) in psi.iter().enumerate() {
                            if p < standalone[i] - GAME_TOL {
                                counts[k][m][s] += 1;
                            }
                            if run == 0 {
                                let cell = &mut daily[k][m][s][i][hour / 24];
                                cell.0 += p;
                                cell.1 += standalone[i];
                            }
                        }
                    }
                }
            }
        }
        Ok((counts, daily))
    })?;

    let mut rows = Vec::new();
    for (m, &mechanism) in mechanisms.iter().enumerate() {
        for (s, scheme) in Scheme::ALL.into_iter().enumerate() {
            for (k, &size) in sizes.iter().enumerate() {
                let violations: u64 = per_run.iter().map(|(c, _)| c[k][m][s]).sum();
                let pairs = (config.runs * scenario.hours * size) as u64;
                rows.push(IrRow {
                    mechanism,
                    scheme,
                    size,
                    violations,
                    pairs,
                    percent: violations as f64 / pairs as f64 * 100.0,
                });
            }
        }
    }

    let first = &per_run[0].1;
    let order = run_order(scenario.households.len(), config.seed, 0);
    let mut player_gains = Vec::new();
    for (k, &size) in sizes.iter().enumerate() {
        for (m, &mechanism) in mechanisms.iter().enumerate() {
            for (s, scheme) in Scheme::ALL.into_iter().enumerate() {
                for i in 0..size {
                    for (day, &(paid, alone)) in first[k][m][s][i].iter().enumerate() {
                        if let Some(gain) = gain_pct(paid, alone) {
                            player_gains.push(PlayerGain {
                                size,
                                player: i + 1,
                                prosumer_id: scenario.households[order[i]].id.clone(),
                                mechanism,
                                scheme,
                                day,
                                gain_pct: gain,
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(IrReport {
        metadata: metadata("ir-violation", config, scenario, &sizes)?,
        rows,
        player_gains,
    })
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Flat form of a gain sample for CSV output.
#[derive(Serialize)]
struct GainSampleRow {
    size: usize,
    run: usize,
    hour: usize,
    members: String,
    standalone_sum: f64,
    centralized: f64,
    decentralized: f64,
    centralized_gain: Option<f64>,
    decentralized_gain: Option<f64>,
}

/// Writes the report into `dir`: `welfare_gain.json`, or
/// `welfare_gain.csv` plus `metadata.json` (and `gain_samples.csv` when
/// samples were recorded). Returns the files written.
pub fn write_welfare_gain(report: &WelfareGainReport, dir: &Path, format: ReportFormat) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir)?;
    match format {
        ReportFormat::Json => {
            write_json(&dir.join("welfare_gain.json"), report)?;
            Ok(vec!["welfare_gain.json".into()])
        }
        ReportFormat::Csv => {
            write_csv(&dir.join("welfare_gain.csv"), &report.rows)?;
            write_json(&dir.join("metadata.json"), &report.metadata)?;
            let mut files = vec!["welfare_gain.csv".to_string(), "metadata.json".to_string()];
            if !report.samples.is_empty() {
                let rows: Vec<GainSampleRow> = report
                    .samples
                    .iter()
                    .map(|s| GainSampleRow {
                        size: s.size,
                        run: s.run,
                        hour: s.hour,
                        members: s.members.join(" "),
                        standalone_sum: s.standalone.iter().sum(),
                        centralized: s.centralized,
                        decentralized: s.decentralized,
                        centralized_gain: s.centralized_gain,
                        decentralized_gain: s.decentralized_gain,
                    })
                    .collect();
                write_csv(&dir.join("gain_samples.csv"), &rows)?;
                files.push("gain_samples.csv".into());
            }
            Ok(files)
        }
    }
}

/// Writes `ir_violation.json`, or `ir_violation.csv`,
/// `player_gains.csv` and `metadata.json`.
pub fn write_ir_violation(report: &IrReport, dir: &Path, format: ReportFormat) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir)?;
    match format {
        ReportFormat::Json => {
            write_json(&dir.join("ir_violation.json"), report)?;
            Ok(vec!["ir_violation.json".into()])
        }
        ReportFormat::Csv => {
            write_csv(&dir.join("ir_violation.csv"), &report.rows)?;
            write_csv(&dir.join("player_gains.csv"), &report.player_gains)?;
            write_json(&dir.join("metadata.json"), &report.metadata)?;
            Ok(vec![
                "ir_violation.csv".into(),
                "player_gains.csv".into(),
                "metadata.json".into(),
            ])
        }
    }
}
