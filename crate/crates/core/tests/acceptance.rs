//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (no libtest harness) so the lines are always
//! printed; the process fails if any criterion fails.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use coopgrid::alloc::{self, AllocationContext, Mechanism, ProportionalRule};
use coopgrid::game::{self, build_game, build_table, Scheme, GAME_TOL};
use coopgrid::harness::{
    experiment_ir_violation, experiment_welfare_gain, ExperimentOptions, ScenarioConfig, SynthParams,
};
use coopgrid::model::{payment, Coalition, Prosumer, TariffHour};
use coopgrid::solver::oracle::refined_grid_oracle;
use coopgrid::solver::{self, oracle::grid_oracle};
use rand::Rng;

use common::{random_community, random_tariff, rng, worked_pair};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

/// Best welfare the solvers report for the whole community.
fn solver_welfare(c: &[Prosumer], tariff: TariffHour) -> Result<f64, String> {
    let sol = solver::centralized_schedule(c, Coalition::grand(c.len()), tariff).map_err(|e| e.to_string())?;
    Ok(sol.schedule.welfare)
}

fn solver_matches_oracle() -> Outcome {
    let start = Instant::now();
    let mut r = rng(101);
    let mut worst: f64 = 0.0;
    for k in 0..50 {
        let players = r.random_range(1..=2);
        let c = random_community(&mut r, players, 2);
        let tariff = random_tariff(&mut r);
        let ours = solver_welfare(&c, tariff)?;
        let oracle = refined_grid_oracle(&c, tariff, 1e-4, 11).map_err(|e| e.to_string())?;
        let gap = ours - oracle.welfare;
        ensure!(gap.abs() <= 1e-3, "instance {k}: solver {ours} vs oracle {}", oracle.welfare);
        ensure!(gap >= -1e-9, "instance {k}: oracle beats solver by {}", -gap);
        worst = worst.max(gap.abs());
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 60.0, "took {secs:.1}s");
    Ok(format!("50 instances, worst gap {worst:.2e}, {secs:.1}s"))
}

fn worked_example() -> Outcome {
    let (c, t) = worked_pair();
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9;
    let dec = build_game(&c, Scheme::Decentralized, t, 0).map_err(|e| e.to_string())?;
    let cen = solver::centralized_schedule(&c, Coalition::grand(2), t).map_err(|e| e.to_string())?;
    let nu_dag = dec.table.value(Coalition::grand(2));
    ensure!(close(nu_dag, 1.84), "decentralized value {nu_dag}");
    ensure!(close(cen.schedule.welfare, 1.875), "centralized value {}", cen.schedule.welfare);
    ensure!(close(cen.mu, 0.25), "community price {}", cen.mu);
    let sh = alloc::shapley(&AllocationContext::new(&c, &dec)).map_err(|e| e.to_string())?;
    ensure!(close(sh.payoffs[0], 0.48) && close(sh.payoffs[1], 1.36), "Shapley {:?}", sh.payoffs);
    let dn = alloc::dnem_allocation(&c, Coalition::grand(2), t, 0).map_err(|e| e.to_string())?;
    let psi = &dn.allocation.payoffs;
    ensure!(close(psi[0], 0.5625) && close(psi[1], 1.3125), "D-NEM {psi:?}");
    // independent confirmation of both values by brute force
    let o = grid_oracle(&c, t, 5e-3).map_err(|e| e.to_string())?;
    ensure!((o.welfare - 1.875).abs() < 1e-4, "oracle {}", o.welfare);
    Ok("values, price and both allocations exact".into())
}

/// Twenty seeded instances for each size 3..=8.
fn instances() -> Vec<(Vec<Prosumer>, TariffHour)> {
    let mut out = Vec::new();
    for players in 3..=8 {
        for k in 0..20 {
            let mut r = rng(1000 * players as u64 + k);
            let c = random_community(&mut r, players, 2);
            out.push((c, random_tariff(&mut r)));
        }
    }
    out
}

fn superadditivity() -> Outcome {
    let mut pairs = 0usize;
    for (n, (c, t)) in instances().iter().enumerate() {
        for scheme in Scheme::ALL {
            let table = build_table(c, scheme, *t, 0).map_err(|e| e.to_string())?;
            let bad = game::check_superadditive(&table);
            ensure!(bad.is_empty(), "instance {n} {}: {:?}", scheme.name(), bad[0]);
            pairs += (3usize.pow(c.len() as u32) - 2usize.pow(c.len() as u32 + 1)).div_ceil(2);
        }
    }
    Ok(format!("120 instances x 2 schemes, {pairs} disjoint pairs, no violations"))
}

fn payment_subadditivity() -> Outcome {
    let (hi, lo) = (0.4, 0.2);
    let p = |z: f64| payment(z, hi, lo).unwrap();
    // both import, both export, mixed with net import, mixed with net export
    for (a, b) in [(1.0, 2.0), (-1.0, -2.0), (3.0, -1.0), (1.0, -3.0)] {
        ensure!(p(a + b) <= p(a) + p(b) + 1e-12, "case ({a}, {b})");
    }
    ensure!((p(1.0) + p(2.0) - p(3.0)).abs() < 1e-12, "same-sign imports must be additive");
    ensure!(p(3.0 - 1.0) < p(3.0) + p(-1.0), "mixed signs must save when rates differ");
    let mut r = rng(4);
    for _ in 0..100_000 {
        let retail = r.random_range(0.0..1.0);
        let export = retail * r.random_range(0.0..=1.0);
        let a = r.random_range(-10.0..10.0);
        let b = r.random_range(-10.0..10.0);
        let lhs = payment(a + b, retail, export).unwrap();
        let rhs = payment(a, retail, export).unwrap() + payment(b, retail, export).unwrap();
        ensure!(lhs <= rhs + 1e-12, "P({a}+{b}) = {lhs} > {rhs}");
    }
    Ok("4 sign cases and 100000 fuzzed pairs".into())
}

fn homogeneity() -> Outcome {
    let mut r = rng(5);
    for k in 0..20 {
        let players = r.random_range(1..=5);
        let c = random_community(&mut r, players, 2);
        let t = random_tariff(&mut r);
        let sol = solver::centralized_schedule(&c, Coalition::grand(players), t).map_err(|e| e.to_string())?;
        let s = &sol.schedule;
        for beta in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let utility: f64 = s
                .members
                .iter()
                .zip(&s.d)
                .map(|(&i, d)| {
                    let scaled: Vec<f64> = d.iter().map(|x| beta * x).collect();
                    c[i].utility(&scaled).unwrap()
                })
                .sum();
            let scaled_w = utility - t.payment(beta * s.aggregate_z());
            ensure!(
                scaled_w >= beta * s.welfare - 1e-8,
                "instance {k}, beta {beta}: {scaled_w} < {}",
                beta * s.welfare
            );
        }
    }
    Ok("20 optima x 5 scalings".into())
}

fn balancedness() -> Outcome {
    let mut worst = f64::NEG_INFINITY;
    for (n, (c, t)) in instances().iter().enumerate() {
        for scheme in Scheme::ALL {
            let table = build_table(c, scheme, *t, 0).map_err(|e| e.to_string())?;
            let cert = game::core_nonempty(&table).map_err(|e| e.to_string())?;
            ensure!(cert.nonempty, "instance {n} {}: epsilon {}", scheme.name(), cert.epsilon);
            let check = game::in_core(&cert.allocation, &table);
            ensure!(check.in_core, "instance {n} {}: certificate blocked", scheme.name());
            worst = worst.max(cert.epsilon);
        }
    }
    Ok(format!("120 instances x 2 schemes, largest least-core epsilon {worst:.2e}"))
}

fn all_instances() -> Vec<(Vec<Prosumer>, TariffHour)> {
    let mut v = instances();
    v.push(worked_pair());
    let mut r = rng(7);
    for _ in 0..20 {
        let players = r.random_range(1..=3);
        let c = random_community(&mut r, players, 3);
        v.push((c, random_tariff(&mut r)));
    }
    v
}

fn efficiency() -> Outcome {
    let mut checked = 0;
    for (n, (c, t)) in all_instances().iter().enumerate() {
        let central = solver_welfare(c, *t)?;
        for scheme in Scheme::ALL {
            let g = build_game(c, scheme, *t, 0).map_err(|e| e.to_string())?;
            let value = g.table.value(g.table.grand());
            for m in Mechanism::ALL {
                let a = alloc::allocate(m, c, &g, ProportionalRule::StandaloneSum).map_err(|e| e.to_string())?;
                // D-NEM always realizes the centralized optimum
                let target = if m == Mechanism::Dnem { central } else { value };
                ensure!(
                    (a.total() - target).abs() <= 1e-8,
                    "instance {n} {} {}: sum {} vs {target}",
                    scheme.name(),
                    m.name(),
                    a.total()
                );
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} allocations budget balanced"))
}

fn dnem_optimal_and_rational() -> Outcome {
    let mut members = 0;
    for (n, (c, t)) in all_instances().iter().enumerate() {
        let grand = Coalition::grand(c.len());
        let out = alloc::dnem_allocation(c, grand, *t, 0).map_err(|e| format!("instance {n}: {e}"))?;
        let central = solver::centralized_schedule(c, grand, *t).map_err(|e| e.to_string())?;
        let gap = (out.z.iter().sum::<f64>() - central.schedule.aggregate_z()).abs();
        ensure!(gap <= 1e-6, "instance {n}: aggregate gap {gap}");
        for (i, p) in c.iter().enumerate() {
            let alone = solver::best_response(p, i, *t).map_err(|e| e.to_string())?.schedule.welfare;
            ensure!(
                out.allocation.payoffs[i] >= alone - GAME_TOL,
                "instance {n}, member {i}: {} < {alone}",
                out.allocation.payoffs[i]
            );
            members += 1;
        }
    }
    Ok(format!("{members} members, no IR violations"))
}

fn violation_table() -> Outcome {
    let cfg = ScenarioConfig {
        synthetic: Some(SynthParams::new(6)),
        data_seed: 11,
        coalition_sizes: Some(vec![6]),
        runs: 1,
        ..ScenarioConfig::default()
    };
    let scenario = cfg.resolve(Path::new(".")).map_err(|e| e.to_string())?;
    let report = experiment_ir_violation(&cfg, &scenario, ExperimentOptions::default()).map_err(|e| e.to_string())?;
    let pct = |m: Mechanism, s: Scheme| {
        report
            .rows
            .iter()
            .find(|r| r.mechanism == m && r.scheme == s)
            .map(|r| r.percent)
            .expect("row present")
    };
    for s in Scheme::ALL {
        for m in [Mechanism::EqualDivision, Mechanism::Proportional] {
            ensure!(pct(m, s) > 0.0, "{} {} shows no violations", m.name(), s.name());
        }
        ensure!(pct(Mechanism::Dnem, s) == 0.0, "D-NEM violates IR under {}", s.name());
    }
    for m in [Mechanism::Egalitarian, Mechanism::NetConsumption, Mechanism::Shapley] {
        let p = pct(m, Scheme::Decentralized);
        ensure!(p == 0.0, "{} decentralized violates IR in {p}% of pairs", m.name());
    }

    // pinned witness: net-consumption pricing of the centrally scheduled
    // pair leaves A below standalone
    let (c, t) = worked_pair();
    let g = build_game(&c, Scheme::Centralized, t, 0).map_err(|e| e.to_string())?;
    let a = alloc::net_consumption_rule(&AllocationContext::new(&c, &g));
    ensure!((a.payoffs[0] - 0.3375).abs() < 1e-12, "witness payoff {}", a.payoffs[0]);
    ensure!(a.ir_violations(&g.table) == vec![0], "witness not a violation");
    let centralized_ex_post: Vec<String> = report
        .rows
        .iter()
        .filter(|r| r.scheme == Scheme::Centralized && r.mechanism != Mechanism::Dnem && r.violations > 0)
        .map(|r| format!("{} {:.1}%", r.mechanism.name(), r.percent))
        .collect();
    Ok(format!(
        "ED {:.1}%/{:.1}%, proportional {:.1}%/{:.1}% (centralized/decentralized); centralized ex-post violations: {}",
        pct(Mechanism::EqualDivision, Scheme::Centralized),
        pct(Mechanism::EqualDivision, Scheme::Decentralized),
        pct(Mechanism::Proportional, Scheme::Centralized),
        pct(Mechanism::Proportional, Scheme::Decentralized),
        if centralized_ex_post.is_empty() { "none in data, witness only".into() } else { centralized_ex_post.join(", ") }
    ))
}

fn gain_shape() -> Outcome {
    let cfg = ScenarioConfig {
        synthetic: Some(SynthParams::new(20)),
        data_seed: 3,
        coalition_sizes: Some((1..=10).collect()),
        runs: 40,
        seed: 9,
        record_samples: true,
        ..ScenarioConfig::default()
    };
    let scenario = cfg.resolve(Path::new(".")).map_err(|e| e.to_string())?;
    let report = experiment_welfare_gain(&cfg, &scenario, ExperimentOptions::default()).map_err(|e| e.to_string())?;
    for row in &report.rows {
        let c = row.centralized_mean.ok_or("no samples")?;
        let d = row.decentralized_mean.ok_or("no samples")?;
        ensure!(c >= d - 1e-12 && d >= -1e-12, "size {}: centralized {c}, decentralized {d}", row.size);
    }
    // Along each nested chain the absolute gain nu(N) - sum nu_i can only
    // grow; the percentage need not, since its denominator grows too.
    let mut steps = 0;
    let mut pct_drops = 0;
    for scheme in Scheme::ALL {
        let pick = |s: &coopgrid::harness::experiment::GainSample| -> (f64, Option<f64>) {
            let alone: f64 = s.standalone.iter().sum();
            match scheme {
                Scheme::Centralized => (s.centralized - alone, s.centralized_gain),
                Scheme::Decentralized => (s.decentralized - alone, s.decentralized_gain),
            }
        };
        for run in 0..cfg.runs {
            for hour in 0..report.metadata.hours {
                let mut last: Option<(usize, f64, Option<f64>)> = None;
                for s in report.samples.iter().filter(|s| s.run == run && s.hour == hour) {
                    let (abs, pct) = pick(s);
                    if let Some((size, prev, prev_pct)) = last {
                        ensure!(
                            abs >= prev - 1e-9,
                            "{} run {run} hour {hour}: gain falls from {prev} at size {size} to {abs} at size {}",
                            scheme.name(),
                            s.size
                        );
                        if let (Some(a), Some(b)) = (prev_pct, pct) {
                            pct_drops += usize::from(b < a - 1e-9);
                        }
                        steps += 1;
                    }
                    last = Some((s.size, abs, pct));
                }
            }
        }
    }
    let top = report.rows.last().expect("rows");
    Ok(format!(
        "absolute gain non-decreasing on {steps} chain steps ({pct_drops} percentage dips); size {} mean gain {:.2}% centralized, {:.2}% decentralized",
        top.size,
        top.centralized_mean.unwrap_or(f64::NAN),
        top.decentralized_mean.unwrap_or(f64::NAN)
    ))
}

fn determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_coopgrid");
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = dir.path().join("config.json");
    std::fs::write(
        &config,
        r#"{"synthetic": {"count": 8}, "data_seed": 2, "coalition_sizes": [2, 4, 6], "mechanisms": ["equal-division", "shapley", "dnem"]}"#,
    )
    .map_err(|e| e.to_string())?;
    let run = |kind: &str, name: &str, threads: &str| -> Result<Vec<(String, Vec<u8>)>, String> {
        let out = dir.path().join(name);
        let status = Command::new(bin)
            .args(["experiment", kind, "--runs", "10", "--seed", "1", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .env("COOPGRID_THREADS", threads)
            .output()
            .map_err(|e| e.to_string())?
            .status;
        ensure!(status.success(), "{kind} exited with {status}");
        let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(&out)
            .map_err(|e| e.to_string())?
            .map(|e| {
                let e = e.unwrap();
                (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
            })
            .collect();
        files.sort();
        Ok(files)
    };
    let mut compared = 0;
    for kind in ["welfare-gain", "ir-violation"] {
        let a = run(kind, &format!("{kind}-a"), "4")?;
        let b = run(kind, &format!("{kind}-b"), "4")?;
        let serial = run(kind, &format!("{kind}-serial"), "1")?;
        ensure!(!a.is_empty(), "{kind} wrote nothing");
        ensure!(a == b, "{kind}: two runs differ");
        ensure!(a == serial, "{kind}: serial and parallel differ");
        compared += a.len();
    }
    Ok(format!("{compared} report files byte-identical across repeats and thread counts"))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("solver matches brute-force oracle", solver_matches_oracle),
        ("two-prosumer example reproduced", worked_example),
        ("superadditivity of both value functions", superadditivity),
        ("NEM payment subadditivity", payment_subadditivity),
        ("homogeneity of centralized welfare", homogeneity),
        ("balancedness via least-core certificate", balancedness),
        ("allocation efficiency", efficiency),
        ("D-NEM optimality and individual rationality", dnem_optimal_and_rational),
        ("qualitative IR-violation table", violation_table),
        ("welfare-gain shape", gain_shape),
        ("experiment determinism", determinism),
    ];
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", k + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {why}", k + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
