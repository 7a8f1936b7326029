//! Command-line front end.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use super::config::{Scenario, ScenarioConfig};
use super::experiment::{
    experiment_ir_violation, experiment_welfare_gain, write_ir_violation, write_welfare_gain, ExperimentOptions,
    ReportFormat,
};
use crate::alloc::{self, Mechanism, ProportionalRule};
use crate::error::{Error, Result};
use crate::game::{self, GameTable, Scheme};
use crate::model::{Coalition, Prosumer};
use crate::solver::{self, Regime};

#[derive(Debug, Parser)]
#[command(name = "coopgrid", version, about = "Cooperative energy communities under net energy metering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Target {
    /// Scenario config (JSON).
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 0)]
    hour: usize,
    #[arg(long, value_parser = parse_scheme, default_value = "centralized")]
    scheme: Scheme,
    /// Household ids or indices, comma separated; default is everyone.
    #[arg(long, value_delimiter = ',')]
    members: Vec<String>,
    #[arg(long, value_enum, default_value_t = ReportFormat::Json)]
    format: ReportFormat,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Schedule one prosumer or coalition for one hour.
    Solve(Target),
    /// Build the coalition value table.
    Values(Target),
    /// Compute a payoff allocation for the grand coalition.
    Allocate {
        #[command(flatten)]
        target: Target,
        #[arg(long, value_parser = parse_mechanism)]
        mechanism: Mechanism,
        /// Proportional shares over the coalition value instead of the
        /// sum of standalone values.
        #[arg(long)]
        proportional_verbatim: bool,
    },
    /// Check superadditivity, core nonemptiness and optionally whether
    /// an allocation lies in the core.
    CheckCore {
        #[arg(long, required_unless_present = "table")]
        config: Option<PathBuf>,
        /// Previously dumped value table, instead of a config.
        #[arg(long, conflicts_with_all = ["config", "mechanism", "members"])]
        table: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        hour: usize,
        #[arg(long, value_parser = parse_scheme, default_value = "centralized")]
        scheme: Scheme,
        #[arg(long, value_delimiter = ',')]
        members: Vec<String>,
        #[arg(long, value_parser = parse_mechanism)]
        mechanism: Option<Mechanism>,
        /// Print JSON instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Monte Carlo experiments.
    Experiment {
        #[arg(value_enum)]
        kind: ExperimentKind,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        runs: Option<usize>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = ReportFormat::Csv)]
        format: ReportFormat,
        /// Worker threads; overrides COOPGRID_THREADS.
        #[arg(long)]
        threads: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ExperimentKind {
    WelfareGain,
    IrViolation,
}

fn parse_scheme(s: &str) -> std::result::Result<Scheme, String> {
    Scheme::ALL
        .into_iter()
        .find(|x| x.name() == s)
        .ok_or_else(|| format!("expected centralized or decentralized, got {s:?}"))
}

fn parse_mechanism(s: &str) -> std::result::Result<Mechanism, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Runs the CLI and returns the process exit code: 0 on success, 1 for
/// bad input, 2 for internal failures.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if e.is_input_error() {
                1
            } else {
                2
            }
        }
    }
}

fn load(config: &Path) -> Result<(ScenarioConfig, Scenario)> {
    let cfg = ScenarioConfig::from_file(config)?;
    let base = config.parent().unwrap_or(Path::new("."));
    let scenario = cfg.resolve(base)?;
    Ok((cfg, scenario))
}

/// Community of the selected households at the target hour.
fn community(scenario: &Scenario, members: &[String], hour: usize) -> Result<(Vec<Prosumer>, Vec<String>)> {
    scenario.check_hour(hour)?;
    let picked = scenario.select(members)?;
    Ok((scenario.community(&picked, hour), scenario.ids(&picked)))
}

fn print_json<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut *out, value)?;
    writeln!(out)?;
    Ok(())
}

fn print_csv<T: Serialize>(out: &mut dyn Write, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct MemberSchedule {
    prosumer_id: String,
    d: Vec<f64>,
    z: f64,
}

#[derive(Serialize)]
struct SolveOutput {
    scheme: Scheme,
    hour: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    regime: Option<Regime>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mu: Option<f64>,
    welfare: f64,
    aggregate_z: f64,
    members: Vec<MemberSchedule>,
}

#[derive(Serialize)]
struct ScheduleRow<'a> {
    prosumer_id: &'a str,
    z: f64,
    d: String,
}

#[derive(Serialize)]
struct ValueRow {
    coalition_mask: u32,
    members: String,
    value: f64,
}

#[derive(Serialize)]
struct PayoffRow<'a> {
    prosumer_id: &'a str,
    psi: f64,
}

#[derive(Serialize)]
struct CoreOutput {
    players: usize,
    superadditive: bool,
    core_nonempty: bool,
    least_core_epsilon: f64,
    certificate: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mechanism: Option<Mechanism>,
    #[serde(skip_serializing_if = "Option::is_none")]
    in_core: Option<bool>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    blocking: Vec<String>,
}

fn member_names(c: Coalition, ids: &[String]) -> String {
    c.members().map(|i| ids[i].as_str()).collect::<Vec<_>>().join(" ")
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Solve(t) => {
            let (_, scenario) = load(&t.config)?;
            let (community, ids) = community(&scenario, &t.members, t.hour)?;
            let tariff = scenario.tariff_at(t.hour);
            let grand = Coalition::grand(community.len());
            let (schedule, regime, mu) = match t.scheme {
                Scheme::Centralized => {
                    let sol = solver::centralized_schedule(&community, grand, tariff)?;
                    (sol.schedule, Some(sol.regime), Some(sol.mu))
                }
                Scheme::Decentralized => (solver::decentralized_schedule(&community, grand, tariff)?, None, None),
            };
            let members: Vec<MemberSchedule> = schedule
                .members
                .iter()
                .zip(&schedule.d)
                .zip(&schedule.z)
                .map(|((&i, d), &z)| MemberSchedule {
                    prosumer_id: ids[i].clone(),
                    d: d.clone(),
                    z,
                })
                .collect();
            match t.format {
                ReportFormat::Json => print_json(
                    out,
                    &SolveOutput {
                        scheme: t.scheme,
                        hour: t.hour,
                        regime,
                        mu,
                        welfare: schedule.welfare,
                        aggregate_z: schedule.aggregate_z(),
                        members,
                    },
                ),
                ReportFormat::Csv => {
                    let rows: Vec<ScheduleRow> = members
                        .iter()
                        .map(|m| ScheduleRow {
                            prosumer_id: &m.prosumer_id,
                            z: m.z,
                            d: m.d.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" "),
                        })
                        .collect();
                    print_csv(out, &rows)
                }
            }
        }
        Command::Values(t) => {
            let (_, scenario) = load(&t.config)?;
            let (community, ids) = community(&scenario, &t.members, t.hour)?;
            let table = game::build_table(&community, t.scheme, scenario.tariff_at(t.hour), t.hour)?;
            match t.format {
                ReportFormat::Json => print_json(out, &table),
                ReportFormat::Csv => {
                    let rows: Vec<ValueRow> = table
                        .grand()
                        .subsets()
                        .map(|c| ValueRow {
                            coalition_mask: c.mask() as u32,
                            members: member_names(c, &ids),
                            value: table.value(c),
                        })
                        .collect();
                    print_csv(out, &rows)
                }
            }
        }
        Command::Allocate {
            target: t,
            mechanism,
            proportional_verbatim,
        } => {
            let (cfg, scenario) = load(&t.config)?;
            let (community, ids) = community(&scenario, &t.members, t.hour)?;
            let rule = if proportional_verbatim {
                ProportionalRule::CoalitionValue
            } else {
                cfg.proportional_rule
            };
            let g = game::build_game(&community, t.scheme, scenario.tariff_at(t.hour), t.hour)?;
            let allocation = alloc::allocate(mechanism, &community, &g, rule)?;
            if allocation.fallback {
                log::warn!("proportional weights were degenerate; reported equal division");
            }
            let report = allocation.report(&g.table, &ids);
            match t.format {
                ReportFormat::Json => print_json(out, &report),
                ReportFormat::Csv => {
                    let rows: Vec<PayoffRow> = report
                        .payoffs
                        .iter()
                        .map(|p| PayoffRow {
                            prosumer_id: &p.prosumer_id,
                            psi: p.psi,
                        })
                        .collect();
                    print_csv(out, &rows)
                }
            }
        }
        Command::CheckCore {
            config,
            table,
            hour,
            scheme,
            members,
            mechanism,
            json,
        } => {
            let (table, ids, allocation) = match (config, table) {
                (_, Some(path)) => {
                    let text = std::fs::read_to_string(&path)
                        .map_err(|e| Error::invalid(format!("cannot read {}: {e}", path.display())))?;
                    let table: GameTable = serde_json::from_str(&text)
                        .map_err(|e| Error::invalid(format!("table {}: {e}", path.display())))?;
                    let ids = (0..table.players()).map(|i| i.to_string()).collect();
                    (table, ids, None)
                }
                (Some(config), None) => {
                    let (cfg, scenario) = load(&config)?;
                    let (community, ids) = community(&scenario, &members, hour)?;
                    let g = game::build_game(&community, scheme, scenario.tariff_at(hour), hour)?;
                    let allocation = match mechanism {
                        Some(m) => Some(alloc::allocate(m, &community, &g, cfg.proportional_rule)?),
                        None => None,
                    };
                    (g.table, ids, allocation)
                }
                (None, None) => return Err(Error::invalid("give --config or --table")),
            };
            let violations = game::check_superadditive(&table);
            let cert = game::core_nonempty(&table)?;
            let check = allocation.as_ref().map(|a| game::in_core(&a.payoffs, &table));
            let output = CoreOutput {
                players: table.players(),
                superadditive: violations.is_empty(),
                core_nonempty: cert.nonempty,
                least_core_epsilon: cert.epsilon,
                certificate: cert.allocation,
                mechanism,
                in_core: check.as_ref().map(|c| c.in_core),
                blocking: check
                    .iter()
                    .flat_map(|c| &c.blocking)
                    .map(|&b| format!("{{{}}}", member_names(b, &ids)))
                    .collect(),
            };
            if json {
                return print_json(out, &output);
            }
            writeln!(out, "superadditive: {}", output.superadditive)?;
            writeln!(
                out,
                "core nonempty: {} (least-core epsilon {})",
                output.core_nonempty, output.least_core_epsilon
            )?;
            if let Some(in_core) = output.in_core {
                writeln!(out, "in core: {in_core}")?;
                for b in &output.blocking {
                    writeln!(out, "blocking coalition: {b}")?;
                }
            }
            Ok(())
        }
        Command::Experiment {
            kind,
            config,
            seed,
            runs,
            out: dir,
            format,
            threads,
        } => {
            let (mut cfg, scenario) = load(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(runs) = runs {
                cfg.runs = runs;
            }
            let mut options = ExperimentOptions::from_env()?;
            if threads.is_some() {
                options.threads = threads;
            }
            let files = match kind {
                ExperimentKind::WelfareGain => {
                    let report = experiment_welfare_gain(&cfg, &scenario, options)?;
                    write_welfare_gain(&report, &dir, format)?
                }
                ExperimentKind::IrViolation => {
                    let report = experiment_ir_violation(&cfg, &scenario, options)?;
                    write_ir_violation(&report, &dir, format)?
                }
            };
            for f in files {
                writeln!(out, "{}", dir.join(f).display())?;
            }
            Ok(())
        }
    }
}
