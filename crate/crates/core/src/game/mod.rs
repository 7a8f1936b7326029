//! The coalition game: value functions under both scheduling schemes,
//! full power-set tables, and checks for superadditivity, imputations,
//! the core and balancedness.

pub mod lp;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alloc::Mechanism;
use crate::error::{Error, Result};
use crate::model::{Coalition, Prosumer, ScheduleResult, TariffHour};
use crate::solver::{self, RegimeSolution};
use lp::{tiny_lp_solve, Constraint, Relation};

/// Tolerance for every comparison between coalition values.
pub const GAME_TOL: f64 = 1e-8;
/// Largest community for which a full value table is built.
pub const MAX_TABLE_PLAYERS: usize = 20;
/// Largest community for Shapley values and core linear programs.
pub const MAX_LP_PLAYERS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Centralized,
    Decentralized,
}

impl Scheme {
    pub const ALL: [Scheme; 2] = [Scheme::Centralized, Scheme::Decentralized];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Centralized => "centralized",
            Scheme::Decentralized => "decentralized",
        }
    }
}

/// Value of every coalition of a community in one billing period.
#[derive(Debug, Clone, PartialEq)]
pub struct GameTable {
    pub scheme: Scheme,
    pub hour: usize,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TableDoc {
    scheme: Scheme,
    hour: usize,
    values: Vec<TableEntry>,
}

#[derive(Serialize, Deserialize)]
struct TableEntry {
    coalition_mask: u32,
    value: f64,
}

impl Serialize for GameTable {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        TableDoc {
            scheme: self.scheme,
            hour: self.hour,
            values: self
                .values
                .iter()
                .enumerate()
                .map(|(m, &value)| TableEntry {
                    coalition_mask: m as u32,
                    value,
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for GameTable {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let doc = TableDoc::deserialize(d)?;
        let n = doc.values.len();
        if !n.is_power_of_two() {
            return Err(D::Error::custom(format!("{n} entries is not a power-set size")));
        }
        let mut values = vec![f64::NAN; n];
        for e in doc.values {
            let slot = values
                .get_mut(e.coalition_mask as usize)
                .ok_or_else(|| D::Error::custom(format!("mask {} out of range", e.coalition_mask)))?;
            *slot = e.value;
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(D::Error::custom("table has duplicate or missing coalitions"));
        }
        GameTable::from_values(doc.scheme, doc.hour, values).map_err(D::Error::custom)
    }
}

impl GameTable {
    /// Wraps a value vector indexed by coalition mask.
    pub fn from_values(scheme: Scheme, hour: usize, values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        if !n.is_power_of_two() || n.trailing_zeros() as usize > MAX_TABLE_PLAYERS {
            return Err(Error::invalid(format!("{n} values do not form a power set of at most {MAX_TABLE_PLAYERS} players")));
        }
        if values[0] != 0.0 {
            return Err(Error::invalid("the empty coalition must have value 0"));
        }
        Ok(GameTable { scheme, hour, values })
    }

    pub fn players(&self) -> usize {
        self.values.len().trailing_zeros() as usize
    }

    pub fn grand(&self) -> Coalition {
        Coalition::grand(self.players())
    }

    pub fn value(&self, c: Coalition) -> f64 {
        self.values[c.mask()]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Overwrites one entry; for building negative controls in tests.
    pub fn set_value(&mut self, c: Coalition, v: f64) {
        if !c.is_empty() {
            self.values[c.mask()] = v;
        }
    }

    pub fn singleton_values(&self) -> Vec<f64> {
        (0..self.players()).map(|i| self.value(Coalition::singleton(i))).collect()
    }
}

/// A game table together with the quantities the payoff mechanisms
/// need: the bill on each coalition's aggregate and the grand
/// coalition's schedule.
#[derive(Debug, Clone)]
pub struct CoalitionGame {
    pub table: GameTable,
    /// Bill on the aggregate net consumption of each coalition, by mask.
    pub payments: Vec<f64>,
    pub grand_schedule: ScheduleResult,
    pub tariff: TariffHour,
}

fn check_size(community: &[Prosumer], limit: usize, what: &'static str) -> Result<()> {
    if community.is_empty() {
        return Err(Error::EmptyCoalition);
    }
    if community.len() > limit {
        return Err(Error::SizeLimit {
            what,
            size: community.len(),
            limit,
        });
    }
    Ok(())
}

/// Value of a coalition whose members schedule against NEM on their
/// own: standalone welfares plus whatever the operator over-collects
/// relative to the coalition's own bill.
pub fn value_decentralized(
    coalition: Coalition,
    responses: &[RegimeSolution],
    tariff: TariffHour,
) -> Result<f64> {
    let mut standalone = 0.0;
    let mut member_bills = 0.0;
    let mut aggregate = 0.0;
    for i in coalition.members() {
        let resp = responses
            .iter()
            .find(|r| r.schedule.members.first() == Some(&i))
            .ok_or_else(|| Error::invalid(format!("no schedule for coalition member {i}")))?;
        let z = resp.schedule.z[0];
        standalone += resp.schedule.welfare;
        member_bills += tariff.payment(z);
        aggregate += z;
    }
    if coalition.is_empty() {
        return Ok(0.0);
    }
    Ok(standalone + (member_bills - tariff.payment(aggregate)))
}

/// Welfare of the coalition under central scheduling; zero for the
/// empty coalition.
pub fn value_centralized(community: &[Prosumer], coalition: Coalition, tariff: TariffHour) -> Result<f64> {
    if coalition.is_empty() {
        return Ok(0.0);
    }
    Ok(solver::centralized_schedule(community, coalition, tariff)?.schedule.welfare)
}

/// Solves every coalition of `community` under `scheme`.
pub fn build_game(
    community: &[Prosumer],
    scheme: Scheme,
    tariff: TariffHour,
    hour: usize,
) -> Result<CoalitionGame> {
    check_size(community, MAX_TABLE_PLAYERS, "value table")?;
    let h = community.len();
    let size = 1usize << h;
    let grand = Coalition::grand(h);
    let (values, payments, grand_schedule) = match scheme {
        Scheme::Decentralized => {
            // Standalone schedules do not depend on the coalition, so
            // every value follows from per-member sums.
            let responses = (0..h)
                .map(|i| solver::best_response(&community[i], i, tariff))
                .collect::<Result<Vec<_>>>()?;
            let mut utility = vec![0.0; size];
            let mut net = vec![0.0; size];
            for m in 1..size {
                let i = m.trailing_zeros() as usize;
                let rest = m & (m - 1);
                let r = &responses[i].schedule;
                utility[m] = utility[rest] + community[i].utility_unchecked(&r.d[0]);
                net[m] = net[rest] + r.z[0];
            }
            let payments: Vec<f64> = net.iter().map(|&z| tariff.payment(z)).collect();
            let values = utility.iter().zip(&payments).map(|(u, p)| u - p).collect();
            let grand_schedule = solver::combine_responses(community, &responses, tariff);
            (values, payments, grand_schedule)
        }
        Scheme::Centralized => {
            let solved: Vec<(f64, f64)> = (1..size)
                .into_par_iter()
                .map(|m| {
                    let s = solver::centralized_schedule(community, Coalition(m as u32), tariff)?;
                    Ok((s.schedule.welfare, tariff.payment(s.schedule.aggregate_z())))
                })
                .collect::<Result<_>>()?;
            let mut values = Vec::with_capacity(size);
            let mut payments = Vec::with_capacity(size);
            values.push(0.0);
            payments.push(0.0);
            for (v, p) in solved {
                values.push(v);
                payments.push(p);
            }
            let grand_schedule = solver::centralized_schedule(community, grand, tariff)?.schedule;
            (values, payments, grand_schedule)
        }
    };
    Ok(CoalitionGame {
        table: GameTable::from_values(scheme, hour, values)?,
        payments,
        grand_schedule,
        tariff,
    })
}

/// Value of every coalition in the power set of `community`.
pub fn build_table(community: &[Prosumer], scheme: Scheme, tariff: TariffHour, hour: usize) -> Result<GameTable> {
    Ok(build_game(community, scheme, tariff, hour)?.table)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuperadditivityViolation {
    pub left: Coalition,
    pub right: Coalition,
    /// `v(left) + v(right) - v(left | right)`, positive when violated.
    pub excess: f64,
}

/// Every unordered pair of disjoint non-empty coalitions whose values
/// add up to more than the value of their union.
pub fn check_superadditive(table: &GameTable) -> Vec<SuperadditivityViolation> {
    let grand = table.grand();
    let mut out = Vec::new();
    for left in grand.subsets().filter(|c| !c.is_empty()) {
        let rest = Coalition(grand.0 & !left.0);
        for right in rest.subsets().filter(|c| c.0 > left.0) {
            let excess = table.value(left) + table.value(right) - table.value(left.union(right));
            if excess > GAME_TOL {
                out.push(SuperadditivityViolation { left, right, excess });
            }
        }
    }
    out
}

/// A payoff vector over the whole community, with the mechanism that
/// produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub mechanism: Mechanism,
    pub scheme: Scheme,
    pub hour: usize,
    /// Payoff per community member; zero outside the allocated coalition.
    pub payoffs: Vec<f64>,
    /// Set when the mechanism fell back to equal division.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub fallback: bool,
}

impl Allocation {
    pub fn total(&self) -> f64 {
        self.payoffs.iter().sum()
    }

    /// Members whose payoff falls short of their standalone value.
    pub fn ir_violations(&self, table: &GameTable) -> Vec<usize> {
        self.payoffs
            .iter()
            .enumerate()
            .filter(|&(i, &psi)| psi < table.value(Coalition::singleton(i)) - GAME_TOL)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn report(&self, table: &GameTable, ids: &[String]) -> AllocationReport {
        AllocationReport {
            mechanism: self.mechanism,
            scheme: self.scheme,
            hour: self.hour,
            payoffs: self
                .payoffs
                .iter()
                .zip(ids)
                .map(|(&psi, id)| Payoff {
                    prosumer_id: id.clone(),
                    psi,
                })
                .collect(),
            efficient: (self.total() - table.value(table.grand())).abs() <= GAME_TOL,
            ir_violations: self.ir_violations(table).into_iter().map(|i| ids[i].clone()).collect(),
        }
    }
}

/// Serialized form of an [`Allocation`] checked against a game table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationReport {
    pub mechanism: Mechanism,
    pub scheme: Scheme,
    pub hour: usize,
    pub payoffs: Vec<Payoff>,
    pub efficient: bool,
    pub ir_violations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Payoff {
    pub prosumer_id: String,
    pub psi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImputationCheck {
    pub is_imputation: bool,
    pub reasons: Vec<String>,
}

/// Efficiency and individual rationality of a payoff vector.
pub fn is_imputation(payoffs: &[f64], table: &GameTable) -> ImputationCheck {
    let mut reasons = Vec::new();
    if payoffs.len() != table.players() {
        reasons.push(format!(
            "allocation has {} payoffs for {} players",
            payoffs.len(),
            table.players()
        ));
        return ImputationCheck {
            is_imputation: false,
            reasons,
        };
    }
    let total: f64 = payoffs.iter().sum();
    let grand = table.value(table.grand());
    if (total - grand).abs() > GAME_TOL {
        reasons.push(format!("not efficient: payoffs sum to {total}, grand coalition value is {grand}"));
    }
    for (i, &psi) in payoffs.iter().enumerate() {
        let alone = table.value(Coalition::singleton(i));
        if psi < alone - GAME_TOL {
            reasons.push(format!("player {i} gets {psi}, below standalone value {alone}"));
        }
    }
    ImputationCheck {
        is_imputation: reasons.is_empty(),
        reasons,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoreCheck {
    pub in_core: bool,
    pub imputation: ImputationCheck,
    /// Coalitions that receive less than their value.
    pub blocking: Vec<Coalition>,
}

/// Whether no coalition can do better on its own than its members'
/// combined payoff.
pub fn in_core(payoffs: &[f64], table: &GameTable) -> CoreCheck {
    let imputation = is_imputation(payoffs, table);
    if payoffs.len() != table.players() {
        return CoreCheck {
            in_core: false,
            imputation,
            blocking: Vec::new(),
        };
    }
    let blocking: Vec<Coalition> = table
        .grand()
        .subsets()
        .filter(|&c| {
            let share: f64 = c.members().map(|i| payoffs[i]).sum();
            share < table.value(c) - GAME_TOL
        })
        .collect();
    CoreCheck {
        in_core: imputation.is_imputation && blocking.is_empty(),
        imputation,
        blocking,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoreCertificate {
    pub nonempty: bool,
    /// Least-core value: the smallest uniform subsidy every proper
    /// coalition needs to stop blocking. Non-positive iff the core is
    /// non-empty.
    pub epsilon: f64,
    /// An efficient allocation attaining `epsilon`.
    pub allocation: Vec<f64>,
}

/// Decides core non-emptiness by solving the least-core program
/// `min e s.t. x(S) >= v(S) - e for proper S, x(N) = v(N)`.
///
/// The program is solved through its dual, whose variables are weights
/// on coalitions with equal coverage of every player (a balanced
/// collection), so it has one row per player instead of one per
/// coalition. The allocation is recovered from the dual multipliers.
pub fn core_nonempty(table: &GameTable) -> Result<CoreCertificate> {
    let h = table.players();
    if h > MAX_LP_PLAYERS {
        return Err(Error::SizeLimit {
            what: "core program",
            size: h,
            limit: MAX_LP_PLAYERS,
        });
    }
    let grand = table.grand();
    let grand_value = table.value(grand);
    if h == 1 {
        return Ok(CoreCertificate {
            nonempty: true,
            epsilon: f64::NEG_INFINITY,
            allocation: vec![grand_value],
        });
    }
    let proper: Vec<Coalition> = grand.subsets().filter(|c| !c.is_empty() && *c != grand).collect();
    let n = proper.len() + 2;
    let mut costs: Vec<f64> = proper.iter().map(|&c| -table.value(c)).collect();
    costs.push(-grand_value);
    costs.push(grand_value);
    let mut rows = Vec::with_capacity(h + 1);
    for i in 0..h {
        let mut coeffs: Vec<f64> = proper.iter().map(|c| if c.contains(i) { 1.0 } else { 0.0 }).collect();
        coeffs.push(1.0);
        coeffs.push(-1.0);
        rows.push(Constraint::new(coeffs, Relation::Eq, 0.0));
    }
    let mut total = vec![1.0; n];
    total[n - 2] = 0.0;
    total[n - 1] = 0.0;
    rows.push(Constraint::new(total, Relation::Eq, 1.0));

    let sol = tiny_lp_solve(&costs, &rows)?;
    let allocation: Vec<f64> = sol.duals[..h].iter().map(|y| -y).collect();
    let epsilon = -sol.duals[h];
    Ok(CoreCertificate {
        nonempty: epsilon <= GAME_TOL,
        epsilon,
        allocation,
    })
}

/// Checks `sum_S w(S) v(S) <= v(N)` for a balanced map `w`, after
/// validating that every player's coalitions carry total weight one.
pub fn check_balanced_map(table: &GameTable, weights: &[(Coalition, f64)]) -> Result<bool> {
    let h = table.players();
    for &(c, w) in weights {
        if !c.is_subset(table.grand()) {
            return Err(Error::invalid(format!("coalition {:#b} outside the game", c.0)));
        }
        if !(0.0..=1.0).contains(&w) {
            return Err(Error::invalid(format!("weight {w} outside [0, 1]")));
        }
    }
    for i in 0..h {
        let coverage: f64 = weights.iter().filter(|(c, _)| c.contains(i)).map(|(_, w)| w).sum();
        if (coverage - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "not a balanced map: player {i} is covered with total weight {coverage}"
            )));
        }
    }
    let lhs: f64 = weights.iter().map(|&(c, w)| w * table.value(c)).sum();
    Ok(lhs <= table.value(table.grand()) + GAME_TOL)
}
