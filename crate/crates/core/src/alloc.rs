//! Payoff mechanisms for sharing a coalition's welfare.
//!
//! The five ex-post mechanisms keep each member's own consumption
//! utility with that member and only split the coalition's bill. D-NEM
//! instead announces one community price before members schedule, and
//! each member simply pays that price on its own net consumption.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{Allocation, CoalitionGame, Scheme, MAX_LP_PLAYERS};
use crate::model::{Coalition, Prosumer, ScheduleResult, TariffHour};
use crate::solver::{self, Regime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mechanism {
    EqualDivision,
    Egalitarian,
    Proportional,
    NetConsumption,
    Shapley,
    Dnem,
}

impl Mechanism {
    pub const ALL: [Mechanism; 6] = [
        Mechanism::EqualDivision,
        Mechanism::Egalitarian,
        Mechanism::Proportional,
        Mechanism::NetConsumption,
        Mechanism::Shapley,
        Mechanism::Dnem,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mechanism::EqualDivision => "equal-division",
            Mechanism::Egalitarian => "egalitarian",
            Mechanism::Proportional => "proportional",
            Mechanism::NetConsumption => "net-consumption",
            Mechanism::Shapley => "shapley",
            Mechanism::Dnem => "dnem",
        }
    }

    pub fn is_ex_post(self) -> bool {
        self != Mechanism::Dnem
    }
}

impl std::str::FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mechanism::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown mechanism {s:?}")))
    }
}

/// Weights of the proportional rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProportionalRule {
    /// Shares `W(i) / sum_j W(j)`, which always sum to one.
    #[default]
    StandaloneSum,
    /// Shares `W(i) / v(N)`; not budget balanced in general.
    CoalitionValue,
}

/// Everything the ex-post mechanisms read about the grand coalition of
/// a community under one scheduling scheme.
#[derive(Debug, Clone)]
pub struct AllocationContext<'a> {
    pub scheme: Scheme,
    pub hour: usize,
    pub tariff: TariffHour,
    /// Utility of each member at the scheme's schedule.
    pub utility: Vec<f64>,
    /// Net consumption of each member under the scheme.
    pub z: Vec<f64>,
    /// Standalone values `v({i})`.
    pub standalone: Vec<f64>,
    /// Bill on the aggregate of every coalition, by mask.
    pub payments: &'a [f64],
    pub grand_value: f64,
}

impl<'a> AllocationContext<'a> {
    pub fn new(community: &[Prosumer], game: &'a CoalitionGame) -> Self {
        Self::from_schedule(
            community,
            game.table.scheme,
            game.table.hour,
            game.tariff,
            &game.grand_schedule,
            game.table.singleton_values(),
            &game.payments,
        )
    }

    /// Context built without a full game table. `payments` may be empty
    /// when the Shapley value is not needed.
    pub fn from_schedule(
        community: &[Prosumer],
        scheme: Scheme,
        hour: usize,
        tariff: TariffHour,
        schedule: &ScheduleResult,
        standalone: Vec<f64>,
        payments: &'a [f64],
    ) -> Self {
        let utility = schedule
            .members
            .iter()
            .zip(&schedule.d)
            .map(|(&i, d)| community[i].utility_unchecked(d))
            .collect();
        AllocationContext {
            scheme,
            hour,
            tariff,
            utility,
            z: schedule.z.clone(),
            standalone,
            payments,
            grand_value: schedule.welfare,
        }
    }

    pub fn len(&self) -> usize {
        self.utility.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utility.is_empty()
    }

    /// Bill on the coalition's aggregate net consumption.
    pub fn coalition_payment(&self) -> f64 {
        self.tariff.payment(self.z.iter().sum())
    }

    fn allocation(&self, mechanism: Mechanism, payoffs: Vec<f64>) -> Allocation {
        Allocation {
            mechanism,
            scheme: self.scheme,
            hour: self.hour,
            payoffs,
            fallback: false,
        }
    }

    /// Payoffs `U_i - share_i` for a vector of bill shares.
    fn charge(&self, mechanism: Mechanism, shares: impl IntoIterator<Item = f64>) -> Allocation {
        let payoffs = self.utility.iter().zip(shares).map(|(u, s)| u - s).collect();
        self.allocation(mechanism, payoffs)
    }
}

/// Splits the coalition bill evenly.
pub fn equal_division(ctx: &AllocationContext) -> Allocation {
    let share = ctx.coalition_payment() / ctx.len() as f64;
    ctx.charge(Mechanism::EqualDivision, std::iter::repeat_n(share, ctx.len()))
}

/// Each member pays its own NEM bill, then the coalition's savings are
/// split evenly.
pub fn egalitarian(ctx: &AllocationContext) -> Allocation {
    let own: Vec<f64> = ctx.z.iter().map(|&z| ctx.tariff.payment(z)).collect();
    let delta = (ctx.coalition_payment() - own.iter().sum::<f64>()) / ctx.len() as f64;
    ctx.charge(Mechanism::Egalitarian, own.into_iter().map(|p| p + delta))
}

/// Splits the coalition bill in proportion to standalone welfare.
/// Falls back to equal division when the weights are degenerate.
pub fn proportional(ctx: &AllocationContext, rule: ProportionalRule) -> Allocation {
    let denominator = match rule {
        ProportionalRule::StandaloneSum => ctx.standalone.iter().sum::<f64>(),
        ProportionalRule::CoalitionValue => ctx.grand_value,
    };
    if denominator.abs() < 1e-12 {
        log::warn!("proportional weights degenerate (denominator {denominator:e}); using equal division");
        let mut alloc = equal_division(ctx);
        alloc.mechanism = Mechanism::Proportional;
        alloc.fallback = true;
        return alloc;
    }
    let bill = ctx.coalition_payment();
    ctx.charge(
        Mechanism::Proportional,
        ctx.standalone.iter().map(|w| w / denominator * bill),
    )
}

/// Every member's net consumption is priced at the rate that applies to
/// the coalition's aggregate: retail if it imports (or nets to zero),
/// export otherwise.
pub fn net_consumption_rule(ctx: &AllocationContext) -> Allocation {
    let aggregate: f64 = ctx.z.iter().sum();
    let price = if aggregate >= 0.0 { ctx.tariff.retail } else { ctx.tariff.export };
    ctx.charge(Mechanism::NetConsumption, ctx.z.iter().map(|z| price * z))
}

/// `k! / n!` style weights `(n - s)! (s - 1)! / n!` for `s = 1..=n`.
fn shapley_weights(n: usize) -> Vec<f64> {
    let fact: Vec<f64> = (0..=n)
        .scan(1.0, |acc, k| {
            if k > 0 {
                *acc *= k as f64;
            }
            Some(*acc)
        })
        .collect();
    (0..=n)
        .map(|s| if s == 0 { 0.0 } else { fact[n - s] * fact[s - 1] / fact[n] })
        .collect()
}

/// Shapley value of the bill game: each member pays its average marginal
/// contribution to the coalition bill over all join orders.
pub fn shapley(ctx: &AllocationContext) -> Result<Allocation> {
    let n = ctx.len();
    if n > MAX_LP_PLAYERS {
        return Err(Error::SizeLimit {
            what: "Shapley value",
            size: n,
            limit: MAX_LP_PLAYERS,
        });
    }
    if ctx.payments.len() != 1 << n {
        return Err(Error::invalid(format!(
            "need {} coalition payments, got {}",
            1usize << n,
            ctx.payments.len()
        )));
    }
    let weights = shapley_weights(n);
    let mut shares = vec![0.0; n];
    for (mask, &bill) in ctx.payments.iter().enumerate().skip(1) {
        let c = Coalition(mask as u32);
        let w = weights[c.len()];
        for i in c.members() {
            shares[i] += w * (bill - ctx.payments[c.without(i).mask()]);
        }
    }
    Ok(ctx.charge(Mechanism::Shapley, shares))
}

/// The D-NEM community price and the thresholds that select it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DnemPrice {
    pub price: f64,
    /// Envelope-aware coalition demand at the retail rate.
    pub lower_threshold: f64,
    /// Envelope-aware coalition demand at the export rate.
    pub upper_threshold: f64,
    pub renewable: f64,
}

/// Community price announced before scheduling: retail while renewables
/// fall short of demand at the retail rate, export once they exceed
/// demand at the export rate, and in between the price at which the
/// coalition's net consumption is exactly zero.
pub fn dnem_price(community: &[Prosumer], coalition: Coalition, tariff: TariffHour) -> Result<DnemPrice> {
    let central = solver::centralized_schedule(community, coalition, tariff)?;
    let price = match central.regime {
        Regime::Import | Regime::EnvelopeClampedImport => tariff.retail,
        Regime::Export | Regime::EnvelopeClampedExport => tariff.export,
        Regime::ZeroNet => central.mu,
    };
    Ok(DnemPrice {
        price,
        lower_threshold: solver::coalition_demand(community, coalition, tariff.retail),
        upper_threshold: solver::coalition_demand(community, coalition, tariff.export),
        renewable: coalition.members().map(|i| community[i].renewable).sum(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DnemOutcome {
    pub allocation: Allocation,
    pub price: DnemPrice,
    /// Each member's net consumption in response to the price.
    pub z: Vec<f64>,
}

/// Members best-respond to the D-NEM price as a flat two-sided tariff
/// and keep their surplus at that price.
pub fn dnem_allocation(
    community: &[Prosumer],
    coalition: Coalition,
    tariff: TariffHour,
    hour: usize,
) -> Result<DnemOutcome> {
    let price = dnem_price(community, coalition, tariff)?;
    let flat = TariffHour::flat(price.price)?;
    let mut payoffs = vec![0.0; community.len()];
    let mut z = Vec::with_capacity(coalition.len());
    for i in coalition.members() {
        let resp = solver::best_response(&community[i], i, flat)?;
        let zi = resp.schedule.z[0];
        payoffs[i] = community[i].utility_unchecked(&resp.schedule.d[0]) - price.price * zi;
        z.push(zi);
    }
    let central = solver::centralized_schedule(community, coalition, tariff)?;
    let dnem_total: f64 = z.iter().sum();
    let central_total = central.schedule.aggregate_z();
    if (dnem_total - central_total).abs() > 1e-6 {
        return Err(Error::DnemMismatch {
            dnem: dnem_total,
            centralized: central_total,
        });
    }
    Ok(DnemOutcome {
        allocation: Allocation {
            mechanism: Mechanism::Dnem,
            scheme: Scheme::Centralized,
            hour,
            payoffs,
            fallback: false,
        },
        price,
        z,
    })
}

/// Runs `mechanism` on the grand coalition of `community`, whose game
/// under the desired scheme is `game`.
pub fn allocate(
    mechanism: Mechanism,
    community: &[Prosumer],
    game: &CoalitionGame,
    rule: ProportionalRule,
) -> Result<Allocation> {
    let ctx = AllocationContext::new(community, game);
    Ok(match mechanism {
        Mechanism::EqualDivision => equal_division(&ctx),
        Mechanism::Egalitarian => egalitarian(&ctx),
        Mechanism::Proportional => proportional(&ctx, rule),
        Mechanism::NetConsumption => net_consumption_rule(&ctx),
        Mechanism::Shapley => shapley(&ctx)?,
        Mechanism::Dnem => {
            let grand = Coalition::grand(community.len());
            let mut alloc = dnem_allocation(community, grand, game.tariff, game.table.hour)?.allocation;
            alloc.scheme = game.table.scheme;
            alloc
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::build_game;
    use crate::model::QuadDevice;
    use approx::assert_abs_diff_eq;

    fn community(r: [f64; 2]) -> Vec<Prosumer> {
        let dev = QuadDevice::new(1.0, 0.5, 0.0, 10.0).unwrap();
        vec![
            Prosumer::new("A", vec![dev], r[0], -6.0, 6.0).unwrap(),
            Prosumer::new("B", vec![dev], r[1], -6.0, 6.0).unwrap(),
        ]
    }

    fn tariff() -> TariffHour {
        TariffHour::new(0.4, 0.2).unwrap()
    }

    fn game(c: &[Prosumer], scheme: Scheme) -> CoalitionGame {
        build_game(c, scheme, tariff(), 0).unwrap()
    }

    fn assert_payoffs(a: &Allocation, expected: &[f64]) {
        assert_eq!(a.payoffs.len(), expected.len());
        for (p, e) in a.payoffs.iter().zip(expected) {
            assert_abs_diff_eq!(p, e, epsilon = 1e-12);
        }
    }

    #[test]
    fn worked_example_decentralized() {
        let c = community([0.0, 3.0]);
        let g = game(&c, Scheme::Decentralized);
        let ctx = AllocationContext::new(&c, &g);
        assert_abs_diff_eq!(ctx.coalition_payment(), -0.04, epsilon = 1e-12);
        assert_payoffs(&equal_division(&ctx), &[0.86, 0.98]);
        assert_payoffs(&egalitarian(&ctx), &[0.48, 1.36]);
        assert_payoffs(&proportional(&ctx, ProportionalRule::StandaloneSum), &[0.849, 0.991]);
        assert_payoffs(&net_consumption_rule(&ctx), &[0.6, 1.24]);
        assert_payoffs(&shapley(&ctx).unwrap(), &[0.48, 1.36]);

        let ed = equal_division(&ctx);
        assert_eq!(ed.ir_violations(&g.table), vec![1]);
        let prop = proportional(&ctx, ProportionalRule::StandaloneSum);
        assert_eq!(prop.ir_violations(&g.table), vec![1]);
    }

    #[test]
    fn worked_example_dnem() {
        let c = community([0.0, 3.0]);
        let price = dnem_price(&c, Coalition::grand(2), tariff()).unwrap();
        assert_abs_diff_eq!(price.lower_threshold, 2.4, epsilon = 1e-12);
        assert_abs_diff_eq!(price.upper_threshold, 3.2, epsilon = 1e-12);
        assert_abs_diff_eq!(price.price, 0.25, epsilon = 1e-12);
        let out = dnem_allocation(&c, Coalition::grand(2), tariff(), 0).unwrap();
        assert_payoffs(&out.allocation, &[0.5625, 1.3125]);
        assert_abs_diff_eq!(out.allocation.total(), 1.875, epsilon = 1e-12);
    }

    #[test]
    fn dnem_price_extremes() {
        assert_eq!(dnem_price(&community([0.0, 0.0]), Coalition::grand(2), tariff()).unwrap().price, 0.4);
        let flooded = community([5.0, 5.0]);
        assert_eq!(dnem_price(&flooded, Coalition::grand(2), tariff()).unwrap().price, 0.2);
    }

    #[test]
    fn dnem_without_renewables_is_standalone() {
        let c = community([0.0, 0.0]);
        let g = game(&c, Scheme::Centralized);
        let out = dnem_allocation(&c, Coalition::grand(2), tariff(), 0).unwrap();
        assert_payoffs(&out.allocation, &g.table.singleton_values());
    }

    #[test]
    fn dnem_singleton_is_nem_best_response() {
        let c = community([0.0, 1.5]);
        for i in 0..2 {
            let out = dnem_allocation(&c, Coalition::singleton(i), tariff(), 0).unwrap();
            let alone = solver::best_response(&c[i], i, tariff()).unwrap();
            assert_abs_diff_eq!(out.allocation.payoffs[i], alone.schedule.welfare, epsilon = 1e-12);
            assert_eq!(out.allocation.payoffs[1 - i], 0.0);
        }
    }

    #[test]
    fn centralized_net_consumption_rule_breaks_ir() {
        // the coalition nets to zero, so the importer pays retail on all
        // of its (larger) centrally scheduled import
        let c = community([0.0, 3.0]);
        let g = game(&c, Scheme::Centralized);
        let ctx = AllocationContext::new(&c, &g);
        let ncr = net_consumption_rule(&ctx);
        assert_payoffs(&ncr, &[0.3375, 1.5375]);
        assert_eq!(ncr.ir_violations(&g.table), vec![0]);
    }

    #[test]
    fn single_member_mechanisms_give_standalone() {
        let c = community([1.5, 0.0]);
        let one = &c[..1];
        let g = game(one, Scheme::Centralized);
        for m in Mechanism::ALL {
            let a = allocate(m, one, &g, ProportionalRule::StandaloneSum).unwrap();
            assert_abs_diff_eq!(a.payoffs[0], 0.9375, epsilon = 1e-12);
        }
    }

    #[test]
    fn symmetric_members_split_evenly() {
        let c = community([1.0, 1.0]);
        for scheme in Scheme::ALL {
            let g = game(&c, scheme);
            for m in Mechanism::ALL {
                let a = allocate(m, &c, &g, ProportionalRule::StandaloneSum).unwrap();
                assert_abs_diff_eq!(a.payoffs[0], a.payoffs[1], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn zero_bill_leaves_utility() {
        // both members exactly cover their demand at the retail rate
        let c = community([1.2, 1.2]);
        let g = game(&c, Scheme::Decentralized);
        let ctx = AllocationContext::new(&c, &g);
        assert_eq!(ctx.coalition_payment(), 0.0);
        for a in [
            equal_division(&ctx),
            egalitarian(&ctx),
            proportional(&ctx, ProportionalRule::StandaloneSum),
        ] {
            assert_payoffs(&a, &ctx.utility);
        }
    }

    #[test]
    fn proportional_fallback_and_verbatim_rule() {
        let dev = QuadDevice::new(0.1, 1.0, 0.0, 1.0).unwrap();
        // utility never beats the retail price: both standalone values are 0
        let c = vec![
            Prosumer::new("x", vec![dev], 0.0, -6.0, 6.0).unwrap(),
            Prosumer::new("y", vec![dev], 0.0, -6.0, 6.0).unwrap(),
        ];
        let g = game(&c, Scheme::Decentralized);
        let ctx = AllocationContext::new(&c, &g);
        let a = proportional(&ctx, ProportionalRule::StandaloneSum);
        assert!(a.fallback);
        assert_eq!(a.mechanism, Mechanism::Proportional);

        let c = community([0.0, 3.0]);
        let g = game(&c, Scheme::Decentralized);
        let ctx = AllocationContext::new(&c, &g);
        let verbatim = proportional(&ctx, ProportionalRule::CoalitionValue);
        // shares 0.36/1.84 and 1.24/1.84 of a -0.04 bill
        assert_abs_diff_eq!(verbatim.total(), 1.8 + 0.04 * 1.6 / 1.84, epsilon = 1e-12);
    }

    #[test]
    fn mechanism_names_round_trip() {
        for m in Mechanism::ALL {
            assert_eq!(m.name().parse::<Mechanism>().unwrap(), m);
            assert_eq!(serde_json::to_value(m).unwrap(), m.name());
        }
        assert!("nucleolus".parse::<Mechanism>().is_err());
    }

    #[test]
    fn shapley_weights_sum_to_one_per_player() {
        for n in 1..=8usize {
            let w = shapley_weights(n);
            // sum over coalitions containing a fixed player
            let total: f64 = (1..=n).map(|s| w[s] * binomial(n - 1, s - 1)).sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        }
    }

    fn binomial(n: usize, k: usize) -> f64 {
        (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
    }
}
