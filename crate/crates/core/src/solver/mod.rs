//! Exact schedulers for a single prosumer facing NEM and for a coalition
//! whose aggregate is billed by NEM.
//!
//! Both problems reduce to finding a price at which a monotone demand
//! curve meets a target. Device demand at price `mu` is the clamp of
//! `(alpha - mu) / beta` to the device box; a prosumer's net consumption
//! is that total minus its renewable output, clipped to its envelope.
//! The bill is convex piecewise linear with a kink at zero, so the
//! optimum is either importing at the retail rate, exporting at the
//! export rate, or sitting at zero net consumption with a price in
//! between.

pub mod oracle;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Coalition, Prosumer, QuadDevice, ScheduleResult, TariffHour};

pub const MAX_BISECTION_ITERS: usize = 200;
pub const PRICE_TOL: f64 = 1e-10;
pub const RESIDUAL_TOL: f64 = 1e-8;

/// Which branch of the optimality conditions the schedule landed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Import,
    ZeroNet,
    Export,
    EnvelopeClampedImport,
    EnvelopeClampedExport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSolution {
    pub regime: Regime,
    /// Effective marginal price; outside `[export, retail]` only when the
    /// envelope binds.
    pub mu: f64,
    pub schedule: ScheduleResult,
}

/// Total device demand at `mu`. Non-increasing in `mu`.
pub fn aggregate_demand(devices: &[QuadDevice], mu: f64) -> f64 {
    devices.iter().map(|d| d.demand(mu)).sum()
}

/// Finds `x` in `[lo, hi]` with `f(x) = target` for a continuous
/// non-increasing `f`, given `f(lo) >= target >= f(hi)`.
///
/// Bisection stops once the bracket is narrower than [`PRICE_TOL`] or the
/// residual drops below [`RESIDUAL_TOL`]. Because every curve solved here
/// is piecewise linear, a final interpolation across the bracket usually
/// lands on the root to machine precision; the better of the two points
/// is returned.
pub fn solve_decreasing(
    f: impl Fn(f64) -> f64,
    mut lo: f64,
    mut hi: f64,
    target: f64,
) -> Result<f64> {
    let mut f_lo = f(lo) - target;
    let mut f_hi = f(hi) - target;
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if !(f_lo > 0.0 && f_hi < 0.0) {
        return Err(Error::NonConvergence {
            iterations: 0,
            residual: f_lo.abs().min(f_hi.abs()),
        });
    }
    let mut best = if f_lo.abs() < f_hi.abs() { (lo, f_lo) } else { (hi, f_hi) };
    let mut converged = false;
    for _ in 0..MAX_BISECTION_ITERS {
        let mid = 0.5 * (lo + hi);
        let f_mid = f(mid) - target;
        if f_mid.abs() < best.1.abs() {
            best = (mid, f_mid);
        }
        if f_mid == 0.0 {
            return Ok(mid);
        }
        if f_mid > 0.0 {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
            f_hi = f_mid;
        }
        if hi - lo <= PRICE_TOL || f_mid.abs() <= RESIDUAL_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            iterations: MAX_BISECTION_ITERS,
            residual: best.1.abs(),
        });
    }
    let x = lo + f_lo / (f_lo - f_hi) * (hi - lo);
    if x.is_finite() && (lo..=hi).contains(&x) {
        let fx = f(x) - target;
        if fx.abs() < best.1.abs() {
            best = (x, fx);
        }
    }
    Ok(best.0)
}

/// Price at which every device sits at its lower bound.
fn price_at_min(devices: &[QuadDevice]) -> f64 {
    devices
        .iter()
        .map(|d| d.alpha - d.beta * d.d_min)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Price at which every device sits at its upper bound.
fn price_at_max(devices: &[QuadDevice]) -> f64 {
    devices
        .iter()
        .map(|d| d.alpha - d.beta * d.d_max)
        .fold(f64::INFINITY, f64::min)
}

fn demands(devices: &[QuadDevice], mu: f64) -> Vec<f64> {
    devices.iter().map(|d| d.demand(mu)).collect()
}

/// Moves the rounding residual of `sum(d) - total` onto devices with
/// slack so the bundle meets `total` to the last bit where possible.
fn absorb_residual(devices: &[QuadDevice], d: &mut [f64], total: f64) {
    for (k, dev) in devices.iter().enumerate() {
        let gap = total - d.iter().sum::<f64>();
        if gap == 0.0 {
            return;
        }
        d[k] = (d[k] + gap).clamp(dev.d_min, dev.d_max);
    }
}

/// Consumption bundle whose total is exactly `total`, split so that all
/// devices share one marginal price. Returns the bundle and that price.
fn bundle_for_total(devices: &[QuadDevice], total: f64, lo: f64, hi: f64) -> Result<(Vec<f64>, f64)> {
    let mu = solve_decreasing(|p| aggregate_demand(devices, p), lo, hi, total)?;
    let mut d = demands(devices, mu);
    absorb_residual(devices, &mut d, total);
    Ok((d, mu))
}

/// A prosumer's response to a single marginal price `mu`, with its own
/// envelope enforced.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct MemberResponse {
    pub d: Vec<f64>,
    pub z: f64,
    /// The prosumer's own marginal price: `mu`, unless an envelope binds.
    pub price: f64,
    pub clamped: Option<Regime>,
}

/// Net consumption at price `mu` after the envelope clip.
#[inline]
pub(crate) fn member_net(p: &Prosumer, mu: f64) -> f64 {
    (aggregate_demand(&p.devices, mu) - p.renewable).clamp(p.z_min, p.z_max)
}

pub(crate) fn member_response(p: &Prosumer, mu: f64) -> Result<MemberResponse> {
    let z = aggregate_demand(&p.devices, mu) - p.renewable;
    if z > p.z_max {
        let hi = price_at_min(&p.devices).max(mu);
        let (d, price) = bundle_for_total(&p.devices, p.z_max + p.renewable, mu, hi)?;
        let z = d.iter().sum::<f64>() - p.renewable;
        Ok(MemberResponse {
            d,
            z,
            price,
            clamped: Some(Regime::EnvelopeClampedImport),
        })
    } else if z < p.z_min {
        let lo = price_at_max(&p.devices).min(mu);
        let (d, price) = bundle_for_total(&p.devices, p.z_min + p.renewable, lo, mu)?;
        let z = d.iter().sum::<f64>() - p.renewable;
        Ok(MemberResponse {
            d,
            z,
            price,
            clamped: Some(Regime::EnvelopeClampedExport),
        })
    } else {
        Ok(MemberResponse {
            d: demands(&p.devices, mu),
            z,
            price: mu,
            clamped: None,
        })
    }
}

/// Surplus-maximizing schedule of one prosumer billed under NEM.
pub fn best_response(prosumer: &Prosumer, index: usize, tariff: TariffHour) -> Result<RegimeSolution> {
    let p = prosumer;
    let r = p.renewable;
    let import = aggregate_demand(&p.devices, tariff.retail) - r;
    let (regime, response) = if import > 0.0 {
        let resp = member_response(p, tariff.retail)?;
        (resp.clamped.unwrap_or(Regime::Import), resp)
    } else {
        let export = aggregate_demand(&p.devices, tariff.export) - r;
        if export < 0.0 {
            let resp = member_response(p, tariff.export)?;
            (resp.clamped.unwrap_or(Regime::Export), resp)
        } else {
            let mu = if import == 0.0 {
                tariff.retail
            } else if export == 0.0 {
                tariff.export
            } else {
                solve_decreasing(|m| aggregate_demand(&p.devices, m), tariff.export, tariff.retail, r)?
            };
            let mut d = demands(&p.devices, mu);
            absorb_residual(&p.devices, &mut d, r);
            let z = d.iter().sum::<f64>() - r;
            (
                Regime::ZeroNet,
                MemberResponse {
                    d,
                    z,
                    price: mu,
                    clamped: None,
                },
            )
        }
    };
    let welfare = p.utility_unchecked(&response.d) - tariff.payment(response.z);
    Ok(RegimeSolution {
        regime,
        mu: response.price,
        schedule: ScheduleResult {
            members: vec![index],
            d: vec![response.d],
            z: vec![response.z],
            mu: response.price,
            welfare,
        },
    })
}

fn members_of(community: &[Prosumer], coalition: Coalition) -> Result<Vec<usize>> {
    if coalition.is_empty() {
        return Err(Error::EmptyCoalition);
    }
    let members: Vec<usize> = coalition.members().collect();
    if let Some(&i) = members.iter().find(|&&i| i >= community.len()) {
        return Err(Error::invalid(format!(
            "coalition member {i} outside a community of {}",
            community.len()
        )));
    }
    Ok(members)
}

/// Welfare-maximizing joint schedule of a coalition whose aggregate net
/// consumption is billed under NEM.
///
/// Members are driven by one community price; a member whose envelope
/// binds stops following it. A single-member coalition is exactly the
/// prosumer's own best response.
pub fn centralized_schedule(
    community: &[Prosumer],
    coalition: Coalition,
    tariff: TariffHour,
) -> Result<RegimeSolution> {
    let members = members_of(community, coalition)?;
    if let [i] = members[..] {
        return best_response(&community[i], i, tariff);
    }
    community_solve(community, &members, tariff)
}

/// Coalition solve without the single-member shortcut.
pub(crate) fn community_solve(
    community: &[Prosumer],
    members: &[usize],
    tariff: TariffHour,
) -> Result<RegimeSolution> {
    let net = |mu: f64| -> f64 { members.iter().map(|&i| member_net(&community[i], mu)).sum() };
    let at_retail = net(tariff.retail);
    let (regime, mu) = if at_retail > 0.0 {
        (Regime::Import, tariff.retail)
    } else {
        let at_export = net(tariff.export);
        if at_export < 0.0 {
            (Regime::Export, tariff.export)
        } else if at_retail == 0.0 {
            (Regime::ZeroNet, tariff.retail)
        } else if at_export == 0.0 {
            (Regime::ZeroNet, tariff.export)
        } else {
            (
                Regime::ZeroNet,
                solve_decreasing(net, tariff.export, tariff.retail, 0.0)?,
            )
        }
    };

    let mut d = Vec::with_capacity(members.len());
    let mut z = Vec::with_capacity(members.len());
    let mut utility = 0.0;
    for &i in members {
        let resp = member_response(&community[i], mu)?;
        utility += community[i].utility_unchecked(&resp.d);
        d.push(resp.d);
        z.push(resp.z);
    }
    let welfare = utility - tariff.payment(z.iter().sum());
    Ok(RegimeSolution {
        regime,
        mu,
        schedule: ScheduleResult {
            members: members.to_vec(),
            d,
            z,
            mu,
            welfare,
        },
    })
}

/// Members of a coalition each scheduling against NEM on their own; the
/// welfare charges the coalition's aggregate, which folds any excess
/// collected by the operator back into the coalition.
pub fn decentralized_schedule(
    community: &[Prosumer],
    coalition: Coalition,
    tariff: TariffHour,
) -> Result<ScheduleResult> {
    let members = members_of(community, coalition)?;
    let responses = members
        .iter()
        .map(|&i| best_response(&community[i], i, tariff))
        .collect::<Result<Vec<_>>>()?;
    Ok(combine_responses(community, &responses, tariff))
}

pub(crate) fn combine_responses(
    community: &[Prosumer],
    responses: &[RegimeSolution],
    tariff: TariffHour,
) -> ScheduleResult {
    let mut members = Vec::with_capacity(responses.len());
    let mut d = Vec::with_capacity(responses.len());
    let mut z = Vec::with_capacity(responses.len());
    let mut utility = 0.0;
    for resp in responses {
        let i = resp.schedule.members[0];
        members.push(i);
        utility += community[i].utility_unchecked(&resp.schedule.d[0]);
        d.push(resp.schedule.d[0].clone());
        z.push(resp.schedule.z[0]);
    }
    let aggregate: f64 = z.iter().sum();
    ScheduleResult {
        members,
        d,
        z,
        mu: if aggregate >= 0.0 { tariff.retail } else { tariff.export },
        welfare: utility - tariff.payment(aggregate),
    }
}

/// Envelope-aware total consumption of a coalition at price `mu`: the
/// quantity the D-NEM thresholds compare renewables against.
pub fn coalition_demand(community: &[Prosumer], coalition: Coalition, mu: f64) -> f64 {
    coalition
        .members()
        .map(|i| member_net(&community[i], mu) + community[i].renewable)
        .sum()
}
