//! Brute-force welfare maximization over a discretized consumption box.
//!
//! Used to check the schedulers. It knows nothing about prices or
//! regimes: it enumerates device bundles, discards those that break an
//! envelope, and scores the rest with utility minus the bill on the
//! aggregate net consumption.

use crate::error::{Error, Result};
use crate::model::{Prosumer, TariffHour};

/// Largest number of grid points a single search may visit.
pub const MAX_GRID_POINTS: usize = 10_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub welfare: f64,
    /// Best bundle found, one vector per prosumer.
    pub d: Vec<Vec<f64>>,
}

/// Axis of the search grid for one device.
fn axis(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let width = hi - lo;
    if width <= 0.0 {
        return vec![lo];
    }
    let n = (width / step).floor() as usize;
    let mut pts: Vec<f64> = (0..=n).map(|k| lo + k as f64 * step).collect();
    if hi - pts[pts.len() - 1] > 1e-12 {
        pts.push(hi);
    }
    pts
}

fn search(
    prosumers: &[Prosumer],
    tariff: TariffHour,
    axes: &[Vec<f64>],
) -> Option<OracleResult> {
    let shape: Vec<usize> = prosumers.iter().map(|p| p.devices.len()).collect();
    let mut idx = vec![0usize; axes.len()];
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut flat = vec![0.0; axes.len()];
    loop {
        for (k, &i) in idx.iter().enumerate() {
            flat[k] = axes[k][i];
        }
        if let Some(w) = score(prosumers, &shape, &flat, tariff) {
            if best.as_ref().is_none_or(|(b, _)| w > *b) {
                best = Some((w, flat.clone()));
            }
        }
        // odometer increment
        let mut k = 0;
        loop {
            if k == axes.len() {
                return best.map(|(welfare, flat)| OracleResult {
                    welfare,
                    d: unflatten(&shape, &flat),
                });
            }
            idx[k] += 1;
            if idx[k] < axes[k].len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

fn unflatten(shape: &[usize], flat: &[f64]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(shape.len());
    let mut at = 0;
    for &n in shape {
        out.push(flat[at..at + n].to_vec());
        at += n;
    }
    out
}

fn score(prosumers: &[Prosumer], shape: &[usize], flat: &[f64], tariff: TariffHour) -> Option<f64> {
    let mut at = 0;
    let mut utility = 0.0;
    let mut net = 0.0;
    for (p, &n) in prosumers.iter().zip(shape) {
        let d = &flat[at..at + n];
        at += n;
        let z = d.iter().sum::<f64>() - p.renewable;
        if z > p.z_max + 1e-12 || z < p.z_min - 1e-12 {
            return None;
        }
        utility += p.utility(d).ok()?;
        net += z;
    }
    Some(utility - tariff.payment(net))
}

fn grid_size(axes: &[Vec<f64>]) -> Option<usize> {
    axes.iter().try_fold(1usize, |acc, a| acc.checked_mul(a.len()))
}

/// Exhaustive search at spacing `resolution` over every device box.
///
/// A single prosumer gives its standalone optimum; several give the
/// coalition optimum with the bill on their aggregate.
pub fn grid_oracle(prosumers: &[Prosumer], tariff: TariffHour, resolution: f64) -> Result<OracleResult> {
    if !(resolution > 0.0 && resolution.is_finite()) {
        return Err(Error::invalid("oracle resolution must be positive"));
    }
    let axes: Vec<Vec<f64>> = prosumers
        .iter()
        .flat_map(|p| p.devices.iter().map(|d| axis(d.d_min, d.d_max, resolution)))
        .collect();
    match grid_size(&axes) {
        Some(n) if n <= MAX_GRID_POINTS => {}
        n => {
            return Err(Error::invalid(format!(
                "oracle grid of {} points exceeds the {MAX_GRID_POINTS} point guard",
                n.map_or_else(|| "overflowing".to_string(), |n| n.to_string())
            )))
        }
    }
    search(prosumers, tariff, &axes).ok_or_else(|| Error::invalid("no grid point satisfies the envelopes"))
}

/// Coarse-to-fine grid search for instances whose full grid would exceed
/// the point guard: each pass enumerates `points_per_axis` values per
/// device around the incumbent and then narrows the window, until the
/// spacing reaches `resolution`.
pub fn refined_grid_oracle(
    prosumers: &[Prosumer],
    tariff: TariffHour,
    resolution: f64,
    points_per_axis: usize,
) -> Result<OracleResult> {
    if points_per_axis < 3 {
        return Err(Error::invalid("refinement needs at least 3 points per axis"));
    }
    let bounds: Vec<(f64, f64)> = prosumers
        .iter()
        .flat_map(|p| p.devices.iter().map(|d| (d.d_min, d.d_max)))
        .collect();
    if points_per_axis
        .checked_pow(bounds.len() as u32)
        .is_none_or(|n| n > MAX_GRID_POINTS)
    {
        return Err(Error::invalid("refinement grid exceeds the point guard"));
    }
    let mut window = bounds.clone();
    let mut best: Option<OracleResult> = None;
    loop {
        let steps: Vec<f64> = window
            .iter()
            .map(|&(lo, hi)| ((hi - lo) / (points_per_axis - 1) as f64).max(resolution))
            .collect();
        let axes: Vec<Vec<f64>> = window
            .iter()
            .zip(&steps)
            .map(|(&(lo, hi), &s)| axis(lo, hi, s))
            .collect();
        if let Some(found) = search(prosumers, tariff, &axes) {
            if best.as_ref().is_none_or(|b| found.welfare >= b.welfare) {
                best = Some(found);
            }
        }
        let Some(incumbent) = best.as_ref() else {
            return Err(Error::invalid("no grid point satisfies the envelopes"));
        };
        if steps.iter().all(|&s| s <= resolution) {
            return Ok(incumbent.clone());
        }
        let flat: Vec<f64> = incumbent.d.iter().flatten().copied().collect();
        window = flat
            .iter()
            .zip(&steps)
            .zip(&bounds)
            .map(|((&x, &s), &(lo, hi))| ((x - 2.0 * s).max(lo), (x + 2.0 * s).min(hi)))
            .collect();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::QuadDevice;

    fn prosumer(r: f64) -> Prosumer {
        let dev = QuadDevice::new(1.0, 0.5, 0.0, 10.0).unwrap();
        Prosumer::new("p", vec![dev], r, -6.0, 6.0).unwrap()
    }

    fn tariff() -> TariffHour {
        TariffHour::new(0.4, 0.2).unwrap()
    }

    #[test]
    fn single_prosumer_zero_net() {
        let res = grid_oracle(&[prosumer(1.5)], tariff(), 1e-3).unwrap();
        assert!((res.welfare - 0.9375).abs() < 1e-4);
    }

    #[test]
    fn two_prosumer_coalition() {
        let res = grid_oracle(&[prosumer(0.0), prosumer(3.0)], tariff(), 5e-3).unwrap();
        assert!((res.welfare - 1.875).abs() < 1e-4);
        let refined = refined_grid_oracle(&[prosumer(0.0), prosumer(3.0)], tariff(), 1e-4, 41).unwrap();
        assert!((refined.welfare - 1.875).abs() < 1e-6);
    }

    #[test]
    fn coarse_resolution_gives_box_corners() {
        let res = grid_oracle(&[prosumer(0.0)], tariff(), 100.0).unwrap();
        // only d = 0 and d = 10 exist; d = 10 breaks the import envelope
        assert_eq!(res.d, vec![vec![0.0]]);
        assert_eq!(res.welfare, 0.0);
    }

    #[test]
    fn guard_and_bad_resolution() {
        let many = vec![prosumer(0.0); 3];
        assert!(grid_oracle(&many, tariff(), 1e-3).is_err());
        assert!(grid_oracle(&many, tariff(), 0.0).is_err());
    }
}
