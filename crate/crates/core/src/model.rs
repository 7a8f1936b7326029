//! Tariffs, flexible devices, prosumers and the primitive billing and
//! utility evaluations that the schedulers and the game are built from.
//!
//! Energy is in kWh and money in dollars throughout. The horizon is a
//! sequence of independent billing periods (hours); nothing here couples
//! one hour to the next.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance used for consistency checks on physical quantities.
pub const TOL: f64 = 1e-9;

fn finite(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::invalid(format!("{name} must be finite, got {v}")))
    }
}

/// NEM bill for one billing period: imports are charged at the retail
/// rate, exports credited at the export rate.
///
/// ```
/// let bill = coopgrid::model::payment(2.0, 0.4, 0.2).unwrap();
/// assert!((bill - 0.8).abs() < 1e-12);
/// ```
pub fn payment(z: f64, pi_plus: f64, pi_minus: f64) -> Result<f64> {
    finite("net consumption", z)?;
    finite("retail rate", pi_plus)?;
    finite("export rate", pi_minus)?;
    if pi_minus > pi_plus {
        return Err(Error::invalid(format!(
            "export rate {pi_minus} exceeds retail rate {pi_plus}"
        )));
    }
    Ok(bill(z, pi_plus, pi_minus))
}

#[inline]
fn bill(z: f64, pi_plus: f64, pi_minus: f64) -> f64 {
    pi_plus * z.max(0.0) - pi_minus * (-z).max(0.0)
}

/// The retail/export price pair in force during one billing period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TariffHour {
    pub retail: f64,
    pub export: f64,
}

impl TariffHour {
    pub fn new(retail: f64, export: f64) -> Result<Self> {
        finite("retail rate", retail)?;
        finite("export rate", export)?;
        if export < 0.0 || export > retail {
            return Err(Error::invalid(format!(
                "tariff needs 0 <= export <= retail, got retail {retail}, export {export}"
            )));
        }
        Ok(TariffHour { retail, export })
    }

    /// A single two-sided price, as used by the D-NEM community price.
    pub fn flat(price: f64) -> Result<Self> {
        Self::new(price, price)
    }

    #[inline]
    pub fn payment(&self, z: f64) -> f64 {
        bill(z, self.retail, self.export)
    }
}

/// Time-of-use NEM tariff over a horizon of billing periods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TariffDoc", into = "TariffDoc")]
pub struct TouTariff {
    retail: Vec<f64>,
    export: Vec<f64>,
    on_peak_hours: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct TariffDoc {
    hours: usize,
    retail: Vec<f64>,
    export: Vec<f64>,
    #[serde(default)]
    on_peak_hours: Vec<usize>,
}

impl TryFrom<TariffDoc> for TouTariff {
    type Error = Error;

    fn try_from(doc: TariffDoc) -> Result<Self> {
        if doc.retail.len() != doc.hours || doc.export.len() != doc.hours {
            return Err(Error::invalid(format!(
                "tariff declares {} hours but has {} retail and {} export prices",
                doc.hours,
                doc.retail.len(),
                doc.export.len()
            )));
        }
        TouTariff::new(doc.retail, doc.export, doc.on_peak_hours)
    }
}

impl From<TouTariff> for TariffDoc {
    fn from(t: TouTariff) -> Self {
        TariffDoc {
            hours: t.retail.len(),
            retail: t.retail,
            export: t.export,
            on_peak_hours: t.on_peak_hours,
        }
    }
}

impl TouTariff {
    pub fn new(retail: Vec<f64>, export: Vec<f64>, on_peak_hours: Vec<usize>) -> Result<Self> {
        if retail.is_empty() {
            return Err(Error::invalid("tariff has no hours"));
        }
        if retail.len() != export.len() {
            return Err(Error::invalid("retail and export price series differ in length"));
        }
        for (t, (&p, &m)) in retail.iter().zip(&export).enumerate() {
            TariffHour::new(p, m)
                .map_err(|e| Error::invalid(format!("hour {t}: {e}")))?;
        }
        if let Some(&h) = on_peak_hours.iter().find(|&&h| h >= retail.len()) {
            return Err(Error::invalid(format!("on-peak hour {h} outside the tariff")));
        }
        let mut on_peak_hours = on_peak_hours;
        on_peak_hours.sort_unstable();
        on_peak_hours.dedup();
        Ok(TouTariff {
            retail,
            export,
            on_peak_hours,
        })
    }

    /// Two-level retail rate: `on_peak` during `on_peak_hours`, `off_peak`
    /// otherwise, with a flat export rate.
    pub fn time_of_use(
        hours: usize,
        on_peak_hours: Vec<usize>,
        on_peak: f64,
        off_peak: f64,
        export: f64,
    ) -> Result<Self> {
        let retail = (0..hours)
            .map(|h| if on_peak_hours.contains(&h) { on_peak } else { off_peak })
            .collect();
        Self::new(retail, vec![export; hours], on_peak_hours)
    }

    pub fn hours(&self) -> usize {
        self.retail.len()
    }

    pub fn retail(&self) -> &[f64] {
        &self.retail
    }

    pub fn export(&self) -> &[f64] {
        &self.export
    }

    pub fn on_peak_hours(&self) -> &[usize] {
        &self.on_peak_hours
    }

    /// Prices for an absolute hour index; the tariff repeats with its own
    /// period, so a 24-hour tariff covers any number of days.
    pub fn at(&self, hour: usize) -> TariffHour {
        let t = hour % self.retail.len();
        TariffHour {
            retail: self.retail[t],
            export: self.export[t],
        }
    }
}

/// A flexible load with quadratic utility `alpha*d - beta*d^2/2`, flat
/// beyond its satiation point `alpha/beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadDevice {
    pub alpha: f64,
    pub beta: f64,
    pub d_min: f64,
    pub d_max: f64,
}

impl QuadDevice {
    pub fn new(alpha: f64, beta: f64, d_min: f64, d_max: f64) -> Result<Self> {
        let dev = QuadDevice {
            alpha,
            beta,
            d_min,
            d_max,
        };
        dev.validate()?;
        Ok(dev)
    }

    pub fn validate(&self) -> Result<()> {
        finite("alpha", self.alpha)?;
        finite("beta", self.beta)?;
        finite("d_min", self.d_min)?;
        finite("d_max", self.d_max)?;
        if self.beta <= 0.0 {
            return Err(Error::invalid(format!("beta must be positive, got {}", self.beta)));
        }
        if self.alpha < 0.0 {
            return Err(Error::invalid(format!("alpha must be non-negative, got {}", self.alpha)));
        }
        if self.d_min < 0.0 || self.d_min > self.d_max {
            return Err(Error::invalid(format!(
                "device bounds need 0 <= d_min <= d_max, got [{}, {}]",
                self.d_min, self.d_max
            )));
        }
        Ok(())
    }

    pub fn satiation(&self) -> f64 {
        self.alpha / self.beta
    }

    /// Utility without the input check; callers guarantee `d >= 0`.
    #[inline]
    pub(crate) fn value(&self, d: f64) -> f64 {
        if d <= self.satiation() {
            self.alpha * d - 0.5 * self.beta * d * d
        } else {
            self.alpha * self.alpha / (2.0 * self.beta)
        }
    }

    /// Consumption that equates marginal utility with `price`, clipped to
    /// the device box. Below zero price the quadratic branch keeps
    /// extending so the curve stays continuous; those points sit on the
    /// utility plateau and are all optimal for absorbing forced energy.
    #[inline]
    pub fn demand(&self, price: f64) -> f64 {
        ((self.alpha - price) / self.beta).clamp(self.d_min, self.d_max)
    }
}

/// Utility of consuming `d` kWh on `device`.
pub fn utility(device: &QuadDevice, d: f64) -> Result<f64> {
    finite("consumption", d)?;
    if d < 0.0 {
        return Err(Error::invalid(format!("consumption must be non-negative, got {d}")));
    }
    Ok(device.value(d))
}

/// Builds a device whose first-order condition reproduces the baseline
/// consumption at the baseline price with the given point elasticity.
pub fn calibrate_device(
    baseline_price: f64,
    baseline_consumption: f64,
    elasticity: f64,
    bounds: CalibrationBounds,
) -> Result<QuadDevice> {
    finite("baseline price", baseline_price)?;
    finite("baseline consumption", baseline_consumption)?;
    finite("elasticity", elasticity)?;
    if baseline_price <= 0.0 || baseline_consumption <= 0.0 {
        return Err(Error::invalid(
            "baseline price and consumption must be positive",
        ));
    }
    if elasticity >= 0.0 {
        return Err(Error::invalid(format!(
            "elasticity must be negative, got {elasticity}"
        )));
    }
    let beta = -baseline_price / (elasticity * baseline_consumption);
    if !(beta >= f64::MIN_POSITIVE && beta.is_finite()) {
        return Err(Error::invalid(format!("calibrated beta {beta} is not positive")));
    }
    let alpha = baseline_price + beta * baseline_consumption;
    QuadDevice::new(
        alpha,
        beta,
        bounds.d_min_factor * baseline_consumption,
        bounds.d_max_factor * baseline_consumption,
    )
}

/// Device box as multiples of the baseline consumption.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBounds {
    pub d_min_factor: f64,
    pub d_max_factor: f64,
}

impl Default for CalibrationBounds {
    fn default() -> Self {
        CalibrationBounds {
            d_min_factor: 0.0,
            d_max_factor: 2.0,
        }
    }
}

/// One customer during one billing period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prosumer {
    pub id: String,
    pub devices: Vec<QuadDevice>,
    pub renewable: f64,
    pub z_min: f64,
    pub z_max: f64,
}

impl Prosumer {
    pub fn new(
        id: impl Into<String>,
        devices: Vec<QuadDevice>,
        renewable: f64,
        z_min: f64,
        z_max: f64,
    ) -> Result<Self> {
        let p = Prosumer {
            id: id.into(),
            devices,
            renewable,
            z_min,
            z_max,
        };
        p.validate()?;
        Ok(p)
    }

    /// Checks device parameters, the sign of the envelopes, and that the
    /// envelopes leave at least one feasible schedule.
    pub fn validate(&self) -> Result<()> {
        let infeasible = |reason: String| Error::InfeasibleProsumer {
            id: self.id.clone(),
            reason,
        };
        for d in &self.devices {
            d.validate().map_err(|e| infeasible(e.to_string()))?;
        }
        for (name, v) in [
            ("renewable", self.renewable),
            ("z_min", self.z_min),
            ("z_max", self.z_max),
        ] {
            finite(name, v).map_err(|e| infeasible(e.to_string()))?;
        }
        if self.renewable < 0.0 {
            return Err(infeasible(format!("negative renewable {}", self.renewable)));
        }
        if self.z_min > 0.0 || self.z_max < 0.0 {
            return Err(infeasible(format!(
                "envelope [{}, {}] must contain zero",
                self.z_min, self.z_max
            )));
        }
        let lo = self.min_consumption() - self.renewable;
        let hi = self.max_consumption() - self.renewable;
        if self.z_max < lo {
            return Err(infeasible(format!(
                "import envelope {} below minimum net consumption {lo}",
                self.z_max
            )));
        }
        if self.z_min > hi {
            return Err(infeasible(format!(
                "export envelope {} above maximum net consumption {hi}",
                self.z_min
            )));
        }
        Ok(())
    }

    pub fn min_consumption(&self) -> f64 {
        self.devices.iter().map(|d| d.d_min).sum()
    }

    pub fn max_consumption(&self) -> f64 {
        self.devices.iter().map(|d| d.d_max).sum()
    }

    /// Total utility of a consumption bundle (one entry per device).
    pub fn utility(&self, d: &[f64]) -> Result<f64> {
        if d.len() != self.devices.len() {
            return Err(Error::invalid(format!(
                "bundle has {} entries for {} devices",
                d.len(),
                self.devices.len()
            )));
        }
        self.devices
            .iter()
            .zip(d)
            .map(|(dev, &x)| utility(dev, x))
            .sum()
    }

    pub(crate) fn utility_unchecked(&self, d: &[f64]) -> f64 {
        self.devices.iter().zip(d).map(|(dev, &x)| dev.value(x)).sum()
    }
}

/// Utility of `d` minus the NEM bill on `z`, after checking that
/// `z = sum(d) - r`.
pub fn surplus(prosumer: &Prosumer, d: &[f64], z: f64, tariff: TariffHour) -> Result<f64> {
    finite("net consumption", z)?;
    let u = prosumer.utility(d)?;
    let implied = d.iter().sum::<f64>() - prosumer.renewable;
    if (implied - z).abs() > TOL {
        return Err(Error::invalid(format!(
            "net consumption {z} inconsistent with bundle (implies {implied})"
        )));
    }
    Ok(u - payment(z, tariff.retail, tariff.export)?)
}

/// A set of prosumers, as a bitmask over indices of the grand coalition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Coalition(pub u32);

impl Coalition {
    pub const EMPTY: Coalition = Coalition(0);
    pub const MAX_PLAYERS: usize = 31;

    pub fn grand(players: usize) -> Coalition {
        assert!(players <= Self::MAX_PLAYERS);
        Coalition(((1u64 << players) - 1) as u32)
    }

    pub fn singleton(i: usize) -> Coalition {
        Coalition(1 << i)
    }

    pub fn from_members(members: impl IntoIterator<Item = usize>) -> Coalition {
        Coalition(members.into_iter().fold(0, |m, i| m | (1 << i)))
    }

    pub fn mask(self) -> usize {
        self.0 as usize
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn contains(self, i: usize) -> bool {
        i < 32 && self.0 & (1 << i) != 0
    }

    pub fn with(self, i: usize) -> Coalition {
        Coalition(self.0 | (1 << i))
    }

    pub fn without(self, i: usize) -> Coalition {
        Coalition(self.0 & !(1 << i))
    }

    pub fn union(self, other: Coalition) -> Coalition {
        Coalition(self.0 | other.0)
    }

    pub fn is_disjoint(self, other: Coalition) -> bool {
        self.0 & other.0 == 0
    }

    pub fn is_subset(self, other: Coalition) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn members(self) -> impl Iterator<Item = usize> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                None
            } else {
                let i = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(i)
            }
        })
    }

    /// All subsets of `self`, including the empty set and `self`.
    pub fn subsets(self) -> impl Iterator<Item = Coalition> {
        let full = self.0;
        let mut next = Some(0u32);
        std::iter::from_fn(move || {
            let cur = next?;
            next = if cur == full {
                None
            } else {
                Some((cur.wrapping_sub(full)) & full)
            };
            Some(Coalition(cur))
        })
    }
}

/// Optimal schedule of a set of prosumers in one billing period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleResult {
    /// Indices of the scheduled prosumers, in the order of `d` and `z`.
    pub members: Vec<usize>,
    /// Consumption per device, per member.
    pub d: Vec<Vec<f64>>,
    /// Net consumption per member.
    pub z: Vec<f64>,
    /// Marginal price of energy at the optimum.
    pub mu: f64,
    /// Total surplus, with the bill charged on the aggregate net consumption.
    pub welfare: f64,
}

impl ScheduleResult {
    pub fn aggregate_z(&self) -> f64 {
        self.z.iter().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn dev() -> QuadDevice {
        QuadDevice::new(1.0, 0.5, 0.0, 10.0).unwrap()
    }

    #[test]
    fn payment_examples() {
        assert_abs_diff_eq!(payment(2.0, 0.4, 0.2).unwrap(), 0.8, epsilon = 1e-15);
        assert_eq!(payment(0.0, 0.4, 0.2).unwrap(), 0.0);
        assert_eq!(payment(0.0, 7.0, 1.0).unwrap(), 0.0);
        assert_abs_diff_eq!(payment(-1.4, 0.4, 0.2).unwrap(), -0.28, epsilon = 1e-15);
    }

    #[test]
    fn payment_rejects_bad_prices() {
        assert!(payment(1.0, 0.2, 0.4).is_err());
        assert!(payment(f64::NAN, 0.4, 0.2).is_err());
        assert!(payment(1.0, f64::INFINITY, 0.2).is_err());
    }

    /// Midpoint-rule integral of the marginal utility, independent of the
    /// closed form.
    fn integrate_marginal(dev: &QuadDevice, d: f64) -> f64 {
        let n = 200_000;
        let h = d / n as f64;
        (0..n)
            .map(|k| {
                let x = (k as f64 + 0.5) * h;
                (dev.alpha - dev.beta * x).max(0.0) * h
            })
            .sum()
    }

    #[test]
    fn utility_examples() {
        let dev = dev();
        assert_eq!(utility(&dev, 0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(utility(&dev, 1.2).unwrap(), 0.84, epsilon = 1e-12);
        assert_abs_diff_eq!(integrate_marginal(&dev, 1.2), 0.84, epsilon = 1e-9);
        assert_abs_diff_eq!(utility(&dev, 3.0).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(integrate_marginal(&dev, 3.0), 1.0, epsilon = 1e-9);
        assert!(utility(&dev, -0.1).is_err());
    }

    #[test]
    fn surplus_examples() {
        let tariff = TariffHour::new(0.4, 0.2).unwrap();
        let importer = Prosumer::new("a", vec![dev()], 0.0, -6.0, 6.0).unwrap();
        assert_abs_diff_eq!(surplus(&importer, &[1.2], 1.2, tariff).unwrap(), 0.36, epsilon = 1e-12);
        assert_eq!(surplus(&importer, &[0.0], 0.0, tariff).unwrap(), 0.0);

        let exporter = Prosumer::new("b", vec![dev()], 3.0, -6.0, 6.0).unwrap();
        assert_abs_diff_eq!(surplus(&exporter, &[1.6], -1.4, tariff).unwrap(), 1.24, epsilon = 1e-12);
        assert!(surplus(&exporter, &[1.6], -1.0, tariff).is_err());
        assert!(surplus(&exporter, &[1.6, 0.0], -1.4, tariff).is_err());
    }

    #[test]
    fn calibration_examples() {
        let b = CalibrationBounds::default();
        let d = calibrate_device(0.25, 1.0, -0.5, b).unwrap();
        assert_abs_diff_eq!(d.beta, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(d.alpha, 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(d.alpha - d.beta * 1.0, 0.25, epsilon = 1e-15);
        assert_eq!((d.d_min, d.d_max), (0.0, 2.0));

        let d = calibrate_device(0.4, 1.2, -1.0, b).unwrap();
        assert_abs_diff_eq!(d.beta, 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.alpha, 0.8, epsilon = 1e-15);
        // point elasticity (dD/dp) * p / D at the baseline
        assert_abs_diff_eq!((-1.0 / d.beta) * 0.4 / 1.2, -1.0, epsilon = 1e-12);

        assert!(calibrate_device(0.4, 1.2, 0.0, b).is_err());
        assert!(calibrate_device(0.4, 1.2, 0.3, b).is_err());
        assert!(calibrate_device(0.4, 1.2, f64::NEG_INFINITY, b).is_err());
        assert!(calibrate_device(0.4, 1.2, -1e308, b).is_err());
    }

    #[test]
    fn prosumer_feasibility() {
        assert!(Prosumer::new("x", vec![dev()], 0.0, 0.5, 6.0).is_err());
        assert!(Prosumer::new("x", vec![dev()], -1.0, -6.0, 6.0).is_err());
        // forced export beyond the envelope even at full consumption
        assert!(Prosumer::new("x", vec![dev()], 17.0, -6.0, 6.0).is_err());
        let big_min = QuadDevice::new(1.0, 0.5, 8.0, 10.0).unwrap();
        assert!(Prosumer::new("x", vec![big_min], 0.0, -6.0, 6.0).is_err());
        assert!(Prosumer::new("x", vec![], 0.0, -6.0, 6.0).is_ok());
    }

    #[test]
    fn tariff_validation_and_tou() {
        assert!(TouTariff::new(vec![0.4], vec![0.5], vec![]).is_err());
        assert!(TouTariff::new(vec![0.4], vec![-0.1], vec![]).is_err());
        let t = TouTariff::time_of_use(24, (16..21).collect(), 0.4, 0.2, 0.05).unwrap();
        assert_eq!(t.at(17).retail, 0.4);
        assert_eq!(t.at(3).retail, 0.2);
        assert_eq!(t.at(24 + 17).retail, 0.4);

        let json = serde_json::to_string(&t).unwrap();
        let back: TouTariff = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
        let bad = r#"{"hours":2,"retail":[0.4],"export":[0.1,0.1]}"#;
        assert!(serde_json::from_str::<TouTariff>(bad).is_err());
    }

    #[test]
    fn coalition_bits() {
        let c = Coalition::from_members([0, 2, 3]);
        assert_eq!(c.members().collect::<Vec<_>>(), vec![0, 2, 3]);
        assert_eq!(c.len(), 3);
        assert_eq!(c.subsets().count(), 8);
        assert!(c.subsets().all(|s| s.is_subset(c)));
        assert_eq!(Coalition::grand(3).mask(), 7);
        assert_eq!(Coalition::EMPTY.subsets().collect::<Vec<_>>(), vec![Coalition::EMPTY]);
    }
}
