//! Scenario configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::data::{load_households, synth_generate, Household, LoadOptions, SynthParams};
use crate::alloc::{Mechanism, ProportionalRule};
use crate::error::{Error, Result};
use crate::model::{Prosumer, TariffHour, TouTariff};

/// A scenario as written in a JSON config file. Exactly one of
/// `households_file`, `synthetic` and `prosumers` supplies the
/// community; relative paths are resolved against the config's folder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tariff: Option<TouTariff>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tariff_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub households_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SynthParams>,
    /// Seed of the synthetic generator.
    #[serde(default)]
    pub data_seed: u64,
    /// Fixed prosumers, repeated for every tariff hour.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prosumers: Option<Vec<Prosumer>>,
    #[serde(default = "default_envelope")]
    pub envelope: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon_hours: Option<usize>,
    /// Defaults to every size from 1 to `min(households, 10)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coalition_sizes: Option<Vec<usize>>,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "default_mechanisms")]
    pub mechanisms: Vec<Mechanism>,
    #[serde(default)]
    pub proportional_rule: ProportionalRule,
    /// Seed of the Monte Carlo coalition draws.
    #[serde(default)]
    pub seed: u64,
    /// Keep every sampled hour in the welfare-gain report.
    #[serde(default)]
    pub record_samples: bool,
}

fn default_envelope() -> f64 {
    6.0
}
fn default_runs() -> usize {
    1000
}
fn default_mechanisms() -> Vec<Mechanism> {
    Mechanism::ALL.to_vec()
}

/// 24-hour tariff with a 4pm-8pm retail peak and a flat export rate.
pub fn default_tariff() -> TouTariff {
    TouTariff::time_of_use(24, vec![16, 17, 18, 19], 0.40, 0.20, 0.05).expect("default tariff is valid")
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            tariff: None,
            tariff_file: None,
            households_file: None,
            synthetic: None,
            data_seed: 0,
            prosumers: None,
            envelope: default_envelope(),
            horizon_hours: None,
            coalition_sizes: None,
            runs: default_runs(),
            mechanisms: default_mechanisms(),
            proportional_rule: ProportionalRule::default(),
            seed: 0,
            record_samples: false,
        }
    }
}

/// A loaded scenario: the tariff and each household's hourly records.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub tariff: TouTariff,
    pub households: Vec<Household>,
    /// Hours available to experiments.
    pub hours: usize,
}

impl Scenario {
    pub fn tariff_at(&self, hour: usize) -> TariffHour {
        self.tariff.at(hour)
    }

    /// Records of the selected households at one hour.
    pub fn community(&self, members: &[usize], hour: usize) -> Vec<Prosumer> {
        members.iter().map(|&i| self.households[i].hours[hour].clone()).collect()
    }

    pub fn ids(&self, members: &[usize]) -> Vec<String> {
        members.iter().map(|&i| self.households[i].id.clone()).collect()
    }

    /// Resolves household ids or indices to positions.
    pub fn select(&self, names: &[String]) -> Result<Vec<usize>> {
        if names.is_empty() {
            return Ok((0..self.households.len()).collect());
        }
        let mut out = Vec::with_capacity(names.len());
        for name in names {
            let found = self
                .households
                .iter()
                .position(|h| &h.id == name)
                .or_else(|| name.parse::<usize>().ok().filter(|&i| i < self.households.len()));
            match found {
                Some(i) if !out.contains(&i) => out.push(i),
                Some(_) => return Err(Error::invalid(format!("household {name} listed twice"))),
                None => return Err(Error::invalid(format!("unknown household {name}"))),
            }
        }
        Ok(out)
    }

    pub fn check_hour(&self, hour: usize) -> Result<()> {
        if hour < self.hours {
            Ok(())
        } else {
            Err(Error::invalid(format!("hour {hour} outside the {}-hour scenario", self.hours)))
        }
    }
}

impl ScenarioConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::invalid(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::invalid(format!("config {}: {e}", path.display())))
    }

    /// Reads tariff and household data, with relative paths taken from
    /// `base`.
    pub fn resolve(&self, base: &Path) -> Result<Scenario> {
        let read = |p: &Path| {
            let full = base.join(p);
            std::fs::read_to_string(&full)
                .map_err(|e| Error::invalid(format!("cannot read {}: {e}", full.display())))
        };
        let tariff = match (&self.tariff, &self.tariff_file) {
            (Some(_), Some(_)) => return Err(Error::invalid("give either tariff or tariff_file, not both")),
            (Some(t), None) => t.clone(),
            (None, Some(p)) => serde_json::from_str(&read(p)?)
                .map_err(|e| Error::invalid(format!("tariff file {}: {e}", p.display())))?,
            (None, None) => default_tariff(),
        };
        let options = LoadOptions {
            envelope: self.envelope,
            max_hours: None,
            ..LoadOptions::default()
        };
        let households = match (&self.households_file, &self.synthetic, &self.prosumers) {
            (Some(p), None, None) => load_households(&read(p)?, &tariff, options)?,
            (None, Some(params), None) => load_households(&synth_generate(params, self.data_seed)?, &tariff, options)?,
            (None, None, Some(list)) => {
                let mut out = Vec::with_capacity(list.len());
                for p in list {
                    p.validate()?;
                    if out.iter().any(|h: &Household| h.id == p.id) {
                        return Err(Error::invalid(format!("duplicate prosumer id {}", p.id)));
                    }
                    out.push(Household {
                        id: p.id.clone(),
                        hours: vec![p.clone(); tariff.hours()],
                    });
                }
                out
            }
            _ => {
                return Err(Error::invalid(
                    "give exactly one of households_file, synthetic and prosumers",
                ))
            }
        };
        let available = households.first().map_or(0, |h| h.hours.len());
        let hours = match self.horizon_hours {
            Some(h) if h > available => {
                return Err(Error::invalid(format!(
                    "horizon of {h} hours exceeds the {available} hours of data"
                )))
            }
            Some(h) => h,
            None => available,
        };
        Ok(Scenario {
            tariff,
            households,
            hours,
        })
    }

    /// Coalition sizes to sweep, checked against the household count.
    pub fn sizes(&self, households: usize) -> Result<Vec<usize>> {
        let sizes = match &self.coalition_sizes {
            Some(s) => s.clone(),
            None => (1..=households.min(10)).collect(),
        };
        if sizes.is_empty() {
            return Err(Error::invalid("no coalition sizes to evaluate"));
        }
        if let Some(&bad) = sizes.iter().find(|&&s| s == 0 || s > households) {
            return Err(Error::invalid(format!(
                "coalition size {bad} must be between 1 and the {households} households"
            )));
        }
        Ok(sizes)
    }
}
