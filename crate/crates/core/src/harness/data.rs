//! Household data: CSV ingestion and a synthetic profile generator.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, RowError};
use crate::model::{calibrate_device, CalibrationBounds, Prosumer, TouTariff};

pub const CSV_COLUMNS: [&str; 5] = ["household_id", "hour", "baseline_kwh", "solar_kwh", "elasticity"];

/// One household's hourly prosumer records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Household {
    pub id: String,
    pub hours: Vec<Prosumer>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadOptions {
    /// Symmetric envelope `[-envelope, envelope]` on net consumption.
    pub envelope: f64,
    pub bounds: CalibrationBounds,
    /// Rows at or beyond this hour are rejected.
    pub max_hours: Option<usize>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            envelope: 6.0,
            bounds: CalibrationBounds::default(),
            max_hours: None,
        }
    }
}

struct Row {
    line: u64,
    household: String,
    hour: usize,
    baseline: f64,
    solar: f64,
    elasticity: f64,
}

fn parse_row(record: &csv::StringRecord, cols: &[usize; 5]) -> std::result::Result<Row, String> {
    let field = |k: usize| record.get(cols[k]).unwrap_or("");
    let number = |k: usize| -> std::result::Result<f64, String> {
        let v: f64 = field(k)
            .parse()
            .map_err(|_| format!("{} {:?} is not a number", CSV_COLUMNS[k], field(k)))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("{} must be finite", CSV_COLUMNS[k]))
        }
    };
    let household = field(0).to_string();
    if household.is_empty() {
        return Err("empty household_id".into());
    }
    let hour: usize = field(1)
        .parse()
        .map_err(|_| format!("hour {:?} is not a non-negative integer", field(1)))?;
    let baseline = number(2)?;
    let solar = number(3)?;
    let elasticity = number(4)?;
    if baseline < 0.0 {
        return Err(format!("negative baseline_kwh {baseline}"));
    }
    if solar < 0.0 {
        return Err(format!("negative solar_kwh {solar}"));
    }
    if elasticity >= 0.0 {
        return Err(format!("elasticity {elasticity} must be negative"));
    }
    Ok(Row {
        line: record.position().map_or(0, |p| p.line()),
        household,
        hour,
        baseline,
        solar,
        elasticity,
    })
}

/// Parses the households CSV and calibrates one prosumer per
/// (household, hour) against that hour's retail price.
///
/// Every household must cover the same hours `0..T` exactly once. All
/// row problems are collected and returned together.
pub fn load_households(csv_text: &str, tariff: &TouTariff, options: LoadOptions) -> Result<Vec<Household>> {
    if !(options.envelope > 0.0 && options.envelope.is_finite()) {
        return Err(Error::invalid("envelope must be positive"));
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(csv_text.as_bytes());
    let headers = reader.headers()?.clone();
    let mut cols = [0usize; 5];
    let mut missing = Vec::new();
    for (k, name) in CSV_COLUMNS.iter().enumerate() {
        match headers.iter().position(|h| h == *name) {
            Some(c) => cols[k] = c,
            None => missing.push(*name),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Rows(vec![RowError {
            line: 1,
            message: format!("missing column(s): {}", missing.join(", ")),
        }]));
    }

    let mut errors = Vec::new();
    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<Row>> = HashMap::new();
    for record in reader.records() {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                errors.push(RowError { line, message: e.to_string() });
                continue;
            }
        };
        let line = record.position().map_or(0, |p| p.line());
        match parse_row(&record, &cols) {
            Ok(row) => {
                if let Some(max) = options.max_hours {
                    if row.hour >= max {
                        errors.push(RowError {
                            line,
                            message: format!("hour {} outside the {max}-hour horizon", row.hour),
                        });
                        continue;
                    }
                }
                if !rows.contains_key(&row.household) {
                    order.push(row.household.clone());
                }
                rows.entry(row.household.clone()).or_default().push(row);
            }
            Err(message) => errors.push(RowError { line, message }),
        }
    }

    let horizon = rows
        .values()
        .flat_map(|rs| rs.iter().map(|r| r.hour + 1))
        .max()
        .unwrap_or(0);
    let mut households = Vec::with_capacity(order.len());
    for id in order {
        let mut slots: Vec<Option<Prosumer>> = vec![None; horizon];
        for row in &rows[&id] {
            if slots[row.hour].is_some() {
                errors.push(RowError {
                    line: row.line,
                    message: format!("duplicate hour {} for household {id}", row.hour),
                });
                continue;
            }
            match build_prosumer(row, tariff, options) {
                Ok(p) => slots[row.hour] = Some(p),
                Err(e) => errors.push(RowError {
                    line: row.line,
                    message: e.to_string(),
                }),
            }
        }
        let gaps: Vec<String> = slots
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_none())
            .map(|(h, _)| h.to_string())
            .collect();
        let failed_here = errors.iter().any(|e| rows[&id].iter().any(|r| r.line == e.line));
        if !gaps.is_empty() && !failed_here {
            errors.push(RowError {
                line: rows[&id][0].line,
                message: format!("household {id} has no rows for hour(s) {}", gaps.join(", ")),
            });
        }
        households.push(Household {
            id,
            hours: slots.into_iter().flatten().collect(),
        });
    }
    if errors.is_empty() {
        Ok(households)
    } else {
        errors.sort_by_key(|e| e.line);
        Err(Error::Rows(errors))
    }
}

fn build_prosumer(row: &Row, tariff: &TouTariff, options: LoadOptions) -> Result<Prosumer> {
    let devices = if row.baseline > 0.0 {
        let price = tariff.at(row.hour).retail;
        vec![calibrate_device(price, row.baseline, row.elasticity, options.bounds)?]
    } else {
        Vec::new()
    };
    Prosumer::new(
        row.household.clone(),
        devices,
        row.solar,
        -options.envelope,
        options.envelope,
    )
}

/// Parameters of the synthetic household generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthParams {
    pub count: usize,
    #[serde(default = "default_days")]
    pub days: usize,
    /// Per-household elasticity is uniform in this range.
    #[serde(default = "default_elasticity")]
    pub elasticity: [f64; 2],
    /// Peak solar output (kWh per hour) is uniform in this range.
    #[serde(default = "default_solar")]
    pub solar_capacity: [f64; 2],
    /// Per-household multiplier on the consumption template.
    #[serde(default = "default_scale")]
    pub baseline_scale: [f64; 2],
    /// Consumption (kWh) at the template's evening peak.
    #[serde(default = "default_peak")]
    pub template_peak: f64,
}

fn default_days() -> usize {
    1
}
fn default_elasticity() -> [f64; 2] {
    [-0.8, -0.2]
}
fn default_solar() -> [f64; 2] {
    [0.0, 5.0]
}
fn default_scale() -> [f64; 2] {
    [0.5, 1.5]
}
fn default_peak() -> f64 {
    1.0
}

impl SynthParams {
    pub fn new(count: usize) -> Self {
        SynthParams {
            count,
            days: default_days(),
            elasticity: default_elasticity(),
            solar_capacity: default_solar(),
            baseline_scale: default_scale(),
            template_peak: default_peak(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::invalid("synthetic household count must be at least 1"));
        }
        if self.days == 0 {
            return Err(Error::invalid("synthetic days must be at least 1"));
        }
        let range = |name: &str, [lo, hi]: [f64; 2]| {
            if lo.is_finite() && hi.is_finite() && lo <= hi {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} range [{lo}, {hi}] is degenerate")))
            }
        };
        range("elasticity", self.elasticity)?;
        range("solar_capacity", self.solar_capacity)?;
        range("baseline_scale", self.baseline_scale)?;
        if self.elasticity[1] >= 0.0 {
            return Err(Error::invalid("elasticities must be negative"));
        }
        if self.solar_capacity[0] < 0.0 || self.baseline_scale[0] <= 0.0 {
            return Err(Error::invalid("solar capacity must be non-negative and baseline scale positive"));
        }
        if !(self.template_peak > 0.0 && self.template_peak.is_finite()) {
            return Err(Error::invalid("template_peak must be positive"));
        }
        Ok(())
    }
}

/// Residential load shape, normalized to a 1.0 evening peak.
const TEMPLATE: [f64; 24] = [
    0.40, 0.35, 0.32, 0.30, 0.30, 0.35, 0.50, 0.65, 0.60, 0.50, 0.45, 0.45, //
    0.45, 0.45, 0.50, 0.55, 0.65, 0.80, 0.95, 1.00, 0.95, 0.80, 0.65, 0.50,
];

/// Clear-sky solar shape centred on 1pm, zero outside 6am-8pm.
fn solar_shape(hour: usize) -> f64 {
    if !(6..20).contains(&hour) {
        return 0.0;
    }
    let x = (hour as f64 + 0.5 - 13.0) / 3.0;
    (-0.5 * x * x).exp()
}

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Deterministic household profiles in the CSV schema of
/// [`load_households`].
pub fn synth_generate(params: &SynthParams, seed: u64) -> Result<String> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = CSV_COLUMNS.join(",");
    out.push('\n');
    for h in 0..params.count {
        let scale = uniform(&mut rng, params.baseline_scale);
        let capacity = uniform(&mut rng, params.solar_capacity);
        let elasticity = uniform(&mut rng, params.elasticity);
        for day in 0..params.days {
            let clearness = rng.random_range(0.6..=1.0);
            for (hour, shape) in TEMPLATE.iter().enumerate() {
                let noise = rng.random_range(0.9..=1.1);
                let baseline = shape * params.template_peak * scale * noise;
                let solar = capacity * clearness * solar_shape(hour);
                writeln!(
                    out,
                    "h{:02},{},{:.4},{:.4},{:.4}",
                    h + 1,
                    day * 24 + hour,
                    baseline,
                    solar,
                    elasticity
                )
                .expect("writing to a String cannot fail");
            }
        }
    }
    Ok(out)
}
