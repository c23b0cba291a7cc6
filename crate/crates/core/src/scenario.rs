//! Problem-instance data model: assets, time series, prices, histories, and
//! the validation that every other module relies on.
//!
//! A scenario is a single TOML document with top-level keys `horizon`,
//! `microgrids`, `prices`, `buy_history`, `sell_history`, `risk_weight`
//! and `options`. `load_scenario` parses, fills documented defaults and
//! validates every invariant, reporting the offending field path on error.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid scenario: {field}: {message}")]
    Validation { field: String, message: String },
    #[error("csv error in {path}: {message}")]
    Csv { path: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation {
        field: field.into(),
        message: message.into(),
    }
}

/// Schedule horizon: number of intervals and the duration of one interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Horizon {
    pub num_periods: usize,
    pub period_hours: f64,
}

impl Default for Horizon {
    fn default() -> Self {
        Self {
            num_periods: 24,
            period_hours: 1.0,
        }
    }
}

/// Controllable distributed generator: power limits and a stepwise cost curve.
///
/// `cost_tiers` is an ordered list of `(tier_upper_bound_kw, price_per_kwh)`;
/// bounds are strictly increasing and the last bound equals `p_max`. Prices
/// must be strictly increasing, which keeps block (marginal) pricing convex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdgSpec {
    pub p_min: f64,
    pub p_max: f64,
    pub cost_tiers: Vec<(f64, f64)>,
}

/// Battery storage plus its back-to-back converter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BessSpec {
    /// Energy capacity in kWh.
    pub capacity: f64,
    /// Converter efficiency, in (0, 1].
    pub converter_efficiency: f64,
    /// Converter power rating in kW.
    pub converter_capacity: f64,
    /// Charging loss fraction.
    pub loss_charge: f64,
    /// Discharging loss fraction.
    pub loss_discharge: f64,
    /// Self-discharge fraction per period.
    #[serde(default)]
    pub self_discharge_rate: f64,
    /// Initial state of charge as a fraction of capacity.
    pub soc_initial: f64,
}

/// Per-period demand split into a firm part and a shiftable part.
///
/// `inflow_max` caps how much shifted load may land in a period; when absent
/// from the file it defaults to the day's total controllable energy divided
/// by the number of periods. `load_upper_bound` is the worst-case total
/// demand and defaults to `fixed + controllable`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadProfile {
    pub fixed: Vec<f64>,
    pub controllable: Vec<f64>,
    #[serde(default)]
    pub inflow_max: Vec<f64>,
    #[serde(default)]
    pub load_upper_bound: Vec<f64>,
}

/// PV forecast and its worst-case lower bound (defaults to the forecast).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PvProfile {
    pub forecast: Vec<f64>,
    #[serde(default)]
    pub lower_bound: Vec<f64>,
}

/// Per-period grid purchase and sale prices in $/kWh.
///
/// `sell(t) <= buy(t)` is enforced at validation time: the power balance
/// allows simultaneous buying and selling, so crossing prices would make the
/// model unbounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries {
    pub buy: Vec<f64>,
    pub sell: Vec<f64>,
}

/// One day of observed and forecast prices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryDay {
    pub actual: Vec<f64>,
    pub forecast: Vec<f64>,
}

/// Ordered price history (oldest day first) plus the decay parameter used by
/// the covariance estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct PriceHistory {
    #[serde(default)]
    pub alpha: f64,
    #[serde(default)]
    pub days: Vec<HistoryDay>,
}

/// One microgrid: name plus its generator, battery, load and PV data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Microgrid {
    pub name: String,
    pub cdg: CdgSpec,
    pub bess: BessSpec,
    pub load: LoadProfile,
    pub pv: PvProfile,
}

/// How the stepwise generator cost curve is priced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CdgPricingMode {
    /// Marginal pricing: each tier's price applies to the units inside it.
    /// Convex, solvable without binaries.
    #[default]
    Block,
    /// The active tier's price applies to the whole output. Needs tier
    /// selection binaries.
    AllUnits,
}

impl fmt::Display for CdgPricingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CdgPricingMode::Block => write!(f, "block"),
            CdgPricingMode::AllUnits => write!(f, "all_units"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioOptions {
    /// Schedule against the demand upper bound and PV lower bound.
    pub worst_case: bool,
    /// Include the explicit shift-repricing term in the objective.
    pub dr_objective_term: bool,
    pub cdg_pricing_mode: CdgPricingMode,
    /// Pair the sell-history covariance with purchases and vice versa.
    pub paper_literal_risk: bool,
    /// Require the final state of charge to reach at least the initial one.
    pub terminal_soc: bool,
}

impl Default for ScenarioOptions {
    fn default() -> Self {
        Self {
            worst_case: false,
            dr_objective_term: true,
            cdg_pricing_mode: CdgPricingMode::Block,
            paper_literal_risk: false,
            terminal_soc: false,
        }
    }
}

/// A full problem instance. Immutable after load; safe to share read-only
/// across parallel coalition solves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub horizon: Horizon,
    pub microgrids: Vec<Microgrid>,
    pub prices: PriceSeries,
    #[serde(default)]
    pub buy_history: PriceHistory,
    #[serde(default)]
    pub sell_history: PriceHistory,
    #[serde(default)]
    pub risk_weight: f64,
    #[serde(default)]
    pub options: ScenarioOptions,
}

/// Loads, fills defaults and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut scenario: Scenario = toml::from_str(&text).map_err(|e| ScenarioError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    scenario.fill_defaults();
    scenario.validate()?;
    Ok(scenario)
}

/// Serializes a scenario back to the documented TOML format.
pub fn save_scenario(scenario: &Scenario, path: impl AsRef<Path>) -> Result<(), ScenarioError> {
    let path = path.as_ref();
    let text = toml::to_string_pretty(scenario).map_err(|e| ScenarioError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    std::fs::write(path, text).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })
}

impl Scenario {
    /// Fills the documented defaults for series that may be omitted from the
    /// file: PV lower bound, worst-case load bound and the inflow cap.
    pub fn fill_defaults(&mut self) {
        let periods = self.horizon.num_periods;
        for mg in &mut self.microgrids {
            if mg.pv.lower_bound.is_empty() {
                mg.pv.lower_bound = mg.pv.forecast.clone();
            }
            if mg.load.load_upper_bound.is_empty() {
                mg.load.load_upper_bound = mg
                    .load
                    .fixed
                    .iter()
                    .zip(&mg.load.controllable)
                    .map(|(f, c)| f + c)
                    .collect();
            }
            if mg.load.inflow_max.is_empty() && periods > 0 {
                let avg = mg.load.controllable.iter().sum::<f64>() / periods as f64;
                mg.load.inflow_max = vec![avg; periods];
            }
        }
    }

    pub fn num_microgrids(&self) -> usize {
        self.microgrids.len()
    }

    /// The scenario actually scheduled: worst-case transformed when the
    /// option is enabled, unchanged otherwise.
    pub fn effective(&self) -> Scenario {
        if self.options.worst_case {
            apply_worst_case(self)
        } else {
            self.clone()
        }
    }

    /// Checks every typed invariant, reporting the first violation with its
    /// field path.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let periods = self.horizon.num_periods;
        if periods < 1 {
            return Err(invalid("horizon.num_periods", "must be at least 1"));
        }
        if !(self.horizon.period_hours > 0.0) || !self.horizon.period_hours.is_finite() {
            return Err(invalid("horizon.period_hours", "must be positive and finite"));
        }
        if self.microgrids.is_empty() {
            return Err(invalid("microgrids", "at least one microgrid is required"));
        }
        for (i, mg) in self.microgrids.iter().enumerate() {
            let base = format!("microgrids[{i}]");
            if mg.name.is_empty() {
                return Err(invalid(format!("{base}.name"), "must not be empty"));
            }
            if self.microgrids[..i].iter().any(|m| m.name == mg.name) {
                return Err(invalid(format!("{base}.name"), "duplicate microgrid name"));
            }
            validate_cdg(&mg.cdg, &base)?;
            validate_bess(&mg.bess, &base)?;
            validate_load(&mg.load, &base, periods)?;
            validate_pv(&mg.pv, &base, periods)?;
        }
        validate_prices(&self.prices, periods)?;
        validate_history(&self.buy_history, "buy_history", periods)?;
        validate_history(&self.sell_history, "sell_history", periods)?;
        if !self.risk_weight.is_finite() || self.risk_weight < 0.0 {
            return Err(invalid("risk_weight", "must be finite and >= 0"));
        }
        if self.risk_weight > 0.0 {
            if self.buy_history.days.is_empty() {
                return Err(invalid(
                    "buy_history.days",
                    "price history required when risk_weight > 0",
                ));
            }
            if self.sell_history.days.is_empty() {
                return Err(invalid(
                    "sell_history.days",
                    "price history required when risk_weight > 0",
                ));
            }
        }
        Ok(())
    }

    /// Non-fatal findings worth surfacing to the user.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        let periods = self.horizon.num_periods;
        for (name, history) in [("buy_history", &self.buy_history), ("sell_history", &self.sell_history)] {
            let days = history.days.len();
            if days > 0 && days < periods {
                out.push(format!(
                    "{name}: {days} days < {periods} periods; the covariance estimate cannot be positive definite"
                ));
            }
        }
        out
    }
}

fn validate_series(values: &[f64], field: &str, periods: usize) -> Result<(), ScenarioError> {
    if values.len() != periods {
        return Err(invalid(
            field,
            format!("expected {periods} entries, found {}", values.len()),
        ));
    }
    for (t, v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(invalid(format!("{field}[{t}]"), "must be finite"));
        }
        if *v < 0.0 {
            return Err(invalid(format!("{field}[{t}]"), "must be >= 0"));
        }
    }
    Ok(())
}

fn validate_cdg(cdg: &CdgSpec, base: &str) -> Result<(), ScenarioError> {
    if !cdg.p_min.is_finite() || cdg.p_min < 0.0 {
        return Err(invalid(format!("{base}.cdg.p_min"), "must be finite and >= 0"));
    }
    if !cdg.p_max.is_finite() || cdg.p_max < cdg.p_min {
        return Err(invalid(format!("{base}.cdg.p_max"), "must be finite and >= p_min"));
    }
    if cdg.cost_tiers.is_empty() {
        return Err(invalid(format!("{base}.cdg.cost_tiers"), "at least one tier required"));
    }
    let mut prev_bound = f64::NEG_INFINITY;
    let mut prev_price = f64::NEG_INFINITY;
    for (i, (bound, price)) in cdg.cost_tiers.iter().enumerate() {
        let field = format!("{base}.cdg.cost_tiers[{i}]");
        if !bound.is_finite() || !price.is_finite() {
            return Err(invalid(field, "tier bound and price must be finite"));
        }
        if *bound <= prev_bound {
            return Err(invalid(field, "tier upper bounds must be strictly increasing"));
        }
        if *price <= prev_price {
            return Err(invalid(field, "tier prices must be strictly increasing"));
        }
        if *price < 0.0 {
            return Err(invalid(field, "tier price must be >= 0"));
        }
        prev_bound = *bound;
        prev_price = *price;
    }
    let last = cdg.cost_tiers.last().unwrap().0;
    if (last - cdg.p_max).abs() > 1e-9 * cdg.p_max.abs().max(1.0) {
        return Err(invalid(
            format!("{base}.cdg.cost_tiers[{}]", cdg.cost_tiers.len() - 1),
            format!("last tier bound {last} must equal p_max {}", cdg.p_max),
        ));
    }
    Ok(())
}

fn validate_bess(bess: &BessSpec, base: &str) -> Result<(), ScenarioError> {
    if !(bess.capacity > 0.0) || !bess.capacity.is_finite() {
        return Err(invalid(format!("{base}.bess.capacity"), "must be positive"));
    }
    if !(bess.converter_efficiency > 0.0 && bess.converter_efficiency <= 1.0) {
        return Err(invalid(
            format!("{base}.bess.converter_efficiency"),
            "must be in (0, 1]",
        ));
    }
    if !bess.converter_capacity.is_finite() || bess.converter_capacity < 0.0 {
        return Err(invalid(
            format!("{base}.bess.converter_capacity"),
            "must be finite and >= 0",
        ));
    }
    for (value, field) in [
        (bess.loss_charge, "loss_charge"),
        (bess.loss_discharge, "loss_discharge"),
        (bess.self_discharge_rate, "self_discharge_rate"),
    ] {
        if !(0.0..1.0).contains(&value) {
            return Err(invalid(format!("{base}.bess.{field}"), "must be in [0, 1)"));
        }
    }
    if !(0.0..=1.0).contains(&bess.soc_initial) {
        return Err(invalid(format!("{base}.bess.soc_initial"), "must be in [0, 1]"));
    }
    Ok(())
}

fn validate_load(load: &LoadProfile, base: &str, periods: usize) -> Result<(), ScenarioError> {
    validate_series(&load.fixed, &format!("{base}.load.fixed"), periods)?;
    validate_series(&load.controllable, &format!("{base}.load.controllable"), periods)?;
    validate_series(&load.inflow_max, &format!("{base}.load.inflow_max"), periods)?;
    validate_series(
        &load.load_upper_bound,
        &format!("{base}.load.load_upper_bound"),
        periods,
    )?;
    for t in 0..periods {
        let nominal = load.fixed[t] + load.controllable[t];
        if load.load_upper_bound[t] < nominal - 1e-9 * nominal.max(1.0) {
            return Err(invalid(
                format!("{base}.load.load_upper_bound[{t}]"),
                format!(
                    "worst-case bound {} is below fixed + controllable = {nominal}",
                    load.load_upper_bound[t]
                ),
            ));
        }
    }
    Ok(())
}

fn validate_pv(pv: &PvProfile, base: &str, periods: usize) -> Result<(), ScenarioError> {
    validate_series(&pv.forecast, &format!("{base}.pv.forecast"), periods)?;
    validate_series(&pv.lower_bound, &format!("{base}.pv.lower_bound"), periods)?;
    for t in 0..periods {
        if pv.lower_bound[t] > pv.forecast[t] + 1e-9 * pv.forecast[t].max(1.0) {
            return Err(invalid(
                format!("{base}.pv.lower_bound[{t}]"),
                "worst-case PV bound exceeds the forecast",
            ));
        }
    }
    Ok(())
}

fn validate_prices(prices: &PriceSeries, periods: usize) -> Result<(), ScenarioError> {
    validate_series(&prices.buy, "prices.buy", periods)?;
    validate_series(&prices.sell, "prices.sell", periods)?;
    for t in 0..periods {
        if prices.sell[t] > prices.buy[t] {
            return Err(invalid(
                format!("prices.sell[{t}]"),
                format!(
                    "sell price {} exceeds buy price {}; this makes the model unbounded",
                    prices.sell[t], prices.buy[t]
                ),
            ));
        }
    }
    Ok(())
}

fn validate_history(history: &PriceHistory, name: &str, periods: usize) -> Result<(), ScenarioError> {
    if !(0.0..=1.0).contains(&history.alpha) {
        return Err(invalid(format!("{name}.alpha"), "must be in [0, 1]"));
    }
    for (d, day) in history.days.iter().enumerate() {
        for (series, field) in [(&day.actual, "actual"), (&day.forecast, "forecast")] {
            if series.len() != periods {
                return Err(invalid(
                    format!("{name}.days[{d}].{field}"),
                    format!("expected {periods} entries, found {}", series.len()),
                ));
            }
            if let Some(t) = series.iter().position(|v| !v.is_finite()) {
                return Err(invalid(format!("{name}.days[{d}].{field}[{t}]"), "must be finite"));
            }
        }
    }
    Ok(())
}

/// Replaces forecast demand with its upper bound (split proportionally
/// between the fixed and controllable parts, preserving the controllable
/// fraction) and PV with its lower bound. Idempotent.
pub fn apply_worst_case(scenario: &Scenario) -> Scenario {
    let mut out = scenario.clone();
    for mg in &mut out.microgrids {
        for t in 0..out.horizon.num_periods {
            let nominal = mg.load.fixed[t] + mg.load.controllable[t];
            let upper = mg.load.load_upper_bound[t];
            if nominal > 0.0 {
                let factor = upper / nominal;
                mg.load.fixed[t] *= factor;
                mg.load.controllable[t] *= factor;
            } else {
                // nothing to scale; any extra worst-case demand is firm
                mg.load.fixed[t] = upper;
            }
        }
        mg.pv.forecast = mg.pv.lower_bound.clone();
    }
    out
}

/// Reads a time-series CSV: one row per period, one column per named series.
/// Returns the header names and one column of values per header.
pub fn read_timeseries_csv(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<Vec<f64>>), ScenarioError> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| ScenarioError::Csv {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| ScenarioError::Csv {
            path: path.display().to_string(),
            message: e.to_string(),
        })?
        .iter()
        .map(|h| h.to_string())
        .collect();
    let mut columns = vec![Vec::new(); headers.len()];
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| ScenarioError::Csv {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        if record.len() != headers.len() {
            return Err(ScenarioError::Csv {
                path: path.display().to_string(),
                message: format!(
                    "row {} has {} fields, expected {}",
                    row_idx + 1,
                    record.len(),
                    headers.len()
                ),
            });
        }
        for (col, raw) in record.iter().enumerate() {
            let value: f64 = raw.trim().parse().map_err(|_| ScenarioError::Csv {
                path: path.display().to_string(),
                message: format!("row {} column '{}': not a number: {raw:?}", row_idx + 1, headers[col]),
            })?;
            columns[col].push(value);
        }
    }
    Ok((headers, columns))
}

/// Writes a time-series CSV in the same layout `read_timeseries_csv` accepts.
pub fn write_timeseries_csv(
    path: impl AsRef<Path>,
    headers: &[String],
    columns: &[Vec<f64>],
) -> Result<(), ScenarioError> {
    let path = path.as_ref();
    let csv_err = |e: csv::Error| ScenarioError::Csv {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mut writer = csv::Writer::from_path(path).map_err(csv_err)?;
    writer.write_record(headers).map_err(csv_err)?;
    let rows = columns.first().map_or(0, |c| c.len());
    for t in 0..rows {
        let record: Vec<String> = columns.iter().map(|col| col[t].to_string()).collect();
        writer.write_record(&record).map_err(csv_err)?;
    }
    writer.flush().map_err(|e| ScenarioError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Reads a price history from a time-series CSV with columns
/// `actual_1,forecast_1,actual_2,forecast_2,...` (day 1 oldest).
pub fn price_history_from_csv(path: impl AsRef<Path>, alpha: f64) -> Result<PriceHistory, ScenarioError> {
    let path = path.as_ref();
    let (headers, columns) = read_timeseries_csv(path)?;
    let mut days: Vec<HistoryDay> = Vec::new();
    let expect = |name: &str| -> Result<usize, ScenarioError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| ScenarioError::Csv {
                path: path.display().to_string(),
                message: format!("missing column '{name}'"),
            })
    };
    let mut day = 1;
    while headers.iter().any(|h| h == &format!("actual_{day}")) {
        let actual_col = expect(&format!("actual_{day}"))?;
        let forecast_col = expect(&format!("forecast_{day}"))?;
        days.push(HistoryDay {
            actual: columns[actual_col].clone(),
            forecast: columns[forecast_col].clone(),
        });
        day += 1;
    }
    if days.is_empty() {
        return Err(ScenarioError::Csv {
            path: path.display().to_string(),
            message: "no actual_1/forecast_1 columns found".into(),
        });
    }
    Ok(PriceHistory { alpha, days })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn flat_series(value: f64, periods: usize) -> Vec<f64> {
        vec![value; periods]
    }

    pub(crate) fn small_scenario(periods: usize) -> Scenario {
        let mut s = Scenario {
            horizon: Horizon {
                num_periods: periods,
                period_hours: 1.0,
            },
            microgrids: vec![Microgrid {
                name: "MG1".into(),
                cdg: CdgSpec {
                    p_min: 0.0,
                    p_max: 100.0,
                    cost_tiers: vec![(50.0, 0.1), (100.0, 0.2)],
                },
                bess: BessSpec {
                    capacity: 50.0,
                    converter_efficiency: 1.0,
                    converter_capacity: 20.0,
                    loss_charge: 0.0,
                    loss_discharge: 0.0,
                    self_discharge_rate: 0.0,
                    soc_initial: 0.5,
                },
                load: LoadProfile {
                    fixed: flat_series(40.0, periods),
                    controllable: flat_series(10.0, periods),
                    inflow_max: vec![],
                    load_upper_bound: vec![],
                },
                pv: PvProfile {
                    forecast: flat_series(5.0, periods),
                    lower_bound: vec![],
                },
            }],
            prices: PriceSeries {
                buy: flat_series(0.2, periods),
                sell: flat_series(0.1, periods),
            },
            buy_history: PriceHistory::default(),
            sell_history: PriceHistory::default(),
            risk_weight: 0.0,
            options: ScenarioOptions::default(),
        };
        s.fill_defaults();
        s
    }

    #[test]
    fn zero_series_scenario_is_valid() {
        let mut s = small_scenario(4);
        let mg = &mut s.microgrids[0];
        mg.load.fixed = flat_series(0.0, 4);
        mg.load.controllable = flat_series(0.0, 4);
        mg.load.inflow_max = vec![];
        mg.load.load_upper_bound = vec![];
        mg.pv.forecast = flat_series(0.0, 4);
        mg.pv.lower_bound = vec![];
        s.prices.buy = flat_series(0.0, 4);
        s.prices.sell = flat_series(0.0, 4);
        s.fill_defaults();
        s.validate().expect("all-zero series are degenerate but legal");
    }

    #[test]
    fn sell_above_buy_names_the_field() {
        let mut s = small_scenario(8);
        s.prices.sell[5] = 0.5;
        let err = s.validate().unwrap_err();
        match err {
            ScenarioError::Validation { field, .. } => assert_eq!(field, "prices.sell[5]"),
            other => panic!("expected validation error, got {other}"),
        }
    }

    #[test]
    fn upper_bound_below_nominal_rejected() {
        let mut s = small_scenario(4);
        s.microgrids[0].load.load_upper_bound[2] = 10.0;
        let err = s.validate().unwrap_err();
        match err {
            ScenarioError::Validation { field, .. } => {
                assert_eq!(field, "microgrids[0].load.load_upper_bound[2]")
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn tier_bounds_must_reach_p_max() {
        let mut s = small_scenario(4);
        s.microgrids[0].cdg.cost_tiers = vec![(50.0, 0.1), (90.0, 0.2)];
        assert!(s.validate().is_err());
    }

    #[test]
    fn inflow_default_is_average_controllable() {
        let s = small_scenario(6);
        // 10 kW controllable in every period -> average 10
        assert_eq!(s.microgrids[0].load.inflow_max, flat_series(10.0, 6));
    }

    #[test]
    fn worst_case_takes_pv_lower_bound() {
        let mut s = small_scenario(2);
        s.microgrids[0].pv.forecast = vec![100.0, 80.0];
        s.microgrids[0].pv.lower_bound = vec![90.0, 70.0];
        let w = apply_worst_case(&s);
        assert_eq!(w.microgrids[0].pv.forecast, vec![90.0, 70.0]);
    }

    #[test]
    fn worst_case_identity_when_bound_equals_nominal() {
        let s = small_scenario(3);
        let w = apply_worst_case(&s);
        assert_eq!(w, s);
    }

    #[test]
    fn worst_case_splits_proportionally() {
        let mut s = small_scenario(1);
        let mg = &mut s.microgrids[0];
        mg.load.fixed = vec![50.0];
        mg.load.controllable = vec![50.0];
        mg.load.load_upper_bound = vec![120.0];
        let w = apply_worst_case(&s);
        assert!((w.microgrids[0].load.fixed[0] - 60.0).abs() < 1e-12);
        assert!((w.microgrids[0].load.controllable[0] - 60.0).abs() < 1e-12);
    }

    #[test]
    fn worst_case_is_idempotent_and_monotone() {
        let mut s = small_scenario(4);
        s.microgrids[0].load.load_upper_bound = flat_series(60.0, 4);
        s.microgrids[0].pv.lower_bound = flat_series(3.0, 4);
        let once = apply_worst_case(&s);
        let twice = apply_worst_case(&once);
        assert_eq!(once, twice);
        for t in 0..4 {
            let before = s.microgrids[0].load.fixed[t] + s.microgrids[0].load.controllable[t];
            let after = once.microgrids[0].load.fixed[t] + once.microgrids[0].load.controllable[t];
            assert!(after >= before - 1e-12);
            assert!(once.microgrids[0].pv.forecast[t] <= s.microgrids[0].pv.forecast[t]);
        }
    }

    #[test]
    fn toml_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scenario.toml");
        let mut s = small_scenario(5);
        s.risk_weight = 0.25;
        s.buy_history = PriceHistory {
            alpha: 0.7,
            days: vec![HistoryDay {
                actual: flat_series(0.3, 5),
                forecast: flat_series(0.25, 5),
            }],
        };
        s.sell_history = s.buy_history.clone();
        save_scenario(&s, &path).unwrap();
        let loaded = load_scenario(&path).unwrap();
        assert_eq!(loaded, s);
    }

    #[test]
    fn timeseries_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("series.csv");
        let headers = vec!["period".to_string(), "load".to_string()];
        let columns = vec![vec![1.0, 2.0, 3.0], vec![10.5, 0.25, 7.0]];
        write_timeseries_csv(&path, &headers, &columns).unwrap();
        let (h, c) = read_timeseries_csv(&path).unwrap();
        assert_eq!(h, headers);
        assert_eq!(c, columns);
    }

    #[test]
    fn short_history_warns() {
        let mut s = small_scenario(4);
        s.buy_history = PriceHistory {
            alpha: 0.5,
            days: vec![HistoryDay {
                actual: flat_series(0.1, 4),
                forecast: flat_series(0.1, 4),
            }],
        };
        assert_eq!(s.warnings().len(), 1);
    }
}
