//! Counterfactual evaluation on untreated-congestion scenarios.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::format_timestamp;
use crate::mpc::{receding_horizon, MpcConfig};
use crate::plant::PlantStepper;
use crate::stats::{mean, quantile_sorted, sorted, standard_error};
use crate::types::{
    Action, DynamicsModel, Facility, NoiseModel, Scenario, TimeSeries, TrafficState, Volumes,
};

/// Speeds below this are raised to it before any division.
pub const SPEED_FLOOR_KPH: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub bottleneck_km_low: f64,
    pub bottleneck_km_high: f64,
    pub idle_fuel_gal_per_hr: f64,
    pub idle_co2_g_per_hr: f64,
    pub mc_runs: usize,
    pub exec_steps: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            bottleneck_km_low: 0.5,
            bottleneck_km_high: 2.0,
            idle_fuel_gal_per_hr: 0.35,
            idle_co2_g_per_hr: 2100.0,
            mc_runs: 30,
            exec_steps: 4,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = (self.bottleneck_km_low, self.bottleneck_km_high);
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
            return Err(Error::param(format!(
                "bottleneck lengths must satisfy 0 < low <= high, got ({lo}, {hi})"
            )));
        }
        if !(self.idle_fuel_gal_per_hr.is_finite() && self.idle_fuel_gal_per_hr >= 0.0)
            || !(self.idle_co2_g_per_hr.is_finite() && self.idle_co2_g_per_hr >= 0.0)
        {
            return Err(Error::param("idle emission rates must be non-negative"));
        }
        if self.mc_runs == 0 {
            return Err(Error::param("mc_runs must be at least 1"));
        }
        if self.exec_steps == 0 {
            return Err(Error::param("exec_steps must be at least 1"));
        }
        Ok(())
    }
}

/// Executed actions and resulting plant states of one counterfactual run.
#[derive(Debug, Clone, PartialEq)]
pub struct Counterfactual {
    pub actions: Vec<Action>,
    pub states: Vec<TrafficState>,
}

/// Widens a scenario's window to at least `bins` bins of `series` (clipped
/// at its end), so the controller sees history past the congested run.
pub fn extend_window(series: &TimeSeries, scenario: &Scenario, bins: usize) -> Scenario {
    let start = scenario.onset_index;
    let end = (start + bins.max(scenario.window.len())).min(series.len());
    Scenario {
        window: series.slice(start..end),
        ..scenario.clone()
    }
}

/// Observed states following the onset bin, aligned with a counterfactual.
pub fn actual_states(scenario: &Scenario, exec_steps: usize) -> Result<Vec<TrafficState>> {
    check_length(scenario, exec_steps)?;
    Ok(scenario.window.states()[1..=exec_steps].to_vec())
}

fn check_length(scenario: &Scenario, exec_steps: usize) -> Result<()> {
    let have = scenario.window.len();
    if have < exec_steps + 1 {
        return Err(Error::InsufficientData(format!(
            "scenario '{}' has {have} bins, {} needed",
            scenario.label,
            exec_steps + 1
        )));
    }
    Ok(())
}

/// Receding-horizon run from the scenario's onset state against the
/// stochastic plant, with volumes taken from the scenario's history.
pub fn counterfactual_rollout(
    scenario: &Scenario,
    model: &DynamicsModel,
    noise: &NoiseModel,
    mpc: &MpcConfig,
    config: &EvalConfig,
) -> Result<Counterfactual> {
    config.validate()?;
    check_length(scenario, config.exec_steps)?;
    let forecast: Vec<Volumes> = scenario.window.inputs().iter().map(|u| u.volumes()).collect();
    let mut plant = PlantStepper::new(model.clone(), *noise);
    let x0 = scenario.window.states()[0];
    let trace = receding_horizon(&x0, model, &mut plant, &forecast, mpc, config.exec_steps)?;
    Ok(Counterfactual {
        actions: trace.actions(),
        states: trace.states(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioProfile {
    pub ratios: Vec<f64>,
    /// Set where the actual speed was raised to the floor.
    pub floor_applied: Vec<bool>,
}

fn equal_lengths(actual: &[TrafficState], counterfactual: &[TrafficState]) -> Result<()> {
    if actual.len() != counterfactual.len() {
        return Err(Error::InvalidValue {
            field: "trajectories",
            reason: format!(
                "{} actual states but {} counterfactual",
                actual.len(),
                counterfactual.len()
            ),
        });
    }
    Ok(())
}

/// `counterfactual_speed / max(actual_speed, 1)` per step.
pub fn speed_ratio_profile(
    actual: &[TrafficState],
    counterfactual: &[TrafficState],
    facility: Facility,
) -> Result<RatioProfile> {
    equal_lengths(actual, counterfactual)?;
    let mut ratios = Vec::with_capacity(actual.len());
    let mut floor_applied = Vec::with_capacity(actual.len());
    for (a, c) in actual.iter().zip(counterfactual) {
        let speed = a.speed(facility);
        floor_applied.push(speed < SPEED_FLOOR_KPH);
        ratios.push(c.speed(facility) / speed.max(SPEED_FLOOR_KPH));
    }
    Ok(RatioProfile {
        ratios,
        floor_applied,
    })
}

/// Vehicle-hours saved through the bottleneck per hour of deployment, for
/// the low and high bottleneck lengths. Steps where the counterfactual is
/// slower count against the total.
pub fn vehicle_hours_saved(
    actual: &[TrafficState],
    counterfactual: &[TrafficState],
    facility: Facility,
    bin_minutes: u32,
    config: &EvalConfig,
) -> Result<(f64, f64)> {
    equal_lengths(actual, counterfactual)?;
    if actual.is_empty() {
        return Ok((0.0, 0.0));
    }
    let per_km: f64 = actual
        .iter()
        .zip(counterfactual)
        .map(|(a, c)| {
            let dt = 1.0 / a.speed(facility).max(SPEED_FLOOR_KPH)
                - 1.0 / c.speed(facility).max(SPEED_FLOOR_KPH);
            dt * a.flow(facility)
        })
        .sum();
    let per_hour = 60.0 / (actual.len() as f64 * f64::from(bin_minutes));
    Ok((
        config.bottleneck_km_low * per_km * per_hour,
        config.bottleneck_km_high * per_km * per_hour,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperationalSavings {
    pub fuel_gal: Bounds,
    pub co2_kg: Bounds,
}

pub fn operational_savings(veh_hours: Bounds, config: &EvalConfig) -> OperationalSavings {
    let co2_kg_per_hr = config.idle_co2_g_per_hr / 1000.0;
    OperationalSavings {
        fuel_gal: Bounds {
            low: config.idle_fuel_gal_per_hr * veh_hours.low,
            high: config.idle_fuel_gal_per_hr * veh_hours.high,
        },
        co2_kg: Bounds {
            low: co2_kg_per_hr * veh_hours.low,
            high: co2_kg_per_hr * veh_hours.high,
        },
    }
}

/// Mean and standard error of one quantity per exec step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
}

impl StepStats {
    /// `rows[r][k]`: value of run `r` at step `k`.
    /// Empty when there are no rows.
    fn from_rows(rows: &[Vec<f64>], steps: usize) -> Self {
        let steps = if rows.is_empty() { 0 } else { steps };
        let column = |k: usize| rows.iter().map(|r| r[k]).collect::<Vec<_>>();
        StepStats {
            mean: (0..steps).map(|k| mean(&column(k))).collect(),
            se: (0..steps).map(|k| standard_error(&column(k))).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub label: String,
    pub start: String,
    pub onset_index: usize,
    pub facility: Facility,
    pub runs: usize,
    /// Speed ratios of the congested facility.
    pub treated_ratio: StepStats,
    /// Speed ratios of the other facility.
    pub untreated_ratio: StepStats,
    /// Runs choosing a departures / arrivals message at each step.
    pub td_count: Vec<usize>,
    pub ta_count: Vec<usize>,
    /// Mean over runs, congested facility.
    pub vehicle_hours: Bounds,
    /// Mean over runs, other facility; reported, not credited.
    pub untreated_vehicle_hours: Bounds,
    pub savings: OperationalSavings,
}

/// Seed of run `run` of scenario `scenario_index` under a campaign seed.
pub fn run_seeds(campaign_seed: u64, scenario_index: u64, runs: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(campaign_seed);
    rng.set_stream(scenario_index);
    (0..runs).map(|_| rng.next_u64()).collect()
}

/// Monte-Carlo evaluation of one scenario.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_scenario(
    scenario: &Scenario,
    scenario_index: u64,
    model: &DynamicsModel,
    noise: &NoiseModel,
    mpc: &MpcConfig,
    config: &EvalConfig,
    campaign_seed: u64,
) -> Result<ScenarioResult> {
    config.validate()?;
    let steps = config.exec_steps;
    let actual = actual_states(scenario, steps)?;
    let facility = scenario.congested_facility;
    let bin = scenario.window.bin_minutes();

    let mut treated = Vec::with_capacity(config.mc_runs);
    let mut untreated = Vec::with_capacity(config.mc_runs);
    let mut td_count = vec![0; steps];
    let mut ta_count = vec![0; steps];
    let mut vh = Vec::with_capacity(config.mc_runs);
    let mut vh_other = Vec::with_capacity(config.mc_runs);
    for seed in run_seeds(campaign_seed, scenario_index, config.mc_runs) {
        let cf = counterfactual_rollout(scenario, model, &noise.with_seed(seed), mpc, config)?;
        treated.push(speed_ratio_profile(&actual, &cf.states, facility)?.ratios);
        untreated.push(speed_ratio_profile(&actual, &cf.states, facility.other())?.ratios);
        for (k, a) in cf.actions.iter().enumerate() {
            td_count[k] += usize::from(a.td());
            ta_count[k] += usize::from(a.ta());
        }
        vh.push(vehicle_hours_saved(&actual, &cf.states, facility, bin, config)?);
        vh_other.push(vehicle_hours_saved(&actual, &cf.states, facility.other(), bin, config)?);
    }
    let mean_bounds = |v: &[(f64, f64)]| Bounds {
        low: mean(&v.iter().map(|p| p.0).collect::<Vec<_>>()),
        high: mean(&v.iter().map(|p| p.1).collect::<Vec<_>>()),
    };
    let vehicle_hours = mean_bounds(&vh);
    Ok(ScenarioResult {
        label: scenario.label.clone(),
        start: format_timestamp(scenario.window.start()),
        onset_index: scenario.onset_index,
        facility,
        runs: config.mc_runs,
        treated_ratio: StepStats::from_rows(&treated, steps),
        untreated_ratio: StepStats::from_rows(&untreated, steps),
        td_count,
        ta_count,
        vehicle_hours,
        untreated_vehicle_hours: mean_bounds(&vh_other),
        savings: operational_savings(vehicle_hours, config),
    })
}

/// Mean and quartiles under linear interpolation between closest ranks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub mean: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

impl Distribution {
    pub fn of(values: &[f64]) -> Option<Self> {
        let s = sorted(values);
        Some(Distribution {
            mean: mean(values),
            q1: quantile_sorted(&s, 0.25)?,
            median: quantile_sorted(&s, 0.5)?,
            q3: quantile_sorted(&s, 0.75)?,
        })
    }
}

/// Speed-ratio statistics over a set of scenarios: per step, the mean and
/// standard error across scenarios of each scenario's Monte-Carlo mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    /// `None` for the panel over all scenarios.
    pub facility: Option<Facility>,
    pub scenarios: usize,
    pub treated_ratio: StepStats,
    pub untreated_ratio: StepStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleHoursSummary {
    pub low: Distribution,
    pub high: Distribution,
    pub fuel_gal: Bounds,
    pub co2_kg: Bounds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub overall: Panel,
    /// Departures-congested then arrivals-congested scenarios.
    pub by_facility: Vec<Panel>,
    pub vehicle_hours: VehicleHoursSummary,
}

fn panel(facility: Option<Facility>, results: &[&ScenarioResult], steps: usize) -> Panel {
    let rows = |f: fn(&ScenarioResult) -> &StepStats| {
        results.iter().map(|r| f(r).mean.clone()).collect::<Vec<_>>()
    };
    Panel {
        facility,
        scenarios: results.len(),
        treated_ratio: StepStats::from_rows(&rows(|r| &r.treated_ratio), steps),
        untreated_ratio: StepStats::from_rows(&rows(|r| &r.untreated_ratio), steps),
    }
}

pub fn aggregate(results: &[ScenarioResult], config: &EvalConfig) -> Result<Aggregate> {
    if results.is_empty() {
        return Err(Error::InsufficientData("no scenario results to aggregate".into()));
    }
    let steps = results[0].treated_ratio.mean.len();
    if results.iter().any(|r| r.treated_ratio.mean.len() != steps) {
        return Err(Error::InvalidValue {
            field: "scenario results",
            reason: "differing step counts".into(),
        });
    }
    let all: Vec<&ScenarioResult> = results.iter().collect();
    let by_facility = Facility::BOTH
        .iter()
        .map(|&f| {
            let subset: Vec<&ScenarioResult> =
                results.iter().filter(|r| r.facility == f).collect();
            panel(Some(f), &subset, steps)
        })
        .collect();
    let low: Vec<f64> = results.iter().map(|r| r.vehicle_hours.low).collect();
    let high: Vec<f64> = results.iter().map(|r| r.vehicle_hours.high).collect();
    let low = Distribution::of(&low).expect("non-empty");
    let high = Distribution::of(&high).expect("non-empty");
    let savings = operational_savings(
        Bounds {
            low: low.mean,
            high: high.mean,
        },
        config,
    );
    Ok(Aggregate {
        overall: panel(None, &all, steps),
        by_facility,
        vehicle_hours: VehicleHoursSummary {
            low,
            high,
            fuel_gal: savings.fuel_gal,
            co2_kg: savings.co2_kg,
        },
    })
}

/// Campaign output: per-scenario results plus aggregate panels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignReport {
    pub schema_version: u32,
    pub campaign_seed: u64,
    pub scenarios: Vec<ScenarioResult>,
    /// Absent when no scenario was found.
    pub aggregate: Option<Aggregate>,
}

impl CampaignReport {
    pub fn new(campaign_seed: u64, scenarios: Vec<ScenarioResult>, config: &EvalConfig) -> Result<Self> {
        let aggregate = if scenarios.is_empty() {
            None
        } else {
            Some(aggregate(&scenarios, config)?)
        };
        Ok(CampaignReport {
            schema_version: crate::SCHEMA_VERSION,
            campaign_seed,
            scenarios,
            aggregate,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: CampaignReport = serde_json::from_str(text)?;
        if report.schema_version != crate::SCHEMA_VERSION {
            return Err(Error::Version {
                found: report.schema_version,
                expected: crate::SCHEMA_VERSION,
            });
        }
        Ok(report)
    }

    /// Plot-ready speed ratios by exec step, one row per panel and step.
    pub fn speed_ratio_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "panel",
            "scenarios",
            "step",
            "treated_mean",
            "treated_se",
            "untreated_mean",
            "untreated_se",
        ])?;
        if let Some(agg) = &self.aggregate {
            for p in std::iter::once(&agg.overall).chain(&agg.by_facility) {
                let name = p.facility.map_or("all".to_string(), |f| f.to_string());
                for k in 0..p.treated_ratio.mean.len() {
                    w.write_record([
                        name.clone(),
                        p.scenarios.to_string(),
                        (k + 1).to_string(),
                        p.treated_ratio.mean[k].to_string(),
                        p.treated_ratio.se[k].to_string(),
                        p.untreated_ratio.mean[k].to_string(),
                        p.untreated_ratio.se[k].to_string(),
                    ])?;
                }
            }
        }
        finish_csv(w)
    }

    /// Plot-ready vehicle-hours distribution, one row per scenario.
    pub fn vehicle_hours_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["scenario", "start", "facility", "veh_h_low", "veh_h_high"])?;
        for r in &self.scenarios {
            w.write_record([
                r.label.clone(),
                r.start.clone(),
                r.facility.to_string(),
                r.vehicle_hours.low.to_string(),
                r.vehicle_hours.high.to_string(),
            ])?;
        }
        finish_csv(w)
    }
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}
