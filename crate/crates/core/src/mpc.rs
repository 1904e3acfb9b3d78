//! Finite-horizon control of the two diversion messages, solved exactly by
//! depth-first enumeration with branch-and-bound pruning, and the
//! receding-horizon loop around it.
//!
//! Plan cost for actions `u_0..u_{T-1}` from `x_0`:
//!
//! ```text
//! Σ_{k<T} [ (D_k − 1)² + (A_k − 1)² + γ·(td_k + ta_k) ] + (D_T − 1)² + (A_T − 1)²
//! D_k = min(1, ds_k / ds_crit),  A_k = min(1, as_k / as_crit)
//! ```
//!
//! with `x_{k+1} = max(A x_k + B u_k, 0)`.

use std::cmp::Ordering;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::PlantStepper;
use crate::types::{
    Action, ControlInput, CriticalSpeeds, DynamicsModel, TrafficState, Volumes,
    ARRIVALS_CRITICAL_SPEED, DEPARTURES_CRITICAL_SPEED,
};

pub const DEFAULT_HORIZON: usize = 12;
pub const DEFAULT_EXEC_STEPS: usize = 4;
pub const DEFAULT_GAMMA: f64 = 0.01;
/// Longest horizon `solve` accepts (3^16 ≈ 4.3e7 leaves).
pub const MAX_HORIZON: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcConfig {
    pub horizon_t: usize,
    pub exec_steps: usize,
    pub ds_crit: f64,
    pub as_crit: f64,
    pub gamma: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        MpcConfig {
            horizon_t: DEFAULT_HORIZON,
            exec_steps: DEFAULT_EXEC_STEPS,
            ds_crit: DEPARTURES_CRITICAL_SPEED,
            as_crit: ARRIVALS_CRITICAL_SPEED,
            gamma: DEFAULT_GAMMA,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon_t == 0 {
            return Err(Error::param("horizon must be at least one bin"));
        }
        if self.horizon_t > MAX_HORIZON {
            return Err(Error::param(format!(
                "horizon {} exceeds the enumeration limit of {MAX_HORIZON}",
                self.horizon_t
            )));
        }
        if self.exec_steps == 0 || self.exec_steps > self.horizon_t {
            return Err(Error::param(format!(
                "exec_steps must lie in [1, {}], got {}",
                self.horizon_t, self.exec_steps
            )));
        }
        self.critical_speeds().validate()?;
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::param(format!("gamma must be non-negative, got {}", self.gamma)));
        }
        Ok(())
    }

    pub fn critical_speeds(&self) -> CriticalSpeeds {
        CriticalSpeeds {
            departures: self.ds_crit,
            arrivals: self.as_crit,
        }
    }
}

/// Congestion part of the stage cost, `(D − 1)² + (A − 1)²`.
pub fn state_cost(state: &TrafficState, config: &MpcConfig) -> f64 {
    let d = (state.ds() / config.ds_crit).min(1.0);
    let a = (state.as_() / config.as_crit).min(1.0);
    (d - 1.0) * (d - 1.0) + (a - 1.0) * (a - 1.0)
}

fn control_cost(action: Action, config: &MpcConfig) -> f64 {
    if action.is_active() {
        config.gamma
    } else {
        0.0
    }
}

/// `(D − 1)² + (A − 1)² + γ·(td + ta)` where `D`, `A` are the smallest
/// epigraph values admitted by the critical-speed constraints.
pub fn stage_cost(state: &TrafficState, action: Action, config: &MpcConfig) -> f64 {
    state_cost(state, config) + control_cost(action, config)
}

/// Optimal open-loop plan from one root state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlPlan {
    pub x_init: TrafficState,
    pub actions: Vec<Action>,
    /// `x_1..x_T`.
    pub predicted_states: Vec<TrafficState>,
    pub cost: f64,
}

impl ControlPlan {
    pub fn active_count(&self) -> usize {
        self.actions.iter().filter(|a| a.is_active()).count()
    }
}

/// Ordering used to break cost ties: fewer active messages, then the
/// earliest activation, with a departures message ahead of an arrivals one
/// at the same step.
pub fn tie_break(a: &[Action], b: &[Action]) -> Ordering {
    let count = |s: &[Action]| s.iter().filter(|x| x.is_active()).count();
    let rank = |x: &Action| match x {
        Action::Idle => 2,
        Action::DivertDepartures => 0,
        Action::DivertArrivals => 1,
    };
    count(a).cmp(&count(b)).then_with(|| {
        let acts = |s: &[Action]| {
            s.iter()
                .enumerate()
                .filter(|(_, x)| x.is_active())
                .map(|(k, x)| (k, rank(x)))
                .collect::<Vec<_>>()
        };
        acts(a).cmp(&acts(b))
    })
}

/// Cost of a fixed action sequence, evaluated with the same accumulation
/// order as [`solve`].
pub fn sequence_cost(
    x_init: &TrafficState,
    model: &DynamicsModel,
    forecast: &[Volumes],
    actions: &[Action],
    config: &MpcConfig,
) -> Result<(f64, Vec<TrafficState>)> {
    if forecast.len() < actions.len() {
        return Err(Error::param(format!(
            "forecast covers {} bins, sequence needs {}",
            forecast.len(),
            actions.len()
        )));
    }
    let mut x = *x_init;
    let mut partial = 0.0;
    let mut states = Vec::with_capacity(actions.len());
    for (k, &a) in actions.iter().enumerate() {
        let u = ControlInput::new(a, forecast[k])?;
        partial += state_cost(&x, config) + control_cost(a, config);
        x = model.step(&x, &u);
        states.push(x);
    }
    Ok((partial + state_cost(&x, config), states))
}

struct Search<'a> {
    model: &'a DynamicsModel,
    config: &'a MpcConfig,
    /// `inputs[k][i]` is the input for `Action::ALL[i]` at step `k`.
    inputs: Vec<[ControlInput; 3]>,
    current: Vec<Action>,
    best: Vec<Action>,
    best_cost: f64,
    leaves: u64,
}

impl Search<'_> {
    fn descend(&mut self, depth: usize, x: &TrafficState, partial: f64) {
        let horizon = self.inputs.len();
        let here = state_cost(x, self.config);
        for (i, &action) in Action::ALL.iter().enumerate() {
            let next = self.model.step(x, &self.inputs[depth][i]);
            let acc = partial + (here + control_cost(action, self.config));
            // Remaining stage costs are non-negative, so this bounds every
            // completion from below.
            let bound = acc + state_cost(&next, self.config);
            if bound > self.best_cost {
                continue;
            }
            self.current[depth] = action;
            if depth + 1 == horizon {
                self.leaves += 1;
                if bound < self.best_cost
                    || tie_break(&self.current, &self.best) == Ordering::Less
                {
                    self.best_cost = bound;
                    self.best.copy_from_slice(&self.current);
                }
            } else {
                self.descend(depth + 1, &next, acc);
            }
        }
        self.current[depth] = Action::Idle;
    }
}

/// Globally optimal plan over all `3^T` message sequences.
///
/// `forecast[k]` supplies the exogenous volumes for step `k`; at least
/// `horizon_t` entries are required.
pub fn solve(
    x_init: &TrafficState,
    model: &DynamicsModel,
    forecast: &[Volumes],
    config: &MpcConfig,
) -> Result<ControlPlan> {
    config.validate()?;
    let horizon = config.horizon_t;
    if forecast.len() < horizon {
        return Err(Error::param(format!(
            "forecast covers {} bins, horizon is {horizon}",
            forecast.len()
        )));
    }
    let inputs = forecast[..horizon]
        .iter()
        .map(|&v| {
            Ok([
                ControlInput::new(Action::ALL[0], v)?,
                ControlInput::new(Action::ALL[1], v)?,
                ControlInput::new(Action::ALL[2], v)?,
            ])
        })
        .collect::<Result<Vec<_>>>()?;

    // All-idle is always feasible and seeds the incumbent.
    let idle = vec![Action::Idle; horizon];
    let (idle_cost, _) = sequence_cost(x_init, model, forecast, &idle, config)?;
    let mut search = Search {
        model,
        config,
        inputs,
        current: idle.clone(),
        best: idle,
        best_cost: idle_cost,
        leaves: 0,
    };
    search.descend(0, x_init, 0.0);
    log::trace!("enumerated {} leaves", search.leaves);

    let (cost, predicted_states) = sequence_cost(x_init, model, forecast, &search.best, config)?;
    debug_assert_eq!(cost.to_bits(), search.best_cost.to_bits());
    Ok(ControlPlan {
        x_init: *x_init,
        actions: search.best,
        predicted_states,
        cost,
    })
}

/// Forecast window of `len` bins starting at `start`, holding the last
/// available value past the end.
pub fn forecast_window(forecast: &[Volumes], start: usize, len: usize) -> Vec<Volumes> {
    let last = forecast.len().saturating_sub(1);
    (start..start + len).map(|k| forecast[k.min(last)]).collect()
}

/// One executed bin of a closed-loop run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    /// State at the start of the bin, where the plan was solved.
    pub state: TrafficState,
    pub action: Action,
    pub solve_cost: f64,
    /// Wall-clock solve time; not reproducible.
    pub solve_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopTrace {
    pub steps: Vec<TraceStep>,
    pub final_state: TrafficState,
}

impl ClosedLoopTrace {
    pub fn actions(&self) -> Vec<Action> {
        self.steps.iter().map(|s| s.action).collect()
    }

    /// Plant states after each executed bin.
    pub fn states(&self) -> Vec<TrafficState> {
        self.steps
            .iter()
            .skip(1)
            .map(|s| s.state)
            .chain(std::iter::once(self.final_state))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Doc<'a> {
            schema_version: u32,
            #[serde(flatten)]
            trace: &'a ClosedLoopTrace,
        }
        Ok(serde_json::to_string_pretty(&Doc {
            schema_version: crate::SCHEMA_VERSION,
            trace: self,
        })?)
    }
}

/// Receding-horizon loop: solve, apply the first action to the plant with
/// the volumes of the current bin, observe, repeat.
///
/// `forecast[k]` holds the volumes of bin `k` and must cover `total_steps`
/// bins; planning windows that run past its end hold the last value.
pub fn receding_horizon(
    x_init: &TrafficState,
    model: &DynamicsModel,
    plant: &mut PlantStepper,
    forecast: &[Volumes],
    config: &MpcConfig,
    total_steps: usize,
) -> Result<ClosedLoopTrace> {
    config.validate()?;
    if forecast.len() < total_steps || forecast.is_empty() {
        return Err(Error::param(format!(
            "forecast covers {} bins, the run needs {total_steps}",
            forecast.len()
        )));
    }
    let mut x = *x_init;
    let mut steps = Vec::with_capacity(total_steps);
    for k in 0..total_steps {
        let window = forecast_window(forecast, k, config.horizon_t);
        let started = Instant::now();
        let plan = solve(&x, model, &window, config)?;
        let solve_ms = started.elapsed().as_secs_f64() * 1e3;
        let action = plan.actions[0];
        let next = plant.step(&x, &ControlInput::new(action, forecast[k])?);
        steps.push(TraceStep {
            state: x,
            action,
            solve_cost: plan.cost,
            solve_ms,
        });
        x = next;
    }
    Ok(ClosedLoopTrace {
        steps,
        final_state: x,
    })
}
