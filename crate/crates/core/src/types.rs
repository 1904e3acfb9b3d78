//! Domain types shared by ingestion, identification, control and evaluation.
//!
//! Every type here is an immutable value after construction. Constructors
//! enforce the physical invariants (non-negative flows and speeds, binary and
//! mutually exclusive diversion flags, masks honoured by the model matrices)
//! so downstream code can rely on them without re-checking.

use std::fmt;

use nalgebra::{Matrix4, SMatrix, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sysid::{FitSummary, SolverStats};
use crate::SCHEMA_VERSION;

/// Row/column index of Departures flow in the state vector.
pub const DF: usize = 0;
/// Departures speed.
pub const DS: usize = 1;
/// Arrivals flow.
pub const AF: usize = 2;
/// Arrivals speed.
pub const AS: usize = 3;
/// Column of the divert-from-Departures flag in the stacked `[A B]` matrix.
pub const TD: usize = 4;
/// Divert-from-Arrivals flag.
pub const TA: usize = 5;
/// Departing passenger volume feature.
pub const DV: usize = 6;
/// Arriving passenger volume feature.
pub const AV: usize = 7;

pub const STATE_NAMES: [&str; 4] = ["DF", "DS", "AF", "AS"];

/// Default critical speed of the Departures roadway, km/h.
pub const DEPARTURES_CRITICAL_SPEED: f64 = 35.0;
/// Default critical speed of the Arrivals roadway, km/h.
pub const ARRIVALS_CRITICAL_SPEED: f64 = 45.0;
/// Default width of one measurement bin.
pub const DEFAULT_BIN_MINUTES: u32 = 15;

/// The stacked system matrix `[A B]`.
pub type SystemMatrix = SMatrix<f64, 4, 8>;

/// Ratio of an observed speed to the roadway's critical speed.
///
/// Values well below one mark significant congestion.
pub fn critical_ratio(speed: f64, critical_speed: f64) -> Result<f64> {
    if !(critical_speed.is_finite() && critical_speed > 0.0) {
        return Err(Error::param(format!(
            "critical speed must be positive and finite, got {critical_speed}"
        )));
    }
    if !(speed.is_finite() && speed >= 0.0) {
        return Err(Error::param(format!(
            "speed must be non-negative and finite, got {speed}"
        )));
    }
    Ok(speed / critical_speed)
}

/// Clamp to the non-negative half-line. Negative zero maps to positive zero
/// so clamped values compare bit-equal regardless of how they were produced.
#[inline]
pub(crate) fn clamp_non_negative(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

// ── Traffic state ───────────────────────────────────────────────────────

/// Macroscopic roadway state for one bin: flows in vehicles per bin and
/// average speeds in km/h.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StateRepr", into = "StateRepr")]
pub struct TrafficState {
    df: f64,
    ds: f64,
    af: f64,
    as_: f64,
}

#[derive(Serialize, Deserialize)]
struct StateRepr {
    df: f64,
    ds: f64,
    af: f64,
    #[serde(rename = "as")]
    as_: f64,
}

impl TryFrom<StateRepr> for TrafficState {
    type Error = Error;
    fn try_from(r: StateRepr) -> Result<Self> {
        TrafficState::new(r.df, r.ds, r.af, r.as_)
    }
}

impl From<TrafficState> for StateRepr {
    fn from(s: TrafficState) -> Self {
        StateRepr {
            df: s.df,
            ds: s.ds,
            af: s.af,
            as_: s.as_,
        }
    }
}

impl TrafficState {
    /// Builds a state, clamping negative components to zero. Non-finite
    /// components are rejected.
    pub fn new(df: f64, ds: f64, af: f64, as_: f64) -> Result<Self> {
        for (name, v) in STATE_NAMES.iter().zip([df, ds, af, as_]) {
            if !v.is_finite() {
                return Err(Error::InvalidValue {
                    field: name,
                    reason: format!("non-finite state component {v}"),
                });
            }
        }
        Ok(Self::clamped(Vector4::new(df, ds, af, as_)))
    }

    /// Builds a state from a finite vector, clamping negatives to zero.
    pub fn from_vector(v: &Vector4<f64>) -> Result<Self> {
        Self::new(v[0], v[1], v[2], v[3])
    }

    /// Clamps without the finiteness check; callers guarantee finite input.
    pub(crate) fn clamped(v: Vector4<f64>) -> Self {
        TrafficState {
            df: clamp_non_negative(v[0]),
            ds: clamp_non_negative(v[1]),
            af: clamp_non_negative(v[2]),
            as_: clamp_non_negative(v[3]),
        }
    }

    pub fn df(&self) -> f64 {
        self.df
    }
    pub fn ds(&self) -> f64 {
        self.ds
    }
    pub fn af(&self) -> f64 {
        self.af
    }
    pub fn as_(&self) -> f64 {
        self.as_
    }

    pub fn to_vector(&self) -> Vector4<f64> {
        Vector4::new(self.df, self.ds, self.af, self.as_)
    }

    pub fn get(&self, index: usize) -> f64 {
        match index {
            DF => self.df,
            DS => self.ds,
            AF => self.af,
            AS => self.as_,
            _ => panic!("state index {index} out of range"),
        }
    }

    pub fn speed(&self, facility: Facility) -> f64 {
        self.get(facility.speed_index())
    }

    pub fn flow(&self, facility: Facility) -> f64 {
        self.get(facility.flow_index())
    }
}

// ── Control input ───────────────────────────────────────────────────────

/// What the variable message sign displays during one bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    /// No diversion message.
    #[serde(rename = "none")]
    Idle,
    /// Divert traffic from Departures to Arrivals (TD).
    #[serde(rename = "td")]
    DivertDepartures,
    /// Divert traffic from Arrivals to Departures (TA).
    #[serde(rename = "ta")]
    DivertArrivals,
}

impl Action {
    /// The feasible actions in enumeration order.
    pub const ALL: [Action; 3] = [Action::Idle, Action::DivertDepartures, Action::DivertArrivals];

    pub fn from_flags(td: bool, ta: bool) -> Result<Self> {
        match (td, ta) {
            (false, false) => Ok(Action::Idle),
            (true, false) => Ok(Action::DivertDepartures),
            (false, true) => Ok(Action::DivertArrivals),
            (true, true) => Err(Error::InvalidValue {
                field: "td/ta",
                reason: "at most one diversion message can be displayed".into(),
            }),
        }
    }

    pub fn td(self) -> bool {
        self == Action::DivertDepartures
    }

    pub fn ta(self) -> bool {
        self == Action::DivertArrivals
    }

    pub fn is_active(self) -> bool {
        self != Action::Idle
    }

    /// The action that relieves the given facility.
    pub fn treating(facility: Facility) -> Self {
        match facility {
            Facility::Departures => Action::DivertDepartures,
            Facility::Arrivals => Action::DivertArrivals,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Action::Idle => "none",
            Action::DivertDepartures => "td",
            Action::DivertArrivals => "ta",
        })
    }
}

/// Exogenous passenger-volume features, normalized to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Volumes {
    pub dv: f64,
    pub av: f64,
}

/// Full input vector `(TD, TA, DV, AV)` for one bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InputRepr", into = "InputRepr")]
pub struct ControlInput {
    action: Action,
    volumes: Volumes,
}

#[derive(Serialize, Deserialize)]
struct InputRepr {
    td: u8,
    ta: u8,
    dv: f64,
    av: f64,
}

impl TryFrom<InputRepr> for ControlInput {
    type Error = Error;
    fn try_from(r: InputRepr) -> Result<Self> {
        let flag = |v: u8, field| match v {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(Error::InvalidValue {
                field,
                reason: format!("expected 0 or 1, got {v}"),
            }),
        };
        let action = Action::from_flags(flag(r.td, "td")?, flag(r.ta, "ta")?)?;
        ControlInput::new(action, Volumes { dv: r.dv, av: r.av })
    }
}

impl From<ControlInput> for InputRepr {
    fn from(c: ControlInput) -> Self {
        InputRepr {
            td: c.action.td() as u8,
            ta: c.action.ta() as u8,
            dv: c.volumes.dv,
            av: c.volumes.av,
        }
    }
}

impl ControlInput {
    pub fn new(action: Action, volumes: Volumes) -> Result<Self> {
        for (field, v) in [("dv", volumes.dv), ("av", volumes.av)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidValue {
                    field,
                    reason: format!("normalized volume must lie in [0, 1], got {v}"),
                });
            }
        }
        Ok(ControlInput { action, volumes })
    }

    /// Builds an input from raw `td`/`ta` flags.
    pub fn from_flags(td: bool, ta: bool, volumes: Volumes) -> Result<Self> {
        Self::new(Action::from_flags(td, ta)?, volumes)
    }

    pub fn action(&self) -> Action {
        self.action
    }

    pub fn volumes(&self) -> Volumes {
        self.volumes
    }

    pub fn with_action(&self, action: Action) -> Self {
        ControlInput { action, ..*self }
    }

    pub fn to_vector(&self) -> Vector4<f64> {
        Vector4::new(
            f64::from(u8::from(self.action.td())),
            f64::from(u8::from(self.action.ta())),
            self.volumes.dv,
            self.volumes.av,
        )
    }
}

// ── Facilities ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Facility {
    Departures,
    Arrivals,
}

impl Facility {
    pub const BOTH: [Facility; 2] = [Facility::Departures, Facility::Arrivals];

    pub fn speed_index(self) -> usize {
        match self {
            Facility::Departures => DS,
            Facility::Arrivals => AS,
        }
    }

    pub fn flow_index(self) -> usize {
        match self {
            Facility::Departures => DF,
            Facility::Arrivals => AF,
        }
    }

    pub fn other(self) -> Facility {
        match self {
            Facility::Departures => Facility::Arrivals,
            Facility::Arrivals => Facility::Departures,
        }
    }
}

impl fmt::Display for Facility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Facility::Departures => "departures",
            Facility::Arrivals => "arrivals",
        })
    }
}

/// Critical speeds of the two roadways, km/h.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalSpeeds {
    pub departures: f64,
    pub arrivals: f64,
}

impl Default for CriticalSpeeds {
    fn default() -> Self {
        CriticalSpeeds {
            departures: DEPARTURES_CRITICAL_SPEED,
            arrivals: ARRIVALS_CRITICAL_SPEED,
        }
    }
}

impl CriticalSpeeds {
    pub fn for_facility(&self, facility: Facility) -> f64 {
        match facility {
            Facility::Departures => self.departures,
            Facility::Arrivals => self.arrivals,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for v in [self.departures, self.arrivals] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::param(format!("critical speed must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Critical ratio of `facility` in `state`. Valid speeds are guaranteed
    /// by `TrafficState`, so this cannot fail once the speeds are validated.
    pub fn ratio(&self, state: &TrafficState, facility: Facility) -> f64 {
        state.speed(facility) / self.for_facility(facility)
    }
}

// ── Structural masks ────────────────────────────────────────────────────

/// Sign restriction on one entry of `[A B]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignConstraint {
    #[default]
    Free,
    NonNegative,
    NonPositive,
}

impl SignConstraint {
    /// Projects a value onto the allowed half-line.
    #[inline]
    pub fn project(self, v: f64) -> f64 {
        match self {
            SignConstraint::Free => v,
            SignConstraint::NonNegative => clamp_non_negative(v),
            SignConstraint::NonPositive => {
                if v < 0.0 {
                    v
                } else {
                    0.0
                }
            }
        }
    }

    pub fn is_satisfied(self, v: f64, tol: f64) -> bool {
        match self {
            SignConstraint::Free => true,
            SignConstraint::NonNegative => v >= -tol,
            SignConstraint::NonPositive => v <= tol,
        }
    }
}

/// Entrywise structure imposed on `[A B]`: entries pinned at zero and entries
/// restricted to a half-line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureMasks {
    pub eq: [[bool; 8]; 4],
    pub sign: [[SignConstraint; 8]; 4],
}

impl StructureMasks {
    /// No structural restrictions.
    pub fn none() -> Self {
        StructureMasks {
            eq: [[false; 8]; 4],
            sign: [[SignConstraint::Free; 8]; 4],
        }
    }

    /// Independent roadway flows and non-negative speed response to the
    /// facility's own diversion message.
    pub fn domain_default() -> Self {
        let mut m = Self::none();
        m.eq[DF][AF] = true;
        m.eq[AF][DF] = true;
        m.eq[DF][AS] = true;
        m.eq[AF][DS] = true;
        m.sign[DS][TD] = SignConstraint::NonNegative;
        m.sign[AS][TA] = SignConstraint::NonNegative;
        m
    }

    /// Exact projection onto `{eq entries = 0} ∩ {sign entries in half-line}`.
    pub fn project(&self, row: usize, col: usize, v: f64) -> f64 {
        if self.eq[row][col] {
            0.0
        } else {
            self.sign[row][col].project(v)
        }
    }

    pub fn project_matrix(&self, m: &SystemMatrix) -> SystemMatrix {
        SystemMatrix::from_fn(|r, c| self.project(r, c, m[(r, c)]))
    }

    /// Checks the mask invariants on a candidate `[A B]`.
    pub fn check(&self, m: &SystemMatrix, sign_tol: f64) -> Result<()> {
        for r in 0..4 {
            for c in 0..8 {
                let v = m[(r, c)];
                if self.eq[r][c] && v != 0.0 {
                    return Err(Error::InvalidValue {
                        field: "eq_mask",
                        reason: format!("entry ({r}, {c}) must be exactly zero, got {v}"),
                    });
                }
                if !self.sign[r][c].is_satisfied(v, sign_tol) {
                    return Err(Error::InvalidValue {
                        field: "sign_mask",
                        reason: format!(
                            "entry ({r}, {c}) = {v} violates {:?}",
                            self.sign[r][c]
                        ),
                    });
                }
            }
        }
        Ok(())
    }
}

impl Default for StructureMasks {
    fn default() -> Self {
        Self::domain_default()
    }
}

// ── Volume scaling ──────────────────────────────────────────────────────

/// Range of one raw feature over the training data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

impl MinMax {
    pub fn fit(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let mut it = values.into_iter();
        let first = it.next()?;
        let (min, max) = it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v)));
        Some(MinMax { min, max })
    }

    /// Min-max normalization clamped to `[0, 1]`; a degenerate range maps to 0.
    pub fn normalize(&self, raw: f64) -> f64 {
        let span = self.max - self.min;
        if span <= 0.0 {
            return 0.0;
        }
        ((raw - self.min) / span).clamp(0.0, 1.0)
    }
}

/// Scaling constants for the passenger-volume features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumeScale {
    pub dv: MinMax,
    pub av: MinMax,
}

impl VolumeScale {
    pub fn identity() -> Self {
        VolumeScale {
            dv: MinMax { min: 0.0, max: 1.0 },
            av: MinMax { min: 0.0, max: 1.0 },
        }
    }

    pub fn normalize(&self, raw_dv: f64, raw_av: f64) -> Volumes {
        Volumes {
            dv: self.dv.normalize(raw_dv),
            av: self.av.normalize(raw_av),
        }
    }

    fn validate(&self) -> Result<()> {
        for mm in [self.dv, self.av] {
            if !(mm.min.is_finite() && mm.max.is_finite() && mm.min <= mm.max) {
                return Err(Error::InvalidValue {
                    field: "volume_scale",
                    reason: format!("invalid range [{}, {}]", mm.min, mm.max),
                });
            }
        }
        Ok(())
    }
}

// ── Dynamics model ──────────────────────────────────────────────────────

/// Tolerance on sign-constrained entries.
pub const SIGN_TOLERANCE: f64 = 1e-9;

/// Linear model `x_{k+1} = A x_k + B u_k` with its structural masks.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsModel {
    a: Matrix4<f64>,
    b: Matrix4<f64>,
    masks: StructureMasks,
    volume_scale: VolumeScale,
    solver: Option<SolverStats>,
    fit_summary: Option<FitSummary>,
}

impl DynamicsModel {
    pub fn new(
        a: Matrix4<f64>,
        b: Matrix4<f64>,
        masks: StructureMasks,
        volume_scale: VolumeScale,
    ) -> Result<Self> {
        let mut stacked = SystemMatrix::zeros();
        stacked.fixed_view_mut::<4, 4>(0, 0).copy_from(&a);
        stacked.fixed_view_mut::<4, 4>(0, 4).copy_from(&b);
        Self::from_stacked(stacked, masks, volume_scale)
    }

    /// Builds a model from `[A B]`.
    pub fn from_stacked(
        stacked: SystemMatrix,
        masks: StructureMasks,
        volume_scale: VolumeScale,
    ) -> Result<Self> {
        if stacked.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue {
                field: "model",
                reason: "matrix entries must be finite".into(),
            });
        }
        masks.check(&stacked, SIGN_TOLERANCE)?;
        volume_scale.validate()?;
        Ok(DynamicsModel {
            a: stacked.fixed_view::<4, 4>(0, 0).into_owned(),
            b: stacked.fixed_view::<4, 4>(0, 4).into_owned(),
            masks,
            volume_scale,
            solver: None,
            fit_summary: None,
        })
    }

    /// Unstructured model without masks or volume scaling.
    pub fn unconstrained(a: Matrix4<f64>, b: Matrix4<f64>) -> Result<Self> {
        Self::new(a, b, StructureMasks::none(), VolumeScale::identity())
    }

    pub fn a(&self) -> &Matrix4<f64> {
        &self.a
    }

    pub fn b(&self) -> &Matrix4<f64> {
        &self.b
    }

    pub fn stacked(&self) -> SystemMatrix {
        let mut m = SystemMatrix::zeros();
        m.fixed_view_mut::<4, 4>(0, 0).copy_from(&self.a);
        m.fixed_view_mut::<4, 4>(0, 4).copy_from(&self.b);
        m
    }

    pub fn masks(&self) -> &StructureMasks {
        &self.masks
    }

    pub fn volume_scale(&self) -> &VolumeScale {
        &self.volume_scale
    }

    pub fn solver_stats(&self) -> Option<&SolverStats> {
        self.solver.as_ref()
    }

    pub fn fit_summary(&self) -> Option<&FitSummary> {
        self.fit_summary.as_ref()
    }

    pub fn with_solver_stats(mut self, stats: SolverStats) -> Self {
        self.solver = Some(stats);
        self
    }

    pub fn with_volume_scale(mut self, scale: VolumeScale) -> Result<Self> {
        scale.validate()?;
        self.volume_scale = scale;
        Ok(self)
    }

    pub fn with_fit_summary(mut self, summary: FitSummary) -> Self {
        self.fit_summary = Some(summary);
        self
    }

    /// Unclamped one-step prediction `A x + B u`.
    pub fn predict(&self, state: &TrafficState, input: &ControlInput) -> Vector4<f64> {
        self.a * state.to_vector() + self.b * input.to_vector()
    }

    /// One step of the clamped recursion `max(A x + B u, 0)`. This is the
    /// single deterministic transition shared by the controller and the plant.
    pub fn step(&self, state: &TrafficState, input: &ControlInput) -> TrafficState {
        TrafficState::clamped(self.predict(state, input))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelDocument::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        doc.try_into()
    }
}

/// On-disk form of a [`DynamicsModel`]; matrices are stored row-major.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDocument {
    schema_version: u32,
    a: [[f64; 4]; 4],
    b: [[f64; 4]; 4],
    eq_mask: [[bool; 8]; 4],
    sign_mask: [[SignConstraint; 8]; 4],
    volume_scale: VolumeScale,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    solver: Option<SolverStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fit_summary: Option<FitSummary>,
}

fn rows_of(m: &Matrix4<f64>) -> [[f64; 4]; 4] {
    let mut out = [[0.0; 4]; 4];
    for (r, row) in out.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = m[(r, c)];
        }
    }
    out
}

impl From<&DynamicsModel> for ModelDocument {
    fn from(m: &DynamicsModel) -> Self {
        ModelDocument {
            schema_version: SCHEMA_VERSION,
            a: rows_of(&m.a),
            b: rows_of(&m.b),
            eq_mask: m.masks.eq,
            sign_mask: m.masks.sign,
            volume_scale: m.volume_scale,
            solver: m.solver.clone(),
            fit_summary: m.fit_summary.clone(),
        }
    }
}

impl TryFrom<ModelDocument> for DynamicsModel {
    type Error = Error;
    fn try_from(doc: ModelDocument) -> Result<Self> {
        if doc.schema_version != SCHEMA_VERSION {
            return Err(Error::Version {
                found: doc.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        let a = Matrix4::from_fn(|r, c| doc.a[r][c]);
        let b = Matrix4::from_fn(|r, c| doc.b[r][c]);
        let masks = StructureMasks {
            eq: doc.eq_mask,
            sign: doc.sign_mask,
        };
        let mut model = DynamicsModel::new(a, b, masks, doc.volume_scale)?;
        model.solver = doc.solver;
        model.fit_summary = doc.fit_summary;
        Ok(model)
    }
}

// ── Noise model ─────────────────────────────────────────────────────────

/// Per-state uniform residual bounds `U(lo, hi)` used by the stochastic plant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NoiseDocument", into = "NoiseDocument")]
pub struct NoiseModel {
    lo: [f64; 4],
    hi: [f64; 4],
    seed: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoiseDocument {
    schema_version: u32,
    lo: [f64; 4],
    hi: [f64; 4],
    #[serde(default)]
    seed: u64,
}

impl TryFrom<NoiseDocument> for NoiseModel {
    type Error = Error;
    fn try_from(d: NoiseDocument) -> Result<Self> {
        if d.schema_version != SCHEMA_VERSION {
            return Err(Error::Version {
                found: d.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        NoiseModel::new(d.lo, d.hi, d.seed)
    }
}

impl From<NoiseModel> for NoiseDocument {
    fn from(n: NoiseModel) -> Self {
        NoiseDocument {
            schema_version: SCHEMA_VERSION,
            lo: n.lo,
            hi: n.hi,
            seed: n.seed,
        }
    }
}

impl NoiseModel {
    pub fn new(lo: [f64; 4], hi: [f64; 4], seed: u64) -> Result<Self> {
        for i in 0..4 {
            if !(lo[i].is_finite() && hi[i].is_finite()) {
                return Err(Error::Calibration(format!(
                    "{} bounds must be finite",
                    STATE_NAMES[i]
                )));
            }
            if lo[i] > 0.0 || hi[i] < 0.0 {
                return Err(Error::Calibration(format!(
                    "{} bounds ({}, {}) do not straddle zero",
                    STATE_NAMES[i], lo[i], hi[i]
                )));
            }
        }
        Ok(NoiseModel { lo, hi, seed })
    }

    /// Noise-free plant.
    pub fn zero(seed: u64) -> Self {
        NoiseModel {
            lo: [0.0; 4],
            hi: [0.0; 4],
            seed,
        }
    }

    pub fn lo(&self) -> [f64; 4] {
        self.lo
    }

    pub fn hi(&self) -> [f64; 4] {
        self.hi
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        NoiseModel { seed, ..*self }
    }

    pub fn mean(&self) -> Vector4<f64> {
        Vector4::from_fn(|i, _| 0.5 * (self.lo[i] + self.hi[i]))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

// ── Time series and scenarios ───────────────────────────────────────────

/// Contiguous, uniformly binned sequence of states and inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    start: i64,
    bin_minutes: u32,
    states: Vec<TrafficState>,
    inputs: Vec<ControlInput>,
}

impl TimeSeries {
    /// `start` is the UTC epoch second of the first bin.
    pub fn new(
        start: i64,
        bin_minutes: u32,
        states: Vec<TrafficState>,
        inputs: Vec<ControlInput>,
    ) -> Result<Self> {
        if bin_minutes == 0 {
            return Err(Error::param("bin size must be positive"));
        }
        if states.len() != inputs.len() {
            return Err(Error::InvalidValue {
                field: "time series",
                reason: format!(
                    "{} states but {} inputs",
                    states.len(),
                    inputs.len()
                ),
            });
        }
        Ok(TimeSeries {
            start,
            bin_minutes,
            states,
            inputs,
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn start(&self) -> i64 {
        self.start
    }

    pub fn bin_minutes(&self) -> u32 {
        self.bin_minutes
    }

    pub fn bin_seconds(&self) -> i64 {
        i64::from(self.bin_minutes) * 60
    }

    pub fn states(&self) -> &[TrafficState] {
        &self.states
    }

    pub fn inputs(&self) -> &[ControlInput] {
        &self.inputs
    }

    /// Epoch second at the start of bin `index`.
    pub fn timestamp(&self, index: usize) -> i64 {
        self.start + index as i64 * self.bin_seconds()
    }

    /// Copies bins `range` into a new series.
    pub fn slice(&self, range: std::ops::Range<usize>) -> TimeSeries {
        TimeSeries {
            start: self.timestamp(range.start),
            bin_minutes: self.bin_minutes,
            states: self.states[range.clone()].to_vec(),
            inputs: self.inputs[range].to_vec(),
        }
    }
}

/// A historical window in which one facility was congested while no
/// diversion message was shown.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub window: TimeSeries,
    pub congested_facility: Facility,
    /// Index of the window's first bin in the source series.
    pub onset_index: usize,
    pub label: String,
}
