//! Constrained, row-sparse least-squares identification of `[A B]`.
//!
//! The estimate minimizes
//!
//! ```text
//! ½‖Y − A′X′‖²_F + ρ Σᵢ ‖A′ᵢ‖₂   subject to the structural masks
//! ```
//!
//! with an ADMM splitting `A′ = Z`. The `A′` block is the smooth
//! least-squares term with zero-masked entries eliminated, solved in closed
//! form each iteration. The `Z` block is the row-wise ℓ2,1 penalty plus the
//! indicator of the mask set; its proximal map is the exact entrywise mask
//! projection followed by row shrinkage.
//!
//! Features differ in scale by orders of magnitude (vehicle counts next to
//! binary flags), so by default the splitting runs in coordinates where each
//! regressor has unit RMS. The masks are invariant under that positive
//! diagonal rescaling; the row norm becomes a weighted norm whose proximal
//! map is [`scaled_row_group_prox`], which reduces to [`row_group_prox`] when
//! all scales are equal.

use nalgebra::{DMatrix, DVector, Dyn, OMatrix, SMatrix, SVector, U4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::RegressionDataset;
use crate::stats::quantile_sorted;
use crate::types::{DynamicsModel, NoiseModel, StructureMasks, SystemMatrix, VolumeScale, STATE_NAMES};

pub type Row8 = SVector<f64, 8>;

/// Ridge added to the Gram diagonal when the regressors are rank deficient.
pub const RIDGE_FALLBACK: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Weight of the row-wise ℓ2,1 penalty.
    pub rho: f64,
    pub max_iters: usize,
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// ADMM penalty. With `precondition` it is relative to the unit-RMS
    /// Gram matrix (multiplied by the column count); otherwise absolute.
    pub admm_penalty: f64,
    /// Run the splitting in unit-RMS feature coordinates.
    pub precondition: bool,
    pub masks: StructureMasks,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            rho: 0.1,
            max_iters: 5000,
            abs_tol: 1e-6,
            rel_tol: 1e-4,
            admm_penalty: 1.0,
            precondition: true,
            masks: StructureMasks::domain_default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho.is_finite() && self.rho >= 0.0) {
            return Err(Error::param(format!("rho must be non-negative, got {}", self.rho)));
        }
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0) {
            return Err(Error::param("ADMM tolerances must be positive"));
        }
        if !(self.admm_penalty.is_finite() && self.admm_penalty > 0.0) {
            return Err(Error::param("ADMM penalty must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::param("max_iters must be positive"));
        }
        Ok(())
    }
}

/// Convergence record of one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub ridge_fallback: bool,
    pub initial_objective: f64,
    pub final_objective: f64,
}

/// Proximal map of `threshold · ‖·‖₂` on one row:
/// `max(0, 1 − threshold/‖row‖) · row`.
pub fn row_group_prox(row: &Row8, threshold: f64) -> Row8 {
    let norm = row.norm();
    if norm <= threshold {
        return Row8::zeros();
    }
    row * (1.0 - threshold / norm)
}

/// Proximal map of `threshold · ‖D⁻¹ z‖₂` for positive diagonal `scale = D`:
/// the minimizer of `½‖z − row‖² + threshold‖D⁻¹z‖₂`.
///
/// The solution is zero when `‖D row‖ ≤ threshold`; otherwise
/// `zⱼ = rowⱼ dⱼ² t / (dⱼ² t + threshold)` where `t = ‖D⁻¹z‖` is the unique
/// root of `Σⱼ (rowⱼ dⱼ / (dⱼ² t + threshold))² = 1`.
pub fn scaled_row_group_prox(row: &Row8, scale: &Row8, threshold: f64) -> Row8 {
    if scale.iter().all(|&d| d == 1.0) {
        return row_group_prox(row, threshold);
    }
    let c = row.component_mul(scale);
    let c_norm = c.norm();
    if c_norm <= threshold {
        return Row8::zeros();
    }
    if threshold == 0.0 {
        return *row;
    }
    let g = |t: f64| -> f64 {
        c.iter()
            .zip(scale.iter())
            .map(|(cj, dj)| {
                let q = cj / (dj * dj * t + threshold);
                q * q
            })
            .sum()
    };
    let d2_min = scale.iter().fold(f64::INFINITY, |m, d| m.min(d * d));
    let d2_max = scale.iter().fold(0.0f64, |m, d| m.max(d * d));
    let mut lo = (c_norm - threshold) / d2_max;
    let mut hi = (c_norm - threshold) / d2_min;
    // g is decreasing; keep g(lo) >= 1 >= g(hi).
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    Row8::from_fn(|j, _| {
        let d2 = scale[j] * scale[j];
        row[j] * d2 * t / (d2 * t + threshold)
    })
}

/// `½‖Y − WX′‖²_F + ρ Σᵢ ‖Wᵢ‖₂`.
pub fn objective(w: &SystemMatrix, data: &RegressionDataset, rho: f64) -> f64 {
    let resid = &data.y - w * &data.x_prime;
    0.5 * resid.norm_squared() + rho * (0..4).map(|i| w.row(i).norm()).sum::<f64>()
}

/// Least-squares `[A B]` via the normal equations, without penalty or masks.
pub fn normal_equations(data: &RegressionDataset) -> Option<SystemMatrix> {
    let gram: SMatrix<f64, 8, 8> = &data.x_prime * data.x_prime.transpose();
    let rhs: SMatrix<f64, 4, 8> = &data.y * data.x_prime.transpose();
    let chol = gram.cholesky()?;
    Some(chol.solve(&rhs.transpose()).transpose())
}

/// Per-row closed-form solver for the least-squares block on the unmasked
/// entries.
struct RowSolver {
    free: Vec<usize>,
    chol: Option<nalgebra::Cholesky<f64, Dyn>>,
}

impl RowSolver {
    fn new(gram: &SMatrix<f64, 8, 8>, eq: &[bool; 8], mu: f64) -> Result<Self> {
        let free: Vec<usize> = (0..8).filter(|&j| !eq[j]).collect();
        if free.is_empty() {
            return Ok(RowSolver { free, chol: None });
        }
        let k = DMatrix::from_fn(free.len(), free.len(), |a, b| {
            gram[(free[a], free[b])] + if a == b { mu } else { 0.0 }
        });
        let chol = k
            .cholesky()
            .ok_or_else(|| Error::InsufficientData("least-squares block is not positive definite".into()))?;
        Ok(RowSolver {
            free,
            chol: Some(chol),
        })
    }

    fn solve(&self, rhs: &Row8) -> Row8 {
        let mut out = Row8::zeros();
        if let Some(chol) = &self.chol {
            let b = DVector::from_iterator(self.free.len(), self.free.iter().map(|&j| rhs[j]));
            let x = chol.solve(&b);
            for (a, &j) in self.free.iter().enumerate() {
                out[j] = x[a];
            }
        }
        out
    }
}

/// Estimates `[A B]` from training columns. The returned model satisfies
/// the masks exactly and carries identity volume scaling; attach the
/// dataset's scaling with [`DynamicsModel::with_volume_scale`].
pub fn fit(train: &RegressionDataset, config: &FitConfig) -> Result<DynamicsModel> {
    config.validate()?;
    let n = train.len();
    if n < 8 {
        return Err(Error::InsufficientData(format!(
            "{n} training columns, at least 8 required"
        )));
    }
    if train.x_prime.iter().chain(train.y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidValue {
            field: "training data",
            reason: "non-finite entries".into(),
        });
    }
    let masks = &config.masks;

    let scale = if config.precondition {
        Row8::from_fn(|j, _| {
            let rms = (train.x_prime.row(j).norm_squared() / n as f64).sqrt();
            if rms > 0.0 && rms.is_finite() {
                rms
            } else {
                1.0
            }
        })
    } else {
        Row8::repeat(1.0)
    };
    // Regressors in scaled coordinates: X̃ = D⁻¹X′.
    let mut xs = train.x_prime.clone();
    for j in 0..8 {
        xs.row_mut(j).scale_mut(1.0 / scale[j]);
    }
    let mut gram: SMatrix<f64, 8, 8> = &xs * xs.transpose();
    let cross: SMatrix<f64, 4, 8> = &train.y * xs.transpose();

    let eig = gram.symmetric_eigenvalues();
    let (emin, emax) = eig
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e.abs())));
    // Written so that a NaN spectrum also takes the fallback.
    let ridge_fallback = emin.partial_cmp(&(emax * 1e-13)) != Some(std::cmp::Ordering::Greater);
    if ridge_fallback {
        log::warn!("training regressors are rank deficient; adding {RIDGE_FALLBACK} to the Gram diagonal");
        for j in 0..8 {
            gram[(j, j)] += RIDGE_FALLBACK;
        }
    }

    // Geometric mean of the extreme curvatures balances the slow modes of
    // both ADMM blocks.
    let mu = if config.precondition {
        config.admm_penalty * (emin.max(emax * 1e-12) * emax).sqrt()
    } else {
        config.admm_penalty
    };
    let solvers = (0..4)
        .map(|i| RowSolver::new(&gram, &masks.eq[i], mu))
        .collect::<Result<Vec<_>>>()?;
    let threshold = config.rho / mu;

    let mut v = SystemMatrix::zeros();
    let mut z = SystemMatrix::zeros();
    let mut u = SystemMatrix::zeros();
    let eps_scale = (32f64).sqrt() * config.abs_tol;
    let initial_objective = objective(&SystemMatrix::zeros(), train, config.rho);

    let mut primal = f64::INFINITY;
    let mut dual = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < config.max_iters {
        iterations += 1;
        for (i, solver) in solvers.iter().enumerate() {
            let rhs: Row8 = cross.row(i).transpose() + mu * (z.row(i) - u.row(i)).transpose();
            v.set_row(i, &solver.solve(&rhs).transpose());
        }
        let z_prev = z;
        for i in 0..4 {
            let a: Row8 = (v.row(i) + u.row(i)).transpose();
            let projected = Row8::from_fn(|j, _| masks.project(i, j, a[j]));
            z.set_row(i, &scaled_row_group_prox(&projected, &scale, threshold).transpose());
        }
        u += v - z;

        primal = (v - z).norm();
        dual = mu * (z - z_prev).norm();
        let eps_pri = eps_scale + config.rel_tol * v.norm().max(z.norm());
        let eps_dual = eps_scale + config.rel_tol * mu * u.norm();
        if primal <= eps_pri && dual <= eps_dual {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NotConverged {
            iterations,
            primal,
            dual,
        });
    }

    let unscaled = SystemMatrix::from_fn(|i, j| z[(i, j)] / scale[j]);
    let stacked = masks.project_matrix(&unscaled);
    let stats = SolverStats {
        iterations,
        primal_residual: primal,
        dual_residual: dual,
        ridge_fallback,
        initial_objective,
        final_objective: objective(&stacked, train, config.rho),
    };
    Ok(
        DynamicsModel::from_stacked(stacked, masks.clone(), VolumeScale::identity())?
            .with_solver_stats(stats),
    )
}

// ── Validation statistics ───────────────────────────────────────────────

/// Fixed-edge residual histogram; bins are half-open `[lo + i·w, lo + (i+1)·w)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub width: f64,
    pub counts: Vec<u64>,
    pub underflow: u64,
    pub overflow: u64,
}

impl Histogram {
    pub fn new(lo: f64, width: f64, bins: usize) -> Self {
        Histogram {
            lo,
            width,
            counts: vec![0; bins],
            underflow: 0,
            overflow: 0,
        }
    }

    /// Flow residuals: width 5 vehicles over [−100, 100].
    pub fn for_flow() -> Self {
        Self::new(-100.0, 5.0, 40)
    }

    /// Speed residuals: width 0.5 km/h over [−15, 15].
    pub fn for_speed() -> Self {
        Self::new(-15.0, 0.5, 60)
    }

    pub fn edge(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.width
    }

    pub fn add(&mut self, v: f64) {
        if v < self.lo {
            self.underflow += 1;
            return;
        }
        let idx = ((v - self.lo) / self.width).floor() as usize;
        // Guard the floor against rounding at an edge.
        let idx = if idx > 0 && v < self.edge(idx) { idx - 1 } else { idx };
        match self.counts.get_mut(idx) {
            Some(c) => *c += 1,
            None => self.overflow += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.underflow + self.overflow
    }
}

/// Validation error statistics per state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub samples: usize,
    pub mae: [f64; 4],
    pub rmse: [f64; 4],
    pub histograms: Vec<Histogram>,
    /// `percentiles[i][p - 1]` is the `p`-th percentile of state `i`, p = 1..=99.
    pub percentiles: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverStats>,
}

/// Headline numbers kept with a persisted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub samples: usize,
    pub mae: [f64; 4],
    pub rmse: [f64; 4],
}

impl FitReport {
    /// Statistics of a 4×N residual matrix.
    pub fn from_residuals(residuals: &OMatrix<f64, U4, Dyn>) -> Result<Self> {
        let n = residuals.ncols();
        if n == 0 {
            return Err(Error::InsufficientData("no validation residuals".into()));
        }
        let mut mae = [0.0; 4];
        let mut rmse = [0.0; 4];
        let mut histograms = Vec::with_capacity(4);
        let mut percentiles = Vec::with_capacity(4);
        for i in 0..4 {
            let row: Vec<f64> = residuals.row(i).iter().copied().collect();
            mae[i] = row.iter().map(|r| r.abs()).sum::<f64>() / n as f64;
            rmse[i] = (row.iter().map(|r| r * r).sum::<f64>() / n as f64).sqrt();
            let mut h = if i % 2 == 0 {
                Histogram::for_flow()
            } else {
                Histogram::for_speed()
            };
            row.iter().for_each(|&r| h.add(r));
            histograms.push(h);
            let sorted = crate::stats::sorted(&row);
            percentiles.push(
                (1..=99)
                    .map(|p| quantile_sorted(&sorted, f64::from(p) / 100.0).expect("non-empty"))
                    .collect(),
            );
        }
        Ok(FitReport {
            samples: n,
            mae,
            rmse,
            histograms,
            percentiles,
            solver: None,
        })
    }

    pub fn percentile(&self, state: usize, pct: u8) -> Option<f64> {
        if !(1..=99).contains(&pct) {
            return None;
        }
        self.percentiles.get(state)?.get(usize::from(pct) - 1).copied()
    }

    pub fn summary(&self) -> FitSummary {
        FitSummary {
            samples: self.samples,
            mae: self.mae,
            rmse: self.rmse,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Doc<'a> {
            schema_version: u32,
            state_names: [&'a str; 4],
            #[serde(flatten)]
            report: &'a FitReport,
        }
        Ok(serde_json::to_string_pretty(&Doc {
            schema_version: crate::SCHEMA_VERSION,
            state_names: STATE_NAMES,
            report: self,
        })?)
    }
}

/// Residuals `y − A′x′` of the model on held-out columns.
pub fn residuals(model: &DynamicsModel, data: &RegressionDataset) -> OMatrix<f64, U4, Dyn> {
    &data.y - model.stacked() * &data.x_prime
}

/// One-step prediction errors on the validation columns.
pub fn evaluate(model: &DynamicsModel, validation: &RegressionDataset) -> Result<FitReport> {
    if validation.is_empty() {
        return Err(Error::InsufficientData("validation set is empty".into()));
    }
    let mut report = FitReport::from_residuals(&residuals(model, validation))?;
    report.solver = model.solver_stats().cloned();
    Ok(report)
}

pub const DEFAULT_LOW_PERCENTILE: u8 = 10;
pub const DEFAULT_HIGH_PERCENTILE: u8 = 90;

/// Uniform noise bounds from residual percentiles.
pub fn calibrate_noise(report: &FitReport, low_pct: u8, high_pct: u8, seed: u64) -> Result<NoiseModel> {
    if !(1..=99).contains(&low_pct) || !(1..=99).contains(&high_pct) || low_pct >= high_pct {
        return Err(Error::param(format!(
            "percentiles must satisfy 1 <= low < high <= 99, got ({low_pct}, {high_pct})"
        )));
    }
    let mut lo = [0.0; 4];
    let mut hi = [0.0; 4];
    for i in 0..4 {
        lo[i] = report
            .percentile(i, low_pct)
            .ok_or_else(|| Error::Calibration("report lacks percentiles".into()))?;
        hi[i] = report
            .percentile(i, high_pct)
            .ok_or_else(|| Error::Calibration("report lacks percentiles".into()))?;
    }
    NoiseModel::new(lo, hi, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix4, U8};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn prox_examples() {
        let row = Row8::from_column_slice(&[3.0, 4.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let out = row_group_prox(&row, 1.0);
        assert!((out[0] - 2.4).abs() < 1e-15 && (out[1] - 3.2).abs() < 1e-15);
        assert_eq!(row_group_prox(&Row8::zeros(), 5.0), Row8::zeros());
        let unit = Row8::from_fn(|j, _| if j == 0 { 1.0 } else { 0.0 });
        assert_eq!(row_group_prox(&unit, 2.0), Row8::zeros());
    }

    #[test]
    fn scaled_prox_matches_uniform_case_and_optimality() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let row = Row8::from_fn(|_, _| rng.gen_range(-3.0..3.0));
            let t: f64 = rng.gen_range(0.0..4.0);
            // Equal but non-unit scales: prox of t·‖z‖/d = uniform prox with t/d.
            let d = rng.gen_range(0.5..2.0);
            let z = scaled_row_group_prox(&row, &Row8::repeat(d), t);
            let expect = row_group_prox(&row, t / d);
            assert!((z - expect).amax() < 1e-12, "{z} vs {expect}");

            // General scales: check first-order optimality directly.
            let scale = Row8::from_fn(|_, _| rng.gen_range(0.2..5.0));
            let z = scaled_row_group_prox(&row, &scale, t);
            let w = z.component_div(&scale);
            if w.norm() > 0.0 {
                let grad = z - row + (t / w.norm()) * w.component_div(&scale);
                assert!(grad.amax() < 1e-9, "stationarity violated: {grad}");
            } else {
                assert!(row.component_mul(&scale).norm() <= t + 1e-12);
            }
        }
    }

    fn data_from(x: OMatrix<f64, U8, Dyn>, w: &SystemMatrix) -> RegressionDataset {
        let y = w * &x;
        RegressionDataset::new(x, y).unwrap()
    }

    #[test]
    fn identity_dynamics_recovered_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = OMatrix::<f64, U8, Dyn>::from_fn(300, |_, _| rng.gen_range(-1.0..1.0));
        let mut truth = SystemMatrix::zeros();
        truth.fixed_view_mut::<4, 4>(0, 0).copy_from(&Matrix4::identity());
        let data = data_from(x, &truth);
        let cfg = FitConfig {
            rho: 0.0,
            masks: StructureMasks::none(),
            ..Default::default()
        };
        let model = fit(&data, &cfg).unwrap();
        let err = (model.stacked() - truth).amax();
        assert!(err <= 1e-6, "max error {err:e} after {:?}", model.solver_stats());
    }

    #[test]
    fn masks_hold_exactly_on_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = OMatrix::<f64, U8, Dyn>::from_fn(400, |_, _| rng.gen_range(-1.0..1.0));
        // Truth violates the masks, so the constraints are active.
        let truth = SystemMatrix::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let mut data = data_from(x, &truth);
        data.y[(1, 0)] += 0.0;
        let mut cfg = FitConfig::default();
        cfg.masks.sign[1][4] = crate::types::SignConstraint::NonNegative;
        cfg.masks.sign[0][7] = crate::types::SignConstraint::NonPositive;
        let model = fit(&data, &cfg).unwrap();
        let w = model.stacked();
        for r in 0..4 {
            for c in 0..8 {
                if cfg.masks.eq[r][c] {
                    assert_eq!(w[(r, c)], 0.0);
                }
                assert!(cfg.masks.sign[r][c].is_satisfied(w[(r, c)], 1e-9));
            }
        }
        let stats = model.solver_stats().unwrap();
        assert!(stats.final_objective <= stats.initial_objective);
    }

    #[test]
    fn huge_penalty_zeroes_every_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = OMatrix::<f64, U8, Dyn>::from_fn(200, |_, _| rng.gen_range(-1.0..1.0));
        let truth = SystemMatrix::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let data = data_from(x, &truth);
        let cfg = FitConfig {
            rho: 1e6,
            ..Default::default()
        };
        let model = fit(&data, &cfg).unwrap();
        assert_eq!(model.stacked(), SystemMatrix::zeros());
    }

    #[test]
    fn rank_deficient_data_uses_ridge() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut x = OMatrix::<f64, U8, Dyn>::from_fn(200, |_, _| rng.gen_range(-1.0..1.0));
        let copy = x.row(0).into_owned();
        x.set_row(3, &copy);
        let truth = SystemMatrix::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let data = data_from(x, &truth);
        let cfg = FitConfig {
            rho: 0.0,
            masks: StructureMasks::none(),
            ..Default::default()
        };
        let model = fit(&data, &cfg).unwrap();
        assert!(model.solver_stats().unwrap().ridge_fallback);
        // Predictions still reproduce the data.
        assert!(residuals(&model, &data).amax() < 1e-4);
    }

    #[test]
    fn too_few_columns_and_bad_config() {
        let x = OMatrix::<f64, U8, Dyn>::from_element(5, 1.0);
        let data = data_from(x, &SystemMatrix::zeros());
        assert!(matches!(fit(&data, &FitConfig::default()), Err(Error::InsufficientData(_))));
        let cfg = FitConfig {
            rho: -1.0,
            ..Default::default()
        };
        assert!(matches!(fit(&data, &cfg), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn non_convergence_reports_residuals() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = OMatrix::<f64, U8, Dyn>::from_fn(200, |_, _| rng.gen_range(-1.0..1.0));
        let truth = SystemMatrix::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let data = data_from(x, &truth);
        let cfg = FitConfig {
            max_iters: 1,
            ..Default::default()
        };
        match fit(&data, &cfg) {
            Err(Error::NotConverged { iterations, primal, dual }) => {
                assert_eq!(iterations, 1);
                assert!(primal.is_finite() && dual.is_finite());
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    fn residual_matrix(rows: [&[f64]; 4]) -> OMatrix<f64, U4, Dyn> {
        let n = rows[0].len();
        OMatrix::<f64, U4, Dyn>::from_fn(n, |i, j| rows[i][j])
    }

    #[test]
    fn report_statistics_examples() {
        let r = residual_matrix([&[0.0; 3], &[2.0; 3], &[-1.0, 1.0, 3.0], &[0.0; 3]]);
        let rep = FitReport::from_residuals(&r).unwrap();
        assert_eq!(rep.mae[0], 0.0);
        assert_eq!(rep.rmse[0], 0.0);
        assert_eq!(rep.mae[1], 2.0);
        assert_eq!(rep.rmse[1], 2.0);
        assert!((rep.mae[2] - 5.0 / 3.0).abs() < 1e-15);
        assert!((rep.rmse[2] - (11.0f64 / 3.0).sqrt()).abs() < 1e-15);
        for i in 0..4 {
            assert!(rep.rmse[i] >= rep.mae[i]);
            assert_eq!(rep.histograms[i].total(), 3);
        }
        // -1, 1, 3 land in the flow bins starting at -5, 0 and 0.
        assert_eq!(rep.histograms[2].counts[19], 1);
        assert_eq!(rep.histograms[2].counts[20], 2);
    }

    #[test]
    fn histogram_edges_and_overflow() {
        let mut h = Histogram::for_speed();
        h.add(-15.0);
        h.add(14.99);
        h.add(15.0);
        h.add(-15.01);
        assert_eq!(h.counts[0], 1);
        assert_eq!(h.counts[59], 1);
        assert_eq!(h.overflow, 1);
        assert_eq!(h.underflow, 1);
    }

    #[test]
    fn evaluate_zero_residual_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = OMatrix::<f64, U8, Dyn>::from_fn(50, |_, _| rng.gen_range(0.0..1.0));
        let a = Matrix4::identity() * 0.5;
        let model = DynamicsModel::unconstrained(a, Matrix4::zeros()).unwrap();
        let data = data_from(x, &model.stacked());
        let rep = evaluate(&model, &data).unwrap();
        assert_eq!(rep.mae, [0.0; 4]);
        assert_eq!(rep.rmse, [0.0; 4]);
        let empty = RegressionDataset::new(
            OMatrix::<f64, U8, Dyn>::zeros(0),
            OMatrix::<f64, U4, Dyn>::zeros(0),
        )
        .unwrap();
        assert!(evaluate(&model, &empty).is_err());
    }

    #[test]
    fn calibration_from_uniform_residuals() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 20_000;
        let sample: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r = OMatrix::<f64, U4, Dyn>::from_fn(n, |_, j| sample[j]);
        let rep = FitReport::from_residuals(&r).unwrap();
        // Oracle: sort-based percentile of the same sample.
        let mut s = sample.clone();
        s.sort_by(f64::total_cmp);
        let oracle = |p: f64| {
            let h = (n - 1) as f64 * p;
            let i = h as usize;
            s[i] + (h - i as f64) * (s[i + 1] - s[i])
        };
        let noise = calibrate_noise(&rep, 10, 90, 0).unwrap();
        for i in 0..4 {
            assert_eq!(noise.lo()[i], oracle(0.1));
            assert_eq!(noise.hi()[i], oracle(0.9));
            assert!((noise.lo()[i] + 0.8).abs() < 0.05);
            assert!((noise.hi()[i] - 0.8).abs() < 0.05);
        }
    }

    #[test]
    fn calibration_degenerate_and_invalid() {
        let zero = OMatrix::<f64, U4, Dyn>::zeros(10);
        let rep = FitReport::from_residuals(&zero).unwrap();
        let noise = calibrate_noise(&rep, 10, 90, 1).unwrap();
        assert_eq!(noise.lo(), [0.0; 4]);
        assert_eq!(noise.hi(), [0.0; 4]);

        let shifted = OMatrix::<f64, U4, Dyn>::from_fn(10, |_, j| 1.0 + j as f64);
        let rep = FitReport::from_residuals(&shifted).unwrap();
        assert!(matches!(calibrate_noise(&rep, 10, 90, 1), Err(Error::Calibration(_))));
        assert!(calibrate_noise(&rep, 90, 10, 1).is_err());
        assert!(calibrate_noise(&rep, 0, 90, 1).is_err());
    }
}
