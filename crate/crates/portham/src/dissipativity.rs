//! Dissipativity diagnostics: distance to the dissipation-free manifold,
//! lower bounds on the dissipation rate, trajectory-wise dissipation
//! inequalities, and turnpike scans over growing horizons.
//!
//! The manifold in question is the set where the per-step dissipation
//! vanishes, 𝒮 = {x : g(x) = 0} with g(x) = R^{1/2}(x) Q J₋⁻¹(x) x. For
//! constant structure matrices this is a linear subspace and distances
//! are exact; otherwise the zero set is curved and distances come from a
//! Gauss-Newton projection. A calibrated constant ĉ with ‖g(x)‖ ≥ ĉ·dist(x)
//! turns the squared residual into the bound α(s) = h·ĉ²·s² used by the
//! dissipation inequality ℓ(x,u) ≥ α(dist(x)) + H(x⁺) − H(x).

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ocp::{solve, OCProblem, SolveStatus};
use crate::stepper::{simulate, SchemeKind, Trajectory};
use crate::system::{dissipation_root, manifold_residual, structure_pair, PHSystem};

/// How the dissipation-free set is represented.
#[derive(Debug, Clone)]
pub enum ManifoldKind {
    /// Null space of the given rows; distance is an exact projection.
    LinearKernel(DMatrix<f64>),
    /// Zero set of the residual g; distance via Gauss-Newton projection.
    ResidualZeroSet,
}

/// A dissipation-free manifold bound to a system and step size, plus an
/// optional calibrated rate constant.
#[derive(Debug, Clone)]
pub struct ManifoldSpec {
    pub kind: ManifoldKind,
    pub system: PHSystem,
    pub h: f64,
    /// Lower-bound constant ĉ in ‖g(x)‖ ≥ ĉ·dist(x), if calibrated.
    pub c_hat: Option<f64>,
}

/// Distance of one state to the manifold.
#[derive(Debug, Clone, Copy)]
pub struct DistanceResult {
    pub distance: f64,
    /// ‖g(x)‖ at the queried state.
    pub residual_norm: f64,
    /// True when the projection failed and `distance` is the fallback
    /// ‖g(x)‖/ĉ rather than a geometric distance.
    pub surrogate: bool,
}

impl ManifoldSpec {
    pub fn linear(system: PHSystem, h: f64, rows: DMatrix<f64>) -> Self {
        ManifoldSpec {
            kind: ManifoldKind::LinearKernel(rows),
            system,
            h,
            c_hat: None,
        }
    }

    pub fn residual_zero_set(system: PHSystem, h: f64) -> Self {
        ManifoldSpec {
            kind: ManifoldKind::ResidualZeroSet,
            system,
            h,
            c_hat: None,
        }
    }

    pub fn with_constant(mut self, c_hat: f64) -> Self {
        self.c_hat = Some(c_hat);
        self
    }

    /// Dissipation-rate lower bound α(s) = h·ĉ²·s².
    pub fn alpha(&self, s: f64) -> Result<f64> {
        let c = self.c_hat.ok_or(Error::InvalidProblem {
            reason: "manifold constant is not calibrated; estimate it first".into(),
        })?;
        Ok(self.h * c * c * s * s)
    }
}

/// Rows spanning the orthogonal complement of ker M(h) for a constant
/// system, where M(h) = R^{1/2} Q J₋⁻¹. The null space of the returned
/// rows equals the dissipation-free set at this step size.
pub fn linear_kernel_rows_from(sys: &PHSystem, h: f64) -> Result<DMatrix<f64>> {
    if !sys.is_constant_structure() {
        return Err(Error::InvalidProblem {
            reason: "kernel rows require constant structure matrices".into(),
        });
    }
    let n = sys.n();
    let origin = DVector::zeros(n);
    let pair = structure_pair(sys, &origin, h)?;
    let m = dissipation_root(sys, &origin)?
        * sys.q()?
        * pair.solve_matrix(&DMatrix::identity(n, n));
    let svd = m.clone().svd(false, true);
    let smax = svd.singular_values.max();
    let v_t = svd.v_t.as_ref().expect("requested right singular vectors");
    let rank = svd
        .singular_values
        .iter()
        .filter(|s| **s > 1e-12 * smax.max(1.0))
        .count();
    Ok(v_t.rows(0, rank).into_owned())
}

fn residual_jacobian(sys: &PHSystem, x: &DVector<f64>, h: f64) -> Result<DMatrix<f64>> {
    let g0 = manifold_residual(sys, x, h)?;
    let n = x.len();
    let mut jac = DMatrix::zeros(g0.len(), n);
    let mut xp = x.clone();
    for i in 0..n {
        let eps = 1e-6 * (1.0 + x[i].abs());
        xp[i] = x[i] + eps;
        let gp = manifold_residual(sys, &xp, h)?;
        xp[i] = x[i] - eps;
        let gm = manifold_residual(sys, &xp, h)?;
        xp[i] = x[i];
        jac.set_column(i, &((gp - gm) / (2.0 * eps)));
    }
    Ok(jac)
}

/// Distance from `x` to the manifold. Linear kernels give the exact
/// orthogonal distance; residual zero sets are projected by Gauss-Newton
/// and fall back to the residual surrogate when the projection diverges.
pub fn distance_to_manifold(spec: &ManifoldSpec, x: &DVector<f64>) -> Result<DistanceResult> {
    let residual_norm = manifold_residual(&spec.system, x, spec.h)?.norm();
    match &spec.kind {
        ManifoldKind::LinearKernel(rows) => {
            if rows.ncols() != x.len() {
                return Err(Error::DimensionMismatch {
                    context: "kernel rows versus state".into(),
                    expected: x.len(),
                    got: rows.ncols(),
                });
            }
            if rows.nrows() == 0 {
                return Ok(DistanceResult {
                    distance: 0.0,
                    residual_norm,
                    surrogate: false,
                });
            }
            let svd = rows.clone().svd(false, true);
            let smax = svd.singular_values.max();
            let v_t = svd.v_t.as_ref().expect("requested right singular vectors");
            let rank = svd
                .singular_values
                .iter()
                .filter(|s| **s > 1e-12 * smax.max(1.0))
                .count();
            let distance = (v_t.rows(0, rank) * x).norm();
            Ok(DistanceResult {
                distance,
                residual_norm,
                surrogate: false,
            })
        }
        ManifoldKind::ResidualZeroSet => {
            let mut xi = x.clone();
            let mut converged = false;
            for _ in 0..30 {
                let g = manifold_residual(&spec.system, &xi, spec.h)?;
                if g.norm() <= 1e-10 {
                    converged = true;
                    break;
                }
                let jac = residual_jacobian(&spec.system, &xi, spec.h)?;
                let svd = jac.svd(true, true);
                let Ok(step) = svd.solve(&g, 1e-12) else { break };
                if !step.iter().all(|v| v.is_finite()) {
                    break;
                }
                xi -= step;
            }
            if converged {
                Ok(DistanceResult {
                    distance: (x - xi).norm(),
                    residual_norm,
                    surrogate: false,
                })
            } else {
                let c = spec.c_hat.unwrap_or(1.0);
                Ok(DistanceResult {
                    distance: residual_norm / c,
                    residual_norm,
                    surrogate: true,
                })
            }
        }
    }
}

/// Calibrate ĉ = min ‖g(x)‖/dist(x) over box samples and any supplied
/// trajectory states. States closer to the manifold than 1e-8 are
/// skipped; fewer than ten usable samples is reported as degenerate.
pub fn estimate_manifold_constant(
    spec: &ManifoldSpec,
    n_samples: usize,
    half_width: f64,
    extra_states: &[DVector<f64>],
    seed: u64,
) -> Result<f64> {
    let n = spec.system.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ratios = Vec::new();
    let mut consider = |x: &DVector<f64>| -> Result<()> {
        let d = distance_to_manifold(spec, x)?;
        if d.distance >= 1e-8 && !d.surrogate {
            ratios.push(d.residual_norm / d.distance);
        }
        Ok(())
    };
    for _ in 0..n_samples {
        let x = DVector::from_fn(n, |_, _| rng.random_range(-half_width..half_width));
        consider(&x)?;
    }
    for x in extra_states {
        consider(x)?;
    }
    if ratios.len() < 10 {
        return Err(Error::DegenerateSampling {
            valid: ratios.len(),
        });
    }
    Ok(ratios.iter().copied().fold(f64::INFINITY, f64::min))
}

/// Per-step audit of ℓ_k ≥ α(dist(x_k)) + H(x_{k+1}) − H(x_k) along a
/// trajectory.
#[derive(Debug, Clone)]
pub struct DissipationReport {
    /// ℓ_k − α(dist_k) − (H_{k+1} − H_k) for each step.
    pub slacks: Vec<f64>,
    pub distances: Vec<f64>,
    pub min_slack: f64,
    /// True when every slack is ≥ −1e-9.
    pub satisfied: bool,
}

pub fn dissipation_check(spec: &ManifoldSpec, traj: &Trajectory) -> Result<DissipationReport> {
    let steps = traj.len();
    let mut slacks = Vec::with_capacity(steps);
    let mut distances = Vec::with_capacity(steps);
    for k in 0..steps {
        let d = distance_to_manifold(spec, &traj.states[k])?;
        let alpha = spec.alpha(d.distance)?;
        let delta_h = traj.energies[k + 1] - traj.energies[k];
        slacks.push(traj.supplied[k] - alpha - delta_h);
        distances.push(d.distance);
    }
    let min_slack = slacks.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(DissipationReport {
        satisfied: min_slack >= -1e-9,
        slacks,
        distances,
        min_slack,
    })
}

/// A one-step control that breaks the dissipation inequality for the
/// midpoint discretization.
#[derive(Debug, Clone)]
pub struct CounterexampleReport {
    pub trajectory: Trajectory,
    pub spec: ManifoldSpec,
    pub cost: f64,
    pub energy_change: f64,
    pub distance: f64,
    pub alpha_value: f64,
    pub slack: f64,
    pub violated: bool,
}

/// Construct the midpoint counterexample: start on a controllable
/// direction that carries dissipation and cancel the implicit midpoint
/// average with one input, so the step supplies zero energy, dissipates
/// nothing, and yet starts at positive distance from the manifold. Any
/// positive rate bound α is then violated at that step.
pub fn midpoint_counterexample(sys: &PHSystem, h: f64) -> Result<CounterexampleReport> {
    sys.check_shapes()?;
    if !sys.is_constant_structure() || !sys.hamiltonian.is_quadratic() {
        return Err(Error::NotApplicable {
            reason: "the construction needs constant structure and quadratic storage".into(),
        });
    }
    let rows = linear_kernel_rows_from(sys, h)?;
    if rows.nrows() == 0 {
        return Err(Error::NotApplicable {
            reason: "the system never dissipates, the manifold is the whole space".into(),
        });
    }
    let m = sys.m();
    let mut chosen = None;
    for j in 0..m {
        let bj = sys.b.column(j).into_owned();
        if bj.norm() < 1e-12 {
            continue;
        }
        if (&rows * &bj).norm() > 1e-8 * bj.norm() {
            chosen = Some((j, bj));
            break;
        }
    }
    let Some((j, x0)) = chosen else {
        return Err(Error::NotApplicable {
            reason: "every input direction stays inside the dissipation-free set".into(),
        });
    };
    let mut u = DVector::zeros(m);
    u[j] = -2.0 / h;
    let spec = ManifoldSpec::linear(sys.clone(), h, rows).with_constant(1.0);
    let traj = simulate(sys, &x0, &[u], SchemeKind::Midpoint, h)?;
    let cost = traj.total_cost();
    let energy_change = traj.energies[1] - traj.energies[0];
    let d = distance_to_manifold(&spec, &x0)?;
    let alpha_value = spec.alpha(d.distance)?;
    let slack = cost - alpha_value - energy_change;
    Ok(CounterexampleReport {
        trajectory: traj,
        spec,
        cost,
        energy_change,
        distance: d.distance,
        alpha_value,
        slack,
        violated: slack < -1e-9,
    })
}

/// Σ dist(x_k)² over k = 0..N−1; the terminal state is pinned by the
/// constraint and excluded.
pub fn sum_turnpike_metric(spec: &ManifoldSpec, traj: &Trajectory) -> Result<f64> {
    let mut total = 0.0;
    for k in 0..traj.len() {
        let d = distance_to_manifold(spec, &traj.states[k])?;
        total += d.distance * d.distance;
    }
    Ok(total)
}

/// One horizon of a turnpike scan.
#[derive(Debug, Clone)]
pub struct ScanRow {
    pub horizon: usize,
    pub cost: f64,
    pub terminal_defect: f64,
    pub status: SolveStatus,
    /// Σ dist² over the non-terminal states.
    pub sum_sq_distance: f64,
    /// max dist(x_k) for k in the middle third of the horizon.
    pub mid_third_max_distance: f64,
    pub max_state_norm: f64,
}

#[derive(Debug, Clone)]
pub struct ScanReport {
    pub rows: Vec<ScanRow>,
    pub failures: Vec<String>,
}

/// Solve the boundary-transfer problem over each horizon and measure how
/// the optimal trajectories concentrate near the manifold. Horizons that
/// fail to solve are recorded and skipped.
pub fn turnpike_scan(
    template: &OCProblem,
    horizons: &[usize],
    spec: &ManifoldSpec,
) -> Result<ScanReport> {
    let outcomes: Vec<(usize, std::result::Result<ScanRow, String>)> = horizons
        .par_iter()
        .map(|&n_steps| {
            let mut problem = template.clone();
            problem.n_steps = n_steps;
            let row = (|| -> Result<ScanRow> {
                let sol = solve(&problem)?;
                let traj = &sol.trajectory;
                let sum_sq = sum_turnpike_metric(spec, traj)?;
                let lo = n_steps / 3;
                let hi = (2 * n_steps) / 3;
                let mut mid_max: f64 = 0.0;
                for k in lo..=hi {
                    let d = distance_to_manifold(spec, &traj.states[k])?;
                    mid_max = mid_max.max(d.distance);
                }
                let max_norm = traj
                    .states
                    .iter()
                    .map(|x| x.norm())
                    .fold(0.0f64, f64::max);
                Ok(ScanRow {
                    horizon: n_steps,
                    cost: sol.cost,
                    terminal_defect: sol.terminal_defect,
                    status: sol.status,
                    sum_sq_distance: sum_sq,
                    mid_third_max_distance: mid_max,
                    max_state_norm: max_norm,
                })
            })();
            (n_steps, row.map_err(|e| format!("horizon {n_steps}: {e}")))
        })
        .collect();
    let mut report = ScanReport {
        rows: Vec::new(),
        failures: Vec::new(),
    };
    for (_, outcome) in outcomes {
        match outcome {
            Ok(row) => report.rows.push(row),
            Err(msg) => report.failures.push(msg),
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oscillator_1d() -> PHSystem {
        PHSystem::linear(
            "osc",
            DMatrix::zeros(1, 1),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
        )
        .unwrap()
    }

    fn damped_2d() -> PHSystem {
        PHSystem::linear(
            "damped",
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]),
            DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        )
        .unwrap()
    }

    #[test]
    fn scalar_kernel_is_the_origin() {
        let sys = oscillator_1d();
        let rows = linear_kernel_rows_from(&sys, 1.0).unwrap();
        assert_eq!(rows.nrows(), 1);
        let spec = ManifoldSpec::linear(sys, 1.0, rows);
        let d = distance_to_manifold(&spec, &DVector::from_row_slice(&[1.0])).unwrap();
        assert!((d.distance - 1.0).abs() < 1e-12);
        assert!(!d.surrogate);
    }

    #[test]
    fn projection_agrees_with_the_exact_kernel_distance() {
        let sys = damped_2d();
        let h = 0.7;
        let rows = linear_kernel_rows_from(&sys, h).unwrap();
        let linear = ManifoldSpec::linear(sys.clone(), h, rows);
        let curved = ManifoldSpec::residual_zero_set(sys, h);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..25 {
            let x = DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0));
            let dl = distance_to_manifold(&linear, &x).unwrap();
            let dc = distance_to_manifold(&curved, &x).unwrap();
            assert!(!dc.surrogate);
            assert!(
                (dl.distance - dc.distance).abs() < 1e-8,
                "exact {} projected {}",
                dl.distance,
                dc.distance
            );
        }
    }

    #[test]
    fn conservative_systems_have_an_empty_kernel_row_set() {
        let sys = PHSystem::linear(
            "rot",
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]),
            DMatrix::zeros(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        )
        .unwrap();
        let rows = linear_kernel_rows_from(&sys, 0.5).unwrap();
        assert_eq!(rows.nrows(), 0);
        let spec = ManifoldSpec::linear(sys, 0.5, rows);
        let d = distance_to_manifold(&spec, &DVector::from_row_slice(&[3.0, -4.0])).unwrap();
        assert_eq!(d.distance, 0.0);
    }

    #[test]
    fn the_estimated_constant_matches_the_scalar_residual_slope() {
        // For the scalar system g(x) = x/(1 + h/2), so the ratio is
        // constant and the estimate is exact.
        let sys = oscillator_1d();
        let h = 1.0;
        let rows = linear_kernel_rows_from(&sys, h).unwrap();
        let spec = ManifoldSpec::linear(sys, h, rows);
        let c = estimate_manifold_constant(&spec, 50, 2.0, &[], 0).unwrap();
        assert!((c - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_sampling_is_reported() {
        let sys = PHSystem::linear(
            "rot",
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]),
            DMatrix::zeros(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        )
        .unwrap();
        let rows = linear_kernel_rows_from(&sys, 1.0).unwrap();
        let spec = ManifoldSpec::linear(sys, 1.0, rows);
        let err = estimate_manifold_constant(&spec, 50, 2.0, &[], 0);
        assert!(matches!(err, Err(Error::DegenerateSampling { .. })));
    }

    #[test]
    fn the_cancellation_step_breaks_the_rate_bound() {
        let report = midpoint_counterexample(&oscillator_1d(), 1.0).unwrap();
        assert!(report.cost.abs() < 1e-14);
        assert!(report.energy_change.abs() < 1e-14);
        assert!((report.distance - 1.0).abs() < 1e-12);
        assert!((report.slack + report.alpha_value).abs() < 1e-12);
        assert!(report.violated);
    }

    #[test]
    fn conservative_systems_admit_no_counterexample() {
        let sys = PHSystem::linear(
            "rot",
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]),
            DMatrix::zeros(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        )
        .unwrap();
        let err = midpoint_counterexample(&sys, 1.0);
        assert!(matches!(err, Err(Error::NotApplicable { .. })));
    }

    #[test]
    fn dissipation_holds_along_uncontrolled_decay() {
        // With zero input the slack is the dissipated energy minus the
        // rate bound; ĉ chosen at the exact slope keeps it nonnegative.
        let sys = oscillator_1d();
        let h = 1.0;
        let rows = linear_kernel_rows_from(&sys, h).unwrap();
        let spec = ManifoldSpec::linear(sys.clone(), h, rows).with_constant(2.0 / 3.0);
        let inputs = vec![DVector::zeros(1); 20];
        let traj = simulate(&sys, &DVector::from_row_slice(&[2.0]), &inputs, SchemeKind::Ddr, h)
            .unwrap();
        let report = dissipation_check(&spec, &traj).unwrap();
        assert!(report.satisfied, "min slack {}", report.min_slack);
        // DDR dissipates exactly h‖g‖² = α(dist) per step here, so the
        // slack is zero to rounding.
        assert!(report.min_slack.abs() < 1e-12);
    }
}
