//! Energy-minimal optimal control over a fixed horizon.
//!
//! The decision variable is the stacked input sequence; states are
//! eliminated by forward simulation (single shooting). The objective is
//! the total supplied energy Σ ℓ_k, the terminal condition x_N = x_target
//! is enforced by an augmented Lagrangian, and the box constraint on the
//! inputs is handled by projection inside the inner solver. Gradients
//! come from a discrete adjoint sweep.

mod kernel;
mod oracle;
mod solve;
mod steady;
mod steer;
mod transcribe;

pub use oracle::brute_force_oracle;
pub use solve::solve;
pub use steady::{steady_state_at, steady_state_solve, SteadySolveReport, SteadyState};
pub use steer::{build_turnpike_control, steer_to, warm_start_control};
pub use transcribe::Transcription;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stepper::{step, SchemeKind};
use crate::system::PHSystem;

/// Tunables for the augmented-Lagrangian solver. The defaults match the
/// tolerances the acceptance checks expect.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Terminal defect required of a feasible solution (2-norm).
    pub tol_terminal: f64,
    /// Projected-gradient norm required for stationarity.
    pub tol_kkt: f64,
    /// Outer (multiplier) iterations.
    pub max_outer: usize,
    /// Inner quasi-Newton iterations per outer pass.
    pub max_inner: usize,
    pub penalty_init: f64,
    pub penalty_growth: f64,
    pub penalty_max: f64,
    /// Defect above which outer stagnation counts toward infeasibility.
    pub stall_defect: f64,
    /// Consecutive stagnant outer passes before giving up.
    pub stall_outers: usize,
    /// Number of multi-start seeds (zero input, warm start when available,
    /// the rest random).
    pub multistarts: usize,
    pub seed: u64,
    /// Memory of the limited-memory quasi-Newton inner solver.
    pub lbfgs_memory: usize,
    /// Stacked warm-start input sequence, if the caller has one.
    pub warm_start: Option<Vec<f64>>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol_terminal: 1e-6,
            tol_kkt: 1e-6,
            max_outer: 12,
            max_inner: 400,
            penalty_init: 10.0,
            penalty_growth: 10.0,
            penalty_max: 1e10,
            stall_defect: 1e-4,
            stall_outers: 3,
            multistarts: 8,
            seed: 0,
            lbfgs_memory: 10,
            warm_start: None,
        }
    }
}

/// Fixed-horizon boundary transfer problem with box input bounds.
#[derive(Debug, Clone)]
pub struct OCProblem {
    pub system: PHSystem,
    pub scheme: SchemeKind,
    pub n_steps: usize,
    pub h: f64,
    pub x0: DVector<f64>,
    pub x_target: DVector<f64>,
    /// Per-channel lower input bounds; entries may be -inf.
    pub u_min: DVector<f64>,
    /// Per-channel upper input bounds; entries may be +inf.
    pub u_max: DVector<f64>,
    pub options: SolverOptions,
}

impl OCProblem {
    /// Boundary transfer with the default input box [-50, 50] per channel.
    pub fn boundary_transfer(
        system: PHSystem,
        scheme: SchemeKind,
        n_steps: usize,
        h: f64,
        x0: DVector<f64>,
        x_target: DVector<f64>,
    ) -> Self {
        let m = system.m();
        OCProblem {
            system,
            scheme,
            n_steps,
            h,
            x0,
            x_target,
            u_min: DVector::from_element(m, -50.0),
            u_max: DVector::from_element(m, 50.0),
            options: SolverOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.system.check_shapes()?;
        let n = self.system.n();
        let m = self.system.m();
        if self.n_steps < 1 {
            return Err(Error::InvalidProblem {
                reason: "the horizon must contain at least one step".into(),
            });
        }
        if !(self.h > 0.0) {
            return Err(Error::InvalidProblem {
                reason: format!("step size must be positive, got {}", self.h),
            });
        }
        for (what, v, want) in [
            ("x0", &self.x0, n),
            ("x_target", &self.x_target, n),
            ("u_min", &self.u_min, m),
            ("u_max", &self.u_max, m),
        ] {
            if v.len() != want {
                return Err(Error::DimensionMismatch {
                    context: what.into(),
                    expected: want,
                    got: v.len(),
                });
            }
        }
        for j in 0..m {
            if self.u_min[j] > self.u_max[j] {
                return Err(Error::InvalidProblem {
                    reason: format!(
                        "empty input box on channel {j}: [{}, {}]",
                        self.u_min[j], self.u_max[j]
                    ),
                });
            }
        }
        if self.scheme == SchemeKind::Ddr && m != 1 {
            return Err(Error::DimensionMismatch {
                context: "two-stage rule input channels".into(),
                expected: 1,
                got: m,
            });
        }
        Ok(())
    }
}

/// Outcome labels for a solve: met both tolerances, ran out of iterations
/// while still improving, or stalled with a large terminal defect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Converged,
    MaxIter,
    Infeasible,
}

/// A solved (or best-effort) control together with its rolled-out
/// trajectory and optimality measures.
#[derive(Debug, Clone)]
pub struct OCPSolution {
    pub trajectory: crate::stepper::Trajectory,
    /// Total supplied energy of the returned trajectory.
    pub cost: f64,
    /// ‖x_N − x_target‖₂ of the returned trajectory.
    pub terminal_defect: f64,
    /// Projected-gradient stationarity measure; absent for solutions found
    /// by grid enumeration, which carries no multiplier estimate.
    pub kkt_residual: Option<f64>,
    pub status: SolveStatus,
}

/// Per-step cost ℓ(x, u): the energy supplied through the port over one
/// step of the chosen scheme.
pub fn stage_cost(
    sys: &PHSystem,
    x: &DVector<f64>,
    u: &DVector<f64>,
    scheme: SchemeKind,
    h: f64,
) -> Result<f64> {
    Ok(step(sys, x, u, scheme, h)?.supplied)
}
