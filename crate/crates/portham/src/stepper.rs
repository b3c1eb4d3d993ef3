//! Discrete evolution rules and trajectory assembly.
//!
//! Two one-step maps are provided. The midpoint rule freezes J and R at
//! the current state and solves J₋ x⁺ = J₊ x + hBu; its port output is
//! y = (h/2) BᵀQ(x + x⁺) and the supplied energy is uᵀy. The two-stage
//! rule first takes the autonomous discrete-gradient substep x_aut and
//! then adds the input burst x⁺ = x_aut + hBu; its output is
//! Y = ½ BᵀQ(x_aut + x⁺) and the supplied energy is h·uᵀY. Both satisfy
//! an exact per-step energy balance
//!
//!   H(x⁺) − H(x) = supplied − dissipated
//!
//! in exact arithmetic, which the tests hold to 1e-10 in floating point.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::system::{dissipation_root, structure_pair, PHSystem};

/// Which one-step map advances the state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeKind {
    /// Implicit midpoint with J, R frozen at the step's starting state.
    Midpoint,
    /// Discrete-gradient autonomous substep followed by the input burst.
    Ddr,
}

impl SchemeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SchemeKind::Midpoint => "midpoint",
            SchemeKind::Ddr => "ddr",
        }
    }
}

impl std::str::FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "midpoint" => Ok(SchemeKind::Midpoint),
            "ddr" => Ok(SchemeKind::Ddr),
            other => Err(Error::InvalidProblem {
                reason: format!("unknown scheme `{other}` (expected midpoint or ddr)"),
            }),
        }
    }
}

/// One advanced step with its energy bookkeeping.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub x_next: DVector<f64>,
    /// Autonomous intermediate state; present only for the two-stage rule.
    pub x_aut: Option<DVector<f64>>,
    /// Collocated output: midpoint y, or the discrete-gradient output Y.
    pub output: DVector<f64>,
    /// H(x⁺) − H(x).
    pub stored_delta: f64,
    /// Energy supplied through the port over the step.
    pub supplied: f64,
    /// Energy dissipated over the step (nonnegative).
    pub dissipated: f64,
}

/// |stored_delta − supplied + dissipated| for a completed step.
pub fn energy_balance_residual(step: &StepResult) -> f64 {
    (step.stored_delta - step.supplied + step.dissipated).abs()
}

fn check_input(sys: &PHSystem, u: &DVector<f64>) -> Result<()> {
    if u.len() != sys.m() {
        return Err(Error::DimensionMismatch {
            context: "input vector".into(),
            expected: sys.m(),
            got: u.len(),
        });
    }
    Ok(())
}

/// Advance one midpoint step. Requires a quadratic Hamiltonian; supports
/// any number of input channels.
pub fn midpoint_step(
    sys: &PHSystem,
    x: &DVector<f64>,
    u: &DVector<f64>,
    h: f64,
) -> Result<StepResult> {
    check_input(sys, u)?;
    let q = sys.q().map_err(|_| Error::NonQuadraticHamiltonian {
        context: "midpoint step".into(),
    })?;
    let pair = structure_pair(sys, x, h)?;
    let bu = &sys.b * u;
    // w = x⁺ + x solves J₋ w = 2x + hBu, because J₋ + J₊ = 2I.
    let w = pair.solve(&(x * 2.0 + &bu * h));
    let x_next = &w - x;
    let qw = q * &w;
    let output = (sys.b.transpose() * &qw) * (h / 2.0);
    let supplied = u.dot(&output);
    let root = dissipation_root(sys, x)?;
    let dissipated = (&root * &qw).norm_squared() * (h / 4.0);
    let stored_delta = sys.energy(&x_next)? - sys.energy(x)?;
    Ok(StepResult {
        x_next,
        x_aut: None,
        output,
        stored_delta,
        supplied,
        dissipated,
    })
}

/// Autonomous discrete-gradient substep in closed form, available when the
/// Hamiltonian is quadratic: x_aut = J₋(x)⁻¹ J₊(x) x.
pub fn ddr_autonomous_explicit(sys: &PHSystem, x: &DVector<f64>, h: f64) -> Result<DVector<f64>> {
    if !sys.hamiltonian.is_quadratic() {
        return Err(Error::NonQuadraticHamiltonian {
            context: "explicit autonomous substep".into(),
        });
    }
    let pair = structure_pair(sys, x, h)?;
    Ok(pair.solve(&(&pair.jplus * x)))
}

/// Autonomous discrete-gradient substep by Newton iteration on
/// F(z) = z − x − h (J(x)−R(x)) ∇̄H(x, z). Works for any Hamiltonian;
/// the quadratic case converges in one step and matches the closed form.
pub fn ddr_autonomous_implicit(sys: &PHSystem, x: &DVector<f64>, h: f64) -> Result<DVector<f64>> {
    let n = sys.n();
    if x.len() != n {
        return Err(Error::DimensionMismatch {
            context: "autonomous substep state".into(),
            expected: n,
            got: x.len(),
        });
    }
    let jr = sys.j_at(x)? - sys.r_at(x)?;
    let mut z = if sys.hamiltonian.is_quadratic() {
        ddr_autonomous_explicit(sys, x, h)?
    } else {
        x.clone()
    };
    let residual_of = |z: &DVector<f64>| -> Result<DVector<f64>> {
        let dg = sys.hamiltonian.discrete_gradient(x, z)?;
        Ok(z - x - &jr * dg * h)
    };
    let mut f = residual_of(&z)?;
    let mut norm = f.norm();
    for iteration in 0..50 {
        if norm <= 1e-10 {
            return Ok(z);
        }
        // Jacobian of F in z by finite differences of the residual.
        let mut jac = nalgebra::DMatrix::zeros(n, n);
        let mut zp = z.clone();
        for i in 0..n {
            let eps = 1e-7 * (1.0 + z[i].abs());
            zp[i] = z[i] + eps;
            let fp = residual_of(&zp)?;
            zp[i] = z[i] - eps;
            let fm = residual_of(&zp)?;
            zp[i] = z[i];
            let col = (fp - fm) / (2.0 * eps);
            jac.set_column(i, &col);
        }
        let delta = jac.lu().solve(&f).ok_or(Error::SingularJacobian)?;
        z -= &delta;
        f = residual_of(&z)?;
        norm = f.norm();
        if !norm.is_finite() {
            return Err(Error::NewtonDivergence {
                iterations: iteration + 1,
                residual: norm,
            });
        }
    }
    if norm <= 1e-10 {
        Ok(z)
    } else {
        Err(Error::NewtonDivergence {
            iterations: 50,
            residual: norm,
        })
    }
}

/// Advance one two-stage step: autonomous substep, then x⁺ = x_aut + hBu.
/// Requires a quadratic Hamiltonian and a single input channel.
pub fn ddr_step(
    sys: &PHSystem,
    x: &DVector<f64>,
    u: &DVector<f64>,
    h: f64,
) -> Result<StepResult> {
    check_input(sys, u)?;
    if sys.m() != 1 {
        return Err(Error::DimensionMismatch {
            context: "two-stage rule input channels".into(),
            expected: 1,
            got: sys.m(),
        });
    }
    let q = sys.q().map_err(|_| Error::NonQuadraticHamiltonian {
        context: "two-stage step".into(),
    })?;
    let x_aut = ddr_autonomous_explicit(sys, x, h)?;
    let x_next = &x_aut + (&sys.b * u) * h;
    // Y = Bᵀ ∇̄H(x_aut, x⁺) = ½ BᵀQ(x_aut + x⁺).
    let output = (sys.b.transpose() * (q * (&x_aut + &x_next))) * 0.5;
    let supplied = u.dot(&output) * h;
    // The autonomous substep dissipates exactly h‖g(x)‖²: its discrete
    // gradient collapses to Q J₋⁻¹ x because J₋ + J₊ = 2I.
    let g = crate::system::manifold_residual(sys, x, h)?;
    let dissipated = g.norm_squared() * h;
    let stored_delta = sys.energy(&x_next)? - sys.energy(x)?;
    Ok(StepResult {
        x_next,
        x_aut: Some(x_aut),
        output,
        stored_delta,
        supplied,
        dissipated,
    })
}

/// Advance one step under the selected scheme.
pub fn step(
    sys: &PHSystem,
    x: &DVector<f64>,
    u: &DVector<f64>,
    scheme: SchemeKind,
    h: f64,
) -> Result<StepResult> {
    match scheme {
        SchemeKind::Midpoint => midpoint_step(sys, x, u, h),
        SchemeKind::Ddr => ddr_step(sys, x, u, h),
    }
}

/// A rolled-out trajectory with per-step energy bookkeeping.
/// `states` and `energies` have one more entry than `inputs`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub outputs: Vec<DVector<f64>>,
    pub energies: Vec<f64>,
    pub supplied: Vec<f64>,
    pub dissipated: Vec<f64>,
    pub scheme: SchemeKind,
    pub h: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory holds x0")
    }

    /// Total supplied energy, the objective the optimal control problems
    /// minimize.
    pub fn total_cost(&self) -> f64 {
        self.supplied.iter().sum()
    }

    pub fn total_dissipated(&self) -> f64 {
        self.dissipated.iter().sum()
    }

    /// Largest per-step energy-balance residual along the trajectory.
    pub fn max_energy_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for k in 0..self.len() {
            let r = (self.energies[k + 1] - self.energies[k] - self.supplied[k]
                + self.dissipated[k])
                .abs();
            worst = worst.max(r);
        }
        worst
    }
}

/// Roll out a full trajectory from `x0` under the given input sequence.
/// A failing step is reported together with its index.
pub fn simulate(
    sys: &PHSystem,
    x0: &DVector<f64>,
    inputs: &[DVector<f64>],
    scheme: SchemeKind,
    h: f64,
) -> Result<Trajectory> {
    let mut states = Vec::with_capacity(inputs.len() + 1);
    let mut outputs = Vec::with_capacity(inputs.len());
    let mut energies = Vec::with_capacity(inputs.len() + 1);
    let mut supplied = Vec::with_capacity(inputs.len());
    let mut dissipated = Vec::with_capacity(inputs.len());
    states.push(x0.clone());
    energies.push(sys.energy(x0).map_err(|e| e.at_step(0))?);
    for (k, u) in inputs.iter().enumerate() {
        let x = states.last().expect("states is never empty");
        let result = step(sys, x, u, scheme, h).map_err(|e| e.at_step(k))?;
        energies.push(energies.last().unwrap() + result.stored_delta);
        outputs.push(result.output);
        supplied.push(result.supplied);
        dissipated.push(result.dissipated);
        states.push(result.x_next);
    }
    Ok(Trajectory {
        states,
        inputs: inputs.to_vec(),
        outputs,
        energies,
        supplied,
        dissipated,
        scheme,
        h,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::HamiltonianSpec;
    use crate::system::PHSystem;
    use nalgebra::DMatrix;

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

    fn rotation_2d() -> PHSystem {
        PHSystem::linear(
            "rot",
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]),
            DMatrix::zeros(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        )
        .unwrap()
    }

    #[test]
    fn midpoint_scalar_decay() {
        // J₋ = 1.5, J₊ = 0.5: from x = 1 with no input, x⁺ = 1/3 and the
        // balance is ΔH = -4/9 = -dissipated.
        let sys = oscillator_1d();
        let r = midpoint_step(
            &sys,
            &DVector::from_row_slice(&[1.0]),
            &DVector::zeros(1),
            1.0,
        )
        .unwrap();
        assert!((r.x_next[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((r.output[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.supplied).abs() < 1e-15);
        assert!((r.dissipated - 4.0 / 9.0).abs() < 1e-15);
        assert!(energy_balance_residual(&r) < 1e-15);
    }

    #[test]
    fn two_stage_scalar_with_input() {
        // x_aut = 1/3, x⁺ = 1/3 + 1 = 4/3, Y = (1/3 + 4/3)/2 = 5/6,
        // dissipated = (2/3)² = 4/9, ΔH = 5/6 - 4/9 = 7/18.
        let sys = oscillator_1d();
        let r = ddr_step(
            &sys,
            &DVector::from_row_slice(&[1.0]),
            &DVector::from_row_slice(&[1.0]),
            1.0,
        )
        .unwrap();
        assert!((r.x_aut.as_ref().unwrap()[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((r.x_next[0] - 4.0 / 3.0).abs() < 1e-15);
        assert!((r.output[0] - 5.0 / 6.0).abs() < 1e-15);
        assert!((r.supplied - 5.0 / 6.0).abs() < 1e-15);
        assert!((r.dissipated - 4.0 / 9.0).abs() < 1e-15);
        assert!((r.stored_delta - 7.0 / 18.0).abs() < 1e-15);
    }

    #[test]
    fn autonomous_substep_preserves_norm_without_dissipation() {
        // Cayley map of a rotation: x = (1,0) goes to (0.6, -0.8).
        let sys = rotation_2d();
        let x = DVector::from_row_slice(&[1.0, 0.0]);
        let z = ddr_autonomous_explicit(&sys, &x, 1.0).unwrap();
        assert!((z[0] - 0.6).abs() < 1e-15);
        assert!((z[1] + 0.8).abs() < 1e-15);
        assert!((z.norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn implicit_substep_matches_explicit_on_quadratic_storage() {
        let sys = rotation_2d();
        for i in 0..25 {
            let t = i as f64 * 0.37;
            let x = DVector::from_row_slice(&[2.0 * t.sin(), 1.5 * t.cos()]);
            let a = ddr_autonomous_explicit(&sys, &x, 0.7).unwrap();
            let b = ddr_autonomous_implicit(&sys, &x, 0.7).unwrap();
            assert!((a - b).amax() < 1e-9);
        }
    }

    #[test]
    fn implicit_substep_handles_a_quartic_well() {
        // 1D with J = 0, R = 1 and H = x⁴/4: z satisfies
        // z − 1 + (z⁴ − 1)/(4(z − 1)) = 0 starting from x = 1.
        let sys = PHSystem {
            name: None,
            j: DMatrix::zeros(1, 1).into(),
            r: DMatrix::from_row_slice(1, 1, &[1.0]).into(),
            b: DMatrix::from_row_slice(1, 1, &[1.0]),
            hamiltonian: HamiltonianSpec::Expression {
                value: crate::expr::parse_expression("x1^4/4").unwrap(),
                gradient: Some(vec![crate::expr::parse_expression("x1^3").unwrap()]),
                dim: 1,
            },
        };
        let x = DVector::from_row_slice(&[1.0]);
        let z = ddr_autonomous_implicit(&sys, &x, 1.0).unwrap();
        // Residual of the defining equation, checked directly.
        let dg = sys.hamiltonian.discrete_gradient(&x, &z).unwrap();
        let f = z[0] - 1.0 + dg[0];
        assert!(f.abs() < 1e-10, "residual {f}");
        assert!(z[0] > 0.0 && z[0] < 1.0);
        // Energy must not increase along the autonomous flow.
        let h0 = sys.energy(&x).unwrap();
        let h1 = sys.energy(&z).unwrap();
        assert!(h1 <= h0 + 1e-12);
    }

    #[test]
    fn explicit_substep_rejects_non_quadratic_storage() {
        let sys = PHSystem {
            name: None,
            j: DMatrix::zeros(1, 1).into(),
            r: DMatrix::from_row_slice(1, 1, &[1.0]).into(),
            b: DMatrix::from_row_slice(1, 1, &[1.0]),
            hamiltonian: HamiltonianSpec::Expression {
                value: crate::expr::parse_expression("x1^4/4").unwrap(),
                gradient: None,
                dim: 1,
            },
        };
        assert!(matches!(
            ddr_autonomous_explicit(&sys, &DVector::zeros(1), 1.0),
            Err(Error::NonQuadraticHamiltonian { .. })
        ));
    }

    #[test]
    fn simulate_reports_the_failing_step_index() {
        let sys = oscillator_1d();
        let inputs = vec![DVector::zeros(1), DVector::zeros(2), DVector::zeros(1)];
        match simulate(&sys, &DVector::from_row_slice(&[1.0]), &inputs, SchemeKind::Ddr, 1.0) {
            Err(Error::StepFailed { k, .. }) => assert_eq!(k, 1),
            other => panic!("expected StepFailed, got {other:?}"),
        }
    }

    #[test]
    fn autonomous_two_stage_decay_is_geometric() {
        let sys = oscillator_1d();
        let inputs = vec![DVector::zeros(1); 6];
        let traj = simulate(
            &sys,
            &DVector::from_row_slice(&[1.0]),
            &inputs,
            SchemeKind::Ddr,
            1.0,
        )
        .unwrap();
        for (k, x) in traj.states.iter().enumerate() {
            let want = (1.0f64 / 3.0).powi(k as i32);
            assert!((x[0] - want).abs() < 1e-14);
        }
        assert!(traj.max_energy_residual() < 1e-14);
    }

    #[test]
    fn zero_input_two_stage_equals_the_autonomous_substep() {
        let sys = rotation_2d();
        let mut x = DVector::from_row_slice(&[0.3, -1.1]);
        for _ in 0..40 {
            let driven = ddr_step(&sys, &x, &DVector::zeros(1), 0.5).unwrap();
            let free = ddr_autonomous_explicit(&sys, &x, 0.5).unwrap();
            assert!((&driven.x_next - &free).amax() <= 1e-15);
            x = driven.x_next;
        }
    }

    #[test]
    fn conservative_midpoint_preserves_energy_over_long_runs() {
        let sys = rotation_2d();
        let inputs = vec![DVector::zeros(1); 1000];
        let traj = simulate(
            &sys,
            &DVector::from_row_slice(&[1.0, 0.0]),
            &inputs,
            SchemeKind::Midpoint,
            1.0,
        )
        .unwrap();
        let h0 = traj.energies[0];
        for e in &traj.energies {
            assert!((e - h0).abs() <= 1e-10);
        }
    }
}
