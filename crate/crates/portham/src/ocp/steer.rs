//! Exact steering between states and assembly of three-phase controls.
//!
//! `steer_to` finds a short control sequence driving one state to another
//! under the discrete dynamics; it is the building block for warm starts
//! that park the trajectory at a cheap steady state: steer in, hold the
//! steady input, steer out. Such a control is feasible by construction,
//! so the optimizer starts from a point whose terminal defect is already
//! at solver tolerance.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ocp::kernel::StepKernel;
use crate::ocp::steady::{steady_state_solve, SteadyState};
use crate::ocp::{OCProblem, Transcription};
use crate::stepper::{step, SchemeKind};
use crate::system::PHSystem;

/// Endpoint agreement required of the phases of an assembled control.
const PHASE_TOL: f64 = 1e-8;

/// Residual and Jacobian of the endpoint map v ↦ x_L(v) − target, with
/// the Jacobian built by forward sensitivity propagation.
fn endpoint_map(
    kernel: &StepKernel<'_>,
    from: &DVector<f64>,
    target: &DVector<f64>,
    steps: usize,
    v: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = from.len();
    let m = kernel.system().m();
    let mut x = from.clone();
    let mut sens = DMatrix::zeros(n, steps * m);
    for k in 0..steps {
        let uk = v.rows(k * m, m).into_owned();
        let der = kernel.derivatives(&x, &uk)?;
        let (x_next, _) = kernel.advance(&x, &uk)?;
        sens = &der.ax * sens;
        sens.view_mut((0, k * m), (n, m)).copy_from(&der.au);
        x = x_next;
    }
    Ok((x - target, sens))
}

/// Find per-step inputs that move `from` to `target` in exactly `steps`
/// steps, staying inside the per-channel input box. Levenberg-Marquardt
/// on the endpoint residual; several seeded restarts before giving up.
#[allow(clippy::too_many_arguments)]
pub fn steer_to(
    sys: &PHSystem,
    scheme: SchemeKind,
    h: f64,
    from: &DVector<f64>,
    target: &DVector<f64>,
    steps: usize,
    u_lo: &DVector<f64>,
    u_hi: &DVector<f64>,
    seed: u64,
) -> Result<Vec<DVector<f64>>> {
    sys.check_shapes()?;
    let n = sys.n();
    let m = sys.m();
    if from.len() != n || target.len() != n {
        return Err(Error::DimensionMismatch {
            context: "steering endpoints".into(),
            expected: n,
            got: from.len().max(target.len()),
        });
    }
    if u_lo.len() != m || u_hi.len() != m {
        return Err(Error::DimensionMismatch {
            context: "steering input bounds".into(),
            expected: m,
            got: u_lo.len().max(u_hi.len()),
        });
    }
    if steps == 0 {
        return if (from - target).norm() <= 1e-10 {
            Ok(Vec::new())
        } else {
            Err(Error::InvalidProblem {
                reason: "zero-step steering between distinct states".into(),
            })
        };
    }
    let kernel = StepKernel::new(sys, scheme, h)?;
    let dim = steps * m;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best_residual = f64::INFINITY;
    for attempt in 0..9 {
        let mut v = if attempt == 0 {
            DVector::zeros(dim)
        } else {
            DVector::from_fn(dim, |_, _| rng.random_range(-0.5..0.5))
        };
        let Ok((mut rho, mut jac)) = endpoint_map(&kernel, from, target, steps, &v) else {
            continue;
        };
        let mut mu = 1e-4;
        for _ in 0..80 {
            if rho.norm() <= 1e-12 {
                break;
            }
            let a = jac.transpose() * &jac + DMatrix::identity(dim, dim) * mu;
            let rhs = -(jac.transpose() * &rho);
            let Some(delta) = a.lu().solve(&rhs) else {
                mu *= 4.0;
                continue;
            };
            let cand = &v + delta;
            match endpoint_map(&kernel, from, target, steps, &cand) {
                Ok((rho_c, jac_c)) if rho_c.norm() < rho.norm() => {
                    v = cand;
                    rho = rho_c;
                    jac = jac_c;
                    mu = (mu / 3.0).max(1e-14);
                }
                _ => {
                    mu *= 4.0;
                    if mu > 1e12 {
                        break;
                    }
                }
            }
        }
        best_residual = best_residual.min(rho.norm());
        if rho.norm() > 1e-12 {
            continue;
        }
        let in_box = (0..dim).all(|i| {
            let j = i % m;
            v[i] >= u_lo[j] - 1e-12 && v[i] <= u_hi[j] + 1e-12
        });
        if !in_box {
            continue;
        }
        for i in 0..dim {
            let j = i % m;
            v[i] = v[i].clamp(u_lo[j], u_hi[j]);
        }
        return Ok((0..steps).map(|k| v.rows(k * m, m).into_owned()).collect());
    }
    Err(Error::NewtonDivergence {
        iterations: 80,
        residual: best_residual,
    })
}

fn roll(
    sys: &PHSystem,
    scheme: SchemeKind,
    h: f64,
    from: &DVector<f64>,
    inputs: &[DVector<f64>],
) -> Result<DVector<f64>> {
    let mut x = from.clone();
    for u in inputs {
        x = step(sys, &x, u, scheme, h)?.x_next;
    }
    Ok(x)
}

/// Concatenate an approach phase, a steady hold, and a departure phase
/// into one stacked control for `problem`. Each seam is verified: the
/// approach must land on the steady state, the steady pair must actually
/// be a fixed point of the discrete step, and the departure must land on
/// the problem target.
pub fn build_turnpike_control(
    problem: &OCProblem,
    u1: &[DVector<f64>],
    u2: &[DVector<f64>],
    steady: &SteadyState,
) -> Result<DVector<f64>> {
    let (k1, k2) = (u1.len(), u2.len());
    if k1 + k2 > problem.n_steps {
        return Err(Error::PhaseMismatch {
            detail: format!(
                "approach ({k1}) and departure ({k2}) overflow the horizon ({})",
                problem.n_steps
            ),
        });
    }
    let sys = &problem.system;
    let (scheme, h) = (problem.scheme, problem.h);
    let landed = roll(sys, scheme, h, &problem.x0, u1)?;
    let gap = (&landed - &steady.x_bar).norm();
    if gap > PHASE_TOL {
        return Err(Error::PhaseMismatch {
            detail: format!("approach misses the steady state by {gap:.3e}"),
        });
    }
    let held = step(sys, &steady.x_bar, &steady.u_bar, scheme, h)?.x_next;
    let drift = (&held - &steady.x_bar).norm();
    if drift > PHASE_TOL {
        return Err(Error::PhaseMismatch {
            detail: format!("steady pair drifts by {drift:.3e} per step"),
        });
    }
    let out = roll(sys, scheme, h, &steady.x_bar, u2)?;
    let miss = (&out - &problem.x_target).norm();
    if miss > PHASE_TOL {
        return Err(Error::PhaseMismatch {
            detail: format!("departure misses the target by {miss:.3e}"),
        });
    }
    let mut phases: Vec<DVector<f64>> = Vec::with_capacity(problem.n_steps);
    phases.extend_from_slice(u1);
    for _ in 0..(problem.n_steps - k1 - k2) {
        phases.push(steady.u_bar.clone());
    }
    phases.extend_from_slice(u2);
    Ok(Transcription::stack(&phases))
}

/// Try to build a feasible three-phase control for `problem`, parking at
/// the zero-cost steady state nearest the boundary data. Returns `None`
/// when the horizon is too short, no suitable steady state exists, or
/// either steering leg fails; the caller falls back to other starts.
pub fn warm_start_control(problem: &OCProblem) -> Option<DVector<f64>> {
    if problem.n_steps < 3 {
        return None;
    }
    let sys = &problem.system;
    let (n, m) = (sys.n(), sys.m());
    let in_box = |u: &DVector<f64>| (0..m).all(|j| u[j] >= problem.u_min[j] && u[j] <= problem.u_max[j]);
    let mut candidates = vec![SteadyState {
        x_bar: DVector::zeros(n),
        u_bar: DVector::zeros(m),
        cost: 0.0,
        residual: 0.0,
        zero_cost: true,
        membership_gap: 0.0,
    }];
    if let Ok(report) = steady_state_solve(sys, problem.h, 8, 0) {
        candidates.extend(report.states.into_iter().filter(|s| s.zero_cost));
    }
    let score = |s: &SteadyState| {
        (&s.x_bar - &problem.x0).norm() + (&s.x_bar - &problem.x_target).norm()
    };
    let steady = candidates
        .into_iter()
        .filter(|s| in_box(&s.u_bar))
        .min_by(|a, b| score(a).total_cmp(&score(b)))?;
    let k = n.max(3).min(problem.n_steps / 3).max(1);
    let u1 = steer_to(
        sys,
        problem.scheme,
        problem.h,
        &problem.x0,
        &steady.x_bar,
        k,
        &problem.u_min,
        &problem.u_max,
        0,
    )
    .ok()?;
    let u2 = steer_to(
        sys,
        problem.scheme,
        problem.h,
        &steady.x_bar,
        &problem.x_target,
        k,
        &problem.u_min,
        &problem.u_max,
        1,
    )
    .ok()?;
    build_turnpike_control(problem, &u1, &u2, &steady).ok()
}
