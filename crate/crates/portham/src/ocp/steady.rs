//! Steady states of the controlled discrete dynamics and their cost.
//!
//! A pair (x̄, ū) is steady when c(x̄, ū) = (J−R)QJ₋⁻¹x̄ + Bū = 0, which
//! is equivalent to x̄ being a fixed point of the two-stage step for every
//! step size. The cost assigned to a steady pair is ūᵀY(x̄, ū); at any
//! steady pair it equals ‖g(x̄)‖², the squared residual, because the
//! one-step energy balance collapses to h·ūᵀY = h·‖g‖² there. Zero-cost
//! steady states additionally satisfy Bū = −J(x̄)QJ₋⁻¹(x̄)x̄.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::system::{structure_pair, PHSystem};

/// An accepted steady pair with its diagnostics.
#[derive(Debug, Clone)]
pub struct SteadyState {
    pub x_bar: DVector<f64>,
    pub u_bar: DVector<f64>,
    /// ūᵀY(x̄, ū); equals ‖g(x̄)‖² up to the constraint residual.
    pub cost: f64,
    /// ‖(J−R)QJ₋⁻¹x̄ + Bū‖₂.
    pub residual: f64,
    /// Whether the cost is numerically zero (≤ 1e-12).
    pub zero_cost: bool,
    /// ‖Bū + J(x̄)QJ₋⁻¹(x̄)x̄‖₂, the zero-cost membership gap.
    pub membership_gap: f64,
}

/// All accepted steady states plus notes on starts that went nowhere.
#[derive(Debug, Clone)]
pub struct SteadySolveReport {
    pub states: Vec<SteadyState>,
    pub failures: Vec<String>,
}

/// Fixed-point constraint c(x, u) = (J−R)QJ₋⁻¹x + Bu.
fn constraint(sys: &PHSystem, h: f64, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
    let pair = structure_pair(sys, x, h)?;
    let z = pair.solve(x);
    let jr = sys.j_at(x)? - sys.r_at(x)?;
    Ok(jr * (sys.q()? * z) + &sys.b * u)
}

/// Steady cost ūᵀY(x̄, ū) with Y = BᵀQ·(x_aut + x⁺)/2 evaluated at the
/// fixed point.
fn steady_cost(sys: &PHSystem, h: f64, x: &DVector<f64>, u: &DVector<f64>) -> Result<f64> {
    let pair = structure_pair(sys, x, h)?;
    let x_aut = pair.solve(&(&pair.jplus * x));
    let x_next = &x_aut + (&sys.b * u) * h;
    let y = (sys.b.transpose() * (sys.q()? * (&x_aut + &x_next))) * 0.5;
    Ok(u.dot(&y))
}

fn membership_gap(sys: &PHSystem, h: f64, x: &DVector<f64>, u: &DVector<f64>) -> Result<f64> {
    let pair = structure_pair(sys, x, h)?;
    let z = pair.solve(x);
    Ok((&sys.b * u + sys.j_at(x)? * (sys.q()? * z)).norm())
}

/// Least-squares input for a candidate state: argmin_u ‖c(x, u)‖.
fn least_squares_input(sys: &PHSystem, h: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
    let pair = structure_pair(sys, x, h)?;
    let z = pair.solve(x);
    let rhs = -((sys.j_at(x)? - sys.r_at(x)?) * (sys.q()? * z));
    let svd = sys.b.clone().svd(true, true);
    svd.solve(&rhs, 1e-12).map_err(|e| Error::InvalidProblem {
        reason: format!("input least-squares failed: {e}"),
    })
}

struct KktSystem<'a> {
    sys: &'a PHSystem,
    h: f64,
    n: usize,
    m: usize,
}

impl KktSystem<'_> {
    /// Gradient of the cost and Jacobian of the constraint by central
    /// differences at (x, u).
    fn first_order(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let dim = self.n + self.m;
        let mut grad = DVector::zeros(dim);
        let mut jac = DMatrix::zeros(self.n, dim);
        let mut xp = x.clone();
        let mut up = u.clone();
        let set = |xv: &mut DVector<f64>, uv: &mut DVector<f64>, i: usize, val: f64| {
            if i < self.n {
                xv[i] = val;
            } else {
                uv[i - self.n] = val;
            }
        };
        for i in 0..dim {
            let keep = if i < self.n { x[i] } else { u[i - self.n] };
            let eps = 5e-6 * (1.0 + keep.abs());
            set(&mut xp, &mut up, i, keep + eps);
            let cp = steady_cost(self.sys, self.h, &xp, &up)?;
            let gp = constraint(self.sys, self.h, &xp, &up)?;
            set(&mut xp, &mut up, i, keep - eps);
            let cm = steady_cost(self.sys, self.h, &xp, &up)?;
            let gm = constraint(self.sys, self.h, &xp, &up)?;
            set(&mut xp, &mut up, i, keep);
            grad[i] = (cp - cm) / (2.0 * eps);
            jac.set_column(i, &((gp - gm) / (2.0 * eps)));
        }
        Ok((grad, jac))
    }

    /// KKT residual F(z) = [∇ℓ + Jcᵀλ; c] at z = (x, u, λ).
    fn residual(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        let (x, u, lambda) = self.split(z);
        let (grad, jac) = self.first_order(&x, &u)?;
        let c = constraint(self.sys, self.h, &x, &u)?;
        let mut f = DVector::zeros(self.n + self.m + self.n);
        f.rows_mut(0, self.n + self.m)
            .copy_from(&(&grad + jac.transpose() * &lambda));
        f.rows_mut(self.n + self.m, self.n).copy_from(&c);
        Ok(f)
    }

    fn split(&self, z: &DVector<f64>) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        (
            z.rows(0, self.n).into_owned(),
            z.rows(self.n, self.m).into_owned(),
            z.rows(self.n + self.m, self.n).into_owned(),
        )
    }
}

/// Damped Newton on the KKT conditions, followed by a Gauss-Newton polish
/// of the constraint alone so the fixed-point equation holds to machine
/// precision before the cost identity is evaluated.
fn solve_from(
    kkt: &KktSystem<'_>,
    x0: DVector<f64>,
    u0: DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let (n, m) = (kkt.n, kkt.m);
    let dim = n + m + n;
    let mut z = DVector::zeros(dim);
    z.rows_mut(0, n).copy_from(&x0);
    z.rows_mut(n, m).copy_from(&u0);
    let mut f = kkt.residual(&z)?;
    for _ in 0..60 {
        let (x, u, _) = kkt.split(&z);
        let c = constraint(kkt.sys, kkt.h, &x, &u)?;
        let grad_part = f.rows(0, n + m).amax();
        if c.amax() <= 1e-12 && grad_part <= 1e-8 {
            break;
        }
        // Jacobian of F by forward differences on F itself.
        let mut jf = DMatrix::zeros(dim, dim);
        let mut zp = z.clone();
        for i in 0..dim {
            let eps = 1e-5 * (1.0 + z[i].abs());
            zp[i] = z[i] + eps;
            let fp = kkt.residual(&zp)?;
            zp[i] = z[i];
            jf.set_column(i, &((&fp - &f) / eps));
        }
        let delta = jf.lu().solve(&(-&f)).ok_or(Error::SingularJacobian)?;
        let fnorm = f.norm();
        let mut alpha = 1.0;
        let mut advanced = false;
        for _ in 0..25 {
            let cand = &z + &delta * alpha;
            let fc = kkt.residual(&cand)?;
            if fc.norm() <= (1.0 - 1e-4 * alpha) * fnorm {
                z = cand;
                f = fc;
                advanced = true;
                break;
            }
            alpha *= 0.5;
        }
        if !advanced {
            return Err(Error::NewtonDivergence {
                iterations: 60,
                residual: fnorm,
            });
        }
    }
    let (mut x, mut u, _) = kkt.split(&z);
    // Constraint polish: min-norm Gauss-Newton steps on c(x, u) = 0.
    for _ in 0..8 {
        let c = constraint(kkt.sys, kkt.h, &x, &u)?;
        if c.norm() <= 1e-14 {
            break;
        }
        let (_, jac) = kkt.first_order(&x, &u)?;
        let svd = jac.svd(true, true);
        let step = svd.solve(&c, 1e-12).map_err(|_| Error::SingularJacobian)?;
        for i in 0..n {
            x[i] -= step[i];
        }
        for j in 0..m {
            u[j] -= step[n + j];
        }
    }
    let c = constraint(kkt.sys, kkt.h, &x, &u)?;
    let grad_part = {
        let (grad, jac) = kkt.first_order(&x, &u)?;
        // Multiplier by least squares for the stationarity check.
        let lambda = (jac.transpose().svd(true, true))
            .solve(&(-&grad), 1e-10)
            .unwrap_or_else(|_| DVector::zeros(n));
        (&grad + jac.transpose() * lambda).amax()
    };
    if c.norm() > 1e-8 || grad_part > 1e-6 {
        return Err(Error::NewtonDivergence {
            iterations: 60,
            residual: c.norm().max(grad_part),
        });
    }
    Ok((x, u))
}

fn build_state(sys: &PHSystem, h: f64, x: DVector<f64>, u: DVector<f64>) -> Result<SteadyState> {
    let residual = constraint(sys, h, &x, &u)?.norm();
    let cost = steady_cost(sys, h, &x, &u)?;
    let gap = membership_gap(sys, h, &x, &u)?;
    Ok(SteadyState {
        zero_cost: cost.abs() <= 1e-12,
        membership_gap: gap,
        x_bar: x,
        u_bar: u,
        cost,
        residual,
    })
}

/// Evaluate a candidate steady state: the input is recovered from the
/// fixed-point equation by least squares and must make it consistent.
pub fn steady_state_at(sys: &PHSystem, h: f64, x_bar: &DVector<f64>) -> Result<SteadyState> {
    let u = least_squares_input(sys, h, x_bar)?;
    let res = constraint(sys, h, x_bar, &u)?.norm();
    if res > 1e-10 * (1.0 + x_bar.norm()) {
        return Err(Error::InvalidProblem {
            reason: format!("state is not steady under any input (residual {res:.3e})"),
        });
    }
    build_state(sys, h, x_bar.clone(), u)
}

/// Search for locally cost-minimal steady states from `n_starts` seeded
/// initial guesses. Starts that fail to converge are reported in the
/// summary, not raised as errors. Accepted states satisfy the fixed-point
/// equation to 1e-8 and carry a nonnegative cost equal to ‖g(x̄)‖².
pub fn steady_state_solve(
    sys: &PHSystem,
    h: f64,
    n_starts: usize,
    seed: u64,
) -> Result<SteadySolveReport> {
    sys.check_shapes()?;
    let q_check = sys.q();
    if q_check.is_err() {
        return Err(Error::NonQuadraticHamiltonian {
            context: "steady-state search".into(),
        });
    }
    let n = sys.n();
    let kkt = KktSystem {
        sys,
        h,
        n,
        m: sys.m(),
    };
    let mut report = SteadySolveReport {
        states: Vec::new(),
        failures: Vec::new(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for start in 0..n_starts.max(1) {
        let x0 = if start == 0 {
            DVector::zeros(n)
        } else {
            DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0))
        };
        let u0 = match least_squares_input(sys, h, &x0) {
            Ok(u) => u,
            Err(e) => {
                report.failures.push(format!("start {start}: {e}"));
                continue;
            }
        };
        match solve_from(&kkt, x0, u0) {
            Ok((x, u)) => match build_state(sys, h, x, u) {
                Ok(state) => {
                    if state.residual <= 1e-8 && state.cost >= -1e-10 {
                        report.states.push(state);
                    } else {
                        report.failures.push(format!(
                            "start {start}: rejected (residual {:.3e}, cost {:.3e})",
                            state.residual, state.cost
                        ));
                    }
                }
                Err(e) => report.failures.push(format!("start {start}: {e}")),
            },
            Err(e) => report.failures.push(format!("start {start}: {e}")),
        }
    }
    // Deduplicate by state proximity, keeping the cheapest representative.
    report
        .states
        .sort_by(|a, b| a.cost.total_cmp(&b.cost).then_with(|| lex(&a.x_bar, &b.x_bar)));
    let mut unique: Vec<SteadyState> = Vec::new();
    for s in report.states.drain(..) {
        let dup = unique
            .iter()
            .any(|t| (&s.x_bar - &t.x_bar).norm() <= 1e-6 * (1.0 + t.x_bar.norm()));
        if !dup {
            unique.push(s);
        }
    }
    report.states = unique;
    Ok(report)
}

fn lex(a: &DVector<f64>, b: &DVector<f64>) -> std::cmp::Ordering {
    for i in 0..a.len().min(b.len()) {
        match a[i].total_cmp(&b[i]) {
            std::cmp::Ordering::Equal => continue,
            other => return other,
        }
    }
    std::cmp::Ordering::Equal
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::manifold_residual;
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

    #[test]
    fn scalar_steady_family_has_the_expected_cost() {
        // Every x̄ is steady with ū = 2x̄/3 at h = 1; at x̄ = 3 the input
        // is 2 and the cost ūᵀY = 4 = ‖g(3)‖².
        let sys = oscillator_1d();
        let s = steady_state_at(&sys, 1.0, &DVector::from_row_slice(&[3.0])).unwrap();
        assert!((s.u_bar[0] - 2.0).abs() < 1e-12);
        assert!((s.cost - 4.0).abs() < 1e-12);
        assert!(s.residual < 1e-12);
        assert!(!s.zero_cost);
        let g = manifold_residual(&sys, &s.x_bar, 1.0).unwrap();
        assert!((s.cost - g.norm_squared()).abs() < 1e-10);
    }

    #[test]
    fn the_minimizer_of_the_scalar_family_is_the_origin() {
        let sys = oscillator_1d();
        let report = steady_state_solve(&sys, 1.0, 6, 0).unwrap();
        assert!(!report.states.is_empty(), "failures: {:?}", report.failures);
        let best = &report.states[0];
        assert!(best.x_bar[0].abs() < 1e-6);
        assert!(best.cost.abs() < 1e-10);
        assert!(best.zero_cost);
        assert!(best.membership_gap < 1e-8);
    }

    #[test]
    fn non_steady_states_are_rejected() {
        // Rotation with B = (0, 1)ᵀ: x̄ = (1, 0) needs a force along the
        // first axis that the input cannot provide.
        let sys = PHSystem::linear(
            "rot",
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]),
            DMatrix::zeros(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        )
        .unwrap();
        assert!(steady_state_at(&sys, 1.0, &DVector::from_row_slice(&[1.0, 0.0])).is_err());
    }
}
