//! Augmented-Lagrangian solver with a projected limited-memory
//! quasi-Newton inner loop and deterministic multi-start.

use std::collections::VecDeque;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

use super::transcribe::Transcription;
use super::{OCPSolution, OCProblem, SolveStatus, SolverOptions};

fn clamp(u: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(u.len(), |i, _| u[i].max(lo[i]).min(hi[i]))
}

/// ‖P(u − g) − u‖∞, the box-projected stationarity measure.
fn projected_gradient_norm(
    u: &DVector<f64>,
    g: &DVector<f64>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
) -> f64 {
    let moved = clamp(&(u - g), lo, hi);
    (moved - u).amax()
}

fn two_loop(
    g: &DVector<f64>,
    history: &VecDeque<(DVector<f64>, DVector<f64>, f64)>,
) -> DVector<f64> {
    let mut q = g.clone();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let alpha = rho * s.dot(&q);
        q -= y * alpha;
        alphas.push(alpha);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = s.dot(y) / y.dot(y);
        q *= gamma;
    }
    for ((s, y, rho), alpha) in history.iter().zip(alphas.into_iter().rev()) {
        let beta = rho * y.dot(&q);
        q += s * (alpha - beta);
    }
    -q
}

/// Minimize a smooth merit over the input box, starting from `u0`.
fn lbfgs_box<F>(
    f: F,
    u0: DVector<f64>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    tol: f64,
    max_iter: usize,
    memory: usize,
) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    let mut u = clamp(&u0, lo, hi);
    let (mut fv, mut g) = f(&u)?;
    let mut history: VecDeque<(DVector<f64>, DVector<f64>, f64)> = VecDeque::new();
    for _ in 0..max_iter {
        if projected_gradient_norm(&u, &g, lo, hi) <= tol {
            break;
        }
        let mut d = if history.is_empty() {
            -&g
        } else {
            two_loop(&g, &history)
        };
        if g.dot(&d) >= 0.0 {
            history.clear();
            d = -&g;
        }
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = clamp(&(&u + &d * alpha), lo, hi);
            let stepv = &cand - &u;
            if stepv.amax() == 0.0 {
                break;
            }
            let (fc, gc) = f(&cand)?;
            if fc <= fv + 1e-4 * g.dot(&stepv) {
                let yv = &gc - &g;
                let sy = stepv.dot(&yv);
                if sy > 1e-12 * stepv.norm() * yv.norm() {
                    let rho = 1.0 / sy;
                    history.push_back((stepv, yv, rho));
                    if history.len() > memory {
                        history.pop_front();
                    }
                }
                u = cand;
                fv = fc;
                g = gc;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            if history.is_empty() {
                // Even steepest descent cannot improve: numerically done.
                break;
            }
            history.clear();
        }
    }
    Ok(u)
}

struct StartOutcome {
    u: DVector<f64>,
    objective: f64,
    defect_norm: f64,
    kkt: f64,
    status: SolveStatus,
}

fn run_start(
    tr: &Transcription<'_>,
    u0: DVector<f64>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    opts: &SolverOptions,
) -> Result<StartOutcome> {
    let n = tr.problem.system.n();
    let mut lambda = DVector::zeros(n);
    let mut mu = opts.penalty_init;
    let mut u = clamp(&u0, lo, hi);
    let mut prev_defect = f64::INFINITY;
    let mut stall = 0usize;
    let mut status = SolveStatus::MaxIter;
    let mut objective = f64::INFINITY;
    let mut defect_norm = f64::INFINITY;
    let mut kkt = f64::INFINITY;
    for outer in 0..opts.max_outer {
        let inner_tol = (opts.tol_kkt * 0.1).max(1e-2 * 0.1f64.powi(outer as i32));
        let lam = lambda.clone();
        u = lbfgs_box(
            |v| {
                let rec = tr.evaluate(v, Some((&lam, mu)))?;
                Ok((rec.merit, rec.gradient))
            },
            u,
            lo,
            hi,
            inner_tol,
            opts.max_inner,
            opts.lbfgs_memory,
        )?;
        let rec = tr.evaluate(&u, Some((&lambda, mu)))?;
        defect_norm = rec.defect.norm();
        objective = rec.objective;
        let lambda_hat = &lambda + &rec.defect * mu;
        let stat = tr.evaluate(&u, Some((&lambda_hat, 0.0)))?;
        kkt = projected_gradient_norm(&u, &stat.gradient, lo, hi);
        if defect_norm <= opts.tol_terminal && kkt <= opts.tol_kkt {
            status = SolveStatus::Converged;
            break;
        }
        if defect_norm > opts.stall_defect && defect_norm > 0.9 * prev_defect {
            stall += 1;
        } else {
            stall = 0;
        }
        if stall >= opts.stall_outers {
            status = SolveStatus::Infeasible;
            break;
        }
        if defect_norm < prev_defect {
            lambda = lambda_hat;
        }
        mu = (mu * opts.penalty_growth).min(opts.penalty_max);
        prev_defect = prev_defect.min(defect_norm);
    }
    Ok(StartOutcome {
        u,
        objective,
        defect_norm,
        kkt,
        status,
    })
}

fn start_points(
    tr: &Transcription<'_>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    opts: &SolverOptions,
) -> Vec<DVector<f64>> {
    let dim = tr.dim();
    let mut starts = vec![DVector::zeros(dim)];
    if let Some(w) = &opts.warm_start {
        if w.len() == dim {
            starts.push(DVector::from_row_slice(w));
        }
    } else if let Some(w) = super::steer::warm_start_control(tr.problem) {
        starts.push(w);
    }
    let mut idx = 0u64;
    while starts.len() < opts.multistarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(0x5eed + idx));
        idx += 1;
        let u = DVector::from_fn(dim, |i, _| {
            let a = lo[i].max(-3.0);
            let b = hi[i].min(3.0);
            if a < b {
                rng.random_range(a..b)
            } else {
                lo[i].max(hi[i].min(0.0))
            }
        });
        starts.push(u);
    }
    starts
}

/// Rank outcomes: converged first, then feasible, then by defect; ties
/// break on objective, then input norm, then lexicographic inputs, so the
/// reduction is independent of scheduling.
fn better(a: &StartOutcome, b: &StartOutcome, tol_terminal: f64, tol_kkt: f64) -> bool {
    let rank = |o: &StartOutcome| -> u8 {
        let feasible = o.defect_norm <= tol_terminal;
        if feasible && o.kkt <= tol_kkt {
            0
        } else if feasible {
            1
        } else {
            2
        }
    };
    let (ra, rb) = (rank(a), rank(b));
    if ra != rb {
        return ra < rb;
    }
    if ra == 2 {
        match a.defect_norm.total_cmp(&b.defect_norm) {
            std::cmp::Ordering::Less => return true,
            std::cmp::Ordering::Greater => return false,
            std::cmp::Ordering::Equal => {}
        }
    }
    match a.objective.total_cmp(&b.objective) {
        std::cmp::Ordering::Less => return true,
        std::cmp::Ordering::Greater => return false,
        std::cmp::Ordering::Equal => {}
    }
    match a.u.norm().total_cmp(&b.u.norm()) {
        std::cmp::Ordering::Less => return true,
        std::cmp::Ordering::Greater => return false,
        std::cmp::Ordering::Equal => {}
    }
    for i in 0..a.u.len() {
        match a.u[i].total_cmp(&b.u[i]) {
            std::cmp::Ordering::Less => return true,
            std::cmp::Ordering::Greater => return false,
            std::cmp::Ordering::Equal => {}
        }
    }
    false
}

/// Solve the boundary transfer problem. Multi-start outcomes are reduced
/// deterministically; the returned trajectory is rolled out through the
/// reference stepper.
pub fn solve(problem: &OCProblem) -> Result<OCPSolution> {
    let tr = Transcription::new(problem)?;
    let m = problem.system.m();
    let dim = tr.dim();
    let mut lo = DVector::zeros(dim);
    let mut hi = DVector::zeros(dim);
    for k in 0..problem.n_steps {
        for j in 0..m {
            lo[k * m + j] = problem.u_min[j];
            hi[k * m + j] = problem.u_max[j];
        }
    }
    let starts = start_points(&tr, &lo, &hi, &problem.options);
    let outcomes: Vec<Result<StartOutcome>> = starts
        .into_par_iter()
        .map(|u0| run_start(&tr, u0, &lo, &hi, &problem.options))
        .collect();
    let mut best: Option<StartOutcome> = None;
    let mut first_err: Option<Error> = None;
    for outcome in outcomes {
        match outcome {
            Ok(o) => {
                let replace = match &best {
                    None => true,
                    Some(b) => better(
                        &o,
                        b,
                        problem.options.tol_terminal,
                        problem.options.tol_kkt,
                    ),
                };
                if replace {
                    best = Some(o);
                }
            }
            Err(e) => {
                if first_err.is_none() {
                    first_err = Some(e);
                }
            }
        }
    }
    let best = match best {
        Some(b) => b,
        None => return Err(first_err.expect("no starts were attempted")),
    };
    let trajectory = tr.reference_trajectory(&best.u)?;
    let cost = trajectory.total_cost();
    let terminal_defect = (trajectory.final_state() - &problem.x_target).norm();
    Ok(OCPSolution {
        trajectory,
        cost,
        terminal_defect,
        kkt_residual: Some(best.kkt),
        status: best.status,
    })
}
