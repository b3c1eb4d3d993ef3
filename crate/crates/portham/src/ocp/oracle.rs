//! Exhaustive grid search over input sequences, used as an independent
//! check on the gradient-based solver for short horizons.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};

use super::transcribe::Transcription;
use super::{OCPSolution, OCProblem, SolveStatus};

const MAX_GRID_POINTS: f64 = 1e7;

#[derive(Clone)]
struct Best {
    cost: f64,
    unorm2: f64,
    digits: Vec<u32>,
}

impl Best {
    fn improves_over(&self, other: &Option<Best>) -> bool {
        match other {
            None => true,
            Some(b) => {
                match self.cost.total_cmp(&b.cost) {
                    std::cmp::Ordering::Less => return true,
                    std::cmp::Ordering::Greater => return false,
                    std::cmp::Ordering::Equal => {}
                }
                match self.unorm2.total_cmp(&b.unorm2) {
                    std::cmp::Ordering::Less => return true,
                    std::cmp::Ordering::Greater => return false,
                    std::cmp::Ordering::Equal => {}
                }
                self.digits < b.digits
            }
        }
    }
}

struct Shard {
    best: Option<Best>,
    min_defect: f64,
}

fn merge(a: Shard, b: Shard) -> Shard {
    let best = match (a.best, b.best) {
        (None, b) => b,
        (a, None) => a,
        (Some(x), Some(y)) => {
            if x.improves_over(&Some(y.clone())) {
                Some(x)
            } else {
                Some(y)
            }
        }
    };
    Shard {
        best,
        min_defect: a.min_defect.min(b.min_defect),
    }
}

/// Dense affine model flattened to row-major slices for the hot loop.
struct FlatModel {
    n: usize,
    m: usize,
    n_steps: usize,
    a: Vec<f64>,
    g: Vec<f64>,
    c: Vec<f64>,
    d: Vec<f64>,
    target: Vec<f64>,
    tol2: f64,
}

struct FlatWalker<'a> {
    model: &'a FlatModel,
    values: &'a [Vec<f64>],
    combos_per_step: usize,
    states: Vec<f64>,
    costs: Vec<f64>,
    unorms: Vec<f64>,
    digits: Vec<u32>,
    shard: Shard,
}

impl<'a> FlatWalker<'a> {
    fn new(model: &'a FlatModel, values: &'a [Vec<f64>], x0: &[f64]) -> Self {
        let grid = values[0].len();
        let mut states = vec![0.0; (model.n_steps + 1) * model.n];
        states[..model.n].copy_from_slice(x0);
        FlatWalker {
            model,
            values,
            combos_per_step: grid.pow(model.m as u32),
            states,
            costs: vec![0.0; model.n_steps + 1],
            unorms: vec![0.0; model.n_steps + 1],
            digits: vec![0; model.n_steps * model.m],
            shard: Shard {
                best: None,
                min_defect: f64::INFINITY,
            },
        }
    }

    /// Apply combo `combo` at step `k`: write digits, advance the state,
    /// and accumulate cost and input norm.
    fn apply(&mut self, k: usize, combo: usize) {
        let (n, m) = (self.model.n, self.model.m);
        let grid = self.values[0].len();
        let mut u = [0.0f64; 8];
        let mut rem = combo;
        for j in 0..m {
            let digit = rem % grid;
            rem /= grid;
            self.digits[k * m + j] = digit as u32;
            u[j] = self.values[j][digit];
        }
        let (head, tail) = self.states.split_at_mut((k + 1) * n);
        let x = &head[k * n..];
        let xn = &mut tail[..n];
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += self.model.a[i * n + j] * x[j];
            }
            for l in 0..m {
                acc += self.model.g[i * m + l] * u[l];
            }
            xn[i] = acc;
        }
        let mut cost = 0.0;
        let mut unorm2 = 0.0;
        for l in 0..m {
            let mut cu = 0.0;
            for j in 0..n {
                cu += self.model.c[l * n + j] * x[j];
            }
            for p in 0..m {
                cu += self.model.d[l * m + p] * u[p];
            }
            cost += u[l] * cu;
            unorm2 += u[l] * u[l];
        }
        self.costs[k + 1] = self.costs[k] + cost;
        self.unorms[k + 1] = self.unorms[k] + unorm2;
    }

    fn leaf(&mut self) {
        let n = self.model.n;
        let x = &self.states[self.model.n_steps * n..];
        let mut defect2 = 0.0;
        for i in 0..n {
            let d = x[i] - self.model.target[i];
            defect2 += d * d;
        }
        self.shard.min_defect = self.shard.min_defect.min(defect2.sqrt());
        if defect2 <= self.model.tol2 {
            let cand = Best {
                cost: self.costs[self.model.n_steps],
                unorm2: self.unorms[self.model.n_steps],
                digits: self.digits.clone(),
            };
            if cand.improves_over(&self.shard.best) {
                self.shard.best = Some(cand);
            }
        }
    }

    fn walk(&mut self, k: usize) {
        if k == self.model.n_steps {
            self.leaf();
            return;
        }
        for combo in 0..self.combos_per_step {
            self.apply(k, combo);
            self.walk(k + 1);
        }
    }
}

fn flat_search(
    model: &FlatModel,
    values: &[Vec<f64>],
    x0: &[f64],
) -> Shard {
    let grid = values[0].len();
    let combos = grid.pow(model.m as u32);
    if model.n_steps == 0 {
        let mut w = FlatWalker::new(model, values, x0);
        w.leaf();
        return w.shard;
    }
    (0..combos)
        .into_par_iter()
        .map(|first| {
            let mut w = FlatWalker::new(model, values, x0);
            w.apply(0, first);
            w.walk(1);
            w.shard
        })
        .reduce(
            || Shard {
                best: None,
                min_defect: f64::INFINITY,
            },
            merge,
        )
}

/// Enumerate every input sequence on a per-channel uniform grid and return
/// the cheapest one whose terminal defect is within `terminal_tolerance`.
/// Ties break on the input norm, then lexicographically, so the result is
/// deterministic.
pub fn brute_force_oracle(
    problem: &OCProblem,
    grid_points_per_channel: usize,
    terminal_tolerance: f64,
) -> Result<OCPSolution> {
    problem.validate()?;
    let m = problem.system.m();
    if grid_points_per_channel < 2 {
        return Err(Error::InvalidProblem {
            reason: "the grid needs at least two points per channel".into(),
        });
    }
    for j in 0..m {
        if !problem.u_min[j].is_finite() || !problem.u_max[j].is_finite() {
            return Err(Error::InvalidProblem {
                reason: format!("grid enumeration needs finite bounds on channel {j}"),
            });
        }
    }
    let digits = (problem.n_steps * m) as i32;
    let total = (grid_points_per_channel as f64).powi(digits);
    if total > MAX_GRID_POINTS {
        return Err(Error::GridTooLarge { total });
    }
    let values: Vec<Vec<f64>> = (0..m)
        .map(|j| {
            let span = problem.u_max[j] - problem.u_min[j];
            (0..grid_points_per_channel)
                .map(|i| problem.u_min[j] + span * i as f64 / (grid_points_per_channel - 1) as f64)
                .collect()
        })
        .collect();

    let tr = Transcription::new(problem)?;
    // The flat walker holds the current input in a fixed-size buffer.
    let affine = if m <= 8 { tr.kernel().affine_parts() } else { None };
    let shard = if let Some((a, g, c, d)) = affine {
        let n = problem.system.n();
        let model = FlatModel {
            n,
            m,
            n_steps: problem.n_steps,
            a: a.transpose().as_slice().to_vec(),
            g: g.transpose().as_slice().to_vec(),
            c: c.transpose().as_slice().to_vec(),
            d: d.transpose().as_slice().to_vec(),
            target: problem.x_target.as_slice().to_vec(),
            tol2: terminal_tolerance * terminal_tolerance,
        };
        flat_search(&model, &values, problem.x0.as_slice())
    } else {
        let mut states = vec![DVector::zeros(problem.system.n()); problem.n_steps + 1];
        states[0] = problem.x0.clone();
        let mut costs = vec![0.0; problem.n_steps + 1];
        let mut unorms = vec![0.0; problem.n_steps + 1];
        let mut digit_buf = vec![0u32; problem.n_steps * m];
        let mut shard = Shard {
            best: None,
            min_defect: f64::INFINITY,
        };
        general_walk_checked(
            &tr,
            &values,
            terminal_tolerance,
            0,
            &mut states,
            &mut costs,
            &mut unorms,
            &mut digit_buf,
            &mut shard,
        )?;
        shard
    };

    let best = shard.best.ok_or(Error::NoFeasibleGridPoint {
        tolerance: terminal_tolerance,
        best_defect: shard.min_defect,
    })?;
    let inputs: Vec<DVector<f64>> = (0..problem.n_steps)
        .map(|k| {
            DVector::from_iterator(
                m,
                (0..m).map(|j| values[j][best.digits[k * m + j] as usize]),
            )
        })
        .collect();
    let trajectory = crate::stepper::simulate(
        &problem.system,
        &problem.x0,
        &inputs,
        problem.scheme,
        problem.h,
    )?;
    let cost = trajectory.total_cost();
    let terminal_defect = (trajectory.final_state() - &problem.x_target).norm();
    Ok(OCPSolution {
        trajectory,
        cost,
        terminal_defect,
        kkt_residual: None,
        status: SolveStatus::Converged,
    })
}

#[allow(clippy::too_many_arguments)]
fn general_walk_checked(
    tr: &Transcription<'_>,
    values: &[Vec<f64>],
    tol: f64,
    k: usize,
    states: &mut Vec<DVector<f64>>,
    costs: &mut Vec<f64>,
    unorms: &mut Vec<f64>,
    digits: &mut Vec<u32>,
    shard: &mut Shard,
) -> Result<()> {
    let p = tr.problem;
    let m = p.system.m();
    if k == p.n_steps {
        let defect = (&states[k] - &p.x_target).norm();
        shard.min_defect = shard.min_defect.min(defect);
        if defect <= tol {
            let cand = Best {
                cost: costs[k],
                unorm2: unorms[k],
                digits: digits.clone(),
            };
            if cand.improves_over(&shard.best) {
                shard.best = Some(cand);
            }
        }
        return Ok(());
    }
    let grid = values[0].len();
    let combos = grid.pow(m as u32);
    for combo in 0..combos {
        let mut rem = combo;
        let mut u = DVector::zeros(m);
        for j in 0..m {
            let digit = rem % grid;
            rem /= grid;
            digits[k * m + j] = digit as u32;
            u[j] = values[j][digit];
        }
        let (x_next, cost) = tr.kernel().advance(&states[k], &u)?;
        states[k + 1] = x_next;
        costs[k + 1] = costs[k] + cost;
        unorms[k + 1] = unorms[k] + u.norm_squared();
        general_walk_checked(
            tr, values, tol, k + 1, states, costs, unorms, digits, shard,
        )?;
    }
    Ok(())
}
