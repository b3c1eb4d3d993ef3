//! Single-shooting transcription: stacked inputs in, objective, merit,
//! terminal defect, and adjoint gradient out.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::stepper::{simulate, Trajectory};

use super::kernel::StepKernel;
use super::OCProblem;

/// Everything one merit evaluation produces.
pub struct EvalRecord {
    /// Σ ℓ_k, the supplied energy.
    pub objective: f64,
    /// objective + λᵀc + (μ/2)‖c‖² when a terminal weight was given,
    /// otherwise equal to `objective`.
    pub merit: f64,
    /// Gradient of `merit` with respect to the stacked inputs.
    pub gradient: DVector<f64>,
    /// Terminal defect c = x_N − x_target.
    pub defect: DVector<f64>,
}

/// A problem prepared for repeated evaluation.
pub struct Transcription<'a> {
    pub problem: &'a OCProblem,
    kernel: StepKernel<'a>,
}

impl<'a> Transcription<'a> {
    pub fn new(problem: &'a OCProblem) -> Result<Self> {
        problem.validate()?;
        let kernel = StepKernel::new(&problem.system, problem.scheme, problem.h)?;
        Ok(Transcription { problem, kernel })
    }

    /// Length of the stacked decision vector, N·m.
    pub fn dim(&self) -> usize {
        self.problem.n_steps * self.problem.system.m()
    }

    pub(crate) fn kernel(&self) -> &StepKernel<'a> {
        &self.kernel
    }

    /// Split a stacked vector into per-step inputs.
    pub fn unstack(&self, u: &DVector<f64>) -> Vec<DVector<f64>> {
        let m = self.problem.system.m();
        (0..self.problem.n_steps)
            .map(|k| DVector::from_iterator(m, (0..m).map(|j| u[k * m + j])))
            .collect()
    }

    /// Stack per-step inputs into one decision vector.
    pub fn stack(inputs: &[DVector<f64>]) -> DVector<f64> {
        let total: usize = inputs.iter().map(|u| u.len()).sum();
        DVector::from_iterator(total, inputs.iter().flat_map(|u| u.iter().copied()))
    }

    fn check_dim(&self, u: &DVector<f64>) -> Result<()> {
        if u.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "stacked input vector".into(),
                expected: self.dim(),
                got: u.len(),
            });
        }
        Ok(())
    }

    /// Forward rollout through the optimizer's kernel: states and Σ ℓ.
    pub fn rollout(&self, u: &DVector<f64>) -> Result<(Vec<DVector<f64>>, f64)> {
        self.check_dim(u)?;
        let m = self.problem.system.m();
        let mut states = Vec::with_capacity(self.problem.n_steps + 1);
        states.push(self.problem.x0.clone());
        let mut objective = 0.0;
        for k in 0..self.problem.n_steps {
            let uk = u.rows(k * m, m).into_owned();
            let (x_next, cost) = self
                .kernel
                .advance(&states[k], &uk)
                .map_err(|e| e.at_step(k))?;
            objective += cost;
            states.push(x_next);
        }
        Ok((states, objective))
    }

    /// Terminal defect x_N(u) − x_target.
    pub fn constraint(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        let (states, _) = self.rollout(u)?;
        Ok(states.last().unwrap() - &self.problem.x_target)
    }

    /// Evaluate the merit function and its adjoint gradient. With
    /// `terminal = Some((λ, μ))` the merit is the augmented Lagrangian;
    /// μ = 0 gives the plain Lagrangian used for stationarity measures;
    /// `None` evaluates the bare objective.
    pub fn evaluate(
        &self,
        u: &DVector<f64>,
        terminal: Option<(&DVector<f64>, f64)>,
    ) -> Result<EvalRecord> {
        let (states, objective) = self.rollout(u)?;
        let m = self.problem.system.m();
        let n = self.problem.system.n();
        let defect = states.last().unwrap() - &self.problem.x_target;
        let mut merit = objective;
        let mut adjoint = DVector::zeros(n);
        if let Some((lambda, mu)) = terminal {
            merit += lambda.dot(&defect) + 0.5 * mu * defect.norm_squared();
            adjoint = lambda + &defect * mu;
        }
        let mut gradient = DVector::zeros(self.dim());
        for k in (0..self.problem.n_steps).rev() {
            let uk = u.rows(k * m, m).into_owned();
            let d = self
                .kernel
                .derivatives(&states[k], &uk)
                .map_err(|e| e.at_step(k))?;
            let gu = &d.lu + d.au.transpose() * &adjoint;
            gradient.rows_mut(k * m, m).copy_from(&gu);
            adjoint = &d.lx + d.ax.transpose() * &adjoint;
        }
        Ok(EvalRecord {
            objective,
            merit,
            gradient,
            defect,
        })
    }

    /// Roll the final answer out through the reference stepper, which also
    /// recomputes outputs and the energy bookkeeping.
    pub fn reference_trajectory(&self, u: &DVector<f64>) -> Result<Trajectory> {
        self.check_dim(u)?;
        simulate(
            &self.problem.system,
            &self.problem.x0,
            &self.unstack(u),
            self.problem.scheme,
            self.problem.h,
        )
    }
}
