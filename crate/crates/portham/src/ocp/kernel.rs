//! One-step map and its derivatives as seen by the optimizer.
//!
//! For constant structure matrices and quadratic storage the step is
//! affine, x⁺ = A x + G u, and the stage cost is the quadratic form
//! ℓ = uᵀ(C x) + uᵀ D u, so everything is assembled once. Otherwise the
//! step is evaluated through the stepper and differentiated by central
//! differences.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::stepper::{step, SchemeKind};
use crate::system::{structure_pair, PHSystem};

pub struct StepDerivatives {
    /// ∂x⁺/∂x, n×n.
    pub ax: DMatrix<f64>,
    /// ∂x⁺/∂u, n×m.
    pub au: DMatrix<f64>,
    /// ∂ℓ/∂x.
    pub lx: DVector<f64>,
    /// ∂ℓ/∂u.
    pub lu: DVector<f64>,
}

struct ConstantCache {
    a: DMatrix<f64>,
    g: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
}

pub struct StepKernel<'a> {
    sys: &'a PHSystem,
    scheme: SchemeKind,
    h: f64,
    cache: Option<ConstantCache>,
}

impl<'a> StepKernel<'a> {
    pub fn new(sys: &'a PHSystem, scheme: SchemeKind, h: f64) -> Result<Self> {
        let cache = if sys.is_constant_structure() && sys.hamiltonian.is_quadratic() {
            let n = sys.n();
            let q = sys.q()?;
            let pair = structure_pair(sys, &DVector::zeros(n), h)?;
            let a = pair.solve_matrix(&pair.jplus);
            let (g, c, d) = match scheme {
                SchemeKind::Midpoint => {
                    // x⁺ = A x + h J₋⁻¹B u; ℓ = uᵀy with
                    // y = h BᵀQJ₋⁻¹ x + (h²/2) BᵀQJ₋⁻¹B u.
                    let jinv_b = pair.solve_matrix(&sys.b);
                    let p = sys.b.transpose() * q * pair.solve_matrix(&DMatrix::identity(n, n));
                    let d = &p * &sys.b * (h * h / 2.0);
                    (jinv_b * h, p * h, d)
                }
                SchemeKind::Ddr => {
                    // x⁺ = A x + h B u; ℓ = h uᵀY with
                    // Y = BᵀQA x + (h/2) BᵀQB u.
                    let bq = sys.b.transpose() * q;
                    let c = &bq * &a * h;
                    let d = &bq * &sys.b * (h * h / 2.0);
                    (&sys.b * h, c, d)
                }
            };
            Some(ConstantCache { a, g, c, d })
        } else {
            None
        };
        Ok(StepKernel {
            sys,
            scheme,
            h,
            cache,
        })
    }

    pub fn system(&self) -> &PHSystem {
        self.sys
    }

    /// The cached affine data (A, G, C, D), when the step is affine.
    pub(crate) fn affine_parts(
        &self,
    ) -> Option<(&DMatrix<f64>, &DMatrix<f64>, &DMatrix<f64>, &DMatrix<f64>)> {
        self.cache.as_ref().map(|c| (&c.a, &c.g, &c.c, &c.d))
    }

    /// Advance one step, returning the next state and the stage cost.
    pub fn advance(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
        if let Some(cache) = &self.cache {
            let x_next = &cache.a * x + &cache.g * u;
            let cost = u.dot(&(&cache.c * x)) + u.dot(&(&cache.d * u));
            Ok((x_next, cost))
        } else {
            let r = step(self.sys, x, u, self.scheme, self.h)?;
            Ok((r.x_next, r.supplied))
        }
    }

    /// Jacobians of the step map and gradients of the stage cost.
    pub fn derivatives(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<StepDerivatives> {
        if let Some(cache) = &self.cache {
            return Ok(StepDerivatives {
                ax: cache.a.clone(),
                au: cache.g.clone(),
                lx: cache.c.transpose() * u,
                lu: &cache.c * x + (&cache.d + cache.d.transpose()) * u,
            });
        }
        let n = x.len();
        let m = u.len();
        let mut ax = DMatrix::zeros(n, n);
        let mut au = DMatrix::zeros(n, m);
        let mut lx = DVector::zeros(n);
        let mut lu = DVector::zeros(m);
        let mut xp = x.clone();
        for i in 0..n {
            let eps = 5e-6 * (1.0 + x[i].abs());
            xp[i] = x[i] + eps;
            let (fp, cp) = self.advance(&xp, u)?;
            xp[i] = x[i] - eps;
            let (fm, cm) = self.advance(&xp, u)?;
            xp[i] = x[i];
            ax.set_column(i, &((fp - fm) / (2.0 * eps)));
            lx[i] = (cp - cm) / (2.0 * eps);
        }
        let mut up = u.clone();
        for j in 0..m {
            let eps = 5e-6 * (1.0 + u[j].abs());
            up[j] = u[j] + eps;
            let (fp, cp) = self.advance(x, &up)?;
            up[j] = u[j] - eps;
            let (fm, cm) = self.advance(x, &up)?;
            up[j] = u[j];
            au.set_column(j, &((fp - fm) / (2.0 * eps)));
            lu[j] = (cp - cm) / (2.0 * eps);
        }
        Ok(StepDerivatives { ax, au, lx, lu })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

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
    fn affine_path_matches_the_stepper() {
        let sys = damped_2d();
        for scheme in [SchemeKind::Midpoint, SchemeKind::Ddr] {
            let kernel = StepKernel::new(&sys, scheme, 0.8).unwrap();
            assert!(kernel.affine_parts().is_some());
            let x = DVector::from_row_slice(&[1.2, -0.4]);
            let u = DVector::from_row_slice(&[0.7]);
            let (xk, ck) = kernel.advance(&x, &u).unwrap();
            let r = step(&sys, &x, &u, scheme, 0.8).unwrap();
            assert!((xk - &r.x_next).amax() < 1e-13);
            assert!((ck - r.supplied).abs() < 1e-13);
        }
    }

    #[test]
    fn analytic_derivatives_match_finite_differences() {
        let sys = damped_2d();
        for scheme in [SchemeKind::Midpoint, SchemeKind::Ddr] {
            let kernel = StepKernel::new(&sys, scheme, 1.0).unwrap();
            let x = DVector::from_row_slice(&[0.9, 0.3]);
            let u = DVector::from_row_slice(&[-0.5]);
            let d = kernel.derivatives(&x, &u).unwrap();
            let eps = 1e-6;
            for i in 0..2 {
                let mut xp = x.clone();
                xp[i] += eps;
                let (fp, cp) = kernel.advance(&xp, &u).unwrap();
                xp[i] = x[i] - eps;
                let (fm, cm) = kernel.advance(&xp, &u).unwrap();
                let col = (fp - fm) / (2.0 * eps);
                assert!((&d.ax.column(i) - &col).amax() < 1e-8);
                assert!((d.lx[i] - (cp - cm) / (2.0 * eps)).abs() < 1e-8);
            }
            let mut upv = u.clone();
            upv[0] += eps;
            let (fp, cp) = kernel.advance(&x, &upv).unwrap();
            upv[0] = u[0] - eps;
            let (fm, cm) = kernel.advance(&x, &upv).unwrap();
            assert!((&d.au.column(0) - &((fp - fm) / (2.0 * eps))).amax() < 1e-8);
            assert!((d.lu[0] - (cp - cm) / (2.0 * eps)).abs() < 1e-8);
        }
    }
}
