//! Hamiltonian storage functions and their discrete gradients.
//!
//! Two kinds are supported: the quadratic form H(x) = ½ xᵀQx, whose
//! discrete gradient has the closed form ½ Q(v+w), and scalar expressions
//! in `x1..xn`, where the discrete gradient is the mean-value integral
//! ∫₀¹ ∇H(v + s(w−v)) ds evaluated by 10-point Gauss-Legendre quadrature.
//! Every discrete-gradient call checks the secant identity
//! ∇̄H(v,w)ᵀ(w−v) = H(w) − H(v) and fails loudly when quadrature cannot
//! meet it.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::expr::Expression;

/// Gauss-Legendre nodes and weights on [-1, 1], positive half; the full
/// 10-point rule is symmetric about zero.
const GL10_HALF: [(f64, f64); 5] = [
    (0.148_874_338_981_631_2, 0.295_524_224_714_752_9),
    (0.433_395_394_129_247_2, 0.269_266_719_309_996_3),
    (0.679_409_568_299_024_4, 0.219_086_362_515_982_0),
    (0.865_063_366_688_984_5, 0.149_451_349_150_580_6),
    (0.973_906_528_517_171_7, 0.066_671_344_308_688_1),
];

/// Storage function H(x) together with enough structure to evaluate its
/// gradient and discrete gradient.
#[derive(Debug, Clone)]
pub enum HamiltonianSpec {
    /// H(x) = ½ xᵀQx with Q symmetric positive definite.
    Quadratic(DMatrix<f64>),
    /// H given as a scalar expression; `gradient` optionally carries the
    /// partial derivatives as expressions, otherwise central differences
    /// are used.
    Expression {
        value: Expression,
        gradient: Option<Vec<Expression>>,
        dim: usize,
    },
}

impl HamiltonianSpec {
    pub fn dim(&self) -> usize {
        match self {
            HamiltonianSpec::Quadratic(q) => q.nrows(),
            HamiltonianSpec::Expression { dim, .. } => *dim,
        }
    }

    pub fn is_quadratic(&self) -> bool {
        matches!(self, HamiltonianSpec::Quadratic(_))
    }

    fn check_dim(&self, x: &DVector<f64>, context: &str) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: context.into(),
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Stored energy H(x).
    pub fn value(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_dim(x, "hamiltonian")?;
        match self {
            HamiltonianSpec::Quadratic(q) => Ok(0.5 * x.dot(&(q * x))),
            HamiltonianSpec::Expression { value, .. } => value.eval(x.as_slice()),
        }
    }

    /// Pointwise gradient ∇H(x).
    pub fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(x, "hamiltonian gradient")?;
        match self {
            HamiltonianSpec::Quadratic(q) => Ok(q * x),
            HamiltonianSpec::Expression {
                value, gradient, ..
            } => {
                if let Some(parts) = gradient {
                    let mut g = DVector::zeros(x.len());
                    for (i, part) in parts.iter().enumerate() {
                        g[i] = part.eval(x.as_slice())?;
                    }
                    return Ok(g);
                }
                let mut g = DVector::zeros(x.len());
                let mut xp = x.clone();
                for i in 0..x.len() {
                    let eps = 1e-6 * (1.0 + x[i].abs());
                    xp[i] = x[i] + eps;
                    let fp = value.eval(xp.as_slice())?;
                    xp[i] = x[i] - eps;
                    let fm = value.eval(xp.as_slice())?;
                    xp[i] = x[i];
                    g[i] = (fp - fm) / (2.0 * eps);
                }
                Ok(g)
            }
        }
    }

    /// Discrete gradient ∇̄H(v, w): equals ∇H at v = w, and satisfies the
    /// secant identity ∇̄H(v,w)ᵀ(w−v) = H(w) − H(v) up to
    /// 1e-8 · (1 + |H(v)| + |H(w)|), which is checked on every call.
    pub fn discrete_gradient(
        &self,
        v: &DVector<f64>,
        w: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        self.check_dim(v, "discrete gradient (first argument)")?;
        self.check_dim(w, "discrete gradient (second argument)")?;
        let dg = match self {
            HamiltonianSpec::Quadratic(q) => q * ((v + w) * 0.5),
            HamiltonianSpec::Expression { .. } => {
                if v == w {
                    self.gradient(v)?
                } else {
                    let d = w - v;
                    let mut acc = DVector::zeros(v.len());
                    for (node, weight) in GL10_HALF {
                        for s in [0.5 * (1.0 - node), 0.5 * (1.0 + node)] {
                            let g = self.gradient(&(v + &d * s))?;
                            acc += g * (0.5 * weight);
                        }
                    }
                    acc
                }
            }
        };
        let hv = self.value(v)?;
        let hw = self.value(w)?;
        let residual = (dg.dot(&(w - v)) - (hw - hv)).abs();
        let tolerance = 1e-8 * (1.0 + hv.abs() + hw.abs());
        if residual > tolerance {
            return Err(Error::QuadratureFailure {
                residual,
                tolerance,
            });
        }
        Ok(dg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expression;
    use proptest::prelude::*;

    fn quartic() -> HamiltonianSpec {
        HamiltonianSpec::Expression {
            value: parse_expression("x1^4/4").unwrap(),
            gradient: Some(vec![parse_expression("x1^3").unwrap()]),
            dim: 1,
        }
    }

    #[test]
    fn quadratic_value_and_gradient() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        let spec = HamiltonianSpec::Quadratic(q);
        let x = DVector::from_row_slice(&[2.0, 3.0]);
        assert_eq!(spec.value(&x).unwrap(), 11.0);
        assert_eq!(spec.gradient(&x).unwrap(), DVector::from_row_slice(&[2.0, 6.0]));
    }

    #[test]
    fn quadratic_discrete_gradient_is_midpoint_gradient() {
        let spec = HamiltonianSpec::Quadratic(DMatrix::identity(2, 2));
        let v = DVector::from_row_slice(&[1.0, 0.0]);
        let w = DVector::from_row_slice(&[0.0, 1.0]);
        let dg = spec.discrete_gradient(&v, &w).unwrap();
        assert_eq!(dg, DVector::from_row_slice(&[0.5, 0.5]));
    }

    #[test]
    fn quartic_discrete_gradient_matches_secant_exactly() {
        // ∫₀¹ (0 + 2s)³ ds = 2, and H(2) − H(0) = 4 over w − v = 2.
        let spec = quartic();
        let v = DVector::from_row_slice(&[0.0]);
        let w = DVector::from_row_slice(&[2.0]);
        let dg = spec.discrete_gradient(&v, &w).unwrap();
        assert!((dg[0] - 2.0).abs() < 1e-12, "got {}", dg[0]);
    }

    #[test]
    fn coincident_arguments_reduce_to_the_gradient() {
        let spec = quartic();
        let v = DVector::from_row_slice(&[1.3]);
        let dg = spec.discrete_gradient(&v, &v).unwrap();
        let g = spec.gradient(&v).unwrap();
        assert_eq!(dg, g);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let spec = HamiltonianSpec::Quadratic(DMatrix::identity(2, 2));
        let v = DVector::from_row_slice(&[1.0]);
        assert!(matches!(
            spec.value(&v),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    proptest! {
        #[test]
        fn secant_identity_holds_for_random_quadratics(
            diag in prop::array::uniform3(0.1f64..4.0),
            v in prop::array::uniform3(-5.0f64..5.0),
            w in prop::array::uniform3(-5.0f64..5.0),
        ) {
            let q = DMatrix::from_diagonal(&DVector::from_row_slice(&diag));
            let spec = HamiltonianSpec::Quadratic(q);
            let v = DVector::from_row_slice(&v);
            let w = DVector::from_row_slice(&w);
            let dg = spec.discrete_gradient(&v, &w).unwrap();
            let lhs = dg.dot(&(&w - &v));
            let rhs = spec.value(&w).unwrap() - spec.value(&v).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
        }

        #[test]
        fn secant_identity_holds_for_a_quartic_well(
            v in -2.0f64..2.0,
            w in -2.0f64..2.0,
        ) {
            let spec = quartic();
            let v = DVector::from_row_slice(&[v]);
            let w = DVector::from_row_slice(&[w]);
            let dg = spec.discrete_gradient(&v, &w).unwrap();
            let lhs = dg.dot(&(&w - &v));
            let rhs = spec.value(&w).unwrap() - spec.value(&v).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-8 * (1.0 + lhs.abs()));
        }
    }
}
