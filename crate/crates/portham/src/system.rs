//! Port-Hamiltonian system data and the structure maps derived from it.
//!
//! A system couples a skew-symmetric interconnection map J(x), a positive
//! semidefinite dissipation map R(x), a constant input matrix B, and a
//! storage function H. For quadratic H(x) = ½ xᵀQx the pair
//! J₋(x) = I − (h/2)(J−R)Q and J₊(x) = I + (h/2)(J−R)Q drives both
//! discretizations, and the residual map g(x) = R(x)^{1/2} Q J₋(x)⁻¹ x
//! measures how far a state is from the non-dissipative set.

use nalgebra::{DMatrix, DVector, LU};

use crate::error::{Error, Result};
use crate::expr::Expression;
use crate::hamiltonian::HamiltonianSpec;

/// A matrix-valued map of the state: either constant or entrywise
/// expressions in `x1..xn`.
#[derive(Debug, Clone)]
pub enum StateMatrix {
    Constant(DMatrix<f64>),
    Expressions {
        rows: Vec<Vec<Expression>>,
        nrows: usize,
        ncols: usize,
    },
}

impl StateMatrix {
    pub fn shape(&self) -> (usize, usize) {
        match self {
            StateMatrix::Constant(m) => (m.nrows(), m.ncols()),
            StateMatrix::Expressions { nrows, ncols, .. } => (*nrows, *ncols),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, StateMatrix::Constant(_))
    }

    /// The underlying matrix when it does not depend on the state.
    pub fn as_constant(&self) -> Option<&DMatrix<f64>> {
        match self {
            StateMatrix::Constant(m) => Some(m),
            StateMatrix::Expressions { .. } => None,
        }
    }

    pub fn eval(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        match self {
            StateMatrix::Constant(m) => Ok(m.clone()),
            StateMatrix::Expressions { rows, nrows, ncols } => {
                let mut m = DMatrix::zeros(*nrows, *ncols);
                for (i, row) in rows.iter().enumerate() {
                    for (j, entry) in row.iter().enumerate() {
                        m[(i, j)] = entry.eval(x.as_slice())?;
                    }
                }
                Ok(m)
            }
        }
    }

    /// Build from expression rows, checking the grid is rectangular and no
    /// entry references a variable beyond `n`.
    pub fn from_expressions(rows: Vec<Vec<Expression>>, n: usize) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map(|r| r.len()).unwrap_or(0);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != ncols {
                return Err(Error::DimensionMismatch {
                    context: format!("matrix row {i}"),
                    expected: ncols,
                    got: row.len(),
                });
            }
            for entry in row {
                if let Some(max) = entry.max_var() {
                    if max >= n {
                        return Err(Error::EvalError {
                            reason: format!(
                                "entry `{entry}` references x{} but the state has dimension {n}",
                                max + 1
                            ),
                        });
                    }
                }
            }
        }
        // Collapse to a constant when no entry mentions the state.
        if rows.iter().all(|r| r.iter().all(|e| !e.depends_on_state())) {
            let zero = DVector::zeros(n);
            let mut m = DMatrix::zeros(nrows, ncols);
            for (i, row) in rows.iter().enumerate() {
                for (j, entry) in row.iter().enumerate() {
                    m[(i, j)] = entry.eval(zero.as_slice())?;
                }
            }
            return Ok(StateMatrix::Constant(m));
        }
        Ok(StateMatrix::Expressions { rows, nrows, ncols })
    }
}

impl From<DMatrix<f64>> for StateMatrix {
    fn from(m: DMatrix<f64>) -> Self {
        StateMatrix::Constant(m)
    }
}

/// Port-Hamiltonian system x⁺ = step(x, u) with output y = Bᵀ∇H.
#[derive(Debug, Clone)]
pub struct PHSystem {
    pub name: Option<String>,
    pub j: StateMatrix,
    pub r: StateMatrix,
    pub b: DMatrix<f64>,
    pub hamiltonian: HamiltonianSpec,
}

impl PHSystem {
    /// Constant-coefficient system with quadratic storage ½ xᵀQx.
    pub fn linear(
        name: &str,
        j: DMatrix<f64>,
        r: DMatrix<f64>,
        q: DMatrix<f64>,
        b: DMatrix<f64>,
    ) -> Result<Self> {
        let sys = PHSystem {
            name: Some(name.to_string()),
            j: j.into(),
            r: r.into(),
            b,
            hamiltonian: HamiltonianSpec::Quadratic(q),
        };
        sys.check_shapes()?;
        Ok(sys)
    }

    pub fn check_shapes(&self) -> Result<()> {
        let n = self.n();
        for (what, (rows, cols)) in [("J", self.j.shape()), ("R", self.r.shape())] {
            if rows != n || cols != n {
                return Err(Error::DimensionMismatch {
                    context: format!("{what} must be {n}x{n}"),
                    expected: n,
                    got: if rows != n { rows } else { cols },
                });
            }
        }
        if self.b.nrows() != n {
            return Err(Error::DimensionMismatch {
                context: "B row count".into(),
                expected: n,
                got: self.b.nrows(),
            });
        }
        if self.b.ncols() == 0 {
            return Err(Error::InvalidProblem {
                reason: "B must have at least one input column".into(),
            });
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.hamiltonian.dim()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn j_at(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.j.eval(x)
    }

    pub fn r_at(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.r.eval(x)
    }

    /// The quadratic storage matrix; stepping and optimal control require it.
    pub fn q(&self) -> Result<&DMatrix<f64>> {
        match &self.hamiltonian {
            HamiltonianSpec::Quadratic(q) => Ok(q),
            HamiltonianSpec::Expression { .. } => Err(Error::NonQuadraticHamiltonian {
                context: "structure pair".into(),
            }),
        }
    }

    pub fn is_constant_structure(&self) -> bool {
        self.j.is_constant() && self.r.is_constant()
    }

    pub fn energy(&self, x: &DVector<f64>) -> Result<f64> {
        self.hamiltonian.value(x)
    }
}

/// Per-sample defects collected while validating a system.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub samples: usize,
    pub max_skew_defect: f64,
    pub max_r_asymmetry: f64,
    pub min_r_eigenvalue: f64,
    pub min_q_eigenvalue: Option<f64>,
}

/// Check skewness of J, symmetry and positive semidefiniteness of R at the
/// given sample states, and positive definiteness of Q. The first violation
/// is returned as an error naming the offending sample.
pub fn validate_system(sys: &PHSystem, samples: &[DVector<f64>]) -> Result<ValidationReport> {
    if samples.is_empty() {
        return Err(Error::InvalidProblem {
            reason: "validation needs at least one sample state".into(),
        });
    }
    sys.check_shapes()?;
    let mut report = ValidationReport {
        samples: samples.len(),
        max_skew_defect: 0.0,
        max_r_asymmetry: 0.0,
        min_r_eigenvalue: f64::INFINITY,
        min_q_eigenvalue: None,
    };
    for x in samples {
        let j = sys.j_at(x)?;
        let defect = (&j + j.transpose()).amax();
        let tol = 1e-12 * (1.0 + j.amax());
        if defect > tol {
            return Err(Error::NonSkewJ {
                sample: x.as_slice().to_vec(),
                defect,
            });
        }
        report.max_skew_defect = report.max_skew_defect.max(defect);

        let r = sys.r_at(x)?;
        let asym = (&r - r.transpose()).amax();
        let rtol = 1e-12 * (1.0 + r.amax());
        if asym > rtol {
            return Err(Error::NonPsdR {
                sample: x.as_slice().to_vec(),
                detail: format!("asymmetry {asym:.3e}"),
            });
        }
        report.max_r_asymmetry = report.max_r_asymmetry.max(asym);

        let sym = (&r + r.transpose()) * 0.5;
        let eigs = sym.symmetric_eigenvalues();
        let min_eig = eigs.min();
        if min_eig < -1e-10 {
            return Err(Error::NonPsdR {
                sample: x.as_slice().to_vec(),
                detail: format!("eigenvalue {min_eig:.3e}"),
            });
        }
        report.min_r_eigenvalue = report.min_r_eigenvalue.min(min_eig);
    }
    if let HamiltonianSpec::Quadratic(q) = &sys.hamiltonian {
        let asym = (q - q.transpose()).amax();
        if asym > 1e-12 * (1.0 + q.amax()) {
            return Err(Error::NonPdQ {
                detail: format!("asymmetry {asym:.3e}"),
            });
        }
        let min_eig = q.symmetric_eigenvalues().min();
        if min_eig <= 0.0 {
            return Err(Error::NonPdQ {
                detail: format!("smallest eigenvalue {min_eig:.3e}"),
            });
        }
        report.min_q_eigenvalue = Some(min_eig);
    } else if matches!(
        &sys.hamiltonian,
        HamiltonianSpec::Expression {
            gradient: Some(_),
            ..
        }
    ) {
        // Analytic gradients must agree with finite differences of the value.
        for x in samples.iter().take(8) {
            let analytic = sys.hamiltonian.gradient(x)?;
            let fd = fd_gradient(&sys.hamiltonian, x)?;
            let err = (&analytic - &fd).amax();
            if err > 1e-5 * (1.0 + analytic.amax()) {
                return Err(Error::InvalidProblem {
                    reason: format!(
                        "analytic Hamiltonian gradient deviates from finite differences by {err:.3e} at {:?}",
                        x.as_slice()
                    ),
                });
            }
        }
    }
    Ok(report)
}

fn fd_gradient(spec: &HamiltonianSpec, x: &DVector<f64>) -> Result<DVector<f64>> {
    let mut g = DVector::zeros(x.len());
    let mut xp = x.clone();
    for i in 0..x.len() {
        let eps = 1e-6 * (1.0 + x[i].abs());
        xp[i] = x[i] + eps;
        let fp = spec.value(&xp)?;
        xp[i] = x[i] - eps;
        let fm = spec.value(&xp)?;
        xp[i] = x[i];
        g[i] = (fp - fm) / (2.0 * eps);
    }
    Ok(g)
}

/// The matrices J₋(x) = I − (h/2)(J−R)Q and J₊(x) = I + (h/2)(J−R)Q,
/// with the LU factorization of J₋ kept for repeated solves.
pub struct StructurePair {
    pub jminus: DMatrix<f64>,
    pub jplus: DMatrix<f64>,
    pub h: f64,
    lu: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl StructurePair {
    /// Solve J₋ z = rhs.
    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.lu
            .solve(rhs)
            .expect("J_- invertibility was checked at construction")
    }

    /// Solve J₋ Z = RHS columnwise.
    pub fn solve_matrix(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        self.lu
            .solve(rhs)
            .expect("J_- invertibility was checked at construction")
    }
}

/// Assemble the structure pair at a state. J₋ is factored once; a pivot
/// at or below 1e-14 in magnitude is reported as singular rather than
/// regularized.
pub fn structure_pair(sys: &PHSystem, x: &DVector<f64>, h: f64) -> Result<StructurePair> {
    let n = sys.n();
    if x.len() != n {
        return Err(Error::DimensionMismatch {
            context: "structure pair state".into(),
            expected: n,
            got: x.len(),
        });
    }
    let q = sys.q()?;
    let d = (sys.j_at(x)? - sys.r_at(x)?) * q;
    let eye = DMatrix::identity(n, n);
    let jminus = &eye - &d * (h / 2.0);
    let jplus = &eye + &d * (h / 2.0);
    let lu = jminus.clone().lu();
    let mut min_pivot = f64::INFINITY;
    for i in 0..n {
        min_pivot = min_pivot.min(lu.u()[(i, i)].abs());
    }
    if min_pivot <= 1e-14 {
        return Err(Error::SingularJminus { pivot: min_pivot });
    }
    Ok(StructurePair {
        jminus,
        jplus,
        h,
        lu,
    })
}

/// Symmetric square root of R(x). Eigenvalues in [−1e-10, 0) are clamped
/// to zero; anything more negative is a genuine violation.
pub fn dissipation_root(sys: &PHSystem, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    let r = sys.r_at(x)?;
    let sym = (&r + r.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut scaled = eig.eigenvectors.clone();
    for (i, lambda) in eig.eigenvalues.iter().enumerate() {
        if *lambda < -1e-10 {
            return Err(Error::NonPsdR {
                sample: x.as_slice().to_vec(),
                detail: format!("eigenvalue {lambda:.3e} in dissipation root"),
            });
        }
        let root = lambda.max(0.0).sqrt();
        scaled.column_mut(i).scale_mut(root);
    }
    Ok(&scaled * eig.eigenvectors.transpose())
}

/// Residual map g(x) = R(x)^{1/2} Q J₋(x)⁻¹ x. Its zero set is the
/// manifold on which the scheme dissipates no energy.
pub fn manifold_residual(sys: &PHSystem, x: &DVector<f64>, h: f64) -> Result<DVector<f64>> {
    let pair = structure_pair(sys, x, h)?;
    let root = dissipation_root(sys, x)?;
    let z = pair.solve(x);
    Ok(&root * (sys.q()? * z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expression;
    use proptest::prelude::*;

    fn oscillator_1d() -> PHSystem {
        PHSystem::linear(
            "osc",
            DMatrix::from_row_slice(1, 1, &[0.0]),
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

    /// Planar rotation with state-dependent damping on the first channel.
    fn nonlinear_2d() -> PHSystem {
        let r11 = parse_expression("0.25*(4*norm2(x) + 1)^2").unwrap();
        let zero = parse_expression("0").unwrap();
        PHSystem {
            name: None,
            j: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]).into(),
            r: StateMatrix::Expressions {
                rows: vec![vec![r11, zero.clone()], vec![zero.clone(), zero]],
                nrows: 2,
                ncols: 2,
            },
            b: DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
            hamiltonian: HamiltonianSpec::Quadratic(DMatrix::from_row_slice(
                2,
                2,
                &[2.0, 0.0, 0.0, 1.0],
            )),
        }
    }

    #[test]
    fn nested_norm_entries_stay_state_dependent() {
        let e = parse_expression("0.25*(4*norm2(x) + 1)^2").unwrap();
        let m = StateMatrix::from_expressions(vec![vec![e]], 2).unwrap();
        assert!(!m.is_constant());
        let truly_constant = StateMatrix::from_expressions(
            vec![vec![parse_expression("1 + 2^3").unwrap()]],
            2,
        )
        .unwrap();
        assert!(truly_constant.is_constant());
    }

    #[test]
    fn structure_pair_scalar() {
        let sys = oscillator_1d();
        let pair = structure_pair(&sys, &DVector::from_row_slice(&[0.0]), 1.0).unwrap();
        assert_eq!(pair.jminus[(0, 0)], 1.5);
        assert_eq!(pair.jplus[(0, 0)], 0.5);
        assert_eq!(pair.solve(&DVector::from_row_slice(&[3.0]))[0], 2.0);
    }

    #[test]
    fn structure_pair_rotation() {
        let sys = rotation_2d();
        let pair = structure_pair(&sys, &DVector::zeros(2), 1.0).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[1.0, -0.5, 0.5, 1.0]);
        assert!((&pair.jminus - &want).amax() < 1e-15);
        let sum = &pair.jminus + &pair.jplus;
        assert!((sum - DMatrix::identity(2, 2) * 2.0).amax() < 1e-15);
    }

    #[test]
    fn singular_jminus_is_reported() {
        // J = 0, R = -? not allowed; instead force singularity via h: with
        // J=0, R=1, Q=1 the pair is 1 + h/2, singular at h = -2.
        let sys = oscillator_1d();
        let err = structure_pair(&sys, &DVector::from_row_slice(&[0.0]), -2.0);
        assert!(matches!(err, Err(Error::SingularJminus { .. })));
    }

    #[test]
    fn dissipation_root_squares_back() {
        let sys = nonlinear_2d();
        let x = DVector::from_row_slice(&[1.0, 0.5]);
        let root = dissipation_root(&sys, &x).unwrap();
        let r = sys.r_at(&x).unwrap();
        assert!(((&root * &root) - r).amax() < 1e-10);
    }

    #[test]
    fn residual_on_the_scalar_system() {
        // g(x) = 1 * 1 * x / 1.5 = 2x/3 at h = 1.
        let sys = oscillator_1d();
        let g = manifold_residual(&sys, &DVector::from_row_slice(&[3.0]), 1.0).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn residual_of_the_nonlinear_system_matches_the_closed_form() {
        // With s = ‖x‖², d = ¼(4s+1)², det J₋ = (16s² + 8s + 7)/4 and
        // g(x) = ((8s+2)/(16s²+8s+7)) · (2x1+x2, 0).
        let sys = nonlinear_2d();
        for x in [
            DVector::from_row_slice(&[1.0, 0.0]),
            DVector::from_row_slice(&[2.0, 1.0]),
            DVector::from_row_slice(&[-0.3, 0.7]),
        ] {
            let s = x.norm_squared();
            let scale = (8.0 * s + 2.0) / (16.0 * s * s + 8.0 * s + 7.0);
            let want0 = scale * (2.0 * x[0] + x[1]);
            let g = manifold_residual(&sys, &x, 1.0).unwrap();
            assert!((g[0] - want0).abs() < 1e-12, "first component at {x:?}");
            assert!(g[1].abs() < 1e-12, "second component at {x:?}");
        }
        // Spot value: x = (1,0) gives 10/31 * 2.
        let g = manifold_residual(&sys, &DVector::from_row_slice(&[1.0, 0.0]), 1.0).unwrap();
        assert!((g[0] - 20.0 / 31.0).abs() < 1e-12);
        // On the zero set 2x1 + x2 = 0 the residual vanishes.
        let g = manifold_residual(&sys, &DVector::from_row_slice(&[1.0, -2.0]), 1.0).unwrap();
        assert!(g.amax() < 1e-12);
    }

    #[test]
    fn validation_rejects_a_skewed_j() {
        let mut sys = oscillator_1d();
        sys.j = DMatrix::from_row_slice(1, 1, &[0.5]).into();
        let err = validate_system(&sys, &[DVector::from_row_slice(&[1.0])]);
        assert!(matches!(err, Err(Error::NonSkewJ { .. })));
    }

    #[test]
    fn validation_rejects_indefinite_r_and_q() {
        let mut sys = oscillator_1d();
        sys.r = DMatrix::from_row_slice(1, 1, &[-0.1]).into();
        assert!(matches!(
            validate_system(&sys, &[DVector::zeros(1)]),
            Err(Error::NonPsdR { .. })
        ));

        let bad_q = PHSystem::linear(
            "bad",
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
            DMatrix::from_row_slice(1, 1, &[-1.0]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
        )
        .unwrap();
        assert!(matches!(
            validate_system(&bad_q, &[DVector::zeros(1)]),
            Err(Error::NonPdQ { .. })
        ));
    }

    #[test]
    fn validation_passes_the_nonlinear_system() {
        let sys = nonlinear_2d();
        let samples: Vec<_> = (0..20)
            .map(|i| {
                let t = i as f64 / 5.0;
                DVector::from_row_slice(&[t.sin() * 2.0, t.cos() * 2.0])
            })
            .collect();
        let report = validate_system(&sys, &samples).unwrap();
        assert_eq!(report.samples, 20);
        assert!(report.min_r_eigenvalue >= 0.0);
        assert_eq!(report.min_q_eigenvalue, Some(1.0));
    }

    proptest! {
        #[test]
        fn pair_sums_to_twice_identity(
            x in prop::array::uniform2(-3.0f64..3.0),
            h in 0.05f64..2.0,
        ) {
            let sys = nonlinear_2d();
            let x = DVector::from_row_slice(&x);
            let pair = structure_pair(&sys, &x, h).unwrap();
            let sum = &pair.jminus + &pair.jplus;
            prop_assert!((sum - DMatrix::identity(2, 2) * 2.0).amax() <= 1e-12);
        }

        #[test]
        fn solve_multiplies_back(
            x in prop::array::uniform2(-3.0f64..3.0),
            rhs in prop::array::uniform2(-5.0f64..5.0),
            h in 0.05f64..2.0,
        ) {
            let sys = nonlinear_2d();
            let x = DVector::from_row_slice(&x);
            let rhs = DVector::from_row_slice(&rhs);
            let pair = structure_pair(&sys, &x, h).unwrap();
            let z = pair.solve(&rhs);
            prop_assert!((&pair.jminus * z - rhs).amax() <= 1e-10);
        }
    }
}
