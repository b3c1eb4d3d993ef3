//! Problem files: a JSON schema for systems, boundary-transfer data, and
//! diagnostics, resolved against the built-in registry.
//!
//! A file either names a registry entry or spells out a system inline;
//! either way the ocp and diagnostics sections can override the defaults
//! field by field. Loading validates everything it constructs: matrix
//! shapes, structure properties at deterministically sampled states, and
//! the mutual consistency of boundary data. Schema problems are reported
//! with a path into the tree (`ocp.x0`, `system.B`), so a misplaced large
//! file still produces a one-line diagnostic.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dissipativity::ManifoldSpec;
use crate::error::{Error, Result};
use crate::expr::{parse_expression, Expression};
use crate::hamiltonian::HamiltonianSpec;
use crate::ocp::{OCProblem, SolverOptions};
use crate::registry;
use crate::stepper::SchemeKind;
use crate::system::{validate_system, PHSystem, StateMatrix};

/// One matrix entry in a problem file: a number, or an expression in
/// x1..xn and norm2(x).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixEntry {
    Number(f64),
    Expression(String),
}

/// Row-major matrix with possibly state-dependent entries.
pub type MatrixSpec = Vec<Vec<MatrixEntry>>;

/// Storage function given as expressions instead of the quadratic form.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HamiltonianSection {
    pub value: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gradient: Option<Vec<String>>,
}

/// The `system` section: a registry name, or inline matrices.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub registry: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, rename = "J", skip_serializing_if = "Option::is_none")]
    pub j: Option<MatrixSpec>,
    #[serde(default, rename = "R", skip_serializing_if = "Option::is_none")]
    pub r: Option<MatrixSpec>,
    #[serde(default, rename = "Q", skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<Vec<f64>>>,
    #[serde(default, rename = "B", skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hamiltonian: Option<HamiltonianSection>,
}

/// Input box: one half-width for every channel, or explicit per-channel
/// bounds.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BoundsSpec {
    Symmetric(f64),
    Box { lower: Vec<f64>, upper: Vec<f64> },
}

/// The `ocp` section; every field optional, falling back to registry
/// defaults (registry systems) or being required (inline systems).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcpSection {
    #[serde(default, rename = "N", skip_serializing_if = "Option::is_none")]
    pub n_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default, rename = "xN", skip_serializing_if = "Option::is_none")]
    pub x_target: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundsSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<SchemeKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverOptions>,
}

/// How the dissipation-free set is described in a problem file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ManifoldSection {
    /// `"residual_zero_set"`.
    Kind(String),
    /// Explicit kernel rows; the manifold is their null space.
    KernelRows { kernel_rows: Vec<Vec<f64>> },
}

/// The `diagnostics` section.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifold: Option<ManifoldSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_hat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub half_width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizons: Option<Vec<usize>>,
    /// A previously written trajectory to audit instead of solving.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory_csv: Option<String>,
}

/// The `output` section.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub json: Option<bool>,
}

/// A problem file as written on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub system: SystemSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ocp: Option<OcpSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<DiagnosticsSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputSection>,
}

/// Everything a run needs, resolved and validated.
#[derive(Debug, Clone)]
pub struct LoadedProblem {
    pub problem: OCProblem,
    pub manifold: ManifoldSpec,
    pub horizons: Vec<usize>,
    /// Sampling budget for constant estimation.
    pub samples: usize,
    /// Half-width of the sampling box for constant estimation.
    pub half_width: f64,
    pub trajectory_csv: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub write_csv: bool,
    pub write_json: bool,
}

fn schema(path: &str, message: impl Into<String>) -> Error {
    Error::SchemaError {
        path: path.to_string(),
        message: message.into(),
    }
}

fn numeric_matrix(path: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map(|r| r.len()).unwrap_or(0);
    if nrows == 0 || ncols == 0 {
        return Err(schema(path, "matrix must be non-empty"));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return Err(schema(
                &format!("{path}[{i}]"),
                format!("row has {} entries, expected {ncols}", row.len()),
            ));
        }
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn state_matrix(path: &str, spec: &MatrixSpec, n: usize) -> Result<StateMatrix> {
    if spec.is_empty() {
        return Err(schema(path, "matrix must be non-empty"));
    }
    let mut rows = Vec::with_capacity(spec.len());
    for (i, row) in spec.iter().enumerate() {
        let mut out = Vec::with_capacity(row.len());
        for (j, entry) in row.iter().enumerate() {
            let expr = match entry {
                MatrixEntry::Number(v) => Expression::Number(*v),
                MatrixEntry::Expression(text) => parse_expression(text).map_err(|e| {
                    schema(&format!("{path}[{i}][{j}]"), e.to_string())
                })?,
            };
            out.push(expr);
        }
        rows.push(out);
    }
    StateMatrix::from_expressions(rows, n)
        .map_err(|e| schema(path, e.to_string()))
}

fn vector(path: &str, values: &[f64], n: usize) -> Result<DVector<f64>> {
    if values.len() != n {
        return Err(schema(
            path,
            format!("expected {n} entries, got {}", values.len()),
        ));
    }
    Ok(DVector::from_row_slice(values))
}

fn build_inline_system(section: &SystemSection) -> Result<PHSystem> {
    let q_rows = section
        .q
        .as_ref()
        .ok_or_else(|| schema("system.Q", "inline systems must give Q"))?;
    let q = numeric_matrix("system.Q", q_rows)?;
    let n = q.nrows();
    let b_rows = section
        .b
        .as_ref()
        .ok_or_else(|| schema("system.B", "inline systems must give B"))?;
    let b = numeric_matrix("system.B", b_rows)?;
    if b.nrows() != n {
        return Err(schema(
            "system.B",
            format!("B has {} rows but Q is {n}x{n}", b.nrows()),
        ));
    }
    let j_spec = section
        .j
        .as_ref()
        .ok_or_else(|| schema("system.J", "inline systems must give J"))?;
    let r_spec = section
        .r
        .as_ref()
        .ok_or_else(|| schema("system.R", "inline systems must give R"))?;
    let j = state_matrix("system.J", j_spec, n)?;
    let r = state_matrix("system.R", r_spec, n)?;
    let hamiltonian = match &section.hamiltonian {
        None => HamiltonianSpec::Quadratic(q),
        Some(section) => {
            let value = parse_expression(&section.value)
                .map_err(|e| schema("system.hamiltonian.value", e.to_string()))?;
            let gradient = match &section.gradient {
                None => None,
                Some(entries) => {
                    if entries.len() != n {
                        return Err(schema(
                            "system.hamiltonian.gradient",
                            format!("expected {n} entries, got {}", entries.len()),
                        ));
                    }
                    let mut parsed = Vec::with_capacity(n);
                    for (i, text) in entries.iter().enumerate() {
                        parsed.push(parse_expression(text).map_err(|e| {
                            schema(&format!("system.hamiltonian.gradient[{i}]"), e.to_string())
                        })?);
                    }
                    Some(parsed)
                }
            };
            HamiltonianSpec::Expression {
                value,
                gradient,
                dim: n,
            }
        }
    };
    let sys = PHSystem {
        name: section.name.clone(),
        j,
        r,
        b,
        hamiltonian,
    };
    sys.check_shapes()?;
    Ok(sys)
}

fn resolve_bounds(path: &str, spec: &BoundsSpec, m: usize) -> Result<(DVector<f64>, DVector<f64>)> {
    match spec {
        BoundsSpec::Symmetric(w) => {
            if !w.is_finite() || *w <= 0.0 {
                return Err(schema(path, "half-width must be positive and finite"));
            }
            Ok((DVector::from_element(m, -w), DVector::from_element(m, *w)))
        }
        BoundsSpec::Box { lower, upper } => Ok((
            vector(&format!("{path}.lower"), lower, m)?,
            vector(&format!("{path}.upper"), upper, m)?,
        )),
    }
}

fn validation_states(n: usize, x0: &DVector<f64>, x_target: &DVector<f64>) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5ca1e);
    let mut states: Vec<DVector<f64>> =
        vec![DVector::zeros(n), x0.clone(), x_target.clone()];
    for _ in 0..8 {
        states.push(DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0)));
    }
    states
}

/// Resolve a parsed problem file into validated objects.
pub fn resolve_problem(file: &ProblemFile) -> Result<LoadedProblem> {
    let inline_given = file.system.j.is_some()
        || file.system.r.is_some()
        || file.system.q.is_some()
        || file.system.b.is_some()
        || file.system.hamiltonian.is_some();
    let entry = match (&file.system.registry, inline_given) {
        (Some(_), true) => {
            return Err(schema(
                "system",
                "give either a registry name or inline matrices, not both",
            ));
        }
        (Some(name), false) => Some(registry::builtin(name)?),
        (None, true) => None,
        (None, false) => {
            return Err(schema(
                "system",
                "a registry name or inline matrices are required",
            ));
        }
    };
    let ocp = file.ocp.clone().unwrap_or_default();
    let diagnostics = file.diagnostics.clone().unwrap_or_default();
    let output = file.output.clone().unwrap_or_default();

    let (system, defaults) = match entry {
        Some(e) => (e.system.clone(), Some(e)),
        None => (build_inline_system(&file.system)?, None),
    };
    let n = system.n();
    let m = system.m();

    let require = |path: &str| schema(path, "required when the system is inline");
    let n_steps = match (ocp.n_steps, &defaults) {
        (Some(v), _) => v,
        (None, Some(e)) => e.n_steps,
        (None, None) => return Err(require("ocp.N")),
    };
    let h = match (ocp.h, &defaults) {
        (Some(v), _) => v,
        (None, Some(e)) => e.h,
        (None, None) => return Err(require("ocp.h")),
    };
    if !(h.is_finite() && h > 0.0) {
        return Err(schema("ocp.h", "step size must be positive and finite"));
    }
    let x0 = match (&ocp.x0, &defaults) {
        (Some(v), _) => vector("ocp.x0", v, n)?,
        (None, Some(e)) => e.x0.clone(),
        (None, None) => return Err(require("ocp.x0")),
    };
    let x_target = match (&ocp.x_target, &defaults) {
        (Some(v), _) => vector("ocp.xN", v, n)?,
        (None, Some(e)) => e.x_target.clone(),
        (None, None) => return Err(require("ocp.xN")),
    };
    let (u_min, u_max) = match (&ocp.bounds, &defaults) {
        (Some(spec), _) => resolve_bounds("ocp.bounds", spec, m)?,
        (None, Some(e)) => (e.u_min.clone(), e.u_max.clone()),
        (None, None) => (DVector::from_element(m, -50.0), DVector::from_element(m, 50.0)),
    };
    let scheme = match (ocp.scheme, &defaults) {
        (Some(s), _) => s,
        (None, Some(e)) => e.scheme,
        (None, None) => {
            if m == 1 {
                SchemeKind::Ddr
            } else {
                SchemeKind::Midpoint
            }
        }
    };
    let options = ocp.solver.clone().unwrap_or_default();

    validate_system(&system, &validation_states(n, &x0, &x_target))?;

    let problem = OCProblem {
        system: system.clone(),
        scheme,
        n_steps,
        h,
        x0,
        x_target,
        u_min,
        u_max,
        options,
    };
    problem.validate()?;

    let manifold = match &diagnostics.manifold {
        Some(ManifoldSection::Kind(kind)) => {
            if kind != "residual_zero_set" {
                return Err(schema(
                    "diagnostics.manifold",
                    format!("unknown manifold kind `{kind}`"),
                ));
            }
            ManifoldSpec::residual_zero_set(system, h)
        }
        Some(ManifoldSection::KernelRows { kernel_rows }) => {
            let rows = numeric_matrix("diagnostics.manifold.kernel_rows", kernel_rows)?;
            if rows.ncols() != n {
                return Err(schema(
                    "diagnostics.manifold.kernel_rows",
                    format!("rows have {} columns but the state has dimension {n}", rows.ncols()),
                ));
            }
            ManifoldSpec::linear(system, h, rows)
        }
        None => match &defaults {
            Some(e) => e.manifold_spec(h),
            None => ManifoldSpec::residual_zero_set(system, h),
        },
    };
    let manifold = match diagnostics.c_hat {
        Some(c) => {
            if !(c.is_finite() && c >= 0.0) {
                return Err(schema("diagnostics.c_hat", "must be nonnegative and finite"));
            }
            manifold.with_constant(c)
        }
        None => manifold,
    };
    let horizons = diagnostics
        .horizons
        .clone()
        .or_else(|| defaults.as_ref().map(|e| e.horizons.clone()))
        .unwrap_or_else(|| vec![20, 40, 80]);
    if horizons.is_empty() {
        return Err(schema("diagnostics.horizons", "must list at least one horizon"));
    }

    Ok(LoadedProblem {
        problem,
        manifold,
        horizons,
        samples: diagnostics.samples.unwrap_or(200),
        half_width: diagnostics.half_width.unwrap_or(2.0),
        trajectory_csv: diagnostics.trajectory_csv.as_ref().map(PathBuf::from),
        output_dir: output.dir.as_ref().map(PathBuf::from),
        write_csv: output.csv.unwrap_or(true),
        write_json: output.json.unwrap_or(true),
    })
}

/// Parse problem-file text. Syntax errors are reported with their line
/// and column as the path.
pub fn parse_problem(text: &str) -> Result<ProblemFile> {
    serde_json::from_str(text).map_err(|e| {
        schema(
            &format!("line {} column {}", e.line(), e.column()),
            e.to_string(),
        )
    })
}

/// Load and resolve a problem file from disk.
pub fn load_problem(path: &Path) -> Result<LoadedProblem> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    resolve_problem(&parse_problem(&text)?)
}

/// Serialize a problem file with stable key order.
pub fn save_problem(path: &Path, file: &ProblemFile) -> Result<()> {
    let mut text = serde_json::to_string_pretty(file)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

/// A problem file that runs a registry entry unmodified.
pub fn registry_file(name: &str) -> ProblemFile {
    ProblemFile {
        system: SystemSection {
            registry: Some(name.to_string()),
            ..SystemSection::default()
        },
        ocp: None,
        diagnostics: None,
        output: None,
    }
}

/// Resolve `--problem` arguments: a path to a JSON file, or a registry
/// name.
pub fn load_problem_arg(arg: &str) -> Result<LoadedProblem> {
    let path = Path::new(arg);
    if path.is_file() {
        return load_problem(path);
    }
    if registry::NAMES.contains(&arg) {
        return resolve_problem(&registry_file(arg));
    }
    if arg.ends_with(".json") || arg.contains(std::path::MAIN_SEPARATOR) {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{arg}: no such problem file"),
        )));
    }
    Err(Error::UnknownSystem {
        name: arg.to_string(),
        available: registry::NAMES.join(", "),
    })
}

/// Stable textual summary of solver-relevant inputs, hashed into run
/// manifests.
pub fn describe_overrides(pairs: &[(&str, Option<String>)]) -> BTreeMap<String, String> {
    pairs
        .iter()
        .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_reference_resolves_with_overrides() {
        let text = r#"{
            "system": {"registry": "example2"},
            "ocp": {"N": 12, "scheme": "midpoint"}
        }"#;
        let loaded = resolve_problem(&parse_problem(text).unwrap()).unwrap();
        assert_eq!(loaded.problem.n_steps, 12);
        assert_eq!(loaded.problem.scheme, SchemeKind::Midpoint);
        assert_eq!(loaded.problem.x0.as_slice(), &[2.0, 1.0]);
        assert_eq!(loaded.horizons, vec![20, 40, 80]);
    }

    #[test]
    fn inline_systems_require_boundary_data() {
        let text = r#"{
            "system": {
                "J": [[0, 1], [-1, 0]],
                "R": [[0.5, 0], [0, 0]],
                "Q": [[1, 0], [0, 2]],
                "B": [[0], [1]]
            },
            "ocp": {"N": 10, "h": 0.5, "x0": [1, 0]}
        }"#;
        let err = resolve_problem(&parse_problem(text).unwrap()).unwrap_err();
        match err {
            Error::SchemaError { path, .. } => assert_eq!(path, "ocp.xN"),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn expression_entries_become_state_dependent_matrices() {
        let text = r#"{
            "system": {
                "J": [[0, 1], [-1, 0]],
                "R": [["0.25*(4*norm2(x) + 1)^2", 0], [0, 0]],
                "Q": [[2, 0], [0, 1]],
                "B": [[1], [0]]
            },
            "ocp": {"N": 5, "h": 1.0, "x0": [2, 1], "xN": [1, 1]}
        }"#;
        let loaded = resolve_problem(&parse_problem(text).unwrap()).unwrap();
        assert!(!loaded.problem.system.is_constant_structure());
        let r = loaded
            .problem
            .system
            .r_at(&DVector::from_row_slice(&[1.0, 0.0]))
            .unwrap();
        assert!((r[(0, 0)] - 6.25).abs() < 1e-12);
    }

    #[test]
    fn wrong_shapes_name_the_offending_path() {
        let text = r#"{
            "system": {
                "J": [[0, 1], [-1, 0]],
                "R": [[0, 0], [0, 0]],
                "Q": [[1, 0], [0, 1]],
                "B": [[1]]
            },
            "ocp": {"N": 5, "h": 1.0, "x0": [1, 0], "xN": [0, 0]}
        }"#;
        let err = resolve_problem(&parse_problem(text).unwrap()).unwrap_err();
        match err {
            Error::SchemaError { path, .. } => assert_eq!(path, "system.B"),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn registry_and_inline_sections_exclude_each_other() {
        let text = r#"{
            "system": {"registry": "example2", "Q": [[1]]}
        }"#;
        let err = resolve_problem(&parse_problem(text).unwrap()).unwrap_err();
        assert!(matches!(err, Error::SchemaError { .. }));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = r#"{"system": {"registry": "example2"}, "extra": 1}"#;
        assert!(parse_problem(text).is_err());
    }

    #[test]
    fn syntax_errors_carry_the_location() {
        let err = parse_problem("{\n  \"system\": }").unwrap_err();
        match err {
            Error::SchemaError { path, .. } => assert!(path.contains("line 2"), "{path}"),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn save_then_load_preserves_the_semantics() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("problem.json");
        let text = r#"{
            "system": {
                "name": "roundtrip",
                "J": [[0, 1], [-1, 0]],
                "R": [[0.5, 0], [0, 0]],
                "Q": [[1, 0], [0, 2]],
                "B": [[0], [1]]
            },
            "ocp": {"N": 10, "h": 0.5, "x0": [1, 0], "xN": [0, 0], "bounds": 4.0},
            "diagnostics": {"horizons": [10, 20]}
        }"#;
        let file = parse_problem(text).unwrap();
        save_problem(&path, &file).unwrap();
        let reloaded = load_problem(&path).unwrap();
        let direct = resolve_problem(&file).unwrap();
        assert_eq!(reloaded.problem.n_steps, direct.problem.n_steps);
        assert_eq!(reloaded.problem.h, direct.problem.h);
        assert_eq!(reloaded.problem.u_max, direct.problem.u_max);
        assert_eq!(reloaded.horizons, direct.horizons);
        let x = DVector::from_row_slice(&[0.3, -0.8]);
        assert_eq!(
            reloaded.problem.system.r_at(&x).unwrap(),
            direct.problem.system.r_at(&x).unwrap()
        );
        // Saving the reloadable form again produces identical bytes.
        let again = dir.path().join("again.json");
        save_problem(&again, &file).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&again).unwrap()
        );
    }

    #[test]
    fn problem_arguments_resolve_names_and_reject_typos() {
        assert!(load_problem_arg("example1_standin").is_ok());
        assert!(matches!(
            load_problem_arg("exmaple1"),
            Err(Error::UnknownSystem { .. })
        ));
        assert!(matches!(
            load_problem_arg("missing/file.json"),
            Err(Error::Io(_))
        ));
    }
}
