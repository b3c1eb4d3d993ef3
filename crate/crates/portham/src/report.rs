//! Trajectory CSV files, JSON report summaries, and run manifests.
//!
//! Every writer here is byte-deterministic: floats are printed with 17
//! significant digits (full round-trip precision for f64), maps are kept
//! in sorted order, and nothing records wall-clock time. Identical inputs
//! therefore produce identical files, which the run manifests turn into
//! a checkable reproducibility statement via content hashes.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ocp::{OCPSolution, SolveStatus};
use crate::stepper::{SchemeKind, Trajectory};

fn io_at(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(
        e.kind(),
        format!("{}: {e}", path.display()),
    ))
}

/// Full-precision decimal text for one float; parses back to the same
/// bit pattern.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// CSV header for a trajectory with `n` states and `m` input channels;
/// singleton channels use plain `u` and `Y` column names.
fn csv_header(n: usize, m: usize) -> String {
    let mut cols = vec!["k".to_string()];
    for i in 1..=n {
        cols.push(format!("x_{i}"));
    }
    if m == 1 {
        cols.push("u".into());
        cols.push("Y".into());
    } else {
        for j in 1..=m {
            cols.push(format!("u_{j}"));
        }
        for j in 1..=m {
            cols.push(format!("Y_{j}"));
        }
    }
    cols.push("H".into());
    cols.push("dist_to_manifold".into());
    cols.push("stage_cost".into());
    cols.push("energy_residual".into());
    cols.join(",")
}

/// Write a trajectory as CSV, one row per time index including the
/// terminal one; step-indexed columns (input, output, stage cost,
/// energy residual) are empty on the terminal row. `distances` fills the
/// dist_to_manifold column when given and must then cover every state.
pub fn write_trajectory_csv(
    path: &Path,
    traj: &Trajectory,
    distances: Option<&[f64]>,
) -> Result<()> {
    let steps = traj.len();
    let n = traj.states[0].len();
    let m = traj.inputs.first().map(|u| u.len()).unwrap_or(1);
    if let Some(d) = distances {
        if d.len() != steps + 1 {
            return Err(Error::DimensionMismatch {
                context: "distance column".into(),
                expected: steps + 1,
                got: d.len(),
            });
        }
    }
    let finite = traj.states.iter().all(|x| x.iter().all(|v| v.is_finite()))
        && traj.energies.iter().all(|v| v.is_finite());
    if !finite {
        return Err(Error::InvalidProblem {
            reason: "trajectory contains non-finite values".into(),
        });
    }
    let mut out = String::new();
    out.push_str(&csv_header(n, m));
    out.push('\n');
    for k in 0..=steps {
        let mut cols = vec![k.to_string()];
        for v in traj.states[k].iter() {
            cols.push(format_float(*v));
        }
        if k < steps {
            for v in traj.inputs[k].iter() {
                cols.push(format_float(*v));
            }
            for v in traj.outputs[k].iter() {
                cols.push(format_float(*v));
            }
        } else {
            for _ in 0..2 * m {
                cols.push(String::new());
            }
        }
        cols.push(format_float(traj.energies[k]));
        cols.push(match distances {
            Some(d) => format_float(d[k]),
            None => String::new(),
        });
        if k < steps {
            cols.push(format_float(traj.supplied[k]));
            let residual = (traj.energies[k + 1] - traj.energies[k])
                - (traj.supplied[k] - traj.dissipated[k]);
            cols.push(format_float(residual));
        } else {
            cols.push(String::new());
            cols.push(String::new());
        }
        out.push_str(&cols.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| io_at(path, e))
}

/// A trajectory read back from CSV. Distances may be absent per row;
/// everything else is exact thanks to full-precision formatting.
#[derive(Debug, Clone)]
pub struct CsvTrajectory {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub outputs: Vec<DVector<f64>>,
    pub energies: Vec<f64>,
    pub distances: Vec<Option<f64>>,
    pub stage_costs: Vec<f64>,
    pub energy_residuals: Vec<f64>,
}

impl CsvTrajectory {
    /// Rebuild a stepper trajectory. The dissipated column is not stored
    /// in the file; it is recovered from the exact per-step balance
    /// ΔH = supplied − dissipated.
    pub fn into_trajectory(self, scheme: SchemeKind, h: f64) -> Trajectory {
        let dissipated = (0..self.inputs.len())
            .map(|k| self.stage_costs[k] - (self.energies[k + 1] - self.energies[k]))
            .collect();
        Trajectory {
            states: self.states,
            inputs: self.inputs,
            outputs: self.outputs,
            energies: self.energies,
            supplied: self.stage_costs,
            dissipated,
            scheme,
            h,
        }
    }
}

fn parse_field(path: &Path, row: usize, name: &str, text: &str) -> Result<f64> {
    text.parse::<f64>().map_err(|_| Error::SchemaError {
        path: format!("{}: row {row}, column {name}", path.display()),
        message: format!("`{text}` is not a number"),
    })
}

/// Read a trajectory CSV written by `write_trajectory_csv`.
pub fn read_trajectory_csv(path: &Path) -> Result<CsvTrajectory> {
    let text = std::fs::read_to_string(path).map_err(|e| io_at(path, e))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::SchemaError {
        path: path.display().to_string(),
        message: "empty file".into(),
    })?;
    let cols: Vec<&str> = header.split(',').collect();
    let n = cols.iter().filter(|c| c.starts_with("x_")).count();
    let m = cols
        .iter()
        .filter(|c| **c == "u" || c.starts_with("u_"))
        .count();
    if n == 0 || m == 0 || cols != csv_header(n, m).split(',').collect::<Vec<_>>() {
        return Err(Error::SchemaError {
            path: path.display().to_string(),
            message: format!("unrecognized header `{header}`"),
        });
    }
    let mut traj = CsvTrajectory {
        states: Vec::new(),
        inputs: Vec::new(),
        outputs: Vec::new(),
        energies: Vec::new(),
        distances: Vec::new(),
        stage_costs: Vec::new(),
        energy_residuals: Vec::new(),
    };
    for (row, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(Error::SchemaError {
                path: format!("{}: row {row}", path.display()),
                message: format!("expected {} fields, got {}", cols.len(), fields.len()),
            });
        }
        let k: usize = fields[0].parse().map_err(|_| Error::SchemaError {
            path: format!("{}: row {row}, column k", path.display()),
            message: format!("`{}` is not an index", fields[0]),
        })?;
        if k != row {
            return Err(Error::SchemaError {
                path: format!("{}: row {row}", path.display()),
                message: format!("indices out of order (found k={k})"),
            });
        }
        let mut at = 1;
        let mut state = DVector::zeros(n);
        for i in 0..n {
            state[i] = parse_field(path, row, &format!("x_{}", i + 1), fields[at + i])?;
        }
        at += n;
        traj.states.push(state);
        let terminal = fields[at].is_empty();
        if !terminal {
            let mut u = DVector::zeros(m);
            let mut y = DVector::zeros(m);
            for j in 0..m {
                u[j] = parse_field(path, row, "u", fields[at + j])?;
                y[j] = parse_field(path, row, "Y", fields[at + m + j])?;
            }
            traj.inputs.push(u);
            traj.outputs.push(y);
        }
        at += 2 * m;
        traj.energies
            .push(parse_field(path, row, "H", fields[at])?);
        traj.distances.push(if fields[at + 1].is_empty() {
            None
        } else {
            Some(parse_field(path, row, "dist_to_manifold", fields[at + 1])?)
        });
        if !terminal {
            traj.stage_costs
                .push(parse_field(path, row, "stage_cost", fields[at + 2])?);
            traj.energy_residuals
                .push(parse_field(path, row, "energy_residual", fields[at + 3])?);
        }
    }
    if traj.states.len() != traj.inputs.len() + 1 {
        return Err(Error::SchemaError {
            path: path.display().to_string(),
            message: "the terminal row is missing or misplaced".into(),
        });
    }
    Ok(traj)
}

/// Serialize any report with stable key order and a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, report: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io_at(path, e))
}

/// Summary of one optimal-control solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionSummary {
    pub scheme: SchemeKind,
    pub h: f64,
    pub n_steps: usize,
    pub status: SolveStatus,
    pub cost: f64,
    pub terminal_defect: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kkt_residual: Option<f64>,
    pub max_energy_residual: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sum_sq_distance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mid_third_max_distance: Option<f64>,
}

impl SolutionSummary {
    pub fn new(sol: &OCPSolution) -> Self {
        SolutionSummary {
            scheme: sol.trajectory.scheme,
            h: sol.trajectory.h,
            n_steps: sol.trajectory.len(),
            status: sol.status,
            cost: sol.cost,
            terminal_defect: sol.terminal_defect,
            kkt_residual: sol.kkt_residual,
            max_energy_residual: sol.trajectory.max_energy_residual(),
            sum_sq_distance: None,
            mid_third_max_distance: None,
        }
    }
}

/// One steady state in a JSON report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SteadyStateRow {
    pub x_bar: Vec<f64>,
    pub u_bar: Vec<f64>,
    pub cost: f64,
    pub residual: f64,
    pub zero_cost: bool,
    pub membership_gap: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SteadySummary {
    pub states: Vec<SteadyStateRow>,
    pub failures: Vec<String>,
}

impl SteadySummary {
    pub fn new(report: &crate::ocp::SteadySolveReport) -> Self {
        SteadySummary {
            states: report
                .states
                .iter()
                .map(|s| SteadyStateRow {
                    x_bar: s.x_bar.iter().copied().collect(),
                    u_bar: s.u_bar.iter().copied().collect(),
                    cost: s.cost,
                    residual: s.residual,
                    zero_cost: s.zero_cost,
                    membership_gap: s.membership_gap,
                })
                .collect(),
            failures: report.failures.clone(),
        }
    }
}

/// One horizon of a turnpike scan in a JSON report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanRowSummary {
    pub horizon: usize,
    pub status: SolveStatus,
    pub cost: f64,
    pub terminal_defect: f64,
    pub sum_sq_distance: f64,
    pub mid_third_max_distance: f64,
    pub max_state_norm: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanSummary {
    pub horizons: Vec<ScanRowSummary>,
    pub failures: Vec<String>,
}

impl ScanSummary {
    pub fn new(report: &crate::dissipativity::ScanReport) -> Self {
        ScanSummary {
            horizons: report
                .rows
                .iter()
                .map(|r| ScanRowSummary {
                    horizon: r.horizon,
                    status: r.status,
                    cost: r.cost,
                    terminal_defect: r.terminal_defect,
                    sum_sq_distance: r.sum_sq_distance,
                    mid_third_max_distance: r.mid_third_max_distance,
                    max_state_norm: r.max_state_norm,
                })
                .collect(),
            failures: report.failures.clone(),
        }
    }
}

/// Dissipation-inequality audit of a trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckSummary {
    pub satisfied: bool,
    pub min_slack: f64,
    pub c_hat: f64,
    pub slacks: Vec<f64>,
    pub distances: Vec<f64>,
}

/// The one-step construction violating the dissipation inequality.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CounterexampleSummary {
    /// "violated" or "satisfied".
    pub verdict: String,
    /// Step index at which the slack is evaluated.
    pub step: usize,
    pub cost: f64,
    pub energy_change: f64,
    pub distance: f64,
    pub alpha_value: f64,
    pub slack: f64,
    pub c_hat: f64,
    pub h: f64,
}

impl CounterexampleSummary {
    pub fn new(report: &crate::dissipativity::CounterexampleReport) -> Self {
        CounterexampleSummary {
            verdict: if report.violated {
                "violated".into()
            } else {
                "satisfied".into()
            },
            step: 0,
            cost: report.cost,
            energy_change: report.energy_change,
            distance: report.distance,
            alpha_value: report.alpha_value,
            slack: report.slack,
            c_hat: report.spec.c_hat.unwrap_or(1.0),
            h: report.spec.h,
        }
    }
}

/// Lowercase hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Reproducibility record written next to every run's outputs. Contains
/// no timestamps, so identical runs produce identical manifests.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub package_version: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub problem: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub problem_sha256: Option<String>,
    pub seed: u64,
    pub overrides: BTreeMap<String, String>,
    /// Output file name → SHA-256 of its bytes.
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64) -> Self {
        RunManifest {
            command: command.to_string(),
            package_version: env!("CARGO_PKG_VERSION").to_string(),
            problem: None,
            problem_sha256: None,
            seed,
            overrides: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    /// Record an output file by hashing its current content.
    pub fn record_output(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).map_err(|e| io_at(path, e))?;
        let name = path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        self.outputs.insert(name, sha256_hex(&bytes));
        Ok(())
    }

    /// Write the manifest as `manifest.json` in `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join("manifest.json"), self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stepper::simulate;
    use crate::system::PHSystem;
    use nalgebra::DMatrix;

    fn short_run() -> Trajectory {
        let sys = PHSystem::linear(
            "osc",
            DMatrix::zeros(1, 1),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
        )
        .unwrap();
        let inputs = vec![
            DVector::from_row_slice(&[0.25]),
            DVector::from_row_slice(&[-1.5]),
            DVector::from_row_slice(&[0.0]),
        ];
        simulate(
            &sys,
            &DVector::from_row_slice(&[1.0]),
            &inputs,
            SchemeKind::Ddr,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.csv");
        let traj = short_run();
        let dists: Vec<f64> = traj.states.iter().map(|x| x[0].abs()).collect();
        write_trajectory_csv(&path, &traj, Some(&dists)).unwrap();
        let back = read_trajectory_csv(&path).unwrap();
        assert_eq!(back.states.len(), 4);
        for k in 0..4 {
            assert_eq!(back.states[k][0], traj.states[k][0]);
            assert_eq!(back.energies[k], traj.energies[k]);
            assert_eq!(back.distances[k], Some(dists[k]));
        }
        for k in 0..3 {
            assert_eq!(back.inputs[k][0], traj.inputs[k][0]);
            assert_eq!(back.outputs[k][0], traj.outputs[k][0]);
            assert_eq!(back.stage_costs[k], traj.supplied[k]);
        }
        let rebuilt = back.into_trajectory(SchemeKind::Ddr, 1.0);
        for k in 0..3 {
            assert!((rebuilt.dissipated[k] - traj.dissipated[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn writing_twice_gives_identical_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        let traj = short_run();
        write_trajectory_csv(&a, &traj, None).unwrap();
        write_trajectory_csv(&b, &traj, None).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn zero_step_trajectories_are_two_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("point.csv");
        let traj = Trajectory {
            states: vec![DVector::from_row_slice(&[1.0, 2.0])],
            inputs: vec![],
            outputs: vec![],
            energies: vec![2.5],
            supplied: vec![],
            dissipated: vec![],
            scheme: SchemeKind::Midpoint,
            h: 1.0,
        };
        write_trajectory_csv(&path, &traj, None).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        let back = read_trajectory_csv(&path).unwrap();
        assert_eq!(back.states.len(), 1);
        assert!(back.inputs.is_empty());
    }

    #[test]
    fn float_formatting_survives_parsing() {
        for v in [
            1.0,
            -0.1,
            std::f64::consts::PI,
            1.0 / 3.0,
            6.02e23,
            -4.9e-324,
        ] {
            let text = format_float(v);
            assert!(!text.contains(','));
            assert_eq!(text.parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
    }

    #[test]
    fn manifests_hash_their_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data.csv");
        std::fs::write(&data, "k\n0\n").unwrap();
        let mut manifest = RunManifest::new("simulate", 0);
        manifest.record_output(&data).unwrap();
        manifest.write(dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("manifest.json")).unwrap();
        assert!(text.contains("data.csv"));
        assert!(!text.to_lowercase().contains("time"));
        let again: RunManifest = serde_json::from_str(&text).unwrap();
        assert_eq!(again.outputs["data.csv"], sha256_hex(b"k\n0\n"));
    }

    #[test]
    fn json_reports_have_stable_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.json");
        let b = dir.path().join("b.json");
        let summary = ScanSummary {
            horizons: vec![],
            failures: vec![],
        };
        write_json(&a, &summary).unwrap();
        write_json(&b, &summary).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        let text = std::fs::read_to_string(&a).unwrap();
        assert!(text.contains("\"horizons\": []"));
    }
}
