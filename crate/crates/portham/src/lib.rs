//! Discrete-time port-Hamiltonian systems: structure-preserving stepping,
//! energy-minimal optimal control, and dissipativity diagnostics.
//!
//! The crate revolves around three layers:
//!
//! * [`system`] and [`hamiltonian`] hold the model data: the structure
//!   maps J(x) and R(x), the input matrix B, the storage function H, and
//!   the derived objects J₋/J₊, R^{1/2}, and the residual map g whose zero
//!   set is the energy-neutral manifold.
//! * [`stepper`] advances trajectories under two discretizations, the
//!   implicit midpoint rule and a two-stage discrete-gradient rule, each
//!   with an exact per-step energy balance.
//! * [`ocp`] and [`dissipativity`] solve boundary-value optimal control
//!   problems whose cost is the supplied energy, and check the strict
//!   dissipation inequality and turnpike behavior along the solutions.
//!
//! Systems can be assembled in code, loaded from JSON problem files
//! ([`config`]), or pulled from the built-in registry ([`registry`]). The
//! `portham` binary exposes the same capabilities as subcommands; the
//! `examples/` directory shows one runnable scenario per capability.
//!
//! ```
//! use nalgebra::{DMatrix, DVector};
//! use portham::stepper::{simulate, SchemeKind};
//! use portham::system::PHSystem;
//!
//! let sys = PHSystem::linear(
//!     "damped mode",
//!     DMatrix::zeros(1, 1),
//!     DMatrix::from_row_slice(1, 1, &[1.0]),
//!     DMatrix::from_row_slice(1, 1, &[1.0]),
//!     DMatrix::from_row_slice(1, 1, &[1.0]),
//! )?;
//! let inputs = vec![DVector::zeros(1); 10];
//! let traj = simulate(&sys, &DVector::from_row_slice(&[1.0]), &inputs, SchemeKind::Ddr, 1.0)?;
//! assert!(traj.max_energy_residual() < 1e-12);
//! # Ok::<(), portham::Error>(())
//! ```

pub mod config;
pub mod dissipativity;
pub mod error;
pub mod expr;
pub mod hamiltonian;
pub mod ocp;
pub mod registry;
pub mod report;
pub mod stepper;
pub mod system;

pub mod cli;

pub use error::{Error, Result};
