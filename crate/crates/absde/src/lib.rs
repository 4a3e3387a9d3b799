//! Numerical solver and property-verification toolkit for 1-dimensional
//! anticipated backward stochastic differential equations.
//!
//! The generator of an anticipated equation may read future values
//! `Y_{t+delta(t)}` and `Z_{t+zeta(t)}`; terminal data are whole segments
//! `(xi, eta)` on `[T, T+K]`. The solver partitions `[0, T]` by the delay
//! functions and solves a cascade of ordinary BSDEs backward in time, one
//! interval at a time, answering anticipated queries from the already-solved
//! region. Two backends are provided: a recombining binomial lattice with
//! exact conditional expectations, and a least-squares Monte Carlo engine.
//! Comparison-theorem runs (ordered terminals plus ordered generators imply
//! ordered solutions) ship as an executable harness.

// `!(x > 0.0)` style guards are NaN-rejecting by construction.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod expr;
pub mod fixtures;
pub mod generator;
pub mod harness;
pub mod interval;
pub mod lattice;
pub mod mc;
pub mod partition;
pub mod rng;
pub mod solver;
pub mod threads;

pub use error::{AbsdeError, Result};
pub use generator::{
    check_lipschitz_sampled, check_order_conditions_sampled, check_square_integrability,
    check_sufficient_conditions, evaluate_generator, resolve_generator, AnticipatedQuery,
    ConditionReport, GeneratorSpec, TerminalData, Verdict,
};
pub use lattice::{build_grid, BinomialLattice, TimeGrid};
pub use partition::{
    align_partition_to_grid, compute_partition, validate_delay_assumptions, DelayFn, DelayPair,
    TimePartition, ValidationReport,
};
pub use solver::{
    resolve_anticipated_query, solve_absde, solve_plain_bsde, AbsdeProblem, SolutionSurface,
};
