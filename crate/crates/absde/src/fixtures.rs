//! Named fixtures with registered oracle values, used by the convergence
//! study and the backend-agreement checks.

use crate::error::{AbsdeError, Result};
use crate::generator::{resolve_generator, TerminalData};
use crate::lattice::build_grid;
use crate::partition::DelayPair;
use crate::solver::AbsdeProblem;

/// A named problem family parameterized by the step count on `[0, T]`.
#[derive(Clone, Copy)]
pub struct Fixture {
    pub name: &'static str,
    /// Exact Y(0) of the continuous problem.
    pub oracle_y0: f64,
    /// dt-bias allowance `c` in the backend-agreement bound
    /// `|Y0_mc - Y0_lattice| <= 3*stderr + c`.
    pub mc_bias_allowance: f64,
    builder: fn(usize) -> Result<AbsdeProblem>,
}

impl Fixture {
    pub fn build(&self, n_steps: usize) -> Result<AbsdeProblem> {
        (self.builder)(n_steps)
    }
}

fn martingale(n: usize) -> Result<AbsdeProblem> {
    AbsdeProblem::new(
        1.0,
        DelayPair::constant(0.5, 0.5, 0.5, 1.0),
        resolve_generator("zero", None)?,
        TerminalData::new(|_, b| b, |_, _| 1.0),
        build_grid(1.0, 0.5, n)?,
        3,
    )
}

fn constant_drift(n: usize) -> Result<AbsdeProblem> {
    AbsdeProblem::new(
        1.0,
        DelayPair::constant(0.5, 0.5, 0.5, 1.0),
        resolve_generator("constant(2)", None)?,
        TerminalData::constant(0.0, 0.0),
        build_grid(1.0, 0.5, n)?,
        3,
    )
}

fn linear_anticipated(n: usize) -> Result<AbsdeProblem> {
    AbsdeProblem::new(
        1.0,
        DelayPair::constant(0.5, 0.5, 0.5, 1.0),
        resolve_generator("linear_anticipated", None)?,
        TerminalData::constant(1.0, 0.0),
        build_grid(1.0, 0.5, n)?,
        3,
    )
}

const FIXTURES: &[Fixture] = &[
    Fixture {
        name: "martingale",
        oracle_y0: 0.0,
        mc_bias_allowance: 0.02,
        builder: martingale,
    },
    Fixture {
        name: "constant-drift",
        oracle_y0: 2.0,
        mc_bias_allowance: 0.02,
        builder: constant_drift,
    },
    Fixture {
        // f = E[Y_{t+1/2}], xi = 1 on [1, 1.5]: piecewise backward ODE with
        // y(t) = 2 - t on [1/2, 1] and y(t) = 2.125 - 1.5 t + t^2/2 below.
        name: "linear-anticipated",
        oracle_y0: 2.125,
        mc_bias_allowance: 0.02,
        builder: linear_anticipated,
    },
];

pub fn fixture(name: &str) -> Result<&'static Fixture> {
    FIXTURES
        .iter()
        .find(|f| f.name == name)
        .ok_or_else(|| AbsdeError::UnknownFixture {
            name: name.to_string(),
        })
}

pub fn fixture_names() -> Vec<&'static str> {
    FIXTURES.iter().map(|f| f.name).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_lookup() {
        assert!(fixture("martingale").is_ok());
        assert!(fixture("linear-anticipated").is_ok());
        assert!(matches!(
            fixture("nope"),
            Err(AbsdeError::UnknownFixture { .. })
        ));
        assert_eq!(fixture_names().len(), 3);
    }

    #[test]
    fn fixtures_build_at_modest_sizes() {
        for f in FIXTURES {
            let p = f.build(16).unwrap();
            assert_eq!(p.grid.index_of_t(), 16);
        }
    }
}
