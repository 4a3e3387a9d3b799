//! One ordinary BSDE on a grid-aligned interval `[t_a, t_b]`, solved by
//! explicit backward Euler with Picard refinement on the lattice.
//!
//! Per node: `Z_k` is the increment projection of the next Y table,
//! `y^0 = E[next_Y | node]`, then `p` Picard passes
//! `y^{m+1} = E[next_Y | node] + dt * f(t_k, y^m, Z_k, query)`.
//! For `dt * L < 1` the Picard map is a contraction; the default of three
//! passes matches desk-scale tolerances.

use crate::error::{AbsdeError, Result};
use crate::generator::GeneratorSpec;
use crate::lattice::BinomialLattice;
use crate::partition::DelayPair;
use crate::solver::{NodeQuery, SolutionSurface};
use crate::threads::par_fill_pair;

/// How anticipated queries are answered during a step.
#[derive(Clone, Copy)]
pub(crate) enum QueryMode<'a> {
    /// Snap `t + delta(t)`, `t + zeta(t)` and read the solution surface.
    Anticipated(&'a DelayPair),
    /// Probe-verified inert generator: a fixed point mass that is never read.
    Inert,
}

/// One backward induction step: from the Y table at `k + 1` to the Y and Z
/// tables at `k`, answering anticipated queries from `future`.
pub fn backward_step(
    lat: &BinomialLattice,
    k: usize,
    next_y: &[f64],
    generator: &GeneratorSpec,
    delays: &DelayPair,
    picard_iterations: usize,
    future: &SolutionSurface,
) -> Result<(Vec<f64>, Vec<f64>)> {
    backward_step_impl(
        lat,
        k,
        next_y,
        generator,
        QueryMode::Anticipated(delays),
        picard_iterations,
        future,
    )
}

pub(crate) fn backward_step_impl(
    lat: &BinomialLattice,
    k: usize,
    next_y: &[f64],
    generator: &GeneratorSpec,
    queries: QueryMode<'_>,
    picard_iterations: usize,
    future: &SolutionSurface,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let grid = lat.grid();
    if k + 1 > grid.n_steps_total() || next_y.len() != lat.nodes_at(k + 1) {
        return Err(AbsdeError::IndexOutOfRange {
            what: format!("backward step at {k} with {} next values", next_y.len()),
        });
    }
    let t = grid.time_of(k);
    let dt = grid.step();
    let sqrt_dt = lat.sqrt_step();

    // Query times depend on t only, so snap and validate once per step.
    let snapped = match queries {
        QueryMode::Anticipated(delays) => {
            Some(NodeQuery::snap_step_times(future, grid, t, delays)?)
        }
        QueryMode::Inert => None,
    };

    let mut y_row = vec![0.0; k + 1];
    let mut z_row = vec![0.0; k + 1];
    par_fill_pair(&mut y_row, &mut z_row, 0, |j| {
        let z = (next_y[j + 1] - next_y[j]) / (2.0 * sqrt_dt);
        let e = 0.5 * (next_y[j + 1] + next_y[j]);
        let mut y = e;
        match snapped {
            Some((kd, kz)) => {
                let q = NodeQuery::new(future, (k, j), kd, kz);
                for _ in 0..picard_iterations {
                    y = e + dt * generator.eval(t, y, z, &q);
                }
            }
            None => {
                let q = crate::generator::PointMassQuery::new(0.0, 0.0, (t, t));
                for _ in 0..picard_iterations {
                    y = e + dt * generator.eval(t, y, z, &q);
                }
            }
        }
        (y, z)
    });

    for (j, (&y, &z)) in y_row.iter().zip(z_row.iter()).enumerate() {
        if !y.is_finite() || !z.is_finite() {
            return Err(AbsdeError::NonFiniteValue {
                step: k,
                node: j,
                detail: format!(
                    "drift of `{}` produced y = {y}, z = {z} after {picard_iterations} Picard passes",
                    generator.name
                ),
            });
        }
    }
    Ok((y_row, z_row))
}

/// Solve one interval, writing rows `k_hi - 1` down to `k_lo` into `surface`.
/// The surface must already be valid from `k_hi` upward.
pub(crate) fn solve_interval_into(
    lat: &BinomialLattice,
    generator: &GeneratorSpec,
    queries: QueryMode<'_>,
    picard_iterations: usize,
    surface: &mut SolutionSurface,
    k_lo: usize,
    k_hi: usize,
) -> Result<()> {
    debug_assert!(k_lo < k_hi);
    debug_assert!(surface.solved_from() <= k_hi);
    for k in (k_lo..k_hi).rev() {
        let next_y = surface.y_row(k + 1).to_vec();
        let (y_row, z_row) =
            backward_step_impl(lat, k, &next_y, generator, queries, picard_iterations, surface)?;
        surface.set_step(k, y_row, z_row);
    }
    Ok(())
}

/// One interval of the cascade, with its future read handle.
pub struct IntervalProblem<'a> {
    /// (t_a, t_b), both on-grid.
    pub interval: (f64, f64),
    /// Y at t_b per node.
    pub terminal_values: Vec<f64>,
    pub generator: &'a GeneratorSpec,
    pub delays: &'a DelayPair,
    /// Surface valid on `[t_b, T+K]`.
    pub future: &'a SolutionSurface,
    pub picard_iterations: usize,
}

/// The interval's slice of a solution surface: rows `k_lo ..= k_hi`.
#[derive(Clone, Debug)]
pub struct SurfaceFragment {
    pub k_lo: usize,
    pub y: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
}

impl SurfaceFragment {
    pub fn y_at(&self, k: usize, j: usize) -> f64 {
        self.y[k - self.k_lo][j]
    }

    pub fn z_at(&self, k: usize, j: usize) -> f64 {
        self.z[k - self.k_lo][j]
    }
}

/// Solve one ordinary BSDE on `[t_a, t_b]` backward from `terminal_values`.
///
/// The fragment's Y at `t_b` equals `terminal_values` exactly; Z at `t_b` is
/// read from the future surface when defined there (cascade continuity), else
/// copied from the last increment projection.
pub fn solve_interval(problem: &IntervalProblem<'_>, lat: &BinomialLattice) -> Result<SurfaceFragment> {
    let grid = lat.grid();
    let (t_lo, t_hi) = problem.interval;
    let k_lo = grid.snap_nearest_up(t_lo);
    let k_hi = grid.snap_nearest_up(t_hi);
    if k_lo >= k_hi || (grid.time_of(k_lo) - t_lo).abs() > 1e-9 * (1.0 + t_hi)
        || (grid.time_of(k_hi) - t_hi).abs() > 1e-9 * (1.0 + t_hi)
    {
        return Err(AbsdeError::InvalidInput(format!(
            "interval ({t_lo}, {t_hi}) is not grid-aligned and increasing"
        )));
    }
    if problem.terminal_values.len() != lat.nodes_at(k_hi) {
        return Err(AbsdeError::InvalidInput(format!(
            "terminal table has {} entries, step {k_hi} has {} nodes",
            problem.terminal_values.len(),
            lat.nodes_at(k_hi)
        )));
    }
    if problem.terminal_values.iter().any(|v| !v.is_finite()) {
        return Err(AbsdeError::NonFiniteValue {
            step: k_hi,
            node: 0,
            detail: "non-finite terminal values".into(),
        });
    }

    // Scratch surface: the future from k_hi up, the fragment rows below.
    let mut scratch = problem.future.clone();
    let z_hi = if problem.future.solved_from() <= k_hi {
        problem.future.z_row(k_hi).to_vec()
    } else {
        vec![f64::NAN; lat.nodes_at(k_hi)] // patched from below after the solve
    };
    scratch.set_step(k_hi, problem.terminal_values.clone(), z_hi);
    solve_interval_into(
        lat,
        problem.generator,
        QueryMode::Anticipated(problem.delays),
        problem.picard_iterations,
        &mut scratch,
        k_lo,
        k_hi,
    )?;

    let mut y = Vec::with_capacity(k_hi - k_lo + 1);
    let mut z = Vec::with_capacity(k_hi - k_lo + 1);
    for k in k_lo..=k_hi {
        y.push(scratch.y_row(k).to_vec());
        z.push(scratch.z_row(k).to_vec());
    }
    let last = z.len() - 1;
    if z[last].iter().any(|v| v.is_nan()) {
        // No future Z at t_b: duplicate the adjacent computed projection.
        let prev = z[last - 1].clone();
        for (j, slot) in z[last].iter_mut().enumerate() {
            *slot = prev[j.min(prev.len() - 1)];
        }
    }
    Ok(SurfaceFragment { k_lo, y, z })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{AnticipatedQuery, TerminalData};
    use crate::lattice::build_grid;
    use crate::solver::SolutionSurface;

    fn surface_with_constant_tail(
        lat: &BinomialLattice,
        from: usize,
        y_value: f64,
        z_value: f64,
    ) -> SolutionSurface {
        let terminal = TerminalData::constant(y_value, z_value);
        SolutionSurface::from_terminal_tail(lat, from, &terminal).unwrap()
    }

    #[test]
    fn martingale_step() {
        let lat = BinomialLattice::new(build_grid(1.0, 0.0, 8).unwrap());
        let future = surface_with_constant_tail(&lat, 8, 0.0, 0.0);
        let zero = crate::generator::resolve_generator("zero", None).unwrap();
        // t_5 + 0.375 = 1.0: the query lands exactly on the solved tail.
        let delays = DelayPair::constant(0.375, 0.375, 0.0, 1.0);
        let k = 5;
        let next: Vec<f64> = (0..=k + 1).map(|j| lat.state(k + 1, j)).collect();
        let (y, z) = backward_step(&lat, k, &next, &zero, &delays, 3, &future).unwrap();
        for j in 0..=k {
            assert!((y[j] - lat.state(k, j)).abs() < 1e-14);
            assert!((z[j] - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_drift_step() {
        let lat = BinomialLattice::new(build_grid(1.0, 0.0, 4).unwrap());
        let future = surface_with_constant_tail(&lat, 4, 0.0, 0.0);
        let c = crate::generator::resolve_generator("constant(3)", None).unwrap();
        let delays = DelayPair::constant(0.5, 0.5, 0.0, 1.0);
        let next = vec![2.0; 4];
        let (y, z) = backward_step(&lat, 2, &next, &c, &delays, 3, &future).unwrap();
        for j in 0..=2 {
            assert_eq!(y[j], 2.0 + 3.0 * 0.25);
            assert_eq!(z[j], 0.0);
        }
    }

    #[test]
    fn picard_three_passes_match_truncated_geometric_series() {
        // f = y, one step of size 0.25, terminal 1: the exact fixed point is
        // 1/(1 - dt); three passes give 1 + dt + dt^2 + dt^3.
        let lat = BinomialLattice::new(build_grid(0.25, 0.0, 1).unwrap());
        let future = surface_with_constant_tail(&lat, 1, 0.0, 0.0);
        let own_y = GeneratorSpec::new("own-y", 1.0, |_, y, _, _| y).unwrap();
        let delays = DelayPair::constant(0.25, 0.25, 0.0, 1.0);
        let next = vec![1.0, 1.0];
        let dt = 0.25f64;
        let (y, _) = backward_step(&lat, 0, &next, &own_y, &delays, 3, &future).unwrap();
        assert_eq!(y[0], 1.0 + dt + dt * dt + dt * dt * dt);
        // The p -> infinity limit.
        let (y_many, _) = backward_step(&lat, 0, &next, &own_y, &delays, 200, &future).unwrap();
        assert!((y_many[0] - 1.0 / (1.0 - dt)).abs() < 1e-12);
    }

    #[test]
    fn picard_count_is_irrelevant_when_drift_ignores_y() {
        let lat = BinomialLattice::new(build_grid(1.0, 0.5, 8).unwrap());
        let future = surface_with_constant_tail(&lat, 8, 1.0, 0.0);
        let gen = crate::generator::resolve_generator("linear_anticipated", None).unwrap();
        let delays = DelayPair::constant(0.5, 0.5, 0.5, 1.0);
        let next = vec![1.0; 8];
        let (y1, _) = backward_step(&lat, 6, &next, &gen, &delays, 1, &future).unwrap();
        let (y9, _) = backward_step(&lat, 6, &next, &gen, &delays, 9, &future).unwrap();
        assert_eq!(y1, y9);
    }

    #[test]
    fn solve_interval_constant_terminal() {
        let lat = BinomialLattice::new(build_grid(1.0, 0.5, 8).unwrap());
        let future = surface_with_constant_tail(&lat, 8, 5.0, 0.0);
        let zero = crate::generator::resolve_generator("zero", None).unwrap();
        let delays = DelayPair::constant(0.5, 0.5, 0.0, 1.0);
        let problem = IntervalProblem {
            interval: (0.0, 1.0),
            terminal_values: vec![5.0; 9],
            generator: &zero,
            delays: &delays,
            future: &future,
            picard_iterations: 3,
        };
        let frag = solve_interval(&problem, &lat).unwrap();
        for k in 0..=8usize {
            for j in 0..=k {
                assert_eq!(frag.y_at(k, j), 5.0);
                assert_eq!(frag.z_at(k, j), 0.0);
            }
        }
    }

    #[test]
    fn solve_interval_exact_quadrature() {
        // f = 2 over an interval of length 0.5: Y(t_a) = 1 at every node.
        let lat = BinomialLattice::new(build_grid(0.5, 0.5, 8).unwrap());
        let future = surface_with_constant_tail(&lat, 8, 0.0, 0.0);
        let two = crate::generator::resolve_generator("constant(2)", None).unwrap();
        let delays = DelayPair::constant(0.5, 0.5, 0.0, 1.0);
        let problem = IntervalProblem {
            interval: (0.0, 0.5),
            terminal_values: vec![0.0; 9],
            generator: &two,
            delays: &delays,
            future: &future,
            picard_iterations: 3,
        };
        let frag = solve_interval(&problem, &lat).unwrap();
        assert_eq!(frag.y_at(0, 0), 1.0);
        // Terminal row is the given table, exactly.
        for j in 0..=8 {
            assert_eq!(frag.y_at(8, j), 0.0);
        }
    }

    #[test]
    fn time_only_drift_reproduces_riemann_quadrature() {
        // f(t) ignores y, z and the query: backward induction is the exact
        // left Riemann sum accumulated from the terminal.
        let lat = BinomialLattice::new(build_grid(1.0, 0.5, 16).unwrap());
        let future = surface_with_constant_tail(&lat, 16, 2.0, 0.0);
        let gen = GeneratorSpec::new("time-only", 1.0, |t, _, _, _| (3.0 * t).sin()).unwrap();
        let delays = DelayPair::constant(0.5, 0.5, 0.5, 1.0);
        let problem = IntervalProblem {
            interval: (0.0, 1.0),
            terminal_values: vec![2.0; 17],
            generator: &gen,
            delays: &delays,
            future: &future,
            picard_iterations: 3,
        };
        let frag = solve_interval(&problem, &lat).unwrap();
        let dt = lat.grid().step();
        // Same accumulation order as the solver: k descending.
        let mut expected = 2.0;
        for k in (0..16).rev() {
            expected += dt * (3.0 * lat.grid().time_of(k)).sin();
            assert_eq!(frag.y_at(k, 0), expected, "step {k}");
        }
    }

    #[test]
    fn solve_interval_reads_anticipated_future() {
        // f = E[theta_{t+1/2}] with future Y identically 1 beyond t_b = 1/2:
        // the drift is exactly 1, so Y(t_a) = 1.5 and Z = 0.
        let lat = BinomialLattice::new(build_grid(1.0, 0.0, 16).unwrap());
        let future = surface_with_constant_tail(&lat, 8, 1.0, 0.0);
        let gen = crate::generator::resolve_generator("linear_anticipated", None).unwrap();
        let delays = DelayPair::constant(0.5, 0.5, 0.5, 1.0);
        let problem = IntervalProblem {
            interval: (0.0, 0.5),
            terminal_values: vec![1.0; 9],
            generator: &gen,
            delays: &delays,
            future: &future,
            picard_iterations: 3,
        };
        let frag = solve_interval(&problem, &lat).unwrap();
        for j in 0..=0usize {
            assert_eq!(frag.y_at(0, j), 1.5);
            assert_eq!(frag.z_at(0, j), 0.0);
        }
        // Seam Z comes from the future surface.
        for j in 0..=8 {
            assert_eq!(frag.z_at(8, j), 0.0);
        }
    }

    #[test]
    fn one_step_comparison_with_ordered_inputs() {
        // Ordered next tables and ordered drifts with dt*L < 1: the outputs
        // stay ordered up to a dt^2-scale slack.
        let lat = BinomialLattice::new(build_grid(1.0, 0.0, 16).unwrap());
        let future = surface_with_constant_tail(&lat, 16, 0.0, 0.0);
        // t_7 + 0.5625 = 1.0 exactly: queries stay on the solved tail.
        let delays = DelayPair::constant(0.5625, 0.5625, 0.0, 1.0);
        let g1 = GeneratorSpec::new("g1", 1.0, |_, y, _, _| -y + 1.0).unwrap();
        let g2 = GeneratorSpec::new("g2", 1.0, |_, y, _, _| -y).unwrap();
        let dt = lat.grid().step();
        let k = 7;
        let next2: Vec<f64> = (0..=k + 1).map(|j| (lat.state(k + 1, j)).sin()).collect();
        let next1: Vec<f64> = next2.iter().map(|v| v + 0.5).collect();
        let (y1, _) = backward_step(&lat, k, &next1, &g1, &delays, 3, &future).unwrap();
        let (y2, _) = backward_step(&lat, k, &next2, &g2, &delays, 3, &future).unwrap();
        let slack = dt * dt * 2.0;
        for j in 0..=k {
            assert!(y1[j] >= y2[j] - slack, "node {j}: {} vs {}", y1[j], y2[j]);
        }
    }

    #[test]
    fn non_finite_drift_is_reported_with_node() {
        let lat = BinomialLattice::new(build_grid(1.0, 0.0, 4).unwrap());
        let future = surface_with_constant_tail(&lat, 4, 0.0, 0.0);
        let bad = GeneratorSpec::new("bad", 1.0, |_, y, _, _| {
            if y > 0.2 {
                f64::INFINITY
            } else {
                0.0
            }
        })
        .unwrap();
        let delays = DelayPair::constant(0.5, 0.5, 0.0, 1.0);
        let next: Vec<f64> = (0..=3).map(|j| lat.state(3, j)).collect();
        let err = backward_step(&lat, 2, &next, &bad, &delays, 3, &future);
        assert!(matches!(err, Err(AbsdeError::NonFiniteValue { step: 2, .. })));
    }

    #[test]
    fn inert_query_mode_never_reads_the_surface() {
        // Queries in inert mode work even when nothing is solved yet.
        let lat = BinomialLattice::new(build_grid(1.0, 0.0, 4).unwrap());
        let future = SolutionSurface::unsolved(*lat.grid());
        let own_y = GeneratorSpec::new("own-y", 1.0, |_, y, _, _| 0.5 * y).unwrap();
        let next = vec![1.0; 4];
        let (y, _) = backward_step_impl(
            &lat,
            2,
            &next,
            &own_y,
            QueryMode::Inert,
            3,
            &future,
        )
        .unwrap();
        assert!(y.iter().all(|v| v.is_finite()));
    }

    // Query handle sanity: a surface query against a known tail is linear,
    // monotone and fixes constants.
    #[test]
    fn node_query_contract() {
        let lat = BinomialLattice::new(build_grid(1.0, 0.5, 8).unwrap());
        let terminal = TerminalData::new(|_, b| b, |_, _| 1.0);
        let future = SolutionSurface::from_terminal_tail(&lat, 8, &terminal).unwrap();
        let q = NodeQuery::new(&future, (4, 2), 9, 10);
        assert_eq!(q.expect(&|_, _| 3.5), 3.5);
        let a = q.expect(&|th, _| th);
        let b = q.expect(&|th, _| 2.0 * th - 1.0);
        assert!((b - (2.0 * a - 1.0)).abs() < 1e-12);
        let lo = q.expect(&|th, ph| th.min(ph));
        let hi = q.expect(&|th, ph| th.max(ph) + 0.25);
        assert!(hi >= lo);
        // Brownian martingale through the query: E[B at step 9 | node] = state.
        assert!((a - lat.state(4, 2)).abs() < 1e-12);
    }
}
