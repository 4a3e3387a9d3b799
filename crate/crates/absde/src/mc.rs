//! Independent Monte Carlo engine: simulated Brownian paths on `[0, T+K]`,
//! least-squares polynomial regression for conditional expectations, and the
//! same backward cascade as the lattice solver. Cross-validates the lattice
//! and scales past lattice-feasible step counts.
//!
//! Everything is a pure function of (problem, seed, path count, basis):
//! normals come from the pinned xoshiro256++/inverse-CDF transform and all
//! reductions run in a fixed order.

use std::cell::{Cell, RefCell};
use std::io::Write;

use crate::error::{AbsdeError, Result};
use crate::generator::AnticipatedQuery;
use crate::lattice::TimeGrid;
use crate::rng::Xoshiro256PlusPlus;
use crate::solver::AbsdeProblem;

/// Simulated Brownian paths, row-major `[path][step]`, all starting at 0.
#[derive(Clone, Debug)]
pub struct PathEnsemble {
    grid: TimeGrid,
    pub seed: u64,
    n_paths: usize,
    states: Vec<f64>,
}

impl PathEnsemble {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn state(&self, path: usize, step: usize) -> f64 {
        self.states[path * (self.grid.n_steps_total() + 1) + step]
    }

    /// States of every path at one step.
    pub fn column(&self, step: usize) -> Vec<f64> {
        (0..self.n_paths).map(|p| self.state(p, step)).collect()
    }

    #[cfg(test)]
    pub(crate) fn from_states(grid: TimeGrid, seed: u64, n_paths: usize, states: Vec<f64>) -> Self {
        assert_eq!(states.len(), n_paths * (grid.n_steps_total() + 1));
        Self {
            grid,
            seed,
            n_paths,
            states,
        }
    }
}

/// Draw a path ensemble. Paths are generated path-by-path, step-by-step, so
/// the layout of the stream is part of the pinned format.
pub fn simulate_paths(seed: u64, n_paths: usize, grid: TimeGrid) -> Result<PathEnsemble> {
    if n_paths < 2 {
        return Err(AbsdeError::InvalidInput(format!(
            "need at least 2 paths, got {n_paths}"
        )));
    }
    let steps = grid.n_steps_total();
    let sqrt_dt = grid.step().sqrt();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut states = Vec::with_capacity(n_paths * (steps + 1));
    for _ in 0..n_paths {
        let mut b = 0.0;
        states.push(b);
        for _ in 0..steps {
            b += sqrt_dt * rng.next_standard_normal();
            states.push(b);
        }
    }
    Ok(PathEnsemble {
        grid,
        seed,
        n_paths,
        states,
    })
}

/// Monomials `1, b, ..., b^degree` of the current state.
#[derive(Clone, Copy, Debug)]
pub struct RegressionBasis {
    pub degree: usize,
}

impl RegressionBasis {
    pub fn new(degree: usize) -> Result<Self> {
        if degree < 1 {
            return Err(AbsdeError::InvalidInput(
                "regression basis degree must be at least 1".into(),
            ));
        }
        Ok(Self { degree })
    }
}

/// A fitted polynomial in the normalized state.
struct Fitted {
    mean: f64,
    scale: f64,
    coeffs: Vec<f64>,
    constant: Option<f64>,
}

impl Fitted {
    fn eval(&self, state: f64) -> f64 {
        if let Some(c) = self.constant {
            return c;
        }
        let u = (state - self.mean) / self.scale;
        let mut acc = 0.0;
        for &c in self.coeffs.iter().rev() {
            acc = acc * u + c;
        }
        acc
    }
}

/// Least-squares fit of `targets` on the monomial basis of `states`.
///
/// Two degenerate inputs have exact answers and skip the solve: constant
/// targets reproduce the constant, and zero-variance states (all paths at
/// the same point, e.g. step 0) reduce the conditional expectation to the
/// plain mean.
fn fit(states: &[f64], targets: &[f64], degree: usize) -> Result<Fitted> {
    let n = states.len();
    debug_assert_eq!(n, targets.len());
    if degree + 1 >= n {
        return Err(AbsdeError::InvalidInput(format!(
            "basis degree {degree} needs more than {} paths",
            degree + 1
        )));
    }
    let (mut t_min, mut t_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in targets {
        if !v.is_finite() {
            return Err(AbsdeError::NonFiniteValue {
                step: 0,
                node: 0,
                detail: "regression target".into(),
            });
        }
        t_min = t_min.min(v);
        t_max = t_max.max(v);
    }
    if t_min == t_max {
        return Ok(Fitted {
            mean: 0.0,
            scale: 1.0,
            coeffs: Vec::new(),
            constant: Some(t_min),
        });
    }

    let mean = states.iter().sum::<f64>() / n as f64;
    let var = states.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    if var <= 0.0 {
        let m = targets.iter().sum::<f64>() / n as f64;
        return Ok(Fitted {
            mean: 0.0,
            scale: 1.0,
            coeffs: Vec::new(),
            constant: Some(m),
        });
    }
    let scale = var.sqrt();

    // Normal equations on normalized states: Hankel moments up to 2*degree.
    let q = degree;
    let mut moments = vec![0.0; 2 * q + 1];
    let mut rhs = vec![0.0; q + 1];
    for (x, v) in states.iter().zip(targets.iter()) {
        let u = (x - mean) / scale;
        let mut pow = 1.0;
        for (a, m) in moments.iter_mut().enumerate() {
            *m += pow;
            if a <= q {
                rhs[a] += pow * v;
            }
            pow *= u;
        }
    }
    let dim = q + 1;
    let mut gram = vec![0.0; dim * dim];
    for a in 0..dim {
        for b in 0..dim {
            gram[a * dim + b] = moments[a + b];
        }
    }

    // Cholesky with a pivot-ratio guard.
    let mut chol = vec![0.0; dim * dim];
    let mut first_pivot = 0.0;
    for i in 0..dim {
        for j in 0..=i {
            let mut sum = gram[i * dim + j];
            for k in 0..j {
                sum -= chol[i * dim + k] * chol[j * dim + k];
            }
            if i == j {
                if i == 0 {
                    first_pivot = sum;
                }
                if !(sum > first_pivot * 1e-12) || !sum.is_finite() {
                    return Err(AbsdeError::IllConditioned {
                        pivot_ratio: if first_pivot > 0.0 { sum / first_pivot } else { 0.0 },
                    });
                }
                chol[i * dim + i] = sum.sqrt();
            } else {
                chol[i * dim + j] = sum / chol[j * dim + j];
            }
        }
    }
    // Solve L L^T beta = rhs.
    let mut beta = rhs;
    for i in 0..dim {
        for k in 0..i {
            beta[i] -= chol[i * dim + k] * beta[k];
        }
        beta[i] /= chol[i * dim + i];
    }
    for i in (0..dim).rev() {
        for k in i + 1..dim {
            beta[i] -= chol[k * dim + i] * beta[k];
        }
        beta[i] /= chol[i * dim + i];
    }
    Ok(Fitted {
        mean,
        scale,
        coeffs: beta,
        constant: None,
    })
}

/// Per-path estimates of `E[later | state at t_step]` by least squares.
/// Exact reproduction when the targets already lie in the basis span.
pub fn regress_conditional(
    ensemble: &PathEnsemble,
    t_step: usize,
    later_values: &[f64],
    basis: &RegressionBasis,
) -> Result<Vec<f64>> {
    if later_values.len() != ensemble.n_paths() {
        return Err(AbsdeError::InvalidInput(format!(
            "got {} later values for {} paths",
            later_values.len(),
            ensemble.n_paths()
        )));
    }
    let states = ensemble.column(t_step);
    let fitted = fit(&states, later_values, basis.degree)?;
    Ok(states.iter().map(|&s| fitted.eval(s)).collect())
}

// ---------------------------------------------------------------------------
// Anticipated queries under regression
// ---------------------------------------------------------------------------

/// Shared per-step context: anticipated slots are answered by regressing the
/// composite h-values (per-path products) on the current state, one
/// regression per distinct h-call. The call sequence of a drift must not
/// depend on the path or the Picard pass; estimates are memoized by call
/// ordinal, computed once while evaluating path 0 and replayed for the rest.
struct McQueryCtx<'a> {
    states: &'a [f64],
    y_snap: &'a [f64],
    z_snap: &'a [f64],
    degree: usize,
    times: (f64, f64),
    memo: RefCell<Vec<Vec<f64>>>,
    error: RefCell<Option<AbsdeError>>,
}

/// Build-phase handle (path 0): unknown ordinals run the regression.
struct McBuildQuery<'a> {
    ctx: &'a McQueryCtx<'a>,
    cursor: Cell<usize>,
}

impl AnticipatedQuery for McBuildQuery<'_> {
    fn expect(&self, h: &dyn Fn(f64, f64) -> f64) -> f64 {
        let ord = self.cursor.get();
        self.cursor.set(ord + 1);
        {
            let memo = self.ctx.memo.borrow();
            if let Some(estimates) = memo.get(ord) {
                return estimates[0];
            }
        }
        let targets: Vec<f64> = self
            .ctx
            .y_snap
            .iter()
            .zip(self.ctx.z_snap.iter())
            .map(|(&th, &ph)| h(th, ph))
            .collect();
        let estimates = match fit(self.ctx.states, &targets, self.ctx.degree) {
            Ok(fitted) => self.ctx.states.iter().map(|&s| fitted.eval(s)).collect(),
            Err(e) => {
                *self.ctx.error.borrow_mut() = Some(e);
                vec![f64::NAN; self.ctx.states.len()]
            }
        };
        let out = estimates[0];
        self.ctx.memo.borrow_mut().push(estimates);
        out
    }

    fn query_times(&self) -> (f64, f64) {
        self.ctx.times
    }
}

/// Replay handle for paths past the first.
struct McReplayQuery<'a> {
    memo: &'a [Vec<f64>],
    times: (f64, f64),
    path: usize,
    cursor: Cell<usize>,
}

impl AnticipatedQuery for McReplayQuery<'_> {
    fn expect(&self, _h: &dyn Fn(f64, f64) -> f64) -> f64 {
        let ord = self.cursor.get();
        self.cursor.set(ord + 1);
        self.memo
            .get(ord)
            .expect("generator issued a data-dependent anticipated query sequence; unsupported in the MC backend")
            [self.path]
    }

    fn query_times(&self) -> (f64, f64) {
        self.times
    }
}

/// Per-path Y and Z arrays plus the time-zero estimate.
#[derive(Clone, Debug)]
pub struct McSolution {
    grid: TimeGrid,
    /// `y[step][path]`
    pub y: Vec<Vec<f64>>,
    /// `z[step][path]`
    pub z: Vec<Vec<f64>>,
    pub y0_estimate: f64,
    /// Standard error of the step-0 conditional-expectation estimate, from
    /// the path variance of the regression targets. Covers Y only; Z quality
    /// is assessed through the backend-agreement fixtures.
    pub y0_stderr: f64,
}

impl McSolution {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// CSV export: same shape as the lattice surface with `path_id` in place
    /// of `up_count`.
    pub fn write_csv<W: Write>(&self, ensemble: &PathEnsemble, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "step_index,time,path_id,state,Y,Z")?;
        for k in 0..=self.grid.n_steps_total() {
            let t = self.grid.time_of(k);
            for p in 0..ensemble.n_paths() {
                writeln!(
                    out,
                    "{k},{:.16e},{p},{:.16e},{:.16e},{:.16e}",
                    t,
                    ensemble.state(p, k),
                    self.y[k][p],
                    self.z[k][p]
                )?;
            }
        }
        Ok(())
    }
}

/// Solve the anticipated equation by regression Monte Carlo: the same
/// backward cascade as the lattice solver, with conditional expectations
/// estimated by least squares, Z per path from the regression of
/// `next_Y * dB / dt`, and anticipated queries regressed as composites.
pub fn solve_absde_mc(
    problem: &AbsdeProblem,
    ensemble: &PathEnsemble,
    basis: &RegressionBasis,
) -> Result<McSolution> {
    let grid = problem.grid;
    if *ensemble.grid() != grid {
        return Err(AbsdeError::InvalidInput(
            "ensemble grid differs from the problem grid".into(),
        ));
    }
    // The cascade is well-defined exactly when the lattice one is: same
    // partition, same alignment, same failure modes.
    let partition = crate::partition::compute_partition(
        &problem.delays,
        problem.t_horizon,
        grid.step() / 16.0,
    )?;
    crate::partition::align_partition_to_grid(&partition, &grid)?;

    let n_paths = ensemble.n_paths();
    let total = grid.n_steps_total();
    let n = grid.index_of_t();
    let dt = grid.step();

    let mut y: Vec<Vec<f64>> = vec![Vec::new(); total + 1];
    let mut z: Vec<Vec<f64>> = vec![Vec::new(); total + 1];

    // Terminal segments on [T, T+K].
    for k in n..=total {
        let t = grid.time_of(k);
        let mut y_row = Vec::with_capacity(n_paths);
        let mut z_row = Vec::with_capacity(n_paths);
        for p in 0..n_paths {
            let b = ensemble.state(p, k);
            let xv = problem.terminal.xi(t, b);
            let ev = problem.terminal.eta(t, b);
            if !xv.is_finite() || !ev.is_finite() {
                return Err(AbsdeError::NonFiniteValue {
                    step: k,
                    node: p,
                    detail: "terminal segment evaluation".into(),
                });
            }
            y_row.push(xv);
            z_row.push(ev);
        }
        y[k] = y_row;
        z[k] = z_row;
    }

    let mut y0_stderr = 0.0;
    for k in (0..n).rev() {
        let t = grid.time_of(k);
        let states = ensemble.column(k);

        // Z by regression of next_Y * dB / dt on the current state.
        let z_targets: Vec<f64> = (0..n_paths)
            .map(|p| y[k + 1][p] * (ensemble.state(p, k + 1) - ensemble.state(p, k)) / dt)
            .collect();
        let z_fit = fit(&states, &z_targets, basis.degree)?;
        let z_row: Vec<f64> = states.iter().map(|&s| z_fit.eval(s)).collect();

        // Conditional expectation of next_Y.
        let e_fit = fit(&states, &y[k + 1], basis.degree)?;
        let e_row: Vec<f64> = states.iter().map(|&s| e_fit.eval(s)).collect();

        // Snap the query times once per step; problem validation guarantees
        // they land above k.
        let kd = grid.snap_nearest_up(t + problem.delays.delta.eval(t));
        let kz = grid.snap_nearest_up(t + problem.delays.zeta.eval(t));
        for snapped in [kd, kz] {
            if snapped <= k {
                return Err(AbsdeError::UnsolvedRegion {
                    query_step: snapped,
                    solved_from: k + 1,
                });
            }
        }

        let ctx = McQueryCtx {
            states: &states,
            y_snap: &y[kd],
            z_snap: &z[kz],
            degree: basis.degree,
            times: (grid.time_of(kd), grid.time_of(kz)),
            memo: RefCell::new(Vec::new()),
            error: RefCell::new(None),
        };

        let mut y_row = vec![0.0; n_paths];
        // Path 0 populates the per-ordinal regression memo.
        {
            let q = McBuildQuery {
                ctx: &ctx,
                cursor: Cell::new(0),
            };
            let mut v = e_row[0];
            for _ in 0..problem.picard_iterations {
                q.cursor.set(0);
                v = e_row[0] + dt * problem.generator.eval(t, v, z_row[0], &q);
            }
            y_row[0] = v;
        }
        if let Some(e) = ctx.error.borrow_mut().take() {
            return Err(e);
        }
        let memo = ctx.memo.into_inner();
        for (p, slot) in y_row.iter_mut().enumerate().skip(1) {
            let q = McReplayQuery {
                memo: &memo,
                times: (grid.time_of(kd), grid.time_of(kz)),
                path: p,
                cursor: Cell::new(0),
            };
            let mut v = e_row[p];
            for _ in 0..problem.picard_iterations {
                q.cursor.set(0);
                v = e_row[p] + dt * problem.generator.eval(t, v, z_row[p], &q);
            }
            *slot = v;
        }
        for (p, v) in y_row.iter().enumerate() {
            if !v.is_finite() {
                return Err(AbsdeError::NonFiniteValue {
                    step: k,
                    node: p,
                    detail: format!(
                        "drift of `{}` in the MC backward pass",
                        problem.generator.name
                    ),
                });
            }
        }

        if k == 0 {
            let m = y[1].iter().sum::<f64>() / n_paths as f64;
            let var =
                y[1].iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n_paths as f64 - 1.0);
            y0_stderr = (var / n_paths as f64).sqrt();
        }
        y[k] = y_row;
        z[k] = z_row;
    }

    let y0_estimate = y[0].iter().sum::<f64>() / n_paths as f64;
    Ok(McSolution {
        grid,
        y,
        z,
        y0_estimate,
        y0_stderr,
    })
}
