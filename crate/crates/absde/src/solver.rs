//! The cascade solver: fill `[T, T+K]` from the terminal segments, compute
//! the anticipation partition, then solve interval BSDEs backward from
//! `[t_1, T]` down to `[t_N, t_{N-1}]`, answering anticipated queries from
//! the growing solved surface.

use std::cell::RefCell;
use std::io::Write;

use crate::error::{AbsdeError, Result};
use crate::generator::{depends_on_query, AnticipatedQuery, GeneratorSpec, TerminalData};
use crate::interval::{solve_interval_into, QueryMode};
use crate::lattice::{BinomialLattice, TimeGrid};
use crate::partition::{aligned_knot_indices, compute_partition, DelayPair};

/// Y and Z at every lattice node of `[0, T+K]`. Rows fill backward; the
/// watermark `solved_from` marks the lowest valid step.
#[derive(Clone, Debug)]
pub struct SolutionSurface {
    grid: TimeGrid,
    y: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    solved_from: usize,
}

impl SolutionSurface {
    /// All-NaN surface with nothing solved.
    pub fn unsolved(grid: TimeGrid) -> Self {
        let rows = grid.n_steps_total() + 1;
        Self {
            grid,
            y: (0..rows).map(|k| vec![f64::NAN; k + 1]).collect(),
            z: (0..rows).map(|k| vec![f64::NAN; k + 1]).collect(),
            solved_from: rows,
        }
    }

    /// Surface with steps `from ..= n_steps_total` filled from the terminal
    /// segments: Y = xi, Z = eta, evaluated at the node states.
    pub(crate) fn from_terminal_tail(
        lat: &BinomialLattice,
        from: usize,
        terminal: &TerminalData,
    ) -> Result<Self> {
        let grid = *lat.grid();
        let mut surface = Self::unsolved(grid);
        for k in (from..=grid.n_steps_total()).rev() {
            let t = grid.time_of(k);
            let mut y_row = vec![0.0; k + 1];
            let mut z_row = vec![0.0; k + 1];
            for j in 0..=k {
                let b = lat.state(k, j);
                y_row[j] = terminal.xi(t, b);
                z_row[j] = terminal.eta(t, b);
                if !y_row[j].is_finite() || !z_row[j].is_finite() {
                    return Err(AbsdeError::NonFiniteValue {
                        step: k,
                        node: j,
                        detail: "terminal segment evaluation".into(),
                    });
                }
            }
            surface.set_step(k, y_row, z_row);
        }
        Ok(surface)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Lowest step index with valid data.
    pub fn solved_from(&self) -> usize {
        self.solved_from
    }

    pub fn y_at(&self, k: usize, j: usize) -> f64 {
        self.y[k][j]
    }

    pub fn z_at(&self, k: usize, j: usize) -> f64 {
        self.z[k][j]
    }

    pub fn y_row(&self, k: usize) -> &[f64] {
        &self.y[k]
    }

    pub fn z_row(&self, k: usize) -> &[f64] {
        &self.z[k]
    }

    /// Y at the root node (time 0).
    pub fn y0(&self) -> f64 {
        self.y[0][0]
    }

    pub(crate) fn set_step(&mut self, k: usize, y_row: Vec<f64>, z_row: Vec<f64>) {
        debug_assert_eq!(y_row.len(), k + 1);
        debug_assert_eq!(z_row.len(), k + 1);
        self.y[k] = y_row;
        self.z[k] = z_row;
        self.solved_from = self.solved_from.min(k);
    }

    pub(crate) fn patch_z_row(&mut self, k: usize, z_row: Vec<f64>) {
        debug_assert_eq!(z_row.len(), k + 1);
        self.z[k] = z_row;
    }

    /// CSV export: `step_index,time,up_count,state,Y,Z`, one row per node,
    /// floats rendered with 17 significant digits.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "step_index,time,up_count,state,Y,Z")?;
        let lat = BinomialLattice::new(self.grid);
        for k in 0..=self.grid.n_steps_total() {
            let t = self.grid.time_of(k);
            for j in 0..=k {
                writeln!(
                    out,
                    "{k},{:.16e},{j},{:.16e},{:.16e},{:.16e}",
                    t,
                    lat.state(k, j),
                    self.y[k][j],
                    self.z[k][j]
                )?;
            }
        }
        Ok(())
    }
}

/// Anticipated query answered exactly from a solution surface: the joint
/// two-time law of the Brownian states at the snapped query steps, mapped
/// through the Y and Z node tables. The law is built lazily and cached, so
/// generators that never read their query cost nothing.
pub struct NodeQuery<'a> {
    surface: &'a SolutionSurface,
    node: (usize, usize),
    k_delta: usize,
    k_zeta: usize,
    law: RefCell<Option<Vec<(f64, f64, f64)>>>,
}

impl<'a> NodeQuery<'a> {
    /// Snap `t + delta(t)` and `t + zeta(t)` for a whole time step and check
    /// they are answerable: on the grid and in the solved region.
    pub(crate) fn snap_step_times(
        surface: &SolutionSurface,
        grid: &TimeGrid,
        t: f64,
        delays: &DelayPair,
    ) -> Result<(usize, usize)> {
        let snap_one = |raw_time: f64| -> Result<usize> {
            if !raw_time.is_finite() {
                return Err(AbsdeError::NonPositiveDelay {
                    at: t,
                    value: raw_time - t,
                });
            }
            let idx = grid.snap_unclamped(raw_time);
            if idx < 0 || idx as usize > grid.n_steps_total() {
                return Err(AbsdeError::KTooSmall {
                    query_time: raw_time,
                    grid_end: grid.time_of(grid.n_steps_total()),
                });
            }
            let idx = idx as usize;
            if idx < surface.solved_from() {
                return Err(AbsdeError::UnsolvedRegion {
                    query_step: idx,
                    solved_from: surface.solved_from(),
                });
            }
            Ok(idx)
        };
        let kd = snap_one(t + delays.delta.eval(t))?;
        let kz = snap_one(t + delays.zeta.eval(t))?;
        Ok((kd, kz))
    }

    pub(crate) fn new(
        surface: &'a SolutionSurface,
        node: (usize, usize),
        k_delta: usize,
        k_zeta: usize,
    ) -> Self {
        Self {
            surface,
            node,
            k_delta,
            k_zeta,
            law: RefCell::new(None),
        }
    }

    fn build_law(&self) -> Vec<(f64, f64, f64)> {
        let (k, j) = self.node;
        let (k1, k2) = (self.k_delta.min(self.k_zeta), self.k_delta.max(self.k_zeta));
        let n1 = k1 - k;
        let n2 = k2 - k1;
        let pmf1 = BinomialLattice::binomial_pmf(n1);
        let pmf2 = BinomialLattice::binomial_pmf(n2);
        let mut entries = Vec::with_capacity((n1 + 1) * (n2 + 1));
        for (m1, p1) in pmf1.iter().enumerate() {
            let j1 = j + m1;
            for (m2, p2) in pmf2.iter().enumerate() {
                let j2 = j + m1 + m2;
                let (theta, phi) = if self.k_delta <= self.k_zeta {
                    (
                        self.surface.y_at(self.k_delta, j1),
                        self.surface.z_at(self.k_zeta, j2),
                    )
                } else {
                    (
                        self.surface.y_at(self.k_delta, j2),
                        self.surface.z_at(self.k_zeta, j1),
                    )
                };
                entries.push((theta, phi, p1 * p2));
            }
        }
        entries
    }
}

impl AnticipatedQuery for NodeQuery<'_> {
    fn expect(&self, h: &dyn Fn(f64, f64) -> f64) -> f64 {
        let mut cache = self.law.borrow_mut();
        let law = cache.get_or_insert_with(|| self.build_law());
        law.iter().map(|&(th, ph, p)| p * h(th, ph)).sum()
    }

    fn query_times(&self) -> (f64, f64) {
        (
            self.surface.grid.time_of(self.k_delta),
            self.surface.grid.time_of(self.k_zeta),
        )
    }
}

/// Build the anticipated query for one node against an already-solved region
/// of the surface. Fails with `UnsolvedRegion` if a snapped query time falls
/// below the solved watermark.
pub fn resolve_anticipated_query<'a>(
    surface: &'a SolutionSurface,
    lat: &'a BinomialLattice,
    node: (usize, usize),
    delays: &DelayPair,
) -> Result<NodeQuery<'a>> {
    let (k, j) = node;
    if k > surface.grid.n_steps_total() || j > k {
        return Err(AbsdeError::IndexOutOfRange {
            what: format!("query node ({k}, {j})"),
        });
    }
    if *lat.grid() != surface.grid {
        return Err(AbsdeError::InvalidInput(
            "lattice grid differs from the surface grid".into(),
        ));
    }
    let t = surface.grid.time_of(k);
    let (kd, kz) = NodeQuery::snap_step_times(surface, &surface.grid, t, delays)?;
    Ok(NodeQuery::new(surface, node, kd, kz))
}

/// A full anticipated problem on a grid.
#[derive(Clone, Debug)]
pub struct AbsdeProblem {
    pub t_horizon: f64,
    pub delays: DelayPair,
    pub generator: GeneratorSpec,
    pub terminal: TerminalData,
    pub grid: TimeGrid,
    pub picard_iterations: usize,
}

impl AbsdeProblem {
    pub fn new(
        t_horizon: f64,
        delays: DelayPair,
        generator: GeneratorSpec,
        terminal: TerminalData,
        grid: TimeGrid,
        picard_iterations: usize,
    ) -> Result<Self> {
        if (grid.time_of(grid.index_of_t()) - t_horizon).abs() > 1e-9 * (1.0 + t_horizon) {
            return Err(AbsdeError::InvalidInput(format!(
                "grid does not cover [0, {t_horizon}] (index_of_t at {})",
                grid.time_of(grid.index_of_t())
            )));
        }
        if picard_iterations == 0 {
            return Err(AbsdeError::InvalidInput(
                "need at least one Picard pass".into(),
            ));
        }
        let step = grid.step();
        let grid_end = grid.time_of(grid.n_steps_total());
        for k in 0..grid.index_of_t() {
            let t = grid.time_of(k);
            for delay in [delays.delta.eval(t), delays.zeta.eval(t)] {
                if !(delay > 0.0) || !delay.is_finite() {
                    return Err(AbsdeError::NonPositiveDelay { at: t, value: delay });
                }
                if delay < step * (1.0 - 1e-9) {
                    return Err(AbsdeError::DelayBelowGridStep {
                        at: t,
                        delay,
                        step,
                    });
                }
                let idx = grid.snap_unclamped(t + delay);
                if idx < 0 || idx as usize > grid.n_steps_total() {
                    return Err(AbsdeError::KTooSmall {
                        query_time: t + delay,
                        grid_end,
                    });
                }
            }
        }
        Ok(Self {
            t_horizon,
            delays,
            generator,
            terminal,
            grid,
            picard_iterations,
        })
    }
}

/// Scan resolution used for general-delay partitions, as a fraction of the
/// grid step. Delays are at least one grid step, so this always progresses.
const PARTITION_SCAN_DIVISOR: f64 = 16.0;

/// Solve the anticipated equation by the interval cascade. Deterministic:
/// identical problems produce bit-identical surfaces.
pub fn solve_absde(problem: &AbsdeProblem) -> Result<SolutionSurface> {
    let lat = BinomialLattice::new(problem.grid);
    let grid = lat.grid();
    let mut surface = SolutionSurface::from_terminal_tail(&lat, grid.index_of_t(), &problem.terminal)?;

    let partition = compute_partition(
        &problem.delays,
        problem.t_horizon,
        grid.step() / PARTITION_SCAN_DIVISOR,
    )?;
    let knot_indices = aligned_knot_indices(&partition, grid)?;

    for pair in knot_indices.windows(2) {
        let (k_hi, k_lo) = (pair[0], pair[1]);
        solve_interval_into(
            &lat,
            &problem.generator,
            QueryMode::Anticipated(&problem.delays),
            problem.picard_iterations,
            &mut surface,
            k_lo,
            k_hi,
        )?;
    }
    debug_assert_eq!(surface.solved_from(), 0);
    Ok(surface)
}

/// Solve an ordinary (non-anticipated) BSDE on `[0, T]` with the same
/// engine; the consistency baseline for the cascade plumbing.
///
/// The generator must ignore its query argument (probe-verified). Z at the
/// terminal step has no data to come from, so it duplicates the adjacent
/// computed increment projection.
pub fn solve_plain_bsde(
    t_horizon: f64,
    generator: &GeneratorSpec,
    terminal_y_at_t: &[f64],
    grid: TimeGrid,
) -> Result<SolutionSurface> {
    if grid.n_steps_total() != grid.index_of_t() {
        return Err(AbsdeError::InvalidInput(
            "plain BSDE solve expects a grid with K = 0".into(),
        ));
    }
    if (grid.time_of(grid.index_of_t()) - t_horizon).abs() > 1e-9 * (1.0 + t_horizon) {
        return Err(AbsdeError::InvalidInput(format!(
            "grid does not cover [0, {t_horizon}]"
        )));
    }
    if depends_on_query(generator, 0xD1CE) {
        return Err(AbsdeError::AnticipatedDependence {
            name: generator.name.clone(),
        });
    }
    let n = grid.index_of_t();
    if terminal_y_at_t.len() != n + 1 {
        return Err(AbsdeError::InvalidInput(format!(
            "terminal table has {} entries, step {n} has {} nodes",
            terminal_y_at_t.len(),
            n + 1
        )));
    }
    if terminal_y_at_t.iter().any(|v| !v.is_finite()) {
        return Err(AbsdeError::NonFiniteValue {
            step: n,
            node: 0,
            detail: "non-finite terminal values".into(),
        });
    }

    let lat = BinomialLattice::new(grid);
    let mut surface = SolutionSurface::unsolved(grid);
    surface.set_step(n, terminal_y_at_t.to_vec(), vec![0.0; n + 1]);
    solve_interval_into(
        &lat,
        generator,
        QueryMode::Inert,
        3,
        &mut surface,
        0,
        n,
    )?;
    let mut z_terminal = vec![0.0; n + 1];
    let below = surface.z_row(n - 1).to_vec();
    for (j, slot) in z_terminal.iter_mut().enumerate() {
        *slot = below[j.min(below.len() - 1)];
    }
    surface.patch_z_row(n, z_terminal);
    Ok(surface)
}
