//! Discrete Brownian driver on `[0, T+K]`: a recombining binomial lattice
//! with exact conditional expectations, two-time joint laws for anticipated
//! queries, and the increment projection used to extract Z.
//!
//! A node is addressed by `(step k, up-count j)` with `0 <= j <= k`; its
//! Brownian state is `(2j - k) * sqrt(step)`. One-step transitions are
//! up/down with probability 1/2 each, so every one-step increment has mean 0
//! and variance `step` exactly.

use crate::error::{AbsdeError, Result};

/// Uniform time axis covering `[0, T + K_aligned]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    step: f64,
    n_steps_total: usize,
    index_of_t: usize,
    k_aligned: f64,
}

impl TimeGrid {
    pub fn step(&self) -> f64 {
        self.step
    }

    /// Total number of steps on `[0, T + K_aligned]`.
    pub fn n_steps_total(&self) -> usize {
        self.n_steps_total
    }

    /// Step index of the terminal time T.
    pub fn index_of_t(&self) -> usize {
        self.index_of_t
    }

    /// The anticipation horizon after rounding to a whole number of steps.
    pub fn k_aligned(&self) -> f64 {
        self.k_aligned
    }

    pub fn time_of(&self, k: usize) -> f64 {
        k as f64 * self.step
    }

    /// Nearest grid index to time `v`, ties resolved upward. Clamped to the
    /// grid range.
    pub fn snap_nearest_up(&self, v: f64) -> usize {
        let raw = (v / self.step + 0.5).floor();
        if raw <= 0.0 {
            0
        } else {
            (raw as usize).min(self.n_steps_total)
        }
    }

    /// Nearest index without clamping at the top; used to detect off-grid
    /// query times.
    pub fn snap_unclamped(&self, v: f64) -> i64 {
        (v / self.step + 0.5).floor() as i64
    }
}

/// step = T / n; K is rounded to the nearest whole number of steps and the
/// aligned value is reported back through the grid.
pub fn build_grid(t_horizon: f64, k: f64, n_steps_on_0t: usize) -> Result<TimeGrid> {
    if !(t_horizon > 0.0) {
        return Err(AbsdeError::InvalidInput(format!(
            "terminal time T must be positive, got {t_horizon}"
        )));
    }
    if k < 0.0 {
        return Err(AbsdeError::InvalidInput(format!(
            "anticipation horizon K must be nonnegative, got {k}"
        )));
    }
    if n_steps_on_0t == 0 {
        return Err(AbsdeError::InvalidInput(
            "need at least one step on [0, T]".into(),
        ));
    }
    let step = t_horizon / n_steps_on_0t as f64;
    let k_steps = (k / step).round() as usize;
    Ok(TimeGrid {
        step,
        n_steps_total: n_steps_on_0t + k_steps,
        index_of_t: n_steps_on_0t,
        k_aligned: k_steps as f64 * step,
    })
}

/// Recombining binomial lattice over a [`TimeGrid`].
#[derive(Clone, Debug)]
pub struct BinomialLattice {
    grid: TimeGrid,
    sqrt_step: f64,
}

impl BinomialLattice {
    pub fn new(grid: TimeGrid) -> Self {
        Self {
            grid,
            sqrt_step: grid.step.sqrt(),
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn sqrt_step(&self) -> f64 {
        self.sqrt_step
    }

    /// Brownian state at node `(k, j)`.
    pub fn state(&self, k: usize, j: usize) -> f64 {
        (2.0 * j as f64 - k as f64) * self.sqrt_step
    }

    /// Number of nodes at step `k`.
    pub fn nodes_at(&self, k: usize) -> usize {
        k + 1
    }

    fn check_node(&self, k: usize, j: usize) -> Result<()> {
        if k > self.grid.n_steps_total || j > k {
            return Err(AbsdeError::IndexOutOfRange {
                what: format!("node ({k}, {j}) on a {}-step lattice", self.grid.n_steps_total),
            });
        }
        Ok(())
    }

    /// Exact conditional expectation of `values` (a table over all nodes at
    /// `target_step`) given node `(k, j)`.
    ///
    /// Computed by `target_step - k` passes of one-step averaging over the
    /// reachable window, which keeps everything O(span^2) without large
    /// binomial coefficients.
    pub fn conditional_expectation(
        &self,
        node: (usize, usize),
        target_step: usize,
        values: &[f64],
    ) -> Result<f64> {
        let (k, j) = node;
        self.check_node(k, j)?;
        if target_step < k || target_step > self.grid.n_steps_total {
            return Err(AbsdeError::IndexOutOfRange {
                what: format!("target step {target_step} from step {k}"),
            });
        }
        if values.len() != self.nodes_at(target_step) {
            return Err(AbsdeError::IndexOutOfRange {
                what: format!(
                    "value table has {} entries, step {target_step} has {} nodes",
                    values.len(),
                    self.nodes_at(target_step)
                ),
            });
        }
        let span = target_step - k;
        if span == 0 {
            return Ok(values[j]);
        }
        // Reachable nodes at target_step are j..=j+span.
        let mut window: Vec<f64> = values[j..=j + span].to_vec();
        for width in (1..=span).rev() {
            for i in 0..width {
                window[i] = 0.5 * (window[i] + window[i + 1]);
            }
        }
        Ok(window[0])
    }

    /// Probability row of Binomial(n, 1/2), by the same one-step averaging
    /// recursion (`p_n(m) = (p_{n-1}(m-1) + p_{n-1}(m)) / 2`).
    pub fn binomial_pmf(n: usize) -> Vec<f64> {
        let mut row = vec![1.0];
        for _ in 0..n {
            let mut next = vec![0.0; row.len() + 1];
            for (m, p) in row.iter().enumerate() {
                next[m] += 0.5 * p;
                next[m + 1] += 0.5 * p;
            }
            row = next;
        }
        row
    }

    /// Exact joint law of the Brownian states at steps `k1 <= k2`,
    /// conditional on node `(k, j)`. Entries are `((state1, state2), prob)`,
    /// `(k1-k+1) * (k2-k1+1)` of them.
    pub fn joint_two_time_law(
        &self,
        node: (usize, usize),
        k1: usize,
        k2: usize,
    ) -> Result<Vec<((f64, f64), f64)>> {
        let (k, j) = node;
        self.check_node(k, j)?;
        if !(k <= k1 && k1 <= k2 && k2 <= self.grid.n_steps_total) {
            return Err(AbsdeError::IndexOutOfRange {
                what: format!("joint law steps ({k1}, {k2}) from step {k}"),
            });
        }
        let n1 = k1 - k;
        let n2 = k2 - k1;
        let pmf1 = Self::binomial_pmf(n1);
        let pmf2 = Self::binomial_pmf(n2);
        let mut out = Vec::with_capacity((n1 + 1) * (n2 + 1));
        for (m1, p1) in pmf1.iter().enumerate() {
            let s1 = self.state(k1, j + m1);
            for (m2, p2) in pmf2.iter().enumerate() {
                let s2 = self.state(k2, j + m1 + m2);
                out.push(((s1, s2), p1 * p2));
            }
        }
        Ok(out)
    }

    /// Discrete martingale-representation estimate of Z at node `(k, j)`:
    /// `(V(k+1, j+1) - V(k+1, j)) / (2 sqrt(step))`.
    pub fn increment_projection(&self, node: (usize, usize), next_values: &[f64]) -> Result<f64> {
        let (k, j) = node;
        self.check_node(k, j)?;
        if k + 1 > self.grid.n_steps_total || next_values.len() != self.nodes_at(k + 1) {
            return Err(AbsdeError::IndexOutOfRange {
                what: format!(
                    "increment projection at step {k} needs {} next values, got {}",
                    k + 2,
                    next_values.len()
                ),
            });
        }
        Ok((next_values[j + 1] - next_values[j]) / (2.0 * self.sqrt_step))
    }
}
