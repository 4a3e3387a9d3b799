//! Anticipation partition of `[0, T]` and the delay-assumption checks.
//!
//! Starting from `t_0 = T`, each knot is the smallest `t` such that
//! `min(s + delta(s), s + zeta(s)) >= t_{i-1}` for every `s in [t, T]`.
//! Positivity of the delays makes the knot sequence finite and drives it to
//! zero, which is what lets an anticipated equation be solved as a cascade of
//! ordinary backward equations, one interval at a time.

use std::sync::Arc;

use crate::error::{AbsdeError, Result};
use crate::lattice::TimeGrid;

/// A delay as an evaluable map of time, with a self-declared kind tag.
/// The constant kind unlocks the exact closed-form partition.
#[derive(Clone)]
pub enum DelayFn {
    Constant(f64),
    General(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl DelayFn {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            DelayFn::Constant(d) => *d,
            DelayFn::General(f) => f(t),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, DelayFn::Constant(_))
    }
}

impl std::fmt::Debug for DelayFn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DelayFn::Constant(d) => write!(f, "Constant({d})"),
            DelayFn::General(_) => write!(f, "General(..)"),
        }
    }
}

/// The pair of delay functions with their declared bounds: `horizon_k` from
/// assumption (a1), `dominance_m` from assumption (a2).
#[derive(Clone, Debug)]
pub struct DelayPair {
    pub delta: DelayFn,
    pub zeta: DelayFn,
    pub horizon_k: f64,
    pub dominance_m: f64,
}

impl DelayPair {
    pub fn constant(delta: f64, zeta: f64, horizon_k: f64, dominance_m: f64) -> Self {
        Self {
            delta: DelayFn::Constant(delta),
            zeta: DelayFn::Constant(zeta),
            horizon_k,
            dominance_m,
        }
    }

    /// min(delta(t), zeta(t))
    pub fn combined_min(&self, t: f64) -> f64 {
        self.delta.eval(t).min(self.zeta.eval(t))
    }

    /// Smallest combined delay over a uniform sample of `[0, t_max]`.
    pub fn min_sampled_delay(&self, t_max: f64, samples: usize) -> f64 {
        let n = samples.max(2);
        (0..n)
            .map(|i| self.combined_min(t_max * i as f64 / (n - 1) as f64))
            .fold(f64::INFINITY, f64::min)
    }
}

/// The decreasing knots `T = knots[0] > ... > knots[N] = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimePartition {
    pub knots: Vec<f64>,
}

impl TimePartition {
    /// N: number of intervals (one less than the knot count).
    pub fn count_n(&self) -> usize {
        self.knots.len() - 1
    }
}

fn check_positive_delay(at: f64, value: f64) -> Result<f64> {
    if !(value > 0.0) || !value.is_finite() {
        return Err(AbsdeError::NonPositiveDelay { at, value });
    }
    Ok(value)
}

/// Compute the anticipation partition.
///
/// Constant delays use the exact closed form
/// `t_i = max(t_{i-1} - min(delta, zeta), 0)`; general delays run a backward
/// scan at `scan_resolution` over the inf of `min(s + delta(s), s + zeta(s))`.
pub fn compute_partition(
    delays: &DelayPair,
    t_horizon: f64,
    scan_resolution: f64,
) -> Result<TimePartition> {
    if !(t_horizon > 0.0) {
        return Err(AbsdeError::InvalidInput(format!(
            "partition undefined for T = {t_horizon}"
        )));
    }
    if !(scan_resolution > 0.0) {
        return Err(AbsdeError::InvalidInput(format!(
            "scan resolution must be positive, got {scan_resolution}"
        )));
    }

    if let (DelayFn::Constant(d), DelayFn::Constant(z)) = (&delays.delta, &delays.zeta) {
        check_positive_delay(0.0, *d)?;
        check_positive_delay(0.0, *z)?;
        let dmin = d.min(*z);
        let mut knots = vec![t_horizon];
        let cap = (t_horizon / dmin).ceil() as usize + 2;
        while *knots.last().unwrap() > 0.0 {
            let prev = *knots.last().unwrap();
            let next = prev - dmin;
            // Rounding can leave an ulp-scale residue where the true knot is
            // zero; clamp it so the final knot is exact.
            knots.push(if next < dmin * 1e-9 { 0.0 } else { next });
            if knots.len() > cap {
                return Err(AbsdeError::IterationCap {
                    count: knots.len(),
                    cap,
                });
            }
        }
        return Ok(TimePartition { knots });
    }

    // General scan: sample s_j = j * resolution (last sample forced to T),
    // take suffix minima of min(s + delta(s), s + zeta(s)), then each knot is
    // a binary search in the (nondecreasing) suffix-min array.
    let m = (t_horizon / scan_resolution).ceil() as usize;
    let mut sample_times = Vec::with_capacity(m + 1);
    for j in 0..m {
        sample_times.push(j as f64 * scan_resolution);
    }
    sample_times.push(t_horizon);

    let mut suffix_min = vec![0.0; sample_times.len()];
    let mut running = f64::INFINITY;
    for (j, &s) in sample_times.iter().enumerate().rev() {
        let d = check_positive_delay(s, delays.delta.eval(s))?;
        let z = check_positive_delay(s, delays.zeta.eval(s))?;
        running = running.min(s + d.min(z));
        suffix_min[j] = running;
    }

    let cap = m + 2;
    let mut knots = vec![t_horizon];
    let mut prev_idx = sample_times.len() - 1;
    while *knots.last().unwrap() > 0.0 {
        let prev = *knots.last().unwrap();
        let idx = suffix_min.partition_point(|&g| g < prev);
        if idx >= prev_idx {
            return Err(AbsdeError::NoProgress { knot: prev });
        }
        knots.push(sample_times[idx]);
        prev_idx = idx;
        if knots.len() > cap {
            return Err(AbsdeError::IterationCap {
                count: knots.len(),
                cap,
            });
        }
    }
    Ok(TimePartition { knots })
}

/// Outcome of the sampled (a1)/(a2) checks. (a2) quantifies over all
/// nonnegative integrable g, so sampling can refute the declared dominance
/// constant but never prove it; the report is advisory.
#[derive(Clone, Debug)]
pub struct ValidationReport {
    pub a1_pass: bool,
    /// Worst sampled excess of `s + delay(s)` over `T + K` (negative = margin).
    pub a1_worst_excess: f64,
    pub a2_pass: bool,
    /// Empirical lower bound on the M required by (a2), from a bump family.
    pub a2_empirical_bound: f64,
    pub samples_used: usize,
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "(a1) {} worst excess of s+delay(s) over T+K: {:.6e}",
            if self.a1_pass { "pass;" } else { "FAIL;" },
            self.a1_worst_excess
        )?;
        write!(
            f,
            "(a2) {} empirical bound on required M: {:.6} ({} samples; advisory)",
            if self.a2_pass { "pass;" } else { "refuted;" },
            self.a2_empirical_bound,
            self.samples_used
        )
    }
}

fn hat_bump(x: f64, center: f64, width: f64) -> f64 {
    (1.0 - (x - center).abs() / width).max(0.0)
}

/// Trapezoid rule over precomputed equally spaced integrand values.
fn trapezoid(values: &[f64], h: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let interior: f64 = values[1..values.len() - 1].iter().sum();
    h * (0.5 * values[0] + interior + 0.5 * values[values.len() - 1])
}

/// Sampled check of assumptions (a1) and (a2).
///
/// (a1) is tested pointwise on a uniform sample of `[0, T]`. (a2) is probed
/// with triangular bumps g centered across `[0, T+K]`: for each bump and each
/// tested left endpoint t, the ratio of `int_t^T g(s + delay(s)) ds` to
/// `int_t^{T+K} g(s) ds` bounds the required M from below.
pub fn validate_delay_assumptions(
    delays: &DelayPair,
    t_horizon: f64,
    sample_count: usize,
) -> Result<ValidationReport> {
    if sample_count < 2 {
        return Err(AbsdeError::InvalidInput(
            "validation needs at least 2 samples".into(),
        ));
    }
    let k = delays.horizon_k;
    let end = t_horizon + k;

    let mut worst_excess = f64::NEG_INFINITY;
    for i in 0..sample_count {
        let s = t_horizon * i as f64 / (sample_count - 1) as f64;
        let d = delays.delta.eval(s);
        let z = delays.zeta.eval(s);
        if !d.is_finite() || !z.is_finite() {
            return Err(AbsdeError::NonFiniteValue {
                step: i,
                node: 0,
                detail: format!("delay evaluation at s = {s}"),
            });
        }
        worst_excess = worst_excess.max((s + d.max(z)) - end);
    }
    let a1_pass = worst_excess <= 1e-12 * (1.0 + end.abs());

    // (a2): bump centers on [0, T+K], tested left endpoints on [0, T).
    let centers = 17usize;
    let width = end / 16.0;
    let quad_cells = 2048usize;
    let t_points = 8usize;

    let mut bound: f64 = 0.0;
    let mut samples_used = sample_count;
    for jt in 0..t_points {
        let t = t_horizon * jt as f64 / t_points as f64;
        // Shifted-argument samples for the left side, one array per delay.
        let h_lhs = (t_horizon - t) / quad_cells as f64;
        let shifted: Vec<(f64, f64)> = (0..=quad_cells)
            .map(|q| {
                let s = t + q as f64 * h_lhs;
                (s + delays.delta.eval(s), s + delays.zeta.eval(s))
            })
            .collect();
        let h_rhs = (end - t) / quad_cells as f64;
        samples_used += 2 * (quad_cells + 1);
        for lc in 0..=centers - 1 {
            let c = end * lc as f64 / (centers - 1) as f64;
            let rhs_vals: Vec<f64> = (0..=quad_cells)
                .map(|q| hat_bump(t + q as f64 * h_rhs, c, width))
                .collect();
            let rhs = trapezoid(&rhs_vals, h_rhs);
            if rhs <= 1e-12 * width {
                continue;
            }
            for pick in 0..2 {
                let lhs_vals: Vec<f64> = shifted
                    .iter()
                    .map(|&(sd, sz)| hat_bump(if pick == 0 { sd } else { sz }, c, width))
                    .collect();
                let lhs = trapezoid(&lhs_vals, h_lhs);
                bound = bound.max(lhs / rhs);
            }
        }
    }
    // Quadrature leaves O(1e-5) relative slack on the ratio estimates.
    let a2_pass = bound <= delays.dominance_m * (1.0 + 1e-4) + 1e-12;

    Ok(ValidationReport {
        a1_pass,
        a1_worst_excess: worst_excess,
        a2_pass,
        a2_empirical_bound: bound,
        samples_used,
    })
}

/// Snap every knot to the nearest grid node (ties upward). Errors if two
/// knots land on the same node.
pub fn align_partition_to_grid(partition: &TimePartition, grid: &TimeGrid) -> Result<TimePartition> {
    let mut indices = Vec::with_capacity(partition.knots.len());
    for &knot in &partition.knots {
        indices.push(grid.snap_nearest_up(knot).min(grid.index_of_t()));
    }
    for pos in 1..indices.len() {
        if indices[pos - 1] <= indices[pos] {
            return Err(AbsdeError::CollapsedKnots {
                upper: partition.knots[pos - 1],
                lower: partition.knots[pos],
                node: indices[pos - 1],
            });
        }
    }
    Ok(TimePartition {
        knots: indices.into_iter().map(|i| grid.time_of(i)).collect(),
    })
}

/// Aligned knots as grid indices, descending: `[index_of_t, ..., 0]`.
pub(crate) fn aligned_knot_indices(partition: &TimePartition, grid: &TimeGrid) -> Result<Vec<usize>> {
    let aligned = align_partition_to_grid(partition, grid)?;
    Ok(aligned
        .knots
        .iter()
        .map(|&t| grid.snap_nearest_up(t))
        .collect())
}
