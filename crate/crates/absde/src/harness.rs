//! Experiment orchestration: comparison runs, the equality
//! characterization, convergence studies, and report/CSV rendering.

use crate::error::{AbsdeError, Result};
use crate::fixtures::fixture;
use crate::generator::{
    check_order_conditions_sampled, resolve_generator, ConditionReport, DomainBox,
    OrderCheckConfig, SufficientMode,
};
use crate::lattice::BinomialLattice;
use crate::mc::{simulate_paths, solve_absde_mc, RegressionBasis};
use crate::partition::TimePartition;
use crate::solver::{resolve_anticipated_query, solve_absde};
use crate::config::ExperimentConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Engine {
    Lattice,
    Mc,
}

impl std::fmt::Display for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Engine::Lattice => write!(f, "lattice"),
            Engine::Mc => write!(f, "mc"),
        }
    }
}

/// Default comparison tolerance for near-exact lattice runs.
pub const LATTICE_TOLERANCE: f64 = 1e-8;
/// Flat bias allowance added to 3*stderr for Monte Carlo runs.
pub const MC_BIAS_ALLOWANCE: f64 = 0.02;

/// Outcome of a Theorem-3.1-style comparison run.
#[derive(Clone, Debug)]
pub struct ComparisonReport {
    /// min over checked nodes of Y1 - Y2.
    pub min_diff: f64,
    /// (time, state, diff) wherever diff < -tolerance.
    pub violation_nodes: Vec<(f64, f64, f64)>,
    /// Node realizing the minimum: (time, state, y1, y2).
    pub min_node: (f64, f64, f64, f64),
    pub y0_pair: (f64, f64),
    pub conditions: ConditionReport,
    pub engine: Engine,
    pub tolerance: f64,
}

impl ComparisonReport {
    pub fn has_violation(&self) -> bool {
        !self.violation_nodes.is_empty()
    }

    /// Exit-code semantics: violation or refuted conditions.
    pub fn failed(&self) -> bool {
        self.has_violation() || self.conditions.is_refuted()
    }

    /// `record,time,state,y1,y2,diff` rows: `y0`, `min`, then violations.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("record,time,state,y1,y2,diff\n");
        out.push_str(&format!(
            "y0,{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            0.0,
            0.0,
            self.y0_pair.0,
            self.y0_pair.1,
            self.y0_pair.0 - self.y0_pair.1
        ));
        out.push_str(&format!(
            "min,{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            self.min_node.0, self.min_node.1, self.min_node.2, self.min_node.3, self.min_diff
        ));
        for (t, b, d) in &self.violation_nodes {
            out.push_str(&format!("violation,{t:.16e},{b:.16e},,,{d:.16e}\n"));
        }
        out
    }
}

impl std::fmt::Display for ComparisonReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "engine: {}", self.engine)?;
        writeln!(f, "order conditions: {}", self.conditions)?;
        writeln!(
            f,
            "Y0: {:.9} vs {:.9} (diff {:.3e})",
            self.y0_pair.0,
            self.y0_pair.1,
            self.y0_pair.0 - self.y0_pair.1
        )?;
        writeln!(
            f,
            "min over nodes of Y1 - Y2: {:.6e} at (t = {:.6}, state = {:.6})",
            self.min_diff, self.min_node.0, self.min_node.1
        )?;
        if self.has_violation() {
            writeln!(
                f,
                "VIOLATIONS: {} nodes below -{:.1e}",
                self.violation_nodes.len(),
                self.tolerance
            )?;
        } else {
            writeln!(f, "no violations below -{:.1e}", self.tolerance)?;
        }
        Ok(())
    }
}

/// Solve both equations of a comparison pair on a shared driver and scan
/// Y1 - Y2 over every node of `[0, T]`. Order conditions are checked first;
/// a refuted check is a report outcome, not an error.
pub fn run_comparison(cfg: &ExperimentConfig) -> Result<ComparisonReport> {
    let (p1, p2) = cfg.problem_pair()?;
    run_comparison_on(cfg, &p1, &p2)
}

/// Comparison run on explicitly built problems; `cfg` supplies only the
/// engine knobs (engine, seed, paths, basis degree, tolerance, samples).
pub fn run_comparison_on(
    cfg: &ExperimentConfig,
    p1: &crate::solver::AbsdeProblem,
    p2: &crate::solver::AbsdeProblem,
) -> Result<ComparisonReport> {
    if p1.grid != p2.grid {
        return Err(AbsdeError::InvalidInput(
            "comparison pair must share one grid".into(),
        ));
    }
    let lat = BinomialLattice::new(p1.grid);
    let conditions = check_order_conditions_sampled(
        &p1.generator,
        &p2.generator,
        &p1.terminal,
        &p2.terminal,
        &lat,
        &OrderCheckConfig {
            samples: cfg.samples,
            seed: cfg.seed,
            boxes: DomainBox {
                t: (0.0, cfg.t_horizon),
                ..DomainBox::default()
            },
            ..OrderCheckConfig::default()
        },
    )?;

    match cfg.engine {
        Engine::Lattice => {
            let s1 = solve_absde(p1)?;
            let s2 = solve_absde(p2)?;
            let tolerance = cfg.tol.unwrap_or(LATTICE_TOLERANCE);
            let grid = *s1.grid();
            let mut min_diff = f64::INFINITY;
            let mut min_node = (0.0, 0.0, 0.0, 0.0);
            let mut violations = Vec::new();
            for k in 0..=grid.index_of_t() {
                let t = grid.time_of(k);
                for j in 0..=k {
                    let diff = s1.y_at(k, j) - s2.y_at(k, j);
                    let state = lat.state(k, j);
                    if diff < min_diff {
                        min_diff = diff;
                        min_node = (t, state, s1.y_at(k, j), s2.y_at(k, j));
                    }
                    if diff < -tolerance {
                        violations.push((t, state, diff));
                    }
                }
            }
            Ok(ComparisonReport {
                min_diff,
                violation_nodes: violations,
                min_node,
                y0_pair: (s1.y0(), s2.y0()),
                conditions,
                engine: Engine::Lattice,
                tolerance,
            })
        }
        Engine::Mc => {
            let ensemble = simulate_paths(cfg.seed, cfg.paths, p1.grid)?;
            let basis = RegressionBasis::new(cfg.basis_degree)?;
            let m1 = solve_absde_mc(p1, &ensemble, &basis)?;
            let m2 = solve_absde_mc(p2, &ensemble, &basis)?;
            let tolerance = cfg
                .tol
                .unwrap_or(3.0 * m1.y0_stderr.max(m2.y0_stderr) + MC_BIAS_ALLOWANCE);
            let grid = p1.grid;
            let mut min_diff = f64::INFINITY;
            let mut min_node = (0.0, 0.0, 0.0, 0.0);
            let mut violations = Vec::new();
            for k in 0..=grid.index_of_t() {
                let t = grid.time_of(k);
                for p in 0..ensemble.n_paths() {
                    let diff = m1.y[k][p] - m2.y[k][p];
                    let state = ensemble.state(p, k);
                    if diff < min_diff {
                        min_diff = diff;
                        min_node = (t, state, m1.y[k][p], m2.y[k][p]);
                    }
                    if diff < -tolerance {
                        violations.push((t, state, diff));
                    }
                }
            }
            Ok(ComparisonReport {
                min_diff,
                violation_nodes: violations,
                min_node,
                y0_pair: (m1.y0_estimate, m2.y0_estimate),
                conditions,
                engine: Engine::Mc,
                tolerance,
            })
        }
    }
}

/// Discrete reading of the equality characterization: the left side is
/// Y1(0) = Y2(0); the right side is terminal equality at T plus generator
/// equality along the second solution at every grid node. Both directions
/// are reported independently; this checks co-occurrence, it proves nothing.
#[derive(Clone, Debug)]
pub struct EqualityReport {
    pub y0_pair: (f64, f64),
    pub left_holds: bool,
    pub xi_terminal_equal: bool,
    pub max_xi_gap: f64,
    pub generator_equal_along_second: bool,
    pub max_drift_gap: f64,
    pub tolerance: f64,
}

impl EqualityReport {
    pub fn right_holds(&self) -> bool {
        self.xi_terminal_equal && self.generator_equal_along_second
    }

    /// Both sides of the equivalence agree (co-occurrence confirmed).
    pub fn co_occurs(&self) -> bool {
        self.left_holds == self.right_holds()
    }
}

impl std::fmt::Display for EqualityReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "Y0 equality: {} ({:.9} vs {:.9})",
            self.left_holds, self.y0_pair.0, self.y0_pair.1
        )?;
        writeln!(
            f,
            "terminal xi equality at T: {} (max gap {:.3e})",
            self.xi_terminal_equal, self.max_xi_gap
        )?;
        writeln!(
            f,
            "generator equality along second solution: {} (max gap {:.3e})",
            self.generator_equal_along_second, self.max_drift_gap
        )?;
        write!(
            f,
            "co-occurrence: {}",
            if self.co_occurs() { "confirmed" } else { "BROKEN" }
        )
    }
}

/// Run the equality characterization on the exact (lattice) engine.
pub fn run_equality_check(cfg: &ExperimentConfig) -> Result<EqualityReport> {
    let (p1, p2) = cfg.problem_pair()?;
    run_equality_check_on(cfg, &p1, &p2)
}

/// Equality characterization on explicitly built problems.
pub fn run_equality_check_on(
    cfg: &ExperimentConfig,
    p1: &crate::solver::AbsdeProblem,
    p2: &crate::solver::AbsdeProblem,
) -> Result<EqualityReport> {
    let lat = BinomialLattice::new(p1.grid);
    let s1 = solve_absde(p1)?;
    let s2 = solve_absde(p2)?;
    let tolerance = cfg.tol.unwrap_or(LATTICE_TOLERANCE);
    let grid = p1.grid;

    let left_holds = (s1.y0() - s2.y0()).abs() <= tolerance;

    let n = grid.index_of_t();
    let t_horizon = grid.time_of(n);
    let mut max_xi_gap: f64 = 0.0;
    for j in 0..=n {
        let b = lat.state(n, j);
        max_xi_gap =
            max_xi_gap.max((p1.terminal.xi(t_horizon, b) - p2.terminal.xi(t_horizon, b)).abs());
    }

    let mut max_drift_gap: f64 = 0.0;
    for k in 0..n {
        let t = grid.time_of(k);
        for j in 0..=k {
            let q1 = resolve_anticipated_query(&s1, &lat, (k, j), &p1.delays)?;
            let q2 = resolve_anticipated_query(&s2, &lat, (k, j), &p2.delays)?;
            let (y2, z2) = (s2.y_at(k, j), s2.z_at(k, j));
            let a = p1.generator.eval(t, y2, z2, &q1);
            let b = p2.generator.eval(t, y2, z2, &q2);
            max_drift_gap = max_drift_gap.max((a - b).abs());
        }
    }

    Ok(EqualityReport {
        y0_pair: (s1.y0(), s2.y0()),
        left_holds,
        xi_terminal_equal: max_xi_gap <= tolerance,
        max_xi_gap,
        generator_equal_along_second: max_drift_gap <= tolerance,
        max_drift_gap,
        tolerance,
    })
}

/// One row of a convergence study.
#[derive(Clone, Copy, Debug)]
pub struct ConvergenceRow {
    pub n: usize,
    pub y0: f64,
    pub abs_error: f64,
    /// log2(err_prev / err_this); absent on the first row or when an error
    /// vanishes.
    pub order: Option<f64>,
}

/// Solve a registered fixture on the lattice across step counts and estimate
/// the empirical convergence order against its oracle value.
pub fn run_convergence_study(fixture_name: &str, n_list: &[usize]) -> Result<Vec<ConvergenceRow>> {
    let fix = fixture(fixture_name)?;
    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let problem = fix.build(n)?;
        let surface = solve_absde(&problem)?;
        let y0 = surface.y0();
        let abs_error = (y0 - fix.oracle_y0).abs();
        let order = rows.last().and_then(|prev| {
            if prev.abs_error > 0.0 && abs_error > 0.0 {
                Some((prev.abs_error / abs_error).log2())
            } else {
                None
            }
        });
        rows.push(ConvergenceRow {
            n,
            y0,
            abs_error,
            order,
        });
    }
    Ok(rows)
}

/// `n,y0,abs_error,order` CSV; empty order cell when unavailable.
pub fn convergence_csv(rows: &[ConvergenceRow]) -> String {
    let mut out = String::from("n,y0,abs_error,order\n");
    for r in rows {
        match r.order {
            Some(o) => out.push_str(&format!(
                "{},{:.16e},{:.16e},{:.16e}\n",
                r.n, r.y0, r.abs_error, o
            )),
            None => out.push_str(&format!("{},{:.16e},{:.16e},\n", r.n, r.y0, r.abs_error)),
        }
    }
    out
}

/// Condition-checker run for the CLI: the Theorem 3.1 order conditions and,
/// when `mode` is configured, the sufficient conditions of the remarks.
pub fn run_check_conditions(
    cfg: &ExperimentConfig,
) -> Result<(ConditionReport, Option<ConditionReport>)> {
    let (p1, p2) = cfg.problem_pair()?;
    let lat = BinomialLattice::new(p1.grid);
    let order = check_order_conditions_sampled(
        &p1.generator,
        &p2.generator,
        &p1.terminal,
        &p2.terminal,
        &lat,
        &OrderCheckConfig {
            samples: cfg.samples,
            seed: cfg.seed,
            boxes: DomainBox {
                t: (0.0, cfg.t_horizon),
                ..DomainBox::default()
            },
            ..OrderCheckConfig::default()
        },
    )?;
    let sufficient = match cfg.mode.as_deref() {
        None => None,
        Some(text) => {
            let mode = match text {
                "monotone_f1" => SufficientMode::MonotoneF1,
                "monotone_f2" => SufficientMode::MonotoneF2,
                "dominating" => {
                    let ftilde = cfg.ftilde.as_deref().ok_or_else(|| {
                        AbsdeError::Config("mode `dominating` needs key `ftilde`".into())
                    })?;
                    SufficientMode::Dominating(resolve_generator(ftilde, cfg.ftilde_lipschitz)?)
                }
                other => {
                    return Err(AbsdeError::Config(format!(
                        "mode must be monotone_f1 | monotone_f2 | dominating, got `{other}`"
                    )))
                }
            };
            Some(crate::generator::check_sufficient_conditions(
                &p1.generator,
                &p2.generator,
                &mode,
                &DomainBox {
                    t: (0.0, cfg.t_horizon),
                    ..DomainBox::default()
                },
                cfg.samples,
                cfg.seed,
            )?)
        }
    };
    Ok((order, sufficient))
}

/// Human-facing knot rendering: 12 significant digits, trailing zeros
/// trimmed (full 17-digit precision lives in the CSV output).
pub fn format_knot(v: f64) -> String {
    let s = format!("{v:.12e}");
    // Round-trip through the shortest representation of the 12-digit value.
    let rounded: f64 = s.parse().unwrap_or(v);
    let mut text = format!("{rounded}");
    if text == "-0" {
        text = "0".into();
    }
    text
}

pub fn knots_line(partition: &TimePartition) -> String {
    partition
        .knots
        .iter()
        .map(|&k| format_knot(k))
        .collect::<Vec<_>>()
        .join(",")
}

/// `index,time` CSV at full precision.
pub fn knots_csv(partition: &TimePartition) -> String {
    let mut out = String::from("index,time\n");
    for (i, k) in partition.knots.iter().enumerate() {
        out.push_str(&format!("{i},{k:.16e}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;
    use crate::partition::{compute_partition, DelayPair};

    fn example31_cfg(steps: usize) -> ExperimentConfig {
        parse_config(&format!(
            "T = 1\nK = 0.3\ndelta = 0.3\nf1 = example31_f1\nf2 = example31_f2\n\
             xi1 = 1\nxi2 = 0\nsteps = {steps}\nseed = 5\nsamples = 2000\n"
        ))
        .unwrap()
    }

    #[test]
    fn example31_comparison_passes_at_small_n() {
        let report = run_comparison(&example31_cfg(16)).unwrap();
        assert!(!report.conditions.is_refuted());
        assert!(report.min_diff >= -1e-8, "min_diff {}", report.min_diff);
        assert!(!report.has_violation());
        assert!(report.y0_pair.0 >= report.y0_pair.1);
        assert!(!report.failed());
    }

    #[test]
    fn identical_problems_have_exactly_zero_diff() {
        let cfg = parse_config(
            "T = 1\nK = 0.3\ndelta = 0.3\nf1 = example31_f1\nf2 = example31_f1\n\
             xi1 = 1\nxi2 = 1\nsteps = 16\nsamples = 500\n",
        )
        .unwrap();
        let report = run_comparison(&cfg).unwrap();
        assert_eq!(report.min_diff, 0.0);
        assert!(report.violation_nodes.is_empty());
        assert_eq!(report.y0_pair.0, report.y0_pair.1);
    }

    #[test]
    fn constant_gap_fixture_reports_refutation_and_negative_diff() {
        // f1 = E[theta] - 5 vs f2 = E[theta] + 5 with equal terminals and the
        // delay spanning the whole horizon: the drift gap integrates to
        // -10 * T exactly.
        let cfg = parse_config(
            "T = 1\nK = 1\ndelta = 1\nf1 = E[theta] - 5\nf2 = E[theta] + 5\n\
             xi1 = 1\nxi2 = 1\nsteps = 64\nsamples = 500\n",
        )
        .unwrap();
        let report = run_comparison(&cfg).unwrap();
        assert!(report.conditions.is_refuted());
        assert!(report.has_violation());
        assert!(report.failed());
        assert!(
            (report.min_diff + 10.0).abs() <= 0.5,
            "min_diff {}",
            report.min_diff
        );
        // Exact quadrature oracle: constant drift difference integrates
        // step by step, so Y0 differs by exactly 10.
        assert!(((report.y0_pair.0 - report.y0_pair.1) + 10.0).abs() < 1e-12);
    }

    #[test]
    fn equality_check_identical_and_perturbed() {
        let cfg = parse_config(
            "T = 1\nK = 0.5\ndelta = 0.5\nf1 = linear_anticipated\nf2 = linear_anticipated\n\
             xi1 = 1\nxi2 = 1\nsteps = 16\nsamples = 200\n",
        )
        .unwrap();
        let report = run_equality_check(&cfg).unwrap();
        assert!(report.left_holds);
        assert!(report.right_holds());
        assert!(report.co_occurs());

        // Different terminal levels break both sides.
        let cfg = parse_config(
            "T = 1\nK = 0.5\ndelta = 0.5\nf1 = linear_anticipated\nf2 = linear_anticipated\n\
             xi1 = 1.1\nxi2 = 1\nsteps = 16\nsamples = 200\n",
        )
        .unwrap();
        let report = run_equality_check(&cfg).unwrap();
        assert!(!report.left_holds);
        assert!(!report.right_holds());
        assert!(report.co_occurs());
    }

    #[test]
    fn equality_check_generator_gap_breaks_both_sides() {
        // Same terminals but a drift gap of at least ~0.4 at matched
        // arguments: Y0 must differ and the generator-equality side must
        // fail with it.
        let cfg = parse_config(
            "T = 1\nK = 0.3\ndelta = 0.3\nf1 = example31_f1\nf2 = example31_f2\n\
             xi1 = 1\nxi2 = 1\nsteps = 16\nsamples = 200\n",
        )
        .unwrap();
        let report = run_equality_check(&cfg).unwrap();
        assert!(!report.left_holds, "Y0 pair {:?}", report.y0_pair);
        assert!(report.xi_terminal_equal);
        assert!(!report.generator_equal_along_second);
        assert!(!report.right_holds());
        assert!(report.co_occurs());
    }

    #[test]
    fn convergence_study_exact_fixtures_have_zero_error() {
        let rows = run_convergence_study("martingale", &[8, 16, 32]).unwrap();
        for r in &rows {
            assert!(r.abs_error < 1e-12, "n = {}: err {}", r.n, r.abs_error);
            assert!(r.order.is_none());
        }
        let rows = run_convergence_study("constant-drift", &[8, 16, 32]).unwrap();
        for r in &rows {
            assert!(r.abs_error < 1e-12);
        }
        assert!(matches!(
            run_convergence_study("nope", &[8]),
            Err(AbsdeError::UnknownFixture { .. })
        ));
    }

    #[test]
    fn convergence_study_linear_anticipated_order() {
        let rows = run_convergence_study("linear-anticipated", &[8, 16, 32]).unwrap();
        assert!(rows[0].abs_error > rows[1].abs_error);
        assert!(rows[1].abs_error > rows[2].abs_error);
        for r in rows.iter().skip(1) {
            assert!(r.order.unwrap() >= 0.8, "order {:?}", r.order);
        }
        let csv = convergence_csv(&rows);
        assert!(csv.starts_with("n,y0,abs_error,order\n"));
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn check_conditions_with_sufficient_mode() {
        let cfg = parse_config(
            "T = 1\nK = 0.5\ndelta = 0.5\nf1 = example32_f1\nf2 = example32_f2\n\
             xi1 = 0\nxi2 = 0\nsteps = 8\nsamples = 2000\nmode = dominating\nftilde = example32_ftilde\n",
        )
        .unwrap();
        let (order, sufficient) = run_check_conditions(&cfg).unwrap();
        assert!(!order.is_refuted(), "{order}");
        assert!(!sufficient.unwrap().is_refuted());
    }

    #[test]
    fn knot_rendering_is_human_friendly() {
        let p = compute_partition(&DelayPair::constant(0.3, 0.3, 0.3, 1.0), 1.0, 1e-4).unwrap();
        assert_eq!(knots_line(&p), "1,0.7,0.4,0.1,0");
        let csv = knots_csv(&p);
        assert!(csv.starts_with("index,time\n"));
        assert_eq!(csv.lines().count(), 6);
    }
}
