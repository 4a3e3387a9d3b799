//! Generators f(t, y, z, theta, phi) with anticipated terms accessed through
//! a conditional-expectation query handle, the paper's example generators,
//! and sampled checkers for the Lipschitz/integrability hypotheses and the
//! ordering conditions behind the comparison theorem.
//!
//! Anticipated arguments are never handed to a generator as raw random
//! variables: the generator sees only an expectation functional
//! `h -> E[h(Y_{t+delta(t)}, Z_{t+zeta(t)})]`, which both backends (exact
//! lattice law, Monte Carlo regression) can implement.

use std::sync::Arc;

use crate::error::{AbsdeError, Result};
use crate::expr::{Expr, ExprContext, VarEnv};
use crate::lattice::{BinomialLattice, TimeGrid};
use crate::rng::Xoshiro256PlusPlus;

/// Expectation handle for the two anticipated slots.
///
/// Contract: the evaluator is linear and monotone in `h`, and constants are
/// fixed points (`h == c` returns `c`).
pub trait AnticipatedQuery {
    /// E at the current node of `h(Y_at_snapped_delta, Z_at_snapped_zeta)`.
    fn expect(&self, h: &dyn Fn(f64, f64) -> f64) -> f64;

    /// The two query times `(t + delta(t), t + zeta(t))` after grid snapping.
    fn query_times(&self) -> (f64, f64);
}

/// Degenerate query whose law is a single point; `expect` reduces to plain
/// evaluation. The checkers use it to turn anticipated slots into numbers.
#[derive(Clone, Copy, Debug)]
pub struct PointMassQuery {
    pub theta: f64,
    pub phi: f64,
    pub times: (f64, f64),
}

impl PointMassQuery {
    pub fn new(theta: f64, phi: f64, times: (f64, f64)) -> Self {
        Self { theta, phi, times }
    }
}

impl AnticipatedQuery for PointMassQuery {
    fn expect(&self, h: &dyn Fn(f64, f64) -> f64) -> f64 {
        h(self.theta, self.phi)
    }

    fn query_times(&self) -> (f64, f64) {
        self.times
    }
}

/// Finite joint law `(theta, phi, probability)`.
#[derive(Clone, Debug)]
pub struct DiscreteQuery {
    pub entries: Vec<(f64, f64, f64)>,
    pub times: (f64, f64),
}

impl AnticipatedQuery for DiscreteQuery {
    fn expect(&self, h: &dyn Fn(f64, f64) -> f64) -> f64 {
        self.entries
            .iter()
            .map(|&(th, ph, p)| p * h(th, ph))
            .sum()
    }

    fn query_times(&self) -> (f64, f64) {
        self.times
    }
}

pub type DriftFn = Arc<dyn Fn(f64, f64, f64, &dyn AnticipatedQuery) -> f64 + Send + Sync>;

/// A driver f with its declared Lipschitz constant from hypothesis (H1).
#[derive(Clone)]
pub struct GeneratorSpec {
    pub name: String,
    pub lipschitz: f64,
    drift: DriftFn,
}

impl std::fmt::Debug for GeneratorSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "GeneratorSpec({}, L = {})", self.name, self.lipschitz)
    }
}

impl GeneratorSpec {
    pub fn new(
        name: impl Into<String>,
        lipschitz: f64,
        drift: impl Fn(f64, f64, f64, &dyn AnticipatedQuery) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        let lip = lipschitz;
        if !(lip > 0.0) || !lip.is_finite() {
            return Err(AbsdeError::InvalidInput(format!(
                "declared Lipschitz constant must be positive, got {lip}"
            )));
        }
        Ok(Self {
            name: name.into(),
            lipschitz: lip,
            drift: Arc::new(drift),
        })
    }

    /// Build a generator from a drift expression (variables t, y, z and the
    /// E[..] forms).
    pub fn from_expr(source: &str, lipschitz: f64) -> Result<Self> {
        let expr = crate::expr::parse(source, ExprContext::Drift)?;
        Self::from_parsed_expr(source, expr, lipschitz)
    }

    pub fn from_parsed_expr(source: &str, expr: Expr, lipschitz: f64) -> Result<Self> {
        Self::new(source, lipschitz, move |t, y, z, q| {
            expr.eval(
                &VarEnv {
                    t,
                    y,
                    z,
                    ..Default::default()
                },
                Some(q),
            )
        })
    }

    pub fn eval(&self, t: f64, y: f64, z: f64, q: &dyn AnticipatedQuery) -> f64 {
        (self.drift)(t, y, z, q)
    }

    /// Identity used by the reflexive fast path of the order checker.
    pub fn same_drift_as(&self, other: &GeneratorSpec) -> bool {
        Arc::ptr_eq(&self.drift, &other.drift)
    }
}

/// Evaluate a generator's drift at one argument tuple.
pub fn evaluate_generator(
    g: &GeneratorSpec,
    t: f64,
    y: f64,
    z: f64,
    q: &dyn AnticipatedQuery,
) -> f64 {
    g.eval(t, y, z, q)
}

type NodeFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Terminal segments xi (for Y) and eta (for Z) on `[T, T+K]`, as adapted
/// node functions of (time, Brownian state).
#[derive(Clone)]
pub struct TerminalData {
    xi: NodeFn,
    eta: NodeFn,
}

impl std::fmt::Debug for TerminalData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "TerminalData(..)")
    }
}

impl TerminalData {
    pub fn new(
        xi: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        eta: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            xi: Arc::new(xi),
            eta: Arc::new(eta),
        }
    }

    pub fn constant(xi: f64, eta: f64) -> Self {
        Self::new(move |_, _| xi, move |_, _| eta)
    }

    pub fn xi(&self, t: f64, b: f64) -> f64 {
        (self.xi)(t, b)
    }

    pub fn eta(&self, t: f64, b: f64) -> f64 {
        (self.eta)(t, b)
    }

    pub fn same_data_as(&self, other: &TerminalData) -> bool {
        Arc::ptr_eq(&self.xi, &other.xi) && Arc::ptr_eq(&self.eta, &other.eta)
    }

    /// Largest time-direction jump of xi across adjacent terminal grid times,
    /// probed on a fixed state sample. The well-posedness theorem wants xi
    /// continuous in t; large jumps are accepted but worth flagging.
    pub fn max_time_jump(&self, lat: &BinomialLattice) -> f64 {
        let grid = lat.grid();
        let mut worst: f64 = 0.0;
        let states: Vec<f64> = (-4..=4).map(|i| i as f64 * 0.5).collect();
        for k in grid.index_of_t()..grid.n_steps_total() {
            let (t0, t1) = (grid.time_of(k), grid.time_of(k + 1));
            for &b in &states {
                worst = worst.max((self.xi(t1, b) - self.xi(t0, b)).abs());
            }
        }
        worst
    }
}

// ---------------------------------------------------------------------------
// Condition reports
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    /// No violation found. Sampling cannot prove the condition, so this is
    /// always "pass, inconclusive in the universal sense".
    Pass,
    Refuted,
    /// No usable samples.
    Inconclusive,
}

/// Which of the three ordering patterns a witness violates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OrderPattern {
    /// Anticipated-Z slots filled from the terminal eta segments.
    TerminalEta,
    /// Anticipated-Z slots filled with variation-process stand-ins.
    Variation,
    /// Anticipated-Y slots pinned to the terminal xi segments.
    TerminalXiVariation,
}

impl std::fmt::Display for OrderPattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OrderPattern::TerminalEta => write!(f, "ordering with terminal eta in the Z slot"),
            OrderPattern::Variation => write!(f, "ordering with variation stand-ins in the Z slot"),
            OrderPattern::TerminalXiVariation => {
                write!(f, "ordering with terminal xi in the Y slot")
            }
        }
    }
}

/// A violating sample; re-evaluating it must reproduce the violation.
#[derive(Clone, Debug)]
pub enum Witness {
    Order {
        pattern: OrderPattern,
        t: f64,
        y: f64,
        z: f64,
        theta1: f64,
        theta2: f64,
        phi1: f64,
        phi2: f64,
        f1_value: f64,
        f2_value: f64,
    },
    Lipschitz {
        t: f64,
        first: (f64, f64, f64, f64),
        second: (f64, f64, f64, f64),
        quotient: f64,
        declared: f64,
    },
    Pointwise {
        t: f64,
        y: f64,
        z: f64,
        theta: f64,
        upper_name: String,
        lower_name: String,
        upper_value: f64,
        lower_value: f64,
    },
    Monotone {
        name: String,
        t: f64,
        y: f64,
        z: f64,
        theta_hi: f64,
        theta_lo: f64,
        value_hi: f64,
        value_lo: f64,
    },
}

impl std::fmt::Display for Witness {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Witness::Order {
                pattern,
                t,
                y,
                z,
                theta1,
                theta2,
                phi1,
                phi2,
                f1_value,
                f2_value,
            } => write!(
                f,
                "{pattern}: t={t:.6} y={y:.6} z={z:.6} theta=({theta1:.6}, {theta2:.6}) phi=({phi1:.6}, {phi2:.6}) -> f1={f1_value:.9} < f2={f2_value:.9}"
            ),
            Witness::Lipschitz {
                t,
                first,
                second,
                quotient,
                declared,
            } => write!(
                f,
                "t={t:.6}: difference quotient {quotient:.9} exceeds declared L={declared} between {first:?} and {second:?}"
            ),
            Witness::Pointwise {
                t,
                y,
                z,
                theta,
                upper_name,
                lower_name,
                upper_value,
                lower_value,
            } => write!(
                f,
                "t={t:.6} y={y:.6} z={z:.6} theta={theta:.6}: {upper_name}={upper_value:.9} < {lower_name}={lower_value:.9}"
            ),
            Witness::Monotone {
                name,
                t,
                y,
                z,
                theta_hi,
                theta_lo,
                value_hi,
                value_lo,
            } => write!(
                f,
                "{name} not increasing at t={t:.6} y={y:.6} z={z:.6}: f({theta_hi:.6})={value_hi:.9} < f({theta_lo:.6})={value_lo:.9}"
            ),
        }
    }
}

/// Result of a sampled condition check. `Refuted` always carries a witness.
#[derive(Clone, Debug)]
pub struct ConditionReport {
    pub verdict: Verdict,
    pub witness: Option<Witness>,
    pub samples_used: usize,
    /// How to read the verdict (sampling caveats, stand-in interpretation).
    pub note: String,
}

impl ConditionReport {
    pub fn is_refuted(&self) -> bool {
        self.verdict == Verdict::Refuted
    }

    fn pass(samples_used: usize, note: impl Into<String>) -> Self {
        Self {
            verdict: Verdict::Pass,
            witness: None,
            samples_used,
            note: note.into(),
        }
    }

    fn refuted(samples_used: usize, witness: Witness, note: impl Into<String>) -> Self {
        Self {
            verdict: Verdict::Refuted,
            witness: Some(witness),
            samples_used,
            note: note.into(),
        }
    }
}

impl std::fmt::Display for ConditionReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.verdict {
            Verdict::Pass => write!(f, "pass ({} samples; {})", self.samples_used, self.note),
            Verdict::Inconclusive => {
                write!(f, "inconclusive ({} samples; {})", self.samples_used, self.note)
            }
            Verdict::Refuted => {
                write!(f, "REFUTED ({} samples; {}):", self.samples_used, self.note)?;
                if let Some(w) = &self.witness {
                    write!(f, " {w}")?;
                }
                Ok(())
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Sampled checkers
// ---------------------------------------------------------------------------

/// Sampling box for the checker inputs. Defaults cover the trigonometric
/// example generators over a full period.
#[derive(Clone, Copy, Debug)]
pub struct DomainBox {
    pub t: (f64, f64),
    pub y: (f64, f64),
    pub z: (f64, f64),
    pub theta: (f64, f64),
    pub phi: (f64, f64),
}

impl Default for DomainBox {
    fn default() -> Self {
        Self {
            t: (0.0, 1.0),
            y: (-5.0, 5.0),
            z: (-5.0, 5.0),
            theta: (-5.0, 5.0),
            phi: (-5.0, 5.0),
        }
    }
}

fn rel_tol(scale: f64) -> f64 {
    1e-9 * (1.0 + scale.abs())
}

/// Sampled refutation check of the declared Lipschitz constant (H1).
/// Anticipated slots are point masses, so the conditional expectation in the
/// hypothesis reduces to plain evaluation.
pub fn check_lipschitz_sampled(
    g: &GeneratorSpec,
    domain: &DomainBox,
    sample_count: usize,
    seed: u64,
) -> Result<ConditionReport> {
    if sample_count < 2 {
        return Err(AbsdeError::InvalidInput(
            "Lipschitz check needs at least 2 samples".into(),
        ));
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let note = "sampled difference quotients; pass is not a proof";
    let mut used = 0;
    for i in 0..sample_count {
        let t = rng.uniform_in(domain.t.0, domain.t.1);
        let a = (
            rng.uniform_in(domain.y.0, domain.y.1),
            rng.uniform_in(domain.z.0, domain.z.1),
            rng.uniform_in(domain.theta.0, domain.theta.1),
            rng.uniform_in(domain.phi.0, domain.phi.1),
        );
        // Cycle through single-coordinate perturbations (they expose the
        // per-slot slopes exactly) with every fifth pair fully random.
        let mut b = a;
        match i % 5 {
            0 => b.0 = rng.uniform_in(domain.y.0, domain.y.1),
            1 => b.1 = rng.uniform_in(domain.z.0, domain.z.1),
            2 => b.2 = rng.uniform_in(domain.theta.0, domain.theta.1),
            3 => b.3 = rng.uniform_in(domain.phi.0, domain.phi.1),
            _ => {
                b = (
                    rng.uniform_in(domain.y.0, domain.y.1),
                    rng.uniform_in(domain.z.0, domain.z.1),
                    rng.uniform_in(domain.theta.0, domain.theta.1),
                    rng.uniform_in(domain.phi.0, domain.phi.1),
                );
            }
        }
        let dist = (a.0 - b.0).abs() + (a.1 - b.1).abs() + (a.2 - b.2).abs() + (a.3 - b.3).abs();
        if dist < 1e-12 {
            continue;
        }
        used += 1;
        let fa = g.eval(t, a.0, a.1, &PointMassQuery::new(a.2, a.3, (t, t)));
        let fb = g.eval(t, b.0, b.1, &PointMassQuery::new(b.2, b.3, (t, t)));
        let quotient = (fa - fb).abs() / dist;
        if quotient > g.lipschitz * (1.0 + 1e-9) {
            return Ok(ConditionReport::refuted(
                used,
                Witness::Lipschitz {
                    t,
                    first: a,
                    second: b,
                    quotient,
                    declared: g.lipschitz,
                },
                note,
            ));
        }
    }
    Ok(ConditionReport::pass(used, note))
}

/// Riemann sum of |f(s, 0, 0, 0, 0)|^2 over `[0, T]` (hypothesis (H2)).
/// Always finite for finite drift; reported for the record.
pub fn check_square_integrability(g: &GeneratorSpec, grid: &TimeGrid) -> f64 {
    let dt = grid.step();
    (0..grid.index_of_t())
        .map(|k| {
            let t = grid.time_of(k);
            let v = g.eval(t, 0.0, 0.0, &PointMassQuery::new(0.0, 0.0, (t, t)));
            v * v * dt
        })
        .sum()
}

/// Configuration for the Theorem 3.1 order-condition checker.
#[derive(Clone, Copy, Debug)]
pub struct OrderCheckConfig {
    pub samples: usize,
    pub seed: u64,
    pub boxes: DomainBox,
    /// Largest theta-gap used for the ordered anticipated pairs.
    pub max_theta_gap: f64,
}

impl Default for OrderCheckConfig {
    fn default() -> Self {
        Self {
            samples: 10_000,
            seed: 0x5EED_CAFE,
            boxes: DomainBox::default(),
            max_theta_gap: 2.0,
        }
    }
}

const ORDER_NOTE: &str = "sampled ordered pairs; variation stand-ins are increment projections, an interpretation of d<theta,B>/dr; pass is not a proof";

/// Sampled check of the three ordering patterns of the comparison theorem.
///
/// Precondition (refused otherwise): the terminal xi segments are ordered on
/// every lattice node of `[T, T+K]`. A fully identical pair (same drift, same
/// terminal data objects) passes by reflexivity, since the admissible test
/// family then collapses onto shared data.
pub fn check_order_conditions_sampled(
    g1: &GeneratorSpec,
    g2: &GeneratorSpec,
    terminal1: &TerminalData,
    terminal2: &TerminalData,
    lat: &BinomialLattice,
    cfg: &OrderCheckConfig,
) -> Result<ConditionReport> {
    let grid = lat.grid();
    let t_horizon = grid.time_of(grid.index_of_t());

    // Precondition: xi^(1) >= xi^(2) on all terminal nodes.
    for k in grid.index_of_t()..=grid.n_steps_total() {
        let t = grid.time_of(k);
        for j in 0..lat.nodes_at(k) {
            let b = lat.state(k, j);
            let (x1, x2) = (terminal1.xi(t, b), terminal2.xi(t, b));
            if x1 < x2 - rel_tol(x1.abs().max(x2.abs())) {
                return Err(AbsdeError::PreconditionFailed {
                    detail: format!(
                        "terminal ordering violated at node (t={t:.6}, state={b:.6}): xi1={x1:.9} < xi2={x2:.9}"
                    ),
                });
            }
        }
    }

    if g1.same_drift_as(g2) && terminal1.same_data_as(terminal2) {
        return Ok(ConditionReport::pass(
            0,
            "identical pair: conditions hold by reflexivity along the shared data",
        ));
    }

    let mut rng = Xoshiro256PlusPlus::seed_from_u64(cfg.seed);
    let boxes = cfg.boxes;
    let terminal_steps = grid.n_steps_total() - grid.index_of_t() + 1;

    let mut used = 0usize;
    let check = |t: f64,
                     y: f64,
                     z: f64,
                     theta1: f64,
                     theta2: f64,
                     phi1: f64,
                     phi2: f64,
                     pattern: OrderPattern|
     -> Option<Witness> {
        let f1v = g1.eval(t, y, z, &PointMassQuery::new(theta1, phi1, (t, t)));
        let f2v = g2.eval(t, y, z, &PointMassQuery::new(theta2, phi2, (t, t)));
        if f1v < f2v - rel_tol(f1v.abs().max(f2v.abs())) {
            Some(Witness::Order {
                pattern,
                t,
                y,
                z,
                theta1,
                theta2,
                phi1,
                phi2,
                f1_value: f1v,
                f2_value: f2v,
            })
        } else {
            None
        }
    };

    // Canonical probe at the origin, then the seeded sweep.
    for i in 0..=cfg.samples {
        let (t, y, z, theta2, gap, w1, w2, node_a, node_b);
        if i == 0 {
            t = 0.0;
            y = 0.0;
            z = 0.0;
            theta2 = 0.0;
            gap = 0.0;
            w1 = 0.0;
            w2 = 0.0;
            node_a = (grid.index_of_t(), grid.index_of_t() / 2);
            node_b = node_a;
        } else {
            t = rng.uniform_in(0.0, t_horizon);
            y = rng.uniform_in(boxes.y.0, boxes.y.1);
            z = rng.uniform_in(boxes.z.0, boxes.z.1);
            theta2 = rng.uniform_in(boxes.theta.0, boxes.theta.1);
            gap = rng.uniform_in(0.0, cfg.max_theta_gap);
            w1 = rng.uniform_in(boxes.phi.0, boxes.phi.1);
            w2 = rng.uniform_in(boxes.phi.0, boxes.phi.1);
            let ka = grid.index_of_t() + (rng.next_u64() as usize) % terminal_steps;
            let kb = grid.index_of_t() + (rng.next_u64() as usize) % terminal_steps;
            node_a = (ka, (rng.next_u64() as usize) % lat.nodes_at(ka));
            node_b = (kb, (rng.next_u64() as usize) % lat.nodes_at(kb));
        }
        let theta1 = theta2 + gap;
        used += 1;

        // Terminal values entering the eta / pinned-xi slots.
        let (ra, ba) = (grid.time_of(node_a.0), lat.state(node_a.0, node_a.1));
        let (rb, bb) = (grid.time_of(node_b.0), lat.state(node_b.0, node_b.1));
        let eta_pair = (terminal1.eta(ra, ba), terminal2.eta(ra, ba));
        let xi_pair = (terminal1.xi(rb, bb), terminal2.xi(rb, bb));

        let hit = check(t, y, z, theta1, theta2, eta_pair.0, eta_pair.1, OrderPattern::TerminalEta)
            .or_else(|| check(t, y, z, theta1, theta2, w1, w2, OrderPattern::Variation))
            .or_else(|| {
                check(
                    t,
                    y,
                    z,
                    xi_pair.0,
                    xi_pair.1,
                    w1,
                    w2,
                    OrderPattern::TerminalXiVariation,
                )
            });
        if let Some(witness) = hit {
            return Ok(ConditionReport::refuted(used, witness, ORDER_NOTE));
        }
    }
    Ok(ConditionReport::pass(used, ORDER_NOTE))
}

/// Replay an order witness against the two generators; returns the pair of
/// drift values, which must reproduce the violation bit for bit.
pub fn replay_order_witness(g1: &GeneratorSpec, g2: &GeneratorSpec, w: &Witness) -> Option<(f64, f64)> {
    if let Witness::Order {
        t,
        y,
        z,
        theta1,
        theta2,
        phi1,
        phi2,
        ..
    } = w
    {
        let f1 = g1.eval(*t, *y, *z, &PointMassQuery::new(*theta1, *phi1, (*t, *t)));
        let f2 = g2.eval(*t, *y, *z, &PointMassQuery::new(*theta2, *phi2, (*t, *t)));
        Some((f1, f2))
    } else {
        None
    }
}

/// Which sufficient condition from the remarks to verify.
#[derive(Clone, Debug)]
pub enum SufficientMode {
    /// f1 increasing in the anticipated-Y slot.
    MonotoneF1,
    /// f2 increasing in the anticipated-Y slot (the Peng-Yang case).
    MonotoneF2,
    /// A sandwich f1 >= ftilde >= f2 with ftilde increasing.
    Dominating(GeneratorSpec),
}

/// Probe whether the generator's output reacts to the anticipated-Z slot.
pub fn depends_on_anticipated_z(g: &GeneratorSpec, seed: u64) -> bool {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    for i in 0..48 {
        let (t, y, z, theta) = if i == 0 {
            (0.0, 0.0, 0.0, 0.0)
        } else {
            (
                rng.uniform_in(0.0, 1.0),
                rng.uniform_in(-5.0, 5.0),
                rng.uniform_in(-5.0, 5.0),
                rng.uniform_in(-5.0, 5.0),
            )
        };
        let a = g.eval(t, y, z, &PointMassQuery::new(theta, 0.37, (t, t)));
        let b = g.eval(t, y, z, &PointMassQuery::new(theta, -1.93, (t, t)));
        if (a - b).abs() > rel_tol(a.abs().max(b.abs())) {
            return true;
        }
    }
    false
}

/// Probe whether the generator's output reacts to its query at all.
pub fn depends_on_query(g: &GeneratorSpec, seed: u64) -> bool {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    for i in 0..48 {
        let (t, y, z) = if i == 0 {
            (0.0, 0.0, 0.0)
        } else {
            (
                rng.uniform_in(0.0, 1.0),
                rng.uniform_in(-5.0, 5.0),
                rng.uniform_in(-5.0, 5.0),
            )
        };
        let a = g.eval(t, y, z, &PointMassQuery::new(0.41, 0.37, (t, t)));
        let b = g.eval(t, y, z, &PointMassQuery::new(-2.17, -1.93, (t, t)));
        if (a - b).abs() > rel_tol(a.abs().max(b.abs())) {
            return true;
        }
    }
    false
}

/// Sampled check of the sufficient conditions of the remarks: pointwise
/// ordering on equal anticipated arguments plus monotonicity of the
/// designated function (or the dominating sandwich).
///
/// All modes require independence of the anticipated-Z slot; a probe rejects
/// generators that react to it.
pub fn check_sufficient_conditions(
    g1: &GeneratorSpec,
    g2: &GeneratorSpec,
    mode: &SufficientMode,
    domain: &DomainBox,
    sample_count: usize,
    seed: u64,
) -> Result<ConditionReport> {
    for g in [g1, g2] {
        if depends_on_anticipated_z(g, seed ^ 0xA5A5) {
            return Err(AbsdeError::AnticipatedZDependence {
                name: g.name.clone(),
            });
        }
    }
    if let SufficientMode::Dominating(mid) = mode {
        if depends_on_anticipated_z(mid, seed ^ 0xA5A5) {
            return Err(AbsdeError::AnticipatedZDependence {
                name: mid.name.clone(),
            });
        }
    }

    let note = "sampled sufficient conditions; pass is not a proof";
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut used = 0usize;

    let eval = |g: &GeneratorSpec, t: f64, y: f64, z: f64, theta: f64| {
        g.eval(t, y, z, &PointMassQuery::new(theta, 0.0, (t, t)))
    };
    let pointwise = |upper: &GeneratorSpec,
                     lower: &GeneratorSpec,
                     t: f64,
                     y: f64,
                     z: f64,
                     theta: f64|
     -> Option<Witness> {
        let (hi, lo) = (eval(upper, t, y, z, theta), eval(lower, t, y, z, theta));
        if hi < lo - rel_tol(hi.abs().max(lo.abs())) {
            Some(Witness::Pointwise {
                t,
                y,
                z,
                theta,
                upper_name: upper.name.clone(),
                lower_name: lower.name.clone(),
                upper_value: hi,
                lower_value: lo,
            })
        } else {
            None
        }
    };
    let monotone = |g: &GeneratorSpec, t: f64, y: f64, z: f64, th_lo: f64, gap: f64| -> Option<Witness> {
        let th_hi = th_lo + gap;
        let (hi, lo) = (eval(g, t, y, z, th_hi), eval(g, t, y, z, th_lo));
        if hi < lo - rel_tol(hi.abs().max(lo.abs())) {
            Some(Witness::Monotone {
                name: g.name.clone(),
                t,
                y,
                z,
                theta_hi: th_hi,
                theta_lo: th_lo,
                value_hi: hi,
                value_lo: lo,
            })
        } else {
            None
        }
    };

    for i in 0..=sample_count {
        let (t, y, z, theta, gap) = if i == 0 {
            (0.0, 0.0, 0.0, 0.0, 1.0)
        } else {
            (
                rng.uniform_in(domain.t.0, domain.t.1),
                rng.uniform_in(domain.y.0, domain.y.1),
                rng.uniform_in(domain.z.0, domain.z.1),
                rng.uniform_in(domain.theta.0, domain.theta.1),
                rng.uniform_in(0.0, 2.0),
            )
        };
        used += 1;
        let hit = match mode {
            SufficientMode::MonotoneF1 => {
                pointwise(g1, g2, t, y, z, theta).or_else(|| monotone(g1, t, y, z, theta, gap))
            }
            SufficientMode::MonotoneF2 => {
                pointwise(g1, g2, t, y, z, theta).or_else(|| monotone(g2, t, y, z, theta, gap))
            }
            SufficientMode::Dominating(mid) => pointwise(g1, mid, t, y, z, theta)
                .or_else(|| pointwise(mid, g2, t, y, z, theta))
                .or_else(|| monotone(mid, t, y, z, theta, gap)),
        };
        if let Some(witness) = hit {
            return Ok(ConditionReport::refuted(used, witness, note));
        }
    }
    Ok(ConditionReport::pass(used, note))
}

// ---------------------------------------------------------------------------
// Built-in generator registry
// ---------------------------------------------------------------------------

/// Declared Lipschitz constant assigned to user expression drifts unless the
/// configuration overrides it.
pub const DEFAULT_EXPR_LIPSCHITZ: f64 = 10.0;

/// Resolve a generator by registry name, `constant(c)`, or as a drift
/// expression.
pub fn resolve_generator(spec_text: &str, lipschitz_override: Option<f64>) -> Result<GeneratorSpec> {
    let name = spec_text.trim();
    let with_l = |l: f64| lipschitz_override.unwrap_or(l);
    match name {
        "zero" => GeneratorSpec::new("zero", with_l(1.0), |_, _, _, _| 0.0),
        "linear_anticipated" => GeneratorSpec::new("linear_anticipated", with_l(1.0), |_, _, _, q| {
            q.expect(&|theta, _| theta)
        }),
        "example31_f1" => GeneratorSpec::new("example31_f1", with_l(3.0), |_, _, _, q| {
            q.expect(&|theta, phi| theta + (2.0 * theta).sin() + phi.abs() + 2.0)
        }),
        "example31_f2" => GeneratorSpec::new("example31_f2", with_l(3.0), |_, _, _, q| {
            q.expect(&|theta, phi| theta + 2.0 * theta.cos().abs() + phi.sin() - 2.0)
        }),
        "example32_f1" => GeneratorSpec::new("example32_f1", with_l(3.0), |_, _, _, q| {
            q.expect(&|theta, _| theta + 2.0 * theta.cos() + 1.0)
        }),
        "example32_ftilde" => GeneratorSpec::new("example32_ftilde", with_l(2.0), |_, _, _, q| {
            q.expect(&|theta, _| theta + theta.cos())
        }),
        "example32_f2" => GeneratorSpec::new("example32_f2", with_l(3.0), |_, _, _, q| {
            q.expect(&|theta, _| theta + (2.0 * theta).sin() - 2.0)
        }),
        _ => {
            if let Some(inner) = name.strip_prefix("constant(").and_then(|s| s.strip_suffix(')')) {
                let c: f64 = inner.trim().parse().map_err(|_| AbsdeError::UnknownGenerator {
                    name: name.to_string(),
                })?;
                if !c.is_finite() {
                    return Err(AbsdeError::UnknownGenerator {
                        name: name.to_string(),
                    });
                }
                return GeneratorSpec::new(name, with_l(1.0), move |_, _, _, _| c);
            }
            // Not a registry name: treat as a drift expression.
            match crate::expr::parse(name, ExprContext::Drift) {
                Ok(expr) => GeneratorSpec::from_parsed_expr(name, expr, with_l(DEFAULT_EXPR_LIPSCHITZ)),
                Err(e) => Err(AbsdeError::Expr(format!(
                    "`{name}` is neither a registry generator nor a valid drift expression ({e})"
                ))),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::build_grid;

    fn pm(theta: f64, phi: f64) -> PointMassQuery {
        PointMassQuery::new(theta, phi, (0.0, 0.0))
    }

    #[test]
    fn example31_generators_at_degenerate_query() {
        let f1 = resolve_generator("example31_f1", None).unwrap();
        let f2 = resolve_generator("example31_f2", None).unwrap();
        // x + sin(2x) + |u| + 2 at zeros.
        assert_eq!(f1.eval(0.3, 1.0, -1.0, &pm(0.0, 0.0)), 2.0);
        // y + 2|cos y| + sin v - 2 at zeros.
        assert_eq!(f2.eval(0.3, 1.0, -1.0, &pm(0.0, 0.0)), 0.0);
        let zero = resolve_generator("zero", None).unwrap();
        assert_eq!(zero.eval(0.5, 2.0, 3.0, &pm(4.0, 5.0)), 0.0);
    }

    #[test]
    fn registry_covers_documented_names() {
        for name in [
            "example31_f1",
            "example31_f2",
            "example32_f1",
            "example32_ftilde",
            "example32_f2",
            "zero",
            "constant(2.5)",
            "linear_anticipated",
        ] {
            let g = resolve_generator(name, None).unwrap();
            assert!(g.lipschitz > 0.0);
        }
        let c = resolve_generator("constant(-1.5)", None).unwrap();
        assert_eq!(c.eval(0.0, 0.0, 0.0, &pm(9.0, 9.0)), -1.5);
        assert!(resolve_generator("no_such_generator!!", None).is_err());
        // Expression fallback.
        let e = resolve_generator("y + EY", None).unwrap();
        assert_eq!(e.eval(0.0, 2.0, 0.0, &pm(3.0, 0.0)), 5.0);
    }

    #[test]
    fn discrete_query_is_linear_monotone_and_fixes_constants() {
        let q = DiscreteQuery {
            entries: vec![(1.0, 0.0, 0.25), (2.0, 1.0, 0.5), (3.0, -1.0, 0.25)],
            times: (0.5, 0.5),
        };
        assert_eq!(q.expect(&|_, _| 7.5), 7.5);
        let a = q.expect(&|th, _| th);
        let b = q.expect(&|th, _| 2.0 * th + 1.0);
        assert!((b - (2.0 * a + 1.0)).abs() < 1e-15);
        // Monotone: h1 >= h2 pointwise implies E[h1] >= E[h2].
        let lo = q.expect(&|th, _| th.sin());
        let hi = q.expect(&|th, _| th.sin() + 0.1);
        assert!(hi >= lo);
    }

    #[test]
    fn lipschitz_checker_examples() {
        let steep = GeneratorSpec::new("2y", 1.0, |_, y, _, _, | 2.0 * y).unwrap();
        let report = check_lipschitz_sampled(&steep, &DomainBox::default(), 500, 11).unwrap();
        assert!(report.is_refuted());
        match report.witness.as_ref().unwrap() {
            Witness::Lipschitz { quotient, .. } => {
                assert!((quotient - 2.0).abs() < 1e-6, "quotient {quotient}")
            }
            w => panic!("unexpected witness {w:?}"),
        }

        let ok = GeneratorSpec::new("2y", 2.0, |_, y, _, _| 2.0 * y).unwrap();
        let report = check_lipschitz_sampled(&ok, &DomainBox::default(), 500, 11).unwrap();
        assert!(!report.is_refuted());

        // Example 3.2 middle function theta + cos(theta): max slope is 2
        // (dense 1-d scan oracle below), so declared L = 2 passes.
        let mid = resolve_generator("example32_ftilde", None).unwrap();
        let report = check_lipschitz_sampled(&mid, &DomainBox::default(), 2000, 13).unwrap();
        assert!(!report.is_refuted());
        let mut max_slope: f64 = 0.0;
        let h = 1e-5;
        let m = |x: f64| x + x.cos();
        let mut x = -6.0;
        while x < 6.0 {
            max_slope = max_slope.max(((m(x + h) - m(x)) / h).abs());
            x += 1e-3;
        }
        assert!((max_slope - 2.0).abs() < 1e-3, "scan slope {max_slope}");
    }

    #[test]
    fn square_integrability_examples() {
        let grid = build_grid(1.0, 0.0, 8).unwrap();
        let zero = resolve_generator("zero", None).unwrap();
        assert_eq!(check_square_integrability(&zero, &grid), 0.0);
        let two = resolve_generator("constant(2)", None).unwrap();
        assert!((check_square_integrability(&two, &grid) - 4.0).abs() < 1e-14);
        let f1 = resolve_generator("example31_f1", None).unwrap();
        assert!((check_square_integrability(&f1, &grid) - 4.0).abs() < 1e-14);
    }

    #[test]
    fn order_conditions_pass_on_example31_pair() {
        let lat = BinomialLattice::new(build_grid(1.0, 0.3, 16).unwrap());
        let g1 = resolve_generator("example31_f1", None).unwrap();
        let g2 = resolve_generator("example31_f2", None).unwrap();
        let t1 = TerminalData::constant(1.0, 0.0);
        let t2 = TerminalData::constant(0.0, 0.0);
        let report = check_order_conditions_sampled(
            &g1,
            &g2,
            &t1,
            &t2,
            &lat,
            &OrderCheckConfig::default(),
        )
        .unwrap();
        assert!(!report.is_refuted(), "{report}");
    }

    #[test]
    fn order_conditions_refute_swapped_pair_with_replayable_witness() {
        let lat = BinomialLattice::new(build_grid(1.0, 0.3, 16).unwrap());
        let g1 = resolve_generator("example31_f2", None).unwrap(); // swapped
        let g2 = resolve_generator("example31_f1", None).unwrap();
        let t1 = TerminalData::constant(0.0, 0.0);
        let t2 = TerminalData::constant(0.0, 0.0);
        let report = check_order_conditions_sampled(
            &g1,
            &g2,
            &t1,
            &t2,
            &lat,
            &OrderCheckConfig::default(),
        )
        .unwrap();
        assert!(report.is_refuted());
        // The canonical zero probe already violates: 0 vs 2.
        let w = report.witness.as_ref().unwrap();
        let (f1v, f2v) = replay_order_witness(&g1, &g2, w).unwrap();
        match w {
            Witness::Order {
                f1_value, f2_value, ..
            } => {
                assert_eq!(f1v, *f1_value);
                assert_eq!(f2v, *f2_value);
                assert!(f1v < f2v);
            }
            _ => panic!("wrong witness kind"),
        }
    }

    #[test]
    fn order_conditions_identical_pair_passes_reflexively() {
        let lat = BinomialLattice::new(build_grid(1.0, 0.3, 8).unwrap());
        // A decreasing, anticipated-Z-dependent generator: only reflexivity
        // can make the pair pass.
        let g = GeneratorSpec::new("awkward", 2.0, |_, _, _, q: &dyn AnticipatedQuery| {
            q.expect(&|th, ph| -th + ph.sin())
        })
        .unwrap();
        let tau = TerminalData::new(|t, b| t + b.sin(), |_, b| b);
        let report = check_order_conditions_sampled(
            &g,
            &g.clone(),
            &tau,
            &tau.clone(),
            &lat,
            &OrderCheckConfig::default(),
        )
        .unwrap();
        assert!(!report.is_refuted(), "{report}");
    }

    #[test]
    fn order_conditions_refuse_unordered_terminals() {
        let lat = BinomialLattice::new(build_grid(1.0, 0.3, 8).unwrap());
        let g1 = resolve_generator("example31_f1", None).unwrap();
        let g2 = resolve_generator("example31_f2", None).unwrap();
        let t1 = TerminalData::constant(0.0, 0.0);
        let t2 = TerminalData::constant(0.5, 0.0);
        let err = check_order_conditions_sampled(
            &g1,
            &g2,
            &t1,
            &t2,
            &lat,
            &OrderCheckConfig::default(),
        );
        assert!(matches!(err, Err(AbsdeError::PreconditionFailed { .. })));
    }

    #[test]
    fn sufficient_conditions_example32_dominating() {
        let f1 = resolve_generator("example32_f1", None).unwrap();
        let ftilde = resolve_generator("example32_ftilde", None).unwrap();
        let f2 = resolve_generator("example32_f2", None).unwrap();
        let report = check_sufficient_conditions(
            &f1,
            &f2,
            &SufficientMode::Dominating(ftilde),
            &DomainBox::default(),
            4000,
            21,
        )
        .unwrap();
        assert!(!report.is_refuted(), "{report}");
    }

    #[test]
    fn sufficient_conditions_identity_and_decreasing() {
        let id1 = resolve_generator("linear_anticipated", None).unwrap();
        let id2 = resolve_generator("linear_anticipated", None).unwrap();
        let report = check_sufficient_conditions(
            &id1,
            &id2,
            &SufficientMode::MonotoneF2,
            &DomainBox::default(),
            2000,
            22,
        )
        .unwrap();
        assert!(!report.is_refuted());

        let dec1 = GeneratorSpec::new("neg", 1.0, |_, _, _, q: &dyn AnticipatedQuery| {
            q.expect(&|th, _| -th)
        })
        .unwrap();
        let dec2 = dec1.clone();
        let report = check_sufficient_conditions(
            &dec1,
            &dec2,
            &SufficientMode::MonotoneF2,
            &DomainBox::default(),
            2000,
            23,
        )
        .unwrap();
        assert!(report.is_refuted());
        match report.witness.unwrap() {
            Witness::Monotone { theta_hi, theta_lo, .. } => assert!(theta_hi > theta_lo),
            w => panic!("unexpected witness {w}"),
        }
    }

    #[test]
    fn sufficient_conditions_reject_anticipated_z_dependence() {
        let g1 = resolve_generator("example31_f1", None).unwrap(); // uses |phi|
        let g2 = resolve_generator("example32_f2", None).unwrap();
        let err = check_sufficient_conditions(
            &g1,
            &g2,
            &SufficientMode::MonotoneF2,
            &DomainBox::default(),
            100,
            24,
        );
        assert!(matches!(err, Err(AbsdeError::AnticipatedZDependence { .. })));
    }

    #[test]
    fn dependence_probes() {
        let f1 = resolve_generator("example31_f1", None).unwrap();
        assert!(depends_on_anticipated_z(&f1, 1));
        assert!(depends_on_query(&f1, 1));
        let only_y = GeneratorSpec::new("y-only", 1.0, |_, y, _, _| y).unwrap();
        assert!(!depends_on_anticipated_z(&only_y, 1));
        assert!(!depends_on_query(&only_y, 1));
        let theta_only = resolve_generator("linear_anticipated", None).unwrap();
        assert!(!depends_on_anticipated_z(&theta_only, 1));
        assert!(depends_on_query(&theta_only, 1));
    }

    #[test]
    fn terminal_time_jump_probe() {
        let lat = BinomialLattice::new(build_grid(1.0, 0.5, 8).unwrap());
        let smooth = TerminalData::new(|t, b| t + b.sin(), |_, _| 0.0);
        assert!(smooth.max_time_jump(&lat) < 0.2);
        let jumpy = TerminalData::new(|t, _| if t > 1.2 { 5.0 } else { 0.0 }, |_, _| 0.0);
        assert!(jumpy.max_time_jump(&lat) >= 5.0);
    }

    #[test]
    fn checker_is_deterministic_given_seed() {
        let g = GeneratorSpec::new("wiggly", 3.0, |t, y, z, q: &dyn AnticipatedQuery| {
            q.expect(&|th, ph| th.sin() + ph) + t * y.cos() - z
        })
        .unwrap();
        let a = check_lipschitz_sampled(&g, &DomainBox::default(), 300, 99).unwrap();
        let b = check_lipschitz_sampled(&g, &DomainBox::default(), 300, 99).unwrap();
        assert_eq!(a.verdict, b.verdict);
        assert_eq!(a.samples_used, b.samples_used);
    }
}
