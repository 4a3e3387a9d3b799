//! Flat key-value experiment configuration: `key = value` lines, `#`
//! comments, strict rejection of unknown or duplicate keys.
//!
//! Problem data come in single form (`f`, `xi`, `eta`) for `solve` and in
//! paired form (`f1`/`f2`, `xi1`/`xi2`, `eta1`/`eta2`) for comparison runs.
//! Generators accept registry names (`example31_f1`, `zero`, `constant(c)`,
//! `linear_anticipated`, ...) or drift expressions; delays and terminal
//! segments are expressions in `t` and `(t, b)` respectively.

use crate::error::{AbsdeError, Result};
use crate::expr::{self, ExprContext, VarEnv};
use crate::generator::{resolve_generator, GeneratorSpec, TerminalData};
use crate::harness::Engine;
use crate::lattice::build_grid;
use crate::partition::{DelayFn, DelayPair};
use crate::solver::AbsdeProblem;
use std::sync::Arc;

const KNOWN_KEYS: &[&str] = &[
    "T",
    "K",
    "M",
    "delta",
    "zeta",
    "f",
    "f1",
    "f2",
    "ftilde",
    "f_lipschitz",
    "f1_lipschitz",
    "f2_lipschitz",
    "ftilde_lipschitz",
    "xi",
    "eta",
    "xi1",
    "xi2",
    "eta1",
    "eta2",
    "engine",
    "steps",
    "paths",
    "basis_degree",
    "seed",
    "tol",
    "out",
    "picard",
    "samples",
    "fixture",
    "n_list",
    "mode",
];

/// A parsed experiment configuration. The raw `pairs` keep the file content
/// losslessly; typed accessors interpret them.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub pairs: Vec<(String, String)>,
    pub t_horizon: f64,
    pub horizon_k: f64,
    pub dominance_m: f64,
    pub delta: Option<String>,
    pub zeta: Option<String>,
    pub f: Option<String>,
    pub f1: Option<String>,
    pub f2: Option<String>,
    pub ftilde: Option<String>,
    pub f_lipschitz: Option<f64>,
    pub f1_lipschitz: Option<f64>,
    pub f2_lipschitz: Option<f64>,
    pub ftilde_lipschitz: Option<f64>,
    pub xi: Option<String>,
    pub eta: Option<String>,
    pub xi1: Option<String>,
    pub xi2: Option<String>,
    pub eta1: Option<String>,
    pub eta2: Option<String>,
    pub engine: Engine,
    pub steps: usize,
    pub paths: usize,
    pub basis_degree: usize,
    pub seed: u64,
    pub tol: Option<f64>,
    pub out: Option<String>,
    pub picard: usize,
    pub samples: usize,
    pub fixture: Option<String>,
    pub n_list: Vec<usize>,
    pub mode: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            pairs: Vec::new(),
            t_horizon: 1.0,
            horizon_k: 0.0,
            dominance_m: 1.0,
            delta: None,
            zeta: None,
            f: None,
            f1: None,
            f2: None,
            ftilde: None,
            f_lipschitz: None,
            f1_lipschitz: None,
            f2_lipschitz: None,
            ftilde_lipschitz: None,
            xi: None,
            eta: None,
            xi1: None,
            xi2: None,
            eta1: None,
            eta2: None,
            engine: Engine::Lattice,
            steps: 64,
            paths: 50_000,
            basis_degree: 3,
            seed: 1,
            tol: None,
            out: None,
            picard: 3,
            samples: 10_000,
            fixture: None,
            n_list: vec![16, 32, 64, 128],
            mode: None,
        }
    }
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    let e = expr::parse(value, ExprContext::Delay)
        .map_err(|e| AbsdeError::Config(format!("key `{key}`: {e}")))?;
    // Constant expression: no variables allowed here.
    let a = e.eval(&VarEnv::default(), None);
    let b = e.eval(
        &VarEnv {
            t: 17.25,
            ..Default::default()
        },
        None,
    );
    if a != b || !a.is_finite() {
        return Err(AbsdeError::Config(format!(
            "key `{key}` must be a numeric constant, got `{value}`"
        )));
    }
    Ok(a)
}

fn parse_usize(key: &str, value: &str) -> Result<usize> {
    value
        .parse::<usize>()
        .map_err(|_| AbsdeError::Config(format!("key `{key}` must be a nonnegative integer, got `{value}`")))
}

/// Parse configuration text. Unknown keys, duplicate keys and malformed
/// lines are rejected.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    for (lineno, raw_line) in text.lines().enumerate() {
        let line = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let Some(eq) = line.find('=') else {
            return Err(AbsdeError::Config(format!(
                "line {}: expected `key = value`, got `{line}`",
                lineno + 1
            )));
        };
        let key = line[..eq].trim().to_string();
        let value = line[eq + 1..].trim().to_string();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(AbsdeError::Config(format!(
                "line {}: unknown key `{key}`",
                lineno + 1
            )));
        }
        if cfg.pairs.iter().any(|(k, _)| *k == key) {
            return Err(AbsdeError::Config(format!(
                "line {}: duplicate key `{key}`",
                lineno + 1
            )));
        }
        if value.is_empty() {
            return Err(AbsdeError::Config(format!(
                "line {}: empty value for `{key}`",
                lineno + 1
            )));
        }
        cfg.pairs.push((key.clone(), value.clone()));

        match key.as_str() {
            "T" => cfg.t_horizon = parse_f64(&key, &value)?,
            "K" => cfg.horizon_k = parse_f64(&key, &value)?,
            "M" => cfg.dominance_m = parse_f64(&key, &value)?,
            "delta" => cfg.delta = Some(value),
            "zeta" => cfg.zeta = Some(value),
            "f" => cfg.f = Some(value),
            "f1" => cfg.f1 = Some(value),
            "f2" => cfg.f2 = Some(value),
            "ftilde" => cfg.ftilde = Some(value),
            "f_lipschitz" => cfg.f_lipschitz = Some(parse_f64(&key, &value)?),
            "f1_lipschitz" => cfg.f1_lipschitz = Some(parse_f64(&key, &value)?),
            "f2_lipschitz" => cfg.f2_lipschitz = Some(parse_f64(&key, &value)?),
            "ftilde_lipschitz" => cfg.ftilde_lipschitz = Some(parse_f64(&key, &value)?),
            "xi" => cfg.xi = Some(value),
            "eta" => cfg.eta = Some(value),
            "xi1" => cfg.xi1 = Some(value),
            "xi2" => cfg.xi2 = Some(value),
            "eta1" => cfg.eta1 = Some(value),
            "eta2" => cfg.eta2 = Some(value),
            "engine" => {
                cfg.engine = match value.as_str() {
                    "lattice" => Engine::Lattice,
                    "mc" => Engine::Mc,
                    other => {
                        return Err(AbsdeError::Config(format!(
                            "engine must be `lattice` or `mc`, got `{other}`"
                        )))
                    }
                }
            }
            "steps" => cfg.steps = parse_usize(&key, &value)?,
            "paths" => cfg.paths = parse_usize(&key, &value)?,
            "basis_degree" => cfg.basis_degree = parse_usize(&key, &value)?,
            "seed" => {
                cfg.seed = value.parse::<u64>().map_err(|_| {
                    AbsdeError::Config(format!("key `seed` must be a u64, got `{value}`"))
                })?
            }
            "tol" => cfg.tol = Some(parse_f64(&key, &value)?),
            "out" => cfg.out = Some(value),
            "picard" => cfg.picard = parse_usize(&key, &value)?,
            "samples" => cfg.samples = parse_usize(&key, &value)?,
            "fixture" => cfg.fixture = Some(value),
            "n_list" => {
                let mut list = Vec::new();
                for part in value.split(',') {
                    list.push(parse_usize(&key, part.trim())?);
                }
                if list.is_empty() {
                    return Err(AbsdeError::Config("n_list must not be empty".into()));
                }
                cfg.n_list = list;
            }
            "mode" => cfg.mode = Some(value),
            _ => unreachable!("key list checked above"),
        }
    }
    Ok(cfg)
}

pub fn parse_config_file(path: &std::path::Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| AbsdeError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

fn delay_from_text(key: &str, text: &str) -> Result<DelayFn> {
    let parsed = expr::parse(text, ExprContext::Delay)
        .map_err(|e| AbsdeError::Config(format!("key `{key}`: {e}")))?;
    if let expr::Expr::Num(c) = parsed {
        return Ok(DelayFn::Constant(c));
    }
    Ok(DelayFn::General(Arc::new(move |t| {
        parsed.eval(
            &VarEnv {
                t,
                ..Default::default()
            },
            None,
        )
    })))
}

fn terminal_component(key: &str, text: &str) -> Result<Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>> {
    let parsed = expr::parse(text, ExprContext::Terminal)
        .map_err(|e| AbsdeError::Config(format!("key `{key}`: {e}")))?;
    Ok(Arc::new(move |t, b| {
        parsed.eval(
            &VarEnv {
                t,
                b,
                ..Default::default()
            },
            None,
        )
    }))
}

impl ExperimentConfig {
    pub fn delays(&self) -> Result<DelayPair> {
        let delta_text = self
            .delta
            .as_deref()
            .ok_or_else(|| AbsdeError::Config("missing key `delta`".into()))?;
        let zeta_text = self.zeta.as_deref().unwrap_or(delta_text);
        Ok(DelayPair {
            delta: delay_from_text("delta", delta_text)?,
            zeta: delay_from_text("zeta", zeta_text)?,
            horizon_k: self.horizon_k,
            dominance_m: self.dominance_m,
        })
    }

    fn terminal_from(&self, xi_key: &str, xi: &Option<String>, eta_key: &str, eta: &Option<String>) -> Result<TerminalData> {
        let xi_text = xi
            .as_deref()
            .ok_or_else(|| AbsdeError::Config(format!("missing key `{xi_key}`")))?;
        let eta_text = eta.as_deref().unwrap_or("0");
        let xi_fn = terminal_component(xi_key, xi_text)?;
        let eta_fn = terminal_component(eta_key, eta_text)?;
        Ok(TerminalData::new(
            move |t, b| xi_fn(t, b),
            move |t, b| eta_fn(t, b),
        ))
    }

    pub fn generator_pair(&self) -> Result<(GeneratorSpec, GeneratorSpec)> {
        let f1 = self
            .f1
            .as_deref()
            .ok_or_else(|| AbsdeError::Config("missing key `f1`".into()))?;
        let f2 = self
            .f2
            .as_deref()
            .ok_or_else(|| AbsdeError::Config("missing key `f2`".into()))?;
        Ok((
            resolve_generator(f1, self.f1_lipschitz)?,
            resolve_generator(f2, self.f2_lipschitz)?,
        ))
    }

    pub fn terminal_pair(&self) -> Result<(TerminalData, TerminalData)> {
        Ok((
            self.terminal_from("xi1", &self.xi1, "eta1", &self.eta1)?,
            self.terminal_from("xi2", &self.xi2, "eta2", &self.eta2)?,
        ))
    }

    /// Both problems of a comparison run, sharing grid and delays.
    pub fn problem_pair(&self) -> Result<(AbsdeProblem, AbsdeProblem)> {
        let delays = self.delays()?;
        let (g1, g2) = self.generator_pair()?;
        let (t1, t2) = self.terminal_pair()?;
        let grid = build_grid(self.t_horizon, self.horizon_k, self.steps)?;
        Ok((
            AbsdeProblem::new(self.t_horizon, delays.clone(), g1, t1, grid, self.picard)?,
            AbsdeProblem::new(self.t_horizon, delays, g2, t2, grid, self.picard)?,
        ))
    }

    /// The single problem of a `solve` run.
    pub fn single_problem(&self) -> Result<AbsdeProblem> {
        let f = self
            .f
            .as_deref()
            .ok_or_else(|| AbsdeError::Config("missing key `f`".into()))?;
        let generator = resolve_generator(f, self.f_lipschitz)?;
        let terminal = self.terminal_from("xi", &self.xi, "eta", &self.eta)?;
        let grid = build_grid(self.t_horizon, self.horizon_k, self.steps)?;
        AbsdeProblem::new(
            self.t_horizon,
            self.delays()?,
            generator,
            terminal,
            grid,
            self.picard,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE31: &str = "\
# Example 3.1 comparison pair
T = 1.0
K = 0.3
delta = 0.3
zeta = 0.3
M = 1
f1 = example31_f1
f2 = example31_f2
xi1 = 1
xi2 = 0
eta1 = 0
eta2 = 0
steps = 64
seed = 7
";

    #[test]
    fn parses_a_comparison_config() {
        let cfg = parse_config(EXAMPLE31).unwrap();
        assert_eq!(cfg.t_horizon, 1.0);
        assert_eq!(cfg.horizon_k, 0.3);
        assert_eq!(cfg.steps, 64);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.pairs.len(), 13);
        let (p1, p2) = cfg.problem_pair().unwrap();
        assert_eq!(p1.grid, p2.grid);
        assert_eq!(p1.generator.name, "example31_f1");
        assert_eq!(p2.generator.name, "example31_f2");
        assert_eq!(p1.terminal.xi(1.0, 0.3), 1.0);
        assert_eq!(p2.terminal.xi(1.0, 0.3), 0.0);
    }

    #[test]
    fn rejects_unknown_duplicate_and_malformed_keys() {
        assert!(matches!(
            parse_config("bogus = 1"),
            Err(AbsdeError::Config(_))
        ));
        assert!(matches!(
            parse_config("T = 1\nT = 2"),
            Err(AbsdeError::Config(_))
        ));
        assert!(matches!(parse_config("T 1"), Err(AbsdeError::Config(_))));
        assert!(matches!(parse_config("T ="), Err(AbsdeError::Config(_))));
        assert!(matches!(
            parse_config("engine = quantum"),
            Err(AbsdeError::Config(_))
        ));
        assert!(matches!(
            parse_config("T = t + 1"),
            Err(AbsdeError::Config(_))
        ));
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let cfg = parse_config("# hi\n\nT = 2.0 # trailing\n").unwrap();
        assert_eq!(cfg.t_horizon, 2.0);
        assert_eq!(cfg.pairs.len(), 1);
    }

    #[test]
    fn delays_and_terminals_accept_expressions() {
        let cfg = parse_config(
            "T = 1\nK = 0.6\ndelta = 0.1 + t * 0.5\nxi = t + sin(b)\neta = b\nf = zero\n",
        )
        .unwrap();
        let delays = cfg.delays().unwrap();
        assert!(!delays.delta.is_constant());
        assert!((delays.delta.eval(0.4) - 0.3).abs() < 1e-15);
        // zeta defaults to delta
        assert!((delays.zeta.eval(0.4) - 0.3).abs() < 1e-15);
        let p = cfg.single_problem().unwrap();
        assert!((p.terminal.xi(1.2, 0.5) - (1.2 + 0.5f64.sin())).abs() < 1e-15);
        assert_eq!(p.terminal.eta(1.2, 0.5), 0.5);
    }

    #[test]
    fn n_list_parses() {
        let cfg = parse_config("n_list = 16, 32, 64\nfixture = martingale\n").unwrap();
        assert_eq!(cfg.n_list, vec![16, 32, 64]);
        assert_eq!(cfg.fixture.as_deref(), Some("martingale"));
    }

    #[test]
    fn parser_is_total_on_garbage() {
        for bad in ["\0\0\0", "====", "T = = 1", "T = 1e99999", "[section]"] {
            assert!(parse_config(bad).is_err(), "`{bad}` parsed");
        }
    }
}
