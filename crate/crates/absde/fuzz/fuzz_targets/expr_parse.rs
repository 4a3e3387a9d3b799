#![no_main]

use absde::expr::{parse, ExprContext, VarEnv};
use absde::generator::{AnticipatedQuery, PointMassQuery};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(input) = std::str::from_utf8(data) else {
        return;
    };
    for context in [
        ExprContext::Drift,
        ExprContext::Terminal,
        ExprContext::Delay,
        ExprContext::ExpectBody,
    ] {
        if let Ok(expr) = parse(input, context) {
            // Evaluation must be total on parsed expressions.
            let env = VarEnv {
                t: 0.5,
                y: -1.25,
                z: 2.0,
                b: 0.75,
                theta: -0.5,
                phi: 1.5,
            };
            let q = PointMassQuery::new(0.25, -0.75, (0.5, 0.5));
            let _ = expr.eval(&env, Some(&q as &dyn AnticipatedQuery));
            let _ = expr.uses_expectation();
        }
    }
});
