#![no_main]

use absde::config::parse_config;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(input) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(mut cfg) = parse_config(input) {
        // Exercise the typed accessors. Cap the sizes so a parsed config
        // cannot turn into an allocation bomb.
        cfg.steps = cfg.steps.clamp(1, 64);
        cfg.paths = cfg.paths.clamp(2, 64);
        cfg.samples = cfg.samples.min(16);
        let _ = cfg.delays();
        let _ = cfg.generator_pair();
        let _ = cfg.terminal_pair();
        let _ = cfg.single_problem();
        let _ = cfg.problem_pair();
    }
});
