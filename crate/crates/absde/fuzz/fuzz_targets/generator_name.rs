#![no_main]

use absde::generator::{resolve_generator, AnticipatedQuery, PointMassQuery};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(name) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(gen) = resolve_generator(name, None) {
        let q = PointMassQuery::new(0.5, -0.25, (0.0, 0.0));
        let _ = gen.eval(0.25, 1.0, -1.0, &q as &dyn AnticipatedQuery);
    }
});
