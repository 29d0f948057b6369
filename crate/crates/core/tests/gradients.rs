mod support;

use support::gradient_suite::{run, COMPONENTS};

#[test]
fn every_component_matches_central_differences() {
    let worst = run(20, 2024);
    for (name, err) in COMPONENTS.iter().zip(worst) {
        assert!(err < 1e-4, "{name}: relative error {err:e}");
    }
}
