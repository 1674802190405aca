use ept_bench::{params, toy_batch, toy_set};
use ept_core::model::ForwardOptions;
use ept_core::ModelConfig;

#[test]
fn fixtures_are_reproducible_and_run_forward() {
    let cfg = ModelConfig::tiny();
    assert_eq!(toy_set(&cfg, 4), toy_set(&cfg, 4));
    let p = params(&cfg);
    assert_eq!(p, params(&cfg));
    let out = p.predict(&cfg, &toy_batch(&cfg, 2), ForwardOptions::default()).expect("forward runs");
    assert!(!out.forces.data().is_empty() && out.forces.data().iter().all(|f| f.is_finite()));
}
