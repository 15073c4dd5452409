use std::path::PathBuf;

use shel::harness::{outlier_plan, study1_plan, study2_plan};
use shel::io::RunConfig;

fn shipped(name: &str) -> RunConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name);
    RunConfig::from_path(&path).unwrap()
}

#[test]
fn shipped_study_configs_match_the_presets() {
    assert_eq!(shipped("study1.json").to_plan().unwrap(), study1_plan(20));
    assert_eq!(shipped("study2.json").to_plan().unwrap(), study2_plan(20));
    assert_eq!(shipped("outlier.json").to_plan().unwrap(), outlier_plan(10));
}
