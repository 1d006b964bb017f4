//! The heat/cool example shipped with the crate.

use crate::dsl::parse;
use crate::model::{instantiate, validate, InstanceTree, ModelUnit};
use crate::scenario::{PackageFile, ScenarioPackage};
use crate::sim::Stimulus;

pub const MODEL_FILE: &str = "heatcool.broom";
pub const MODEL_SOURCE: &str = include_str!("../examples/heatcool/heatcool.broom");
pub const PACKAGE_SOURCE: &str = include_str!("../examples/heatcool/package.json");

const FILES: &[(&str, &str)] = &[
    ("s1_regulation.json", include_str!("../examples/heatcool/s1_regulation.json")),
    ("s1_regulation.stimuli.json", include_str!("../examples/heatcool/s1_regulation.stimuli.json")),
    ("s2_disturbance.json", include_str!("../examples/heatcool/s2_disturbance.json")),
    ("s2_disturbance.stimuli.json", include_str!("../examples/heatcool/s2_disturbance.stimuli.json")),
    ("s3_setpoint_change.json", include_str!("../examples/heatcool/s3_setpoint_change.json")),
    ("s3_setpoint_change.stimuli.json", include_str!("../examples/heatcool/s3_setpoint_change.stimuli.json")),
    ("s4_fan.json", include_str!("../examples/heatcool/s4_fan.json")),
    ("s4_fan.stimuli.json", include_str!("../examples/heatcool/s4_fan.stimuli.json")),
    ("s5_panel_display.json", include_str!("../examples/heatcool/s5_panel_display.json")),
    ("s5_panel_display.stimuli.json", include_str!("../examples/heatcool/s5_panel_display.stimuli.json")),
];

/// Source text of a fixture file by name.
pub fn file(name: &str) -> Option<&'static str> {
    match name {
        MODEL_FILE => Some(MODEL_SOURCE),
        "package.json" => Some(PACKAGE_SOURCE),
        _ => FILES.iter().find(|(n, _)| *n == name).map(|(_, t)| *t),
    }
}

pub struct Fixture {
    pub model: ModelUnit,
    pub tree: InstanceTree,
    pub package: ScenarioPackage,
    /// One script per package scenario, in package order.
    pub stimuli: Vec<Vec<Stimulus>>,
}

/// Parse and check the shipped fixture. The fixture is part of the build,
/// so any problem with it panics.
pub fn load_fixture() -> Fixture {
    let model = parse(MODEL_SOURCE).unwrap_or_else(|d| panic!("{MODEL_FILE}: {d:?}"));
    let diags = validate(&model);
    assert!(diags.is_empty(), "{MODEL_FILE}: {diags:?}");
    let tree = instantiate(&model).unwrap_or_else(|d| panic!("{MODEL_FILE}: {d:?}"));
    let file: PackageFile = serde_json::from_str(PACKAGE_SOURCE).expect("package.json");
    let package = ScenarioPackage::from_file(&file, |n| self::file(n).map(str::to_string).ok_or_else(|| "no such file".into()))
        .unwrap_or_else(|e| panic!("{e}"));
    let stimuli = package.scenarios.iter().map(|s| s.stimuli.clone()).collect();
    Fixture { model, tree, package, stimuli }
}
