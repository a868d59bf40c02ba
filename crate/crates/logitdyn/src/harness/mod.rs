//! Experiment harness: scenario configuration, the trajectory runner,
//! parameter sweeps, CSV/SVG emission, and randomized self-check suites.
//!
//! The harness layers policy on top of the core operations: it decides the
//! schedule (warm-up toward one class, then a sign-flipped rate toward
//! another), runs every optimizer arm from the shared branch state, logs
//! per-step diagnostics, and renders them. All of it is deterministic
//! given the config; the feature draw is the only randomness and is fully
//! pinned by the seed.

pub mod config;
pub mod csv;
pub mod scenario;
pub mod svg;
pub mod sweep;
pub mod verify;

pub use config::ScenarioConfig;
pub use csv::{csv_header, emit_csv, parse_csv, write_csv, CsvRecord};
pub use scenario::{
    arm_tags, draw_features, matched_state_comparison, run_scenario, MatchedArm, MatchedStepRecord,
    Phase, TrajectoryRecord,
};
pub use svg::{emit_svg, svg_well_formed, write_svg, ChartSelector};
pub use sweep::{
    apply_axis, run_sweep, ArmSummary, FittedConstant, SweepAxis, SweepCell, SweepOutcome,
    SweepReport,
};
pub use verify::{
    dynamics_suite, equivalence_suite, geometry_suite, ratios_suite, run_suites, InjectedFault,
    VerifyReport, VerifySuite,
};
