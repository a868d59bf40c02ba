//! Learning dynamics of a fixed-feature softmax classifier in logit space.
//!
//! The model is `z = W phi` with a frozen feature vector `phi` and a trainable
//! output matrix `W`. Training uses softmax cross-entropy or a pairwise
//! preference loss, stepped by plain gradient descent or by two-pass
//! sharpness-aware updates. Because the features are fixed, every parameter
//! update projects to an exact update of the logits, which makes one-step
//! behavior analyzable: gradients, Hessians, spectral modes of the logit
//! Hessian, and per-class probability ratios all have closed forms that this
//! crate implements and cross-checks against independent oracles.
//!
//! Module layout:
//!
//! - [`geometry`]: core value types plus softmax, cross-entropy, gradients,
//!   the logit Hessian, its pullback to parameter space, and a dense Jacobi
//!   eigensolver for the spectral decomposition.
//! - [`objectives`]: the pairwise preference loss with implicit reward
//!   margin, and the signed single-example objective.
//! - [`dynamics`]: update rules (GD, full two-pass SAM, output-layer SAM),
//!   first-order one-step predictors, per-mode recursion, confidence ratios,
//!   and top-2 diagnostics.
//! - [`oracle`]: finite-difference and dense brute-force references used to
//!   validate the closed forms. Oracle code shares no logic with the paths
//!   it checks.
//! - [`harness`]: scenario runner for the three-class squeeze experiment,
//!   parameter sweeps, CSV/SVG emission, and the verification suites behind
//!   the CLI.
//!
//! All functions are pure and operate on immutable inputs; everything here is
//! safe to call from multiple threads without synchronization.

pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod objectives;
pub mod oracle;

pub use dynamics::{
    confidence_ratios, fit_remainder_constant, gd_step, logit_space_step, logits_sam_step,
    modal_step_predict, predict_step, ratio_factorization, sam_full_step, top2_diagnostics,
    ConfidenceRatios, DynamicsPrediction, FactorReport, LossTarget, ModalCoefficients, Optimizer,
    SignConvention, Top2Diagnostics, UpdateConfig, RATIO_FLOOR,
};
pub use error::{Error, Result};
pub use geometry::{
    apply_parameter_hessian, cross_entropy, hessian_gradient_product, logit_gradient,
    logit_hessian, min_norm_preimage, parameter_gradient, softmax, spectral_decompose,
    FeatureVector, LogitHessian, LogitVector, ModalBasis, OneHotLabel, ParameterMatrix, ProbVector,
    Residual,
};
pub use harness::{
    arm_tags, csv_header, draw_features, emit_csv, emit_svg, matched_state_comparison, parse_csv,
    run_scenario, run_suites, run_sweep, svg_well_formed, write_csv, write_svg, ChartSelector,
    CsvRecord, MatchedArm, MatchedStepRecord, Phase, ScenarioConfig, SweepAxis, SweepOutcome,
    SweepReport, TrajectoryRecord, VerifyReport, VerifySuite,
};
pub use objectives::{
    dpo_loss, dpo_parameter_gradient, implicit_reward_margin, signed_objective, DPOConfig,
    ObjectiveSign, PreferencePair,
};
pub use oracle::{
    column_stack, dense_kronecker_hessian, direct_cross_entropy, direct_dpo_loss,
    dpo_sam_two_pass_reference, exhaustive_ratio_check, fd_gradient, fd_gradient_checked,
    sam_two_pass_reference, DenseMatrix, OracleReport, OracleValue, TolerancePolicy,
};
