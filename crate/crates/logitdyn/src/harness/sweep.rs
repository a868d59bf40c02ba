//! Parameter sweeps: the same scenario re-run over a grid of radius or
//! step-size values, with per-cell summaries and remainder-constant fits.
//!
//! Cells share the seed and the warm-up schedule, so every cell branches
//! from the identical post-warm-up state; first-post-step forecast errors
//! are therefore comparable across cells, which is what makes the
//! quadratic-in-eta fit meaningful.

use serde::Serialize;

use crate::dynamics::{fit_remainder_constant, SignConvention};
use crate::error::{Error, Result};
use crate::harness::config::ScenarioConfig;
use crate::harness::scenario::{arm_tags, run_scenario, Phase, TrajectoryRecord};

/// Which scalar the sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Overwrites every perturbed arm's radius with the cell value (in the
    /// arm's own sign framing) and clears its coupling.
    Rho,
    /// Sets the theory-framed post-switch rate to the cell value; arms
    /// with a declared coupling get their radius rescaled to match, arms
    /// without one keep their radius.
    Eta,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::Rho => "rho",
            SweepAxis::Eta => "eta",
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rho" => Ok(SweepAxis::Rho),
            "eta" => Ok(SweepAxis::Eta),
            other => Err(Error::InvalidInput(format!(
                "unknown sweep axis {other:?}; expected rho or eta"
            ))),
        }
    }
}

/// One arm's summary inside one cell.
#[derive(Debug, Clone, Serialize)]
pub struct ArmSummary {
    pub tag: String,
    /// Probabilities at the last logged step.
    pub final_probs: Vec<f64>,
    /// Forecast errors (matrix, logits, residual) at the first post-switch
    /// step, taken from the shared branch state.
    pub first_post_err: [f64; 3],
    /// The same errors divided by the squared theory-framed rate.
    pub c_estimate: [f64; 3],
}

/// One value of the swept parameter.
#[derive(Debug, Clone, Serialize)]
pub struct SweepCell {
    pub value: f64,
    pub arms: Vec<ArmSummary>,
}

/// Least-squares remainder constants per arm, fitted across cells; only
/// produced for the `eta` axis, where the rate actually varies.
#[derive(Debug, Clone, Serialize)]
pub struct FittedConstant {
    pub tag: String,
    pub c_w: f64,
    pub c_z: f64,
    pub c_g: f64,
}

/// Summary of a whole sweep, serializable as JSON.
#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub cells: Vec<SweepCell>,
    pub fitted: Vec<FittedConstant>,
}

/// A sweep's report together with every cell's full trajectory set, in
/// the order of the requested values.
#[derive(Debug)]
pub struct SweepOutcome {
    pub report: SweepReport,
    pub trajectories: Vec<(f64, Vec<TrajectoryRecord>)>,
}

/// Builds the config for one cell. The result validates like any other
/// config, so an inconsistent override surfaces before the cell runs.
pub fn apply_axis(base: &ScenarioConfig, axis: SweepAxis, value: f64) -> Result<ScenarioConfig> {
    if !value.is_finite() {
        return Err(Error::InvalidInput(format!(
            "sweep value must be finite, got {value}"
        )));
    }
    let mut cfg = base.clone();
    match axis {
        SweepAxis::Rho => {
            if !base.optimizers.iter().any(|a| a.is_perturbed()) {
                return Err(Error::Config(
                    "a rho sweep needs at least one perturbed arm".into(),
                ));
            }
            for arm in cfg.optimizers.iter_mut().filter(|a| a.is_perturbed()) {
                arm.rho = value;
                arm.kappa = 0.0;
            }
        }
        SweepAxis::Eta => {
            cfg.eta_post = value;
            for arm in cfg.optimizers.iter_mut() {
                arm.eta = match arm.sign_convention {
                    SignConvention::Theory => value,
                    SignConvention::Practice => -value,
                };
                if arm.is_perturbed() && arm.kappa > 0.0 {
                    let mag = arm.kappa * value.abs().sqrt();
                    arm.rho = if arm.rho < 0.0 { -mag } else { mag };
                }
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn summarize_cell(cfg: &ScenarioConfig, records: &[TrajectoryRecord]) -> Result<SweepCell> {
    let tags = arm_tags(&cfg.optimizers);
    let eta2 = cfg.eta_post * cfg.eta_post;
    let mut arms = Vec::with_capacity(tags.len());
    for tag in &tags {
        let rows: Vec<&TrajectoryRecord> = records.iter().filter(|r| &r.optimizer == tag).collect();
        let last = rows
            .iter()
            .max_by_key(|r| r.step)
            .ok_or_else(|| Error::EmptySelection(format!("no records for arm {tag}")))?;
        let first_post = rows
            .iter()
            .filter(|r| r.phase == Phase::Post)
            .min_by_key(|r| r.step)
            .ok_or_else(|| {
                Error::EmptySelection(format!("no post-switch records for arm {tag}"))
            })?;
        let errs = [first_post.err_w, first_post.err_z, first_post.err_g];
        arms.push(ArmSummary {
            tag: tag.clone(),
            final_probs: last.probs.as_slice().to_vec(),
            first_post_err: errs,
            c_estimate: if eta2 > 0.0 {
                [errs[0] / eta2, errs[1] / eta2, errs[2] / eta2]
            } else {
                [0.0; 3]
            },
        });
    }
    Ok(SweepCell {
        value: cfg.eta_post,
        arms,
    })
}

/// Runs one cell per value and assembles the report.
///
/// Cells must log their first post-switch step, so `log_every` has to
/// divide `sft_epochs + 1` steps into view; in practice this means the
/// config should log densely enough that step `sft_epochs + 1` appears.
pub fn run_sweep(base: &ScenarioConfig, axis: SweepAxis, values: &[f64]) -> Result<SweepOutcome> {
    if values.is_empty() {
        return Err(Error::EmptySelection("no sweep values given".into()));
    }
    let mut cells = Vec::with_capacity(values.len());
    let mut trajectories = Vec::with_capacity(values.len());
    for &value in values {
        let cfg = apply_axis(base, axis, value)?;
        let records = run_scenario(&cfg)?;
        let mut cell = summarize_cell(&cfg, &records)?;
        cell.value = value;
        cells.push(cell);
        trajectories.push((value, records));
    }

    let mut fitted = Vec::new();
    if axis == SweepAxis::Eta && values.iter().all(|&v| v != 0.0) {
        let tags = arm_tags(&base.optimizers);
        for (k, tag) in tags.iter().enumerate() {
            let mut per_kind = [0.0; 3];
            for (kind, slot) in per_kind.iter_mut().enumerate() {
                let errs: Vec<f64> = cells
                    .iter()
                    .map(|c| c.arms[k].first_post_err[kind])
                    .collect();
                *slot = fit_remainder_constant(values, &errs)?;
            }
            fitted.push(FittedConstant {
                tag: tag.clone(),
                c_w: per_kind[0],
                c_z: per_kind[1],
                c_g: per_kind[2],
            });
        }
    }

    Ok(SweepOutcome {
        report: SweepReport {
            axis,
            values: values.to_vec(),
            cells,
            fitted,
        },
        trajectories,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::UpdateConfig;

    fn small_toy() -> ScenarioConfig {
        let mut cfg = ScenarioConfig::squeeze_toy();
        cfg.d = 40;
        cfg.sft_epochs = 3;
        cfg.post_steps = 4;
        cfg.eta_sft = 1e-2;
        cfg
    }

    #[test]
    fn single_value_cell_equals_a_plain_run() {
        let base = small_toy();
        let outcome = run_sweep(&base, SweepAxis::Rho, &[2e-4]).unwrap();
        let direct = run_scenario(&apply_axis(&base, SweepAxis::Rho, 2e-4).unwrap()).unwrap();
        let (value, swept) = &outcome.trajectories[0];
        assert_eq!(*value, 2e-4);
        assert_eq!(swept.len(), direct.len());
        for (a, b) in swept.iter().zip(&direct) {
            assert_eq!(a.step, b.step);
            assert_eq!(a.optimizer, b.optimizer);
            for (x, y) in a.probs.as_slice().iter().zip(b.probs.as_slice()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn eta_axis_at_the_base_value_is_the_identity() {
        let base = small_toy();
        let cell = apply_axis(&base, SweepAxis::Eta, base.eta_post).unwrap();
        assert_eq!(base, cell);
    }

    #[test]
    fn eta_axis_rescales_coupled_radii() {
        let base = small_toy();
        let cell = apply_axis(&base, SweepAxis::Eta, -8e-5).unwrap();
        for (orig, swept) in base.optimizers.iter().zip(&cell.optimizers) {
            assert_eq!(swept.eta, -8e-5);
            if orig.kappa > 0.0 {
                let expect = orig.kappa * (8e-5f64).sqrt();
                assert!((swept.rho.abs() - expect).abs() < 1e-18);
                assert_eq!(swept.rho.signum(), orig.rho.signum());
            }
        }
        cell.validate().unwrap();
    }

    #[test]
    fn rho_axis_requires_a_perturbed_arm() {
        let mut base = small_toy();
        base.optimizers = vec![UpdateConfig::gd(base.eta_post).unwrap()];
        assert!(apply_axis(&base, SweepAxis::Rho, 1e-4).is_err());
    }

    #[test]
    fn eta_sweep_errors_decay_quadratically_and_fit_a_constant() {
        let mut base = small_toy();
        base.optimizers = vec![UpdateConfig::gd(base.eta_post).unwrap()];
        let values = [-1e-3, -5e-4, -2.5e-4];
        let outcome = run_sweep(&base, SweepAxis::Eta, &values).unwrap();
        // The plain-descent arm's matrix and logit forecasts are exact, so
        // the quadratic decay is read off the residual forecast error.
        let errs: Vec<f64> = outcome
            .report
            .cells
            .iter()
            .map(|c| c.arms[0].first_post_err[2])
            .collect();
        for pair in errs.windows(2) {
            let ratio = pair[0] / pair[1];
            assert!(
                (3.0..=5.0).contains(&ratio),
                "expected quadratic decay, got ratio {ratio}"
            );
        }
        let fit = &outcome.report.fitted[0];
        assert!(fit.c_g > 0.0);
        let c_direct = errs[0] / (1e-3f64).powi(2);
        assert!((fit.c_g - c_direct).abs() / c_direct < 0.5);
    }

    #[test]
    fn report_serializes_to_json() {
        let base = small_toy();
        let outcome = run_sweep(&base, SweepAxis::Rho, &[1e-4, 2e-4]).unwrap();
        let text = serde_json::to_string_pretty(&outcome.report).unwrap();
        assert!(text.contains("\"axis\": \"rho\""));
        assert!(text.contains("\"cells\""));
    }
}
