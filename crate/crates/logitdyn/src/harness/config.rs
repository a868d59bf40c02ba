//! Scenario configuration: the experiment schedule, its JSON form, and the
//! built-in three-class squeeze setup.

use serde::{Deserialize, Serialize};

use crate::dynamics::UpdateConfig;
use crate::error::{Error, Result};

/// Full description of one simulated run: a supervised warm-up phase toward
/// one class, then a configurable number of steps toward a different class
/// under each listed optimizer arm.
///
/// JSON form uses exactly these field names (with `V` capitalized); unknown
/// keys are rejected so a misspelled rate cannot silently fall back to a
/// default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Feature dimension.
    pub d: usize,
    /// Number of classes.
    #[serde(rename = "V")]
    pub v: usize,
    /// Seed for the feature draw; the only randomness in a run.
    pub seed: u64,
    /// Multiplier on the standard-normal feature entries.
    pub feature_scale: f64,
    /// Number of warm-up steps (one full-batch step per epoch).
    pub sft_epochs: usize,
    /// Class trained toward during warm-up.
    pub sft_label: usize,
    /// Class trained toward after the switch.
    pub post_label: usize,
    /// Number of steps after the switch.
    pub post_steps: usize,
    /// Warm-up step size (plain descent, theory framing).
    pub eta_sft: f64,
    /// Post-switch step size in theory framing; every arm must agree with
    /// it once mapped to that framing.
    pub eta_post: f64,
    /// Optimizer arms run side by side from the shared post-warm-up state.
    pub optimizers: Vec<UpdateConfig>,
    /// Record every this-many steps (step indices divisible by it).
    pub log_every: usize,
}

impl ScenarioConfig {
    /// The built-in squeeze reproduction: 1000 standard-normal features,
    /// three classes, ten warm-up steps toward class 0, then a negative
    /// rate toward class 1 under plain descent and a perturbed arm of each
    /// radius sign, with the radius tied to the rate by `kappa = 0.1`.
    ///
    /// The warm-up rate is chosen so the effective logit-space step
    /// `eta * ||phi||^2` is about one half, which drives the class-0
    /// probability to roughly 0.85 before the switch; the post-switch rate
    /// keeps the effective step small enough that the first-order picture
    /// stays quantitative across the logged window.
    pub fn squeeze_toy() -> Self {
        let eta_post = -2e-5;
        let kappa = 0.1;
        Self {
            d: 1000,
            v: 3,
            seed: 7,
            feature_scale: 1.0,
            sft_epochs: 10,
            sft_label: 0,
            post_label: 1,
            post_steps: 40,
            eta_sft: 5e-4,
            eta_post,
            optimizers: vec![
                UpdateConfig::gd(eta_post).expect("toy rate is valid"),
                UpdateConfig::sam_scaled(eta_post, kappa, true).expect("toy rate is valid"),
                UpdateConfig::sam_scaled(eta_post, kappa, false).expect("toy rate is valid"),
            ],
            log_every: 1,
        }
    }

    /// Maps every arm to its practice-framing twin. The twin schedule
    /// drives bit-identical trajectories, so all emitted records match the
    /// theory-framing run byte for byte.
    pub fn to_practice(&self) -> Self {
        let mut out = self.clone();
        out.optimizers = self.optimizers.iter().map(|c| c.to_practice()).collect();
        out
    }

    /// # Errors
    /// [`Error::Config`] for structural problems: bad sizes, out-of-range
    /// labels, an identical pre/post label, non-finite or oversized rates,
    /// an empty arm list, an arm whose theory-framed rate disagrees with
    /// `eta_post`, or an invalid arm config.
    pub fn validate(&self) -> Result<()> {
        if self.d < 1 {
            return Err(Error::Config("feature dimension must be at least 1".into()));
        }
        if self.v < 2 {
            return Err(Error::Config("need at least 2 classes".into()));
        }
        if self.sft_label >= self.v || self.post_label >= self.v {
            return Err(Error::Config(format!(
                "labels ({}, {}) out of range for {} classes",
                self.sft_label, self.post_label, self.v
            )));
        }
        if self.sft_label == self.post_label {
            return Err(Error::Config(
                "post-switch label must differ from the warm-up label".into(),
            ));
        }
        if self.log_every < 1 {
            return Err(Error::Config("log_every must be at least 1".into()));
        }
        if !(self.feature_scale > 0.0) || !self.feature_scale.is_finite() {
            return Err(Error::Config(format!(
                "feature scale must be positive and finite, got {}",
                self.feature_scale
            )));
        }
        for (name, eta) in [("eta_sft", self.eta_sft), ("eta_post", self.eta_post)] {
            if !eta.is_finite() || eta.abs() > 1.0 {
                return Err(Error::Config(format!(
                    "{name} must be finite with magnitude at most 1, got {eta}"
                )));
            }
        }
        if self.optimizers.is_empty() {
            return Err(Error::Config(
                "at least one optimizer arm is required".into(),
            ));
        }
        for (k, arm) in self.optimizers.iter().enumerate() {
            arm.validate()
                .map_err(|e| Error::Config(format!("optimizer arm {k}: {e}")))?;
            let (eta_theory, _) = arm.theory_rates();
            if eta_theory != self.eta_post {
                return Err(Error::Config(format!(
                    "optimizer arm {k} steps at {eta_theory} in theory framing, \
                     but eta_post is {}",
                    self.eta_post
                )));
            }
        }
        Ok(())
    }

    /// Parses and validates a config from a JSON string.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config from a JSON file.
    pub fn from_json_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    /// Pretty JSON form, suitable as a starting point for edits.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Total number of steps across both phases.
    pub fn total_steps(&self) -> usize {
        self.sft_epochs + self.post_steps
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{Optimizer, SignConvention};

    #[test]
    fn toy_default_is_valid() {
        let cfg = ScenarioConfig::squeeze_toy();
        cfg.validate().unwrap();
        assert_eq!(cfg.optimizers.len(), 3);
    }

    #[test]
    fn json_round_trip_preserves_the_config() {
        let cfg = ScenarioConfig::squeeze_toy();
        let text = cfg.to_json().unwrap();
        let back = ScenarioConfig::from_json(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut value: serde_json::Value =
            serde_json::from_str(&ScenarioConfig::squeeze_toy().to_json().unwrap()).unwrap();
        value["etaa_post"] = serde_json::json!(0.1);
        let text = serde_json::to_string(&value).unwrap();
        assert!(ScenarioConfig::from_json(&text).is_err());
    }

    #[test]
    fn label_and_rate_mistakes_are_rejected() {
        let mut cfg = ScenarioConfig::squeeze_toy();
        cfg.post_label = cfg.sft_label;
        assert!(cfg.validate().is_err());

        let mut cfg = ScenarioConfig::squeeze_toy();
        cfg.sft_label = 5;
        assert!(cfg.validate().is_err());

        let mut cfg = ScenarioConfig::squeeze_toy();
        cfg.optimizers[0].eta = -1e-6;
        assert!(cfg.validate().is_err());

        let mut cfg = ScenarioConfig::squeeze_toy();
        cfg.optimizers.clear();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn practice_twin_still_validates() {
        let cfg = ScenarioConfig::squeeze_toy().to_practice();
        cfg.validate().unwrap();
        for arm in &cfg.optimizers {
            assert_eq!(arm.sign_convention, SignConvention::Practice);
        }
        assert_eq!(cfg.optimizers[0].optimizer, Optimizer::Gd);
        // Practice twins store the negated rate but step identically.
        assert_eq!(cfg.optimizers[0].eta, 2e-5);
    }
}
