//! Training objectives over fixed features: the pairwise preference loss
//! with its implicit-reward margin, and the signed single-example objective
//! that expresses the "descend on the negated loss" convention.
//!
//! The preference loss treats both responses of a pair as single tokens
//! sharing one feature vector, so the policy's log-normalizer is common to
//! both and the margin collapses to a difference of logits; the partition
//! term of the reward reparameterization never needs to be evaluated.

use serde::{Deserialize, Serialize};

use crate::dynamics::SignConvention;
use crate::error::{Error, Result};
use crate::geometry::{cross_entropy, FeatureVector, LogitVector, OneHotLabel, ParameterMatrix};

/// One preference example: shared features, a preferred and a dispreferred
/// class, and the frozen reference policy's logits.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferencePair {
    phi: FeatureVector,
    y_plus: OneHotLabel,
    y_minus: OneHotLabel,
    ref_logits: LogitVector,
}

impl PreferencePair {
    /// # Errors
    /// Rejects pairs whose labels coincide, disagree on the class count, or
    /// whose reference logits have the wrong length.
    pub fn new(
        phi: FeatureVector,
        y_plus: OneHotLabel,
        y_minus: OneHotLabel,
        ref_logits: LogitVector,
    ) -> Result<Self> {
        if y_plus.num_classes() != y_minus.num_classes() {
            return Err(Error::InvalidInput(
                "preference labels disagree on the class count".into(),
            ));
        }
        if y_plus.index() == y_minus.index() {
            return Err(Error::InvalidInput(
                "preferred and dispreferred classes must differ".into(),
            ));
        }
        if ref_logits.len() != y_plus.num_classes() {
            return Err(Error::DimensionMismatch(format!(
                "reference logits have length {}, expected {}",
                ref_logits.len(),
                y_plus.num_classes()
            )));
        }
        Ok(Self {
            phi,
            y_plus,
            y_minus,
            ref_logits,
        })
    }

    pub fn phi(&self) -> &FeatureVector {
        &self.phi
    }

    pub fn y_plus(&self) -> &OneHotLabel {
        &self.y_plus
    }

    pub fn y_minus(&self) -> &OneHotLabel {
        &self.y_minus
    }

    pub fn ref_logits(&self) -> &LogitVector {
        &self.ref_logits
    }

    pub fn num_classes(&self) -> usize {
        self.y_plus.num_classes()
    }
}

/// Temperature and sign convention for the preference loss.
///
/// Under [`SignConvention::Practice`] the loss and its gradient are negated,
/// so a descent step with positive rate on the practice objective retraces
/// the theory-convention step with negated rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DPOConfig {
    pub beta: f64,
    pub sign_convention: SignConvention,
}

impl DPOConfig {
    pub fn new(beta: f64, sign_convention: SignConvention) -> Result<Self> {
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::InvalidInput(format!(
                "temperature must be positive and finite, got {beta}"
            )));
        }
        Ok(Self {
            beta,
            sign_convention,
        })
    }
}

/// Which sign of the single-example objective to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ObjectiveSign {
    /// The ordinary loss `-ln p_y`.
    Positive,
    /// Its negation `+ln p_y`, descended on with a positive rate to realize
    /// a negative-rate step on the ordinary loss.
    Negative,
}

/// Scaled log-likelihood-ratio margin between the preferred and dispreferred
/// responses.
///
/// Both responses share one feature vector, so their log-probabilities share
/// one normalizer and the margin reduces to
/// `beta * ((z[y+] - z[y-]) - (ref[y+] - ref[y-]))`. The convention flag
/// does not affect the margin, only the loss built from it.
pub fn implicit_reward_margin(
    w: &ParameterMatrix,
    pair: &PreferencePair,
    cfg: &DPOConfig,
) -> Result<f64> {
    let z = w.logits(pair.phi())?;
    if z.len() != pair.num_classes() {
        return Err(Error::DimensionMismatch(format!(
            "model produces {} logits, pair expects {}",
            z.len(),
            pair.num_classes()
        )));
    }
    let zs = z.as_slice();
    let rs = pair.ref_logits().as_slice();
    let ip = pair.y_plus().index();
    let im = pair.y_minus().index();
    Ok(cfg.beta * ((zs[ip] - zs[im]) - (rs[ip] - rs[im])))
}

/// Logistic preference loss `-ln sigmoid(margin)`, via the branch-stable
/// softplus form; negated under the practice convention.
pub fn dpo_loss(w: &ParameterMatrix, pair: &PreferencePair, cfg: &DPOConfig) -> Result<f64> {
    let margin = implicit_reward_margin(w, pair, cfg)?;
    let loss = softplus(-margin);
    Ok(match cfg.sign_convention {
        SignConvention::Theory => loss,
        SignConvention::Practice => -loss,
    })
}

/// Gradient of [`dpo_loss`] with respect to the parameter matrix.
///
/// The margin depends on `W` only through `z[y+] - z[y-]`, giving
/// `-beta * sigmoid(-margin) * (y_plus - y_minus) phi^T`: a rank-one matrix
/// supported on the two label rows. Negated under the practice convention.
pub fn dpo_parameter_gradient(
    w: &ParameterMatrix,
    pair: &PreferencePair,
    cfg: &DPOConfig,
) -> Result<ParameterMatrix> {
    let margin = implicit_reward_margin(w, pair, cfg)?;
    let mut coeff = -cfg.beta * sigmoid(-margin);
    if cfg.sign_convention == SignConvention::Practice {
        coeff = -coeff;
    }
    let d = pair.phi().dim();
    let mut grad = ParameterMatrix::zeros(pair.num_classes(), d);
    {
        let data = grad.as_mut_slice();
        let ip = pair.y_plus().index();
        let im = pair.y_minus().index();
        for (a, &fa) in pair.phi().phi().iter().enumerate() {
            data[ip * d + a] = coeff * fa;
            data[im * d + a] = -coeff * fa;
        }
    }
    Ok(grad)
}

/// Single-example objective with an explicit sign: the ordinary
/// cross-entropy or its negation.
pub fn signed_objective(z: &LogitVector, y: &OneHotLabel, sign: ObjectiveSign) -> Result<f64> {
    let loss = cross_entropy(z, y)?;
    Ok(match sign {
        ObjectiveSign::Positive => loss,
        ObjectiveSign::Negative => -loss,
    })
}

/// `ln(1 + e^x)` without overflow for large positive `x` or underflow of the
/// tail for large negative `x`.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `1 / (1 + e^{-x})` evaluated on the non-overflowing branch.
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair_v3(ref_logits: [f64; 3], y_plus: usize, y_minus: usize) -> PreferencePair {
        PreferencePair::new(
            FeatureVector::new(vec![1.0]).unwrap(),
            OneHotLabel::new(y_plus, 3).unwrap(),
            OneHotLabel::new(y_minus, 3).unwrap(),
            LogitVector::new(ref_logits.to_vec()).unwrap(),
        )
        .unwrap()
    }

    fn theory_cfg(beta: f64) -> DPOConfig {
        DPOConfig::new(beta, SignConvention::Theory).unwrap()
    }

    #[test]
    fn margin_vanishes_when_policy_equals_reference() {
        let pair = pair_v3([0.4, -1.1, 0.7], 1, 2);
        // With phi = (1), the single parameter column is the logit vector.
        let w = ParameterMatrix::from_vec(vec![0.4, -1.1, 0.7], 3, 1).unwrap();
        let m = implicit_reward_margin(&w, &pair, &theory_cfg(0.9)).unwrap();
        assert_eq!(m, 0.0);
    }

    #[test]
    fn margin_is_linear_in_temperature() {
        let pair = pair_v3([0.1, 0.4, -0.3], 0, 2);
        let w = ParameterMatrix::from_vec(vec![0.3, -0.2, 0.5], 3, 1).unwrap();
        let m1 = implicit_reward_margin(&w, &pair, &theory_cfg(0.7)).unwrap();
        let m2 = implicit_reward_margin(&w, &pair, &theory_cfg(1.4)).unwrap();
        assert!((m2 - 2.0 * m1).abs() < 1e-15);
    }

    #[test]
    fn margin_and_loss_match_high_precision_reference() {
        let pair = pair_v3([0.1, 0.4, -0.3], 0, 2);
        let w = ParameterMatrix::from_vec(vec![0.3, -0.2, 0.5], 3, 1).unwrap();
        let cfg = theory_cfg(0.7);
        let m = implicit_reward_margin(&w, &pair, &cfg).unwrap();
        assert!((m - (-0.42)).abs() < 1e-15);
        let loss = dpo_loss(&w, &pair, &cfg).unwrap();
        assert!((loss - 0.9250369938177536931421).abs() < 1e-15);
    }

    #[test]
    fn loss_at_zero_margin_is_ln2() {
        let pair = pair_v3([0.0, 0.0, 0.0], 0, 1);
        let w = ParameterMatrix::zeros(3, 1);
        let loss = dpo_loss(&w, &pair, &theory_cfg(2.0)).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn loss_collapses_at_large_margin() {
        let pair = pair_v3([0.0, 0.0, 0.0], 0, 1);
        let w = ParameterMatrix::from_vec(vec![50.0, 0.0, 0.0], 3, 1).unwrap();
        let loss = dpo_loss(&w, &pair, &theory_cfg(1.0)).unwrap();
        assert!(loss > 0.0);
        assert!(loss < 1e-20);
    }

    #[test]
    fn loss_strictly_decreases_in_preferred_logit() {
        let pair = pair_v3([0.2, -0.1, 0.0], 0, 1);
        let cfg = theory_cfg(0.8);
        let mut prev = f64::INFINITY;
        for z0 in [-2.0, -1.0, 0.0, 1.0, 2.0] {
            let w = ParameterMatrix::from_vec(vec![z0, 0.3, -0.5], 3, 1).unwrap();
            let loss = dpo_loss(&w, &pair, &cfg).unwrap();
            assert!(loss < prev);
            prev = loss;
        }
    }

    #[test]
    fn reference_shift_leaves_everything_unchanged() {
        let w = ParameterMatrix::from_vec(vec![0.3, -0.2, 0.5], 3, 1).unwrap();
        let cfg = theory_cfg(0.7);
        let base = pair_v3([0.1, 0.4, -0.3], 0, 2);
        let shifted = pair_v3([0.1 + 7.25, 0.4 + 7.25, -0.3 + 7.25], 0, 2);
        let m0 = implicit_reward_margin(&w, &base, &cfg).unwrap();
        let m1 = implicit_reward_margin(&w, &shifted, &cfg).unwrap();
        assert!((m0 - m1).abs() < 1e-10);
        let g0 = dpo_parameter_gradient(&w, &base, &cfg).unwrap();
        let g1 = dpo_parameter_gradient(&w, &shifted, &cfg).unwrap();
        assert!(g0.max_abs_diff(&g1).unwrap() < 1e-10);
    }

    #[test]
    fn gradient_pushes_preferred_logit_up() {
        let pair = pair_v3([0.0, 0.0, 0.0], 0, 2);
        let w = ParameterMatrix::zeros(3, 1);
        let g = dpo_parameter_gradient(&w, &pair, &theory_cfg(1.0)).unwrap();
        // Descending along -g raises z[y+] and lowers z[y-].
        assert!(g.get(0, 0) < 0.0);
        assert!(g.get(2, 0) > 0.0);
        assert_eq!(g.get(1, 0), 0.0);
    }

    #[test]
    fn gradient_nearly_vanishes_at_tiny_temperature() {
        let pair = pair_v3([0.1, 0.4, -0.3], 0, 2);
        let w = ParameterMatrix::from_vec(vec![0.3, -0.2, 0.5], 3, 1).unwrap();
        let g = dpo_parameter_gradient(&w, &pair, &theory_cfg(1e-12)).unwrap();
        assert!(g.frobenius_norm() < 1e-11);
    }

    #[test]
    fn practice_convention_negates_loss_and_gradient() {
        let pair = pair_v3([0.1, 0.4, -0.3], 0, 2);
        let w = ParameterMatrix::from_vec(vec![0.3, -0.2, 0.5], 3, 1).unwrap();
        let theory = theory_cfg(0.7);
        let practice = DPOConfig::new(0.7, SignConvention::Practice).unwrap();
        let lt = dpo_loss(&w, &pair, &theory).unwrap();
        let lp = dpo_loss(&w, &pair, &practice).unwrap();
        assert_eq!(lp, -lt);
        let gt = dpo_parameter_gradient(&w, &pair, &theory).unwrap();
        let gp = dpo_parameter_gradient(&w, &pair, &practice).unwrap();
        for (a, b) in gt.as_slice().iter().zip(gp.as_slice()) {
            assert_eq!(*b, -*a);
        }
    }

    #[test]
    fn signed_objective_signs() {
        let z = LogitVector::new(vec![0.0, 0.0]).unwrap();
        let y = OneHotLabel::new(0, 2).unwrap();
        let pos = signed_objective(&z, &y, ObjectiveSign::Positive).unwrap();
        let neg = signed_objective(&z, &y, ObjectiveSign::Negative).unwrap();
        assert!((pos - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(neg, -pos);
    }

    #[test]
    fn rejects_degenerate_pairs() {
        let phi = FeatureVector::new(vec![1.0]).unwrap();
        let y0 = OneHotLabel::new(0, 3).unwrap();
        let r = LogitVector::new(vec![0.0; 3]).unwrap();
        assert!(PreferencePair::new(phi.clone(), y0, y0, r.clone()).is_err());
        let y1 = OneHotLabel::new(1, 3).unwrap();
        let short = LogitVector::new(vec![0.0; 2]).unwrap();
        assert!(PreferencePair::new(phi, y0, y1, short).is_err());
        assert!(DPOConfig::new(0.0, SignConvention::Theory).is_err());
        assert!(DPOConfig::new(-1.0, SignConvention::Theory).is_err());
    }
}
