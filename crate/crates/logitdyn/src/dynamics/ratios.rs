//! Multiplicative structure of one-step confidence ratios.
//!
//! Fix a target class `i` and take one exact logit-space step `z -> z'`.
//! Writing each class's logit move relative to the target's,
//!
//! ```text
//! alpha_i = p'_i / p_i = sum_j e^{z_j} / sum_j beta_j e^{z_j},
//! beta_j = exp{ (z'_j - z_j) - (z'_i - z_i) }
//! ```
//!
//! For plain descent the exponent is `-eta mu (g_j - g_i)` exactly. For the
//! perturbed rule the same exponent splits into that descent part, a
//! curvature part `-eta mu rt ((Hg)_j - (Hg)_i)`, and whatever is left,
//! which is quadratic in `rt`; the leftover is measured from the exact step
//! rather than modeled. The three pieces are reported as per-class factors
//! whose product reconstructs `alpha_i`.

use crate::error::{Error, Result};
use crate::geometry::{
    hessian_gradient_product, logit_gradient, softmax, LogitVector, OneHotLabel, ProbVector,
};

use super::{Optimizer, UpdateConfig};

/// Per-class factors of one target class's confidence ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorReport {
    pub target_class: usize,
    /// `alpha_i` rebuilt from the factor product; agrees with the directly
    /// computed ratio to rounding.
    pub alpha_reconstructed: f64,
    /// Descent factors `exp{-eta mu (g_j - g_i)}`.
    pub beta_gd: Vec<f64>,
    /// Curvature factors `exp{-eta mu rt delta_j}`; all 1 without a
    /// perturbation.
    pub curvature: Vec<f64>,
    /// Measured leftover factors; 1 exactly for plain descent.
    pub remainder: Vec<f64>,
    /// Curvature gaps `delta_j = (Hg)_j - (Hg)_i`.
    pub delta: Vec<f64>,
}

/// Factorizes the confidence ratio of `target` across one exact step of the
/// configured rule, at squared feature norm `mu`.
///
/// Works with the true residual in the theory framing; a practice config is
/// mapped to its theory twin first, which drives the identical step. The
/// state must be interior so logits can be recovered as `ln p`.
pub fn ratio_factorization(
    p: &ProbVector,
    y: &OneHotLabel,
    mu: f64,
    cfg: &UpdateConfig,
    target: usize,
) -> Result<FactorReport> {
    let v = p.len();
    if y.num_classes() != v {
        return Err(Error::DimensionMismatch(
            "label class count must match the probability length".into(),
        ));
    }
    if target >= v {
        return Err(Error::InvalidInput(format!(
            "target class {target} out of range for {v} classes"
        )));
    }
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(Error::InvalidInput(format!(
            "squared feature norm must be positive and finite, got {mu}"
        )));
    }
    let ps = p.as_slice();
    if ps.iter().any(|&x| x <= 0.0) {
        return Err(Error::InvalidInput(
            "factorization requires an interior state".into(),
        ));
    }

    let (eta_t, rho_t) = cfg.theory_rates();
    let eff = eta_t * mu;
    let z: Vec<f64> = ps.iter().map(|&x| x.ln()).collect();
    let g: Vec<f64> = ps
        .iter()
        .enumerate()
        .map(|(i, &pi)| pi - y.indicator(i))
        .collect();
    let hg = hessian_gradient_product(p, y)?;
    let delta: Vec<f64> = hg.iter().map(|&x| x - hg[target]).collect();

    let gnorm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    let perturbed = matches!(cfg.optimizer, Optimizer::SamFull | Optimizer::LogitsSam)
        && gnorm > 0.0
        && rho_t != 0.0;
    let rt = if perturbed {
        rho_t * mu.sqrt() / gnorm
    } else {
        0.0
    };

    // The residual the exact step actually descends on: evaluated at the
    // climbed point for the perturbed rule, at the current point otherwise.
    let s_step: Vec<f64> = if perturbed {
        let z_adv: Vec<f64> = z.iter().zip(&g).map(|(zi, gi)| zi + rt * gi).collect();
        let p_adv = softmax(&LogitVector::new(z_adv)?)?;
        logit_gradient(&p_adv, y)?.as_slice().to_vec()
    } else {
        g.clone()
    };

    let mut beta_gd = vec![0.0; v];
    let mut curvature = vec![0.0; v];
    let mut remainder = vec![0.0; v];
    let mut beta_full = vec![0.0; v];
    for j in 0..v {
        let exponent = -eff * (s_step[j] - s_step[target]);
        let gd_part = -eff * (g[j] - g[target]);
        let curv_part = -eff * rt * delta[j];
        let rem_part = exponent - gd_part - curv_part;
        beta_gd[j] = gd_part.exp();
        curvature[j] = curv_part.exp();
        remainder[j] = rem_part.exp();
        beta_full[j] = beta_gd[j] * curvature[j] * remainder[j];
    }

    // Stable reconstruction: scale numerator and denominator by e^{-max z}.
    let m = z.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut num = 0.0;
    let mut den = 0.0;
    for j in 0..v {
        let w = (z[j] - m).exp();
        num += w;
        den += beta_full[j] * w;
    }

    Ok(FactorReport {
        target_class: target,
        alpha_reconstructed: num / den,
        beta_gd,
        curvature,
        remainder,
        delta,
    })
}
