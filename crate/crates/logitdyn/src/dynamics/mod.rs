//! Update rules and their analysis: plain gradient descent, two-pass
//! perturbed descent over the full parameter matrix, the output-layer-only
//! variant of the same, first-order forecasts of all three, the per-mode
//! scalar recursion, and one-step confidence-ratio diagnostics.
//!
//! Sign conventions. Every rule is written as descent, `w - eta * grad`,
//! and `eta` may be negative: a negative rate on the ordinary loss is the
//! same trajectory as a positive rate on the negated loss. The
//! [`SignConvention`] flag selects which of those two framings a config uses.
//! Under [`SignConvention::Practice`] the step functions negate the residual
//! and keep the config's own `eta` and `rho`; because IEEE negation is
//! exact, a practice step with `(-eta, -rho)` retraces the corresponding
//! theory step bit for bit. Analysis helpers (forecasts, factorizations)
//! instead map practice rates back to the theory framing and work with the
//! true residual `p - y` throughout.
//!
//! The forecast quantities, for a step of effective size `eta * mu`:
//!
//! - parameters: `w - eta (g phi^T + rt H g phi^T)`
//! - logits: `z - eta mu (g + rt H g)`
//! - residual: `(I - eta mu H - eta mu rt H^2) g`
//!
//! where `rt = rho sqrt(mu) / ||g||` is the equivalent logit-space
//! perturbation radius (zero for plain descent or a vanishing gradient),
//! each with a remainder of order `eta^2`. Projected onto an eigenvector
//! `v_k` of `H` with eigenvalue `lambda_k`, the residual forecast becomes
//! the scalar recursion `e_k' = (1 - eta mu (lambda_k + rt lambda_k^2)) e_k`.

mod ratios;

pub use ratios::{ratio_factorization, FactorReport};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    logit_gradient, logit_hessian, softmax, FeatureVector, LogitVector, ModalBasis, OneHotLabel,
    ParameterMatrix, ProbVector, Residual,
};
use crate::objectives::PreferencePair;

/// Probabilities below this are considered numerically dead for ratio
/// purposes; dividing by them would manufacture noise, not information.
pub const RATIO_FLOOR: f64 = 1e-300;

const KAPPA_COUPLING_TOL: f64 = 1e-12;
const MODAL_COMPLETENESS_TOL: f64 = 1e-9;

/// Which update rule a config drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Optimizer {
    #[serde(rename = "GD")]
    Gd,
    #[serde(rename = "SAM_FULL")]
    SamFull,
    #[serde(rename = "LOGITS_SAM")]
    LogitsSam,
}

/// Which sign framing the config's rates live in.
///
/// `Theory`: rates apply to the ordinary loss, and the negative-rate regime
/// is expressed by `eta < 0`. `Practice`: rates apply to the negated loss,
/// so the same regime is expressed by `eta > 0`. A theory config maps to its
/// practice twin by negating both rates (see [`UpdateConfig::to_practice`]).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SignConvention {
    #[serde(rename = "THEORY")]
    Theory,
    #[serde(rename = "PRACTICE")]
    Practice,
}

/// Step size, perturbation radius, and rule selection for one optimizer arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UpdateConfig {
    pub eta: f64,
    pub rho: f64,
    /// When positive, declares the coupling `|rho| = kappa * sqrt(|eta|)`
    /// used by radius-scaling sweeps; checked at construction.
    pub kappa: f64,
    pub optimizer: Optimizer,
    pub sign_convention: SignConvention,
}

impl UpdateConfig {
    pub fn new(
        eta: f64,
        rho: f64,
        kappa: f64,
        optimizer: Optimizer,
        sign_convention: SignConvention,
    ) -> Result<Self> {
        let cfg = Self {
            eta,
            rho,
            kappa,
            optimizer,
            sign_convention,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Plain descent at rate `eta`, theory framing.
    pub fn gd(eta: f64) -> Result<Self> {
        Self::new(eta, 0.0, 0.0, Optimizer::Gd, SignConvention::Theory)
    }

    /// Two-pass perturbed descent over the full matrix, theory framing.
    pub fn sam_full(eta: f64, rho: f64) -> Result<Self> {
        Self::new(eta, rho, 0.0, Optimizer::SamFull, SignConvention::Theory)
    }

    /// Output-layer perturbed descent, theory framing.
    pub fn logits_sam(eta: f64, rho: f64) -> Result<Self> {
        Self::new(eta, rho, 0.0, Optimizer::LogitsSam, SignConvention::Theory)
    }

    /// Perturbed descent with the radius tied to the step size as
    /// `rho = sign * kappa * sqrt(|eta|)`.
    pub fn sam_scaled(eta: f64, kappa: f64, rho_negative: bool) -> Result<Self> {
        let mag = kappa * eta.abs().sqrt();
        let rho = if rho_negative { -mag } else { mag };
        Self::new(eta, rho, kappa, Optimizer::SamFull, SignConvention::Theory)
    }

    /// The practice-framing twin of this config: rates negated, convention
    /// flipped. The twin drives the identical parameter trajectory.
    pub fn to_practice(&self) -> Self {
        match self.sign_convention {
            SignConvention::Practice => *self,
            SignConvention::Theory => Self {
                eta: -self.eta,
                rho: -self.rho,
                sign_convention: SignConvention::Practice,
                ..*self
            },
        }
    }

    /// The theory-framing twin of this config.
    pub fn to_theory(&self) -> Self {
        match self.sign_convention {
            SignConvention::Theory => *self,
            SignConvention::Practice => Self {
                eta: -self.eta,
                rho: -self.rho,
                sign_convention: SignConvention::Theory,
                ..*self
            },
        }
    }

    /// `(eta, rho)` expressed in the theory framing, for analysis paths.
    pub fn theory_rates(&self) -> (f64, f64) {
        match self.sign_convention {
            SignConvention::Theory => (self.eta, self.rho),
            SignConvention::Practice => (-self.eta, -self.rho),
        }
    }

    /// Whether this config's rule applies a perturbation pass.
    pub fn is_perturbed(&self) -> bool {
        matches!(self.optimizer, Optimizer::SamFull | Optimizer::LogitsSam)
    }

    /// # Errors
    /// Rejects non-finite rates, `|eta| > 1`, negative `kappa`, and a broken
    /// `|rho| = kappa * sqrt(|eta|)` coupling when `kappa > 0`. A zero `eta`
    /// is accepted: no-op probes of the predictors are legitimate.
    pub fn validate(&self) -> Result<()> {
        if !self.eta.is_finite() || self.eta.abs() > 1.0 {
            return Err(Error::Config(format!(
                "step size must be finite with |eta| <= 1, got {}",
                self.eta
            )));
        }
        if !self.rho.is_finite() {
            return Err(Error::Config("perturbation radius must be finite".into()));
        }
        if !self.kappa.is_finite() || self.kappa < 0.0 {
            return Err(Error::Config(format!(
                "kappa must be finite and nonnegative, got {}",
                self.kappa
            )));
        }
        if self.kappa > 0.0 {
            let expected = self.kappa * self.eta.abs().sqrt();
            if (self.rho.abs() - expected).abs() > KAPPA_COUPLING_TOL {
                return Err(Error::Config(format!(
                    "|rho| = {} breaks the declared coupling kappa*sqrt(|eta|) = {expected}",
                    self.rho.abs()
                )));
            }
        }
        Ok(())
    }
}

/// First-order forecast of one update, plus the bookkeeping the remainder
/// analysis needs.
#[derive(Debug, Clone)]
pub struct DynamicsPrediction {
    pub w_pred: ParameterMatrix,
    pub z_pred: LogitVector,
    /// Forecast of the next true residual `p - y` (regardless of the
    /// config's sign framing).
    pub g_pred: Residual,
    /// Equivalent logit-space radius `rho sqrt(mu) / ||g||` computed from
    /// the config's own `rho`, so it flips sign with the framing; zero for
    /// plain descent or a vanishing residual.
    pub rho_tilde: f64,
    /// `eta^2` in theory framing: the remainder bound up to a
    /// scenario-dependent constant, which callers fit empirically via
    /// [`fit_remainder_constant`].
    pub remainder_budget: f64,
}

/// Modal coefficients: the residual projected on a spectral basis.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalCoefficients {
    e: Vec<f64>,
}

impl ModalCoefficients {
    pub fn new(e: Vec<f64>) -> Result<Self> {
        if e.is_empty() {
            return Err(Error::InvalidInput("no modal coefficients".into()));
        }
        if e.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("modal coefficients".into()));
        }
        Ok(Self { e })
    }

    /// Projects a residual onto the basis and checks completeness: the
    /// coefficients must capture the whole residual norm, which holds
    /// exactly when the residual is orthogonal to the all-ones direction.
    pub fn from_residual(basis: &ModalBasis, g: &Residual) -> Result<Self> {
        let e = basis.project(g.as_slice())?;
        let captured: f64 = e.iter().map(|x| x * x).sum();
        let total = g.norm().powi(2);
        if (captured - total).abs() > MODAL_COMPLETENESS_TOL {
            return Err(Error::InvalidInput(format!(
                "basis captures {captured} of residual norm-square {total}; incomplete"
            )));
        }
        Ok(Self { e })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.e
    }

    pub fn len(&self) -> usize {
        self.e.len()
    }

    pub fn is_empty(&self) -> bool {
        self.e.is_empty()
    }

    /// Euclidean norm of the coefficients, which equals the residual norm
    /// when the basis is complete.
    pub fn norm(&self) -> f64 {
        self.e.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Element-wise probability ratios across one step.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceRatios {
    /// `p_after[i] / p_before[i]`; entries whose denominator sat below
    /// [`RATIO_FLOOR`] are reported as 0 with `ratios_valid` cleared.
    pub alpha: Vec<f64>,
    /// Most confident incorrect class of the *before* state.
    pub y_star: usize,
    pub ratios_valid: bool,
}

/// Dominant-pair reduction of a state: how much probability the label and
/// its strongest rival hold, and the curvature-gap window that the
/// perturbed-descent comparison needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Top2Diagnostics {
    /// `p_y + p_{y*}`.
    pub s: f64,
    /// Tail mass `1 - s`, clamped at zero against rounding.
    pub tau: f64,
    /// `p_y / s`.
    pub p_bar_y: f64,
    /// Binary curvature gap `4 p_bar_y (1 - p_bar_y)^2` of the renormalized
    /// pair.
    pub delta_bin: f64,
    /// `[4 B e^2 tau / p_{y*}, delta_bin - 6 tau]` with `B = sqrt(2)`.
    pub gamma0_window: [f64; 2],
    /// Whether the window is non-empty.
    pub feasible: bool,
}

/// Most confident class other than the label, ties resolved toward the
/// lowest index.
pub(crate) fn most_confident_wrong(p: &[f64], y: &OneHotLabel) -> usize {
    let mut best = usize::MAX;
    let mut best_p = f64::NEG_INFINITY;
    for (j, &pj) in p.iter().enumerate() {
        if j != y.index() && pj > best_p {
            best_p = pj;
            best = j;
        }
    }
    best
}

fn signed_residual(g: &Residual, convention: SignConvention) -> Vec<f64> {
    match convention {
        SignConvention::Theory => g.as_slice().to_vec(),
        SignConvention::Practice => g.as_slice().iter().map(|x| -x).collect(),
    }
}

fn residual_at(w: &ParameterMatrix, phi: &FeatureVector, y: &OneHotLabel) -> Result<Residual> {
    let z = w.logits(phi)?;
    let p = softmax(&z)?;
    logit_gradient(&p, y)
}

/// One plain descent step `w - eta * s phi^T`, where `s` is the residual in
/// the config's sign framing.
pub fn gd_step(
    w: &ParameterMatrix,
    phi: &FeatureVector,
    y: &OneHotLabel,
    cfg: &UpdateConfig,
) -> Result<ParameterMatrix> {
    debug_assert!(matches!(cfg.optimizer, Optimizer::Gd));
    let g = residual_at(w, phi, y)?;
    let s = signed_residual(&g, cfg.sign_convention);
    let d = w.cols();
    let mut out = w.as_slice().to_vec();
    for (i, &si) in s.iter().enumerate() {
        for (a, &fa) in phi.phi().iter().enumerate() {
            out[i * d + a] -= cfg.eta * (si * fa);
        }
    }
    ParameterMatrix::from_vec(out, w.rows(), d)
}

/// One two-pass perturbed descent step over the full matrix: climb to
/// `w + rho * grad / ||grad||`, take the gradient there, descend from `w`.
///
/// Both gradient evaluations are exact (no first-order shortcut). A zero
/// first-pass gradient or a zero radius skips the climb, making the step
/// identical to [`gd_step`].
pub fn sam_full_step(
    w: &ParameterMatrix,
    phi: &FeatureVector,
    y: &OneHotLabel,
    cfg: &UpdateConfig,
) -> Result<ParameterMatrix> {
    debug_assert!(matches!(cfg.optimizer, Optimizer::SamFull));
    let g = residual_at(w, phi, y)?;
    let s1 = signed_residual(&g, cfg.sign_convention);
    let rows = w.rows();
    let d = w.cols();

    let mut grad1 = vec![0.0; rows * d];
    for (i, &si) in s1.iter().enumerate() {
        for (a, &fa) in phi.phi().iter().enumerate() {
            grad1[i * d + a] = si * fa;
        }
    }
    let norm = grad1.iter().map(|x| x * x).sum::<f64>().sqrt();

    let w_eval = if norm > 0.0 && cfg.rho != 0.0 {
        let scale = cfg.rho / norm;
        let mut adv = w.as_slice().to_vec();
        for (t, &gi) in adv.iter_mut().zip(&grad1) {
            *t += scale * gi;
        }
        ParameterMatrix::from_vec(adv, rows, d)?
    } else {
        w.clone()
    };

    let g2 = residual_at(&w_eval, phi, y)?;
    let s2 = signed_residual(&g2, cfg.sign_convention);
    let mut out = w.as_slice().to_vec();
    for (i, &si) in s2.iter().enumerate() {
        for (a, &fa) in phi.phi().iter().enumerate() {
            out[i * d + a] -= cfg.eta * (si * fa);
        }
    }
    ParameterMatrix::from_vec(out, rows, d)
}

/// What the output-layer step optimizes.
#[derive(Debug, Clone, Copy)]
pub enum LossTarget<'a> {
    /// Single-example cross-entropy toward a label.
    CrossEntropy(&'a OneHotLabel),
    /// Pairwise preference loss at the given temperature.
    Preference { pair: &'a PreferencePair, beta: f64 },
}

/// One perturbed descent step that perturbs only the output layer, driven
/// by cached penultimate activations.
///
/// The sequence is: take the output-layer gradient, climb distance `rho`
/// along its direction, take the gradient at the climbed point, descend
/// from the original matrix. When the output layer is the entire trainable
/// state, as here, this coincides with [`sam_full_step`]; the two are kept
/// as separate implementations and their agreement is a test subject, not
/// an assumption.
pub fn logits_sam_step(
    w_out: &ParameterMatrix,
    hidden: &FeatureVector,
    target: &LossTarget,
    cfg: &UpdateConfig,
) -> Result<ParameterMatrix> {
    debug_assert!(matches!(cfg.optimizer, Optimizer::LogitsSam));
    if let LossTarget::Preference { pair, .. } = target {
        if pair.phi().phi() != hidden.phi() {
            return Err(Error::InvalidInput(
                "preference pair features must match the hidden activations".into(),
            ));
        }
    }

    let grad_at = |wm: &ParameterMatrix| -> Result<ParameterMatrix> {
        match target {
            LossTarget::CrossEntropy(y) => {
                let g = residual_at(wm, hidden, y)?;
                let s = signed_residual(&g, cfg.sign_convention);
                let d = wm.cols();
                let mut grad = ParameterMatrix::zeros(wm.rows(), d);
                let data = grad.as_mut_slice();
                for (i, &si) in s.iter().enumerate() {
                    for (a, &fa) in hidden.phi().iter().enumerate() {
                        data[i * d + a] = si * fa;
                    }
                }
                Ok(grad)
            }
            LossTarget::Preference { pair, beta } => {
                let dcfg = crate::objectives::DPOConfig::new(*beta, cfg.sign_convention)?;
                crate::objectives::dpo_parameter_gradient(wm, pair, &dcfg)
            }
        }
    };

    let g1 = grad_at(w_out)?;
    let norm = g1.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();

    let w_eval = if norm > 0.0 && cfg.rho != 0.0 {
        let scale = cfg.rho / norm;
        let mut adv = w_out.as_slice().to_vec();
        for (t, &gi) in adv.iter_mut().zip(g1.as_slice()) {
            *t += scale * gi;
        }
        ParameterMatrix::from_vec(adv, w_out.rows(), w_out.cols())?
    } else {
        w_out.clone()
    };

    let g2 = grad_at(&w_eval)?;
    let mut out = w_out.as_slice().to_vec();
    for (t, &gi) in out.iter_mut().zip(g2.as_slice()) {
        *t -= cfg.eta * gi;
    }
    ParameterMatrix::from_vec(out, w_out.rows(), w_out.cols())
}

/// The exact logit-space image of one parameter-space step.
///
/// A rank-one parameter update moves the logits by `-eta mu s` evaluated at
/// the perturbed point, so the whole trajectory closes in logit space:
/// plain descent maps `z` to `z - eta mu s(z)`, and the perturbed rule maps
/// it to `z - eta mu s(z + rt s(z))` with `rt = rho sqrt(mu) / ||s||`. This
/// is an identity of the parameter step, not an approximation, and it is
/// what makes large-`d` simulation cheap.
pub fn logit_space_step(
    z: &LogitVector,
    y: &OneHotLabel,
    mu: f64,
    cfg: &UpdateConfig,
) -> Result<LogitVector> {
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(Error::InvalidInput(format!(
            "squared feature norm must be positive and finite, got {mu}"
        )));
    }
    let p = softmax(z)?;
    let g = logit_gradient(&p, y)?;
    let s = signed_residual(&g, cfg.sign_convention);
    let eff = cfg.eta * mu;

    let s_eval = if cfg.is_perturbed() {
        let norm = s.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 && cfg.rho != 0.0 {
            let rt = cfg.rho * mu.sqrt() / norm;
            let z_adv: Vec<f64> = z
                .as_slice()
                .iter()
                .zip(&s)
                .map(|(zi, si)| zi + rt * si)
                .collect();
            let p_adv = softmax(&LogitVector::new(z_adv)?)?;
            let g_adv = logit_gradient(&p_adv, y)?;
            signed_residual(&g_adv, cfg.sign_convention)
        } else {
            s
        }
    } else {
        s
    };

    LogitVector::new(
        z.as_slice()
            .iter()
            .zip(&s_eval)
            .map(|(zi, si)| zi - eff * si)
            .collect(),
    )
}

/// First-order forecast of the next state under the config's rule.
///
/// Exact at `eta = 0`; for plain descent the perturbation terms vanish and
/// the forecast is the bare linearization. The remainder is quadratic in
/// the step size; see [`DynamicsPrediction::remainder_budget`].
pub fn predict_step(
    w: &ParameterMatrix,
    phi: &FeatureVector,
    y: &OneHotLabel,
    cfg: &UpdateConfig,
) -> Result<DynamicsPrediction> {
    let (eta_t, rho_t) = cfg.theory_rates();
    let z = w.logits(phi)?;
    let p = softmax(&z)?;
    let g = logit_gradient(&p, y)?;
    let mu = phi.mu();
    let h = logit_hessian(&p);
    let hg = h.apply(g.as_slice())?;
    let h2g = h.apply(&hg)?;
    let gnorm = g.norm();

    let perturbed = cfg.is_perturbed() && gnorm > 0.0;
    let rt_theory = if perturbed {
        rho_t * mu.sqrt() / gnorm
    } else {
        0.0
    };
    let rho_tilde = if perturbed {
        cfg.rho * mu.sqrt() / gnorm
    } else {
        0.0
    };

    let rows = w.rows();
    let d = w.cols();
    let gs = g.as_slice();
    let mut wp = w.as_slice().to_vec();
    for i in 0..rows {
        let ci = gs[i] + rt_theory * hg[i];
        for (a, &fa) in phi.phi().iter().enumerate() {
            wp[i * d + a] -= eta_t * (ci * fa);
        }
    }

    let eff = eta_t * mu;
    let zp: Vec<f64> = z
        .as_slice()
        .iter()
        .enumerate()
        .map(|(i, &zi)| zi - eff * (gs[i] + rt_theory * hg[i]))
        .collect();
    let gp: Vec<f64> = gs
        .iter()
        .enumerate()
        .map(|(i, &gi)| gi - eff * hg[i] - eff * rt_theory * h2g[i])
        .collect();

    Ok(DynamicsPrediction {
        w_pred: ParameterMatrix::from_vec(wp, rows, d)?,
        z_pred: LogitVector::new(zp)?,
        g_pred: Residual::new(gp)?,
        rho_tilde,
        remainder_budget: eta_t * eta_t,
    })
}

/// Applies the per-mode scalar recursion
/// `e_k' = (1 - eta mu (lambda_k + rt lambda_k^2)) e_k`
/// in a frozen spectral basis.
///
/// The residual norm needed for `rt` is recovered from the coefficients
/// themselves, which is exact because the basis is complete on the
/// residual's subspace. The measured remainder is excluded: this is the
/// forecast, and its error is the quantity under study.
pub fn modal_step_predict(
    basis: &ModalBasis,
    e: &ModalCoefficients,
    cfg: &UpdateConfig,
    mu: f64,
) -> Result<ModalCoefficients> {
    if e.len() != basis.num_modes() {
        return Err(Error::DimensionMismatch(format!(
            "{} coefficients for a basis of {} modes",
            e.len(),
            basis.num_modes()
        )));
    }
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(Error::InvalidInput(format!(
            "squared feature norm must be positive and finite, got {mu}"
        )));
    }
    let (eta_t, rho_t) = cfg.theory_rates();
    let gnorm = e.norm();
    let rt = if cfg.is_perturbed() && gnorm > 0.0 {
        rho_t * mu.sqrt() / gnorm
    } else {
        0.0
    };
    let out: Vec<f64> = basis
        .eigenvalues()
        .iter()
        .zip(e.as_slice())
        .map(|(&lk, &ek)| (1.0 - eta_t * mu * (lk + rt * lk * lk)) * ek)
        .collect();
    ModalCoefficients::new(out)
}

/// Element-wise probability ratios `p_after / p_before`, with the most
/// confident wrong class identified on the before-state.
///
/// Denominators below [`RATIO_FLOOR`] clear `ratios_valid` and report 0 for
/// the affected entries instead of manufacturing infinities.
pub fn confidence_ratios(
    p_before: &ProbVector,
    p_after: &ProbVector,
    y: &OneHotLabel,
) -> Result<ConfidenceRatios> {
    let v = p_before.len();
    if p_after.len() != v || y.num_classes() != v {
        return Err(Error::DimensionMismatch(
            "before, after, and label class counts must agree".into(),
        ));
    }
    let y_star = most_confident_wrong(p_before.as_slice(), y);
    let mut ratios_valid = true;
    let alpha: Vec<f64> = p_before
        .as_slice()
        .iter()
        .zip(p_after.as_slice())
        .map(|(&before, &after)| {
            if before < RATIO_FLOOR {
                ratios_valid = false;
                0.0
            } else {
                after / before
            }
        })
        .collect();
    Ok(ConfidenceRatios {
        alpha,
        y_star,
        ratios_valid,
    })
}

/// Dominant-pair diagnostics of a state; see [`Top2Diagnostics`].
pub fn top2_diagnostics(p: &ProbVector, y: &OneHotLabel) -> Result<Top2Diagnostics> {
    let v = p.len();
    if y.num_classes() != v {
        return Err(Error::DimensionMismatch(
            "label class count must match the probability length".into(),
        ));
    }
    let ps = p.as_slice();
    let py = ps[y.index()];
    let y_star = most_confident_wrong(ps, y);
    let p_star = ps[y_star];
    let s = py + p_star;
    // s can land an ulp above 1 when the tail underflows to nothing.
    let tau = (1.0 - s).max(0.0);
    let p_bar_y = if s > 0.0 { py / s } else { 0.0 };
    let delta_bin = 4.0 * p_bar_y * (1.0 - p_bar_y) * (1.0 - p_bar_y);
    let b = std::f64::consts::SQRT_2;
    let e_sq = std::f64::consts::E * std::f64::consts::E;
    let lo = if tau == 0.0 {
        0.0
    } else if p_star > 0.0 {
        4.0 * b * e_sq * tau / p_star
    } else {
        f64::INFINITY
    };
    let hi = delta_bin - 6.0 * tau;
    Ok(Top2Diagnostics {
        s,
        tau,
        p_bar_y,
        delta_bin,
        gamma0_window: [lo, hi],
        feasible: lo <= hi,
    })
}

/// Least-squares fit of the constant in `error = C * eta^2` over a grid of
/// step sizes with measured errors.
pub fn fit_remainder_constant(etas: &[f64], errors: &[f64]) -> Result<f64> {
    if etas.is_empty() || etas.len() != errors.len() {
        return Err(Error::InvalidInput(
            "need matching, non-empty step and error lists".into(),
        ));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (&eta, &err) in etas.iter().zip(errors) {
        if !eta.is_finite() || !err.is_finite() || eta == 0.0 {
            return Err(Error::InvalidInput(
                "steps must be finite and nonzero, errors finite".into(),
            ));
        }
        let e2 = eta * eta;
        num += err * e2;
        den += e2 * e2;
    }
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::spectral_decompose;

    fn feature(vals: &[f64]) -> FeatureVector {
        FeatureVector::new(vals.to_vec()).unwrap()
    }

    fn label(i: usize, v: usize) -> OneHotLabel {
        OneHotLabel::new(i, v).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(UpdateConfig::gd(0.1).is_ok());
        assert!(UpdateConfig::gd(-1.0).is_ok());
        assert!(UpdateConfig::gd(0.0).is_ok());
        assert!(UpdateConfig::gd(1.5).is_err());
        assert!(UpdateConfig::gd(f64::NAN).is_err());
        // A declared coupling must actually hold.
        assert!(UpdateConfig::new(
            1e-4,
            0.1 * 1e-2,
            0.1,
            Optimizer::SamFull,
            SignConvention::Theory
        )
        .is_ok());
        assert!(UpdateConfig::new(
            1e-4,
            0.5e-3,
            0.1,
            Optimizer::SamFull,
            SignConvention::Theory
        )
        .is_err());
        let scaled = UpdateConfig::sam_scaled(-2e-5, 0.1, true).unwrap();
        assert!(scaled.rho < 0.0);
        assert!((scaled.rho.abs() - 0.1 * (2e-5f64).sqrt()).abs() < 1e-18);
    }

    #[test]
    fn practice_mapping_round_trips() {
        let cfg = UpdateConfig::sam_full(-1e-3, -0.5e-2).unwrap();
        let prac = cfg.to_practice();
        assert_eq!(prac.eta, 1e-3);
        assert_eq!(prac.rho, 0.5e-2);
        assert_eq!(prac.sign_convention, SignConvention::Practice);
        assert_eq!(prac.to_theory(), cfg);
        assert_eq!(prac.theory_rates(), (-1e-3, -0.5e-2));
    }

    #[test]
    fn gd_step_hand_case() {
        // Symmetric binary start: residual is (-1/2, 1/2), so a 0.1 step
        // moves the logits to (0.05, -0.05).
        let w = ParameterMatrix::zeros(2, 1);
        let phi = feature(&[1.0]);
        let cfg = UpdateConfig::gd(0.1).unwrap();
        let w2 = gd_step(&w, &phi, &label(0, 2), &cfg).unwrap();
        assert_eq!(w2.get(0, 0), 0.05);
        assert_eq!(w2.get(1, 0), -0.05);
    }

    #[test]
    fn gd_step_negation_flips_the_move_exactly() {
        let w = ParameterMatrix::from_vec(vec![0.3, -0.1, 0.2, 0.4], 2, 2).unwrap();
        let phi = feature(&[0.6, -0.8]);
        let y = label(1, 2);
        let fwd = gd_step(&w, &phi, &y, &UpdateConfig::gd(0.05).unwrap()).unwrap();
        let bwd = gd_step(&w, &phi, &y, &UpdateConfig::gd(-0.05).unwrap()).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let df = fwd.get(i, j) - w.get(i, j);
                let db = bwd.get(i, j) - w.get(i, j);
                assert_eq!(df.to_bits(), (-db).to_bits());
            }
        }
    }

    #[test]
    fn practice_gd_retraces_theory_bit_for_bit() {
        let w = ParameterMatrix::from_vec(vec![0.3, -0.1, 0.2, 0.4, -0.7, 0.05], 3, 2).unwrap();
        let phi = feature(&[0.6, -0.8]);
        let y = label(1, 3);
        let theory = UpdateConfig::gd(-0.07).unwrap();
        let wt = gd_step(&w, &phi, &y, &theory).unwrap();
        let wp = gd_step(&w, &phi, &y, &theory.to_practice()).unwrap();
        for (a, b) in wt.as_slice().iter().zip(wp.as_slice()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn sam_step_with_zero_radius_is_gd_bit_for_bit() {
        let w = ParameterMatrix::from_vec(vec![0.4, -0.3, 0.1, 0.2, -0.5, 0.6], 3, 2).unwrap();
        let phi = feature(&[0.8, -0.6]);
        let y = label(1, 3);
        let sam = sam_full_step(&w, &phi, &y, &UpdateConfig::sam_full(0.05, 0.0).unwrap()).unwrap();
        let gd = gd_step(&w, &phi, &y, &UpdateConfig::gd(0.05).unwrap()).unwrap();
        for (a, b) in sam.as_slice().iter().zip(gd.as_slice()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn sam_step_with_zero_feature_is_a_no_op() {
        // A zero feature kills the gradient, so both passes see nothing.
        let w = ParameterMatrix::from_vec(vec![0.4, -0.3], 2, 1).unwrap();
        let phi = feature(&[0.0]);
        let y = label(0, 2);
        let out = sam_full_step(&w, &phi, &y, &UpdateConfig::sam_full(0.1, 0.05).unwrap()).unwrap();
        assert_eq!(out, w);
    }

    #[test]
    fn sam_step_matches_two_pass_reference() {
        let w = ParameterMatrix::from_vec(vec![0.4, -0.3, 0.1, 0.2, -0.5, 0.6], 3, 2).unwrap();
        let phi = feature(&[0.8, -0.6]);
        let y = label(1, 3);
        let cfg = UpdateConfig::sam_full(0.05, 0.01).unwrap();
        let main = sam_full_step(&w, &phi, &y, &cfg).unwrap();
        let oracle = crate::oracle::sam_two_pass_reference(&w, &phi, &y, 0.05, 0.01).unwrap();
        assert!(main.max_abs_diff(&oracle).unwrap() < 1e-14);
    }

    #[test]
    fn practice_sam_retraces_theory_bit_for_bit() {
        let w = ParameterMatrix::from_vec(vec![0.4, -0.3, 0.1, 0.2, -0.5, 0.6], 3, 2).unwrap();
        let phi = feature(&[0.8, -0.6]);
        let y = label(1, 3);
        let theory = UpdateConfig::sam_full(-0.02, -0.01).unwrap();
        let wt = sam_full_step(&w, &phi, &y, &theory).unwrap();
        let wp = sam_full_step(&w, &phi, &y, &theory.to_practice()).unwrap();
        for (a, b) in wt.as_slice().iter().zip(wp.as_slice()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn output_layer_step_agrees_with_full_step_on_cross_entropy() {
        let w = ParameterMatrix::from_vec(vec![0.4, -0.3, 0.1, 0.2, -0.5, 0.6], 3, 2).unwrap();
        let phi = feature(&[0.8, -0.6]);
        let y = label(2, 3);
        let full =
            sam_full_step(&w, &phi, &y, &UpdateConfig::sam_full(0.05, 0.02).unwrap()).unwrap();
        let outp = logits_sam_step(
            &w,
            &phi,
            &LossTarget::CrossEntropy(&y),
            &UpdateConfig::logits_sam(0.05, 0.02).unwrap(),
        )
        .unwrap();
        assert!(full.max_abs_diff(&outp).unwrap() <= 1e-15);
    }

    #[test]
    fn output_layer_step_with_zero_radius_is_gd() {
        let w = ParameterMatrix::from_vec(vec![0.4, -0.3, 0.1, 0.2], 2, 2).unwrap();
        let phi = feature(&[0.8, -0.6]);
        let y = label(0, 2);
        let outp = logits_sam_step(
            &w,
            &phi,
            &LossTarget::CrossEntropy(&y),
            &UpdateConfig::logits_sam(0.05, 0.0).unwrap(),
        )
        .unwrap();
        let gd = gd_step(&w, &phi, &y, &UpdateConfig::gd(0.05).unwrap()).unwrap();
        for (a, b) in outp.as_slice().iter().zip(gd.as_slice()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn output_layer_step_on_preference_matches_reference() {
        let phi = feature(&[0.8, -0.6]);
        let pair = PreferencePair::new(
            phi.clone(),
            label(0, 3),
            label(2, 3),
            LogitVector::new(vec![0.1, 0.4, -0.3]).unwrap(),
        )
        .unwrap();
        let w = ParameterMatrix::from_vec(vec![0.4, -0.3, 0.1, 0.2, -0.5, 0.6], 3, 2).unwrap();
        let cfg = UpdateConfig::logits_sam(0.05, 0.01).unwrap();
        let main = logits_sam_step(
            &w,
            &phi,
            &LossTarget::Preference {
                pair: &pair,
                beta: 0.7,
            },
            &cfg,
        )
        .unwrap();
        let oracle = crate::oracle::dpo_sam_two_pass_reference(&w, &pair, 0.7, 0.05, 0.01).unwrap();
        assert!(main.max_abs_diff(&oracle).unwrap() < 1e-8);
    }

    #[test]
    fn logit_space_step_reproduces_parameter_step_logits() {
        let w = ParameterMatrix::from_vec(vec![0.4, -0.3, 0.1, 0.2, -0.5, 0.6], 3, 2).unwrap();
        let phi = feature(&[0.8, -0.6]);
        let y = label(1, 3);
        for cfg in [
            UpdateConfig::gd(-0.04).unwrap(),
            UpdateConfig::sam_full(-0.04, -0.02).unwrap(),
        ] {
            let w2 = match cfg.optimizer {
                Optimizer::Gd => gd_step(&w, &phi, &y, &cfg).unwrap(),
                _ => sam_full_step(&w, &phi, &y, &cfg).unwrap(),
            };
            let z_direct = w2.logits(&phi).unwrap();
            let z_short = logit_space_step(&w.logits(&phi).unwrap(), &y, phi.mu(), &cfg).unwrap();
            for (a, b) in z_direct.as_slice().iter().zip(z_short.as_slice()) {
                assert!((a - b).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn prediction_at_zero_rate_is_the_current_state() {
        let w = ParameterMatrix::from_vec(vec![0.4, -0.3, 0.1, 0.2], 2, 2).unwrap();
        let phi = feature(&[0.8, -0.6]);
        let y = label(0, 2);
        let cfg = UpdateConfig::gd(0.0).unwrap();
        let pred = predict_step(&w, &phi, &y, &cfg).unwrap();
        assert_eq!(pred.w_pred, w);
        let z = w.logits(&phi).unwrap();
        assert_eq!(pred.z_pred.as_slice(), z.as_slice());
        let g = residual_at(&w, &phi, &y).unwrap();
        assert_eq!(pred.g_pred.as_slice(), g.as_slice());
        assert_eq!(pred.remainder_budget, 0.0);
    }

    #[test]
    fn prediction_without_radius_is_the_bare_linearization() {
        let w = ParameterMatrix::from_vec(vec![0.4, -0.3, 0.1, 0.2, -0.5, 0.6], 3, 2).unwrap();
        let phi = feature(&[0.8, -0.6]);
        let y = label(1, 3);
        let cfg = UpdateConfig::gd(0.03).unwrap();
        let pred = predict_step(&w, &phi, &y, &cfg).unwrap();
        assert_eq!(pred.rho_tilde, 0.0);
        let gd_lin = gd_step(&w, &phi, &y, &cfg).unwrap();
        assert!(pred.w_pred.max_abs_diff(&gd_lin).unwrap() < 1e-16);
    }

    #[test]
    fn reported_radius_follows_the_config_framing() {
        let w = ParameterMatrix::from_vec(vec![0.4, -0.3, 0.1, 0.2], 2, 2).unwrap();
        let phi = feature(&[0.8, -0.6]);
        let y = label(0, 2);
        let theory = UpdateConfig::sam_full(-0.01, -0.004).unwrap();
        let pt = predict_step(&w, &phi, &y, &theory).unwrap();
        let pp = predict_step(&w, &phi, &y, &theory.to_practice()).unwrap();
        assert!(pt.rho_tilde < 0.0);
        assert_eq!(pp.rho_tilde, -pt.rho_tilde);
        // The forecast itself is framing-independent.
        assert!(pt.w_pred.max_abs_diff(&pp.w_pred).unwrap() == 0.0);
    }

    #[test]
    fn modal_recursion_no_op_and_annihilation() {
        let p = ProbVector::new(vec![0.5, 0.5]).unwrap();
        let basis = spectral_decompose(&crate::geometry::logit_hessian(&p)).unwrap();
        let e = ModalCoefficients::new(vec![0.3]).unwrap();

        let frozen = modal_step_predict(&basis, &e, &UpdateConfig::gd(0.0).unwrap(), 2.0).unwrap();
        assert_eq!(frozen.as_slice(), e.as_slice());

        // lambda = 1/2 exactly at the symmetric point, so eta * mu * lambda
        // reaches 1 at eta = 1, mu = 2 and the mode dies in one step.
        assert_eq!(basis.eigenvalues()[0], 0.5);
        let dead = modal_step_predict(&basis, &e, &UpdateConfig::gd(1.0).unwrap(), 2.0).unwrap();
        assert_eq!(dead.as_slice(), &[0.0]);
    }

    #[test]
    fn modal_coefficients_capture_the_residual() {
        let z = LogitVector::new(vec![0.5, -0.5, 1.5]).unwrap();
        let p = softmax(&z).unwrap();
        let y = label(2, 3);
        let g = logit_gradient(&p, &y).unwrap();
        let basis = spectral_decompose(&crate::geometry::logit_hessian(&p)).unwrap();
        let e = ModalCoefficients::from_residual(&basis, &g).unwrap();
        assert!((e.norm() - g.norm()).abs() < 1e-9);
    }

    #[test]
    fn ratios_identity_and_flooring() {
        let p = ProbVector::new(vec![0.6, 0.3, 0.1]).unwrap();
        let y = label(0, 3);
        let same = confidence_ratios(&p, &p, &y).unwrap();
        assert!(same.ratios_valid);
        assert_eq!(same.y_star, 1);
        for &a in &same.alpha {
            assert_eq!(a, 1.0);
        }

        let dead = ProbVector::new(vec![1.0 - 1e-301, 1e-301, 0.0]).unwrap();
        let after = ProbVector::new(vec![0.9, 0.05, 0.05]).unwrap();
        let flagged = confidence_ratios(&dead, &after, &y).unwrap();
        assert!(!flagged.ratios_valid);
        assert_eq!(flagged.alpha[2], 0.0);
    }

    #[test]
    fn y_star_ties_resolve_to_the_lowest_index() {
        let p = ProbVector::new(vec![0.2, 0.4, 0.4]).unwrap();
        let r = confidence_ratios(&p, &p, &label(0, 3)).unwrap();
        assert_eq!(r.y_star, 1);
        // The label itself is never chosen even when it leads.
        let q = ProbVector::new(vec![0.5, 0.25, 0.25]).unwrap();
        let r2 = confidence_ratios(&q, &q, &label(0, 3)).unwrap();
        assert_eq!(r2.y_star, 1);
    }

    #[test]
    fn descent_toward_label_raises_label_ratio() {
        // Ordinary positive-rate descent: the label's probability rises,
        // everything else falls.
        let z = LogitVector::new(vec![0.2, -0.3, 0.5]).unwrap();
        let y = label(0, 3);
        let cfg = UpdateConfig::gd(0.1).unwrap();
        let p0 = softmax(&z).unwrap();
        let z1 = logit_space_step(&z, &y, 1.0, &cfg).unwrap();
        let p1 = softmax(&z1).unwrap();
        let r = confidence_ratios(&p0, &p1, &y).unwrap();
        assert!(r.alpha[y.index()] > 1.0);
        for j in 1..3 {
            assert!(r.alpha[j] < 1.0);
        }
    }

    #[test]
    fn negative_rate_descent_raises_the_strongest_rival() {
        let z = LogitVector::new(vec![0.2, -0.3, 0.5]).unwrap();
        let y = label(0, 3);
        let cfg = UpdateConfig::gd(-0.1).unwrap();
        let p0 = softmax(&z).unwrap();
        let z1 = logit_space_step(&z, &y, 1.0, &cfg).unwrap();
        let p1 = softmax(&z1).unwrap();
        let r = confidence_ratios(&p0, &p1, &y).unwrap();
        assert_eq!(r.y_star, 2);
        assert!(r.alpha[2] > 1.0);
        assert!(r.alpha[0] < 1.0);
    }

    #[test]
    fn top2_zero_tail_window() {
        let p = ProbVector::new(vec![0.5, 0.5, 0.0]).unwrap();
        let d = top2_diagnostics(&p, &label(0, 3)).unwrap();
        assert_eq!(d.tau, 0.0);
        assert_eq!(d.gamma0_window[0], 0.0);
        assert!((d.gamma0_window[1] - 0.5).abs() < 1e-15);
        assert!(d.feasible);
    }

    #[test]
    fn top2_binary_gap_formula() {
        // p_y / S = 1/3 gives the gap 4 * (1/3) * (2/3)^2 = 16/27.
        let p = ProbVector::new(vec![0.3, 0.6, 0.1]).unwrap();
        let d = top2_diagnostics(&p, &label(0, 3)).unwrap();
        assert!((d.p_bar_y - 1.0 / 3.0).abs() < 1e-15);
        assert!((d.delta_bin - 16.0 / 27.0).abs() < 1e-15);
    }

    #[test]
    fn remainder_constant_fit_recovers_a_pure_quadratic() {
        let etas = [4e-3, 2e-3, 1e-3, 5e-4];
        let errors: Vec<f64> = etas.iter().map(|e| 7.5 * e * e).collect();
        let c = fit_remainder_constant(&etas, &errors).unwrap();
        assert!((c - 7.5).abs() < 1e-12);
    }
}
