//! Trajectory runner: draws the fixed feature vector, executes the warm-up
//! and post-switch phases for every optimizer arm, and assembles per-step
//! diagnostic records.
//!
//! Determinism contract: the seed feeds exactly `d` standard-normal draws,
//! consumed in index order, and nothing else. Adding or reordering arms
//! therefore never changes the features, and two runs of the same config
//! produce identical records.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::dynamics::{
    confidence_ratios, gd_step, logit_space_step, logits_sam_step, predict_step, sam_full_step,
    top2_diagnostics, ConfidenceRatios, LossTarget, ModalCoefficients, Optimizer, Top2Diagnostics,
    UpdateConfig,
};
use crate::error::{Error, Result};
use crate::geometry::{
    logit_gradient, logit_hessian, softmax, spectral_decompose, FeatureVector, LogitVector,
    ModalBasis, OneHotLabel, ParameterMatrix, ProbVector, Residual,
};
use crate::harness::config::ScenarioConfig;

/// Which training phase a record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Sft,
    Post,
}

impl Phase {
    /// The tag used in emitted files.
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Sft => "SFT",
            Phase::Post => "POST",
        }
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Everything logged about one optimizer arm at one step.
///
/// Per-step quantities (frozen-basis coefficients, confidence ratios,
/// prediction errors) always compare against the state one step earlier,
/// even when `log_every` skips the record for that state.
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    /// Step index; 0 is the initial state, warm-up steps follow, then
    /// post-switch steps.
    pub step: usize,
    pub phase: Phase,
    /// Arm tag; warm-up records are duplicated across arms since the arms
    /// share the warm-up trajectory.
    pub optimizer: String,
    pub probs: ProbVector,
    /// Residual for the phase's own label.
    pub residual: Residual,
    /// The residual projected on the spectral basis of the previous state.
    pub e_frozen: ModalCoefficients,
    /// The residual projected on the current state's own spectral basis.
    pub e_refreshed: ModalCoefficients,
    /// Eigenvalues of the current state's logit Hessian, descending.
    pub eigenvalues: Vec<f64>,
    /// Per-class probability ratios against the previous state.
    pub alphas: ConfidenceRatios,
    pub top2: Top2Diagnostics,
    /// Frobenius distance between the actual matrix and the first-order
    /// forecast made from the previous state; zero at step 0.
    pub err_w: f64,
    /// Euclidean distance between actual and forecast logits.
    pub err_z: f64,
    /// Euclidean distance between actual and forecast residual.
    pub err_g: f64,
}

/// Draws the shared feature vector for a config.
pub fn draw_features(cfg: &ScenarioConfig) -> Result<FeatureVector> {
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let phi: Vec<f64> = (0..cfg.d)
        .map(|_| {
            let x: f64 = rng.sample(StandardNormal);
            cfg.feature_scale * x
        })
        .collect();
    let feature = FeatureVector::new(phi)?;
    if feature.mu() == 0.0 {
        return Err(Error::DegenerateFeature);
    }
    Ok(feature)
}

/// Deterministic arm tags: the optimizer kind, a `_neg`/`_pos` suffix for
/// perturbed arms keyed on the theory-framed radius sign, and a numeric
/// suffix when two arms would otherwise collide.
pub fn arm_tags(arms: &[UpdateConfig]) -> Vec<String> {
    let mut tags: Vec<String> = arms
        .iter()
        .map(|arm| {
            let base = match arm.optimizer {
                Optimizer::Gd => "gd",
                Optimizer::SamFull => "sam_full",
                Optimizer::LogitsSam => "logits_sam",
            };
            let (_, rho_t) = arm.theory_rates();
            if arm.is_perturbed() && rho_t != 0.0 {
                if rho_t < 0.0 {
                    format!("{base}_neg")
                } else {
                    format!("{base}_pos")
                }
            } else {
                base.to_string()
            }
        })
        .collect();
    for i in 0..tags.len() {
        let mut count = 1;
        for j in (i + 1)..tags.len() {
            if tags[j] == tags[i] {
                count += 1;
                tags[j] = format!("{}_{}", tags[j], count);
            }
        }
    }
    tags
}

/// One state's derived quantities, cached so consecutive records can share
/// them.
struct StateSnapshot {
    p: ProbVector,
    basis: ModalBasis,
}

impl StateSnapshot {
    fn from_logits(z: &LogitVector) -> Result<Self> {
        let p = softmax(z)?;
        let basis = spectral_decompose(&logit_hessian(&p))?;
        Ok(Self { p, basis })
    }
}

fn l2_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Assembles the record for a state; `prev` is `None` only at step 0, where
/// frozen and refreshed projections coincide and all ratios are one.
fn build_record(
    step: usize,
    phase: Phase,
    label: &OneHotLabel,
    prev: Option<&StateSnapshot>,
    cur: &StateSnapshot,
    errs: [f64; 3],
) -> Result<TrajectoryRecord> {
    let residual = logit_gradient(&cur.p, label)?;
    let e_refreshed = ModalCoefficients::from_residual(&cur.basis, &residual)?;
    let e_frozen = match prev {
        Some(pv) => ModalCoefficients::new(pv.basis.project(residual.as_slice())?)?,
        None => e_refreshed.clone(),
    };
    let p_before = prev.map(|pv| &pv.p).unwrap_or(&cur.p);
    let alphas = confidence_ratios(p_before, &cur.p, label)?;
    let top2 = top2_diagnostics(&cur.p, label)?;
    Ok(TrajectoryRecord {
        step,
        phase,
        optimizer: String::new(),
        probs: cur.p.clone(),
        residual,
        e_frozen,
        e_refreshed,
        eigenvalues: cur.basis.eigenvalues().to_vec(),
        alphas,
        top2,
        err_w: errs[0],
        err_z: errs[1],
        err_g: errs[2],
    })
}

fn with_step_context(e: Error, step: usize, tag: &str) -> Error {
    match e {
        Error::NonFinite(m) => Error::NonFinite(format!("step {step}, arm {tag}: {m}")),
        Error::InvalidInput(m) => Error::InvalidInput(format!("step {step}, arm {tag}: {m}")),
        other => other,
    }
}

fn step_arm(
    w: &ParameterMatrix,
    phi: &FeatureVector,
    y: &OneHotLabel,
    cfg: &UpdateConfig,
) -> Result<ParameterMatrix> {
    match cfg.optimizer {
        Optimizer::Gd => gd_step(w, phi, y, cfg),
        Optimizer::SamFull => sam_full_step(w, phi, y, cfg),
        Optimizer::LogitsSam => logits_sam_step(w, phi, &LossTarget::CrossEntropy(y), cfg),
    }
}

/// Runs the full scenario and returns every logged record, grouped by arm
/// in config order with steps ascending inside each group.
///
/// The warm-up phase is computed once and its records are duplicated per
/// arm; the arms then branch from the shared post-warm-up matrix. Forecast
/// errors compare each arrived-at state with the first-order prediction
/// made one step earlier under that step's own config.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<Vec<TrajectoryRecord>> {
    cfg.validate()?;
    let phi = draw_features(cfg)?;
    let sft_label = OneHotLabel::new(cfg.sft_label, cfg.v)?;
    let post_label = OneHotLabel::new(cfg.post_label, cfg.v)?;
    let sft_cfg = UpdateConfig::gd(cfg.eta_sft)?;
    let tags = arm_tags(&cfg.optimizers);

    let mut w = ParameterMatrix::zeros(cfg.v, cfg.d);
    let mut snap = StateSnapshot::from_logits(&w.logits(&phi)?)?;
    let mut shared: Vec<TrajectoryRecord> = Vec::new();
    if 0 % cfg.log_every == 0 {
        shared.push(build_record(
            0,
            Phase::Sft,
            &sft_label,
            None,
            &snap,
            [0.0; 3],
        )?);
    }

    for step in 1..=cfg.sft_epochs {
        let pred = predict_step(&w, &phi, &sft_label, &sft_cfg)?;
        let w_next = gd_step(&w, &phi, &sft_label, &sft_cfg)
            .map_err(|e| with_step_context(e, step, "sft"))?;
        let z_next = w_next
            .logits(&phi)
            .map_err(|e| with_step_context(e, step, "sft"))?;
        let snap_next =
            StateSnapshot::from_logits(&z_next).map_err(|e| with_step_context(e, step, "sft"))?;
        if step % cfg.log_every == 0 {
            let g_next = logit_gradient(&snap_next.p, &sft_label)?;
            let errs = [
                w_next.frobenius_diff(&pred.w_pred)?,
                l2_diff(z_next.as_slice(), pred.z_pred.as_slice()),
                l2_diff(g_next.as_slice(), pred.g_pred.as_slice()),
            ];
            shared.push(build_record(
                step,
                Phase::Sft,
                &sft_label,
                Some(&snap),
                &snap_next,
                errs,
            )?);
        }
        w = w_next;
        snap = snap_next;
    }

    let mut records: Vec<TrajectoryRecord> = Vec::new();
    for (arm, tag) in cfg.optimizers.iter().zip(&tags) {
        for rec in &shared {
            let mut r = rec.clone();
            r.optimizer = tag.clone();
            records.push(r);
        }

        let mut w_arm = w.clone();
        let mut snap_prev = StateSnapshot::from_logits(&w_arm.logits(&phi)?)?;
        for post in 1..=cfg.post_steps {
            let step = cfg.sft_epochs + post;
            let pred = predict_step(&w_arm, &phi, &post_label, arm)?;
            let w_next = step_arm(&w_arm, &phi, &post_label, arm)
                .map_err(|e| with_step_context(e, step, tag))?;
            let z_next = w_next
                .logits(&phi)
                .map_err(|e| with_step_context(e, step, tag))?;
            let snap_next =
                StateSnapshot::from_logits(&z_next).map_err(|e| with_step_context(e, step, tag))?;
            if step % cfg.log_every == 0 {
                let g_next = logit_gradient(&snap_next.p, &post_label)?;
                let errs = [
                    w_next.frobenius_diff(&pred.w_pred)?,
                    l2_diff(z_next.as_slice(), pred.z_pred.as_slice()),
                    l2_diff(g_next.as_slice(), pred.g_pred.as_slice()),
                ];
                let mut rec = build_record(
                    step,
                    Phase::Post,
                    &post_label,
                    Some(&snap_prev),
                    &snap_next,
                    errs,
                )?;
                rec.optimizer = tag.clone();
                records.push(rec);
            }
            w_arm = w_next;
            snap_prev = snap_next;
        }
    }
    Ok(records)
}

/// One arm's single-step outcome from a shared state.
#[derive(Debug, Clone)]
pub struct MatchedArm {
    pub tag: String,
    /// Theory-framed radius, the key the ordering claims sort on.
    pub rho_theory: f64,
    /// Coefficients of the post-step residual on the shared pre-step basis.
    pub e_after: Vec<f64>,
}

/// All arms stepped once from the same state along a plain-descent carrier
/// trajectory.
#[derive(Debug, Clone)]
pub struct MatchedStepRecord {
    /// Post-phase step number, starting at 1.
    pub post_step: usize,
    /// Eigenvalues of the shared pre-step Hessian, descending.
    pub eigenvalues: Vec<f64>,
    /// Coefficients of the pre-step residual on its own basis.
    pub e_before: Vec<f64>,
    /// Whether every mode satisfies `1 - eta * mu * lambda_k > 0`, the
    /// regime in which per-mode magnitude comparisons across radii are
    /// meaningful.
    pub factors_positive: bool,
    pub arms: Vec<MatchedArm>,
}

/// Compares the arms step by step from matched states.
///
/// A plain-descent carrier advances the shared state through the post
/// phase in logit space; at each state every arm takes exactly one step
/// and the resulting residual is projected on the shared pre-step basis.
/// This isolates the one-step effect of the radius from trajectory
/// divergence. The warm-up phase is replayed in logit space, which is the
/// exact image of the matrix-space warm-up.
pub fn matched_state_comparison(cfg: &ScenarioConfig) -> Result<Vec<MatchedStepRecord>> {
    cfg.validate()?;
    let phi = draw_features(cfg)?;
    let mu = phi.mu();
    let sft_label = OneHotLabel::new(cfg.sft_label, cfg.v)?;
    let post_label = OneHotLabel::new(cfg.post_label, cfg.v)?;
    let sft_cfg = UpdateConfig::gd(cfg.eta_sft)?;
    let carrier_cfg = UpdateConfig::gd(cfg.eta_post)?;
    let tags = arm_tags(&cfg.optimizers);

    let mut z = LogitVector::new(vec![0.0; cfg.v])?;
    for _ in 0..cfg.sft_epochs {
        z = logit_space_step(&z, &sft_label, mu, &sft_cfg)?;
    }

    let mut out = Vec::with_capacity(cfg.post_steps);
    for post in 1..=cfg.post_steps {
        let p = softmax(&z)?;
        let basis = spectral_decompose(&logit_hessian(&p))?;
        let g = logit_gradient(&p, &post_label)?;
        let e_before = basis.project(g.as_slice())?;
        let factors_positive = basis
            .eigenvalues()
            .iter()
            .all(|&lam| 1.0 - cfg.eta_post * mu * lam > 0.0);

        let mut arms = Vec::with_capacity(cfg.optimizers.len());
        for (arm, tag) in cfg.optimizers.iter().zip(&tags) {
            let z_next = logit_space_step(&z, &post_label, mu, arm)?;
            let p_next = softmax(&z_next)?;
            let g_next = logit_gradient(&p_next, &post_label)?;
            arms.push(MatchedArm {
                tag: tag.clone(),
                rho_theory: arm.theory_rates().1,
                e_after: basis.project(g_next.as_slice())?,
            });
        }
        out.push(MatchedStepRecord {
            post_step: post,
            eigenvalues: basis.eigenvalues().to_vec(),
            e_before,
            factors_positive,
            arms,
        });
        z = logit_space_step(&z, &post_label, mu, &carrier_cfg)?;
    }
    Ok(out)
}
