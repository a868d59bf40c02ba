//! Property tests for the update rules and confidence-ratio machinery.

use logitdyn::{
    confidence_ratios, gd_step, logit_space_step, logits_sam_step, min_norm_preimage,
    ratio_factorization, sam_full_step, softmax, top2_diagnostics, FeatureVector, LogitVector,
    LossTarget, OneHotLabel, ProbVector, UpdateConfig,
};
use proptest::prelude::*;

fn sample_probs(v: usize, seed: u64) -> ProbVector {
    let raw: Vec<f64> = (0..v)
        .map(|i| {
            0.05 + ((seed.wrapping_mul(2654435761).wrapping_add(i as u64 * 97)) % 1000) as f64
                / 1000.0
        })
        .collect();
    let total: f64 = raw.iter().sum();
    ProbVector::new(raw.into_iter().map(|x| x / total).collect()).unwrap()
}

fn sample_features(d: usize, seed: u64) -> FeatureVector {
    FeatureVector::new(
        (0..d)
            .map(|a| {
                let m = 0.2 + ((seed.wrapping_add(a as u64 * 131)) % 150) as f64 / 100.0;
                if a % 3 == 1 {
                    -m
                } else {
                    m
                }
            })
            .collect(),
    )
    .unwrap()
}

fn state_matrix(p: &ProbVector, phi: &FeatureVector) -> logitdyn::ParameterMatrix {
    let z = LogitVector::new(p.as_slice().iter().map(|x| x.ln()).collect()).unwrap();
    min_norm_preimage(&z, phi).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn logit_step_is_the_matrix_step_image(
        (v, d) in (2usize..=5, 1usize..=4),
        seed in 0u64..1000,
        eta in -3e-3f64..3e-3,
        perturbed in proptest::bool::ANY,
    ) {
        prop_assume!(eta.abs() > 1e-6);
        let p = sample_probs(v, seed);
        let phi = sample_features(d, seed ^ 0x5bd1);
        let w = state_matrix(&p, &phi);
        let y = OneHotLabel::new(seed as usize % v, v).unwrap();
        let mu: f64 = phi.phi().iter().map(|x| x * x).sum();

        let cfg = if perturbed {
            UpdateConfig::sam_scaled(eta, 0.1, eta < 0.0).unwrap()
        } else {
            UpdateConfig::gd(eta).unwrap()
        };

        let w_next = if perturbed {
            sam_full_step(&w, &phi, &y, &cfg).unwrap()
        } else {
            gd_step(&w, &phi, &y, &cfg).unwrap()
        };
        let z_matrix = w_next.logits(&phi).unwrap();

        let z0 = w.logits(&phi).unwrap();
        let z_direct = logit_space_step(&z0, &y, mu, &cfg).unwrap();

        for i in 0..v {
            let diff = (z_matrix.as_slice()[i] - z_direct.as_slice()[i]).abs();
            prop_assert!(diff <= 1e-10, "logit {i} differs by {diff}");
        }
    }

    #[test]
    fn practice_framing_retraces_theory_bitwise(
        (v, d) in (2usize..=4, 1usize..=4),
        seed in 0u64..1000,
        eta in -3e-3f64..3e-3,
        perturbed in proptest::bool::ANY,
    ) {
        prop_assume!(eta.abs() > 1e-6);
        let p = sample_probs(v, seed);
        let phi = sample_features(d, seed ^ 0x1234);
        let w = state_matrix(&p, &phi);
        let y = OneHotLabel::new(seed as usize % v, v).unwrap();

        let theory = if perturbed {
            UpdateConfig::sam_scaled(eta, 0.1, eta < 0.0).unwrap()
        } else {
            UpdateConfig::gd(eta).unwrap()
        };
        let practice = theory.to_practice();

        let step = |cfg: &UpdateConfig| {
            if perturbed {
                sam_full_step(&w, &phi, &y, cfg).unwrap()
            } else {
                gd_step(&w, &phi, &y, cfg).unwrap()
            }
        };

        let a = step(&theory);
        let b = step(&practice);
        for (x, z) in a.as_slice().iter().zip(b.as_slice()) {
            prop_assert!(x.to_bits() == z.to_bits());
        }
    }

    #[test]
    fn activation_form_matches_full_matrix_form(
        (v, d) in (2usize..=4, 1usize..=4),
        seed in 0u64..1000,
        eta in -2e-3f64..2e-3,
    ) {
        prop_assume!(eta.abs() > 1e-6);
        let p = sample_probs(v, seed);
        let phi = sample_features(d, seed ^ 0x4321);
        let w = state_matrix(&p, &phi);
        let y = OneHotLabel::new((seed as usize + 1) % v, v).unwrap();
        let cfg = UpdateConfig::sam_scaled(eta, 0.1, false).unwrap();

        let full = sam_full_step(&w, &phi, &y, &cfg).unwrap();
        let cfg_act = UpdateConfig {
            optimizer: logitdyn::Optimizer::LogitsSam,
            ..cfg
        };
        let act = logits_sam_step(&w, &phi, &LossTarget::CrossEntropy(&y), &cfg_act).unwrap();

        let scale = full
            .as_slice()
            .iter()
            .fold(0.0f64, |m, x| m.max(x.abs()))
            .max(1.0);
        for (a, b) in full.as_slice().iter().zip(act.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-15 * scale);
        }
    }

    #[test]
    fn ratio_factorization_reconstructs_the_step(
        v in 3usize..=5,
        seed in 0u64..1000,
        eta in -2e-3f64..-1e-5,
        perturbed in proptest::bool::ANY,
    ) {
        let p = sample_probs(v, seed);
        let y = OneHotLabel::new(seed as usize % v, v).unwrap();
        let mu = 1.0 + (seed % 50) as f64 / 10.0;
        let cfg = if perturbed {
            UpdateConfig::sam_scaled(eta, 0.1, true).unwrap()
        } else {
            UpdateConfig::gd(eta).unwrap()
        };

        let z0 = LogitVector::new(p.as_slice().iter().map(|x| x.ln()).collect()).unwrap();
        let z1 = logit_space_step(&z0, &y, mu, &cfg).unwrap();
        let p1 = softmax(&z1).unwrap();
        let ratios = confidence_ratios(&p, &p1, &y).unwrap();

        for target in 0..v {
            let report = ratio_factorization(&p, &y, mu, &cfg, target).unwrap();
            let direct = ratios.alpha[target];
            let rel = (report.alpha_reconstructed - direct).abs() / direct.abs().max(1e-300);
            prop_assert!(rel <= 1e-9, "class {target}: {0} vs {direct}", report.alpha_reconstructed);
            if !perturbed {
                for (&c, &r) in report.curvature.iter().zip(&report.remainder) {
                    prop_assert!(c == 1.0);
                    prop_assert!(r == 1.0);
                }
            }
        }
    }

    #[test]
    fn negative_rate_descent_moves_confidences_as_predicted(
        v in 3usize..=5,
        seed in 0u64..1000,
        eta in -1e-3f64..-1e-6,
    ) {
        let p = sample_probs(v, seed);
        let y = OneHotLabel::new(seed as usize % v, v).unwrap();
        let cfg = UpdateConfig::gd(eta).unwrap();

        let z0 = LogitVector::new(p.as_slice().iter().map(|x| x.ln()).collect()).unwrap();
        let z1 = logit_space_step(&z0, &y, 1.0, &cfg).unwrap();
        let p1 = softmax(&z1).unwrap();
        let ratios = confidence_ratios(&p, &p1, &y).unwrap();

        prop_assert!(ratios.alpha[ratios.y_star] > 1.0);
        prop_assert!(ratios.alpha[y.index()] < 1.0);

        let top2 = top2_diagnostics(&p, &y).unwrap();
        prop_assert!(top2.tau >= 0.0);
        prop_assert!(top2.delta_bin >= 0.0);
    }
}
