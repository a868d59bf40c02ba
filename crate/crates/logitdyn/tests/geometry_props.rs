//! Property tests for the logit-space geometry against dense oracles.

use logitdyn::{
    apply_parameter_hessian, cross_entropy, dense_kronecker_hessian, hessian_gradient_product,
    logit_gradient, logit_hessian, min_norm_preimage, softmax, spectral_decompose, FeatureVector,
    LogitVector, OneHotLabel, ParameterMatrix, ProbVector,
};
use proptest::prelude::*;

fn interior_probs(v: usize) -> impl Strategy<Value = ProbVector> {
    prop::collection::vec(0.05f64..1.0, v).prop_map(|raw| {
        let total: f64 = raw.iter().sum();
        ProbVector::new(raw.into_iter().map(|x| x / total).collect()).unwrap()
    })
}

fn column_stack(m: &ParameterMatrix) -> Vec<f64> {
    let (rows, cols) = (m.rows(), m.cols());
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for a in 0..cols {
            out[a * rows + i] = m.as_slice()[i * cols + a];
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pullback_matches_dense_kronecker(
        (v, d) in (2usize..=5, 1usize..=5),
        seed in 0u64..1000,
    ) {
        let p = sample_probs(v, seed);
        let phi = sample_features(d, seed ^ 0x9e37);
        let dw = sample_matrix(v, d, seed ^ 0x79b9);

        let h = logit_hessian(&p);
        let main = apply_parameter_hessian(&h, &dw, &phi).unwrap();
        let dense = dense_kronecker_hessian(&p, &phi).unwrap();
        let image = dense.apply(&column_stack(&dw)).unwrap();

        for i in 0..v {
            for a in 0..d {
                let got = main.as_slice()[i * d + a];
                let want = image[a * v + i];
                prop_assert!((got - want).abs() <= 1e-10,
                    "entry ({i},{a}): {got} vs {want}");
            }
        }
    }

    #[test]
    fn hessian_kernel_and_bounds(p in (2usize..=5).prop_flat_map(interior_probs)) {
        let v = p.len();
        let h = logit_hessian(&p);

        for i in 0..v {
            let row_sum: f64 = (0..v).map(|j| h.get(i, j)).sum();
            prop_assert!(row_sum.abs() <= 1e-12, "row {i} sums to {row_sum}");
        }

        let basis = spectral_decompose(&h).unwrap();
        for &lambda in basis.eigenvalues() {
            prop_assert!(lambda <= 0.5 + 1e-12, "eigenvalue {lambda} above the operator bound");
            prop_assert!(lambda > 0.0);
        }
    }

    #[test]
    fn residual_norm_and_closed_form(
        p in (2usize..=5).prop_flat_map(interior_probs),
        label_pick in 0usize..5,
    ) {
        let v = p.len();
        let y = OneHotLabel::new(label_pick % v, v).unwrap();
        let g = logit_gradient(&p, &y).unwrap();

        let norm = g.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!(norm <= std::f64::consts::SQRT_2 + 1e-12);
        let g_sum: f64 = g.as_slice().iter().sum();
        prop_assert!(g_sum.abs() <= 1e-12);

        let h = logit_hessian(&p);
        let hg = hessian_gradient_product(&p, &y).unwrap();
        let c: f64 = p.as_slice().iter().map(|x| x * x).sum::<f64>() - p.as_slice()[y.index()];
        for i in 0..v {
            let direct: f64 = (0..v).map(|j| h.get(i, j) * g.as_slice()[j]).sum();
            prop_assert!((hg[i] - direct).abs() <= 1e-14);
            let closed = p.as_slice()[i] * (p.as_slice()[i] - y.indicator(i) - c);
            prop_assert!((hg[i] - closed).abs() <= 1e-14);
        }
    }

    #[test]
    fn preimage_reaches_image_with_least_norm(
        (v, d) in (2usize..=5, 1usize..=5),
        seed in 0u64..1000,
        shift in -2.0f64..2.0,
    ) {
        let phi = sample_features(d, seed);
        let dz: Vec<f64> = (0..v).map(|i| ((seed + i as u64) % 7) as f64 / 3.5 - 1.0).collect();
        let dz = LogitVector::new(dz).unwrap();

        let dw = min_norm_preimage(&dz, &phi).unwrap();
        let image = dw.logits(&phi).unwrap();
        for i in 0..v {
            prop_assert!((image.as_slice()[i] - dz.as_slice()[i]).abs() <= 1e-10);
        }

        if d > 1 && shift.abs() > 1e-3 {
            // Add a kernel direction: a rank-one term against a vector
            // orthogonal to phi leaves the image unchanged.
            let f = phi.phi();
            let mut ortho = vec![0.0; d];
            ortho[0] = -f[1];
            ortho[1] = f[0];
            let mut shifted = dw.as_slice().to_vec();
            for i in 0..v {
                for a in 0..d {
                    shifted[i * d + a] += shift * ortho[a];
                }
            }
            let shifted = ParameterMatrix::from_vec(shifted, v, d).unwrap();
            let shifted_image = shifted.logits(&phi).unwrap();
            for i in 0..v {
                prop_assert!(
                    (shifted_image.as_slice()[i] - dz.as_slice()[i]).abs() <= 1e-9
                );
            }
            prop_assert!(shifted.frobenius_norm() > dw.frobenius_norm());
        }
    }

    #[test]
    fn wrong_class_curvature_dominates(
        p in (3usize..=5).prop_flat_map(interior_probs),
        label_pick in 0usize..5,
    ) {
        let v = p.len();
        let y = OneHotLabel::new(label_pick % v, v).unwrap();
        let hg = hessian_gradient_product(&p, &y).unwrap();
        let y_star = (0..v)
            .filter(|&j| j != y.index())
            .max_by(|&a, &b| p.as_slice()[a].partial_cmp(&p.as_slice()[b]).unwrap())
            .unwrap();
        for j in 0..v {
            if j != y.index() {
                prop_assert!(hg[y_star] >= hg[j] - 1e-12,
                    "class {j} beats the most confident wrong class");
            }
        }
    }

    #[test]
    fn softmax_log_round_trip(p in (2usize..=5).prop_flat_map(interior_probs)) {
        let z = LogitVector::new(p.as_slice().iter().map(|x| x.ln()).collect()).unwrap();
        let back = softmax(&z).unwrap();
        for (a, b) in back.as_slice().iter().zip(p.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-14);
        }
        for (label, _) in p.as_slice().iter().enumerate() {
            let y = OneHotLabel::new(label, p.len()).unwrap();
            let ce = cross_entropy(&z, &y).unwrap();
            prop_assert!((ce + p.as_slice()[label].ln()).abs() <= 1e-12);
            prop_assert!(ce >= 0.0);
        }
    }
}

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
                let m = 0.1 + ((seed.wrapping_add(a as u64 * 131)) % 190) as f64 / 100.0;
                if a % 2 == 0 {
                    m
                } else {
                    -m
                }
            })
            .collect(),
    )
    .unwrap()
}

fn sample_matrix(v: usize, d: usize, seed: u64) -> ParameterMatrix {
    let data: Vec<f64> = (0..v * d)
        .map(|k| ((seed.wrapping_add(k as u64 * 193)) % 2000) as f64 / 1000.0 - 1.0)
        .collect();
    ParameterMatrix::from_vec(data, v, d).unwrap()
}
