mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;
use styleaug::augment::traditional::hflip;
use styleaug::augment::{make_pipeline, traditional_augment, Arm};
use styleaug::embedding::{
    fit_embedding_distribution, fit_with_default_jitter, interpolate_embedding,
    sample_style_embedding,
};
use styleaug::loss::{
    content_loss, direct_optimize, gram_matrix, joint_objective, style_loss, DirectOptions,
};
use styleaug::predictor::{predict_style, predict_styles};
use styleaug::rng::stream;
use styleaug::tensor::Tensor;
use styleaug::transformer::{conditional_instance_norm, stylize, CinParams};
use styleaug::{
    AugmentationConfig, LossNetwork, Pipeline, PredictorConfig, PredictorWeights, StyleEmbedding,
    TraditionalAugmentConfig,
};

use common::{random_image, small_transformer, untrained_augmenter};

fn embedding(dim: usize) -> impl Strategy<Value = StyleEmbedding> {
    prop::collection::vec(-10.0f32..10.0, dim).prop_map(|v| StyleEmbedding::new(v).unwrap())
}

fn corpus() -> impl Strategy<Value = Vec<StyleEmbedding>> {
    (1usize..6).prop_flat_map(|d| prop::collection::vec(embedding(d), 1..12))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn interpolation_is_linear_in_alpha(
        (a, b) in (1usize..20).prop_flat_map(|d| (embedding(d), embedding(d))),
        alpha in 0.0f64..=1.0,
    ) {
        let o0 = interpolate_embedding(&a, &b, 0.0).unwrap();
        let o1 = interpolate_embedding(&a, &b, 1.0).unwrap();
        let oa = interpolate_embedding(&a, &b, alpha).unwrap();
        for i in 0..a.dim() {
            let (x0, x1) = (o0.values()[i] as f64, o1.values()[i] as f64);
            let expect = x0 + alpha * (x1 - x0);
            prop_assert!((oa.values()[i] as f64 - expect).abs() <= 1e-5 * (1.0 + expect.abs()));
        }
    }

    #[test]
    fn alpha_outside_unit_interval_is_rejected(alpha in prop_oneof![-5.0f64..-1e-9, 1.0 + 1e-9..5.0]) {
        let z = StyleEmbedding::zeros(3);
        prop_assert!(interpolate_embedding(&z, &z, alpha).is_err());
    }

    #[test]
    fn fitted_distributions_keep_their_invariants(embeddings in corpus()) {
        let dist = fit_with_default_jitter(&embeddings).unwrap();
        let d = dist.dim();
        let (cov, chol) = (dist.covariance(), dist.chol());
        let mut scale = 1.0f64;
        for i in 0..d {
            for j in 0..d {
                prop_assert!((cov[i * d + j] - cov[j * d + i]).abs() <= 1e-9);
                scale = scale.max(cov[i * d + j].abs());
            }
            if dist.jitter() > 0.0 {
                prop_assert!(chol[i * d + i] > 0.0);
            } else {
                // Zero spread and zero jitter: the factor is zero and sampling returns the mean.
                prop_assert!(chol[i * d + i] == 0.0);
            }
        }
        for i in 0..d {
            for j in 0..d {
                let llt: f64 = (0..d).map(|k| chol[i * d + k] * chol[j * d + k]).sum();
                let target = cov[i * d + j] + if i == j { dist.jitter() } else { 0.0 };
                prop_assert!((llt - target).abs() <= 1e-6 * scale, "({i},{j}): {llt} vs {target}");
            }
        }
    }

    #[test]
    fn sampling_is_bit_reproducible(embeddings in corpus(), seed in any::<u64>()) {
        let dist = fit_embedding_distribution(&embeddings, 1e-3).unwrap();
        let a = sample_style_embedding(&dist, &mut stream(seed, 0));
        let b = sample_style_embedding(&dist, &mut stream(seed, 0));
        prop_assert_eq!(a.values(), b.values());
    }

    #[test]
    fn gram_is_symmetric_positive_semidefinite(
        (c, hw, data) in (1usize..9, 1usize..30).prop_flat_map(|(c, hw)| {
            (Just(c), Just(hw), prop::collection::vec(-3.0f32..3.0, c * hw))
        }),
    ) {
        let g = gram_matrix(&Tensor::from_vec(&[c, 1, hw], data).unwrap()).unwrap();
        let m = DMatrix::from_fn(c, c, |i, j| g.data()[i * c + j] as f64);
        prop_assert_eq!(&m, &m.transpose());
        prop_assert!(m.symmetric_eigenvalues().min() >= -1e-6);
    }

    #[test]
    fn gram_ignores_spatial_order(
        (c, hw, data, seed) in (1usize..6, 2usize..20).prop_flat_map(|(c, hw)| {
            (Just(c), Just(hw), prop::collection::vec(-3.0f32..3.0, c * hw), any::<u64>())
        }),
    ) {
        let mut perm: Vec<usize> = (0..hw).collect();
        let mut rng = stream(seed, 0);
        for i in (1..hw).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let permuted: Vec<f32> = (0..c).flat_map(|k| perm.iter().map(move |&p| (k, p))).map(|(k, p)| data[k * hw + p]).collect();
        let g1 = gram_matrix(&Tensor::from_vec(&[c, hw, 1], data).unwrap()).unwrap();
        let g2 = gram_matrix(&Tensor::from_vec(&[c, hw, 1], permuted).unwrap()).unwrap();
        prop_assert!(g1.max_abs_diff(&g2) <= 1e-6);
    }

    #[test]
    fn instance_norm_is_idempotent(
        (c, hw, data) in (1usize..5, 3usize..9).prop_flat_map(|(c, hw)| {
            (Just(c), Just(hw), prop::collection::vec(-5.0f32..5.0, c * hw * hw))
        }),
    ) {
        let x = Tensor::from_vec(&[c, hw, hw], data).unwrap();
        // Near-constant channels are numerically degenerate.
        for k in 0..c {
            let v = &x.data()[k * hw * hw..(k + 1) * hw * hw];
            let mean = v.iter().sum::<f32>() / v.len() as f32;
            let var = v.iter().map(|a| (a - mean).powi(2)).sum::<f32>() / v.len() as f32;
            prop_assume!(var > 1e-2);
        }
        let params = CinParams { gamma: vec![1.0; c], beta: vec![0.0; c] };
        let once = conditional_instance_norm(&x, &params, 1e-10).unwrap();
        let twice = conditional_instance_norm(&once, &params, 1e-10).unwrap();
        prop_assert!(once.max_abs_diff(&twice) <= 1e-4);
    }

    #[test]
    fn hflip_is_an_involution(w in 1usize..20, h in 1usize..20, seed in any::<u64>()) {
        let img = random_image(w, h, &mut stream(seed, 0));
        prop_assert_eq!(hflip(&hflip(&img)), img);
    }

    #[test]
    fn traditional_augment_preserves_size(w in 8usize..40, h in 8usize..40, seed in any::<u64>()) {
        let img = random_image(w, h, &mut stream(seed, 0));
        let mut cfg = TraditionalAugmentConfig::default();
        cfg.hflip.probability = 1.0;
        cfg.rotation.probability = 1.0;
        cfg.zoom.probability = 1.0;
        cfg.erasing.probability = 1.0;
        cfg.shear.probability = 1.0;
        cfg.color_jitter.probability = 1.0;
        let out = traditional_augment(&img, &cfg, &mut stream(seed, 1));
        prop_assert_eq!((out.width(), out.height()), (w, h));
        prop_assert!(out.is_valid());
    }

    #[test]
    fn augment_config_round_trips(p in 0.0f64..=1.0, alpha in 0.0f64..=1.0, seed in any::<u64>(), cache in any::<bool>()) {
        let cfg = AugmentationConfig { probability: p, alpha, seed, cache_content_embeddings: cache, ..AugmentationConfig::default() };
        let text = toml::to_string(&cfg).unwrap();
        let back: AugmentationConfig = toml::from_str(&text).unwrap();
        prop_assert_eq!(back, cfg);
    }
}

proptest! {
    // Cases run the loss network or the transformer.
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn losses_are_non_negative_and_vanish_at_identity(seed in any::<u64>(), size in 8usize..24) {
        let net = LossNetwork::desk();
        let mut rng = stream(seed, 0);
        let (x, c) = (random_image(size, size, &mut rng), random_image(size, size, &mut rng));
        let cl = content_loss(&x, &c, &net).unwrap();
        prop_assert!(cl >= 0.0);
        prop_assert_eq!(cl, content_loss(&c, &x, &net).unwrap());
        prop_assert!(style_loss(&x, &c, &net).unwrap() >= 0.0);
        prop_assert_eq!(content_loss(&x, &x, &net).unwrap(), 0.0);
        prop_assert_eq!(style_loss(&x, &x, &net).unwrap(), 0.0);
        prop_assert_eq!(joint_objective(&x, &x, &x, 1e4, &net).unwrap(), 0.0);
        prop_assert_eq!(joint_objective(&x, &c, &x, 0.0, &net).unwrap(), cl);
    }

    #[test]
    fn direct_optimization_never_increases_the_objective(seed in any::<u64>()) {
        let net = LossNetwork::desk();
        let mut rng = stream(seed, 0);
        let (c, s) = (random_image(16, 16, &mut rng), random_image(16, 16, &mut rng));
        let opts = DirectOptions { steps: 15, step_size: rng.random_range(1e-3..1.0), ..DirectOptions::default() };
        let r = direct_optimize(&c, &s, &opts, &net).unwrap();
        prop_assert_eq!(r.log.len(), 16);
        for w in r.log.windows(2) {
            prop_assert!(w[1].total <= w[0].total);
        }
        prop_assert!(r.image.is_valid());
    }

    #[test]
    fn predictor_ignores_batch_composition(seed in any::<u64>(), n in 2usize..5, size in 16usize..40) {
        let p = PredictorWeights::init(PredictorConfig::desk(), &mut stream(seed, 1)).unwrap();
        let mut rng = stream(seed, 0);
        let images: Vec<_> = (0..n).map(|_| random_image(size, size, &mut rng)).collect();
        let refs: Vec<_> = images.iter().collect();
        let batch = predict_styles(&refs, &p).unwrap();
        for (img, zb) in images.iter().zip(&batch) {
            let z = predict_style(img, &p).unwrap();
            let diff = z.values().iter().zip(zb.values()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
            prop_assert!(diff <= 1e-4);
        }
    }

    #[test]
    fn stylize_accepts_any_size_with_one_weight_set(w in 8usize..48, h in 8usize..48, seed in any::<u64>()) {
        let t = small_transformer(5);
        let mut rng = stream(seed, 0);
        let img = random_image(w, h, &mut rng);
        let z = StyleEmbedding::new((0..t.embedding_dim()).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
        let out = stylize(&img, &z, &t).unwrap();
        prop_assert_eq!((out.width(), out.height()), (w, h));
        prop_assert!(out.is_valid());
    }

    #[test]
    fn batches_keep_order_and_size(seed in any::<u64>(), n in 1usize..6) {
        let style = std::sync::Arc::new(untrained_augmenter(0.5, 0.5));
        let trad = TraditionalAugmentConfig::default();
        let mut rng = stream(seed, 0);
        let images: Vec<_> = (0..n).map(|i| random_image(16 + 4 * i, 16, &mut rng)).collect();
        let refs: Vec<_> = images.iter().collect();
        for arm in Arm::ALL {
            let pipe = make_pipeline(arm, Some(&trad), Some(std::sync::Arc::clone(&style))).unwrap();
            let batch = pipe.apply_batch(&refs, &vec![None; n], &mut stream(seed, 1)).unwrap();
            prop_assert_eq!(batch.len(), n);
            let mut one_rng = stream(seed, 1);
            for (img, out) in images.iter().zip(&batch) {
                prop_assert_eq!((out.width(), out.height()), (img.width(), img.height()));
                prop_assert_eq!(&pipe.apply(img, &mut one_rng).unwrap(), out);
            }
        }
    }

    #[test]
    fn zero_probability_is_bit_identical(seed in any::<u64>()) {
        let pipe = Pipeline::style_only(untrained_augmenter(0.0, 0.5));
        let img = random_image(20, 20, &mut stream(seed, 0));
        prop_assert_eq!(pipe.apply(&img, &mut stream(seed, 1)).unwrap(), img);
    }
}
