mod common;

use std::sync::Arc;

use rand::RngCore;
use sha2::{Digest, Sha256};
use styleaug::augment::traditional::erasing_rect;
use styleaug::augment::{make_pipeline, style_augment, traditional_augment, Arm, AugmentFile};
use styleaug::rng::stream;
use styleaug::{Error, Pipeline, RgbImage, TraditionalAugmentConfig};

use common::{random_image, untrained_augmenter};

#[test]
fn half_probability_augments_about_half() {
    let aug = untrained_augmenter(0.5, 0.5);
    let mut rng = stream(21, 0);
    let n = 10_000;
    let hits = (0..n).filter(|_| aug.plan(&mut rng).is_some()).count();
    let frac = hits as f64 / n as f64;
    assert!((0.48..=0.52).contains(&frac), "{frac}");
}

#[test]
fn erased_area_stays_in_range() {
    let mut cfg = TraditionalAugmentConfig::disabled();
    cfg.erasing.enabled = true;
    cfg.erasing.probability = 1.0;
    cfg.erasing.area = [0.1, 0.2];
    let grey = RgbImage::filled(40, 30, [0.5; 3]);
    let mut rng = stream(22, 0);
    for _ in 0..1000 {
        let out = traditional_augment(&grey, &cfg, &mut rng);
        let changed = (0..30)
            .flat_map(|y| (0..40).map(move |x| (x, y)))
            .filter(|&(x, y)| out.get(x, y) != [0.5; 3])
            .count();
        let frac = changed as f64 / 1200.0;
        assert!((0.1..=0.2).contains(&frac), "erased fraction {frac}");
    }
    // The rectangle sampler itself, on awkward sizes.
    for (w, h) in [(7, 9), (16, 16), (33, 5)] {
        for _ in 0..200 {
            if let Some((_, _, rw, rh)) = erasing_rect(w, h, &cfg.erasing, &mut rng) {
                let frac = (rw * rh) as f64 / (w * h) as f64;
                assert!((0.1..=0.2).contains(&frac));
            }
        }
    }
}

#[test]
fn both_arm_is_traditional_then_style() {
    let style = Arc::new(untrained_augmenter(1.0, 0.5));
    let trad = TraditionalAugmentConfig::default();
    let both = make_pipeline(Arm::Both, Some(&trad), Some(Arc::clone(&style))).unwrap();
    let img = random_image(24, 24, &mut stream(23, 0));
    for seed in 0..5 {
        let mut rng = stream(seed, 1);
        let out = both.apply(&img, &mut rng).unwrap();
        let mut probe = stream(seed, 1);
        let (s1, s2) = (probe.next_u64(), probe.next_u64());
        let stage1 = traditional_augment(&img, &trad, &mut stream(s1, 0));
        let expect = style_augment(&stage1, &style, &mut stream(s2, 0)).unwrap();
        assert_eq!(out, expect);
    }
}

fn stream_digest(pipe: &Pipeline, images: &[RgbImage], seed: u64) -> Vec<u8> {
    let mut rng = stream(seed, 0);
    let mut h = Sha256::new();
    for chunk in images.chunks(3) {
        let refs: Vec<&RgbImage> = chunk.iter().collect();
        for out in pipe
            .apply_batch(&refs, &vec![None; refs.len()], &mut rng)
            .unwrap()
        {
            for v in out.data() {
                h.update(v.to_le_bytes());
            }
        }
    }
    h.finalize().to_vec()
}

#[test]
fn same_master_seed_gives_the_same_stream() {
    let mut rng = stream(24, 0);
    let images: Vec<_> = (0..10).map(|_| random_image(16, 16, &mut rng)).collect();
    let trad = TraditionalAugmentConfig::default();
    let make = || {
        make_pipeline(
            Arm::Both,
            Some(&trad),
            Some(Arc::new(untrained_augmenter(0.5, 0.5))),
        )
        .unwrap()
    };
    let (a, b) = (make(), make());
    assert_eq!(stream_digest(&a, &images, 3), stream_digest(&b, &images, 3));
    assert_ne!(stream_digest(&a, &images, 3), stream_digest(&a, &images, 4));
}

#[test]
fn none_arm_and_disabled_traditional_are_identity() {
    let img = random_image(12, 10, &mut stream(25, 0));
    let none = make_pipeline(Arm::None, None, None).unwrap();
    assert_eq!(none.apply(&img, &mut stream(1, 0)).unwrap(), img);
    let off = TraditionalAugmentConfig::disabled();
    assert_eq!(traditional_augment(&img, &off, &mut stream(1, 0)), img);
}

#[test]
fn config_file_errors_name_the_line() {
    let text = "[style]\nprobability = 0.5\nalpha = 0.5\n\n[traditional.rotation]\ndegrees = [20.0, -20.0]\n";
    match AugmentFile::parse(text) {
        Err(Error::Config { line: Some(6), .. }) => {}
        other => panic!("expected a line-6 config error, got {other:?}"),
    }
    match AugmentFile::parse("[style]\nprobability = 1.5\n") {
        Err(Error::Config { line: Some(2), .. }) => {}
        other => panic!("expected a line-2 config error, got {other:?}"),
    }
}

#[test]
fn cached_content_embeddings_do_not_change_outputs() {
    let plain = untrained_augmenter(1.0, 0.5);
    let mut cfg = styleaug::AugmentationConfig {
        probability: 1.0,
        alpha: 0.5,
        ..Default::default()
    };
    cfg.cache_content_embeddings = true;
    let cached = styleaug::StyleAugmenter::new(
        &cfg,
        Arc::new(plain.transformer().clone()),
        Arc::new(plain.predictor().clone()),
        Arc::new(plain.distribution().clone()),
    )
    .unwrap();
    let img = random_image(20, 20, &mut stream(26, 0));
    for round in 0..2 {
        let a = plain
            .augment_keyed(&img, Some(7), &mut stream(round, 0))
            .unwrap();
        let b = cached
            .augment_keyed(&img, Some(7), &mut stream(round, 0))
            .unwrap();
        assert_eq!(a, b);
    }
}
