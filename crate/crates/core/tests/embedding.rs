mod common;

use rand::Rng;
use rand_distr::StandardNormal;
use styleaug::embedding::{
    fit_embedding_distribution, fit_with_default_jitter, sample_style_embedding, EmbeddingCorpus,
    EmbeddingDistribution,
};
use styleaug::predictor::{embed_corpus, predict_style};
use styleaug::rng::stream;
use styleaug::{Error, PredictorConfig, PredictorWeights, RgbImage, StyleEmbedding};

fn moments(samples: &[StyleEmbedding]) -> (Vec<f64>, Vec<f64>) {
    let d = samples[0].dim();
    let n = samples.len() as f64;
    let mut mean = vec![0.0; d];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s.values()) {
            *m += *v as f64 / n;
        }
    }
    let mut cov = vec![0.0; d * d];
    for s in samples {
        let v = s.values();
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] += (v[i] as f64 - mean[i]) * (v[j] as f64 - mean[j]) / (n - 1.0);
            }
        }
    }
    (mean, cov)
}

fn frobenius_rel(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

/// Sampling covariance of a fitted distribution: `Sigma + jitter * I`.
fn sampling_covariance(dist: &EmbeddingDistribution) -> Vec<f64> {
    let d = dist.dim();
    let mut c = dist.covariance().to_vec();
    for i in 0..d {
        c[i * d + i] += dist.jitter();
    }
    c
}

#[test]
fn two_dimensional_monte_carlo_matches_the_fit() {
    let pts = [[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [1.0, 3.0]];
    let corpus: Vec<_> = pts
        .iter()
        .map(|p| StyleEmbedding::new(p.to_vec()).unwrap())
        .collect();
    let dist = fit_embedding_distribution(&corpus, 0.0).unwrap();
    let n = 100_000;
    let mut rng = stream(17, 0);
    let samples: Vec<_> = (0..n)
        .map(|_| sample_style_embedding(&dist, &mut rng))
        .collect();
    let (mean, cov) = moments(&samples);
    let target = sampling_covariance(&dist);
    for i in 0..2 {
        let sigma = target[i * 2 + i].sqrt();
        assert!(
            (mean[i] - dist.mean()[i]).abs() <= 4.0 * sigma / (n as f64).sqrt(),
            "coordinate {i}"
        );
    }
    assert!(frobenius_rel(&cov, &target) < 0.05);
}

#[test]
fn fit_sample_fit_recovers_the_parameters() {
    let d = 10;
    let mut rng = stream(18, 0);
    let corpus: Vec<_> = (0..60)
        .map(|_| {
            let base: f64 = rng.sample(StandardNormal);
            StyleEmbedding::new(
                (0..d)
                    .map(|i| {
                        (2.0 + i as f64
                            + base * (1.0 + 0.1 * i as f64)
                            + rng.sample::<f64, _>(StandardNormal)) as f32
                    })
                    .collect(),
            )
            .unwrap()
        })
        .collect();
    let dist = fit_with_default_jitter(&corpus).unwrap();
    let mut draw = stream(19, 0);
    let samples: Vec<_> = (0..100_000)
        .map(|_| sample_style_embedding(&dist, &mut draw))
        .collect();
    let refit = fit_embedding_distribution(&samples, 0.0).unwrap();
    let mean_err = frobenius_rel(refit.mean(), dist.mean());
    assert!(mean_err < 0.01, "mean relative L2 error {mean_err}");
    let cov_err = frobenius_rel(refit.covariance(), &sampling_covariance(&dist));
    assert!(cov_err < 0.05, "covariance relative error {cov_err}");
}

#[test]
fn fitting_nothing_is_invalid() {
    assert!(matches!(
        fit_embedding_distribution(&[], 1e-5),
        Err(Error::InvalidInput(_))
    ));
}

#[test]
fn predictor_is_finite_on_extreme_images() {
    let p = PredictorWeights::init(PredictorConfig::desk(), &mut stream(4, 0)).unwrap();
    for fill in [0.0, 1.0] {
        let z = predict_style(&RgbImage::filled(32, 32, [fill; 3]), &p).unwrap();
        assert_eq!(z.dim(), 100);
        assert!(z.values().iter().all(|v| v.is_finite()));
    }
}

#[test]
fn embedding_a_directory_twice_gives_identical_files() {
    let p = PredictorWeights::init(PredictorConfig::desk(), &mut stream(4, 0)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let imgs = dir.path().join("imgs");
    std::fs::create_dir(&imgs).unwrap();
    let mut rng = stream(5, 0);
    for name in ["c.png", "a.png", "b.png"] {
        common::random_image(24, 20, &mut rng)
            .save_png(&imgs.join(name))
            .unwrap();
    }
    let first = embed_corpus(&imgs, &p, &dir.path().join("one.bin")).unwrap();
    embed_corpus(&imgs, &p, &dir.path().join("two.bin")).unwrap();
    assert_eq!(first.embeddings.len(), 3);
    assert_eq!(first.sources, ["a.png", "b.png", "c.png"]);
    let read = |n: &str| std::fs::read(dir.path().join(n)).unwrap();
    assert_eq!(read("one.bin"), read("two.bin"));
    assert_eq!(
        EmbeddingCorpus::load(&dir.path().join("one.bin")).unwrap(),
        first
    );

    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    assert!(embed_corpus(&empty, &p, &dir.path().join("none.bin")).is_err());
}
