use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use rand::Rng;
use sha2::{Digest, Sha256};
use styleaug::embedding::{fit_with_default_jitter, EmbeddingCorpus};
use styleaug::predictor::predict_style;
use styleaug::rng::stream;
use styleaug::transformer::stylize;
use styleaug::{
    PredictorConfig, PredictorWeights, RgbImage, StyleEmbedding, TransformerConfig,
    TransformerWeights,
};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_styleaug"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("SOURCE_DATE_EPOCH")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Untrained weights, a corpus, a distribution and a run config in `root`.
struct Kit {
    config: PathBuf,
    corpus: PathBuf,
    images: PathBuf,
}

fn kit(root: &Path) -> Kit {
    let w = root.join("weights");
    let t_cfg = TransformerConfig {
        base_channels: 4,
        residual_blocks: 1,
        ..TransformerConfig::default()
    };
    let t = TransformerWeights::init(t_cfg, &mut stream(1, 0)).unwrap();
    let p = PredictorWeights::init(PredictorConfig::desk(), &mut stream(2, 0)).unwrap();
    t.save(&w.join("transformer")).unwrap();
    p.save(&w.join("predictor")).unwrap();
    let mut rng = stream(3, 0);
    let embeddings: Vec<StyleEmbedding> = (0..12)
        .map(|_| {
            StyleEmbedding::new((0..100).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
        })
        .collect();
    let dist = fit_with_default_jitter(&embeddings).unwrap();
    let corpus = EmbeddingCorpus {
        sources: (0..12).map(|i| format!("s{i}.png")).collect(),
        embeddings,
    };
    corpus.save(&w.join("styles.bin")).unwrap();
    dist.save(&w.join("styles.embdist"), "1970-01-01T00:00:00Z")
        .unwrap();
    let images = root.join("imgs");
    std::fs::create_dir_all(&images).unwrap();
    for i in 0..5 {
        let img = RgbImage::from_fn(24, 24, |_, _| [rng.random(), rng.random(), rng.random()]);
        img.save_png(&images.join(format!("i{i}.png"))).unwrap();
    }
    let config = root.join("run.toml");
    std::fs::write(
        &config,
        "seed = 11\n\n[style]\ntransformer = \"weights/transformer\"\npredictor = \"weights/predictor\"\n\
         distribution = \"weights/styles.embdist\"\n\n[dataset]\ntrain_per_class = 6\ntest_per_class = 4\n\n\
         [experiment]\niterations = 3\nbatch_size = 4\n",
    )
    .unwrap();
    Kit {
        config,
        corpus: w.join("styles.bin"),
        images,
    }
}

/// Relative path to bytes for every file under `dir`, run manifests
/// excluded since they record the output paths.
fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if !p.to_string_lossy().ends_with("manifest.json") {
                out.insert(
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    std::fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

fn digest(dir: &Path) -> Vec<u8> {
    let mut h = Sha256::new();
    for (k, v) in tree(dir) {
        h.update(k.to_string_lossy().as_bytes());
        h.update(&v);
    }
    h.finalize().to_vec()
}

#[test]
fn version_is_json() {
    let o = cli(&["--version"]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["weight_format"], styleaug::archive::FORMAT_VERSION);
    assert!(v["version"].is_string());
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&cli(&["fit-dist", "--bogus"])), 1);
    assert_eq!(code(&cli(&["transmogrify"])), 1);
    assert_eq!(code(&cli(&["fit-dist", "--corpus", "x.bin"])), 1);
    let o = cli(&[
        "fit-dist",
        "--corpus",
        "x.bin",
        "--out",
        "y",
        "--config",
        "/nonexistent/run.toml",
    ]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert_eq!(code(&cli(&["--help"])), 0);
}

#[test]
fn config_errors_exit_one_with_the_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(
        &cfg,
        "seed = 1\n\n[style]\nprobability = 0.5\nalpha = 3.0\n",
    )
    .unwrap();
    let o = cli(&[
        "augment-dir",
        "--in",
        ".",
        "--out",
        s(&tmp.path().join("o")),
        "--config",
        s(&cfg),
    ]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("line 5"), "{}", stderr(&o));

    std::fs::write(&cfg, "[grid]\nprobabilities = [0.5]\nrepetitions = 0\n").unwrap();
    let o = cli(&[
        "grid-search",
        "--out",
        s(&tmp.path().join("g")),
        "--config",
        s(&cfg),
    ]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));

    let o = cli(&[
        "train-classifier",
        "--out",
        s(&tmp.path().join("c")),
        "--p",
        "1.5",
    ]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}

#[test]
fn runtime_failures_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("corpus.bin");
    std::fs::write(&bad, b"not a corpus").unwrap();
    let o = cli(&[
        "fit-dist",
        "--corpus",
        s(&bad),
        "--out",
        s(&tmp.path().join("d.embdist")),
    ]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn dry_run_touches_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = cli(&[
        "augment-dir",
        "--in",
        "/nonexistent",
        "--out",
        s(&out),
        "--transformer",
        "/nonexistent/t",
        "--dry-run",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let plan: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(plan["command"], "augment-dir");
    assert!(plan["config"]["style"].is_object());
    assert!(!out.exists());
}

#[test]
fn flags_override_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let k = kit(tmp.path());
    let o = cli(&[
        "train-classifier",
        "--out",
        "x",
        "--iterations",
        "9",
        "--seed",
        "42",
        "--config",
        s(&k.config),
        "--dry-run",
    ]);
    let plan: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(plan["seed"], 42);
    assert_eq!(plan["config"]["experiment"]["iterations"], 9);
    assert_eq!(plan["config"]["experiment"]["batch_size"], 4);
}

#[test]
fn fit_dist_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let k = kit(tmp.path());
    let outs: Vec<PathBuf> = (0..2)
        .map(|i| tmp.path().join(format!("d{i}/fit.embdist")))
        .collect();
    for out in &outs {
        let o = cli(&["fit-dist", "--corpus", s(&k.corpus), "--out", s(out)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    assert_eq!(tree(&tmp.path().join("d0")), tree(&tmp.path().join("d1")));
    let sidecar: serde_json::Value =
        serde_json::from_slice(&std::fs::read(tmp.path().join("d0/fit.embdist.json")).unwrap())
            .unwrap();
    assert_eq!(sidecar["dim"], 100);
    assert_eq!(sidecar["count"], 12);
    assert!(tmp.path().join("d0/fit.embdist.manifest.json").exists());
}

#[test]
fn augment_dir_is_reproducible_under_a_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let k = kit(tmp.path());
    let run = |name: &str, seed: &str| {
        let out = tmp.path().join(name);
        let o = cli(&[
            "augment-dir",
            "--in",
            s(&k.images),
            "--out",
            s(&out),
            "--p",
            "0.5",
            "--seed",
            seed,
            "--config",
            s(&k.config),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        out
    };
    let (a, b, c) = (run("a", "7"), run("b", "7"), run("c", "8"));
    assert_eq!(digest(&a), digest(&b));
    assert_ne!(digest(&a), digest(&c));
    assert_eq!(
        tree(&a)
            .keys()
            .filter(|k| k.extension().is_some_and(|e| e == "png"))
            .count(),
        5
    );
    assert!(a.join("manifest.json").exists());
}

#[test]
fn stylize_at_alpha_zero_uses_the_content_embedding() {
    let tmp = tempfile::tempdir().unwrap();
    let k = kit(tmp.path());
    let input = k.images.join("i0.png");
    let out = tmp.path().join("b.png");
    let o = cli(&[
        "stylize",
        "--content",
        s(&input),
        "--alpha",
        "0",
        "--out",
        s(&out),
        "--config",
        s(&k.config),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let w = tmp.path().join("weights");
    let t = TransformerWeights::load(&w.join("transformer")).unwrap();
    let p = PredictorWeights::load(&w.join("predictor")).unwrap();
    let img = RgbImage::load(&input).unwrap();
    let expect = stylize(&img, &predict_style(&img, &p).unwrap(), &t)
        .unwrap()
        .quantized();
    assert_eq!(RgbImage::load(&out).unwrap(), expect);
}

#[test]
fn classifier_runs_and_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let k = kit(tmp.path());
    let results = tmp.path().join("results");
    for arm in ["none", "style"] {
        let o = cli(&[
            "train-classifier",
            "--arm",
            arm,
            "--out",
            s(&results.join(arm)),
            "--config",
            s(&k.config),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let r: serde_json::Value =
        serde_json::from_slice(&std::fs::read(results.join("none/result.json")).unwrap()).unwrap();
    assert_eq!(r["seed"], 11);
    assert_eq!(r["curve"].as_array().unwrap().len(), 4);
    let report = tmp.path().join("report");
    let o = cli(&["report", "--results", s(&results), "--out", s(&report)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = std::fs::read_to_string(report.join("aggregate.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "{csv}");
    assert!(report.join("curves.svg").exists());
    assert!(report.join("summary.txt").exists());
}

#[test]
fn shared_weights_feed_the_library_augmenter() {
    // The config written by the kit loads into a working augmenter.
    let tmp = tempfile::tempdir().unwrap();
    let k = kit(tmp.path());
    let cfg = styleaug_cli::config::RunConfig::load(&k.config).unwrap();
    let aug = Arc::new(styleaug::StyleAugmenter::from_config(&cfg.style).unwrap());
    let img = RgbImage::load(&k.images.join("i1.png")).unwrap();
    let out = aug.augment(&img, &mut stream(0, 0)).unwrap();
    assert_eq!((out.width(), out.height()), (24, 24));
}
