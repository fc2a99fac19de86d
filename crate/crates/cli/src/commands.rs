//! Subcommand implementations.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde_json::json;
use styleaug::augment::{make_pipeline, AlphaPolicyKind, Arm, Pipeline, StyleAugmenter};
use styleaug::embedding::{
    default_jitter, fit_embedding_distribution, interpolate_embedding, sample_style_embedding,
    EmbeddingCorpus, EmbeddingDistribution,
};
use styleaug::harness::report::{
    ablation_markdown, curves_svg, grid_svg, read_result, result_file_name, summary_text,
    write_ablation_csv, write_aggregate_csv, write_json, write_text,
};
use styleaug::harness::{
    ablate_color_jitter, build_desk_domains, grid_search, measure_throughput, train_classifier,
    train_desk_style, AugmentSnapshot, Dataset, ExperimentResult, HeldOutConfiguration, Split,
};
use styleaug::loss::write_objective_csv;
use styleaug::predictor::{embed_corpus, list_images, predict_style, PredictorWeights};
use styleaug::rng::{stream, tag};
use styleaug::transformer::{stylize, TransformerWeights};
use styleaug::{Error, Result, RgbImage};

use crate::config::RunConfig;
use crate::manifest::{self, Manifest};
use crate::{Command, Common, DatasetArgs, WeightArgs};

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn apply_weights(cfg: &mut RunConfig, w: &WeightArgs) {
    if let Some(p) = &w.transformer {
        cfg.style.transformer = Some(p.clone());
    }
    if let Some(p) = &w.predictor {
        cfg.style.predictor = Some(p.clone());
    }
    if let Some(p) = &w.distribution {
        cfg.style.distribution = Some(p.clone());
    }
}

fn apply_style(cfg: &mut RunConfig, p: Option<f64>, alpha: Option<f64>) {
    if let Some(p) = p {
        cfg.style.probability = p;
    }
    if let Some(a) = alpha {
        cfg.style.alpha = a;
        cfg.style.alpha_policy = AlphaPolicyKind::Fixed;
    }
}

fn apply_dataset(cfg: &mut RunConfig, d: &DatasetArgs) {
    if let Some(p) = &d.dataset {
        cfg.dataset_dir = Some(p.clone());
    }
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.dataset_dir {
        Some(dir) => Dataset::load(dir),
        None => build_desk_domains(cfg.dataset_seed, &cfg.dataset),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn path_json(p: &Path) -> serde_json::Value {
    json!(p.display().to_string())
}

/// Finishes validation; prints the plan and returns `true` on a dry run.
fn prepare(cfg: &RunConfig, manifest: &Manifest, common: &Common) -> Result<bool> {
    cfg.validate()?;
    if common.dry_run {
        print!("{}", manifest.to_json());
        return Ok(true);
    }
    Ok(false)
}

/// RFC 3339 creation time: `SOURCE_DATE_EPOCH` when set, else the newest
/// modification time among `inputs`, else the Unix epoch. Never the wall
/// clock, so reruns are byte-identical.
pub fn created_timestamp(inputs: &[&Path]) -> Result<String> {
    let secs = match std::env::var("SOURCE_DATE_EPOCH") {
        Ok(v) => v.trim().parse::<i64>().map_err(|_| {
            Error::config(None, format!("SOURCE_DATE_EPOCH is not an integer: `{v}`"))
        })?,
        Err(_) => inputs
            .iter()
            .filter_map(|p| std::fs::metadata(p).and_then(|m| m.modified()).ok())
            .filter_map(|t| t.duration_since(std::time::UNIX_EPOCH).ok())
            .map(|d| d.as_secs() as i64)
            .max()
            .unwrap_or(0),
    };
    let t = chrono::DateTime::<chrono::Utc>::from_timestamp(secs, 0)
        .ok_or_else(|| Error::config(None, format!("timestamp {secs} out of range")))?;
    Ok(t.to_rfc3339_opts(chrono::SecondsFormat::Secs, true))
}

fn style_augmenter(cfg: &RunConfig) -> Result<Arc<StyleAugmenter>> {
    Ok(Arc::new(StyleAugmenter::from_config(&cfg.style)?))
}

fn pipeline_for(arm: Arm, cfg: &RunConfig) -> Result<Pipeline> {
    let style = match arm {
        Arm::Style | Arm::Both => Some(style_augmenter(cfg)?),
        _ => None,
    };
    make_pipeline(arm, Some(&cfg.traditional), style)
}

fn save_runs(dir: &Path, runs: &[ExperimentResult]) -> Result<()> {
    create_dir(dir)?;
    for r in runs {
        write_json(&dir.join(result_file_name(r)), r)?;
    }
    Ok(())
}

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::BuildDataset { out, common } => build_dataset(&out, &common),
        Command::EmbedCorpus {
            styles,
            out,
            weights,
            common,
        } => embed(&styles, &out, &weights, &common),
        Command::FitDist {
            corpus,
            out,
            jitter,
            common,
        } => fit_dist(&corpus, &out, jitter, &common),
        Command::Stylize {
            content,
            style,
            alpha,
            out,
            weights,
            common,
        } => stylize_cmd(&content, style.as_deref(), alpha, &out, &weights, &common),
        Command::AugmentDir {
            input,
            out,
            arm,
            p,
            alpha,
            weights,
            common,
        } => augment_dir(&input, &out, &arm, p, alpha, &weights, &common),
        Command::TrainTransformer {
            out,
            steps,
            lambda,
            dataset,
            common,
        } => train_transformer_cmd(&out, steps, lambda, &dataset, &common),
        Command::TrainClassifier {
            out,
            arm,
            iterations,
            p,
            alpha,
            dataset,
            weights,
            common,
        } => train_classifier_cmd(
            &out, &arm, iterations, p, alpha, &dataset, &weights, &common,
        ),
        Command::GridSearch {
            out,
            iterations,
            no_baseline,
            dataset,
            weights,
            common,
        } => grid_cmd(&out, iterations, !no_baseline, &dataset, &weights, &common),
        Command::AblateJitter {
            out,
            iterations,
            seeds,
            dataset,
            weights,
            common,
        } => ablate_cmd(&out, iterations, seeds, &dataset, &weights, &common),
        Command::Throughput {
            out,
            images,
            arm,
            p,
            batch_sizes,
            weights,
            common,
        } => throughput_cmd(
            &out,
            images.as_deref(),
            &arm,
            p,
            batch_sizes,
            &weights,
            &common,
        ),
        Command::Report {
            results,
            out,
            common,
        } => report_cmd(&results, &out, &common),
    }
}

fn build_dataset(out: &Path, common: &Common) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(s) = common.seed {
        cfg.dataset_seed = s;
    }
    let m = Manifest::new("build-dataset", &cfg, json!({ "out": path_json(out) }));
    if prepare(&cfg, &m, common)? {
        return Ok(());
    }
    let ds = build_desk_domains(cfg.dataset_seed, &cfg.dataset)?;
    ds.save(out)?;
    m.write(&manifest::for_dir(out))
}

fn embed(styles: &Path, out: &Path, weights: &WeightArgs, common: &Common) -> Result<()> {
    let mut cfg = load_config(common)?;
    apply_weights(&mut cfg, weights);
    let m = Manifest::new(
        "embed-corpus",
        &cfg,
        json!({ "styles": path_json(styles), "out": path_json(out) }),
    );
    if prepare(&cfg, &m, common)? {
        return Ok(());
    }
    let p =
        cfg.style.predictor.clone().ok_or_else(|| {
            Error::config(None, "embed-corpus needs --predictor or style.predictor")
        })?;
    let predictor = PredictorWeights::load(&p)?;
    let corpus = embed_corpus(styles, &predictor, out)?;
    log::info!("embedded {} images", corpus.embeddings.len());
    m.write(&manifest::for_file(out))
}

fn fit_dist(corpus_path: &Path, out: &Path, jitter: Option<f64>, common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    if let Some(j) = jitter {
        if !(j >= 0.0 && j.is_finite()) {
            return Err(Error::invalid(format!(
                "jitter must be finite and >= 0, got {j}"
            )));
        }
    }
    let m = Manifest::new(
        "fit-dist",
        &cfg,
        json!({ "corpus": path_json(corpus_path), "out": path_json(out), "jitter": jitter }),
    );
    if prepare(&cfg, &m, common)? {
        return Ok(());
    }
    let corpus = EmbeddingCorpus::load(corpus_path)?;
    let jitter = match jitter {
        Some(j) => j,
        None => default_jitter(&corpus.embeddings)?,
    };
    let dist = fit_embedding_distribution(&corpus.embeddings, jitter)?;
    let created = created_timestamp(&[corpus_path])?;
    dist.save(out, &created)?;
    m.write(&manifest::for_file(out))
}

fn stylize_cmd(
    content: &Path,
    style: Option<&Path>,
    alpha: Option<f64>,
    out: &Path,
    weights: &WeightArgs,
    common: &Common,
) -> Result<()> {
    let mut cfg = load_config(common)?;
    apply_weights(&mut cfg, weights);
    apply_style(&mut cfg, None, alpha);
    let alpha = cfg.style.alpha;
    let m = Manifest::new(
        "stylize",
        &cfg,
        json!({
            "content": path_json(content),
            "style": style.map(path_json),
            "alpha": alpha,
            "out": path_json(out),
        }),
    );
    if prepare(&cfg, &m, common)? {
        return Ok(());
    }
    let need = |p: &Option<PathBuf>, what: &str| {
        p.clone()
            .ok_or_else(|| Error::config(None, format!("stylize needs --{what} or style.{what}")))
    };
    let transformer = TransformerWeights::load(&need(&cfg.style.transformer, "transformer")?)?;
    let predictor = PredictorWeights::load(&need(&cfg.style.predictor, "predictor")?)?;
    let image = RgbImage::load(content)?;
    let own = predict_style(&image, &predictor)?;
    let z = if alpha == 0.0 {
        own
    } else {
        let other = match style {
            Some(s) => predict_style(&RgbImage::load(s)?, &predictor)?,
            None => {
                let dist =
                    EmbeddingDistribution::load(&need(&cfg.style.distribution, "distribution")?)?;
                sample_style_embedding(&dist, &mut stream(cfg.seed, tag("stylize")))
            }
        };
        interpolate_embedding(&other, &own, alpha)?
    };
    stylize(&image, &z, &transformer)?.save_png(out)?;
    m.write(&manifest::for_file(out))
}

#[allow(clippy::too_many_arguments)]
fn augment_dir(
    input: &Path,
    out: &Path,
    arm: &str,
    p: Option<f64>,
    alpha: Option<f64>,
    weights: &WeightArgs,
    common: &Common,
) -> Result<()> {
    let arm: Arm = arm.parse()?;
    let mut cfg = load_config(common)?;
    apply_weights(&mut cfg, weights);
    apply_style(&mut cfg, p, alpha);
    let m = Manifest::new(
        "augment-dir",
        &cfg,
        json!({ "in": path_json(input), "out": path_json(out), "arm": arm.name() }),
    );
    if prepare(&cfg, &m, common)? {
        return Ok(());
    }
    let pipeline = pipeline_for(arm, &cfg)?;
    let files = list_images(input)?;
    if files.is_empty() {
        return Err(Error::invalid(format!("no images in {}", input.display())));
    }
    create_dir(out)?;
    let mut rng = stream(cfg.seed, tag("augment-dir"));
    for (chunk_index, chunk) in files.chunks(16).enumerate() {
        let images = chunk
            .iter()
            .map(|f| RgbImage::load(f))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&RgbImage> = images.iter().collect();
        let keys: Vec<Option<u64>> = (0..chunk.len())
            .map(|i| Some((chunk_index * 16 + i) as u64))
            .collect();
        let augmented = pipeline.apply_batch(&refs, &keys, &mut rng)?;
        for (file, img) in chunk.iter().zip(augmented) {
            let stem = file
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            img.save_png(&out.join(format!("{stem}.png")))?;
        }
    }
    m.write(&manifest::for_dir(out))
}

fn train_transformer_cmd(
    out: &Path,
    steps: Option<usize>,
    lambda: Option<f64>,
    dataset: &DatasetArgs,
    common: &Common,
) -> Result<()> {
    let mut cfg = load_config(common)?;
    apply_dataset(&mut cfg, dataset);
    if let Some(s) = steps {
        cfg.desk_style.train.steps = s;
    }
    if let Some(l) = lambda {
        cfg.desk_style.train.lambda = l;
    }
    let m = Manifest::new("train-transformer", &cfg, json!({ "out": path_json(out) }));
    if prepare(&cfg, &m, common)? {
        return Ok(());
    }
    let ds = load_dataset(&cfg)?;
    let setup = train_desk_style(
        &ds,
        &cfg.experiment.train_domains,
        &cfg.desk_style,
        cfg.seed,
    )?;
    if let Some(w) = &setup.outcome.warning {
        log::warn!("{w}");
    }
    create_dir(out)?;
    setup.outcome.transformer.save(&out.join("transformer"))?;
    setup.outcome.predictor.save(&out.join("predictor"))?;
    write_objective_csv(&out.join("loss.csv"), &setup.outcome.log)?;
    setup.corpus.save(&out.join("styles.bin"))?;
    let created = created_timestamp(&[])?;
    setup
        .distribution
        .save(&out.join("styles.embdist"), &created)?;
    let snippet = "[style]\ntransformer = \"transformer\"\npredictor = \"predictor\"\ndistribution = \"styles.embdist\"\n";
    write_text(&out.join("augment.toml"), snippet)?;
    m.write(&manifest::for_dir(out))
}

#[allow(clippy::too_many_arguments)]
fn train_classifier_cmd(
    out: &Path,
    arm: &str,
    iterations: Option<usize>,
    p: Option<f64>,
    alpha: Option<f64>,
    dataset: &DatasetArgs,
    weights: &WeightArgs,
    common: &Common,
) -> Result<()> {
    let arm: Arm = arm.parse()?;
    let mut cfg = load_config(common)?;
    apply_weights(&mut cfg, weights);
    apply_style(&mut cfg, p, alpha);
    apply_dataset(&mut cfg, dataset);
    if let Some(i) = iterations {
        cfg.experiment.iterations = i;
    }
    let m = Manifest::new(
        "train-classifier",
        &cfg,
        json!({ "out": path_json(out), "arm": arm.name() }),
    );
    if prepare(&cfg, &m, common)? {
        return Ok(());
    }
    let ds = load_dataset(&cfg)?;
    let pipeline = pipeline_for(arm, &cfg)?;
    let style = matches!(arm, Arm::Style | Arm::Both)
        .then(|| StyleAugmenter::from_config(&cfg.style))
        .transpose()?;
    let trad = matches!(arm, Arm::Trad | Arm::Both).then_some(&cfg.traditional);
    let snapshot = AugmentSnapshot::new(arm.name(), trad, style.as_ref());
    let result = train_classifier(&ds, &cfg.experiment, &pipeline, snapshot, cfg.seed)?;
    create_dir(out)?;
    write_json(&out.join("result.json"), &result)?;
    log::info!(
        "held-out accuracy {:.4}, {:.3} ms/image augmentation",
        result.held_out_accuracy,
        result.timing.augment_ms_per_image
    );
    m.write(&manifest::for_dir(out))
}

fn grid_cmd(
    out: &Path,
    iterations: Option<usize>,
    baseline: bool,
    dataset: &DatasetArgs,
    weights: &WeightArgs,
    common: &Common,
) -> Result<()> {
    let mut cfg = load_config(common)?;
    apply_weights(&mut cfg, weights);
    apply_dataset(&mut cfg, dataset);
    if let Some(i) = iterations {
        cfg.experiment.iterations = i;
    }
    let m = Manifest::new(
        "grid-search",
        &cfg,
        json!({ "out": path_json(out), "baseline": baseline }),
    );
    if prepare(&cfg, &m, common)? {
        return Ok(());
    }
    let ds = load_dataset(&cfg)?;
    let style = StyleAugmenter::from_config(&cfg.style)?;
    let report = grid_search(&cfg.grid, &ds, &cfg.experiment, &style, cfg.seed, baseline)?;
    save_runs(&out.join("runs"), &report.runs)?;
    write_json(
        &out.join("grid.json"),
        &json!({ "cells": report.cells, "baseline": report.baseline }),
    )?;
    write_aggregate_csv(&out.join("aggregate.csv"), &report.runs)?;
    if cfg.grid.probabilities.len() > 1 {
        write_text(
            &out.join("grid_probability.svg"),
            &grid_svg("Augmentation probability", &report, false),
        )?;
    }
    if cfg.grid.alphas.len() > 1 {
        write_text(
            &out.join("grid_alpha.svg"),
            &grid_svg("Style transfer strength", &report, true),
        )?;
    }
    write_text(
        &out.join("curves.svg"),
        &curves_svg("Held-out accuracy", &report.runs),
    )?;
    m.write(&manifest::for_dir(out))
}

fn ablate_cmd(
    out: &Path,
    iterations: Option<usize>,
    seeds: Option<Vec<u64>>,
    dataset: &DatasetArgs,
    weights: &WeightArgs,
    common: &Common,
) -> Result<()> {
    let mut cfg = load_config(common)?;
    apply_weights(&mut cfg, weights);
    apply_dataset(&mut cfg, dataset);
    if let Some(i) = iterations {
        cfg.experiment.iterations = i;
    }
    if let Some(s) = seeds {
        cfg.ablation.seeds = s;
    }
    let m = Manifest::new("ablate-jitter", &cfg, json!({ "out": path_json(out) }));
    if prepare(&cfg, &m, common)? {
        return Ok(());
    }
    let configurations = if cfg.ablation.configurations.is_empty() {
        vec![HeldOutConfiguration {
            train_domains: cfg.experiment.train_domains.clone(),
            eval_domains: cfg.experiment.eval_domains.clone(),
        }]
    } else {
        cfg.ablation.configurations.clone()
    };
    let ds = load_dataset(&cfg)?;
    let style = StyleAugmenter::from_config(&cfg.style)?;
    let table = ablate_color_jitter(
        &ds,
        &cfg.experiment,
        &configurations,
        &style,
        &cfg.ablation.seeds,
    )?;
    save_runs(&out.join("runs"), &table.runs)?;
    write_ablation_csv(&out.join("ablation.csv"), &table)?;
    write_text(&out.join("ablation.md"), &ablation_markdown(&table))?;
    m.write(&manifest::for_dir(out))
}

#[allow(clippy::too_many_arguments)]
fn throughput_cmd(
    out: &Path,
    images: Option<&Path>,
    arm: &str,
    p: Option<f64>,
    batch_sizes: Option<Vec<usize>>,
    weights: &WeightArgs,
    common: &Common,
) -> Result<()> {
    let arm: Arm = arm.parse()?;
    let mut cfg = load_config(common)?;
    apply_weights(&mut cfg, weights);
    apply_style(&mut cfg, p, None);
    if let Some(b) = batch_sizes {
        cfg.throughput.batch_sizes = b;
    }
    let m = Manifest::new(
        "throughput",
        &cfg,
        json!({ "out": path_json(out), "images": images.map(path_json), "arm": arm.name() }),
    );
    if prepare(&cfg, &m, common)? {
        return Ok(());
    }
    let imgs: Vec<RgbImage> = match images {
        Some(dir) => list_images(dir)?
            .iter()
            .map(|f| RgbImage::load(f))
            .collect::<Result<Vec<_>>>()?,
        None => {
            let ds = load_dataset(&cfg)?;
            let mut all = Vec::new();
            for d in &cfg.experiment.train_domains {
                all.extend(ds.samples(d, Split::Train)?.iter().map(|s| s.image.clone()));
            }
            all.truncate(cfg.throughput.images);
            all
        }
    };
    let pipeline = pipeline_for(arm, &cfg)?;
    let report = measure_throughput(&pipeline, &imgs, &cfg.throughput.batch_sizes, cfg.seed)?;
    create_dir(out)?;
    write_json(&out.join("throughput.json"), &report)?;
    for t in &report.timings {
        println!("batch {:>3}: {:.3} ms/image", t.batch_size, t.ms_per_image);
    }
    m.write(&manifest::for_dir(out))
}

fn collect_results(dir: &Path, out: &mut Vec<(PathBuf, ExperimentResult)>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for path in entries {
        if path.is_dir() {
            collect_results(&path, out)?;
        } else if path.extension().is_some_and(|e| e == "json") {
            if let Ok(r) = read_result(&path) {
                out.push((path, r));
            }
        }
    }
    Ok(())
}

fn report_cmd(results: &Path, out: &Path, common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let m = Manifest::new(
        "report",
        &cfg,
        json!({ "results": path_json(results), "out": path_json(out) }),
    );
    if prepare(&cfg, &m, common)? {
        return Ok(());
    }
    let mut found = Vec::new();
    collect_results(results, &mut found)?;
    if found.is_empty() {
        return Err(Error::invalid(format!(
            "no result files under {}",
            results.display()
        )));
    }
    let runs: Vec<ExperimentResult> = found.into_iter().map(|(_, r)| r).collect();
    create_dir(out)?;
    write_aggregate_csv(&out.join("aggregate.csv"), &runs)?;
    let summary = summary_text(&runs);
    write_text(&out.join("summary.txt"), &summary)?;
    write_text(
        &out.join("curves.svg"),
        &curves_svg("Held-out accuracy", &runs),
    )?;
    print!("{summary}");
    m.write(&manifest::for_dir(out))
}
