//! Classifier training runs, grid searches and the color-jitter ablation.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::classifier::{Classifier, ClassifierConfig};
use super::dataset::{Dataset, Split};
use crate::augment::{AlphaPolicy, Pipeline, StyleAugmenter, TraditionalAugmentConfig};
use crate::autograd::Tape;
use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::nn::{Adam, AdamConfig};
use crate::rng::{stream, tag};
use crate::tensor::Tensor;

/// Learning rate from the alternative optimizer setting.
pub const ALT_LEARNING_RATE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub train_domains: Vec<String>,
    /// Held-out domains evaluated during training.
    pub eval_domains: Vec<String>,
    pub iterations: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Evaluation cadence; `iterations / 20` when unset.
    pub eval_every: Option<usize>,
    pub classifier: ClassifierConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            train_domains: vec!["photo".into(), "night".into()],
            eval_domains: vec!["texture".into()],
            iterations: 400,
            batch_size: 32,
            adam: AdamConfig::default(),
            eval_every: None,
            classifier: ClassifierConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn eval_interval(&self) -> usize {
        self.eval_every.unwrap_or(self.iterations / 20).max(1)
    }

    /// Iterations at which the held-out domains are evaluated.
    pub fn eval_points(&self) -> Vec<usize> {
        let k = self.eval_interval();
        let mut pts: Vec<usize> = (0..=self.iterations).step_by(k).collect();
        if pts.last() != Some(&self.iterations) {
            pts.push(self.iterations);
        }
        pts
    }
}

/// Description of the augmentation a run used, kept in its result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentSnapshot {
    pub label: String,
    pub traditional: Option<TraditionalAugmentConfig>,
    pub style_probability: Option<f64>,
    /// `"uniform"` or the fixed value.
    pub style_alpha: Option<String>,
}

impl AugmentSnapshot {
    pub fn new(
        label: &str,
        traditional: Option<&TraditionalAugmentConfig>,
        style: Option<&StyleAugmenter>,
    ) -> Self {
        AugmentSnapshot {
            label: label.to_string(),
            traditional: traditional.cloned(),
            style_probability: style.map(|s| s.probability()),
            style_alpha: style.map(|s| match s.alpha_policy() {
                AlphaPolicy::Fixed(a) => format!("{a}"),
                AlphaPolicy::Uniform => "uniform".into(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub accuracy: f64,
}

/// Wall-clock measurements; kept out of the result file so results are
/// reproducible byte for byte.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Timing {
    pub augment_ms_per_image: f64,
    pub train_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub seed: u64,
    pub config: ExperimentConfig,
    pub augmentation: AugmentSnapshot,
    /// Held-out accuracy at each evaluation point.
    pub curve: Vec<CurvePoint>,
    /// Final test accuracy of every domain.
    pub final_accuracy: BTreeMap<String, f64>,
    /// Mean final accuracy over the held-out domains.
    pub held_out_accuracy: f64,
    #[serde(skip)]
    pub timing: Timing,
}

struct EvalSet<'a> {
    images: Vec<&'a RgbImage>,
    labels: Vec<usize>,
}

fn eval_set<'a>(dataset: &'a Dataset, domains: &[String]) -> Result<EvalSet<'a>> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for d in domains {
        for s in dataset.samples(d, Split::Test)? {
            images.push(&s.image);
            labels.push(s.label);
        }
    }
    Ok(EvalSet { images, labels })
}

/// Trains the desk classifier on `config.train_domains` with `pipeline`
/// applied to every batch, evaluating the held-out domains on the way.
/// The initialization and batch order depend only on `seed`, so runs with
/// different pipelines differ only through augmentation.
pub fn train_classifier(
    dataset: &Dataset,
    config: &ExperimentConfig,
    pipeline: &Pipeline,
    augmentation: AugmentSnapshot,
    seed: u64,
) -> Result<ExperimentResult> {
    if config.train_domains.is_empty() || config.eval_domains.is_empty() {
        return Err(Error::invalid(
            "need at least one training and one held-out domain",
        ));
    }
    if let Some(d) = config
        .eval_domains
        .iter()
        .find(|d| config.train_domains.contains(d))
    {
        return Err(Error::invalid(format!(
            "domain `{d}` is both trained on and held out"
        )));
    }
    if config.batch_size == 0 {
        return Err(Error::invalid("batch_size must be >= 1"));
    }
    let mut pool: Vec<(u64, &RgbImage, usize)> = Vec::new();
    for (di, d) in config.train_domains.iter().enumerate() {
        for (i, s) in dataset.samples(d, Split::Train)?.iter().enumerate() {
            pool.push((((di as u64) << 32) | i as u64, &s.image, s.label));
        }
    }
    if pool.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let held_out = eval_set(dataset, &config.eval_domains)?;
    if held_out.images.is_empty() {
        return Err(Error::invalid("held-out test set is empty"));
    }

    let mut model = Classifier::init(
        config.classifier.clone(),
        dataset.num_classes(),
        &mut stream(seed, tag("classifier-init")),
    )?;
    let mut opt = Adam::new(config.adam);
    let mut batch_rng = stream(seed, tag("batches"));
    let mut aug_rng = stream(seed, tag("augment"));
    let eval_points = config.eval_points();
    let mut curve = Vec::with_capacity(eval_points.len());
    let mut order: Vec<usize> = Vec::new();
    let mut aug_seconds = 0.0;
    let mut aug_images = 0usize;
    let started = Instant::now();

    for it in 0..=config.iterations {
        if eval_points.contains(&it) {
            curve.push(CurvePoint {
                iteration: it,
                accuracy: model.accuracy(&held_out.images, &held_out.labels)?,
            });
        }
        if it == config.iterations {
            break;
        }
        let mut batch = Vec::with_capacity(config.batch_size);
        while batch.len() < config.batch_size {
            if order.is_empty() {
                order = (0..pool.len()).collect();
                order.shuffle(&mut batch_rng);
            }
            batch.push(order.pop().expect("non-empty"));
        }
        let images: Vec<&RgbImage> = batch.iter().map(|&i| pool[i].1).collect();
        let keys: Vec<Option<u64>> = batch.iter().map(|&i| Some(pool[i].0)).collect();
        let labels: Vec<usize> = batch.iter().map(|&i| pool[i].2).collect();
        let t0 = Instant::now();
        let augmented = pipeline.apply_batch(&images, &keys, &mut aug_rng)?;
        aug_seconds += t0.elapsed().as_secs_f64();
        aug_images += images.len();

        let refs: Vec<&RgbImage> = augmented.iter().collect();
        let x: Tensor = RgbImage::batch_to_tensor(&refs)?;
        let tape = Tape::new();
        let bound = model.params().bind(&tape, true);
        let xv = tape.constant(x);
        let logits = model.forward(&tape, &bound, xv);
        let loss = tape.cross_entropy(logits, &labels);
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::numeric(format!(
                "non-finite classifier loss at iteration {it}"
            )));
        }
        let mut grads = tape.backward(loss);
        let g = model.params().gradients(&bound, &mut grads);
        drop(tape);
        opt.step(model.params_mut(), &g);
    }

    let mut final_accuracy = BTreeMap::new();
    for d in &dataset.spec.domains {
        let set = eval_set(dataset, std::slice::from_ref(d))?;
        final_accuracy.insert(d.clone(), model.accuracy(&set.images, &set.labels)?);
    }
    let held_out_accuracy = config
        .eval_domains
        .iter()
        .map(|d| final_accuracy[d])
        .sum::<f64>()
        / config.eval_domains.len() as f64;
    Ok(ExperimentResult {
        seed,
        config: config.clone(),
        augmentation,
        curve,
        final_accuracy,
        held_out_accuracy,
        timing: Timing {
            augment_ms_per_image: if aug_images > 0 {
                1e3 * aug_seconds / aug_images as f64
            } else {
                0.0
            },
            train_seconds: started.elapsed().as_secs_f64(),
        },
    })
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSearchSpec {
    pub probabilities: Vec<f64>,
    pub alphas: Vec<f64>,
    pub repetitions: usize,
}

impl Default for GridSearchSpec {
    fn default() -> Self {
        GridSearchSpec {
            probabilities: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            alphas: vec![0.5],
            repetitions: 2,
        }
    }
}

impl GridSearchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.probabilities.is_empty() || self.alphas.is_empty() || self.repetitions == 0 {
            return Err(Error::invalid(
                "grid search needs probabilities, alphas and repetitions >= 1",
            ));
        }
        if let Some(p) = self
            .probabilities
            .iter()
            .find(|p| !(0.0..=1.0).contains(*p))
        {
            return Err(Error::invalid(format!("probability {p} outside [0, 1]")));
        }
        if let Some(a) = self.alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::invalid(format!("alpha {a} outside [0, 1]")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub label: String,
    pub probability: Option<f64>,
    pub alpha: Option<f64>,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl CellSummary {
    pub fn from_runs(
        label: &str,
        probability: Option<f64>,
        alpha: Option<f64>,
        runs: &[&ExperimentResult],
    ) -> Self {
        let accuracies: Vec<f64> = runs.iter().map(|r| r.held_out_accuracy).collect();
        let (mean, std) = mean_std(&accuracies);
        CellSummary {
            label: label.to_string(),
            probability,
            alpha,
            accuracies,
            mean,
            std,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub cells: Vec<CellSummary>,
    pub baseline: Option<CellSummary>,
    pub runs: Vec<ExperimentResult>,
}

/// Seed of repetition `rep` for a base seed.
pub fn repetition_seed(base: u64, rep: usize) -> u64 {
    base + rep as u64
}

/// Trains one classifier per cell and repetition. Repetition `r` of every
/// cell uses seed `base_seed + r`; with `baseline`, an unaugmented run per
/// repetition is added as the reference line.
pub fn grid_search(
    spec: &GridSearchSpec,
    dataset: &Dataset,
    config: &ExperimentConfig,
    style: &StyleAugmenter,
    base_seed: u64,
    baseline: bool,
) -> Result<GridReport> {
    spec.validate()?;
    let mut cells = Vec::new();
    let mut runs = Vec::new();
    for &p in &spec.probabilities {
        for &alpha in &spec.alphas {
            let aug = style.with_policy(p, AlphaPolicy::Fixed(alpha))?;
            let snapshot = AugmentSnapshot::new(&format!("p={p},alpha={alpha}"), None, Some(&aug));
            let pipeline = Pipeline::style_only(aug);
            let mut cell_runs = Vec::new();
            for rep in 0..spec.repetitions {
                let r = train_classifier(
                    dataset,
                    config,
                    &pipeline,
                    snapshot.clone(),
                    repetition_seed(base_seed, rep),
                )
                .map_err(|e| {
                    e.context(&format!("grid cell p={p}, alpha={alpha}, repetition {rep}"))
                })?;
                cell_runs.push(r);
            }
            let refs: Vec<&ExperimentResult> = cell_runs.iter().collect();
            cells.push(CellSummary::from_runs(
                &snapshot.label,
                Some(p),
                Some(alpha),
                &refs,
            ));
            runs.extend(cell_runs);
        }
    }
    let baseline = if baseline {
        let snapshot = AugmentSnapshot::new("none", None, None);
        let mut base_runs = Vec::new();
        for rep in 0..spec.repetitions {
            base_runs.push(
                train_classifier(
                    dataset,
                    config,
                    &Pipeline::identity(),
                    snapshot.clone(),
                    repetition_seed(base_seed, rep),
                )
                .map_err(|e| e.context(&format!("baseline repetition {rep}")))?,
            );
        }
        let refs: Vec<&ExperimentResult> = base_runs.iter().collect();
        let summary = CellSummary::from_runs("none", None, None, &refs);
        runs.extend(base_runs);
        Some(summary)
    } else {
        None
    };
    Ok(GridReport {
        cells,
        baseline,
        runs,
    })
}

/// One train/held-out split of the ablation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldOutConfiguration {
    pub train_domains: Vec<String>,
    pub eval_domains: Vec<String>,
}

impl HeldOutConfiguration {
    pub fn name(&self) -> String {
        format!(
            "{} -> {}",
            self.train_domains.join("+"),
            self.eval_domains.join("+")
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    /// `"approach"` followed by one column per held-out configuration.
    pub columns: Vec<String>,
    /// Rows `none`, `color_jitter`, `style`: mean held-out accuracy per column.
    pub rows: Vec<(String, Vec<f64>)>,
    pub runs: Vec<ExperimentResult>,
}

impl AblationTable {
    pub fn row(&self, name: &str) -> Option<&[f64]> {
        self.rows
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }
}

/// Compares no augmentation, color jitter alone and style augmentation.
pub fn ablate_color_jitter(
    dataset: &Dataset,
    config: &ExperimentConfig,
    configurations: &[HeldOutConfiguration],
    style: &StyleAugmenter,
    seeds: &[u64],
) -> Result<AblationTable> {
    if configurations.is_empty() || seeds.is_empty() {
        return Err(Error::invalid(
            "ablation needs at least one configuration and one seed",
        ));
    }
    let jitter = TraditionalAugmentConfig::color_jitter_only();
    let style = Arc::new(style.with_policy(style.probability(), style.alpha_policy())?);
    let arms: [(&str, Pipeline, AugmentSnapshot); 3] = [
        (
            "none",
            Pipeline::identity(),
            AugmentSnapshot::new("none", None, None),
        ),
        (
            "color_jitter",
            Pipeline::traditional_only(jitter.clone())?,
            AugmentSnapshot::new("color_jitter", Some(&jitter), None),
        ),
        (
            "style",
            Pipeline::style_only_shared(Arc::clone(&style)),
            AugmentSnapshot::new("style", None, Some(&style)),
        ),
    ];
    let mut rows: Vec<(String, Vec<f64>)> = arms
        .iter()
        .map(|(n, _, _)| (n.to_string(), Vec::new()))
        .collect();
    let mut runs = Vec::new();
    for hc in configurations {
        let cfg = ExperimentConfig {
            train_domains: hc.train_domains.clone(),
            eval_domains: hc.eval_domains.clone(),
            ..config.clone()
        };
        for (row, (name, pipeline, snapshot)) in rows.iter_mut().zip(&arms) {
            let mut accs = Vec::new();
            for &seed in seeds {
                let r = train_classifier(dataset, &cfg, pipeline, snapshot.clone(), seed)
                    .map_err(|e| e.context(&format!("ablation row {name}, {}", hc.name())))?;
                accs.push(r.held_out_accuracy);
                runs.push(r);
            }
            row.1.push(mean_std(&accs).0);
        }
    }
    let mut columns = vec!["approach".to_string()];
    columns.extend(configurations.iter().map(HeldOutConfiguration::name));
    Ok(AblationTable {
        columns,
        rows,
        runs,
    })
}
