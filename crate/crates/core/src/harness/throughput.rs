//! Per-image augmentation latency.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::augment::Pipeline;
use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::rng::stream;

pub const MIN_IMAGES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchTiming {
    pub batch_size: usize,
    pub images: usize,
    pub ms_per_image: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub hardware: String,
    pub timings: Vec<BatchTiming>,
}

impl ThroughputReport {
    pub fn ms_per_image(&self, batch_size: usize) -> Option<f64> {
        self.timings
            .iter()
            .find(|t| t.batch_size == batch_size)
            .map(|t| t.ms_per_image)
    }
}

/// CPU model and logical core count, best effort.
pub fn hardware_descriptor() -> String {
    let model = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| std::env::consts::ARCH.to_string());
    let cores = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    format!("{model}, {cores} logical cores, {}", std::env::consts::OS)
}

/// Mean per-image latency of `pipeline` for each batch size. The first
/// batch of every size is a warmup and is not timed.
pub fn measure_throughput(
    pipeline: &Pipeline,
    images: &[RgbImage],
    batch_sizes: &[usize],
    seed: u64,
) -> Result<ThroughputReport> {
    if images.len() < MIN_IMAGES {
        return Err(Error::invalid(format!(
            "need at least {MIN_IMAGES} images, got {}",
            images.len()
        )));
    }
    if batch_sizes.is_empty() || batch_sizes.contains(&0) {
        return Err(Error::invalid("batch sizes must be non-empty and positive"));
    }
    let mut timings = Vec::with_capacity(batch_sizes.len());
    for &bs in batch_sizes {
        let mut rng = stream(seed, bs as u64);
        let refs: Vec<&RgbImage> = images.iter().collect();
        let keys = vec![None; bs];
        let warm: Vec<&RgbImage> = refs.iter().cycle().take(bs).copied().collect();
        pipeline.apply_batch(&warm, &keys, &mut rng)?;
        let mut timed = 0usize;
        let mut seconds = 0.0;
        for chunk in refs.chunks(bs).filter(|c| c.len() == bs) {
            let t0 = Instant::now();
            let out = pipeline.apply_batch(chunk, &keys, &mut rng)?;
            seconds += t0.elapsed().as_secs_f64();
            std::hint::black_box(out);
            timed += bs;
        }
        if timed == 0 {
            return Err(Error::invalid(format!(
                "batch size {bs} exceeds the {} images",
                images.len()
            )));
        }
        timings.push(BatchTiming {
            batch_size: bs,
            images: timed,
            ms_per_image: 1e3 * seconds / timed as f64,
        });
    }
    Ok(ThroughputReport {
        hardware: hardware_descriptor(),
        timings,
    })
}
