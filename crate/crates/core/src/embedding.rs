//! Style embeddings and the multivariate normal they are sampled from.
//!
//! A fitted [`EmbeddingDistribution`] is all that is needed at augmentation
//! time; the style corpus it came from can be discarded.
//!
//! On disk:
//! - `<name>.embdist`: little-endian `f32`, `mean[D]` then `covariance[D*D]`
//!   row-major; `<name>.embdist.json` holds `{dim, count, jitter, created}`.
//! - embedding corpus: little-endian `f32`, row-major `N x D`; the header
//!   `<file>.json` holds `{dim, count, sources}`.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_DIM: usize = 100;

/// Relative jitter used by [`fit_with_default_jitter`].
pub const DEFAULT_RELATIVE_JITTER: f64 = 1e-5;

/// A style embedding `z`: finite values of the configured dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleEmbedding(Vec<f32>);

impl StyleEmbedding {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid(
                "style embedding must have at least one entry",
            ));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "style embedding entry {i} is not finite"
            )));
        }
        Ok(StyleEmbedding(values))
    }

    pub fn zeros(dim: usize) -> Self {
        StyleEmbedding(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn l2_distance(&self, other: &StyleEmbedding) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| ((a - b) as f64).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Multivariate normal over style embeddings with a cached Cholesky factor
/// of `covariance + jitter * I`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDistribution {
    mean: Vec<f64>,
    covariance: Vec<f64>,
    chol: Vec<f64>,
    jitter: f64,
    count: usize,
}

impl EmbeddingDistribution {
    pub fn from_moments(
        mean: Vec<f64>,
        covariance: Vec<f64>,
        jitter: f64,
        count: usize,
    ) -> Result<Self> {
        let d = mean.len();
        if d == 0 || covariance.len() != d * d {
            return Err(Error::invalid(format!(
                "covariance has {} entries for dimension {d}",
                covariance.len()
            )));
        }
        if !(jitter >= 0.0) || !jitter.is_finite() {
            return Err(Error::invalid(format!(
                "jitter must be finite and >= 0, got {jitter}"
            )));
        }
        if mean.iter().chain(&covariance).any(|v| !v.is_finite()) {
            return Err(Error::numeric("mean or covariance has non-finite entries"));
        }
        let mut shifted = covariance.clone();
        for i in 0..d {
            shifted[i * d + i] += jitter;
        }
        let chol = cholesky_psd(&shifted, d).map_err(|pivot| {
            Error::numeric(format!(
                "covariance + {jitter:e} * I is not positive semi-definite (pivot {pivot}); retry with a larger jitter"
            ))
        })?;
        Ok(EmbeddingDistribution {
            mean,
            covariance,
            chol,
            jitter,
            count,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Row-major `D x D`.
    pub fn covariance(&self) -> &[f64] {
        &self.covariance
    }

    /// Row-major lower-triangular `D x D`.
    pub fn chol(&self) -> &[f64] {
        &self.chol
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Number of embeddings the distribution was fitted on.
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn save(&self, path: &Path, created: &str) -> Result<()> {
        let mut bytes = Vec::with_capacity(4 * (self.dim() + self.covariance.len()));
        for v in self.mean.iter().chain(&self.covariance) {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        create_parent(path)?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
        let manifest = DistributionManifest {
            dim: self.dim(),
            count: self.count,
            jitter: self.jitter,
            created: created.to_string(),
        };
        write_json(&sidecar(path), &manifest)
    }

    /// Loads a saved distribution; the Cholesky factor is recomputed from
    /// the stored covariance.
    pub fn load(path: &Path) -> Result<Self> {
        let manifest: DistributionManifest = read_json(&sidecar(path))?;
        let values = read_f32(path)?;
        let d = manifest.dim;
        if values.len() != d + d * d {
            return Err(Error::format(
                path,
                format!(
                    "dim {d} needs {} values, file has {}",
                    d + d * d,
                    values.len()
                ),
            ));
        }
        let (mean, cov) = values.split_at(d);
        Self::from_moments(
            mean.iter().map(|&v| v as f64).collect(),
            cov.iter().map(|&v| v as f64).collect(),
            manifest.jitter,
            manifest.count,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionManifest {
    pub dim: usize,
    pub count: usize,
    pub jitter: f64,
    pub created: String,
}

/// `<path>.json`.
pub fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
}

fn read_f32(path: &Path) -> Result<Vec<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::format(
            path,
            format!("{} bytes is not a whole number of f32", bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

/// Cholesky factorization that tolerates positive semi-definite input:
/// a (numerically) zero pivot yields a zero column instead of failing.
/// Returns the failing pivot index for indefinite matrices.
fn cholesky_psd(a: &[f64], d: usize) -> std::result::Result<Vec<f64>, usize> {
    let scale = (0..d).map(|i| a[i * d + i].abs()).fold(0.0, f64::max);
    let tol = 1e-10 * scale.max(f64::MIN_POSITIVE);
    let mut l = vec![0.0; d * d];
    for j in 0..d {
        let mut pivot = a[j * d + j];
        for k in 0..j {
            pivot -= l[j * d + k] * l[j * d + k];
        }
        if pivot > tol {
            let root = pivot.sqrt();
            l[j * d + j] = root;
            for i in j + 1..d {
                let mut s = a[i * d + j];
                for k in 0..j {
                    s -= l[i * d + k] * l[j * d + k];
                }
                l[i * d + j] = s / root;
            }
        } else if pivot >= -tol {
            // Singular direction: the rest of the column must vanish too.
            for i in j + 1..d {
                let mut s = a[i * d + j];
                for k in 0..j {
                    s -= l[i * d + k] * l[j * d + k];
                }
                if s.abs() > 1e-6 * scale.max(f64::MIN_POSITIVE) {
                    return Err(j);
                }
            }
        } else {
            return Err(j);
        }
    }
    Ok(l)
}

fn moments(embeddings: &[StyleEmbedding]) -> Result<(Vec<f64>, Vec<f64>)> {
    let first = embeddings
        .first()
        .ok_or_else(|| Error::invalid("cannot fit a distribution to zero embeddings"))?;
    let d = first.dim();
    if let Some(i) = embeddings.iter().position(|e| e.dim() != d) {
        return Err(Error::invalid(format!(
            "embedding {i} has dimension {}, expected {d}",
            embeddings[i].dim()
        )));
    }
    let n = embeddings.len();
    let mut mean = vec![0.0; d];
    for e in embeddings {
        for (m, &v) in mean.iter_mut().zip(e.values()) {
            *m += v as f64;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = vec![0.0; d * d];
    if n >= 2 {
        let mut centered = vec![0.0; d];
        for e in embeddings {
            for ((c, &v), m) in centered.iter_mut().zip(e.values()).zip(&mean) {
                *c = v as f64 - m;
            }
            for i in 0..d {
                for j in i..d {
                    cov[i * d + j] += centered[i] * centered[j];
                }
            }
        }
        let denom = (n - 1) as f64;
        for i in 0..d {
            for j in i..d {
                let v = cov[i * d + j] / denom;
                cov[i * d + j] = v;
                cov[j * d + i] = v;
            }
        }
    }
    Ok((mean, cov))
}

/// Empirical mean and unbiased (`N - 1`) sample covariance; a single
/// embedding gives a zero covariance. `jitter` is added to the diagonal
/// before factorization.
pub fn fit_embedding_distribution(
    embeddings: &[StyleEmbedding],
    jitter: f64,
) -> Result<EmbeddingDistribution> {
    if !(jitter >= 0.0) {
        return Err(Error::invalid(format!("jitter must be >= 0, got {jitter}")));
    }
    let (mean, cov) = moments(embeddings)?;
    EmbeddingDistribution::from_moments(mean, cov, jitter, embeddings.len())
}

/// `DEFAULT_RELATIVE_JITTER * mean(diag(covariance))`.
pub fn default_jitter(embeddings: &[StyleEmbedding]) -> Result<f64> {
    let (mean, cov) = moments(embeddings)?;
    let d = mean.len();
    let avg_diag = (0..d).map(|i| cov[i * d + i]).sum::<f64>() / d as f64;
    Ok(DEFAULT_RELATIVE_JITTER * avg_diag)
}

pub fn fit_with_default_jitter(embeddings: &[StyleEmbedding]) -> Result<EmbeddingDistribution> {
    fit_embedding_distribution(embeddings, default_jitter(embeddings)?)
}

/// `mean + chol * eps` with `eps` standard normal drawn from `rng`.
pub fn sample_style_embedding<R: Rng + ?Sized>(
    dist: &EmbeddingDistribution,
    rng: &mut R,
) -> StyleEmbedding {
    let d = dist.dim();
    let eps: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let values = (0..d)
        .map(|i| {
            let row = &dist.chol[i * d..i * d + i + 1];
            let offset: f64 = row.iter().zip(&eps).map(|(l, e)| l * e).sum();
            (dist.mean[i] + offset) as f32
        })
        .collect();
    StyleEmbedding(values)
}

/// `alpha * z_rand + (1 - alpha) * z_content`.
pub fn interpolate_embedding(
    z_rand: &StyleEmbedding,
    z_content: &StyleEmbedding,
    alpha: f64,
) -> Result<StyleEmbedding> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )));
    }
    if z_rand.dim() != z_content.dim() {
        return Err(Error::invalid(format!(
            "cannot interpolate embeddings of dimension {} and {}",
            z_rand.dim(),
            z_content.dim()
        )));
    }
    let a = alpha as f32;
    let values = z_rand
        .values()
        .iter()
        .zip(z_content.values())
        .map(|(&r, &c)| a * r + (1.0 - a) * c)
        .collect();
    Ok(StyleEmbedding(values))
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(dir) => std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        None => Ok(()),
    }
}

/// A set of embeddings, row-major `N x D`, with the files they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingCorpus {
    pub embeddings: Vec<StyleEmbedding>,
    pub sources: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusHeader {
    pub dim: usize,
    pub count: usize,
    pub dtype: String,
    pub sources: Vec<String>,
}

impl EmbeddingCorpus {
    pub fn dim(&self) -> usize {
        self.embeddings.first().map_or(0, StyleEmbedding::dim)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let d = self.dim();
        if self.embeddings.iter().any(|e| e.dim() != d) {
            return Err(Error::invalid("corpus mixes embedding dimensions"));
        }
        create_parent(path)?;
        let mut bytes = Vec::with_capacity(4 * d * self.embeddings.len());
        for v in self.embeddings.iter().flat_map(|e| e.values()) {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
        let header = CorpusHeader {
            dim: d,
            count: self.embeddings.len(),
            dtype: "f32".into(),
            sources: self.sources.clone(),
        };
        write_json(&sidecar(path), &header)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let header: CorpusHeader = read_json(&sidecar(path))?;
        if header.dtype != "f32" {
            return Err(Error::format(
                path,
                format!("unsupported dtype `{}`", header.dtype),
            ));
        }
        let values = read_f32(path)?;
        if header.dim == 0 || values.len() != header.dim * header.count {
            return Err(Error::format(
                path,
                format!(
                    "header says {}x{}, file has {} values",
                    header.count,
                    header.dim,
                    values.len()
                ),
            ));
        }
        let embeddings = values
            .chunks_exact(header.dim)
            .map(|row| StyleEmbedding::new(row.to_vec()))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::format(path, e.to_string()))?;
        Ok(EmbeddingCorpus {
            embeddings,
            sources: header.sources,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn emb(v: &[f32]) -> StyleEmbedding {
        StyleEmbedding::new(v.to_vec()).unwrap()
    }

    #[test]
    fn identical_samples_have_zero_covariance_and_jitter_factor() {
        let v = emb(&[0.5, -1.0, 2.0]);
        let dist = fit_embedding_distribution(&[v.clone(), v.clone()], 1e-5).unwrap();
        assert_eq!(dist.mean(), &[0.5, -1.0, 2.0]);
        assert!(dist.covariance().iter().all(|&c| c == 0.0));
        let r = 1e-5f64.sqrt();
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { r } else { 0.0 };
                assert!((dist.chol()[i * 3 + j] - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn three_point_fit_matches_hand_computation() {
        // Points (0,0), (2,0), (0,2): mean (2/3, 2/3).
        // Centered: (-2/3,-2/3), (4/3,-2/3), (-2/3,4/3).
        // Sxx = 4/9 + 16/9 + 4/9 = 24/9, Sxy = 4/9 - 8/9 - 8/9 = -12/9.
        // Divide by N-1 = 2: var = 4/3, cov = -2/3.
        let pts = [emb(&[0.0, 0.0]), emb(&[2.0, 0.0]), emb(&[0.0, 2.0])];
        let dist = fit_embedding_distribution(&pts, 0.0).unwrap();
        let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
        assert!(close(dist.mean()[0], 2.0 / 3.0) && close(dist.mean()[1], 2.0 / 3.0));
        let expected = [4.0 / 3.0, -2.0 / 3.0, -2.0 / 3.0, 4.0 / 3.0];
        for (a, b) in dist.covariance().iter().zip(expected) {
            assert!(close(*a, b), "{a} vs {b}");
        }
    }

    #[test]
    fn empty_or_ragged_input_is_invalid() {
        assert!(fit_embedding_distribution(&[], 1e-5)
            .unwrap_err()
            .is_validation());
        let ragged = [emb(&[1.0, 2.0]), emb(&[1.0])];
        assert!(fit_embedding_distribution(&ragged, 1e-5)
            .unwrap_err()
            .is_validation());
        assert!(fit_embedding_distribution(&[emb(&[1.0])], -1.0).is_err());
    }

    #[test]
    fn indefinite_covariance_reports_numeric_error() {
        let err =
            EmbeddingDistribution::from_moments(vec![0.0, 0.0], vec![1.0, 2.0, 2.0, 1.0], 0.0, 2)
                .unwrap_err();
        assert!(
            matches!(err, Error::Numeric(ref m) if m.contains("larger jitter")),
            "{err}"
        );
    }

    #[test]
    fn degenerate_distribution_samples_its_mean() {
        let dist = fit_embedding_distribution(&[emb(&[1.5, -0.25])], 0.0).unwrap();
        let mut rng = stream(3, 0);
        for _ in 0..5 {
            assert_eq!(
                sample_style_embedding(&dist, &mut rng).values(),
                &[1.5, -0.25]
            );
        }
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let pts = [emb(&[0.0, 0.0]), emb(&[2.0, 0.0]), emb(&[0.0, 2.0])];
        let dist = fit_embedding_distribution(&pts, 0.0).unwrap();
        let a = sample_style_embedding(&dist, &mut stream(11, 0));
        let b = sample_style_embedding(&dist, &mut stream(11, 0));
        assert_eq!(a, b);
    }

    #[test]
    fn interpolation_endpoints_and_midpoint() {
        let ones = emb(&[1.0; 4]);
        let zeros = emb(&[0.0; 4]);
        assert_eq!(interpolate_embedding(&ones, &zeros, 0.0).unwrap(), zeros);
        assert_eq!(interpolate_embedding(&ones, &zeros, 1.0).unwrap(), ones);
        assert_eq!(
            interpolate_embedding(&ones, &zeros, 0.5).unwrap().values(),
            &[0.5; 4]
        );
        assert!(interpolate_embedding(&ones, &zeros, 1.01)
            .unwrap_err()
            .is_validation());
        assert!(interpolate_embedding(&ones, &zeros, -0.1).is_err());
        assert!(interpolate_embedding(&ones, &emb(&[0.0; 3]), 0.5).is_err());
    }

    #[test]
    fn non_finite_embedding_is_rejected() {
        assert!(StyleEmbedding::new(vec![1.0, f32::NAN]).is_err());
    }

    #[test]
    fn distribution_and_corpus_files_round_trip() {
        let d = tempfile::tempdir().unwrap();
        let pts = vec![emb(&[0.25, 0.5]), emb(&[2.0, 0.0]), emb(&[0.0, 2.0])];
        let dist = fit_embedding_distribution(&pts, 1e-5).unwrap();
        let p = d.path().join("s.embdist");
        dist.save(&p, "1970-01-01T00:00:00Z").unwrap();
        let back = EmbeddingDistribution::load(&p).unwrap();
        assert_eq!(back.dim(), 2);
        assert_eq!(back.count(), 3);
        for (a, b) in back.covariance().iter().zip(dist.covariance()) {
            assert!((a - b).abs() < 1e-6);
        }
        let manifest: serde_json::Value =
            serde_json::from_slice(&std::fs::read(sidecar(&p)).unwrap()).unwrap();
        assert_eq!(manifest["dim"], 2);
        assert_eq!(manifest["count"], 3);

        let corpus = EmbeddingCorpus {
            embeddings: pts,
            sources: vec!["a.png".into(), "b.png".into(), "c.png".into()],
        };
        let cp = d.path().join("e.bin");
        corpus.save(&cp).unwrap();
        assert_eq!(std::fs::metadata(&cp).unwrap().len(), 3 * 2 * 4);
        assert_eq!(EmbeddingCorpus::load(&cp).unwrap(), corpus);
    }
}
