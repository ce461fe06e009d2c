//! Class-conditional Gaussians with one shared covariance, and the
//! Mahalanobis (MD) and relative-Mahalanobis (RMD) OOD scores built on them.
//!
//! Scores follow the "higher is more in-distribution" convention:
//! `MD score = -min_c MD_c(z)` and `RMD score = -min_c [MD_c(z) - MD_global(z)]`.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{cholesky, CholeskyFactor, CompensatedSum, Matrix};

/// Shrinkage multipliers tried in order; each is scaled by `trace(Σ)/p`.
pub const SHRINKAGE_LADDER: [f64; 5] = [0.0, 1e-10, 1e-8, 1e-6, 1e-4];

/// Embeddings with per-row labels. `None` marks an OOD row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub features: Matrix,
    pub labels: Vec<Option<usize>>,
    pub class_count: usize,
    pub source_tag: String,
}

impl FeatureSet {
    pub fn new(
        features: Matrix,
        labels: Vec<Option<usize>>,
        class_count: usize,
        source_tag: impl Into<String>,
    ) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::LengthMismatch {
                left: features.rows(),
                right: labels.len(),
            });
        }
        if features.rows() == 0 {
            return Err(Error::EmptyInput);
        }
        for &l in labels.iter().flatten() {
            if l >= class_count {
                return Err(Error::LabelOutOfRange {
                    label: l,
                    class_count,
                });
            }
        }
        Ok(Self {
            features,
            labels,
            class_count,
            source_tag: source_tag.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    pub fn is_ood(&self) -> Vec<bool> {
        self.labels.iter().map(Option::is_none).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> FeatureSet {
        FeatureSet {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
            source_tag: self.source_tag.clone(),
        }
    }
}

/// Covariance used by the background Gaussian in RMD.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackgroundCovariance {
    /// `N(μ_global, Σ)` with the shared within-class covariance.
    #[default]
    Shared,
    /// `N(μ_global, Σ_0)` with `Σ_0` the total covariance around the global mean.
    Separate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub background: BackgroundCovariance,
    /// When false, a non-PD covariance is an error instead of triggering the ladder.
    pub shrinkage: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            background: BackgroundCovariance::Shared,
            shrinkage: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct RegularizedFactor {
    factor: CholeskyFactor,
    lambda: f64,
}

/// The fitted detector.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianOodModel {
    class_means: Vec<Vec<f64>>,
    global_mean: Vec<f64>,
    shared: RegularizedFactor,
    background: Option<RegularizedFactor>,
    class_counts: Vec<usize>,
    feature_dim: usize,
    source_tag: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScoreMethod {
    #[serde(rename = "MD")]
    Md,
    #[serde(rename = "RMD")]
    Rmd,
}

impl fmt::Display for ScoreMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreMethod::Md => "MD",
            ScoreMethod::Rmd => "RMD",
        })
    }
}

impl std::str::FromStr for ScoreMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "md" => Ok(ScoreMethod::Md),
            "rmd" => Ok(ScoreMethod::Rmd),
            other => Err(Error::ConfigInvalid(format!(
                "unknown score method {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub method: ScoreMethod,
    pub scores: Vec<f64>,
    /// `N × C`; `MD_c` for MD, `MD_c - MD_global` for RMD.
    pub per_class_distances: Option<Matrix>,
    /// Argmin class per row, lowest index on ties.
    pub nearest_class: Vec<usize>,
}

/// Class means, class counts, global mean and pooled within-class covariance.
type PooledMoments = (Vec<Vec<f64>>, Vec<usize>, Vec<f64>, Matrix);

fn pooled_moments(train: &FeatureSet) -> Result<PooledMoments> {
    let p = train.dim();
    let c = train.class_count;
    let n = train.len();
    if train.labels.iter().any(Option::is_none) {
        return Err(Error::ContainsOodRows);
    }
    let mut counts = vec![0usize; c];
    for l in train.labels.iter().flatten() {
        counts[*l] += 1;
    }
    if let Some((class, &count)) = counts.iter().enumerate().find(|(_, &k)| k < 2) {
        return Err(Error::EmptyClass { class, count });
    }

    let mut class_sums = vec![vec![CompensatedSum::default(); p]; c];
    let mut global_sum = vec![CompensatedSum::default(); p];
    for (row, label) in train.features.row_iter().zip(&train.labels) {
        let cls = label.expect("checked above");
        for j in 0..p {
            class_sums[cls][j].add(row[j]);
            global_sum[j].add(row[j]);
        }
    }
    let means: Vec<Vec<f64>> = class_sums
        .iter()
        .zip(&counts)
        .map(|(s, &k)| s.iter().map(|v| v.value() / k as f64).collect())
        .collect();
    let global_mean: Vec<f64> = global_sum.iter().map(|v| v.value() / n as f64).collect();

    // lower triangle only, mirrored afterwards
    let mut acc = vec![CompensatedSum::default(); p * (p + 1) / 2];
    let mut centered = vec![0.0; p];
    for (row, label) in train.features.row_iter().zip(&train.labels) {
        let mu = &means[label.expect("checked above")];
        for j in 0..p {
            centered[j] = row[j] - mu[j];
        }
        let mut k = 0;
        for i in 0..p {
            for j in 0..=i {
                acc[k].add(centered[i] * centered[j]);
                k += 1;
            }
        }
    }
    let cov = symmetric_from_packed(&acc, p, n);
    Ok((means, counts, global_mean, cov))
}

fn symmetric_from_packed(acc: &[CompensatedSum], p: usize, n: usize) -> Matrix {
    let mut cov = Matrix::zeros(p, p);
    let mut k = 0;
    for i in 0..p {
        for j in 0..=i {
            let v = acc[k].value() / n as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
            k += 1;
        }
    }
    cov
}

fn total_covariance(train: &FeatureSet, global_mean: &[f64]) -> Matrix {
    let p = train.dim();
    let mut acc = vec![CompensatedSum::default(); p * (p + 1) / 2];
    let mut centered = vec![0.0; p];
    for row in train.features.row_iter() {
        for j in 0..p {
            centered[j] = row[j] - global_mean[j];
        }
        let mut k = 0;
        for i in 0..p {
            for j in 0..=i {
                acc[k].add(centered[i] * centered[j]);
                k += 1;
            }
        }
    }
    symmetric_from_packed(&acc, p, train.len())
}

fn factor_with_shrinkage(cov: &Matrix, allow_shrinkage: bool) -> Result<RegularizedFactor> {
    let p = cov.rows();
    if !allow_shrinkage {
        return Ok(RegularizedFactor {
            factor: cholesky(cov)?,
            lambda: 0.0,
        });
    }
    let mut scale = cov.trace() / p as f64;
    // an all-zero covariance has no scale of its own
    if !(scale > 0.0) {
        scale = 1.0;
    }
    let mut last_err = None;
    for mult in SHRINKAGE_LADDER {
        let lambda = mult * scale;
        let candidate = if lambda == 0.0 {
            cov.clone()
        } else {
            cov.add_diagonal(lambda)
        };
        match cholesky(&candidate) {
            Ok(factor) => return Ok(RegularizedFactor { factor, lambda }),
            Err(e @ Error::NotPositiveDefinite { .. }) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.expect("ladder is non-empty"))
}

/// Fits class means, the pooled covariance (divided by `N`) and the global mean.
pub fn fit_gaussians(train: &FeatureSet) -> Result<GaussianOodModel> {
    fit_gaussians_with(train, &FitOptions::default())
}

pub fn fit_gaussians_with(train: &FeatureSet, options: &FitOptions) -> Result<GaussianOodModel> {
    let (class_means, class_counts, global_mean, cov) = pooled_moments(train)?;
    let shared = factor_with_shrinkage(&cov, options.shrinkage)?;
    let background = match options.background {
        BackgroundCovariance::Shared => None,
        BackgroundCovariance::Separate => Some(factor_with_shrinkage(
            &total_covariance(train, &global_mean),
            options.shrinkage,
        )?),
    };
    Ok(GaussianOodModel {
        class_means,
        global_mean,
        shared,
        background,
        class_counts,
        feature_dim: train.dim(),
        source_tag: train.source_tag.clone(),
    })
}

impl GaussianOodModel {
    pub fn class_count(&self) -> usize {
        self.class_means.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn class_means(&self) -> &[Vec<f64>] {
        &self.class_means
    }

    pub fn global_mean(&self) -> &[f64] {
        &self.global_mean
    }

    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    pub fn shared_cov_factor(&self) -> &CholeskyFactor {
        &self.shared.factor
    }

    pub fn shrinkage_lambda(&self) -> f64 {
        self.shared.lambda
    }

    pub fn background_covariance(&self) -> BackgroundCovariance {
        if self.background.is_some() {
            BackgroundCovariance::Separate
        } else {
            BackgroundCovariance::Shared
        }
    }

    pub fn source_tag(&self) -> &str {
        &self.source_tag
    }

    fn check_dim(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim,
                got: z.len(),
            });
        }
        Ok(())
    }

    fn centered_distance(
        factor: &CholeskyFactor,
        z: &[f64],
        mu: &[f64],
        buf: &mut Vec<f64>,
    ) -> f64 {
        buf.clear();
        buf.extend(z.iter().zip(mu).map(|(a, b)| a - b));
        factor
            .inverse_quadratic_form(buf)
            .expect("dimension checked by caller")
    }

    /// `(z - μ_c)ᵀ (Σ + λI)⁻¹ (z - μ_c)`.
    pub fn mahalanobis(&self, z: &[f64], class: usize) -> Result<f64> {
        self.check_dim(z)?;
        let mu = self.class_means.get(class).ok_or(Error::UnknownClass {
            class,
            class_count: self.class_count(),
        })?;
        Ok(Self::centered_distance(
            &self.shared.factor,
            z,
            mu,
            &mut Vec::new(),
        ))
    }

    /// Distance to the background Gaussian `N(μ_global, ·)`.
    pub fn mahalanobis_global(&self, z: &[f64]) -> Result<f64> {
        self.check_dim(z)?;
        let factor = self.background.as_ref().unwrap_or(&self.shared);
        Ok(Self::centered_distance(
            &factor.factor,
            z,
            &self.global_mean,
            &mut Vec::new(),
        ))
    }

    pub fn class_distances(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(z)?;
        let mut buf = Vec::with_capacity(self.feature_dim);
        Ok(self
            .class_means
            .iter()
            .map(|mu| Self::centered_distance(&self.shared.factor, z, mu, &mut buf))
            .collect())
    }

    pub fn score_md(&self, test: &FeatureSet) -> Result<ScoreVector> {
        self.score(test, ScoreMethod::Md)
    }

    pub fn score_rmd(&self, test: &FeatureSet) -> Result<ScoreVector> {
        self.score(test, ScoreMethod::Rmd)
    }

    pub fn score(&self, test: &FeatureSet, method: ScoreMethod) -> Result<ScoreVector> {
        self.score_matrix(&test.features, method)
    }

    pub fn score_matrix(&self, features: &Matrix, method: ScoreMethod) -> Result<ScoreVector> {
        if features.cols() != self.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim,
                got: features.cols(),
            });
        }
        let n = features.rows();
        let c = self.class_count();
        let mut per_class = Matrix::zeros(n, c);
        let mut scores = Vec::with_capacity(n);
        let mut nearest = Vec::with_capacity(n);
        for (i, z) in features.row_iter().enumerate() {
            let mut d = self.class_distances(z)?;
            if method == ScoreMethod::Rmd {
                let g = self.mahalanobis_global(z)?;
                d.iter_mut().for_each(|v| *v -= g);
            }
            let (best, min) = argmin(&d);
            per_class.row_mut(i).copy_from_slice(&d);
            scores.push(-min);
            nearest.push(best);
        }
        Ok(ScoreVector {
            method,
            scores,
            per_class_distances: Some(per_class),
            nearest_class: nearest,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&ModelFile::from(self))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        file.try_into()
    }
}

/// Lowest index wins on ties.
fn argmin(values: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < values[best] {
            best = i;
        }
    }
    (best, values[best])
}

/// On-disk layout. Factors are stored as their lower triangles row by row.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    source_tag: String,
    class_count: usize,
    feature_dim: usize,
    class_counts: Vec<usize>,
    shrinkage_lambda: f64,
    class_means: Vec<Vec<f64>>,
    global_mean: Vec<f64>,
    cov_factor_lower: Vec<Vec<f64>>,
    background: BackgroundCovariance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    background_lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    background_factor_lower: Option<Vec<Vec<f64>>>,
}

const MODEL_FORMAT: &str = "nearood-gaussian-model/1";

fn packed_lower(f: &CholeskyFactor) -> Vec<Vec<f64>> {
    (0..f.dim())
        .map(|i| f.lower().row(i)[..=i].to_vec())
        .collect()
}

fn unpack_lower(rows: &[Vec<f64>], p: usize) -> Result<CholeskyFactor> {
    if rows.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: rows.len(),
        });
    }
    let mut m = Matrix::zeros(p, p);
    for (i, r) in rows.iter().enumerate() {
        if r.len() != i + 1 {
            return Err(Error::DimensionMismatch {
                expected: i + 1,
                got: r.len(),
            });
        }
        m.row_mut(i)[..=i].copy_from_slice(r);
    }
    let m = Matrix::new(p, p, m.as_slice().to_vec())?;
    CholeskyFactor::from_lower(m)
}

impl From<&GaussianOodModel> for ModelFile {
    fn from(m: &GaussianOodModel) -> Self {
        ModelFile {
            format: MODEL_FORMAT.into(),
            source_tag: m.source_tag.clone(),
            class_count: m.class_count(),
            feature_dim: m.feature_dim,
            class_counts: m.class_counts.clone(),
            shrinkage_lambda: m.shared.lambda,
            class_means: m.class_means.clone(),
            global_mean: m.global_mean.clone(),
            cov_factor_lower: packed_lower(&m.shared.factor),
            background: m.background_covariance(),
            background_lambda: m.background.as_ref().map(|b| b.lambda),
            background_factor_lower: m.background.as_ref().map(|b| packed_lower(&b.factor)),
        }
    }
}

impl TryFrom<ModelFile> for GaussianOodModel {
    type Error = Error;
    fn try_from(f: ModelFile) -> Result<Self> {
        if f.format != MODEL_FORMAT {
            return Err(Error::ConfigInvalid(format!(
                "unsupported model format {:?}",
                f.format
            )));
        }
        let p = f.feature_dim;
        if f.class_means.len() != f.class_count || f.class_counts.len() != f.class_count {
            return Err(Error::DimensionMismatch {
                expected: f.class_count,
                got: f.class_means.len(),
            });
        }
        for mu in f.class_means.iter().chain(std::iter::once(&f.global_mean)) {
            if mu.len() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    got: mu.len(),
                });
            }
            crate::numerics::check_finite(mu, "model mean")?;
        }
        let shared = RegularizedFactor {
            factor: unpack_lower(&f.cov_factor_lower, p)?,
            lambda: f.shrinkage_lambda,
        };
        let background = match f.background {
            BackgroundCovariance::Shared => None,
            BackgroundCovariance::Separate => {
                let rows = f.background_factor_lower.ok_or_else(|| {
                    Error::ConfigInvalid("separate background without its factor".into())
                })?;
                Some(RegularizedFactor {
                    factor: unpack_lower(&rows, p)?,
                    lambda: f.background_lambda.unwrap_or(0.0),
                })
            }
        };
        Ok(GaussianOodModel {
            class_means: f.class_means,
            global_mean: f.global_mean,
            shared,
            background,
            class_counts: f.class_counts,
            feature_dim: p,
            source_tag: f.source_tag,
        })
    }
}
