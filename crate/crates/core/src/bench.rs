//! Synthetic near-OOD benchmark.
//!
//! Every sample is `x = B·b + δ·s_k + η`: a background drawn in a fixed random
//! subspace `B` shared by all classes, one semantic direction `s_k` per class,
//! and isotropic noise. OOD classes get their own semantic directions but the
//! same background process, so they overlap the ID data everywhere except in
//! the semantic subspace.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{gram_schmidt_columns, mix_seed, Matrix, RngState};
use crate::table::Table;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub input_dim: usize,
    pub background_dim: usize,
    pub class_count: usize,
    pub ood_class_count: usize,
    pub samples_per_class: usize,
    pub background_scale: f64,
    pub semantic_separation: f64,
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            input_dim: 32,
            background_dim: 8,
            class_count: 8,
            ood_class_count: 4,
            samples_per_class: 500,
            background_scale: 2.0,
            semantic_separation: 1.5,
            noise_scale: 0.5,
            seed: 0,
        }
    }
}

impl BenchConfig {
    /// One semantic direction per ID and per OOD class.
    pub fn semantic_dim(&self) -> usize {
        self.class_count + self.ood_class_count
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ConfigInvalid(m.to_string()));
        if self.class_count == 0 {
            return bad("class_count must be positive");
        }
        if self.samples_per_class == 0 {
            return bad("samples_per_class must be positive");
        }
        if self.background_dim + self.semantic_dim() > self.input_dim {
            return bad("background_dim + class_count + ood_class_count exceeds input_dim");
        }
        if !(self.semantic_separation > 0.0) || !self.semantic_separation.is_finite() {
            return bad("semantic_separation must be positive");
        }
        if !(self.background_scale >= 0.0) || !self.background_scale.is_finite() {
            return bad("background_scale must be non-negative");
        }
        if !(self.noise_scale >= 0.0) || !self.noise_scale.is_finite() {
            return bad("noise_scale must be non-negative");
        }
        Ok(())
    }

    fn to_meta(&self) -> Vec<(String, String)> {
        vec![
            ("background_dim".into(), self.background_dim.to_string()),
            ("ood_classes".into(), self.ood_class_count.to_string()),
            (
                "samples_per_class".into(),
                self.samples_per_class.to_string(),
            ),
            ("background_scale".into(), self.background_scale.to_string()),
            (
                "semantic_separation".into(),
                self.semantic_separation.to_string(),
            ),
            ("noise_scale".into(), self.noise_scale.to_string()),
            ("seed".into(), self.seed.to_string()),
        ]
    }

    fn from_table(t: &Table) -> Option<Self> {
        fn get<T: std::str::FromStr>(t: &Table, k: &str) -> Option<T> {
            t.meta(k)?.parse().ok()
        }
        Some(Self {
            input_dim: t.values.cols(),
            background_dim: get(t, "background_dim")?,
            class_count: t.class_count,
            ood_class_count: get(t, "ood_classes")?,
            samples_per_class: get(t, "samples_per_class")?,
            background_scale: get(t, "background_scale")?,
            semantic_separation: get(t, "semantic_separation")?,
            noise_scale: get(t, "noise_scale")?,
            seed: get(t, "seed")?,
        })
    }
}

/// The fixed orthonormal frames a config generates from.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    /// `d × dB`
    pub background: Matrix,
    /// `d × (C + ood)`; column `k < C` is ID class `k`, the rest are OOD classes.
    pub semantic: Matrix,
}

/// Draws `B` and `S` jointly orthonormal from the config seed.
pub fn geometry(config: &BenchConfig) -> Result<Geometry> {
    config.validate()?;
    let d = config.input_dim;
    let db = config.background_dim;
    let ds = config.semantic_dim();
    let mut rng = RngState::new(mix_seed(config.seed, 0));
    let frame = gram_schmidt_columns(&rng.normal_matrix(d, db + ds))?;
    let take = |cols: std::ops::Range<usize>| {
        let mut m = Matrix::zeros(d, cols.len());
        for i in 0..d {
            for (jj, j) in cols.clone().enumerate() {
                m[(i, jj)] = frame[(i, j)];
            }
        }
        m
    };
    Ok(Geometry {
        background: take(0..db),
        semantic: take(db..db + ds),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub inputs: Matrix,
    /// `None` marks OOD rows.
    pub labels: Vec<Option<usize>>,
    pub class_count: usize,
    pub config: Option<BenchConfig>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn id_indices(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.labels[i].is_some())
            .collect()
    }

    pub fn ood_indices(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.labels[i].is_none())
            .collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for l in self.labels.iter().flatten() {
            counts[*l] += 1;
        }
        counts
    }

    pub fn to_table(&self) -> Table {
        Table {
            class_count: self.class_count,
            tag: "synthetic".into(),
            meta: self
                .config
                .as_ref()
                .map(BenchConfig::to_meta)
                .unwrap_or_default(),
            labels: self.labels.clone(),
            values: self.inputs.clone(),
        }
    }

    pub fn from_table(t: Table) -> Self {
        let config = BenchConfig::from_table(&t);
        LabeledDataset {
            inputs: t.values,
            labels: t.labels,
            class_count: t.class_count,
            config,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_table().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::from_table(Table::load(path)?))
    }
}

/// Rows are grouped by class: ID classes `0..C`, then the OOD classes.
pub fn generate(config: &BenchConfig) -> Result<LabeledDataset> {
    let geo = geometry(config)?;
    let d = config.input_dim;
    let n = config.samples_per_class;
    let blocks: Vec<Vec<f64>> = (0..config.semantic_dim())
        .into_par_iter()
        .map(|k| {
            let mut rng = RngState::new(mix_seed(config.seed, 1 + k as u64));
            let direction = geo.semantic.column(k);
            let mut block = Vec::with_capacity(n * d);
            let mut b = vec![0.0; config.background_dim];
            for _ in 0..n {
                b.iter_mut()
                    .for_each(|v| *v = config.background_scale * rng.normal());
                for i in 0..d {
                    let background: f64 = geo
                        .background
                        .row(i)
                        .iter()
                        .zip(&b)
                        .map(|(u, v)| u * v)
                        .sum();
                    let x = background
                        + config.semantic_separation * direction[i]
                        + config.noise_scale * rng.normal();
                    block.push(x);
                }
            }
            block
        })
        .collect();
    let labels = (0..config.semantic_dim())
        .flat_map(|k| {
            let label = (k < config.class_count).then_some(k);
            std::iter::repeat_n(label, n)
        })
        .collect();
    let inputs = Matrix::new(config.semantic_dim() * n, d, blocks.concat())?;
    Ok(LabeledDataset {
        inputs,
        labels,
        class_count: config.class_count,
        config: Some(config.clone()),
    })
}

/// Shuffles `0..n` and cuts it into `k` folds whose sizes differ by at most one.
/// Each fold is returned sorted.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || n < k {
        return Err(Error::TooFewSamples { n, k });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    RngState::new(seed).shuffle(&mut idx);
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let mut fold = idx[start..start + size].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += size;
    }
    Ok(folds)
}

/// Train/test row indices of one cross-validation fold over the ID rows only.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Cross-validation splits of a dataset's ID rows. OOD rows never appear.
pub fn id_folds(dataset: &LabeledDataset, k: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    let id = dataset.id_indices();
    let folds = kfold_split(id.len(), k, seed)?;
    Ok((0..k)
        .map(|f| {
            let test: Vec<usize> = folds[f].iter().map(|&i| id[i]).collect();
            let mut train: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|(g, _)| *g != f)
                .flat_map(|(_, fold)| fold.iter().map(|&i| id[i]))
                .collect();
            train.sort_unstable();
            FoldSplit { train, test }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{dot, norm, sub};

    #[test]
    fn noise_free_geometry() {
        let config = BenchConfig {
            background_scale: 0.0,
            noise_scale: 0.0,
            samples_per_class: 3,
            ..BenchConfig::default()
        };
        let ds = generate(&config).unwrap();
        let first: Vec<&[f64]> = (0..config.class_count)
            .map(|c| ds.inputs.row(c * 3))
            .collect();
        for (c, row) in first.iter().enumerate() {
            assert!((norm(row) - 1.5).abs() < 1e-12);
            assert_eq!(ds.inputs.row(c * 3 + 1), *row);
            for other in &first[..c] {
                assert!((norm(&sub(row, other)) - 1.5 * 2f64.sqrt()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn layout_and_determinism() {
        let config = BenchConfig {
            samples_per_class: 20,
            seed: 5,
            ..BenchConfig::default()
        };
        let a = generate(&config).unwrap();
        let b = generate(&config).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 12 * 20);
        assert_eq!(a.class_counts(), vec![20; 8]);
        assert_eq!(a.ood_indices().len(), 80);
        let c = generate(&BenchConfig { seed: 6, ..config }).unwrap();
        assert_ne!(a.inputs, c.inputs);
    }

    #[test]
    fn frames_are_jointly_orthonormal() {
        let geo = geometry(&BenchConfig::default()).unwrap();
        let mut cols: Vec<Vec<f64>> = (0..8).map(|j| geo.background.column(j)).collect();
        cols.extend((0..12).map(|j| geo.semantic.column(j)));
        for (i, a) in cols.iter().enumerate() {
            for (j, b) in cols.iter().enumerate() {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((dot(a, b) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn class_means_follow_law_of_large_numbers() {
        let config = BenchConfig::default();
        let ds = generate(&config).unwrap();
        let geo = geometry(&config).unwrap();
        let n = config.samples_per_class as f64;
        // per-coordinate sd is at most sqrt(σ_B² + σ_n²)
        let sd = (config.background_scale.powi(2) + config.noise_scale.powi(2)).sqrt();
        for c in 0..config.class_count {
            let rows: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == Some(c)).collect();
            for j in 0..config.input_dim {
                let mean = rows.iter().map(|&i| ds.inputs[(i, j)]).sum::<f64>() / n;
                let target = config.semantic_separation * geo.semantic[(j, c)];
                assert!(
                    (mean - target).abs() < 3.0 * sd / n.sqrt() + 0.05,
                    "class {c} coord {j}"
                );
            }
        }
    }

    #[test]
    fn invalid_configs() {
        let too_small = BenchConfig {
            input_dim: 10,
            ..BenchConfig::default()
        };
        assert!(matches!(generate(&too_small), Err(Error::ConfigInvalid(_))));
        let zero_sep = BenchConfig {
            semantic_separation: 0.0,
            ..BenchConfig::default()
        };
        assert!(generate(&zero_sep).is_err());
    }

    #[test]
    fn kfold_examples() {
        let folds = kfold_split(10, 10, 1).unwrap();
        assert!(folds.iter().all(|f| f.len() == 1));
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());

        let folds = kfold_split(7, 3, 1).unwrap();
        let mut sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![2, 2, 3]);

        assert!(matches!(
            kfold_split(3, 4, 0),
            Err(Error::TooFewSamples { .. })
        ));
        assert!(matches!(
            kfold_split(3, 1, 0),
            Err(Error::TooFewSamples { .. })
        ));
    }

    #[test]
    fn id_folds_exclude_ood() {
        let config = BenchConfig {
            samples_per_class: 10,
            ..BenchConfig::default()
        };
        let ds = generate(&config).unwrap();
        for split in id_folds(&ds, 5, 3).unwrap() {
            assert!(split
                .train
                .iter()
                .chain(&split.test)
                .all(|&i| ds.labels[i].is_some()));
            assert_eq!(split.train.len() + split.test.len(), 80);
        }
    }

    #[test]
    fn dataset_file_round_trip() {
        let ds = generate(&BenchConfig {
            samples_per_class: 5,
            ..BenchConfig::default()
        })
        .unwrap();
        let text = ds.to_table().to_text().unwrap();
        let back = LabeledDataset::from_table(Table::parse(&text, "mem").unwrap());
        assert_eq!(back, ds);
    }
}
