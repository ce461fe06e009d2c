//! Brute-force reference implementations shared by the integration tests.
//! They are deliberately naive: explicit inverses, pairwise loops, exhaustive scans.

#![allow(dead_code, clippy::needless_range_loop)]

use nearood::gaussian::FeatureSet;
use nearood::numerics::RngState;
use nearood::trainer::ClassifierParams;
use nearood::Matrix;

/// Gauss-Jordan inverse with partial pivoting.
pub fn invert(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = m.len();
    let mut a: Vec<Vec<f64>> = m
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        let p = a[col][col];
        assert!(p.abs() > 1e-300, "singular matrix");
        for v in a[col].iter_mut() {
            *v /= p;
        }
        for r in 0..n {
            if r != col {
                let f = a[r][col];
                if f != 0.0 {
                    for c in 0..2 * n {
                        a[r][c] -= f * a[col][c];
                    }
                }
            }
        }
    }
    a.into_iter().map(|r| r[n..].to_vec()).collect()
}

pub fn quad_form(inv: &[Vec<f64>], d: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..d.len() {
        for j in 0..d.len() {
            s += d[i] * inv[i][j] * d[j];
        }
    }
    s
}

/// Class means, global mean and the pooled covariance (divide by N), by plain loops.
pub struct BruteGaussians {
    pub means: Vec<Vec<f64>>,
    pub global: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

pub fn brute_fit(rows: &[Vec<f64>], labels: &[usize], classes: usize) -> BruteGaussians {
    let p = rows[0].len();
    let n = rows.len() as f64;
    let mut means = vec![vec![0.0; p]; classes];
    let mut counts = vec![0.0; classes];
    for (r, &l) in rows.iter().zip(labels) {
        counts[l] += 1.0;
        for j in 0..p {
            means[l][j] += r[j];
        }
    }
    for c in 0..classes {
        for j in 0..p {
            means[c][j] /= counts[c];
        }
    }
    let global: Vec<f64> = (0..p)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n)
        .collect();
    let mut cov = vec![vec![0.0; p]; p];
    for (r, &l) in rows.iter().zip(labels) {
        for i in 0..p {
            for j in 0..p {
                cov[i][j] += (r[i] - means[l][i]) * (r[j] - means[l][j]);
            }
        }
    }
    for row in cov.iter_mut() {
        for v in row.iter_mut() {
            *v /= n;
        }
    }
    BruteGaussians { means, global, cov }
}

impl BruteGaussians {
    pub fn with_ridge(&self, lambda: f64) -> Vec<Vec<f64>> {
        let mut c = self.cov.clone();
        for (i, row) in c.iter_mut().enumerate() {
            row[i] += lambda;
        }
        invert(&c)
    }

    pub fn class_distances(&self, inv: &[Vec<f64>], z: &[f64]) -> Vec<f64> {
        self.means
            .iter()
            .map(|m| {
                quad_form(
                    inv,
                    &z.iter().zip(m).map(|(a, b)| a - b).collect::<Vec<_>>(),
                )
            })
            .collect()
    }

    pub fn md(&self, inv: &[Vec<f64>], z: &[f64]) -> f64 {
        -self
            .class_distances(inv, z)
            .into_iter()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn rmd(&self, inv: &[Vec<f64>], z: &[f64]) -> f64 {
        let g: Vec<f64> = z.iter().zip(&self.global).map(|(a, b)| a - b).collect();
        let background = quad_form(inv, &g);
        -self
            .class_distances(inv, z)
            .into_iter()
            .map(|d| d - background)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Gaussian clusters with random means and a random linear mixing, so the
/// pooled covariance is dense and well conditioned.
pub fn random_clusters(
    rng: &mut RngState,
    n: usize,
    p: usize,
    classes: usize,
) -> (Vec<Vec<f64>>, Vec<usize>) {
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..p).map(|_| 3.0 * rng.normal()).collect())
        .collect();
    let mix: Vec<Vec<f64>> = (0..p)
        .map(|i| {
            (0..p)
                .map(|j| if i == j { 1.0 } else { 0.3 * rng.normal() })
                .collect()
        })
        .collect();
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    let rows = labels
        .iter()
        .map(|&l| {
            let e: Vec<f64> = (0..p).map(|_| rng.normal()).collect();
            (0..p)
                .map(|i| centers[l][i] + (0..p).map(|j| mix[i][j] * e[j]).sum::<f64>())
                .collect()
        })
        .collect();
    (rows, labels)
}

pub fn feature_set(rows: &[Vec<f64>], labels: &[usize], classes: usize) -> FeatureSet {
    FeatureSet::new(
        Matrix::from_rows(rows).unwrap(),
        labels.iter().map(|&l| Some(l)).collect(),
        classes,
        "test",
    )
    .unwrap()
}

pub fn unlabeled(rows: &[Vec<f64>], classes: usize) -> FeatureSet {
    FeatureSet::new(
        Matrix::from_rows(rows).unwrap(),
        vec![None; rows.len()],
        classes,
        "test",
    )
    .unwrap()
}

/// Scores drawn from a small integer grid so ties are common.
pub fn tied_scores(rng: &mut RngState, n: usize, levels: usize, shift: f64) -> Vec<f64> {
    (0..n)
        .map(|_| rng.below(levels) as f64 * 0.5 + shift)
        .collect()
}

pub fn brute_auroc(id: &[f64], ood: &[f64]) -> f64 {
    let mut s = 0.0;
    for &a in id {
        for &b in ood {
            s += if a > b {
                1.0
            } else if a == b {
                0.5
            } else {
                0.0
            };
        }
    }
    s / (id.len() * ood.len()) as f64
}

/// Step-wise average precision over every distinct threshold, highest first.
pub fn brute_ap(pos: &[f64], neg: &[f64]) -> f64 {
    let mut thresholds: Vec<f64> = pos.iter().chain(neg).copied().collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    for t in thresholds {
        let tp = pos.iter().filter(|&&s| s >= t).count() as f64;
        let fp = neg.iter().filter(|&&s| s >= t).count() as f64;
        let recall = tp / pos.len() as f64;
        if tp + fp > 0.0 {
            area += (recall - prev_recall) * tp / (tp + fp);
        }
        prev_recall = recall;
    }
    area
}

/// Largest attained ID score whose acceptance count reaches `n·target`
/// (products within 1e-9 of an integer count as that integer).
pub fn brute_threshold(id: &[f64], target: f64) -> f64 {
    let need = id.len() as f64 * target - 1e-9;
    let mut best = f64::NEG_INFINITY;
    for &t in id {
        let accepted = id.iter().filter(|&&s| s >= t).count() as f64;
        if accepted >= need && t > best {
            best = t;
        }
    }
    best
}

pub fn brute_confusion(t: f64, id: &[f64], ood: &[f64]) -> (f64, f64, f64) {
    let tp = id.iter().filter(|&&s| s >= t).count() as f64;
    let fp = ood.iter().filter(|&&s| s >= t).count() as f64;
    let fneg = id.len() as f64 - tp;
    let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let recall = tp / (tp + fneg);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    (precision, recall, f1)
}

/// Central finite-difference derivative of `f` at each coordinate of `x`.
pub fn finite_difference(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Gradient agreement: relative error below `rel`, or absolute error below 1e-8
/// for near-zero coordinates.
pub fn grad_close(analytic: f64, numeric: f64, rel: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff < 1e-8 || diff / analytic.abs().max(numeric.abs()) < rel
}

/// Copies a flat parameter vector back into the layer buffers.
pub fn set_flat(params: &mut ClassifierParams, flat: &[f64]) {
    let mut k = 0;
    for buf in params.buffers_mut() {
        let n = buf.len();
        buf.copy_from_slice(&flat[k..k + n]);
        k += n;
    }
}
