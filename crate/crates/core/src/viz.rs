//! Plot-ready data: embeddings projected onto the plane through three class
//! templates, and binned score densities.
//!
//! Projection file:
//! ```text
//! # nearood-projection/1
//! # source_tag=<tag>
//! # classes=<a>,<b>,<c>
//! # anchor=<p values>
//! # u1=<p values>
//! # u2=<p values>
//! # template,<class>,<u>,<v>      (three lines)
//! class,source_tag,u,v
//! <class>,<tag>,<u>,<v>
//! ```
//!
//! Density file:
//! ```text
//! # nearood-density/1
//! # method=<method>
//! # degenerate=<true|false>
//! bin_left,bin_right,id_mass,ood_mass
//! ```

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::gaussian::FeatureSet;
use crate::numerics::{dot, orthonormal_plane_basis, sub};
use crate::table::fmt_f64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedPoint {
    pub class: usize,
    pub u: f64,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    pub source_tag: String,
    pub classes: [usize; 3],
    pub anchor: Vec<f64>,
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
    /// Projections of the three templates, in `classes` order.
    pub templates: [(f64, f64); 3],
    pub points: Vec<ProjectedPoint>,
}

impl ProjectionResult {
    pub fn coordinates(&self, z: &[f64]) -> (f64, f64) {
        let d = sub(z, &self.anchor);
        (dot(&d, &self.u1), dot(&d, &self.u2))
    }

    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(",");
        let mut out = String::from("# nearood-projection/1\n");
        let [a, b, c] = self.classes;
        writeln!(out, "# source_tag={}", self.source_tag).expect("string write");
        writeln!(out, "# classes={a},{b},{c}").expect("string write");
        writeln!(out, "# anchor={}", join(&self.anchor)).expect("string write");
        writeln!(out, "# u1={}", join(&self.u1)).expect("string write");
        writeln!(out, "# u2={}", join(&self.u2)).expect("string write");
        for (cls, (u, v)) in self.classes.iter().zip(&self.templates) {
            writeln!(out, "# template,{cls},{},{}", fmt_f64(*u), fmt_f64(*v))
                .expect("string write");
        }
        out.push_str("class,source_tag,u,v\n");
        for p in &self.points {
            writeln!(
                out,
                "{},{},{},{}",
                p.class,
                self.source_tag,
                fmt_f64(p.u),
                fmt_f64(p.v)
            )
            .expect("string write");
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path.display().to_string(), e))
    }

    /// Mean pairwise distance between the three projected class centroids
    /// divided by the mean distance of points to their own centroid.
    pub fn separation_ratio(&self) -> f64 {
        let centroids: Vec<(f64, f64)> = self
            .classes
            .iter()
            .map(|&c| {
                let (mut su, mut sv, mut n) = (0.0, 0.0, 0.0);
                for p in self.points.iter().filter(|p| p.class == c) {
                    su += p.u;
                    sv += p.v;
                    n += 1.0;
                }
                (su / n, sv / n)
            })
            .collect();
        let dist =
            |a: (f64, f64), b: (f64, f64)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
        let between = (dist(centroids[0], centroids[1])
            + dist(centroids[0], centroids[2])
            + dist(centroids[1], centroids[2]))
            / 3.0;
        let within: f64 = self
            .classes
            .iter()
            .zip(&centroids)
            .map(|(&c, &m)| {
                let members: Vec<f64> = self
                    .points
                    .iter()
                    .filter(|p| p.class == c)
                    .map(|p| dist((p.u, p.v), m))
                    .collect();
                members.iter().sum::<f64>() / members.len() as f64
            })
            .sum::<f64>()
            / 3.0;
        between / within
    }
}

/// Projects the rows of the three selected classes onto the plane through
/// `templates`, anchored at `templates[0]`.
pub fn project_to_weight_plane(
    features: &FeatureSet,
    templates: [&[f64]; 3],
    classes: [usize; 3],
) -> Result<ProjectionResult> {
    for t in templates {
        if t.len() != features.dim() {
            return Err(Error::DimensionMismatch {
                expected: features.dim(),
                got: t.len(),
            });
        }
    }
    for c in classes {
        if c >= features.class_count || !features.labels.contains(&Some(c)) {
            return Err(Error::UnknownClass {
                class: c,
                class_count: features.class_count,
            });
        }
    }
    let (u1, u2) = orthonormal_plane_basis(templates[0], templates[1], templates[2])?;
    let mut result = ProjectionResult {
        source_tag: features.source_tag.clone(),
        classes,
        anchor: templates[0].to_vec(),
        u1,
        u2,
        templates: [(0.0, 0.0); 3],
        points: Vec::new(),
    };
    result.templates = templates.map(|t| result.coordinates(t));
    for (z, label) in features.features.row_iter().zip(&features.labels) {
        if let Some(c) = label.filter(|c| classes.contains(c)) {
            let (u, v) = result.coordinates(z);
            result.points.push(ProjectedPoint { class: c, u, v });
        }
    }
    Ok(result)
}

/// Histogram of ID and OOD scores over shared uniform bins.
#[derive(Debug, Clone, PartialEq)]
pub struct DensitySeries {
    pub method: String,
    /// `bins + 1` edges; bins are `[e_i, e_{i+1})` except the last, which is closed.
    pub edges: Vec<f64>,
    pub id_mass: Vec<f64>,
    pub ood_mass: Vec<f64>,
    /// Set when every score was identical and a single zero-width bin was emitted.
    pub degenerate: bool,
}

impl DensitySeries {
    /// The single-bin series used when all scores coincide.
    pub fn degenerate(method: &str, value: f64) -> Self {
        Self {
            method: method.to_string(),
            edges: vec![value, value],
            id_mass: vec![1.0],
            ood_mass: vec![1.0],
            degenerate: true,
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# nearood-density/1\n");
        writeln!(out, "# method={}", self.method).expect("string write");
        writeln!(out, "# degenerate={}", self.degenerate).expect("string write");
        out.push_str("bin_left,bin_right,id_mass,ood_mass\n");
        for i in 0..self.id_mass.len() {
            writeln!(
                out,
                "{},{},{},{}",
                fmt_f64(self.edges[i]),
                fmt_f64(self.edges[i + 1]),
                fmt_f64(self.id_mass[i]),
                fmt_f64(self.ood_mass[i])
            )
            .expect("string write");
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

/// Index of the bin holding `s`: the number of interior edges `≤ s`.
fn bin_of(edges: &[f64], s: f64) -> usize {
    let interior = &edges[1..edges.len() - 1];
    interior.partition_point(|&e| e <= s)
}

pub fn score_density(
    method: &str,
    id_scores: &[f64],
    ood_scores: &[f64],
    bins: usize,
) -> Result<DensitySeries> {
    if bins < 2 {
        return Err(Error::ConfigInvalid("density needs at least 2 bins".into()));
    }
    if id_scores.is_empty() {
        return Err(Error::EmptyGroup("ID"));
    }
    if ood_scores.is_empty() {
        return Err(Error::EmptyGroup("OOD"));
    }
    let all = || id_scores.iter().chain(ood_scores);
    if all().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("scores"));
    }
    let lo = all().copied().fold(f64::INFINITY, f64::min);
    let hi = all().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return Err(Error::DegenerateRange);
    }
    let width = (hi - lo) / bins as f64;
    let mut edges: Vec<f64> = (0..bins).map(|i| lo + i as f64 * width).collect();
    edges.push(hi);

    let mass = |scores: &[f64]| {
        let mut counts = vec![0usize; bins];
        for &s in scores {
            counts[bin_of(&edges, s)] += 1;
        }
        counts
            .into_iter()
            .map(|c| c as f64 / scores.len() as f64)
            .collect::<Vec<_>>()
    };
    let id_mass = mass(id_scores);
    let ood_mass = mass(ood_scores);
    Ok(DensitySeries {
        method: method.to_string(),
        edges,
        id_mass,
        ood_mass,
        degenerate: false,
    })
}
