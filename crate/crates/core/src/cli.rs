//! Pipeline configuration and the commands behind the `nearood` binary.
//!
//! The experiment runs k-fold cross-validation over the ID rows of a synthetic
//! benchmark. Per fold it trains a baseline and a label-smoothed classifier on
//! the training split, fits the Gaussian detector on each model's training
//! embeddings, and scores the held-out ID rows plus every OOD row with MD and
//! RMD on both embeddings (MD, RMD, MD-LS, RMD-LS).

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bench::{generate, id_folds, BenchConfig, FoldSplit, LabeledDataset};
use crate::error::{Error, Result};
use crate::gaussian::{
    fit_gaussians_with, BackgroundCovariance, FeatureSet, FitOptions, GaussianOodModel, ScoreMethod,
};
use crate::metrics::{evaluate, format_table, id_accuracy, predict_classes, EvalReport};
use crate::numerics::mix_seed;
use crate::trainer::{extract_features, train, ClassifierParams, TrainConfig};
use crate::viz::{project_to_weight_plane, score_density, DensitySeries, ProjectionResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DetectorMethod {
    #[serde(rename = "MD")]
    Md,
    #[serde(rename = "RMD")]
    Rmd,
    #[serde(rename = "MD-LS")]
    MdLs,
    #[serde(rename = "RMD-LS")]
    RmdLs,
}

impl DetectorMethod {
    pub const ALL: [DetectorMethod; 4] = [Self::Md, Self::Rmd, Self::MdLs, Self::RmdLs];

    pub fn name(self) -> &'static str {
        match self {
            Self::Md => "MD",
            Self::Rmd => "RMD",
            Self::MdLs => "MD-LS",
            Self::RmdLs => "RMD-LS",
        }
    }

    pub fn smoothed(self) -> bool {
        matches!(self, Self::MdLs | Self::RmdLs)
    }

    pub fn score_method(self) -> ScoreMethod {
        match self {
            Self::Md | Self::MdLs => ScoreMethod::Md,
            Self::Rmd | Self::RmdLs => ScoreMethod::Rmd,
        }
    }

    fn file_stem(self) -> String {
        self.name().to_ascii_lowercase()
    }
}

impl fmt::Display for DetectorMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSections {
    #[serde(default = "TrainConfig::baseline")]
    pub baseline: TrainConfig,
    #[serde(default)]
    pub smoothed: TrainConfig,
}

impl Default for TrainSections {
    fn default() -> Self {
        Self {
            baseline: TrainConfig::baseline(),
            smoothed: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSection {
    pub methods: Vec<DetectorMethod>,
    pub background_covariance: BackgroundCovariance,
}

impl Default for DetectorSection {
    fn default() -> Self {
        Self {
            methods: DetectorMethod::ALL.to_vec(),
            background_covariance: BackgroundCovariance::Shared,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub target_tpr: f64,
    pub bins: usize,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            target_tpr: 0.95,
            bins: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemplateSource {
    /// Rows of the classifier head.
    #[default]
    Weights,
    /// Class means of the projected embeddings.
    Means,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectionSection {
    pub classes: [usize; 3],
    pub templates: TemplateSource,
}

impl Default for ProjectionSection {
    fn default() -> Self {
        Self {
            classes: [0, 1, 2],
            templates: TemplateSource::Weights,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub workspace: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self {
            workspace: PathBuf::from("runs"),
        }
    }
}

/// Everything one experiment needs. `bench.seed` is replaced by the master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub folds: usize,
    pub parallel_folds: bool,
    pub bench: BenchConfig,
    pub train: TrainSections,
    pub detector: DetectorSection,
    pub metrics: MetricsSection,
    pub projection: ProjectionSection,
    pub paths: PathsSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            folds: 10,
            parallel_folds: true,
            bench: BenchConfig::default(),
            train: TrainSections::default(),
            detector: DetectorSection::default(),
            metrics: MetricsSection::default(),
            projection: ProjectionSection::default(),
            paths: PathsSection::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::ConfigInvalid(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// Applies the master seed to the benchmark section.
    pub fn effective_bench(&self) -> BenchConfig {
        BenchConfig {
            seed: self.seed,
            ..self.bench.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.effective_bench().validate()?;
        self.train.baseline.validate()?;
        self.train.smoothed.validate()?;
        if self.folds < 2 {
            return Err(Error::ConfigInvalid("folds must be at least 2".into()));
        }
        if self.detector.methods.is_empty() {
            return Err(Error::ConfigInvalid("detector.methods is empty".into()));
        }
        if !(self.metrics.target_tpr > 0.0 && self.metrics.target_tpr <= 1.0) {
            return Err(Error::ConfigInvalid(
                "metrics.target_tpr must be in (0, 1]".into(),
            ));
        }
        if self.metrics.bins < 2 {
            return Err(Error::ConfigInvalid(
                "metrics.bins must be at least 2".into(),
            ));
        }
        let [a, b, c] = self.projection.classes;
        if a == b || b == c || a == c {
            return Err(Error::ConfigInvalid(
                "projection.classes must be distinct".into(),
            ));
        }
        if let Some(&bad) = self
            .projection
            .classes
            .iter()
            .find(|&&k| k >= self.bench.class_count)
        {
            return Err(Error::ConfigInvalid(format!(
                "projection.classes entry {bad} is not an ID class"
            )));
        }
        Ok(())
    }

    /// SHA-256 of the config without the settings that cannot change results
    /// (paths and fold parallelism).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.paths = PathsSection::default();
        c.parallel_folds = true;
        hex::encode(Sha256::digest(c.to_toml().as_bytes()))
    }

    pub fn run_dir_name(&self) -> String {
        format!("run-{}-seed{}", &self.hash()[..12], self.seed)
    }

    fn fit_options(&self) -> FitOptions {
        FitOptions {
            background: self.detector.background_covariance,
            shrinkage: true,
        }
    }
}

/// Everything computed for one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub n_train: usize,
    pub reports: Vec<EvalReport>,
    pub baseline_accuracy: f64,
    pub smoothed_accuracy: f64,
    pub baseline_separation: f64,
    pub smoothed_separation: f64,
    pub baseline_loss: [f64; 2],
    pub smoothed_loss: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    pub baseline: f64,
    pub smoothed: f64,
    pub baseline_per_fold: Vec<f64>,
    pub smoothed_per_fold: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationSummary {
    pub classes: [usize; 3],
    pub baseline: f64,
    pub smoothed: f64,
    pub baseline_per_fold: Vec<f64>,
    pub smoothed_per_fold: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub config_hash: String,
    pub seed: u64,
    pub folds: usize,
    /// Per-method mean over folds. Counts are totals over folds.
    pub aggregate: Vec<EvalReport>,
    pub accuracy: AccuracySummary,
    pub separation: SeparationSummary,
    pub per_fold: Vec<FoldReport>,
}

impl ExperimentSummary {
    pub fn aggregate_for(&self, method: DetectorMethod) -> Option<&EvalReport> {
        self.aggregate.iter().find(|r| r.method == method.name())
    }
}

/// Fold results plus the figure data kept from that fold.
struct FoldOutcome {
    report: FoldReport,
    projections: [ProjectionResult; 2],
    scores: Vec<(DetectorMethod, Vec<f64>, Vec<f64>)>,
}

struct TrainedView {
    params: ClassifierParams,
    test_features: FeatureSet,
    model: GaussianOodModel,
    accuracy: f64,
    loss: [f64; 2],
}

fn train_view(
    config: &PipelineConfig,
    train_cfg: &TrainConfig,
    dataset: &LabeledDataset,
    split: &FoldSplit,
    eval_rows: &[usize],
    seed: u64,
) -> Result<TrainedView> {
    let cfg = TrainConfig {
        seed,
        ..train_cfg.clone()
    };
    let train_x = dataset.inputs.select_rows(&split.train);
    let train_y: Vec<usize> = split
        .train
        .iter()
        .map(|&i| dataset.labels[i].expect("folds hold ID rows only"))
        .collect();
    let outcome = train(&train_x, &train_y, dataset.class_count, &cfg)?;
    let params = outcome.params;

    let train_labels: Vec<Option<usize>> = train_y.iter().map(|&l| Some(l)).collect();
    let train_features = extract_features(&params, &train_x, &train_labels)?;
    let eval_x = dataset.inputs.select_rows(eval_rows);
    let eval_labels: Vec<Option<usize>> = eval_rows.iter().map(|&i| dataset.labels[i]).collect();
    let test_features = extract_features(&params, &eval_x, &eval_labels)?;
    let model = fit_gaussians_with(&train_features, &config.fit_options())?;

    let test_x = dataset.inputs.select_rows(&split.test);
    let truth: Vec<usize> = split
        .test
        .iter()
        .map(|&i| dataset.labels[i].expect("folds hold ID rows only"))
        .collect();
    let accuracy = id_accuracy(&predict_classes(&params.logits(&test_x)?), &truth)?;
    Ok(TrainedView {
        params,
        test_features,
        model,
        accuracy,
        loss: [outcome.initial_loss, outcome.final_loss],
    })
}

fn projection_for(config: &PipelineConfig, view: &TrainedView) -> Result<ProjectionResult> {
    let classes = config.projection.classes;
    let templates: Vec<Vec<f64>> = match config.projection.templates {
        TemplateSource::Weights => classes
            .iter()
            .map(|&c| view.params.class_template(c).map(<[f64]>::to_vec))
            .collect::<Result<_>>()?,
        TemplateSource::Means => classes
            .iter()
            .map(|&c| view.model.class_means()[c].clone())
            .collect(),
    };
    project_to_weight_plane(
        &view.test_features,
        [&templates[0], &templates[1], &templates[2]],
        classes,
    )
}

fn run_fold(
    config: &PipelineConfig,
    dataset: &LabeledDataset,
    fold: usize,
    split: &FoldSplit,
) -> Result<FoldOutcome> {
    let ctx = |stage: &str, e: Error| e.context(format!("fold {fold}, {stage}"));
    let ood_rows = dataset.ood_indices();
    let eval_rows: Vec<usize> = split.test.iter().chain(&ood_rows).copied().collect();
    let seed = mix_seed(config.seed, 1000 + fold as u64);

    let baseline = train_view(
        config,
        &config.train.baseline,
        dataset,
        split,
        &eval_rows,
        seed,
    )
    .map_err(|e| ctx("baseline", e))?;
    let smoothed = train_view(
        config,
        &config.train.smoothed,
        dataset,
        split,
        &eval_rows,
        seed,
    )
    .map_err(|e| ctx("label-smoothed", e))?;

    let n_id = split.test.len();
    let target = config.metrics.target_tpr;
    let mut reports = Vec::new();
    let mut scores = Vec::new();
    for &method in &config.detector.methods {
        let view = if method.smoothed() {
            &smoothed
        } else {
            &baseline
        };
        let sv = view
            .model
            .score(&view.test_features, method.score_method())
            .map_err(|e| ctx(method.name(), e))?;
        let (id, ood) = sv.scores.split_at(n_id);
        let mut report = evaluate(method.name(), view.model.source_tag(), id, ood, target)
            .map_err(|e| ctx(method.name(), e))?;
        report.id_accuracy = Some(view.accuracy);
        reports.push(report);
        scores.push((method, id.to_vec(), ood.to_vec()));
    }
    let projections = [
        projection_for(config, &baseline).map_err(|e| ctx("projection", e))?,
        projection_for(config, &smoothed).map_err(|e| ctx("projection", e))?,
    ];
    Ok(FoldOutcome {
        report: FoldReport {
            fold,
            n_train: split.train.len(),
            reports,
            baseline_accuracy: baseline.accuracy,
            smoothed_accuracy: smoothed.accuracy,
            baseline_separation: projections[0].separation_ratio(),
            smoothed_separation: projections[1].separation_ratio(),
            baseline_loss: baseline.loss,
            smoothed_loss: smoothed.loss,
        },
        projections,
        scores,
    })
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn aggregate(per_fold: &[FoldReport]) -> Vec<EvalReport> {
    let first = &per_fold[0].reports;
    (0..first.len())
        .map(|m| {
            let rows: Vec<&EvalReport> = per_fold.iter().map(|f| &f.reports[m]).collect();
            let avg = |get: fn(&EvalReport) -> f64| mean(rows.iter().map(|r| get(r)));
            EvalReport {
                method: first[m].method.clone(),
                source_tag: first[m].source_tag.clone(),
                positive_class: first[m].positive_class.clone(),
                target_tpr: first[m].target_tpr,
                auroc: avg(|r| r.auroc),
                aupr_in: avg(|r| r.aupr_in),
                aupr_out: avg(|r| r.aupr_out),
                threshold_at_tpr: avg(|r| r.threshold_at_tpr),
                precision_at_tpr: avg(|r| r.precision_at_tpr),
                recall_at_tpr: avg(|r| r.recall_at_tpr),
                f1_at_tpr: avg(|r| r.f1_at_tpr),
                id_accuracy: Some(avg(|r| r.id_accuracy.unwrap_or(f64::NAN))),
                n_id: rows.iter().map(|r| r.n_id).sum(),
                n_ood: rows.iter().map(|r| r.n_ood).sum(),
            }
        })
        .collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Progress line on stderr unless quiet mode is set.
pub fn log_line(msg: &str) {
    if !QUIET.load(std::sync::atomic::Ordering::Relaxed) {
        eprintln!("[nearood] {msg}");
    }
}

static QUIET: std::sync::atomic::AtomicBool = std::sync::atomic::AtomicBool::new(false);

/// Suppresses progress lines on stderr.
pub fn set_quiet(quiet: bool) {
    QUIET.store(quiet, std::sync::atomic::Ordering::Relaxed);
}

pub fn accuracy_table(acc: &AccuracySummary) -> String {
    let mut out = String::from("# ID classification accuracy (mean over folds)\n");
    out.push_str(&format!("{:<16} {:>9}\n", "Model", "Accuracy"));
    out.push_str(&format!("{:<16} {:>9.4}\n", "baseline", acc.baseline));
    out.push_str(&format!("{:<16} {:>9.4}\n", "label-smoothed", acc.smoothed));
    out
}

/// Runs the full cross-validated experiment and writes every artifact into
/// `<workspace>/<run_dir_name>`. Returns the run directory and the summary.
pub fn run_experiment(
    config: &PipelineConfig,
    workspace: &Path,
) -> Result<(PathBuf, ExperimentSummary)> {
    config.validate()?;
    let run_dir = workspace.join(config.run_dir_name());
    let fold_dir = run_dir.join("folds");
    fs::create_dir_all(&fold_dir).map_err(|e| Error::io(fold_dir.display().to_string(), e))?;
    write_text(&run_dir.join("config.toml"), &config.to_toml())?;

    let dataset = generate(&config.effective_bench())?;
    dataset.save(&run_dir.join("dataset.csv"))?;
    let splits = id_folds(&dataset, config.folds, mix_seed(config.seed, 1))?;
    log_line(&format!(
        "{} ID rows, {} OOD rows, {} folds",
        dataset.id_indices().len(),
        dataset.ood_indices().len(),
        config.folds
    ));

    let run_one = |(fold, split): (usize, &FoldSplit)| -> Result<FoldOutcome> {
        let outcome = run_fold(config, &dataset, fold, split)?;
        write_json(
            &fold_dir.join(format!("fold-{fold:02}.json")),
            &outcome.report,
        )?;
        log_line(&format!("fold {fold} done"));
        Ok(outcome)
    };
    let outcomes: Vec<Result<FoldOutcome>> = if config.parallel_folds {
        splits.par_iter().enumerate().map(run_one).collect()
    } else {
        splits.iter().enumerate().map(run_one).collect()
    };
    let outcomes: Vec<FoldOutcome> = outcomes.into_iter().collect::<Result<_>>()?;

    let per_fold: Vec<FoldReport> = outcomes.iter().map(|o| o.report.clone()).collect();
    let accuracy = AccuracySummary {
        baseline: mean(per_fold.iter().map(|f| f.baseline_accuracy)),
        smoothed: mean(per_fold.iter().map(|f| f.smoothed_accuracy)),
        baseline_per_fold: per_fold.iter().map(|f| f.baseline_accuracy).collect(),
        smoothed_per_fold: per_fold.iter().map(|f| f.smoothed_accuracy).collect(),
    };
    let separation = SeparationSummary {
        classes: config.projection.classes,
        baseline: mean(per_fold.iter().map(|f| f.baseline_separation)),
        smoothed: mean(per_fold.iter().map(|f| f.smoothed_separation)),
        baseline_per_fold: per_fold.iter().map(|f| f.baseline_separation).collect(),
        smoothed_per_fold: per_fold.iter().map(|f| f.smoothed_separation).collect(),
    };
    let summary = ExperimentSummary {
        config_hash: config.hash(),
        seed: config.seed,
        folds: config.folds,
        aggregate: aggregate(&per_fold),
        accuracy,
        separation,
        per_fold,
    };

    write_json(&run_dir.join("report.json"), &summary)?;
    write_text(
        &run_dir.join("table1.txt"),
        &format_table(&summary.aggregate),
    )?;
    write_text(
        &run_dir.join("table2.txt"),
        &accuracy_table(&summary.accuracy),
    )?;

    // figure data comes from the first fold
    let first = &outcomes[0];
    first.projections[0].save(&run_dir.join("projection-baseline.csv"))?;
    first.projections[1].save(&run_dir.join("projection-smoothed.csv"))?;
    for (method, id, ood) in &first.scores {
        let series = match score_density(method.name(), id, ood, config.metrics.bins) {
            Ok(s) => s,
            Err(Error::DegenerateRange) => DensitySeries::degenerate(method.name(), id[0]),
            Err(e) => return Err(e),
        };
        series.save(&run_dir.join(format!("density-{}.csv", method.file_stem())))?;
    }
    log_line(&format!("wrote {}", run_dir.display()));
    Ok((run_dir, summary))
}

/// One scored row of a score file.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub label: Option<usize>,
    pub score: f64,
    pub accepted: bool,
}

pub const SCORE_HEADER: &str = "row,label,score,accepted";

/// Output of the `score` command.
///
/// ```text
/// # nearood-scores/1
/// # method=<MD|RMD>
/// # source_tag=<tag>
/// row,label,score,accepted
/// <i>,<label or -1>,<score>,<0|1>
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreFile {
    pub method: String,
    pub source_tag: String,
    pub rows: Vec<ScoreRow>,
}

impl ScoreFile {
    /// Rows are accepted when `score >= threshold`.
    pub fn new(
        method: &str,
        source_tag: &str,
        scores: &[f64],
        labels: &[Option<usize>],
        threshold: f64,
    ) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::LengthMismatch {
                left: scores.len(),
                right: labels.len(),
            });
        }
        let rows = scores
            .iter()
            .zip(labels)
            .map(|(&score, &label)| ScoreRow {
                label,
                score,
                accepted: score >= threshold,
            })
            .collect();
        Ok(Self {
            method: method.to_string(),
            source_tag: source_tag.to_string(),
            rows,
        })
    }

    /// Scores of ID rows and of OOD rows, in file order.
    pub fn split_scores(&self) -> (Vec<f64>, Vec<f64>) {
        let (id, ood): (Vec<&ScoreRow>, Vec<&ScoreRow>) =
            self.rows.iter().partition(|r| r.label.is_some());
        (
            id.iter().map(|r| r.score).collect(),
            ood.iter().map(|r| r.score).collect(),
        )
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# nearood-scores/1\n# method={}\n# source_tag={}\n{SCORE_HEADER}\n",
            self.method, self.source_tag
        );
        for (i, r) in self.rows.iter().enumerate() {
            let label = r.label.map_or("-1".to_string(), |l| l.to_string());
            out.push_str(&format!(
                "{i},{label},{},{}\n",
                crate::table::fmt_f64(r.score),
                u8::from(r.accepted)
            ));
        }
        out
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let perr = |line: usize, message: String| Error::Parse {
            path: origin.to_string(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, "# nearood-scores/1")) => {}
            _ => return Err(perr(1, "expected \"# nearood-scores/1\"".into())),
        }
        let mut file = ScoreFile {
            method: String::new(),
            source_tag: String::new(),
            rows: Vec::new(),
        };
        let mut seen_header = false;
        for (i, line) in lines {
            let lineno = i + 1;
            if let Some(rest) = line.strip_prefix("# method=") {
                file.method = rest.to_string();
                continue;
            }
            if let Some(rest) = line.strip_prefix("# source_tag=") {
                file.source_tag = rest.to_string();
                continue;
            }
            if line.starts_with('#') || line.is_empty() {
                continue;
            }
            if !seen_header {
                if line != SCORE_HEADER {
                    return Err(perr(
                        lineno,
                        format!("expected column header {SCORE_HEADER:?}"),
                    ));
                }
                seen_header = true;
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 4 {
                return Err(perr(lineno, "expected 4 columns".into()));
            }
            let label: i64 = cells[1]
                .parse()
                .map_err(|e| perr(lineno, format!("label: {e}")))?;
            let score: f64 = cells[2]
                .parse()
                .map_err(|e| perr(lineno, format!("score: {e}")))?;
            let accepted = match cells[3] {
                "0" => false,
                "1" => true,
                other => {
                    return Err(perr(
                        lineno,
                        format!("accepted must be 0 or 1, got {other:?}"),
                    ))
                }
            };
            file.rows.push(ScoreRow {
                label: usize::try_from(label).ok(),
                score,
                accepted,
            });
        }
        if !seen_header {
            return Err(perr(1, "missing column header".into()));
        }
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_text())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse(&text, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let c = PipelineConfig::default();
        let back = PipelineConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert!(c.validate().is_ok());
        assert_eq!(c.train.baseline.epsilon, 0.0);
        assert_eq!(c.train.smoothed.epsilon, 0.1);
        assert_eq!(c.folds, 10);
        assert_eq!(c.metrics.target_tpr, 0.95);
    }

    #[test]
    fn unknown_field_is_named() {
        let err = PipelineConfig::from_toml("[bench]\nsamples_per_klass = 3\n").unwrap_err();
        assert!(err.to_string().contains("samples_per_klass"), "{err}");
        let err = PipelineConfig::from_toml("[train.smoothed]\nepsilon = \"x\"\n").unwrap_err();
        assert!(err.to_string().contains("epsilon"), "{err}");
    }

    #[test]
    fn validation_catches_bad_sections() {
        let mut c = PipelineConfig::default();
        c.projection.classes = [0, 0, 1];
        assert!(c.validate().is_err());
        let mut c = PipelineConfig::default();
        c.train.smoothed.epsilon = 1.5;
        assert!(c.validate().is_err());
        let c = PipelineConfig {
            folds: 1,
            ..PipelineConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn hash_ignores_paths_but_not_seed() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        b.paths.workspace = "/elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn score_text_round_trip() {
        let file = ScoreFile::new(
            "MD",
            "baseline",
            &[1.5, -3.25, 0.1],
            &[Some(1), None, Some(0)],
            0.0,
        )
        .unwrap();
        let back = ScoreFile::parse(&file.to_text(), "mem").unwrap();
        assert_eq!(back, file);
        assert_eq!(file.rows.iter().filter(|r| r.accepted).count(), 2);
        assert_eq!(file.split_scores(), (vec![1.5, 0.1], vec![-3.25]));
        assert!(ScoreFile::parse("row,label,score,accepted\n", "mem").is_err());
    }
}
