use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use nearood::bench::{generate, LabeledDataset};
use nearood::cli::{
    log_line, run_experiment, set_quiet, PipelineConfig, ScoreFile, TemplateSource,
};
use nearood::gaussian::{
    fit_gaussians_with, FeatureSet, FitOptions, GaussianOodModel, ScoreMethod,
};
use nearood::metrics::{evaluate, format_table, id_accuracy, predict_classes};
use nearood::trainer::{extract_features, train, ClassifierParams, TrainConfig};
use nearood::viz::{project_to_weight_plane, score_density, DensitySeries};
use nearood::{Error, ErrorKind, Result};

/// Near-OOD detection with Mahalanobis and relative Mahalanobis scores on
/// baseline and label-smoothed embeddings.
#[derive(Debug, Parser)]
#[command(name = "nearood", version)]
struct Cli {
    /// Pipeline config (TOML). Built-in defaults when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Workspace directory; overrides `paths.workspace`.
    #[arg(long, global = true, value_name = "DIR")]
    workspace: Option<PathBuf>,
    /// Suppress progress lines on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic benchmark from the `[bench]` section.
    Generate {
        /// Output file. Defaults to `<workspace>/dataset-seed<N>.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a classifier on the ID rows of a dataset.
    Train {
        /// Dataset file from `generate`.
        #[arg(long)]
        data: PathBuf,
        /// Which `[train.*]` section to use.
        #[arg(long, value_enum, default_value_t = Variant::Smoothed)]
        variant: Variant,
        /// Classifier parameters (JSON).
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the class-conditional Gaussians on the ID rows of a feature set.
    Fit {
        #[command(flatten)]
        input: FeatureInput,
        /// Detector model (JSON).
        #[arg(long)]
        out: PathBuf,
        /// Also write the extracted features here.
        #[arg(long)]
        features_out: Option<PathBuf>,
    },
    /// Score every row and mark it accepted when `score >= threshold`.
    Score {
        /// Detector model from `fit`.
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        input: FeatureInput,
        /// `MD` or `RMD`.
        #[arg(long, default_value = "RMD")]
        method: ScoreMethod,
        /// Rows scoring at least this are marked accepted (in-distribution).
        #[arg(long, default_value_t = f64::NEG_INFINITY, allow_negative_numbers = true)]
        threshold: f64,
        /// Score file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute the detection metrics of a score file.
    Eval {
        /// Score file from `score`.
        #[arg(long)]
        scores: PathBuf,
        /// Defaults to `metrics.target_tpr`.
        #[arg(long)]
        target_tpr: Option<f64>,
        /// JSON report path. The text table always goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Project embeddings onto the plane through three class templates.
    Project {
        /// Classifier parameters from `train`.
        #[arg(long)]
        params: PathBuf,
        /// Dataset whose ID rows are projected.
        #[arg(long)]
        data: PathBuf,
        /// Three distinct ID classes, e.g. `0,1,2`. Defaults to `projection.classes`.
        #[arg(long, value_delimiter = ',')]
        classes: Option<Vec<usize>>,
        /// Defaults to `projection.templates`.
        #[arg(long, value_enum)]
        templates: Option<Templates>,
        /// Projection CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Histogram the ID and OOD scores of a score file.
    Density {
        /// Score file from `score`.
        #[arg(long)]
        scores: PathBuf,
        /// Defaults to `metrics.bins`.
        #[arg(long)]
        bins: Option<usize>,
        /// Density CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full cross-validated experiment into `<workspace>/run-<hash>-seed<N>`.
    RunExperiment,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Variant {
    Baseline,
    Smoothed,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Templates {
    Weights,
    Means,
}

/// Features either read directly or extracted from a dataset with a trained classifier.
#[derive(Debug, Args)]
struct FeatureInput {
    /// Feature file (as written by `fit --features-out`).
    #[arg(long, conflicts_with_all = ["params", "data"], required_unless_present = "params")]
    features: Option<PathBuf>,
    /// Classifier parameters; features are extracted from `--data`.
    #[arg(long, requires = "data")]
    params: Option<PathBuf>,
    /// Dataset file from `generate`.
    #[arg(long, requires = "params")]
    data: Option<PathBuf>,
}

impl FeatureInput {
    fn load(&self) -> Result<FeatureSet> {
        match (&self.features, &self.params, &self.data) {
            (Some(f), _, _) => FeatureSet::load(f),
            (None, Some(p), Some(d)) => {
                let params = ClassifierParams::load(p)?;
                let data = LabeledDataset::load(d)?;
                extract_features(&params, &data.inputs, &data.labels)
            }
            _ => Err(Error::ConfigInvalid(
                "pass --features, or --params with --data".into(),
            )),
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(ws) = &cli.workspace {
        config.paths.workspace = ws.clone();
    }
    config.validate()?;
    Ok(config)
}

fn id_only(features: &FeatureSet) -> FeatureSet {
    let rows: Vec<usize> = (0..features.len())
        .filter(|&i| features.labels[i].is_some())
        .collect();
    features.subset(&rows)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn run(cli: &Cli) -> Result<()> {
    let config = load_config(cli)?;
    match &cli.command {
        Command::Generate { out } => {
            let bench = config.effective_bench();
            let dataset = generate(&bench)?;
            let path = match out {
                Some(p) => p.clone(),
                None => {
                    let ws = &config.paths.workspace;
                    std::fs::create_dir_all(ws)
                        .map_err(|e| Error::io(ws.display().to_string(), e))?;
                    ws.join(format!("dataset-seed{}.csv", config.seed))
                }
            };
            dataset.save(&path)?;
            for (c, n) in dataset.class_counts().iter().enumerate() {
                println!("class {c}: {n}");
            }
            println!("OOD: {}", dataset.ood_indices().len());
            println!("wrote {} rows to {}", dataset.len(), path.display());
        }
        Command::Train { data, variant, out } => {
            let dataset = LabeledDataset::load(data)?;
            let section = match variant {
                Variant::Baseline => &config.train.baseline,
                Variant::Smoothed => &config.train.smoothed,
            };
            let cfg = TrainConfig {
                seed: config.seed,
                ..section.clone()
            };
            let rows = dataset.id_indices();
            let x = dataset.inputs.select_rows(&rows);
            let y: Vec<usize> = rows.iter().filter_map(|&i| dataset.labels[i]).collect();
            log_line(&format!(
                "training {} on {} ID rows",
                cfg.source_tag(),
                rows.len()
            ));
            let outcome = train(&x, &y, dataset.class_count, &cfg)?;
            let acc = id_accuracy(&predict_classes(&outcome.params.logits(&x)?), &y)?;
            outcome.params.save(out)?;
            println!(
                "loss {:.6} -> {:.6}, training accuracy {acc:.4}; wrote {}",
                outcome.initial_loss,
                outcome.final_loss,
                out.display()
            );
        }
        Command::Fit {
            input,
            out,
            features_out,
        } => {
            let features = input.load()?;
            if let Some(path) = features_out {
                features.save(path)?;
            }
            let options = FitOptions {
                background: config.detector.background_covariance,
                shrinkage: true,
            };
            let model = fit_gaussians_with(&id_only(&features), &options)?;
            model.save(out)?;
            println!(
                "fit {} classes on {} ID rows (p = {}, shrinkage {:e}); wrote {}",
                model.class_count(),
                model.class_counts().iter().sum::<usize>(),
                model.feature_dim(),
                model.shrinkage_lambda(),
                out.display()
            );
        }
        Command::Score {
            model,
            input,
            method,
            threshold,
            out,
        } => {
            let model = GaussianOodModel::load(model)?;
            let features = input.load()?;
            let sv = model.score(&features, *method)?;
            let file = ScoreFile::new(
                &method.to_string(),
                &features.source_tag,
                &sv.scores,
                &features.labels,
                *threshold,
            )?;
            file.save(out)?;
            let accepted = file.rows.iter().filter(|r| r.accepted).count();
            println!(
                "scored {} rows, {accepted} accepted; wrote {}",
                file.rows.len(),
                out.display()
            );
        }
        Command::Eval {
            scores,
            target_tpr,
            out,
        } => {
            let file = ScoreFile::load(scores)?;
            let (id, ood) = file.split_scores();
            let tpr = target_tpr.unwrap_or(config.metrics.target_tpr);
            let report = evaluate(&file.method, &file.source_tag, &id, &ood, tpr)?;
            print!("{}", format_table(std::slice::from_ref(&report)));
            if let Some(path) = out {
                write_json(path, &report)?;
            }
        }
        Command::Project {
            params,
            data,
            classes,
            templates,
            out,
        } => {
            let params = ClassifierParams::load(params)?;
            let dataset = LabeledDataset::load(data)?;
            let features = extract_features(&params, &dataset.inputs, &dataset.labels)?;
            let classes: [usize; 3] = match classes {
                Some(c) => <[usize; 3]>::try_from(c.as_slice()).map_err(|_| {
                    Error::ConfigInvalid(format!(
                        "--classes needs exactly 3 values, got {}",
                        c.len()
                    ))
                })?,
                None => config.projection.classes,
            };
            let source = match templates {
                Some(Templates::Weights) => TemplateSource::Weights,
                Some(Templates::Means) => TemplateSource::Means,
                None => config.projection.templates,
            };
            let vectors: Vec<Vec<f64>> = match source {
                TemplateSource::Weights => classes
                    .iter()
                    .map(|&c| params.class_template(c).map(<[f64]>::to_vec))
                    .collect::<Result<_>>()?,
                TemplateSource::Means => {
                    let model = fit_gaussians_with(&id_only(&features), &FitOptions::default())?;
                    classes
                        .iter()
                        .map(|&c| {
                            model
                                .class_means()
                                .get(c)
                                .cloned()
                                .ok_or(Error::UnknownClass {
                                    class: c,
                                    class_count: model.class_count(),
                                })
                        })
                        .collect::<Result<_>>()?
                }
            };
            let projection = project_to_weight_plane(
                &features,
                [&vectors[0], &vectors[1], &vectors[2]],
                classes,
            )?;
            projection.save(out)?;
            println!(
                "projected {} points, separation ratio {:.4}; wrote {}",
                projection.points.len(),
                projection.separation_ratio(),
                out.display()
            );
        }
        Command::Density { scores, bins, out } => {
            let file = ScoreFile::load(scores)?;
            let (id, ood) = file.split_scores();
            let bins = bins.unwrap_or(config.metrics.bins);
            let series = match score_density(&file.method, &id, &ood, bins) {
                Err(Error::DegenerateRange) => DensitySeries::degenerate(&file.method, id[0]),
                other => other?,
            };
            series.save(out)?;
            println!("wrote {} bins to {}", series.id_mass.len(), out.display());
        }
        Command::RunExperiment => {
            let (dir, summary) = run_experiment(&config, &config.paths.workspace)?;
            print!("{}", format_table(&summary.aggregate));
            println!(
                "accuracy: baseline {:.4}, label-smoothed {:.4}",
                summary.accuracy.baseline, summary.accuracy.smoothed
            );
            println!("wrote {}", dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    set_quiet(cli.quiet);
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numerical => 4,
            })
        }
    }
}
