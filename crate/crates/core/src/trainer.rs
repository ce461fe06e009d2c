//! A small ReLU feed-forward classifier trained with (optionally label-smoothed)
//! cross-entropy and Adam. Its penultimate activations are the embeddings the
//! Gaussian detector is fitted on.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::FeatureSet;
use crate::numerics::{dot, Matrix, RngState};

pub const BASELINE_TAG: &str = "baseline";
pub const SMOOTHED_TAG: &str = "label-smoothed";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `out × in`
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weights: Matrix::zeros(outputs, inputs),
            bias: vec![0.0; outputs],
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows()
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.weights
                .row_iter()
                .zip(&self.bias)
                .map(|(w, b)| dot(w, x) + b),
        );
    }
}

/// Weights of `input → hidden (ReLU)… → penultimate (ReLU) → linear head`.
///
/// The last layer is the head; its rows are the class templates `w_c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams {
    pub layers: Vec<DenseLayer>,
    #[serde(default)]
    pub source_tag: String,
}

/// Output of a single forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub logits: Vec<f64>,
    pub penultimate: Vec<f64>,
}

impl ClassifierParams {
    /// All-zero parameters for `sizes = [d, hidden…, p, C]`.
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        validate_sizes(sizes)?;
        Ok(Self {
            layers: sizes
                .windows(2)
                .map(|w| DenseLayer::zeros(w[0], w[1]))
                .collect(),
            source_tag: String::new(),
        })
    }

    /// Fan-in scaled uniform initialization: `U(±sqrt(6/fan_in))` for ReLU
    /// layers, `U(±sqrt(3/fan_in))` for the head; zero biases.
    pub fn init(sizes: &[usize], rng: &mut RngState) -> Result<Self> {
        let mut params = Self::zeros(sizes)?;
        let last = params.layers.len() - 1;
        for (l, layer) in params.layers.iter_mut().enumerate() {
            let gain = if l == last { 3.0 } else { 6.0 };
            let limit = (gain / layer.inputs() as f64).sqrt();
            for w in layer.weights.as_mut_slice() {
                *w = rng.uniform_range(-limit, limit);
            }
        }
        Ok(params)
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_dim()];
        sizes.extend(self.layers.iter().map(DenseLayer::outputs));
        sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn class_count(&self) -> usize {
        self.head().outputs()
    }

    pub fn feature_dim(&self) -> usize {
        self.head().inputs()
    }

    pub fn head(&self) -> &DenseLayer {
        self.layers.last().expect("at least two layers")
    }

    /// Row `c` of the head: the last-layer weight template of class `c`.
    pub fn class_template(&self, c: usize) -> Result<&[f64]> {
        if c >= self.class_count() {
            return Err(Error::UnknownClass {
                class: c,
                class_count: self.class_count(),
            });
        }
        Ok(self.head().weights.row(c))
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.as_slice().len() + l.bias.len())
            .sum()
    }

    /// Parameter buffers in a fixed order (per layer: weights, then bias).
    pub fn buffers(&self) -> impl Iterator<Item = &[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
    }

    pub fn buffers_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.buffers().flatten().copied().collect()
    }

    pub fn is_finite(&self) -> bool {
        self.buffers().flatten().all(|v| v.is_finite())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Forward> {
        self.check_input(x)?;
        let mut acts = Activations::default();
        self.forward_into(x, &mut acts);
        let last = self.layers.len() - 1;
        Ok(Forward {
            logits: acts.outputs[last].clone(),
            penultimate: if last == 0 {
                x.to_vec()
            } else {
                acts.outputs[last - 1].clone()
            },
        })
    }

    /// Runs the network, keeping every layer's post-activation output.
    fn forward_into(&self, x: &[f64], acts: &mut Activations) {
        let n = self.layers.len();
        acts.outputs.resize_with(n, Vec::new);
        for l in 0..n {
            let (done, rest) = acts.outputs.split_at_mut(l);
            let input = if l == 0 { x } else { &done[l - 1] };
            let out = &mut rest[0];
            self.layers[l].apply(input, out);
            if l + 1 < n {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
    }

    /// Logits for every row of `inputs`.
    pub fn logits(&self, inputs: &Matrix) -> Result<Matrix> {
        if inputs.cols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: inputs.cols(),
            });
        }
        let mut acts = Activations::default();
        let c = self.class_count();
        let mut out = Matrix::zeros(inputs.rows(), c);
        for (i, x) in inputs.row_iter().enumerate() {
            self.forward_into(x, &mut acts);
            out.row_mut(i)
                .copy_from_slice(acts.outputs.last().expect("non-empty"));
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = ParamsFile {
            format: PARAMS_FORMAT.into(),
            layer_sizes: self.layer_sizes(),
            params: self.clone(),
        };
        let text = serde_json::to_string_pretty(&file)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let file: ParamsFile = serde_json::from_str(&text)?;
        if file.format != PARAMS_FORMAT {
            return Err(Error::ConfigInvalid(format!(
                "unsupported params format {:?}",
                file.format
            )));
        }
        validate_sizes(&file.layer_sizes)?;
        let params = file.params;
        if params.layers.len() + 1 != file.layer_sizes.len() {
            return Err(Error::ConfigInvalid(
                "layer count does not match layer_sizes".into(),
            ));
        }
        for (l, layer) in params.layers.iter().enumerate() {
            if layer.inputs() != file.layer_sizes[l]
                || layer.outputs() != file.layer_sizes[l + 1]
                || layer.bias.len() != layer.outputs()
            {
                return Err(Error::ConfigInvalid(format!(
                    "layer {l} has the wrong shape"
                )));
            }
        }
        if !params.is_finite() {
            return Err(Error::NonFinite("classifier parameters"));
        }
        Ok(params)
    }
}

const PARAMS_FORMAT: &str = "nearood-classifier/1";

#[derive(Serialize, Deserialize)]
struct ParamsFile {
    format: String,
    layer_sizes: Vec<usize>,
    #[serde(flatten)]
    params: ClassifierParams,
}

fn validate_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 3 {
        return Err(Error::ConfigInvalid(
            "architecture needs input, penultimate and class sizes".into(),
        ));
    }
    if sizes.contains(&0) {
        return Err(Error::ConfigInvalid("layer sizes must be positive".into()));
    }
    Ok(())
}

#[derive(Default)]
struct Activations {
    outputs: Vec<Vec<f64>>,
}

/// Label-smoothed target distributions, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedTargets {
    pub targets: Matrix,
}

/// Correct class gets `(1-ε) + ε/C`, every other class `ε/C`.
pub fn smooth_targets(
    labels: &[usize],
    class_count: usize,
    epsilon: f64,
) -> Result<SmoothedTargets> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::EpsilonOutOfRange(epsilon));
    }
    let off = epsilon / class_count as f64;
    let on = (1.0 - epsilon) + off;
    let mut targets = Matrix::zeros(labels.len(), class_count);
    for (i, &l) in labels.iter().enumerate() {
        if l >= class_count {
            return Err(Error::LabelOutOfRange {
                label: l,
                class_count,
            });
        }
        let row = targets.row_mut(i);
        row.fill(off);
        row[l] = on;
    }
    Ok(SmoothedTargets { targets })
}

/// `log softmax(logits)` in the max-shifted form.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

/// Soft-target cross-entropy `-Σ_c y_c log softmax(logits)_c` of one row.
pub fn cross_entropy(logits: &[f64], target: &[f64]) -> f64 {
    -dot(&log_softmax(logits), target)
}

/// Mean soft-target cross-entropy over the batch and its exact gradient.
pub fn loss_and_gradient(
    params: &ClassifierParams,
    inputs: &Matrix,
    targets: &SmoothedTargets,
) -> Result<(f64, ClassifierParams)> {
    let rows: Vec<usize> = (0..inputs.rows()).collect();
    let mut grads = ClassifierParams::zeros(&params.layer_sizes())?;
    let mut ws = Workspace::default();
    let loss = accumulate_gradient(params, inputs, &targets.targets, &rows, &mut grads, &mut ws)?;
    Ok((loss, grads))
}

#[derive(Default)]
struct Workspace {
    acts: Activations,
    delta: Vec<f64>,
    next_delta: Vec<f64>,
}

/// Overwrites `grads` with the batch-mean gradient over `rows`; returns the batch-mean loss.
fn accumulate_gradient(
    params: &ClassifierParams,
    inputs: &Matrix,
    targets: &Matrix,
    rows: &[usize],
    grads: &mut ClassifierParams,
    ws: &mut Workspace,
) -> Result<f64> {
    if inputs.cols() != params.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: params.input_dim(),
            got: inputs.cols(),
        });
    }
    if targets.cols() != params.class_count() {
        return Err(Error::DimensionMismatch {
            expected: params.class_count(),
            got: targets.cols(),
        });
    }
    if targets.rows() != inputs.rows() {
        return Err(Error::LengthMismatch {
            left: inputs.rows(),
            right: targets.rows(),
        });
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    grads.buffers_mut().for_each(|b| b.fill(0.0));
    let scale = 1.0 / rows.len() as f64;
    let n_layers = params.layers.len();
    let mut loss = 0.0;

    for &r in rows {
        let x = inputs.row(r);
        let y = targets.row(r);
        params.forward_into(x, &mut ws.acts);

        let logits = &ws.acts.outputs[n_layers - 1];
        let logp = log_softmax(logits);
        loss -= dot(&logp, y);
        // d loss / d logits = softmax - y (targets sum to one)
        ws.delta.clear();
        ws.delta
            .extend(logp.iter().zip(y).map(|(lp, t)| (lp.exp() - t) * scale));

        for l in (0..n_layers).rev() {
            let input = if l == 0 { x } else { &ws.acts.outputs[l - 1] };
            let layer = &params.layers[l];
            let g = &mut grads.layers[l];
            for (o, &d) in ws.delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.bias[o] += d;
                for (gw, &a) in g.weights.row_mut(o).iter_mut().zip(input) {
                    *gw += d * a;
                }
            }
            if l == 0 {
                break;
            }
            ws.next_delta.clear();
            ws.next_delta.resize(layer.inputs(), 0.0);
            for (o, &d) in ws.delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (nd, &w) in ws.next_delta.iter_mut().zip(layer.weights.row(o)) {
                    *nd += d * w;
                }
            }
            // ReLU derivative on the previous layer's output
            for (nd, &a) in ws.next_delta.iter_mut().zip(input) {
                if a <= 0.0 {
                    *nd = 0.0;
                }
            }
            std::mem::swap(&mut ws.delta, &mut ws.next_delta);
        }
    }
    Ok(loss * scale)
}

/// Adam moment decays and denominator epsilon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConstants {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConstants {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    #[default]
    Constant,
    /// Half-cosine decay from the base rate to zero over all steps.
    Cosine,
}

impl Schedule {
    pub fn rate(self, base: f64, step: usize, total: usize) -> f64 {
        match self {
            Schedule::Constant => base,
            Schedule::Cosine => {
                let frac = step as f64 / total.max(1) as f64;
                0.5 * base * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }
}

/// Optional holdout-based early stopping; keeps the parameters with the best holdout loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EarlyStop {
    pub holdout_fraction: f64,
    pub patience: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epsilon: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub hidden_sizes: Vec<usize>,
    pub feature_dim: usize,
    pub adam: AdamConstants,
    pub schedule: Schedule,
    pub early_stop: Option<EarlyStop>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            learning_rate: 0.001,
            epochs: 40,
            batch_size: 8,
            seed: 0,
            hidden_sizes: vec![64],
            feature_dim: 16,
            adam: AdamConstants::default(),
            schedule: Schedule::Constant,
            early_stop: None,
        }
    }
}

impl TrainConfig {
    pub fn baseline() -> Self {
        Self {
            epsilon: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(Error::EpsilonOutOfRange(self.epsilon));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::ConfigInvalid(
                "learning_rate must be positive".into(),
            ));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.feature_dim == 0 {
            return Err(Error::ConfigInvalid(
                "epochs, batch_size and feature_dim must be positive".into(),
            ));
        }
        if self.hidden_sizes.contains(&0) {
            return Err(Error::ConfigInvalid("hidden sizes must be positive".into()));
        }
        let a = self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return Err(Error::ConfigInvalid("adam constants out of range".into()));
        }
        if let Some(es) = self.early_stop {
            if !(es.holdout_fraction > 0.0 && es.holdout_fraction < 1.0) || es.patience == 0 {
                return Err(Error::ConfigInvalid(
                    "early_stop needs holdout_fraction in (0,1) and patience > 0".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn layer_sizes(&self, input_dim: usize, class_count: usize) -> Vec<usize> {
        let mut sizes = vec![input_dim];
        sizes.extend(&self.hidden_sizes);
        sizes.push(self.feature_dim);
        sizes.push(class_count);
        sizes
    }

    pub fn source_tag(&self) -> &'static str {
        if self.epsilon == 0.0 {
            BASELINE_TAG
        } else {
            SMOOTHED_TAG
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ClassifierParams,
    /// Full-pass training loss before the first step.
    pub initial_loss: f64,
    /// Full-pass training loss of the returned parameters.
    pub final_loss: f64,
    /// Mean minibatch loss of each epoch that ran.
    pub epoch_losses: Vec<f64>,
}

struct Adam {
    constants: AdamConstants,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(constants: AdamConstants, n: usize) -> Self {
        Self {
            constants,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut ClassifierParams, grads: &ClassifierParams, lr: f64) {
        self.t += 1;
        let AdamConstants { beta1, beta2, eps } = self.constants;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        let mut k = 0;
        for (p, g) in params.buffers_mut().zip(grads.buffers()) {
            for (pi, &gi) in p.iter_mut().zip(g) {
                let m = &mut self.m[k];
                let v = &mut self.v[k];
                *m = beta1 * *m + (1.0 - beta1) * gi;
                *v = beta2 * *v + (1.0 - beta2) * gi * gi;
                *pi -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                k += 1;
            }
        }
    }
}

fn mean_loss(params: &ClassifierParams, inputs: &Matrix, targets: &Matrix, rows: &[usize]) -> f64 {
    let mut acts = Activations::default();
    let mut total = 0.0;
    for &r in rows {
        params.forward_into(inputs.row(r), &mut acts);
        total += cross_entropy(acts.outputs.last().expect("non-empty"), targets.row(r));
    }
    total / rows.len() as f64
}

/// Minibatch Adam on smoothed cross-entropy. Deterministic given `config.seed`.
pub fn train(
    inputs: &Matrix,
    labels: &[usize],
    class_count: usize,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if labels.len() != inputs.rows() {
        return Err(Error::LengthMismatch {
            left: inputs.rows(),
            right: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::EmptyInput);
    }
    let targets = smooth_targets(labels, class_count, config.epsilon)?.targets;
    let mut rng = RngState::new(config.seed);
    let mut params =
        ClassifierParams::init(&config.layer_sizes(inputs.cols(), class_count), &mut rng)?;
    params.source_tag = config.source_tag().to_string();

    let mut train_rows: Vec<usize> = (0..labels.len()).collect();
    let mut holdout_rows = Vec::new();
    if let Some(es) = config.early_stop {
        rng.shuffle(&mut train_rows);
        let n_hold = ((labels.len() as f64 * es.holdout_fraction).round() as usize)
            .clamp(1, labels.len() - 1);
        holdout_rows = train_rows.split_off(labels.len() - n_hold);
        train_rows.sort_unstable();
        holdout_rows.sort_unstable();
    }

    let initial_loss = mean_loss(&params, inputs, &targets, &train_rows);
    let steps_per_epoch = train_rows.len().div_ceil(config.batch_size);
    let total_steps = steps_per_epoch * config.epochs;

    let mut adam = Adam::new(config.adam, params.parameter_count());
    let mut grads = ClassifierParams::zeros(&params.layer_sizes())?;
    let mut ws = Workspace::default();
    let mut order = train_rows.clone();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut step = 0;
    let mut best: Option<(f64, ClassifierParams)> = None;
    let mut since_best = 0;

    for epoch in 0..config.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let loss = accumulate_gradient(&params, inputs, &targets, batch, &mut grads, &mut ws)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            epoch_loss += loss * batch.len() as f64;
            let lr = config
                .schedule
                .rate(config.learning_rate, step, total_steps);
            adam.step(&mut params, &grads, lr);
            step += 1;
        }
        if !params.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        epoch_losses.push(epoch_loss / order.len() as f64);

        if config.early_stop.is_some() {
            let hold = mean_loss(&params, inputs, &targets, &holdout_rows);
            if !hold.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            if best.as_ref().is_none_or(|(b, _)| hold < *b) {
                best = Some((hold, params.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= config.early_stop.map_or(usize::MAX, |e| e.patience) {
                    break;
                }
            }
        }
    }
    if let Some((_, p)) = best {
        params = p;
    }
    let final_loss = mean_loss(&params, inputs, &targets, &train_rows);
    Ok(TrainOutcome {
        params,
        initial_loss,
        final_loss,
        epoch_losses,
    })
}

/// Penultimate activations of every input row, labels passed through.
pub fn extract_features(
    params: &ClassifierParams,
    inputs: &Matrix,
    labels: &[Option<usize>],
) -> Result<FeatureSet> {
    if inputs.cols() != params.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: params.input_dim(),
            got: inputs.cols(),
        });
    }
    let p = params.feature_dim();
    let n_layers = params.layers.len();
    let mut features = Matrix::zeros(inputs.rows(), p);
    let mut acts = Activations::default();
    for (i, x) in inputs.row_iter().enumerate() {
        params.forward_into(x, &mut acts);
        let pen = if n_layers == 1 {
            x
        } else {
            &acts.outputs[n_layers - 2]
        };
        features.row_mut(i).copy_from_slice(pen);
    }
    FeatureSet::new(
        features,
        labels.to_vec(),
        params.class_count(),
        params.source_tag.clone(),
    )
}
