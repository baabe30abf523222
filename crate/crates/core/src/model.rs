//! Feed-forward projection head trained by gradient ascent on batch-mean
//! smooth-nDCG.
//!
//! The model maps a feature vector through affine layers (with an activation
//! on every hidden layer) and L2-normalizes the output, so cosine similarity
//! between two embeddings is their dot product.
//!
//! Training follows the usual loop: draw a batch, embed it, treat every batch
//! element as a query over the rest of the batch, score the candidates by
//! cosine similarity, read graded relevances from the [`RelevanceMatrix`] and
//! ascend the mean smooth-nDCG.

use std::path::Path;
use std::time::Instant;

use rand::distr::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datastore::DocumentRecord;
use crate::error::{Error, Result};
use crate::math::{smooth_ndcg_with_grad, LossConfig, ScoredList};
use crate::relevance::RelevanceMatrix;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

const UNIT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `h`.
    #[inline]
    fn derivative(self, z: f64, h: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - h * h,
        }
    }
}

/// One affine map, weights stored row-major as `outputs × inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn inputs(&self) -> usize {
        self.weights.len() / self.bias.len()
    }

    fn outputs(&self) -> usize {
        self.bias.len()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n_in = x.len();
        self.bias
            .iter()
            .enumerate()
            .map(|(o, b)| {
                let row = &self.weights[o * n_in..(o + 1) * n_in];
                b + dot(row, x)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Checkpoint", into = "Checkpoint")]
pub struct ProjectionModel {
    layer_dims: Vec<usize>,
    activation: Activation,
    seed: u64,
    layers: Vec<Dense>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    layer_dims: Vec<usize>,
    activation: Activation,
    seed: u64,
    layers: Vec<Dense>,
}

impl From<ProjectionModel> for Checkpoint {
    fn from(m: ProjectionModel) -> Self {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            layer_dims: m.layer_dims,
            activation: m.activation,
            seed: m.seed,
            layers: m.layers,
        }
    }
}

impl TryFrom<Checkpoint> for ProjectionModel {
    type Error = Error;

    fn try_from(c: Checkpoint) -> Result<Self> {
        if c.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::input(format!(
                "unsupported checkpoint format version {}",
                c.format_version
            )));
        }
        ProjectionModel::from_layers(c.layer_dims, c.activation, c.seed, c.layers)
    }
}

/// Per-parameter gradients, shaped like the model's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }
}

/// Intermediate values of a forward pass, kept for backpropagation.
struct Trace {
    /// `inputs[l]` is the input to layer `l`; one entry per layer per item.
    inputs: Vec<Vec<Vec<f64>>>,
    /// Pre-activations per layer per item.
    pre: Vec<Vec<Vec<f64>>>,
    /// Norm of the final pre-normalization output per item.
    norms: Vec<f64>,
    embeddings: Vec<Vec<f64>>,
}

impl ProjectionModel {
    /// Glorot-uniform weights, zero biases, deterministic in `seed`.
    pub fn init(layer_dims: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        validate_dims(layer_dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = layer_dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-a, a).expect("finite bounds");
                Dense {
                    weights: (0..fan_in * fan_out)
                        .map(|_| dist.sample(&mut rng))
                        .collect(),
                    bias: vec![0.0; fan_out],
                }
            })
            .collect();
        Ok(ProjectionModel {
            layer_dims: layer_dims.to_vec(),
            activation,
            seed,
            layers,
        })
    }

    pub fn from_layers(
        layer_dims: Vec<usize>,
        activation: Activation,
        seed: u64,
        layers: Vec<Dense>,
    ) -> Result<Self> {
        validate_dims(&layer_dims)?;
        if layers.len() != layer_dims.len() - 1 {
            return Err(Error::input(format!(
                "{} layers for {} layer dims",
                layers.len(),
                layer_dims.len()
            )));
        }
        for (l, (layer, w)) in layers.iter().zip(layer_dims.windows(2)).enumerate() {
            if layer.bias.len() != w[1] || layer.weights.len() != w[0] * w[1] {
                return Err(Error::input(format!(
                    "layer {l}: expected {}x{} weights and {} biases",
                    w[1], w[0], w[1]
                )));
            }
            if layer
                .weights
                .iter()
                .chain(&layer.bias)
                .any(|v| !v.is_finite())
            {
                return Err(Error::input(format!("layer {l} has non-finite parameters")));
            }
        }
        Ok(ProjectionModel {
            layer_dims,
            activation,
            seed,
            layers,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn embedding_dim(&self) -> usize {
        *self.layer_dims.last().expect("validated dims")
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Embeds a batch of feature vectors into unit-norm embeddings.
    pub fn forward(&self, features: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        Ok(self.trace(features)?.embeddings)
    }

    /// Embeds a single feature vector.
    pub fn embed(&self, features: &[f64]) -> Result<Vec<f64>> {
        self.check_input(0, features)?;
        let (_, _, out) = self.run_one(features);
        normalize(out).ok_or(Error::DegenerateEmbedding { index: 0 })
    }

    fn check_input(&self, index: usize, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::input(format!(
                "item {index}: expected {} features, found {}",
                self.input_dim(),
                x.len()
            )));
        }
        Ok(())
    }

    /// Returns per-layer inputs, pre-activations and the final output.
    fn run_one(&self, x: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>) {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.apply(&h);
            let next = if l == last {
                z.clone()
            } else {
                z.iter().map(|&v| self.activation.apply(v)).collect()
            };
            inputs.push(std::mem::replace(&mut h, next));
            pre.push(z);
        }
        (inputs, pre, h)
    }

    fn trace(&self, features: &[Vec<f64>]) -> Result<Trace> {
        let n_layers = self.layers.len();
        let mut trace = Trace {
            inputs: vec![Vec::with_capacity(features.len()); n_layers],
            pre: vec![Vec::with_capacity(features.len()); n_layers],
            norms: Vec::with_capacity(features.len()),
            embeddings: Vec::with_capacity(features.len()),
        };
        for (i, x) in features.iter().enumerate() {
            self.check_input(i, x)?;
            let (inputs, pre, out) = self.run_one(x);
            let norm = dot(&out, &out).sqrt();
            if !norm.is_finite() || norm <= 0.0 {
                return Err(Error::DegenerateEmbedding { index: i });
            }
            trace
                .embeddings
                .push(out.iter().map(|v| v / norm).collect());
            trace.norms.push(norm);
            for (l, (inp, z)) in inputs.into_iter().zip(pre).enumerate() {
                trace.inputs[l].push(inp);
                trace.pre[l].push(z);
            }
        }
        Ok(trace)
    }

    /// Backpropagates `d_embeddings` (gradient of a scalar objective with
    /// respect to each unit embedding) to the parameters.
    fn backward(&self, trace: &Trace, d_embeddings: &[Vec<f64>]) -> Gradients {
        let mut grads: Vec<Dense> = self
            .layers
            .iter()
            .map(|l| Dense::zeros(l.inputs(), l.outputs()))
            .collect();
        let last = self.layers.len() - 1;
        for (item, g) in d_embeddings.iter().enumerate() {
            let e = &trace.embeddings[item];
            let norm = trace.norms[item];
            // Through e = u / |u|: du = (g − e (e·g)) / |u|.
            let eg = dot(e, g);
            let mut delta: Vec<f64> = g
                .iter()
                .zip(e)
                .map(|(gi, ei)| (gi - ei * eg) / norm)
                .collect();
            for l in (0..=last).rev() {
                let layer = &self.layers[l];
                if l != last {
                    let z = &trace.pre[l][item];
                    let h = &trace.inputs[l + 1][item];
                    for ((d, zi), hi) in delta.iter_mut().zip(z).zip(h) {
                        *d *= self.activation.derivative(*zi, *hi);
                    }
                }
                let x = &trace.inputs[l][item];
                let n_in = x.len();
                let gl = &mut grads[l];
                for (o, d) in delta.iter().enumerate() {
                    if *d == 0.0 {
                        continue;
                    }
                    gl.bias[o] += d;
                    for (gw, xi) in gl.weights[o * n_in..(o + 1) * n_in].iter_mut().zip(x) {
                        *gw += d * xi;
                    }
                }
                if l > 0 {
                    let mut back = vec![0.0; n_in];
                    for (o, d) in delta.iter().enumerate() {
                        if *d == 0.0 {
                            continue;
                        }
                        for (b, w) in back
                            .iter_mut()
                            .zip(&layer.weights[o * n_in..(o + 1) * n_in])
                        {
                            *b += d * w;
                        }
                    }
                    delta = back;
                }
            }
        }
        Gradients { layers: grads }
    }

    /// Batch loss and its gradient with respect to every parameter.
    pub fn loss_and_gradients(
        &self,
        features: &[Vec<f64>],
        years: &[i32],
        matrix: &RelevanceMatrix,
        cfg: &LossConfig,
    ) -> Result<(f64, Gradients)> {
        let trace = self.trace(features)?;
        let (loss, d_emb) = batch_loss(&trace.embeddings, years, matrix, cfg)?;
        Ok((loss, self.backward(&trace, &d_emb)))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: e.line(),
            message: e.to_string(),
        })
    }
}

fn validate_dims(layer_dims: &[usize]) -> Result<()> {
    if layer_dims.len() < 2 {
        return Err(Error::param(format!(
            "need at least 2 layer dims, got {}",
            layer_dims.len()
        )));
    }
    if layer_dims.contains(&0) {
        return Err(Error::param("layer dims must be positive"));
    }
    Ok(())
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// L2-normalizes `v`; `None` for a zero or non-finite vector.
pub fn normalize(mut v: Vec<f64>) -> Option<Vec<f64>> {
    let norm = dot(&v, &v).sqrt();
    if !norm.is_finite() || norm <= 0.0 {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Some(v)
}

pub(crate) fn is_unit(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite()) && (dot(v, v).sqrt() - 1.0).abs() <= UNIT_NORM_TOLERANCE
}

/// All-pairs cosine similarity of unit-norm embeddings.
pub fn cosine_matrix(embeddings: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if let Some(i) = embeddings.iter().position(|e| !is_unit(e)) {
        return Err(Error::input(format!("embedding {i} is not unit-norm")));
    }
    Ok(gram(embeddings))
}

fn gram(embeddings: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = embeddings.len();
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let d = dot(&embeddings[i], &embeddings[j]);
            m[i][j] = d;
            m[j][i] = d;
        }
    }
    m
}

/// Mean smooth-nDCG over the batch, each element acting as a query over the
/// others, and its gradient with respect to every embedding coordinate.
///
/// Scores are the dot products of the given embeddings, which equal cosine
/// similarities for unit-norm rows.
pub fn batch_loss(
    embeddings: &[Vec<f64>],
    years: &[i32],
    matrix: &RelevanceMatrix,
    cfg: &LossConfig,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let n = embeddings.len();
    if n < 2 {
        return Err(Error::input(format!("batch size must be >= 2, got {n}")));
    }
    if years.len() != n {
        return Err(Error::input(format!(
            "{n} embeddings vs {} years",
            years.len()
        )));
    }
    let dim = embeddings[0].len();
    if embeddings.iter().any(|e| e.len() != dim) {
        return Err(Error::input("embeddings have inconsistent dimensions"));
    }
    cfg.validate()?;
    let cols = years
        .iter()
        .map(|&y| matrix.year_index(y))
        .collect::<Result<Vec<_>>>()?;

    let sims = gram(embeddings);
    let mut grads = vec![vec![0.0; dim]; n];
    let mut total = 0.0;
    let mut scores = Vec::with_capacity(n - 1);
    let mut rels = Vec::with_capacity(n - 1);
    for q in 0..n {
        let row = &matrix.values()[cols[q]];
        scores.clear();
        rels.clear();
        for i in (0..n).filter(|&i| i != q) {
            scores.push(sims[q][i]);
            rels.push(row[cols[i]]);
        }
        let list = ScoredList::new(&scores, &rels)?;
        let (value, g) = smooth_ndcg_with_grad(&list, cfg)?;
        total += value;
        for (i, gi) in (0..n).filter(|&i| i != q).zip(g) {
            if gi == 0.0 {
                continue;
            }
            // s = e_q · e_i
            for d in 0..dim {
                grads[q][d] += gi * embeddings[i][d];
                grads[i][d] += gi * embeddings[q][d];
            }
        }
    }
    let scale = 1.0 / n as f64;
    grads.iter_mut().flatten().for_each(|g| *g *= scale);
    Ok((total * scale, grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    SgdMomentum { momentum: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub eta: f64,
    pub batch_size: usize,
    pub max_iterations: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            eta: 0.5,
            batch_size: 64,
            max_iterations: 1000,
            seed: 0,
            optimizer: Optimizer::SgdMomentum { momentum: 0.9 },
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return Err(Error::param(format!("eta must be >= 0, got {}", self.eta)));
        }
        if self.batch_size < 2 {
            return Err(Error::param(format!(
                "batch_size must be >= 2, got {}",
                self.batch_size
            )));
        }
        if self.max_iterations < 1 {
            return Err(Error::param("max_iterations must be >= 1"));
        }
        if let Optimizer::SgdMomentum { momentum } = self.optimizer {
            if !(0.0..1.0).contains(&momentum) {
                return Err(Error::param(format!(
                    "momentum must be in [0, 1), got {momentum}"
                )));
            }
        }
        Ok(())
    }
}

/// Held-out evaluation attached to a training report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSnapshot {
    pub mae: f64,
    pub map: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    /// Mean smooth-nDCG of each iteration's batch, before its update.
    pub losses: Vec<f64>,
    /// Wall-clock seconds per iteration. Not reproducible, so it is left out
    /// of serialized reports unless populated on purpose.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub iteration_seconds: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_eval: Option<EvalSnapshot>,
}

/// Stateful training loop: batch sampling, loss, backprop and update.
pub struct Trainer<'a> {
    model: ProjectionModel,
    features: Vec<&'a [f64]>,
    years: Vec<i32>,
    matrix: &'a RelevanceMatrix,
    tcfg: TrainingConfig,
    lcfg: LossConfig,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    velocity: Option<Vec<Dense>>,
    report: TrainingReport,
}

impl<'a> Trainer<'a> {
    pub fn new(
        model: ProjectionModel,
        dataset: &'a [DocumentRecord],
        matrix: &'a RelevanceMatrix,
        tcfg: TrainingConfig,
        lcfg: LossConfig,
    ) -> Result<Self> {
        tcfg.validate()?;
        lcfg.validate()?;
        let mut features = Vec::with_capacity(dataset.len());
        let mut years = Vec::with_capacity(dataset.len());
        for r in dataset {
            let year = r
                .year
                .ok_or_else(|| Error::input(format!("record {} is unlabeled", r.doc_id)))?;
            matrix.year_index(year)?;
            if r.features.len() != model.input_dim() {
                return Err(Error::input(format!(
                    "record {}: expected {} features, found {}",
                    r.doc_id,
                    model.input_dim(),
                    r.features.len()
                )));
            }
            features.push(r.features.as_slice());
            years.push(year);
        }
        if dataset.len() < tcfg.batch_size {
            return Err(Error::input(format!(
                "dataset has {} labeled records, fewer than batch size {}",
                dataset.len(),
                tcfg.batch_size
            )));
        }
        let velocity = match tcfg.optimizer {
            Optimizer::Sgd => None,
            Optimizer::SgdMomentum { .. } => Some(
                model
                    .layers
                    .iter()
                    .map(|l| Dense::zeros(l.inputs(), l.outputs()))
                    .collect(),
            ),
        };
        let n = features.len();
        Ok(Trainer {
            model,
            features,
            years,
            matrix,
            rng: ChaCha8Rng::seed_from_u64(tcfg.seed),
            tcfg,
            lcfg,
            order: (0..n).collect(),
            cursor: n,
            velocity,
            report: TrainingReport::default(),
        })
    }

    pub fn model(&self) -> &ProjectionModel {
        &self.model
    }

    pub fn report(&self) -> &TrainingReport {
        &self.report
    }

    pub fn iterations_done(&self) -> usize {
        self.report.losses.len()
    }

    pub fn is_finished(&self) -> bool {
        self.iterations_done() >= self.tcfg.max_iterations
    }

    /// Next batch of dataset positions, sampled without replacement; the
    /// order is reshuffled whenever fewer than a full batch remain.
    pub fn next_batch(&mut self) -> Vec<usize> {
        let b = self.tcfg.batch_size;
        if self.cursor + b > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let batch = self.order[self.cursor..self.cursor + b].to_vec();
        self.cursor += b;
        batch
    }

    /// Loss of the current model on the given batch, without updating.
    pub fn evaluate_batch(&self, batch: &[usize]) -> Result<f64> {
        let (x, y) = self.gather(batch);
        let emb = self.model.forward(&x)?;
        Ok(batch_loss(&emb, &y, self.matrix, &self.lcfg)?.0)
    }

    fn gather(&self, batch: &[usize]) -> (Vec<Vec<f64>>, Vec<i32>) {
        (
            batch.iter().map(|&i| self.features[i].to_vec()).collect(),
            batch.iter().map(|&i| self.years[i]).collect(),
        )
    }

    /// One ascent step on `batch`; returns the loss before the update.
    pub fn step_on(&mut self, batch: &[usize]) -> Result<f64> {
        let iteration = self.iterations_done();
        let started = Instant::now();
        let (x, y) = self.gather(batch);
        let (loss, grads) = self
            .model
            .loss_and_gradients(&x, &y, self.matrix, &self.lcfg)
            .map_err(|e| match e {
                Error::DegenerateEmbedding { index } => Error::NumericFailure {
                    iteration,
                    message: format!("degenerate embedding at batch index {index}"),
                },
                other => other,
            })?;
        if !loss.is_finite() {
            return Err(Error::NumericFailure {
                iteration,
                message: format!("loss is {loss}"),
            });
        }
        self.apply(grads);
        if self
            .model
            .layers
            .iter()
            .any(|l| l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()))
        {
            return Err(Error::NumericFailure {
                iteration,
                message: "parameters became non-finite".into(),
            });
        }
        self.report.losses.push(loss);
        self.report
            .iteration_seconds
            .push(started.elapsed().as_secs_f64());
        Ok(loss)
    }

    pub fn step(&mut self) -> Result<f64> {
        let batch = self.next_batch();
        self.step_on(&batch)
    }

    fn apply(&mut self, grads: Gradients) {
        let eta = self.tcfg.eta;
        match (&mut self.velocity, self.tcfg.optimizer) {
            (Some(velocity), Optimizer::SgdMomentum { momentum }) => {
                for ((layer, v), g) in self.model.layers.iter_mut().zip(velocity).zip(grads.layers)
                {
                    for ((w, vw), gw) in layer.weights.iter_mut().zip(&mut v.weights).zip(g.weights)
                    {
                        *vw = momentum * *vw + gw;
                        *w += eta * *vw;
                    }
                    for ((b, vb), gb) in layer.bias.iter_mut().zip(&mut v.bias).zip(g.bias) {
                        *vb = momentum * *vb + gb;
                        *b += eta * *vb;
                    }
                }
            }
            _ => {
                for (layer, g) in self.model.layers.iter_mut().zip(grads.layers) {
                    for (w, gw) in layer.weights.iter_mut().zip(g.weights) {
                        *w += eta * gw;
                    }
                    for (b, gb) in layer.bias.iter_mut().zip(g.bias) {
                        *b += eta * gb;
                    }
                }
            }
        }
    }

    pub fn finish(self) -> (ProjectionModel, TrainingReport) {
        (self.model, self.report)
    }
}

/// Runs `tcfg.max_iterations` ascent steps.
pub fn train(
    model: ProjectionModel,
    dataset: &[DocumentRecord],
    matrix: &RelevanceMatrix,
    tcfg: &TrainingConfig,
    lcfg: &LossConfig,
) -> Result<(ProjectionModel, TrainingReport)> {
    let mut trainer = Trainer::new(model, dataset, matrix, tcfg.clone(), *lcfg)?;
    while !trainer.is_finished() {
        trainer.step()?;
    }
    Ok(trainer.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::RelevanceSpec;

    #[test]
    fn init_shapes_and_bounds() {
        let m = ProjectionModel::init(&[8, 4], Activation::Relu, 3).unwrap();
        assert_eq!(m.layers().len(), 1);
        assert_eq!(m.layers()[0].weights.len(), 32);
        assert_eq!(m.layers()[0].bias, vec![0.0; 4]);
        let bound = (6.0f64 / 12.0).sqrt();
        assert!(m.layers()[0].weights.iter().all(|w| w.abs() <= bound));

        let again = ProjectionModel::init(&[8, 4], Activation::Relu, 3).unwrap();
        assert_eq!(m, again);
        let other = ProjectionModel::init(&[8, 4], Activation::Relu, 4).unwrap();
        assert_ne!(m, other);

        assert!(ProjectionModel::init(&[8], Activation::Relu, 0).is_err());
        assert!(ProjectionModel::init(&[8, 0], Activation::Relu, 0).is_err());
    }

    #[test]
    fn identity_model_passes_unit_vectors() {
        let mut layer = Dense::zeros(3, 3);
        for i in 0..3 {
            layer.weights[i * 3 + i] = 1.0;
        }
        let m = ProjectionModel::from_layers(vec![3, 3], Activation::Tanh, 0, vec![layer]).unwrap();
        let v = vec![0.6, 0.0, 0.8];
        assert_eq!(m.forward(&[v.clone()]).unwrap(), vec![v]);
    }

    #[test]
    fn zero_output_is_degenerate() {
        let m =
            ProjectionModel::from_layers(vec![2, 2], Activation::Relu, 0, vec![Dense::zeros(2, 2)])
                .unwrap();
        let err = m.forward(&[vec![1.0, 1.0], vec![0.0, 0.0]]).unwrap_err();
        assert!(matches!(err, Error::DegenerateEmbedding { index: 0 }));
    }

    #[test]
    fn wrong_feature_dim_rejected() {
        let m = ProjectionModel::init(&[4, 2], Activation::Relu, 0).unwrap();
        assert!(matches!(
            m.forward(&[vec![1.0; 3]]),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn cosine_matrix_basics() {
        let m = cosine_matrix(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(m, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let e = vec![0.6, 0.8];
        let m = cosine_matrix(&[e.clone(), e.clone(), e]).unwrap();
        assert!(m.iter().flatten().all(|v| (v - 1.0).abs() < 1e-12));
        assert!(cosine_matrix(&[vec![1.0, 1.0]]).is_err());
    }

    #[test]
    fn batch_of_two_same_year_is_ideal() {
        let matrix =
            RelevanceMatrix::build(&[1900, 1901], &RelevanceSpec::Thresholded { gamma: 3.0 })
                .unwrap();
        let (loss, _) = batch_loss(
            &[vec![1.0, 0.0], vec![0.0, 1.0]],
            &[1900, 1900],
            &matrix,
            &LossConfig::default(),
        )
        .unwrap();
        assert_eq!(loss, 1.0);
        let err = batch_loss(
            &[vec![1.0, 0.0], vec![0.0, 1.0]],
            &[1900, 1950],
            &matrix,
            &LossConfig::default(),
        );
        assert!(matches!(err, Err(Error::YearNotFound(1950))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = ProjectionModel::init(&[5, 7, 3], Activation::Tanh, 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ckpt.json");
        m.save(&p).unwrap();
        let back = ProjectionModel::load(&p).unwrap();
        assert_eq!(back, m);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.contains("\"format_version\":1"));
    }

    #[test]
    fn training_config_validation() {
        let mut c = TrainingConfig::default();
        c.batch_size = 1;
        assert!(c.validate().is_err());
        let mut c = TrainingConfig::default();
        c.optimizer = Optimizer::SgdMomentum { momentum: 1.0 };
        assert!(c.validate().is_err());
    }
}
