//! Loss, Adadelta, the mini-batch loop, scoring and stratified splitting.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::architectures::NetworkSpec;
use crate::error::{Error, Result};
use crate::evaluation;
use crate::nn::{GradientSet, Network, Parameters};
use crate::tensor::Tensor;

/// Probabilities are clamped to `[CLAMP, 1 - CLAMP]` inside the log.
pub const PROBABILITY_CLAMP: f64 = 1e-7;

/// Examples per work unit in the parallel gradient reduction. Fixed so the
/// summation order, and therefore every bit of the result, does not depend
/// on the thread count.
const REDUCTION_CHUNK: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdadeltaConfig {
    pub rho: f64,
    pub epsilon: f64,
}

impl Default for AdadeltaConfig {
    fn default() -> Self {
        Self {
            rho: 0.95,
            epsilon: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adadelta: AdadeltaConfig,
    pub seed: u64,
    pub shuffle: bool,
    /// Compute training AUC every this many epochs (classifiers only).
    pub eval_every: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 1000,
            adadelta: AdadeltaConfig::default(),
            seed: 42,
            shuffle: true,
            eval_every: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        let AdadeltaConfig { rho, epsilon } = self.adadelta;
        if !(0.0..1.0).contains(&rho) || !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "adadelta needs rho in [0, 1) and epsilon > 0, got rho={rho} epsilon={epsilon}"
            )));
        }
        if self.eval_every == Some(0) {
            return Err(Error::Config("eval cadence must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub train_auc: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }
}

/// Binary cross-entropy of one example, and its gradient with respect to
/// the two softmax logits (before batch averaging).
fn bce_example(p: f64, label: u8) -> (f64, [f64; 2]) {
    let y = f64::from(label);
    let pc = p.clamp(PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP);
    let loss = -(y * pc.ln() + (1.0 - y) * (1.0 - pc).ln());
    // softmax output is (1 - p, p); onehot(y) is (1 - y, y)
    (loss, [y - p, p - y])
}

#[derive(Debug, Clone, PartialEq)]
pub struct BceOutput {
    pub loss: f64,
    /// Per-example gradient with respect to the two logits, already divided
    /// by the batch size.
    pub logit_grads: Vec<[f64; 2]>,
}

/// Mean binary cross-entropy of churn probabilities `p = P(class 1)`.
pub fn bce_loss(probabilities: &[f64], labels: &[u8]) -> Result<BceOutput> {
    if probabilities.len() != labels.len() || labels.is_empty() {
        return Err(Error::Shape(format!(
            "{} probabilities for {} labels",
            probabilities.len(),
            labels.len()
        )));
    }
    check_labels(labels)?;
    let n = labels.len() as f64;
    let mut total = 0.0;
    let logit_grads = probabilities
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let (l, g) = bce_example(p, y);
            total += l;
            [g[0] / n, g[1] / n]
        })
        .collect();
    Ok(BceOutput {
        loss: total / n,
        logit_grads,
    })
}

fn check_labels(labels: &[u8]) -> Result<()> {
    match labels.iter().find(|&&l| l > 1) {
        Some(&bad) => Err(Error::Label(bad)),
        None => Ok(()),
    }
}

/// Running averages of squared gradients and squared updates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdadeltaState {
    pub config: AdadeltaConfig,
    pub sq_grad: Parameters,
    pub sq_update: Parameters,
}

impl AdadeltaState {
    pub fn new(params: &Parameters, config: AdadeltaConfig) -> Self {
        Self {
            config,
            sq_grad: params.zeros_like(),
            sq_update: params.zeros_like(),
        }
    }
}

fn adadelta_update(x: &mut f64, g: f64, eg: &mut f64, edx: &mut f64, rho: f64, eps: f64) {
    *eg = rho * *eg + (1.0 - rho) * g * g;
    let dx = -((*edx + eps) / (*eg + eps)).sqrt() * g;
    *edx = rho * *edx + (1.0 - rho) * dx * dx;
    *x += dx;
}

/// One Adadelta update. Rejects non-finite gradients before touching any
/// parameter, naming the offending layer index.
pub fn adadelta_step(params: &mut Parameters, grads: &GradientSet, state: &mut AdadeltaState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.sq_grad.len() {
        return Err(Error::Shape(format!(
            "{} parameters, {} gradients, {} optimizer slots",
            params.len(),
            grads.len(),
            state.sq_grad.len()
        )));
    }
    if let Some(layer) = grads.first_non_finite_layer() {
        return Err(Error::NonFinite { layer });
    }
    let AdadeltaConfig { rho, epsilon } = state.config;
    for (((p, g), eg), edx) in params
        .blocks
        .iter_mut()
        .zip(&grads.blocks)
        .zip(state.sq_grad.blocks.iter_mut())
        .zip(state.sq_update.blocks.iter_mut())
    {
        let values = p.weights.iter_mut().chain(p.biases.iter_mut());
        let gs = g.weights.iter().chain(&g.biases);
        let egs = eg.weights.iter_mut().chain(eg.biases.iter_mut());
        let edxs = edx.weights.iter_mut().chain(edx.biases.iter_mut());
        for (((x, g), eg), edx) in values.zip(gs).zip(egs).zip(edxs) {
            adadelta_update(x, *g, eg, edx, rho, epsilon);
        }
    }
    Ok(())
}

/// What the loop optimises.
pub(crate) enum Objective<'a> {
    /// Fused softmax + binary cross-entropy against 0/1 labels.
    Classify(&'a [u8]),
    /// Mean squared error between the network output and its own input.
    Reconstruct,
}

fn example_loss_and_grad(
    net: &Network,
    params: &Parameters,
    input: &Tensor,
    objective: &Objective<'_>,
    index: usize,
    seed: u64,
) -> Result<(f64, GradientSet)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (out, cache) = net.forward(params, input, true, &mut rng)?;
    match objective {
        Objective::Classify(labels) => {
            let (loss, g) = bce_example(out.data()[1], labels[index]);
            let grads = net.backward_from_logits(params, &cache, &Tensor::vector(g.to_vec()))?;
            Ok((loss, grads))
        }
        Objective::Reconstruct => {
            let n = out.len() as f64;
            let mut loss = 0.0;
            let g: Vec<f64> = out
                .data()
                .iter()
                .zip(input.data())
                .map(|(y, x)| {
                    loss += (y - x) * (y - x);
                    2.0 * (y - x) / n
                })
                .collect();
            let grads = net.backward(params, &cache, &Tensor::vector(g))?;
            Ok((loss / n, grads))
        }
    }
}

/// The shared mini-batch loop.
///
/// Random stream (ChaCha8 seeded with `config.seed`), consumed in this
/// order: parameter initialisation (skipped when `initial` is given), then
/// per epoch the shuffle permutation, then per batch one `u64` per example
/// that seeds that example's dropout masks.
pub(crate) fn fit(
    net: &Network,
    inputs: &[Tensor],
    objective: Objective<'_>,
    config: &TrainConfig,
    initial: Option<Parameters>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Parameters, TrainHistory)> {
    config.validate()?;
    if inputs.is_empty() {
        return Err(Error::Empty("training set has no examples".into()));
    }
    let expected = net.spec().input;
    for (i, x) in inputs.iter().enumerate() {
        let fits = match x.shape() {
            [r, c, ch] => (*r, *c, *ch) == (expected.rows, expected.cols, expected.channels),
            [r, c] => expected.channels == 1 && (*r, *c) == (expected.rows, expected.cols),
            _ => false,
        };
        if !fits {
            return Err(Error::Shape(format!(
                "example {i} has shape {:?}, network expects {expected}",
                x.shape()
            )));
        }
    }
    if let Objective::Classify(labels) = &objective {
        if labels.len() != inputs.len() {
            return Err(Error::Shape(format!("{} labels for {} examples", labels.len(), inputs.len())));
        }
        check_labels(labels)?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = match initial {
        Some(p) => p,
        None => net.init_params(&mut rng),
    };
    let mut state = AdadeltaState::new(&params, config.adadelta);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut history = TrainHistory::default();

    for epoch in 0..config.epochs {
        let started = Instant::now();
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let seeds: Vec<u64> = batch.iter().map(|_| rng.random()).collect();
            let work: Vec<(usize, u64)> = batch.iter().copied().zip(seeds).collect();
            let partials: Vec<Result<(f64, GradientSet)>> = work
                .par_chunks(REDUCTION_CHUNK)
                .map(|chunk| {
                    let mut acc = params.zeros_like();
                    let mut loss = 0.0;
                    for &(i, seed) in chunk {
                        let (l, g) = example_loss_and_grad(net, &params, &inputs[i], &objective, i, seed)?;
                        loss += l;
                        acc.accumulate(&g);
                    }
                    Ok((loss, acc))
                })
                .collect();
            let mut grads = params.zeros_like();
            for partial in partials {
                let (loss, g) = partial?;
                epoch_loss += loss;
                grads.accumulate(&g);
            }
            grads.scale(1.0 / batch.len() as f64);
            adadelta_step(&mut params, &grads, &mut state).map_err(|e| match e {
                Error::NonFinite { layer } => Error::Layer {
                    index: layer,
                    name: net.spec().layers[layer].name.clone(),
                    reason: format!("non-finite gradient in epoch {}", epoch + 1),
                },
                other => other,
            })?;
        }

        let train_auc = match (&objective, config.eval_every) {
            (Objective::Classify(labels), Some(k)) if (epoch + 1) % k == 0 => {
                let scores = predict_with(net, &params, inputs)?;
                evaluation::auc(&scores, labels).ok()
            }
            _ => None,
        };
        let loss = epoch_loss / inputs.len() as f64;
        if !loss.is_finite() {
            return Err(Error::Config(format!("training loss diverged in epoch {}", epoch + 1)));
        }
        let record = EpochRecord {
            epoch: epoch + 1,
            loss,
            train_auc,
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        history.epochs.push(record);
    }
    Ok((params, history))
}

/// Trains a softmax classifier on 0/1 labels.
pub fn train(
    spec: &NetworkSpec,
    images: &[Tensor],
    labels: &[u8],
    config: &TrainConfig,
) -> Result<(Parameters, TrainHistory)> {
    train_with_progress(spec, images, labels, config, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with_progress(
    spec: &NetworkSpec,
    images: &[Tensor],
    labels: &[u8],
    config: &TrainConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Parameters, TrainHistory)> {
    let net = Network::new(spec.clone())?;
    if !spec.ends_in_softmax() || net.report().output().len() != 2 {
        return Err(Error::Config("classifier must end in a 2-unit softmax".into()));
    }
    fit(&net, images, Objective::Classify(labels), config, None, on_epoch)
}

fn predict_with(net: &Network, params: &Parameters, images: &[Tensor]) -> Result<Vec<f64>> {
    images
        .par_iter()
        .map(|x| net.infer(params, x).map(|p| p.data()[1]))
        .collect()
}

/// Inference-mode churn probability `P(class 1)` per image, in input order.
pub fn predict(spec: &NetworkSpec, params: &Parameters, images: &[Tensor]) -> Result<Vec<f64>> {
    let net = Network::new(spec.clone())?;
    predict_with(&net, params, images)
}

/// Per-class shuffle and proportional cut. Each class sends
/// `round_ties_even(ratio * class_size)` members to the training side.
/// Returned indices are in ascending order.
pub fn stratified_split_indices(labels: &[u8], ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio {ratio} outside (0, 1)")));
    }
    check_labels(labels)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut present = 0;
    for class in 0..=1u8 {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        present += 1;
        members.shuffle(&mut rng);
        let cut = (ratio * members.len() as f64).round_ties_even() as usize;
        train.extend_from_slice(&members[..cut]);
        test.extend_from_slice(&members[cut..]);
    }
    if present < 2 && !labels.is_empty() {
        log::warn!("stratified split on a single-class dataset");
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Splits `items` by their labels; see [`stratified_split_indices`].
pub fn stratified_split<T: Clone>(items: &[T], labels: &[u8], ratio: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if items.len() != labels.len() {
        return Err(Error::Shape(format!("{} items for {} labels", items.len(), labels.len())));
    }
    let (train, test) = stratified_split_indices(labels, ratio, seed)?;
    Ok((
        train.iter().map(|&i| items[i].clone()).collect(),
        test.iter().map(|&i| items[i].clone()).collect(),
    ))
}
