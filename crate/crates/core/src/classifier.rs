//! Base classifier, contrastive pretraining and head-only fine-tuning.
//!
//! A classifier is a feature extractor (the body) followed by a single dense
//! head producing two logits. [`SmallCnn`] is the built-in body; other
//! backbones plug in through [`FeatureExtractor`].

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataio::{LabeledSeries, MIN_SERIES_LEN};
use crate::diffusion::{
    NoiseSchedule, DEFAULT_BETA_MAX, DEFAULT_BETA_MIN, DEFAULT_NOISE_STD, DEFAULT_STEPS,
};
use crate::error::{invalid, Result};
use crate::losses::{
    ce_loss, composite_loss, snn_loss, triplet_loss, LossReport, UncertaintyWeights,
    DEFAULT_MARGIN, DEFAULT_SNN_EPSILON, DEFAULT_TEMPERATURE,
};
use crate::reverse::{batches, ChainTrainConfig, ContrastiveSet};
use crate::rng::Rng;
use crate::tensor::{Adam, AdamConfig, DiffTensor, Padding, Tape, Var};

pub const DEFAULT_EMBEDDING_DIM: usize = 32;
/// Stabilizer inside the L2 normalization of embeddings.
const NORMALIZE_EPS: f64 = 1e-12;

/// Maps a `[1, M]` series to a `[d]` embedding on a tape.
pub trait FeatureExtractor: Clone + Send + Sync {
    fn input_len(&self) -> usize;
    fn embedding_dim(&self) -> usize;
    fn init_params(&self, rng: &mut Rng) -> Vec<DiffTensor>;
    fn param_shapes(&self) -> Vec<Vec<usize>>;
    fn embed(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var>;
}

/// conv(16, k7) + relu, conv(32, k5) + relu, global average pool,
/// dense(d) + relu.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmallCnn {
    pub input_len: usize,
    pub embedding_dim: usize,
}

impl SmallCnn {
    const C1: usize = 16;
    const K1: usize = 7;
    const C2: usize = 32;
    const K2: usize = 5;
}

impl FeatureExtractor for SmallCnn {
    fn input_len(&self) -> usize {
        self.input_len
    }

    fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    fn param_shapes(&self) -> Vec<Vec<usize>> {
        vec![
            vec![Self::C1, 1, Self::K1],
            vec![Self::C1],
            vec![Self::C2, Self::C1, Self::K2],
            vec![Self::C2],
            vec![self.embedding_dim, Self::C2],
            vec![self.embedding_dim],
        ]
    }

    fn init_params(&self, rng: &mut Rng) -> Vec<DiffTensor> {
        vec![
            DiffTensor::uniform(&[Self::C1, 1, Self::K1], Self::K1, rng),
            DiffTensor::zeros(&[Self::C1]),
            DiffTensor::uniform(&[Self::C2, Self::C1, Self::K2], Self::C1 * Self::K2, rng),
            DiffTensor::zeros(&[Self::C2]),
            DiffTensor::uniform(&[self.embedding_dim, Self::C2], Self::C2, rng),
            DiffTensor::zeros(&[self.embedding_dim]),
        ]
    }

    fn embed(&self, tape: &mut Tape, p: &[Var], x: Var) -> Result<Var> {
        let h = tape.conv1d(x, p[0], p[1], Padding::Same)?;
        let h = tape.relu(h);
        let h = tape.conv1d(h, p[2], p[3], Padding::Same)?;
        let h = tape.relu(h);
        let h = tape.channel_mean(h)?;
        let h = tape.dense(h, p[4], p[5])?;
        Ok(tape.relu(h))
    }
}

/// Predicted label and class probabilities for one series.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: u8,
    pub probabilities: [f64; 2],
}

/// Softmax over two logits; equal logits resolve to label 0.
pub fn decide(logits: [f64; 2]) -> Prediction {
    let max = logits[0].max(logits[1]);
    let e = logits.map(|l| (l - max).exp());
    let z = e[0] + e[1];
    Prediction {
        label: u8::from(logits[1] > logits[0]),
        probabilities: [e[0] / z, e[1] / z],
    }
}

/// Body parameters followed by the dense head `[2, d]`, `[2]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BaseClassifier<E: FeatureExtractor = SmallCnn> {
    pub extractor: E,
    pub body: Vec<DiffTensor>,
    pub head: Vec<DiffTensor>,
}

/// Builds the small CNN classifier for series of length `m`.
pub fn build_small_cnn(
    m: usize,
    embedding_dim: usize,
    rng: &mut Rng,
) -> Result<BaseClassifier<SmallCnn>> {
    if m < MIN_SERIES_LEN {
        return Err(invalid(format!(
            "series length {m} is below the minimum of {MIN_SERIES_LEN}"
        )));
    }
    if embedding_dim == 0 {
        return Err(invalid("embedding dimension must be positive"));
    }
    BaseClassifier::new(
        SmallCnn {
            input_len: m,
            embedding_dim,
        },
        rng,
    )
}

impl<E: FeatureExtractor> BaseClassifier<E> {
    pub fn new(extractor: E, rng: &mut Rng) -> Result<Self> {
        let body = extractor.init_params(rng);
        let d = extractor.embedding_dim();
        let head = vec![
            DiffTensor::uniform(&[2, d], d, rng),
            DiffTensor::zeros(&[2]),
        ];
        Ok(Self {
            extractor,
            body,
            head,
        })
    }

    /// Reassembles a classifier from stored tensors, checking their shapes.
    pub fn from_parts(extractor: E, body: Vec<DiffTensor>, head: Vec<DiffTensor>) -> Result<Self> {
        let expected = extractor.param_shapes();
        let got: Vec<Vec<usize>> = body.iter().map(|t| t.shape().to_vec()).collect();
        if got != expected {
            return Err(invalid(format!(
                "body shapes {got:?} do not match {expected:?}"
            )));
        }
        let d = extractor.embedding_dim();
        if head.len() != 2 || head[0].shape() != [2, d] || head[1].shape() != [2] {
            return Err(invalid("head must be a [2, d] weight and a [2] bias"));
        }
        Ok(Self {
            extractor,
            body,
            head,
        })
    }

    pub fn input_len(&self) -> usize {
        self.extractor.input_len()
    }

    pub fn embedding_dim(&self) -> usize {
        self.extractor.embedding_dim()
    }

    pub fn params(&self) -> impl Iterator<Item = &DiffTensor> {
        self.body.iter().chain(&self.head)
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut DiffTensor> {
        self.body.iter_mut().chain(self.head.iter_mut())
    }

    /// One flag per parameter tensor (body first), `true` when frozen.
    pub fn frozen_flags(&self) -> Vec<bool> {
        self.params().map(|p| !p.requires_grad()).collect()
    }

    pub fn set_body_frozen(&mut self, frozen: bool) {
        for p in &mut self.body {
            p.set_requires_grad(!frozen);
        }
    }

    /// Checksum over all body values, for the freeze contract.
    pub fn body_checksum(&self) -> u64 {
        crate::tensor::checksum_bits(self.body.iter().flat_map(|t| t.values().iter().copied()))
    }

    fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_len() {
            return Err(invalid(format!(
                "series of length {} given to a classifier built for length {}",
                x.len(),
                self.input_len()
            )));
        }
        Ok(())
    }

    fn embed_var(&self, tape: &mut Tape, body: &[Var], x: &[f64]) -> Result<Var> {
        let xv = tape.constant(&[1, x.len()], x.to_vec())?;
        self.extractor.embed(tape, body, xv)
    }

    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x)?;
        let mut tape = Tape::new();
        let body = tape.bind(&self.body);
        let e = self.embed_var(&mut tape, &body, x)?;
        Ok(tape.value(e).to_vec())
    }

    pub fn head_logits(&self, embedding: &[f64]) -> Result<[f64; 2]> {
        let mut tape = Tape::new();
        let head = tape.bind(&self.head);
        let e = tape.constant(&[embedding.len()], embedding.to_vec())?;
        let l = tape.dense(e, head[0], head[1])?;
        let v = tape.value(l);
        Ok([v[0], v[1]])
    }

    pub fn logits(&self, x: &[f64]) -> Result<[f64; 2]> {
        self.head_logits(&self.embed(x)?)
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        Ok(decide(self.logits(x)?))
    }
}

/// Hyperparameters of one CDNet or baseline training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs_pretrain: usize,
    pub epochs_finetune: usize,
    pub batch_size: usize,
    /// Zero runs every epoch without updating parameters.
    pub learning_rate: f64,
    pub seed: u64,
    pub margin: f64,
    pub temperature: f64,
    pub epsilon_snn: f64,
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub noise_std: f64,
    pub embedding_dim: usize,
    /// Reverse-chain budget; its `noise_std` is replaced by the one above.
    pub chain: ChainTrainConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs_pretrain: 100,
            epochs_finetune: 50,
            batch_size: 16,
            learning_rate: 1e-3,
            seed: 0,
            margin: DEFAULT_MARGIN,
            temperature: DEFAULT_TEMPERATURE,
            epsilon_snn: DEFAULT_SNN_EPSILON,
            steps: DEFAULT_STEPS,
            beta_min: DEFAULT_BETA_MIN,
            beta_max: DEFAULT_BETA_MAX,
            noise_std: DEFAULT_NOISE_STD,
            embedding_dim: DEFAULT_EMBEDDING_DIM,
            chain: ChainTrainConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs_pretrain == 0 || self.epochs_finetune == 0 || self.batch_size == 0 {
            return Err(invalid("epochs and batch size must be positive"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if !(self.temperature > 0.0) || !(self.epsilon_snn > 0.0) {
            return Err(invalid("temperature and epsilon_snn must be positive"));
        }
        if !(self.margin >= 0.0) {
            return Err(invalid("margin must be non-negative"));
        }
        if !(self.noise_std >= 0.0) {
            return Err(invalid("noise_std must be non-negative"));
        }
        if self.embedding_dim == 0 {
            return Err(invalid("embedding dimension must be positive"));
        }
        self.schedule()?;
        self.chain.validate()
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.steps, self.beta_min, self.beta_max)
    }

    fn optimizer(&self) -> Result<Option<Adam>> {
        if self.learning_rate == 0.0 {
            return Ok(None);
        }
        Adam::new(AdamConfig::with_learning_rate(self.learning_rate)).map(Some)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Class probabilities of `x` as a tape var, plus the raw embedding.
fn forward_probs<E: FeatureExtractor>(
    clf: &BaseClassifier<E>,
    tape: &mut Tape,
    body: &[Var],
    head: &[Var],
    x: &[f64],
) -> Result<(Var, Var)> {
    let e = clf.embed_var(tape, body, x)?;
    let logits = tape.dense(e, head[0], head[1])?;
    Ok((tape.softmax(logits), e))
}

/// Contrastive pretraining of the whole classifier and the uncertainty
/// weights. Returns one report per epoch, averaged over batches.
pub fn pretrain<E: FeatureExtractor>(
    clf: &mut BaseClassifier<E>,
    sets: &[ContrastiveSet],
    weights: &mut UncertaintyWeights,
    config: &TrainConfig,
    rng: &mut Rng,
) -> Result<Vec<LossReport>> {
    config.validate()?;
    if sets.len() < 2 {
        return Err(invalid("pretraining needs at least two contrastive sets"));
    }
    if config.batch_size > sets.len() {
        return Err(invalid(format!(
            "batch size {} exceeds the {} available anchors",
            config.batch_size,
            sets.len()
        )));
    }
    let m = clf.input_len();
    for s in sets {
        let lens = std::iter::once(s.anchor.len())
            .chain(s.positives.iter().chain(&s.negatives).map(Vec::len));
        if lens.into_iter().any(|l| l != m) {
            return Err(invalid(format!(
                "contrastive set {} does not match length {m}",
                s.anchor_index
            )));
        }
        if s.positives.is_empty() || s.positives.len() != s.negatives.len() {
            return Err(invalid(
                "each contrastive set needs T positives and T negatives",
            ));
        }
    }

    let mut optimizer = config.optimizer()?;
    let mut order: Vec<usize> = (0..sets.len()).collect();
    let mut log = Vec::with_capacity(config.epochs_pretrain);
    for epoch in 1..=config.epochs_pretrain {
        order.shuffle(rng);
        let mut parts = [Vec::new(), Vec::new(), Vec::new()];
        for range in batches(order.len(), config.batch_size) {
            let batch: Vec<&ContrastiveSet> = order[range].iter().map(|&i| &sets[i]).collect();
            let values = pretrain_batch(clf, weights, &batch, config, optimizer.as_mut())?;
            for (acc, v) in parts.iter_mut().zip(values) {
                acc.push(v);
            }
        }
        log.push(LossReport::new(
            epoch,
            mean(&parts[0]),
            mean(&parts[1]),
            mean(&parts[2]),
            weights.sigmas(),
        ));
    }
    Ok(log)
}

/// Returns the batch's CE, SNN and triplet values.
fn pretrain_batch<E: FeatureExtractor>(
    clf: &mut BaseClassifier<E>,
    weights: &mut UncertaintyWeights,
    batch: &[&ContrastiveSet],
    config: &TrainConfig,
    optimizer: Option<&mut Adam>,
) -> Result<[f64; 3]> {
    let mut tape = Tape::new();
    let body = tape.bind(&clf.body);
    let head = tape.bind(&clf.head);
    let sigma_vars: Vec<Var> = weights.tensors().iter().map(|t| tape.leaf(t)).collect();

    let mut probs = Vec::with_capacity(batch.len());
    let mut anchors = Vec::with_capacity(batch.len());
    let mut first_positives = Vec::with_capacity(batch.len());
    let mut triplets = Vec::with_capacity(batch.len());
    for set in batch {
        let (p, e) = forward_probs(clf, &mut tape, &body, &head, &set.anchor.values)?;
        probs.push(p);
        let embed_all = |tape: &mut Tape, xs: &[Vec<f64>]| -> Result<Vec<Var>> {
            xs.iter().map(|x| clf.embed_var(tape, &body, x)).collect()
        };
        let pos = embed_all(&mut tape, &set.positives)?;
        let neg = embed_all(&mut tape, &set.negatives)?;
        triplets.push(triplet_loss(&mut tape, e, &pos, &neg, config.margin)?);
        anchors.push(tape.l2_normalize(e, NORMALIZE_EPS));
        first_positives.push(tape.l2_normalize(pos[0], NORMALIZE_EPS));
    }
    let labels: Vec<u8> = batch.iter().map(|s| s.anchor.label).collect();
    let l_ce = ce_loss(&mut tape, &probs, &labels)?;

    // Anchors and their step-1 positives form the SNN batch, compared by
    // cosine similarity; each one's positive is its counterpart.
    let pool: Vec<Var> = anchors.iter().chain(&first_positives).copied().collect();
    let partners: Vec<Var> = first_positives.iter().chain(&anchors).copied().collect();
    let l_snn = snn_loss(
        &mut tape,
        &pool,
        &partners,
        config.temperature,
        config.epsilon_snn,
    )?;

    let l_tri = tape.stack(&triplets)?;
    let l_tri = tape.mean(l_tri);
    let total = composite_loss(
        &mut tape,
        l_ce,
        l_snn,
        l_tri,
        [sigma_vars[0], sigma_vars[1], sigma_vars[2]],
    )?;
    let values = [tape.scalar(l_ce), tape.scalar(l_snn), tape.scalar(l_tri)];

    if let Some(adam) = optimizer {
        tape.backward(total)?;
        tape.write_grads(&body, &mut clf.body);
        tape.write_grads(&head, &mut clf.head);
        for (v, t) in sigma_vars.iter().zip(weights.tensors_mut()) {
            tape.write_grads(std::slice::from_ref(v), std::slice::from_mut(t));
        }
        adam.step(
            clf.body
                .iter_mut()
                .chain(clf.head.iter_mut())
                .chain(weights.tensors_mut()),
        );
    }
    Ok(values)
}

/// Trains with cross-entropy over `series` and returns the mean loss per
/// epoch. Only tensors that require gradients move.
fn train_ce<E: FeatureExtractor>(
    clf: &mut BaseClassifier<E>,
    series: &[LabeledSeries],
    epochs: usize,
    config: &TrainConfig,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let mut optimizer = config.optimizer()?;
    let mut order: Vec<usize> = (0..series.len()).collect();
    let mut history = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        order.shuffle(rng);
        let mut losses = Vec::new();
        for range in batches(order.len(), config.batch_size) {
            let mut tape = Tape::new();
            let body = tape.bind(&clf.body);
            let head = tape.bind(&clf.head);
            let mut probs = Vec::with_capacity(range.len());
            let mut labels = Vec::with_capacity(range.len());
            for &i in &order[range] {
                probs.push(forward_probs(clf, &mut tape, &body, &head, &series[i].values)?.0);
                labels.push(series[i].label);
            }
            let loss = ce_loss(&mut tape, &probs, &labels)?;
            losses.push(tape.scalar(loss));
            if let Some(adam) = optimizer.as_mut() {
                tape.backward(loss)?;
                tape.write_grads(&body, &mut clf.body);
                tape.write_grads(&head, &mut clf.head);
                adam.step(clf.body.iter_mut().chain(clf.head.iter_mut()));
            }
        }
        history.push(mean(&losses));
    }
    Ok(history)
}

fn check_training_series(m: usize, series: &[LabeledSeries]) -> Result<()> {
    if series.is_empty() {
        return Err(invalid("no training series"));
    }
    if let Some(s) = series.iter().find(|s| s.len() != m) {
        return Err(invalid(format!(
            "series of length {} given to a classifier built for length {m}",
            s.len()
        )));
    }
    Ok(())
}

/// Freezes the body and trains only the head with cross-entropy. The body
/// stays frozen afterwards. Returns the mean CE per epoch.
pub fn finetune<E: FeatureExtractor>(
    clf: &mut BaseClassifier<E>,
    series: &[LabeledSeries],
    config: &TrainConfig,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    config.validate()?;
    check_training_series(clf.input_len(), series)?;
    clf.set_body_frozen(true);
    let embedded: Vec<LabeledSeries> = series
        .iter()
        .map(|s| Ok(LabeledSeries::new(clf.embed(&s.values)?, s.label)))
        .collect::<Result<_>>()?;

    let mut optimizer = config.optimizer()?;
    let mut order: Vec<usize> = (0..embedded.len()).collect();
    let d = clf.embedding_dim();
    let mut history = Vec::with_capacity(config.epochs_finetune);
    for _ in 0..config.epochs_finetune {
        order.shuffle(rng);
        let mut losses = Vec::new();
        for range in batches(order.len(), config.batch_size) {
            let mut tape = Tape::new();
            let head = tape.bind(&clf.head);
            let mut probs = Vec::with_capacity(range.len());
            let mut labels = Vec::with_capacity(range.len());
            for &i in &order[range] {
                let e = tape.constant(&[d], embedded[i].values.clone())?;
                let logits = tape.dense(e, head[0], head[1])?;
                probs.push(tape.softmax(logits));
                labels.push(embedded[i].label);
            }
            let loss = ce_loss(&mut tape, &probs, &labels)?;
            losses.push(tape.scalar(loss));
            if let Some(adam) = optimizer.as_mut() {
                tape.backward(loss)?;
                tape.write_grads(&head, &mut clf.head);
                adam.step(clf.head.iter_mut());
            }
        }
        history.push(mean(&losses));
    }
    Ok(history)
}

/// The comparison baseline: the same architecture trained end to end with
/// cross-entropy for `epochs_pretrain + epochs_finetune` epochs.
pub fn train_baseline<E: FeatureExtractor>(
    clf: &mut BaseClassifier<E>,
    series: &[LabeledSeries],
    config: &TrainConfig,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    config.validate()?;
    check_training_series(clf.input_len(), series)?;
    train_ce(
        clf,
        series,
        config.epochs_pretrain + config.epochs_finetune,
        config,
        rng,
    )
}

/// Fraction of `series` whose predicted label matches.
pub fn accuracy<E: FeatureExtractor>(
    clf: &BaseClassifier<E>,
    series: &[LabeledSeries],
) -> Result<f64> {
    if series.is_empty() {
        return Err(invalid("accuracy over an empty set"));
    }
    let mut correct = 0usize;
    for s in series {
        if clf.predict(&s.values)?.label == s.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / series.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn decide_examples() {
        let p = decide([2.0, 2.0]);
        assert_eq!(p.label, 0);
        assert_eq!(p.probabilities, [0.5, 0.5]);
        let p = decide([0.0, 10.0]);
        assert_eq!(p.label, 1);
        assert!(p.probabilities[1] > 0.9999);
    }

    #[test]
    fn shapes_and_determinism() {
        let a = build_small_cnn(16, 8, &mut rng::seeded(3)).unwrap();
        let b = build_small_cnn(16, 8, &mut rng::seeded(3)).unwrap();
        assert_eq!(a, b);
        let x: Vec<f64> = (0..16).map(|i| (i as f64 * 0.4).sin()).collect();
        assert_eq!(a.embed(&x).unwrap().len(), 8);
        let p = a.predict(&x).unwrap();
        assert!((p.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(a.predict(&x[..15]).is_err());
        assert!(build_small_cnn(7, 8, &mut rng::seeded(0)).is_err());
    }

    #[test]
    fn embed_then_head_matches_logits() {
        let c = build_small_cnn(12, 4, &mut rng::seeded(1)).unwrap();
        let x: Vec<f64> = (0..12).map(|i| i as f64 / 7.0 - 0.5).collect();
        let e = c.embed(&x).unwrap();
        assert_eq!(c.head_logits(&e).unwrap(), c.logits(&x).unwrap());
    }

    #[test]
    fn from_parts_checks_shapes() {
        let c = build_small_cnn(12, 4, &mut rng::seeded(1)).unwrap();
        assert!(BaseClassifier::from_parts(c.extractor, c.body.clone(), c.head.clone()).is_ok());
        assert!(
            BaseClassifier::from_parts(c.extractor, c.body[1..].to_vec(), c.head.clone()).is_err()
        );
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            temperature: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            learning_rate: -1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let c = TrainConfig {
            seed: 17,
            learning_rate: 3e-4,
            ..TrainConfig::default()
        };
        let back: TrainConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(c, back);
    }
}
