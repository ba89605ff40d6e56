//! Learned reverse transitions between instances.
//!
//! For every (process, class) pair there is one [`ReverseChain`]: `T`
//! independent step denoisers, denoiser `t` trained to map `x^t` back to
//! `x^{t-1}` on trajectories drawn from the forward process. Composing
//! denoisers `t, t-1, ..., 1` on a noisy mixture yields the contrastive
//! samples used for pretraining.
//!
//! Chains are named by the forward trajectories they were trained on:
//! `Across { from: a, toward: b }` saw trajectories starting at a class-`a`
//! series and drifting toward a class-`b` partner, so running it in reverse
//! pulls states back into class `a`.

use rand::seq::{IndexedRandom, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use crate::diffusion::TrajectoryKind as ChainKind;

use crate::dataio::LabeledSeries;
use crate::diffusion::{forward_trajectory, NoiseSchedule, DEFAULT_NOISE_STD};
use crate::error::{invalid, CdnetError, Result};
use crate::rng::{self, Rng};
use crate::tensor::{Adam, AdamConfig, DiffTensor, Padding, Tape, Var};

pub const DENOISER_CHANNELS: usize = 16;
pub const DENOISER_KERNEL: usize = 5;

/// The four chains of a binary problem, in storage order.
pub const ALL_CHAINS: [ChainKind; 4] = [
    ChainKind::Within { class: 0 },
    ChainKind::Within { class: 1 },
    ChainKind::Across { from: 0, toward: 1 },
    ChainKind::Across { from: 1, toward: 0 },
];

impl ChainKind {
    /// Class of the trajectory start `x^0`.
    pub fn start_class(self) -> u8 {
        match self {
            ChainKind::Within { class } => class,
            ChainKind::Across { from, .. } => from,
        }
    }

    /// Class the forward process interpolates toward.
    pub fn partner_class(self) -> u8 {
        match self {
            ChainKind::Within { class } => class,
            ChainKind::Across { toward, .. } => toward,
        }
    }

    pub fn label(self) -> String {
        match self {
            ChainKind::Within { class } => format!("within{class}"),
            ChainKind::Across { from, toward } => format!("across{from}to{toward}"),
        }
    }

    pub fn parse_label(s: &str) -> Option<Self> {
        ALL_CHAINS.into_iter().find(|k| k.label() == s)
    }
}

/// Small residual CNN approximating one reverse transition:
/// `x + conv(relu(conv(relu(conv(x)))))`, every conv same-padded.
#[derive(Clone, Debug, PartialEq)]
pub struct StepDenoiser {
    pub step: usize,
    pub params: Vec<DiffTensor>,
}

impl StepDenoiser {
    pub fn new(step: usize, rng: &mut Rng) -> Self {
        let (c, k) = (DENOISER_CHANNELS, DENOISER_KERNEL);
        let params = vec![
            DiffTensor::uniform(&[c, 1, k], k, rng),
            DiffTensor::zeros(&[c]),
            DiffTensor::uniform(&[c, c, k], c * k, rng),
            DiffTensor::zeros(&[c]),
            DiffTensor::zeros(&[1, c, k]),
            DiffTensor::zeros(&[1]),
        ];
        Self { step, params }
    }

    /// Expected tensor shapes, in parameter order.
    pub fn param_shapes() -> Vec<Vec<usize>> {
        let (c, k) = (DENOISER_CHANNELS, DENOISER_KERNEL);
        vec![
            vec![c, 1, k],
            vec![c],
            vec![c, c, k],
            vec![c],
            vec![1, c, k],
            vec![1],
        ]
    }

    /// Records the network on `tape`; `x` has shape [1, M].
    pub fn forward(&self, tape: &mut Tape, p: &[Var], x: Var) -> Result<Var> {
        let h = tape.conv1d(x, p[0], p[1], Padding::Same)?;
        let h = tape.relu(h);
        let h = tape.conv1d(h, p[2], p[3], Padding::Same)?;
        let h = tape.relu(h);
        let r = tape.conv1d(h, p[4], p[5], Padding::Same)?;
        tape.add(x, r)
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() < DENOISER_KERNEL {
            return Err(invalid(format!(
                "series of length {} is shorter than the denoiser kernel",
                x.len()
            )));
        }
        let mut tape = Tape::new();
        let p = tape.bind(&self.params);
        let xv = tape.constant(&[1, x.len()], x.to_vec())?;
        let y = self.forward(&mut tape, &p, xv)?;
        Ok(tape.value(y).to_vec())
    }

    /// Mean over pairs of `||f(input) - target||^2 / M`.
    pub fn batch_mse(&self, pairs: &[(&[f64], &[f64])]) -> Result<f64> {
        let mut total = 0.0;
        for (input, target) in pairs {
            let y = self.apply(input)?;
            total += sq_dist(&y, target) / y.len() as f64;
        }
        Ok(total / pairs.len().max(1) as f64)
    }

    fn train_batch(&mut self, adam: &mut Adam, batch: &[(&[f64], &[f64])]) -> Result<f64> {
        let m = batch[0].0.len();
        let mut tape = Tape::new();
        let p = tape.bind(&self.params);
        let mut per_sample = Vec::with_capacity(batch.len());
        for (input, target) in batch {
            let x = tape.constant(&[1, m], input.to_vec())?;
            let y = self.forward(&mut tape, &p, x)?;
            let t = tape.constant(&[1, m], target.to_vec())?;
            let d = tape.sub(y, t)?;
            per_sample.push(tape.dot(d, d)?);
        }
        let stacked = tape.stack(&per_sample)?;
        let mean = tape.mean(stacked);
        let loss = tape.scale(mean, 1.0 / m as f64);
        tape.backward(loss)?;
        tape.write_grads(&p, &mut self.params);
        adam.step(self.params.iter_mut());
        Ok(tape.scalar(loss))
    }
}

/// `T` step denoisers for one chain kind, ordered by step `1..=T`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReverseChain {
    pub kind: ChainKind,
    pub denoisers: Vec<StepDenoiser>,
}

impl ReverseChain {
    pub fn steps(&self) -> usize {
        self.denoisers.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub noise_std: f64,
    /// Validation MSE is recorded every this many epochs.
    pub eval_every: usize,
    pub validation_size: usize,
}

impl Default for ChainTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 16,
            learning_rate: 1e-3,
            noise_std: DEFAULT_NOISE_STD,
            eval_every: 20,
            validation_size: 64,
        }
    }
}

impl ChainTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.validation_size == 0 {
            return Err(invalid(
                "epochs, batch_size and validation_size must be positive",
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err(invalid("chain learning rate must be positive"));
        }
        if !(self.noise_std >= 0.0) {
            return Err(invalid("noise_std must be non-negative"));
        }
        Ok(())
    }
}

/// Validation history of one chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainTrainReport {
    pub kind: ChainKind,
    /// Epochs completed at each checkpoint; the first entry is 0.
    pub checkpoints: Vec<usize>,
    /// `val_mse[c][t - 1]`: validation MSE of denoiser `t` at checkpoint `c`.
    pub val_mse: Vec<Vec<f64>>,
    /// MSE of leaving `x^t` unchanged, per step, on the same batch.
    pub identity_mse: Vec<f64>,
}

impl ChainTrainReport {
    pub fn final_mse(&self) -> &[f64] {
        self.val_mse.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

fn class_members(series: &[LabeledSeries], class: u8) -> Vec<usize> {
    series
        .iter()
        .enumerate()
        .filter(|(_, s)| s.label == class)
        .map(|(i, _)| i)
        .collect()
}

fn pick_partner(pool: &[usize], exclude: Option<usize>, rng: &mut Rng) -> Option<usize> {
    let eligible: Vec<usize> = pool
        .iter()
        .copied()
        .filter(|&i| Some(i) != exclude)
        .collect();
    eligible.choose(rng).copied()
}

/// Training pairs `(x^t, x^{t-1})`, grouped by step.
type StepPairs = Vec<Vec<(Vec<f64>, Vec<f64>)>>;

fn sample_pairs(
    series: &[LabeledSeries],
    kind: ChainKind,
    starts: &[usize],
    partners: &[usize],
    schedule: &NoiseSchedule,
    noise_std: f64,
    rng: &mut Rng,
) -> Result<StepPairs> {
    let steps = schedule.steps();
    let mut pairs: StepPairs = vec![Vec::with_capacity(starts.len()); steps];
    let exclude_self = matches!(kind, ChainKind::Within { .. });
    for &a in starts {
        let partner = pick_partner(partners, exclude_self.then_some(a), rng).ok_or_else(|| {
            CdnetError::ClassCoverage(format!("no eligible partner for {}", kind.label()))
        })?;
        let traj = forward_trajectory(series, a, partner, schedule, noise_std, rng)?;
        let start = &series[a].values;
        for t in 1..=steps {
            pairs[t - 1].push((
                traj.state(start, t).to_vec(),
                traj.state(start, t - 1).to_vec(),
            ));
        }
    }
    Ok(pairs)
}

fn as_refs(pairs: &[(Vec<f64>, Vec<f64>)]) -> Vec<(&[f64], &[f64])> {
    pairs
        .iter()
        .map(|(a, b)| (a.as_slice(), b.as_slice()))
        .collect()
}

fn check_coverage(series: &[LabeledSeries], kind: ChainKind) -> Result<(Vec<usize>, Vec<usize>)> {
    let starts = class_members(series, kind.start_class());
    let partners = class_members(series, kind.partner_class());
    for (class, members) in [
        (kind.start_class(), &starts),
        (kind.partner_class(), &partners),
    ] {
        if members.len() < 2 {
            return Err(CdnetError::ClassCoverage(format!(
                "chain {} needs at least 2 samples of class {class}, found {}",
                kind.label(),
                members.len()
            )));
        }
    }
    Ok((starts, partners))
}

/// Trains the `T` denoisers of one chain. Each step has its own optimizer
/// and learns from ground-truth forward trajectories, resampled every epoch.
pub fn train_reverse_chain(
    series: &[LabeledSeries],
    kind: ChainKind,
    schedule: &NoiseSchedule,
    config: &ChainTrainConfig,
    rng: &mut Rng,
) -> Result<(ReverseChain, ChainTrainReport)> {
    config.validate()?;
    let (starts, partners) = check_coverage(series, kind)?;
    let m = series[starts[0]].len();
    if series.iter().any(|s| s.len() != m) {
        return Err(invalid("all series must share one length"));
    }
    let steps = schedule.steps();
    let mut denoisers: Vec<StepDenoiser> = (1..=steps).map(|t| StepDenoiser::new(t, rng)).collect();
    let adam_cfg = AdamConfig::with_learning_rate(config.learning_rate);
    let mut optimizers = (0..steps)
        .map(|_| Adam::new(adam_cfg))
        .collect::<Result<Vec<_>>>()?;

    let val_starts: Vec<usize> = (0..config.validation_size)
        .map(|i| starts[i % starts.len()])
        .collect();
    let validation = sample_pairs(
        series,
        kind,
        &val_starts,
        &partners,
        schedule,
        config.noise_std,
        rng,
    )?;
    let identity_mse = validation
        .iter()
        .map(|p| p.iter().map(|(x, y)| sq_dist(x, y) / m as f64).sum::<f64>() / p.len() as f64)
        .collect();
    let evaluate = |denoisers: &[StepDenoiser]| -> Result<Vec<f64>> {
        denoisers
            .iter()
            .zip(&validation)
            .map(|(d, p)| d.batch_mse(&as_refs(p)))
            .collect()
    };

    let mut report = ChainTrainReport {
        kind,
        checkpoints: vec![0],
        val_mse: vec![evaluate(&denoisers)?],
        identity_mse,
    };

    let mut order = starts.clone();
    for epoch in 1..=config.epochs {
        order.shuffle(rng);
        let mut pairs = sample_pairs(
            series,
            kind,
            &order,
            &partners,
            schedule,
            config.noise_std,
            rng,
        )?;
        for ((den, adam), step_pairs) in denoisers.iter_mut().zip(&mut optimizers).zip(&mut pairs) {
            step_pairs.shuffle(rng);
            for batch in batches(step_pairs.len(), config.batch_size) {
                den.train_batch(adam, &as_refs(&step_pairs[batch]))?;
            }
        }
        if epoch % config.eval_every == 0 || epoch == config.epochs {
            report.checkpoints.push(epoch);
            report.val_mse.push(evaluate(&denoisers)?);
        }
    }
    Ok((ReverseChain { kind, denoisers }, report))
}

/// Contiguous batch ranges; a trailing batch of one is merged into its
/// predecessor.
pub(crate) fn batches(n: usize, size: usize) -> Vec<std::ops::Range<usize>> {
    let size = size.max(1);
    let mut out: Vec<std::ops::Range<usize>> =
        (0..n).step_by(size).map(|s| s..(s + size).min(n)).collect();
    if out.len() > 1 && out.last().map(|r| r.len()) == Some(1) {
        let last = out.pop().expect("non-empty");
        if let Some(prev) = out.last_mut() {
            prev.end = last.end;
        }
    }
    out
}

/// Applies denoisers `t, t-1, ..., 1` to `state`.
pub fn denoise_compose(chain: &ReverseChain, state: &[f64], t: usize) -> Result<Vec<f64>> {
    denoise_compose_traced(chain, state, t, |_| {})
}

/// [`denoise_compose`] that reports each step index as it is applied.
pub fn denoise_compose_traced(
    chain: &ReverseChain,
    state: &[f64],
    t: usize,
    mut visit: impl FnMut(usize),
) -> Result<Vec<f64>> {
    if t == 0 || t > chain.steps() {
        return Err(invalid(format!("step {t} outside 1..={}", chain.steps())));
    }
    let mut x = state.to_vec();
    for den in chain.denoisers[..t].iter().rev() {
        visit(den.step);
        x = den.apply(&x)?;
    }
    Ok(x)
}

/// The four trained chains of a binary problem.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainSet {
    chains: Vec<ReverseChain>,
}

impl ChainSet {
    /// Requires exactly one chain of each kind, all with the same step count.
    pub fn new(chains: Vec<ReverseChain>) -> Result<Self> {
        let mut ordered = Vec::with_capacity(4);
        for kind in ALL_CHAINS {
            let found: Vec<&ReverseChain> = chains.iter().filter(|c| c.kind == kind).collect();
            if found.len() != 1 {
                return Err(invalid(format!(
                    "expected exactly one {} chain, found {}",
                    kind.label(),
                    found.len()
                )));
            }
            ordered.push(found[0].clone());
        }
        if ordered
            .iter()
            .any(|c| c.steps() != ordered[0].steps() || c.steps() == 0)
        {
            return Err(invalid("chains disagree on the number of steps"));
        }
        Ok(Self { chains: ordered })
    }

    pub fn get(&self, kind: ChainKind) -> &ReverseChain {
        let i = ALL_CHAINS
            .iter()
            .position(|k| *k == kind)
            .expect("kind is one of ALL_CHAINS");
        &self.chains[i]
    }

    pub fn chains(&self) -> &[ReverseChain] {
        &self.chains
    }

    pub fn steps(&self) -> usize {
        self.chains[0].steps()
    }
}

/// Trains all four chains, each on its own stream derived from `seed`.
pub fn train_chain_set(
    series: &[LabeledSeries],
    schedule: &NoiseSchedule,
    config: &ChainTrainConfig,
    seed: u64,
) -> Result<(ChainSet, Vec<ChainTrainReport>)> {
    let trained: Vec<(ReverseChain, ChainTrainReport)> = ALL_CHAINS
        .par_iter()
        .enumerate()
        .map(|(i, &kind)| {
            let mut r = rng::derive(seed, 0xC4A1 + i as u64);
            train_reverse_chain(series, kind, schedule, config, &mut r)
        })
        .collect::<Result<_>>()?;
    let (chains, reports): (Vec<_>, Vec<_>) = trained.into_iter().unzip();
    Ok((ChainSet::new(chains)?, reports))
}

/// An anchor with one generated positive and negative per diffusion step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveSet {
    pub anchor: LabeledSeries,
    pub anchor_index: usize,
    /// Same-class series whose trajectory produced the positives.
    pub positive_partner: usize,
    /// Other-class series whose trajectory produced the negatives.
    pub negative_partner: usize,
    pub positives: Vec<Vec<f64>>,
    pub negatives: Vec<Vec<f64>>,
}

/// Builds the contrastive set of `series[anchor_index]`.
///
/// A same-class partner and an other-class partner are each diffused toward
/// the anchor. Positive `t` is the within-class chain of the anchor's class
/// composed on the partner's state `t`; negative `t` composes the across
/// chain that returns to the anchor's class on the other-class state `t`,
/// giving a hard negative shaped like the anchor's class.
pub fn generate_contrastive_set(
    anchor_index: usize,
    series: &[LabeledSeries],
    chains: &ChainSet,
    schedule: &NoiseSchedule,
    noise_std: f64,
    rng: &mut Rng,
) -> Result<ContrastiveSet> {
    let anchor = series
        .get(anchor_index)
        .ok_or_else(|| invalid(format!("anchor index {anchor_index} out of range")))?;
    if chains.steps() != schedule.steps() {
        return Err(invalid(format!(
            "chains have {} steps but the schedule has {}",
            chains.steps(),
            schedule.steps()
        )));
    }
    let class = anchor.label;
    let other = 1 - class.min(1);
    let same = class_members(series, class);
    let across = class_members(series, other);
    let j = pick_partner(&same, Some(anchor_index), rng).ok_or_else(|| {
        CdnetError::ClassCoverage(format!(
            "class {class} needs at least 2 samples to form positives"
        ))
    })?;
    let c = pick_partner(&across, None, rng).ok_or_else(|| {
        CdnetError::ClassCoverage(format!("class {other} has no samples to form negatives"))
    })?;

    let pos_traj = forward_trajectory(series, j, anchor_index, schedule, noise_std, rng)?;
    let neg_traj = forward_trajectory(series, c, anchor_index, schedule, noise_std, rng)?;
    let within = chains.get(ChainKind::Within { class });
    let across = chains.get(ChainKind::Across {
        from: class,
        toward: other,
    });

    let steps = schedule.steps();
    let mut positives = Vec::with_capacity(steps);
    let mut negatives = Vec::with_capacity(steps);
    for t in 1..=steps {
        positives.push(denoise_compose(within, &pos_traj.states[t - 1], t)?);
        negatives.push(denoise_compose(across, &neg_traj.states[t - 1], t)?);
    }
    Ok(ContrastiveSet {
        anchor: anchor.clone(),
        anchor_index,
        positive_partner: j,
        negative_partner: c,
        positives,
        negatives,
    })
}

/// Contrastive sets for every series, anchor `i` drawing from stream
/// `(seed, i)`.
pub fn generate_contrastive_sets(
    series: &[LabeledSeries],
    chains: &ChainSet,
    schedule: &NoiseSchedule,
    noise_std: f64,
    seed: u64,
) -> Result<Vec<ContrastiveSet>> {
    (0..series.len())
        .into_par_iter()
        .map(|i| {
            let mut r = rng::derive(seed, i as u64);
            generate_contrastive_set(i, series, chains, schedule, noise_std, &mut r)
        })
        .collect()
}

/// Per-step `(denoiser MSE, identity MSE)` on fresh trajectories drawn from
/// `series`, which should be held out from chain training.
pub fn denoising_mse(
    chain: &ReverseChain,
    series: &[LabeledSeries],
    schedule: &NoiseSchedule,
    noise_std: f64,
    trajectories: usize,
    rng: &mut Rng,
) -> Result<Vec<(f64, f64)>> {
    let (starts, partners) = check_coverage(series, chain.kind)?;
    let picks: Vec<usize> = (0..trajectories)
        .map(|i| starts[i % starts.len()])
        .collect();
    let pairs = sample_pairs(
        series, chain.kind, &picks, &partners, schedule, noise_std, rng,
    )?;
    chain
        .denoisers
        .iter()
        .zip(&pairs)
        .map(|(d, p)| {
            let m = p[0].0.len() as f64;
            let identity = p.iter().map(|(x, y)| sq_dist(x, y) / m).sum::<f64>() / p.len() as f64;
            Ok((d.batch_mse(&as_refs(p))?, identity))
        })
        .collect()
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_classes(m: usize, per_class: usize) -> Vec<LabeledSeries> {
        let mut out = Vec::new();
        for i in 0..2 * per_class {
            let label = (i % 2) as u8;
            let level = if label == 0 { 0.5 } else { -0.75 };
            out.push(LabeledSeries::new(vec![level; m], label));
        }
        out
    }

    fn quick_config() -> ChainTrainConfig {
        ChainTrainConfig {
            epochs: 4,
            batch_size: 4,
            eval_every: 2,
            validation_size: 4,
            ..ChainTrainConfig::default()
        }
    }

    #[test]
    fn batches_never_end_with_a_singleton() {
        assert_eq!(batches(33, 16), vec![0..16, 16..33]);
        assert_eq!(batches(32, 16), vec![0..16, 16..32]);
        assert_eq!(batches(1, 16), vec![0..1]);
        assert_eq!(batches(0, 16), Vec::<std::ops::Range<usize>>::new());
    }

    #[test]
    fn chain_kind_labels_round_trip() {
        for k in ALL_CHAINS {
            assert_eq!(ChainKind::parse_label(&k.label()), Some(k));
        }
    }

    #[test]
    fn denoiser_preserves_length() {
        let d = StepDenoiser::new(1, &mut rng::seeded(1));
        let y = d.apply(&[0.3; 12]).unwrap();
        assert_eq!(y.len(), 12);
        assert!(y.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn singleton_class_is_rejected() {
        let mut data = constant_classes(10, 3);
        data.retain(|s| s.label == 0);
        data.push(LabeledSeries::new(vec![1.0; 10], 1));
        let err = train_reverse_chain(
            &data,
            ChainKind::Across { from: 0, toward: 1 },
            &NoiseSchedule::default(),
            &quick_config(),
            &mut rng::seeded(0),
        )
        .unwrap_err();
        assert!(matches!(err, CdnetError::ClassCoverage(_)), "{err}");
    }

    #[test]
    fn compose_visits_steps_in_descending_order() {
        let data = constant_classes(10, 3);
        let schedule = NoiseSchedule::default();
        let (chain, _) = train_reverse_chain(
            &data,
            ChainKind::Within { class: 0 },
            &schedule,
            &quick_config(),
            &mut rng::seeded(2),
        )
        .unwrap();
        let mut seen = Vec::new();
        denoise_compose_traced(&chain, &[0.0; 10], 5, |t| seen.push(t)).unwrap();
        assert_eq!(seen, vec![5, 4, 3, 2, 1]);
        let one = denoise_compose(&chain, &[0.1; 10], 1).unwrap();
        assert_eq!(one, chain.denoisers[0].apply(&[0.1; 10]).unwrap());
        assert!(denoise_compose(&chain, &[0.0; 10], 0).is_err());
        assert!(denoise_compose(&chain, &[0.0; 10], 6).is_err());
    }

    #[test]
    fn same_seed_same_parameters() {
        let data = constant_classes(10, 3);
        let schedule = NoiseSchedule::default();
        let kind = ChainKind::Across { from: 1, toward: 0 };
        let run = || {
            train_reverse_chain(&data, kind, &schedule, &quick_config(), &mut rng::seeded(5))
                .unwrap()
        };
        let (a, ra) = run();
        let (b, rb) = run();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
    }

    #[test]
    fn contrastive_partners_respect_labels() {
        let data = constant_classes(10, 3);
        let schedule = NoiseSchedule::default();
        let (chains, _) = train_chain_set(&data, &schedule, &quick_config(), 3).unwrap();
        let sets = generate_contrastive_sets(&data, &chains, &schedule, 0.25, 11).unwrap();
        for set in &sets {
            assert_eq!(data[set.positive_partner].label, set.anchor.label);
            assert_ne!(set.positive_partner, set.anchor_index);
            assert_ne!(data[set.negative_partner].label, set.anchor.label);
            assert_eq!(set.positives.len(), 5);
            assert_eq!(set.negatives.len(), 5);
            for s in set.positives.iter().chain(&set.negatives) {
                assert_eq!(s.len(), 10);
                assert!(s.iter().all(|v| v.is_finite()));
            }
        }
    }

    #[test]
    fn chain_set_requires_all_four_kinds() {
        let r = rng::seeded(0);
        let chain = |kind| ReverseChain {
            kind,
            denoisers: vec![StepDenoiser::new(1, &mut r.clone())],
        };
        let three: Vec<_> = ALL_CHAINS[..3].iter().map(|&k| chain(k)).collect();
        assert!(ChainSet::new(three).is_err());
        let four: Vec<_> = ALL_CHAINS.iter().rev().map(|&k| chain(k)).collect();
        let set = ChainSet::new(four).unwrap();
        assert_eq!(set.chains()[0].kind, ALL_CHAINS[0]);
    }
}
