//! Experiment orchestration: single runs, baseline-versus-CDNet comparisons,
//! simulation sweeps and their CSV/JSON outputs.

mod checkpoint;
mod rank;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use rank::{nemenyi_q, rank_methods, RankTable};

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{
    accuracy, build_small_cnn, finetune, pretrain, train_baseline, BaseClassifier,
    FeatureExtractor, SmallCnn, TrainConfig,
};
use crate::dataio::{Dataset, LabeledSeries};
use crate::error::{invalid, CdnetError, Result};
use crate::losses::{LossReport, UncertaintyWeights};
use crate::reverse::{
    generate_contrastive_sets, train_chain_set, ChainSet, ChainTrainConfig, ChainTrainReport,
};
use crate::rng;
use crate::simgen::{generate_sim_dataset, Knob, SimConfig};

/// Accuracy of `clf` on `test`; rejects an empty split.
pub fn evaluate<E: FeatureExtractor>(
    clf: &BaseClassifier<E>,
    test: &[LabeledSeries],
) -> Result<f64> {
    accuracy(clf, test)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Baseline,
    Cdnet,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Cdnet => "cdnet",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = CdnetError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Method::Baseline),
            "cdnet" => Ok(Method::Cdnet),
            _ => Err(invalid(format!("unknown method {s:?}"))),
        }
    }
}

/// Configuration that produced a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub train: TrainConfig,
    pub sim: Option<SimConfig>,
}

/// Test-split outcome of one trained method under one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub dataset_name: String,
    pub method_name: String,
    pub seed: u64,
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub wall_time: f64,
    pub config_echo: ConfigEcho,
}

impl RunResult {
    pub const CSV_HEADER: &'static str = "dataset,method,seed,accuracy,correct,total,wall_time";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:?},{},{},{:?}",
            self.dataset_name,
            self.method_name,
            self.seed,
            self.accuracy,
            self.correct,
            self.total,
            self.wall_time
        )
    }
}

/// A parsed results-CSV row; the config echo lives in the JSON summary.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRow {
    pub dataset_name: String,
    pub method_name: String,
    pub seed: u64,
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub wall_time: f64,
}

impl From<&RunResult> for RunRow {
    fn from(r: &RunResult) -> Self {
        Self {
            dataset_name: r.dataset_name.clone(),
            method_name: r.method_name.clone(),
            seed: r.seed,
            accuracy: r.accuracy,
            correct: r.correct,
            total: r.total,
            wall_time: r.wall_time,
        }
    }
}

fn csv_fields<const N: usize>(line: &str, what: &str) -> Result<[String; N]> {
    let fields: Vec<String> = line.trim_end().split(',').map(str::to_owned).collect();
    fields.try_into().map_err(|f: Vec<String>| {
        invalid(format!(
            "{what} row needs {N} fields, found {}: {line:?}",
            f.len()
        ))
    })
}

fn field<T: FromStr>(s: &str, name: &str) -> Result<T> {
    s.parse()
        .map_err(|_| invalid(format!("cannot parse {name} from {s:?}")))
}

impl FromStr for RunRow {
    type Err = CdnetError;

    fn from_str(line: &str) -> Result<Self> {
        let [dataset, method, seed, acc, correct, total, wall] = csv_fields(line, "results")?;
        Ok(Self {
            dataset_name: dataset,
            method_name: method,
            seed: field(&seed, "seed")?,
            accuracy: field(&acc, "accuracy")?,
            correct: field(&correct, "correct")?,
            total: field(&total, "total")?,
            wall_time: field(&wall, "wall_time")?,
        })
    }
}

pub fn results_csv(results: &[RunResult]) -> String {
    let mut out = String::from(RunResult::CSV_HEADER);
    out.push('\n');
    for r in results {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

pub fn parse_results_csv(text: &str) -> Result<Vec<RunRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim_end() == RunResult::CSV_HEADER => {}
        other => return Err(invalid(format!("unexpected results header {other:?}"))),
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(str::parse)
        .collect()
}

/// Everything a CDNet run produces.
#[derive(Clone, Debug)]
pub struct CdnetArtifacts {
    pub classifier: BaseClassifier<SmallCnn>,
    pub chains: ChainSet,
    pub chain_reports: Vec<ChainTrainReport>,
    pub weights: UncertaintyWeights,
    pub pretrain_log: Vec<LossReport>,
    pub finetune_log: Vec<f64>,
}

/// Sub-stream tags of a run seed. The CLI's step-by-step commands use the
/// same tags, so they reproduce a [`run_cdnet`] call.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const CHAINS: u64 = 2;
    pub const CONTRASTIVE: u64 = 3;
    pub const PRETRAIN: u64 = 4;
    pub const FINETUNE: u64 = 5;
    pub const BASELINE: u64 = 6;
}

fn initial_classifier(
    dataset: &Dataset,
    config: &TrainConfig,
    seed: u64,
) -> Result<BaseClassifier<SmallCnn>> {
    let m = dataset.validate_for_training()?;
    build_small_cnn(
        m,
        config.embedding_dim,
        &mut rng::derive(seed, stream::INIT),
    )
}

/// Trains the cross-entropy baseline on the train split.
pub fn run_baseline(
    dataset: &Dataset,
    config: &TrainConfig,
    seed: u64,
) -> Result<BaseClassifier<SmallCnn>> {
    config.validate()?;
    let mut clf = initial_classifier(dataset, config, seed)?;
    train_baseline(
        &mut clf,
        &dataset.train,
        config,
        &mut rng::derive(seed, stream::BASELINE),
    )?;
    Ok(clf)
}

/// Chains, contrastive sets, pretraining and fine-tuning on the train split.
pub fn run_cdnet(dataset: &Dataset, config: &TrainConfig, seed: u64) -> Result<CdnetArtifacts> {
    config.validate()?;
    let mut clf = initial_classifier(dataset, config, seed)?;
    let schedule = config.schedule()?;
    let chain_config = ChainTrainConfig {
        noise_std: config.noise_std,
        ..config.chain.clone()
    };
    let (chains, chain_reports) = train_chain_set(
        &dataset.train,
        &schedule,
        &chain_config,
        rng::derive_seed(seed, stream::CHAINS),
    )?;
    let sets = generate_contrastive_sets(
        &dataset.train,
        &chains,
        &schedule,
        config.noise_std,
        rng::derive_seed(seed, stream::CONTRASTIVE),
    )?;
    let mut weights = UncertaintyWeights::default();
    let pretrain_log = pretrain(
        &mut clf,
        &sets,
        &mut weights,
        config,
        &mut rng::derive(seed, stream::PRETRAIN),
    )?;
    let finetune_log = finetune(
        &mut clf,
        &dataset.train,
        config,
        &mut rng::derive(seed, stream::FINETUNE),
    )?;
    Ok(CdnetArtifacts {
        classifier: clf,
        chains,
        chain_reports,
        weights,
        pretrain_log,
        finetune_log,
    })
}

/// Trains `method` under `seed` and scores it on the test split.
pub fn run_method(
    dataset: &Dataset,
    method: Method,
    config: &TrainConfig,
    sim: Option<&SimConfig>,
    seed: u64,
) -> Result<RunResult> {
    let start = Instant::now();
    let config = TrainConfig {
        seed,
        ..config.clone()
    };
    let clf = match method {
        Method::Baseline => run_baseline(dataset, &config, seed)?,
        Method::Cdnet => run_cdnet(dataset, &config, seed)?.classifier,
    };
    let acc = evaluate(&clf, &dataset.test)?;
    let total = dataset.test.len();
    Ok(RunResult {
        dataset_name: dataset.name.clone(),
        method_name: method.name().to_owned(),
        seed,
        accuracy: acc,
        correct: (acc * total as f64).round() as usize,
        total,
        wall_time: start.elapsed().as_secs_f64(),
        config_echo: ConfigEcho {
            train: config,
            sim: sim.cloned(),
        },
    })
}

/// Per-seed results of two methods on one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub dataset_name: String,
    pub methods: [Method; 2],
    /// Sorted by method, then seed.
    pub results: Vec<RunResult>,
    /// Mean accuracy of the second method minus that of the first.
    pub delta: f64,
}

impl Comparison {
    pub fn accuracies(&self, method: Method) -> Vec<f64> {
        self.results
            .iter()
            .filter(|r| r.method_name == method.name())
            .map(|r| r.accuracy)
            .collect()
    }

    pub fn mean_accuracy(&self, method: Method) -> f64 {
        let a = self.accuracies(method);
        a.iter().sum::<f64>() / a.len().max(1) as f64
    }
}

/// Runs `first` and `second` on the same splits under every seed.
pub fn compare_pair(
    dataset: &Dataset,
    methods: [Method; 2],
    config: &TrainConfig,
    sim: Option<&SimConfig>,
    seeds: &[u64],
) -> Result<Comparison> {
    if seeds.is_empty() {
        return Err(invalid("comparison needs at least one seed"));
    }
    let jobs: Vec<(Method, u64)> = methods
        .iter()
        .flat_map(|&m| seeds.iter().map(move |&s| (m, s)))
        .collect();
    let mut results: Vec<(usize, RunResult)> = jobs
        .par_iter()
        .enumerate()
        .map(|(i, &(m, s))| run_method(dataset, m, config, sim, s).map(|r| (i, r)))
        .collect::<Result<_>>()?;
    results.sort_by_key(|(i, _)| *i);
    let results: Vec<RunResult> = results.into_iter().map(|(_, r)| r).collect();
    let mut cmp = Comparison {
        dataset_name: dataset.name.clone(),
        methods,
        results,
        delta: 0.0,
    };
    cmp.delta = cmp.mean_accuracy(methods[1]) - cmp.mean_accuracy(methods[0]);
    Ok(cmp)
}

/// Baseline versus CDNet; `delta` is the mean CDNet improvement.
pub fn compare_methods(
    dataset: &Dataset,
    config: &TrainConfig,
    sim: Option<&SimConfig>,
    seeds: &[u64],
) -> Result<Comparison> {
    compare_pair(
        dataset,
        [Method::Baseline, Method::Cdnet],
        config,
        sim,
        seeds,
    )
}

/// One level of a simulation sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub knob: Knob,
    pub level: u8,
    pub baseline_accuracy: f64,
    pub cdnet_accuracy: f64,
    pub delta: f64,
}

impl SweepRow {
    pub const CSV_HEADER: &'static str = "knob,level,baseline_accuracy,cdnet_accuracy,delta";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:?},{:?},{:?}",
            self.knob.name(),
            self.level,
            self.baseline_accuracy,
            self.cdnet_accuracy,
            self.delta
        )
    }
}

impl FromStr for SweepRow {
    type Err = CdnetError;

    fn from_str(line: &str) -> Result<Self> {
        let [knob, level, base, cdnet, delta] = csv_fields(line, "sweep")?;
        Ok(Self {
            knob: knob.parse()?,
            level: field(&level, "level")?,
            baseline_accuracy: field(&base, "baseline_accuracy")?,
            cdnet_accuracy: field(&cdnet, "cdnet_accuracy")?,
            delta: field(&delta, "delta")?,
        })
    }
}

/// Rows plus the per-level comparisons behind them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub rows: Vec<SweepRow>,
    pub comparisons: Vec<Comparison>,
}

impl Sweep {
    pub fn csv(&self) -> String {
        let mut out = String::from(SweepRow::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.csv_row());
            out.push('\n');
        }
        out
    }
}

pub fn parse_sweep_csv(text: &str) -> Result<Vec<SweepRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim_end() == SweepRow::CSV_HEADER => {}
        other => return Err(invalid(format!("unexpected sweep header {other:?}"))),
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(str::parse)
        .collect()
}

/// Compares both methods on a simulated dataset per level of `knob`; the
/// other knobs keep their values from `base`. Each seed also seeds the
/// generator, so every seed sees a fresh dataset.
pub fn sweep_levels(
    knob: Knob,
    levels: &[u8],
    base: &SimConfig,
    config: &TrainConfig,
    seeds: &[u64],
) -> Result<Sweep> {
    if levels.is_empty() {
        return Err(invalid("sweep needs at least one level"));
    }
    if seeds.is_empty() {
        return Err(invalid("sweep needs at least one seed"));
    }
    let mut jobs = Vec::with_capacity(levels.len() * seeds.len());
    for &level in levels {
        for &seed in seeds {
            let sim = SimConfig {
                seed,
                ..base.with_level(knob, level)
            };
            sim.validate()?;
            jobs.push((level, seed, sim));
        }
    }
    let per_job: Vec<Comparison> = jobs
        .par_iter()
        .map(|(_, seed, sim)| {
            let data = generate_sim_dataset(sim)?;
            compare_methods(&data.dataset, config, Some(sim), &[*seed])
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(levels.len());
    let mut comparisons = Vec::with_capacity(levels.len());
    for (li, &level) in levels.iter().enumerate() {
        let chunk = &per_job[li * seeds.len()..(li + 1) * seeds.len()];
        let results: Vec<RunResult> = chunk.iter().flat_map(|c| c.results.clone()).collect();
        let mut merged = Comparison {
            dataset_name: format!("{}-{}", knob.name(), level),
            methods: [Method::Baseline, Method::Cdnet],
            results,
            delta: 0.0,
        };
        merged
            .results
            .sort_by(|a, b| (&a.method_name, a.seed).cmp(&(&b.method_name, b.seed)));
        let b = merged.mean_accuracy(Method::Baseline);
        let c = merged.mean_accuracy(Method::Cdnet);
        merged.delta = c - b;
        rows.push(SweepRow {
            knob,
            level,
            baseline_accuracy: b,
            cdnet_accuracy: c,
            delta: c - b,
        });
        comparisons.push(merged);
    }
    Ok(Sweep { rows, comparisons })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::LabelMap;

    fn tiny_dataset() -> Dataset {
        let mk = |label: u8, phase: f64| {
            LabeledSeries::new(
                (0..16).map(|i| (i as f64 * 0.5 + phase).sin()).collect(),
                label,
            )
        };
        let split = |offset: f64| {
            (0..6)
                .map(|i| mk((i % 2) as u8, (i % 2) as f64 * 1.5 + offset * i as f64))
                .collect::<Vec<_>>()
        };
        Dataset {
            name: "tiny".into(),
            train: split(0.01),
            test: split(0.02),
            label_map: LabelMap::identity(),
        }
    }

    fn quick() -> TrainConfig {
        let mut c = TrainConfig {
            epochs_pretrain: 2,
            epochs_finetune: 2,
            batch_size: 3,
            embedding_dim: 4,
            ..TrainConfig::default()
        };
        c.chain.epochs = 2;
        c.chain.validation_size = 2;
        c
    }

    #[test]
    fn constant_zero_classifier_scores_half() {
        let mut clf = build_small_cnn(16, 4, &mut rng::seeded(0)).unwrap();
        for t in clf.params_mut() {
            t.values_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let data = tiny_dataset();
        assert_eq!(evaluate(&clf, &data.test).unwrap(), 0.5);
        assert!(evaluate(&clf, &[]).is_err());
    }

    #[test]
    fn self_comparison_has_zero_delta() {
        let data = tiny_dataset();
        let cmp = compare_pair(
            &data,
            [Method::Baseline, Method::Baseline],
            &quick(),
            None,
            &[4],
        )
        .unwrap();
        assert_eq!(cmp.delta, 0.0);
    }

    #[test]
    fn compare_runs_both_arms_on_same_seeds() {
        let data = tiny_dataset();
        let cmp = compare_methods(&data, &quick(), None, &[1, 2]).unwrap();
        assert_eq!(cmp.results.len(), 4);
        assert_eq!(cmp.accuracies(Method::Baseline).len(), 2);
        for pair in cmp.results[..2].iter().zip(&cmp.results[2..]) {
            assert_eq!(pair.0.seed, pair.1.seed);
            assert_eq!(pair.0.config_echo, pair.1.config_echo);
        }
        assert!(compare_methods(&data, &quick(), None, &[]).is_err());
    }

    #[test]
    fn results_csv_round_trip() {
        let data = tiny_dataset();
        let r = run_method(&data, Method::Baseline, &quick(), None, 3).unwrap();
        let parsed = parse_results_csv(&results_csv(std::slice::from_ref(&r))).unwrap();
        assert_eq!(parsed, vec![RunRow::from(&r)]);
    }

    #[test]
    fn sweep_row_round_trip() {
        let row = SweepRow {
            knob: Knob::Similarity,
            level: 3,
            baseline_accuracy: 0.8125,
            cdnet_accuracy: 0.9,
            delta: 0.9 - 0.8125,
        };
        assert_eq!(row.csv_row().parse::<SweepRow>().unwrap(), row);
        assert!(sweep_levels(Knob::Noise, &[], &SimConfig::default(), &quick(), &[0]).is_err());
    }
}
