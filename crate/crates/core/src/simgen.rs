//! Sinusoidal benchmark generator with noise, class-similarity and
//! multimodality knobs.
//!
//! A sample is a Dirichlet-weighted mixture of `k` sine patterns, each with
//! amplitude, frequency and phase drawn uniformly from per-class intervals,
//! shifted by a random delay and corrupted by white Gaussian noise.
//!
//! Level knobs, each an integer in `0..=5`:
//!
//! * noise: `sigma = 0.3 + 0.1 * level`;
//! * similarity: level 5 uses the baseline intervals; every level below
//!   moves class 0 endpoints down by 0.2 and class 1 endpoints up by 0.2;
//! * multimodality: level 5 uses the baseline intervals; every level below
//!   narrows each interval by 0.1 around its midpoint.

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::dataio::{Dataset, LabelMap, LabeledSeries};
use crate::diffusion::gaussian_vec;
use crate::error::{invalid, CdnetError, Result};
use crate::rng::{self, Rng};

pub const MAX_LEVEL: u8 = 5;
pub const BASE_NOISE: f64 = 0.3;
pub const NOISE_STEP: f64 = 0.1;
pub const SIMILARITY_STEP: f64 = 0.2;
pub const MULTIMODALITY_STEP: f64 = 0.1;
/// Narrowest interval multimodality shrinking may produce.
pub const MIN_INTERVAL_WIDTH: f64 = 0.01;
/// Amplitude and frequency intervals are floored here to stay positive.
pub const POSITIVE_FLOOR: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternParams {
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
}

impl PatternParams {
    pub fn new(amplitude: f64, frequency: f64, phase: f64) -> Result<Self> {
        if !(amplitude > 0.0 && frequency > 0.0) || !phase.is_finite() {
            return Err(invalid(format!(
                "pattern needs positive amplitude and frequency, got A={amplitude}, f={frequency}"
            )));
        }
        Ok(Self {
            amplitude,
            frequency,
            phase,
        })
    }

    /// `A * sin(2 pi f t + phi)`.
    pub fn eval(&self, t: f64) -> f64 {
        self.amplitude * (2.0 * PI * self.frequency * t + self.phase).sin()
    }
}

/// `len` points evenly spaced over [0, 1].
pub fn time_grid(len: usize) -> Vec<f64> {
    match len {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..len).map(|i| i as f64 / (len - 1) as f64).collect(),
    }
}

pub fn base_pattern(params: &PatternParams, grid: &[f64]) -> Vec<f64> {
    grid.iter().map(|&t| params.eval(t)).collect()
}

/// `sum_j w_j * P_j(t - delta) + N(0, sigma^2)` at every grid point.
pub fn combined_pattern(
    patterns: &[PatternParams],
    weights: &[f64],
    delta: f64,
    sigma: f64,
    grid: &[f64],
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    if patterns.is_empty() || patterns.len() != weights.len() {
        return Err(invalid(format!(
            "{} patterns but {} weights",
            patterns.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| *w < 0.0) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(invalid(format!(
            "weights {weights:?} are not a probability vector"
        )));
    }
    if !(sigma >= 0.0) {
        return Err(invalid("sigma must be non-negative"));
    }
    let noise = gaussian_vec(grid.len(), sigma, rng);
    Ok(grid
        .iter()
        .zip(noise)
        .map(|(&t, e)| {
            patterns
                .iter()
                .zip(weights)
                .map(|(p, w)| w * p.eval(t - delta))
                .sum::<f64>()
                + e
        })
        .collect())
}

/// Flat Dirichlet draw: normalized unit exponentials.
pub fn dirichlet_uniform(k: usize, rng: &mut Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|g| g / total).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    fn shifted(self, by: f64) -> Self {
        Self::new(self.lo + by, self.hi + by)
    }

    fn narrowed(self, by: f64) -> Self {
        if by <= 0.0 {
            return self;
        }
        let mid = 0.5 * (self.lo + self.hi);
        let half = (0.5 * (self.width() - by)).max(0.5 * MIN_INTERVAL_WIDTH.min(self.width()));
        Self::new(mid - half, mid + half)
    }

    fn sample(&self, rng: &mut Rng) -> f64 {
        if self.hi > self.lo {
            rng.random_range(self.lo..self.hi)
        } else {
            self.lo
        }
    }
}

/// Parameter ranges of one class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassIntervals {
    pub frequency: Interval,
    pub amplitude: Interval,
    pub phase: Interval,
}

impl ClassIntervals {
    pub const BASELINE: [ClassIntervals; 2] = [
        ClassIntervals {
            frequency: Interval::new(1.0, 1.5),
            amplitude: Interval::new(0.4, 1.2),
            phase: Interval::new(0.0, 0.8),
        },
        ClassIntervals {
            frequency: Interval::new(1.1, 1.6),
            amplitude: Interval::new(0.5, 1.3),
            phase: Interval::new(0.2, 1.0),
        },
    ];

    fn map(self, f: impl Fn(Interval) -> Interval) -> Self {
        Self {
            frequency: f(self.frequency),
            amplitude: f(self.amplitude),
            phase: f(self.phase),
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> PatternParams {
        PatternParams {
            amplitude: self.amplitude.sample(rng),
            frequency: self.frequency.sample(rng),
            phase: self.phase.sample(rng),
        }
    }

    pub fn contains(&self, p: &PatternParams) -> bool {
        self.amplitude.contains(p.amplitude)
            && self.frequency.contains(p.frequency)
            && self.phase.contains(p.phase)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub noise_level: u8,
    pub similarity_level: u8,
    pub multimodality_level: u8,
    pub n_per_class: usize,
    pub length: usize,
    pub patterns_per_sample: usize,
    pub max_delay: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            noise_level: 0,
            similarity_level: MAX_LEVEL,
            multimodality_level: MAX_LEVEL,
            n_per_class: 50,
            length: 128,
            patterns_per_sample: 3,
            max_delay: 0.2,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Knob {
    Noise,
    Similarity,
    Multimodality,
}

impl Knob {
    pub fn name(self) -> &'static str {
        match self {
            Knob::Noise => "noise",
            Knob::Similarity => "similarity",
            Knob::Multimodality => "multimodality",
        }
    }
}

impl std::str::FromStr for Knob {
    type Err = CdnetError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noise" => Ok(Knob::Noise),
            "similarity" => Ok(Knob::Similarity),
            "multimodality" => Ok(Knob::Multimodality),
            other => Err(invalid(format!("unknown knob {other:?}"))),
        }
    }
}

impl SimConfig {
    pub fn with_level(&self, knob: Knob, level: u8) -> Self {
        let mut c = self.clone();
        match knob {
            Knob::Noise => c.noise_level = level,
            Knob::Similarity => c.similarity_level = level,
            Knob::Multimodality => c.multimodality_level = level,
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        for (knob, level) in [
            ("noise", self.noise_level),
            ("similarity", self.similarity_level),
            ("multimodality", self.multimodality_level),
        ] {
            if level > MAX_LEVEL {
                return Err(invalid(format!(
                    "{knob} level {level} outside 0..={MAX_LEVEL}"
                )));
            }
        }
        if self.n_per_class < 2 {
            return Err(invalid(
                "n_per_class must be at least 2 for a train/test split",
            ));
        }
        if self.length < crate::dataio::MIN_SERIES_LEN {
            return Err(invalid(format!(
                "series length {} is too short",
                self.length
            )));
        }
        if self.patterns_per_sample == 0 {
            return Err(invalid("patterns_per_sample must be positive"));
        }
        if !(self.max_delay >= 0.0) {
            return Err(invalid("max_delay must be non-negative"));
        }
        Ok(())
    }

    pub fn noise_sigma(&self) -> f64 {
        BASE_NOISE + NOISE_STEP * f64::from(self.noise_level)
    }

    /// Parameter ranges of both classes after applying the level knobs.
    pub fn class_intervals(&self) -> Result<[ClassIntervals; 2]> {
        self.validate()?;
        let offset = SIMILARITY_STEP * f64::from(MAX_LEVEL - self.similarity_level);
        let shrink = MULTIMODALITY_STEP * f64::from(MAX_LEVEL - self.multimodality_level);
        let mut out = ClassIntervals::BASELINE;
        for (class, iv) in out.iter_mut().enumerate() {
            let dir = if class == 0 { -1.0 } else { 1.0 };
            *iv = iv
                .map(|i| i.shifted(dir * offset))
                .map(|i| i.narrowed(shrink));
            for (name, i) in [
                ("amplitude", &mut iv.amplitude),
                ("frequency", &mut iv.frequency),
            ] {
                i.lo = i.lo.max(POSITIVE_FLOOR);
                if i.hi <= i.lo {
                    return Err(CdnetError::IntervalCollapse {
                        knob: "similarity",
                        detail: format!("class {class} {name} interval is empty after shifting"),
                    });
                }
            }
            for (name, i) in [
                ("amplitude", iv.amplitude),
                ("frequency", iv.frequency),
                ("phase", iv.phase),
            ] {
                if !(i.hi > i.lo) {
                    return Err(CdnetError::IntervalCollapse {
                        knob: "multimodality",
                        detail: format!(
                            "class {class} {name} interval [{}, {}] is empty",
                            i.lo, i.hi
                        ),
                    });
                }
            }
        }
        Ok(out)
    }

    pub fn dataset_name(&self) -> String {
        format!(
            "sim_n{}_s{}_m{}_seed{}",
            self.noise_level, self.similarity_level, self.multimodality_level, self.seed
        )
    }
}

/// Parameters drawn for one generated series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleDraw {
    pub label: u8,
    pub patterns: Vec<PatternParams>,
    pub weights: Vec<f64>,
    pub delay: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimDataset {
    pub dataset: Dataset,
    pub intervals: [ClassIntervals; 2],
    /// Draws for the train split followed by the test split, in order.
    pub draws: Vec<SampleDraw>,
}

/// Generates a balanced dataset. Of the `n_per_class` series of a class,
/// the first `n_per_class / 2` go to train and the rest to test. Sample
/// `i` of class `c` uses its own stream derived from the seed.
pub fn generate_sim_dataset(config: &SimConfig) -> Result<SimDataset> {
    let intervals = config.class_intervals()?;
    let grid = time_grid(config.length);
    let sigma = config.noise_sigma();
    let n_train = config.n_per_class / 2;
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut train_draws = Vec::new();
    let mut test_draws = Vec::new();
    for i in 0..config.n_per_class {
        for class in 0..2u8 {
            let mut r = rng::derive(config.seed, (u64::from(class) << 32) | i as u64);
            let iv = &intervals[usize::from(class)];
            let patterns: Vec<PatternParams> = (0..config.patterns_per_sample)
                .map(|_| iv.sample(&mut r))
                .collect();
            let weights = dirichlet_uniform(config.patterns_per_sample, &mut r);
            let delay = if config.max_delay > 0.0 {
                r.random_range(0.0..config.max_delay)
            } else {
                0.0
            };
            let values = combined_pattern(&patterns, &weights, delay, sigma, &grid, &mut r)?;
            let series = LabeledSeries {
                values,
                label: class,
                source_id: Some(format!("class{class}-{i}")),
            };
            let draw = SampleDraw {
                label: class,
                patterns,
                weights,
                delay,
            };
            if i < n_train {
                train.push(series);
                train_draws.push(draw);
            } else {
                test.push(series);
                test_draws.push(draw);
            }
        }
    }
    train_draws.extend(test_draws);
    Ok(SimDataset {
        dataset: Dataset {
            name: config.dataset_name(),
            train,
            test,
            label_map: LabelMap::identity(),
        },
        intervals,
        draws: train_draws,
    })
}
