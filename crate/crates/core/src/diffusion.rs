//! Noise schedules and the instance-to-instance forward process.
//!
//! One forward step moves a state a fraction of the way toward a fixed
//! partner series and adds scaled Gaussian noise:
//!
//! ```text
//! x_t = sqrt(1 - b_t) * x_{t-1} + (1 - sqrt(1 - b_t)) * partner + sqrt(b_t) * eps_t
//! ```
//!
//! The same step serves both the within-class process (partner shares the
//! label) and the across-class process (partner has the other label).

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataio::LabeledSeries;
use crate::error::{invalid, Result};
use crate::rng::Rng;

pub const DEFAULT_STEPS: usize = 5;
pub const DEFAULT_BETA_MIN: f64 = 0.05;
pub const DEFAULT_BETA_MAX: f64 = 0.3;
pub const DEFAULT_NOISE_STD: f64 = 0.25;

/// Per-step diffusion rates, indexed from step 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
}

impl NoiseSchedule {
    /// Rates must lie strictly inside (0, 1) and be non-decreasing.
    pub fn new(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(invalid("schedule needs at least one step"));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(invalid(format!("beta {b} outside (0, 1)")));
        }
        if betas.windows(2).any(|w| w[1] < w[0]) {
            return Err(invalid("betas must be non-decreasing"));
        }
        Ok(Self { betas })
    }

    /// `beta_t = beta_min + (beta_max - beta_min) * (t - 1) / (steps - 1)`.
    pub fn linear(steps: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if steps == 0 {
            return Err(invalid("schedule needs at least one step"));
        }
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(invalid(format!(
                "need 0 < beta_min <= beta_max < 1, got {beta_min}, {beta_max}"
            )));
        }
        let betas = if steps == 1 {
            vec![beta_min]
        } else {
            (0..steps)
                .map(|i| beta_min + (beta_max - beta_min) * i as f64 / (steps - 1) as f64)
                .collect()
        };
        Self::new(betas)
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    /// Rate of step `t`, 1-based.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(DEFAULT_STEPS, DEFAULT_BETA_MIN, DEFAULT_BETA_MAX)
            .expect("valid default schedule")
    }
}

/// One forward step; `noise` is the raw draw, scaled by `sqrt(beta)` here.
/// `beta` may be 0 or 1 (identity and full replacement).
pub fn forward_step(
    x_prev: &[f64],
    partner0: &[f64],
    beta: f64,
    noise: &[f64],
) -> Result<Vec<f64>> {
    if x_prev.len() != partner0.len() || x_prev.len() != noise.len() {
        return Err(invalid(format!(
            "forward_step length mismatch: state {}, partner {}, noise {}",
            x_prev.len(),
            partner0.len(),
            noise.len()
        )));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(invalid(format!("beta {beta} outside [0, 1]")));
    }
    let keep = (1.0 - beta).sqrt();
    let pull = 1.0 - keep;
    let spread = beta.sqrt();
    Ok(x_prev
        .iter()
        .zip(partner0)
        .zip(noise)
        .map(|((x, p), e)| keep * x + pull * p + spread * e)
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrajectoryKind {
    Within { class: u8 },
    Across { from: u8, toward: u8 },
}

impl TrajectoryKind {
    pub fn infer(start_label: u8, partner_label: u8) -> Self {
        if start_label == partner_label {
            TrajectoryKind::Within { class: start_label }
        } else {
            TrajectoryKind::Across {
                from: start_label,
                toward: partner_label,
            }
        }
    }
}

/// States `x^1..x^T` of one forward run, with the noise that produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForwardTrajectory {
    /// Index of the starting series `x^0`.
    pub anchor_index: usize,
    /// Index of the series every step interpolates toward.
    pub partner_index: usize,
    pub kind: TrajectoryKind,
    pub states: Vec<Vec<f64>>,
    /// Raw draws `eps_t ~ N(0, noise_std^2 I)`.
    pub noise_draws: Vec<Vec<f64>>,
}

impl ForwardTrajectory {
    /// `x^t` for `t` in `0..=T`, where `x^0` is the starting series.
    pub fn state<'a>(&'a self, start: &'a [f64], t: usize) -> &'a [f64] {
        if t == 0 {
            start
        } else {
            &self.states[t - 1]
        }
    }
}

pub fn gaussian_vec(len: usize, std: f64, rng: &mut Rng) -> Vec<f64> {
    (0..len)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            std * z
        })
        .collect()
}

/// Runs the forward process from `series[anchor_index]` toward
/// `series[partner_index]`.
pub fn forward_trajectory(
    series: &[LabeledSeries],
    anchor_index: usize,
    partner_index: usize,
    schedule: &NoiseSchedule,
    noise_std: f64,
    rng: &mut Rng,
) -> Result<ForwardTrajectory> {
    let anchor = series
        .get(anchor_index)
        .ok_or_else(|| invalid(format!("anchor index {anchor_index} out of range")))?;
    let partner = series
        .get(partner_index)
        .ok_or_else(|| invalid(format!("partner index {partner_index} out of range")))?;
    if anchor.len() != partner.len() {
        return Err(invalid(format!(
            "anchor length {} differs from partner length {}",
            anchor.len(),
            partner.len()
        )));
    }
    if !(noise_std >= 0.0) {
        return Err(invalid(format!(
            "noise_std must be non-negative, got {noise_std}"
        )));
    }
    let m = anchor.len();
    let mut states = Vec::with_capacity(schedule.steps());
    let mut noise_draws = Vec::with_capacity(schedule.steps());
    let mut x = anchor.values.clone();
    for &beta in schedule.betas() {
        let eps = gaussian_vec(m, noise_std, rng);
        x = forward_step(&x, &partner.values, beta, &eps)?;
        states.push(x.clone());
        noise_draws.push(eps);
    }
    Ok(ForwardTrajectory {
        anchor_index,
        partner_index,
        kind: TrajectoryKind::infer(anchor.label, partner.label),
        states,
        noise_draws,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn linear_schedule_examples() {
        let s = NoiseSchedule::linear(5, 0.01, 0.3).unwrap();
        assert!((s.beta(3) - 0.155).abs() < 1e-12);
        assert_eq!(NoiseSchedule::linear(1, 0.1, 0.2).unwrap().betas(), &[0.1]);
        assert_eq!(
            NoiseSchedule::linear(2, 0.05, 0.05).unwrap().betas(),
            &[0.05, 0.05]
        );
    }

    #[test]
    fn linear_schedule_rejects_bad_bounds() {
        assert!(NoiseSchedule::linear(0, 0.1, 0.2).is_err());
        assert!(NoiseSchedule::linear(3, 0.0, 0.2).is_err());
        assert!(NoiseSchedule::linear(3, 0.3, 0.2).is_err());
        assert!(NoiseSchedule::linear(3, 0.1, 1.0).is_err());
        assert!(NoiseSchedule::new(vec![0.2, 0.1]).is_err());
    }

    #[test]
    fn forward_step_examples() {
        assert_eq!(
            forward_step(&[1., 1.], &[0., 0.], 0.0, &[0., 0.]).unwrap(),
            vec![1., 1.]
        );
        assert_eq!(
            forward_step(&[5., 5.], &[2., 2.], 1.0, &[0., 0.]).unwrap(),
            vec![2., 2.]
        );
        let x = forward_step(&[1., 0.], &[1., 1.], 0.19, &[0., 0.]).unwrap();
        assert!(
            (x[0] - 1.0).abs() < 1e-12 && (x[1] - 0.1).abs() < 1e-12,
            "{x:?}"
        );
        assert!(forward_step(&[1.], &[1., 1.], 0.1, &[0.]).is_err());
    }

    fn pair(a: Vec<f64>, la: u8, b: Vec<f64>, lb: u8) -> Vec<LabeledSeries> {
        vec![LabeledSeries::new(a, la), LabeledSeries::new(b, lb)]
    }

    #[test]
    fn trajectory_with_unit_betas_lands_on_partner() {
        let data = pair(vec![3.0, -1.0], 0, vec![0.5, 0.25], 1);
        // beta = 1 is outside the public constructor's range; tests only.
        let schedule = NoiseSchedule {
            betas: vec![1.0; 3],
        };
        let traj = forward_trajectory(&data, 0, 1, &schedule, 0.0, &mut rng::seeded(0)).unwrap();
        for s in &traj.states {
            assert_eq!(s, &vec![0.5, 0.25]);
        }
        assert_eq!(traj.kind, TrajectoryKind::Across { from: 0, toward: 1 });
    }

    #[test]
    fn two_step_trajectory_matches_hand_evaluation() {
        let data = pair(vec![1.0, 0.0], 1, vec![1.0, 1.0], 1);
        let schedule = NoiseSchedule::new(vec![0.19, 0.19]).unwrap();
        let traj = forward_trajectory(&data, 0, 1, &schedule, 0.0, &mut rng::seeded(0)).unwrap();
        let expect = [[1.0, 0.1], [1.0, 0.19]];
        for (s, e) in traj.states.iter().zip(expect) {
            assert!(
                (s[0] - e[0]).abs() < 1e-12 && (s[1] - e[1]).abs() < 1e-12,
                "{s:?}"
            );
        }
        assert_eq!(traj.kind, TrajectoryKind::Within { class: 1 });
    }

    #[test]
    fn trajectory_rejects_length_mismatch() {
        let data = pair(vec![1.0, 0.0], 0, vec![1.0], 0);
        let schedule = NoiseSchedule::default();
        assert!(forward_trajectory(&data, 0, 1, &schedule, 0.1, &mut rng::seeded(0)).is_err());
    }

    #[test]
    fn same_seed_same_trajectory() {
        let data = pair(vec![1.0, 0.0, 2.0], 0, vec![0.0, 1.0, 1.0], 1);
        let s = NoiseSchedule::default();
        let a = forward_trajectory(&data, 0, 1, &s, 0.25, &mut rng::seeded(9)).unwrap();
        let b = forward_trajectory(&data, 0, 1, &s, 0.25, &mut rng::seeded(9)).unwrap();
        assert_eq!(a, b);
    }
}
