use approx::assert_relative_eq;
use proptest::prelude::*;

use cdnet::classifier::TrainConfig;
use cdnet::dataio::{format_ucr, parse_ucr, LabelMap, LabeledSeries};
use cdnet::diffusion::forward_step;
use cdnet::eval::{rank_methods, Checkpoint};
use cdnet::losses::{ce_loss, composite_value, triplet_loss, UncertaintyWeights};
use cdnet::simgen::{generate_sim_dataset, SimConfig};
use cdnet::tensor::Tape;

fn finite(range: f64) -> impl Strategy<Value = f64> {
    -range..range
}

fn triplet(anchor: &[f64], pos: &[Vec<f64>], neg: &[Vec<f64>], margin: f64) -> f64 {
    let mut tape = Tape::new();
    let a = tape.constant(&[anchor.len()], anchor.to_vec()).unwrap();
    let mut vars = |rows: &[Vec<f64>]| {
        rows.iter()
            .map(|r| tape.constant(&[r.len()], r.clone()).unwrap())
            .collect::<Vec<_>>()
    };
    let (p, n) = (vars(pos), vars(neg));
    let l = triplet_loss(&mut tape, a, &p, &n, margin).unwrap();
    tape.scalar(l)
}

fn ce(p_true: &[f64]) -> f64 {
    let mut tape = Tape::new();
    let probs: Vec<_> = p_true
        .iter()
        .map(|&p| tape.constant(&[2], vec![1.0 - p, p]).unwrap())
        .collect();
    let l = ce_loss(&mut tape, &probs, &vec![1; p_true.len()]).unwrap();
    tape.scalar(l)
}

proptest! {
    #[test]
    fn noiseless_step_stays_between_state_and_partner(
        xs in prop::collection::vec((finite(10.0), finite(10.0)), 1..16),
        beta in 0.0..=1.0f64,
    ) {
        let (x, p): (Vec<f64>, Vec<f64>) = xs.into_iter().unzip();
        let y = forward_step(&x, &p, beta, &vec![0.0; x.len()]).unwrap();
        for i in 0..x.len() {
            let (lo, hi) = (x[i].min(p[i]), x[i].max(p[i]));
            prop_assert!(y[i] >= lo - 1e-12 && y[i] <= hi + 1e-12);
        }
        let same = forward_step(&x, &p, 0.0, &vec![0.0; x.len()]).unwrap();
        prop_assert_eq!(same, x);
    }

    #[test]
    fn triplet_is_non_negative_and_zero_past_the_margin(
        anchor in prop::collection::vec(finite(3.0), 3),
        pos in prop::collection::vec(prop::collection::vec(finite(3.0), 3), 1..5),
        margin in 0.0..2.0f64,
    ) {
        let neg: Vec<Vec<f64>> = pos.iter().map(|p| p.iter().map(|v| v + 1.0).collect()).collect();
        prop_assert!(triplet(&anchor, &pos, &neg, margin) >= 0.0);
        // Negatives far beyond every positive satisfy the margin.
        let far: Vec<Vec<f64>> = pos.iter().map(|_| anchor.iter().map(|v| v + 100.0).collect()).collect();
        prop_assert_eq!(triplet(&anchor, &pos, &far, margin), 0.0);
    }

    #[test]
    fn ce_falls_as_true_class_probability_rises(
        ps in prop::collection::vec(0.01..0.98f64, 1..6),
        bump in 0.001..0.01f64,
        which in 0usize..6,
    ) {
        let i = which % ps.len();
        let mut higher = ps.clone();
        higher[i] += bump;
        prop_assert!(ce(&higher) < ce(&ps));
    }

    #[test]
    fn composite_increases_with_each_component(
        ls in prop::array::uniform3(0.0..5.0f64),
        ss in prop::array::uniform3(-2.0..2.0f64),
        k in 0usize..3,
        bump in 0.01..1.0f64,
    ) {
        let mut more = ls;
        more[k] += bump;
        prop_assert!(composite_value(more, ss) > composite_value(ls, ss));
    }

    #[test]
    fn mean_ranks_ignore_dataset_order(
        acc in prop::collection::vec(prop::collection::vec(0.0..1.0f64, 4), 3),
        rot in 0usize..4,
    ) {
        let methods: Vec<String> = (0..3).map(|i| format!("m{i}")).collect();
        let datasets: Vec<String> = (0..4).map(|i| format!("d{i}")).collect();
        let wrap = |rows: &[Vec<f64>]| -> Vec<Vec<Option<f64>>> {
            rows.iter().map(|r| r.iter().map(|&v| Some(v)).collect()).collect()
        };
        let rotated: Vec<Vec<f64>> = acc
            .iter()
            .map(|r| { let mut r = r.clone(); r.rotate_left(rot); r })
            .collect();
        let a = rank_methods(&methods, &datasets, &wrap(&acc)).unwrap();
        let b = rank_methods(&methods, &datasets, &wrap(&rotated)).unwrap();
        for (x, y) in a.mean_ranks.iter().zip(&b.mean_ranks) {
            assert_relative_eq!(x, y, epsilon = 1e-12);
        }
        assert_relative_eq!(a.mean_ranks.iter().sum::<f64>(), 6.0, epsilon = 1e-12);
        prop_assert!(a.friedman_statistic >= -1e-12);
    }

    #[test]
    fn ucr_text_round_trips(
        rows in prop::collection::vec((prop::collection::vec(-1e6..1e6f64, 8), any::<bool>()), 2..10),
    ) {
        let mut series: Vec<LabeledSeries> = rows
            .into_iter()
            .map(|(v, l)| LabeledSeries::new(v, u8::from(l)))
            .collect();
        series[0].label = 0;
        series[1].label = 1;
        let map = LabelMap::new("1", "2");
        let (back, back_map) = parse_ucr(&format_ucr(&series, &map), false, "memory").unwrap();
        prop_assert_eq!(back_map, map);
        for (a, b) in series.iter().zip(&back) {
            prop_assert_eq!(a.label, b.label);
            prop_assert_eq!(&a.values, &b.values);
        }
    }

    #[test]
    fn weights_survive_checkpoint_text(s in prop::array::uniform3(-5.0..5.0f64)) {
        let ckpt = Checkpoint {
            config: TrainConfig::default(),
            classifier: None,
            weights: Some(UncertaintyWeights::from_log_sigmas(s)),
            chains: None,
        };
        let back = Checkpoint::from_text(&ckpt.to_text().unwrap()).unwrap();
        prop_assert_eq!(back.weights.unwrap().log_sigmas(), s);
    }
}

fn centroid_distance(config: &SimConfig) -> f64 {
    let data = generate_sim_dataset(config).unwrap().dataset;
    let all: Vec<&LabeledSeries> = data.train.iter().chain(&data.test).collect();
    let m = all[0].len();
    let mut sums = [vec![0.0; m], vec![0.0; m]];
    let mut counts = [0.0; 2];
    for s in &all {
        let k = usize::from(s.label);
        counts[k] += 1.0;
        for (acc, v) in sums[k].iter_mut().zip(&s.values) {
            *acc += v;
        }
    }
    sums[0]
        .iter()
        .zip(&sums[1])
        .map(|(a, b)| (a / counts[0] - b / counts[1]).powi(2))
        .sum::<f64>()
        .sqrt()
}

#[test]
fn classes_move_together_as_similarity_rises() {
    let mean_distance = |level: u8| {
        (0..3)
            .map(|seed| {
                centroid_distance(&SimConfig {
                    similarity_level: level,
                    seed,
                    ..SimConfig::default()
                })
            })
            .sum::<f64>()
            / 3.0
    };
    let d: Vec<f64> = (0..=5).map(mean_distance).collect();
    for w in d.windows(2) {
        assert!(w[1] <= w[0], "centroid distances {d:?}");
    }
}
