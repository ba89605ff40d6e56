use cdnet::dataio::LabeledSeries;
use cdnet::diffusion::{forward_trajectory, gaussian_vec, NoiseSchedule};
use cdnet::reverse::{
    denoise_compose, generate_contrastive_sets, train_chain_set, ChainKind, ChainTrainConfig,
};
use cdnet::rng;
use cdnet::simgen::{generate_sim_dataset, SimConfig};

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn centroid(series: &[LabeledSeries], class: u8) -> Vec<f64> {
    let members: Vec<&LabeledSeries> = series.iter().filter(|s| s.label == class).collect();
    let mut c = vec![0.0; members[0].len()];
    for s in &members {
        for (acc, v) in c.iter_mut().zip(&s.values) {
            *acc += v / members.len() as f64;
        }
    }
    c
}

/// Two offset modes for class 0, one cosine shape for class 1.
fn bimodal(m: usize, per_mode: usize, seed: u64) -> Vec<LabeledSeries> {
    let mut r = rng::seeded(seed);
    let mut out = Vec::new();
    for i in 0..2 * per_mode {
        let offset = if i % 2 == 0 { 1.0 } else { -1.0 };
        let noise = gaussian_vec(m, 0.25, &mut r);
        out.push(LabeledSeries::new(
            noise.iter().map(|e| e + offset).collect(),
            0,
        ));
    }
    for _ in 0..per_mode {
        let noise = gaussian_vec(m, 0.25, &mut r);
        let v = (0..m)
            .zip(noise)
            .map(|(i, e)| (i as f64 * 0.4).cos() + e)
            .collect();
        out.push(LabeledSeries::new(v, 1));
    }
    out
}

#[test]
fn negatives_land_closer_to_the_anchor_class_than_the_mixed_state() {
    let sim = SimConfig {
        similarity_level: 2,
        multimodality_level: 0,
        n_per_class: 30,
        length: 64,
        seed: 11,
        ..SimConfig::default()
    };
    let data = generate_sim_dataset(&sim).unwrap().dataset;
    let schedule = NoiseSchedule::default();
    let config = ChainTrainConfig::default();
    let (chains, _) = train_chain_set(&data.train, &schedule, &config, 5).unwrap();

    let held_out = &data.test;
    let mut r = rng::seeded(99);
    for (anchor_class, other) in [(0u8, 1u8), (1, 0)] {
        let chain = chains.get(ChainKind::Across {
            from: anchor_class,
            toward: other,
        });
        let home = centroid(held_out, anchor_class);
        let anchors: Vec<usize> = (0..held_out.len())
            .filter(|&i| held_out[i].label == anchor_class)
            .collect();
        let others: Vec<usize> = (0..held_out.len())
            .filter(|&i| held_out[i].label == other)
            .collect();
        let (mut raw, mut denoised) = (0.0, 0.0);
        for (k, &c) in others.iter().enumerate() {
            let i = anchors[k % anchors.len()];
            let traj =
                forward_trajectory(held_out, c, i, &schedule, config.noise_std, &mut r).unwrap();
            for t in 1..=schedule.steps() {
                let state = &traj.states[t - 1];
                raw += sq_dist(state, &home);
                denoised += sq_dist(&denoise_compose(chain, state, t).unwrap(), &home);
            }
        }
        assert!(
            denoised < raw,
            "{}: composed {denoised:.3} vs raw {raw:.3}",
            chain.kind.label()
        );
    }
}

#[test]
fn bimodal_denoisers_beat_identity_at_every_step() {
    let series = bimodal(24, 30, 3);
    let schedule = NoiseSchedule::default();
    let (_, reports) =
        train_chain_set(&series, &schedule, &ChainTrainConfig::default(), 8).unwrap();
    let within0 = reports
        .iter()
        .find(|r| r.kind == ChainKind::Within { class: 0 })
        .unwrap();
    for (t, (model, identity)) in within0
        .final_mse()
        .iter()
        .zip(&within0.identity_mse)
        .enumerate()
    {
        assert!(
            model < identity,
            "t={}: {model} vs identity {identity}",
            t + 1
        );
    }
}

#[test]
fn validation_error_does_not_climb() {
    let series = bimodal(24, 20, 4);
    let (_, reports) = train_chain_set(
        &series,
        &NoiseSchedule::default(),
        &ChainTrainConfig::default(),
        9,
    )
    .unwrap();
    for report in &reports {
        for w in report.val_mse.windows(2) {
            for (t, (before, after)) in w[0].iter().zip(&w[1]).enumerate() {
                assert!(
                    *after <= before * 1.05,
                    "{} t={}: {before} -> {after}",
                    report.kind.label(),
                    t + 1
                );
            }
        }
    }
}

#[test]
fn constant_classes_give_constant_positives() {
    let levels = [0.5, -0.75];
    let series: Vec<LabeledSeries> = (0..12)
        .map(|i| LabeledSeries::new(vec![levels[i % 2]; 16], (i % 2) as u8))
        .collect();
    let schedule = NoiseSchedule::linear(1, 0.1, 0.1).unwrap();
    let config = ChainTrainConfig {
        noise_std: 0.0,
        ..ChainTrainConfig::default()
    };
    let (chains, reports) = train_chain_set(&series, &schedule, &config, 1).unwrap();
    for r in &reports {
        if let ChainKind::Within { .. } = r.kind {
            assert!(
                r.final_mse()[0] < 1e-4,
                "{}: {:?}",
                r.kind.label(),
                r.final_mse()
            );
        }
    }
    let sets = generate_contrastive_sets(&series, &chains, &schedule, 0.0, 2).unwrap();
    for set in &sets {
        let level = levels[usize::from(set.anchor.label)];
        for v in &set.positives[0] {
            assert!((v - level).abs() < 1e-2, "{v} vs {level}");
        }
        assert_ne!(series[set.negative_partner].label, set.anchor.label);
        assert_eq!(series[set.positive_partner].label, set.anchor.label);
    }
}
