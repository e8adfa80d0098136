use std::sync::Arc;

use fedshield::federation::{aggregate_mean, GlobalModel, ModelUpdate};
use fedshield::nn::{LayerShape, ParamVector, ShapeMap};
use fedshield::threat::{poison_data, poison_update, AttackConfig, AttackContext, AttackVector, Schedule, ScheduleKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn vector(values: Vec<f64>) -> ParamVector {
    let shape = Arc::new(ShapeMap::new(vec![LayerShape::new("w", &[values.len()])]));
    ParamVector::from_values(shape, values).unwrap()
}

fn random_vector(rng: &mut ChaCha8Rng, dim: usize) -> ParamVector {
    vector((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn ctx<'a>(global: &'a ParamVector, target: Option<&'a ParamVector>, k: usize) -> AttackContext<'a> {
    AttackContext {
        global_params: global,
        last_increment: None,
        replacement_target: target,
        selected_count: k,
    }
}

#[test]
fn markov_transitions_match_configured_probabilities() {
    let mut s = Schedule::new(
        ScheduleKind::Markov {
            p_stay_safe: 0.9,
            p_stay_attacked: 0.8,
        },
        99,
    );
    let trace: Vec<bool> = (0..200_000).map(|_| s.step()).collect();
    let (mut safe, mut safe_stay, mut hit, mut hit_stay) = (0, 0, 0, 0);
    for w in trace.windows(2) {
        if w[0] {
            hit += 1;
            hit_stay += w[1] as usize;
        } else {
            safe += 1;
            safe_stay += (!w[1]) as usize;
        }
    }
    assert!((safe_stay as f64 / safe as f64 - 0.9).abs() < 0.01);
    assert!((hit_stay as f64 / hit as f64 - 0.8).abs() < 0.01);
    let rate = trace.iter().filter(|&&a| a).count() as f64 / trace.len() as f64;
    assert!((rate - 1.0 / 3.0).abs() < 0.02, "attack rate {rate}");
}

#[test]
fn schedules_replay_from_seed() {
    for kind in [
        ScheduleKind::Bernoulli { p: 0.3 },
        ScheduleKind::Markov {
            p_stay_safe: 0.7,
            p_stay_attacked: 0.6,
        },
    ] {
        let a: Vec<bool> = {
            let mut s = Schedule::new(kind, 5);
            (0..500).map(|_| s.step()).collect()
        };
        let b: Vec<bool> = {
            let mut s = Schedule::new(kind, 5);
            (0..500).map(|_| s.step()).collect()
        };
        assert_eq!(a, b);
    }
}

#[test]
fn bernoulli_rate_converges() {
    let mut s = Schedule::new(ScheduleKind::Bernoulli { p: 0.25 }, 3);
    let hits = (0..100_000).filter(|_| s.step()).count();
    assert!((hits as f64 / 100_000.0 - 0.25).abs() < 0.01);
}

#[test]
fn periodic_phase_shifts_the_window() {
    let mut s = Schedule::new(
        ScheduleKind::Periodic {
            period: 5,
            phase: 3,
            duty: 1,
        },
        0,
    );
    let got: Vec<bool> = (0..10).map(|_| s.step()).collect();
    // (t + 3) % 5 < 1 holds for t = 2, 7.
    let want: Vec<bool> = (0..10).map(|t| t == 2 || t == 7).collect();
    assert_eq!(got, want);
}

#[test]
fn two_class_random_flip_inverts_every_label() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let labels: Vec<usize> = (0..1000).map(|i| i % 2).collect();
    let flipped = poison_data(&labels, 2, &AttackVector::LabelFlipRandom, &mut rng).unwrap();
    assert!(labels.iter().zip(&flipped).all(|(a, b)| a + b == 1));
}

#[test]
fn random_flip_spreads_uniformly_over_other_classes() {
    // Chi-square goodness of fit, 8 degrees of freedom, 1% critical value.
    const CRITICAL: f64 = 20.090;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for source in [0usize, 3, 9] {
        let labels = vec![source; 9000];
        let flipped = poison_data(&labels, 10, &AttackVector::LabelFlipRandom, &mut rng).unwrap();
        let mut counts = [0usize; 10];
        for &y in &flipped {
            counts[y] += 1;
        }
        assert_eq!(counts[source], 0, "flip kept the original label");
        let chi2: f64 = (0..10)
            .filter(|&c| c != source)
            .map(|c| (counts[c] as f64 - 1000.0).powi(2) / 1000.0)
            .sum();
        assert!(chi2 < CRITICAL, "class {source}: chi-square {chi2} counts {counts:?}");
    }
}

#[test]
fn targeted_flip_rewrites_only_mapped_classes() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let labels: Vec<usize> = (0..100).map(|i| i % 10).collect();
    let vector = AttackVector::LabelFlipTargeted { map: vec![(7, 1)] };
    let got = poison_data(&labels, 10, &vector, &mut rng).unwrap();
    for (a, b) in labels.iter().zip(&got) {
        assert_eq!(*b, if *a == 7 { 1 } else { *a });
    }
    let identity = AttackVector::LabelFlipTargeted { map: vec![(2, 2)] };
    assert!(poison_data(&labels, 10, &identity, &mut rng).is_err());
    assert!(!identity.validate(10).is_empty());
}

#[test]
fn sign_flip_reverses_and_scales() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let global = random_vector(&mut rng, 30);
    let delta = random_vector(&mut rng, 30);
    let attack = AttackConfig {
        vector: AttackVector::SignFlip,
        scale_factor: 20.0,
    };
    let out = poison_update(&delta, &ctx(&global, None, 5), &attack, &mut rng).unwrap();
    assert!((out.norm() - 20.0 * delta.norm()).abs() <= 1e-12 * out.norm());
    let cos = out.dot(&delta).unwrap() / (out.norm() * delta.norm());
    assert!((cos + 1.0).abs() < 1e-12);
}

#[test]
fn data_poisoned_uploads_are_boosted_copies() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let global = random_vector(&mut rng, 12);
    let delta = random_vector(&mut rng, 12);
    let attack = AttackConfig::default();
    let out = poison_update(&delta, &ctx(&global, None, 5), &attack, &mut rng).unwrap();
    for (o, d) in out.values().iter().zip(delta.values()) {
        assert_eq!(*o, d * 20.0);
    }
}

#[test]
fn gaussian_noise_has_requested_spread() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let global = vector(vec![0.0; 50_000]);
    let attack = AttackConfig {
        vector: AttackVector::GaussianNoise { sigma: 0.5 },
        scale_factor: 2.0,
    };
    let out = poison_update(&global.zeros_like(), &ctx(&global, None, 5), &attack, &mut rng).unwrap();
    let n = out.len() as f64;
    let mean = out.values().iter().sum::<f64>() / n;
    let var = out.values().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    assert!(mean.abs() < 0.02, "mean {mean}");
    assert!((var.sqrt() - 1.0).abs() < 0.02, "std {}", var.sqrt());
}

#[test]
fn model_replacement_lands_global_on_target() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let k = 5;
    let global = random_vector(&mut rng, 40);
    let target = random_vector(&mut rng, 40);
    let attack = AttackConfig {
        vector: AttackVector::ModelReplacement {
            boost: Some(k as f64),
            checkpoint: None,
        },
        scale_factor: 1.0,
    };
    let poisoned = poison_update(&global.zeros_like(), &ctx(&global, Some(&target), k), &attack, &mut rng).unwrap();
    // The other k - 1 uploads are converged benign devices that no longer move.
    let mut updates = vec![ModelUpdate {
        ed_id: 0,
        round: 0,
        delta: poisoned,
        fee: 0.3,
    }];
    for id in 1..k {
        updates.push(ModelUpdate {
            ed_id: id,
            round: 0,
            delta: global.zeros_like(),
            fee: 0.9,
        });
    }
    let next = aggregate_mean(&GlobalModel::new(global.clone()), &updates).unwrap();
    assert!(next.params.distance(&target).unwrap() < 1e-10);

    // The default boost is the number of selected devices.
    let default_boost = AttackConfig {
        vector: AttackVector::ModelReplacement {
            boost: None,
            checkpoint: None,
        },
        scale_factor: 1.0,
    };
    let again = poison_update(&global.zeros_like(), &ctx(&global, Some(&target), k), &default_boost, &mut rng).unwrap();
    assert_eq!(again, updates[0].delta);
}

#[test]
fn negative_increment_reverses_last_global_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let global = random_vector(&mut rng, 10);
    let inc = random_vector(&mut rng, 10);
    let delta = random_vector(&mut rng, 10);
    let attack = AttackConfig {
        vector: AttackVector::NegativeIncrement,
        scale_factor: 3.0,
    };
    let context = AttackContext {
        last_increment: Some(&inc),
        ..ctx(&global, None, 5)
    };
    let out = poison_update(&delta, &context, &attack, &mut rng).unwrap();
    assert_eq!(out, inc.scaled(-3.0));
}
