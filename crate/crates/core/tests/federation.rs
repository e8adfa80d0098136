use std::sync::Arc;

use fedshield::data::{partition_equal, BlobGenerator, LabeledDataset};
use fedshield::defense::{vba_lazy_check, vba_verify, DefenseConfig, Strategy, VerdictLabel};
use fedshield::federation::{
    evaluate, local_train, EdKind, EdProfile, Federation, GlobalModel, LocalTraining, ModelUpdate, ShardView,
};
use fedshield::nn::{adam_step, argmax, mlp_backward, mlp_forward, AdamConfig, AdamState, MlpSpec, ParamVector};
use fedshield::threat::{poison_update, AttackConfig, AttackContext, AttackVector, ScheduleKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const HYPER: LocalTraining = LocalTraining {
    batch_size: 20,
    epochs: 1,
    learning_rate: 1e-3,
};

struct Fixture {
    spec: MlpSpec,
    train: Arc<LabeledDataset>,
    aux: Arc<LabeledDataset>,
    shards: Vec<Vec<usize>>,
    trained: ParamVector,
}

fn fixture() -> Fixture {
    let blobs = BlobGenerator::new(4, 8, 51).unwrap();
    let train = blobs.sample(500, 1).unwrap();
    let aux = blobs.sample(500, 2).unwrap();
    let spec = MlpSpec::new(8, &[32], 4);
    let mut params = spec.init(&mut ChaCha8Rng::seed_from_u64(3));
    let mut adam = AdamState::new(&params, AdamConfig::with_learning_rate(0.01));
    for _ in 0..200 {
        let (_, grad) = mlp_backward(&params, &spec, train.features(), train.labels()).unwrap();
        adam_step(&mut params, &grad, &mut adam).unwrap();
    }
    let shards = partition_equal(&train, 10, 4).unwrap().shards;
    Fixture {
        spec,
        train: Arc::new(train),
        aux: Arc::new(aux),
        shards,
        trained: params,
    }
}

fn device(id: usize, kind: EdKind, shard: Vec<usize>) -> EdProfile {
    let vulnerable = kind == EdKind::Vulnerable;
    EdProfile {
        id,
        kind,
        price: if vulnerable { 0.3 } else { 0.9 },
        shard,
        schedule: vulnerable.then_some(ScheduleKind::Bernoulli { p: 1.0 }),
    }
}

fn current(fx: &Fixture, params: &ParamVector) -> GlobalModel {
    let mut g = GlobalModel::new(params.clone());
    g.last_accuracy = evaluate(params, &fx.spec, &fx.aux).unwrap();
    g
}

#[test]
fn benign_local_updates_pass_verification() {
    let fx = fixture();
    let global = current(&fx, &fx.trained);
    assert!(global.last_accuracy > 0.9, "fixture model only reaches {}", global.last_accuracy);
    let config = DefenseConfig::default();
    let mut passed = 0;
    for trial in 0..100u64 {
        let id = trial as usize % 10;
        let ed = device(id, EdKind::SecureBenign, fx.shards[id].clone());
        let view = ShardView::new(&fx.train, &ed.shard);
        let update = local_train(&global.params, &fx.spec, &ed, &view, &HYPER, 0, 1000 + trial).unwrap();
        let v = vba_verify(&global, &[update], &fx.aux, &fx.spec, &config).unwrap();
        passed += (v[0].label == VerdictLabel::Benign) as usize;
    }
    assert!(passed >= 95, "{passed} of 100 benign updates passed");
}

#[test]
fn zero_delta_is_benign_and_sign_flip_is_poisoned() {
    let fx = fixture();
    let global = current(&fx, &fx.trained);
    let ed = device(0, EdKind::Vulnerable, fx.shards[0].clone());
    let view = ShardView::new(&fx.train, &ed.shard);
    let honest = local_train(&global.params, &fx.spec, &ed, &view, &HYPER, 0, 9).unwrap();
    let attack = AttackConfig {
        vector: AttackVector::SignFlip,
        scale_factor: 20.0,
    };
    let ctx = AttackContext {
        global_params: &global.params,
        last_increment: None,
        replacement_target: None,
        selected_count: 5,
    };
    let flipped = poison_update(&honest.delta, &ctx, &attack, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let updates = vec![
        ModelUpdate {
            ed_id: 1,
            delta: global.params.zeros_like(),
            ..honest.clone()
        },
        ModelUpdate {
            ed_id: 0,
            delta: flipped,
            ..honest
        },
    ];
    let v = vba_verify(&global, &updates, &fx.aux, &fx.spec, &DefenseConfig::default()).unwrap();
    assert_eq!(v[0].label, VerdictLabel::Benign);
    assert_eq!(v[0].accuracy_drop, 0.0);
    assert_eq!(v[1].label, VerdictLabel::Poisoned);
    assert!(v[1].accuracy_drop > 0.05, "drop {}", v[1].accuracy_drop);
}

#[test]
fn verdicts_match_independent_evaluation() {
    let fx = fixture();
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let global = current(&fx, &fx.trained);
    let updates: Vec<ModelUpdate> = (0..5)
        .map(|i| {
            let mut delta = global.params.zeros_like();
            let scale = [0.001, 0.05, 0.2, 0.5, 1.5][i];
            delta.values_mut().iter_mut().for_each(|v| *v = rng.random_range(-scale..scale));
            ModelUpdate {
                ed_id: i,
                round: 0,
                delta,
                fee: 0.3,
            }
        })
        .collect();
    let config = DefenseConfig {
        lazy_check: false,
        ..DefenseConfig::default()
    };
    let got = vba_verify(&global, &updates, &fx.aux, &fx.spec, &config).unwrap();

    // Reimplementation: forward each temporary model, count argmax hits by hand.
    let count_correct = |params: &ParamVector| {
        let logits = mlp_forward(params, &fx.spec, fx.aux.features()).unwrap();
        let hits = logits
            .rows()
            .into_iter()
            .zip(fx.aux.labels())
            .filter(|(row, &y)| argmax(*row) == y)
            .count();
        hits as f64 / fx.aux.len() as f64
    };
    let base = count_correct(&global.params);
    let mut labels = Vec::new();
    for (u, v) in updates.iter().zip(&got) {
        let temp = count_correct(&global.params.add(&u.delta).unwrap());
        assert_eq!(v.temp_accuracy, temp);
        let expected = if base - temp <= 0.005 { VerdictLabel::Benign } else { VerdictLabel::Poisoned };
        assert_eq!(v.label, expected);
        labels.push(v.label);
    }
    assert!(labels.contains(&VerdictLabel::Benign) && labels.contains(&VerdictLabel::Poisoned));

    let mut reversed = updates.clone();
    reversed.reverse();
    let back = vba_verify(&global, &reversed, &fx.aux, &fx.spec, &config).unwrap();
    for (a, b) in got.iter().zip(back.iter().rev()) {
        assert_eq!(a, b);
    }
}

fn orthogonal_noise(rng: &mut ChaCha8Rng, base: &ParamVector) -> ParamVector {
    let mut noise = base.zeros_like();
    noise.values_mut().iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    let proj = noise.dot(base).unwrap() / base.dot(base).unwrap();
    noise.add_scaled(base, -proj).unwrap();
    let n = noise.norm();
    noise.scaled(1.0 / n)
}

#[test]
fn near_copies_of_recent_increments_are_lazy() {
    let fx = fixture();
    let mut rng = ChaCha8Rng::seed_from_u64(62);
    let mut inc = fx.trained.zeros_like();
    inc.values_mut().iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    let inc = inc.scaled(1.0 / inc.norm());
    let with_cosine = |c: f64, rng: &mut ChaCha8Rng| {
        let mut u = inc.scaled(0.97);
        let noise_norm = 0.97 * (1.0 / (c * c) - 1.0).sqrt();
        u.add_scaled(&orthogonal_noise(rng, &inc), noise_norm).unwrap();
        u
    };
    let close = with_cosine(0.995, &mut rng);
    let far = with_cosine(0.95, &mut rng);
    let cos = |u: &ParamVector| u.dot(&inc).unwrap() / (u.norm() * inc.norm());
    assert!((cos(&close) - 0.995).abs() < 1e-9);
    assert!((cos(&far) - 0.95).abs() < 1e-9);
    assert!(vba_lazy_check(&close, [&inc], 0.99).unwrap());
    assert!(!vba_lazy_check(&far, [&inc], 0.99).unwrap());

    let mut global = current(&fx, &fx.trained);
    global.increment_history.push_back(inc.scaled(1e-6));
    let update = ModelUpdate {
        ed_id: 0,
        round: 1,
        delta: close.scaled(1e-6),
        fee: 0.3,
    };
    let v = vba_verify(&global, &[update], &fx.aux, &fx.spec, &DefenseConfig::default()).unwrap();
    assert_eq!(v[0].label, VerdictLabel::Lazy);
}

#[test]
fn zero_epochs_charge_but_do_not_move() {
    let fx = fixture();
    let ed = device(2, EdKind::SecureBenign, fx.shards[2].clone());
    let view = ShardView::new(&fx.train, &ed.shard);
    let hyper = LocalTraining { epochs: 0, ..HYPER };
    let u = local_train(&fx.trained, &fx.spec, &ed, &view, &hyper, 7, 1).unwrap();
    assert!(u.delta.values().iter().all(|&v| v == 0.0));
    assert_eq!(u.fee, 0.9);
    assert_eq!(u.round, 7);
}

#[test]
fn evaluate_counts_correct_predictions() {
    let fx = fixture();
    let subset = fx.aux.select(&(0..20).collect::<Vec<_>>());
    let logits = mlp_forward(&fx.trained, &fx.spec, subset.features()).unwrap();
    let predictions: Vec<usize> = logits.rows().into_iter().map(argmax).collect();
    let own = subset.with_labels(predictions.clone()).unwrap();
    assert_eq!(evaluate(&fx.trained, &fx.spec, &own).unwrap(), 1.0);
    // Relabel the first seven samples to a class the model did not predict.
    let mut labels = predictions;
    for y in labels.iter_mut().take(7) {
        *y = (*y + 1) % 4;
    }
    let wrong = subset.with_labels(labels).unwrap();
    assert_eq!(evaluate(&fx.trained, &fx.spec, &wrong).unwrap(), 13.0 / 20.0);
}

fn federation(fx: &Fixture, strategy: Strategy, vulnerable_from: usize) -> Federation {
    let eds = (0..10)
        .map(|id| {
            let kind = if id >= vulnerable_from { EdKind::Vulnerable } else { EdKind::SecureBenign };
            device(id, kind, fx.shards[id].clone())
        })
        .collect();
    Federation::new(
        fx.spec.clone(),
        Arc::clone(&fx.train),
        Arc::clone(&fx.aux),
        eds,
        5,
        DefenseConfig::with_strategy(strategy),
        AttackConfig::default(),
        HYPER,
        5,
        fx.trained.clone(),
    )
    .unwrap()
}

#[test]
fn secure_rounds_keep_every_upload() {
    let fx = fixture();
    let mut fed = federation(&fx, Strategy::Vba, 10);
    for r in 0..5 {
        let out = fed.run_round(&[0, 2, 4, 6, 8], 100 + r).unwrap();
        assert_eq!(out.ledger.benign_count, 5);
        assert!((out.ledger.fees_paid - 4.5).abs() < 1e-12);
        assert!((out.ledger.utility - 0.5).abs() < 1e-12);
        assert!(out.poisoned.iter().all(|&p| !p));
    }
}

#[test]
fn always_attacked_devices_are_caught() {
    let fx = fixture();
    let mut fed = federation(&fx, Strategy::Vba, 5);
    let before = fed.global.params.clone();
    let out = fed.run_round(&[5, 6, 7, 8, 9], 200).unwrap();
    assert!(out.poisoned.iter().all(|&p| p));
    assert_eq!(out.ledger.benign_count, 0);
    assert!((out.ledger.utility + 1.5).abs() < 1e-12);
    assert_eq!(fed.global.params, before);

    let mut undefended = federation(&fx, Strategy::FedAvg, 5);
    let out = undefended.run_round(&[5, 6, 7, 8, 9], 200).unwrap();
    assert_ne!(undefended.global.params, before);
    assert!(out.accuracy < fx_accuracy(&fx) - 0.05, "fedavg accuracy {}", out.accuracy);
}

fn fx_accuracy(fx: &Fixture) -> f64 {
    evaluate(&fx.trained, &fx.spec, &fx.aux).unwrap()
}

#[test]
fn unknown_or_repeated_devices_are_rejected() {
    let fx = fixture();
    let mut fed = federation(&fx, Strategy::Vba, 10);
    assert!(fed.run_round(&[0, 1, 2, 3, 10], 1).is_err());
    assert!(fed.run_round(&[0, 1, 2, 3, 3], 1).is_err());
    assert!(fed.run_round(&[0, 1, 2, 3], 1).is_err());
}

#[test]
fn rounds_replay_from_seed() {
    let fx = fixture();
    let mut a = federation(&fx, Strategy::Vba, 6);
    let mut b = federation(&fx, Strategy::Vba, 6);
    for r in 0..4 {
        let sel = [r as usize, 4, 6, 7, 9];
        let oa = a.run_round(&sel, r).unwrap();
        let ob = b.run_round(&sel, r).unwrap();
        assert_eq!(oa.verdicts, ob.verdicts);
        assert_eq!(oa.accuracy, ob.accuracy);
    }
    assert_eq!(a.global.params, b.global.params);
}
