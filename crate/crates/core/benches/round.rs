//! One verified federated round on a single worker against the rayon pool.
//!
//! Build with `--no-default-features` to time the sequential fallback that
//! compiles rayon out entirely; both entries then take the same path.

use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fedshield::data::{partition_equal, BlobGenerator};
use fedshield::defense::{DefenseConfig, Strategy};
use fedshield::federation::{EdKind, EdProfile, Federation, LocalTraining};
use fedshield::nn::MlpSpec;
use fedshield::par::with_workers;
use fedshield::threat::{AttackConfig, ScheduleKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn federation(strategy: Strategy) -> Federation {
    let blobs = BlobGenerator::new(10, 64, 5).unwrap();
    let train = blobs.sample(500, 1).unwrap();
    let aux = blobs.sample(200, 2).unwrap();
    let spec = MlpSpec::new(64, &[100, 100], 10);
    let shards = partition_equal(&train, 10, 3).unwrap().shards;
    let eds = shards
        .into_iter()
        .enumerate()
        .map(|(id, shard)| {
            let vulnerable = id > 0;
            EdProfile {
                id,
                kind: if vulnerable { EdKind::Vulnerable } else { EdKind::SecureBenign },
                price: if vulnerable { 0.3 } else { 0.9 },
                shard,
                schedule: vulnerable.then_some(ScheduleKind::Bernoulli { p: 0.5 }),
            }
        })
        .collect();
    let defense = DefenseConfig {
        strategy,
        ..DefenseConfig::default()
    };
    let init = spec.init(&mut ChaCha8Rng::seed_from_u64(4));
    Federation::new(
        spec,
        Arc::new(train),
        Arc::new(aux),
        eds,
        6,
        defense,
        AttackConfig::default(),
        LocalTraining::default(),
        5,
        init,
    )
    .unwrap()
}

fn rounds(c: &mut Criterion) {
    let mut group = c.benchmark_group("round");
    group.sample_size(20);
    for strategy in [Strategy::Vba, Strategy::FedAvg] {
        for (label, workers) in [("sequential", Some(1)), ("rayon", None)] {
            let mut fed = federation(strategy);
            let mut seed = 0u64;
            group.bench_function(BenchmarkId::new(format!("{strategy:?}"), label), |b| {
                b.iter(|| {
                    seed += 1;
                    with_workers(workers, || fed.run_round(&[0, 1, 2, 3, 4], seed).unwrap())
                })
            });
        }
    }
    group.finish();
}

criterion_group!(benches, rounds);
criterion_main!(benches);
