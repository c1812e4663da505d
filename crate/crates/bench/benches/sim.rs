use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use v2i_sim_bench::{loaded_history, short_scenario};
use v2i_sim_core::config::default_scenario;
use v2i_sim_core::engine::Runner;
use v2i_sim_core::mac::{compute_cbr, select_resource, ResourceGrid};
use v2i_sim_core::phy::{received_power, DistancePowerTable, PathlossParams};

fn bench_select_resource(c: &mut Criterion) {
    let config = default_scenario();
    let grid = ResourceGrid::from_config(&config);
    let history = loaded_history(5, 120);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    c.bench_function("select_resource_full_window", |b| {
        b.iter(|| {
            select_resource(
                black_box(&history),
                125..=221,
                2,
                grid,
                &config,
                &|_| false,
                &mut rng,
            )
        })
    });
}

fn bench_compute_cbr(c: &mut Criterion) {
    let history = loaded_history(5, 120);
    c.bench_function("compute_cbr_full_window", |b| {
        b.iter(|| compute_cbr(black_box(&history), -92.0, -104.0))
    });
}

fn bench_power_paths(c: &mut Criterion) {
    let params = PathlossParams {
        reference_loss_db: 47.0,
        exponent: 2.75,
        shadowing_sigma_db: 0.0,
        tx_power_dbm: 23.0,
        noise_floor_dbm: -104.0,
    };
    c.bench_function("received_power_exact", |b| {
        b.iter(|| received_power(black_box(&params), black_box(734.5), 0.0))
    });
    let table = DistancePowerTable::new(2.75, 26);
    c.bench_function("received_power_table", |b| {
        b.iter(|| table.pow_from_d2(black_box(734.5f64 * 734.5)))
    });
}

fn bench_short_run(c: &mut Criterion) {
    let mut group = c.benchmark_group("run");
    group.sample_size(10);
    group.bench_function("flow5_2s", |b| {
        b.iter(|| Runner::new(short_scenario(5.0, 2000)).run())
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_select_resource,
    bench_compute_cbr,
    bench_power_paths,
    bench_short_run
);
criterion_main!(benches);
