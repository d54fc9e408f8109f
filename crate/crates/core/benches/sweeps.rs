use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use fluxnv::device::{EnsembleParams, QubitParams};
use fluxnv::dynamics::{chevron_scan, CollectiveFamily, DissipationSpec, RabiSetup};
use fluxnv::inference::{noisy_fit_trials, DampedCosine};
use fluxnv::spectroscopy::{linspace, sweep_spectrum, DeviceModel};
use fluxnv::Executor;

fn executors() -> Vec<(&'static str, Executor)> {
    vec![
        ("sequential", Executor::sequential()),
        ("pool", Executor::with_threads(0).unwrap()),
    ]
}

fn spectrum(c: &mut Criterion) {
    let model = DeviceModel::exact(QubitParams::default(), EnsembleParams { g_single_ghz: 1e-4, ..Default::default() }, 4);
    let bias = linspace(-0.05, 0.05, 41);
    let mut group = c.benchmark_group("exact_n4_spectrum");
    group.sample_size(10);
    for (name, exec) in executors() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, exec| {
            b.iter(|| sweep_spectrum(&model, &bias, exec).unwrap())
        });
    }
    group.finish();
}

fn chevron(c: &mut Criterion) {
    let family = CollectiveFamily::from_ensemble(&EnsembleParams::default());
    let diss = DissipationSpec::from_lifetimes(150.0, 250.0, 0.0876).unwrap();
    let setup = RabiSetup::new(family, diss);
    let detunings = linspace(-0.2, 0.2, 21);
    let mut group = c.benchmark_group("chevron_21x401");
    group.sample_size(10);
    for (name, exec) in executors() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, exec| {
            b.iter(|| chevron_scan(&setup, &detunings, 100.0, 0.01, exec).unwrap())
        });
    }
    group.finish();
}

fn monte_carlo(c: &mut Criterion) {
    let truth = DampedCosine {
        amplitude: 0.5,
        decay_ns: 20.0,
        frequency_ghz: 0.0704,
        phase_rad: 0.0,
        offset: 0.5,
    };
    let t = linspace(0.0, 100.0, 401);
    let seeds: Vec<u64> = (0..100).collect();
    let mut group = c.benchmark_group("noisy_fits_100");
    for (name, exec) in executors() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, exec| {
            b.iter(|| noisy_fit_trials(&truth, &t, 0.01, &seeds, exec))
        });
    }
    group.finish();
}

criterion_group!(benches, spectrum, chevron, monte_carlo);
criterion_main!(benches);
