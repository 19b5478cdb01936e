//! One driving period of covariance propagation, parallel kernels against
//! the sequential path. Build with `--no-default-features` to time the
//! fallback that has no rayon at all.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use qcycle::discretization::{DiscretizationSpec, DiscretizedModel, GridScheme, SystemState};
use qcycle::dynamics::{propagate_covariance, Integrator};
use qcycle::model::{FormFactor, MeasureDensity, ModelSpec, PeriodicEnvelope, RadialProfile, ReservoirSpec};

fn model(modes: usize) -> DiscretizedModel {
    let tau = 1.0;
    let radial = RadialProfile::power_gaussian(2, 2.0, 1.0, MeasureDensity::Flat).unwrap();
    let hot = ReservoirSpec::new(0.5, 0.0, FormFactor::new(PeriodicEnvelope::cosine(tau, 1.0, 0.5).unwrap(), radial.clone())).unwrap();
    let cold = ReservoirSpec::new(2.0, 0.0, FormFactor::new(PeriodicEnvelope::constant(tau, 1.0).unwrap(), radial)).unwrap();
    let m = ModelSpec::new(1.0, 0.45, vec![hot, cold]).unwrap();
    let spec = DiscretizationSpec { scheme: GridScheme::Uniform, modes, u_max: Some(8.0) };
    DiscretizedModel::new(&m, &spec).unwrap()
}

fn one_period(c: &mut Criterion) {
    let mut group = c.benchmark_group("covariance_period");
    group.sample_size(10);
    let label = if qcycle::par::is_parallel() { "parallel" } else { "sequential" };
    for modes in [50, 200, 400] {
        let dm = model(modes);
        let g0 = dm.thermal_covariance(SystemState::Diagonal { excited: 0.5 }).unwrap();
        let step = || propagate_covariance(&dm, &g0, 1.0, 1.0 / 128.0, Integrator::Magnus4).unwrap();
        group.bench_with_input(BenchmarkId::new(label, modes), &modes, |b, _| b.iter(step));
        if qcycle::par::is_parallel() {
            let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
            group.bench_with_input(BenchmarkId::new("one-thread", modes), &modes, |b, _| {
                b.iter(|| single.install(step))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, one_period);
criterion_main!(benches);
