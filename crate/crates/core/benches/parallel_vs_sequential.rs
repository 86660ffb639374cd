use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use glasdi::dynamics_id::BasisLibrary;
use glasdi::exec::{map_indexed, Execution};
use glasdi::fom::{Fom, FomConfig, FomConfig1D};
use glasdi::greedy::candidate_indicator;
use glasdi::nn::{Activation, Autoencoder, LayerSpec};
use glasdi::parameter_space::{build_grid, corner_indices, DiscreteParamSpace, SampleSet};
use glasdi::rom::{error_heatmap, FomCache, Rom};
use ndarray::Array2;

struct Setup {
    config: FomConfig,
    fom: Fom,
    space: DiscreteParamSpace,
    net: Autoencoder,
    lib: BasisLibrary,
    samples: SampleSet,
    coeffs: Vec<Array2<f64>>,
}

fn setup() -> Setup {
    let config = FomConfig::Burgers1d(FomConfig1D::desk());
    let fom = config.build().unwrap();
    let space = build_grid(&[(0.7, 0.9), (0.9, 1.1)], &[6, 6]).unwrap();
    let net = Autoencoder::init(
        &LayerSpec::new(vec![201, 50, 5], Activation::Tanh).unwrap(),
        0,
    )
    .unwrap();
    let lib = BasisLibrary::new(5, 1).unwrap();
    let samples = corner_indices(&space);
    // mild decay so trajectories stay bounded
    let coeffs = (0..samples.len())
        .map(|s| {
            Array2::from_shape_fn((lib.n_terms(), 5), |(i, j)| {
                if i == j + 1 {
                    -0.1 * (1 + s) as f64
                } else {
                    0.0
                }
            })
        })
        .collect();
    Setup {
        config,
        fom,
        space,
        net,
        lib,
        samples,
        coeffs,
    }
}

fn modes() -> [(&'static str, Execution); 2] {
    [
        ("sequential", Execution::Sequential),
        ("parallel", Execution::Parallel),
    ]
}

fn heatmap(c: &mut Criterion) {
    let s = setup();
    let rom = Rom::new(&s.net, &s.lib, &s.space, &s.samples, &s.coeffs).unwrap();
    let cache = FomCache::new(None);
    let mut g = c.benchmark_group("heatmap_6x6");
    g.sample_size(10);
    for (name, exec) in modes() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(error_heatmap(&rom, &s.fom, &s.config, &cache, 3, exec).unwrap()))
        });
    }
    g.finish();
}

fn candidates(c: &mut Criterion) {
    let s = setup();
    let rom = Rom::new(&s.net, &s.lib, &s.space, &s.samples, &s.coeffs).unwrap();
    let pool: Vec<usize> = (0..s.space.len())
        .filter(|&i| !s.samples.contains(i))
        .take(16)
        .collect();
    let mut g = c.benchmark_group("candidate_indicators_16");
    for (name, exec) in modes() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                black_box(map_indexed(pool.len(), exec, |i| {
                    candidate_indicator(&rom, &s.fom, s.space.point(pool[i]), 1, 20).unwrap()
                }))
            })
        });
    }
    g.finish();
}

criterion_group!(benches, heatmap, candidates);
criterion_main!(benches);
