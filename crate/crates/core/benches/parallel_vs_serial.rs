//! Parallel (rayon) versus sequential throughput on the three hot paths:
//! scene rendering, network forward/backward over a batch, and the unrolled
//! solver over a batch. The parallel and serial paths produce bitwise
//! identical results; these benches quantify the speedup only.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use depthsr::field::Field2D;
use depthsr::net::{merge_head_grads, pretrain_loss_grad, split_heads, ConvNet};
use depthsr::parallel::{map_indexed, map_indexed_serial};
use depthsr::render::{derive_rng, render_depth, sample_scene, SceneSpec};
use depthsr::solver::SolverParams;
use depthsr::tape;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn render_batch(c: &mut Criterion) {
    let spec = SceneSpec {
        width: 64,
        height: 64,
        ..SceneSpec::default()
    };
    let n = 16;
    let mut group = c.benchmark_group("render_16_scenes_64px");
    group.bench_function(BenchmarkId::new("parallel", "rayon"), |b| {
        b.iter(|| {
            map_indexed(n, |i| {
                render_depth(&sample_scene(&mut derive_rng(1, i as u64), &spec))
            })
        })
    });
    group.bench_function(BenchmarkId::new("serial", "single"), |b| {
        b.iter(|| {
            map_indexed_serial(n, |i| {
                render_depth(&sample_scene(&mut derive_rng(1, i as u64), &spec))
            })
        })
    });
    group.finish();
}

fn random_field(ch: usize, h: usize, w: usize, rng: &mut impl Rng) -> Field2D {
    let mut f = Field2D::zeros(ch, h, w);
    for v in f.data_mut() {
        *v = rng.gen_range(0.5..5.0);
    }
    f
}

fn net_batch(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let net = ConvNet::new(6, 32, &mut rng);
    let batch: Vec<(Field2D, Field2D)> = (0..8)
        .map(|_| {
            (
                random_field(1, 32, 32, &mut rng),
                random_field(1, 32, 32, &mut rng),
            )
        })
        .collect();
    let step = |i: usize| {
        let (x, t) = &batch[i];
        let trace = net.forward_trace(x);
        let (g, h) = split_heads(x, trace.last().unwrap());
        let (loss, d_g, d_h) = pretrain_loss_grad(&g, &h, t);
        let grads = net.backward(&trace, &merge_head_grads(&d_g, &d_h));
        (loss, grads)
    };
    let mut group = c.benchmark_group("net_batch8_32px");
    group.sample_size(10);
    group.bench_function(BenchmarkId::new("parallel", "rayon"), |b| {
        b.iter(|| map_indexed(batch.len(), step))
    });
    group.bench_function(BenchmarkId::new("serial", "single"), |b| {
        b.iter(|| map_indexed_serial(batch.len(), step))
    });
    group.finish();
}

fn solver_batch(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params = SolverParams::default();
    let batch: Vec<(Field2D, Field2D, Field2D)> = (0..8)
        .map(|_| {
            (
                random_field(1, 32, 32, &mut rng),
                random_field(2, 32, 32, &mut rng),
                random_field(1, 32, 32, &mut rng),
            )
        })
        .collect();
    let step = |i: usize| {
        let (g, h, t) = &batch[i];
        let (u, solver_tape) = tape::forward_record(g, h, &params).unwrap();
        let (loss, d_u) = tape::loss_euclidean(&u, t);
        let bundle = tape::backward(&solver_tape, &d_u).unwrap();
        (loss, bundle.d_g)
    };
    let mut group = c.benchmark_group("unrolled_solver_batch8_32px");
    group.sample_size(10);
    group.bench_function(BenchmarkId::new("parallel", "rayon"), |b| {
        b.iter(|| map_indexed(batch.len(), step))
    });
    group.bench_function(BenchmarkId::new("serial", "single"), |b| {
        b.iter(|| map_indexed_serial(batch.len(), step))
    });
    group.finish();
}

criterion_group!(benches, render_batch, net_batch, solver_batch);
criterion_main!(benches);
