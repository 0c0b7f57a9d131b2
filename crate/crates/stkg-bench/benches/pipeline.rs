//! Microbenchmarks for the hot paths: dense matmul on the tape, the real
//! FFT, one message-passing layer, top-k sparsification, and a full model
//! forward pass with backward.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use stkg_bench::{bench_batch, bench_config, bench_dataset};
use stkg_core::graph::{masked_gnn_layer, topk_support};
use stkg_core::model::init_model;
use stkg_core::nn::{Mlp, Mode};
use stkg_core::spectral::rfft;
use stkg_core::training::{class_ce_sum, domain_labels, masked_abs_sum};
use stkg_core::{Adjacency, ParamStore, Tape};

fn bench_matmul(c: &mut Criterion) {
    let n = 64usize;
    let a: Vec<f64> = (0..n * n).map(|i| (i as f64 * 0.37).sin()).collect();
    let b: Vec<f64> = (0..n * n).map(|i| (i as f64 * 0.11).cos()).collect();
    c.bench_function("tape_matmul_64x64", |bench| {
        bench.iter_batched(
            Tape::new,
            |mut tape| {
                let ta = tape.leaf(n, n, a.clone()).unwrap();
                let tb = tape.leaf(n, n, b.clone()).unwrap();
                let m = tape.matmul(ta, tb).unwrap();
                let s = tape.sum_all(m);
                tape.backward(s).unwrap();
                black_box(tape.value(s)[0])
            },
            BatchSize::SmallInput,
        )
    });
}

fn bench_rfft(c: &mut Criterion) {
    let x: Vec<f64> = (0..288).map(|t| (t as f64 * 0.21).sin() + 0.4 * (t as f64 * 0.05).cos()).collect();
    c.bench_function("rfft_288", |bench| {
        bench.iter(|| black_box(rfft(black_box(&x)).unwrap()))
    });
}

fn bench_gnn_layer(c: &mut Criterion) {
    use rand::SeedableRng;
    let n = 32usize;
    let d = 24usize;
    let mut adj = Adjacency::zeros(n);
    for i in 0..n {
        adj.set(i, (i + 1) % n, 1.0);
        adj.set(i, (i + 5) % n, 0.5);
    }
    let adj = adj.row_normalized();
    let mut store = ParamStore::new();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mlp = Mlp::register(
        &mut store,
        "bench",
        d,
        32,
        d,
        stkg_core::autodiff::ParamGroup::Encoder,
        &mut rng,
    )
    .unwrap();
    let x: Vec<f64> = (0..n * d).map(|i| (i as f64 * 0.17).sin()).collect();
    c.bench_function("masked_gnn_layer_32x24", |bench| {
        bench.iter_batched(
            Tape::new,
            |mut tape| {
                let tx = tape.leaf(n, d, x.clone()).unwrap();
                let ta = adj.bind(&mut tape).unwrap();
                let out = masked_gnn_layer(&mut tape, tx, ta, |t, h| {
                    mlp.apply(t, &store, h, &mut Mode::Eval)
                })
                .unwrap();
                black_box(tape.value(out)[0])
            },
            BatchSize::SmallInput,
        )
    });
}

fn bench_topk(c: &mut Criterion) {
    let n = 64usize;
    let scores: Vec<f64> = (0..n * n).map(|i| ((i * 2654435761) % 1000) as f64).collect();
    c.bench_function("topk_support_64_k5", |bench| {
        bench.iter(|| black_box(topk_support(black_box(&scores), n, 5).unwrap()))
    });
}

fn bench_forward_backward(c: &mut Criterion) {
    let ds = bench_dataset(20, 96);
    let (_, batch) = bench_batch(&ds);
    let model = init_model(&bench_config(), 0).unwrap();
    let labels = {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        domain_labels(&batch.masked, 4, 0.0, &mut rng).unwrap()
    };
    c.bench_function("model_forward_backward_14x24", |bench| {
        bench.iter_batched(
            Tape::new,
            |mut tape| {
                let out = model.forward_on(&mut tape, &batch, &mut Mode::Eval).unwrap();
                let (s, count) =
                    masked_abs_sum(&mut tape, out.xhat, &batch.truth, &batch.masked).unwrap();
                let main = tape.scale(s, 1.0 / count as f64);
                let logits = model
                    .discriminate(&mut tape, out.z, Some(1.0), &mut Mode::Eval)
                    .unwrap();
                let (ce, rows) = class_ce_sum(&mut tape, logits, &labels).unwrap();
                let d = tape.scale(ce, 1.0 / rows as f64);
                let loss = tape.add(main, d).unwrap();
                tape.backward(loss).unwrap();
                black_box(tape.value(loss)[0])
            },
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(
    benches,
    bench_matmul,
    bench_rfft,
    bench_gnn_layer,
    bench_topk,
    bench_forward_backward
);
criterion_main!(benches);
