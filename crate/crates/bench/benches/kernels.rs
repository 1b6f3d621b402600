use adaseg::losses::data_adaptive_loss;
use adaseg::metrics::{assd, dsc, hd95};
use adaseg::model::Mode;
use adaseg::Tensor;
use adaseg_bench::{batch, images, loss_config, model, volume_pair};
use criterion::{black_box, criterion_group, criterion_main, Criterion};

fn losses(c: &mut Criterion) {
    let b = batch(8, 3, 64, 1);
    let cfg = loss_config();
    c.bench_function("data_adaptive_loss 8x3x64x64", |bench| {
        bench.iter(|| data_adaptive_loss(black_box(&b), &cfg).unwrap())
    });
}

fn metrics(c: &mut Criterion) {
    let (t, p) = volume_pair(16, 64);
    c.bench_function("dsc 16x64x64", |b| b.iter(|| dsc(black_box(&t), &p).unwrap()));
    c.bench_function("hd95 16x64x64", |b| b.iter(|| hd95(black_box(&t), &p).unwrap()));
    c.bench_function("assd 16x64x64", |b| b.iter(|| assd(black_box(&t), &p).unwrap()));
}

fn network(c: &mut Criterion) {
    let mut m = model(3, 8, 64);
    let x = images(8, 64, 2);
    let mut g = c.benchmark_group("unet d3 f8 8x64x64");
    g.sample_size(10);
    g.bench_function("predict", |b| b.iter(|| m.predict(black_box(&x)).unwrap()));
    g.bench_function("forward+backward", |b| {
        b.iter(|| {
            let tape = m.forward_train(&x).unwrap();
            let grad = Tensor::from_vec(tape.probs().shape, vec![0.01; tape.probs().data.len()]).unwrap();
            m.backward(&tape, &grad).unwrap()
        })
    });
    g.bench_function("forward train", |b| b.iter(|| m.forward(black_box(&x), Mode::Train).unwrap()));
    g.finish();
}

criterion_group!(benches, losses, metrics, network);
criterion_main!(benches);
