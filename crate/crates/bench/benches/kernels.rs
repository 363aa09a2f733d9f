use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mhnes::metrics::{MetricReport, PredictionMatrix, ProbMatrix};
use mhnes::tensor::ConvParams;
use mhnes::{Tape, Tensor};

fn conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Tensor::randn(&[32, 16, 16, 16], 1.0, &mut rng);
    let dense = Tensor::randn(&[16, 16, 3, 3], 0.1, &mut rng);
    let depthwise = Tensor::randn(&[16, 1, 3, 3], 0.1, &mut rng);
    let same = |groups| ConvParams {
        padding: 1,
        groups,
        ..ConvParams::default()
    };
    for (name, k, p) in [
        ("conv3x3", &dense, same(1)),
        ("depthwise3x3", &depthwise, same(16)),
    ] {
        c.bench_function(&format!("{name}_forward"), |b| {
            b.iter(|| {
                let mut t = Tape::new();
                let xv = t.param(x.clone());
                let kv = t.param(k.clone());
                black_box(t.conv2d(xv, kv, p).unwrap());
            })
        });
        c.bench_function(&format!("{name}_forward_backward"), |b| {
            b.iter(|| {
                let mut t = Tape::new();
                let xv = t.param(x.clone());
                let kv = t.param(k.clone());
                let y = t.conv2d(xv, kv, p).unwrap();
                let s = t.sum(y);
                t.backward(s).unwrap();
                black_box(t.grad(kv).is_some());
            })
        });
    }
}

fn metrics(c: &mut Criterion) {
    let (rows, classes, members) = (2000, 10, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let probs: Vec<ProbMatrix> = (0..members)
        .map(|_| {
            let logits = Tensor::randn(&[rows, classes], 2.0, &mut rng);
            let mut data = Vec::with_capacity(rows * classes);
            for r in 0..rows {
                let row = &logits.data()[r * classes..(r + 1) * classes];
                let z: f64 = row.iter().map(|v| v.exp()).sum();
                data.extend(row.iter().map(|v| v.exp() / z));
            }
            ProbMatrix::new(rows, classes, data).unwrap()
        })
        .collect();
    let labels: Vec<usize> = (0..rows).map(|i| i % classes).collect();
    let preds = PredictionMatrix::new(probs, labels).unwrap();
    c.bench_function("metric_report_2000x10x5", |b| {
        b.iter(|| black_box(MetricReport::compute(&preds).unwrap()))
    });
}

criterion_group!(benches, conv, metrics);
criterion_main!(benches);
