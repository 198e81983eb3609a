//! Rough throughput numbers for the hot kernels. Ignored by default; run
//! with `cargo test -p tensorcore --release --test perf_probe -- --ignored --nocapture`.

use std::time::Instant;

use tensorcore::ops;
use tensorcore::rng::{seeded_rng, uniform_tensor};
use tensorcore::tape::Tape;

#[test]
#[ignore]
fn gemm_throughput() {
    let mut rng = seeded_rng(1);
    for (m, k, n) in [
        (32usize, 288usize, 1024usize),
        (64, 576, 256),
        (128, 1152, 64),
        (64, 1152, 2048),
        (256, 256, 256),
        (512, 512, 512),
    ] {
        let a = uniform_tensor::<f32>(&mut rng, [m, k], -1.0, 1.0);
        let b = uniform_tensor::<f32>(&mut rng, [k, n], -1.0, 1.0);
        let tape = Tape::<f32>::inference();
        let av = tape.constant(a);
        let bv = tape.constant(b);
        let reps = (2e9 / (2.0 * m as f64 * k as f64 * n as f64)).max(1.0) as usize;
        let start = Instant::now();
        let mut sink = 0.0f32;
        for _ in 0..reps {
            let c = ops::matmul(&av, &bv).unwrap();
            sink += c.value().data()[0];
        }
        let dt = start.elapsed().as_secs_f64();
        let gflops = 2.0 * (m * k * n) as f64 * reps as f64 / dt / 1e9;
        println!("gemm {m}x{k}x{n}: {gflops:.1} GFLOP/s (sink {sink})");
    }
}

#[test]
#[ignore]
fn conv_stack_forward_backward() {
    // A stack shaped like one U-Net level to estimate training step cost.
    let mut rng = seeded_rng(2);
    let x = uniform_tensor::<f32>(&mut rng, [1, 32, 32, 32], -1.0, 1.0);
    let w1 = uniform_tensor::<f32>(&mut rng, [32, 32, 3, 3], -0.1, 0.1);
    let g = uniform_tensor::<f32>(&mut rng, [32], 0.9, 1.1);
    let b = uniform_tensor::<f32>(&mut rng, [32], -0.1, 0.1);

    let fwd_only = {
        let start = Instant::now();
        let mut n = 0usize;
        while start.elapsed().as_secs_f64() < 1.0 {
            let tape = Tape::<f32>::inference();
            let xv = tape.constant(x.clone());
            let wv = tape.constant(w1.clone());
            let gv = tape.constant(g.clone());
            let bv = tape.constant(b.clone());
            let mut h = xv;
            for _ in 0..4 {
                h = ops::conv2d(&h, &wv, None, 1, 1).unwrap();
                h = ops::group_norm(&h, &gv, &bv, 8).unwrap();
                h = ops::silu(&h).unwrap();
            }
            n += 1;
        }
        start.elapsed().as_secs_f64() / n as f64
    };
    // 4 convs, each 32 out-channels x 1024 positions x (32*9) MACs
    let conv_flops = 4.0 * 2.0 * (32.0 * 1024.0 * 32.0 * 9.0);
    println!(
        "fwd stack: {:.2} ms ({:.1} GFLOP/s conv-only)",
        fwd_only * 1e3,
        conv_flops / fwd_only / 1e9
    );

    let train_step = {
        let start = Instant::now();
        let mut n = 0usize;
        while start.elapsed().as_secs_f64() < 2.0 {
            let tape = Tape::<f32>::new();
            let xv = tape.constant(x.clone());
            let wv = tape.leaf(w1.clone(), true);
            let gv = tape.leaf(g.clone(), true);
            let bv = tape.leaf(b.clone(), true);
            let mut h = xv;
            for _ in 0..4 {
                h = ops::conv2d(&h, &wv, None, 1, 1).unwrap();
                h = ops::group_norm(&h, &gv, &bv, 8).unwrap();
                h = ops::silu(&h).unwrap();
            }
            let loss = ops::mean_all(&ops::mul(&h, &h).unwrap()).unwrap();
            let grads = tape.backward(&loss).unwrap();
            let _ = grads.get(&wv);
            n += 1;
        }
        start.elapsed().as_secs_f64() / n as f64
    };
    println!(
        "fwd+bwd stack: {:.2} ms (ratio {:.2})",
        train_step * 1e3,
        train_step / fwd_only
    );
}
