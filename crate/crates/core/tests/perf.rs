//! Throughput probes, ignored by default. Run with:
//!   cargo test -p tcyc-core --test perf -- --ignored --nocapture

use std::time::Instant;
use tcyc_core::tensor::kernels::{mm_nn, mm_nt, mm_tn};
use tcyc_core::{Graph, Tensor};

#[test]
#[ignore]
fn gemm_throughput() {
    for (m, k, n) in [
        (32usize, 27usize, 2304usize),
        (64, 288, 576),
        (64, 576, 144),
        (256, 256, 256),
    ] {
        let a = vec![0.5f64; m * k];
        let b = vec![0.25f64; k * n];
        let bt = vec![0.25f64; n * k];
        let at = vec![0.5f64; k * m];
        let mut c = vec![0.0f64; m * n];
        let iters = (2e8 / (2.0 * (m * k * n) as f64)).max(3.0) as usize;
        let mut bench = |name: &str, f: &mut dyn FnMut(&mut [f64])| {
            let t0 = Instant::now();
            for _ in 0..iters {
                f(&mut c);
            }
            let gf = (2.0 * (m * k * n) as f64 * iters as f64) / t0.elapsed().as_secs_f64() / 1e9;
            println!("{name} {m}x{k}x{n}: {gf:.2} GF/s");
        };
        bench("mm_nn", &mut |c| mm_nn(&a, &b, m, k, n, c));
        bench("mm_nt", &mut |c| mm_nt(&a, &bt, m, k, n, c));
        bench("mm_tn", &mut |c| mm_tn(&at, &b, m, k, n, c));
    }
}

#[test]
#[ignore]
fn conv_forward_backward_throughput() {
    let shapes: [(usize, usize, usize); 3] = [(3, 96, 32), (32, 48, 64), (64, 24, 64)];
    for (c_in, side, c_out) in shapes {
        let x = Tensor::filled(&[c_in, side, side], 0.1);
        let w = Tensor::filled(&[c_out, c_in, 3, 3], 0.01);
        let b = Tensor::zeros(&[c_out]);
        let iters = 50;
        let t0 = Instant::now();
        for _ in 0..iters {
            let mut g = Graph::<f64>::new();
            let xv = g.leaf(x.clone(), true);
            let wv = g.leaf(w.clone(), true);
            let bv = g.leaf(b.clone(), true);
            let y = g.conv2d(xv, wv, bv, 2, 1).unwrap();
            let s = g.sum(y).unwrap();
            g.backward(s).unwrap();
        }
        let dt = t0.elapsed().as_secs_f64();
        let h_out = side / 2;
        let flops = 3.0 * 2.0 * (c_out * c_in * 9 * h_out * h_out) as f64;
        println!(
            "conv {c_in}x{side}^2 -> {c_out}x{h_out}^2 fwd+bwd: {:.1} ms, ~{:.2} GF/s",
            dt / iters as f64 * 1e3,
            flops * iters as f64 / dt / 1e9
        );
    }
}
