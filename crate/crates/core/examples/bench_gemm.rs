//! Throughput of the three GEMM shapes a full-batch training step uses.

use std::time::Instant;

use grokbench::numkit::{gaussian_matrix, matmul, Rng};

fn main() {
    let mut rng = Rng::new(1);
    for (m, k, n) in [(4704, 500, 97), (97, 4704, 500), (4704, 97, 500)] {
        let a = gaussian_matrix(&mut rng, m, k, 1.0);
        let b = gaussian_matrix(&mut rng, k, n, 1.0);
        let reps = 5;
        let t = Instant::now();
        for _ in 0..reps {
            std::hint::black_box(matmul(&a, &b).unwrap());
        }
        let dt = t.elapsed().as_secs_f64() / reps as f64;
        println!(
            "{m}x{k}x{n}: {:.1} ms, {:.2} GMAC/s",
            dt * 1e3,
            (m * k * n) as f64 / dt / 1e9
        );
    }
}
