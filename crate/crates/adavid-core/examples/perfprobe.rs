use adavid_core::rng::Rng;
use adavid_core::tensor::Tape;
use std::time::Instant;

fn main() {
    let mut rng = Rng::new(1);
    // raw matmul throughput at typical sizes
    for (m, k, p) in [(65usize, 64usize, 64usize), (16, 64, 64), (4, 64, 64), (4, 8, 4)] {
        let a: Vec<f64> = (0..m * k).map(|_| rng.normal()).collect();
        let b: Vec<f64> = (0..p * k).map(|_| rng.normal()).collect();
        let iters = (2e8 / (2.0 * (m * k * p) as f64)).max(100.0) as usize;
        let mut tape = Tape::new();
        let av = tape.constant(m, k, a.clone());
        let bv = tape.constant(p, k, b.clone());
        let t0 = Instant::now();
        for _ in 0..iters {
            let _ = tape.matmul_nt(av, bv).unwrap();
        }
        let dt = t0.elapsed().as_secs_f64();
        let gf = (2.0 * (m * k * p) as f64 * iters as f64) / dt / 1e9;
        println!("matmul_nt {m}x{k}x{p}: {gf:.2} GFLOP/s ({iters} iters, {dt:.2}s, {} nodes)", iters);
    }
    // tape overhead: small gather + add ops
    let mut tape = Tape::new();
    let x = tape.constant(65, 64, (0..65 * 64).map(|_| rng.normal()).collect());
    let t0 = Instant::now();
    let iters = 200_000;
    for _ in 0..iters {
        let g = tape.gather_rows(x, &[1, 2, 3, 4]).unwrap();
        let _ = tape.add(g, g).unwrap();
    }
    println!("small gather+add pair: {:.2} us/op-pair", t0.elapsed().as_secs_f64() / iters as f64 * 1e6);
}
