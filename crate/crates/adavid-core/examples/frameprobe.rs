use adavid_core::data::{generate_synthetic, SyntheticDatasetSpec};
use adavid_core::eval::frame_sweep;
use adavid_core::schedule::ScheduleStrategy;
use adavid_core::train::{train_frame_classifier, TrainConfig};
use adavid_core::video::EncoderConfig;

fn main() {
    let seed: u64 = std::env::args().nth(1).unwrap().parse().unwrap();
    let steps: usize = std::env::args().nth(2).map(|s| s.parse().unwrap()).unwrap_or(150);
    let mut spec = SyntheticDatasetSpec::toy(seed);
    spec.long_pairs = 5;
    spec.long_instances = 8;
    let ds = generate_synthetic(&spec).unwrap();
    let enc_cfg = EncoderConfig {
        layers: 4,
        dim: 32,
        head_dim: 4,
        patch: 8,
        image: 32,
        frames: 16,
        embed: 16,
    };
    let mut cfg = TrainConfig::toy_encoder(seed);
    cfg.steps = steps;
    cfg.batch = 8;
    cfg.strategy = ScheduleStrategy::Unconstrained;
    let t0 = std::time::Instant::now();
    let (model, trace) = train_frame_classifier(&ds, &enc_cfg, &cfg, 16).unwrap();
    println!(
        "seed {seed}: loss {:.3} -> {:.4} in {:?} ({:.0} ms/step)",
        trace[0].loss,
        trace.last().unwrap().loss,
        t0.elapsed(),
        t0.elapsed().as_millis() as f64 / steps as f64
    );
    let rows = frame_sweep(&model, &ds, &[2, 4, 16], &[32, 16], seed).unwrap();
    for r in &rows {
        println!("  frames={} width {} flops={} top1={:.3}", r.frames, r.schedule, r.flops, r.value);
    }
}
