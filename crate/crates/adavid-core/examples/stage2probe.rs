use adavid_core::agg::{AggConfig, FeatureCache};
use adavid_core::data::{generate_synthetic, SyntheticDatasetSpec};
use adavid_core::eval::long_retrieval;
use adavid_core::model::{AggModel, ClipTextModel};
use adavid_core::text::TextConfig;
use adavid_core::train::{precompute_features, train_aggregator, AggTrainMode, TrainConfig};

fn main() {
    let seed: u64 = std::env::args().nth(1).unwrap().parse().unwrap();
    let ckpt = std::env::args().nth(2).unwrap();
    let steps: usize = std::env::args().nth(3).map(|s| s.parse().unwrap()).unwrap_or(400);

    let spec = SyntheticDatasetSpec::toy(seed);
    let ds = generate_synthetic(&spec).unwrap();
    let encoder = ClipTextModel::load(std::path::Path::new(&ckpt)).unwrap();

    let schedules: Vec<String> = ["d-full", "d-half", "d-quarter", "d-dec"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let tmp = std::env::temp_dir().join(format!("adavid-stage2-probe-{seed}"));
    let _ = std::fs::remove_dir_all(&tmp);
    std::fs::create_dir_all(&tmp).unwrap();
    let cache = FeatureCache::new(&tmp);
    let t0 = std::time::Instant::now();
    precompute_features(&encoder, &ds.longs, spec.segments, &schedules, &cache).unwrap();
    println!("feature cache built in {:?} ({} videos)", t0.elapsed(), ds.longs.len());

    let agg_cfg = AggConfig::toy(encoder.video.config.embed);
    let txt_cfg = TextConfig::toy(encoder.video.config.embed);
    let mut cfg = TrainConfig::toy_aggregator(seed);
    cfg.steps = steps;

    // Transformer aggregator route.
    let t0 = std::time::Instant::now();
    let mut agg_model =
        AggModel::init(&agg_cfg, &txt_cfg, ds.vocab.clone(), "probe", seed).unwrap();
    let trace = train_aggregator(
        &mut agg_model,
        &ds.longs,
        &cache,
        &schedules,
        &cfg,
        AggTrainMode::Transformer,
    )
    .unwrap();
    println!(
        "agg route: loss {:.3} -> {:.4} in {:?}",
        trace[0].loss,
        trace.last().unwrap().loss,
        t0.elapsed()
    );

    // Average-pool route: its own text encoder, same budget.
    let t0 = std::time::Instant::now();
    let mut avg_model =
        AggModel::init(&agg_cfg, &txt_cfg, ds.vocab.clone(), "probe", seed + 10_000).unwrap();
    let trace = train_aggregator(
        &mut avg_model,
        &ds.longs,
        &cache,
        &schedules,
        &cfg,
        AggTrainMode::AveragePool,
    )
    .unwrap();
    println!(
        "avg route: loss {:.3} -> {:.4} in {:?}",
        trace[0].loss,
        trace.last().unwrap().loss,
        t0.elapsed()
    );

    for label in ["d-full", "d-quarter"] {
        let frames = spec.segments * spec.frames;
        let rec_agg = long_retrieval(&encoder, &agg_model, &ds, label, frames, true).unwrap();
        let rec_avg = long_retrieval(&encoder, &avg_model, &ds, label, frames, false).unwrap();
        println!(
            "{label}: agg R@1={:.3} R@5={:.3} | avgpool R@1={:.3} R@5={:.3} | gap {:.3}",
            rec_agg.r1, rec_agg.r5, rec_avg.r1, rec_avg.r5,
            rec_agg.r1 - rec_avg.r1
        );
    }
}
