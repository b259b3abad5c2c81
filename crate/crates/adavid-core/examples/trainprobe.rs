use adavid_core::data::{generate_synthetic, SyntheticDatasetSpec};
use adavid_core::eval::{build_mcq_inter, mcq_eval_model};
use adavid_core::model::ClipTextModel;
use adavid_core::schedule::named_schedule;
use adavid_core::text::TextConfig;
use adavid_core::train::{train_encoder, EncoderPath, TrainConfig};
use adavid_core::video::EncoderConfig;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args[1].parse().unwrap();
    let steps: usize = args[2].parse().unwrap();
    let lr: f64 = args[3].parse().unwrap();
    let wd: f64 = args[4].parse().unwrap();
    let tau: f64 = args[5].parse().unwrap();
    let wscale: f64 = args[6].parse().unwrap(); // multiply weight init

    let spec = SyntheticDatasetSpec::toy(seed);
    let ds = generate_synthetic(&spec).unwrap();
    let enc_cfg = EncoderConfig::toy();
    let txt_cfg = TextConfig::toy(enc_cfg.embed);
    let mut model = ClipTextModel::init(&enc_cfg, &txt_cfg, ds.vocab.clone(), seed).unwrap();
    if (wscale - 1.0).abs() > 1e-9 {
        for (_, p) in model.store.iter_mut() {
            if p.name.ends_with(".w") || p.name.contains("embed") || p.name.contains("pos") || p.name.ends_with("cls") {
                p.data.iter_mut().for_each(|v| *v *= wscale);
            }
        }
    }

    let mut cfg = TrainConfig::toy_encoder(seed);
    cfg.steps = steps;
    cfg.lr = lr;
    cfg.weight_decay = wd;
    cfg.temperature = tau;
    if let Ok(st) = std::env::var("STRATEGY") {
        cfg.strategy = adavid_core::schedule::ScheduleStrategy::parse(&st).unwrap();
    }
    let t0 = std::time::Instant::now();
    let trace = train_encoder(&mut model, &ds, &cfg, EncoderPath::Adaptive).unwrap();
    let bench = build_mcq_inter(&ds, 5, 200, seed + 1000).unwrap();
    let mut accs = Vec::new();
    for name in ["d-full", "d-quarter"] {
        let sched = named_schedule(name, enc_cfg.dim, enc_cfg.layers).unwrap();
        accs.push(mcq_eval_model(&model, &bench, &sched).unwrap());
    }
    println!(
        "seed={seed} lr={lr} wd={wd} tau={tau} ws={wscale}: L0={:.3} L100={:.3} Lend={:.4} | full={:.3} quarter={:.3} | {:.0}ms/step",
        trace[0].loss,
        trace.get(100).map(|r| r.loss).unwrap_or(f64::NAN),
        trace.last().unwrap().loss,
        accs[0], accs[1],
        t0.elapsed().as_millis() as f64 / steps as f64
    );
}
