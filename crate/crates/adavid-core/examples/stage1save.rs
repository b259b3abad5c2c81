use adavid_core::data::{generate_synthetic, SyntheticDatasetSpec};
use adavid_core::model::ClipTextModel;
use adavid_core::text::TextConfig;
use adavid_core::train::{train_encoder, EncoderPath, TrainConfig};
use adavid_core::video::EncoderConfig;

fn main() {
    let seed: u64 = std::env::args().nth(1).unwrap().parse().unwrap();
    let out = std::env::args().nth(2).unwrap();
    let spec = SyntheticDatasetSpec::toy(seed);
    let ds = generate_synthetic(&spec).unwrap();
    let enc_cfg = EncoderConfig::toy();
    let txt_cfg = TextConfig::toy(enc_cfg.embed);
    let mut model = ClipTextModel::init(&enc_cfg, &txt_cfg, ds.vocab.clone(), seed).unwrap();
    let cfg = TrainConfig::toy_encoder(seed);
    let trace = train_encoder(&mut model, &ds, &cfg, EncoderPath::Adaptive).unwrap();
    println!("seed {seed}: final loss {:.4}", trace.last().unwrap().loss);
    model.save(std::path::Path::new(&out)).unwrap();
}
