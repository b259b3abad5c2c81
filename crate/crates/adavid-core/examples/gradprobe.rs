use adavid_core::gradcheck::grad_check;
use adavid_core::model::ClipTextModel;
use adavid_core::rng::Rng;
use adavid_core::schedule::DimSchedule;
use adavid_core::tensor::Tape;
use adavid_core::text::{encode_text, tokenize, TextConfig, Vocab};
use adavid_core::train::info_nce;
use adavid_core::video::{encode, EncoderConfig, VideoClip};

fn main() {
    let enc_cfg = EncoderConfig::tiny();
    let txt_cfg = TextConfig::tiny(enc_cfg.embed);
    let vocab = Vocab::build(["spark rises", "wave falls"]);
    let model = ClipTextModel::init(&enc_cfg, &txt_cfg, vocab.clone(), 31).unwrap();
    let mut store = model.store.clone();

    // Re-randomize at a healthier scale for the check.
    let seed: u64 = std::env::args().nth(1).map(|s| s.parse().unwrap()).unwrap_or(555);
    let scale: f64 = std::env::args().nth(2).map(|s| s.parse().unwrap()).unwrap_or(0.3);
    let tau: f64 = std::env::args().nth(3).map(|s| s.parse().unwrap()).unwrap_or(0.05);
    let mut rng = Rng::new(seed);
    for (_, p) in store.iter_mut() {
        for v in p.data.iter_mut() {
            if p.name.ends_with("gamma") {
                *v = 1.0 + rng.normal_scaled(scale);
            } else {
                *v = rng.normal_scaled(scale);
            }
        }
    }

    let video = model.video.clone();
    let text = model.text.clone();
    let mut rng2 = Rng::new(77);
    let clips: Vec<VideoClip> = (0..2)
        .map(|_| {
            VideoClip::new(
                enc_cfg.frames, 3, enc_cfg.image, enc_cfg.image,
                (0..enc_cfg.frames * 3 * enc_cfg.image * enc_cfg.image)
                    .map(|_| rng2.next_f64())
                    .collect(),
            )
        })
        .collect();
    let rows = [
        tokenize("spark rises", &vocab, txt_cfg.max_len).unwrap(),
        tokenize("wave falls", &vocab, txt_cfg.max_len).unwrap(),
    ];
    let schedule = DimSchedule::new(vec![16, 8]);

    let t0 = std::time::Instant::now();
    let report = grad_check(
        move |store, tape: &mut Tape| {
            let venc = video.bind(tape, store, false);
            let tenc = text.bind(tape, store, false);
            let mut vembs = Vec::new();
            let mut tembs = Vec::new();
            for clip in &clips {
                vembs.push(encode(tape, &venc, clip, &schedule)?);
            }
            for row in &rows {
                tembs.push(encode_text(tape, &tenc, row)?);
            }
            let v = tape.concat_rows(&vembs)?;
            let t = tape.concat_rows(&tembs)?;
            info_nce(tape, v, t, tau)
        },
        &mut store,
        1e-5,
        1e-4,
    )
    .unwrap();
    println!(
        "max_rel={:.3e} worst={}[{}] entries={} in {:?}",
        report.max_rel_err, report.worst_param, report.worst_entry, report.entries_checked,
        t0.elapsed()
    );
}
