//! Trainable model bundles and their checkpoint mapping.
//!
//! Loading re-initializes the parameter layout from the stored config
//! (registration is deterministic), then overwrites values by tensor
//! name, so the id structure never needs serializing.

use crate::agg::{AggConfig, AggregatorParams};
use crate::checkpoint::Checkpoint;
use crate::config::ConfigMap;
use crate::error::{Error, Result};
use crate::rng::{subseed, Rng};
use crate::schedule::DimSchedule;
use crate::tensor::ParamStore;
use crate::text::{encode_text_value, tokenize, TextConfig, TextEncoderParams, Vocab};
use crate::video::{encode_value, EmbeddingVector, EncoderConfig, VideoClip, VideoEncoderParams};
use std::path::Path;

/// Clip encoder + text encoder trained jointly on short clips.
#[derive(Debug, Clone)]
pub struct ClipTextModel {
    pub store: ParamStore,
    pub video: VideoEncoderParams,
    pub text: TextEncoderParams,
    pub vocab: Vocab,
    pub seed: u64,
}

impl ClipTextModel {
    pub fn init(enc_cfg: &EncoderConfig, txt_cfg: &TextConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        if enc_cfg.embed != txt_cfg.embed {
            return Err(Error::Config(format!(
                "joint dimensions differ: video {} vs text {}",
                enc_cfg.embed, txt_cfg.embed
            )));
        }
        let mut store = ParamStore::new();
        let mut rng = Rng::new(subseed(seed, "model-init"));
        let video = VideoEncoderParams::init(&mut store, "venc", enc_cfg, &mut rng)?;
        let text = TextEncoderParams::init(&mut store, "tenc", txt_cfg, vocab.size(), &mut rng);
        Ok(ClipTextModel {
            store,
            video,
            text,
            vocab,
            seed,
        })
    }

    fn config_block(&self) -> ConfigMap {
        let mut c = ConfigMap::new();
        let e = &self.video.config;
        let t = &self.text.config;
        c.set("model", "cliptext");
        c.set("enc_layers", e.layers);
        c.set("enc_dim", e.dim);
        c.set("enc_head_dim", e.head_dim);
        c.set("enc_patch", e.patch);
        c.set("enc_image", e.image);
        c.set("enc_frames", e.frames);
        c.set("embed", e.embed);
        c.set("txt_layers", t.layers);
        c.set("txt_width", t.width);
        c.set("txt_head_dim", t.head_dim);
        c.set("txt_max_len", t.max_len);
        c.set("seed", self.seed);
        c
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(self.config_block());
        ck.add_blob("vocab", self.vocab.to_text().into_bytes());
        ck.add_store(&self.store);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.config.get_str("model") != Some("cliptext") {
            return Err(Error::Checkpoint(format!(
                "expected a cliptext checkpoint, found model={:?}",
                ck.config.get_str("model")
            )));
        }
        let cfg = &ck.config;
        let enc_cfg = EncoderConfig {
            layers: cfg.usize_or("enc_layers", 0)?,
            dim: cfg.usize_or("enc_dim", 0)?,
            head_dim: cfg.usize_or("enc_head_dim", 0)?,
            patch: cfg.usize_or("enc_patch", 0)?,
            image: cfg.usize_or("enc_image", 0)?,
            frames: cfg.usize_or("enc_frames", 0)?,
            embed: cfg.usize_or("embed", 0)?,
        };
        let txt_cfg = TextConfig {
            layers: cfg.usize_or("txt_layers", 0)?,
            width: cfg.usize_or("txt_width", 0)?,
            head_dim: cfg.usize_or("txt_head_dim", 0)?,
            max_len: cfg.usize_or("txt_max_len", 0)?,
            embed: cfg.usize_or("embed", 0)?,
        };
        let seed = cfg.u64_or("seed", 0)?;
        let vocab_text = ck
            .blob("vocab")
            .ok_or_else(|| Error::Checkpoint("missing vocab blob".into()))?;
        let vocab = Vocab::from_text(
            std::str::from_utf8(vocab_text)
                .map_err(|_| Error::Checkpoint("vocab is not utf-8".into()))?,
        )?;
        let mut model = ClipTextModel::init(&enc_cfg, &txt_cfg, vocab, seed)?;
        ck.restore_store(&mut model.store)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    pub fn embed_clip(&self, clip: &VideoClip, schedule: &DimSchedule) -> Result<EmbeddingVector> {
        encode_value(&self.store, &self.video, clip, schedule)
    }

    pub fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        let row = tokenize(text, &self.vocab, self.text.config.max_len)?;
        encode_text_value(&self.store, &self.text, &row)
    }
}

/// Aggregator + summary text encoder trained on cached segment features.
#[derive(Debug, Clone)]
pub struct AggModel {
    pub store: ParamStore,
    pub agg: AggregatorParams,
    pub text: TextEncoderParams,
    pub vocab: Vocab,
    /// sha256 of the frozen encoder checkpoint the features came from.
    pub encoder_hash: String,
    pub seed: u64,
}

impl AggModel {
    pub fn init(
        agg_cfg: &AggConfig,
        txt_cfg: &TextConfig,
        vocab: Vocab,
        encoder_hash: &str,
        seed: u64,
    ) -> Result<Self> {
        if agg_cfg.embed != txt_cfg.embed {
            return Err(Error::Config(format!(
                "joint dimensions differ: aggregator {} vs text {}",
                agg_cfg.embed, txt_cfg.embed
            )));
        }
        let mut store = ParamStore::new();
        let mut rng = Rng::new(subseed(seed, "agg-init"));
        let agg = AggregatorParams::init(&mut store, "agg", agg_cfg, &mut rng);
        let text = TextEncoderParams::init(&mut store, "tagg", txt_cfg, vocab.size(), &mut rng);
        Ok(AggModel {
            store,
            agg,
            text,
            vocab,
            encoder_hash: encoder_hash.to_string(),
            seed,
        })
    }

    fn config_block(&self) -> ConfigMap {
        let mut c = ConfigMap::new();
        let a = &self.agg.config;
        let t = &self.text.config;
        c.set("model", "agg");
        c.set("agg_layers", a.layers);
        c.set("agg_width", a.width);
        c.set("agg_head_dim", a.head_dim);
        c.set("agg_max_segments", a.max_segments);
        c.set("embed", a.embed);
        c.set("txt_layers", t.layers);
        c.set("txt_width", t.width);
        c.set("txt_head_dim", t.head_dim);
        c.set("txt_max_len", t.max_len);
        c.set("encoder_hash", &self.encoder_hash);
        c.set("seed", self.seed);
        c
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(self.config_block());
        ck.add_blob("vocab", self.vocab.to_text().into_bytes());
        ck.add_store(&self.store);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.config.get_str("model") != Some("agg") {
            return Err(Error::Checkpoint(format!(
                "expected an agg checkpoint, found model={:?}",
                ck.config.get_str("model")
            )));
        }
        let cfg = &ck.config;
        let agg_cfg = AggConfig {
            layers: cfg.usize_or("agg_layers", 0)?,
            width: cfg.usize_or("agg_width", 0)?,
            head_dim: cfg.usize_or("agg_head_dim", 0)?,
            max_segments: cfg.usize_or("agg_max_segments", 0)?,
            embed: cfg.usize_or("embed", 0)?,
        };
        let txt_cfg = TextConfig {
            layers: cfg.usize_or("txt_layers", 0)?,
            width: cfg.usize_or("txt_width", 0)?,
            head_dim: cfg.usize_or("txt_head_dim", 0)?,
            max_len: cfg.usize_or("txt_max_len", 0)?,
            embed: cfg.usize_or("embed", 0)?,
        };
        let encoder_hash = cfg.str_or("encoder_hash", "");
        let seed = cfg.u64_or("seed", 0)?;
        let vocab_text = ck
            .blob("vocab")
            .ok_or_else(|| Error::Checkpoint("missing vocab blob".into()))?;
        let vocab = Vocab::from_text(
            std::str::from_utf8(vocab_text)
                .map_err(|_| Error::Checkpoint("vocab is not utf-8".into()))?,
        )?;
        let mut model = AggModel::init(&agg_cfg, &txt_cfg, vocab, &encoder_hash, seed)?;
        ck.restore_store(&mut model.store)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    pub fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        let row = tokenize(text, &self.vocab, self.text.config.max_len)?;
        encode_text_value(&self.store, &self.text, &row)
    }
}

/// Clip encoder with a linear classification head over long-video
/// ordering classes, for the frame-count-vs-width sweeps.
#[derive(Debug, Clone)]
pub struct FrameClassifierModel {
    pub store: ParamStore,
    pub video: VideoEncoderParams,
    pub head: crate::adaptive::LinearParams,
    pub classes: usize,
    pub seed: u64,
}

impl FrameClassifierModel {
    pub fn init(enc_cfg: &EncoderConfig, classes: usize, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(subseed(seed, "frame-classifier-init"));
        let video = VideoEncoderParams::init(&mut store, "venc", enc_cfg, &mut rng)?;
        let mut head = crate::adaptive::LinearParams::init(
            &mut store,
            "chead",
            classes,
            enc_cfg.embed,
            false,
            false,
            &mut rng,
        );
        head.nest_in = false;
        head.nest_out = false;
        Ok(FrameClassifierModel {
            store,
            video,
            head,
            classes,
            seed,
        })
    }

    /// Class logits for a subclip whose frames sit at `frame_pos` within
    /// the original video.
    pub fn classify(
        &self,
        clip: &VideoClip,
        frame_pos: &[usize],
        schedule: &DimSchedule,
    ) -> Result<Vec<f64>> {
        let mut tape = crate::tensor::Tape::new();
        let bound = self.video.bind(&mut tape, &self.store, true);
        let emb = crate::video::encode_features(&mut tape, &bound, clip, schedule, Some(frame_pos))?;
        let bhead = self.head.bind(&mut tape, &self.store, true);
        let logits = crate::adaptive::adaptive_linear(
            &mut tape,
            &bhead,
            emb,
            self.classes,
            self.video.config.embed,
        )?;
        Ok(tape.value(logits).to_vec())
    }

    fn config_block(&self) -> ConfigMap {
        let mut c = ConfigMap::new();
        let e = &self.video.config;
        c.set("model", "frameclassifier");
        c.set("enc_layers", e.layers);
        c.set("enc_dim", e.dim);
        c.set("enc_head_dim", e.head_dim);
        c.set("enc_patch", e.patch);
        c.set("enc_image", e.image);
        c.set("enc_frames", e.frames);
        c.set("embed", e.embed);
        c.set("classes", self.classes);
        c.set("seed", self.seed);
        c
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(self.config_block());
        ck.add_store(&self.store);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.config.get_str("model") != Some("frameclassifier") {
            return Err(Error::Checkpoint(format!(
                "expected a frameclassifier checkpoint, found model={:?}",
                ck.config.get_str("model")
            )));
        }
        let cfg = &ck.config;
        let enc_cfg = EncoderConfig {
            layers: cfg.usize_or("enc_layers", 0)?,
            dim: cfg.usize_or("enc_dim", 0)?,
            head_dim: cfg.usize_or("enc_head_dim", 0)?,
            patch: cfg.usize_or("enc_patch", 0)?,
            image: cfg.usize_or("enc_image", 0)?,
            frames: cfg.usize_or("enc_frames", 0)?,
            embed: cfg.usize_or("embed", 0)?,
        };
        let classes = cfg.usize_or("classes", 0)?;
        let seed = cfg.u64_or("seed", 0)?;
        let mut model = FrameClassifierModel::init(&enc_cfg, classes, seed)?;
        ck.restore_store(&mut model.store)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cliptext_checkpoint_roundtrip() {
        let vocab = Vocab::build(["spark rises", "wave falls"]);
        let model = ClipTextModel::init(
            &EncoderConfig::tiny(),
            &TextConfig::tiny(8),
            vocab,
            7,
        )
        .unwrap();
        let ck = model.to_checkpoint();
        let bytes = ck.to_bytes().unwrap();
        let back = ClipTextModel::from_checkpoint(
            &Checkpoint::read_from(&mut bytes.as_slice()).unwrap(),
        )
        .unwrap();
        assert_eq!(model.store.len(), back.store.len());
        for ((_, a), (_, b)) in model.store.iter().zip(back.store.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.data, b.data);
        }
        // Same text, same embedding after the roundtrip.
        let e1 = model.embed_text("spark rises").unwrap();
        let e2 = back.embed_text("spark rises").unwrap();
        assert_eq!(e1, e2);
    }

    #[test]
    fn agg_checkpoint_roundtrip() {
        let vocab = Vocab::build(["first spark rises then wave falls"]);
        let model = AggModel::init(
            &AggConfig {
                layers: 1,
                width: 16,
                head_dim: 8,
                max_segments: 4,
                embed: 8,
            },
            &TextConfig::tiny(8),
            vocab,
            "abc123",
            9,
        )
        .unwrap();
        let bytes = model.to_checkpoint().to_bytes().unwrap();
        let back =
            AggModel::from_checkpoint(&Checkpoint::read_from(&mut bytes.as_slice()).unwrap())
                .unwrap();
        assert_eq!(back.encoder_hash, "abc123");
        for ((_, a), (_, b)) in model.store.iter().zip(back.store.iter()) {
            assert_eq!(a.data, b.data);
        }
    }

    #[test]
    fn wrong_model_kind_rejected() {
        let vocab = Vocab::build(["spark rises"]);
        let model = ClipTextModel::init(
            &EncoderConfig::tiny(),
            &TextConfig::tiny(8),
            vocab,
            1,
        )
        .unwrap();
        let bytes = model.to_checkpoint().to_bytes().unwrap();
        let ck = Checkpoint::read_from(&mut bytes.as_slice()).unwrap();
        assert!(AggModel::from_checkpoint(&ck).is_err());
    }
}
