//! Hierarchical long-video aggregation.
//!
//! A long video is split into S contiguous segments, each encoded
//! independently by the frozen clip encoder; a small fixed-width
//! transformer distills the S segment features into one unit-norm
//! embedding. The average-pool baseline replaces the transformer with a
//! plain (order-invariant) mean over segment features.

use crate::adaptive::{
    adaptive_layernorm, adaptive_linear, l2_normalize, plain_layer_forward, BoundLayer,
    BoundLayerNorm, BoundLinear, LayerKind, LayerNormParams, LayerParams, LinearParams,
};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::schedule::DimSchedule;
use crate::tensor::{ParamId, ParamStore, Tape, Var};
use crate::video::{encode_value, EmbeddingVector, VideoClip, VideoEncoderParams};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

/// Split into S contiguous, non-overlapping, order-preserving segments.
pub fn segment(video: &VideoClip, s: usize) -> Result<Vec<VideoClip>> {
    if s == 0 || video.frames % s != 0 {
        return Err(Error::RejectedInput(format!(
            "{} frames not divisible into {s} segments",
            video.frames
        )));
    }
    let per = video.frames / s;
    let fsz = video.channels * video.height * video.width;
    Ok((0..s)
        .map(|i| {
            VideoClip::new(
                per,
                video.channels,
                video.height,
                video.width,
                video.data[i * per * fsz..(i + 1) * per * fsz].to_vec(),
            )
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AggConfig {
    pub layers: usize,
    pub width: usize,
    pub head_dim: usize,
    /// Size of the learned segment-position table.
    pub max_segments: usize,
    /// Joint embedding dimension (input and output side).
    pub embed: usize,
}

impl AggConfig {
    /// 4 layers at width 64, operating over up to 16 segment features.
    pub fn toy(embed: usize) -> Self {
        AggConfig {
            layers: 4,
            width: 64,
            head_dim: 16,
            max_segments: 16,
            embed,
        }
    }
}

/// Aggregator parameters. Runs at full capacity only; there is no width
/// slicing on this path.
#[derive(Debug, Clone)]
pub struct AggregatorParams {
    pub config: AggConfig,
    pub in_proj: LinearParams,
    pub cls: ParamId,
    pub seg_pos: ParamId,
    pub layers: Vec<LayerParams>,
    pub final_ln: LayerNormParams,
    pub head: LinearParams,
}

impl AggregatorParams {
    pub fn init(store: &mut ParamStore, prefix: &str, config: &AggConfig, rng: &mut Rng) -> Self {
        let w = config.width;
        let mut in_proj =
            LinearParams::init(store, &format!("{prefix}.in"), w, config.embed, false, false, rng);
        in_proj.nest_in = false;
        in_proj.nest_out = false;
        let cls = store.add_normal(&format!("{prefix}.cls"), 1, w, 0.2, rng);
        let seg_pos = store.add_normal(&format!("{prefix}.pos"), config.max_segments, w, 0.2, rng);
        let layers = (0..config.layers)
            .map(|l| {
                LayerParams::init(
                    store,
                    &format!("{prefix}.l{l}"),
                    LayerKind::Plain,
                    w,
                    config.head_dim,
                    rng,
                )
            })
            .collect();
        let final_ln = LayerNormParams::init(store, &format!("{prefix}.final_ln"), w);
        let mut head =
            LinearParams::init(store, &format!("{prefix}.head"), config.embed, w, false, false, rng);
        head.nest_in = false;
        head.nest_out = false;
        AggregatorParams {
            config: config.clone(),
            in_proj,
            cls,
            seg_pos,
            layers,
            final_ln,
            head,
        }
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore, frozen: bool) -> BoundAggregator {
        let bind_id = |tape: &mut Tape, id: ParamId| {
            if frozen {
                tape.frozen_param(store, id)
            } else {
                tape.param(store, id)
            }
        };
        BoundAggregator {
            config: self.config.clone(),
            in_proj: self.in_proj.bind(tape, store, frozen),
            cls: bind_id(tape, self.cls),
            seg_pos: bind_id(tape, self.seg_pos),
            layers: self.layers.iter().map(|l| l.bind(tape, store, frozen)).collect(),
            final_ln: self.final_ln.bind(tape, store, frozen),
            head: self.head.bind(tape, store, frozen),
        }
    }
}

pub struct BoundAggregator {
    pub config: AggConfig,
    pub in_proj: BoundLinear,
    pub cls: Var,
    pub seg_pos: Var,
    pub layers: Vec<BoundLayer>,
    pub final_ln: BoundLayerNorm,
    pub head: BoundLinear,
}

/// Aggregate an S x E matrix of segment features into one unit-norm
/// embedding: project to the aggregator width, add segment positions,
/// prepend cls, run the plain layers, mean-pool the segment outputs
/// (cls serves as a global attention hub), project back to E and
/// normalize.
pub fn aggregate(tape: &mut Tape, agg: &BoundAggregator, seg_feats: Var) -> Result<Var> {
    let cfg = &agg.config;
    let s = tape.rows(seg_feats);
    if s == 0 || s > cfg.max_segments {
        return Err(Error::RejectedInput(format!(
            "{s} segments outside 1..={}",
            cfg.max_segments
        )));
    }
    if tape.cols(seg_feats) != cfg.embed {
        return Err(Error::ShapeMismatch(format!(
            "segment features are {}-d, expected {}",
            tape.cols(seg_feats),
            cfg.embed
        )));
    }
    let w = cfg.width;
    let proj = adaptive_linear(tape, &agg.in_proj, seg_feats, w, cfg.embed)?;
    let pos = tape.slice2d(agg.seg_pos, 0, s, 0, w)?;
    let x = tape.add(proj, pos)?;
    let mut x = tape.concat_rows(&[agg.cls, x])?;
    for layer in &agg.layers {
        x = plain_layer_forward(tape, layer, x, w, None)?;
    }
    let x = adaptive_layernorm(tape, &agg.final_ln, x, w)?;
    // Mean over the S segment outputs, excluding cls.
    let seg_idx: Vec<usize> = (1..=s).collect();
    let segs = tape.gather_rows(x, &seg_idx)?;
    let mean_w = tape.constant(1, s, vec![1.0 / s as f64; s]);
    let pooled = tape.matmul(mean_w, segs)?;
    let emb = adaptive_linear(tape, &agg.head, pooled, cfg.embed, w)?;
    l2_normalize(tape, emb)
}

/// Segment features of a long video under the frozen encoder.
pub fn segment_features(
    enc_store: &ParamStore,
    enc: &VideoEncoderParams,
    video: &VideoClip,
    s: usize,
    schedule: &DimSchedule,
) -> Result<Vec<Vec<f64>>> {
    segment(video, s)?
        .iter()
        .map(|clip| encode_value(enc_store, enc, clip, schedule).map(|e| e.0))
        .collect()
}

/// Full hierarchical encoding: frozen per-segment features through the
/// aggregator. No gradients can reach the encoder (its forward runs on
/// separate tapes with frozen bindings).
pub fn encode_long(
    enc_store: &ParamStore,
    enc: &VideoEncoderParams,
    agg_store: &ParamStore,
    agg: &AggregatorParams,
    video: &VideoClip,
    s: usize,
    schedule: &DimSchedule,
) -> Result<EmbeddingVector> {
    let feats = segment_features(enc_store, enc, video, s, schedule)?;
    let flat: Vec<f64> = feats.iter().flatten().copied().collect();
    let mut tape = Tape::new();
    let bound = agg.bind(&mut tape, agg_store, true);
    let fv = tape.constant(s, agg.config.embed, flat);
    let emb = aggregate(&mut tape, &bound, fv)?;
    Ok(EmbeddingVector(tape.value(emb).to_vec()))
}

/// Order-invariant mean of segment features, L2-normalized.
///
/// The per-dimension addends are summed in sorted order, so any
/// permutation of the segments produces the bit-identical output.
pub fn average_pool(feats: &[Vec<f64>]) -> Result<EmbeddingVector> {
    if feats.is_empty() {
        return Err(Error::RejectedInput("no segment features".into()));
    }
    let e = feats[0].len();
    let s = feats.len() as f64;
    let mut mean = vec![0.0; e];
    let mut column = vec![0.0; feats.len()];
    for (j, m) in mean.iter_mut().enumerate() {
        for (i, f) in feats.iter().enumerate() {
            column[i] = f[j];
        }
        column.sort_unstable_by(f64::total_cmp);
        let mut acc = 0.0;
        for &v in &column {
            acc += v;
        }
        *m = acc / s;
    }
    let norm = crate::tensor::l2_norm(&mean);
    if norm < 1e-12 {
        return Err(Error::DegenerateNorm(format!(
            "segment mean has norm {norm}"
        )));
    }
    Ok(EmbeddingVector(mean.iter().map(|v| v / norm).collect()))
}

/// Average-pool baseline over the frozen encoder.
pub fn average_pool_baseline(
    enc_store: &ParamStore,
    enc: &VideoEncoderParams,
    video: &VideoClip,
    s: usize,
    schedule: &DimSchedule,
) -> Result<EmbeddingVector> {
    let feats = segment_features(enc_store, enc, video, s, schedule)?;
    average_pool(&feats)
}

// ─── Feature cache ──────────────────────────────────────────────────────────

pub const FEAT_MAGIC: &[u8; 8] = b"ADAFEAT1";

/// On-disk cache of segment features, one binary record per
/// (video, schedule): header (video id, S, E, schedule label) followed
/// by S*E little-endian f64. Writes are atomic (temp file + rename).
#[derive(Debug, Clone)]
pub struct FeatureCache {
    dir: PathBuf,
}

impl FeatureCache {
    pub fn new(dir: &Path) -> Self {
        FeatureCache {
            dir: dir.to_path_buf(),
        }
    }

    pub fn record_path(&self, schedule_label: &str, video_id: usize) -> PathBuf {
        self.dir.join(schedule_label).join(format!("{video_id:04}.feat"))
    }

    pub fn store(&self, schedule_label: &str, video_id: usize, feats: &[Vec<f64>]) -> Result<()> {
        let path = self.record_path(schedule_label, video_id);
        std::fs::create_dir_all(path.parent().unwrap())?;
        let tmp = path.with_extension("feat.tmp");
        {
            let mut w = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
            w.write_all(FEAT_MAGIC)?;
            let id = format!("{video_id:04}");
            w.write_all(&(id.len() as u64).to_le_bytes())?;
            w.write_all(id.as_bytes())?;
            w.write_all(&(feats.len() as u64).to_le_bytes())?;
            w.write_all(&(feats[0].len() as u64).to_le_bytes())?;
            w.write_all(&(schedule_label.len() as u64).to_le_bytes())?;
            w.write_all(schedule_label.as_bytes())?;
            for row in feats {
                for v in row {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            w.flush()?;
        }
        std::fs::rename(&tmp, &path)?;
        Ok(())
    }

    pub fn load(&self, schedule_label: &str, video_id: usize) -> Result<Vec<Vec<f64>>> {
        let path = self.record_path(schedule_label, video_id);
        let mut r = std::io::BufReader::new(std::fs::File::open(&path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != FEAT_MAGIC {
            return Err(Error::Checkpoint(format!(
                "{} is not a feature record",
                path.display()
            )));
        }
        let mut buf8 = [0u8; 8];
        r.read_exact(&mut buf8)?;
        let id_len = u64::from_le_bytes(buf8) as usize;
        let mut id = vec![0u8; id_len];
        r.read_exact(&mut id)?;
        r.read_exact(&mut buf8)?;
        let s = u64::from_le_bytes(buf8) as usize;
        r.read_exact(&mut buf8)?;
        let e = u64::from_le_bytes(buf8) as usize;
        r.read_exact(&mut buf8)?;
        let label_len = u64::from_le_bytes(buf8) as usize;
        let mut label = vec![0u8; label_len];
        r.read_exact(&mut label)?;
        let mut feats = vec![vec![0.0f64; e]; s];
        for row in feats.iter_mut() {
            for v in row.iter_mut() {
                r.read_exact(&mut buf8)?;
                *v = f64::from_le_bytes(buf8);
            }
        }
        Ok(feats)
    }

    pub fn has(&self, schedule_label: &str, video_id: usize) -> bool {
        self.record_path(schedule_label, video_id).exists()
    }

    /// Ids missing from the cache for the given schedules, as
    /// "schedule/id" strings.
    pub fn missing(&self, schedule_labels: &[String], video_ids: &[usize]) -> Vec<String> {
        let mut out = Vec::new();
        for label in schedule_labels {
            for &id in video_ids {
                if !self.has(label, id) {
                    out.push(format!("{label}/{id:04}"));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::video::EncoderConfig;

    #[test]
    fn segment_examples() {
        let v = VideoClip::zeros(64, 3, 8, 8);
        let segs = segment(&v, 16).unwrap();
        assert_eq!(segs.len(), 16);
        assert!(segs.iter().all(|s| s.frames == 4));

        let mut v8 = VideoClip::zeros(8, 1, 1, 1);
        for (i, x) in v8.data.iter_mut().enumerate() {
            *x = i as f64;
        }
        let segs = segment(&v8, 2).unwrap();
        assert_eq!(segs[0].data, vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!(segs[1].data, vec![4.0, 5.0, 6.0, 7.0]);

        let whole = segment(&v8, 1).unwrap();
        assert_eq!(whole.len(), 1);
        assert_eq!(whole[0].data, v8.data);

        assert!(segment(&VideoClip::zeros(7, 1, 1, 1), 2).is_err());
    }

    fn unit(v: Vec<f64>) -> Vec<f64> {
        let n = crate::tensor::l2_norm(&v);
        v.into_iter().map(|x| x / n).collect()
    }

    #[test]
    fn identity_wiring_at_single_segment() {
        // Width = embed, identity projections, zero attention/FFN/positions:
        // the aggregator reduces to a renormalization of the input feature.
        let e = 8;
        let cfg = AggConfig {
            layers: 2,
            width: e,
            head_dim: 4,
            max_segments: 4,
            embed: e,
        };
        let mut store = ParamStore::new();
        let mut rng = Rng::new(1);
        let params = AggregatorParams::init(&mut store, "agg", &cfg, &mut rng);
        for (_, p) in store.iter_mut() {
            if p.name.ends_with("gamma") {
                continue;
            }
            p.data.iter_mut().for_each(|x| *x = 0.0);
        }
        for (_, p) in store.iter_mut() {
            if p.name == "agg.in.w" || p.name == "agg.head.w" {
                for i in 0..e {
                    p.data[i * e + i] = 1.0;
                }
            }
        }
        // Final LN would distort the feature; neutralize it by feeding a
        // zero-mean unit-variance feature, for which LN is identity up to
        // epsilon.
        let feat: Vec<f64> = (0..e)
            .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let feat = unit(feat);
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, &store, true);
        let fv = tape.constant(1, e, feat.clone());
        let emb = aggregate(&mut tape, &bound, fv).unwrap();
        let want = unit(feat);
        for (a, b) in tape.value(emb).iter().zip(&want) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn permuting_segments_changes_output() {
        let e = 8;
        for seed in 0..10u64 {
            let cfg = AggConfig {
                layers: 2,
                width: 16,
                head_dim: 8,
                max_segments: 4,
                embed: e,
            };
            let mut store = ParamStore::new();
            let mut rng = Rng::new(500 + seed);
            let params = AggregatorParams::init(&mut store, "agg", &cfg, &mut rng);
            let feats: Vec<Vec<f64>> = (0..4)
                .map(|_| unit((0..e).map(|_| rng.normal()).collect()))
                .collect();
            let run = |order: &[usize]| -> Vec<f64> {
                let flat: Vec<f64> = order.iter().flat_map(|&i| feats[i].clone()).collect();
                let mut tape = Tape::new();
                let bound = params.bind(&mut tape, &store, true);
                let fv = tape.constant(4, e, flat);
                let emb = aggregate(&mut tape, &bound, fv).unwrap();
                tape.value(emb).to_vec()
            };
            let a = run(&[0, 1, 2, 3]);
            let b = run(&[1, 0, 2, 3]);
            let cos = crate::tensor::cosine(&a, &b);
            assert!(cos < 1.0 - 1e-6, "seed {seed}: cosine {cos}");
        }
    }

    #[test]
    fn average_pool_is_permutation_invariant_exactly() {
        let mut rng = Rng::new(9);
        let feats: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..6).map(|_| rng.normal()).collect())
            .collect();
        let base = average_pool(&feats).unwrap();
        let mut permuted = feats.clone();
        permuted.reverse();
        permuted.swap(1, 3);
        let p = average_pool(&permuted).unwrap();
        assert_eq!(base.0, p.0);
    }

    #[test]
    fn average_pool_identical_segments_is_that_segment() {
        let f = unit(vec![0.3, -0.2, 0.9, 0.1]);
        let feats = vec![f.clone(), f.clone(), f.clone()];
        let m = average_pool(&feats).unwrap();
        for (a, b) in m.0.iter().zip(&f) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn average_pool_antipodal_is_degenerate() {
        let f = unit(vec![1.0, 2.0, -1.0]);
        let neg: Vec<f64> = f.iter().map(|v| -v).collect();
        assert!(matches!(
            average_pool(&[f, neg]),
            Err(Error::DegenerateNorm(_))
        ));
    }

    #[test]
    fn encode_long_leaves_encoder_grads_zero() {
        let enc_cfg = EncoderConfig::tiny();
        let mut enc_store = ParamStore::new();
        let mut rng = Rng::new(21);
        let enc = VideoEncoderParams::init(&mut enc_store, "v", &enc_cfg, &mut rng).unwrap();

        let agg_cfg = AggConfig {
            layers: 1,
            width: 16,
            head_dim: 8,
            max_segments: 4,
            embed: enc_cfg.embed,
        };
        let mut agg_store = ParamStore::new();
        let agg = AggregatorParams::init(&mut agg_store, "agg", &agg_cfg, &mut rng);

        let video = VideoClip::new(
            4,
            3,
            enc_cfg.image,
            enc_cfg.image,
            (0..4 * 3 * enc_cfg.image * enc_cfg.image)
                .map(|i| (i % 7) as f64 / 7.0)
                .collect(),
        );
        let sched = DimSchedule::uniform(enc_cfg.dim, enc_cfg.layers);
        let emb = encode_long(&enc_store, &enc, &agg_store, &agg, &video, 2, &sched).unwrap();
        assert!((emb.norm() - 1.0).abs() < 1e-9);
        // The freeze contract: nothing can have accumulated into the
        // encoder store.
        for (_, p) in enc_store.iter() {
            assert!(p.grad.iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn feature_cache_roundtrip_and_missing() {
        let dir = tempfile::tempdir().unwrap();
        let cache = FeatureCache::new(dir.path());
        let feats = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        cache.store("d-full", 3, &feats).unwrap();
        assert_eq!(cache.load("d-full", 3).unwrap(), feats);
        let missing = cache.missing(&["d-full".into(), "d-dec".into()], &[3, 4]);
        assert_eq!(missing, vec!["d-full/0004", "d-dec/0003", "d-dec/0004"]);
    }
}
