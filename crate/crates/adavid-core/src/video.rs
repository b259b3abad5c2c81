//! Video encoder: patchify, divided space-time layers under a width
//! schedule, cls readout into the joint embedding space.

use crate::adaptive::{
    adaptive_layer_forward, adaptive_layernorm, adaptive_linear, l2_normalize, transition,
    BoundLayer, BoundLayerNorm, BoundLinear, LayerKind, LayerNormParams, LayerParams,
    LinearParams,
};
use crate::error::{Error, Result};
use crate::flops::{schedule_flops, AttentionMode, FlopsReport};
use crate::rng::Rng;
use crate::schedule::{allowed_widths, DimSchedule};
use crate::tensor::{ParamId, ParamStore, Tape, Var};

/// Raw clip: frames x channels x height x width, values in [0, 1],
/// stored row-major in that order.
#[derive(Debug, Clone)]
pub struct VideoClip {
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl VideoClip {
    pub fn new(frames: usize, channels: usize, height: usize, width: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), frames * channels * height * width);
        VideoClip {
            frames,
            channels,
            height,
            width,
            data,
        }
    }

    pub fn zeros(frames: usize, channels: usize, height: usize, width: usize) -> Self {
        let n = frames * channels * height * width;
        VideoClip::new(frames, channels, height, width, vec![0.0; n])
    }

    pub fn pixel(&self, f: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[((f * self.channels + c) * self.height + y) * self.width + x]
    }

    pub fn pixel_mut(&mut self, f: usize, c: usize, y: usize, x: usize) -> &mut f64 {
        &mut self.data[((f * self.channels + c) * self.height + y) * self.width + x]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderConfig {
    pub layers: usize,
    pub dim: usize,
    pub head_dim: usize,
    pub patch: usize,
    pub image: usize,
    pub frames: usize,
    pub embed: usize,
}

impl EncoderConfig {
    /// Default desk-scale configuration: the 12-layer/768 structure at
    /// one-twelfth the width.
    pub fn toy() -> Self {
        EncoderConfig {
            layers: 8,
            dim: 64,
            head_dim: 8,
            patch: 8,
            image: 32,
            frames: 4,
            embed: 32,
        }
    }

    /// Minimal configuration for gradient checks: L=2, D=16, H=8, T=2,
    /// N=4 (16x16 image with 8x8 patches).
    pub fn tiny() -> Self {
        EncoderConfig {
            layers: 2,
            dim: 16,
            head_dim: 8,
            patch: 8,
            image: 16,
            frames: 2,
            embed: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim % 4 != 0 {
            return Err(Error::Config(format!("dim {} not divisible by 4", self.dim)));
        }
        if self.dim % self.head_dim != 0 {
            return Err(Error::Config(format!(
                "dim {} is not a multiple of head_dim {}",
                self.dim, self.head_dim
            )));
        }
        if self.image % self.patch != 0 {
            return Err(Error::Config(format!(
                "image {} not divisible by patch {}",
                self.image, self.patch
            )));
        }
        Ok(())
    }

    /// True when every allowed width runs under the head size; training
    /// samplers require this, narrow debug configs may not satisfy it.
    pub fn fully_adaptive(&self) -> bool {
        allowed_widths(self.dim).iter().all(|w| w % self.head_dim == 0)
    }

    /// Patches per frame: (image/patch)^2.
    pub fn tokens_per_frame(&self) -> usize {
        (self.image / self.patch) * (self.image / self.patch)
    }

    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch * 3
    }

    pub fn allowed(&self) -> [usize; 4] {
        allowed_widths(self.dim)
    }

    pub fn is_allowed(&self, w: usize) -> bool {
        self.allowed().contains(&w)
    }

    pub fn validate_schedule(&self, schedule: &DimSchedule) -> Result<()> {
        if schedule.len() != self.layers {
            return Err(Error::RejectedInput(format!(
                "schedule has {} entries for {} layers",
                schedule.len(),
                self.layers
            )));
        }
        for &w in &schedule.widths {
            if !self.is_allowed(w) {
                return Err(Error::RejectedInput(format!(
                    "width {w} not in allowed set {:?}",
                    self.allowed()
                )));
            }
            if w % self.head_dim != 0 {
                return Err(Error::RejectedInput(format!(
                    "width {w} is not a multiple of head_dim {}",
                    self.head_dim
                )));
            }
        }
        Ok(())
    }
}

/// Unit-norm joint-space embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(pub Vec<f64>);

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        crate::tensor::l2_norm(&self.0)
    }
}

#[derive(Debug, Clone)]
pub struct VideoEncoderParams {
    pub config: EncoderConfig,
    pub patch_proj: LinearParams,
    pub spatial_pos: ParamId,
    pub temporal_pos: ParamId,
    pub cls: ParamId,
    pub layers: Vec<LayerParams>,
    pub final_ln: LayerNormParams,
    pub head: LinearParams,
}

impl VideoEncoderParams {
    pub fn init(store: &mut ParamStore, prefix: &str, config: &EncoderConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let n = config.tokens_per_frame();
        // Patch pixels are not nested: only the output side slices.
        let mut patch_proj = LinearParams::init(
            store,
            &format!("{prefix}.patch"),
            d,
            config.patch_dim(),
            false,
            true,
            rng,
        );
        patch_proj.nest_in = false;
        let spatial_pos = store.add_normal(&format!("{prefix}.spos"), n, d, 0.2, rng);
        let temporal_pos = store.add_normal(&format!("{prefix}.tpos"), config.frames, d, 0.2, rng);
        let cls = store.add_normal(&format!("{prefix}.cls"), 1, d, 0.2, rng);
        let layers = (0..config.layers)
            .map(|l| {
                LayerParams::init(
                    store,
                    &format!("{prefix}.l{l}"),
                    LayerKind::SpaceTime,
                    d,
                    config.head_dim,
                    rng,
                )
            })
            .collect();
        let final_ln = LayerNormParams::init(store, &format!("{prefix}.final_ln"), d);
        // Head output side is the fixed joint dimension E; only the input
        // side slices, which matches zero-padding the cls token to D and
        // applying the full head.
        let mut head = LinearParams::init(
            store,
            &format!("{prefix}.head"),
            config.embed,
            d,
            true,
            false,
            rng,
        );
        head.nest_out = false;
        Ok(VideoEncoderParams {
            config: config.clone(),
            patch_proj,
            spatial_pos,
            temporal_pos,
            cls,
            layers,
            final_ln,
            head,
        })
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore, frozen: bool) -> BoundVideoEncoder {
        let bind_id = |tape: &mut Tape, id: ParamId| {
            if frozen {
                tape.frozen_param(store, id)
            } else {
                tape.param(store, id)
            }
        };
        BoundVideoEncoder {
            config: self.config.clone(),
            patch_proj: self.patch_proj.bind(tape, store, frozen),
            spatial_pos: bind_id(tape, self.spatial_pos),
            temporal_pos: bind_id(tape, self.temporal_pos),
            cls: bind_id(tape, self.cls),
            layers: self.layers.iter().map(|l| l.bind(tape, store, frozen)).collect(),
            final_ln: self.final_ln.bind(tape, store, frozen),
            head: self.head.bind(tape, store, frozen),
        }
    }
}

pub struct BoundVideoEncoder {
    pub config: EncoderConfig,
    pub patch_proj: BoundLinear,
    pub spatial_pos: Var,
    pub temporal_pos: Var,
    pub cls: Var,
    pub layers: Vec<BoundLayer>,
    pub final_ln: BoundLayerNorm,
    pub head: BoundLinear,
}

/// Flatten a clip into per-patch rows: row (f, p) holds the patch pixels
/// ordered channel, then y, then x within the patch.
pub fn patch_rows(clip: &VideoClip, patch: usize) -> Vec<f64> {
    let per_side = clip.height / patch;
    let n = per_side * per_side;
    let pdim = patch * patch * clip.channels;
    let mut out = Vec::with_capacity(clip.frames * n * pdim);
    for f in 0..clip.frames {
        for py in 0..per_side {
            for px in 0..per_side {
                for c in 0..clip.channels {
                    for dy in 0..patch {
                        for dx in 0..patch {
                            out.push(clip.pixel(f, c, py * patch + dy, px * patch + dx));
                        }
                    }
                }
            }
        }
    }
    out
}

/// Tokenize a clip at width d0: project patches, add spatial and temporal
/// positions (sliced to d0), prepend the cls token.
pub fn patchify(
    tape: &mut Tape,
    enc: &BoundVideoEncoder,
    clip: &VideoClip,
    d0: usize,
) -> Result<Var> {
    patchify_at(tape, enc, clip, d0, None)
}

/// As [`patchify`], with explicit temporal-position indices for each
/// frame (used when frames were sampled out of a longer video and should
/// keep their original positions).
pub fn patchify_at(
    tape: &mut Tape,
    enc: &BoundVideoEncoder,
    clip: &VideoClip,
    d0: usize,
    frame_pos: Option<&[usize]>,
) -> Result<Var> {
    let cfg = &enc.config;
    if clip.height % cfg.patch != 0 || clip.width % cfg.patch != 0 {
        return Err(Error::RejectedInput(format!(
            "image {}x{} not divisible by patch {}",
            clip.height, clip.width, cfg.patch
        )));
    }
    if clip.height != cfg.image || clip.width != cfg.image || clip.channels != 3 {
        return Err(Error::RejectedInput(format!(
            "clip {}x{}x{} does not match configured image {}x{}x3",
            clip.channels, clip.height, clip.width, cfg.image, cfg.image
        )));
    }
    if clip.frames > cfg.frames {
        return Err(Error::RejectedInput(format!(
            "clip has {} frames, encoder supports up to {}",
            clip.frames, cfg.frames
        )));
    }
    if !cfg.is_allowed(d0) {
        return Err(Error::RejectedInput(format!(
            "width {d0} not in allowed set {:?}",
            cfg.allowed()
        )));
    }
    let t = clip.frames;
    let n = cfg.tokens_per_frame();
    let rows = tape.constant(t * n, cfg.patch_dim(), patch_rows(clip, cfg.patch));
    let proj = adaptive_linear(tape, &enc.patch_proj, rows, d0, cfg.patch_dim())?;

    let spos = tape.slice2d(enc.spatial_pos, 0, n, 0, d0)?;
    let spos_idx: Vec<usize> = (0..t * n).map(|i| i % n).collect();
    let spos_rows = tape.gather_rows(spos, &spos_idx)?;
    let with_spos = tape.add(proj, spos_rows)?;

    if let Some(pos) = frame_pos {
        if pos.len() != t {
            return Err(Error::RejectedInput(format!(
                "{} frame positions for {t} frames",
                pos.len()
            )));
        }
        if let Some(&bad) = pos.iter().find(|&&p| p >= cfg.frames) {
            return Err(Error::RejectedInput(format!(
                "frame position {bad} exceeds temporal table of {}",
                cfg.frames
            )));
        }
    }
    let tpos = tape.slice2d(enc.temporal_pos, 0, cfg.frames, 0, d0)?;
    let tpos_idx: Vec<usize> = (0..t * n)
        .map(|i| frame_pos.map_or(i / n, |p| p[i / n]))
        .collect();
    let tpos_rows = tape.gather_rows(tpos, &tpos_idx)?;
    let with_tpos = tape.add(with_spos, tpos_rows)?;

    let cls = tape.slice2d(enc.cls, 0, 1, 0, d0)?;
    tape.concat_rows(&[cls, with_tpos])
}

/// Encode a clip under a width schedule into a unit-norm embedding.
pub fn encode(
    tape: &mut Tape,
    enc: &BoundVideoEncoder,
    clip: &VideoClip,
    schedule: &DimSchedule,
) -> Result<Var> {
    encode_at(tape, enc, clip, schedule, None)
}

/// As [`encode`], with explicit temporal positions for sampled frames.
pub fn encode_at(
    tape: &mut Tape,
    enc: &BoundVideoEncoder,
    clip: &VideoClip,
    schedule: &DimSchedule,
    frame_pos: Option<&[usize]>,
) -> Result<Var> {
    let emb = encode_features(tape, enc, clip, schedule, frame_pos)?;
    l2_normalize(tape, emb)
}

/// The pre-normalization joint-space features (used by classification
/// heads, where normalizing would cap the logit scale).
pub fn encode_features(
    tape: &mut Tape,
    enc: &BoundVideoEncoder,
    clip: &VideoClip,
    schedule: &DimSchedule,
    frame_pos: Option<&[usize]>,
) -> Result<Var> {
    let cfg = &enc.config;
    cfg.validate_schedule(schedule)?;
    let t = clip.frames;
    let n = cfg.tokens_per_frame();
    let mut x = patchify_at(tape, enc, clip, schedule.widths[0], frame_pos)?;
    for (layer, &d) in enc.layers.iter().zip(&schedule.widths) {
        x = transition(tape, x, d)?;
        x = adaptive_layer_forward(tape, layer, x, d, t, n, true)?;
    }
    let d_last = *schedule.widths.last().unwrap();
    let x = adaptive_layernorm(tape, &enc.final_ln, x, d_last)?;
    let cls = tape.gather_rows(x, &[0])?;
    adaptive_linear(tape, &enc.head, cls, cfg.embed, d_last)
}

/// Encode on a throwaway tape and return the embedding values.
pub fn encode_value(
    store: &ParamStore,
    params: &VideoEncoderParams,
    clip: &VideoClip,
    schedule: &DimSchedule,
) -> Result<EmbeddingVector> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, store, true);
    let emb = encode(&mut tape, &bound, clip, schedule)?;
    Ok(EmbeddingVector(tape.value(emb).to_vec()))
}

// ─── Vanilla full-width path ────────────────────────────────────────────────
//
// A schedule-free forward with no slicing and no transitions, used as an
// oracle: training with the fixed d-full strategy must reproduce it bit
// for bit.

fn vanilla_linear(tape: &mut Tape, p: &BoundLinear, x: Var) -> Result<Var> {
    let y = tape.matmul_nt(x, p.w)?;
    match p.b {
        Some(b) => tape.add_row(y, b),
        None => Ok(y),
    }
}

fn vanilla_layernorm(tape: &mut Tape, p: &BoundLayerNorm, x: Var) -> Result<Var> {
    let m = tape.mean_lastdim(x);
    let xc = tape.sub_col(x, m)?;
    let sq = tape.mul(xc, xc)?;
    let var = tape.mean_lastdim(sq);
    let veps = tape.add_scalar(var, p.eps);
    let inv = tape.rsqrt(veps);
    let xn = tape.mul_col(xc, inv)?;
    let scaled = tape.mul_row(xn, p.gamma)?;
    tape.add_row(scaled, p.beta)
}

fn vanilla_mha(
    tape: &mut Tape,
    p: &crate::adaptive::BoundMha,
    x_q: Var,
    x_kv: Var,
) -> Result<Var> {
    let d = p.full;
    let h = p.head_dim;
    let q = vanilla_linear(tape, &p.wq, x_q)?;
    let k = vanilla_linear(tape, &p.wk, x_kv)?;
    let v = vanilla_linear(tape, &p.wv, x_kv)?;
    let kq = tape.rows(q);
    let kkv = tape.rows(k);
    let scale = 1.0 / (h as f64).sqrt();
    let mut parts = Vec::with_capacity(d / h);
    for head in 0..d / h {
        let qh = tape.slice2d(q, 0, kq, head * h, h)?;
        let kh = tape.slice2d(k, 0, kkv, head * h, h)?;
        let vh = tape.slice2d(v, 0, kkv, head * h, h)?;
        let scores = tape.matmul_nt(qh, kh)?;
        let scores = tape.scale(scores, scale);
        let probs = tape.softmax_lastdim(scores)?;
        parts.push(tape.matmul(probs, vh)?);
    }
    let ctx = tape.concat_cols(&parts)?;
    vanilla_linear(tape, &p.wo, ctx)
}

fn vanilla_ffn(tape: &mut Tape, p: &crate::adaptive::BoundFfn, x: Var) -> Result<Var> {
    let h = vanilla_linear(tape, &p.w1, x)?;
    let h = tape.gelu(h);
    vanilla_linear(tape, &p.w2, h)
}

fn vanilla_spacetime_layer(
    tape: &mut Tape,
    layer: &BoundLayer,
    x: Var,
    t: usize,
    n: usize,
) -> Result<Var> {
    let d = layer.full;
    let ln_time = layer.ln_time.as_ref().expect("space-time layer");
    let attn_time = layer.attn_time.as_ref().expect("space-time layer");

    let h = vanilla_layernorm(tape, &layer.ln_attn, x)?;
    let mut parts = Vec::with_capacity(t + 1);
    let cls_q = tape.gather_rows(h, &[0])?;
    parts.push(vanilla_mha(tape, &layer.attn, cls_q, h)?);
    for f in 0..t {
        let rows: Vec<usize> = (0..n).map(|p| 1 + f * n + p).collect();
        let q = tape.gather_rows(h, &rows)?;
        let mut with_cls = rows.clone();
        with_cls.push(0);
        let kv = tape.gather_rows(h, &with_cls)?;
        parts.push(vanilla_mha(tape, &layer.attn, q, kv)?);
    }
    let space_out = tape.concat_rows(&parts)?;
    let x = tape.add(x, space_out)?;

    let h = vanilla_layernorm(tape, ln_time, x)?;
    let mut parts = Vec::with_capacity(n + 1);
    parts.push(tape.constant(1, d, vec![0.0; d]));
    for p in 0..n {
        let rows: Vec<usize> = (0..t).map(|f| 1 + f * n + p).collect();
        let q = tape.gather_rows(h, &rows)?;
        let mut with_cls = rows.clone();
        with_cls.push(0);
        let kv = tape.gather_rows(h, &with_cls)?;
        parts.push(vanilla_mha(tape, attn_time, q, kv)?);
    }
    let cat = tape.concat_rows(&parts)?;
    let mut inv = vec![0usize; t * n + 1];
    for p in 0..n {
        for f in 0..t {
            inv[1 + f * n + p] = 1 + p * t + f;
        }
    }
    let time_out = tape.gather_rows(cat, &inv)?;
    let x = tape.add(x, time_out)?;

    let h = vanilla_layernorm(tape, &layer.ln_ffn, x)?;
    let f = vanilla_ffn(tape, &layer.ffn, h)?;
    tape.add(x, f)
}

/// Schedule-free full-width encoding with no slicing machinery anywhere.
pub fn encode_vanilla(tape: &mut Tape, enc: &BoundVideoEncoder, clip: &VideoClip) -> Result<Var> {
    let cfg = &enc.config;
    let t = clip.frames;
    let n = cfg.tokens_per_frame();
    let rows = tape.constant(t * n, cfg.patch_dim(), patch_rows(clip, cfg.patch));
    let proj = vanilla_linear(tape, &enc.patch_proj, rows)?;
    let spos_idx: Vec<usize> = (0..t * n).map(|i| i % n).collect();
    let spos_rows = tape.gather_rows(enc.spatial_pos, &spos_idx)?;
    let with_spos = tape.add(proj, spos_rows)?;
    let tpos_idx: Vec<usize> = (0..t * n).map(|i| i / n).collect();
    let tpos_rows = tape.gather_rows(enc.temporal_pos, &tpos_idx)?;
    let with_tpos = tape.add(with_spos, tpos_rows)?;
    let mut x = tape.concat_rows(&[enc.cls, with_tpos])?;
    for layer in &enc.layers {
        x = vanilla_spacetime_layer(tape, layer, x, t, n)?;
    }
    let x = vanilla_layernorm(tape, &enc.final_ln, x)?;
    let cls = tape.gather_rows(x, &[0])?;
    let emb = vanilla_linear(tape, &enc.head, cls)?;
    l2_normalize(tape, emb)
}

/// Formula-comparable instrumented run: the layer stack over a bare
/// T x N patch grid, no cls token, no patch projection and no output
/// head, counting every matrix product. The result reconciles exactly
/// with [`schedule_flops`] in the matching mode.
pub fn instrumented_run(
    store: &ParamStore,
    params: &VideoEncoderParams,
    t: usize,
    n: usize,
    schedule: &DimSchedule,
    mode: AttentionMode,
    seed: u64,
) -> Result<(FlopsReport, Vec<f64>)> {
    let mut rng = Rng::new(seed);
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, store, true);
    tape.enable_flops();
    let d0 = schedule.widths[0];
    let grid_data: Vec<f64> = (0..t * n * d0).map(|_| rng.normal()).collect();
    let mut x = tape.constant(t * n, d0, grid_data);
    for (layer, &d) in bound.layers.iter().zip(&schedule.widths) {
        x = transition(&mut tape, x, d)?;
        x = match mode {
            AttentionMode::SpaceTime => {
                crate::adaptive::spacetime_layer_forward(&mut tape, layer, x, d, t, n, false)?
            }
            AttentionMode::Dense => {
                crate::adaptive::plain_layer_forward(&mut tape, layer, x, d, None)?
            }
            AttentionMode::Hierarchical { .. } => {
                return Err(Error::RejectedInput(
                    "instrumented runs cover dense and space-time layers".into(),
                ))
            }
        };
    }
    let counted = tape.flops().unwrap();
    let mut report = schedule_flops(schedule, t as u64, n as u64, mode);
    report.instrumented = Some(counted);
    Ok((report, tape.value(x).to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::named_schedule;

    fn random_clip(cfg: &EncoderConfig, seed: u64) -> VideoClip {
        let mut rng = Rng::new(seed);
        let n = cfg.frames * 3 * cfg.image * cfg.image;
        VideoClip::new(
            cfg.frames,
            3,
            cfg.image,
            cfg.image,
            (0..n).map(|_| rng.next_f64()).collect(),
        )
    }

    #[test]
    fn patch_counts() {
        // 224/16 -> 196 patches per frame; 4 frames + cls = 785 tokens.
        let cfg = EncoderConfig {
            layers: 1,
            dim: 16,
            head_dim: 4,
            patch: 16,
            image: 224,
            frames: 4,
            embed: 8,
        };
        assert_eq!(cfg.tokens_per_frame(), 196);
        let mut store = ParamStore::new();
        let mut rng = Rng::new(1);
        let params = VideoEncoderParams::init(&mut store, "v", &cfg, &mut rng).unwrap();
        let clip = VideoClip::zeros(4, 3, 224, 224);
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, &store, true);
        let tokens = patchify(&mut tape, &bound, &clip, 16).unwrap();
        assert_eq!(tape.rows(tokens), 785);

        // Toy geometry: 32/8 -> 16 patches, 4 frames + cls = 65 tokens.
        let toy = EncoderConfig::toy();
        assert_eq!(toy.tokens_per_frame(), 16);
        assert_eq!(toy.frames * toy.tokens_per_frame() + 1, 65);
    }

    #[test]
    fn zero_clip_zero_positions_gives_bias_prefix() {
        let cfg = EncoderConfig::toy();
        let mut store = ParamStore::new();
        let mut rng = Rng::new(2);
        let params = VideoEncoderParams::init(&mut store, "v", &cfg, &mut rng).unwrap();
        // Zero positional tables and cls; set a recognizable patch bias.
        for name in ["v.spos", "v.tpos", "v.cls"] {
            let id = store.iter().find(|(_, p)| p.name == name).unwrap().0;
            store.get_mut(id).data.iter_mut().for_each(|x| *x = 0.0);
        }
        let bias_id = store.iter().find(|(_, p)| p.name == "v.patch.b").unwrap().0;
        for (i, b) in store.get_mut(bias_id).data.iter_mut().enumerate() {
            *b = i as f64 * 0.1;
        }
        let clip = VideoClip::zeros(cfg.frames, 3, cfg.image, cfg.image);
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, &store, true);
        let d0 = 32;
        let tokens = patchify(&mut tape, &bound, &clip, d0).unwrap();
        let vals = tape.value(tokens);
        // Row 0 is the (zeroed) cls; every patch row equals the bias prefix.
        assert!(vals[..d0].iter().all(|&v| v == 0.0));
        for r in 1..tape.rows(tokens) {
            for j in 0..d0 {
                assert_eq!(vals[r * d0 + j], j as f64 * 0.1);
            }
        }
    }

    #[test]
    fn patchify_rejects_wrong_geometry() {
        let cfg = EncoderConfig::toy();
        let mut store = ParamStore::new();
        let mut rng = Rng::new(3);
        let params = VideoEncoderParams::init(&mut store, "v", &cfg, &mut rng).unwrap();
        let clip = VideoClip::zeros(4, 3, 24, 24);
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, &store, true);
        assert!(patchify(&mut tape, &bound, &clip, 32).is_err());
    }

    #[test]
    fn encode_is_unit_norm_for_all_named_schedules() {
        let cfg = EncoderConfig::toy();
        let mut store = ParamStore::new();
        let mut rng = Rng::new(4);
        let params = VideoEncoderParams::init(&mut store, "v", &cfg, &mut rng).unwrap();
        let clip = random_clip(&cfg, 9);
        for name in ["d-full", "d-quarter", "d-dec", "d-inc"] {
            let sched = named_schedule(name, cfg.dim, cfg.layers).unwrap();
            let emb = encode_value(&store, &params, &clip, &sched).unwrap();
            assert!((emb.norm() - 1.0).abs() < 1e-9, "{name}: {}", emb.norm());
            assert_eq!(emb.dim(), cfg.embed);
        }
    }

    #[test]
    fn encode_rejects_invalid_schedule() {
        let cfg = EncoderConfig::toy();
        let mut store = ParamStore::new();
        let mut rng = Rng::new(5);
        let params = VideoEncoderParams::init(&mut store, "v", &cfg, &mut rng).unwrap();
        let clip = random_clip(&cfg, 10);
        let bad_len = DimSchedule::uniform(64, 3);
        assert!(encode_value(&store, &params, &clip, &bad_len).is_err());
        let bad_width = DimSchedule::uniform(60, cfg.layers);
        assert!(encode_value(&store, &params, &clip, &bad_width).is_err());
    }

    #[test]
    fn last_frame_changes_embedding() {
        // Time attention carries temporal information: altering only the
        // final frame must move the embedding, across 10 seeds.
        let cfg = EncoderConfig::tiny();
        for seed in 0..10u64 {
            let mut store = ParamStore::new();
            let mut rng = Rng::new(100 + seed);
            let params = VideoEncoderParams::init(&mut store, "v", &cfg, &mut rng).unwrap();
            let clip = random_clip(&cfg, 200 + seed);
            let mut clip2 = clip.clone();
            let last = clip2.frames - 1;
            for c in 0..3 {
                for y in 0..cfg.image {
                    for x in 0..cfg.image {
                        *clip2.pixel_mut(last, c, y, x) = 1.0 - clip2.pixel(last, c, y, x);
                    }
                }
            }
            let sched = DimSchedule::uniform(cfg.dim, cfg.layers);
            let a = encode_value(&store, &params, &clip, &sched).unwrap();
            let b = encode_value(&store, &params, &clip2, &sched).unwrap();
            let cos = crate::tensor::cosine(&a.0, &b.0);
            assert!(cos < 1.0 - 1e-6, "seed {seed}: cosine {cos}");
        }
    }

    #[test]
    fn observer_purity_of_flops_counter() {
        let cfg = EncoderConfig::tiny();
        let mut store = ParamStore::new();
        let mut rng = Rng::new(6);
        let params = VideoEncoderParams::init(&mut store, "v", &cfg, &mut rng).unwrap();
        let clip = random_clip(&cfg, 11);
        let sched = DimSchedule::uniform(cfg.dim, cfg.layers);

        let run = |count: bool| -> Vec<f64> {
            let mut tape = Tape::new();
            if count {
                tape.enable_flops();
            }
            let bound = params.bind(&mut tape, &store, true);
            let emb = encode(&mut tape, &bound, &clip, &sched).unwrap();
            tape.value(emb).to_vec()
        };
        assert_eq!(run(false), run(true));
    }
}
