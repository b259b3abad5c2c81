//! Straight-line, non-adaptive reference implementations.
//!
//! These are the oracles the adaptive path is checked against: plain
//! dense blocks over contiguous arrays, no tape, no slicing machinery.
//! A sub-model at width d is built by materializing (copying) the sliced
//! sub-tensors into dense storage and running the vanilla forward; in
//! exact 64-bit arithmetic the adaptive forward must match it bit for
//! bit. The same code at d = D is the vanilla full-width reference.
//!
//! The arithmetic order follows the crate's numeric contract (see
//! [`crate::tensor`]): inner-index-ascending accumulation, mean as
//! sum/extent, inv-std as 1/sqrt(var + eps).

use crate::adaptive::{LayerParams, LN_EPS};
use crate::schedule::DimSchedule;
use crate::tensor::{gelu_scalar, ParamStore};
use crate::video::{patch_rows, VideoClip, VideoEncoderParams};

// ─── Dense building blocks ──────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct DenseLinear {
    pub w: Vec<f64>, // out x in, contiguous
    pub b: Option<Vec<f64>>,
    pub out: usize,
    pub inp: usize,
}

impl DenseLinear {
    pub fn forward(&self, x: &[f64], k: usize) -> Vec<f64> {
        debug_assert_eq!(x.len(), k * self.inp);
        let mut y = vec![0.0; k * self.out];
        for i in 0..k {
            for o in 0..self.out {
                let mut acc = 0.0;
                for j in 0..self.inp {
                    acc += x[i * self.inp + j] * self.w[o * self.inp + j];
                }
                y[i * self.out + o] = match &self.b {
                    Some(b) => acc + b[o],
                    None => acc,
                };
            }
        }
        y
    }
}

#[derive(Debug, Clone)]
pub struct DenseLayerNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub eps: f64,
}

impl DenseLayerNorm {
    pub fn forward(&self, x: &[f64], k: usize) -> Vec<f64> {
        let d = self.gamma.len();
        debug_assert_eq!(x.len(), k * d);
        let mut y = vec![0.0; k * d];
        for i in 0..k {
            let row = &x[i * d..(i + 1) * d];
            let mut sum = 0.0;
            for &v in row {
                sum += v;
            }
            let mean = sum / d as f64;
            let mut vsum = 0.0;
            for &v in row {
                let c = v - mean;
                vsum += c * c;
            }
            let var = vsum / d as f64;
            let inv = 1.0 / (var + self.eps).sqrt();
            for j in 0..d {
                y[i * d + j] = ((row[j] - mean) * inv) * self.gamma[j] + self.beta[j];
            }
        }
        y
    }
}

#[derive(Debug, Clone)]
pub struct DenseMha {
    pub wq: DenseLinear,
    pub wk: DenseLinear,
    pub wv: DenseLinear,
    pub wo: DenseLinear,
    pub head_dim: usize,
}

impl DenseMha {
    /// Attention of kq query tokens over kkv key/value tokens, all of
    /// width d = wq.out, with d/head_dim heads at scale 1/sqrt(head_dim).
    pub fn forward(&self, x_q: &[f64], kq: usize, x_kv: &[f64], kkv: usize) -> Vec<f64> {
        let d = self.wq.out;
        let h = self.head_dim;
        let heads = d / h;
        let q = self.wq.forward(x_q, kq);
        let k = self.wk.forward(x_kv, kkv);
        let v = self.wv.forward(x_kv, kkv);
        let scale = 1.0 / (h as f64).sqrt();
        let mut ctx = vec![0.0; kq * d];
        for head in 0..heads {
            let base = head * h;
            for i in 0..kq {
                // scores for query i over all keys
                let mut scores = Vec::with_capacity(kkv);
                for j in 0..kkv {
                    let mut acc = 0.0;
                    for c in 0..h {
                        acc += q[i * d + base + c] * k[j * d + base + c];
                    }
                    scores.push(acc * scale);
                }
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                let mut exps = Vec::with_capacity(kkv);
                for &sc in &scores {
                    let e = (sc - m).exp();
                    exps.push(e);
                    s += e;
                }
                for e in exps.iter_mut() {
                    *e /= s;
                }
                // weighted sum of values, accumulating over keys in order
                for c in 0..h {
                    let mut acc = 0.0;
                    for j in 0..kkv {
                        acc += exps[j] * v[j * d + base + c];
                    }
                    ctx[i * d + base + c] = acc;
                }
            }
        }
        self.wo.forward(&ctx, kq)
    }
}

#[derive(Debug, Clone)]
pub struct DenseFfn {
    pub w1: DenseLinear,
    pub w2: DenseLinear,
}

impl DenseFfn {
    pub fn forward(&self, x: &[f64], k: usize) -> Vec<f64> {
        let h = self.w1.forward(x, k);
        let h: Vec<f64> = h.iter().map(|&v| gelu_scalar(v)).collect();
        self.w2.forward(&h, k)
    }
}

#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub ln_attn: DenseLayerNorm,
    pub attn: DenseMha,
    pub ln_time: Option<DenseLayerNorm>,
    pub attn_time: Option<DenseMha>,
    pub ln_ffn: DenseLayerNorm,
    pub ffn: DenseFfn,
    pub width: usize,
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn gather(x: &[f64], d: usize, rows: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows.len() * d);
    for &r in rows {
        out.extend_from_slice(&x[r * d..(r + 1) * d]);
    }
    out
}

impl DenseLayer {
    /// Plain pre-norm layer over all tokens jointly.
    pub fn forward_plain(&self, x: &[f64], k: usize) -> Vec<f64> {
        let d = self.width;
        let h = self.ln_attn.forward(x, k);
        let a = self.attn.forward(&h, k, &h, k);
        let mut x = x.to_vec();
        add_into(&mut x, &a);
        let h = self.ln_ffn.forward(&x, k);
        let f = self.ffn.forward(&h, k);
        add_into(&mut x, &f);
        debug_assert_eq!(x.len(), k * d);
        x
    }

    /// Divided space-time layer over a (T*N + cls) x d grid; mirrors the
    /// cls routing of the adaptive path.
    pub fn forward_spacetime(&self, x: &[f64], t: usize, n: usize, has_cls: bool) -> Vec<f64> {
        let d = self.width;
        let off = usize::from(has_cls);
        let rows = t * n + off;
        debug_assert_eq!(x.len(), rows * d);
        let ln_time = self.ln_time.as_ref().expect("space-time layer");
        let attn_time = self.attn_time.as_ref().expect("space-time layer");

        // Space attention.
        let h = self.ln_attn.forward(x, rows);
        let mut space_out = vec![0.0; rows * d];
        if has_cls {
            let cls_q = gather(&h, d, &[0]);
            let out = self.attn.forward(&cls_q, 1, &h, rows);
            space_out[..d].copy_from_slice(&out);
        }
        for f in 0..t {
            let grp: Vec<usize> = (0..n).map(|p| off + f * n + p).collect();
            let q = gather(&h, d, &grp);
            let out = if has_cls {
                let mut with_cls = grp.clone();
                with_cls.push(0);
                let kv = gather(&h, d, &with_cls);
                self.attn.forward(&q, n, &kv, n + 1)
            } else {
                self.attn.forward(&q, n, &q, n)
            };
            for (gi, &r) in grp.iter().enumerate() {
                space_out[r * d..(r + 1) * d].copy_from_slice(&out[gi * d..(gi + 1) * d]);
            }
        }
        let mut x = x.to_vec();
        add_into(&mut x, &space_out);

        // Time attention; cls gets no update of its own.
        let h = ln_time.forward(&x, rows);
        let mut time_out = vec![0.0; rows * d];
        for p in 0..n {
            let grp: Vec<usize> = (0..t).map(|f| off + f * n + p).collect();
            let q = gather(&h, d, &grp);
            let out = if has_cls {
                let mut with_cls = grp.clone();
                with_cls.push(0);
                let kv = gather(&h, d, &with_cls);
                attn_time.forward(&q, t, &kv, t + 1)
            } else {
                attn_time.forward(&q, t, &q, t)
            };
            for (gi, &r) in grp.iter().enumerate() {
                time_out[r * d..(r + 1) * d].copy_from_slice(&out[gi * d..(gi + 1) * d]);
            }
        }
        add_into(&mut x, &time_out);

        // FFN.
        let h = self.ln_ffn.forward(&x, rows);
        let f = self.ffn.forward(&h, rows);
        add_into(&mut x, &f);
        x
    }
}

// ─── Materialization of width-d sub-models ──────────────────────────────────

fn copy_block(store: &ParamStore, id: crate::tensor::ParamId, rows: usize, cols: usize) -> Vec<f64> {
    let p = store.get(id);
    assert!(rows <= p.rows && cols <= p.cols);
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        out.extend_from_slice(&p.data[i * p.cols..i * p.cols + cols]);
    }
    out
}

pub fn materialize_linear(
    store: &ParamStore,
    p: &crate::adaptive::LinearParams,
    d_out: usize,
    d_in: usize,
) -> DenseLinear {
    DenseLinear {
        w: copy_block(store, p.w, d_out, d_in),
        b: p.b.map(|b| copy_block(store, b, 1, d_out)),
        out: d_out,
        inp: d_in,
    }
}

pub fn materialize_layernorm(
    store: &ParamStore,
    p: &crate::adaptive::LayerNormParams,
    d: usize,
) -> DenseLayerNorm {
    DenseLayerNorm {
        gamma: copy_block(store, p.gamma, 1, d),
        beta: copy_block(store, p.beta, 1, d),
        eps: LN_EPS,
    }
}

pub fn materialize_mha(store: &ParamStore, p: &crate::adaptive::MhaParams, d: usize) -> DenseMha {
    DenseMha {
        wq: materialize_linear(store, &p.wq, d, d),
        wk: materialize_linear(store, &p.wk, d, d),
        wv: materialize_linear(store, &p.wv, d, d),
        wo: materialize_linear(store, &p.wo, d, d),
        head_dim: p.head_dim,
    }
}

pub fn materialize_ffn(store: &ParamStore, p: &crate::adaptive::FfnParams, d: usize) -> DenseFfn {
    DenseFfn {
        w1: materialize_linear(store, &p.w1, 4 * d, d),
        w2: materialize_linear(store, &p.w2, d, 4 * d),
    }
}

pub fn materialize_layer(store: &ParamStore, p: &LayerParams, d: usize) -> DenseLayer {
    DenseLayer {
        ln_attn: materialize_layernorm(store, &p.ln_attn, d),
        attn: materialize_mha(store, &p.attn, d),
        ln_time: p.ln_time.as_ref().map(|ln| materialize_layernorm(store, ln, d)),
        attn_time: p.attn_time.as_ref().map(|a| materialize_mha(store, a, d)),
        ln_ffn: materialize_layernorm(store, &p.ln_ffn, d),
        ffn: materialize_ffn(store, &p.ffn, d),
        width: d,
    }
}

// ─── Reference encoder ──────────────────────────────────────────────────────

fn pad_or_truncate(x: &[f64], k: usize, d_from: usize, d_to: usize) -> Vec<f64> {
    if d_from == d_to {
        return x.to_vec();
    }
    let mut out = vec![0.0; k * d_to];
    let keep = d_from.min(d_to);
    for i in 0..k {
        out[i * d_to..i * d_to + keep].copy_from_slice(&x[i * d_from..i * d_from + keep]);
    }
    out
}

/// Encode a clip by materializing a standalone sub-model per layer and
/// inserting explicit pad/truncate between layers. At a constant
/// full-width schedule this is the vanilla (schedule-free) encoder.
pub fn reference_encode(
    store: &ParamStore,
    params: &VideoEncoderParams,
    clip: &VideoClip,
    schedule: &DimSchedule,
) -> Vec<f64> {
    let cfg = &params.config;
    let t = clip.frames;
    let n = cfg.tokens_per_frame();
    let d0 = schedule.widths[0];

    // Patchify at d0.
    let rows = patch_rows(clip, cfg.patch);
    let proj = materialize_linear(store, &params.patch_proj, d0, cfg.patch_dim());
    let mut tokens = proj.forward(&rows, t * n);
    let spos = copy_block(store, params.spatial_pos, n, d0);
    let tpos = copy_block(store, params.temporal_pos, t, d0);
    for i in 0..t * n {
        let (f, p) = (i / n, i % n);
        for j in 0..d0 {
            tokens[i * d0 + j] += spos[p * d0 + j];
        }
        for j in 0..d0 {
            tokens[i * d0 + j] += tpos[f * d0 + j];
        }
    }
    let cls = copy_block(store, params.cls, 1, d0);
    let mut x = Vec::with_capacity((t * n + 1) * d0);
    x.extend_from_slice(&cls);
    x.extend_from_slice(&tokens);

    // Layers with explicit width changes.
    let mut d_prev = d0;
    for (lp, &d) in params.layers.iter().zip(&schedule.widths) {
        x = pad_or_truncate(&x, t * n + 1, d_prev, d);
        let layer = materialize_layer(store, lp, d);
        x = layer.forward_spacetime(&x, t, n, true);
        d_prev = d;
    }

    // Final layer norm, cls readout, head, normalize.
    let final_ln = materialize_layernorm(store, &params.final_ln, d_prev);
    let x = final_ln.forward(&x, t * n + 1);
    let cls_out = &x[..d_prev];
    let head = materialize_linear(store, &params.head, cfg.embed, d_prev);
    let emb = head.forward(cls_out, 1);
    let mut sq = 0.0;
    for &v in &emb {
        sq += v * v;
    }
    let inv = 1.0 / sq.sqrt();
    emb.iter().map(|v| v * inv).collect()
}
