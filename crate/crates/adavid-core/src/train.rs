//! Contrastive training loops and the optimizer.

use crate::agg::{aggregate, average_pool, FeatureCache};
use crate::data::LongSample;
use crate::data::SyntheticDataset;
use crate::error::{Error, Result};
use crate::model::{AggModel, ClipTextModel};
use crate::rng::{subseed, Rng};
use crate::schedule::{named_schedule, sample_schedule, ScheduleStrategy};
use crate::tensor::{ParamStore, Tape, Var};
use crate::text::{encode_text, tokenize};
use crate::video::{encode, encode_vanilla};
use std::path::Path;

// ─── Optimizer ──────────────────────────────────────────────────────────────

/// Adaptive-moment optimizer with decoupled weight decay: the decay
/// multiplies parameters directly and never enters the moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64, weight_decay: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: store.iter().map(|(_, p)| vec![0.0; p.data.len()]).collect(),
            v: store.iter().map(|(_, p)| vec![0.0; p.data.len()]).collect(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (pi, (_, p)) in store.iter_mut().enumerate() {
            let m = &mut self.m[pi];
            let v = &mut self.v[pi];
            for i in 0..p.data.len() {
                let g = p.grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p.data[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
                p.data[i] -= self.lr * self.weight_decay * p.data[i];
            }
        }
    }
}

// ─── Losses ─────────────────────────────────────────────────────────────────

/// Symmetric contrastive cross-entropy over a batch's similarity matrix
/// with diagonal targets. Rows of both inputs must be unit-norm.
pub fn info_nce(tape: &mut Tape, video: Var, text: Var, temperature: f64) -> Result<Var> {
    if temperature <= 0.0 {
        return Err(Error::RejectedInput("temperature must be positive".into()));
    }
    let (b, e) = tape.shape(video);
    if tape.shape(text) != (b, e) {
        return Err(Error::ShapeMismatch(format!(
            "embedding batches differ: {:?} vs {:?}",
            tape.shape(video),
            tape.shape(text)
        )));
    }
    for (name, var) in [("video", video), ("text", text)] {
        let vals = tape.value(var);
        for i in 0..b {
            let norm = crate::tensor::l2_norm(&vals[i * e..(i + 1) * e]);
            if (norm - 1.0).abs() > 1e-6 {
                return Err(Error::RejectedInput(format!(
                    "{name} row {i} has norm {norm}, expected 1"
                )));
            }
        }
    }
    if b == 1 {
        return Ok(tape.constant(1, 1, vec![0.0]));
    }
    let logits = tape.matmul_nt(video, text)?;
    let logits = tape.scale(logits, 1.0 / temperature);
    let lsm_rows = tape.log_softmax_lastdim(logits)?;
    let logits_t = tape.transpose(logits);
    let lsm_cols = tape.log_softmax_lastdim(logits_t)?;
    let mut eye = vec![0.0; b * b];
    for i in 0..b {
        eye[i * b + i] = 1.0;
    }
    let eye = tape.constant(b, b, eye);
    let diag_r = tape.mul(lsm_rows, eye)?;
    let diag_r = tape.sum_all(diag_r);
    let diag_c = tape.mul(lsm_cols, eye)?;
    let diag_c = tape.sum_all(diag_c);
    let total = tape.add(diag_r, diag_c)?;
    Ok(tape.scale(total, -0.5 / b as f64))
}

/// Mean cross-entropy of logits against integer labels.
pub fn cross_entropy(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let (b, c) = tape.shape(logits);
    if labels.len() != b {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {b} logit rows",
            labels.len()
        )));
    }
    let lsm = tape.log_softmax_lastdim(logits)?;
    let mut mask = vec![0.0; b * c];
    for (i, &l) in labels.iter().enumerate() {
        if l >= c {
            return Err(Error::RejectedInput(format!("label {l} out of {c} classes")));
        }
        mask[i * c + l] = 1.0;
    }
    let mask = tape.constant(b, c, mask);
    let picked = tape.mul(lsm, mask)?;
    let s = tape.sum_all(picked);
    Ok(tape.scale(s, -1.0 / b as f64))
}

// ─── Training configuration and traces ──────────────────────────────────────

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub temperature: f64,
    pub seed: u64,
    pub strategy: ScheduleStrategy,
}

impl TrainConfig {
    /// Defaults for the toy encoder run. The decay value follows the
    /// published aggregator setting; learning rate, temperature and the
    /// per-layer-random width strategy are tuned for from-scratch
    /// training at this scale (the narrow uniform configurations only
    /// learn when early layers actually see narrow widths).
    pub fn toy_encoder(seed: u64) -> Self {
        TrainConfig {
            steps: 1400,
            batch: 5,
            lr: 1.5e-3,
            weight_decay: 0.1,
            temperature: 0.1,
            seed,
            strategy: ScheduleStrategy::Unconstrained,
        }
    }

    pub fn toy_aggregator(seed: u64) -> Self {
        TrainConfig {
            steps: 400,
            batch: 8,
            lr: 2e-3,
            weight_decay: 0.1,
            temperature: 0.1,
            seed,
            strategy: ScheduleStrategy::Fixed("d-full".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub label: String,
    pub loss: f64,
}

/// Loss trace CSV: comment lines carry the config hash and seed, then
/// one `step,schedule,loss` row per step.
pub fn write_loss_csv(path: &Path, config_hash: &str, seed: u64, rows: &[TraceRow]) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("# config_hash={config_hash}\n# seed={seed}\n"));
    out.push_str("step,schedule,loss\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.step, r.label, r.loss));
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn check_finite(loss: f64, step: usize) -> Result<f64> {
    if !loss.is_finite() {
        return Err(Error::Diverged(format!("loss {loss} at step {step}")));
    }
    Ok(loss)
}

// ─── Encoder training ───────────────────────────────────────────────────────

/// Which forward-path the trainer uses. `VanillaFullWidth` bypasses all
/// slicing and transition machinery and is only valid when the strategy
/// is fixed at d-full; it exists as an oracle for the adaptive path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderPath {
    Adaptive,
    VanillaFullWidth,
}

/// Contrastive training of the clip encoder + text encoder. One schedule
/// is sampled per iteration and applied to the whole batch; texts always
/// run at full width. Batches draw `batch` distinct classes (one sample
/// each) so diagonal targets are exact.
pub fn train_encoder(
    model: &mut ClipTextModel,
    dataset: &SyntheticDataset,
    cfg: &TrainConfig,
    path: EncoderPath,
) -> Result<Vec<TraceRow>> {
    let classes = dataset.spec.classes;
    if cfg.batch < 2 {
        return Err(Error::RejectedInput("contrastive batch must be >= 2".into()));
    }
    if cfg.batch > classes {
        return Err(Error::RejectedInput(format!(
            "batch {} exceeds class count {classes}; duplicate captions would corrupt the diagonal targets",
            cfg.batch
        )));
    }
    if path == EncoderPath::VanillaFullWidth
        && cfg.strategy != ScheduleStrategy::Fixed("d-full".into())
    {
        return Err(Error::RejectedInput(
            "the vanilla path only supports the fixed d-full strategy".into(),
        ));
    }
    // Samples grouped by class for balanced batch draws.
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, s) in dataset.shorts.iter().enumerate() {
        by_class[s.class].push(i);
    }

    let enc_cfg = model.video.config.clone();
    let max_len = model.text.config.max_len;
    let mut sched_rng = Rng::new(subseed(cfg.seed, "schedule"));
    let mut batch_rng = Rng::new(subseed(cfg.seed, "batch"));
    let mut adam = Adam::new(&model.store, cfg.lr, cfg.weight_decay);
    let mut trace = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let schedule = sample_schedule(&cfg.strategy, enc_cfg.dim, enc_cfg.layers, &mut sched_rng)?;
        let mut class_order: Vec<usize> = (0..classes).collect();
        batch_rng.shuffle(&mut class_order);
        let picks: Vec<usize> = class_order[..cfg.batch]
            .iter()
            .map(|&c| by_class[c][batch_rng.below(by_class[c].len())])
            .collect();

        let mut tape = Tape::new();
        let venc = model.video.bind(&mut tape, &model.store, false);
        let tenc = model.text.bind(&mut tape, &model.store, false);
        let mut vembs = Vec::with_capacity(cfg.batch);
        let mut tembs = Vec::with_capacity(cfg.batch);
        for &idx in &picks {
            let sample = &dataset.shorts[idx];
            let v = match path {
                EncoderPath::Adaptive => encode(&mut tape, &venc, &sample.clip, &schedule)?,
                EncoderPath::VanillaFullWidth => encode_vanilla(&mut tape, &venc, &sample.clip)?,
            };
            vembs.push(v);
            let row = tokenize(&sample.caption, &model.vocab, max_len)?;
            tembs.push(encode_text(&mut tape, &tenc, &row)?);
        }
        let v = tape.concat_rows(&vembs)?;
        let t = tape.concat_rows(&tembs)?;
        let loss = info_nce(&mut tape, v, t, cfg.temperature)?;
        let loss_val = check_finite(tape.value(loss)[0], step)?;

        tape.backward(loss)?;
        tape.flush_grads(&mut model.store);
        adam.step(&mut model.store);
        model.store.zero_grads();

        trace.push(TraceRow {
            step,
            label: schedule.label(),
            loss: loss_val,
        });
    }
    Ok(trace)
}

// ─── Aggregator training ────────────────────────────────────────────────────

/// Video-side route for stage-two training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggTrainMode {
    /// Train the transformer aggregator and the summary text encoder.
    Transformer,
    /// Order-invariant baseline: the video side is the average-pooled
    /// feature (no trainable video parameters); only the text encoder
    /// learns.
    AveragePool,
}

/// Precompute and cache segment features for every (long video,
/// schedule label) pair. The encoder runs frozen.
pub fn precompute_features(
    model: &ClipTextModel,
    longs: &[LongSample],
    segments: usize,
    schedule_labels: &[String],
    cache: &FeatureCache,
) -> Result<()> {
    let cfg = &model.video.config;
    for label in schedule_labels {
        let schedule = named_schedule(label, cfg.dim, cfg.layers)?;
        for l in longs {
            if cache.has(label, l.id) {
                continue;
            }
            let feats =
                crate::agg::segment_features(&model.store, &model.video, &l.video, segments, &schedule)?;
            cache.store(label, l.id, &feats)?;
        }
    }
    Ok(())
}

/// Train the aggregator (or the average-pool text baseline) on cached
/// features with InfoNCE against summary embeddings. Each training
/// example independently draws one schedule label; the encoder is never
/// touched.
pub fn train_aggregator(
    model: &mut AggModel,
    longs: &[LongSample],
    cache: &FeatureCache,
    schedule_labels: &[String],
    cfg: &TrainConfig,
    mode: AggTrainMode,
) -> Result<Vec<TraceRow>> {
    if cfg.batch < 2 {
        return Err(Error::RejectedInput("contrastive batch must be >= 2".into()));
    }
    if cfg.batch > longs.len() {
        return Err(Error::RejectedInput(format!(
            "batch {} exceeds {} long videos",
            cfg.batch,
            longs.len()
        )));
    }
    let ids: Vec<usize> = longs.iter().map(|l| l.id).collect();
    let missing = cache.missing(schedule_labels, &ids);
    if !missing.is_empty() {
        return Err(Error::MissingCache(missing));
    }

    let max_len = model.text.config.max_len;
    let mut batch_rng = Rng::new(subseed(cfg.seed, "agg-batch"));
    let mut sched_rng = Rng::new(subseed(cfg.seed, "agg-schedule"));
    let mut adam = Adam::new(&model.store, cfg.lr, cfg.weight_decay);
    let mut trace = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let mut order: Vec<usize> = (0..longs.len()).collect();
        batch_rng.shuffle(&mut order);
        let picks = &order[..cfg.batch];

        let mut tape = Tape::new();
        // In average-pool mode the aggregator parameters stay off the tape
        // entirely; only the text encoder trains.
        let bagg = match mode {
            AggTrainMode::Transformer => Some(model.agg.bind(&mut tape, &model.store, false)),
            AggTrainMode::AveragePool => None,
        };
        let tenc = model.text.bind(&mut tape, &model.store, false);

        let mut vembs = Vec::with_capacity(cfg.batch);
        let mut tembs = Vec::with_capacity(cfg.batch);
        let mut labels = Vec::with_capacity(cfg.batch);
        for &pi in picks {
            let sample = &longs[pi];
            let label = &schedule_labels[sched_rng.below(schedule_labels.len())];
            labels.push(label.clone());
            let feats = cache.load(label, sample.id)?;
            let v = match &bagg {
                Some(bound) => {
                    let flat: Vec<f64> = feats.iter().flatten().copied().collect();
                    let fv = tape.constant(feats.len(), model.agg.config.embed, flat);
                    aggregate(&mut tape, bound, fv)?
                }
                None => {
                    let pooled = average_pool(&feats)?;
                    tape.constant(1, model.agg.config.embed, pooled.0)
                }
            };
            vembs.push(v);
            let row = tokenize(&sample.summary, &model.vocab, max_len)?;
            tembs.push(encode_text(&mut tape, &tenc, &row)?);
        }
        let v = tape.concat_rows(&vembs)?;
        let t = tape.concat_rows(&tembs)?;
        let loss = info_nce(&mut tape, v, t, cfg.temperature)?;
        let loss_val = check_finite(tape.value(loss)[0], step)?;

        tape.backward(loss)?;
        tape.flush_grads(&mut model.store);
        adam.step(&mut model.store);
        model.store.zero_grads();

        trace.push(TraceRow {
            step,
            label: labels.join("+"),
            loss: loss_val,
        });
    }
    Ok(trace)
}

// ─── Frame classifier training ──────────────────────────────────────────────

/// Supervised training of a clip encoder + linear head on the long-video
/// ordering classes, with frames sampled uniformly at `train_frames` and
/// widths drawn per iteration from the configured strategy.
pub fn train_frame_classifier(
    dataset: &SyntheticDataset,
    enc_cfg: &crate::video::EncoderConfig,
    cfg: &TrainConfig,
    train_frames: usize,
) -> Result<(crate::model::FrameClassifierModel, Vec<TraceRow>)> {
    if dataset.longs.is_empty() {
        return Err(Error::RejectedInput("dataset has no long videos".into()));
    }
    let classes = dataset.longs.iter().map(|l| l.seq_label).max().unwrap() + 1;
    let mut model = crate::model::FrameClassifierModel::init(enc_cfg, classes, cfg.seed)?;
    let mut sched_rng = Rng::new(subseed(cfg.seed, "fc-schedule"));
    let mut batch_rng = Rng::new(subseed(cfg.seed, "fc-batch"));
    let mut adam = Adam::new(&model.store, cfg.lr, cfg.weight_decay);
    let mut trace = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let schedule = sample_schedule(&cfg.strategy, enc_cfg.dim, enc_cfg.layers, &mut sched_rng)?;
        let mut order: Vec<usize> = (0..dataset.longs.len()).collect();
        batch_rng.shuffle(&mut order);
        let picks = &order[..cfg.batch.min(order.len())];

        let mut tape = Tape::new();
        let venc = model.video.bind(&mut tape, &model.store, false);
        let bhead = model.head.bind(&mut tape, &model.store, false);
        let mut logit_rows = Vec::with_capacity(picks.len());
        let mut labels = Vec::with_capacity(picks.len());
        for &pi in picks {
            let sample = &dataset.longs[pi];
            let (sub, pos) = crate::data::sample_frames(&sample.video, train_frames);
            let emb = crate::video::encode_features(&mut tape, &venc, &sub, &schedule, Some(&pos))?;
            let logits = crate::adaptive::adaptive_linear(
                &mut tape,
                &bhead,
                emb,
                classes,
                enc_cfg.embed,
            )?;
            logit_rows.push(logits);
            labels.push(sample.seq_label);
        }
        let logits = tape.concat_rows(&logit_rows)?;
        let loss = cross_entropy(&mut tape, logits, &labels)?;
        let loss_val = check_finite(tape.value(loss)[0], step)?;

        tape.backward(loss)?;
        tape.flush_grads(&mut model.store);
        adam.step(&mut model.store);
        model.store.zero_grads();

        trace.push(TraceRow {
            step,
            label: schedule.label(),
            loss: loss_val,
        });
    }
    Ok((model, trace))
}

// ─── Sampler-law statistics ─────────────────────────────────────────────────

/// Exact pmf of the first layer's width under the decreasing strategy:
/// the max of `layers` i.i.d. uniform draws over the four allowed
/// widths, indexed [full, 3/4, 1/2, 1/4].
pub fn layer1_max_pmf(layers: usize) -> [f64; 4] {
    let l = layers as i32;
    let cdf = |r: f64| (r / 4.0).powi(l);
    [
        1.0 - cdf(3.0),
        cdf(3.0) - cdf(2.0),
        cdf(2.0) - cdf(1.0),
        cdf(1.0),
    ]
}

/// Upper 1% points of the chi-square distribution for 1..=5 degrees of
/// freedom.
pub const CHI2_CRIT_1PCT: [f64; 5] = [6.634897, 9.210340, 11.344867, 13.276704, 15.086272];

/// Pearson chi-square statistic with adjacent-cell merging until every
/// expected count is at least 5. Returns (statistic, degrees of freedom).
pub fn chi_square_merged(observed: &[u64], probs: &[f64], n: u64) -> (f64, usize) {
    assert_eq!(observed.len(), probs.len());
    let mut obs: Vec<f64> = observed.iter().map(|&o| o as f64).collect();
    let mut exp: Vec<f64> = probs.iter().map(|&p| p * n as f64).collect();
    while exp.len() > 1 {
        let (i, &min) = exp
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        if min >= 5.0 {
            break;
        }
        let j = if i == 0 { 1 } else { i - 1 };
        exp[j] += exp[i];
        obs[j] += obs[i];
        exp.remove(i);
        obs.remove(i);
    }
    let stat: f64 = obs
        .iter()
        .zip(&exp)
        .map(|(o, e)| (o - e) * (o - e) / e)
        .sum();
    (stat, exp.len() - 1)
}

/// Run the decreasing-sampler law check: 10,000 draws, layer-1 marginal
/// against the exact max-order-statistic pmf, chi-square at the 1%
/// level. Returns (statistic, dof, critical value, pass).
pub fn sampler_law_check(full_width: usize, layers: usize, seed: u64) -> Result<(f64, usize, f64, bool)> {
    let allowed = crate::schedule::allowed_widths(full_width);
    let mut rng = Rng::new(seed);
    let mut counts = [0u64; 4];
    let draws = 10_000;
    for _ in 0..draws {
        let s = sample_schedule(&ScheduleStrategy::Decreasing, full_width, layers, &mut rng)?;
        if !s.is_non_increasing() {
            return Err(Error::RejectedInput("sampler emitted an increasing run".into()));
        }
        for &w in &s.widths {
            if !allowed.contains(&w) {
                return Err(Error::RejectedInput(format!("width {w} outside allowed set")));
            }
        }
        let first = s.widths[0];
        let idx = allowed.iter().position(|&w| w == first).unwrap();
        counts[idx] += 1;
    }
    let pmf = layer1_max_pmf(layers);
    let (stat, dof) = chi_square_merged(&counts, &pmf, draws);
    let crit = CHI2_CRIT_1PCT[dof - 1];
    Ok((stat, dof, crit, stat <= crit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ParamId;

    #[test]
    fn info_nce_identical_embeddings_is_log_b() {
        let mut tape = Tape::new();
        let e = 4;
        let row = {
            let mut r = vec![0.5; e];
            let n = crate::tensor::l2_norm(&r);
            r.iter_mut().for_each(|x| *x /= n);
            r
        };
        let mut data = Vec::new();
        for _ in 0..4 {
            data.extend_from_slice(&row);
        }
        let v = tape.constant(4, e, data.clone());
        let t = tape.constant(4, e, data);
        let loss = info_nce(&mut tape, v, t, 0.05).unwrap();
        assert!((tape.value(loss)[0] - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn info_nce_orthogonal_pairs_closed_form() {
        // B=2, orthogonal unit embeddings aligned on the diagonal:
        // loss = ln(1 + exp(-1/tau)).
        let mut tape = Tape::new();
        let v = tape.constant(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let t = tape.constant(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let loss = info_nce(&mut tape, v, t, 0.05).unwrap();
        let want = (1.0 + (-20.0f64).exp()).ln();
        assert!((tape.value(loss)[0] - want).abs() < 1e-15, "{}", tape.value(loss)[0]);
    }

    #[test]
    fn info_nce_rejects_non_unit_rows() {
        let mut tape = Tape::new();
        let v = tape.constant(2, 2, vec![2.0, 0.0, 0.0, 1.0]);
        let t = tape.constant(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        assert!(matches!(
            info_nce(&mut tape, v, t, 0.05),
            Err(Error::RejectedInput(_))
        ));
    }

    #[test]
    fn info_nce_single_row_is_zero() {
        let mut tape = Tape::new();
        let v = tape.constant(1, 2, vec![1.0, 0.0]);
        let t = tape.constant(1, 2, vec![0.0, 1.0]);
        let loss = info_nce(&mut tape, v, t, 0.05).unwrap();
        assert_eq!(tape.value(loss)[0], 0.0);
    }

    #[test]
    fn info_nce_gradient_matches_finite_differences() {
        // Raw (pre-normalization) embeddings as leaves; normalize on-tape
        // so the gradient check covers the whole loss path.
        let b = 3;
        let e = 4;
        let mut rng = Rng::new(77);
        let base: Vec<f64> = (0..2 * b * e).map(|_| rng.normal()).collect();

        let eval = |data: &[f64], grad: bool| -> (f64, Option<Vec<f64>>) {
            let mut tape = Tape::new();
            let raw = tape.leaf(2 * b, e, data.to_vec());
            let mut rows = Vec::new();
            for i in 0..2 * b {
                let r = tape.gather_rows(raw, &[i]).unwrap();
                rows.push(crate::adaptive::l2_normalize(&mut tape, r).unwrap());
            }
            let v = tape.concat_rows(&rows[..b]).unwrap();
            let t = tape.concat_rows(&rows[b..]).unwrap();
            let loss = info_nce(&mut tape, v, t, 0.07).unwrap();
            let lv = tape.value(loss)[0];
            if grad {
                tape.backward(loss).unwrap();
                (lv, Some(tape.grad(raw).unwrap().to_vec()))
            } else {
                (lv, None)
            }
        };
        let (_, g) = eval(&base, true);
        let g = g.unwrap();
        let step = 1e-5;
        let mut max_rel = 0.0f64;
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] += step;
            let mut m = base.clone();
            m[i] -= step;
            let num = (eval(&p, false).0 - eval(&m, false).0) / (2.0 * step);
            let rel = (g[i] - num).abs() / g[i].abs().max(num.abs()).max(1e-8);
            max_rel = max_rel.max(rel);
        }
        assert!(max_rel < 1e-4, "max rel err {max_rel}");
    }

    #[test]
    fn adam_matches_hand_reference_on_quadratic() {
        // loss = sum(w^2): gradient 2w. Weight decay zero. Iterates must
        // match an independently coded update to 1e-12.
        let mut store = ParamStore::new();
        store.add("w", 1, 3, vec![1.0, -2.0, 0.5]);
        let mut adam = Adam::new(&store, 0.01, 0.0);

        let mut w_ref = [1.0, -2.0, 0.5];
        let mut m = [0.0; 3];
        let mut v = [0.0; 3];
        for t in 1..=25 {
            // analytic pass
            {
                let mut tape = Tape::new();
                let w = tape.param(&store, ParamId(0));
                let sq = tape.mul(w, w).unwrap();
                let loss = tape.sum_all(sq);
                tape.backward(loss).unwrap();
                tape.flush_grads(&mut store);
                adam.step(&mut store);
                store.zero_grads();
            }
            // reference update
            for i in 0..3 {
                let g = 2.0 * w_ref[i];
                m[i] = 0.9 * m[i] + 0.1 * g;
                v[i] = 0.999 * v[i] + 0.001 * g * g;
                let mhat = m[i] / (1.0 - 0.9f64.powi(t));
                let vhat = v[i] / (1.0 - 0.999f64.powi(t));
                w_ref[i] -= 0.01 * mhat / (vhat.sqrt() + 1e-8);
            }
            for (a, b) in store.get(ParamId(0)).data.iter().zip(&w_ref) {
                assert!((a - b).abs() < 1e-12, "step {t}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn decoupled_decay_shrinks_params_without_touching_moments() {
        let mut store = ParamStore::new();
        store.add("w", 1, 1, vec![1.0]);
        let mut adam = Adam::new(&store, 0.1, 0.5);
        // Zero gradient: the only effect is the decay factor (1 - lr*wd).
        adam.step(&mut store);
        let w = store.get(ParamId(0)).data[0];
        assert!((w - 0.95).abs() < 1e-15, "{w}");
        assert_eq!(adam.m[0][0], 0.0);
        assert_eq!(adam.v[0][0], 0.0);
    }

    #[test]
    fn layer1_pmf_sums_to_one() {
        for l in [1usize, 4, 8, 12] {
            let pmf = layer1_max_pmf(l);
            assert!((pmf.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        // L=1 reduces to the uniform draw.
        let pmf = layer1_max_pmf(1);
        for p in pmf {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn chi_square_merging_respects_cochran() {
        // L=8 leaves a 0.15-expected cell; merging must absorb it.
        let pmf = layer1_max_pmf(8);
        let fake_obs = [9000u64, 960, 39, 1];
        let (stat, dof) = chi_square_merged(&fake_obs, &pmf, 10_000);
        assert!(dof <= 2, "dof {dof}");
        assert!(stat.is_finite());
    }

    #[test]
    fn sampler_law_holds_at_toy_scale() {
        let (stat, dof, crit, pass) = sampler_law_check(64, 8, 12345).unwrap();
        assert!(pass, "chi2 {stat} (dof {dof}) exceeds {crit}");
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let mut tape = Tape::new();
        let logits = tape.constant(2, 4, vec![0.0; 8]);
        let loss = cross_entropy(&mut tape, logits, &[1, 3]).unwrap();
        assert!((tape.value(loss)[0] - 4.0f64.ln()).abs() < 1e-12);
    }
}
