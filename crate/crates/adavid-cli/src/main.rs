//! adavid: adaptive-width video-language models at desk scale.
//!
//! Subcommands cover the whole pipeline: closed-form FLOPs analysis,
//! synthetic dataset generation, contrastive training of the adaptive
//! encoder, aggregator training on cached features, evaluation,
//! compute-vs-accuracy sweeps, and the selfcheck invariant suite.
//!
//! Exit codes: 0 success, 1 assertion/selfcheck failure, 2 usage,
//! 3 I/O.

use adavid_core::agg::{AggConfig, FeatureCache};
use adavid_core::config::ConfigMap;
use adavid_core::data::{generate_synthetic, load_dataset, save_dataset, SyntheticDatasetSpec};
use adavid_core::error::Error;
use adavid_core::eval::{
    build_mcq_inter, build_mcq_intra, frame_sweep, long_retrieval, mcq_eval_model, sweep_long,
    sweep_mcq, sweep_rows_json, write_sweep_csv, SweepRow,
};
use adavid_core::flops::{
    dense_layer_flops, hier_layer_flops, schedule_flops, spacetime_layer_flops, table1_label,
    AttentionMode, TABLE1_GEOMETRY, TABLE1_ROWS,
};
use adavid_core::model::{AggModel, ClipTextModel, FrameClassifierModel};
use adavid_core::schedule::{named_schedule, ScheduleStrategy};
use adavid_core::text::TextConfig;
use adavid_core::train::{
    precompute_features, train_aggregator, train_encoder, train_frame_classifier, write_loss_csv,
    AggTrainMode, EncoderPath, TrainConfig,
};
use adavid_core::video::EncoderConfig;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "adavid", version, about = "Adaptive-width video-language models at desk scale")]
struct Cli {
    /// Worker-thread cap for module-internal parallelism. The default of
    /// 1 is fully deterministic and is also the current implementation
    /// ceiling.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Closed-form FLOPs for layer modes and named schedules.
    Flops(FlopsArgs),
    /// Generate a synthetic video-text dataset.
    Gen(GenArgs),
    /// Train the adaptive clip encoder + text encoder contrastively.
    Train(TrainArgs),
    /// Train the long-video aggregator on cached segment features.
    TrainAgg(TrainAggArgs),
    /// Evaluate a checkpoint on a benchmark.
    Eval(EvalArgs),
    /// Compute-vs-accuracy sweeps over schedules and frame counts.
    Sweep(SweepArgs),
    /// Run the full invariant suite; exits nonzero on any failure.
    Selfcheck,
}

#[derive(Args)]
struct FlopsArgs {
    /// Print all ten reference configurations at T=4, N=196, D=768, L=12
    /// with the published values alongside.
    #[arg(long)]
    table1: bool,

    /// Named schedule (d-full, d-3q, d-half, d-quarter, d-dec,
    /// d-dec-high, d-dec-low, d-inc, d-inc-high, d-inc-low).
    #[arg(long)]
    schedule: Option<String>,

    /// Layer mode for explicit geometry: dense | spacetime | hier.
    #[arg(long)]
    mode: Option<String>,

    /// Frames per clip (T).
    #[arg(long, default_value_t = 4)]
    frames: u64,

    /// Patch tokens per frame (N).
    #[arg(long, default_value_t = 196)]
    tokens: u64,

    /// Full embedding width (D).
    #[arg(long, default_value_t = 768)]
    dim: u64,

    /// Transformer depth (L).
    #[arg(long, default_value_t = 12)]
    layers: u64,

    /// Segment count for hierarchical mode.
    #[arg(long, default_value_t = 16)]
    segments: u64,

    /// Also write the table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,

    /// key=value config file (keys: classes, samples_per_class, noise,
    /// frames, image, patch, long_pairs, long_instances, segments, seed).
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override the seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Override one config key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory from `gen`.
    #[arg(long)]
    data: PathBuf,

    /// Output directory (model.ckpt, loss.csv).
    #[arg(long)]
    out: PathBuf,

    /// key=value config file. Keys: steps, batch, lr, weight_decay,
    /// temperature, strategy (decreasing|increasing|unconstrained|
    /// fixed:<name>), kind (encoder|frames), train_frames, enc_layers,
    /// enc_dim, enc_head_dim, enc_patch, enc_image, enc_frames, embed,
    /// txt_layers, txt_width, txt_head_dim, txt_max_len, seed.
    #[arg(long)]
    config: Option<PathBuf>,

    #[arg(long)]
    seed: Option<u64>,

    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Args)]
struct TrainAggArgs {
    /// Dataset directory from `gen` (long videos + summaries).
    #[arg(long)]
    data: PathBuf,

    /// Frozen encoder checkpoint.
    #[arg(long)]
    encoder: PathBuf,

    /// Output directory (agg.ckpt, loss.csv, cache/).
    #[arg(long)]
    out: PathBuf,

    /// key=value config file. Keys: steps, batch, lr, weight_decay,
    /// temperature, schedules (comma list), mode (transformer|avgpool),
    /// agg_layers, agg_width, agg_head_dim, agg_max_segments,
    /// txt_layers, txt_width, txt_head_dim, txt_max_len, seed.
    #[arg(long)]
    config: Option<PathBuf>,

    #[arg(long)]
    seed: Option<u64>,

    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Args)]
struct EvalArgs {
    /// Encoder checkpoint (cliptext).
    #[arg(long)]
    checkpoint: PathBuf,

    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,

    /// Benchmark: mcq-inter | mcq-intra | retrieval.
    #[arg(long)]
    benchmark: String,

    /// Aggregator checkpoint (required for retrieval).
    #[arg(long)]
    agg: Option<PathBuf>,

    /// Schedule name to evaluate under.
    #[arg(long, default_value = "d-full")]
    schedule: String,

    /// Number of sampled items for mcq-inter.
    #[arg(long, default_value_t = 1000)]
    items: usize,

    /// Frame count for long-video benchmarks.
    #[arg(long)]
    frames: Option<usize>,

    /// Write a JSON summary here.
    #[arg(long)]
    json: Option<PathBuf>,

    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct SweepArgs {
    /// Encoder or frame-classifier checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,

    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,

    /// Benchmark: mcq | long | frames.
    #[arg(long)]
    benchmark: String,

    /// Comma-separated schedule names (mcq, long).
    #[arg(long, default_value = "d-full,d-dec,d-quarter")]
    schedules: String,

    /// Comma-separated frame counts (long, frames).
    #[arg(long)]
    frames: Option<String>,

    /// Comma-separated widths (frames benchmark).
    #[arg(long)]
    widths: Option<String>,

    /// Aggregator checkpoint (long benchmark).
    #[arg(long)]
    agg: Option<PathBuf>,

    /// Number of sampled items for mcq.
    #[arg(long, default_value_t = 400)]
    items: usize,

    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,

    /// JSON summary path.
    #[arg(long)]
    json: Option<PathBuf>,

    #[arg(long, default_value_t = 7)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads == 0 {
        eprintln!("--threads must be at least 1");
        return ExitCode::from(2);
    }
    let result = match cli.cmd {
        Cmd::Flops(a) => cmd_flops(a),
        Cmd::Gen(a) => cmd_gen(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::TrainAgg(a) => cmd_train_agg(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Sweep(a) => cmd_sweep(a),
        Cmd::Selfcheck => cmd_selfcheck(),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Io(_) | Error::Checkpoint(_) => 3,
        Error::Config(_) | Error::RejectedInput(_) | Error::InvalidWidth(_) => 2,
        _ => 1,
    }
}

type CmdResult = Result<ExitCode, Error>;

// ─── flops ──────────────────────────────────────────────────────────────────

fn cmd_flops(a: FlopsArgs) -> CmdResult {
    let mut rows: Vec<(String, String, u128, f64, Option<f64>)> = Vec::new();

    if a.table1 {
        let (t, n, d, l) = TABLE1_GEOMETRY;
        let full_total = schedule_flops(
            &named_schedule("d-full", d as usize, l as usize)?,
            t,
            n,
            AttentionMode::SpaceTime,
        )
        .total;
        for (name, printed) in TABLE1_ROWS {
            let sched = named_schedule(name, d as usize, l as usize)?;
            let report = schedule_flops(&sched, t, n, AttentionMode::SpaceTime);
            rows.push((
                table1_label(name).to_string(),
                compress_widths(&sched.widths),
                report.total,
                report.total as f64 / full_total as f64,
                Some(printed),
            ));
        }
    } else if let Some(name) = &a.schedule {
        let sched = named_schedule(name, a.dim as usize, a.layers as usize)?;
        let full = named_schedule("d-full", a.dim as usize, a.layers as usize)?;
        let mode = parse_mode(a.mode.as_deref().unwrap_or("spacetime"), a.segments)?;
        let report = schedule_flops(&sched, a.frames, a.tokens, mode);
        let full_total = schedule_flops(&full, a.frames, a.tokens, mode).total;
        rows.push((
            name.clone(),
            compress_widths(&sched.widths),
            report.total,
            report.total as f64 / full_total as f64,
            None,
        ));
    } else if let Some(mode) = &a.mode {
        let per_layer = match mode.as_str() {
            "dense" => dense_layer_flops(a.frames, a.tokens, a.dim),
            "spacetime" | "space-time" => spacetime_layer_flops(a.frames, a.tokens, a.dim),
            "hier" | "hierarchical" => hier_layer_flops(a.frames, a.tokens, a.dim, a.segments),
            other => {
                return Err(Error::RejectedInput(format!(
                    "unknown mode '{other}' (dense | spacetime | hier)"
                )))
            }
        };
        let total = per_layer * a.layers as u128;
        rows.push((
            format!("{mode} T={} N={} D={}", a.frames, a.tokens, a.dim),
            format!("{}x{}", a.dim, a.layers),
            total,
            1.0,
            None,
        ));
    } else {
        return Err(Error::RejectedInput(
            "specify --table1, --schedule NAME, or --mode MODE".into(),
        ));
    }

    let has_ref = rows.iter().any(|r| r.4.is_some());
    println!(
        "{:<12} {:<28} {:>16} {:>9} {:>8}{}",
        "config",
        "widths",
        "flops",
        "x1e10",
        "ratio",
        if has_ref { "  reference" } else { "" }
    );
    for (name, widths, flops, ratio, reference) in &rows {
        let e10 = *flops as f64 / 1e10;
        let refcol = match reference {
            Some(r) => format!("  {r:>9.1}"),
            None => String::new(),
        };
        println!("{name:<12} {widths:<28} {flops:>16} {e10:>9.4} {ratio:>8.4}{refcol}");
    }

    if let Some(path) = &a.csv {
        let mut out = String::from("config,widths,flops,ratio\n");
        for (name, widths, flops, ratio, _) in &rows {
            out.push_str(&format!("{name},{widths},{flops},{ratio}\n"));
        }
        std::fs::write(path, out)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn compress_widths(widths: &[usize]) -> String {
    let mut parts: Vec<String> = Vec::new();
    let mut i = 0;
    while i < widths.len() {
        let w = widths[i];
        let mut j = i;
        while j < widths.len() && widths[j] == w {
            j += 1;
        }
        parts.push(format!("{w}x{}", j - i));
        i = j;
    }
    parts.join(",")
}

fn parse_mode(s: &str, segments: u64) -> Result<AttentionMode, Error> {
    match s {
        "dense" => Ok(AttentionMode::Dense),
        "spacetime" | "space-time" => Ok(AttentionMode::SpaceTime),
        "hier" | "hierarchical" => Ok(AttentionMode::Hierarchical { segments }),
        other => Err(Error::RejectedInput(format!(
            "unknown mode '{other}' (dense | spacetime | hier)"
        ))),
    }
}

// ─── config plumbing ────────────────────────────────────────────────────────

fn load_config(
    path: &Option<PathBuf>,
    sets: &[String],
    seed: Option<u64>,
    allowed: &[&str],
) -> Result<ConfigMap, Error> {
    let mut cfg = match path {
        Some(p) => ConfigMap::load(p)?,
        None => ConfigMap::new(),
    };
    for s in sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got '{s}'")))?;
        cfg.set(k.trim(), v.trim());
    }
    if let Some(seed) = seed {
        cfg.set("seed", seed);
    }
    cfg.validate_keys(allowed)?;
    Ok(cfg)
}

fn encoder_config(cfg: &ConfigMap) -> Result<EncoderConfig, Error> {
    let toy = EncoderConfig::toy();
    Ok(EncoderConfig {
        layers: cfg.usize_or("enc_layers", toy.layers)?,
        dim: cfg.usize_or("enc_dim", toy.dim)?,
        head_dim: cfg.usize_or("enc_head_dim", toy.head_dim)?,
        patch: cfg.usize_or("enc_patch", toy.patch)?,
        image: cfg.usize_or("enc_image", toy.image)?,
        frames: cfg.usize_or("enc_frames", toy.frames)?,
        embed: cfg.usize_or("embed", toy.embed)?,
    })
}

fn text_config(cfg: &ConfigMap, embed: usize) -> Result<TextConfig, Error> {
    let toy = TextConfig::toy(embed);
    Ok(TextConfig {
        layers: cfg.usize_or("txt_layers", toy.layers)?,
        width: cfg.usize_or("txt_width", toy.width)?,
        head_dim: cfg.usize_or("txt_head_dim", toy.head_dim)?,
        max_len: cfg.usize_or("txt_max_len", toy.max_len)?,
        embed,
    })
}

fn train_config(cfg: &ConfigMap, defaults: TrainConfig) -> Result<TrainConfig, Error> {
    let strategy = match cfg.get_str("strategy") {
        Some(s) => ScheduleStrategy::parse(s)?,
        None => defaults.strategy,
    };
    Ok(TrainConfig {
        steps: cfg.usize_or("steps", defaults.steps)?,
        batch: cfg.usize_or("batch", defaults.batch)?,
        lr: cfg.f64_or("lr", defaults.lr)?,
        weight_decay: cfg.f64_or("weight_decay", defaults.weight_decay)?,
        temperature: cfg.f64_or("temperature", defaults.temperature)?,
        seed: cfg.u64_or("seed", defaults.seed)?,
        strategy,
    })
}

// ─── gen ────────────────────────────────────────────────────────────────────

fn cmd_gen(a: GenArgs) -> CmdResult {
    let cfg = load_config(&a.config, &a.sets, a.seed, &SyntheticDatasetSpec::KEYS)?;
    let spec = SyntheticDatasetSpec::from_config(&cfg)?;
    let ds = generate_synthetic(&spec)?;
    save_dataset(&ds, &a.out)?;
    println!(
        "wrote {} short clips, {} long videos, vocab of {} to {}",
        ds.shorts.len(),
        ds.longs.len(),
        ds.vocab.size(),
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

// ─── train ──────────────────────────────────────────────────────────────────

const TRAIN_KEYS: [&str; 20] = [
    "steps",
    "batch",
    "lr",
    "weight_decay",
    "temperature",
    "strategy",
    "kind",
    "train_frames",
    "enc_layers",
    "enc_dim",
    "enc_head_dim",
    "enc_patch",
    "enc_image",
    "enc_frames",
    "embed",
    "txt_layers",
    "txt_width",
    "txt_head_dim",
    "txt_max_len",
    "seed",
];

fn cmd_train(a: TrainArgs) -> CmdResult {
    let cfg = load_config(&a.config, &a.sets, a.seed, &TRAIN_KEYS)?;
    let ds = load_dataset(&a.data)?;
    std::fs::create_dir_all(&a.out)?;
    let config_hash = cfg.hash();
    let kind = cfg.str_or("kind", "encoder");

    match kind.as_str() {
        "encoder" => {
            let enc_cfg = encoder_config(&cfg)?;
            let txt_cfg = text_config(&cfg, enc_cfg.embed)?;
            let tc = train_config(&cfg, TrainConfig::toy_encoder(0))?;
            let mut model = ClipTextModel::init(&enc_cfg, &txt_cfg, ds.vocab.clone(), tc.seed)?;
            let trace = train_encoder(&mut model, &ds, &tc, EncoderPath::Adaptive)?;
            write_loss_csv(&a.out.join("loss.csv"), &config_hash, tc.seed, &trace)?;
            model.save(&a.out.join("model.ckpt"))?;
            println!(
                "trained encoder for {} steps (final loss {:.4}); wrote {}",
                trace.len(),
                trace.last().map(|r| r.loss).unwrap_or(f64::NAN),
                a.out.join("model.ckpt").display()
            );
        }
        "frames" => {
            let mut enc_cfg = encoder_config(&cfg)?;
            // The frame classifier's temporal table must cover the long
            // videos it samples from.
            let t_long = ds.spec.segments * ds.spec.frames;
            if enc_cfg.frames < t_long {
                enc_cfg.frames = t_long;
            }
            let train_frames = cfg.usize_or("train_frames", t_long)?;
            let tc = train_config(&cfg, TrainConfig::toy_encoder(0))?;
            let (model, trace) = train_frame_classifier(&ds, &enc_cfg, &tc, train_frames)?;
            write_loss_csv(&a.out.join("loss.csv"), &config_hash, tc.seed, &trace)?;
            model.save(&a.out.join("model.ckpt"))?;
            println!(
                "trained frame classifier for {} steps (final loss {:.4}); wrote {}",
                trace.len(),
                trace.last().map(|r| r.loss).unwrap_or(f64::NAN),
                a.out.join("model.ckpt").display()
            );
        }
        other => {
            return Err(Error::Config(format!(
                "unknown kind '{other}' (encoder | frames)"
            )))
        }
    }
    Ok(ExitCode::SUCCESS)
}

// ─── train-agg ──────────────────────────────────────────────────────────────

const TRAIN_AGG_KEYS: [&str; 16] = [
    "steps",
    "batch",
    "lr",
    "weight_decay",
    "temperature",
    "schedules",
    "mode",
    "agg_layers",
    "agg_width",
    "agg_head_dim",
    "agg_max_segments",
    "txt_layers",
    "txt_width",
    "txt_head_dim",
    "txt_max_len",
    "seed",
];

fn cmd_train_agg(a: TrainAggArgs) -> CmdResult {
    let cfg = load_config(&a.config, &a.sets, a.seed, &TRAIN_AGG_KEYS)?;
    let ds = load_dataset(&a.data)?;
    let encoder = ClipTextModel::load(&a.encoder)?;
    let encoder_hash = adavid_core::config::file_sha256(&a.encoder)?;
    std::fs::create_dir_all(&a.out)?;
    let config_hash = cfg.hash();

    let schedules = cfg.list_or("schedules", &["d-full", "d-half", "d-quarter", "d-dec"]);
    let cache = FeatureCache::new(&a.out.join("cache"));
    precompute_features(&encoder, &ds.longs, ds.spec.segments, &schedules, &cache)?;

    let embed = encoder.video.config.embed;
    let toy_agg = AggConfig::toy(embed);
    let agg_cfg = AggConfig {
        layers: cfg.usize_or("agg_layers", toy_agg.layers)?,
        width: cfg.usize_or("agg_width", toy_agg.width)?,
        head_dim: cfg.usize_or("agg_head_dim", toy_agg.head_dim)?,
        max_segments: cfg.usize_or("agg_max_segments", toy_agg.max_segments)?,
        embed,
    };
    let txt_cfg = text_config(&cfg, embed)?;
    let tc = train_config(&cfg, TrainConfig::toy_aggregator(0))?;
    let mode = match cfg.str_or("mode", "transformer").as_str() {
        "transformer" => AggTrainMode::Transformer,
        "avgpool" => AggTrainMode::AveragePool,
        other => {
            return Err(Error::Config(format!(
                "unknown mode '{other}' (transformer | avgpool)"
            )))
        }
    };

    let mut model = AggModel::init(&agg_cfg, &txt_cfg, ds.vocab.clone(), &encoder_hash, tc.seed)?;
    let trace = train_aggregator(&mut model, &ds.longs, &cache, &schedules, &tc, mode)?;
    write_loss_csv(&a.out.join("loss.csv"), &config_hash, tc.seed, &trace)?;
    model.save(&a.out.join("agg.ckpt"))?;

    // The freeze contract is part of the command's output.
    let hash_after = adavid_core::config::file_sha256(&a.encoder)?;
    println!(
        "trained aggregator for {} steps (final loss {:.4}); encoder hash {} ({})",
        trace.len(),
        trace.last().map(|r| r.loss).unwrap_or(f64::NAN),
        &hash_after[..12],
        if hash_after == encoder_hash {
            "unchanged"
        } else {
            "CHANGED"
        }
    );
    if hash_after != encoder_hash {
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

// ─── eval ───────────────────────────────────────────────────────────────────

fn cmd_eval(a: EvalArgs) -> CmdResult {
    let ds = load_dataset(&a.data)?;
    let encoder = ClipTextModel::load(&a.checkpoint)?;
    let enc_cfg = encoder.video.config.clone();
    let schedule = named_schedule(&a.schedule, enc_cfg.dim, enc_cfg.layers)?;
    let config_hash = adavid_core::config::file_sha256(&a.checkpoint)?;

    let mut rows: Vec<SweepRow> = Vec::new();
    match a.benchmark.as_str() {
        "mcq-inter" => {
            let bench = build_mcq_inter(&ds, 5.min(ds.spec.classes), a.items, a.seed)?;
            let acc = mcq_eval_model(&encoder, &bench, &schedule)?;
            println!("mcq-inter accuracy at {}: {:.4}", a.schedule, acc);
            rows.push(short_row(&a.schedule, &enc_cfg, "mcq_inter", acc, a.seed)?);
        }
        "mcq-intra" => {
            let bench = build_mcq_intra(&ds, a.seed)?;
            let acc = mcq_eval_model(&encoder, &bench, &schedule)?;
            println!("mcq-intra accuracy at {}: {:.4}", a.schedule, acc);
            rows.push(short_row(&a.schedule, &enc_cfg, "mcq_intra", acc, a.seed)?);
        }
        "retrieval" => {
            let agg_path = a
                .agg
                .as_ref()
                .ok_or_else(|| Error::RejectedInput("retrieval needs --agg".into()))?;
            let agg = AggModel::load(agg_path)?;
            let frames = a.frames.unwrap_or(ds.spec.segments * ds.spec.frames);
            let rec = long_retrieval(&encoder, &agg, &ds, &a.schedule, frames, true)?;
            println!(
                "retrieval at {} ({} frames): R@1 {:.4}  R@5 {:.4}  R@10 {:.4}",
                a.schedule, frames, rec.r1, rec.r5, rec.r10
            );
            let s = frames / enc_cfg.frames;
            let flops = schedule_flops(
                &schedule,
                frames as u64,
                enc_cfg.tokens_per_frame() as u64,
                AttentionMode::Hierarchical { segments: s as u64 },
            )
            .total;
            for (m, v) in [("r1", rec.r1), ("r5", rec.r5), ("r10", rec.r10)] {
                rows.push(SweepRow {
                    schedule: a.schedule.clone(),
                    frames: frames as u64,
                    flops,
                    metric: m.into(),
                    value: v,
                    seed: a.seed,
                });
            }
        }
        other => {
            return Err(Error::RejectedInput(format!(
                "unknown benchmark '{other}' (mcq-inter | mcq-intra | retrieval)"
            )))
        }
    }
    if let Some(path) = &a.json {
        std::fs::write(path, sweep_rows_json(&config_hash, &rows))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn short_row(
    schedule: &str,
    enc: &EncoderConfig,
    metric: &str,
    value: f64,
    seed: u64,
) -> Result<SweepRow, Error> {
    let sched = named_schedule(schedule, enc.dim, enc.layers)?;
    Ok(SweepRow {
        schedule: schedule.to_string(),
        frames: enc.frames as u64,
        flops: schedule_flops(
            &sched,
            enc.frames as u64,
            enc.tokens_per_frame() as u64,
            AttentionMode::SpaceTime,
        )
        .total,
        metric: metric.to_string(),
        value,
        seed,
    })
}

// ─── sweep ──────────────────────────────────────────────────────────────────

fn cmd_sweep(a: SweepArgs) -> CmdResult {
    let ds = load_dataset(&a.data)?;
    let schedules: Vec<String> = a
        .schedules
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    let parse_list = |s: &Option<String>| -> Result<Vec<usize>, Error> {
        s.as_deref()
            .map(|t| {
                t.split(',')
                    .map(|x| {
                        x.trim()
                            .parse::<usize>()
                            .map_err(|_| Error::Config(format!("bad list entry '{x}'")))
                    })
                    .collect::<Result<Vec<usize>, Error>>()
            })
            .transpose()
            .map(|v| v.unwrap_or_default())
    };

    let rows = match a.benchmark.as_str() {
        "mcq" => {
            let encoder = ClipTextModel::load(&a.checkpoint)?;
            sweep_mcq(&encoder, &ds, &schedules, a.items, a.seed)?
        }
        "long" => {
            let encoder = ClipTextModel::load(&a.checkpoint)?;
            let agg_path = a
                .agg
                .as_ref()
                .ok_or_else(|| Error::RejectedInput("long sweep needs --agg".into()))?;
            let agg = AggModel::load(agg_path)?;
            let frames = parse_list(&a.frames)?;
            let frames = if frames.is_empty() {
                vec![ds.spec.segments * ds.spec.frames]
            } else {
                frames
            };
            sweep_long(&encoder, &agg, &ds, &schedules, &frames, a.seed)?
        }
        "frames" => {
            let model = FrameClassifierModel::load(&a.checkpoint)?;
            let frames = parse_list(&a.frames)?;
            let frames = if frames.is_empty() {
                vec![2, 4, 8, 16]
            } else {
                frames
            };
            let widths = parse_list(&a.widths)?;
            let widths = if widths.is_empty() {
                model.video.config.allowed().to_vec()
            } else {
                widths
            };
            frame_sweep(&model, &ds, &frames, &widths, a.seed)?
        }
        other => {
            return Err(Error::RejectedInput(format!(
                "unknown benchmark '{other}' (mcq | long | frames)"
            )))
        }
    };

    let config_hash = adavid_core::config::file_sha256(&a.checkpoint)?;
    write_sweep_csv(&a.out, &config_hash, &rows)?;
    if let Some(path) = &a.json {
        std::fs::write(path, sweep_rows_json(&config_hash, &rows))?;
    }
    println!("wrote {} sweep rows to {}", rows.len(), a.out.display());
    for r in &rows {
        println!(
            "  {} frames={} flops={} {}={:.4}",
            r.schedule, r.frames, r.flops, r.metric, r.value
        );
    }
    Ok(ExitCode::SUCCESS)
}

// ─── selfcheck ──────────────────────────────────────────────────────────────

fn cmd_selfcheck() -> CmdResult {
    let results = adavid_core::selfcheck::run_all();
    for r in &results {
        println!(
            "{} {} - {}",
            if r.pass { "PASS" } else { "FAIL" },
            r.name,
            r.detail
        );
    }
    let ok = adavid_core::selfcheck::all_pass(&results);
    println!(
        "selfcheck: {}/{} invariants passed",
        results.iter().filter(|r| r.pass).count(),
        results.len()
    );
    Ok(if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}
