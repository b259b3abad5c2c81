//! Deterministic synthetic video-text data.
//!
//! Each class is a motif: a bright patch-sized block following a
//! class-specific trajectory across frames, on a dim noisy background,
//! captioned by a fixed two-word template. Long videos are sequences of
//! motifs with an ordered summary ("first ... then ..."); they are
//! generated in pairs that share a motif multiset but differ in order,
//! so order-insensitive models provably cannot tell the pair apart.

use crate::config::ConfigMap;
use crate::error::{Error, Result};
use crate::rng::{subseed, Rng};
use crate::text::Vocab;
use crate::video::VideoClip;
use std::io::{Read, Write};
use std::path::Path;

const NOUNS: [&str; 8] = [
    "spark", "wave", "pulse", "orbit", "flare", "drift", "ember", "ripple",
];
const VERBS: [&str; 8] = [
    "rises", "falls", "slides", "spins", "blinks", "glides", "jumps", "fades",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDatasetSpec {
    pub classes: usize,
    pub samples_per_class: usize,
    pub noise: f64,
    pub frames: usize,
    pub image: usize,
    pub patch: usize,
    /// Distinct same-multiset pairs of long-video orderings.
    pub long_pairs: usize,
    /// Fresh-noise instances generated per distinct ordering.
    pub long_instances: usize,
    /// Motifs per long video; each motif spans `frames` frames.
    pub segments: usize,
    pub seed: u64,
}

impl SyntheticDatasetSpec {
    pub fn toy(seed: u64) -> Self {
        SyntheticDatasetSpec {
            classes: 5,
            samples_per_class: 20,
            noise: 0.05,
            frames: 4,
            image: 32,
            patch: 8,
            long_pairs: 10,
            long_instances: 1,
            segments: 4,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.classes > NOUNS.len() * VERBS.len() {
            return Err(Error::Config(format!(
                "classes must be in 1..={}",
                NOUNS.len() * VERBS.len()
            )));
        }
        if self.segments > self.classes {
            return Err(Error::Config(
                "segments per long video cannot exceed class count (motifs are distinct)".into(),
            ));
        }
        if self.image % self.patch != 0 {
            return Err(Error::Config("image must be divisible by patch".into()));
        }
        Ok(())
    }

    pub fn to_config(&self) -> ConfigMap {
        let mut cfg = ConfigMap::new();
        cfg.set("classes", self.classes);
        cfg.set("samples_per_class", self.samples_per_class);
        cfg.set("noise", self.noise);
        cfg.set("frames", self.frames);
        cfg.set("image", self.image);
        cfg.set("patch", self.patch);
        cfg.set("long_pairs", self.long_pairs);
        cfg.set("long_instances", self.long_instances);
        cfg.set("segments", self.segments);
        cfg.set("seed", self.seed);
        cfg
    }

    pub fn from_config(cfg: &ConfigMap) -> Result<Self> {
        let spec = SyntheticDatasetSpec {
            classes: cfg.usize_or("classes", 5)?,
            samples_per_class: cfg.usize_or("samples_per_class", 20)?,
            noise: cfg.f64_or("noise", 0.05)?,
            frames: cfg.usize_or("frames", 4)?,
            image: cfg.usize_or("image", 32)?,
            patch: cfg.usize_or("patch", 8)?,
            long_pairs: cfg.usize_or("long_pairs", 10)?,
            long_instances: cfg.usize_or("long_instances", 2)?,
            segments: cfg.usize_or("segments", 4)?,
            seed: cfg.u64_or("seed", 0)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub const KEYS: [&'static str; 10] = [
        "classes",
        "samples_per_class",
        "noise",
        "frames",
        "image",
        "patch",
        "long_pairs",
        "long_instances",
        "segments",
        "seed",
    ];
}

pub fn class_caption(class: usize) -> String {
    format!("{} {}", NOUNS[class % NOUNS.len()], VERBS[class / NOUNS.len() % VERBS.len()])
}

pub fn summary_caption(classes: &[usize]) -> String {
    let mut out = String::new();
    for (i, &c) in classes.iter().enumerate() {
        out.push_str(if i == 0 { "first " } else { " then " });
        out.push_str(&class_caption(c));
    }
    out
}

#[derive(Debug, Clone)]
pub struct ShortSample {
    pub id: usize,
    pub class: usize,
    pub clip: VideoClip,
    pub caption: String,
}

#[derive(Debug, Clone)]
pub struct LongSample {
    pub id: usize,
    /// Index of this video's distinct ordering (the classification label).
    pub seq_label: usize,
    pub classes: Vec<usize>,
    pub video: VideoClip,
    pub summary: String,
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub spec: SyntheticDatasetSpec,
    pub shorts: Vec<ShortSample>,
    pub longs: Vec<LongSample>,
    pub vocab: Vocab,
}

/// Render one motif clip: class trajectory plus Gaussian noise, clamped
/// to [0, 1].
fn render_motif(spec: &SyntheticDatasetSpec, class: usize, rng: &mut Rng) -> VideoClip {
    let g = spec.image / spec.patch; // grid cells per side
    let mut clip = VideoClip::zeros(spec.frames, 3, spec.image, spec.image);
    // Class-specific start cell, direction and color channel.
    let sx = class % g;
    let sy = (class / g) % g;
    let dirs = [(1isize, 0isize), (0, 1), (1, 1), (g as isize - 1, 0)];
    let (dx, dy) = dirs[class % dirs.len()];
    let chan = class % 3;
    for f in 0..spec.frames {
        for c in 0..3 {
            for y in 0..spec.image {
                for x in 0..spec.image {
                    *clip.pixel_mut(f, c, y, x) = 0.1;
                }
            }
        }
        let cx = ((sx as isize + f as isize * dx).rem_euclid(g as isize)) as usize;
        let cy = ((sy as isize + f as isize * dy).rem_euclid(g as isize)) as usize;
        for y in 0..spec.patch {
            for x in 0..spec.patch {
                *clip.pixel_mut(f, chan, cy * spec.patch + y, cx * spec.patch + x) = 0.9;
            }
        }
    }
    if spec.noise > 0.0 {
        for v in clip.data.iter_mut() {
            *v = (*v + rng.normal_scaled(spec.noise)).clamp(0.0, 1.0);
        }
    }
    clip
}

fn concat_clips(clips: &[VideoClip]) -> VideoClip {
    let first = &clips[0];
    let mut data = Vec::new();
    for c in clips {
        data.extend_from_slice(&c.data);
    }
    VideoClip::new(
        clips.iter().map(|c| c.frames).sum(),
        first.channels,
        first.height,
        first.width,
        data,
    )
}

/// Generate the full dataset. Same spec (including seed) regenerates the
/// identical dataset.
pub fn generate_synthetic(spec: &SyntheticDatasetSpec) -> Result<SyntheticDataset> {
    spec.validate()?;

    // Short clips, class-major.
    let mut rng = Rng::new(subseed(spec.seed, "shorts"));
    let mut shorts = Vec::with_capacity(spec.classes * spec.samples_per_class);
    for class in 0..spec.classes {
        for _ in 0..spec.samples_per_class {
            let clip = render_motif(spec, class, &mut rng);
            shorts.push(ShortSample {
                id: shorts.len(),
                class,
                clip,
                caption: class_caption(class),
            });
        }
    }

    // Long videos: pairs of orderings over the same motif set.
    let mut rng = Rng::new(subseed(spec.seed, "longs"));
    let mut orderings: Vec<Vec<usize>> = Vec::with_capacity(spec.long_pairs * 2);
    for _ in 0..spec.long_pairs {
        let mut pool: Vec<usize> = (0..spec.classes).collect();
        rng.shuffle(&mut pool);
        let seq: Vec<usize> = pool[..spec.segments].to_vec();
        let mut rotated = seq.clone();
        rotated.rotate_left(1);
        orderings.push(seq);
        orderings.push(rotated);
    }
    let mut longs = Vec::with_capacity(orderings.len() * spec.long_instances);
    for (seq_label, classes) in orderings.iter().enumerate() {
        for _ in 0..spec.long_instances {
            let segs: Vec<VideoClip> = classes
                .iter()
                .map(|&c| render_motif(spec, c, &mut rng))
                .collect();
            longs.push(LongSample {
                id: longs.len(),
                seq_label,
                classes: classes.clone(),
                video: concat_clips(&segs),
                summary: summary_caption(classes),
            });
        }
    }

    // Closed-world vocabulary over every caption and summary.
    let caption_texts: Vec<String> = shorts
        .iter()
        .map(|s| s.caption.clone())
        .chain(longs.iter().map(|l| l.summary.clone()))
        .collect();
    let vocab = Vocab::build(caption_texts.iter().map(|s| s.as_str()));

    Ok(SyntheticDataset {
        spec: spec.clone(),
        shorts,
        longs,
        vocab,
    })
}

// ─── Clip file format ───────────────────────────────────────────────────────

pub const CLIP_MAGIC: &[u8; 8] = b"ADACLIP1";

pub fn write_clip(clip: &VideoClip, w: &mut impl Write) -> Result<()> {
    w.write_all(CLIP_MAGIC)?;
    for v in [clip.frames, clip.channels, clip.height, clip.width] {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    for v in &clip.data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_clip(r: &mut impl Read) -> Result<VideoClip> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CLIP_MAGIC {
        return Err(Error::Checkpoint("not a clip file".into()));
    }
    let mut dims = [0usize; 4];
    let mut buf = [0u8; 8];
    for d in dims.iter_mut() {
        r.read_exact(&mut buf)?;
        *d = u64::from_le_bytes(buf) as usize;
    }
    let n = dims.iter().product();
    let mut data = vec![0.0f64; n];
    for v in data.iter_mut() {
        r.read_exact(&mut buf)?;
        *v = f64::from_le_bytes(buf);
    }
    Ok(VideoClip::new(dims[0], dims[1], dims[2], dims[3], data))
}

pub fn save_clip(clip: &VideoClip, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_clip(clip, &mut f)?;
    f.flush()?;
    Ok(())
}

pub fn load_clip(path: &Path) -> Result<VideoClip> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_clip(&mut f)
}

// ─── Dataset directory layout ───────────────────────────────────────────────

/// Write the dataset under `dir`:
///
/// ```text
/// meta.cfg            spec parameters + config hash
/// vocab.tsv           token<TAB>id lines
/// short/NNNN.clip     one clip per short sample
/// short/captions.tsv  id, class, caption
/// long/NNNN.clip      one clip per long video
/// long/summaries.tsv  id, seq_label, classes, summary
/// ```
pub fn save_dataset(ds: &SyntheticDataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir.join("short"))?;
    std::fs::create_dir_all(dir.join("long"))?;
    let mut meta = ds.spec.to_config();
    meta.set("config_hash", ds.spec.to_config().hash());
    std::fs::write(dir.join("meta.cfg"), meta.canonical_text())?;
    std::fs::write(dir.join("vocab.tsv"), ds.vocab.to_text())?;

    let mut captions = String::new();
    for s in &ds.shorts {
        save_clip(&s.clip, &dir.join(format!("short/{:04}.clip", s.id)))?;
        captions.push_str(&format!("{}\t{}\t{}\n", s.id, s.class, s.caption));
    }
    std::fs::write(dir.join("short/captions.tsv"), captions)?;

    let mut summaries = String::new();
    for l in &ds.longs {
        save_clip(&l.video, &dir.join(format!("long/{:04}.clip", l.id)))?;
        let classes: Vec<String> = l.classes.iter().map(|c| c.to_string()).collect();
        summaries.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            l.id,
            l.seq_label,
            classes.join(","),
            l.summary
        ));
    }
    std::fs::write(dir.join("long/summaries.tsv"), summaries)?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<SyntheticDataset> {
    let meta = ConfigMap::load(&dir.join("meta.cfg"))?;
    let spec = SyntheticDatasetSpec::from_config(&meta)?;
    let vocab = Vocab::from_text(&std::fs::read_to_string(dir.join("vocab.tsv"))?)?;

    let mut shorts = Vec::new();
    for line in std::fs::read_to_string(dir.join("short/captions.tsv"))?.lines() {
        let mut parts = line.splitn(3, '\t');
        let id: usize = parts.next().unwrap_or("").parse().map_err(bad_tsv)?;
        let class: usize = parts.next().unwrap_or("").parse().map_err(bad_tsv)?;
        let caption = parts.next().unwrap_or("").to_string();
        let clip = load_clip(&dir.join(format!("short/{id:04}.clip")))?;
        shorts.push(ShortSample {
            id,
            class,
            clip,
            caption,
        });
    }

    let mut longs = Vec::new();
    let summaries_path = dir.join("long/summaries.tsv");
    if summaries_path.exists() {
        for line in std::fs::read_to_string(summaries_path)?.lines() {
            let mut parts = line.splitn(4, '\t');
            let id: usize = parts.next().unwrap_or("").parse().map_err(bad_tsv)?;
            let seq_label: usize = parts.next().unwrap_or("").parse().map_err(bad_tsv)?;
            let classes: Vec<usize> = parts
                .next()
                .unwrap_or("")
                .split(',')
                .map(|c| c.parse().map_err(bad_tsv))
                .collect::<Result<_>>()?;
            let summary = parts.next().unwrap_or("").to_string();
            let video = load_clip(&dir.join(format!("long/{id:04}.clip")))?;
            longs.push(LongSample {
                id,
                seq_label,
                classes,
                video,
                summary,
            });
        }
    }

    Ok(SyntheticDataset {
        spec,
        shorts,
        longs,
        vocab,
    })
}

fn bad_tsv(e: std::num::ParseIntError) -> Error {
    Error::Checkpoint(format!("malformed dataset tsv: {e}"))
}

/// Uniformly sample `count` frames (deterministic: frame i maps to
/// floor(i * T / count)), returning the subclip and the chosen indices.
pub fn sample_frames(video: &VideoClip, count: usize) -> (VideoClip, Vec<usize>) {
    assert!(count >= 1 && count <= video.frames);
    let idx: Vec<usize> = (0..count).map(|i| i * video.frames / count).collect();
    let fsz = video.channels * video.height * video.width;
    let mut data = Vec::with_capacity(count * fsz);
    for &f in &idx {
        data.extend_from_slice(&video.data[f * fsz..(f + 1) * fsz]);
    }
    (
        VideoClip::new(count, video.channels, video.height, video.width, data),
        idx,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_same_class_identical() {
        let mut spec = SyntheticDatasetSpec::toy(1);
        spec.noise = 0.0;
        let ds = generate_synthetic(&spec).unwrap();
        let a = &ds.shorts[0];
        let b = &ds.shorts[1];
        assert_eq!(a.class, b.class);
        assert_eq!(a.clip.data, b.clip.data);
    }

    #[test]
    fn counts_and_captions() {
        let spec = SyntheticDatasetSpec::toy(2);
        let ds = generate_synthetic(&spec).unwrap();
        assert_eq!(ds.shorts.len(), 100);
        let mut caps: Vec<&str> = ds.shorts.iter().map(|s| s.caption.as_str()).collect();
        caps.sort_unstable();
        caps.dedup();
        assert_eq!(caps.len(), 5);
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let spec = SyntheticDatasetSpec::toy(3);
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        for (x, y) in a.shorts.iter().zip(&b.shorts) {
            assert_eq!(x.clip.data, y.clip.data);
        }
        for (x, y) in a.longs.iter().zip(&b.longs) {
            assert_eq!(x.video.data, y.video.data);
            assert_eq!(x.summary, y.summary);
        }
    }

    #[test]
    fn order_pairs_exist_by_construction() {
        let spec = SyntheticDatasetSpec::toy(4);
        let ds = generate_synthetic(&spec).unwrap();
        // Orderings come in consecutive pairs sharing a multiset but
        // differing in order.
        let a = &ds.longs[0];
        let partner = ds
            .longs
            .iter()
            .find(|l| l.seq_label == 1)
            .expect("partner ordering");
        let mut ma = a.classes.clone();
        let mut mb = partner.classes.clone();
        assert_ne!(a.classes, partner.classes);
        ma.sort_unstable();
        mb.sort_unstable();
        assert_eq!(ma, mb);
        assert_ne!(a.summary, partner.summary);
    }

    #[test]
    fn long_video_geometry() {
        let spec = SyntheticDatasetSpec::toy(5);
        let ds = generate_synthetic(&spec).unwrap();
        let l = &ds.longs[0];
        assert_eq!(l.video.frames, spec.segments * spec.frames);
        assert_eq!(ds.longs.len(), spec.long_pairs * 2 * spec.long_instances);
    }

    #[test]
    fn summary_text_shape() {
        assert_eq!(
            summary_caption(&[0, 1]),
            "first spark rises then wave rises"
        );
    }

    #[test]
    fn clip_io_roundtrip() {
        let spec = SyntheticDatasetSpec::toy(6);
        let ds = generate_synthetic(&spec).unwrap();
        let clip = &ds.shorts[0].clip;
        let mut bytes = Vec::new();
        write_clip(clip, &mut bytes).unwrap();
        let back = read_clip(&mut bytes.as_slice()).unwrap();
        assert_eq!(clip.data, back.data);
        assert_eq!(clip.frames, back.frames);
    }

    #[test]
    fn dataset_dir_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = SyntheticDatasetSpec::toy(7);
        spec.samples_per_class = 2;
        spec.long_pairs = 1;
        spec.long_instances = 1;
        let ds = generate_synthetic(&spec).unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.shorts.len(), ds.shorts.len());
        assert_eq!(back.longs.len(), ds.longs.len());
        assert_eq!(back.shorts[3].clip.data, ds.shorts[3].clip.data);
        assert_eq!(back.vocab, ds.vocab);
        assert_eq!(back.longs[0].summary, ds.longs[0].summary);
    }

    #[test]
    fn frame_sampling_is_uniform_and_deterministic() {
        let video = VideoClip::new(4, 1, 1, 1, vec![0.0, 1.0, 2.0, 3.0]);
        let (two, idx) = sample_frames(&video, 2);
        assert_eq!(idx, vec![0, 2]);
        assert_eq!(two.data, vec![0.0, 2.0]);
        let (all, idx) = sample_frames(&video, 4);
        assert_eq!(idx, vec![0, 1, 2, 3]);
        assert_eq!(all.data, video.data);
    }
}
