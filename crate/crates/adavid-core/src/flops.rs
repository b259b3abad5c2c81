//! Closed-form compute cost model.
//!
//! FLOPs are twice the multiply-accumulate count of matrix products in
//! attention projections, score and weighted-sum products, and the FFN.
//! Bias adds, layer norm, softmax and residuals are not counted, and the
//! cls token is excluded. All arithmetic is integer (u128), so totals are
//! exact and reconcile exactly against the instrumented tape counter.
//!
//! Per-layer costs over `N` tokens of width `D`:
//!   multi-head attention  8*N*D^2 + 4*N^2*D
//!   feed-forward (F = 4D) 16*N*D^2
//! A dense layer over a T x N token grid costs 24*T*N*D^2 + 4*T^2*N^2*D;
//! a divided space-time layer costs 32*T*N*D^2 + 4*T*N*D*(N+T); encoding
//! through S independent segments costs 32*T*N*D^2 + 4*T*N*D*(N+T/S) per
//! layer.

use crate::schedule::DimSchedule;

/// Attention layout a cost is computed for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionMode {
    /// Full attention over all T*N tokens.
    Dense,
    /// Divided space-time attention.
    SpaceTime,
    /// Space-time attention over S independent segments of T/S frames.
    Hierarchical { segments: u64 },
}

impl AttentionMode {
    pub fn name(&self) -> &'static str {
        match self {
            AttentionMode::Dense => "dense",
            AttentionMode::SpaceTime => "space-time",
            AttentionMode::Hierarchical { .. } => "hierarchical",
        }
    }
}

/// Multi-head self-attention over N tokens of width D: 8ND^2 + 4N^2D.
pub fn mha_flops(n: u64, d: u64) -> u128 {
    let (n, d) = (n as u128, d as u128);
    8 * n * d * d + 4 * n * n * d
}

/// Feed-forward with hidden width 4D over N tokens: 16ND^2.
pub fn ffn_flops(n: u64, d: u64) -> u128 {
    let (n, d) = (n as u128, d as u128);
    16 * n * d * d
}

/// One dense-attention transformer layer over a T x N grid.
pub fn dense_layer_flops(t: u64, n: u64, d: u64) -> u128 {
    let (t, n, d) = (t as u128, n as u128, d as u128);
    24 * t * n * d * d + 4 * t * t * n * n * d
}

/// One divided space-time transformer layer over a T x N grid.
pub fn spacetime_layer_flops(t: u64, n: u64, d: u64) -> u128 {
    let (t, n, d) = (t as u128, n as u128, d as u128);
    32 * t * n * d * d + 4 * t * n * d * (n + t)
}

/// Per-layer cost of encoding T frames in S independent segments.
pub fn hier_layer_flops(t: u64, n: u64, d: u64, s: u64) -> u128 {
    assert!(s > 0 && t % s == 0, "segments must divide frame count");
    let (t, n, d, s) = (t as u128, n as u128, d as u128, s as u128);
    32 * t * n * d * d + 4 * t * n * d * (n + t / s)
}

fn layer_flops(mode: AttentionMode, t: u64, n: u64, d: u64) -> u128 {
    match mode {
        AttentionMode::Dense => dense_layer_flops(t, n, d),
        AttentionMode::SpaceTime => spacetime_layer_flops(t, n, d),
        AttentionMode::Hierarchical { segments } => hier_layer_flops(t, n, d, segments),
    }
}

/// Sub-block split of one space-time layer, in the formula's grouping.
#[derive(Debug, Clone, Copy)]
pub struct SpaceTimeSplit {
    pub space: u128,
    pub time: u128,
    pub ffn: u128,
}

pub fn spacetime_split(t: u64, n: u64, d: u64) -> SpaceTimeSplit {
    SpaceTimeSplit {
        space: t as u128 * mha_flops(n, d),
        time: n as u128 * mha_flops(t, d),
        ffn: t as u128 * ffn_flops(n, d),
    }
}

/// Closed-form cost report for a schedule.
#[derive(Debug, Clone)]
pub struct FlopsReport {
    pub schedule: DimSchedule,
    pub frames: u64,
    pub tokens_per_frame: u64,
    pub mode_name: String,
    pub per_layer: Vec<u128>,
    pub total: u128,
    /// Filled by an instrumented run when one was performed.
    pub instrumented: Option<u128>,
}

/// Sum the per-layer closed form at each layer's width.
pub fn schedule_flops(schedule: &DimSchedule, t: u64, n: u64, mode: AttentionMode) -> FlopsReport {
    let per_layer: Vec<u128> = schedule
        .widths
        .iter()
        .map(|&d| layer_flops(mode, t, n, d as u64))
        .collect();
    let total = per_layer.iter().sum();
    FlopsReport {
        schedule: schedule.clone(),
        frames: t,
        tokens_per_frame: n,
        mode_name: mode.name().to_string(),
        per_layer,
        total,
        instrumented: None,
    }
}

/// The ten reference configurations at D=768, L=12, evaluated with
/// T=4, N=196 space-time layers, together with their published rounded
/// FLOPs in units of 1e10.
pub const TABLE1_GEOMETRY: (u64, u64, u64, u64) = (4, 196, 768, 12); // T, N, D, L

pub const TABLE1_ROWS: [(&str, f64); 10] = [
    ("d-full", 18.3),
    ("d-3q", 10.4),
    ("d-half", 4.7),
    ("d-quarter", 1.2),
    ("d-dec", 8.7),
    ("d-dec-high", 11.2),
    ("d-dec-low", 5.5),
    ("d-inc", 8.7),
    ("d-inc-high", 11.2),
    ("d-inc-low", 5.5),
];

/// Paper-style label for a reference configuration at D=768.
pub fn table1_label(name: &str) -> &'static str {
    match name {
        "d-full" => "d-768",
        "d-3q" => "d-576",
        "d-half" => "d-384",
        "d-quarter" => "d-192",
        "d-dec" => "d-dec",
        "d-dec-high" => "d-dec-high",
        "d-dec-low" => "d-dec-low",
        "d-inc" => "d-inc",
        "d-inc-high" => "d-inc-high",
        "d-inc-low" => "d-inc-low",
        _ => "?",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::named_schedule;

    #[test]
    fn mha_plugin_values() {
        assert_eq!(mha_flops(1, 2), 40);
        // 8*196*768^2 + 4*196^2*768
        assert_eq!(mha_flops(196, 768), 1_042_857_984);
    }

    #[test]
    fn ffn_plugin_values() {
        assert_eq!(ffn_flops(1, 1), 16);
        assert_eq!(ffn_flops(196, 768), 1_849_688_064);
    }

    #[test]
    fn dense_identity_with_single_frame() {
        // dense(1, N, D) = mha(N, D) + ffn(N, D)
        for (n, d) in [(4u64, 8u64), (16, 32), (196, 768)] {
            assert_eq!(dense_layer_flops(1, n, d), mha_flops(n, d) + ffn_flops(n, d));
        }
        assert_eq!(dense_layer_flops(1, 4, 8), 6656);
        assert_eq!(dense_layer_flops(4, 196, 768), 12_986_351_616);
    }

    #[test]
    fn dense_grows_quadratically_in_frames() {
        let f = |t| dense_layer_flops(t, 16, 32);
        // Second difference of a quadratic is constant.
        let d1 = f(2) - f(1);
        let d2 = f(3) - f(2);
        let d3 = f(4) - f(3);
        assert_eq!(d2 - d1, d3 - d2);
        assert!(d2 > d1);
    }

    #[test]
    fn spacetime_identity_and_values() {
        for (t, n, d) in [(2u64, 4u64, 16u64), (4, 196, 768), (3, 5, 12)] {
            let split = spacetime_split(t, n, d);
            assert_eq!(
                spacetime_layer_flops(t, n, d),
                split.space + split.time + split.ffn
            );
        }
        assert_eq!(spacetime_layer_flops(4, 196, 768), 15_279_194_112);
        assert_eq!(spacetime_layer_flops(4, 196, 192), 1_045_266_432);
        // 12 layers at 192 land at 1.254e10, against the published 1.2.
        assert_eq!(12 * spacetime_layer_flops(4, 196, 192), 12_543_197_184);
    }

    #[test]
    fn hier_degenerate_and_values() {
        assert_eq!(hier_layer_flops(2, 4, 16, 1), spacetime_layer_flops(2, 4, 16));
        // S = T: minimal time term 32TND^2 + 4TND(N+1)
        assert_eq!(
            hier_layer_flops(8, 4, 16, 8),
            32 * 8 * 4 * 256 + 4 * 8 * 4 * 16 * 5
        );
        assert_eq!(hier_layer_flops(64, 196, 768, 16), 244_467_105_792);
    }

    #[test]
    fn table1_exact_totals() {
        let (t, n, d, l) = TABLE1_GEOMETRY;
        let expected: [(&str, u128); 7] = [
            ("d-full", 183_350_329_344),
            ("d-3q", 104_218_361_856),
            ("d-half", 47_282_651_136),
            ("d-quarter", 12_543_197_184),
            ("d-dec", 86_848_634_880),
            ("d-dec-high", 111_617_114_112),
            ("d-dec-low", 54_681_403_392),
        ];
        for (name, want) in expected {
            let sched = named_schedule(name, d as usize, l as usize).unwrap();
            let report = schedule_flops(&sched, t, n, AttentionMode::SpaceTime);
            assert_eq!(report.total, want, "{name}");
        }
        // inc rows are permutations of dec rows; totals match.
        for (inc, dec) in [
            ("d-inc", "d-dec"),
            ("d-inc-high", "d-dec-high"),
            ("d-inc-low", "d-dec-low"),
        ] {
            let a = named_schedule(inc, d as usize, l as usize).unwrap();
            let b = named_schedule(dec, d as usize, l as usize).unwrap();
            assert_eq!(
                schedule_flops(&a, t, n, AttentionMode::SpaceTime).total,
                schedule_flops(&b, t, n, AttentionMode::SpaceTime).total
            );
        }
    }

    #[test]
    fn schedule_flops_strictly_monotone_in_width() {
        let t = 2;
        let n = 4;
        for base in [16usize, 32, 64] {
            let widths = [base, 3 * base / 4, base / 2, base / 4];
            for w in widths.windows(2) {
                let a = DimSchedule::uniform(w[0], 2);
                let b = DimSchedule::uniform(w[1], 2);
                assert!(
                    schedule_flops(&a, t, n, AttentionMode::SpaceTime).total
                        > schedule_flops(&b, t, n, AttentionMode::SpaceTime).total
                );
            }
        }
    }

    #[test]
    fn report_total_is_sum_of_layers() {
        let sched = named_schedule("d-dec", 64, 8).unwrap();
        let r = schedule_flops(&sched, 4, 16, AttentionMode::SpaceTime);
        assert_eq!(r.total, r.per_layer.iter().sum::<u128>());
        assert_eq!(r.per_layer.len(), 8);
    }
}
