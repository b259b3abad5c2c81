//! Per-layer width assignments and the named evaluation configurations.

use crate::error::{Error, Result};
use crate::rng::Rng;

/// The active width for each of L layers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DimSchedule {
    pub widths: Vec<usize>,
    pub name: Option<String>,
}

impl DimSchedule {
    pub fn new(widths: Vec<usize>) -> Self {
        DimSchedule { widths, name: None }
    }

    pub fn named(widths: Vec<usize>, name: &str) -> Self {
        DimSchedule {
            widths,
            name: Some(name.to_string()),
        }
    }

    pub fn uniform(width: usize, layers: usize) -> Self {
        DimSchedule::new(vec![width; layers])
    }

    pub fn len(&self) -> usize {
        self.widths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.widths.is_empty()
    }

    pub fn is_non_increasing(&self) -> bool {
        self.widths.windows(2).all(|w| w[0] >= w[1])
    }

    pub fn is_non_decreasing(&self) -> bool {
        self.widths.windows(2).all(|w| w[0] <= w[1])
    }

    /// Label for CSV output: the name when present, else widths joined
    /// with '-' (e.g. "64-48-32-16").
    pub fn label(&self) -> String {
        match &self.name {
            Some(n) => n.clone(),
            None => self
                .widths
                .iter()
                .map(|w| w.to_string())
                .collect::<Vec<_>>()
                .join("-"),
        }
    }
}

/// Nested widths used everywhere: {D, 3D/4, D/2, D/4}.
pub fn allowed_widths(full: usize) -> [usize; 4] {
    assert!(full % 4 == 0, "full width must be divisible by 4");
    [full, 3 * full / 4, full / 2, full / 4]
}

pub const SCHEDULE_NAMES: [&str; 10] = [
    "d-full",
    "d-3q",
    "d-half",
    "d-quarter",
    "d-dec",
    "d-dec-high",
    "d-dec-low",
    "d-inc",
    "d-inc-high",
    "d-inc-low",
];

/// Build one of the named layer patterns, scaled to full width `d` and
/// depth `l`. Grouped patterns split the layers evenly, so `l` must be
/// divisible by the pattern's group count.
pub fn named_schedule(name: &str, d: usize, l: usize) -> Result<DimSchedule> {
    let [full, three_q, half, quarter] = allowed_widths(d);
    let groups: Vec<usize> = match name {
        "d-full" => vec![full],
        "d-3q" => vec![three_q],
        "d-half" => vec![half],
        "d-quarter" => vec![quarter],
        "d-dec" => vec![full, three_q, half, quarter],
        "d-dec-high" => vec![full, three_q, half],
        "d-dec-low" => vec![three_q, half, quarter],
        "d-inc" => vec![quarter, half, three_q, full],
        "d-inc-high" => vec![half, three_q, full],
        "d-inc-low" => vec![quarter, half, three_q],
        _ => {
            return Err(Error::RejectedInput(format!(
                "unknown schedule name '{name}' (known: {})",
                SCHEDULE_NAMES.join(", ")
            )))
        }
    };
    if l % groups.len() != 0 {
        return Err(Error::RejectedInput(format!(
            "schedule '{name}' has {} groups; {l} layers not divisible",
            groups.len()
        )));
    }
    let per = l / groups.len();
    let mut widths = Vec::with_capacity(l);
    for g in groups {
        widths.extend(std::iter::repeat(g).take(per));
    }
    Ok(DimSchedule::named(widths, name))
}

/// How widths are chosen each training iteration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScheduleStrategy {
    /// L i.i.d. draws from the allowed set, sorted non-increasing.
    Decreasing,
    /// L i.i.d. draws, sorted non-decreasing.
    Increasing,
    /// L i.i.d. draws, unsorted.
    Unconstrained,
    /// A fixed named pattern.
    Fixed(String),
}

impl ScheduleStrategy {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "decreasing" => Ok(ScheduleStrategy::Decreasing),
            "increasing" => Ok(ScheduleStrategy::Increasing),
            "unconstrained" => Ok(ScheduleStrategy::Unconstrained),
            other => {
                if let Some(name) = other.strip_prefix("fixed:") {
                    Ok(ScheduleStrategy::Fixed(name.to_string()))
                } else {
                    Err(Error::Config(format!(
                        "unknown schedule strategy '{other}' \
                         (decreasing | increasing | unconstrained | fixed:<name>)"
                    )))
                }
            }
        }
    }
}

/// Draw a schedule for one training iteration.
pub fn sample_schedule(
    strategy: &ScheduleStrategy,
    full_width: usize,
    layers: usize,
    rng: &mut Rng,
) -> Result<DimSchedule> {
    let allowed = allowed_widths(full_width);
    match strategy {
        ScheduleStrategy::Fixed(name) => named_schedule(name, full_width, layers),
        _ => {
            let mut widths: Vec<usize> =
                (0..layers).map(|_| allowed[rng.below(4)]).collect();
            match strategy {
                ScheduleStrategy::Decreasing => widths.sort_unstable_by(|a, b| b.cmp(a)),
                ScheduleStrategy::Increasing => widths.sort_unstable(),
                _ => {}
            }
            Ok(DimSchedule::new(widths))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_scale_patterns() {
        let s = named_schedule("d-dec", 768, 12).unwrap();
        assert_eq!(
            s.widths,
            vec![768, 768, 768, 576, 576, 576, 384, 384, 384, 192, 192, 192]
        );
        let s = named_schedule("d-dec-high", 768, 12).unwrap();
        assert_eq!(
            s.widths,
            vec![768, 768, 768, 768, 576, 576, 576, 576, 384, 384, 384, 384]
        );
        let s = named_schedule("d-full", 768, 12).unwrap();
        assert_eq!(s.widths, vec![768; 12]);
    }

    #[test]
    fn toy_scale_rescales_same_pattern() {
        let s = named_schedule("d-dec", 64, 8).unwrap();
        assert_eq!(s.widths, vec![64, 64, 48, 48, 32, 32, 16, 16]);
    }

    #[test]
    fn errors_on_unknown_or_indivisible() {
        assert!(named_schedule("d-weird", 64, 8).is_err());
        assert!(named_schedule("d-dec-high", 64, 8).is_err()); // 8 % 3 != 0
    }

    #[test]
    fn dec_names_non_increasing_inc_names_non_decreasing() {
        for (d, l) in [(768, 12), (64, 8), (64, 12)] {
            for name in SCHEDULE_NAMES {
                let Ok(s) = named_schedule(name, d, l) else {
                    continue;
                };
                if name.starts_with("d-dec") {
                    assert!(s.is_non_increasing(), "{name}");
                }
                if name.starts_with("d-inc") {
                    assert!(s.is_non_decreasing(), "{name}");
                }
            }
        }
    }

    #[test]
    fn sampled_decreasing_is_sorted_and_in_set() {
        let mut rng = Rng::new(31);
        for _ in 0..200 {
            let s = sample_schedule(&ScheduleStrategy::Decreasing, 64, 8, &mut rng).unwrap();
            assert!(s.is_non_increasing());
            assert!(s.widths.iter().all(|w| [64, 48, 32, 16].contains(w)));
        }
        for _ in 0..200 {
            let s = sample_schedule(&ScheduleStrategy::Increasing, 64, 8, &mut rng).unwrap();
            assert!(s.is_non_decreasing());
        }
    }

    #[test]
    fn degenerate_single_width_set() {
        // With layers = 1 each draw is one allowed value; with a fixed name
        // the full-width schedule is constant.
        let mut rng = Rng::new(1);
        let s = sample_schedule(
            &ScheduleStrategy::Fixed("d-full".into()),
            64,
            8,
            &mut rng,
        )
        .unwrap();
        assert_eq!(s.widths, vec![64; 8]);
    }

    #[test]
    fn strategy_parsing() {
        assert_eq!(
            ScheduleStrategy::parse("decreasing").unwrap(),
            ScheduleStrategy::Decreasing
        );
        assert_eq!(
            ScheduleStrategy::parse("fixed:d-dec").unwrap(),
            ScheduleStrategy::Fixed("d-dec".into())
        );
        assert!(ScheduleStrategy::parse("sideways").is_err());
    }

    #[test]
    fn label_formats() {
        assert_eq!(DimSchedule::new(vec![64, 32]).label(), "64-32");
        assert_eq!(named_schedule("d-dec", 64, 8).unwrap().label(), "d-dec");
    }
}
