//! `pair_events` against a direct per-trigger computation on synthetic
//! streams with known ownership of every click.

use hom_core::analysis::{analyze_stream, pair_events, AnalysisSettings, Sequence};
use hom_core::montecarlo::{DetectionRecord, Detector};
use proptest::prelude::*;

const PERIOD: i64 = 1000;

/// Clicks of one trigger as (detector, ns relative to the trigger).
type Trial = Vec<(Detector, i64)>;

fn trial(pre: i64) -> impl Strategy<Value = Trial> {
    prop::collection::vec(
        (prop_oneof![Just(Detector::A), Just(Detector::B)], -pre..PERIOD - pre),
        0..5,
    )
}

fn expected(trials: &[Trial], valid: i64) -> Vec<Sequence> {
    trials
        .iter()
        .enumerate()
        .filter(|(_, clicks)| clicks.iter().any(|&(_, t)| (0..valid).contains(&t)))
        .map(|(i, clicks)| {
            let first = |d: Detector| clicks.iter().filter(|c| c.0 == d).map(|c| c.1 as f64).reduce(f64::min);
            let count = |d: Detector| clicks.iter().filter(|c| c.0 == d).count() as u32;
            Sequence {
                trigger: (1000 + i as i64 * PERIOD) as u64,
                first_a: first(Detector::A),
                first_b: first(Detector::B),
                n_a: count(Detector::A),
                n_b: count(Detector::B),
            }
        })
        .collect()
}

/// One tick per ns; the first trigger sits at 1000 ns.
fn stream(trials: &[Trial]) -> Vec<DetectionRecord> {
    let mut out = Vec::new();
    for (i, clicks) in trials.iter().enumerate() {
        let t = 1000 + i as i64 * PERIOD;
        out.push(DetectionRecord::new(Detector::Trigger, t as u64));
        out.extend(clicks.iter().map(|&(d, rel)| DetectionRecord::new(d, (t + rel) as u64)));
    }
    out.sort();
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn pairing_is_exact(pre in prop_oneof![Just(0i64), Just(250), 0i64..400], valid in 1i64..200,
                        trials in prop::collection::vec(trial(400), 1..30)) {
        // Keep only clicks inside this case's pre-window.
        let trials: Vec<Trial> = trials
            .into_iter()
            .map(|c| c.into_iter().filter(|&(_, t)| t >= -pre && t < PERIOD - pre).collect())
            .collect();
        let settings = AnalysisSettings {
            pre_trigger_window: pre as f64,
            valid_window: valid as f64,
            ..Default::default()
        };
        let paired = pair_events(&stream(&trials), 1000.0, &settings).unwrap();
        prop_assert_eq!(paired.n_triggers, trials.len() as u64);
        prop_assert_eq!(paired.sequences, expected(&trials, valid));
    }

    #[test]
    fn histogram_counts_every_valid_pair(trials in prop::collection::vec(trial(250), 1..40)) {
        let settings = AnalysisSettings::default();
        let h = analyze_stream(&stream(&trials), 1000.0, &settings).unwrap();
        let pairs: Vec<f64> = expected(&trials, 85).iter().filter_map(Sequence::delta_t).collect();
        prop_assert_eq!(h.counts.iter().sum::<u64>() + h.overflow, pairs.len() as u64);
        for dt in pairs {
            if let Some(i) = h.binning.index(dt) {
                prop_assert!(h.counts[i] > 0);
            }
        }
    }
}
