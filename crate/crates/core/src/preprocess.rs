//! Trigger-aligned epochs, artifact marking and per-channel quality summaries.

use std::collections::BTreeMap;

use ndarray::Array3;
use serde::Serialize;
use thiserror::Error;

use crate::formats::{Event, SignalRecord, ARTIFACT_EVENT};

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("no events of trigger type {0}")]
    NoSuchTriggerType(u16),
    #[error("epoching needs every channel at the same sample count")]
    MixedRates,
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DropReason {
    OutOfBounds,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DroppedTrial {
    /// Position of the trigger event.
    pub position: u64,
    pub reason: DropReason,
}

/// Trials x channels x samples, with the trigger at sample index `pre`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSet {
    pub data: Array3<f64>,
    pub pre: usize,
    pub post: usize,
    /// Trigger position of each retained trial.
    pub triggers: Vec<u64>,
    pub labels: Vec<Option<String>>,
    pub dropped: Vec<DroppedTrial>,
}

impl EpochSet {
    pub fn num_trials(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn window_len(&self) -> usize {
        self.pre + self.post + 1
    }
}

/// Cuts the window `[t - pre, t + post]` around every event of
/// `trigger_type`.
///
/// Windows that leave the recording are dropped and listed in `dropped`.
/// A trial's label comes from the first event at or after its trigger, and
/// within the window, whose type appears in `label_map`.
pub fn extract_epochs(
    record: &SignalRecord,
    trigger_type: u16,
    pre: usize,
    post: usize,
    label_map: Option<&BTreeMap<u16, String>>,
) -> Result<EpochSet, PreprocessError> {
    if !record.is_uniform() {
        return Err(PreprocessError::MixedRates);
    }
    let triggers: Vec<&Event> = record.events.of_type(trigger_type).collect();
    if triggers.is_empty() {
        return Err(PreprocessError::NoSuchTriggerType(trigger_type));
    }
    let len = record.len() as u64;
    let width = pre + post + 1;
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for ev in triggers {
        let t = ev.position;
        let inside = t >= pre as u64 && t.checked_add(post as u64).is_some_and(|end| end < len);
        if inside {
            kept.push(t);
        } else {
            dropped.push(DroppedTrial {
                position: t,
                reason: DropReason::OutOfBounds,
            });
        }
    }

    let nch = record.num_channels();
    let mut data = Array3::zeros((kept.len(), nch, width));
    let mut labels = Vec::with_capacity(kept.len());
    for (i, &t) in kept.iter().enumerate() {
        let start = (t - pre as u64) as usize;
        for c in 0..nch {
            let src = &record.channel(c)[start..start + width];
            data.slice_mut(ndarray::s![i, c, ..])
                .iter_mut()
                .zip(src)
                .for_each(|(d, s)| *d = *s);
        }
        let label = label_map.and_then(|map| {
            let window_end = t + post as u64;
            record
                .events
                .iter()
                .skip_while(|e| e.position < t)
                .take_while(|e| e.position <= window_end)
                .find_map(|e| map.get(&e.type_code).cloned())
        });
        labels.push(label);
    }
    Ok(EpochSet {
        data,
        pre,
        post,
        triggers: kept,
        labels,
        dropped,
    })
}

/// Replaces samples with `|x| > amp_threshold`, and runs of at least
/// `flat_run` bit-identical values, by NaN.
///
/// Each newly marked region is appended to the events as an
/// [`ARTIFACT_EVENT`] on its channel. Returns the new record and the number
/// of samples marked per channel. Applying it twice equals applying it once.
pub fn mark_artifacts(
    record: &SignalRecord,
    amp_threshold: f64,
    flat_run: usize,
) -> Result<(SignalRecord, Vec<usize>), PreprocessError> {
    if !(amp_threshold > 0.0) {
        return Err(PreprocessError::InvalidParameter("amplitude threshold must be positive"));
    }
    if flat_run < 2 {
        return Err(PreprocessError::InvalidParameter("flat run must be at least 2"));
    }
    let mut out = record.clone();
    let mut counts = Vec::with_capacity(record.num_channels());
    for (c, row) in out.samples.iter_mut().enumerate() {
        let mut mark = vec![false; row.len()];
        for (m, x) in mark.iter_mut().zip(row.iter()) {
            if x.abs() > amp_threshold {
                *m = true;
            }
        }
        let mut i = 0;
        while i < row.len() {
            if row[i].is_nan() {
                i += 1;
                continue;
            }
            let bits = row[i].to_bits();
            let mut j = i + 1;
            while j < row.len() && row[j].to_bits() == bits {
                j += 1;
            }
            if j - i >= flat_run {
                mark[i..j].fill(true);
            }
            i = j;
        }

        let mut marked = 0;
        let mut k = 0;
        while k < row.len() {
            if mark[k] {
                let start = k;
                while k < row.len() && mark[k] {
                    row[k] = f64::NAN;
                    k += 1;
                }
                marked += k - start;
                out.events.push(Event {
                    position: start as u64,
                    type_code: ARTIFACT_EVENT,
                    channel: c as u32 + 1,
                    duration: (k - start) as u64,
                    label: None,
                });
            } else {
                k += 1;
            }
        }
        counts.push(marked);
    }
    Ok((out, counts))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelQuality {
    pub label: String,
    pub min: f64,
    pub max: f64,
    pub nan_ratio: f64,
    /// Fraction of samples sitting exactly at the physical range limits.
    pub saturation_ratio: f64,
    pub valid_count: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QualityReport {
    pub channels: Vec<ChannelQuality>,
}

pub fn quality_report(record: &SignalRecord) -> QualityReport {
    let channels = record
        .header
        .channels
        .iter()
        .zip(&record.samples)
        .map(|(spec, row)| {
            let total = row.len();
            let valid: Vec<f64> = row.iter().copied().filter(|x| !x.is_nan()).collect();
            let (min, max) = if valid.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                valid
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
            };
            let lo = spec.phys_min.min(spec.phys_max);
            let hi = spec.phys_min.max(spec.phys_max);
            let saturated = valid.iter().filter(|&&x| x <= lo || x >= hi).count();
            let ratio = |n: usize| if total == 0 { 0.0 } else { n as f64 / total as f64 };
            ChannelQuality {
                label: spec.label.clone(),
                min,
                max,
                nan_ratio: if total == 0 { 0.0 } else { 1.0 - valid.len() as f64 / total as f64 },
                saturation_ratio: ratio(saturated),
                valid_count: valid.len(),
                total,
            }
        })
        .collect();
    QualityReport { channels }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formats::testutil::{channel, record};
    use crate::formats::EventTable;
    use proptest::prelude::*;

    const NAN: f64 = f64::NAN;

    fn ramp(n: usize) -> SignalRecord {
        let ch = channel("a", (-1000.0, 1000.0), (-32768, 32767), n);
        record(vec![ch], 1, vec![(0..n).map(|i| i as f64).collect()])
    }

    #[test]
    fn window_definition() {
        let mut rec = ramp(10);
        rec.events.push(Event::new(5, 1));
        let e = extract_epochs(&rec, 1, 1, 2, None).unwrap();
        assert_eq!(e.num_trials(), 1);
        assert_eq!(e.window_len(), 4);
        let trial: Vec<f64> = e.data.slice(ndarray::s![0, 0, ..]).to_vec();
        assert_eq!(trial, vec![4.0, 5.0, 6.0, 7.0]);
    }

    #[test]
    fn out_of_bounds_is_dropped() {
        let mut rec = ramp(10);
        rec.events.push(Event::new(0, 1));
        rec.events.push(Event::new(8, 1));
        rec.events.push(Event::new(4, 1));
        let e = extract_epochs(&rec, 1, 1, 2, None).unwrap();
        assert_eq!(e.triggers, vec![4]);
        assert_eq!(
            e.dropped,
            vec![
                DroppedTrial { position: 0, reason: DropReason::OutOfBounds },
                DroppedTrial { position: 8, reason: DropReason::OutOfBounds },
            ]
        );
    }

    #[test]
    fn trials_follow_event_order_and_labels() {
        let mut rec = ramp(20);
        rec.events = EventTable::from_events(vec![
            Event::new(3, 1),
            Event::new(3, 2),
            Event::new(10, 1),
            Event::new(12, 3),
            Event::new(15, 1),
        ]);
        let map = BTreeMap::from([(2, "left".to_string()), (3, "right".to_string())]);
        let e = extract_epochs(&rec, 1, 0, 3, Some(&map)).unwrap();
        assert_eq!(e.triggers, vec![3, 10, 15]);
        assert_eq!(e.data[[1, 0, 0]], 10.0);
        assert_eq!(
            e.labels,
            vec![Some("left".into()), Some("right".into()), None]
        );
    }

    #[test]
    fn missing_trigger_type() {
        let rec = ramp(4);
        assert_eq!(
            extract_epochs(&rec, 9, 0, 0, None).unwrap_err(),
            PreprocessError::NoSuchTriggerType(9)
        );
    }

    #[test]
    fn amplitude_rule() {
        let ch = channel("a", (-200.0, 200.0), (-2000, 2000), 4);
        let rec = record(vec![ch], 1, vec![vec![1.0, 150.0, -3.0, 2.0]]);
        let (out, counts) = mark_artifacts(&rec, 100.0, 4).unwrap();
        assert_eq!(counts, vec![1]);
        assert!(out.samples[0][1].is_nan());
        assert_eq!(out.events.len(), 1);
        let ev = &out.events.as_slice()[0];
        assert_eq!((ev.type_code, ev.position, ev.duration, ev.channel), (ARTIFACT_EVENT, 1, 1, 1));
    }

    #[test]
    fn flat_run_rule() {
        let ch = channel("a", (-200.0, 200.0), (-2000, 2000), 8);
        let rec = record(vec![ch], 1, vec![vec![1.0, 5.0, 5.0, 5.0, 5.0, 5.0, 2.0, 2.0]]);
        let (out, counts) = mark_artifacts(&rec, 100.0, 4).unwrap();
        assert_eq!(counts, vec![5]);
        assert!(out.samples[0][1..6].iter().all(|x| x.is_nan()));
        assert_eq!(out.samples[0][6], 2.0);
    }

    #[test]
    fn clean_signal_untouched() {
        let n = 200;
        let ch = channel("a", (-200.0, 200.0), (-2000, 2000), n);
        let rec = record(vec![ch], 1, vec![(0..n).map(|i| 50.0 * (i as f64 * 0.1).sin()).collect()]);
        let (out, counts) = mark_artifacts(&rec, 100.0, 3).unwrap();
        assert_eq!(counts, vec![0]);
        assert_eq!(out, rec);
    }

    #[test]
    fn quality_of_partial_and_empty_channels() {
        let a = channel("a", (0.0, 3.0), (0, 3), 3);
        let b = channel("b", (0.0, 3.0), (0, 3), 3);
        let rec = record(vec![a, b], 1, vec![vec![1.0, NAN, 3.0], vec![NAN; 3]]);
        let q = quality_report(&rec);
        assert_eq!((q.channels[0].min, q.channels[0].max), (1.0, 3.0));
        assert!((q.channels[0].nan_ratio - 1.0 / 3.0).abs() < 1e-15);
        assert!((q.channels[0].saturation_ratio - 1.0 / 3.0).abs() < 1e-15);
        assert!(q.channels[1].min.is_nan() && q.channels[1].max.is_nan());
        assert_eq!(q.channels[1].nan_ratio, 1.0);
    }

    fn arb_record() -> impl Strategy<Value = SignalRecord> {
        proptest::collection::vec(
            prop_oneof![3 => -150.0f64..150.0, 1 => Just(7.0), 1 => Just(NAN)],
            1..80,
        )
        .prop_map(|row| {
            let n = row.len();
            record(vec![channel("a", (-200.0, 200.0), (-2000, 2000), n)], 1, vec![row])
        })
    }

    proptest! {
        #[test]
        fn marking_is_idempotent(rec in arb_record(), flat in 2usize..5) {
            let (once, _) = mark_artifacts(&rec, 100.0, flat).unwrap();
            let (twice, counts) = mark_artifacts(&once, 100.0, flat).unwrap();
            prop_assert_eq!(counts, vec![0]);
            prop_assert_eq!(&once.events, &twice.events);
            for (a, b) in once.samples[0].iter().zip(&twice.samples[0]) {
                prop_assert!(a.to_bits() == b.to_bits());
            }
            let before = quality_report(&rec).channels[0].nan_ratio;
            let after = quality_report(&once).channels[0].nan_ratio;
            prop_assert!(after >= before);
        }

        #[test]
        fn epochs_copy_exact_samples(n in 5usize..60, pre in 0usize..4, post in 0usize..4,
                                     triggers in proptest::collection::vec(0u64..70, 1..6)) {
            let mut rec = ramp(n);
            for &t in &triggers {
                rec.events.push(Event::new(t, 1));
            }
            let e = extract_epochs(&rec, 1, pre, post, None).unwrap();
            prop_assert_eq!(e.num_trials() + e.dropped.len(), triggers.len());
            for (i, &t) in e.triggers.iter().enumerate() {
                for s in 0..e.window_len() {
                    prop_assert_eq!(e.data[[i, 0, s]], rec.samples[0][t as usize - pre + s]);
                }
            }
        }
    }
}
