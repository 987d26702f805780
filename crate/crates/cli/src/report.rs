//! Text and JSON renderings for the subcommands.

use std::fmt::Write as _;
use std::path::Path;

use biosig::formats::SignalRecord;
use biosig::preprocess::{EpochSet, QualityReport};
use serde_json::{json, Value};

fn start_text(record: &SignalRecord) -> Option<String> {
    record.header.start.map(|t| t.format("%Y-%m-%dT%H:%M:%S").to_string())
}

pub fn info_json(record: &SignalRecord, quality: &QualityReport) -> Value {
    let h = &record.header;
    let channels: Vec<Value> = h
        .channels
        .iter()
        .zip(&quality.channels)
        .enumerate()
        .map(|(i, (c, q))| {
            json!({
                "index": i + 1,
                "label": c.label,
                "transducer": c.transducer,
                "physical_dim": c.physical_dim,
                "phys_min": c.phys_min,
                "phys_max": c.phys_max,
                "dig_min": c.dig_min,
                "dig_max": c.dig_max,
                "prefilter": c.prefilter,
                "samples_per_record": c.samples_per_record,
                "rate": c.rate(h.record_duration),
                "quality": {
                    "min": q.min,
                    "max": q.max,
                    "nan_ratio": q.nan_ratio,
                    "saturation_ratio": q.saturation_ratio,
                    "valid_count": q.valid_count,
                    "total": q.total,
                },
            })
        })
        .collect();
    json!({
        "format": h.format.base().map_or("Unknown", |b| b.name()),
        "compressed": h.format.is_gzip(),
        "patient_id": h.patient_id,
        "recording_id": h.recording_id,
        "start": start_text(record),
        "record_duration": h.record_duration,
        "num_records": h.num_records,
        "duration": h.total_duration(),
        "num_events": record.events.len(),
        "channels": channels,
    })
}

fn num(v: f64) -> String {
    if v.is_nan() {
        "-".into()
    } else {
        format!("{v:.4}")
    }
}

pub fn info_text(record: &SignalRecord, quality: &QualityReport) -> String {
    let h = &record.header;
    let mut s = String::new();
    let _ = writeln!(s, "format      {}", h.format);
    let _ = writeln!(s, "patient     {}", h.patient_id);
    let _ = writeln!(s, "recording   {}", h.recording_id);
    let _ = writeln!(s, "start       {}", start_text(record).as_deref().unwrap_or("-"));
    let _ = writeln!(s, "records     {} x {} s", h.num_records, h.record_duration);
    let _ = writeln!(s, "duration    {} s", h.total_duration());
    let _ = writeln!(s, "events      {}", record.events.len());
    let _ = writeln!(s, "channels    {}", h.channels.len());
    let _ = writeln!(
        s,
        "{:>3}  {:<16} {:>8} {:>8} {:>12} {:>12} {:>7} {:>7}",
        "#", "label", "rate", "samples", "min", "max", "nan%", "sat%"
    );
    for (i, (c, q)) in h.channels.iter().zip(&quality.channels).enumerate() {
        let _ = writeln!(
            s,
            "{:>3}  {:<16} {:>8} {:>8} {:>12} {:>12} {:>7.2} {:>7.2}",
            i + 1,
            c.label,
            c.rate(h.record_duration),
            q.total,
            num(q.min),
            num(q.max),
            100.0 * q.nan_ratio,
            100.0 * q.saturation_ratio
        );
    }
    s
}

/// One row per trial and channel: `trial,trigger,label,channel` followed by
/// the window samples, headed by their offset from the trigger.
pub fn write_epochs_csv(epochs: &EpochSet, record: &SignalRecord, out: &Path) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(out)?;
    let mut header: Vec<String> = ["trial", "trigger", "label", "channel"].map(String::from).to_vec();
    let pre = epochs.pre as i64;
    header.extend((0..epochs.window_len() as i64).map(|k| (k - pre).to_string()));
    w.write_record(&header)?;
    for (i, &t) in epochs.triggers.iter().enumerate() {
        for (c, spec) in record.header.channels.iter().enumerate() {
            let mut row = vec![
                (i + 1).to_string(),
                t.to_string(),
                epochs.labels[i].clone().unwrap_or_default(),
                spec.label.clone(),
            ];
            row.extend((0..epochs.window_len()).map(|k| epochs.data[[i, c, k]]).map(|v| {
                if v.is_nan() {
                    "NaN".to_owned()
                } else {
                    v.to_string()
                }
            }));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn epochs_json(epochs: &EpochSet, out: &Path) -> Value {
    json!({
        "output": out.display().to_string(),
        "trials": epochs.num_trials(),
        "channels": epochs.data.shape()[1],
        "window": epochs.window_len(),
        "pre": epochs.pre,
        "post": epochs.post,
        "triggers": epochs.triggers,
        "labels": epochs.labels,
        "dropped": epochs.dropped.iter().map(|d| d.position).collect::<Vec<_>>(),
    })
}

pub fn artifacts_json(marked: &SignalRecord, counts: &[usize], out: &Path) -> Value {
    let channels: Vec<Value> = marked
        .header
        .channels
        .iter()
        .zip(counts)
        .map(|(c, n)| json!({ "label": c.label, "marked": n }))
        .collect();
    json!({
        "output": out.display().to_string(),
        "total_marked": counts.iter().sum::<usize>(),
        "channels": channels,
    })
}
