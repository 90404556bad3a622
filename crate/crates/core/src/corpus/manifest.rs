//! JSONL manifest: one clip record per line.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::{weaken, ClipRecord};

/// Write records as one compact JSON object per line.
pub fn write_manifest(path: &Path, records: &[ClipRecord]) -> Result<()> {
    let mut out = std::fs::File::create(path)?;
    for record in records {
        let line = serde_json::to_string(record)?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Read and validate a JSONL manifest.
///
/// Checks per record: positive duration, well-formed events (onset < offset,
/// within the clip, class known), and weak labels consistent with events when
/// events are present. Line numbers are included in error messages.
pub fn read_manifest(path: &Path) -> Result<Vec<ClipRecord>> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
    let reader = BufReader::new(file);

    let mut records = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ClipRecord = serde_json::from_str(&line).map_err(|e| {
            Error::Manifest(format!("{} line {}: {e}", path.display(), lineno + 1))
        })?;
        validate_record(&record)
            .map_err(|e| Error::Manifest(format!("{} line {}: {e}", path.display(), lineno + 1)))?;
        records.push(record);
    }
    if records.is_empty() {
        return Err(Error::Manifest(format!("{}: manifest is empty", path.display())));
    }
    Ok(records)
}

fn validate_record(record: &ClipRecord) -> std::result::Result<(), String> {
    if record.clip_id.is_empty() {
        return Err("clip_id is empty".into());
    }
    if !(record.duration_s > 0.0) {
        return Err(format!("clip {}: duration_s must be positive", record.clip_id));
    }
    if let Some(events) = &record.events {
        for ev in events {
            if ev.onset_s < 0.0 || ev.offset_s <= ev.onset_s || ev.offset_s > record.duration_s + 1e-9
            {
                return Err(format!(
                    "clip {}: event ({}, {:.3}, {:.3}) outside [0, {:.3}]",
                    record.clip_id, ev.class_id, ev.onset_s, ev.offset_s, record.duration_s
                ));
            }
        }
        let derived = weaken(events);
        if derived != record.weak_labels {
            return Err(format!(
                "clip {}: weak_labels {:?} disagree with event classes {:?}",
                record.clip_id, record.weak_labels, derived
            ));
        }
    }
    Ok(())
}
