//! File formats: event streams (CSV plus JSON sidecar), histograms (CSV) and
//! JSON result files. Every output carries a hash of the configuration that
//! produced it.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::CoincidenceHistogram;
use crate::error::{Error, Result};
use crate::montecarlo::{DetectionRecord, Detector, ExperimentConfig};

pub const EVENT_HEADER: [&str; 2] = ["detector", "timestamp"];
pub const HISTOGRAM_HEADER: [&str; 3] = ["bin_center_ns", "counts", "value"];

/// SHA-256 of the compact JSON encoding of `value`, hex encoded.
///
/// Struct fields serialize in declaration order, so the encoding is stable
/// for a given crate version.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Metadata written next to an event file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSidecar {
    /// Timestamp tick, ps.
    pub timestamp_resolution: f64,
    pub n_records: usize,
    pub config_hash: String,
    pub config: ExperimentConfig,
}

impl EventSidecar {
    pub fn new(config: &ExperimentConfig, n_records: usize) -> Result<Self> {
        Ok(Self {
            timestamp_resolution: config.timestamp_resolution,
            n_records,
            config_hash: config_hash(config)?,
            config: config.clone(),
        })
    }
}

/// `runs/events.csv` → `runs/events.json`.
pub fn sidecar_path(events: &Path) -> PathBuf {
    events.with_extension("json")
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::Format {
            line,
            message: format!("{kind:?}"),
        },
    }
}

pub fn write_events<W: Write>(out: W, records: &[DetectionRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(EVENT_HEADER).map_err(csv_error)?;
    for r in records {
        w.write_record([r.detector.label(), &r.timestamp.to_string()]).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses an event stream. Rejects a missing or wrong header, unknown
/// detectors, malformed timestamps and decreasing timestamps, reporting the
/// 1-based line number.
pub fn read_events<R: Read>(input: R) -> Result<Vec<DetectionRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut records = Vec::new();
    let mut row = csv::StringRecord::new();
    let mut previous = 0u64;
    let mut seen_header = false;
    loop {
        match rdr.read_record(&mut row) {
            Ok(true) => {}
            Ok(false) => break,
            Err(e) => return Err(csv_error(e)),
        }
        let line = row.position().map_or(0, |p| p.line() as usize);
        if !seen_header {
            if row.iter().ne(EVENT_HEADER) {
                return Err(Error::Format {
                    line,
                    message: format!("expected header `{}`", EVENT_HEADER.join(",")),
                });
            }
            seen_header = true;
            continue;
        }
        if row.len() != 2 {
            return Err(Error::Format {
                line,
                message: format!("expected 2 fields, found {}", row.len()),
            });
        }
        let detector: Detector = row[0].parse().map_err(|message| Error::Format { line, message })?;
        let timestamp: u64 = row[1].parse().map_err(|e| Error::Format {
            line,
            message: format!("bad timestamp `{}`: {e}", &row[1]),
        })?;
        if timestamp < previous {
            return Err(Error::Format {
                line,
                message: format!("timestamp {timestamp} is earlier than the previous {previous}"),
            });
        }
        previous = timestamp;
        records.push(DetectionRecord { timestamp, detector });
    }
    if !seen_header {
        return Err(Error::Format {
            line: 1,
            message: "empty event file".into(),
        });
    }
    Ok(records)
}

/// Writes `records` to `path` and the sidecar next to it.
pub fn save_events(path: &Path, records: &[DetectionRecord], config: &ExperimentConfig) -> Result<EventSidecar> {
    write_events(BufWriter::new(File::create(path)?), records)?;
    let sidecar = EventSidecar::new(config, records.len())?;
    write_json(&sidecar_path(path), &sidecar)?;
    Ok(sidecar)
}

/// Reads an event file and its sidecar.
pub fn load_events(path: &Path) -> Result<(Vec<DetectionRecord>, EventSidecar)> {
    let sidecar: EventSidecar = read_json(&sidecar_path(path))?;
    let records = read_events(BufReader::new(File::open(path)?))?;
    if records.len() != sidecar.n_records {
        return Err(Error::Format {
            line: records.len() + 1,
            message: format!("sidecar announces {} records, file holds {}", sidecar.n_records, records.len()),
        });
    }
    Ok((records, sidecar))
}

/// Histogram CSV preceded by a `# config_hash=…` comment line.
pub fn write_histogram<W: Write>(mut out: W, h: &CoincidenceHistogram, config_hash: &str) -> Result<()> {
    writeln!(out, "# config_hash={config_hash}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HISTOGRAM_HEADER).map_err(csv_error)?;
    for i in 0..h.counts.len() {
        w.serialize((h.bin_centers[i], h.counts[i], h.values[i])).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}
