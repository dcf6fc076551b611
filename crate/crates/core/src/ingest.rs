//! CSV ingestion: records to segments to preprocessed windows.
//!
//! Input rows follow the header `calf_id,segment_id,timestamp,accX,accY,accZ,label`.
//! Rows are regrouped by `segment_id` whatever their order in the file.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{
    derive_channels, window_segment, AccelRecord, Behaviour, ChannelConfig, Dataset, LabeledSegment,
    SegmentInfo,
};
use crate::error::{Error, Result};
use crate::preprocess::{preprocess_window, PreprocessConfig};

pub const CSV_HEADER: [&str; 7] = ["calf_id", "segment_id", "timestamp", "accX", "accY", "accZ", "label"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    pub sample_rate_hz: f64,
    pub window_seconds: f64,
    /// Gaps longer than this many sample periods split a segment.
    pub max_gap_periods: f64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: 25.0,
            window_seconds: 3.0,
            max_gap_periods: 2.0,
        }
    }
}

#[derive(Debug, Deserialize)]
struct Row {
    calf_id: String,
    segment_id: String,
    timestamp: f64,
    #[serde(rename = "accX")]
    acc_x: f64,
    #[serde(rename = "accY")]
    acc_y: f64,
    #[serde(rename = "accZ")]
    acc_z: f64,
    label: String,
}

/// Reads labelled segments from CSV. `origin` is only used in error messages.
pub fn read_segments<R: Read>(reader: R, origin: &str) -> Result<Vec<LabeledSegment>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let schema = |line: u64, message: String| Error::Schema {
        path: origin.to_string(),
        line,
        message,
    };
    let header = rdr.headers().map_err(|e| schema(1, e.to_string()))?.clone();
    if header.is_empty() {
        return Err(Error::EmptyInput(format!("{origin} is empty")));
    }
    if header.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(schema(
            1,
            format!("expected header '{}', found '{}'", CSV_HEADER.join(","), header.iter().collect::<Vec<_>>().join(",")),
        ));
    }

    struct Pending {
        calf_id: String,
        label: Behaviour,
        samples: Vec<AccelRecord>,
    }
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Pending> = BTreeMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            schema(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let row: Row = record
            .deserialize(Some(&header))
            .map_err(|e| schema(line, e.to_string()))?;
        let label: Behaviour = row.label.parse().map_err(|e: Error| schema(line, e.to_string()))?;
        let values = [row.timestamp, row.acc_x, row.acc_y, row.acc_z];
        if values.iter().any(|v| !v.is_finite()) {
            return Err(schema(line, "non-finite numeric value".into()));
        }
        let sample = AccelRecord {
            calf_id: row.calf_id.clone(),
            timestamp: row.timestamp,
            channels: vec![row.acc_x, row.acc_y, row.acc_z],
        };
        match groups.get_mut(&row.segment_id) {
            Some(g) => {
                if g.calf_id != row.calf_id {
                    return Err(schema(
                        line,
                        format!("segment {} changes calf from {} to {}", row.segment_id, g.calf_id, row.calf_id),
                    ));
                }
                if g.label != label {
                    return Err(schema(
                        line,
                        format!("segment {} changes label from {} to {label}", row.segment_id, g.label),
                    ));
                }
                g.samples.push(sample);
            }
            None => {
                order.push(row.segment_id.clone());
                groups.insert(
                    row.segment_id,
                    Pending {
                        calf_id: row.calf_id,
                        label,
                        samples: vec![sample],
                    },
                );
            }
        }
    }
    if order.is_empty() {
        return Err(Error::EmptyInput(format!("{origin} has no data rows")));
    }
    order
        .into_iter()
        .map(|id| {
            let mut g = groups.remove(&id).unwrap();
            g.samples.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
            LabeledSegment::new(g.calf_id, id, g.label, g.samples)
        })
        .collect()
}

/// Segments to preprocessed windows: gap splitting, windowing, channel
/// derivation, resampling and standardisation.
pub fn build_dataset(
    segments: &[LabeledSegment],
    ingest: &IngestConfig,
    channels: &ChannelConfig,
    preprocess: &PreprocessConfig,
) -> Result<Dataset> {
    preprocess.validate()?;
    let mut windows = Vec::new();
    let mut infos = Vec::with_capacity(segments.len());
    for seg in segments {
        if seg.is_empty() {
            continue;
        }
        infos.push(SegmentInfo {
            segment_id: seg.segment_id.clone(),
            calf_id: seg.calf_id.clone(),
            label: seg.label,
            duration_seconds: seg.len() as f64 / ingest.sample_rate_hz,
        });
        for piece in seg.split_on_gaps(ingest.sample_rate_hz, ingest.max_gap_periods) {
            for raw in window_segment(&piece, ingest.window_seconds, ingest.sample_rate_hz)? {
                let derived = derive_channels(&raw, channels)?;
                windows.push(preprocess_window(&derived, preprocess)?);
            }
        }
    }
    Ok(Dataset::new(windows, infos))
}

/// Reads a CSV file and builds the windowed dataset.
pub fn ingest_csv(
    path: &Path,
    ingest: &IngestConfig,
    channels: &ChannelConfig,
    preprocess: &PreprocessConfig,
) -> Result<(Dataset, Summary)> {
    let file = std::fs::File::open(path)?;
    let segments = read_segments(file, &path.display().to_string())?;
    let dataset = build_dataset(&segments, ingest, channels, preprocess)?;
    let summary = Summary::of(&dataset);
    Ok((dataset, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub label: Behaviour,
    pub minutes: f64,
    pub segments: usize,
    pub calves: usize,
    pub windows: usize,
}

/// Per-class totals: duration, segments, calves, windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
}

impl Summary {
    pub fn of(dataset: &Dataset) -> Self {
        let rows = Behaviour::ALL
            .iter()
            .filter_map(|&label| {
                let segs: Vec<&SegmentInfo> = dataset.segments().iter().filter(|s| s.label == label).collect();
                let windows = dataset.windows().iter().filter(|w| w.label == label).count();
                if segs.is_empty() && windows == 0 {
                    return None;
                }
                let calves: BTreeSet<&str> = segs.iter().map(|s| s.calf_id.as_str()).collect();
                Some(SummaryRow {
                    label,
                    minutes: segs.iter().map(|s| s.duration_seconds).sum::<f64>() / 60.0,
                    segments: segs.len(),
                    calves: calves.len(),
                    windows,
                })
            })
            .collect();
        Self { rows }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("behaviour,minutes,segments,calves,windows\n");
        for r in &self.rows {
            s.push_str(&format!("{},{:.2},{},{},{}\n", r.label, r.minutes, r.segments, r.calves, r.windows));
        }
        s
    }

    pub fn text(&self) -> String {
        self.rows
            .iter()
            .map(|r| {
                format!(
                    "{}, {:.2} min, {} segments, {} calves\n",
                    r.label, r.minutes, r.segments, r.calves
                )
            })
            .collect()
    }
}
