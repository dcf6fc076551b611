//! Domain data model: raw accelerometer records, labelled segments, fixed-length
//! windows and the calf-indexed [`Dataset`] container.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Behaviour classes of the calf ethogram, remapped to six classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Behaviour {
    DrinkingMilk,
    Grooming,
    Lying,
    Running,
    Walking,
    Other,
}

impl Behaviour {
    pub const ALL: [Behaviour; 6] = [
        Behaviour::DrinkingMilk,
        Behaviour::Grooming,
        Behaviour::Lying,
        Behaviour::Running,
        Behaviour::Walking,
        Behaviour::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Behaviour::DrinkingMilk => "drinking_milk",
            Behaviour::Grooming => "grooming",
            Behaviour::Lying => "lying",
            Behaviour::Running => "running",
            Behaviour::Walking => "walking",
            Behaviour::Other => "other",
        }
    }
}

impl fmt::Display for Behaviour {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Behaviour {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace([' ', '-'], "_");
        Behaviour::ALL
            .into_iter()
            .find(|b| b.as_str() == norm)
            .ok_or_else(|| Error::validation(format!("unknown behaviour label '{s}'")))
    }
}

/// One accelerometer sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccelRecord {
    pub calf_id: String,
    /// Seconds since epoch.
    pub timestamp: f64,
    /// accX, accY, accZ (in g) followed by any extra channels.
    pub channels: Vec<f64>,
}

/// A continuous annotated observation of one behaviour on one calf.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSegment {
    pub calf_id: String,
    pub segment_id: String,
    pub label: Behaviour,
    pub samples: Vec<AccelRecord>,
}

impl LabeledSegment {
    /// Builds a segment, checking calf consistency, channel arity and strictly
    /// increasing timestamps.
    pub fn new(
        calf_id: impl Into<String>,
        segment_id: impl Into<String>,
        label: Behaviour,
        samples: Vec<AccelRecord>,
    ) -> Result<Self> {
        let calf_id = calf_id.into();
        let segment_id = segment_id.into();
        if let Some(first) = samples.first() {
            let arity = first.channels.len();
            for pair in samples.windows(2) {
                if pair[1].timestamp <= pair[0].timestamp {
                    return Err(Error::validation(format!(
                        "segment {segment_id}: timestamps not strictly increasing at t={}",
                        pair[1].timestamp
                    )));
                }
            }
            for s in &samples {
                if s.calf_id != calf_id {
                    return Err(Error::validation(format!(
                        "segment {segment_id}: sample from calf {} inside segment of calf {calf_id}",
                        s.calf_id
                    )));
                }
                if s.channels.len() != arity {
                    return Err(Error::validation(format!(
                        "segment {segment_id}: channel arity changes from {arity} to {}",
                        s.channels.len()
                    )));
                }
            }
        }
        Ok(Self {
            calf_id,
            segment_id,
            label,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Splits the segment wherever consecutive timestamps are more than
    /// `max_gap_periods` sample periods apart. Pieces keep the segment id.
    pub fn split_on_gaps(&self, sample_rate_hz: f64, max_gap_periods: f64) -> Vec<LabeledSegment> {
        let limit = max_gap_periods / sample_rate_hz;
        let mut pieces = Vec::new();
        let mut current: Vec<AccelRecord> = Vec::new();
        for s in &self.samples {
            if let Some(prev) = current.last() {
                if s.timestamp - prev.timestamp > limit {
                    pieces.push(std::mem::take(&mut current));
                }
            }
            current.push(s.clone());
        }
        if !current.is_empty() {
            pieces.push(current);
        }
        pieces
            .into_iter()
            .map(|samples| LabeledSegment {
                calf_id: self.calf_id.clone(),
                segment_id: self.segment_id.clone(),
                label: self.label,
                samples,
            })
            .collect()
    }
}

/// A fixed-length multichannel snippet (channels x length).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledWindow {
    pub calf_id: String,
    pub segment_id: String,
    pub label: Behaviour,
    pub data: Vec<Vec<f64>>,
}

impl LabeledWindow {
    pub fn new(
        calf_id: impl Into<String>,
        segment_id: impl Into<String>,
        label: Behaviour,
        data: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let len = data.first().map_or(0, Vec::len);
        if len == 0 {
            return Err(Error::EmptyInput("window has no samples".into()));
        }
        if data.iter().any(|c| c.len() != len) {
            return Err(Error::validation("window channels differ in length"));
        }
        Ok(Self {
            calf_id: calf_id.into(),
            segment_id: segment_id.into(),
            label,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.data.len()
    }

    pub fn len(&self) -> usize {
        self.data.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn ensure_finite(&self) -> Result<()> {
        if self.data.iter().flatten().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::validation(format!(
                "non-finite value in window of segment {}",
                self.segment_id
            )))
        }
    }

    pub(crate) fn with_data(&self, data: Vec<Vec<f64>>) -> Self {
        Self {
            calf_id: self.calf_id.clone(),
            segment_id: self.segment_id.clone(),
            label: self.label,
            data,
        }
    }
}

/// Per-segment bookkeeping kept alongside the windows (used for the
/// segment-count and duration stratification bases and for summaries).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentInfo {
    pub segment_id: String,
    pub calf_id: String,
    pub label: Behaviour,
    pub duration_seconds: f64,
}

/// Windows plus a calf-level index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "DatasetRepr", into = "DatasetRepr")]
pub struct Dataset {
    windows: Vec<LabeledWindow>,
    segments: Vec<SegmentInfo>,
    label_set: Vec<Behaviour>,
    calf_index: BTreeMap<String, Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct DatasetRepr {
    format: String,
    windows: Vec<LabeledWindow>,
    segments: Vec<SegmentInfo>,
}

const DATASET_FORMAT: &str = "calfrocket-dataset/1";

impl From<DatasetRepr> for Dataset {
    fn from(r: DatasetRepr) -> Self {
        Dataset::new(r.windows, r.segments)
    }
}

impl From<Dataset> for DatasetRepr {
    fn from(d: Dataset) -> Self {
        DatasetRepr {
            format: DATASET_FORMAT.into(),
            windows: d.windows,
            segments: d.segments,
        }
    }
}

impl Dataset {
    pub fn new(windows: Vec<LabeledWindow>, segments: Vec<SegmentInfo>) -> Self {
        let mut calf_index: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut labels = BTreeSet::new();
        for (i, w) in windows.iter().enumerate() {
            calf_index.entry(w.calf_id.clone()).or_default().push(i);
            labels.insert(w.label);
        }
        Self {
            windows,
            segments,
            label_set: labels.into_iter().collect(),
            calf_index,
        }
    }

    /// Builds a dataset from windows only; segment info is reconstructed from
    /// the windows (durations unknown, reported as 0).
    pub fn from_windows(windows: Vec<LabeledWindow>) -> Self {
        let mut seen = BTreeSet::new();
        let segments = windows
            .iter()
            .filter(|w| seen.insert(w.segment_id.clone()))
            .map(|w| SegmentInfo {
                segment_id: w.segment_id.clone(),
                calf_id: w.calf_id.clone(),
                label: w.label,
                duration_seconds: 0.0,
            })
            .collect();
        Self::new(windows, segments)
    }

    pub fn windows(&self) -> &[LabeledWindow] {
        &self.windows
    }

    pub fn segments(&self) -> &[SegmentInfo] {
        &self.segments
    }

    /// Occurring labels in canonical ethogram order.
    pub fn label_set(&self) -> &[Behaviour] {
        &self.label_set
    }

    pub fn calf_index(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.calf_index
    }

    /// Calf ids in sorted order.
    pub fn calves(&self) -> Vec<String> {
        self.calf_index.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn channels(&self) -> Option<usize> {
        self.windows.first().map(LabeledWindow::channels)
    }

    pub fn window_len(&self) -> Option<usize> {
        self.windows.first().map(LabeledWindow::len)
    }

    /// Class index of every window with respect to `label_order`.
    /// Stable window identifiers `segment_id#k`, k counting windows of a
    /// segment in dataset order.
    pub fn window_ids(&self) -> Vec<String> {
        let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
        self.windows
            .iter()
            .map(|w| {
                let k = seen.entry(w.segment_id.as_str()).or_insert(0);
                let id = format!("{}#{}", w.segment_id, k);
                *k += 1;
                id
            })
            .collect()
    }

    pub fn label_indices(&self, label_order: &[Behaviour]) -> Result<Vec<usize>> {
        self.windows
            .iter()
            .map(|w| {
                label_order
                    .iter()
                    .position(|l| *l == w.label)
                    .ok_or_else(|| Error::validation(format!("label {} not in label order", w.label)))
            })
            .collect()
    }

    /// Sorted window indices belonging to any of `calves`.
    pub fn indices_of<'a>(&self, calves: impl IntoIterator<Item = &'a String>) -> Vec<usize> {
        let mut idx: Vec<usize> = calves
            .into_iter()
            .filter_map(|c| self.calf_index.get(c))
            .flatten()
            .copied()
            .collect();
        idx.sort_unstable();
        idx
    }

    /// Dataset restricted to the given windows (in the given order).
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let windows: Vec<LabeledWindow> = indices.iter().map(|&i| self.windows[i].clone()).collect();
        let keep: BTreeSet<&str> = windows.iter().map(|w| w.segment_id.as_str()).collect();
        let segments = self
            .segments
            .iter()
            .filter(|s| keep.contains(s.segment_id.as_str()))
            .cloned()
            .collect();
        Dataset::new(windows, segments)
    }

    /// Restriction to a set of calves.
    pub fn for_calves<'a>(&self, calves: impl IntoIterator<Item = &'a String>) -> Dataset {
        self.subset(&self.indices_of(calves))
    }

    /// Replaces every window through `f`, keeping segment info.
    pub fn map_windows<F>(&self, f: F) -> Result<Dataset>
    where
        F: Fn(&LabeledWindow) -> Result<LabeledWindow>,
    {
        let windows = self.windows.iter().map(f).collect::<Result<Vec<_>>>()?;
        Ok(Dataset::new(windows, self.segments.clone()))
    }

    pub fn to_json_bytes(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec(self)?)
    }

    pub fn from_json_bytes(bytes: &[u8]) -> Result<Dataset> {
        let repr: DatasetRepr = serde_json::from_slice(bytes)?;
        if repr.format != DATASET_FORMAT {
            return Err(Error::Format(format!(
                "dataset archive tagged '{}', expected '{DATASET_FORMAT}'",
                repr.format
            )));
        }
        Ok(repr.into())
    }
}

/// Cuts a segment into consecutive non-overlapping windows of
/// `round(window_seconds * sample_rate_hz)` samples, dropping the trailing
/// remainder. The returned windows are channels x length.
pub fn window_segment(
    segment: &LabeledSegment,
    window_seconds: f64,
    sample_rate_hz: f64,
) -> Result<Vec<LabeledWindow>> {
    if !(window_seconds > 0.0) || !(sample_rate_hz > 0.0) {
        return Err(Error::validation(
            "window length and sample rate must be positive",
        ));
    }
    if segment.is_empty() {
        return Err(Error::EmptyInput(format!(
            "segment {} has no samples",
            segment.segment_id
        )));
    }
    let width = (window_seconds * sample_rate_hz).round() as usize;
    if width == 0 {
        return Err(Error::validation("window rounds to zero samples"));
    }
    let arity = segment.samples[0].channels.len();
    Ok(segment
        .samples
        .chunks_exact(width)
        .map(|chunk| {
            let data = (0..arity)
                .map(|c| chunk.iter().map(|s| s.channels[c]).collect())
                .collect();
            LabeledWindow {
                calf_id: segment.calf_id.clone(),
                segment_id: segment.segment_id.clone(),
                label: segment.label,
                data,
            }
        })
        .collect())
}

/// A derived accelerometer series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    AccX,
    AccY,
    AccZ,
    /// sqrt(x^2 + y^2 + z^2)
    Magnitude,
    /// Overall dynamic body acceleration: sum of absolute dynamic components.
    Odba,
    /// Vectorial dynamic body acceleration: norm of the dynamic components.
    Vedba,
    /// atan2(-x, sqrt(y^2 + z^2)), radians.
    Pitch,
    /// atan2(y, z), radians.
    Roll,
}

/// Channel derivation layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelConfig {
    pub channels: Vec<ChannelKind>,
    /// Width (samples) of the centred moving average used as the static
    /// component for ODBA/VeDBA.
    pub static_window: usize,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            channels: vec![
                ChannelKind::AccX,
                ChannelKind::AccY,
                ChannelKind::AccZ,
                ChannelKind::Magnitude,
                ChannelKind::Odba,
                ChannelKind::Vedba,
                ChannelKind::Pitch,
                ChannelKind::Roll,
            ],
            static_window: 25,
        }
    }
}

fn moving_average(series: &[f64], width: usize) -> Vec<f64> {
    let half = width / 2;
    let n = series.len();
    let mut prefix = vec![0.0; n + 1];
    for (i, v) in series.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v;
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// Expands a raw (x, y, z) window into the configured channel layout.
///
/// Pitch and roll of an all-zero sample are 0 (`atan2(0, 0) == 0`).
pub fn derive_channels(window: &LabeledWindow, config: &ChannelConfig) -> Result<LabeledWindow> {
    if window.channels() != 3 {
        return Err(Error::validation(format!(
            "channel derivation needs exactly 3 axes, got {}",
            window.channels()
        )));
    }
    window.ensure_finite()?;
    let (x, y, z) = (&window.data[0], &window.data[1], &window.data[2]);
    let needs_dynamic = config
        .channels
        .iter()
        .any(|c| matches!(c, ChannelKind::Odba | ChannelKind::Vedba));
    let dynamic = if needs_dynamic {
        let w = config.static_window.max(1);
        let d = |s: &Vec<f64>| -> Vec<f64> {
            s.iter().zip(moving_average(s, w)).map(|(v, m)| v - m).collect()
        };
        Some((d(x), d(y), d(z)))
    } else {
        None
    };
    let n = window.len();
    let data = config
        .channels
        .iter()
        .map(|kind| match kind {
            ChannelKind::AccX => x.clone(),
            ChannelKind::AccY => y.clone(),
            ChannelKind::AccZ => z.clone(),
            ChannelKind::Magnitude => (0..n)
                .map(|i| (x[i] * x[i] + y[i] * y[i] + z[i] * z[i]).sqrt())
                .collect(),
            ChannelKind::Odba => {
                let (dx, dy, dz) = dynamic.as_ref().unwrap();
                (0..n).map(|i| dx[i].abs() + dy[i].abs() + dz[i].abs()).collect()
            }
            ChannelKind::Vedba => {
                let (dx, dy, dz) = dynamic.as_ref().unwrap();
                (0..n)
                    .map(|i| (dx[i] * dx[i] + dy[i] * dy[i] + dz[i] * dz[i]).sqrt())
                    .collect()
            }
            ChannelKind::Pitch => (0..n)
                .map(|i| (-x[i]).atan2((y[i] * y[i] + z[i] * z[i]).sqrt()))
                .collect(),
            ChannelKind::Roll => (0..n).map(|i| y[i].atan2(z[i])).collect(),
        })
        .collect();
    Ok(window.with_data(data))
}
