//! Random convolutional kernel features.
//!
//! Two transforms are provided:
//!
//! * [`kernels`]: the original random-kernel transform. Every kernel has a random
//!   length in {7, 9, 11}, normal mean-centred weights, a uniform bias, an
//!   exponentially distributed dilation and random padding. Each kernel yields two
//!   pooled features, the maximum and the proportion of positive values (PPV).
//! * [`minirocket`]: the fixed 84-kernel variant with weights in {-1, 2},
//!   quantile biases fitted on training windows, and PPV pooling only.
//!
//! Multichannel windows are transformed channel by channel and the per-channel
//! blocks are concatenated in channel order.

pub mod kernels;
pub mod minirocket;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

pub use kernels::{apply_kernel, generate_rocket_kernels, kernel_output, KernelResponse, RocketKernel};
pub use minirocket::{fit_minirocket, MiniRocketParams};

/// Windows x features, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    values: Vec<f64>,
    rows: usize,
    per_channel_feature_count: usize,
    channel_count: usize,
}

impl FeatureMatrix {
    pub fn new(
        values: Vec<f64>,
        rows: usize,
        per_channel_feature_count: usize,
        channel_count: usize,
    ) -> Result<Self> {
        let cols = per_channel_feature_count * channel_count;
        if values.len() != rows * cols {
            return Err(Error::validation(format!(
                "feature buffer holds {} values, expected {rows} x {cols}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("non-finite feature value"));
        }
        Ok(Self {
            values,
            rows,
            per_channel_feature_count,
            channel_count,
        })
    }

    /// Single-block matrix (`channel_count == 1`), handy for tests and raw inputs.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::validation("ragged feature rows"));
        }
        Self::new(rows.concat(), rows.len(), cols, 1)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.per_channel_feature_count * self.channel_count
    }

    pub fn per_channel_feature_count(&self) -> usize {
        self.per_channel_feature_count
    }

    pub fn channel_count(&self) -> usize {
        self.channel_count
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.values[i * c..(i + 1) * c]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// Rows selected (and reordered) by `indices`.
    pub fn select_rows(&self, indices: &[usize]) -> FeatureMatrix {
        let mut values = Vec::with_capacity(indices.len() * self.cols());
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            values,
            rows: indices.len(),
            per_channel_feature_count: self.per_channel_feature_count,
            channel_count: self.channel_count,
        }
    }

    /// CSV export; header names columns `c{channel}_f{feature}`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let header: Vec<String> = (0..self.channel_count)
            .flat_map(|c| (0..self.per_channel_feature_count).map(move |f| format!("c{c}_f{f}")))
            .collect();
        w.write_record(&header)?;
        for i in 0..self.rows {
            w.write_record(self.row(i).iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub(crate) fn from_row_blocks(
        blocks: Vec<Vec<f64>>,
        per_channel_feature_count: usize,
        channel_count: usize,
    ) -> Result<Self> {
        let rows = blocks.len();
        Self::new(blocks.concat(), rows, per_channel_feature_count, channel_count)
    }
}

/// A fitted random-kernel transform, either flavour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transform {
    Rocket(RocketTransform),
    Minirocket(MiniRocketParams),
}

/// The random-kernel transform: the same kernel bank is applied to every channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocketTransform {
    pub seed: u64,
    pub input_length: usize,
    pub channel_count: usize,
    pub kernels: Vec<RocketKernel>,
}

impl RocketTransform {
    pub fn fit(training: &Dataset, count: usize, seed: u64) -> Result<Self> {
        let input_length = training
            .window_len()
            .ok_or_else(|| Error::EmptyInput("no training windows".into()))?;
        let channel_count = training.channels().unwrap_or(0);
        Ok(Self {
            seed,
            input_length,
            channel_count,
            kernels: generate_rocket_kernels(count, input_length, seed)?,
        })
    }

    /// Per window, per channel, per kernel: (max, PPV).
    pub fn transform(&self, dataset: &Dataset) -> Result<FeatureMatrix> {
        check_shape(dataset, self.channel_count, None)?;
        let windows = dataset.windows();
        let per_channel = 2 * self.kernels.len();
        let blocks = crate::par::map_range(windows.len(), |i| {
            let mut row = Vec::with_capacity(per_channel * self.channel_count);
            for channel in &windows[i].data {
                for k in &self.kernels {
                    let r = apply_kernel(channel, k);
                    row.push(r.max);
                    row.push(r.ppv);
                }
            }
            row
        });
        FeatureMatrix::from_row_blocks(blocks, per_channel, self.channel_count)
    }
}

pub(crate) fn check_shape(dataset: &Dataset, channels: usize, length: Option<usize>) -> Result<()> {
    for w in dataset.windows() {
        if w.channels() != channels {
            return Err(Error::validation(format!(
                "window has {} channels, transform was fitted on {channels}",
                w.channels()
            )));
        }
        if let Some(len) = length {
            if w.len() != len {
                return Err(Error::validation(format!(
                    "window has length {}, transform was fitted on {len}",
                    w.len()
                )));
            }
        }
    }
    Ok(())
}

const TRANSFORM_FORMAT: &str = "calfrocket-transform/1";

#[derive(Serialize, Deserialize)]
struct TransformFile {
    format: String,
    transform: Transform,
}

impl Transform {
    pub fn transform(&self, dataset: &Dataset) -> Result<FeatureMatrix> {
        match self {
            Transform::Rocket(t) => t.transform(dataset),
            Transform::Minirocket(p) => p.transform(dataset),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&TransformFile {
            format: TRANSFORM_FORMAT.into(),
            transform: self.clone(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: TransformFile = serde_json::from_str(s)?;
        if file.format != TRANSFORM_FORMAT {
            return Err(Error::Format(format!(
                "transform file tagged '{}', expected '{TRANSFORM_FORMAT}'",
                file.format
            )));
        }
        Ok(file.transform)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Behaviour, LabeledWindow};

    fn dataset(n: usize, channels: usize, len: usize) -> Dataset {
        let windows = (0..n)
            .map(|i| {
                let data = (0..channels)
                    .map(|c| (0..len).map(|t| ((t * (i + 1) + c) as f64 * 0.37).sin()).collect())
                    .collect();
                LabeledWindow::new(format!("calf{}", i % 3), format!("s{i}"), Behaviour::Other, data)
                    .unwrap()
            })
            .collect();
        Dataset::from_windows(windows)
    }

    #[test]
    fn rocket_column_count() {
        let ds = dataset(2, 1, 75);
        let t = RocketTransform::fit(&ds, 10_000, 7).unwrap();
        let fm = t.transform(&ds).unwrap();
        assert_eq!(fm.cols(), 20_000);
        assert_eq!(fm.rows(), 2);
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let t = RocketTransform::fit(&dataset(2, 3, 40), 10, 1).unwrap();
        assert!(t.transform(&dataset(2, 2, 40)).is_err());
    }

    #[test]
    fn transform_file_roundtrip() {
        let ds = dataset(3, 2, 40);
        let t = Transform::Minirocket(fit_minirocket(&ds, 168, 3).unwrap());
        let back = Transform::from_json(&t.to_json().unwrap()).unwrap();
        assert_eq!(back, t);
        let bad = t.to_json().unwrap().replace(TRANSFORM_FORMAT, "other/9");
        assert!(matches!(Transform::from_json(&bad), Err(Error::Format(_))));
    }

    #[test]
    fn csv_export_has_header() {
        let fm = FeatureMatrix::new(vec![0.5, 1.0, 0.25, 0.0], 2, 1, 2).unwrap();
        let mut buf = Vec::new();
        fm.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "c0_f0,c1_f0\n0.5,1\n0.25,0\n");
    }
}
