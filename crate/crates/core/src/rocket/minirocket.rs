//! The deterministic 84-kernel transform.
//!
//! Kernels have length 9; six taps weigh -1 and three taps weigh +2, one kernel
//! per choice of the three +2 positions (C(9, 3) = 84). Dilations are spread
//! exponentially over `[1, (input_length - 1) / 8]`, the per-channel feature
//! budget is divided over (dilation, kernel) pairs, and each feature gets a bias
//! taken from a quantile of the convolution output of a randomly drawn training
//! window. Quantile levels follow the golden-ratio low-discrepancy sequence.
//!
//! Feature columns are ordered channel, dilation, kernel, quantile.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_shape, FeatureMatrix};
use crate::data::Dataset;
use crate::error::{Error, Result};

pub const KERNEL_LENGTH: usize = 9;
pub const NUM_KERNELS: usize = 84;
pub const MAX_DILATIONS_PER_KERNEL: usize = 32;

/// The 84 triples of +2 positions, in lexicographic order.
pub fn kernel_indices() -> Vec<[usize; 3]> {
    let mut out = Vec::with_capacity(NUM_KERNELS);
    for a in 0..KERNEL_LENGTH {
        for b in a + 1..KERNEL_LENGTH {
            for c in b + 1..KERNEL_LENGTH {
                out.push([a, b, c]);
            }
        }
    }
    out
}

/// Weight vector of the kernel with +2 taps at `positions`.
pub fn kernel_weights(positions: [usize; 3]) -> [f64; KERNEL_LENGTH] {
    let mut w = [-1.0; KERNEL_LENGTH];
    for p in positions {
        w[p] = 2.0;
    }
    w
}

/// Effective per-channel feature count: the largest multiple of 84 not above
/// `requested`.
pub fn effective_feature_count(requested: usize) -> usize {
    NUM_KERNELS * (requested / NUM_KERNELS)
}

/// Dilations and the number of features (per kernel) assigned to each.
pub fn fit_dilations(input_length: usize, features_per_channel: usize) -> (Vec<usize>, Vec<usize>) {
    let per_kernel = features_per_channel / NUM_KERNELS;
    let true_max = per_kernel.min(MAX_DILATIONS_PER_KERNEL);
    let multiplier = per_kernel as f64 / true_max as f64;
    let max_exponent = ((input_length - 1) as f64 / (KERNEL_LENGTH - 1) as f64).log2();

    let mut dilations: Vec<usize> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    for i in 0..true_max {
        let exponent = if true_max == 1 {
            0.0
        } else {
            max_exponent * i as f64 / (true_max - 1) as f64
        };
        let d = 2f64.powf(exponent).floor() as usize;
        match dilations.last() {
            Some(&last) if last == d => *counts.last_mut().unwrap() += 1,
            _ => {
                dilations.push(d);
                counts.push(1);
            }
        }
    }
    let mut counts: Vec<usize> = counts
        .into_iter()
        .map(|c| (c as f64 * multiplier) as usize)
        .collect();
    let mut remainder = per_kernel - counts.iter().sum::<usize>();
    let mut i = 0;
    while remainder > 0 {
        counts[i] += 1;
        remainder -= 1;
        i = (i + 1) % counts.len();
    }
    (dilations, counts)
}

/// Golden-ratio quantile levels `(k * phi) mod 1` for k = 1..=n.
pub fn quantile_levels(n: usize) -> Vec<f64> {
    let phi = (5f64.sqrt() + 1.0) / 2.0;
    (1..=n).map(|k| (k as f64 * phi) % 1.0).collect()
}

/// Linear-interpolation quantile of an already sorted slice.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// The nine shifted copies of a series for one dilation plus their sum; the
/// output of any of the 84 kernels is `3 * (s[a] + s[b] + s[c]) - sum`.
struct ShiftedSeries {
    shifts: Vec<Vec<f64>>,
    total: Vec<f64>,
}

impl ShiftedSeries {
    fn new(series: &[f64], dilation: usize) -> Self {
        let n = series.len() as isize;
        let half = (KERNEL_LENGTH / 2) as isize;
        let shifts: Vec<Vec<f64>> = (0..KERNEL_LENGTH as isize)
            .map(|j| {
                let offset = (j - half) * dilation as isize;
                (0..n)
                    .map(|t| {
                        let idx = t + offset;
                        if idx >= 0 && idx < n {
                            series[idx as usize]
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        let total = (0..series.len())
            .map(|t| shifts.iter().map(|s| s[t]).sum())
            .collect();
        Self { shifts, total }
    }

    fn convolve(&self, positions: [usize; 3], out: &mut Vec<f64>) {
        let [a, b, c] = positions;
        out.clear();
        out.extend(
            self.total
                .iter()
                .enumerate()
                .map(|(t, s)| 3.0 * (self.shifts[a][t] + self.shifts[b][t] + self.shifts[c][t]) - s),
        );
    }
}

/// Fitted parameters of the 84-kernel transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiniRocketParams {
    pub seed: u64,
    pub input_length: usize,
    pub channel_count: usize,
    pub features_per_channel: usize,
    pub kernel_indices: Vec<[usize; 3]>,
    pub dilations: Vec<usize>,
    /// Features per (kernel, dilation) pair, aligned with `dilations`.
    pub features_per_dilation: Vec<usize>,
    /// One bias per feature, `channel_count` rows of `features_per_channel`.
    pub biases: Vec<Vec<f64>>,
}

/// Fits dilations and quantile biases on the training windows.
///
/// `requested` features per channel are rounded down to a multiple of 84.
pub fn fit_minirocket(training: &Dataset, requested: usize, seed: u64) -> Result<MiniRocketParams> {
    if training.is_empty() {
        return Err(Error::validation("cannot fit on an empty training set"));
    }
    let input_length = training.window_len().unwrap();
    let channel_count = training.channels().unwrap();
    check_shape(training, channel_count, Some(input_length))?;
    if input_length < KERNEL_LENGTH {
        return Err(Error::validation(format!(
            "window length {input_length} is shorter than the kernel length {KERNEL_LENGTH}"
        )));
    }
    let features_per_channel = effective_feature_count(requested);
    if features_per_channel == 0 {
        return Err(Error::validation(format!(
            "at least {NUM_KERNELS} features per channel are required, got {requested}"
        )));
    }
    let (dilations, features_per_dilation) = fit_dilations(input_length, features_per_channel);
    let indices = kernel_indices();
    let levels = quantile_levels(features_per_channel);
    let windows = training.windows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut conv = Vec::with_capacity(input_length);

    let mut biases = Vec::with_capacity(channel_count);
    for channel in 0..channel_count {
        let mut channel_biases = Vec::with_capacity(features_per_channel);
        for (&dilation, &count) in dilations.iter().zip(&features_per_dilation) {
            for &positions in &indices {
                let example = &windows[rng.random_range(0..windows.len())].data[channel];
                ShiftedSeries::new(example, dilation).convolve(positions, &mut conv);
                conv.sort_by(f64::total_cmp);
                let start = channel_biases.len();
                channel_biases.extend(
                    levels[start..start + count]
                        .iter()
                        .map(|&q| quantile_sorted(&conv, q)),
                );
            }
        }
        biases.push(channel_biases);
    }

    Ok(MiniRocketParams {
        seed,
        input_length,
        channel_count,
        features_per_channel,
        kernel_indices: indices,
        dilations,
        features_per_dilation,
        biases,
    })
}

impl MiniRocketParams {
    pub fn total_features(&self) -> usize {
        self.features_per_channel * self.channel_count
    }

    /// PPV features of one channel of one window.
    pub fn channel_features(&self, channel: usize, series: &[f64], out: &mut Vec<f64>) {
        let biases = &self.biases[channel];
        let mut conv = Vec::with_capacity(series.len());
        let mut feature = 0;
        for (dilation_index, (&dilation, &count)) in
            self.dilations.iter().zip(&self.features_per_dilation).enumerate()
        {
            let padding = (KERNEL_LENGTH - 1) * dilation / 2;
            let shifted = ShiftedSeries::new(series, dilation);
            for (kernel_index, &positions) in self.kernel_indices.iter().enumerate() {
                shifted.convolve(positions, &mut conv);
                // Alternate between the full output and the unpadded interior.
                let region: &[f64] = if (dilation_index + kernel_index) % 2 == 0
                    || 2 * padding >= conv.len()
                {
                    &conv
                } else {
                    &conv[padding..conv.len() - padding]
                };
                for &bias in &biases[feature..feature + count] {
                    let positive = region.iter().filter(|&&c| c > bias).count();
                    out.push(positive as f64 / region.len() as f64);
                }
                feature += count;
            }
        }
    }

    pub fn transform(&self, dataset: &Dataset) -> Result<FeatureMatrix> {
        check_shape(dataset, self.channel_count, Some(self.input_length))?;
        let windows = dataset.windows();
        let blocks = crate::par::map_range(windows.len(), |i| {
            let mut row = Vec::with_capacity(self.total_features());
            for (c, series) in windows[i].data.iter().enumerate() {
                self.channel_features(c, series, &mut row);
            }
            row
        });
        FeatureMatrix::from_row_blocks(blocks, self.features_per_channel, self.channel_count)
    }
}
