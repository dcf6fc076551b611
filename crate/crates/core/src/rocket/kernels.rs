use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CANDIDATE_LENGTHS: [usize; 3] = [7, 9, 11];

/// A dilated convolution kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocketKernel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub dilation: usize,
    /// Zero-pad by `(len - 1) * dilation / 2` on each side.
    pub padding: bool,
}

impl RocketKernel {
    pub fn new(weights: Vec<f64>, bias: f64, dilation: usize, padding: bool) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::validation("kernel needs at least one weight"));
        }
        if dilation == 0 {
            return Err(Error::validation("dilation must be at least 1"));
        }
        Ok(Self {
            weights,
            bias,
            dilation,
            padding,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn padding_amount(&self) -> usize {
        if self.padding {
            (self.len() - 1) * self.dilation / 2
        } else {
            0
        }
    }

    pub fn receptive_field(&self) -> usize {
        (self.len() - 1) * self.dilation + 1
    }
}

/// Pooled response of one kernel over one series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelResponse {
    pub max: f64,
    pub ppv: f64,
    /// Set when the receptive field does not fit the (padded) series; the
    /// pooled values are then (0, 0).
    pub degenerate: bool,
}

/// Convolves `series` with `kernel` (bias added, zero padding when enabled)
/// and pools the output to its maximum and the fraction of strictly positive
/// values.
pub fn apply_kernel(series: &[f64], kernel: &RocketKernel) -> KernelResponse {
    let n = series.len() as isize;
    let pad = kernel.padding_amount() as isize;
    let span = ((kernel.len() - 1) * kernel.dilation) as isize;
    let out_len = n + 2 * pad - span;
    if out_len <= 0 {
        log::warn!(
            "kernel receptive field {} exceeds series length {} (padding {pad}); emitting (0, 0)",
            kernel.receptive_field(),
            n
        );
        return KernelResponse {
            max: 0.0,
            ppv: 0.0,
            degenerate: true,
        };
    }
    let d = kernel.dilation as isize;
    let mut max = f64::NEG_INFINITY;
    let mut positive = 0usize;
    for start in -pad..(n + pad - span) {
        let mut sum = kernel.bias;
        let mut idx = start;
        for &w in &kernel.weights {
            if idx >= 0 && idx < n {
                sum += w * series[idx as usize];
            }
            idx += d;
        }
        if sum > max {
            max = sum;
        }
        if sum > 0.0 {
            positive += 1;
        }
    }
    KernelResponse {
        max,
        ppv: positive as f64 / out_len as f64,
        degenerate: false,
    }
}

/// The full convolution output that [`apply_kernel`] pools; empty when the
/// receptive field does not fit.
pub fn kernel_output(series: &[f64], kernel: &RocketKernel) -> Vec<f64> {
    let n = series.len() as isize;
    let pad = kernel.padding_amount() as isize;
    let span = ((kernel.len() - 1) * kernel.dilation) as isize;
    let d = kernel.dilation as isize;
    (-pad..(n + pad - span).max(-pad))
        .map(|start| {
            let mut idx = start;
            let mut sum = kernel.bias;
            for &w in &kernel.weights {
                if idx >= 0 && idx < n {
                    sum += w * series[idx as usize];
                }
                idx += d;
            }
            sum
        })
        .collect()
}

/// Draws `count` random kernels for series of length `input_length`.
pub fn generate_rocket_kernels(count: usize, input_length: usize, seed: u64) -> Result<Vec<RocketKernel>> {
    if count == 0 {
        return Err(Error::validation("kernel count must be at least 1"));
    }
    let longest = *CANDIDATE_LENGTHS.last().unwrap();
    if input_length < longest {
        return Err(Error::validation(format!(
            "input length {input_length} is shorter than the longest kernel ({longest})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            let len = CANDIDATE_LENGTHS[rng.random_range(0..CANDIDATE_LENGTHS.len())];
            let mut weights: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
            let mean = weights.iter().sum::<f64>() / len as f64;
            weights.iter_mut().for_each(|w| *w -= mean);
            let bias = rng.random_range(-1.0..=1.0);
            let max_exponent = ((input_length - 1) as f64 / (len - 1) as f64).log2();
            let exponent = rng.random_range(0.0..=max_exponent);
            let dilation = (2f64.powf(exponent).floor() as usize).max(1);
            let padding = rng.random_bool(0.5);
            RocketKernel {
                weights,
                bias,
                dilation,
                padding,
            }
        })
        .collect())
}
