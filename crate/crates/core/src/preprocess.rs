//! Length normalisation and per-window standardisation.

use serde::{Deserialize, Serialize};

use crate::data::LabeledWindow;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resampling {
    #[default]
    Linear,
    Nearest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub target_length: usize,
    pub standardize: bool,
    pub epsilon: f64,
    pub resampling: Resampling,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            target_length: 75,
            standardize: true,
            epsilon: 1e-12,
            resampling: Resampling::Linear,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_length < 2 {
            return Err(Error::validation("target_length must be at least 2"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::validation("epsilon must be positive"));
        }
        Ok(())
    }
}

/// Resamples `series` to `target_length` points over a uniform parameterisation
/// of [0, 1]. Endpoints are preserved.
pub fn resample_to_length(series: &[f64], target_length: usize) -> Result<Vec<f64>> {
    resample_with(series, target_length, Resampling::Linear)
}

pub fn resample_with(series: &[f64], target_length: usize, method: Resampling) -> Result<Vec<f64>> {
    let n = series.len();
    if n < 2 {
        return Err(Error::validation("resampling needs at least 2 input points"));
    }
    if target_length < 2 {
        return Err(Error::validation("resampling target must be at least 2"));
    }
    if n == target_length {
        return Ok(series.to_vec());
    }
    let scale = (n - 1) as f64 / (target_length - 1) as f64;
    Ok((0..target_length)
        .map(|i| {
            if i == target_length - 1 {
                return series[n - 1];
            }
            let pos = i as f64 * scale;
            match method {
                Resampling::Nearest => series[(pos.round() as usize).min(n - 1)],
                Resampling::Linear => {
                    let lo = (pos.floor() as usize).min(n - 2);
                    let frac = pos - lo as f64;
                    series[lo] + frac * (series[lo + 1] - series[lo])
                }
            }
        })
        .collect())
}

/// Standardises each channel to zero mean and unit population variance.
/// Channels whose standard deviation is below `epsilon` become all zeros.
pub fn standardize(window: &LabeledWindow, epsilon: f64) -> Result<LabeledWindow> {
    window.ensure_finite()?;
    let data = window
        .data
        .iter()
        .map(|ch| {
            let n = ch.len() as f64;
            let mean = ch.iter().sum::<f64>() / n;
            let var = ch.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let std = var.sqrt();
            if std < epsilon {
                vec![0.0; ch.len()]
            } else {
                ch.iter().map(|v| (v - mean) / std).collect()
            }
        })
        .collect();
    Ok(window.with_data(data))
}

/// Resampling followed by optional standardisation.
pub fn preprocess_window(window: &LabeledWindow, config: &PreprocessConfig) -> Result<LabeledWindow> {
    window.ensure_finite()?;
    let resized = if window.len() == config.target_length {
        window.clone()
    } else {
        let data = window
            .data
            .iter()
            .map(|ch| resample_with(ch, config.target_length, config.resampling))
            .collect::<Result<Vec<_>>>()?;
        window.with_data(data)
    };
    if config.standardize {
        standardize(&resized, config.epsilon)
    } else {
        Ok(resized)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Behaviour;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn win(ch: Vec<f64>) -> LabeledWindow {
        LabeledWindow::new("c", "s", Behaviour::Other, vec![ch]).unwrap()
    }

    #[test]
    fn identity_at_same_length() {
        let s: Vec<f64> = (0..75).map(|i| (i as f64 * 0.3).sin()).collect();
        assert_eq!(resample_to_length(&s, 75).unwrap(), s);
    }

    #[test]
    fn constant_stays_constant() {
        assert_eq!(resample_to_length(&[5.0; 4], 7).unwrap(), vec![5.0; 7]);
    }

    #[test]
    fn midpoint() {
        assert_eq!(resample_to_length(&[0.0, 1.0], 3).unwrap(), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn too_short() {
        assert!(resample_to_length(&[1.0], 5).is_err());
    }

    #[test]
    fn nearest_mode() {
        let out = resample_with(&[0.0, 10.0, 20.0], 5, Resampling::Nearest).unwrap();
        assert_eq!(out, vec![0.0, 10.0, 10.0, 20.0, 20.0]);
    }

    #[test]
    fn standardize_one_two_three() {
        let out = standardize(&win(vec![1.0, 2.0, 3.0]), 1e-12).unwrap();
        let expected = 1.0 / (2.0f64 / 3.0).sqrt();
        assert_abs_diff_eq!(out.data[0][0], -expected, epsilon = 1e-12);
        assert_abs_diff_eq!(out.data[0][1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.data[0][2], expected, epsilon = 1e-12);
        assert_abs_diff_eq!(expected, 1.2247, epsilon = 1e-4);
    }

    #[test]
    fn constant_channel_maps_to_zero() {
        let out = standardize(&win(vec![4.0; 3]), 1e-12).unwrap();
        assert_eq!(out.data[0], vec![0.0; 3]);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(standardize(&win(vec![1.0, f64::INFINITY]), 1e-12).is_err());
    }

    proptest! {
        #[test]
        fn standardized_moments(v in prop::collection::vec(-100.0f64..100.0, 2..120)) {
            let w = win(v.clone());
            let s = standardize(&w, 1e-12).unwrap();
            let n = v.len() as f64;
            let mean = s.data[0].iter().sum::<f64>() / n;
            let var = s.data[0].iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-9);
            let raw_mean = v.iter().sum::<f64>() / n;
            let raw_std = (v.iter().map(|x| (x - raw_mean).powi(2)).sum::<f64>() / n).sqrt();
            if raw_std > 1e-9 {
                prop_assert!((var - 1.0).abs() < 1e-6);
            }
            let twice = standardize(&s, 1e-12).unwrap();
            for (a, b) in twice.data[0].iter().zip(&s.data[0]) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn resampling_a_line_samples_the_line(
            slope in -10.0f64..10.0,
            offset in -10.0f64..10.0,
            n in 2usize..100,
            m in 2usize..100,
        ) {
            let line: Vec<f64> = (0..n).map(|i| offset + slope * i as f64 / (n - 1) as f64).collect();
            let out = resample_to_length(&line, m).unwrap();
            prop_assert_eq!(out.len(), m);
            prop_assert_eq!(out[0], line[0]);
            prop_assert_eq!(out[m - 1], line[n - 1]);
            for (i, v) in out.iter().enumerate() {
                let t = i as f64 / (m - 1) as f64;
                prop_assert!((v - (offset + slope * t)).abs() < 1e-9);
            }
        }
    }
}
