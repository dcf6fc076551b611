//! Seeded synthetic calf accelerometry for tests, demos and the acceptance run.
//!
//! Each behaviour has its own frequency and waveform signature. Calves differ
//! by a frequency scale, an amplitude scale, a sensor orientation offset and a
//! noise level, so a model has to generalise across subjects.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{AccelRecord, Behaviour, LabeledSegment};
use crate::error::{Error, Result};
use crate::ingest::CSV_HEADER;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub calves: usize,
    pub seed: u64,
    pub sample_rate_hz: f64,
    pub window_seconds: f64,
    /// Inclusive range of whole windows per segment.
    pub windows_per_segment: (usize, usize),
    /// Noise standard deviation relative to the signal amplitude.
    pub noise: f64,
    /// Relative spread of the per-calf frequency scale.
    pub subject_jitter: f64,
    /// Probability that a calf never shows a given non-lying behaviour.
    pub missing_class_probability: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            calves: 20,
            seed: 0,
            sample_rate_hz: 25.0,
            window_seconds: 3.0,
            windows_per_segment: (2, 4),
            noise: 0.35,
            subject_jitter: 0.08,
            missing_class_probability: 0.15,
        }
    }
}

struct Profile {
    frequency: f64,
    amplitude: f64,
    /// Base number of segments per calf; the draw adds 0 or 1.
    segments: usize,
}

fn profile(label: Behaviour) -> Profile {
    let (frequency, amplitude, segments) = match label {
        Behaviour::Lying => (0.3, 0.03, 3),
        Behaviour::Other => (0.8, 0.15, 2),
        Behaviour::Walking => (1.6, 0.4, 2),
        Behaviour::DrinkingMilk => (2.4, 0.3, 1),
        Behaviour::Running => (3.2, 1.2, 1),
        Behaviour::Grooming => (5.0, 0.2, 1),
    };
    Profile {
        frequency,
        amplitude,
        segments,
    }
}

/// Waveform of one behaviour at phase `t` seconds with fundamental `f`.
fn waveform(label: Behaviour, f: f64, t: f64) -> [f64; 3] {
    use std::f64::consts::TAU;
    let s = (TAU * f * t).sin();
    let c = (TAU * f * t).cos();
    match label {
        Behaviour::Lying => [0.2 * s, s, 0.5 * c],
        Behaviour::Other => [s, 0.5 * (TAU * 0.37 * t).sin(), -0.3 * c],
        Behaviour::Walking => {
            let h = (2.0 * TAU * f * t).sin();
            [s + 0.6 * h, 0.4 * c, 0.8 * h]
        }
        Behaviour::DrinkingMilk => {
            // head-butting at the udder: a clipped, square-ish rhythm on the forward axis
            let sq = (3.0 * s).tanh();
            [sq, 0.2 * s, 0.6 * sq]
        }
        Behaviour::Running => [s, c, (2.0 * TAU * f * t).sin().abs() * 2.0 - 1.0],
        Behaviour::Grooming => {
            let envelope = 0.5 + 0.5 * (TAU * 0.5 * t).sin();
            [0.3 * s, envelope * s, envelope * c]
        }
    }
}

fn gravity(label: Behaviour) -> [f64; 3] {
    match label {
        Behaviour::Lying => [0.0, 0.7, 0.7],
        Behaviour::DrinkingMilk => [-0.5, 0.0, 0.85],
        Behaviour::Grooming => [0.2, 0.4, 0.9],
        _ => [0.0, 0.0, 1.0],
    }
}

struct Subject {
    frequency_scale: f64,
    amplitude_scale: f64,
    noise_scale: f64,
    tilt: [f64; 3],
}

/// Generates labelled raw segments for `config.calves` calves.
pub fn generate_segments(config: &SynthConfig) -> Result<Vec<LabeledSegment>> {
    let (lo, hi) = config.windows_per_segment;
    if config.calves == 0 || lo == 0 || hi < lo {
        return Err(Error::validation("synthetic generator needs calves > 0 and 0 < min <= max windows"));
    }
    if !(config.sample_rate_hz > 0.0 && config.window_seconds > 0.0 && config.noise >= 0.0) {
        return Err(Error::validation("synthetic generator needs positive rate, window length and noise"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let per_window = (config.window_seconds * config.sample_rate_hz).round() as usize;
    let dt = 1.0 / config.sample_rate_hz;
    let mut segments = Vec::new();
    for calf in 0..config.calves {
        let calf_id = format!("calf{:02}", calf + 1);
        let normal = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
        let subject = Subject {
            frequency_scale: (1.0 + config.subject_jitter * normal(&mut rng)).clamp(0.7, 1.3),
            amplitude_scale: (1.0 + 0.2 * normal(&mut rng)).clamp(0.5, 1.5),
            noise_scale: rng.random_range(0.7..1.3),
            tilt: [0.1 * normal(&mut rng), 0.1 * normal(&mut rng), 0.05 * normal(&mut rng)],
        };
        let mut clock = 0.0;
        for &label in &Behaviour::ALL {
            let p = profile(label);
            if label != Behaviour::Lying && rng.random_bool(config.missing_class_probability) {
                continue;
            }
            let count = p.segments + rng.random_range(0..=1usize);
            for k in 0..count {
                let samples_len = per_window * rng.random_range(lo..=hi);
                let f = p.frequency * subject.frequency_scale * rng.random_range(0.95..1.05);
                let phase = rng.random_range(0.0..10.0);
                let amp = p.amplitude * subject.amplitude_scale;
                let g = gravity(label);
                let mut samples = Vec::with_capacity(samples_len);
                for i in 0..samples_len {
                    let t = phase + i as f64 * dt;
                    let w = waveform(label, f, t);
                    let channels = (0..3)
                        .map(|a| {
                            let noise: f64 = rng.sample(StandardNormal);
                            g[a] + subject.tilt[a] + amp * (w[a] + config.noise * subject.noise_scale * noise)
                        })
                        .collect();
                    samples.push(AccelRecord {
                        calf_id: calf_id.clone(),
                        timestamp: clock + i as f64 * dt,
                        channels,
                    });
                }
                // a recording break between annotations
                clock += samples_len as f64 * dt + 60.0;
                let segment_id = format!("{calf_id}-{}-{k}", label.as_str());
                segments.push(LabeledSegment::new(calf_id.clone(), segment_id, label, samples)?);
            }
        }
    }
    Ok(segments)
}

/// Writes segments in the ingestion CSV layout.
pub fn write_csv<W: Write>(segments: &[LabeledSegment], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for seg in segments {
        for s in &seg.samples {
            w.write_record([
                seg.calf_id.clone(),
                seg.segment_id.clone(),
                format!("{:.2}", s.timestamp),
                format!("{:.6}", s.channels[0]),
                format!("{:.6}", s.channels[1]),
                format!("{:.6}", s.channels[2]),
                seg.label.as_str().to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
