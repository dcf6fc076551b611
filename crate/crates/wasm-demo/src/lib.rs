//! Browser bindings for the demo page in `www/`.
//!
//! Each export takes plain numbers or JSON text and returns JSON text. The
//! `*_json` functions hold the logic and are tested natively.

use calfrocket::data::{Behaviour, ChannelConfig, Dataset};
use calfrocket::ingest::{build_dataset, IngestConfig};
use calfrocket::preprocess::PreprocessConfig;
use calfrocket::rocket::{apply_kernel, fit_minirocket, kernel_output, RocketKernel};
use calfrocket::splitter::{select_test_split, score_combination, CountBasis, SearchConfig, SearchMode};
use calfrocket::synth::{generate_segments, SynthConfig};
use calfrocket::LabeledWindow;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn text(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Convolution trace of one kernel over a series, with its pooled features.
pub fn kernel_trace_json(series: &[f64], weights: &[f64], bias: f64, dilation: usize, padding: bool) -> Result<Value, String> {
    let kernel = RocketKernel::new(weights.to_vec(), bias, dilation, padding).map_err(text)?;
    let response = apply_kernel(series, &kernel);
    Ok(json!({
        "output": kernel_output(series, &kernel),
        "padding": kernel.padding_amount(),
        "receptive_field": kernel.receptive_field(),
        "max": response.max,
        "ppv": response.ppv,
        "degenerate": response.degenerate,
    }))
}

/// One synthetic window of `behaviour` and its MiniRocket features, with the
/// transform fitted on the other windows of the same synthetic calf.
pub fn synthetic_features_json(behaviour: &str, seed: u64, features_per_channel: usize) -> Result<Value, String> {
    let label: Behaviour = behaviour.parse().map_err(text)?;
    let synth = SynthConfig {
        calves: 1,
        seed,
        missing_class_probability: 0.0,
        ..Default::default()
    };
    let segments = generate_segments(&synth).map_err(text)?;
    let channels = ChannelConfig::default();
    let ds = build_dataset(&segments, &IngestConfig::default(), &channels, &PreprocessConfig::default()).map_err(text)?;
    let pick = ds
        .windows()
        .iter()
        .position(|w| w.label == label)
        .ok_or_else(|| format!("no {label} window generated"))?;
    let rest: Vec<usize> = (0..ds.len()).filter(|&i| i != pick).collect();
    let params = fit_minirocket(&ds.subset(&rest), features_per_channel.max(84), seed).map_err(text)?;
    let target = ds.subset(&[pick]);
    let matrix = params.transform(&target).map_err(text)?;
    let per = matrix.per_channel_feature_count();
    let names: Vec<String> = channels.channels.iter().map(|c| format!("{c:?}")).collect();
    let window: &LabeledWindow = &target.windows()[0];
    Ok(json!({
        "label": label.as_str(),
        "channels": names,
        "window": window.data,
        "features": matrix.row(0).chunks(per).collect::<Vec<_>>(),
    }))
}

/// Best-stratified test calves for a table of per-class counts.
///
/// `counts_json` maps calf ids to objects of behaviour name to count, e.g.
/// `{"c1": {"lying": 10, "running": 2}, ...}`.
pub fn split_search_json(counts_json: &str, test_fraction: f64, target_ratio: f64) -> Result<Value, String> {
    let table: serde_json::Map<String, Value> = serde_json::from_str(counts_json).map_err(text)?;
    let mut windows = Vec::new();
    for (calf, row) in &table {
        let row = row.as_object().ok_or_else(|| format!("calf {calf}: expected an object of counts"))?;
        for (name, count) in row {
            let label: Behaviour = name.parse().map_err(text)?;
            let count = count.as_u64().ok_or_else(|| format!("calf {calf}, {name}: count must be a whole number"))?;
            for j in 0..count {
                let seg = format!("{calf}-{name}-{j}");
                windows.push(LabeledWindow::new(calf.clone(), seg, label, vec![vec![0.0]]).map_err(text)?);
            }
        }
    }
    let ds = Dataset::from_windows(windows);
    let search = SearchConfig {
        mode: SearchMode::Exhaustive,
        ..Default::default()
    };
    let (test, deviation) =
        select_test_split(&ds, test_fraction, target_ratio, &search, CountBasis::Windows).map_err(text)?;
    let score = score_combination(&ds, &test, target_ratio, CountBasis::Windows).map_err(text)?;
    let ratios: serde_json::Map<String, Value> = score
        .per_class_ratio
        .iter()
        .map(|(b, r)| (b.as_str().to_string(), json!(r)))
        .collect();
    Ok(json!({ "test_calves": test, "deviation": deviation, "ratios": ratios }))
}

fn to_js(r: Result<Value, String>) -> Result<String, JsValue> {
    r.map(|v| v.to_string()).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn kernel_trace(series: Vec<f64>, weights: Vec<f64>, bias: f64, dilation: usize, padding: bool) -> Result<String, JsValue> {
    to_js(kernel_trace_json(&series, &weights, bias, dilation, padding))
}

#[wasm_bindgen]
pub fn synthetic_features(behaviour: &str, seed: u64, features_per_channel: usize) -> Result<String, JsValue> {
    to_js(synthetic_features_json(behaviour, seed, features_per_channel))
}

#[wasm_bindgen]
pub fn split_search(counts_json: &str, test_fraction: f64, target_ratio: f64) -> Result<String, JsValue> {
    to_js(split_search_json(counts_json, test_fraction, target_ratio))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_length_and_pooling() {
        let series: Vec<f64> = (0..30).map(|i| (i as f64).sin()).collect();
        let v = kernel_trace_json(&series, &[1.0, -1.0, 2.0, 0.0, -2.0, 1.0, -1.0], 0.2, 2, true).unwrap();
        // padded: 30 + 2 * 6 - 12 outputs
        assert_eq!(v["output"].as_array().unwrap().len(), 30);
        assert_eq!(v["receptive_field"], 13);
        assert!(kernel_trace_json(&series, &[1.0; 4], 0.0, 0, false).is_err());
    }

    #[test]
    fn synthetic_window_features() {
        let v = synthetic_features_json("running", 3, 168).unwrap();
        assert_eq!(v["label"], "running");
        assert_eq!(v["window"].as_array().unwrap().len(), 8);
        let f = v["features"].as_array().unwrap();
        assert_eq!(f.len(), 8);
        assert_eq!(f[0].as_array().unwrap().len(), 168);
        assert!(synthetic_features_json("flying", 3, 168).is_err());
    }

    #[test]
    fn split_search_on_a_small_table() {
        let counts = r#"{"a": {"lying": 10, "running": 3}, "b": {"lying": 3, "running": 1},
                         "c": {"lying": 4, "running": 1}, "d": {"lying": 9, "running": 2}}"#;
        let v = split_search_json(counts, 0.25, 0.43).unwrap();
        assert_eq!(v["test_calves"].as_array().unwrap().len(), 1);
        assert!(v["deviation"].as_f64().unwrap().is_finite());
        assert!(split_search_json("[1]", 0.25, 0.43).is_err());
    }
}
