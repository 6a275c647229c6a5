//! wasm entry points for `www/index.html`. Each export takes plain strings
//! and numbers and returns JSON or text, so the page needs no bindings
//! beyond what `wasm-bindgen --target web` generates.

use serde_json::json;
use vlaforge_core::codec::{FastCodec, FastCodecConfig};
use vlaforge_core::eval::canonical_observation;
use vlaforge_core::policy::{registry_compose, PolicyConfig};
use vlaforge_core::profiler::{profile_records, read_csv};
use vlaforge_core::ActionChunk;
use wasm_bindgen::prelude::*;

/// Parses one row per line, values separated by commas or whitespace.
fn parse_rows(text: &str) -> Result<Vec<Vec<f64>>, String> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            line.split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<f64>().map_err(|_| format!("line {}: `{s}` is not a number", i + 1)))
                .collect()
        })
        .collect()
}

/// Tokenizes a normalized chunk with FAST and decodes it again.
pub fn fast_roundtrip(rows: &str, gamma: f64, vocab_size: usize) -> Result<String, String> {
    let rows = parse_rows(rows)?;
    let mut chunk = ActionChunk::from_rows(&rows).map_err(|e| e.to_string())?;
    if chunk.values.iter().any(|v| v.abs() > 1.0) {
        return Err("normalized actions must lie in [-1, 1]".into());
    }
    chunk.normalized = true;
    let cfg = FastCodecConfig::for_normalized(chunk.horizon, chunk.dims, gamma, vocab_size);
    let codec = FastCodec::fit(cfg, [&chunk]).map_err(|e| e.to_string())?;
    let symbols = codec.symbols(&chunk).map_err(|e| e.to_string())?;
    let tokens = codec.encode(&chunk).map_err(|e| e.to_string())?.tokens;
    let decoded = codec.decode(&tokens).map_err(|e| e.to_string())?;
    let max_error = chunk
        .values
        .iter()
        .zip(&decoded.values)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(json!({
        "symbols": symbols.len(),
        "tokens": tokens,
        "decoded": decoded.rows().map(<[f64]>::to_vec).collect::<Vec<_>>(),
        "max_error": max_error,
        "bound": codec.config().error_bound(),
    })
    .to_string())
}

/// Throughput table for CSV rows of `gpus,per_gpu_batch,global_batch,time_per_100k`.
pub fn profile_table(csv: &str) -> Result<String, String> {
    let records = read_csv(csv).map_err(|e| e.to_string())?;
    Ok(profile_records(&records).map_err(|e| e.to_string())?.to_text())
}

/// Leading unified dims shown by the page (x, y and gripper for the point robot).
const SHOWN_DIMS: usize = 3;

/// An untrained policy's chunk for the built-in scene. Shows that heads
/// swap behind one backbone; the numbers themselves mean nothing.
pub fn predict_chunk(head: &str, instruction: &str, seed: u64) -> Result<String, String> {
    let cfg = PolicyConfig::new("vlm", head);
    let policy = registry_compose(&cfg, seed).map_err(|e| e.to_string())?;
    let mut obs = canonical_observation();
    obs.instruction = instruction.to_string();
    let chunk = policy.predict(&obs, seed).map_err(|e| e.to_string())?.normalized_actions;
    Ok(json!({
        "head": head,
        "params": policy.params().len(),
        "rows": chunk.rows().map(|r| r[..SHOWN_DIMS].to_vec()).collect::<Vec<_>>(),
    })
    .to_string())
}

#[wasm_bindgen(js_name = fastRoundtrip)]
pub fn fast_roundtrip_js(rows: &str, gamma: f64, vocab_size: usize) -> Result<String, JsValue> {
    fast_roundtrip(rows, gamma, vocab_size).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = profileTable)]
pub fn profile_table_js(csv: &str) -> Result<String, JsValue> {
    profile_table(csv).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = predictChunk)]
pub fn predict_chunk_js(head: &str, instruction: &str, seed: u32) -> Result<String, JsValue> {
    predict_chunk(head, instruction, seed as u64).map_err(|e| JsValue::from_str(&e))
}
