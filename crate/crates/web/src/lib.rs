//! WebAssembly bindings for the demo page in `www/`.
//!
//! Three operations: run one dilated causal convolution, trace the causal cone of a
//! residual stack, and show label attention of a randomly initialised network.

use dcan::model::{model_forward, receptive_field, Dcan, ModelConfig, ParamVars};
use dcan::numcore::{RngStream, Tape, Tensor};
use dcan::textpipe::{build_vocab, encode, preprocess};
use dcan::Result;
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn numbers(text: &str) -> std::result::Result<Vec<f64>, String> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| format!("`{s}` is not a number")))
        .collect()
}

/// Single-channel dilated causal convolution; `kernel[i]` weights the input `i·dilation` steps back.
pub fn convolve(signal: &[f64], kernel: &[f64], dilation: usize) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new(&[signal.len(), 1], signal.to_vec())?);
    let w = tape.constant(Tensor::new(&[1, 1, kernel.len()], kernel.to_vec())?);
    let y = tape.conv1d_dilated(x, w, dilation)?;
    Ok(tape.value(y).data().to_vec())
}

#[derive(Debug, Serialize)]
pub struct Cone {
    pub receptive_field: usize,
    pub dilations: Vec<usize>,
    /// For each level (0 = embeddings), the earliest position that reaches `target`.
    pub earliest: Vec<usize>,
}

/// Input positions that can affect output `target` after each residual level.
pub fn causal_cone(kernel_size: usize, levels: usize, target: usize) -> Result<Cone> {
    let mut cfg = ModelConfig::new(2, 1);
    cfg.kernel_size = kernel_size;
    cfg.num_levels = levels;
    cfg.channels = vec![1; levels];
    cfg.validate()?;
    let dilations: Vec<usize> = (0..levels).map(|l| cfg.dilation(l)).collect();
    let mut earliest = vec![target];
    let mut reach = 0;
    for d in &dilations {
        reach += 2 * (kernel_size - 1) * d;
        earliest.push(target.saturating_sub(reach));
    }
    Ok(Cone {
        receptive_field: receptive_field(&cfg),
        dilations,
        earliest,
    })
}

#[derive(Debug, Serialize)]
pub struct Attention {
    pub tokens: Vec<String>,
    /// `weights[j][t]`: weight label `j` puts on token `t`; each row sums to one.
    pub weights: Vec<Vec<f64>>,
    pub probabilities: Vec<f64>,
}

/// Label attention of a freshly initialised network over the words of `text`.
pub fn attend(text: &str, num_labels: usize, seed: u64) -> Result<Attention> {
    let tokens = preprocess(text, 256);
    if tokens.is_empty() {
        return Err(dcan::Error::InvalidArgument("no words in the input".into()));
    }
    let vocab = build_vocab(std::slice::from_ref(&tokens), 1)?;
    let mut cfg = ModelConfig::new(vocab.len(), num_labels);
    cfg.embed_dim = 16;
    cfg.num_levels = 4;
    cfg.channels = vec![16; 4];
    cfg.max_len = 256;
    let model = Dcan::new(cfg, seed)?;
    let ids = encode(&tokens, &vocab);
    let mut tape = Tape::new();
    let vars = ParamVars::record(&mut tape, &model.params);
    let out = model_forward(&mut tape, &ids, None, &vars, &model.config, false, &mut RngStream::new(0))?;
    let a = tape.value(out.attention);
    let weights = (0..num_labels).map(|j| (0..ids.len()).map(|t| a.at(t, j)).collect()).collect();
    Ok(Attention {
        tokens,
        weights,
        probabilities: tape.value(out.probs).data().to_vec(),
    })
}

fn js<T>(r: Result<T>) -> std::result::Result<T, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

fn to_json<T: Serialize>(value: &T) -> std::result::Result<String, JsError> {
    serde_json::to_string(value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = convolve)]
pub fn convolve_js(signal: &str, kernel: &str, dilation: usize) -> std::result::Result<Vec<f64>, JsError> {
    let signal = numbers(signal).map_err(|e| JsError::new(&e))?;
    let kernel = numbers(kernel).map_err(|e| JsError::new(&e))?;
    js(convolve(&signal, &kernel, dilation))
}

#[wasm_bindgen(js_name = causalCone)]
pub fn causal_cone_js(kernel_size: usize, levels: usize, target: usize) -> std::result::Result<String, JsError> {
    to_json(&js(causal_cone(kernel_size, levels, target))?)
}

#[wasm_bindgen(js_name = attend)]
pub fn attend_js(text: &str, num_labels: usize, seed: u32) -> std::result::Result<String, JsError> {
    to_json(&js(attend(text, num_labels, u64::from(seed)))?)
}
