//! The network's forward pass expressed on a [`Tape`].

use super::config::{Activation, ModelConfig, Pooling};
use super::params::{LevelParams, ModelParams, WnConv};
use crate::error::{Error, Result};
use crate::numcore::{RngStream, Tape, Var};
use crate::textpipe::PAD_ID;

#[derive(Clone, Copy, Debug)]
pub struct WnConvVars {
    pub direction: Var,
    pub gain: Var,
    pub bias: Option<Var>,
}

#[derive(Clone, Copy, Debug)]
pub struct LevelVars {
    pub conv1: WnConvVars,
    pub conv2: WnConvVars,
    pub projection: Option<Var>,
}

/// Parameters recorded as tape leaves.
#[derive(Clone, Debug)]
pub struct ParamVars {
    pub embedding: Var,
    pub levels: Vec<LevelVars>,
    pub query: Var,
    pub classifier_weight: Var,
    pub classifier_bias: Var,
}

impl ParamVars {
    pub fn record(tape: &mut Tape, params: &ModelParams) -> Self {
        let conv = |tape: &mut Tape, c: &WnConv| WnConvVars {
            direction: tape.leaf(&c.direction),
            gain: tape.leaf(&c.gain),
            bias: c.bias.as_ref().map(|b| tape.leaf(b)),
        };
        let level = |tape: &mut Tape, l: &LevelParams| LevelVars {
            conv1: conv(tape, &l.conv1),
            conv2: conv(tape, &l.conv2),
            projection: l.projection.as_ref().map(|p| tape.leaf(p)),
        };
        ParamVars {
            embedding: tape.leaf(&params.embedding),
            levels: params.levels.iter().map(|l| level(tape, l)).collect(),
            query: tape.leaf(&params.query),
            classifier_weight: tape.leaf(&params.classifier_weight),
            classifier_bias: tape.leaf(&params.classifier_bias),
        }
    }

    /// Leaf vars in the same order as [`ModelParams::tensors_mut`].
    pub fn ordered(&self) -> Vec<Var> {
        let mut out = vec![self.embedding];
        for l in &self.levels {
            for c in [l.conv1, l.conv2] {
                out.extend([c.direction, c.gain]);
                out.extend(c.bias);
            }
            out.extend(l.projection);
        }
        out.extend([self.query, self.classifier_weight, self.classifier_bias]);
        out
    }
}

/// Vars produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    /// n × h_L output of the last residual level
    pub hidden: Var,
    /// n × m attention weights
    pub attention: Var,
    /// m × h_L label-specific representations
    pub attended: Var,
    /// m pooled logits
    pub logits: Var,
    /// m label probabilities
    pub probs: Var,
}

pub fn activate(tape: &mut Tape, x: Var, activation: Activation) -> Var {
    match activation {
        Activation::Relu => tape.relu(x),
        Activation::Tanh => tape.tanh(x),
    }
}

/// Embedding lookup; the PAD row receives no gradient.
pub fn embed(tape: &mut Tape, token_ids: &[usize], embedding: Var) -> Result<Var> {
    tape.gather_rows(embedding, token_ids, Some(PAD_ID))
}

/// One weight-normalised causal convolution followed by activation and dropout.
#[allow(clippy::too_many_arguments)]
fn conv_unit(
    tape: &mut Tape,
    x: Var,
    conv: WnConvVars,
    dilation: usize,
    config: &ModelConfig,
    training: bool,
    rng: &mut RngStream,
) -> Result<Var> {
    let filters = tape.weight_norm(conv.direction, conv.gain)?;
    let mut y = tape.conv1d_dilated(x, filters, dilation)?;
    if let Some(b) = conv.bias {
        y = tape.add_row(y, b)?;
    }
    let y = activate(tape, y, config.activation);
    tape.dropout(y, config.dropout, training, rng)
}

/// `σ(skip(H) + G(H))` where G is two dilated convolution units and `skip` is the identity
/// or a learned 1×1 map when the channel count changes.
pub fn residual_block(
    tape: &mut Tape,
    input: Var,
    level: usize,
    vars: &LevelVars,
    config: &ModelConfig,
    training: bool,
    rng: &mut RngStream,
) -> Result<Var> {
    if level >= config.num_levels {
        return Err(Error::invalid(format!(
            "level {level} with {} levels",
            config.num_levels
        )));
    }
    let (_, c_in) = tape.value(input).dims2()?;
    if c_in != config.level_input_dim(level) {
        return Err(Error::shape(format!(
            "level {level} expects {} channels, got {c_in}",
            config.level_input_dim(level)
        )));
    }
    let dilation = config.dilation(level);
    let a = conv_unit(tape, input, vars.conv1, dilation, config, training, rng)?;
    let b = conv_unit(tape, a, vars.conv2, dilation, config, training, rng)?;
    let skip = match vars.projection {
        Some(p) => tape.matmul(input, p)?,
        None => input,
    };
    let sum = tape.add(skip, b)?;
    Ok(activate(tape, sum, config.activation))
}

/// Per-label softmax over positions of `hidden · query`, then `Aᵀ · hidden`.
/// Returns (attention n × m, attended m × h_L).
pub fn label_attention(
    tape: &mut Tape,
    hidden: Var,
    query: Var,
    mask: Option<&[bool]>,
) -> Result<(Var, Var)> {
    let (n, _) = tape.value(hidden).dims2()?;
    if n == 0 {
        return Err(Error::invalid("label attention over an empty sequence"));
    }
    let scores = tape.matmul(hidden, query)?;
    let attention = tape.softmax_masked(scores, 0, mask)?;
    let at = tape.transpose(attention)?;
    let attended = tape.matmul(at, hidden)?;
    Ok((attention, attended))
}

/// `Y = V·Wᵀ + b`, pooled over the projection width. Returns (logits, probs).
pub fn classify_pool(
    tape: &mut Tape,
    attended: Var,
    weight: Var,
    bias: Var,
    pooling: Pooling,
) -> Result<(Var, Var)> {
    let wt = tape.transpose(weight)?;
    let y = tape.matmul(attended, wt)?;
    let y = tape.add_row(y, bias)?;
    let logits = match pooling {
        Pooling::Max => tape.max_axis(y, 1)?,
        Pooling::Mean => tape.mean_axis(y, 1)?,
    };
    let probs = tape.sigmoid(logits);
    Ok((logits, probs))
}

/// Full pipeline: embedding, residual dilated levels, label attention, pooled classifier.
///
/// `mask`, when given, marks real tokens; masked positions get zero attention weight.
#[allow(clippy::too_many_arguments)]
pub fn model_forward(
    tape: &mut Tape,
    token_ids: &[usize],
    mask: Option<&[bool]>,
    vars: &ParamVars,
    config: &ModelConfig,
    training: bool,
    rng: &mut RngStream,
) -> Result<ForwardVars> {
    if token_ids.is_empty() {
        return Err(Error::invalid("empty token sequence"));
    }
    if token_ids.len() > config.max_len {
        return Err(Error::invalid(format!(
            "sequence of {} tokens exceeds max_len {}",
            token_ids.len(),
            config.max_len
        )));
    }
    if let Some(m) = mask {
        if m.len() != token_ids.len() {
            return Err(Error::shape("mask length differs from token sequence"));
        }
    }
    let mut h = embed(tape, token_ids, vars.embedding)?;
    for (level, lv) in vars.levels.iter().enumerate() {
        h = residual_block(tape, h, level, lv, config, training, rng)?;
    }
    let (attention, attended) = label_attention(tape, h, vars.query, mask)?;
    let (logits, probs) = classify_pool(
        tape,
        attended,
        vars.classifier_weight,
        vars.classifier_bias,
        config.pooling,
    )?;
    Ok(ForwardVars {
        hidden: h,
        attention,
        attended,
        logits,
        probs,
    })
}
