use std::collections::BTreeMap;

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::numcore::{RngStream, Tensor};

/// Weight-normalised convolution filters: effective filter is `gain · direction / ‖direction‖`
/// per output channel.
#[derive(Clone, Debug, PartialEq)]
pub struct WnConv {
    /// c_out × c_in × k
    pub direction: Tensor,
    /// one gain per output channel
    pub gain: Tensor,
    /// one bias per output channel, when the config enables it
    pub bias: Option<Tensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevelParams {
    pub conv1: WnConv,
    pub conv2: WnConv,
    /// c_in × c_out map on the identity path, present only when widths differ.
    pub projection: Option<Tensor>,
}

/// Every learnable tensor of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    /// vocab × embed_dim; row 0 (PAD) stays zero.
    pub embedding: Tensor,
    pub levels: Vec<LevelParams>,
    /// hidden × num_labels attention queries.
    pub query: Tensor,
    /// projection_dim × hidden
    pub classifier_weight: Tensor,
    /// 1 × projection_dim
    pub classifier_bias: Tensor,
}

fn uniform(shape: &[usize], bound: f64, rng: &mut RngStream) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.symmetric(bound)).collect();
    Tensor::new(shape, data)
        .expect("positive dims")
        .with_requires_grad(true)
}

/// Standard deviation of the initial effective filter weights.
const CONV_INIT_STD: f64 = 0.01;

fn wn_conv(c_out: usize, c_in: usize, k: usize, bias: bool, rng: &mut RngStream) -> WnConv {
    // uniform with the given standard deviation; the gain starts at ‖v‖ so g·v/‖v‖ = v
    let direction = uniform(&[c_out, c_in, k], CONV_INIT_STD * 3f64.sqrt(), rng);
    let per = c_in * k;
    let norms = direction
        .data()
        .chunks(per)
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let gain = Tensor::vector(norms).unwrap().with_requires_grad(true);
    let bias = bias.then(|| Tensor::zeros(&[c_out]).with_requires_grad(true));
    WnConv { direction, gain, bias }
}

impl ModelParams {
    pub fn init(config: &ModelConfig, rng: &mut RngStream) -> Result<Self> {
        config.validate()?;
        let d_e = config.embed_dim;
        let mut embedding = uniform(&[config.vocab_size, d_e], (3.0 / d_e as f64).sqrt(), rng);
        embedding.data_mut()[..d_e].iter_mut().for_each(|v| *v = 0.0);

        let k = config.kernel_size;
        let levels = (0..config.num_levels)
            .map(|l| {
                let c_in = config.level_input_dim(l);
                let c_out = config.channels[l];
                let conv1 = wn_conv(c_out, c_in, k, config.conv_bias, rng);
                let conv2 = wn_conv(c_out, c_out, k, config.conv_bias, rng);
                let projection = (c_in != c_out)
                    .then(|| uniform(&[c_in, c_out], 1.0 / (c_in as f64).sqrt(), rng));
                LevelParams { conv1, conv2, projection }
            })
            .collect();

        let h = config.hidden_dim();
        let bound = 1.0 / (h as f64).sqrt();
        Ok(ModelParams {
            embedding,
            levels,
            query: uniform(&[h, config.num_labels], bound, rng),
            classifier_weight: uniform(&[config.projection_dim, h], bound, rng),
            classifier_bias: uniform(&[1, config.projection_dim], bound, rng),
        })
    }

    /// Stable (name, tensor) listing; the order matches [`ModelParams::tensors_mut`].
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("embedding".to_string(), &self.embedding)];
        for (l, level) in self.levels.iter().enumerate() {
            for (name, conv) in [("conv1", &level.conv1), ("conv2", &level.conv2)] {
                out.push((format!("level{l}.{name}.direction"), &conv.direction));
                out.push((format!("level{l}.{name}.gain"), &conv.gain));
                if let Some(b) = &conv.bias {
                    out.push((format!("level{l}.{name}.bias"), b));
                }
            }
            if let Some(p) = &level.projection {
                out.push((format!("level{l}.projection"), p));
            }
        }
        out.push(("attention.query".to_string(), &self.query));
        out.push(("classifier.weight".to_string(), &self.classifier_weight));
        out.push(("classifier.bias".to_string(), &self.classifier_bias));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.embedding];
        for level in &mut self.levels {
            for conv in [&mut level.conv1, &mut level.conv2] {
                out.push(&mut conv.direction);
                out.push(&mut conv.gain);
                if let Some(b) = &mut conv.bias {
                    out.push(b);
                }
            }
            if let Some(p) = &mut level.projection {
                out.push(p);
            }
        }
        out.push(&mut self.query);
        out.push(&mut self.classifier_weight);
        out.push(&mut self.classifier_bias);
        out
    }

    /// Rebuilds parameters from named tensors, checking every shape against `config`.
    pub fn from_named(config: &ModelConfig, mut tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        let mut rng = RngStream::new(0);
        let mut template = ModelParams::init(config, &mut rng)?;
        let names: Vec<(String, Vec<usize>)> = template
            .named()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        for ((name, shape), slot) in names.iter().zip(template.tensors_mut()) {
            let t = tensors
                .remove(name)
                .ok_or_else(|| Error::Config(format!("missing tensor {name}")))?;
            if t.shape() != &shape[..] {
                return Err(Error::Config(format!(
                    "tensor {name} has shape {:?}, config expects {shape:?}",
                    t.shape()
                )));
            }
            *slot = t.with_requires_grad(true);
        }
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::Config(format!("unexpected tensor {extra}")));
        }
        Ok(template)
    }

    pub fn zero_grads(&mut self) {
        for t in self.tensors_mut() {
            t.zero_grad();
        }
    }

    pub fn num_params(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Trainable parameter counts grouped by component.
    pub fn param_counts(&self) -> Vec<(String, usize)> {
        let mut out = vec![("embedding".to_string(), self.embedding.numel())];
        for (l, level) in self.levels.iter().enumerate() {
            let conv = |c: &WnConv| {
                c.direction.numel() + c.gain.numel() + c.bias.as_ref().map_or(0, Tensor::numel)
            };
            let n = conv(&level.conv1)
                + conv(&level.conv2)
                + level.projection.as_ref().map_or(0, Tensor::numel);
            out.push((format!("level{l}"), n));
        }
        out.push(("attention".to_string(), self.query.numel()));
        out.push((
            "classifier".to_string(),
            self.classifier_weight.numel() + self.classifier_bias.numel(),
        ));
        out
    }
}
