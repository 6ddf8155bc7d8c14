use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

/// Reduction over the projection width of the classifier output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Max,
    Mean,
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub num_labels: usize,
    pub kernel_size: usize,
    /// Output channels of each residual level.
    pub channels: Vec<usize>,
    pub num_levels: usize,
    /// Explicit per-level dilations; `None` means `2^level`.
    #[serde(default)]
    pub dilations: Option<Vec<usize>>,
    pub projection_dim: usize,
    /// Per-channel bias after each convolution.
    #[serde(default = "default_true")]
    pub conv_bias: bool,
    pub dropout: f64,
    pub max_len: usize,
    pub activation: Activation,
    pub pooling: Pooling,
}

fn default_true() -> bool {
    true
}

impl ModelConfig {
    /// Config with the default hyperparameters for a given vocabulary and label space.
    pub fn new(vocab_size: usize, num_labels: usize) -> Self {
        ModelConfig {
            vocab_size,
            embed_dim: 100,
            num_labels,
            kernel_size: 3,
            channels: vec![32; 7],
            num_levels: 7,
            dilations: None,
            projection_dim: 4,
            conv_bias: true,
            dropout: 0.2,
            max_len: 2500,
            activation: Activation::Relu,
            pooling: Pooling::Max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("num_labels", self.num_labels),
            ("kernel_size", self.kernel_size),
            ("num_levels", self.num_levels),
            ("projection_dim", self.projection_dim),
            ("max_len", self.max_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.vocab_size < 2 {
            return Err(Error::Config("vocab_size must cover PAD and UNK".into()));
        }
        if self.channels.len() != self.num_levels {
            return Err(Error::Config(format!(
                "{} channel widths for {} levels",
                self.channels.len(),
                self.num_levels
            )));
        }
        if self.channels.contains(&0) {
            return Err(Error::Config("channel widths must be positive".into()));
        }
        if let Some(d) = &self.dilations {
            if d.len() != self.num_levels || d.contains(&0) {
                return Err(Error::Config(
                    "dilations must list one positive value per level".into(),
                ));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn dilation(&self, level: usize) -> usize {
        match &self.dilations {
            Some(d) => d[level],
            None => 1 << level,
        }
    }

    /// Width of the last hidden layer.
    pub fn hidden_dim(&self) -> usize {
        *self.channels.last().expect("validated config has levels")
    }

    pub fn level_input_dim(&self, level: usize) -> usize {
        if level == 0 {
            self.embed_dim
        } else {
            self.channels[level - 1]
        }
    }
}

/// Span of input positions that can influence one output position:
/// `1 + 2·(k−1)·Σ dilation(level)`, two convolutions per level.
pub fn receptive_field(config: &ModelConfig) -> usize {
    let span: usize = (0..config.num_levels).map(|l| config.dilation(l)).sum();
    1 + 2 * (config.kernel_size - 1) * span
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(kc: usize, levels: usize) -> ModelConfig {
        ModelConfig {
            kernel_size: kc,
            channels: vec![4; levels],
            num_levels: levels,
            ..ModelConfig::new(10, 3)
        }
    }

    #[test]
    fn receptive_field_values() {
        for l in 1..8 {
            assert_eq!(receptive_field(&cfg(1, l)), 1);
        }
        assert_eq!(receptive_field(&cfg(3, 3)), 29);
        assert_eq!(receptive_field(&cfg(3, 7)), 509);
    }

    #[test]
    fn receptive_field_monotone() {
        for kc in 1..6 {
            for l in 1..8 {
                let rf = receptive_field(&cfg(kc, l));
                assert!(receptive_field(&cfg(kc + 1, l)) >= rf);
                assert!(receptive_field(&cfg(kc, l + 1)) >= rf);
            }
        }
    }

    #[test]
    fn validation() {
        assert!(ModelConfig::new(10, 3).validate().is_ok());
        let mut c = ModelConfig::new(10, 3);
        c.num_levels = 3;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::new(10, 3);
        c.dropout = 1.0;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::new(10, 3);
        c.dilations = Some(vec![1; 7]);
        assert!(c.validate().is_ok());
        assert_eq!(c.dilation(5), 1);
        assert_eq!(ModelConfig::new(10, 3).dilation(5), 32);
    }
}
