//! The DCAN architecture: embedding, stacked residual dilated convolutions,
//! label attention and a pooled linear classifier.

mod config;
pub mod forward;
mod params;

pub use config::{receptive_field, Activation, ModelConfig, Pooling};
pub use forward::{
    classify_pool, embed, label_attention, model_forward, residual_block, ForwardVars, ParamVars,
};
pub use params::{LevelParams, ModelParams, WnConv};

use crate::error::Result;
use crate::numcore::{RngStream, Tape};

/// A configured network with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Dcan {
    pub config: ModelConfig,
    pub params: ModelParams,
}

/// Loss value and per-tensor gradients for one example, ordered like
/// [`ModelParams::tensors_mut`].
#[derive(Clone, Debug)]
pub struct ExampleGrads {
    pub loss: f64,
    pub grads: Vec<Vec<f64>>,
}

impl Dcan {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = ModelParams::init(&config, &mut RngStream::new(seed).fork(&[0x1417]))?;
        Ok(Dcan { config, params })
    }

    /// Label probabilities in inference mode.
    pub fn predict(&self, token_ids: &[usize], mask: Option<&[bool]>) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = ParamVars::record(&mut tape, &self.params);
        let mut rng = RngStream::new(0);
        let out = model_forward(&mut tape, token_ids, mask, &vars, &self.config, false, &mut rng)?;
        Ok(tape.value(out.probs).data().to_vec())
    }

    /// Summed binary cross-entropy against `targets` and its gradient.
    pub fn loss_and_grads(
        &self,
        token_ids: &[usize],
        targets: &[f64],
        training: bool,
        rng: &mut RngStream,
    ) -> Result<ExampleGrads> {
        let mut tape = Tape::new();
        let vars = ParamVars::record(&mut tape, &self.params);
        let out = model_forward(&mut tape, token_ids, None, &vars, &self.config, training, rng)?;
        let loss = tape.bce_with_logits(out.logits, targets)?;
        let g = tape.backward(loss)?;
        let sizes: Vec<usize> = self.params.named().iter().map(|(_, t)| t.numel()).collect();
        let grads = vars
            .ordered()
            .into_iter()
            .zip(sizes)
            .map(|(v, n)| g.get_or_zeros(v, n))
            .collect();
        Ok(ExampleGrads {
            loss: tape.value(loss).data()[0],
            grads,
        })
    }
}
