//! The reference semantics packaged as a backend, so the harness can be
//! exercised against a known implementation.

use nnsem_core::ir::{KindTag, LayerKind, LayerNode};
use nnsem_core::rng::Rng;
use nnsem_core::semantics::{eval_layer, eval_model_hooked, sample_dropout};
use nnsem_core::{Bindings, ModelGraph, PrecondViolation, Tensor};

use crate::json::OutputDoc;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReferenceBackend {
    /// Include every node's output.
    pub trace: bool,
    /// Seed of the dropout masks.
    pub seed: u64,
    /// Add one to every output element of layers of this kind.
    pub perturb: Option<KindTag>,
}

impl ReferenceBackend {
    /// Prediction with dropout in training mode.
    pub fn predict(&self, g: &ModelGraph, inputs: &Bindings) -> Result<OutputDoc, PrecondViolation> {
        let mut rng = Rng::new(self.seed);
        let mut hook = |node: &LayerNode, args: &[Tensor]| {
            let sampled = match node.kind {
                LayerKind::Dropout { rate } => Some(Ok(sample_dropout(&args[0], rate, &mut rng))),
                _ => None,
            };
            if Some(node.kind.tag()) != self.perturb {
                return sampled;
            }
            let base = sampled.unwrap_or_else(|| eval_layer(node, args));
            Some(base.map(|t| t.map(|x| x + 1.0)))
        };
        let trace = eval_model_hooked(g, inputs, &mut hook)?;
        let output = trace[g.output()].clone();
        Ok(OutputDoc { output: Some(output), trace: self.trace.then_some(trace), error: None })
    }
}
