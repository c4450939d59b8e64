use rand::Rng;

use crate::error::{Error, Result};
use crate::numcore::{adam_step, AdamState, Gradients, Graph, Tensor, Var};

/// Named parameter tensors of one network module, in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet { names: Vec::new(), tensors: Vec::new() }
    }

    pub(crate) fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.names.push(name.into());
        self.tensors.push(t);
    }

    /// Fully-connected weight `[fan_in × fan_out]` and bias, both uniform in `±1/sqrt(fan_in)`.
    pub(crate) fn push_linear(&mut self, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) {
        let bound = 1.0 / (fan_in as f64).sqrt();
        self.push(format!("{name}.weight"), Tensor::uniform(&[fan_in, fan_out], bound, rng));
        self.push(format!("{name}.bias"), Tensor::uniform(&[fan_out], bound, rng));
    }

    pub(crate) fn push_conv(&mut self, name: &str, c_in: usize, c_out: usize, k: usize, rng: &mut impl Rng) {
        let bound = 1.0 / ((c_in * k * k) as f64).sqrt();
        self.push(format!("{name}.weight"), Tensor::uniform(&[c_out, c_in, k, k], bound, rng));
        self.push(format!("{name}.bias"), Tensor::uniform(&[c_out], bound, rng));
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }
    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }
    pub fn names(&self) -> &[String] {
        &self.names
    }
    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }
    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// `(name, shape)` pairs; two modules are architecturally identical iff these match.
    pub fn manifest(&self) -> Vec<(String, Vec<usize>)> {
        self.names.iter().cloned().zip(self.tensors.iter().map(|t| t.shape().to_vec())).collect()
    }

    pub fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.tensors.iter().map(|t| g.leaf(t.clone())).collect()
    }

    pub fn gradients(&self, vars: &[Var], grads: &Gradients) -> Vec<Tensor> {
        vars.iter().zip(&self.tensors).map(|(&v, t)| grads.get_or_zeros(v, t)).collect()
    }

    pub fn prefixed(&self, prefix: &str) -> impl Iterator<Item = (String, &Tensor)> + '_ {
        let prefix = prefix.to_string();
        self.names.iter().zip(&self.tensors).map(move |(n, t)| (format!("{prefix}{n}"), t))
    }

    /// Replace every tensor from `lookup(name)`, requiring identical shapes.
    pub(crate) fn load_from<'a>(&mut self, lookup: impl Fn(&str) -> Option<&'a Tensor>) -> Result<()> {
        for (name, t) in self.names.iter().zip(self.tensors.iter_mut()) {
            let src = lookup(name).ok_or_else(|| Error::CheckpointMismatch(format!("missing tensor {name}")))?;
            if src.shape() != t.shape() {
                return Err(Error::CheckpointMismatch(format!(
                    "tensor {name}: checkpoint {:?}, architecture {:?}",
                    src.shape(),
                    t.shape()
                )));
            }
            *t = src.clone();
        }
        Ok(())
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

/// A parameter set with its own Adam moments. Adam is elementwise, so
/// optimising modules separately equals optimising their union.
#[derive(Debug, Clone)]
pub struct Trainable {
    pub params: ParamSet,
    pub state: AdamState,
}

impl Trainable {
    pub fn new(params: ParamSet, base_lr: f64) -> Self {
        let state = AdamState::new(params.tensors(), base_lr);
        Trainable { params, state }
    }

    pub fn step(&mut self, vars: &[Var], grads: &Gradients, lr: f64) -> Result<()> {
        let g = self.params.gradients(vars, grads);
        adam_step(&mut self.params.tensors, &g, &mut self.state, lr)
    }
}
