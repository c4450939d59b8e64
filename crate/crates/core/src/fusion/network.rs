use serde::{Deserialize, Serialize};

use super::ParamSet;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::numcore::{Graph, Tensor, Var};
use crate::rng::Pcg32;

const NORM_EPS: f64 = 1e-12;

/// Conv blocks (conv k×k, bias, relu, avgpool) then global average pool and
/// a fully-connected layer to `feature_width`. Inputs are standardized
/// with the fixed `input_mean` and `input_std` first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub input_size: usize,
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub pool: usize,
    pub feature_width: usize,
    pub input_mean: f64,
    pub input_std: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            input_size: 64,
            channels: vec![8, 16, 32],
            kernel: 3,
            pool: 2,
            feature_width: 64,
            input_mean: 0.5,
            input_std: 0.25,
        }
    }
}

impl EncoderConfig {
    /// Spatial side after the last block.
    pub fn final_side(&self) -> Result<usize> {
        let degenerate = self.channels.is_empty() || self.kernel == 0 || self.pool == 0 || self.feature_width == 0;
        if degenerate || !(self.input_std > 0.0 && self.input_mean.is_finite()) {
            return Err(Error::InvalidArgument(format!("degenerate encoder config {self:?}")));
        }
        let mut side = self.input_size;
        for _ in &self.channels {
            if side < self.kernel || (side - self.kernel + 1) < self.pool {
                return Err(Error::InvalidArgument(format!(
                    "input {} too small for {} conv blocks",
                    self.input_size,
                    self.channels.len()
                )));
            }
            side = (side - self.kernel + 1) / self.pool;
        }
        Ok(side)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub params: ParamSet,
}

impl Encoder {
    pub fn new(config: EncoderConfig, rng: &mut Pcg32) -> Result<Self> {
        config.final_side()?;
        let mut params = ParamSet::new();
        let mut c_in = 3;
        for (i, &c_out) in config.channels.iter().enumerate() {
            params.push_conv(&format!("conv{i}"), c_in, c_out, config.kernel, rng);
            c_in = c_out;
        }
        params.push_linear("fc", c_in, config.feature_width, rng);
        Ok(Encoder { config, params })
    }

    /// `image[3 × s × s]` to features `[1 × F]`.
    pub fn forward(&self, g: &mut Graph, p: &[Var], image: Var) -> Result<Var> {
        let s = self.config.input_size;
        if g.value(image).shape() != [3, s, s] {
            return Err(Error::Shape(format!(
                "encoder expects [3, {s}, {s}], got {:?}",
                g.value(image).shape()
            )));
        }
        let mut x = image;
        for i in 0..self.config.channels.len() {
            x = g.conv2d(x, p[2 * i], 1)?;
            x = g.add_channel_bias(x, p[2 * i + 1])?;
            x = g.relu(x)?;
            x = g.avgpool(x, (self.config.pool, self.config.pool))?;
        }
        let shape = g.value(x).shape().to_vec();
        x = g.avgpool(x, (shape[1], shape[2]))?;
        x = g.reshape(x, &[1, shape[0]])?;
        let n = self.config.channels.len();
        x = g.matmul(x, p[2 * n])?;
        g.add_row_bias(x, p[2 * n + 1])
    }
}

pub fn image_tensor(image: &Image) -> Result<Tensor> {
    Tensor::new(vec![3, image.height, image.width], image.data.clone())
}

impl Encoder {
    /// Standardized `[3, h, w]` input tensor of `image`.
    pub fn input(&self, image: &Image) -> Result<Tensor> {
        let (m, s) = (self.config.input_mean, self.config.input_std);
        Ok(image_tensor(image)?.map(|v| (v - m) / s))
    }
}

/// Feature vector of one image, outside any training graph.
pub fn encode(enc: &Encoder, image: &Image) -> Result<Tensor> {
    let mut g = Graph::new();
    let p = enc.params.bind(&mut g);
    let x = g.constant(enc.input(image)?);
    let f = enc.forward(&mut g, &p, x)?;
    let width = enc.config.feature_width;
    g.value(f).reshape(&[width])
}

/// Two fully-connected layers with relu between, then row-wise L2 normalisation.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    pub in_width: usize,
    pub hidden: usize,
    pub out_width: usize,
    pub params: ParamSet,
}

impl ProjectionHead {
    pub fn new(in_width: usize, hidden: usize, out_width: usize, rng: &mut Pcg32) -> Self {
        let mut params = ParamSet::new();
        params.push_linear("fc1", in_width, hidden, rng);
        params.push_linear("fc2", hidden, out_width, rng);
        ProjectionHead { in_width, hidden, out_width, params }
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var], features: Var) -> Result<Var> {
        let h = g.matmul(features, p[0])?;
        let h = g.add_row_bias(h, p[1])?;
        let h = g.relu(h)?;
        let z = g.matmul(h, p[2])?;
        let z = g.add_row_bias(z, p[3])?;
        g.l2_normalize(z, 1, NORM_EPS)
    }
}

/// One fully-connected layer to class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    pub in_width: usize,
    pub classes: usize,
    pub params: ParamSet,
}

impl ClassifierHead {
    pub fn new(in_width: usize, classes: usize, rng: &mut Pcg32) -> Self {
        let mut params = ParamSet::new();
        params.push_linear("fc", in_width, classes, rng);
        ClassifierHead { in_width, classes, params }
    }

    pub fn from_weights(weight: Tensor, bias: Tensor) -> Result<Self> {
        let (in_width, classes) = weight.dims2("classifier weight")?;
        if bias.shape() != [classes] {
            return Err(Error::Shape(format!("bias {:?} for {classes} classes", bias.shape())));
        }
        let mut params = ParamSet::new();
        params.push("fc.weight", weight);
        params.push("fc.bias", bias);
        Ok(ClassifierHead { in_width, classes, params })
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var], features: Var) -> Result<Var> {
        let x = g.matmul(features, p[0])?;
        g.add_row_bias(x, p[1])
    }
}

/// Logits of one fused feature vector.
pub fn classify(head: &ClassifierHead, f: &[f64]) -> Result<Vec<f64>> {
    if f.len() != head.in_width {
        return Err(Error::Shape(format!("classifier expects width {}, got {}", head.in_width, f.len())));
    }
    let mut g = Graph::new();
    let p = head.params.bind(&mut g);
    let x = g.leaf(Tensor::new(vec![1, f.len()], f.to_vec())?);
    let y = head.forward(&mut g, &p, x)?;
    Ok(g.value(y).data().to_vec())
}

/// Mean of `logsumexp(logits_i) - logits_i[label_i]` over the rows of `logits[n × C]`.
pub fn cross_entropy(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    let (n, c) = g.value(logits).dims2("cross_entropy")?;
    if labels.len() != n || n == 0 {
        return Err(Error::Shape(format!("{} labels for {n} logit rows", labels.len())));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::InvalidArgument(format!("label {l} out of range for {c} classes")));
    }
    let lse = g.logsumexp(logits, 1)?;
    let idx: Vec<usize> = labels.iter().enumerate().map(|(i, &l)| i * c + l).collect();
    let picked = g.gather(logits, &idx)?;
    let per_row = g.sub(lse, picked)?;
    let total = g.sum(per_row)?;
    g.scale(total, 1.0 / n as f64)
}

pub fn cross_entropy_value(logits: &[f64], label: usize) -> Result<f64> {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::new(vec![1, logits.len()], logits.to_vec())?);
    let l = cross_entropy(&mut g, x, &[label])?;
    Ok(g.value(l).item())
}
