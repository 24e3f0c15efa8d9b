//! Seeded building blocks on top of candle tensors.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Result;

/// Owns every trainable parameter and every running-statistics buffer of a model.
/// Initial values are drawn in registration order from one seeded stream.
pub struct ParamStore {
    entries: Vec<Entry>,
    rng: ChaCha8Rng,
    device: Device,
}

struct Entry {
    name: String,
    var: Var,
    trainable: bool,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            entries: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            device: Device::Cpu,
        }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn register(&mut self, name: String, values: Vec<f32>, shape: &[usize], trainable: bool) -> Result<Var> {
        let var = Var::from_tensor(&Tensor::from_vec(values, shape, &self.device)?)?;
        self.entries.push(Entry {
            name,
            var: var.clone(),
            trainable,
        });
        Ok(var)
    }

    /// `U(-bound, bound)` entries.
    pub fn uniform(&mut self, name: impl Into<String>, shape: &[usize], bound: f64) -> Result<Var> {
        let count = shape.iter().product();
        let values = (0..count)
            .map(|_| self.rng.random_range(-bound..bound) as f32)
            .collect();
        self.register(name.into(), values, shape, true)
    }

    pub fn constant(&mut self, name: impl Into<String>, shape: &[usize], value: f32) -> Result<Var> {
        let count = shape.iter().product();
        self.register(name.into(), vec![value; count], shape, true)
    }

    pub fn buffer(&mut self, name: impl Into<String>, shape: &[usize], value: f32) -> Result<Var> {
        let count = shape.iter().product();
        self.register(name.into(), vec![value; count], shape, false)
    }

    pub fn trainable(&self) -> Vec<Var> {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.var.clone())
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.var.elem_count())
            .sum()
    }

    /// Writes parameters and buffers in safetensors format.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let map: HashMap<String, Tensor> = self
            .entries
            .iter()
            .map(|e| (e.name.clone(), e.var.as_tensor().clone()))
            .collect();
        candle_core::safetensors::save(&map, path)?;
        Ok(())
    }

    /// Restores values saved by [`ParamStore::save`] from a model of the same spec.
    pub fn load(&self, path: impl AsRef<Path>) -> Result<()> {
        let map = candle_core::safetensors::load(path, &self.device)?;
        for e in &self.entries {
            let t = map
                .get(&e.name)
                .ok_or_else(|| crate::NnError::Checkpoint(format!("missing tensor `{}`", e.name)))?;
            if t.dims() != e.var.dims() {
                return Err(crate::NnError::Checkpoint(format!(
                    "tensor `{}` has shape {:?}, expected {:?}",
                    e.name,
                    t.dims(),
                    e.var.dims()
                )));
            }
            e.var.set(t)?;
        }
        Ok(())
    }

    /// Flattened copy of every value, for determinism checks.
    pub fn snapshot(&self) -> Result<Vec<(String, Vec<f32>)>> {
        self.entries
            .iter()
            .map(|e| Ok((e.name.clone(), e.var.as_tensor().flatten_all()?.to_vec1()?)))
            .collect()
    }
}

/// Training-time state threaded through a forward pass.
pub struct TrainCtx<'a> {
    pub rng: &'a mut ChaCha8Rng,
}

/// 1-D convolution with explicit, possibly asymmetric, zero padding.
pub struct Conv1d {
    weight: Var,
    bias: Option<Var>,
    pad_left: usize,
    pad_right: usize,
    stride: usize,
}

impl Conv1d {
    /// Output length equals `ceil(T / stride)`, with the extra padding on the right for
    /// even kernels.
    pub fn same(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        bias: bool,
    ) -> Result<Self> {
        let bound = 1.0 / ((in_ch * kernel) as f64).sqrt();
        let weight = store.uniform(format!("{name}.weight"), &[out_ch, in_ch, kernel], bound)?;
        let bias = if bias {
            Some(store.uniform(format!("{name}.bias"), &[out_ch], bound)?)
        } else {
            None
        };
        let total = kernel - 1;
        Ok(Self {
            weight,
            bias,
            pad_left: total / 2,
            pad_right: total - total / 2,
            stride,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let x = if self.pad_left + self.pad_right > 0 {
            x.pad_with_zeros(D::Minus1, self.pad_left, self.pad_right)?
        } else {
            x.clone()
        };
        let y = x.conv1d(self.weight.as_tensor(), 0, self.stride, 1, 1)?;
        match &self.bias {
            Some(b) => Ok(y.broadcast_add(&b.as_tensor().reshape((1, (), 1))?)?),
            None => Ok(y),
        }
    }
}

pub struct BatchNorm1d {
    gamma: Var,
    beta: Var,
    running_mean: Var,
    running_var: Var,
}

const BN_MOMENTUM: f64 = 0.1;
const BN_EPS: f64 = 1e-5;

impl BatchNorm1d {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.constant(format!("{name}.weight"), &[channels], 1.0)?,
            beta: store.constant(format!("{name}.bias"), &[channels], 0.0)?,
            running_mean: store.buffer(format!("{name}.running_mean"), &[channels], 0.0)?,
            running_var: store.buffer(format!("{name}.running_var"), &[channels], 1.0)?,
        })
    }

    /// Normalises `(B, C, T)` input over batch and time. Training mode uses batch
    /// statistics and updates the running estimates.
    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let (mean, var) = if train {
            let (b, _, t) = x.dims3()?;
            let mean = x.mean_keepdim(0)?.mean_keepdim(2)?;
            let centred = x.broadcast_sub(&mean)?;
            let var = centred.sqr()?.mean_keepdim(0)?.mean_keepdim(2)?;
            let n = (b * t) as f64;
            let unbiased = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
            let rm = self.running_mean.as_tensor();
            let rv = self.running_var.as_tensor();
            let new_mean = ((rm * (1.0 - BN_MOMENTUM))? + (mean.detach().flatten_all()? * BN_MOMENTUM)?)?;
            let new_var =
                ((rv * (1.0 - BN_MOMENTUM))? + (var.detach().flatten_all()? * (BN_MOMENTUM * unbiased))?)?;
            self.running_mean.set(&new_mean)?;
            self.running_var.set(&new_var)?;
            (mean, var)
        } else {
            (
                self.running_mean.as_tensor().reshape((1, (), 1))?,
                self.running_var.as_tensor().reshape((1, (), 1))?,
            )
        };
        let normed = x
            .broadcast_sub(&mean)?
            .broadcast_div(&(var + BN_EPS)?.sqrt()?)?;
        Ok(normed
            .broadcast_mul(&self.gamma.as_tensor().reshape((1, (), 1))?)?
            .broadcast_add(&self.beta.as_tensor().reshape((1, (), 1))?)?)
    }
}

pub struct Linear {
    weight: Var,
    bias: Var,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize) -> Result<Self> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Ok(Self {
            weight: store.uniform(format!("{name}.weight"), &[out_dim, in_dim], bound)?,
            bias: store.uniform(format!("{name}.bias"), &[out_dim], bound)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x
            .matmul(&self.weight.as_tensor().t()?)?
            .broadcast_add(self.bias.as_tensor())?)
    }
}

fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(((x * 0.5)?.tanh()? + 1.0)?.affine(0.5, 0.0)?)
}

/// Single-layer LSTM over a `(B, T, input)` sequence, returning the last hidden state.
pub struct Lstm {
    w_ih: Var,
    w_hh: Var,
    b_ih: Var,
    b_hh: Var,
    hidden: usize,
}

impl Lstm {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize) -> Result<Self> {
        let bound = 1.0 / (hidden as f64).sqrt();
        Ok(Self {
            w_ih: store.uniform(format!("{name}.weight_ih"), &[4 * hidden, input], bound)?,
            w_hh: store.uniform(format!("{name}.weight_hh"), &[4 * hidden, hidden], bound)?,
            b_ih: store.uniform(format!("{name}.bias_ih"), &[4 * hidden], bound)?,
            b_hh: store.uniform(format!("{name}.bias_hh"), &[4 * hidden], bound)?,
            hidden,
        })
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    pub fn forward(&self, seq: &Tensor) -> Result<Tensor> {
        let (b, t, input) = seq.dims3()?;
        let h_dim = self.hidden;
        // input projections for every step at once
        let bias = (self.b_ih.as_tensor() + self.b_hh.as_tensor())?;
        let projected = seq
            .reshape((b * t, input))?
            .matmul(&self.w_ih.as_tensor().t()?)?
            .broadcast_add(&bias)?
            .reshape((b, t, 4 * h_dim))?;
        let w_hh_t = self.w_hh.as_tensor().t()?;
        let mut h = Tensor::zeros((b, h_dim), DType::F32, seq.device())?;
        let mut c = h.clone();
        for step in 0..t {
            let gates = (projected.narrow(1, step, 1)?.squeeze(1)? + h.matmul(&w_hh_t)?)?;
            let i = sigmoid(&gates.narrow(1, 0, h_dim)?)?;
            let f = sigmoid(&gates.narrow(1, h_dim, h_dim)?)?;
            let g = gates.narrow(1, 2 * h_dim, h_dim)?.tanh()?;
            let o = sigmoid(&gates.narrow(1, 3 * h_dim, h_dim)?)?;
            c = ((f * &c)? + (i * g)?)?;
            h = (o * c.tanh()?)?;
        }
        Ok(h)
    }
}

/// Inverted dropout with a mask drawn from the training stream.
pub fn dropout(x: &Tensor, rate: f64, ctx: Option<&mut TrainCtx<'_>>) -> Result<Tensor> {
    let Some(ctx) = ctx else {
        return Ok(x.clone());
    };
    if rate <= 0.0 {
        return Ok(x.clone());
    }
    let keep = 1.0 - rate;
    let mask: Vec<f32> = (0..x.elem_count())
        .map(|_| if ctx.rng.random_bool(keep) { (1.0 / keep) as f32 } else { 0.0 })
        .collect();
    let mask = Tensor::from_vec(mask, x.dims(), x.device())?;
    Ok((x * mask)?)
}

/// Max over a window of 3 with stride 1 and "same" length; edges repeat the border value,
/// which matches padding with negative infinity.
pub fn max_pool3_same(x: &Tensor) -> Result<Tensor> {
    let t = x.dim(D::Minus1)?;
    if t == 1 {
        return Ok(x.clone());
    }
    let left = Tensor::cat(&[x.narrow(D::Minus1, 0, 1)?, x.narrow(D::Minus1, 0, t - 1)?], D::Minus1)?;
    let right = Tensor::cat(&[x.narrow(D::Minus1, 1, t - 1)?, x.narrow(D::Minus1, t - 1, 1)?], D::Minus1)?;
    Ok(x.maximum(&left)?.maximum(&right)?)
}

/// Window 3, stride 2, padding 1: output length `ceil(T / 2)`.
pub fn max_pool3_stride2(x: &Tensor) -> Result<Tensor> {
    let pooled = max_pool3_same(x)?;
    let t = x.dim(D::Minus1)?;
    let idx: Vec<u32> = (0..t as u32).step_by(2).collect();
    let idx = Tensor::new(idx.as_slice(), x.device())?;
    Ok(pooled.index_select(&idx, 2)?)
}

/// Mean over the time axis of `(B, C, T)`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    Ok(x.mean(D::Minus1)?)
}
