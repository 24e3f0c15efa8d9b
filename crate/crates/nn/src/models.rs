//! Classifier architectures: InceptionTime-style networks of depth 1, 2, 3 or 6,
//! LSTM-FCN and a one-dimensional ResNet18.

use candle_core::{DType, Tensor};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::layers::{
    dropout, global_avg_pool, max_pool3_same, max_pool3_stride2, BatchNorm1d, Conv1d, Linear, Lstm,
    ParamStore, TrainCtx,
};
use crate::{NnError, Result};

pub const INCEPTION_DEPTHS: [usize; 4] = [1, 2, 3, 6];
const INCEPTION_KERNELS: [usize; 3] = [40, 20, 10];
const BOTTLENECK: usize = 32;
const LSTM_UNITS: usize = 8;
const LSTM_DROPOUT: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Inception,
    LstmFcn,
    Resnet18,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub architecture: Architecture,
    /// Number of inception modules; set only for [`Architecture::Inception`].
    pub inception_depth: Option<usize>,
    pub base_channels: usize,
    pub num_classes: usize,
    pub input_length: usize,
    pub seed: u64,
}

impl ModelSpec {
    pub fn default_base_channels(architecture: Architecture) -> usize {
        match architecture {
            Architecture::Inception => 32,
            Architecture::LstmFcn => 128,
            // standard stage widths 64-128-256-512 halved
            Architecture::Resnet18 => 32,
        }
    }

    pub fn inception(depth: usize, num_classes: usize, input_length: usize, seed: u64) -> Self {
        Self {
            architecture: Architecture::Inception,
            inception_depth: Some(depth),
            base_channels: Self::default_base_channels(Architecture::Inception),
            num_classes,
            input_length,
            seed,
        }
    }

    pub fn lstm_fcn(num_classes: usize, input_length: usize, seed: u64) -> Self {
        Self {
            architecture: Architecture::LstmFcn,
            inception_depth: None,
            base_channels: Self::default_base_channels(Architecture::LstmFcn),
            num_classes,
            input_length,
            seed,
        }
    }

    pub fn resnet18(num_classes: usize, input_length: usize, seed: u64) -> Self {
        Self {
            architecture: Architecture::Resnet18,
            inception_depth: None,
            base_channels: Self::default_base_channels(Architecture::Resnet18),
            num_classes,
            input_length,
            seed,
        }
    }

    /// Name used in result records: `inceptiontime` for the full six-module network,
    /// `inceptiontime-<d>` for the reduced ones.
    pub fn name(&self) -> String {
        match (self.architecture, self.inception_depth) {
            (Architecture::Inception, Some(6)) => "inceptiontime".into(),
            (Architecture::Inception, Some(d)) => format!("inceptiontime-{d}"),
            (Architecture::Inception, None) => "inceptiontime".into(),
            (Architecture::LstmFcn, _) => "lstm_fcn".into(),
            (Architecture::Resnet18, _) => "resnet18".into(),
        }
    }

    /// Shortest series the architecture accepts.
    pub fn min_input_length(&self) -> usize {
        match self.architecture {
            Architecture::Inception => 3,
            // widest convolution of the FCN branch
            Architecture::LstmFcn => 8,
            // the stem and max-pool leave two positions for the residual stages
            Architecture::Resnet18 => 8,
        }
    }

    pub fn penultimate_dim(&self) -> usize {
        match self.architecture {
            Architecture::Inception => 4 * self.base_channels,
            Architecture::LstmFcn => LSTM_UNITS + self.base_channels,
            Architecture::Resnet18 => 8 * self.base_channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(NnError::InvalidSpec(msg));
        match (self.architecture, self.inception_depth) {
            (Architecture::Inception, Some(d)) if INCEPTION_DEPTHS.contains(&d) => {}
            (Architecture::Inception, d) => {
                return bad(format!("inception depth must be one of 1, 2, 3, 6, got {d:?}"))
            }
            (_, Some(_)) => return bad("inception_depth is only valid for inception".into()),
            _ => {}
        }
        if self.num_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if self.base_channels == 0 {
            return bad("base_channels must be positive".into());
        }
        if self.input_length < self.min_input_length() {
            return Err(NnError::InputTooShort {
                model: self.name(),
                length: self.input_length,
                minimum: self.min_input_length(),
            });
        }
        Ok(())
    }
}

/// Logits and penultimate features of a batch.
#[derive(Debug, Clone)]
pub struct ModelOutput {
    /// `(B, L)`, unnormalised.
    pub logits: Tensor,
    /// `(B, P)`, after global pooling and before the linear head.
    pub penultimate: Tensor,
}

struct InceptionModule {
    bottleneck: Option<Conv1d>,
    convs: Vec<Conv1d>,
    pool_conv: Conv1d,
    bn: BatchNorm1d,
}

impl InceptionModule {
    fn new(store: &mut ParamStore, name: &str, in_ch: usize, filters: usize) -> Result<Self> {
        let bottleneck = if in_ch > 1 {
            Some(Conv1d::same(store, &format!("{name}.bottleneck"), in_ch, BOTTLENECK, 1, 1, false)?)
        } else {
            None
        };
        let conv_in = if in_ch > 1 { BOTTLENECK } else { in_ch };
        let convs = INCEPTION_KERNELS
            .iter()
            .map(|&k| Conv1d::same(store, &format!("{name}.conv{k}"), conv_in, filters, k, 1, false))
            .collect::<Result<_>>()?;
        Ok(Self {
            bottleneck,
            convs,
            pool_conv: Conv1d::same(store, &format!("{name}.pool_conv"), in_ch, filters, 1, 1, false)?,
            bn: BatchNorm1d::new(store, &format!("{name}.bn"), 4 * filters)?,
        })
    }

    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let squeezed = match &self.bottleneck {
            Some(b) => b.forward(x)?,
            None => x.clone(),
        };
        let mut branches = self
            .convs
            .iter()
            .map(|c| c.forward(&squeezed))
            .collect::<Result<Vec<_>>>()?;
        branches.push(self.pool_conv.forward(&max_pool3_same(x)?)?);
        Ok(self.bn.forward(&Tensor::cat(&branches, 1)?, train)?.relu()?)
    }
}

struct Shortcut {
    conv: Conv1d,
    bn: BatchNorm1d,
}

struct Inception {
    modules: Vec<InceptionModule>,
    shortcuts: Vec<Shortcut>,
    head: Linear,
}

impl Inception {
    fn new(store: &mut ParamStore, spec: &ModelSpec) -> Result<Self> {
        let depth = spec.inception_depth.unwrap_or(6);
        let filters = spec.base_channels;
        let out_ch = 4 * filters;
        let mut modules = Vec::with_capacity(depth);
        let mut shortcuts = Vec::new();
        let mut in_ch = 1;
        let mut res_ch = 1;
        for d in 0..depth {
            modules.push(InceptionModule::new(store, &format!("inception{d}"), in_ch, filters)?);
            in_ch = out_ch;
            if d % 3 == 2 {
                let name = format!("shortcut{}", shortcuts.len());
                shortcuts.push(Shortcut {
                    conv: Conv1d::same(store, &format!("{name}.conv"), res_ch, out_ch, 1, 1, false)?,
                    bn: BatchNorm1d::new(store, &format!("{name}.bn"), out_ch)?,
                });
                res_ch = out_ch;
            }
        }
        Ok(Self {
            modules,
            shortcuts,
            head: Linear::new(store, "head", out_ch, spec.num_classes)?,
        })
    }

    fn forward(&self, x: &Tensor, train: bool) -> Result<ModelOutput> {
        let mut h = x.clone();
        let mut residual = x.clone();
        for (d, module) in self.modules.iter().enumerate() {
            h = module.forward(&h, train)?;
            if d % 3 == 2 {
                let s = &self.shortcuts[d / 3];
                let skip = s.bn.forward(&s.conv.forward(&residual)?, train)?;
                h = (h + skip)?.relu()?;
                residual = h.clone();
            }
        }
        let penultimate = global_avg_pool(&h)?;
        Ok(ModelOutput {
            logits: self.head.forward(&penultimate)?,
            penultimate,
        })
    }
}

struct ConvBlock {
    conv: Conv1d,
    bn: BatchNorm1d,
}

impl ConvBlock {
    fn new(store: &mut ParamStore, name: &str, in_ch: usize, out_ch: usize, k: usize, stride: usize) -> Result<Self> {
        Ok(Self {
            conv: Conv1d::same(store, &format!("{name}.conv"), in_ch, out_ch, k, stride, false)?,
            bn: BatchNorm1d::new(store, &format!("{name}.bn"), out_ch)?,
        })
    }

    /// Convolution and batch norm, without the rectifier.
    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        self.bn.forward(&self.conv.forward(x)?, train)
    }
}

struct LstmFcn {
    lstm: Lstm,
    blocks: Vec<ConvBlock>,
    head: Linear,
}

impl LstmFcn {
    fn new(store: &mut ParamStore, spec: &ModelSpec) -> Result<Self> {
        let w = spec.base_channels;
        let lstm = Lstm::new(store, "lstm", 1, LSTM_UNITS)?;
        let blocks = vec![
            ConvBlock::new(store, "fcn0", 1, w, 8, 1)?,
            ConvBlock::new(store, "fcn1", w, 2 * w, 5, 1)?,
            ConvBlock::new(store, "fcn2", 2 * w, w, 3, 1)?,
        ];
        Ok(Self {
            lstm,
            blocks,
            head: Linear::new(store, "head", LSTM_UNITS + w, spec.num_classes)?,
        })
    }

    fn forward(&self, x: &Tensor, train: bool, ctx: Option<&mut TrainCtx<'_>>) -> Result<ModelOutput> {
        // (B, 1, T) -> (B, T, 1): one scalar per step
        let seq = x.transpose(1, 2)?.contiguous()?;
        let recurrent = dropout(&self.lstm.forward(&seq)?, LSTM_DROPOUT, ctx)?;
        let mut h = x.clone();
        for block in &self.blocks {
            h = block.forward(&h, train)?.relu()?;
        }
        let conv = global_avg_pool(&h)?;
        let penultimate = Tensor::cat(&[recurrent, conv], 1)?;
        Ok(ModelOutput {
            logits: self.head.forward(&penultimate)?,
            penultimate,
        })
    }
}

struct BasicBlock {
    first: ConvBlock,
    second: ConvBlock,
    downsample: Option<ConvBlock>,
}

impl BasicBlock {
    fn new(store: &mut ParamStore, name: &str, in_ch: usize, out_ch: usize, stride: usize) -> Result<Self> {
        let downsample = if stride != 1 || in_ch != out_ch {
            Some(ConvBlock::new(store, &format!("{name}.down"), in_ch, out_ch, 1, stride)?)
        } else {
            None
        };
        Ok(Self {
            first: ConvBlock::new(store, &format!("{name}.a"), in_ch, out_ch, 3, stride)?,
            second: ConvBlock::new(store, &format!("{name}.b"), out_ch, out_ch, 3, 1)?,
            downsample,
        })
    }

    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let h = self.first.forward(x, train)?.relu()?;
        let h = self.second.forward(&h, train)?;
        let skip = match &self.downsample {
            Some(d) => d.forward(x, train)?,
            None => x.clone(),
        };
        Ok((h + skip)?.relu()?)
    }
}

struct Resnet18 {
    stem: ConvBlock,
    blocks: Vec<BasicBlock>,
    head: Linear,
}

impl Resnet18 {
    fn new(store: &mut ParamStore, spec: &ModelSpec) -> Result<Self> {
        let w = spec.base_channels;
        let stem = ConvBlock::new(store, "stem", 1, w, 7, 2)?;
        let mut blocks = Vec::new();
        let mut in_ch = w;
        for (stage, mult) in [1, 2, 4, 8].into_iter().enumerate() {
            let out_ch = w * mult;
            for b in 0..2 {
                let stride = if stage > 0 && b == 0 { 2 } else { 1 };
                blocks.push(BasicBlock::new(store, &format!("layer{stage}.{b}"), in_ch, out_ch, stride)?);
                in_ch = out_ch;
            }
        }
        Ok(Self {
            stem,
            blocks,
            head: Linear::new(store, "head", in_ch, spec.num_classes)?,
        })
    }

    fn forward(&self, x: &Tensor, train: bool) -> Result<ModelOutput> {
        let mut h = max_pool3_stride2(&self.stem.forward(x, train)?.relu()?)?;
        for block in &self.blocks {
            h = block.forward(&h, train)?;
        }
        let penultimate = global_avg_pool(&h)?;
        Ok(ModelOutput {
            logits: self.head.forward(&penultimate)?,
            penultimate,
        })
    }
}

enum Network {
    Inception(Inception),
    LstmFcn(LstmFcn),
    Resnet18(Resnet18),
}

/// A built classifier together with the store holding its weights.
pub struct Classifier {
    spec: ModelSpec,
    store: ParamStore,
    net: Network,
}

pub fn build_model(spec: &ModelSpec) -> Result<Classifier> {
    spec.validate()?;
    let mut store = ParamStore::new(spec.seed);
    let net = match spec.architecture {
        Architecture::Inception => Network::Inception(Inception::new(&mut store, spec)?),
        Architecture::LstmFcn => Network::LstmFcn(LstmFcn::new(&mut store, spec)?),
        Architecture::Resnet18 => Network::Resnet18(Resnet18::new(&mut store, spec)?),
    };
    Ok(Classifier {
        spec: spec.clone(),
        store,
        net,
    })
}

impl Classifier {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn parameter_count(&self) -> usize {
        self.store.parameter_count()
    }

    /// Converts a `(B, T)` batch into the `(B, 1, T)` input tensor.
    pub fn input_tensor(&self, batch: &Array2<f64>) -> Result<Tensor> {
        let (b, t) = batch.dim();
        if t != self.spec.input_length {
            return Err(NnError::LengthMismatch {
                found: t,
                expected: self.spec.input_length,
            });
        }
        let values: Vec<f32> = batch.iter().map(|&v| v as f32).collect();
        Ok(Tensor::from_vec(values, (b, 1, t), self.store.device())?)
    }

    /// Forward pass on a `(B, 1, T)` tensor. Passing a training context switches batch
    /// norm to batch statistics and enables dropout.
    pub fn forward_tensor(&self, x: &Tensor, ctx: Option<&mut TrainCtx<'_>>) -> Result<ModelOutput> {
        let train = ctx.is_some();
        match &self.net {
            Network::Inception(n) => n.forward(x, train),
            Network::LstmFcn(n) => n.forward(x, train, ctx),
            Network::Resnet18(n) => n.forward(x, train),
        }
    }

    /// Evaluation-mode logits and penultimate features for every row of `batch`.
    pub fn forward(&self, batch: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        const CHUNK: usize = 256;
        let n = batch.nrows();
        let mut logits = Array2::zeros((n, self.spec.num_classes));
        let mut feats = Array2::zeros((n, self.spec.penultimate_dim()));
        let mut start = 0;
        while start < n {
            let end = (start + CHUNK).min(n);
            let x = self.input_tensor(&batch.slice(ndarray::s![start..end, ..]).to_owned())?;
            let out = self.forward_tensor(&x, None)?;
            copy_rows(&out.logits, &mut logits, start)?;
            copy_rows(&out.penultimate, &mut feats, start)?;
            start = end;
        }
        Ok((logits, feats))
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        self.store.save(path)
    }

    /// Rebuilds the model of `spec` and loads its saved weights.
    pub fn load(spec: &ModelSpec, path: impl AsRef<std::path::Path>) -> Result<Self> {
        let model = build_model(spec)?;
        model.store.load(path)?;
        Ok(model)
    }
}

fn copy_rows(src: &Tensor, dst: &mut Array2<f64>, offset: usize) -> Result<()> {
    let rows: Vec<Vec<f32>> = src.to_dtype(DType::F32)?.to_vec2()?;
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            dst[(offset + i, j)] = f64::from(v);
        }
    }
    Ok(())
}
