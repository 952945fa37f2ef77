use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{NetworkConfig, NetworkError};
use crate::tensor::{read_checkpoint, write_checkpoint, BatchStats, Checkpoint, Graph, Tensor, Var};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Rows per graph in [`Model::predict`].
const PREDICT_CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; parameters tracked for gradients.
    Train,
    /// Running statistics; a deterministic function of the input.
    Eval,
}

/// Bias-free convolution followed by batch normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvBn {
    pub weight: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub stride: usize,
    pub padding: usize,
}

fn kaiming(shape: &[usize], fan_in: usize, gain: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let std = (gain / fan_in as f64).sqrt();
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *v = std * z;
    }
    t
}

impl ConvBn {
    fn new(cin: usize, cout: usize, kernel: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            weight: kaiming(&[cout, cin, kernel], cin * kernel, 2.0, rng),
            gamma: Tensor::full(&[cout], 1.0),
            beta: Tensor::zeros(&[cout]),
            running_mean: vec![0.0; cout],
            running_var: vec![1.0; cout],
            stride,
            padding: kernel / 2,
        }
    }

    fn forward(
        &self,
        g: &mut Graph,
        x: Var,
        params: &mut impl Iterator<Item = Var>,
        mode: Mode,
        stats: &mut Vec<BatchStats>,
    ) -> Result<Var, NetworkError> {
        let (w, gamma, beta) = (next(params)?, next(params)?, next(params)?);
        let y = g.conv1d(x, w, self.stride, self.padding)?;
        Ok(match mode {
            Mode::Train => {
                let (out, s) = g.batch_norm_train(y, gamma, beta, BN_EPS)?;
                stats.push(s);
                out
            }
            Mode::Eval => g.batch_norm_eval(y, gamma, beta, &self.running_mean, &self.running_var, BN_EPS)?,
        })
    }

    fn update_running(&mut self, s: &BatchStats) {
        let unbias = if s.count > 1 { s.count as f64 / (s.count - 1) as f64 } else { 1.0 };
        for c in 0..self.running_mean.len() {
            self.running_mean[c] = (1.0 - BN_MOMENTUM) * self.running_mean[c] + BN_MOMENTUM * s.mean[c];
            self.running_var[c] = (1.0 - BN_MOMENTUM) * self.running_var[c] + BN_MOMENTUM * s.var[c] * unbias;
        }
    }
}

fn next(params: &mut impl Iterator<Item = Var>) -> Result<Var, NetworkError> {
    params
        .next()
        .ok_or_else(|| NetworkError::Config("fewer parameter handles than parameters".into()))
}

/// `relu(conv2(relu(conv1(x))) + shortcut(x))`, where the shortcut is the
/// identity or a strided 1x1 projection.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualBlock {
    pub conv1: ConvBn,
    pub conv2: ConvBn,
    pub shortcut: Option<ConvBn>,
}

impl ResidualBlock {
    pub fn new(cin: usize, cout: usize, kernel: usize, stride: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::with_rng(cin, cout, kernel, stride, &mut rng)
    }

    fn with_rng(cin: usize, cout: usize, kernel: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        let conv1 = ConvBn::new(cin, cout, kernel, stride, rng);
        let conv2 = ConvBn::new(cout, cout, kernel, 1, rng);
        let shortcut = (cin != cout || stride != 1).then(|| ConvBn::new(cin, cout, 1, stride, rng));
        Self { conv1, conv2, shortcut }
    }

    fn conv_bns(&self) -> impl Iterator<Item = &ConvBn> {
        [&self.conv1, &self.conv2].into_iter().chain(self.shortcut.as_ref())
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        self.conv_bns().flat_map(|c| [&c.weight, &c.gamma, &c.beta]).collect()
    }

    /// Forward pass with parameters bound in [`ResidualBlock::parameters`]
    /// order.
    pub fn forward(&self, g: &mut Graph, x: Var, params: &[Var], mode: Mode) -> Result<(Var, Vec<BatchStats>), NetworkError> {
        let mut it = params.iter().copied();
        let mut stats = Vec::new();
        let y = self.forward_iter(g, x, &mut it, mode, &mut stats)?;
        Ok((y, stats))
    }

    fn forward_iter(
        &self,
        g: &mut Graph,
        x: Var,
        params: &mut impl Iterator<Item = Var>,
        mode: Mode,
        stats: &mut Vec<BatchStats>,
    ) -> Result<Var, NetworkError> {
        let h = self.conv1.forward(g, x, params, mode, stats)?;
        let h = g.relu(h);
        let h = self.conv2.forward(g, h, params, mode, stats)?;
        let skip = match &self.shortcut {
            Some(proj) => proj.forward(g, x, params, mode, stats)?,
            None => x,
        };
        let sum = g.add(h, skip)?;
        Ok(g.relu(sum))
    }
}

/// Output of one forward pass.
#[derive(Debug)]
pub struct ForwardPass {
    /// `[N, output_count]`.
    pub logits: Var,
    /// Deep feature `F`, `[N, feature_dim]`.
    pub features: Var,
    /// Parameter handles in [`Model::parameters`] order.
    pub params: Vec<Var>,
    /// Training-mode batch statistics, one per batch norm, in
    /// [`Model::apply_batch_stats`] order. Empty in eval mode.
    pub batch_stats: Vec<BatchStats>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: NetworkConfig,
    stem: ConvBn,
    blocks: Vec<ResidualBlock>,
    /// Final linear weights `W`, `[output_count, feature_dim]`.
    head: Tensor,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    network: NetworkConfig,
    #[serde(default)]
    meta: BTreeMap<String, String>,
}

impl Model {
    /// Kaiming-normal (fan-in) initialization of all convolutions, `1/fan_in`
    /// variance for the head, unit batch-norm scale and zero shift.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self, NetworkError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stem = ConvBn::new(1, config.widths[0], config.stem_kernel, config.stem_stride, &mut rng);
        let mut blocks = Vec::new();
        let mut cin = config.widths[0];
        for (s, (&c, &n)) in config.widths.iter().zip(&config.blocks_per_stage).enumerate() {
            for b in 0..n {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                blocks.push(ResidualBlock::with_rng(cin, c, config.kernel_size, stride, &mut rng));
                cin = c;
            }
        }
        let head = kaiming(&[config.output_count, config.feature_dim], config.feature_dim, 1.0, &mut rng);
        Ok(Self {
            config,
            stem,
            blocks,
            head,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn head(&self) -> &Tensor {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut Tensor {
        &mut self.head
    }

    pub fn blocks(&self) -> &[ResidualBlock] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [ResidualBlock] {
        &mut self.blocks
    }

    fn conv_bns(&self) -> Vec<&ConvBn> {
        let mut out = vec![&self.stem];
        for b in &self.blocks {
            out.extend(b.conv_bns());
        }
        out
    }

    fn conv_bns_mut(&mut self) -> Vec<&mut ConvBn> {
        split_conv_bns(&mut self.stem, &mut self.blocks)
    }

    /// Trainable tensors in a fixed order: for every conv/BN pair (stem,
    /// then each block's conv1, conv2, projection) its weight, gamma and
    /// beta; finally the head.
    pub fn parameters(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = self.conv_bns().into_iter().flat_map(|c| [&c.weight, &c.gamma, &c.beta]).collect();
        out.push(&self.head);
        out
    }

    /// Mutable counterpart of [`Model::parameters`], same order.
    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let Model { stem, blocks, head, .. } = self;
        let mut out = Vec::new();
        for c in split_conv_bns(stem, blocks) {
            out.push(&mut c.weight);
            out.push(&mut c.gamma);
            out.push(&mut c.beta);
        }
        out.push(head);
        out
    }

    pub fn param_count(&self) -> usize {
        self.parameters().iter().map(|t| t.len()).sum()
    }

    /// Forward pass binding the model's own parameters: tracked leaves in
    /// train mode, constants in eval mode.
    pub fn forward(&self, g: &mut Graph, input: Var, mode: Mode) -> Result<ForwardPass, NetworkError> {
        let params: Vec<Var> = self
            .parameters()
            .into_iter()
            .map(|t| match mode {
                Mode::Train => g.param(t.clone()),
                Mode::Eval => g.constant(t.clone()),
            })
            .collect();
        self.forward_with(g, input, &params, mode)
    }

    /// Forward pass using caller-supplied parameter handles, in
    /// [`Model::parameters`] order. `input` is `[N, 1, input_len]`.
    pub fn forward_with(&self, g: &mut Graph, input: Var, params: &[Var], mode: Mode) -> Result<ForwardPass, NetworkError> {
        let shape = g.value(input).shape().to_vec();
        match shape.as_slice() {
            [_, 1, l] if *l == self.config.input_len => {}
            [_, 1, l] => {
                return Err(NetworkError::InputLength {
                    expected: self.config.input_len,
                    actual: *l,
                })
            }
            _ => return Err(NetworkError::Config(format!("input must be [batch, 1, length], got {shape:?}"))),
        }
        if params.len() != self.parameters().len() {
            return Err(NetworkError::Config(format!(
                "expected {} parameter handles, got {}",
                self.parameters().len(),
                params.len()
            )));
        }
        let mut it = params.iter().copied();
        let mut stats = Vec::new();
        let x = self.stem.forward(g, input, &mut it, mode, &mut stats)?;
        let mut x = g.relu(x);
        for b in &self.blocks {
            x = b.forward_iter(g, x, &mut it, mode, &mut stats)?;
        }
        let features = g.global_average_pool(x)?;
        let w = next(&mut it)?;
        let wt = g.transpose(w)?;
        let logits = g.matmul(features, wt)?;
        Ok(ForwardPass {
            logits,
            features,
            params: params.to_vec(),
            batch_stats: stats,
        })
    }

    /// Folds training-mode batch statistics into the running estimates.
    pub fn apply_batch_stats(&mut self, stats: &[BatchStats]) {
        for (c, s) in self.conv_bns_mut().into_iter().zip(stats) {
            c.update_running(s);
        }
    }

    /// Eval-mode logits `[N, output_count]` and deep features
    /// `[N, feature_dim]` for preprocessed spectra.
    pub fn predict(&self, inputs: &[&[f64]]) -> Result<(Tensor, Tensor), NetworkError> {
        let mut logits = Vec::with_capacity(inputs.len() * self.config.output_count);
        let mut feats = Vec::with_capacity(inputs.len() * self.config.feature_dim);
        for chunk in inputs.chunks(PREDICT_CHUNK) {
            let mut g = Graph::new();
            let x = g.constant(batch_tensor(chunk, self.config.input_len)?);
            let out = self.forward(&mut g, x, Mode::Eval)?;
            logits.extend_from_slice(g.value(out.logits).data());
            feats.extend_from_slice(g.value(out.features).data());
        }
        let n = inputs.len();
        Ok((
            Tensor::new(vec![n, self.config.output_count], logits)?,
            Tensor::new(vec![n, self.config.feature_dim], feats)?,
        ))
    }

    fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut names = vec!["stem".to_string()];
        for (i, b) in self.blocks.iter().enumerate() {
            names.push(format!("blocks.{i}.conv1"));
            names.push(format!("blocks.{i}.conv2"));
            if b.shortcut.is_some() {
                names.push(format!("blocks.{i}.shortcut"));
            }
        }
        let mut out = Vec::new();
        for (name, c) in names.iter().zip(self.conv_bns()) {
            out.push((format!("{name}.weight"), c.weight.clone()));
            out.push((format!("{name}.gamma"), c.gamma.clone()));
            out.push((format!("{name}.beta"), c.beta.clone()));
            out.push((format!("{name}.running_mean"), Tensor::from_vec(c.running_mean.clone())));
            out.push((format!("{name}.running_var"), Tensor::from_vec(c.running_var.clone())));
        }
        out.push(("head.weight".into(), self.head.clone()));
        out
    }

    pub fn to_checkpoint(&self, meta: &BTreeMap<String, String>) -> Checkpoint {
        let header = CheckpointHeader {
            network: self.config.clone(),
            meta: meta.clone(),
        };
        Checkpoint {
            header: toml::to_string(&header).expect("header serializes"),
            tensors: self.named_tensors(),
        }
    }

    /// Rebuilds a model, checking every tensor name and shape against the
    /// header's config.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<(Self, BTreeMap<String, String>), NetworkError> {
        let header: CheckpointHeader = toml::from_str(&ckpt.header).map_err(|e| NetworkError::Checkpoint(e.to_string()))?;
        let mut model = Self::new(header.network, 0)?;
        let expected = model.named_tensors();
        if expected.len() != ckpt.tensors.len() {
            return Err(NetworkError::Checkpoint(format!(
                "expected {} tensors, found {}",
                expected.len(),
                ckpt.tensors.len()
            )));
        }
        for ((want_name, want), (name, t)) in expected.iter().zip(&ckpt.tensors) {
            if want_name != name || want.shape() != t.shape() {
                return Err(NetworkError::Checkpoint(format!(
                    "expected {want_name} {:?}, found {name} {:?}",
                    want.shape(),
                    t.shape()
                )));
            }
        }
        let mut tensors = ckpt.tensors.iter().map(|(_, t)| t);
        for c in model.conv_bns_mut() {
            c.weight = tensors.next().unwrap().clone();
            c.gamma = tensors.next().unwrap().clone();
            c.beta = tensors.next().unwrap().clone();
            c.running_mean = tensors.next().unwrap().data().to_vec();
            c.running_var = tensors.next().unwrap().data().to_vec();
        }
        model.head = tensors.next().unwrap().clone();
        Ok((model, header.meta))
    }

    pub fn save(&self, path: &Path, meta: &BTreeMap<String, String>) -> Result<(), NetworkError> {
        let io = |source| NetworkError::Io {
            path: path.to_path_buf(),
            source,
        };
        let file = File::create(path).map_err(io)?;
        write_checkpoint(BufWriter::new(file), &self.to_checkpoint(meta))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, BTreeMap<String, String>), NetworkError> {
        let file = File::open(path).map_err(|source| NetworkError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_checkpoint(&read_checkpoint(BufReader::new(file))?)
    }
}

fn split_conv_bns<'a>(stem: &'a mut ConvBn, blocks: &'a mut [ResidualBlock]) -> Vec<&'a mut ConvBn> {
    let mut out = vec![stem];
    for b in blocks {
        out.push(&mut b.conv1);
        out.push(&mut b.conv2);
        if let Some(s) = &mut b.shortcut {
            out.push(s);
        }
    }
    out
}

/// Stacks equally long spectra into a `[N, 1, len]` batch.
pub fn batch_tensor(inputs: &[&[f64]], len: usize) -> Result<Tensor, NetworkError> {
    let mut data = Vec::with_capacity(inputs.len() * len);
    for x in inputs {
        if x.len() != len {
            return Err(NetworkError::InputLength {
                expected: len,
                actual: x.len(),
            });
        }
        data.extend_from_slice(x);
    }
    Ok(Tensor::new(vec![inputs.len(), 1, len], data)?)
}

/// Euclidean norm `‖F‖` of every row of a `[N, D]` feature matrix.
pub fn feature_norm(features: &Tensor) -> Vec<f64> {
    features.rows().map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).collect()
}
