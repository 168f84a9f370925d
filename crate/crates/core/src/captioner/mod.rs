//! Soft-attention LSTM caption decoder with optional attention supervision.

mod checkpoint;
mod decode;
mod model;
mod optim;
mod train;

use std::collections::{BTreeSet, HashMap};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Tensor};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CheckpointError, CHECKPOINT_VERSION};
pub use decode::{decode_forced, decode_greedy, ForcedDecode, GreedyDecode};
pub use model::{
    attend, attention_loss, attention_loss_value, caption_loss, caption_loss_value, init_state,
    lstm_step, run_step, total_loss, total_loss_graph, word_distribution, LossBreakdown, LossNodes,
    ParamNodes, StepOutput, StepState, ATTN_LOG_FLOOR,
};
pub use optim::{Adam, AdamConfig};
pub use train::{train, EpochStats, SupervisionMode, TrainConfig, TrainError, TrainItem, TrainLog};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("token id {id} outside vocabulary of size {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },
    #[error("feature grid has {got} channels, model expects {expected}")]
    FeatureWidth { got: usize, expected: usize },
    #[error("feature grid has {got} cells, model expects {expected}")]
    CellCount { got: usize, expected: usize },
    #[error("{0} supervision targets for a caption of {1} tokens")]
    TargetCount(usize, usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Model dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    /// Vocabulary size K (includes BOS and EOS).
    pub vocab: usize,
    /// Word embedding width m.
    pub embed: usize,
    /// LSTM units n.
    pub hidden: usize,
    /// Feature channels D.
    pub feature: usize,
    /// Attention grid side g, with L = g * g cells.
    pub grid_side: usize,
}

impl Dims {
    pub fn cells(&self) -> usize {
        self.grid_side * self.grid_side
    }

    /// Width of the attention MLP's hidden layer.
    pub fn attn_hidden(&self) -> usize {
        self.hidden
    }

    fn validate(&self) -> Result<(), ModelError> {
        let Dims {
            vocab,
            embed,
            hidden,
            feature,
            grid_side,
        } = *self;
        if vocab < 3 || embed == 0 || hidden == 0 || feature == 0 || grid_side == 0 {
            return Err(ModelError::InvalidArgument(format!(
                "dims must be positive with vocab >= 3, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Identifies one learned tensor. `ALL` fixes storage and file order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamId {
    GateInputW,
    GateForgetW,
    GateMemoryW,
    GateOutputW,
    GateInputU,
    GateForgetU,
    GateMemoryU,
    GateOutputU,
    GateInputZ,
    GateForgetZ,
    GateMemoryZ,
    GateOutputZ,
    GateInputB,
    GateForgetB,
    GateMemoryB,
    GateOutputB,
    Embedding,
    AttnFeature,
    AttnHidden,
    AttnBias,
    AttnOut,
    OutWord,
    OutHidden,
    OutContext,
    InitH,
    InitHBias,
    InitC,
    InitCBias,
}

impl ParamId {
    pub const ALL: [ParamId; 28] = [
        ParamId::GateInputW,
        ParamId::GateForgetW,
        ParamId::GateMemoryW,
        ParamId::GateOutputW,
        ParamId::GateInputU,
        ParamId::GateForgetU,
        ParamId::GateMemoryU,
        ParamId::GateOutputU,
        ParamId::GateInputZ,
        ParamId::GateForgetZ,
        ParamId::GateMemoryZ,
        ParamId::GateOutputZ,
        ParamId::GateInputB,
        ParamId::GateForgetB,
        ParamId::GateMemoryB,
        ParamId::GateOutputB,
        ParamId::Embedding,
        ParamId::AttnFeature,
        ParamId::AttnHidden,
        ParamId::AttnBias,
        ParamId::AttnOut,
        ParamId::OutWord,
        ParamId::OutHidden,
        ParamId::OutContext,
        ParamId::InitH,
        ParamId::InitHBias,
        ParamId::InitC,
        ParamId::InitCBias,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamId::GateInputW => "gate_input_w",
            ParamId::GateForgetW => "gate_forget_w",
            ParamId::GateMemoryW => "gate_memory_w",
            ParamId::GateOutputW => "gate_output_w",
            ParamId::GateInputU => "gate_input_u",
            ParamId::GateForgetU => "gate_forget_u",
            ParamId::GateMemoryU => "gate_memory_u",
            ParamId::GateOutputU => "gate_output_u",
            ParamId::GateInputZ => "gate_input_z",
            ParamId::GateForgetZ => "gate_forget_z",
            ParamId::GateMemoryZ => "gate_memory_z",
            ParamId::GateOutputZ => "gate_output_z",
            ParamId::GateInputB => "gate_input_b",
            ParamId::GateForgetB => "gate_forget_b",
            ParamId::GateMemoryB => "gate_memory_b",
            ParamId::GateOutputB => "gate_output_b",
            ParamId::Embedding => "embedding",
            ParamId::AttnFeature => "attn_feature",
            ParamId::AttnHidden => "attn_hidden",
            ParamId::AttnBias => "attn_bias",
            ParamId::AttnOut => "attn_out",
            ParamId::OutWord => "out_word",
            ParamId::OutHidden => "out_hidden",
            ParamId::OutContext => "out_context",
            ParamId::InitH => "init_h",
            ParamId::InitHBias => "init_h_bias",
            ParamId::InitC => "init_c",
            ParamId::InitCBias => "init_c_bias",
        }
    }

    /// Shape of the tensor under row-vector convention (`x[1, in] W[in, out]`).
    pub fn shape(self, d: &Dims) -> [usize; 2] {
        let (k, m, n, f, a) = (d.vocab, d.embed, d.hidden, d.feature, d.attn_hidden());
        match self {
            ParamId::GateInputW | ParamId::GateForgetW | ParamId::GateMemoryW | ParamId::GateOutputW => [m, n],
            ParamId::GateInputU | ParamId::GateForgetU | ParamId::GateMemoryU | ParamId::GateOutputU => [n, n],
            ParamId::GateInputZ | ParamId::GateForgetZ | ParamId::GateMemoryZ | ParamId::GateOutputZ => [f, n],
            ParamId::GateInputB | ParamId::GateForgetB | ParamId::GateMemoryB | ParamId::GateOutputB => [1, n],
            ParamId::Embedding => [k, m],
            ParamId::AttnFeature => [f, a],
            ParamId::AttnHidden => [n, a],
            ParamId::AttnBias => [1, a],
            ParamId::AttnOut => [a, 1],
            ParamId::OutWord => [m, k],
            ParamId::OutHidden => [n, m],
            ParamId::OutContext => [f, m],
            ParamId::InitH | ParamId::InitC => [f, n],
            ParamId::InitHBias | ParamId::InitCBias => [1, n],
        }
    }
}

/// All learned weights of the decoder, indexed by [`ParamId`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    dims: Dims,
    tensors: Vec<Tensor>,
}

impl ModelParams {
    pub fn zeros(dims: Dims) -> Result<Self, ModelError> {
        dims.validate()?;
        let tensors = ParamId::ALL
            .iter()
            .map(|p| Tensor::zeros(&p.shape(&dims)))
            .collect();
        Ok(Self { dims, tensors })
    }

    /// Entries drawn from `uniform(-scale, scale)`.
    pub fn random(dims: Dims, scale: f64, rng: &mut ChaCha8Rng) -> Result<Self, ModelError> {
        dims.validate()?;
        let tensors = ParamId::ALL
            .iter()
            .map(|p| {
                let shape = p.shape(&dims);
                let data = (0..shape[0] * shape[1])
                    .map(|_| rng.random_range(-scale..scale))
                    .collect();
                Tensor::new(shape.to_vec(), data)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { dims, tensors })
    }

    pub fn from_tensors(dims: Dims, tensors: Vec<Tensor>) -> Result<Self, ModelError> {
        dims.validate()?;
        if tensors.len() != ParamId::ALL.len() {
            return Err(ModelError::InvalidArgument(format!(
                "expected {} tensors, got {}",
                ParamId::ALL.len(),
                tensors.len()
            )));
        }
        for (p, t) in ParamId::ALL.iter().zip(&tensors) {
            if t.shape() != p.shape(&dims) {
                return Err(ModelError::InvalidArgument(format!(
                    "{} has shape {:?}, expected {:?}",
                    p.name(),
                    t.shape(),
                    p.shape(&dims)
                )));
            }
        }
        Ok(Self { dims, tensors })
    }

    pub fn dims(&self) -> &Dims {
        &self.dims
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.index()]
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<(), ModelError> {
        if value.shape() != id.shape(&self.dims) {
            return Err(ModelError::InvalidArgument(format!(
                "{} needs shape {:?}, got {:?}",
                id.name(),
                id.shape(&self.dims),
                value.shape()
            )));
        }
        self.tensors[id.index()] = value;
        Ok(())
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub(crate) fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn num_entries(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }
}

/// Caption vocabulary. Id 0 is BOS and id 1 is EOS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub const BOS: usize = 0;
    pub const EOS: usize = 1;
    pub const BOS_TOKEN: &'static str = "<bos>";
    pub const EOS_TOKEN: &'static str = "<eos>";

    /// Vocabulary over the sorted set of caption tokens.
    pub fn from_captions<'a, I, C>(captions: I) -> Self
    where
        I: IntoIterator<Item = C>,
        C: IntoIterator<Item = &'a String>,
    {
        let words: BTreeSet<&String> = captions.into_iter().flatten().collect();
        let mut tokens = vec![Self::BOS_TOKEN.to_string(), Self::EOS_TOKEN.to_string()];
        tokens.extend(
            words
                .into_iter()
                .filter(|w| *w != Self::BOS_TOKEN && *w != Self::EOS_TOKEN)
                .cloned(),
        );
        Self::from_tokens(tokens).expect("constructed with BOS/EOS first")
    }

    /// Rebuilds a vocabulary from its full token list (BOS, EOS first).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, ModelError> {
        if tokens.len() < 3 || tokens[0] != Self::BOS_TOKEN || tokens[1] != Self::EOS_TOKEN {
            return Err(ModelError::InvalidArgument(
                "vocabulary must start with <bos>, <eos> and contain a word".into(),
            ));
        }
        let index: HashMap<String, usize> =
            tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        if index.len() != tokens.len() {
            return Err(ModelError::InvalidArgument("duplicate vocabulary token".into()));
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, words: &[String]) -> Option<Vec<usize>> {
        words.iter().map(|w| self.id(w)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or("<unk>").to_string())
            .collect()
    }
}

/// `L x D` visual features on a `g x g` grid, row-major by cell.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    features: Tensor,
    grid_side: usize,
}

impl FeatureGrid {
    pub fn new(grid_side: usize, channels: usize, data: Vec<f64>) -> Result<Self, ModelError> {
        if grid_side == 0 || channels == 0 {
            return Err(ModelError::InvalidArgument("empty feature grid".into()));
        }
        let features = Tensor::matrix(grid_side * grid_side, channels, data)?;
        Ok(Self {
            features,
            grid_side,
        })
    }

    pub fn tensor(&self) -> &Tensor {
        &self.features
    }

    pub fn grid_side(&self) -> usize {
        self.grid_side
    }

    pub fn cells(&self) -> usize {
        self.features.rows()
    }

    pub fn channels(&self) -> usize {
        self.features.cols()
    }

    /// Mean feature vector over cells, as `[1, D]`.
    pub fn mean(&self) -> Tensor {
        let (l, d) = (self.cells(), self.channels());
        let mut acc = vec![0.0; d];
        for i in 0..l {
            for (a, v) in acc.iter_mut().zip(&self.features.data()[i * d..(i + 1) * d]) {
                *a += v;
            }
        }
        for a in &mut acc {
            *a /= l as f64;
        }
        Tensor::row(acc).expect("mean of finite values is finite")
    }
}

/// Attention weights over the `g x g` grid for one timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub weights: Vec<f64>,
    pub grid_side: usize,
}

impl AttentionMap {
    pub fn uniform(grid_side: usize) -> Self {
        let l = grid_side * grid_side;
        Self {
            weights: vec![1.0 / l as f64; l],
            grid_side,
        }
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }
}
