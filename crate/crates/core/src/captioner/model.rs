use crate::autodiff::{Axis, Graph, NodeId, Tensor};
use crate::gt_attention::{GroundTruthMap, GtState};

use super::{AttentionMap, FeatureGrid, ModelError, ModelParams, ParamId, Vocab};

/// Floor applied to attention weights inside the attention cross-entropy.
pub const ATTN_LOG_FLOOR: f64 = 1e-12;

/// Graph leaves for every parameter tensor, indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct ParamNodes {
    ids: Vec<NodeId>,
    vocab: usize,
}

impl ParamNodes {
    pub fn register(g: &mut Graph, params: &ModelParams) -> Self {
        let ids = params.tensors().iter().map(|t| g.leaf(t.clone())).collect();
        Self {
            ids,
            vocab: params.dims().vocab,
        }
    }

    /// Wraps leaves that already exist in `g` (e.g. from a gradient check),
    /// in [`ParamId::ALL`] order.
    pub fn from_ids(g: &Graph, ids: &[NodeId]) -> Result<Self, ModelError> {
        if ids.len() != ParamId::ALL.len() {
            return Err(ModelError::InvalidArgument(format!(
                "expected {} parameter nodes, got {}",
                ParamId::ALL.len(),
                ids.len()
            )));
        }
        let vocab = g.value(ids[ParamId::Embedding.index()]).rows();
        Ok(Self {
            ids: ids.to_vec(),
            vocab,
        })
    }

    pub fn get(&self, id: ParamId) -> NodeId {
        self.ids[id.index()]
    }

    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }

    fn check_token(&self, id: usize) -> Result<(), ModelError> {
        if id >= self.vocab {
            return Err(ModelError::TokenOutOfRange {
                id,
                vocab: self.vocab,
            });
        }
        Ok(())
    }
}

/// Per-sample nodes shared by all timesteps.
#[derive(Debug, Clone, Copy)]
pub struct StepState {
    pub features: NodeId,
    /// `features x AttnFeature`, the hidden-state-independent half of the
    /// attention MLP's first layer.
    pub feature_proj: NodeId,
    pub cells: usize,
}

impl StepState {
    pub fn new(g: &mut Graph, p: &ParamNodes, features: &FeatureGrid) -> Result<Self, ModelError> {
        let expected = g.value(p.get(ParamId::AttnFeature)).rows();
        if features.channels() != expected {
            return Err(ModelError::FeatureWidth {
                got: features.channels(),
                expected,
            });
        }
        let f = g.leaf(features.tensor().clone());
        let feature_proj = g.matmul(f, p.get(ParamId::AttnFeature))?;
        Ok(Self {
            features: f,
            feature_proj,
            cells: features.cells(),
        })
    }
}

/// `h0 = tanh(mean(a) InitH + b)`, `c0 = tanh(mean(a) InitC + b)`.
pub fn init_state(
    g: &mut Graph,
    p: &ParamNodes,
    features: &FeatureGrid,
) -> Result<(NodeId, NodeId), ModelError> {
    let mean = g.leaf(features.mean());
    let mut branch = |w: ParamId, b: ParamId| -> Result<NodeId, ModelError> {
        let lin = g.matmul(mean, p.get(w))?;
        let lin = g.add(lin, p.get(b))?;
        Ok(g.tanh(lin)?)
    };
    let h0 = branch(ParamId::InitH, ParamId::InitHBias)?;
    let c0 = branch(ParamId::InitC, ParamId::InitCBias)?;
    Ok((h0, c0))
}

/// Soft attention: scores from a one-hidden-layer tanh MLP over each
/// `(a_i, h_prev)`, softmax over cells, and the weighted feature sum.
///
/// Returns `(alpha [1, L], z [1, D])`.
pub fn attend(
    g: &mut Graph,
    p: &ParamNodes,
    st: &StepState,
    h_prev: NodeId,
) -> Result<(NodeId, NodeId), ModelError> {
    let hp = g.matmul(h_prev, p.get(ParamId::AttnHidden))?;
    let hp = g.add(hp, p.get(ParamId::AttnBias))?;
    let pre = g.add(st.feature_proj, hp)?;
    let hidden = g.tanh(pre)?;
    let scores = g.matmul(hidden, p.get(ParamId::AttnOut))?;
    let scores = g.transpose(scores)?;
    let alpha = g.softmax(scores, Axis::Cols)?;
    let z = g.matmul(alpha, st.features)?;
    Ok((alpha, z))
}

fn gate(
    g: &mut Graph,
    p: &ParamNodes,
    [w, u, zw, b]: [ParamId; 4],
    x: NodeId,
    h_prev: NodeId,
    z: NodeId,
) -> Result<NodeId, ModelError> {
    let a = g.matmul(x, p.get(w))?;
    let bh = g.matmul(h_prev, p.get(u))?;
    let cz = g.matmul(z, p.get(zw))?;
    let s = g.add(a, bh)?;
    let s = g.add(s, cz)?;
    Ok(g.add(s, p.get(b))?)
}

/// One LSTM step driven by the previous word's embedding and the context.
pub fn lstm_step(
    g: &mut Graph,
    p: &ParamNodes,
    y_prev: usize,
    h_prev: NodeId,
    c_prev: NodeId,
    z: NodeId,
) -> Result<(NodeId, NodeId), ModelError> {
    use ParamId::*;
    p.check_token(y_prev)?;
    let x = g.row_select(p.get(Embedding), y_prev)?;
    let i = gate(g, p, [GateInputW, GateInputU, GateInputZ, GateInputB], x, h_prev, z)?;
    let i = g.sigmoid(i)?;
    let f = gate(g, p, [GateForgetW, GateForgetU, GateForgetZ, GateForgetB], x, h_prev, z)?;
    let f = g.sigmoid(f)?;
    let cand = gate(g, p, [GateMemoryW, GateMemoryU, GateMemoryZ, GateMemoryB], x, h_prev, z)?;
    let cand = g.tanh(cand)?;
    let o = gate(g, p, [GateOutputW, GateOutputU, GateOutputZ, GateOutputB], x, h_prev, z)?;
    let o = g.sigmoid(o)?;
    let keep = g.mul(f, c_prev)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let tc = g.tanh(c)?;
    let h = g.mul(o, tc)?;
    Ok((h, c))
}

/// Log-probabilities over the vocabulary:
/// `log_softmax((E y_prev + h G_h + z G_z) G_o)`.
///
/// `dropout_mask`, when given, multiplies `h` before the output path.
pub fn word_distribution(
    g: &mut Graph,
    p: &ParamNodes,
    h: NodeId,
    z: NodeId,
    y_prev: usize,
    dropout_mask: Option<Tensor>,
) -> Result<NodeId, ModelError> {
    p.check_token(y_prev)?;
    let x = g.row_select(p.get(ParamId::Embedding), y_prev)?;
    let h = match dropout_mask {
        Some(mask) => g.mask_mul(h, mask)?,
        None => h,
    };
    let hh = g.matmul(h, p.get(ParamId::OutHidden))?;
    let zz = g.matmul(z, p.get(ParamId::OutContext))?;
    let pre = g.add(x, hh)?;
    let pre = g.add(pre, zz)?;
    let logits = g.matmul(pre, p.get(ParamId::OutWord))?;
    Ok(g.log_softmax(logits, Axis::Cols)?)
}

/// `-log p(gold)`.
pub fn caption_loss(g: &mut Graph, logprobs: NodeId, gold: usize) -> Result<NodeId, ModelError> {
    let k = g.value(logprobs).numel();
    if gold >= k {
        return Err(ModelError::TokenOutOfRange { id: gold, vocab: k });
    }
    let lp = g.pick(logprobs, gold)?;
    Ok(g.scale(lp, -1.0)?)
}

pub fn caption_loss_value(word_logprobs: &[f64], gold: usize) -> Result<f64, ModelError> {
    word_logprobs
        .get(gold)
        .map(|lp| -lp)
        .ok_or(ModelError::TokenOutOfRange {
            id: gold,
            vocab: word_logprobs.len(),
        })
}

/// Cross-entropy `-sum_i beta_i log alpha_i`, with `log` floored at
/// [`ATTN_LOG_FLOOR`]. `None` for an absent target. The second value counts
/// cells where the floor was hit while `beta_i > 0`.
pub fn attention_loss(
    g: &mut Graph,
    alpha: NodeId,
    beta: &GroundTruthMap,
) -> Result<Option<(NodeId, usize)>, ModelError> {
    let Some(weights) = beta.weights() else {
        return Ok(None);
    };
    let l = g.value(alpha).numel();
    if weights.len() != l {
        return Err(ModelError::CellCount {
            got: weights.len(),
            expected: l,
        });
    }
    let clamped = g
        .value(alpha)
        .data()
        .iter()
        .zip(&weights)
        .filter(|(a, b)| **b > 0.0 && **a <= ATTN_LOG_FLOOR)
        .count();
    let log_alpha = g.clamped_log(alpha, ATTN_LOG_FLOOR)?;
    let beta_node = g.leaf(Tensor::row(weights)?);
    let prod = g.mul(log_alpha, beta_node)?;
    let s = g.sum(prod)?;
    Ok(Some((g.scale(s, -1.0)?, clamped)))
}

/// Value-level attention loss; 0 for an absent target.
pub fn attention_loss_value(alpha: &AttentionMap, beta: &GroundTruthMap) -> Result<(f64, usize), ModelError> {
    let weights = match &beta.state {
        GtState::Absent => return Ok((0.0, 0)),
        _ => beta.weights().expect("present or uniform"),
    };
    if weights.len() != alpha.weights.len() {
        return Err(ModelError::CellCount {
            got: weights.len(),
            expected: alpha.weights.len(),
        });
    }
    let mut loss = 0.0;
    let mut clamped = 0;
    for (&a, &b) in alpha.weights.iter().zip(&weights) {
        if b > 0.0 {
            if a <= ATTN_LOG_FLOOR {
                clamped += 1;
            }
            loss -= b * a.max(ATTN_LOG_FLOOR).ln();
        }
    }
    Ok((loss, clamped))
}

/// Nodes produced by one decoding step.
#[derive(Debug, Clone, Copy)]
pub struct StepNodes {
    pub alpha: NodeId,
    pub z: NodeId,
    pub h: NodeId,
    pub c: NodeId,
    pub logprobs: NodeId,
}

/// Attend, update the LSTM, and produce the word distribution.
pub fn run_step(
    g: &mut Graph,
    p: &ParamNodes,
    st: &StepState,
    y_prev: usize,
    h_prev: NodeId,
    c_prev: NodeId,
    dropout_mask: Option<Tensor>,
) -> Result<StepNodes, ModelError> {
    let (alpha, z) = attend(g, p, st, h_prev)?;
    let (h, c) = lstm_step(g, p, y_prev, h_prev, c_prev, z)?;
    let logprobs = word_distribution(g, p, h, z, y_prev, dropout_mask)?;
    Ok(StepNodes {
        alpha,
        z,
        h,
        c,
        logprobs,
    })
}

/// Values of one decoding step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub alpha: AttentionMap,
    pub z: Vec<f64>,
    pub h: Vec<f64>,
    pub c: Vec<f64>,
    pub word_logprobs: Vec<f64>,
}

impl StepOutput {
    pub(crate) fn read(g: &Graph, nodes: &StepNodes, grid_side: usize) -> Self {
        Self {
            alpha: AttentionMap {
                weights: g.value(nodes.alpha).data().to_vec(),
                grid_side,
            },
            z: g.value(nodes.z).data().to_vec(),
            h: g.value(nodes.h).data().to_vec(),
            c: g.value(nodes.c).data().to_vec(),
            word_logprobs: g.value(nodes.logprobs).data().to_vec(),
        }
    }
}

/// Loss nodes for a teacher-forced caption.
#[derive(Debug, Clone)]
pub struct LossNodes {
    pub total: NodeId,
    /// One per step, `len(caption) + 1` (the last predicts EOS).
    pub caption_terms: Vec<NodeId>,
    /// One per caption word; `None` where the target is absent or the
    /// attention term is disabled.
    pub attention_terms: Vec<Option<NodeId>>,
    pub alphas: Vec<NodeId>,
    pub clamped: usize,
}

/// Builds `sum_t L_cap + lambda * sum_t L_attn` with teacher forcing.
///
/// `caption` holds word ids without BOS/EOS. `targets`, if given, has one
/// map per caption word. With `lambda == 0` or no targets the attention
/// term is left out of the graph entirely, so the result is exactly the
/// caption-only loss.
#[allow(clippy::too_many_arguments)]
pub fn total_loss_graph(
    g: &mut Graph,
    p: &ParamNodes,
    features: &FeatureGrid,
    caption: &[usize],
    targets: Option<&[GroundTruthMap]>,
    lambda: f64,
    dropout_masks: Option<&[Tensor]>,
) -> Result<LossNodes, ModelError> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(ModelError::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
    }
    if let Some(t) = targets {
        if t.len() != caption.len() {
            return Err(ModelError::TargetCount(t.len(), caption.len()));
        }
    }
    let steps = caption.len() + 1;
    if let Some(m) = dropout_masks {
        if m.len() != steps {
            return Err(ModelError::InvalidArgument(format!(
                "{} dropout masks for {steps} steps",
                m.len()
            )));
        }
    }
    let supervise = lambda > 0.0 && targets.is_some();

    let st = StepState::new(g, p, features)?;
    let (mut h, mut c) = init_state(g, p, features)?;
    let mut caption_terms = Vec::with_capacity(steps);
    let mut attention_terms = Vec::with_capacity(caption.len());
    let mut alphas = Vec::with_capacity(steps);
    let mut clamped = 0;
    for t in 0..steps {
        let y_prev = if t == 0 { Vocab::BOS } else { caption[t - 1] };
        let gold = if t < caption.len() { caption[t] } else { Vocab::EOS };
        let mask = dropout_masks.map(|m| m[t].clone());
        let step = run_step(g, p, &st, y_prev, h, c, mask)?;
        caption_terms.push(caption_loss(g, step.logprobs, gold)?);
        alphas.push(step.alpha);
        if t < caption.len() {
            let term = match (supervise, targets) {
                (true, Some(tg)) => attention_loss(g, step.alpha, &tg[t])?.map(|(node, n)| {
                    clamped += n;
                    node
                }),
                _ => None,
            };
            attention_terms.push(term);
        }
        h = step.h;
        c = step.c;
    }

    let cap_sum = sum_nodes(g, &caption_terms)?;
    let attn: Vec<NodeId> = attention_terms.iter().flatten().copied().collect();
    let total = if supervise && !attn.is_empty() {
        let attn_sum = sum_nodes(g, &attn)?;
        let weighted = g.scale(attn_sum, lambda)?;
        g.add(cap_sum, weighted)?
    } else {
        cap_sum
    };
    Ok(LossNodes {
        total,
        caption_terms,
        attention_terms,
        alphas,
        clamped,
    })
}

fn sum_nodes(g: &mut Graph, nodes: &[NodeId]) -> Result<NodeId, ModelError> {
    let mut acc = nodes[0];
    for &n in &nodes[1..] {
        acc = g.add(acc, n)?;
    }
    Ok(acc)
}

/// Value breakdown of [`total_loss_graph`].
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub caption: f64,
    /// Unweighted sum of attention terms (0 when the term is disabled).
    pub attention: f64,
    pub per_step_caption: Vec<f64>,
    pub per_step_attention: Vec<f64>,
    pub clamped: usize,
}

impl LossBreakdown {
    pub(crate) fn read(g: &Graph, nodes: &LossNodes) -> Self {
        let per_step_caption: Vec<f64> = nodes.caption_terms.iter().map(|&n| g.value(n).item()).collect();
        let per_step_attention: Vec<f64> = nodes
            .attention_terms
            .iter()
            .map(|n| n.map_or(0.0, |n| g.value(n).item()))
            .collect();
        Self {
            total: g.value(nodes.total).item(),
            caption: per_step_caption.iter().sum(),
            attention: per_step_attention.iter().sum(),
            per_step_caption,
            per_step_attention,
            clamped: nodes.clamped,
        }
    }
}

/// Evaluates the teacher-forced loss without dropout.
pub fn total_loss(
    params: &ModelParams,
    features: &FeatureGrid,
    caption: &[usize],
    targets: Option<&[GroundTruthMap]>,
    lambda: f64,
) -> Result<LossBreakdown, ModelError> {
    let mut g = Graph::new();
    let p = ParamNodes::register(&mut g, params);
    let nodes = total_loss_graph(&mut g, &p, features, caption, targets, lambda, None)?;
    Ok(LossBreakdown::read(&g, &nodes))
}
