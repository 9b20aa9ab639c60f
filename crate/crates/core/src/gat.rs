//! Multi-head graph attention classifier.
//!
//! Every layer and head computes `z = h Wᵀ`, edge scores
//! `e_ij = relu(aᵀ [z_i ‖ z_j])`, attention `α_ij = softmax_j(e_ij)` over the
//! neighborhood of `i` (self-loop included), and `σ(Σ_j α_ij z_j)`. Heads are
//! concatenated. Hidden layers use `σ = elu`; the last layer uses `relu` so
//! that its node features are nonnegative. The graph readout is a mean over
//! nodes followed by one affine map, which keeps class activation maps
//! well-defined.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::superpixel::SpGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GatConfig {
    pub in_features: usize,
    /// Output width of each head.
    pub hidden: usize,
    pub heads: usize,
    pub layers: usize,
    pub classes: usize,
}

impl Default for GatConfig {
    fn default() -> Self {
        Self {
            in_features: 3,
            hidden: 16,
            heads: 3,
            layers: 3,
            classes: 10,
        }
    }
}

impl GatConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("in_features", self.in_features),
            ("hidden", self.hidden),
            ("heads", self.heads),
            ("layers", self.layers),
            ("classes", self.classes),
        ] {
            if v == 0 {
                return Err(Error::Param(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    /// Feature width entering each layer, followed by the class count.
    pub fn dimension_chain(&self) -> Vec<usize> {
        let mut dims = vec![self.in_features];
        dims.extend(std::iter::repeat_n(self.heads * self.hidden, self.layers));
        dims.push(self.classes);
        dims
    }

    pub fn embedding_width(&self) -> usize {
        self.heads * self.hidden
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionHead {
    /// `F' × F` projection.
    pub weight: Matrix,
    /// `2F' × 1` attention vector applied to `[z_i ‖ z_j]`.
    pub attention: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatLayerParams {
    pub heads: Vec<AttentionHead>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatModel {
    pub config: GatConfig,
    pub layers: Vec<GatLayerParams>,
    /// `C × D` class weights `w_k^c`.
    pub classifier_w: Matrix,
    /// `1 × C` biases.
    pub classifier_b: Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Elu,
    Relu,
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize, fan_out: usize) -> Matrix {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized by construction")
}

impl GatModel {
    /// Glorot-uniform weights drawn in parameter declaration order; zero biases.
    pub fn init(config: GatConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = config.dimension_chain();
        let layers = (0..config.layers)
            .map(|l| GatLayerParams {
                heads: (0..config.heads)
                    .map(|_| AttentionHead {
                        weight: xavier(&mut rng, config.hidden, dims[l], dims[l], config.hidden),
                        attention: xavier(&mut rng, 2 * config.hidden, 1, 2 * config.hidden, 1),
                    })
                    .collect(),
            })
            .collect();
        let d = config.embedding_width();
        Ok(Self {
            config,
            layers,
            classifier_w: xavier(&mut rng, config.classes, d, d, config.classes),
            classifier_b: Matrix::zeros(1, config.classes),
        })
    }

    /// Parameter names in declaration order.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            for h in 0..layer.heads.len() {
                names.push(format!("layer{l}.head{h}.weight"));
                names.push(format!("layer{l}.head{h}.attention"));
            }
        }
        names.push("classifier.weight".into());
        names.push("classifier.bias".into());
        names
    }

    pub fn params(&self) -> Vec<&Matrix> {
        let mut out = Vec::new();
        for layer in &self.layers {
            for head in &layer.heads {
                out.push(&head.weight);
                out.push(&head.attention);
            }
        }
        out.push(&self.classifier_w);
        out.push(&self.classifier_b);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            for head in &mut layer.heads {
                out.push(&mut head.weight);
                out.push(&mut head.attention);
            }
        }
        out.push(&mut self.classifier_w);
        out.push(&mut self.classifier_b);
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.params().iter().map(|m| m.data().len()).sum()
    }

    /// Rebuilds a model of `config` from arrays in declaration order.
    pub fn from_params(config: GatConfig, params: Vec<Matrix>) -> Result<Self> {
        let mut model = Self::init(config, 0)?;
        let slots = model.params_mut();
        if slots.len() != params.len() {
            return Err(Error::Shape(format!(
                "model expects {} parameter arrays, got {}",
                slots.len(),
                params.len()
            )));
        }
        for (slot, p) in slots.into_iter().zip(params) {
            if slot.shape() != p.shape() {
                return Err(Error::Shape(format!(
                    "parameter shape {:?}, expected {:?}",
                    p.shape(),
                    slot.shape()
                )));
            }
            *slot = p;
        }
        Ok(model)
    }
}

/// Which leaves of the forward tape should receive gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GradTargets {
    pub input: bool,
    pub params: bool,
}

impl GradTargets {
    pub const NONE: Self = Self {
        input: false,
        params: false,
    };
    pub const INPUT: Self = Self {
        input: true,
        params: false,
    };
    pub const PARAMS: Self = Self {
        input: false,
        params: true,
    };
    pub const ALL: Self = Self {
        input: true,
        params: true,
    };
}

/// Everything a forward pass produced, kept for training and explanation.
#[derive(Debug, Clone)]
pub struct ForwardArtifacts {
    pub tape: Tape,
    pub input: Var,
    /// Parameter leaves in declaration order.
    pub params: Vec<Var>,
    /// Attention coefficients, indexed `[layer][head]`, each `E × 1` over
    /// [`ForwardArtifacts::targets`] / [`ForwardArtifacts::sources`].
    pub attention: Vec<Vec<Var>>,
    pub targets: Arc<[usize]>,
    pub sources: Arc<[usize]>,
    /// Node features `F_{n,k}` of the last attention layer.
    pub last_features: Var,
    pub pooled: Var,
    pub logits: Var,
}

impl ForwardArtifacts {
    pub fn logits(&self) -> &[f64] {
        self.tape.value(self.logits).data()
    }

    pub fn predicted_class(&self) -> usize {
        argmax(self.logits())
    }

    pub fn attention_values(&self, layer: usize, head: usize) -> &[f64] {
        self.tape.value(self.attention[layer][head]).data()
    }

    pub fn last_features_value(&self) -> &Matrix {
        self.tape.value(self.last_features)
    }

    /// True iff logits are exactly one affine map of a node-mean of the last
    /// layer features, with the classifier parameters as the affine weights.
    pub fn is_cam_compliant(&self) -> bool {
        let n = self.params.len();
        let (Some(&cw), Some(&cb)) = (self.params.get(n.wrapping_sub(2)), self.params.last()) else {
            return false;
        };
        matches!(self.tape.op(self.logits),
            Op::Linear { x, w, b: Some(b) } if *x == self.pooled && *w == cw && *b == cb)
            && matches!(self.tape.op(self.pooled), Op::MeanRows(x) if *x == self.last_features)
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// One multi-head attention layer on `tape`. `heads` holds the
/// `(weight, attention)` leaves of each head. Returns the concatenated output
/// and the per-head attention coefficients.
pub fn gat_layer(
    tape: &mut Tape,
    h: Var,
    targets: &Arc<[usize]>,
    sources: &Arc<[usize]>,
    heads: &[(Var, Var)],
    activation: Activation,
) -> Result<(Var, Vec<Var>)> {
    let n = tape.shape(h).0;
    if targets.len() != sources.len() {
        return Err(Error::Shape("targets and sources differ in length".into()));
    }
    let mut has_self_loop = vec![false; n];
    for (&t, &s) in targets.iter().zip(sources.iter()) {
        if t >= n || s >= n {
            return Err(Error::Index(format!("edge ({s} -> {t}) for {n} nodes")));
        }
        if t == s {
            has_self_loop[t] = true;
        }
    }
    if let Some(i) = has_self_loop.iter().position(|&b| !b) {
        return Err(Error::Contract(format!("node {i} has no self-loop")));
    }
    let mut outputs = Vec::with_capacity(heads.len());
    let mut alphas = Vec::with_capacity(heads.len());
    for &(w, a) in heads {
        let z = tape.linear(h, w, None)?;
        let raw = tape.pair_scores(z, a, targets.clone(), sources.clone())?;
        let scores = tape.relu(raw);
        let alpha = tape.segment_softmax(scores, targets.clone(), n)?;
        let agg = tape.gather_weighted_sum(z, alpha, targets.clone(), sources.clone(), n)?;
        outputs.push(match activation {
            Activation::Elu => tape.elu(agg),
            Activation::Relu => tape.relu(agg),
        });
        alphas.push(alpha);
    }
    Ok((tape.concat_cols(&outputs)?, alphas))
}

/// Runs the model on `graph`, substituting `features` for the graph's own
/// node features when given.
pub fn forward_features(
    model: &GatModel,
    graph: &SpGraph,
    features: &Matrix,
    grads: GradTargets,
) -> Result<ForwardArtifacts> {
    let n = graph.n_nodes();
    if n == 0 {
        return Err(Error::Empty("graph has no nodes".into()));
    }
    if features.shape() != (n, model.config.in_features) {
        return Err(Error::Shape(format!(
            "model expects {} node features, graph has {:?}",
            model.config.in_features,
            features.shape()
        )));
    }
    let (targets, sources) = graph.message_edges();
    let (targets, sources): (Arc<[usize]>, Arc<[usize]>) = (targets.into(), sources.into());
    let mut tape = Tape::new();
    let input = tape.leaf(features.clone(), grads.input);
    let params: Vec<Var> = model
        .params()
        .into_iter()
        .map(|p| tape.leaf(p.clone(), grads.params))
        .collect();

    let mut h = input;
    let mut attention = Vec::with_capacity(model.layers.len());
    let mut cursor = 0;
    for (l, layer) in model.layers.iter().enumerate() {
        let heads: Vec<(Var, Var)> = (0..layer.heads.len())
            .map(|k| (params[cursor + 2 * k], params[cursor + 2 * k + 1]))
            .collect();
        cursor += 2 * layer.heads.len();
        let activation = if l + 1 == model.layers.len() {
            Activation::Relu
        } else {
            Activation::Elu
        };
        let (out, alphas) = gat_layer(&mut tape, h, &targets, &sources, &heads, activation)?;
        attention.push(alphas);
        h = out;
    }
    let last_features = h;
    let pooled = tape.mean_rows(last_features)?;
    let logits = tape.linear(pooled, params[cursor], Some(params[cursor + 1]))?;
    Ok(ForwardArtifacts {
        tape,
        input,
        params,
        attention,
        targets,
        sources,
        last_features,
        pooled,
        logits,
    })
}

pub fn forward(model: &GatModel, graph: &SpGraph, grads: GradTargets) -> Result<ForwardArtifacts> {
    forward_features(model, graph, &graph.features, grads)
}

/// Logits only; no gradients are tracked.
pub fn logits(model: &GatModel, graph: &SpGraph) -> Result<Vec<f64>> {
    Ok(forward(model, graph, GradTargets::NONE)?.logits().to_vec())
}

pub fn predict(model: &GatModel, graph: &SpGraph) -> Result<usize> {
    Ok(argmax(&logits(model, graph)?))
}
