//! The Graphite network: six graph convolutions with hop pyramid
//! `(1, 2, 3, 3, 2, 1)` and three heads.
//!
//! ```text
//! X ─ conv1 ─ conv2 ─ conv3 ─┬─ conv4 ─ conv5 ─┬─ conv6 ─ sigmoid ─► Y
//!                            │                 └─ max ─ fc ─ sigmoid ─► S
//!                            └─ max ─ fc ─ l2norm ─► D
//! ```

mod checkpoint;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{PatchGraph, Propagation, Radius, DEFAULT_RADIUS_MULTIPLIER};
use crate::nn::ops::{
    fc_backward, fc_forward, l2_normalize, l2_normalize_backward, scatter_max,
    scatter_max_backward, sigmoid, sigmoid_backward, tag_conv_backward, tag_conv_forward,
    TagConvCache,
};
use crate::nn::{Activation, DenseParams, TagConvParams, Tensor};
use crate::patching::{align_principal_axes, Patch};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};

/// Node feature width: local position and normal.
pub const NODE_FEATURES: usize = 6;
pub const DESCRIPTOR_LEN: usize = 32;
/// `(in, out, hops)` for each graph convolution.
pub const CONV_LAYERS: [(usize, usize, usize); 6] = [
    (6, 8, 1),
    (8, 16, 2),
    (16, 32, 3),
    (32, 16, 3),
    (16, 8, 2),
    (8, 1, 1),
];
/// Index of the convolution whose output feeds the descriptor head.
const DESC_TAP: usize = 2;
/// Index of the convolution whose output feeds the score head.
const SCORE_TAP: usize = 4;

/// Orientation of the node coordinates fed to the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    /// Centered and scaled patch coordinates, orientation as in the cloud.
    Centered,
    /// Additionally rotated onto the patch's principal axes, which makes the
    /// network's outputs independent of the cloud's orientation.
    #[default]
    Pca,
}

impl Frame {
    pub fn name(self) -> &'static str {
        match self {
            Frame::Centered => "centered",
            Frame::Pca => "pca",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "centered" => Some(Frame::Centered),
            "pca" => Some(Frame::Pca),
            _ => None,
        }
    }
}

/// Which layer-5 features the score head pools.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreTap {
    /// After the hidden activation.
    #[default]
    Post,
    /// Before the hidden activation.
    Pre,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Points per patch.
    pub patch_size: usize,
    pub descriptor_len: usize,
    /// Graph radius as a multiple of the patch's average spacing.
    pub radius_multiplier: f64,
    pub hidden_activation: Activation,
    /// Number of fully connected layers in the descriptor head (1 or 2).
    pub descriptor_fc_layers: usize,
    pub score_tap: ScoreTap,
    pub frame: Frame,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            patch_size: crate::patching::SCENE_PATCH_SIZE,
            descriptor_len: DESCRIPTOR_LEN,
            radius_multiplier: DEFAULT_RADIUS_MULTIPLIER,
            hidden_activation: Activation::Relu,
            descriptor_fc_layers: 1,
            score_tap: ScoreTap::Post,
            frame: Frame::Pca,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.descriptor_len != DESCRIPTOR_LEN {
            return Err(Error::Config(format!(
                "descriptor_len must be {DESCRIPTOR_LEN}, got {}",
                self.descriptor_len
            )));
        }
        if !(1..=2).contains(&self.descriptor_fc_layers) {
            return Err(Error::Config(format!(
                "descriptor_fc_layers must be 1 or 2, got {}",
                self.descriptor_fc_layers
            )));
        }
        if self.patch_size < 2 {
            return Err(Error::Config("patch_size must be >= 2".into()));
        }
        if !(self.radius_multiplier > 0.0) || !self.radius_multiplier.is_finite() {
            return Err(Error::Config("radius_multiplier must be positive".into()));
        }
        Ok(())
    }

    pub fn radius(&self) -> Radius {
        Radius::Relative(self.radius_multiplier)
    }

    /// The graph this configuration feeds to the network for `patch`.
    pub fn graph(&self, patch: &Patch) -> Result<PatchGraph> {
        match self.frame {
            Frame::Centered => PatchGraph::from_patch(patch, self.radius()),
            Frame::Pca => PatchGraph::build(align_principal_axes(&patch.local_points), self.radius()),
        }
    }
}

/// All learnable tensors. Also used to hold gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub conv: Vec<TagConvParams>,
    pub desc_head: Vec<DenseParams>,
    pub score_head: DenseParams,
}

impl Parameters {
    pub fn init(seed: u64, config: &ModelConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let conv = CONV_LAYERS
            .iter()
            .map(|&(i, o, k)| TagConvParams::new(&mut rng, i, o, k))
            .collect();
        let desc_head = (0..config.descriptor_fc_layers)
            .map(|_| DenseParams::new(&mut rng, 32, config.descriptor_len))
            .collect();
        let score_head = DenseParams::new(&mut rng, 8, 1);
        Self {
            conv,
            desc_head,
            score_head,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            conv: self.conv.iter().map(TagConvParams::zeros_like).collect(),
            desc_head: self.desc_head.iter().map(DenseParams::zeros_like).collect(),
            score_head: self.score_head.zeros_like(),
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for c in &self.conv {
            out.extend(c.theta.iter());
            out.push(&c.bias);
        }
        for d in self.desc_head.iter().chain(std::iter::once(&self.score_head)) {
            out.push(&d.weight);
            out.push(&d.bias);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for c in &mut self.conv {
            out.extend(c.theta.iter_mut());
            out.push(&mut c.bias);
        }
        for d in self.desc_head.iter_mut().chain(std::iter::once(&mut self.score_head)) {
            out.push(&mut d.weight);
            out.push(&mut d.bias);
        }
        out
    }

    /// Names matching the order of [`Parameters::tensors`].
    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (l, c) in self.conv.iter().enumerate() {
            for k in 0..c.theta.len() {
                out.push(format!("conv{}.theta{k}", l + 1));
            }
            out.push(format!("conv{}.bias", l + 1));
        }
        for j in 0..self.desc_head.len() {
            out.push(format!("desc_fc{}.weight", j + 1));
            out.push(format!("desc_fc{}.bias", j + 1));
        }
        out.push("score_fc.weight".into());
        out.push("score_fc.bias".into());
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn add_assign(&mut self, other: &Parameters) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.scale(s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    /// FNV-1a over the bit patterns of every parameter.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in self.tensors() {
            for v in t.data() {
                for b in v.to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }
}

/// Raw network outputs for one patch graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Outputs {
    /// Per-node saliency `Y`, in graph node order.
    pub values: Vec<f64>,
    /// Unit descriptor `D`.
    pub descriptor: Vec<f64>,
    /// Patch score `S`.
    pub score: f64,
}

impl Outputs {
    /// `argmax(Y)`, ties to the lowest index.
    pub fn keypoint_index(&self) -> usize {
        argmax(&self.values)
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Outputs of one patch, with the keypoint located in the parent cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchFeatures {
    pub values: Vec<f64>,
    pub descriptor: Vec<f64>,
    pub score: f64,
    pub keypoint_index: usize,
    pub keypoint_position: Vector3<f64>,
}

/// Everything a backward pass needs from the matching forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    prop: Propagation,
    /// `acts[l]` is the input of conv `l`; `acts[6]` is `Y`.
    acts: Vec<Tensor>,
    conv_caches: Vec<TagConvCache>,
    desc_argmax: Vec<usize>,
    /// Inputs of each descriptor FC layer, then its final pre-normalization output.
    desc_inputs: Vec<Tensor>,
    desc_out: Tensor,
    desc_divisor: f64,
    score_argmax: Vec<usize>,
    score_pooled: Tensor,
    score_out: f64,
}

impl ForwardTrace {
    /// Hidden activation signs and pooling winners. Two parameter settings
    /// with equal signatures lie on the same smooth piece of the network, which
    /// is what finite-difference checks need to know.
    pub fn kink_signature(&self) -> Vec<usize> {
        let mut p: Vec<usize> = Vec::new();
        for a in self.acts[1..CONV_LAYERS.len()].iter().chain(self.desc_inputs.iter().skip(1)) {
            p.extend(a.data().iter().map(|&v| (v > 0.0) as usize));
        }
        p.extend(&self.desc_argmax);
        p.extend(&self.score_argmax);
        p
    }
}

/// Loss gradients with respect to the three outputs. Missing heads contribute
/// nothing.
#[derive(Debug, Clone, Copy, Default)]
pub struct OutputGrads<'a> {
    pub values: Option<&'a [f64]>,
    pub descriptor: Option<&'a [f64]>,
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphiteModel {
    pub config: ModelConfig,
    pub params: Parameters,
}

impl GraphiteModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = Parameters::init(seed, &config);
        Ok(Self { config, params })
    }

    /// Default architecture with Glorot-uniform weights drawn from `seed`.
    pub fn init(seed: u64) -> Self {
        Self::new(ModelConfig::default(), seed).expect("default config is valid")
    }

    pub fn parameter_count(&self) -> usize {
        self.params.parameter_count()
    }

    pub fn graph(&self, patch: &Patch) -> Result<PatchGraph> {
        self.config.graph(patch)
    }

    pub fn forward(&self, graph: &PatchGraph) -> Result<Outputs> {
        self.forward_trace(graph).map(|(o, _)| o)
    }

    /// Runs the network on raw node features and a propagation matrix.
    pub fn forward_features(&self, x: &Tensor, prop: &Propagation) -> Result<(Outputs, ForwardTrace)> {
        if x.cols() != NODE_FEATURES {
            return Err(Error::ShapeMismatch(format!(
                "node features must have {NODE_FEATURES} columns, got {}",
                x.cols()
            )));
        }
        if x.rows() == 0 {
            return Err(Error::InvalidInput("graph has no nodes".into()));
        }
        let act = self.config.hidden_activation;
        let mut acts = Vec::with_capacity(7);
        acts.push(x.clone());
        let mut conv_caches = Vec::with_capacity(6);
        let mut score_pre = None;
        for (l, params) in self.params.conv.iter().enumerate() {
            let (z, cache) = tag_conv_forward(params, &acts[l], prop)?;
            conv_caches.push(cache);
            let h = if l == 5 { sigmoid(&z) } else { act.forward(&z) };
            if l == SCORE_TAP && self.config.score_tap == ScoreTap::Pre {
                score_pre = Some(z);
            }
            debug_assert!(h.is_finite(), "non-finite activation in conv{}", l + 1);
            acts.push(h);
        }

        let (pooled, desc_argmax) = scatter_max(&acts[DESC_TAP + 1]);
        let mut desc_inputs = vec![pooled];
        let heads = &self.params.desc_head;
        let mut desc_out = fc_forward(&heads[0], &desc_inputs[0])?;
        for layer in &heads[1..] {
            desc_inputs.push(act.forward(&desc_out));
            desc_out = fc_forward(layer, desc_inputs.last().expect("pushed"))?;
        }
        let (descriptor, desc_divisor) = l2_normalize(&desc_out);

        let tap = score_pre.as_ref().unwrap_or(&acts[SCORE_TAP + 1]);
        let (score_pooled, score_argmax) = scatter_max(tap);
        let s = sigmoid(&fc_forward(&self.params.score_head, &score_pooled)?);
        let score_out = s.get(0, 0);

        let outputs = Outputs {
            values: acts[6].data().to_vec(),
            descriptor: descriptor.into_vec(),
            score: score_out,
        };
        let trace = ForwardTrace {
            prop: prop.clone(),
            acts,
            conv_caches,
            desc_argmax,
            desc_inputs,
            desc_out,
            desc_divisor,
            score_argmax,
            score_pooled,
            score_out,
        };
        Ok((outputs, trace))
    }

    pub fn forward_trace(&self, graph: &PatchGraph) -> Result<(Outputs, ForwardTrace)> {
        self.forward_features(&graph.feature_tensor(), &graph.propagation())
    }

    /// Parameter gradients for the given output gradients.
    pub fn backward(&self, trace: &ForwardTrace, grads: &OutputGrads<'_>) -> Result<Parameters> {
        let n = trace.acts[0].rows();
        let act = self.config.hidden_activation;
        let mut out = self.params.zeros_like();

        // descriptor head, down to a gradient on conv3's output
        let mut desc_tap_grad = None;
        if let Some(gd) = grads.descriptor {
            check_len("descriptor gradient", gd.len(), self.config.descriptor_len)?;
            let (y, _) = l2_normalize(&trace.desc_out);
            let mut g = l2_normalize_backward(&y, trace.desc_divisor, &Tensor::row_vector(gd.to_vec()));
            for j in (0..self.params.desc_head.len()).rev() {
                let (gx, gp) = fc_backward(&self.params.desc_head[j], &trace.desc_inputs[j], &g);
                out.desc_head[j] = gp;
                g = if j > 0 { act.backward(&trace.desc_inputs[j], &gx) } else { gx };
            }
            desc_tap_grad = Some(scatter_max_backward(&trace.desc_argmax, n, &g));
        }

        let mut score_tap_grad = None;
        if let Some(gs) = grads.score {
            let s = trace.score_out;
            let gz = Tensor::row_vector(vec![gs * s * (1.0 - s)]);
            let (gx, gp) = fc_backward(&self.params.score_head, &trace.score_pooled, &gz);
            out.score_head = gp;
            score_tap_grad = Some(scatter_max_backward(&trace.score_argmax, n, &gx));
        }

        // gradient on the output of the current layer (post-activation)
        let mut g_act = match grads.values {
            Some(gv) => {
                check_len("value gradient", gv.len(), n)?;
                Some(Tensor::from_vec(n, 1, gv.to_vec())?)
            }
            None => None,
        };
        for l in (0..6).rev() {
            let mut g_pre = g_act
                .take()
                .map(|g| {
                    if l == 5 {
                        sigmoid_backward(&trace.acts[6], &g)
                    } else {
                        act.backward(&trace.acts[l + 1], &g)
                    }
                });
            if l == SCORE_TAP && self.config.score_tap == ScoreTap::Pre {
                g_pre = sum_opt(g_pre, score_tap_grad.take());
            }
            let Some(g) = g_pre else {
                // nothing flows into this layer yet; pick up any head gradient
                // tapping the layer below
                g_act = self.head_grad_at(l, &mut desc_tap_grad, &mut score_tap_grad);
                continue;
            };
            let (gx, gp) = tag_conv_backward(&self.params.conv[l], &trace.prop, &trace.conv_caches[l], &g);
            out.conv[l] = gp;
            if l > 0 {
                g_act = sum_opt(Some(gx), self.head_grad_at(l, &mut desc_tap_grad, &mut score_tap_grad));
            }
        }
        Ok(out)
    }

    /// Head gradient landing on the output of conv `l - 1` (the input of conv `l`).
    fn head_grad_at(
        &self,
        l: usize,
        desc: &mut Option<Tensor>,
        score: &mut Option<Tensor>,
    ) -> Option<Tensor> {
        if l == 0 {
            return None;
        }
        let mut g = None;
        if l - 1 == DESC_TAP {
            g = sum_opt(g, desc.take());
        }
        if l - 1 == SCORE_TAP && self.config.score_tap == ScoreTap::Post {
            g = sum_opt(g, score.take());
        }
        g
    }

    /// Runs the network on a patch and locates the keypoint in the parent frame.
    pub fn describe_patch(&self, patch: &Patch) -> Result<PatchFeatures> {
        let graph = self.graph(patch)?;
        let out = self.forward(&graph)?;
        let k = out.keypoint_index();
        Ok(PatchFeatures {
            keypoint_index: k,
            keypoint_position: patch.to_parent(&patch.local_position(k)),
            values: out.values,
            descriptor: out.descriptor,
            score: out.score,
        })
    }
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::ShapeMismatch(format!("{what} has length {got}, expected {want}")));
    }
    Ok(())
}

fn sum_opt(a: Option<Tensor>, b: Option<Tensor>) -> Option<Tensor> {
    match (a, b) {
        (Some(mut a), Some(b)) => {
            a.add_assign(&b);
            Some(a)
        }
        (a, None) => a,
        (None, b) => b,
    }
}
