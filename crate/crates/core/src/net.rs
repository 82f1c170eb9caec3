//! Small feed-forward networks trained with hand-written backpropagation.
//!
//! A [`Network`] is a stack of affine + activation layers (the feature
//! extractor) followed by a single linear classification head over every
//! class seen so far. Weights are stored `(out, in)` row-major.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{RfrError, Result};
use crate::linalg::{row_normalize_with_norms, DenseMatrix};
use crate::rank::rfr_loss_and_grad;
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Representation regularizer attached to the extractor output.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regularizer {
    #[default]
    None,
    /// `Σ λ log λ` of the normalized feature Gram matrix.
    Rfr,
    /// Class-wise decorrelation: mean over classes of `‖K_c‖²_F / d²`.
    Cwd,
}

/// Initialization of head rows added by [`Network::expand_head`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadInit {
    Zeros,
    #[default]
    HeUniform,
}

/// Weights and bias of one affine map. Also used for gradients and momentum buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct Affine {
    pub weights: DenseMatrix,
    pub bias: Vec<f64>,
}

impl Affine {
    fn zeros_like(&self) -> Self {
        Affine {
            weights: DenseMatrix::zeros(self.weights.rows(), self.weights.cols()),
            bias: vec![0.0; self.bias.len()],
        }
    }

    fn he_uniform(out_dim: usize, in_dim: usize, r: &mut rng::Rng) -> Self {
        let bound = (6.0 / in_dim as f64).sqrt();
        Affine {
            weights: DenseMatrix::from_fn(out_dim, in_dim, |_, _| r.gen_range(-bound..bound)),
            bias: vec![0.0; out_dim],
        }
    }

    fn apply(&self, x: &DenseMatrix) -> DenseMatrix {
        let mut z = x.matmul_nt(&self.weights).expect("affine shapes checked");
        for i in 0..z.rows() {
            z.row_mut(i)
                .iter_mut()
                .zip(&self.bias)
                .for_each(|(v, b)| *v += b);
        }
        z
    }

    fn len(&self) -> usize {
        self.weights.data().len() + self.bias.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub affine: Affine,
    pub activation: Activation,
}

/// Architecture of the feature extractor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    /// Activation of the hidden layers.
    pub activation: Activation,
    /// Activation of the layer that emits the features. Identity by default:
    /// a ReLU here can zero a whole feature vector, which cannot be normalized.
    #[serde(default = "identity")]
    pub feature_activation: Activation,
}

fn identity() -> Activation {
    Activation::Identity
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    head: Affine,
    seed: u64,
}

/// Extractor output (pre-normalization) and head logits.
#[derive(Clone, Debug, PartialEq)]
pub struct Forward {
    pub features: DenseMatrix,
    pub logits: DenseMatrix,
}

/// Gradients (or momentum buffers) with the same shapes as a network.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    pub layers: Vec<Affine>,
    pub head: Affine,
}

impl ParamSet {
    pub fn zeros_like(net: &Network) -> Self {
        ParamSet {
            layers: net.layers.iter().map(|l| l.affine.zeros_like()).collect(),
            head: net.head.zeros_like(),
        }
    }

    /// Flattened in [`Network::params_flat`] order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for a in self.layers.iter().chain(std::iter::once(&self.head)) {
            out.extend_from_slice(a.weights.data());
            out.extend_from_slice(&a.bias);
        }
        out
    }

    pub fn max_abs_extractor(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|a| a.weights.data().iter().chain(&a.bias))
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Inputs with class labels (head-row indices).
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub inputs: DenseMatrix,
    pub labels: Vec<usize>,
}

/// Knowledge-distillation term against a teacher's logits on the old classes.
#[derive(Clone, Copy, Debug)]
pub struct Distill<'a> {
    /// `N × K_old` teacher logits; the first `K_old` student logits are distilled.
    pub teacher_logits: &'a DenseMatrix,
    pub temperature: f64,
    pub weight: f64,
}

/// Full training objective `CE + α·reg + w·KD`.
#[derive(Clone, Copy, Debug)]
pub struct Objective<'a> {
    pub alpha: f64,
    pub regularizer: Regularizer,
    pub distill: Option<Distill<'a>>,
    /// When false only the head receives gradients.
    pub train_extractor: bool,
}

impl Objective<'_> {
    pub fn plain(alpha: f64, regularizer: Regularizer) -> Self {
        Objective {
            alpha,
            regularizer,
            distill: None,
            train_extractor: true,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub ce: f64,
    /// Unscaled regularizer value.
    pub reg: f64,
    pub kd: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrStep {
    pub every: usize,
    pub gamma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr_step: Option<LrStep>,
}

impl TrainSchedule {
    /// With the rank regularizer active every batch needs more rows than the
    /// feature dimension; short tails are merged, so `batch_size > d` suffices.
    pub fn validate(&self, feature_dim: usize, rfr_active: bool) -> Result<()> {
        let mut problems = Vec::new();
        if self.batch_size == 0 {
            problems.push("batch_size: must be positive".to_string());
        }
        if rfr_active && self.batch_size <= feature_dim {
            problems.push(format!(
                "batch_size: must exceed feature_dim = {feature_dim} when the rank regularizer is active, got {}",
                self.batch_size
            ));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            problems.push(format!("learning_rate: must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            problems.push(format!("momentum: must be in [0, 1), got {}", self.momentum));
        }
        if let Some(s) = self.lr_step {
            if s.every == 0 || !(s.gamma > 0.0) {
                problems.push("lr_step: needs every >= 1 and gamma > 0".to_string());
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(RfrError::Config(problems))
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_step {
            Some(s) => self.learning_rate * s.gamma.powi((epoch / s.every) as i32),
            None => self.learning_rate,
        }
    }
}

impl Network {
    /// He-uniform weights and zero biases drawn from the seed's init stream.
    pub fn new(spec: &NetworkSpec, num_classes: usize, seed: u64) -> Result<Self> {
        if spec.input_dim == 0 || spec.feature_dim == 0 || spec.hidden.contains(&0) {
            return Err(RfrError::Dimension("layer widths must be positive".into()));
        }
        let mut r = rng::stream(seed, rng::STREAM_INIT);
        let mut dims = vec![spec.input_dim];
        dims.extend(&spec.hidden);
        dims.push(spec.feature_dim);
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Layer {
                affine: Affine::he_uniform(w[1], w[0], &mut r),
                activation: if i == last {
                    spec.feature_activation
                } else {
                    spec.activation
                },
            })
            .collect();
        let head = Affine::he_uniform(num_classes, spec.feature_dim, &mut r);
        Ok(Network { layers, head, seed })
    }

    /// Assembles a network, checking that layer shapes chain.
    pub fn from_parts(layers: Vec<Layer>, head: Affine, seed: u64) -> Result<Self> {
        if layers.is_empty() {
            return Err(RfrError::Dimension("extractor needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.affine.bias.len() != l.affine.weights.rows() {
                return Err(RfrError::Dimension(format!("layer {i}: bias length mismatch")));
            }
            if i > 0 && layers[i - 1].affine.weights.rows() != l.affine.weights.cols() {
                return Err(RfrError::Dimension(format!(
                    "layer {i} expects {} inputs, previous layer emits {}",
                    l.affine.weights.cols(),
                    layers[i - 1].affine.weights.rows()
                )));
            }
        }
        let d = layers.last().unwrap().affine.weights.rows();
        if head.weights.cols() != d || head.bias.len() != head.weights.rows() {
            return Err(RfrError::Dimension(format!(
                "head must be K x {d} with K biases"
            )));
        }
        Ok(Network { layers, head, seed })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn head(&self) -> &Affine {
        &self.head
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].affine.weights.cols()
    }

    pub fn feature_dim(&self) -> usize {
        self.head.weights.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.head.weights.rows()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.affine.len()).sum::<usize>() + self.head.len()
    }

    /// Layer weights then bias for every extractor layer, then the head.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = self.extractor_params_flat();
        out.extend_from_slice(self.head.weights.data());
        out.extend_from_slice(&self.head.bias);
        out
    }

    pub fn extractor_params_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.affine.weights.data());
            out.extend_from_slice(&l.affine.bias);
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(RfrError::Dimension(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                params.len()
            )));
        }
        let mut off = 0;
        for a in self
            .layers
            .iter_mut()
            .map(|l| &mut l.affine)
            .chain(std::iter::once(&mut self.head))
        {
            let nw = a.weights.data().len();
            a.weights.data_mut().copy_from_slice(&params[off..off + nw]);
            off += nw;
            let nb = a.bias.len();
            a.bias.copy_from_slice(&params[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    /// FNV-1a over the bit patterns of the extractor parameters.
    pub fn extractor_fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in self.extractor_params_flat() {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }

    fn check_inputs(&self, inputs: &DenseMatrix) -> Result<()> {
        if inputs.cols() != self.input_dim() {
            return Err(RfrError::Dimension(format!(
                "network expects {} input columns, got {}",
                self.input_dim(),
                inputs.cols()
            )));
        }
        Ok(())
    }

    pub fn features(&self, inputs: &DenseMatrix) -> Result<DenseMatrix> {
        self.check_inputs(inputs)?;
        let mut a = inputs.clone();
        for l in &self.layers {
            let mut z = l.affine.apply(&a);
            z.data_mut()
                .iter_mut()
                .for_each(|v| *v = l.activation.apply(*v));
            a = z;
        }
        Ok(a)
    }

    pub fn forward(&self, inputs: &DenseMatrix) -> Result<Forward> {
        let features = self.features(inputs)?;
        let logits = self.head.apply(&features);
        Ok(Forward { features, logits })
    }

    /// Argmax over head rows; ties go to the lowest class index.
    pub fn predict(&self, inputs: &DenseMatrix) -> Result<Vec<usize>> {
        let fwd = self.forward(inputs)?;
        Ok(fwd.logits.row_iter().map(argmax).collect())
    }

    /// Copy of the network with `new_class_count` head rows; existing rows are kept bit-exactly.
    pub fn expand_head(&self, new_class_count: usize, init: HeadInit) -> Result<Network> {
        let current = self.num_classes();
        if new_class_count <= current {
            return Err(RfrError::Shrink {
                current,
                requested: new_class_count,
            });
        }
        let d = self.feature_dim();
        let extra = new_class_count - current;
        let fresh = match init {
            HeadInit::Zeros => Affine {
                weights: DenseMatrix::zeros(extra, d),
                bias: vec![0.0; extra],
            },
            HeadInit::HeUniform => {
                let mut r = rng::stream(
                    rng::derive_seed(self.seed, rng::STREAM_HEAD),
                    new_class_count as u64,
                );
                Affine::he_uniform(extra, d, &mut r)
            }
        };
        let mut head = self.head.clone();
        head.weights = head.weights.vstack(&fresh.weights)?;
        head.bias.extend(fresh.bias);
        Ok(Network {
            layers: self.layers.clone(),
            head,
            seed: self.seed,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut layer_dims = vec![self.input_dim()];
        layer_dims.extend(self.layers.iter().map(|l| l.affine.weights.rows()));
        Checkpoint {
            layer_dims,
            activations: self.layers.iter().map(|l| l.activation).collect(),
            num_classes: self.num_classes(),
            seed: self.seed,
            layers: self
                .layers
                .iter()
                .map(|l| FlatAffine::from(&l.affine))
                .collect(),
            head: FlatAffine::from(&self.head),
        }
    }

    pub fn from_checkpoint(cp: &Checkpoint) -> Result<Self> {
        if cp.layer_dims.len() != cp.layers.len() + 1 || cp.activations.len() != cp.layers.len() {
            return Err(RfrError::Dimension(
                "checkpoint layer_dims/activations/layers lengths disagree".into(),
            ));
        }
        let layers = cp
            .layers
            .iter()
            .zip(cp.layer_dims.windows(2))
            .zip(&cp.activations)
            .map(|((fa, w), &activation)| {
                Ok(Layer {
                    affine: fa.to_affine(w[1], w[0])?,
                    activation,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let d = *cp.layer_dims.last().unwrap();
        let head = cp.head.to_affine(cp.num_classes, d)?;
        Network::from_parts(layers, head, cp.seed)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_checkpoint()).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Network::from_checkpoint(&serde_json::from_str(text)?)
    }

    fn forward_cached(&self, inputs: &DenseMatrix) -> (Vec<DenseMatrix>, Vec<DenseMatrix>) {
        // acts[0] = inputs, acts[l+1] = output of layer l; pre[l] = its pre-activation
        let mut acts = vec![inputs.clone()];
        let mut pre = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let z = l.affine.apply(acts.last().unwrap());
            let mut a = z.clone();
            a.data_mut()
                .iter_mut()
                .for_each(|v| *v = l.activation.apply(*v));
            pre.push(z);
            acts.push(a);
        }
        (acts, pre)
    }
}

/// JSON checkpoint layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub layer_dims: Vec<usize>,
    pub activations: Vec<Activation>,
    pub num_classes: usize,
    pub seed: u64,
    pub layers: Vec<FlatAffine>,
    pub head: FlatAffine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatAffine {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl From<&Affine> for FlatAffine {
    fn from(a: &Affine) -> Self {
        FlatAffine {
            weights: a.weights.data().to_vec(),
            bias: a.bias.clone(),
        }
    }
}

impl FlatAffine {
    fn to_affine(&self, rows: usize, cols: usize) -> Result<Affine> {
        if self.bias.len() != rows {
            return Err(RfrError::Dimension(format!(
                "bias has {} entries, expected {rows}",
                self.bias.len()
            )));
        }
        Ok(Affine {
            weights: DenseMatrix::new(rows, cols, self.weights.clone())?,
            bias: self.bias.clone(),
        })
    }
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

fn log_softmax_row(z: &[f64], out: &mut [f64]) {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    for (o, v) in out.iter_mut().zip(z) {
        *o = v - lse;
    }
}

/// Class-wise decorrelation loss and its gradient with respect to the raw features.
///
/// For each class with at least two rows: normalize rows, center them,
/// `K_c = ZᵀZ / n_c`, penalty `‖K_c‖²_F / d²`; the loss is the mean over
/// eligible classes. Classes with fewer than two rows are skipped.
pub fn cwd_loss_and_grad(features: &DenseMatrix, labels: &[usize]) -> Result<(f64, DenseMatrix)> {
    let (n, d) = features.shape();
    if labels.len() != n {
        return Err(RfrError::Dimension("labels and features disagree in length".into()));
    }
    let mut grad = DenseMatrix::zeros(n, d);
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let groups: Vec<Vec<usize>> = classes
        .iter()
        .map(|&c| (0..n).filter(|&i| labels[i] == c).collect::<Vec<_>>())
        .filter(|g| g.len() >= 2)
        .collect();
    if groups.is_empty() {
        return Ok((0.0, grad));
    }
    let m = groups.len() as f64;
    let d2 = (d * d) as f64;
    let mut loss = 0.0;
    for idx in &groups {
        let nc = idx.len() as f64;
        let (hbar, norms) =
            row_normalize_with_norms(&features.select_rows(idx)).map_err(|e| match e {
                RfrError::ZeroRow(r) => RfrError::ZeroRow(idx[r]),
                other => other,
            })?;
        let mean: Vec<f64> = (0..d)
            .map(|j| (0..idx.len()).map(|r| hbar.get(r, j)).sum::<f64>() / nc)
            .collect();
        let z = DenseMatrix::from_fn(idx.len(), d, |r, j| hbar.get(r, j) - mean[j]);
        let k = z.matmul_tn(&z)?.scale(1.0 / nc);
        loss += k.data().iter().map(|v| v * v).sum::<f64>() / d2;
        // dL/dK = 2K/(d² m); dL/dZ = 2 Z dL/dK / n_c
        let dz = z.matmul(&k)?.scale(4.0 / (d2 * m * nc));
        let dz_mean: Vec<f64> = (0..d)
            .map(|j| (0..idx.len()).map(|r| dz.get(r, j)).sum::<f64>() / nc)
            .collect();
        for (r, &row) in idx.iter().enumerate() {
            let h = hbar.row(r);
            let g: Vec<f64> = (0..d).map(|j| dz.get(r, j) - dz_mean[j]).collect();
            let radial: f64 = h.iter().zip(&g).map(|(a, b)| a * b).sum();
            let out = grad.row_mut(row);
            for j in 0..d {
                out[j] = (g[j] - radial * h[j]) / norms[r];
            }
        }
    }
    Ok((loss / m, grad))
}

/// Loss `CE + α·reg` and its exact gradient for every parameter.
pub fn loss_and_backward(
    net: &Network,
    batch: &Batch,
    alpha: f64,
    regularizer: Regularizer,
) -> Result<(LossParts, ParamSet)> {
    objective_and_backward(net, batch, &Objective::plain(alpha, regularizer))
}

/// Loss and gradient of a general [`Objective`].
pub fn objective_and_backward(
    net: &Network,
    batch: &Batch,
    obj: &Objective<'_>,
) -> Result<(LossParts, ParamSet)> {
    let n = batch.labels.len();
    if n == 0 || batch.inputs.rows() != n {
        return Err(RfrError::Dimension(format!(
            "batch has {} inputs and {n} labels",
            batch.inputs.rows()
        )));
    }
    if !(obj.alpha >= 0.0) {
        return Err(RfrError::Dimension(format!("alpha must be >= 0, got {}", obj.alpha)));
    }
    net.check_inputs(&batch.inputs)?;
    let k = net.num_classes();
    if let Some(&bad) = batch.labels.iter().find(|&&l| l >= k) {
        return Err(RfrError::Dimension(format!(
            "label {bad} has no head row ({k} classes)"
        )));
    }

    let (acts, pre) = net.forward_cached(&batch.inputs);
    let features = acts.last().unwrap();
    let logits = net.head.apply(features);
    let inv_n = 1.0 / n as f64;

    // cross-entropy
    let mut dlogits = DenseMatrix::zeros(n, k);
    let mut ce = 0.0;
    let mut logp = vec![0.0; k];
    for i in 0..n {
        log_softmax_row(logits.row(i), &mut logp);
        let y = batch.labels[i];
        ce -= logp[y];
        let g = dlogits.row_mut(i);
        for c in 0..k {
            g[c] = logp[c].exp() * inv_n;
        }
        g[y] -= inv_n;
    }
    ce *= inv_n;

    // distillation on the old classes
    let mut kd = 0.0;
    if let Some(dist) = obj.distill.filter(|d| d.weight != 0.0) {
        let t = dist.teacher_logits;
        let k_old = t.cols();
        if t.rows() != n || k_old > k || k_old == 0 {
            return Err(RfrError::Dimension(format!(
                "teacher logits must be {n} x K_old with K_old <= {k}, got {}x{}",
                t.rows(),
                k_old
            )));
        }
        let tau = dist.temperature;
        let mut p = vec![0.0; k_old];
        let mut q = vec![0.0; k_old];
        let mut zs = vec![0.0; k_old];
        let mut zt = vec![0.0; k_old];
        for i in 0..n {
            for c in 0..k_old {
                zs[c] = logits.get(i, c) / tau;
                zt[c] = t.get(i, c) / tau;
            }
            log_softmax_row(&zt, &mut p);
            log_softmax_row(&zs, &mut q);
            let g = dlogits.row_mut(i);
            for c in 0..k_old {
                let pc = p[c].exp();
                kd -= pc * q[c];
                g[c] += dist.weight * (q[c].exp() - pc) * inv_n / tau;
            }
        }
        kd *= inv_n;
    }

    let mut grads = ParamSet::zeros_like(net);
    grads.head.weights = dlogits.matmul_tn(features)?;
    for i in 0..n {
        for (b, g) in grads.head.bias.iter_mut().zip(dlogits.row(i)) {
            *b += g;
        }
    }

    let mut reg = 0.0;
    let active_reg = obj.regularizer != Regularizer::None && obj.alpha > 0.0;
    let mut dfeat = if obj.train_extractor {
        Some(dlogits.matmul(&net.head.weights)?)
    } else {
        None
    };
    if active_reg {
        let (value, g) = match obj.regularizer {
            Regularizer::Rfr => {
                let r = rfr_loss_and_grad(features)?;
                (r.loss, r.grad_h)
            }
            Regularizer::Cwd => cwd_loss_and_grad(features, &batch.labels)?,
            Regularizer::None => unreachable!(),
        };
        reg = value;
        if let Some(df) = dfeat.as_mut() {
            for (a, b) in df.data_mut().iter_mut().zip(g.data()) {
                *a += obj.alpha * b;
            }
        }
    }

    if let Some(mut da) = dfeat {
        for l in (0..net.layers.len()).rev() {
            let layer = &net.layers[l];
            let z = &pre[l];
            for (g, &zv) in da.data_mut().iter_mut().zip(z.data()) {
                *g *= layer.activation.derivative(zv);
            }
            grads.layers[l].weights = da.matmul_tn(&acts[l])?;
            let bias = &mut grads.layers[l].bias;
            for i in 0..n {
                for (b, g) in bias.iter_mut().zip(da.row(i)) {
                    *b += g;
                }
            }
            if l > 0 {
                da = da.matmul(&layer.affine.weights)?;
            }
        }
    }

    let dw = obj.distill.map_or(0.0, |d| d.weight);
    let total = ce + obj.alpha * reg + dw * kd;
    Ok((
        LossParts { ce, reg, kd, total },
        grads,
    ))
}

/// Momentum SGD: `v ← μ·v + g`, `w ← w − lr·v`.
pub fn sgd_step(
    net: &mut Network,
    grads: &ParamSet,
    lr: f64,
    momentum: f64,
    velocity: &mut ParamSet,
) -> Result<()> {
    let params = net
        .layers
        .iter_mut()
        .map(|l| &mut l.affine)
        .chain(std::iter::once(&mut net.head));
    let gs = grads.layers.iter().chain(std::iter::once(&grads.head));
    let vs = velocity
        .layers
        .iter_mut()
        .chain(std::iter::once(&mut velocity.head));
    for ((p, g), v) in params.zip(gs).zip(vs) {
        if p.weights.shape() != g.weights.shape() || p.weights.shape() != v.weights.shape() {
            return Err(RfrError::Dimension("gradient shape does not match network".into()));
        }
        let update = |w: &mut [f64], g: &[f64], v: &mut [f64]| {
            for ((w, g), v) in w.iter_mut().zip(g).zip(v.iter_mut()) {
                *v = momentum * *v + g;
                *w -= lr * *v;
            }
        };
        update(p.weights.data_mut(), g.weights.data(), v.weights.data_mut());
        update(&mut p.bias, &g.bias, &mut v.bias);
    }
    if !net.params_flat().iter().all(|v| v.is_finite()) {
        return Err(RfrError::Diverged("non-finite parameter after SGD step".into()));
    }
    Ok(())
}

/// Shuffled mini-batches of `0..n`; a short trailing chunk is merged into the previous batch.
pub fn epoch_batches(n: usize, batch_size: usize, r: &mut rng::Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(r);
    let mut batches: Vec<Vec<usize>> = idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().unwrap().len() < batch_size {
        let tail = batches.pop().unwrap();
        batches.last_mut().unwrap().extend(tail);
    }
    batches
}

/// Plain supervised training with `CE + α·reg`. Returns the mean loss parts per epoch.
pub fn train_supervised(
    net: &mut Network,
    inputs: &DenseMatrix,
    labels: &[usize],
    schedule: &TrainSchedule,
    alpha: f64,
    regularizer: Regularizer,
) -> Result<Vec<LossParts>> {
    let rfr_active = alpha > 0.0 && regularizer == Regularizer::Rfr;
    schedule.validate(net.feature_dim(), rfr_active)?;
    if labels.len() != inputs.rows() {
        return Err(RfrError::Dimension("labels and inputs disagree in length".into()));
    }
    let mut r = rng::stream(schedule.seed, rng::STREAM_SHUFFLE);
    let mut velocity = ParamSet::zeros_like(net);
    let mut history = Vec::with_capacity(schedule.epochs);
    let obj = Objective::plain(alpha, regularizer);
    for epoch in 0..schedule.epochs {
        let lr = schedule.lr_at(epoch);
        let mut sum = LossParts::default();
        let batches = epoch_batches(labels.len(), schedule.batch_size, &mut r);
        for idx in &batches {
            let batch = Batch {
                inputs: inputs.select_rows(idx),
                labels: idx.iter().map(|&i| labels[i]).collect(),
            };
            let (parts, grads) = objective_and_backward(net, &batch, &obj)?;
            sgd_step(net, &grads, lr, schedule.momentum, &mut velocity)?;
            sum.ce += parts.ce;
            sum.reg += parts.reg;
            sum.total += parts.total;
        }
        let nb = batches.len().max(1) as f64;
        history.push(LossParts {
            ce: sum.ce / nb,
            reg: sum.reg / nb,
            kd: 0.0,
            total: sum.total / nb,
        });
    }
    Ok(history)
}

pub fn accuracy(net: &Network, inputs: &DenseMatrix, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Ok(0.0);
    }
    let pred = net.predict(inputs)?;
    let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}
