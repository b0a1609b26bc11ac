//! The residual encoder-decoder with a shared self-expressive layer.
//!
//! Encoder layer `i` produces `Z_i = ReLU(conv_i(Z_{i-1}))` with `Z_0 = X`.
//! Every latent map passes through the self-expressive layer
//! (`Z_i -> Z_i Θc`, mixing along the sample axis), the innermost result
//! feeds the decoder, and the others are added back at the mirrored decoder
//! layer before its ReLU. The last decoder layer is linear.
//!
//! The pre-training network is the same graph with the self-expressive layer
//! removed, which is what `Θc = I` reduces the fine-tuning network to.

use serde::{Deserialize, Serialize};

use crate::array::Array;
use crate::autodiff::{ConvSpec, Graph, Var};
use crate::error::{Error, Result};
use crate::rng::{gaussian, seeded};

/// Initial value of every off-diagonal entry of Θc.
pub const THETA_INIT: f64 = 1e-4;

/// Symmetric network layout: encoder entries followed by their mirror.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub kernel_sizes: Vec<usize>,
    pub channels: Vec<usize>,
    pub input_channels: usize,
    pub stride: usize,
}

impl Default for Architecture {
    /// Kernels 5-3-3-3-3-5, channels 10-20-30-30-20-10, grayscale, stride 2.
    fn default() -> Self {
        Architecture {
            kernel_sizes: vec![5, 3, 3, 3, 3, 5],
            channels: vec![10, 20, 30, 30, 20, 10],
            input_channels: 1,
            stride: 2,
        }
    }
}

impl Architecture {
    /// Number of encoder layers (τ).
    pub fn depth(&self) -> usize {
        self.kernel_sizes.len() / 2
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.kernel_sizes.len();
        if n == 0 || !n.is_multiple_of(2) {
            return Err(Error::config(format!("kernel_sizes needs an even, nonzero length, got {n}")));
        }
        if self.channels.len() != n {
            return Err(Error::config(format!(
                "channels has {} entries, kernel_sizes has {n}",
                self.channels.len()
            )));
        }
        for i in 0..n / 2 {
            if self.kernel_sizes[i] != self.kernel_sizes[n - 1 - i] {
                return Err(Error::config(format!("kernel_sizes {:?} are not palindromic", self.kernel_sizes)));
            }
            if self.channels[i] != self.channels[n - 1 - i] {
                return Err(Error::config(format!("channels {:?} are not palindromic", self.channels)));
            }
        }
        if self.input_channels == 0 || self.channels.contains(&0) {
            return Err(Error::config("channel counts must be positive"));
        }
        for i in 0..self.depth() {
            self.encoder_spec(i)?;
        }
        Ok(())
    }

    /// Channel count after encoder layer `i` (1-based); `0` is the input.
    pub fn channels_at(&self, i: usize) -> usize {
        if i == 0 {
            self.input_channels
        } else {
            self.channels[i - 1]
        }
    }

    /// Spec of encoder layer `i` (0-based).
    pub fn encoder_spec(&self, i: usize) -> Result<ConvSpec> {
        ConvSpec::new(self.kernel_sizes[i], self.channels_at(i), self.channels_at(i + 1), self.stride)
    }

    /// Spec of decoder layer `j` (0-based). Decoder layer `j` is the
    /// transpose of encoder layer `τ - 1 - j` and shares its spec.
    pub fn decoder_spec(&self, j: usize) -> Result<ConvSpec> {
        let tau = self.depth();
        let mirror = tau - 1 - j;
        ConvSpec::new(self.kernel_sizes[tau + j], self.channels_at(mirror), self.channels_at(mirror + 1), self.stride)
    }

    /// Spatial sizes `[(H, W), (H_1, W_1), .., (H_τ, W_τ)]` for an input of
    /// `(h, w)`.
    pub fn spatial_shapes(&self, h: usize, w: usize) -> Result<Vec<(usize, usize)>> {
        let min = self.stride.pow(self.depth() as u32);
        if h < min || w < min {
            return Err(Error::config(format!(
                "input {h}x{w} too small for {} stride-{} layers (need >= {min})",
                self.depth(),
                self.stride
            )));
        }
        let mut shapes = vec![(h, w)];
        for i in 0..self.depth() {
            let spec = self.encoder_spec(i)?;
            let (ph, pw) = shapes[i];
            shapes.push((spec.output_len(ph), spec.output_len(pw)));
        }
        Ok(shapes)
    }
}

/// Which connections the network uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkipMode {
    /// Skip additions at every decoder layer; every latent map is
    /// self-expressed.
    #[default]
    Full,
    /// Plain encoder-decoder; only the innermost latent map is
    /// self-expressed.
    None,
}

impl std::str::FromStr for SkipMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(SkipMode::Full),
            "none" => Ok(SkipMode::None),
            other => Err(Error::config(format!("unknown skip mode {other:?} (expected full or none)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub weight: Array,
    pub bias: Array,
}

/// Encoder parameters Θe, decoder parameters Θd and (when fine-tuning) the
/// N×N self-expressive matrix Θc.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub encoder: Vec<LayerParams>,
    pub decoder: Vec<LayerParams>,
    pub theta: Option<Array>,
}

impl ModelParams {
    /// He-style Gaussian kernels (std `sqrt(2 / (k^2 n_in))`), zero biases,
    /// no Θc.
    pub fn init(arch: &Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = seeded(seed);
        let tau = arch.depth();
        let mut encoder = Vec::with_capacity(tau);
        for i in 0..tau {
            let spec = arch.encoder_spec(i)?;
            let std = (2.0 / (spec.kernel_size.pow(2) * spec.in_channels) as f64).sqrt();
            encoder.push(LayerParams {
                weight: gaussian(&spec.kernel_shape(), std, &mut rng),
                bias: Array::zeros(&[spec.out_channels]),
            });
        }
        let mut decoder = Vec::with_capacity(tau);
        for j in 0..tau {
            let spec = arch.decoder_spec(j)?;
            // the transposed layer reads spec.out_channels channels
            let std = (2.0 / (spec.kernel_size.pow(2) * spec.out_channels) as f64).sqrt();
            decoder.push(LayerParams {
                weight: gaussian(&spec.kernel_shape(), std, &mut rng),
                bias: Array::zeros(&[spec.in_channels]),
            });
        }
        Ok(ModelParams { encoder, decoder, theta: None })
    }

    /// Attaches an N×N Θc filled with [`THETA_INIT`] and a zero diagonal.
    pub fn with_theta(mut self, n: usize) -> Self {
        let mut theta = Array::full(&[n, n], THETA_INIT);
        zero_diagonal(&mut theta);
        self.theta = Some(theta);
        self
    }

    pub fn n_samples(&self) -> Option<usize> {
        self.theta.as_ref().map(|t| t.shape()[0])
    }

    /// Parameter arrays in declared order: encoder (weight, bias) pairs,
    /// decoder pairs, then Θc.
    pub fn arrays(&self) -> Vec<&Array> {
        let mut out = Vec::new();
        for layer in self.encoder.iter().chain(&self.decoder) {
            out.push(&layer.weight);
            out.push(&layer.bias);
        }
        if let Some(t) = &self.theta {
            out.push(t);
        }
        out
    }

    pub fn arrays_mut(&mut self) -> Vec<&mut Array> {
        let mut out = Vec::new();
        for layer in self.encoder.iter_mut().chain(self.decoder.iter_mut()) {
            out.push(&mut layer.weight);
            out.push(&mut layer.bias);
        }
        if let Some(t) = &mut self.theta {
            out.push(t);
        }
        out
    }

    /// Checks every array against the architecture (and `n` for Θc).
    pub fn check(&self, arch: &Architecture, n: Option<usize>) -> Result<()> {
        let tau = arch.depth();
        if self.encoder.len() != tau || self.decoder.len() != tau {
            return Err(Error::config(format!(
                "parameters have {}/{} encoder/decoder layers, architecture has {tau}",
                self.encoder.len(),
                self.decoder.len()
            )));
        }
        for i in 0..tau {
            let spec = arch.encoder_spec(i)?;
            spec.check_weights(&self.encoder[i].weight, spec.out_channels, &self.encoder[i].bias)
                .map_err(|e| Error::config(format!("encoder layer {}: {e}", i + 1)))?;
            let spec = arch.decoder_spec(i)?;
            spec.check_weights(&self.decoder[i].weight, spec.in_channels, &self.decoder[i].bias)
                .map_err(|e| Error::config(format!("decoder layer {}: {e}", i + 1)))?;
        }
        if let (Some(n), Some(t)) = (n, &self.theta) {
            if t.shape() != [n, n] {
                return Err(Error::config(format!(
                    "self-expressive matrix has shape {:?}, batch has {n} samples",
                    t.shape()
                )));
            }
        }
        Ok(())
    }
}

pub fn zero_diagonal(theta: &mut Array) {
    let n = theta.shape()[0];
    for i in 0..n {
        theta.set2(i, i, 0.0);
    }
}

/// Graph handles for a [`ModelParams`].
#[derive(Clone, Debug)]
pub struct ParamVars {
    pub encoder: Vec<(Var, Var)>,
    pub decoder: Vec<(Var, Var)>,
    pub theta: Option<Var>,
}

impl ParamVars {
    /// Registers every array as a differentiable leaf, in declared order.
    pub fn register(g: &mut Graph, params: &ModelParams) -> Self {
        Self::register_with(g, params, true, true)
    }

    /// Registers the autoencoder and Θc as parameters or constants.
    pub fn register_with(g: &mut Graph, params: &ModelParams, train_autoencoder: bool, train_theta: bool) -> Self {
        let leaf = |g: &mut Graph, a: &Array, train: bool| if train { g.param(a.clone()) } else { g.constant(a.clone()) };
        let encoder = params
            .encoder
            .iter()
            .map(|l| (leaf(g, &l.weight, train_autoencoder), leaf(g, &l.bias, train_autoencoder)))
            .collect();
        let decoder = params
            .decoder
            .iter()
            .map(|l| (leaf(g, &l.weight, train_autoencoder), leaf(g, &l.bias, train_autoencoder)))
            .collect();
        let theta = params.theta.as_ref().map(|t| leaf(g, t, train_theta));
        ParamVars { encoder, decoder, theta }
    }

    /// Inverse of [`ParamVars::vars`] for handles created elsewhere, e.g.
    /// by a gradient checker. `has_theta` says whether the last handle is Θc.
    pub fn from_slice(vars: &[Var], depth: usize, has_theta: bool) -> Self {
        let pairs: Vec<(Var, Var)> = vars[..4 * depth].chunks_exact(2).map(|c| (c[0], c[1])).collect();
        ParamVars {
            encoder: pairs[..depth].to_vec(),
            decoder: pairs[depth..].to_vec(),
            theta: if has_theta { vars.get(4 * depth).copied() } else { None },
        }
    }

    /// Handles in the same order as [`ModelParams::arrays`].
    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for &(w, b) in self.encoder.iter().chain(&self.decoder) {
            out.push(w);
            out.push(b);
        }
        out.extend(self.theta);
        out
    }
}

/// Per-layer latent maps `Z_1..Z_τ`, each `N x n_i x H_i x W_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentStack {
    pub maps: Vec<Array>,
}

impl LatentStack {
    pub fn depth(&self) -> usize {
        self.maps.len()
    }

    /// `D_i x N` matrix view of layer `i` (0-based): column `j` is sample
    /// `j`'s feature map flattened in channel-row-column order.
    pub fn flattened(&self, i: usize) -> Array {
        let m = &self.maps[i];
        let n = m.shape()[0];
        let d = m.len() / n.max(1);
        m.reshape(&[n, d]).and_then(|a| a.transpose()).expect("latent maps are 4-D")
    }
}

/// Graph handles produced by one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub reconstruction: Var,
    /// `Z_1..Z_τ`.
    pub latents: Vec<Var>,
    /// `Z_iΘc` for each self-expressed layer, paired with its index into
    /// `latents`. Empty in the pre-training network.
    pub expressed: Vec<(usize, Var)>,
}

/// `(H, W)` of the input followed by each encoder output.
pub type SpatialShapes = Vec<(usize, usize)>;

/// `Z_i = ReLU(conv_i(Z_{i-1}))`; returns the latents and the recorded
/// spatial shapes `[(H, W), (H_1, W_1), ..]`.
pub fn encode_graph(
    g: &mut Graph,
    x: Var,
    vars: &ParamVars,
    arch: &Architecture,
) -> Result<(Vec<Var>, SpatialShapes)> {
    let shape = g.value(x).shape().to_vec();
    let [_, c, h, w] = shape[..] else {
        return Err(Error::config(format!("input must be NCHW, got {shape:?}")));
    };
    if c != arch.input_channels {
        return Err(Error::config(format!("input has {c} channels, architecture expects {}", arch.input_channels)));
    }
    let shapes = arch.spatial_shapes(h, w)?;
    let mut z = x;
    let mut latents = Vec::with_capacity(arch.depth());
    for (i, &(wv, bv)) in vars.encoder.iter().enumerate() {
        let pre = g.conv2d(z, &arch.encoder_spec(i)?, wv, bv)?;
        z = g.relu(pre);
        latents.push(z);
    }
    Ok((latents, shapes))
}

/// `Z Θc` for a batch-major feature map: output sample `j` is
/// `Σ_k Θc[k, j] Z[k]`. No bias, no activation.
pub fn self_express_graph(g: &mut Graph, z: Var, theta_t: Var) -> Result<Var> {
    let shape = g.value(z).shape().to_vec();
    let n = shape[0];
    if g.value(theta_t).shape() != [n, n] {
        return Err(Error::config(format!(
            "self-expressive matrix has shape {:?}, batch has {n} samples",
            g.value(theta_t).shape()
        )));
    }
    let d = g.value(z).len() / n.max(1);
    let flat = g.reshape(z, &[n, d])?;
    let mixed = g.matmul(theta_t, flat)?;
    g.reshape(mixed, &shape)
}

/// Decoder. `payloads[i]` pairs with latent `Z_{i+1}`; the last payload is
/// the decoder input and, in [`SkipMode::Full`], the others are added at the
/// mirrored layer. In [`SkipMode::None`] only the last payload is read.
pub fn decode_graph(
    g: &mut Graph,
    payloads: &[Var],
    vars: &ParamVars,
    arch: &Architecture,
    shapes: &[(usize, usize)],
    mode: SkipMode,
) -> Result<Var> {
    let tau = arch.depth();
    if payloads.len() != tau || shapes.len() != tau + 1 {
        return Err(Error::config(format!(
            "decoder needs {tau} payloads and {} shapes, got {} and {}",
            tau + 1,
            payloads.len(),
            shapes.len()
        )));
    }
    let mut d = payloads[tau - 1];
    for (j, &(wv, bv)) in vars.decoder.iter().enumerate() {
        let target = shapes[tau - 1 - j];
        let up = g.deconv2d(d, &arch.decoder_spec(j)?, wv, bv, target)?;
        if j + 1 == tau {
            d = up;
        } else if mode == SkipMode::Full {
            let sum = g.add(up, payloads[tau - 2 - j])?;
            d = g.relu(sum);
        } else {
            d = g.relu(up);
        }
    }
    Ok(d)
}

/// Pre-training network: skips carry the raw latents.
pub fn forward_pretrain_graph(
    g: &mut Graph,
    x: Var,
    vars: &ParamVars,
    arch: &Architecture,
    mode: SkipMode,
) -> Result<Forward> {
    let (latents, shapes) = encode_graph(g, x, vars, arch)?;
    let reconstruction = decode_graph(g, &latents, vars, arch, &shapes, mode)?;
    Ok(Forward { reconstruction, latents, expressed: Vec::new() })
}

/// Fine-tuning network: every payload (skips and decoder input) is passed
/// through the shared self-expressive layer first.
pub fn forward_finetune_graph(
    g: &mut Graph,
    x: Var,
    vars: &ParamVars,
    arch: &Architecture,
    mode: SkipMode,
) -> Result<Forward> {
    let theta = vars.theta.ok_or_else(|| Error::config("fine-tuning needs a self-expressive matrix"))?;
    let (latents, shapes) = encode_graph(g, x, vars, arch)?;
    let theta_t = g.transpose(theta)?;
    let tau = latents.len();
    let mut expressed = Vec::new();
    let mut payloads = latents.clone();
    let first = if mode == SkipMode::Full { 0 } else { tau - 1 };
    for (i, &z) in latents.iter().enumerate().skip(first) {
        let e = self_express_graph(g, z, theta_t)?;
        payloads[i] = e;
        expressed.push((i, e));
    }
    let reconstruction = decode_graph(g, &payloads, vars, arch, &shapes, mode)?;
    Ok(Forward { reconstruction, latents, expressed })
}

/// Components of the global loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// `½‖X − X̂‖²_F`
    pub reconstruction: f64,
    /// `Σ_i ‖Z_i − Z_iΘc‖²_F`
    pub self_expression: f64,
    /// `λ‖Θc‖²_F`
    pub regularizer: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn from_parts(reconstruction: f64, self_expression: f64, regularizer: f64) -> Self {
        LossBreakdown {
            reconstruction,
            self_expression,
            regularizer,
            total: reconstruction + self_expression + regularizer,
        }
    }
}

/// Loss nodes of one forward pass; `total` is the root to differentiate.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub reconstruction: Var,
    pub self_expression: Option<Var>,
    pub regularizer: Option<Var>,
    pub total: Var,
}

impl LossVars {
    pub fn breakdown(&self, g: &Graph) -> LossBreakdown {
        let val = |v: Option<Var>| v.map_or(0.0, |v| g.value(v).item());
        LossBreakdown::from_parts(
            g.value(self.reconstruction).item(),
            val(self.self_expression),
            val(self.regularizer),
        )
    }
}

/// `½‖X − X̂‖²_F`.
pub fn reconstruction_loss_graph(g: &mut Graph, x: Var, x_hat: Var) -> Result<Var> {
    let diff = g.sub(x, x_hat)?;
    let sq = g.frobenius_sq(diff);
    Ok(g.scale(sq, 0.5))
}

/// `Σ_i ‖Z_i − Z_iΘc‖²_F` over the self-expressed layers.
pub fn self_expression_loss_graph(g: &mut Graph, pairs: &[(Var, Var)]) -> Result<Option<Var>> {
    let mut acc: Option<Var> = None;
    for &(z, e) in pairs {
        let diff = g.sub(z, e)?;
        let term = g.frobenius_sq(diff);
        acc = Some(match acc {
            Some(a) => g.add(a, term)?,
            None => term,
        });
    }
    Ok(acc)
}

/// Global loss: reconstruction + self-expression + `λ‖Θc‖²_F`. Without a
/// Θc (pre-training) only the reconstruction term is present.
pub fn loss_graph(g: &mut Graph, x: Var, fwd: &Forward, theta: Option<Var>, lambda: f64) -> Result<LossVars> {
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::config(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    let reconstruction = reconstruction_loss_graph(g, x, fwd.reconstruction)?;
    let pairs: Vec<(Var, Var)> = fwd.expressed.iter().map(|&(i, e)| (fwd.latents[i], e)).collect();
    let self_expression = self_expression_loss_graph(g, &pairs)?;
    let regularizer = match theta {
        Some(t) => {
            let sq = g.frobenius_sq(t);
            Some(g.scale(sq, lambda))
        }
        None => None,
    };
    let mut total = reconstruction;
    if let Some(s) = self_expression {
        total = g.add(total, s)?;
    }
    if let Some(r) = regularizer {
        total = g.add(total, r)?;
    }
    Ok(LossVars { reconstruction, self_expression, regularizer, total })
}

fn check_input(x: &Array) -> Result<()> {
    if x.ndim() != 4 || x.shape()[0] == 0 {
        return Err(Error::config(format!("input must be a nonempty NCHW batch, got {:?}", x.shape())));
    }
    Ok(())
}

/// Latent stack of `x` under the encoder parameters.
pub fn encode(x: &Array, params: &ModelParams, arch: &Architecture) -> Result<LatentStack> {
    check_input(x)?;
    params.check(arch, None)?;
    let mut g = Graph::new();
    let vars = ParamVars::register_with(&mut g, params, false, false);
    let xv = g.constant(x.clone());
    let (latents, _) = encode_graph(&mut g, xv, &vars, arch)?;
    Ok(LatentStack { maps: latents.iter().map(|&v| g.value(v).clone()).collect() })
}

/// `Z_iΘc` for every layer of the stack.
pub fn self_express(z: &LatentStack, theta: &Array) -> Result<Vec<Array>> {
    let mut g = Graph::new();
    let t = g.constant(theta.clone());
    let tt = g.transpose(t)?;
    let mut out = Vec::with_capacity(z.depth());
    for m in &z.maps {
        let zv = g.constant(m.clone());
        let e = self_express_graph(&mut g, zv, tt)?;
        out.push(g.value(e).clone());
    }
    Ok(out)
}

/// Decoder on explicit payloads; see [`decode_graph`].
pub fn decode(
    payloads: &[Array],
    params: &ModelParams,
    arch: &Architecture,
    shapes: &[(usize, usize)],
    mode: SkipMode,
) -> Result<Array> {
    params.check(arch, None)?;
    let mut g = Graph::new();
    let vars = ParamVars::register_with(&mut g, params, false, false);
    let pv: Vec<Var> = payloads.iter().map(|p| g.constant(p.clone())).collect();
    let out = decode_graph(&mut g, &pv, &vars, arch, shapes, mode)?;
    Ok(g.value(out).clone())
}

pub fn forward_pretrain(x: &Array, params: &ModelParams, arch: &Architecture, mode: SkipMode) -> Result<Array> {
    check_input(x)?;
    params.check(arch, None)?;
    let mut g = Graph::new();
    let vars = ParamVars::register_with(&mut g, params, false, false);
    let xv = g.constant(x.clone());
    let fwd = forward_pretrain_graph(&mut g, xv, &vars, arch, mode)?;
    Ok(g.value(fwd.reconstruction).clone())
}

pub fn forward_finetune(
    x: &Array,
    params: &ModelParams,
    arch: &Architecture,
    mode: SkipMode,
) -> Result<(Array, LatentStack)> {
    check_input(x)?;
    params.check(arch, Some(x.shape()[0]))?;
    let mut g = Graph::new();
    let vars = ParamVars::register_with(&mut g, params, false, false);
    let xv = g.constant(x.clone());
    let fwd = forward_finetune_graph(&mut g, xv, &vars, arch, mode)?;
    let latents = LatentStack { maps: fwd.latents.iter().map(|&v| g.value(v).clone()).collect() };
    Ok((g.value(fwd.reconstruction).clone(), latents))
}

/// Evaluates the global loss on explicit arrays, self-expressing every
/// layer of `z`.
pub fn loss_global(x: &Array, x_hat: &Array, z: &LatentStack, theta: &Array, lambda: f64) -> Result<LossBreakdown> {
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::config(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    let reconstruction = 0.5 * x.sub(x_hat)?.frobenius_sq();
    let expressed = self_express(z, theta)?;
    let mut self_expression = 0.0;
    for (zi, ei) in z.maps.iter().zip(&expressed) {
        self_expression += zi.sub(ei)?.frobenius_sq();
    }
    let regularizer = lambda * theta.frobenius_sq();
    Ok(LossBreakdown::from_parts(reconstruction, self_expression, regularizer))
}

/// Parameter totals for an architecture and batch size.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterCounts {
    pub weights: usize,
    pub biases: usize,
    pub self_expressive: usize,
}

/// Closed-form parameter counts, cross-checked against the arrays that
/// [`ModelParams::init`] actually allocates.
///
/// Weights: `Σ_i 2 k_i² n_{i-1} n_i`. Biases: every encoder layer has `n_i`,
/// decoder layers produce `n_{τ-1}, .., n_1, n_0`, so `2 Σ_i n_i - n_τ + n_0`.
pub fn count_parameters(arch: &Architecture, n: usize) -> Result<ParameterCounts> {
    arch.validate()?;
    if n == 0 {
        return Err(Error::config("batch size must be at least 1"));
    }
    let tau = arch.depth();
    let weights: usize = (1..=tau)
        .map(|i| 2 * arch.kernel_sizes[i - 1].pow(2) * arch.channels_at(i - 1) * arch.channels_at(i))
        .sum();
    let biases = 2 * (1..=tau).map(|i| arch.channels_at(i)).sum::<usize>() - arch.channels_at(tau) + arch.channels_at(0);
    let counts = ParameterCounts { weights, biases, self_expressive: n * n };

    let params = ModelParams::init(arch, 0)?.with_theta(n);
    let layers = params.encoder.iter().chain(&params.decoder);
    let enumerated = ParameterCounts {
        weights: layers.clone().map(|l| l.weight.len()).sum(),
        biases: layers.map(|l| l.bias.len()).sum(),
        self_expressive: params.theta.as_ref().map_or(0, Array::len),
    };
    if enumerated != counts {
        return Err(Error::contract(format!(
            "parameter accounting mismatch: formula {counts:?}, enumeration {enumerated:?}"
        )));
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::uniform;

    fn small_arch() -> Architecture {
        Architecture { kernel_sizes: vec![3, 3, 3, 3], channels: vec![2, 3, 3, 2], input_channels: 1, stride: 2 }
    }

    #[test]
    fn default_architecture_is_valid_and_symmetric() {
        let arch = Architecture::default();
        arch.validate().unwrap();
        assert_eq!(arch.depth(), 3);
        let d0 = arch.decoder_spec(0).unwrap();
        assert_eq!((d0.kernel_size, d0.in_channels, d0.out_channels), (3, 20, 30));
        let d2 = arch.decoder_spec(2).unwrap();
        assert_eq!((d2.kernel_size, d2.in_channels, d2.out_channels), (5, 1, 10));
    }

    #[test]
    fn asymmetric_architecture_rejected() {
        let mut arch = Architecture::default();
        arch.channels[5] = 11;
        assert!(arch.validate().is_err());
        let mut arch = Architecture::default();
        arch.kernel_sizes[0] = 3;
        assert!(arch.validate().is_err());
    }

    #[test]
    fn spatial_arithmetic_for_48_by_42() {
        let shapes = Architecture::default().spatial_shapes(48, 42).unwrap();
        assert_eq!(shapes, vec![(48, 42), (24, 21), (12, 11), (6, 6)]);
        assert!(Architecture::default().spatial_shapes(7, 42).is_err());
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_latents() {
        let arch = small_arch();
        let params = ModelParams::init(&arch, 1).unwrap();
        let z = encode(&Array::zeros(&[3, 1, 8, 8]), &params, &arch).unwrap();
        assert!(z.maps.iter().all(|m| m.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn single_image_batch() {
        let arch = small_arch();
        let params = ModelParams::init(&arch, 1).unwrap();
        let x = uniform(&[1, 1, 8, 8], 0.0, 1.0, &mut seeded(3));
        let z = encode(&x, &params, &arch).unwrap();
        for i in 0..z.depth() {
            assert_eq!(z.flattened(i).shape()[1], 1);
        }
    }

    #[test]
    fn flattened_view_holds_the_same_values() {
        let arch = small_arch();
        let params = ModelParams::init(&arch, 1).unwrap();
        let x = uniform(&[4, 1, 8, 8], 0.0, 1.0, &mut seeded(3));
        let z = encode(&x, &params, &arch).unwrap();
        let f = z.flattened(0);
        let d = f.shape()[0];
        for s in 0..4 {
            for k in 0..d {
                assert_eq!(f.at2(k, s), z.maps[0].data()[s * d + k]);
            }
        }
    }

    #[test]
    fn self_express_identity_zero_and_permutation() {
        let arch = small_arch();
        let params = ModelParams::init(&arch, 1).unwrap();
        let x = uniform(&[3, 1, 8, 8], 0.0, 1.0, &mut seeded(4));
        let z = encode(&x, &params, &arch).unwrap();

        let same = self_express(&z, &Array::eye(3)).unwrap();
        assert_eq!(same, z.maps);

        let zero = self_express(&z, &Array::zeros(&[3, 3])).unwrap();
        assert!(zero.iter().all(|m| m.data().iter().all(|&v| v == 0.0)));

        // column j one-hot at sample perm[j]
        let perm = [2usize, 0, 1];
        let mut p = Array::zeros(&[3, 3]);
        for (j, &k) in perm.iter().enumerate() {
            p.set2(k, j, 1.0);
        }
        let moved = self_express(&z, &p).unwrap();
        for (m, zm) in moved.iter().zip(&z.maps) {
            let per = zm.len() / 3;
            for (j, &k) in perm.iter().enumerate() {
                assert_eq!(&m.data()[j * per..(j + 1) * per], &zm.data()[k * per..(k + 1) * per]);
            }
        }
        assert!(self_express(&z, &Array::eye(4)).is_err());
    }

    #[test]
    fn zero_decoder_passes_skip_payload_through_relu() {
        let arch = small_arch();
        let mut params = ModelParams::init(&arch, 2).unwrap();
        for l in &mut params.decoder {
            l.weight = Array::zeros(l.weight.shape());
        }
        let mut rng = seeded(9);
        let shapes = arch.spatial_shapes(8, 8).unwrap();
        let payloads: Vec<Array> = (1..=arch.depth())
            .map(|i| gaussian(&[2, arch.channels_at(i), shapes[i].0, shapes[i].1], 1.0, &mut rng))
            .collect();
        let mut g = Graph::new();
        let vars = ParamVars::register(&mut g, &params);
        let pv: Vec<Var> = payloads.iter().map(|p| g.constant(p.clone())).collect();
        let tau = arch.depth();
        // first decoder block on its own: output = ReLU(0 + payload_{τ-1})
        let up = g.deconv2d(pv[tau - 1], &arch.decoder_spec(0).unwrap(), vars.decoder[0].0, vars.decoder[0].1, shapes[tau - 1]).unwrap();
        let sum = g.add(up, pv[tau - 2]).unwrap();
        let block = g.relu(sum);
        let want = payloads[tau - 2].map(|v| v.max(0.0));
        assert_eq!(g.value(block), &want);
        let out = decode(&payloads, &params, &arch, &shapes, SkipMode::Full).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
        assert_eq!(out.shape(), &[2, 1, 8, 8]);
    }

    #[test]
    fn recorded_shapes_are_honored() {
        let arch = Architecture::default();
        let params = ModelParams::init(&arch, 5).unwrap();
        let x = uniform(&[1, 1, 48, 42], 0.0, 1.0, &mut seeded(1));
        let z = encode(&x, &params, &arch).unwrap();
        let dims: Vec<(usize, usize)> = z.maps.iter().map(|m| (m.shape()[2], m.shape()[3])).collect();
        assert_eq!(dims, vec![(24, 21), (12, 11), (6, 6)]);
        let out = forward_pretrain(&x, &params, &arch, SkipMode::Full).unwrap();
        assert_eq!(out.shape(), x.shape());
    }

    #[test]
    fn identity_theta_reduces_to_pretrain_network() {
        let arch = small_arch();
        let mut params = ModelParams::init(&arch, 11).unwrap();
        for l in &mut params.decoder {
            l.bias = uniform(l.bias.shape(), -0.1, 0.1, &mut seeded(2));
        }
        let x = uniform(&[5, 1, 8, 8], 0.0, 1.0, &mut seeded(12));
        let pre = forward_pretrain(&x, &params, &arch, SkipMode::Full).unwrap();
        params.theta = Some(Array::eye(5));
        let (fine, _) = forward_finetune(&x, &params, &arch, SkipMode::Full).unwrap();
        assert_eq!(pre, fine);
    }

    #[test]
    fn zero_theta_leaves_only_decoder_biases() {
        let arch = small_arch();
        let mut params = ModelParams::init(&arch, 11).unwrap();
        params.theta = Some(Array::zeros(&[3, 3]));
        let x = uniform(&[3, 1, 8, 8], 0.0, 1.0, &mut seeded(12));
        let (a, _) = forward_finetune(&x, &params, &arch, SkipMode::Full).unwrap();
        let y = uniform(&[3, 1, 8, 8], 0.0, 1.0, &mut seeded(13));
        let (b, _) = forward_finetune(&y, &params, &arch, SkipMode::Full).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn loss_plug_in_values() {
        let arch = small_arch();
        let params = ModelParams::init(&arch, 3).unwrap();
        let x = uniform(&[4, 1, 8, 8], 0.0, 1.0, &mut seeded(5));
        let z = encode(&x, &params, &arch).unwrap();
        let l = loss_global(&x, &x, &z, &Array::zeros(&[4, 4]), 7.5).unwrap();
        let want: f64 = z.maps.iter().map(Array::frobenius_sq).sum();
        assert_eq!(l.reconstruction, 0.0);
        assert_eq!(l.regularizer, 0.0);
        assert!((l.self_expression - want).abs() <= 1e-12 * want);
        assert_eq!(l.total, l.reconstruction + l.self_expression + l.regularizer);

        let zero = Array::zeros(&[2, 1, 8, 8]);
        let zz = LatentStack { maps: vec![Array::zeros(&[2, 2, 4, 4])] };
        let l0 = loss_global(&zero, &zero, &zz, &Array::zeros(&[2, 2]), 1.0).unwrap();
        assert_eq!(l0.total, 0.0);
    }

    #[test]
    fn parameter_counts_default() {
        let c = count_parameters(&Architecture::default(), 100).unwrap();
        assert_eq!(c.weights, 2 * (25 * 10 + 9 * 10 * 20 + 9 * 20 * 30));
        assert_eq!(c.weights, 14900);
        // encoder 10+20+30, decoder 20+10+1
        assert_eq!(c.biases, 91);
        assert_eq!(c.self_expressive, 10000);
    }

    #[test]
    fn self_expressive_parameters_dominate_from_n_123() {
        let arch = Architecture::default();
        let c122 = count_parameters(&arch, 122).unwrap();
        let c123 = count_parameters(&arch, 123).unwrap();
        assert!(c122.self_expressive <= c122.weights + c122.biases);
        assert!(c123.self_expressive > c123.weights + c123.biases);
    }
}
