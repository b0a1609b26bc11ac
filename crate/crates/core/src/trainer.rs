//! Full-batch Adam training: reconstruction-only pre-training followed by
//! joint fine-tuning of Θe, Θd and Θc on the global loss.
//!
//! One epoch is one gradient step on the whole batch. The loss recorded for
//! an epoch is the loss at the parameters the step started from.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::array::Array;
use crate::autodiff::{Graph, Var};
use crate::clustering;
use crate::error::{Error, Result};
use crate::model::{
    self, forward_finetune_graph, forward_pretrain_graph, loss_graph, zero_diagonal, Architecture,
    LossBreakdown, ModelParams, ParamVars, SkipMode,
};

/// Training stops with [`Error::Divergence`] once the total loss exceeds
/// this multiple of its first recorded value.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub epochs_pretrain: usize,
    pub epochs_finetune: usize,
    pub lambda: f64,
    pub seed: u64,
    pub zero_diag: bool,
    pub skip_mode: SkipMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            epochs_pretrain: 500,
            epochs_finetune: 1000,
            lambda: 1.0,
            seed: 0,
            zero_diag: true,
            skip_mode: SkipMode::Full,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if self.adam_eps.is_nan() || self.adam_eps < 0.0 {
            return Err(Error::config(format!("adam_eps must be >= 0, got {}", self.adam_eps)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        Ok(())
    }
}

/// Moment estimates for one set of parameter arrays.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Array>,
    pub v: Vec<Array>,
    pub step: u64,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Array>) -> Self {
        let m: Vec<Array> = params.into_iter().map(|p| Array::zeros(p.shape())).collect();
        AdamState { v: m.clone(), m, step: 0 }
    }
}

/// One bias-corrected Adam update of every array in `params`.
pub fn adam_step(params: &mut [&mut Array], grads: &[Array], state: &mut AdamState, cfg: &TrainConfig) {
    debug_assert_eq!(params.len(), grads.len());
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.adam_beta1.powi(t);
    let c2 = 1.0 - cfg.adam_beta2.powi(t);
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        let (pd, gd) = (p.data_mut(), g.data());
        for (((x, &gi), mi), vi) in pd.iter_mut().zip(gd).zip(m.data_mut()).zip(v.data_mut()) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *x -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub err: Option<f64>,
}

/// One record per completed epoch, in order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossHistory {
    pub records: Vec<EpochRecord>,
}

impl LossHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn totals(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss.total).collect()
    }

    /// CSV with columns `epoch,reconstruction,self_expression,regularizer,total,err`;
    /// `err` is left empty for epochs without a clustering evaluation.
    /// Floats use Rust's shortest round-trip formatting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,reconstruction,self_expression,regularizer,total,err\n");
        for r in &self.records {
            let err = r.err.map(|e| e.to_string()).unwrap_or_default();
            let l = &r.loss;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.epoch, l.reconstruction, l.self_expression, l.regularizer, l.total, err
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// First epoch whose total is within `factor` of the final total.
    pub fn epochs_to_reach(&self, factor: f64) -> Option<usize> {
        let last = self.records.last()?.loss.total;
        self.records.iter().find(|r| r.loss.total <= factor * last).map(|r| r.epoch)
    }
}

/// Per-epoch clustering evaluation during fine-tuning.
#[derive(Clone, Debug)]
pub struct ErrMonitor {
    pub truth: Vec<usize>,
    pub n_clusters: usize,
    /// Evaluate every `every` epochs (and at the last epoch); 0 disables.
    pub every: usize,
    pub seed: u64,
}

struct Guard {
    initial: Option<f64>,
}

impl Guard {
    fn check(&mut self, epoch: usize, loss: &LossBreakdown) -> Result<()> {
        if !loss.total.is_finite() {
            return Err(Error::Divergence { epoch, detail: format!("non-finite loss {loss:?}") });
        }
        let initial = *self.initial.get_or_insert(loss.total);
        if initial > 0.0 && loss.total > DIVERGENCE_FACTOR * initial {
            return Err(Error::Divergence {
                epoch,
                detail: format!("loss {} exceeds {DIVERGENCE_FACTOR:e} x initial {initial}", loss.total),
            });
        }
        Ok(())
    }
}

fn check_batch(x: &Array, arch: &Architecture) -> Result<usize> {
    arch.validate()?;
    match *x.shape() {
        [n, c, h, w] if n > 0 && c == arch.input_channels => {
            arch.spatial_shapes(h, w)?;
            Ok(n)
        }
        _ => Err(Error::config(format!(
            "training batch must be N x {} x H x W, got {:?}",
            arch.input_channels,
            x.shape()
        ))),
    }
}

/// Reconstruction-only training from a fresh initialization.
pub fn pretrain(x: &Array, arch: &Architecture, cfg: &TrainConfig) -> Result<(ModelParams, LossHistory)> {
    let params = ModelParams::init(arch, cfg.seed)?;
    pretrain_from(x, params, arch, cfg)
}

/// Reconstruction-only training starting from `params` (Θc is ignored).
pub fn pretrain_from(
    x: &Array,
    mut params: ModelParams,
    arch: &Architecture,
    cfg: &TrainConfig,
) -> Result<(ModelParams, LossHistory)> {
    cfg.validate()?;
    check_batch(x, arch)?;
    params.theta = None;
    params.check(arch, None)?;
    let mut state = AdamState::new(params.arrays());
    let mut history = LossHistory::default();
    let mut guard = Guard { initial: None };
    for epoch in 0..cfg.epochs_pretrain {
        let mut g = Graph::new();
        let vars = ParamVars::register(&mut g, &params);
        let xv = g.constant(x.clone());
        let fwd = forward_pretrain_graph(&mut g, xv, &vars, arch, cfg.skip_mode)?;
        let loss = loss_graph(&mut g, xv, &fwd, None, cfg.lambda)?;
        let breakdown = loss.breakdown(&g);
        guard.check(epoch, &breakdown)?;
        g.backward(loss.total)?;
        let grads = gradients(&g, &vars.vars());
        adam_step(&mut params.arrays_mut(), &grads, &mut state, cfg);
        history.records.push(EpochRecord { epoch, loss: breakdown, err: None });
        if epoch % 50 == 0 {
            log::debug!("pretrain epoch {epoch}: L_e = {:.6}", breakdown.reconstruction);
        }
    }
    Ok((params, history))
}

fn gradients(g: &Graph, vars: &[Var]) -> Vec<Array> {
    vars.iter().map(|&v| g.grad_or_zeros(v)).collect()
}

/// Joint training of the whole network on the global loss, starting from
/// pre-trained encoder/decoder parameters. A Θc already present in `init`
/// is used as-is; otherwise one is created for the batch.
pub fn finetune(
    x: &Array,
    init: &ModelParams,
    arch: &Architecture,
    cfg: &TrainConfig,
    monitor: Option<&ErrMonitor>,
) -> Result<(ModelParams, LossHistory)> {
    cfg.validate()?;
    let n = check_batch(x, arch)?;
    let mut params = init.clone();
    if params.theta.is_none() {
        params = params.with_theta(n);
    }
    params.check(arch, Some(n))?;
    if let Some(m) = monitor {
        if m.truth.len() != n {
            return Err(Error::config(format!("{} labels for {n} samples", m.truth.len())));
        }
    }
    if cfg.zero_diag {
        zero_diagonal(params.theta.as_mut().expect("theta attached"));
    }

    let mut state = AdamState::new(params.arrays());
    let mut history = LossHistory::default();
    let mut guard = Guard { initial: None };
    for epoch in 0..cfg.epochs_finetune {
        let mut g = Graph::new();
        let vars = ParamVars::register(&mut g, &params);
        let xv = g.constant(x.clone());
        let fwd = forward_finetune_graph(&mut g, xv, &vars, arch, cfg.skip_mode)?;
        let loss = loss_graph(&mut g, xv, &fwd, vars.theta, cfg.lambda)?;
        let breakdown = loss.breakdown(&g);
        guard.check(epoch, &breakdown)?;
        g.backward(loss.total)?;
        let grads = gradients(&g, &vars.vars());
        drop(g);

        let err = match monitor {
            Some(m) if m.every > 0 && (epoch % m.every == 0 || epoch + 1 == cfg.epochs_finetune) => {
                let theta = params.theta.as_ref().expect("theta attached");
                let labels = clustering::cluster_coefficients(theta, m.n_clusters, m.seed)?;
                Some(clustering::clustering_error(&labels, &m.truth)?)
            }
            _ => None,
        };

        adam_step(&mut params.arrays_mut(), &grads, &mut state, cfg);
        if cfg.zero_diag {
            zero_diagonal(params.theta.as_mut().expect("theta attached"));
        }
        history.records.push(EpochRecord { epoch, loss: breakdown, err });
        if epoch % 25 == 0 {
            log::debug!("finetune epoch {epoch}: total = {:.6}, err = {err:?}", breakdown.total);
        }
    }
    Ok((params, history))
}

/// Trains Θc alone by Adam on `Σ_i ‖Z_i − Z_iΘc‖²_F + λ‖Θc‖²_F` with the
/// latent maps held fixed, for `cfg.epochs_finetune` steps.
///
/// This is the fine-tuning objective with the encoder frozen and the
/// reconstruction term dropped; its unconstrained minimizer has a closed
/// form (see [`crate::baselines::ridge_closed_form`]).
pub fn fit_self_expression(latents: &[Array], cfg: &TrainConfig) -> Result<(Array, LossHistory)> {
    cfg.validate()?;
    let n = latents.first().map(|z| z.shape()[0]).ok_or_else(|| Error::config("no latent maps"))?;
    if latents.iter().any(|z| z.shape()[0] != n) {
        return Err(Error::config("latent maps disagree on the number of samples"));
    }
    let mut theta = Array::full(&[n, n], model::THETA_INIT);
    zero_diagonal(&mut theta);
    let mut state = AdamState::new([&theta]);
    let mut history = LossHistory::default();
    let mut guard = Guard { initial: None };
    for epoch in 0..cfg.epochs_finetune {
        let mut g = Graph::new();
        let t = g.param(theta.clone());
        let tt = g.transpose(t)?;
        let mut pairs = Vec::with_capacity(latents.len());
        for z in latents {
            let zv = g.constant(z.clone());
            let e = model::self_express_graph(&mut g, zv, tt)?;
            pairs.push((zv, e));
        }
        let se = model::self_expression_loss_graph(&mut g, &pairs)?.expect("at least one layer");
        let sq = g.frobenius_sq(t);
        let reg = g.scale(sq, cfg.lambda);
        let total = g.add(se, reg)?;
        let breakdown = LossBreakdown::from_parts(0.0, g.value(se).item(), g.value(reg).item());
        guard.check(epoch, &breakdown)?;
        g.backward(total)?;
        let grad = g.grad_or_zeros(t);
        drop(g);
        adam_step(&mut [&mut theta], &[grad], &mut state, cfg);
        if cfg.zero_diag {
            zero_diagonal(&mut theta);
        }
        history.records.push(EpochRecord { epoch, loss: breakdown, err: None });
    }
    Ok((theta, history))
}
