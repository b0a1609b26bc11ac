//! Gradient-check suite over the primitive operators and the full network
//! loss, shared by the command line tool and the test suites.

use serde::Serialize;

use crate::array::Array;
use crate::autodiff::{gradcheck, ConvSpec, GradcheckOptions, GradcheckReport};
use crate::error::Result;
use crate::model::{forward_finetune_graph, loss_graph, Architecture, LayerParams, ModelParams, ParamVars, SkipMode};
use crate::rng::{gaussian, seeded, uniform};

/// Tolerance on the maximum relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, Serialize)]
pub struct CaseReport {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

impl CaseReport {
    fn new(name: &str, r: GradcheckReport) -> Self {
        CaseReport { name: name.into(), max_rel_error: r.max_rel_error, checked: r.checked, skipped: r.skipped }
    }

    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_error < GRADCHECK_TOLERANCE
    }
}

/// Small architecture used for the composed-loss check: two stride-2
/// layers on 8x8 inputs.
pub fn toy_architecture() -> Architecture {
    Architecture { kernel_sizes: vec![3, 3, 3, 3], channels: vec![2, 3, 3, 2], input_channels: 1, stride: 2 }
}

/// Randomized toy parameters: He weights, small random biases and a dense
/// zero-diagonal Θc, so that every term of the loss carries gradient.
pub fn toy_params(arch: &Architecture, n: usize, seed: u64) -> Result<ModelParams> {
    let mut params = ModelParams::init(arch, seed)?;
    let mut rng = seeded(seed ^ 0x5eed);
    let jitter = |layers: &mut Vec<LayerParams>, rng: &mut _| {
        for l in layers.iter_mut() {
            l.bias = uniform(l.bias.shape(), -0.1, 0.1, rng);
        }
    };
    jitter(&mut params.encoder, &mut rng);
    jitter(&mut params.decoder, &mut rng);
    let mut theta = gaussian(&[n, n], 0.3, &mut rng);
    crate::model::zero_diagonal(&mut theta);
    params.theta = Some(theta);
    Ok(params)
}

fn conv_case(seed: u64, transpose: bool, opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let mut rng = seeded(seed);
    let spec = ConvSpec::new(3, 2, 3, 2)?;
    let w = gaussian(&spec.kernel_shape(), 0.5, &mut rng);
    if transpose {
        let y = gaussian(&[2, 3, 3, 4], 1.0, &mut rng);
        let b = gaussian(&[2], 0.5, &mut rng);
        gradcheck(
            |g, v| {
                let out = g.deconv2d(v[0], &spec, v[1], v[2], (5, 7))?;
                Ok(g.frobenius_sq(out))
            },
            &[y, w, b],
            opts,
        )
    } else {
        let x = gaussian(&[2, 2, 5, 7], 1.0, &mut rng);
        let b = gaussian(&[3], 0.5, &mut rng);
        gradcheck(
            |g, v| {
                let out = g.conv2d(v[0], &spec, v[1], v[2])?;
                Ok(g.frobenius_sq(out))
            },
            &[x, w, b],
            opts,
        )
    }
}

/// Runs every case with the given seed. `max_coords` bounds the number of
/// sampled coordinates per parameter array of the composed loss.
pub fn gradcheck_suite(seed: u64, max_coords: Option<usize>) -> Result<Vec<CaseReport>> {
    let opts = GradcheckOptions { eps: 1e-5, max_coords_per_param: None, seed };
    let mut out = vec![
        CaseReport::new("conv2d", conv_case(seed, false, &opts)?),
        CaseReport::new("deconv2d", conv_case(seed, true, &opts)?),
    ];

    let mut rng = seeded(seed.wrapping_add(1));
    let x = gaussian(&[3, 4, 5], 1.0, &mut rng);
    let weights = gaussian(&[5, 1], 1.0, &mut rng);
    out.push(CaseReport::new(
        "relu",
        gradcheck(
            |g, v| {
                let r = g.relu(v[0]);
                let flat = g.reshape(r, &[12, 5])?;
                let wv = g.constant(weights.clone());
                let y = g.matmul(flat, wv)?;
                Ok(g.sum(y))
            },
            &[x],
            &opts,
        )?,
    ));

    let a = gaussian(&[4, 6], 1.0, &mut rng);
    let b = gaussian(&[6, 3], 1.0, &mut rng);
    out.push(CaseReport::new(
        "matmul",
        gradcheck(
            |g, v| {
                let p = g.matmul(v[0], v[1])?;
                let t = g.transpose(p)?;
                let q = g.matmul(t, p)?;
                Ok(g.sum(q))
            },
            &[a, b],
            &opts,
        )?,
    ));

    let m = gaussian(&[5, 4], 1.0, &mut rng);
    out.push(CaseReport::new(
        "frobenius_sq",
        gradcheck(|g, v| Ok(g.frobenius_sq(v[0])), &[m], &opts)?,
    ));

    let arch = toy_architecture();
    let images = uniform(&[4, 1, 8, 8], 0.0, 1.0, &mut rng);
    let params = toy_params(&arch, 4, seed)?;
    let composed = GradcheckOptions { max_coords_per_param: max_coords, ..opts.clone() };
    for (name, mode) in [("redsc_loss", SkipMode::Full), ("redsc_loss_no_skip", SkipMode::None)] {
        let report = gradcheck(
            |g, v| {
                let vars = ParamVars::from_slice(v, arch.depth(), true);
                let xv = g.constant(images.clone());
                let fwd = forward_finetune_graph(g, xv, &vars, &arch, mode)?;
                Ok(loss_graph(g, xv, &fwd, vars.theta, 1.0)?.total)
            },
            &params.arrays().into_iter().cloned().collect::<Vec<Array>>(),
            &composed,
        )?;
        out.push(CaseReport::new(name, report));
    }
    Ok(out)
}
