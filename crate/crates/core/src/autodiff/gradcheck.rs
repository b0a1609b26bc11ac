//! Central-difference gradient checking.

use rand::seq::index::sample;

use crate::array::Array;
use crate::autodiff::graph::{Graph, Var};
use crate::error::{Error, Result};
use crate::rng::seeded;

#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    pub eps: f64,
    /// Check at most this many coordinates per parameter array, sampled
    /// with `seed`; `None` checks every coordinate.
    pub max_coords_per_param: Option<usize>,
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions { eps: 1e-5, max_coords_per_param: None, seed: 0 }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose ±eps perturbation crosses a ReLU kink.
    pub skipped: usize,
    /// `(param index, flat coordinate)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
}

/// Compares reverse-mode gradients of the scalar built by `build` against
/// central differences, for every parameter array in `params`.
///
/// Relative error per coordinate is
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-12)`.
pub fn gradcheck<F>(build: F, params: &[Array], opts: &GradcheckOptions) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if opts.eps <= 0.0 {
        return Err(Error::config("gradcheck step must be positive"));
    }
    let eval = |values: &[Array]| -> Result<(f64, Vec<bool>)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|a| g.param(a.clone())).collect();
        let root = build(&mut g, &vars)?;
        Ok((g.value(root).item(), g.relu_pattern()))
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|a| g.param(a.clone())).collect();
    let root = build(&mut g, &vars)?;
    g.backward(root)?;
    let analytic: Vec<Array> = vars.iter().map(|&v| g.grad_or_zeros(v)).collect();
    let base_pattern = g.relu_pattern();
    drop(g);

    let mut rng = seeded(opts.seed);
    let mut report = GradcheckReport::default();
    let mut work: Vec<Array> = params.to_vec();
    for (p, param) in params.iter().enumerate() {
        let coords: Vec<usize> = match opts.max_coords_per_param {
            Some(m) if m < param.len() => {
                let mut c = sample(&mut rng, param.len(), m).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..param.len()).collect(),
        };
        for c in coords {
            let orig = param.data()[c];
            work[p].data_mut()[c] = orig + opts.eps;
            let (fp, pat_p) = eval(&work)?;
            work[p].data_mut()[c] = orig - opts.eps;
            let (fm, pat_m) = eval(&work)?;
            work[p].data_mut()[c] = orig;
            if !fp.is_finite() || !fm.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite loss when perturbing parameter {p}, coordinate {c}"
                )));
            }
            if pat_p != base_pattern || pat_m != base_pattern {
                report.skipped += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * opts.eps);
            let a = analytic[p].data()[c];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
            report.checked += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((p, c));
            }
        }
    }
    Ok(report)
}
