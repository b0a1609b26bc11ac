//! Closed-form ridge (least-squares regression) self-expression.
//!
//! `min_C Σ_i ‖Z_i − Z_i C‖²_F + λ‖C‖²_F` has the minimizer
//! `C* = (G + λI)⁻¹ G` with `G = Σ_i Z_iᵀ Z_i`. With the constraint
//! `diag(C) = 0` each column gets a Lagrange multiplier and the minimizer
//! becomes `C* = I − P diag(P)⁻¹` with `P = (G + λI)⁻¹`.

use nalgebra::{Cholesky, DMatrix};

use crate::array::Array;
use crate::clustering::{spectral_cluster, Affinity, ClusterResult};
use crate::error::{Error, Result};
use crate::linalg::{from_dmatrix, gemm, to_dmatrix};
use crate::model::LatentStack;

/// Feature matrices `Z_i` (each `D_i x N`), the ridge weight and whether
/// the diagonal of `C` is pinned to zero.
#[derive(Clone, Debug)]
pub struct RidgeProblem {
    pub features: Vec<Array>,
    pub lambda: f64,
    pub zero_diag: bool,
}

impl RidgeProblem {
    pub fn new(features: Vec<Array>, lambda: f64) -> Self {
        RidgeProblem { features, lambda, zero_diag: false }
    }

    /// Uses the flattened `D_i x N` views of a latent stack.
    pub fn from_latents(z: &LatentStack, lambda: f64) -> Self {
        RidgeProblem::new((0..z.depth()).map(|i| z.flattened(i)).collect(), lambda)
    }

    pub fn n_samples(&self) -> Result<usize> {
        let n = self
            .features
            .first()
            .filter(|f| f.ndim() == 2)
            .map(|f| f.shape()[1])
            .ok_or_else(|| Error::config("ridge problem needs at least one D x N feature matrix"))?;
        if self.features.iter().any(|f| f.ndim() != 2 || f.shape()[1] != n) {
            return Err(Error::config("feature matrices disagree on the number of samples"));
        }
        Ok(n)
    }

    /// `G = Σ_i Z_iᵀ Z_i`.
    pub fn gram(&self) -> Result<Array> {
        let n = self.n_samples()?;
        let mut g = vec![0.0; n * n];
        for f in &self.features {
            let d = f.shape()[0];
            gemm(n, d, n, 1.0, f.data(), true, f.data(), false, 1.0, &mut g);
        }
        Array::new(vec![n, n], g)
    }

    /// `Σ_i ‖Z_i − Z_i C‖²_F + λ‖C‖²_F`.
    pub fn objective(&self, c: &Array) -> Result<f64> {
        let mut total = self.lambda * c.frobenius_sq();
        for f in &self.features {
            total += f.sub(&f.matmul(c)?)?.frobenius_sq();
        }
        Ok(total)
    }

    /// Analytic gradient of [`RidgeProblem::objective`]:
    /// `2 ((G + λI) C − G)`.
    pub fn objective_gradient(&self, c: &Array) -> Result<Array> {
        let g = self.gram()?;
        let mut grad = g.matmul(c)?;
        grad.axpy(self.lambda, c);
        grad.axpy(-1.0, &g);
        Ok(grad.scale(2.0))
    }
}

/// Exact minimizer of the ridge self-expression objective.
pub fn ridge_closed_form(problem: &RidgeProblem) -> Result<Array> {
    if !(problem.lambda >= 0.0 && problem.lambda.is_finite()) {
        return Err(Error::config(format!("lambda must be finite and >= 0, got {}", problem.lambda)));
    }
    let n = problem.n_samples()?;
    let gram = to_dmatrix(&problem.gram()?);
    let system = &gram + DMatrix::identity(n, n) * problem.lambda;
    let chol = Cholesky::new(system).ok_or_else(|| {
        if problem.lambda == 0.0 {
            Error::RegularizationRequired("Gram matrix is singular and lambda = 0".into())
        } else {
            Error::Numerical("G + lambda I is not positive definite".into())
        }
    })?;
    if !problem.zero_diag {
        return Ok(from_dmatrix(&chol.solve(&gram)));
    }
    let p = chol.inverse();
    let c = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { -p[(i, j)] / p[(j, j)] });
    Ok(from_dmatrix(&c))
}

/// Two-stage classical pipeline on raw vectorized samples (`D x N`):
/// ridge coefficients, affinity, spectral clustering, scores.
pub fn lsr_baseline_cluster(
    x_raw: &Array,
    lambda: f64,
    n_clusters: usize,
    seed: u64,
    truth: &[usize],
) -> Result<ClusterResult> {
    lsr_baseline_cluster_with(x_raw, lambda, false, n_clusters, seed, truth)
}

pub fn lsr_baseline_cluster_with(
    x_raw: &Array,
    lambda: f64,
    zero_diag: bool,
    n_clusters: usize,
    seed: u64,
    truth: &[usize],
) -> Result<ClusterResult> {
    if n_clusters < 2 {
        return Err(Error::contract(format!("need at least 2 clusters, got {n_clusters}")));
    }
    let problem = RidgeProblem { features: vec![x_raw.clone()], lambda, zero_diag };
    let c = ridge_closed_form(&problem)?;
    let affinity = Affinity::from_coefficients(&c)?;
    let labels = spectral_cluster(&affinity, n_clusters, seed)?;
    ClusterResult::evaluate(labels, truth, n_clusters)
}
