//! Synthetic unions of linear subspaces rendered as images.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::array::Array;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::from_dmatrix;
use crate::rng::{gaussian, seeded};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub n_subspaces: usize,
    pub dim: usize,
    pub height: usize,
    pub width: usize,
    pub per_class: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SynthParams {
    /// Five 4-dimensional subspaces of 8x8 images, 50 points each,
    /// noise 0.01, seed 7.
    pub fn acceptance() -> Self {
        SynthParams { n_subspaces: 5, dim: 4, height: 8, width: 8, per_class: 50, noise_sigma: 0.01, seed: 7 }
    }

    pub fn ambient_dim(&self) -> usize {
        self.height * self.width
    }
}

#[derive(Clone, Debug)]
pub struct SynthData {
    pub dataset: Dataset,
    /// Pre-rescale `D x N` data matrix, columns grouped by subspace.
    pub raw: Array,
    /// `(min, max)` of `raw`, mapped to `(0, 1)` in the images.
    pub rescale: (f64, f64),
}

/// Draws `per_class` points from each of `n_subspaces` random
/// `dim`-dimensional subspaces of `R^{H W}`: orthonormal bases from the QR
/// of a Gaussian matrix, `N(0, 1)` coefficients, `N(0, σ²)` ambient noise.
/// Images are the min-max rescaled columns.
pub fn synth_subspaces(p: &SynthParams) -> Result<SynthData> {
    let d_amb = p.ambient_dim();
    if p.dim == 0 || p.dim >= d_amb {
        return Err(Error::contract(format!("subspace dimension {} must lie in 1..{d_amb}", p.dim)));
    }
    if p.n_subspaces < 1 || p.per_class < 1 {
        return Err(Error::contract("need at least one subspace and one point per class"));
    }
    if p.noise_sigma.is_nan() || p.noise_sigma < 0.0 {
        return Err(Error::contract("noise_sigma must be >= 0"));
    }
    let mut rng = seeded(p.seed);
    let n = p.n_subspaces * p.per_class;
    let mut raw = DMatrix::<f64>::zeros(d_amb, n);
    for k in 0..p.n_subspaces {
        let g = gaussian(&[d_amb, p.dim], 1.0, &mut rng);
        let basis = DMatrix::from_row_slice(d_amb, p.dim, g.data()).qr().q();
        let coef = gaussian(&[p.dim, p.per_class], 1.0, &mut rng);
        let coef = DMatrix::from_row_slice(p.dim, p.per_class, coef.data());
        let block = basis * coef;
        raw.columns_mut(k * p.per_class, p.per_class).copy_from(&block);
    }
    if p.noise_sigma > 0.0 {
        let noise = gaussian(&[d_amb, n], p.noise_sigma, &mut rng);
        raw += DMatrix::from_row_slice(d_amb, n, noise.data());
    }
    let raw = from_dmatrix(&raw);
    let lo = raw.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let mut pixels = vec![0.0; n * d_amb];
    for j in 0..n {
        for r in 0..d_amb {
            pixels[j * d_amb + r] = if span > 0.0 { ((raw.at2(r, j) - lo) / span).clamp(0.0, 1.0) } else { 0.0 };
        }
    }
    let images = Array::new(vec![n, 1, p.height, p.width], pixels)?;
    let labels = (0..n).map(|j| j / p.per_class).collect();
    let dataset = Dataset::new(
        images,
        Some(labels),
        "synthetic-subspaces",
        format!(
            "{} subspaces of dim {} in {}x{}, {} per class, sigma {}, seed {}",
            p.n_subspaces, p.dim, p.height, p.width, p.per_class, p.noise_sigma, p.seed
        ),
    )?;
    Ok(SynthData { dataset, raw, rescale: (lo, hi) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_single_subspace_has_exact_rank() {
        let p = SynthParams { n_subspaces: 1, dim: 3, height: 4, width: 4, per_class: 20, noise_sigma: 0.0, seed: 1 };
        let s = synth_subspaces(&p).unwrap();
        let m = DMatrix::from_row_slice(16, 20, s.raw.data());
        let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        assert!(sv[2] > 1e-3);
        assert!(sv[3] < 1e-10, "{}", sv[3]);
    }

    #[test]
    fn noiseless_union_rank_bounded() {
        let p = SynthParams { n_subspaces: 3, dim: 2, height: 4, width: 4, per_class: 10, noise_sigma: 0.0, seed: 2 };
        let s = synth_subspaces(&p).unwrap();
        let m = DMatrix::from_row_slice(16, 30, s.raw.data());
        let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        assert!(sv[6] < 1e-10);
    }

    #[test]
    fn deterministic_and_in_range() {
        let p = SynthParams::acceptance();
        let a = synth_subspaces(&p).unwrap();
        let b = synth_subspaces(&p).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.dataset.len(), 250);
        let px = a.dataset.images.data();
        assert!(px.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(px.contains(&0.0) && px.contains(&1.0));
    }

    #[test]
    fn rescale_is_affine_in_raw() {
        let s = synth_subspaces(&SynthParams::acceptance()).unwrap();
        let (lo, hi) = s.rescale;
        let flat = s.dataset.flattened();
        let back = flat.map(|v| v * (hi - lo) + lo);
        assert!(back.sub(&s.raw).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn dimension_must_be_below_ambient() {
        let p = SynthParams { dim: 64, ..SynthParams::acceptance() };
        assert!(matches!(synth_subspaces(&p), Err(Error::Contract(_))));
    }
}
