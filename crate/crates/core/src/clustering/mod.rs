//! Affinity construction, normalized spectral clustering and the ERR / NMI /
//! purity scores.

use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::array::Array;
use crate::error::{Error, Result};
use crate::rng::{seeded, Rng};

pub mod assignment;

/// Symmetric, nonnegative, zero-diagonal similarity matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Affinity(Array);

impl Affinity {
    /// `A = (|C| + |Cᵀ|) / 2` with the diagonal zeroed.
    pub fn from_coefficients(c: &Array) -> Result<Self> {
        let n = match *c.shape() {
            [r, k] if r == k => r,
            _ => return Err(Error::config(format!("coefficient matrix must be square, got {:?}", c.shape()))),
        };
        let mut a = Array::zeros(&[n, n]);
        for i in 0..n {
            for j in i + 1..n {
                let v = (c.at2(i, j).abs() + c.at2(j, i).abs()) / 2.0;
                a.set2(i, j, v);
                a.set2(j, i, v);
            }
        }
        Ok(Affinity(a))
    }

    /// Wraps a matrix after checking the affinity invariants.
    pub fn new(a: Array) -> Result<Self> {
        let n = match *a.shape() {
            [r, k] if r == k => r,
            _ => return Err(Error::config(format!("affinity must be square, got {:?}", a.shape()))),
        };
        for i in 0..n {
            if a.at2(i, i) != 0.0 {
                return Err(Error::contract(format!("affinity diagonal entry {i} is nonzero")));
            }
            for j in 0..n {
                let v = a.at2(i, j);
                if v.is_nan() || v < 0.0 || v != a.at2(j, i) {
                    return Err(Error::contract(format!("affinity entry ({i}, {j}) is negative or asymmetric")));
                }
            }
        }
        Ok(Affinity(a))
    }

    pub fn matrix(&self) -> &Array {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectralOptions {
    pub restarts: usize,
    pub max_iter: usize,
    /// Lower bound applied to node degrees before `D^{-1/2}`.
    pub degree_floor: f64,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        SpectralOptions { restarts: 20, max_iter: 300, degree_floor: 1e-12 }
    }
}

pub fn spectral_cluster(a: &Affinity, n_clusters: usize, seed: u64) -> Result<Vec<usize>> {
    spectral_cluster_with(a, n_clusters, seed, &SpectralOptions::default())
}

/// Normalized spectral clustering: eigenvectors of the `n_clusters`
/// smallest eigenvalues of `I − D^{-1/2} A D^{-1/2}`, row-normalized, then
/// k-means with restarts.
pub fn spectral_cluster_with(a: &Affinity, n_clusters: usize, seed: u64, opts: &SpectralOptions) -> Result<Vec<usize>> {
    let n = a.len();
    if n_clusters < 2 {
        return Err(Error::contract(format!("need at least 2 clusters, got {n_clusters}")));
    }
    if n_clusters > n {
        return Err(Error::contract(format!("{n_clusters} clusters requested for {n} points")));
    }
    let m = a.matrix();
    if m.data().iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateAffinity("all entries are zero".into()));
    }
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = m.data()[i * n..(i + 1) * n].iter().sum();
            1.0 / d.max(opts.degree_floor).sqrt()
        })
        .collect();
    let lap = DMatrix::from_fn(n, n, |i, j| {
        let off = -m.at2(i, j) * inv_sqrt[i] * inv_sqrt[j];
        if i == j {
            1.0 + off
        } else {
            off
        }
    });
    let eig = SymmetricEigen::new(lap);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&p, &q| eig.eigenvalues[p].total_cmp(&eig.eigenvalues[q]).then(p.cmp(&q)));

    let mut embedding = vec![0.0; n * n_clusters];
    for (c, &col) in order.iter().take(n_clusters).enumerate() {
        for i in 0..n {
            embedding[i * n_clusters + c] = eig.eigenvectors[(i, col)];
        }
    }
    for row in embedding.chunks_mut(n_clusters) {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    let points = Array::new(vec![n, n_clusters], embedding)?;
    let mut rng = seeded(seed);
    Ok(kmeans(&points, n_clusters, opts.restarts, opts.max_iter, &mut rng)?.labels)
}

/// Affinity from Θc followed by spectral clustering.
pub fn cluster_coefficients(theta: &Array, n_clusters: usize, seed: u64) -> Result<Vec<usize>> {
    spectral_cluster(&Affinity::from_coefficients(theta)?, n_clusters, seed)
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub inertia: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index and squared distance of the nearest center; ties go to the
/// lowest index.
fn nearest(p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(p, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_seeds(points: &Array, k: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let (n, dim) = (points.shape()[0], points.shape()[1]);
    let row = |i: usize| points.data()[i * dim..(i + 1) * dim].to_vec();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut dist: Vec<f64> = (0..n).map(|i| sq_dist(&row(i), &row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &d) in dist.iter().enumerate() {
                if d > 0.0 {
                    pick = Some(i);
                    if target < d {
                        break;
                    }
                    target -= d;
                }
            }
            pick.expect("positive total")
        } else {
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        let c = row(next);
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min(sq_dist(&row(i), &c));
        }
    }
    chosen.into_iter().map(row).collect()
}

/// Lloyd's k-means with k-means++ seeding; the lowest-inertia run of
/// `restarts` wins (earliest run on ties).
pub fn kmeans(points: &Array, k: usize, restarts: usize, max_iter: usize, rng: &mut Rng) -> Result<KMeansResult> {
    let (n, dim) = match *points.shape() {
        [n, d] => (n, d),
        _ => return Err(Error::config("k-means expects an N x d matrix")),
    };
    if k == 0 || k > n {
        return Err(Error::contract(format!("cannot form {k} clusters from {n} points")));
    }
    let row = |i: usize| &points.data()[i * dim..(i + 1) * dim];
    let mut best: Option<KMeansResult> = None;
    for _ in 0..restarts.max(1) {
        let mut centers = plus_plus_seeds(points, k, rng);
        let mut labels = vec![usize::MAX; n];
        for _ in 0..max_iter {
            let mut changed = false;
            for (i, l) in labels.iter_mut().enumerate() {
                let (c, _) = nearest(row(i), &centers);
                if *l != c {
                    *l = c;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
            let mut sums = vec![vec![0.0; dim]; k];
            let mut counts = vec![0usize; k];
            for (i, &l) in labels.iter().enumerate() {
                counts[l] += 1;
                sums[l].iter_mut().zip(row(i)).for_each(|(s, v)| *s += v);
            }
            for c in 0..k {
                if counts[c] > 0 {
                    centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
                } else {
                    // reseed an empty cluster at the worst-fit point
                    let far = (0..n)
                        .map(|i| (i, sq_dist(row(i), &centers[labels[i]])))
                        .fold((0, -1.0), |b, x| if x.1 > b.1 { x } else { b })
                        .0;
                    centers[c] = row(far).to_vec();
                    labels[far] = c;
                }
            }
        }
        for (i, l) in labels.iter_mut().enumerate() {
            *l = nearest(row(i), &centers).0;
        }
        let inertia: f64 = labels.iter().enumerate().map(|(i, &l)| sq_dist(row(i), &centers[l])).sum();
        if best.as_ref().is_none_or(|b| inertia < b.inertia) {
            best = Some(KMeansResult { labels, inertia });
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Confusion counts between two labelings, with both label sets compacted
/// to `0..k` in order of first appearance of sorted ids.
fn contingency(pred: &[usize], truth: &[usize]) -> Result<(Vec<Vec<u64>>, usize)> {
    if pred.len() != truth.len() {
        return Err(Error::contract(format!(
            "labelings have different lengths ({} vs {})",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::contract("labelings are empty"));
    }
    let compact = |labels: &[usize]| {
        let mut ids: Vec<usize> = labels.to_vec();
        ids.sort_unstable();
        ids.dedup();
        let map: HashMap<usize, usize> = ids.iter().enumerate().map(|(i, &l)| (l, i)).collect();
        (labels.iter().map(|l| map[l]).collect::<Vec<_>>(), ids.len())
    };
    let (p, kp) = compact(pred);
    let (t, kt) = compact(truth);
    let mut table = vec![vec![0u64; kt]; kp];
    for (&a, &b) in p.iter().zip(&t) {
        table[a][b] += 1;
    }
    Ok((table, pred.len()))
}

/// `1 −` the best accuracy over one-to-one matchings of predicted clusters
/// to true classes.
pub fn clustering_error(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let (table, n) = contingency(pred, truth)?;
    let size = table.len().max(table[0].len());
    let max = n as i64;
    let mut cost = vec![vec![max; size]; size];
    for (i, row) in table.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            cost[i][j] = max - c as i64;
        }
    }
    let assign = assignment::min_cost_assignment(&cost);
    let matched: u64 = assign
        .iter()
        .enumerate()
        .filter(|&(i, &j)| i < table.len() && j < table[0].len())
        .map(|(i, &j)| table[i][j])
        .sum();
    Ok(1.0 - matched as f64 / n as f64)
}

/// `I(pred; truth) / sqrt(H(pred) H(truth))`, defined as 0 when either
/// entropy vanishes.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let (table, n) = contingency(pred, truth)?;
    let n = n as f64;
    let rows: Vec<f64> = table.iter().map(|r| r.iter().sum::<u64>() as f64).collect();
    let cols: Vec<f64> = (0..table[0].len()).map(|j| table.iter().map(|r| r[j]).sum::<u64>() as f64).collect();
    let entropy = |m: &[f64]| -m.iter().filter(|&&c| c > 0.0).map(|&c| c / n * (c / n).ln()).sum::<f64>();
    let (hp, ht) = (entropy(&rows), entropy(&cols));
    let mut mi = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                mi += c / n * (n * c / (rows[i] * cols[j])).ln();
            }
        }
    }
    let denom = (hp * ht).sqrt();
    if denom <= 0.0 {
        return Ok(0.0);
    }
    Ok((mi / denom).clamp(0.0, 1.0))
}

/// Fraction of points in the majority true class of their cluster.
pub fn purity(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let (table, n) = contingency(pred, truth)?;
    let hits: u64 = table.iter().map(|r| r.iter().copied().max().unwrap_or(0)).sum();
    Ok(hits as f64 / n as f64)
}

/// Predicted labels with their scores against ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    pub labels: Vec<usize>,
    pub n_clusters: usize,
    pub err: f64,
    pub nmi: f64,
    pub pur: f64,
}

impl ClusterResult {
    pub fn evaluate(labels: Vec<usize>, truth: &[usize], n_clusters: usize) -> Result<Self> {
        let err = clustering_error(&labels, truth)?;
        let nmi = nmi(&labels, truth)?;
        let pur = purity(&labels, truth)?;
        Ok(ClusterResult { labels, n_clusters, err, nmi, pur })
    }

    /// CSV with columns `index,predicted,truth`.
    pub fn labels_csv(&self, truth: &[usize]) -> String {
        let mut out = String::from("index,predicted,truth\n");
        for (i, (p, t)) in self.labels.iter().zip(truth).enumerate() {
            let _ = writeln!(out, "{i},{p},{t}");
        }
        out
    }

    pub fn summary(&self, seed: u64) -> MetricsSummary {
        MetricsSummary { err: self.err, nmi: self.nmi, pur: self.pur, n: self.labels.len(), seed }
    }
}

/// The JSON metrics record written next to label CSVs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub err: f64,
    pub nmi: f64,
    pub pur: f64,
    pub n: usize,
    pub seed: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block_affinity(sizes: &[usize], inside: f64, cross: f64) -> (Affinity, Vec<usize>) {
        let n: usize = sizes.iter().sum();
        let truth: Vec<usize> = sizes.iter().enumerate().flat_map(|(b, &s)| std::iter::repeat_n(b, s)).collect();
        let mut a = Array::zeros(&[n, n]);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    a.set2(i, j, if truth[i] == truth[j] { inside } else { cross });
                }
            }
        }
        (Affinity::new(a).unwrap(), truth)
    }

    #[test]
    fn affinity_from_zero_and_antisymmetric() {
        let a = Affinity::from_coefficients(&Array::zeros(&[3, 3])).unwrap();
        assert!(a.matrix().data().iter().all(|&v| v == 0.0));
        let mut c = Array::zeros(&[2, 2]);
        c.set2(0, 1, 0.7);
        c.set2(1, 0, -0.7);
        let a = Affinity::from_coefficients(&c).unwrap();
        assert_eq!(a.matrix().at2(0, 1), 0.7);
        assert_eq!(a.matrix().at2(1, 0), 0.7);
        assert!(Affinity::from_coefficients(&Array::zeros(&[2, 3])).is_err());
    }

    #[test]
    fn blocks_recovered() {
        let (a, truth) = block_affinity(&[4, 5, 6], 1.0, 0.0);
        let labels = spectral_cluster(&a, 3, 0).unwrap();
        assert_eq!(clustering_error(&labels, &truth).unwrap(), 0.0);
    }

    #[test]
    fn tiny_cross_edge_still_recovered() {
        let (mut a, truth) = block_affinity(&[5, 5], 1.0, 0.0);
        let mut m = a.matrix().clone();
        m.set2(0, 9, 1e-6);
        m.set2(9, 0, 1e-6);
        a = Affinity::new(m).unwrap();
        let labels = spectral_cluster(&a, 2, 3).unwrap();
        assert_eq!(clustering_error(&labels, &truth).unwrap(), 0.0);
    }

    #[test]
    fn every_point_its_own_cluster() {
        let (a, _) = block_affinity(&[3, 3], 1.0, 0.2);
        let mut labels = spectral_cluster(&a, 6, 1).unwrap();
        labels.sort_unstable();
        labels.dedup();
        assert_eq!(labels.len(), 6);
    }

    #[test]
    fn degenerate_and_bad_cluster_counts() {
        let a = Affinity::new(Array::zeros(&[4, 4])).unwrap();
        assert!(matches!(spectral_cluster(&a, 2, 0), Err(Error::DegenerateAffinity(_))));
        let (a, _) = block_affinity(&[2, 2], 1.0, 0.0);
        assert!(spectral_cluster(&a, 1, 0).is_err());
        assert!(spectral_cluster(&a, 5, 0).is_err());
    }

    #[test]
    fn metric_identities() {
        let t = vec![0, 0, 1, 1, 2, 2];
        assert_eq!(clustering_error(&t, &t).unwrap(), 0.0);
        let relabeled: Vec<usize> = t.iter().map(|&l| [7, 3, 5][l]).collect();
        assert_eq!(clustering_error(&relabeled, &t).unwrap(), 0.0);
        assert!((nmi(&relabeled, &t).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(purity(&relabeled, &t).unwrap(), 1.0);

        let truth = vec![0, 0, 1, 1];
        let single = vec![4, 4, 4, 4];
        assert_eq!(nmi(&single, &truth).unwrap(), 0.0);
        assert_eq!(purity(&single, &truth).unwrap(), 0.5);
        assert_eq!(clustering_error(&single, &truth).unwrap(), 0.5);
        assert!(matches!(clustering_error(&[0, 1], &[0]), Err(Error::Contract(_))));
    }

    #[test]
    fn result_csv() {
        let r = ClusterResult::evaluate(vec![1, 0], &[0, 1], 2).unwrap();
        assert_eq!(r.err, 0.0);
        assert_eq!(r.labels_csv(&[0, 1]), "index,predicted,truth\n0,1,0\n1,0,1\n");
    }
}
