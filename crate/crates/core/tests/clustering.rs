use proptest::prelude::*;

use redsc_core::clustering::assignment::min_cost_assignment;
use redsc_core::clustering::{clustering_error, nmi, purity, spectral_cluster, Affinity};
use redsc_core::Array;

fn labels(max_k: usize, len: std::ops::Range<usize>) -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    len.prop_flat_map(move |n| (prop::collection::vec(0..max_k, n), prop::collection::vec(0..max_k, n)))
}

/// Best matching by trying every permutation.
fn brute_force_err(pred: &[usize], truth: &[usize], k: usize) -> f64 {
    fn go(i: usize, k: usize, used: &mut Vec<bool>, perm: &mut Vec<usize>, pred: &[usize], truth: &[usize]) -> usize {
        if i == k {
            return pred.iter().zip(truth).filter(|&(&p, &t)| perm[p] == t).count();
        }
        let mut best = 0;
        for j in 0..k {
            if !used[j] {
                used[j] = true;
                perm.push(j);
                best = best.max(go(i + 1, k, used, perm, pred, truth));
                perm.pop();
                used[j] = false;
            }
        }
        best
    }
    let hits = go(0, k, &mut vec![false; k], &mut Vec::new(), pred, truth);
    1.0 - hits as f64 / pred.len() as f64
}

proptest! {
    #[test]
    fn err_matches_brute_force((pred, truth) in labels(5, 1..30)) {
        prop_assert_eq!(clustering_error(&pred, &truth).unwrap(), brute_force_err(&pred, &truth, 5));
    }

    #[test]
    fn metrics_ignore_cluster_names((pred, truth) in labels(4, 2..40), shift in 1usize..4) {
        let renamed: Vec<usize> = pred.iter().map(|&p| (p + shift) % 4 + 10).collect();
        prop_assert_eq!(clustering_error(&pred, &truth).unwrap(), clustering_error(&renamed, &truth).unwrap());
        prop_assert!((nmi(&pred, &truth).unwrap() - nmi(&renamed, &truth).unwrap()).abs() < 1e-12);
        prop_assert_eq!(purity(&pred, &truth).unwrap(), purity(&renamed, &truth).unwrap());
    }

    #[test]
    fn metric_ranges((pred, truth) in labels(6, 1..50)) {
        let e = clustering_error(&pred, &truth).unwrap();
        let m = nmi(&pred, &truth).unwrap();
        let p = purity(&pred, &truth).unwrap();
        prop_assert!((0.0..=1.0).contains(&e));
        prop_assert!((0.0..=1.0).contains(&m));
        prop_assert!((0.0..=1.0).contains(&p));
        // the optimal one-to-one matching never beats majority voting
        prop_assert!(1.0 - e <= p + 1e-12);
    }

    #[test]
    fn affinity_invariants(vals in prop::collection::vec(-3.0f64..3.0, 36)) {
        let c = Array::new(vec![6, 6], vals).unwrap();
        let a = Affinity::from_coefficients(&c).unwrap();
        let m = a.matrix();
        for i in 0..6 {
            prop_assert_eq!(m.at2(i, i), 0.0);
            for j in 0..6 {
                prop_assert!(m.at2(i, j) >= 0.0);
                prop_assert_eq!(m.at2(i, j), m.at2(j, i));
            }
        }
        // a sign flip of C leaves the affinity unchanged
        let flipped = Affinity::from_coefficients(&c.scale(-1.0)).unwrap();
        prop_assert_eq!(flipped.matrix(), m);
    }

    #[test]
    fn assignment_is_optimal(costs in prop::collection::vec(0i64..50, 16)) {
        let cost: Vec<Vec<i64>> = costs.chunks(4).map(|r| r.to_vec()).collect();
        let a = min_cost_assignment(&cost);
        let mut seen = [false; 4];
        a.iter().for_each(|&j| seen[j] = true);
        prop_assert!(seen.iter().all(|&s| s));
        let got: i64 = a.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
        let mut best = i64::MAX;
        for p in 0..24usize {
            // decode permutation number p (factorial base)
            let mut pool = vec![0usize, 1, 2, 3];
            let mut rest = p;
            let mut total = 0;
            for (i, f) in [6usize, 2, 1, 1].iter().enumerate() {
                let j = pool.remove(rest / f);
                rest %= f;
                total += cost[i][j];
            }
            best = best.min(total);
        }
        prop_assert_eq!(got, best);
    }
}

#[test]
fn nmi_histogram_values() {
    // two equal halves, perfectly split: NMI 1; independent labels: 0
    assert_eq!(nmi(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(), 1.0);
    assert_eq!(nmi(&[0, 1, 0, 1], &[0, 0, 1, 1]).unwrap(), 0.0);
    // one constant labelling: zero entropy, defined as 0
    assert_eq!(nmi(&[0, 0, 0, 0], &[0, 1, 0, 1]).unwrap(), 0.0);
    // hand-computed: pred {0,0,1} vs truth {0,1,1}
    let (h, mi) = (-(2.0 / 3.0f64) * (2.0f64 / 3.0).ln() - (1.0 / 3.0) * (1.0f64 / 3.0).ln(), {
        let p = |c: f64, a: f64, b: f64| c / 3.0 * ((c / 3.0) / ((a / 3.0) * (b / 3.0))).ln();
        p(1.0, 2.0, 1.0) + p(1.0, 2.0, 2.0) + p(1.0, 1.0, 2.0)
    });
    assert!((nmi(&[0, 0, 1], &[0, 1, 1]).unwrap() - mi / h).abs() < 1e-12);
}

#[test]
fn mismatched_lengths_rejected() {
    assert!(clustering_error(&[0, 1], &[0]).is_err());
    assert!(nmi(&[], &[]).is_err());
}

#[test]
fn two_disconnected_cliques_with_noise_edges_still_split() {
    let n = 12;
    let mut a = Array::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let same = (i < 6) == (j < 6);
                a.set2(i, j, if same { 1.0 } else { 0.01 });
            }
        }
    }
    let labels = spectral_cluster(&Affinity::new(a).unwrap(), 2, 0).unwrap();
    let truth: Vec<usize> = (0..n).map(|i| usize::from(i >= 6)).collect();
    assert_eq!(clustering_error(&labels, &truth).unwrap(), 0.0);
}
