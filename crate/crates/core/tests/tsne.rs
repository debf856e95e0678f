mod common;

use celab::tsne::{cluster_purity, compute_affinities, tsne_embed, TsneConfig};
use celab::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn gaussian_points(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    (0..n)
        .map(|_| (0..dim).map(|_| normal.sample(&mut rng)).collect())
        .collect()
}

/// Two unit-variance blobs whose centres are ten standard deviations apart.
fn two_blobs(per_blob: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut x = gaussian_points(2 * per_blob, 128, seed);
    let shift = 10.0 / (128f64).sqrt();
    for p in &mut x[per_blob..] {
        p.iter_mut().for_each(|v| *v += shift);
    }
    let labels = (0..2 * per_blob).map(|i| i / per_blob).collect();
    (x, labels)
}

/// Symmetrized affinities with each conditional bisected to the target
/// perplexity far beyond any practical tolerance.
fn reference_affinities(x: &[Vec<f64>], perplexity: f64) -> Vec<Vec<f64>> {
    let n = x.len();
    let d2 = |i: usize, j: usize| -> f64 { x[i].iter().zip(&x[j]).map(|(a, b)| (a - b) * (a - b)).sum() };
    let mut cond = vec![vec![0.0; n]; n];
    for (i, cond_row) in cond.iter_mut().enumerate() {
        let dists: Vec<f64> = (0..n).map(|j| d2(i, j)).collect();
        let min = (0..n)
            .filter(|&j| j != i)
            .map(|j| dists[j])
            .fold(f64::INFINITY, f64::min);
        let row = |beta: f64| -> (Vec<f64>, f64) {
            let w: Vec<f64> = (0..n)
                .map(|j| if j == i { 0.0 } else { (-(dists[j] - min) * beta).exp() })
                .collect();
            let z: f64 = w.iter().sum();
            let p: Vec<f64> = w.iter().map(|v| v / z).collect();
            let h: f64 = -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.log2()).sum::<f64>();
            (p, 2f64.powf(h))
        };
        let (mut lo, mut hi) = (0.0, 1.0);
        while row(hi).1 > perplexity {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if row(mid).1 > perplexity {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        *cond_row = row(0.5 * (lo + hi)).0;
    }
    (0..n)
        .map(|i| (0..n).map(|j| (cond[i][j] + cond[j][i]) / (2.0 * n as f64)).collect())
        .collect()
}

#[test]
fn affinities_are_a_symmetric_distribution_matching_the_reference() {
    let x = gaussian_points(120, 16, 1);
    let aff = compute_affinities(&x, 20.0).unwrap();
    let n = aff.n();
    let total: f64 = aff.matrix().iter().sum();
    assert!((total - 1.0).abs() < 1e-9, "mass {total}");
    for i in 0..n {
        assert_eq!(aff.get(i, i), 0.0);
        for j in 0..n {
            assert!(aff.get(i, j) >= 0.0);
            assert!((aff.get(i, j) - aff.get(j, i)).abs() < 1e-12);
        }
    }
    assert!(aff.perplexities().iter().all(|p| (p - 20.0).abs() < 1e-3));
    let reference = reference_affinities(&x, 20.0);
    let peak = aff.matrix().iter().cloned().fold(0.0, f64::max);
    for (i, ref_row) in reference.iter().enumerate() {
        for (j, r) in ref_row.iter().enumerate() {
            assert!((aff.get(i, j) - r).abs() < 1e-4 * peak);
        }
    }
}

#[test]
fn affinities_survive_rigid_motions() {
    let x = gaussian_points(60, 6, 2);
    let base = compute_affinities(&x, 10.0).unwrap();
    let (s, c) = 0.7f64.sin_cos();
    let moved: Vec<Vec<f64>> = x
        .iter()
        .map(|p| {
            let mut q: Vec<f64> = p.iter().map(|v| v + 3.5).collect();
            let (a, b) = (q[0], q[1]);
            q[0] = c * a - s * b;
            q[1] = s * a + c * b;
            q
        })
        .collect();
    let after = compute_affinities(&moved, 10.0).unwrap();
    for (a, b) in base.matrix().iter().zip(after.matrix()) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn kl_decreases_and_history_is_recorded() {
    let x = gaussian_points(300, 128, 3);
    let result = tsne_embed(&x, &TsneConfig::default()).unwrap();
    assert!(result.final_kl() < result.initial_kl());
    let steps: Vec<usize> = result.kl_history.iter().map(|h| h.0).collect();
    assert_eq!(steps.first(), Some(&0));
    assert_eq!(steps.last(), Some(&1000));
    assert!(steps.contains(&50) && steps.contains(&500));
    assert!(result.kl_history.iter().all(|h| h.1 >= 0.0 && h.1.is_finite()));
    assert!(result.coords.iter().flatten().all(|v| v.is_finite()));
}

#[test]
fn separated_blobs_stay_separated() {
    let (x, labels) = two_blobs(50, 4);
    let result = tsne_embed(&x, &TsneConfig::default()).unwrap();
    let s = common::silhouette(&result.coords, &labels);
    assert!(s > 0.8, "silhouette {s}");
    assert!(cluster_purity(&result.coords, &labels, 10).unwrap() > 0.95);
}

#[test]
fn runs_are_reproducible_per_seed() {
    let x = gaussian_points(80, 10, 5);
    let config = TsneConfig {
        iterations: 300,
        perplexity: 15.0,
        seed: 9,
        ..TsneConfig::default()
    };
    let a = tsne_embed(&x, &config).unwrap();
    let b = tsne_embed(&x, &config).unwrap();
    assert_eq!(a.coords, b.coords);
    assert_eq!(a.kl_history, b.kl_history);
    let c = tsne_embed(&x, &TsneConfig { seed: 10, ..config }).unwrap();
    assert_ne!(a.coords, c.coords);
}

#[test]
fn random_labels_give_chance_purity() {
    let mut purities = Vec::new();
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coords: Vec<[f64; 2]> = (0..900).map(|_| [rng.random(), rng.random()]).collect();
        let labels: Vec<u8> = (0..900).map(|_| rng.random_range(0..3)).collect();
        purities.push(cluster_purity(&coords, &labels, 10).unwrap());
    }
    let mean = purities.iter().sum::<f64>() / 20.0;
    assert!((mean - 1.0 / 3.0).abs() < 0.01, "mean purity {mean}");
    assert_eq!(
        cluster_purity(&[[0.0, 0.0], [1.0, 1.0], [2.0, 0.0]], &["a"; 3], 2).unwrap(),
        1.0
    );
}

#[test]
fn invalid_inputs_are_rejected() {
    let x = gaussian_points(10, 3, 6);
    let bad = |c: TsneConfig| matches!(tsne_embed(&x, &c), Err(Error::InvalidArgument(_)));
    assert!(bad(TsneConfig {
        perplexity: 9.0,
        ..TsneConfig::default()
    }));
    assert!(bad(TsneConfig {
        perplexity: 1.0,
        ..TsneConfig::default()
    }));
    assert!(bad(TsneConfig {
        iterations: 0,
        perplexity: 3.0,
        ..TsneConfig::default()
    }));
    assert!(tsne_embed(&x[..2], &TsneConfig::default()).is_err());
    assert!(compute_affinities(&vec![vec![1.0, 2.0]; 8], 3.0).is_err());
    assert!(cluster_purity(&[[0.0, 0.0]; 4], &[1, 2, 3], 1).is_err());
    assert!(cluster_purity(&[[0.0, 0.0]; 4], &[1, 2, 3, 4], 0).is_err());
}

#[test]
fn runaway_step_size_is_reported_with_its_iteration() {
    let x = gaussian_points(30, 4, 7);
    let config = TsneConfig {
        perplexity: 5.0,
        learning_rate: 1e300,
        ..TsneConfig::default()
    };
    match tsne_embed(&x, &config) {
        Err(Error::Numerical(msg)) => assert!(msg.contains("iteration"), "{msg}"),
        other => panic!("expected a numerical failure, got {other:?}"),
    }
}
