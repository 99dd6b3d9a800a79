use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const KMEANS_RESTARTS: usize = 20;
const MAX_ITERS: usize = 200;

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub assignment: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
    pub inertia: f64,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn lloyd(x: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> KMeans {
    let m = x.len();
    // k-means++ seeding
    let mut centers = vec![x[rng.gen_range(0..m)].clone()];
    let mut d2: Vec<f64> = x.iter().map(|p| dist2(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            d2.iter().position(|&d| {
                u -= d;
                u <= 0.0
            })
            .unwrap_or(m - 1)
        } else {
            rng.gen_range(0..m)
        };
        centers.push(x[next].clone());
        for (d, p) in d2.iter_mut().zip(x) {
            *d = d.min(dist2(p, &centers[centers.len() - 1]));
        }
    }
    let mut assignment = vec![usize::MAX; m];
    for _ in 0..MAX_ITERS {
        let mut changed = false;
        for (a, p) in assignment.iter_mut().zip(x) {
            let best = (0..k).min_by(|&i, &j| dist2(p, &centers[i]).total_cmp(&dist2(p, &centers[j]))).unwrap();
            changed |= *a != best;
            *a = best;
        }
        if !changed {
            break;
        }
        let dim = x[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&a, p) in assignment.iter().zip(x) {
            counts[a] += 1;
            sums[a].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    let inertia = assignment.iter().zip(x).map(|(&a, p)| dist2(p, &centers[a])).sum();
    KMeans { assignment, centers, inertia }
}

/// Best of `restarts` k-means++ / Lloyd runs by inertia.
pub fn kmeans(features: &Tensor, k: usize, restarts: usize, seed: u64) -> Result<KMeans> {
    let m = features.rows();
    if k == 0 || k > m {
        return Err(Error::invalid(format!("k = {k} clusters for {m} points")));
    }
    let x: Vec<Vec<f64>> = (0..m).map(|i| features.row(i).iter().map(|&v| v as f64).collect()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeans> = None;
    for _ in 0..restarts.max(1) {
        let run = lloyd(&x, k, &mut rng);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.unwrap())
}

/// `Σ_c max_label |c ∩ label| / M` over the clusters of the best k-means run.
pub fn cluster_purity(features: &Tensor, labels: &[usize], k: usize) -> Result<f64> {
    if labels.len() != features.rows() {
        return Err(Error::Shape(format!("{} labels for {} points", labels.len(), features.rows())));
    }
    let km = kmeans(features, k, KMEANS_RESTARTS, 0)?;
    let classes = labels.iter().max().map_or(0, |&c| c + 1);
    let mut counts = vec![vec![0usize; classes]; k];
    for (&a, &y) in km.assignment.iter().zip(labels) {
        counts[a][y] += 1;
    }
    let majority: usize = counts.iter().map(|c| c.iter().copied().max().unwrap_or(0)).sum();
    Ok(majority as f64 / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use rand_distr::StandardNormal;

    use super::*;

    fn two_blobs(m: usize, gap: f32, seed: u64) -> (Tensor, Vec<usize>) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::new();
        let labels: Vec<usize> = (0..m).map(|i| i % 2).collect();
        for &y in &labels {
            for j in 0..3 {
                let c = if y == 1 && j == 0 { gap } else { 0.0 };
                data.push(c + r.sample::<f32, _>(StandardNormal) * 0.1);
            }
        }
        (Tensor::new(&[m, 3], data).unwrap(), labels)
    }

    #[test]
    fn singleton_clusters_are_pure() {
        let (x, y) = two_blobs(12, 0.1, 1);
        assert_eq!(cluster_purity(&x, &y, 12).unwrap(), 1.0);
    }

    #[test]
    fn separated_blobs_are_pure() {
        let (x, y) = two_blobs(100, 10.0, 2);
        assert_eq!(cluster_purity(&x, &y, 2).unwrap(), 1.0);
    }

    #[test]
    fn random_features_are_near_half() {
        for seed in 0..5 {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let x = Tensor::new(&[200, 4], (0..800).map(|_| r.gen::<f32>()).collect()).unwrap();
            let y: Vec<usize> = (0..200).map(|i| i % 2).collect();
            let p = cluster_purity(&x, &y, 2).unwrap();
            assert!((0.5..=0.6).contains(&p), "seed {seed}: {p}");
        }
    }

    #[test]
    fn purity_grows_with_k_on_blobs() {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for i in 0..120 {
            let c = i % 4;
            labels.push(c);
            data.push(c as f32 * 10.0 + r.sample::<f32, _>(StandardNormal) * 0.2);
            data.push(r.sample::<f32, _>(StandardNormal) * 0.2);
        }
        let x = Tensor::new(&[120, 2], data).unwrap();
        let p: Vec<f64> = (1..=6).map(|k| cluster_purity(&x, &labels, k).unwrap()).collect();
        assert!(p.windows(2).all(|w| w[1] >= w[0]), "{p:?}");
        assert_eq!(p[3], 1.0);
    }

    #[test]
    fn too_many_clusters() {
        let (x, y) = two_blobs(4, 1.0, 4);
        assert!(cluster_purity(&x, &y, 5).is_err());
        assert!(cluster_purity(&x, &y, 0).is_err());
    }
}
