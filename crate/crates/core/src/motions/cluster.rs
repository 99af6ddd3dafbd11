//! Clip statistics and k-means.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::clip::MotionClip;
use crate::error::{Error, Result};

/// Feet below this height count as in contact.
const CONTACT_HEIGHT: f64 = 0.01;

/// `[mean |q - default| per joint, RMS qdot per joint, base-height frequency,
/// contact duty factor, mean and std of forward base velocity, pitch range]`.
pub fn feature_embedding(clip: &MotionClip, default_pose: &[f64]) -> Vec<f64> {
    let n = clip.frames.len() as f64;
    let nj = default_pose.len();
    let mut amp = vec![0.0; nj];
    let mut vel = vec![0.0; nj];
    for f in &clip.frames {
        for j in 0..nj {
            amp[j] += (f.q[j] - default_pose[j]).abs() / n;
            vel[j] += f.qdot[j] * f.qdot[j] / n;
        }
    }
    vel.iter_mut().for_each(|v| *v = v.sqrt());

    let heights: Vec<f64> = clip.frames.iter().map(|f| f.base_height).collect();
    let mean_h = heights.iter().sum::<f64>() / n;
    let mut crossings = 0usize;
    let mut prev_sign = 0i8;
    for h in &heights {
        let d = h - mean_h;
        if d.abs() < 1e-9 {
            continue;
        }
        let sign = if d > 0.0 { 1 } else { -1 };
        if prev_sign != 0 && sign != prev_sign {
            crossings += 1;
        }
        prev_sign = sign;
    }
    let frequency = crossings as f64 / (2.0 * clip.duration());

    let feet = clip.frames[0].feet_height.len().max(1);
    let contact_frames: usize = clip
        .frames
        .iter()
        .map(|f| f.feet_height.iter().filter(|&&h| h < CONTACT_HEIGHT).count())
        .sum();
    let duty = contact_frames as f64 / (n * feet as f64);

    let vx: Vec<f64> = clip.frames.iter().map(|f| f.base_vel[0]).collect();
    let mean_vx = vx.iter().sum::<f64>() / n;
    let std_vx = (vx.iter().map(|v| (v - mean_vx).powi(2)).sum::<f64>() / n).sqrt();
    let (pmin, pmax) = clip
        .frames
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), f| (lo.min(f.pitch), hi.max(f.pitch)));

    let mut out = amp;
    out.extend(vel);
    out.extend([frequency, duty, mean_vx, std_vx, pmax - pmin]);
    out
}

/// Rescales every component to zero mean and unit variance across points;
/// constant components become zero.
pub fn z_normalize(points: &mut [Vec<f64>]) {
    if points.is_empty() {
        return;
    }
    let n = points.len() as f64;
    for d in 0..points[0].len() {
        let mean = points.iter().map(|p| p[d]).sum::<f64>() / n;
        let std = (points.iter().map(|p| (p[d] - mean).powi(2)).sum::<f64>() / n).sqrt();
        for p in points.iter_mut() {
            p[d] = if std > 1e-12 { (p[d] - mean) / std } else { 0.0 };
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squares after every Lloyd iteration.
    pub wcss_history: Vec<f64>,
    pub iterations: usize,
}

impl KMeans {
    pub fn wcss(&self) -> f64 {
        self.wcss_history.last().copied().unwrap_or(0.0)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(p, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Lloyd iterations from k-means++ seeds.
pub fn kmeans(points: &[Vec<f64>], k: usize, max_iters: usize, seed: u64) -> Result<KMeans> {
    if k == 0 {
        return Err(Error::config("k-means needs k >= 1"));
    }
    if k > points.len() {
        return Err(Error::config(format!(
            "k = {k} exceeds the {} available points",
            points.len()
        )));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::shape("k-means points differ in dimension"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![points[rng.gen_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut idx = points.len() - 1;
            for (i, w) in d2.iter().enumerate() {
                if *w > 0.0 && r < *w {
                    idx = i;
                    break;
                }
                r -= w;
            }
            if d2[idx] == 0.0 {
                idx = d2.iter().rposition(|&w| w > 0.0).unwrap_or(idx);
            }
            idx
        } else {
            rng.gen_range(0..points.len())
        };
        centroids.push(points[pick].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }

    let mut assignments: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
    let mut wcss_history = Vec::new();
    let mut iterations = 0;
    loop {
        // Update step; an emptied cluster keeps its centroid.
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let wcss: f64 = points
            .iter()
            .zip(&assignments)
            .map(|(p, &a)| sq_dist(p, &centroids[a]))
            .sum();
        wcss_history.push(wcss);
        iterations += 1;
        if iterations >= max_iters.max(1) {
            break;
        }
        let next: Vec<usize> = points
            .iter()
            .zip(&assignments)
            .map(|(p, &a)| {
                // Keep the current cluster on ties so the loop terminates.
                let (c, d) = nearest(p, &centroids);
                if d < sq_dist(p, &centroids[a]) {
                    c
                } else {
                    a
                }
            })
            .collect();
        if next == assignments {
            break;
        }
        assignments = next;
    }
    Ok(KMeans {
        centroids,
        assignments,
        wcss_history,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn single_cluster_is_mean() {
        let pts = vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, -1.0]];
        let km = kmeans(&pts, 1, 50, 0).unwrap();
        assert_eq!(km.centroids[0], vec![2.0, 1.0]);
        assert_eq!(km.assignments, vec![0, 0, 0]);
    }

    #[test]
    fn k_equals_n_gives_zero_wcss() {
        let pts: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let km = kmeans(&pts, 7, 50, 3).unwrap();
        assert_eq!(km.wcss(), 0.0);
        let mut a = km.assignments.clone();
        a.sort();
        a.dedup();
        assert_eq!(a.len(), 7);
    }

    #[test]
    fn separated_blobs_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut pts = Vec::new();
        for blob in 0..2 {
            for _ in 0..50 {
                let c = blob as f64 * 10.0;
                pts.push(vec![c + noise.sample(&mut rng), noise.sample(&mut rng)]);
            }
        }
        for seed in 0..10 {
            let km = kmeans(&pts, 2, 100, seed).unwrap();
            let first = km.assignments[0];
            for (i, &a) in km.assignments.iter().enumerate() {
                assert_eq!(a == first, i < 50, "seed {seed} point {i}");
            }
        }
    }

    #[test]
    fn wcss_nonincreasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pts: Vec<Vec<f64>> = (0..300)
            .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        for seed in 0..5 {
            let km = kmeans(&pts, 6, 200, seed).unwrap();
            for w in km.wcss_history.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "{:?}", km.wcss_history);
            }
        }
    }

    #[test]
    fn too_many_clusters_rejected() {
        let pts = vec![vec![0.0], vec![1.0]];
        assert!(matches!(kmeans(&pts, 3, 10, 0), Err(Error::Config(_))));
        assert!(matches!(kmeans(&pts, 0, 10, 0), Err(Error::Config(_))));
    }

    #[test]
    fn z_normalize_constant_columns() {
        let mut pts = vec![vec![1.0, 5.0], vec![3.0, 5.0]];
        z_normalize(&mut pts);
        assert_eq!(pts, vec![vec![-1.0, 0.0], vec![1.0, 0.0]]);
    }
}
