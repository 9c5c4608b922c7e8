//! Lloyd k-means with k-means++ seeding and seeded restarts.

use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::simulate::sequence_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeans {
    pub labels: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
    /// Within-cluster sum of squares.
    pub wss: f64,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(row: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, ctr) in centers.iter().enumerate() {
        let d = dist2(row, ctr);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus(rows: &[Vec<f64>], k: usize, rng: &mut dyn RngCore) -> Vec<Vec<f64>> {
    let n = rows.len();
    let mut centers = vec![rows[rng.random_range(0..n)].clone()];
    let mut d: Vec<f64> = rows.iter().map(|r| dist2(r, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d.iter().sum();
        let pick = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut idx = n - 1;
            for (i, v) in d.iter().enumerate() {
                acc += v;
                if u < acc {
                    idx = i;
                    break;
                }
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centers.push(rows[pick].clone());
        for (i, r) in rows.iter().enumerate() {
            d[i] = d[i].min(dist2(r, &centers[centers.len() - 1]));
        }
    }
    centers
}

fn lloyd(rows: &[Vec<f64>], mut centers: Vec<Vec<f64>>, max_iter: usize) -> KMeans {
    let (n, p, k) = (rows.len(), rows[0].len(), centers.len());
    let mut labels = vec![usize::MAX; n];
    for _ in 0..max_iter {
        let mut changed = false;
        for (i, r) in rows.iter().enumerate() {
            let (c, _) = nearest(r, &centers);
            if labels[i] != c {
                labels[i] = c;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; p]; k];
        let mut counts = vec![0usize; k];
        for (r, &c) in rows.iter().zip(&labels) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(r) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // Reseed from the point farthest from its centre.
                let far = (0..n)
                    .max_by(|&a, &b| {
                        dist2(&rows[a], &centers[labels[a]]).total_cmp(&dist2(&rows[b], &centers[labels[b]]))
                    })
                    .unwrap();
                centers[c] = rows[far].clone();
                labels[far] = c;
                changed = true;
            } else {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        if !changed {
            break;
        }
    }
    for (i, r) in rows.iter().enumerate() {
        labels[i] = nearest(r, &centers).0;
    }
    let wss = rows.iter().zip(&labels).map(|(r, &c)| dist2(r, &centers[c])).sum();
    KMeans { labels, centers, wss }
}

/// Best of `restarts` k-means runs; restart `r` uses stream `r` of `seed`.
pub fn kmeans(rows: &[Vec<f64>], k: usize, seed: u64, restarts: usize) -> Result<KMeans> {
    if k == 0 || rows.len() < k {
        return invalid(format!("cannot form {k} clusters from {} rows", rows.len()));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return invalid("k-means needs finite data");
    }
    let runs: Vec<KMeans> = (0..restarts.max(1))
        .into_par_iter()
        .map(|r| {
            let mut rng = sequence_rng(seed, r);
            lloyd(rows, plus_plus(rows, k, &mut rng), 100)
        })
        .collect();
    let mut best = 0;
    for (i, r) in runs.iter().enumerate() {
        if r.wss < runs[best].wss {
            best = i;
        }
    }
    Ok(relabel_by_center(runs.into_iter().nth(best).unwrap()))
}

/// Renumber clusters so centres are in increasing lexicographic order.
fn relabel_by_center(mut r: KMeans) -> KMeans {
    let mut order: Vec<usize> = (0..r.centers.len()).collect();
    order.sort_by(|&a, &b| {
        r.centers[a]
            .iter()
            .zip(&r.centers[b])
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut rank = vec![0; order.len()];
    for (new, &old) in order.iter().enumerate() {
        rank[old] = new;
    }
    r.labels.iter_mut().for_each(|l| *l = rank[*l]);
    r.centers = order.iter().map(|&o| r.centers[o].clone()).collect();
    r
}

/// Cluster count at the elbow of the within-cluster sum of squares: the
/// largest second difference over `1..=min(max_k, n)` clusters.
pub fn elbow(rows: &[Vec<f64>], max_k: usize, seed: u64) -> Result<usize> {
    let top = max_k.min(rows.len());
    if top < 3 {
        return Ok(1);
    }
    let wss: Vec<f64> = (1..=top).map(|k| kmeans(rows, k, seed, 10).map(|r| r.wss)).collect::<Result<_>>()?;
    let mut best = (1, f64::NEG_INFINITY);
    for k in 2..top {
        let second = wss[k - 2] - 2.0 * wss[k - 1] + wss[k];
        if second > best.1 {
            best = (k, second);
        }
    }
    Ok(best.0)
}
