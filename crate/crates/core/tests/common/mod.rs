//! Brute-force reference computations over every state path, and random
//! small models to run them on.
#![allow(dead_code)]

use hhsmm::emission::MixMvnParams;
use hhsmm::{Emission, EmissionModel, ModelSpec, SojournSpec};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub struct Enumerated {
    pub loglik: f64,
    pub smoothed: Vec<Vec<f64>>,
    /// Expected completed sojourn counts, censored final runs spread by
    /// `d(v) / D(l)` over `v >= l`.
    pub eta: Vec<Vec<f64>>,
    /// Expected counts of run-to-run moves (Markov self-moves included).
    pub transitions: Vec<Vec<f64>>,
    pub best_path: Vec<usize>,
    pub best_log_prob: f64,
}

fn runs(path: &[usize], semi: &[bool]) -> Vec<(usize, usize)> {
    // (state, length); Markov states always form runs of length one.
    let mut out: Vec<(usize, usize)> = Vec::new();
    for &s in path {
        match out.last_mut() {
            Some((prev, len)) if *prev == s && semi[s] => *len += 1,
            _ => out.push((s, 1)),
        }
    }
    out
}

/// Prior probability of a state path under the generative model.
pub fn path_prob(path: &[usize], spec: &ModelSpec) -> f64 {
    let tables = spec.sojourn_tables().unwrap();
    let r = runs(path, &spec.semi);
    let mut p = spec.init[r[0].0];
    for (idx, &(s, len)) in r.iter().enumerate() {
        let last = idx + 1 == r.len();
        if let Some(tab) = &tables[s] {
            if len > tab.d.len() {
                return 0.0;
            }
            p *= if last { tab.surv[len - 1] } else { tab.d[len - 1] };
        }
        if !last {
            p *= spec.transition[s][r[idx + 1].0];
        }
    }
    p
}

pub fn log_joint(path: &[usize], x: &[Vec<f64>], spec: &ModelSpec) -> f64 {
    let mut l = path_prob(path, spec).ln();
    for (t, &s) in path.iter().enumerate() {
        l += spec.emission.log_density(&x[t], s).unwrap();
    }
    l
}

pub fn enumerate(x: &[Vec<f64>], spec: &ModelSpec) -> Enumerated {
    let tau = x.len();
    let j = spec.j;
    let tables = spec.sojourn_tables().unwrap();
    let mut total = 0.0;
    let mut smoothed = vec![vec![0.0; j]; tau];
    let mut eta: Vec<Vec<f64>> = (0..j).map(|s| vec![0.0; spec.m[s]]).collect();
    let mut transitions = vec![vec![0.0; j]; j];
    let mut best_path = vec![0; tau];
    let mut best = f64::NEG_INFINITY;
    let n_paths = j.pow(tau as u32);
    let mut path = vec![0; tau];
    for code in 0..n_paths {
        // Lexicographic order with the first time point most significant,
        // so the lowest-index path wins ties under strict comparison.
        let mut c = code;
        for t in (0..tau).rev() {
            path[t] = c % j;
            c /= j;
        }
        let prior = path_prob(&path, spec);
        if prior == 0.0 {
            continue;
        }
        let lj = log_joint(&path, x, spec);
        if lj > best {
            best = lj;
            best_path.copy_from_slice(&path);
        }
        let w = lj.exp();
        total += w;
        for (t, &s) in path.iter().enumerate() {
            smoothed[t][s] += w;
        }
        let r = runs(&path, &spec.semi);
        for (idx, &(s, len)) in r.iter().enumerate() {
            if idx + 1 < r.len() {
                transitions[s][r[idx + 1].0] += w;
            }
            if let Some(tab) = &tables[s] {
                if idx + 1 < r.len() {
                    eta[s][len - 1] += w;
                } else {
                    for v in len..=tab.d.len() {
                        eta[s][v - 1] += w * tab.d[v - 1] / tab.surv[len - 1];
                    }
                }
            }
        }
    }
    for row in smoothed.iter_mut() {
        row.iter_mut().for_each(|v| *v /= total);
    }
    for row in eta.iter_mut() {
        row.iter_mut().for_each(|v| *v /= total);
    }
    for row in transitions.iter_mut() {
        row.iter_mut().for_each(|v| *v /= total);
    }
    Enumerated { loglik: total.ln(), smoothed, eta, transitions, best_path, best_log_prob: best }
}

fn simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| 0.05 + rng.random::<f64>()).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

/// Random hybrid model with nonparametric sojourns and Gaussian emissions.
pub fn random_model(rng: &mut ChaCha8Rng, j: usize, p: usize, max_m: usize) -> ModelSpec {
    let semi: Vec<bool> = (0..j).map(|_| j > 1 && rng.random::<bool>()).collect();
    let m: Vec<usize> = (0..j).map(|_| rng.random_range(1..=max_m)).collect();
    let transition: Vec<Vec<f64>> = (0..j)
        .map(|i| {
            if semi[i] {
                let mut row = simplex(rng, j - 1);
                row.insert(i, 0.0);
                row
            } else {
                simplex(rng, j)
            }
        })
        .collect();
    let d: Vec<Vec<f64>> = (0..j).map(|i| simplex(rng, m[i])).collect();
    let mu: Vec<Vec<f64>> = (0..j).map(|_| (0..p).map(|_| rng.random_range(-1.5..1.5)).collect()).collect();
    let sigma: Vec<Vec<Vec<f64>>> = (0..j)
        .map(|_| {
            let a: Vec<Vec<f64>> = (0..p).map(|_| (0..p).map(|_| rng.random_range(-0.5..0.5)).collect()).collect();
            (0..p)
                .map(|r| {
                    (0..p)
                        .map(|c| {
                            let dot: f64 = (0..p).map(|k| a[r][k] * a[c][k]).sum();
                            dot + if r == c { 0.5 } else { 0.0 }
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    ModelSpec {
        j,
        init: simplex(rng, j),
        transition,
        semi: semi.clone(),
        m,
        sojourn: semi.iter().any(|&b| b).then_some(SojournSpec::Nonparametric { d }),
        emission: Emission::MixMvn(MixMvnParams::single(mu, sigma)),
    }
}

pub fn random_obs(rng: &mut ChaCha8Rng, tau: usize, p: usize) -> Vec<Vec<f64>> {
    (0..tau).map(|_| (0..p).map(|_| rng.random_range(-2.5..2.5)).collect()).collect()
}

pub fn gaussian_1d(means: &[f64], vars: &[f64]) -> Emission {
    Emission::MixMvn(MixMvnParams::single(
        means.iter().map(|m| vec![*m]).collect(),
        vars.iter().map(|v| vec![vec![*v]]).collect(),
    ))
}
