//! Mixture of multivariate normal emissions, with missing-value support.

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{check_weights, EmissionModel, SampleContext};
use crate::data::SequenceSet;
use crate::error::{invalid, HhsmmError, Result};
use crate::linalg::{cholesky_with_jitter, log_sum_exp, standard_normals, Gaussian};

/// Per-state Gaussian mixtures: `lambda[j][k]`, `mu[j][k][..]`,
/// `sigma[j][k][..][..]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixMvnParams {
    #[serde(rename = "K")]
    pub k: Vec<usize>,
    pub lambda: Vec<Vec<f64>>,
    pub mu: Vec<Vec<Vec<f64>>>,
    pub sigma: Vec<Vec<Vec<Vec<f64>>>>,
}

fn mat(rows: &[Vec<f64>]) -> DMatrix<f64> {
    crate::linalg::to_dmatrix(rows)
}

impl MixMvnParams {
    /// One Gaussian component per state.
    pub fn single(mu: Vec<Vec<f64>>, sigma: Vec<Vec<Vec<f64>>>) -> Self {
        let j = mu.len();
        Self {
            k: vec![1; j],
            lambda: vec![vec![1.0]; j],
            mu: mu.into_iter().map(|m| vec![m]).collect(),
            sigma: sigma.into_iter().map(|s| vec![s]).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.first().and_then(|m| m.first()).map_or(0, |v| v.len())
    }

    fn compile(&self) -> Result<Vec<Vec<(f64, Gaussian)>>> {
        self.mu
            .iter()
            .zip(&self.sigma)
            .zip(&self.lambda)
            .map(|((mus, sigmas), lams)| {
                mus.iter()
                    .zip(sigmas)
                    .zip(lams)
                    .map(|((m, s), l)| Ok((l.ln(), Gaussian::new(m, &mat(s))?)))
                    .collect()
            })
            .collect()
    }

    /// Log component densities of a row, with missing cells replaced by
    /// their conditional means under each component.
    fn component_logs(&self, row: &[f64], j: usize, compiled: Option<&[(f64, Gaussian)]>) -> Result<Vec<f64>> {
        let p = self.dim();
        if row.len() != p {
            return invalid(format!("row has {} columns, model expects {p}", row.len()));
        }
        let missing = row.iter().any(|v| v.is_nan());
        let mut out = Vec::with_capacity(self.k[j]);
        for k in 0..self.k[j] {
            let lam = self.lambda[j][k];
            if lam <= 0.0 {
                out.push(f64::NEG_INFINITY);
                continue;
            }
            let filled;
            let r = if missing {
                filled = conditional_fill(row, &self.mu[j][k], &mat(&self.sigma[j][k]))?.0;
                &filled[..]
            } else {
                row
            };
            let lp = match compiled {
                Some(c) => c[k].0 + c[k].1.log_pdf(r),
                None => lam.ln() + Gaussian::new(&self.mu[j][k], &mat(&self.sigma[j][k]))?.log_pdf(r),
            };
            out.push(lp);
        }
        Ok(out)
    }
}

/// Fill missing cells with `E[x_m | x_o]` and return the conditional
/// covariance of the missing block embedded in a p x p matrix.
pub(crate) fn conditional_fill(row: &[f64], mu: &[f64], sigma: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let p = row.len();
    let obs: Vec<usize> = (0..p).filter(|&i| !row[i].is_nan()).collect();
    let mis: Vec<usize> = (0..p).filter(|&i| row[i].is_nan()).collect();
    let mut filled = row.to_vec();
    let mut cond = DMatrix::zeros(p, p);
    if mis.is_empty() {
        return Ok((filled, cond));
    }
    if obs.is_empty() {
        filled.copy_from_slice(mu);
        return Ok((filled, sigma.clone()));
    }
    let s_oo = DMatrix::from_fn(obs.len(), obs.len(), |a, b| sigma[(obs[a], obs[b])]);
    let s_mo = DMatrix::from_fn(mis.len(), obs.len(), |a, b| sigma[(mis[a], obs[b])]);
    let s_mm = DMatrix::from_fn(mis.len(), mis.len(), |a, b| sigma[(mis[a], mis[b])]);
    let chol = s_oo
        .clone()
        .cholesky()
        .ok_or_else(|| HhsmmError::Numeric("observed-block covariance is singular".into()))?;
    let dev = DVector::from_iterator(obs.len(), obs.iter().map(|&i| row[i] - mu[i]));
    let shift = &s_mo * chol.solve(&dev);
    for (a, &i) in mis.iter().enumerate() {
        filled[i] = mu[i] + shift[a];
    }
    let c = &s_mm - &s_mo * chol.solve(&s_mo.transpose());
    for (a, &i) in mis.iter().enumerate() {
        for (b, &l) in mis.iter().enumerate() {
            cond[(i, l)] = c[(a, b)];
        }
    }
    Ok((filled, cond))
}

/// Mixture density `f_j(x)`.
pub fn dmixmvnorm(x: &[f64], j: usize, params: &MixMvnParams) -> Result<f64> {
    Ok(log_sum_exp(&params.component_logs(x, j, None)?).exp())
}

/// Component responsibilities of a row under state `j`.
pub fn responsibilities(x: &[f64], j: usize, params: &MixMvnParams) -> Result<Vec<f64>> {
    let logs = params.component_logs(x, j, None)?;
    Ok(normalize_logs(&logs))
}

fn normalize_logs(logs: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logs);
    if lse == f64::NEG_INFINITY {
        // Every component is numerically impossible; share the row evenly.
        return vec![1.0 / logs.len() as f64; logs.len()];
    }
    logs.iter().map(|l| (l - lse).exp()).collect()
}

/// Draw one observation from state `j`.
pub fn rmixmvnorm(j: usize, params: &MixMvnParams, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
    use rand::Rng;
    let u: f64 = rng.random();
    let mut k = params.k[j] - 1;
    let mut acc = 0.0;
    for (i, l) in params.lambda[j].iter().enumerate() {
        acc += l;
        if u < acc {
            k = i;
            break;
        }
    }
    let (_, chol) = cholesky_with_jitter(&mat(&params.sigma[j][k]), 1e-8)?;
    let z = DVector::from_vec(standard_normals(rng, params.dim()));
    let x = chol.l() * z;
    Ok(params.mu[j][k].iter().zip(x.iter()).map(|(m, e)| m + e).collect())
}

/// Weighted M-step for complete data.
pub fn mixmvnorm_mstep(x: &[Vec<f64>], weights: &[Vec<f64>], prev: &MixMvnParams) -> Result<MixMvnParams> {
    if x.iter().flatten().any(|v| v.is_nan()) {
        return invalid("data contain missing values; use the missing-value M-step");
    }
    miss_mixmvnorm_mstep(x, weights, prev)
}

/// Weighted M-step using conditional first and second moments for missing
/// cells. Reduces to [`mixmvnorm_mstep`] when nothing is missing.
pub fn miss_mixmvnorm_mstep(x: &[Vec<f64>], weights: &[Vec<f64>], prev: &MixMvnParams) -> Result<MixMvnParams> {
    let nstate = prev.k.len();
    check_weights(x, weights, nstate)?;
    let p = prev.dim();
    let mut out = prev.clone();
    let compiled = prev.compile()?;
    for j in 0..nstate {
        let kj = prev.k[j];
        let total: f64 = weights.iter().map(|w| w[j]).sum();
        // Responsibility-weighted masses w[t][k] = gamma_k(t) L_j(t).
        let mut w = vec![vec![0.0; kj]; x.len()];
        for (t, row) in x.iter().enumerate() {
            let lj = weights[t][j];
            if lj <= 0.0 {
                continue;
            }
            let g = normalize_logs(&prev.component_logs(row, j, Some(&compiled[j]))?);
            for k in 0..kj {
                w[t][k] = g[k] * lj;
            }
        }
        for k in 0..kj {
            let mass: f64 = w.iter().map(|r| r[k]).sum();
            out.lambda[j][k] = mass / total;
            if !(mass > 1e-300) {
                continue;
            }
            let sig_prev = mat(&prev.sigma[j][k]);
            let mut filled = Vec::with_capacity(x.len());
            let mut mean = vec![0.0; p];
            for (t, row) in x.iter().enumerate() {
                if w[t][k] == 0.0 {
                    filled.push(None);
                    continue;
                }
                let (f, c) = conditional_fill(row, &prev.mu[j][k], &sig_prev)?;
                for i in 0..p {
                    mean[i] += w[t][k] * f[i];
                }
                filled.push(Some((f, c)));
            }
            mean.iter_mut().for_each(|m| *m /= mass);
            let mut scatter = DMatrix::<f64>::zeros(p, p);
            for (t, fc) in filled.iter().enumerate() {
                if let Some((f, c)) = fc {
                    let d = DVector::from_iterator(p, f.iter().zip(&mean).map(|(a, b)| a - b));
                    scatter += (&d * d.transpose() + c) * w[t][k];
                }
            }
            scatter /= mass;
            let (sig, _) = cholesky_with_jitter(&scatter, 1e-8)?;
            out.mu[j][k] = mean;
            out.sigma[j][k] = crate::linalg::from_dmatrix(&sig);
        }
        let lsum: f64 = out.lambda[j].iter().sum();
        out.lambda[j].iter_mut().for_each(|l| *l /= lsum);
    }
    Ok(out)
}

/// Initial imputation: partially missing cells take the within-sequence
/// column mean, then fully missing rows take the average of the nearest
/// observed neighbours.
pub fn impute_initial(set: &SequenceSet) -> Result<SequenceSet> {
    if !set.has_missing() {
        return Ok(set.clone());
    }
    let p = set.dim();
    let mut global = vec![(0.0, 0usize); p];
    for row in &set.x {
        for (i, v) in row.iter().enumerate() {
            if !v.is_nan() {
                global[i].0 += v;
                global[i].1 += 1;
            }
        }
    }
    if let Some(i) = global.iter().position(|g| g.1 == 0) {
        return invalid(format!("column {} has no observed values", i + 1));
    }
    let mut out = set.clone();
    let off = set.offsets();
    for s in 0..set.n_seq() {
        let rows = &mut out.x[off[s]..off[s + 1]];
        let full: Vec<bool> = rows.iter().map(|r| r.iter().all(|v| v.is_nan())).collect();
        for i in 0..p {
            let (sum, cnt) = rows
                .iter()
                .filter(|r| !r[i].is_nan())
                .fold((0.0, 0usize), |(a, c), r| (a + r[i], c + 1));
            let fill = if cnt > 0 { sum / cnt as f64 } else { global[i].0 / global[i].1 as f64 };
            for (r, f) in rows.iter_mut().zip(&full) {
                if !f && r[i].is_nan() {
                    r[i] = fill;
                }
            }
        }
        let observed: Vec<usize> = (0..rows.len()).filter(|&t| !full[t]).collect();
        for t in (0..rows.len()).filter(|&t| full[t]) {
            let prev = observed.iter().rev().find(|&&o| o < t).copied();
            let next = observed.iter().find(|&&o| o > t).copied();
            rows[t] = match (prev, next) {
                (Some(a), Some(b)) => rows[a].iter().zip(&rows[b]).map(|(u, v)| 0.5 * (u + v)).collect(),
                (Some(a), None) => rows[a].clone(),
                (None, Some(b)) => rows[b].clone(),
                (None, None) => (0..p).map(|i| global[i].0 / global[i].1 as f64).collect(),
            };
        }
    }
    Ok(out)
}

impl EmissionModel for MixMvnParams {
    fn family(&self) -> &'static str {
        "mixmvnorm"
    }

    fn n_states(&self) -> usize {
        self.k.len()
    }

    fn log_density(&self, row: &[f64], j: usize) -> Result<f64> {
        Ok(log_sum_exp(&self.component_logs(row, j, None)?))
    }

    fn log_density_matrix(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let compiled = self.compile()?;
        rows.iter()
            .map(|r| {
                (0..self.n_states())
                    .map(|j| Ok(log_sum_exp(&self.component_logs(r, j, Some(&compiled[j]))?)))
                    .collect()
            })
            .collect()
    }

    fn mstep(&self, x: &[Vec<f64>], weights: &[Vec<f64>]) -> Result<Self> {
        miss_mixmvnorm_mstep(x, weights, self)
    }

    fn sample(&self, j: usize, _ctx: &SampleContext, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        rmixmvnorm(j, self, rng)
    }

    fn n_free_params(&self) -> usize {
        let p = self.dim();
        self.k.iter().map(|&k| (k - 1) + k * p + k * p * (p + 1) / 2).sum()
    }

    fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let j = self.k.len();
        if self.lambda.len() != j || self.mu.len() != j || self.sigma.len() != j {
            v.push("mixture parameter arrays disagree on the number of states".into());
            return v;
        }
        for s in 0..j {
            if self.lambda[s].len() != self.k[s] || self.mu[s].len() != self.k[s] || self.sigma[s].len() != self.k[s] {
                v.push(format!("state {} component arrays disagree with K", s + 1));
                continue;
            }
            let tot: f64 = self.lambda[s].iter().sum();
            if (tot - 1.0).abs() > 1e-12 || self.lambda[s].iter().any(|l| !(0.0..=1.0).contains(l)) {
                v.push(format!("mixture weights of state {} sum to {tot}", s + 1));
            }
            for k in 0..self.k[s] {
                let m = mat(&self.sigma[s][k]);
                if m.nrows() != self.dim() || m.ncols() != self.dim() || m.clone().cholesky().is_none() {
                    v.push(format!("covariance of state {} component {} is not SPD", s + 1, k + 1));
                }
            }
        }
        v
    }
}
