//! Regime-switching regression emissions: Gaussian mixtures of linear
//! models and additive spline models.
//!
//! A row is split into responses (the `resp_ind` columns, 0-based) and
//! covariates (the remaining columns in order).

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::spline::SplineBasis;
use super::{check_weights, CovariateSource, EmissionModel, SampleContext};
use crate::error::{invalid, HhsmmError, Result};
use crate::linalg::{cholesky_with_jitter, from_dmatrix, log_sum_exp, spd_solve, standard_normals, to_dmatrix, Gaussian};

/// Split a row into `(response, covariates)`.
pub fn split_row(row: &[f64], resp_ind: &[usize]) -> Result<(Vec<f64>, Vec<f64>)> {
    if resp_ind.iter().any(|&i| i >= row.len()) {
        return invalid(format!("response index out of range for a row of {} columns", row.len()));
    }
    let y = resp_ind.iter().map(|&i| row[i]).collect();
    let x = (0..row.len()).filter(|i| !resp_ind.contains(i)).map(|i| row[i]).collect();
    Ok((y, x))
}

fn join_row(y: &[f64], x: &[f64], resp_ind: &[usize]) -> Vec<f64> {
    let total = y.len() + x.len();
    let mut out = vec![0.0; total];
    let mut xi = x.iter();
    for (i, slot) in out.iter_mut().enumerate() {
        *slot = match resp_ind.iter().position(|&r| r == i) {
            Some(k) => y[k],
            None => *xi.next().unwrap(),
        };
    }
    out
}

fn draw_covariates(ctx: &SampleContext, d: usize, q: usize, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
    if ctx.autoregress {
        if d != q {
            return invalid("auto-regressive sampling needs as many covariates as responses");
        }
        return Ok(ctx.previous.clone().unwrap_or_else(|| vec![0.0; d]));
    }
    let x = match &ctx.covariate {
        None => standard_normals(rng, d),
        Some(CovariateSource::Fixed(v)) => v.clone(),
        Some(CovariateSource::Normal { mean, cov }) => {
            let (_, chol) = cholesky_with_jitter(&to_dmatrix(cov), 1e-8)?;
            let z = chol.l() * DVector::from_vec(standard_normals(rng, mean.len()));
            mean.iter().zip(z.iter()).map(|(m, e)| m + e).collect()
        }
        Some(CovariateSource::Custom(f)) => f(rng),
    };
    if x.len() != d {
        return invalid(format!("covariate source gave {} values, model expects {d}", x.len()));
    }
    Ok(x)
}

fn pick(weights: &[f64], rng: &mut dyn RngCore) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

fn normal_draw(mean: &[f64], cov: &[Vec<f64>], rng: &mut dyn RngCore) -> Result<Vec<f64>> {
    let (_, chol) = cholesky_with_jitter(&to_dmatrix(cov), 1e-8)?;
    let z = chol.l() * DVector::from_vec(standard_normals(rng, mean.len()));
    Ok(mean.iter().zip(z.iter()).map(|(m, e)| m + e).collect())
}

/// Mixture of linear regressions: per state `j` and component `k`,
/// `y ~ N(intercept[j][k] + x' coefficient[j][k], csigma[j][k])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixLmParams {
    pub resp_ind: Vec<usize>,
    #[serde(rename = "K")]
    pub k: Vec<usize>,
    pub mix_p: Vec<Vec<f64>>,
    pub intercept: Vec<Vec<Vec<f64>>>,
    /// `coefficient[j][k][covariate][response]`.
    pub coefficient: Vec<Vec<Vec<Vec<f64>>>>,
    pub csigma: Vec<Vec<Vec<Vec<f64>>>>,
}

/// Weighted least-squares fit of one linear-Gaussian component.
pub(crate) struct LinearFit {
    pub intercept: Vec<f64>,
    pub coefficient: Vec<Vec<f64>>,
    pub csigma: Vec<Vec<f64>>,
}

pub(crate) fn weighted_linear_fit(ys: &[Vec<f64>], xs: &[Vec<f64>], w: &[f64], state: usize) -> Result<LinearFit> {
    let d = xs.first().map_or(0, |x| x.len());
    let q = ys.first().map_or(0, |y| y.len());
    let mut ztwz = DMatrix::<f64>::zeros(d + 1, d + 1);
    let mut ztwy = DMatrix::<f64>::zeros(d + 1, q);
    let mut total = 0.0;
    let mut z = vec![0.0; d + 1];
    for ((y, x), &wt) in ys.iter().zip(xs).zip(w) {
        if wt <= 0.0 {
            continue;
        }
        total += wt;
        z[0] = 1.0;
        z[1..].copy_from_slice(x);
        for a in 0..=d {
            for b in 0..=d {
                ztwz[(a, b)] += wt * z[a] * z[b];
            }
            for c in 0..q {
                ztwy[(a, c)] += wt * z[a] * y[c];
            }
        }
    }
    if !(total > 0.0) {
        return Err(HhsmmError::RankDeficient { state: state + 1 });
    }
    // Scale-free rank check on the correlation form of Z'WZ.
    let scale = DVector::from_iterator(d + 1, (0..=d).map(|i| ztwz[(i, i)].sqrt().max(1e-300)));
    let corr = DMatrix::from_fn(d + 1, d + 1, |a, b| ztwz[(a, b)] / (scale[a] * scale[b]));
    let rhs = DMatrix::from_fn(d + 1, q, |a, c| ztwy[(a, c)] / scale[a]);
    let sol = spd_solve(&corr, &rhs).ok_or(HhsmmError::RankDeficient { state: state + 1 })?;
    let beta = DMatrix::from_fn(d + 1, q, |a, c| sol[(a, c)] / scale[a]);
    let mut cov = DMatrix::<f64>::zeros(q, q);
    for ((y, x), &wt) in ys.iter().zip(xs).zip(w) {
        if wt <= 0.0 {
            continue;
        }
        let r = DVector::from_iterator(
            q,
            (0..q).map(|c| y[c] - beta[(0, c)] - (0..d).map(|a| x[a] * beta[(a + 1, c)]).sum::<f64>()),
        );
        cov += &r * r.transpose() * wt;
    }
    cov /= total;
    let (cov, _) = cholesky_with_jitter(&cov, 1e-8)?;
    Ok(LinearFit {
        intercept: (0..q).map(|c| beta[(0, c)]).collect(),
        coefficient: (0..d).map(|a| (0..q).map(|c| beta[(a + 1, c)]).collect()).collect(),
        csigma: from_dmatrix(&cov),
    })
}

impl MixLmParams {
    pub fn n_covariates(&self) -> usize {
        self.coefficient.first().and_then(|c| c.first()).map_or(0, |c| c.len())
    }

    pub fn n_responses(&self) -> usize {
        self.resp_ind.len()
    }

    fn mean(&self, j: usize, k: usize, x: &[f64]) -> Vec<f64> {
        (0..self.n_responses())
            .map(|c| {
                self.intercept[j][k][c]
                    + x.iter().zip(&self.coefficient[j][k]).map(|(xi, b)| xi * b[c]).sum::<f64>()
            })
            .collect()
    }

    fn component_logs(&self, row: &[f64], j: usize) -> Result<Vec<f64>> {
        let (y, x) = split_row(row, &self.resp_ind)?;
        if x.len() != self.n_covariates() {
            return invalid(format!("row has {} covariates, model expects {}", x.len(), self.n_covariates()));
        }
        if row.iter().any(|v| v.is_nan()) {
            return invalid("regression emissions do not support missing values");
        }
        (0..self.k[j])
            .map(|k| {
                if self.mix_p[j][k] <= 0.0 {
                    return Ok(f64::NEG_INFINITY);
                }
                let g = Gaussian::new(&self.mean(j, k, &x), &to_dmatrix(&self.csigma[j][k]))?;
                Ok(self.mix_p[j][k].ln() + g.log_pdf(&y))
            })
            .collect()
    }
}

/// Conditional density of the response given covariates under state `j`.
pub fn dmixlm(row: &[f64], j: usize, params: &MixLmParams) -> Result<f64> {
    Ok(log_sum_exp(&params.component_logs(row, j)?).exp())
}

/// Weighted M-step: responsibilities from `prev`, then weighted least
/// squares per state and component.
pub fn mixlm_mstep(x: &[Vec<f64>], weights: &[Vec<f64>], prev: &MixLmParams) -> Result<MixLmParams> {
    let nstate = prev.k.len();
    check_weights(x, weights, nstate)?;
    let mut ys = Vec::with_capacity(x.len());
    let mut xs = Vec::with_capacity(x.len());
    for row in x {
        let (y, c) = split_row(row, &prev.resp_ind)?;
        ys.push(y);
        xs.push(c);
    }
    let mut out = prev.clone();
    for j in 0..nstate {
        let kj = prev.k[j];
        let total: f64 = weights.iter().map(|w| w[j]).sum();
        let mut cw = vec![vec![0.0; x.len()]; kj];
        for (t, row) in x.iter().enumerate() {
            let lj = weights[t][j];
            if lj <= 0.0 {
                continue;
            }
            let logs = prev.component_logs(row, j)?;
            let lse = log_sum_exp(&logs);
            for k in 0..kj {
                cw[k][t] = if lse.is_finite() { (logs[k] - lse).exp() * lj } else { lj / kj as f64 };
            }
        }
        for k in 0..kj {
            let mass: f64 = cw[k].iter().sum();
            out.mix_p[j][k] = mass / total;
            if mass <= 1e-300 {
                continue;
            }
            let fit = weighted_linear_fit(&ys, &xs, &cw[k], j)?;
            out.intercept[j][k] = fit.intercept;
            out.coefficient[j][k] = fit.coefficient;
            out.csigma[j][k] = fit.csigma;
        }
        let s: f64 = out.mix_p[j].iter().sum();
        out.mix_p[j].iter_mut().for_each(|p| *p /= s);
    }
    Ok(out)
}

/// Draw a row (covariates and response placed per `resp_ind`), or only the
/// response when auto-regressing.
pub fn rmixlm(j: usize, params: &MixLmParams, ctx: &SampleContext, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
    let d = params.n_covariates();
    let q = params.n_responses();
    let x = draw_covariates(ctx, d, q, rng)?;
    let k = pick(&params.mix_p[j], rng);
    let y = normal_draw(&params.mean(j, k, &x), &params.csigma[j][k], rng)?;
    Ok(if ctx.autoregress { y } else { join_row(&y, &x, &params.resp_ind) })
}

impl EmissionModel for MixLmParams {
    fn family(&self) -> &'static str {
        "mixlm"
    }

    fn n_states(&self) -> usize {
        self.k.len()
    }

    fn log_density(&self, row: &[f64], j: usize) -> Result<f64> {
        Ok(log_sum_exp(&self.component_logs(row, j)?))
    }

    fn mstep(&self, x: &[Vec<f64>], weights: &[Vec<f64>]) -> Result<Self> {
        mixlm_mstep(x, weights, self)
    }

    fn sample(&self, j: usize, ctx: &SampleContext, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        rmixlm(j, self, ctx, rng)
    }

    fn n_free_params(&self) -> usize {
        let d = self.n_covariates();
        let q = self.n_responses();
        self.k.iter().map(|&k| (k - 1) + k * (q * (d + 1) + q * (q + 1) / 2)).sum()
    }

    fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for j in 0..self.k.len() {
            let s: f64 = self.mix_p.get(j).map_or(0.0, |p| p.iter().sum());
            if (s - 1.0).abs() > 1e-12 {
                v.push(format!("mixture weights of state {} sum to {s}", j + 1));
            }
            for k in 0..self.k[j] {
                if to_dmatrix(&self.csigma[j][k]).cholesky().is_none() {
                    v.push(format!("csigma of state {} component {} is not SPD", j + 1, k + 1));
                }
            }
        }
        v
    }
}

fn default_true() -> bool {
    true
}

/// Additive regression: `y = mu_j + sum_l f_{j,l}(x_l) + e`, each `f`
/// a cubic B-spline expansion with `K` basis functions, centred to weighted
/// mean zero on the training covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AddRegParams {
    pub resp_ind: Vec<usize>,
    #[serde(rename = "K")]
    pub k: usize,
    /// Covariate ranges defining the knot grids.
    pub range: Vec<[f64; 2]>,
    pub mu: Vec<Vec<f64>>,
    /// `coef[j][covariate][basis][response]`.
    pub coef: Vec<Vec<Vec<Vec<f64>>>>,
    /// `center[j][covariate][response]`, subtracted from each raw expansion.
    pub center: Vec<Vec<Vec<f64>>>,
    pub sigma: Vec<Vec<Vec<f64>>>,
    pub lambda: Vec<f64>,
    #[serde(default = "default_true")]
    pub update_lambda: bool,
}

impl AddRegParams {
    /// Ranges from the data, zero functions, then one M-step.
    pub fn initial(x: &[Vec<f64>], weights: &[Vec<f64>], resp_ind: Vec<usize>, k: usize, lambda: f64) -> Result<Self> {
        if k < 4 {
            return invalid("additive regression needs at least 4 basis functions");
        }
        let nstate = weights.first().map_or(0, |w| w.len());
        check_weights(x, weights, nstate)?;
        let (y0, x0) = split_row(&x[0], &resp_ind)?;
        let (q, d) = (y0.len(), x0.len());
        if d == 0 {
            return invalid("additive regression needs at least one covariate");
        }
        let mut range = Vec::with_capacity(d);
        for l in 0..d {
            let (lo, hi) = x
                .iter()
                .map(|r| split_row(r, &resp_ind).map(|(_, c)| c[l]))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            range.push(if hi > lo { [lo, hi] } else { [lo - 0.5, hi + 0.5] });
        }
        let params = Self {
            resp_ind,
            k,
            range,
            mu: vec![vec![0.0; q]; nstate],
            coef: vec![vec![vec![vec![0.0; q]; k]; d]; nstate],
            center: vec![vec![vec![0.0; q]; d]; nstate],
            sigma: vec![(0..q).map(|a| (0..q).map(|b| if a == b { 1.0 } else { 0.0 }).collect()).collect(); nstate],
            lambda: vec![lambda; nstate],
            update_lambda: true,
        };
        params.mstep(x, weights)
    }

    fn bases(&self) -> Result<Vec<SplineBasis>> {
        self.range.iter().map(|r| SplineBasis::new(r[0], r[1], self.k)).collect()
    }

    pub fn n_covariates(&self) -> usize {
        self.range.len()
    }

    pub fn n_responses(&self) -> usize {
        self.resp_ind.len()
    }

    fn mean_with(&self, bases: &[SplineBasis], j: usize, x: &[f64]) -> Result<Vec<f64>> {
        let q = self.n_responses();
        let mut m = self.mu[j].clone();
        for (l, b) in bases.iter().enumerate() {
            if !b.contains(x[l]) {
                return invalid(format!("covariate {} value {} outside the padded spline range", l + 1, x[l]));
            }
            let phi = b.raw_row(x[l]);
            for c in 0..q {
                m[c] += phi.iter().zip(&self.coef[j][l]).map(|(p, a)| p * a[c]).sum::<f64>() - self.center[j][l][c];
            }
        }
        Ok(m)
    }

    /// Fitted mean of state `j` at covariates `x`.
    pub fn mean(&self, j: usize, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_covariates() {
            return invalid(format!("{} covariates given, model expects {}", x.len(), self.n_covariates()));
        }
        self.mean_with(&self.bases()?, j, x)
    }
}

/// Conditional normal density of the response under the additive model.
pub fn dnorm_additive_reg(row: &[f64], j: usize, params: &AddRegParams) -> Result<f64> {
    Ok(params.log_density(row, j)?.exp())
}

/// Penalized weighted least squares per state with a second-difference
/// penalty on each covariate block; the smoothing parameter is then updated
/// from the effective degrees of freedom.
pub fn additive_reg_mstep(x: &[Vec<f64>], weights: &[Vec<f64>], prev: &AddRegParams) -> Result<AddRegParams> {
    let nstate = prev.mu.len();
    check_weights(x, weights, nstate)?;
    if x.iter().flatten().any(|v| v.is_nan()) {
        return invalid("regression emissions do not support missing values");
    }
    let bases = prev.bases()?;
    let (d, q, kb) = (prev.n_covariates(), prev.n_responses(), prev.k);
    let ncol = 1 + d * kb;
    let mut design = Vec::with_capacity(x.len());
    let mut ys = Vec::with_capacity(x.len());
    for row in x {
        let (y, c) = split_row(row, &prev.resp_ind)?;
        if c.len() != d {
            return invalid(format!("row has {} covariates, model expects {d}", c.len()));
        }
        let mut z = vec![0.0; ncol];
        z[0] = 1.0;
        for (l, b) in bases.iter().enumerate() {
            if !b.contains(c[l]) {
                return invalid(format!("covariate {} value {} outside the padded spline range", l + 1, c[l]));
            }
            z[1 + l * kb..1 + (l + 1) * kb].copy_from_slice(&b.raw_row(c[l]));
        }
        design.push(z);
        ys.push(y);
    }
    // Spline columns are centred per state and the last basis function of
    // each block is dropped, which removes the constant shared with the
    // intercept; the penalty ignores constants so nothing is lost.
    let kr = kb - 1;
    let nr = d * kr;
    let mut dd = DMatrix::<f64>::zeros(kb - 2, kb);
    for r in 0..kb - 2 {
        dd[(r, r)] = 1.0;
        dd[(r, r + 1)] = -2.0;
        dd[(r, r + 2)] = 1.0;
    }
    let block = dd.transpose() * dd;
    let mut pen = DMatrix::<f64>::zeros(nr, nr);
    for l in 0..d {
        let o = l * kr;
        pen.view_mut((o, o), (kr, kr)).copy_from(&block.view((0, 0), (kr, kr)));
    }
    let spline_col = |l: usize, b: usize| 1 + l * kb + b;
    let mut out = prev.clone();
    for j in 0..nstate {
        let total: f64 = weights.iter().map(|w| w[j]).sum();
        let mut colmean = vec![0.0; ncol];
        let mut ybar = vec![0.0; q];
        for (t, z) in design.iter().enumerate() {
            let w = weights[t][j];
            if w <= 0.0 {
                continue;
            }
            for a in 0..ncol {
                colmean[a] += w * z[a] / total;
            }
            for c in 0..q {
                ybar[c] += w * ys[t][c] / total;
            }
        }
        let mut gram = DMatrix::<f64>::zeros(nr, nr);
        let mut cross = DMatrix::<f64>::zeros(nr, q);
        let mut zc = vec![0.0; nr];
        for (t, z) in design.iter().enumerate() {
            let w = weights[t][j];
            if w <= 0.0 {
                continue;
            }
            for l in 0..d {
                for b in 0..kr {
                    let a = spline_col(l, b);
                    zc[l * kr + b] = z[a] - colmean[a];
                }
            }
            for a in 0..nr {
                if zc[a] == 0.0 {
                    continue;
                }
                for b in 0..nr {
                    gram[(a, b)] += w * zc[a] * zc[b];
                }
                for c in 0..q {
                    cross[(a, c)] += w * zc[a] * (ys[t][c] - ybar[c]);
                }
            }
        }
        let lhs = &gram + &pen * prev.lambda[j];
        let theta = spd_solve(&lhs, &cross)
            .ok_or_else(|| HhsmmError::Numeric(format!("singular penalized system for state {}", j + 1)))?;
        let coef: Vec<Vec<Vec<f64>>> = (0..d)
            .map(|l| {
                (0..kb)
                    .map(|b| (0..q).map(|c| if b < kr { theta[(l * kr + b, c)] } else { 0.0 }).collect())
                    .collect()
            })
            .collect();
        let centre: Vec<Vec<f64>> = (0..d)
            .map(|l| {
                (0..q)
                    .map(|c| (0..kr).map(|b| colmean[spline_col(l, b)] * theta[(l * kr + b, c)]).sum())
                    .collect()
            })
            .collect();
        let mut cov = DMatrix::<f64>::zeros(q, q);
        for (t, z) in design.iter().enumerate() {
            let w = weights[t][j];
            if w <= 0.0 {
                continue;
            }
            let r = DVector::from_iterator(
                q,
                (0..q).map(|c| {
                    let mut f = ybar[c];
                    for l in 0..d {
                        for b in 0..kr {
                            f += (z[spline_col(l, b)] - colmean[spline_col(l, b)]) * theta[(l * kr + b, c)];
                        }
                    }
                    ys[t][c] - f
                }),
            );
            cov += &r * r.transpose() * w;
        }
        cov /= total;
        let (cov, _) = cholesky_with_jitter(&cov, 1e-8)?;
        out.mu[j] = ybar;
        out.coef[j] = coef;
        out.center[j] = centre;
        out.sigma[j] = from_dmatrix(&cov);
        if prev.update_lambda {
            let hat = spd_solve(&lhs, &gram)
                .ok_or_else(|| HhsmmError::Numeric(format!("singular penalized system for state {}", j + 1)))?;
            // Effective degrees of freedom of the smooth terms beyond the
            // unpenalized linear parts.
            let df = hat.trace();
            let rough: f64 = (0..q)
                .map(|c| {
                    let th = theta.column(c);
                    (th.transpose() * &pen * th)[(0, 0)]
                })
                .sum::<f64>()
                / q as f64;
            let s2 = cov.trace() / q as f64;
            let next = if rough > 1e-300 { s2 * (df - d as f64) / rough } else { 1e12 };
            out.lambda[j] = if next.is_finite() { next.clamp(0.0, 1e12) } else { prev.lambda[j] };
        }
    }
    Ok(out)
}

/// Predicted responses per state: `out[j][t]` for every row of `xnew`
/// (covariates only).
pub fn addreg_hhsmm_predict(params: &AddRegParams, xnew: &[Vec<f64>]) -> Result<Vec<Vec<Vec<f64>>>> {
    let bases = params.bases()?;
    (0..params.mu.len())
        .map(|j| {
            xnew.iter()
                .map(|x| {
                    if x.len() != params.n_covariates() {
                        return invalid(format!("{} covariates given, model expects {}", x.len(), params.n_covariates()));
                    }
                    params.mean_with(&bases, j, x)
                })
                .collect()
        })
        .collect()
}

impl EmissionModel for AddRegParams {
    fn family(&self) -> &'static str {
        "addreg"
    }

    fn n_states(&self) -> usize {
        self.mu.len()
    }

    fn log_density(&self, row: &[f64], j: usize) -> Result<f64> {
        if row.iter().any(|v| v.is_nan()) {
            return invalid("regression emissions do not support missing values");
        }
        let (y, x) = split_row(row, &self.resp_ind)?;
        let m = self.mean(j, &x)?;
        Ok(Gaussian::new(&m, &to_dmatrix(&self.sigma[j]))?.log_pdf(&y))
    }

    fn log_density_matrix(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let bases = self.bases()?;
        let gs: Vec<Gaussian> = self
            .sigma
            .iter()
            .map(|s| Gaussian::new(&vec![0.0; s.len()], &to_dmatrix(s)))
            .collect::<Result<_>>()?;
        rows.iter()
            .map(|row| {
                let (y, x) = split_row(row, &self.resp_ind)?;
                (0..self.n_states())
                    .map(|j| {
                        let m = self.mean_with(&bases, j, &x)?;
                        let r: Vec<f64> = y.iter().zip(&m).map(|(a, b)| a - b).collect();
                        Ok(gs[j].log_pdf(&r))
                    })
                    .collect()
            })
            .collect()
    }

    fn mstep(&self, x: &[Vec<f64>], weights: &[Vec<f64>]) -> Result<Self> {
        additive_reg_mstep(x, weights, self)
    }

    fn sample(&self, j: usize, ctx: &SampleContext, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        let x = draw_covariates(ctx, self.n_covariates(), self.n_responses(), rng)?;
        let y = normal_draw(&self.mean(j, &x)?, &self.sigma[j], rng)?;
        Ok(if ctx.autoregress { y } else { join_row(&y, &x, &self.resp_ind) })
    }

    fn n_free_params(&self) -> usize {
        let (d, q) = (self.n_covariates(), self.n_responses());
        self.mu.len() * (q + d * (self.k - 1) * q + q * (q + 1) / 2)
    }

    fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for j in 0..self.mu.len() {
            if to_dmatrix(&self.sigma[j]).cholesky().is_none() {
                v.push(format!("residual covariance of state {} is not SPD", j + 1));
            }
            if !(self.lambda.get(j).copied().unwrap_or(-1.0) >= 0.0) {
                v.push(format!("smoothing parameter of state {} must be nonnegative", j + 1));
            }
        }
        v
    }
}
