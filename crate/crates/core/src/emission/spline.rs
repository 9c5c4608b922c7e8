//! Penalized B-spline density emissions.
//!
//! Each state models every coordinate with an independent density
//! `sum_k a_k phi_k(x)`, where the `phi_k` are cubic B-splines on an
//! equally spaced grid rescaled to integrate to one and `a` lies on the
//! probability simplex. Coordinates are multiplied within a state.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{check_weights, EmissionModel, SampleContext};
use crate::error::{invalid, HhsmmError, Result};

pub(crate) const DENSITY_FLOOR: f64 = 1e-300;

/// Cardinal cubic B-spline on `[0, 4)`.
fn cubic(u: f64) -> f64 {
    if !(0.0..4.0).contains(&u) {
        0.0
    } else if u < 1.0 {
        u * u * u / 6.0
    } else if u < 2.0 {
        (-3.0 * u * u * u + 12.0 * u * u - 12.0 * u + 4.0) / 6.0
    } else if u < 3.0 {
        (3.0 * u * u * u - 24.0 * u * u + 60.0 * u - 44.0) / 6.0
    } else {
        (4.0 - u).powi(3) / 6.0
    }
}

/// Cubic B-spline basis with `n` functions on equally spaced knots
/// `lo + (i - 3) h`, `h = (hi - lo) / (n - 3)`. The functions sum to one on
/// `[lo, hi]` and their supports cover `[lo - 3h, hi + 3h]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplineBasis {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    pub h: f64,
}

impl SplineBasis {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return invalid(format!("spline range [{lo}, {hi}] is empty"));
        }
        if n < 4 {
            return invalid("a cubic spline basis needs at least 4 functions");
        }
        Ok(Self { lo, hi, n, h: (hi - lo) / (n - 3) as f64 })
    }

    pub fn padded(&self) -> (f64, f64) {
        (self.lo - 3.0 * self.h, self.hi + 3.0 * self.h)
    }

    pub fn contains(&self, x: f64) -> bool {
        let (a, b) = self.padded();
        x >= a && x <= b
    }

    /// Index of the first nonzero column and the (up to) four values.
    pub(crate) fn raw_sparse(&self, x: f64) -> (usize, [f64; 4]) {
        let v = (x - self.lo) / self.h + 3.0;
        let top = v.floor() as i64;
        let mut vals = [0.0; 4];
        let first = (top - 3).max(0) as usize;
        for k in top - 3..=top {
            if k >= 0 && (k as usize) < self.n {
                vals[k as usize - first] = cubic(v - k as f64);
            }
        }
        (first, vals)
    }

    /// Unnormalized basis row (partition of unity on `[lo, hi]`).
    pub fn raw_row(&self, x: f64) -> Vec<f64> {
        let mut row = vec![0.0; self.n];
        if self.contains(x) {
            let (first, vals) = self.raw_sparse(x);
            for (i, v) in vals.iter().enumerate() {
                if first + i < self.n {
                    row[first + i] = *v;
                }
            }
        }
        row
    }

    /// Density-normalized basis row: each column integrates to one.
    pub fn density_row(&self, x: f64) -> Vec<f64> {
        self.raw_row(x).into_iter().map(|v| v / self.h).collect()
    }

    /// `sum_k a_k phi_k(x)`, zero outside the padded range.
    pub fn density(&self, a: &[f64], x: f64) -> f64 {
        if !self.contains(x) {
            return 0.0;
        }
        let (first, vals) = self.raw_sparse(x);
        vals.iter()
            .enumerate()
            .filter(|(i, _)| first + i < self.n)
            .map(|(i, v)| a[first + i] * v)
            .sum::<f64>()
            / self.h
    }
}

/// Density-normalized basis matrix with `2K + 1` columns on `range`.
pub fn bspline_basis(points: &[f64], k: usize, range: [f64; 2]) -> Result<Vec<Vec<f64>>> {
    if k < 2 {
        return invalid("K must be at least 2");
    }
    let b = SplineBasis::new(range[0], range[1], 2 * k + 1)?;
    points
        .iter()
        .map(|&x| {
            if !b.contains(x) {
                invalid(format!("point {x} lies outside the padded spline range"))
            } else {
                Ok(b.density_row(x))
            }
        })
        .collect()
}

fn default_max_inner() -> usize {
    50
}

fn default_true() -> bool {
    true
}

/// Per-state spline densities: `a[j][dim][k]`, one `range` per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineParams {
    #[serde(rename = "K")]
    pub k: usize,
    pub range: Vec<[f64; 2]>,
    pub a: Vec<Vec<Vec<f64>>>,
    pub lambda: Vec<f64>,
    #[serde(default = "default_max_inner")]
    pub max_inner: usize,
    #[serde(default = "default_true")]
    pub update_lambda: bool,
}

/// Inner-solver trace for one state and dimension.
#[derive(Debug, Clone)]
pub struct InnerFit {
    pub a: Vec<f64>,
    pub objective: Vec<f64>,
}

struct WeightedBasis {
    first: Vec<usize>,
    vals: Vec<[f64; 4]>,
    w: Vec<f64>,
    n: usize,
}

impl WeightedBasis {
    fn new(basis: &SplineBasis, x: &[f64], w: &[f64]) -> Result<Self> {
        let mut out = Self { first: Vec::new(), vals: Vec::new(), w: Vec::new(), n: basis.n };
        for (&xi, &wi) in x.iter().zip(w) {
            if wi <= 0.0 {
                continue;
            }
            if !basis.contains(xi) {
                return invalid(format!("observation {xi} lies outside the spline support"));
            }
            let (f, mut v) = basis.raw_sparse(xi);
            for (i, val) in v.iter_mut().enumerate() {
                if f + i >= basis.n {
                    *val = 0.0;
                }
                *val /= basis.h;
            }
            out.first.push(f);
            out.vals.push(v);
            out.w.push(wi);
        }
        Ok(out)
    }

    fn fitted(&self, a: &[f64], t: usize) -> f64 {
        let f = self.first[t];
        self.vals[t].iter().enumerate().filter(|(i, _)| f + i < self.n).map(|(i, v)| a[f + i] * v).sum()
    }

    fn loglik(&self, a: &[f64]) -> f64 {
        (0..self.w.len()).map(|t| self.w[t] * self.fitted(a, t).max(DENSITY_FLOOR).ln()).sum()
    }
}

fn second_diff(a: &[f64]) -> Vec<f64> {
    a.windows(3).map(|w| w[2] - 2.0 * w[1] + w[0]).collect()
}

fn penalty_matrix(n: usize) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(n.saturating_sub(2), n);
    for r in 0..n.saturating_sub(2) {
        d[(r, r)] = 1.0;
        d[(r, r + 1)] = -2.0;
        d[(r, r + 2)] = 1.0;
    }
    d.transpose() * d
}

fn objective(wb: &WeightedBasis, a: &[f64], lambda: f64) -> f64 {
    let pen: f64 = second_diff(a).iter().map(|v| v * v).sum();
    wb.loglik(a) - 0.5 * lambda * pen
}

/// Maximize `sum_k e_k log b_k - lambda/2 b'Pb` over the simplex, starting
/// from `start` and only accepting ascent steps.
fn surrogate_max(e: &[f64], p: &DMatrix<f64>, lambda: f64, start: &[f64]) -> Vec<f64> {
    let tot: f64 = e.iter().sum();
    if lambda == 0.0 {
        return e.iter().map(|v| v / tot).collect();
    }
    let free: Vec<usize> = (0..e.len()).filter(|&k| e[k] > 0.0).collect();
    let m = free.len();
    let value = |b: &[f64]| -> f64 {
        let bv = DVector::from_column_slice(b);
        let quad = (bv.transpose() * p * &bv)[(0, 0)];
        free.iter().map(|&k| e[k] * b[k].ln()).sum::<f64>() - 0.5 * lambda * quad
    };
    let mut b: Vec<f64> = (0..e.len()).map(|k| if e[k] > 0.0 { start[k] } else { 0.0 }).collect();
    let s: f64 = b.iter().sum();
    b.iter_mut().for_each(|v| *v /= s);
    let mut cur = value(&b);
    for _ in 0..40 {
        let bv = DVector::from_column_slice(&b);
        let pb = p * &bv;
        let mut kkt = DMatrix::zeros(m + 1, m + 1);
        let mut rhs = DVector::zeros(m + 1);
        for (r, &k) in free.iter().enumerate() {
            rhs[r] = -(e[k] / b[k] - lambda * pb[k]);
            for (c, &l) in free.iter().enumerate() {
                kkt[(r, c)] = -lambda * p[(k, l)];
            }
            kkt[(r, r)] -= e[k] / (b[k] * b[k]);
            kkt[(r, m)] = 1.0;
            kkt[(m, r)] = 1.0;
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { break };
        let step: Vec<f64> = (0..m).map(|r| sol[r]).collect();
        let mut alpha: f64 = 1.0;
        for (r, &k) in free.iter().enumerate() {
            if step[r] < 0.0 {
                alpha = alpha.min(0.99 * b[k] / -step[r]);
            }
        }
        let mut accepted = false;
        for _ in 0..40 {
            let mut trial = b.clone();
            for (r, &k) in free.iter().enumerate() {
                trial[k] = (b[k] + alpha * step[r]).max(f64::MIN_POSITIVE);
            }
            let s: f64 = trial.iter().sum();
            trial.iter_mut().for_each(|v| *v /= s);
            let v = value(&trial);
            if v >= cur {
                let gain = v - cur;
                b = trial;
                cur = v;
                accepted = gain > 1e-15 * cur.abs().max(1.0);
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    b
}

/// Penalized fit of one coordinate: MM iterations whose surrogate is
/// maximized exactly, so the objective never decreases.
pub fn fit_coordinate(
    basis: &SplineBasis,
    x: &[f64],
    w: &[f64],
    start: &[f64],
    lambda: f64,
    max_inner: usize,
    tol: f64,
) -> Result<InnerFit> {
    let wb = WeightedBasis::new(basis, x, w)?;
    if wb.w.is_empty() {
        return invalid("no positively weighted observations");
    }
    let p = penalty_matrix(basis.n);
    // Keep every coefficient strictly positive so that none is frozen at 0.
    let floor = 1e-6 / basis.n as f64;
    let mut a: Vec<f64> = start.iter().map(|v| v.max(floor)).collect();
    let s: f64 = a.iter().sum();
    a.iter_mut().for_each(|v| *v /= s);
    let mut obj = objective(&wb, &a, lambda);
    let mut trace = vec![obj];
    for _ in 0..max_inner {
        let mut e = vec![0.0; basis.n];
        for t in 0..wb.w.len() {
            let f = wb.fitted(&a, t).max(DENSITY_FLOOR);
            let first = wb.first[t];
            for (i, v) in wb.vals[t].iter().enumerate() {
                if first + i < basis.n && *v > 0.0 {
                    e[first + i] += wb.w[t] * a[first + i] * v / f;
                }
            }
        }
        let next = surrogate_max(&e, &p, lambda, &a);
        let next_obj = objective(&wb, &next, lambda);
        if !next_obj.is_finite() {
            return Err(HhsmmError::Numeric("spline objective is not finite".into()));
        }
        if next_obj < obj {
            break;
        }
        let rel = (next_obj - obj).abs() / obj.abs().max(1e-300);
        a = next;
        obj = next_obj;
        trace.push(obj);
        if rel < tol {
            break;
        }
    }
    Ok(InnerFit { a, objective: trace })
}

/// Effective degrees of freedom `tr(H_lambda^-1 H_0)` on the tangent space
/// of the active simplex face, and the squared second-difference norm.
fn effective_df(basis: &SplineBasis, x: &[f64], w: &[f64], a: &[f64], lambda: f64) -> Result<(f64, f64)> {
    let wb = WeightedBasis::new(basis, x, w)?;
    let amax = a.iter().cloned().fold(0.0, f64::max);
    let active: Vec<usize> = (0..a.len()).filter(|&k| a[k] > 1e-10 * amax).collect();
    let m = active.len();
    let pen: f64 = second_diff(a).iter().map(|v| v * v).sum();
    if m < 2 {
        return Ok((0.0, pen));
    }
    let pos: Vec<Option<usize>> = (0..a.len()).map(|k| active.iter().position(|&q| q == k)).collect();
    let mut h0 = DMatrix::<f64>::zeros(m, m);
    for t in 0..wb.w.len() {
        let f = wb.fitted(a, t).max(DENSITY_FLOOR);
        let first = wb.first[t];
        let idx: Vec<(usize, f64)> = wb.vals[t]
            .iter()
            .enumerate()
            .filter_map(|(i, v)| pos.get(first + i).copied().flatten().map(|r| (r, *v)))
            .collect();
        for &(r, vr) in &idx {
            for &(c, vc) in &idx {
                h0[(r, c)] -= wb.w[t] * vr * vc / (f * f);
            }
        }
    }
    let pfull = penalty_matrix(basis.n);
    let pa = DMatrix::from_fn(m, m, |r, c| pfull[(active[r], active[c])]);
    let hl = &h0 - pa * lambda;
    let z = DMatrix::from_fn(m, m - 1, |r, c| {
        if r == c {
            1.0
        } else if r == m - 1 {
            -1.0
        } else {
            0.0
        }
    });
    let a0 = z.transpose() * &h0 * &z;
    let al = z.transpose() * hl * &z;
    let sol = al
        .lu()
        .solve(&a0)
        .ok_or_else(|| HhsmmError::Numeric("singular penalized Hessian".into()))?;
    Ok((sol.trace(), pen))
}

impl SplineParams {
    /// Ranges from the data and coefficients from a weighted projection of
    /// the data onto the basis, followed by one M-step.
    pub fn initial(x: &[Vec<f64>], weights: &[Vec<f64>], k: usize, lambda: f64) -> Result<Self> {
        if k < 2 {
            return invalid("K must be at least 2");
        }
        let nstate = weights.first().map_or(0, |w| w.len());
        check_weights(x, weights, nstate)?;
        let p = x[0].len();
        let mut range = Vec::with_capacity(p);
        for d in 0..p {
            let (lo, hi) = x
                .iter()
                .map(|r| r[d])
                .filter(|v| v.is_finite())
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            if !lo.is_finite() {
                return invalid(format!("column {} has no observed values", d + 1));
            }
            range.push(if hi > lo { [lo, hi] } else { [lo - 0.5, hi + 0.5] });
        }
        let n = 2 * k + 1;
        let mut a = vec![vec![vec![0.0; n]; p]; nstate];
        for d in 0..p {
            let b = SplineBasis::new(range[d][0], range[d][1], n)?;
            for (row, w) in x.iter().zip(weights) {
                let phi = b.raw_row(row[d]);
                for j in 0..nstate {
                    for c in 0..n {
                        a[j][d][c] += w[j] * phi[c];
                    }
                }
            }
            for aj in a.iter_mut() {
                let s: f64 = aj[d].iter().sum();
                let bump = 1e-3 * s / n as f64;
                aj[d].iter_mut().for_each(|v| *v += bump);
                let s: f64 = aj[d].iter().sum();
                aj[d].iter_mut().for_each(|v| *v /= s);
            }
        }
        let params = Self {
            k,
            range,
            a,
            lambda: vec![lambda; nstate],
            max_inner: default_max_inner(),
            update_lambda: true,
        };
        params.mstep(x, weights)
    }

    fn basis(&self, d: usize) -> Result<SplineBasis> {
        SplineBasis::new(self.range[d][0], self.range[d][1], 2 * self.k + 1)
    }

    pub fn dim(&self) -> usize {
        self.range.len()
    }
}

/// Spline density of state `j`, floored at `1e-300` outside the support.
pub fn dnonpar(x: &[f64], j: usize, params: &SplineParams) -> Result<f64> {
    if x.len() != params.dim() {
        return invalid(format!("row has {} columns, model expects {}", x.len(), params.dim()));
    }
    let mut dens = 1.0;
    for (d, &xd) in x.iter().enumerate() {
        if xd.is_nan() {
            continue;
        }
        dens *= params.basis(d)?.density(&params.a[j][d], xd);
    }
    Ok(dens.max(DENSITY_FLOOR))
}

/// Weighted penalized M-step for every state and dimension, followed by
/// the smoothing-parameter update when enabled.
pub fn nonpar_mstep(x: &[Vec<f64>], weights: &[Vec<f64>], prev: &SplineParams) -> Result<SplineParams> {
    let nstate = prev.a.len();
    check_weights(x, weights, nstate)?;
    if x.iter().flatten().any(|v| v.is_nan()) {
        return invalid("spline emissions do not support missing values");
    }
    let mut out = prev.clone();
    for j in 0..nstate {
        let w: Vec<f64> = weights.iter().map(|r| r[j]).collect();
        let (mut df, mut pen) = (0.0, 0.0);
        for d in 0..prev.dim() {
            let basis = prev.basis(d)?;
            let col: Vec<f64> = x.iter().map(|r| r[d]).collect();
            let fit = fit_coordinate(&basis, &col, &w, &prev.a[j][d], prev.lambda[j], prev.max_inner, 1e-8)?;
            if prev.update_lambda {
                let (f, p) = effective_df(&basis, &col, &w, &fit.a, prev.lambda[j])?;
                df += f;
                pen += p;
            }
            out.a[j][d] = fit.a;
        }
        if prev.update_lambda {
            let p = prev.dim() as f64;
            let next = if pen > 1e-300 { (df - p) / pen } else { 1e10 };
            out.lambda[j] = if next.is_finite() { next.clamp(0.0, 1e10) } else { prev.lambda[j] };
        }
    }
    Ok(out)
}

impl EmissionModel for SplineParams {
    fn family(&self) -> &'static str {
        "nonpar"
    }

    fn n_states(&self) -> usize {
        self.a.len()
    }

    fn log_density(&self, row: &[f64], j: usize) -> Result<f64> {
        Ok(dnonpar(row, j, self)?.ln())
    }

    fn mstep(&self, x: &[Vec<f64>], weights: &[Vec<f64>]) -> Result<Self> {
        nonpar_mstep(x, weights, self)
    }

    /// Exact draw: a basis function is picked by its coefficient, and the
    /// cardinal cubic B-spline is the density of a sum of four uniforms.
    fn sample(&self, j: usize, _ctx: &SampleContext, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.dim());
        for d in 0..self.dim() {
            let b = self.basis(d)?;
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut k = b.n - 1;
            for (i, v) in self.a[j][d].iter().enumerate() {
                acc += v;
                if u < acc {
                    k = i;
                    break;
                }
            }
            let s: f64 = (0..4).map(|_| rng.random::<f64>()).sum();
            out.push(b.lo + (k as f64 - 3.0 + s) * b.h);
        }
        Ok(out)
    }

    fn n_free_params(&self) -> usize {
        self.a.len() * self.dim() * (2 * self.k)
    }

    fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (j, aj) in self.a.iter().enumerate() {
            if aj.len() != self.dim() {
                v.push(format!("state {} has {} coefficient rows for {} dimensions", j + 1, aj.len(), self.dim()));
                continue;
            }
            for row in aj {
                let s: f64 = row.iter().sum();
                if row.len() != 2 * self.k + 1 || row.iter().any(|c| *c < 0.0) || (s - 1.0).abs() > 1e-8 {
                    v.push(format!("spline coefficients of state {} are not on the simplex", j + 1));
                }
            }
            if !(self.lambda.get(j).copied().unwrap_or(-1.0) >= 0.0) {
                v.push(format!("smoothing parameter of state {} must be nonnegative", j + 1));
            }
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn trapezoid(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let inner: f64 = (1..n).map(|i| f(a + i as f64 * h)).sum();
        h * (0.5 * f(a) + inner + 0.5 * f(b))
    }

    #[test]
    fn interior_rows_have_four_nonzeros() {
        let b = SplineBasis::new(0.0, 1.0, 11).unwrap();
        let row = b.raw_row(0.37);
        assert_eq!(row.iter().filter(|v| **v > 0.0).count(), 4);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn columns_integrate_to_one() {
        let b = SplineBasis::new(-2.0, 3.0, 11).unwrap();
        let (lo, hi) = b.padded();
        for k in 0..b.n {
            let integral = trapezoid(|x| b.density_row(x)[k], lo, hi, 10_000);
            assert!((integral - 1.0).abs() < 1e-8, "column {k}: {integral}");
        }
    }

    #[test]
    fn translation_equivariance() {
        let pts = [0.1, 0.5, 0.93];
        let a = bspline_basis(&pts, 3, [0.0, 1.0]).unwrap();
        let shifted: Vec<f64> = pts.iter().map(|p| p + 4.0).collect();
        let b = bspline_basis(&shifted, 3, [4.0, 5.0]).unwrap();
        for (r, s) in a.iter().zip(&b) {
            for (u, v) in r.iter().zip(s) {
                assert!((u - v).abs() < 1e-12);
            }
        }
        assert!(bspline_basis(&[10.0], 3, [0.0, 1.0]).is_err());
    }

    fn params_1d(a: Vec<f64>, k: usize) -> SplineParams {
        SplineParams { k, range: vec![[0.0, 1.0]], a: vec![vec![a]], lambda: vec![0.0], max_inner: 50, update_lambda: false }
    }

    #[test]
    fn point_mass_coefficient_is_basis_function() {
        let mut a = vec![0.0; 7];
        a[3] = 1.0;
        let p = params_1d(a, 3);
        let b = SplineBasis::new(0.0, 1.0, 7).unwrap();
        for x in [0.1, 0.45, 0.8] {
            assert!((dnonpar(&[x], 0, &p).unwrap() - b.density_row(x)[3]).abs() < 1e-14);
        }
    }

    #[test]
    fn uniform_coefficients_integrate_to_one() {
        let p = params_1d(vec![1.0 / 7.0; 7], 3);
        let b = SplineBasis::new(0.0, 1.0, 7).unwrap();
        let (lo, hi) = b.padded();
        let total = trapezoid(|x| dnonpar(&[x], 0, &p).unwrap(), lo, hi, 10_000);
        assert!((total - 1.0).abs() < 1e-8);
    }

    #[test]
    fn product_over_dimensions() {
        let a1 = vec![0.1, 0.2, 0.3, 0.2, 0.1, 0.05, 0.05];
        let a2 = vec![0.3, 0.1, 0.1, 0.1, 0.1, 0.1, 0.2];
        let p = SplineParams {
            k: 3,
            range: vec![[0.0, 1.0], [-1.0, 2.0]],
            a: vec![vec![a1.clone(), a2.clone()]],
            lambda: vec![0.0],
            max_inner: 50,
            update_lambda: false,
        };
        let d1 = SplineBasis::new(0.0, 1.0, 7).unwrap().density(&a1, 0.3);
        let d2 = SplineBasis::new(-1.0, 2.0, 7).unwrap().density(&a2, 1.1);
        assert!((dnonpar(&[0.3, 1.1], 0, &p).unwrap() - d1 * d2).abs() < 1e-14);
    }

    fn normal_draws(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        crate::linalg::standard_normals(&mut rng, n)
    }

    #[test]
    fn inner_iterations_are_monotone() {
        let x = normal_draws(500, 2);
        let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let b = SplineBasis::new(lo, hi, 15).unwrap();
        let w = vec![1.0; x.len()];
        for lambda in [0.0, 10.0, 1e4] {
            let fit = fit_coordinate(&b, &x, &w, &vec![1.0 / 15.0; 15], lambda, 50, 0.0).unwrap();
            for pair in fit.objective.windows(2) {
                assert!(pair[1] >= pair[0] - 1e-9, "lambda {lambda}: {pair:?}");
            }
        }
    }

    #[test]
    fn doubling_weights_keeps_coefficients() {
        let x = normal_draws(300, 4);
        let b = SplineBasis::new(-4.0, 4.0, 11).unwrap();
        let start = vec![1.0 / 11.0; 11];
        let one = fit_coordinate(&b, &x, &vec![1.0; 300], &start, 0.0, 50, 1e-12).unwrap();
        let two = fit_coordinate(&b, &x, &vec![2.0; 300], &start, 0.0, 50, 1e-12).unwrap();
        for (u, v) in one.a.iter().zip(&two.a) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn huge_penalty_flattens_second_differences() {
        let x = normal_draws(200, 9);
        let b = SplineBasis::new(-4.0, 4.0, 11).unwrap();
        let w = vec![1.0; x.len()];
        let fit = fit_coordinate(&b, &x, &w, &vec![1.0 / 11.0; 11], 1e12, 200, 0.0).unwrap();
        let pen: f64 = second_diff(&fit.a).iter().map(|v| v * v).sum();
        assert!(0.5 * 1e12 * pen < 1e-6, "penalty {}", 0.5 * 1e12 * pen);
    }
}
