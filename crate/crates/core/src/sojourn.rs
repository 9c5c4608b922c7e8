//! Sojourn-time distributions on the discrete time grid.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma, LogNormal, Weibull};
use statrs::function::gamma::ln_gamma;

use crate::error::{invalid, HhsmmError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SojournFamily {
    Gamma,
    Weibull,
    Lognormal,
    Nonparametric,
}

impl SojournFamily {
    pub fn parametric(self) -> bool {
        !matches!(self, SojournFamily::Nonparametric)
    }

    pub fn name(self) -> &'static str {
        match self {
            SojournFamily::Gamma => "gamma",
            SojournFamily::Weibull => "weibull",
            SojournFamily::Lognormal => "lognormal",
            SojournFamily::Nonparametric => "nonparametric",
        }
    }
}

impl std::str::FromStr for SojournFamily {
    type Err = HhsmmError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gamma" => Ok(Self::Gamma),
            "weibull" => Ok(Self::Weibull),
            "lognormal" => Ok(Self::Lognormal),
            "nonparametric" => Ok(Self::Nonparametric),
            other => invalid(format!("unknown sojourn family `{other}`")),
        }
    }
}

/// Per-state sojourn parameters. Entries for Markovian states are
/// placeholders (zeros or empty rows).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum SojournSpec {
    Gamma { shape: Vec<f64>, scale: Vec<f64> },
    Weibull { shape: Vec<f64>, scale: Vec<f64> },
    Lognormal { mu: Vec<f64>, sigma: Vec<f64> },
    Nonparametric { d: Vec<Vec<f64>> },
}

impl SojournSpec {
    pub fn family(&self) -> SojournFamily {
        match self {
            SojournSpec::Gamma { .. } => SojournFamily::Gamma,
            SojournSpec::Weibull { .. } => SojournFamily::Weibull,
            SojournSpec::Lognormal { .. } => SojournFamily::Lognormal,
            SojournSpec::Nonparametric { .. } => SojournFamily::Nonparametric,
        }
    }

    /// Build a parametric spec from per-state `(first, second)` parameter
    /// pairs: shape/scale or mu/sigma.
    pub fn from_pairs(family: SojournFamily, pairs: &[(f64, f64)]) -> Result<Self> {
        let a = pairs.iter().map(|p| p.0).collect();
        let b = pairs.iter().map(|p| p.1).collect();
        Ok(match family {
            SojournFamily::Gamma => SojournSpec::Gamma { shape: a, scale: b },
            SojournFamily::Weibull => SojournSpec::Weibull { shape: a, scale: b },
            SojournFamily::Lognormal => SojournSpec::Lognormal { mu: a, sigma: b },
            SojournFamily::Nonparametric => {
                return invalid("nonparametric sojourns are built from pmf rows")
            }
        })
    }

    pub fn n_states(&self) -> usize {
        match self {
            SojournSpec::Gamma { shape, .. } | SojournSpec::Weibull { shape, .. } => shape.len(),
            SojournSpec::Lognormal { mu, .. } => mu.len(),
            SojournSpec::Nonparametric { d } => d.len(),
        }
    }

    pub fn pair(&self, j: usize) -> Option<(f64, f64)> {
        match self {
            SojournSpec::Gamma { shape, scale } | SojournSpec::Weibull { shape, scale } => {
                Some((shape[j], scale[j]))
            }
            SojournSpec::Lognormal { mu, sigma } => Some((mu[j], sigma[j])),
            SojournSpec::Nonparametric { .. } => None,
        }
    }

    pub fn set_pair(&mut self, j: usize, v: (f64, f64)) {
        match self {
            SojournSpec::Gamma { shape, scale } | SojournSpec::Weibull { shape, scale } => {
                shape[j] = v.0;
                scale[j] = v.1;
            }
            SojournSpec::Lognormal { mu, sigma } => {
                mu[j] = v.0;
                sigma[j] = v.1;
            }
            SojournSpec::Nonparametric { .. } => {}
        }
    }

    /// Problems with the parameters of state `j`, if any.
    pub fn check_state(&self, j: usize) -> Option<String> {
        if j >= self.n_states() {
            return Some(format!("no sojourn parameters for state {}", j + 1));
        }
        match self {
            SojournSpec::Nonparametric { d } => {
                let row = &d[j];
                if row.is_empty() {
                    return Some(format!("sojourn pmf of state {} is empty", j + 1));
                }
                if row.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Some(format!("sojourn pmf of state {} has negative entries", j + 1));
                }
                let s: f64 = row.iter().sum();
                if (s - 1.0).abs() > 1e-10 {
                    return Some(format!("sojourn pmf of state {} sums to {s}", j + 1));
                }
                None
            }
            _ => {
                let (a, b) = self.pair(j).unwrap();
                let ok = match self.family() {
                    SojournFamily::Lognormal => a.is_finite() && b.is_finite() && b > 0.0,
                    _ => a.is_finite() && b.is_finite() && a > 0.0 && b > 0.0,
                };
                (!ok).then(|| format!("sojourn parameters of state {} must be positive: ({a}, {b})", j + 1))
            }
        }
    }

    /// Discretized pmf `d_j(1..m)`.
    pub fn pmf(&self, j: usize, m: usize) -> Result<Vec<f64>> {
        sojourn_pmf(self, j, m)
    }

    pub fn n_free_params(&self, _j: usize, m: usize) -> usize {
        match self {
            SojournSpec::Nonparametric { .. } => m.saturating_sub(1),
            _ => 2,
        }
    }
}

fn cdf_sf(family: SojournFamily, a: f64, b: f64, y: f64) -> Result<(f64, f64)> {
    if y <= 0.0 {
        return Ok((0.0, 1.0));
    }
    let bad = |e: String| HhsmmError::Invalid(format!("sojourn parameters ({a}, {b}): {e}"));
    Ok(match family {
        SojournFamily::Gamma => {
            let g = Gamma::new(a, 1.0 / b).map_err(|e| bad(e.to_string()))?;
            (g.cdf(y), g.sf(y))
        }
        SojournFamily::Weibull => {
            let w = Weibull::new(a, b).map_err(|e| bad(e.to_string()))?;
            (w.cdf(y), w.sf(y))
        }
        SojournFamily::Lognormal => {
            let l = LogNormal::new(a, b).map_err(|e| bad(e.to_string()))?;
            (l.cdf(y), l.sf(y))
        }
        SojournFamily::Nonparametric => unreachable!(),
    })
}

/// Probability of each unit interval `(u-1, u]`, `u = 1..m`, normalized to
/// sum to one. Differences are taken on whichever of the CDF or survival
/// function is small, to keep relative accuracy in both tails.
pub fn discretize(family: SojournFamily, a: f64, b: f64, m: usize) -> Result<Vec<f64>> {
    if m == 0 {
        return invalid("sojourn truncation bound must be at least 1");
    }
    let mut out = Vec::with_capacity(m);
    let (mut c_prev, mut s_prev) = (0.0, 1.0);
    for u in 1..=m {
        let (c, s) = cdf_sf(family, a, b, u as f64)?;
        let v = if c_prev < 0.5 { c - c_prev } else { s_prev - s };
        out.push(v.max(0.0));
        c_prev = c;
        s_prev = s;
    }
    let total: f64 = out.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(HhsmmError::Numeric(format!(
            "{} sojourn ({a}, {b}) has no mass on (0, {m}]",
            family.name()
        )));
    }
    out.iter_mut().for_each(|v| *v /= total);
    Ok(out)
}

/// Sojourn pmf of state `j` truncated at `m`.
pub fn sojourn_pmf(spec: &SojournSpec, j: usize, m: usize) -> Result<Vec<f64>> {
    if let Some(msg) = spec.check_state(j) {
        return Err(HhsmmError::Invalid(msg));
    }
    match spec {
        SojournSpec::Nonparametric { d } => {
            let row = &d[j];
            let mut out: Vec<f64> = (0..m).map(|u| row.get(u).copied().unwrap_or(0.0)).collect();
            let total: f64 = out.iter().sum();
            if !(total > 0.0) {
                return Err(HhsmmError::Numeric(format!("state {} pmf has no mass on 1..{m}", j + 1)));
            }
            out.iter_mut().for_each(|v| *v /= total);
            Ok(out)
        }
        _ => {
            let (a, b) = spec.pair(j).unwrap();
            discretize(spec.family(), a, b, m)
        }
    }
}

/// Geometric sojourn of a Markovian state: `(1-p) p^(u-1)`, `u = 1..m`.
pub fn geometric_pmf(p: f64, m: usize) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&p) {
        return invalid(format!("self-transition probability {p} must lie in [0, 1)"));
    }
    let mut out = Vec::with_capacity(m);
    let mut pw = 1.0;
    for _ in 0..m {
        out.push((1.0 - p) * pw);
        pw *= p;
    }
    Ok(out)
}

/// Survival `D(u) = sum_{v >= u} d(v)`.
pub fn sojourn_survival(d: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; d.len()];
    let mut acc = 0.0;
    for u in (0..d.len()).rev() {
        acc += d[u];
        out[u] = acc;
    }
    out
}

fn weighted_moments(x: &[f64], w: &[f64]) -> Result<(f64, f64)> {
    if x.len() != w.len() {
        return invalid("durations and weights differ in length");
    }
    let sw: f64 = w.iter().sum();
    if !(sw > 0.0) {
        return invalid("duration weights have no positive mass");
    }
    let m = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let v = x.iter().zip(w).map(|(a, b)| b * (a - m).powi(2)).sum::<f64>() / sw;
    if !(v > 1e-12 * m.abs().max(1.0).powi(2)) {
        return Err(HhsmmError::ZeroVariance);
    }
    Ok((m, v))
}

fn weibull_cv2(k: f64) -> f64 {
    (ln_gamma(1.0 + 2.0 / k) - 2.0 * ln_gamma(1.0 + 1.0 / k)).exp() - 1.0
}

/// Method-of-moments estimates `(shape, scale)` or `(mu, sigma)`.
pub fn fit_sojourn_moments(durations: &[f64], weights: &[f64], family: SojournFamily) -> Result<(f64, f64)> {
    if durations.iter().zip(weights).any(|(d, w)| *w > 0.0 && !(*d > 0.0)) {
        return invalid("durations must be positive");
    }
    match family {
        SojournFamily::Gamma => {
            let (m, v) = weighted_moments(durations, weights)?;
            Ok((m * m / v, v / m))
        }
        SojournFamily::Weibull => {
            let (m, v) = weighted_moments(durations, weights)?;
            let target = v / (m * m);
            // CV^2 is decreasing in the shape parameter.
            let (mut lo, mut hi) = (0.05_f64, 100.0_f64);
            if target >= weibull_cv2(lo) {
                hi = lo;
            } else if target <= weibull_cv2(hi) {
                lo = hi;
            }
            while hi - lo > 1e-10 {
                let mid = 0.5 * (lo + hi);
                if weibull_cv2(mid) > target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let k = 0.5 * (lo + hi);
            Ok((k, m / ln_gamma(1.0 + 1.0 / k).exp()))
        }
        SojournFamily::Lognormal => {
            let logs: Vec<f64> = durations.iter().map(|d| d.max(f64::MIN_POSITIVE).ln()).collect();
            let (m, v) = weighted_moments(&logs, weights)?;
            Ok((m, v.sqrt()))
        }
        SojournFamily::Nonparametric => invalid("moment fitting needs a parametric family"),
    }
}

fn chi_square(durations: &[f64], family: SojournFamily) -> Result<(f64, usize)> {
    let w = vec![1.0; durations.len()];
    let (a, b) = fit_sojourn_moments(durations, &w, family)?;
    let max_u = durations.iter().map(|d| d.ceil().max(1.0) as usize).max().unwrap_or(1);
    let m = 3 * max_u + 10;
    let pmf = discretize(family, a, b, m)?;
    let mut obs = vec![0.0; m];
    for d in durations {
        obs[(d.ceil().max(1.0) as usize).min(m) - 1] += 1.0;
    }
    let n = durations.len() as f64;
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let (mut o_acc, mut e_acc) = (0.0, 0.0);
    for u in 0..m {
        o_acc += obs[u];
        e_acc += n * pmf[u];
        if e_acc >= 5.0 {
            bins.push((o_acc, e_acc));
            o_acc = 0.0;
            e_acc = 0.0;
        }
    }
    if o_acc > 0.0 || e_acc > 0.0 {
        match bins.last_mut() {
            Some(last) => {
                last.0 += o_acc;
                last.1 += e_acc;
            }
            None => bins.push((o_acc, e_acc)),
        }
    }
    let stat = bins.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    Ok((stat, bins.len()))
}

/// Chi-square goodness-of-fit selection among the continuous families.
pub fn select_sojourn_auto(durations: &[Vec<f64>]) -> Result<SojournFamily> {
    if durations.is_empty() || durations.iter().any(|d| d.is_empty()) {
        return invalid("every semi-Markov state needs duration observations");
    }
    let mut best: Option<(SojournFamily, f64)> = None;
    for fam in [SojournFamily::Gamma, SojournFamily::Weibull, SojournFamily::Lognormal] {
        let mut total = 0.0;
        for d in durations {
            let (stat, nbins) = chi_square(d, fam)?;
            if nbins < 2 {
                return invalid("fewer than 2 usable chi-square bins");
            }
            total += stat;
        }
        if best.is_none_or(|(_, b)| total < b) {
            best = Some((fam, total));
        }
    }
    Ok(best.unwrap().0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SojournSummary {
    pub mean: f64,
    pub sd: f64,
    pub mode: usize,
    pub lower: usize,
    pub upper: usize,
}

/// Mean, sd, mode and tail quantiles of a pmf on `1..=d.len()`; `gamma` is
/// the total two-sided tail probability.
pub fn sojourn_summary(d: &[f64], gamma: f64) -> Result<SojournSummary> {
    let total: f64 = d.iter().sum();
    if d.is_empty() || (total - 1.0).abs() > 1e-8 {
        return invalid(format!("sojourn pmf sums to {total}, expected 1"));
    }
    let mean: f64 = d.iter().enumerate().map(|(i, p)| (i + 1) as f64 * p).sum();
    let var: f64 = d
        .iter()
        .enumerate()
        .map(|(i, p)| ((i + 1) as f64 - mean).powi(2) * p)
        .sum();
    let mut mode = 1;
    for (i, p) in d.iter().enumerate() {
        if *p > d[mode - 1] {
            mode = i + 1;
        }
    }
    let half = gamma / 2.0;
    let mut lower = 0;
    let mut cum = 0.0;
    for (i, p) in d.iter().enumerate() {
        cum += p;
        if cum <= half {
            lower = i + 1;
        } else {
            break;
        }
    }
    let tail = sojourn_survival(d);
    // tail[u] is the mass strictly above u (1-based u).
    let upper = (1..=d.len())
        .find(|&u| tail.get(u).copied().unwrap_or(0.0) <= half)
        .unwrap_or(d.len());
    Ok(SojournSummary { mean, sd: var.sqrt(), mode, lower, upper })
}

fn quasi_loglik(family: SojournFamily, a: f64, b: f64, counts: &[f64]) -> f64 {
    match discretize(family, a, b, counts.len()) {
        Ok(d) => counts
            .iter()
            .zip(&d)
            .filter(|(c, _)| **c > 0.0)
            .map(|(c, p)| if *p > 0.0 { c * p.ln() } else { f64::NEG_INFINITY })
            .sum(),
        Err(_) => f64::NEG_INFINITY,
    }
}

fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, iters: usize) -> (f64, f64) {
    const R: f64 = 0.618_033_988_749_894_8;
    let mut x1 = hi - R * (hi - lo);
    let mut x2 = lo + R * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..iters {
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - R * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + R * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 >= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Update the parameters of one parametric sojourn from pseudo-counts
/// `counts[u-1]` of sojourn length `u`. Candidates are the previous
/// parameters, the weighted moment fit and a coordinate-wise golden-section
/// refinement; the candidate with the largest `sum counts * log d` wins, so
/// the update never decreases that objective.
pub fn update_from_counts(family: SojournFamily, counts: &[f64], prev: (f64, f64)) -> (f64, f64) {
    let q = |p: (f64, f64)| quasi_loglik(family, p.0, p.1, counts);
    let mut best = (prev, q(prev));
    let lengths: Vec<f64> = (1..=counts.len()).map(|u| u as f64 - 0.5).collect();
    if let Ok(mom) = fit_sojourn_moments(&lengths, counts, family) {
        let v = q(mom);
        if v > best.1 {
            best = (mom, v);
        }
    }
    if !best.1.is_finite() {
        return best.0;
    }
    // Refine in a transformed space: log for positive parameters.
    let to_z = |p: (f64, f64)| match family {
        SojournFamily::Lognormal => (p.0, p.1.ln()),
        _ => (p.0.ln(), p.1.ln()),
    };
    let from_z = |z: (f64, f64)| match family {
        SojournFamily::Lognormal => (z.0, z.1.exp()),
        _ => (z.0.exp(), z.1.exp()),
    };
    let mut z = to_z(best.0);
    for _ in 0..2 {
        let (z0, v0) = golden_max(|t| q(from_z((t, z.1))), z.0 - 1.0, z.0 + 1.0, 18);
        if v0 > best.1 {
            z.0 = z0;
            best = (from_z(z), v0);
        }
        let (z1, v1) = golden_max(|t| q(from_z((z.0, t))), z.1 - 1.0, z.1 + 1.0, 18);
        if v1 > best.1 {
            z.1 = z1;
            best = (from_z(z), v1);
        }
    }
    best.0
}
