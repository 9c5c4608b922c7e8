//! Initial clustering of training data and model initialization.

pub mod kmeans;
pub mod ltr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::SequenceSet;
use crate::emission::mixmvn::impute_initial;
use crate::emission::regress::{split_row, weighted_linear_fit};
use crate::emission::{AddRegParams, Emission, MixLmParams, MixMvnParams, SplineParams};
use crate::error::{invalid, HhsmmError, Result};
use crate::linalg::{cholesky_with_jitter, from_dmatrix, to_dmatrix};
use crate::model::ModelSpec;
use crate::simulate::sequence_rng;
use crate::sojourn::{discretize, fit_sojourn_moments, select_sojourn_auto, SojournFamily, SojournSpec};

pub use kmeans::{elbow, kmeans, KMeans};
pub use ltr::{ltr_clus, ltr_cluster_k, SplitTest};

/// Number of mixture components per state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Nmix {
    Fixed(Vec<usize>),
    /// Chosen per state at the elbow of the within-cluster sum of squares.
    Auto,
    /// One component per state.
    None,
}

impl std::str::FromStr for Nmix {
    type Err = HhsmmError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Nmix::Auto),
            "none" => Ok(Nmix::None),
            _ => s
                .split(',')
                .map(|v| v.trim().parse::<usize>().map_err(|_| HhsmmError::Invalid(format!("bad mixture count '{v}'"))))
                .collect::<Result<Vec<_>>>()
                .map(Nmix::Fixed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterOptions {
    pub nstate: usize,
    pub nmix: Nmix,
    pub ltr: bool,
    pub final_absorb: bool,
    pub regress: bool,
    /// Response columns (0-based) when clustering by regression.
    pub resp_ind: Option<Vec<usize>>,
    pub seed: u64,
}

impl Default for ClusterOptions {
    fn default() -> Self {
        Self { nstate: 2, nmix: Nmix::None, ltr: false, final_absorb: false, regress: false, resp_ind: None, seed: 0 }
    }
}

/// Initial state and mixture-component labels of every training row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    pub nstate: usize,
    /// Sequence lengths.
    #[serde(rename = "N")]
    pub n: Vec<usize>,
    /// State label of each stacked row (0-based).
    pub states: Vec<usize>,
    /// Component label of each row within its state (0-based).
    pub components: Vec<usize>,
    pub nmix: Vec<usize>,
    pub ltr: bool,
    pub final_absorb: bool,
    pub miss: bool,
    pub regress: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resp_ind: Option<Vec<usize>>,
    /// Pooled run lengths per state.
    pub durations: Vec<Vec<f64>>,
}

fn offsets(n: &[usize]) -> Vec<usize> {
    let mut o = vec![0];
    for len in n {
        o.push(o.last().unwrap() + len);
    }
    o
}

fn run_lengths(states: &[usize], n: &[usize], nstate: usize) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new(); nstate];
    let off = offsets(n);
    for i in 0..n.len() {
        let seq = &states[off[i]..off[i + 1]];
        let mut t = 0;
        while t < seq.len() {
            let mut u = t + 1;
            while u < seq.len() && seq[u] == seq[t] {
                u += 1;
            }
            out[seq[t]].push((u - t) as f64);
            t = u;
        }
    }
    out
}

struct KRegression {
    labels: Vec<usize>,
    sse: f64,
}

fn residual_sse(y: &[f64], x: &[f64], fit: &crate::emission::regress::LinearFit) -> f64 {
    y.iter()
        .enumerate()
        .map(|(c, v)| {
            let m = fit.intercept[c] + x.iter().zip(&fit.coefficient).map(|(a, b)| a * b[c]).sum::<f64>();
            (v - m).powi(2)
        })
        .sum()
}

/// Cluster rows by alternating per-cluster least-squares fits and
/// minimum-residual reassignment; best of several random starts.
fn k_regressions(ys: &[Vec<f64>], xs: &[Vec<f64>], k: usize, seed: u64) -> Result<KRegression> {
    let n = ys.len();
    let npar = xs.first().map_or(0, |x| x.len()) + 1;
    if n < k * (npar + 1) {
        return invalid(format!("{n} rows are too few for {k} regression clusters"));
    }
    if k == 1 {
        let fit = weighted_linear_fit(ys, xs, &vec![1.0; n], 0)?;
        let sse = (0..n).map(|t| residual_sse(&ys[t], &xs[t], &fit)).sum();
        return Ok(KRegression { labels: vec![0; n], sse });
    }
    let runs: Vec<Option<KRegression>> = (0..10usize)
        .into_par_iter()
        .map(|r| {
            let mut rng = sequence_rng(seed, 1000 + r);
            let mut labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            let mut sse = f64::INFINITY;
            for _ in 0..100 {
                let mut fits = Vec::with_capacity(k);
                for c in 0..k {
                    let w: Vec<f64> = labels.iter().map(|&l| if l == c { 1.0 } else { 0.0 }).collect();
                    match weighted_linear_fit(ys, xs, &w, c) {
                        Ok(f) => fits.push(f),
                        Err(_) => return None,
                    }
                }
                let mut changed = false;
                sse = 0.0;
                for t in 0..n {
                    let mut best = (labels[t], f64::INFINITY);
                    for (c, f) in fits.iter().enumerate() {
                        let e = residual_sse(&ys[t], &xs[t], f);
                        if e < best.1 {
                            best = (c, e);
                        }
                    }
                    sse += best.1;
                    if best.0 != labels[t] {
                        labels[t] = best.0;
                        changed = true;
                    }
                }
                if !changed {
                    break;
                }
            }
            Some(KRegression { labels, sse })
        })
        .collect();
    runs.into_iter()
        .flatten()
        .fold(None::<KRegression>, |best, r| match best {
            Some(b) if b.sse <= r.sse => Some(b),
            _ => Some(r),
        })
        .ok_or_else(|| HhsmmError::Numeric("every k-regression start lost a cluster".into()))
}

fn features(set: &SequenceSet, opts: &ClusterOptions) -> Result<Vec<Vec<f64>>> {
    if !opts.regress {
        return Ok(set.x.clone());
    }
    let resp = opts.resp_ind.as_ref().ok_or_else(|| HhsmmError::Invalid("regression clustering needs resp_ind".into()))?;
    // Responses first, then covariates.
    set.x
        .iter()
        .map(|r| split_row(r, resp).map(|(y, x)| y.into_iter().chain(x).collect()))
        .collect()
}

/// Initial state and component labels for the training data.
pub fn initial_cluster(train: &SequenceSet, opts: &ClusterOptions) -> Result<ClusterResult> {
    train.check()?;
    let nstate = opts.nstate;
    if nstate == 0 {
        return invalid("nstate must be positive");
    }
    let miss = train.has_missing();
    let data = impute_initial(train)?;
    let rows = features(&data, opts)?;
    let n_resp = opts.resp_ind.as_ref().map_or(0, |r| r.len());
    let off = data.offsets();
    let nseq = data.n_seq();
    let absorb = opts.final_absorb && nstate > 1;
    let free = if absorb { nstate - 1 } else { nstate };
    let mut states = vec![0usize; rows.len()];
    if opts.ltr {
        let test = if opts.regress { SplitTest::Regression { n_resp } } else { SplitTest::Hotelling };
        let segs: Vec<Vec<usize>> = (0..nseq)
            .into_par_iter()
            .map(|i| {
                let end = if absorb { off[i + 1] - 1 } else { off[i + 1] };
                ltr_cluster_k(&rows[off[i]..end], free, test)
                    .map_err(|e| HhsmmError::Invalid(format!("sequence {}: {e}", i + 1)))
            })
            .collect::<Result<_>>()?;
        for i in 0..nseq {
            let end = if absorb { off[i + 1] - 1 } else { off[i + 1] };
            for (s, &start) in segs[i].iter().enumerate() {
                let stop = segs[i].get(s + 1).map_or(end, |&b| off[i] + b);
                for v in &mut states[off[i] + start..stop] {
                    *v = s;
                }
            }
        }
    } else {
        let idx: Vec<usize> = (0..nseq)
            .flat_map(|i| off[i]..if absorb { off[i + 1] - 1 } else { off[i + 1] })
            .collect();
        let sub: Vec<Vec<f64>> = idx.iter().map(|&t| rows[t].clone()).collect();
        let labels = if opts.regress {
            let (ys, xs): (Vec<Vec<f64>>, Vec<Vec<f64>>) =
                sub.iter().map(|r| (r[..n_resp].to_vec(), r[n_resp..].to_vec())).unzip();
            k_regressions(&ys, &xs, free, opts.seed)?.labels
        } else {
            kmeans(&sub, free, opts.seed, 10)?.labels
        };
        for (&t, l) in idx.iter().zip(labels) {
            states[t] = l;
        }
    }
    if absorb {
        for i in 0..nseq {
            states[off[i + 1] - 1] = nstate - 1;
        }
    }
    let mut components = vec![0usize; rows.len()];
    let mut nmix = vec![1usize; nstate];
    if let Nmix::Fixed(v) = &opts.nmix {
        if v.len() != nstate {
            return invalid(format!("{} mixture counts given for {nstate} states", v.len()));
        }
    }
    for j in 0..nstate {
        let idx: Vec<usize> = (0..rows.len()).filter(|&t| states[t] == j).collect();
        if idx.is_empty() {
            return invalid(format!("initial clustering left state {} empty", j + 1));
        }
        let sub: Vec<Vec<f64>> = idx.iter().map(|&t| rows[t].clone()).collect();
        let seed = opts.seed.wrapping_add(j as u64 + 1);
        let k = match &opts.nmix {
            Nmix::Fixed(v) => v[j],
            Nmix::Auto if !opts.regress => elbow(&sub, 10, seed)?,
            _ => 1,
        };
        if k == 0 {
            return invalid(format!("state {} needs at least one mixture component", j + 1));
        }
        if sub.len() < k {
            return invalid(format!("state {} has {} rows for {k} components", j + 1, sub.len()));
        }
        nmix[j] = k;
        if k > 1 {
            let labels = if opts.regress {
                let (ys, xs): (Vec<Vec<f64>>, Vec<Vec<f64>>) =
                    sub.iter().map(|r| (r[..n_resp].to_vec(), r[n_resp..].to_vec())).unzip();
                k_regressions(&ys, &xs, k, seed)?.labels
            } else {
                kmeans(&sub, k, seed, 10)?.labels
            };
            for (&t, l) in idx.iter().zip(labels) {
                components[t] = l;
            }
        }
    }
    let durations = run_lengths(&states, &data.n, nstate);
    Ok(ClusterResult {
        nstate,
        n: data.n.clone(),
        states,
        components,
        nmix,
        ltr: opts.ltr,
        final_absorb: absorb,
        miss,
        regress: opts.regress,
        resp_ind: opts.resp_ind.clone(),
        durations,
    })
}

/// Emission family to initialize, with its tuning constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum EmissionChoice {
    #[serde(rename = "mixmvnorm")]
    MixMvn,
    #[serde(rename = "nonpar")]
    Spline { k: usize, lambda: f64 },
    #[serde(rename = "mixlm")]
    MixLm,
    #[serde(rename = "addreg")]
    AddReg { k: usize, lambda: f64 },
}

/// Sojourn family to initialize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SojournChoice {
    Family(SojournFamily),
    Auto,
}

impl std::str::FromStr for SojournChoice {
    type Err = HhsmmError;
    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            Ok(SojournChoice::Auto)
        } else {
            s.parse().map(SojournChoice::Family)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitOptions {
    pub emission: EmissionChoice,
    pub sojourn: SojournChoice,
    /// Per-state sojourn bounds; defaults to `ceil(1.2 * longest sequence)`.
    pub m: Option<Vec<usize>>,
    /// Semi-Markov flags; by default every state except an absorbing final
    /// state of a left-to-right model.
    pub semi: Option<Vec<bool>>,
}

impl Default for InitOptions {
    fn default() -> Self {
        Self {
            emission: EmissionChoice::MixMvn,
            sojourn: SojournChoice::Family(SojournFamily::Gamma),
            m: None,
            semi: None,
        }
    }
}

fn mixmvn_from_labels(x: &[Vec<f64>], clus: &ClusterResult) -> Result<MixMvnParams> {
    let p = x[0].len();
    let j = clus.nstate;
    let moments = |idx: &[usize]| -> (Vec<f64>, Vec<Vec<f64>>) {
        let n = idx.len() as f64;
        let mut mean = vec![0.0; p];
        for &t in idx {
            for c in 0..p {
                mean[c] += x[t][c] / n;
            }
        }
        let mut cov = vec![vec![0.0; p]; p];
        for &t in idx {
            for a in 0..p {
                for b in 0..p {
                    cov[a][b] += (x[t][a] - mean[a]) * (x[t][b] - mean[b]) / n;
                }
            }
        }
        (mean, cov)
    };
    let spd = |cov: Vec<Vec<f64>>| -> Result<Vec<Vec<f64>>> {
        let (m, _) = cholesky_with_jitter(&to_dmatrix(&cov), 1e-8)?;
        Ok(from_dmatrix(&m))
    };
    let mut out = MixMvnParams { k: clus.nmix.clone(), lambda: vec![], mu: vec![], sigma: vec![] };
    for s in 0..j {
        let state_rows: Vec<usize> = (0..x.len()).filter(|&t| clus.states[t] == s).collect();
        let (_, pooled) = moments(&state_rows);
        let (mut lam, mut mu, mut sig) = (vec![], vec![], vec![]);
        for k in 0..clus.nmix[s] {
            let idx: Vec<usize> = state_rows.iter().copied().filter(|&t| clus.components[t] == k).collect();
            if idx.is_empty() {
                return invalid(format!("component {} of state {} has no rows", k + 1, s + 1));
            }
            let (m, c) = moments(&idx);
            lam.push(idx.len() as f64 / state_rows.len() as f64);
            mu.push(m);
            sig.push(spd(if idx.len() > p { c } else { pooled.clone() })?);
        }
        out.lambda.push(lam);
        out.mu.push(mu);
        out.sigma.push(sig);
    }
    Ok(out)
}

fn mixlm_from_labels(x: &[Vec<f64>], clus: &ClusterResult) -> Result<MixLmParams> {
    let resp = clus.resp_ind.clone().ok_or_else(|| HhsmmError::Invalid("mixlm needs resp_ind".into()))?;
    let (ys, xs): (Vec<Vec<f64>>, Vec<Vec<f64>>) =
        x.iter().map(|r| split_row(r, &resp)).collect::<Result<Vec<_>>>()?.into_iter().unzip();
    let mut out = MixLmParams {
        resp_ind: resp,
        k: clus.nmix.clone(),
        mix_p: vec![],
        intercept: vec![],
        coefficient: vec![],
        csigma: vec![],
    };
    for s in 0..clus.nstate {
        let n_state = clus.states.iter().filter(|&&l| l == s).count() as f64;
        let (mut p, mut ic, mut co, mut cs) = (vec![], vec![], vec![], vec![]);
        for k in 0..clus.nmix[s] {
            let w: Vec<f64> = (0..x.len())
                .map(|t| if clus.states[t] == s && clus.components[t] == k { 1.0 } else { 0.0 })
                .collect();
            let fit = weighted_linear_fit(&ys, &xs, &w, s)?;
            p.push(w.iter().sum::<f64>() / n_state);
            ic.push(fit.intercept);
            co.push(fit.coefficient);
            cs.push(fit.csigma);
        }
        out.mix_p.push(p);
        out.intercept.push(ic);
        out.coefficient.push(co);
        out.csigma.push(cs);
    }
    Ok(out)
}

fn pair_with_floor(durations: &[f64], family: SojournFamily) -> Result<(f64, f64)> {
    let fam = if family == SojournFamily::Nonparametric { SojournFamily::Gamma } else { family };
    match fit_sojourn_moments(durations, &vec![1.0; durations.len()], fam) {
        Err(HhsmmError::ZeroVariance) | Err(HhsmmError::Invalid(_)) if !durations.is_empty() => {
            // Identical durations: fall back to a variance equal to the mean.
            let m = durations.iter().sum::<f64>() / durations.len() as f64;
            let a = m.sqrt().min(m / 2.0);
            log::warn!("sojourn durations have no spread; assuming variance {}", a * a);
            fit_sojourn_moments(&[m - a, m + a], &[1.0, 1.0], fam)
        }
        other => other,
    }
}

/// Model parameters from an initial clustering of `train`.
pub fn initialize_model(clus: &ClusterResult, train: &SequenceSet, opts: &InitOptions) -> Result<ModelSpec> {
    let j = clus.nstate;
    if train.n != clus.n {
        return invalid("clustering was computed on different data");
    }
    let data = impute_initial(train)?;
    let x = &data.x;
    let max_len = *data.n.iter().max().unwrap();
    let m = opts.m.clone().unwrap_or_else(|| vec![(1.2 * max_len as f64).ceil() as usize; j]);
    let absorbing_last = clus.ltr;
    let semi = opts
        .semi
        .clone()
        .unwrap_or_else(|| (0..j).map(|s| !(absorbing_last && s + 1 == j) && j > 1).collect());
    if m.len() != j || semi.len() != j {
        return invalid(format!("M and semi need {j} entries"));
    }
    let onehot: Vec<Vec<f64>> =
        clus.states.iter().map(|&s| (0..j).map(|k| if k == s { 1.0 } else { 0.0 }).collect()).collect();
    let emission = match &opts.emission {
        EmissionChoice::MixMvn => Emission::MixMvn(mixmvn_from_labels(x, clus)?),
        EmissionChoice::Spline { k, lambda } => Emission::Spline(SplineParams::initial(x, &onehot, *k, *lambda)?),
        EmissionChoice::MixLm => Emission::MixLm(mixlm_from_labels(x, clus)?),
        EmissionChoice::AddReg { k, lambda } => {
            let resp = clus.resp_ind.clone().ok_or_else(|| HhsmmError::Invalid("addreg needs resp_ind".into()))?;
            Emission::AddReg(AddRegParams::initial(x, &onehot, resp, *k, *lambda)?)
        }
    };
    let semi_idx: Vec<usize> = (0..j).filter(|&s| semi[s]).collect();
    for &s in &semi_idx {
        if clus.durations[s].is_empty() {
            return invalid(format!("no sojourn durations observed for state {}", s + 1));
        }
    }
    let sojourn = if semi_idx.is_empty() {
        None
    } else {
        let family = match opts.sojourn {
            SojournChoice::Family(f) => f,
            SojournChoice::Auto => {
                let pools: Vec<Vec<f64>> = semi_idx.iter().map(|&s| clus.durations[s].clone()).collect();
                select_sojourn_auto(&pools)?
            }
        };
        let mut pairs = vec![(1.0, 1.0); j];
        for &s in &semi_idx {
            pairs[s] = pair_with_floor(&clus.durations[s], family)?;
        }
        Some(if family == SojournFamily::Nonparametric {
            let d = (0..j)
                .map(|s| if semi[s] { discretize(SojournFamily::Gamma, pairs[s].0, pairs[s].1, m[s]) } else { Ok(vec![1.0]) })
                .collect::<Result<Vec<_>>>()?;
            SojournSpec::Nonparametric { d }
        } else {
            SojournSpec::from_pairs(family, &pairs)?
        })
    };
    let off = data.offsets();
    let (init, transition) = if clus.ltr {
        let mut init = vec![0.0; j];
        init[0] = 1.0;
        let mut trans = vec![vec![0.0; j]; j];
        for i in 0..j {
            if i + 1 == j {
                trans[i][i] = 1.0;
                continue;
            }
            for k in i + 1..j {
                trans[i][k] = if k == i + 1 { 0.85 } else { 0.05 };
            }
            let s: f64 = trans[i].iter().sum();
            trans[i].iter_mut().for_each(|v| *v /= s);
            if !semi[i] {
                let pool = &clus.durations[i];
                let mean = if pool.is_empty() { 1.0 } else { pool.iter().sum::<f64>() / pool.len() as f64 };
                let stay = 1.0 - 1.0 / mean.max(1.0);
                trans[i].iter_mut().for_each(|v| *v *= 1.0 - stay);
                trans[i][i] = stay;
            }
        }
        (init, trans)
    } else {
        let mut init = vec![0.0; j];
        for i in 0..data.n_seq() {
            init[clus.states[off[i]]] += 1.0 / data.n_seq() as f64;
        }
        let mut counts = vec![vec![0.01; j]; j];
        for i in 0..data.n_seq() {
            for t in off[i] + 1..off[i + 1] {
                let (a, b) = (clus.states[t - 1], clus.states[t]);
                if a != b || !semi[a] {
                    counts[a][b] += 1.0;
                }
            }
        }
        for (i, row) in counts.iter_mut().enumerate() {
            if semi[i] {
                row[i] = 0.0;
            }
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
        (init, counts)
    };
    let spec = ModelSpec { j, init, transition, semi, m, sojourn, emission };
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs() -> SequenceSet {
        let x: Vec<Vec<f64>> = (0..40)
            .map(|i| {
                let level = (i % 20) / 5;
                vec![10.0 * level as f64 + 0.1 * (i % 3) as f64]
            })
            .collect();
        SequenceSet::new(x, vec![20, 20]).unwrap()
    }

    #[test]
    fn ltr_initialization_pattern() {
        let data = blobs();
        let opts = ClusterOptions { nstate: 5, ltr: true, final_absorb: true, ..Default::default() };
        let clus = initial_cluster(&data, &opts).unwrap();
        assert_eq!(clus.states[19], 4);
        assert_eq!(clus.states[39], 4);
        let spec = initialize_model(&clus, &data, &InitOptions::default()).unwrap();
        assert_eq!(spec.init, vec![1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(spec.transition[0], vec![0.0, 0.85, 0.05, 0.05, 0.05]);
        assert_eq!(spec.transition[4], vec![0.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(!spec.semi[4]);
    }

    #[test]
    fn single_state_takes_every_row() {
        let data = blobs();
        let clus = initial_cluster(&data, &ClusterOptions { nstate: 1, ..Default::default() }).unwrap();
        assert!(clus.states.iter().all(|&s| s == 0));
    }

    #[test]
    fn cluster_result_round_trips() {
        let data = blobs();
        let clus = initial_cluster(&data, &ClusterOptions { nstate: 2, ..Default::default() }).unwrap();
        let back: ClusterResult = serde_json::from_str(&crate::json::to_string(&clus).unwrap()).unwrap();
        assert_eq!(back, clus);
    }

    #[test]
    fn nmix_parsing() {
        assert_eq!("2,2,3".parse::<Nmix>().unwrap(), Nmix::Fixed(vec![2, 2, 3]));
        assert_eq!("auto".parse::<Nmix>().unwrap(), Nmix::Auto);
        assert!("x".parse::<Nmix>().is_err());
    }
}
