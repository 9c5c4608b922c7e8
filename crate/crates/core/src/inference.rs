//! Hybrid forward-backward recursions, the E-step, the M-step for the
//! state process and the EM driver.
//!
//! Conventions for one sequence of length `tau` (all quantities are
//! conditional on the observations seen so far and scaled by the per-step
//! normalizers `N_t`):
//!
//! * `incoming[t][j]`: probability of entering `j` at `t` from another run
//!   (`t >= 1`); at `t = 0` the initial distribution plays this role.
//! * `exit[t][j]`: for a semi-Markov state, probability that a sojourn in
//!   `j` ends at `t`; for a Markov state, probability of being in `j` at `t`.
//!   At the last step every state uses occupancy (right censoring).
//! * `leave[t][j]`: backward factor after leaving `j` at `t`.
//! * `entry[t][j]`: backward factor for a run of `j` starting at `t`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::SequenceSet;
use crate::emission::EmissionModel;
use crate::error::{invalid, HhsmmError, Result};
use crate::model::{ModelSpec, SojournTable};
use crate::sojourn::SojournSpec;

/// Model quantities needed by the recursions.
pub(crate) struct Prepared {
    pub j: usize,
    pub init: Vec<f64>,
    pub trans: Vec<Vec<f64>>,
    pub tables: Vec<Option<SojournTable>>,
}

impl Prepared {
    pub fn new<E: EmissionModel>(spec: &ModelSpec<E>) -> Result<Self> {
        let mut trans = spec.transition.clone();
        for (i, row) in trans.iter_mut().enumerate() {
            if spec.semi[i] {
                row[i] = 0.0;
            }
        }
        Ok(Self { j: spec.j, init: spec.init.clone(), trans, tables: spec.sojourn_tables()? })
    }
}

/// Output of the forward recursion for one sequence.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// `P(S_t = j | x_0..x_t)`.
    pub filtered: Vec<Vec<f64>>,
    pub exit: Vec<Vec<f64>>,
    pub incoming: Vec<Vec<f64>>,
    /// Emission densities divided by `N_t` (after the per-step shift).
    pub scaled: Vec<Vec<f64>>,
    /// Normalizers of the shifted densities; `log N_t + shift_t` is the
    /// log predictive density of `x_t`.
    pub norm: Vec<f64>,
    pub shift: Vec<f64>,
    pub loglik: f64,
}

pub(crate) fn forward_core(logf: &[Vec<f64>], prep: &Prepared) -> Result<ForwardPass> {
    let tau = logf.len();
    let j = prep.j;
    if tau == 0 {
        return invalid("empty sequence");
    }
    let mut filtered = vec![vec![0.0; j]; tau];
    let mut exit = vec![vec![0.0; j]; tau];
    let mut incoming = vec![vec![0.0; j]; tau];
    let mut scaled = vec![vec![0.0; j]; tau];
    let mut norm = vec![0.0; tau];
    let mut shift = vec![0.0; tau];
    let mut loglik = 0.0;
    let mut occ = vec![0.0; j];
    let mut ext = vec![0.0; j];
    for t in 0..tau {
        let c = logf[t].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !c.is_finite() {
            return Err(HhsmmError::Underflow { t });
        }
        shift[t] = c;
        let g: Vec<f64> = logf[t].iter().map(|l| (l - c).exp()).collect();
        for s in 0..j {
            match &prep.tables[s] {
                Some(tab) => {
                    let (mut o, mut e, mut prod) = (0.0, 0.0, 1.0);
                    for u in 1..=(t + 1).min(tab.d.len()) {
                        let start = t + 1 - u;
                        if u >= 2 {
                            prod *= scaled[start][s];
                            if prod == 0.0 {
                                break;
                            }
                        }
                        let enter = if start == 0 { prep.init[s] } else { incoming[start][s] };
                        o += prod * tab.surv[u - 1] * enter;
                        e += prod * tab.d[u - 1] * enter;
                    }
                    occ[s] = g[s] * o;
                    ext[s] = g[s] * e;
                }
                None => {
                    let enter = if t == 0 { prep.init[s] } else { incoming[t][s] };
                    occ[s] = g[s] * enter;
                    ext[s] = occ[s];
                }
            }
        }
        let n: f64 = occ.iter().sum();
        if !(n > 0.0) || !n.is_finite() {
            return Err(HhsmmError::Underflow { t });
        }
        norm[t] = n;
        loglik += n.ln() + c;
        for s in 0..j {
            scaled[t][s] = g[s] / n;
            filtered[t][s] = occ[s] / n;
            exit[t][s] = if t + 1 == tau { occ[s] / n } else { ext[s] / n };
        }
        if t + 1 < tau {
            for k in 0..j {
                incoming[t + 1][k] = (0..j).map(|i| exit[t][i] * prep.trans[i][k]).sum();
            }
        }
    }
    Ok(ForwardPass { filtered, exit, incoming, scaled, norm, shift, loglik })
}

/// Posterior quantities for one sequence.
#[derive(Debug, Clone)]
pub struct SequenceStats {
    pub loglik: f64,
    /// `P(S_t = j | x)`.
    pub smoothed: Vec<Vec<f64>>,
    /// For semi-Markov states, `P(sojourn in j ends at t | x)`.
    pub exit_post: Vec<Vec<f64>>,
    /// Expected transition counts `sum_t P(leave i at t, enter k at t+1 | x)`.
    pub transitions: Vec<Vec<f64>>,
    /// Expected sojourn-length counts per semi-Markov state, censored final
    /// runs spread over the lengths they are compatible with.
    pub eta: Vec<Vec<f64>>,
}

pub(crate) fn backward_core(fw: &ForwardPass, prep: &Prepared) -> Result<SequenceStats> {
    let tau = fw.scaled.len();
    let j = prep.j;
    let mut leave = vec![vec![0.0; j]; tau];
    let mut entry = vec![vec![0.0; j]; tau];
    for t in (0..tau).rev() {
        for i in 0..j {
            leave[t][i] = if t + 1 == tau {
                1.0
            } else {
                (0..j).map(|k| prep.trans[i][k] * entry[t + 1][k]).sum()
            };
        }
        for k in 0..j {
            entry[t][k] = match &prep.tables[k] {
                Some(tab) => {
                    let (mut b, mut prod) = (0.0, 1.0);
                    for u in 1..=(tau - t).min(tab.d.len()) {
                        let end = t + u - 1;
                        prod *= fw.scaled[end][k];
                        if prod == 0.0 {
                            break;
                        }
                        b += prod * if end + 1 < tau { tab.d[u - 1] * leave[end][k] } else { tab.surv[u - 1] };
                    }
                    b
                }
                None => fw.scaled[t][k] * leave[t][k],
            };
        }
    }
    let mut smoothed = vec![vec![0.0; j]; tau];
    let mut exit_post = vec![vec![0.0; j]; tau];
    for s in 0..j {
        if prep.tables[s].is_some() {
            smoothed[tau - 1][s] = fw.filtered[tau - 1][s];
            exit_post[tau - 1][s] = fw.filtered[tau - 1][s];
            for t in (0..tau - 1).rev() {
                exit_post[t][s] = fw.exit[t][s] * leave[t][s];
                smoothed[t][s] =
                    exit_post[t][s] + smoothed[t + 1][s] - fw.incoming[t + 1][s] * entry[t + 1][s];
            }
        } else {
            for t in 0..tau {
                smoothed[t][s] = fw.filtered[t][s] * leave[t][s];
            }
        }
    }
    for (t, row) in smoothed.iter_mut().enumerate() {
        for v in row.iter_mut() {
            if *v < -1e-10 {
                return Err(HhsmmError::Numeric(format!("negative smoothed probability {v} at t = {t}")));
            }
            *v = v.clamp(0.0, 1.0);
        }
    }
    let mut transitions = vec![vec![0.0; j]; j];
    for t in 0..tau.saturating_sub(1) {
        for i in 0..j {
            let x = fw.exit[t][i];
            if x == 0.0 {
                continue;
            }
            for k in 0..j {
                transitions[i][k] += x * prep.trans[i][k] * entry[t + 1][k];
            }
        }
    }
    let mut eta: Vec<Vec<f64>> = prep
        .tables
        .iter()
        .map(|t| t.as_ref().map_or_else(Vec::new, |tab| vec![0.0; tab.d.len()]))
        .collect();
    for s in 0..j {
        let Some(tab) = &prep.tables[s] else { continue };
        let m = tab.d.len();
        // censored[l-1]: posterior mass of a final run observed for l steps.
        let mut censored = vec![0.0; m];
        for start in 0..tau {
            let enter = if start == 0 { prep.init[s] } else { fw.incoming[start][s] };
            if enter == 0.0 {
                continue;
            }
            let mut prod = 1.0;
            for u in 1..=(tau - start).min(m) {
                let end = start + u - 1;
                prod *= fw.scaled[end][s];
                if prod == 0.0 {
                    break;
                }
                if end + 1 < tau {
                    eta[s][u - 1] += enter * prod * tab.d[u - 1] * leave[end][s];
                } else {
                    censored[u - 1] += enter * prod;
                }
            }
        }
        let mut acc = 0.0;
        for v in 0..m {
            acc += censored[v];
            eta[s][v] += acc * tab.d[v];
        }
    }
    Ok(SequenceStats { loglik: fw.loglik, smoothed, exit_post, transitions, eta })
}

/// Forward pass of one sequence.
pub fn forward<E: EmissionModel>(x: &[Vec<f64>], spec: &ModelSpec<E>) -> Result<ForwardPass> {
    let prep = Prepared::new(spec)?;
    forward_core(&spec.emission.log_density_matrix(x)?, &prep)
}

/// Forward and backward passes of one sequence.
pub fn forward_backward<E: EmissionModel>(x: &[Vec<f64>], spec: &ModelSpec<E>) -> Result<SequenceStats> {
    let prep = Prepared::new(spec)?;
    let fw = forward_core(&spec.emission.log_density_matrix(x)?, &prep)?;
    backward_core(&fw, &prep)
}

/// Aggregated E-step output.
#[derive(Debug, Clone)]
pub struct EStepCache {
    pub sequences: Vec<SequenceStats>,
    pub loglik: f64,
    /// Stacked smoothed probabilities, aligned with the data rows.
    pub weights: Vec<Vec<f64>>,
    pub transitions: Vec<Vec<f64>>,
    pub eta: Vec<Vec<f64>>,
    /// Mean over sequences of `P(S_0 = j | x)`.
    pub init: Vec<f64>,
}

/// Forward-backward on every sequence (in parallel) and aggregation in
/// sequence order.
pub fn estep<E: EmissionModel>(set: &SequenceSet, spec: &ModelSpec<E>) -> Result<EStepCache> {
    let prep = Prepared::new(spec)?;
    let off = set.offsets();
    let sequences: Vec<SequenceStats> = (0..set.n_seq())
        .into_par_iter()
        .map(|i| {
            let logf = spec.emission.log_density_matrix(&set.x[off[i]..off[i + 1]])?;
            let fw = forward_core(&logf, &prep).map_err(|e| match e {
                HhsmmError::Underflow { t } => {
                    HhsmmError::Numeric(format!("likelihood underflow in sequence {} at t = {t}", i + 1))
                }
                other => other,
            })?;
            backward_core(&fw, &prep)
        })
        .collect::<Result<_>>()?;
    let j = spec.j;
    let mut transitions = vec![vec![0.0; j]; j];
    let mut eta: Vec<Vec<f64>> = prep
        .tables
        .iter()
        .map(|t| t.as_ref().map_or_else(Vec::new, |tab| vec![0.0; tab.d.len()]))
        .collect();
    let mut init = vec![0.0; j];
    let mut weights = Vec::with_capacity(set.total_len());
    let mut loglik = 0.0;
    for st in &sequences {
        loglik += st.loglik;
        for i in 0..j {
            init[i] += st.smoothed[0][i] / sequences.len() as f64;
            for k in 0..j {
                transitions[i][k] += st.transitions[i][k];
            }
            for (a, b) in eta[i].iter_mut().zip(&st.eta[i]) {
                *a += b;
            }
        }
        weights.extend(st.smoothed.iter().cloned());
    }
    Ok(EStepCache { sequences, loglik, weights, transitions, eta, init })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MStepOptions {
    pub lock_init: bool,
    pub lock_transition: bool,
}

/// Update the initial distribution, transitions and sojourns. The emission
/// parameters are left unchanged.
pub fn mstep_core<E: EmissionModel>(cache: &EStepCache, spec: &ModelSpec<E>, opts: MStepOptions) -> Result<ModelSpec<E>> {
    let j = spec.j;
    let mut out = spec.clone();
    if !opts.lock_init {
        let s: f64 = cache.init.iter().sum();
        out.init = cache.init.iter().map(|v| v / s).collect();
    }
    if !opts.lock_transition {
        for i in 0..j {
            let mut row = cache.transitions[i].clone();
            if spec.semi[i] {
                row[i] = 0.0;
            }
            let total: f64 = row.iter().sum();
            if total > 1e-12 {
                out.transition[i] = row.iter().map(|v| v / total).collect();
            } else {
                // The state is never left in the data; keep its row.
                log::debug!("state {} has no expected exits; transition row kept", i + 1);
            }
            if spec.semi[i] {
                out.transition[i][i] = 0.0;
            }
        }
    }
    if let Some(soj) = &spec.sojourn {
        let mut next = soj.clone();
        for i in (0..j).filter(|&i| spec.semi[i]) {
            let counts = &cache.eta[i];
            let total: f64 = counts.iter().sum();
            if !(total > 0.0) {
                continue;
            }
            match &mut next {
                SojournSpec::Nonparametric { d } => {
                    d[i] = counts.iter().map(|c| c / total).collect();
                }
                other => {
                    let prev = other.pair(i).unwrap();
                    let upd = crate::sojourn::update_from_counts(other.family(), counts, prev);
                    other.set_pair(i, upd);
                }
            }
        }
        out.sojourn = Some(next);
    }
    Ok(out)
}

/// Complete M-step: state process plus the emission family's own update.
pub fn mstep<E: EmissionModel>(
    cache: &EStepCache,
    spec: &ModelSpec<E>,
    x: &[Vec<f64>],
    opts: MStepOptions,
) -> Result<ModelSpec<E>> {
    let mut out = mstep_core(cache, spec, opts)?;
    out.emission = spec.emission.mstep(x, &cache.weights)?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitControl {
    pub maxit: usize,
    /// Relative log-likelihood change below which iteration stops.
    pub tol: f64,
    pub lock_init: bool,
    pub lock_transition: bool,
    pub verbose: bool,
}

impl Default for FitControl {
    fn default() -> Self {
        Self { maxit: 100, tol: 1e-4, lock_init: false, lock_transition: false, verbose: false }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult<E = crate::emission::Emission> {
    #[serde(flatten)]
    pub model: ModelSpec<E>,
    pub loglik_trace: Vec<f64>,
    pub loglik: f64,
    #[serde(rename = "AIC")]
    pub aic: f64,
    #[serde(rename = "BIC")]
    pub bic: f64,
    /// Viterbi states of the training sequences (0-based, stacked).
    #[serde(skip)]
    pub states: Vec<usize>,
}

/// EM estimation. The trace holds the log-likelihood of every model
/// visited, starting with `init_model`.
pub fn hhsmmfit<E: EmissionModel>(set: &SequenceSet, init_model: &ModelSpec<E>, control: &FitControl) -> Result<FitResult<E>> {
    init_model.validate()?;
    set.check()?;
    let opts = MStepOptions { lock_init: control.lock_init, lock_transition: control.lock_transition };
    let mut model = init_model.clone();
    let mut cache = estep(set, &model)?;
    let mut trace = vec![cache.loglik];
    if control.verbose {
        log::info!("iteration 0: log-likelihood = {}", cache.loglik);
    }
    for it in 1..=control.maxit {
        let next = mstep(&cache, &model, &set.x, opts)?;
        let next_cache = estep(set, &next)?;
        if !next_cache.loglik.is_finite() {
            return Err(HhsmmError::Numeric(format!("log-likelihood diverged at iteration {it}")));
        }
        let prev = cache.loglik;
        model = next;
        cache = next_cache;
        trace.push(cache.loglik);
        if control.verbose {
            log::info!("iteration {it}: log-likelihood = {}", cache.loglik);
        }
        if ((cache.loglik - prev) / prev.abs().max(1e-300)).abs() < control.tol {
            break;
        }
    }
    let k = model.n_free_params(control.lock_init) as f64;
    let ll = cache.loglik;
    let off = set.offsets();
    let states: Vec<usize> = (0..set.n_seq())
        .into_par_iter()
        .map(|i| crate::decode::viterbi(&set.x[off[i]..off[i + 1]], &model).map(|v| v.states))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    Ok(FitResult {
        model,
        loglik_trace: trace,
        loglik: ll,
        aic: -2.0 * ll + 2.0 * k,
        bic: -2.0 * ll + k * (set.total_len() as f64).ln(),
        states,
    })
}

/// Per-sequence log-likelihoods of new data.
pub fn score<E: EmissionModel>(newdata: &SequenceSet, spec: &ModelSpec<E>) -> Result<Vec<f64>> {
    let prep = Prepared::new(spec)?;
    let off = newdata.offsets();
    (0..newdata.n_seq())
        .into_par_iter()
        .map(|i| {
            let logf = spec.emission.log_density_matrix(&newdata.x[off[i]..off[i + 1]])?;
            Ok(forward_core(&logf, &prep)?.loglik)
        })
        .collect()
}
