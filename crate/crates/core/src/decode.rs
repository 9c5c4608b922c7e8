//! State decoding, future-state prediction and residual useful lifetime.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::SequenceSet;
use crate::emission::EmissionModel;
use crate::error::{invalid, HhsmmError, Result};
use crate::inference::{backward_core, forward_core, Prepared};
use crate::model::ModelSpec;
use crate::sojourn::{geometric_pmf, sojourn_summary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMethod {
    Viterbi,
    Smoothing,
}

impl std::str::FromStr for DecodeMethod {
    type Err = HhsmmError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "viterbi" => Ok(Self::Viterbi),
            "smoothing" => Ok(Self::Smoothing),
            _ => invalid(format!("unknown decoding method '{s}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Confidence {
    Mean,
    Max,
}

impl std::str::FromStr for Confidence {
    type Err = HhsmmError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Self::Mean),
            "max" => Ok(Self::Max),
            _ => invalid(format!("unknown confidence method '{s}'")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ViterbiPath {
    pub states: Vec<usize>,
    /// Log joint probability of the best path and the observations.
    pub log_prob: f64,
    /// `log_scores[t][j]`: best log joint probability of `x_0..x_t` with
    /// the process in `j` at `t` (any remaining sojourn allowed).
    pub log_scores: Vec<Vec<f64>>,
}

fn ln(v: f64) -> f64 {
    if v > 0.0 {
        v.ln()
    } else {
        f64::NEG_INFINITY
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn viterbi_core(logf: &[Vec<f64>], prep: &Prepared) -> Result<ViterbiPath> {
    let tau = logf.len();
    let j = prep.j;
    if tau == 0 {
        return invalid("empty sequence");
    }
    let ln_init: Vec<f64> = prep.init.iter().map(|&p| ln(p)).collect();
    let ln_trans: Vec<Vec<f64>> = prep.trans.iter().map(|r| r.iter().map(|&p| ln(p)).collect()).collect();
    let ln_tab: Vec<Option<(Vec<f64>, Vec<f64>)>> = prep
        .tables
        .iter()
        .map(|t| {
            t.as_ref()
                .map(|tab| (tab.d.iter().map(|&p| ln(p)).collect(), tab.surv.iter().map(|&p| ln(p)).collect()))
        })
        .collect();
    let neg = f64::NEG_INFINITY;
    // leave[t][i]: best score of a run of i ending at t and then leaving.
    let mut leave = vec![vec![neg; j]; tau];
    let mut leave_len = vec![vec![1usize; j]; tau];
    // enter[s][k]: best score of entering k at s from another run.
    let mut enter = vec![vec![neg; j]; tau];
    let mut enter_from = vec![vec![0usize; j]; tau];
    let mut occ = vec![vec![neg; j]; tau];
    let mut occ_len = vec![vec![1usize; j]; tau];
    for t in 0..tau {
        if t > 0 {
            for k in 0..j {
                let mut best = neg;
                let mut arg = 0;
                for i in 0..j {
                    let v = leave[t - 1][i] + ln_trans[i][k];
                    if v > best {
                        best = v;
                        arg = i;
                    }
                }
                enter[t][k] = best;
                enter_from[t][k] = arg;
            }
        }
        for s in 0..j {
            match &ln_tab[s] {
                Some((ld, lsurv)) => {
                    let (mut best_exit, mut best_occ) = (neg, neg);
                    let (mut exit_u, mut occ_u) = (1, 1);
                    let mut emis = 0.0;
                    for u in 1..=(t + 1).min(ld.len()) {
                        let start = t + 1 - u;
                        emis += logf[start][s];
                        let base = emis + if start == 0 { ln_init[s] } else { enter[start][s] };
                        if base == neg {
                            continue;
                        }
                        if base + ld[u - 1] > best_exit {
                            best_exit = base + ld[u - 1];
                            exit_u = u;
                        }
                        if base + lsurv[u - 1] > best_occ {
                            best_occ = base + lsurv[u - 1];
                            occ_u = u;
                        }
                    }
                    leave[t][s] = best_exit;
                    leave_len[t][s] = exit_u;
                    occ[t][s] = best_occ;
                    occ_len[t][s] = occ_u;
                }
                None => {
                    let v = logf[t][s] + if t == 0 { ln_init[s] } else { enter[t][s] };
                    leave[t][s] = v;
                    occ[t][s] = v;
                }
            }
        }
    }
    let last = argmax(&occ[tau - 1]);
    let log_prob = occ[tau - 1][last];
    if log_prob == neg || log_prob.is_nan() {
        return Err(HhsmmError::Numeric("every state path has zero probability".into()));
    }
    let mut states = vec![0; tau];
    let mut t = tau - 1;
    let mut state = last;
    let mut final_run = true;
    loop {
        let u = if prep.tables[state].is_some() {
            if final_run {
                occ_len[t][state]
            } else {
                leave_len[t][state]
            }
        } else {
            1
        };
        let start = t + 1 - u;
        for v in &mut states[start..=t] {
            *v = state;
        }
        if start == 0 {
            break;
        }
        state = enter_from[start][state];
        t = start - 1;
        final_run = false;
    }
    Ok(ViterbiPath { states, log_prob, log_scores: occ })
}

/// Most probable state path of one sequence.
pub fn viterbi<E: EmissionModel>(x: &[Vec<f64>], spec: &ModelSpec<E>) -> Result<ViterbiPath> {
    let prep = Prepared::new(spec)?;
    viterbi_core(&spec.emission.log_density_matrix(x)?, &prep)
}

/// Per-time argmax of the smoothed probabilities together with them.
pub fn smoothing_probs<E: EmissionModel>(x: &[Vec<f64>], spec: &ModelSpec<E>) -> Result<Vec<Vec<f64>>> {
    let prep = Prepared::new(spec)?;
    let fw = forward_core(&spec.emission.log_density_matrix(x)?, &prep)?;
    Ok(backward_core(&fw, &prep)?.smoothed)
}

pub fn smoothing_decode<E: EmissionModel>(x: &[Vec<f64>], spec: &ModelSpec<E>) -> Result<Vec<usize>> {
    Ok(smoothing_probs(x, spec)?.iter().map(|r| argmax(r)).collect())
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// Decoded states and the per-time state probabilities used for prediction.
struct Decoded {
    states: Vec<usize>,
    probs: Vec<Vec<f64>>,
}

fn decode_one<E: EmissionModel>(x: &[Vec<f64>], spec: &ModelSpec<E>, method: DecodeMethod) -> Result<Decoded> {
    match method {
        DecodeMethod::Viterbi => {
            let v = viterbi(x, spec)?;
            let probs = v.log_scores.iter().map(|r| softmax(r)).collect();
            Ok(Decoded { states: v.states, probs })
        }
        DecodeMethod::Smoothing => {
            let probs = smoothing_probs(x, spec)?;
            Ok(Decoded { states: probs.iter().map(|r| argmax(r)).collect(), probs })
        }
    }
}

/// Propagate state probabilities `steps` times through the transition
/// matrix, returning the argmax after each step.
pub fn propagate(delta: &[f64], transition: &[Vec<f64>], steps: usize) -> Vec<usize> {
    let j = delta.len();
    let mut cur = delta.to_vec();
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let next: Vec<f64> = (0..j).map(|k| (0..j).map(|i| cur[i] * transition[i][k]).sum()).collect();
        out.push(argmax(&next));
        cur = next;
    }
    out
}

/// Decode every sequence and append `future` predicted states to each.
/// The result holds one state vector per sequence (0-based labels).
pub fn predict_states<E: EmissionModel>(
    spec: &ModelSpec<E>,
    newdata: &SequenceSet,
    method: DecodeMethod,
    future: usize,
) -> Result<Vec<Vec<usize>>> {
    let off = newdata.offsets();
    (0..newdata.n_seq())
        .into_par_iter()
        .map(|i| {
            let d = decode_one(&newdata.x[off[i]..off[i + 1]], spec, method)?;
            let mut states = d.states;
            if future > 0 {
                states.extend(propagate(d.probs.last().unwrap(), &spec.transition, future));
            }
            Ok(states)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RulEstimate {
    pub rul: f64,
    pub low: f64,
    pub up: f64,
}

/// Per-state duration centre and interval ends used by the RUL estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DurationBand {
    pub center: f64,
    pub low: f64,
    pub up: f64,
}

fn check_left_to_right<E: EmissionModel>(spec: &ModelSpec<E>) -> Result<()> {
    let j = spec.j;
    for i in 0..j {
        for k in 0..i {
            if spec.transition[i][k] > 1e-12 {
                return invalid(format!(
                    "RUL estimation needs a left-to-right model; transition[{}][{}] is positive",
                    i + 1,
                    k + 1
                ));
            }
        }
    }
    if spec.semi[j - 1] || (spec.transition[j - 1][j - 1] - 1.0).abs() > 1e-12 {
        return invalid("RUL estimation needs an absorbing Markovian final state");
    }
    Ok(())
}

/// Duration bands for every non-final state.
pub fn duration_bands<E: EmissionModel>(spec: &ModelSpec<E>, confidence: Confidence, level: f64) -> Result<Vec<DurationBand>> {
    if !(level > 0.0 && level < 1.0) {
        return invalid(format!("confidence level must lie in (0, 1), got {level}"));
    }
    let gamma = 1.0 - level;
    let z = Normal::new(0.0, 1.0).unwrap().inverse_cdf(1.0 - gamma / 2.0);
    let tables = spec.sojourn_tables()?;
    (0..spec.j - 1)
        .map(|s| {
            let d = match &tables[s] {
                Some(tab) => tab.d.clone(),
                None => {
                    let p = spec.transition[s][s];
                    if p >= 1.0 {
                        return invalid(format!("state {} is absorbing but not final", s + 1));
                    }
                    // Truncate where the geometric tail becomes negligible.
                    let m = if p <= 0.0 { 1 } else { ((1e-12f64).ln() / p.ln()).ceil().max(1.0) as usize };
                    let mut d = geometric_pmf(p, m)?;
                    let mass: f64 = d.iter().sum();
                    d.iter_mut().for_each(|v| *v /= mass);
                    d
                }
            };
            let sm = sojourn_summary(&d, gamma)?;
            Ok(match confidence {
                Confidence::Mean => {
                    DurationBand { center: sm.mean, low: sm.mean - z * sm.sd, up: sm.mean + z * sm.sd }
                }
                Confidence::Max => {
                    let mode = sm.mode as f64;
                    DurationBand { center: mode, low: (sm.lower as f64).min(mode), up: (sm.upper as f64).max(mode) }
                }
            })
        })
        .collect()
}

/// Transition matrix of the embedded jump chain: Markovian rows lose their
/// self-transition and are renormalized; the final absorbing row is kept.
fn jump_chain<E: EmissionModel>(spec: &ModelSpec<E>) -> Vec<Vec<f64>> {
    let j = spec.j;
    let mut p = spec.transition.clone();
    for i in 0..j - 1 {
        if !spec.semi[i] {
            p[i][i] = 0.0;
            let s: f64 = p[i].iter().sum();
            if s > 0.0 {
                for v in &mut p[i] {
                    *v /= s;
                }
            }
        }
    }
    p
}

/// RUL estimate from the per-time state probabilities of one sequence
/// (`probs[t][j]`, `t = 0..tau`).
pub fn rul_from_probs<E: EmissionModel>(
    probs: &[Vec<f64>],
    spec: &ModelSpec<E>,
    confidence: Confidence,
    level: f64,
) -> Result<RulEstimate> {
    check_left_to_right(spec)?;
    let bands = duration_bands(spec, confidence, level)?;
    rul_with_bands(probs, spec, &bands, &jump_chain(spec))
}

fn rul_with_bands<E: EmissionModel>(
    probs: &[Vec<f64>],
    spec: &ModelSpec<E>,
    bands: &[DurationBand],
    jump: &[Vec<f64>],
) -> Result<RulEstimate> {
    let j = spec.j;
    let Some(current) = probs.last() else {
        return invalid("empty sequence");
    };
    if argmax(current) == j - 1 {
        return Ok(RulEstimate { rul: 0.0, low: 0.0, up: 0.0 });
    }
    let tau = probs.len();
    // Elapsed-duration estimate, the running product of state probabilities
    // from the second time point on.
    let elapsed: Vec<f64> = (0..j - 1)
        .map(|s| (1..tau.min(spec.m[s])).map(|t| probs[t][s]).product())
        .collect();
    let (mut rul, mut low, mut up) = (0.0, 0.0, 0.0);
    for s in 0..j - 1 {
        rul += (bands[s].center - elapsed[s]) * current[s];
        low += (bands[s].low - elapsed[s]) * current[s];
        up += (bands[s].up - elapsed[s]) * current[s];
    }
    let mut total = RulEstimate { rul: rul.max(0.0), low: low.max(0.0), up: up.max(0.0) };
    let cap: usize = spec.m.iter().sum();
    let mut delta = current.clone();
    for _ in 0..cap {
        let next: Vec<f64> = (0..j).map(|k| (0..j).map(|i| delta[i] * jump[i][k]).sum()).collect();
        if argmax(&next) == j - 1 {
            break;
        }
        let (mut r, mut l, mut u) = (0.0, 0.0, 0.0);
        for s in 0..j - 1 {
            r += bands[s].center * next[s];
            l += bands[s].low * next[s];
            u += bands[s].up * next[s];
        }
        total.rul += r.max(0.0);
        total.low += l.max(0.0);
        total.up += u.max(0.0);
        delta = next;
    }
    Ok(total)
}

/// Decode every sequence and estimate its residual useful lifetime.
/// Returns the decoded states and one estimate per sequence.
pub fn estimate_rul<E: EmissionModel>(
    spec: &ModelSpec<E>,
    newdata: &SequenceSet,
    method: DecodeMethod,
    confidence: Confidence,
    level: f64,
) -> Result<Vec<(Vec<usize>, RulEstimate)>> {
    check_left_to_right(spec)?;
    let bands = duration_bands(spec, confidence, level)?;
    let jump = jump_chain(spec);
    let off = newdata.offsets();
    (0..newdata.n_seq())
        .into_par_iter()
        .map(|i| {
            let d = decode_one(&newdata.x[off[i]..off[i + 1]], spec, method)?;
            let est = rul_with_bands(&d.probs, spec, &bands, &jump)?;
            Ok((d.states, est))
        })
        .collect()
}
