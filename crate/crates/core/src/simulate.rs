//! Sampling sequences from a model.
//!
//! Sequence `i` draws from `ChaCha8Rng::seed_from_u64(seed)` switched to
//! stream `i`, so sequences are independent of each other and of the
//! number of threads.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::SequenceSet;
use crate::emission::{CovariateSource, EmissionModel, SampleContext};
use crate::error::{invalid, Result};
use crate::model::ModelSpec;

#[derive(Debug, Clone, Default)]
pub struct SimulateOptions {
    /// Feed each emitted response back as the next covariate.
    pub autoregress: bool,
    pub covariate: Option<CovariateSource>,
}

/// Random generator for sequence `index` under `seed`.
pub fn sequence_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

pub(crate) fn draw_index(p: &[f64], rng: &mut dyn RngCore) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, v) in p.iter().enumerate() {
        acc += v;
        if u < acc {
            return i;
        }
    }
    p.iter().rposition(|v| *v > 0.0).unwrap_or(p.len() - 1)
}

/// Simulate sequences of the given lengths. The final sojourn of each
/// sequence is cut at the sequence end.
pub fn simulate<E: EmissionModel>(
    spec: &ModelSpec<E>,
    nsim: &[usize],
    seed: u64,
    opts: &SimulateOptions,
) -> Result<SequenceSet> {
    spec.validate()?;
    if nsim.is_empty() || nsim.contains(&0) {
        return invalid("sequence lengths must be positive");
    }
    let tables = spec.sojourn_tables()?;
    let parts: Vec<(Vec<Vec<f64>>, Vec<usize>)> = nsim
        .par_iter()
        .enumerate()
        .map(|(i, &n)| {
            let mut rng = sequence_rng(seed, i);
            let mut ctx = SampleContext {
                previous: None,
                autoregress: opts.autoregress,
                covariate: opts.covariate.clone(),
            };
            let mut x = Vec::with_capacity(n);
            let mut s = Vec::with_capacity(n);
            let mut state = draw_index(&spec.init, &mut rng);
            while x.len() < n {
                let run = match &tables[state] {
                    Some(t) => (draw_index(&t.d, &mut rng) + 1).min(n - x.len()),
                    None => 1,
                };
                for _ in 0..run {
                    let row = spec.emission.sample(state, &ctx, &mut rng)?;
                    if opts.autoregress {
                        ctx.previous = Some(row.clone());
                    }
                    x.push(row);
                    s.push(state);
                }
                state = draw_index(&spec.transition[state], &mut rng);
            }
            Ok((x, s))
        })
        .collect::<Result<_>>()?;
    let mut x = Vec::new();
    let mut s = Vec::new();
    for (px, ps) in parts {
        x.extend(px);
        s.extend(ps);
    }
    SequenceSet::new(x, nsim.to_vec())?.with_states(s)
}
