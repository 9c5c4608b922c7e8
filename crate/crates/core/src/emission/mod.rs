//! Emission families.

use std::fmt;
use std::sync::Arc;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::Result;

pub mod mixmvn;
pub mod regress;
pub mod spline;

pub use mixmvn::MixMvnParams;
pub use regress::{AddRegParams, MixLmParams};
pub use spline::SplineParams;

/// Covariate source used when sampling regression emissions.
#[derive(Clone)]
pub enum CovariateSource {
    /// Multivariate normal with the given mean and covariance.
    Normal { mean: Vec<f64>, cov: Vec<Vec<f64>> },
    Fixed(Vec<f64>),
    Custom(Arc<dyn Fn(&mut dyn RngCore) -> Vec<f64> + Send + Sync>),
}

impl fmt::Debug for CovariateSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CovariateSource::Normal { mean, cov } => {
                f.debug_struct("Normal").field("mean", mean).field("cov", cov).finish()
            }
            CovariateSource::Fixed(v) => f.debug_tuple("Fixed").field(v).finish(),
            CovariateSource::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// Per-draw context handed to samplers.
#[derive(Debug, Clone, Default)]
pub struct SampleContext {
    /// Previously emitted response, used as covariate when auto-regressing.
    pub previous: Option<Vec<f64>>,
    pub autoregress: bool,
    pub covariate: Option<CovariateSource>,
}

/// Contract every emission family implements.
pub trait EmissionModel: Clone + fmt::Debug + Send + Sync {
    fn family(&self) -> &'static str;

    fn n_states(&self) -> usize;

    /// Log of `f_j(row)`.
    fn log_density(&self, row: &[f64], j: usize) -> Result<f64>;

    fn density(&self, row: &[f64], j: usize) -> Result<f64> {
        Ok(self.log_density(row, j)?.exp())
    }

    /// `out[t][j] = log f_j(rows[t])`.
    fn log_density_matrix(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        rows.iter()
            .map(|r| (0..self.n_states()).map(|j| self.log_density(r, j)).collect())
            .collect()
    }

    /// Weighted re-estimation from `weights[t][j]`; the current value acts
    /// as the starting point and carries the family's control settings.
    fn mstep(&self, x: &[Vec<f64>], weights: &[Vec<f64>]) -> Result<Self>;

    fn sample(&self, j: usize, ctx: &SampleContext, rng: &mut dyn RngCore) -> Result<Vec<f64>>;

    fn n_free_params(&self) -> usize;

    /// Invariant violations, as human-readable messages.
    fn violations(&self) -> Vec<String> {
        Vec::new()
    }
}

/// The built-in families, tagged by `family` in model JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family")]
pub enum Emission {
    #[serde(rename = "mixmvnorm")]
    MixMvn(MixMvnParams),
    #[serde(rename = "nonpar")]
    Spline(SplineParams),
    #[serde(rename = "mixlm")]
    MixLm(MixLmParams),
    #[serde(rename = "addreg")]
    AddReg(AddRegParams),
}

macro_rules! dispatch {
    ($self:ident, $p:ident => $e:expr) => {
        match $self {
            Emission::MixMvn($p) => $e,
            Emission::Spline($p) => $e,
            Emission::MixLm($p) => $e,
            Emission::AddReg($p) => $e,
        }
    };
}

impl EmissionModel for Emission {
    fn family(&self) -> &'static str {
        dispatch!(self, p => p.family())
    }
    fn n_states(&self) -> usize {
        dispatch!(self, p => p.n_states())
    }
    fn log_density(&self, row: &[f64], j: usize) -> Result<f64> {
        dispatch!(self, p => p.log_density(row, j))
    }
    fn log_density_matrix(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        dispatch!(self, p => p.log_density_matrix(rows))
    }
    fn mstep(&self, x: &[Vec<f64>], weights: &[Vec<f64>]) -> Result<Self> {
        Ok(match self {
            Emission::MixMvn(p) => Emission::MixMvn(p.mstep(x, weights)?),
            Emission::Spline(p) => Emission::Spline(p.mstep(x, weights)?),
            Emission::MixLm(p) => Emission::MixLm(p.mstep(x, weights)?),
            Emission::AddReg(p) => Emission::AddReg(p.mstep(x, weights)?),
        })
    }
    fn sample(&self, j: usize, ctx: &SampleContext, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        dispatch!(self, p => p.sample(j, ctx, rng))
    }
    fn n_free_params(&self) -> usize {
        dispatch!(self, p => p.n_free_params())
    }
    fn violations(&self) -> Vec<String> {
        dispatch!(self, p => p.violations())
    }
}

pub(crate) fn check_weights(x: &[Vec<f64>], weights: &[Vec<f64>], j: usize) -> Result<()> {
    use crate::error::invalid;
    if x.len() != weights.len() {
        return invalid(format!("{} weight rows for {} observations", weights.len(), x.len()));
    }
    if weights.iter().any(|w| w.len() != j) {
        return invalid(format!("weight rows must have {j} columns"));
    }
    for s in 0..j {
        let tot: f64 = weights.iter().map(|w| w[s]).sum();
        if !(tot > 0.0) || weights.iter().any(|w| !(w[s] >= 0.0)) {
            return invalid(format!("state {} has no positive weight", s + 1));
        }
    }
    Ok(())
}
