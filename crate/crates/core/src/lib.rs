//! Hidden hybrid Markov/semi-Markov models.
//!
//! Each hidden state is either Markovian (geometric sojourn, self-transitions
//! allowed) or semi-Markovian (explicit sojourn distribution, no
//! self-transition). The crate provides simulation, initialization, EM
//! estimation, decoding, future-state prediction and residual useful
//! lifetime estimation with Gaussian-mixture, B-spline and regression
//! emissions.

pub mod data;
pub mod decode;
pub mod emission;
pub mod error;
pub mod inference;
pub mod init;
pub mod json;
mod linalg;
pub mod model;
pub mod simulate;
pub mod sojourn;

pub use data::{hhsmmdata, homogeneity, lagdata, load_sequences, store_sequences, train_test_split, SequenceSet};
pub use decode::{
    estimate_rul, predict_states, smoothing_decode, viterbi, Confidence, DecodeMethod, RulEstimate,
};
pub use emission::{AddRegParams, Emission, EmissionModel, MixLmParams, MixMvnParams, SplineParams};
pub use error::{HhsmmError, Result};
pub use inference::{estep, hhsmmfit, mstep_core, score, FitControl, FitResult};
pub use model::{load_model, store_model, validate_model, ModelSpec};
pub use simulate::{simulate, SimulateOptions};
pub use sojourn::{SojournFamily, SojournSpec};
