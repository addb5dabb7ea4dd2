//! Structured turbo compressed sensing (STCS) for downlink massive MIMO-OFDM
//! channel estimation.
//!
//! The estimator alternates between an LMMSE module over a partial
//! orthogonal sensing operator ([`engine`]) and a structured denoiser that
//! exploits clustered sparsity of the angle-domain channel, either through a
//! common frequency support ([`fs`]) or per-delay-tap supports gated by tap
//! activity ([`ds`]). The plain i.i.d. Bernoulli-Gaussian denoiser of the
//! original turbo-CS algorithm lives in [`priors`].
//!
//! Supporting pieces: synthetic channel generation ([`channel`]), file
//! formats ([`io`]), state evolution ([`se`]), EM hyperparameter learning
//! ([`em`]) and the experiment harness behind the `stcs` binary
//! ([`harness`]).

pub mod channel;
pub mod ds;
pub mod em;
pub mod engine;
pub mod error;
pub mod fs;
pub mod harness;
pub mod io;
pub mod linops;
pub mod matrix;
pub mod priors;
pub mod rng;
pub mod se;

pub use error::{Error, Result};
pub use matrix::{ComplexMatrix, C64};
