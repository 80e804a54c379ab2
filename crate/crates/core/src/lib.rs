//! Library for semi-supervised variational training of latent-state
//! autoregressive dialog models, with brute-force verification oracles.

pub mod cli;
pub mod corpus;
pub mod evaluation;
pub mod model;
pub mod plot;
pub mod seq;
pub mod tape;
pub mod training;
pub mod variational;
pub mod verification;
pub mod vocab;
