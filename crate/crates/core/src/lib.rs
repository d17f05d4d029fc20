//! Training-free sampling from unnormalized densities by integrating the
//! probability-flow ODE of a linear stochastic interpolant, with the velocity
//! field estimated by inner Langevin chains on the denoising posterior.
//!
//! Also ships ULA / MALA / RMSprop-preconditioned ULA / HMC baselines, the
//! benchmark targets, and evaluation metrics (MMD, W2, NLL, mode coverage).

// `!(x > 0.0)` style checks deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod cloud;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod flow;
pub mod interpolant;
pub mod rng;
pub mod targets;

pub use cloud::ParticleCloud;
pub use error::{Error, Result};
