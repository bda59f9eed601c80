//! Spatial Bayesian general linear models for lattice and surface data.
//!
//! The crate provides the pieces of a spatial activation analysis pipeline:
//! finite-element assembly on triangular meshes, Gaussian Markov random field
//! priors derived from a Matern stochastic PDE, exact-Gaussian nested Laplace
//! inference over hyperparameters, joint posterior excursion sets, multi-
//! subject combination, a classical massive-univariate baseline, and a
//! synthetic phantom for end-to-end validation.

pub mod chol;
pub mod fem;
pub mod mesh;
pub mod sparse;
pub mod spde;
