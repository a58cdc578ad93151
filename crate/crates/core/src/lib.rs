//! Orthogonal GAN laboratory.
//!
//! The discriminator is split as `D = T∘E`; in the simplest form the score is
//! `avg(E(x))`, leaving the remaining degrees of freedom of the code `E(x)` to
//! a Pearson-correlation reconstruction loss so that `E` becomes an encoder.

pub mod cli;
pub mod data;
pub mod eval;
pub mod gradsuite;
pub mod ndnum;
pub mod nets;
pub mod objectives;
pub mod ortho;
pub mod trainer;
