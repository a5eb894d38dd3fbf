//! Numerical laboratory relating contrastive losses to class-wise domain
//! discrepancy measures.
//!
//! The crate is organised bottom-up:
//!
//! | module | contents |
//! |--------|----------|
//! | [`synthgen`] | power-law textures, simulated lesions, sigmoid LUT, dataset writer |
//! | [`kernels`] | unit-norm embedding batches, linear Gram matrix, label kernel |
//! | [`losses`] | NT-Xent, supervised contrastive and cross-entropy with analytic gradients |
//! | [`discrepancy`] | CMMD, DCMMD, IMMD and HSIC estimators |
//! | [`theory`] | term-by-term decomposition of the contrastive loss, the IMMD bound, γ |
//! | [`trainer`] | perceptron feature map, SGD with cosine annealing, the three training strategies |
//!
//! All randomness flows from explicit 64-bit seeds through ChaCha generators,
//! so every artifact is reproducible bit-for-bit.

pub mod discrepancy;
pub mod error;
mod fft2;
pub mod kernels;
pub mod losses;
pub mod synthgen;
pub mod theory;
pub mod trainer;

pub use error::{Error, Result};
