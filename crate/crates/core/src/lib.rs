//! Device-independent QKD built on non-local games.
//!
//! [`games`] evaluates classical and quantum winning probabilities on top of
//! the small dense matrices in [`qmath`]. [`entropy`] turns winning
//! probabilities into per-round entropy bounds, either affine or from
//! ingested point tables. [`keyrate`] computes finite and asymptotic key
//! lengths and optimizes them. [`protocol`] simulates the protocol end to end
//! with seeded devices.

pub mod qmath;
pub mod games;
pub mod entropy;
pub mod keyrate;
pub mod protocol;
