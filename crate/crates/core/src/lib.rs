//! Long-jump lattice random walks and the fractional Laplacian.
//!
//! The crate is organised bottom-up:
//!
//! * [`kernel`]: the heavy-tailed jump law `K(k) ∝ |k|^{-(n+α)}` on `Z^n`
//!   with its truncation bookkeeping and sampling table.
//! * [`lattice_walk`]: master-equation evolution under the `τ = h^α`
//!   scaling, plus Monte Carlo walker ensembles and the exact
//!   characteristic function of the walk.
//! * [`fraclap_ops`]: the fractional Laplacian on periodic grids, either as a
//!   second-difference singular integral or as a Fourier multiplier, and the
//!   fractional heat semigroup.
//! * [`symbol`]: the Fourier symbol `J(ξ) = ∫ (1 - cos ξ·y) |y|^{-(n+α)} dy`
//!   and the constant `A(n, α) = J(e₁)`.
//! * [`harness`]: experiment configs and reports behind the `fraclap` CLI.
//!
//! Data-parallel loops go through rayon when the `parallel` feature is on
//! (the default) and fall back to plain iterators otherwise. Every parallel
//! loop writes disjoint outputs and all floating-point reductions run
//! sequentially, so results do not depend on the thread count.

// `!(x > 0.0)` style guards are used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fft;
pub mod fraclap_ops;
pub mod harness;
pub mod kernel;
pub mod lattice;
pub mod lattice_walk;
pub mod numerics;
pub mod par;
pub mod symbol;

pub use error::{Error, Result};
pub use fraclap_ops::{GridFunction, QuadratureConfig, SpectralMultiplier};
pub use kernel::{JumpSamplerTable, KernelSpec, MomentClass};
pub use lattice_walk::{LatticeDistribution, WalkEnsemble};
pub use symbol::{SymbolConfig, SymbolEvaluation};
