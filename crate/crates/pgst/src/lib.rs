//! Graph scattering transforms with on-the-fly energy-ratio pruning.
//!
//! The crate provides:
//!
//! - [`graph_core`]: sparse symmetric shift operators, eigendecomposition,
//!   the graph Fourier transform, and spectral/polynomial graph filtering.
//! - [`filter_banks`]: diffusion, monic cubic, and tight Hann wavelet banks
//!   with numerically certified frame bounds and integral Lipschitz constants.
//! - [`scattering`]: the full scattering tree, the pruned variant driven by
//!   the per-branch energy-ratio rule, top-K pruning, and consensus-tree
//!   fitting over training sets.
//! - [`perturbation`]: signal and structural perturbation generators plus
//!   evaluators for the stability and sensitivity bounds.
//! - [`data_io`]: edge-list/CSV ingestion, synthetic graph generators, and
//!   CSV/JSON/DOT serialization of trees and feature maps.
//! - [`cli`]: the command implementations behind the `pgst` binary.

pub mod cli;
pub mod data_io;
pub mod filter_banks;
pub mod graph_core;
pub mod perturbation;
pub mod scattering;

pub use filter_banks::{FilterBank, FilterKernel, WaveletFamily};
pub use graph_core::{FilterBackend, GraphShift, GraphSignal, ShiftKind, Spectrum};
pub use scattering::{FeatureMap, Path, ScatteringNode, ScatteringTree};
