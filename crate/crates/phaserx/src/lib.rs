//! Link-level OFDM simulation and a phase-equivariant deep neural receiver.
//!
//! The crate has three layers:
//!
//! * classical physical-layer machinery ([`phy`]): Gray-coded QAM
//!   constellations, resource grids with Kronecker pilot columns, fading
//!   channel models, least-squares channel estimation, maximal-ratio
//!   combining and max-log soft demapping;
//! * cyclic-group machinery ([`groups`]) and a small reverse-mode autodiff
//!   core ([`autodiff`]) that together implement the equivariant receiver
//!   ([`receiver`]): input lifting over the roots of unity, circular group
//!   convolutions inside ConvNeXt-style blocks, and an invariant averaging
//!   head producing bit LLRs;
//! * training ([`training`]) and evaluation ([`eval`]): AdamW with a step
//!   schedule, checkpointing, Monte Carlo BER sweeps against perfect-CSI and
//!   least-squares baselines, and CSV/SVG reporting.
//!
//! See the `examples/` directory for runnable entry points per capability,
//! and the `phaserx` binary for the batch CLI.

pub mod autodiff;
pub mod error;
pub mod eval;
pub mod groups;
pub mod phy;
pub mod real;
pub mod receiver;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
