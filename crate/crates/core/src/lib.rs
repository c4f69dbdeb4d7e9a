//! Min-sum message passing on pairwise grid MRFs.
//!
//! The crate provides two parallel message-passing inference engines,
//! [`isgmr`] (iterative revised semi-global matching) and [`trwp`] (parallel
//! tree-reweighted message passing), together with their analytic backward
//! passes in [`autodiff`]. Semi-global matching and mean-field baselines live
//! in [`baselines`], and [`testkit`] carries independent oracles used to check
//! the engines.

pub mod autodiff;
pub mod baselines;
pub mod error;
pub mod grid;
pub mod io;
pub mod isgmr;
pub mod messages;
pub mod potentials;
pub mod real;
pub mod run;
pub mod synth;
pub mod testkit;
pub mod trwp;

mod kernel;
mod shared;

pub use error::{Error, Result};
pub use grid::{Direction, DirectionSet, GridGraph, Scanline, Topology};
pub use messages::{CostOutput, IndexStore, MessageField};
pub use potentials::{
    energy, EdgeField, PairwiseFunction, PairwiseKind, Potentials, TreeCoefficients, UnaryVolume,
};
pub use real::Real;

/// Largest supported label count; argmin indices are stored as single bytes.
pub const MAX_LABELS: usize = 256;

/// Runs `f` on a dedicated rayon pool with `threads` workers.
///
/// `threads == 0` uses rayon's global pool.
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    if threads == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::ThreadPool(e.to_string()))?;
    Ok(pool.install(f))
}
