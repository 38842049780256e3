//! Communication-efficient weighted and uniform reservoir sampling over
//! distributed mini-batch streams.
//!
//! Every processing element (PE) keeps a local reservoir, an order-statistic
//! B+ tree keyed by exponential (or uniform) variates. All PEs share one
//! insertion threshold which stays fixed while a mini-batch is scanned with
//! skip values; at the end of each batch the PEs jointly select the globally
//! k-th smallest key, which becomes the next threshold, and discard
//! everything above it.
//!
//! The crate is `no_std` (it needs `alloc`). Collective communication is
//! abstracted behind [`comm::Communicator`]; the `wrs` crate provides a
//! threaded in-process implementation for any number of PEs.

#![no_std]
#![warn(missing_debug_implementations)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod comm;
pub mod reservoir;
pub mod select;
pub mod stream;
pub mod variates;

pub use comm::{CommCounters, CommError, Communicator, Payload, Reduce, ReduceOp, Single};
pub use reservoir::{KeyedItem, Reservoir, ReservoirError};
pub use select::{SelectError, SelectionResult, SelectionSpec};
pub use stream::{
    BatchReport, Item, Mode, SampleSize, Sampler, SamplerConfig, Selection, StreamError,
    WeightPolicy,
};
pub use variates::{PeRng, Threshold, UnitSource, UnitUniform, VariateError, Weight};
