//! Two-compartment spiking neurons trained online with eligibility
//! propagation (e-prop), together with a backpropagation-through-time
//! reference trainer.
//!
//! The crate is organised bottom-up:
//!
//! - [`neurons`]: LIF and TC-LIF dynamics, decay sampling, surrogate gradient.
//! - [`eprop`]: eligibility vectors, learning signals, online sessions.
//! - [`bptt`]: unrolled forward pass and hand-written reverse mode.
//! - [`data`]: IDX and spike-event loaders, sequence chunking, permutations.
//! - [`train`]: optimizers, schedules, training loops, checkpoints.
//! - [`gradcheck`]: oracle suites comparing the two gradient routes.

pub mod bptt;
pub mod data;
pub mod eprop;
pub mod error;
pub mod gradcheck;
pub mod network;
pub mod neurons;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use network::{Network, NetworkSpec};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/neurons.md")]
    struct Neurons;
    #[doc = include_str!("../../../book/src/eligibility.md")]
    struct Eligibility;
    #[doc = include_str!("../../../book/src/reference.md")]
    struct Reference;
    #[doc = include_str!("../../../book/src/data.md")]
    struct Data;
    #[doc = include_str!("../../../book/src/training.md")]
    struct Training;
    #[doc = include_str!("../../../book/src/verification.md")]
    struct Verification;
}
