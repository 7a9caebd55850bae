//! Cycle-level model of a convolution accelerator with hybrid modular
//! redundancy: a 4x4 array that splits into two halves working either on
//! separate tiles or in lockstep, a triplicated controller, and SEC-DED
//! protection on the memory interface. Includes a fault injector and the
//! analytic cycle model the simulator is checked against.

pub mod accel;
pub mod controller;
pub mod ecc;
pub mod engine;
pub mod error;
pub mod fault;
pub mod golden;
pub mod layout;
pub mod memory;
pub mod perf;
pub mod selftest;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/golden.md")]
    mod golden {}
    #[doc = include_str!("../../../book/src/ecc.md")]
    mod ecc {}
    #[doc = include_str!("../../../book/src/memory.md")]
    mod memory {}
    #[doc = include_str!("../../../book/src/modes.md")]
    mod modes {}
    #[doc = include_str!("../../../book/src/controller.md")]
    mod controller {}
    #[doc = include_str!("../../../book/src/performance.md")]
    mod performance {}
    #[doc = include_str!("../../../book/src/faults.md")]
    mod faults {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../README.md")]
    mod readme {}
}
