//! Pump scheduling for pressurized water networks: network model, hydraulic
//! checks, relaxed and discretized slot programs, exact reconstruction and the
//! two-step demand response loop.

pub mod contract;
pub mod error;
pub mod hydraulics;
pub mod network;
pub mod recon;
pub mod relax;
pub mod scenario;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/network.md")]
    mod network {}
    #[doc = include_str!("../../../book/src/hydraulics.md")]
    mod hydraulics {}
    #[doc = include_str!("../../../book/src/relaxations.md")]
    mod relaxations {}
    #[doc = include_str!("../../../book/src/reconstruction.md")]
    mod reconstruction {}
    #[doc = include_str!("../../../book/src/contract.md")]
    mod contract {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
