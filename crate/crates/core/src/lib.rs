//! Core numerics for two-population longevity basis risk modelling.
//!
//! The reference population follows a Lee–Carter surface whose period index
//! is a drifted Brownian motion with exponentially distributed jumps arriving
//! by a renewal process. The book population is modelled relative to the
//! fitted reference surface. Bootstrap scenario generation and longevity swap
//! hedge metrics sit on top.
//!
//! The crate is `no_std` and only needs `alloc`; file formats, the CLI and the
//! parallel scenario driver live in the `longbasis` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod alt;
pub mod book;
pub mod cohort;
pub mod error;
pub mod grid;
pub mod hedge;
pub mod jump;
pub mod lc;
pub mod model;
pub mod optimize;
pub mod panel;
pub mod quadrature;
pub mod renewal;
pub mod rng;
pub mod scenario;
pub mod special;
pub mod stats;
pub mod synthetic;

pub use error::{Error, Result};
pub use grid::{Grid, Span};
pub use panel::{align_panels, AlignedPair, MortalityPanel, Population, RateKind, RateSurface};
