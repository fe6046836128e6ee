//! The user guide. Chapters are compiled here so their examples run as
//! doc-tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/bridge.md")]
pub mod bridge {}

#[doc = include_str!("../../../book/src/squid.md")]
pub mod squid {}

#[doc = include_str!("../../../book/src/modulator.md")]
pub mod modulator {}

#[doc = include_str!("../../../book/src/shaping.md")]
pub mod shaping {}

#[doc = include_str!("../../../book/src/generator.md")]
pub mod generator {}

#[doc = include_str!("../../../book/src/nonlinearity.md")]
pub mod nonlinearity {}

#[doc = include_str!("../../../book/src/planning.md")]
pub mod planning {}

#[doc = include_str!("../../../book/src/readout.md")]
pub mod readout {}

#[doc = include_str!("../../../book/src/combiner.md")]
pub mod combiner {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
