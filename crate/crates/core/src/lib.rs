//! Traffic state estimation with a GAN whose generator and discriminator are
//! LSTMs, trained on cell transmission model output and fitted to partial
//! observations under a flow conservation penalty.

pub mod cli;
pub mod data;
pub mod error;
pub mod estimation;
pub mod eval;
pub mod gan;
pub mod gradcheck;
pub mod lstm;
pub mod params;
pub mod pipeline;
pub mod tensor;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/lstm.md")]
    mod lstm {}
    #[doc = include_str!("../../../book/src/gan.md")]
    mod gan {}
    #[doc = include_str!("../../../book/src/estimation.md")]
    mod estimation {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
