//! Point-cloud policies trained with PPO or behavior cloning, and a
//! two-stage fine-tuning scheduler that resumes from the best checkpoint with
//! a reduced batch size and fewer samples per step.
//!
//! The guide in `book/` walks through every module; its code listings are
//! compiled and run as doctests of this crate.

pub mod bc;
mod binfmt;
pub mod controllers;
pub mod encoder;
pub mod envs;
pub mod error;
pub mod nn;
pub mod persistence;
pub mod policy;
pub mod ppo;
pub mod rng;
pub mod schedule;
pub mod train;

pub use error::{Error, Result};
pub use nalgebra;

/// The guide's chapters, so `cargo test --doc` runs their listings.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/point-clouds.md")]
    mod point_clouds {}
    #[doc = include_str!("../../../book/src/environments.md")]
    mod environments {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/two-stage.md")]
    mod two_stage {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/formats.md")]
    mod formats {}
}
