//! Stability certificates for positive linear plants in feedback with
//! bias-free feedforward neural network controllers.
//!
//! The controller is replaced by a matrix sector bound `[Γ₁, Γ₂]`
//! ([`nn::FeedforwardNet::network_sector_bound`]); [`lure::verify_stability`]
//! then checks that `A + BΓ₁C` is Metzler and `A + BΓ₂C` is Hurwitz and
//! returns a linear copositive certificate with an explicit decay rate.
//!
//! ```
//! use lure_verify::linalg::LinalgConfig;
//! use lure_verify::model::load_model;
//!
//! let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/paper-example.json");
//! let sys = load_model(path).unwrap().lure_system().unwrap();
//! let cert = lure_verify::lure::verify_stability(&sys, &LinalgConfig::default()).unwrap();
//! assert!(cert.is_certified());
//! ```

pub mod bench;
pub mod cli;
pub mod linalg;
pub mod lure;
pub mod model;
pub mod nn;
pub mod report;
pub mod sim;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/positivity.md")]
    mod positivity {}
    #[doc = include_str!("../../../book/src/sector-bounds.md")]
    mod sector_bounds {}
    #[doc = include_str!("../../../book/src/verification.md")]
    mod verification {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/benchmarks.md")]
    mod benchmarks {}
    #[doc = include_str!("../../../book/src/model-format.md")]
    mod model_format {}
}
