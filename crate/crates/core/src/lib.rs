//! Layered near-cloak toolkit.
//!
//! Pipeline: design a multi-coated inclusion whose polarization tensors vanish
//! to a given order ([`gpt_design`]), push it forward through the blow-up map
//! ([`cloak_transform`]), realize the resulting anisotropic medium as a stack of
//! thin isotropic shells ([`laminate_builder`]), and check the result mode by
//! mode against the homogeneous Dirichlet-to-Neumann map ([`dtn_verifier`]).

pub mod cloak_transform;
pub mod dtn_verifier;
pub mod error;
pub mod gpt_design;
pub mod laminate_builder;
pub mod radial_media;
pub mod stats;

mod csv_util;

pub use error::{Error, Result};
pub use radial_media::{Core, Dimension, LayeredProfile};
