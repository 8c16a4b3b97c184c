//! Valid-by-construction airfoil generation.
//!
//! Airfoils are represented as the envelope of circles swept along a spine
//! ([`geometry::CsRep`]). A constrained coefficient parameterization
//! ([`csrep`]) makes every decoded sequence a valid airfoil, a small neural
//! autoencoder maps profiles to latent embeddings, and a class-conditional
//! DDPM with classifier-free guidance samples new embeddings.

pub mod aero;
pub mod autoencoder;
pub mod csrep;
pub mod diffusion;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod registry;
pub mod rng;

pub use error::{Error, Result};
