//! Particle filters for time-discretised Feynman-Kac path integrals with
//! weakly informative potentials.
//!
//! The crate covers resampling schemes and their exact laws, the limiting
//! resampling intensities as the step size vanishes, a particle filter for
//! discretised path integrals, an event-driven simulator of the limiting
//! jump-diffusion particle system, and two experiment harnesses.

pub mod error;
pub mod experiments;
pub mod fkengine;
pub mod intensity;
pub mod limitproc;
pub mod resampling;
pub mod rng;
pub mod weights;

pub use error::{Result, SmcError};
pub use resampling::{exact_distribution, resample, Order, ResamplingDistribution, Resampler, SchemeId, SchemeKind};
pub use weights::{apply_ancestors, mean_partition, AncestorVector, EventSignature, Permutation, WeightVector};
