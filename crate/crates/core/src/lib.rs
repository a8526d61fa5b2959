//! Selective pseudo-label clustering (SPC).
//!
//! An ensemble of autoencoders is pretrained on reconstruction; each member's
//! latent space is clustered independently, the labellings are aligned with
//! the Hungarian algorithm, and only the points that every member labels the
//! same way are used as pseudo-labelled training targets. The remaining points
//! keep training on reconstruction. The loop repeats until the number of
//! agreed points stops growing.
//!
//! Module map:
//!
//! - [`data`]: IDX loading, synthetic blobs, normalization.
//! - [`network`]: dense autoencoder members with exact backpropagation.
//! - [`clustering`]: k-means++ / Lloyd and diagonal Gaussian mixtures.
//! - [`consensus`]: Hungarian alignment, the consensus vote, and metrics.
//! - [`spc`]: the training driver.
//! - [`theory`]: Monte Carlo and exact checks of the linear-encoder analysis.

pub mod clustering;
pub mod consensus;
pub mod data;
pub mod error;
pub mod io;
pub mod network;
pub mod rng;
pub mod spc;
pub mod theory;

pub use clustering::{GmmModel, GmmOptions, KMeansResult, Labelling};
pub use consensus::{ConsensusResult, Metrics};
pub use data::{BlobSpec, Dataset};
pub use error::{Error, Result};
pub use network::{AutoencoderMember, GradientUpdate, MlpSpec, PointTarget};
pub use spc::{Clusterer, IterationRecord, SpcConfig, SpcOutcome};
pub use theory::{LinearModel, TheoryConfig, TheoryDataset, TheoryReport};
