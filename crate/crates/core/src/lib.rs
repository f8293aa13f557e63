//! Sparse-autoencoder lens for locating and deactivating group-specific
//! latents in embedding spaces, plus the fairness metrics used to measure
//! the effect.
//!
//! The pipeline is: [`train`] a Matryoshka top-k SAE on an embedding
//! dataset, [`probe`] its latents for neurons that fire consistently and
//! exclusively for one demographic group, then [`modulate`] embeddings by
//! overwriting those latents and blending the reconstruction back with the
//! input. [`metrics`] quantifies retrieval skew and answer disproportion
//! before and after; [`synth`] generates planted-bias data with known
//! ground truth.

pub mod error;
pub mod metrics;
pub mod modulate;
pub mod probe;
pub mod sae;
pub mod store;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use modulate::{debias, debias_dataset, modulate_latent, ModulatedLatent, ModulationConfig};
pub use probe::{build_report, compute_activations, ActivationMatrix, ProbeMode, SocialNeuronReport};
pub use sae::{
    active_set, decode, effective_linear_map, encode, prefix_decode, ActiveSet, Checkpoint, SaeParams,
    SparseActivation,
};
pub use store::{AttributeTable, DatasetManifest, EmbeddingDataset};
pub use train::{train, TrainConfig, TrainLog};
