//! The student model family: hierarchical encoder, latent priors,
//! recognition network and attentional decoder.

mod batch;
mod config;
mod generate;
pub mod latent;
mod layers;
mod net;
mod params;
pub mod tensor_ops;

pub use batch::{encode_context, Batch, ContextBatch, EncodedPair, EncodedUtterance, ResponseBatch};
pub use config::{ModelConfig, PriorFamily, PriorSpec};
pub use generate::{DecodeMode, Generation};
pub use latent::{
    lgm_aggregate, mixture_mean, sample_gaussian, sample_gmm, sample_lgm, GaussianParams, GmmDraw, LatentState,
};
pub use layers::{from_host, log_softmax, softmax, softplus, Dropout};
pub use net::{ContextEncoding, DialogueModel, LatentChoice, PriorOutput, TensorGaussian};
pub use params::ParamStore;
