//! The shared encoder architecture, instantiated as base model, conceptual
//! role model, and merged model.

mod checkpoint;
mod config;
mod encoder;
pub mod vocab;
mod weights;

pub use checkpoint::{payload_of, Checkpoint, ModelBody, TensorEntry, FORMAT_VERSION, MAGIC};
pub use config::ModelConfig;
pub use encoder::{argmax, forward_cls, forward_mlm, GradScope, Gradients, Network, Trace};
pub use vocab::{tokenize, Vocabulary};
pub use weights::{
    attention_weight, canonical_names, init_weights, NamedWeights, ATTENTION_PROJECTIONS,
    CLS_HEAD_BIAS, CLS_HEAD_WEIGHT, INIT_STD, MLM_HEAD_BIAS, MLM_HEAD_WEIGHT,
};
