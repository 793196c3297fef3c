//! From-scratch transformer encoder with hand-written backward passes.
//!
//! Every parameterized component implements [`Parameters`], which gives the
//! optimizer, checkpointing and gradient checking a uniform named view of
//! the weights.

mod attention;
pub mod checkpoint;
mod denormal;
mod encoder;
mod float;
pub mod gradcheck;
mod heads;
mod layers;
pub mod loss;
mod optim;
pub mod params;

pub use attention::{AttentionCache, SelfAttention};
pub use denormal::FlushDenormals;
pub use encoder::{Batch, Embeddings, Encoder, EncoderCache, EncoderConfig, EncoderLayer, LayerCache, Sequence, NUM_SEGMENTS};
pub use float::Float;
pub use gradcheck::{grad_check, GradCheckReport};
pub use heads::{DetectorHead, DetectorHeadCache, LmHead};
pub use layers::{gelu, gelu_grad, LayerNorm, LayerNormCache, Linear, LAYER_NORM_EPS};
pub use optim::{fit, train_step, AdamState, TrainConfig, TrainLog, Trainable};
pub use params::{Parameters, ParametersExt};
