//! From-scratch CNN kernels for the feature extractor.
//!
//! Every layer has an exact backward pass. Convolutions are stride-1
//! cross-correlations with "same" zero padding; the transposed variant is the
//! adjoint of the forward map with the same kernel.

mod activation;
mod batchnorm;
mod checkpoint;
mod conv;
mod init;
mod loss;
mod network;
mod optim;
mod pool;
mod tensor;

pub use activation::{relu_backward, relu_forward};
pub use batchnorm::{BatchNorm, BatchNormCache, BatchNormGrads, BN_EPSILON};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use conv::{ConvGrads, ConvLayer, ConvMode};
pub use init::{glorot_bound, glorot_init, seeded_rng, Rng64};
pub use loss::softmax_cross_entropy;
pub use network::{
    BlockGrads, ConvBlock, ForwardCache, Network, NetworkGrads, Stage, FEATURE_CHANNELS,
};
pub use optim::SgdMomentum;
pub use pool::{maxpool2_backward, maxpool2_forward, upsample2_backward, upsample2_forward};
pub use tensor::Tensor4;
