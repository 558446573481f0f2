//! Salient object detection on hyperspectral images.
//!
//! A small convolutional network is trained on a single cube against its own
//! argmax cluster labels (refined by superpixel majority vote). At every
//! training step the network's final feature maps are fed to a two-stage
//! graph manifold-ranking saliency model, and training stops once either the
//! clustering loss or the saliency map stops changing.
//!
//! Modules:
//!
//! * [`hsio`]: ENVI-style cube I/O, normalization, mask and saliency PNGs.
//! * [`nncore`]: forward/backward kernels, initialization and optimizer.
//! * [`slic`]: SLIC superpixels over arbitrary feature volumes.
//! * [`mrank`]: manifold ranking with boundary priors.
//! * [`selfsup`]: the self-supervision loop and its termination logic.
//! * [`metrics`]: AUC-Borji, CC, NSS, KL divergence, PR curves, F-measures.
//! * [`synth`]: seeded synthetic cubes with a known salient square.
//!
//! Inner loops run on rayon when the `parallel` feature is enabled (the
//! default). Every parallel loop writes disjoint outputs with a fixed
//! per-element reduction order, so results are bit-identical with and
//! without the feature.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod hsio;
pub mod metrics;
pub mod mrank;
pub mod nncore;
pub mod par;
pub mod selfsup;
pub mod slic;
pub mod synth;
pub mod volume;

pub use error::{Error, Result};
pub use hsio::{BinaryMask, HyperspectralCube, SaliencyMap};
pub use volume::FeatureView;
