//! Two-stream texture-aware image classifier.
//!
//! The model couples a deep branch with a hand-crafted texture branch:
//!
//! 1. A small convolutional backbone turns the input image into a feature
//!    map, which is upsampled to 48x48, cut into non-overlapping patches,
//!    reduced per patch by bilinear resampling and global average pooling,
//!    and summarized by an LSTM whose final hidden state is the deep
//!    feature F2.
//! 2. Multi-neighborhood local binary pattern histograms over the grayscale
//!    image form the texture descriptor F3.
//! 3. F2 and F3 are fused (concatenation or learned-projection addition)
//!    and classified by a dense softmax head.
//!
//! Everything is built from scratch on a minimal differentiable tensor
//! runtime ([`nn`]) with hand-written backward passes, each verified against
//! central finite differences. Training is plain SGD with a single
//! learning-rate drop. All randomness flows through a fixed [`rng`]
//! implementation so runs are reproducible bit for bit.
//!
//! # Crate layout
//!
//! - [`nn`]: tensors, layers, LSTM, loss, SGD, gradient checking
//! - [`lbp`]: local binary pattern code maps and histogram descriptors
//! - [`data`]: netpbm decoding, augmentation, manifests, synthetic dataset
//! - [`model`]: the assembled two-stream network and its checkpoint format
//! - [`train`]: training loop, evaluation metrics, ablation presets
//! - [`verify`]: brute-force oracles and invariant suites used by the CLI
//!
//! # Example
//!
//! ```
//! use dnt::nn::{softmax_cross_entropy, Tensor};
//!
//! let logits = [1.0, 2.0, 3.0];
//! let (loss, probs) = softmax_cross_entropy(&logits, 2).unwrap();
//! assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
//! assert!(loss > 0.0);
//! # let _ = Tensor::zeros(vec![2, 2, 1]);
//! ```

pub mod data;
pub mod error;
pub mod lbp;
pub mod model;
pub mod nn;
pub mod rng;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
