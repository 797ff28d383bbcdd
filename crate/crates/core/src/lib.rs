//! Training and inference engine for a compact convolutional image denoiser
//! distilled from a high-capacity teacher network.
//!
//! Everything runs on flat NHWC buffers with a fixed accumulation order, so
//! tiled inference is bit-identical to whole-image inference and optimized
//! kernels are bit-identical to the reference path. The crate covers:
//!
//! * [`tensor`] — rank-4 NHWC tensors, layout permutation, FP16 casting,
//!   padding/cropping, and the `.t4` fixture format.
//! * [`ops`] — the full operator set of both networks (forward + VJP) and
//!   MAC accounting.
//! * [`graph`] / [`model`] — layer graphs, the teacher and student builders,
//!   parameter initialization/counting, and the `LDNW` weight format.
//! * [`loss`] — the three-term distillation objective and its gradient.
//! * [`data`] — paired-image loading, dihedral augmentation, buffered crop
//!   extraction, and a synthetic dataset generator.
//! * [`metrics`] — challenge-protocol PSNR and per-channel Gaussian SSIM.
//! * [`train`] — Adam + cosine annealing + global-norm clipping, supervised
//!   and teacher-distilled training loops.
//! * [`deploy`] — receptive-field computation, halo-tiled inference, FP16
//!   export, numerical parity checks, and activation-memory budgeting.

pub mod error;
pub mod tensor;
pub mod ops;
pub mod graph;
pub mod model;
pub mod loss;
pub mod data;
pub mod metrics;
pub mod train;
pub mod deploy;

pub use error::{Error, Result};
pub use tensor::{Dtype, LayoutTag, PadMode, Tensor4};
