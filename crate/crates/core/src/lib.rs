//! Cooperative bird's-eye-view perception kernels.
//!
//! The pipeline, per agent and then across agents:
//!
//! 1. [`rg_attn`]: camera columns are matched to polar sectors of the LiDAR BEV
//!    through intrinsics-aware radian division ([`geometry`]) and fused with
//!    column-wise multi-head attention.
//! 2. [`pyramid`]: three-scale pyramids are exchanged between agents and fused
//!    with per-cell occupancy weights, then upsampled and concatenated.
//! 3. [`adaptive_conv`]: 3x3 / 5x5 / 7x7 branches blended by a per-pixel softmax.
//! 4. [`mdma`]: seed masking, forward diffusion and a single-step U-Net
//!    denoise, fused back through a learned interpolation mask.
//! 5. [`heads`]: anchor-based detection heads, losses, decoding and NMS.
//!
//! [`sim`] generates synthetic multi-agent scenes and drives experiments.

pub mod adaptive_conv;
pub mod error;
pub mod geometry;
pub mod heads;
pub mod mdma;
pub mod pyramid;
pub mod rg_attn;
pub mod sim;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{FeatureMap, Kernel2D, RngStream};
