//! The dual-head 3D U-Net (segmentation + reconstruction) and its losses.

pub mod error;
pub mod losses;
pub mod unet;

pub use error::{ModelError, Result};
pub use losses::{dice_per_channel, dice_score, loss1, loss2, LossConfig};
pub use unet::{build_model, expected_param_count, MtUnet, Output, UnetConfig};
