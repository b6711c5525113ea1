//! Image containers, color conversion, bicubic resampling and metrics.

pub mod color;
pub mod io;
pub mod luma;
pub mod metrics;
pub mod resize;

pub use color::{rgb_to_ycbcr, rgb_to_ycbcr_luma, ycbcr_to_rgb, RgbImage, YCbCr};
pub use io::{load_image, save_luma, save_rgb, GoldenResize, Loaded};
pub use luma::{modcrop, LumaImage};
pub use metrics::{evaluate, psnr, ssim, EvalReport, Psnr};
pub use resize::{bicubic_resize, degrade};
