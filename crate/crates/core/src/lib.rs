pub mod antialias;
pub mod error;
pub mod image_array;
pub mod nn;
pub mod scalar;
pub mod spectral;
pub mod tensor;
pub mod models;
pub mod attacks;
pub mod losses;
pub mod metrics;
pub mod pipeline;

pub use error::{Error, Result};
pub use image_array::ImageArray;
pub use scalar::Scalar;
pub use spectral::SpectralMap;
pub use tensor::{Shape, Tensor};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type ImageArray32 = ImageArray<f32>;
pub type ImageArray64 = ImageArray<f64>;
pub type SpectralMap32 = SpectralMap<f32>;
pub type SpectralMap64 = SpectralMap<f64>;
pub type Network32 = models::NetworkHandle<f32>;
pub type Network64 = models::NetworkHandle<f64>;
pub type Checkpoint32 = pipeline::Checkpoint<f32>;
pub type Checkpoint64 = pipeline::Checkpoint<f64>;
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
