//! Super-resolution backbones.

pub mod arch;
pub mod net;
pub mod ops;
pub mod params;

pub use arch::{Arch, ArchManifest, Architecture, BackboneConfig, LayerSpec};
pub use net::{backward, extract_features, forward, forward_tensor, forward_train, Tape};
pub use ops::Activation;
pub use params::{build_backbone, count_params, BackboneParams, ConvParams, NamedTensor, ParamGrads};
