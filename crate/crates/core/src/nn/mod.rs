//! From-scratch convolutional network engine: tensors, layers with exact
//! backprop, encoder-decoder assembly, and the SGD training loop.

pub mod layers;
pub mod network;
pub mod tensor;
pub mod train;

pub use network::{
    build_network, matched_single_width, multi_scale_param_count, receptive_field, LearnMode,
    NetSpec, Network,
};
pub use tensor::{concat_channels, split_channels, Tensor4};
pub use train::{train, validation_psnr, History, Sample, TrainConfig};
