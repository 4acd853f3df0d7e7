//! Dense tensors, a reverse-mode tape and the fingerprint network.

pub mod gradcam;
pub mod graph;
pub(crate) mod kernels;
pub mod model;
pub mod params;
pub mod tensor;

pub use gradcam::{gradcam, upsample_bilinear, SaliencyMap};
pub use graph::{BnUpdate, GradTable, Gradients, Graph, Mode, Var, BN_EPS, BN_MOMENTUM};
pub use model::{
    batch_tensor, block_count, encoder_forward, freeze_blocks, init_params, projector_forward,
    repr_dim, represent, represent_refs, EncoderConfig, EncoderOutput,
};
pub use params::{ParamEntry, ParamStore, CHECKPOINT_MAGIC};
pub use tensor::Tensor;
