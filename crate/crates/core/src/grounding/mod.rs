//! Trainable networks over frozen encoder outputs, and their gradients.

mod backprop;
mod encoder;
pub mod gradcheck;
mod mlp;
mod model;

pub use backprop::{backprop, min_preactivation, run_graph, GraphOutput, PlanSource};
pub use encoder::{
    stub_text_encoder, stub_visual_encoder, StubTextEncoder, StubVisionEncoder, TextEncoder,
    TextEncoding, VisionEncoder, VisionEncoding,
};
pub use mlp::{mlp_forward, MlpParams, MlpTrace};
pub use model::{
    ground_embed, project_image, visual_textual_embed, AlignTarget, GradientSet, GroundingModel,
    ModelDims, TENSOR_NAMES,
};
