//! Network architectures, inference and model files.

mod io;
mod layers;
mod model;

pub use io::{decode_model, encode_model, load_model, save_model, MODEL_FORMAT_VERSION, MODEL_MAGIC};
pub use layers::{convnet_layers, Architecture, LayerSpec};
pub use model::{
    argmax, build_generator_cnn, build_mlp, build_victim_cnn, Forward, Model, Param, Prediction, INFERENCE_CHUNK,
};
