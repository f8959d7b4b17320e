//! Parameter storage and the network building blocks: dense layers, LSTM and
//! convolutional LSTM cells, and the convolutional image encoder.

mod layers;
mod params;

pub use layers::{Activation, CnnEncoder, CnnEncoderConfig, Conv, ConvLstmCell, Dense, LstmCell};
pub use params::{glorot_uniform, Graph, ParamId, ParamStore};
