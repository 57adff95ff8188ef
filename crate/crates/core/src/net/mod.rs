//! Layer definitions, networks with per-layer precision, and model files.

pub mod def;
pub mod io;
pub mod network;

pub use def::{ActShape, LayerSpec, NetworkDef, Precision};
pub use io::{decode_model, encode_model, load_model, read_model, save_model, write_model, MODEL_MAGIC};
pub use network::{ForwardTrace, LayerParams, Network, Recorded, SignMode};
