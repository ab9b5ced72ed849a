//! Minimal neural-network toolkit: parameter storage, an autodiff tape,
//! layers and the Adam optimiser.

pub mod graph;
pub mod kernels;
pub mod layers;
pub mod optim;
pub mod params;

pub use graph::{Graph, Var};
pub use kernels::ChannelStats;
pub use layers::{Activation, Blstm, BlstmTap, Conv1d, Linear, LstmCell};
pub use optim::{Adam, AdamConfig};
pub use params::{Grads, Mat, ParamId, ParamStore};
