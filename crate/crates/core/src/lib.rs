//! Hardware-adaptive few-shot latency prediction for neural architecture search.

pub mod archspace;
pub mod devicesim;
pub mod embedding;
pub mod metalearn;
pub mod nas;
pub mod nnet;
pub mod predictor;
pub mod rng;
pub mod stats;
