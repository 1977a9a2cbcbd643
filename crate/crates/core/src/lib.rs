pub mod midi;
pub mod tensor;
pub mod nn;
pub mod motion;
pub mod sequence;
pub mod drum;
pub mod bert;
pub mod metrics;
pub mod pipeline;
